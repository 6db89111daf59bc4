//! Pre-training a small convolutional feature extractor on tangram-solving
//! traces and transferring it to aesthetic scoring and few-shot recognition.
//!
//! Layout:
//! - [`geometry`]: the seven tans, board poses, solving traces and a seeded
//!   trace generator.
//! - [`bitmap`]: binary images, polygon rasterization and fold transforms.
//! - [`nn`]: tensors, a tape-based reverse-mode autodiff graph, the four-layer
//!   conv extractor, Adam and the `TGRM` weights format.
//! - [`pretrain`]: completeness-contrast and puzzle-meaning losses and the
//!   pre-training loop.
//! - [`envs`]: clothes-folding and room-layout environments with expert
//!   trajectories.
//! - [`irl`]: score learning, max-entropy IRL, state-only GAIL, greedy
//!   rollouts and P@K.
//! - [`fewshot`]: episodes, logistic probing, ANIL, first-order MAML and
//!   prototypical networks.
//! - [`trace`]: the JSON trace document container shared by every task.
//! - [`report`]: experiment runners and tab-separated result tables.

pub mod bitmap;
pub mod envs;
pub mod fewshot;
pub mod geometry;
pub mod irl;
pub mod nn;
pub mod pretrain;
pub mod report;
pub mod trace;

mod seeding;

pub use bitmap::{BinaryImage, FoldAxis};
pub use geometry::{BoardState, SolveTrace, Tan, TanKind, TanPose, Variant};
pub use nn::{Backbone, Tensor};
