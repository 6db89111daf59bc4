//! Clothes-folding and room-layout environments.

mod garments;
mod rooms;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::{self, BinaryImage, BitmapError, FoldAxis};

pub use garments::{expert_fold_trajectory, generate_garments, Garment, GarmentCategory, GARMENT_WORLD};
pub use rooms::{
    generate_rooms, perturb_room, Furniture, FurnitureKind, RoomDemo, RoomEnv, RoomScene, ROOM_MOVES, ROOM_SIDE,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("garment {name}: {reason}")]
    Script { name: String, reason: String },
    #[error("illegal action {0}")]
    IllegalAction(usize),
    #[error(transparent)]
    Bitmap(#[from] BitmapError),
}

/// A deterministic environment with a finite action set.
pub trait Env {
    type State: Clone;

    fn num_actions(&self, state: &Self::State) -> usize;

    /// The successor, or `None` when the action is illegal in `state`.
    fn step(&self, state: &Self::State, action: usize) -> Option<Self::State>;

    fn observe(&self, state: &Self::State) -> BinaryImage;
}

/// Folding on 28x28 binary images with the 40 fold actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct FoldEnv;

impl Env for FoldEnv {
    type State = BinaryImage;

    fn num_actions(&self, _state: &BinaryImage) -> usize {
        FoldAxis::COUNT
    }

    fn step(&self, state: &BinaryImage, action: usize) -> Option<BinaryImage> {
        bitmap::fold(state, FoldAxis::from_index(action)?).ok()
    }

    fn observe(&self, state: &BinaryImage) -> BinaryImage {
        state.clone()
    }
}

/// Applies one fold; illegal folds leave the caller's state untouched.
pub fn fold_env_step(state: &BinaryImage, action: FoldAxis) -> Result<BinaryImage, EnvError> {
    Ok(bitmap::fold(state, action)?)
}

/// Ordered states demonstrating a task, least to most complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrajectory {
    pub name: String,
    pub frames: Vec<BinaryImage>,
}

impl ExpertTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// The lowest-index fold action that maps `from` to `to`, if any.
pub fn recover_fold(from: &BinaryImage, to: &BinaryImage) -> Option<FoldAxis> {
    bitmap::axis_positions().into_iter().find(|&a| bitmap::fold(from, a).is_ok_and(|r| &r == to))
}
