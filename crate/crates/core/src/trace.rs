//! The JSON trace document shared by the generators, the CLI and the
//! labeling service.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bitmap::BinaryImage;
use crate::envs::ExpertTrajectory;
use crate::geometry::{BoardState, SolveTrace, TanPose, Variant};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("frame {index}: {reason}")]
    Frame { index: usize, reason: String },
    #[error("document has no frames")]
    NoFrames,
    #[error("{expected} document carries {found} frames")]
    KindMismatch { expected: &'static str, found: &'static str },
    #[error("tangram document needs a variant")]
    MissingVariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Tangram,
    Folding,
    Room,
}

impl TraceKind {
    pub fn label(&self) -> &'static str {
        match self {
            TraceKind::Tangram => "tangram",
            TraceKind::Folding => "folding",
            TraceKind::Room => "room",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub puzzle_name: String,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub author: Option<String>,
    #[serde(default)]
    pub timestamp: Option<String>,
}

/// Tangram frames are pose lists; folding and room frames are bitmaps of
/// '0'/'1' row strings.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Frames {
    Poses(Vec<Vec<TanPose>>),
    Bitmaps(Vec<BinaryImage>),
}

impl Frames {
    fn label(&self) -> &'static str {
        match self {
            Frames::Poses(_) => "pose",
            Frames::Bitmaps(_) => "bitmap",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Frames::Poses(f) => f.len(),
            Frames::Bitmaps(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceDocument {
    pub schema_version: u32,
    pub kind: TraceKind,
    pub metadata: TraceMetadata,
    pub frames: Frames,
}

#[derive(Deserialize)]
struct RawDocument {
    schema_version: u32,
    kind: TraceKind,
    metadata: TraceMetadata,
    frames: Vec<Value>,
}

impl TraceDocument {
    pub fn from_solve_trace(trace: &SolveTrace) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: TraceKind::Tangram,
            metadata: TraceMetadata {
                puzzle_name: trace.puzzle_name.clone(),
                variant: Some(trace.variant),
                author: None,
                timestamp: None,
            },
            frames: Frames::Poses(trace.steps.iter().map(|s| s.poses.to_vec()).collect()),
        }
    }

    pub fn from_trajectory(kind: TraceKind, trajectory: &ExpertTrajectory) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            metadata: TraceMetadata { puzzle_name: trajectory.name.clone(), ..Default::default() },
            frames: Frames::Bitmaps(trajectory.frames.clone()),
        }
    }

    /// Parses and checks schema version, frame kind and frame shapes.
    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let raw: RawDocument = serde_json::from_str(text)?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(TraceError::Schema(raw.schema_version));
        }
        if raw.frames.is_empty() {
            return Err(TraceError::NoFrames);
        }
        let frame_err = |index: usize| move |e: serde_json::Error| TraceError::Frame { index, reason: e.to_string() };
        let frames = match raw.kind {
            TraceKind::Tangram => {
                let mut out = Vec::with_capacity(raw.frames.len());
                for (index, v) in raw.frames.into_iter().enumerate() {
                    let poses: Vec<TanPose> = serde_json::from_value(v).map_err(frame_err(index))?;
                    if poses.len() != 7 {
                        return Err(TraceError::Frame { index, reason: format!("expected 7 poses, found {}", poses.len()) });
                    }
                    out.push(poses);
                }
                Frames::Poses(out)
            }
            TraceKind::Folding | TraceKind::Room => {
                let mut out: Vec<BinaryImage> = Vec::with_capacity(raw.frames.len());
                for (index, v) in raw.frames.into_iter().enumerate() {
                    let img: BinaryImage = serde_json::from_value(v).map_err(frame_err(index))?;
                    if let Some(first) = out.first() {
                        if (img.height(), img.width()) != (first.height(), first.width()) {
                            return Err(TraceError::Frame {
                                index,
                                reason: format!(
                                    "{}x{} frame after {}x{} frames",
                                    img.height(),
                                    img.width(),
                                    first.height(),
                                    first.width()
                                ),
                            });
                        }
                    }
                    out.push(img);
                }
                Frames::Bitmaps(out)
            }
        };
        Ok(Self { schema_version: raw.schema_version, kind: raw.kind, metadata: raw.metadata, frames })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace documents serialize")
    }

    /// The tangram trace carried by this document.
    pub fn to_solve_trace(&self) -> Result<SolveTrace, TraceError> {
        let Frames::Poses(frames) = &self.frames else {
            return Err(TraceError::KindMismatch { expected: self.kind.label(), found: self.frames.label() });
        };
        let variant = self.metadata.variant.ok_or(TraceError::MissingVariant)?;
        let steps = frames
            .iter()
            .enumerate()
            .map(|(index, poses)| {
                let poses: [TanPose; 7] = poses.as_slice().try_into().map_err(|_| TraceError::Frame {
                    index,
                    reason: format!("expected 7 poses, found {}", poses.len()),
                })?;
                Ok(BoardState { poses })
            })
            .collect::<Result<_, TraceError>>()?;
        let name = self.metadata.puzzle_name.clone();
        Ok(SolveTrace { embedding_key: name.clone(), puzzle_name: name, variant, steps })
    }

    /// The bitmap frames of a folding or room document.
    pub fn to_trajectory(&self) -> Result<ExpertTrajectory, TraceError> {
        match &self.frames {
            Frames::Bitmaps(frames) => {
                Ok(ExpertTrajectory { name: self.metadata.puzzle_name.clone(), frames: frames.clone() })
            }
            Frames::Poses(_) => Err(TraceError::KindMismatch { expected: self.kind.label(), found: "pose" }),
        }
    }
}
