//! Skeleton schema, pose-stream files, bone-length normalization and
//! confidence masking.

pub mod bones;
pub mod io;
pub mod layout;
mod stream;

pub use bones::{median_bone_lengths, normalize_bones, BoneLengths};
pub use io::{load_pose_stream, save_pose_stream, save_pose_stream_json, POSE_MAGIC};
pub use layout::Hand;
pub use stream::{confidence_mask, PoseStream};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{section} block truncated at frame {frame}")]
    Truncated { section: &'static str, frame: usize },
    #[error("{section} holds {got} values, expected {want}")]
    ExtentMismatch {
        section: &'static str,
        got: usize,
        want: usize,
    },
    #[error("non-finite value in {section} at frame {frame}")]
    NonFinite { section: &'static str, frame: usize },
    #[error("confidence {value} out of [0,1] at frame {frame}, keypoint {keypoint}")]
    ConfidenceRange {
        frame: usize,
        keypoint: usize,
        value: f64,
    },
    #[error("bone {bone} has no frames with both endpoints confident")]
    NoBoneObservations { bone: String },
    #[error("bone {bone} has coincident endpoints at frame {frame} with no prior direction")]
    DegenerateBone { frame: usize, bone: String },
}
