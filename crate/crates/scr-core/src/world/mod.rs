//! Procedural grounded-scenes world: colored textured shapes on 32x32
//! canvases with pixel-exact masks and boxes, a caption grammar with a fixed
//! small vocabulary, seen/unseen category splits, a discrete gaze environment
//! with a scripted expert, short panning clips for domain-shift fine-tuning,
//! and the on-disk dataset formats.
//!
//! Everything here is a pure function of an explicit seed. Scene sampling,
//! rendering, captioning, splitting, and expert scripting draw from named
//! [`crate::util::rng`] streams, so regenerating any corpus with the same
//! seed reproduces it byte for byte.

pub mod clips;
pub mod dataset;
pub mod gaze;
pub mod raster;
pub mod scene;
pub mod vocab;

pub use clips::{sample_clip_frames, Clip, Embodiment};
pub use gaze::{script_expert, Action, EnvMeta, Episode, GazeEnv};
pub use raster::{Image, Style, HEIGHT, WIDTH};
pub use scene::{
    make_splits, render_scene, sample_scene, CategorySplit, ObjectSpec, SceneSpec,
};
pub use vocab::{Category, Color, Shape, Texture, Vocab};

/// Errors from scene generation, environment stepping, and dataset I/O.
#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WorldError>;

impl WorldError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        WorldError::Invalid { op, msg: msg.into() }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        WorldError::Format(msg.into())
    }
}
