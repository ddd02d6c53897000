//! Closed-loop tracking simulator and synthetic scene renderer.
//!
//! A target drone flies a parameterized trajectory; the observer holds a
//! fixed standoff using the decoded network outputs (or a ground-truth
//! oracle) and first-order velocity dynamics. The renderer doubles as the
//! synthetic dataset generator for training.

pub mod camera;
pub mod controller;
pub mod episode;
pub mod render;
pub mod trajectory;

pub use camera::Camera;
pub use controller::{controller_step, ControllerParams, ControllerState};
pub use episode::{run_episode, EpisodeParams, EpisodeReport, Perception, StepRecord};
pub use render::render_frame;
pub use trajectory::{make_trajectory, PathKind, SegmentSpec, TrajectorySpec, SIM_DT};

/// SplitMix64 finalizer; derives decorrelated per-frame seeds from an
/// episode seed and a step index.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
