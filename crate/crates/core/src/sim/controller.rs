//! Standoff-keeping velocity controller.
//!
//! Proportional control toward the desired pose (the target minus the
//! standoff along x), augmented with a low-pass estimate of the target's
//! velocity as feedforward: a pure proportional term with the fixed gain
//! leaves a phase-lag error on moving targets that the feedforward removes.
//! The estimate starts at zero, so the first step after (re)acquisition is
//! purely proportional. On missed detections the last command decays
//! geometrically instead of dropping to zero.

use crate::codec::DecodedPose;
use crate::sim::camera::Camera;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Proportional gain, 1/s.
    pub gain: f64,
    /// Per-axis command limit, m/s.
    pub clamp: f64,
    /// Desired forward distance to the target, m.
    pub standoff_m: f64,
    /// Smoothing factor of the target-velocity feedforward estimate.
    pub ff_alpha: f64,
    /// Per-step command decay while the target is not detected.
    pub no_detect_decay: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams { gain: 1.2, clamp: 1.0, standoff_m: 0.8, ff_alpha: 0.15, no_detect_decay: 0.9 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerState {
    last_command: [f64; 3],
    target_velocity: [f64; 3],
    prev_target: Option<[f64; 3]>,
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One control step. The decoded measurement is back-projected into a world
/// target estimate (observer axes are world-aligned); the command drives the
/// observer toward target + (-standoff, 0, 0).
pub fn controller_step(
    state: &mut ControllerState,
    decoded: Option<&DecodedPose>,
    cam: &Camera,
    observer: [f64; 3],
    dt: f64,
    params: &ControllerParams,
) -> [f64; 3] {
    let Some(pose) = decoded else {
        let mut cmd = [0.0; 3];
        for i in 0..3 {
            cmd[i] = state.last_command[i] * params.no_detect_decay;
            state.target_velocity[i] *= params.no_detect_decay;
        }
        state.prev_target = None;
        state.last_command = cmd;
        return cmd;
    };

    let rel = cam.back_project(pose.u, pose.v, pose.d);
    let target = [observer[0] + rel[0], observer[1] + rel[1], observer[2] + rel[2]];
    if let Some(prev) = state.prev_target {
        for i in 0..3 {
            let raw = (target[i] - prev[i]) / dt;
            state.target_velocity[i] += params.ff_alpha * (raw - state.target_velocity[i]);
        }
    }
    state.prev_target = Some(target);

    let mut cmd = [0.0; 3];
    for i in 0..3 {
        let desired = if i == 0 { target[0] - params.standoff_m } else { target[i] };
        let error = desired - observer[i];
        cmd[i] = (params.gain * error + state.target_velocity[i]).clamp(-params.clamp, params.clamp);
    }
    state.last_command = cmd;
    cmd
}
