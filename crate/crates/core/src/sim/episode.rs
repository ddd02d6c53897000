//! Closed-loop episode runner.
//!
//! Per step: render (or oracle-project) the target, decode, run the
//! controller, integrate observer dynamics (first-order velocity lag),
//! record the tracking error. Everything is seeded and single-threaded, so
//! a (seed, path, perception) triple reproduces its trace bit for bit.

use std::io::{self, Write};

use crate::codec::{decode_pose, DecodedPose};
use crate::error::{Error, Result};
use crate::model::{image_to_input, ModelGraph};
use crate::quant::QuantizedModel;
use crate::sim::camera::Camera;
use crate::sim::controller::{controller_step, ControllerParams, ControllerState};
use crate::sim::render::render_frame;
use crate::sim::splitmix64;
use crate::sim::trajectory::SIM_DT;

/// How each frame is perceived.
pub enum Perception<'a> {
    /// Ground truth: the exact projection of the true relative pose.
    Oracle,
    /// Rendered frame through the float network.
    Fcnn(&'a ModelGraph),
    /// Rendered frame through the quantized network.
    Quantized(&'a QuantizedModel),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeParams {
    pub camera: Camera,
    pub controller: ControllerParams,
    /// Control period, s.
    pub dt: f64,
    /// Velocity-command lag time constant, s.
    pub lag_tau_s: f64,
    /// Abort threshold on |p - p_d|, m.
    pub divergence_m: f64,
    /// Steps before this time are excluded from the report averages.
    pub warmup_s: f64,
    /// Observer start; defaults to the desired pose of the first target
    /// sample.
    pub initial_observer: Option<[f64; 3]>,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        EpisodeParams {
            camera: Camera::default(),
            controller: ControllerParams::default(),
            dt: SIM_DT,
            lag_tau_s: 0.15,
            divergence_m: 3.0,
            warmup_s: 2.0,
            initial_observer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub observer: [f64; 3],
    pub target: [f64; 3],
    /// Decoded (u, v, d), when the target was detected.
    pub measurement: Option<(f64, f64, f64)>,
    /// Observer minus desired pose, per axis.
    pub error: [f64; 3],
    pub error_norm: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpisodeReport {
    /// Mean |error| per axis over the post-warmup window.
    pub avg_abs_error: [f64; 3],
    /// Mean and population std of |p - p_d| over the same window.
    pub avg_error_norm: f64,
    pub std_error_norm: f64,
    /// False when the episode aborted on divergence.
    pub completed: bool,
    pub steps: usize,
    pub trace: Vec<StepRecord>,
}

impl EpisodeReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,obs_x,obs_y,obs_z,tgt_x,tgt_y,tgt_z,u,v,d,err_x,err_y,err_z,err_norm")?;
        for r in &self.trace {
            let (u, v, d) = match r.measurement {
                Some((u, v, d)) => (format!("{u:.4}"), format!("{v:.4}"), format!("{d:.4}")),
                None => (String::new(), String::new(), String::new()),
            };
            writeln!(
                w,
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{u},{v},{d},{:.6},{:.6},{:.6},{:.6}",
                r.t,
                r.observer[0],
                r.observer[1],
                r.observer[2],
                r.target[0],
                r.target[1],
                r.target[2],
                r.error[0],
                r.error[1],
                r.error[2],
                r.error_norm,
            )?;
        }
        Ok(())
    }
}

fn desired_pose(target: [f64; 3], standoff: f64) -> [f64; 3] {
    [target[0] - standoff, target[1], target[2]]
}

/// Runs the loop over a target pose sequence (one sample per control step).
pub fn run_episode(
    targets: &[[f64; 3]],
    perception: Perception,
    seed: u64,
    params: &EpisodeParams,
) -> Result<EpisodeReport> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("episode needs a non-empty target path".into()));
    }
    if !(params.dt > 0.0) || !(params.lag_tau_s > 0.0) {
        return Err(Error::InvalidArgument("episode dt and lag tau must be positive".into()));
    }
    let cam = params.camera;
    let standoff = params.controller.standoff_m;
    let mut observer = params.initial_observer.unwrap_or_else(|| desired_pose(targets[0], standoff));
    let mut velocity = [0.0f64; 3];
    let mut ctrl = ControllerState::new();
    let mut trace = Vec::with_capacity(targets.len());
    let mut completed = true;

    for (k, &target) in targets.iter().enumerate() {
        let t = k as f64 * params.dt;
        let rel = [target[0] - observer[0], target[1] - observer[1], target[2] - observer[2]];
        let frame_seed = splitmix64(seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let decoded: Option<DecodedPose> = match &perception {
            Perception::Oracle => match cam.project(rel) {
                Ok((u, v, d)) if cam.in_frame(u, v) => Some(DecodedPose { u, v, d, p_led: 1.0, mass: 1.0 }),
                _ => None,
            },
            Perception::Fcnn(model) => {
                let (image, _) = render_frame(&cam, rel, true, frame_seed)?;
                let maps = model.forward_maps(&image_to_input(&image.pixels)?)?;
                decode_pose(&maps)
            }
            Perception::Quantized(model) => {
                let (image, _) = render_frame(&cam, rel, true, frame_seed)?;
                let maps = model.forward_maps(&image_to_input(&image.pixels)?)?;
                decode_pose(&maps)
            }
        };

        let desired = desired_pose(target, standoff);
        let error = [observer[0] - desired[0], observer[1] - desired[1], observer[2] - desired[2]];
        let error_norm = (error[0] * error[0] + error[1] * error[1] + error[2] * error[2]).sqrt();
        trace.push(StepRecord {
            t,
            observer,
            target,
            measurement: decoded.as_ref().map(|p| (p.u, p.v, p.d)),
            error,
            error_norm,
        });
        if error_norm > params.divergence_m {
            completed = false;
            break;
        }

        let cmd = controller_step(&mut ctrl, decoded.as_ref(), &cam, observer, params.dt, &params.controller);
        for i in 0..3 {
            velocity[i] += params.dt * (cmd[i] - velocity[i]) / params.lag_tau_s;
            observer[i] += params.dt * velocity[i];
        }
    }

    // Average over the post-warmup window (the whole trace when shorter).
    let mut start = trace.iter().take_while(|r| r.t < params.warmup_s).count();
    if start >= trace.len() {
        start = 0;
    }
    let window = &trace[start..];
    let n = window.len() as f64;
    let mut avg_abs_error = [0.0f64; 3];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in window {
        for i in 0..3 {
            avg_abs_error[i] += r.error[i].abs();
        }
        sum += r.error_norm;
        sum_sq += r.error_norm * r.error_norm;
    }
    for a in avg_abs_error.iter_mut() {
        *a /= n;
    }
    let avg_error_norm = sum / n;
    let std_error_norm = (sum_sq / n - avg_error_norm * avg_error_norm).max(0.0).sqrt();

    Ok(EpisodeReport {
        avg_abs_error,
        avg_error_norm,
        std_error_norm,
        completed,
        steps: trace.len(),
        trace,
    })
}
