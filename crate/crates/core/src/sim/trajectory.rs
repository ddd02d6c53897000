//! Target trajectory generation.
//!
//! Paths are sampled at the control rate with constant chord length: every
//! consecutive pair of samples is exactly `speed * dt` apart, so the
//! discrete speed matches the requested speed to near machine precision.
//! Circles use the closed-form chord angle 2*asin(v*dt / 2r); spirals solve
//! the same relation including the axial advance once by Newton iteration.

use crate::error::{Error, Result};

/// Control-loop period: the perception stack's maximum frame rate.
pub const SIM_DT: f64 = 1.0 / 39.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Linear {
        direction: [f64; 3],
    },
    Circle {
        radius: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
    },
    Spiral {
        radius: f64,
        /// Axial advance per full turn, in meters.
        pitch: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
    },
    Composite {
        segments: Vec<SegmentSpec>,
    },
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentSpec {
    #[serde(flatten)]
    pub kind: PathKind,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: PathKind,
    pub speed: f64,
    pub duration: f64,
    #[serde(default = "default_start")]
    pub start: [f64; 3],
}

fn default_start() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn normalized(v: [f64; 3], what: &str) -> Result<[f64; 3]> {
    let n = norm(v);
    if n < 1e-12 {
        return Err(Error::InvalidArgument(format!("{what} must be non-zero")));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Orthonormal basis of the plane perpendicular to `axis`.
fn plane_basis(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    // Pick the world axis least aligned with `axis` as the seed.
    let seed = if axis[0].abs() <= axis[1].abs() && axis[0].abs() <= axis[2].abs() {
        [1.0, 0.0, 0.0]
    } else if axis[1].abs() <= axis[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let dot = seed[0] * axis[0] + seed[1] * axis[1] + seed[2] * axis[2];
    let mut u = [seed[0] - dot * axis[0], seed[1] - dot * axis[1], seed[2] - dot * axis[2]];
    let nu = norm(u);
    u = [u[0] / nu, u[1] / nu, u[2] / nu];
    let w = [
        axis[1] * u[2] - axis[2] * u[1],
        axis[2] * u[0] - axis[0] * u[2],
        axis[0] * u[1] - axis[1] * u[0],
    ];
    (u, w)
}

/// Chord angle for a spiral: solves (2r sin(t/2))^2 + (c t)^2 = chord^2 for
/// t, where c is the axial advance per radian.
fn spiral_chord_angle(radius: f64, c: f64, chord: f64) -> f64 {
    let f = |t: f64| {
        let s = 2.0 * radius * (t / 2.0).sin();
        s * s + c * c * t * t - chord * chord
    };
    let df = |t: f64| 2.0 * radius * radius * t.sin() + 2.0 * c * c * t;
    // The helix arc length per radian bounds the chord, so this start is
    // slightly above the root and Newton descends monotonically.
    let mut t = chord / (radius * radius + c * c).sqrt();
    for _ in 0..60 {
        let step = f(t) / df(t);
        t -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    t
}

struct Cursor {
    position: [f64; 3],
}

impl Cursor {
    /// Appends `steps` samples advancing along `kind`, returning the sample
    /// list extended in place. The cursor's position is the segment start
    /// and is already present in `out`.
    fn advance(&mut self, kind: &PathKind, speed: f64, steps: usize, chord: f64, out: &mut Vec<[f64; 3]>) -> Result<()> {
        match kind {
            PathKind::Linear { direction } => {
                let dir = normalized(*direction, "linear direction")?;
                for _ in 0..steps {
                    for (p, d) in self.position.iter_mut().zip(&dir) {
                        *p += chord * d;
                    }
                    out.push(self.position);
                }
            }
            PathKind::Circle { radius, axis } | PathKind::Spiral { radius, axis, .. } => {
                let r = *radius;
                if !(r > 0.0) {
                    return Err(Error::InvalidArgument(format!("radius {r} must be positive")));
                }
                let pitch = match kind {
                    PathKind::Spiral { pitch, .. } => *pitch,
                    _ => 0.0,
                };
                let axis = normalized(*axis, "rotation axis")?;
                let c = pitch / std::f64::consts::TAU;
                if chord >= 2.0 * r && c == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "speed {speed} m/s steps farther than the circle diameter {:.3} m",
                        2.0 * r
                    )));
                }
                let dtheta = if c == 0.0 {
                    2.0 * (chord / (2.0 * r)).asin()
                } else {
                    spiral_chord_angle(r, c, chord)
                };
                let (bu, bv) = plane_basis(axis);
                // Center such that theta = 0 reproduces the current position.
                let center: Vec<f64> = (0..3).map(|i| self.position[i] - r * bu[i]).collect();
                for k in 1..=steps {
                    let theta = dtheta * k as f64;
                    let (s, co) = theta.sin_cos();
                    let h = c * theta;
                    for i in 0..3 {
                        self.position[i] = center[i] + r * (co * bu[i] + s * bv[i]) + h * axis[i];
                    }
                    out.push(self.position);
                }
            }
            PathKind::Composite { .. } => {
                return Err(Error::InvalidArgument("composite segments cannot nest".into()));
            }
        }
        Ok(())
    }
}

/// Samples a trajectory at `dt`, starting at `spec.start`. The result has
/// `floor(duration / dt) + 1` samples; every consecutive pair is exactly
/// `speed * dt` apart (speed 0 holds position).
pub fn make_trajectory(spec: &TrajectorySpec, dt: f64) -> Result<Vec<[f64; 3]>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt {dt} must be positive")));
    }
    if !(spec.speed >= 0.0) || !spec.speed.is_finite() {
        return Err(Error::InvalidArgument(format!("speed {} must be non-negative", spec.speed)));
    }
    let total_steps = (spec.duration / dt + 1e-9).floor() as usize;
    if total_steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "duration {} s yields a zero-length path at dt {dt}",
            spec.duration
        )));
    }
    let chord = spec.speed * dt;
    let mut out = Vec::with_capacity(total_steps + 1);
    out.push(spec.start);
    let mut cursor = Cursor { position: spec.start };

    if spec.speed == 0.0 {
        out.resize(total_steps + 1, spec.start);
        return Ok(out);
    }

    match &spec.kind {
        PathKind::Composite { segments } => {
            if segments.is_empty() {
                return Err(Error::InvalidArgument("composite path needs at least one segment".into()));
            }
            let mut remaining = total_steps;
            let mut idx = 0;
            while remaining > 0 {
                let seg = &segments[idx % segments.len()];
                if !(seg.duration > 0.0) {
                    return Err(Error::InvalidArgument(format!("segment duration {} must be positive", seg.duration)));
                }
                let seg_steps = ((seg.duration / dt + 1e-9).floor() as usize).max(1).min(remaining);
                cursor.advance(&seg.kind, spec.speed, seg_steps, chord, &mut out)?;
                remaining -= seg_steps;
                idx += 1;
            }
        }
        kind => cursor.advance(kind, spec.speed, total_steps, chord, &mut out)?,
    }
    Ok(out)
}

/// Endurance profile: out-and-back lines on each axis followed by circles
/// about two axes, cycled in 4 s segments to fill the requested duration.
pub fn endurance_spec(speed: f64, duration: f64, start: [f64; 3]) -> TrajectorySpec {
    let leg = 4.0;
    let line = |direction: [f64; 3]| SegmentSpec { kind: PathKind::Linear { direction }, duration: leg };
    let circle = |axis: [f64; 3]| SegmentSpec { kind: PathKind::Circle { radius: 0.5, axis }, duration: leg };
    let segments = vec![
        line([1.0, 0.0, 0.0]),
        line([-1.0, 0.0, 0.0]),
        line([0.0, 1.0, 0.0]),
        line([0.0, -1.0, 0.0]),
        line([0.0, 0.0, 1.0]),
        line([0.0, 0.0, -1.0]),
        circle([0.0, 0.0, 1.0]),
        circle([0.0, 1.0, 0.0]),
    ];
    TrajectorySpec { kind: PathKind::Composite { segments }, speed, duration, start }
}
