//! Ground-truth map synthesis and output-map decoding.
//!
//! The network sees a 160x160 frame and emits three 20x20 maps (LED state,
//! metric depth, target position). Each output cell covers an 8x8 pixel
//! block; cell (i, j) is anchored at image coordinates u = 8j + 4,
//! v = 8i + 4. Training targets are synthesized at full resolution and
//! max-pooled down; predictions are decoded back to image coordinates by
//! barycenter over the position map.
//!
//! Profile shapes: position and LED targets use a raised-cosine disc of
//! radius 4 px (value 1 at the center, soft edge to 0). The depth target is
//! uniform, equal to the metric distance over the whole disc support, so
//! that the position-weighted mean over pooled cells recovers the distance
//! exactly instead of a profile-weighted underestimate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 160;
pub const MAP_SIZE: usize = 20;
pub const CELL: usize = 8;
/// Half-width of a map cell; cell (i, j) anchors at (8j + 4, 8i + 4).
pub const CELL_ANCHOR: f64 = 4.0;
/// Radius of the ground-truth disc, in pixels.
pub const GT_RADIUS: f64 = 4.0;
/// Total position mass below which a frame counts as "no detection".
pub const NO_DETECTION_MASS: f64 = 1e-3;

/// Target state for one frame: image position (pixels), metric distance
/// (meters, camera-forward axis), LED state.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Annotation {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub led: bool,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64| x.is_finite() && x >= 0.0 && x < IMAGE_SIZE as f64;
        if !in_range(self.u) || !in_range(self.v) {
            return Err(Error::InvalidArgument(format!(
                "annotation position ({}, {}) outside [0, {})",
                self.u, self.v, IMAGE_SIZE
            )));
        }
        if !self.d.is_finite() || self.d <= 0.0 {
            return Err(Error::InvalidArgument(format!("annotation depth {} must be positive", self.d)));
        }
        Ok(())
    }
}

/// The three 20x20 network output planes. Row-major, index i * 20 + j.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMaps {
    pub led: Vec<f32>,
    pub depth: Vec<f32>,
    pub position: Vec<f32>,
}

#[inline]
pub fn cell_index(i: usize, j: usize) -> usize {
    i * MAP_SIZE + j
}

impl OutputMaps {
    pub fn zeros() -> Self {
        let n = MAP_SIZE * MAP_SIZE;
        OutputMaps { led: vec![0.0; n], depth: vec![0.0; n], position: vec![0.0; n] }
    }

    /// Split a (3, 20, 20) network output into named planes
    /// (channel 0 = LED, 1 = depth, 2 = position).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape() != (3, MAP_SIZE, MAP_SIZE) {
            return Err(Error::Shape(format!("output maps expect (3, 20, 20), got {:?}", t.shape())));
        }
        Ok(OutputMaps {
            led: t.channel(0).to_vec(),
            depth: t.channel(1).to_vec(),
            position: t.channel(2).to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * MAP_SIZE * MAP_SIZE);
        data.extend_from_slice(&self.led);
        data.extend_from_slice(&self.depth);
        data.extend_from_slice(&self.position);
        Tensor::from_vec(3, MAP_SIZE, MAP_SIZE, data).expect("plane sizes are fixed")
    }

    /// Mirror all three planes left-right (column j -> 19 - j). Matches a
    /// horizontal flip of the input frame exactly, since pooling blocks map
    /// onto each other under the mirror.
    pub fn flip_horizontal(&mut self) {
        for plane in [&mut self.led, &mut self.depth, &mut self.position] {
            for row in plane.chunks_mut(MAP_SIZE) {
                row.reverse();
            }
        }
    }
}

/// Raised-cosine profile: 1 at r = 0, soft edge to 0 at r = GT_RADIUS.
#[inline]
fn profile(r: f64) -> f64 {
    if r > GT_RADIUS {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * r / GT_RADIUS).cos())
    }
}

/// Build the three target maps for one annotated frame: full-resolution
/// synthesis followed by an 8x8 max-pool.
pub fn synth_gt_maps(ann: &Annotation) -> Result<OutputMaps> {
    ann.validate()?;
    let mut maps = OutputMaps::zeros();
    let led_peak = if ann.led { 1.0 } else { 0.0 };

    // Bounding box of the disc, clipped to the image.
    let x0 = (ann.u - GT_RADIUS).floor().max(0.0) as usize;
    let x1 = (ann.u + GT_RADIUS).ceil().min((IMAGE_SIZE - 1) as f64) as usize;
    let y0 = (ann.v - GT_RADIUS).floor().max(0.0) as usize;
    let y1 = (ann.v + GT_RADIUS).ceil().min((IMAGE_SIZE - 1) as f64) as usize;

    for y in y0..=y1 {
        for x in x0..=x1 {
            let r = ((x as f64 - ann.u).powi(2) + (y as f64 - ann.v).powi(2)).sqrt();
            if r > GT_RADIUS {
                continue;
            }
            let p = profile(r);
            let (i, j) = (y / CELL, x / CELL);
            let idx = cell_index(i, j);
            // Max-pool each 8x8 block as we go.
            if p as f32 > maps.position[idx] {
                maps.position[idx] = p as f32;
            }
            if (p * led_peak) as f32 > maps.led[idx] {
                maps.led[idx] = (p * led_peak) as f32;
            }
            // Uniform depth over the whole support (see module docs).
            if ann.d as f32 > maps.depth[idx] {
                maps.depth[idx] = ann.d as f32;
            }
        }
    }
    Ok(maps)
}

/// Decoded frame state, all in image/metric units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedPose {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub p_led: f64,
    /// Total position-map mass behind the estimate.
    pub mass: f64,
}

fn position_mass(maps: &OutputMaps) -> f64 {
    maps.position.iter().map(|&w| w as f64).sum()
}

/// Barycenter of the position map over cell anchors. `None` when total mass
/// falls below `NO_DETECTION_MASS`.
pub fn decode_position(maps: &OutputMaps) -> Option<(f64, f64)> {
    let mass = position_mass(maps);
    if mass < NO_DETECTION_MASS {
        return None;
    }
    let (mut su, mut sv) = (0.0f64, 0.0f64);
    for i in 0..MAP_SIZE {
        for j in 0..MAP_SIZE {
            let w = maps.position[cell_index(i, j)] as f64;
            su += w * (CELL as f64 * j as f64 + CELL_ANCHOR);
            sv += w * (CELL as f64 * i as f64 + CELL_ANCHOR);
        }
    }
    Some((su / mass, sv / mass))
}

/// Position-weighted mean of the depth map.
pub fn decode_depth(maps: &OutputMaps) -> Option<f64> {
    let mass = position_mass(maps);
    if mass < NO_DETECTION_MASS {
        return None;
    }
    let s: f64 = maps
        .position
        .iter()
        .zip(&maps.depth)
        .map(|(&w, &d)| w as f64 * d as f64)
        .sum();
    Some(s / mass)
}

/// Position-weighted mean of the LED map.
pub fn decode_led(maps: &OutputMaps) -> Option<f64> {
    let mass = position_mass(maps);
    if mass < NO_DETECTION_MASS {
        return None;
    }
    let s: f64 = maps
        .position
        .iter()
        .zip(&maps.led)
        .map(|(&w, &l)| w as f64 * l as f64)
        .sum();
    Some(s / mass)
}

pub fn decode_pose(maps: &OutputMaps) -> Option<DecodedPose> {
    let mass = position_mass(maps);
    if mass < NO_DETECTION_MASS {
        return None;
    }
    let (u, v) = decode_position(maps)?;
    Some(DecodedPose { u, v, d: decode_depth(maps)?, p_led: decode_led(maps)?, mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_cell(i: usize, j: usize, w: f32) -> OutputMaps {
        let mut m = OutputMaps::zeros();
        m.position[cell_index(i, j)] = w;
        m
    }

    #[test]
    fn single_cell_decodes_to_cell_anchor() {
        let m = single_cell(5, 7, 1.0);
        let (u, v) = decode_position(&m).unwrap();
        assert_eq!((u, v), (60.0, 44.0));
    }

    #[test]
    fn split_mass_decodes_to_weighted_midpoint() {
        let mut m = OutputMaps::zeros();
        m.position[cell_index(0, 0)] = 0.5;
        m.position[cell_index(0, 19)] = 0.5;
        let (u, v) = decode_position(&m).unwrap();
        assert!((u - 80.0).abs() < 1e-9);
        assert!((v - 4.0).abs() < 1e-9);
    }

    #[test]
    fn depth_decode_examples() {
        let mut m = single_cell(3, 3, 1.0);
        m.depth[cell_index(3, 3)] = 2.0;
        assert!((decode_depth(&m).unwrap() - 2.0).abs() < 1e-9);

        let mut m = OutputMaps::zeros();
        m.position[cell_index(4, 4)] = 0.5;
        m.position[cell_index(4, 5)] = 0.5;
        m.depth[cell_index(4, 4)] = 1.0;
        m.depth[cell_index(4, 5)] = 3.0;
        assert!((decode_depth(&m).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn led_all_on_over_support_decodes_to_one() {
        let mut m = OutputMaps::zeros();
        m.position[cell_index(9, 9)] = 0.7;
        m.position[cell_index(9, 10)] = 0.2;
        m.led[cell_index(9, 9)] = 1.0;
        m.led[cell_index(9, 10)] = 1.0;
        assert!((decode_led(&m).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mass_below_threshold_is_no_detection() {
        let m = single_cell(5, 5, 5e-4);
        assert!(decode_position(&m).is_none());
        assert!(decode_depth(&m).is_none());
        assert!(decode_led(&m).is_none());
        assert!(decode_pose(&m).is_none());
    }

    #[test]
    fn decoders_match_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let mut m = OutputMaps::zeros();
            for _ in 0..rng.gen_range(1..8) {
                let idx = rng.gen_range(0..400);
                m.position[idx] = rng.gen_range(0.05..1.0);
                m.depth[idx] = rng.gen_range(0.1..3.0);
                m.led[idx] = rng.gen_range(0.0..1.0);
            }
            let (mut su, mut sv, mut sd, mut sl, mut mass) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
            for i in 0..MAP_SIZE {
                for j in 0..MAP_SIZE {
                    let w = m.position[cell_index(i, j)] as f64;
                    mass += w;
                    su += w * (8.0 * j as f64 + 4.0);
                    sv += w * (8.0 * i as f64 + 4.0);
                    sd += w * m.depth[cell_index(i, j)] as f64;
                    sl += w * m.led[cell_index(i, j)] as f64;
                }
            }
            let (u, v) = decode_position(&m).unwrap();
            assert!((u - su / mass).abs() < 1e-9);
            assert!((v - sv / mass).abs() < 1e-9);
            assert!((decode_depth(&m).unwrap() - sd / mass).abs() < 1e-9);
            assert!((decode_led(&m).unwrap() - sl / mass).abs() < 1e-9);
        }
    }

    #[test]
    fn synth_peak_is_one_at_annotated_cell() {
        let ann = Annotation { u: 60.0, v: 44.0, d: 0.8, led: true };
        let m = synth_gt_maps(&ann).unwrap();
        assert_eq!(m.position[cell_index(5, 7)], 1.0);
        assert_eq!(m.led[cell_index(5, 7)], 1.0);
        let peak = m.position.iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn synth_led_off_zeroes_led_map() {
        let ann = Annotation { u: 80.0, v: 80.0, d: 1.0, led: false };
        let m = synth_gt_maps(&ann).unwrap();
        assert!(m.led.iter().all(|&v| v == 0.0));
        assert!(m.position.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn synth_depth_is_uniform_over_support() {
        let ann = Annotation { u: 84.0, v: 84.0, d: 2.5, led: true };
        let m = synth_gt_maps(&ann).unwrap();
        let peak = m.depth.iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(peak, 2.5);
        for idx in 0..400 {
            if m.position[idx] > 0.0 {
                assert_eq!(m.depth[idx], 2.5);
            }
        }
        assert!((decode_depth(&m).unwrap() - 2.5).abs() < 1e-6);
    }

    #[test]
    fn synth_support_is_local() {
        // Disc at the anchor of cell (10, 10) spans pixels 80..88 only,
        // so cells further than one step away stay empty.
        let ann = Annotation { u: 84.0, v: 84.0, d: 1.0, led: true };
        let m = synth_gt_maps(&ann).unwrap();
        for i in 0..MAP_SIZE {
            for j in 0..MAP_SIZE {
                let far = i < 9 || i > 11 || j < 9 || j > 11;
                if far {
                    assert_eq!(m.position[cell_index(i, j)], 0.0, "cell ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn synth_rejects_out_of_bounds_annotations() {
        assert!(synth_gt_maps(&Annotation { u: 200.0, v: 10.0, d: 1.0, led: false }).is_err());
        assert!(synth_gt_maps(&Annotation { u: -1.0, v: 10.0, d: 1.0, led: false }).is_err());
        assert!(synth_gt_maps(&Annotation { u: 160.0, v: 10.0, d: 1.0, led: false }).is_err());
        assert!(synth_gt_maps(&Annotation { u: 10.0, v: 10.0, d: 0.0, led: false }).is_err());
    }

    #[test]
    fn round_trip_at_cell_anchors_is_tight() {
        for (i, j) in [(5usize, 7usize), (2, 2), (10, 10), (17, 3)] {
            let (u, v) = (8.0 * j as f64 + 4.0, 8.0 * i as f64 + 4.0);
            let ann = Annotation { u, v, d: 1.2, led: true };
            let m = synth_gt_maps(&ann).unwrap();
            let (uh, vh) = decode_position(&m).unwrap();
            assert!((uh - u).abs() <= 0.75, "u: {uh} vs {u}");
            assert!((vh - v).abs() <= 0.75, "v: {vh} vs {v}");
            assert!((decode_depth(&m).unwrap() - 1.2).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_by_one_cell_shifts_pooled_maps_exactly() {
        let base = Annotation { u: 52.0, v: 76.0, d: 0.9, led: true };
        let shifted = Annotation { u: 60.0, v: 76.0, d: 0.9, led: true };
        let a = synth_gt_maps(&base).unwrap();
        let b = synth_gt_maps(&shifted).unwrap();
        for i in 0..MAP_SIZE {
            for j in 0..MAP_SIZE - 1 {
                assert_eq!(a.position[cell_index(i, j)], b.position[cell_index(i, j + 1)]);
            }
        }
    }

    #[test]
    fn flip_horizontal_matches_mirrored_annotation() {
        let ann = Annotation { u: 52.0, v: 76.0, d: 0.9, led: true };
        let mirrored = Annotation { u: 159.0 - 52.0, v: 76.0, d: 0.9, led: true };
        let mut a = synth_gt_maps(&ann).unwrap();
        a.flip_horizontal();
        let b = synth_gt_maps(&mirrored).unwrap();
        for idx in 0..400 {
            assert!((a.position[idx] - b.position[idx]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn decode_is_scale_invariant(scale in 0.01f32..50.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = OutputMaps::zeros();
            for _ in 0..4 {
                let idx = rng.gen_range(0..400);
                m.position[idx] = rng.gen_range(0.2..1.0);
                m.depth[idx] = rng.gen_range(0.1..3.0);
            }
            let mut scaled = m.clone();
            for w in scaled.position.iter_mut() {
                *w *= scale;
            }
            let (u0, v0) = decode_position(&m).unwrap();
            let (u1, v1) = decode_position(&scaled).unwrap();
            prop_assert!((u0 - u1).abs() < 1e-3);
            prop_assert!((v0 - v1).abs() < 1e-3);
            let d0 = decode_depth(&m).unwrap();
            let d1 = decode_depth(&scaled).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-3);
        }
    }
}
