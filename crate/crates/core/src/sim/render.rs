//! Synthetic frame renderer.
//!
//! Frames are a seeded value-noise background with a dark disc for the
//! target airframe and a bright 2x2 dot for its LED. Identical seeds give
//! bit-identical frames, which is what makes episodes and datasets
//! reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{Annotation, IMAGE_SIZE};
use crate::dataset::GrayImage;
use crate::error::Result;
use crate::sim::camera::Camera;

/// Physical target diameter; fixes apparent size focal * diameter / depth.
pub const DRONE_DIAMETER_M: f64 = 0.10;
/// Disc gray level (dark airframe against the lighter background).
pub const BLOB_VALUE: f64 = 35.0;
/// LED dot gray level.
pub const LED_VALUE: u8 = 255;
/// Background noise maps into [BG_BASE, BG_BASE + BG_SPAN].
pub const BG_BASE: f64 = 90.0;
pub const BG_SPAN: f64 = 100.0;

/// Two-octave bilinear value noise over the frame, in [0, 1].
fn value_noise(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![0.0f64; IMAGE_SIZE * IMAGE_SIZE];
    for (cell, weight) in [(32usize, 0.7f64), (8, 0.3)] {
        let n = IMAGE_SIZE / cell + 2;
        let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        for y in 0..IMAGE_SIZE {
            let fy = y as f64 / cell as f64;
            let iy = fy as usize;
            let ty = fy - iy as f64;
            for x in 0..IMAGE_SIZE {
                let fx = x as f64 / cell as f64;
                let ix = fx as usize;
                let tx = fx - ix as f64;
                let v00 = lattice[iy * n + ix];
                let v01 = lattice[iy * n + ix + 1];
                let v10 = lattice[(iy + 1) * n + ix];
                let v11 = lattice[(iy + 1) * n + ix + 1];
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                field[y * IMAGE_SIZE + x] += weight * (top + (bot - top) * ty);
            }
        }
    }
    field
}

/// Renders the target as seen from the observer. Returns the frame and the
/// exact annotation it was drawn from; the annotation is `None` when the
/// target center does not project inside the image (background only).
pub fn render_frame(
    cam: &Camera,
    target_rel: [f64; 3],
    led_on: bool,
    noise_seed: u64,
) -> Result<(GrayImage, Option<Annotation>)> {
    let mut image = GrayImage::new(IMAGE_SIZE, IMAGE_SIZE);
    let noise = value_noise(noise_seed);
    for (p, n) in image.pixels.iter_mut().zip(&noise) {
        *p = (BG_BASE + BG_SPAN * n).round().clamp(0.0, 255.0) as u8;
    }

    let projected = match cam.project(target_rel) {
        Ok((u, v, d)) if cam.in_frame(u, v) => Some((u, v, d)),
        _ => None,
    };
    let Some((u, v, d)) = projected else {
        return Ok((image, None));
    };

    // Dark airframe disc with a 1 px soft edge.
    let radius = 0.5 * cam.focal_px * DRONE_DIAMETER_M / d;
    let x_lo = ((u - radius - 1.0).floor().max(0.0)) as usize;
    let x_hi = ((u + radius + 1.0).ceil().min((IMAGE_SIZE - 1) as f64)) as usize;
    let y_lo = ((v - radius - 1.0).floor().max(0.0)) as usize;
    let y_hi = ((v + radius + 1.0).ceil().min((IMAGE_SIZE - 1) as f64)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dist = ((x as f64 - u).powi(2) + (y as f64 - v).powi(2)).sqrt();
            let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0);
            if coverage > 0.0 {
                let bg = image.at(x, y) as f64;
                image.set(x, y, (bg + (BLOB_VALUE - bg) * coverage).round() as u8);
            }
        }
    }

    if led_on {
        let x0 = u.floor() as isize;
        let y0 = v.floor() as isize;
        for dy in 0..2isize {
            for dx in 0..2isize {
                let (x, y) = (x0 + dx, y0 + dy);
                if (0..IMAGE_SIZE as isize).contains(&x) && (0..IMAGE_SIZE as isize).contains(&y) {
                    image.set(x as usize, y as usize, LED_VALUE);
                }
            }
        }
    }

    Ok((image, Some(Annotation { u, v, d, led: led_on })))
}

/// Depth range for sampled training annotations.
pub const SAMPLE_DEPTH_RANGE: (f64, f64) = (0.4, 1.6);
/// Margin keeping sampled centers (and most of the blob) in frame.
pub const SAMPLE_MARGIN_PX: f64 = 12.0;

/// Draws a random in-frame annotation for dataset generation.
pub fn random_annotation(rng: &mut impl Rng) -> Annotation {
    let hi = IMAGE_SIZE as f64 - SAMPLE_MARGIN_PX;
    Annotation {
        u: rng.gen_range(SAMPLE_MARGIN_PX..hi),
        v: rng.gen_range(SAMPLE_MARGIN_PX..hi),
        d: rng.gen_range(SAMPLE_DEPTH_RANGE.0..SAMPLE_DEPTH_RANGE.1),
        led: rng.gen_bool(0.5),
    }
}

/// Renders the frame for a ground-truth annotation by placing the target at
/// its back-projection.
pub fn render_annotation(cam: &Camera, ann: &Annotation, noise_seed: u64) -> Result<GrayImage> {
    let rel = cam.back_project(ann.u, ann.v, ann.d);
    let (image, _) = render_frame(cam, rel, ann.led, noise_seed)?;
    Ok(image)
}
