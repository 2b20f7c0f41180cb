//! Training-time geometric augmentation on 32×32 inputs.
//!
//! Rotation and shear inverse-map every output pixel into the source,
//! sample bilinearly and treat everything outside the frame as black.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{GrayImage32, INPUT_SIDE};

const CENTER: f64 = (INPUT_SIDE as f64 - 1.0) / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Upper bound of the rotation angle in degrees; angles are drawn from `[0, rotate_max]`.
    pub rotate_max: f64,
    /// Shear factors are drawn from `[-shear_max, shear_max]`.
    pub shear_max: f64,
    pub flip_prob: f64,
    /// Probability that rotation (and, independently, shear) is applied.
    pub apply_prob: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotate_max: 30.0,
            shear_max: 0.2,
            flip_prob: 0.5,
            apply_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// Policy that never changes an image.
    pub fn identity() -> Self {
        Self {
            rotate_max: 0.0,
            shear_max: 0.0,
            flip_prob: 0.0,
            apply_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..360.0).contains(&self.rotate_max) {
            return Err(format!("rotate_max {} outside [0, 360)", self.rotate_max));
        }
        if !(self.shear_max >= 0.0 && self.shear_max.is_finite()) {
            return Err(format!(
                "shear_max {} must be a finite non-negative value",
                self.shear_max
            ));
        }
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("apply_prob", self.apply_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Packs an (epoch, sample) pair into one augmentation stream position.
pub fn stream_position(epoch: usize, sample: usize) -> u64 {
    ((epoch as u64) << 32) | (sample as u64 & 0xffff_ffff)
}

/// Bilinear read at a fractional source coordinate, zero outside the frame.
fn sample_zero_fill(img: &GrayImage32, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let side = INPUT_SIDE as i64;
    let at = |cx: i64, cy: i64| {
        if (0..side).contains(&cx) && (0..side).contains(&cy) {
            img.get(cy as usize, cx as usize)
        } else {
            0.0
        }
    };
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
    let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn warp(img: &GrayImage32, source_of: impl Fn(f64, f64) -> (f64, f64)) -> GrayImage32 {
    let mut pixels = Vec::with_capacity(INPUT_SIDE * INPUT_SIDE);
    for row in 0..INPUT_SIDE {
        for col in 0..INPUT_SIDE {
            let (sx, sy) = source_of(col as f64, row as f64);
            pixels.push(sample_zero_fill(img, sx, sy));
        }
    }
    GrayImage32::from_clamped(pixels).expect("32x32 output")
}

/// Rotates counter-clockwise (as displayed, rows growing downwards) by
/// `theta` degrees about the image centre.
pub fn rotate(img: &GrayImage32, theta: f64) -> GrayImage32 {
    let (sin, cos) = theta.to_radians().sin_cos();
    warp(img, |x, y| {
        let (dx, dy) = (x - CENTER, y - CENTER);
        (CENTER + dx * cos - dy * sin, CENTER + dx * sin + dy * cos)
    })
}

/// Horizontal shear about the centre row: output `(x, y)` reads source
/// `(x + k·(y − 15.5), y)`.
pub fn shear(img: &GrayImage32, k: f64) -> GrayImage32 {
    warp(img, |x, y| (x + k * (y - CENTER), y))
}

pub fn hflip(img: &GrayImage32) -> GrayImage32 {
    let pixels = img
        .pixels()
        .chunks_exact(INPUT_SIDE)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    GrayImage32::new(pixels).expect("permutation of valid samples")
}

/// The concrete transform drawn for one stream position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation: Option<f64>,
    pub shear: Option<f64>,
    pub flip: bool,
}

pub fn draw(policy: &AugmentPolicy, position: u64) -> AugmentDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(position);
    let rotate_on = rng.random::<f64>() < policy.apply_prob;
    let theta = rng.random_range(0.0..=policy.rotate_max);
    let shear_on = rng.random::<f64>() < policy.apply_prob;
    let k = rng.random_range(-policy.shear_max..=policy.shear_max);
    let flip = rng.random::<f64>() < policy.flip_prob;
    AugmentDraw {
        rotation: rotate_on.then_some(theta),
        shear: shear_on.then_some(k),
        flip,
    }
}

/// Applies the transform drawn for `position`: rotate, then shear, then flip.
pub fn random_augment(img: &GrayImage32, policy: &AugmentPolicy, position: u64) -> GrayImage32 {
    let d = draw(policy, position);
    let mut out = match d.rotation {
        Some(theta) => rotate(img, theta),
        None => img.clone(),
    };
    if let Some(k) = d.shear {
        out = shear(&out, k);
    }
    if d.flip {
        out = hflip(&out);
    }
    out
}
