//! Procedural 10-class glyph images for smoke training and fixtures.
//!
//! Each class is a simple bright shape on a dark background. The shapes stay
//! distinguishable under horizontal flips and rotations up to 30°, so the
//! default augmentation policy does not destroy the label.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledImage;
use crate::imaging::{encode_netpbm, GrayImage32, INPUT_SIDE};
use crate::nn::NUM_CLASSES;

/// Shape membership in canonical coordinates, roughly [-1, 1]².
fn inside(class: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let r = (u * u + v * v).sqrt();
    let vbar = au <= 0.2 && av <= 0.9;
    let hbar = av <= 0.2 && au <= 0.9;
    match class {
        0 => (0.55..=0.9).contains(&r),
        1 => vbar,
        2 => hbar,
        3 => vbar || hbar,
        4 => au <= 0.7 && av <= 0.7,
        5 => au <= 0.9 && (0.3..=0.65).contains(&av),
        6 => r <= 0.75,
        7 => (-0.8..=0.7).contains(&v) && au <= (v + 0.8) / 1.5 * 0.85,
        8 => av <= 0.9 && (0.3..=0.65).contains(&au),
        9 => (0.6..=0.9).contains(&au.max(av)),
        _ => false,
    }
}

/// Renders one jittered glyph, quantized to 8-bit levels.
pub fn glyph<R: Rng + ?Sized>(class: usize, rng: &mut R) -> GrayImage32 {
    assert!(class < NUM_CLASSES, "glyph class {class} out of range");
    let centre = (INPUT_SIDE as f64 - 1.0) / 2.0;
    let cx = centre + rng.random_range(-3.0..=3.0);
    let cy = centre + rng.random_range(-3.0..=3.0);
    let radius = 10.0 * rng.random_range(0.8..=1.2);
    let tilt = rng.random_range(-10f64..=10.0).to_radians();
    let (sin, cos) = tilt.sin_cos();
    let ink: f64 = rng.random_range(0.7..=1.0);
    let background = rng.random_range(0.0..=0.15);
    let mut pixels = Vec::with_capacity(INPUT_SIDE * INPUT_SIDE);
    for row in 0..INPUT_SIDE {
        for col in 0..INPUT_SIDE {
            // 2×2 supersampling for soft edges
            let mut cover = 0.0;
            for (dy, dx) in [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)] {
                let x = (col as f64 + dx - cx) / radius;
                let y = (row as f64 + dy - cy) / radius;
                let (u, v) = (cos * x + sin * y, -sin * x + cos * y);
                if inside(class, u, v) {
                    cover += 0.25;
                }
            }
            let noise = rng.random_range(-0.08..=0.08);
            let value = (background + cover * (ink - background) + noise).clamp(0.0, 1.0);
            pixels.push((value * 255.0).round() / 255.0);
        }
    }
    GrayImage32::new(pixels).expect("values clamped to [0, 1]")
}

/// `per_class` glyphs of every class, class-major. Class `k` draws from
/// stream `k` of a ChaCha8 generator seeded with `seed`.
pub fn glyph_set(per_class: usize, seed: u64) -> Vec<LabeledImage> {
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        for i in 0..per_class {
            out.push(LabeledImage {
                image: glyph(class, &mut rng),
                label: class,
                path: PathBuf::from(format!("{class}/glyph_{i:04}.pgm")),
            });
        }
    }
    out
}

/// Writes `glyph_set(per_class, seed)` as P5 files under `root/<class>/`.
/// Returns the written paths.
pub fn write_glyph_tree(root: &Path, per_class: usize, seed: u64) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for sample in glyph_set(per_class, seed) {
        let path = root.join(&sample.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, encode_netpbm(&sample.image.to_raster()))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;

    #[test]
    fn deterministic_and_labelled() {
        let a = glyph_set(3, 5);
        let b = glyph_set(3, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().enumerate().all(|(i, s)| s.label == i / 3));
        assert_ne!(glyph_set(3, 6), a);
    }

    #[test]
    fn classes_have_distinct_means() {
        // nearest class mean must beat the 10% chance level by a wide margin
        let set = glyph_set(20, 1);
        let mut means = vec![vec![0.0; INPUT_SIDE * INPUT_SIDE]; NUM_CLASSES];
        for s in &set {
            for (m, p) in means[s.label].iter_mut().zip(s.image.pixels()) {
                *m += p / 20.0;
            }
        }
        let probe = glyph_set(10, 2);
        let correct = probe
            .iter()
            .filter(|s| {
                let dist = |m: &Vec<f64>| -> f64 {
                    m.iter()
                        .zip(s.image.pixels())
                        .map(|(a, b)| (a - b).powi(2))
                        .sum()
                };
                let best = (0..NUM_CLASSES)
                    .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
                    .unwrap();
                best == s.label
            })
            .count();
        assert!(correct >= 40, "{correct}/100");
    }

    #[test]
    fn tree_round_trips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_glyph_tree(dir.path(), 2, 9).unwrap();
        assert_eq!(paths.len(), 20);
        let manifest = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest.counts, [2; 10]);
        let set = glyph_set(2, 9);
        for (loaded, orig) in manifest.entries.iter().zip(&set) {
            assert_eq!(loaded.label, orig.label);
            assert_eq!(loaded.image, orig.image);
        }
    }
}
