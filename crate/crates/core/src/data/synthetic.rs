//! Procedural two-class image sets for desk-scale experiments.
//!
//! Labels alternate NORMAL, PNEUMONIA, ... so any prefix is balanced.
//! Pixel values are clamped to [0, 1].

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_image, Label};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NOISE_STD: f64 = 0.05;

fn label_of(i: usize) -> Label {
    if i.is_multiple_of(2) {
        Label::Normal
    } else {
        Label::Pneumonia
    }
}

fn rng_for(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn finish(mut pixels: Vec<f32>, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    for p in &mut pixels {
        *p = (*p + noise.sample(rng) as f32).clamp(0.0, 1.0);
    }
    Tensor::new([1, size, size], pixels).expect("consistent shape")
}

fn add_blob(pixels: &mut [f32], size: usize, cy: f64, cx: f64, sigma: f64, amp: f64) {
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            pixels[y * size + x] += (amp * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
        }
    }
}

/// NORMAL: a few smooth Gaussian blobs. PNEUMONIA: a sinusoidal stripe
/// texture of random orientation, period and phase. Both carry additive
/// Gaussian noise.
pub fn textures(n: usize, size: usize, seed: u64) -> Vec<(Tensor, Label)> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let label = label_of(i);
            let mut px = vec![0.2f32; size * size];
            match label {
                Label::Normal => {
                    let s = size as f64;
                    for _ in 0..rng.random_range(2..=4) {
                        let cy = rng.random_range(0.0..s);
                        let cx = rng.random_range(0.0..s);
                        let sigma = rng.random_range(0.1..0.2) * s;
                        let amp = rng.random_range(0.3..0.6);
                        add_blob(&mut px, size, cy, cx, sigma, amp);
                    }
                }
                Label::Pneumonia => {
                    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                    let period = rng.random_range(4.0..8.0);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let amp = rng.random_range(0.2..0.35);
                    let (s, c) = theta.sin_cos();
                    for y in 0..size {
                        for x in 0..size {
                            let t = (x as f64 * c + y as f64 * s) * std::f64::consts::TAU / period + phase;
                            px[y * size + x] = (0.45 + amp * t.sin()) as f32;
                        }
                    }
                }
            }
            (finish(px, size, &mut rng), label)
        })
        .collect()
}

/// Rows and columns `[0, size/2)`: the quadrant holding the class signal in
/// [`planted_quadrant`].
pub fn planted_region(size: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (0..size / 2, 0..size / 2)
}

/// The class signal is a striped patch inside the top-left quadrant, with
/// horizontal stripes for NORMAL and vertical ones for PNEUMONIA. The other
/// three quadrants hold class-independent blob distractors.
pub fn planted_quadrant(n: usize, size: usize, seed: u64) -> Vec<(Tensor, Label)> {
    (0..n)
        .map(|i| {
            let label = label_of(i);
            (planted_image(&mut rng_for(seed, i), size, Some(label)), label)
        })
        .collect()
}

/// `n` blank images (distractors only, nothing planted), each returned
/// twice: once labelled NORMAL and once PNEUMONIA.
///
/// A classifier trained on plain [`planted_quadrant`] data can treat "no
/// vertical stripes" as NORMAL evidence, which makes the NORMAL class
/// heatmap light up the empty background. Identical blanks under both
/// labels pin such absence features to a 50/50 output, so each class has
/// to be recognised from its own stripes.
pub fn planted_controls(n: usize, size: usize, seed: u64) -> Vec<(Tensor, Label)> {
    (0..n)
        .flat_map(|i| {
            let img = planted_image(&mut rng_for(seed, CONTROL_STREAM + i), size, None);
            [(img.clone(), Label::Normal), (img, Label::Pneumonia)]
        })
        .collect()
}

const CONTROL_STREAM: usize = 1 << 32;

fn planted_image(rng: &mut ChaCha8Rng, size: usize, patch: Option<Label>) -> Tensor {
    let half = size / 2;
    let mut px = vec![0.1f32; size * size];
    for _ in 0..rng.random_range(1..=3) {
        let q = rng.random_range(1..4);
        let (oy, ox) = ((q / 2) * half, (q % 2) * half);
        let cy = oy as f64 + rng.random_range(0.25..0.75) * half as f64;
        let cx = ox as f64 + rng.random_range(0.25..0.75) * half as f64;
        let amp = rng.random_range(0.3..0.6);
        add_blob(&mut px, size, cy, cx, half as f64 / 6.0, amp);
    }
    if let Some(label) = patch {
        // One pixel of margin keeps the patch strictly inside the quadrant.
        let side = (half * 3 / 4).clamp(1, half.saturating_sub(2).max(1));
        let period = (size as f64 / 8.0).max(2.0);
        let y0 = rng.random_range(1..=half.saturating_sub(side + 1).max(1));
        let x0 = rng.random_range(1..=half.saturating_sub(side + 1).max(1));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                let t = match label {
                    Label::Normal => y,
                    Label::Pneumonia => x,
                } as f64;
                let wave = (std::f64::consts::TAU * t / period + phase).sin();
                px[y * size + x] = (0.5 + 0.4 * wave) as f32;
            }
        }
    }
    finish(px, size, rng)
}

/// Writes samples as `root/<LABEL>/<index>.<ext>` and returns the paths.
pub fn write_dataset(root: &Path, samples: &[(Tensor, Label)], ext: &str) -> Result<Vec<PathBuf>> {
    if !matches!(ext, "png" | "pgm" | "ppm") {
        return Err(Error::invalid(format!("unsupported image extension `{ext}`")));
    }
    for l in Label::ALL {
        let d = root.join(l.as_str());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, (img, label))| {
            let p = root.join(label.as_str()).join(format!("{i:05}.{ext}"));
            write_image(&p, img)?;
            Ok(p)
        })
        .collect()
}
