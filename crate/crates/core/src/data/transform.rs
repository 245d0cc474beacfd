use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rec. 601 luma weights for R, G, B.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// The same statistics for every channel.
    pub fn uniform(channels: usize, mean: f32, std: f32) -> Self {
        Normalization {
            mean: vec![mean; channels],
            std: vec![std; channels],
        }
    }
}

/// Target geometry and normalization for model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub norm: Normalization,
}

impl Preprocess {
    /// Default normalization maps [0, 1] to [-1, 1].
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Preprocess {
            channels,
            height,
            width,
            norm: Normalization::uniform(channels, 0.5, 0.5),
        }
    }

    /// Resizes and converts channels; values stay in [0, 1].
    pub fn prepare(&self, image: &Tensor) -> Result<Tensor> {
        let converted = convert_channels(image, self.channels)?;
        resize_bilinear(&converted, self.height, self.width)
    }

    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        normalize(&self.prepare(image)?, &self.norm)
    }
}

/// `prepare` followed by per-channel `(x - mean) / std`.
pub fn preprocess(image: &Tensor, target: &Preprocess) -> Result<Tensor> {
    target.apply(image)
}

fn chw(image: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected C×H×W, got {:?}", image.shape()))),
    }
}

fn convert_channels(image: &Tensor, target: usize) -> Result<Tensor> {
    let (c, h, w) = chw(image, "preprocess")?;
    let plane = h * w;
    let d = image.data();
    match (c, target) {
        (a, b) if a == b && (a == 1 || a == 3) => Ok(image.clone()),
        (1, 3) => Tensor::from_fn([3, h, w], |i| d[i % plane]),
        (3, 1) => Tensor::from_fn([1, h, w], |p| luma(d[p], d[plane + p], d[2 * plane + p])),
        _ => Err(Error::invalid(format!(
            "cannot convert {c}-channel image to {target} channels (supported: 1 and 3)"
        ))),
    }
}

pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
}

/// Bilinear resampling with half-pixel centers and edge clamping. An
/// identity-sized resize returns the input values exactly.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = chw(image, "resize_bilinear")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::invalid("resize requires non-empty images"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let axis = |o: usize, src: usize, dst: usize| -> (usize, usize, f32) {
        let x = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0);
        let i0 = (x.floor() as usize).min(src - 1);
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, (x - i0 as f64).min(1.0) as f32)
    };
    let rows: Vec<_> = (0..out_h).map(|y| axis(y, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, w, out_w)).collect();
    let d = image.data();
    Tensor::from_fn([c, out_h, out_w], |i| {
        let ch = i / (out_h * out_w);
        let (y0, y1, ty) = rows[(i / out_w) % out_h];
        let (x0, x1, tx) = cols[i % out_w];
        let at = |y: usize, x: usize| d[(ch * h + y) * w + x];
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
        let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

pub fn normalize(image: &Tensor, norm: &Normalization) -> Result<Tensor> {
    let (c, h, w) = chw(image, "normalize")?;
    if norm.mean.len() != c || norm.std.len() != c {
        return Err(Error::invalid(format!(
            "normalization has {} means and {} stds for {c} channels",
            norm.mean.len(),
            norm.std.len()
        )));
    }
    if let Some(ch) = norm.std.iter().position(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "normalization std for channel {ch} must be nonzero and finite"
        )));
    }
    let plane = h * w;
    let d = image.data();
    Tensor::from_fn([c, h, w], |i| {
        let ch = i / plane;
        (d[i] - norm.mean[ch]) / norm.std[ch]
    })
}

/// Maximum relative photometric perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub saturation_delta: f64,
    pub brightness_delta: f64,
    pub exposure_delta: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec::uniform(0.05)
    }
}

impl AugmentSpec {
    pub fn uniform(delta: f64) -> Self {
        AugmentSpec {
            saturation_delta: delta,
            brightness_delta: delta,
            exposure_delta: delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("saturation", self.saturation_delta),
            ("brightness", self.brightness_delta),
            ("exposure", self.exposure_delta),
        ] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid(format!("{name} delta must lie in [0, 1), got {d}")));
            }
        }
        Ok(())
    }

    /// Draws brightness, exposure and saturation factors, in that order,
    /// each uniform on `[1 - delta, 1 + delta]`.
    pub fn draw(&self, sample_seed: u64) -> AugmentFactors {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let mut factor = |d: f64| {
            let u: f64 = rng.random();
            if d == 0.0 {
                1.0
            } else {
                (1.0 - d + 2.0 * d * u) as f32
            }
        };
        AugmentFactors {
            brightness: factor(self.brightness_delta),
            exposure: factor(self.exposure_delta),
            saturation: factor(self.saturation_delta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentFactors {
    pub brightness: f32,
    pub exposure: f32,
    pub saturation: f32,
}

/// Brightness scales every channel, exposure raises to the power
/// `1 / factor`, saturation blends each pixel with its luma (1-channel
/// images are unaffected), and the result is clamped to [0, 1]. A factor
/// of exactly 1 leaves its stage untouched.
pub fn apply_factors(image: &Tensor, f: AugmentFactors) -> Result<Tensor> {
    let (c, h, w) = chw(image, "augment")?;
    let mut out = image.clone();
    let data = out.data_mut();
    if f.brightness != 1.0 {
        data.iter_mut().for_each(|x| *x *= f.brightness);
    }
    if f.exposure != 1.0 {
        let p = 1.0 / f.exposure;
        data.iter_mut().for_each(|x| *x = x.max(0.0).powf(p));
    }
    if f.saturation != 1.0 && c == 3 {
        let plane = h * w;
        for i in 0..plane {
            let gray = luma(data[i], data[plane + i], data[2 * plane + i]);
            for ch in 0..3 {
                let v = &mut data[ch * plane + i];
                *v = gray + f.saturation * (*v - gray);
            }
        }
    }
    data.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    Ok(out)
}

pub fn augment(image: &Tensor, spec: &AugmentSpec, sample_seed: u64) -> Result<Tensor> {
    apply_factors(image, spec.draw(sample_seed))
}
