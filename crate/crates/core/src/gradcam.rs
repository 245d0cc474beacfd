//! Gradient-weighted class activation maps and heatmap overlays.

use std::path::Path;

use crate::data::write_png;
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f32 = 0.4;

/// A class activation map with values in [0, 1]. Its maximum is 1 unless
/// the raw map is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// H'×W'.
    pub values: Tensor,
    pub layer: String,
    pub class: usize,
}

/// Weights each channel of the tapped activation by the spatial mean of the
/// target logit's gradient, sums, applies ReLU, and divides by the maximum.
pub fn gradcam(model: &ModelGraph, input: &Tensor, class: usize, layer: &str) -> Result<Heatmap> {
    if input.rank() != 4 || input.shape()[0] != 1 {
        return Err(Error::shape(
            "gradcam",
            format!("expected a single image batch 1×C×H×W, got {:?}", input.shape()),
        ));
    }
    let tap = model.feature_maps(input, layer)?;
    let act = tap.activation();
    let (_, c, h, w) = act.dims4("gradcam").map_err(|_| {
        Error::invalid(format!(
            "layer `{layer}` is not a spatial feature map ({:?})",
            act.shape()
        ))
    })?;
    let grad = tap.gradient_of_logit(0, class)?;
    let plane = h * w;
    let weights: Vec<f64> = grad
        .data()
        .chunks(plane)
        .map(|g| g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect();
    let a = act.data();
    let mut raw = vec![0.0f64; plane];
    for (k, &wk) in weights.iter().enumerate().take(c) {
        if wk == 0.0 {
            continue;
        }
        for (r, &v) in raw.iter_mut().zip(&a[k * plane..(k + 1) * plane]) {
            *r += wk * v as f64;
        }
    }
    let max = raw.iter().fold(0.0f64, |m, &v| m.max(v));
    let values = if max > 0.0 {
        raw.iter().map(|&v| (v.max(0.0) / max) as f32).collect()
    } else {
        vec![0.0; plane]
    };
    Ok(Heatmap {
        values: Tensor::new([h, w], values)?,
        layer: layer.to_string(),
        class,
    })
}

/// Bilinear interpolation with corner alignment: the four corner samples
/// land exactly on the output corners.
pub fn upsample_bilinear(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = map.dims2("upsample_bilinear")?;
    if out_h < h || out_w < w || h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "upsample target {out_h}×{out_w} is smaller than source {h}×{w}"
        )));
    }
    let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f32) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let x = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let i0 = (x.floor() as usize).min(src - 1);
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, (x - i0 as f64) as f32)
    };
    let d = map.data();
    Tensor::from_fn([out_h, out_w], |i| {
        let (y0, y1, ty) = coord(i / out_w, h, out_h);
        let (x0, x1, tx) = coord(i % out_w, w, out_w);
        let at = |y: usize, x: usize| d[y * w + x];
        let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * tx;
        let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * tx;
        top + (bot - top) * ty
    })
}

const STOPS: [(f32, [f32; 3]); 4] = [
    (0.0, [0.0, 0.0, 0.5]),
    (1.0 / 3.0, [0.0, 1.0, 1.0]),
    (2.0 / 3.0, [1.0, 1.0, 0.0]),
    (1.0, [1.0, 0.0, 0.0]),
];

/// Piecewise-linear dark blue → cyan → yellow → red.
pub fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    for pair in STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (pair[0], pair[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            return [0, 1, 2].map(|i| ca[i] + (cb[i] - ca[i]) * t);
        }
    }
    STOPS[3].1
}

/// Blends the colormapped heatmap over the image (C×H×W in [0, 1]; gray
/// images are replicated to RGB). The heatmap is upsampled to the image size
/// when smaller. Returns 3×H×W.
pub fn overlay(heatmap: &Tensor, image: &Tensor, alpha: f32) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(
            "overlay",
            format!("expected C×H×W image, got {:?}", image.shape()),
        ));
    };
    if c != 1 && c != 3 {
        return Err(Error::shape("overlay", format!("expected 1 or 3 channels, got {c}")));
    }
    let heat = if heatmap.shape() == [h, w] {
        heatmap.clone()
    } else {
        upsample_bilinear(heatmap, h, w)?
    };
    let plane = h * w;
    let img = image.data();
    let hv = heat.data();
    Tensor::from_fn([3, h, w], |i| {
        let ch = i / plane;
        let p = i % plane;
        let base = if c == 1 { img[p] } else { img[ch * plane + p] };
        if alpha == 0.0 {
            return base;
        }
        let color = colormap(hv[p])[ch];
        ((1.0 - alpha) * base + alpha * color).clamp(0.0, 1.0)
    })
}

/// Fraction of total heatmap mass inside the given rows and columns; zero
/// for an all-zero map.
pub fn mass_fraction(map: &Tensor, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<f64> {
    let (h, w) = map.dims2("mass_fraction")?;
    let d = map.data();
    let total: f64 = d.iter().map(|&v| v as f64).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut inside = 0.0;
    for y in rows.start.min(h)..rows.end.min(h) {
        for x in cols.start.min(w)..cols.end.min(w) {
            inside += d[y * w + x] as f64;
        }
    }
    Ok(inside / total)
}

/// Writes the heatmap itself as a grayscale PNG.
pub fn write_heatmap_png(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = map.dims2("write_heatmap_png")?;
    write_png(path, &map.reshape([1, h, w])?)
}
