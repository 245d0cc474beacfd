//! Binary PGM/PPM and 8/16-bit PNG codecs. Decoded images are C×H×W tensors
//! with values in [0, 1]; alpha channels are dropped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes by content, not extension.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|reason| image_err(path, reason))
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor, String> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err("unsupported format (expected binary PGM/PPM or PNG)".into())
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Tensor, String> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header")?;
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad header values {width}×{height} maxval {maxval}"));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < count * bytes_per {
        return Err(format!(
            "truncated raster: need {} bytes, have {}",
            count * bytes_per,
            raster.len()
        ));
    }
    let scale = maxval as f32;
    let sample = |i: usize| -> f32 {
        let v = if bytes_per == 1 {
            raster[i] as f32
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f32
        };
        (v / scale).min(1.0)
    };
    // interleaved HWC → planar CHW
    Tensor::from_fn([channels, height, width], |i| {
        let c = i / (height * width);
        let p = i % (height * width);
        sample(p * channels + c)
    })
    .map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> Result<Tensor, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stored = info.color_type.samples();
    let channels = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        png::ColorType::Rgb | png::ColorType::Rgba => 3,
        png::ColorType::Indexed => return Err("palette was not expanded".into()),
    };
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let line = info.line_size;
    let value = |y: usize, x: usize, c: usize| -> f32 {
        let idx = x * stored + c;
        if wide {
            let o = y * line + 2 * idx;
            u16::from_be_bytes([buf[o], buf[o + 1]]) as f32 / 65535.0
        } else {
            buf[y * line + idx] as f32 / 255.0
        }
    };
    Tensor::from_fn([channels, h, w], |i| {
        let c = i / (h * w);
        let p = i % (h * w);
        value(p / w, p % w, c)
    })
    .map_err(|e| e.to_string())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn interleave(image: &Tensor) -> Result<(usize, usize, usize, Vec<u8>)> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(
            "write_image",
            format!("expected C×H×W, got {:?}", image.shape()),
        ));
    };
    if c != 1 && c != 3 {
        return Err(Error::shape(
            "write_image",
            format!("expected 1 or 3 channels, got {c}"),
        ));
    }
    let d = image.data();
    let mut out = Vec::with_capacity(c * h * w);
    for p in 0..h * w {
        for ch in 0..c {
            out.push(to_u8(d[ch * h * w + p]));
        }
    }
    Ok((c, h, w, out))
}

/// Writes binary PGM (1 channel) or PPM (3 channels), 8-bit.
pub fn write_pnm(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w, raster) = interleave(image)?;
    let mut bytes = format!("{}\n{w} {h}\n255\n", if c == 1 { "P5" } else { "P6" }).into_bytes();
    bytes.extend_from_slice(&raster);
    crate::persistence::write_atomic(path, &bytes)
}

/// Writes an 8-bit grayscale or RGB PNG.
pub fn write_png(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w, raster) = interleave(image)?;
    let mut bytes = Vec::new();
    let mut enc = png::Encoder::new(&mut bytes, w as u32, h as u32);
    enc.set_color(if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| image_err(path, e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&raster).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    crate::persistence::write_atomic(path, &bytes)
}

/// Picks the encoder from the extension: `.png`, otherwise PGM/PPM.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => write_png(path, image),
        _ => write_pnm(path, image),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::from_fn([3, 2, 3], |i| i as f32 / 17.0).unwrap();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!(back.shape(), img.shape());
            assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pgm_with_comment_and_16_bit() {
        let mut bytes = b"P5\n# note\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_image(b"not an image").is_err());
        assert!(decode_image(b"P5\n4 4\n255\n\x00").is_err());
    }
}
