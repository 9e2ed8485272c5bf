//! 8-bit RGB image files: PNG and binary PPM (P6).
//!
//! Images load as `[1, 3, H, W]` tensors with values `byte / 255`, and are
//! written back clamped to `[0, 1]` and rounded to the nearest byte.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "ppm"];

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn is_ppm(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Interleaved RGB bytes to a planar tensor.
pub fn from_rgb8(bytes: &[u8], height: usize, width: usize) -> Tensor {
    let plane = height * width;
    Tensor::from_fn(&[1, 3, height, width], |i| bytes[(i % plane) * 3 + i / plane] as f64 / 255.0)
}

/// Planar tensor to interleaved RGB bytes.
pub fn to_rgb8(image: &Tensor) -> Result<(Vec<u8>, usize, usize)> {
    let (b, c, h, w) = image.dims4()?;
    if b != 1 || c != 3 {
        return Err(crate::error::shape_err("to_rgb8", "[1, 3, H, W]", format!("{:?}", image.shape())));
    }
    let plane = h * w;
    let mut out = vec![0u8; 3 * plane];
    for (i, px) in out.iter_mut().enumerate() {
        let v = image.data()[(i % 3) * plane + i / 3];
        *px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    Ok((out, h, w))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    if is_ppm(path) {
        decode_ppm(&bytes).map_err(|m| image_err(path, m))
    } else {
        decode_png(&bytes).map_err(|m| image_err(path, m))
    }
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let (rgb, h, w) = to_rgb8(image)?;
    if is_ppm(path) {
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&rgb);
        fs::write(path, out)?;
        return Ok(());
    }
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
    writer.write_image_data(&rgb).map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))?;
    Ok(())
}

fn decode_png(bytes: &[u8]) -> Result<Tensor, String> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("image too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err("indexed colour was not expanded".into()),
    };
    Ok(from_rgb8(&rgb, h, w))
}

fn decode_ppm(bytes: &[u8]) -> Result<Tensor, String> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(format!("expected P6 magic, found {}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PPM header field `{s}`"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(format!("only 8-bit PPM is supported, maxval {max}"));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() < 3 * w * h {
        return Err("truncated PPM pixel data".into());
    }
    Ok(from_rgb8(&data[..3 * w * h], h, w))
}

/// Mirrors index `i` into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extends the bottom and right edges by reflection so both dimensions
/// become multiples of `multiple`. Returns the input unchanged when they
/// already are.
pub fn pad_reflect(image: &Tensor, multiple: usize) -> Result<Tensor> {
    let (b, c, h, w) = image.dims4()?;
    if multiple == 0 || h == 0 || w == 0 {
        return Err(crate::error::invalid("pad_reflect", "image and multiple must be non-empty"));
    }
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return Ok(image.clone());
    }
    Ok(Tensor::from_fn(&[b, c, ph, pw], |i| {
        let (plane, r) = (i / (ph * pw), i % (ph * pw));
        image.data()[plane * h * w + reflect(r / pw, h) * w + reflect(r % pw, w)]
    }))
}

/// The top-left `height x width` region.
pub fn crop_to(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (b, c, h, w) = image.dims4()?;
    if height > h || width > w {
        return Err(crate::error::invalid("crop_to", format!("{height}x{width} exceeds {h}x{w}")));
    }
    Ok(Tensor::from_fn(&[b, c, height, width], |i| {
        let (plane, r) = (i / (height * width), i % (height * width));
        image.data()[plane * h * w + (r / width) * w + r % width]
    }))
}
