//! Linear-float RGBA image buffers and file IO.
//!
//! Two on-disk formats: 8-bit PNG (sRGB-encoded, for previews) and a float
//! map `.pf64` that stores the raw f64 pixels little-endian for lossless
//! round trips. Losses are always computed on the linear float data.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

/// Row-major RGBA image, linear float, pixel (0, 0) top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 4]>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![[0.0; 4]; (width * height) as usize],
        }
    }

    pub fn fill(width: u32, height: u32, value: [f64; 4]) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![value; (width * height) as usize],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 4] {
        self.pixels[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: [f64; 4]) {
        let i = self.index(x, y);
        self.pixels[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.pixels
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute per-channel difference to another image.
    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn linear_to_srgb(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(x: f64) -> f64 {
    if x <= 0.040_45 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

const PF64_MAGIC: &str = "PF64";

/// Writes an image; the format is picked from the extension (`png` or
/// `pf64`). Non-finite pixels are an error, not a silent clamp.
pub fn write_image(path: &Path, image: &ImageBuffer) -> Result<()> {
    if !image.is_finite() {
        return Err(Error::NonFinite(format!(
            "refusing to write image with non-finite pixels to {}",
            path.display()
        )));
    }
    match extension(path)?.as_str() {
        "png" => write_png(path, image),
        "pf64" => write_pf64(path, image),
        other => Err(Error::UnsupportedFormat(format!(
            "cannot write image format .{other}"
        ))),
    }
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    match extension(path)?.as_str() {
        "png" => read_png(path),
        "pf64" => read_pf64(path),
        other => Err(Error::UnsupportedFormat(format!(
            "cannot read image format .{other}"
        ))),
    }
}

fn extension(path: &Path) -> Result<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|s| s.to_ascii_lowercase())
        .ok_or_else(|| {
            Error::UnsupportedFormat(format!("image path {} has no extension", path.display()))
        })
}

fn write_pf64(path: &Path, image: &ImageBuffer) -> Result<()> {
    let io_err = |e| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    // -1.0 marks little-endian data, mirroring the PFM scale convention.
    write!(w, "{PF64_MAGIC}\n{} {} 4\n-1.0\n", image.width, image.height).map_err(io_err)?;
    for px in &image.pixels {
        for v in px {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

fn read_pf64(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: &str| Error::parse(path.display().to_string(), msg.to_string());
    // Header is three newline-terminated text lines.
    let mut offset = 0;
    let mut lines = Vec::new();
    for _ in 0..3 {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        lines.push(
            std::str::from_utf8(&bytes[offset..offset + end]).map_err(|_| bad("non-utf8 header"))?,
        );
        offset += end + 1;
    }
    if lines[0] != PF64_MAGIC {
        return Err(bad("missing PF64 magic"));
    }
    let dims: Vec<u32> = lines[1]
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad("bad dimensions")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 || dims[2] != 4 {
        return Err(bad("expected `width height 4`"));
    }
    let (width, height) = (dims[0], dims[1]);
    let expected = (width as usize) * (height as usize) * 4 * 8;
    let data = &bytes[offset..];
    if data.len() != expected {
        return Err(bad("pixel payload has wrong size"));
    }
    let mut pixels = Vec::with_capacity((width * height) as usize);
    for chunk in data.chunks_exact(32) {
        let mut px = [0.0; 4];
        for (i, c) in chunk.chunks_exact(8).enumerate() {
            px[i] = f64::from_le_bytes(c.try_into().unwrap());
        }
        pixels.push(px);
    }
    Ok(ImageBuffer {
        width,
        height,
        pixels,
    })
}

fn write_png(path: &Path, image: &ImageBuffer) -> Result<()> {
    let io_err = |e| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let w = BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, image.width, image.height);
    encoder.set_color(png::ColorType::Rgba);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut data = Vec::with_capacity(image.pixels.len() * 4);
    for px in &image.pixels {
        for (c, v) in px.iter().enumerate() {
            // Alpha stays linear; color channels are gamma-encoded.
            let encoded = if c == 3 { v.clamp(0.0, 1.0) } else { linear_to_srgb(*v) };
            data.push((encoded * 255.0).round() as u8);
        }
    }
    writer
        .write_image_data(&data)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn read_png(path: &Path) -> Result<ImageBuffer> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::parse(path.display().to_string(), "image too large".to_string()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let (width, height) = (info.width, info.height);
    let mut pixels = Vec::with_capacity((width * height) as usize);
    let push = |pixels: &mut Vec<[f64; 4]>, r: u8, g: u8, b: u8, a: u8| {
        pixels.push([
            srgb_to_linear(r as f64 / 255.0),
            srgb_to_linear(g as f64 / 255.0),
            srgb_to_linear(b as f64 / 255.0),
            a as f64 / 255.0,
        ]);
    };
    match info.color_type {
        png::ColorType::Rgba => {
            for px in buf[..info.buffer_size()].chunks_exact(4) {
                push(&mut pixels, px[0], px[1], px[2], px[3]);
            }
        }
        png::ColorType::Rgb => {
            for px in buf[..info.buffer_size()].chunks_exact(3) {
                push(&mut pixels, px[0], px[1], px[2], 255);
            }
        }
        png::ColorType::Grayscale => {
            for px in buf[..info.buffer_size()].iter() {
                push(&mut pixels, *px, *px, *px, 255);
            }
        }
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "png color type {other:?}"
            )))
        }
    }
    Ok(ImageBuffer {
        width,
        height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> ImageBuffer {
        let mut img = ImageBuffer::new(5, 3);
        for y in 0..3 {
            for x in 0..5 {
                img.set(
                    x,
                    y,
                    [
                        x as f64 / 5.0,
                        y as f64 / 3.0,
                        0.25 + 0.1 * (x + y) as f64,
                        1.0,
                    ],
                );
            }
        }
        img
    }

    #[test]
    fn pf64_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pf64");
        let mut img = test_image();
        img.set(2, 1, [1.0 / 3.0, f64::MIN_POSITIVE, 1e300, 0.125]);
        write_image(&path, &img).unwrap();
        let loaded = read_image(&path).unwrap();
        assert_eq!(img, loaded);
    }

    #[test]
    fn png_roundtrip_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = ImageBuffer::fill(4, 4, [0.5, 0.5, 0.5, 1.0]);
        write_image(&path, &img).unwrap();
        let loaded = read_image(&path).unwrap();
        for px in &loaded.pixels {
            for c in 0..3 {
                assert!((px[c] - 0.5).abs() < 1.0 / 255.0);
            }
            assert_eq!(px[3], 1.0);
        }
    }

    #[test]
    fn nan_pixel_is_an_error_not_a_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = test_image();
        img.set(0, 0, [f64::NAN, 0.0, 0.0, 1.0]);
        for name in ["img.png", "img.pf64"] {
            let err = write_image(&dir.path().join(name), &img).unwrap_err();
            assert!(matches!(err, Error::NonFinite(_)));
        }
    }

    #[test]
    fn unknown_extension_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_image(&dir.path().join("img.bmp"), &test_image()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
        let err = read_image(&dir.path().join("missing.bmp")).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn srgb_transfer_roundtrips() {
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let back = srgb_to_linear(linear_to_srgb(x));
            assert!((back - x).abs() < 1e-12);
        }
    }
}
