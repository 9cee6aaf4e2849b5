//! PNG loading and saving, and resampling.
//!
//! Decoded values are divided by the bit-depth maximum. Stored values are
//! clamped to [0, 1] and quantized with `floor(v·max + 0.5)`.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth as PngDepth, ColorType};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, BitDepth, Image, Plane};

/// Channels of a decoded PNG, normalized to [0, 1], alpha included.
#[derive(Clone, Debug)]
pub struct DecodedPng {
    pub planes: Vec<Plane>,
    pub depth: BitDepth,
    pub has_alpha: bool,
}

impl DecodedPng {
    /// Color channels only.
    pub fn color_planes(&self) -> &[Plane] {
        let n = self.planes.len() - usize::from(self.has_alpha);
        &self.planes[..n]
    }
}

/// Decode every channel of a PNG held in memory.
pub fn decode_png_planes(bytes: &[u8]) -> Result<DecodedPng> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let (color, bit_depth) = reader.output_color_type();
    let (channels, has_alpha) = match color {
        ColorType::Grayscale => (1, false),
        ColorType::GrayscaleAlpha => (2, true),
        ColorType::Rgb => (3, false),
        ColorType::Rgba => (4, true),
        ColorType::Indexed => return Err(Error::UnsupportedColorType("Indexed".into())),
    };
    let depth = match bit_depth {
        PngDepth::Eight => BitDepth::Eight,
        PngDepth::Sixteen => BitDepth::Sixteen,
        other => return Err(Error::UnsupportedBitDepth(other as u8)),
    };
    let size = reader
        .output_buffer_size()
        .ok_or(png::DecodingError::LimitsExceeded)?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let max = depth.max_value();
    let mut data: Vec<Vec<f64>> = vec![Vec::with_capacity(width * height); channels];
    for row in buf.chunks(info.line_size).take(height) {
        match depth {
            BitDepth::Eight => {
                for (i, &v) in row[..width * channels].iter().enumerate() {
                    data[i % channels].push(v as f64 / max);
                }
            }
            BitDepth::Sixteen => {
                for (i, pair) in row[..width * channels * 2].chunks_exact(2).enumerate() {
                    let v = u16::from_be_bytes([pair[0], pair[1]]);
                    data[i % channels].push(v as f64 / max);
                }
            }
        }
    }
    let planes = data
        .into_iter()
        .map(|d| Plane::new(width, height, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecodedPng {
        planes,
        depth,
        has_alpha,
    })
}

/// Decode a PNG into an RGB image. Gray is replicated, alpha dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let decoded = decode_png_planes(bytes)?;
    let color = decoded.color_planes();
    let planes = match color {
        [g] => [g.clone(), g.clone(), g.clone()],
        [r, g, b] => [r.clone(), g.clone(), b.clone()],
        _ => unreachable!("decoder yields one or three color channels"),
    };
    Ok(Image::from_planes(planes)?.with_depth(decoded.depth))
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Quantize a value in [0, 1] (clamped first) to an integer level.
#[inline]
pub fn quantize(v: f64, depth: BitDepth) -> u16 {
    let max = depth.max_value();
    (clamp_unit(v) * max + 0.5).floor() as u16
}

/// Encode one (gray) or three (RGB) planes.
pub fn encode_planes(planes: &[&Plane], depth: BitDepth) -> Result<Vec<u8>> {
    let color = match planes.len() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        n => {
            return Err(Error::CountMismatch {
                expected: 3,
                found: n,
            })
        }
    };
    let (w, h) = planes[0].dims();
    for p in &planes[1..] {
        if p.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                found: p.dims(),
            });
        }
    }
    let bytes_per_sample = match depth {
        BitDepth::Eight => 1,
        BitDepth::Sixteen => 2,
    };
    let mut raw = Vec::with_capacity(w * h * planes.len() * bytes_per_sample);
    for i in 0..w * h {
        for p in planes {
            let q = quantize(p.data()[i], depth);
            match depth {
                BitDepth::Eight => raw.push(q as u8),
                BitDepth::Sixteen => raw.extend_from_slice(&q.to_be_bytes()),
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(color);
        encoder.set_depth(match depth {
            BitDepth::Eight => PngDepth::Eight,
            BitDepth::Sixteen => PngDepth::Sixteen,
        });
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&raw)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn encode_png(image: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let [r, g, b] = image.planes();
    encode_planes(&[r, g, b], depth)
}

pub fn save_png(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(image, depth)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResizeMethod {
    #[default]
    Bilinear,
    Nearest,
}

/// Source coordinate of a destination pixel center.
#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    s.clamp(0.0, (src_len - 1) as f64)
}

pub fn resize_plane(plane: &Plane, width: usize, height: usize, method: ResizeMethod) -> Result<Plane> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let (sw, sh) = plane.dims();
    if (sw, sh) == (width, height) {
        return Ok(plane.clone());
    }
    Ok(match method {
        ResizeMethod::Nearest => Plane::from_fn(width, height, |x, y| {
            let sx = (((x as f64 + 0.5) * sw as f64 / width as f64) as usize).min(sw - 1);
            let sy = (((y as f64 + 0.5) * sh as f64 / height as f64) as usize).min(sh - 1);
            plane.get(sx, sy)
        }),
        ResizeMethod::Bilinear => {
            // Horizontal pass, then vertical.
            let taps = |dst_len: usize, src_len: usize| -> Vec<(usize, usize, f64)> {
                (0..dst_len)
                    .map(|d| {
                        let s = source_coord(d, src_len, dst_len);
                        let i0 = s.floor() as usize;
                        let i1 = (i0 + 1).min(src_len - 1);
                        (i0, i1, s - i0 as f64)
                    })
                    .collect()
            };
            let xt = taps(width, sw);
            let yt = taps(height, sh);
            let mut horiz = vec![0.0; width * sh];
            for y in 0..sh {
                for (x, &(x0, x1, t)) in xt.iter().enumerate() {
                    let a = plane.get(x0, y);
                    let b = plane.get(x1, y);
                    horiz[y * width + x] = a + (b - a) * t;
                }
            }
            Plane::from_fn(width, height, |x, y| {
                let (y0, y1, t) = yt[y];
                let a = horiz[y0 * width + x];
                let b = horiz[y1 * width + x];
                a + (b - a) * t
            })
        }
    })
}

pub fn resize(image: &Image, width: usize, height: usize, method: ResizeMethod) -> Result<Image> {
    let [r, g, b] = image.planes();
    let planes = [
        resize_plane(r, width, height, method)?,
        resize_plane(g, width, height, method)?,
        resize_plane(b, width, height, method)?,
    ];
    Ok(Image::from_planes(planes)?.with_depth(image.depth()))
}

/// Dimensions after shrinking by an integer factor (rounded up, at least 1).
pub fn scaled_dims(width: usize, height: usize, factor: usize) -> (usize, usize) {
    let f = factor.max(1);
    (width.div_ceil(f).max(1), height.div_ceil(f).max(1))
}
