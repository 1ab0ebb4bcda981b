//! Binary PGM (P5) and PPM (P6) images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{Scalar, Tensor};

/// Single-channel image; samples are at most `maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

/// 8-bit RGB image with interleaved samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(data: &[u8], format: &'static str) -> Result<Header> {
    if data.len() < 2 {
        return Err(Error::format(format, "file too short"));
    }
    let magic = [data[0], data[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while data.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format, "expected a number in header"));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(format, "header number out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(format, "missing whitespace after header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(format, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format, format!("invalid maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::format("PGM", "pixel count does not match dimensions"));
        }
        if maxval == 0 {
            return Err(Error::format("PGM", "maxval must be positive"));
        }
        if let Some(&p) = pixels.iter().find(|&&p| p > maxval) {
            return Err(Error::format("PGM", format!("sample {p} exceeds maxval {maxval}")));
        }
        Ok(GrayImage {
            width,
            height,
            maxval,
            pixels,
        })
    }

    pub fn decode(data: &[u8]) -> Result<Self> {
        let h = parse_header(data, "PGM")?;
        if &h.magic != b"P5" {
            return Err(Error::format("PGM", "only binary P5 is supported"));
        }
        let bytes_per = if h.maxval > 255 { 2 } else { 1 };
        let count = h.width * h.height;
        let raster = &data[h.data_start..];
        if raster.len() < count * bytes_per {
            return Err(Error::format(
                "PGM",
                format!("raster has {} bytes, expected {}", raster.len(), count * bytes_per),
            ));
        }
        let pixels: Vec<u16> = if bytes_per == 1 {
            raster[..count].iter().map(|&b| b as u16).collect()
        } else {
            raster[..2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        GrayImage::new(h.width, h.height, h.maxval as u16, pixels)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for p in &self.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        } else {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

impl RgbImage {
    /// Converts a `(1, 3, H, W)` tensor with values nominally in `[0, 1]`
    /// using `round(255 * clamp(x, 0, 1))`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::ShapeMismatch {
                op: "ppm",
                expected: "(1, 3, H, W)".into(),
                got: s.to_string(),
            });
        }
        let mut pixels = Vec::with_capacity(3 * s.plane());
        for h in 0..s.h {
            for w in 0..s.w {
                for c in 0..3 {
                    let v = t.at(0, c, h, w).as_f64();
                    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                    pixels.push((255.0 * v).round() as u8);
                }
            }
        }
        Ok(RgbImage {
            width: s.w,
            height: s.h,
            pixels,
        })
    }

    pub fn decode(data: &[u8]) -> Result<Self> {
        let h = parse_header(data, "PPM")?;
        if &h.magic != b"P6" {
            return Err(Error::format("PPM", "only binary P6 is supported"));
        }
        if h.maxval > 255 {
            return Err(Error::format("PPM", "only 8-bit PPM is supported"));
        }
        let count = 3 * h.width * h.height;
        let raster = &data[h.data_start..];
        if raster.len() < count {
            return Err(Error::format("PPM", "truncated raster"));
        }
        Ok(RgbImage {
            width: h.width,
            height: h.height,
            pixels: raster[..count].to_vec(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}
