//! Image tensors and the PPM / raw `.f32` loaders.

use std::io::{Read, Write};

use crate::error::{shape_err, EetError, Result};

/// Per-channel normalization applied to loaded pixels: `(x - 0.5) / 0.5`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.5;

/// Height × width × channels, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape_err(
                "Image::new",
                format!("{} values", height * width * channels),
                format!("{}", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    /// Maps raw [0, 1] intensities through the fixed mean/std.
    pub fn normalized(mut self) -> Self {
        for v in &mut self.data {
            *v = (*v - PIXEL_MEAN) / PIXEL_STD;
        }
        self
    }
}

/// Reads a binary PPM (P6, maxval ≤ 255) as [0, 1] intensities.
pub fn read_ppm<R: Read>(mut r: R) -> Result<Image> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ppm_err("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(ppm_err(format!("unsupported magic `{}`", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| ppm_err(format!("bad header field `{s}`")));
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(ppm_err(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(ppm_err("truncated pixel data"));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Image::new(height, width, 3, data)
}

/// Writes [0, 1] intensities as an 8-bit P6 PPM. Requires 3 channels.
pub fn write_ppm<W: Write>(mut w: W, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(ppm_err("PPM needs exactly 3 channels"));
    }
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Raw tensor: u32 height, width, channels (little-endian) then f32 values.
pub fn read_f32_image<R: Read>(mut r: R) -> Result<Image> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    let dim = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let mut raw = vec![0u8; h * w * c * 4];
    r.read_exact(&mut raw).map_err(|_| EetError::Format {
        format: "f32 image",
        reason: "truncated pixel data".into(),
    })?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Image::new(h, w, c, data)
}

pub fn write_f32_image<W: Write>(mut w: W, img: &Image) -> Result<()> {
    for d in [img.height, img.width, img.channels] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in &img.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Loads a `.ppm` or `.f32` file and applies the fixed normalization.
pub fn load_image(path: &std::path::Path) -> Result<Image> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let img = match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => read_f32_image(file)?,
        _ => read_ppm(file)?,
    };
    Ok(img.normalized())
}

fn ppm_err(reason: impl Into<String>) -> EetError {
    EetError::Format {
        format: "PPM",
        reason: reason.into(),
    }
}
