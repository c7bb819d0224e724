//! Binary 8-bit PPM (P6) and PGM (P5) rasters.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{Image, LabelMap, Mask};

/// Raw decoded raster: interleaved 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn bad(msg: impl Into<String>) -> String {
    msg.into()
}

/// Parse a P5 or P6 file held in memory.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Pnm, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("not a binary PGM (P5) or PPM (P6) file")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header field"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(format!("empty raster {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("only 8-bit rasters are supported, maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after header"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("raster too large"))?;
    let data = bytes.get(pos..pos + n).ok_or_else(|| bad(format!("expected {n} sample bytes, file is truncated")))?;
    let data = if maxval == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&v| ((v.min(maxval as u8) as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Ok(Pnm {
        width,
        height,
        channels,
        data,
    })
}

pub fn encode_pnm(p: &Pnm) -> Vec<u8> {
    let magic = if p.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", p.width, p.height).into_bytes();
    out.extend_from_slice(&p.data);
    out
}

fn load_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_pnm(path: impl AsRef<Path>, channels: usize) -> Result<Pnm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| load_error(path, e.to_string()))?;
    let p = decode_pnm(&bytes).map_err(|r| load_error(path, r))?;
    if p.channels != channels {
        let want = if channels == 3 { "a PPM (P6)" } else { "a PGM (P5)" };
        return Err(load_error(path, format!("expected {want} file")));
    }
    Ok(p)
}

/// Colour image with samples scaled to [0, 1].
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let p = read_pnm(path, 3)?;
    let n = p.width * p.height;
    let mut samples = vec![0.0; 3 * n];
    for (i, px) in p.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            samples[c * n + i] = px[c] as f64 / 255.0;
        }
    }
    Image::new(p.width, p.height, 3, samples)
}

/// Write a 3-channel image, clamping to [0, 1] and rounding to 8 bits.
pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    img.require_channels(3, "write_ppm")?;
    let n = img.width() * img.height();
    let mut data = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            data.push(to_byte(img.plane(c)[i]));
        }
    }
    let p = Pnm {
        width: img.width(),
        height: img.height(),
        channels: 3,
        data,
    };
    fs::write(path, encode_pnm(&p))?;
    Ok(())
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pnm> {
    read_pnm(path, 1)
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let p = Pnm {
        width,
        height,
        channels: 1,
        data: data.to_vec(),
    };
    fs::write(path, encode_pnm(&p))?;
    Ok(())
}

/// Any nonzero sample is an effective point.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let p = read_pgm(path)?;
    Mask::new(p.width, p.height, p.data.iter().map(|&v| v != 0).collect())
}

/// Effective points as 255, the rest as 0.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let data: Vec<u8> = mask.flags().iter().map(|&f| if f { 255 } else { 0 }).collect();
    write_pgm(path, mask.width(), mask.height(), &data)
}

/// Label PGM holding raw class ids.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let p = read_pgm(path)?;
    LabelMap::from_ids(p.width, p.height, &p.data).map_err(|e| load_error(path, e.to_string()))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_pgm(path, labels.width(), labels.height(), &labels.ids())
}
