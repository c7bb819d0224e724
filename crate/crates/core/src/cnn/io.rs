//! Binary model files.
//!
//! ```text
//! magic     "FSEG"
//! version   u32                       (1)
//! input     u32                       side of each input plane
//! towers    u32
//! slope     f64                       rectifier leak
//! seed      u64                       init seed
//! layers    u32                       2 * towers + 2
//! per layer, in order tower0.conv1, tower0.conv2, tower1.conv1, ..., hidden, output:
//!   kind    u32                       1 = conv, 2 = fully connected
//!   rank    u32
//!   dims    u32 x rank                [out, in, 5, 5] or [out, in]
//!   samples f64 x (prod(dims) + out)  weights, then biases
//! crc       u32                       CRC-32 of every byte after the magic
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::layers::{ConvLayer, FcLayer, KERNEL};
use super::net::{Cnn, Geometry, LayerKind, Params, Tower};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSEG";
pub const VERSION: u32 = 1;

const KIND_CONV: u32 = 1;
const KIND_FC: u32 = 2;

pub fn encode_model(net: &Cnn) -> Vec<u8> {
    let g = net.geometry();
    let mut buf = Vec::with_capacity(16 + 8 * net.param_count() + 64 * (2 * g.towers + 2));
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, g.input as u32);
    put_u32(&mut buf, g.towers as u32);
    buf.extend_from_slice(&net.slope().to_le_bytes());
    buf.extend_from_slice(&net.seed().to_le_bytes());
    let layers = net.params.layers();
    put_u32(&mut buf, layers.len() as u32);
    for l in layers {
        put_u32(&mut buf, if l.kind == LayerKind::Conv { KIND_CONV } else { KIND_FC });
        put_u32(&mut buf, l.dims.len() as u32);
        for &d in &l.dims {
            put_u32(&mut buf, d as u32);
        }
        for v in l.weights.iter().chain(l.biases) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[MAGIC.len()..]);
    put_u32(&mut buf, crc);
    buf
}

pub fn save_model(net: &Cnn, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(net))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Cnn> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(format!("file truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("sample count overflow"))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

struct RawLayer {
    kind: u32,
    dims: Vec<usize>,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

pub fn decode_model(bytes: &[u8]) -> Result<Cnn> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing FSEG magic"));
    }
    let body = &bytes[MAGIC.len()..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let mut r = Reader { bytes: body, pos: 0 };

    let version = r.u32("version")?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let input = r.u32("input side")? as usize;
    let towers = r.u32("tower count")? as usize;
    let slope = f64::from_bits(r.u64("slope")?);
    let seed = r.u64("seed")?;
    let count = r.u32("layer count")? as usize;
    if towers == 0 || count != 2 * towers + 2 {
        return Err(corrupt(format!("{count} layers declared for {towers} towers")));
    }

    let mut raw = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("layer {i}");
        let kind = r.u32(&what)?;
        let rank = r.u32(&what)? as usize;
        if rank > 4 {
            return Err(corrupt(format!("layer {i}: rank {rank} is not a layer shape")));
        }
        let dims = (0..rank).map(|_| r.u32(&what).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let weights = r.f64s(n, &what)?;
        let biases = r.f64s(dims.first().copied().unwrap_or(0), &what)?;
        raw.push(RawLayer { kind, dims, weights, biases });
    }
    if r.pos != body.len() {
        return Err(corrupt(format!("{} trailing bytes after the last layer", body.len() - r.pos)));
    }
    if crc32fast::hash(body) != stored_crc {
        return Err(corrupt("checksum mismatch"));
    }

    let first = &raw[0];
    let conv_dims = |l: &RawLayer| -> Option<(usize, usize)> {
        (l.kind == KIND_CONV && l.dims.len() == 4 && l.dims[2] == KERNEL && l.dims[3] == KERNEL).then(|| (l.dims[0], l.dims[1]))
    };
    let (maps1, _) = conv_dims(first).ok_or_else(|| corrupt("layer 0 (tower0.conv1): not a 5x5 convolution"))?;
    let (maps2, _) = conv_dims(&raw[1]).ok_or_else(|| corrupt("layer 1 (tower0.conv2): not a 5x5 convolution"))?;
    let hidden_out = raw[count - 2].dims.first().copied().unwrap_or(0);
    let classes = raw[count - 1].dims.first().copied().unwrap_or(0);
    let geometry = Geometry {
        input,
        towers,
        maps1,
        maps2,
        hidden: hidden_out,
        classes,
    };
    geometry.validate().map_err(|e| corrupt(format!("declared geometry is unusable: {e}")))?;
    if !(slope > 0.0 && slope < 1.0) {
        return Err(corrupt(format!("rectifier slope {slope} out of range")));
    }

    let expected = Params::zeros(&geometry);
    let names: Vec<(String, LayerKind, Vec<usize>)> =
        expected.layers().into_iter().map(|l| (l.name, l.kind, l.dims)).collect();
    for (i, (l, (name, kind, dims))) in raw.iter().zip(&names).enumerate() {
        let want_kind = if *kind == LayerKind::Conv { KIND_CONV } else { KIND_FC };
        if l.kind != want_kind {
            return Err(corrupt(format!("layer {i} ({name}): kind tag {} where {want_kind} expected", l.kind)));
        }
        if &l.dims != dims {
            return Err(corrupt(format!("layer {i} ({name}): declared dims {:?}, wiring requires {dims:?}", l.dims)));
        }
        if let Some(j) = l.weights.iter().chain(&l.biases).position(|v| !v.is_finite()) {
            return Err(corrupt(format!("layer {i} ({name}): sample {j} is not finite")));
        }
    }

    let mut it = raw.into_iter();
    let conv = |l: RawLayer| ConvLayer {
        out_maps: l.dims[0],
        in_depth: l.dims[1],
        kernels: l.weights,
        biases: l.biases,
    };
    let mut tower_list = Vec::with_capacity(towers);
    for _ in 0..towers {
        let c1 = conv(it.next().unwrap());
        let c2 = conv(it.next().unwrap());
        tower_list.push(Tower { conv1: c1, conv2: c2 });
    }
    let fc = |l: RawLayer| FcLayer {
        outputs: l.dims[0],
        inputs: l.dims[1],
        weights: l.weights,
        biases: l.biases,
    };
    let hidden = fc(it.next().unwrap());
    let output = fc(it.next().unwrap());
    Ok(Cnn::from_parts(
        geometry,
        slope,
        seed,
        Params {
            towers: tower_list,
            hidden,
            output,
        },
    ))
}
