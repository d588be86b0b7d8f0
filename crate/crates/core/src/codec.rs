//! Flat binary container for trained networks.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    b"KSNT"
//! version  u32                     currently 1
//! kind     u8                      1 = adaptation net, 2 = fusion net
//! meta_len u32, meta               UTF-8 TOML with the non-numeric settings
//! n_nets   u32
//! per net: n_layers u32, then per layer: in u32, out u32, activation u8
//! blocks:  for every net and layer in order, the weight matrix (out x in, row-major f64)
//!          followed by the bias vector (out f64)
//! ```
//!
//! Decoding validates every count against the remaining input before allocating.

use crate::numeric::{Activation, Dense, Matrix, MlpParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KSNT";
pub const VERSION: u32 = 1;
const MAX_NETS: usize = 64;
const MAX_LAYERS: usize = 64;
const MAX_META: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    AdaptNet = 1,
    FusionNet = 2,
}

impl ModelKind {
    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(ModelKind::AdaptNet),
            2 => Some(ModelKind::FusionNet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub meta: String,
    pub nets: Vec<MlpParams>,
}

pub fn encode(file: &ModelFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(file.kind as u8);
    out.extend_from_slice(&(file.meta.len() as u32).to_le_bytes());
    out.extend_from_slice(file.meta.as_bytes());
    out.extend_from_slice(&(file.nets.len() as u32).to_le_bytes());
    for net in &file.nets {
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for l in net.layers() {
            out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
            out.push(l.activation.code());
        }
    }
    for net in &file.nets {
        for l in net.layers() {
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Decode(format!("truncated at byte {} (wanted {n} more)", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Decode("block size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let kind = ModelKind::from_code(r.u8()?).ok_or_else(|| Error::Decode("unknown model kind".into()))?;
    let meta_len = r.u32()?;
    if meta_len > MAX_META {
        return Err(Error::Decode(format!("metadata of {meta_len} bytes is too large")));
    }
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|e| Error::Decode(format!("metadata is not UTF-8: {e}")))?
        .to_string();
    let n_nets = r.u32()?;
    if n_nets > MAX_NETS {
        return Err(Error::Decode(format!("{n_nets} nets exceeds the limit of {MAX_NETS}")));
    }
    let mut shapes = Vec::with_capacity(n_nets);
    let mut total: usize = 0;
    for _ in 0..n_nets {
        let n_layers = r.u32()?;
        if n_layers == 0 || n_layers > MAX_LAYERS {
            return Err(Error::Decode(format!("bad layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (i, o) = (r.u32()?, r.u32()?);
            let act = Activation::from_code(r.u8()?).ok_or_else(|| Error::Decode("unknown activation".into()))?;
            let block = i
                .checked_mul(o)
                .and_then(|w| w.checked_add(o))
                .ok_or_else(|| Error::Decode("layer size overflow".into()))?;
            total = total.checked_add(block).ok_or_else(|| Error::Decode("model size overflow".into()))?;
            layers.push((i, o, act));
        }
        shapes.push(layers);
    }
    if total.checked_mul(8) != Some(r.remaining()) {
        return Err(Error::Decode(format!(
            "parameter blocks need {} bytes, found {}",
            total.saturating_mul(8),
            r.remaining()
        )));
    }
    let mut nets = Vec::with_capacity(n_nets);
    for layers in shapes {
        let mut dense = Vec::with_capacity(layers.len());
        for (i, o, activation) in layers {
            let weight = Matrix::from_vec(o, i, r.f64s(i * o)?).map_err(|e| Error::Decode(e.to_string()))?;
            let bias = r.f64s(o)?;
            if bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Decode("non-finite bias".into()));
            }
            dense.push(Dense { weight, bias, activation });
        }
        nets.push(MlpParams::new(dense).map_err(|e| Error::Decode(e.to_string()))?);
    }
    Ok(ModelFile { kind, meta, nets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn sample() -> ModelFile {
        let mut rng = Rng::new(1);
        ModelFile {
            kind: ModelKind::AdaptNet,
            meta: "lambda = 0.1\n".into(),
            nets: vec![
                MlpParams::init(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap(),
                MlpParams::init(&[2, 2], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap(),
            ],
        }
    }

    #[test]
    fn encodes_and_decodes() {
        let f = sample();
        let bytes = encode(&f);
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(decode(&version).is_err());
        // a NaN in the last bias
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
    }
}
