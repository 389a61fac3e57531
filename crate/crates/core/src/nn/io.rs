//! Flat binary parameter files.
//!
//! ```text
//! "CCE1"                      magic
//! u32                         number of learnable layers
//! per layer:
//!   u32                       node index in the network graph
//!   weight, then bias:
//!     u32 rank, rank x u32    shape
//!     f64 x product(shape)    values
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::params::{LayerParams, Params};
use super::spec::NetworkSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CCE1";

pub fn encode_params(params: &Params) -> Vec<u8> {
    let layers: Vec<(usize, &LayerParams)> = params
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for (id, p) in layers {
        out.extend_from_slice(&(id as u32).to_le_bytes());
        for t in [&p.weight, &p.bias] {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
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

impl Reader<'_> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            format: "CCE1",
            offset: self.pos,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(self.err(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor::new(shape, data))
    }
}

/// Decodes a parameter file and checks it against `net`.
pub fn decode_params(bytes: &[u8], net: &NetworkSpec) -> Result<Params> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected \"CCE1\""));
    }
    let count = r.u32()? as usize;
    let mut layers: Vec<Option<LayerParams>> = vec![None; net.nodes().len()];
    for _ in 0..count {
        let at = r.pos;
        let id = r.u32()? as usize;
        let weight = r.tensor()?;
        let bias = r.tensor()?;
        let expected = net.nodes().get(id).and_then(|n| n.layer.kind.param_shapes());
        match expected {
            Some((w, b)) if w == weight.shape() && b == bias.shape() => {
                layers[id] = Some(LayerParams { weight, bias });
            }
            _ => {
                return Err(Error::Parse {
                    format: "CCE1",
                    offset: at,
                    detail: format!("layer {id} does not match the network"),
                })
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    let params = Params::from_layers(layers);
    if !params.matches(net) {
        return Err(Error::Parse {
            format: "CCE1",
            offset: bytes.len(),
            detail: "file is missing learnable layers".into(),
        });
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &Params) -> Result<()> {
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path, net: &NetworkSpec) -> Result<Params> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{LossKind, NetworkBuilder};
    use crate::rng::Rng;

    fn net() -> NetworkSpec {
        let mut b = NetworkBuilder::new(&[1, 4, 4]);
        let c = b.conv3x3("c", NetworkBuilder::INPUT, 1, 2);
        let d = b.dense("d", c, 32, 2);
        let s = b.softmax("s", d);
        b.build(s, LossKind::CrossEntropy).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = net();
        let p = Params::init(&net, &mut Rng::new(9));
        let bytes = encode_params(&p);
        assert_eq!(&bytes[..4], b"CCE1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        let back = decode_params(&bytes, &net).unwrap();
        assert_eq!(encode_params(&back), bytes);
        assert_eq!(back, p);
    }

    #[test]
    fn truncation_reports_offset() {
        let net = net();
        let bytes = encode_params(&Params::init(&net, &mut Rng::new(9)));
        let err = decode_params(&bytes[..bytes.len() - 3], &net).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset > 8),
            other => panic!("{other}"),
        }
        assert!(matches!(decode_params(b"XXXX", &net), Err(Error::Parse { offset: 0, .. })));
    }
}
