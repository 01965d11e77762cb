//! Binary checkpoint format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "VIIN" | version u32 | config length u32 | config text (UTF-8)
//! | SHA-256 of the config (32 bytes) | iteration u64 | Adam step u64
//! | array count u32 | arrays
//! ```
//!
//! Each array is `rank u32 | dims u64 × rank | f32 × product(dims)`. Arrays
//! appear in the order: layer weights and biases, code table, Adam first
//! moments per group, Adam second moments per group.

use crate::error::{CheckpointError, Error, Result};
use crate::latent::CodeTable;
use crate::model::{DenseLayer, InrNetwork, COORD_DIMS};
use crate::tensor::Tensor;
use crate::train::{derived_seed, stream, AdamState, Checkpoint, TrainConfig};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"VIIN";
pub const FORMAT_VERSION: u32 = 1;

fn put_array(out: &mut Vec<u8>, shape: &[usize], data: &[f32]) {
    out.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend((d as u64).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let text = ckpt.config.to_text();
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((text.len() as u32).to_le_bytes());
    out.extend(text.as_bytes());
    out.extend(ckpt.config.hash());
    out.extend(ckpt.iteration.to_le_bytes());
    out.extend(ckpt.adam.step.to_le_bytes());
    let layers = ckpt.net.layers();
    let count = 2 * layers.len() + 1 + ckpt.adam.m.len() + ckpt.adam.v.len();
    out.extend((count as u32).to_le_bytes());
    for layer in layers {
        put_array(&mut out, layer.weight.shape(), layer.weight.data());
        put_array(&mut out, layer.bias.shape(), layer.bias.data());
    }
    let codes = ckpt.codes.as_tensor();
    put_array(&mut out, codes.shape(), codes.data());
    for moment in ckpt.adam.m.iter().chain(&ckpt.adam.v) {
        put_array(&mut out, &[moment.len()], moment);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn array(&mut self) -> Result<Tensor<f32>, CheckpointError> {
        let rank = self.u32("array header")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("array rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let d = self.u64("array header")? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| CheckpointError::Malformed("array size overflows".into()))?;
            shape.push(d);
        }
        let bytes_len = len
            .checked_mul(4)
            .ok_or_else(|| CheckpointError::Malformed("array size overflows".into()))?;
        let raw = self.take(bytes_len, "array data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let text_len = cur.u32("config")? as usize;
    let text = std::str::from_utf8(cur.take(text_len, "config")?)
        .map_err(|_| CheckpointError::Malformed("config is not UTF-8".into()))?;
    let config = TrainConfig::from_text(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let hash = cur.take(32, "config hash")?;
    if hash != config.hash() {
        return Err(CheckpointError::ConfigHash.into());
    }
    let iteration = cur.u64("iteration")?;
    let step = cur.u64("optimizer step")?;
    let count = cur.u32("array count")? as usize;
    let n_layers = config.depth + 1;
    let n_groups = 2 * n_layers + 1;
    if count != 2 * n_layers + 1 + 2 * n_groups {
        return Err(CheckpointError::Malformed(format!("{count} arrays for a {n_layers}-layer network")).into());
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let weight = cur.array()?;
        let bias = cur.array()?;
        layers.push(DenseLayer { weight, bias });
    }
    let net = InrNetwork::from_layers(layers, config.w0, config.w0)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if net.in_dim() != COORD_DIMS + config.code_len || net.out_dim() != 3 || net.hidden_dim() != config.hidden_dim {
        return Err(CheckpointError::Malformed("network shape disagrees with the config".into()).into());
    }
    let codes = cur.array()?;
    if codes.shape().len() != 2 || codes.shape()[1] != config.code_len {
        return Err(CheckpointError::Malformed(format!("code table shape {:?}", codes.shape())).into());
    }
    let codes = CodeTable::from_tensor(codes, config.norm_mode, derived_seed(config.seed, stream::CODES))?;
    let mut sizes: Vec<usize> = net.layers().iter().flat_map(|l| [l.weight.len(), l.bias.len()]).collect();
    sizes.push(codes.as_tensor().len());
    let mut moments = Vec::with_capacity(2 * n_groups);
    for k in 0..2 * n_groups {
        let a = cur.array()?;
        if a.shape() != [sizes[k % n_groups]] {
            return Err(CheckpointError::Malformed(format!("optimizer moment {k} has shape {:?}", a.shape())).into());
        }
        moments.push(a.into_data());
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - cur.pos)).into());
    }
    let v = moments.split_off(n_groups);
    Ok(Checkpoint {
        config,
        net,
        codes,
        adam: AdamState { m: moments, v, step },
        iteration,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Trainer;
    use crate::{Image, ImageSet};

    fn trained() -> Checkpoint {
        let cfg = TrainConfig {
            iterations: 3,
            batch_pixels: 8,
            code_len: 3,
            hidden_dim: 6,
            depth: 2,
            ..TrainConfig::default()
        };
        let set = ImageSet::new((0..2).map(|k| Image::filled(4, 4, [0.2 * k as f32, 0.5, 0.7])).collect()).unwrap();
        let mut t = Trainer::new(set, &cfg).unwrap();
        t.run(|_, _| Ok(())).unwrap();
        t.into_checkpoint()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = trained();
        let bytes = encode_checkpoint(&ckpt);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let bytes = encode_checkpoint(&trained());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic(_)))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Checkpoint(CheckpointError::Version { found: 9, .. }))
        ));
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(CheckpointError::Truncated(_)))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn tampered_config_fails_the_hash() {
        let bytes = encode_checkpoint(&trained());
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("seed = 0").unwrap() + "seed = ".len();
        let mut bad = bytes.clone();
        bad[at] = b'7';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(CheckpointError::ConfigHash))));
    }
}
