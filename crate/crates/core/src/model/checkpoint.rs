//! Model checkpoint file.
//!
//! Layout (little-endian): magic `PLCKPT01`, `u32` header length, a JSON
//! header (model config and shape, so layer widths, class count, table count
//! and lookback are all recoverable), `u64` weight count, the weights as
//! `f32` in declaration order, then a CRC32 of every preceding byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, ModelShape, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PLCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    shape: ModelShape,
    blocks: Vec<(String, usize)>,
}

pub fn checkpoint_bytes(net: &Network) -> Vec<u8> {
    let header = Header {
        config: net.cfg.clone(),
        shape: net.shape,
        blocks: net.layout().blocks().into_iter().map(|(n, r)| (n, r.len())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + 4 + json.len() + 8 + 4 * net.params.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// CRC32 stored in the trailer of a checkpoint.
pub fn checkpoint_crc(net: &Network) -> u32 {
    let b = checkpoint_bytes(net);
    u32::from_le_bytes(b[b.len() - 4..].try_into().expect("4 bytes"))
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net))?;
    Ok(())
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<Network> {
    let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < 8 + 4 + 8 + 4 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12 + hlen;
    if body.len() < header_end + 8 {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[12..header_end]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
    let n = u64::from_le_bytes(body[header_end..header_end + 8].try_into().expect("8 bytes")) as usize;
    let weights = &body[header_end + 8..];
    if weights.len() != 4 * n {
        return Err(corrupt("weight section length does not match header"));
    }
    let params = weights.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Network::from_params(header.config, header.shape, params)
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    parse_checkpoint(&std::fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        let cfg = ModelConfig {
            hidden: 4,
            merge: 6,
            emb_result: 3,
            emb_stmt: 3,
            emb_delta: 3,
            seed: 9,
            ..Default::default()
        };
        Network::new(cfg, ModelShape { tables: 2, enc_dim: 3, classes: 5 })
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let net = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.cfg, net.cfg);
        assert_eq!(back.shape, net.shape);
        for (a, b) in net.params.iter().zip(&back.params) {
            assert_eq!(*a as f32, *b as f32);
        }
        // a reloaded network saves byte-identically
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&net));
    }

    #[test]
    fn flipped_byte_detected() {
        let net = small();
        let mut b = checkpoint_bytes(&net);
        let mid = b.len() / 2;
        b[mid] ^= 0x40;
        assert!(matches!(parse_checkpoint(&b, Path::new("x")), Err(Error::Corrupt { .. })));
        assert!(parse_checkpoint(b"nonsense", Path::new("x")).is_err());
    }

    #[test]
    fn same_seed_same_crc() {
        assert_eq!(checkpoint_crc(&small()), checkpoint_crc(&small()));
    }
}
