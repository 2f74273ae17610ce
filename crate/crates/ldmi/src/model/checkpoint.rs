use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::params::{Hyper, ModelParams};

const MAGIC: &[u8; 4] = b"LDMI";
const SCHEMA_VERSION: u32 = 1;

/// Binary checkpoint: magic, schema version, (d, K, N, R) as u32, tau as f64,
/// then the parameter blocks row-major little-endian in a fixed order.
/// Save/load round trips are bit-exact.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        SCHEMA_VERSION,
        params.hyper.dim as u32,
        params.hyper.interests as u32,
        params.n_items() as u32,
        params.hyper.routing_iters as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&params.hyper.tau.to_le_bytes());
    let blocks: [&[f64]; 4] = [
        params.item_embeddings.as_slice().expect("standard layout"),
        params.capsule_w.as_slice().expect("standard layout"),
        params.align_w.as_slice().expect("standard layout"),
        params.attn_w.as_slice().expect("standard layout"),
    ];
    for block in blocks {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&params.attn_b.to_le_bytes());
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(".tmp.ckpt.{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.into(),
        reason: reason.into(),
    };
    if bytes.len() < 4 + 5 * 4 + 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut off = 4;
    let mut read_u32 = || -> u32 {
        let v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        off += 4;
        v
    };
    let version = read_u32();
    let dim = read_u32() as usize;
    let interests = read_u32() as usize;
    let n_items = read_u32() as usize;
    let routing_iters = read_u32() as usize;
    if version != SCHEMA_VERSION {
        return Err(bad("unsupported schema version"));
    }
    let tau = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let mut off = off + 8;
    let n_floats = n_items * dim + dim * dim + dim * dim + dim + 1;
    if bytes.len() != off + n_floats * 8 {
        return Err(bad("truncated checkpoint"));
    }
    let mut read_block = |len: usize| -> Vec<f64> {
        let out = bytes[off..off + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += len * 8;
        out
    };
    let item_embeddings =
        Array2::from_shape_vec((n_items, dim), read_block(n_items * dim)).unwrap();
    let capsule_w = Array2::from_shape_vec((dim, dim), read_block(dim * dim)).unwrap();
    let align_w = Array2::from_shape_vec((dim, dim), read_block(dim * dim)).unwrap();
    let attn_w = Array1::from_vec(read_block(dim));
    let attn_b = read_block(1)[0];
    Ok(ModelParams {
        item_embeddings,
        capsule_w,
        align_w,
        attn_w,
        attn_b,
        hyper: Hyper {
            dim,
            interests,
            routing_iters,
            tau,
        },
    })
}
