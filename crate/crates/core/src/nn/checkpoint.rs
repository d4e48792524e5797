//! Network checkpoint container (`.cnet`).
//!
//! ```text
//! magic  "CNET"
//! u16le  version (currently 1)
//! u32le  in_channels, u32le base_width, u32le depth, u64le seed
//! u32le  parameter count
//! per parameter:
//!   u16le name length, utf-8 name
//!   u8    ndim, u32le dims[ndim]
//!   f32le data[len]
//! u8     optimizer-state flag
//! if set:
//!   f64le lr, beta1, beta2, eps; u64le t
//!   f32le m[total], v[total]   (flat, in parameter order)
//! ```
//!
//! Saving is deterministic: identical networks and optimizer states produce
//! byte-identical files.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{AdamState, NetConfig, UNet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNET";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Net(#[from] super::NnError),
}

pub fn save<W: Write>(
    net: &UNet,
    adam: Option<&AdamState>,
    mut w: W,
) -> Result<(), CheckpointError> {
    let cfg = net.config();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(cfg.in_channels as u32).to_le_bytes())?;
    w.write_all(&(cfg.base_width as u32).to_le_bytes())?;
    w.write_all(&(cfg.depth as u32).to_le_bytes())?;
    w.write_all(&cfg.seed.to_le_bytes())?;
    let metas = net.params().metas();
    w.write_all(&(metas.len() as u32).to_le_bytes())?;
    for (id, meta) in metas.iter().enumerate() {
        let name = meta.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[meta.shape.len() as u8])?;
        for &d in &meta.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in net.params().slice(id) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match adam {
        None => w.write_all(&[0u8])?,
        Some(state) => {
            if state.m.len() != net.params().len() {
                return Err(CheckpointError::Corrupt(format!(
                    "optimizer state holds {} values, network has {}",
                    state.m.len(),
                    net.params().len()
                )));
            }
            w.write_all(&[1u8])?;
            for scalar in [state.lr, state.beta1, state.beta2, state.eps] {
                w.write_all(&scalar.to_le_bytes())?;
            }
            w.write_all(&state.t.to_le_bytes())?;
            for &v in &state.m {
                w.write_all(&v.to_le_bytes())?;
            }
            for &v in &state.v {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn save_file<P: AsRef<Path>>(
    net: &UNet,
    adam: Option<&AdamState>,
    path: P,
) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    save(net, adam, std::io::BufWriter::new(file))
}

pub fn load<R: Read>(mut r: R) -> Result<(UNet, Option<AdamState>), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Corrupt("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u16(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config = NetConfig {
        in_channels: read_u32(&mut r)? as usize,
        base_width: read_u32(&mut r)? as usize,
        depth: read_u32(&mut r)? as usize,
        seed: read_u64(&mut r)?,
    };
    let mut net = UNet::build_structure(&config)?;
    let count = read_u32(&mut r)? as usize;
    if count != net.params().metas().len() {
        return Err(CheckpointError::Corrupt(format!(
            "expected {} parameter grids for this config, file has {count}",
            net.params().metas().len()
        )));
    }
    for id in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| CheckpointError::Corrupt("truncated name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("parameter name is not utf-8".into()))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(|_| CheckpointError::Corrupt("truncated shape".into()))?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        {
            let meta = &net.params().metas()[id];
            if meta.name != name || meta.shape != shape {
                return Err(CheckpointError::Corrupt(format!(
                    "parameter {id}: file has {name} {shape:?}, config implies {} {:?}",
                    meta.name, meta.shape
                )));
            }
        }
        let len = net.params().metas()[id].len;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| CheckpointError::Corrupt(format!("truncated data for {name}")))?;
        for (dst, chunk) in net.params_mut().slice_mut(id).iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)
        .map_err(|_| CheckpointError::Corrupt("truncated optimizer flag".into()))?;
    let adam = match flag[0] {
        0 => None,
        1 => {
            let lr = read_f64(&mut r)?;
            let beta1 = read_f64(&mut r)?;
            let beta2 = read_f64(&mut r)?;
            let eps = read_f64(&mut r)?;
            let t = read_u64(&mut r)?;
            let total = net.params().len();
            let read_grid = |r: &mut R| -> Result<Vec<f32>, CheckpointError> {
                let mut bytes = vec![0u8; total * 4];
                r.read_exact(&mut bytes)
                    .map_err(|_| CheckpointError::Corrupt("truncated optimizer state".into()))?;
                Ok(bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect())
            };
            let m = read_grid(&mut r)?;
            let v = read_grid(&mut r)?;
            Some(AdamState { lr, beta1, beta2, eps, t, m, v })
        }
        other => {
            return Err(CheckpointError::Corrupt(format!("unknown optimizer flag {other}")));
        }
    };
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok((net, adam))
}

pub fn load_file<P: AsRef<Path>>(path: P) -> Result<(UNet, Option<AdamState>), CheckpointError> {
    let file = std::fs::File::open(path)?;
    load(std::io::BufReader::new(file))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|_| CheckpointError::Corrupt("truncated u16".into()))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| CheckpointError::Corrupt("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| CheckpointError::Corrupt("truncated u64".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| CheckpointError::Corrupt("truncated f64".into()))?;
    Ok(f64::from_le_bytes(b))
}
