//! Binary checkpoint container.
//!
//! ```text
//! 8 bytes   magic "DVPCKPT1"
//! u32 LE    header length N
//! N bytes   JSON header: generator config plus layer table (name, shape)
//! ...       per layer, weights then biases, f32 little-endian
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generator::{GeneratorConfig, GeneratorParams};
use super::ops::Conv2d;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DVPCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    /// `[out, in, k, k]`
    shape: [usize; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: GeneratorConfig,
    layers: Vec<LayerEntry>,
}

pub fn write_checkpoint(params: &GeneratorParams<f32>, mut w: impl Write) -> std::io::Result<()> {
    let header = Header {
        config: *params.config(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerEntry {
                name: l.name.clone(),
                shape: [l.out_channels, l.in_channels, l.kernel, l.kernel],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for l in params.layers() {
        for v in l.weight.iter().chain(&l.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::CheckpointFormat("truncated parameter data".into()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<GeneratorParams<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CheckpointFormat("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::CheckpointFormat("truncated header length".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::CheckpointFormat("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for entry in header.layers {
        let [out, inp, k, k2] = entry.shape;
        if k != k2 {
            return Err(Error::CheckpointFormat(format!("{}: non-square kernel", entry.name)));
        }
        let weight = read_f32s(&mut r, out * inp * k * k)?;
        let bias = read_f32s(&mut r, out)?;
        layers.push(Conv2d {
            name: entry.name,
            in_channels: inp,
            out_channels: out,
            kernel: k,
            weight,
            bias,
        });
    }
    GeneratorParams::from_layers(header.config, layers)
}

pub fn save_checkpoint(params: &GeneratorParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GeneratorParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}
