//! Checkpoint layout, little-endian: `"DKDM"`, u16 version, config block
//! (u32 branch channels, u8 stage count + u32 per stage, u32 heads, u8
//! fusion code, u8 attention flag, u32 bins, u32 classes, u64 seed), u32
//! tensor count, then per tensor u32 name length, UTF-8 name, u8 rank, u32
//! dims and f64 values. Running batch-norm statistics are stored as tensors
//! named `<layer>.running_mean` / `<layer>.running_var`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, NetworkParams};
use crate::autodiff::HeadFusion;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DKDM";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} overflows u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        put_u32(w, d)?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &NetworkParams) -> Result<()> {
    let c = &net.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u32(&mut w, c.branch_channels)?;
    w.write_all(&[c.stage_channels.len() as u8])?;
    for &s in &c.stage_channels {
        put_u32(&mut w, s)?;
    }
    put_u32(&mut w, c.heads)?;
    w.write_all(&[c.fusion.code(), c.attention as u8])?;
    put_u32(&mut w, c.n_bins)?;
    put_u32(&mut w, c.n_classes)?;
    w.write_all(&net.seed.to_le_bytes())?;
    put_u32(&mut w, net.params.len() + 2 * net.bn_stats.len())?;
    for p in &net.params {
        put_tensor(&mut w, &p.name, p.tensor.shape(), p.tensor.data())?;
    }
    for (name, s) in &net.bn_stats {
        put_tensor(&mut w, &format!("{name}.running_mean"), &[s.mean.len()], &s.mean)?;
        put_tensor(&mut w, &format!("{name}.running_var"), &[s.var.len()], &s.var)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, net: &NetworkParams) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), net)
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = self.u32()?;
        let mut name = vec![0u8; len];
        self.0
            .read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| Ok(f64::from_le_bytes(self.bytes()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok((name, shape, data))
    }
}

/// Reads a checkpoint, rejecting any tensor whose name or shape differs from
/// what the stored config implies.
pub fn read_checkpoint<R: Read>(r: R) -> Result<NetworkParams> {
    let mut r = Reader(r);
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let branch_channels = r.u32()?;
    let stages = r.u8()? as usize;
    let stage_channels = (0..stages).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let heads = r.u32()?;
    let fusion_code = r.u8()?;
    let fusion = HeadFusion::from_code(fusion_code)
        .ok_or_else(|| Error::Format(format!("unknown head fusion code {fusion_code}")))?;
    let attention = r.u8()? != 0;
    let n_bins = r.u32()?;
    let n_classes = r.u32()?;
    let seed = u64::from_le_bytes(r.bytes()?);
    let config = ModelConfig { branch_channels, stage_channels, heads, fusion, attention, n_bins, n_classes };
    config.validate()?;
    let mut net = NetworkParams::init(&config, seed)?;

    let count = r.u32()?;
    let expected = net.params.len() + 2 * net.bn_stats.len();
    if count != expected {
        return Err(Error::Shape(format!("checkpoint holds {count} tensors, config implies {expected}")));
    }
    for p in &mut net.params {
        let (name, shape, data) = r.tensor()?;
        if name != p.name || shape != p.tensor.shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {name} {shape:?} does not match {} {:?}",
                p.name,
                p.tensor.shape()
            )));
        }
        p.tensor = Tensor::new(&shape, data)?;
    }
    for (layer, stats) in &mut net.bn_stats {
        for (suffix, slot) in [("running_mean", &mut stats.mean), ("running_var", &mut stats.var)] {
            let (name, shape, data) = r.tensor()?;
            let want = format!("{layer}.{suffix}");
            if name != want || shape != [slot.len()] {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {name} {shape:?} does not match {want} [{}]",
                    slot.len()
                )));
            }
            *slot = data;
        }
    }
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
