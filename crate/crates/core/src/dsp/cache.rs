//! Binary feature cache: `"DKDF"`, u16 version, u32 segment count, then per
//! segment u16 frames, u16 bins, u32 label, u32 id length, UTF-8 id and
//! `frames × bins` f32 values. All integers and floats little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FeatureSegment;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"DKDF";
pub const CACHE_VERSION: u16 = 1;

pub fn write_cache_to<W: Write>(mut w: W, segments: &[FeatureSegment]) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    let count = u32::try_from(segments.len()).map_err(|_| Error::Format("too many segments".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for s in segments {
        let frames = u16::try_from(s.n_frames).map_err(|_| Error::Format("frame count overflows u16".into()))?;
        let bins = u16::try_from(s.n_bins).map_err(|_| Error::Format("bin count overflows u16".into()))?;
        w.write_all(&frames.to_le_bytes())?;
        w.write_all(&bins.to_le_bytes())?;
        w.write_all(&(s.label as u32).to_le_bytes())?;
        let id = s.utterance_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        for &v in &s.frames {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_cache(path: &Path, segments: &[FeatureSegment]) -> Result<()> {
    write_cache_to(BufWriter::new(File::create(path)?), segments)
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated feature cache: {e}")))?;
    Ok(buf)
}

/// Reads segments back; `segment_index` is reassigned by order of appearance
/// within each utterance.
pub fn read_cache_from<R: Read>(mut r: R) -> Result<Vec<FeatureSegment>> {
    if &take::<4, _>(&mut r)? != CACHE_MAGIC {
        return Err(Error::Format("not a feature cache (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported feature cache version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n_frames = u16::from_le_bytes(take(&mut r)?) as usize;
        let n_bins = u16::from_le_bytes(take(&mut r)?) as usize;
        let label = u32::from_le_bytes(take(&mut r)?) as usize;
        let id_len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)
            .map_err(|e| Error::Format(format!("truncated feature cache: {e}")))?;
        let utterance_id =
            String::from_utf8(id).map_err(|_| Error::Format("utterance id is not UTF-8".into()))?;
        let mut frames = Vec::with_capacity(n_frames * n_bins);
        for _ in 0..n_frames * n_bins {
            frames.push(f32::from_le_bytes(take(&mut r)?) as f64);
        }
        let idx = seen.entry(utterance_id.clone()).or_insert(0);
        let segment_index = *idx;
        *idx += 1;
        out.push(FeatureSegment { frames, n_frames, n_bins, utterance_id, label, segment_index });
    }
    Ok(out)
}

pub fn read_cache(path: &Path) -> Result<Vec<FeatureSegment>> {
    read_cache_from(BufReader::new(File::open(path)?))
}
