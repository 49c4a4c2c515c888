//! TEXMEX `.fvecs` / `.bvecs` / `.ivecs` readers and writers, plus a small
//! versioned binary dump of a built index.
//!
//! Each TEXMEX row is a little-endian `i32` dimension followed by that many
//! components (`f32`, `u8` or `i32`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::ClusterIndex;
use crate::vector::VectorBatch;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

fn parse_rows(bytes: &[u8], elem_size: usize, limit: Option<usize>) -> Result<(usize, Vec<&[u8]>)> {
    let mut rows = Vec::new();
    let mut dim = None;
    let mut off = 0;
    while off < bytes.len() && limit.is_none_or(|l| rows.len() < l) {
        if off + 4 > bytes.len() {
            return Err(Error::Format(format!("truncated row header at byte {off}")));
        }
        let d = i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if d <= 0 {
            return Err(Error::Format(format!(
                "non-positive dimension {d} at byte {off}"
            )));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Format(format!(
                    "row {} has dimension {d}, expected {prev}",
                    rows.len()
                )))
            }
            _ => {}
        }
        off += 4;
        let end = off + d * elem_size;
        if end > bytes.len() {
            return Err(Error::Format(format!("truncated row {}", rows.len())));
        }
        rows.push(&bytes[off..end]);
        off = end;
    }
    Ok((dim.unwrap_or(0), rows))
}

fn batch_from(dim: usize, data: Vec<f32>) -> Result<VectorBatch> {
    if dim == 0 {
        return Err(Error::EmptyDataset);
    }
    VectorBatch::with_sequential_ids(dim, data)
}

/// Reads an `.fvecs` file; ids are row numbers. `limit` caps the row count.
pub fn read_fvecs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<VectorBatch> {
    let bytes = read_all(path.as_ref())?;
    let (dim, rows) = parse_rows(&bytes, 4, limit)?;
    let data = rows
        .iter()
        .flat_map(|r| r.chunks_exact(4))
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    batch_from(dim, data)
}

/// Reads a `.bvecs` file, widening each byte to `f32`.
pub fn read_bvecs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<VectorBatch> {
    let bytes = read_all(path.as_ref())?;
    let (dim, rows) = parse_rows(&bytes, 1, limit)?;
    let data = rows
        .iter()
        .flat_map(|r| r.iter().map(|&b| b as f32))
        .collect();
    batch_from(dim, data)
}

pub fn read_ivecs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<Vec<i32>>> {
    let bytes = read_all(path.as_ref())?;
    let (_, rows) = parse_rows(&bytes, 4, limit)?;
    Ok(rows
        .iter()
        .map(|r| {
            r.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect())
}

/// Dispatches on the file extension (`fvecs` or `bvecs`).
pub fn read_vectors(path: impl AsRef<Path>, limit: Option<usize>) -> Result<VectorBatch> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("fvecs") => read_fvecs(path, limit),
        Some("bvecs") => read_bvecs(path, limit),
        _ => Err(Error::Format(format!(
            "{}: expected a .fvecs or .bvecs file",
            path.display()
        ))),
    }
}

pub fn write_fvecs(path: impl AsRef<Path>, batch: &VectorBatch) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = batch.dim() as i32;
    for (_, row) in batch.iter() {
        w.write_all(&d.to_le_bytes())?;
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of `u8`; components must already be integral in `0..=255`.
pub fn write_bvecs(path: impl AsRef<Path>, batch: &VectorBatch) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = batch.dim() as i32;
    for (id, row) in batch.iter() {
        w.write_all(&d.to_le_bytes())?;
        for &x in row {
            if !(0.0..=255.0).contains(&x) || x.fract() != 0.0 {
                return Err(Error::Format(format!(
                    "vector {id} component {x} does not fit in a byte"
                )));
            }
            w.write_all(&[x as u8])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

const INDEX_MAGIC: &[u8; 8] = b"GRIDIVF\0";
const INDEX_VERSION: u32 = 1;

/// Serializes the centroids, inverted lists and base vectors.
///
/// Layout (little-endian): magic, `u32` version, `u32` dim, `u32` nlist,
/// `u64` base count, centroids (`nlist * dim` `f32`), per list a `u32`
/// length and its `u64` ids, then base ids (`u64`) and base data (`f32`).
pub fn encode_index(index: &ClusterIndex, base: &VectorBatch) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(index.nlist() as u32).to_le_bytes());
    out.extend_from_slice(&(base.count() as u64).to_le_bytes());
    for x in index.centroids().data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for list in index.lists() {
        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for id in list {
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    for id in base.ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for x in base.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("index dump is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Format("size overflow".into()))?,
            )?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_index(bytes: &[u8]) -> Result<(ClusterIndex, VectorBatch)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != INDEX_MAGIC {
        return Err(Error::Format("not an index dump (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::Format(format!(
            "unsupported index version {version}"
        )));
    }
    let dim = c.u32()? as usize;
    let nlist = c.u32()? as usize;
    let count = c.u64()? as usize;
    let centroids = VectorBatch::with_sequential_ids(dim, c.f32s(nlist * dim)?)?;
    let mut lists = Vec::with_capacity(nlist);
    for _ in 0..nlist {
        let len = c.u32()? as usize;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            list.push(c.u64()?);
        }
        lists.push(list);
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(c.u64()?);
    }
    let data = c.f32s(count * dim)?;
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after index dump".into()));
    }
    let base = VectorBatch::new(dim, data, ids)?;
    let index = ClusterIndex::from_parts(centroids, lists)?;
    if index.total_assigned() != base.count() {
        return Err(Error::Format("inverted lists do not cover the base".into()));
    }
    Ok((index, base))
}

pub fn save_index(path: impl AsRef<Path>, index: &ClusterIndex, base: &VectorBatch) -> Result<()> {
    std::fs::write(path, encode_index(index, base))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<(ClusterIndex, VectorBatch)> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::MissingIndex(format!("{}: {e}", path.display())))?;
    decode_index(&bytes)
}
