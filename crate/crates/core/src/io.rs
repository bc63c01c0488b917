//! Reading and writing the texmex vector formats.
//!
//! Every record is a little-endian `i32` length `d` followed by `d` values:
//! `f32` for fvecs, `u8` for bvecs and `i32` for ivecs. All records in a file
//! share the same `d`.

use std::fs;
use std::path::Path;

use crate::dataset::{GroundTruth, VectorDataset, VectorId};
use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits a texmex buffer into `(d, payload)` records with `elem` bytes per value.
fn parse_records(bytes: &[u8], elem: usize) -> Result<(usize, Vec<&[u8]>)> {
    let mut records = Vec::new();
    let mut dim = None;
    let mut pos = 0;
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::format(format!("truncated record header at byte {pos}")))?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(Error::format(format!(
                "non-positive dimension {d} in record {}",
                records.len()
            )));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::format(format!(
                    "record {} has dimension {d}, expected {expected}",
                    records.len()
                )))
            }
            Some(_) => {}
        }
        pos += 4;
        let end = pos + d * elem;
        let payload = bytes.get(pos..end).ok_or_else(|| {
            Error::format(format!(
                "truncated record {}: need {} bytes, {} remain",
                records.len(),
                d * elem,
                bytes.len() - pos
            ))
        })?;
        records.push(payload);
        pos = end;
    }
    let dim = dim.ok_or_else(|| Error::format("file contains no records"))?;
    Ok((dim, records))
}

fn dim_header(dim: usize) -> Result<[u8; 4]> {
    i32::try_from(dim)
        .map(i32::to_le_bytes)
        .map_err(|_| Error::invalid(format!("dimension {dim} does not fit a record header")))
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorDataset> {
    let (dim, records) = parse_records(bytes, 4)?;
    let mut data = Vec::with_capacity(dim * records.len());
    for rec in records {
        data.extend(
            rec.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
    }
    VectorDataset::new(dim, data)
}

pub fn encode_fvecs(dataset: &VectorDataset) -> Result<Vec<u8>> {
    let header = dim_header(dataset.dim())?;
    let mut out = Vec::with_capacity(dataset.len() * (4 + 4 * dataset.dim()));
    for row in dataset.rows() {
        out.extend_from_slice(&header);
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Bytes widen to `f32`.
pub fn parse_bvecs(bytes: &[u8]) -> Result<VectorDataset> {
    let (dim, records) = parse_records(bytes, 1)?;
    let mut data = Vec::with_capacity(dim * records.len());
    for rec in records {
        data.extend(rec.iter().map(|&b| b as f32));
    }
    VectorDataset::new(dim, data)
}

/// Fails unless every component is an integer in `0..=255`.
pub fn encode_bvecs(dataset: &VectorDataset) -> Result<Vec<u8>> {
    let header = dim_header(dataset.dim())?;
    let mut out = Vec::with_capacity(dataset.len() * (4 + dataset.dim()));
    for (i, row) in dataset.rows().enumerate() {
        out.extend_from_slice(&header);
        for &x in row {
            if !(0.0..=255.0).contains(&x) || x.fract() != 0.0 {
                return Err(Error::format(format!(
                    "vector {i} component {x} is not representable as a byte"
                )));
            }
            out.push(x as u8);
        }
    }
    Ok(out)
}

pub fn parse_ivecs(bytes: &[u8]) -> Result<GroundTruth> {
    let (_, records) = parse_records(bytes, 4)?;
    let mut rows = Vec::with_capacity(records.len());
    for (q, rec) in records.iter().enumerate() {
        let row = rec
            .chunks_exact(4)
            .map(|c| {
                let v = i32::from_le_bytes(c.try_into().unwrap());
                VectorId::try_from(v)
                    .map_err(|_| Error::format(format!("negative id {v} in ivecs row {q}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    GroundTruth::new(rows)
}

pub fn encode_ivecs(truth: &GroundTruth) -> Result<Vec<u8>> {
    let header = dim_header(truth.k())?;
    let mut out = Vec::with_capacity(truth.len() * 4 * (1 + truth.k()));
    for row in truth.rows() {
        out.extend_from_slice(&header);
        for &id in row {
            let v = i32::try_from(id)
                .map_err(|_| Error::format(format!("id {id} does not fit ivecs")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    parse_fvecs(&read_file(path.as_ref())?)
}

pub fn write_fvecs(path: impl AsRef<Path>, dataset: &VectorDataset) -> Result<()> {
    write_file(path.as_ref(), &encode_fvecs(dataset)?)
}

pub fn read_bvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    parse_bvecs(&read_file(path.as_ref())?)
}

pub fn write_bvecs(path: impl AsRef<Path>, dataset: &VectorDataset) -> Result<()> {
    write_file(path.as_ref(), &encode_bvecs(dataset)?)
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<GroundTruth> {
    parse_ivecs(&read_file(path.as_ref())?)
}

pub fn write_ivecs(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    write_file(path.as_ref(), &encode_ivecs(truth)?)
}

/// Little-endian cursor shared by the binary artifact readers.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format(format!("unexpected end of data at byte {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32s(out: &mut Vec<u8>, vs: &[u32]) {
    for &v in vs {
        put_u32(out, v);
    }
}
