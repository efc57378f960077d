//! `fvecs` / `ivecs` vector files: each record is a little-endian `u32`
//! dimension followed by that many `f32` (fvecs) or `i32` (ivecs) values.

use std::fs;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

fn records<'a>(bytes: &'a [u8], section: &'static str) -> Result<(usize, Vec<&'a [u8]>)> {
    if bytes.is_empty() {
        return Err(Error::format(section, "empty file"));
    }
    let d = u32::from_le_bytes(
        bytes
            .get(..4)
            .ok_or_else(|| Error::format(section, "truncated dimension"))?
            .try_into()
            .unwrap(),
    ) as usize;
    if d == 0 {
        return Err(Error::format(section, "zero dimension"));
    }
    let rec = 4 + 4 * d;
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(section, format!("file size {} is not a multiple of record size {rec}", bytes.len())));
    }
    let mut out = Vec::with_capacity(bytes.len() / rec);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let di = u32::from_le_bytes(r[..4].try_into().unwrap()) as usize;
        if di != d {
            return Err(Error::format(section, format!("record {i} has dimension {di}, expected {d}")));
        }
        out.push(&r[4..]);
    }
    Ok((d, out))
}

pub fn decode_fvecs(bytes: &[u8]) -> Result<Dataset> {
    let (d, recs) = records(bytes, "fvecs")?;
    let mut data = Vec::with_capacity(recs.len() * d);
    for r in recs {
        data.extend(r.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())));
    }
    Dataset::new(data, d).map_err(|e| Error::format("fvecs", e.to_string()))
}

pub fn encode_fvecs(x: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(x.n() * (4 + 4 * x.d()));
    for row in x.rows() {
        out.extend_from_slice(&(x.d() as u32).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_ivecs(bytes: &[u8]) -> Result<Vec<Vec<i32>>> {
    let (_, recs) = records(bytes, "ivecs")?;
    Ok(recs
        .into_iter()
        .map(|r| r.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect())
        .collect())
}

pub fn encode_ivecs(rows: &[Vec<i32>]) -> Result<Vec<u8>> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::invalid("rows", "ivecs needs at least one non-empty row"));
    }
    let mut out = Vec::with_capacity(rows.len() * (4 + 4 * d));
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_fvecs(&fs::read(path)?)
}

pub fn write_fvecs(path: impl AsRef<Path>, x: &Dataset) -> Result<()> {
    fs::write(path, encode_fvecs(x))?;
    Ok(())
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    decode_ivecs(&fs::read(path)?)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    fs::write(path, encode_ivecs(rows)?)?;
    Ok(())
}
