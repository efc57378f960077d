//! `.soar` index files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header (48 bytes)
//!   magic        8   b"SOARIDX\0"
//!   version      u32
//!   policy       u8  0 = none, 1 = naive, 2 = soar
//!   reserved     3   zero
//!   lambda       f32 0 unless policy = soar
//!   n, d, c, s, m  u32 each
//!   seed         u64
//! codebook       c * d f32
//! pq codebook    m * 16 * s f32, subspace-major
//! postings       for each partition in id order:
//!                  partition id u32, length u32, primary length u32,
//!                  then `length` entries of (id u32, ceil(m/2) code bytes)
//! full store     n * d f32
//! ```
//!
//! The header and per-partition headers have the same size for every
//! policy, so a spilled index is larger than the unspilled one built from
//! the same seed by exactly `n * (4 + ceil(m/2))` bytes.

use std::fs;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pq::{nibble, PqCodebook, ID_BYTES, PQ_CENTERS};
use crate::vq::{AssignmentTable, Codebook, SpillPolicy};

use super::{PostingList, SoarIndex};

pub const MAGIC: [u8; 8] = *b"SOARIDX\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 48;
const PARTITION_HEADER_BYTES: usize = 12;

impl SoarIndex {
    /// Exact size of [`SoarIndex::to_bytes`].
    pub fn serialized_len(&self) -> usize {
        let f = 4;
        HEADER_BYTES
            + self.c() * self.d() * f
            + self.pq.centers().len() * f
            + self.c() * PARTITION_HEADER_BYTES
            + self.total_postings() * (ID_BYTES + self.pq.code_bytes())
            + self.n() * self.d() * f
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let (tag, lambda) = match self.policy() {
            SpillPolicy::None => (0u8, 0.0f32),
            SpillPolicy::Naive => (1, 0.0),
            SpillPolicy::Soar { lambda } => (2, lambda),
        };
        out.extend_from_slice(&[tag, 0, 0, 0]);
        out.extend_from_slice(&lambda.to_le_bytes());
        for v in [self.n(), self.d(), self.c(), self.pq.s(), self.pq.m()] {
            put_u32(&mut out, v as u32);
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_BYTES);

        put_f32s(&mut out, self.codebook.centers().as_slice());
        put_f32s(&mut out, self.pq.centers());
        let cb = self.pq.code_bytes();
        for (p, list) in self.postings.iter().enumerate() {
            put_u32(&mut out, p as u32);
            put_u32(&mut out, list.len() as u32);
            put_u32(&mut out, list.primary_len as u32);
            for (&id, code) in list.ids.iter().zip(list.codes.chunks_exact(cb)) {
                put_u32(&mut out, id);
                out.extend_from_slice(code);
            }
        }
        put_f32s(&mut out, self.full_store.as_slice());
        debug_assert_eq!(out.len(), self.serialized_len());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };

        let magic = r.take(8, "header")?;
        if magic != MAGIC {
            return Err(Error::format("header", "bad magic bytes"));
        }
        let version = r.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::format("header", format!("unsupported version {version}")));
        }
        let flags = r.take(4, "header")?;
        if flags[1..] != [0, 0, 0] {
            return Err(Error::format("header", "reserved bytes are not zero"));
        }
        let lambda = r.f32("header")?;
        let policy = match flags[0] {
            0 | 1 if lambda != 0.0 => return Err(Error::format("header", "lambda set for a non-soar policy")),
            0 => SpillPolicy::None,
            1 => SpillPolicy::Naive,
            2 => SpillPolicy::soar(lambda).map_err(|e| Error::format("header", e.to_string()))?,
            t => return Err(Error::format("header", format!("unknown policy tag {t}"))),
        };
        let n = r.u32("header")? as usize;
        let d = r.u32("header")? as usize;
        let c = r.u32("header")? as usize;
        let s = r.u32("header")? as usize;
        let m = r.u32("header")? as usize;
        let seed = r.u64("header")?;
        if n == 0 || d == 0 || c == 0 || s == 0 {
            return Err(Error::format("header", "n, d, c and s must be non-zero"));
        }
        if m != d.div_ceil(s) {
            return Err(Error::format("header", format!("m={m} inconsistent with d={d}, s={s}")));
        }
        if policy.is_spilled() && c < 2 {
            return Err(Error::format("header", "spilled index with fewer than 2 partitions"));
        }

        let centers = r.f32s(mul(c, d, "codebook")?, "codebook")?;
        let codebook = Codebook::new(
            Dataset::new(centers, d).map_err(|e| Error::format("codebook", e.to_string()))?,
        );
        let pq_centers = r.f32s(mul(m * PQ_CENTERS, s, "pq codebook")?, "pq codebook")?;
        let pq = PqCodebook::from_parts(d, s, pq_centers).map_err(|e| Error::format("pq codebook", e.to_string()))?;

        let cb = pq.code_bytes();
        let entry = ID_BYTES + cb;
        let mut postings = Vec::with_capacity(c.min(r.remaining() / PARTITION_HEADER_BYTES + 1));
        let mut primary = vec![u32::MAX; n];
        let mut spilled = if policy.is_spilled() { Some(vec![u32::MAX; n]) } else { None };
        for p in 0..c {
            let pid = r.u32("postings")? as usize;
            if pid != p {
                return Err(Error::format("postings", format!("expected partition {p}, found {pid}")));
            }
            let len = r.u32("postings")? as usize;
            let primary_len = r.u32("postings")? as usize;
            if primary_len > len {
                return Err(Error::format("postings", format!("partition {p}: primary length exceeds length")));
            }
            let raw = r.take(mul(len, entry, "postings")?, "postings")?;
            let mut ids = Vec::with_capacity(len);
            let mut codes = Vec::with_capacity(len * cb);
            for (k, e) in raw.chunks_exact(entry).enumerate() {
                let id = u32::from_le_bytes(e[..4].try_into().unwrap());
                if id as usize >= n {
                    return Err(Error::format("postings", format!("partition {p}: id {id} out of range")));
                }
                let code = &e[4..];
                if m % 2 == 1 && nibble(code, m) != 0 {
                    return Err(Error::format("postings", "non-zero padding nibble"));
                }
                let slot = if k < primary_len {
                    &mut primary[id as usize]
                } else {
                    match spilled.as_mut() {
                        Some(s) => &mut s[id as usize],
                        None => return Err(Error::format("postings", "spilled entry in an unspilled index")),
                    }
                };
                if *slot != u32::MAX {
                    return Err(Error::format("postings", format!("id {id} assigned twice")));
                }
                *slot = p as u32;
                ids.push(id);
                codes.extend_from_slice(code);
            }
            postings.push(PostingList { ids, codes, primary_len });
        }
        if primary.contains(&u32::MAX) {
            return Err(Error::format("postings", "datapoint without a primary partition"));
        }
        if let Some(sp) = &spilled {
            if sp.contains(&u32::MAX) {
                return Err(Error::format("postings", "datapoint without a spilled partition"));
            }
        }
        let assignment = AssignmentTable { primary, spilled, policy };
        assignment
            .validate(c)
            .map_err(|e| Error::format("postings", e.to_string()))?;

        let full = r.f32s(mul(n, d, "full store")?, "full store")?;
        let full_store = Dataset::new(full, d).map_err(|e| Error::format("full store", e.to_string()))?;
        if r.remaining() != 0 {
            return Err(Error::format("trailer", format!("{} unexpected trailing bytes", r.remaining())));
        }
        Ok(SoarIndex::from_parts(codebook, pq, postings, full_store, assignment, seed))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn mul(a: usize, b: usize, section: &'static str) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Error::format(section, "size overflow"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        if len > self.remaining() {
            return Err(Error::format(
                section,
                format!("truncated: need {len} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, section: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(mul(count, 4, section)?, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build, BuildParams};
    use crate::synth::gaussian_mixture;

    fn index(policy: SpillPolicy, d: usize, s: usize) -> SoarIndex {
        let x = gaussian_mixture(200, d, 4, 0.3, 2).unwrap();
        build(&x, &BuildParams::new(5, policy, s, 17)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for policy in [SpillPolicy::None, SpillPolicy::Naive, SpillPolicy::Soar { lambda: 1.5 }] {
            for (d, s) in [(8, 2), (7, 2), (9, 3)] {
                let idx = index(policy, d, s);
                let bytes = idx.to_bytes();
                assert_eq!(bytes.len(), idx.serialized_len());
                let back = SoarIndex::from_bytes(&bytes).unwrap();
                assert_eq!(back, idx);
                assert_eq!(back.to_bytes(), bytes);
            }
        }
    }

    #[test]
    fn spill_delta_is_one_posting_per_point() {
        let none = index(SpillPolicy::None, 8, 2).to_bytes().len();
        let soar = index(SpillPolicy::Soar { lambda: 1.0 }, 8, 2).to_bytes().len();
        assert_eq!(soar - none, 200 * (4 + 8 / (2 * 2)));
    }

    fn expect_section(bytes: &[u8], section: &str) {
        match SoarIndex::from_bytes(bytes) {
            Err(Error::Format { section: s, .. }) => assert_eq!(s, section),
            other => panic!("expected format error in {section}, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_inputs_are_reported_by_section() {
        let idx = index(SpillPolicy::Soar { lambda: 1.0 }, 8, 2);
        let bytes = idx.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        expect_section(&bad, "header");

        let mut bad = bytes.clone();
        bad[8] = 9;
        expect_section(&bad, "header");

        // first partition's length field
        let off = HEADER_BYTES + (5 * 8 + 4 * PQ_CENTERS * 2) * 4 + 4;
        let mut bad = bytes.clone();
        bad[off..off + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        expect_section(&bad, "postings");

        expect_section(&bytes[..bytes.len() - 3], "full store");
        expect_section(&bytes[..20], "header");

        let mut extra = bytes.clone();
        extra.push(0);
        expect_section(&extra, "trailer");
    }

    #[test]
    fn truncation_never_panics() {
        let bytes = index(SpillPolicy::Naive, 7, 2).to_bytes();
        for cut in (0..bytes.len()).step_by(37) {
            assert!(SoarIndex::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn save_and_load() {
        let idx = index(SpillPolicy::None, 8, 4);
        let path = std::env::temp_dir().join(format!("soar-format-{}.soar", std::process::id()));
        idx.save(&path).unwrap();
        let back = SoarIndex::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back, idx);
    }
}
