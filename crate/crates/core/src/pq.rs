//! Product quantization of partition residuals.
//!
//! Vectors are split into `m` subspaces of `s` dimensions (the last one
//! zero-padded when `s` does not divide `d`), each quantized against 16
//! centers, so a code is `m` nibbles packed two per byte. Scoring goes
//! through a per-query lookup table of subspace inner products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kmeans::{kmeans, DEFAULT_MAX_ITERS};
use crate::vector::{dot64, sq_l2_64};

/// Centers per subspace (4-bit codes).
pub const PQ_CENTERS: usize = 16;

/// Bytes used for a datapoint id in posting lists.
pub const ID_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    d: usize,
    s: usize,
    m: usize,
    /// `m x 16 x s`, subspace-major.
    centers: Vec<f32>,
}

/// Packed 4-bit codes, even subspaces in the low nibble.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PqCode(pub Vec<u8>);

impl PqCode {
    #[inline]
    pub fn get(&self, j: usize) -> u8 {
        nibble(&self.0, j)
    }
}

#[inline]
pub(crate) fn nibble(bytes: &[u8], j: usize) -> u8 {
    let b = bytes[j / 2];
    if j.is_multiple_of(2) {
        b & 0x0f
    } else {
        b >> 4
    }
}

/// Result of PQ training, including per-subspace k-means objectives.
#[derive(Debug, Clone)]
pub struct PqTraining {
    pub book: PqCodebook,
    pub objective_histories: Vec<Vec<f64>>,
}

impl PqCodebook {
    pub fn from_parts(d: usize, s: usize, centers: Vec<f32>) -> Result<Self> {
        if s == 0 || d == 0 {
            return Err(Error::invalid("s", "subspace and vector dimensions must be >= 1"));
        }
        let m = d.div_ceil(s);
        if centers.len() != m * PQ_CENTERS * s {
            return Err(Error::invalid(
                "centers",
                format!("expected {} values, got {}", m * PQ_CENTERS * s, centers.len()),
            ));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("centers", "non-finite PQ center"));
        }
        Ok(Self { d, s, m, centers })
    }

    /// Raw (unpadded) vector dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn padded_d(&self) -> usize {
        self.m * self.s
    }

    pub fn code_bytes(&self) -> usize {
        self.m.div_ceil(2)
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    #[inline]
    pub fn center(&self, j: usize, t: usize) -> &[f32] {
        let off = (j * PQ_CENTERS + t) * self.s;
        &self.centers[off..off + self.s]
    }

    fn padded(&self, v: &[f32]) -> Vec<f32> {
        let mut p = v.to_vec();
        p.resize(self.padded_d(), 0.0);
        p
    }

    /// Nearest center in each subspace, ties to the lower index.
    pub fn encode(&self, v: &[f32]) -> Result<PqCode> {
        check_dim(self.d, v.len())?;
        let mut out = vec![0u8; self.code_bytes()];
        self.encode_into(v, &mut out);
        Ok(PqCode(out))
    }

    pub(crate) fn encode_into(&self, v: &[f32], out: &mut [u8]) {
        let p;
        let v = if v.len() == self.padded_d() {
            v
        } else {
            p = self.padded(v);
            &p
        };
        out.fill(0);
        for j in 0..self.m {
            let sub = &v[j * self.s..(j + 1) * self.s];
            let mut best = (0usize, f64::INFINITY);
            for t in 0..PQ_CENTERS {
                let dist = sq_l2_64(sub, self.center(j, t));
                if dist < best.1 {
                    best = (t, dist);
                }
            }
            out[j / 2] |= (best.0 as u8) << (4 * (j % 2));
        }
    }

    /// Concatenation of the selected subspace centers, truncated to `d`.
    pub fn decode(&self, code: &PqCode) -> Result<Vec<f32>> {
        if code.0.len() != self.code_bytes() {
            return Err(Error::DimensionMismatch {
                expected: self.code_bytes(),
                got: code.0.len(),
            });
        }
        let mut out = Vec::with_capacity(self.padded_d());
        for j in 0..self.m {
            out.extend_from_slice(self.center(j, code.get(j) as usize));
        }
        out.truncate(self.d);
        Ok(out)
    }

    /// Per-query table of `⟨q_j, center_{j,t}⟩`.
    pub fn lookup_table(&self, q: &[f32]) -> Result<PqLut> {
        check_dim(self.d, q.len())?;
        let q = self.padded(q);
        let mut table = Vec::with_capacity(self.m * PQ_CENTERS);
        for j in 0..self.m {
            let sub = &q[j * self.s..(j + 1) * self.s];
            for t in 0..PQ_CENTERS {
                table.push(dot64(sub, self.center(j, t)));
            }
        }
        Ok(PqLut { m: self.m, table })
    }
}

/// Query-local lookup table for asymmetric scoring.
#[derive(Debug, Clone)]
pub struct PqLut {
    m: usize,
    table: Vec<f64>,
}

impl PqLut {
    /// `⟨q, decode(code)⟩` from packed code bytes.
    #[inline]
    pub fn score_bytes(&self, code: &[u8]) -> f32 {
        let mut acc = 0f64;
        let mut j = 0;
        for &b in code {
            acc += self.table[j * PQ_CENTERS + (b & 0x0f) as usize];
            j += 1;
            if j == self.m {
                break;
            }
            acc += self.table[j * PQ_CENTERS + (b >> 4) as usize];
            j += 1;
        }
        acc as f32
    }
}

/// Approximate inner product of `q` with the vector encoded by `code`.
pub fn pq_score(q: &[f32], code: &PqCode, book: &PqCodebook) -> Result<f32> {
    check_dim(book.code_bytes(), code.0.len())?;
    Ok(book.lookup_table(q)?.score_bytes(&code.0))
}

pub fn train_pq(residuals: &Dataset, s: usize, seed: u64) -> Result<PqCodebook> {
    Ok(train_pq_with(residuals, s, DEFAULT_MAX_ITERS, seed)?.book)
}

/// Per-subspace k-means with 16 centers. When a subspace has fewer than 16
/// rows, the surplus centers repeat the last trained one; encoding never
/// selects them because ties go to the lower index.
pub fn train_pq_with(residuals: &Dataset, s: usize, max_iters: usize, seed: u64) -> Result<PqTraining> {
    if s == 0 {
        return Err(Error::invalid("s", "dimensions per subspace must be >= 1"));
    }
    let d = residuals.d();
    let m = d.div_ceil(s);
    let n = residuals.n();
    let k = PQ_CENTERS.min(n);
    let mut centers = Vec::with_capacity(m * PQ_CENTERS * s);
    let mut histories = Vec::with_capacity(m);
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..m {
        let mut sub = Vec::with_capacity(n * s);
        for row in residuals.rows() {
            sub.extend((j * s..(j + 1) * s).map(|t| row.get(t).copied().unwrap_or(0.0)));
        }
        let sub = Dataset::from_parts_unchecked(sub, n, s);
        let out = kmeans(&sub, k, max_iters, seeder.random())?;
        centers.extend_from_slice(out.centers.as_slice());
        let last = out.centers.row(k - 1).to_vec();
        for _ in k..PQ_CENTERS {
            centers.extend_from_slice(&last);
        }
        histories.push(out.objective_history);
    }
    Ok(PqTraining {
        book: PqCodebook::from_parts(d, s, centers)?,
        objective_histories: histories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Float32,
    Int8,
}

impl Precision {
    pub fn bytes_per_dim(self) -> usize {
        match self {
            Precision::Float32 => 4,
            Precision::Int8 => 1,
        }
    }
}

/// Byte accounting for duplicated PQ postings under spilling.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryAccounting {
    pub d: usize,
    /// `d` rounded up to a multiple of `s`.
    pub padded_d: usize,
    pub padded: bool,
    /// Packed PQ code size.
    pub code_bytes: usize,
    /// Id plus PQ code: the bytes duplicated per spilled posting.
    pub per_point_pq: usize,
    /// Full-precision datapoint bytes, stored once.
    pub per_point_full: usize,
    /// `n * per_point_pq` for a spilled index, else 0.
    pub soar_overhead_bytes: usize,
    /// Overhead as a share of the spilled index,
    /// `pq / (full + 2 pq)`; 0 when not spilled.
    pub relative_increase: f64,
    /// Growth over the unspilled index, `pq / (full + pq)`.
    pub growth_over_unspilled: f64,
    /// Large-`d` limit: `1/(2s+1)` for int8, `1/(8s+1)` for float32.
    pub approx_relative_increase: f64,
}

pub fn memory_accounting(
    n: usize,
    d: usize,
    s: usize,
    precision: Precision,
    spilled: bool,
) -> Result<MemoryAccounting> {
    if s == 0 {
        return Err(Error::invalid("s", "dimensions per subspace must be >= 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    let m = d.div_ceil(s);
    let code_bytes = m.div_ceil(2);
    let per_point_pq = ID_BYTES + code_bytes;
    let per_point_full = precision.bytes_per_dim() * d;
    let pq = per_point_pq as f64;
    let full = per_point_full as f64;
    let approx_relative_increase = 1.0 / ((2 * precision.bytes_per_dim() * s) as f64 + 1.0);
    Ok(MemoryAccounting {
        d,
        padded_d: m * s,
        padded: !d.is_multiple_of(s),
        code_bytes,
        per_point_pq,
        per_point_full,
        soar_overhead_bytes: if spilled { n * per_point_pq } else { 0 },
        relative_increase: if spilled { pq / (full + 2.0 * pq) } else { 0.0 },
        growth_over_unspilled: pq / (full + pq),
        approx_relative_increase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new((0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect(), d).unwrap()
    }

    #[test]
    fn zero_residuals_give_zero_codebook() {
        let x = Dataset::new(vec![0.0; 100 * 6], 6).unwrap();
        let book = train_pq(&x, 2, 1).unwrap();
        assert!(book.centers().iter().all(|&v| v == 0.0));
        let code = book.encode(x.row(0)).unwrap();
        assert!(code.0.iter().all(|&b| b == 0));
    }

    #[test]
    fn shape() {
        let x = gaussian(64, 4, 0);
        let book = train_pq(&x, 2, 0).unwrap();
        assert_eq!(book.m(), 2);
        assert_eq!(book.code_bytes(), 1);
        let odd = train_pq(&gaussian(64, 5, 0), 2, 0).unwrap();
        assert_eq!((odd.m(), odd.padded_d(), odd.code_bytes()), (3, 6, 2));
    }

    #[test]
    fn encode_selects_exact_centers() {
        let book = train_pq(&gaussian(200, 4, 2), 2, 3).unwrap();
        let mut v = book.center(0, 3).to_vec();
        v.extend_from_slice(book.center(1, 7));
        let code = book.encode(&v).unwrap();
        assert_eq!((code.get(0), code.get(1)), (3, 7));
        assert_eq!(book.decode(&code).unwrap(), v);
    }

    #[test]
    fn zero_vector_selects_zero_center() {
        let mut centers = vec![1.0f32; 2 * PQ_CENTERS * 2];
        // subspace 0 center 5 and subspace 1 center 9 are zero
        centers[5 * 2..5 * 2 + 2].fill(0.0);
        centers[(PQ_CENTERS + 9) * 2..(PQ_CENTERS + 9) * 2 + 2].fill(0.0);
        let book = PqCodebook::from_parts(4, 2, centers).unwrap();
        let code = book.encode(&[0.0; 4]).unwrap();
        assert_eq!((code.get(0), code.get(1)), (5, 9));
    }

    #[test]
    fn encode_matches_per_subspace_argmin() {
        let x = gaussian(300, 7, 4);
        let book = train_pq(&x, 3, 5).unwrap();
        for row in x.rows().take(50) {
            let code = book.encode(row).unwrap();
            let mut padded = row.to_vec();
            padded.resize(9, 0.0);
            for j in 0..book.m() {
                let mut best = (0, f64::INFINITY);
                for t in 0..PQ_CENTERS {
                    let dist: f64 = (0..3)
                        .map(|u| ((padded[j * 3 + u] - book.center(j, t)[u]) as f64).powi(2))
                        .sum();
                    if dist < best.1 {
                        best = (t, dist);
                    }
                }
                assert_eq!(code.get(j) as usize, best.0);
            }
        }
    }

    #[test]
    fn trained_codebook_beats_random_codebook() {
        let x = gaussian(2000, 8, 6);
        let trained = train_pq(&x, 2, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let random = PqCodebook::from_parts(
            8,
            2,
            (0..4 * PQ_CENTERS * 2).map(|_| StandardNormal.sample(&mut rng)).collect(),
        )
        .unwrap();
        let err = |book: &PqCodebook| -> f64 {
            x.rows()
                .map(|r| {
                    let dec = book.decode(&book.encode(r).unwrap()).unwrap();
                    sq_l2_64(r, &dec)
                })
                .sum()
        };
        assert!(err(&trained) <= err(&random));
    }

    #[test]
    fn training_objective_never_increases() {
        let x = gaussian(1500, 6, 10);
        let t = train_pq_with(&x, 2, 20, 11).unwrap();
        assert_eq!(t.objective_histories.len(), 3);
        for h in &t.objective_histories {
            for w in h.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn few_rows_still_give_sixteen_centers() {
        let x = gaussian(5, 4, 12);
        let book = train_pq(&x, 2, 0).unwrap();
        assert_eq!(book.centers().len(), 2 * PQ_CENTERS * 2);
        for r in x.rows() {
            let dec = book.decode(&book.encode(r).unwrap()).unwrap();
            assert_eq!(dec, r.to_vec());
        }
    }

    #[test]
    fn score_against_zero_decoding_is_zero() {
        let book = train_pq(&Dataset::new(vec![0.0; 40], 4).unwrap(), 2, 0).unwrap();
        let code = book.encode(&[0.0; 4]).unwrap();
        assert_eq!(pq_score(&[3.0, -1.0, 2.0, 5.0], &code, &book).unwrap(), 0.0);
    }

    #[test]
    fn score_matches_decode_then_dot() {
        let x = gaussian(500, 10, 13);
        let book = train_pq(&x, 4, 14).unwrap();
        let qs = gaussian(20, 10, 15);
        for q in qs.rows() {
            let lut = book.lookup_table(q).unwrap();
            for r in x.rows().take(100) {
                let code = book.encode(r).unwrap();
                let want = dot64(q, &book.decode(&code).unwrap());
                let got = lut.score_bytes(&code.0) as f64;
                assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-2), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn memory_formulas() {
        let m = memory_accounting(1000, 100, 2, Precision::Float32, true).unwrap();
        assert_eq!(m.per_point_pq, 29);
        assert_eq!(m.per_point_full, 400);
        assert_eq!(m.soar_overhead_bytes, 29_000);
        assert!((m.approx_relative_increase - 1.0 / 17.0).abs() < 1e-12);
        assert!((m.relative_increase - 29.0 / 458.0).abs() < 1e-12);
        assert!((m.growth_over_unspilled - 29.0 / 429.0).abs() < 1e-12);

        let i8 = memory_accounting(1000, 100, 2, Precision::Int8, true).unwrap();
        assert!((i8.approx_relative_increase - 0.2).abs() < 1e-12);
        assert_eq!(i8.per_point_full, 100);

        let none = memory_accounting(1000, 100, 2, Precision::Float32, false).unwrap();
        assert_eq!(none.soar_overhead_bytes, 0);

        let padded = memory_accounting(10, 5, 2, Precision::Float32, true).unwrap();
        assert!(padded.padded);
        assert_eq!((padded.padded_d, padded.code_bytes), (6, 2));
        assert!(memory_accounting(10, 4, 0, Precision::Float32, true).is_err());
    }

    proptest! {
        #[test]
        fn lut_score_is_decoded_inner_product(seed in 0u64..1000, qv in proptest::collection::vec(-3.0f32..3.0, 6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers: Vec<f32> = (0..3 * PQ_CENTERS * 2).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            let book = PqCodebook::from_parts(6, 2, centers).unwrap();
            let code = PqCode(vec![rng.random(), rng.random::<u8>() & 0x0f]);
            let dec = book.decode(&code).unwrap();
            let want = dot64(&qv, &dec);
            let got = pq_score(&qv, &code, &book).unwrap() as f64;
            prop_assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-2));
        }
    }
}
