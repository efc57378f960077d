//! Partition codebooks and datapoint-to-partition assignment.
//!
//! A datapoint always gets a primary partition, its nearest center. Spilled
//! policies add one more partition: the second-nearest center (`Naive`), or
//! the center minimizing the orthogonality-amplified residual loss
//! `‖r'‖² + λ‖proj_r r'‖²` where `r` is the primary residual (`Soar`).
//! Centers and primary assignments stay fixed while spilling.

use std::fmt;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kmeans::{kmeans, nearest};
use crate::vector::{dot64, residual_into, sq_l2_64, sq_norm64};

/// Total partitions per datapoint under a spilled policy.
pub const SPILL_ASSIGNMENTS: usize = 2;

/// λ used when a SOAR policy is requested without one (~1M-point datasets).
pub const DEFAULT_LAMBDA: f32 = 1.0;

/// Suggested λ for billion-scale datasets.
pub const LARGE_DATASET_LAMBDA: f32 = 1.5;

/// The `c x d` matrix of partition centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Dataset,
}

impl Codebook {
    pub fn new(centers: Dataset) -> Self {
        Self { centers }
    }

    pub fn c(&self) -> usize {
        self.centers.n()
    }

    pub fn d(&self) -> usize {
        self.centers.d()
    }

    pub fn center(&self, j: usize) -> &[f32] {
        self.centers.row(j)
    }

    pub fn centers(&self) -> &Dataset {
        &self.centers
    }
}

/// How many partitions a datapoint lands in, and how the second is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpillPolicy {
    None,
    Naive,
    Soar { lambda: f32 },
}

impl SpillPolicy {
    pub fn soar(lambda: f32) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Ok(SpillPolicy::Soar { lambda })
    }

    pub fn is_spilled(&self) -> bool {
        !matches!(self, SpillPolicy::None)
    }

    pub fn lambda(&self) -> Option<f32> {
        match self {
            SpillPolicy::Soar { lambda } => Some(*lambda),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpillPolicy::None => "none",
            SpillPolicy::Naive => "naive",
            SpillPolicy::Soar { .. } => "soar",
        }
    }
}

impl fmt::Display for SpillPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpillPolicy::Soar { lambda } => write!(f, "soar({lambda})"),
            p => f.write_str(p.name()),
        }
    }
}

/// Per-datapoint partition ids: the primary assignment and, for spilled
/// policies, one additional distinct partition.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTable {
    pub primary: Vec<u32>,
    pub spilled: Option<Vec<u32>>,
    pub policy: SpillPolicy,
}

impl AssignmentTable {
    pub fn n(&self) -> usize {
        self.primary.len()
    }

    pub fn spilled_of(&self, i: usize) -> Option<u32> {
        self.spilled.as_ref().map(|s| s[i])
    }

    /// Partition ids of datapoint `i`, primary first.
    pub fn partitions_of(&self, i: usize) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.primary[i]).chain(self.spilled_of(i))
    }

    /// Checks the table against a codebook of `c` partitions.
    pub fn validate(&self, c: usize) -> Result<()> {
        if let Some(p) = self.primary.iter().position(|&p| p as usize >= c) {
            return Err(Error::invalid("assignment", format!("primary[{p}] out of range")));
        }
        match (&self.spilled, self.policy.is_spilled()) {
            (None, false) => Ok(()),
            (Some(s), true) => {
                if s.len() != self.primary.len() {
                    return Err(Error::invalid("assignment", "spilled length differs from primary"));
                }
                for (i, (&a, &b)) in self.primary.iter().zip(s).enumerate() {
                    if b as usize >= c || a == b {
                        return Err(Error::invalid("assignment", format!("bad spilled id at {i}")));
                    }
                }
                Ok(())
            }
            _ => Err(Error::invalid("assignment", "spilled ids do not match policy")),
        }
    }
}

/// Trains the partition codebook with k-means.
pub fn train_kmeans(x: &Dataset, c: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    Ok(Codebook::new(kmeans(x, c, max_iters, seed)?.centers))
}

/// Nearest center by squared Euclidean distance, ties to the lower id.
pub fn assign_primary(x: &Dataset, book: &Codebook) -> Result<AssignmentTable> {
    check_dim(book.d(), x.d())?;
    let primary = (0..x.n())
        .into_par_iter()
        .map(|i| nearest(x.row(i), book.centers()).0 as u32)
        .collect();
    Ok(AssignmentTable {
        primary,
        spilled: None,
        policy: SpillPolicy::None,
    })
}

/// `‖r'‖² + λ‖proj_r r'‖²`, with the projection term taken as zero when `r`
/// is the zero vector.
pub fn soar_loss(r_prime: &[f32], r: &[f32], lambda: f32) -> Result<f64> {
    check_dim(r.len(), r_prime.len())?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid("lambda", format!("must be >= 0, got {lambda}")));
    }
    Ok(combine(sq_norm64(r_prime), dot64(r, r_prime), sq_norm64(r), lambda as f64))
}

#[inline]
fn combine(rp_sq: f64, dot: f64, r_sq: f64, lambda: f64) -> f64 {
    if r_sq > 0.0 {
        rp_sq + lambda * (dot * dot / r_sq)
    } else {
        rp_sq
    }
}

/// `(‖x - c‖², ⟨r, x - c⟩)` in one pass. Shares the lane layout of
/// `sq_l2_64` and `dot64`, so both terms agree bit-for-bit with the
/// standalone kernels.
#[inline]
fn sq_l2_and_dot(x: &[f32], c: &[f32], r: &[f32]) -> (f64, f64) {
    let mut sq = [0f64; 4];
    let mut dp = [0f64; 4];
    let n4 = x.len() / 4 * 4;
    let mut i = 0;
    while i < n4 {
        for l in 0..4 {
            let t = x[i + l] - c[i + l];
            let t64 = t as f64;
            sq[l] += t64 * t64;
            dp[l] += r[i + l] as f64 * t64;
        }
        i += 4;
    }
    let (mut st, mut dt) = (0f64, 0f64);
    for k in n4..x.len() {
        let t = (x[k] - c[k]) as f64;
        st += t * t;
        dt += r[k] as f64 * t;
    }
    ((sq[0] + sq[1]) + (sq[2] + sq[3]) + st, (dp[0] + dp[1]) + (dp[2] + dp[3]) + dt)
}

fn check_spill_inputs(x: &Dataset, book: &Codebook, primary: &AssignmentTable) -> Result<()> {
    check_dim(book.d(), x.d())?;
    if book.c() < 2 {
        return Err(Error::invalid("c", "spilled assignment needs at least 2 partitions"));
    }
    if primary.n() != x.n() {
        return Err(Error::invalid("primary", "assignment table does not match dataset size"));
    }
    if let Some(p) = primary.primary.iter().position(|&p| p as usize >= book.c()) {
        return Err(Error::invalid("primary", format!("partition id out of range at {p}")));
    }
    Ok(())
}

/// SOAR spilled assignment: for each datapoint, the non-primary center that
/// minimizes [`soar_loss`] against the primary residual.
pub fn assign_spilled_soar(
    x: &Dataset,
    book: &Codebook,
    primary: &AssignmentTable,
    lambda: f32,
) -> Result<AssignmentTable> {
    let policy = SpillPolicy::soar(lambda)?;
    check_spill_inputs(x, book, primary)?;
    let lambda = lambda as f64;
    let spilled = (0..x.n())
        .into_par_iter()
        .map_init(
            || vec![0f32; x.d()],
            |r, i| {
                let xi = x.row(i);
                let p = primary.primary[i] as usize;
                residual_into(xi, book.center(p), r);
                let r_sq = sq_norm64(r);
                let mut best = (u32::MAX, f64::INFINITY);
                for j in 0..book.c() {
                    if j == p {
                        continue;
                    }
                    let (rp_sq, dot) = sq_l2_and_dot(xi, book.center(j), r);
                    let loss = combine(rp_sq, dot, r_sq, lambda);
                    if loss < best.1 {
                        best = (j as u32, loss);
                    }
                }
                best.0
            },
        )
        .collect();
    Ok(AssignmentTable {
        primary: primary.primary.clone(),
        spilled: Some(spilled),
        policy,
    })
}

/// Naive spilled assignment: the second-nearest center.
pub fn assign_spilled_naive(x: &Dataset, book: &Codebook, primary: &AssignmentTable) -> Result<AssignmentTable> {
    check_spill_inputs(x, book, primary)?;
    let spilled = (0..x.n())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let p = primary.primary[i] as usize;
            let mut best = (u32::MAX, f64::INFINITY);
            for j in 0..book.c() {
                if j == p {
                    continue;
                }
                let d = sq_l2_64(xi, book.center(j));
                if d < best.1 {
                    best = (j as u32, d);
                }
            }
            best.0
        })
        .collect();
    Ok(AssignmentTable {
        primary: primary.primary.clone(),
        spilled: Some(spilled),
        policy: SpillPolicy::Naive,
    })
}

/// Applies `policy` on top of a primary assignment.
pub fn assign_spilled(
    x: &Dataset,
    book: &Codebook,
    primary: &AssignmentTable,
    policy: SpillPolicy,
) -> Result<AssignmentTable> {
    match policy {
        SpillPolicy::None => Ok(AssignmentTable {
            primary: primary.primary.clone(),
            spilled: None,
            policy,
        }),
        SpillPolicy::Naive => assign_spilled_naive(x, book, primary),
        SpillPolicy::Soar { lambda } => assign_spilled_soar(x, book, primary, lambda),
    }
}
