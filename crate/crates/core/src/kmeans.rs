//! Lloyd's k-means with k-means++ seeding.
//!
//! Used for the partition codebook and, per subspace, for the PQ codebooks.
//! Deterministic for a fixed seed: random draws happen on one thread and all
//! reductions run in datapoint order.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::vector::sq_l2_64;

pub const DEFAULT_MAX_ITERS: usize = 25;

/// Output of a k-means run.
#[derive(Debug, Clone)]
pub struct KMeansOutput {
    pub centers: Dataset,
    /// Sum of squared distances to the assigned center, one entry per
    /// assignment step.
    pub objective_history: Vec<f64>,
    /// Whether the run stopped because no assignment changed.
    pub converged: bool,
}

/// Nearest row of `centers` to `x` by squared distance; ties go to the lower
/// index.
#[inline]
pub(crate) fn nearest(x: &[f32], centers: &Dataset) -> (usize, f64) {
    nearest_in(x, centers.as_slice(), centers.d())
}

#[inline]
fn nearest_in(x: &[f32], centers: &[f32], d: usize) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in centers.chunks_exact(d).enumerate() {
        let d = sq_l2_64(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn kmeans(x: &Dataset, c: usize, max_iters: usize, seed: u64) -> Result<KMeansOutput> {
    if c == 0 {
        return Err(Error::invalid("c", "need at least one center"));
    }
    if c > x.n() {
        return Err(Error::invalid(
            "c",
            format!("cannot fit {c} centers to {} points", x.n()),
        ));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters", "must be at least 1"));
    }
    let d = x.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(x, c, &mut rng);

    let mut history = Vec::with_capacity(max_iters);
    let mut assign: Vec<usize> = Vec::new();
    let mut converged = false;

    for iter in 0..max_iters {
        let step: Vec<(usize, f64)> = (0..x.n())
            .into_par_iter()
            .map(|i| nearest_in(x.row(i), &centers, d))
            .collect();
        history.push(step.iter().map(|p| p.1).sum());

        let changed = iter == 0 || step.iter().zip(&assign).any(|(s, a)| s.0 != *a);
        assign = step.iter().map(|p| p.0).collect();
        if !changed {
            converged = true;
            break;
        }

        let mut sums = vec![0f64; c * d];
        let mut counts = vec![0usize; c];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(x.row(i)) {
                *s += *v as f64;
            }
        }
        for j in 0..c {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for t in 0..d {
                    centers[j * d + t] = (sums[j * d + t] / inv) as f32;
                }
            }
        }
        let empty: Vec<usize> = (0..c).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let dists: Vec<f64> = step.iter().map(|p| p.1).collect();
            reseed_empty(x, &mut centers, &empty, &dists);
        }
    }

    let mut centers = Dataset::from_parts_unchecked(centers, c, d);
    repair_duplicates(x, &mut centers);
    Ok(KMeansOutput {
        centers,
        objective_history: history,
        converged,
    })
}

fn seed_plus_plus(x: &Dataset, c: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = x.n();
    let d = x.d();
    let mut centers = Vec::with_capacity(c * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(x.row(first));
    let mut min_d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_l2_64(x.row(i), x.row(first)))
        .collect();

    for _ in 1..c {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in min_d2.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just past the final sum
            pick.unwrap_or_else(|| min_d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let new = x.row(pick).to_vec();
        centers.extend_from_slice(&new);
        min_d2
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = m.min(sq_l2_64(x.row(i), &new)));
    }
    centers
}

/// Moves each empty center onto the point currently farthest from its own
/// center, skipping points already at distance zero and repeated vectors.
fn reseed_empty(x: &Dataset, centers: &mut [f32], empty: &[usize], dists: &[f64]) {
    let d = x.d();
    let mut order: Vec<usize> = (0..x.n()).filter(|&i| dists[i] > 0.0).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let mut used: HashSet<Vec<u32>> = HashSet::new();
    let mut cursor = order.into_iter();
    for &j in empty {
        let next = cursor.by_ref().find(|&i| used.insert(bits(x.row(i))));
        match next {
            Some(i) => centers[j * d..(j + 1) * d].copy_from_slice(x.row(i)),
            None => break,
        }
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|f| f.to_bits()).collect()
}

/// Replaces bit-identical centers with data points not yet used as centers,
/// farthest-first. Leaves duplicates in place when the data has too few
/// distinct points.
fn repair_duplicates(x: &Dataset, centers: &mut Dataset) {
    let c = centers.n();
    let mut seen = HashSet::with_capacity(c);
    let dups: Vec<usize> = (0..c)
        .filter(|&j| !seen.insert(bits(centers.row(j))))
        .collect();
    if dups.is_empty() {
        return;
    }
    let dists: Vec<f64> = (0..x.n())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centers).1)
        .collect();
    let mut order: Vec<usize> = (0..x.n()).filter(|&i| dists[i] > 0.0).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    let d = x.d();
    let mut data = std::mem::replace(centers, Dataset::from_parts_unchecked(vec![0.0], 1, 1)).into_vec();
    let mut cursor = order.into_iter();
    for j in dups {
        match cursor.by_ref().find(|&i| seen.insert(bits(x.row(i)))) {
            Some(i) => data[j * d..(j + 1) * d].copy_from_slice(x.row(i)),
            None => break,
        }
    }
    *centers = Dataset::from_parts_unchecked(data, c, d);
}
