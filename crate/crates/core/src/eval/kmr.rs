//! k-means recall curves.
//!
//! `KMR(t)` is the fraction of (query, true neighbor) pairs whose
//! best-ranked assigned partition has rank at most `t`, where a partition's
//! rank is the number of centers scoring at least as high against the
//! query. For spilled indices the best of the two assigned partitions
//! counts. The x-coordinate of each point is the posting count of the `t`
//! top-ranked partitions, averaged over queries.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::index::SoarIndex;
use crate::vector::{brute_force_mips_batch, ip, rank_of_score};
use crate::vq::SpillPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmrPoint {
    /// Partitions probed.
    pub t: usize,
    /// Mean posting entries in the `t` top partitions.
    pub datapoints: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmrCurve {
    /// One point per `t = 1..=c`.
    pub points: Vec<KmrPoint>,
    pub k: usize,
    pub policy: SpillPolicy,
}

impl KmrCurve {
    /// Recall after probing `t` partitions; 0 for `t = 0`.
    pub fn recall_at(&self, t: usize) -> f64 {
        match t {
            0 => 0.0,
            t => self.points[(t - 1).min(self.points.len() - 1)].recall,
        }
    }
}

pub fn kmr_curve(queries: &Dataset, x: &Dataset, index: &SoarIndex, k: usize) -> Result<KmrCurve> {
    check_dim(x.d(), queries.d())?;
    if x.n() != index.n() || x.d() != index.d() {
        return Err(Error::invalid("x", "dataset does not match the indexed datapoints"));
    }
    let truth: Vec<Vec<u32>> = brute_force_mips_batch(queries, x, k)?
        .into_iter()
        .map(|ns| ns.into_iter().map(|n| n.id).collect())
        .collect();
    kmr_curve_from_truth(queries, &truth, index, k)
}

/// [`kmr_curve`] with precomputed ground-truth ids (`truth[q]` holds the
/// top-`k` ids of query `q`).
pub fn kmr_curve_from_truth(queries: &Dataset, truth: &[Vec<u32>], index: &SoarIndex, k: usize) -> Result<KmrCurve> {
    check_dim(index.d(), queries.d())?;
    if k == 0 || k > index.n() {
        return Err(Error::invalid("k", format!("must be in [1, n={}], got {k}", index.n())));
    }
    if truth.len() != queries.n() {
        return Err(Error::invalid("truth", "one ground-truth list per query required"));
    }
    if let Some(bad) = truth.iter().position(|t| t.len() != k) {
        return Err(Error::invalid("truth", format!("query {bad} has the wrong number of neighbors")));
    }
    if truth.iter().flatten().any(|&id| id as usize >= index.n()) {
        return Err(Error::invalid("truth", "neighbor id out of range"));
    }
    let c = index.c();
    let sizes = index.posting_sizes();
    let table = index.assignment();

    let per_query: Vec<(Vec<usize>, Vec<f64>)> = (0..queries.n())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let scores: Vec<f32> = index.codebook().centers().rows().map(|ctr| ip(q, ctr)).collect();
            let mut hist = vec![0usize; c + 1];
            for &v in &truth[qi] {
                let best = table
                    .partitions_of(v as usize)
                    .map(|p| rank_of_score(&scores, scores[p as usize]))
                    .min()
                    .unwrap();
                hist[best] += 1;
            }
            let mut prefix = Vec::with_capacity(c);
            let mut acc = 0f64;
            for (p, _) in index.rank_partitions(q) {
                acc += sizes[p as usize] as f64;
                prefix.push(acc);
            }
            (hist, prefix)
        })
        .collect();

    let nq = queries.n() as f64;
    let total = (k * queries.n()) as f64;
    let mut hist = vec![0usize; c + 1];
    let mut xs = vec![0f64; c];
    for (h, prefix) in &per_query {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
        for (a, b) in xs.iter_mut().zip(prefix) {
            *a += b;
        }
    }
    let mut found = 0usize;
    let points = (1..=c)
        .map(|t| {
            found += hist[t];
            KmrPoint {
                t,
                datapoints: xs[t - 1] / nq,
                recall: found as f64 / total,
            }
        })
        .collect();
    Ok(KmrCurve {
        points,
        k,
        policy: index.policy(),
    })
}

/// Smallest mean datapoint count whose recall reaches `target`.
pub fn datapoints_to_recall(curve: &KmrCurve, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid("target", format!("must be in (0, 1], got {target}")));
    }
    curve
        .points
        .iter()
        .find(|p| p.recall >= target)
        .map(|p| p.datapoints)
        .ok_or_else(|| Error::invalid("target", "recall target not reached by the curve"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build, BuildParams};
    use crate::synth::GaussianMixture;
    use crate::vector::{brute_force_mips, rank};

    fn fixture(policy: SpillPolicy, c: usize) -> (Dataset, Dataset, SoarIndex) {
        let g = GaussianMixture::new(8, 12, 4).unwrap();
        let x = g.sample(1000, 0.3, 1).unwrap();
        let q = g.sample(100, 0.3, 2).unwrap();
        let idx = build(&x, &BuildParams::new(c, policy, 2, 5)).unwrap();
        (x, q, idx)
    }

    /// Direct evaluation of the recall sum using `rank` over the codebook.
    fn oracle(q: &Dataset, x: &Dataset, idx: &SoarIndex, k: usize, t: usize) -> f64 {
        let centers = idx.codebook().centers();
        let mut hits = 0;
        for qv in q.rows() {
            for nb in brute_force_mips(qv, x, k).unwrap() {
                let best = idx
                    .assignment()
                    .partitions_of(nb.id as usize)
                    .map(|p| rank(qv, centers.row(p as usize), centers).unwrap())
                    .min()
                    .unwrap();
                if best <= t {
                    hits += 1;
                }
            }
        }
        hits as f64 / (k * q.n()) as f64
    }

    #[test]
    fn single_partition_is_one_point_at_full_recall() {
        let (x, q, idx) = fixture(SpillPolicy::None, 1);
        let curve = kmr_curve(&q, &x, &idx, 10).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].recall, 1.0);
        assert_eq!(curve.points[0].datapoints, 1000.0);
    }

    #[test]
    fn endpoints_and_monotonicity() {
        for policy in [SpillPolicy::None, SpillPolicy::Soar { lambda: 1.0 }] {
            let (x, q, idx) = fixture(policy, 10);
            let curve = kmr_curve(&q, &x, &idx, 10).unwrap();
            assert_eq!(curve.recall_at(0), 0.0);
            assert_eq!(curve.recall_at(10), 1.0);
            assert_eq!(curve.points.last().unwrap().datapoints, idx.total_postings() as f64);
            for w in curve.points.windows(2) {
                assert!(w[1].recall >= w[0].recall);
                assert!(w[1].datapoints >= w[0].datapoints);
            }
        }
    }

    #[test]
    fn matches_direct_counting_oracle() {
        for policy in [SpillPolicy::None, SpillPolicy::Naive] {
            let (x, q, idx) = fixture(policy, 10);
            let curve = kmr_curve(&q, &x, &idx, 10).unwrap();
            for t in 1..=10 {
                assert_eq!(curve.recall_at(t), oracle(&q, &x, &idx, 10, t), "t={t}");
            }
        }
    }

    #[test]
    fn datapoints_to_recall_cases() {
        let (x, q, idx) = fixture(SpillPolicy::None, 10);
        let curve = kmr_curve(&q, &x, &idx, 10).unwrap();
        let full = curve.points.iter().find(|p| p.recall == 1.0).unwrap();
        assert_eq!(datapoints_to_recall(&curve, 1.0).unwrap(), full.datapoints);
        let first = curve.points[0];
        assert_eq!(datapoints_to_recall(&curve, first.recall.min(1.0)).unwrap(), first.datapoints);
        assert_eq!(datapoints_to_recall(&curve, 1e-9).unwrap(), first.datapoints);
        assert!(datapoints_to_recall(&curve, 1.5).is_err());
        assert!(datapoints_to_recall(&curve, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_k() {
        let (x, q, idx) = fixture(SpillPolicy::None, 4);
        assert!(kmr_curve(&q, &x, &idx, 1001).is_err());
    }
}
