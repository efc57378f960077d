//! Per (query, true neighbor) residual statistics and λ sweeps.
//!
//! Angles are measured against the unit-normalized query; partition ranks
//! use the raw query, matching search and KMR.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::index::SoarIndex;
use crate::vector::{brute_force_mips_batch, cos64, dot64, ip, rank_of_score, residual_into, sq_norm64};
use crate::vq::{assign_spilled_soar, AssignmentTable, Codebook};

use super::pearson;

/// Neighbors per query used for correlation statistics by default.
pub const DEFAULT_DIAGNOSTICS_K: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub query: u32,
    pub neighbor: u32,
    /// Cosine between query and primary residual; 0 for a zero residual.
    pub cos_primary: f64,
    pub cos_spilled: Option<f64>,
    /// `⟨q, r⟩` for the unit query.
    pub score_err_primary: f64,
    pub score_err_spilled: Option<f64>,
    pub rank_primary: usize,
    pub rank_spilled: Option<usize>,
    pub residual_norm: f64,
}

/// Records grouped by primary-partition rank in power-of-two buckets
/// `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankBin {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub mean_score_err_primary: f64,
    pub mean_rank_spilled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSummary {
    pub records: usize,
    /// Pearson correlation of `cos θ` and `cos θ'`.
    pub pearson_cos: Option<f64>,
    /// Pearson correlation of `⟨q, r⟩` and `⟨q, r'⟩`.
    pub pearson_score_err: Option<f64>,
    pub mean_residual_norm: f64,
    pub bins: Vec<RankBin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub records: Vec<DiagnosticsRecord>,
    pub summary: DiagnosticsSummary,
}

pub fn diagnostics(queries: &Dataset, x: &Dataset, index: &SoarIndex, k: usize) -> Result<Diagnostics> {
    check_dim(x.d(), queries.d())?;
    if x.n() != index.n() || x.d() != index.d() {
        return Err(Error::invalid("x", "dataset does not match the indexed datapoints"));
    }
    let truth = brute_force_mips_batch(queries, x, k)?;
    let unit = queries.normalized();
    let book = index.codebook();
    let table = index.assignment();

    let records: Vec<DiagnosticsRecord> = (0..queries.n())
        .into_par_iter()
        .flat_map_iter(|qi| {
            let q = queries.row(qi);
            let qu = unit.row(qi);
            let scores: Vec<f32> = book.centers().rows().map(|c| ip(q, c)).collect();
            let mut r = vec![0f32; x.d()];
            let mut rp = vec![0f32; x.d()];
            truth[qi]
                .iter()
                .map(|nb| {
                    let i = nb.id as usize;
                    let p = table.primary[i] as usize;
                    residual_into(x.row(i), book.center(p), &mut r);
                    let spilled = table.spilled_of(i).map(|sp| {
                        let sp = sp as usize;
                        residual_into(x.row(i), book.center(sp), &mut rp);
                        (
                            cos64(qu, &rp).unwrap_or(0.0),
                            dot64(qu, &rp),
                            rank_of_score(&scores, scores[sp]),
                        )
                    });
                    DiagnosticsRecord {
                        query: qi as u32,
                        neighbor: nb.id,
                        cos_primary: cos64(qu, &r).unwrap_or(0.0),
                        cos_spilled: spilled.map(|s| s.0),
                        score_err_primary: dot64(qu, &r),
                        score_err_spilled: spilled.map(|s| s.1),
                        rank_primary: rank_of_score(&scores, scores[p]),
                        rank_spilled: spilled.map(|s| s.2),
                        residual_norm: sq_norm64(&r).sqrt(),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let summary = summarize(&records);
    Ok(Diagnostics { records, summary })
}

fn summarize(records: &[DiagnosticsRecord]) -> DiagnosticsSummary {
    let spilled: Vec<&DiagnosticsRecord> = records.iter().filter(|r| r.cos_spilled.is_some()).collect();
    let col = |f: fn(&DiagnosticsRecord) -> f64| -> Vec<f64> { spilled.iter().map(|r| f(r)).collect() };
    let (pearson_cos, pearson_score_err) = if spilled.is_empty() {
        (None, None)
    } else {
        (
            pearson(&col(|r| r.cos_primary), &col(|r| r.cos_spilled.unwrap())),
            pearson(&col(|r| r.score_err_primary), &col(|r| r.score_err_spilled.unwrap())),
        )
    };

    let mut bins: Vec<(usize, f64, usize, f64)> = Vec::new();
    for r in records {
        let b = (usize::BITS - 1 - r.rank_primary.max(1).leading_zeros()) as usize;
        if bins.len() <= b {
            bins.resize(b + 1, (0, 0.0, 0, 0.0));
        }
        let e = &mut bins[b];
        e.0 += 1;
        e.1 += r.score_err_primary;
        if let Some(rs) = r.rank_spilled {
            e.2 += 1;
            e.3 += rs as f64;
        }
    }
    let bins = bins
        .into_iter()
        .enumerate()
        .filter(|(_, e)| e.0 > 0)
        .map(|(b, e)| RankBin {
            lo: 1 << b,
            hi: (1 << (b + 1)) - 1,
            count: e.0,
            mean_score_err_primary: e.1 / e.0 as f64,
            mean_rank_spilled: (e.2 > 0).then(|| e.3 / e.2 as f64),
        })
        .collect();

    let mean_residual_norm = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.residual_norm).sum::<f64>() / records.len() as f64
    };
    DiagnosticsSummary {
        records: records.len(),
        pearson_cos,
        pearson_score_err,
        mean_residual_norm,
        bins,
    }
}

/// Spilled-assignment statistics for one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStats {
    pub lambda: f32,
    /// Mean `‖r'‖²` over all datapoints.
    pub mean_sq_spilled_residual: f64,
    /// Mean of `⟨r, r'⟩ / (‖r‖‖r'‖)` over all datapoints, which equals the
    /// correlation of `⟨q, r⟩` and `⟨q, r'⟩` for `q` uniform on the sphere.
    /// Zero residuals contribute 0.
    pub mean_rho: f64,
    pub mean_abs_rho: f64,
    /// Pearson correlation of `⟨q, r⟩` and `⟨q, r'⟩` over (query, true
    /// neighbor) pairs.
    pub query_score_corr: Option<f64>,
}

/// Residual statistics of a spilled assignment table. `pairs` lists
/// (query, neighbor) pairs for the empirical score correlation.
pub fn spill_stats(
    x: &Dataset,
    book: &Codebook,
    table: &AssignmentTable,
    queries: &Dataset,
    pairs: &[(u32, u32)],
) -> Result<LambdaStats> {
    check_dim(book.d(), x.d())?;
    check_dim(book.d(), queries.d())?;
    let spilled = table
        .spilled
        .as_ref()
        .ok_or_else(|| Error::invalid("table", "assignment table has no spilled partitions"))?;
    let d = x.d();
    let per_point: Vec<(f64, f64)> = (0..x.n())
        .into_par_iter()
        .map_init(
            || (vec![0f32; d], vec![0f32; d]),
            |(r, rp), i| {
                residual_into(x.row(i), book.center(table.primary[i] as usize), r);
                residual_into(x.row(i), book.center(spilled[i] as usize), rp);
                (sq_norm64(rp), cos64(r, rp).unwrap_or(0.0))
            },
        )
        .collect();
    let n = x.n() as f64;
    let mean_sq = per_point.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_rho = per_point.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_abs_rho = per_point.iter().map(|p| p.1.abs()).sum::<f64>() / n;

    let mut r = vec![0f32; d];
    let mut rp = vec![0f32; d];
    let (mut a, mut b) = (Vec::with_capacity(pairs.len()), Vec::with_capacity(pairs.len()));
    for &(q, v) in pairs {
        let (q, v) = (queries.row(q as usize), v as usize);
        residual_into(x.row(v), book.center(table.primary[v] as usize), &mut r);
        residual_into(x.row(v), book.center(spilled[v] as usize), &mut rp);
        a.push(dot64(q, &r));
        b.push(dot64(q, &rp));
    }
    Ok(LambdaStats {
        lambda: table.policy.lambda().unwrap_or(0.0),
        mean_sq_spilled_residual: mean_sq,
        mean_rho,
        mean_abs_rho,
        query_score_corr: pearson(&a, &b),
    })
}

/// Re-runs SOAR spilling over a fixed codebook and primary assignment for
/// each λ (ascending). Empirical correlations use the top-`k` true
/// neighbors of every query.
pub fn lambda_sweep(
    x: &Dataset,
    book: &Codebook,
    primary: &AssignmentTable,
    queries: &Dataset,
    lambdas: &[f32],
    k: usize,
) -> Result<Vec<LambdaStats>> {
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("lambdas", "must be sorted ascending"));
    }
    let truth = brute_force_mips_batch(queries, x, k)?;
    let pairs: Vec<(u32, u32)> = truth
        .iter()
        .enumerate()
        .flat_map(|(q, ns)| ns.iter().map(move |n| (q as u32, n.id)))
        .collect();
    lambdas
        .iter()
        .map(|&lambda| {
            let table = assign_spilled_soar(x, book, primary, lambda)?;
            spill_stats(x, book, &table, queries, &pairs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build, BuildParams};
    use crate::synth::GaussianMixture;
    use crate::vq::{assign_primary, assign_spilled_naive, train_kmeans, SpillPolicy};

    #[test]
    fn zero_residual_is_orthogonal() {
        // every datapoint coincides with a center when sigma = 0
        let g = GaussianMixture::new(6, 5, 1).unwrap();
        let x = g.sample(50, 0.0, 1).unwrap();
        let q = g.sample(5, 0.2, 2).unwrap();
        let idx = build(&x, &BuildParams::new(5, SpillPolicy::None, 2, 3)).unwrap();
        let diag = diagnostics(&q, &x, &idx, 5).unwrap();
        assert_eq!(diag.records.len(), 25);
        for r in &diag.records {
            assert_eq!(r.cos_primary, 0.0);
            assert_eq!(r.score_err_primary, 0.0);
            assert_eq!(r.residual_norm, 0.0);
            assert!(r.cos_spilled.is_none() && r.rank_spilled.is_none());
        }
        assert_eq!(diag.summary.pearson_cos, None);
    }

    #[test]
    fn record_fields_are_in_range() {
        let g = GaussianMixture::new(8, 10, 4).unwrap();
        let x = g.sample(800, 0.4, 1).unwrap();
        let q = g.sample(20, 0.4, 2).unwrap();
        let idx = build(&x, &BuildParams::new(12, SpillPolicy::Soar { lambda: 1.0 }, 2, 3)).unwrap();
        let diag = diagnostics(&q, &x, &idx, 10).unwrap();
        assert_eq!(diag.records.len(), 200);
        for r in &diag.records {
            assert!((-1.0..=1.0).contains(&r.cos_primary));
            assert!((-1.0..=1.0).contains(&r.cos_spilled.unwrap()));
            assert!((1..=12).contains(&r.rank_primary));
            assert!((1..=12).contains(&r.rank_spilled.unwrap()));
        }
        let binned: usize = diag.summary.bins.iter().map(|b| b.count).sum();
        assert_eq!(binned, 200);
        assert!(diag.summary.pearson_cos.is_some());
    }

    #[test]
    fn sweep_at_zero_is_naive_and_rejects_unsorted() {
        let g = GaussianMixture::new(8, 10, 4).unwrap();
        let x = g.sample(1000, 0.4, 1).unwrap();
        let q = g.sample(20, 0.4, 2).unwrap();
        let book = train_kmeans(&x, 16, 10, 0).unwrap();
        let primary = assign_primary(&x, &book).unwrap();
        let sweep = lambda_sweep(&x, &book, &primary, &q, &[0.0, 1.0, 4.0], 10).unwrap();

        let naive = assign_spilled_naive(&x, &book, &primary).unwrap();
        let truth = brute_force_mips_batch(&q, &x, 10).unwrap();
        let pairs: Vec<(u32, u32)> = truth
            .iter()
            .enumerate()
            .flat_map(|(qi, ns)| ns.iter().map(move |n| (qi as u32, n.id)))
            .collect();
        let want = spill_stats(&x, &book, &naive, &q, &pairs).unwrap();
        assert_eq!(sweep[0].mean_sq_spilled_residual, want.mean_sq_spilled_residual);
        assert_eq!(sweep[0].mean_rho, want.mean_rho);
        assert_eq!(sweep[0].query_score_corr, want.query_score_corr);

        assert!(sweep[1].mean_sq_spilled_residual >= sweep[0].mean_sq_spilled_residual);
        assert!(sweep[2].mean_abs_rho <= sweep[1].mean_abs_rho);
        assert!(lambda_sweep(&x, &book, &primary, &q, &[1.0, 0.0], 10).is_err());
    }
}
