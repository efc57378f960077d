//! Index-quality metrics and diagnostics.

mod diagnostics;
mod kmr;
mod montecarlo;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::vector::Neighbor;

pub use diagnostics::{
    diagnostics, lambda_sweep, spill_stats, Diagnostics, DiagnosticsRecord, DiagnosticsSummary, LambdaStats,
    RankBin, DEFAULT_DIAGNOSTICS_K,
};
pub use kmr::{datapoints_to_recall, kmr_curve, kmr_curve_from_truth, KmrCurve, KmrPoint};
pub use montecarlo::{
    mc_verify_lemma, mc_verify_theorem1, sample_unit_sphere, CandidateCheck, LemmaCheck, Theorem1Check,
    MC_BLOCK_SAMPLES, MIN_MC_SAMPLES,
};

/// `|results ∩ truth| / k`, using the first `k` results. Missing results
/// count as misses.
pub fn recall_at_k(results: &[Neighbor], truth: &[Neighbor], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    if truth.len() != k {
        return Err(Error::invalid("truth", format!("expected {k} ground-truth neighbors, got {}", truth.len())));
    }
    let want: HashSet<u32> = truth.iter().map(|n| n.id).collect();
    let hits = results.iter().take(k).filter(|n| want.contains(&n.id)).count();
    Ok(hits as f64 / k as f64)
}

/// Sample Pearson correlation; `None` for fewer than two points or a
/// constant series.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0f64, 0f64, 0f64);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(ids: &[u32]) -> Vec<Neighbor> {
        ids.iter().map(|&i| Neighbor::new(i, 0.0)).collect()
    }

    #[test]
    fn recall_cases() {
        let truth = ns(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(recall_at_k(&truth, &truth, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ns(&[10, 11, 12, 13, 14, 15, 16, 17, 18, 19]), &truth, 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ns(&[0, 1, 2, 3, 4, 15, 16, 17, 18, 19]), &truth, 10).unwrap(), 0.5);
        assert_eq!(recall_at_k(&ns(&[0, 1]), &truth, 10).unwrap(), 0.2);
        assert!(recall_at_k(&truth, &truth[..5], 10).is_err());
    }

    #[test]
    fn pearson_cases() {
        let xs = [0.3, -1.2, 4.5, 2.2, 0.0];
        assert_eq!(pearson(&xs, &xs), Some(1.0));
        let neg: Vec<f64> = xs.iter().map(|v| -2.0 * v + 1.0).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&xs, &[1.0; 5]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }
}
