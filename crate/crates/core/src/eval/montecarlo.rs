//! Monte-Carlo checks of the closed-form spilled-assignment loss and of the
//! projection/correlation identity, with queries drawn uniformly from the
//! unit hypersphere.
//!
//! Samples are generated in fixed-size blocks; block `b` uses a ChaCha
//! stream derived from `(seed, b)` and per-block partial sums are combined
//! in block order, so results do not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::vq::soar_loss;

pub const MIN_MC_SAMPLES: usize = 100_000;
pub const MC_BLOCK_SAMPLES: usize = 16_384;

/// Fills `out` with a point uniform on the unit sphere.
pub fn sample_unit_sphere(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        let mut sq = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            sq += *v * *v;
        }
        if sq > 0.0 {
            let inv = 1.0 / sq.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Runs `body` over every sample, one accumulator of width `width` per
/// block, and sums the blocks in order.
fn blocked_sums<F>(d: usize, samples: usize, seed: u64, width: usize, body: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let blocks = samples.div_ceil(MC_BLOCK_SAMPLES);
    let partials: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BLOCK_SAMPLES.min(samples - b * MC_BLOCK_SAMPLES);
            let mut q = vec![0f64; d];
            let mut acc = vec![0f64; width];
            for _ in 0..count {
                sample_unit_sphere(&mut rng, &mut q);
                body(&q, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0f64; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_mc(d: usize, samples: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::invalid("d", "Monte-Carlo checks need d >= 2"));
    }
    if samples < MIN_MC_SAMPLES {
        return Err(Error::invalid(
            "samples",
            format!("need at least {MIN_MC_SAMPLES} samples, got {samples}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCheck {
    /// Estimate of `E[|cos θ|^λ ⟨q, r'⟩²]`.
    pub empirical: f64,
    /// `‖r'‖² + λ‖proj_r r'‖²`.
    pub closed_form: f64,
    /// Both relative to the first candidate.
    pub empirical_ratio: f64,
    pub closed_form_ratio: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Check {
    pub lambda: f32,
    pub samples: usize,
    pub candidates: Vec<CandidateCheck>,
    pub max_rel_error: f64,
}

/// Estimates the weighted loss `E[w(cos θ) ⟨q, r'⟩²]` with `w(t) = |t|^λ`
/// for each candidate and compares loss ratios between candidates with the
/// closed form. The overall proportionality constant cancels in the ratios.
pub fn mc_verify_theorem1(
    r: &[f32],
    r_primes: &[Vec<f32>],
    lambda: f32,
    samples: usize,
    seed: u64,
) -> Result<Theorem1Check> {
    let d = r.len();
    check_mc(d, samples)?;
    if r_primes.is_empty() {
        return Err(Error::invalid("r_primes", "need at least one candidate"));
    }
    for rp in r_primes {
        check_dim(d, rp.len())?;
        if rp.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNorm);
        }
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    let r64 = to64(r);
    let r_norm = dot(&r64, &r64).sqrt();
    if r_norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let r_unit: Vec<f64> = r64.iter().map(|v| v / r_norm).collect();
    let cands: Vec<Vec<f64>> = r_primes.iter().map(|v| to64(v)).collect();
    let lam = lambda as f64;
    let weight = move |t: f64| -> f64 {
        let t = t.abs();
        if lam == 0.0 {
            1.0
        } else if lam == 1.0 {
            t
        } else if lam == 2.0 {
            t * t
        } else {
            t.powf(lam)
        }
    };

    let sums = blocked_sums(d, samples, seed, cands.len(), |q, acc| {
        let w = weight(dot(q, &r_unit));
        for (a, c) in acc.iter_mut().zip(&cands) {
            let s = dot(q, c);
            *a += w * s * s;
        }
    });

    let empirical: Vec<f64> = sums.iter().map(|s| s / samples as f64).collect();
    let closed: Vec<f64> = r_primes
        .iter()
        .map(|rp| soar_loss(rp, r, lambda))
        .collect::<Result<_>>()?;
    let candidates: Vec<CandidateCheck> = empirical
        .iter()
        .zip(&closed)
        .map(|(&e, &c)| {
            let er = e / empirical[0];
            let cr = c / closed[0];
            CandidateCheck {
                empirical: e,
                closed_form: c,
                empirical_ratio: er,
                closed_form_ratio: cr,
                rel_error: (er / cr - 1.0).abs(),
            }
        })
        .collect();
    let max_rel_error = candidates.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(Theorem1Check {
        lambda,
        samples,
        candidates,
        max_rel_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheck {
    /// Sample Pearson correlation of `⟨q, r⟩` and `⟨q, r'⟩`.
    pub empirical: f64,
    /// `⟨r, r'⟩ / (‖r‖‖r'‖)`.
    pub closed_form: f64,
    pub abs_error: f64,
}

/// Compares the sample correlation of `⟨q, r⟩` and `⟨q, r'⟩` over sphere
/// queries with the cosine similarity of `r` and `r'`.
pub fn mc_verify_lemma(r: &[f32], r_prime: &[f32], samples: usize, seed: u64) -> Result<LemmaCheck> {
    let d = r.len();
    check_mc(d, samples)?;
    check_dim(d, r_prime.len())?;
    let a = to64(r);
    let b = to64(r_prime);
    let (na, nb) = (dot(&a, &a), dot(&b, &b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let closed_form = (dot(&a, &b) / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);

    let s = blocked_sums(d, samples, seed, 5, |q, acc| {
        let x = dot(q, &a);
        let y = dot(q, &b);
        acc[0] += x;
        acc[1] += y;
        acc[2] += x * x;
        acc[3] += y * y;
        acc[4] += x * y;
    });
    let n = samples as f64;
    let (mx, my) = (s[0] / n, s[1] / n);
    let cov = s[4] / n - mx * my;
    let vx = s[2] / n - mx * mx;
    let vy = s[3] / n - my * my;
    let empirical = (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0);
    Ok(LemmaCheck {
        empirical,
        closed_form,
        abs_error: (empirical - closed_form).abs(),
    })
}
