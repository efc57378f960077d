//! Dense vector math and the exhaustive MIPS oracle.
//!
//! Every reduction accumulates in `f64` over four fixed lanes and emits
//! `f32`, so results are reproducible bit-for-bit across platforms and
//! thread counts. Kernels that must agree exactly with each other (the
//! Euclidean distance used for assignment and the residual norm used by the
//! spilled-assignment loss) share the same lane structure.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};

/// A search result: datapoint id and its inner-product score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub score: f32,
}

impl Neighbor {
    pub fn new(id: u32, score: f32) -> Self {
        Self { id, score }
    }

    /// Result ordering: score descending, ties by ascending id.
    #[inline]
    pub fn result_order(a: &Neighbor, b: &Neighbor) -> Ordering {
        b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
    }
}

#[inline]
pub(crate) fn dot64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn sq_norm64(a: &[f32]) -> f64 {
    dot64(a, a)
}

/// Squared Euclidean distance. The per-coordinate difference is rounded to
/// `f32` first, so this equals `sq_norm64(residual(a, b))` exactly.
#[inline]
pub(crate) fn sq_l2_64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let t = (x[l] - y[l]) as f64;
            acc[l] += t * t;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        let t = (*x - *y) as f64;
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Writes `x - c` into `out`.
#[inline]
pub(crate) fn residual_into(x: &[f32], c: &[f32], out: &mut [f32]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(c) {
        *o = *a - *b;
    }
}

/// `⟨a, b⟩`.
pub fn inner_product(a: &[f32], b: &[f32]) -> Result<f32> {
    check_dim(a.len(), b.len())?;
    Ok(dot64(a, b) as f32)
}

/// Unchecked variant used on hot paths where dimensions are validated once.
#[inline]
pub(crate) fn ip(a: &[f32], b: &[f32]) -> f32 {
    dot64(a, b) as f32
}

/// Scores every row of `x` against `q`.
pub(crate) fn scores(q: &[f32], x: &Dataset) -> Vec<f32> {
    x.rows().map(|row| ip(q, row)).collect()
}

/// Sorts `items` by result order and keeps the first `k`.
pub(crate) fn top_k(mut items: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if k < items.len() {
        items.select_nth_unstable_by(k, Neighbor::result_order);
        items.truncate(k);
    }
    items.sort_unstable_by(Neighbor::result_order);
    items
}

/// Exact top-`k` by inner product.
pub fn brute_force_mips(q: &[f32], x: &Dataset, k: usize) -> Result<Vec<Neighbor>> {
    check_dim(x.d(), q.len())?;
    if k == 0 || k > x.n() {
        return Err(Error::invalid(
            "k",
            format!("must be in [1, n={}], got {k}", x.n()),
        ));
    }
    let all = scores(q, x)
        .into_iter()
        .enumerate()
        .map(|(i, s)| Neighbor::new(i as u32, s))
        .collect();
    Ok(top_k(all, k))
}

/// [`brute_force_mips`] for every row of `queries`, in parallel.
pub fn brute_force_mips_batch(queries: &Dataset, x: &Dataset, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    check_dim(x.d(), queries.d())?;
    (0..queries.n())
        .into_par_iter()
        .map(|qi| brute_force_mips(queries.row(qi), x, k))
        .collect()
}

/// Number of rows `x` with `⟨q, x⟩ ≥ ⟨q, v⟩`.
pub fn rank(q: &[f32], v: &[f32], x: &Dataset) -> Result<usize> {
    check_dim(q.len(), v.len())?;
    check_dim(x.d(), q.len())?;
    let target = ip(q, v);
    Ok(x.rows().filter(|row| ip(q, row) >= target).count())
}

/// Rank of `target` within precomputed `scores`.
#[inline]
pub(crate) fn rank_of_score(scores: &[f32], target: f32) -> usize {
    scores.iter().filter(|&&s| s >= target).count()
}

/// The partitioning residual `x - c`.
pub fn residual(x: &[f32], c: &[f32]) -> Result<Vec<f32>> {
    check_dim(x.len(), c.len())?;
    let mut out = vec![0.0; x.len()];
    residual_into(x, c, &mut out);
    Ok(out)
}

/// Cosine of the angle between `q` and `r`, clamped to `[-1, 1]`.
pub fn cos_angle(q: &[f32], r: &[f32]) -> Result<f32> {
    check_dim(q.len(), r.len())?;
    cos64(q, r).map(|c| c as f32).ok_or(Error::ZeroNorm)
}

#[inline]
pub(crate) fn cos64(a: &[f32], b: &[f32]) -> Option<f64> {
    let na = sq_norm64(a);
    let nb = sq_norm64(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot64(a, b) / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f32> {
        (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn inner_product_by_hand() {
        assert_eq!(inner_product(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(inner_product(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(matches!(
            inner_product(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn inner_product_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = random_vec(&mut rng, 128);
            let b = random_vec(&mut rng, 128);
            let mut oracle = 0f64;
            for i in 0..128 {
                oracle += a[i] as f64 * b[i] as f64;
            }
            let got = inner_product(&a, &b).unwrap() as f64;
            assert!((got - oracle).abs() <= 1e-4 * oracle.abs().max(1e-3), "{got} vs {oracle}");
        }
    }

    #[test]
    fn brute_force_picks_largest() {
        let x = Dataset::from_rows(&[[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]]).unwrap();
        let r = brute_force_mips(&[1.0, 0.0], &x, 1).unwrap();
        assert_eq!(r, vec![Neighbor::new(1, 2.0)]);
        assert!(brute_force_mips(&[1.0, 0.0], &x, 4).is_err());
        assert!(brute_force_mips(&[1.0, 0.0], &x, 0).is_err());
    }

    #[test]
    fn brute_force_full_is_sorted_permutation() {
        let x = Dataset::from_rows(&[[0.0, 1.0], [2.0, 0.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        let r = brute_force_mips(&[1.0, 0.0], &x, 4).unwrap();
        let ids: Vec<u32> = r.iter().map(|n| n.id).collect();
        // ids 2 and 3 tie at 1.0, broken by ascending id
        assert_eq!(ids, vec![1, 2, 3, 0]);
    }

    #[test]
    fn brute_force_matches_sort_all_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f32>> = (0..1000).map(|_| random_vec(&mut rng, 16)).collect();
        let x = Dataset::from_rows(&rows).unwrap();
        for _ in 0..5 {
            let q = random_vec(&mut rng, 16);
            let mut all: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum(), i))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut oracle: Vec<u32> = all[..10].iter().map(|p| p.1 as u32).collect();
            let mut got: Vec<u32> = brute_force_mips(&q, &x, 10).unwrap().iter().map(|n| n.id).collect();
            oracle.sort_unstable();
            got.sort_unstable();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn rank_by_hand() {
        let x = Dataset::from_rows(&[[2.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(rank(&[1.0, 0.0], &[1.0, 0.0], &x).unwrap(), 2);
        assert_eq!(rank(&[1.0, 0.0], &[2.0, 0.0], &x).unwrap(), 1);
        // not a member, beats everything
        assert_eq!(rank(&[1.0, 0.0], &[5.0, 0.0], &x).unwrap(), 0);
    }

    #[test]
    fn rank_matches_counting_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f32>> = (0..300).map(|_| random_vec(&mut rng, 8)).collect();
        let x = Dataset::from_rows(&rows).unwrap();
        for _ in 0..20 {
            let q = random_vec(&mut rng, 8);
            let v = random_vec(&mut rng, 8);
            let sv: f64 = q.iter().zip(&v).map(|(a, b)| *a as f64 * *b as f64).sum();
            let mut count = 0;
            for r in &rows {
                let s: f64 = q.iter().zip(r).map(|(a, b)| *a as f64 * *b as f64).sum();
                if s >= sv {
                    count += 1;
                }
            }
            assert_eq!(rank(&q, &v, &x).unwrap(), count);
        }
    }

    #[test]
    fn residual_by_hand() {
        assert_eq!(residual(&[3.0, 4.0], &[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(residual(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        assert!(residual(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn cos_angle_by_hand() {
        assert_eq!(cos_angle(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        assert!((cos_angle(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-7);
        assert_eq!(cos_angle(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cos_angle(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::ZeroNorm));
    }

    #[test]
    fn sq_l2_equals_norm_of_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [1, 3, 4, 7, 64] {
            let a = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            let r = residual(&a, &b).unwrap();
            assert_eq!(sq_l2_64(&a, &b).to_bits(), sq_norm64(&r).to_bits());
        }
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-10.0f32..10.0, d)
    }

    proptest! {
        #[test]
        fn top_of_full_list_has_rank_one(
            rows in proptest::collection::vec(vec_strategy(4), 1..40),
            q in vec_strategy(4),
        ) {
            let x = Dataset::from_rows(&rows).unwrap();
            let all = brute_force_mips(&q, &x, x.n()).unwrap();
            let mut ids: Vec<u32> = all.iter().map(|n| n.id).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..x.n() as u32).collect::<Vec<_>>());
            for w in all.windows(2) {
                prop_assert!(Neighbor::result_order(&w[0], &w[1]) != Ordering::Greater);
            }
            let top = x.row(all[0].id as usize);
            let distinct = all.len() == 1 || all[0].score > all[1].score;
            if distinct {
                prop_assert_eq!(rank(&q, top, &x).unwrap(), 1);
            }
        }

        #[test]
        fn rank_is_monotone(
            rows in proptest::collection::vec(vec_strategy(3), 1..30),
            q in vec_strategy(3),
            v in vec_strategy(3),
            step in 0.0f32..5.0,
        ) {
            let x = Dataset::from_rows(&rows).unwrap();
            // moving v along q raises ⟨q, v⟩
            let v2: Vec<f32> = v.iter().zip(&q).map(|(a, b)| a + step * b).collect();
            prop_assert!(rank(&q, &v2, &x).unwrap() <= rank(&q, &v, &x).unwrap());
        }

        #[test]
        fn residual_reconstructs(x in vec_strategy(5), c in vec_strategy(5), q in vec_strategy(5)) {
            let r = residual(&x, &c).unwrap();
            for i in 0..5 {
                prop_assert!((c[i] + r[i] - x[i]).abs() <= 1e-5 * x[i].abs().max(1.0));
            }
            let lhs = dot64(&q, &x) - dot64(&q, &c);
            let rhs = dot64(&q, &r);
            prop_assert!((lhs - rhs).abs() <= 1e-3);
        }

        #[test]
        fn cos_angle_scale_invariant(
            q in vec_strategy(6),
            r in vec_strategy(6),
            a in 0.1f32..10.0,
            b in 0.1f32..10.0,
        ) {
            prop_assume!(sq_norm64(&q) > 1e-3 && sq_norm64(&r) > 1e-3);
            let qs: Vec<f32> = q.iter().map(|v| v * a).collect();
            let rs: Vec<f32> = r.iter().map(|v| v * b).collect();
            let c0 = cos_angle(&q, &r).unwrap();
            let c1 = cos_angle(&qs, &rs).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-5);
            prop_assert!((-1.0..=1.0).contains(&c0));
        }
    }
}
