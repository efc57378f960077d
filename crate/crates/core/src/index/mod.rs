//! The searchable inverted-file index.
//!
//! Build order: k-means codebook, primary assignment, optional spill pass,
//! primary residuals, PQ training on those residuals, then one posting per
//! (datapoint, assigned partition) holding the id and the PQ code of the
//! residual against that partition's center. Full-precision vectors are
//! stored once regardless of spilling.

mod format;
mod search;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kmeans::DEFAULT_MAX_ITERS;
use crate::pq::{train_pq_with, PqCodebook};
use crate::vector::residual_into;
use crate::vq::{assign_primary, assign_spilled, train_kmeans, AssignmentTable, Codebook, SpillPolicy};

pub use format::{FORMAT_VERSION, HEADER_BYTES, MAGIC};
pub use search::{SearchOutput, SearchParams};

/// Default cap on residuals used for PQ training.
pub const DEFAULT_PQ_TRAIN_LIMIT: usize = 50_000;

const PQ_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SAMPLE_SEED_SALT: u64 = 0x2545_f491_4f6c_dd1d;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildParams {
    /// Number of partitions.
    pub c: usize,
    pub policy: SpillPolicy,
    /// Dimensions per PQ subspace.
    pub s: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub pq_iters: usize,
    /// Train PQ on a seeded sample of at most this many residuals.
    pub pq_train_limit: Option<usize>,
}

impl BuildParams {
    pub fn new(c: usize, policy: SpillPolicy, s: usize, seed: u64) -> Self {
        Self {
            c,
            policy,
            s,
            seed,
            kmeans_iters: DEFAULT_MAX_ITERS,
            pq_iters: DEFAULT_MAX_ITERS,
            pq_train_limit: Some(DEFAULT_PQ_TRAIN_LIMIT),
        }
    }
}

/// One partition's postings: primary entries first, then spilled ones, each
/// group in ascending id order. `codes` holds `code_bytes` per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    pub ids: Vec<u32>,
    pub codes: Vec<u8>,
    pub primary_len: usize,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoarIndex {
    codebook: Codebook,
    pq: PqCodebook,
    postings: Vec<PostingList>,
    full_store: Dataset,
    assignment: AssignmentTable,
    seed: u64,
}

/// Trains the codebook and builds the index.
pub fn build(x: &Dataset, params: &BuildParams) -> Result<SoarIndex> {
    if params.policy.is_spilled() && params.c < 2 {
        return Err(Error::invalid("c", "spilled policies need at least 2 partitions"));
    }
    let codebook = train_kmeans(x, params.c, params.kmeans_iters, params.seed)?;
    build_with_codebook(x, codebook, params)
}

/// Builds the index over an already-trained codebook. With the same seed the
/// PQ codebook depends only on the primary assignment, so indices of
/// different policies built from one codebook share it.
pub fn build_with_codebook(x: &Dataset, codebook: Codebook, params: &BuildParams) -> Result<SoarIndex> {
    check_dim(codebook.d(), x.d())?;
    if codebook.c() != params.c {
        return Err(Error::invalid("c", format!("codebook has {} centers, params say {}", codebook.c(), params.c)));
    }
    if x.n() > u32::MAX as usize {
        return Err(Error::invalid("n", "datapoint ids must fit in 32 bits"));
    }
    let primary = assign_primary(x, &codebook)?;
    let assignment = assign_spilled(x, &codebook, &primary, params.policy)?;

    let train_ids = pq_sample(x.n(), params.pq_train_limit, params.seed);
    let d = x.d();
    let mut residuals = vec![0f32; train_ids.len() * d];
    for (out, &i) in residuals.chunks_exact_mut(d).zip(&train_ids) {
        residual_into(x.row(i), codebook.center(assignment.primary[i] as usize), out);
    }
    let residuals = Dataset::from_parts_unchecked(residuals, train_ids.len(), d);
    let pq = train_pq_with(&residuals, params.s, params.pq_iters, params.seed ^ PQ_SEED_SALT)?.book;

    let postings = encode_postings(x, &codebook, &pq, &assignment);
    Ok(SoarIndex {
        codebook,
        pq,
        postings,
        full_store: x.clone(),
        assignment,
        seed: params.seed,
    })
}

fn pq_sample(n: usize, limit: Option<usize>, seed: u64) -> Vec<usize> {
    match limit {
        Some(l) if l > 0 && l < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLE_SEED_SALT);
            let mut ids = rand::seq::index::sample(&mut rng, n, l).into_vec();
            ids.sort_unstable();
            ids
        }
        _ => (0..n).collect(),
    }
}

fn encode_postings(x: &Dataset, book: &Codebook, pq: &PqCodebook, table: &AssignmentTable) -> Vec<PostingList> {
    let c = book.c();
    let cb = pq.code_bytes();
    let mut members: Vec<(Vec<u32>, usize)> = vec![(Vec::new(), 0); c];
    for (i, &p) in table.primary.iter().enumerate() {
        members[p as usize].0.push(i as u32);
    }
    for m in members.iter_mut() {
        m.1 = m.0.len();
    }
    if let Some(sp) = &table.spilled {
        for (i, &p) in sp.iter().enumerate() {
            members[p as usize].0.push(i as u32);
        }
    }
    members
        .into_par_iter()
        .enumerate()
        .map(|(p, (ids, primary_len))| {
            let center = book.center(p);
            let mut codes = vec![0u8; ids.len() * cb];
            let mut r = vec![0f32; x.d()];
            for (&id, out) in ids.iter().zip(codes.chunks_exact_mut(cb.max(1))) {
                residual_into(x.row(id as usize), center, &mut r);
                pq.encode_into(&r, out);
            }
            PostingList {
                ids,
                codes,
                primary_len,
            }
        })
        .collect()
}

impl SoarIndex {
    pub(crate) fn from_parts(
        codebook: Codebook,
        pq: PqCodebook,
        postings: Vec<PostingList>,
        full_store: Dataset,
        assignment: AssignmentTable,
        seed: u64,
    ) -> Self {
        Self {
            codebook,
            pq,
            postings,
            full_store,
            assignment,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.full_store.n()
    }

    pub fn d(&self) -> usize {
        self.full_store.d()
    }

    pub fn c(&self) -> usize {
        self.codebook.c()
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn pq_codebook(&self) -> &PqCodebook {
        &self.pq
    }

    pub fn postings(&self) -> &[PostingList] {
        &self.postings
    }

    pub fn full_store(&self) -> &Dataset {
        &self.full_store
    }

    pub fn assignment(&self) -> &AssignmentTable {
        &self.assignment
    }

    pub fn policy(&self) -> SpillPolicy {
        self.assignment.policy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn posting_sizes(&self) -> Vec<usize> {
        self.postings.iter().map(PostingList::len).collect()
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(PostingList::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gaussian_mixture;

    fn small(policy: SpillPolicy) -> (Dataset, SoarIndex) {
        let x = gaussian_mixture(100, 8, 5, 0.3, 1).unwrap();
        let idx = build(&x, &BuildParams::new(4, policy, 2, 7)).unwrap();
        (x, idx)
    }

    #[test]
    fn unspilled_postings_cover_each_point_once() {
        let (_, idx) = small(SpillPolicy::None);
        assert_eq!(idx.total_postings(), 100);
        let mut seen = vec![0; 100];
        for p in idx.postings() {
            assert_eq!(p.primary_len, p.len());
            for &id in &p.ids {
                seen[id as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn spilled_postings_cover_each_point_twice_in_distinct_partitions() {
        for policy in [SpillPolicy::Naive, SpillPolicy::Soar { lambda: 1.0 }] {
            let (_, idx) = small(policy);
            assert_eq!(idx.total_postings(), 200);
            let mut parts: Vec<Vec<usize>> = vec![Vec::new(); 100];
            for (p, list) in idx.postings().iter().enumerate() {
                for &id in &list.ids {
                    parts[id as usize].push(p);
                }
            }
            for (i, ps) in parts.iter().enumerate() {
                assert_eq!(ps.len(), 2);
                assert_ne!(ps[0], ps[1]);
                let mut want: Vec<usize> = idx.assignment().partitions_of(i).map(|p| p as usize).collect();
                want.sort_unstable();
                assert_eq!(ps, &want);
            }
            assert_eq!(idx.full_store().n(), 100);
        }
    }

    #[test]
    fn posting_codes_encode_residual_against_their_partition() {
        let (x, idx) = small(SpillPolicy::Soar { lambda: 1.0 });
        let cb = idx.pq_codebook().code_bytes();
        for (p, list) in idx.postings().iter().enumerate() {
            for (k, &id) in list.ids.iter().enumerate() {
                let r = crate::vector::residual(x.row(id as usize), idx.codebook().center(p)).unwrap();
                let code = idx.pq_codebook().encode(&r).unwrap();
                assert_eq!(&list.codes[k * cb..(k + 1) * cb], code.0.as_slice());
            }
        }
    }

    #[test]
    fn deterministic_build() {
        let (_, a) = small(SpillPolicy::Soar { lambda: 1.0 });
        let (_, b) = small(SpillPolicy::Soar { lambda: 1.0 });
        assert_eq!(a, b);
    }

    #[test]
    fn spilled_policy_needs_two_partitions() {
        let x = gaussian_mixture(20, 4, 2, 0.1, 0).unwrap();
        assert!(build(&x, &BuildParams::new(1, SpillPolicy::Naive, 2, 0)).is_err());
        assert!(build(&x, &BuildParams::new(1, SpillPolicy::None, 2, 0)).is_ok());
    }

    #[test]
    fn pq_sample_is_sorted_subset() {
        let ids = pq_sample(1000, Some(100), 5);
        assert_eq!(ids.len(), 100);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(pq_sample(10, Some(100), 5), (0..10).collect::<Vec<_>>());
        assert_eq!(pq_sample(10, None, 5).len(), 10);
    }
}
