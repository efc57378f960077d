use crate::error::{check_dim, Error, Result};
use crate::vector::{ip, top_k, Neighbor};

use super::SoarIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub k: usize,
    /// Partitions to scan, in descending order of `⟨q, center⟩`. Values
    /// above `c` are clamped.
    pub probes: usize,
    /// Deduplicated candidates re-scored at full precision.
    pub rerank: usize,
    /// When set, replaces `probes`: whole partitions are scanned until the
    /// next one would push the scanned posting count past the budget.
    pub budget: Option<usize>,
}

impl SearchParams {
    pub fn new(k: usize, probes: usize) -> Self {
        Self {
            k,
            probes,
            rerank: default_rerank(k),
            budget: None,
        }
    }

    pub fn with_rerank(mut self, rerank: usize) -> Self {
        self.rerank = rerank;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }
}

pub fn default_rerank(k: usize) -> usize {
    (10 * k).max(100)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    pub neighbors: Vec<Neighbor>,
    /// Posting entries visited; a spilled datapoint seen twice counts twice.
    pub datapoints_scanned: usize,
    pub partitions_scanned: usize,
}

impl SoarIndex {
    /// Partition ids ordered by `⟨q, center⟩` descending, ties by id.
    pub fn rank_partitions(&self, q: &[f32]) -> Vec<(u32, f32)> {
        let mut order: Vec<Neighbor> = self
            .codebook
            .centers()
            .rows()
            .enumerate()
            .map(|(j, c)| Neighbor::new(j as u32, ip(q, c)))
            .collect();
        order.sort_unstable_by(Neighbor::result_order);
        order.into_iter().map(|n| (n.id, n.score)).collect()
    }

    pub fn search(&self, q: &[f32], params: &SearchParams) -> Result<SearchOutput> {
        check_dim(self.d(), q.len())?;
        if params.k == 0 || params.k > self.n() {
            return Err(Error::invalid("k", format!("must be in [1, n={}], got {}", self.n(), params.k)));
        }
        if params.probes == 0 && params.budget.is_none() {
            return Err(Error::invalid("probes", "must be >= 1"));
        }
        if params.rerank < params.k {
            return Err(Error::invalid("rerank", format!("must be >= k={}", params.k)));
        }

        let ranked = self.rank_partitions(q);
        let lut = self.pq.lookup_table(q)?;
        let cb = self.pq.code_bytes();

        let mut candidates: Vec<Neighbor> = Vec::new();
        let mut scanned = 0usize;
        let mut partitions = 0usize;
        for &(p, center_score) in &ranked {
            let list = &self.postings[p as usize];
            match params.budget {
                Some(b) if scanned + list.len() > b => break,
                None if partitions == params.probes => break,
                _ => {}
            }
            partitions += 1;
            scanned += list.len();
            candidates.reserve(list.len());
            for (&id, code) in list.ids.iter().zip(list.codes.chunks_exact(cb)) {
                let approx = center_score + lut.score_bytes(code);
                candidates.push(Neighbor::new(id, approx));
            }
        }

        // keep the best approximate score per id
        candidates.sort_unstable_by(|a, b| a.id.cmp(&b.id).then(b.score.total_cmp(&a.score)));
        candidates.dedup_by_key(|n| n.id);

        let shortlist = top_k(candidates, params.rerank);
        let exact = shortlist
            .into_iter()
            .map(|n| Neighbor::new(n.id, ip(q, self.full_store.row(n.id as usize))))
            .collect();
        Ok(SearchOutput {
            neighbors: top_k(exact, params.k),
            datapoints_scanned: scanned,
            partitions_scanned: partitions,
        })
    }
}
