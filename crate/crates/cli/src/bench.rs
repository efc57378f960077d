use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use soar::eval::{datapoints_to_recall, kmr_curve_from_truth};
use soar::index::SoarIndex;
use soar::io::{encode_fvecs, read_ivecs, write_ivecs};
use soar::{brute_force_mips_batch, Dataset, SearchParams, SpillPolicy};

use crate::commands::{check_queries, lambda_field, load_index, load_vectors, output, usage, Outcome};
use crate::config::Resolved;
use crate::BenchArgs;

pub const KMR_TARGETS: [f64; 4] = [0.8, 0.85, 0.9, 0.95];

fn default_probes(c: usize) -> Vec<usize> {
    let mut p: Vec<usize> = std::iter::successors(Some(1usize), |p| p.checked_mul(2))
        .take_while(|&p| p < c)
        .collect();
    p.push(c);
    p
}

/// Hex digest of the datapoints and queries, naming the cached ground truth.
fn truth_key(x: &Dataset, queries: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(encode_fvecs(x));
    h.update(encode_fvecs(queries));
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn cache_path(queries: &Path, key: &str, k: usize) -> PathBuf {
    let mut name = queries.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".gt-{key}-k{k}.ivecs"));
    queries.with_file_name(name)
}

fn ids_from_ivecs(rows: Vec<Vec<i32>>, nq: usize, k: usize, n: usize) -> Result<Vec<Vec<u32>>> {
    if rows.len() != nq {
        bail!("ground truth has {} rows for {nq} queries", rows.len());
    }
    rows.into_iter()
        .enumerate()
        .map(|(q, row)| {
            if row.len() < k {
                bail!("ground truth row {q} has {} ids, need {k}", row.len());
            }
            row[..k]
                .iter()
                .map(|&id| match u32::try_from(id) {
                    Ok(id) if (id as usize) < n => Ok(id),
                    _ => bail!("ground truth row {q} has out-of-range id {id}"),
                })
                .collect()
        })
        .collect()
}

/// Exact top-`k` ids, read from or written to the cache beside `queries_path`.
fn exact_truth(index: &SoarIndex, queries: &Dataset, queries_path: &Path, k: usize) -> Result<Vec<Vec<u32>>> {
    let key = truth_key(index.full_store(), queries);
    let path = cache_path(queries_path, &key, k);
    if path.exists() {
        let rows = read_ivecs(&path).with_context(|| format!("reading {}", path.display()))?;
        return ids_from_ivecs(rows, queries.n(), k, index.n());
    }
    let truth: Vec<Vec<u32>> = brute_force_mips_batch(queries, index.full_store(), k)?
        .into_iter()
        .map(|ns| ns.into_iter().map(|n| n.id).collect())
        .collect();
    let rows: Vec<Vec<i32>> = truth.iter().map(|t| t.iter().map(|&id| id as i32).collect()).collect();
    write_ivecs(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
    Ok(truth)
}

struct Row {
    policy: SpillPolicy,
    probes: usize,
    datapoints: f64,
    recall: f64,
    latency_us: f64,
}

pub fn bench(a: &BenchArgs) -> Result<Outcome> {
    if a.gt.is_none() && !a.exact {
        return Err(usage("either --gt or --exact is required"));
    }
    if a.k == 0 {
        return Err(usage("--k must be >= 1"));
    }
    if a.probes.as_ref().is_some_and(|p| p.is_empty() || p.contains(&0)) {
        return Err(usage("--probes values must be >= 1"));
    }
    let queries = load_vectors(&a.queries)?;
    let indices: Vec<SoarIndex> = a.index.iter().map(|p| load_index(p)).collect::<Result<_>>()?;
    for idx in &indices {
        check_queries(idx, &queries)?;
        if a.k > idx.n() {
            return Err(usage(format!("--k must be <= n={}", idx.n())));
        }
    }
    let given = match &a.gt {
        Some(p) => {
            let rows = read_ivecs(p).with_context(|| format!("reading {}", p.display()))?;
            Some(rows)
        }
        None => None,
    };

    let mut cfg = Resolved::new("bench");
    let names: Vec<String> = a.index.iter().map(|p| p.display().to_string()).collect();
    cfg.set("index", names.join(","))
        .set("queries", a.queries.display())
        .opt("gt", a.gt.as_ref().map(|p| p.display()))
        .set("exact", a.exact)
        .set("k", a.k)
        .opt("probes", a.probes.as_ref().map(|p| p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")))
        .set("rerank", a.rerank.map(|r| r.to_string()).unwrap_or_else(|| "all".into()));
    for (i, idx) in indices.iter().enumerate() {
        cfg.set(&format!("index{i}_policy"), idx.policy().name())
            .set(&format!("index{i}_seed"), idx.seed());
    }

    let mut rows = Vec::new();
    let mut kmr = Vec::new();
    let mut truth_cache: HashMap<String, Vec<Vec<u32>>> = HashMap::new();
    for idx in &indices {
        let truth = match &given {
            Some(g) => ids_from_ivecs(g.clone(), queries.n(), a.k, idx.n())?,
            None => {
                let key = truth_key(idx.full_store(), &queries);
                match truth_cache.get(&key) {
                    Some(t) => t.clone(),
                    None => {
                        let t = exact_truth(idx, &queries, &a.queries, a.k)?;
                        truth_cache.insert(key, t.clone());
                        t
                    }
                }
            }
        };
        let probes = a.probes.clone().unwrap_or_else(|| default_probes(idx.c()));
        for &p in &probes {
            let params = SearchParams::new(a.k, p).with_rerank(a.rerank.unwrap_or(idx.n()));
            let (mut scanned, mut hits, mut elapsed) = (0usize, 0usize, 0f64);
            for (q, want) in queries.rows().zip(&truth) {
                let t0 = Instant::now();
                let res = idx.search(q, &params)?;
                elapsed += t0.elapsed().as_secs_f64();
                scanned += res.datapoints_scanned;
                hits += res.neighbors.iter().filter(|n| want.contains(&n.id)).count();
            }
            let nq = queries.n() as f64;
            rows.push(Row {
                policy: idx.policy(),
                probes: p,
                datapoints: scanned as f64 / nq,
                recall: hits as f64 / (nq * a.k as f64),
                latency_us: elapsed * 1e6 / nq,
            });
        }
        let curve = kmr_curve_from_truth(&queries, &truth, idx, a.k)?;
        let dps: Vec<f64> = KMR_TARGETS
            .iter()
            .map(|&t| datapoints_to_recall(&curve, t))
            .collect::<soar::Result<_>>()?;
        kmr.push((idx.policy(), dps));
    }

    let mut out = output(a.out.as_deref())?;
    write!(out, "{}", cfg.header())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "lambda", "probes", "datapoints_scanned", "recall", "mean_latency_us"])?;
    for r in &rows {
        w.write_record([
            r.policy.name().to_string(),
            lambda_field(r.policy),
            r.probes.to_string(),
            format!("{:.3}", r.datapoints),
            format!("{:.6}", r.recall),
            format!("{:.3}", r.latency_us),
        ])?;
    }
    w.flush()?;
    drop(w);

    let baseline = kmr.iter().find(|(p, _)| *p == SpillPolicy::None).map(|(_, d)| d.clone());
    let mut out = output(a.kmr_out.as_deref())?;
    if a.kmr_out.is_some() {
        write!(out, "{}", cfg.header())?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "lambda", "target_recall", "datapoints", "gain_vs_none"])?;
    for (policy, dps) in &kmr {
        for (i, (&t, &dp)) in KMR_TARGETS.iter().zip(dps).enumerate() {
            let gain = baseline.as_ref().map(|b| format!("{:.4}", b[i] / dp)).unwrap_or_default();
            w.write_record([
                policy.name().to_string(),
                lambda_field(*policy),
                t.to_string(),
                format!("{dp:.3}"),
                gain,
            ])?;
        }
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_probes_end_at_c() {
        assert_eq!(default_probes(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(default_probes(8), vec![1, 2, 4, 8]);
        assert_eq!(default_probes(1), vec![1]);
    }

    #[test]
    fn cache_path_sits_beside_queries() {
        let p = cache_path(Path::new("/data/q.fvecs"), "abcd", 10);
        assert_eq!(p, PathBuf::from("/data/q.fvecs.gt-abcd-k10.ivecs"));
    }

    #[test]
    fn ivecs_truth_validation() {
        assert_eq!(ids_from_ivecs(vec![vec![3, 1, 2]], 1, 2, 4).unwrap(), vec![vec![3, 1]]);
        assert!(ids_from_ivecs(vec![vec![3]], 1, 2, 4).is_err());
        assert!(ids_from_ivecs(vec![vec![3, -1]], 1, 2, 4).is_err());
        assert!(ids_from_ivecs(vec![vec![3, 9]], 1, 2, 4).is_err());
        assert!(ids_from_ivecs(vec![], 1, 2, 4).is_err());
    }
}
