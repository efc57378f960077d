use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use soar::eval::{diagnostics, mc_verify_lemma, mc_verify_theorem1};
use soar::index::SoarIndex;
use soar::io::{read_fvecs, write_fvecs};
use soar::pq::ID_BYTES;
use soar::synth::GaussianMixture;
use soar::vq::DEFAULT_LAMBDA;
use soar::{build as build_index, memory_accounting, BuildParams, Dataset, Precision, SearchParams, SpillPolicy};

use crate::config::Resolved;
use crate::{BuildArgs, DiagnoseArgs, PolicyArg, SearchArgs, SynthArgs, UsageError, VerifyArgs};

/// Salt separating query sampling from datapoint sampling.
const QUERY_SEED_SALT: u64 = 0x51_7cc1_b727_220a;
/// Datapoints per partition when `c` is not given.
const POINTS_PER_PARTITION: usize = 400;

pub enum Outcome {
    Ok,
    VerificationFailed,
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Writes to `path`, or stdout when absent.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn load_index(path: &Path) -> Result<SoarIndex> {
    SoarIndex::load(path).with_context(|| format!("loading index {}", path.display()))
}

pub fn load_vectors(path: &Path) -> Result<Dataset> {
    read_fvecs(path).with_context(|| format!("reading {}", path.display()))
}

pub fn check_queries(index: &SoarIndex, queries: &Dataset) -> Result<()> {
    if index.d() != queries.d() {
        anyhow::bail!("queries have d={} but the index has d={}", queries.d(), index.d());
    }
    Ok(())
}

pub fn lambda_field(policy: SpillPolicy) -> String {
    policy.lambda().map(|l| l.to_string()).unwrap_or_default()
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    if a.n == 0 || a.d == 0 || a.clusters == 0 {
        return Err(usage("--n, --d and --clusters must be >= 1"));
    }
    if a.queries == Some(0) {
        return Err(usage("--queries must be >= 1"));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(usage("--sigma must be finite and >= 0"));
    }
    if !(a.decay >= 0.0 && a.decay.is_finite()) {
        return Err(usage("--decay must be finite and >= 0"));
    }
    let mut cfg = Resolved::new("synth");
    cfg.set("n", a.n)
        .set("d", a.d)
        .set("clusters", a.clusters)
        .set("sigma", a.sigma)
        .set("decay", a.decay)
        .set("seed", a.seed)
        .set("normalize", a.normalize)
        .set("out", a.out.display())
        .opt("queries", a.queries)
        .opt("queries_out", a.queries_out.as_ref().map(|p| p.display()));
    let mixture = GaussianMixture::new(a.d, a.clusters, a.seed)?.with_decay(a.decay)?;
    let finish = |x: Dataset| if a.normalize { x.normalized() } else { x };
    let x = finish(mixture.sample(a.n, a.sigma, a.seed)?);
    write_fvecs(&a.out, &x).with_context(|| format!("writing {}", a.out.display()))?;
    if let (Some(nq), Some(path)) = (a.queries, &a.queries_out) {
        let q = finish(mixture.sample(nq, a.sigma, a.seed ^ QUERY_SEED_SALT)?);
        write_fvecs(path, &q).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", cfg.header());
    Ok(Outcome::Ok)
}

fn policy_of(a: &BuildArgs) -> Result<SpillPolicy> {
    match (a.policy, a.lambda) {
        (PolicyArg::Soar, l) => SpillPolicy::soar(l.unwrap_or(DEFAULT_LAMBDA)).map_err(|e| usage(e.to_string())),
        (_, Some(_)) => Err(usage("--lambda requires --policy soar")),
        (PolicyArg::None, None) => Ok(SpillPolicy::None),
        (PolicyArg::Naive, None) => Ok(SpillPolicy::Naive),
    }
}

pub fn build(a: &BuildArgs) -> Result<Outcome> {
    let policy = policy_of(a)?;
    if a.s == 0 {
        return Err(usage("--s must be >= 1"));
    }
    let x = load_vectors(&a.dataset)?;
    let c = a.c.unwrap_or((x.n() / POINTS_PER_PARTITION).max(2));
    if c < 2 || c > x.n() {
        return Err(usage(format!("--c must be in [2, n={}], got {c}", x.n())));
    }
    let mut params = BuildParams::new(c, policy, a.s, a.seed);
    params.kmeans_iters = a.kmeans_iters;
    params.pq_train_limit = (a.pq_train_limit > 0).then_some(a.pq_train_limit);

    let mut cfg = Resolved::new("build");
    cfg.set("dataset", a.dataset.display())
        .set("out", a.out.display())
        .set("c", c)
        .set("policy", policy.name())
        .opt("lambda", policy.lambda())
        .set("s", a.s)
        .set("seed", a.seed)
        .set("kmeans_iters", a.kmeans_iters)
        .set("pq_train_limit", a.pq_train_limit);

    let started = Instant::now();
    let index = build_index(&x, &params)?;
    let build_secs = started.elapsed().as_secs_f64();
    index.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let file_bytes = index.serialized_len();

    let mem = memory_accounting(x.n(), x.d(), a.s, Precision::Float32, policy.is_spilled())?;
    let int8 = memory_accounting(x.n(), x.d(), a.s, Precision::Int8, policy.is_spilled())?;
    let spilled_entries: usize = index.postings().iter().map(|p| p.len() - p.primary_len).sum();
    let actual_delta = spilled_entries * (ID_BYTES + index.pq_codebook().code_bytes());

    let mut out = io::stdout().lock();
    write!(out, "{}", cfg.header())?;
    writeln!(out, "n={}", x.n())?;
    writeln!(out, "d={}", x.d())?;
    writeln!(out, "posting_entries={}", index.total_postings())?;
    writeln!(out, "build_seconds={build_secs:.3}")?;
    writeln!(out, "file_bytes={file_bytes}")?;
    writeln!(out, "pq_code_bytes={}", mem.code_bytes)?;
    writeln!(out, "spilled_bytes_per_point={}", mem.per_point_pq)?;
    writeln!(out, "full_bytes_per_point={}", mem.per_point_full)?;
    writeln!(out, "predicted_spill_bytes={}", mem.soar_overhead_bytes)?;
    writeln!(out, "actual_spill_bytes={actual_delta}")?;
    writeln!(out, "relative_increase_float32={:.6}", mem.relative_increase)?;
    writeln!(out, "relative_increase_int8={:.6}", int8.relative_increase)?;
    writeln!(out, "growth_over_unspilled_float32={:.6}", mem.growth_over_unspilled)?;
    writeln!(out, "approx_relative_increase_float32={:.6}", mem.approx_relative_increase)?;
    writeln!(out, "approx_relative_increase_int8={:.6}", int8.approx_relative_increase)?;
    Ok(Outcome::Ok)
}

pub fn search(a: &SearchArgs) -> Result<Outcome> {
    let index = load_index(&a.index)?;
    let queries = load_vectors(&a.queries)?;
    check_queries(&index, &queries)?;
    if a.k == 0 || a.k > index.n() {
        return Err(usage(format!("--k must be in [1, n={}]", index.n())));
    }
    if a.probes == 0 {
        return Err(usage("--probes must be >= 1"));
    }
    let mut params = SearchParams::new(a.k, a.probes);
    if let Some(r) = a.rerank {
        params = params.with_rerank(r);
    }
    if let Some(b) = a.budget {
        params = params.with_budget(b);
    }
    let mut cfg = Resolved::new("search");
    cfg.set("index", a.index.display())
        .set("queries", a.queries.display())
        .set("k", a.k)
        .set("probes", a.probes)
        .set("rerank", params.rerank)
        .opt("budget", a.budget)
        .set("policy", index.policy().name())
        .set("seed", index.seed());

    let mut out = output(a.out.as_deref())?;
    write!(out, "{}", cfg.header())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query", "rank", "id", "score", "datapoints_scanned"])?;
    for (qi, q) in queries.rows().enumerate() {
        let res = index.search(q, &params)?;
        for (rank, nb) in res.neighbors.iter().enumerate() {
            w.write_record([
                qi.to_string(),
                (rank + 1).to_string(),
                nb.id.to_string(),
                nb.score.to_string(),
                res.datapoints_scanned.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

fn opt_field<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<Outcome> {
    let index = load_index(&a.index)?;
    let queries = load_vectors(&a.queries)?;
    check_queries(&index, &queries)?;
    if a.k == 0 || a.k > index.n() {
        return Err(usage(format!("--k must be in [1, n={}]", index.n())));
    }
    let spilled = index.policy().is_spilled();
    if !spilled {
        eprintln!("notice: index policy is none; spilled columns are omitted");
    }
    let diag = diagnostics(&queries, index.full_store(), &index, a.k)?;

    let mut cfg = Resolved::new("diagnose");
    cfg.set("index", a.index.display())
        .set("queries", a.queries.display())
        .set("k", a.k)
        .set("out", a.out.display())
        .set("policy", index.policy().name())
        .opt("lambda", index.policy().lambda())
        .set("seed", index.seed());

    let mut file = output(Some(&a.out))?;
    write!(file, "{}", cfg.header())?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["query", "neighbor", "cos_primary"];
    if spilled {
        header.push("cos_spilled");
    }
    header.push("score_err_primary");
    if spilled {
        header.push("score_err_spilled");
    }
    header.push("rank_primary");
    if spilled {
        header.push("rank_spilled");
    }
    header.push("residual_norm");
    w.write_record(&header)?;
    for r in &diag.records {
        let mut row = vec![r.query.to_string(), r.neighbor.to_string(), r.cos_primary.to_string()];
        if spilled {
            row.push(opt_field(r.cos_spilled));
        }
        row.push(r.score_err_primary.to_string());
        if spilled {
            row.push(opt_field(r.score_err_spilled));
        }
        row.push(r.rank_primary.to_string());
        if spilled {
            row.push(opt_field(r.rank_spilled));
        }
        row.push(r.residual_norm.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let s = &diag.summary;
    let mut out = io::stdout().lock();
    write!(out, "{}", cfg.header())?;
    writeln!(out, "records={}", s.records)?;
    writeln!(out, "mean_residual_norm={:.6}", s.mean_residual_norm)?;
    if spilled {
        writeln!(out, "pearson_cos={}", opt_field(s.pearson_cos.map(|v| format!("{v:.6}"))))?;
        writeln!(out, "pearson_score_err={}", opt_field(s.pearson_score_err.map(|v| format!("{v:.6}"))))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank_lo", "rank_hi", "count", "mean_score_err_primary", "mean_rank_spilled"])?;
    for b in &s.bins {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.count.to_string(),
            format!("{:.6}", b.mean_score_err_primary),
            opt_field(b.mean_rank_spilled.map(|v| format!("{v:.3}"))),
        ])?;
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// A primary residual and two candidate spilled residuals, the second with a
/// random component along the primary one.
fn instance(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f32>, Vec<Vec<f32>>) {
    let r = gaussian(rng, d);
    let a = gaussian(rng, d);
    let alpha: f32 = rng.random_range(-2.0..2.0);
    let b = gaussian(rng, d).iter().zip(&r).map(|(g, ri)| g + alpha * ri).collect();
    (r, vec![a, b])
}

pub fn verify(a: &VerifyArgs) -> Result<Outcome> {
    if a.d < 2 {
        return Err(usage("--d must be >= 2"));
    }
    if a.samples < soar::eval::MIN_MC_SAMPLES {
        return Err(usage(format!("--samples must be >= {}", soar::eval::MIN_MC_SAMPLES)));
    }
    if a.instances == 0 || a.lambda.is_empty() {
        return Err(usage("need at least one instance and one lambda"));
    }
    let lambdas = a.lambda.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
    let mut cfg = Resolved::new("verify");
    cfg.set("d", a.d)
        .set("samples", a.samples)
        .set("lambda", lambdas)
        .set("instances", a.instances)
        .set("seed", a.seed)
        .set("tolerance", a.tolerance)
        .set("lemma_tolerance", a.lemma_tolerance);
    let mut out = io::stdout().lock();
    write!(out, "{}", cfg.header())?;

    let mut failed = false;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for &lambda in &a.lambda {
        let mut worst = 0f64;
        for i in 0..a.instances {
            let (r, cands) = instance(&mut rng, a.d);
            let check = mc_verify_theorem1(&r, &cands, lambda, a.samples, rng.random())
                .map_err(|e| usage(e.to_string()))?;
            let c = &check.candidates[1];
            writeln!(
                out,
                "loss lambda={lambda} instance={i} closed_form_ratio={:.6} empirical_ratio={:.6} rel_error={:.6}",
                c.closed_form_ratio, c.empirical_ratio, check.max_rel_error
            )?;
            worst = worst.max(check.max_rel_error);
        }
        let pass = worst <= a.tolerance;
        failed |= !pass;
        writeln!(
            out,
            "{} loss lambda={lambda} max_rel_error={worst:.6} tolerance={}",
            if pass { "PASS" } else { "FAIL" },
            a.tolerance
        )?;
    }

    let mut worst = 0f64;
    for i in 0..a.instances {
        let r = gaussian(&mut rng, a.d);
        let (_, cands) = instance(&mut rng, a.d);
        let rp: Vec<f32> = cands[1].iter().zip(&r).map(|(b, ri)| b + ri).collect();
        let check = mc_verify_lemma(&r, &rp, a.samples, rng.random())?;
        writeln!(
            out,
            "correlation instance={i} closed_form={:.6} empirical={:.6} abs_error={:.6}",
            check.closed_form, check.empirical, check.abs_error
        )?;
        worst = worst.max(check.abs_error);
    }
    let pass = worst < a.lemma_tolerance;
    failed |= !pass;
    writeln!(
        out,
        "{} correlation max_abs_error={worst:.6} tolerance={}",
        if pass { "PASS" } else { "FAIL" },
        a.lemma_tolerance
    )?;
    Ok(if failed { Outcome::VerificationFailed } else { Outcome::Ok })
}
