use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;
use wproc::aligner::{align_observed, AlignmentConfig, Matcher};
use wproc::data_io::{
    load_lexicon, load_map, load_vec, random_orthogonal, save_lexicon, save_map, save_vec, synth_generate_with,
    with_relative_noise, EmbeddingSet, Lexicon, SynthConfig,
};
use wproc::eval::evaluate_bli;
use wproc::linalg::{pca_project, Matrix};
use wproc::preprocess::{preprocess_labeled, PreprocessSpec};
use wproc::procrustes::Orthogonal;
use wproc::qap::{convex_init, FwConfig, GapTolerance};
use wproc::refine::{fit_lexicon, refine, RefineStatus, REFINE_CANDIDATE_CAP};
use wproc::retrieval::{retrieve_rows, RetrievalConfig, Similarity};
use wproc::sinkhorn::{Regularization, SinkhornConfig};
use wproc::Error;

use crate::manifest::Timer;
use crate::{
    AlignArgs, AlignCmd, BenchCmd, Cli, Command, EvalCmd, FwArgs, InitArg, InitCmd, InputArgs, MatcherArg, Outcome,
    PlotCmd, RefineCmd, RetrievalArg, RetrievalArgs, SynthCmd, TranslateCmd,
};

type Set = EmbeddingSet<f64>;

pub fn dispatch(cli: &Cli, timer: &mut Timer) -> Result<Outcome> {
    match &cli.command {
        Command::Init(c) => init(c, timer),
        Command::Align(c) => align(c, cli.seed, timer),
        Command::Refine(c) => refine_cmd(c, timer),
        Command::Translate(c) => translate(c, timer),
        Command::Eval(c) => eval(c, timer),
        Command::Synth(c) => synth(c, cli.seed, timer),
        Command::Plot(c) => plot(c, timer),
        Command::BenchBatchSize(c) => bench(c, cli.seed, timer),
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

fn load_inputs(input: &InputArgs, timer: &mut Timer) -> Result<(Set, Set)> {
    let spec = parse_preprocess(&input.preprocess)?;
    let (src, tgt) = timer.time("load", || -> Result<(Set, Set)> {
        let src = load_vec::<f64>(&input.src, input.max_vocab).with_context(|| format!("loading {}", input.src.display()))?;
        let tgt = load_vec::<f64>(&input.tgt, input.max_vocab).with_context(|| format!("loading {}", input.tgt.display()))?;
        Ok((src, tgt))
    })?;
    if src.dim() != tgt.dim() {
        return Err(Error::InvalidInput(format!(
            "source dimension {} differs from target dimension {}",
            src.dim(),
            tgt.dim()
        ))
        .into());
    }
    match spec {
        None => Ok((src, tgt)),
        Some(spec) => timer.time("preprocess", || {
            let x = preprocess_labeled(src.matrix(), &spec, Some(src.labels()))?;
            let y = preprocess_labeled(tgt.matrix(), &spec, Some(tgt.labels()))?;
            Ok((src.with_matrix(x)?, tgt.with_matrix(y)?))
        }),
    }
}

fn parse_preprocess(s: &str) -> Result<Option<PreprocessSpec>> {
    if s.trim().eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    Ok(Some(s.parse::<PreprocessSpec>()?))
}

fn fw_config(fw: &FwArgs) -> FwConfig {
    FwConfig { max_iters: fw.fw_iters, gap_tol: GapTolerance::RelativeToInitial(1e-6), subset_size: fw.fw_size }
}

fn alignment_config(a: &AlignArgs, seed: u64) -> AlignmentConfig {
    let sinkhorn = SinkhornConfig {
        epsilon: Regularization::MedianScaled(a.sinkhorn_eps),
        max_iters: a.sinkhorn_iters,
        ..SinkhornConfig::default()
    };
    let matcher = match a.matcher {
        MatcherArg::Hungarian => Matcher::Hungarian,
        MatcherArg::Sinkhorn => Matcher::Sinkhorn(sinkhorn),
        MatcherArg::Auto => match Matcher::default() {
            Matcher::Auto { exact_limit, .. } => Matcher::Auto { exact_limit, sinkhorn },
            other => other,
        },
    };
    AlignmentConfig {
        total_iters: a.iters,
        batch_size: a.batch_size,
        batch_doubling: !a.no_doubling,
        lr: a.lr,
        matcher,
        sample_pool: a.sample_pool,
        seed,
    }
}

fn retrieval_config(r: &RetrievalArgs, default_cap: usize) -> RetrievalConfig {
    RetrievalConfig {
        kind: match r.retrieval {
            RetrievalArg::Nn => Similarity::Nn,
            RetrievalArg::Csls => Similarity::Csls,
            RetrievalArg::Isf => Similarity::Isf,
        },
        csls_k: r.csls_k,
        isf_beta: r.isf_beta,
        candidate_cap: r.candidate_cap.unwrap_or(default_cap),
        ..RetrievalConfig::default()
    }
}

fn load_checked_map(path: &Path, dim: usize) -> Result<Orthogonal<f64>> {
    let q = load_map::<f64>(path).with_context(|| format!("loading map {}", path.display()))?;
    if q.dim() != dim {
        return Err(Error::InvalidInput(format!("map {} has dimension {}, embeddings {dim}", path.display(), q.dim())).into());
    }
    Ok(q)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Minimal CSV quoting.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn initial_map(
    kind: InitArg,
    init_map: Option<&PathBuf>,
    fw: &FwArgs,
    src: &Set,
    tgt: &Set,
    seed: u64,
    timer: &mut Timer,
) -> Result<(Orthogonal<f64>, serde_json::Value)> {
    let d = src.dim();
    match kind {
        InitArg::Map => {
            let path = init_map.ok_or_else(|| config_err("--init map needs --init-map PATH"))?;
            Ok((load_checked_map(path, d)?, json!({ "init": "map" })))
        }
        InitArg::Random => Ok((random_orthogonal::<f64>(d, seed), json!({ "init": "random" }))),
        InitArg::Convex => {
            let (q0, out) = timer.time("convex-init", || convex_init(src.matrix(), tgt.matrix(), &fw_config(fw)))?;
            let summary = json!({
                "init": "convex",
                "fw_iterations": out.gap_trace.len(),
                "fw_converged": out.converged,
                "fw_objective_start": out.objective_trace.first(),
                "fw_objective_end": out.objective_trace.last(),
            });
            Ok((q0, summary))
        }
    }
}

fn init(c: &InitCmd, timer: &mut Timer) -> Result<Outcome> {
    let (src, tgt) = load_inputs(&c.input, timer)?;
    let (q0, out) = timer.time("convex-init", || convex_init(src.matrix(), tgt.matrix(), &fw_config(&c.fw)))?;
    save_map(&c.out, &q0)?;
    let mut outputs = vec![c.out.clone()];
    if let Some(path) = &c.trace {
        let mut s = String::from("iter,objective,gap\n");
        for (i, f) in out.objective_trace.iter().enumerate() {
            let gap = out.gap_trace.get(i).map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{i},{f},{gap}");
        }
        write_text(path, &s)?;
        outputs.push(path.clone());
    }
    eprintln!(
        "frank-wolfe: {} iterations, objective {:.6e} -> {:.6e}, converged: {}",
        out.gap_trace.len(),
        out.objective_trace.first().copied().unwrap_or(f64::NAN),
        out.objective_trace.last().copied().unwrap_or(f64::NAN),
        out.converged
    );
    Ok(Outcome::ok(
        outputs,
        json!({ "fw_iterations": out.gap_trace.len(), "fw_converged": out.converged, "objective_trace": out.objective_trace }),
    ))
}

fn align(c: &AlignCmd, seed: u64, timer: &mut Timer) -> Result<Outcome> {
    let (src, tgt) = load_inputs(&c.input, timer)?;
    if let Some(lex_path) = &c.supervised {
        let lex = load_lexicon(lex_path)?;
        let fit = timer.time("procrustes", || fit_lexicon(&src, &tgt, &lex))?;
        save_map(&c.out, &fit.q)?;
        eprintln!("supervised fit on {} pairs ({} skipped)", fit.pairs_used, fit.pairs_skipped);
        return Ok(Outcome::ok(
            vec![c.out.clone()],
            json!({ "mode": "supervised", "pairs_used": fit.pairs_used, "pairs_skipped": fit.pairs_skipped }),
        ));
    }
    // The random init gets its own stream so it does not share draws with batch sampling.
    let (q0, init_summary) = initial_map(c.init, c.init_map.as_ref(), &c.fw, &src, &tgt, seed ^ INIT_STREAM, timer)?;
    let cfg = alignment_config(&c.align, seed);
    let state = timer.time("align", || align_observed(src.matrix(), tgt.matrix(), q0, &cfg, |_| {}))?;
    save_map(&c.out, &state.q)?;
    let mut outputs = vec![c.out.clone()];
    if let Some(path) = &c.loss_csv {
        let mut s = String::from("iter,loss\n");
        for (t, l) in &state.loss_history {
            let _ = writeln!(s, "{t},{l}");
        }
        write_text(path, &s)?;
        outputs.push(path.clone());
    }
    let final_loss = state.loss_history.last().map(|&(_, l)| l);
    Ok(Outcome::ok(outputs, json!({ "mode": "unsupervised", "init": init_summary, "final_batch_loss": final_loss })))
}

const INIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn refine_cmd(c: &RefineCmd, timer: &mut Timer) -> Result<Outcome> {
    let (src, tgt) = load_inputs(&c.input, timer)?;
    let q = load_checked_map(&c.map, src.dim())?;
    let cfg = retrieval_config(&c.retrieval, REFINE_CANDIDATE_CAP);
    let out = timer.time("refine", || refine(src.matrix(), tgt.matrix(), q, c.epochs, &cfg))?;
    save_map(&c.out, &out.q)?;
    let mut outputs = vec![c.out.clone()];
    if let Some(path) = &c.log {
        let mut s = String::from("epoch,dictionary_size\n");
        for (e, n) in out.dictionary_sizes.iter().enumerate() {
            let _ = writeln!(s, "{},{n}", e + 1);
        }
        write_text(path, &s)?;
        outputs.push(path.clone());
    }
    let summary = json!({ "dictionary_sizes": out.dictionary_sizes, "status": out.status });
    let failure = match out.status {
        RefineStatus::Completed => None,
        RefineStatus::EmptyDictionary { epoch } => Some(Error::EmptyDictionary { epoch }.into()),
    };
    Ok(Outcome { outputs, summary, failure })
}

fn translate(c: &TranslateCmd, timer: &mut Timer) -> Result<Outcome> {
    if c.top_k == 0 {
        return Err(config_err("--top-k must be ≥ 1"));
    }
    let (src, tgt) = load_inputs(&c.input, timer)?;
    let q = load_checked_map(&c.map, src.dim())?;
    let cfg = retrieval_config(&c.retrieval, RetrievalConfig::default().candidate_cap);
    let pool_len = src.len().min(cfg.candidate_cap);
    let index = src.index();
    let (rows, missing): (Vec<usize>, usize) = match &c.words {
        None => ((0..pool_len).collect(), 0),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut rows = Vec::new();
            let mut missing = 0;
            for w in text.lines().map(str::trim).filter(|w| !w.is_empty()) {
                match index.get(w) {
                    Some(&i) if i < pool_len => rows.push(i),
                    _ => missing += 1,
                }
            }
            (rows, missing)
        }
    };
    if rows.is_empty() {
        return Err(Error::NoQueries("no query word is in the source vocabulary".into()).into());
    }
    let table = timer.time("retrieve", || -> Result<_> {
        let mapped = q.apply(src.matrix())?;
        Ok(retrieve_rows(&mapped, &rows, tgt.matrix(), &cfg, c.top_k)?)
    })?;
    let mut s = String::from("query\trank\ttarget\tscore\n");
    for (qi, &i) in rows.iter().enumerate() {
        for (rank, &(j, score)) in table.get(qi).iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", src.labels()[i], rank + 1, tgt.labels()[j], score);
        }
    }
    write_text(&c.out, &s)?;
    if missing > 0 {
        eprintln!("{missing} query words not in the source vocabulary were skipped");
    }
    Ok(Outcome::ok(vec![c.out.clone()], json!({ "queries": rows.len(), "skipped": missing })))
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<usize>> {
    let items: Result<Vec<usize>, _> = s.split(',').map(|t| t.trim().parse::<usize>()).collect();
    match items {
        Ok(v) if !v.is_empty() && v.iter().all(|&k| k > 0) => Ok(v),
        _ => Err(config_err(format!("{flag} expects a comma list of positive integers, got '{s}'"))),
    }
}

fn eval(c: &EvalCmd, timer: &mut Timer) -> Result<Outcome> {
    let ks = parse_list(&c.ks, "--ks")?;
    let (src, tgt) = load_inputs(&c.input, timer)?;
    let q = load_checked_map(&c.map, src.dim())?;
    let lex = load_lexicon(&c.lexicon)?;
    let cfg = retrieval_config(&c.retrieval, RetrievalConfig::default().candidate_cap);
    let report = timer.time("evaluate", || evaluate_bli(&src, &tgt, &q, &lex, &cfg, &ks))?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(&c.out, &text)?;
    print!("{}", report.to_table());
    Ok(Outcome::ok(vec![c.out.clone()], serde_json::to_value(&report)?))
}

fn synth(c: &SynthCmd, seed: u64, timer: &mut Timer) -> Result<Outcome> {
    let base = SynthConfig { spectrum_decay: c.decay, locality: c.locality, ..SynthConfig::new(c.n, c.d, c.sigma, seed) };
    let cfg = match c.sigma_rel {
        Some(r) => with_relative_noise(&base, r)?,
        None => base,
    };
    let inst = timer.time("generate", || synth_generate_with::<f64>(&cfg))?;
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    let paths: Vec<PathBuf> =
        ["src.vec", "tgt.vec", "truth.map", "truth.txt"].iter().map(|f| c.out_dir.join(f)).collect();
    save_vec(&paths[0], &inst.x)?;
    save_vec(&paths[1], &inst.y)?;
    save_map(&paths[2], &inst.true_rotation)?;
    // Target row labels name the source row they come from.
    let truth = inst.truth();
    let pairs = (0..c.n).map(|k| (inst.x.labels()[k].clone(), inst.y.labels()[truth.get(k)].clone())).collect();
    save_lexicon(&paths[3], &Lexicon::new(pairs)?)?;
    Ok(Outcome::ok(paths, json!({ "noise_sigma": cfg.noise_sigma, "mean_norm": inst.mean_norm() })))
}

fn plot(c: &PlotCmd, timer: &mut Timer) -> Result<Outcome> {
    let (src, tgt) = load_inputs(&c.input, timer)?;
    let x = match &c.map {
        Some(p) => load_checked_map(p, src.dim())?.apply(src.matrix())?,
        None => src.matrix().clone(),
    };
    let n = src.len();
    let mut stacked = x.into_data();
    stacked.extend_from_slice(tgt.matrix().data());
    let stacked = Matrix::new(n + tgt.len(), src.dim(), stacked)?;
    let coords = timer.time("pca", || pca_project(&stacked, 2.min(src.dim())))?;
    let mut s = String::from("label,set,pc1,pc2\n");
    for i in 0..stacked.rows() {
        let (label, set) = if i < n { (&src.labels()[i], "src") } else { (&tgt.labels()[i - n], "tgt") };
        let pc2 = if coords.cols() > 1 { coords[(i, 1)] } else { 0.0 };
        let _ = writeln!(s, "{},{set},{},{pc2}", csv_field(label), coords[(i, 0)]);
    }
    write_text(&c.out, &s)?;
    Ok(Outcome::ok(vec![c.out.clone()], json!({ "rows": stacked.rows() })))
}

fn bench(c: &BenchCmd, seed: u64, timer: &mut Timer) -> Result<Outcome> {
    let sizes = parse_list(&c.sizes, "--sizes")?;
    let (src, tgt) = load_inputs(&c.input, timer)?;
    let lex = load_lexicon(&c.lexicon)?;
    let (q0, init_summary) = initial_map(c.init, c.init_map.as_ref(), &c.fw, &src, &tgt, seed ^ INIT_STREAM, timer)?;
    let rcfg = retrieval_config(&c.retrieval, RetrievalConfig::default().candidate_cap);
    let mut s = String::from("batch_size,seconds,precision_at_1\n");
    let mut rows = Vec::new();
    for &b in &sizes {
        let cfg = AlignmentConfig { batch_size: b, ..alignment_config(&c.align, seed) };
        let start = Instant::now();
        let state = timer.time(&format!("align-b{b}"), || align_observed(src.matrix(), tgt.matrix(), q0.clone(), &cfg, |_| {}))?;
        let seconds = start.elapsed().as_secs_f64();
        let report = evaluate_bli(&src, &tgt, &state.q, &lex, &rcfg, &[1])?;
        let p1 = report.precision_at[&1];
        let _ = writeln!(s, "{b},{seconds:.3},{p1}");
        eprintln!("batch {b}: {seconds:.2}s, P@1 {:.2}%", 100.0 * p1);
        rows.push(json!({ "batch_size": b, "seconds": seconds, "precision_at_1": p1 }));
    }
    write_text(&c.out, &s)?;
    Ok(Outcome::ok(vec![c.out.clone()], json!({ "init": init_summary, "runs": rows })))
}
