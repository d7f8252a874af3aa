use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use iclprobe::archive::{Tensor, TensorArchive};
use iclprobe::suda::hidden_entry;
use iclprobe::sweep::{self, run_suite_with, CellStatus, CellSummary, ResultStore, RunOptions, DEFAULT_TOP_K};
use iclprobe::taskgen::{read_suite, write_suite, PoolSpec, DEFAULT_N_SAMPLES};
use iclprobe::{load_vocab, BackendSpec, SuiteSpec, SweepManifest, TaskConfig, TaskInstance, Vocabulary};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{echo, existing, parse, required, usage, UsageError};
use crate::Globals;

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Vocabulary TSV ("id<TAB>token" per line)
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Generate every suite listed in a sweep manifest instead of one from flags
    #[arg(long, conflicts_with = "task")]
    pub manifest: Option<PathBuf>,
    /// lsc | lscg | wc | wi | tt | cf | country_capital
    #[arg(long)]
    pub task: Option<String>,
    /// Number of instances [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Pattern length |P| (lsc, lscg)
    #[arg(long)]
    pub pattern_len: Option<usize>,
    /// Gap length |R| (lsc, lscg)
    #[arg(long)]
    pub gap_len: Option<usize>,
    /// Inner gap length |G| (lscg)
    #[arg(long)]
    pub inner_gap_len: Option<usize>,
    /// Feature count |F| (wc)
    #[arg(long)]
    pub n_features: Option<usize>,
    /// Label count |L| (wc)
    #[arg(long)]
    pub n_labels: Option<usize>,
    /// Distractors per line |D| (wc)
    #[arg(long)]
    pub n_distractors: Option<usize>,
    /// Demonstrations: per feature for wc, lines for wi and tt [default: 5]
    #[arg(long)]
    pub n_demos: Option<usize>,
    /// Sequence length |S| (wi)
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Copied position i (wi)
    #[arg(long)]
    pub target_index: Option<usize>,
    /// Source language EN|DE|FR|ES|IT (tt)
    #[arg(long)]
    pub src_lang: Option<String>,
    /// Target language (tt)
    #[arg(long)]
    pub tgt_lang: Option<String>,
    /// Pool from token ids LO:HI (half-open)
    #[arg(long, conflicts_with = "wordlist_file")]
    pub index_range: Option<String>,
    /// Keep special and empty tokens in an index-range pool
    #[arg(long)]
    pub no_filter_special: bool,
    /// Pool from a word list file, one word per line [default: bundled frequent words]
    #[arg(long)]
    pub wordlist_file: Option<PathBuf>,
    /// Word-pair lexicon CSV replacing the bundled one (tt)
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Country-capital CSV replacing the bundled one (cf, country_capital)
    #[arg(long)]
    pub capitals: Option<PathBuf>,
    /// Suite key [default: derived from task, pool and seed]
    #[arg(long)]
    pub name: Option<String>,
    /// Output file for a single suite [default: OUT/suites/KEY.jsonl]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn load_vocabulary(flag: Option<PathBuf>, g: &Globals, fallback: Option<PathBuf>) -> anyhow::Result<Vocabulary> {
    let path = flag
        .or_else(|| g.file.vocab.clone())
        .or(fallback)
        .ok_or_else(|| UsageError::new("missing --vocab"))?;
    let path = existing(path, "--vocab")?;
    load_vocab(&path).map_err(usage(format!("--vocab {}", path.display())))
}

fn flag_name(field: &str) -> String {
    format!("--{}", field.replace('_', "-"))
}

fn task_config(a: &GenArgs, task: &str) -> anyhow::Result<TaskConfig> {
    let mut cfg = Map::new();
    let mut put = |k: &str, v: Value| {
        cfg.insert(k.into(), v);
    };
    let fields: [(&str, Option<usize>); 8] = [
        ("pattern_len", a.pattern_len),
        ("gap_len", a.gap_len),
        ("inner_gap_len", a.inner_gap_len),
        ("n_features", a.n_features),
        ("n_labels", a.n_labels),
        ("n_distractors", a.n_distractors),
        ("seq_len", a.seq_len),
        ("target_index", a.target_index),
    ];
    for (k, v) in fields {
        if let Some(v) = v {
            put(k, json!(v));
        }
    }
    if let Some(d) = a.n_demos {
        put(if task == "wc" { "n_demos_per_feature" } else { "n_demos" }, json!(d));
    }
    for (k, v) in [("src_lang", &a.src_lang), ("tgt_lang", &a.tgt_lang)] {
        if let Some(v) = v {
            put(k, json!(v.to_uppercase()));
        }
    }
    let value = json!({ "task": task, "config": cfg });
    serde_json::from_value(value).map_err(|e| {
        let mut msg = e.to_string();
        for f in [
            "inner_gap_len",
            "pattern_len",
            "gap_len",
            "n_features",
            "n_labels",
            "n_distractors",
            "n_demos_per_feature",
            "n_demos",
            "seq_len",
            "target_index",
            "src_lang",
            "tgt_lang",
        ] {
            msg = msg.replace(&format!("`{f}`"), &flag_name(f));
        }
        UsageError::new(format!("--task {task}: {msg}")).into()
    })
}

fn suite_from_flags(g: &Globals, a: &GenArgs) -> anyhow::Result<SuiteSpec> {
    let task = a
        .task
        .as_deref()
        .ok_or_else(|| UsageError::new("missing --task (or --manifest)"))?;
    let config = task_config(a, task)?;
    let mut spec = SuiteSpec::new(config, a.n.unwrap_or(DEFAULT_N_SAMPLES), g.seed);
    spec.name = a.name.clone();
    if let Some(r) = &a.index_range {
        let (lo, hi) = r
            .split_once(':')
            .and_then(|(l, h)| Some((l.trim().parse().ok()?, h.trim().parse().ok()?)))
            .ok_or_else(|| UsageError::new(format!("--index-range {r:?}: expected LO:HI")))?;
        spec.pool = Some(PoolSpec::IndexRange {
            lo,
            hi,
            filter_special: !a.no_filter_special,
        });
    } else if let Some(p) = &a.wordlist_file {
        spec.pool = Some(PoolSpec::WordlistFile {
            path: existing(p.clone(), "--wordlist-file")?,
        });
    }
    spec.lexicon = a.lexicon.clone().map(|p| existing(p, "--lexicon")).transpose()?;
    spec.capitals = a.capitals.clone().map(|p| existing(p, "--capitals")).transpose()?;
    spec.validate().map_err(usage(format!("--task {task}")))?;
    Ok(spec)
}

pub fn suite_file_name(key: &str) -> String {
    let safe: String = key
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '.'
            }
        })
        .collect();
    format!("{safe}.jsonl")
}

fn load_manifest(path: &Path) -> anyhow::Result<SweepManifest> {
    let text = fs::read_to_string(path).map_err(|e| UsageError::new(format!("--manifest {}: {e}", path.display())))?;
    let mut m: SweepManifest =
        serde_json::from_str(&text).map_err(|e| UsageError::new(format!("--manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    m.vocab = m.vocab.as_deref().map(rebase);
    for c in &mut m.checkpoints {
        if let BackendSpec::TensorEval { path } = &c.backend {
            c.backend = BackendSpec::TensorEval { path: rebase(path) };
        }
    }
    Ok(m)
}

pub fn gen(g: &Globals, a: GenArgs) -> anyhow::Result<()> {
    let (specs, fallback_vocab) = match a.manifest.clone().or_else(|| g.file.manifest.clone()) {
        Some(p) if a.task.is_none() => {
            let m = load_manifest(&existing(p, "--manifest")?)?;
            (m.suites.clone(), m.vocab.clone())
        }
        _ => (vec![suite_from_flags(g, &a)?], None),
    };
    if a.output.is_some() && specs.len() != 1 {
        bail!(UsageError::new("--output needs exactly one suite"));
    }
    let vocab = load_vocabulary(a.vocab.clone(), g, fallback_vocab)?;
    echo(g, "gen", &json!({ "args": &a, "suites": &specs }))?;
    let dir = g.out.join("suites");
    fs::create_dir_all(&dir)?;
    for spec in &specs {
        let skipped = if spec.task.uses_pool() {
            spec.pool_spec().build(&vocab).map_err(usage(spec.key()))?.1
        } else {
            vec![]
        };
        if !skipped.is_empty() {
            log::warn!(
                "{}: {} words are not single tokens and were skipped",
                spec.key(),
                skipped.len()
            );
        }
        let instances = spec.generate(&vocab).map_err(usage(spec.key()))?;
        let path = a
            .output
            .clone()
            .unwrap_or_else(|| dir.join(suite_file_name(&spec.key())));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_suite(&path, &instances)?;
        let multi = instances.iter().filter(|i| i.multi_token_answer).count();
        println!(
            "{}\tn={}\tmulti_token={multi}\tskipped_words={}\t{}",
            spec.key(),
            instances.len(),
            skipped.len(),
            path.display()
        );
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Suite JSONL files
    #[arg(long, required = true, num_args = 1..)]
    pub suite: Vec<PathBuf>,
    /// induction | metadata | tensor:PATH | http(s)://URL
    #[arg(long)]
    pub backend: Option<String>,
    /// Checkpoint key recorded in results [default: the backend string]
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Vocabulary TSV; checks the backend's vocabulary size when given
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Top-k requested from the backend [default: 10]
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Also request final hidden states and write them to this tensor archive
    #[arg(long)]
    pub hidden_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    suite: String,
    checkpoint: String,
    backend: String,
    results: PathBuf,
    #[serde(flatten)]
    summary: CellSummary,
}

pub fn eval(g: &Globals, a: EvalArgs) -> anyhow::Result<()> {
    let backend: BackendSpec = parse(
        &required(a.backend.clone(), g.file.backend.clone(), "--backend")?,
        "--backend",
    )?;
    let top_k = a.top_k.or(g.file.top_k).unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        bail!(UsageError::new("--top-k must be >= 1"));
    }
    let vocab_size = match a.vocab.clone().or_else(|| g.file.vocab.clone()) {
        Some(p) => Some(load_vocabulary(Some(p), g, None)?.size()),
        None => None,
    };
    let http = g.file.http.clone().unwrap_or_default();
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| backend.to_string());
    let suites: Vec<(PathBuf, Vec<TaskInstance>)> = a
        .suite
        .iter()
        .map(|p| {
            let p = existing(p.clone(), "--suite")?;
            let inst = read_suite(&p).map_err(usage(format!("--suite {}", p.display())))?;
            Ok((p, inst))
        })
        .collect::<anyhow::Result<_>>()?;
    echo(
        g,
        "eval",
        &json!({ "args": &a, "backend": backend.to_string(), "top_k": top_k, "checkpoint": checkpoint, "http": &http }),
    )?;
    let want_hidden = a.hidden_out.is_some();
    let mut hidden = TensorArchive::new();
    let mut seen_tasks = BTreeSet::new();
    let mut summaries = vec![];
    let mut failure = None;
    for (path, instances) in &suites {
        let stem = path
            .file_name()
            .map(|s| s.to_string_lossy().trim_end_matches(".jsonl").to_string())
            .unwrap_or_else(|| "suite".into());
        let opts = RunOptions {
            suite: stem.clone(),
            checkpoint: checkpoint.clone(),
            top_k,
            want_hidden,
        };
        let out_path = g.out.join(format!("{stem}.results.jsonl"));
        let mut partial = vec![];
        let scored = backend.open(instances, vocab_size, &http).and_then(|b| {
            run_suite_with(b.as_ref(), instances, &opts, &mut |batch| {
                partial.extend(batch.iter().map(|s| s.result.clone()));
                Ok(())
            })
        });
        let scored = match scored {
            Ok(s) => s,
            Err(e) => {
                partial.sort_by_key(|r| r.sample_id);
                ResultStore::write_results(&out_path, &partial)?;
                failure = Some(anyhow::anyhow!("{stem}: {e} ({} results kept)", partial.len()));
                break;
            }
        };
        let results: Vec<_> = scored.iter().map(|s| s.result.clone()).collect();
        ResultStore::write_results(&out_path, &results)?;
        let summary = CellSummary::of(&results)?;
        println!(
            "{stem}\t{checkpoint}\tn={}\taccuracy={:.3}\tmean_logprob={}",
            summary.n,
            summary.accuracy,
            summary.mean_logprob.map_or("nan".into(), |v| format!("{v:.4}"))
        );
        if want_hidden {
            let task = instances.first().map(|i| i.kind().as_str()).unwrap_or("none");
            if !seen_tasks.insert(task) {
                bail!(UsageError::new(format!("--hidden-out: two suites share task {task}")));
            }
            for (inst, s) in instances.iter().zip(&scored) {
                let x = s
                    .hidden
                    .as_ref()
                    .with_context(|| format!("backend {backend} returned no hidden state"))?;
                let t = Tensor::vector(x.iter().map(|&v| v as f32).collect());
                hidden.insert(hidden_entry(task, inst.sample_id), t)?;
            }
        }
        summaries.push(EvalSummary {
            suite: stem,
            checkpoint: checkpoint.clone(),
            backend: backend.to_string(),
            results: out_path,
            summary,
        });
    }
    let mut text = serde_json::to_string_pretty(&summaries)?;
    text.push('\n');
    fs::write(g.out.join("eval_summary.json"), text)?;
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(path) = &a.hidden_out {
        if let BackendSpec::TensorEval { path: src } = &backend {
            let probe = TensorArchive::read(src)?;
            hidden.insert("unembedding", probe.require("unembedding")?.clone())?;
        }
        hidden.metadata.insert("checkpoint".into(), checkpoint.clone());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        hidden.write(path)?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Sweep manifest JSON; relative paths inside resolve against its directory
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Vocabulary TSV, overriding the manifest's
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Result store directory [default: OUT/store]
    #[arg(long)]
    pub store: Option<PathBuf>,
}

pub fn sweep(g: &Globals, a: SweepArgs) -> anyhow::Result<()> {
    let path = existing(
        required(a.manifest.clone(), g.file.manifest.clone(), "--manifest")?,
        "--manifest",
    )?;
    let mut m = load_manifest(&path)?;
    if let Some(h) = &g.file.http {
        m.http = h.clone();
    }
    m.validate().map_err(usage(format!("--manifest {}", path.display())))?;
    let vocab = load_vocabulary(a.vocab.clone(), g, m.vocab.clone())?;
    let store_dir = a
        .store
        .clone()
        .or_else(|| g.file.store.clone())
        .unwrap_or_else(|| g.out.join("store"));
    echo(g, "sweep", &json!({ "args": &a, "store": &store_dir, "manifest": &m }))?;
    let store = ResultStore::open(&store_dir)?;
    store.log(&format!(
        "sweep start: {} suites x {} checkpoints",
        m.suites.len(),
        m.checkpoints.len()
    ));
    let report = sweep::sweep(&m, &vocab, &store)?;
    for c in &report.cells {
        match (&c.status, &c.summary) {
            (CellStatus::Complete, Some(s)) => {
                println!("{}\t{}\tcomplete\taccuracy={:.3}", c.suite, c.checkpoint, s.accuracy)
            }
            _ => println!(
                "{}\t{}\tfailed\t{}",
                c.suite,
                c.checkpoint,
                c.error.as_deref().unwrap_or("")
            ),
        }
    }
    println!(
        "computed={} skipped={} failed={}",
        report.computed,
        report.skipped,
        report.failed().len()
    );
    store.log(&format!(
        "sweep done: computed={} skipped={}",
        report.computed, report.skipped
    ));
    let failed = report.failed();
    if !failed.is_empty() {
        bail!("{} of {} cells failed", failed.len(), report.cells.len());
    }
    Ok(())
}
