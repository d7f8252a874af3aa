use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::Args;
use iclprobe::analysis::{self, write_csv, CellPoint, Skipped};
use iclprobe::archive::TensorArchive;
use iclprobe::data::DetCase;
use iclprobe::stats::DEFAULT_LAG_ORDER;
use iclprobe::suda::{self, archive_profiles, max_logit, overlap_matrix, strong_set, svd};
use iclprobe::sweep::{Metric, ResultStore};
use iclprobe::taskgen::read_suite;
use iclprobe::{Error, ScoreVariant, SudaConfig, TokenId};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{echo, existing, parse, usage, UsageError};
use crate::Globals;

fn parse_metric(s: &str) -> anyhow::Result<Metric> {
    match s {
        "accuracy" => Ok(Metric::Accuracy),
        "mean_logprob" => Ok(Metric::MeanLogprob),
        _ => Err(UsageError::new(format!("--metric {s:?}: expected accuracy | mean_logprob")).into()),
    }
}

fn parse_det_case(s: &str) -> anyhow::Result<DetCase> {
    match s.to_ascii_lowercase().as_str() {
        "none" | "no_det" => Ok(DetCase::None),
        "constant" => Ok(DetCase::Constant),
        _ => Err(UsageError::new(format!("--det-case {s:?}: expected none | constant")).into()),
    }
}

fn store_points(g: &Globals, store: Option<PathBuf>) -> anyhow::Result<(PathBuf, Vec<CellPoint>)> {
    let dir = store
        .or_else(|| g.file.store.clone())
        .unwrap_or_else(|| g.out.join("store"));
    let index = dir.join("index.json");
    let records = if index.exists() {
        ResultStore::open(&dir)?
            .read_index()
            .map_err(usage(format!("--store {}", dir.display())))?
    } else {
        vec![]
    };
    let pts = analysis::points(&records);
    if pts.is_empty() {
        bail!(UsageError::new(format!(
            "EmptyStore: {}",
            Error::EmptyStore(dir.display().to_string())
        )));
    }
    Ok((dir, pts))
}

fn report_skipped(out: &Path, skipped: &[Skipped]) -> anyhow::Result<()> {
    for s in skipped {
        log::info!("{} skipped for {}: {}", s.analysis, s.subject, s.reason);
    }
    write_csv(&out.join("stats_skipped.csv"), analysis::SKIPPED_HEADER, skipped)?;
    let failed = skipped.iter().filter(|s| s.failed).count();
    if failed > 0 {
        bail!("{failed} analyses failed (see stats_skipped.csv)");
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Result store written by `sweep` [default: OUT/store]
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// accuracy | mean_logprob [default: accuracy]
    #[arg(long)]
    pub metric: Option<String>,
    /// Lagged differences in the Johansen regression [default: 1]
    #[arg(long)]
    pub lag_order: Option<usize>,
    /// none | constant [default: constant]
    #[arg(long)]
    pub det_case: Option<String>,
    /// Odd running-average window for the smoothed gap columns [default: 5]
    #[arg(long)]
    pub smooth: Option<usize>,
}

pub fn stats(g: &Globals, a: StatsArgs) -> anyhow::Result<()> {
    let f = &g.file;
    let metric_name = a
        .metric
        .clone()
        .or(f.metric.clone())
        .unwrap_or_else(|| "accuracy".into());
    let metric = parse_metric(&metric_name)?;
    let lag_order = a.lag_order.or(f.lag_order).unwrap_or(DEFAULT_LAG_ORDER);
    let det_name = a
        .det_case
        .clone()
        .or(f.det_case.clone())
        .unwrap_or_else(|| "constant".into());
    let det_case = parse_det_case(&det_name)?;
    let smooth = a.smooth.or(f.smooth).unwrap_or(5);
    if smooth.is_multiple_of(2) {
        bail!(UsageError::new("--smooth must be odd"));
    }
    let (store, pts) = store_points(g, a.store.clone())?;
    echo(
        g,
        "stats",
        &json!({ "store": store, "metric": metric_name, "lag_order": lag_order, "det_case": det_case.as_str(), "smooth": smooth }),
    )?;

    let groups = analysis::range_groups(&pts, metric)?;
    let (corr, mut skipped) = analysis::range_correlations(&groups);
    let (gaps, s) = analysis::range_gaps(&groups, smooth);
    skipped.extend(s);
    let series = analysis::suite_series(&pts, metric)?;
    let (joh, s) = analysis::pairwise_johansen(&series, lag_order, det_case);
    skipped.extend(s);
    let (scaling, s) = analysis::scaling_fits(&analysis::scaling_points(&pts, metric));
    skipped.extend(s);

    let out = &g.out;
    write_csv(&out.join("correlations.csv"), analysis::CORRELATION_HEADER, &corr)?;
    write_csv(&out.join("gaps.csv"), analysis::GAP_HEADER, &gaps)?;
    write_csv(&out.join("johansen.csv"), analysis::JOHANSEN_HEADER, &joh)?;
    write_csv(&out.join("scaling.csv"), analysis::SCALING_HEADER, &scaling)?;
    println!(
        "correlations={} gaps={} johansen={} scaling={} skipped={}",
        corr.len(),
        gaps.len(),
        joh.len(),
        scaling.len(),
        skipped.len()
    );
    report_skipped(out, &skipped)
}

#[derive(Debug, Args, Serialize)]
pub struct SudaArgs {
    /// Suite JSONL files supplying answers; one suite per task kind
    #[arg(long, required = true, num_args = 1..)]
    pub suite: Vec<PathBuf>,
    /// STEP=ARCHIVE[,ARCHIVE...]; the first archive holding `unembedding` is used
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<String>,
    /// Strong-set threshold tau [default: 0.2]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// projection | rank1 [default: projection]
    #[arg(long)]
    pub variant: Option<String>,
}

/// One (task, step) point of the SUDA series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SudaPoint {
    pub task: String,
    pub step: u64,
    pub variant: String,
    pub tau: f64,
    pub n_samples: usize,
    pub max_direction: usize,
    pub max_value: f64,
    pub strong_count: usize,
}

const SUDA_SERIES_HEADER: &[&str] = &[
    "task",
    "step",
    "variant",
    "tau",
    "n_samples",
    "max_direction",
    "max_value",
    "strong_count",
];

fn parse_checkpoint(s: &str) -> anyhow::Result<(u64, Vec<PathBuf>)> {
    let bad = || UsageError::new(format!("--checkpoint {s:?}: expected STEP=ARCHIVE[,ARCHIVE]"));
    let (step, files) = s.split_once('=').ok_or_else(bad)?;
    let step: u64 = step.trim().parse().map_err(|_| bad())?;
    let files = files
        .split(',')
        .filter(|f| !f.is_empty())
        .map(|f| existing(PathBuf::from(f), "--checkpoint"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if files.is_empty() {
        return Err(bad().into());
    }
    Ok((step, files))
}

fn checkpoint_profiles(
    files: &[PathBuf],
    answers: &IndexMap<String, Vec<(u64, TokenId)>>,
    cfg: &SudaConfig,
) -> iclprobe::Result<IndexMap<String, iclprobe::SudaProfile>> {
    let archives = files
        .iter()
        .map(|p| TensorArchive::read(p))
        .collect::<iclprobe::Result<Vec<_>>>()?;
    let w = archives
        .iter()
        .find_map(|a| a.get("unembedding"))
        .ok_or_else(|| Error::Archive("no archive holds an `unembedding` entry".into()))?
        .to_matrix()?;
    let f = svd(&w)?;
    let refs: Vec<&TensorArchive> = archives.iter().collect();
    archive_profiles(&f, &refs, answers, cfg)
}

pub fn suda(g: &Globals, a: SudaArgs) -> anyhow::Result<()> {
    let threshold = a.threshold.or(g.file.threshold).unwrap_or(suda::DEFAULT_THRESHOLD);
    if !threshold.is_finite() {
        bail!(UsageError::new("--threshold must be finite"));
    }
    let variant_name = a
        .variant
        .clone()
        .or(g.file.variant.clone())
        .unwrap_or_else(|| "projection".into());
    let variant: ScoreVariant = parse(&variant_name, "--variant")?;
    let cfg = SudaConfig { threshold, variant };
    let mut answers: IndexMap<String, Vec<(u64, TokenId)>> = IndexMap::new();
    for p in &a.suite {
        let p = existing(p.clone(), "--suite")?;
        let inst = read_suite(&p).map_err(usage(format!("--suite {}", p.display())))?;
        let Some(first) = inst.first() else {
            bail!(UsageError::new(format!("--suite {} is empty", p.display())));
        };
        let task = first.kind().as_str().to_string();
        if answers.contains_key(&task) {
            bail!(UsageError::new(format!("--suite: two suites share task {task}")));
        }
        answers.insert(task, inst.iter().map(|i| (i.sample_id, i.answer)).collect());
    }
    let mut checkpoints = a
        .checkpoints
        .iter()
        .map(|s| parse_checkpoint(s))
        .collect::<anyhow::Result<Vec<_>>>()?;
    checkpoints.sort_by_key(|c| c.0);
    if checkpoints.windows(2).any(|w| w[0].0 == w[1].0) {
        bail!(UsageError::new("--checkpoint: duplicate step"));
    }
    echo(
        g,
        "suda",
        &json!({ "suites": &a.suite, "checkpoints": &checkpoints, "threshold": threshold, "variant": variant.as_str() }),
    )?;

    let results: Vec<(u64, iclprobe::Result<IndexMap<String, iclprobe::SudaProfile>>)> = checkpoints
        .par_iter()
        .map(|(step, files)| (*step, checkpoint_profiles(files, &answers, &cfg)))
        .collect();
    let mut per_task: IndexMap<String, Vec<(u64, iclprobe::SudaProfile)>> =
        answers.keys().map(|t| (t.clone(), vec![])).collect();
    let mut failures = vec![];
    for (step, r) in results {
        match r {
            Ok(profiles) => {
                for (task, p) in profiles {
                    per_task[&task].push((step, p));
                }
            }
            Err(e) => failures.push(format!("step {step}: {e}")),
        }
    }
    let mut series = vec![];
    for (task, steps) in &per_task {
        for (step, p) in steps {
            let (dir, val) = max_logit(p)?;
            series.push(SudaPoint {
                task: task.clone(),
                step: *step,
                variant: variant.as_str().into(),
                tau: threshold,
                n_samples: p.n_samples,
                max_direction: dir,
                max_value: val,
                strong_count: strong_set(p, threshold).len(),
            });
        }
    }
    let out = &g.out;
    write_csv(
        &out.join("suda_max_logit.csv"),
        &["task", "step", "variant", "direction", "value", "n_samples"],
        &series
            .iter()
            .map(|s| (&s.task, s.step, &s.variant, s.max_direction, s.max_value, s.n_samples))
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &out.join("suda_threshold_count.csv"),
        &["task", "step", "variant", "tau", "count"],
        &series
            .iter()
            .map(|s| (&s.task, s.step, &s.variant, s.tau, s.strong_count))
            .collect::<Vec<_>>(),
    )?;
    let mut text = serde_json::to_string_pretty(&series)?;
    text.push('\n');
    fs::write(out.join("suda_series.json"), text)?;
    if failures.is_empty() {
        let m = overlap_matrix(&per_task, threshold)?;
        let mut header = vec!["task".to_string()];
        header.extend(m.tasks.iter().cloned());
        let rows: Vec<Vec<String>> = m
            .tasks
            .iter()
            .zip(&m.values)
            .map(|(t, row)| {
                std::iter::once(t.clone())
                    .chain(
                        row.iter()
                            .map(|v| if v.is_nan() { "nan".into() } else { format!("{v:?}") }),
                    )
                    .collect()
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&out.join("suda_overlap.csv"), &header, &rows)?;
        println!(
            "tasks={} checkpoints={} points={}",
            m.tasks.len(),
            checkpoints.len(),
            series.len()
        );
        Ok(())
    } else {
        for f in &failures {
            eprintln!("suda: {f}");
        }
        bail!(
            "{} of {} checkpoints failed; overlap matrix not written",
            failures.len(),
            checkpoints.len()
        )
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Result store written by `sweep` [default: OUT/store]
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Directory holding `suda_series.json` from the `suda` command
    #[arg(long)]
    pub suda: Option<PathBuf>,
    /// Odd running-average window for gap curves [default: 5]
    #[arg(long)]
    pub smooth: Option<usize>,
}

pub fn report(g: &Globals, a: ReportArgs) -> anyhow::Result<()> {
    let smooth = a.smooth.or(g.file.smooth).unwrap_or(5);
    if smooth.is_multiple_of(2) {
        bail!(UsageError::new("--smooth must be odd"));
    }
    let suda_series: Vec<SudaPoint> = match &a.suda {
        Some(dir) => {
            let p = existing(dir.join("suda_series.json"), "--suda")?;
            serde_json::from_str(&fs::read_to_string(&p)?)
                .map_err(|e| UsageError::new(format!("--suda {}: {e}", p.display())))?
        }
        None => vec![],
    };
    let (store, pts) = store_points(g, a.store.clone())?;
    echo(
        g,
        "report",
        &json!({ "store": store, "suda": a.suda, "smooth": smooth }),
    )?;
    let out = &g.out;
    write_csv(
        &out.join("token_index_curves.csv"),
        analysis::TOKEN_INDEX_HEADER,
        &analysis::token_index_rows(&pts),
    )?;
    let groups = analysis::range_groups(&pts, Metric::Accuracy)?;
    let (gaps, skipped) = analysis::range_gaps(&groups, smooth);
    for s in &skipped {
        log::info!("gap curve skipped for {}: {}", s.subject, s.reason);
    }
    write_csv(&out.join("gap_curves.csv"), analysis::GAP_HEADER, &gaps)?;
    write_csv(
        &out.join("task_config_curves.csv"),
        analysis::TASK_CONFIG_HEADER,
        &analysis::task_config_rows(&pts),
    )?;
    write_csv(
        &out.join("scaling_points.csv"),
        analysis::SCALING_POINT_HEADER,
        &analysis::scaling_points(&pts, Metric::Accuracy),
    )?;
    write_csv(&out.join("suda_series.csv"), SUDA_SERIES_HEADER, &suda_series)?;
    let by_task: BTreeMap<&str, usize> = pts.iter().fold(BTreeMap::new(), |mut m, p| {
        *m.entry(p.task.as_str()).or_default() += 1;
        m
    });
    println!(
        "cells={} tasks={} gap_rows={} suda_points={}",
        pts.len(),
        by_task.len(),
        gaps.len(),
        suda_series.len()
    );
    if skipped.iter().any(|s| s.failed) {
        bail!("gap analysis failed");
    }
    Ok(())
}
