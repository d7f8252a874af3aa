use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_suite_with, CellSummary, CheckpointSpec, RunOptions, SampleResult, Scored, SweepManifest};
use crate::error::{Error, Result};
use crate::seed::content_hash;
use crate::taskgen::{SuiteSpec, TaskInstance};
use crate::vocab::Vocabulary;

const INDEX: &str = "index.json";
const RUN_LOG: &str = "run.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub hash: String,
    pub suite: String,
    pub checkpoint: String,
    pub model: String,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<u64>,
    pub backend: String,
    pub spec: SuiteSpec,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<CellSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub cells: Vec<CellRecord>,
    pub computed: usize,
    pub skipped: usize,
}

impl SweepReport {
    pub fn failed(&self) -> Vec<&CellRecord> {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).collect()
    }
}

/// Directory of per-cell JSONL files (`cells/{hash}.jsonl`) plus `index.json`.
#[derive(Debug, Clone)]
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let cells = root.join("cells");
        fs::create_dir_all(&cells).map_err(|e| Error::io(&cells, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Content hash of the suite spec and checkpoint key.
    pub fn cell_hash(suite: &SuiteSpec, checkpoint: &CheckpointSpec) -> String {
        let mut h = content_hash(format!("{}\n{}", suite.canonical_json(), checkpoint.key()).as_bytes());
        h.truncate(24);
        h
    }

    pub fn cell_path(&self, hash: &str) -> PathBuf {
        self.root.join("cells").join(format!("{hash}.jsonl"))
    }

    fn partial_path(&self, hash: &str) -> PathBuf {
        self.root.join("cells").join(format!("{hash}.partial.jsonl"))
    }

    pub fn read_results(path: &Path) -> Result<Vec<SampleResult>> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        Ok(out)
    }

    /// Results of a cell if its file holds exactly `n` samples.
    pub fn load_complete(&self, hash: &str, n: usize) -> Option<Vec<SampleResult>> {
        let path = self.cell_path(hash);
        let results = Self::read_results(&path).ok()?;
        (results.len() == n).then_some(results)
    }

    /// Whatever survived in a partial file; a torn final line is dropped.
    fn read_partial(&self, hash: &str) -> Vec<SampleResult> {
        let Ok(file) = File::open(self.partial_path(hash)) else {
            return vec![];
        };
        BufReader::new(file)
            .lines()
            .map_while(|l| l.ok())
            .filter_map(|l| serde_json::from_str(&l).ok())
            .collect()
    }

    fn append_partial(&self, hash: &str, batch: &[Scored]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let path = self.partial_path(hash);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for s in batch {
            serde_json::to_writer(&mut w, &s.result)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn write_results(path: &Path, results: &[SampleResult]) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            for r in results {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read_index(&self) -> Result<Vec<CellRecord>> {
        let path = self.root.join(INDEX);
        if !path.exists() {
            return Ok(vec![]);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Merges `records` into the index, replacing entries with the same hash.
    pub fn update_index(&self, records: &[CellRecord]) -> Result<()> {
        let mut all: BTreeMap<(String, String, String), CellRecord> = self
            .read_index()?
            .into_iter()
            .map(|r| ((r.suite.clone(), r.checkpoint.clone(), r.hash.clone()), r))
            .collect();
        let fresh: HashSet<&str> = records.iter().map(|r| r.hash.as_str()).collect();
        all.retain(|_, r| !fresh.contains(r.hash.as_str()));
        for r in records {
            all.insert((r.suite.clone(), r.checkpoint.clone(), r.hash.clone()), r.clone());
        }
        let list: Vec<&CellRecord> = all.values().collect();
        let path = self.root.join(INDEX);
        let mut text = serde_json::to_string_pretty(&list)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Appends a timestamped line to `run.log`. Failures to log are ignored.
    pub fn log(&self, msg: &str) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        if let Ok(mut f) = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(RUN_LOG))
        {
            let _ = writeln!(f, "{ts:.3} {msg}");
        }
    }

    /// Results for every complete cell in the index.
    pub fn complete_cells(&self) -> Result<Vec<(CellRecord, Vec<SampleResult>)>> {
        self.read_index()?
            .into_iter()
            .filter(|r| r.status == CellStatus::Complete)
            .map(|r| {
                let res = Self::read_results(&self.cell_path(&r.hash))?;
                Ok((r, res))
            })
            .collect()
    }
}

fn record(
    hash: String,
    suite: &SuiteSpec,
    ck: &CheckpointSpec,
    outcome: std::result::Result<CellSummary, String>,
) -> CellRecord {
    let (status, summary, error) = match outcome {
        Ok(s) => (CellStatus::Complete, Some(s), None),
        Err(e) => (CellStatus::Failed, None, Some(e)),
    };
    CellRecord {
        hash,
        suite: suite.key(),
        checkpoint: ck.key(),
        model: ck.model.clone(),
        step: ck.step,
        params: ck.params,
        backend: ck.backend.to_string(),
        spec: suite.clone(),
        status,
        summary,
        error,
    }
}

fn run_cell(
    store: &ResultStore,
    hash: &str,
    suite: &SuiteSpec,
    instances: &[TaskInstance],
    ck: &CheckpointSpec,
    manifest: &SweepManifest,
    vocab_size: usize,
) -> Result<Vec<SampleResult>> {
    let backend = ck.backend.open(instances, Some(vocab_size), &manifest.http)?;
    let mut done: BTreeMap<u64, SampleResult> =
        store.read_partial(hash).into_iter().map(|r| (r.sample_id, r)).collect();
    let todo: Vec<TaskInstance> = instances
        .iter()
        .filter(|i| !done.contains_key(&i.sample_id))
        .cloned()
        .collect();
    if !done.is_empty() {
        store.log(&format!(
            "cell={hash} resuming with {} of {} samples done",
            done.len(),
            instances.len()
        ));
    }
    let opts = RunOptions {
        suite: suite.key(),
        checkpoint: ck.key(),
        top_k: manifest.top_k,
        want_hidden: false,
    };
    let mut latencies = Vec::new();
    if !todo.is_empty() {
        let scored = run_suite_with(backend.as_ref(), &todo, &opts, &mut |b| store.append_partial(hash, b))?;
        for s in scored {
            latencies.push(s.result.latency_ms);
            done.insert(s.result.sample_id, s.result);
        }
    }
    let results: Vec<SampleResult> = done.into_values().collect();
    ResultStore::write_results(&store.cell_path(hash), &results)?;
    let _ = fs::remove_file(store.partial_path(hash));
    if !latencies.is_empty() {
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        store.log(&format!(
            "cell={hash} suite={} checkpoint={} scored={} mean_latency_ms={mean:.3}",
            opts.suite,
            opts.checkpoint,
            latencies.len()
        ));
    }
    Ok(results)
}

/// Evaluates every (suite, checkpoint) cell not already complete in `store`.
///
/// Suites are generated once from their own seeds and shared by all
/// checkpoints. A failing cell is recorded and does not stop the others.
pub fn sweep(manifest: &SweepManifest, vocab: &Vocabulary, store: &ResultStore) -> Result<SweepReport> {
    manifest.validate()?;
    let suites: Vec<std::result::Result<Vec<TaskInstance>, String>> = manifest
        .suites
        .par_iter()
        .map(|s| s.generate(vocab).map_err(|e| e.to_string()))
        .collect();
    let cells: Vec<(usize, usize)> = (0..manifest.suites.len())
        .flat_map(|s| (0..manifest.checkpoints.len()).map(move |c| (s, c)))
        .collect();
    let outcomes: Vec<(CellRecord, bool)> = cells
        .par_iter()
        .map(|&(si, ci)| {
            let suite = &manifest.suites[si];
            let ck = &manifest.checkpoints[ci];
            let hash = ResultStore::cell_hash(suite, ck);
            if let Some(done) = store.load_complete(&hash, suite.n_samples) {
                let outcome = CellSummary::of(&done).map_err(|e| e.to_string());
                return (record(hash, suite, ck, outcome), false);
            }
            let outcome = match &suites[si] {
                Err(e) => Err(format!("suite generation failed: {e}")),
                Ok(instances) => run_cell(store, &hash, suite, instances, ck, manifest, vocab.size())
                    .and_then(|r| CellSummary::of(&r))
                    .map_err(|e| e.to_string()),
            };
            if let Err(e) = &outcome {
                store.log(&format!(
                    "cell={hash} suite={} checkpoint={} failed: {e}",
                    suite.key(),
                    ck.key()
                ));
            }
            (record(hash, suite, ck, outcome), true)
        })
        .collect();
    let mut report = SweepReport::default();
    for (rec, ran) in outcomes {
        if ran {
            report.computed += 1;
        } else {
            report.skipped += 1;
        }
        report.cells.push(rec);
    }
    store.update_index(&report.cells)?;
    Ok(report)
}
