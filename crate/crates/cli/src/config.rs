use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use iclprobe::model::HttpOptions;
use serde::{Deserialize, Serialize};

use crate::Globals;

/// An error caused by bad flags, config or input files (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(context: impl fmt::Display) -> impl FnOnce(iclprobe::Error) -> anyhow::Error {
    move |e| UsageError(format!("{context}: {e}")).into()
}

/// The `--config` file. Every key is optional; flags win over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub vocab: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub backend: Option<String>,
    pub top_k: Option<usize>,
    pub metric: Option<String>,
    pub lag_order: Option<usize>,
    pub det_case: Option<String>,
    pub smooth: Option<usize>,
    pub threshold: Option<f64>,
    pub variant: Option<String>,
    pub http: Option<HttpOptions>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("--config {}: {e}", path.display())).into())
    }
}

/// Writes `{out}/{command}.config.json` with the settings actually used.
pub fn echo(g: &Globals, command: &str, settings: &impl Serialize) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Echo<'a, T> {
        command: &'a str,
        seed: u64,
        jobs: usize,
        out: &'a Path,
        settings: &'a T,
    }
    fs::create_dir_all(&g.out)?;
    let mut text = serde_json::to_string_pretty(&Echo {
        command,
        seed: g.seed,
        jobs: g.jobs,
        out: &g.out,
        settings,
    })?;
    text.push('\n');
    fs::write(g.out.join(format!("{command}.config.json")), text)?;
    Ok(())
}

pub fn required<T: Clone>(flag: Option<T>, file: Option<T>, name: &str) -> anyhow::Result<T> {
    flag.or(file)
        .ok_or_else(|| UsageError(format!("missing {name}")).into())
}

pub fn existing(path: PathBuf, flag: &str) -> anyhow::Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(UsageError(format!("{flag}: {} does not exist", path.display())).into())
    }
}

pub fn parse<T: std::str::FromStr<Err = iclprobe::Error>>(s: &str, flag: &str) -> anyhow::Result<T> {
    s.parse().map_err(|e| UsageError(format!("{flag}: {e}")).into())
}
