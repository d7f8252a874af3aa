use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    build_pool_index_range, build_pool_wordlist, gen_cf, gen_country_capital, gen_lsc, gen_lscg, gen_tt, gen_wc,
    gen_wi, Delimiters, TaskConfig, TaskInstance, TokenPool,
};
use crate::data::{self, CapitalEntry, LexiconRow};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const DEFAULT_N_SAMPLES: usize = 1000;

fn default_n_samples() -> usize {
    DEFAULT_N_SAMPLES
}

fn yes() -> bool {
    true
}

/// Where a suite's content tokens come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSpec {
    IndexRange {
        lo: usize,
        hi: usize,
        #[serde(default = "yes")]
        filter_special: bool,
    },
    /// A bundled word list; currently only `frequent`.
    Wordlist { name: String },
    /// One word per line.
    WordlistFile { path: PathBuf },
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec::Wordlist {
            name: "frequent".into(),
        }
    }
}

impl PoolSpec {
    pub fn label(&self) -> String {
        match self {
            PoolSpec::IndexRange { lo, hi, .. } => format!("idx{lo}-{hi}"),
            PoolSpec::Wordlist { name } => name.clone(),
            PoolSpec::WordlistFile { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "wordlist".into()),
        }
    }

    /// Builds the pool, returning it with any words skipped as non-single-token.
    pub fn build(&self, vocab: &Vocabulary) -> Result<(TokenPool, Vec<String>)> {
        match self {
            PoolSpec::IndexRange { lo, hi, filter_special } => {
                Ok((build_pool_index_range(vocab, *lo, *hi, *filter_special)?, vec![]))
            }
            PoolSpec::Wordlist { name } => {
                if name != "frequent" {
                    return Err(Error::InvalidConfig(format!("unknown bundled word list {name:?}")));
                }
                let wp = build_pool_wordlist(vocab, name, &data::frequent_words())?;
                Ok((wp.pool, wp.skipped))
            }
            PoolSpec::WordlistFile { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let words: Vec<&str> = text.lines().map(str::trim).filter(|w| !w.is_empty()).collect();
                let wp = build_pool_wordlist(vocab, &self.label(), &words)?;
                Ok((wp.pool, wp.skipped))
            }
        }
    }
}

/// Everything needed to regenerate a suite bit-for-bit from a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub task: TaskConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolSpec>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capitals: Option<PathBuf>,
}

impl SuiteSpec {
    pub fn new(task: TaskConfig, n_samples: usize, seed: u64) -> Self {
        Self {
            name: None,
            task,
            pool: None,
            n_samples,
            seed,
            lexicon: None,
            capitals: None,
        }
    }

    pub fn with_pool(mut self, pool: PoolSpec) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn pool_spec(&self) -> PoolSpec {
        self.pool.clone().unwrap_or_default()
    }

    /// Human-readable key, e.g. `lsc_p5_r5@frequent#s42`.
    pub fn key(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let pool = if self.task.uses_pool() {
            format!("@{}", self.pool_spec().label())
        } else {
            String::new()
        };
        format!("{}{}#s{}", self.task.label(), pool, self.seed)
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("suite spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig(format!("suite {} has n_samples = 0", self.key())));
        }
        Ok(())
    }

    fn lexicon_rows(&self) -> Result<Vec<LexiconRow>> {
        match &self.lexicon {
            Some(p) => data::load_lexicon(p),
            None => Ok(data::lexicon().to_vec()),
        }
    }

    fn capital_rows(&self) -> Result<Vec<CapitalEntry>> {
        match &self.capitals {
            Some(p) => data::load_capitals(p),
            None => Ok(data::capitals().to_vec()),
        }
    }

    pub fn generate(&self, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
        self.validate()?;
        let (n, seed) = (self.n_samples, self.seed);
        let pool = || -> Result<TokenPool> {
            let (pool, skipped) = self.pool_spec().build(vocab)?;
            if !skipped.is_empty() {
                log::info!("{}: {} words are not single tokens", self.key(), skipped.len());
            }
            Ok(pool)
        };
        match &self.task {
            TaskConfig::Lsc(c) => gen_lsc(&pool()?, c, seed, n),
            TaskConfig::Lscg(c) => gen_lscg(&pool()?, c, seed, n),
            TaskConfig::Wc(c) => gen_wc(&pool()?, &Delimiters::from_vocab(vocab)?, c, seed, n),
            TaskConfig::Wi(c) => gen_wi(&pool()?, &Delimiters::from_vocab(vocab)?, c, seed, n),
            TaskConfig::Tt(c) => gen_tt(vocab, &self.lexicon_rows()?, c, seed, n),
            TaskConfig::Cf(_) => gen_cf(vocab, &self.capital_rows()?, seed, n),
            TaskConfig::CountryCapital(_) => gen_country_capital(vocab, &self.capital_rows()?, seed, n),
        }
    }
}

pub fn write_suite(path: &Path, instances: &[TaskInstance]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_suite(path: &Path) -> Result<Vec<TaskInstance>> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{LscConfig, NoConfig};
    use crate::vocab::demo_vocabulary;

    #[test]
    fn spec_json_round_trip() {
        let spec = SuiteSpec::new(
            TaskConfig::Lsc(LscConfig {
                pattern_len: 5,
                gap_len: 5,
            }),
            10,
            42,
        )
        .with_pool(PoolSpec::IndexRange {
            lo: 100,
            hi: 1100,
            filter_special: true,
        });
        let json = spec.canonical_json();
        let back: SuiteSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(spec.key(), "lsc_p5_r5@idx100-1100#s42");
        let minimal: SuiteSpec = serde_json::from_str(r#"{"task":"cf","config":{},"seed":1}"#).unwrap();
        assert_eq!(minimal.n_samples, 1000);
        assert_eq!(minimal.task, TaskConfig::Cf(NoConfig {}));
    }

    #[test]
    fn instance_jsonl_round_trip() {
        let v = demo_vocabulary(0);
        let spec = SuiteSpec::new(
            TaskConfig::Lsc(LscConfig {
                pattern_len: 3,
                gap_len: 2,
            }),
            20,
            42,
        );
        let insts = spec.generate(&v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_suite(&path, &insts).unwrap();
        assert_eq!(read_suite(&path).unwrap(), insts);
        let first: serde_json::Value =
            serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
        for k in [
            "task",
            "sample_id",
            "seed",
            "config",
            "prompt",
            "answer",
            "layout",
            "multi_token_answer",
        ] {
            assert!(first.get(k).is_some(), "{k}");
        }
        assert_eq!(first["task"], "lsc");
    }

    #[test]
    fn unknown_wordlist_rejected() {
        let v = demo_vocabulary(0);
        let p = PoolSpec::Wordlist { name: "brown".into() };
        assert!(matches!(p.build(&v), Err(Error::InvalidConfig(_))));
    }
}
