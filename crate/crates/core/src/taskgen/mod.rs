//! Seeded generation of the probe tasks at the token-id level.
//!
//! Every instance is composed directly from pool token ids and fixed
//! delimiter sequences; nothing is re-tokenized. Each `(config, seed,
//! sample_id)` triple owns its own RNG stream (see [`crate::seed`]), so any
//! single instance can be regenerated in isolation and suites can be built
//! in parallel.

mod copying;
mod knowledge;
mod mapping;
mod pool;
mod suite;

use std::fmt;

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Lang;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;
use crate::TokenId;

pub use copying::{compose_lsc, compose_lscg, gen_lsc, gen_lscg, lsc_instance, lscg_instance};
pub use knowledge::{
    cf_instance_for, country_capital_instance_for, gen_cf, gen_country_capital, gen_tt, tt_prompt_for,
};
pub use mapping::{gen_wc, gen_wi, wc_line, wi_instance};
pub use pool::{build_pool_index_range, build_pool_wordlist, PoolSource, TokenPool, WordListPool};
pub use suite::{read_suite, write_suite, PoolSpec, SuiteSpec, DEFAULT_N_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Lsc,
    Lscg,
    Wc,
    Wi,
    Tt,
    Cf,
    CountryCapital,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::Lsc,
        TaskKind::Lscg,
        TaskKind::Wc,
        TaskKind::Wi,
        TaskKind::Tt,
        TaskKind::Cf,
        TaskKind::CountryCapital,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Lsc => "lsc",
            TaskKind::Lscg => "lscg",
            TaskKind::Wc => "wc",
            TaskKind::Wi => "wi",
            TaskKind::Tt => "tt",
            TaskKind::Cf => "cf",
            TaskKind::CountryCapital => "country_capital",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task {s:?}")))
    }
}

pub const MAX_SPAN: usize = 64;
pub const MAX_INNER_GAP: usize = 32;
pub const DEFAULT_DEMOS: usize = 5;

fn default_demos() -> usize {
    DEFAULT_DEMOS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LscConfig {
    pub pattern_len: usize,
    pub gap_len: usize,
}

impl LscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pattern_len == 0 || self.pattern_len > MAX_SPAN || self.gap_len > MAX_SPAN {
            return Err(Error::InvalidConfig(format!(
                "lsc needs 1 <= pattern_len <= {MAX_SPAN} and gap_len <= {MAX_SPAN}"
            )));
        }
        Ok(())
    }

    pub fn tokens_needed(&self) -> usize {
        self.pattern_len + 1 + self.gap_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LscgConfig {
    pub pattern_len: usize,
    pub gap_len: usize,
    pub inner_gap_len: usize,
}

impl LscgConfig {
    pub fn validate(&self) -> Result<()> {
        LscConfig {
            pattern_len: self.pattern_len,
            gap_len: self.gap_len,
        }
        .validate()?;
        if self.inner_gap_len > MAX_INNER_GAP {
            return Err(Error::InvalidConfig(format!(
                "lscg inner_gap_len must be <= {MAX_INNER_GAP}"
            )));
        }
        Ok(())
    }

    pub fn tokens_needed(&self) -> usize {
        self.pattern_len + 2 * self.inner_gap_len + 2 + self.gap_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WcConfig {
    pub n_features: usize,
    pub n_labels: usize,
    pub n_distractors: usize,
    #[serde(default = "default_demos")]
    pub n_demos_per_feature: usize,
}

impl WcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_labels == 0 || self.n_demos_per_feature == 0 {
            return Err(Error::InvalidConfig(
                "wc needs n_features, n_labels, n_demos_per_feature >= 1".into(),
            ));
        }
        if self.n_features < self.n_labels {
            return Err(Error::InvalidConfig(format!(
                "wc needs n_features >= n_labels (got {} < {})",
                self.n_features, self.n_labels
            )));
        }
        Ok(())
    }

    pub fn tokens_needed(&self) -> usize {
        self.n_features + self.n_labels + self.n_distractors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiConfig {
    pub seq_len: usize,
    pub target_index: usize,
    #[serde(default = "default_demos")]
    pub n_demos: usize,
}

impl WiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 || self.n_demos == 0 {
            return Err(Error::InvalidConfig("wi needs seq_len >= 2, n_demos >= 1".into()));
        }
        if self.target_index >= self.seq_len {
            return Err(Error::InvalidConfig(format!(
                "wi target_index {} out of range for seq_len {}",
                self.target_index, self.seq_len
            )));
        }
        Ok(())
    }

    pub fn tokens_needed(&self) -> usize {
        (self.n_demos + 1) * self.seq_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtConfig {
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    #[serde(default = "default_demos")]
    pub n_demos: usize,
}

impl TtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.src_lang == self.tgt_lang {
            return Err(Error::InvalidConfig("tt needs src_lang != tgt_lang".into()));
        }
        if self.n_demos == 0 {
            return Err(Error::InvalidConfig("tt needs n_demos >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoConfig {}

/// Task kind plus its configuration; serializes as
/// `{"task": "lsc", "config": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "task", content = "config", rename_all = "snake_case")]
pub enum TaskConfig {
    Lsc(LscConfig),
    Lscg(LscgConfig),
    Wc(WcConfig),
    Wi(WiConfig),
    Tt(TtConfig),
    Cf(NoConfig),
    CountryCapital(NoConfig),
}

impl TaskConfig {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::Lsc(_) => TaskKind::Lsc,
            TaskConfig::Lscg(_) => TaskKind::Lscg,
            TaskConfig::Wc(_) => TaskKind::Wc,
            TaskConfig::Wi(_) => TaskKind::Wi,
            TaskConfig::Tt(_) => TaskKind::Tt,
            TaskConfig::Cf(_) => TaskKind::Cf,
            TaskConfig::CountryCapital(_) => TaskKind::CountryCapital,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Lsc(c) => c.validate(),
            TaskConfig::Lscg(c) => c.validate(),
            TaskConfig::Wc(c) => c.validate(),
            TaskConfig::Wi(c) => c.validate(),
            TaskConfig::Tt(c) => c.validate(),
            TaskConfig::Cf(_) | TaskConfig::CountryCapital(_) => Ok(()),
        }
    }

    /// Whether instances draw their content tokens from a [`TokenPool`].
    pub fn uses_pool(&self) -> bool {
        matches!(
            self,
            TaskConfig::Lsc(_) | TaskConfig::Lscg(_) | TaskConfig::Wc(_) | TaskConfig::Wi(_)
        )
    }

    /// Short label such as `lsc_p5_r5`.
    pub fn label(&self) -> String {
        match self {
            TaskConfig::Lsc(c) => format!("lsc_p{}_r{}", c.pattern_len, c.gap_len),
            TaskConfig::Lscg(c) => {
                format!("lscg_p{}_r{}_g{}", c.pattern_len, c.gap_len, c.inner_gap_len)
            }
            TaskConfig::Wc(c) => format!(
                "wc_f{}_l{}_d{}_n{}",
                c.n_features, c.n_labels, c.n_distractors, c.n_demos_per_feature
            ),
            TaskConfig::Wi(c) => format!("wi_s{}_i{}_n{}", c.seq_len, c.target_index, c.n_demos),
            TaskConfig::Tt(c) => format!(
                "tt_{}_{}_n{}",
                c.src_lang.code().to_lowercase(),
                c.tgt_lang.code().to_lowercase(),
                c.n_demos
            ),
            TaskConfig::Cf(_) => "cf".into(),
            TaskConfig::CountryCapital(_) => "country_capital".into(),
        }
    }
}

/// Half-open `[start, end)` index range within a prompt.
pub type Span = [usize; 2];

/// One generated prompt with its single answer token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    #[serde(flatten)]
    pub config: TaskConfig,
    pub sample_id: u64,
    pub seed: u64,
    pub prompt: Vec<TokenId>,
    pub answer: TokenId,
    /// Structural roles in prompt order (`P#1`, `T`, `R`, `P#2`, `demo0`,
    /// `query`, ...). Empty roles are omitted.
    pub layout: IndexMap<String, Span>,
    pub multi_token_answer: bool,
}

impl TaskInstance {
    pub fn kind(&self) -> TaskKind {
        self.config.kind()
    }

    pub fn span(&self, role: &str) -> Option<&[TokenId]> {
        self.layout.get(role).map(|&[s, e]| &self.prompt[s..e])
    }
}

/// Accumulates a prompt and its layout in order.
#[derive(Debug, Default)]
pub(crate) struct PromptBuilder {
    prompt: Vec<TokenId>,
    layout: IndexMap<String, Span>,
}

impl PromptBuilder {
    pub(crate) fn push_role(&mut self, role: impl Into<String>, tokens: &[TokenId]) {
        if tokens.is_empty() {
            return;
        }
        let start = self.prompt.len();
        self.prompt.extend_from_slice(tokens);
        self.layout.insert(role.into(), [start, self.prompt.len()]);
    }

    pub(crate) fn begin(&self) -> usize {
        self.prompt.len()
    }

    pub(crate) fn extend(&mut self, tokens: &[TokenId]) {
        self.prompt.extend_from_slice(tokens);
    }

    pub(crate) fn close_role(&mut self, role: impl Into<String>, start: usize) {
        if self.prompt.len() > start {
            self.layout.insert(role.into(), [start, self.prompt.len()]);
        }
    }

    pub(crate) fn finish(self) -> (Vec<TokenId>, IndexMap<String, Span>) {
        (self.prompt, self.layout)
    }
}

/// Token sequences for `" ->"` and `";"` in a given vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delimiters {
    pub arrow: Vec<TokenId>,
    pub semi: Vec<TokenId>,
}

impl Delimiters {
    pub const ARROW: &'static str = " ->";
    pub const SEMI: &'static str = ";";

    pub fn from_vocab(vocab: &Vocabulary) -> Result<Self> {
        let arrow = vocab.encode(Self::ARROW)?;
        let semi = vocab.encode(Self::SEMI)?;
        if vocab.decode_all(&arrow) != Self::ARROW || vocab.decode_all(&semi) != Self::SEMI {
            return Err(Error::Unencodable("delimiter round trip failed".into()));
        }
        Ok(Self { arrow, semi })
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.arrow.contains(&id) || self.semi.contains(&id)
    }
}

pub(crate) fn sample_rng(seed: u64, kind: TaskKind, sample_id: u64) -> ChaCha8Rng {
    crate::seed::rng_for(seed, &format!("{kind}/{sample_id}"))
}

/// Draws `k` distinct tokens from `ids` without replacement.
pub(crate) fn draw_distinct(rng: &mut ChaCha8Rng, ids: &[TokenId], k: usize) -> Result<Vec<TokenId>> {
    if ids.len() < k {
        return Err(Error::PoolTooSmall {
            needed: k,
            available: ids.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, ids.len(), k)
        .into_iter()
        .map(|i| ids[i])
        .collect())
}
