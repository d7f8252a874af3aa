//! Literal sequence copying, with and without an inner random gap.

use indexmap::IndexMap;

use super::{
    draw_distinct, sample_rng, LscConfig, LscgConfig, PromptBuilder, Span, TaskConfig, TaskInstance, TaskKind,
    TokenPool,
};
use crate::error::{Error, Result};
use crate::TokenId;

/// `P* T R* P*`, answer `T`.
pub fn compose_lsc(pattern: &[TokenId], target: TokenId, gap: &[TokenId]) -> (Vec<TokenId>, IndexMap<String, Span>) {
    let mut b = PromptBuilder::default();
    b.push_role("P#1", pattern);
    b.push_role("T", &[target]);
    b.push_role("R", gap);
    b.push_role("P#2", pattern);
    b.finish()
}

/// `P* U* X T R* P* V* X`, answer `T`.
pub fn compose_lscg(
    pattern: &[TokenId],
    first_gap: &[TokenId],
    anchor: TokenId,
    target: TokenId,
    gap: &[TokenId],
    second_gap: &[TokenId],
) -> (Vec<TokenId>, IndexMap<String, Span>) {
    let mut b = PromptBuilder::default();
    b.push_role("P#1", pattern);
    b.push_role("U", first_gap);
    b.push_role("X#1", &[anchor]);
    b.push_role("T", &[target]);
    b.push_role("R", gap);
    b.push_role("P#2", pattern);
    b.push_role("V", second_gap);
    b.push_role("X#2", &[anchor]);
    b.finish()
}

fn check_pool(pool: &TokenPool, needed: usize) -> Result<()> {
    if pool.len() < needed {
        return Err(Error::PoolTooSmall {
            needed,
            available: pool.len(),
        });
    }
    Ok(())
}

pub fn lsc_instance(pool: &TokenPool, cfg: &LscConfig, seed: u64, sample_id: u64) -> Result<TaskInstance> {
    cfg.validate()?;
    check_pool(pool, cfg.tokens_needed())?;
    let mut rng = sample_rng(seed, TaskKind::Lsc, sample_id);
    let toks = draw_distinct(&mut rng, pool.ids(), cfg.tokens_needed())?;
    let (pattern, rest) = toks.split_at(cfg.pattern_len);
    let (target, gap) = (rest[0], &rest[1..]);
    let (prompt, layout) = compose_lsc(pattern, target, gap);
    Ok(TaskInstance {
        config: TaskConfig::Lsc(*cfg),
        sample_id,
        seed,
        prompt,
        answer: target,
        layout,
        multi_token_answer: false,
    })
}

pub fn lscg_instance(pool: &TokenPool, cfg: &LscgConfig, seed: u64, sample_id: u64) -> Result<TaskInstance> {
    cfg.validate()?;
    check_pool(pool, cfg.tokens_needed())?;
    let mut rng = sample_rng(seed, TaskKind::Lscg, sample_id);
    let toks = draw_distinct(&mut rng, pool.ids(), cfg.tokens_needed())?;
    let g = cfg.inner_gap_len;
    let (pattern, rest) = toks.split_at(cfg.pattern_len);
    let (first_gap, rest) = rest.split_at(g);
    let (anchor, target) = (rest[0], rest[1]);
    let (gap, second_gap) = rest[2..].split_at(cfg.gap_len);
    let (prompt, layout) = compose_lscg(pattern, first_gap, anchor, target, gap, second_gap);
    Ok(TaskInstance {
        config: TaskConfig::Lscg(*cfg),
        sample_id,
        seed,
        prompt,
        answer: target,
        layout,
        multi_token_answer: false,
    })
}

pub fn gen_lsc(pool: &TokenPool, cfg: &LscConfig, seed: u64, n_samples: usize) -> Result<Vec<TaskInstance>> {
    (0..n_samples as u64)
        .map(|id| lsc_instance(pool, cfg, seed, id))
        .collect()
}

pub fn gen_lscg(pool: &TokenPool, cfg: &LscgConfig, seed: u64, n_samples: usize) -> Result<Vec<TaskInstance>> {
    (0..n_samples as u64)
        .map(|id| lscg_instance(pool, cfg, seed, id))
        .collect()
}
