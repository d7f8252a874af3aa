//! Word content (feature -> label classification) and word index (copy the
//! token at a fixed position).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    draw_distinct, sample_rng, Delimiters, PromptBuilder, TaskConfig, TaskInstance, TaskKind, TokenPool, WcConfig,
    WiConfig,
};
use crate::error::{Error, Result};
use crate::TokenId;

/// Content tokens of one WC line: `distractors` with `feature` inserted at
/// `position` (0 ..= distractors.len()).
pub fn wc_line(feature: TokenId, distractors: &[TokenId], position: usize) -> Vec<TokenId> {
    let mut line = distractors.to_vec();
    line.insert(position, feature);
    line
}

fn random_wc_line(
    rng: &mut ChaCha8Rng,
    feature: TokenId,
    distractor_ids: &[TokenId],
    n_distractors: usize,
) -> Result<Vec<TokenId>> {
    let d = draw_distinct(rng, distractor_ids, n_distractors)?;
    let pos = rng.gen_range(0..=n_distractors);
    Ok(wc_line(feature, &d, pos))
}

fn wc_instance(
    content: &[TokenId],
    delims: &Delimiters,
    cfg: &WcConfig,
    seed: u64,
    sample_id: u64,
) -> Result<TaskInstance> {
    let mut rng = sample_rng(seed, TaskKind::Wc, sample_id);
    let drawn = draw_distinct(&mut rng, content, cfg.n_features + cfg.n_labels)?;
    let (features, labels) = drawn.split_at(cfg.n_features);
    // each label at least once, the rest uniform
    let mut assignment: Vec<usize> = (0..cfg.n_labels).collect();
    assignment.extend((cfg.n_labels..cfg.n_features).map(|_| rng.gen_range(0..cfg.n_labels)));
    assignment.shuffle(&mut rng);

    let distractor_ids: Vec<TokenId> = content.iter().copied().filter(|t| !drawn.contains(t)).collect();

    let mut demos: Vec<usize> = (0..cfg.n_features)
        .flat_map(|f| std::iter::repeat_n(f, cfg.n_demos_per_feature))
        .collect();
    demos.shuffle(&mut rng);

    let mut b = PromptBuilder::default();
    for (i, &f) in demos.iter().enumerate() {
        let start = b.begin();
        b.extend(&random_wc_line(
            &mut rng,
            features[f],
            &distractor_ids,
            cfg.n_distractors,
        )?);
        b.extend(&delims.arrow);
        b.extend(&[labels[assignment[f]]]);
        b.extend(&delims.semi);
        b.close_role(format!("demo{i}"), start);
    }
    let q = rng.gen_range(0..cfg.n_features);
    let start = b.begin();
    b.extend(&random_wc_line(
        &mut rng,
        features[q],
        &distractor_ids,
        cfg.n_distractors,
    )?);
    b.extend(&delims.arrow);
    b.close_role("query", start);
    let (prompt, layout) = b.finish();
    Ok(TaskInstance {
        config: TaskConfig::Wc(*cfg),
        sample_id,
        seed,
        prompt,
        answer: labels[assignment[q]],
        layout,
        multi_token_answer: false,
    })
}

/// Word content: `X* Ti X* -> Li ;` demonstrations, query ends at `->`.
///
/// Features and labels are distinct within an instance. Distractors are
/// distinct within a line and disjoint from features and labels, but may
/// repeat across lines.
pub fn gen_wc(
    pool: &TokenPool,
    delims: &Delimiters,
    cfg: &WcConfig,
    seed: u64,
    n_samples: usize,
) -> Result<Vec<TaskInstance>> {
    cfg.validate()?;
    let content = pool.content_ids(|id| delims.contains(id));
    if content.len() < cfg.tokens_needed() {
        return Err(Error::PoolTooSmall {
            needed: cfg.tokens_needed(),
            available: content.len(),
        });
    }
    (0..n_samples as u64)
        .map(|id| wc_instance(&content, delims, cfg, seed, id))
        .collect()
}

pub fn wi_instance(
    pool: &TokenPool,
    delims: &Delimiters,
    cfg: &WiConfig,
    seed: u64,
    sample_id: u64,
) -> Result<TaskInstance> {
    cfg.validate()?;
    let content = pool.content_ids(|id| delims.contains(id));
    wi_from_content(&content, delims, cfg, seed, sample_id)
}

fn wi_from_content(
    content: &[TokenId],
    delims: &Delimiters,
    cfg: &WiConfig,
    seed: u64,
    sample_id: u64,
) -> Result<TaskInstance> {
    let mut rng = sample_rng(seed, TaskKind::Wi, sample_id);
    let toks = draw_distinct(&mut rng, content, cfg.tokens_needed())?;
    let mut lines = toks.chunks_exact(cfg.seq_len);
    let mut b = PromptBuilder::default();
    for i in 0..cfg.n_demos {
        let seq = lines.next().expect("sized by tokens_needed");
        let start = b.begin();
        b.extend(seq);
        b.extend(&delims.arrow);
        b.extend(&[seq[cfg.target_index]]);
        b.extend(&delims.semi);
        b.close_role(format!("demo{i}"), start);
    }
    let query = lines.next().expect("sized by tokens_needed");
    let start = b.begin();
    b.extend(query);
    b.extend(&delims.arrow);
    b.close_role("query", start);
    let (prompt, layout) = b.finish();
    Ok(TaskInstance {
        config: TaskConfig::Wi(*cfg),
        sample_id,
        seed,
        prompt,
        answer: query[cfg.target_index],
        layout,
        multi_token_answer: false,
    })
}

/// Word index: `S1 .. Sn -> Si ;` demonstrations sharing `i`; the query
/// uses fresh tokens.
pub fn gen_wi(
    pool: &TokenPool,
    delims: &Delimiters,
    cfg: &WiConfig,
    seed: u64,
    n_samples: usize,
) -> Result<Vec<TaskInstance>> {
    cfg.validate()?;
    let content = pool.content_ids(|id| delims.contains(id));
    if content.len() < cfg.tokens_needed() {
        return Err(Error::PoolTooSmall {
            needed: cfg.tokens_needed(),
            available: content.len(),
        });
    }
    (0..n_samples as u64)
        .map(|id| wi_from_content(&content, delims, cfg, seed, id))
        .collect()
}
