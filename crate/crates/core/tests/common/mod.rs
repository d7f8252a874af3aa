#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use iclprobe::data::Lang;
use iclprobe::stats::TimeSeries;
use iclprobe::taskgen::{Delimiters, LscConfig, LscgConfig, NoConfig, PoolSpec, TtConfig, WcConfig, WiConfig};
use iclprobe::vocab::demo_vocabulary;
use iclprobe::{SuiteSpec, TaskConfig, TaskInstance, TokenId, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn vocab() -> Vocabulary {
    demo_vocabulary(4096)
}

pub fn index_pool(lo: usize, hi: usize) -> PoolSpec {
    PoolSpec::IndexRange {
        lo,
        hi,
        filter_special: true,
    }
}

/// One suite per task with the given sample count; pool-based tasks draw
/// from the top 1000 ids of the demo vocabulary.
pub fn six_task_suites(n: usize, seed: u64) -> Vec<SuiteSpec> {
    let pool = index_pool(3096, 4096);
    vec![
        SuiteSpec::new(
            TaskConfig::Lsc(LscConfig {
                pattern_len: 5,
                gap_len: 5,
            }),
            n,
            seed,
        )
        .with_pool(pool.clone()),
        SuiteSpec::new(
            TaskConfig::Lscg(LscgConfig {
                pattern_len: 5,
                gap_len: 5,
                inner_gap_len: 2,
            }),
            n,
            seed,
        )
        .with_pool(pool.clone()),
        SuiteSpec::new(
            TaskConfig::Wc(WcConfig {
                n_features: 4,
                n_labels: 2,
                n_distractors: 2,
                n_demos_per_feature: 2,
            }),
            n,
            seed,
        )
        .with_pool(pool.clone()),
        SuiteSpec::new(
            TaskConfig::Wi(WiConfig {
                seq_len: 3,
                target_index: 1,
                n_demos: 5,
            }),
            n,
            seed,
        )
        .with_pool(pool),
        SuiteSpec::new(
            TaskConfig::Tt(TtConfig {
                src_lang: Lang::En,
                tgt_lang: Lang::De,
                n_demos: 5,
            }),
            n,
            seed,
        ),
        SuiteSpec::new(TaskConfig::Cf(NoConfig {}), n, seed),
    ]
}

fn count(prompt: &[TokenId]) -> HashMap<TokenId, usize> {
    let mut m = HashMap::new();
    for &t in prompt {
        *m.entry(t).or_default() += 1;
    }
    m
}

fn check_tiling(inst: &TaskInstance) -> Result<(), String> {
    let mut at = 0;
    for (role, &[s, e]) in &inst.layout {
        if s != at || e <= s {
            return Err(format!("role {role} spans [{s},{e}), expected start {at}"));
        }
        at = e;
    }
    if at != inst.prompt.len() {
        return Err(format!("layout covers {at} of {} tokens", inst.prompt.len()));
    }
    Ok(())
}

fn exactly(counts: &HashMap<TokenId, usize>, toks: &[TokenId], n: usize, what: &str) -> Result<(), String> {
    for t in toks {
        let c = counts.get(t).copied().unwrap_or(0);
        if c != n {
            return Err(format!("{what} token {t} occurs {c} times, expected {n}"));
        }
    }
    Ok(())
}

fn span<'a>(inst: &'a TaskInstance, role: &str) -> &'a [TokenId] {
    inst.span(role).unwrap_or(&[])
}

type Line = (Vec<TokenId>, Vec<TokenId>);

/// Demo lines as (content, label) pairs and the query content, for the
/// `content -> label ;` layouts.
fn lines(inst: &TaskInstance, d: &Delimiters) -> Result<(Vec<Line>, Vec<TokenId>), String> {
    let mut demos = Vec::new();
    let mut query = None;
    for (role, &[s, e]) in &inst.layout {
        let line = &inst.prompt[s..e];
        let arrow = line
            .windows(d.arrow.len())
            .position(|w| w == d.arrow.as_slice())
            .ok_or_else(|| format!("{role} has no arrow"))?;
        let content = line[..arrow].to_vec();
        let rest = &line[arrow + d.arrow.len()..];
        if role == "query" {
            if !rest.is_empty() {
                return Err("query does not end at the arrow".into());
            }
            query = Some(content);
        } else {
            let label = rest
                .strip_suffix(d.semi.as_slice())
                .ok_or_else(|| format!("{role} does not end with ';'"))?;
            demos.push((content, label.to_vec()));
        }
    }
    Ok((demos, query.ok_or("no query role")?))
}

/// Every type invariant of a generated instance.
pub fn check_instance(inst: &TaskInstance, d: &Delimiters) -> Result<(), String> {
    check_tiling(inst)?;
    let counts = count(&inst.prompt);
    match inst.config {
        TaskConfig::Lsc(c) => {
            let p = span(inst, "P#1");
            if p != span(inst, "P#2") || p.len() != c.pattern_len {
                return Err("pattern occurrences differ".into());
            }
            if span(inst, "T") != [inst.answer] || span(inst, "R").len() != c.gap_len {
                return Err("target or gap malformed".into());
            }
            exactly(&counts, p, 2, "P")?;
            exactly(&counts, &[inst.answer], 1, "T")?;
            exactly(&counts, span(inst, "R"), 1, "R")?;
            if counts.len() != c.tokens_needed() {
                return Err(format!(
                    "{} distinct tokens, expected {}",
                    counts.len(),
                    c.tokens_needed()
                ));
            }
        }
        TaskConfig::Lscg(c) => {
            let p = span(inst, "P#1");
            let (u, v) = (span(inst, "U"), span(inst, "V"));
            if p != span(inst, "P#2") || p.len() != c.pattern_len {
                return Err("pattern occurrences differ".into());
            }
            if u.len() != c.inner_gap_len || v.len() != c.inner_gap_len || (!u.is_empty() && u == v) {
                return Err("inner gaps malformed".into());
            }
            let x = span(inst, "X#1");
            if x.len() != 1 || x != span(inst, "X#2") {
                return Err("anchor malformed".into());
            }
            if span(inst, "T") != [inst.answer] {
                return Err("target is not the answer".into());
            }
            exactly(&counts, p, 2, "P")?;
            exactly(&counts, x, 2, "X")?;
            exactly(&counts, &[inst.answer], 1, "T")?;
            for role in ["U", "V", "R"] {
                exactly(&counts, span(inst, role), 1, role)?;
            }
            if counts.len() != c.tokens_needed() {
                return Err(format!(
                    "{} distinct tokens, expected {}",
                    counts.len(),
                    c.tokens_needed()
                ));
            }
        }
        TaskConfig::Wc(c) => {
            let (demos, query) = lines(inst, d)?;
            if demos.len() != c.n_features * c.n_demos_per_feature {
                return Err(format!("{} demo lines", demos.len()));
            }
            let labels: HashSet<TokenId> = demos.iter().map(|(_, l)| l[0]).collect();
            if labels.len() != c.n_labels || demos.iter().any(|(_, l)| l.len() != 1) {
                return Err(format!("{} labels used, expected {}", labels.len(), c.n_labels));
            }
            for (content, _) in demos.iter().chain([(query.clone(), vec![])].iter()) {
                let distinct: HashSet<_> = content.iter().collect();
                if content.len() != c.n_distractors + 1 || distinct.len() != content.len() {
                    return Err("line content malformed".into());
                }
                if content.iter().any(|t| labels.contains(t)) {
                    return Err("label token inside line content".into());
                }
            }
            // the feature is the query token whose demo lines all agree on one label
            let consistent = query.iter().any(|q| {
                let ls: Vec<TokenId> = demos
                    .iter()
                    .filter(|(ct, _)| ct.contains(q))
                    .map(|(_, l)| l[0])
                    .collect();
                ls.len() >= c.n_demos_per_feature && ls.iter().all(|&l| l == inst.answer)
            });
            if !consistent {
                return Err("answer is not the query feature's label".into());
            }
        }
        TaskConfig::Wi(c) => {
            let (demos, query) = lines(inst, d)?;
            if demos.len() != c.n_demos || query.len() != c.seq_len {
                return Err("wrong line counts".into());
            }
            for (content, label) in &demos {
                if content.len() != c.seq_len || label.as_slice() != [content[c.target_index]] {
                    return Err("demo does not copy the target index".into());
                }
            }
            let all: Vec<TokenId> = demos
                .iter()
                .flat_map(|(ct, _)| ct.clone())
                .chain(query.clone())
                .collect();
            if all.iter().collect::<HashSet<_>>().len() != all.len() {
                return Err("line tokens are not distinct".into());
            }
            if inst.answer != query[c.target_index] {
                return Err("answer is not the query target".into());
            }
        }
        TaskConfig::Tt(c) => {
            let (demos, query) = lines(inst, d)?;
            if demos.len() != c.n_demos {
                return Err("wrong demo count".into());
            }
            if demos.iter().any(|(src, _)| *src == query) {
                return Err("query word repeated in demos".into());
            }
        }
        TaskConfig::Cf(_) => {
            if inst.prompt.contains(&inst.answer) {
                return Err("cf answer occurs in the prompt".into());
            }
        }
        TaskConfig::CountryCapital(_) => {}
    }
    Ok(())
}

/// Pool discipline: every non-delimiter prompt token lies in `[lo, hi)`.
pub fn check_pool(inst: &TaskInstance, d: &Delimiters, lo: usize, hi: usize) -> Result<(), String> {
    match inst
        .prompt
        .iter()
        .find(|&&t| !d.contains(t) && !(lo..hi).contains(&(t as usize)))
    {
        Some(t) => Err(format!("token {t} outside [{lo}, {hi})")),
        None => Ok(()),
    }
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks by counting, O(n^2).
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

fn gamma_half(k: u32) -> f64 {
    // Gamma(k / 2) for integer k >= 1
    let mut g = if k.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut x = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < k as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Two-sided Student-t p-value by Simpson integration of the density.
pub fn t_p_by_integration(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let norm = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let pdf = |u: f64| norm * (1.0 + u * u / nu).powf(-(nu + 1.0) / 2.0);
    let steps = 20_000;
    let h = t.abs() / steps as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..steps {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * s * h / 3.0
}

pub fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e = Normal::new(0.0, 1.0).unwrap();
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x += e.sample(rng);
            x
        })
        .collect()
}

pub fn series(values: &[f64]) -> TimeSeries {
    TimeSeries::new(values.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect()).unwrap()
}

/// `(x, y)` with `y = 2x + stationary noise`.
pub fn cointegrated_pair(seed: u64, n: usize) -> (TimeSeries, TimeSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_walk(&mut rng, n);
    let e = Normal::new(0.0, 0.5).unwrap();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0 + e.sample(&mut rng)).collect();
    (series(&x), series(&y))
}

pub fn independent_walks(seed: u64, n: usize) -> (TimeSeries, TimeSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_walk(&mut rng, n);
    let y = random_walk(&mut rng, n);
    (series(&x), series(&y))
}
