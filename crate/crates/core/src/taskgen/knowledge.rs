//! Tasks that lean on parametric knowledge: token translation, the
//! counterfactual capital swap, and the plain country-capital control.

use indexmap::IndexMap;

use super::{sample_rng, Delimiters, NoConfig, PromptBuilder, Span, TaskConfig, TaskInstance, TaskKind, TtConfig};
use crate::data::{CapitalEntry, LexiconRow};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;
use crate::TokenId;

const CF_MAX_ATTEMPTS: usize = 256;

fn answer_tokens(vocab: &Vocabulary, word: &str) -> Result<(TokenId, bool)> {
    let enc = vocab.encode(&format!(" {word}"))?;
    let first = *enc.first().ok_or_else(|| Error::Unencodable(word.to_string()))?;
    Ok((first, enc.len() > 1))
}

pub struct TtPrompt {
    pub prompt: Vec<TokenId>,
    pub layout: IndexMap<String, Span>,
    pub answer: TokenId,
    pub multi_token_answer: bool,
}

/// `src -> tgt ;` per demonstration, then `src ->` for the query. Words are
/// encoded in their space-led form; the answer is the first token of the
/// query's target word.
pub fn tt_prompt_for(
    vocab: &Vocabulary,
    delims: &Delimiters,
    demos: &[(&str, &str)],
    query: (&str, &str),
) -> Result<TtPrompt> {
    let mut b = PromptBuilder::default();
    for (i, (src, tgt)) in demos.iter().enumerate() {
        let start = b.begin();
        b.extend(&vocab.encode(&format!(" {src}"))?);
        b.extend(&delims.arrow);
        b.extend(&vocab.encode(&format!(" {tgt}"))?);
        b.extend(&delims.semi);
        b.close_role(format!("demo{i}"), start);
    }
    let start = b.begin();
    b.extend(&vocab.encode(&format!(" {}", query.0))?);
    b.extend(&delims.arrow);
    b.close_role("query", start);
    let (answer, multi_token_answer) = answer_tokens(vocab, query.1)?;
    let (prompt, layout) = b.finish();
    Ok(TtPrompt {
        prompt,
        layout,
        answer,
        multi_token_answer,
    })
}

pub fn gen_tt(
    vocab: &Vocabulary,
    lexicon: &[LexiconRow],
    cfg: &TtConfig,
    seed: u64,
    n_samples: usize,
) -> Result<Vec<TaskInstance>> {
    cfg.validate()?;
    let delims = Delimiters::from_vocab(vocab)?;
    let pairs: Vec<(&str, &str)> = lexicon
        .iter()
        .map(|r| (r.word(cfg.src_lang), r.word(cfg.tgt_lang)))
        .filter(|(s, t)| !s.is_empty() && !t.is_empty())
        .collect();
    if pairs.len() < cfg.n_demos + 1 {
        return Err(Error::Insufficient(format!(
            "tt needs {} word pairs for {}->{}, lexicon has {}",
            cfg.n_demos + 1,
            cfg.src_lang,
            cfg.tgt_lang,
            pairs.len()
        )));
    }
    (0..n_samples as u64)
        .map(|sample_id| {
            let mut rng = sample_rng(seed, TaskKind::Tt, sample_id);
            let idx = rand::seq::index::sample(&mut rng, pairs.len(), cfg.n_demos + 1).into_vec();
            let demos: Vec<(&str, &str)> = idx[..cfg.n_demos].iter().map(|&i| pairs[i]).collect();
            let p = tt_prompt_for(vocab, &delims, &demos, pairs[idx[cfg.n_demos]])?;
            Ok(TaskInstance {
                config: TaskConfig::Tt(*cfg),
                sample_id,
                seed,
                prompt: p.prompt,
                answer: p.answer,
                layout: p.layout,
                multi_token_answer: p.multi_token_answer,
            })
        })
        .collect()
}

/// The counterfactual prompt for swapping the capitals of `a` and `b`;
/// the answer is `a`'s real capital.
pub fn cf_instance_for(
    vocab: &Vocabulary,
    a: &CapitalEntry,
    b: &CapitalEntry,
    seed: u64,
    sample_id: u64,
) -> Result<TaskInstance> {
    let text = format!(
        "If we switch the capital of {} and {}, then {}'s capital is {} and {}'s capital is",
        a.country, b.country, a.country, b.capital, b.country
    );
    let prompt = vocab.encode(&text)?;
    let (answer, multi_token_answer) = answer_tokens(vocab, &a.capital)?;
    let mut layout = IndexMap::new();
    layout.insert("query".to_string(), [0, prompt.len()]);
    Ok(TaskInstance {
        config: TaskConfig::Cf(NoConfig {}),
        sample_id,
        seed,
        prompt,
        answer,
        layout,
        multi_token_answer,
    })
}

/// Counterfactual capital swap. Pairs whose answer token already occurs in
/// the prompt (e.g. a capital named after its country) are redrawn.
pub fn gen_cf(vocab: &Vocabulary, capitals: &[CapitalEntry], seed: u64, n_samples: usize) -> Result<Vec<TaskInstance>> {
    if capitals.len() < 2 {
        return Err(Error::Insufficient("cf needs at least 2 countries".into()));
    }
    (0..n_samples as u64)
        .map(|sample_id| {
            let mut rng = sample_rng(seed, TaskKind::Cf, sample_id);
            for _ in 0..CF_MAX_ATTEMPTS {
                let pick = rand::seq::index::sample(&mut rng, capitals.len(), 2);
                let (a, b) = (&capitals[pick.index(0)], &capitals[pick.index(1)]);
                if a.capital == b.capital {
                    continue;
                }
                let inst = cf_instance_for(vocab, a, b, seed, sample_id)?;
                if !inst.prompt.contains(&inst.answer) {
                    return Ok(inst);
                }
            }
            Err(Error::Insufficient(
                "no country pair keeps the answer token out of the prompt".into(),
            ))
        })
        .collect()
}

pub fn country_capital_instance_for(
    vocab: &Vocabulary,
    entry: &CapitalEntry,
    seed: u64,
    sample_id: u64,
) -> Result<TaskInstance> {
    let prompt = vocab.encode(&format!("The capital city of {} is", entry.country))?;
    let (answer, multi_token_answer) = answer_tokens(vocab, &entry.capital)?;
    let mut layout = IndexMap::new();
    layout.insert("query".to_string(), [0, prompt.len()]);
    Ok(TaskInstance {
        config: TaskConfig::CountryCapital(NoConfig {}),
        sample_id,
        seed,
        prompt,
        answer,
        layout,
        multi_token_answer,
    })
}

/// Country-capital recall; countries are drawn without replacement, so
/// `n_samples` may not exceed the table size.
pub fn gen_country_capital(
    vocab: &Vocabulary,
    capitals: &[CapitalEntry],
    seed: u64,
    n_samples: usize,
) -> Result<Vec<TaskInstance>> {
    if capitals.is_empty() {
        return Err(Error::Insufficient("country-capital table is empty".into()));
    }
    if n_samples > capitals.len() {
        return Err(Error::Insufficient(format!(
            "{n_samples} samples requested from {} countries",
            capitals.len()
        )));
    }
    let mut rng = crate::seed::rng_for(seed, "country_capital/order");
    let order = rand::seq::index::sample(&mut rng, capitals.len(), n_samples);
    order
        .into_iter()
        .enumerate()
        .map(|(sample_id, i)| country_capital_instance_for(vocab, &capitals[i], seed, sample_id as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{capitals, lexicon, Lang};
    use crate::vocab::demo_vocabulary;

    fn entry(country: &str, capital: &str) -> CapitalEntry {
        CapitalEntry {
            country: country.into(),
            capital: capital.into(),
        }
    }

    #[test]
    fn table_layout_tt() {
        let mut v = demo_vocabulary(0);
        let mut toks: Vec<String> = (0..v.size() as TokenId)
            .map(|i| v.decode(i).unwrap().to_string())
            .collect();
        toks.push(" owl".into());
        toks.push(" Eule".into());
        v = Vocabulary::from_tokens(toks).unwrap();
        let d = Delimiters::from_vocab(&v).unwrap();
        let p = tt_prompt_for(&v, &d, &[("cat", "Katze"), ("owl", "Eule")], ("dog", "Hund")).unwrap();
        assert_eq!(v.decode_all(&p.prompt), " cat -> Katze; owl -> Eule; dog ->");
        assert_eq!(v.decode(p.answer), Some(" Hund"));
        assert!(!p.multi_token_answer);
    }

    #[test]
    fn tt_minimal_and_query_excluded() {
        let v = demo_vocabulary(0);
        let cfg = TtConfig {
            src_lang: Lang::En,
            tgt_lang: Lang::De,
            n_demos: 1,
        };
        for inst in gen_tt(&v, lexicon(), &cfg, 4, 50).unwrap() {
            let demo = inst.span("demo0").unwrap();
            let query = inst.span("query").unwrap();
            assert_ne!(demo[..demo.len() - 3], query[..query.len() - 1]);
            assert_eq!(inst.layout.len(), 2);
        }
    }

    #[test]
    fn tt_en_de_has_200_query_words() {
        let pairs = lexicon()
            .iter()
            .filter(|r| !r.word(Lang::En).is_empty() && !r.word(Lang::De).is_empty())
            .count();
        assert_eq!(pairs, 200);
    }

    #[test]
    fn tt_insufficient_pairs() {
        let v = demo_vocabulary(0);
        let cfg = TtConfig {
            src_lang: Lang::En,
            tgt_lang: Lang::De,
            n_demos: 5,
        };
        assert!(matches!(
            gen_tt(&v, &lexicon()[..3], &cfg, 1, 1),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn tt_flags_multi_token_targets() {
        let v = Vocabulary::from_tokens([" ->", ";", " cat", " dog", " Hund", " Kat", "ze"]).unwrap();
        let d = Delimiters::from_vocab(&v).unwrap();
        let p = tt_prompt_for(&v, &d, &[("dog", "Hund")], ("cat", "Katze")).unwrap();
        assert!(p.multi_token_answer);
        assert_eq!(p.answer, 5);
    }

    #[test]
    fn table_layout_cf() {
        let v = demo_vocabulary(0);
        let inst = cf_instance_for(&v, &entry("Canada", "Ottawa"), &entry("Germany", "Berlin"), 0, 0).unwrap();
        assert_eq!(
            v.decode_all(&inst.prompt),
            "If we switch the capital of Canada and Germany, then Canada's capital is Berlin and Germany's capital is"
        );
        assert_eq!(v.decode(inst.answer), Some(" Ottawa"));
        assert!(!inst.prompt.contains(&inst.answer));
        let swapped = cf_instance_for(&v, &entry("Germany", "Berlin"), &entry("Canada", "Ottawa"), 0, 0).unwrap();
        assert_eq!(v.decode(swapped.answer), Some(" Berlin"));
    }

    #[test]
    fn cf_answer_never_in_prompt() {
        let v = demo_vocabulary(0);
        let insts = gen_cf(&v, capitals(), 17, 500).unwrap();
        assert!(insts.iter().all(|i| !i.prompt.contains(&i.answer)));
    }

    #[test]
    fn cf_rejects_colliding_pairs() {
        let v = Vocabulary::from_tokens(
            "If we switch the capital of and , then 's is Mexico City Lima Peru"
                .split(' ')
                .enumerate()
                .flat_map(|(i, w)| {
                    let mut out = vec![format!(" {w}")];
                    if i == 0 || w == "," || w == "'s" {
                        out = vec![w.to_string()];
                    }
                    out
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let table = [entry("Mexico", "Mexico City"), entry("Peru", "Lima")];
        for inst in gen_cf(&v, &table, 3, 20).unwrap() {
            assert_eq!(v.decode(inst.answer), Some(" Lima"));
        }
    }

    #[test]
    fn cf_table_too_small() {
        let v = demo_vocabulary(0);
        assert!(gen_cf(&v, &capitals()[..1], 0, 1).is_err());
    }

    #[test]
    fn country_capital_france() {
        let v = demo_vocabulary(0);
        let france = capitals().iter().find(|c| c.country == "France").unwrap();
        let inst = country_capital_instance_for(&v, france, 0, 0).unwrap();
        assert_eq!(v.decode_all(&inst.prompt), "The capital city of France is");
        assert_eq!(v.decode(inst.answer), Some(" Paris"));
    }

    #[test]
    fn country_capital_sampling() {
        let v = demo_vocabulary(0);
        let a = gen_country_capital(&v, capitals(), 5, 120).unwrap();
        let b = gen_country_capital(&v, capitals(), 5, 120).unwrap();
        assert_eq!(a, b);
        let distinct: std::collections::HashSet<_> = a.iter().map(|i| i.prompt.clone()).collect();
        assert_eq!(distinct.len(), 120);
        assert!(gen_country_capital(&v, capitals(), 5, 121).is_err());
        assert!(gen_country_capital(&v, &[], 5, 1).is_err());
    }
}
