use std::collections::HashMap;

use super::{Backend, ScoreRequest, ScoreResult};
use crate::error::{Error, Result};
use crate::taskgen::TaskInstance;
use crate::TokenId;

fn z_function(s: &[TokenId]) -> Vec<usize> {
    let n = s.len();
    let mut z = vec![0; n];
    let (mut l, mut r) = (0, 0);
    for i in 1..n {
        if i < r {
            z[i] = (r - i).min(z[i - l]);
        }
        while i + z[i] < n && s[z[i]] == s[i + z[i]] {
            z[i] += 1;
        }
        if i + z[i] > r {
            l = i;
            r = i + z[i];
        }
    }
    z
}

/// Longest-suffix-match induction rule.
///
/// Finds the longest suffix that also ends at an earlier position, prefers the
/// most recent such position on ties, and returns the token that followed it.
/// With no recurring suffix the final token is returned. Linear time: `z[i]`
/// on the reversed prompt is the length of the match ending `i` tokens before
/// the end.
pub fn induction_oracle_predict(prompt: &[TokenId]) -> TokenId {
    let n = prompt.len();
    let Some(&last) = prompt.last() else {
        return 0;
    };
    let rev: Vec<TokenId> = prompt.iter().rev().copied().collect();
    let z = z_function(&rev);
    let mut best = (0, 0);
    for (i, &len) in z.iter().enumerate().skip(1) {
        if len > best.0 {
            best = (len, i);
        }
    }
    if best.0 == 0 {
        last
    } else {
        prompt[n - best.1]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InductionOracle;

impl Backend for InductionOracle {
    fn name(&self) -> String {
        "induction".into()
    }

    fn vocab_size(&self) -> Option<usize> {
        None
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult> {
        req.validate(None)?;
        Ok(ScoreResult::point_mass(induction_oracle_predict(&req.prompt)))
    }
}

/// Answers any prompt of the suite it was built from with that instance's answer.
#[derive(Debug, Clone, Default)]
pub struct MetadataOracle {
    answers: HashMap<Vec<TokenId>, TokenId>,
}

impl MetadataOracle {
    pub fn from_instances(instances: &[TaskInstance]) -> Result<Self> {
        let mut answers = HashMap::with_capacity(instances.len());
        for inst in instances {
            if let Some(prev) = answers.insert(inst.prompt.clone(), inst.answer) {
                if prev != inst.answer {
                    return Err(Error::InvalidConfig(format!(
                        "sample {} repeats an earlier prompt with a different answer",
                        inst.sample_id
                    )));
                }
            }
        }
        Ok(Self { answers })
    }
}

impl Backend for MetadataOracle {
    fn name(&self) -> String {
        "metadata".into()
    }

    fn vocab_size(&self) -> Option<usize> {
        None
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult> {
        req.validate(None)?;
        self.answers
            .get(&req.prompt)
            .map(|&t| ScoreResult::point_mass(t))
            .ok_or_else(|| Error::Backend("metadata oracle: prompt not in suite".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(prompt: &[TokenId]) -> TokenId {
        let n = prompt.len();
        for len in (1..n).rev() {
            let suffix = &prompt[n - len..];
            for end in (len..n).rev() {
                if &prompt[end - len..end] == suffix {
                    return prompt[end];
                }
            }
        }
        prompt[n - 1]
    }

    #[test]
    fn fixtures() {
        let (a, b, c, x, y) = (1, 2, 3, 4, 5);
        assert_eq!(induction_oracle_predict(&[a, b, c, a, b]), c);
        assert_eq!(induction_oracle_predict(&[x, y, x]), y);
        assert_eq!(induction_oracle_predict(&[a, b, a]), b);
        assert_eq!(induction_oracle_predict(&[a, b, c]), c);
        assert_eq!(induction_oracle_predict(&[a, a, a]), a);
        assert_eq!(induction_oracle_predict(&[a, b, a, c, a]), c);
    }

    #[test]
    fn matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let n = rng.gen_range(1..24);
            let alphabet = rng.gen_range(1..5);
            let p: Vec<TokenId> = (0..n).map(|_| rng.gen_range(0..alphabet)).collect();
            assert_eq!(induction_oracle_predict(&p), brute(&p), "{p:?}");
        }
    }

    #[test]
    fn induction_backend_point_mass() {
        let r = InductionOracle
            .score(&ScoreRequest::new(vec![1, 2, 1], 1, false))
            .unwrap();
        assert_eq!(r.topk, vec![(2, 0.0)]);
        assert!(r.is_top1(2));
        assert_eq!(r.answer_logprob_of(2).value, 0.0);
        assert_eq!(r.answer_logprob_of(1).value, f64::NEG_INFINITY);
    }
}
