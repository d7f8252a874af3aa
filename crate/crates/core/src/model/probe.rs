use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Backend, ScoreRequest, ScoreResult};
use crate::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};
use crate::TokenId;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Last,
    Mean,
}

/// Attention-free probe model: embed, reduce over positions, optional final
/// layer norm, unembed.
///
/// Archive entries: `embedding` and `unembedding` (both `|V| x d`), optional
/// `final_norm.weight` / `final_norm.bias` (`d`). The reduction is read from
/// the `reduction` metadata key (`last` when absent).
#[derive(Debug, Clone)]
pub struct LinearProbe {
    embedding: DMatrix<f64>,
    unembedding: DMatrix<f64>,
    norm: Option<(DVector<f64>, DVector<f64>)>,
    reduction: Reduction,
    label: String,
}

impl LinearProbe {
    pub fn new(
        embedding: DMatrix<f64>,
        unembedding: DMatrix<f64>,
        norm: Option<(DVector<f64>, DVector<f64>)>,
        reduction: Reduction,
    ) -> Result<Self> {
        let (v, d) = unembedding.shape();
        if embedding.shape() != (v, d) {
            return Err(Error::ShapeMismatch(format!(
                "embedding {:?} vs unembedding {:?}",
                embedding.shape(),
                (v, d)
            )));
        }
        if let Some((w, b)) = &norm {
            if w.len() != d || b.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "final_norm has {} / {} entries, model dim is {d}",
                    w.len(),
                    b.len()
                )));
            }
        }
        if v == 0 || d == 0 {
            return Err(Error::ShapeMismatch("empty model".into()));
        }
        Ok(Self {
            embedding,
            unembedding,
            norm,
            reduction,
            label: "linear-probe".into(),
        })
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let embedding = a.require("embedding")?.to_matrix()?;
        let unembedding = a.require("unembedding")?.to_matrix()?;
        let norm = match (a.get("final_norm.weight"), a.get("final_norm.bias")) {
            (None, None) => None,
            (Some(w), b) => {
                let w = DVector::from_vec(w.to_vec_f64());
                let b = b.map_or_else(|| DVector::zeros(w.len()), |b| DVector::from_vec(b.to_vec_f64()));
                Some((w, b))
            }
            (None, Some(_)) => return Err(Error::Archive("final_norm.bias without final_norm.weight".into())),
        };
        let reduction = match a.metadata.get("reduction").map(String::as_str) {
            None | Some("last") => Reduction::Last,
            Some("mean") => Reduction::Mean,
            Some(other) => return Err(Error::Archive(format!("unknown reduction {other:?}"))),
        };
        Self::new(embedding, unembedding, norm, reduction)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut p = Self::from_archive(&TensorArchive::read(path)?)?;
        p.label = format!("tensor:{}", path.display());
        Ok(p)
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("embedding", Tensor::from_matrix(&self.embedding))
            .expect("name");
        a.insert("unembedding", Tensor::from_matrix(&self.unembedding))
            .expect("name");
        if let Some((w, b)) = &self.norm {
            let f = |v: &DVector<f64>| Tensor::vector(v.iter().map(|&x| x as f32).collect());
            a.insert("final_norm.weight", f(w)).expect("name");
            a.insert("final_norm.bias", f(b)).expect("name");
        }
        let red = match self.reduction {
            Reduction::Last => "last",
            Reduction::Mean => "mean",
        };
        a.metadata.insert("reduction".into(), red.into());
        a
    }

    pub fn vocab_size(&self) -> usize {
        self.unembedding.nrows()
    }

    pub fn model_dim(&self) -> usize {
        self.unembedding.ncols()
    }

    pub fn unembedding(&self) -> &DMatrix<f64> {
        &self.unembedding
    }

    /// The final hidden state `x_{-1}` fed to the unembedding.
    pub fn hidden(&self, prompt: &[TokenId]) -> Result<DVector<f64>> {
        let v = self.vocab_size();
        if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= v) {
            return Err(Error::VocabMismatch {
                expected: bad as usize + 1,
                actual: v,
            });
        }
        let row = |t: TokenId| self.embedding.row(t as usize).transpose();
        let mut x = match (self.reduction, prompt.last()) {
            (_, None) => return Err(Error::InvalidConfig("empty prompt".into())),
            (Reduction::Last, Some(&t)) => row(t),
            (Reduction::Mean, Some(_)) => {
                let mut acc = DVector::zeros(self.model_dim());
                for &t in prompt {
                    acc += row(t);
                }
                acc / prompt.len() as f64
            }
        };
        if let Some((w, b)) = &self.norm {
            let d = x.len() as f64;
            let mean = x.sum() / d;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            x = x.map(|v| (v - mean) * inv).component_mul(w) + b;
        }
        Ok(x)
    }

    pub fn logits(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.unembedding * x
    }

    pub fn logprobs(&self, prompt: &[TokenId]) -> Result<(Vec<f64>, DVector<f64>)> {
        let x = self.hidden(prompt)?;
        Ok((log_softmax(self.logits(&x).as_slice()), x))
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

impl Backend for LinearProbe {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.vocab_size())
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult> {
        req.validate(Some(self.vocab_size()))?;
        let (lp, x) = self.logprobs(&req.prompt)?;
        let hidden = req.want_hidden.then(|| x.as_slice().to_vec());
        Ok(ScoreResult::from_logprobs(lp, req.top_k, hidden))
    }
}
