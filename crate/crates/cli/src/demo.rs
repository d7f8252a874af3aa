use std::fs;
use std::path::PathBuf;

use clap::Args;
use iclprobe::model::{LinearProbe, Reduction};
use iclprobe::seed::rng_for;
use iclprobe::sweep::CheckpointSpec;
use iclprobe::taskgen::{LscConfig, LscgConfig, PoolSpec, TtConfig, WcConfig, WiConfig};
use iclprobe::vocab::demo_vocabulary;
use iclprobe::{BackendSpec, SuiteSpec, SweepManifest, TaskConfig};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{echo, UsageError};
use crate::Globals;

#[derive(Debug, Args, Serialize)]
pub struct DemoArgs {
    /// Vocabulary size (at least 2048)
    #[arg(long, default_value_t = 4096)]
    pub vocab_size: usize,
    /// Instances per suite
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Checkpoint steps written for each probe model
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1000, 2000, 4000])]
    pub steps: Vec<u64>,
    /// Hidden sizes of the probe models
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32])]
    pub dims: Vec<usize>,
}

fn probe(v: usize, d: usize, step: u64, seed: u64) -> LinearProbe {
    let mut rng = rng_for(seed, &format!("demo/probe/d{d}/step{step}"));
    let scale = 1.0 + (step as f64 + 1.0).ln();
    let emb = DMatrix::from_fn(v, d, |_, _| rng.gen_range(-1.0..1.0));
    let unemb = DMatrix::from_fn(v, d, |_, _| scale * rng.gen_range(-1.0..1.0) / (d as f64).sqrt());
    LinearProbe::new(emb, unemb, None, Reduction::Mean).expect("shapes agree")
}

pub fn demo(g: &Globals, a: DemoArgs) -> anyhow::Result<()> {
    if a.vocab_size < 2048 {
        anyhow::bail!(UsageError::new("--vocab-size must be >= 2048"));
    }
    if a.n == 0 || a.steps.is_empty() || a.dims.is_empty() {
        anyhow::bail!(UsageError::new("--n, --steps and --dims must be nonempty"));
    }
    echo(g, "demo", &a)?;
    let dir = &g.out;
    fs::create_dir_all(dir.join("probes"))?;
    let vocab = demo_vocabulary(a.vocab_size);
    vocab.write_tsv(&dir.join("vocab.tsv"))?;

    let lsc = TaskConfig::Lsc(LscConfig {
        pattern_len: 3,
        gap_len: 3,
    });
    let v = vocab.size();
    let width = 512;
    let mut suites: Vec<SuiteSpec> = (0..4)
        .map(|i| {
            let lo = v - (4 - i) * width;
            SuiteSpec::new(lsc, a.n, g.seed).with_pool(PoolSpec::IndexRange {
                lo,
                hi: lo + width,
                filter_special: true,
            })
        })
        .collect();
    for task in [
        TaskConfig::Lscg(LscgConfig {
            pattern_len: 3,
            gap_len: 3,
            inner_gap_len: 2,
        }),
        TaskConfig::Wc(WcConfig {
            n_features: 4,
            n_labels: 2,
            n_distractors: 2,
            n_demos_per_feature: 2,
        }),
        TaskConfig::Wi(WiConfig {
            seq_len: 3,
            target_index: 1,
            n_demos: 3,
        }),
        TaskConfig::Tt(TtConfig {
            src_lang: "EN".parse()?,
            tgt_lang: "DE".parse()?,
            n_demos: 3,
        }),
        TaskConfig::Cf(Default::default()),
        TaskConfig::CountryCapital(Default::default()),
    ] {
        suites.push(SuiteSpec::new(task, a.n, g.seed));
    }

    let mut checkpoints = vec![CheckpointSpec::new("oracle", 0, BackendSpec::InductionOracle)];
    for &d in &a.dims {
        let model = format!("probe-d{d}");
        for &step in &a.steps {
            let rel = PathBuf::from("probes").join(format!("{model}-step{step}.tnsa"));
            probe(v, d, step, g.seed).to_archive().write(&dir.join(&rel))?;
            let mut ck = CheckpointSpec::new(&model, step, BackendSpec::TensorEval { path: rel });
            ck.params = Some((2 * v * d) as u64);
            checkpoints.push(ck);
        }
    }
    let manifest = SweepManifest {
        vocab: Some("vocab.tsv".into()),
        suites,
        checkpoints,
        metrics: vec![iclprobe::sweep::Metric::Accuracy, iclprobe::sweep::Metric::MeanLogprob],
        top_k: 10,
        http: Default::default(),
    };
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    println!(
        "{}",
        json!({
            "vocab": dir.join("vocab.tsv"),
            "manifest": dir.join("manifest.json"),
            "suites": manifest.suites.len(),
            "checkpoints": manifest.checkpoints.len(),
        })
    );
    Ok(())
}
