use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusSpec, TrainOptions};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::unlearn::{Method, UnlearnHyper};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub k_op_ur: Vec<f64>,
    pub k_op_rr: Vec<f64>,
    /// Include the with/without OP-UR and OP-RR cells.
    pub components: bool,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            k_op_ur: vec![2.0, 5.0, 10.0, 20.0],
            k_op_rr: vec![5.0, 10.0, 20.0, 40.0],
            components: true,
        }
    }
}

/// Whole-experiment configuration. Per-table `seed` fields are overwritten by
/// the pipeline seed, so one number drives corpus, init, training, probing
/// and unlearning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub hyper: UnlearnHyper,
    pub ablation: AblationGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: PathBuf::from("out"),
            seeds: vec![0, 1, 2, 3, 4],
            methods: Method::ALL.iter().map(|m| m.tag().to_string()).collect(),
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            train: TrainOptions::default(),
            hyper: UnlearnHyper::default(),
            ablation: AblationGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::InvalidConfig(format!("seed {dup} listed twice")));
        }
        self.parsed_methods()?;
        self.corpus.validate()?;
        self.for_seed(0).model.validate()?;
        self.hyper.validate()?;
        let in_range = |k: &f64| k.is_finite() && *k > 0.0 && *k <= 100.0;
        if !self
            .ablation
            .k_op_ur
            .iter()
            .chain(&self.ablation.k_op_rr)
            .all(in_range)
            || !in_range(&self.hyper.k_op_ur)
            || !in_range(&self.hyper.k_op_rr)
        {
            return Err(Error::InvalidConfig(
                "k percentages must lie in (0, 100]".into(),
            ));
        }
        Ok(())
    }

    /// The configuration one pipeline seed actually runs with.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.corpus.seed = seed;
        cfg.model.seed = seed;
        cfg.model.vocab_size = cfg.corpus.vocab_size;
        let needed = cfg.corpus.prompt_len + cfg.corpus.answer_len;
        cfg.model.max_seq_len = cfg.model.max_seq_len.max(needed);
        cfg.train.seed = seed;
        cfg.hyper.seed = seed;
        cfg
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn run_dir(&self, group: &str, cell: &str, seed: u64) -> PathBuf {
        self.out.join(group).join(cell).join(format!("seed-{seed}"))
    }
}
