//! Gradient probing: per-parameter mean gradient magnitudes for a dataset,
//! measured under random-label substitution.
//!
//! For each item the answer is replaced by a random one `trials` times, the
//! loss gradients are averaged (signed), and the absolute value of that
//! average is then averaged over items.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, KnowledgeItem, Split};
use crate::error::{Error, Result};
use crate::model::{Gradient, ModelState};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TRIALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "U-pri")]
    UnlearnPrivacy,
    #[serde(rename = "R-pri")]
    RetainPrivacy,
    #[serde(rename = "U-cpy")]
    UnlearnCopyright,
    #[serde(rename = "R-cpy")]
    RetainCopyright,
}

impl DatasetTag {
    /// Row/column order of the Jaccard matrix.
    pub const ALL: [DatasetTag; 4] = [
        DatasetTag::UnlearnPrivacy,
        DatasetTag::RetainPrivacy,
        DatasetTag::UnlearnCopyright,
        DatasetTag::RetainCopyright,
    ];

    pub fn split(self) -> Split {
        match self {
            DatasetTag::UnlearnPrivacy => Split::PrivacyUnlearn,
            DatasetTag::RetainPrivacy => Split::PrivacyRetain,
            DatasetTag::UnlearnCopyright => Split::CopyrightUnlearn,
            DatasetTag::RetainCopyright => Split::CopyrightRetain,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::UnlearnPrivacy => "U-pri",
            DatasetTag::RetainPrivacy => "R-pri",
            DatasetTag::UnlearnCopyright => "U-cpy",
            DatasetTag::RetainCopyright => "R-cpy",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset tag `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSummary {
    pub format_version: u32,
    pub dataset_tag: DatasetTag,
    pub n_items: usize,
    pub trials: usize,
    pub model_fingerprint: String,
    pub layer_names: Vec<String>,
    /// `magnitudes[l][j]`: mean absolute trial-averaged gradient of parameter
    /// `j` of layer `l`.
    pub magnitudes: Vec<Vec<f64>>,
}

impl GradientSummary {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.magnitudes.iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_names.len() != self.magnitudes.len() {
            return Err(Error::ShapeMismatch("layer names vs magnitudes".into()));
        }
        if let Some(x) = self
            .magnitudes
            .iter()
            .flatten()
            .find(|x| !(x.is_finite() && **x >= 0.0))
        {
            return Err(Error::NonFinite(format!(
                "summary {} holds invalid magnitude {x}",
                self.dataset_tag
            )));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `t` of a probe seeded with `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    splitmix(seed ^ splitmix(t as u64))
}

/// Copy of `item` whose answer is redrawn uniformly over the vocabulary
/// until it differs from the original. Deterministic in `(item.id, trial_seed)`.
pub fn randomize_label(
    item: &KnowledgeItem,
    trial_seed: u64,
    vocab_size: usize,
) -> Result<KnowledgeItem> {
    if item.answer.is_empty() {
        return Err(Error::EmptyAnswer(item.id.clone()));
    }
    if vocab_size < 2 {
        return Err(Error::InvalidArgument(
            "a random label cannot differ from the original with a single-token vocabulary".into(),
        ));
    }
    let mut h = Sha256::new();
    h.update(item.id.as_bytes());
    h.update(trial_seed.to_le_bytes());
    let digest = h.finalize();
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    let answer = loop {
        let candidate: Vec<_> = (0..item.answer.len())
            .map(|_| rng.gen_range(0..vocab_size) as u32)
            .collect();
        if candidate != item.answer {
            break candidate;
        }
    };
    Ok(KnowledgeItem {
        answer,
        ..item.clone()
    })
}

/// Trial-averaged signed gradient for one item.
pub fn stabilized_grad(
    model: &ModelState,
    item: &KnowledgeItem,
    trials: usize,
    seed: u64,
) -> Result<Gradient> {
    let mut acc = Gradient::zeros_like(model);
    for t in 0..trials {
        let substituted = randomize_label(item, trial_seed(seed, t), model.config.vocab_size)?;
        let g = model.item_grad(&substituted).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("gradient of item `{}`", item.id)),
            other => other,
        })?;
        acc.add_scaled(&g, 1.0);
    }
    for x in acc.layers.iter_mut().flatten() {
        *x /= trials as f64;
    }
    Ok(acc)
}

/// Probes `items` against `model`. Items are reduced in id order, so the
/// result does not depend on the order they are passed in.
pub fn probe_dataset(
    model: &ModelState,
    tag: DatasetTag,
    items: &[KnowledgeItem],
    trials: usize,
    seed: u64,
) -> Result<GradientSummary> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset {tag} is empty")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut sorted: Vec<&KnowledgeItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let grads: Vec<Gradient> = sorted
        .par_iter()
        .map(|item| stabilized_grad(model, item, trials, seed))
        .collect::<Result<_>>()?;
    let mut magnitudes: Vec<Vec<f64>> = model.layer_sizes().iter().map(|&n| vec![0.0; n]).collect();
    for g in &grads {
        for (acc, layer) in magnitudes.iter_mut().zip(&g.layers) {
            for (a, x) in acc.iter_mut().zip(layer) {
                *a += x.abs();
            }
        }
    }
    let n = sorted.len() as f64;
    for x in magnitudes.iter_mut().flatten() {
        *x /= n;
    }
    let summary = GradientSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        dataset_tag: tag,
        n_items: sorted.len(),
        trials,
        model_fingerprint: model.fingerprint(),
        layer_names: model.layer_names(),
        magnitudes,
    };
    summary.validate()?;
    Ok(summary)
}

/// The four core summaries in [`DatasetTag::ALL`] order.
pub fn probe_corpus(
    model: &ModelState,
    corpus: &Corpus,
    trials: usize,
    seed: u64,
) -> Result<Vec<GradientSummary>> {
    DatasetTag::ALL
        .into_iter()
        .map(|tag| probe_dataset(model, tag, corpus.split(tag.split()), trials, seed))
        .collect()
}

pub fn save_summary(summary: &GradientSummary, path: &Path) -> Result<()> {
    let text = serde_json::to_string(summary)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a summary and checks it against `expected_fingerprint` when given.
/// With `allow_mismatch` a mismatch is logged instead of rejected.
pub fn load_summary(
    path: &Path,
    expected_fingerprint: Option<&str>,
    allow_mismatch: bool,
) -> Result<GradientSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let summary: GradientSummary = serde_json::from_str(&text)?;
    if summary.format_version != SUMMARY_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported summary version {}",
            path.display(),
            summary.format_version
        )));
    }
    summary.validate()?;
    if let Some(expected) = expected_fingerprint {
        if summary.model_fingerprint != expected {
            if allow_mismatch {
                log::warn!(
                    "{}: summary was probed on model {} but current model is {}; proceeding",
                    path.display(),
                    summary.model_fingerprint,
                    expected
                );
            } else {
                return Err(Error::FingerprintMismatch {
                    expected: expected.to_string(),
                    found: summary.model_fingerprint,
                });
            }
        }
    }
    Ok(summary)
}

/// Long-format CSV: `layer,index,magnitude`.
pub fn write_summary_csv(summary: &GradientSummary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "index", "magnitude"])?;
    for (name, layer) in summary.layer_names.iter().zip(&summary.magnitudes) {
        for (j, x) in layer.iter().enumerate() {
            w.write_record([name.as_str(), &j.to_string(), &x.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
