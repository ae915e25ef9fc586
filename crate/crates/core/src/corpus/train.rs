use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Corpus, KnowledgeItem};
use crate::error::{Error, Result};
use crate::eval::exact_match_rate;
use crate::mask::LayerBits;
use crate::model::{Direction, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub eta: f64,
    /// Stop once exact-match accuracy over the training items reaches this.
    pub target_accuracy: f64,
    /// ...and the mean answer-token loss is at most this.
    pub target_loss: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 2000,
            eta: 0.1,
            target_accuracy: 1.0,
            target_loss: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub epochs_run: usize,
}

fn mean_loss(model: &ModelState, items: &[&KnowledgeItem]) -> Result<f64> {
    let losses: Vec<f64> = items
        .par_iter()
        .map(|i| model.item_loss(i))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Per-item SGD on every training split until both accuracy and loss targets
/// are met or `epochs` run out.
pub fn train_vanilla(
    model: ModelState,
    corpus: &Corpus,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let items = corpus.training_items();
    if items.is_empty() {
        return Err(Error::Corpus("no training items".into()));
    }
    if corpus.max_item_len() > model.config.max_seq_len {
        return Err(Error::InvalidConfig(format!(
            "max_seq_len {} shorter than the longest corpus item ({})",
            model.config.max_seq_len,
            corpus.max_item_len()
        )));
    }
    let mut model = model;
    let none = LayerBits::empty_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epochs_run = 0;
    let done = |m: &ModelState| -> Result<(bool, f64, f64)> {
        let acc = exact_match_rate(m, items.iter().copied())? / 100.0;
        let loss = mean_loss(m, &items)?;
        Ok((
            acc >= opts.target_accuracy && loss <= opts.target_loss,
            acc,
            loss,
        ))
    };
    let (mut finished, mut accuracy, mut loss) = done(&model)?;
    while !finished && epochs_run < opts.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = model
                .item_grad(items[i])
                .map_err(|_| Error::TrainDiverged { epoch: epochs_run })?;
            model.apply_update(&g, opts.eta, Direction::Descent, &none)?;
            model.record_step();
        }
        epochs_run += 1;
        if !model.is_finite() {
            return Err(Error::TrainDiverged { epoch: epochs_run });
        }
        (finished, accuracy, loss) = done(&model)?;
        if !loss.is_finite() {
            return Err(Error::TrainDiverged { epoch: epochs_run });
        }
        if epochs_run % 50 == 0 {
            log::debug!("epoch {epochs_run}: accuracy {accuracy:.4} loss {loss:.5}");
        }
    }
    Ok(TrainOutcome {
        model,
        accuracy,
        mean_loss: loss,
        epochs_run,
    })
}
