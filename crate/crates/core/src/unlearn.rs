//! Unlearning runs: masked ascent/descent plus the comparison baselines.
//!
//! Every method is a loop of per-item (or per-batch) first-order steps over a
//! shuffled task pool. A task pairs an item with an objective: ascend its
//! loss, descend its loss, descend a randomized-label loss, or descend the KL
//! divergence to a reference model. Runs stop once every tracked domain
//! reaches the unlearning target (and retention floor) at an epoch boundary.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Domain, KnowledgeItem};
use crate::error::{Error, Result};
use crate::eval::{retention_success, unlearning_success};
use crate::localize::{FrozenMask, DEFAULT_K_OP_RR, DEFAULT_K_OP_UR};
use crate::mask::LayerBits;
use crate::model::{Direction, Gradient, ModelState};
use crate::probe::{
    probe_corpus, randomize_label, trial_seed, DatasetTag, GradientSummary, DEFAULT_TRIALS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnHyper {
    pub eta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Unlearning success (percent) every tracked domain must reach.
    pub us_target: f64,
    /// Retention success (percent) every tracked domain must keep.
    pub rs_floor: f64,
    pub trials: usize,
    pub k_op_ur: f64,
    pub k_op_rr: f64,
    pub seed: u64,
}

impl Default for UnlearnHyper {
    fn default() -> Self {
        UnlearnHyper {
            eta: 0.02,
            max_epochs: 200,
            batch_size: 1,
            us_target: 90.0,
            rs_floor: 0.0,
            trials: DEFAULT_TRIALS,
            k_op_ur: DEFAULT_K_OP_UR,
            k_op_rr: DEFAULT_K_OP_RR,
            seed: 0,
        }
    }
}

impl UnlearnHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(0.0..=100.0).contains(&self.us_target) || !(0.0..=100.0).contains(&self.rs_floor) {
            return Err(Error::InvalidArgument(
                "us_target and rs_floor must lie in [0, 100]".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetainSource {
    /// The corpus's own retain splits.
    InDistribution,
    /// The out-of-distribution split.
    OutOfDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequentialOrder {
    PrivacyFirst,
    CopyrightFirst,
    /// Both domains pooled, no mask.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Grail,
    GradientAscent,
    RandomLabel,
    GaGd(RetainSource),
    GaKl(RetainSource),
    Layerwise,
    Sequential(SequentialOrder),
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Grail,
        Method::GradientAscent,
        Method::RandomLabel,
        Method::GaGd(RetainSource::InDistribution),
        Method::GaGd(RetainSource::OutOfDistribution),
        Method::GaKl(RetainSource::InDistribution),
        Method::GaKl(RetainSource::OutOfDistribution),
        Method::Layerwise,
        Method::Sequential(SequentialOrder::PrivacyFirst),
        Method::Sequential(SequentialOrder::CopyrightFirst),
        Method::Sequential(SequentialOrder::Combined),
    ];

    pub fn tag(self) -> &'static str {
        use RetainSource::*;
        match self {
            Method::Grail => "grail",
            Method::GradientAscent => "ga",
            Method::RandomLabel => "random_label",
            Method::GaGd(InDistribution) => "ga_gd_id",
            Method::GaGd(OutOfDistribution) => "ga_gd_ood",
            Method::GaKl(InDistribution) => "ga_kl_id",
            Method::GaKl(OutOfDistribution) => "ga_kl_ood",
            Method::Layerwise => "layerwise",
            Method::Sequential(SequentialOrder::PrivacyFirst) => "seq_p2c",
            Method::Sequential(SequentialOrder::CopyrightFirst) => "seq_c2p",
            Method::Sequential(SequentialOrder::Combined) => "combined",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.tag()).collect();
                Error::InvalidArgument(format!(
                    "unknown method `{s}` (known: {})",
                    known.join(", ")
                ))
            })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
    /// Parameters went non-finite; the returned model is the last good epoch.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: String,
    pub us_pri: f64,
    pub rs_pri: f64,
    pub us_cpy: f64,
    pub rs_cpy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub stop_reason: StopReason,
    pub frozen_params: usize,
    /// Layers the run was allowed to update, when restricted to whole layers.
    pub updated_layers: Option<Vec<String>>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    fn new(method: &str, seed: u64, frozen_params: usize) -> Self {
        RunRecord {
            method: method.to_string(),
            seed,
            epochs: Vec::new(),
            stop_reason: StopReason::MaxEpochs,
            frozen_params,
            updated_layers: None,
            wall_time_secs: 0.0,
            checkpoint: None,
        }
    }

    /// Copy with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        RunRecord {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    /// CSV `epoch,US_pri,RS_pri,US_cpy,RS_cpy`.
    pub fn write_curve_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "US_pri", "RS_pri", "US_cpy", "RS_cpy"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.us_pri.to_string(),
                e.rs_pri.to_string(),
                e.us_cpy.to_string(),
                e.rs_cpy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Ascent,
    Descent,
    /// Descent on a freshly randomized answer every epoch.
    RandomLabelDescent,
    /// Descent on `KL(current || reference)` at the answer positions.
    KlDescent(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub item: &'a KnowledgeItem,
    pub objective: Objective<'a>,
}

fn task_gradient(
    model: &ModelState,
    task: &Task,
    epoch: usize,
    seed: u64,
) -> Result<(Gradient, Direction)> {
    let item = task.item;
    Ok(match task.objective {
        Objective::Ascent => (model.item_grad(item)?, Direction::Ascent),
        Objective::Descent => (model.item_grad(item)?, Direction::Descent),
        Objective::RandomLabelDescent => {
            let noisy = randomize_label(item, trial_seed(seed, epoch), model.config.vocab_size)?;
            (model.item_grad(&noisy)?, Direction::Descent)
        }
        Objective::KlDescent(reference) => {
            let (_, g) = model.answer_kl_grad(&item.prompt, &item.answer, reference)?;
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "KL gradient of item `{}`",
                    item.id
                )));
            }
            (g, Direction::Descent)
        }
    })
}

fn domain_stats(model: &ModelState, corpus: &Corpus, domain: Domain) -> Result<(f64, f64)> {
    let unlearn = corpus.unlearn(domain);
    let us = if unlearn.is_empty() {
        0.0
    } else {
        unlearning_success(model, unlearn)?
    };
    let retain = corpus.retain(domain);
    let rs = if retain.is_empty() {
        0.0
    } else {
        retention_success(model, retain)?
    };
    Ok((us, rs))
}

fn epoch_stats(
    model: &ModelState,
    corpus: &Corpus,
    epoch: usize,
    phase: &str,
) -> Result<EpochStats> {
    let (us_pri, rs_pri) = domain_stats(model, corpus, Domain::Privacy)?;
    let (us_cpy, rs_cpy) = domain_stats(model, corpus, Domain::Copyright)?;
    Ok(EpochStats {
        epoch,
        phase: phase.to_string(),
        us_pri,
        rs_pri,
        us_cpy,
        rs_cpy,
    })
}

fn converged(stats: &EpochStats, domains: &[Domain], hyper: &UnlearnHyper) -> bool {
    domains.iter().all(|d| {
        let (us, rs) = match d {
            Domain::Copyright => (stats.us_cpy, stats.rs_cpy),
            _ => (stats.us_pri, stats.rs_pri),
        };
        us >= hyper.us_target && rs >= hyper.rs_floor
    })
}

enum PhaseEnd {
    Converged,
    MaxEpochs,
    Diverged,
}

/// One phase of updates over `tasks`. Epoch statistics are appended to
/// `record`; on divergence the model is rolled back to the last epoch start.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut ModelState,
    tasks: &[Task],
    frozen: &LayerBits,
    hyper: &UnlearnHyper,
    corpus: &Corpus,
    track: &[Domain],
    phase: &str,
    rng: &mut ChaCha8Rng,
    record: &mut RunRecord,
) -> Result<PhaseEnd> {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    for _ in 0..hyper.max_epochs {
        if tasks.is_empty() {
            break;
        }
        let snapshot = model.clone();
        order.shuffle(rng);
        let global_epoch = record.epochs.len();
        let step = hyper.eta / hyper.batch_size as f64;
        let mut blew_up = false;
        for batch in order.chunks(hyper.batch_size) {
            let grads: Result<Vec<(Gradient, Direction)>> = if batch.len() == 1 {
                task_gradient(model, &tasks[batch[0]], global_epoch, hyper.seed).map(|g| vec![g])
            } else {
                let current = &*model;
                batch
                    .par_iter()
                    .map(|&i| task_gradient(current, &tasks[i], global_epoch, hyper.seed))
                    .collect()
            };
            let grads = match grads {
                Err(Error::NonFinite(_)) => {
                    blew_up = true;
                    break;
                }
                other => other?,
            };
            for (g, dir) in &grads {
                model.apply_update(g, step, *dir, frozen)?;
                model.record_step();
            }
        }
        if blew_up || !model.is_finite() {
            log::warn!(
                "{}: parameters diverged in epoch {}",
                record.method,
                global_epoch + 1
            );
            *model = snapshot;
            return Ok(PhaseEnd::Diverged);
        }
        let stats = epoch_stats(model, corpus, global_epoch + 1, phase)?;
        let done = converged(&stats, track, hyper);
        log::debug!(
            "{} {phase} epoch {}: US {:.1}/{:.1} RS {:.1}/{:.1}",
            record.method,
            stats.epoch,
            stats.us_pri,
            stats.us_cpy,
            stats.rs_pri,
            stats.rs_cpy
        );
        record.epochs.push(stats);
        if done {
            return Ok(PhaseEnd::Converged);
        }
    }
    Ok(PhaseEnd::MaxEpochs)
}

fn finish(record: &mut RunRecord, end: PhaseEnd, started: Instant) {
    record.stop_reason = match end {
        PhaseEnd::Converged => StopReason::Converged,
        PhaseEnd::MaxEpochs => StopReason::MaxEpochs,
        PhaseEnd::Diverged => StopReason::Diverged,
    };
    record.wall_time_secs = started.elapsed().as_secs_f64();
}

fn check_inputs(model: &ModelState, corpus: &Corpus, hyper: &UnlearnHyper) -> Result<()> {
    hyper.validate()?;
    if corpus.max_item_len() > model.config.max_seq_len {
        return Err(Error::InvalidConfig(
            "corpus items exceed the model's max_seq_len".into(),
        ));
    }
    Ok(())
}

/// Ascent on `unlearn`, descent on `retain`, all steps masked by `frozen`.
/// This is the core of both masked unlearning and the unmasked GA+GD
/// baseline; progress is tracked on both core domains of `corpus`.
pub fn masked_ascent_descent(
    model: ModelState,
    corpus: &Corpus,
    unlearn: &[&KnowledgeItem],
    retain: &[&KnowledgeItem],
    frozen: &LayerBits,
    hyper: &UnlearnHyper,
    method: &str,
) -> Result<(ModelState, RunRecord)> {
    check_inputs(&model, corpus, hyper)?;
    if !frozen.is_congruent(&model) {
        return Err(Error::ShapeMismatch(
            "frozen mask does not match the model".into(),
        ));
    }
    let started = Instant::now();
    let tasks: Vec<Task> = unlearn
        .iter()
        .map(|&item| Task {
            item,
            objective: Objective::Ascent,
        })
        .chain(retain.iter().map(|&item| Task {
            item,
            objective: Objective::Descent,
        }))
        .collect();
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut record = RunRecord::new(method, hyper.seed, frozen.count());
    let end = run_phase(
        &mut model,
        &tasks,
        frozen,
        hyper,
        corpus,
        &Domain::CORE,
        "all",
        &mut rng,
        &mut record,
    )?;
    finish(&mut record, end, started);
    Ok((model, record))
}

fn core_unlearn(corpus: &Corpus) -> Vec<&KnowledgeItem> {
    corpus
        .privacy_unlearn
        .iter()
        .chain(&corpus.copyright_unlearn)
        .collect()
}

fn core_retain(corpus: &Corpus) -> Vec<&KnowledgeItem> {
    corpus
        .privacy_retain
        .iter()
        .chain(&corpus.copyright_retain)
        .collect()
}

/// Masked unlearning over both domains at once: ascent on the pooled unlearn
/// splits, descent on the pooled retain splits, frozen parameters untouched.
pub fn grail_unlearn(
    model: ModelState,
    corpus: &Corpus,
    mask: &FrozenMask,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    masked_ascent_descent(
        model,
        corpus,
        &core_unlearn(corpus),
        &core_retain(corpus),
        &mask.frozen,
        hyper,
        Method::Grail.tag(),
    )
}

fn run_unmasked(
    model: ModelState,
    corpus: &Corpus,
    tasks: &[Task],
    hyper: &UnlearnHyper,
    method: Method,
) -> Result<(ModelState, RunRecord)> {
    check_inputs(&model, corpus, hyper)?;
    let started = Instant::now();
    let none = LayerBits::empty_like(&model);
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut record = RunRecord::new(method.tag(), hyper.seed, 0);
    let end = run_phase(
        &mut model,
        tasks,
        &none,
        hyper,
        corpus,
        &Domain::CORE,
        "all",
        &mut rng,
        &mut record,
    )?;
    finish(&mut record, end, started);
    Ok((model, record))
}

/// Plain gradient ascent on both unlearn splits.
pub fn ga_unlearn(
    model: ModelState,
    corpus: &Corpus,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    let tasks: Vec<Task> = core_unlearn(corpus)
        .into_iter()
        .map(|item| Task {
            item,
            objective: Objective::Ascent,
        })
        .collect();
    run_unmasked(model, corpus, &tasks, hyper, Method::GradientAscent)
}

/// Descent on unlearn items whose answers are re-randomized every epoch.
pub fn random_label_finetune(
    model: ModelState,
    corpus: &Corpus,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    let tasks: Vec<Task> = core_unlearn(corpus)
        .into_iter()
        .map(|item| Task {
            item,
            objective: Objective::RandomLabelDescent,
        })
        .collect();
    run_unmasked(model, corpus, &tasks, hyper, Method::RandomLabel)
}

fn retain_items(corpus: &Corpus, source: RetainSource) -> Vec<&KnowledgeItem> {
    match source {
        RetainSource::InDistribution => core_retain(corpus),
        RetainSource::OutOfDistribution => corpus.ood.iter().collect(),
    }
}

/// Ascent on the unlearn splits plus descent on retain-source items, no mask.
pub fn ga_gd(
    model: ModelState,
    corpus: &Corpus,
    source: RetainSource,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    let retain = retain_items(corpus, source);
    if retain.is_empty() {
        return Err(Error::Corpus("retain source is empty".into()));
    }
    let none = LayerBits::empty_like(&model);
    masked_ascent_descent(
        model,
        corpus,
        &core_unlearn(corpus),
        &retain,
        &none,
        hyper,
        Method::GaGd(source).tag(),
    )
}

/// Ascent on the unlearn splits plus descent on the KL divergence to
/// `reference` over retain-source items.
pub fn ga_kl(
    model: ModelState,
    reference: &ModelState,
    corpus: &Corpus,
    source: RetainSource,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    if reference.layer_sizes() != model.layer_sizes() {
        return Err(Error::ShapeMismatch(
            "reference model differs in shape".into(),
        ));
    }
    let retain = retain_items(corpus, source);
    if retain.is_empty() {
        return Err(Error::Corpus("retain source is empty".into()));
    }
    let targets: Vec<Vec<Vec<f64>>> = retain
        .par_iter()
        .map(|i| reference.answer_logprobs(&i.prompt, &i.answer))
        .collect::<Result<_>>()?;
    let tasks: Vec<Task> = core_unlearn(corpus)
        .into_iter()
        .map(|item| Task {
            item,
            objective: Objective::Ascent,
        })
        .chain(retain.iter().zip(&targets).map(|(&item, t)| Task {
            item,
            objective: Objective::KlDescent(t),
        }))
        .collect();
    run_unmasked(model, corpus, &tasks, hyper, Method::GaKl(source))
}

/// Layers ranked by mean unlearn magnitude minus mean retain magnitude; the
/// top half (at least one, never all) are selected.
pub fn select_layers(summaries: &[GradientSummary]) -> Result<Vec<usize>> {
    let get = |tag: DatasetTag| {
        summaries
            .iter()
            .find(|s| s.dataset_tag == tag)
            .ok_or_else(|| Error::InvalidArgument(format!("missing {tag} summary")))
    };
    let (up, uc) = (
        get(DatasetTag::UnlearnPrivacy)?,
        get(DatasetTag::UnlearnCopyright)?,
    );
    let (rp, rc) = (
        get(DatasetTag::RetainPrivacy)?,
        get(DatasetTag::RetainCopyright)?,
    );
    let n_layers = up.magnitudes.len();
    if n_layers < 2 {
        return Err(Error::InvalidArgument(
            "layer-wise selection needs at least two layers".into(),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let scores: Vec<f64> = (0..n_layers)
        .map(|l| {
            let u = (mean(&up.magnitudes[l]) + mean(&uc.magnitudes[l])) / 2.0;
            let r = (mean(&rp.magnitudes[l]) + mean(&rc.magnitudes[l])) / 2.0;
            u - r
        })
        .collect();
    let mut order: Vec<usize> = (0..n_layers).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let keep = (n_layers / 2).max(1);
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Layer-granularity comparator: GA+GD restricted to the selected layers.
pub fn layerwise_unlearn_with(
    model: ModelState,
    corpus: &Corpus,
    summaries: &[GradientSummary],
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    let chosen = select_layers(summaries)?;
    let names = model.layer_names();
    let mut frozen = LayerBits::empty_like(&model);
    for l in (0..model.num_layers()).filter(|l| !chosen.contains(l)) {
        frozen.fill_layer(l);
    }
    let (model, mut record) = masked_ascent_descent(
        model,
        corpus,
        &core_unlearn(corpus),
        &core_retain(corpus),
        &frozen,
        hyper,
        Method::Layerwise.tag(),
    )?;
    record.updated_layers = Some(chosen.iter().map(|&l| names[l].clone()).collect());
    Ok((model, record))
}

pub fn layerwise_unlearn(
    model: ModelState,
    corpus: &Corpus,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    let summaries = probe_corpus(&model, corpus, hyper.trials, hyper.seed)?;
    layerwise_unlearn_with(model, corpus, &summaries, hyper)
}

/// One domain at a time (GA+GD on that domain's splits, unmasked), or both
/// pooled for [`SequentialOrder::Combined`].
pub fn sequential_unlearn(
    model: ModelState,
    corpus: &Corpus,
    order: SequentialOrder,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    let phases: &[Domain] = match order {
        SequentialOrder::PrivacyFirst => &[Domain::Privacy, Domain::Copyright],
        SequentialOrder::CopyrightFirst => &[Domain::Copyright, Domain::Privacy],
        SequentialOrder::Combined => {
            let none = LayerBits::empty_like(&model);
            return masked_ascent_descent(
                model,
                corpus,
                &core_unlearn(corpus),
                &core_retain(corpus),
                &none,
                hyper,
                Method::Sequential(order).tag(),
            );
        }
    };
    check_inputs(&model, corpus, hyper)?;
    let started = Instant::now();
    let none = LayerBits::empty_like(&model);
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut record = RunRecord::new(Method::Sequential(order).tag(), hyper.seed, 0);
    let mut end = PhaseEnd::Converged;
    for &domain in phases {
        let tasks: Vec<Task> = corpus
            .unlearn(domain)
            .iter()
            .map(|item| Task {
                item,
                objective: Objective::Ascent,
            })
            .chain(corpus.retain(domain).iter().map(|item| Task {
                item,
                objective: Objective::Descent,
            }))
            .collect();
        let phase_end = run_phase(
            &mut model,
            &tasks,
            &none,
            hyper,
            corpus,
            &[domain],
            domain.short(),
            &mut rng,
            &mut record,
        )?;
        match phase_end {
            PhaseEnd::Diverged => {
                end = PhaseEnd::Diverged;
                break;
            }
            PhaseEnd::MaxEpochs => end = PhaseEnd::MaxEpochs,
            PhaseEnd::Converged => {}
        }
    }
    finish(&mut record, end, started);
    Ok((model, record))
}

/// Inputs some methods need beyond the model and corpus.
#[derive(Debug, Default, Clone, Copy)]
pub struct MethodContext<'a> {
    pub mask: Option<&'a FrozenMask>,
    pub summaries: Option<&'a [GradientSummary]>,
    /// KL reference; defaults to the input model.
    pub reference: Option<&'a ModelState>,
}

pub fn run_method(
    method: Method,
    model: ModelState,
    corpus: &Corpus,
    ctx: MethodContext,
    hyper: &UnlearnHyper,
) -> Result<(ModelState, RunRecord)> {
    match method {
        Method::Grail => {
            let mask = ctx
                .mask
                .ok_or_else(|| Error::InvalidArgument("grail needs a frozen mask".into()))?;
            grail_unlearn(model, corpus, mask, hyper)
        }
        Method::GradientAscent => ga_unlearn(model, corpus, hyper),
        Method::RandomLabel => random_label_finetune(model, corpus, hyper),
        Method::GaGd(source) => ga_gd(model, corpus, source, hyper),
        Method::GaKl(source) => {
            let reference = ctx.reference.cloned().unwrap_or_else(|| model.clone());
            ga_kl(model, &reference, corpus, source, hyper)
        }
        Method::Layerwise => match ctx.summaries {
            Some(s) => layerwise_unlearn_with(model, corpus, s, hyper),
            None => layerwise_unlearn(model, corpus, hyper),
        },
        Method::Sequential(order) => sequential_unlearn(model, corpus, order, hyper),
    }
}
