//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::corpus::{Domain, KnowledgeItem, Scope};
use unlearn_core::model::{Gradient, LayerId, ModelConfig, ModelState};
use unlearn_core::probe::{randomize_label, trial_seed};

/// Untrained model small enough for exhaustive finite differences.
pub fn tiny_model(seed: u64) -> ModelState {
    ModelState::init(ModelConfig {
        vocab_size: 20,
        embed_dim: 6,
        num_blocks: 2,
        hidden_dim: 12,
        max_seq_len: 8,
        init_scale: 1.0,
        seed,
    })
    .unwrap()
}

pub fn random_items(n: usize, vocab: usize, seed: u64) -> Vec<KnowledgeItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p = rng.gen_range(1..=3);
            let a = rng.gen_range(1..=3);
            KnowledgeItem {
                id: format!("item-{i:03}"),
                domain: Domain::Privacy,
                scope: Scope::Unlearn,
                prompt: (0..p).map(|_| rng.gen_range(0..vocab as u32)).collect(),
                answer: (0..a).map(|_| rng.gen_range(0..vocab as u32)).collect(),
            }
        })
        .collect()
}

pub fn mean_loss(model: &ModelState, items: &[KnowledgeItem]) -> f64 {
    items
        .iter()
        .map(|i| model.item_loss(i).unwrap())
        .sum::<f64>()
        / items.len() as f64
}

/// Central differences of the mean item loss, one parameter at a time.
pub fn finite_difference(model: &ModelState, items: &[KnowledgeItem], h: f64) -> Vec<Vec<f64>> {
    let mut probe = model.clone();
    model
        .layer_sizes()
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            (0..n)
                .map(|j| {
                    let id = LayerId(l);
                    let orig = probe.param(id, j);
                    *probe.param_mut(id, j) = orig + h;
                    let up = mean_loss(&probe, items);
                    *probe.param_mut(id, j) = orig - h;
                    let down = mean_loss(&probe, items);
                    *probe.param_mut(id, j) = orig;
                    (up - down) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

pub fn analytic_mean_grad(model: &ModelState, items: &[KnowledgeItem]) -> Gradient {
    let mut acc = Gradient::zeros_like(model);
    for item in items {
        acc.add_scaled(&model.item_grad(item).unwrap(), 1.0 / items.len() as f64);
    }
    acc
}

/// Largest relative error; pairs where both sides are exactly zero count as 0.
pub fn max_relative_error(analytic: &Gradient, numeric: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for (l, (a, n)) in analytic.layers.iter().zip(numeric).enumerate() {
        for (j, (x, y)) in a.iter().zip(n).enumerate() {
            let scale = x.abs().max(y.abs());
            let err = if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            };
            if err > worst.0 {
                worst = (err, l, j);
            }
        }
    }
    worst
}

/// Top-m indices by a full sort (magnitude descending, index ascending).
pub fn topk_by_sort(values: &[f64], k_percent: f64) -> Vec<usize> {
    let n = values.len();
    let m = ((k_percent / 100.0 * n as f64) + 0.5).floor().max(1.0) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut top: Vec<usize> = idx.into_iter().take(m.min(n)).collect();
    top.sort();
    top
}

pub type PairSet = HashSet<(usize, usize)>;

pub fn pairs(layers: &[Vec<usize>]) -> PairSet {
    layers
        .iter()
        .enumerate()
        .flat_map(|(l, js)| js.iter().map(move |&j| (l, j)))
        .collect()
}

pub fn naive_op_ur(u_pri: &PairSet, u_cpy: &PairSet, r_pri: &PairSet, r_cpy: &PairSet) -> PairSet {
    let u: PairSet = u_pri.union(u_cpy).copied().collect();
    let r: PairSet = r_pri.union(r_cpy).copied().collect();
    u.intersection(&r).copied().collect()
}

pub fn naive_op_rr(r_pri: &PairSet, r_cpy: &PairSet) -> PairSet {
    r_pri.intersection(r_cpy).copied().collect()
}

fn is_subsequence(needle: &[u32], hay: &[u32]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// LCS length by enumerating every subsequence of `a`.
pub fn brute_force_lcs(a: &[u32], b: &[u32]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for bits in 0u32..(1 << a.len()) {
        let len = bits.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<u32> = (0..a.len())
            .filter(|i| bits >> i & 1 == 1)
            .map(|i| a[i])
            .collect();
        if is_subsequence(&sub, b) {
            best = len;
        }
    }
    best
}

pub fn brute_force_rouge_l(candidate: &[u32], reference: &[u32]) -> f64 {
    let lcs = brute_force_lcs(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    100.0 * 2.0 * p * r / (p + r)
}

/// Probe magnitudes by straightforward nested loops, items in id order.
pub fn brute_force_probe(
    model: &ModelState,
    items: &[KnowledgeItem],
    trials: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let sizes = model.layer_sizes();
    let mut total: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for item in &sorted {
        let mut signed: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        for t in 0..trials {
            let noisy =
                randomize_label(item, trial_seed(seed, t), model.config.vocab_size).unwrap();
            let (_, g) = model
                .answer_loss_grad(&noisy.prompt, &noisy.answer)
                .unwrap();
            for (acc, layer) in signed.iter_mut().zip(&g.layers) {
                for (a, x) in acc.iter_mut().zip(layer) {
                    *a += x;
                }
            }
        }
        for (acc, layer) in total.iter_mut().zip(&signed) {
            for (a, x) in acc.iter_mut().zip(layer) {
                *a += (x / trials as f64).abs();
            }
        }
    }
    for layer in &mut total {
        for x in layer.iter_mut() {
            *x /= sorted.len() as f64;
        }
    }
    total
}

/// Small corpus plus a model trained on it to full accuracy.
pub fn small_setup(seed: u64) -> (unlearn_core::corpus::Corpus, ModelState) {
    use unlearn_core::corpus::{generate_corpus, train_vanilla, CorpusSpec, TrainOptions};
    let spec = CorpusSpec {
        vocab_size: 96,
        n_pu: 4,
        n_pr: 4,
        n_cu: 4,
        n_cr: 4,
        n_general: 2,
        n_ood: 4,
        templates_per_scope: 2,
        objects_per_domain: 8,
        seed,
        ..Default::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let model = ModelState::init(ModelConfig {
        vocab_size: spec.vocab_size,
        embed_dim: 8,
        hidden_dim: 12,
        num_blocks: 2,
        seed,
        ..Default::default()
    })
    .unwrap();
    let opts = TrainOptions {
        seed,
        eta: 0.2,
        ..Default::default()
    };
    let out = train_vanilla(model, &corpus, &opts).unwrap();
    assert_eq!(out.accuracy, 1.0, "fixture failed to train");
    (corpus, out.model)
}
