//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::cli::aggregate::{ablate, bench, AblationOutput, BenchOutput, CellSummary};
use unlearn_core::cli::config::ExperimentConfig;
use unlearn_core::cli::pipeline::{Stage, VANILLA_FILE};
use unlearn_core::corpus::{generate_corpus, train_vanilla};
use unlearn_core::eval::{full_report, harmonic_success, rouge_l};
use unlearn_core::localize::{
    build_op_rr, build_op_ur, jaccard_matrix, top_indices, topk, topk_count, FrozenMask,
};
use unlearn_core::mask::LayerBits;
use unlearn_core::model::{LayerId, ModelState};
use unlearn_core::probe::{
    probe_corpus, probe_dataset, DatasetTag, GradientSummary, SUMMARY_FORMAT_VERSION,
};
use unlearn_core::unlearn::{ga_gd, grail_unlearn, RetainSource, UnlearnHyper};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Bench {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    bench: BenchOutput,
    ablation: AblationOutput,
}

/// Default configuration at rho 0.5 over five pipeline seeds, run once.
fn benchmark() -> &'static Bench {
    static B: OnceLock<Bench> = OnceLock::new();
    B.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            out: dir.path().to_path_buf(),
            seeds: SEEDS.to_vec(),
            ..Default::default()
        };
        cfg.corpus.rho = 0.5;
        cfg.ablation.k_op_ur = vec![cfg.hyper.k_op_ur];
        cfg.ablation.k_op_rr = vec![cfg.hyper.k_op_rr];
        let bench = bench(&cfg, false).unwrap();
        let ablation = ablate(&cfg, false).unwrap();
        Bench {
            _dir: dir,
            cfg,
            bench,
            ablation,
        }
    })
}

fn method<'a>(b: &'a Bench, name: &str) -> &'a CellSummary {
    b.bench
        .methods
        .iter()
        .find(|m| m.name == name)
        .unwrap_or_else(|| panic!("no bench row for {name}"))
}

fn ablation_cell<'a>(b: &'a Bench, name: &str) -> &'a CellSummary {
    &b.ablation
        .rows
        .iter()
        .find(|r| r.cell.name == name)
        .unwrap_or_else(|| panic!("no ablation row for {name}"))
        .summary
}

fn hs_formula() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (us, rs, want) in [
        (90.72, 85.34, 87.95),
        (98.75, 93.87, 96.25),
        (94.40, 72.79, 82.20),
    ] {
        let hs = harmonic_success(us, rs).map_err(|e| e.to_string())?;
        ok &= (hs - want).abs() <= 0.01;
        parts.push(format!("({us}, {rs}) -> {hs:.4}"));
    }
    ensure(ok, parts.join(", "))
}

fn gradient_exactness() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in [1, 2] {
        let model = tiny_model(seed);
        let n = model.num_params();
        let items = random_items(10, model.config.vocab_size, seed + 100);
        let numeric = finite_difference(&model, &items, 1e-5);
        let analytic = analytic_mean_grad(&model, &items);
        let (strict, _, _) = max_relative_error(&analytic, &numeric);
        let floored = analytic
            .layers
            .iter()
            .flatten()
            .zip(numeric.iter().flatten())
            .map(|(a, f)| (a - f).abs() / f.abs().max(1.0))
            .fold(0.0, f64::max);
        ok &= n <= 2000 && strict <= 1e-4 && floored <= 1e-4;
        parts.push(format!("seed {seed}: {n} params, max |a-fd|/max(|a|,|fd|) {strict:.2e}, max |a-fd|/max(1,|fd|) {floored:.2e}"));
    }
    ensure(ok, parts.join("; "))
}

fn frozen_mask_identity() -> Outcome {
    let (corpus, vanilla) = small_setup(0);
    let summaries = probe_corpus(&vanilla, &corpus, 3, 0).map_err(|e| e.to_string())?;
    let localized =
        unlearn_core::localize::localize(&summaries, 10.0, 20.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0usize;
    for case in 0..20u64 {
        let mask = if case == 0 {
            localized.clone()
        } else {
            let density = rng.gen_range(0.0..0.9);
            let mut bits = LayerBits::empty_like(&vanilla);
            for (l, n) in vanilla.layer_sizes().into_iter().enumerate() {
                for j in 0..n {
                    if rng.gen_bool(density) {
                        bits.insert(l, j);
                    }
                }
            }
            FrozenMask {
                frozen: bits.clone(),
                op_ur: bits,
                op_rr: LayerBits::empty_like(&vanilla),
            }
        };
        let seed = rng.gen_range(0..1000);
        let hyper = UnlearnHyper {
            eta: 0.2,
            max_epochs: 15,
            seed,
            ..Default::default()
        };
        let (after, _) =
            grail_unlearn(vanilla.clone(), &corpus, &mask, &hyper).map_err(|e| e.to_string())?;
        for l in 0..vanilla.num_layers() {
            for j in mask.frozen.indices(l) {
                if after.param(LayerId(l), j).to_bits() != vanilla.param(LayerId(l), j).to_bits() {
                    return Err(format!("case {case}: parameter {l}/{j} changed"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!(
        "20 mask/seed combinations, {checked} frozen parameters byte-identical"
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..300 {
        let values: Vec<f64> = (0..rng.gen_range(1..60))
            .map(|_| rng.gen_range(0..6) as f64 * 0.25)
            .collect();
        let k = rng.gen_range(1..=100) as f64;
        if top_indices(&values, topk_count(k, values.len())) != topk_by_sort(&values, k) {
            return Err(format!("topk case {case}"));
        }
    }
    for case in 0..200 {
        let sizes: Vec<usize> = (0..rng.gen_range(1..5))
            .map(|_| rng.gen_range(1..30))
            .collect();
        let sums: Vec<GradientSummary> = DatasetTag::ALL
            .iter()
            .map(|&tag| GradientSummary {
                format_version: SUMMARY_FORMAT_VERSION,
                dataset_tag: tag,
                n_items: 1,
                trials: 1,
                model_fingerprint: "fp".into(),
                layer_names: (0..sizes.len()).map(|l| format!("l{l}")).collect(),
                magnitudes: sizes
                    .iter()
                    .map(|&n| (0..n).map(|_| rng.gen_range(0..5) as f64).collect())
                    .collect(),
            })
            .collect();
        let (k_ur, k_rr) = (rng.gen_range(1..60) as f64, rng.gen_range(1..60) as f64);
        let ur: Vec<_> = sums.iter().map(|s| topk(s, k_ur).unwrap()).collect();
        let rr: Vec<_> = sums.iter().map(|s| topk(s, k_rr).unwrap()).collect();
        let op_ur = build_op_ur(&ur[0], &ur[2], &ur[1], &ur[3]).map_err(|e| e.to_string())?;
        let op_rr = build_op_rr(&rr[1], &rr[3]).map_err(|e| e.to_string())?;
        let got_ur: Vec<Vec<usize>> = (0..sizes.len()).map(|l| op_ur.indices(l)).collect();
        let got_rr: Vec<Vec<usize>> = (0..sizes.len()).map(|l| op_rr.indices(l)).collect();
        let p = |sets: &[unlearn_core::localize::IndexSet], t: usize| pairs(&sets[t].layers);
        if pairs(&got_ur) != naive_op_ur(&p(&ur, 0), &p(&ur, 2), &p(&ur, 1), &p(&ur, 3)) {
            return Err(format!("op_ur case {case}"));
        }
        if pairs(&got_rr) != naive_op_rr(&p(&rr, 1), &p(&rr, 3)) {
            return Err(format!("op_rr case {case}"));
        }
    }
    for case in 0..300 {
        let mut seq = || -> Vec<u32> {
            (0..rng.gen_range(1..=12))
                .map(|_| rng.gen_range(0..4))
                .collect()
        };
        let (a, b) = (seq(), seq());
        if rouge_l(&a, &b).map_err(|e| e.to_string())? != brute_force_rouge_l(&a, &b) {
            return Err(format!("rouge_l case {case}: {a:?} vs {b:?}"));
        }
    }
    let model = tiny_model(11);
    for (n, trials, seed) in [(1, 1, 0), (5, 3, 7), (9, 2, 42)] {
        let items = random_items(n, model.config.vocab_size, seed);
        let got = probe_dataset(&model, DatasetTag::UnlearnPrivacy, &items, trials, seed)
            .map_err(|e| e.to_string())?;
        if got.magnitudes != brute_force_probe(&model, &items, trials, seed) {
            return Err(format!("probe case n={n} trials={trials}"));
        }
    }
    Ok("topk 300, op_ur/op_rr 200, rouge_l 300, probe 3 cases; all exact".into())
}

fn reduction_property() -> Outcome {
    let (corpus, vanilla) = small_setup(0);
    let none = FrozenMask::empty(&vanilla.layer_sizes());
    for seed in [0, 3, 9] {
        let hyper = UnlearnHyper {
            eta: 0.2,
            max_epochs: 15,
            seed,
            ..Default::default()
        };
        let (a, _) =
            grail_unlearn(vanilla.clone(), &corpus, &none, &hyper).map_err(|e| e.to_string())?;
        let (b, _) = ga_gd(
            vanilla.clone(),
            &corpus,
            RetainSource::InDistribution,
            &hyper,
        )
        .map_err(|e| e.to_string())?;
        if a.to_bytes() != b.to_bytes() {
            return Err(format!("seed {seed}: checkpoints differ"));
        }
    }
    Ok("empty-mask grail equals ga_gd_id byte for byte on 3 seeds".into())
}

fn vanilla_gate() -> Outcome {
    let b = benchmark();
    let mut worst_ppl: f64 = 0.0;
    let mut ok = true;
    for &seed in &SEEDS {
        let stage = Stage::new(&b.cfg, seed, false);
        let model = ModelState::load(&stage.path(VANILLA_FILE)).map_err(|e| e.to_string())?;
        let (corpus, _) = stage.load_corpus().map_err(|e| e.to_string())?;
        let r = full_report(&model, &corpus, "vanilla", seed).map_err(|e| e.to_string())?;
        for d in [&r.privacy, &r.copyright] {
            ok &= d.us == 0.0
                && d.rs == 100.0
                && d.rouge_l_unlearn == 100.0
                && d.rouge_l_retain == 100.0;
            ok &= d.ppl_unlearn <= 1.05 && d.ppl_retain <= 1.05;
            worst_ppl = worst_ppl.max(d.ppl_unlearn).max(d.ppl_retain);
        }
    }
    ensure(
        ok,
        format!(
            "{} seeds on the default corpus, worst PPL {worst_ppl:.4}",
            SEEDS.len()
        ),
    )
}

fn method_ordering() -> Outcome {
    let b = benchmark();
    let hs = |m: &str| (method(b, m).privacy.hs.mean, method(b, m).copyright.hs.mean);
    let rs = |m: &str| (method(b, m).privacy.rs.mean, method(b, m).copyright.rs.mean);
    let order = ["grail", "layerwise", "ga_gd_id", "ga"];
    let vals: Vec<(f64, f64)> = order.iter().map(|m| hs(m)).collect();
    let ordered = vals.windows(2).all(|w| w[0].0 > w[1].0 && w[0].1 > w[1].1);
    let (ga, ood) = (rs("ga"), rs("ga_gd_ood"));
    let low = ga.0 < 20.0 && ga.1 < 20.0 && ood.0 < 20.0 && ood.1 < 20.0;
    let detail = order
        .iter()
        .zip(&vals)
        .map(|(m, (p, c))| format!("{m} HS {p:.1}/{c:.1}"))
        .chain([
            format!("ga RS {:.1}/{:.1}", ga.0, ga.1),
            format!("ga_gd_ood RS {:.1}/{:.1}", ood.0, ood.1),
        ])
        .collect::<Vec<_>>()
        .join(", ");
    ensure(ordered && low, detail)
}

fn sequential_vs_joint() -> Outcome {
    let b = benchmark();
    let grail = method(b, "grail");
    let p2c = method(b, "seq_p2c").privacy.rs.mean;
    let c2p = method(b, "seq_c2p").copyright.rs.mean;
    let combined = method(b, "combined").privacy.rs.mean;
    let (gp, gc) = (grail.privacy.rs.mean, grail.copyright.rs.mean);
    ensure(
        p2c < gp && c2p < gc && combined < gp,
        format!("seq_p2c RS_pri {p2c:.1} vs {gp:.1}, seq_c2p RS_cpy {c2p:.1} vs {gc:.1}, combined RS_pri {combined:.1} vs {gp:.1}"),
    )
}

fn mask_ablation() -> Outcome {
    let b = benchmark();
    let rs = |c: &CellSummary| (c.privacy.rs.mean, c.copyright.rs.mean);
    let full = rs(ablation_cell(b, "full"));
    let no_rr = rs(ablation_cell(b, "no_op_rr"));
    let none = rs(ablation_cell(b, "no_both"));
    ensure(
        (no_rr.0 < full.0 || no_rr.1 < full.1) && none.0 < full.0 && none.1 < full.1,
        format!(
            "RS full {:.1}/{:.1}, no_op_rr {:.1}/{:.1}, no_both {:.1}/{:.1}",
            full.0, full.1, no_rr.0, no_rr.1, none.0, none.1
        ),
    )
}

fn overlap_gap(rho: f64) -> Result<(f64, f64), String> {
    let mut base = ExperimentConfig::default();
    base.corpus.rho = rho;
    let (mut within, mut cross) = (0.0, 0.0);
    for &seed in &SEEDS {
        let cfg = base.for_seed(seed);
        let corpus = generate_corpus(&cfg.corpus).map_err(|e| e.to_string())?;
        let model = ModelState::init(cfg.model.clone()).map_err(|e| e.to_string())?;
        let model = train_vanilla(model, &corpus, &cfg.train)
            .map_err(|e| e.to_string())?
            .model;
        let summaries =
            probe_corpus(&model, &corpus, cfg.hyper.trials, seed).map_err(|e| e.to_string())?;
        let j = jaccard_matrix(&summaries, 10.0).map_err(|e| e.to_string())?;
        within += j.within_domain_mean() / SEEDS.len() as f64;
        cross += j.cross_domain_mean() / SEEDS.len() as f64;
    }
    Ok((within, cross))
}

fn overlap_recovery() -> Outcome {
    let (w7, c7) = overlap_gap(0.7)?;
    let (w0, c0) = overlap_gap(0.0)?;
    ensure(
        w7 > c7 && w0 - c0 > w7 - c7,
        format!("rho 0.7 within {w7:.3} cross {c7:.3} gap {:.3}; rho 0 within {w0:.3} cross {c0:.3} gap {:.3}", w7 - c7, w0 - c0),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("hs-formula", hs_formula),
        ("gradient-exactness", gradient_exactness),
        ("frozen-mask-bit-identity", frozen_mask_identity),
        ("oracle-equivalence", oracle_equivalence),
        ("reduction-property", reduction_property),
        ("vanilla-gate", vanilla_gate),
        ("method-ordering", method_ordering),
        ("sequential-vs-joint", sequential_vs_joint),
        ("mask-ablation", mask_ablation),
        ("overlap-recovery", overlap_recovery),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
