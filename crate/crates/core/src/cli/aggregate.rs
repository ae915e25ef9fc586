//! Seed fan-out for `bench` and `ablate`, plus mean / sample-sd tables.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::pipeline::{write_json, CellResult, Stage};
use crate::error::{Error, Result};
use crate::eval::{DomainReport, EvalReport};
use crate::localize::localize;
use crate::unlearn::{Method, StopReason};

/// Mean and sample (n - 1) standard deviation. A single value has sd 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    #[serde(serialize_with = "finite_or_string")]
    pub mean: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub sd: f64,
}

fn finite_or_string<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&fmt_num(*x))
    }
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        x.to_string()
    }
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else if !mean.is_finite() {
            f64::NAN
        } else {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainStats {
    pub us: Stat,
    pub rs: Stat,
    pub hs: Stat,
    pub ppl_unlearn: Stat,
    pub ppl_retain: Stat,
    pub rouge_l_unlearn: Stat,
    pub rouge_l_retain: Stat,
}

impl DomainStats {
    fn of(reports: &[&DomainReport]) -> Self {
        let col = |f: fn(&DomainReport) -> f64| {
            Stat::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        DomainStats {
            us: col(|r| r.us),
            rs: col(|r| r.rs),
            hs: col(|r| r.hs),
            ppl_unlearn: col(|r| r.ppl_unlearn),
            ppl_retain: col(|r| r.ppl_retain),
            rouge_l_unlearn: col(|r| r.rouge_l_unlearn),
            rouge_l_retain: col(|r| r.rouge_l_retain),
        }
    }

    fn columns(&self) -> Vec<String> {
        [
            self.us,
            self.rs,
            self.hs,
            self.ppl_unlearn,
            self.ppl_retain,
            self.rouge_l_unlearn,
            self.rouge_l_retain,
        ]
        .iter()
        .flat_map(|s| [fmt_num(s.mean), fmt_num(s.sd)])
        .collect()
    }
}

const STAT_HEADER: [&str; 14] = [
    "US_mean",
    "US_sd",
    "RS_mean",
    "RS_sd",
    "HS_mean",
    "HS_sd",
    "PPL_unlearn_mean",
    "PPL_unlearn_sd",
    "PPL_retain_mean",
    "PPL_retain_sd",
    "ROUGE_L_unlearn_mean",
    "ROUGE_L_unlearn_sd",
    "ROUGE_L_retain_mean",
    "ROUGE_L_retain_sd",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub name: String,
    pub n_seeds: usize,
    pub privacy: DomainStats,
    pub copyright: DomainStats,
    pub mean_epochs: f64,
    pub diverged: usize,
}

fn summarize(name: &str, results: &[&CellResult]) -> CellSummary {
    let pri: Vec<&DomainReport> = results.iter().map(|r| &r.report.privacy).collect();
    let cpy: Vec<&DomainReport> = results.iter().map(|r| &r.report.copyright).collect();
    CellSummary {
        name: name.to_string(),
        n_seeds: results.len(),
        privacy: DomainStats::of(&pri),
        copyright: DomainStats::of(&cpy),
        mean_epochs: results
            .iter()
            .map(|r| r.record.epochs_run() as f64)
            .sum::<f64>()
            / results.len() as f64,
        diverged: results
            .iter()
            .filter(|r| r.record.stop_reason == StopReason::Diverged)
            .count(),
    }
}

/// Builds the per-seed stages, running whichever stages are not up to date.
pub fn prepare_seeds(cfg: &ExperimentConfig, allow_mismatch: bool) -> Result<Vec<Stage>> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds configured".into()));
    }
    let stages: Vec<Stage> = cfg
        .seeds
        .iter()
        .map(|&s| Stage::new(cfg, s, allow_mismatch))
        .collect();
    stages.par_iter().try_for_each(Stage::prepare)?;
    Ok(stages)
}

fn write_cells_csv(path: &Path, rows: &[(String, u64, &EvalReport, &CellResult)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "cell",
        "seed",
        "domain",
        "US",
        "RS",
        "HS",
        "PPL_unlearn",
        "PPL_retain",
        "ROUGE_L_unlearn",
        "ROUGE_L_retain",
        "epochs",
        "stop_reason",
    ])?;
    for (name, seed, report, cell) in rows {
        for (domain, d) in [
            ("privacy", &report.privacy),
            ("copyright", &report.copyright),
        ] {
            let stop = serde_json::to_value(cell.record.stop_reason)?;
            w.write_record([
                name.clone(),
                seed.to_string(),
                domain.to_string(),
                fmt_num(d.us),
                fmt_num(d.rs),
                fmt_num(d.hs),
                fmt_num(d.ppl_unlearn),
                fmt_num(d.ppl_retain),
                fmt_num(d.rouge_l_unlearn),
                fmt_num(d.rouge_l_retain),
                cell.record.epochs_run().to_string(),
                stop.as_str().unwrap_or_default().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutput {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<CellSummary>,
}

/// Every configured method on every seed. Writes per-cell directories under
/// `runs/`, `bench_cells.csv`, and the aggregate `bench.csv` / `bench.json`.
pub fn bench(cfg: &ExperimentConfig, allow_mismatch: bool) -> Result<BenchOutput> {
    let methods = cfg.parsed_methods()?;
    let stages = prepare_seeds(cfg, allow_mismatch)?;
    let jobs: Vec<(Method, &Stage)> = methods
        .iter()
        .flat_map(|&m| stages.iter().map(move |s| (m, s)))
        .collect();
    let results: Vec<CellResult> = jobs
        .par_iter()
        .map(|(m, stage)| {
            log::info!("bench: {m} seed {}", stage.seed);
            stage.unlearn(*m, &cfg.run_dir("runs", m.tag(), stage.seed), None)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<_> = jobs
        .iter()
        .zip(&results)
        .map(|((m, s), r)| (m.tag().to_string(), s.seed, &r.report, r))
        .collect();
    write_cells_csv(&cfg.out.join("bench_cells.csv"), &rows)?;

    let summaries: Vec<CellSummary> = methods
        .iter()
        .map(|m| {
            let mine: Vec<&CellResult> = jobs
                .iter()
                .zip(&results)
                .filter(|((jm, _), _)| jm == m)
                .map(|(_, r)| r)
                .collect();
            summarize(m.tag(), &mine)
        })
        .collect();

    let path = cfg.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["method", "domain", "n_seeds"];
    header.extend(STAT_HEADER);
    w.write_record(&header)?;
    for s in &summaries {
        for (domain, d) in [("privacy", &s.privacy), ("copyright", &s.copyright)] {
            let mut row = vec![s.name.clone(), domain.to_string(), s.n_seeds.to_string()];
            row.extend(d.columns());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let out = BenchOutput {
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        methods: summaries,
    };
    write_json(&out, &cfg.out.join("bench.json"))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub name: String,
    /// `component`, `k_op_ur` or `k_op_rr`.
    pub sweep: String,
    pub k_op_ur: f64,
    pub k_op_rr: f64,
    pub op_ur: bool,
    pub op_rr: bool,
}

pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<AblationCell> {
    let (ur, rr) = (cfg.hyper.k_op_ur, cfg.hyper.k_op_rr);
    let cell = |name: String, sweep: &str, k_op_ur, k_op_rr, op_ur, op_rr| AblationCell {
        name,
        sweep: sweep.to_string(),
        k_op_ur,
        k_op_rr,
        op_ur,
        op_rr,
    };
    let mut cells = Vec::new();
    if cfg.ablation.components {
        cells.push(cell("full".into(), "component", ur, rr, true, true));
        cells.push(cell("no_op_ur".into(), "component", ur, rr, false, true));
        cells.push(cell("no_op_rr".into(), "component", ur, rr, true, false));
        cells.push(cell("no_both".into(), "component", ur, rr, false, false));
    }
    for &k in &cfg.ablation.k_op_ur {
        cells.push(cell(format!("k_op_ur-{k}"), "k_op_ur", k, rr, true, true));
    }
    for &k in &cfg.ablation.k_op_rr {
        cells.push(cell(format!("k_op_rr-{k}"), "k_op_rr", ur, k, true, true));
    }
    cells
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    #[serde(flatten)]
    pub cell: AblationCell,
    pub summary: CellSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutput {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Masked unlearning over the component toggles and both k sweeps. Writes
/// `ablation/<cell>/seed-<s>/`, `ablation_cells.csv`, `ablation.csv` and
/// `ablation.json` (one row per grid cell).
pub fn ablate(cfg: &ExperimentConfig, allow_mismatch: bool) -> Result<AblationOutput> {
    let stages = prepare_seeds(cfg, allow_mismatch)?;
    let cells = ablation_cells(cfg);
    let jobs: Vec<(&AblationCell, &Stage)> = cells
        .iter()
        .flat_map(|c| stages.iter().map(move |s| (c, s)))
        .collect();
    let results: Vec<CellResult> = jobs
        .par_iter()
        .map(|(cell, stage)| {
            log::info!("ablate: {} seed {}", cell.name, stage.seed);
            let (vanilla, _) = stage.load_vanilla()?;
            let (summaries, _) = stage.load_summaries(&vanilla)?;
            let mask =
                localize(&summaries, cell.k_op_ur, cell.k_op_rr)?.ablate(cell.op_ur, cell.op_rr);
            stage.unlearn(
                Method::Grail,
                &cfg.run_dir("ablation", &cell.name, stage.seed),
                Some(&mask),
            )
        })
        .collect::<Result<_>>()?;

    let rows: Vec<_> = jobs
        .iter()
        .zip(&results)
        .map(|((c, s), r)| (c.name.clone(), s.seed, &r.report, r))
        .collect();
    write_cells_csv(&cfg.out.join("ablation_cells.csv"), &rows)?;

    let table: Vec<AblationRow> = cells
        .iter()
        .map(|c| {
            let mine: Vec<&CellResult> = jobs
                .iter()
                .zip(&results)
                .filter(|((jc, _), _)| jc.name == c.name)
                .map(|(_, r)| r)
                .collect();
            AblationRow {
                cell: c.clone(),
                summary: summarize(&c.name, &mine),
            }
        })
        .collect();

    let path = cfg.out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "cell",
        "sweep",
        "k_op_ur",
        "k_op_rr",
        "op_ur",
        "op_rr",
        "n_seeds",
        "US_pri_mean",
        "US_pri_sd",
        "RS_pri_mean",
        "RS_pri_sd",
        "US_cpy_mean",
        "US_cpy_sd",
        "RS_cpy_mean",
        "RS_cpy_sd",
    ])?;
    for row in &table {
        let (p, c) = (&row.summary.privacy, &row.summary.copyright);
        let mut rec = vec![
            row.cell.name.clone(),
            row.cell.sweep.clone(),
            row.cell.k_op_ur.to_string(),
            row.cell.k_op_rr.to_string(),
            row.cell.op_ur.to_string(),
            row.cell.op_rr.to_string(),
            row.summary.n_seeds.to_string(),
        ];
        for s in [p.us, p.rs, c.us, c.rs] {
            rec.push(fmt_num(s.mean));
            rec.push(fmt_num(s.sd));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let out = AblationOutput {
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        rows: table,
    };
    write_json(&out, &cfg.out.join("ablation.json"))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[3.0]).sd, 0.0);
        assert!(Stat::of(&[1.0, f64::INFINITY]).mean.is_infinite());
    }

    #[test]
    fn grid_has_one_cell_per_setting() {
        let cfg = ExperimentConfig::default();
        let cells = ablation_cells(&cfg);
        assert_eq!(
            cells.len(),
            4 + cfg.ablation.k_op_ur.len() + cfg.ablation.k_op_rr.len()
        );
        let names: Vec<_> = cells.iter().take(4).map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["full", "no_op_ur", "no_op_rr", "no_both"]);
    }
}
