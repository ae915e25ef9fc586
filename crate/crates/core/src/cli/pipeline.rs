//! Pipeline stages and their on-disk artifacts.
//!
//! Each stage writes a manifest next to its outputs recording the config
//! hash, the seed, and the sha256 of every file it consumed and produced.
//! Downstream stages re-hash their inputs against the producing manifest
//! before using them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::corpus::{generate_corpus, load_corpus, meta_path, save_corpus, train_vanilla, Corpus};
use crate::error::{Error, Result};
use crate::eval::{full_report, EvalReport};
use crate::localize::{jaccard_matrix, localize, FrozenMask, MaskFile, MASK_FORMAT_VERSION};
use crate::model::ModelState;
use crate::probe::{
    load_summary, probe_corpus, save_summary, write_summary_csv, DatasetTag, GradientSummary,
};
use crate::unlearn::{run_method, Method, MethodContext, RunRecord};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const VANILLA_FILE: &str = "vanilla.ckpt";
pub const MASK_FILE: &str = "mask.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Run envelope written as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub model_fingerprint: String,
    pub record: RunRecord,
}

/// Report envelope written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn summary_file(tag: DatasetTag) -> String {
    format!("summaries/{tag}.json")
}

/// Everything one pipeline seed needs.
#[derive(Debug, Clone)]
pub struct Stage {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub config_hash: String,
    pub dir: PathBuf,
    pub allow_mismatch: bool,
}

impl Stage {
    pub fn new(base: &ExperimentConfig, seed: u64, allow_mismatch: bool) -> Self {
        let cfg = base.for_seed(seed);
        Stage {
            config_hash: cfg.hash(),
            dir: base.seed_dir(seed),
            cfg,
            seed,
            allow_mismatch,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.json"))
    }

    fn write_manifest(
        &self,
        stage: &str,
        inputs: BTreeMap<String, String>,
        outputs: &[String],
        details: serde_json::Value,
    ) -> Result<Manifest> {
        let outputs = outputs
            .iter()
            .map(|rel| Ok((rel.clone(), sha256_file(&self.path(rel))?)))
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            stage: stage.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            inputs,
            outputs,
            details,
        };
        write_json(&manifest, &self.manifest_path(stage))?;
        Ok(manifest)
    }

    fn load_manifest(&self, stage: &str, needed: &str) -> Result<Manifest> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: self.path(needed),
                command: stage.to_string(),
            });
        }
        let manifest: Manifest = read_json(&path)?;
        if manifest.config_hash != self.config_hash {
            log::warn!(
                "{} was produced under a different configuration; re-run `{stage}` to refresh it",
                path.display()
            );
        }
        Ok(manifest)
    }

    /// Hashes `rel` and checks it against the manifest of `stage`.
    fn verify(&self, stage: &str, rel: &str) -> Result<(String, String)> {
        let manifest = self.load_manifest(stage, rel)?;
        let path = self.path(rel);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                command: stage.to_string(),
            });
        }
        let found = sha256_file(&path)?;
        let expected = manifest.outputs.get(rel).cloned().unwrap_or_default();
        if found != expected {
            if self.allow_mismatch {
                log::warn!(
                    "{} does not match the `{stage}` manifest; proceeding",
                    path.display()
                );
            } else {
                return Err(Error::FingerprintMismatch { expected, found });
            }
        }
        Ok((rel.to_string(), found))
    }

    /// True when `stage` already ran under this exact config and seed and its
    /// outputs are intact.
    pub fn is_fresh(&self, stage: &str) -> bool {
        let Ok(manifest) = read_json::<Manifest>(&self.manifest_path(stage)) else {
            return false;
        };
        manifest.config_hash == self.config_hash
            && manifest.seed == self.seed
            && manifest
                .outputs
                .iter()
                .all(|(rel, sha)| sha256_file(&self.path(rel)).is_ok_and(|s| &s == sha))
    }

    pub fn gen_corpus(&self) -> Result<Corpus> {
        create_dir(&self.dir)?;
        let corpus = generate_corpus(&self.cfg.corpus)?;
        save_corpus(&corpus, &self.path(CORPUS_FILE))?;
        let meta = meta_path(Path::new(CORPUS_FILE))
            .to_string_lossy()
            .into_owned();
        let details = serde_json::to_value(&corpus.overlap)?;
        self.write_manifest(
            "gen-corpus",
            BTreeMap::new(),
            &[CORPUS_FILE.into(), meta],
            details,
        )?;
        Ok(corpus)
    }

    pub fn load_corpus(&self) -> Result<(Corpus, (String, String))> {
        let entry = self.verify("gen-corpus", CORPUS_FILE)?;
        Ok((load_corpus(&self.path(CORPUS_FILE))?, entry))
    }

    pub fn load_vanilla(&self) -> Result<(ModelState, (String, String))> {
        let entry = self.verify("train", VANILLA_FILE)?;
        Ok((ModelState::load(&self.path(VANILLA_FILE))?, entry))
    }

    pub fn train(&self) -> Result<ModelState> {
        let (corpus, corpus_entry) = self.load_corpus()?;
        let model = ModelState::init(self.cfg.model.clone())?;
        let outcome = train_vanilla(model, &corpus, &self.cfg.train)?;
        if outcome.accuracy < self.cfg.train.target_accuracy {
            log::warn!(
                "vanilla training stopped at accuracy {:.4} after {} epochs",
                outcome.accuracy,
                outcome.epochs_run
            );
        }
        outcome.model.save(&self.path(VANILLA_FILE))?;
        let details = serde_json::json!({
            "model_fingerprint": outcome.model.fingerprint(),
            "accuracy": outcome.accuracy,
            "mean_loss": outcome.mean_loss,
            "epochs_run": outcome.epochs_run,
        });
        self.write_manifest(
            "train",
            BTreeMap::from([corpus_entry]),
            &[VANILLA_FILE.into()],
            details,
        )?;
        Ok(outcome.model)
    }

    pub fn probe(&self) -> Result<Vec<GradientSummary>> {
        let (corpus, corpus_entry) = self.load_corpus()?;
        let (model, model_entry) = self.load_vanilla()?;
        let summaries = probe_corpus(&model, &corpus, self.cfg.hyper.trials, self.seed)?;
        create_dir(&self.path("summaries"))?;
        let mut outputs = Vec::new();
        for s in &summaries {
            let json = summary_file(s.dataset_tag);
            let csv = format!("summaries/{}.csv", s.dataset_tag);
            save_summary(s, &self.path(&json))?;
            write_summary_csv(s, &self.path(&csv))?;
            outputs.push(json);
            outputs.push(csv);
        }
        let details = serde_json::json!({ "trials": self.cfg.hyper.trials });
        self.write_manifest(
            "probe",
            BTreeMap::from([corpus_entry, model_entry]),
            &outputs,
            details,
        )?;
        Ok(summaries)
    }

    pub fn load_summaries(
        &self,
        model: &ModelState,
    ) -> Result<(Vec<GradientSummary>, BTreeMap<String, String>)> {
        let fingerprint = model.fingerprint();
        let mut entries = BTreeMap::new();
        let mut summaries = Vec::new();
        for tag in DatasetTag::ALL {
            let rel = summary_file(tag);
            let (k, v) = self.verify("probe", &rel)?;
            summaries.push(load_summary(
                &self.path(&rel),
                Some(&fingerprint),
                self.allow_mismatch,
            )?);
            entries.insert(k, v);
        }
        Ok((summaries, entries))
    }

    pub fn localize(&self) -> Result<MaskFile> {
        let (model, model_entry) = self.load_vanilla()?;
        let (summaries, mut inputs) = self.load_summaries(&model)?;
        inputs.insert(model_entry.0, model_entry.1);
        let hyper = &self.cfg.hyper;
        let mask = localize(&summaries, hyper.k_op_ur, hyper.k_op_rr)?;
        let file = MaskFile {
            format_version: MASK_FORMAT_VERSION,
            k_op_ur: hyper.k_op_ur,
            k_op_rr: hyper.k_op_rr,
            model_fingerprint: model.fingerprint(),
            layer_names: model.layer_names(),
            mask,
        };
        file.save(&self.path(MASK_FILE))?;
        let jaccard = jaccard_matrix(&summaries, hyper.k_op_ur)?;
        jaccard.write_csv(&self.path("jaccard.csv"))?;
        write_json(&jaccard, &self.path("jaccard.json"))?;
        let details = serde_json::json!({
            "frozen": file.mask.frozen.count(),
            "op_ur": file.mask.op_ur.count(),
            "op_rr": file.mask.op_rr.count(),
            "num_params": model.num_params(),
            "jaccard_within_domain": jaccard.within_domain_mean(),
            "jaccard_cross_domain": jaccard.cross_domain_mean(),
        });
        self.write_manifest(
            "localize",
            inputs,
            &[
                MASK_FILE.into(),
                "jaccard.csv".into(),
                "jaccard.json".into(),
            ],
            details,
        )?;
        Ok(file)
    }

    pub fn load_mask(&self, model: &ModelState) -> Result<(FrozenMask, (String, String))> {
        let entry = self.verify("localize", MASK_FILE)?;
        let file = MaskFile::load(&self.path(MASK_FILE))?;
        if file.model_fingerprint != model.fingerprint() {
            if self.allow_mismatch {
                log::warn!("mask was localized on a different model; proceeding");
            } else {
                return Err(Error::FingerprintMismatch {
                    expected: model.fingerprint(),
                    found: file.model_fingerprint,
                });
            }
        }
        Ok((file.mask, entry))
    }

    /// Runs every stage whose outputs are missing or stale.
    pub fn prepare(&self) -> Result<()> {
        for stage in ["gen-corpus", "train", "probe", "localize"] {
            if self.is_fresh(stage) {
                log::debug!("seed {}: `{stage}` up to date", self.seed);
                continue;
            }
            log::info!("seed {}: running `{stage}`", self.seed);
            match stage {
                "gen-corpus" => self.gen_corpus().map(drop)?,
                "train" => self.train().map(drop)?,
                "probe" => self.probe().map(drop)?,
                _ => self.localize().map(drop)?,
            }
        }
        Ok(())
    }

    /// Runs `method` from the vanilla checkpoint and persists checkpoint,
    /// run record, curve and report into `run_dir`.
    pub fn unlearn(
        &self,
        method: Method,
        run_dir: &Path,
        mask_override: Option<&FrozenMask>,
    ) -> Result<CellResult> {
        let (corpus, corpus_entry) = self.load_corpus()?;
        let (vanilla, model_entry) = self.load_vanilla()?;
        let mut inputs = BTreeMap::from([corpus_entry, model_entry]);
        let mask = match (method, mask_override) {
            (_, Some(m)) => Some(m.clone()),
            (Method::Grail, None) => {
                let (m, entry) = self.load_mask(&vanilla)?;
                inputs.insert(entry.0, entry.1);
                Some(m)
            }
            _ => None,
        };
        let summaries = if method == Method::Layerwise {
            let (s, entries) = self.load_summaries(&vanilla)?;
            inputs.extend(entries);
            Some(s)
        } else {
            None
        };
        let ctx = MethodContext {
            mask: mask.as_ref(),
            summaries: summaries.as_deref(),
            reference: Some(&vanilla),
        };
        let (model, mut record) =
            run_method(method, vanilla.clone(), &corpus, ctx, &self.cfg.hyper)?;
        create_dir(run_dir)?;
        let ckpt = run_dir.join("model.ckpt");
        model.save(&ckpt)?;
        record.checkpoint = Some(ckpt.to_string_lossy().into_owned());
        write_json(
            &RunArtifact {
                config_hash: self.config_hash.clone(),
                seed: self.seed,
                inputs,
                model_fingerprint: model.fingerprint(),
                record: record.clone(),
            },
            &run_dir.join("run.json"),
        )?;
        record.write_curve_csv(&run_dir.join("curve.csv"))?;
        let report = self.evaluate(
            &ckpt,
            &corpus,
            record.method.as_str(),
            &run_dir.join("report.json"),
        )?;
        Ok(CellResult { report, record })
    }

    /// Evaluates a checkpoint and writes the report.
    pub fn evaluate(
        &self,
        checkpoint: &Path,
        corpus: &Corpus,
        method: &str,
        out: &Path,
    ) -> Result<EvalReport> {
        let model = ModelState::load(checkpoint)?;
        let report = full_report(&model, corpus, method, self.seed)?;
        write_json(
            &ReportArtifact {
                config_hash: self.config_hash.clone(),
                checkpoint_sha256: sha256_file(checkpoint)?,
                report: report.clone(),
            },
            out,
        )?;
        Ok(report)
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub report: EvalReport,
    pub record: RunRecord,
}
