//! Unlearning / retention success, harmonic success, perplexity and ROUGE-L.
//!
//! Success is judged on whole answers: a greedy decode of the reference
//! length either reproduces the reference exactly or it does not. Unlearning
//! success counts any mismatch, retention success needs an exact match.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, Domain, KnowledgeItem};
use crate::error::{Error, Result};
use crate::model::{ModelState, Token};

pub fn exact_match(model: &ModelState, item: &KnowledgeItem) -> Result<bool> {
    Ok(model.greedy_decode(&item.prompt, item.answer.len())? == item.answer)
}

/// Percentage of items reproduced exactly.
pub fn exact_match_rate<'a>(
    model: &ModelState,
    items: impl IntoIterator<Item = &'a KnowledgeItem>,
) -> Result<f64> {
    let items: Vec<&KnowledgeItem> = items.into_iter().collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty split".into(),
        ));
    }
    let hits: Vec<bool> = items
        .par_iter()
        .map(|i| exact_match(model, i))
        .collect::<Result<_>>()?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64)
}

pub fn unlearning_success(model: &ModelState, split: &[KnowledgeItem]) -> Result<f64> {
    Ok(100.0 - exact_match_rate(model, split)?)
}

pub fn retention_success(model: &ModelState, split: &[KnowledgeItem]) -> Result<f64> {
    exact_match_rate(model, split)
}

/// Harmonic mean of the two success rates; zero when both are zero.
pub fn harmonic_success(us: f64, rs: f64) -> Result<f64> {
    if !(us >= 0.0 && rs >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "success rates must be non-negative, got {us} and {rs}"
        )));
    }
    if us + rs == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * us * rs / (us + rs))
}

/// `exp` of the mean per-token answer NLL over the split. Overflow saturates
/// to `+inf`.
pub fn perplexity(model: &ModelState, split: &[KnowledgeItem]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty split".into(),
        ));
    }
    let per_item: Vec<(f64, usize)> = split
        .par_iter()
        .map(|i| {
            model
                .item_loss(i)
                .map(|l| (l * i.answer.len() as f64, i.answer.len()))
        })
        .collect::<Result<_>>()?;
    let (nll, tokens) = per_item
        .iter()
        .fold((0.0, 0usize), |(a, n), (l, k)| (a + l, n + k));
    Ok((nll / tokens as f64).exp())
}

pub fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F1 between candidate and reference, scaled to `[0, 100]`.
pub fn rouge_l(candidate: &[Token], reference: &[Token]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument(
            "ROUGE-L needs non-empty sequences".into(),
        ));
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(100.0 * 2.0 * p * r / (p + r))
}

/// Mean ROUGE-L of greedy decodes against the references.
pub fn split_rouge_l(model: &ModelState, split: &[KnowledgeItem]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty split".into(),
        ));
    }
    let scores: Vec<f64> = split
        .par_iter()
        .map(|i| {
            let out = model.greedy_decode(&i.prompt, i.answer.len())?;
            rouge_l(&out, &i.answer)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

mod inf_float {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_infinite() && *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad number `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub us: f64,
    pub rs: f64,
    pub hs: f64,
    #[serde(with = "inf_float")]
    pub ppl_unlearn: f64,
    #[serde(with = "inf_float")]
    pub ppl_retain: f64,
    pub rouge_l_unlearn: f64,
    pub rouge_l_retain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub privacy: DomainReport,
    pub copyright: DomainReport,
    /// Exact-match accuracy on the general split, when present.
    pub general_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn domain(&self, domain: Domain) -> &DomainReport {
        match domain {
            Domain::Copyright => &self.copyright,
            _ => &self.privacy,
        }
    }

    pub fn mean_hs(&self) -> f64 {
        (self.privacy.hs + self.copyright.hs) / 2.0
    }
}

pub fn domain_report(model: &ModelState, corpus: &Corpus, domain: Domain) -> Result<DomainReport> {
    let unlearn = corpus.unlearn(domain);
    let retain = corpus.retain(domain);
    let us = unlearning_success(model, unlearn)?;
    let rs = retention_success(model, retain)?;
    Ok(DomainReport {
        us,
        rs,
        hs: harmonic_success(us, rs)?,
        ppl_unlearn: perplexity(model, unlearn)?,
        ppl_retain: perplexity(model, retain)?,
        rouge_l_unlearn: split_rouge_l(model, unlearn)?,
        rouge_l_retain: split_rouge_l(model, retain)?,
    })
}

pub fn full_report(
    model: &ModelState,
    corpus: &Corpus,
    method: &str,
    seed: u64,
) -> Result<EvalReport> {
    let general_accuracy = if corpus.general.is_empty() {
        None
    } else {
        Some(exact_match_rate(model, &corpus.general)?)
    };
    Ok(EvalReport {
        method: method.to_string(),
        seed,
        privacy: domain_report(model, corpus, Domain::Privacy)?,
        copyright: domain_report(model, corpus, Domain::Copyright)?,
        general_accuracy,
    })
}
