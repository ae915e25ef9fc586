//! Synthetic multi-domain knowledge corpora.
//!
//! Facts are `[subject tokens] ++ [template token] -> [object tokens]`. The
//! vocabulary is carved into disjoint regions (subjects, templates and object
//! pools per domain, plus an out-of-distribution region), and entanglement is
//! planted by reusing subjects across domains and templates across scopes.

mod io;
mod train;

pub use io::{load_corpus, meta_path, save_corpus};
pub use train::{train_vanilla, TrainOptions, TrainOutcome};

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Privacy,
    Copyright,
    General,
}

impl Domain {
    pub const CORE: [Domain; 2] = [Domain::Privacy, Domain::Copyright];

    pub fn short(self) -> &'static str {
        match self {
            Domain::Privacy => "pri",
            Domain::Copyright => "cpy",
            Domain::General => "gen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Unlearn,
    Retain,
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "PU")]
    PrivacyUnlearn,
    #[serde(rename = "PR")]
    PrivacyRetain,
    #[serde(rename = "CU")]
    CopyrightUnlearn,
    #[serde(rename = "CR")]
    CopyrightRetain,
    #[serde(rename = "general")]
    General,
    #[serde(rename = "ood")]
    Ood,
}

impl Split {
    pub const ALL: [Split; 6] = [
        Split::PrivacyUnlearn,
        Split::PrivacyRetain,
        Split::CopyrightUnlearn,
        Split::CopyrightRetain,
        Split::General,
        Split::Ood,
    ];

    pub fn of(domain: Domain, scope: Scope) -> Option<Split> {
        Some(match (domain, scope) {
            (Domain::Privacy, Scope::Unlearn) => Split::PrivacyUnlearn,
            (Domain::Privacy, Scope::Retain) => Split::PrivacyRetain,
            (Domain::Copyright, Scope::Unlearn) => Split::CopyrightUnlearn,
            (Domain::Copyright, Scope::Retain) => Split::CopyrightRetain,
            (Domain::General, Scope::Retain) => Split::General,
            (Domain::General, Scope::Ood) => Split::Ood,
            _ => return None,
        })
    }

    pub fn domain(self) -> Domain {
        match self {
            Split::PrivacyUnlearn | Split::PrivacyRetain => Domain::Privacy,
            Split::CopyrightUnlearn | Split::CopyrightRetain => Domain::Copyright,
            Split::General | Split::Ood => Domain::General,
        }
    }

    pub fn scope(self) -> Scope {
        match self {
            Split::PrivacyUnlearn | Split::CopyrightUnlearn => Scope::Unlearn,
            Split::PrivacyRetain | Split::CopyrightRetain | Split::General => Scope::Retain,
            Split::Ood => Scope::Ood,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Split::PrivacyUnlearn => "PU",
            Split::PrivacyRetain => "PR",
            Split::CopyrightUnlearn => "CU",
            Split::CopyrightRetain => "CR",
            Split::General => "general",
            Split::Ood => "ood",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub domain: Domain,
    pub scope: Scope,
    pub prompt: Vec<Token>,
    pub answer: Vec<Token>,
}

impl KnowledgeItem {
    pub fn split(&self) -> Option<Split> {
        Split::of(self.domain, self.scope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub n_pu: usize,
    pub n_pr: usize,
    pub n_cu: usize,
    pub n_cr: usize,
    pub n_general: usize,
    pub n_ood: usize,
    /// Entanglement in `[0, 1]`.
    pub rho: f64,
    pub prompt_len: usize,
    pub answer_len: usize,
    pub seed: u64,
    /// Require `n_pu == n_cu` and `n_pr == n_cr`.
    pub balanced: bool,
    /// Template tokens per (domain, scope).
    pub templates_per_scope: usize,
    /// Size of each domain's object-token pool.
    pub objects_per_domain: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            vocab_size: 512,
            n_pu: 32,
            n_pr: 32,
            n_cu: 32,
            n_cr: 32,
            n_general: 32,
            n_ood: 32,
            rho: 0.5,
            prompt_len: 2,
            answer_len: 2,
            seed: 0,
            balanced: true,
            templates_per_scope: 4,
            objects_per_domain: 16,
        }
    }
}

/// Round half up.
pub(crate) fn round_count(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

impl CorpusSpec {
    fn subject_len(&self) -> usize {
        self.prompt_len - 1
    }

    /// PU subjects reused in copyright-unlearn facts.
    pub fn shared_unlearn_subjects(&self) -> usize {
        round_count(self.rho * self.n_pu as f64)
    }

    /// PR subjects reused in copyright-retain facts.
    pub fn shared_retain_subjects(&self) -> usize {
        round_count(self.rho * self.n_pr as f64)
    }

    /// Templates shared between the unlearn and retain scopes of one domain.
    pub fn shared_templates(&self) -> usize {
        round_count(self.rho * self.templates_per_scope as f64)
    }

    /// Minimum vocabulary that hosts this layout.
    pub fn required_vocab(&self) -> usize {
        let s = self.subject_len();
        let nt = self.templates_per_scope;
        let mt = self.shared_templates();
        let subjects = (self.n_pu + self.n_pr)
            + (self.n_cu - self.shared_unlearn_subjects().min(self.n_cu))
            + (self.n_cr - self.shared_retain_subjects().min(self.n_cr))
            + self.n_general
            + self.n_ood;
        let templates = 2 * (nt + nt - mt) + 2 * nt;
        subjects * s + templates + 4 * self.objects_per_domain
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Corpus(m));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.prompt_len < 2 {
            return bad("prompt_len must be at least 2 (subject + template)".into());
        }
        if self.answer_len == 0 {
            return bad("answer_len must be positive".into());
        }
        if self.n_pu == 0 || self.n_pr == 0 || self.n_cu == 0 || self.n_cr == 0 {
            return bad("every core split needs at least one item".into());
        }
        if self.balanced && (self.n_pu != self.n_cu || self.n_pr != self.n_cr) {
            return bad(format!(
                "balanced corpus requires n_pu == n_cu and n_pr == n_cr (got {}/{} and {}/{})",
                self.n_pu, self.n_cu, self.n_pr, self.n_cr
            ));
        }
        if self.templates_per_scope == 0 || self.objects_per_domain == 0 {
            return bad("templates_per_scope and objects_per_domain must be positive".into());
        }
        if self.shared_unlearn_subjects() > self.n_cu || self.shared_retain_subjects() > self.n_cr {
            return bad("not enough copyright items to host the shared privacy subjects".into());
        }
        let required = self.required_vocab();
        if self.vocab_size < required.max(8) {
            return Err(Error::VocabTooSmall {
                vocab: self.vocab_size,
                required: required.max(8),
            });
        }
        Ok(())
    }
}

/// Ground truth for what the generator deliberately shared.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Privacy-unlearn subjects that also head a copyright-unlearn fact.
    pub shared_subjects_pu_cu: Vec<Vec<Token>>,
    /// Privacy-retain subjects that also head a copyright-retain fact.
    pub shared_subjects_pr_cr: Vec<Vec<Token>>,
    pub shared_templates_privacy: Vec<Token>,
    pub shared_templates_copyright: Vec<Token>,
}

impl OverlapReport {
    pub fn cross_domain_shared_subjects(&self) -> usize {
        self.shared_subjects_pu_cu.len() + self.shared_subjects_pr_cr.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub privacy_unlearn: Vec<KnowledgeItem>,
    pub privacy_retain: Vec<KnowledgeItem>,
    pub copyright_unlearn: Vec<KnowledgeItem>,
    pub copyright_retain: Vec<KnowledgeItem>,
    pub general: Vec<KnowledgeItem>,
    pub ood: Vec<KnowledgeItem>,
    pub overlap: OverlapReport,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[KnowledgeItem] {
        match split {
            Split::PrivacyUnlearn => &self.privacy_unlearn,
            Split::PrivacyRetain => &self.privacy_retain,
            Split::CopyrightUnlearn => &self.copyright_unlearn,
            Split::CopyrightRetain => &self.copyright_retain,
            Split::General => &self.general,
            Split::Ood => &self.ood,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<KnowledgeItem> {
        match split {
            Split::PrivacyUnlearn => &mut self.privacy_unlearn,
            Split::PrivacyRetain => &mut self.privacy_retain,
            Split::CopyrightUnlearn => &mut self.copyright_unlearn,
            Split::CopyrightRetain => &mut self.copyright_retain,
            Split::General => &mut self.general,
            Split::Ood => &mut self.ood,
        }
    }

    pub fn unlearn(&self, domain: Domain) -> &[KnowledgeItem] {
        match domain {
            Domain::Privacy => &self.privacy_unlearn,
            Domain::Copyright => &self.copyright_unlearn,
            Domain::General => &[],
        }
    }

    pub fn retain(&self, domain: Domain) -> &[KnowledgeItem] {
        match domain {
            Domain::Privacy => &self.privacy_retain,
            Domain::Copyright => &self.copyright_retain,
            Domain::General => &self.general,
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &KnowledgeItem> {
        Split::ALL.into_iter().flat_map(|s| self.split(s).iter())
    }

    /// Items the vanilla model is trained on: the four core splits and the
    /// general split.
    pub fn training_items(&self) -> Vec<&KnowledgeItem> {
        [
            Split::PrivacyUnlearn,
            Split::PrivacyRetain,
            Split::CopyrightUnlearn,
            Split::CopyrightRetain,
            Split::General,
        ]
        .into_iter()
        .flat_map(|s| self.split(s).iter())
        .collect()
    }

    pub fn max_item_len(&self) -> usize {
        self.items()
            .map(|i| i.prompt.len() + i.answer.len())
            .max()
            .unwrap_or(0)
    }

    /// Checks id uniqueness, domain/scope coherence and split disjointness.
    pub fn validate(&self) -> Result<()> {
        for s in [
            Split::PrivacyUnlearn,
            Split::PrivacyRetain,
            Split::CopyrightUnlearn,
            Split::CopyrightRetain,
        ] {
            if self.split(s).is_empty() {
                return Err(Error::Corpus(format!("core split {s} is empty")));
            }
        }
        let mut ids = HashSet::new();
        let mut seen: HashMap<(&[Token], &[Token]), Split> = HashMap::new();
        for s in Split::ALL {
            for item in self.split(s) {
                if item.split() != Some(s) {
                    return Err(Error::Corpus(format!(
                        "item `{}` filed under {s} but tagged {:?}/{:?}",
                        item.id, item.domain, item.scope
                    )));
                }
                if item.answer.is_empty() {
                    return Err(Error::EmptyAnswer(item.id.clone()));
                }
                if !ids.insert(item.id.as_str()) {
                    return Err(Error::Corpus(format!("duplicate item id `{}`", item.id)));
                }
                if let Some(t) = item
                    .prompt
                    .iter()
                    .chain(&item.answer)
                    .find(|&&t| t as usize >= self.spec.vocab_size)
                {
                    return Err(Error::Corpus(format!(
                        "item `{}` uses token {t} outside vocabulary {}",
                        item.id, self.spec.vocab_size
                    )));
                }
                if let Some(prev) = seen.insert((&item.prompt, &item.answer), s) {
                    if prev != s {
                        return Err(Error::Corpus(format!(
                            "fact of item `{}` appears in both {prev} and {s}",
                            item.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn from_items(
        spec: CorpusSpec,
        overlap: OverlapReport,
        items: Vec<KnowledgeItem>,
    ) -> Result<Self> {
        let mut corpus = Corpus {
            spec,
            privacy_unlearn: vec![],
            privacy_retain: vec![],
            copyright_unlearn: vec![],
            copyright_retain: vec![],
            general: vec![],
            ood: vec![],
            overlap,
        };
        for item in items {
            let split = item.split().ok_or_else(|| {
                Error::Corpus(format!(
                    "item `{}` has invalid domain/scope {:?}/{:?}",
                    item.id, item.domain, item.scope
                ))
            })?;
            corpus.split_mut(split).push(item);
        }
        corpus.validate()?;
        Ok(corpus)
    }
}

struct TokenAlloc {
    next: Token,
}

impl TokenAlloc {
    fn take(&mut self, n: usize) -> Vec<Token> {
        let out = (self.next..self.next + n as Token).collect();
        self.next += n as Token;
        out
    }
}

fn chunk_subjects(tokens: Vec<Token>, len: usize) -> Vec<Vec<Token>> {
    tokens.chunks(len).map(<[Token]>::to_vec).collect()
}

fn make_items(
    split: Split,
    subjects: &[Vec<Token>],
    templates: &[Token],
    objects: &[Token],
    answer_len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<KnowledgeItem> {
    subjects
        .iter()
        .enumerate()
        .map(|(i, subject)| {
            let mut prompt = subject.clone();
            prompt.push(templates[i % templates.len()]);
            let answer = (0..answer_len)
                .map(|_| objects[rng.gen_range(0..objects.len())])
                .collect();
            KnowledgeItem {
                id: format!("{}-{i:04}", split.code()),
                domain: split.domain(),
                scope: split.scope(),
                prompt,
                answer,
            }
        })
        .collect()
}

/// Deterministic corpus generation from `spec.seed`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let s = spec.subject_len();
    let nt = spec.templates_per_scope;
    let mut alloc = TokenAlloc { next: 0 };

    let pu_subjects = chunk_subjects(alloc.take(spec.n_pu * s), s);
    let pr_subjects = chunk_subjects(alloc.take(spec.n_pr * s), s);
    let m_u = spec.shared_unlearn_subjects();
    let m_r = spec.shared_retain_subjects();
    let mut cu_subjects = pu_subjects[..m_u].to_vec();
    cu_subjects.extend(chunk_subjects(alloc.take((spec.n_cu - m_u) * s), s));
    let mut cr_subjects = pr_subjects[..m_r].to_vec();
    cr_subjects.extend(chunk_subjects(alloc.take((spec.n_cr - m_r) * s), s));
    let general_subjects = chunk_subjects(alloc.take(spec.n_general * s), s);
    let ood_subjects = chunk_subjects(alloc.take(spec.n_ood * s), s);

    let mt = spec.shared_templates();
    let pu_templates = alloc.take(nt);
    let mut pr_templates = pu_templates[..mt].to_vec();
    pr_templates.extend(alloc.take(nt - mt));
    let cu_templates = alloc.take(nt);
    let mut cr_templates = cu_templates[..mt].to_vec();
    cr_templates.extend(alloc.take(nt - mt));
    let general_templates = alloc.take(nt);
    let ood_templates = alloc.take(nt);

    let privacy_objects = alloc.take(spec.objects_per_domain);
    let copyright_objects = alloc.take(spec.objects_per_domain);
    let general_objects = alloc.take(spec.objects_per_domain);
    let ood_objects = alloc.take(spec.objects_per_domain);
    debug_assert_eq!(alloc.next as usize, spec.required_vocab());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = spec.answer_len;
    let mut items = Vec::new();
    items.extend(make_items(
        Split::PrivacyUnlearn,
        &pu_subjects,
        &pu_templates,
        &privacy_objects,
        a,
        &mut rng,
    ));
    items.extend(make_items(
        Split::PrivacyRetain,
        &pr_subjects,
        &pr_templates,
        &privacy_objects,
        a,
        &mut rng,
    ));
    items.extend(make_items(
        Split::CopyrightUnlearn,
        &cu_subjects,
        &cu_templates,
        &copyright_objects,
        a,
        &mut rng,
    ));
    items.extend(make_items(
        Split::CopyrightRetain,
        &cr_subjects,
        &cr_templates,
        &copyright_objects,
        a,
        &mut rng,
    ));
    items.extend(make_items(
        Split::General,
        &general_subjects,
        &general_templates,
        &general_objects,
        a,
        &mut rng,
    ));
    items.extend(make_items(
        Split::Ood,
        &ood_subjects,
        &ood_templates,
        &ood_objects,
        a,
        &mut rng,
    ));

    let overlap = OverlapReport {
        shared_subjects_pu_cu: pu_subjects[..m_u].to_vec(),
        shared_subjects_pr_cr: pr_subjects[..m_r].to_vec(),
        shared_templates_privacy: pu_templates[..mt].to_vec(),
        shared_templates_copyright: cu_templates[..mt].to_vec(),
    };
    Corpus::from_items(spec.clone(), overlap, items)
}
