use std::collections::HashSet;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusSpec, Domain, KnowledgeItem, OverlapReport, Scope, Split};
use crate::error::{Error, Result};
use crate::model::Token;

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    domain: Domain,
    scope: Scope,
    split: Split,
    prompt: Vec<Token>,
    answer: Vec<Token>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    spec: CorpusSpec,
    overlap: OverlapReport,
}

/// Sidecar holding the generation settings and planted-overlap report: `corpus.jsonl` ->
/// `corpus.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for split in Split::ALL {
        for item in corpus.split(split) {
            let rec = Record {
                id: item.id.clone(),
                domain: item.domain,
                scope: item.scope,
                split,
                prompt: item.prompt.clone(),
                answer: item.answer.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta = Meta {
        format_version: CORPUS_FORMAT_VERSION,
        spec: corpus.spec.clone(),
        overlap: corpus.overlap.clone(),
    };
    let mp = meta_path(path);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mp = meta_path(path);
    let meta_text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Corpus(format!("{}: {e}", mp.display())))?;
    if meta.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::Corpus(format!(
            "{}: unsupported format version {}",
            mp.display(),
            meta.format_version
        )));
    }

    let line_err = |line: usize, msg: String| Error::CorpusLine {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut ids = HashSet::new();
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| line_err(lineno, format!("malformed record: {e}")))?;
        if Split::of(rec.domain, rec.scope) != Some(rec.split) {
            return Err(line_err(
                lineno,
                format!(
                    "split {} disagrees with domain/scope {:?}/{:?}",
                    rec.split, rec.domain, rec.scope
                ),
            ));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(line_err(lineno, format!("duplicate id `{}`", rec.id)));
        }
        items.push(KnowledgeItem {
            id: rec.id,
            domain: rec.domain,
            scope: rec.scope,
            prompt: rec.prompt,
            answer: rec.answer,
        });
    }
    if items.is_empty() {
        return Err(Error::Corpus(format!("{} holds no items", path.display())));
    }
    Corpus::from_items(meta.spec, meta.overlap, items)
}
