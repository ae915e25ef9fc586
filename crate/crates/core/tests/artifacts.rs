mod common;

use sha2::{Digest, Sha256};
use unlearn_core::corpus::{generate_corpus, load_corpus, meta_path, save_corpus, CorpusSpec};
use unlearn_core::localize::{localize, MaskFile, MASK_FORMAT_VERSION};
use unlearn_core::model::{ModelState, CHECKPOINT_VERSION};
use unlearn_core::probe::{load_summary, probe_dataset, save_summary, DatasetTag};
use unlearn_core::Error;

/// Rewrites a checkpoint's header and version, then re-seals the checksum so
/// only the semantic check can reject it.
fn reseal(bytes: &[u8], version: u32, edit_header: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let body = &bytes[..bytes.len() - 32];
    let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&body[16..16 + header_len]).unwrap();
    edit_header(&mut header);
    let header = serde_json::to_vec(&header).unwrap();
    let mut out = body[..8].to_vec();
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body[16 + header_len..]);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let model = common::tiny_model(3);
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    model.save(&a).unwrap();
    ModelState::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(ModelState::from_bytes(&reseal(&model.to_bytes(), CHECKPOINT_VERSION, |_| {})).is_ok());
}

#[test]
fn checkpoint_rejects_other_versions() {
    let bytes = reseal(
        &common::tiny_model(1).to_bytes(),
        CHECKPOINT_VERSION + 1,
        |_| {},
    );
    let err = ModelState::from_bytes(&bytes).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(ref m) if m.contains("version")),
        "{err}"
    );
}

#[test]
fn checkpoint_rejects_mismatched_vocabulary() {
    let bytes = reseal(&common::tiny_model(1).to_bytes(), CHECKPOINT_VERSION, |h| {
        h["config"]["vocab_size"] = serde_json::json!(21);
    });
    let err = ModelState::from_bytes(&bytes).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(ref m) if m.contains("shapes")),
        "{err}"
    );
}

#[test]
fn checkpoint_rejects_damage() {
    let bytes = common::tiny_model(1).to_bytes();
    let mut flipped = bytes.clone();
    flipped[200] ^= 1;
    assert!(ModelState::from_bytes(&flipped).is_err());
    assert!(ModelState::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    assert!(ModelState::from_bytes(b"short").is_err());
    let err = ModelState::load(std::path::Path::new("/nonexistent/x.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn summary_load_checks_the_model_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let model = common::tiny_model(2);
    let other = common::tiny_model(3);
    let items = common::random_items(3, 20, 0);
    let summary = probe_dataset(&model, DatasetTag::RetainCopyright, &items, 2, 0).unwrap();
    let path = dir.path().join("s.json");
    save_summary(&summary, &path).unwrap();

    assert_eq!(
        load_summary(&path, Some(&model.fingerprint()), false).unwrap(),
        summary
    );
    let err = load_summary(&path, Some(&other.fingerprint()), false).unwrap_err();
    assert!(matches!(err, Error::FingerprintMismatch { .. }));
    assert_eq!(
        load_summary(&path, Some(&other.fingerprint()), true).unwrap(),
        summary
    );
    assert_eq!(load_summary(&path, None, false).unwrap(), summary);

    let mut text: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    text["magnitudes"][0][0] = serde_json::json!(-1.0);
    std::fs::write(&path, text.to_string()).unwrap();
    assert!(load_summary(&path, None, false).is_err());
}

#[test]
fn mask_file_round_trips_and_rejects_other_versions() {
    let (corpus, model) = common::small_setup(1);
    let summaries = unlearn_core::probe::probe_corpus(&model, &corpus, 3, 0).unwrap();
    let mask = localize(&summaries, 10.0, 20.0).unwrap();
    let file = MaskFile {
        format_version: MASK_FORMAT_VERSION,
        k_op_ur: 10.0,
        k_op_rr: 20.0,
        model_fingerprint: model.fingerprint(),
        layer_names: model.layer_names(),
        mask,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.json");
    file.save(&path).unwrap();
    assert_eq!(MaskFile::load(&path).unwrap(), file);
    assert!(file.mask.frozen.is_congruent(&model));

    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["format_version"] = serde_json::json!(MASK_FORMAT_VERSION + 1);
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(MaskFile::load(&path).is_err());
}

#[test]
fn corpus_files_round_trip_and_report_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        rho: 0.25,
        seed: 4,
        ..Default::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&corpus, &path).unwrap();
    assert!(meta_path(&path).exists());
    let back = load_corpus(&path).unwrap();
    assert_eq!(
        back.items().collect::<Vec<_>>(),
        corpus.items().collect::<Vec<_>>()
    );
    assert_eq!(back.overlap, corpus.overlap);

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"id\": broken";
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = load_corpus(&path).unwrap_err();
    assert!(matches!(err, Error::CorpusLine { line: 3, .. }), "{err}");
}
