use std::ffi::{CStr, CString};
use std::ptr;

use unlearn_ffi::*;

const SMALL: &str = r#"{"vocab_size":64,"n_pu":2,"n_pr":2,"n_cu":2,"n_cr":2,"n_general":0,"n_ood":0,"templates_per_scope":1,"objects_per_domain":4}"#;

fn last_error() -> String {
    let p = ul_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_corpus() -> *mut UlCorpus {
    let spec = CString::new(SMALL).unwrap();
    let mut corpus = ptr::null_mut();
    assert_eq!(
        unsafe { ul_corpus_generate(spec.as_ptr(), &mut corpus) },
        UlStatus::Ok
    );
    corpus
}

#[test]
fn full_round_trip_through_handles() {
    let corpus = small_corpus();
    assert_eq!(unsafe { ul_corpus_len(corpus) }, 8);

    let cfg = CString::new(r#"{"embed_dim":8,"hidden_dim":8,"num_blocks":1}"#).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            ul_model_init(corpus, cfg.as_ptr(), &mut model),
            UlStatus::Ok
        );
        let mut acc = 0.0;
        assert_eq!(
            ul_train_vanilla(model, corpus, ptr::null(), &mut acc),
            UlStatus::Ok
        );
        assert_eq!(acc, 1.0);

        let mut report = UlReport::default();
        assert_eq!(ul_evaluate(model, corpus, &mut report), UlStatus::Ok);
        assert_eq!(report.privacy.us, 0.0);
        assert_eq!(report.copyright.rs, 100.0);
        assert!(report.general_accuracy.is_nan());

        let mut mask = ptr::null_mut();
        assert_eq!(
            ul_localize(model, corpus, 3, 0, 10.0, 20.0, &mut mask),
            UlStatus::Ok
        );
        assert!(ul_mask_frozen_count(mask) > 0);
        let mut empty = ptr::null_mut();
        assert_eq!(ul_mask_ablate(mask, false, false, &mut empty), UlStatus::Ok);
        assert_eq!(ul_mask_frozen_count(empty), 0);

        let mut copy = ptr::null_mut();
        assert_eq!(ul_model_clone(model, &mut copy), UlStatus::Ok);
        let method = CString::new("grail").unwrap();
        let hyper = CString::new(r#"{"eta":0.5,"max_epochs":20}"#).unwrap();
        let mut epochs = 0usize;
        assert_eq!(
            ul_unlearn(
                copy,
                corpus,
                method.as_ptr(),
                mask,
                hyper.as_ptr(),
                &mut epochs
            ),
            UlStatus::Ok
        );
        assert!(epochs >= 1);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(ul_model_save(copy, path.as_ptr()), UlStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ul_model_load(path.as_ptr(), &mut loaded), UlStatus::Ok);
        let mut a = [0 as std::ffi::c_char; 65];
        let mut b = [0 as std::ffi::c_char; 65];
        assert_eq!(
            ul_model_fingerprint(copy, a.as_mut_ptr(), a.len()),
            UlStatus::Ok
        );
        assert_eq!(
            ul_model_fingerprint(loaded, b.as_mut_ptr(), b.len()),
            UlStatus::Ok
        );
        assert_eq!(CStr::from_ptr(a.as_ptr()), CStr::from_ptr(b.as_ptr()));
        assert_eq!(CStr::from_ptr(a.as_ptr()).to_bytes().len(), 64);
        assert_eq!(
            ul_model_fingerprint(copy, a.as_mut_ptr(), 64),
            UlStatus::InvalidArgument
        );

        let cpath = CString::new(dir.path().join("c.jsonl").to_str().unwrap()).unwrap();
        assert_eq!(ul_corpus_save(corpus, cpath.as_ptr()), UlStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(ul_corpus_load(cpath.as_ptr(), &mut reloaded), UlStatus::Ok);
        assert_eq!(ul_corpus_len(reloaded), 8);

        ul_corpus_free(reloaded);
        ul_model_free(loaded);
        ul_model_free(copy);
        ul_mask_free(empty);
        ul_mask_free(mask);
        ul_model_free(model);
        ul_corpus_free(corpus);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut out = 0.0;
        assert_eq!(ul_harmonic_success(90.72, 85.34, &mut out), UlStatus::Ok);
        assert!((out - 87.95).abs() < 0.01);
        assert!(ul_last_error().is_null());
        assert_eq!(
            ul_harmonic_success(-1.0, 3.0, &mut out),
            UlStatus::Validation
        );
        assert!(last_error().contains("non-negative"));
        assert_eq!(
            ul_harmonic_success(1.0, 1.0, ptr::null_mut()),
            UlStatus::NullPointer
        );

        let (c, r) = ([1u32, 2, 3], [1u32, 3]);
        assert_eq!(
            ul_rouge_l(c.as_ptr(), 3, r.as_ptr(), 2, &mut out),
            UlStatus::Ok
        );
        assert!((out - 80.0).abs() < 1e-12);
        assert_eq!(
            ul_rouge_l(c.as_ptr(), 0, r.as_ptr(), 2, &mut out),
            UlStatus::Validation
        );

        let bad = CString::new("{not json").unwrap();
        let mut corpus = ptr::null_mut();
        assert_eq!(
            ul_corpus_generate(bad.as_ptr(), &mut corpus),
            UlStatus::InvalidArgument
        );
        assert!(corpus.is_null());

        let missing = CString::new("/nonexistent/dir/c.jsonl").unwrap();
        assert_eq!(ul_corpus_load(missing.as_ptr(), &mut corpus), UlStatus::Io);
        assert!(last_error().contains("/nonexistent"));

        let corpus = small_corpus();
        let mut model = ptr::null_mut();
        assert_eq!(ul_model_init(corpus, ptr::null(), &mut model), UlStatus::Ok);
        let method = CString::new("grail").unwrap();
        assert_eq!(
            ul_unlearn(
                model,
                corpus,
                method.as_ptr(),
                ptr::null(),
                ptr::null(),
                ptr::null_mut()
            ),
            UlStatus::Validation
        );
        let unknown = CString::new("nope").unwrap();
        assert_eq!(
            ul_unlearn(
                model,
                corpus,
                unknown.as_ptr(),
                ptr::null(),
                ptr::null(),
                ptr::null_mut()
            ),
            UlStatus::Validation
        );
        assert!(last_error().contains("unknown method"));
        assert_eq!(
            ul_evaluate(ptr::null(), corpus, &mut UlReport::default()),
            UlStatus::NullPointer
        );
        ul_model_free(model);
        ul_corpus_free(corpus);
        ul_corpus_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/unlearn_lab.h"
    ))
    .unwrap();
    for name in [
        "ul_last_error",
        "ul_corpus_generate",
        "ul_corpus_load",
        "ul_corpus_save",
        "ul_corpus_len",
        "ul_corpus_free",
        "ul_model_init",
        "ul_model_load",
        "ul_model_save",
        "ul_model_clone",
        "ul_model_num_params",
        "ul_model_fingerprint",
        "ul_model_free",
        "ul_train_vanilla",
        "ul_localize",
        "ul_mask_ablate",
        "ul_mask_frozen_count",
        "ul_mask_free",
        "ul_unlearn",
        "ul_evaluate",
        "ul_harmonic_success",
        "ul_rouge_l",
        "typedef struct UlModel UlModel",
        "UL_STATUS_PANIC = 6",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"unlearn_lab.h\"\nint main(void) { UlReport r; double hs; return ul_harmonic_success(r.privacy.us, 1.0, &hs) == UL_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            std::process::Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
