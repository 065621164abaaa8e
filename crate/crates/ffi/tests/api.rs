use std::ffi::{c_char, CStr, CString};
use std::ptr;

use bfreg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; bfreg_last_error_length() + 1];
    unsafe {
        bfreg_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn synthetic(genes: usize) -> *mut BfregKnowledge {
    let mut kb = ptr::null_mut();
    assert_eq!(unsafe { bfreg_knowledge_synthetic(genes, 0.2, 3, &mut kb) }, BfregStatus::Ok);
    kb
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(bfreg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn synthetic_counts() {
    let kb = synthetic(7);
    let (mut genes, mut levels) = (0, 0);
    unsafe {
        assert_eq!(bfreg_knowledge_gene_count(kb, &mut genes), BfregStatus::Ok);
        assert_eq!(bfreg_knowledge_level_count(kb, &mut levels), BfregStatus::Ok);
        bfreg_knowledge_free(kb);
    }
    assert_eq!((genes, levels), (7, 1));
}

#[test]
fn null_arguments_are_reported() {
    let mut n = 0;
    let status = unsafe { bfreg_knowledge_gene_count(ptr::null(), &mut n) };
    assert_eq!(status, BfregStatus::NullPointer);
    assert!(last_error().contains("kb"));
    unsafe {
        bfreg_knowledge_free(ptr::null_mut());
        bfreg_model_free(ptr::null_mut());
    }
}

#[test]
fn missing_manifest_is_io_error() {
    let path = CString::new("/nonexistent/manifest.toml").unwrap();
    let mut kb = ptr::null_mut();
    let status = unsafe { bfreg_knowledge_load(path.as_ptr(), &mut kb) };
    assert_ne!(status, BfregStatus::Ok);
    assert!(kb.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn bad_model_config_is_config_error() {
    let kb = synthetic(5);
    let cfg = CString::new(r#"{"dd": 3}"#).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { bfreg_model_new(kb, cfg.as_ptr(), 0, &mut model) };
    assert_eq!(status, BfregStatus::Config);
    assert!(last_error().contains("dd"));
    unsafe { bfreg_knowledge_free(kb) };
}

#[test]
fn predict_save_load_round_trip() {
    let kb = synthetic(6);
    let cfg = CString::new(r#"{"variant": "enhanced", "alpha": [0.001], "head_output": 2}"#).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(bfreg_model_new(kb, cfg.as_ptr(), 11, &mut model), BfregStatus::Ok, "{}", last_error());
        let mut width = 0;
        assert_eq!(bfreg_model_output_width(model, &mut width), BfregStatus::Ok);
        assert_eq!(width, 2);

        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 6];
        assert_eq!(bfreg_model_predict(model, x.as_ptr(), 3, 6, y.as_mut_ptr(), 6), BfregStatus::Ok, "{}", last_error());
        assert!(y.iter().all(|v| v.is_finite()));

        let mut short = vec![0.0; 5];
        assert_eq!(bfreg_model_predict(model, x.as_ptr(), 3, 6, short.as_mut_ptr(), 5), BfregStatus::Shape);
        assert_eq!(bfreg_model_predict(model, x.as_ptr(), 2, 9, y.as_mut_ptr(), 4), BfregStatus::Shape);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
        assert_eq!(bfreg_model_save(model, path.as_ptr()), BfregStatus::Ok, "{}", last_error());
        let mut loaded = ptr::null_mut();
        assert_eq!(bfreg_model_load(path.as_ptr(), kb, &mut loaded), BfregStatus::Ok, "{}", last_error());
        let mut y2 = vec![0.0; 6];
        assert_eq!(bfreg_model_predict(loaded, x.as_ptr(), 3, 6, y2.as_mut_ptr(), 6), BfregStatus::Ok);
        assert_eq!(y, y2);

        bfreg_model_free(loaded);
        bfreg_model_free(model);
        bfreg_knowledge_free(kb);
    }
}

#[test]
fn run_synth_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = dir.path().join("synth.toml");
    std::fs::write(
        &synth_cfg,
        "task = \"synth\"\nseed = 4\n[synth]\nkind = \"static\"\nsamples = 20\n[synth.spec]\ngenes = 5\nedge_prob = 0.2\n",
    )
    .unwrap();
    let out = dir.path().join("synth");
    let task = CString::new("synth").unwrap();
    let cfg = CString::new(synth_cfg.to_str().unwrap()).unwrap();
    let out_c = CString::new(out.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bfreg_run(task.as_ptr(), cfg.as_ptr(), out_c.as_ptr()) }, BfregStatus::Ok, "{}", last_error());
    assert!(out.join("report.txt").exists());

    let manifest = out.join("knowledge").join("manifest.toml");
    let path = CString::new(manifest.to_str().unwrap()).unwrap();
    let mut kb = ptr::null_mut();
    assert_eq!(unsafe { bfreg_knowledge_load(path.as_ptr(), &mut kb) }, BfregStatus::Ok, "{}", last_error());
    let mut genes = 0;
    unsafe {
        bfreg_knowledge_gene_count(kb, &mut genes);
        bfreg_knowledge_free(kb);
    }
    assert_eq!(genes, 5);
}

#[test]
fn run_rejects_unknown_task() {
    let task = CString::new("nope").unwrap();
    let cfg = CString::new("x.toml").unwrap();
    assert_ne!(unsafe { bfreg_run(task.as_ptr(), cfg.as_ptr(), ptr::null()) }, BfregStatus::Ok);
}
