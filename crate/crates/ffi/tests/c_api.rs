use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use rugnn::coarsen::grid_hierarchy;
use rugnn::eval::{rollout, SurrogateStepper};
use rugnn::net::{HiddenInit, ModelConfig, Variant};
use rugnn::oracle::{export_sample, load_sample, simulate_forming, DomeParams, OracleConfig};
use rugnn::pipeline::FeatureOptions;
use rugnn::train::{Checkpoint, Strategy, TrainConfig, Trainer};
use rugnn_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    checkpoint: CString,
    sample: CString,
}

fn fixture() -> Fixture {
    let cfg = OracleConfig {
        nx: 5,
        ny: 5,
        intervals: 4,
        ..OracleConfig::default()
    };
    let s = simulate_forming(&cfg, DomeParams::new(80.0, 14.0).unwrap(), 1, "s0").unwrap().sample;
    let h = grid_hierarchy(5, 5, &s.blank.positions, 2, 2.0).unwrap();
    let model = ModelConfig {
        variant: Variant::Rugnn,
        widths: vec![4, 4],
        layers: [1, 1, 1],
        global_width: 4,
        node_features: 6,
        contact: true,
        hidden_init: HiddenInit::Zero,
        decoder_layer_norm: false,
    };
    let train = TrainConfig {
        epochs: 2,
        strategy: Strategy::TeacherForcing,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model, h, FeatureOptions::default(), train, std::slice::from_ref(&s), &[], "d").unwrap();
    t.run(|_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("model.bin");
    t.checkpoint().write(&ck).unwrap();
    let sd = dir.path().join("s0");
    export_sample(&s, &sd).unwrap();
    Fixture {
        checkpoint: cstr(&ck),
        sample: cstr(&sd),
        _dir: dir,
    }
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = rugnn_last_error();
    assert!(!p.is_null());
    // SAFETY: the library returns a NUL-terminated thread-local string.
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn rollout_through_the_c_abi_matches_the_library() {
    let f = fixture();
    let mut model = ptr::null_mut();
    let mut sample = ptr::null_mut();
    // SAFETY: valid C strings and out-pointers; handles freed once below.
    unsafe {
        assert_eq!(rugnn_model_load(f.checkpoint.as_ptr(), &mut model), RugnnStatus::Ok);
        assert_eq!(rugnn_sample_load(f.sample.as_ptr(), &mut sample), RugnnStatus::Ok);
        let (mut n, mut t, mut mn) = (0usize, 0usize, 0usize);
        assert_eq!(rugnn_sample_dims(sample, &mut n, &mut t), RugnnStatus::Ok);
        assert_eq!(rugnn_model_n_nodes(model, &mut mn), RugnnStatus::Ok);
        assert_eq!((n, t, mn), (25, 4, 25));

        let mut pos = vec![0.0; (t + 1) * n * 3];
        let mut mee = vec![0.0; t];
        let st = rugnn_rollout(model, sample, pos.as_mut_ptr(), pos.len(), mee.as_mut_ptr(), mee.len());
        assert_eq!(st, RugnnStatus::Ok);

        let surrogate = Checkpoint::read(Path::new(f.checkpoint.to_str().unwrap())).unwrap().surrogate().unwrap();
        let s = load_sample(Path::new(f.sample.to_str().unwrap())).unwrap();
        let ctx = surrogate.context(&s).unwrap();
        let r = rollout(&mut SurrogateStepper::new(&surrogate), &ctx).unwrap();
        let flat: Vec<f64> = r.positions.iter().flat_map(|a| a.data().iter().map(|v| *v as f64)).collect();
        assert_eq!(pos, flat);
        let want: Vec<f64> = r.mee.iter().map(|v| *v as f64).collect();
        assert_eq!(mee, want);

        // Null buffers skip output without failing.
        assert_eq!(rugnn_rollout(model, sample, ptr::null_mut(), 0, ptr::null_mut(), 0), RugnnStatus::Ok);

        rugnn_model_free(model);
        rugnn_sample_free(sample);
    }
}

#[test]
fn short_buffers_are_rejected() {
    let f = fixture();
    let mut model = ptr::null_mut();
    let mut sample = ptr::null_mut();
    // SAFETY: valid C strings, out-pointers and buffer lengths.
    unsafe {
        assert_eq!(rugnn_model_load(f.checkpoint.as_ptr(), &mut model), RugnnStatus::Ok);
        assert_eq!(rugnn_sample_load(f.sample.as_ptr(), &mut sample), RugnnStatus::Ok);
        let mut pos = vec![7.0; 10];
        let st = rugnn_rollout(model, sample, pos.as_mut_ptr(), pos.len(), ptr::null_mut(), 0);
        assert_eq!(st, RugnnStatus::BufferTooSmall);
        assert!(last_error().contains("375 needed"));
        assert!(pos.iter().all(|v| *v == 7.0));
        let mut mee = [0.0; 3];
        let st = rugnn_rollout(model, sample, ptr::null_mut(), 0, mee.as_mut_ptr(), mee.len());
        assert_eq!(st, RugnnStatus::BufferTooSmall);
        rugnn_model_free(model);
        rugnn_sample_free(sample);
    }
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut model = ptr::null_mut();
    let mut sample = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.bin").unwrap();
    // SAFETY: null and valid pointers only; nothing is dereferenced on failure.
    unsafe {
        assert_eq!(rugnn_model_load(ptr::null(), &mut model), RugnnStatus::NullPointer);
        assert_eq!(last_error(), "path is null");
        assert_eq!(rugnn_model_load(missing.as_ptr(), ptr::null_mut()), RugnnStatus::NullPointer);
        assert_eq!(rugnn_model_load(missing.as_ptr(), &mut model), RugnnStatus::DataError);
        assert!(last_error().contains("/nonexistent/model.bin"));
        assert!(model.is_null());
        assert_eq!(rugnn_sample_load(missing.as_ptr(), &mut sample), RugnnStatus::DataError);
        let bad = [0xffu8, 0];
        assert_eq!(rugnn_sample_load(bad.as_ptr().cast(), &mut sample), RugnnStatus::InvalidString);
        let mut n = 0usize;
        assert_eq!(rugnn_model_n_nodes(ptr::null(), &mut n), RugnnStatus::NullPointer);
        assert_eq!(
            rugnn_rollout(ptr::null(), ptr::null(), ptr::null_mut(), 0, ptr::null_mut(), 0),
            RugnnStatus::NullPointer
        );
        rugnn_model_free(ptr::null_mut());
        rugnn_sample_free(ptr::null_mut());
    }
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.bin");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    let mut model = ptr::null_mut();
    // SAFETY: valid C string and out-pointer.
    let st = unsafe { rugnn_model_load(cstr(&p).as_ptr(), &mut model) };
    assert_eq!(st, RugnnStatus::DataError);
    assert!(model.is_null());
}

#[test]
fn version_matches_the_package() {
    // SAFETY: static NUL-terminated string.
    let v = unsafe { CStr::from_ptr(rugnn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rugnn.h")).unwrap();
    for name in [
        "RUGNN_H",
        "typedef struct RugnnModel RugnnModel;",
        "RUGNN_STATUS_BUFFER_TOO_SMALL = 5",
        "rugnn_model_load(",
        "rugnn_sample_load(",
        "rugnn_sample_dims(",
        "rugnn_rollout(",
        "rugnn_last_error(",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let root = env!("CARGO_MANIFEST_DIR");
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{root}/include"))
        .arg(format!("{root}/tests/smoke.c"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
