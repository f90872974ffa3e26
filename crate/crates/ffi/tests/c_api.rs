//! Drives the exported C functions end to end from Rust.

use std::ffi::{CStr, CString};
use std::ptr;

use splat4d::harness::SyntheticSceneSpec;
use splat4d_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(splat4d_last_error()) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/splat4d.h")).unwrap();
    for name in [
        "splat4d_last_error",
        "splat4d_version",
        "splat4d_set_load",
        "splat4d_set_save",
        "splat4d_set_counts",
        "splat4d_set_free",
        "splat4d_dataset_load",
        "splat4d_dataset_synth",
        "splat4d_dataset_save",
        "splat4d_dataset_shape",
        "splat4d_dataset_free",
        "splat4d_render",
        "splat4d_train",
        "splat4d_evaluate",
        "SPLAT4D_STATUS_VALIDATION",
        "typedef struct Splat4dSet Splat4dSet",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    assert!(header.starts_with("#ifndef SPLAT4D_H"));
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(splat4d_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn synth_train_render_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = cstr(&serde_json::to_string(&SyntheticSceneSpec::movers(24, 24, 6, 1)).unwrap());
    let mut ds: *mut Splat4dDataset = ptr::null_mut();
    unsafe {
        assert_eq!(splat4d_dataset_synth(spec.as_ptr(), &mut ds), Splat4dStatus::Ok, "{}", last_error());
        let (mut w, mut h, mut t) = (0usize, 0usize, 0usize);
        assert_eq!(splat4d_dataset_shape(ds, &mut w, &mut h, &mut t), Splat4dStatus::Ok);
        assert_eq!((w, h, t), (24, 24, 6));

        let dir = cstr(tmp.path().join("ds").to_str().unwrap());
        assert_eq!(splat4d_dataset_save(ds, dir.as_ptr()), Splat4dStatus::Ok, "{}", last_error());
        let mut reloaded: *mut Splat4dDataset = ptr::null_mut();
        assert_eq!(splat4d_dataset_load(dir.as_ptr(), &mut reloaded), Splat4dStatus::Ok, "{}", last_error());

        let cfg = cstr(
            r#"{"iters_total": 12, "iters_static_warmup": 4, "iters_rigid_warmup": 4, "transition_check_every": 4,
                "K": 2, "static_init_frames": 2, "checkpoint_every": 0}"#,
        );
        let out_dir = cstr(tmp.path().join("run").to_str().unwrap());
        let mut set: *mut Splat4dSet = ptr::null_mut();
        assert_eq!(splat4d_train(reloaded, cfg.as_ptr(), out_dir.as_ptr(), &mut set), Splat4dStatus::Ok, "{}", last_error());
        assert!(tmp.path().join("run/log.jsonl").exists());
        assert!(tmp.path().join("run/final.rigs").exists());

        let (mut ns, mut nf) = (0usize, 0usize);
        assert_eq!(splat4d_set_counts(set, &mut ns, ptr::null_mut(), ptr::null_mut(), &mut nf), Splat4dStatus::Ok);
        assert!(ns > 0);
        assert_eq!(nf, 6);

        let mut rgb = vec![f64::NAN; 24 * 24 * 3];
        assert_eq!(splat4d_render(set, ds, 2, rgb.as_mut_ptr(), rgb.len()), Splat4dStatus::Ok, "{}", last_error());
        assert!(rgb.iter().all(|v| v.is_finite()));

        let frames = [1usize, 3];
        let (mut psnr, mut ssim) = (0.0, 0.0);
        assert_eq!(splat4d_evaluate(set, ds, frames.as_ptr(), 2, &mut psnr, &mut ssim), Splat4dStatus::Ok);
        assert!(psnr > 0.0 && ssim > -1.0 && ssim <= 1.0);

        let ckpt = cstr(tmp.path().join("copy.rigs").to_str().unwrap());
        assert_eq!(splat4d_set_save(set, ckpt.as_ptr()), Splat4dStatus::Ok);
        let mut loaded: *mut Splat4dSet = ptr::null_mut();
        assert_eq!(splat4d_set_load(ckpt.as_ptr(), &mut loaded), Splat4dStatus::Ok);
        let mut again = vec![0.0; rgb.len()];
        assert_eq!(splat4d_render(loaded, ds, 2, again.as_mut_ptr(), again.len()), Splat4dStatus::Ok);
        // checkpoints hold f32 parameters
        let worst = rgb.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");

        splat4d_set_free(loaded);
        splat4d_set_free(set);
        splat4d_dataset_free(reloaded);
        splat4d_dataset_free(ds);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let tmp = tempfile::tempdir().unwrap();
    unsafe {
        let mut set: *mut Splat4dSet = ptr::null_mut();
        assert_eq!(splat4d_set_load(ptr::null(), &mut set), Splat4dStatus::InvalidArgument);
        assert!(last_error().contains("null"));

        let missing = cstr(tmp.path().join("nope.rigs").to_str().unwrap());
        assert_eq!(splat4d_set_load(missing.as_ptr(), &mut set), Splat4dStatus::Io);
        assert!(!last_error().is_empty());
        assert!(set.is_null());

        let junk = tmp.path().join("junk.rigs");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = cstr(junk.to_str().unwrap());
        assert_eq!(splat4d_set_load(junk.as_ptr(), &mut set), Splat4dStatus::Validation);

        let mut ds: *mut Splat4dDataset = ptr::null_mut();
        let bad = cstr(r#"{"width": 1, "height": 1, "frames": 1}"#);
        assert_eq!(splat4d_dataset_synth(bad.as_ptr(), &mut ds), Splat4dStatus::Validation);
        let unknown = cstr(r#"{"width": 8, "height": 8, "frames": 4, "bogus": 1}"#);
        assert_eq!(splat4d_dataset_synth(unknown.as_ptr(), &mut ds), Splat4dStatus::Validation);
        assert!(last_error().contains("bogus"));

        let spec = cstr(&serde_json::to_string(&SyntheticSceneSpec::static_world(8, 8, 3, 2)).unwrap());
        assert_eq!(splat4d_dataset_synth(spec.as_ptr(), &mut ds), Splat4dStatus::Ok);
        let bad_cfg = cstr(r#"{"iters_total": 0}"#);
        assert_eq!(splat4d_train(ds, bad_cfg.as_ptr(), ptr::null(), &mut set), Splat4dStatus::Validation);
        let mut tiny = [0.0; 3];
        assert_eq!(splat4d_render(ptr::null(), ds, 0, tiny.as_mut_ptr(), 3), Splat4dStatus::InvalidArgument);
        assert_eq!(splat4d_evaluate(ptr::null(), ds, ptr::null(), 0, ptr::null_mut(), ptr::null_mut()), Splat4dStatus::InvalidArgument);
        splat4d_dataset_free(ds);
        splat4d_dataset_free(ptr::null_mut());
        splat4d_set_free(ptr::null_mut());
    }
}
