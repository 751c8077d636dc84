use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use clamp_kit::align::{save_checkpoint, CheckpointSet, ContrastiveConfig, EncoderConfigs};
use clamp_kit::eval::EmbeddingStore;
use clamp_kit_ffi::*;

fn small_checkpoint(dir: &Path) {
    let mut configs = EncoderConfigs::desk();
    for c in [&mut configs.text, &mut configs.symbolic, &mut configs.audio] {
        c.n_layers = 1;
        c.hidden = 16;
        c.n_heads = 2;
        c.out_dim = 8;
    }
    configs.audio.input_dim = 3;
    let ck = CheckpointSet::init(configs, &ContrastiveConfig::default(), 9).unwrap();
    save_checkpoint(&ck, dir).unwrap();
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ck_last_error()) }.to_string_lossy().into_owned()
}

fn load(dir: &Path) -> *mut CkModel {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ck_model_load(path.as_ptr(), &mut model) }, CkStatus::Ok);
    model
}

#[test]
fn embed_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    small_checkpoint(dir.path());
    let model = load(dir.path());
    unsafe {
        assert_eq!(ck_model_out_dim(model), 8);
        let mut out = [0f32; 8];
        let text = CString::new("a calm piano piece").unwrap();
        assert_eq!(ck_embed_text(model, text.as_ptr(), 1, out.as_mut_ptr(), 8), CkStatus::Ok);
        let norm: f32 = out.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);

        let abc = CString::new("X:1\nK:C\nCDEF|GABc|\n").unwrap();
        assert_eq!(ck_embed_abc(model, abc.as_ptr(), 0, out.as_mut_ptr(), 8), CkStatus::Ok);
        let mtf = CString::new("ticks_per_beat 480\nnote_on 0 60 64\n").unwrap();
        assert_eq!(ck_embed_mtf(model, mtf.as_ptr(), 0, out.as_mut_ptr(), 8), CkStatus::Ok);

        let feats = [0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(ck_embed_audio(model, feats.as_ptr(), 2, 3, 1, out.as_mut_ptr(), 8), CkStatus::Ok);
        assert_eq!(
            ck_embed_audio(model, feats.as_ptr(), 3, 2, 1, out.as_mut_ptr(), 8),
            CkStatus::DimensionMismatch
        );
        assert!(!last_error().is_empty());
        assert_eq!(ck_embed_text(model, text.as_ptr(), 1, out.as_mut_ptr(), 4), CkStatus::BufferTooSmall);

        let empty = CString::new("% only a comment\n").unwrap();
        assert_eq!(ck_embed_abc(model, empty.as_ptr(), 0, out.as_mut_ptr(), 8), CkStatus::ParseError);
        ck_model_free(model);
    }
}

#[test]
fn null_and_bad_inputs() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(ck_model_load(ptr::null(), &mut model), CkStatus::NullPointer);
        assert_eq!(ck_model_out_dim(ptr::null()), 0);
        let missing = CString::new("/nonexistent/checkpoint").unwrap();
        assert_eq!(ck_model_load(missing.as_ptr(), &mut model), CkStatus::IoError);
        assert!(model.is_null());
        let bad = [0xffu8, 0];
        assert_eq!(ck_segment_abc(bad.as_ptr().cast(), &mut 0), CkStatus::InvalidUtf8);
        ck_model_free(ptr::null_mut());
        ck_store_free(ptr::null_mut());
    }
}

#[test]
fn loss_and_baseline() {
    unsafe {
        let x = [1f32, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut loss = 0.0;
        assert_eq!(ck_info_nce(x.as_ptr(), x.as_ptr(), 4, 2, 0.07, 1, 0, &mut loss), CkStatus::Ok);
        assert!((loss - 4f64.ln()).abs() < 1e-6);
        let eye = [1f32, 0.0, 0.0, 1.0];
        assert_eq!(ck_info_nce(eye.as_ptr(), eye.as_ptr(), 2, 2, 1.0, 0, 0, &mut loss), CkStatus::Ok);
        assert!((loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-6);
        assert_eq!(ck_info_nce(eye.as_ptr(), eye.as_ptr(), 1, 4, 1.0, 0, 0, &mut loss), CkStatus::InvalidArgument);

        let mut b = 0.0;
        assert_eq!(ck_random_baseline_mrr(2, &mut b), CkStatus::Ok);
        assert_eq!(b, 0.75);
        assert_eq!(ck_random_baseline_mrr(0, &mut b), CkStatus::InvalidArgument);
    }
}

#[test]
fn stores_and_mrr() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..3).map(|i| format!("x{i}")).collect();
    let rows = [vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.2]];
    let p = dir.path().join("a.cme");
    EmbeddingStore::from_rows(ids.clone(), &rows).unwrap().write(&p).unwrap();
    let q = dir.path().join("q.cme");
    EmbeddingStore::from_rows(ids, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
        .unwrap()
        .write(&q)
        .unwrap();
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        let pa = CString::new(p.to_str().unwrap()).unwrap();
        let pq = CString::new(q.to_str().unwrap()).unwrap();
        assert_eq!(ck_store_read(pa.as_ptr(), &mut a), CkStatus::Ok);
        assert_eq!(ck_store_read(pq.as_ptr(), &mut b), CkStatus::Ok);
        assert_eq!((ck_store_len(a), ck_store_dim(a), ck_store_dim(b)), (3, 2, 3));
        let mut m = 0.0;
        assert_eq!(ck_mrr(a, a, 1, &mut m), CkStatus::Ok);
        assert_eq!(m, 1.0);
        assert_eq!(ck_mrr(a, b, 1, &mut m), CkStatus::DimensionMismatch);
        assert!(last_error().starts_with("dimension mismatch"));
        ck_store_free(a);
        ck_store_free(b);
    }
}

#[test]
fn segment_count() {
    let abc = CString::new("X:1\nT:t\nK:C\nCD|EF|\n").unwrap();
    let mut n = 0;
    assert_eq!(unsafe { ck_segment_abc(abc.as_ptr(), &mut n) }, CkStatus::Ok);
    assert_eq!(n, 5);
}
