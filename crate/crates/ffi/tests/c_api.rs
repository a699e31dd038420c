use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use eegspeech::nn::{build_regression_model, Model};
use eegspeech_ffi::*;

fn last_error() -> String {
    let p = es_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c_strings(items: &[&str]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = items.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs = owned.iter().map(|s| s.as_ptr()).collect();
    (owned, ptrs)
}

#[test]
fn version_and_alphabet() {
    let v = unsafe { CStr::from_ptr(es_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert_eq!(es_alphabet_symbols(), 29);
}

#[test]
fn null_pointers_are_reported() {
    let mut out = 0.0;
    let status = unsafe { es_wer(ptr::null(), ptr::null(), 1, &mut out) };
    assert_eq!(status, EsStatus::NullPointer);
    assert!(last_error().contains("references"));
    let status = unsafe { es_filter_gain_db(ptr::null(), 10.0, &mut out) };
    assert_eq!(status, EsStatus::NullPointer);
}

#[test]
fn success_clears_last_error() {
    let mut out = 0.0;
    assert_eq!(unsafe { es_wer(ptr::null(), ptr::null(), 1, &mut out) }, EsStatus::NullPointer);
    let (_r, refs) = c_strings(&["a b"]);
    let (_h, hyps) = c_strings(&["a b"]);
    assert_eq!(unsafe { es_wer(refs.as_ptr(), hyps.as_ptr(), 1, &mut out) }, EsStatus::Ok);
    assert!(es_last_error().is_null());
}

#[test]
fn wer_hand_case_and_undefined_metric() {
    let (_r, refs) = c_strings(&["the cat sat"]);
    let (_h, hyps) = c_strings(&["the dog sat down"]);
    let mut out = 0.0;
    assert_eq!(unsafe { es_wer(refs.as_ptr(), hyps.as_ptr(), 1, &mut out) }, EsStatus::Ok);
    assert!((out - 200.0 / 3.0).abs() < 1e-12);

    let (_e, empty) = c_strings(&[""]);
    assert_eq!(unsafe { es_wer(empty.as_ptr(), hyps.as_ptr(), 1, &mut out) }, EsStatus::UndefinedMetric);
}

#[test]
fn ctc_loss_single_frame() {
    let lp = [0.3f64.ln(), 0.7f64.ln()];
    let label = [0usize];
    let mut loss = 0.0;
    let mut grad = [0.0; 2];
    let status = unsafe { es_ctc_loss(lp.as_ptr(), 1, 2, label.as_ptr(), 1, 1, &mut loss, grad.as_mut_ptr()) };
    assert_eq!(status, EsStatus::Ok);
    assert!((loss + 0.3f64.ln()).abs() < 1e-12);
    assert!((grad[0] + 0.7).abs() < 1e-12);
    assert!((grad[1] - 0.7).abs() < 1e-12);

    let long = [0usize, 0];
    let status = unsafe { es_ctc_loss(lp.as_ptr(), 1, 2, long.as_ptr(), 2, 1, &mut loss, ptr::null_mut()) };
    assert_eq!(status, EsStatus::Ok);
    assert_eq!(loss, f64::INFINITY);
}

#[test]
fn ctc_loss_shape_errors() {
    let lp = [0.0f64; 4];
    let label = [5usize];
    let mut loss = 0.0;
    let status = unsafe { es_ctc_loss(lp.as_ptr(), 2, 2, label.as_ptr(), 1, 1, &mut loss, ptr::null_mut()) };
    assert_ne!(status, EsStatus::Ok);
    assert!(!last_error().is_empty());
}

fn peaked_log_probs(path: &[usize], symbols: usize) -> Vec<f64> {
    let mut lp = Vec::new();
    for &s in path {
        for j in 0..symbols {
            lp.push(if j == s { 0.9f64.ln() } else { (0.1 / (symbols - 1) as f64).ln() });
        }
    }
    lp
}

#[test]
fn ctc_decode_and_buffer_size() {
    let symbols = es_alphabet_symbols();
    let blank = symbols - 1;
    // a=0, b=1, space=26 in the default alphabet.
    let lp = peaked_log_probs(&[0, blank, 1, 1], symbols);
    let mut buf = [0 as c_char; 16];
    let mut written = 0usize;
    let status = unsafe {
        es_ctc_decode(lp.as_ptr(), 4, symbols, 8, ptr::null(), 0.0, buf.as_mut_ptr(), buf.len(), &mut written)
    };
    assert_eq!(status, EsStatus::Ok);
    assert_eq!(written, 2);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "ab");

    let mut small = [0 as c_char; 2];
    let status = unsafe {
        es_ctc_decode(lp.as_ptr(), 4, symbols, 8, ptr::null(), 0.0, small.as_mut_ptr(), small.len(), &mut written)
    };
    assert_eq!(status, EsStatus::BufferTooSmall);
    assert_eq!(written, 2);
}

#[test]
fn language_model_roundtrip() {
    let (_s, sentences) = c_strings(&["hello world", "help me"]);
    let mut lm = ptr::null_mut();
    assert_eq!(unsafe { es_lm_train(sentences.as_ptr(), 2, 3, 1.0, &mut lm) }, EsStatus::Ok);
    let ctx = CString::new("hel").unwrap();
    let mut a = 0.0;
    assert_eq!(unsafe { es_lm_logprob(lm, ctx.as_ptr(), 'l' as u32, &mut a) }, EsStatus::Ok);
    assert!(a < 0.0 && a.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("lm.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { es_lm_save(lm, path.as_ptr()) }, EsStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { es_lm_load(path.as_ptr(), &mut loaded) }, EsStatus::Ok);
    let mut b = 0.0;
    assert_eq!(unsafe { es_lm_logprob(loaded, ctx.as_ptr(), 'l' as u32, &mut b) }, EsStatus::Ok);
    assert_eq!(a.to_bits(), b.to_bits());

    let mut c = 0.0;
    assert_ne!(unsafe { es_lm_logprob(lm, ctx.as_ptr(), 'Z' as u32, &mut c) }, EsStatus::Ok);
    unsafe {
        es_lm_free(lm);
        es_lm_free(loaded);
        es_lm_free(ptr::null_mut());
    }
}

#[test]
fn lm_load_missing_file() {
    let path = CString::new("/nonexistent/dir/lm.txt").unwrap();
    let mut lm = ptr::null_mut();
    let status = unsafe { es_lm_load(path.as_ptr(), &mut lm) };
    assert_ne!(status, EsStatus::Ok);
    assert!(lm.is_null());
}

#[test]
fn lm_rejects_bad_order() {
    let (_s, sentences) = c_strings(&["abc"]);
    let mut lm = ptr::null_mut();
    assert_eq!(unsafe { es_lm_train(sentences.as_ptr(), 1, 0, 1.0, &mut lm) }, EsStatus::InvalidArgument);
}

#[test]
fn kpca_fit_transform_and_variance() {
    let x: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { es_kpca_fit(x.as_ptr(), 10, 3, 2, 0.5, 1.0, &mut k) }, EsStatus::Ok);
    let mut n = 0usize;
    assert_eq!(unsafe { es_kpca_n_components(k, &mut n) }, EsStatus::Ok);
    assert_eq!(n, 2);

    let mut out = vec![0.0; 20];
    assert_eq!(unsafe { es_kpca_transform(k, x.as_ptr(), 10, 3, out.as_mut_ptr(), out.len()) }, EsStatus::Ok);
    // Training projections are centered.
    for c in 0..2 {
        let mean: f64 = (0..10).map(|r| out[r * 2 + c]).sum::<f64>() / 10.0;
        assert!(mean.abs() < 1e-9);
    }
    assert_eq!(
        unsafe { es_kpca_transform(k, x.as_ptr(), 10, 3, out.as_mut_ptr(), 5) },
        EsStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { es_kpca_transform(k, x.as_ptr(), 10, 2, out.as_mut_ptr(), out.len()) },
        EsStatus::InvalidArgument
    );

    let mut ev = vec![0.0; 10];
    let mut written = 0usize;
    assert_eq!(unsafe { es_kpca_explained_variance(k, ev.as_mut_ptr(), ev.len(), &mut written) }, EsStatus::Ok);
    assert!(written >= 2);
    assert!(ev[..written].windows(2).all(|w| w[1] >= w[0]));
    assert!((ev[written - 1] - 1.0).abs() < 1e-12);
    unsafe { es_kpca_free(k) };
}

#[test]
fn filters_match_design_targets() {
    let mut notch = ptr::null_mut();
    assert_eq!(unsafe { es_filter_notch(60.0, 30.0, 1000.0, &mut notch) }, EsStatus::Ok);
    let mut g = 0.0;
    assert_eq!(unsafe { es_filter_gain_db(notch, 60.0, &mut g) }, EsStatus::Ok);
    assert!(g <= -30.0);
    assert_eq!(unsafe { es_filter_gain_db(notch, 30.0, &mut g) }, EsStatus::Ok);
    assert!(g.abs() <= 1.0);

    let mut band = ptr::null_mut();
    assert_eq!(unsafe { es_filter_bandpass(0.1, 70.0, 4, 1000.0, &mut band) }, EsStatus::Ok);
    assert_eq!(unsafe { es_filter_gain_db(band, 200.0, &mut g) }, EsStatus::Ok);
    assert!(g <= -15.0);

    let input: Vec<f64> = (0..400).map(|i| (i as f64 * 0.3).sin()).collect();
    let mut output = vec![0.0; 400];
    assert_eq!(unsafe { es_filter_apply(band, input.as_ptr(), 400, output.as_mut_ptr()) }, EsStatus::Ok);
    assert!(output.iter().all(|v| v.is_finite()));

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { es_filter_bandpass(70.0, 0.1, 4, 1000.0, &mut bad) }, EsStatus::InvalidArgument);
    assert!(bad.is_null());
    unsafe {
        es_filter_free(notch);
        es_filter_free(band);
    }
}

#[test]
fn window_stats_of_constant_window() {
    let w = [2.0; 8];
    let mut out = [0.0; 5];
    assert_eq!(unsafe { es_window_stats(w.as_ptr(), 8, 100.0, out.as_mut_ptr()) }, EsStatus::Ok);
    assert!((out[0] - 2.0).abs() < 1e-12);
    assert_eq!(out[1], 0.0);
    assert!((out[2] - 2.0).abs() < 1e-12);
}

#[test]
fn model_load_dims_and_forward() {
    let model = build_regression_model(4, 3, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { es_model_load(cpath.as_ptr(), &mut m) }, EsStatus::Ok);
    let (mut d_in, mut d_out) = (0usize, 0usize);
    assert_eq!(unsafe { es_model_dims(m, &mut d_in, &mut d_out) }, EsStatus::Ok);
    assert_eq!((d_in, d_out), (4, 3));

    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).cos()).collect();
    let mut y = vec![0.0; 15];
    assert_eq!(unsafe { es_model_forward(m, x.as_ptr(), 5, 4, y.as_mut_ptr(), y.len()) }, EsStatus::Ok);

    let mut reference: Model = Model::from_checkpoint(&eegspeech::io::Checkpoint::load(&path).unwrap()).unwrap();
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let expect = reference
        .forward(
            &eegspeech::nn::Tensor::matrix(5, 4, x.clone()).unwrap(),
            eegspeech::nn::Mode::Infer,
            &mut rng,
        )
        .unwrap();
    assert_eq!(expect.data(), &y[..]);

    assert_eq!(
        unsafe { es_model_forward(m, x.as_ptr(), 5, 4, y.as_mut_ptr(), 3) },
        EsStatus::BufferTooSmall
    );
    assert_ne!(unsafe { es_model_forward(m, x.as_ptr(), 4, 5, y.as_mut_ptr(), y.len()) }, EsStatus::Ok);
    unsafe { es_model_free(m) };
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/eegspeech.h");
    for name in [
        "es_last_error",
        "es_version",
        "es_lm_train",
        "es_kpca_fit",
        "es_filter_notch",
        "es_model_forward",
        "es_ctc_loss",
        "es_ctc_decode",
        "es_wer",
        "es_window_stats",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    assert!(header.contains("ES_STATUS_BUFFER_TOO_SMALL = 11"));
}
