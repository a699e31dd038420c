use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eegspeech::nn::{
    adam_step, backprop, batchnorm_forward, build_ctc_model, build_regression_model, dense_forward,
    dropout_forward, gru_forward, mse_loss, softmax, tcn_forward, transplant_gru_weights, AdamState,
    BatchNormParams, CausalConv, CtcModelOptions, Dense, DenseParams, Gru, GruParams, Layer, Mode, Model,
    TcnBlockParams, Tensor, Variant, DEFAULT_DILATIONS,
};
use eegspeech::Error;

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn no_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[test]
fn dense_hand_cases() {
    let p = DenseParams {
        w: m(&[&[1.0, 1.0], &[0.0, 1.0]]),
        b: Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap(),
    };
    assert_eq!(dense_forward(&m(&[&[1.0, 2.0]]), &p).unwrap().data(), &[4.0, 2.0]);

    let id = DenseParams {
        w: m(&[&[1.0, 0.0], &[0.0, 1.0]]),
        b: Tensor::zeros(&[2]),
    };
    let x = m(&[&[0.3, -2.0], &[5.0, 1.5]]);
    assert_eq!(dense_forward(&x, &id).unwrap(), x);

    let empty = Tensor::matrix(0, 2, vec![]).unwrap();
    assert_eq!(dense_forward(&empty, &id).unwrap().rows(), 0);
    assert!(matches!(dense_forward(&m(&[&[1.0, 2.0, 3.0]]), &id), Err(Error::Shape(_))));
}

#[test]
fn gru_zero_parameters_halve_the_state() {
    let p = GruParams::zeros(2, 3);
    let h0 = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let x = m(&[&[1.0, 1.0], &[-1.0, 0.0], &[3.0, 2.0], &[0.0, 0.0]]);
    let y = gru_forward(&x, &p, &h0).unwrap();
    for t in 0..4 {
        for k in 0..3 {
            let expect = h0.data()[k] / 2f64.powi(t as i32 + 1);
            assert!((y.row(t)[k] - expect).abs() < 1e-15);
        }
    }
    let zero = gru_forward(&x, &p, &Tensor::zeros(&[3])).unwrap();
    assert!(zero.data().iter().all(|v| *v == 0.0));
    assert!(gru_forward(&m(&[&[1.0]]), &p, &h0).is_err());
}

#[test]
fn tcn_zero_kernels_are_identity_and_hand_kernel() {
    let mut rng = no_rng();
    let mut p = TcnBlockParams::glorot(3, 3, &DEFAULT_DILATIONS, false, &mut rng);
    for c in &mut p.convs {
        *c = CausalConv::zeros(3, 3, c.dilation);
    }
    let x = random_matrix(&mut ChaCha8Rng::seed_from_u64(4), 6, 3);
    assert_eq!(tcn_forward(&x, &p, Mode::Infer, &mut rng).unwrap(), x);

    // Dilation-1 kernel with a zero past tap and unit present tap, plus a
    // zero residual projection: output equals the input.
    let mut p = TcnBlockParams::glorot(2, 2, &[1], false, &mut rng);
    p.convs[0] = CausalConv {
        dilation: 1,
        w_past: Tensor::zeros(&[2, 2]),
        w_now: m(&[&[1.0, 0.0], &[0.0, 1.0]]),
        b: Tensor::zeros(&[2]),
    };
    p.projection = Some(DenseParams::zeros(2, 2));
    let x = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 8.0]]);
    assert_eq!(tcn_forward(&x, &p, Mode::Infer, &mut rng).unwrap(), x);
}

#[test]
fn tcn_is_causal_at_every_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = TcnBlockParams::glorot(3, 4, &DEFAULT_DILATIONS, false, &mut rng);
    let x = random_matrix(&mut rng, 12, 3);
    let base = tcn_forward(&x, &p, Mode::Infer, &mut no_rng()).unwrap();
    for t in 0..12 {
        let mut xp = x.clone();
        xp.data_mut()[t * 3 + 1] += 1.0;
        let y = tcn_forward(&xp, &p, Mode::Infer, &mut no_rng()).unwrap();
        for s in 0..t {
            assert_eq!(y.row(s), base.row(s), "output {s} changed by input {t}");
        }
        assert_ne!(y.row(t), base.row(t));
    }
}

#[test]
fn batchnorm_cases() {
    let x = m(&[&[1.0], &[-1.0], &[1.0], &[-1.0]]);
    let mut p = BatchNormParams::new(1);
    assert!(matches!(batchnorm_forward(&x, &mut p, Mode::Infer), Err(Error::State(_))));
    let y = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-3);
    }
    assert!(p.has_stats);

    p.gamma.fill(0.0);
    p.beta.fill(2.5);
    let y = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
    assert!(y.data().iter().all(|v| *v == 2.5));

    let mut p = BatchNormParams::new(1);
    batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
    let a = batchnorm_forward(&x, &mut p, Mode::Infer).unwrap();
    let b = batchnorm_forward(&x, &mut p, Mode::Infer).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batchnorm_running_statistics_use_momentum() {
    let x = m(&[&[2.0], &[4.0]]);
    let mut p = BatchNormParams::new(1);
    batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
    assert!((p.running_mean.data()[0] - 0.01 * 3.0).abs() < 1e-12);
}

#[test]
fn dropout_cases() {
    let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(dropout_forward(&x, 0.0, Mode::Train, 1).unwrap(), x);
    assert_eq!(dropout_forward(&x, 0.1, Mode::Infer, 1).unwrap(), x);
    assert!(dropout_forward(&x, 1.0, Mode::Train, 1).is_err());

    let ones = Tensor::matrix(1000, 100, vec![1.0; 100_000]).unwrap();
    let y = dropout_forward(&ones, 0.5, Mode::Train, 7).unwrap();
    let mean = y.data().iter().sum::<f64>() / y.len() as f64;
    assert!((mean - 1.0).abs() <= 0.02);
    assert!(y.data().iter().all(|v| *v == 0.0 || *v == 2.0));
}

#[test]
fn softmax_cases() {
    assert_eq!(softmax(&m(&[&[0.0, 0.0]])).data(), &[0.5, 0.5]);
    let big = softmax(&m(&[&[1000.0, 0.0]]));
    assert_eq!(big.data()[0], 1.0);
    assert!(big.data()[1] >= 0.0 && big.data()[1] < 1e-300);
    let a = softmax(&m(&[&[0.1, -0.4, 2.0]]));
    let b = softmax(&m(&[&[10.1, 9.6, 12.0]]));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn mse_cases() {
    let (l, g) = mse_loss(&m(&[&[2.0]]), &m(&[&[0.0]])).unwrap();
    assert_eq!((l, g.data()), (4.0, &[4.0][..]));
    let x = m(&[&[1.0, 2.0]]);
    let (l, g) = mse_loss(&x, &x).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.data().iter().all(|v| *v == 0.0));
    assert!(mse_loss(&x, &m(&[&[1.0]])).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred = random_matrix(&mut rng, 3, 3);
    let truth = random_matrix(&mut rng, 3, 3);
    let (_, g) = mse_loss(&pred, &truth).unwrap();
    for i in 0..9 {
        let mut p = pred.clone();
        let mut q = pred.clone();
        p.data_mut()[i] += 1e-5;
        q.data_mut()[i] -= 1e-5;
        let numeric = (mse_loss(&p, &truth).unwrap().0 - mse_loss(&q, &truth).unwrap().0) / 2e-5;
        assert!((numeric - g.data()[i]).abs() < 1e-8);
    }
}

fn small_stack(rng: &mut ChaCha8Rng) -> Model {
    let mut model = Model::new();
    model.push("g", Layer::Gru(Gru::new(GruParams::glorot(3, 4, rng), 0.0))).unwrap();
    model.push("d", Layer::Dense(Dense::new(DenseParams::glorot(4, 2, rng)))).unwrap();
    model
}

#[test]
fn backprop_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = small_stack(&mut rng);
    assert!(matches!(model.backward(&Tensor::zeros(&[2, 2])), Err(Error::State(_))));

    let x = random_matrix(&mut rng, 4, 3);
    model.forward(&x, Mode::Train, &mut no_rng()).unwrap();
    let g = backprop(&mut model, &Tensor::zeros(&[4, 2])).unwrap();
    assert!(g.params.values().all(|t| t.data().iter().all(|v| *v == 0.0)));

    let up = random_matrix(&mut rng, 4, 2);
    model.forward(&x, Mode::Train, &mut no_rng()).unwrap();
    let unfrozen = backprop(&mut model, &up).unwrap();
    model.set_trainable("g", false).unwrap();
    model.forward(&x, Mode::Train, &mut no_rng()).unwrap();
    let frozen = backprop(&mut model, &up).unwrap();
    assert!(frozen.params.keys().all(|k| k.starts_with("d.")));
    assert_eq!(frozen.params["d.w"], unfrozen.params["d.w"]);
    assert_eq!(frozen.input, unfrozen.input);
}

#[test]
fn adam_hand_cases() {
    let mut state = AdamState::new(0.001);
    let mut params = vec![("theta".to_string(), Tensor::zeros(&[1]))];
    let grads = BTreeMap::from([("theta".to_string(), Tensor::from_vec(&[1], vec![1.0]).unwrap())]);
    adam_step(&mut state, &mut params, &grads).unwrap();
    assert!((params[0].1.data()[0] + 0.001).abs() < 1e-10);
    assert_eq!(state.step_count(), 1);

    let mut fresh = AdamState::default();
    let mut params = vec![("p".to_string(), Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap())];
    let zero = BTreeMap::from([("p".to_string(), Tensor::zeros(&[2]))]);
    adam_step(&mut fresh, &mut params, &zero).unwrap();
    assert_eq!(params[0].1.data(), &[0.5, -1.0]);

    let bad = BTreeMap::from([("p".to_string(), Tensor::zeros(&[3]))]);
    assert!(adam_step(&mut fresh, &mut params, &bad).is_err());
}

#[test]
fn adam_step_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut state = AdamState::new(0.01);
    let mut params = vec![("p".to_string(), random_matrix(&mut rng, 4, 4))];
    for _ in 0..50 {
        let before = params[0].1.clone();
        let g = BTreeMap::from([("p".to_string(), random_matrix(&mut rng, 4, 4))]);
        adam_step(&mut state, &mut params, &g).unwrap();
        for (a, b) in params[0].1.data().iter().zip(before.data()) {
            assert!((a - b).abs() <= 10.0 * 0.01);
        }
    }
}

#[test]
fn regression_model_census_and_determinism() {
    let model = build_regression_model(30, 19, 3).unwrap();
    let gru = model.gru_params("gru128").unwrap();
    assert_eq!(gru.n_params(), 61056);
    assert_eq!(model.layer_names(), ["gru128", "drop0", "gru64", "drop1", "dense"]);
    let again = build_regression_model(30, 19, 3).unwrap();
    assert_eq!(model.to_checkpoint().encode(), again.to_checkpoint().encode());

    let mut model = model;
    let x = random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 7, 30);
    let y = model.forward(&x, Mode::Infer, &mut no_rng()).unwrap();
    assert_eq!(y.shape(), &[7, 19]);
}

#[test]
fn ctc_model_layout() {
    let mut base = build_ctc_model(30, 29, &CtcModelOptions::default()).unwrap();
    assert_eq!(base.layer_names(), ["gru128", "gru64", "tcn32", "dense", "softmax"]);
    let x = random_matrix(&mut ChaCha8Rng::seed_from_u64(2), 5, 30);
    let y = base.forward(&x, Mode::Infer, &mut no_rng()).unwrap();
    for t in 0..5 {
        assert!((y.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let ext = build_ctc_model(
        30,
        29,
        &CtcModelOptions {
            variant: Variant::Extended,
            ..CtcModelOptions::default()
        },
    )
    .unwrap();
    assert!(!ext.is_trainable("donor_gru128").unwrap());
    assert!(!ext.is_trainable("donor_gru64").unwrap());
    assert!(ext.is_trainable("gru128").unwrap());
    assert!(build_ctc_model(30, 1, &CtcModelOptions::default()).is_err());
}

#[test]
fn transplant_copies_by_value() {
    let source = build_regression_model(30, 19, 1).unwrap();
    let target = build_ctc_model(30, 29, &CtcModelOptions::default()).unwrap();
    let tcn_before = target.parameter("tcn32.conv0.w_now").unwrap().clone();
    let mut target = transplant_gru_weights(&source, target).unwrap();
    assert_eq!(target.gru_params("gru128").unwrap(), source.gru_params("gru128").unwrap());
    assert_eq!(target.gru_params("gru64").unwrap(), source.gru_params("gru64").unwrap());
    assert_eq!(target.parameter("tcn32.conv0.w_now").unwrap(), &tcn_before);

    // Equal GRU activations for equal input.
    let x = random_matrix(&mut ChaCha8Rng::seed_from_u64(6), 4, 30);
    let run = |p: &GruParams, x: &Tensor| gru_forward(x, p, &Tensor::zeros(&[p.hidden()])).unwrap();
    let a = run(source.gru_params("gru64").unwrap(), &run(source.gru_params("gru128").unwrap(), &x));
    let b = run(target.gru_params("gru64").unwrap(), &run(target.gru_params("gru128").unwrap(), &x));
    assert_eq!(a, b);

    target.gru_params_mut("gru128").unwrap().b_z.fill(9.0);
    assert!(source.gru_params("gru128").unwrap().b_z.data().iter().all(|v| *v == 0.0));

    let small = build_regression_model(30, 19, 1).unwrap();
    let mut other = Model::new();
    other.push("a", Layer::Gru(Gru::new(GruParams::zeros(30, 64), 0.0))).unwrap();
    other.push("b", Layer::Gru(Gru::new(GruParams::zeros(64, 32), 0.0))).unwrap();
    let err = transplant_gru_weights(&small, other).unwrap_err();
    assert!(err.to_string().contains("gru128"));
}

#[test]
fn model_rejects_bad_layers() {
    let mut model = Model::new();
    model.push("a", Layer::Dense(Dense::new(DenseParams::zeros(3, 4)))).unwrap();
    assert!(model.push("a", Layer::Dense(Dense::new(DenseParams::zeros(4, 4)))).is_err());
    assert!(model.push("b", Layer::Dense(Dense::new(DenseParams::zeros(5, 4)))).is_err());
    assert!(model.push("with space", Layer::softmax()).is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = build_ctc_model(
        6,
        5,
        &CtcModelOptions {
            variant: Variant::Extended,
            batchnorm: true,
            dropout: 0.1,
            donor_dim: 4,
            seed: 3,
        },
    )
    .unwrap();
    let x = random_matrix(&mut rng, 9, 6);
    model.forward(&x, Mode::Train, &mut rng).unwrap();
    let bytes = model.to_checkpoint().encode();
    let restored = Model::from_checkpoint(&eegspeech::io::Checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(restored.to_checkpoint().encode(), bytes);
    assert!(!restored.is_trainable("donor_gru64").unwrap());
    let mut a = model.clone();
    let mut b = restored;
    assert_eq!(
        a.forward(&x, Mode::Infer, &mut no_rng()).unwrap(),
        b.forward(&x, Mode::Infer, &mut no_rng()).unwrap()
    );
}

#[test]
fn inference_is_bit_identical_across_calls() {
    let mut model = build_ctc_model(
        4,
        3,
        &CtcModelOptions {
            batchnorm: true,
            dropout: 0.3,
            ..CtcModelOptions::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 6, 4);
    model.forward(&x, Mode::Train, &mut rng).unwrap();
    let a = model.forward(&x, Mode::Infer, &mut rng).unwrap();
    let b = model.forward(&x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gru_outputs_stay_bounded(seed in any::<u64>(), t in 1usize..8, h0 in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GruParams::glorot(3, 4, &mut rng);
        p.b_h.fill(rng.gen_range(-2.0..2.0));
        let x = Tensor::matrix(t, 3, (0..t * 3).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap();
        let h = Tensor::from_vec(&[4], vec![h0; 4]).unwrap();
        let y = gru_forward(&x, &p, &h).unwrap();
        let bound = h0.abs().max(1.0);
        prop_assert!(y.data().iter().all(|v| v.is_finite() && v.abs() <= bound + 1e-12));
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), t in 1usize..6, v in 1usize..8, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::matrix(t, v, (0..t * v).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap();
        let shifted = Tensor::matrix(t, v, x.data().iter().map(|a| a + shift).collect()).unwrap();
        let (a, b) = (softmax(&x), softmax(&shifted));
        for r in 0..t {
            prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_builds_are_identical(seed in any::<u64>()) {
        let opts = CtcModelOptions { seed, ..CtcModelOptions::default() };
        let a = build_ctc_model(5, 4, &opts).unwrap();
        let b = build_ctc_model(5, 4, &opts).unwrap();
        prop_assert_eq!(a.to_checkpoint().encode(), b.to_checkpoint().encode());
    }
}
