use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, GradCheck};
use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop convolution with explicit zero padding.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, dil: usize, same: bool) -> Tensor<f64> {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, o) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (ekh, ekw) = ((kh - 1) * dil + 1, (kw - 1) * dil + 1);
    let (ho, wo, pt, pl) = if same {
        let ho = (h + stride - 1) / stride;
        let wo = (w + stride - 1) / stride;
        let ph = ((ho - 1) * stride + ekh).saturating_sub(h);
        let pw = ((wo - 1) * stride + ekw).saturating_sub(w);
        (ho, wo, ph / 2, pw / 2)
    } else {
        ((h - ekh) / stride + 1, (w - ekw) / stride + 1, 0, 0)
    };
    let mut out = Tensor::zeros(&[n, ho, wo, o]);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for f in 0..o {
                    let mut s = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky * dil) as i64 - pt as i64;
                            let ix = (ox * stride + kx * dil) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for ci in 0..c {
                                s += x.at(&[b, iy as usize, ix as usize, ci]) * k.at(&[ky, kx, ci, f]);
                            }
                        }
                    }
                    let off = out.offset(&[b, oy, ox, f]);
                    out.data_mut()[off] = s;
                }
            }
        }
    }
    out
}

fn conv_forward(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, dil: usize, pad: Padding) -> Tensor<f64> {
    let mut store = ParamStore::new();
    let w = store.add("w", k.clone());
    let b = store.add("b", Tensor::zeros(&[k.shape()[3]]));
    let layer = Conv2d { weight: w, bias: b, stride, dilation: dil, padding: pad };
    let mut tape = Tape::new(&store);
    let xv = tape.constant(x.clone());
    let y = tape.conv2d(xv, &layer).unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_of_ones_sums_neighbourhood() {
    let x = Tensor::full(&[1, 3, 3, 1], 1.0);
    let k = Tensor::full(&[3, 3, 1, 1], 1.0);
    let y = conv_forward(&x, &k, 1, 1, Padding::Same);
    assert_eq!(y.shape(), &[1, 3, 3, 1]);
    assert_eq!(y.at(&[0, 1, 1, 0]), 9.0);
    assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
}

#[test]
fn conv_impulse_response_is_flipped_kernel() {
    let mut x = Tensor::zeros(&[1, 5, 5, 1]);
    let off = x.offset(&[0, 2, 2, 0]);
    x.data_mut()[off] = 1.0;
    let k = random(&[3, 3, 1, 1], 3);
    let y = conv_forward(&x, &k, 1, 1, Padding::Valid);
    assert_eq!(y.shape(), &[1, 3, 3, 1]);
    for oy in 0..3 {
        for ox in 0..3 {
            assert_eq!(y.at(&[0, oy, ox, 0]), k.at(&[2 - oy, 2 - ox, 0, 0]));
        }
    }
}

#[test]
fn conv_matches_nested_loop_reference() {
    let x = random(&[1, 7, 7, 4], 11);
    let k = random(&[3, 3, 4, 5], 12);
    for (stride, dil, pad) in [
        (1, 2, Padding::Same),
        (1, 2, Padding::Valid),
        (2, 1, Padding::Same),
        (1, 1, Padding::Valid),
        (2, 3, Padding::Same),
    ] {
        let got = conv_forward(&x, &k, stride, dil, pad);
        let want = naive_conv(&x, &k, stride, dil, pad == Padding::Same);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6, "stride {stride} dil {dil}: {a} vs {b}");
        }
    }
}

#[test]
fn dilated_conv_equals_zero_inflated_kernel() {
    let x = random(&[2, 9, 9, 3], 21);
    let k = random(&[3, 3, 3, 2], 22);
    for dil in [2, 3] {
        let size = 2 * dil + 1;
        let mut inflated = Tensor::zeros(&[size, size, 3, 2]);
        for ky in 0..3 {
            for kx in 0..3 {
                for c in 0..3 {
                    for o in 0..2 {
                        let off = inflated.offset(&[ky * dil, kx * dil, c, o]);
                        inflated.data_mut()[off] = k.at(&[ky, kx, c, o]);
                    }
                }
            }
        }
        let a = conv_forward(&x, &k, 1, dil, Padding::Same);
        let b = conv_forward(&x, &inflated, 1, 1, Padding::Same);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch_and_oversized_kernel() {
    let mut store = ParamStore::<f32>::new();
    let w = store.add("w", Tensor::zeros(&[3, 3, 2, 1]));
    let b = store.add("b", Tensor::zeros(&[1]));
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::zeros(&[1, 4, 4, 3]));
    let layer = Conv2d { weight: w, bias: b, stride: 1, dilation: 1, padding: Padding::Same };
    let err = tape.conv2d(x, &layer).unwrap_err();
    assert!(err.to_string().contains("input channels"), "{err}");
    let x2 = tape.constant(Tensor::zeros(&[1, 4, 4, 2]));
    let wide = Conv2d { dilation: 2, padding: Padding::Valid, ..layer };
    assert!(tape.conv2d(x2, &wide).is_err());
}

fn dense_forward(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>) -> Result<Tensor<f64>, TensorError> {
    let mut store = ParamStore::new();
    let layer = Dense { weight: store.add("w", w), bias: store.add("b", b) };
    let mut tape = Tape::new(&store);
    let xv = tape.constant(x);
    let y = tape.dense(xv, &layer)?;
    Ok(tape.value(y).clone())
}

#[test]
fn dense_identity_and_bias() {
    let x = random(&[4, 3], 1);
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    assert_eq!(dense_forward(x.clone(), eye, Tensor::zeros(&[3])).unwrap(), x);
    let bias = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
    let y = dense_forward(x, Tensor::zeros(&[3, 2]), bias).unwrap();
    for row in y.rows() {
        assert_eq!(row, &[0.5, -1.5]);
    }
}

#[test]
fn dense_matches_manual_product() {
    let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 1.5, 0.25, -0.75]).unwrap();
    let w = Tensor::new(vec![3, 2], vec![0.5, 1.0, -2.0, 0.1, 0.7, -0.4]).unwrap();
    let b = Tensor::new(vec![2], vec![0.01, -0.02]).unwrap();
    let y = dense_forward(x, w, b).unwrap();
    // row 0: 0.15 + 2.4 + 1.4 + 0.01 = 3.96 ; 0.3 - 0.12 - 0.8 - 0.02 = -0.64
    // row 1: 0.75 - 0.5 - 0.525 + 0.01 = -0.265 ; 1.5 + 0.025 + 0.3 - 0.02 = 1.805
    let want = [3.96, -0.64, -0.265, 1.805];
    for (a, b) in y.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn dense_rejects_non_finite_parameters() {
    let w = Tensor::new(vec![1, 1], vec![f64::NAN]).unwrap();
    let err = dense_forward(Tensor::zeros(&[1, 1]), w, Tensor::zeros(&[1])).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite(_)));
}

fn activate(x: Vec<f64>, kind: Activation) -> Result<Vec<f64>, TensorError> {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let n = x.len();
    let v = tape.constant(Tensor::new(vec![1, n], x).unwrap());
    let y = tape.activation(v, kind)?;
    Ok(tape.value(y).data().to_vec())
}

#[test]
fn activation_examples() {
    assert_eq!(activate(vec![-1.0, 2.0], Activation::LeakyRelu(0.1)).unwrap(), vec![-0.1, 2.0]);
    assert_eq!(activate(vec![-1.0, 2.0], Activation::Relu).unwrap(), vec![0.0, 2.0]);
    assert_eq!(activate(vec![0.3; 4], Activation::Softmax).unwrap(), vec![0.25; 4]);
    let s = activate(vec![1e4, 0.0], Activation::Softmax).unwrap();
    assert_eq!(s[0], 1.0);
    assert!(s.iter().all(|v| v.is_finite()));
    assert!(matches!(activate(vec![f64::NAN], Activation::Relu), Err(TensorError::NonFinite(_))));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(row in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let s = activate(row, Activation::Softmax).unwrap();
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn l2_normalize_is_idempotent(row in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let n = row.len();
        let x = tape.constant(Tensor::new(vec![1, n], row).unwrap());
        let once = tape.l2_normalize(x);
        let twice = tape.l2_normalize(once);
        for (a, b) in tape.value(once).data().iter().zip(tape.value(twice).data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

fn bn_layer(store: &mut ParamStore<f64>, ch: usize) -> BatchNorm {
    BatchNorm::init(store, "bn", ch)
}

#[test]
fn batchnorm_zero_variance_gives_shift() {
    let mut store = ParamStore::new();
    let bn = bn_layer(&mut store, 2);
    store.get_mut(bn.shift).data_mut().copy_from_slice(&[0.7, -0.3]);
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::full(&[4, 2], 3.0));
    let y = tape.batchnorm(x, &bn, Mode::Train).unwrap();
    for row in tape.value(y).rows() {
        assert_eq!(row, &[0.7, -0.3]);
    }
}

#[test]
fn batchnorm_standardized_input_passes_through() {
    let mut store = ParamStore::new();
    let bn = bn_layer(&mut store, 1);
    let x = Tensor::new(vec![4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
    let mut tape = Tape::new(&store);
    let xv = tape.constant(x.clone());
    let y = tape.batchnorm(xv, &bn, Mode::Train).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_output_statistics() {
    let mut store = ParamStore::new();
    let bn = bn_layer(&mut store, 3);
    let x = random(&[8, 5, 5, 3], 4).map(|v| 4.0 * v + 2.0);
    let mut tape = Tape::new(&store);
    let xv = tape.constant(x);
    let y = tape.batchnorm(xv, &bn, Mode::Train).unwrap();
    let yv = tape.value(y);
    let count = yv.len() / 3;
    for c in 0..3 {
        let vals: Vec<f64> = yv.rows().map(|r| r[c]).collect();
        let mean = vals.iter().sum::<f64>() / count as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        assert!(mean.abs() < 1e-4);
        // epsilon slightly shrinks the variance below 1
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn batchnorm_modes_and_errors() {
    let mut store = ParamStore::new();
    let mut bn = bn_layer(&mut store, 1);
    {
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(&[2, 1]));
        assert_eq!(tape.batchnorm(x, &bn, Mode::Infer).unwrap_err(), TensorError::MissingStatistics);
        let one = tape.constant(Tensor::zeros(&[1, 1]));
        assert_eq!(tape.batchnorm(one, &bn, Mode::Train).unwrap_err(), TensorError::BatchTooSmall(1));
    }
    let stats = {
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
        tape.batchnorm(x, &bn, Mode::Train).unwrap();
        tape.take_batch_stats()
    };
    assert_eq!(stats.len(), 1);
    bn.absorb(&stats[0].mean, &stats[0].var).unwrap();
    assert_eq!(bn.stats.as_ref().unwrap().mean, vec![2.0]);
    bn.absorb(&[4.0], &[1.0]).unwrap();
    let s = bn.stats.as_ref().unwrap();
    assert!((s.mean[0] - (0.99 * 2.0 + 0.01 * 4.0)).abs() < 1e-6);
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::new(vec![1, 1], vec![s.mean[0]]).unwrap());
    let y = tape.batchnorm(x, &bn, Mode::Infer).unwrap();
    assert!(tape.value(y).item().abs() < 1e-12);
}

#[test]
fn global_average_pool_examples() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let c = tape.constant(Tensor::full(&[2, 3, 3, 4], 1.5));
    let g = tape.global_avg_pool(c).unwrap();
    assert!(tape.value(g).data().iter().all(|&v| v == 1.5));
    let m = tape.constant(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let g = tape.global_avg_pool(m).unwrap();
    assert_eq!(tape.value(g).data(), &[2.5]);

    let x = random(&[3, 4, 5, 6], 9);
    let r = tape.constant(x.clone());
    let g = tape.global_avg_pool(r).unwrap();
    for b in 0..3 {
        for ch in 0..6 {
            let mut flat = 0.0;
            for i in 0..20 {
                flat += x.data()[b * 120 + i * 6 + ch];
            }
            assert!((tape.value(g).at(&[b, ch]) - flat / 20.0).abs() < 1e-6);
        }
    }
}

#[test]
fn l2_normalize_examples() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::new(vec![3, 2], vec![3.0, 4.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
    let y = tape.l2_normalize(x);
    assert_eq!(tape.value(y).data(), &[0.6, 0.8, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(tape.zero_norm_rows(), 1);
    let r = tape.constant(random(&[5, 7], 2));
    let y = tape.l2_normalize(r);
    for row in tape.value(y).rows() {
        assert!((row.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn dropout_modes() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::full(&[100, 100], 1.0));
    assert_eq!(tape.dropout(x, 0.0, Mode::Train, 1).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.9, Mode::Infer, 1).unwrap(), x);
    assert!(tape.dropout(x, 1.0, Mode::Train, 1).is_err());
    let y = tape.dropout(x, 0.5, Mode::Train, 42).unwrap();
    let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e4;
    // binomial: sigma = sqrt(0.25 / 1e4) = 0.005
    assert!((kept - 0.5).abs() < 3.0 * 0.005, "kept fraction {kept}");
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn inference_is_bit_identical() {
    let x = random(&[2, 6, 6, 3], 5).cast::<f32>();
    let k = random(&[3, 3, 3, 4], 6).cast::<f32>();
    let mut store = ParamStore::<f32>::new();
    let layer = Conv2d {
        weight: store.add("w", k),
        bias: store.add("b", Tensor::zeros(&[4])),
        stride: 1,
        dilation: 2,
        padding: Padding::Same,
    };
    let run = || {
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let y = tape.conv2d(xv, &layer).unwrap();
        let y = tape.leaky_relu(y, LEAKY_SLOPE).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn backward_trivial_cases() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.variable(random(&[2, 3], 1));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.var(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut tape = Tape::new(&store);
    let x = tape.variable(Tensor::scalar(3.0));
    let sq = tape.mul(x, x).unwrap();
    let g = tape.backward(sq).unwrap();
    assert_eq!(g.var(x).unwrap().item(), 6.0);
}

#[test]
fn backward_rejects_foreign_and_non_scalar() {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.variable(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    let mut other = Tape::new(&store);
    let a = other.variable(Tensor::zeros(&[1]));
    let b = other.variable(Tensor::zeros(&[1]));
    let c = other.add(a, b).unwrap();
    let short = Tape::new(&store);
    assert!(matches!(short.backward(c), Err(TensorError::Unrecorded(_))));
}

// ---- finite-difference checks, one per layer ---------------------------------

const TOL: f64 = 1e-3;

fn projection(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let n = tape.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    tape.dot_const(y, &c)
}

fn assert_grad<F>(store: &ParamStore<f64>, name: &str, build: F)
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, TensorError>,
{
    let report = check(store, &GradCheck::default(), build).unwrap();
    assert!(report.passes(TOL), "{name}: max rel error {:.3e} at {}", report.max_rel_error, report.worst);
}

#[test]
fn gradcheck_conv_variants() {
    for (stride, dil, pad) in [(1, 1, Padding::Same), (1, 2, Padding::Same), (2, 1, Padding::Valid), (1, 3, Padding::Same)] {
        let mut store = ParamStore::new();
        let x = store.add("x", random(&[2, 7, 7, 3], 31));
        let layer = Conv2d {
            weight: store.add("w", random(&[3, 3, 3, 4], 32)),
            bias: store.add("b", random(&[4], 33)),
            stride,
            dilation: dil,
            padding: pad,
        };
        assert_grad(&store, "conv2d", |t| {
            let xv = t.param(x);
            let y = t.conv2d(xv, &layer)?;
            projection(t, y, 1)
        });
    }
}

#[test]
fn gradcheck_dense_and_activations() {
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[4, 6], 41));
    let layer = Dense { weight: store.add("w", random(&[6, 5], 42)), bias: store.add("b", random(&[5], 43)) };
    assert_grad(&store, "dense+leaky", |t| {
        let xv = t.param(x);
        let y = t.dense(xv, &layer)?;
        let y = t.leaky_relu(y, LEAKY_SLOPE)?;
        projection(t, y, 2)
    });
    assert_grad(&store, "dense+relu+softmax", |t| {
        let xv = t.param(x);
        let y = t.dense(xv, &layer)?;
        let y = t.relu(y)?;
        let y = t.softmax(y)?;
        projection(t, y, 3)
    });
}

#[test]
fn gradcheck_batchnorm_both_modes() {
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 4, 4, 5], 51));
    let mut bn = BatchNorm::init(&mut store, "bn", 5);
    store.get_mut(bn.scale).data_mut().copy_from_slice(&[1.2, 0.8, -0.5, 1.0, 2.0]);
    store.get_mut(bn.shift).data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.0, 0.5]);
    assert_grad(&store, "batchnorm train", |t| {
        let xv = t.param(x);
        let y = t.batchnorm(xv, &bn, Mode::Train)?;
        projection(t, y, 4)
    });
    bn.absorb(&[0.1, 0.2, -0.1, 0.0, 0.3], &[0.5, 1.5, 0.9, 1.0, 2.0]).unwrap();
    assert_grad(&store, "batchnorm infer", |t| {
        let xv = t.param(x);
        let y = t.batchnorm(xv, &bn, Mode::Infer)?;
        projection(t, y, 5)
    });
}

#[test]
fn gradcheck_pool_normalize_dropout() {
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[2, 3, 3, 6], 61));
    assert_grad(&store, "gap+l2", |t| {
        let xv = t.param(x);
        let y = t.global_avg_pool(xv)?;
        let y = t.l2_normalize(y);
        projection(t, y, 6)
    });
    assert_grad(&store, "dropout", |t| {
        let xv = t.param(x);
        let y = t.dropout(xv, 0.5, Mode::Train, 99)?;
        projection(t, y, 7)
    });
}

#[test]
fn gradcheck_structural_ops() {
    let mut store = ParamStore::new();
    let a = store.add("a", random(&[4, 3], 71));
    let b = store.add("b", random(&[4, 3], 72));
    let maps = store.add("maps", random(&[2, 3, 3, 4], 73));
    let extra = store.add("extra", random(&[2, 4], 74));
    let mask = random(&[2, 3, 3, 4], 75);
    assert_grad(&store, "row_dot/concat/slice/gather/column", |t| {
        let (av, bv) = (t.param(a), t.param(b));
        let d = t.row_dot(av, bv)?;
        let cat = t.concat_cols(av, bv)?;
        let s = t.slice_rows(cat, 1, 2)?;
        let g = t.gather_rows(cat, &[3, 0, 3])?;
        let col = t.column(g, 4)?;
        let p = t.mul(av, bv)?;
        let l1 = projection(t, d, 8)?;
        let l2 = projection(t, s, 9)?;
        let l3 = projection(t, col, 10)?;
        let l4 = t.sum_squares(p);
        let l = t.add(l1, l2)?;
        let l = t.add(l, l3)?;
        let l4 = t.scale(l4, 0.3);
        t.add(l, l4)
    });
    assert_grad(&store, "channels_to_rows + masks", |t| {
        let m = t.param(maps);
        let m = t.mul_const(m, &mask)?;
        let m = t.add_const(m, &mask)?;
        let e = t.param(extra);
        let rows = t.channels_to_rows(m, e)?;
        let p = t.softmax(rows)?;
        projection(t, p, 11)
    });
}

#[test]
fn gradcheck_margin_bce() {
    let mut store = ParamStore::new();
    let logits = store.add("logits", random(&[3, 5], 81).map(|v| 1.5 * v));
    let truth = Tensor::from_fn(&[3, 5], |i| if i % 5 == i / 5 { 1.0 } else { 0.0 });
    assert_grad(&store, "softmax+margin_bce", |t| {
        let l = t.param(logits);
        let p = t.softmax(l)?;
        t.margin_bce(p, &truth, 0.01)
    });
}
