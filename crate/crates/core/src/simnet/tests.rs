use super::*;
use crate::config::{AppearanceConfig, GridConfig, NoiseConfig, RunConfig, ScenarioConfig, SimNetConfig};
use crate::data::{generate_scenario, synth_appearance};
use crate::geometry::BoundingBox3D;
use crate::tensor::gradcheck::{self, GradCheck};
use crate::tensor::{Mode, Tape, Tensor};

fn tiny_cfg() -> SimNetConfig {
    SimNetConfig { feature_dim: 4, bbox_filters: 6, appearance_filters: 5, ..SimNetConfig::default() }
}

fn tiny_shape() -> AppearanceConfig {
    AppearanceConfig { height: 3, width: 3, channels: 2 }
}

fn objects(n: usize, shape: &AppearanceConfig) -> (Vec<BoundingBox3D>, Vec<Tensor<f32>>) {
    let boxes = (0..n)
        .map(|k| BoundingBox3D::new([k as f64 * 1.7 - 3.0, 10.0 + k as f64 * 2.3, -0.9], [4.0, 1.8, 1.5], 0.3 * k as f64))
        .collect();
    let apps = (0..n).map(|k| synth_appearance(k as u64 % 3, 0.3, k as u64, shape)).collect();
    (boxes, apps)
}

fn refs(v: &[Tensor<f32>]) -> Vec<&Tensor<f32>> {
    v.iter().collect()
}

#[test]
fn loss_gradients_match_finite_differences() {
    let shape = tiny_shape();
    let mut net = SimNet::<f64>::new(&tiny_cfg(), &shape, 3);
    // nonzero biases keep fully dropped rows away from the zero-norm kink
    let ids: Vec<_> = net.store.ids().collect();
    for id in ids {
        if net.store.name(id).ends_with("bias") {
            for (k, v) in net.store.get_mut(id).data_mut().iter_mut().enumerate() {
                *v = 0.3 * ((k % 5) as f64 - 2.0) + 0.1;
            }
        }
    }
    let (boxes, apps) = objects(8, &shape);
    let batch = net.batch(&boxes, &refs(&apps)).unwrap();
    let labels = [1i8, -1, 1, -1];
    // the cost weights are constants of the loss, so freeze them at the base point
    let weights = {
        let mut tape = Tape::new(&net.store);
        let br = net.forward(&mut tape, &batch, Mode::Train, 11).unwrap();
        let y = pair_scores(&mut tape, &br, 4).unwrap();
        simnet_loss(&mut tape, y, &labels, 2.0, 1e-3).unwrap().1
    };
    assert!(weights.cost.iter().all(|&c| c > 0.0));
    let report = gradcheck::check(&net.store, &GradCheck { probes: 6, ..GradCheck::default() }, |tape| {
        let br = net.forward(tape, &batch, Mode::Train, 11)?;
        let y = pair_scores(tape, &br, 4)?;
        weighted_loss(tape, y, &labels, &weights)
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn perfect_predictions_have_zero_loss() {
    let w = loss_weights(&[1.0, -1.0, 1.0], &[1, -1, 1], 2.0, 1e-3).unwrap();
    assert!(w.cost.iter().all(|&c| c == 0.0));
    let store = crate::tensor::ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let y = tape.variable(Tensor::new(vec![3], vec![1.0, -1.0, 1.0]).unwrap());
    let (l, _) = simnet_loss(&mut tape, y, &[1, -1, 1], 2.0, 1e-3).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
}

#[test]
fn collapsed_predictor_loss() {
    // ŷ = 0 everywhere: w_cost = 0.25 and 1 - yŷ = 1 for every pair.
    let labels = [1i8, 1, -1, -1, -1, -1];
    let store = crate::tensor::ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let y = tape.variable(Tensor::zeros(&[6]));
    let (l, w) = simnet_loss(&mut tape, y, &labels, 2.0, 1e-3).unwrap();
    let expect: f64 = w.skew.iter().map(|s| s * 0.25).sum::<f64>() / 2.0;
    assert!((tape.value(l).item() - expect).abs() < 1e-12);
    assert!((expect - 0.75).abs() < 1e-12);
    let g = tape.backward(l).unwrap();
    // the cost weight is a constant: dL/dŷ_i = -w_i·y_i / N⁺
    let gy = g.var(y).unwrap().data();
    assert!((gy[0] + 1.5 * 0.25 / 2.0).abs() < 1e-12);
    assert!((gy[2] - 0.75 * 0.25 / 2.0).abs() < 1e-12);
}

#[test]
fn skew_weights_balance_classes() {
    let mut labels = vec![1i8; 25];
    labels.extend(vec![-1i8; 75]);
    let w = loss_weights(&vec![0.0; 100], &labels, 2.0, 1e-3).unwrap();
    assert!((w.skew[0] - 2.0).abs() < 1e-12);
    assert!((w.skew[99] - 100.0 / 150.0).abs() < 1e-12);
    let pos: f64 = w.skew[..25].iter().sum();
    let neg: f64 = w.skew[25..].iter().sum();
    assert!((pos - neg).abs() < 1e-9);
}

#[test]
fn cost_weight_cutoff_and_bad_batches() {
    let w = loss_weights(&[0.95, 0.5], &[1, 1], 2.0, 1e-3).unwrap();
    assert_eq!(w.cost[0], 0.0); // (0.025)^2 < 1e-3
    assert!((w.cost[1] - 0.0625).abs() < 1e-12);
    assert!(matches!(loss_weights(&[0.1], &[-1], 2.0, 1e-3), Err(SimNetError::Batch(_))));
    assert!(matches!(loss_weights(&[0.1], &[0], 2.0, 1e-3), Err(SimNetError::Batch(_))));
    assert!(matches!(loss_weights(&[0.1, 0.2], &[1], 2.0, 1e-3), Err(SimNetError::Batch(_))));
}

fn warmed(cfg: &SimNetConfig, shape: &AppearanceConfig) -> SimNet {
    let mut net = SimNet::new(cfg, shape, 5);
    let (boxes, apps) = objects(10, shape);
    let batch = net.batch(&boxes, &refs(&apps)).unwrap();
    let stats = {
        let mut tape = Tape::new(&net.store);
        net.forward(&mut tape, &batch, Mode::Train, 1).unwrap();
        tape.take_batch_stats()
    };
    net.layers.absorb(&stats).unwrap();
    net
}

#[test]
fn embeddings_are_unit_and_weights_sum_to_one() {
    let shape = tiny_shape();
    let net = warmed(&tiny_cfg(), &shape);
    let (boxes, apps) = objects(6, &shape);
    let e = net.embed(&boxes, &refs(&apps)).unwrap();
    assert_eq!(e.len(), 6);
    for i in 0..6 {
        let nb: f32 = e.bbox_row(i).iter().map(|v| v * v).sum();
        let na: f32 = e.appearance_row(i).iter().map(|v| v * v).sum();
        assert!((nb - 1.0).abs() < 1e-5 && (na - 1.0).abs() < 1e-5);
        let (wb, wa) = e.omega(i);
        assert!((wb + wa - 1.0).abs() < 1e-6 && wb >= 0.0 && wa >= 0.0);
        for j in 0..6 {
            let s = e.similarity(i, &e, j);
            assert!((-1.0 - 1e-5..=1.0 + 1e-5).contains(&s));
        }
        assert!((e.similarity(i, &e, i) - 1.0).abs() < 1e-5);
    }
}

#[test]
fn embedding_errors() {
    let shape = tiny_shape();
    let cold = SimNet::<f32>::new(&tiny_cfg(), &shape, 1);
    let (boxes, apps) = objects(2, &shape);
    assert!(matches!(cold.embed(&boxes, &refs(&apps)), Err(SimNetError::Untrained)));
    let net = warmed(&tiny_cfg(), &shape);
    assert!(net.embed(&[], &[]).unwrap().is_empty());
    let wrong = Tensor::zeros(&[2, 2, 2]);
    assert!(matches!(net.embed(&boxes[..1], &[&wrong]), Err(SimNetError::AppearanceShape { .. })));
    assert!(matches!(net.embed(&boxes, &refs(&apps[..1])), Err(SimNetError::Count(2, 1))));
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let shape = tiny_shape();
    let mut net = warmed(&tiny_cfg(), &shape);
    net.epochs = 4;
    net.threshold = 0.375;
    let bytes = net.to_checkpoint(serde_json::json!({"note": 1})).to_bytes();
    let back = SimNet::from_checkpoint(&crate::tensor::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.epochs, 4);
    assert_eq!(back.threshold, 0.375);
    let (boxes, apps) = objects(5, &shape);
    assert_eq!(net.embed(&boxes, &refs(&apps)).unwrap(), back.embed(&boxes, &refs(&apps)).unwrap());
    let mut other = crate::tensor::Checkpoint::new("assocnet", serde_json::json!({}));
    other.push("x", Tensor::zeros(&[1]));
    assert!(SimNet::from_checkpoint(&other).is_err());
}

#[test]
fn selective_map_matches_dense_convolution() {
    let shape = tiny_shape();
    let net = warmed(&tiny_cfg(), &shape);
    let geom = GridGeometry::new(&GridConfig::default());
    let (boxes, apps) = objects(9, &shape);
    let e = net.embed(&boxes, &refs(&apps)).unwrap();
    let occ = Occupancy::from_boxes(&geom, boxes.iter().map(|b| (*b, 1.0)));
    for i in [0, 4] {
        let sparse = build_global_map(&geom, &occ, |j| e.similarity(i, &e, j)).dense();
        let dense = dense_reference_map(&geom, &occ, &e, i, &e).unwrap();
        assert_eq!(sparse.len(), dense.len());
        let worst = sparse.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 1e-6, "max difference {worst}");
    }
}

#[test]
fn short_training_runs_are_deterministic() {
    let scen: Vec<_> = (0..2)
        .map(|k| generate_scenario(&ScenarioConfig { frames: 12, ..ScenarioConfig::default() }, &GridConfig::default(), "t", k))
        .collect();
    let cfg = RunConfig {
        appearance: tiny_shape(),
        simnet: SimNetConfig { epochs: 2, train_pairs: 64, validation_pairs: 32, batch_pairs: 32, ..tiny_cfg() },
        noise: NoiseConfig::default(),
        ..RunConfig::default()
    };
    let mut log_a = Vec::new();
    let (a, ra) = train_simnet(&cfg, &scen, None, &mut log_a).unwrap();
    let mut log_b = Vec::new();
    let (b, _) = train_simnet(&cfg, &scen, None, &mut log_b).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a.to_checkpoint(serde_json::json!({})).to_bytes(), b.to_checkpoint(serde_json::json!({})).to_bytes());
    let lines: Vec<serde_json::Value> =
        String::from_utf8(log_a).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), ra.history.len());
    assert!(lines.iter().all(|l| l["train_loss"].as_f64().unwrap().is_finite()));
    // resuming continues the epoch count
    let (c, rc) = train_simnet(&cfg, &scen, Some(a.clone()), &mut Vec::new()).unwrap();
    assert_eq!(rc.history[0].epoch, a.epochs);
    assert!(c.epochs > a.epochs);
}

#[test]
fn threshold_sweep_matches_exhaustive_search() {
    use proptest::prelude::*;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strat = proptest::collection::vec((-20i32..20, any::<bool>()), 1..40);
    runner
        .run(&strat, |v| {
            let scores: Vec<f64> = v.iter().map(|&(s, _)| s as f64 / 20.0).collect();
            let labels: Vec<i8> = v.iter().map(|&(_, p)| if p { 1 } else { -1 }).collect();
            let (t, acc) = sweep_threshold(&scores, &labels);
            prop_assert!((accuracy_at(&scores, &labels, t) - acc).abs() < 1e-12);
            // candidates: below all scores and every half step between grid values
            let best = (-41..=41).map(|k| accuracy_at(&scores, &labels, k as f64 / 40.0 + 1e-9)).fold(0.0, f64::max);
            prop_assert!((acc - best).abs() < 1e-12, "sweep {acc} exhaustive {best}");
            Ok(())
        })
        .unwrap();
}

#[test]
fn threshold_sweep_separable_and_empty() {
    let (t, acc) = sweep_threshold(&[0.9, 0.8, 0.3, 0.1], &[1, 1, -1, -1]);
    assert_eq!(acc, 1.0);
    assert!((t - 0.55).abs() < 1e-12);
    assert_eq!(sweep_threshold(&[], &[]), (0.0, 0.0));
    let (_, acc) = sweep_threshold(&[0.5, 0.5], &[1, -1]);
    assert_eq!(acc, 0.5);
}
