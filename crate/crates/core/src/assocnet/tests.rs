use super::*;
use crate::config::AssocNetConfig;
use crate::tensor::gradcheck::{self, GradCheck};
use crate::tensor::{Checkpoint, Mode, Tape, TensorError};

fn tiny() -> AssocNetConfig {
    AssocNetConfig { n_max: 3, filters: [2, 3, 2], dilations: [1, 2, 1], spurious_hidden: 4, lambda: 1e-2, ..AssocNetConfig::default() }
}

fn samples() -> Vec<AssocSample> {
    vec![
        AssocSample { targets: 2, entries: vec![(0, 12, 0.9), (0, 3, -0.2), (1, 7, 0.4), (1, 12, 0.1)], truth: vec![12, 25] },
        AssocSample { targets: 1, entries: vec![(0, 0, 0.5), (0, 24, 0.7)], truth: vec![24] },
        AssocSample { targets: 3, entries: vec![(2, 6, 0.3)], truth: vec![25, 25, 6] },
    ]
}

fn warm(net: &mut AssocNet) {
    let s = samples();
    let refs: Vec<&AssocSample> = s.iter().collect();
    let input = net.input(&refs).unwrap();
    let stats = {
        let mut tape = Tape::new(&net.store);
        net.forward(&mut tape, &input, Mode::Train).unwrap();
        tape.take_batch_stats()
    };
    net.layers.absorb(&stats).unwrap();
}

#[test]
fn loss_gradients_match_finite_differences() {
    let net = AssocNet::<f64>::new(&tiny(), 5, 4);
    let s = samples();
    let refs: Vec<&AssocSample> = s.iter().collect();
    let input = net.input(&refs).unwrap();
    let report = gradcheck::check(&net.store, &GradCheck { probes: 5, ..GradCheck::default() }, |tape| {
        let p = net.forward(tape, &input, Mode::Train)?;
        net.loss(tape, p, &input, &refs).map_err(|e| TensorError::Invalid(e.to_string()))
    })
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn masked_cells_and_empty_slots() {
    let mut net = AssocNet::<f32>::new(&tiny(), 5, 4);
    warm(&mut net);
    let s = samples();
    let refs: Vec<&AssocSample> = s.iter().collect();
    let maps = net.predict(&refs).unwrap();
    assert_eq!(maps.iter().map(|m| m.len()).collect::<Vec<_>>(), vec![2, 1, 3]);
    for (sample, m) in s.iter().zip(&maps) {
        for (slot, map) in m.iter().enumerate() {
            let total: f32 = map.cells.iter().sum::<f32>() + map.spurious;
            assert!((total - 1.0).abs() < 1e-5);
            for (k, &p) in map.cells.iter().enumerate() {
                let occupied = sample.entries.iter().any(|&(s, c, _)| s as usize == slot && c as usize == k);
                if !occupied {
                    assert_eq!(p, 0.0, "unoccupied cell {k} has mass");
                }
            }
        }
    }
    // slots without any occupied cell put everything on spurious
    assert_eq!(maps[2][0].spurious, 1.0);
    assert_eq!(maps[2][0].argmax(), 25);
}

#[test]
fn dummy_slots_do_not_touch_the_loss() {
    // the loss only reads real rows, so it is unchanged by how many dummy
    // slots follow them
    let mut a = tiny();
    a.lambda = 0.0;
    let net = AssocNet::<f64>::new(&a, 5, 9);
    let s = samples();
    let one: Vec<&AssocSample> = vec![&s[1]];
    let input = net.input(&one).unwrap();
    assert_eq!(input.real_rows, vec![0]);
    let mut tape = Tape::new(&net.store);
    let p = net.forward(&mut tape, &input, Mode::Train);
    assert!(p.is_err(), "train mode needs a batch of at least two");
    let p = {
        let mut net2 = net.clone();
        let two: Vec<&AssocSample> = vec![&s[1], &s[0]];
        let i2 = net2.input(&two).unwrap();
        let stats = {
            let mut t = Tape::new(&net2.store);
            net2.forward(&mut t, &i2, Mode::Train).unwrap();
            t.take_batch_stats()
        };
        net2.layers.absorb(&stats).unwrap();
        let mut t = Tape::new(&net2.store);
        let p = net2.forward(&mut t, &input, Mode::Infer).unwrap();
        let l = net2.loss(&mut t, p, &input, &one).unwrap();
        t.value(l).item()
    };
    assert!(p.is_finite() && p > 0.0);
}

#[test]
fn capacity_and_sample_errors() {
    let net = AssocNet::<f32>::new(&tiny(), 5, 1);
    let big = AssocSample { targets: 4, entries: vec![], truth: vec![25; 4] };
    assert!(matches!(net.input(&[&big]), Err(AssocNetError::Capacity(4, 3))));
    let bad = AssocSample { targets: 1, entries: vec![(1, 0, 0.1)], truth: vec![25] };
    assert!(matches!(net.input(&[&bad]), Err(AssocNetError::Sample(_))));
    let s = samples();
    assert!(matches!(net.predict(&[&s[0]]), Err(AssocNetError::Untrained)));
    let empty = AssocSample { targets: 0, entries: vec![], truth: vec![] };
    assert_eq!(net.predict(&[&empty]).unwrap(), vec![Vec::<AssociationMap>::new()]);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut net = AssocNet::<f32>::new(&tiny(), 5, 2);
    warm(&mut net);
    net.epochs = 2;
    let bytes = net.to_checkpoint(serde_json::json!({"cost": "simnet"})).to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.meta["extra"]["cost"], "simnet");
    let back = AssocNet::from_checkpoint(&ck).unwrap();
    assert_eq!(back.epochs, 2);
    let s = samples();
    let refs: Vec<&AssocSample> = s.iter().collect();
    assert_eq!(net.predict(&refs).unwrap(), back.predict(&refs).unwrap());
}
