use super::*;
use crate::data::{prepare, SplitRatio};
use crate::model::{init_model, ModelConfig};
use crate::synthetic::{generate, SynthConfig};

fn arr(v: &[f64]) -> Array {
    Array::new(&[v.len()], v.to_vec()).unwrap()
}

#[test]
fn mae_examples() {
    let (h, y) = (arr(&[1.0, 5.0]), arr(&[2.0, 4.0]));
    assert_eq!(mae_loss(&h, &h).unwrap(), 0.0);
    assert_eq!(mae_loss(&h, &y).unwrap(), 1.0);
    assert_eq!(mae_loss(&h, &y).unwrap(), mae_loss(&y, &h).unwrap());
    assert!(mae_loss(&h, &arr(&[1.0])).is_err());
}

#[test]
fn loss_node_is_in_dataset_units() {
    let scaler = Scaler { mean: 50.0, std: 10.0, tod_min: 0.0, tod_max: 1.0 };
    let mut g = Graph::new();
    let h = g.param(arr(&[0.0, 1.0]));
    let y = g.constant(arr(&[52.0, 59.0]));
    let l = mae_loss_node(&mut g, h, y, &scaler).unwrap();
    assert_eq!(g.value(l).item(), 1.5);
    g.backward(l).unwrap();
    assert_eq!(g.grad(h).unwrap().data(), &[-5.0, 5.0]);
}

fn setup() -> (ModelParams, PreparedData) {
    let synth = SynthConfig { n_sensors: 4, days: 2, noise_std: 0.5, phase_spread: 60.0, ..Default::default() };
    let d = generate(&synth).unwrap();
    let data = prepare(&d, SplitRatio::SPEED, 12, 12).unwrap();
    let cfg = ModelConfig {
        d_hidden: 4,
        d_skip: 8,
        n_layers: 2,
        dilations: vec![4, 8],
        n_heads: 1,
        d_embed: 2,
        ..Default::default()
    };
    (init_model(&cfg, 4, 1).unwrap(), data)
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 32, seed: 3, ..Default::default() }
}

#[test]
fn history_has_one_record_per_epoch_and_is_reproducible() {
    let (p, data) = setup();
    let acfg = AugmentConfig { seed: 1, ..Default::default() };
    let a = train(p.clone(), &data, &quick(), &acfg).unwrap();
    assert_eq!(a.history.len(), 2);
    assert!((a.history.records[1].lr - 0.97e-3).abs() < 1e-18);
    let b = train(p, &data, &quick(), &acfg).unwrap();
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.best, b.best);
    assert_eq!(a.history.best().unwrap().epoch, a.best_epoch);
    assert_eq!(a.history.to_csv().lines().count(), 3);
}

#[test]
fn validation_runs_in_eval_mode_without_augmentation() {
    let (p, data) = setup();
    let mut events = Vec::new();
    train_with_observer(p, &data, &quick(), &AugmentConfig::default(), 1, &mut |e| events.push(e.clone())).unwrap();
    let vals: Vec<&TrainEvent> = events.iter().filter(|e| matches!(e, TrainEvent::Validation { .. })).collect();
    assert_eq!(vals.len(), 2);
    for v in vals {
        assert!(matches!(v, TrainEvent::Validation { mode: NormMode::Eval, augmented: false, .. }));
    }
    assert!(events
        .iter()
        .any(|e| matches!(e, TrainEvent::Batch { mode: NormMode::Train, augmented: true, .. })));
}

#[test]
fn non_finite_parameters_abort_with_last_good_state() {
    let (mut p, data) = setup();
    p.store.get_mut("decoder2.b").unwrap().data_mut()[0] = f64::NAN;
    let err = train(p.clone(), &data, &quick(), &AugmentConfig::disabled()).unwrap_err();
    match err {
        Error::Diverged(d) => {
            assert_eq!((d.epoch, d.batch), (0, 0));
            assert!(d.history.is_empty());
            assert!(d.last_good.store.get("decoder2.b").unwrap().data()[0].is_nan());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn prediction_does_not_depend_on_threads() {
    let (p, data) = setup();
    let graph = GraphInputs::new(&data.adjacency.a_r);
    let one = predict_windows(&p, &graph, &data.val.windows, &data.scaler, 16, 1).unwrap();
    let four = predict_windows(&p, &graph, &data.val.windows, &data.scaler, 16, 4).unwrap();
    assert_eq!(one, four);
    assert_eq!(one.shape(), &[data.val.windows.len(), 12, 4]);
}
