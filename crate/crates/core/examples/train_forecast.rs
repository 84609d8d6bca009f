//! Trains a small model on a synthetic network, saves the best checkpoint,
//! reloads it and forecasts the hour after the last observation.

use gswan::augment::AugmentConfig;
use gswan::cli::forecast_input;
use gswan::data::{prepare, SplitRatio};
use gswan::evaluation::{horizon_report, stack_targets};
use gswan::model::{init_model, predict, GraphInputs, ModelConfig, ModelParams};
use gswan::synthetic::{generate, SynthConfig};
use gswan::training::{predict_windows, train_with_observer, TrainConfig, TrainEvent};

fn main() -> gswan::Result<()> {
    let d = generate(&SynthConfig {
        n_sensors: 6,
        days: 4,
        noise_std: 0.5,
        phase_spread: 60.0,
        gain_min: 0.3,
        gain_max: 0.6,
        seed: 2,
        ..Default::default()
    })?;
    let data = prepare(&d, SplitRatio::SPEED, 12, 12)?;
    let cfg = ModelConfig { d_hidden: 8, d_skip: 16, n_layers: 2, dilations: vec![4, 8], n_heads: 2, d_embed: 4, ..Default::default() };
    let init = init_model(&cfg, d.n_sensors(), 0)?;
    println!("{} parameters", init.param_count());

    let tcfg = TrainConfig { epochs: 15, lr0: 3e-3, ..Default::default() };
    let out = train_with_observer(init, &data, &tcfg, &AugmentConfig::default(), 1, &mut |e| {
        if let TrainEvent::Epoch(r) = e {
            println!("epoch {:>2}  train {:.3}  val MAE {:.3}  lr {:.2e}", r.epoch, r.train_loss, r.val.mae, r.lr);
        }
    })?;
    println!("best epoch {}", out.best_epoch);

    let path = std::env::temp_dir().join("gswan_example_best.json");
    out.best.save(&path, Some(&data.scaler))?;
    let (params, scaler) = ModelParams::load(&path)?;
    let scaler = scaler.expect("saved with scaler");

    let graph = GraphInputs::new(&data.adjacency.a_r);
    let pred = predict_windows(&params, &graph, &data.test.windows, &scaler, 64, 1)?;
    let report = horizon_report(&stack_targets(&data.test.windows)?, &pred, d.metric_kind)?;
    println!("test MAE {:.3}", report.average().mae);

    let x = forecast_input(&d, &scaler, cfg.input_len)?;
    let h = predict(&params, &graph, &x)?;
    let step = d.timestamps[1] - d.timestamps[0];
    let t_last = *d.timestamps.last().unwrap();
    for f in [2, 5, 11] {
        let row: Vec<String> = (0..d.n_sensors()).map(|s| format!("{:5.1}", scaler.inverse_metric(h.get(&[0, f, s])))).collect();
        println!("t+{:>2} min ({}): {}", (f + 1) as i64 * step / 60, t_last + (f as i64 + 1) * step, row.join(" "));
    }
    Ok(())
}
