use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;

use super::config::{EvalSplit, RunConfig};
use super::{AnalyzeArgs, CheckpointArgs, Cli, Command, EvaluateArgs, GenerateArgs, TrainArgs};
use crate::array::Array;
use crate::autodiff::Graph;
use crate::data::{
    load_dataset, make_windows, prepare, summarize, write_dataset, Direction, MetricKind, PreparedData, PreparedSplit,
    Scaler, SplitRatio, TrafficDataset, Window, METRIC, TIME_OF_DAY,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    adjacency_similarity, export_matrix, export_pair_association, export_scatter, horizon_report, metric_inputs,
    persistence_baseline, probe_embeddings, render_table, stack_targets, HistoricalAverage, MetricsReport,
};
use crate::model::{adaptive_adjacency, init_model, predict, Ablation, GraphInputs, ModelParams};
use crate::synthetic::generate;
use crate::training::{predict_windows, train_with_observer, TrainEvent};

pub(super) fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.common.out {
        cfg.out = Some(o);
    }
    if let Some(t) = cli.common.threads {
        cfg.threads = t;
    }
    match cli.command {
        Command::Generate(a) => {
            cfg.command = Some("generate".into());
            cmd_generate(cfg, a)
        }
        Command::Inspect(a) => {
            cfg.command = Some("inspect".into());
            override_path(&mut cfg.dataset, a.data);
            cmd_inspect(cfg)
        }
        Command::Train(a) => {
            cfg.command = Some("train".into());
            cmd_train(cfg, a)
        }
        Command::Evaluate(a) => {
            cfg.command = Some("evaluate".into());
            cmd_evaluate(cfg, a)
        }
        Command::Forecast(a) => {
            cfg.command = Some("forecast".into());
            apply_inputs(&mut cfg, a);
            cmd_forecast(cfg)
        }
        Command::Analyze(a) => {
            cfg.command = Some("analyze".into());
            cmd_analyze(cfg, a)
        }
    }
}

fn override_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn apply_inputs(cfg: &mut RunConfig, a: CheckpointArgs) {
    override_path(&mut cfg.checkpoint, a.checkpoint);
    override_path(&mut cfg.dataset, a.data);
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.require_out()?.to_path_buf();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn split_ratio(cfg: &RunConfig, d: &TrafficDataset) -> SplitRatio {
    cfg.split_ratio.unwrap_or(match d.metric_kind {
        MetricKind::Speed => SplitRatio::SPEED,
        MetricKind::Flow => SplitRatio::FLOW,
    })
}

fn cmd_generate(mut cfg: RunConfig, a: GenerateArgs) -> Result<()> {
    let s = &mut cfg.synth;
    if let Some(v) = a.sensors {
        s.n_sensors = v;
    }
    if let Some(v) = a.days {
        s.days = v;
    }
    if let Some(v) = a.topology {
        s.topology = v.parse()?;
    }
    if let Some(v) = a.metric {
        s.metric_kind = match v.as_str() {
            "speed" => MetricKind::Speed,
            "flow" => MetricKind::Flow,
            _ => return Err(Error::Config(format!("--metric must be speed or flow, got {v:?}"))),
        };
    }
    if let Some(v) = a.noise {
        s.noise_std = v;
    }
    if let Some(v) = a.phase_spread {
        s.phase_spread = v;
    }
    if let Some(v) = a.weekend_factor {
        s.weekend_factor = v;
    }
    if a.companion {
        s.companion = true;
    }
    cfg.finish()?;
    let out = cfg.require_out()?.to_path_buf();
    let d = generate(&cfg.synth)?;
    write_dataset(&d, &out)?;
    write_json(&out.join("synth.json"), &cfg.synth)?;
    cfg.write_snapshot(&out)?;
    println!(
        "wrote {} sensors x {} timesteps to {}",
        d.n_sensors(),
        d.n_timesteps(),
        out.display()
    );
    Ok(())
}

fn cmd_inspect(mut cfg: RunConfig) -> Result<()> {
    cfg.finish()?;
    let d = load_dataset(cfg.require_dataset()?)?;
    let s = summarize(&d);
    println!("{:<10} {:>8} {:>8} {:>10} {:>10} {:>10} {:>8}", "kind", "sensors", "edges", "timesteps", "mean", "std", "missing");
    println!(
        "{:<10} {:>8} {:>8} {:>10} {:>10.3} {:>10.3} {:>8}",
        d.metric_kind.to_string(),
        s.sensors,
        s.edges,
        s.timesteps,
        s.mean,
        s.std,
        s.missing
    );
    if cfg.out.is_some() {
        let out = create_out(&cfg)?;
        write_json(&out.join("summary.json"), &s)?;
        cfg.write_snapshot(&out)?;
    }
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    override_path(&mut cfg.dataset, a.data);
    if let Some(ab) = a.ablation {
        let ab: Ablation = ab.parse()?;
        cfg.model = cfg.model.with_ablation(ab);
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr0 = v;
    }
    if let Some(v) = a.split {
        cfg.split_ratio = Some(v.parse()?);
    }
    if a.no_augment {
        let seed = cfg.augment.seed;
        cfg.augment = crate::augment::AugmentConfig { seed, ..crate::augment::AugmentConfig::disabled() };
    }
    cfg.finish()?;
    let d = load_dataset(cfg.require_dataset()?)?;
    let ratio = split_ratio(&cfg, &d);
    cfg.split_ratio = Some(ratio);
    let out = create_out(&cfg)?;
    cfg.write_snapshot(&out)?;

    let data = prepare(&d, ratio, cfg.model.input_len, cfg.model.horizon)?;
    let init = init_model(&cfg.model, d.n_sensors(), cfg.seed)?;
    info!("{} parameters", init.param_count());
    let result = train_with_observer(init, &data, &cfg.train, &cfg.augment, cfg.threads, &mut |e| {
        if let TrainEvent::Epoch(r) = e {
            println!(
                "epoch {:>3}  train {:.4}  val {:.4}  lr {:.3e}",
                r.epoch, r.train_loss, r.val.mae, r.lr
            );
        }
    });
    match result {
        Ok(outcome) => {
            outcome.best.save(&out.join("best.json"), Some(&data.scaler))?;
            outcome.last.save(&out.join("final.json"), Some(&data.scaler))?;
            write_text(&out.join("history.csv"), &outcome.history.to_csv())?;
            write_text(&out.join("timing.csv"), &outcome.history.timing_csv())?;
            println!("best epoch {} -> {}", outcome.best_epoch, out.join("best.json").display());
            Ok(())
        }
        Err(Error::Diverged(div)) => {
            div.last_good.save(&out.join("last_good.json"), Some(&data.scaler))?;
            write_text(&out.join("history.csv"), &div.history.to_csv())?;
            write_text(
                &out.join("diagnostics.txt"),
                &format!("epoch {}\nbatch {}\n{}\n", div.epoch, div.batch, div.detail),
            )?;
            Err(Error::Diverged(div))
        }
        Err(e) => Err(e),
    }
}

/// Windows of `split` scaled with `scaler` and targets in dataset units.
fn windows_with(scaler: &Scaler, split: &PreparedSplit, input_len: usize, horizon: usize) -> Result<Vec<Window>> {
    let scaled = scaler.apply(&split.filled, Direction::Forward);
    let mut windows = make_windows(&scaled, input_len, horizon)?;
    for (w, t) in windows.iter_mut().zip(make_windows(&split.filled, input_len, horizon)?) {
        w.target = t.target;
    }
    Ok(windows)
}

fn check_sensors(params: &ModelParams, d: &TrafficDataset) -> Result<()> {
    if params.n_sensors != d.n_sensors() {
        return Err(Error::Config(format!(
            "checkpoint was trained on {} sensors but the dataset has {}",
            params.n_sensors,
            d.n_sensors()
        )));
    }
    Ok(())
}

fn cmd_evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    apply_inputs(&mut cfg, a.inputs);
    if let Some(s) = a.split {
        cfg.eval_split = s;
    }
    if let Some(v) = a.split_ratio {
        cfg.split_ratio = Some(v.parse()?);
    }
    cfg.finish()?;
    let d = load_dataset(cfg.require_dataset()?)?;
    let checkpoint = cfg.require_checkpoint().map(Path::to_path_buf).and_then(|p| ModelParams::load(&p));
    if let Ok((p, _)) = &checkpoint {
        cfg.model = p.config.clone();
    }
    let (input_len, horizon) = (cfg.model.input_len, cfg.model.horizon);
    let ratio = split_ratio(&cfg, &d);
    cfg.split_ratio = Some(ratio);
    let out = create_out(&cfg)?;
    cfg.write_snapshot(&out)?;

    let data = prepare(&d, ratio, input_len, horizon)?;
    let split = match cfg.eval_split {
        EvalSplit::Train => &data.train,
        EvalSplit::Val => &data.val,
        EvalSplit::Test => &data.test,
    };
    let mut reports: Vec<(String, MetricsReport)> = baseline_reports(&data, split, input_len, horizon)?;
    let model = checkpoint.and_then(|(params, scaler)| {
        check_sensors(&params, &d)?;
        let scaler = scaler.unwrap_or(data.scaler);
        let windows = windows_with(&scaler, split, input_len, horizon)?;
        let graph = GraphInputs::new(&data.adjacency.a_r);
        let pred = predict_windows(&params, &graph, &windows, &scaler, cfg.train.batch_size, cfg.threads)?;
        horizon_report(&stack_targets(&windows)?, &pred, d.metric_kind)
    });
    let model_err = match model {
        Ok(r) => {
            reports.push(("gswan".into(), r));
            None
        }
        Err(e) => {
            warn!("model evaluation failed: {e}");
            Some(e)
        }
    };

    let mut csv = format!("{}\n", MetricsReport::CSV_HEADER);
    for (name, r) in &reports {
        csv.push_str(&r.csv_rows(name));
    }
    write_text(&out.join("metrics.csv"), &csv)?;
    let table = render_table(&reports.iter().map(|(n, r)| (n.as_str(), r)).collect::<Vec<_>>());
    write_text(&out.join("metrics.txt"), &table)?;
    print!("{table}");
    match model_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn baseline_reports(
    data: &PreparedData,
    split: &PreparedSplit,
    input_len: usize,
    horizon: usize,
) -> Result<Vec<(String, MetricsReport)>> {
    let kind = split.raw.metric_kind;
    let raw_windows = make_windows(&split.filled, input_len, horizon)?;
    let y = stack_targets(&raw_windows)?;
    let ha = HistoricalAverage::fit(&data.train.raw, data.scaler.mean);
    let ha_pred = ha.predict(&split.filled, &raw_windows, input_len, horizon)?;
    let persistence = persistence_baseline(&metric_inputs(&raw_windows), horizon)?;
    Ok(vec![
        ("ha".into(), horizon_report(&y, &ha_pred, kind)?),
        ("persistence".into(), horizon_report(&y, &persistence, kind)?),
    ])
}

/// Model input `[1, 2, N, L]` built from the last `input_len` timesteps of
/// `d`, imputed with the scaler mean and scaled.
pub fn forecast_input(d: &TrafficDataset, scaler: &Scaler, input_len: usize) -> Result<Array> {
    let k = d.n_timesteps();
    if k < input_len {
        return Err(Error::TooShort { got: k, required: input_len });
    }
    let tail = d.slice_time(k - input_len, input_len)?;
    let scaled = scaler.apply(&tail, Direction::Forward);
    let n = d.n_sensors();
    let mut data = Vec::with_capacity(2 * n * input_len);
    for c in [METRIC, TIME_OF_DAY] {
        for s in 0..n {
            for &v in scaled.series(c, s) {
                data.push(if v.is_nan() { 0.0 } else { v });
            }
        }
    }
    Array::new(&[1, 2, n, input_len], data)
}

fn cmd_forecast(mut cfg: RunConfig) -> Result<()> {
    cfg.finish()?;
    let d = load_dataset(cfg.require_dataset()?)?;
    let (params, scaler) = ModelParams::load(cfg.require_checkpoint()?)?;
    check_sensors(&params, &d)?;
    cfg.model = params.config.clone();
    let scaler = scaler.ok_or_else(|| Error::Config("checkpoint carries no scaler; retrain to forecast".into()))?;
    let out = create_out(&cfg)?;
    cfg.write_snapshot(&out)?;
    let x = forecast_input(&d, &scaler, params.config.input_len)?;
    let graph = GraphInputs::new(&crate::data::build_adjacency(&d.edge_indices()?, d.n_sensors())?.a_r);
    let pred = predict(&params, &graph, &x)?;
    if !pred.is_finite() {
        return Err(Error::Numeric("forecast contains non-finite values".into()));
    }
    let (f, n) = (params.config.horizon, d.n_sensors());
    let last = *d.timestamps.last().expect("nonempty timeline");
    let mut text = String::from("step,timestamp");
    for id in &d.sensor_ids {
        text.push(',');
        text.push_str(id);
    }
    text.push('\n');
    for step in 0..f {
        text.push_str(&format!("{},{}", step + 1, last + 300 * (step as i64 + 1)));
        for s in 0..n {
            text.push_str(&format!(",{}", scaler.inverse_metric(pred.get(&[0, step, s]))));
        }
        text.push('\n');
    }
    let path = out.join("forecast.csv");
    write_text(&path, &text)?;
    println!("wrote {f} steps for {n} sensors to {}", path.display());
    Ok(())
}

/// `softmax(ReLU(e1·e2ᵀ))` from a checkpoint, or `None` without embeddings.
pub fn adaptive_adjacency_of(params: &ModelParams) -> Result<Option<Array>> {
    let (Ok(e1), Ok(e2)) = (params.store.get("node.e1"), params.store.get("node.e2")) else {
        return Ok(None);
    };
    let mut g = Graph::new();
    let (a, b) = (g.constant(e1.clone()), g.constant(e2.clone()));
    let adp = adaptive_adjacency(&mut g, a, b)?;
    Ok(Some(g.value(adp).clone()))
}

fn cmd_analyze(mut cfg: RunConfig, a: AnalyzeArgs) -> Result<()> {
    apply_inputs(&mut cfg, a.inputs);
    cfg.finish()?;
    let d = load_dataset(cfg.require_dataset()?)?;
    let (params, _) = ModelParams::load(cfg.require_checkpoint()?)?;
    check_sensors(&params, &d)?;
    cfg.model = params.config.clone();
    let a_adp = adaptive_adjacency_of(&params)?
        .ok_or_else(|| Error::Config("checkpoint has no node embeddings to analyze".into()))?;
    let out = create_out(&cfg)?;
    let mut files = vec![cfg.write_snapshot(&out)?];
    let mut notes = Vec::new();

    let path = out.join("adaptive_adjacency.csv");
    export_matrix(&a_adp, &d.sensor_ids, &path)?;
    files.push(path);

    let adj = crate::data::build_adjacency(&d.edge_indices()?, d.n_sensors())?;
    let path = out.join("similarity.json");
    write_json(
        &path,
        &json!({
            "physical_vs_adaptive": adjacency_similarity(&adj.a_r, &a_adp)?,
            "normalized_physical_vs_adaptive": adjacency_similarity(&crate::data::row_normalize(&adj.a_r), &a_adp)?,
        }),
    )?;
    files.push(path);

    match &d.coords {
        Some(coords) => {
            let (e1, e2) = (params.store.get("node.e1")?, params.store.get("node.e2")?);
            let probe = probe_embeddings(e1, e2, coords)?;
            println!("probe R2 linear {:.4} kernel {:.4}", probe.r2_linear, probe.r2_kernel);
            let path = out.join("probe.json");
            write_json(&path, &probe)?;
            files.push(path);
        }
        None => {
            let msg = "dataset has no coordinates; probe skipped";
            eprintln!("notice: {msg}");
            notes.push(msg.to_string());
        }
    }

    if let Some(sensor) = a.scatter {
        let x = match a.scatter_x {
            Some(x) => x,
            None => d
                .channel_names
                .get(2)
                .cloned()
                .ok_or_else(|| Error::Config("dataset has no extra channel; pass --scatter-x".into()))?,
        };
        let y = a.scatter_y.unwrap_or_else(|| d.channel_names[METRIC].clone());
        let path = out.join(format!("scatter_{sensor}.csv"));
        export_scatter(&d, sensor, &x, &y, &path)?;
        files.push(path);
    }
    if let Some(pair) = a.pair {
        if pair.len() != 2 {
            return Err(Error::Config(format!("--pair takes two sensor indices, got {}", pair.len())));
        }
        let path = out.join(format!("pair_{}_{}.csv", pair[0], pair[1]));
        export_pair_association(&d, pair[0], pair[1], 0..d.n_timesteps(), &path)?;
        files.push(path);
    }

    files.push(out.join("index.json"));
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().expect("file path").to_string_lossy().into_owned())
        .collect();
    write_json(&out.join("index.json"), &json!({ "files": names, "notes": notes }))?;
    println!("wrote {} files to {}", names.len(), out.display());
    Ok(())
}
