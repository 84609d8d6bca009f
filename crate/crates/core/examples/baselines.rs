//! Historical-average and persistence forecasts on a noisy synthetic week,
//! reported per horizon step.

use gswan::data::{prepare, SplitRatio};
use gswan::evaluation::{horizon_report, metric_inputs, persistence_baseline, render_table, stack_targets, HistoricalAverage};
use gswan::synthetic::{generate, SynthConfig};

fn main() -> gswan::Result<()> {
    let d = generate(&SynthConfig { n_sensors: 8, days: 7, noise_std: 2.0, phase_spread: 60.0, seed: 3, ..Default::default() })?;
    let data = prepare(&d, SplitRatio::SPEED, 12, 12)?;
    let test = &data.test;
    let y = stack_targets(&test.windows)?;

    let ha = HistoricalAverage::fit(&data.train.raw, data.scaler.mean);
    let ha_pred = ha.predict(&test.filled, &test.windows, 12, 12)?;
    let ha_report = horizon_report(&y, &ha_pred, d.metric_kind)?;

    // raw windows: persistence repeats the last observed reading in dataset units
    let raw = gswan::data::make_windows(&test.filled, 12, 12)?;
    let last = persistence_baseline(&metric_inputs(&raw), 12)?;
    let last_report = horizon_report(&y, &last, d.metric_kind)?;

    println!("{} test windows", test.windows.len());
    print!("{}", render_table(&[("historical average", &ha_report), ("persistence", &last_report)]));
    Ok(())
}
