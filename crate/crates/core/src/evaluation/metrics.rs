use std::fmt::Write as _;

use serde::Serialize;

use crate::array::Array;
use crate::data::MetricKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub mae: f64,
    /// Percent, over entries with a nonzero target. Absent when every target
    /// is zero.
    pub mape: Option<f64>,
    pub rmse: f64,
}

/// MAE, MAPE and RMSE of `h` against `y`, both in dataset units.
pub fn compute_metrics(y: &Array, h: &Array) -> Result<Metrics> {
    if y.shape() != h.shape() {
        return Err(Error::shape("compute_metrics", y.shape(), h.shape()));
    }
    if y.is_empty() {
        return Err(Error::Param("compute_metrics needs at least one entry".into()));
    }
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    let mut nonzero = 0usize;
    for (&a, &b) in y.data().iter().zip(h.data()) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
        if a != 0.0 {
            pct += (e / a).abs();
            nonzero += 1;
        }
    }
    let n = y.len() as f64;
    Ok(Metrics {
        mae: abs / n,
        mape: (nonzero > 0).then(|| 100.0 * pct / nonzero as f64),
        rmse: (sq / n).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    /// 1-based.
    pub step: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub label: String,
    pub step: Option<usize>,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub metric_kind: MetricKind,
    pub steps: Vec<StepMetrics>,
    /// 15, 30 and 60 minutes, then the average over every step.
    pub aggregates: Vec<Aggregate>,
}

/// Step index for a lead time at 5-minute resolution.
pub fn horizon_step(minutes: usize) -> usize {
    minutes / 5
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    s / n as f64
}

/// Per-step metrics over `[B, F, N]` arrays plus horizon aggregates.
pub fn horizon_report(y: &Array, h: &Array, metric_kind: MetricKind) -> Result<MetricsReport> {
    if y.shape() != h.shape() || y.rank() != 3 {
        return Err(Error::shape("horizon_report", y.shape(), h.shape()));
    }
    let (b, f, n) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut steps = Vec::with_capacity(f);
    for step in 0..f {
        let pick = |a: &Array| {
            let mut v = Vec::with_capacity(b * n);
            for bb in 0..b {
                v.extend_from_slice(&a.data()[(bb * f + step) * n..(bb * f + step + 1) * n]);
            }
            Array::new(&[b * n], v)
        };
        steps.push(StepMetrics {
            step: step + 1,
            metrics: compute_metrics(&pick(y)?, &pick(h)?)?,
        });
    }
    let mut aggregates = Vec::new();
    for minutes in [15, 30, 60] {
        let s = horizon_step(minutes);
        if s >= 1 && s <= f {
            aggregates.push(Aggregate {
                label: format!("{minutes}min"),
                step: Some(s),
                metrics: steps[s - 1].metrics,
            });
        }
    }
    let mapes: Vec<f64> = steps.iter().filter_map(|s| s.metrics.mape).collect();
    aggregates.push(Aggregate {
        label: "average".into(),
        step: None,
        metrics: Metrics {
            mae: mean_of(steps.iter().map(|s| s.metrics.mae)),
            mape: (!mapes.is_empty()).then(|| mean_of(mapes.iter().copied())),
            rmse: mean_of(steps.iter().map(|s| s.metrics.rmse)),
        },
    });
    Ok(MetricsReport {
        metric_kind,
        steps,
        aggregates,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "model,row,step,mae,mape,rmse";

    /// CSV rows (no header) labelled with `model`.
    pub fn csv_rows(&self, model: &str) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let m = s.metrics;
            let _ = writeln!(out, "{model},step,{},{},{},{}", s.step, m.mae, opt(m.mape), m.rmse);
        }
        for a in &self.aggregates {
            let m = a.metrics;
            let step = a.step.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{model},{},{step},{},{},{}", a.label, m.mae, opt(m.mape), m.rmse);
        }
        out
    }

    pub fn average(&self) -> Metrics {
        self.aggregates.last().expect("average row").metrics
    }

    pub fn aggregate(&self, label: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.label == label)
    }
}

/// Aligned text table of several reports. Speed datasets mark the 15/30/60
/// minute rows, flow datasets the average.
pub fn render_table(reports: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::new();
    let Some((_, first)) = reports.first() else {
        return out;
    };
    let highlight = |label: &str| match first.metric_kind {
        MetricKind::Speed => label.ends_with("min"),
        MetricKind::Flow => label == "average",
    };
    let _ = write!(out, "{:<10}", "row");
    for (name, _) in reports {
        let _ = write!(out, " | {:^26}", name);
    }
    out.push('\n');
    let _ = write!(out, "{:<10}", "");
    for _ in reports {
        let _ = write!(out, " | {:>8} {:>8} {:>8}", "MAE", "MAPE%", "RMSE");
    }
    out.push('\n');
    let fmt = |m: &Metrics| {
        let mape = m.mape.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        format!(" | {:>8.2} {:>8} {:>8.2}", m.mae, mape, m.rmse)
    };
    for i in 0..first.steps.len() {
        let _ = write!(out, "{:<10}", format!("step {}", first.steps[i].step));
        for (_, r) in reports {
            out.push_str(&fmt(&r.steps[i].metrics));
        }
        out.push('\n');
    }
    for (i, a) in first.aggregates.iter().enumerate() {
        let mark = if highlight(&a.label) { "*" } else { " " };
        let _ = write!(out, "{:<10}", format!("{mark}{}", a.label));
        for (_, r) in reports {
            out.push_str(&fmt(&r.aggregates[i].metrics));
        }
        out.push('\n');
    }
    out
}

/// Cosine similarity of two flattened matrices; absent if either is zero.
pub fn adjacency_similarity(a: &Array, b: &Array) -> Result<Option<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("adjacency_similarity", a.shape(), b.shape()));
    }
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some(dot / (na * nb)))
}
