//! CSV, JSON and text renderings of training and evaluation reports.

use std::fmt::Write as _;

use dmf_core::eval::{MetricsReport, Scope};
use dmf_core::train::EpochRecord;
use dmf_core::{Area, TrainReport};
use serde::Serialize;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `epoch,train_loss,val_rmse,val_mae,lambda,seconds`; absent values are
/// empty fields.
pub fn train_csv(records: &[EpochRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_rmse", "val_mae", "lambda", "seconds"]).unwrap();
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_rmse),
            opt(r.val_mae),
            opt(r.lambda),
            r.seconds.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub mode: String,
    pub model: String,
    pub epochs_run: usize,
    pub epochs_total: usize,
    pub best_epoch: Option<usize>,
    pub best_val_rmse: Option<f64>,
    pub stopped_early: bool,
    pub final_lambda: Option<f64>,
    pub boundaries: Option<Vec<f64>>,
}

pub fn train_summary(
    mode: &str,
    model: String,
    report: &TrainReport,
    epochs_total: usize,
    best_val: Option<f64>,
    boundaries: Option<Vec<f64>>,
) -> TrainSummary {
    TrainSummary {
        mode: mode.into(),
        model,
        epochs_run: report.epochs.len(),
        epochs_total,
        best_epoch: report.best_epoch,
        best_val_rmse: best_val,
        stopped_early: report.stopped_early,
        final_lambda: report.epochs.last().and_then(|r| r.lambda),
        boundaries,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// `mode,scope,count,rmse,mae`, one row per scope of every report.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "scope", "count", "rmse", "mae"]).unwrap();
    for r in reports {
        for s in &r.scopes {
            w.write_record([
                r.mode.name().to_string(),
                s.scope.label().to_string(),
                s.count.to_string(),
                opt(s.rmse),
                opt(s.mae),
            ])
            .unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[derive(Serialize)]
struct ScopeJson {
    scope: &'static str,
    count: usize,
    rmse: Option<f64>,
    mae: Option<f64>,
}

#[derive(Serialize)]
struct ReportJson {
    mode: &'static str,
    scopes: Vec<ScopeJson>,
}

pub fn metrics_json(reports: &[MetricsReport]) -> String {
    let out: Vec<ReportJson> = reports
        .iter()
        .map(|r| ReportJson {
            mode: r.mode.name(),
            scopes: r
                .scopes
                .iter()
                .map(|s| ScopeJson { scope: s.scope.label(), count: s.count, rmse: s.rmse, mae: s.mae })
                .collect(),
        })
        .collect();
    to_json(&out)
}

/// Fixed-width table with one RMSE row and one MAE row per mode and a
/// column per area.
pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let scopes = [Scope::Overall, Scope::Area(Area::I), Scope::Area(Area::II), Scope::Area(Area::III), Scope::Area(Area::IV)];
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "");
    for s in scopes {
        let _ = write!(out, "{:>10}", s.label());
    }
    out.push('\n');
    let row = |out: &mut String, label: String, values: Vec<Option<f64>>| {
        let _ = write!(out, "{:<16}", label);
        for v in values {
            match v {
                Some(x) => {
                    let _ = write!(out, "{:>10.4}", x);
                }
                None => {
                    let _ = write!(out, "{:>10}", "-");
                }
            }
        }
        out.push('\n');
    };
    for r in reports {
        row(&mut out, format!("{} rmse", r.mode.name()), r.scopes.iter().map(|s| s.rmse).collect());
        row(&mut out, format!("{} mae", r.mode.name()), r.scopes.iter().map(|s| s.mae).collect());
    }
    let _ = write!(out, "{:<16}", "count");
    for s in &reports.first().map(|r| r.scopes.clone()).unwrap_or_default() {
        let _ = write!(out, "{:>10}", s.count);
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmf_core::eval::{EvalMode, ScopeMetrics};

    #[test]
    fn train_csv_layout() {
        let rec = EpochRecord { epoch: 0, train_loss: 0.25, val_rmse: Some(1.5), val_mae: None, lambda: None, seconds: 0.0 };
        assert_eq!(train_csv(&[rec]), "epoch,train_loss,val_rmse,val_mae,lambda,seconds\n0,0.25,1.5,,,0\n");
    }

    #[test]
    fn metrics_layouts() {
        let m = |scope, count, v: Option<f64>| ScopeMetrics { scope, count, rmse: v, mae: v.map(|x| x / 2.0) };
        let r = MetricsReport {
            mode: EvalMode::Discrete,
            scopes: vec![
                m(Scope::Overall, 3, Some(1.0)),
                m(Scope::Area(Area::I), 3, Some(1.0)),
                m(Scope::Area(Area::II), 0, None),
                m(Scope::Area(Area::III), 0, None),
                m(Scope::Area(Area::IV), 0, None),
            ],
        };
        let csv = metrics_csv(&[r.clone()]);
        assert!(csv.starts_with("mode,scope,count,rmse,mae\ndiscrete,overall,3,1,0.5\n"));
        assert!(csv.contains("discrete,IV,0,,\n"));
        let table = metrics_table(&[r.clone()]);
        assert!(table.contains("discrete rmse"));
        assert!(table.lines().nth(1).unwrap().ends_with("-"));
        let json: serde_json::Value = serde_json::from_str(&metrics_json(&[r])).unwrap();
        assert_eq!(json[0]["scopes"][2]["rmse"], serde_json::Value::Null);
    }
}
