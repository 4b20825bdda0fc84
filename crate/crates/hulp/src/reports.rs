//! CSV and JSON report writers.

use hulp_core::experiments::{InterventionReport, SweepReport};
use hulp_core::training::{CvReport, FitReport};
use serde::Serialize;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory csv writer")
}

pub fn fit_report_json(report: &FitReport) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("fit report serializes");
    out.push(b'\n');
    out
}

/// Per-epoch trace: `epoch,l1,ll,rank,total,val_cindex,lr`.
pub fn fit_report_csv(report: &FitReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "l1", "ll", "rank", "total", "val_cindex", "lr"]).unwrap();
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.l1.to_string(),
            e.ll.to_string(),
            e.rank.to_string(),
            e.total.to_string(),
            fmt_opt(e.val_cindex),
            e.lr.to_string(),
        ])
        .unwrap();
    }
    finish(w)
}

/// One row per method, seed and fold: `method,modality,seed,fold,cindex`.
pub fn comparison_csv(reports: &[(CvReport, &str)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "modality", "seed", "fold", "cindex"]).unwrap();
    for (report, modality) in reports {
        for e in &report.entries {
            w.write_record([
                report.method.clone(),
                modality.to_string(),
                e.seed.to_string(),
                e.fold.to_string(),
                e.cindex.to_string(),
            ])
            .unwrap();
        }
    }
    finish(w)
}

fn rate_header(rate: f64) -> String {
    format!("{rate:.1}")
}

/// Wide table, one row per method and one column per missingness rate,
/// each cell the mean C-index over seeds.
pub fn sweep_table_csv(report: &SweepReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    header.extend(report.rates.iter().map(|&r| rate_header(r)));
    w.write_record(&header).unwrap();
    for (method, means) in report.table() {
        let mut row = vec![method];
        row.extend(means.into_iter().map(fmt_opt));
        w.write_record(&row).unwrap();
    }
    finish(w)
}

/// Long form of the sweep: `method,rate,seed,cindex`.
pub fn sweep_rows_csv(report: &SweepReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "rate", "seed", "cindex"]).unwrap();
    for r in &report.rows {
        w.write_record([r.method.clone(), rate_header(r.rate), r.seed.to_string(), r.cindex.to_string()])
            .unwrap();
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateSummary {
    pub method: String,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub cindex_mean: f64,
    pub cindex_std: f64,
    pub cindex_with_interventions_mean: Option<f64>,
    pub cindex_with_interventions_std: Option<f64>,
}

impl EvaluateSummary {
    pub fn from_report(report: &InterventionReport, folds: usize, seeds: &[u64], with_interventions: bool) -> Self {
        let (m, s) = report.without();
        let (wm, ws) = if with_interventions {
            let (a, b) = report.with();
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        Self {
            method: "HuLP".into(),
            folds,
            seeds: seeds.to_vec(),
            cindex_mean: m,
            cindex_std: s,
            cindex_with_interventions_mean: wm,
            cindex_with_interventions_std: ws,
        }
    }
}

pub fn evaluate_json(summary: &EvaluateSummary) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(summary).expect("summary serializes");
    out.push(b'\n');
    out
}

/// Per-arm C-index with and without oracle masks:
/// `seed,fold,cindex,cindex_with_interventions`.
pub fn evaluate_csv(report: &InterventionReport, with_interventions: bool) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["seed", "fold", "cindex"];
    if with_interventions {
        header.push("cindex_with_interventions");
    }
    w.write_record(&header).unwrap();
    for e in &report.entries {
        let mut row = vec![e.seed.to_string(), e.fold.to_string(), e.cindex.to_string()];
        if with_interventions {
            row.push(fmt_opt(e.cindex_oracle));
        }
        w.write_record(&row).unwrap();
    }
    finish(w)
}

/// `fraction,cindex`.
pub fn intervention_sweep_csv(points: &[(f64, Option<f64>)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction", "cindex"]).unwrap();
    for &(f, c) in points {
        w.write_record([f.to_string(), fmt_opt(c)]).unwrap();
    }
    finish(w)
}
