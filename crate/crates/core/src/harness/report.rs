//! CSV and JSON output of experiment reports.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use super::experiment::{Aggregate, ExperimentReport, RunRecord, SweepReport};
use super::HarnessError;
use crate::optimize::Summary;
use crate::physics::Variable;

pub const CSV_HEADER: [&str; 17] = [
    "experiment",
    "method",
    "field",
    "axis_value",
    "seed",
    "eps_K",
    "eps_h",
    "eps_C",
    "eps_K_rooted",
    "eps_h_rooted",
    "eps_C_rooted",
    "final_loss",
    "iters",
    "wall_time_s",
    "architecture",
    "param_count",
    "status",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct RowContext<'a> {
    report: &'a ExperimentReport,
    wall_time: bool,
}

impl RowContext<'_> {
    fn prefix(&self, method: &str, axis_value: Option<usize>, seed: String) -> Vec<String> {
        let cfg = &self.report.config;
        vec![
            cfg.experiment.clone(),
            method.to_string(),
            cfg.field.label(),
            axis_value.map(|v| v.to_string()).unwrap_or_default(),
            seed,
        ]
    }

    fn suffix(&self) -> [String; 2] {
        let k = &self.report.config.architectures.k;
        [k.to_string(), k.param_count().to_string()]
    }

    fn run_row(&self, r: &RunRecord) -> Vec<String> {
        let mut row = self.prefix(r.method.name(), r.axis_value, r.seed.to_string());
        match &r.outcome {
            Ok(m) => {
                row.extend(m.eps.iter().map(|e| num(*e)));
                row.extend(m.eps.iter().map(|e| num(e.map(f64::sqrt))));
                row.push(m.final_loss.to_string());
                row.push(m.iterations.to_string());
                row.push(if self.wall_time {
                    format!("{:.3}", m.wall_time_s)
                } else {
                    String::new()
                });
                row.extend(self.suffix());
                row.push(m.reason.name().to_string());
            }
            Err(_) => {
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.extend(self.suffix());
                row.push("failed".into());
            }
        }
        row
    }

    fn aggregate_rows(&self, a: &Aggregate) -> [Vec<String>; 2] {
        let pick = |s: &Option<Summary>, mean: bool| num(s.map(|s| if mean { s.mean } else { s.std }));
        [true, false].map(|mean| {
            let mut row = self.prefix(a.method.name(), a.axis_value, if mean { "mean" } else { "std" }.into());
            row.extend(a.eps.iter().map(|s| pick(s, mean)));
            row.extend(a.eps_rooted.iter().map(|s| pick(s, mean)));
            row.push(pick(&a.final_loss, mean));
            row.push(pick(&a.iterations, mean));
            row.push(if self.wall_time {
                pick(&a.wall_time_s, mean)
            } else {
                String::new()
            });
            row.extend(self.suffix());
            row.push(
                if a.failed_seeds.is_empty() {
                    "aggregate"
                } else {
                    "partial"
                }
                .into(),
            );
            row
        })
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self.report.runs.iter().map(|r| self.run_row(r)).collect();
        for a in self.report.aggregates() {
            out.extend(self.aggregate_rows(&a));
        }
        out
    }
}

fn write_rows<W: Write>(w: W, rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), HarnessError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(CSV_HEADER)?;
    for r in rows {
        csv.write_record(&r)?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-seed rows followed by mean and std rows for each method.
pub fn write_csv<W: Write>(report: &ExperimentReport, w: W) -> Result<(), HarnessError> {
    let ctx = RowContext {
        report,
        wall_time: report.config.output.wall_time,
    };
    write_rows(w, ctx.rows())
}

/// Rows of every sweep cell in axis order. Cells that could not be set up
/// produce no rows.
pub fn write_sweep_csv<W: Write>(report: &SweepReport, w: W) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    for (_, cell) in &report.cells {
        if let Ok(r) = cell {
            let ctx = RowContext {
                report: r,
                wall_time: r.config.output.wall_time,
            };
            rows.extend(ctx.rows());
        }
    }
    write_rows(w, rows)
}

fn run_json(r: &RunRecord, cfg_wall: bool, history: bool) -> Value {
    let mut v = json!({
        "method": r.method,
        "seed": r.seed,
        "axis_value": r.axis_value,
    });
    match &r.outcome {
        Ok(m) => {
            let errs: serde_json::Map<String, Value> = Variable::ALL
                .iter()
                .filter_map(|var| m.eps[*var as usize].map(|e| (var.symbol().to_string(), json!(e))))
                .collect();
            v["status"] = json!("ok");
            v["errors"] = Value::Object(errs);
            v["final_loss"] = json!(m.final_loss);
            v["iterations"] = json!(m.iterations);
            v["termination_reason"] = json!(m.reason);
            if cfg_wall {
                v["wall_time_s"] = json!(m.wall_time_s);
            }
            if history {
                v["loss_history"] = json!(m.history);
            }
        }
        Err(e) => {
            v["status"] = json!("failed");
            v["error"] = json!(e);
        }
    }
    v
}

/// Structured report: code version, configuration echo, per-seed results
/// and aggregates.
pub fn report_json(report: &ExperimentReport) -> Value {
    let out = &report.config.output;
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": report.config.to_toml(),
        "partial": report.partial(),
        "runs": report.runs.iter().map(|r| run_json(r, out.wall_time, out.loss_history)).collect::<Vec<_>>(),
        "aggregates": report.aggregates(),
    })
}

pub fn sweep_json(report: &SweepReport) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": report.config.to_toml(),
        "axis": report.axis,
        "partial": report.partial(),
        "cells": report.cells.iter().map(|(v, c)| match c {
            Ok(r) => json!({"value": v, "report": report_json(r)}),
            Err(e) => json!({"value": v, "error": e}),
        }).collect::<Vec<_>>(),
    })
}

/// Write `results.csv`, `report.json` and, when configured, the trained
/// networks under `networks/`.
pub fn write_experiment_outputs(report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_csv(report, std::fs::File::create(dir.join("results.csv"))?)?;
    let json = serde_json::to_string_pretty(&report_json(report))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    if report.config.output.save_networks {
        let nd = dir.join("networks");
        std::fs::create_dir_all(&nd)?;
        for r in &report.runs {
            if let Ok(m) = &r.outcome {
                for (v, p) in m.networks.present() {
                    p.save(nd.join(network_file_name(r.method.name(), r.seed, v)))?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_sweep_outputs(report: &SweepReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_sweep_csv(report, std::fs::File::create(dir.join("sweep.csv"))?)?;
    let json = serde_json::to_string_pretty(&sweep_json(report))?;
    std::fs::write(dir.join("sweep_report.json"), json + "\n")?;
    Ok(())
}

/// `<method>_seed<seed>_<variable>.bin`
pub fn network_file_name(method: &str, seed: u64, v: Variable) -> String {
    format!("{method}_seed{seed}_{}.bin", v.symbol())
}
