use std::process::Command;

use mpinn::harness::{
    relative_error, report_json, run_experiment, select_measurements, select_residual_points, sweep, write_csv,
    write_sweep_csv, BoundaryCounts, ExperimentConfig, SelectionStrategy, SweepAxis, CSV_HEADER,
};
use mpinn::optimize::MpinnMode;
use mpinn::physics::{DomainSpec, Method, Variable};
use mpinn::refsolver::FieldGrid;
use proptest::prelude::*;

const BASE: &str = r#"
experiment = "harness"
methods = ["data_driven", "pinn_darcy"]
seeds = [1, 2]

[field]
source = "analytic"
nx = 32
ny = 16

[measurements]
n_k = 16
n_h = 16
n_c = 16

[residuals]
n_f_h = 60
n_f_c = 60

[residuals.boundary]
flow_inlet = 8
flow_lateral = 8
flow_outlet = 8
solute_outlet = 8
solute_lateral = 8
solute_inlet = 8

[architectures]
K = [8, 8]
h = [8]
C = [8]

[training.lbfgs]
max_iters = 120
"#;

fn base() -> ExperimentConfig {
    let c = ExperimentConfig::from_toml(BASE).unwrap();
    c.validate().unwrap();
    c
}

fn csv_string(cfg: &ExperimentConfig) -> String {
    let report = run_experiment(cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&report, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn parse(csv_text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn grid() -> FieldGrid {
    FieldGrid::from_fn(8, 4, DomainSpec::default(), |x| 1.0 + x[0] + 3.0 * x[1])
}

#[test]
fn relative_error_examples() {
    let g = grid();
    assert_eq!(relative_error(&g, &g.values).unwrap(), 0.0);
    assert_eq!(relative_error(&g, &vec![0.0; g.len()]).unwrap(), 1.0);
    let doubled: Vec<f64> = g.values.iter().map(|v| 2.0 * v).collect();
    assert!((relative_error(&g, &doubled).unwrap() - 1.0).abs() < 1e-14);
    assert!(relative_error(&g, &[1.0]).is_err());
}

#[test]
fn measurement_selection_is_uniform() {
    let g = grid();
    let (n, trials) = (16, 10_000);
    let mut counts = vec![0usize; g.len()];
    for seed in 0..trials {
        let m = select_measurements(&g, Variable::K, n, seed, SelectionStrategy::UniformRandom).unwrap();
        for p in &m.points {
            let k = g.centers().iter().position(|c| c == p).unwrap();
            counts[k] += 1;
        }
    }
    let p = n as f64 / g.len() as f64;
    let expected = trials as f64 * p;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 31 degrees of freedom, upper 0.1% point is about 61.1. Sampling without
    // replacement lowers the variance, so the statistic sits well below it.
    assert!(chi2 < 61.1, "chi-square {chi2}");
    let se = (trials as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - expected).abs() < 4.0 * se, "count {c}, expected {expected}");
    }
}

#[test]
fn selecting_every_cell_and_reproducibility() {
    let g = grid();
    let m = select_measurements(&g, Variable::H, g.len(), 9, SelectionStrategy::UniformRandom).unwrap();
    let mut pts = m.points.clone();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut all = g.centers();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(pts, all);
    let a = select_measurements(&g, Variable::H, 5, 4, SelectionStrategy::UniformRandom).unwrap();
    let b = select_measurements(&g, Variable::H, 5, 4, SelectionStrategy::UniformRandom).unwrap();
    assert_eq!(a, b);
    assert!(select_measurements(&g, Variable::H, g.len() + 1, 4, SelectionStrategy::UniformRandom).is_err());
    let grid_sel = select_measurements(&g, Variable::H, 8, 0, SelectionStrategy::Grid).unwrap();
    assert_eq!(grid_sel.points.len(), 8);
}

#[test]
fn residual_points_on_their_segments() {
    let d = DomainSpec::default();
    let empty = select_residual_points(&d, 0, 0, &BoundaryCounts::uniform(0), 1);
    assert_eq!(empty.total(), 0);

    let r = select_residual_points(&d, 500, 300, &BoundaryCounts::uniform(10), 2);
    assert_eq!((r.interior_h.len(), r.interior_c.len()), (500, 300));
    for p in r.interior_h.iter().chain(&r.interior_c) {
        assert!(p[0] > 0.0 && p[0] < d.l1 && p[1] > 0.0 && p[1] < d.l2);
    }
    for seg in [&r.flow_inlet, &r.solute_inlet] {
        assert_eq!(seg.len(), 10);
        assert!(seg.iter().all(|p| p[0] == 0.0));
        assert!(seg.windows(2).all(|w| w[1][1] > w[0][1]));
    }
    for seg in [&r.flow_outlet, &r.solute_outlet] {
        assert!(seg.iter().all(|p| p[0] == d.l1));
    }
    for seg in [&r.flow_lateral, &r.solute_lateral] {
        assert_eq!(seg.len(), 20);
        assert!(seg.iter().all(|p| p[1] == 0.0 || p[1] == d.l2));
    }
    assert_eq!(r, select_residual_points(&d, 500, 300, &BoundaryCounts::uniform(10), 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measurement_sets_are_distinct_cells(n in 0usize..=32, seed in any::<u64>()) {
        let g = grid();
        let m = select_measurements(&g, Variable::C, n, seed, SelectionStrategy::UniformRandom).unwrap();
        prop_assert_eq!(m.points.len(), n);
        let centers = g.centers();
        let mut idx: Vec<usize> = m.points.iter().map(|p| centers.iter().position(|c| c == p).unwrap()).collect();
        for (p, v) in m.points.iter().zip(&m.values) {
            let k = centers.iter().position(|c| c == p).unwrap();
            prop_assert_eq!(*v, g.values[k]);
        }
        idx.sort();
        idx.dedup();
        prop_assert_eq!(idx.len(), n);
    }
}

#[test]
fn experiment_rows_aggregates_and_determinism() {
    let cfg = base();
    let text = csv_string(&cfg);
    let (header, rows) = parse(&text);
    assert_eq!(header, CSV_HEADER);
    // 2 methods x 2 seeds, then mean and std rows per method.
    assert_eq!(rows.len(), 4 + 4);
    let col = |name: &str| CSV_HEADER.iter().position(|h| *h == name).unwrap();
    for r in &rows {
        assert_eq!(r.len(), CSV_HEADER.len());
        assert_eq!(r[col("experiment")], "harness");
        assert_eq!(r[col("param_count")], (2 * 8 + 8 + 8 * 8 + 8 + 8 + 1).to_string());
        assert!(!r[col("eps_K")].is_empty() && !r[col("eps_h")].is_empty());
    }
    for method in ["data_driven", "pinn_darcy"] {
        let seeds: Vec<&Vec<String>> = rows
            .iter()
            .filter(|r| r[col("method")] == method && r[col("seed")].parse::<u64>().is_ok())
            .collect();
        let mean = rows
            .iter()
            .find(|r| r[col("method")] == method && r[col("seed")] == "mean")
            .unwrap();
        for name in ["eps_K", "eps_h", "eps_C", "eps_K_rooted", "final_loss"] {
            // PINN-Darcy has no concentration network.
            if mean[col(name)].is_empty() {
                assert!(seeds.iter().all(|r| r[col(name)].is_empty()));
                continue;
            }
            let v: Vec<f64> = seeds.iter().map(|r| r[col(name)].parse().unwrap()).collect();
            let m: f64 = mean[col(name)].parse().unwrap();
            assert!((m - v.iter().sum::<f64>() / v.len() as f64).abs() <= 1e-12 * m.abs().max(1e-300));
        }
        for r in &seeds {
            let (e, root): (f64, f64) = (
                r[col("eps_K")].parse().unwrap(),
                r[col("eps_K_rooted")].parse().unwrap(),
            );
            assert!((root - e.sqrt()).abs() <= 1e-15 * root.max(1.0));
        }
    }
    assert_eq!(text, csv_string(&cfg), "reruns must be byte-identical");
}

#[test]
fn pinn_head_error_below_conductivity_error() {
    let mut cfg = base();
    cfg.methods = vec![Method::PinnDarcy];
    let report = run_experiment(&cfg).unwrap();
    for r in &report.runs {
        let m = r.outcome.as_ref().unwrap();
        let (k, h) = (m.eps[0].unwrap(), m.eps[1].unwrap());
        assert!(h < k, "seed {}: eps_h {h} vs eps_K {k}", r.seed);
    }
}

#[test]
fn mpinn_without_physics_equals_data_driven() {
    let mut cfg = base();
    cfg.seeds = vec![3];
    cfg.training.mpinn_mode = MpinnMode::Simultaneous;
    cfg.weights.omega_f = 0.0;
    cfg.weights.omega_b = 0.0;
    cfg.residuals.n_f_h = 0;
    cfg.residuals.n_f_c = 0;
    cfg.residuals.boundary = BoundaryCounts::uniform(0);
    cfg.methods = vec![Method::DataDriven, Method::Mpinn];
    let report = run_experiment(&cfg).unwrap();
    let a = report.runs[0].outcome.as_ref().unwrap();
    let b = report.runs[1].outcome.as_ref().unwrap();
    assert_eq!(a.eps, b.eps);
    assert_eq!(a.final_loss, b.final_loss);
}

#[test]
fn single_value_sweep_matches_experiment() {
    let mut cfg = base();
    cfg.methods = vec![Method::DataDriven];
    let report = run_experiment(&cfg).unwrap();
    let s = sweep(&cfg, SweepAxis::N, &[cfg.measurements.n_k]).unwrap();
    let cell = s.cells[0].1.as_ref().unwrap();
    for (a, b) in report.runs.iter().zip(&cell.runs) {
        assert_eq!(a.outcome.as_ref().unwrap().eps, b.outcome.as_ref().unwrap().eps);
    }
}

#[test]
fn width_sweep_parameter_counts() {
    let mut cfg = base();
    cfg.methods = vec![Method::DataDriven];
    cfg.architectures.k = mpinn::network::MlpArchitecture::uniform(10, 3).unwrap();
    cfg.training.lbfgs.max_iters = 5;
    let values = [10, 20, 50];
    let s = sweep(&cfg, SweepAxis::Width, &values).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&s, &mut buf).unwrap();
    let (_, rows) = parse(std::str::from_utf8(&buf).unwrap());
    assert_eq!(rows.len(), values.len() * cfg.seeds.len() + 2 * values.len());
    let col = |name: &str| CSV_HEADER.iter().position(|h| *h == name).unwrap();
    for (v, want) in values.iter().zip([261, 921, 5301]) {
        let r = rows.iter().find(|r| r[col("axis_value")] == v.to_string()).unwrap();
        assert_eq!(r[col("param_count")], want.to_string());
    }
}

#[test]
fn report_echoes_configuration() {
    let mut cfg = base();
    cfg.methods = vec![Method::DataDriven];
    cfg.seeds = vec![5];
    let report = run_experiment(&cfg).unwrap();
    let json = report_json(&report);
    let echo = json["config"].as_str().unwrap();
    assert_eq!(ExperimentConfig::from_toml(echo).unwrap(), cfg);
}

fn cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_mpinn"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(cli(&["--config", "/nonexistent.toml", "train"]), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, BASE.replace("n_k = 16", "n_k = 100000")).unwrap();
    assert_eq!(cli(&["--config", bad.to_str().unwrap(), "train"]), 1);
    assert_eq!(cli(&["--bogus-flag"]), 1);

    let good = dir.path().join("good.toml");
    let text = BASE
        .replace("max_iters = 120", "max_iters = 5")
        .replace("seeds = [1, 2]", "seeds = [1]");
    std::fs::write(&good, text).unwrap();
    assert_eq!(cli(&["--config", good.to_str().unwrap(), "--out", out, "train"]), 0);
    let csv_text = std::fs::read_to_string(format!("{out}/results.csv")).unwrap();
    assert!(csv_text.starts_with(&CSV_HEADER.join(",")));
    assert!(std::path::Path::new(&format!("{out}/report.json")).is_file());
    assert_eq!(cli(&["--config", good.to_str().unwrap(), "--out", out, "generate"]), 0);
    assert!(std::path::Path::new(&format!("{out}/K.txt")).is_file());
}
