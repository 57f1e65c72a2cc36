use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use super::config::{ExperimentConfig, FieldSource, SweepAxis};
use super::metrics::relative_error;
use super::sampling::{select_measurements, select_residual_points};
use super::HarnessError;
use crate::fields::{analytic_k_grid, lognormal_k};
use crate::network::{predict, ParameterVector};
use crate::optimize::{
    derive_seed, replicate, train, LossRecord, Summary, TerminationReason, TrainedNetworks, TrainingStrategy,
};
use crate::physics::{LossProblem, Method, Variable};
use crate::refsolver::{solve_reference, FieldGrid};

/// Tolerance of the reference linear solves.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Ground-truth fields on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub k: FieldGrid,
    pub h: FieldGrid,
    pub c: FieldGrid,
}

impl Reference {
    pub fn get(&self, v: Variable) -> &FieldGrid {
        match v {
            Variable::K => &self.k,
            Variable::H => &self.h,
            Variable::C => &self.c,
        }
    }
}

/// Build or load the reference fields named by the configuration.
pub fn build_reference(cfg: &ExperimentConfig) -> Result<Reference, HarnessError> {
    let solve = |k: FieldGrid| -> Result<Reference, HarnessError> {
        let r = solve_reference(k, &cfg.boundary, &cfg.physics, SOLVER_TOLERANCE)?;
        Ok(Reference { k: r.k, h: r.h, c: r.c })
    };
    match &cfg.field {
        FieldSource::Analytic { nx, ny } => solve(analytic_k_grid(*nx, *ny, cfg.domain)),
        FieldSource::Grf { nx, ny, spec } => solve(lognormal_k(*nx, *ny, cfg.domain, spec)?),
        FieldSource::Files { k_file, h_file, c_file } => {
            let k = FieldGrid::load(k_file)?;
            if k.domain != cfg.domain {
                return Err(HarnessError::Config(format!(
                    "{} covers {:?}, configuration says {:?}",
                    k_file.display(),
                    k.domain,
                    cfg.domain
                )));
            }
            let mut r = if h_file.is_some() && c_file.is_some() {
                Reference {
                    h: k.clone(),
                    c: k.clone(),
                    k,
                }
            } else {
                solve(k)?
            };
            for (slot, file) in [(&mut r.h, h_file), (&mut r.c, c_file)] {
                if let Some(f) = file {
                    let g = FieldGrid::load(f)?;
                    if !g.same_geometry(&r.k) {
                        return Err(HarnessError::Config(format!(
                            "{} does not match the K grid",
                            f.display()
                        )));
                    }
                    *slot = g;
                }
            }
            Ok(r)
        }
    }
}

/// The loss problem of one replication seed.
pub fn build_problem(cfg: &ExperimentConfig, reference: &Reference, seed: u64) -> Result<LossProblem, HarnessError> {
    let m = &cfg.measurements;
    let base = if m.resample_per_seed {
        m.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    } else {
        m.seed
    };
    let pick = |v: Variable, n: usize| select_measurements(reference.get(v), v, n, derive_seed(base, v), m.strategy);
    let r = &cfg.residuals;
    let mut problem = LossProblem::new(
        pick(Variable::K, m.n_k)?,
        pick(Variable::H, m.n_h)?,
        pick(Variable::C, m.n_c)?,
        select_residual_points(&cfg.domain, r.n_f_h, r.n_f_c, &r.boundary, r.seed),
    );
    problem.domain = cfg.domain;
    problem.boundary = cfg.boundary;
    problem.physics = cfg.physics;
    problem.weights = cfg.weights;
    problem.dispersion = cfg.training.dispersion;
    problem.velocity_delta = cfg.training.velocity_delta;
    problem.log_conductivity = cfg.training.log_conductivity;
    problem.validate()?;
    Ok(problem)
}

/// Grid predictions of every trained network (K in conductivity units).
pub fn predict_fields(
    networks: &TrainedNetworks,
    centers: &[crate::Point],
    log_conductivity: bool,
) -> Vec<(Variable, Vec<f64>)> {
    networks
        .present()
        .into_iter()
        .map(|(v, p)| {
            let mut vals = predict(p, centers);
            if v == Variable::K && log_conductivity {
                vals.iter_mut().for_each(|x| *x = x.exp());
            }
            (v, vals)
        })
        .collect()
}

/// Relative errors `[K, h, C]` of the trained networks; `None` for
/// variables without a network.
pub fn network_errors(
    networks: &TrainedNetworks,
    reference: &Reference,
    log_conductivity: bool,
) -> Result<[Option<f64>; 3], HarnessError> {
    let centers = reference.k.centers();
    let mut out = [None; 3];
    for (v, vals) in predict_fields(networks, &centers, log_conductivity) {
        out[v as usize] = Some(relative_error(reference.get(v), &vals)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    /// Relative errors of K, h and C.
    pub eps: [Option<f64>; 3],
    pub final_loss: f64,
    pub iterations: usize,
    pub reason: TerminationReason,
    pub wall_time_s: f64,
    pub history: Vec<LossRecord>,
    pub networks: TrainedNetworks,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub axis_value: Option<usize>,
    pub outcome: Result<RunMetrics, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub method: Method,
    pub axis_value: Option<usize>,
    pub eps: [Option<Summary>; 3],
    pub eps_rooted: [Option<Summary>; 3],
    pub final_loss: Option<Summary>,
    pub iterations: Option<Summary>,
    pub wall_time_s: Option<Summary>,
    pub failed_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn partial(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_err())
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(Method, Option<usize>)> = Vec::new();
        for r in &self.runs {
            if !keys.contains(&(r.method, r.axis_value)) {
                keys.push((r.method, r.axis_value));
            }
        }
        keys.into_iter()
            .map(|(method, axis_value)| {
                let runs: Vec<&RunRecord> = self
                    .runs
                    .iter()
                    .filter(|r| r.method == method && r.axis_value == axis_value)
                    .collect();
                let ok: Vec<&RunMetrics> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let stat = |f: &dyn Fn(&RunMetrics) -> Option<f64>| {
                    let v: Vec<f64> = ok.iter().filter_map(|m| f(m)).collect();
                    Summary::of(&v)
                };
                Aggregate {
                    method,
                    axis_value,
                    eps: [0, 1, 2].map(|i| stat(&|m| m.eps[i])),
                    eps_rooted: [0, 1, 2].map(|i| stat(&|m| m.eps[i].map(f64::sqrt))),
                    final_loss: stat(&|m| Some(m.final_loss)),
                    iterations: stat(&|m| Some(m.iterations as f64)),
                    wall_time_s: stat(&|m| Some(m.wall_time_s)),
                    failed_seeds: runs.iter().filter(|r| r.outcome.is_err()).map(|r| r.seed).collect(),
                }
            })
            .collect()
    }

    /// Mean error of one variable for one method, over successful seeds.
    pub fn mean_error(&self, method: Method, v: Variable) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method)
            .and_then(|a| a.eps[v as usize].map(|s| s.mean))
    }
}

fn run_seed(
    cfg: &ExperimentConfig,
    reference: &Reference,
    method: Method,
    seed: u64,
) -> Result<RunMetrics, HarnessError> {
    let start = Instant::now();
    let problem = build_problem(cfg, reference, seed)?;
    let strategy = TrainingStrategy {
        method,
        schedule: cfg.training.schedule,
        mpinn_mode: cfg.training.mpinn_mode,
    };
    let out = train(
        &problem,
        &strategy,
        &cfg.architectures,
        &cfg.training.schedule_config(),
        seed,
    )?;
    let eps = network_errors(&out.networks, reference, cfg.training.log_conductivity)?;
    Ok(RunMetrics {
        eps,
        final_loss: out.final_loss,
        iterations: out.iterations,
        reason: out.reason,
        wall_time_s: start.elapsed().as_secs_f64(),
        history: out.history,
        networks: out.networks,
    })
}

/// Run every method on every seed against a prepared reference.
pub fn run_with_reference(
    cfg: &ExperimentConfig,
    reference: &Reference,
    axis_value: Option<usize>,
) -> ExperimentReport {
    let mut runs = Vec::new();
    for &method in &cfg.methods {
        info!("{}: {} on {} seeds", cfg.experiment, method.name(), cfg.seeds.len());
        let reps = replicate(&cfg.seeds, |seed| run_seed(cfg, reference, method, seed));
        for (seed, outcome) in reps.runs {
            if let Err(e) = &outcome {
                warn!("{} seed {seed} failed: {e}", method.name());
            }
            runs.push(RunRecord {
                method,
                seed,
                axis_value,
                outcome: outcome.map_err(|e| e.to_string()),
            });
        }
    }
    ExperimentReport {
        config: cfg.clone(),
        runs,
    }
}

/// Build the reference fields, train every method on every seed and
/// evaluate the errors on the full grid. Failures of individual seeds are
/// recorded in the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let reference = build_reference(cfg)?;
    Ok(run_with_reference(cfg, &reference, None))
}

/// One experiment per axis value, all against the same reference fields.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub axis: SweepAxis,
    pub cells: Vec<(usize, Result<ExperimentReport, String>)>,
}

impl SweepReport {
    pub fn partial(&self) -> bool {
        self.cells.iter().any(|(_, r)| r.as_ref().map_or(true, |r| r.partial()))
    }
}

pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<SweepReport, HarnessError> {
    cfg.validate()?;
    let reference = build_reference(cfg)?;
    let cells = values
        .iter()
        .map(|&v| {
            let cell = cfg
                .with_axis(axis, v)
                .map(|c| run_with_reference(&c, &reference, Some(v)))
                .map_err(|e| e.to_string());
            if let Err(e) = &cell {
                warn!("sweep value {v} skipped: {e}");
            }
            (v, cell)
        })
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        axis,
        cells,
    })
}

/// Relative errors of saved networks against the reference fields.
pub fn evaluate_saved(
    reference: &Reference,
    networks: &[(Variable, ParameterVector)],
    log_conductivity: bool,
) -> Result<[Option<f64>; 3], HarnessError> {
    let mut t = TrainedNetworks::default();
    for (v, p) in networks {
        t.set(*v, p.clone());
    }
    network_errors(&t, reference, log_conductivity)
}
