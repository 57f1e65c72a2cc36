use std::collections::BTreeSet;

use log::info;
use serde::{Deserialize, Serialize};

use super::{adam, lbfgs, AdamConfig, LbfgsConfig, Objective, OptimizeError, TerminationReason};
use crate::network::{MlpArchitecture, ParameterVector};
use crate::physics::{evaluate_loss, DataBatch, LossProblem, LossTerm, Method, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Lbfgs,
    Adam,
    /// Adam until the loss falls below the switch threshold, then L-BFGS.
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpinnMode {
    /// Train K and h with the Darcy loss first, then all three networks
    /// with the full loss starting from those K and h.
    #[default]
    Sequential,
    Simultaneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingStrategy {
    pub method: Method,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub mpinn_mode: MpinnMode,
}

impl TrainingStrategy {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            schedule: Schedule::Lbfgs,
            mpinn_mode: MpinnMode::Sequential,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lbfgs: LbfgsConfig,
    pub adam: AdamConfig,
    pub hybrid_switch_loss: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig::default(),
            adam: AdamConfig::default(),
            hybrid_switch_loss: 5e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architectures {
    #[serde(rename = "K")]
    pub k: MlpArchitecture,
    #[serde(rename = "h")]
    pub h: MlpArchitecture,
    #[serde(rename = "C")]
    pub c: MlpArchitecture,
}

impl Architectures {
    pub fn get(&self, v: Variable) -> &MlpArchitecture {
        match v {
            Variable::K => &self.k,
            Variable::H => &self.h,
            Variable::C => &self.c,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainedNetworks {
    pub k: Option<ParameterVector>,
    pub h: Option<ParameterVector>,
    pub c: Option<ParameterVector>,
}

impl TrainedNetworks {
    pub fn get(&self, v: Variable) -> Option<&ParameterVector> {
        match v {
            Variable::K => self.k.as_ref(),
            Variable::H => self.h.as_ref(),
            Variable::C => self.c.as_ref(),
        }
    }

    pub fn set(&mut self, v: Variable, p: ParameterVector) {
        match v {
            Variable::K => self.k = Some(p),
            Variable::H => self.h = Some(p),
            Variable::C => self.c = Some(p),
        }
    }

    pub fn present(&self) -> Vec<(Variable, &ParameterVector)> {
        Variable::ALL
            .into_iter()
            .filter_map(|v| self.get(v).map(|p| (v, p)))
            .collect()
    }
}

/// Loss of one accepted iterate. Iterations count across all groups and
/// stages of a training run; `terms` cover the group being optimised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub terms: Vec<(LossTerm, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub networks: TrainedNetworks,
    pub final_loss: f64,
    pub terms: Vec<(LossTerm, f64)>,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: TerminationReason,
    pub history: Vec<LossRecord>,
}

/// Initialisation seed of one network, derived from the replicate seed.
pub fn derive_seed(seed: u64, v: Variable) -> u64 {
    // SplitMix64 finaliser over (seed, variable).
    let tag = match v {
        Variable::K => 1u64,
        Variable::H => 2,
        Variable::C => 3,
    };
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Partition the networks trained by `method` into groups that share no
/// loss term. Each group can be optimised independently because the loss is
/// a sum of terms.
pub fn training_groups(problem: &LossProblem, method: Method) -> Vec<Vec<Variable>> {
    let vars = problem.method_variables(method);
    let terms = problem.active_terms(method);
    let mut groups: Vec<BTreeSet<Variable>> = vars.iter().map(|v| BTreeSet::from([*v])).collect();
    for t in terms {
        let touched: Vec<usize> = (0..groups.len())
            .filter(|&i| t.variables().iter().any(|v| groups[i].contains(v)))
            .collect();
        if touched.len() > 1 {
            let mut merged = BTreeSet::new();
            for &i in touched.iter().rev() {
                merged.extend(groups.remove(i));
            }
            groups.push(merged);
        }
    }
    let mut out: Vec<Vec<Variable>> = groups.into_iter().map(|g| g.into_iter().collect()).collect();
    out.sort();
    out
}

/// The loss of `method` restricted to the terms of a group of networks, as a
/// function of their concatenated parameters.
pub struct LossObjective<'a> {
    problem: &'a LossProblem,
    method: Method,
    vars: Vec<Variable>,
    archs: Vec<MlpArchitecture>,
    offsets: Vec<usize>,
    dim: usize,
    data_vars: Vec<Variable>,
    last_terms: Vec<(LossTerm, f64)>,
    history: Vec<LossRecord>,
    iteration_offset: usize,
}

impl<'a> LossObjective<'a> {
    pub fn new(problem: &'a LossProblem, method: Method, nets: &[(Variable, MlpArchitecture)]) -> Self {
        let mut offsets = Vec::with_capacity(nets.len());
        let mut dim = 0;
        for (_, a) in nets {
            offsets.push(dim);
            dim += a.param_count();
        }
        let vars: Vec<Variable> = nets.iter().map(|(v, _)| *v).collect();
        let active = problem.active_terms(method);
        let data_vars = vars
            .iter()
            .copied()
            .filter(|v| active.contains(&data_term(*v)))
            .collect();
        Self {
            problem,
            method,
            vars,
            archs: nets.iter().map(|(_, a)| a.clone()).collect(),
            offsets,
            dim,
            data_vars,
            last_terms: Vec::new(),
            history: Vec::new(),
            iteration_offset: 0,
        }
    }

    /// Recorded iterates so far.
    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn split(&self, x: &[f64]) -> Result<Vec<ParameterVector>, OptimizeError> {
        if x.len() != self.dim {
            return Err(OptimizeError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.archs
            .iter()
            .zip(&self.offsets)
            .map(|(a, &o)| {
                Ok(ParameterVector::from_flat(
                    a.clone(),
                    x[o..o + a.param_count()].to_vec(),
                )?)
            })
            .collect()
    }
}

fn data_term(v: Variable) -> LossTerm {
    match v {
        Variable::K => LossTerm::DataK,
        Variable::H => LossTerm::DataH,
        Variable::C => LossTerm::DataC,
    }
}

impl Objective for LossObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64], batch: Option<&[Vec<usize>]>) -> Result<(f64, Vec<f64>), OptimizeError> {
        let params = self.split(x)?;
        let nets: Vec<(Variable, &ParameterVector)> = self.vars.iter().copied().zip(params.iter()).collect();
        let batch = batch.map(|b| {
            let mut db = DataBatch::default();
            for (v, idx) in self.data_vars.iter().zip(b) {
                match v {
                    Variable::K => db.k = Some(idx.clone()),
                    Variable::H => db.h = Some(idx.clone()),
                    Variable::C => db.c = Some(idx.clone()),
                }
            }
            db
        });
        let ev = evaluate_loss(self.method, &nets, self.problem, batch.as_ref())?;
        self.last_terms = ev.terms;
        let mut grad = Vec::with_capacity(self.dim);
        for (_, g) in ev.gradients {
            grad.extend(g);
        }
        Ok((ev.total, grad))
    }

    fn data_sizes(&self) -> Vec<usize> {
        self.data_vars.iter().map(|v| self.problem.data(*v).len()).collect()
    }

    fn record(&mut self, iteration: usize, loss: f64) {
        self.history.push(LossRecord {
            iteration: self.iteration_offset + iteration,
            total: loss,
            terms: self.last_terms.clone(),
        });
    }
}

struct StageOutput {
    iterations: usize,
    evaluations: usize,
    reason: TerminationReason,
    history: Vec<LossRecord>,
}

fn run_schedule(
    obj: &mut LossObjective<'_>,
    x0: Vec<f64>,
    schedule: Schedule,
    cfg: &ScheduleConfig,
    seed: u64,
) -> Result<(Vec<f64>, StageOutput), OptimizeError> {
    let adam_cfg = AdamConfig {
        seed,
        target_loss: match schedule {
            Schedule::Hybrid => Some(cfg.hybrid_switch_loss),
            _ => cfg.adam.target_loss,
        },
        ..cfg.adam
    };
    match schedule {
        Schedule::Lbfgs => {
            let r = lbfgs(obj, &x0, &cfg.lbfgs)?;
            Ok((
                r.params,
                StageOutput {
                    iterations: r.iterations,
                    evaluations: r.evaluations,
                    reason: r.reason,
                    history: Vec::new(),
                },
            ))
        }
        Schedule::Adam => {
            let r = adam(obj, &x0, &adam_cfg)?;
            Ok((
                r.params,
                StageOutput {
                    iterations: r.iterations,
                    evaluations: r.evaluations,
                    reason: r.reason,
                    history: Vec::new(),
                },
            ))
        }
        Schedule::Hybrid => {
            let a = adam(obj, &x0, &adam_cfg)?;
            obj.iteration_offset += a.iterations;
            let l = lbfgs(obj, &a.params, &cfg.lbfgs)?;
            Ok((
                l.params,
                StageOutput {
                    iterations: a.iterations + l.iterations,
                    evaluations: a.evaluations + l.evaluations,
                    reason: l.reason,
                    history: Vec::new(),
                },
            ))
        }
    }
}

/// Optimise every training group of `method` in turn, starting from `init`.
fn train_method(
    problem: &LossProblem,
    method: Method,
    schedule: Schedule,
    cfg: &ScheduleConfig,
    init: TrainedNetworks,
    seed: u64,
    first_iteration: usize,
) -> Result<(TrainedNetworks, StageOutput), OptimizeError> {
    problem.check_data(method)?;
    let mut nets = init;
    let mut total = StageOutput {
        iterations: 0,
        evaluations: 0,
        reason: TerminationReason::Converged,
        history: Vec::new(),
    };
    let terms = problem.active_terms(method);
    for group in training_groups(problem, method) {
        if !terms.iter().any(|t| t.variables().iter().all(|v| group.contains(v))) {
            continue;
        }
        let specs: Vec<(Variable, MlpArchitecture)> = group
            .iter()
            .map(|v| (*v, nets.get(*v).expect("initialised").architecture().clone()))
            .collect();
        let mut obj = LossObjective::new(problem, method, &specs);
        obj.iteration_offset = first_iteration + total.iterations;
        let x0: Vec<f64> = group
            .iter()
            .flat_map(|v| nets.get(*v).expect("initialised").as_slice().to_vec())
            .collect();
        let (x, out) = run_schedule(&mut obj, x0, schedule, cfg, seed)?;
        info!(
            "{} group {:?}: {} iterations, {}",
            method.name(),
            group,
            out.iterations,
            out.reason.name()
        );
        for (v, p) in group.iter().zip(obj.split(&x)?) {
            nets.set(*v, p);
        }
        total.iterations += out.iterations;
        total.evaluations += out.evaluations;
        total.reason = total.reason.max(out.reason);
        total.history.append(&mut obj.history);
    }
    Ok((nets, total))
}

/// Train the networks of a strategy from Xavier initialisations derived
/// from `seed`.
pub fn train(
    problem: &LossProblem,
    strategy: &TrainingStrategy,
    archs: &Architectures,
    cfg: &ScheduleConfig,
    seed: u64,
) -> Result<TrainOutput, OptimizeError> {
    problem.validate()?;
    let init = |vars: &[Variable]| {
        let mut n = TrainedNetworks::default();
        for v in vars {
            n.set(*v, ParameterVector::init_xavier(archs.get(*v), derive_seed(seed, *v)));
        }
        n
    };
    let method = strategy.method;
    let (nets, stage) = if method == Method::Mpinn && strategy.mpinn_mode == MpinnMode::Sequential {
        let (mut first, s1) = train_method(
            problem,
            Method::PinnDarcy,
            strategy.schedule,
            cfg,
            init(&[Variable::K, Variable::H]),
            seed,
            0,
        )?;
        first.set(
            Variable::C,
            ParameterVector::init_xavier(archs.get(Variable::C), derive_seed(seed, Variable::C)),
        );
        let (nets, s2) = train_method(problem, method, strategy.schedule, cfg, first, seed, s1.iterations)?;
        (
            nets,
            StageOutput {
                iterations: s1.iterations + s2.iterations,
                evaluations: s1.evaluations + s2.evaluations,
                reason: s1.reason.max(s2.reason),
                history: [s1.history, s2.history].concat(),
            },
        )
    } else {
        train_method(
            problem,
            method,
            strategy.schedule,
            cfg,
            init(&problem.method_variables(method)),
            seed,
            0,
        )?
    };
    let ev = evaluate_loss(method, &nets.present(), problem, None)?;
    Ok(TrainOutput {
        networks: nets,
        final_loss: ev.total,
        terms: ev.terms,
        iterations: stage.iterations,
        evaluations: stage.evaluations,
        reason: stage.reason,
        history: stage.history,
    })
}
