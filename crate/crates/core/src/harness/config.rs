//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::fields::GrfSpec;
use crate::network::MlpArchitecture;
use crate::optimize::{Architectures, MpinnMode, Schedule, ScheduleConfig};
use crate::physics::{BoundarySpec, DispersionMode, DomainSpec, LossWeights, Method, PhysicalParams};
use crate::refsolver::FieldGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to the `experiment` column.
    pub experiment: String,
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub field: FieldSource,
    pub measurements: MeasurementConfig,
    #[serde(default)]
    pub residuals: ResidualConfig,
    pub architectures: Architectures,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub physics: PhysicalParams,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    Analytic {
        #[serde(default = "default_nx")]
        nx: usize,
        #[serde(default = "default_ny")]
        ny: usize,
    },
    Grf {
        #[serde(default = "default_nx")]
        nx: usize,
        #[serde(default = "default_ny")]
        ny: usize,
        #[serde(flatten)]
        spec: GrfSpec,
    },
    /// Reference fields read from files. Missing head or concentration
    /// files are computed from the conductivity.
    Files {
        k_file: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h_file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_file: Option<PathBuf>,
    },
}

fn default_nx() -> usize {
    FieldGrid::DEFAULT_NX
}

fn default_ny() -> usize {
    FieldGrid::DEFAULT_NY
}

impl FieldSource {
    /// Short description for the `field` column.
    pub fn label(&self) -> String {
        match self {
            FieldSource::Analytic { .. } => "analytic".into(),
            FieldSource::Grf { spec, .. } => format!("grf_l{}_s{}_seed{}", spec.lambda, spec.sigma2, spec.seed),
            FieldSource::Files { k_file, .. } => format!("file_{}", k_file.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    #[default]
    UniformRandom,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub n_k: usize,
    pub n_h: usize,
    #[serde(default)]
    pub n_c: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strategy: SelectionStrategy,
    /// Draw new locations for every replication seed instead of keeping
    /// them fixed across seeds.
    #[serde(default)]
    pub resample_per_seed: bool,
}

/// Points per boundary segment; the lateral entries count points on each
/// of the two lateral sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryCounts {
    pub flow_inlet: usize,
    pub flow_lateral: usize,
    pub flow_outlet: usize,
    pub solute_outlet: usize,
    pub solute_lateral: usize,
    pub solute_inlet: usize,
}

impl BoundaryCounts {
    pub fn uniform(n: usize) -> Self {
        Self {
            flow_inlet: n,
            flow_lateral: n,
            flow_outlet: n,
            solute_outlet: n,
            solute_lateral: n,
            solute_inlet: n,
        }
    }
}

impl Default for BoundaryCounts {
    fn default() -> Self {
        Self::uniform(64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub n_f_h: usize,
    pub n_f_c: usize,
    pub seed: u64,
    pub boundary: BoundaryCounts,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub schedule: Schedule,
    pub mpinn_mode: MpinnMode,
    pub dispersion: DispersionMode,
    pub velocity_delta: f64,
    /// Let the K network represent `ln K`.
    pub log_conductivity: bool,
    pub hybrid_switch_loss: f64,
    pub lbfgs: crate::optimize::LbfgsConfig,
    pub adam: crate::optimize::AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            schedule: Schedule::Lbfgs,
            mpinn_mode: MpinnMode::Sequential,
            dispersion: DispersionMode::Full,
            velocity_delta: 1e-8,
            log_conductivity: false,
            hybrid_switch_loss: s.hybrid_switch_loss,
            lbfgs: s.lbfgs,
            adam: s.adam,
        }
    }
}

impl TrainingConfig {
    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            lbfgs: self.lbfgs,
            adam: self.adam,
            hybrid_switch_loss: self.hybrid_switch_loss,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `N = N_K = N_h`.
    N,
    NK,
    NH,
    NC,
    /// Hidden width of every network, keeping each depth.
    #[serde(alias = "m_h")]
    Width,
    NFH,
    NFC,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Fill the `wall_time_s` column. Off by default so that reruns give
    /// byte-identical CSV files.
    pub wall_time: bool,
    /// Store trained parameters under `<out>/networks`.
    pub save_networks: bool,
    /// Include per-iteration loss histories in the JSON report.
    pub loss_history: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative field files resolve against the config file location.
        if let (FieldSource::Files { k_file, h_file, c_file }, Some(dir)) = (&mut cfg.field, path.parent()) {
            for p in std::iter::once(k_file)
                .chain(h_file.iter_mut())
                .chain(c_file.iter_mut())
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() {
            return err("no methods".into());
        }
        if self.seeds.is_empty() {
            return err("empty seed list".into());
        }
        self.physics
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.domain
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.boundary.c0_width > 0.0) {
            return err(format!("c0_width must be positive, got {}", self.boundary.c0_width));
        }
        if !(self.training.velocity_delta >= 0.0) || !(self.training.hybrid_switch_loss > 0.0) {
            return err("velocity_delta must be >= 0 and hybrid_switch_loss > 0".into());
        }
        self.training
            .lbfgs
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.training
            .adam
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match &self.field {
            FieldSource::Analytic { nx, ny } | FieldSource::Grf { nx, ny, .. } => {
                if *nx == 0 || *ny == 0 {
                    return err(format!("grid {nx} x {ny}"));
                }
                let cells = nx * ny;
                let m = &self.measurements;
                for (name, n) in [("n_k", m.n_k), ("n_h", m.n_h), ("n_c", m.n_c)] {
                    if n > cells {
                        return err(format!("{name} = {n} exceeds the {cells} grid cells"));
                    }
                }
                if let FieldSource::Grf { spec, .. } = &self.field {
                    spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                }
            }
            FieldSource::Files { k_file, h_file, c_file } => {
                for p in std::iter::once(k_file).chain(h_file).chain(c_file) {
                    if !p.is_file() {
                        return err(format!("field file {} not found", p.display()));
                    }
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return err("sweep has no values".into());
            }
            if s.axis == SweepAxis::Width && s.values.contains(&0) {
                return err("sweep widths must be positive".into());
            }
        }
        Ok(())
    }

    /// Copy of the configuration with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: usize) -> Result<Self, HarnessError> {
        let mut c = self.clone();
        c.sweep = None;
        match axis {
            SweepAxis::N => {
                c.measurements.n_k = value;
                c.measurements.n_h = value;
            }
            SweepAxis::NK => c.measurements.n_k = value,
            SweepAxis::NH => c.measurements.n_h = value,
            SweepAxis::NC => c.measurements.n_c = value,
            SweepAxis::NFH => c.residuals.n_f_h = value,
            SweepAxis::NFC => c.residuals.n_f_c = value,
            SweepAxis::Width => {
                let widen = |a: &MlpArchitecture| MlpArchitecture::uniform(value, a.hidden().len());
                let a = &self.architectures;
                c.architectures = Architectures {
                    k: widen(&a.k).map_err(|e| HarnessError::Config(e.to_string()))?,
                    h: widen(&a.h).map_err(|e| HarnessError::Config(e.to_string()))?,
                    c: widen(&a.c).map_err(|e| HarnessError::Config(e.to_string()))?,
                };
            }
        }
        c.validate()?;
        Ok(c)
    }
}
