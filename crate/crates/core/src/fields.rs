//! Reference conductivity fields and grid sampling.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::DomainSpec;
use crate::refsolver::FieldGrid;
use crate::Point;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid random field specification: {0}")]
    InvalidSpec(String),
    #[error("circulant embedding is not positive semi-definite (min eigenvalue {min_eigenvalue:e}) after {attempts} enlargements")]
    Embedding { min_eigenvalue: f64, attempts: usize },
    #[error("point ({x1}, {x2}) lies outside the domain")]
    OutsideDomain { x1: f64, x2: f64 },
}

/// `K(x) = 0.5 sin(4 pi x1) sin(4 pi x2) + 1`.
pub fn analytic_k(p: Point) -> f64 {
    0.5 * (4.0 * PI * p[0]).sin() * (4.0 * PI * p[1]).sin() + 1.0
}

pub fn analytic_k_grid(nx: usize, ny: usize, domain: DomainSpec) -> FieldGrid {
    FieldGrid::from_fn(nx, ny, domain, analytic_k)
}

/// Decay law of the log-conductivity covariance in the distance `r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    /// `sigma2 * exp(-r / (2 lambda^2))`
    #[default]
    Literal,
    /// `sigma2 * exp(-r^2 / (2 lambda^2))`
    Squared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    pub lambda: f64,
    #[serde(default = "unit")]
    pub sigma2: f64,
    pub seed: u64,
    #[serde(default)]
    pub form: CovarianceForm,
}

fn unit() -> f64 {
    1.0
}

impl GrfSpec {
    pub fn new(lambda: f64, seed: u64) -> Self {
        Self {
            lambda,
            sigma2: 1.0,
            seed,
            form: CovarianceForm::Literal,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(FieldError::InvalidSpec(format!("lambda = {}", self.lambda)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(FieldError::InvalidSpec(format!("sigma2 = {}", self.sigma2)));
        }
        Ok(())
    }

    pub fn covariance(&self, r: f64) -> f64 {
        let s = 2.0 * self.lambda * self.lambda;
        match self.form {
            CovarianceForm::Literal => self.sigma2 * (-r / s).exp(),
            CovarianceForm::Squared => self.sigma2 * (-r * r / s).exp(),
        }
    }
}

/// Spectrum of the covariance on a periodic extension of the grid.
#[derive(Clone, Debug)]
pub struct CirculantEmbedding {
    pub mx: usize,
    pub my: usize,
    /// Eigenvalues of the embedded covariance matrix, clipped at zero.
    pub eigenvalues: Vec<f64>,
    /// Most negative eigenvalue before clipping (0 if none).
    pub min_eigenvalue: f64,
}

/// Largest tolerated negative eigenvalue relative to the largest one.
const NEGATIVE_TOLERANCE: f64 = 1e-10;
const MAX_ENLARGEMENTS: usize = 3;

fn fft2(data: &mut [Complex64], mx: usize, my: usize, planner: &mut FftPlanner<f64>) {
    let row = planner.plan_fft_forward(mx);
    row.process(data);
    let col = planner.plan_fft_forward(my);
    let mut buf = vec![Complex64::new(0.0, 0.0); my];
    for i in 0..mx {
        for j in 0..my {
            buf[j] = data[j * mx + i];
        }
        col.process(&mut buf);
        for j in 0..my {
            data[j * mx + i] = buf[j];
        }
    }
}

impl CirculantEmbedding {
    /// Embed on a `2 p nx x 2 p ny` torus, doubling `p` while the spectrum
    /// has significantly negative eigenvalues.
    pub fn new(nx: usize, ny: usize, domain: &DomainSpec, spec: &GrfSpec) -> Result<Self, FieldError> {
        spec.validate()?;
        let dx = domain.l1 / nx as f64;
        let dy = domain.l2 / ny as f64;
        let mut planner = FftPlanner::new();
        let mut worst = 0.0;
        for attempt in 0..=MAX_ENLARGEMENTS {
            let p = 1usize << attempt;
            let (mx, my) = (2 * p * nx, 2 * p * ny);
            let mut c = vec![Complex64::new(0.0, 0.0); mx * my];
            for b in 0..my {
                let ly = b.min(my - b) as f64 * dy;
                for a in 0..mx {
                    let lx = a.min(mx - a) as f64 * dx;
                    c[b * mx + a].re = spec.covariance(lx.hypot(ly));
                }
            }
            fft2(&mut c, mx, my, &mut planner);
            let max = c.iter().fold(0.0f64, |m, z| m.max(z.re));
            let min = c.iter().fold(f64::INFINITY, |m, z| m.min(z.re));
            if min >= -NEGATIVE_TOLERANCE * max {
                return Ok(Self {
                    mx,
                    my,
                    eigenvalues: c.iter().map(|z| z.re.max(0.0)).collect(),
                    min_eigenvalue: min.min(0.0),
                });
            }
            worst = min;
        }
        Err(FieldError::Embedding {
            min_eigenvalue: worst,
            attempts: MAX_ENLARGEMENTS,
        })
    }

    /// Covariance between grid points at index lag `(a, b)` implied by the
    /// clipped spectrum.
    pub fn implied_covariance(&self, a: usize, b: usize) -> f64 {
        let n = (self.mx * self.my) as f64;
        let mut acc = 0.0;
        for kb in 0..self.my {
            for ka in 0..self.mx {
                let phase = 2.0 * PI * ((ka * a) as f64 / self.mx as f64 + (kb * b) as f64 / self.my as f64);
                acc += self.eigenvalues[kb * self.mx + ka] * phase.cos();
            }
        }
        acc / n
    }
}

/// Zero-mean stationary Gaussian field `Y` at the cell centres of an
/// `nx x ny` grid, by circulant embedding.
pub fn sample_grf(nx: usize, ny: usize, domain: DomainSpec, spec: &GrfSpec) -> Result<FieldGrid, FieldError> {
    spec.validate()?;
    if spec.sigma2 == 0.0 {
        return Ok(FieldGrid::constant(nx, ny, domain, 0.0));
    }
    let emb = CirculantEmbedding::new(nx, ny, &domain, spec)?;
    let (mx, my) = (emb.mx, emb.my);
    let n = (mx * my) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut z: Vec<Complex64> = emb
        .eigenvalues
        .iter()
        .map(|l| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(a, b) * (l / n).sqrt()
        })
        .collect();
    fft2(&mut z, mx, my, &mut FftPlanner::new());
    let mut values = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            values.push(z[j * mx + i].re);
        }
    }
    Ok(FieldGrid { nx, ny, domain, values })
}

/// `K = exp(Y)` for a sampled Gaussian field `Y`.
pub fn lognormal_k(nx: usize, ny: usize, domain: DomainSpec, spec: &GrfSpec) -> Result<FieldGrid, FieldError> {
    Ok(sample_grf(nx, ny, domain, spec)?.map(f64::exp))
}

/// Fractional cell-centre coordinate along one axis, clamped to the edge
/// centres and snapped onto centres it hits up to rounding.
fn axis_coordinate(x: f64, h: f64, n: usize) -> (usize, f64) {
    let mut f = (x / h - 0.5).clamp(0.0, (n - 1) as f64);
    let r = f.round();
    if (f - r).abs() < 1e-9 {
        f = r;
    }
    let i0 = (f.floor() as usize).min(n.saturating_sub(2));
    (i0, f - i0 as f64)
}

/// Bilinear interpolation of cell-centred values. Within half a cell of the
/// boundary the field is extended by its edge values.
pub fn bilinear_sample(field: &FieldGrid, points: &[Point]) -> Result<Vec<f64>, FieldError> {
    let (dx, dy) = (field.dx(), field.dy());
    points
        .iter()
        .map(|p| {
            if !field.domain.contains(*p) {
                return Err(FieldError::OutsideDomain { x1: p[0], x2: p[1] });
            }
            let (i, tx) = axis_coordinate(p[0], dx, field.nx);
            let (j, ty) = axis_coordinate(p[1], dy, field.ny);
            let i1 = (i + 1).min(field.nx - 1);
            let j1 = (j + 1).min(field.ny - 1);
            let v00 = field.at(i, j);
            let v10 = field.at(i1, j);
            let v01 = field.at(i, j1);
            let v11 = field.at(i1, j1);
            let lo = if tx == 0.0 { v00 } else { v00 + tx * (v10 - v00) };
            let hi = if tx == 0.0 { v01 } else { v01 + tx * (v11 - v01) };
            Ok(if ty == 0.0 { lo } else { lo + ty * (hi - lo) })
        })
        .collect()
}
