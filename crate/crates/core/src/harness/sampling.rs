//! Seeded selection of measurement locations and residual points.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BoundaryCounts, SelectionStrategy};
use super::HarnessError;
use crate::physics::{DomainSpec, MeasurementSet, ResidualPointSet, Variable};
use crate::refsolver::FieldGrid;
use crate::Point;

/// Relative distance of boundary points from the segment end points.
pub const BOUNDARY_INSET: f64 = 1e-6;

/// `n` distinct cell centres of `field` and their values.
pub fn select_measurements(
    field: &FieldGrid,
    variable: Variable,
    n: usize,
    seed: u64,
    strategy: SelectionStrategy,
) -> Result<MeasurementSet, HarnessError> {
    let cells = field.len();
    if n > cells {
        return Err(HarnessError::Config(format!(
            "{n} {variable} measurements requested from {cells} cells"
        )));
    }
    let idx: Vec<usize> = match strategy {
        SelectionStrategy::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, cells, n).into_vec()
        }
        SelectionStrategy::Grid => grid_cells(field, n),
    };
    let points = idx.iter().map(|&k| field.center(k)).collect();
    let values = idx.iter().map(|&k| field.values[k]).collect();
    MeasurementSet::new(variable, points, values).map_err(HarnessError::from)
}

/// Cells under a regular lattice of about `n` points whose aspect ratio
/// follows the grid.
fn grid_cells(field: &FieldGrid, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let aspect = field.nx as f64 / field.ny as f64;
    let mut m1 = ((n as f64 * aspect).sqrt().round() as usize).clamp(1, field.nx);
    let mut m2 = n.div_ceil(m1);
    if m2 > field.ny {
        m2 = field.ny;
        m1 = n.div_ceil(m2);
    }
    let mut out = Vec::with_capacity(n);
    'rows: for b in 0..m2 {
        let j = ((b as f64 + 0.5) / m2 as f64 * field.ny as f64) as usize;
        for a in 0..m1 {
            if out.len() == n {
                break 'rows;
            }
            let i = ((a as f64 + 0.5) / m1 as f64 * field.nx as f64) as usize;
            out.push(field.index(i.min(field.nx - 1), j.min(field.ny - 1)));
        }
    }
    out
}

fn interior(rng: &mut ChaCha8Rng, domain: &DomainSpec, n: usize) -> Vec<Point> {
    let mut draw = |l: f64| loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u * l;
        }
    };
    (0..n).map(|_| [draw(domain.l1), draw(domain.l2)]).collect()
}

/// `n` equally spaced coordinates in `[inset, l - inset]`.
fn spaced(n: usize, l: f64) -> Vec<f64> {
    let inset = BOUNDARY_INSET * l;
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * l],
        _ => (0..n)
            .map(|i| inset + (l - 2.0 * inset) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn vertical(x1: f64, n: usize, domain: &DomainSpec) -> Vec<Point> {
    spaced(n, domain.l2).into_iter().map(|y| [x1, y]).collect()
}

fn lateral(n: usize, domain: &DomainSpec) -> Vec<Point> {
    let xs = spaced(n, domain.l1);
    let mut pts: Vec<Point> = xs.iter().map(|&x| [x, 0.0]).collect();
    pts.extend(xs.iter().map(|&x| [x, domain.l2]));
    pts
}

/// Uniform random interior points and equally spaced boundary points.
pub fn select_residual_points(
    domain: &DomainSpec,
    n_interior_h: usize,
    n_interior_c: usize,
    boundary: &BoundaryCounts,
    seed: u64,
) -> ResidualPointSet {
    let mut rng_h = ChaCha8Rng::seed_from_u64(seed);
    let mut rng_c = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE);
    ResidualPointSet {
        interior_h: interior(&mut rng_h, domain, n_interior_h),
        interior_c: interior(&mut rng_c, domain, n_interior_c),
        flow_inlet: vertical(0.0, boundary.flow_inlet, domain),
        flow_lateral: lateral(boundary.flow_lateral, domain),
        flow_outlet: vertical(domain.l1, boundary.flow_outlet, domain),
        solute_outlet: vertical(domain.l1, boundary.solute_outlet, domain),
        solute_lateral: lateral(boundary.solute_lateral, domain),
        solute_inlet: vertical(0.0, boundary.solute_inlet, domain),
    }
}
