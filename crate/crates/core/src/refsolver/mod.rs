//! Cell-centred finite-volume solver for the steady head and concentration
//! fields that serve as ground truth.

mod linear;

pub use linear::{banded_lu_solve, bicgstab, linear_solve, FiveBand, DIRECT_LIMIT};

use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::physics::{BoundarySpec, DomainSpec, PhysicalParams};
use crate::Point;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("conductivity must be positive, got {value} in cell {index}")]
    NonPositiveConductivity { index: usize, value: f64 },
    #[error("singular system: pivot {pivot:e} in row {row}")]
    Singular { row: usize, pivot: f64 },
    #[error("linear solver did not converge after {iterations} iterations (last residual {:e})", residuals.last().copied().unwrap_or(f64::NAN))]
    NotConverged { iterations: usize, residuals: Vec<f64> },
    #[error("vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Cell-centred scalar field, row-major with `x2` as the outer index.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub domain: DomainSpec,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub const DEFAULT_NX: usize = 256;
    pub const DEFAULT_NY: usize = 128;

    pub fn new(nx: usize, ny: usize, domain: DomainSpec, values: Vec<f64>) -> Result<Self, SolverError> {
        if nx == 0 || ny == 0 {
            return Err(SolverError::InvalidGrid(format!("{nx} x {ny} cells")));
        }
        if values.len() != nx * ny {
            return Err(SolverError::Dimension {
                expected: nx * ny,
                got: values.len(),
            });
        }
        Ok(Self { nx, ny, domain, values })
    }

    pub fn constant(nx: usize, ny: usize, domain: DomainSpec, value: f64) -> Self {
        Self {
            nx,
            ny,
            domain,
            values: vec![value; nx * ny],
        }
    }

    /// Evaluate `f` at every cell centre.
    pub fn from_fn(nx: usize, ny: usize, domain: DomainSpec, f: impl Fn(Point) -> f64) -> Self {
        let mut g = Self::constant(nx, ny, domain, 0.0);
        for k in 0..nx * ny {
            g.values[k] = f(g.center(k));
        }
        g
    }

    pub fn dx(&self) -> f64 {
        self.domain.l1 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.domain.l2 / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn center(&self, k: usize) -> Point {
        let (i, j) = (k % self.nx, k / self.nx);
        [(i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy()]
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|k| self.center(k)).collect()
    }

    pub fn same_geometry(&self, other: &FieldGrid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.domain == other.domain
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|v| f(*v)).collect(),
            ..self.clone()
        }
    }

    /// Text format: a header line `nx ny l1 l2`, then the values in
    /// row-major order, one per line, with 17 significant digits.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut s = String::with_capacity(24 * (self.len() + 1));
        let _ = writeln!(
            s,
            "{} {} {:.16e} {:.16e}",
            self.nx, self.ny, self.domain.l1, self.domain.l2
        );
        for v in &self.values {
            let _ = writeln!(s, "{v:.16e}");
        }
        w.write_all(s.as_bytes())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, SolverError> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| SolverError::Format("missing header".into()))??;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(SolverError::Format(format!("header `{header}`")));
        }
        let parse_u = |s: &str| s.parse::<usize>().map_err(|e| SolverError::Format(format!("{s}: {e}")));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| SolverError::Format(format!("{s}: {e}")));
        let (nx, ny) = (parse_u(h[0])?, parse_u(h[1])?);
        let domain = DomainSpec {
            l1: parse_f(h[2])?,
            l2: parse_f(h[3])?,
        };
        let mut values = Vec::with_capacity(nx * ny);
        for line in lines {
            for tok in line?.split_whitespace() {
                values.push(parse_f(tok)?);
            }
        }
        Self::new(nx, ny, domain, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SolverError> {
        let f = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SolverError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Face-normal pore velocities. `vx[j * (nx + 1) + i]` sits on the face left
/// of cell `i` in row `j`; `vy[j * nx + i]` sits on the face below cell
/// `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub nx: usize,
    pub ny: usize,
    pub domain: DomainSpec,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VelocityField {
    pub fn uniform(nx: usize, ny: usize, domain: DomainSpec, v0: f64) -> Self {
        Self {
            nx,
            ny,
            domain,
            vx: vec![v0; (nx + 1) * ny],
            vy: vec![0.0; nx * (ny + 1)],
        }
    }

    pub fn vx_at(&self, i: usize, j: usize) -> f64 {
        self.vx[j * (self.nx + 1) + i]
    }

    pub fn vy_at(&self, i: usize, j: usize) -> f64 {
        self.vy[j * self.nx + i]
    }

    /// Net outflow of pore velocity times face length for every cell.
    pub fn divergence(&self) -> Vec<f64> {
        let dx = self.domain.l1 / self.nx as f64;
        let dy = self.domain.l2 / self.ny as f64;
        let mut d = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                d[j * self.nx + i] =
                    (self.vx_at(i + 1, j) - self.vx_at(i, j)) * dy + (self.vy_at(i, j + 1) - self.vy_at(i, j)) * dx;
            }
        }
        d
    }

    /// Velocity magnitude at cell centres from averaged face values.
    pub fn cell_speed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                let u = 0.5 * (self.vx_at(i, j) + self.vx_at(i + 1, j));
                let v = 0.5 * (self.vy_at(i, j) + self.vy_at(i, j + 1));
                out[j * self.nx + i] = u.hypot(v);
            }
        }
        out
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Steady Darcy flow: prescribed inflow `q` through `x1 = 0`, head `H2` on
/// `x1 = L1` (imposed half a cell from the last centre), no flow on the
/// lateral sides. Face conductivities are harmonic means.
pub fn solve_darcy(
    k: &FieldGrid,
    bc: &BoundarySpec,
    params: &PhysicalParams,
    tol: f64,
) -> Result<(FieldGrid, VelocityField), SolverError> {
    if let Some((index, &value)) = k.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(SolverError::NonPositiveConductivity { index, value });
    }
    let (nx, ny) = (k.nx, k.ny);
    let (dx, dy) = (k.dx(), k.dy());
    let mut a = FiveBand::zeros(nx, ny);
    let mut b = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let r = k.index(i, j);
            let kc = k.values[r];
            if i > 0 {
                let t = harmonic(kc, k.at(i - 1, j)) * dy / dx;
                a.c[r] += t;
                a.w[r] = -t;
            } else {
                b[r] += bc.q * dy;
            }
            if i + 1 < nx {
                let t = harmonic(kc, k.at(i + 1, j)) * dy / dx;
                a.c[r] += t;
                a.e[r] = -t;
            } else {
                let t = kc * dy / (0.5 * dx);
                a.c[r] += t;
                b[r] += t * bc.h2;
            }
            if j > 0 {
                let t = harmonic(kc, k.at(i, j - 1)) * dx / dy;
                a.c[r] += t;
                a.s[r] = -t;
            }
            if j + 1 < ny {
                let t = harmonic(kc, k.at(i, j + 1)) * dx / dy;
                a.c[r] += t;
                a.n[r] = -t;
            }
        }
    }
    let h = linear_solve(&a, &b, tol)?;
    let h = FieldGrid::new(nx, ny, k.domain, h)?;

    let inv_phi = 1.0 / params.phi;
    let mut v = VelocityField {
        nx,
        ny,
        domain: k.domain,
        vx: vec![0.0; (nx + 1) * ny],
        vy: vec![0.0; nx * (ny + 1)],
    };
    for j in 0..ny {
        v.vx[j * (nx + 1)] = bc.q * inv_phi;
        for i in 1..nx {
            let kf = harmonic(k.at(i - 1, j), k.at(i, j));
            v.vx[j * (nx + 1) + i] = kf * (h.at(i - 1, j) - h.at(i, j)) / dx * inv_phi;
        }
        v.vx[j * (nx + 1) + nx] = k.at(nx - 1, j) * (h.at(nx - 1, j) - bc.h2) / (0.5 * dx) * inv_phi;
    }
    for j in 1..ny {
        for i in 0..nx {
            let kf = harmonic(k.at(i, j - 1), k.at(i, j));
            v.vy[j * nx + i] = kf * (h.at(i, j - 1) - h.at(i, j)) / dy * inv_phi;
        }
    }
    Ok((h, v))
}

/// Outlet condition for the transport solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum AdeOutlet {
    /// Zero concentration gradient (the physical problem).
    #[default]
    ZeroGradient,
    /// Fixed concentration, imposed half a cell from the last centre.
    Dirichlet(f64),
}

/// Steady advection-dispersion transport in a given velocity field:
/// first-order upwind advection, central dispersion with face coefficients
/// from the averaged cell speeds, inlet concentration `C0(x2)` imposed half
/// a cell from the first centre, zero gradient on the lateral sides.
pub fn solve_ade(
    v: &VelocityField,
    bc: &BoundarySpec,
    params: &PhysicalParams,
    outlet: AdeOutlet,
    tol: f64,
) -> Result<FieldGrid, SolverError> {
    let (nx, ny) = (v.nx, v.ny);
    let dom = v.domain;
    let (dx, dy) = (dom.l1 / nx as f64, dom.l2 / ny as f64);
    let speed = v.cell_speed();
    let dm = params.molecular();
    let d11 = |s: f64| dm + params.alpha_l * s;
    let d22 = |s: f64| dm + params.alpha_t * s;

    let mut a = FiveBand::zeros(nx, ny);
    let mut b = vec![0.0; nx * ny];
    for j in 0..ny {
        let x2 = (j as f64 + 0.5) * dy;
        for i in 0..nx {
            let r = j * nx + i;
            let sc = speed[r];
            // West face: outward normal -x1.
            let u = -v.vx_at(i, j) * dy;
            if i > 0 {
                let g = d11(0.5 * (sc + speed[r - 1])) * dy / dx;
                a.c[r] += g + u.max(0.0);
                a.w[r] = -g + u.min(0.0);
            } else {
                let c0 = bc.inlet_concentration(x2, &dom);
                let g = d11(sc) * dy / (0.5 * dx);
                a.c[r] += g + u.max(0.0);
                b[r] += (g - u.min(0.0)) * c0;
            }
            // East face.
            let u = v.vx_at(i + 1, j) * dy;
            if i + 1 < nx {
                let g = d11(0.5 * (sc + speed[r + 1])) * dy / dx;
                a.c[r] += g + u.max(0.0);
                a.e[r] = -g + u.min(0.0);
            } else {
                match outlet {
                    // Ghost value equals the cell value: no dispersive flux,
                    // advection in either direction carries C of the cell.
                    AdeOutlet::ZeroGradient => a.c[r] += u,
                    AdeOutlet::Dirichlet(cb) => {
                        let g = d11(sc) * dy / (0.5 * dx);
                        a.c[r] += g + u.max(0.0);
                        b[r] += (g - u.min(0.0)) * cb;
                    }
                }
            }
            // South face.
            let u = -v.vy_at(i, j) * dx;
            if j > 0 {
                let g = d22(0.5 * (sc + speed[r - nx])) * dx / dy;
                a.c[r] += g + u.max(0.0);
                a.s[r] = -g + u.min(0.0);
            } else {
                a.c[r] += u;
            }
            // North face.
            let u = v.vy_at(i, j + 1) * dx;
            if j + 1 < ny {
                let g = d22(0.5 * (sc + speed[r + nx])) * dx / dy;
                a.c[r] += g + u.max(0.0);
                a.n[r] = -g + u.min(0.0);
            } else {
                a.c[r] += u;
            }
        }
    }
    let c = linear_solve(&a, &b, tol)?;
    FieldGrid::new(nx, ny, dom, c)
}

/// Solute fluxes through the inlet and outlet boundaries of a transport
/// solution with a zero-gradient outlet: `(inflow at x1 = 0, outflow at
/// x1 = L1)`, each the sum of advective and dispersive parts.
pub fn solute_boundary_fluxes(
    c: &FieldGrid,
    v: &VelocityField,
    bc: &BoundarySpec,
    params: &PhysicalParams,
) -> (f64, f64) {
    let (nx, ny) = (c.nx, c.ny);
    let (dx, dy) = (c.dx(), c.dy());
    let speed = v.cell_speed();
    let mut inflow = 0.0;
    let mut outflow = 0.0;
    for j in 0..ny {
        let x2 = (j as f64 + 0.5) * dy;
        let c0 = bc.inlet_concentration(x2, &c.domain);
        let r = j * nx;
        let u = v.vx_at(0, j);
        let adv = if u >= 0.0 { u * c0 } else { u * c.values[r] };
        let d = params.molecular() + params.alpha_l * speed[r];
        inflow += (adv + d * (c0 - c.values[r]) / (0.5 * dx)) * dy;
        outflow += v.vx_at(nx, j) * c.values[r + nx - 1] * dy;
    }
    (inflow, outflow)
}

/// Head and concentration reference fields generated from one K field.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFields {
    pub k: FieldGrid,
    pub h: FieldGrid,
    pub c: FieldGrid,
    pub velocity: VelocityField,
}

pub fn solve_reference(
    k: FieldGrid,
    bc: &BoundarySpec,
    params: &PhysicalParams,
    tol: f64,
) -> Result<ReferenceFields, SolverError> {
    let (h, velocity) = solve_darcy(&k, bc, params, tol)?;
    let c = solve_ade(&velocity, bc, params, AdeOutlet::ZeroGradient, tol)?;
    Ok(ReferenceFields { k, h, c, velocity })
}
