//! Sparse five-point systems on structured grids and their solvers.

use super::SolverError;

/// Matrix of a five-point stencil on an `nx x ny` grid with row-major
/// (y-outer) unknown ordering. Row `k` reads
/// `c[k] x[k] + w[k] x[k-1] + e[k] x[k+1] + s[k] x[k-nx] + n[k] x[k+nx]`;
/// coefficients that would reach outside the grid must be zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FiveBand {
    pub nx: usize,
    pub ny: usize,
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    pub e: Vec<f64>,
    pub s: Vec<f64>,
    pub n: Vec<f64>,
}

/// Unknown count at or below which [`linear_solve`] factorises directly.
pub const DIRECT_LIMIT: usize = 20_000;

impl FiveBand {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let z = vec![0.0; nx * ny];
        Self {
            nx,
            ny,
            c: z.clone(),
            w: z.clone(),
            e: z.clone(),
            s: z.clone(),
            n: z,
        }
    }

    pub fn identity(nx: usize, ny: usize) -> Self {
        let mut a = Self::zeros(nx, ny);
        a.c.iter_mut().for_each(|v| *v = 1.0);
        a
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nx = self.nx;
        let n = self.dim();
        for k in 0..n {
            let mut acc = self.c[k] * x[k];
            if k >= 1 {
                acc += self.w[k] * x[k - 1];
            }
            if k + 1 < n {
                acc += self.e[k] * x[k + 1];
            }
            if k >= nx {
                acc += self.s[k] * x[k - nx];
            }
            if k + nx < n {
                acc += self.n[k] * x[k + nx];
            }
            y[k] = acc;
        }
    }

    /// The same system with unknowns ordered x-outer, so that the band
    /// half-width becomes `ny`.
    pub fn transposed(&self) -> Self {
        let (nx, ny) = (self.nx, self.ny);
        let mut t = Self::zeros(ny, nx);
        for j in 0..ny {
            for i in 0..nx {
                let (k, q) = (j * nx + i, i * ny + j);
                t.c[q] = self.c[k];
                t.w[q] = self.s[k];
                t.e[q] = self.n[k];
                t.s[q] = self.w[k];
                t.n[q] = self.e[k];
            }
        }
        t
    }

    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; self.dim()];
        self.apply(x, &mut ax);
        b.iter().zip(&ax).map(|(b, a)| b - a).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct solve for small systems, Jacobi-preconditioned BiCGStab otherwise.
pub fn linear_solve(a: &FiveBand, b: &[f64], tol: f64) -> Result<Vec<f64>, SolverError> {
    if a.dim() <= DIRECT_LIMIT {
        banded_lu_solve(a, b)
    } else {
        bicgstab(a, b, tol, 50_000)
    }
}

/// Gaussian elimination without pivoting on the band of half-width
/// `min(nx, ny)`. Intended for diagonally dominant systems; a pivot smaller
/// than 1e-10 times the original diagonal entry is reported as singular.
pub fn banded_lu_solve(a: &FiveBand, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if a.nx > a.ny {
        let (nx, ny) = (a.nx, a.ny);
        let bt: Vec<f64> = (0..n).map(|q| b[(q % ny) * nx + q / ny]).collect();
        let xt = row_major_lu(&a.transposed(), &bt)?;
        return Ok((0..n).map(|k| xt[(k % nx) * ny + k / nx]).collect());
    }
    row_major_lu(a, b)
}

fn row_major_lu(a: &FiveBand, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = a.dim();
    let p = a.nx;
    let width = 2 * p + 1;
    let mut band = vec![0.0; n * width];
    // band[r * width + (col - r + p)]
    let at = |r: usize, c: usize| r * width + c + p - r;
    for r in 0..n {
        band[at(r, r)] = a.c[r];
        if r >= 1 {
            band[at(r, r - 1)] = a.w[r];
        }
        if r + 1 < n {
            band[at(r, r + 1)] = a.e[r];
        }
        if r >= p {
            band[at(r, r - p)] = a.s[r];
        }
        if r + p < n {
            band[at(r, r + p)] = a.n[r];
        }
    }
    let mut x = b.to_vec();
    for k in 0..n {
        let pivot = band[at(k, k)];
        let scale = a.c[k].abs().max(f64::MIN_POSITIVE);
        if !(pivot.abs() > 1e-10 * scale) {
            return Err(SolverError::Singular { row: k, pivot });
        }
        let end = (k + p + 1).min(n);
        for i in k + 1..end {
            let l = band[at(i, k)] / pivot;
            if l == 0.0 {
                continue;
            }
            band[at(i, k)] = 0.0;
            for c in k + 1..end {
                band[at(i, c)] -= l * band[at(k, c)];
            }
            x[i] -= l * x[k];
        }
    }
    for k in (0..n).rev() {
        let end = (k + p + 1).min(n);
        let mut acc = x[k];
        for c in k + 1..end {
            acc -= band[at(k, c)] * x[c];
        }
        x[k] = acc / band[at(k, k)];
    }
    Ok(x)
}

/// Right-preconditioned BiCGStab with a Jacobi preconditioner, iterated until
/// the true relative residual `|b - Ax| / |b|` is below `tol`.
pub fn bicgstab(a: &FiveBand, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, SolverError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a.c.iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precond = |v: &[f64], out: &mut [f64]| {
        for ((o, v), d) in out.iter_mut().zip(v).zip(&inv_diag) {
            *o = v * d;
        }
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut p, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut y, mut z, mut s, mut t) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    // Restart from the current iterate when the recurrence breaks down or
    // drifts from the true residual.
    while iterations < max_iter {
        let mut r = a.residual(&x, b);
        let rel = norm(&r) / bnorm;
        history.push(rel);
        if rel < tol {
            return Ok(x);
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        loop {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < 1e-300 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precond(&p, &mut y);
            a.apply(&y, &mut v);
            let denom = dot(&r_hat, &v);
            if denom == 0.0 {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) / bnorm < 0.1 * tol {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                break;
            }
            precond(&s, &mut z);
            a.apply(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            let rel = norm(&r) / bnorm;
            if !rel.is_finite() {
                return Err(SolverError::NotConverged {
                    iterations,
                    residuals: history,
                });
            }
            if rel < 0.1 * tol {
                break;
            }
        }
    }
    let rel = norm(&a.residual(&x, b)) / bnorm;
    history.push(rel);
    if rel < tol {
        return Ok(x);
    }
    Err(SolverError::NotConverged {
        iterations,
        residuals: history,
    })
}
