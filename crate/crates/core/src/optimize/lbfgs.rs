use std::collections::VecDeque;

use log::debug;
use serde::{Deserialize, Serialize};

use super::{dot, max_norm, Objective, OptimizeError, OptimizeResult, TerminationReason};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Relative decrease `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` at or
    /// below which the run counts as converged.
    pub step_tolerance: f64,
    /// Bound on the max-norm of the gradient.
    pub gtol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 15_000,
            step_tolerance: f64::EPSILON * 1e7,
            gtol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 20,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let ok = self.memory > 0
            && self.step_tolerance >= 0.0
            && self.gtol >= 0.0
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.max_line_search_evals > 0;
        if ok {
            Ok(())
        } else {
            Err(OptimizeError::InvalidConfig(format!("{self:?}")))
        }
    }
}

struct Point {
    alpha: f64,
    f: f64,
    /// Directional derivative along the search direction.
    d: f64,
    g: Vec<f64>,
}

struct Probe<'a, O: Objective + ?Sized> {
    obj: &'a mut O,
    x: &'a [f64],
    dir: &'a [f64],
    evals: usize,
    buf: Vec<f64>,
}

impl<O: Objective + ?Sized> Probe<'_, O> {
    /// Evaluation failures (non-finite values) count as `f = +inf`.
    fn at(&mut self, alpha: f64) -> Point {
        self.evals += 1;
        for ((b, x), d) in self.buf.iter_mut().zip(self.x).zip(self.dir) {
            *b = x + alpha * d;
        }
        match self.obj.evaluate(&self.buf, None) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let d = dot(&g, self.dir);
                Point { alpha, f, d, g }
            }
            _ => Point {
                alpha,
                f: f64::INFINITY,
                d: f64::NAN,
                g: Vec::new(),
            },
        }
    }
}

/// Minimiser of the cubic through two points with slopes, or `None` when the
/// interpolant is degenerate.
fn cubic_min(a: &Point, b: &Point) -> Option<f64> {
    if !(a.f.is_finite() && b.f.is_finite() && a.d.is_finite() && b.d.is_finite()) {
        return None;
    }
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.d * b.d;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / (b.d - a.d + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Strong Wolfe line search: bracketing followed by a safeguarded cubic
/// zoom. Returns `None` when no acceptable step is found within the
/// evaluation budget.
fn strong_wolfe<O: Objective + ?Sized>(
    probe: &mut Probe<'_, O>,
    f0: f64,
    d0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<Point> {
    let budget = cfg.max_line_search_evals;
    let armijo = |p: &Point| p.f <= f0 + cfg.c1 * p.alpha * d0;
    let curvature = |p: &Point| p.d.abs() <= -cfg.c2 * d0;

    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        d: d0,
        g: Vec::new(),
    };
    let mut alpha = alpha0;
    let (mut lo, mut hi) = loop {
        if probe.evals >= budget {
            return None;
        }
        let cur = probe.at(alpha);
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            debug_assert!(armijo(&cur));
            return Some(cur);
        }
        if cur.d >= 0.0 {
            break (cur, prev);
        }
        alpha = cur.alpha * 2.0;
        prev = cur;
    };

    // Zoom: `lo` satisfies sufficient decrease and has the lowest f so far.
    while probe.evals < budget {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1e-300) {
            break;
        }
        let trial = cubic_min(&lo, &hi)
            .filter(|t| *t > a + 0.1 * width && *t < b - 0.1 * width)
            .unwrap_or(0.5 * (a + b));
        let cur = probe.at(trial);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                debug_assert!(armijo(&cur));
                return Some(cur);
            }
            if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    None
}

/// Limited-memory BFGS with a strong Wolfe line search.
///
/// On a line-search failure the curvature memory is discarded and the step
/// retried along steepest descent once; a second consecutive failure ends
/// the run with the best iterate seen.
pub fn lbfgs<O: Objective + ?Sized>(
    obj: &mut O,
    x0: &[f64],
    cfg: &LbfgsConfig,
) -> Result<OptimizeResult, OptimizeError> {
    cfg.validate()?;
    let n = obj.dim();
    if x0.len() != n {
        return Err(OptimizeError::Dimension {
            expected: n,
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.evaluate(&x, None)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::NonFiniteStart);
    }
    let mut evaluations = 1;
    obj.record(0, f);
    let mut history = Vec::new();
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut just_reset = false;
    let mut first = true;

    let reason = loop {
        if max_norm(&g) <= cfg.gtol {
            break TerminationReason::Converged;
        }
        if history.len() >= cfg.max_iters {
            break TerminationReason::MaxIters;
        }

        let mut dir = two_loop(&g, &mem);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            mem.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let alpha0 = if mem.is_empty() && first {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut probe = Probe {
            obj: &mut *obj,
            x: &x,
            dir: &dir,
            evals: 0,
            buf: vec![0.0; n],
        };
        let found = strong_wolfe(&mut probe, f, slope, alpha0, cfg);
        evaluations += probe.evals;

        let Some(p) = found else {
            if just_reset {
                break TerminationReason::LineSearchFailure;
            }
            debug!("line search failed at iteration {}; resetting memory", history.len());
            mem.clear();
            just_reset = true;
            first = true;
            continue;
        };
        just_reset = false;
        first = false;

        let s: Vec<f64> = dir.iter().map(|d| p.alpha * d).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > f64::EPSILON * yy && sy > 0.0 {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s.clone(), y, 1.0 / sy));
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let decrease = (f - p.f) / f.abs().max(p.f.abs()).max(1.0);
        f = p.f;
        g = p.g;
        history.push(f);
        obj.record(history.len(), f);
        if decrease <= cfg.step_tolerance {
            break TerminationReason::Converged;
        }
    };

    Ok(OptimizeResult {
        params: x,
        loss: f,
        iterations: history.len(),
        evaluations,
        reason,
        history,
    })
}

/// `-H g` by the two-loop recursion with `H0 = (s'y / y'y) I`.
fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = vec![0.0; mem.len()];
    for (i, (s, y, rho)) in mem.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        for (qj, yj) in q.iter_mut().zip(y) {
            *qj -= a * yj;
        }
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, (s, y, rho)) in mem.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qj, sj) in q.iter_mut().zip(s) {
            *qj += (alphas[i] - b) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
