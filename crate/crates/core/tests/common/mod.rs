#![allow(dead_code)]

use mpinn::network::{MlpArchitecture, ParameterVector};
use mpinn::physics::{
    BoundarySpec, DispersionMode, DomainSpec, LossProblem, MeasurementSet, Method, PhysicalParams, ResidualPointSet,
    Variable,
};
use mpinn::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b|_2 / |b|_2`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + step;
            let fp = f(&xp);
            xp[i] = x[i] - step;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

pub fn random_params(hidden: &[usize], seed: u64, scale: f64) -> ParameterVector {
    let arch = MlpArchitecture::new(hidden.to_vec()).unwrap();
    let mut r = rng(seed);
    let flat = (0..arch.param_count()).map(|_| r.random_range(-scale..scale)).collect();
    ParameterVector::from_flat(arch, flat).unwrap()
}

pub fn random_points(n: usize, seed: u64, domain: &DomainSpec) -> Vec<Point> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            [
                r.random_range(0.01..0.99) * domain.l1,
                r.random_range(0.01..0.99) * domain.l2,
            ]
        })
        .collect()
}

/// Value, gradient and Hessian `(11, 12, 22)` of a scalar function of the
/// two coordinates, propagated in forward mode.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub v: f64,
    pub d: [f64; 2],
    pub h: [f64; 3],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet {
            v,
            d: [0.0; 2],
            h: [0.0; 3],
        }
    }

    pub fn coordinate(v: f64, k: usize) -> Self {
        let mut d = [0.0; 2];
        d[k] = 1.0;
        Jet { v, d, h: [0.0; 3] }
    }

    pub fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1]],
            h: [self.h[0] + o.h[0], self.h[1] + o.h[1], self.h[2] + o.h[2]],
        }
    }

    pub fn scale(self, c: f64) -> Jet {
        Jet {
            v: c * self.v,
            d: [c * self.d[0], c * self.d[1]],
            h: [c * self.h[0], c * self.h[1], c * self.h[2]],
        }
    }

    /// Compose with a scalar function given its value and first two
    /// derivatives at `self.v`.
    pub fn chain(self, f: f64, f1: f64, f2: f64) -> Jet {
        let [a, b] = self.d;
        Jet {
            v: f,
            d: [f1 * a, f1 * b],
            h: [
                f2 * a * a + f1 * self.h[0],
                f2 * a * b + f1 * self.h[1],
                f2 * b * b + f1 * self.h[2],
            ],
        }
    }

    pub fn tanh(self) -> Jet {
        let t = self.v.tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }
}

/// Network evaluation with the weight layout `W[i * fan_out + j]` (row `i`
/// is input unit `i`), weights of every layer first, then biases.
pub fn mlp_jet(p: &ParameterVector, x: Point) -> Jet {
    let layers = p.architecture().layers();
    let flat = p.as_slice();
    let mut offset_w = 0;
    let mut offset_b: usize = layers.iter().map(|(i, o)| i * o).sum();
    let mut act = vec![Jet::coordinate(x[0], 0), Jet::coordinate(x[1], 1)];
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let mut z = Jet::constant(flat[offset_b + j]);
            for (i, a) in act.iter().enumerate().take(fan_in) {
                z = z.add(a.scale(flat[offset_w + i * fan_out + j]));
            }
            next.push(if l + 1 < layers.len() { z.tanh() } else { z });
        }
        offset_w += fan_in * fan_out;
        offset_b += fan_out;
        act = next;
    }
    act[0]
}

fn mean_sq(v: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for x in v {
        s += x * x;
        n += 1;
    }
    s / n as f64
}

/// Total loss computed pointwise from jets, independent of the tape.
pub fn oracle_loss(
    problem: &LossProblem,
    method: Method,
    k: &ParameterVector,
    h: &ParameterVector,
    c: Option<&ParameterVector>,
) -> f64 {
    let ph: &PhysicalParams = &problem.physics;
    let bc: &BoundarySpec = &problem.boundary;
    let kf = |x: Point| {
        let j = mlp_jet(k, x);
        if problem.log_conductivity {
            let e = j.v.exp();
            Jet {
                v: e,
                d: [e * j.d[0], e * j.d[1]],
                h: [0.0; 3],
            }
        } else {
            j
        }
    };
    let r = &problem.residuals;
    let data = |set: &MeasurementSet, p: &ParameterVector, exp: bool| {
        if set.is_empty() {
            return 0.0;
        }
        mean_sq(set.points.iter().zip(&set.values).map(|(x, y)| {
            let u = mlp_jet(p, *x).v;
            (if exp { u.exp() } else { u }) - y
        }))
    };
    let wf = problem.weights.omega_f;
    let wb = problem.weights.omega_b;
    let mut total = data(&problem.k_data, k, problem.log_conductivity) + data(&problem.h_data, h, false);
    if let Some(c) = c {
        total += data(&problem.c_data, c, false);
    }
    if method == Method::DataDriven {
        return total;
    }
    let nonempty = |v: &Vec<Point>| !v.is_empty();
    if nonempty(&r.interior_h) && wf != 0.0 {
        total += wf
            * mean_sq(r.interior_h.iter().map(|x| {
                let kk = kf(*x);
                let hh = mlp_jet(h, *x);
                kk.d[0] * hh.d[0] + kk.d[1] * hh.d[1] + kk.v * (hh.h[0] + hh.h[2])
            }));
    }
    if let (Some(c), true) = (c, method == Method::Mpinn && nonempty(&r.interior_c) && wf != 0.0) {
        total += wf
            * mean_sq(r.interior_c.iter().map(|x| {
                let kk = kf(*x);
                let hh = mlp_jet(h, *x);
                let cc = mlp_jet(c, *x);
                let g = (hh.d[0].powi(2) + hh.d[1].powi(2) + problem.velocity_delta.powi(2)).sqrt();
                let vn = kk.v * g / ph.phi;
                let dg = [
                    (hh.d[0] * hh.h[0] + hh.d[1] * hh.h[1]) / g,
                    (hh.d[0] * hh.h[1] + hh.d[1] * hh.h[2]) / g,
                ];
                let dvn = [
                    (kk.d[0] * g + kk.v * dg[0]) / ph.phi,
                    (kk.d[1] * g + kk.v * dg[1]) / ph.phi,
                ];
                let dm = ph.d_w * ph.tau;
                let d11 = dm + ph.alpha_l * vn;
                let d22 = dm + ph.alpha_t * vn;
                let mut div = d11 * cc.h[0] + d22 * cc.h[2];
                if problem.dispersion == DispersionMode::Full {
                    div += ph.alpha_l * dvn[0] * cc.d[0] + ph.alpha_t * dvn[1] * cc.d[1];
                }
                -kk.v / ph.phi * (hh.d[0] * cc.d[0] + hh.d[1] * cc.d[1]) - div
            }));
    }
    if wb != 0.0 {
        if nonempty(&r.flow_inlet) {
            total += wb * mean_sq(r.flow_inlet.iter().map(|x| -kf(*x).v * mlp_jet(h, *x).d[0] - bc.q));
        }
        if nonempty(&r.flow_lateral) {
            total += wb * mean_sq(r.flow_lateral.iter().map(|x| -kf(*x).v * mlp_jet(h, *x).d[1]));
        }
        if nonempty(&r.flow_outlet) {
            total += wb * mean_sq(r.flow_outlet.iter().map(|x| mlp_jet(h, *x).v - bc.h2));
        }
        if let (Some(c), true) = (c, method == Method::Mpinn) {
            if nonempty(&r.solute_outlet) {
                total += wb * mean_sq(r.solute_outlet.iter().map(|x| mlp_jet(c, *x).d[0]));
            }
            if nonempty(&r.solute_lateral) {
                total += wb * mean_sq(r.solute_lateral.iter().map(|x| mlp_jet(c, *x).d[1]));
            }
            if nonempty(&r.solute_inlet) {
                let c0 = |x2: f64| bc.c0_amp * (-((x2 - problem.domain.l2 / 2.0) / bc.c0_width).powi(2)).exp();
                total += wb * mean_sq(r.solute_inlet.iter().map(|x| mlp_jet(c, *x).v - c0(x[1])));
            }
        }
    }
    total
}

/// A small problem with every term populated.
pub fn toy_problem(n_interior: usize, seed: u64) -> LossProblem {
    let domain = DomainSpec::default();
    let pts = |n: usize, s: u64| random_points(n, seed.wrapping_mul(31).wrapping_add(s), &domain);
    let vals = |n: usize, s: u64| {
        let mut r = rng(seed ^ s);
        (0..n).map(|_| r.random_range(0.2..1.5)).collect::<Vec<_>>()
    };
    let side = |n: usize, f: &dyn Fn(f64) -> Point| (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).collect::<Vec<_>>();
    let residuals = ResidualPointSet {
        interior_h: pts(n_interior, 1),
        interior_c: pts(n_interior, 2),
        flow_inlet: side(2, &|t| [0.0, t * domain.l2]),
        flow_lateral: side(2, &|t| [t * domain.l1, 0.0])
            .into_iter()
            .chain(side(2, &|t| [t * domain.l1, domain.l2]))
            .collect(),
        flow_outlet: side(2, &|t| [domain.l1, t * domain.l2]),
        solute_outlet: side(2, &|t| [domain.l1, t * domain.l2]),
        solute_lateral: side(2, &|t| [t * domain.l1, 0.0])
            .into_iter()
            .chain(side(2, &|t| [t * domain.l1, domain.l2]))
            .collect(),
        solute_inlet: side(3, &|t| [0.0, t * domain.l2]),
    };
    LossProblem::new(
        MeasurementSet::new(Variable::K, pts(4, 3), vals(4, 3)).unwrap(),
        MeasurementSet::new(Variable::H, pts(4, 4), vals(4, 4)).unwrap(),
        MeasurementSet::new(Variable::C, pts(4, 5), vals(4, 5)).unwrap(),
        residuals,
    )
}
