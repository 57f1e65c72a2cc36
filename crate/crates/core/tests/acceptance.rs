//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line before asserting. Criteria 4 to 8 train full-size networks on five
//! seeds and are ignored by default; run them with
//! `cargo test --release -p mpinn --test acceptance -- --ignored --nocapture`.

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;

use common::{fd_gradient, random_params, random_points, rel_err, rng};
use mpinn::autodiff::{Tape, Tensor, Var};
use mpinn::fields::analytic_k_grid;
use mpinn::harness::{run_experiment, sweep, write_csv, BoundaryCounts, ExperimentConfig, ExperimentReport};
use mpinn::network::{forward_with_spatial, param_count, predict, MlpArchitecture};
use mpinn::optimize::MpinnMode;
use mpinn::physics::{BoundarySpec, DomainSpec, Method, PhysicalParams, Variable};
use mpinn::refsolver::{solve_ade, solve_darcy, solve_reference, AdeOutlet, FieldGrid, VelocityField};
use rand::Rng;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(path).unwrap()
}

fn mean_eps(r: &ExperimentReport, m: Method, v: Variable) -> f64 {
    r.mean_error(m, v).unwrap_or(f64::NAN)
}

/// Scalar loss touching every tape operation.
fn every_op(t: &mut Tape, x: &[Var]) -> Var {
    let (a, w, b, z) = (x[0], x[1], x[2], x[3]);
    let m = t.matmul(a, w).unwrap();
    let m = t.add(m, b).unwrap();
    let th = t.tanh(m).unwrap();
    let e = t.scale(th, 0.5).unwrap();
    let e = t.exp(e).unwrap();
    let d = t.sub(e, th).unwrap();
    let s = t.square(d).unwrap();
    let s = t.offset(s, 0.5).unwrap();
    let q = t.sqrt(s).unwrap();
    let q = t.div(q, z).unwrap();
    let q = t.neg(q).unwrap();
    let q = t.div_scalar(q, 3.0).unwrap();
    let p = t.mul(q, th).unwrap();
    let rows = t.slice_rows(p, 1, 2).unwrap();
    let l1 = t.sum(rows).unwrap();
    let l2 = t.mean(p).unwrap();
    let l3 = t.mean_square(m).unwrap();
    let l = t.add(l1, l2).unwrap();
    t.add(l, l3).unwrap()
}

fn every_op_value_and_grad(inputs: &[Tensor]) -> (f64, Vec<Vec<f64>>) {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone()).unwrap()).collect();
    let loss = every_op(&mut t, &vars);
    let g = t.backward(loss).unwrap();
    (
        t.value(loss).data()[0],
        vars.iter().map(|v| g.wrt(*v).into_data()).collect(),
    )
}

#[test]
fn criterion_1_autodiff_matches_finite_differences() {
    let start = std::time::Instant::now();
    let mut r = rng(1);
    let mut worst_op: f64 = 0.0;
    for _ in 0..100 {
        let shapes = [(3, 4), (4, 2), (1, 2), (3, 2)];
        let inputs: Vec<Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(k, &(m, n))| {
                let data = (0..m * n)
                    .map(|_| {
                        if k == 3 {
                            r.random_range(0.5..2.0)
                        } else {
                            r.random_range(-1.0..1.0)
                        }
                    })
                    .collect();
                Tensor::matrix(m, n, data).unwrap()
            })
            .collect();
        let (_, grads) = every_op_value_and_grad(&inputs);
        for (k, g) in grads.iter().enumerate() {
            let fd = fd_gradient(inputs[k].data(), 1e-6, |x| {
                let mut p = inputs.clone();
                p[k] = Tensor::new(inputs[k].shape().to_vec(), x.to_vec()).unwrap();
                every_op_value_and_grad(&p).0
            });
            worst_op = worst_op.max(rel_err(g, &fd));
        }
    }

    let domain = DomainSpec::default();
    let mut worst_channel: f64 = 0.0;
    for trial in 0..100u64 {
        let p = random_params(&[8, 8], 500 + trial, 1.0);
        let pts = random_points(20, 600 + trial, &domain);
        let mut t = Tape::new();
        let b = forward_with_spatial(&p, &pts, &mut t).unwrap();
        let [u, d1, d2, d11, d12, d22] = [b.u, b.d1, b.d2, b.d11, b.d12, b.d22].map(|v| t.value(v).data().to_vec());
        let at = |dx: f64, dy: f64| predict(&p, &pts.iter().map(|x| [x[0] + dx, x[1] + dy]).collect::<Vec<_>>());
        let (h1, h2) = (1e-6, 1e-4);
        let central = |a: Vec<f64>, b: Vec<f64>, h: f64| -> Vec<f64> {
            a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect()
        };
        let second = |ex: f64, ey: f64| -> Vec<f64> {
            let (pl, mi) = (at(ex * h2, ey * h2), at(-ex * h2, -ey * h2));
            (0..u.len()).map(|i| (pl[i] - 2.0 * u[i] + mi[i]) / (h2 * h2)).collect()
        };
        let (pp, pm, mp, mm) = (at(h2, h2), at(h2, -h2), at(-h2, h2), at(-h2, -h2));
        let fd12: Vec<f64> = (0..u.len())
            .map(|i| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h2 * h2))
            .collect();
        for (a, f) in [
            (&u, at(0.0, 0.0)),
            (&d1, central(at(h1, 0.0), at(-h1, 0.0), h1)),
            (&d2, central(at(0.0, h1), at(0.0, -h1), h1)),
            (&d11, second(1.0, 0.0)),
            (&d12, fd12),
            (&d22, second(0.0, 1.0)),
        ] {
            worst_channel = worst_channel.max(rel_err(a, &f));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst_op < 1e-5 && worst_channel < 1e-5 && secs < 60.0,
        format!("operation rel err {worst_op:.2e}, channel rel err {worst_channel:.2e}, {secs:.1} s"),
    );
}

#[test]
fn criterion_2_forward_solver_validation() {
    let start = std::time::Instant::now();
    let dom = DomainSpec::default();
    let bc = BoundarySpec::default();
    let params = PhysicalParams::default();

    let k = FieldGrid::constant(256, 128, dom, 1.0);
    let (h, _) = solve_darcy(&k, &bc, &params, 1e-10).unwrap();
    let uniform_err = h
        .centers()
        .iter()
        .zip(&h.values)
        .map(|(x, v)| (v - (bc.h2 + bc.q * (dom.l1 - x[0]))).abs())
        .fold(0.0, f64::max);

    let r = solve_reference(analytic_k_grid(256, 128, dom), &bc, &params, 1e-10).unwrap();
    let imbalance = r
        .velocity
        .divergence()
        .iter()
        .map(|d| (d * params.phi).abs())
        .fold(0.0, f64::max);
    let inlet: Vec<f64> = (0..r.c.ny)
        .map(|j| bc.inlet_concentration((j as f64 + 0.5) * r.c.dy(), &dom))
        .collect();
    let (lo, hi) = inlet
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(*c), b.max(*c)));
    let max_principle = r.c.values.iter().all(|c| *c >= lo - 1e-9 && *c <= hi + 1e-9);

    // Steady v C' = D C'' with C(0) = 1, C(L) = 0 on a refined strip.
    let bc1 = BoundarySpec { c0_width: 1e12, ..bc };
    let v = VelocityField::uniform(2048, 4, dom, 1.0);
    let c = solve_ade(&v, &bc1, &params, AdeOutlet::Dirichlet(0.0), 1e-12).unwrap();
    let pe = dom.l1 / (params.molecular() + params.alpha_l);
    let exact: Vec<f64> = c
        .centers()
        .iter()
        .map(|x| (1.0 - (pe * (x[0] / dom.l1 - 1.0)).exp()) / (1.0 - (-pe).exp()))
        .collect();
    let profile_err = rel_err(&c.values, &exact);

    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        uniform_err < 1e-8 && imbalance < 1e-10 * bc.q && max_principle && profile_err < 0.01 && secs < 120.0,
        format!(
            "uniform head {uniform_err:.2e}, cell imbalance {imbalance:.2e}, max principle {max_principle}, \
             1-D profile {profile_err:.2e}, {secs:.1} s"
        ),
    );
}

#[test]
fn criterion_3_parameter_counts() {
    let table = [261, 921, 1981, 3441, 5301, 7561, 10221, 13281, 16741, 20601];
    let got: Vec<usize> = (1..=10)
        .map(|i| param_count(&MlpArchitecture::uniform(10 * i, 3).unwrap()))
        .collect();
    report(3, got == table, format!("{got:?}"));
}

fn example1_pinn() -> &'static ExperimentReport {
    static R: OnceLock<ExperimentReport> = OnceLock::new();
    R.get_or_init(|| run_experiment(&config("example1_pinn.toml")).unwrap())
}

#[test]
#[ignore = "trains 5 seeds of [2-32-32-32-1] networks; run with --ignored"]
fn criterion_4_physics_regularisation() {
    let r = example1_pinn();
    let (dd, pinn) = (
        mean_eps(r, Method::DataDriven, Variable::K),
        mean_eps(r, Method::PinnDarcy, Variable::K),
    );
    report(
        4,
        pinn <= dd / 3.0,
        format!(
            "mean eps_K data-driven {dd:.4}, PINN-Darcy {pinn:.4}, ratio {:.2}",
            dd / pinn
        ),
    );
}

#[test]
#[ignore = "shares the runs of criterion 4; run with --ignored"]
fn criterion_6_head_conductivity_gap() {
    let r = example1_pinn();
    let (k, h) = (
        mean_eps(r, Method::PinnDarcy, Variable::K),
        mean_eps(r, Method::PinnDarcy, Variable::H),
    );
    report(6, h <= k / 5.0, format!("PINN-Darcy mean eps_h {h:.2e}, eps_K {k:.2e}"));
}

#[test]
#[ignore = "trains 5 seeds of sequential MPINN; run with --ignored"]
fn criterion_5_mpinn_concentration() {
    let r = run_experiment(&config("example1_mpinn.toml")).unwrap();
    let (dd, mp) = (
        mean_eps(&r, Method::DataDriven, Variable::C),
        mean_eps(&r, Method::Mpinn, Variable::C),
    );
    report(
        5,
        mp < 0.08 && dd > 0.15,
        format!("mean eps_C MPINN {mp:.4}, data-driven {dd:.4}"),
    );
}

#[test]
#[ignore = "trains 20 data-driven runs; run with --ignored"]
fn criterion_7_error_decreases_with_measurements() {
    let cfg = config("example1_sweep_n.toml");
    let s = cfg.sweep.clone().unwrap();
    let rep = sweep(&cfg, s.axis, &s.values).unwrap();
    let means: Vec<f64> = rep
        .cells
        .iter()
        .map(|(_, c)| mean_eps(c.as_ref().unwrap(), Method::DataDriven, Variable::K))
        .collect();
    let inversions: Vec<f64> = means
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[1] - w[0]) / w[0])
        .collect();
    let pass = inversions.len() <= 1 && inversions.iter().all(|x| *x < 0.1);
    report(7, pass, format!("N {:?}: mean eps_K {means:.4?}", s.values));
}

#[test]
#[ignore = "trains three methods with width-60 networks on 5 seeds; run with --ignored"]
fn criterion_8_lognormal_ordering() {
    let r = run_experiment(&config("example2_lognormal.toml")).unwrap();
    let k = [Method::Mpinn, Method::PinnDarcy, Method::DataDriven].map(|m| mean_eps(&r, m, Variable::K));
    let (c_mp, c_dd) = (
        mean_eps(&r, Method::Mpinn, Variable::C),
        mean_eps(&r, Method::DataDriven, Variable::C),
    );
    report(
        8,
        k[0] < k[1] && k[1] < k[2] && c_mp <= c_dd / 5.0,
        format!(
            "eps_K MPINN {:.4}, PINN-Darcy {:.4}, data-driven {:.4}; eps_C MPINN {c_mp:.4}, data-driven {c_dd:.4}",
            k[0], k[1], k[2]
        ),
    );
}

#[test]
fn criterion_9_reduction_to_data_driven() {
    let mut cfg = config("smoke.toml");
    cfg.methods = vec![Method::DataDriven, Method::Mpinn];
    cfg.training.mpinn_mode = MpinnMode::Simultaneous;
    cfg.weights.omega_f = 0.0;
    cfg.weights.omega_b = 0.0;
    cfg.residuals.n_f_h = 0;
    cfg.residuals.n_f_c = 0;
    cfg.residuals.boundary = BoundaryCounts::uniform(0);
    let r = run_experiment(&cfg).unwrap();
    let mut identical = true;
    for seed in &cfg.seeds {
        let run = |m| {
            r.runs
                .iter()
                .find(|x| x.method == m && x.seed == *seed)
                .unwrap()
                .outcome
                .as_ref()
                .unwrap()
        };
        let (a, b) = (run(Method::DataDriven), run(Method::Mpinn));
        identical &= a.history == b.history && a.final_loss.to_bits() == b.final_loss.to_bits();
    }
    report(
        9,
        identical,
        format!("loss trajectories identical over seeds {:?}: {identical}", cfg.seeds),
    );
}

#[test]
fn criterion_10_determinism() {
    let cfg = config("smoke.toml");
    let csv = || {
        let mut buf = Vec::new();
        write_csv(&run_experiment(&cfg).unwrap(), &mut buf).unwrap();
        buf
    };
    let (a, b) = (csv(), csv());
    report(10, a == b, format!("{} CSV bytes, identical: {}", a.len(), a == b));
}
