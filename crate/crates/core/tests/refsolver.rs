use mpinn::fields::analytic_k_grid;
use mpinn::physics::{BoundarySpec, DomainSpec, PhysicalParams};
use mpinn::refsolver::{
    banded_lu_solve, bicgstab, linear_solve, solute_boundary_fluxes, solve_ade, solve_darcy, solve_reference,
    AdeOutlet, FieldGrid, FiveBand, SolverError, VelocityField,
};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn dom() -> DomainSpec {
    DomainSpec::default()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn uniform_conductivity_matches_linear_head() {
    let bc = BoundarySpec::default();
    let k = FieldGrid::constant(256, 128, dom(), 1.0);
    let (h, _) = solve_darcy(&k, &bc, &PhysicalParams::default(), 1e-10).unwrap();
    let exact: Vec<f64> = h
        .centers()
        .iter()
        .map(|x| bc.q * (dom().l1 - x[0]) / 1.0 + bc.h2)
        .collect();
    let err = max_abs_diff(&h.values, &exact);
    assert!(err < 1e-8, "max error {err:e}");
}

#[test]
fn two_layer_conductivity_matches_series_resistance() {
    let bc = BoundarySpec {
        q: 1.0,
        h2: 0.3,
        ..BoundarySpec::default()
    };
    let (nx, ny) = (64, 8);
    let k = FieldGrid::from_fn(nx, ny, dom(), |x| if x[0] < 0.5 { 1.0 } else { 2.0 });
    let (h, _) = solve_darcy(&k, &bc, &PhysicalParams::default(), TOL).unwrap();
    // Piecewise linear head: slope -q/K in each layer.
    let exact = |x1: f64| {
        if x1 >= 0.5 {
            bc.h2 + bc.q * (1.0 - x1) / 2.0
        } else {
            bc.h2 + bc.q * 0.5 / 2.0 + bc.q * (0.5 - x1) / 1.0
        }
    };
    let want: Vec<f64> = h.centers().iter().map(|x| exact(x[0])).collect();
    assert!(max_abs_diff(&h.values, &want) < 1e-8);
    // Head drop across the interface cells.
    let (l, r) = (h.at(nx / 2 - 1, 3), h.at(nx / 2, 3));
    let dx = k.dx();
    let drop = bc.q * (0.5 * dx / 1.0 + 0.5 * dx / 2.0);
    assert!((l - r - drop).abs() < 1e-8);
}

#[test]
fn darcy_cell_mass_balance() {
    let bc = BoundarySpec::default();
    let params = PhysicalParams::default();
    for k in [
        analytic_k_grid(256, 128, dom()),
        FieldGrid::from_fn(40, 20, dom(), |x| (3.0 * x[0] * x[1]).exp()),
    ] {
        let (_, v) = solve_darcy(&k, &bc, &params, 1e-10).unwrap();
        // Darcy flux balance: pore-velocity divergence times porosity.
        let worst = v
            .divergence()
            .iter()
            .map(|d| (d * params.phi).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10 * bc.q, "cell imbalance {worst:e}");
    }
}

#[test]
fn no_flow_uniform_inlet_gives_uniform_concentration() {
    let bc = BoundarySpec {
        c0_width: 1e12,
        ..BoundarySpec::default()
    };
    let v = VelocityField::uniform(20, 10, dom(), 0.0);
    let c = solve_ade(&v, &bc, &PhysicalParams::default(), AdeOutlet::ZeroGradient, TOL).unwrap();
    assert!(c.values.iter().all(|x| (x - bc.c0_amp).abs() < 1e-9));
}

/// Steady `v C' = D C''` on `[0, L]` with `C(0) = 1`, `C(L) = 0`.
fn advection_diffusion_profile(x: f64, pe: f64, l: f64) -> f64 {
    // (e^{Pe} - e^{Pe x / L}) / (e^{Pe} - 1), scaled to avoid overflow.
    let a = (pe * (x / l - 1.0)).exp();
    let b = (-pe).exp();
    (1.0 - a) / (1.0 - b)
}

fn one_d_transport_error(nx: usize, ny: usize) -> f64 {
    let params = PhysicalParams::default();
    let bc = BoundarySpec {
        c0_width: 1e12,
        ..BoundarySpec::default()
    };
    let v0 = 1.0;
    let v = VelocityField::uniform(nx, ny, dom(), v0);
    let c = solve_ade(&v, &bc, &params, AdeOutlet::Dirichlet(0.0), TOL).unwrap();
    let d = params.molecular() + params.alpha_l * v0;
    let pe = v0 * dom().l1 / d;
    let exact: Vec<f64> = c
        .centers()
        .iter()
        .map(|x| advection_diffusion_profile(x[0], pe, dom().l1))
        .collect();
    let num: f64 = c.values.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[test]
fn one_dimensional_transport_matches_analytic_profile() {
    let err = one_d_transport_error(2048, 4);
    assert!(err < 0.01, "relative L2 error {err:e}");
}

#[test]
fn transport_obeys_maximum_principle() {
    let bc = BoundarySpec::default();
    let params = PhysicalParams::default();
    let r = solve_reference(analytic_k_grid(256, 128, dom()), &bc, &params, 1e-10).unwrap();
    let inlet: Vec<f64> = (0..r.c.ny)
        .map(|j| bc.inlet_concentration((j as f64 + 0.5) * r.c.dy(), &dom()))
        .collect();
    let lo = inlet.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inlet.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9;
    assert!(r.c.values.iter().all(|c| *c >= lo - slack && *c <= hi + slack));
}

#[test]
fn solute_mass_balance() {
    let bc = BoundarySpec::default();
    let params = PhysicalParams::default();
    let k = FieldGrid::from_fn(128, 64, dom(), |x| 0.5 + x[0] + (6.0 * x[1]).sin().powi(2));
    let r = solve_reference(k, &bc, &params, 1e-13).unwrap();
    let (inflow, outflow) = solute_boundary_fluxes(&r.c, &r.velocity, &bc, &params);
    let rel = (inflow - outflow).abs() / inflow.abs();
    assert!(rel < 1e-8, "in {inflow}, out {outflow}, rel {rel:e}");
}

/// Observed order from errors at successive halvings of the cell size.
fn orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn darcy_refinement_is_second_order() {
    // K = exp(x1): h = H2 + q (e^{-x1} - e^{-L1}).
    let bc = BoundarySpec::default();
    let errs: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&nx| {
            let k = FieldGrid::from_fn(nx, 4, dom(), |x| x[0].exp());
            let (h, _) = solve_darcy(&k, &bc, &PhysicalParams::default(), TOL).unwrap();
            let exact: Vec<f64> = h
                .centers()
                .iter()
                .map(|x| bc.h2 + bc.q * ((-x[0]).exp() - (-dom().l1).exp()))
                .collect();
            max_abs_diff(&h.values, &exact)
        })
        .collect();
    for p in orders(&errs) {
        assert!((p - 2.0).abs() <= 0.4, "order {p} from {errs:?}");
    }
}

#[test]
fn transport_refinement_is_first_order() {
    let errs: Vec<f64> = [128, 256, 512].iter().map(|&nx| one_d_transport_error(nx, 2)).collect();
    for p in orders(&errs) {
        assert!((p - 1.0).abs() <= 0.2, "order {p} from {errs:?}");
    }
}

#[test]
fn solves_are_deterministic() {
    let bc = BoundarySpec::default();
    let params = PhysicalParams::default();
    let k = analytic_k_grid(64, 32, dom());
    let a = solve_reference(k.clone(), &bc, &params, 1e-10).unwrap();
    let b = solve_reference(k, &bc, &params, 1e-10).unwrap();
    assert_eq!(a, b);
}

fn laplacian(nx: usize, ny: usize, shift: f64) -> FiveBand {
    let mut a = FiveBand::zeros(nx, ny);
    for j in 0..ny {
        for i in 0..nx {
            let r = j * nx + i;
            a.c[r] = 4.0 + shift;
            if i > 0 {
                a.w[r] = -1.0;
            }
            if i + 1 < nx {
                a.e[r] = -1.0;
            }
            if j > 0 {
                a.s[r] = -1.0;
            }
            if j + 1 < ny {
                a.n[r] = -1.0;
            }
        }
    }
    a
}

#[test]
fn identity_and_direct_oracle() {
    let b: Vec<f64> = (0..12).map(|i| i as f64 - 3.5).collect();
    assert_eq!(linear_solve(&FiveBand::identity(4, 3), &b, 1e-12).unwrap(), b);

    let a = laplacian(10, 10, 0.0);
    let b: Vec<f64> = (0..100).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let direct = banded_lu_solve(&a, &b).unwrap();
    let iter = bicgstab(&a, &b, 1e-13, 10_000).unwrap();
    let scale = direct.iter().map(|x| x.abs()).fold(0.0, f64::max);
    assert!(max_abs_diff(&direct, &iter) / scale < 1e-10);
}

#[test]
fn bicgstab_agrees_with_direct_on_large_system() {
    let (nx, ny) = (180, 120);
    let mut a = laplacian(nx, ny, 0.01);
    // Advection-like asymmetry.
    for r in 0..nx * ny {
        a.w[r] *= 1.3;
        a.c[r] += 0.3;
    }
    assert!(nx * ny > mpinn::refsolver::DIRECT_LIMIT);
    let b: Vec<f64> = (0..nx * ny).map(|i| ((i % 17) as f64).sin()).collect();
    let iter = linear_solve(&a, &b, 1e-12).unwrap();
    let direct = banded_lu_solve(&a, &b).unwrap();
    let scale = direct.iter().map(|x| x.abs()).fold(0.0, f64::max);
    assert!(max_abs_diff(&direct, &iter) / scale < 1e-9);
}

#[test]
fn all_neumann_system_is_rejected() {
    let mut a = laplacian(6, 6, 0.0);
    for r in 0..36 {
        let deg = [a.w[r], a.e[r], a.s[r], a.n[r]].iter().filter(|x| **x != 0.0).count();
        a.c[r] = deg as f64;
    }
    let b = vec![1.0; 36];
    assert!(matches!(linear_solve(&a, &b, 1e-10), Err(SolverError::Singular { .. })));
    assert!(bicgstab(&a, &b, 1e-10, 2000).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn field_file_round_trip(
        nx in 1usize..8,
        ny in 1usize..8,
        l1 in 0.1f64..10.0,
        l2 in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..nx * ny).map(|_| r.random::<f64>() * 10f64.powi(r.random_range(-300..300))).collect();
        let g = FieldGrid::new(nx, ny, DomainSpec { l1, l2 }, values).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = FieldGrid::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, g);
    }
}
