//! Residual operators of the steady Darcy and advection-dispersion problems
//! and assembly of the composite training losses.
//!
//! Residuals are built from network derivative channels on a [`Tape`], so
//! the loss and its parameter gradient come out of a single reverse sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::network::{BoundMlp, EvalBundle, GradientBundle, ParameterVector};
use crate::Point;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("batch length mismatch: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("no {equation:?} Neumann condition on the {segment:?} boundary")]
    NotNeumann { equation: Equation, segment: Segment },
    #[error("method {method:?} needs a {variable} network")]
    MissingNetwork { method: Method, variable: Variable },
    #[error("no {0} measurements for an actively trained network")]
    EmptyData(Variable),
    #[error("measurement set has {points} points but {values} values")]
    MeasurementLength { points: usize, values: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point ({x1}, {x2}) is not on the {what}")]
    PointPlacement { x1: f64, x2: f64, what: String },
}

/// Porosity, diffusion and dispersivity coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub phi: f64,
    /// Molecular diffusion coefficient, m^2/hr.
    pub d_w: f64,
    pub tau: f64,
    /// Longitudinal dispersivity, m.
    pub alpha_l: f64,
    /// Transverse dispersivity, m.
    pub alpha_t: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            phi: 0.317,
            d_w: 0.09,
            tau: 0.681,
            alpha_l: 0.01,
            alpha_t: 0.001,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(PhysicsError::InvalidParameter(format!(
                "porosity must lie in (0, 1), got {}",
                self.phi
            )));
        }
        for (name, v) in [("d_w", self.d_w), ("tau", self.tau)] {
            if !(v > 0.0) {
                return Err(PhysicsError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [("alpha_l", self.alpha_l), ("alpha_t", self.alpha_t)] {
            if !(v >= 0.0) {
                return Err(PhysicsError::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Effective molecular diffusion `d_w * tau`.
    pub fn molecular(&self) -> f64 {
        self.d_w * self.tau
    }
}

/// Rectangle `[0, l1] x [0, l2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSpec {
    pub l1: f64,
    pub l2: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self { l1: 1.0, l2: 0.5 }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(PhysicsError::InvalidParameter(format!(
                "domain lengths must be positive, got {} x {}",
                self.l1, self.l2
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.l1).contains(&p[0]) && (0.0..=self.l2).contains(&p[1])
    }

    pub fn contains_strictly(&self, p: Point) -> bool {
        p[0] > 0.0 && p[0] < self.l1 && p[1] > 0.0 && p[1] < self.l2
    }
}

/// Outlet head, inlet flux and inlet concentration profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySpec {
    pub h2: f64,
    pub q: f64,
    pub c0_amp: f64,
    pub c0_width: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            h2: 0.0,
            q: 1.0,
            c0_amp: 1.0,
            c0_width: 0.25,
        }
    }
}

impl BoundarySpec {
    /// `C0(x2) = c exp(-(x2 - L2/2)^2 / eps^2)`.
    pub fn inlet_concentration(&self, x2: f64, domain: &DomainSpec) -> f64 {
        let d = x2 - 0.5 * domain.l2;
        self.c0_amp * (-(d * d) / (self.c0_width * self.c0_width)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub omega_f: f64,
    pub omega_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega_f: 1.0,
            omega_b: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "C")]
    C,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::K, Variable::H, Variable::C];

    pub fn symbol(self) -> &'static str {
        match self {
            Variable::K => "K",
            Variable::H => "h",
            Variable::C => "C",
        }
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub variable: Variable,
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(variable: Variable, points: Vec<Point>, values: Vec<f64>) -> Result<Self, PhysicsError> {
        if points.len() != values.len() {
            return Err(PhysicsError::MeasurementLength {
                points: points.len(),
                values: values.len(),
            });
        }
        Ok(Self {
            variable,
            points,
            values,
        })
    }

    pub fn empty(variable: Variable) -> Self {
        Self {
            variable,
            points: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<(), PhysicsError> {
        if self.points.len() != self.values.len() {
            return Err(PhysicsError::MeasurementLength {
                points: self.points.len(),
                values: self.values.len(),
            });
        }
        for p in &self.points {
            if !domain.contains(*p) {
                return Err(PhysicsError::PointPlacement {
                    x1: p[0],
                    x2: p[1],
                    what: "closed domain".into(),
                });
            }
        }
        Ok(())
    }
}

/// Boundary segments of the rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    /// `x1 = 0`
    Inlet,
    /// `x1 = L1`
    Outlet,
    /// `x2 = 0`
    Bottom,
    /// `x2 = L2`
    Top,
}

impl Segment {
    pub fn contains(self, p: Point, domain: &DomainSpec) -> bool {
        let on_x1 = (0.0..=domain.l1).contains(&p[0]);
        let on_x2 = (0.0..=domain.l2).contains(&p[1]);
        match self {
            Segment::Inlet => p[0] == 0.0 && on_x2,
            Segment::Outlet => p[0] == domain.l1 && on_x2,
            Segment::Bottom => p[1] == 0.0 && on_x1,
            Segment::Top => p[1] == domain.l2 && on_x1,
        }
    }
}

/// Collocation points for the PDE and boundary residuals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualPointSet {
    /// Darcy residual points.
    pub interior_h: Vec<Point>,
    /// Advection-dispersion residual points.
    pub interior_c: Vec<Point>,
    /// Prescribed inflow flux on `x1 = 0`.
    pub flow_inlet: Vec<Point>,
    /// No-flow on `x2 = 0` and `x2 = L2`.
    pub flow_lateral: Vec<Point>,
    /// Head Dirichlet condition on `x1 = L1`.
    pub flow_outlet: Vec<Point>,
    /// Zero concentration gradient on `x1 = L1`.
    pub solute_outlet: Vec<Point>,
    /// Zero concentration gradient on `x2 = 0` and `x2 = L2`.
    pub solute_lateral: Vec<Point>,
    /// Concentration Dirichlet condition on `x1 = 0`.
    pub solute_inlet: Vec<Point>,
}

impl ResidualPointSet {
    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn total(&self) -> usize {
        self.interior_h.len()
            + self.interior_c.len()
            + self.flow_inlet.len()
            + self.flow_lateral.len()
            + self.flow_outlet.len()
            + self.solute_outlet.len()
            + self.solute_lateral.len()
            + self.solute_inlet.len()
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<(), PhysicsError> {
        let bad = |p: &Point, what: &str| PhysicsError::PointPlacement {
            x1: p[0],
            x2: p[1],
            what: what.into(),
        };
        for p in self.interior_h.iter().chain(&self.interior_c) {
            if !domain.contains_strictly(*p) {
                return Err(bad(p, "open domain interior"));
            }
        }
        let checks: [(&[Point], &[Segment], &str); 6] = [
            (&self.flow_inlet, &[Segment::Inlet], "inlet boundary"),
            (&self.solute_inlet, &[Segment::Inlet], "inlet boundary"),
            (&self.flow_outlet, &[Segment::Outlet], "outlet boundary"),
            (&self.solute_outlet, &[Segment::Outlet], "outlet boundary"),
            (&self.flow_lateral, &[Segment::Bottom, Segment::Top], "lateral boundary"),
            (
                &self.solute_lateral,
                &[Segment::Bottom, Segment::Top],
                "lateral boundary",
            ),
        ];
        for (pts, segs, what) in checks {
            for p in pts {
                if !segs.iter().any(|s| s.contains(*p, domain)) {
                    return Err(bad(p, what));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMode {
    /// Divergence of `D grad C` including the spatial derivatives of `D`.
    #[default]
    Full,
    /// Treats `D` as locally constant.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DataDriven,
    PinnDarcy,
    Mpinn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DataDriven => "data_driven",
            Method::PinnDarcy => "pinn_darcy",
            Method::Mpinn => "mpinn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equation {
    Flow,
    Solute,
}

fn check_same_len(tape: &Tape, vars: &[Var]) -> Result<usize, PhysicsError> {
    let n = tape.shape(vars[0])[0];
    for v in &vars[1..] {
        let m = tape.shape(*v)[0];
        if m != n {
            return Err(PhysicsError::BatchMismatch(n, m));
        }
    }
    Ok(n)
}

/// `f^h = dK/dx1 dh/dx1 + dK/dx2 dh/dx2 + K (d2h/dx1^2 + d2h/dx2^2)`.
pub fn darcy_residual(tape: &mut Tape, k: &GradientBundle, h: &EvalBundle) -> Result<Var, PhysicsError> {
    check_same_len(tape, &[k.u, h.u])?;
    let a = tape.mul(k.d1, h.d1)?;
    let b = tape.mul(k.d2, h.d2)?;
    let lap = tape.add(h.d11, h.d22)?;
    let c = tape.mul(k.u, lap)?;
    let ab = tape.add(a, b)?;
    Ok(tape.add(ab, c)?)
}

/// Pore-velocity magnitude and its spatial gradient.
#[derive(Clone, Copy, Debug)]
pub struct VelocityNorm {
    pub norm: Var,
    pub d1: Var,
    pub d2: Var,
}

/// `|v| = (K / phi) sqrt(h1^2 + h2^2 + delta^2)` and its derivatives by the
/// chain rule; `delta` keeps the square root differentiable where the head
/// gradient vanishes.
pub fn velocity_norm_and_gradient(
    tape: &mut Tape,
    k: &GradientBundle,
    h: &EvalBundle,
    params: &PhysicalParams,
    delta: f64,
) -> Result<VelocityNorm, PhysicsError> {
    check_same_len(tape, &[k.u, h.u])?;
    let inv_phi = 1.0 / params.phi;
    let h1sq = tape.square(h.d1)?;
    let h2sq = tape.square(h.d2)?;
    let s = tape.add(h1sq, h2sq)?;
    let s = tape.offset(s, delta * delta)?;
    let g = tape.sqrt(s)?;
    let kg = tape.mul(k.u, g)?;
    let norm = tape.scale(kg, inv_phi)?;

    // d_j g = (h1 h1j + h2 h2j) / g
    let mut grads = [norm; 2];
    let second = [[h.d11, h.d12], [h.d12, h.d22]];
    for (j, (kd, [h1j, h2j])) in [k.d1, k.d2].into_iter().zip(second).enumerate() {
        let a = tape.mul(h.d1, h1j)?;
        let b = tape.mul(h.d2, h2j)?;
        let num = tape.add(a, b)?;
        let dg = tape.div(num, g)?;
        let t1 = tape.mul(kd, g)?;
        let t2 = tape.mul(k.u, dg)?;
        let sum = tape.add(t1, t2)?;
        grads[j] = tape.scale(sum, inv_phi)?;
    }
    Ok(VelocityNorm {
        norm,
        d1: grads[0],
        d2: grads[1],
    })
}

/// Diagonal dispersion `(D11, D22) = d_w tau + (alpha_l, alpha_t) |v|`.
pub fn dispersion(tape: &mut Tape, v_norm: Var, params: &PhysicalParams) -> Result<(Var, Var), PhysicsError> {
    let a = tape.scale(v_norm, params.alpha_l)?;
    let d11 = tape.offset(a, params.molecular())?;
    let b = tape.scale(v_norm, params.alpha_t)?;
    let d22 = tape.offset(b, params.molecular())?;
    Ok((d11, d22))
}

/// Advection-dispersion residual
/// `f^C = -(K/phi) grad h . grad C - div(D grad C)` with diagonal `D`.
pub fn ade_residual(
    tape: &mut Tape,
    k: &GradientBundle,
    h: &EvalBundle,
    c: &EvalBundle,
    params: &PhysicalParams,
    mode: DispersionMode,
    delta: f64,
) -> Result<Var, PhysicsError> {
    check_same_len(tape, &[k.u, h.u, c.u])?;
    let v = velocity_norm_and_gradient(tape, k, h, params, delta)?;
    let (d11, d22) = dispersion(tape, v.norm, params)?;

    let a1 = tape.mul(h.d1, c.d1)?;
    let a2 = tape.mul(h.d2, c.d2)?;
    let dot = tape.add(a1, a2)?;
    let kdot = tape.mul(k.u, dot)?;
    let advection = tape.scale(kdot, -1.0 / params.phi)?;

    let t11 = tape.mul(d11, c.d11)?;
    let t22 = tape.mul(d22, c.d22)?;
    let mut div = tape.add(t11, t22)?;
    if mode == DispersionMode::Full {
        // dD11/dx1 = alpha_l d|v|/dx1, dD22/dx2 = alpha_t d|v|/dx2
        let e1 = tape.mul(v.d1, c.d1)?;
        let e1 = tape.scale(e1, params.alpha_l)?;
        let e2 = tape.mul(v.d2, c.d2)?;
        let e2 = tape.scale(e2, params.alpha_t)?;
        div = tape.add(div, e1)?;
        div = tape.add(div, e2)?;
    }
    Ok(tape.sub(advection, div)?)
}

/// Inputs for a Neumann residual.
#[derive(Clone, Copy, Debug)]
pub enum NeumannFields<'a> {
    Flow {
        k: &'a GradientBundle,
        h: &'a GradientBundle,
    },
    Solute {
        c: &'a GradientBundle,
    },
}

/// Flux residuals on the Neumann parts of the boundary:
/// `-K dh/dx1 - q` on the inlet, `-K dh/dx2` on the lateral sides,
/// `dC/dx1` on the outlet and `dC/dx2` on the lateral sides.
pub fn neumann_residual(
    tape: &mut Tape,
    fields: NeumannFields<'_>,
    side: Segment,
    bc: &BoundarySpec,
) -> Result<Var, PhysicsError> {
    match (fields, side) {
        (NeumannFields::Flow { k, h }, Segment::Inlet) => {
            check_same_len(tape, &[k.u, h.u])?;
            let flux = tape.mul(k.u, h.d1)?;
            let neg = tape.neg(flux)?;
            Ok(tape.offset(neg, -bc.q)?)
        }
        (NeumannFields::Flow { k, h }, Segment::Bottom | Segment::Top) => {
            check_same_len(tape, &[k.u, h.u])?;
            let flux = tape.mul(k.u, h.d2)?;
            Ok(tape.neg(flux)?)
        }
        (NeumannFields::Solute { c }, Segment::Outlet) => Ok(c.d1),
        (NeumannFields::Solute { c }, Segment::Bottom | Segment::Top) => Ok(c.d2),
        (NeumannFields::Flow { .. }, segment) => Err(PhysicsError::NotNeumann {
            equation: Equation::Flow,
            segment,
        }),
        (NeumannFields::Solute { .. }, segment) => Err(PhysicsError::NotNeumann {
            equation: Equation::Solute,
            segment,
        }),
    }
}

/// Individual mean-square terms of the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossTerm {
    DataK,
    DataH,
    DataC,
    PdeFlow,
    PdeSolute,
    FlowInlet,
    FlowLateral,
    FlowDirichlet,
    SoluteOutlet,
    SoluteLateral,
    SoluteDirichlet,
}

impl LossTerm {
    pub const ALL: [LossTerm; 11] = [
        LossTerm::DataK,
        LossTerm::DataH,
        LossTerm::DataC,
        LossTerm::PdeFlow,
        LossTerm::PdeSolute,
        LossTerm::FlowInlet,
        LossTerm::FlowLateral,
        LossTerm::FlowDirichlet,
        LossTerm::SoluteOutlet,
        LossTerm::SoluteLateral,
        LossTerm::SoluteDirichlet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::DataK => "data_K",
            LossTerm::DataH => "data_h",
            LossTerm::DataC => "data_C",
            LossTerm::PdeFlow => "pde_h",
            LossTerm::PdeSolute => "pde_C",
            LossTerm::FlowInlet => "neumann1_h",
            LossTerm::FlowLateral => "neumann2_h",
            LossTerm::FlowDirichlet => "dirichlet_h",
            LossTerm::SoluteOutlet => "neumann1_C",
            LossTerm::SoluteLateral => "neumann2_C",
            LossTerm::SoluteDirichlet => "dirichlet_C",
        }
    }

    /// Networks the term depends on.
    pub fn variables(self) -> &'static [Variable] {
        use Variable::*;
        match self {
            LossTerm::DataK => &[K],
            LossTerm::DataH | LossTerm::FlowDirichlet => &[H],
            LossTerm::DataC | LossTerm::SoluteOutlet | LossTerm::SoluteLateral | LossTerm::SoluteDirichlet => &[C],
            LossTerm::PdeFlow | LossTerm::FlowInlet | LossTerm::FlowLateral => &[K, H],
            LossTerm::PdeSolute => &[K, H, C],
        }
    }
}

/// Everything except the networks that defines a training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossProblem {
    pub domain: DomainSpec,
    pub boundary: BoundarySpec,
    pub physics: PhysicalParams,
    pub weights: LossWeights,
    pub dispersion: DispersionMode,
    pub velocity_delta: f64,
    /// Interpret the K network output as `ln K`.
    pub log_conductivity: bool,
    pub k_data: MeasurementSet,
    pub h_data: MeasurementSet,
    pub c_data: MeasurementSet,
    pub residuals: ResidualPointSet,
}

impl LossProblem {
    pub fn new(
        k_data: MeasurementSet,
        h_data: MeasurementSet,
        c_data: MeasurementSet,
        residuals: ResidualPointSet,
    ) -> Self {
        Self {
            domain: DomainSpec::default(),
            boundary: BoundarySpec::default(),
            physics: PhysicalParams::default(),
            weights: LossWeights::default(),
            dispersion: DispersionMode::Full,
            velocity_delta: 1e-8,
            log_conductivity: false,
            k_data,
            h_data,
            c_data,
            residuals,
        }
    }

    pub fn data(&self, v: Variable) -> &MeasurementSet {
        match v {
            Variable::K => &self.k_data,
            Variable::H => &self.h_data,
            Variable::C => &self.c_data,
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        self.domain.validate()?;
        self.physics.validate()?;
        if !(self.velocity_delta >= 0.0) {
            return Err(PhysicsError::InvalidParameter("velocity_delta must be >= 0".into()));
        }
        for v in Variable::ALL {
            let d = self.data(v);
            if d.variable != v {
                return Err(PhysicsError::InvalidParameter(format!(
                    "{} measurements supplied in the {v} slot",
                    d.variable
                )));
            }
            d.validate(&self.domain)?;
        }
        self.residuals.validate(&self.domain)
    }

    /// Networks a method trains.
    pub fn method_variables(&self, method: Method) -> Vec<Variable> {
        match method {
            Method::DataDriven => Variable::ALL
                .into_iter()
                .filter(|v| !self.data(*v).is_empty())
                .collect(),
            Method::PinnDarcy => vec![Variable::K, Variable::H],
            Method::Mpinn => Variable::ALL.to_vec(),
        }
    }

    /// Terms present in the loss of `method`. Terms with zero weight or no
    /// points are left out entirely.
    pub fn active_terms(&self, method: Method) -> Vec<LossTerm> {
        let r = &self.residuals;
        let wf = self.weights.omega_f != 0.0;
        let wb = self.weights.omega_b != 0.0;
        let physics_h = matches!(method, Method::PinnDarcy | Method::Mpinn);
        let physics_c = method == Method::Mpinn;
        let vars = self.method_variables(method);
        LossTerm::ALL
            .into_iter()
            .filter(|t| match t {
                LossTerm::DataK => vars.contains(&Variable::K) && !self.k_data.is_empty(),
                LossTerm::DataH => vars.contains(&Variable::H) && !self.h_data.is_empty(),
                LossTerm::DataC => vars.contains(&Variable::C) && !self.c_data.is_empty(),
                LossTerm::PdeFlow => physics_h && wf && !r.interior_h.is_empty(),
                LossTerm::FlowInlet => physics_h && wb && !r.flow_inlet.is_empty(),
                LossTerm::FlowLateral => physics_h && wb && !r.flow_lateral.is_empty(),
                LossTerm::FlowDirichlet => physics_h && wb && !r.flow_outlet.is_empty(),
                LossTerm::PdeSolute => physics_c && wf && !r.interior_c.is_empty(),
                LossTerm::SoluteOutlet => physics_c && wb && !r.solute_outlet.is_empty(),
                LossTerm::SoluteLateral => physics_c && wb && !r.solute_lateral.is_empty(),
                LossTerm::SoluteDirichlet => physics_c && wb && !r.solute_inlet.is_empty(),
            })
            .collect()
    }

    /// Check the measurement requirements of `method`: data-driven training
    /// needs data for every network it trains; the physics-informed methods
    /// need K and h data, while C data may be absent.
    pub fn check_data(&self, method: Method) -> Result<(), PhysicsError> {
        let required: &[Variable] = match method {
            Method::DataDriven => {
                if self.method_variables(method).is_empty() {
                    return Err(PhysicsError::EmptyData(Variable::K));
                }
                &[]
            }
            Method::PinnDarcy | Method::Mpinn => &[Variable::K, Variable::H],
        };
        for v in required {
            if self.data(*v).is_empty() {
                return Err(PhysicsError::EmptyData(*v));
            }
        }
        Ok(())
    }

    fn weight(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::DataK | LossTerm::DataH | LossTerm::DataC => 1.0,
            LossTerm::PdeFlow | LossTerm::PdeSolute => self.weights.omega_f,
            _ => self.weights.omega_b,
        }
    }
}

/// Networks bound to a tape, one slot per variable.
#[derive(Clone, Debug, Default)]
pub struct BoundNetworks {
    pub k: Option<BoundMlp>,
    pub h: Option<BoundMlp>,
    pub c: Option<BoundMlp>,
}

impl BoundNetworks {
    pub fn get(&self, v: Variable) -> Option<&BoundMlp> {
        match v {
            Variable::K => self.k.as_ref(),
            Variable::H => self.h.as_ref(),
            Variable::C => self.c.as_ref(),
        }
    }

    pub fn bind(nets: &[(Variable, &ParameterVector)], tape: &mut Tape) -> Result<Self, AutodiffError> {
        let mut out = Self::default();
        for (v, p) in nets {
            let b = Some(BoundMlp::bind(p, tape)?);
            match v {
                Variable::K => out.k = b,
                Variable::H => out.h = b,
                Variable::C => out.c = b,
            }
        }
        Ok(out)
    }
}

/// Subsets of the measurement sets used for one mini-batch step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataBatch {
    pub k: Option<Vec<usize>>,
    pub h: Option<Vec<usize>>,
    pub c: Option<Vec<usize>>,
}

impl DataBatch {
    fn get(&self, v: Variable) -> Option<&[usize]> {
        match v {
            Variable::K => self.k.as_deref(),
            Variable::H => self.h.as_deref(),
            Variable::C => self.c.as_deref(),
        }
    }
}

/// Scalar loss node and the node of each term (already weighted).
#[derive(Clone, Debug)]
pub struct AssembledLoss {
    pub total: Var,
    pub terms: Vec<(LossTerm, Var)>,
}

/// Build the loss of `method` on the tape. Only terms whose networks are all
/// bound are included, which lets a caller train a decoupled subset of the
/// networks on its own.
///
/// `J = J_d + omega_f (J_f^h + J_f^C) + omega_b (boundary terms)`, summed
/// sequentially in [`LossTerm::ALL`] order.
pub fn assemble_loss(
    tape: &mut Tape,
    method: Method,
    nets: &BoundNetworks,
    problem: &LossProblem,
    batch: Option<&DataBatch>,
) -> Result<AssembledLoss, PhysicsError> {
    let bound: Vec<Variable> = Variable::ALL.into_iter().filter(|v| nets.get(*v).is_some()).collect();
    let terms: Vec<LossTerm> = problem
        .active_terms(method)
        .into_iter()
        .filter(|t| t.variables().iter().all(|v| bound.contains(v)))
        .collect();
    if method == Method::DataDriven {
        for v in &bound {
            if problem.data(*v).is_empty() {
                return Err(PhysicsError::EmptyData(*v));
            }
        }
    }
    if terms.is_empty() {
        return Err(PhysicsError::EmptyData(bound.first().copied().unwrap_or(Variable::K)));
    }

    let r = &problem.residuals;
    let has = |t: LossTerm| terms.contains(&t);
    let needs_pde_h = has(LossTerm::PdeFlow);
    let needs_pde_c = has(LossTerm::PdeSolute);
    let needs_flow_bc = [LossTerm::FlowInlet, LossTerm::FlowLateral];

    // Row layout of the combined interior batch: [interior_h | interior_c].
    let interior: Vec<Point> = [
        if needs_pde_h { r.interior_h.as_slice() } else { &[] },
        if needs_pde_c { r.interior_c.as_slice() } else { &[] },
    ]
    .concat();
    let n_fh = if needs_pde_h { r.interior_h.len() } else { 0 };
    let n_fc = if needs_pde_c { r.interior_c.len() } else { 0 };
    // Flow Neumann layout: [inlet | lateral].
    let flow_bc: Vec<Point> = [
        if has(needs_flow_bc[0]) {
            r.flow_inlet.as_slice()
        } else {
            &[]
        },
        if has(needs_flow_bc[1]) {
            r.flow_lateral.as_slice()
        } else {
            &[]
        },
    ]
    .concat();
    let n_in = if has(LossTerm::FlowInlet) {
        r.flow_inlet.len()
    } else {
        0
    };
    let n_lat = flow_bc.len() - n_in;

    let k_transform = |tape: &mut Tape, g: GradientBundle| -> Result<GradientBundle, PhysicsError> {
        if !problem.log_conductivity {
            return Ok(g);
        }
        let k = tape.exp(g.u)?;
        Ok(GradientBundle {
            u: k,
            d1: tape.mul(k, g.d1)?,
            d2: tape.mul(k, g.d2)?,
        })
    };

    // K: first derivatives on interior and flow-Neumann points.
    let k_points: Vec<Point> = [interior.as_slice(), flow_bc.as_slice()].concat();
    let k_all = match (&nets.k, k_points.is_empty()) {
        (Some(net), false) => {
            let g = net.forward_with_gradient(tape, &k_points)?;
            Some(k_transform(tape, g)?)
        }
        _ => None,
    };
    let h_interior = match (&nets.h, interior.is_empty()) {
        (Some(net), false) => Some(net.forward_with_spatial(tape, &interior)?),
        _ => None,
    };
    let h_bc = match (&nets.h, flow_bc.is_empty()) {
        (Some(net), false) => Some(net.forward_with_gradient(tape, &flow_bc)?),
        _ => None,
    };

    let mut out: Vec<(LossTerm, Var)> = Vec::with_capacity(terms.len());
    for term in terms.iter().copied() {
        let j = match term {
            LossTerm::DataK | LossTerm::DataH | LossTerm::DataC => {
                let v = term.variables()[0];
                let net = nets.get(v).expect("filtered on bound networks");
                let data = problem.data(v);
                let (pts, vals): (Vec<Point>, Vec<f64>) = match batch.and_then(|b| b.get(v)) {
                    Some(idx) => idx.iter().map(|&i| (data.points[i], data.values[i])).unzip(),
                    None => (data.points.clone(), data.values.clone()),
                };
                let mut pred = net.forward(tape, &pts)?;
                if v == Variable::K && problem.log_conductivity {
                    pred = tape.exp(pred)?;
                }
                let target = tape.constant(Tensor::column(vals))?;
                let diff = tape.sub(pred, target)?;
                tape.mean_square(diff)?
            }
            LossTerm::PdeFlow => {
                let k = k_all.expect("K evaluated").slice(tape, 0, n_fh)?;
                let h = h_interior.expect("h evaluated").slice(tape, 0, n_fh)?;
                let f = darcy_residual(tape, &k, &h)?;
                tape.mean_square(f)?
            }
            LossTerm::PdeSolute => {
                let k = k_all.expect("K evaluated").slice(tape, n_fh, n_fc)?;
                let h = h_interior.expect("h evaluated").slice(tape, n_fh, n_fc)?;
                let c = nets
                    .c
                    .as_ref()
                    .expect("bound")
                    .forward_with_spatial(tape, &r.interior_c)?;
                let f = ade_residual(
                    tape,
                    &k,
                    &h,
                    &c,
                    &problem.physics,
                    problem.dispersion,
                    problem.velocity_delta,
                )?;
                tape.mean_square(f)?
            }
            LossTerm::FlowInlet | LossTerm::FlowLateral => {
                let (start, len, side) = if term == LossTerm::FlowInlet {
                    (0, n_in, Segment::Inlet)
                } else {
                    (n_in, n_lat, Segment::Bottom)
                };
                let k = k_all.expect("K evaluated").slice(tape, n_fh + n_fc + start, len)?;
                let h = h_bc.expect("h evaluated").slice(tape, start, len)?;
                let f = neumann_residual(tape, NeumannFields::Flow { k: &k, h: &h }, side, &problem.boundary)?;
                tape.mean_square(f)?
            }
            LossTerm::FlowDirichlet => {
                let net = nets.h.as_ref().expect("bound");
                let pred = net.forward(tape, &r.flow_outlet)?;
                let diff = tape.offset(pred, -problem.boundary.h2)?;
                tape.mean_square(diff)?
            }
            LossTerm::SoluteOutlet | LossTerm::SoluteLateral => {
                let (pts, side) = if term == LossTerm::SoluteOutlet {
                    (&r.solute_outlet, Segment::Outlet)
                } else {
                    (&r.solute_lateral, Segment::Bottom)
                };
                let c = nets.c.as_ref().expect("bound").forward_with_gradient(tape, pts)?;
                let f = neumann_residual(tape, NeumannFields::Solute { c: &c }, side, &problem.boundary)?;
                tape.mean_square(f)?
            }
            LossTerm::SoluteDirichlet => {
                let net = nets.c.as_ref().expect("bound");
                let pred = net.forward(tape, &r.solute_inlet)?;
                let target: Vec<f64> = r
                    .solute_inlet
                    .iter()
                    .map(|p| problem.boundary.inlet_concentration(p[1], &problem.domain))
                    .collect();
                let target = tape.constant(Tensor::column(target))?;
                let diff = tape.sub(pred, target)?;
                tape.mean_square(diff)?
            }
        };
        let w = problem.weight(term);
        let j = if w == 1.0 { j } else { tape.scale(j, w)? };
        out.push((term, j));
    }

    let mut total = out[0].1;
    for &(_, j) in &out[1..] {
        total = tape.add(total, j)?;
    }
    Ok(AssembledLoss { total, terms: out })
}

/// Loss value, term values and per-network flat gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEvaluation {
    pub total: f64,
    pub terms: Vec<(LossTerm, f64)>,
    pub gradients: Vec<(Variable, Vec<f64>)>,
}

/// Record, evaluate and differentiate the loss on a fresh tape.
pub fn evaluate_loss(
    method: Method,
    nets: &[(Variable, &ParameterVector)],
    problem: &LossProblem,
    batch: Option<&DataBatch>,
) -> Result<LossEvaluation, PhysicsError> {
    let mut tape = Tape::new();
    let bound = BoundNetworks::bind(nets, &mut tape)?;
    let loss = assemble_loss(&mut tape, method, &bound, problem, batch)?;
    let grads = tape.backward(loss.total)?;
    let gradients = nets
        .iter()
        .map(|(v, _)| (*v, bound.get(*v).expect("bound").flat_gradient(&grads)))
        .collect();
    Ok(LossEvaluation {
        total: tape.value(loss.total).data()[0],
        terms: loss.terms.iter().map(|(t, j)| (*t, tape.value(*j).data()[0])).collect(),
        gradients,
    })
}
