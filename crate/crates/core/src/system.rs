//! Primal system definitions: built-in dynamical systems, constraint-force
//! prescriptions, and the declarative `SystemSpec` used by configs.
//!
//! Two structural forms are supported. A *first-order* system is a plain ODE
//! `xdot = F(x, t)`; its only dual field is `rho`. A *mechanical* system is
//! the constrained differential-algebraic form
//!
//! ```text
//!   xdot = v,  vdot = f(x, v, Q, t),  0 = g(x, v, t),  0 = W(x, v, Q, s, t),
//! ```
//!
//! with dual fields `(rho, lambda, mu, Lambda)`. The built-ins are the Lorenz
//! system, the Pars particle (several constraint-force laws), its
//! generalization with constant `(L, b)` data, the reduced Pars velocity
//! system, and a generic polynomial ODE family.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances for double precision with RK4 steps h <= 1e-3.
pub mod tol {
    /// Initial-data constraint consistency.
    pub const EPS_IC: f64 = 1e-9;
    /// Constraint residual along solutions.
    pub const EPS_C: f64 = 1e-9;
    /// Constraint-force power residual.
    pub const EPS_POW: f64 = 1e-9;
    /// Near-singularity threshold for n.n denominators and DtP matrices.
    pub const EPS_SING: f64 = 1e-12;
    /// Stationarity residual of the dual-to-primal map.
    pub const EPS_DTP: f64 = 1e-10;
    /// Numerical rank threshold (relative) for velocity splits.
    pub const EPS_RANK: f64 = 1e-10;
}

/// Full primal state `U = (x, v, Q, R, s)`.
///
/// First-order systems use only `x`; mechanical systems without explicit
/// rate-dependence carry an empty `r` and, when no power law is configured,
/// a slack pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalState {
    pub x: Vec<f64>,
    #[serde(default)]
    pub v: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub r: Vec<f64>,
    #[serde(default)]
    pub s: f64,
}

impl PrimalState {
    pub fn first_order(x: Vec<f64>) -> Self {
        PrimalState {
            x,
            v: vec![],
            q: vec![],
            r: vec![],
            s: 0.0,
        }
    }

    pub fn mechanical(x: Vec<f64>, v: Vec<f64>, q: Vec<f64>, s: f64) -> Self {
        PrimalState {
            x,
            v,
            q,
            r: vec![],
            s,
        }
    }
}

/// Block sizes of the primal state (and hence of the dual fields).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    /// positions (or the whole state for first-order systems)
    pub nx: usize,
    /// velocities (0 for first-order systems)
    pub nv: usize,
    /// constraints
    pub m: usize,
    /// constraint parameters Q
    pub nq: usize,
    /// slack (0 or 1)
    pub ns: usize,
}

impl StateLayout {
    pub fn first_order(nx: usize) -> Self {
        StateLayout {
            nx,
            nv: 0,
            m: 0,
            nq: 0,
            ns: 0,
        }
    }

    /// Total width of a packed primal state [x, v, Q, s].
    pub fn primal_width(&self) -> usize {
        self.nx + self.nv + self.nq + self.ns
    }

    /// Total width of a packed dual state [rho, lambda, mu, Lambda].
    pub fn dual_width(&self) -> usize {
        self.nx + self.nv + self.m + self.ns
    }
}

/// First-order ODE `xdot = F(x, t)`.
pub trait OdeSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Jacobian dF/dx. The default is a central finite difference; systems
    /// that enter the dual pipeline override it analytically.
    fn rhs_jacobian(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        let n = self.dim();
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let eps = 1e-7 * (1.0 + x[j].abs());
            xp[j] = x[j] + eps;
            self.rhs(t, &xp, &mut fp);
            xp[j] = x[j] - eps;
            self.rhs(t, &xp, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                out[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
    }

    fn autonomous(&self) -> bool {
        true
    }
}

/// Mechanical system `xdot = v, vdot = f, g = 0, W = 0` with the force split
/// already folded into `accel` (f = f_applied - f_constraint).
pub trait MechSystem: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_g(&self) -> usize;
    fn dim_q(&self) -> usize;
    fn has_slack(&self) -> bool;

    fn accel(&self, t: f64, x: &[f64], v: &[f64], q: &[f64], out: &mut [f64]);
    /// d(accel)/dx, /dv, /dq stacked into the three matrices.
    fn accel_jac(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        q: &[f64],
        jx: &mut DMatrix<f64>,
        jv: &mut DMatrix<f64>,
        jq: &mut DMatrix<f64>,
    );

    fn constraint(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);
    fn constraint_jac(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        gx: &mut DMatrix<f64>,
        gv: &mut DMatrix<f64>,
    );

    fn power_residual(&self, t: f64, x: &[f64], v: &[f64], q: &[f64], s: f64) -> f64;
    /// Gradient of W; returns dW/ds.
    fn power_grad(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        q: &[f64],
        s: f64,
        wx: &mut [f64],
        wv: &mut [f64],
        wq: &mut [f64],
    ) -> f64;

    fn autonomous(&self) -> bool {
        true
    }

    fn layout(&self) -> StateLayout {
        StateLayout {
            nx: self.dim_x(),
            nv: self.dim_x(),
            m: self.dim_g(),
            nq: self.dim_q(),
            ns: if self.has_slack() { 1 } else { 0 },
        }
    }
}

/// A primal model entering the dual pipeline.
pub enum Model {
    Ode(Box<dyn OdeSystem>),
    Mech(Box<dyn MechSystem>),
}

impl Model {
    pub fn layout(&self) -> StateLayout {
        match self {
            Model::Ode(s) => StateLayout::first_order(s.dim()),
            Model::Mech(s) => s.layout(),
        }
    }

    pub fn autonomous(&self) -> bool {
        match self {
            Model::Ode(s) => s.autonomous(),
            Model::Mech(s) => s.autonomous(),
        }
    }
}

// ---------------------------------------------------------------------------
// built-in systems
// ---------------------------------------------------------------------------

/// Lorenz system with parameters (A, R, B).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LorenzParams {
    pub a: f64,
    pub r: f64,
    pub b: f64,
}

impl Default for LorenzParams {
    /// Classic values; the formulation does not fix them, this is
    /// configuration, not ground truth.
    fn default() -> Self {
        LorenzParams {
            a: 10.0,
            r: 28.0,
            b: 8.0 / 3.0,
        }
    }
}

pub struct Lorenz(pub LorenzParams);

impl OdeSystem for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let LorenzParams { a, r, b } = self.0;
        out[0] = a * (x[1] - x[0]);
        out[1] = x[0] * (r - x[2]) - x[1];
        out[2] = x[0] * x[1] - b * x[2];
    }

    fn rhs_jacobian(&self, _t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        let LorenzParams { a, r, b } = self.0;
        out[(0, 0)] = -a;
        out[(0, 1)] = a;
        out[(0, 2)] = 0.0;
        out[(1, 0)] = r - x[2];
        out[(1, 1)] = -1.0;
        out[(1, 2)] = -x[0];
        out[(2, 0)] = x[1];
        out[(2, 1)] = x[0];
        out[(2, 2)] = -b;
    }
}

/// One monomial term of a polynomial ODE: `coef * prod x[var]^pow` feeding
/// component `out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTerm {
    pub out: usize,
    pub coef: f64,
    #[serde(default)]
    pub monomial: Vec<(usize, u32)>,
}

/// Polynomial ODE family; coefficients come from configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyOde {
    pub dim: usize,
    pub terms: Vec<PolyTerm>,
}

impl PolyOde {
    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if t.out >= self.dim {
                return Err(Error::Config(format!(
                    "poly_ode term targets component {} of a {}-dim system",
                    t.out, self.dim
                )));
            }
            for &(v, _) in &t.monomial {
                if v >= self.dim {
                    return Err(Error::Config(format!(
                        "poly_ode monomial uses variable {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Lorenz written as a polynomial system; used for cross-checks.
    pub fn lorenz(p: LorenzParams) -> Self {
        PolyOde {
            dim: 3,
            terms: vec![
                PolyTerm {
                    out: 0,
                    coef: p.a,
                    monomial: vec![(1, 1)],
                },
                PolyTerm {
                    out: 0,
                    coef: -p.a,
                    monomial: vec![(0, 1)],
                },
                PolyTerm {
                    out: 1,
                    coef: p.r,
                    monomial: vec![(0, 1)],
                },
                PolyTerm {
                    out: 1,
                    coef: -1.0,
                    monomial: vec![(0, 1), (2, 1)],
                },
                PolyTerm {
                    out: 1,
                    coef: -1.0,
                    monomial: vec![(1, 1)],
                },
                PolyTerm {
                    out: 2,
                    coef: 1.0,
                    monomial: vec![(0, 1), (1, 1)],
                },
                PolyTerm {
                    out: 2,
                    coef: -p.b,
                    monomial: vec![(2, 1)],
                },
            ],
        }
    }

    /// xdot = -x in `dim` dimensions.
    pub fn linear_decay(dim: usize) -> Self {
        PolyOde {
            dim,
            terms: (0..dim)
                .map(|i| PolyTerm {
                    out: i,
                    coef: -1.0,
                    monomial: vec![(i, 1)],
                })
                .collect(),
        }
    }
}

impl OdeSystem for PolyOde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for t in &self.terms {
            let mut v = t.coef;
            for &(var, pow) in &t.monomial {
                v *= x[var].powi(pow as i32);
            }
            out[t.out] += v;
        }
    }

    fn rhs_jacobian(&self, _t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for t in &self.terms {
            for (slot, &(var, pow)) in t.monomial.iter().enumerate() {
                if pow == 0 {
                    continue;
                }
                let mut v = t.coef * pow as f64 * x[var].powi(pow as i32 - 1);
                for (other, &(ovar, opow)) in t.monomial.iter().enumerate() {
                    if other != slot {
                        v *= x[ovar].powi(opow as i32);
                    }
                }
                out[(t.out, var)] += v;
            }
        }
    }
}

/// Reduced Pars velocity system: state (v1, v2) with
/// `z(t) = x3_0 + v3_0 t` eliminating the third coordinate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParsReducedV {
    pub x3_0: f64,
    pub v3_0: f64,
}

impl ParsReducedV {
    #[inline]
    pub fn z(&self, t: f64) -> f64 {
        self.x3_0 + self.v3_0 * t
    }

    /// Closed-form solution: v1 scales with sqrt((1+z^2)/(1+z0^2)) and v2
    /// accumulates asinh(z).
    pub fn exact(&self, v0: [f64; 2], t: f64) -> [f64; 2] {
        let z0 = self.x3_0;
        let z = self.z(t);
        let scale = ((1.0 + z * z) / (1.0 + z0 * z0)).sqrt();
        let v1 = v0[0] * scale;
        let v2 = v0[1] + v0[0] / (1.0 + z0 * z0).sqrt() * (z.asinh() - z0.asinh());
        [v1, v2]
    }
}

impl OdeSystem for ParsReducedV {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let z = self.z(t);
        let den = 1.0 + z * z;
        out[0] = x[0] * z * self.v3_0 / den;
        out[1] = x[0] * self.v3_0 / den;
    }

    fn rhs_jacobian(&self, t: f64, _x: &[f64], out: &mut DMatrix<f64>) {
        let z = self.z(t);
        let den = 1.0 + z * z;
        out[(0, 0)] = z * self.v3_0 / den;
        out[(0, 1)] = 0.0;
        out[(1, 0)] = self.v3_0 / den;
        out[(1, 1)] = 0.0;
    }

    fn autonomous(&self) -> bool {
        false
    }
}

/// Constraint-force prescriptions for the Pars particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsLaw {
    /// Gauss least constraint: Q = lambda* a(x).
    Gauss,
    /// Damped/vortical force Q = lambda* a + a x v + nu v; nu = 0 is the pure
    /// vortical case.
    Vortical { nu: f64 },
    /// The reduced equations of motion (equivalent trajectory to Gauss).
    Reduced,
}

/// Full Pars particle as a 6-dim first-order system, state (x, v).
pub struct ParsFull {
    pub law: ParsLaw,
}

/// Constraint row of the Pars particle: a(x) = (x3, -1, 0). The underlying
/// constraint form eta = x3 dx1 - dx2 is anholonomic (eta ^ d eta != 0), so
/// no integrating factor reduces it to a coordinate constraint.
#[inline]
pub fn pars_a(x: &[f64]) -> [f64; 3] {
    [x[2], -1.0, 0.0]
}

/// Gauss multiplier for the (possibly damped) Pars particle.
#[inline]
pub fn pars_lambda_star(x: &[f64], v: &[f64], nu: f64) -> f64 {
    (v[2] * v[0] + nu * (v[1] - x[2] * v[0])) / (x[2] * x[2] + 1.0)
}

impl OdeSystem for ParsFull {
    fn dim(&self) -> usize {
        6
    }

    fn rhs(&self, _t: f64, s: &[f64], out: &mut [f64]) {
        let (x, v) = s.split_at(3);
        out[0] = v[0];
        out[1] = v[1];
        out[2] = v[2];
        let acc = &mut out[3..6];
        match self.law {
            ParsLaw::Gauss => {
                let ls = pars_lambda_star(x, v, 0.0);
                let a = pars_a(x);
                for i in 0..3 {
                    acc[i] = -ls * a[i];
                }
            }
            ParsLaw::Vortical { nu } => {
                let ls = pars_lambda_star(x, v, nu);
                let a = pars_a(x);
                // n x v with n = (x3, -1, 0)
                let nxv = [-v[2], -x[2] * v[2], x[2] * v[1] + v[0]];
                for i in 0..3 {
                    acc[i] = -ls * a[i] - nxv[i] - nu * v[i];
                }
            }
            ParsLaw::Reduced => {
                let den = 1.0 + x[2] * x[2];
                acc[0] = -v[0] * x[2] * v[2] / den;
                acc[1] = v[0] * v[2] / den;
                acc[2] = 0.0;
            }
        }
    }
}

/// Generalized Pars system with Gauss closure, as an oracle ODE over (x, v).
pub struct GenParsGaussOracle {
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl GenParsGaussOracle {
    pub fn n_of(&self, x: &[f64]) -> DVector<f64> {
        &self.b + &self.l * DVector::from_column_slice(x)
    }
}

impl OdeSystem for GenParsGaussOracle {
    fn dim(&self) -> usize {
        2 * self.b.len()
    }

    fn rhs(&self, _t: f64, s: &[f64], out: &mut [f64]) {
        let m = self.b.len();
        let (x, v) = s.split_at(m);
        out[..m].copy_from_slice(v);
        let n = self.n_of(x);
        let vv = DVector::from_column_slice(v);
        let w = vv.dot(&(&self.l * &vv));
        let nn = n.dot(&n);
        let ls = w / nn;
        for i in 0..m {
            out[m + i] = -ls * n[i];
        }
    }
}

/// Generalized Pars system in mechanical (dual-pipeline) form with free
/// constraint parameters: f = -Q, g = (b + Lx).v, W = Q.v - s^2/2.
pub struct GenParsMech {
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
    pub slack: bool,
}

impl GenParsMech {
    pub fn pars() -> Self {
        let mut l = DMatrix::zeros(3, 3);
        l[(0, 2)] = 1.0;
        let mut b = DVector::zeros(3);
        b[1] = -1.0;
        GenParsMech { l, b, slack: true }
    }
}

impl MechSystem for GenParsMech {
    fn dim_x(&self) -> usize {
        self.b.len()
    }

    fn dim_g(&self) -> usize {
        1
    }

    fn dim_q(&self) -> usize {
        self.b.len()
    }

    fn has_slack(&self) -> bool {
        self.slack
    }

    fn accel(&self, _t: f64, _x: &[f64], _v: &[f64], q: &[f64], out: &mut [f64]) {
        for (o, qi) in out.iter_mut().zip(q) {
            *o = -qi;
        }
    }

    fn accel_jac(
        &self,
        _t: f64,
        _x: &[f64],
        _v: &[f64],
        _q: &[f64],
        jx: &mut DMatrix<f64>,
        jv: &mut DMatrix<f64>,
        jq: &mut DMatrix<f64>,
    ) {
        jx.fill(0.0);
        jv.fill(0.0);
        jq.fill(0.0);
        for i in 0..self.b.len() {
            jq[(i, i)] = -1.0;
        }
    }

    fn constraint(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n_row(x);
        out[0] = n.iter().zip(v).map(|(a, b)| a * b).sum();
    }

    fn constraint_jac(
        &self,
        _t: f64,
        x: &[f64],
        v: &[f64],
        gx: &mut DMatrix<f64>,
        gv: &mut DMatrix<f64>,
    ) {
        // g = (b + Lx).v  =>  dg/dx_i = (L^T v)_i, dg/dv_i = (b + Lx)_i
        let m = self.b.len();
        let lv = self.l.transpose() * DVector::from_column_slice(v);
        let n = self.n_row(x);
        for i in 0..m {
            gx[(0, i)] = lv[i];
            gv[(0, i)] = n[i];
        }
    }

    fn power_residual(&self, _t: f64, _x: &[f64], v: &[f64], q: &[f64], s: f64) -> f64 {
        let qv: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
        qv - 0.5 * s * s
    }

    fn power_grad(
        &self,
        _t: f64,
        _x: &[f64],
        v: &[f64],
        q: &[f64],
        s: f64,
        wx: &mut [f64],
        wv: &mut [f64],
        wq: &mut [f64],
    ) -> f64 {
        wx.fill(0.0);
        wv.copy_from_slice(q);
        wq.copy_from_slice(v);
        -s
    }
}

impl GenParsMech {
    fn n_row(&self, x: &[f64]) -> DVector<f64> {
        &self.b + &self.l * DVector::from_column_slice(x)
    }
}

// ---------------------------------------------------------------------------
// declarative spec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    Lorenz,
    Pars,
    GenPars,
    PolyOde,
    /// Reduced Pars velocity system (v1, v2) with z(t) eliminated.
    ParsReduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForceLaw {
    /// No assumption on the constraint-force form: f_c = Q.
    #[default]
    FreeQ,
    /// d'Alembert form for a linear-in-velocity constraint.
    Dalembert,
    /// Gauss least constraint, f_c = lambda* n.
    Gauss,
    /// Constraint force of the constrained Hamiltonian formalism,
    /// f_c = -Qdot a - Q (curl a) v.
    HamiltonianLinear,
    /// Q = lambda* a + a x v + nu v.
    VorticalDamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerLaw {
    #[default]
    None,
    /// W = Q.v - s^2/2 with a non-negativity slack s.
    NonnegSlack,
}

/// Parameter values in a system config; scalar, vector, or matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    #[serde(default)]
    pub x0: Vec<f64>,
    #[serde(default)]
    pub v0: Vec<f64>,
}

/// Declarative description of a primal system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub system: SystemId,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub force_law: ForceLaw,
    #[serde(default)]
    pub power_law: PowerLaw,
    #[serde(default)]
    pub initial: InitialData,
}

impl SystemSpec {
    pub fn lorenz(p: LorenzParams, x0: [f64; 3]) -> Self {
        let mut params = BTreeMap::new();
        params.insert("a".into(), ParamValue::Scalar(p.a));
        params.insert("r".into(), ParamValue::Scalar(p.r));
        params.insert("b".into(), ParamValue::Scalar(p.b));
        SystemSpec {
            system: SystemId::Lorenz,
            params,
            force_law: ForceLaw::FreeQ,
            power_law: PowerLaw::None,
            initial: InitialData {
                x0: x0.to_vec(),
                v0: vec![],
            },
        }
    }

    pub fn pars(force_law: ForceLaw, nu: f64, x0: [f64; 3], v0: [f64; 3]) -> Self {
        let mut params = BTreeMap::new();
        params.insert("nu".into(), ParamValue::Scalar(nu));
        SystemSpec {
            system: SystemId::Pars,
            params,
            force_law,
            power_law: PowerLaw::NonnegSlack,
            initial: InitialData {
                x0: x0.to_vec(),
                v0: v0.to_vec(),
            },
        }
    }

    pub fn gen_pars(l: Vec<Vec<f64>>, b: Vec<f64>, x0: Vec<f64>, v0: Vec<f64>) -> Self {
        let mut params = BTreeMap::new();
        params.insert("l".into(), ParamValue::Matrix(l));
        params.insert("b".into(), ParamValue::Vector(b));
        SystemSpec {
            system: SystemId::GenPars,
            params,
            force_law: ForceLaw::FreeQ,
            power_law: PowerLaw::NonnegSlack,
            initial: InitialData { x0, v0 },
        }
    }

    pub fn pars_reduced(x3_0: f64, v3_0: f64, v0: [f64; 2]) -> Self {
        let mut params = BTreeMap::new();
        params.insert("x3_0".into(), ParamValue::Scalar(x3_0));
        params.insert("v3_0".into(), ParamValue::Scalar(v3_0));
        SystemSpec {
            system: SystemId::ParsReduced,
            params,
            force_law: ForceLaw::FreeQ,
            power_law: PowerLaw::None,
            initial: InitialData {
                x0: v0.to_vec(),
                v0: vec![],
            },
        }
    }

    pub fn poly(ode: PolyOde, x0: Vec<f64>) -> Self {
        let mut params = BTreeMap::new();
        params.insert(
            "terms".into(),
            ParamValue::Matrix(
                ode.terms
                    .iter()
                    .map(|t| {
                        let mut row = vec![t.out as f64, t.coef];
                        for &(v, p) in &t.monomial {
                            row.push(v as f64);
                            row.push(p as f64);
                        }
                        row
                    })
                    .collect(),
            ),
        );
        params.insert("dim".into(), ParamValue::Scalar(ode.dim as f64));
        SystemSpec {
            system: SystemId::PolyOde,
            params,
            force_law: ForceLaw::FreeQ,
            power_law: PowerLaw::None,
            initial: InitialData { x0, v0: vec![] },
        }
    }

    pub fn scalar(&self, key: &str) -> Result<f64> {
        match self.params.get(key) {
            Some(ParamValue::Scalar(v)) => Ok(*v),
            _ => Err(Error::Config(format!("missing scalar param '{key}'"))),
        }
    }

    fn scalar_or(&self, key: &str, default: f64) -> f64 {
        match self.params.get(key) {
            Some(ParamValue::Scalar(v)) => *v,
            _ => default,
        }
    }

    pub fn lorenz_params(&self) -> LorenzParams {
        LorenzParams {
            a: self.scalar_or("a", 10.0),
            r: self.scalar_or("r", 28.0),
            b: self.scalar_or("b", 8.0 / 3.0),
        }
    }

    pub fn gen_pars_data(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let l = match self.params.get("l") {
            Some(ParamValue::Matrix(rows)) => {
                let m = rows.len();
                let mut l = DMatrix::zeros(m, m);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != m {
                        return Err(Error::Config("gen_pars L must be square".into()));
                    }
                    for (j, v) in row.iter().enumerate() {
                        l[(i, j)] = *v;
                    }
                }
                l
            }
            _ => return Err(Error::Config("gen_pars needs matrix param 'l'".into())),
        };
        let b = match self.params.get("b") {
            Some(ParamValue::Vector(v)) => DVector::from_column_slice(v),
            _ => return Err(Error::Config("gen_pars needs vector param 'b'".into())),
        };
        if b.len() != l.nrows() {
            return Err(Error::Config("gen_pars b length must match L".into()));
        }
        Ok((l, b))
    }

    pub fn poly_ode_data(&self) -> Result<PolyOde> {
        let dim = self.scalar("dim")? as usize;
        let rows = match self.params.get("terms") {
            Some(ParamValue::Matrix(rows)) => rows,
            _ => return Err(Error::Config("poly_ode needs matrix param 'terms'".into())),
        };
        let mut terms = Vec::new();
        for row in rows {
            if row.len() < 2 || row.len() % 2 != 0 {
                return Err(Error::Config(
                    "poly_ode term rows are [out, coef, (var, pow)...]".into(),
                ));
            }
            let mut monomial = Vec::new();
            for pair in row[2..].chunks(2) {
                monomial.push((pair[0] as usize, pair[1] as u32));
            }
            terms.push(PolyTerm {
                out: row[0] as usize,
                coef: row[1],
                monomial,
            });
        }
        let ode = PolyOde { dim, terms };
        ode.validate()?;
        Ok(ode)
    }

    pub fn pars_reduced_data(&self) -> Result<ParsReducedV> {
        Ok(ParsReducedV {
            x3_0: self.scalar("x3_0")?,
            v3_0: self.scalar("v3_0")?,
        })
    }

    /// Dimensions (d, N, m, Gamma-bar).
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        match self.system {
            SystemId::Lorenz => (3, 1, 0, 0),
            SystemId::ParsReduced => (2, 1, 0, 0),
            SystemId::PolyOde => {
                let d = self.scalar_or("dim", 0.0) as usize;
                (d, 1, 0, 0)
            }
            SystemId::Pars => {
                let gamma = match self.force_law {
                    ForceLaw::FreeQ => 3,
                    _ => 1,
                };
                (3, 1, 1, gamma)
            }
            SystemId::GenPars => {
                let m = match self.params.get("b") {
                    Some(ParamValue::Vector(v)) => v.len(),
                    _ => 0,
                };
                (m, 1, 1, m)
            }
        }
    }

    /// Validate dimension bounds and initial-data constraint consistency.
    pub fn validate(&self) -> Result<()> {
        let (d, n, m, gamma) = self.dims();
        let dn = d * n;
        if m > 0 {
            if m >= dn {
                return Err(Error::Config(format!("need m < d.N, got m={m}, d.N={dn}")));
            }
            if gamma < m || gamma > dn {
                return Err(Error::Config(format!(
                    "need m <= Gamma-bar <= d.N, got Gamma-bar={gamma}"
                )));
            }
        }
        match self.system {
            SystemId::Lorenz | SystemId::PolyOde | SystemId::ParsReduced => {
                if self.initial.x0.len() != d {
                    return Err(Error::DimensionMismatch {
                        what: "initial x0",
                        expected: d,
                        got: self.initial.x0.len(),
                    });
                }
            }
            SystemId::Pars | SystemId::GenPars => {
                if self.initial.x0.len() != d || self.initial.v0.len() != d {
                    return Err(Error::DimensionMismatch {
                        what: "initial (x0, v0)",
                        expected: d,
                        got: self.initial.x0.len().max(self.initial.v0.len()),
                    });
                }
                let g = self.constraint_value(&self.initial.x0, &self.initial.v0)?;
                if g.abs() > tol::EPS_IC {
                    return Err(Error::Precondition(format!(
                        "initial data violates the constraint: g(x0, v0, 0) = {g:.3e}"
                    )));
                }
                if let ForceLaw::VorticalDamped = self.force_law {
                    if self.scalar_or("nu", 0.0) < 0.0 {
                        return Err(Error::Config("vortical_damped needs nu >= 0".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// g(x, v) for the constrained built-ins.
    pub fn constraint_value(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        match self.system {
            SystemId::Pars => Ok(x[2] * v[0] - v[1]),
            SystemId::GenPars => {
                let (l, b) = self.gen_pars_data()?;
                let n = b + l * DVector::from_column_slice(x);
                Ok(n.dot(&DVector::from_column_slice(v)))
            }
            _ => Err(Error::Unsupported("system has no constraints".into())),
        }
    }

    /// Build the forward-integrable (oracle) first-order system.
    pub fn build_oracle(&self) -> Result<Box<dyn OdeSystem>> {
        match self.system {
            SystemId::Lorenz => Ok(Box::new(Lorenz(self.lorenz_params()))),
            SystemId::PolyOde => Ok(Box::new(self.poly_ode_data()?)),
            SystemId::ParsReduced => Ok(Box::new(self.pars_reduced_data()?)),
            SystemId::Pars => {
                let law = match self.force_law {
                    ForceLaw::Gauss | ForceLaw::Dalembert => ParsLaw::Gauss,
                    ForceLaw::VorticalDamped => ParsLaw::Vortical { nu: self.scalar_or("nu", 0.0) },
                    ForceLaw::FreeQ => {
                        return Err(Error::Unsupported(
                            "free_Q leaves the system underdetermined; pick a determinate force law for forward integration"
                                .into(),
                        ))
                    }
                    ForceLaw::HamiltonianLinear => {
                        return Err(Error::Unsupported(
                            "hamiltonian_linear oracle integration is not built in".into(),
                        ))
                    }
                };
                if let ParsLaw::Vortical { nu } = law {
                    if nu < 0.0 {
                        return Err(Error::Config("vortical_damped needs nu >= 0".into()));
                    }
                }
                Ok(Box::new(ParsFull { law }))
            }
            SystemId::GenPars => {
                let (l, b) = self.gen_pars_data()?;
                match self.force_law {
                    ForceLaw::Gauss | ForceLaw::Dalembert => {
                        Ok(Box::new(GenParsGaussOracle { l, b }))
                    }
                    _ => Err(Error::Unsupported(
                        "gen_pars forward integration is built in for the Gauss closure only"
                            .into(),
                    )),
                }
            }
        }
    }

    /// Oracle state width (first-order packing).
    pub fn oracle_width(&self) -> usize {
        match self.system {
            SystemId::Lorenz => 3,
            SystemId::ParsReduced => 2,
            SystemId::PolyOde => self.scalar_or("dim", 0.0) as usize,
            SystemId::Pars => 6,
            SystemId::GenPars => 2 * self.dims().0,
        }
    }

    /// Oracle initial state (first-order packing).
    pub fn oracle_initial(&self) -> Vec<f64> {
        match self.system {
            SystemId::Lorenz | SystemId::PolyOde | SystemId::ParsReduced => self.initial.x0.clone(),
            SystemId::Pars | SystemId::GenPars => {
                let mut s = self.initial.x0.clone();
                s.extend_from_slice(&self.initial.v0);
                s
            }
        }
    }

    /// Build the model entering the dual pipeline.
    pub fn build_dual_model(&self) -> Result<Model> {
        match self.system {
            SystemId::Lorenz => Ok(Model::Ode(Box::new(Lorenz(self.lorenz_params())))),
            SystemId::PolyOde => Ok(Model::Ode(Box::new(self.poly_ode_data()?))),
            SystemId::ParsReduced => Ok(Model::Ode(Box::new(self.pars_reduced_data()?))),
            SystemId::Pars => Ok(Model::Mech(Box::new(GenParsMech::pars()))),
            SystemId::GenPars => {
                let (l, b) = self.gen_pars_data()?;
                Ok(Model::Mech(Box::new(GenParsMech {
                    l,
                    b,
                    slack: self.power_law == PowerLaw::NonnegSlack,
                })))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_rhs_hand_value() {
        let sys = Lorenz(LorenzParams::default());
        let mut out = [0.0; 3];
        sys.rhs(0.0, &[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 26.0);
        assert!((out[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn lorenz_jacobian_matches_fd() {
        let sys = Lorenz(LorenzParams::default());
        let x = [1.3, -0.4, 2.2];
        let mut ja = DMatrix::zeros(3, 3);
        sys.rhs_jacobian(0.0, &x, &mut ja);
        // compare against the trait's default finite difference
        struct Fd(Lorenz);
        impl OdeSystem for Fd {
            fn dim(&self) -> usize {
                3
            }
            fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
                self.0.rhs(t, x, out)
            }
        }
        let mut jf = DMatrix::zeros(3, 3);
        Fd(Lorenz(LorenzParams::default())).rhs_jacobian(0.0, &x, &mut jf);
        assert!((ja - jf).abs().max() < 1e-6);
    }

    #[test]
    fn poly_lorenz_agrees_with_lorenz() {
        let p = LorenzParams::default();
        let a = Lorenz(p);
        let b = PolyOde::lorenz(p);
        let x = [0.7, -1.1, 3.0];
        let (mut fa, mut fb) = ([0.0; 3], [0.0; 3]);
        a.rhs(0.0, &x, &mut fa);
        b.rhs(0.0, &x, &mut fb);
        for i in 0..3 {
            // term orderings differ, so only ulp-level agreement is expected
            assert!((fa[i] - fb[i]).abs() < 1e-12);
        }
        let mut ja = DMatrix::zeros(3, 3);
        let mut jb = DMatrix::zeros(3, 3);
        a.rhs_jacobian(0.0, &x, &mut ja);
        b.rhs_jacobian(0.0, &x, &mut jb);
        assert!((ja - jb).abs().max() < 1e-13);
    }

    #[test]
    fn pars_reduced_exact_solution_derivative() {
        // exact() must satisfy the ODE: check by finite differences in t
        let sys = ParsReducedV {
            x3_0: 0.3,
            v3_0: 1.4,
        };
        let v0 = [1.0, -0.5];
        let t = 0.8;
        let eps = 1e-6;
        let vp = sys.exact(v0, t + eps);
        let vm = sys.exact(v0, t - eps);
        let v = sys.exact(v0, t);
        let mut f = [0.0; 2];
        sys.rhs(t, &v, &mut f);
        for i in 0..2 {
            let fd = (vp[i] - vm[i]) / (2.0 * eps);
            assert!((fd - f[i]).abs() < 1e-8, "component {i}");
        }
    }

    #[test]
    fn spec_validation_rejects_inconsistent_ic() {
        // x3 v1 - v2 = 1 at the initial state
        let bad = SystemSpec::pars(ForceLaw::Gauss, 0.0, [0.0, 0.0, 1.0], [1.0, 0.0, 1.0]);
        assert!(matches!(bad.validate(), Err(Error::Precondition(_))));
        let good = SystemSpec::pars(ForceLaw::Gauss, 0.0, [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]);
        good.validate().unwrap();
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SystemSpec::gen_pars(
            vec![
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        );
        let s = serde_json::to_string(&spec).unwrap();
        let back: SystemSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back.system, SystemId::GenPars);
        let (l, b) = back.gen_pars_data().unwrap();
        assert_eq!(l[(0, 2)], 1.0);
        assert_eq!(b[1], -1.0);
    }

    #[test]
    fn free_q_oracle_refused() {
        let spec = SystemSpec::pars(ForceLaw::FreeQ, 0.0, [0.0; 3], [0.0; 3]);
        assert!(matches!(spec.build_oracle(), Err(Error::Unsupported(_))));
    }
}
