//! The dual-to-primal (DtP) mapping `U^(H)(D, t)`: for the shifted-quadratic
//! `H`, solve the stationarity condition dL_H/dU = 0 for the primal state in
//! terms of the dual fields and their rates.
//!
//! Closed forms are implemented for the Lorenz system (a 3x3 symmetric solve
//! with explicit inverse) and for the generalized Pars family (block
//! elimination through the matrix M). A damped-Newton path covers every
//! other model and doubles as an independent cross-check of the closed
//! forms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{second_order_rates, Grid, Traj};
use crate::system::{tol, LorenzParams, Model, StateLayout};

/// Dual fields `D = (rho, lambda, mu, Lambda, kappa)`.
///
/// `kappa` pairs with the constraint-parameter evolution; every built-in has
/// `W` independent of `R` and `g` independent of `Q`, so that block is
/// structurally empty and carried only for interface completeness.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualState {
    pub rho: Vec<f64>,
    pub lam: Vec<f64>,
    pub mu: Vec<f64>,
    pub cap_lambda: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl DualState {
    pub fn zeros(layout: StateLayout) -> Self {
        DualState {
            rho: vec![0.0; layout.nx],
            lam: vec![0.0; layout.nv],
            mu: vec![0.0; layout.m],
            cap_lambda: vec![0.0; layout.ns],
            kappa: vec![],
        }
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = self.rho.clone();
        out.extend_from_slice(&self.lam);
        out.extend_from_slice(&self.mu);
        out.extend_from_slice(&self.cap_lambda);
        out
    }
}

/// The extended dual array `(rho_dot, rho, lambda_dot, lambda, mu, Lambda,
/// kappa_dot, kappa)` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDual {
    pub rho: Vec<f64>,
    pub rho_dot: Vec<f64>,
    pub lam: Vec<f64>,
    pub lam_dot: Vec<f64>,
    pub mu: Vec<f64>,
    pub cap_lambda: Vec<f64>,
    pub kappa: Vec<f64>,
    pub kappa_dot: Vec<f64>,
}

impl ExtendedDual {
    pub fn zeros(layout: StateLayout) -> Self {
        ExtendedDual {
            rho: vec![0.0; layout.nx],
            rho_dot: vec![0.0; layout.nx],
            lam: vec![0.0; layout.nv],
            lam_dot: vec![0.0; layout.nv],
            mu: vec![0.0; layout.m],
            cap_lambda: vec![0.0; layout.ns],
            kappa: vec![],
            kappa_dot: vec![],
        }
    }

    /// Unpack from flat dual values and rates (packing [rho, lam, mu, Lambda]).
    pub fn from_packed(layout: StateLayout, vals: &[f64], rates: &[f64]) -> Self {
        let (nx, nv, m, ns) = (layout.nx, layout.nv, layout.m, layout.ns);
        ExtendedDual {
            rho: vals[..nx].to_vec(),
            rho_dot: rates[..nx].to_vec(),
            lam: vals[nx..nx + nv].to_vec(),
            lam_dot: rates[nx..nx + nv].to_vec(),
            mu: vals[nx + nv..nx + nv + m].to_vec(),
            cap_lambda: vals[nx + nv + m..nx + nv + m + ns].to_vec(),
            kappa: vec![],
            kappa_dot: vec![],
        }
    }
}

/// Coefficients of the shifted-quadratic H.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoefC {
    pub c_x: f64,
    pub c_v: f64,
    pub c_q: f64,
    pub c_s: f64,
}

impl CoefC {
    pub fn uniform(c: f64) -> Self {
        CoefC {
            c_x: c,
            c_v: c,
            c_q: c,
            c_s: c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.c_x, self.c_v, self.c_q, self.c_s]
            .iter()
            .any(|c| !(*c > 0.0))
        {
            return Err(Error::Config("H coefficients must be positive".into()));
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.c_x.max(self.c_v).max(self.c_q).max(self.c_s)
    }
}

/// Base state: nodal values of the arbitrarily specified functions
/// (xbar, vbar, Qbar, sbar), packed like the primal state.
#[derive(Debug, Clone)]
pub struct BaseState {
    pub values: Traj,
}

impl BaseState {
    pub fn zeros(grid: Grid, layout: StateLayout) -> Self {
        BaseState {
            values: Traj::zeros(grid, layout.primal_width()),
        }
    }

    pub fn constant(grid: Grid, point: &[f64]) -> Self {
        let mut values = Traj::zeros(grid, point.len());
        for k in 0..grid.n {
            values.node_mut(k).copy_from_slice(point);
        }
        BaseState { values }
    }

    pub fn node(&self, k: usize) -> &[f64] {
        self.values.node(k)
    }

    pub fn is_constant(&self) -> bool {
        let n = self.values.grid.n;
        (1..n).all(|k| self.values.node(k) == self.values.node(0))
    }

    /// Hermite sample between nodes (derivatives from second-order stencils).
    pub fn sample(&self, t: f64) -> Result<Vec<f64>> {
        let rates = second_order_rates(&self.values);
        self.values.sample_hermite(&rates, t)
    }
}

/// Parameters of the shifted-quadratic H: coefficients plus base state.
#[derive(Debug, Clone)]
pub struct HParams {
    pub c: CoefC,
    pub base: BaseState,
}

impl HParams {
    pub fn new(c: CoefC, base: BaseState) -> Result<Self> {
        c.validate()?;
        Ok(HParams { c, base })
    }
}

/// How the DtP solve is carried out for a given model.
#[derive(Debug, Clone)]
pub enum DtpKind {
    /// Lorenz closed form through the explicit 3x3 inverse.
    LorenzClosed(LorenzParams),
    /// Generalized-Pars closed form through the matrix M.
    GenParsClosed {
        l: DMatrix<f64>,
        b: DVector<f64>,
        slack: bool,
    },
    /// Damped Newton on the stationarity system.
    Generic,
}

// ---------------------------------------------------------------------------
// Lorenz closed form
// ---------------------------------------------------------------------------

/// The symmetric matrix A|_D of the Lorenz stationarity system; the Lorenz
/// dual triple is stored as rho = (lambda, mu, gamma).
pub fn lorenz_a_matrix(c: f64, mu: f64, gamma: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 0)] = c;
    a[(0, 1)] = -gamma;
    a[(0, 2)] = mu;
    a[(1, 0)] = -gamma;
    a[(1, 1)] = c;
    a[(2, 0)] = mu;
    a[(2, 2)] = c;
    a
}

/// The explicit inverse B|_D; requires 1 - (gamma^2 + mu^2)/c^2 > eps.
pub fn lorenz_b_matrix(c: f64, mu: f64, gamma: f64) -> Result<DMatrix<f64>> {
    let g = gamma / c;
    let m = mu / c;
    let den = 1.0 - g * g - m * m;
    if den <= tol::EPS_SING {
        return Err(Error::DtpSingular {
            t: f64::NAN,
            detail: format!("Lorenz B denominator 1 - (gamma^2 + mu^2)/c^2 = {den:.3e}"),
        });
    }
    let f = 1.0 / (c * den);
    let mut b = DMatrix::zeros(3, 3);
    b[(0, 0)] = f;
    b[(0, 1)] = f * g;
    b[(0, 2)] = -f * m;
    b[(1, 0)] = f * g;
    b[(1, 1)] = f * (1.0 - m * m);
    b[(1, 2)] = -f * g * m;
    b[(2, 0)] = -f * m;
    b[(2, 1)] = -f * g * m;
    b[(2, 2)] = f * (1.0 - g * g);
    Ok(b)
}

/// The vector p|_(D, Ubar) driving the Lorenz DtP solve.
pub fn lorenz_p_vector(ext: &ExtendedDual, base: &[f64], prm: LorenzParams) -> [f64; 3] {
    let (la, mu, ga) = (ext.rho[0], ext.rho[1], ext.rho[2]);
    let (lad, mud, gad) = (ext.rho_dot[0], ext.rho_dot[1], ext.rho_dot[2]);
    let (xb, yb, zb) = (base[0], base[1], base[2]);
    [
        ga * yb - mu * zb + lad - prm.a * la + prm.r * mu,
        ga * xb + mud - mu + prm.a * la,
        -mu * xb + gad - prm.b * ga,
    ]
}

/// Lorenz DtP map: U^(H) = Ubar + B p.
pub fn dtp_lorenz(
    ext: &ExtendedDual,
    c: f64,
    base: &[f64],
    prm: LorenzParams,
    t: f64,
) -> Result<Vec<f64>> {
    let b = lorenz_b_matrix(c, ext.rho[1], ext.rho[2]).map_err(|e| match e {
        Error::DtpSingular { detail, .. } => Error::DtpSingular { t, detail },
        other => other,
    })?;
    let p = lorenz_p_vector(ext, base, prm);
    let u = b * DVector::from_column_slice(&p);
    Ok((0..3).map(|i| base[i] + u[i]).collect())
}

// ---------------------------------------------------------------------------
// generalized Pars closed form
// ---------------------------------------------------------------------------

/// Generalized-Pars DtP map via the matrix
/// `M_ik = delta_ik - mu^2/(c_x c_v) (L L^T)_ik - Lambda^2/(c_q c_v) delta_ik`.
///
/// Base packing is [xbar, vbar, Qbar, sbar]; the returned primal state uses
/// the same packing.
pub fn dtp_genpars(
    ext: &ExtendedDual,
    c: &CoefC,
    base: &[f64],
    l: &DMatrix<f64>,
    b: &DVector<f64>,
    slack: bool,
    t: f64,
) -> Result<Vec<f64>> {
    let m = l.nrows();
    let mu = ext.mu[0];
    let cap = if slack { ext.cap_lambda[0] } else { 0.0 };
    let (xb, rest) = base.split_at(m);
    let (vb, rest) = rest.split_at(m);
    let (qb, sb) = rest.split_at(m);

    if slack {
        let den = c.c_s - cap;
        if den.abs() <= tol::EPS_SING * c.c_s.max(1.0) {
            return Err(Error::DtpSingular {
                t,
                detail: format!("c_s - Lambda = {den:.3e}"),
            });
        }
    }

    let llt = l * l.transpose();
    let mut mm = DMatrix::identity(m, m);
    mm -= &llt * (mu * mu / (c.c_x * c.c_v));
    for i in 0..m {
        mm[(i, i)] -= cap * cap / (c.c_q * c.c_v);
    }

    let xbv = DVector::from_column_slice(xb);
    let rho_dot = DVector::from_column_slice(&ext.rho_dot);
    let lxb = l * &xbv;
    let lrho_dot = l * &rho_dot;
    let mut rhs = DVector::from_column_slice(vb);
    for i in 0..m {
        rhs[i] += (-mu * lxb[i] - cap * qb[i] + ext.rho[i] + ext.lam_dot[i]
            - mu * b[i]
            - mu / c.c_x * lrho_dot[i]
            + cap / c.c_q * ext.lam[i])
            / c.c_v;
    }

    let v = mm.lu().solve(&rhs).ok_or_else(|| Error::DtpSingular {
        t,
        detail: "generalized-Pars matrix M singular".into(),
    })?;

    // x = xbar + rhodot/c_x - (mu/c_x) L^T v
    let ltv = l.transpose() * &v;
    let x: Vec<f64> = (0..m)
        .map(|i| xb[i] + ext.rho_dot[i] / c.c_x - mu / c.c_x * ltv[i])
        .collect();
    // Q = Qbar - lambda/c_q - Lambda v/c_q
    let q: Vec<f64> = (0..m)
        .map(|i| qb[i] - ext.lam[i] / c.c_q - cap * v[i] / c.c_q)
        .collect();

    let mut out = x;
    out.extend(v.iter());
    out.extend(q.iter());
    if slack {
        out.push(c.c_s * sb[0] / (c.c_s - cap));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// stationarity system and the generic Newton path
// ---------------------------------------------------------------------------

/// Gradient of the dual Lagrangian in the primal variables, packed like the
/// primal state. This vanishes at the DtP point.
pub fn stationarity_residual(
    model: &Model,
    u: &[f64],
    ext: &ExtendedDual,
    c: &CoefC,
    base: &[f64],
    t: f64,
) -> Vec<f64> {
    match model {
        Model::Ode(sys) => {
            let n = sys.dim();
            let mut jac = DMatrix::zeros(n, n);
            sys.rhs_jacobian(t, u, &mut jac);
            let rho = DVector::from_column_slice(&ext.rho);
            let jtr = jac.transpose() * rho;
            (0..n)
                .map(|i| c.c_x * (u[i] - base[i]) - ext.rho_dot[i] - jtr[i])
                .collect()
        }
        Model::Mech(sys) => {
            let layout = sys.layout();
            let (nx, nv, m, nq, ns) = (layout.nx, layout.nv, layout.m, layout.nq, layout.ns);
            let (x, rest) = u.split_at(nx);
            let (v, rest) = rest.split_at(nv);
            let (q, s_sl) = rest.split_at(nq);
            let s = if ns == 1 { s_sl[0] } else { 0.0 };
            let (xb, restb) = base.split_at(nx);
            let (vb, restb) = restb.split_at(nv);
            let (qb, sb) = restb.split_at(nq);

            let mut jx = DMatrix::zeros(nv, nx);
            let mut jv = DMatrix::zeros(nv, nv);
            let mut jq = DMatrix::zeros(nv, nq);
            sys.accel_jac(t, x, v, q, &mut jx, &mut jv, &mut jq);
            let mut gx = DMatrix::zeros(m, nx);
            let mut gv = DMatrix::zeros(m, nv);
            sys.constraint_jac(t, x, v, &mut gx, &mut gv);
            let (mut wx, mut wv, mut wq) = (vec![0.0; nx], vec![0.0; nv], vec![0.0; nq]);
            let ws = if ns == 1 {
                sys.power_grad(t, x, v, q, s, &mut wx, &mut wv, &mut wq)
            } else {
                0.0
            };
            let cap = if ns == 1 { ext.cap_lambda[0] } else { 0.0 };

            let lam = DVector::from_column_slice(&ext.lam);
            let muv = DVector::from_column_slice(&ext.mu);
            let jxt_lam = jx.transpose() * &lam;
            let jvt_lam = jv.transpose() * &lam;
            let jqt_lam = jq.transpose() * &lam;
            let gxt_mu = gx.transpose() * &muv;
            let gvt_mu = gv.transpose() * &muv;

            let mut out = Vec::with_capacity(layout.primal_width());
            for i in 0..nx {
                out.push(
                    c.c_x * (x[i] - xb[i]) - ext.rho_dot[i] - jxt_lam[i] + gxt_mu[i] + cap * wx[i],
                );
            }
            for i in 0..nv {
                out.push(
                    c.c_v * (v[i] - vb[i]) - ext.rho[i] - ext.lam_dot[i] - jvt_lam[i]
                        + gvt_mu[i]
                        + cap * wv[i],
                );
            }
            for i in 0..nq {
                out.push(c.c_q * (q[i] - qb[i]) - jqt_lam[i] + cap * wq[i]);
            }
            if ns == 1 {
                out.push(c.c_s * (s - sb[0]) + cap * ws);
            }
            out
        }
    }
}

/// Jacobian of the stationarity residual in U by forward differences.
pub fn stationarity_jacobian_fd(
    model: &Model,
    u: &[f64],
    ext: &ExtendedDual,
    c: &CoefC,
    base: &[f64],
    t: f64,
) -> DMatrix<f64> {
    let n = u.len();
    let r0 = stationarity_residual(model, u, ext, c, base, t);
    let mut jac = DMatrix::zeros(n, n);
    let mut up = u.to_vec();
    for j in 0..n {
        let eps = 1e-7 * (1.0 + u[j].abs());
        up[j] = u[j] + eps;
        let rp = stationarity_residual(model, &up, ext, c, base, t);
        up[j] = u[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - r0[i]) / eps;
        }
    }
    jac
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Generic DtP map by damped Newton from the base point.
pub fn dtp_generic(
    model: &Model,
    ext: &ExtendedDual,
    c: &CoefC,
    base: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 50;
    let mut u = base.to_vec();
    let mut r = stationarity_residual(model, &u, ext, c, base, t);
    let mut rn = norm_inf(&r);
    let tol_abs = tol::EPS_DTP * c.max().max(norm_inf(base)).max(1.0);
    for _ in 0..MAX_ITER {
        if rn <= tol_abs {
            return Ok(u);
        }
        let jac = stationarity_jacobian_fd(model, &u, ext, c, base, t);
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::DtpSingular {
                t,
                detail: "stationarity Jacobian singular".into(),
            })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = u
                .iter()
                .zip(step.iter())
                .map(|(ui, si)| ui - alpha * si)
                .collect();
            let rt = stationarity_residual(model, &trial, ext, c, base, t);
            let rtn = norm_inf(&rt);
            if rtn < rn {
                u = trial;
                r = rt;
                rn = rtn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rn <= tol_abs {
        Ok(u)
    } else {
        Err(Error::DtpNonConvergence {
            t,
            residual: rn,
            iters: MAX_ITER,
        })
    }
}

/// Dispatch to the closed form or the generic path.
pub fn dtp_map(
    kind: &DtpKind,
    model: &Model,
    ext: &ExtendedDual,
    c: &CoefC,
    base: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    match kind {
        DtpKind::LorenzClosed(prm) => dtp_lorenz(ext, c.c_x, base, *prm, t),
        DtpKind::GenParsClosed { l, b, slack } => dtp_genpars(ext, c, base, l, b, *slack, t),
        DtpKind::Generic => dtp_generic(model, ext, c, base, t),
    }
}

/// Invertibility report of the DtP stationarity Jacobian along a dual
/// trajectory.
#[derive(Debug, Clone)]
pub struct InvertibilityReport {
    /// smallest singular value per node
    pub sigma_min: Vec<f64>,
    pub min_sigma: f64,
    pub min_node: usize,
    /// nodes where the DtP solve itself failed (e.g. the Lorenz denominator
    /// 1 - (gamma^2 + mu^2)/c^2 crossed zero; the matrix can be invertible
    /// yet indefinite past the boundary, which still breaks the map)
    pub solve_failures: Vec<usize>,
    pub flagged: bool,
    /// multiply all c by this to restore a comfortable margin
    pub recommended_c_scale: Option<f64>,
}

/// Scan the smallest singular value of the stationarity Jacobian (evaluated
/// at the DtP point, or at the base when the map fails) over all nodes of a
/// dual trajectory, and record any outright solve failures.
pub fn check_invertibility(
    kind: &DtpKind,
    model: &Model,
    duals: &Traj,
    c: &CoefC,
    base: &BaseState,
) -> InvertibilityReport {
    let layout = model.layout();
    let grid = duals.grid;
    let dop = crate::grid::DiffOp::for_grid(&grid);
    let mut sigma_min = Vec::with_capacity(grid.n);
    let mut solve_failures = Vec::new();
    let mut worst_dual_ratio: f64 = 0.0;
    for k in 0..grid.n {
        let rates = dop.derivative_at(duals, k);
        let ext = ExtendedDual::from_packed(layout, duals.node(k), &rates);
        let t = grid.node(k);
        let u = match dtp_map(kind, model, &ext, c, base.node(k), t) {
            Ok(u) => u,
            Err(_) => {
                solve_failures.push(k);
                let dual_norm = duals.node(k).iter().map(|x| x * x).sum::<f64>().sqrt();
                worst_dual_ratio = worst_dual_ratio.max(dual_norm / c.max());
                base.node(k).to_vec()
            }
        };
        let jac = stationarity_jacobian_fd(model, &u, &ext, c, base.node(k), t);
        let sv = jac.svd(false, false);
        let smin = sv
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        sigma_min.push(smin);
    }
    let (mut min_sigma, mut min_node) = (f64::INFINITY, 0);
    for (k, s) in sigma_min.iter().enumerate() {
        if *s < min_sigma {
            min_sigma = *s;
            min_node = k;
        }
    }
    let threshold = 1e-6 * c.max();
    let flagged = min_sigma < threshold || !solve_failures.is_empty();
    let recommended_c_scale = flagged.then(|| {
        if solve_failures.is_empty() {
            (threshold / min_sigma.max(1e-300)).max(2.0)
        } else {
            (2.0 * worst_dual_ratio).max(2.0)
        }
    });
    InvertibilityReport {
        sigma_min,
        min_sigma,
        min_node,
        solve_failures,
        flagged,
        recommended_c_scale,
    }
}
