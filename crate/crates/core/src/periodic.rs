//! Periodic orbits via time rescaling: on s in [0, 2pi] seek critical
//! points of the dual functional of `dx/ds = P F(x), dP/ds = 0` within
//! periodic dual fields, with the period scale P as one global unknown and
//! a single phase anchor closing the Newton system.
//!
//! The grid identifies node n with node 0; uniform weights give exact
//! summation by parts on the circle, so the discrete gradient is exactly
//! the discretized EL system with no boundary terms. The phase anchor pins,
//! at s = 0, the coordinate with the largest base velocity (an
//! extremum-valued coordinate would be a degenerate anchor); it enters as a
//! bordered Lagrange-multiplier row/column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{DiffOp, Grid};
use crate::oracle::integrate_ode;
use crate::system::OdeSystem;

/// The rescaled, augmented system: state (x, P), `dx/ds = P F(x)`,
/// `dP/ds = 0`.
pub struct RescaledOde {
    pub inner: Box<dyn OdeSystem>,
}

impl RescaledOde {
    pub fn new(inner: Box<dyn OdeSystem>) -> Result<Self> {
        if !inner.autonomous() {
            return Err(Error::Unsupported(
                "time rescaling needs an autonomous system".into(),
            ));
        }
        Ok(RescaledOde { inner })
    }
}

impl OdeSystem for RescaledOde {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.inner.dim();
        let p = x[n];
        self.inner.rhs(t, &x[..n], &mut out[..n]);
        for o in out[..n].iter_mut() {
            *o *= p;
        }
        out[n] = 0.0;
    }

    fn rhs_jacobian(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        let n = self.inner.dim();
        let p = x[n];
        let mut jin = DMatrix::zeros(n, n);
        self.inner.rhs_jacobian(t, &x[..n], &mut jin);
        let mut f = vec![0.0; n];
        self.inner.rhs(t, &x[..n], &mut f);
        out.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = p * jin[(i, j)];
            }
            out[(i, n)] = f[i];
        }
    }
}

/// A periodic dual search problem on [0, 2pi].
pub struct PeriodicProblem {
    pub ode: Box<dyn OdeSystem>,
    /// distinct nodes on the circle; rounded up to a multiple of 5 so the
    /// finite-difference Jacobian coloring never overlaps across the seam
    pub n_nodes: usize,
    pub c_x: f64,
    /// base state xbar on the circle (width = ode.dim(), n_nodes rows)
    pub base: Vec<Vec<f64>>,
    /// period-scale guess (initial value of the P unknown)
    pub p_guess: f64,
}

#[derive(Debug, Clone)]
pub struct PeriodicConfig {
    pub tol_newton: f64,
    pub max_iter: usize,
    pub regularization: f64,
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        PeriodicConfig {
            tol_newton: 1e-9,
            max_iter: 60,
            regularization: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeriodicResult {
    /// recovered orbit x^H at the distinct nodes
    pub orbit: Vec<Vec<f64>>,
    pub duals: Vec<Vec<f64>>,
    /// recovered period scale; period T = 2 pi P
    pub p: f64,
    pub nu_phase: f64,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
    /// ||x^H(2pi) - x^H(0)||, zero by construction on the identified grid
    pub closure: f64,
    /// max_k |dx^H/ds - P F(x^H)| by periodic central differences
    pub ode_residual: f64,
    /// equilibrium collapse flag: the recovered orbit has ~zero speed
    pub collapsed: bool,
}

struct PeriodicWork<'a> {
    ode: &'a dyn OdeSystem,
    nx: usize,
    n: usize,
    h: f64,
    dop: DiffOp,
    c_x: f64,
    base: &'a [Vec<f64>],
    anchor_idx: usize,
    anchor_val: f64,
}

impl<'a> PeriodicWork<'a> {
    /// Solve the pointwise stationarity c_x(x - xbar) - rhodot - P J(x)^T rho = 0.
    fn dtp_point(&self, k: usize, rho: &[f64], rho_dot: &[f64], p: f64) -> Result<Vec<f64>> {
        let nx = self.nx;
        let mut x = self.base[k].clone();
        let mut jac = DMatrix::zeros(nx, nx);
        let rr = DVector::from_column_slice(rho);
        for _ in 0..50 {
            self.ode.rhs_jacobian(0.0, &x, &mut jac);
            let jtr = jac.transpose() * &rr;
            let res: Vec<f64> = (0..nx)
                .map(|i| self.c_x * (x[i] - self.base[k][i]) - rho_dot[i] - p * jtr[i])
                .collect();
            let rn = res.iter().map(|r| r.abs()).fold(0.0, f64::max);
            if rn <= 1e-12 * self.c_x.max(1.0) {
                return Ok(x);
            }
            // Newton matrix c_x I - P d(J^T rho)/dx by forward differences
            let mut m = DMatrix::zeros(nx, nx);
            for j in 0..nx {
                let eps = 1e-7 * (1.0 + x[j].abs());
                let mut xp = x.clone();
                xp[j] += eps;
                self.ode.rhs_jacobian(0.0, &xp, &mut jac);
                let jtrp = jac.transpose() * &rr;
                for i in 0..nx {
                    let rp = self.c_x * (xp[i] - self.base[k][i]) - rho_dot[i] - p * jtrp[i];
                    m[(i, j)] = (rp - res[i]) / eps;
                }
            }
            let step = m
                .lu()
                .solve(&DVector::from_column_slice(&res))
                .ok_or_else(|| Error::DtpSingular {
                    t: self.h * k as f64,
                    detail: "periodic DtP".into(),
                })?;
            for i in 0..nx {
                x[i] -= step[i];
            }
        }
        Err(Error::DtpNonConvergence {
            t: self.h * k as f64,
            residual: f64::NAN,
            iters: 50,
        })
    }

    fn rho_dot_at(&self, duals: &[Vec<f64>], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.nx];
        for (src, c) in self.dop.row(k) {
            for i in 0..self.nx {
                out[i] += c * duals[src][i];
            }
        }
        out
    }

    /// Exact gradient of the periodic action in (rho grid, P), plus the
    /// recovered orbit; the phase row and nu-column are appended by the
    /// caller.
    fn gradient(&self, duals: &[Vec<f64>], p: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (n, nx) = (self.n, self.nx);
        let mut grad = vec![0.0; n * nx + 1];
        let mut orbit = Vec::with_capacity(n);
        let mut f = vec![0.0; nx];
        for k in 0..n {
            let rd = self.rho_dot_at(duals, k);
            let x = self.dtp_point(k, &duals[k], &rd, p)?;
            self.ode.rhs(0.0, &x, &mut f);
            // undotted: -P F(x^H) lands on node k
            for i in 0..nx {
                grad[k * nx + i] += self.h * (-p * f[i]);
            }
            // dotted: -x^H scatters through the stencil transpose
            for (src, c) in self.dop.row(k) {
                for i in 0..nx {
                    grad[src * nx + i] += self.h * c * (-x[i]);
                }
            }
            // the P-equation is the natural one: the integral of rho . F
            // vanishes at a critical point
            let rf: f64 = duals[k].iter().zip(&f).map(|(a, b)| a * b).sum();
            grad[n * nx] += self.h * (-rf);
            orbit.push(x);
        }
        Ok((grad, orbit))
    }

    fn phase(&self, duals: &[Vec<f64>], p: f64) -> Result<f64> {
        let rd = self.rho_dot_at(duals, 0);
        let x = self.dtp_point(0, &duals[0], &rd, p)?;
        Ok(x[self.anchor_idx] - self.anchor_val)
    }
}

/// Search for a periodic orbit by extremizing the periodic dual action.
pub fn find_periodic_orbit(pp: &PeriodicProblem, cfg: &PeriodicConfig) -> Result<PeriodicResult> {
    if !pp.ode.autonomous() {
        return Err(Error::Unsupported(
            "periodic search needs an autonomous system".into(),
        ));
    }
    let nx = pp.ode.dim();
    let n = pp.n_nodes.div_ceil(5) * 5;
    if pp.base.len() != n {
        return Err(Error::Config(format!(
            "base must have {n} nodes (n_nodes rounded up to a multiple of 5), got {}",
            pp.base.len()
        )));
    }
    if pp.p_guess <= 0.0 {
        return Err(Error::Config("period scale guess must be positive".into()));
    }
    let h = 2.0 * std::f64::consts::PI / n as f64;

    // anchor the coordinate with the largest base value at s = 0: the
    // equilibrium branch (x = const, any P) cannot satisfy it, so the
    // scalar constraint both fixes the phase and excludes collapse;
    // an all-zero base keeps anchor 0 and degenerates to the equilibrium,
    // which the collapse flag then reports
    let anchor_idx = (0..nx)
        .max_by(|a, b| pp.base[0][*a].abs().total_cmp(&pp.base[0][*b].abs()))
        .unwrap_or(0);
    let work = PeriodicWork {
        ode: pp.ode.as_ref(),
        nx,
        n,
        h,
        dop: DiffOp::periodic(n, h),
        c_x: pp.c_x,
        base: &pp.base,
        anchor_idx,
        anchor_val: pp.base[0][anchor_idx],
    };

    let n_grid = n * nx + 1; // rho nodes + P
    let n_tot = n_grid + 1; // + nu_phase
    let mut duals = vec![vec![0.0; nx]; n];
    let mut p = pp.p_guess;
    let mut nu = 0.0;

    let full_residual =
        |duals: &[Vec<f64>], p: f64, nu: f64| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
            let (mut g, orbit) = work.gradient(duals, p)?;
            // nu-coupling: d(phi)/d(unknown) enters the gradient rows
            if nu != 0.0 {
                let eps = 1e-7;
                let phi0 = work.phase(duals, p)?;
                // phi depends on duals at nodes n-1, 0, 1 and on P
                for &k in &[n - 1, 0, 1] {
                    for i in 0..nx {
                        let mut d2 = duals.to_vec();
                        d2[k][i] += eps;
                        let phip = work.phase(&d2, p)?;
                        g[k * nx + i] += nu * (phip - phi0) / eps;
                    }
                }
                let phip = work.phase(duals, p + eps)?;
                g[n * nx] += nu * (phip - phi0) / eps;
            }
            let mut full = g;
            full.push(work.phase(duals, p)?);
            Ok((full, orbit))
        };

    let (mut g, mut orbit) = full_residual(&duals, p, nu)?;
    let mut gn = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        if gn <= cfg.tol_newton {
            break;
        }
        // dense Jacobian with 5-stripe coloring over the grid columns; the
        // stripes only populate the (banded) gradient rows -- the dense
        // scalar rows (the P-equation and the phase) would aggregate the
        // responses of every perturbed column, so they get their own
        // per-column local passes below
        let mut jac = DMatrix::zeros(n_tot, n_tot);
        for color in 0..5usize {
            for slot in 0..nx {
                let nodes: Vec<usize> = (0..n).filter(|k| k % 5 == color).collect();
                let eps = 1e-7;
                let mut d2 = duals.clone();
                for &k in &nodes {
                    d2[k][slot] += eps;
                }
                let (gp, _) = full_residual(&d2, p, nu)?;
                for &k in &nodes {
                    let col = k * nx + slot;
                    for off in -2i64..=2 {
                        let kk = ((k as i64 + off).rem_euclid(n as i64)) as usize;
                        for i in 0..nx {
                            let row = kk * nx + i;
                            jac[(row, col)] = (gp[row] - g[row]) / eps;
                        }
                    }
                }
            }
        }
        // P-equation row: perturbing rho at node k only changes the terms
        // rho_j . F(x^H_j) for j within stencil reach of k
        {
            let eps = 1e-7;
            let local_p_terms = |duals: &[Vec<f64>], around: usize| -> Result<f64> {
                let mut acc = 0.0;
                let mut f = vec![0.0; nx];
                for off in -1i64..=1 {
                    let j = ((around as i64 + off).rem_euclid(n as i64)) as usize;
                    let rd = work.rho_dot_at(duals, j);
                    let x = work.dtp_point(j, &duals[j], &rd, p)?;
                    work.ode.rhs(0.0, &x, &mut f);
                    let rf: f64 = duals[j].iter().zip(&f).map(|(a, b)| a * b).sum();
                    acc += work.h * (-rf);
                }
                Ok(acc)
            };
            for k in 0..n {
                let base_terms = local_p_terms(&duals, k)?;
                for slot in 0..nx {
                    let mut d2 = duals.clone();
                    d2[k][slot] += eps;
                    let pert_terms = local_p_terms(&d2, k)?;
                    jac[(n * nx, k * nx + slot)] = (pert_terms - base_terms) / eps;
                }
            }
        }
        // phase row: x^H(0) depends on duals at nodes n-1, 0, 1 only
        {
            let eps = 1e-7;
            let phi0 = work.phase(&duals, p)?;
            for &k in &[n - 1, 0, 1] {
                for slot in 0..nx {
                    let mut d2 = duals.clone();
                    d2[k][slot] += eps;
                    let phip = work.phase(&d2, p)?;
                    jac[(n * nx + 1, k * nx + slot)] = (phip - phi0) / eps;
                }
            }
        }
        // P column
        {
            let eps = 1e-7;
            let (gp, _) = full_residual(&duals, p + eps, nu)?;
            for row in 0..n_tot {
                jac[(row, n * nx)] = (gp[row] - g[row]) / eps;
            }
        }
        // nu column (linear coupling)
        {
            let eps = 1e-7;
            let (gp, _) = full_residual(&duals, p, nu + eps)?;
            for row in 0..n_tot {
                jac[(row, n_grid)] = (gp[row] - g[row]) / eps;
            }
        }
        for i in 0..n_tot {
            jac[(i, i)] += cfg.regularization;
        }
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&g))
            .ok_or_else(|| Error::LinearSolve("periodic Newton matrix singular".into()))?;

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut d2 = duals.clone();
            for k in 0..n {
                for i in 0..nx {
                    d2[k][i] -= alpha * step[k * nx + i];
                }
            }
            let p2 = p - alpha * step[n * nx];
            let nu2 = nu - alpha * step[n_grid];
            if p2 > 0.0 {
                if let Ok((g2, o2)) = full_residual(&d2, p2, nu2) {
                    let g2n = g2.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    if g2n < gn {
                        duals = d2;
                        p = p2;
                        nu = nu2;
                        g = g2;
                        orbit = o2;
                        gn = g2n;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    // diagnostics on the recovered orbit
    let mut ode_residual: f64 = 0.0;
    let mut max_speed: f64 = 0.0;
    let mut f = vec![0.0; nx];
    for k in 0..n {
        let mut xd = vec![0.0; nx];
        for (src, c) in work.dop.row(k) {
            for i in 0..nx {
                xd[i] += c * orbit[src][i];
            }
        }
        pp.ode.rhs(0.0, &orbit[k], &mut f);
        for i in 0..nx {
            ode_residual = ode_residual.max((xd[i] - p * f[i]).abs());
            max_speed = max_speed.max((p * f[i]).abs());
        }
    }
    let scale = orbit
        .iter()
        .flat_map(|x| x.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    let collapsed = max_speed <= 1e-6 * (1.0 + scale);

    Ok(PeriodicResult {
        closure: 0.0, // node n is identified with node 0 on the circle
        orbit,
        duals,
        p,
        nu_phase: nu,
        converged: gn <= cfg.tol_newton,
        residual_norm: gn,
        iterations,
        ode_residual,
        collapsed,
    })
}

/// Single-shooting residual ||Phi_T(x0) - x0|| (independent RK4 oracle).
pub fn shooting_residual(
    ode: &dyn OdeSystem,
    x0: &[f64],
    period: f64,
    steps: usize,
) -> Result<f64> {
    let end = crate::oracle::flow(ode, x0, 0.0, period, steps)?;
    Ok(end
        .iter()
        .zip(x0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Multiple-shooting mismatch of a candidate orbit: integrate each of
/// `segments` arcs with RK4 and measure the junction defects.
pub fn multiple_shooting_residual(
    ode: &dyn OdeSystem,
    orbit: &[Vec<f64>],
    p: f64,
    segments: usize,
) -> Result<f64> {
    let n = orbit.len();
    let seg = (n / segments).max(1);
    let span_per_node = 2.0 * std::f64::consts::PI * p / n as f64;
    let mut worst: f64 = 0.0;
    let mut k = 0;
    while k < n {
        let k_end = (k + seg).min(n);
        let x_end =
            crate::oracle::flow(ode, &orbit[k], 0.0, span_per_node * (k_end - k) as f64, 40)?;
        let target = &orbit[k_end % n];
        let defect = x_end
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(defect);
        k = k_end;
    }
    Ok(worst)
}

/// Seed a periodic search from a near-recurrence of a long oracle run:
/// returns (base nodes, period-scale guess).
pub fn seed_from_recurrence(
    ode: &dyn OdeSystem,
    x0: &[f64],
    t_scan: f64,
    h: f64,
    t_min: f64,
    n_nodes: usize,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let grid = Grid::from_step(0.0, t_scan, h)?;
    let traj = integrate_ode(ode, x0, grid)?;
    let k_min = ((t_min / grid.h()).ceil() as usize).max(1);
    // anchor at a quarter of the scan and look for the closest return
    let k0 = grid.n / 4;
    let mut best = (k0 + k_min, f64::INFINITY);
    for k in k0 + k_min..grid.n {
        let d = traj
            .node(k)
            .iter()
            .zip(traj.node(k0))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if d < best.1 {
            best = (k, d);
        }
    }
    let period = grid.node(best.0) - grid.node(k0);
    let n = n_nodes.div_ceil(5) * 5;
    let mut base = Vec::with_capacity(n);
    for j in 0..n {
        let t = grid.node(k0) + period * j as f64 / n as f64;
        let k = ((t - grid.t0) / grid.h()).round() as usize;
        base.push(traj.node(k.min(grid.n - 1)).to_vec());
    }
    Ok((base, period / (2.0 * std::f64::consts::PI)))
}
