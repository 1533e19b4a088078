//! Constraint elimination: split the velocities by the implicit function
//! theorem so the constraints are solved exactly, integrate the reduced
//! system, and recover the minimal constraint forces (identically zero on
//! the retained components).
//!
//! The split point is chosen by column pivoting on the constraint velocity
//! Jacobian; a drop of the sub-block's smallest singular value below half
//! its split-time value triggers a re-split from the attained state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Grid, Traj};
use crate::system::tol;

/// A constrained second-order system `xdot = v, vdot = F(x,v,t) + F_c`,
/// `g(x,v,t) = 0`, exposed to the reduction machinery.
pub trait ConstrainedSystem: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_g(&self) -> usize;
    fn g(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);
    fn g_jac(&self, t: f64, x: &[f64], v: &[f64], gx: &mut DMatrix<f64>, gv: &mut DMatrix<f64>);
    /// dg/dt at fixed (x, v); zero for the built-ins (all autonomous).
    fn g_time_partial(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    /// Applied force per unit mass.
    fn force(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);
}

/// The Pars particle with no applied force: g = x3 v1 - v2.
pub struct ParsConstrained;

impl ConstrainedSystem for ParsConstrained {
    fn dim_x(&self) -> usize {
        3
    }

    fn dim_g(&self) -> usize {
        1
    }

    fn g(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = x[2] * v[0] - v[1];
    }

    fn g_jac(&self, _t: f64, x: &[f64], v: &[f64], gx: &mut DMatrix<f64>, gv: &mut DMatrix<f64>) {
        gx.fill(0.0);
        gv.fill(0.0);
        gx[(0, 2)] = v[0];
        gv[(0, 0)] = x[2];
        gv[(0, 1)] = -1.0;
    }

    fn force(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Force-free particle with the linear-in-velocity constraint
/// `g = (b + Lx).v` of the generalized Pars family.
pub struct LinearConstraint {
    pub l: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ConstrainedSystem for LinearConstraint {
    fn dim_x(&self) -> usize {
        self.b.len()
    }

    fn dim_g(&self) -> usize {
        1
    }

    fn g(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = &self.b + &self.l * DVector::from_column_slice(x);
        out[0] = n.dot(&DVector::from_column_slice(v));
    }

    fn g_jac(&self, _t: f64, x: &[f64], v: &[f64], gx: &mut DMatrix<f64>, gv: &mut DMatrix<f64>) {
        let m = self.b.len();
        let lv = self.l.transpose() * DVector::from_column_slice(v);
        let n = &self.b + &self.l * DVector::from_column_slice(x);
        for i in 0..m {
            gx[(0, i)] = lv[i];
            gv[(0, i)] = n[i];
        }
    }

    fn force(&self, _t: f64, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// A velocity split: eliminated indices (solved from the constraints) and
/// retained ones, with the conditioning recorded at the split point.
#[derive(Debug, Clone)]
pub struct VelocitySplit {
    pub indices_s: Vec<usize>,
    pub indices_r: Vec<usize>,
    pub rank: usize,
    /// smallest singular value of the eliminated sub-block at the split
    pub sigma_split: f64,
    /// state at which the split was taken
    pub center_x: Vec<f64>,
    pub center_v: Vec<f64>,
}

/// Rank-revealing column selection on dg/dv at the given state.
pub fn split_velocities(
    sys: &dyn ConstrainedSystem,
    x: &[f64],
    v: &[f64],
    t: f64,
) -> Result<VelocitySplit> {
    let n = sys.dim_x();
    let m = sys.dim_g();
    if m == 0 {
        return Ok(VelocitySplit {
            indices_s: vec![],
            indices_r: (0..n).collect(),
            rank: 0,
            sigma_split: f64::INFINITY,
            center_x: x.to_vec(),
            center_v: v.to_vec(),
        });
    }
    let mut gx = DMatrix::zeros(m, n);
    let mut gv = DMatrix::zeros(m, n);
    sys.g_jac(t, x, v, &mut gx, &mut gv);

    let svd = gv.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(sigma_max > 0.0) {
        return Err(Error::DegenerateConstraint(format!(
            "dg/dv vanishes at t = {t}: no velocity can be eliminated"
        )));
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > tol::EPS_RANK * sigma_max)
        .count();

    // greedy column pivoting (modified Gram-Schmidt); ties resolve to the
    // later column
    let mut chosen: Vec<usize> = Vec::with_capacity(rank);
    let mut work = gv.clone();
    for _ in 0..rank {
        let mut best = (usize::MAX, -1.0);
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let norm = work.column(j).norm();
            if norm >= best.1 {
                best = (j, norm);
            }
        }
        let j = best.0;
        chosen.push(j);
        // project the chosen direction out of the remaining columns
        let cj = work.column(j).into_owned();
        let cn2 = cj.norm_squared();
        if cn2 > 0.0 {
            for jj in 0..n {
                if chosen.contains(&jj) {
                    continue;
                }
                let dot = work.column(jj).dot(&cj) / cn2;
                for i in 0..m {
                    work[(i, jj)] -= dot * cj[i];
                }
            }
        }
    }
    chosen.sort_unstable();
    let sub = gv.select_columns(chosen.iter());
    let sub_svd = sub.svd(false, false);
    let sigma_min = sub_svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if sigma_min < tol::EPS_RANK * sigma_max.max(1.0) {
        return Err(Error::DegenerateConstraint(format!(
            "selected velocity sub-block is singular (sigma_min = {sigma_min:.3e}) at t = {t}"
        )));
    }
    let indices_r: Vec<usize> = (0..n).filter(|j| !chosen.contains(j)).collect();
    Ok(VelocitySplit {
        indices_s: chosen,
        indices_r,
        rank,
        sigma_split: sigma_min,
        center_x: x.to_vec(),
        center_v: v.to_vec(),
    })
}

fn compose_velocity(split: &VelocitySplit, n: usize, v_r: &[f64], v_s: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for (slot, &j) in split.indices_r.iter().enumerate() {
        v[j] = v_r[slot];
    }
    for (slot, &j) in split.indices_s.iter().enumerate() {
        v[j] = v_s[slot];
    }
    v
}

/// Solve `g(x, v_r, v_s, t) = 0` for the eliminated velocities by Newton,
/// seeded from `v_s_guess`.
pub fn solve_vs(
    sys: &dyn ConstrainedSystem,
    split: &VelocitySplit,
    x: &[f64],
    v_r: &[f64],
    t: f64,
    v_s_guess: &[f64],
) -> Result<Vec<f64>> {
    let n = sys.dim_x();
    let m = sys.dim_g();
    let k = split.indices_s.len();
    if k == 0 {
        return Ok(vec![]);
    }
    let mut v_s = v_s_guess.to_vec();
    let mut gval = vec![0.0; m];
    let mut gx = DMatrix::zeros(m, n);
    let mut gv = DMatrix::zeros(m, n);
    for _ in 0..50 {
        let v = compose_velocity(split, n, v_r, &v_s);
        sys.g(t, x, &v, &mut gval);
        let gn = gval.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if gn <= tol::EPS_C * 1e-2 {
            return Ok(v_s);
        }
        sys.g_jac(t, x, &v, &mut gx, &mut gv);
        let sub = gv.select_columns(split.indices_s.iter());
        let step = sub
            .svd(true, true)
            .solve(&DVector::from_column_slice(&gval), tol::EPS_RANK)
            .map_err(|e| Error::DomainExit(format!("velocity solve failed at t = {t}: {e}")))?;
        for i in 0..k {
            v_s[i] -= step[i];
        }
        if !v_s.iter().all(|v| v.is_finite()) {
            return Err(Error::DomainExit(format!(
                "velocity solve diverged at t = {t}"
            )));
        }
    }
    Err(Error::DomainExit(format!(
        "velocity solve did not converge at t = {t}; the state has left the split's domain"
    )))
}

/// One split event along a reduced integration.
#[derive(Debug, Clone)]
pub struct SplitEvent {
    pub t: f64,
    pub indices_s: Vec<usize>,
    pub sigma_split: f64,
}

/// Output of a reduced integration: full primal trajectory (x, v), the
/// recovered minimal constraint forces, and the split-event log.
#[derive(Debug, Clone)]
pub struct ReducedRun {
    /// packed (x, v) per node
    pub traj: Traj,
    /// recovered constraint force per node (retained components exactly 0)
    pub forces: Traj,
    pub splits: Vec<SplitEvent>,
    /// max over nodes of |g|
    pub max_constraint_residual: f64,
}

/// Integrate the reduced system with RK4 and recover the constraint forces.
pub fn integrate_reduced(
    sys: &dyn ConstrainedSystem,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    h: f64,
) -> Result<ReducedRun> {
    let n = sys.dim_x();
    let m = sys.dim_g();
    let mut g0 = vec![0.0; m];
    sys.g(0.0, x0, v0, &mut g0);
    let g0n = g0.iter().map(|g| g.abs()).fold(0.0, f64::max);
    if g0n > tol::EPS_IC {
        return Err(Error::Precondition(format!(
            "initial data violates the constraint: |g(x0, v0, 0)| = {g0n:.3e}"
        )));
    }

    let grid = Grid::from_step(0.0, t_end, h)?;
    let mut split = split_velocities(sys, x0, v0, 0.0)?;
    let mut splits = vec![SplitEvent {
        t: 0.0,
        indices_s: split.indices_s.clone(),
        sigma_split: split.sigma_split,
    }];

    let mut traj = Traj::zeros(grid, 2 * n);
    let mut forces = Traj::zeros(grid, n);
    let mut max_g: f64 = 0.0;

    let mut x = x0.to_vec();
    let mut v_r: Vec<f64> = split.indices_r.iter().map(|&j| v0[j]).collect();
    let mut v_s: Vec<f64> = split.indices_s.iter().map(|&j| v0[j]).collect();

    let hh = grid.h();
    for k in 0..grid.n {
        let t = grid.node(k);
        // node bookkeeping: full state, force recovery, residual monitor
        let v_full = compose_velocity(&split, n, &v_r, &v_s);
        {
            let node = traj.node_mut(k);
            node[..n].copy_from_slice(&x);
            node[n..].copy_from_slice(&v_full);
        }
        let fc = recover_force(sys, &split, &x, &v_r, &v_s, t)?;
        forces.node_mut(k).copy_from_slice(&fc);
        let mut gval = vec![0.0; m];
        sys.g(t, &x, &v_full, &mut gval);
        max_g = max_g.max(gval.iter().map(|g| g.abs()).fold(0.0, f64::max));

        if k == grid.n - 1 {
            break;
        }

        // RK4 step on (x, v_r) with v_s resolved at every stage
        let stage = |t_s: f64,
                     x_s: &[f64],
                     vr_s: &[f64],
                     seed: &[f64]|
         -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let vs_s = solve_vs(sys, &split, x_s, vr_s, t_s, seed)?;
            let v_s_full = compose_velocity(&split, n, vr_s, &vs_s);
            let mut f = vec![0.0; n];
            sys.force(t_s, x_s, &v_s_full, &mut f);
            let fr: Vec<f64> = split.indices_r.iter().map(|&j| f[j]).collect();
            Ok((v_s_full, fr, vs_s))
        };

        let (k1x, k1v, seed1) = stage(t, &x, &v_r, &v_s)?;
        let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * hh * k1x[i]).collect();
        let vr2: Vec<f64> = (0..v_r.len()).map(|i| v_r[i] + 0.5 * hh * k1v[i]).collect();
        let (k2x, k2v, seed2) = stage(t + 0.5 * hh, &x2, &vr2, &seed1)?;
        let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * hh * k2x[i]).collect();
        let vr3: Vec<f64> = (0..v_r.len()).map(|i| v_r[i] + 0.5 * hh * k2v[i]).collect();
        let (k3x, k3v, seed3) = stage(t + 0.5 * hh, &x3, &vr3, &seed2)?;
        let x4: Vec<f64> = (0..n).map(|i| x[i] + hh * k3x[i]).collect();
        let vr4: Vec<f64> = (0..v_r.len()).map(|i| v_r[i] + hh * k3v[i]).collect();
        let (k4x, k4v, seed4) = stage(t + hh, &x4, &vr4, &seed3)?;

        for i in 0..n {
            x[i] += hh / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        }
        for i in 0..v_r.len() {
            v_r[i] += hh / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        v_s = solve_vs(sys, &split, &x, &v_r, t + hh, &seed4)?;

        // domain-exit watch: conditioning of the current sub-block
        let v_full = compose_velocity(&split, n, &v_r, &v_s);
        let mut gx = DMatrix::zeros(m, n);
        let mut gv = DMatrix::zeros(m, n);
        sys.g_jac(t + hh, &x, &v_full, &mut gx, &mut gv);
        let sub = gv.select_columns(split.indices_s.iter());
        let smin = sub
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if smin < 0.5 * split.sigma_split {
            // reset the chart from the attained state
            split = split_velocities(sys, &x, &v_full, t + hh).map_err(|e| {
                Error::DomainExit(format!("re-split failed at t = {:.6}: {e}", t + hh))
            })?;
            v_r = split.indices_r.iter().map(|&j| v_full[j]).collect();
            v_s = split.indices_s.iter().map(|&j| v_full[j]).collect();
            splits.push(SplitEvent {
                t: t + hh,
                indices_s: split.indices_s.clone(),
                sigma_split: split.sigma_split,
            });
        }
    }

    Ok(ReducedRun {
        traj,
        forces,
        splits,
        max_constraint_residual: max_g,
    })
}

/// Minimal constraint force: zero on retained components, and
/// `d/dt(vhat_s) - F_s` on eliminated ones, with the time derivative by the
/// chain rule through implicit differentiation of the constraint.
fn recover_force(
    sys: &dyn ConstrainedSystem,
    split: &VelocitySplit,
    x: &[f64],
    v_r: &[f64],
    v_s: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let n = sys.dim_x();
    let m = sys.dim_g();
    let k = split.indices_s.len();
    let mut fc = vec![0.0; n];
    if k == 0 {
        return Ok(fc);
    }
    let v = compose_velocity(split, n, v_r, v_s);
    let mut f = vec![0.0; n];
    sys.force(t, x, &v, &mut f);
    let mut gx = DMatrix::zeros(m, n);
    let mut gv = DMatrix::zeros(m, n);
    sys.g_jac(t, x, &v, &mut gx, &mut gv);
    let mut gt = vec![0.0; m];
    sys.g_time_partial(t, x, &v, &mut gt);

    let sub = gv.select_columns(split.indices_s.iter());
    let sub_svd = sub.svd(true, true);

    // implicit derivative: G_s vs_dot = -(G_x xdot + G_vr vr_dot + g_t)
    let xdot = &v;
    let vr_dot: Vec<f64> = split.indices_r.iter().map(|&j| f[j]).collect();
    let mut rhs = DVector::zeros(m);
    for a in 0..m {
        let mut acc = gt[a];
        for i in 0..n {
            acc += gx[(a, i)] * xdot[i];
        }
        for (slot, &j) in split.indices_r.iter().enumerate() {
            acc += gv[(a, j)] * vr_dot[slot];
        }
        rhs[a] = -acc;
    }
    let vs_dot = sub_svd
        .solve(&rhs, tol::EPS_RANK)
        .map_err(|e| Error::DomainExit(format!("force recovery solve failed at t = {t}: {e}")))?;
    for (slot, &j) in split.indices_s.iter().enumerate() {
        fc[j] = vs_dot[slot] - f[j];
    }
    Ok(fc)
}
