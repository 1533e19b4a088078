//! Forward-in-time verification oracle: fixed-step classical RK4 with
//! invariant monitors and CSV export.
//!
//! Fixed step keeps runs bit-reproducible and makes convergence arithmetic
//! trivial (error ratios near 16 under step halving).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Grid, Traj};
use crate::system::{ForceLaw, OdeSystem, SystemId, SystemSpec};

/// Integrate `xdot = F(x, t)` with classical RK4 on a uniform grid.
pub fn integrate_ode(sys: &dyn OdeSystem, x0: &[f64], grid: Grid) -> Result<Traj> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: n,
            got: x0.len(),
        });
    }
    let h = grid.h();
    let mut traj = Traj::zeros(grid, n);
    traj.node_mut(0).copy_from_slice(x0);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..grid.n - 1 {
        let t = grid.node(step);
        let x = traj.node(step).to_vec();
        sys.rhs(t, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        sys.rhs(t + h, &tmp, &mut k4);
        let out = traj.node_mut(step + 1);
        for i in 0..n {
            out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_good_t: t });
        }
    }
    Ok(traj)
}

/// Integrate a spec's forward problem.
pub fn integrate_ivp(spec: &SystemSpec, t_end: f64, h: f64) -> Result<Traj> {
    spec.validate()?;
    if h > t_end / 10.0 {
        return Err(Error::Precondition(format!(
            "step h = {h} too coarse for T = {t_end} (need h <= T/10)"
        )));
    }
    let sys = spec.build_oracle()?;
    let grid = Grid::from_step(0.0, t_end, h)?;
    integrate_ode(sys.as_ref(), &spec.oracle_initial(), grid)
}

/// Invariant report over an oracle trajectory.
#[derive(Debug, Clone)]
pub struct InvariantReport {
    /// max |g(x, v)| over nodes (None when unconstrained)
    pub max_constraint_residual: Option<f64>,
    /// kinetic energy sequence (mechanical systems)
    pub kinetic: Vec<f64>,
    /// max over steps of K(t_{k+1}) - K(t_k)
    pub max_energy_increment: f64,
    /// max |K - K(0)|
    pub max_energy_drift: f64,
    /// max |f_c . v| (power of constraint forces, Gauss-type laws)
    pub max_constraint_power: Option<f64>,
    /// max |W| (configured power law)
    pub max_power_residual: Option<f64>,
}

/// Monitor constraint residual, kinetic energy and constraint power along a
/// trajectory produced by `integrate_ivp` for the same spec.
pub fn monitor_invariants(spec: &SystemSpec, traj: &Traj) -> Result<InvariantReport> {
    let (d, _, m, _) = spec.dims();
    let mechanical = matches!(spec.system, SystemId::Pars | SystemId::GenPars);
    let mut max_g: Option<f64> = None;
    let mut kinetic = Vec::with_capacity(traj.grid.n);
    let mut max_pow: Option<f64> = None;
    let mut max_w: Option<f64> = None;

    for k in 0..traj.grid.n {
        let s = traj.node(k);
        if mechanical {
            let (x, v) = s.split_at(d);
            kinetic.push(0.5 * v.iter().map(|vi| vi * vi).sum::<f64>());
            if m > 0 {
                let g = spec.constraint_value(x, v)?.abs();
                max_g = Some(max_g.unwrap_or(0.0).max(g));
            }
            match spec.force_law {
                ForceLaw::Gauss | ForceLaw::Dalembert => {
                    let fc = crate::forces::gauss_force(spec, x, v, traj.grid.node(k))?;
                    max_pow = Some(max_pow.unwrap_or(0.0).max(fc.power.abs()));
                }
                ForceLaw::VorticalDamped => {
                    let nu = spec.scalar("nu").unwrap_or(0.0);
                    // W closes with s^2 = 2 nu v.v when the constraint holds
                    let vv: f64 = v.iter().map(|a| a * a).sum();
                    let st = crate::system::PrimalState::mechanical(
                        x.to_vec(),
                        v.to_vec(),
                        vec![],
                        (2.0 * nu * vv).sqrt(),
                    );
                    let w = crate::forces::eval_w(spec, &st, traj.grid.node(k))?;
                    max_w = Some(max_w.unwrap_or(0.0).max(w.abs()));
                }
                _ => {}
            }
        }
    }

    let (mut max_inc, mut max_drift) = (f64::NEG_INFINITY, 0.0);
    if kinetic.is_empty() {
        max_inc = 0.0;
    } else {
        for w in kinetic.windows(2) {
            max_inc = max_inc.max(w[1] - w[0]);
        }
        for k in &kinetic {
            max_drift = f64::max(max_drift, (k - kinetic[0]).abs());
        }
        if kinetic.len() == 1 {
            max_inc = 0.0;
        }
    }

    Ok(InvariantReport {
        max_constraint_residual: max_g,
        kinetic,
        max_energy_increment: max_inc,
        max_energy_drift: max_drift,
        max_constraint_power: max_pow,
        max_power_residual: max_w,
    })
}

/// CSV column names for a spec's oracle trajectory.
pub fn csv_header(spec: &SystemSpec) -> Vec<String> {
    let (d, _, _, _) = spec.dims();
    let mut cols = vec!["t".to_string()];
    match spec.system {
        SystemId::Lorenz | SystemId::PolyOde | SystemId::ParsReduced => {
            for i in 1..=spec.oracle_width() {
                cols.push(format!("x{i}"));
            }
        }
        SystemId::Pars | SystemId::GenPars => {
            for i in 1..=d {
                cols.push(format!("x{i}"));
            }
            for i in 1..=d {
                cols.push(format!("v{i}"));
            }
        }
    }
    cols
}

/// Render a trajectory as CSV; values use the shortest round-trip decimal
/// representation so identical runs produce identical bytes.
pub fn to_csv(header: &[String], traj: &Traj) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for k in 0..traj.grid.n {
        let _ = write!(out, "{}", traj.grid.node(k));
        for v in traj.node(k) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Flow map: integrate from `x0` over `span` with `steps` RK4 steps and
/// return the final state (shooting-method building block).
pub fn flow(sys: &dyn OdeSystem, x0: &[f64], t0: f64, span: f64, steps: usize) -> Result<Vec<f64>> {
    let grid = Grid::new(t0, t0 + span, steps.max(2) + 1)?;
    let traj = integrate_ode(sys, x0, grid)?;
    Ok(traj.node(grid.n - 1).to_vec())
}
