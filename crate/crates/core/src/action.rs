//! The dual Lagrangian L_H, the discretized dual action S_H with its
//! initial-condition boundary terms, and the exact gradient of the discrete
//! action (the discretized Euler-Lagrange system).
//!
//! The gradient is assembled by the envelope theorem: at the DtP point the
//! primal gradient of L_H vanishes, so only the explicit dependence on the
//! dual array contributes. With the summation-by-parts pair from `grid`,
//! interior gradient entries reduce to quadrature-weighted primal-equation
//! residuals and the node-0 entries additionally carry (x^H(0) - x0) and
//! (v^H(0) - v0); the terminal Dirichlet slots are excluded.

use crate::dtp::{dtp_map, BaseState, DtpKind, DualState, ExtendedDual, HParams};
use crate::error::{Error, Result};
use crate::forces::gauss_force;
use crate::grid::{DiffOp, Grid, Traj};
use crate::oracle::integrate_ode;
use crate::system::{ForceLaw, LorenzParams, Model, OdeSystem, StateLayout, SystemId, SystemSpec};

/// A dual variational problem assembled on a grid: model, DtP route, H,
/// primal initial data, and terminal Dirichlet values for the dual fields.
pub struct ActionAssembly {
    pub model: Model,
    pub dtp: DtpKind,
    pub hp: HParams,
    pub grid: Grid,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    /// Dirichlet values of (rho, lambda) at t = T; mu and Lambda carry no
    /// derivatives and stay free at every node.
    pub terminal_bc: DualState,
}

/// Per-node evaluation through the DtP map.
pub struct NodeEval {
    pub u: Vec<f64>,
    pub lh: f64,
    /// dL/d(dotted duals): [-x (, -v)]
    pub dldd_dot: Vec<f64>,
    /// dL/d(undotted duals): [-F or -v, (-f, g, W)]
    pub dldd: Vec<f64>,
}

impl ActionAssembly {
    pub fn new(
        model: Model,
        dtp: DtpKind,
        hp: HParams,
        grid: Grid,
        x0: Vec<f64>,
        v0: Vec<f64>,
        terminal_bc: DualState,
    ) -> Result<Self> {
        let layout = model.layout();
        if x0.len() != layout.nx || v0.len() != layout.nv {
            return Err(Error::DimensionMismatch {
                what: "initial data vs model layout",
                expected: layout.nx,
                got: x0.len(),
            });
        }
        if hp.base.values.grid != grid {
            return Err(Error::Config(
                "base state must live on the assembly grid".into(),
            ));
        }
        if hp.base.values.width != layout.primal_width() {
            return Err(Error::DimensionMismatch {
                what: "base state width",
                expected: layout.primal_width(),
                got: hp.base.values.width,
            });
        }
        Ok(ActionAssembly {
            model,
            dtp,
            hp,
            grid,
            x0,
            v0,
            terminal_bc,
        })
    }

    /// Assemble for a declarative spec (model, DtP route and initial data
    /// derived from it).
    pub fn for_spec(
        spec: &SystemSpec,
        hp: HParams,
        grid: Grid,
        terminal_bc: Option<DualState>,
    ) -> Result<Self> {
        let model = spec.build_dual_model()?;
        let layout = model.layout();
        let dtp = match spec.system {
            SystemId::Lorenz => DtpKind::LorenzClosed(spec.lorenz_params()),
            SystemId::Pars => {
                let gp = crate::system::GenParsMech::pars();
                DtpKind::GenParsClosed {
                    l: gp.l,
                    b: gp.b,
                    slack: gp.slack,
                }
            }
            SystemId::GenPars => {
                let (l, b) = spec.gen_pars_data()?;
                DtpKind::GenParsClosed {
                    l,
                    b,
                    slack: layout.ns == 1,
                }
            }
            _ => DtpKind::Generic,
        };
        let (x0, v0) = match &model {
            Model::Ode(_) => (spec.initial.x0.clone(), vec![]),
            Model::Mech(_) => (spec.initial.x0.clone(), spec.initial.v0.clone()),
        };
        let bc = terminal_bc.unwrap_or_else(|| DualState::zeros(layout));
        ActionAssembly::new(model, dtp, hp, grid, x0, v0, bc)
    }

    pub fn layout(&self) -> StateLayout {
        self.model.layout()
    }

    pub fn diff_op(&self) -> DiffOp {
        DiffOp::for_grid(&self.grid)
    }

    /// Number of dotted dual components (those with Dirichlet terminal data).
    pub fn n_dotted(&self) -> usize {
        let l = self.layout();
        l.nx + l.nv
    }

    /// The shifted-quadratic H(U, Ubar).
    pub fn h_value(&self, u: &[f64], base: &[f64]) -> f64 {
        let l = self.layout();
        let c = &self.hp.c;
        let mut h = 0.0;
        for i in 0..l.nx {
            h += 0.5 * c.c_x * (u[i] - base[i]).powi(2);
        }
        for i in l.nx..l.nx + l.nv {
            h += 0.5 * c.c_v * (u[i] - base[i]).powi(2);
        }
        for i in l.nx + l.nv..l.nx + l.nv + l.nq {
            h += 0.5 * c.c_q * (u[i] - base[i]).powi(2);
        }
        if l.ns == 1 {
            let i = l.primal_width() - 1;
            h += 0.5 * c.c_s * (u[i] - base[i]).powi(2);
        }
        h
    }

    /// The dual Lagrangian L_H(U, D, t).
    pub fn eval_lh(&self, u: &[f64], ext: &ExtendedDual, t: f64, base: &[f64]) -> f64 {
        let h = self.h_value(u, base);
        match &self.model {
            Model::Ode(sys) => {
                let n = sys.dim();
                let mut f = vec![0.0; n];
                sys.rhs(t, u, &mut f);
                let mut v = h;
                for i in 0..n {
                    v += -ext.rho_dot[i] * u[i] - ext.rho[i] * f[i];
                }
                v
            }
            Model::Mech(sys) => {
                let l = sys.layout();
                let (x, rest) = u.split_at(l.nx);
                let (vel, rest) = rest.split_at(l.nv);
                let (q, s_sl) = rest.split_at(l.nq);
                let s = if l.ns == 1 { s_sl[0] } else { 0.0 };
                let mut f = vec![0.0; l.nv];
                sys.accel(t, x, vel, q, &mut f);
                let mut g = vec![0.0; l.m];
                sys.constraint(t, x, vel, &mut g);
                let mut v = h;
                for i in 0..l.nx {
                    v -= ext.rho_dot[i] * x[i] + ext.rho[i] * vel[i];
                }
                for i in 0..l.nv {
                    v -= ext.lam_dot[i] * vel[i] + ext.lam[i] * f[i];
                }
                for a in 0..l.m {
                    v += ext.mu[a] * g[a];
                }
                if l.ns == 1 {
                    v += ext.cap_lambda[0] * sys.power_residual(t, x, vel, q, s);
                }
                v
            }
        }
    }

    /// DtP solve plus the dual-array derivatives of L_H at one node.
    pub fn eval_node(&self, k: usize, ext: &ExtendedDual) -> Result<NodeEval> {
        let t = self.grid.node(k);
        let base = self.hp.base.node(k);
        let u = dtp_map(&self.dtp, &self.model, ext, &self.hp.c, base, t).map_err(|e| {
            Error::DtpAtNode {
                node: k,
                source: Box::new(e),
            }
        })?;
        let lh = self.eval_lh(&u, ext, t, base);
        let (dldd_dot, dldd) = match &self.model {
            Model::Ode(sys) => {
                let n = sys.dim();
                let mut f = vec![0.0; n];
                sys.rhs(t, &u, &mut f);
                let ddot: Vec<f64> = u.iter().map(|x| -x).collect();
                let dund: Vec<f64> = f.iter().map(|fi| -fi).collect();
                (ddot, dund)
            }
            Model::Mech(sys) => {
                let l = sys.layout();
                let (x, rest) = u.split_at(l.nx);
                let (vel, rest) = rest.split_at(l.nv);
                let (q, s_sl) = rest.split_at(l.nq);
                let s = if l.ns == 1 { s_sl[0] } else { 0.0 };
                let mut f = vec![0.0; l.nv];
                sys.accel(t, x, vel, q, &mut f);
                let mut g = vec![0.0; l.m];
                sys.constraint(t, x, vel, &mut g);
                let mut ddot: Vec<f64> = x.iter().map(|xi| -xi).collect();
                ddot.extend(vel.iter().map(|vi| -vi));
                let mut dund: Vec<f64> = vel.iter().map(|vi| -vi).collect();
                dund.extend(f.iter().map(|fi| -fi));
                dund.extend(g.iter());
                if l.ns == 1 {
                    dund.push(sys.power_residual(t, x, vel, q, s));
                }
                (ddot, dund)
            }
        };
        Ok(NodeEval {
            u,
            lh,
            dldd_dot,
            dldd,
        })
    }

    pub fn node_ext(&self, duals: &Traj, dop: &DiffOp, k: usize) -> ExtendedDual {
        let rates = dop.derivative_at(duals, k);
        ExtendedDual::from_packed(self.layout(), duals.node(k), &rates)
    }

    /// The discretized dual action
    /// `S_H = -rho(0).x0 - lambda(0).v0 + sum_k w_k L_H(U^H_k, D_k, t_k)`.
    pub fn assemble_action(&self, duals: &Traj) -> Result<f64> {
        self.check_duals(duals)?;
        let dop = self.diff_op();
        let mut s = 0.0;
        let l = self.layout();
        let d0 = duals.node(0);
        for i in 0..l.nx {
            s -= d0[i] * self.x0[i];
        }
        for i in 0..l.nv {
            s -= d0[l.nx + i] * self.v0[i];
        }
        for k in 0..self.grid.n {
            let ext = self.node_ext(duals, &dop, k);
            let ev = self.eval_node(k, &ext)?;
            s += self.grid.weight(k) * ev.lh;
        }
        Ok(s)
    }

    /// Exact gradient of the discrete action in the nodal dual values.
    /// Terminal Dirichlet slots are zeroed (they are not varied).
    pub fn el_residual(&self, duals: &Traj) -> Result<ElResidual> {
        self.check_duals(duals)?;
        let dop = self.diff_op();
        let l = self.layout();
        let nd = self.n_dotted();
        let mut grad = Traj::zeros(self.grid, l.dual_width());
        let mut ic_x = vec![0.0; l.nx];
        let mut ic_v = vec![0.0; l.nv];

        for k in 0..self.grid.n {
            let ext = self.node_ext(duals, &dop, k);
            let ev = self.eval_node(k, &ext)?;
            let w = self.grid.weight(k);
            // undotted dependence lands on node k
            {
                let gk = grad.node_mut(k);
                for j in 0..l.dual_width() {
                    gk[j] += w * ev.dldd[j];
                }
            }
            // dotted dependence scatters through the stencil transpose
            for (src, cfc) in dop.row(k) {
                let gs = grad.node_mut(src);
                for j in 0..nd {
                    gs[j] += w * cfc * ev.dldd_dot[j];
                }
            }
            if k == 0 {
                for i in 0..l.nx {
                    ic_x[i] = -ev.dldd_dot[i] - self.x0[i]; // x^H(0) - x0
                }
                for i in 0..l.nv {
                    ic_v[i] = -ev.dldd_dot[l.nx + i] - self.v0[i];
                }
            }
        }
        // boundary terms of the action
        {
            let g0 = grad.node_mut(0);
            for i in 0..l.nx {
                g0[i] -= self.x0[i];
            }
            for i in 0..l.nv {
                g0[l.nx + i] -= self.v0[i];
            }
        }
        // terminal Dirichlet slots are not unknowns
        {
            let gn = grad.node_mut(self.grid.n - 1);
            for j in 0..nd {
                gn[j] = 0.0;
            }
        }
        let max_abs = grad.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        Ok(ElResidual {
            grad,
            ic_x,
            ic_v,
            max_abs,
        })
    }

    /// Recovered primal trajectory U^H(D(t), t) at every node.
    pub fn recover_primal(&self, duals: &Traj) -> Result<Traj> {
        self.check_duals(duals)?;
        let dop = self.diff_op();
        let l = self.layout();
        let mut out = Traj::zeros(self.grid, l.primal_width());
        for k in 0..self.grid.n {
            let ext = self.node_ext(duals, &dop, k);
            let ev = self.eval_node(k, &ext)?;
            out.node_mut(k).copy_from_slice(&ev.u);
        }
        Ok(out)
    }

    fn check_duals(&self, duals: &Traj) -> Result<()> {
        if duals.grid != self.grid {
            return Err(Error::Config("dual trajectory grid mismatch".into()));
        }
        if duals.width != self.layout().dual_width() {
            return Err(Error::DimensionMismatch {
                what: "dual trajectory width",
                expected: self.layout().dual_width(),
                got: duals.width,
            });
        }
        Ok(())
    }

    /// A zero dual trajectory with the terminal Dirichlet values installed.
    pub fn zero_duals(&self) -> Traj {
        let l = self.layout();
        let mut t = Traj::zeros(self.grid, l.dual_width());
        let bc = self.terminal_bc.pack();
        let last = self.grid.n - 1;
        let nd = self.n_dotted();
        t.node_mut(last)[..nd].copy_from_slice(&bc[..nd]);
        t
    }
}

/// Output of `el_residual`: the discrete-action gradient per node and dual
/// field, plus the initial-condition residuals it embeds at node 0.
pub struct ElResidual {
    pub grad: Traj,
    pub ic_x: Vec<f64>,
    pub ic_v: Vec<f64>,
    pub max_abs: f64,
}

// ---------------------------------------------------------------------------
// specialized closed-form actions (independent codepaths for cross-checks)
// ---------------------------------------------------------------------------

/// The dual Lorenz action evaluated directly from the displayed quadratic
/// form: integrand `-p.Bp/2 - Ubar.p - mu xbar zbar + gamma xbar ybar`,
/// boundary terms `-lambda(0) x0 - mu(0) y0 - gamma(0) z0`.
pub fn lorenz_dual_action_direct(
    duals: &Traj,
    base: &BaseState,
    c: f64,
    prm: LorenzParams,
    x0: &[f64],
) -> Result<f64> {
    let grid = duals.grid;
    let dop = DiffOp::for_grid(&grid);
    let layout = StateLayout::first_order(3);
    let mut s = 0.0;
    for i in 0..3 {
        s -= duals.node(0)[i] * x0[i];
    }
    for k in 0..grid.n {
        let rates = dop.derivative_at(duals, k);
        let ext = ExtendedDual::from_packed(layout, duals.node(k), &rates);
        let ub = base.node(k);
        let p = crate::dtp::lorenz_p_vector(&ext, ub, prm);
        let b = crate::dtp::lorenz_b_matrix(c, ext.rho[1], ext.rho[2])?;
        let pv = nalgebra::DVector::from_column_slice(&p);
        let bp = &b * &pv;
        let mut integrand = -0.5 * pv.dot(&bp);
        for i in 0..3 {
            integrand -= ub[i] * p[i];
        }
        integrand += -ext.rho[1] * ub[0] * ub[2] + ext.rho[2] * ub[0] * ub[1];
        s += grid.weight(k) * integrand;
    }
    Ok(s)
}

/// The reduced-Pars dual action evaluated directly:
/// `S = -1/2 int (v1^H)^2 + (v2^H)^2 dt - lambda(0).v0` with
/// `v1^H = lamdot1 + lam1 z v3/(1+z^2) + lam2 v3/(1+z^2)`, `v2^H = lamdot2`.
pub fn pars_reduced_action_direct(duals: &Traj, x3_0: f64, v3_0: f64, v0: [f64; 2]) -> f64 {
    let grid = duals.grid;
    let dop = DiffOp::for_grid(&grid);
    let mut s = -duals.node(0)[0] * v0[0] - duals.node(0)[1] * v0[1];
    for k in 0..grid.n {
        let t = grid.node(k);
        let z = x3_0 + v3_0 * t;
        let den = 1.0 + z * z;
        let d = duals.node(k);
        let rates = dop.derivative_at(duals, k);
        let v1 = rates[0] + d[0] * z * v3_0 / den + d[1] * v3_0 / den;
        let v2 = rates[1];
        s += grid.weight(k) * (-0.5) * (v1 * v1 + v2 * v2);
    }
    s
}

// ---------------------------------------------------------------------------
// base-state builders
// ---------------------------------------------------------------------------

/// Base state for a first-order model: the oracle trajectory itself.
pub fn base_from_ode(sys: &dyn OdeSystem, x0: &[f64], grid: Grid) -> Result<BaseState> {
    Ok(BaseState {
        values: integrate_ode(sys, x0, grid)?,
    })
}

/// Base state for the mechanical (free-Q) dualization of a Pars-family spec:
/// integrate the configured determinate law and pack
/// `(xbar, vbar, Qbar = f_c, sbar)` with `sbar = sqrt(2 nu v.v)` for the
/// damped law and zero otherwise.
pub fn base_for_mech_from_oracle(spec: &SystemSpec, grid: Grid) -> Result<BaseState> {
    let (d, _, _, _) = spec.dims();
    let sys = spec.build_oracle()?;
    let orc = integrate_ode(sys.as_ref(), &spec.oracle_initial(), grid)?;
    let layout = StateLayout {
        nx: d,
        nv: d,
        m: 1,
        nq: d,
        ns: 1,
    };
    let mut values = Traj::zeros(grid, layout.primal_width());
    let nu = match spec.force_law {
        ForceLaw::VorticalDamped => spec.scalar("nu").unwrap_or(0.0),
        _ => 0.0,
    };
    for k in 0..grid.n {
        let t = grid.node(k);
        let node = orc.node(k);
        let (x, v) = node.split_at(d);
        let q: Vec<f64> = match spec.force_law {
            ForceLaw::Gauss | ForceLaw::Dalembert => gauss_force(spec, x, v, t)?.f_c,
            ForceLaw::VorticalDamped => {
                let ls = crate::system::pars_lambda_star(x, v, nu);
                let a = crate::system::pars_a(x);
                let nxv = [-v[2], -x[2] * v[2], x[2] * v[1] + v[0]];
                (0..3).map(|i| ls * a[i] + nxv[i] + nu * v[i]).collect()
            }
            _ => {
                return Err(Error::Unsupported(
                    "base builder needs a determinate force law".into(),
                ))
            }
        };
        let s = if nu > 0.0 {
            (2.0 * nu * v.iter().map(|a| a * a).sum::<f64>()).sqrt()
        } else {
            0.0
        };
        let out = values.node_mut(k);
        out[..d].copy_from_slice(x);
        out[d..2 * d].copy_from_slice(v);
        out[2 * d..3 * d].copy_from_slice(&q);
        out[3 * d] = s;
    }
    Ok(BaseState { values })
}

/// Central-difference gradient of the action in the nodal dual values;
/// the independent check for `el_residual` (terminal slots skipped).
pub fn fd_action_gradient(asm: &ActionAssembly, duals: &Traj, h_fd: f64) -> Result<Traj> {
    let l = asm.layout();
    let nd = asm.n_dotted();
    let mut grad = Traj::zeros(asm.grid, l.dual_width());
    let mut work = duals.clone();
    for k in 0..asm.grid.n {
        for j in 0..l.dual_width() {
            if k == asm.grid.n - 1 && j < nd {
                continue; // pinned
            }
            let orig = work.node(k)[j];
            work.node_mut(k)[j] = orig + h_fd;
            let sp = asm.assemble_action(&work)?;
            work.node_mut(k)[j] = orig - h_fd;
            let sm = asm.assemble_action(&work)?;
            work.node_mut(k)[j] = orig;
            grad.node_mut(k)[j] = (sp - sm) / (2.0 * h_fd);
        }
    }
    Ok(grad)
}
