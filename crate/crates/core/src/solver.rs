//! Critical points of the discretized dual action: a global Newton solve of
//! the dual Euler-Lagrange system over the full space-time nodal dual
//! vector, with banded LU (the EL system couples nodes only through the
//! derivative stencils), finite-difference Jacobian assembled with stencil
//! coloring, ridge regularization and halving line search.

use crate::action::ActionAssembly;
use crate::error::{Error, Result};
use crate::grid::{Grid, Traj};
use crate::linalg::Banded;
use crate::oracle::integrate_ode;
use crate::system::Model;

#[derive(Debug, Clone)]
pub enum InitialGuess {
    ZeroDual,
    Supplied(Traj),
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub tol_newton: f64,
    pub max_iter: usize,
    pub regularization: f64,
    pub initial_guess: InitialGuess,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol_newton: 1e-9,
            max_iter: 50,
            regularization: 1e-10,
            initial_guess: InitialGuess::ZeroDual,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub duals: Traj,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Free-unknown indexing: every dual slot at nodes 0..n-2 plus the
/// underived (mu, Lambda) slots at the terminal node.
struct FreeMap {
    n: usize,
    width: usize,
    nd: usize,
}

impl FreeMap {
    fn total(&self) -> usize {
        (self.n - 1) * self.width + (self.width - self.nd)
    }

    fn global(&self, k: usize, j: usize) -> usize {
        if k < self.n - 1 {
            k * self.width + j
        } else {
            k * self.width + (j - self.nd)
        }
    }

    fn is_free(&self, k: usize, j: usize) -> bool {
        k < self.n - 1 || j >= self.nd
    }

    fn pack(&self, traj: &Traj) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total());
        for k in 0..self.n {
            for j in 0..self.width {
                if self.is_free(k, j) {
                    out.push(traj.node(k)[j]);
                }
            }
        }
        out
    }

    fn unpack_into(&self, vec: &[f64], traj: &mut Traj) {
        let mut idx = 0;
        for k in 0..self.n {
            for j in 0..self.width {
                if self.is_free(k, j) {
                    traj.node_mut(k)[j] = vec[idx];
                    idx += 1;
                }
            }
        }
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Extremize the discretized dual action: Newton on the exact gradient.
///
/// Non-convergence returns the best iterate with `converged = false`; a DtP
/// singularity on the current iterate is an error advising a larger c.
pub fn solve_dual_bvp(asm: &ActionAssembly, cfg: &SolveConfig) -> Result<SolveReport> {
    let layout = asm.layout();
    let fm = FreeMap {
        n: asm.grid.n,
        width: layout.dual_width(),
        nd: asm.n_dotted(),
    };
    let mut duals = match &cfg.initial_guess {
        InitialGuess::ZeroDual => asm.zero_duals(),
        InitialGuess::Supplied(t) => {
            let mut d = asm.zero_duals();
            if t.grid != asm.grid || t.width != layout.dual_width() {
                return Err(Error::Config(
                    "supplied initial guess has wrong shape".into(),
                ));
            }
            // keep the pinned terminal values from the assembly
            let free = fm.pack(t);
            fm.unpack_into(&free, &mut d);
            d
        }
    };

    let mut grad = asm.el_residual(&duals)?;
    let mut g = fm.pack(&grad.grad);
    let mut gn = norm_inf(&g);
    let mut history = vec![gn];
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        if gn <= cfg.tol_newton {
            return Ok(SolveReport {
                duals,
                converged: true,
                residual_norm: gn,
                iterations,
                residual_history: history,
            });
        }
        let mut banded = fd_jacobian(asm, &fm, &duals, &grad.grad)?;
        if cfg.regularization > 0.0 {
            banded.add_diagonal(cfg.regularization);
        }
        let ipiv = banded.lu_factor()?;
        let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
        banded.solve_in_place(&ipiv, &mut step);

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial_free = fm.pack(&duals);
            for (t, s) in trial_free.iter_mut().zip(&step) {
                *t += alpha * s;
            }
            let mut trial = asm.zero_duals();
            fm.unpack_into(&trial_free, &mut trial);
            match asm.el_residual(&trial) {
                Ok(el) => {
                    let tg = fm.pack(&el.grad);
                    let tn = norm_inf(&tg);
                    if tn < gn {
                        duals = trial;
                        grad = el;
                        g = tg;
                        gn = tn;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::DtpAtNode { .. }) => {
                    // stepped outside the DtP-invertible region: backtrack
                }
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        iterations += 1;
        history.push(gn);
        if !accepted {
            break;
        }
    }

    Ok(SolveReport {
        converged: gn <= cfg.tol_newton,
        residual_norm: gn,
        iterations,
        residual_history: history,
        duals,
    })
}

/// Forward-difference Jacobian of the gradient with 5-color node striping
/// (the gradient at node j depends on duals at nodes j-2..j+2 only).
fn fd_jacobian(asm: &ActionAssembly, fm: &FreeMap, duals: &Traj, grad0: &Traj) -> Result<Banded> {
    let n = fm.n;
    let b = fm.width;
    let half_band = 3 * b - 1;
    let mut jac = Banded::zeros(fm.total(), half_band, half_band);
    let scale = 1.0 + duals.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let eps = 1e-7 * scale;

    let mut work = duals.clone();
    for color in 0..5usize {
        for j in 0..b {
            let nodes: Vec<usize> = (0..n)
                .filter(|k| k % 5 == color && fm.is_free(*k, j))
                .collect();
            if nodes.is_empty() {
                continue;
            }
            for &k in &nodes {
                work.node_mut(k)[j] += eps;
            }
            let gp = asm.el_residual(&work)?;
            for &k in &nodes {
                let orig = duals.node(k)[j];
                work.node_mut(k)[j] = orig;
            }
            let inv_eps = 1.0 / eps;
            for &k in &nodes {
                let col = fm.global(k, j);
                let lo = k.saturating_sub(2);
                let hi = (k + 2).min(n - 1);
                for kk in lo..=hi {
                    for jj in 0..b {
                        if !fm.is_free(kk, jj) {
                            continue;
                        }
                        let row = fm.global(kk, jj);
                        let d = (gp.grad.node(kk)[jj] - grad0.node(kk)[jj]) * inv_eps;
                        if d != 0.0 {
                            jac.add(row, col, d);
                        }
                    }
                }
            }
        }
    }
    Ok(jac)
}

/// Backward-integrated warm start for first-order models: integrate the
/// primal oracle forward, then the dual stationarity ODE
/// `rhodot = c_x (x - xbar) - (dF/dx)^T rho` backward from the terminal
/// Dirichlet data. Near-exact when the discretization is fine.
pub fn adjoint_seed(asm: &ActionAssembly) -> Result<Traj> {
    let sys = match &asm.model {
        Model::Ode(s) => s.as_ref(),
        Model::Mech(_) => {
            return Err(Error::Unsupported(
                "adjoint seeding is built for first-order models".into(),
            ))
        }
    };
    let grid = asm.grid;
    let nx = sys.dim();
    let primal = integrate_ode(sys, &asm.x0, grid)?;
    // nodal derivatives for Hermite sampling of the primal path
    let mut primal_rates = Traj::zeros(grid, nx);
    for k in 0..grid.n {
        let mut f = vec![0.0; nx];
        sys.rhs(grid.node(k), primal.node(k), &mut f);
        primal_rates.node_mut(k).copy_from_slice(&f);
    }
    let base_rates = crate::grid::second_order_rates(&asm.hp.base.values);

    let c_x = asm.hp.c.c_x;
    let eval_rhs = |t: f64, rho: &[f64]| -> Result<Vec<f64>> {
        let x = primal.sample_hermite(&primal_rates, t)?;
        let xb = asm.hp.base.values.sample_hermite(&base_rates, t)?;
        let mut jac = nalgebra::DMatrix::zeros(nx, nx);
        sys.rhs_jacobian(t, &x, &mut jac);
        let jtr = jac.transpose() * nalgebra::DVector::from_column_slice(rho);
        Ok((0..nx).map(|i| c_x * (x[i] - xb[i]) - jtr[i]).collect())
    };

    let mut duals = asm.zero_duals();
    let h = grid.h();
    // classical RK4 with negative step, from T down to 0
    for k in (1..grid.n).rev() {
        let t = grid.node(k);
        let y = duals.node(k).to_vec();
        let k1 = eval_rhs(t, &y)?;
        let y2: Vec<f64> = (0..nx).map(|i| y[i] - 0.5 * h * k1[i]).collect();
        let k2 = eval_rhs(t - 0.5 * h, &y2)?;
        let y3: Vec<f64> = (0..nx).map(|i| y[i] - 0.5 * h * k2[i]).collect();
        let k3 = eval_rhs(t - 0.5 * h, &y3)?;
        let y4: Vec<f64> = (0..nx).map(|i| y[i] - h * k3[i]).collect();
        let k4 = eval_rhs(t - h, &y4)?;
        let prev = duals.node_mut(k - 1);
        for i in 0..nx {
            prev[i] = y[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(duals)
}

/// Report of a gauge comparison: two admissible H choices (base states,
/// coefficients, terminal data) solved for the same primal problem.
#[derive(Debug, Clone)]
pub struct GaugeReport {
    pub converged: (bool, bool),
    pub inconclusive: bool,
    /// sup-norm distance between the recovered primal trajectories
    pub primal_distance: f64,
    pub residuals: (f64, f64),
}

/// Solve both assemblies and compare the recovered primal trajectories.
pub fn gauge_compare(
    asm1: &ActionAssembly,
    asm2: &ActionAssembly,
    cfg: &SolveConfig,
) -> Result<GaugeReport> {
    if asm1.grid != asm2.grid {
        return Err(Error::Config("gauge comparison needs a common grid".into()));
    }
    let r1 = solve_dual_bvp(asm1, cfg)?;
    let r2 = solve_dual_bvp(asm2, cfg)?;
    let inconclusive = !(r1.converged && r2.converged);
    let p1 = asm1.recover_primal(&r1.duals)?;
    let p2 = asm2.recover_primal(&r2.duals)?;
    Ok(GaugeReport {
        converged: (r1.converged, r2.converged),
        inconclusive,
        primal_distance: p1.max_abs_diff(&p2),
        residuals: (r1.residual_norm, r2.residual_norm),
    })
}

/// Two-slab continuation for spec-driven solves: extremize on [0, T/2]
/// first (zero terminal data there), zero-pad, then solve the full horizon
/// from that warm start. Falls back to the direct solve when the grid does
/// not halve evenly or the half solve fails.
pub fn solve_dual_bvp_two_slab<F>(
    make_assembly: F,
    asm: &ActionAssembly,
    cfg: &SolveConfig,
) -> Result<SolveReport>
where
    F: Fn(Grid, Traj) -> Result<ActionAssembly>,
{
    let n = asm.grid.n;
    if n >= 7 && (n - 1) % 2 == 0 {
        let n_half = (n - 1) / 2 + 1;
        if let Ok(grid_half) = Grid::new(asm.grid.t0, asm.grid.node(n_half - 1), n_half) {
            let layout = asm.layout();
            let mut base_half = Traj::zeros(grid_half, layout.primal_width());
            for k in 0..n_half {
                base_half.node_mut(k).copy_from_slice(asm.hp.base.node(k));
            }
            if let Ok(half_asm) = make_assembly(grid_half, base_half) {
                if let Ok(half) = solve_dual_bvp(&half_asm, cfg) {
                    if half.converged {
                        let mut seed = asm.zero_duals();
                        for k in 0..n_half - 1 {
                            let src = half.duals.node(k).to_vec();
                            seed.node_mut(k).copy_from_slice(&src);
                        }
                        let mut warm = cfg.clone();
                        warm.initial_guess = InitialGuess::Supplied(seed);
                        return solve_dual_bvp(asm, &warm);
                    }
                }
            }
        }
    }
    solve_dual_bvp(asm, cfg)
}
