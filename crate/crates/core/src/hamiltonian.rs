//! Legendre transform of the dual Lagrangian: conjugate momenta, rate
//! recovery, the dual Hamiltonian, and its conservation along dual
//! Euler-Lagrange solutions.
//!
//! By the envelope theorem the momentum map is explicit: stationarity kills
//! the implicit DtP dependence, so `P = dL/dDdot = (-x^H, -v^H)`. The rates
//! of the algebraic multipliers (mu, Lambda) never enter the Lagrangian and
//! carry no momenta; the transform acts on the (rho, lambda) block.

use nalgebra::{DMatrix, DVector};

use crate::action::ActionAssembly;
use crate::dtp::{dtp_map, ExtendedDual};
use crate::error::{Error, Result};
use crate::grid::{parasite_free_rates, Traj};
use crate::system::LorenzParams;

/// A point of the Legendre transform: dual state, conjugate momenta,
/// recovered rates, Hamiltonian value.
#[derive(Debug, Clone)]
pub struct LegendrePoint {
    pub d: Vec<f64>,
    pub p: Vec<f64>,
    pub d_dot: Vec<f64>,
    pub h_value: f64,
}

fn ext_from(asm: &ActionAssembly, d: &[f64], d_dot: &[f64]) -> ExtendedDual {
    let layout = asm.layout();
    let mut rates = vec![0.0; layout.dual_width()];
    rates[..d_dot.len()].copy_from_slice(d_dot);
    ExtendedDual::from_packed(layout, d, &rates)
}

/// The reduced dual Lagrangian `L(D, Ddot, t) = L_H(U^H(D, t), D, t)`.
pub fn lagrangian_value(
    asm: &ActionAssembly,
    d: &[f64],
    d_dot: &[f64],
    t: f64,
    base: &[f64],
) -> Result<f64> {
    let ext = ext_from(asm, d, d_dot);
    let u = dtp_map(&asm.dtp, &asm.model, &ext, &asm.hp.c, base, t)?;
    Ok(asm.eval_lh(&u, &ext, t, base))
}

/// Conjugate momenta `P = dL/dDdot = (-x^H, -v^H)` (envelope theorem).
pub fn momentum_map(
    asm: &ActionAssembly,
    d: &[f64],
    d_dot: &[f64],
    t: f64,
    base: &[f64],
) -> Result<Vec<f64>> {
    let ext = ext_from(asm, d, d_dot);
    let u = dtp_map(&asm.dtp, &asm.model, &ext, &asm.hp.c, base, t)?;
    let nd = asm.n_dotted();
    Ok(u[..nd].iter().map(|x| -x).collect())
}

/// Invert the momentum map for the dual rates. The map is affine in the
/// rates for the closed-form systems (one linear solve); a Newton polish
/// covers models whose DtP solution is nonlinear in the dual rates.
pub fn rate_recovery(
    asm: &ActionAssembly,
    d: &[f64],
    p: &[f64],
    t: f64,
    base: &[f64],
) -> Result<Vec<f64>> {
    let nd = asm.n_dotted();
    if p.len() != nd {
        return Err(Error::DimensionMismatch {
            what: "momentum vector",
            expected: nd,
            got: p.len(),
        });
    }
    let mut d_dot = vec![0.0; nd];
    let scale = asm.hp.c.max().max(1.0);
    for _ in 0..20 {
        let p_now = momentum_map(asm, d, &d_dot, t, base)?;
        let r: Vec<f64> = p_now.iter().zip(p).map(|(a, b)| a - b).collect();
        let rn = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if rn <= 1e-12 * scale {
            return Ok(d_dot);
        }
        // directional differences; exact columns when the map is affine
        let mut m = DMatrix::zeros(nd, nd);
        for j in 0..nd {
            let mut dd = d_dot.clone();
            dd[j] += 1.0;
            let pj = momentum_map(asm, d, &dd, t, base)?;
            for i in 0..nd {
                m[(i, j)] = pj[i] - p_now[i];
            }
        }
        let step = m
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| {
                let sv = m.svd(false, false);
                let smin = sv
                    .singular_values
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                Error::MomentumMapSingular(format!(
                "momentum-map Jacobian singular at t = {t} (smallest singular value {smin:.3e})"
            ))
            })?;
        for i in 0..nd {
            d_dot[i] -= step[i];
        }
    }
    // accept only a genuine inverse
    let p_now = momentum_map(asm, d, &d_dot, t, base)?;
    let rn = p_now
        .iter()
        .zip(p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if rn <= 1e-9 * scale {
        Ok(d_dot)
    } else {
        Err(Error::MomentumMapSingular(format!(
            "rate recovery stalled at residual {rn:.3e} at t = {t}"
        )))
    }
}

/// The dual Hamiltonian `H(D, P, t) = P . R(D, P, t) - L(D, R(D, P, t), t)`.
pub fn hamiltonian_value(
    asm: &ActionAssembly,
    d: &[f64],
    p: &[f64],
    t: f64,
    base: &[f64],
) -> Result<f64> {
    let d_dot = rate_recovery(asm, d, p, t, base)?;
    let l = lagrangian_value(asm, d, &d_dot, t, base)?;
    let pr: f64 = p.iter().zip(&d_dot).map(|(a, b)| a * b).sum();
    Ok(pr - l)
}

/// Full Legendre point from (D, Ddot).
pub fn legendre_point(
    asm: &ActionAssembly,
    d: &[f64],
    d_dot: &[f64],
    t: f64,
    base: &[f64],
) -> Result<LegendrePoint> {
    let p = momentum_map(asm, d, d_dot, t, base)?;
    let l = lagrangian_value(asm, d, d_dot, t, base)?;
    let pr: f64 = p.iter().zip(d_dot).map(|(a, b)| a * b).sum();
    Ok(LegendrePoint {
        d: d.to_vec(),
        p,
        d_dot: d_dot.to_vec(),
        h_value: pr - l,
    })
}

// ---------------------------------------------------------------------------
// Lorenz closed forms
// ---------------------------------------------------------------------------

/// Closed-form rate recovery for the Lorenz dual system:
/// `R(D, P, t) = -A|_D (P + Ubar) - ptilde|_(D, Ubar)`.
pub fn lorenz_rate_recovery(
    d: &[f64],
    p: &[f64],
    base: &[f64],
    c: f64,
    prm: LorenzParams,
) -> Vec<f64> {
    let layout = crate::system::StateLayout::first_order(3);
    let ext0 = ExtendedDual::from_packed(layout, d, &[0.0; 3]);
    let ptilde = crate::dtp::lorenz_p_vector(&ext0, base, prm);
    let a = crate::dtp::lorenz_a_matrix(c, d[1], d[2]);
    let pu = DVector::from_column_slice(&[p[0] + base[0], p[1] + base[1], p[2] + base[2]]);
    let apu = a * pu;
    (0..3).map(|i| -apu[i] - ptilde[i]).collect()
}

/// Closed-form Lorenz dual Lagrangian
/// `-p.Bp/2 - Ubar.p - mu xbar zbar + gamma xbar ybar`.
pub fn lorenz_lagrangian(
    d: &[f64],
    d_dot: &[f64],
    base: &[f64],
    c: f64,
    prm: LorenzParams,
) -> Result<f64> {
    let layout = crate::system::StateLayout::first_order(3);
    let ext = ExtendedDual::from_packed(layout, d, d_dot);
    let p = crate::dtp::lorenz_p_vector(&ext, base, prm);
    let b = crate::dtp::lorenz_b_matrix(c, d[1], d[2])?;
    let pv = DVector::from_column_slice(&p);
    let bp = &b * &pv;
    let mut l = -0.5 * pv.dot(&bp);
    for i in 0..3 {
        l -= base[i] * p[i];
    }
    l += -d[1] * base[0] * base[2] + d[2] * base[0] * base[1];
    Ok(l)
}

// ---------------------------------------------------------------------------
// conservation along dual EL solutions
// ---------------------------------------------------------------------------

/// Report of a conservation scan of H(t) along a dual trajectory.
#[derive(Debug, Clone)]
pub struct ConservationReport {
    /// preconditions held (converged solve)
    pub valid: bool,
    pub reason: Option<String>,
    pub h_series: Vec<f64>,
    /// max_t |H(t) - H(0)|
    pub drift: f64,
}

/// Scan H(t) along a dual EL solution. Conservation is claimed only for
/// time-independent Lagrangians: constant base state and autonomous
/// dynamics; anything else is refused with an explanation. Dual rates are
/// sampled with second-order stencils that annihilate the checkerboard mode
/// of the central-difference EL discretization (post-processing only).
pub fn check_conservation(
    asm: &ActionAssembly,
    duals: &Traj,
    converged: bool,
) -> Result<ConservationReport> {
    if !asm.hp.base.is_constant() {
        return Err(Error::Unsupported(
            "conservation holds for time-independent L: the base state varies in time; \
             rerun with a constant base (drift would be reported as information only)"
                .into(),
        ));
    }
    if !asm.model.autonomous() {
        return Err(Error::Unsupported(
            "conservation holds for time-independent L: the model has explicit time dependence"
                .into(),
        ));
    }
    if !converged {
        return Ok(ConservationReport {
            valid: false,
            reason: Some("dual trajectory does not solve the dual EL system (unconverged)".into()),
            h_series: vec![],
            drift: f64::NAN,
        });
    }
    let nd = asm.n_dotted();
    if duals.grid.n < 4 {
        return Err(Error::Config(
            "conservation scan needs at least 4 nodes".into(),
        ));
    }
    let rates = parasite_free_rates(duals);
    let mut h_series = Vec::with_capacity(duals.grid.n);
    for k in 0..duals.grid.n {
        let t = duals.grid.node(k);
        let base = asm.hp.base.node(k);
        let lp = legendre_point(asm, duals.node(k), &rates.node(k)[..nd], t, base)?;
        h_series.push(lp.h_value);
    }
    let h0 = h_series[0];
    let drift = h_series.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
    Ok(ConservationReport {
        valid: true,
        reason: None,
        h_series,
        drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionAssembly;
    use crate::dtp::{BaseState, CoefC, DtpKind, DualState, HParams};
    use crate::grid::Grid;
    use crate::solver::{solve_dual_bvp, SolveConfig};
    use crate::system::{GenParsMech, Lorenz, MechSystem, Model, StateLayout};
    use rand::prelude::*;
    use rand::rngs::StdRng;

    fn lorenz_asm(
        grid: Grid,
        c: f64,
        base: BaseState,
        x0: [f64; 3],
        prm: LorenzParams,
    ) -> ActionAssembly {
        ActionAssembly::new(
            Model::Ode(Box::new(Lorenz(prm))),
            DtpKind::LorenzClosed(prm),
            HParams::new(CoefC::uniform(c), base).unwrap(),
            grid,
            x0.to_vec(),
            vec![],
            DualState::zeros(StateLayout::first_order(3)),
        )
        .unwrap()
    }

    #[test]
    fn momentum_map_matches_finite_differences() {
        // envelope identity: dL/dDdot with and without the implicit DtP
        // response agree
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let base = BaseState::constant(grid, &[0.4, -0.2, 0.7]);
        let asm = lorenz_asm(grid, 30.0, base, [0.0; 3], LorenzParams::default());
        let mut rng = StdRng::seed_from_u64(3);
        let bpt = [0.4, -0.2, 0.7];
        for _ in 0..20 {
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dd: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = momentum_map(&asm, &d, &dd, 0.3, &bpt).unwrap();
            let eps = 1e-5;
            for j in 0..3 {
                let mut dp = dd.clone();
                dp[j] += eps;
                let lp = lagrangian_value(&asm, &d, &dp, 0.3, &bpt).unwrap();
                dp[j] = dd[j] - eps;
                let lm = lagrangian_value(&asm, &d, &dp, 0.3, &bpt).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                assert!(
                    (fd - p[j]).abs() < 1e-8 * (1.0 + fd.abs()),
                    "{fd} vs {}",
                    p[j]
                );
            }
        }
    }

    #[test]
    fn momentum_affine_in_rates() {
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let base = BaseState::constant(grid, &[0.0; 3]);
        let asm = lorenz_asm(grid, 25.0, base, [0.0; 3], LorenzParams::default());
        let d = [1.0, -0.5, 2.0];
        let b = [0.0; 3];
        let p0 = momentum_map(&asm, &d, &[0.0; 3], 0.0, &b).unwrap();
        let p1 = momentum_map(&asm, &d, &[1.0, 2.0, -1.0], 0.0, &b).unwrap();
        let p2 = momentum_map(&asm, &d, &[2.0, 4.0, -2.0], 0.0, &b).unwrap();
        for i in 0..3 {
            assert!((p2[i] - 2.0 * p1[i] + p0[i]).abs() < 1e-10, "not affine");
        }
    }

    #[test]
    fn legendre_round_trip() {
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let base = BaseState::constant(grid, &[0.3, 0.1, -0.4]);
        let asm = lorenz_asm(grid, 40.0, base, [0.0; 3], LorenzParams::default());
        let bpt = [0.3, 0.1, -0.4];
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let dd: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = momentum_map(&asm, &d, &dd, 0.2, &bpt).unwrap();
            let back = rate_recovery(&asm, &d, &p, 0.2, &bpt).unwrap();
            for i in 0..3 {
                assert!((back[i] - dd[i]).abs() < 1e-9, "{} vs {}", back[i], dd[i]);
            }
        }
    }

    #[test]
    fn lorenz_closed_form_rate_recovery_matches_generic() {
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let prm = LorenzParams::default();
        let base = BaseState::constant(grid, &[0.5, -0.3, 0.9]);
        let asm = lorenz_asm(grid, 35.0, base, [0.0; 3], prm);
        let bpt = [0.5, -0.3, 0.9];
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let generic = rate_recovery(&asm, &d, &p, 0.0, &bpt).unwrap();
            let closed = lorenz_rate_recovery(&d, &p, &bpt, 35.0, prm);
            for i in 0..3 {
                assert!((generic[i] - closed[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_point_values() {
        // D = 0, P = 0, Ubar = 0: ptilde vanishes, so Ddot = 0, and the two
        // Hamiltonian codepaths agree on a finite value
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let prm = LorenzParams::default();
        let base = BaseState::constant(grid, &[0.0; 3]);
        let asm = lorenz_asm(grid, 20.0, base, [0.0; 3], prm);
        let b = [0.0; 3];
        let dd = lorenz_rate_recovery(&[0.0; 3], &[0.0; 3], &b, 20.0, prm);
        assert_eq!(dd, vec![0.0, 0.0, 0.0]);
        let h_generic = hamiltonian_value(&asm, &[0.0; 3], &[0.0; 3], 0.0, &b).unwrap();
        let l_closed = lorenz_lagrangian(&[0.0; 3], &dd, &b, 20.0, prm).unwrap();
        let h_closed = 0.0 - l_closed;
        assert!(h_generic.is_finite());
        assert!((h_generic - h_closed).abs() < 1e-12);
    }

    #[test]
    fn time_shift_invariance_constant_base() {
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let base = BaseState::constant(grid, &[0.2, 0.2, 0.2]);
        let asm = lorenz_asm(grid, 30.0, base, [0.0; 3], LorenzParams::default());
        let b = [0.2, 0.2, 0.2];
        let d = [0.7, -0.4, 1.1];
        let p = [0.3, 0.2, -0.5];
        let h1 = hamiltonian_value(&asm, &d, &p, 0.1, &b).unwrap();
        let h2 = hamiltonian_value(&asm, &d, &p, 0.9, &b).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn genpars_momentum_is_minus_velocity() {
        // mu = Lambda = 0: P_lambda = -v^H, checked against finite differences
        let grid = Grid::new(0.0, 1.0, 5).unwrap();
        let sys = GenParsMech::pars();
        let layout = sys.layout();
        let base = BaseState::constant(grid, &vec![0.1; layout.primal_width()]);
        let asm = ActionAssembly::new(
            Model::Mech(Box::new(GenParsMech::pars())),
            DtpKind::GenParsClosed {
                l: sys.l.clone(),
                b: sys.b.clone(),
                slack: true,
            },
            HParams::new(CoefC::uniform(12.0), base).unwrap(),
            grid,
            vec![0.0; 3],
            vec![0.0; 3],
            DualState::zeros(layout),
        )
        .unwrap();
        let bpt = vec![0.1; layout.primal_width()];
        let mut rng = StdRng::seed_from_u64(13);
        let mut d = vec![0.0; layout.dual_width()];
        for v in d[..6].iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let dd: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let p = momentum_map(&asm, &d, &dd, 0.0, &bpt).unwrap();
        // against finite differences of the reduced Lagrangian
        let eps = 1e-6;
        for j in 0..6 {
            let mut dp = dd.clone();
            dp[j] += eps;
            let lp = lagrangian_value(&asm, &d, &dp, 0.0, &bpt).unwrap();
            dp[j] = dd[j] - eps;
            let lm = lagrangian_value(&asm, &d, &dp, 0.0, &bpt).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - p[j]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        // and the P_lambda block is literally -v^H
        let ext = super::ext_from(&asm, &d, &dd);
        let u = dtp_map(&asm.dtp, &asm.model, &ext, &asm.hp.c, &bpt, 0.0).unwrap();
        for i in 0..3 {
            assert!((p[3 + i] + u[3 + i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conservation_subcritical_lorenz() {
        // dissipative Lorenz with stable origin: H is constant along the
        // dual EL solution to O(h^2)
        let prm = LorenzParams {
            a: 10.0,
            r: 0.5,
            b: 8.0 / 3.0,
        };
        let run = |h: f64| {
            let grid = Grid::from_step(0.0, 1.0, h).unwrap();
            let layout = StateLayout::first_order(3);
            let base = BaseState::zeros(grid, layout);
            let asm = lorenz_asm(grid, 10.0, base, [0.2, 0.15, 0.25], prm);
            let rep = solve_dual_bvp(&asm, &SolveConfig::default()).unwrap();
            assert!(rep.converged);
            let cons = check_conservation(&asm, &rep.duals, true).unwrap();
            assert!(cons.valid);
            cons.drift
        };
        let d1 = run(1e-2);
        let d2 = run(5e-3);
        assert!(d1 < 5e-3, "drift {d1}");
        let ratio = d1 / d2;
        assert!(
            (2.5..=6.5).contains(&ratio),
            "drift refinement ratio {ratio}"
        );
    }

    #[test]
    fn conservation_refuses_time_dependence() {
        let grid = Grid::from_step(0.0, 1.0, 1e-2).unwrap();
        // non-constant base
        let base_vals = Traj::from_fn(grid, 3, |t, o| o.fill(t));
        let asm = lorenz_asm(
            grid,
            50.0,
            BaseState { values: base_vals },
            [0.0; 3],
            LorenzParams::default(),
        );
        let duals = asm.zero_duals();
        assert!(matches!(
            check_conservation(&asm, &duals, true),
            Err(Error::Unsupported(_))
        ));

        // non-autonomous model (reduced Pars velocity system)
        let sys = crate::system::ParsReducedV {
            x3_0: 0.0,
            v3_0: 1.0,
        };
        let l2 = StateLayout::first_order(2);
        let asm2 = ActionAssembly::new(
            Model::Ode(Box::new(sys)),
            DtpKind::Generic,
            HParams::new(CoefC::uniform(1.0), BaseState::zeros(grid, l2)).unwrap(),
            grid,
            vec![1.0, 0.0],
            vec![],
            DualState::zeros(l2),
        )
        .unwrap();
        let duals2 = asm2.zero_duals();
        assert!(matches!(
            check_conservation(&asm2, &duals2, true),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn conservation_flags_unconverged() {
        let grid = Grid::from_step(0.0, 1.0, 1e-2).unwrap();
        let layout = StateLayout::first_order(3);
        let base = BaseState::zeros(grid, layout);
        let asm = lorenz_asm(grid, 50.0, base, [0.1, 0.1, 0.1], LorenzParams::default());
        let duals = asm.zero_duals();
        let rep = check_conservation(&asm, &duals, false).unwrap();
        assert!(!rep.valid);
        assert!(rep.reason.is_some());
    }

    use crate::grid::Traj;
}
