//! Constraint-force prescriptions and right-hand-side evaluation for the
//! declarative specs: the competing closures (Gauss least constraint,
//! d'Alembert, the Hamiltonian-formalism force, the damped/vortical force)
//! and the power-residual W.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::system::{
    pars_a, pars_lambda_star, tol, ForceLaw, OdeSystem, ParsFull, ParsLaw, PowerLaw, PrimalState,
    SystemId, SystemSpec,
};

/// Result of a constraint-force evaluation: the force per unit mass, the
/// multiplier values used, and the instantaneous power f_c . v.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintForceResult {
    pub f_c: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub power: f64,
}

/// Evaluate the right-hand side (xdot, vdot, Qdot) of a spec's primal system.
///
/// For first-order systems `v` and `Q` are empty and `xdot` carries F(x, t).
pub fn eval_rhs(
    spec: &SystemSpec,
    state: &PrimalState,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (d, _, _, gamma) = spec.dims();
    match spec.system {
        SystemId::Lorenz | SystemId::PolyOde | SystemId::ParsReduced => {
            if state.x.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "state.x",
                    expected: d,
                    got: state.x.len(),
                });
            }
            let sys = spec.build_oracle()?;
            let mut out = vec![0.0; d];
            sys.rhs(t, &state.x, &mut out);
            Ok((out, vec![], vec![]))
        }
        SystemId::Pars | SystemId::GenPars => {
            if state.x.len() != d || state.v.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "state.(x,v)",
                    expected: d,
                    got: state.x.len(),
                });
            }
            let xdot = state.v.clone();
            let vdot = match spec.force_law {
                ForceLaw::FreeQ => {
                    if state.q.len() != gamma {
                        return Err(Error::DimensionMismatch {
                            what: "state.q",
                            expected: gamma,
                            got: state.q.len(),
                        });
                    }
                    state.q.iter().map(|q| -q).collect()
                }
                ForceLaw::Gauss | ForceLaw::Dalembert => {
                    let fc = gauss_force(spec, &state.x, &state.v, t)?;
                    fc.f_c.iter().map(|f| -f).collect::<Vec<f64>>()
                }
                ForceLaw::VorticalDamped => {
                    if spec.system != SystemId::Pars {
                        return Err(Error::Config("vortical_damped is a Pars force law".into()));
                    }
                    let nu = spec.scalar("nu").unwrap_or(0.0);
                    if nu < 0.0 {
                        return Err(Error::Config("vortical_damped needs nu >= 0".into()));
                    }
                    let sys = ParsFull {
                        law: ParsLaw::Vortical { nu },
                    };
                    let mut s6 = state.x.clone();
                    s6.extend_from_slice(&state.v);
                    let mut out = vec![0.0; 6];
                    sys.rhs(t, &s6, &mut out);
                    out[3..6].to_vec()
                }
                ForceLaw::HamiltonianLinear => {
                    if spec.system != SystemId::Pars {
                        return Err(Error::Config(
                            "hamiltonian_linear is a Pars force law".into(),
                        ));
                    }
                    if state.q.len() != 1 || state.r.len() != 1 {
                        return Err(Error::DimensionMismatch {
                            what: "state.(q,r)",
                            expected: 1,
                            got: state.q.len(),
                        });
                    }
                    let field = ParsAField;
                    let fc = cov_force(&field, state.q[0], state.r[0], &state.x, &state.v, false)?;
                    fc.iter().map(|f| -f).collect()
                }
            };
            // Qdot = R (zeros when R is not carried)
            let qdot = if state.r.len() == state.q.len() {
                state.r.clone()
            } else {
                vec![0.0; state.q.len()]
            };
            Ok((xdot, vdot, qdot))
        }
    }
}

/// Gauss least-constraint force `f_c = lambda* n` with
/// `lambda* = (n.f + w)/(n.n)`.
///
/// For the damped Pars variant the multiplier solves the constraint with the
/// full force, `lambda*(x, v; nu) = (v3 v1 + nu (v2 - x3 v1)) / (x3^2 + 1)`.
pub fn gauss_force(
    spec: &SystemSpec,
    x: &[f64],
    v: &[f64],
    _t: f64,
) -> Result<ConstraintForceResult> {
    match spec.system {
        SystemId::Pars => {
            let nu = match spec.force_law {
                ForceLaw::VorticalDamped => spec.scalar("nu").unwrap_or(0.0),
                _ => 0.0,
            };
            let a = pars_a(x);
            let nn: f64 = a.iter().map(|ai| ai * ai).sum();
            if nn <= tol::EPS_SING {
                return Err(Error::SingularConstraint {
                    nn,
                    eps: tol::EPS_SING,
                });
            }
            let ls = pars_lambda_star(x, v, nu);
            let f_c: Vec<f64> = a.iter().map(|ai| ls * ai).collect();
            let power = f_c.iter().zip(v).map(|(f, vi)| f * vi).sum();
            Ok(ConstraintForceResult {
                f_c,
                multiplier: vec![ls],
                power,
            })
        }
        SystemId::GenPars => {
            let (l, b) = spec.gen_pars_data()?;
            let xv = nalgebra::DVector::from_column_slice(x);
            let vv = nalgebra::DVector::from_column_slice(v);
            let n = b + l.clone() * xv;
            let nn = n.dot(&n);
            if nn <= tol::EPS_SING {
                return Err(Error::SingularConstraint {
                    nn,
                    eps: tol::EPS_SING,
                });
            }
            let w = vv.dot(&(l * &vv));
            let ls = w / nn;
            let f_c: Vec<f64> = n.iter().map(|ni| ls * ni).collect();
            let power = f_c.iter().zip(v).map(|(f, vi)| f * vi).sum();
            Ok(ConstraintForceResult {
                f_c,
                multiplier: vec![ls],
                power,
            })
        }
        _ => Err(Error::Unsupported(
            "gauss_force needs a constrained system".into(),
        )),
    }
}

/// A configuration-space covector field `a(q)` with its gradient, for the
/// calculus-of-variations / Hamiltonian-formalism constraint force.
pub trait AField {
    fn dim(&self) -> usize;
    fn a(&self, q: &[f64]) -> Vec<f64>;
    /// grad[(alpha, beta)] = d a_alpha / d q_beta.
    fn grad(&self, q: &[f64]) -> DMatrix<f64>;
}

/// The Pars field a(q) = (q3, -1, 0).
pub struct ParsAField;

impl AField for ParsAField {
    fn dim(&self) -> usize {
        3
    }

    fn a(&self, q: &[f64]) -> Vec<f64> {
        vec![q[2], -1.0, 0.0]
    }

    fn grad(&self, _q: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(3, 3);
        g[(0, 2)] = 1.0;
        g
    }
}

/// Constant field a(q) = a0.
pub struct ConstAField(pub Vec<f64>);

impl AField for ConstAField {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn a(&self, _q: &[f64]) -> Vec<f64> {
        self.0.clone()
    }

    fn grad(&self, _q: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.0.len(), self.0.len())
    }
}

/// Constraint force of the variational (Hamiltonian-formalism) treatment,
///
/// ```text
///   f_c_alpha = -mudot a_alpha(q) - mu (d_beta a_alpha - d_alpha a_beta) qdot_beta,
/// ```
///
/// or, with `dalembert = true`, just the d'Alembert part `-mudot a_alpha`.
pub fn cov_force(
    field: &dyn AField,
    mu: f64,
    mudot: f64,
    q: &[f64],
    qdot: &[f64],
    dalembert: bool,
) -> Result<Vec<f64>> {
    let n = field.dim();
    if q.len() != n || qdot.len() != n {
        return Err(Error::DimensionMismatch {
            what: "cov_force q/qdot",
            expected: n,
            got: q.len(),
        });
    }
    let a = field.a(q);
    let mut f: Vec<f64> = a.iter().map(|ai| -mudot * ai).collect();
    if !dalembert && mu != 0.0 {
        let g = field.grad(q);
        for alpha in 0..n {
            let mut curl = 0.0;
            for beta in 0..n {
                curl += (g[(alpha, beta)] - g[(beta, alpha)]) * qdot[beta];
            }
            f[alpha] -= mu * curl;
        }
    }
    Ok(f)
}

/// Reduced Pars accelerations (the Gauss-closed equations of motion).
pub fn pars_reduced_rhs(x: &[f64], v: &[f64]) -> ([f64; 3], [f64; 3]) {
    let den = 1.0 + x[2] * x[2];
    (
        [v[0], v[1], v[2]],
        [-v[0] * x[2] * v[2] / den, v[0] * v[2] / den, 0.0],
    )
}

/// Vortical/damped Pars accelerations; nu = 0 is the pure vortical case.
pub fn pars_vortical_rhs(x: &[f64], v: &[f64], nu: f64) -> Result<([f64; 3], [f64; 3])> {
    if nu < 0.0 {
        return Err(Error::Config("pars_vortical_rhs needs nu >= 0".into()));
    }
    let sys = ParsFull {
        law: ParsLaw::Vortical { nu },
    };
    let mut s = [0.0; 6];
    s[..3].copy_from_slice(x);
    s[3..].copy_from_slice(v);
    let mut out = [0.0; 6];
    sys.rhs(0.0, &s, &mut out);
    Ok(([v[0], v[1], v[2]], [out[3], out[4], out[5]]))
}

/// Power residual W = f_c . v - s^2/2 of the configured power law (unit
/// masses throughout).
pub fn eval_w(spec: &SystemSpec, state: &PrimalState, t: f64) -> Result<f64> {
    if spec.power_law != PowerLaw::NonnegSlack {
        return Err(Error::Unsupported("power_law = none has no W".into()));
    }
    let qv: f64 = match spec.force_law {
        ForceLaw::FreeQ => state.q.iter().zip(&state.v).map(|(q, v)| q * v).sum(),
        ForceLaw::Gauss | ForceLaw::Dalembert => gauss_force(spec, &state.x, &state.v, t)?.power,
        ForceLaw::VorticalDamped => {
            let nu = spec.scalar("nu").unwrap_or(0.0);
            let ls = pars_lambda_star(&state.x, &state.v, nu);
            let a = pars_a(&state.x);
            let v = &state.v;
            let nxv = [-v[2], -state.x[2] * v[2], state.x[2] * v[1] + v[0]];
            (0..3)
                .map(|i| (ls * a[i] + nxv[i] + nu * v[i]) * v[i])
                .sum()
        }
        ForceLaw::HamiltonianLinear => {
            let field = ParsAField;
            let fc = cov_force(
                &field,
                state.q.first().copied().unwrap_or(0.0),
                state.r.first().copied().unwrap_or(0.0),
                &state.x,
                &state.v,
                false,
            )?;
            fc.iter().zip(&state.v).map(|(f, v)| f * v).sum()
        }
    };
    Ok(qv - 0.5 * state.s * state.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ForceLaw;

    #[test]
    fn lorenz_rhs_via_spec() {
        let spec = SystemSpec::lorenz(Default::default(), [1.0, 1.0, 1.0]);
        let st = PrimalState::first_order(vec![1.0, 1.0, 1.0]);
        let (xd, _, _) = eval_rhs(&spec, &st, 0.0).unwrap();
        assert_eq!(xd[0], 0.0);
        assert_eq!(xd[1], 26.0);
        assert!((xd[2] + 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn pars_rest_state_is_stationary() {
        let spec = SystemSpec::pars(ForceLaw::Gauss, 0.0, [0.0; 3], [0.0; 3]);
        let st = PrimalState::mechanical(vec![0.0; 3], vec![0.0; 3], vec![], 0.0);
        let (xd, vd, _) = eval_rhs(&spec, &st, 0.0).unwrap();
        assert!(xd.iter().chain(&vd).all(|v| *v == 0.0));
    }

    #[test]
    fn gen_pars_free_q_is_minus_q() {
        let spec = SystemSpec::gen_pars(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
        );
        let st = PrimalState::mechanical(vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 2.0], 0.0);
        let (_, vd, qd) = eval_rhs(&spec, &st, 0.0).unwrap();
        assert_eq!(vd, vec![-1.0, -2.0]);
        assert_eq!(qd, vec![0.0, 0.0]);
    }

    #[test]
    fn gauss_force_pars_values() {
        let spec = SystemSpec::pars(ForceLaw::Gauss, 0.0, [0.0; 3], [0.0; 3]);
        // x3 = 0, v = (1, 0, 2): lambda* = 2, f_c = 2 (0, -1, 0)
        let r = gauss_force(&spec, &[0.0, 0.0, 0.0], &[1.0, 0.0, 2.0], 0.0).unwrap();
        assert!((r.multiplier[0] - 2.0).abs() < 1e-15);
        assert_eq!(r.f_c, vec![0.0, -2.0, 0.0]);
        assert!(r.power.abs() < 1e-15);

        // v1 = 0 kills the numerator
        let r0 = gauss_force(&spec, &[0.0, 0.0, 1.0], &[0.0, 0.0, 3.0], 0.0).unwrap();
        assert_eq!(r0.multiplier[0], 0.0);
        assert!(r0.f_c.iter().all(|f| *f == 0.0));
    }

    #[test]
    fn gauss_damped_multiplier() {
        // lambda*(x, v; nu) = (v3 v1 + nu (v2 - x3 v1)) / (x3^2 + 1)
        let spec = SystemSpec::pars(ForceLaw::VorticalDamped, 2.0, [0.0; 3], [0.0; 3]);
        let r = gauss_force(&spec, &[0.0, 0.0, 1.0], &[1.0, 1.0, 1.0], 0.0).unwrap();
        assert!((r.multiplier[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gauss_force_gen_pars_matches_pars() {
        let spec3 = SystemSpec::gen_pars(
            vec![
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
            vec![0.0, -1.0, 0.0],
            vec![0.2, 0.0, 0.5],
            vec![1.0, 0.1, 2.0],
        );
        let pars = SystemSpec::pars(ForceLaw::Gauss, 0.0, [0.0; 3], [0.0; 3]);
        let x = [0.2, 0.0, 0.5];
        let v = [1.0, 0.1, 2.0];
        let a = gauss_force(&spec3, &x, &v, 0.0).unwrap();
        let b = gauss_force(&pars, &x, &v, 0.0).unwrap();
        for i in 0..3 {
            assert!((a.f_c[i] - b.f_c[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn gauss_force_singular_constraint() {
        // b + Lx = 0 makes n.n vanish
        let spec = SystemSpec::gen_pars(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        );
        assert!(matches!(
            gauss_force(&spec, &[0.0, 0.0], &[1.0, 1.0], 0.0),
            Err(Error::SingularConstraint { .. })
        ));
    }

    #[test]
    fn cov_force_constant_field() {
        let field = ConstAField(vec![1.0, 2.0, 0.0]);
        let full = cov_force(&field, 5.0, 0.5, &[0.0; 3], &[1.0, 1.0, 1.0], false).unwrap();
        let dal = cov_force(&field, 5.0, 0.5, &[0.0; 3], &[1.0, 1.0, 1.0], true).unwrap();
        assert_eq!(full, dal);
        assert_eq!(full, vec![-0.5, -1.0, 0.0]);
    }

    #[test]
    fn cov_force_pars_curl_term() {
        // a = (x3, -1, 0), mu = 1, mudot = 0, qdot = e1: the antisymmetric
        // gradient pushes along e3.
        let field = ParsAField;
        let f = cov_force(&field, 1.0, 0.0, &[0.0, 0.0, 0.7], &[1.0, 0.0, 0.0], false).unwrap();
        assert_eq!(f, vec![0.0, 0.0, 1.0]);

        // cross-check the curl term by finite differences of the a-field
        let q = [0.3, -0.2, 0.9];
        let qd = [0.4, 1.0, -0.3];
        let eps = 1e-6;
        let mut curl_fd = [0.0; 3];
        for alpha in 0..3 {
            for beta in 0..3 {
                let mut qp = q;
                qp[beta] += eps;
                let mut qm = q;
                qm[beta] -= eps;
                let da_dbeta = (field.a(&qp)[alpha] - field.a(&qm)[alpha]) / (2.0 * eps);
                let mut qp2 = q;
                qp2[alpha] += eps;
                let mut qm2 = q;
                qm2[alpha] -= eps;
                let db_dalpha = (field.a(&qp2)[beta] - field.a(&qm2)[beta]) / (2.0 * eps);
                curl_fd[alpha] += (da_dbeta - db_dalpha) * qd[beta];
            }
        }
        let f2 = cov_force(&field, 1.0, 0.0, &q, &qd, false).unwrap();
        for alpha in 0..3 {
            assert!((f2[alpha] + curl_fd[alpha]).abs() < 1e-8);
        }

        // mu = mudot = 0 gives no force
        let z = cov_force(&field, 0.0, 0.0, &q, &qd, false).unwrap();
        assert!(z.iter().all(|f| *f == 0.0));
    }

    #[test]
    fn reduced_rhs_values() {
        // x3 = 0: no drag on v1, v2 follows v1 v3
        let (_, a) = pars_reduced_rhs(&[0.0, 0.0, 0.0], &[2.0, 0.0, 3.0]);
        assert_eq!(a, [0.0, 6.0, 0.0]);
        // zero v1 freezes everything
        let (_, a0) = pars_reduced_rhs(&[1.0, 0.0, 2.0], &[0.0, 0.0, 3.0]);
        assert_eq!(a0, [0.0, 0.0, 0.0]);
        // x3 = 1, v = (2, ., 3)
        let (_, a1) = pars_reduced_rhs(&[0.0, 0.0, 1.0], &[2.0, 0.0, 3.0]);
        assert!((a1[0] + 3.0).abs() < 1e-15);
        assert!((a1[1] - 3.0).abs() < 1e-15);
        assert_eq!(a1[2], 0.0);
    }

    #[test]
    fn vortical_rhs_values() {
        // nu = 0, x3 = 0, v = (1, 0, 2): xddot = (2, 2, -1) by direct
        // substitution (constraint preservation forces the middle value).
        let (_, a) = pars_vortical_rhs(&[0.0, 0.0, 0.0], &[1.0, 0.0, 2.0], 0.0).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-15);
        assert!((a[1] - 2.0).abs() < 1e-15);
        assert!((a[2] + 1.0).abs() < 1e-15);

        // v = 0 is stationary for all nu
        let (_, a0) = pars_vortical_rhs(&[0.3, 0.1, 0.9], &[0.0; 3], 1.7).unwrap();
        assert_eq!(a0, [0.0, 0.0, 0.0]);

        assert!(pars_vortical_rhs(&[0.0; 3], &[0.0; 3], -1.0).is_err());
    }

    #[test]
    fn eval_w_values() {
        let mut spec = SystemSpec::gen_pars(
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
            vec![1.0, 0.0, 0.0],
            vec![0.0; 3],
            vec![0.0, 1.0, 0.0],
        );
        // Q.v = 0, s = 0
        let st0 = PrimalState::mechanical(vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], 0.0);
        assert_eq!(eval_w(&spec, &st0, 0.0).unwrap(), 0.0);
        // Q = (1,0,0), v = (3,0,0), s = 2: 3 - 2 = 1
        let st =
            PrimalState::mechanical(vec![0.0; 3], vec![3.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], 2.0);
        assert!((eval_w(&spec, &st, 0.0).unwrap() - 1.0).abs() < 1e-15);

        spec.power_law = PowerLaw::None;
        assert!(matches!(
            eval_w(&spec, &st, 0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gauss_closure_satisfies_rate_constraint() {
        // n . vdot + w = 0 holds identically for the Gauss closure, and to
        // integrator accuracy along oracle trajectories
        let spec = SystemSpec::pars(ForceLaw::Gauss, 0.0, [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]);
        let traj = crate::oracle::integrate_ivp(&spec, 1.0, 1e-3).unwrap();
        for k in (0..traj.grid.n).step_by(100) {
            let node = traj.node(k);
            let (x, v) = node.split_at(3);
            let st = PrimalState::mechanical(x.to_vec(), v.to_vec(), vec![], 0.0);
            let (_, vdot, _) = eval_rhs(&spec, &st, traj.grid.node(k)).unwrap();
            let n = pars_a(x);
            let w = v[2] * v[0];
            let res: f64 = n.iter().zip(&vdot).map(|(ni, ai)| ni * ai).sum::<f64>() + w;
            assert!(res.abs() <= 1e-9, "node {k}: n.vdot + w = {res:.3e}");
        }
    }

    #[test]
    fn damped_pars_slack_closes_w() {
        // with the constraint holding, s^2 = 2 nu v.v satisfies W = 0
        let nu = 1.3;
        let spec = SystemSpec::pars(ForceLaw::VorticalDamped, nu, [0.0; 3], [0.0; 3]);
        let x = [0.4, 0.0, 0.8];
        let v = [1.0, 0.8, -0.5]; // x3 v1 - v2 = 0
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let st = PrimalState::mechanical(x.to_vec(), v.to_vec(), vec![], (2.0 * nu * vv).sqrt());
        let w = eval_w(&spec, &st, 0.0).unwrap();
        assert!(w.abs() < 1e-12, "W = {w}");
    }
}
