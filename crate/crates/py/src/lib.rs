//! Python bindings: system specs, oracle integration, dual solves with
//! primal recovery, constraint-force evaluation, constraint elimination,
//! Hamiltonian conservation scans, and the periodic-orbit search.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dualmech::action::ActionAssembly;
use dualmech::dtp::{BaseState, CoefC, DualState, HParams};
use dualmech::grid::{Grid, Traj};
use dualmech::hamiltonian::check_conservation;
use dualmech::oracle::{integrate_ivp, monitor_invariants};
use dualmech::periodic::{
    find_periodic_orbit, seed_from_recurrence, PeriodicConfig, PeriodicProblem,
};
use dualmech::reduction::{integrate_reduced, LinearConstraint};
use dualmech::solver::{solve_dual_bvp, SolveConfig};
use dualmech::system::{GenParsMech, Model, SystemSpec as CoreSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Declarative system description (JSON-compatible with the CLI configs).
#[pyclass(from_py_object)]
#[derive(Clone)]
struct SystemSpec {
    inner: CoreSpec,
}

#[pymethods]
impl SystemSpec {
    /// Parse `{system, params, force_law, power_law, initial}` JSON.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner
            .validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(SystemSpec { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (a=10.0, r=28.0, b=8.0/3.0, x0=vec![1.0, 1.0, 1.0]))]
    fn lorenz(a: f64, r: f64, b: f64, x0: Vec<f64>) -> PyResult<Self> {
        if x0.len() != 3 {
            return Err(PyValueError::new_err("lorenz needs a 3-component x0"));
        }
        Ok(SystemSpec {
            inner: CoreSpec::lorenz(dualmech::LorenzParams { a, r, b }, [x0[0], x0[1], x0[2]]),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (force_law="gauss", nu=0.0, x0=vec![0.0, 0.0, 1.0], v0=vec![1.0, 1.0, 1.0]))]
    fn pars(force_law: &str, nu: f64, x0: Vec<f64>, v0: Vec<f64>) -> PyResult<Self> {
        let law = match force_law {
            "free_q" => dualmech::ForceLaw::FreeQ,
            "gauss" => dualmech::ForceLaw::Gauss,
            "dalembert" => dualmech::ForceLaw::Dalembert,
            "vortical_damped" => dualmech::ForceLaw::VorticalDamped,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown force law '{other}'"
                )))
            }
        };
        if x0.len() != 3 || v0.len() != 3 {
            return Err(PyValueError::new_err("pars needs 3-component x0 and v0"));
        }
        let spec = CoreSpec::pars(law, nu, [x0[0], x0[1], x0[2]], [v0[0], v0[1], v0[2]]);
        spec.validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(SystemSpec { inner: spec })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("SystemSpec({:?})", self.inner.system)
    }
}

fn traj_to_lists(traj: &Traj) -> (Vec<f64>, Vec<Vec<f64>>) {
    let times = traj.grid.times();
    let states = (0..traj.grid.n).map(|k| traj.node(k).to_vec()).collect();
    (times, states)
}

/// Fixed-step RK4 trajectory: returns (times, states).
#[pyfunction]
fn integrate(spec: &SystemSpec, t_end: f64, h: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let traj = integrate_ivp(&spec.inner, t_end, h).map_err(err)?;
    Ok(traj_to_lists(&traj))
}

/// Invariant monitors along an oracle run.
#[pyfunction]
fn monitor<'py>(
    py: Python<'py>,
    spec: &SystemSpec,
    t_end: f64,
    h: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let traj = integrate_ivp(&spec.inner, t_end, h).map_err(err)?;
    let rep = monitor_invariants(&spec.inner, &traj).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("max_constraint_residual", rep.max_constraint_residual)?;
    d.set_item("max_energy_increment", rep.max_energy_increment)?;
    d.set_item("max_energy_drift", rep.max_energy_drift)?;
    d.set_item("max_constraint_power", rep.max_constraint_power)?;
    d.set_item("max_power_residual", rep.max_power_residual)?;
    Ok(d)
}

/// Gauss least-constraint force at a state: (f_c, multiplier, power).
#[pyfunction]
fn gauss_force(spec: &SystemSpec, x: Vec<f64>, v: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let r = dualmech::forces::gauss_force(&spec.inner, &x, &v, 0.0).map_err(err)?;
    Ok((r.f_c, r.multiplier, r.power))
}

fn build_assembly(
    spec: &CoreSpec,
    t_end: f64,
    h: f64,
    c: f64,
    perturb: f64,
    terminal_bc: f64,
) -> PyResult<ActionAssembly> {
    let grid = Grid::from_step(0.0, t_end, h).map_err(err)?;
    let model = spec.build_dual_model().map_err(err)?;
    let layout = model.layout();
    let mut base = match &model {
        Model::Ode(sys) => {
            dualmech::action::base_from_ode(sys.as_ref(), &spec.initial.x0, grid).map_err(err)?
        }
        Model::Mech(_) => {
            let mut oracle_spec = spec.clone();
            if oracle_spec.force_law == dualmech::ForceLaw::FreeQ {
                oracle_spec.force_law = dualmech::ForceLaw::Gauss;
            }
            dualmech::action::base_for_mech_from_oracle(&oracle_spec, grid).map_err(err)?
        }
    };
    if perturb != 0.0 {
        for k in 0..grid.n {
            let t = grid.node(k);
            for (i, vv) in base.values.node_mut(k).iter_mut().enumerate() {
                *vv += perturb * ((i as f64 + 1.0) * t).sin();
            }
        }
    }
    let hp = HParams::new(CoefC::uniform(c), base).map_err(err)?;
    let mut bc = DualState::zeros(layout);
    for v in bc.rho.iter_mut().chain(bc.lam.iter_mut()) {
        *v = terminal_bc;
    }
    ActionAssembly::for_spec(spec, hp, grid, Some(bc)).map_err(err)
}

/// Dual-action extremization with primal recovery. The base state is the
/// oracle trajectory (optionally perturbed); returns a dict with the solve
/// report, recovered primal and dual fields.
#[pyfunction]
#[pyo3(signature = (spec, t_end=1.0, h=1e-3, c=100.0, perturb=0.0, terminal_bc=0.0))]
fn dual_solve<'py>(
    py: Python<'py>,
    spec: &SystemSpec,
    t_end: f64,
    h: f64,
    c: f64,
    perturb: f64,
    terminal_bc: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let asm = build_assembly(&spec.inner, t_end, h, c, perturb, terminal_bc)?;
    let rep = solve_dual_bvp(&asm, &SolveConfig::default()).map_err(err)?;
    let primal = asm.recover_primal(&rep.duals).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("converged", rep.converged)?;
    d.set_item("residual_norm", rep.residual_norm)?;
    d.set_item("iterations", rep.iterations)?;
    let (times, states) = traj_to_lists(&primal);
    d.set_item("times", times)?;
    d.set_item("primal", states)?;
    let (_, duals) = traj_to_lists(&rep.duals);
    d.set_item("duals", duals)?;
    Ok(d)
}

/// Constraint elimination for the Pars family: reduced integration with
/// minimal constraint-force recovery.
#[pyfunction]
#[pyo3(signature = (spec, t_end=1.0, h=1e-3))]
fn reduce<'py>(
    py: Python<'py>,
    spec: &SystemSpec,
    t_end: f64,
    h: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let (l, b) = match spec.inner.system {
        dualmech::SystemId::Pars => {
            let gp = GenParsMech::pars();
            (gp.l, gp.b)
        }
        dualmech::SystemId::GenPars => spec.inner.gen_pars_data().map_err(err)?,
        _ => return Err(PyValueError::new_err("reduce needs pars or gen_pars")),
    };
    let sys = LinearConstraint { l, b };
    let run = integrate_reduced(
        &sys,
        &spec.inner.initial.x0,
        &spec.inner.initial.v0,
        t_end,
        h,
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    let (times, states) = traj_to_lists(&run.traj);
    d.set_item("times", times)?;
    d.set_item("trajectory", states)?;
    let (_, forces) = traj_to_lists(&run.forces);
    d.set_item("forces", forces)?;
    d.set_item("max_constraint_residual", run.max_constraint_residual)?;
    d.set_item(
        "splits",
        run.splits
            .iter()
            .map(|s| (s.t, s.indices_s.clone()))
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Conservation scan of the dual Hamiltonian along a dual solve with a
/// constant-zero base.
#[pyfunction]
#[pyo3(signature = (spec, t_end=1.0, h=1e-3, c=10.0))]
fn hamiltonian_scan<'py>(
    py: Python<'py>,
    spec: &SystemSpec,
    t_end: f64,
    h: f64,
    c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = Grid::from_step(0.0, t_end, h).map_err(err)?;
    let model = spec.inner.build_dual_model().map_err(err)?;
    let layout = model.layout();
    let base = BaseState::zeros(grid, layout);
    let hp = HParams::new(CoefC::uniform(c), base).map_err(err)?;
    let asm = ActionAssembly::for_spec(&spec.inner, hp, grid, None).map_err(err)?;
    let rep = solve_dual_bvp(&asm, &SolveConfig::default()).map_err(err)?;
    let cons = check_conservation(&asm, &rep.duals, rep.converged).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("converged", rep.converged)?;
    d.set_item("valid", cons.valid)?;
    d.set_item("drift", cons.drift)?;
    d.set_item("h_series", cons.h_series)?;
    Ok(d)
}

/// Periodic-orbit search seeded from a near-recurrence of a long oracle run.
#[pyfunction]
#[pyo3(signature = (spec, n_nodes=200, t_scan=13.0, h=2e-3, c=1.0))]
fn find_periodic<'py>(
    py: Python<'py>,
    spec: &SystemSpec,
    n_nodes: usize,
    t_scan: f64,
    h: f64,
    c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let ode = spec.inner.build_oracle().map_err(err)?;
    let (base, p_guess) = seed_from_recurrence(
        ode.as_ref(),
        &spec.inner.oracle_initial(),
        t_scan,
        h,
        t_scan / 20.0,
        n_nodes,
    )
    .map_err(err)?;
    let ode = spec.inner.build_oracle().map_err(err)?;
    let pp = PeriodicProblem {
        ode,
        n_nodes,
        c_x: c,
        base,
        p_guess,
    };
    let res = find_periodic_orbit(&pp, &PeriodicConfig::default()).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("converged", res.converged)?;
    d.set_item("collapsed", res.collapsed)?;
    d.set_item("period_scale", res.p)?;
    d.set_item("period", 2.0 * std::f64::consts::PI * res.p)?;
    d.set_item("residual_norm", res.residual_norm)?;
    d.set_item("ode_residual", res.ode_residual)?;
    d.set_item("orbit", res.orbit)?;
    Ok(d)
}

#[pymodule]
fn dualmech_py(m: &Bound<PyModule>) -> PyResult<()> {
    m.add_class::<SystemSpec>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(monitor, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_force, m)?)?;
    m.add_function(wrap_pyfunction!(dual_solve, m)?)?;
    m.add_function(wrap_pyfunction!(reduce, m)?)?;
    m.add_function(wrap_pyfunction!(hamiltonian_scan, m)?)?;
    m.add_function(wrap_pyfunction!(find_periodic, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
