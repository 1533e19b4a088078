//! Run configuration: one JSON document per run, echoed verbatim into the
//! manifest so every run is re-runnable from its own output.

use serde::{Deserialize, Serialize};

use dualmech::action::{base_for_mech_from_oracle, base_from_ode, ActionAssembly};
use dualmech::dtp::{BaseState, CoefC, DualState, HParams};
use dualmech::grid::{Grid, Traj};
use dualmech::solver::{InitialGuess, SolveConfig};
use dualmech::system::{Model, SystemSpec};
use dualmech::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub system: SystemSpec,
    #[serde(default)]
    pub run: RunParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// uniform H coefficient; per-block overrides below
    #[serde(default = "default_c")]
    pub c: f64,
    pub c_x: Option<f64>,
    pub c_v: Option<f64>,
    pub c_q: Option<f64>,
    pub c_s: Option<f64>,
    #[serde(default)]
    pub base: BaseSpec,
    /// terminal Dirichlet value applied to every derived dual component
    #[serde(default)]
    pub terminal_bc: f64,
    #[serde(default)]
    pub solve: SolveParams,
    pub periodic: Option<PeriodicParams>,
    pub compare: Option<CompareParams>,
}

fn default_t_end() -> f64 {
    1.0
}

fn default_h() -> f64 {
    1e-3
}

fn default_c() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseSpec {
    /// base = forward oracle of the configured system (its determinate
    /// force law for mechanical models)
    #[default]
    Oracle,
    Zero,
    Constant {
        values: Vec<f64>,
    },
    /// oracle plus a smooth perturbation of the given amplitude
    PerturbedOracle {
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveParams {
    #[serde(default = "default_tol")]
    pub tol_newton: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_ridge")]
    pub regularization: f64,
    #[serde(default)]
    pub initial_guess: GuessSpec,
    #[serde(default)]
    pub two_slab: bool,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    50
}

fn default_ridge() -> f64 {
    1e-10
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            tol_newton: default_tol(),
            max_iter: default_max_iter(),
            regularization: default_ridge(),
            initial_guess: GuessSpec::ZeroDual,
            two_slab: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GuessSpec {
    #[default]
    ZeroDual,
    /// constant dual values across all nodes
    Constant(Vec<f64>),
    /// backward-integrated stationarity seed (first-order models)
    Adjoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicParams {
    pub n_nodes: usize,
    pub p_guess: f64,
    /// extra period-scale guesses swept as independent solves
    #[serde(default)]
    pub p_guess_sweep: Vec<f64>,
    #[serde(default)]
    pub base: PeriodicBaseSpec,
    #[serde(default = "default_tol")]
    pub tol_newton: f64,
    #[serde(default = "default_periodic_iter")]
    pub max_iter: usize,
}

fn default_periodic_iter() -> usize {
    60
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PeriodicBaseSpec {
    /// closed loop extracted from a near-recurrence of a long oracle run
    #[default]
    Recurrence,
    /// explicit nodal values
    Explicit { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CompareParams {
    /// two constraint-force laws from the same initial data
    Laws { other: SystemSpec },
    /// two dual solves differing in base perturbation and terminal data
    Gauge {
        amplitude: f64,
        #[serde(default)]
        other_phase: f64,
        #[serde(default)]
        other_terminal_bc: f64,
    },
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.system.validate()?;
        if !(cfg.run.h > 0.0) || !(cfg.run.t_end > 0.0) {
            return Err(Error::Config("t_end and h must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn coef_c(&self) -> CoefC {
        CoefC {
            c_x: self.run.c_x.unwrap_or(self.run.c),
            c_v: self.run.c_v.unwrap_or(self.run.c),
            c_q: self.run.c_q.unwrap_or(self.run.c),
            c_s: self.run.c_s.unwrap_or(self.run.c),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::from_step(0.0, self.run.t_end, self.run.h)
    }

    pub fn solve_config(&self, asm: &ActionAssembly) -> Result<SolveConfig> {
        let initial_guess = match &self.run.solve.initial_guess {
            GuessSpec::ZeroDual => InitialGuess::ZeroDual,
            GuessSpec::Constant(values) => {
                let w = asm.layout().dual_width();
                if values.len() != w {
                    return Err(Error::Config(format!(
                        "initial_guess constant needs {w} dual components"
                    )));
                }
                let mut t = Traj::zeros(asm.grid, w);
                for k in 0..asm.grid.n {
                    t.node_mut(k).copy_from_slice(values);
                }
                InitialGuess::Supplied(t)
            }
            GuessSpec::Adjoint => InitialGuess::Supplied(dualmech::solver::adjoint_seed(asm)?),
        };
        Ok(SolveConfig {
            tol_newton: self.run.solve.tol_newton,
            max_iter: self.run.solve.max_iter,
            regularization: self.run.solve.regularization,
            initial_guess,
        })
    }

    /// Build the base state for the dual pipeline on the given grid,
    /// honoring the configured perturbation.
    pub fn build_base(&self, spec: &SystemSpec, model: &Model, grid: Grid) -> Result<BaseState> {
        let layout = model.layout();
        let mut base = match (&self.run.base, model) {
            (BaseSpec::Zero, _) => BaseState::zeros(grid, layout),
            (BaseSpec::Constant { values }, _) => {
                if values.len() != layout.primal_width() {
                    return Err(Error::Config(format!(
                        "constant base needs {} components",
                        layout.primal_width()
                    )));
                }
                BaseState::constant(grid, values)
            }
            (BaseSpec::Oracle | BaseSpec::PerturbedOracle { .. }, Model::Ode(sys)) => {
                base_from_ode(sys.as_ref(), &spec.initial.x0, grid)?
            }
            (BaseSpec::Oracle | BaseSpec::PerturbedOracle { .. }, Model::Mech(_)) => {
                // a free-Q mechanical dualization takes its base from the
                // determinate oracle counterpart (Gauss closure by default)
                let mut oracle_spec = spec.clone();
                if oracle_spec.force_law == dualmech::ForceLaw::FreeQ {
                    oracle_spec.force_law = dualmech::ForceLaw::Gauss;
                }
                base_for_mech_from_oracle(&oracle_spec, grid)?
            }
        };
        if let BaseSpec::PerturbedOracle { amplitude, phase } = self.run.base {
            for k in 0..grid.n {
                let t = grid.node(k);
                for (i, v) in base.values.node_mut(k).iter_mut().enumerate() {
                    *v += amplitude * ((i as f64 + 1.0) * t + phase).sin();
                }
            }
        }
        Ok(base)
    }

    /// Assemble the dual problem for this config.
    pub fn build_assembly(&self, spec: &SystemSpec, terminal_bc: f64) -> Result<ActionAssembly> {
        let grid = self.grid()?;
        let model = spec.build_dual_model()?;
        let base = self.build_base(spec, &model, grid)?;
        let hp = HParams::new(self.coef_c(), base)?;
        let layout = model.layout();
        let mut bc = DualState::zeros(layout);
        for v in bc.rho.iter_mut().chain(bc.lam.iter_mut()) {
            *v = terminal_bc;
        }
        drop(model);
        ActionAssembly::for_spec(spec, hp, grid, Some(bc))
    }
}
