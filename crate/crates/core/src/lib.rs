//! Dual variational principles for dissipative, constrained Newtonian/ODE
//! dynamics.
//!
//! The crate builds, for a configured primal system, the dual-to-primal
//! change of variables `U^(H)(D, t)` defined by stationarity of the dual
//! Lagrangian in the primal variables, assembles the discretized dual action
//! and its exact gradient, extremizes it as a boundary-value problem, and
//! recovers primal trajectories from the critical dual fields. A Legendre
//! transform lifts the dual Lagrangian to a Hamiltonian whose conservation
//! along dissipative primal flows can be checked numerically. Competing
//! constraint-force prescriptions (Gauss least constraint, d'Alembert,
//! vortical/damped forces) and the constraint-elimination reduction are
//! implemented so their trajectories can be compared quantitatively.

pub mod action;
pub mod dtp;
pub mod error;
pub mod forces;
pub mod grid;
pub mod hamiltonian;
pub mod linalg;
pub mod oracle;
pub mod periodic;
pub mod reduction;
pub mod solver;
pub mod system;

pub use error::{Error, Result};
pub use grid::{Grid, Traj};
pub use system::{
    ForceLaw, LorenzParams, Model, PowerLaw, PrimalState, StateLayout, SystemId, SystemSpec,
};
