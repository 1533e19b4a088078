//! Uniform time meshes, nodal trajectories, difference and quadrature rules.
//!
//! The difference operator and the trapezoid weights form an exact
//! summation-by-parts pair,
//!
//! ```text
//!   W D + Dᵀ W = diag(-1, 0, ..., 0, +1),
//! ```
//!
//! (central differences in the interior, one-sided closures at the two
//! boundary rows). This identity is what makes the discrete gradient of the
//! dual action equal the discretized Euler-Lagrange system plus the
//! initial-condition terms, with no spurious O(1) boundary residue.

use crate::error::{Error, Result};

/// Uniform mesh on `[t0, t1]` with `n >= 3` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub t1: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 nodes, got {n}"
            )));
        }
        if !(t1 > t0) {
            return Err(Error::Config(format!(
                "grid needs t1 > t0, got [{t0}, {t1}]"
            )));
        }
        Ok(Grid { t0, t1, n })
    }

    /// Build a grid from a step request; `h` is adjusted (downwards) so the
    /// interval divides evenly.
    pub fn from_step(t0: f64, t1: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {h}")));
        }
        let steps = ((t1 - t0) / h).ceil().max(2.0) as usize;
        Grid::new(t0, t1, steps + 1)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.t0 + self.h() * k as f64
    }

    /// Trapezoid quadrature weight of node `k`.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        let h = self.h();
        if k == 0 || k == self.n - 1 {
            0.5 * h
        } else {
            h
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }
}

/// Nodal values of a vector-valued function of time, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Traj {
    pub grid: Grid,
    pub width: usize,
    data: Vec<f64>,
}

impl Traj {
    pub fn zeros(grid: Grid, width: usize) -> Self {
        Traj {
            grid,
            width,
            data: vec![0.0; grid.n * width],
        }
    }

    pub fn from_fn(grid: Grid, width: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut t = Traj::zeros(grid, width);
        for k in 0..grid.n {
            let time = grid.node(k);
            f(time, t.node_mut(k));
        }
        t
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs_diff(&self, other: &Traj) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Cubic Hermite sample at time `t` from nodal values and nodal
    /// derivatives (`derivs` must live on the same grid).
    pub fn sample_hermite(&self, derivs: &Traj, t: f64) -> Result<Vec<f64>> {
        let g = self.grid;
        if t < g.t0 - 1e-12 || t > g.t1 + 1e-12 {
            return Err(Error::Precondition(format!(
                "interpolation query t = {t} outside [{}, {}]",
                g.t0, g.t1
            )));
        }
        let h = g.h();
        let mut k = ((t - g.t0) / h).floor() as usize;
        if k >= g.n - 1 {
            k = g.n - 2;
        }
        let s = ((t - g.node(k)) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (self.node(k), self.node(k + 1));
        let (d0, d1) = (derivs.node(k), derivs.node(k + 1));
        Ok((0..self.width)
            .map(|j| h00 * y0[j] + h10 * h * d0[j] + h01 * y1[j] + h11 * h * d1[j])
            .collect())
    }
}

/// First-derivative stencil: list of `(node, coefficient)` pairs.
pub type Stencil = [(usize, f64); 2];

/// Nodal differentiation operator paired with the trapezoid rule.
#[derive(Debug, Clone, Copy)]
pub struct DiffOp {
    pub n: usize,
    pub h: f64,
    pub periodic: bool,
}

impl DiffOp {
    pub fn for_grid(grid: &Grid) -> Self {
        DiffOp {
            n: grid.n,
            h: grid.h(),
            periodic: false,
        }
    }

    /// Periodic variant on a circle where node `n-1` is distinct from node 0
    /// but wraps; used by the periodic-orbit machinery with `n-1` free nodes.
    pub fn periodic(n: usize, h: f64) -> Self {
        DiffOp {
            n,
            h,
            periodic: true,
        }
    }

    /// Stencil of row `k` (the nodes and weights whose combination is the
    /// derivative at node `k`).
    pub fn row(&self, k: usize) -> Stencil {
        let h = self.h;
        if self.periodic {
            let prev = (k + self.n - 1) % self.n;
            let next = (k + 1) % self.n;
            [(prev, -0.5 / h), (next, 0.5 / h)]
        } else if k == 0 {
            [(0, -1.0 / h), (1, 1.0 / h)]
        } else if k == self.n - 1 {
            [(self.n - 2, -1.0 / h), (self.n - 1, 1.0 / h)]
        } else {
            [(k - 1, -0.5 / h), (k + 1, 0.5 / h)]
        }
    }

    /// Differentiate every component of a trajectory.
    pub fn apply(&self, t: &Traj) -> Traj {
        assert_eq!(t.grid.n, self.n);
        let mut out = Traj::zeros(t.grid, t.width);
        for k in 0..self.n {
            for (src, c) in self.row(k) {
                let (y, width) = (t.node(src), t.width);
                let o = out.node_mut(k);
                for j in 0..width {
                    o[j] += c * y[j];
                }
            }
        }
        out
    }

    /// Derivative of one node's values.
    pub fn derivative_at(&self, t: &Traj, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; t.width];
        for (src, c) in self.row(k) {
            for (o, y) in out.iter_mut().zip(t.node(src)) {
                *o += c * y;
            }
        }
        out
    }
}

/// Nodal rates that annihilate the (-1)^k parasitic mode admitted by
/// central-difference discretizations. Central stencils kill it
/// automatically; the boundary closures are the unique five-point
/// third-order one-sided stencils (-17/12, 4/3, 1, -4/3, 5/12)/h with a
/// zero alternating sum, so the closure error stays below the interior
/// O(h^2). Used for post-processing only (n >= 5).
pub fn parasite_free_rates(t: &Traj) -> Traj {
    let n = t.grid.n;
    assert!(n >= 5, "parasite-free rates need at least 5 nodes");
    let h = t.grid.h();
    const C: [f64; 5] = [-17.0 / 12.0, 4.0 / 3.0, 1.0, -4.0 / 3.0, 5.0 / 12.0];
    let mut out = Traj::zeros(t.grid, t.width);
    for j in 0..t.width {
        for k in 0..n {
            let v = if k == 0 {
                (0..5).map(|i| C[i] * t.node(i)[j]).sum::<f64>() / h
            } else if k == n - 1 {
                -(0..5).map(|i| C[i] * t.node(n - 1 - i)[j]).sum::<f64>() / h
            } else {
                (t.node(k + 1)[j] - t.node(k - 1)[j]) / (2.0 * h)
            };
            out.node_mut(k)[j] = v;
        }
    }
    out
}

/// Second-order one-sided/central stencils used only for post-processing;
/// not part of the summation-by-parts pair.
pub fn second_order_rates(t: &Traj) -> Traj {
    let n = t.grid.n;
    let h = t.grid.h();
    let mut out = Traj::zeros(t.grid, t.width);
    for j in 0..t.width {
        for k in 0..n {
            let v = if k == 0 {
                (-3.0 * t.node(0)[j] + 4.0 * t.node(1)[j] - t.node(2)[j]) / (2.0 * h)
            } else if k == n - 1 {
                (3.0 * t.node(n - 1)[j] - 4.0 * t.node(n - 2)[j] + t.node(n - 3)[j]) / (2.0 * h)
            } else {
                (t.node(k + 1)[j] - t.node(k - 1)[j]) / (2.0 * h)
            };
            out.node_mut(k)[j] = v;
        }
    }
    out
}
