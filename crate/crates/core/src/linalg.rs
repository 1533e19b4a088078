//! Banded LU with partial pivoting, plus a bordered-system solver.
//!
//! The dual Euler-Lagrange Hessian couples only nodes within stencil reach,
//! so it is block-banded; LAPACK-style band storage with `kl` extra
//! superdiagonals for pivoting fill keeps the Newton solve O(n·bw²).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Banded {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Banded {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; width * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // band row kl + ku + i - j, column-major storage
        j * self.width + (self.kl + self.ku + i) - j
    }

    /// Storage band: assembly uses the logical (kl, ku) band, and the LU
    /// fill after row swaps extends the upper band to ku + kl, which the
    /// storage reserves.
    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        (j as isize - i as isize) <= (self.ku + self.kl) as isize
            && (i as isize - j as isize) <= self.kl as isize
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let k = self.idx(i, j);
        self.data[k]
    }

    pub fn add_diagonal(&mut self, ridge: f64) {
        for i in 0..self.n {
            self.add(i, i, ridge);
        }
    }

    /// In-place LU with partial pivoting; returns the pivot vector.
    pub fn lu_factor(&mut self) -> Result<Vec<usize>> {
        let n = self.n;
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let i_max = (j + self.kl).min(n - 1);
            let c_max = (j + self.ku + self.kl).min(n - 1);
            // pivot search in column j
            let mut p = j;
            let mut best = self.get(j, j).abs();
            for i in j + 1..=i_max {
                let v = self.get(i, j).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::LinearSolve(format!(
                    "banded LU pivot {best:.3e} at column {j}"
                )));
            }
            ipiv[j] = p;
            if p != j {
                for c in j..=c_max {
                    let (a, b) = (self.idx(j, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
            }
            let d = self.get(j, j);
            for i in j + 1..=i_max {
                let l = self.get(i, j) / d;
                self.set(i, j, l);
                if l != 0.0 {
                    for c in j + 1..=c_max {
                        let u = self.get(j, c);
                        if u != 0.0 {
                            self.add(i, c, -l * u);
                        }
                    }
                }
            }
        }
        Ok(ipiv)
    }

    /// Solve with a factored matrix.
    pub fn solve_in_place(&self, ipiv: &[usize], b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            b.swap(j, ipiv[j]);
            let bj = b[j];
            if bj != 0.0 {
                let i_max = (j + self.kl).min(n - 1);
                for i in j + 1..=i_max {
                    b[i] -= self.get(i, j) * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.get(j, j);
            let bj = b[j];
            if bj != 0.0 {
                let i_min = j.saturating_sub(self.ku + self.kl);
                for i in i_min..j {
                    b[i] -= self.get(i, j) * bj;
                }
            }
        }
    }
}

/// Solve the bordered system
///
/// ```text
///   [ K   U ] [y]   [r]
///   [ V^T C ] [z] = [q]
/// ```
///
/// with banded `K` via a Schur complement on the (small) border.
pub fn solve_bordered(
    mut k: Banded,
    u_cols: &[Vec<f64>],
    v_rows: &[Vec<f64>],
    c: &DMatrix<f64>,
    r: &[f64],
    q: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = u_cols.len();
    assert_eq!(v_rows.len(), p);
    assert_eq!(q.len(), p);
    let ipiv = k.lu_factor()?;

    let mut y0 = r.to_vec();
    k.solve_in_place(&ipiv, &mut y0);

    let mut x_cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    for col in u_cols {
        let mut x = col.clone();
        k.solve_in_place(&ipiv, &mut x);
        x_cols.push(x);
    }

    let mut s = c.clone();
    let mut rhs = DVector::zeros(p);
    for a in 0..p {
        let dot0: f64 = v_rows[a].iter().zip(&y0).map(|(x, y)| x * y).sum();
        rhs[a] = q[a] - dot0;
        for b in 0..p {
            let dot: f64 = v_rows[a].iter().zip(&x_cols[b]).map(|(x, y)| x * y).sum();
            s[(a, b)] -= dot;
        }
    }
    let z = s
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinearSolve("singular bordered Schur complement".into()))?;

    let mut y = y0;
    for b in 0..p {
        let zb = z[b];
        if zb != 0.0 {
            for (yi, xi) in y.iter_mut().zip(&x_cols[b]) {
                *yi -= xi * zb;
            }
        }
    }
    Ok((y, z.iter().copied().collect()))
}
