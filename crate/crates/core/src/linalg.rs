//! Dense Cholesky machinery shared by the filter, the oracle and the kriging code.
//!
//! The factorization is blocked so that the bulk of the work lands in
//! `gemm`; on failure it reports the pivot that went non-positive.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const BLOCK: usize = 48;

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factor a symmetric positive definite matrix. Only the lower triangle is read.
    pub fn new(mut a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("cholesky: matrix must be square"));
        }
        let mut kb = 0;
        while kb < n {
            let b = BLOCK.min(n - kb);
            factor_diag_block(&mut a, kb, b)?;
            let rest = kb + b;
            if rest < n {
                solve_panel(&mut a, kb, b);
                let panel = a.view((rest, kb), (n - rest, b)).clone_owned();
                let panel_t = panel.transpose();
                let mut trailing = a.view_mut((rest, rest), (n - rest, n - rest));
                trailing.gemm(-1.0, &panel, &panel_t, 1.0);
            }
            kb = rest;
        }
        for j in 1..n {
            for i in 0..j {
                a[(i, j)] = 0.0;
            }
        }
        Ok(Cholesky { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_l(self) -> DMatrix<f64> {
        self.l
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Overwrite `b` with `L⁻¹ b`.
    pub fn solve_lower_in_place(&self, b: &mut DMatrix<f64>) {
        forward_substitute(&self.l, b);
    }

    /// Overwrite `b` with `L⁻ᵀ b`.
    pub fn solve_upper_in_place(&self, b: &mut DMatrix<f64>) {
        backward_substitute(&self.l, b);
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        let x = self.solve(&m);
        DVector::from_column_slice(x.as_slice())
    }

    /// `A⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// `L z` for a vector of standard normal deviates.
    pub fn mul_l(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.l * z
    }
}

fn factor_diag_block(a: &mut DMatrix<f64>, kb: usize, b: usize) -> Result<()> {
    let n = a.nrows();
    let s = a.as_mut_slice();
    for j in kb..kb + b {
        let d = s[j * n + j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, dim: n });
        }
        let ljj = d.sqrt();
        s[j * n + j] = ljj;
        let inv = 1.0 / ljj;
        for v in &mut s[j * n + j + 1..j * n + kb + b] {
            *v *= inv;
        }
        for k in j + 1..kb + b {
            let lkj = s[j * n + k];
            if lkj == 0.0 {
                continue;
            }
            let (left, right) = s.split_at_mut(k * n);
            let src = &left[j * n..(j + 1) * n];
            let dst = &mut right[..n];
            for i in k..kb + b {
                dst[i] -= lkj * src[i];
            }
        }
    }
    Ok(())
}

/// `A21 <- A21 L11⁻ᵀ` for the panel below the diagonal block.
fn solve_panel(a: &mut DMatrix<f64>, kb: usize, b: usize) {
    let n = a.nrows();
    let rest = kb + b;
    let s = a.as_mut_slice();
    for j in kb..kb + b {
        for k in kb..j {
            let ljk = s[k * n + j];
            if ljk == 0.0 {
                continue;
            }
            let (left, right) = s.split_at_mut(j * n);
            let src = &left[k * n..(k + 1) * n];
            let dst = &mut right[..n];
            for i in rest..n {
                dst[i] -= ljk * src[i];
            }
        }
        let inv = 1.0 / s[j * n + j];
        for v in &mut s[j * n + rest..(j + 1) * n] {
            *v *= inv;
        }
    }
}

/// Blocked `b <- L⁻¹ b`.
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    assert_eq!(b.nrows(), n, "forward_substitute: dimension mismatch");
    let ncols = b.ncols();
    let mut kb = 0;
    while kb < n {
        let blk = BLOCK.min(n - kb);
        let bs = b.as_mut_slice();
        for c in 0..ncols {
            let col = &mut bs[c * n..(c + 1) * n];
            for j in kb..kb + blk {
                let x = col[j] / l[(j, j)];
                col[j] = x;
                if x != 0.0 {
                    let lcol = &l.as_slice()[j * n..(j + 1) * n];
                    for i in j + 1..kb + blk {
                        col[i] -= lcol[i] * x;
                    }
                }
            }
        }
        let rest = kb + blk;
        if rest < n {
            let lpanel = l.view((rest, kb), (n - rest, blk));
            let solved = b.view((kb, 0), (blk, ncols)).clone_owned();
            let mut tail = b.view_mut((rest, 0), (n - rest, ncols));
            tail.gemm(-1.0, &lpanel, &solved, 1.0);
        }
        kb = rest;
    }
}

/// `b <- L⁻ᵀ b`.
pub fn backward_substitute(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    assert_eq!(b.nrows(), n, "backward_substitute: dimension mismatch");
    let ls = l.as_slice();
    let ncols = b.ncols();
    let bs = b.as_mut_slice();
    for c in 0..ncols {
        let col = &mut bs[c * n..(c + 1) * n];
        for j in (0..n).rev() {
            let lcol = &ls[j * n..(j + 1) * n];
            let mut acc = col[j];
            for i in j + 1..n {
                acc -= lcol[i] * col[i];
            }
            col[j] = acc / lcol[j];
        }
    }
}

/// `c <- alpha aᵀ b + beta c`. nalgebra's transposed products go column by
/// column through gemv, so this calls the blocked kernel directly.
pub fn gemm_tn(alpha: f64, a: &DMatrix<f64>, b: &DMatrix<f64>, beta: f64, c: &mut DMatrix<f64>) {
    let (k, m) = a.shape();
    let n = b.ncols();
    assert_eq!(b.nrows(), k, "gemm_tn: inner dimension mismatch");
    assert_eq!(c.shape(), (m, n), "gemm_tn: output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    // SAFETY: all three buffers are dense column-major with the shapes checked above,
    // and `c` does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

/// `aᵀ b` as a new matrix.
pub fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(a.ncols(), b.ncols());
    gemm_tn(1.0, a, b, 0.0, &mut c);
    c
}

/// Symmetric square root `V diag(√λ⁺) Vᵀ` (negative eigenvalues clamped to zero).
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}
