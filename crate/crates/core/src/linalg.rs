//! Dense complex helpers shared by the modal solvers.
//!
//! Every block in this crate is at most 5x5, so these routines favour
//! clarity over blocking.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn real_mat(rows: &[&[f64]]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMat::from_fn(n, m, |i, j| C64::new(rows[i][j], 0.0))
}

pub fn is_real(m: &CMat) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Solve `a x = b`, failing on an exactly singular pivot.
pub fn solve(a: &CMat, b: &CVec) -> Result<CVec> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular("linear solve"))
}

/// LU solve that replaces vanishing pivots by `floor`; used for inverse
/// iteration where the shifted matrix is singular on purpose.
pub(crate) fn solve_regularized(a: &CMat, b: &CVec, floor: f64) -> CVec {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if lu[(i, k)].norm() > lu[(p, k)].norm() {
                p = i;
            }
        }
        if p != k {
            lu.swap_rows(p, k);
            x.swap_rows(p, k);
        }
        if lu[(k, k)].norm() < floor {
            lu[(k, k)] = C64::new(floor, 0.0);
        }
        let piv = lu[(k, k)];
        for i in k + 1..n {
            let l = lu[(i, k)] / piv;
            if l != ZERO {
                for j in k..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= l * v;
                }
                let xv = x[k];
                x[i] -= l * xv;
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= lu[(k, j)] * x[j];
        }
        x[k] = s / lu[(k, k)];
    }
    x
}

/// Largest singular value, from the Hermitian eigenproblem of `a^H a`.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let g = a.adjoint() * a;
    let top = crate::smalleig::eigenvalues(&g)
        .map(|v| v.iter().map(|z| z.re).fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    top.max(0.0).sqrt()
}

/// `(e^z - 1) / z`, accurate near zero.
pub fn phi1(z: C64) -> C64 {
    if z.norm() < 1e-3 {
        let mut term = ONE;
        let mut sum = ONE;
        for k in 2..12 {
            term = term * z / k as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp() - ONE) / z
    }
}

pub fn weighted_dot(u: &[C64], v: &[C64], w: &[f64]) -> C64 {
    u.iter()
        .zip(v)
        .zip(w)
        .map(|((a, b), c)| a * b.conj() * *c)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regularized_solve_matches_lu_on_regular_matrix() {
        let a = real_mat(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        let b = CVec::from_vec(vec![ONE, I, ONE]);
        let x = solve_regularized(&a, &b, 1e-300);
        let r = &a * &x - &b;
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = real_mat(&[&[3.0, 0.0], &[0.0, -5.0]]);
        assert!((spectral_norm(&a) - 5.0).abs() < 1e-13);
    }

    #[test]
    fn spectral_norm_of_rank_one() {
        // u v^H has norm |u||v|.
        let u = CVec::from_vec(vec![ONE, I * 2.0]);
        let v = CVec::from_vec(vec![C64::new(1.0, 1.0), ONE]);
        let a = &u * v.adjoint();
        assert!((spectral_norm(&a) - u.norm() * v.norm()).abs() < 1e-13);
    }

    #[test]
    fn phi1_branches_agree() {
        let z = C64::new(9e-4, 2e-4);
        let direct = (z.exp() - ONE) / z;
        assert!((phi1(z) - direct).norm() < 1e-12);
        assert!((phi1(ZERO) - ONE).norm() == 0.0);
    }
}
