//! Eigenpairs of small dense complex matrices (order at most 8).
//!
//! Eigenvalues come from balancing, Householder reduction to Hessenberg
//! form and a Wilkinson-shifted complex QR iteration. Right and left
//! vectors come from inverse iteration on the balanced matrix, and each
//! simple eigenvalue is polished with a two-sided Rayleigh quotient.
//!
//! [`char_poly_roots`] is a deliberately unrelated second route
//! (Faddeev-LeVerrier coefficients, Durand-Kerner roots) kept for
//! cross-checks.

use crate::error::{Error, Result};
use crate::linalg::{is_real, max_abs, solve_regularized, CMat, CVec, C64, ONE, ZERO};

pub const MAX_ORDER: usize = 8;

/// Below this `|y^H x|` (unit vectors) an eigenvalue is reported defective.
const DEFECTIVE_OVERLAP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Sorted by real part descending, ties by imaginary part descending.
    pub values: Vec<C64>,
    /// Unit right vectors, `A x = lambda x`.
    pub right: Vec<CVec>,
    /// Unit left vectors, `y^H A = lambda y^H`.
    pub left: Vec<CVec>,
    /// `1 / |y^H x|`; infinite for defective eigenvalues.
    pub condition: Vec<f64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Left vector `i` rescaled so that `y^H x_i = 1`.
    pub fn dual(&self, i: usize) -> CVec {
        let s = self.left[i].dotc(&self.right[i]);
        &self.left[i] / s.conj()
    }

    pub fn max_condition(&self) -> f64 {
        self.condition.iter().cloned().fold(0.0, f64::max)
    }

    /// Index of the eigenvalue closest to `z`.
    pub fn nearest(&self, z: C64) -> Option<usize> {
        (0..self.len()).min_by(|&i, &j| {
            (self.values[i] - z)
                .norm()
                .total_cmp(&(self.values[j] - z).norm())
        })
    }
}

fn check_input(a: &CMat) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidParameter {
            name: "matrix",
            reason: format!("not square ({}x{})", a.nrows(), a.ncols()),
        });
    }
    if a.nrows() > MAX_ORDER {
        return Err(Error::TooLarge(a.nrows()));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("eigensolver input"));
    }
    Ok(())
}

/// Diagonal similarity `D^{-1} A D` with power-of-two entries.
fn balance(a: &CMat) -> (CMat, Vec<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = vec![1.0; n];
    let l1 = |z: C64| z.re.abs() + z.im.abs();
    loop {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += l1(b[(j, i)]);
                    r += l1(b[(i, j)]);
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / 2.0 {
                f *= 2.0;
                cc *= 4.0;
            }
            while cc >= r * 2.0 {
                f /= 2.0;
                cc /= 4.0;
            }
            if (cc + r) / f < 0.95 * s {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    b[(j, i)] *= f;
                    b[(i, j)] /= f;
                }
            }
        }
        if done {
            return (b, d);
        }
    }
}

fn hessenberg(a: &mut CMat) {
    let n = a.nrows();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<C64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let xn = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if xn == 0.0 {
            continue;
        }
        let phase = if x[0].norm() > 0.0 { x[0] / x[0].norm() } else { ONE };
        let mut v = x.clone();
        v[0] += phase * xn;
        let vn2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vn2 == 0.0 {
            continue;
        }
        // A <- H A H with H = I - 2 v v^H / (v^H v).
        for j in 0..n {
            let s: C64 = (0..v.len()).map(|i| v[i].conj() * a[(k + 1 + i, j)]).sum();
            let s = s * (2.0 / vn2);
            for i in 0..v.len() {
                a[(k + 1 + i, j)] -= v[i] * s;
            }
        }
        for i in 0..n {
            let s: C64 = (0..v.len()).map(|j| a[(i, k + 1 + j)] * v[j]).sum();
            let s = s * (2.0 / vn2);
            for j in 0..v.len() {
                a[(i, k + 1 + j)] -= s * v[j].conj();
            }
        }
        for i in k + 2..n {
            a[(i, k)] = ZERO;
        }
    }
}

fn givens(x: C64, y: C64) -> (f64, C64) {
    let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
    if r == 0.0 {
        (1.0, ZERO)
    } else if x.norm() == 0.0 {
        (0.0, ONE)
    } else {
        (x.norm() / r, (x / x.norm()) * y.conj() / r)
    }
}

fn qr_eigenvalues(h: &mut CMat) -> Result<Vec<C64>> {
    let n = h.nrows();
    if n == 0 {
        return Ok(vec![]);
    }
    let eps = f64::EPSILON;
    let scale = max_abs(h).max(f64::MIN_POSITIVE);
    let max_iter = 40 * n;
    let mut hi = n - 1;
    let mut iter = 0;
    let mut total = 0;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            let diag = h[(l, l)].norm() + h[(l - 1, l - 1)].norm();
            if sub <= eps * diag || sub <= eps * eps * scale {
                h[(l, l - 1)] = ZERO;
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if iter > max_iter {
            return Err(Error::NoConvergence(total));
        }
        let a = h[(hi - 1, hi - 1)];
        let b = h[(hi - 1, hi)];
        let c = h[(hi, hi - 1)];
        let d = h[(hi, hi)];
        let mu = if iter % 11 == 0 {
            d + C64::new(0.75, 0.25) * c.norm()
        } else {
            let half = (a - d) * 0.5;
            let disc = (half * half + b * c).sqrt();
            let m1 = (a + d) * 0.5 + disc;
            let m2 = (a + d) * 0.5 - disc;
            if (m1 - d).norm() < (m2 - d).norm() {
                m1
            } else {
                m2
            }
        };
        for k in l..=hi {
            h[(k, k)] -= mu;
        }
        let mut rots = Vec::with_capacity(hi - l);
        for k in l..hi {
            let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
            for j in k..=hi {
                let u = h[(k, j)];
                let v = h[(k + 1, j)];
                h[(k, j)] = u * c + s * v;
                h[(k + 1, j)] = -s.conj() * u + v * c;
            }
            rots.push((c, s));
        }
        for (idx, &(c, s)) in rots.iter().enumerate() {
            let k = l + idx;
            for i in l..=(k + 1).min(hi) {
                let u = h[(i, k)];
                let v = h[(i, k + 1)];
                h[(i, k)] = u * c + v * s.conj();
                h[(i, k + 1)] = -s * u + v * c;
            }
        }
        for k in l..=hi {
            h[(k, k)] += mu;
        }
    }
    Ok((0..n).map(|i| h[(i, i)]).collect())
}

fn start_vector(n: usize, seed: usize) -> CVec {
    CVec::from_fn(n, |k, _| {
        let t = (k + 1) as f64 * (seed as f64 + 1.618);
        C64::new(1.0 + 0.5 * t.sin(), 0.3 * (1.7 * t).cos())
    })
}

fn normalize_phase(v: &mut CVec) {
    let nrm = v.norm();
    if nrm == 0.0 {
        return;
    }
    let mut big = 0;
    for i in 0..v.len() {
        if v[i].norm() > v[big].norm() * (1.0 + 1e-12) {
            big = i;
        }
    }
    let ph = v[big].conj() / v[big].norm();
    *v *= ph / nrm;
}

fn inverse_iteration(a: &CMat, sigma: C64, seed: usize, against: &[CVec]) -> CVec {
    let n = a.nrows();
    let floor = f64::EPSILON * max_abs(a).max(1e-300);
    let shifted = a - CMat::identity(n, n) * sigma;
    let mut x = start_vector(n, seed);
    for _ in 0..4 {
        for q in against {
            let p = q.dotc(&x);
            x -= q * p;
        }
        let nx = x.norm();
        if nx == 0.0 {
            x = start_vector(n, seed + 7);
            continue;
        }
        x /= C64::new(nx, 0.0);
        x = solve_regularized(&shifted, &x, floor);
    }
    for q in against {
        let p = q.dotc(&x);
        x -= q * p;
    }
    normalize_phase(&mut x);
    x
}

/// Full eigendecomposition of a matrix of order at most [`MAX_ORDER`].
pub fn eig_dense(a: &CMat) -> Result<EigenSystem> {
    check_input(a)?;
    let n = a.nrows();
    let (bal, d) = balance(a);
    let mut h = bal.clone();
    hessenberg(&mut h);
    let mut values = qr_eigenvalues(&mut h)?;

    let scale = max_abs(&bal).max(f64::MIN_POSITIVE);
    let cluster_tol = 1e-8 * scale;
    let bal_h = bal.adjoint();
    let mut right: Vec<CVec> = Vec::with_capacity(n);
    let mut left: Vec<CVec> = Vec::with_capacity(n);
    for i in 0..n {
        let peers: Vec<usize> = (0..i)
            .filter(|&j| (values[j] - values[i]).norm() <= cluster_tol)
            .collect();
        let rx: Vec<CVec> = peers.iter().map(|&j| right[j].clone()).collect();
        let ly: Vec<CVec> = peers.iter().map(|&j| left[j].clone()).collect();
        let x = inverse_iteration(&bal, values[i], i, &rx);
        let y = inverse_iteration(&bal_h, values[i].conj(), i + 3, &ly);
        let overlap = y.dotc(&x);
        let isolated = (0..n)
            .filter(|&j| j != i)
            .all(|j| (values[j] - values[i]).norm() > cluster_tol);
        if isolated && overlap.norm() > DEFECTIVE_OVERLAP {
            let rq = y.dotc(&(&bal * &x)) / overlap;
            if (rq - values[i]).norm() <= 1e-6 * scale {
                values[i] = rq;
            }
        }
        right.push(x);
        left.push(y);
    }

    // Inverse iteration inside a defective cluster returns vectors that are
    // not eigenvectors; a residual test catches them.
    let res_tol = 1e-8 * scale;
    let mut defective = vec![false; n];
    for i in 0..n {
        let rr = (&bal * &right[i] - &right[i] * values[i]).norm();
        let rl = (&bal_h * &left[i] - &left[i] * values[i].conj()).norm();
        if rr > res_tol || rl > res_tol {
            for j in 0..n {
                if (values[j] - values[i]).norm() <= cluster_tol {
                    defective[j] = true;
                }
            }
        }
    }

    // Undo the balancing: x_A = D x_B, y_A = D^{-1} y_B.
    let mut condition = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..n {
            right[i][k] *= d[k];
            left[i][k] /= d[k];
        }
        normalize_phase(&mut right[i]);
        normalize_phase(&mut left[i]);
        let ov = left[i].dotc(&right[i]).norm();
        condition.push(if defective[i] || ov < DEFECTIVE_OVERLAP {
            f64::INFINITY
        } else {
            1.0 / ov
        });
    }

    let mut sys = EigenSystem {
        values,
        right,
        left,
        condition,
    };
    if is_real(a) {
        pair_conjugates(&mut sys, scale);
    }
    sort_system(&mut sys, scale);
    Ok(sys)
}

/// Eigenvalues only, sorted like [`eig_dense`].
pub fn eigenvalues(a: &CMat) -> Result<Vec<C64>> {
    check_input(a)?;
    let (bal, _) = balance(a);
    let mut h = bal;
    hessenberg(&mut h);
    let mut v = qr_eigenvalues(&mut h)?;
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    if is_real(a) {
        let tol = 1e-13 * scale;
        let mut used = vec![false; v.len()];
        for i in 0..v.len() {
            if used[i] || v[i].im <= tol {
                continue;
            }
            let partner = (0..v.len())
                .filter(|&j| !used[j] && j != i && v[j].im < -tol)
                .min_by(|&p, &q| {
                    (v[p] - v[i].conj())
                        .norm()
                        .total_cmp(&(v[q] - v[i].conj()).norm())
                });
            if let Some(j) = partner {
                let avg = (v[i] + v[j].conj()) * 0.5;
                v[i] = avg;
                v[j] = avg.conj();
                used[i] = true;
                used[j] = true;
            }
        }
        for z in v.iter_mut() {
            if z.im.abs() <= tol {
                z.im = 0.0;
            }
        }
    }
    sort_values(&mut v, scale);
    Ok(v)
}

fn pair_conjugates(sys: &mut EigenSystem, scale: f64) {
    let n = sys.len();
    let tol = 1e-13 * scale;
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] || sys.values[i].im <= tol {
            continue;
        }
        let target = sys.values[i].conj();
        let partner = (0..n)
            .filter(|&j| !used[j] && j != i && sys.values[j].im < -tol)
            .min_by(|&p, &q| {
                (sys.values[p] - target)
                    .norm()
                    .total_cmp(&(sys.values[q] - target).norm())
            });
        let Some(j) = partner else { continue };
        if (sys.values[j] - target).norm() > 1e-6 * scale {
            continue;
        }
        let avg = (sys.values[i] + sys.values[j].conj()) * 0.5;
        sys.values[i] = avg;
        sys.values[j] = avg.conj();
        sys.right[j] = sys.right[i].map(|z| z.conj());
        sys.left[j] = sys.left[i].map(|z| z.conj());
        sys.condition[j] = sys.condition[i];
        used[i] = true;
        used[j] = true;
    }
    for z in sys.values.iter_mut() {
        if z.im.abs() <= tol {
            z.im = 0.0;
        }
    }
}

fn sorted_order(v: &[C64], scale: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].re.total_cmp(&v[i].re));
    // Real parts within rounding of each other count as ties.
    let tol = 1e-12 * scale;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && (v[idx[start]].re - v[idx[end]].re).abs() <= tol {
            end += 1;
        }
        idx[start..end].sort_by(|&i, &j| v[j].im.total_cmp(&v[i].im));
        start = end;
    }
    idx
}

fn sort_values(v: &mut Vec<C64>, scale: f64) {
    let order = sorted_order(v, scale);
    *v = order.iter().map(|&i| v[i]).collect();
}

fn sort_system(sys: &mut EigenSystem, scale: f64) {
    let order = sorted_order(&sys.values, scale);
    sys.values = order.iter().map(|&i| sys.values[i]).collect();
    sys.right = order.iter().map(|&i| sys.right[i].clone()).collect();
    sys.left = order.iter().map(|&i| sys.left[i].clone()).collect();
    sys.condition = order.iter().map(|&i| sys.condition[i]).collect();
}

/// Characteristic polynomial coefficients `c[0] + c[1] z + ... + z^n`
/// by the Faddeev-LeVerrier recursion.
pub fn char_poly(a: &CMat) -> Vec<C64> {
    let n = a.nrows();
    let mut c = vec![ZERO; n + 1];
    c[n] = ONE;
    let mut m = CMat::zeros(n, n);
    for k in 1..=n {
        m = a * &m + CMat::identity(n, n) * c[n + 1 - k];
        let am = a * &m;
        c[n - k] = -am.trace() / k as f64;
    }
    c
}

fn horner(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(ZERO, |acc, &ck| acc * z + ck)
}

/// Roots of a monic polynomial by Durand-Kerner iteration.
///
/// Roots that are still moving when the iteration stops belong to a
/// multiple root; clusters of those are replaced by their centroid.
pub fn poly_roots(c: &[C64]) -> Result<Vec<C64>> {
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return Ok(vec![]);
    }
    if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("polynomial coefficients"));
    }
    let lead = c[n];
    let c: Vec<C64> = c.iter().map(|z| z / lead).collect();
    let radius = 1.0 + c[..n].iter().map(|z| z.norm()).fold(0.0, f64::max);
    let seed = C64::new(0.4, 0.9);
    let mut z: Vec<C64> = (0..n).map(|k| seed.powu(k as u32) * radius).collect();
    for _ in 0..5000 {
        let mut moved = 0.0f64;
        for k in 0..n {
            let mut den = ONE;
            for j in 0..n {
                if j != k {
                    den *= z[k] - z[j];
                }
            }
            if den == ZERO {
                den = C64::new(f64::EPSILON, f64::EPSILON);
            }
            let dz = horner(&c, z[k]) / den;
            z[k] -= dz;
            moved = moved.max(dz.norm() / (1.0 + z[k].norm()));
        }
        if moved <= 1e-15 {
            break;
        }
    }
    for k in 0..n {
        let mag: f64 = c
            .iter()
            .enumerate()
            .map(|(i, ci)| ci.norm() * z[k].norm().powi(i as i32))
            .sum();
        let res = horner(&c, z[k]).norm() / mag.max(f64::MIN_POSITIVE);
        if !res.is_finite() || res > 1e-9 {
            return Err(Error::Stagnation(res));
        }
    }
    merge_multiple_roots(&c, &mut z);
    Ok(z)
}

/// Taylor coefficients of `c` about `x0`.
fn shift_poly(c: &[C64], x0: C64) -> Vec<C64> {
    let mut t = c.to_vec();
    let n = t.len();
    for k in 0..n {
        for j in (k..n - 1).rev() {
            let v = t[j + 1];
            t[j] += x0 * v;
        }
    }
    t
}

/// A tight group of `k` roots whose centre is a root to rounding level is
/// taken as one `k`-fold root; its scatter is noise.
fn merge_multiple_roots(c: &[C64], z: &mut [C64]) {
    let n = z.len();
    let mut done = vec![false; n];
    for k in 0..n {
        if done[k] {
            continue;
        }
        let group: Vec<usize> = (0..n)
            .filter(|&j| !done[j] && (z[j] - z[k]).norm() <= 1e-2 * (1.0 + z[k].norm()))
            .collect();
        if group.len() < 2 {
            continue;
        }
        let k_mult = group.len();
        let mut centre = group.iter().map(|&j| z[j]).sum::<C64>() / k_mult as f64;
        let noise: f64 = 1e-10
            * c.iter()
                .enumerate()
                .map(|(i, ci)| ci.norm() * (1.0 + centre.norm()).powi(i as i32))
                .sum::<f64>();
        if shift_poly(c, centre)[0].norm() > noise {
            continue;
        }
        // The (k-1)-th derivative has a simple root there.
        for _ in 0..8 {
            let t = shift_poly(c, centre);
            let den = t[k_mult] * k_mult as f64;
            if den == ZERO {
                break;
            }
            centre -= t[k_mult - 1] / den;
        }
        for &j in &group {
            z[j] = centre;
            done[j] = true;
        }
    }
}

pub fn char_poly_roots(a: &CMat) -> Result<Vec<C64>> {
    check_input(a)?;
    poly_roots(&char_poly(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{real_mat, I};

    fn residual(a: &CMat, sys: &EigenSystem) -> f64 {
        (0..sys.len())
            .map(|i| (a * &sys.right[i] - &sys.right[i] * sys.values[i]).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn diagonal_is_sorted() {
        let a = real_mat(&[&[1.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &[0.0, 0.0, 2.0]]);
        let v = eigenvalues(&a).unwrap();
        assert_eq!(v, vec![C64::new(3.0, 0.0), C64::new(2.0, 0.0), C64::new(1.0, 0.0)]);
    }

    #[test]
    fn rotation_generator_gives_conjugate_pair() {
        let a = real_mat(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let sys = eig_dense(&a).unwrap();
        assert!((sys.values[0] - I).norm() < 1e-14);
        assert!((sys.values[1] + I).norm() < 1e-14);
        assert_eq!(sys.values[0], sys.values[1].conj());
        assert!(residual(&a, &sys) < 1e-13);
    }

    #[test]
    fn jordan_block_is_flagged_defective() {
        let a = real_mat(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let sys = eig_dense(&a).unwrap();
        assert!((sys.values[0] - ONE).norm() < 1e-12);
        assert!(sys.condition.iter().all(|c| c.is_infinite()));
    }

    #[test]
    fn identity_has_independent_vectors() {
        let a = CMat::identity(4, 4);
        let sys = eig_dense(&a).unwrap();
        assert!(sys.values.iter().all(|z| (*z - ONE).norm() < 1e-14));
        let x = CMat::from_columns(&sys.right);
        assert!(x.determinant().norm() > 0.1);
    }

    #[test]
    fn nan_input_is_rejected() {
        let mut a = CMat::identity(2, 2);
        a[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert_eq!(eig_dense(&a).unwrap_err(), Error::NonFinite("eigensolver input"));
    }

    #[test]
    fn oversize_input_is_rejected() {
        let a = CMat::identity(9, 9);
        assert_eq!(eig_dense(&a).unwrap_err(), Error::TooLarge(9));
    }

    #[test]
    fn badly_scaled_companion() {
        // Roots spread over six decades.
        let a = real_mat(&[
            &[1001.001, -1001.001, 1.0],
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
        ]);
        let sys = eig_dense(&a).unwrap();
        let want = [1000.0, 1.0, 1e-3];
        for (z, w) in sys.values.iter().zip(want) {
            assert!((z.re - w).abs() <= 1e-9 * w.max(1.0), "{z} vs {w}");
        }
    }

    #[test]
    fn char_poly_of_known_matrix() {
        let a = real_mat(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let c = char_poly(&a);
        assert!((c[0] - C64::new(3.0, 0.0)).norm() < 1e-14);
        assert!((c[1] - C64::new(-4.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn durand_kerner_on_identity_multiple_root() {
        let roots = char_poly_roots(&CMat::identity(5, 5)).unwrap();
        for z in roots {
            assert!((z - ONE).norm() < 1e-10, "{z}");
        }
    }
}
