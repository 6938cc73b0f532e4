//! Sparse matrices and iterative solvers, plus a few small dense helpers.

use crate::error::{Error, Result};
use nalgebra::{Matrix2, Matrix3, SymmetricEigen};

/// Compressed sparse row matrix (square).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletBuilder { n, entries: Vec::with_capacity(cap) }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Symmetric two-point link with conductance `c` between `i` and `j`.
    pub fn link(&mut self, i: usize, j: usize, c: f64) {
        self.add(i, i, c);
        self.add(j, j, c);
        self.add(i, j, -c);
        self.add(j, i, -c);
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix { n: self.n, indptr, indices, data }
    }
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `‖b − Ax‖₂`.
    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.apply(x);
        norm(&ax.iter().zip(b).map(|(a, b)| b - a).collect::<Vec<_>>())
    }

    /// Principal submatrix on the index range `lo..hi`.
    pub fn block(&self, lo: usize, hi: usize) -> CsrMatrix {
        let mut tb = TripletBuilder::new(hi - lo);
        for i in lo..hi {
            for (j, v) in self.row(i) {
                if j >= lo && j < hi {
                    tb.add(i - lo, j - lo, v);
                }
            }
        }
        tb.build()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients.
///
/// With `singular = true` the matrix is assumed to have the constant vector as
/// kernel; the right-hand side is projected onto its range and the result is
/// returned with zero mean.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    singular: bool,
) -> Result<SolveStats> {
    let n = a.n();
    let mut rhs = b.to_vec();
    if singular {
        remove_mean(&mut rhs);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let dinv: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = rhs.clone();
    let ax = a.apply(x);
    r.iter_mut().zip(&ax).for_each(|(r, a)| *r -= a);
    if singular {
        remove_mean(&mut r);
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    // attainable accuracy is limited by rounding in the matrix product
    let floor = 64.0 * f64::EPSILON * (n as f64).sqrt();
    let target = tol.max(floor);
    while rel > target && it < max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite("system matrix".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if singular {
            remove_mean(&mut r);
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        if it % 50 == 0 {
            // guard against drift of the recursive residual
            let ax = a.apply(x);
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
            if singular {
                remove_mean(&mut r);
            }
        }
        rel = norm(&r) / bnorm;
    }
    if singular {
        remove_mean(x);
    }
    let mut true_r: Vec<f64> = a.apply(x).iter().zip(&rhs).map(|(a, b)| b - a).collect();
    if singular {
        remove_mean(&mut true_r);
    }
    let rel = norm(&true_r) / bnorm;
    if rel > 10.0 * target {
        return Err(Error::NoConvergence {
            what: "conjugate gradients".into(),
            residual: rel,
            iterations: it,
        });
    }
    Ok(SolveStats { iterations: it, relative_residual: rel })
}

/// Unpreconditioned conjugate gradients for an operator given as a closure.
pub fn cg_operator<F>(
    mut apply: F,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    singular: bool,
) -> Result<SolveStats>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let mut rhs = b.to_vec();
    if singular {
        remove_mean(&mut rhs);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let ax = apply(x)?;
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    if singular {
        remove_mean(&mut r);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while rr.sqrt() > tol * bnorm && it < max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite("operator".into()));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if singular {
            remove_mean(&mut r);
        }
        let rr_new = dot(&r, &r);
        for i in 0..n {
            p[i] = r[i] + rr_new / rr * p[i];
        }
        rr = rr_new;
        it += 1;
    }
    if singular {
        remove_mean(x);
    }
    let rel = rr.sqrt() / bnorm;
    if rel > tol * 10.0 {
        return Err(Error::NoConvergence { what: "operator conjugate gradients".into(), residual: rel, iterations: it });
    }
    Ok(SolveStats { iterations: it, relative_residual: rel })
}

/// Jacobi-preconditioned BiCGStab for nonsymmetric systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = a.n();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let dinv: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r: Vec<f64> = a.apply(x).iter().zip(b).map(|(ax, b)| b - ax).collect();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zv = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut it = 0;
    let mut rel = norm(&r) / bnorm;
    while rel > tol && it < max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * dinv[i];
        }
        a.mul_vec(&y, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            break;
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
            zv[i] = s[i] * dinv[i];
        }
        a.mul_vec(&zv, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zv[i];
            r[i] = s[i] - omega * t[i];
        }
        it += 1;
        rel = norm(&r) / bnorm;
        if omega == 0.0 {
            break;
        }
    }
    let rel = a.residual_norm(x, b) / bnorm;
    if rel > tol * 10.0 || !rel.is_finite() {
        return Err(Error::NoConvergence {
            what: "BiCGStab".into(),
            residual: rel,
            iterations: it,
        });
    }
    Ok(SolveStats { iterations: it, relative_residual: rel })
}

/// Direct banded LU without pivoting. Intended for diagonally dominant or
/// M-matrix systems, where pivoting is unnecessary.
pub fn banded_lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n();
    let (kl, ku) = a.bandwidths();
    let w = kl + ku + 1;
    // band[i][j - i + kl]
    let mut band = vec![0.0; n * w];
    for i in 0..n {
        for (j, v) in a.row(i) {
            band[i * w + (j + kl - i)] += v;
        }
    }
    let mut x = b.to_vec();
    for k in 0..n {
        let piv = band[k * w + kl];
        if piv.abs() < 1e-300 {
            return Err(Error::Degenerate(format!("zero pivot at row {k}")));
        }
        let imax = (k + kl).min(n - 1);
        let jmax = (k + ku).min(n - 1);
        for i in (k + 1)..=imax {
            let lik = band[i * w + (k + kl - i)] / piv;
            if lik == 0.0 {
                continue;
            }
            band[i * w + (k + kl - i)] = lik;
            for j in (k + 1)..=jmax {
                band[i * w + (j + kl - i)] -= lik * band[k * w + (j + kl - k)];
            }
            x[i] -= lik * x[k];
        }
    }
    for k in (0..n).rev() {
        let jmax = (k + ku).min(n - 1);
        let mut s = x[k];
        for j in (k + 1)..=jmax {
            s -= band[k * w + (j + kl - k)] * x[j];
        }
        x[k] = s / band[k * w + kl];
    }
    Ok(x)
}

/// Nonsymmetric solve: BiCGStab first, banded LU if it stalls.
pub fn solve_general(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveStats)> {
    let mut x = vec![0.0; a.n()];
    match bicgstab(a, b, &mut x, tol, 20 * a.n().max(100)) {
        Ok(st) => Ok((x, st)),
        Err(_) => {
            let x = banded_lu_solve(a, b)?;
            let bn = norm(b);
            let rel = if bn > 0.0 { a.residual_norm(&x, b) / bn } else { 0.0 };
            Ok((x, SolveStats { iterations: 0, relative_residual: rel }))
        }
    }
}

/// Smallest eigenvalue of a symmetric 3×3 matrix (symmetrized first).
pub fn min_eigenvalue3(m: &Matrix3<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

pub fn min_eigenvalue2(m: &Matrix2<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

/// `M^{-1/2}` for a symmetric positive definite 2×2 matrix.
pub fn inv_sqrt2(m: &Matrix2<f64>, name: &str) -> Result<Matrix2<f64>> {
    let s = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite(name.into()));
    }
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(eig.eigenvectors * d * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, dirichlet: bool) -> CsrMatrix {
        let mut tb = TripletBuilder::new(n);
        for i in 0..n - 1 {
            tb.link(i, i + 1, 1.0);
        }
        if dirichlet {
            tb.add(0, 0, 1.0);
            tb.add(n - 1, n - 1, 1.0);
        }
        tb.build()
    }

    #[test]
    fn builder_merges_duplicates() {
        let mut tb = TripletBuilder::new(2);
        tb.add(0, 0, 1.0);
        tb.add(0, 0, 2.0);
        tb.add(1, 0, -1.0);
        let a = tb.build();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn pcg_solves_dirichlet_laplacian() {
        let a = laplace_1d(50, true);
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.apply(&xs);
        let mut x = vec![0.0; 50];
        let st = pcg(&a, &b, &mut x, 1e-12, 1000, false).unwrap();
        assert!(st.relative_residual <= 1e-11);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn pcg_handles_constant_kernel() {
        let a = laplace_1d(40, false);
        let mut xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.2).cos()).collect();
        remove_mean(&mut xs);
        let b = a.apply(&xs);
        let mut x = vec![0.0; 40];
        pcg(&a, &b, &mut x, 1e-12, 1000, true).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn bicgstab_and_banded_lu_agree() {
        let n = 60;
        let mut tb = TripletBuilder::new(n);
        for i in 0..n {
            tb.add(i, i, 3.0);
            if i > 0 {
                tb.add(i, i - 1, -1.5);
            }
            if i + 1 < n {
                tb.add(i, i + 1, -0.5);
            }
        }
        let a = tb.build();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, 1e-12, 500).unwrap();
        let y = banded_lu_solve(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_square_root() {
        let m = Matrix2::new(4.0, 1.0, 1.0, 3.0);
        let r = inv_sqrt2(&m, "m").unwrap();
        let back = (r * r).try_inverse().unwrap();
        assert!((back - m).norm() < 1e-12);
        assert!(inv_sqrt2(&Matrix2::new(1.0, 0.0, 0.0, -1.0), "m").is_err());
    }
}
