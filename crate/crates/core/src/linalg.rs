//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SymmetricEigen};

/// Thin SVD with singular values sorted in descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

/// Thin SVD, sorted descending. Sorting is done here rather than trusted to
/// the backend so that downstream truncation never depends on its ordering.
pub fn svd_sorted(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    let kdim = r.min(c);
    if kdim == 0 {
        return Svd {
            u: DMatrix::zeros(r, 0),
            s: Vec::new(),
            vt: DMatrix::zeros(0, c),
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..kdim).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut su = DMatrix::zeros(r, kdim);
    let mut svt = DMatrix::zeros(kdim, c);
    let mut s = Vec::with_capacity(kdim);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        svt.set_row(dst, &vt.row(src));
        s.push(svd.singular_values[src].max(0.0));
    }
    Svd { u: su, s, vt: svt }
}

impl Svd {
    /// Flips each singular pair so that the largest-magnitude entry of the
    /// left vector is positive. Ties go to the lowest row index.
    pub fn fix_signs(&mut self) {
        for j in 0..self.s.len() {
            let col = self.u.column(j);
            let mut best = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            if col.len() > 0 && col[best] < 0.0 {
                self.u.column_mut(j).neg_mut();
                self.vt.row_mut(j).neg_mut();
            }
        }
    }
}

/// Right singular vectors for the `d` smallest singular values of a matrix
/// with at least as many rows as columns, as columns of the result.
/// Also returns the full sorted spectrum.
pub fn smallest_right_vectors(m: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let c = m.ncols();
    debug_assert!(m.nrows() >= c && d <= c);
    let svd = svd_sorted(m);
    let mut out = DMatrix::zeros(c, d);
    for j in 0..d {
        out.set_column(j, &svd.vt.row(c - 1 - j).transpose());
    }
    (out, svd.s)
}

/// Nearest matrix with orthonormal rows (polar factor) and the mean of the
/// two singular values.
pub fn polar_rows(y: &Matrix2x3<f64>) -> (Matrix2x3<f64>, f64) {
    let svd = y.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let s = svd.singular_values;
    (u * vt, 0.5 * (s[0] + s[1]))
}

/// Completes two orthonormal rows into a proper rotation.
pub fn complete_rotation(r: &Matrix2x3<f64>) -> Matrix3<f64> {
    let a = r.row(0).transpose();
    let b = r.row(1).transpose();
    let c = a.cross(&b);
    Matrix3::from_rows(&[a.transpose(), b.transpose(), c.transpose()])
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vecs = DMatrix::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
        vals.push(eig.eigenvalues[src]);
    }
    (vals, vecs)
}

/// Solves `a x = b` for symmetric positive semidefinite `a`, by Cholesky when
/// possible and by an SVD pseudo-inverse otherwise.
pub fn solve_psd(a: DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => pinv_solve(&a, b),
    }
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = svd_sorted(a);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let cut = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    for (i, &s) in svd.s.iter().enumerate() {
        if s > cut && s > 0.0 {
            let coef = (svd.u.column(i).transpose() * b) / s;
            x += svd.vt.row(i).transpose() * coef;
        }
    }
    x
}

/// Least-squares solve for a tall system (QR-free, SVD based).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = pinv_solve(a, &bm);
    DVector::from_column_slice(x.as_slice())
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = svd_sorted(m).s;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}
