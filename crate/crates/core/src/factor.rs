//! Low-rank factorization of a tracking matrix: truncated SVD for complete
//! data and masked, weighted alternating least squares otherwise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_solve, svd_sorted};
use crate::par::{map_indexed, Parallelism};
use crate::tracking::{Mask, TrackingMatrix};

/// Stopping rule and scheduling for [`alternating_factor`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the relative decrease of the objective falls below this.
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub parallelism: Parallelism,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-8, max_iters: 500, parallelism: Parallelism::default() }
    }
}

/// A rank-r factor pair with W ≈ motion · shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    /// 2m×r.
    pub motion: DMatrix<f64>,
    /// r×n.
    pub shape: DMatrix<f64>,
    pub rank: usize,
    /// Square root of the masked (and weighted) squared error the factor pair
    /// was fitted against.
    pub residual_fro: f64,
    /// Singular values of the product, descending.
    pub singular_values: Vec<f64>,
    /// ALS sweeps performed; zero for a direct SVD.
    pub iterations: usize,
}

impl Factorization {
    /// Wraps a factor pair, checking shapes. `residual_fro` is left at zero.
    pub fn from_factors(motion: DMatrix<f64>, shape: DMatrix<f64>) -> Result<Self> {
        if motion.ncols() != shape.nrows() || motion.nrows() % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "motion is {}x{}, shape is {}x{}",
                motion.nrows(),
                motion.ncols(),
                shape.nrows(),
                shape.ncols()
            )));
        }
        let singular_values = product_spectrum(&motion, &shape);
        Ok(Factorization {
            rank: motion.ncols(),
            motion,
            shape,
            residual_fro: 0.0,
            singular_values,
            iterations: 0,
        })
    }

    pub fn frames(&self) -> usize {
        self.motion.nrows() / 2
    }

    pub fn points(&self) -> usize {
        self.shape.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.motion * &self.shape
    }

    /// Applies the gauge change (M G, G⁻¹ S).
    pub fn regauge(&self, g: &DMatrix<f64>) -> Result<Self> {
        let inv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Argument("gauge transform is singular".into()))?;
        let mut out = self.clone();
        out.motion = &self.motion * g;
        out.shape = inv * &self.shape;
        Ok(out)
    }
}

/// Per-point scalar confidences in [0, 1], frames×points, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    frames: usize,
    points: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(frames: usize, points: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != frames * points {
            return Err(Error::DimensionMismatch(format!(
                "weights of {frames}x{points} need {} entries, got {}",
                frames * points,
                w.len()
            )));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Argument(format!("weight {bad} outside [0, 1]")));
        }
        Ok(WeightMatrix { frames, points, w })
    }

    /// Unit weight on observed cells, zero elsewhere.
    pub fn from_mask(mask: &Mask) -> Self {
        let w = mask.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        WeightMatrix { frames: mask.frames(), points: mask.points(), w }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn points(&self) -> usize {
        self.points
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.points + j]
    }

    /// Multiplies every weight by `s` in [0, 1].
    pub fn scaled(&self, s: f64) -> Result<Self> {
        WeightMatrix::new(self.frames, self.points, self.w.iter().map(|v| v * s).collect())
    }
}

fn check_rank(w: &TrackingMatrix, r: usize) -> Result<()> {
    let max = (2 * w.frames()).min(w.points());
    if r < 1 || r > max {
        return Err(Error::Argument(format!("rank {r} outside 1..={max}")));
    }
    Ok(())
}

fn check_weights(w: &TrackingMatrix, weights: Option<&WeightMatrix>) -> Result<()> {
    if let Some(wt) = weights {
        if wt.frames != w.frames() || wt.points != w.points() {
            return Err(Error::DimensionMismatch(format!(
                "weights are {}x{}, tracking is {}x{}",
                wt.frames,
                wt.points,
                w.frames(),
                w.points()
            )));
        }
    }
    Ok(())
}

/// Singular values of motion · shape, computed through the thin QR factors
/// so the full product is never decomposed.
fn product_spectrum(motion: &DMatrix<f64>, shape: &DMatrix<f64>) -> Vec<f64> {
    if motion.ncols() == 0 || motion.nrows() < motion.ncols() || shape.ncols() < shape.nrows() {
        return svd_sorted(&(motion * shape)).s;
    }
    let r1 = motion.clone().qr().r();
    let r2 = shape.transpose().qr().r();
    svd_sorted(&(r1 * r2.transpose())).s
}

/// Best rank-r approximation of a complete matrix with a balanced split of
/// the singular values between the two factors.
pub fn truncated_factor(w: &TrackingMatrix, r: usize) -> Result<Factorization> {
    if !w.is_complete() {
        return Err(Error::Precondition(
            "truncated_factor needs a fully observed matrix; use alternating_factor".into(),
        ));
    }
    check_rank(w, r)?;
    let (motion, shape, spectrum) = svd_split(w.values(), r);
    let mut f = Factorization {
        motion,
        shape,
        rank: r,
        residual_fro: 0.0,
        singular_values: spectrum,
        iterations: 0,
    };
    f.residual_fro = frobenius_error(w, &f, None)?;
    Ok(f)
}

fn svd_split(values: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let mut svd = svd_sorted(values);
    svd.fix_signs();
    let mut motion = svd.u.columns(0, r).into_owned();
    let mut shape = svd.vt.rows(0, r).into_owned();
    for k in 0..r {
        let root = svd.s[k].sqrt();
        motion.column_mut(k).scale_mut(root);
        shape.row_mut(k).scale_mut(root);
    }
    (motion, shape, svd.s)
}

/// Square root of Σ w_ij ‖x_ij − M̂_i ŝ_j‖² over observed cells, with unit
/// weights when none are given.
pub fn frobenius_error(
    w: &TrackingMatrix,
    f: &Factorization,
    weights: Option<&WeightMatrix>,
) -> Result<f64> {
    if f.motion.nrows() != w.values().nrows() || f.shape.ncols() != w.points() {
        return Err(Error::DimensionMismatch(format!(
            "factorization is {}x{}, tracking is {}x{}",
            f.motion.nrows(),
            f.shape.ncols(),
            w.values().nrows(),
            w.points()
        )));
    }
    check_weights(w, weights)?;
    let p = f.product();
    let mut acc = 0.0;
    for i in 0..w.frames() {
        for j in 0..w.points() {
            if !w.mask().get(i, j) {
                continue;
            }
            let wt = weights.map_or(1.0, |x| x.get(i, j));
            let du = w.values()[(2 * i, j)] - p[(2 * i, j)];
            let dv = w.values()[(2 * i + 1, j)] - p[(2 * i + 1, j)];
            acc += wt * (du * du + dv * dv);
        }
    }
    Ok(acc.sqrt())
}

/// Checks that every frame has at least `r` observations and every point at
/// least ⌈r/2⌉. This is a cheap guard against obviously underdetermined
/// solves, not a guarantee of a unique solution.
pub fn check_solvability(mask: &Mask, r: usize) -> Result<()> {
    for i in 0..mask.frames() {
        let have = mask.frame_count(i);
        if have < r {
            return Err(Error::Solvability { what: "frame", index: i, have, need: r });
        }
    }
    let need = r.div_ceil(2);
    for j in 0..mask.points() {
        let have = mask.point_count(j);
        if have < need {
            return Err(Error::Solvability { what: "point", index: j, have, need });
        }
    }
    Ok(())
}

/// Masked, weighted alternating least squares.
///
/// Minimizes Σ w_ij ‖x_ij − M̂_i ŝ_j‖² over observed cells. Each sweep solves
/// all frames with Ŝ fixed and then all points with M̂ fixed. Without `init`
/// the start is the truncated SVD of the matrix with missing cells filled by
/// their frame's observed mean.
pub fn alternating_factor(
    w: &TrackingMatrix,
    r: usize,
    init: Option<&Factorization>,
    weights: Option<&WeightMatrix>,
    cfg: &SolverConfig,
) -> Result<Factorization> {
    alternating_factor_traced(w, r, init, weights, cfg).map(|(f, _)| f)
}

/// As [`alternating_factor`], also returning the objective after
/// initialization and after every sweep.
pub fn alternating_factor_traced(
    w: &TrackingMatrix,
    r: usize,
    init: Option<&Factorization>,
    weights: Option<&WeightMatrix>,
    cfg: &SolverConfig,
) -> Result<(Factorization, Vec<f64>)> {
    check_rank(w, r)?;
    check_weights(w, weights)?;
    check_solvability(w.mask(), r)?;
    let (m, n) = (w.frames(), w.points());

    let mut als = Als::new(w, r, weights);
    match init {
        Some(f) => {
            if f.rank != r || f.frames() != m || f.points() != n {
                return Err(Error::DimensionMismatch(format!(
                    "init is rank {} over {}x{}, expected rank {r} over {m}x{n}",
                    f.rank,
                    f.frames(),
                    f.points()
                )));
            }
            als.load(&f.motion, &f.shape);
        }
        None => {
            let (motion, shape, _) = svd_split(&als.imputed(), r);
            als.load(&motion, &shape);
        }
    }

    let floor = 1e-24 * als.data_energy();
    let mut obj = als.objective();
    let mut trace = vec![obj];
    let mut iterations = 0;
    while iterations < cfg.max_iters && obj > floor {
        let prev = (als.m.clone(), als.s.clone());
        als.solve_frames(cfg.parallelism);
        als.solve_points(cfg.parallelism);
        iterations += 1;
        let next = als.objective();
        trace.push(next);
        if next > obj {
            // Round-off only; keep the better iterate.
            als.m = prev.0;
            als.s = prev.1;
            break;
        }
        let rel = (obj - next) / obj;
        obj = next;
        if rel < cfg.tol {
            break;
        }
    }

    let motion = DMatrix::from_row_slice(2 * m, r, &als.m);
    let shape = DMatrix::from_column_slice(r, n, &als.s);
    let singular_values = product_spectrum(&motion, &shape);
    Ok((
        Factorization { motion, shape, rank: r, residual_fro: obj.sqrt(), singular_values, iterations },
        trace,
    ))
}

/// Flat working state for the alternation.
struct Als {
    m_frames: usize,
    n: usize,
    r: usize,
    xu: Vec<f64>,
    xv: Vec<f64>,
    /// Effective weight: zero on masked-out cells.
    wt: Vec<f64>,
    /// Motion, row-major 2m×r.
    m: Vec<f64>,
    /// Shape, column j stored contiguously.
    s: Vec<f64>,
}

impl Als {
    fn new(w: &TrackingMatrix, r: usize, weights: Option<&WeightMatrix>) -> Self {
        let (m, n) = (w.frames(), w.points());
        let mut xu = vec![0.0; m * n];
        let mut xv = vec![0.0; m * n];
        let mut wt = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                if w.mask().get(i, j) {
                    let c = i * n + j;
                    xu[c] = w.values()[(2 * i, j)];
                    xv[c] = w.values()[(2 * i + 1, j)];
                    wt[c] = weights.map_or(1.0, |x| x.get(i, j));
                }
            }
        }
        Als { m_frames: m, n, r, xu, xv, wt, m: vec![0.0; 2 * m * r], s: vec![0.0; n * r] }
    }

    fn load(&mut self, motion: &DMatrix<f64>, shape: &DMatrix<f64>) {
        for row in 0..2 * self.m_frames {
            for k in 0..self.r {
                self.m[row * self.r + k] = motion[(row, k)];
            }
        }
        for j in 0..self.n {
            for k in 0..self.r {
                self.s[j * self.r + k] = shape[(k, j)];
            }
        }
    }

    fn data_energy(&self) -> f64 {
        (0..self.wt.len())
            .map(|c| self.wt[c] * (self.xu[c] * self.xu[c] + self.xv[c] * self.xv[c]))
            .sum()
    }

    /// Dense copy with unusable cells (masked out or zero weight) replaced by
    /// the frame mean of the usable ones.
    fn imputed(&self) -> DMatrix<f64> {
        let (m, n) = (self.m_frames, self.n);
        let mut out = DMatrix::zeros(2 * m, n);
        for i in 0..m {
            let (mut su, mut sv, mut cnt) = (0.0, 0.0, 0usize);
            for j in 0..n {
                let c = i * n + j;
                if self.wt[c] > 0.0 {
                    su += self.xu[c];
                    sv += self.xv[c];
                    cnt += 1;
                }
            }
            let (mu, mv) = if cnt > 0 { (su / cnt as f64, sv / cnt as f64) } else { (0.0, 0.0) };
            for j in 0..n {
                let c = i * n + j;
                let used = self.wt[c] > 0.0;
                out[(2 * i, j)] = if used { self.xu[c] } else { mu };
                out[(2 * i + 1, j)] = if used { self.xv[c] } else { mv };
            }
        }
        out
    }

    fn objective(&self) -> f64 {
        let (n, r) = (self.n, self.r);
        let mut acc = 0.0;
        for i in 0..self.m_frames {
            let mu = &self.m[2 * i * r..(2 * i + 1) * r];
            let mv = &self.m[(2 * i + 1) * r..(2 * i + 2) * r];
            for j in 0..n {
                let c = i * n + j;
                let w = self.wt[c];
                if w == 0.0 {
                    continue;
                }
                let s = &self.s[j * r..(j + 1) * r];
                let du = self.xu[c] - dot(mu, s);
                let dv = self.xv[c] - dot(mv, s);
                acc += w * (du * du + dv * dv);
            }
        }
        acc
    }

    fn solve_frames(&mut self, par: Parallelism) {
        let (n, r) = (self.n, self.r);
        let this = &*self;
        let rows = map_indexed(self.m_frames, par, |i| {
            let mut a = DMatrix::zeros(r, r);
            let mut b = DMatrix::zeros(r, 2);
            for j in 0..n {
                let c = i * n + j;
                let w = this.wt[c];
                if w == 0.0 {
                    continue;
                }
                let s = &this.s[j * r..(j + 1) * r];
                for p in 0..r {
                    let ws = w * s[p];
                    for q in 0..=p {
                        a[(p, q)] += ws * s[q];
                    }
                    b[(p, 0)] += ws * this.xu[c];
                    b[(p, 1)] += ws * this.xv[c];
                }
            }
            symmetrize_lower(&mut a);
            solve_small(a, &b)
        });
        for (i, x) in rows.into_iter().enumerate() {
            for k in 0..r {
                self.m[2 * i * r + k] = x[(k, 0)];
                self.m[(2 * i + 1) * r + k] = x[(k, 1)];
            }
        }
    }

    fn solve_points(&mut self, par: Parallelism) {
        let (m, n, r) = (self.m_frames, self.n, self.r);
        // Per-frame Gram matrices M_iᵀ M_i, lower triangle.
        let mut gram = vec![0.0; m * r * r];
        for i in 0..m {
            let mu = &self.m[2 * i * r..(2 * i + 1) * r];
            let mv = &self.m[(2 * i + 1) * r..(2 * i + 2) * r];
            let g = &mut gram[i * r * r..(i + 1) * r * r];
            for p in 0..r {
                for q in 0..=p {
                    g[p * r + q] = mu[p] * mu[q] + mv[p] * mv[q];
                }
            }
        }
        let this = &*self;
        let gram = &gram;
        let cols = map_indexed(n, par, |j| {
            let mut a = DMatrix::zeros(r, r);
            let mut b = DMatrix::zeros(r, 1);
            for i in 0..m {
                let c = i * n + j;
                let w = this.wt[c];
                if w == 0.0 {
                    continue;
                }
                let g = &gram[i * r * r..(i + 1) * r * r];
                let mu = &this.m[2 * i * r..(2 * i + 1) * r];
                let mv = &this.m[(2 * i + 1) * r..(2 * i + 2) * r];
                let (xu, xv) = (this.xu[c], this.xv[c]);
                for p in 0..r {
                    for q in 0..=p {
                        a[(p, q)] += w * g[p * r + q];
                    }
                    b[(p, 0)] += w * (xu * mu[p] + xv * mv[p]);
                }
            }
            symmetrize_lower(&mut a);
            solve_small(a, &b)
        });
        for (j, x) in cols.into_iter().enumerate() {
            for k in 0..r {
                self.s[j * r + k] = x[(k, 0)];
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetrize_lower(a: &mut DMatrix<f64>) {
    let r = a.nrows();
    for p in 0..r {
        for q in 0..p {
            a[(q, p)] = a[(p, q)];
        }
    }
}

/// Cholesky with a pseudo-inverse fallback for rank-deficient normal
/// equations (e.g. zero-weight cells leaving a direction unconstrained).
fn solve_small(a: DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = a.diagonal().amax();
    if scale > 0.0 {
        if let Some(ch) = a.clone().cholesky() {
            // Cholesky succeeds on some numerically singular systems; only
            // trust it when the factor is reasonably conditioned.
            let l = ch.l_dirty();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for k in 0..l.nrows() {
                lo = lo.min(l[(k, k)].abs());
                hi = hi.max(l[(k, k)].abs());
            }
            if lo > hi * 1e-7 {
                return ch.solve(b);
            }
        }
    }
    pinv_solve(&a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn low_rank(rows: usize, cols: usize, r: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(rows, r, |i, k| ((i * 7 + k * 3) % 11) as f64 - 5.0);
        let b = DMatrix::from_fn(r, cols, |k, j| ((k * 5 + j * 2) % 7) as f64 - 3.0 + 0.1 * j as f64);
        a * b
    }

    #[test]
    fn exact_low_rank_has_tiny_residual() {
        let w = TrackingMatrix::complete(low_rank(8, 10, 3)).unwrap();
        let f = truncated_factor(&w, 3).unwrap();
        assert!(f.residual_fro < 1e-9 * f.singular_values[0]);
        assert_eq!((f.motion.ncols(), f.shape.nrows(), f.rank), (3, 3, 3));
    }

    #[test]
    fn balanced_split() {
        let w = TrackingMatrix::complete(low_rank(6, 9, 2)).unwrap();
        let f = truncated_factor(&w, 2).unwrap();
        for k in 0..2 {
            let a = f.motion.column(k).norm();
            let b = f.shape.row(k).norm();
            assert!((a - b).abs() < 1e-10 * a);
            assert!((a * a - f.singular_values[k]).abs() < 1e-10 * f.singular_values[k]);
        }
    }

    #[test]
    fn truncated_needs_complete_data() {
        let mut v = low_rank(4, 5, 2);
        v[(0, 0)] = f64::NAN;
        let w = TrackingMatrix::from_values(v).unwrap();
        assert!(matches!(truncated_factor(&w, 2), Err(Error::Precondition(_))));
        let w = TrackingMatrix::complete(low_rank(4, 5, 2)).unwrap();
        assert!(matches!(truncated_factor(&w, 0), Err(Error::Argument(_))));
        assert!(matches!(truncated_factor(&w, 5), Err(Error::Argument(_))));
    }

    #[test]
    fn single_cell_perturbation() {
        let base = low_rank(6, 8, 2);
        let w0 = TrackingMatrix::complete(base.clone()).unwrap();
        let f = truncated_factor(&w0, 2).unwrap();
        let exact = Factorization::from_factors(f.motion.clone(), f.shape.clone()).unwrap();
        let mut pert = f.product();
        pert[(3, 4)] += 0.25;
        let w = TrackingMatrix::complete(pert).unwrap();
        let e = frobenius_error(&w, &exact, None).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        let half = WeightMatrix::from_mask(w.mask()).scaled(0.5).unwrap();
        let eh = frobenius_error(&w, &exact, Some(&half)).unwrap();
        assert!((eh - e / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn solvability_names_index() {
        let mut mask = Mask::filled(3, 6, true);
        for j in 0..4 {
            mask.set(1, j, false);
        }
        match check_solvability(&mask, 3) {
            Err(Error::Solvability { what: "frame", index: 1, have: 2, need: 3 }) => {}
            other => panic!("{other:?}"),
        }
        let mut mask = Mask::filled(4, 6, true);
        for i in 0..3 {
            mask.set(i, 5, false);
        }
        assert!(matches!(
            check_solvability(&mask, 3),
            Err(Error::Solvability { what: "point", index: 5, .. })
        ));
    }

    #[test]
    fn weights_validate_range() {
        assert!(WeightMatrix::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(WeightMatrix::new(1, 2, vec![0.5, f64::NAN]).is_err());
        assert!(WeightMatrix::new(1, 2, vec![0.5]).is_err());
    }
}
