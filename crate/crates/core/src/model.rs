//! Shape-basis deformation model: per-frame shapes are weighted sums of k
//! rigid bases, imaged by affine cameras.

use nalgebra::{DMatrix, Matrix2x3, Matrix2xX, Matrix3, Matrix3xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complete_rotation, polar_rows, svd_sorted};
use crate::par::{map_indexed, Parallelism};
use crate::tracking::TrackingMatrix;

/// k rigid 3×n bases.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeBases {
    bases: Vec<Matrix3xX<f64>>,
}

impl ShapeBases {
    pub fn new(bases: Vec<Matrix3xX<f64>>) -> Result<Self> {
        let first = bases.first().ok_or_else(|| Error::Argument("need at least one basis".into()))?;
        let n = first.ncols();
        if bases.iter().any(|b| b.ncols() != n) {
            return Err(Error::DimensionMismatch("bases disagree on point count".into()));
        }
        if bases.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Argument("bases must be finite".into()));
        }
        Ok(ShapeBases { bases })
    }

    /// Splits a stacked 3k×n matrix into k bases.
    pub fn from_stacked(stacked: &DMatrix<f64>) -> Result<Self> {
        if stacked.nrows() == 0 || stacked.nrows() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "stacked bases need a multiple of 3 rows, got {}",
                stacked.nrows()
            )));
        }
        let n = stacked.ncols();
        let bases = (0..stacked.nrows() / 3)
            .map(|l| Matrix3xX::from_fn(n, |r, c| stacked[(3 * l + r, c)]))
            .collect();
        ShapeBases::new(bases)
    }

    pub fn k(&self) -> usize {
        self.bases.len()
    }
    pub fn points(&self) -> usize {
        self.bases[0].ncols()
    }
    pub fn bases(&self) -> &[Matrix3xX<f64>] {
        &self.bases
    }

    /// The 3k×n stack B = [B_1; …; B_k].
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.points();
        DMatrix::from_fn(3 * self.k(), n, |r, c| self.bases[r / 3][(r % 3, c)])
    }
}

/// m×k deformation weights ω_il.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationWeights {
    pub weights: DMatrix<f64>,
}

impl DeformationWeights {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("weights must be finite".into()));
        }
        Ok(DeformationWeights { weights })
    }

    /// All-ones weights for a rigid (k = 1) sequence.
    pub fn rigid(frames: usize) -> Self {
        DeformationWeights { weights: DMatrix::from_element(frames, 1, 1.0) }
    }

    pub fn frames(&self) -> usize {
        self.weights.nrows()
    }
    pub fn k(&self) -> usize {
        self.weights.ncols()
    }
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.weights.row(i).iter().copied().collect()
    }
}

/// x = A X + c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCamera {
    pub a: Matrix2x3<f64>,
    pub c: Vector2<f64>,
}

impl AffineCamera {
    pub fn new(a: Matrix2x3<f64>, c: Vector2<f64>) -> Result<Self> {
        let s = a.singular_values();
        if !(s[1] > 1e-12 * s[0]) {
            return Err(Error::Argument("camera matrix must have rank 2".into()));
        }
        Ok(AffineCamera { a, c })
    }

    /// Scaled orthographic camera s·[first two rows of R] with offset c.
    pub fn scaled_orthographic(rotation: &Matrix3<f64>, scale: f64, c: Vector2<f64>) -> Self {
        AffineCamera { a: rotation.fixed_rows::<2>(0).into_owned() * scale, c }
    }
}

/// Rotation, isotropic scale and image translation of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EuclideanMotion {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector2<f64>,
}

impl EuclideanMotion {
    /// The affine camera this motion induces.
    pub fn camera(&self) -> AffineCamera {
        AffineCamera::scaled_orthographic(&self.rotation, self.scale, self.translation)
    }
}

/// Σ_l ω_l B_l.
pub fn compose_shape(bases: &ShapeBases, w: &[f64]) -> Result<Matrix3xX<f64>> {
    if w.len() != bases.k() {
        return Err(Error::Argument(format!("{} weights for {} bases", w.len(), bases.k())));
    }
    let mut out = Matrix3xX::zeros(bases.points());
    for (b, &wl) in bases.bases.iter().zip(w) {
        out += b * wl;
    }
    Ok(out)
}

/// Images a 3×n point set.
pub fn project_frame(cam: &AffineCamera, shape: &Matrix3xX<f64>) -> Matrix2xX<f64> {
    let mut out = cam.a * shape;
    for mut col in out.column_iter_mut() {
        col += cam.c;
    }
    out
}

/// The structured 2m×(3k+1) motion matrix [ω_i1 A_i … ω_ik A_i | c_i].
pub fn structured_motion(cams: &[AffineCamera], weights: &DeformationWeights) -> Result<DMatrix<f64>> {
    if cams.len() != weights.frames() {
        return Err(Error::DimensionMismatch(format!(
            "{} cameras for {} weight rows",
            cams.len(),
            weights.frames()
        )));
    }
    let k = weights.k();
    let mut m = DMatrix::zeros(2 * cams.len(), 3 * k + 1);
    for (i, cam) in cams.iter().enumerate() {
        for l in 0..k {
            let w = weights.weights[(i, l)];
            for r in 0..2 {
                for c in 0..3 {
                    m[(2 * i + r, 3 * l + c)] = w * cam.a[(r, c)];
                }
            }
        }
        m[(2 * i, 3 * k)] = cam.c[0];
        m[(2 * i + 1, 3 * k)] = cam.c[1];
    }
    Ok(m)
}

/// Forward model: a complete tracking matrix from cameras, bases and weights.
pub fn build_tracking(
    cams: &[AffineCamera],
    bases: &ShapeBases,
    weights: &DeformationWeights,
) -> Result<TrackingMatrix> {
    if weights.k() != bases.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight columns for {} bases",
            weights.k(),
            bases.k()
        )));
    }
    let m = cams.len();
    let n = bases.points();
    let mut values = DMatrix::zeros(2 * m, n);
    for (i, cam) in cams.iter().enumerate() {
        let shape = compose_shape(bases, &weights.row(i))?;
        let img = project_frame(cam, &shape);
        values.rows_mut(2 * i, 2).copy_from(&img);
    }
    TrackingMatrix::complete(values)
}

/// Per-frame result of splitting a motion block into a rotation and weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FrameSplit {
    pub(crate) rows: Matrix2x3<f64>,
    pub(crate) omega: [f64; MAX_K],
}

pub(crate) const MAX_K: usize = 8;

/// Splits one 2×3k frame block into a common pair of rotation rows and k
/// signed scale-times-weight coefficients.
pub(crate) fn split_frame(block: &DMatrix<f64>, k: usize, frame: usize) -> Result<FrameSplit> {
    let sub = |l: usize| -> Matrix2x3<f64> { Matrix2x3::from_fn(|r, c| block[(r, 3 * l + c)]) };
    // Rank-1 fit of the k×6 matrix whose row l is vec(B_l) = ω_l vec(R).
    let z = DMatrix::from_fn(k, 6, |l, e| sub(l)[(e / 3, e % 3)]);
    let svd = svd_sorted(&z);
    if svd.s[0] <= 0.0 || !svd.s[0].is_finite() {
        return Err(Error::DegenerateFrame { frame });
    }
    let mut omega = [0.0; MAX_K];
    for l in 0..k {
        omega[l] = svd.u[(l, 0)] * svd.s[0];
    }
    let mut rows = Matrix2x3::from_fn(|r, c| svd.vt[(0, 3 * r + c)]);
    for _ in 0..2 {
        let mut acc = Matrix2x3::zeros();
        for l in 0..k {
            acc += sub(l) * omega[l];
        }
        if acc.norm() == 0.0 {
            return Err(Error::DegenerateFrame { frame });
        }
        rows = polar_rows(&acc).0;
        for l in 0..k {
            omega[l] = sub(l).component_mul(&rows).sum() / 2.0;
        }
    }
    // Sign goes into the weights: first nonzero weight is nonnegative.
    let tiny = 1e-12 * omega[..k].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(first) = omega[..k].iter().find(|v| v.abs() > tiny) {
        if *first < 0.0 {
            rows = -rows;
            for w in omega[..k].iter_mut() {
                *w = -*w;
            }
        }
    }
    Ok(FrameSplit { rows, omega })
}

/// Procrustes decomposition of a metric 2m×3k motion matrix into rotations,
/// one sequence-wide scale and deformation weights.
///
/// Camera scale and weight magnitude are not separable frame by frame. For
/// k = 1 the weights are fixed to one and each frame keeps its own scale; for
/// k ≥ 2 the scale is the RMS weight-vector norm over the sequence and the
/// weights are expressed relative to it. Translations are zero; the caller
/// fills them in.
pub fn decompose_motion(
    motion: &DMatrix<f64>,
    k: usize,
    par: Parallelism,
) -> Result<(Vec<EuclideanMotion>, DeformationWeights)> {
    if k == 0 || k > MAX_K {
        return Err(Error::Argument(format!("basis count {k} outside 1..={MAX_K}")));
    }
    if motion.nrows() % 2 != 0 || motion.ncols() != 3 * k {
        return Err(Error::DimensionMismatch(format!(
            "motion is {}x{}, expected 2m x {}",
            motion.nrows(),
            motion.ncols(),
            3 * k
        )));
    }
    let m = motion.nrows() / 2;
    let splits = map_indexed(m, par, |i| split_frame(&motion.rows(2 * i, 2).into_owned(), k, i));
    let splits: Vec<FrameSplit> = splits.into_iter().collect::<Result<_>>()?;

    let mean_sq: f64 =
        splits.iter().map(|s| s.omega[..k].iter().map(|w| w * w).sum::<f64>()).sum::<f64>() / m as f64;
    let scale = mean_sq.sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegenerateFrame { frame: 0 });
    }
    let mut weights = DMatrix::zeros(m, k);
    let mut motions = Vec::with_capacity(m);
    for (i, s) in splits.iter().enumerate() {
        // A rigid sequence has unit weights; each frame's magnitude is its
        // camera scale.
        let frame_scale = if k == 1 { s.omega[0] } else { scale };
        if !(frame_scale > 0.0) {
            return Err(Error::DegenerateFrame { frame: i });
        }
        for l in 0..k {
            weights[(i, l)] = s.omega[l] / frame_scale;
        }
        motions.push(EuclideanMotion {
            rotation: complete_rotation(&s.rows),
            scale: frame_scale,
            translation: Vector2::zeros(),
        });
    }
    Ok((motions, DeformationWeights { weights }))
}

/// Rebuilds the 2m×3k motion matrix [s ω_i1 R̄_i … s ω_ik R̄_i].
pub fn recompose_motion(motions: &[EuclideanMotion], weights: &DeformationWeights) -> DMatrix<f64> {
    let k = weights.k();
    let mut out = DMatrix::zeros(2 * motions.len(), 3 * k);
    for (i, mo) in motions.iter().enumerate() {
        for l in 0..k {
            let f = mo.scale * weights.weights[(i, l)];
            for r in 0..2 {
                for c in 0..3 {
                    out[(2 * i + r, 3 * l + c)] = f * mo.rotation[(r, c)];
                }
            }
        }
    }
    out
}
