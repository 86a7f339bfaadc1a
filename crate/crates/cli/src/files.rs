//! The reconstruction JSON written by `reconstruct` and read by `eval`.

use nalgebra::{DMatrix, Matrix3xX, Vector2};
use nrsfm::robust::reproject;
use nrsfm::tracking::MaskRle;
use nrsfm::{Error, Factorization, Mask, Method, Reconstruction};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraOut {
    /// Row-major 3×3.
    pub rotation: [f64; 9],
    pub scale: f64,
    pub translation: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorOut {
    pub rank: usize,
    /// 2m rows of `rank` values.
    pub motion: Vec<Vec<f64>>,
    /// `rank` rows of n values.
    pub shape: Vec<Vec<f64>>,
    pub offsets: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionFile {
    pub format_version: u32,
    pub method: Method,
    pub k: usize,
    pub frames: usize,
    pub points: usize,
    pub cameras: Vec<CameraOut>,
    /// m rows of k weights.
    pub weights: Vec<Vec<f64>>,
    /// Row-major 3×n per basis.
    pub bases: Vec<Vec<f64>>,
    /// Row-major 3×n per frame.
    pub shapes: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homogeneous_row: Option<Vec<f64>>,
    pub factor: FactorOut,
    pub observed_mask: MaskRle,
    pub inlier_mask: MaskRle,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], ncols: usize, what: &str) -> nrsfm::Result<DMatrix<f64>> {
    if r.iter().any(|row| row.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{what}: rows must have {ncols} values")));
    }
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}

fn row_major3(s: &Matrix3xX<f64>) -> Vec<f64> {
    (0..3).flat_map(|r| s.row(r).iter().copied().collect::<Vec<_>>()).collect()
}

impl ReconstructionFile {
    pub fn new(method: Method, k: usize, observed: &Mask, rec: &Reconstruction) -> Self {
        let e = &rec.euclidean;
        let cameras = e
            .motions
            .iter()
            .map(|m| {
                let mut rotation = [0.0; 9];
                for r in 0..3 {
                    for c in 0..3 {
                        rotation[3 * r + c] = m.rotation[(r, c)];
                    }
                }
                CameraOut { rotation, scale: m.scale, translation: [m.translation[0], m.translation[1]] }
            })
            .collect();
        ReconstructionFile {
            format_version: 1,
            method,
            k,
            frames: observed.frames(),
            points: observed.points(),
            cameras,
            weights: rows(&e.weights.weights),
            bases: e.bases.bases().iter().map(row_major3).collect(),
            shapes: e.shapes.iter().map(row_major3).collect(),
            homogeneous_row: e.homogeneous_row.clone(),
            factor: FactorOut {
                rank: rec.factor.rank,
                motion: rows(&rec.factor.motion),
                shape: rows(&rec.factor.shape),
                offsets: rec.offsets.iter().map(|o| [o[0], o[1]]).collect(),
            },
            observed_mask: MaskRle::from(observed),
            inlier_mask: MaskRle::from(&rec.inlier_mask),
        }
    }

    /// The fitted image points: the factor product plus offsets.
    pub fn reprojection(&self) -> nrsfm::Result<DMatrix<f64>> {
        let f = &self.factor;
        if f.motion.len() != 2 * self.frames || f.shape.len() != f.rank {
            return Err(Error::DimensionMismatch("factor does not match the frame count".into()));
        }
        let fac = Factorization::from_factors(
            from_rows(&f.motion, f.rank, "motion")?,
            from_rows(&f.shape, self.points, "shape")?,
        )?;
        let offsets: Vec<Vector2<f64>> = f.offsets.iter().map(|o| Vector2::new(o[0], o[1])).collect();
        Ok(reproject(&fac, &offsets))
    }

    pub fn shape_clouds(&self) -> nrsfm::Result<Vec<Matrix3xX<f64>>> {
        let n = self.points;
        self.shapes
            .iter()
            .map(|v| {
                if v.len() != 3 * n {
                    return Err(Error::DimensionMismatch(format!("shape has {} values, expected {}", v.len(), 3 * n)));
                }
                Ok(Matrix3xX::from_fn(n, |r, c| v[r * n + c]))
            })
            .collect()
    }
}

/// One `x y z` line per point.
pub fn xyz(shape: &Matrix3xX<f64>) -> String {
    let mut s = String::with_capacity(shape.ncols() * 48);
    for c in shape.column_iter() {
        s.push_str(&format!("{} {} {}\n", c[0], c[1], c[2]));
    }
    s
}
