//! Deformable-cube benchmark generator.
//!
//! A cube of side `cube_side` centred at the origin. Static points are spread
//! evenly by arc length along its twelve edges; three sets of dynamic points
//! sit in 3-row grids on the +x, +y and +z faces and move outward along the
//! face normal, linearly in the frame index, by `amplitude · cube_side` over
//! the sequence. The whole scene is therefore a k = 2 shape-basis model: the
//! rest shape plus a unit displacement field, with weights (1, tᵢ).
//!
//! The point total is `12 · side_points`, shared between edges and faces, so
//! the defaults give 153 edge points and 3 × 33 face points, 252 in all.
//!
//! Cameras are scaled orthographic with a uniformly random rotation per frame,
//! one scale that keeps every point inside the image, and the image centre as
//! the projection of the origin. All randomness comes from [`crate::rng`].

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{project_frame, AffineCamera, DeformationWeights, ShapeBases};
use crate::rng;
use crate::tracking::{Mask, MaskRle, TrackingMatrix};

/// Scene and corruption parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub frames: usize,
    pub side_points: usize,
    pub dynamic_sets: usize,
    pub dynamic_set_size: usize,
    pub image_size: u32,
    pub noise_sigma: f64,
    pub outlier_ratio: f64,
    pub seed: u64,
    pub cube_side: f64,
    /// Outward travel of the dynamic points over the sequence, in cube sides.
    pub amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames: 100,
            side_points: 21,
            dynamic_sets: 3,
            dynamic_set_size: 33,
            image_size: 800,
            noise_sigma: 0.0,
            outlier_ratio: 0.0,
            seed: 0,
            cube_side: 100.0,
            amplitude: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn points(&self) -> usize {
        12 * self.side_points
    }

    fn static_points(&self) -> usize {
        self.points().saturating_sub(self.dynamic_sets * self.dynamic_set_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if self.side_points == 0 {
            return bad("side_points must be positive");
        }
        if self.dynamic_sets > 3 {
            return bad("at most 3 dynamic sets (one per visible face)");
        }
        if self.dynamic_sets * self.dynamic_set_size > self.points() {
            return bad("dynamic points exceed the point budget of 12 * side_points");
        }
        if self.image_size == 0 {
            return bad("image_size must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return bad("outlier_ratio must lie in [0, 1)");
        }
        if !(self.cube_side > 0.0 && self.cube_side.is_finite()) {
            return bad("cube_side must be positive");
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite");
        }
        Ok(())
    }
}

/// Everything known about a generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGroundTruth {
    pub shapes: Vec<Matrix3xX<f64>>,
    pub cameras: Vec<AffineCamera>,
    pub rotations: Vec<Matrix3<f64>>,
    pub clean_tracking: TrackingMatrix,
    /// True where corruption replaced the cell with an outlier.
    pub outlier_mask: Mask,
    pub bases: ShapeBases,
    pub weights: DeformationWeights,
}

impl SceneGroundTruth {
    pub fn frames(&self) -> usize {
        self.shapes.len()
    }
    pub fn points(&self) -> usize {
        self.clean_tracking.points()
    }
}

fn cube_edges(half: f64) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut edges = Vec::with_capacity(12);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for sa in [-1.0, 1.0] {
            for sb in [-1.0, 1.0] {
                let mut p = Vector3::zeros();
                p[a] = sa * half;
                p[b] = sb * half;
                let mut q = p;
                p[axis] = -half;
                q[axis] = half;
                edges.push((p, q));
            }
        }
    }
    edges
}

/// Rest positions and unit displacement of every point.
fn layout(cfg: &SceneConfig) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
    let n = cfg.points();
    let side = cfg.cube_side;
    let half = 0.5 * side;
    let mut rest = Matrix3xX::zeros(n);
    let mut disp = Matrix3xX::zeros(n);

    let n_static = cfg.static_points();
    let edges = cube_edges(half);
    let spacing = 12.0 * side / n_static.max(1) as f64;
    for q in 0..n_static {
        let s = (q as f64 + 0.5) * spacing;
        let e = ((s / side) as usize).min(11);
        let t = (s - e as f64 * side) / side;
        let (a, b) = edges[e];
        rest.set_column(q, &(a + (b - a) * t));
    }

    let size = cfg.dynamic_set_size;
    let rows = 3.min(size.max(1));
    let cols = size.div_ceil(rows).max(1);
    let mut col = n_static;
    for set in 0..cfg.dynamic_sets {
        let axis = set;
        let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut normal = Vector3::zeros();
        normal[axis] = 1.0;
        for q in 0..size {
            let (r, c) = (q / cols, q % cols);
            let mut p = Vector3::zeros();
            p[axis] = half;
            p[ua] = side * 0.6 * ((r as f64 + 0.5) / rows as f64 - 0.5);
            p[va] = side * 0.8 * ((c as f64 + 0.5) / cols as f64 - 0.5);
            rest.set_column(col, &p);
            disp.set_column(col, &(normal * (cfg.amplitude * side)));
            col += 1;
        }
    }
    (rest, disp)
}

fn random_rotation(gen: &mut rand_chacha::ChaCha20Rng, normal: &mut rng::Normal) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(normal.sample(gen), normal.sample(gen), normal.sample(gen), normal.sample(gen));
        if q.norm() > 1e-12 {
            return *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
        }
    }
}

/// Generates the clean scene. The outlier mask is all false until
/// [`corrupt`] runs.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneGroundTruth> {
    cfg.validate()?;
    let m = cfg.frames;
    let n = cfg.points();
    let (rest, disp) = layout(cfg);
    let t = |i: usize| if m > 1 { i as f64 / (m - 1) as f64 } else { 0.0 };
    let shapes: Vec<Matrix3xX<f64>> = (0..m).map(|i| &rest + &disp * t(i)).collect();

    let radius = shapes
        .iter()
        .flat_map(|s| s.column_iter().map(|c| c.norm()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    let size = cfg.image_size as f64;
    let scale = if radius > 0.0 { 0.45 * size / radius } else { 1.0 };
    let center = Vector2::new(0.5 * size, 0.5 * size);

    let mut gen = rng::stream(cfg.seed, rng::SCENE_STREAM);
    let mut normal = rng::Normal::new();
    let rotations: Vec<Matrix3<f64>> = (0..m).map(|_| random_rotation(&mut gen, &mut normal)).collect();
    let cameras: Vec<AffineCamera> =
        rotations.iter().map(|r| AffineCamera::scaled_orthographic(r, scale, center)).collect();

    let clean_tracking = project_all(&cameras, &shapes)?;
    let bases = ShapeBases::new(vec![rest, disp])?;
    let weights = DeformationWeights::new(DMatrix::from_fn(m, 2, |i, l| if l == 0 { 1.0 } else { t(i) }))?;
    Ok(SceneGroundTruth {
        shapes,
        cameras,
        rotations,
        clean_tracking,
        outlier_mask: Mask::filled(m, n, false),
        bases,
        weights,
    })
}

fn project_all(cameras: &[AffineCamera], shapes: &[Matrix3xX<f64>]) -> Result<TrackingMatrix> {
    let n = shapes.first().map_or(0, |s| s.ncols());
    let mut values = DMatrix::zeros(2 * shapes.len(), n);
    for (i, (cam, shape)) in cameras.iter().zip(shapes).enumerate() {
        values.rows_mut(2 * i, 2).copy_from(&project_frame(cam, shape));
    }
    TrackingMatrix::complete(values)
}

/// Adds Gaussian noise to every coordinate, then replaces exactly
/// round(ratio · m · n) uniformly chosen cells with uniform draws over the
/// image. Records the replaced cells in `gt.outlier_mask`.
pub fn corrupt(gt: &mut SceneGroundTruth, cfg: &SceneConfig) -> Result<TrackingMatrix> {
    cfg.validate()?;
    let (m, n) = (gt.frames(), gt.points());
    let mut gen = rng::stream(cfg.seed, rng::CORRUPTION_STREAM);
    let mut normal = rng::Normal::new();
    let mut values = gt.clean_tracking.values().clone();
    // Noise is drawn even at σ = 0 so outlier placement does not depend on σ.
    for i in 0..m {
        for j in 0..n {
            for r in 0..2 {
                let z = normal.sample(&mut gen);
                values[(2 * i + r, j)] += cfg.noise_sigma * z;
            }
        }
    }
    let cells = m * n;
    let count = ((cfg.outlier_ratio * cells as f64).round() as usize).min(cells);
    let mut order: Vec<usize> = (0..cells).collect();
    let mut mask = Mask::filled(m, n, false);
    let size = cfg.image_size as f64;
    for t in 0..count {
        let pick = t + rng::below(&mut gen, (cells - t) as u64) as usize;
        order.swap(t, pick);
        let c = order[t];
        let (i, j) = (c / n, c % n);
        values[(2 * i, j)] = rng::uniform(&mut gen) * size;
        values[(2 * i + 1, j)] = rng::uniform(&mut gen) * size;
        mask.set(i, j, true);
    }
    gt.outlier_mask = mask;
    TrackingMatrix::complete(values)
}

/// One camera in the ground-truth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    /// Row-major 2×3.
    pub a: [f64; 6],
    pub c: [f64; 2],
}

/// Serialized ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub format_version: u32,
    pub config: SceneConfig,
    pub frames: usize,
    pub points: usize,
    pub cameras: Vec<CameraRecord>,
    /// Row-major 3×n per frame.
    pub shapes: Vec<Vec<f64>>,
    /// Row-major 3×n per basis.
    pub bases: Vec<Vec<f64>>,
    /// m rows of k weights.
    pub weights: Vec<Vec<f64>>,
    pub outlier_mask: MaskRle,
}

fn row_major3(s: &Matrix3xX<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * s.ncols());
    for r in 0..3 {
        v.extend(s.row(r).iter());
    }
    v
}

fn from_row_major3(v: &[f64], n: usize) -> Result<Matrix3xX<f64>> {
    if v.len() != 3 * n {
        return Err(Error::DimensionMismatch(format!("expected {} values, got {}", 3 * n, v.len())));
    }
    Ok(Matrix3xX::from_fn(n, |r, c| v[r * n + c]))
}

impl GroundTruthFile {
    pub fn from_truth(gt: &SceneGroundTruth, cfg: &SceneConfig) -> Self {
        GroundTruthFile {
            format_version: 1,
            config: cfg.clone(),
            frames: gt.frames(),
            points: gt.points(),
            cameras: gt
                .cameras
                .iter()
                .map(|c| CameraRecord {
                    a: [c.a[(0, 0)], c.a[(0, 1)], c.a[(0, 2)], c.a[(1, 0)], c.a[(1, 1)], c.a[(1, 2)]],
                    c: [c.c[0], c.c[1]],
                })
                .collect(),
            shapes: gt.shapes.iter().map(row_major3).collect(),
            bases: gt.bases.bases().iter().map(row_major3).collect(),
            weights: (0..gt.weights.frames()).map(|i| gt.weights.row(i)).collect(),
            outlier_mask: MaskRle::from(&gt.outlier_mask),
        }
    }

    /// Rebuilds the ground truth; the clean tracking matrix is re-projected.
    pub fn to_truth(&self) -> Result<SceneGroundTruth> {
        let (m, n) = (self.frames, self.points);
        if self.cameras.len() != m || self.shapes.len() != m || self.weights.len() != m {
            return Err(Error::DimensionMismatch("ground truth frame counts disagree".into()));
        }
        let cameras: Vec<AffineCamera> = self
            .cameras
            .iter()
            .map(|c| AffineCamera {
                a: nalgebra::Matrix2x3::from_row_slice(&c.a),
                c: Vector2::new(c.c[0], c.c[1]),
            })
            .collect();
        let shapes = self.shapes.iter().map(|s| from_row_major3(s, n)).collect::<Result<Vec<_>>>()?;
        let bases = ShapeBases::new(self.bases.iter().map(|b| from_row_major3(b, n)).collect::<Result<Vec<_>>>()?)?;
        let k = bases.k();
        if self.weights.iter().any(|w| w.len() != k) {
            return Err(Error::DimensionMismatch("weight rows disagree with basis count".into()));
        }
        let weights = DeformationWeights::new(DMatrix::from_fn(m, k, |i, l| self.weights[i][l]))?;
        let rotations = cameras
            .iter()
            .map(|c| {
                let s = c.a.row(0).norm();
                let rows = c.a / s;
                crate::linalg::complete_rotation(&rows)
            })
            .collect();
        let outlier_mask = Mask::try_from(&self.outlier_mask)?;
        if outlier_mask.frames() != m || outlier_mask.points() != n {
            return Err(Error::DimensionMismatch("outlier mask shape disagrees".into()));
        }
        let clean_tracking = project_all(&cameras, &shapes)?;
        Ok(SceneGroundTruth { shapes, cameras, rotations, clean_tracking, outlier_mask, bases, weights })
    }
}
