#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Unit, UnitQuaternion, Vector2, Vector3, Vector4};
use nrsfm::model::build_tracking;
use nrsfm::{AffineCamera, DeformationWeights, ShapeBases, TrackingMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Sum of uniforms is plenty for test data.
    (0..12).map(|_| r.random::<f64>()).sum::<f64>() - 6.0
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gauss(r))
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Vector4::new(gauss(r), gauss(r), gauss(r), gauss(r));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q)).to_rotation_matrix().into_inner()
}

pub fn rotation_about(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle).to_rotation_matrix().into_inner()
}

pub fn camera(rot: &Matrix3<f64>, scale: f64, c: Vector2<f64>) -> AffineCamera {
    AffineCamera::scaled_orthographic(rot, scale, c)
}

/// Random scaled-orthographic cameras, Gaussian bases and weights whose
/// first column stays near one.
pub struct Forward {
    pub cams: Vec<AffineCamera>,
    pub rotations: Vec<Matrix3<f64>>,
    pub bases: ShapeBases,
    pub weights: DeformationWeights,
    pub w: TrackingMatrix,
}

pub fn forward(m: usize, n: usize, k: usize, seed: u64) -> Forward {
    let mut r = rng(seed);
    let rotations: Vec<Matrix3<f64>> = (0..m).map(|_| random_rotation(&mut r)).collect();
    let cams: Vec<AffineCamera> = rotations
        .iter()
        .map(|rot| {
            let s = 2.0 + r.random::<f64>();
            camera(rot, s, Vector2::new(400.0 + 50.0 * gauss(&mut r), 400.0 + 50.0 * gauss(&mut r)))
        })
        .collect();
    let bases = ShapeBases::new((0..k).map(|_| Matrix3xX::from_fn(n, |_, _| 50.0 * gauss(&mut r))).collect())
        .unwrap();
    let weights = DeformationWeights::new(DMatrix::from_fn(m, k, |_, l| {
        if l == 0 {
            1.0 + 0.1 * gauss(&mut r)
        } else {
            0.5 * gauss(&mut r)
        }
    }))
    .unwrap();
    let w = build_tracking(&cams, &bases, &weights).unwrap();
    Forward { cams, rotations, bases, weights, w }
}

pub fn noisy(w: &TrackingMatrix, sigma: f64, seed: u64) -> TrackingMatrix {
    let mut r = rng(seed);
    let v = w.values().map(|x| x + sigma * gauss(&mut r));
    TrackingMatrix::new(v, w.mask().clone()).unwrap()
}

pub fn rms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

pub fn ratio(s: &[f64], idx: usize) -> f64 {
    s.get(idx).copied().unwrap_or(0.0) / s[0]
}
