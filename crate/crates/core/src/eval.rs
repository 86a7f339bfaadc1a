//! Scoring against ground truth and the noise/outlier sweep.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_indexed, Parallelism};
use crate::robust::{factor_with, Audit, Method, Reconstruction, RobustConfig};
use crate::synth::{corrupt, generate_scene, SceneConfig, SceneGroundTruth};
use crate::tracking::{Mask, TrackingMatrix};

/// Notes attached to every metrics report so readers know how the numbers
/// were defined.
pub const METRIC_NOTES: [&str; 2] = [
    "reproj_variance_inliers is the mean squared 2D distance between the reprojection and the clean tracking, over cells that were not replaced by outliers",
    "shape_error is the mean 3D distance after one global similarity (mirror allowed), per-frame centroids removed, divided by the largest ground-truth frame diameter",
];

/// Mean squared distance between `reproj` and the clean tracking over
/// ground-truth inlier cells.
pub fn reprojection_variance(clean: &TrackingMatrix, outliers: &Mask, reproj: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = (clean.frames(), clean.points());
    if reproj.nrows() != 2 * m || reproj.ncols() != n || outliers.frames() != m || outliers.points() != n {
        return Err(Error::DimensionMismatch(format!(
            "reprojection is {}x{}, ground truth is {}x{}",
            reproj.nrows(),
            reproj.ncols(),
            2 * m,
            n
        )));
    }
    let mut acc = 0.0;
    let mut cnt = 0usize;
    for i in 0..m {
        for j in 0..n {
            if outliers.get(i, j) || !clean.mask().get(i, j) {
                continue;
            }
            let du = reproj[(2 * i, j)] - clean.values()[(2 * i, j)];
            let dv = reproj[(2 * i + 1, j)] - clean.values()[(2 * i + 1, j)];
            acc += du * du + dv * dv;
            cnt += 1;
        }
    }
    if cnt == 0 {
        return Err(Error::Statistics("no inlier cells to score".into()));
    }
    Ok(acc / cnt as f64)
}

/// [`reprojection_variance`] of a full reconstruction.
pub fn reconstruction_variance(gt: &SceneGroundTruth, recon: &Reconstruction) -> Result<f64> {
    reprojection_variance(&gt.clean_tracking, &gt.outlier_mask, &recon.reprojection())
}

/// scale · rotation · est + translation ≈ gt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Mean aligned 3D distance over the ground-truth diameter.
    pub error: f64,
}

fn centroid(x: &Matrix3xX<f64>) -> Vector3<f64> {
    x.column_mean()
}

/// Least-squares similarity (Umeyama), rotation restricted to det = +1.
fn umeyama(est: &Matrix3xX<f64>, gt: &Matrix3xX<f64>) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = est.ncols() as f64;
    let (me, mg) = (centroid(est), centroid(gt));
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (e, g) in est.column_iter().zip(gt.column_iter()) {
        let (de, dg) = (e - me, g - mg);
        cov += dg * de.transpose();
        var += de.norm_squared();
    }
    cov /= n;
    var /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = if var > 0.0 { trace / var } else { 0.0 };
    (scale, rot, mg - rot * me * scale)
}

fn mean_distance(est: &Matrix3xX<f64>, gt: &Matrix3xX<f64>, s: f64, r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
    let total: f64 = est.column_iter().zip(gt.column_iter()).map(|(e, g)| (r * e * s + t - g).norm()).sum();
    total / est.ncols() as f64
}

/// Largest pairwise distance.
pub fn diameter(x: &Matrix3xX<f64>) -> f64 {
    let mut best = 0.0f64;
    for a in 0..x.ncols() {
        for b in a + 1..x.ncols() {
            best = best.max((x.column(a) - x.column(b)).norm_squared());
        }
    }
    best.sqrt()
}

fn check_pair(est: &Matrix3xX<f64>, gt: &Matrix3xX<f64>) -> Result<()> {
    if est.ncols() != gt.ncols() {
        return Err(Error::DimensionMismatch(format!("{} vs {} points", est.ncols(), gt.ncols())));
    }
    if gt.ncols() < 3 {
        return Err(Error::Alignment("need at least 3 points".into()));
    }
    let c = centroid(gt);
    let centered = Matrix3xX::from_fn(gt.ncols(), |r, j| gt[(r, j)] - c[r]);
    let s = centered.singular_values();
    let mut s: Vec<f64> = s.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[1] > 1e-12 * s[0]) {
        return Err(Error::Alignment("ground truth is degenerate (collinear or coincident)".into()));
    }
    Ok(())
}

/// Aligns `est` onto `gt` by a proper similarity; the error is the mean
/// distance after alignment divided by the diameter of `gt`. Mirror images
/// are not absorbed.
pub fn align_similarity(est: &Matrix3xX<f64>, gt: &Matrix3xX<f64>) -> Result<Similarity> {
    check_pair(est, gt)?;
    let (scale, rotation, translation) = umeyama(est, gt);
    let error = mean_distance(est, gt, scale, &rotation, &translation) / diameter(gt);
    Ok(Similarity { scale, rotation, translation, error })
}

/// Sequence shape error: both sides have their per-frame centroids removed
/// (per-frame translation is not observable), all frames are stacked and one
/// global similarity is fitted. The estimate's mirror image is tried as well
/// since affine reconstruction cannot tell the two apart. Normalized by the
/// largest ground-truth frame diameter.
pub fn shape_error(est: &[Matrix3xX<f64>], gt: &[Matrix3xX<f64>]) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} vs {} frames", est.len(), gt.len())));
    }
    let n = gt[0].ncols();
    if est.iter().chain(gt).any(|s| s.ncols() != n) {
        return Err(Error::DimensionMismatch("frames disagree on point count".into()));
    }
    let stack = |frames: &[Matrix3xX<f64>], flip: bool| {
        let mut out = Matrix3xX::zeros(frames.len() * n);
        for (i, f) in frames.iter().enumerate() {
            let c = centroid(f);
            for j in 0..n {
                let mut p = f.column(j) - c;
                if flip {
                    p[2] = -p[2];
                }
                out.set_column(i * n + j, &p);
            }
        }
        out
    };
    let g = stack(gt, false);
    check_pair(&g, &g)?;
    let diam = gt.iter().map(diameter).fold(0.0f64, f64::max);
    let mut best = f64::INFINITY;
    for flip in [false, true] {
        let e = stack(est, flip);
        let (s, r, t) = umeyama(&e, &g);
        best = best.min(mean_distance(&e, &g, s, &r, &t) / diam);
    }
    Ok(best)
}

/// Precision and recall of the rejected set against the injected outliers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    /// NaN when nothing was rejected.
    pub precision: f64,
    /// NaN when nothing was injected.
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub rejected: usize,
    pub injected: usize,
    pub true_positives: usize,
}

/// Scores rejection: a cell counts as rejected when it was observed but is
/// not an inlier.
pub fn detection_scores(inliers: &Mask, observed: &Mask, outliers: &Mask) -> Result<DetectionScores> {
    if !inliers.same_shape(outliers) || !observed.same_shape(outliers) {
        return Err(Error::DimensionMismatch("masks differ in shape".into()));
    }
    let (mut rejected, mut injected, mut tp) = (0, 0, 0);
    for c in 0..outliers.cells().len() {
        let rej = observed.cells()[c] && !inliers.cells()[c];
        let inj = outliers.cells()[c];
        rejected += rej as usize;
        injected += inj as usize;
        tp += (rej && inj) as usize;
    }
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(DetectionScores {
        precision: ratio(tp, rejected),
        recall: ratio(tp, injected),
        precision_defined: rejected > 0,
        recall_defined: injected > 0,
        rejected,
        injected,
        true_positives: tp,
    })
}

/// Metrics of one reconstruction against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub reproj_variance_inliers: f64,
    pub reproj_rms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_recall: Option<f64>,
    pub precision_defined: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<Audit>,
    pub notes: Vec<String>,
}

/// Scores a reconstruction given as its parts.
pub fn evaluate_parts(
    gt: &SceneGroundTruth,
    reprojection: &DMatrix<f64>,
    inliers: &Mask,
    observed: &Mask,
    shapes: Option<&[Matrix3xX<f64>]>,
    audit: Option<Audit>,
) -> Result<MetricsReport> {
    let var = reprojection_variance(&gt.clean_tracking, &gt.outlier_mask, reprojection)?;
    let shape_error = shapes.map(|s| shape_error(s, &gt.shapes)).transpose()?;
    let det = detection_scores(inliers, observed, &gt.outlier_mask)?;
    Ok(MetricsReport {
        format_version: 1,
        reproj_variance_inliers: var,
        reproj_rms: var.sqrt(),
        shape_error,
        detection_precision: det.precision_defined.then_some(det.precision),
        detection_recall: det.recall_defined.then_some(det.recall),
        precision_defined: det.precision_defined,
        audit,
        notes: METRIC_NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

/// Scores a full reconstruction of `observed` data.
pub fn evaluate(gt: &SceneGroundTruth, observed: &Mask, recon: &Reconstruction) -> Result<MetricsReport> {
    evaluate_parts(
        gt,
        &recon.reprojection(),
        &recon.inlier_mask,
        observed,
        Some(&recon.euclidean.shapes),
        Some(recon.audit.clone()),
    )
}

/// Grid for [`sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub noise: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Trial seeds; the same list is used in every grid cell.
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub k: usize,
    /// Scene template; noise, ratio and seed are overridden per trial.
    pub scene: SceneConfig,
    pub robust: RobustConfig,
    #[serde(default)]
    pub parallelism: Parallelism,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub noise_sigma: f64,
    pub outlier_ratio: f64,
    pub trials: usize,
    pub mean_variance: f64,
    pub std_variance: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "method,noise_sigma,outlier_ratio,trials,mean_variance,std_variance,failures";

impl SweepTable {
    /// CSV with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method.name(),
                r.noise_sigma,
                r.outlier_ratio,
                r.trials,
                r.mean_variance,
                r.std_variance,
                r.failures
            );
        }
        out
    }

    pub fn row(&self, method: Method, noise: f64, ratio: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.noise_sigma == noise && r.outlier_ratio == ratio)
    }

    /// Total failed trials.
    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

/// Variance of one method on one corrupted scene.
pub fn trial_variance(method: Method, scene: &SceneConfig, k: usize, robust: &RobustConfig) -> Result<f64> {
    let mut gt = generate_scene(scene)?;
    let w = corrupt(&mut gt, scene)?;
    let fr = factor_with(method, &w, k, robust)?;
    reprojection_variance(&gt.clean_tracking, &gt.outlier_mask, &fr.reprojection())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every method on every (noise, ratio, seed) trial. Variances come
/// from the factorization stage; the Euclidean upgrade is a gauge change and
/// does not move the reprojection. Trials run in parallel and are reduced in
/// grid order.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    if cfg.noise.is_empty() || cfg.ratios.is_empty() || cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(Error::Argument("sweep grids must be nonempty".into()));
    }
    let (nn, nr, ns) = (cfg.noise.len(), cfg.ratios.len(), cfg.seeds.len());
    for &sigma in &cfg.noise {
        for &ratio in &cfg.ratios {
            SceneConfig { noise_sigma: sigma, outlier_ratio: ratio, ..cfg.scene.clone() }.validate()?;
        }
    }
    cfg.robust.validate()?;

    let results = map_indexed(nn * nr * ns, cfg.parallelism, |t| {
        let (ni, rest) = (t / (nr * ns), t % (nr * ns));
        let (ri, si) = (rest / ns, rest % ns);
        let scene = SceneConfig {
            noise_sigma: cfg.noise[ni],
            outlier_ratio: cfg.ratios[ri],
            seed: cfg.seeds[si],
            ..cfg.scene.clone()
        };
        let mut robust = cfg.robust;
        robust.solver.parallelism = Parallelism::Sequential;
        cfg.methods
            .iter()
            .map(|&m| trial_variance(m, &scene, cfg.k, &robust).ok())
            .collect::<Vec<Option<f64>>>()
    });

    let mut rows = Vec::with_capacity(cfg.methods.len() * nn * nr);
    for (mi, &method) in cfg.methods.iter().enumerate() {
        for ni in 0..nn {
            for ri in 0..nr {
                let base = (ni * nr + ri) * ns;
                let vals: Vec<Option<f64>> = (0..ns).map(|si| results[base + si][mi]).collect();
                let ok: Vec<f64> = vals.iter().flatten().copied().collect();
                let (mean, std) = mean_std(&ok);
                rows.push(SweepRow {
                    method,
                    noise_sigma: cfg.noise[ni],
                    outlier_ratio: cfg.ratios[ri],
                    trials: ns,
                    mean_variance: mean,
                    std_variance: std,
                    failures: ns - ok.len(),
                });
            }
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn cloud() -> Matrix3xX<f64> {
        Matrix3xX::from_fn(12, |r, c| ((r + 1) as f64 * (c as f64 * 0.7 + 0.3)).sin() * (r + 2) as f64)
    }

    #[test]
    fn identity_alignment() {
        let g = cloud();
        let s = align_similarity(&g, &g).unwrap();
        assert!(s.error < 1e-14);
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!((s.rotation - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn recovers_scale_two() {
        let g = cloud();
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = Vector3::new(1.0, -2.0, 0.5);
        let mut e = r.matrix() * &g * 2.0;
        for mut c in e.column_iter_mut() {
            c += t;
        }
        let s = align_similarity(&e, &g).unwrap();
        assert!(s.error < 1e-10);
        assert!((s.scale - 0.5).abs() < 1e-12, "scale maps est onto gt");
        let back = align_similarity(&g, &e).unwrap();
        assert!((back.scale - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mirror_is_not_absorbed() {
        let g = cloud();
        let mut e = g.clone();
        e.row_mut(2).neg_mut();
        assert!(align_similarity(&e, &g).unwrap().error > 1e-3);
    }

    #[test]
    fn collinear_gt_rejected() {
        let g = Matrix3xX::from_fn(5, |r, c| (r + 1) as f64 * c as f64);
        assert!(matches!(align_similarity(&g, &g), Err(Error::Alignment(_))));
    }

    #[test]
    fn detection_examples() {
        let outl = Mask::from_fn(2, 3, |i, j| i == j);
        let all = Mask::filled(2, 3, true);
        let inl = Mask::from_fn(2, 3, |i, j| i != j);
        let d = detection_scores(&inl, &all, &outl).unwrap();
        assert_eq!((d.precision, d.recall), (1.0, 1.0));
        let d = detection_scores(&all, &all, &outl).unwrap();
        assert_eq!(d.recall, 0.0);
        assert!(d.precision.is_nan() && !d.precision_defined);
    }

    #[test]
    fn variance_examples() {
        let clean = TrackingMatrix::complete(DMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64)).unwrap();
        let none = Mask::filled(2, 3, false);
        assert_eq!(reprojection_variance(&clean, &none, clean.values()).unwrap(), 0.0);
        let mut shifted = clean.values().clone();
        for i in 0..2 {
            for j in 0..3 {
                shifted[(2 * i, j)] += 1.0;
            }
        }
        assert_eq!(reprojection_variance(&clean, &none, &shifted).unwrap(), 1.0);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
