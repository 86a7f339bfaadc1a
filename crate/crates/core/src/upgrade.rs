//! Metric upgrade: find H so that M̂H has scaled-orthographic camera blocks,
//! then split H⁻¹Ŝ into shape bases and extract per-frame shapes.
//!
//! The solve has three stages.
//!
//! 1. Rotation constraints on one 3-column slice H₁ of the linear part. The
//!    equal-norm and orthogonality conditions are linear in Q = H₁H₁ᵀ; their
//!    solutions form a (2k²−k)-dimensional space. For k = 1 that space is a
//!    line and Q follows directly. For k ≥ 2 a rank-3 PSD member is found by
//!    alternating projections, polished by Levenberg–Marquardt on H₁.
//! 2. H₁ gives each frame's rotation up to sign. With rotations fixed,
//!    M̂ᵢ hˡ = ω_il R̄ᵢ is linear in all of H and the weights, so the full
//!    linear part comes out of one homogeneous least-squares problem. The
//!    rotations are then re-estimated from the full blocks and the system is
//!    solved again.
//! 3. The remaining k×k mixing of the bases is fixed by rotating onto the
//!    principal directions of the weights.
//!
//! Rotation constraints alone do not always single out the true basis for
//! k ≥ 2. On such sequences the constraint residual can be tiny while the
//! recovered shapes are wrong.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::Factorization;
use crate::linalg::{
    condition_number, pinv_solve, polar_rows, smallest_right_vectors, sym_eigen_desc,
};
use crate::model::{
    compose_shape, decompose_motion, split_frame, DeformationWeights, EuclideanMotion, ShapeBases,
};
use crate::par::{map_indexed, Parallelism};
use crate::rng;

/// Tuning for [`recover_upgrade`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpgradeConfig {
    /// Relative singular-value level below which the constraint system is
    /// considered to have lost rank beyond the gauge freedom.
    pub degeneracy_tol: f64,
    /// Random starts for the rank-3 search, on top of the ± nullspace basis.
    pub restarts: usize,
    pub projection_iters: usize,
    pub lm_iters: usize,
    /// Rotation re-estimation passes for the linear stage.
    pub refine_passes: usize,
    pub seed: u64,
    #[serde(default)]
    pub parallelism: Parallelism,
}

impl Default for UpgradeConfig {
    fn default() -> Self {
        UpgradeConfig {
            degeneracy_tol: 1e-9,
            restarts: 16,
            projection_iters: 100,
            lm_iters: 200,
            refine_passes: 6,
            seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

/// The corrective transform and its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct UpgradeMatrix {
    pub h: DMatrix<f64>,
    pub k: usize,
    /// True when H maps an augmented (3k+1) factorization.
    pub augmented: bool,
    /// Condition number of H.
    pub condition: f64,
    /// Largest over smallest retained singular value of the constraint system.
    pub constraint_condition: f64,
    /// RMS over frames of the normalized metric residual of M̂H.
    pub constraint_residual: f64,
    /// Whether negative eigenvalues were clamped when extracting H₁ from Q.
    pub clamped: bool,
}

/// Euclidean structure and motion.
#[derive(Clone, Debug, PartialEq)]
pub struct EuclideanReconstruction {
    pub motions: Vec<EuclideanMotion>,
    pub weights: DeformationWeights,
    pub bases: ShapeBases,
    pub shapes: Vec<Matrix3xX<f64>>,
    /// Last row of H⁻¹Ŝ for augmented input, ideally all ones.
    pub homogeneous_row: Option<Vec<f64>>,
}

/// Equal-norm and orthogonality residuals of one frame's stacked 2×3k block,
/// both relative: |‖a‖−‖b‖|/‖a‖ and |a·b|/‖a‖².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub equal_norm: f64,
    pub orthogonality: f64,
}

/// Metric residuals of every frame of a 2m×3k motion matrix.
pub fn metric_residuals(motion: &DMatrix<f64>) -> Vec<BlockResidual> {
    (0..motion.nrows() / 2)
        .map(|i| {
            let a = motion.row(2 * i);
            let b = motion.row(2 * i + 1);
            let na = a.norm();
            let nb = b.norm();
            if na == 0.0 {
                return BlockResidual { equal_norm: f64::INFINITY, orthogonality: f64::INFINITY };
            }
            BlockResidual { equal_norm: (na - nb).abs() / na, orthogonality: a.dot(&b).abs() / (na * na) }
        })
        .collect()
}

fn rms_constraint(motion: &DMatrix<f64>) -> f64 {
    let m = motion.nrows() / 2;
    let mut acc = 0.0;
    for i in 0..m {
        let a = motion.row(2 * i);
        let b = motion.row(2 * i + 1);
        let nu = a.norm_squared() + b.norm_squared();
        if nu > 0.0 {
            let e1 = (a.norm_squared() - b.norm_squared()) / nu;
            let e2 = 2.0 * a.dot(&b) / nu;
            acc += e1 * e1 + e2 * e2;
        }
    }
    (acc / m.max(1) as f64).sqrt()
}

/// Recovers the upgrade H for a rank-3k (registered) or rank-(3k+1)
/// (augmented) factorization.
pub fn recover_upgrade(f: &Factorization, k: usize, cfg: &UpgradeConfig) -> Result<UpgradeMatrix> {
    if k == 0 {
        return Err(Error::Argument("basis count must be positive".into()));
    }
    let p = 3 * k;
    let augmented = if f.rank == p + 1 {
        true
    } else if f.rank == p {
        false
    } else {
        return Err(Error::Argument(format!(
            "rank {} fits neither 3k = {p} nor 3k+1 = {}",
            f.rank,
            p + 1
        )));
    };

    let (m_lin, t_inv, v) = if augmented {
        let red = reduce_augmented(f)?;
        (red.m_lin, Some(red.t_inv), Some(red.v))
    } else {
        (f.motion.clone(), None, None)
    };

    let lin = solve_linear_part(&m_lin, k, cfg)?;

    let h = match (t_inv, v) {
        (Some(t_inv), Some(v)) => {
            let mut core = DMatrix::zeros(p + 1, p + 1);
            core.view_mut((0, 0), (p, p)).copy_from(&lin.h);
            core.view_mut((0, p), (p, 1)).copy_from(&v);
            core[(p, p)] = 1.0;
            t_inv * core
        }
        _ => lin.h.clone(),
    };
    let condition = condition_number(&h);
    if !(condition < 1e12) {
        return Err(Error::DegenerateMotion(format!("upgrade is singular (condition {condition:e})")));
    }
    let upgraded = &f.motion * &h;
    Ok(UpgradeMatrix {
        constraint_residual: rms_constraint(&upgraded.columns(0, p).into_owned()),
        h,
        k,
        augmented,
        condition,
        constraint_condition: lin.constraint_condition,
        clamped: lin.clamped,
    })
}

/// Applies H and extracts bases, weights, cameras and per-frame shapes.
pub fn apply_upgrade(f: &Factorization, h: &UpgradeMatrix, k: usize) -> Result<EuclideanReconstruction> {
    let p = 3 * k;
    let r = f.rank;
    if h.h.nrows() != r || h.h.ncols() != r || (r != p && r != p + 1) {
        return Err(Error::DimensionMismatch(format!(
            "upgrade is {}x{}, factorization rank {r}, k = {k}",
            h.h.nrows(),
            h.h.ncols()
        )));
    }
    let mh = &f.motion * &h.h;
    let lu = h.h.clone().lu();
    let sh = lu
        .solve(&f.shape)
        .ok_or_else(|| Error::DegenerateMotion("upgrade matrix is singular".into()))?;

    let lin_motion = mh.columns(0, p).into_owned();
    let (mut motions, mut weights) = decompose_motion(&lin_motion, k, Parallelism::Sequential)?;
    let mut stacked = sh.rows(0, p).into_owned();

    // Sign of bases 2..k: first clearly nonzero weight is positive.
    for l in 1..k {
        let col = weights.weights.column(l);
        let tiny = 1e-9 * col.amax();
        if let Some(first) = col.iter().find(|w| w.abs() > tiny) {
            if *first < 0.0 {
                weights.weights.column_mut(l).neg_mut();
                stacked.rows_mut(3 * l, 3).neg_mut();
            }
        }
    }
    let bases = ShapeBases::from_stacked(&stacked)?;

    let homogeneous_row = (r == p + 1).then(|| sh.row(p).iter().copied().collect());
    if r == p + 1 {
        for (i, mo) in motions.iter_mut().enumerate() {
            mo.translation = nalgebra::Vector2::new(mh[(2 * i, p)], mh[(2 * i + 1, p)]);
        }
    }
    let shapes = (0..weights.frames())
        .map(|i| compose_shape(&bases, &weights.row(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EuclideanReconstruction { motions, weights, bases, shapes, homogeneous_row })
}

struct Augmented {
    m_lin: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    v: DVector<f64>,
}

/// Changes the gauge of an augmented factorization so that its last shape
/// row is (in least squares) the ones vector, and picks a translation offset
/// that centers the linear shape rows.
fn reduce_augmented(f: &Factorization) -> Result<Augmented> {
    let r = f.rank;
    let p = r - 1;
    let s = &f.shape;
    let n = s.ncols();
    let gram = s * s.transpose();
    let ones = DVector::from_element(n, 1.0);
    let rhs = s * &ones;
    let g = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .filter(|g| g.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::DegenerateMotion("shape factor is rank deficient".into()))?;
    let gn = g.norm();
    if !(gn > 0.0) || condition_number(&gram) > 1e24 {
        return Err(Error::DegenerateMotion("shape factor is rank deficient".into()));
    }
    // Orthonormal complement of g.
    let gh = &g / gn;
    let proj = DMatrix::identity(r, r) - &gh * gh.transpose();
    let (_, vecs) = sym_eigen_desc(&proj);
    let mut t = DMatrix::zeros(r, r);
    for a in 0..p {
        t.set_row(a, &vecs.column(a).transpose());
    }
    t.set_row(p, &g.transpose());
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateMotion("shape factor is rank deficient".into()))?;
    let s2 = &t * s;
    let m2 = &f.motion * &t_inv;
    let v = DVector::from_fn(p, |a, _| s2.row(a).mean());
    Ok(Augmented { m_lin: m2.columns(0, p).into_owned(), t_inv, v })
}

struct LinearPart {
    h: DMatrix<f64>,
    constraint_condition: f64,
    clamped: bool,
}

fn sym_index(p: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::with_capacity(p * (p + 1) / 2);
    for u in 0..p {
        for v in u..p {
            idx.push((u, v));
        }
    }
    idx
}

/// Two constraint rows per frame on vech(Q), normalized by the frame's
/// motion energy.
fn constraint_rows(m_lin: &DMatrix<f64>, idx: &[(usize, usize)]) -> DMatrix<f64> {
    let m = m_lin.nrows() / 2;
    let mut c = DMatrix::zeros(2 * m, idx.len());
    for i in 0..m {
        let a = m_lin.row(2 * i);
        let b = m_lin.row(2 * i + 1);
        let nu = a.norm_squared() + b.norm_squared();
        if nu == 0.0 {
            continue;
        }
        let q = |x: &nalgebra::RowDVector<f64>, y: &nalgebra::RowDVector<f64>, u: usize, v: usize| {
            if u == v {
                x[u] * y[u]
            } else {
                x[u] * y[v] + x[v] * y[u]
            }
        };
        let (a, b) = (a.into_owned(), b.into_owned());
        for (col, &(u, v)) in idx.iter().enumerate() {
            c[(2 * i, col)] = (q(&a, &a, u, v) - q(&b, &b, u, v)) / nu;
            c[(2 * i + 1, col)] = q(&a, &b, u, v) / nu;
        }
    }
    c
}

fn unvech(x: &[f64], idx: &[(usize, usize)], p: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(p, p);
    for (c, &(u, v)) in idx.iter().enumerate() {
        q[(u, v)] = x[c];
        q[(v, u)] = x[c];
    }
    q
}

/// Top-3 PSD truncation: returns H (p×3) with HHᵀ the projection, and
/// whether any of the kept eigenvalues was negative.
fn psd_rank3(q: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (vals, vecs) = sym_eigen_desc(q);
    let p = q.nrows();
    let mut h = DMatrix::zeros(p, 3);
    let mut clamped = false;
    for c in 0..3.min(p) {
        if vals[c] < 0.0 {
            clamped = true;
        }
        let s = vals[c].max(0.0).sqrt();
        h.set_column(c, &(vecs.column(c) * s));
    }
    (h, clamped)
}

fn solve_linear_part(m_lin: &DMatrix<f64>, k: usize, cfg: &UpgradeConfig) -> Result<LinearPart> {
    let p = 3 * k;
    let m = m_lin.nrows() / 2;
    let idx = sym_index(p);
    let unknowns = idx.len();
    let nullity = 2 * k * k - k;
    if 2 * m < unknowns {
        return Err(Error::DegenerateMotion(format!(
            "{m} frames give {} constraints for {unknowns} unknowns",
            2 * m
        )));
    }
    let c = constraint_rows(m_lin, &idx);
    let (null_vecs, spectrum) = smallest_right_vectors(&c, nullity);
    let smax = spectrum[0];
    let kept = spectrum[unknowns - nullity - 1];
    if !(smax > 0.0) || kept < cfg.degeneracy_tol * smax {
        return Err(Error::DegenerateMotion(format!(
            "rotation constraints lose rank beyond the gauge freedom (σ ratio {:e}); the camera may not rotate enough",
            if smax > 0.0 { kept / smax } else { 0.0 }
        )));
    }
    let constraint_condition = smax / kept;

    let nulls: Vec<DMatrix<f64>> = (0..nullity)
        .map(|j| unvech(null_vecs.column(j).as_slice(), &idx, p))
        .collect();

    if k == 1 {
        let mut q = nulls[0].clone();
        if q.trace() < 0.0 {
            q = -q;
        }
        let (h, clamped) = psd_rank3(&q);
        return Ok(LinearPart { h, constraint_condition, clamped });
    }

    let (h1, clamped) = rank3_member(m_lin, &nulls, cfg);
    let h = linear_stage(m_lin, k, &h1, cfg.refine_passes)?;
    Ok(LinearPart { h, constraint_condition, clamped })
}

/// Searches the constraint nullspace for a rank-3 PSD member and polishes it.
fn rank3_member(m_lin: &DMatrix<f64>, nulls: &[DMatrix<f64>], cfg: &UpgradeConfig) -> (DMatrix<f64>, bool) {
    let p = nulls[0].nrows();
    let d = nulls.len();
    // Orthonormal basis of the nullspace in the Frobenius inner product.
    let stacked = DMatrix::from_fn(p * p, d, |e, j| nulls[j][(e / p, e % p)]);
    let basis = stacked.qr().q();
    let project = |q: &DMatrix<f64>| -> DMatrix<f64> {
        let flat = DVector::from_column_slice(q.as_slice());
        let coef = basis.transpose() * &flat;
        let back = &basis * coef;
        DMatrix::from_column_slice(p, p, back.as_slice())
    };

    let mut starts: Vec<DMatrix<f64>> = Vec::with_capacity(2 * d + cfg.restarts);
    for j in 0..d {
        let b = DMatrix::from_column_slice(p, p, basis.column(j).as_slice());
        starts.push(b.clone());
        starts.push(-b);
    }
    let mut gen = rng::stream(cfg.seed, rng::UPGRADE_STREAM);
    let mut normal = rng::Normal::new();
    for _ in 0..cfg.restarts {
        let coef = DVector::from_fn(d, |_, _| normal.sample(&mut gen));
        let flat = &basis * coef;
        starts.push(DMatrix::from_column_slice(p, p, flat.as_slice()));
    }

    let results = map_indexed(starts.len(), cfg.parallelism, |s| {
        let mut q = starts[s].clone();
        let mut clamped = false;
        for _ in 0..cfg.projection_iters {
            let (h, c) = psd_rank3(&q);
            clamped = c;
            let proj = &h * h.transpose();
            let next = project(&proj);
            let gap = (&next - &proj).norm();
            q = next;
            if gap <= 1e-13 * proj.norm() {
                break;
            }
        }
        let (h, _) = psd_rank3(&q);
        let (h, res) = polish(m_lin, h, cfg.lm_iters);
        (res, h, clamped)
    });
    let mut best = 0;
    for (s, r) in results.iter().enumerate() {
        if r.0 < results[best].0 {
            best = s;
        }
    }
    let (_, h, clamped) = results.into_iter().nth(best).expect("at least one start");
    (h, clamped)
}

/// Levenberg–Marquardt on H₁ (p×3) for the normalized rotation residuals
/// plus one scale residual. Returns the polished H₁ and its RMS residual.
fn polish(m_lin: &DMatrix<f64>, mut h: DMatrix<f64>, iters: usize) -> (DMatrix<f64>, f64) {
    let m = m_lin.nrows() / 2;
    let p = m_lin.ncols();
    let nu: Vec<f64> = (0..m)
        .map(|i| m_lin.row(2 * i).norm_squared() + m_lin.row(2 * i + 1).norm_squared())
        .collect();
    let active = nu.iter().filter(|&&v| v > 0.0).count().max(1) as f64;

    let residual = |h: &DMatrix<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let y = m_lin * h;
        let mut r = DVector::zeros(2 * m + 1);
        let mut scale = 0.0;
        for i in 0..m {
            if nu[i] == 0.0 {
                continue;
            }
            let ya = y.row(2 * i);
            let yb = y.row(2 * i + 1);
            let (na, nb) = (ya.norm_squared(), yb.norm_squared());
            r[i] = (na - nb) / nu[i];
            r[m + i] = 2.0 * ya.dot(&yb) / nu[i];
            scale += (na + nb) / nu[i];
        }
        r[2 * m] = scale / active - 1.0;
        (r, y)
    };

    let (mut r, mut y) = residual(&h);
    let mut cost = r.norm_squared();
    let mut lambda: f64 = 1e-3;
    let mut stalled = 0;
    for _ in 0..iters {
        if cost < 1e-30 {
            break;
        }
        let mut jac = DMatrix::zeros(2 * m + 1, 3 * p);
        for i in 0..m {
            if nu[i] == 0.0 {
                continue;
            }
            for u in 0..p {
                let (a, b) = (m_lin[(2 * i, u)], m_lin[(2 * i + 1, u)]);
                for c in 0..3 {
                    let (ya, yb) = (y[(2 * i, c)], y[(2 * i + 1, c)]);
                    let e = u * 3 + c;
                    jac[(i, e)] = 2.0 * (a * ya - b * yb) / nu[i];
                    jac[(m + i, e)] = 2.0 * (a * yb + b * ya) / nu[i];
                    jac[(2 * m, e)] += 2.0 * (a * ya + b * yb) / nu[i] / active;
                }
            }
        }
        let col_norm: Vec<f64> = (0..3 * p).map(|e| jac.column(e).norm().max(1e-300)).collect();
        let mut improved = false;
        while lambda < 1e14 {
            let mut aug = DMatrix::zeros(2 * m + 1 + 3 * p, 3 * p);
            aug.rows_mut(0, 2 * m + 1).copy_from(&jac);
            let mut rhs = DMatrix::zeros(2 * m + 1 + 3 * p, 1);
            for e in 0..3 * p {
                aug[(2 * m + 1 + e, e)] = lambda.sqrt() * col_norm[e];
            }
            for a in 0..2 * m + 1 {
                rhs[(a, 0)] = -r[a];
            }
            let step = pinv_solve(&aug, &rhs);
            let mut cand = h.clone();
            for u in 0..p {
                for c in 0..3 {
                    cand[(u, c)] += step[(u * 3 + c, 0)];
                }
            }
            let (rn, yn) = residual(&cand);
            let cn = rn.norm_squared();
            if cn < cost {
                stalled = if cost - cn < 1e-12 * cost { stalled + 1 } else { 0 };
                h = cand;
                r = rn;
                y = yn;
                cost = cn;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || stalled >= 5 {
            break;
        }
    }
    (h, (cost / m as f64).sqrt())
}

/// Linear solve for all k slices of H given per-frame rotations, with
/// rotation re-estimation passes and gauge canonicalization.
fn linear_stage(m_lin: &DMatrix<f64>, k: usize, h1: &DMatrix<f64>, passes: usize) -> Result<DMatrix<f64>> {
    let m = m_lin.nrows() / 2;
    let p = 3 * k;
    let y = m_lin * h1;
    let mut rots = Vec::with_capacity(m);
    let mut lam = Vec::with_capacity(m);
    for i in 0..m {
        let yi = Matrix2x3::from_fn(|r, c| y[(2 * i + r, c)]);
        let (rot, l) = polar_rows(&yi);
        rots.push(rot);
        lam.push(l);
    }
    let (mut h, mut omega) = homogeneous_fit(m_lin, k, &rots, &lam)?;
    for _ in 0..passes {
        let mu = m_lin * &h;
        rots.clear();
        lam.clear();
        for i in 0..m {
            let block = mu.rows(2 * i, 2).into_owned();
            match split_frame(&block, k, i) {
                Ok(s) => {
                    rots.push(s.rows);
                    lam.push(s.omega[..k].iter().map(|w| w * w).sum::<f64>().sqrt());
                }
                Err(_) => {
                    rots.push(Matrix2x3::zeros());
                    lam.push(0.0);
                }
            }
        }
        let fit = homogeneous_fit(m_lin, k, &rots, &lam)?;
        h = fit.0;
        omega = fit.1;
    }

    // Rotate the basis gauge onto the principal weight directions.
    let (_, v) = sym_eigen_desc(&(omega.transpose() * &omega));
    let mut out = DMatrix::zeros(p, p);
    for l in 0..k {
        for lp in 0..k {
            let f = v[(lp, l)];
            if f != 0.0 {
                let src = h.columns(3 * lp, 3) * f;
                let mut dst = out.columns_mut(3 * l, 3);
                dst += src;
            }
        }
    }
    Ok(out)
}

/// Solves M̂ᵢ hˡ − ω_il R̄ᵢ = 0 for all frames in least squares, rows weighted
/// by the frame's relative rotation confidence. Returns H (3k×3k) and Ω (m×k).
fn homogeneous_fit(
    m_lin: &DMatrix<f64>,
    k: usize,
    rots: &[Matrix2x3<f64>],
    conf: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = m_lin.nrows() / 2;
    let p = 3 * k;
    let top = conf.iter().fold(0.0f64, |a, &b| a.max(b));
    if !(top > 0.0) {
        return Err(Error::DegenerateMotion("no frame carries rotation information".into()));
    }
    let cols = 9 * k + m;
    let mut a = DMatrix::zeros(6 * m, cols);
    for i in 0..m {
        let fw = conf[i] / top;
        if fw == 0.0 {
            continue;
        }
        for r in 0..2 {
            for c in 0..3 {
                let row = 6 * i + 3 * r + c;
                for u in 0..p {
                    a[(row, u * 3 + c)] = m_lin[(2 * i + r, u)] * fw;
                }
                a[(row, 9 * k + i)] = -rots[i][(r, c)] * fw;
            }
        }
    }
    if a.nrows() < cols {
        return Err(Error::DegenerateMotion("too few frames for the linear stage".into()));
    }
    let (sol, _) = smallest_right_vectors(&a, k);
    // The unknowns are one p×3 slice (entry u*3 + c) and the m weights; the
    // k null vectors give the k slices.
    let mut h = DMatrix::zeros(p, p);
    let mut omega = DMatrix::zeros(m, k);
    for l in 0..k {
        for u in 0..p {
            for c in 0..3 {
                h[(u, 3 * l + c)] = sol[(u * 3 + c, l)];
            }
        }
        for i in 0..m {
            omega[(i, l)] = sol[(9 * k + i, l)];
        }
    }
    Ok((h, omega))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vech_round_trip() {
        let idx = sym_index(3);
        let q = unvech(&[1., 2., 3., 4., 5., 6.], &idx, 3);
        assert_eq!(q[(0, 1)], 2.0);
        assert_eq!(q[(1, 0)], 2.0);
        assert_eq!(q[(2, 2)], 6.0);
    }

    #[test]
    fn metric_residual_of_rotation_is_zero() {
        let m = DMatrix::from_row_slice(2, 3, &[0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
        let r = metric_residuals(&m);
        assert_eq!(r[0].equal_norm, 0.0);
        assert_eq!(r[0].orthogonality, 0.0);
    }
}
