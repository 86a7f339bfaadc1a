//! Robust rank-(3k+1) factorization: fit, threshold residuals, reject,
//! refit, reweight, upgrade.

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{
    alternating_factor, check_solvability, frobenius_error, truncated_factor, Factorization, SolverConfig, WeightMatrix,
};
use crate::rng;
use crate::tracking::{register_to_centroid, Mask, TrackingMatrix};
use crate::upgrade::{apply_upgrade, recover_upgrade, EuclideanReconstruction, UpgradeConfig, UpgradeMatrix};

/// Gaussian consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Parameters of the robust pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    /// τ = median + multiplier · σ̂ over residual norms.
    pub threshold_multiplier: f64,
    /// Number of times the threshold is re-estimated.
    pub rejection_rounds: usize,
    /// Reject/refit passes allowed against one threshold. Refitting can
    /// expose outliers the previous fit absorbed, so a round repeats until
    /// no surviving cell exceeds its threshold or this cap is reached.
    pub refits_per_round: usize,
    /// Huber reweighting steps applied to the initial fit before the first
    /// threshold; 0 keeps the plain least-squares start.
    pub huber_steps: usize,
    /// Lower bound on the Gaussian weights of surviving cells.
    pub weight_floor: f64,
    /// Residual scale, relative to the RMS of the observed coordinates, below
    /// which the data are treated as noise free: nothing under it is
    /// rejected and all weights stay at one.
    pub noise_floor: f64,
    pub solver: SolverConfig,
    pub upgrade: UpgradeConfig,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            threshold_multiplier: 6.0,
            rejection_rounds: 2,
            refits_per_round: 20,
            huber_steps: 30,
            weight_floor: 0.0,
            noise_floor: 1e-9,
            solver: SolverConfig::default(),
            upgrade: UpgradeConfig::default(),
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_multiplier > 0.0 && self.threshold_multiplier.is_finite()) {
            return Err(Error::Argument("threshold_multiplier must be positive".into()));
        }
        if self.rejection_rounds == 0 {
            return Err(Error::Argument("rejection_rounds must be positive".into()));
        }
        if self.refits_per_round == 0 {
            return Err(Error::Argument("refits_per_round must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_floor) {
            return Err(Error::Argument("weight_floor must lie in [0, 1]".into()));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::Argument("noise_floor must be nonnegative".into()));
        }
        if !(self.solver.tol >= 0.0) || self.solver.max_iters == 0 {
            return Err(Error::Argument("solver needs tol >= 0 and max_iters > 0".into()));
        }
        Ok(())
    }
}

/// Residuals of a factorization against the data and their robust statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    /// 2m×n, NaN on masked-out cells.
    pub residuals: DMatrix<f64>,
    /// m×n Euclidean norms, NaN on masked-out cells.
    pub norms: DMatrix<f64>,
    /// Threshold in force: max(τ, absolute noise floor).
    pub threshold: f64,
    pub sigma_hat: f64,
    /// Absolute noise floor the threshold and weights were checked against.
    pub scale_floor: f64,
}

/// Residual matrix W − M̂Ŝ and per-point norms over the observed cells.
pub fn residual_norms(w: &TrackingMatrix, f: &Factorization) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if f.motion.nrows() != w.values().nrows() || f.shape.ncols() != w.points() {
        return Err(Error::DimensionMismatch(format!(
            "factorization is {}x{}, tracking is {}x{}",
            f.motion.nrows(),
            f.shape.ncols(),
            w.values().nrows(),
            w.points()
        )));
    }
    let p = f.product();
    let (m, n) = (w.frames(), w.points());
    let mut res = DMatrix::from_element(2 * m, n, f64::NAN);
    let mut norms = DMatrix::from_element(m, n, f64::NAN);
    for i in 0..m {
        for j in 0..n {
            if w.mask().get(i, j) {
                let du = w.values()[(2 * i, j)] - p[(2 * i, j)];
                let dv = w.values()[(2 * i + 1, j)] - p[(2 * i + 1, j)];
                res[(2 * i, j)] = du;
                res[(2 * i + 1, j)] = dv;
                norms[(i, j)] = (du * du + dv * dv).sqrt();
            }
        }
    }
    Ok((res, norms))
}

/// Residuals on `w`'s observed cells with threshold statistics taken over
/// its mask.
pub fn residual_matrix(w: &TrackingMatrix, f: &Factorization, cfg: &RobustConfig) -> Result<ResidualReport> {
    residual_report(w, f, w.mask(), cfg)
}

/// Residuals on `w`'s observed cells with statistics taken over `stats`.
pub fn residual_report(
    w: &TrackingMatrix,
    f: &Factorization,
    stats: &Mask,
    cfg: &RobustConfig,
) -> Result<ResidualReport> {
    let (residuals, norms) = residual_norms(w, f)?;
    let (tau, sigma_hat) = outlier_threshold(&norms, stats, cfg)?;
    let scale_floor = cfg.noise_floor * w.observed_rms();
    Ok(ResidualReport { residuals, norms, threshold: tau.max(scale_floor), sigma_hat, scale_floor })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// τ = median(r) + multiplier · σ̂ with σ̂ = 1.4826 · MAD(r), over the norms of
/// masked-in cells.
pub fn outlier_threshold(norms: &DMatrix<f64>, mask: &Mask, cfg: &RobustConfig) -> Result<(f64, f64)> {
    if norms.nrows() != mask.frames() || norms.ncols() != mask.points() {
        return Err(Error::DimensionMismatch("norms and mask differ in shape".into()));
    }
    let mut r: Vec<f64> = Vec::with_capacity(mask.count());
    for i in 0..mask.frames() {
        for j in 0..mask.points() {
            if mask.get(i, j) {
                r.push(norms[(i, j)]);
            }
        }
    }
    if r.len() < 8 {
        return Err(Error::Statistics(format!("{} cells are too few for a robust scale (need 8)", r.len())));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite residual norm".into()));
    }
    let med = median(&mut r);
    let mut dev: Vec<f64> = r.iter().map(|v| (v - med).abs()).collect();
    let sigma_hat = MAD_SCALE * median(&mut dev);
    Ok((med + cfg.threshold_multiplier * sigma_hat, sigma_hat))
}

/// Keeps cells whose norm is at most τ. Fails if the survivors no longer
/// support a rank-`rank` solve.
pub fn reject_outliers(mask: &Mask, norms: &DMatrix<f64>, tau: f64, rank: usize) -> Result<Mask> {
    if norms.nrows() != mask.frames() || norms.ncols() != mask.points() {
        return Err(Error::DimensionMismatch("norms and mask differ in shape".into()));
    }
    let out = Mask::from_fn(mask.frames(), mask.points(), |i, j| mask.get(i, j) && norms[(i, j)] <= tau);
    check_solvability(&out, rank).map_err(|e| {
        Error::OverRejection(format!("{e}; raise threshold_multiplier (threshold was {tau:e})"))
    })?;
    Ok(out)
}

/// Gaussian weights exp(−‖e‖²/2σ̂²), floored, zero outside the mask. With no
/// usable scale (σ̂ at or below the noise floor) every kept cell gets one.
pub fn estimate_weights(report: &ResidualReport, mask: &Mask, cfg: &RobustConfig) -> WeightMatrix {
    let (m, n) = (mask.frames(), mask.points());
    let flat = report.sigma_hat <= report.scale_floor || !(report.sigma_hat > 0.0);
    let two_s2 = 2.0 * report.sigma_hat * report.sigma_hat;
    let mut w = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            if mask.get(i, j) {
                w[i * n + j] = if flat {
                    1.0
                } else {
                    let r = report.norms[(i, j)];
                    (-(r * r) / two_s2).exp().max(cfg.weight_floor)
                };
            }
        }
    }
    WeightMatrix::new(m, n, w).expect("weights lie in [0, 1] by construction")
}

/// One threshold/reject/refit round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRound {
    pub threshold: f64,
    pub sigma_hat: f64,
    /// Cells rejected in this round.
    pub rejected_count: usize,
    /// Unweighted objective of the refit.
    pub objective: f64,
    pub iterations: usize,
}

/// Pipeline audit trail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub format_version: u32,
    pub method: Method,
    pub rank: usize,
    pub observed: usize,
    pub inliers: usize,
    pub initial_objective: f64,
    pub rounds: Vec<AuditRound>,
    /// Weighted objective after the final weighted solve.
    pub weighted_objective: Option<f64>,
    pub weight_sigma_hat: Option<f64>,
}

/// Which factorization pipeline to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain rank-(3k+1) factorization, no outlier handling.
    Direct,
    /// Rank-(3k+1) with rejection and reweighting.
    Robust,
    /// Register to the observed centroid, then robust rank-3k.
    Registered,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Robust => "robust",
            Method::Registered => "registered",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "robust" => Ok(Method::Robust),
            "registered" => Ok(Method::Registered),
            _ => Err(Error::Argument(format!("unknown method {s:?}"))),
        }
    }
}

/// Output of the factorization stage (steps 1–5).
#[derive(Clone, Debug, PartialEq)]
pub struct FactorResult {
    pub factor: Factorization,
    pub inlier_mask: Mask,
    pub weights: WeightMatrix,
    /// Residuals of the final factor on all originally observed cells, with
    /// statistics over the inliers.
    pub report: ResidualReport,
    pub audit: Audit,
    /// Total ALS sweeps.
    pub iterations: usize,
    /// Per-frame image offsets added back to M̂Ŝ (the centroids for the
    /// registered method, zero otherwise).
    pub offsets: Vec<Vector2<f64>>,
}

impl FactorResult {
    /// M̂Ŝ plus per-frame offsets, in input image coordinates.
    pub fn reprojection(&self) -> DMatrix<f64> {
        reproject(&self.factor, &self.offsets)
    }
}

/// `f.product()` with `offsets[i]` added to frame `i`.
pub fn reproject(f: &Factorization, offsets: &[Vector2<f64>]) -> DMatrix<f64> {
    let mut p = f.product();
    for (i, o) in offsets.iter().enumerate() {
        for j in 0..p.ncols() {
            p[(2 * i, j)] += o[0];
            p[(2 * i + 1, j)] += o[1];
        }
    }
    p
}

/// Full output: factorization stage plus Euclidean upgrade.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub euclidean: EuclideanReconstruction,
    pub upgrade: UpgradeMatrix,
    pub factor: Factorization,
    pub inlier_mask: Mask,
    pub report: ResidualReport,
    pub audit: Audit,
    pub iterations: usize,
    pub offsets: Vec<Vector2<f64>>,
}

impl Reconstruction {
    pub fn reprojection(&self) -> DMatrix<f64> {
        reproject(&self.factor, &self.offsets)
    }
}

fn initial_factor(w: &TrackingMatrix, r: usize, cfg: &RobustConfig) -> Result<Factorization> {
    if w.is_complete() {
        truncated_factor(w, r)
    } else {
        alternating_factor(w, r, None, None, &cfg.solver)
    }
}

/// ALS sweeps per Huber reweighting.
const HUBER_SWEEPS: usize = 3;

/// Huber IRLS: cells are reweighted by min(1, δ/‖e‖) with δ the median
/// residual norm, followed by a few ALS sweeps. Returns the fit, the ALS
/// iterations spent and the final δ.
fn huber_polish(
    w: &TrackingMatrix,
    mut f: Factorization,
    r: usize,
    cfg: &RobustConfig,
) -> Result<(Factorization, usize, f64)> {
    let floor = cfg.noise_floor * w.observed_rms();
    let (m, n) = (w.frames(), w.points());
    let solver = SolverConfig { max_iters: HUBER_SWEEPS, ..cfg.solver };
    let mut iterations = 0;
    let mut last = f64::INFINITY;
    let mut delta = f64::INFINITY;
    for step in 0..=cfg.huber_steps {
        let (_, norms) = residual_norms(w, &f)?;
        let mut observed: Vec<f64> = norms.iter().copied().filter(|v| !v.is_nan()).collect();
        delta = median(&mut observed);
        if step == cfg.huber_steps || !(delta > floor) || ((last - delta).abs() <= 1e-6 * delta) {
            break;
        }
        last = delta;
        let mut wts = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let e = norms[(i, j)];
                if w.mask().get(i, j) {
                    wts[i * n + j] = if e <= delta { 1.0 } else { delta / e };
                }
            }
        }
        let wm = WeightMatrix::new(m, n, wts)?;
        f = alternating_factor(w, r, Some(&f), Some(&wm), &solver)?;
        iterations += f.iterations;
    }
    if iterations > 0 {
        f.residual_fro = frobenius_error(w, &f, None)?;
    }
    Ok((f, iterations, delta))
}

/// Fixed seed of the second polish start, so results depend on the data only.
const START_SEED: u64 = 0;

/// Robust step-1 fit. A least-squares start lets gross outliers bend the
/// weakly supported deformation columns; Huber reweighting from there can
/// settle with a whole group of points misfit, which later looks like
/// outliers. A second polish from a pseudo-random shape does not inherit
/// that bias. The start with the smaller median residual norm wins.
fn robust_start(w: &TrackingMatrix, f: Factorization, r: usize, cfg: &RobustConfig) -> Result<(Factorization, usize)> {
    let (a, its_a, da) = huber_polish(w, f, r, cfg)?;
    if !(da > cfg.noise_floor * w.observed_rms()) {
        return Ok((a, its_a));
    }
    let mut gen = rng::stream(START_SEED, rng::FACTOR_STREAM);
    let shape = DMatrix::from_fn(r, w.points(), |_, _| rng::uniform(&mut gen) - 0.5);
    let seeded = Factorization::from_factors(DMatrix::zeros(2 * w.frames(), r), shape)?;
    let (b, its_b, db) = huber_polish(w, seeded, r, cfg)?;
    Ok((if db < da { b } else { a }, its_a + its_b))
}

/// Unweighted refit after a rejection, from both the previous fit and a
/// fresh imputed start; the lower objective wins. Warm starts can sit in a
/// poor basin left behind by the cells just removed. Returns the fit and the
/// ALS iterations spent on both.
fn refit(w: &TrackingMatrix, r: usize, prev: &Factorization, solver: &SolverConfig) -> Result<(Factorization, usize)> {
    let warm = alternating_factor(w, r, Some(prev), None, solver)?;
    let cold = alternating_factor(w, r, None, None, solver)?;
    let its = warm.iterations + cold.iterations;
    Ok((if cold.residual_fro < warm.residual_fro { cold } else { warm }, its))
}

/// Runs the factorization stage of `method` on `w` with `k` bases.
pub fn factor_with(method: Method, w: &TrackingMatrix, k: usize, cfg: &RobustConfig) -> Result<FactorResult> {
    if k == 0 {
        return Err(Error::Argument("basis count must be positive".into()));
    }
    cfg.validate()?;
    match method {
        Method::Direct => run_factor(w, 3 * k + 1, cfg, false, vec![Vector2::zeros(); w.frames()], method),
        Method::Robust => run_factor(w, 3 * k + 1, cfg, true, vec![Vector2::zeros(); w.frames()], method),
        Method::Registered => {
            let (reg, c) = register_to_centroid(w).map_err(|e| e.at_step(1))?;
            run_factor(&reg, 3 * k, cfg, true, c.centroids, method)
        }
    }
}

/// Steps 1–5 of the robust algorithm: initial rank-(3k+1) fit, threshold,
/// reject and refit (repeated), then a Gaussian-weighted refit.
pub fn robust_factor(w: &TrackingMatrix, k: usize, cfg: &RobustConfig) -> Result<FactorResult> {
    factor_with(Method::Robust, w, k, cfg)
}

/// Plain rank-(3k+1) factorization of all observed cells.
pub fn direct_factor(w: &TrackingMatrix, k: usize, cfg: &RobustConfig) -> Result<FactorResult> {
    factor_with(Method::Direct, w, k, cfg)
}

fn run_factor(
    w: &TrackingMatrix,
    r: usize,
    cfg: &RobustConfig,
    robust: bool,
    offsets: Vec<Vector2<f64>>,
    method: Method,
) -> Result<FactorResult> {
    let step1 = |e: Error| e.at_step(1);
    check_solvability(w.mask(), r).map_err(step1)?;
    let mut f = initial_factor(w, r, cfg).map_err(step1)?;
    let mut iterations = f.iterations;
    if robust && cfg.huber_steps > 0 {
        let (g, its) = robust_start(w, f, r, cfg).map_err(step1)?;
        f = g;
        iterations += its;
    }
    let initial_objective = f.residual_fro * f.residual_fro;
    let mut mask = w.mask().clone();
    let mut rounds = Vec::new();
    let mut weighted = None;
    let mut weight_sigma = None;
    let mut weights = WeightMatrix::from_mask(&mask);

    if robust {
        for round in 0..cfg.rejection_rounds {
            // Step 2 thresholds the initial fit; step 4 repeats on refits.
            let step = if round == 0 { 2 } else { 4 };
            let current = w.with_mask(mask.clone()).map_err(|e| e.at_step(step))?;
            let report = residual_matrix(&current, &f, cfg).map_err(|e| e.at_step(step))?;
            let step = if round == 0 { 3 } else { 4 };
            let mut norms = report.norms.clone();
            let (mut rejected, mut round_iters) = (0, 0);
            for _ in 0..cfg.refits_per_round {
                let next = reject_outliers(&mask, &norms, report.threshold, r).map_err(|e| e.at_step(step))?;
                let dropped = mask.count() - next.count();
                if dropped == 0 {
                    break;
                }
                rejected += dropped;
                mask = next;
                let current = w.with_mask(mask.clone()).map_err(|e| e.at_step(step))?;
                let (g, its) = refit(&current, r, &f, &cfg.solver).map_err(|e| e.at_step(step))?;
                f = g;
                iterations += its;
                round_iters += its;
                norms = residual_norms(&current, &f).map_err(|e| e.at_step(step))?.1;
            }
            rounds.push(AuditRound {
                threshold: report.threshold,
                sigma_hat: report.sigma_hat,
                rejected_count: rejected,
                objective: f.residual_fro * f.residual_fro,
                iterations: round_iters,
            });
        }

        let current = w.with_mask(mask.clone()).map_err(|e| e.at_step(5))?;
        let report = residual_matrix(&current, &f, cfg).map_err(|e| e.at_step(5))?;
        weights = estimate_weights(&report, &mask, cfg);
        f = alternating_factor(&current, r, Some(&f), Some(&weights), &cfg.solver).map_err(|e| e.at_step(5))?;
        iterations += f.iterations;
        weighted = Some(f.residual_fro * f.residual_fro);
        weight_sigma = Some(report.sigma_hat);
    }

    let report = residual_report(w, &f, &mask, cfg).map_err(|e| e.at_step(5))?;
    let audit = Audit {
        format_version: 1,
        method,
        rank: r,
        observed: w.mask().count(),
        inliers: mask.count(),
        initial_objective,
        rounds,
        weighted_objective: weighted,
        weight_sigma_hat: weight_sigma,
    };
    Ok(FactorResult { factor: f, inlier_mask: mask, weights, report, audit, iterations, offsets })
}

/// Upgrades a factorization-stage result to a Euclidean reconstruction
/// (steps 6 and 7).
pub fn upgrade_result(fr: FactorResult, k: usize, cfg: &UpgradeConfig) -> Result<Reconstruction> {
    let h = recover_upgrade(&fr.factor, k, cfg).map_err(|e| e.at_step(6))?;
    let mut euclidean = apply_upgrade(&fr.factor, &h, k).map_err(|e| e.at_step(7))?;
    for (mo, off) in euclidean.motions.iter_mut().zip(&fr.offsets) {
        mo.translation += off;
    }
    Ok(Reconstruction {
        euclidean,
        upgrade: h,
        factor: fr.factor,
        inlier_mask: fr.inlier_mask,
        report: fr.report,
        audit: fr.audit,
        iterations: fr.iterations,
        offsets: fr.offsets,
    })
}

/// The full robust algorithm, steps 1–7.
pub fn robust_reconstruct(w: &TrackingMatrix, k: usize, cfg: &RobustConfig) -> Result<Reconstruction> {
    reconstruct_with(Method::Robust, w, k, cfg)
}

/// Runs `method` end to end.
pub fn reconstruct_with(method: Method, w: &TrackingMatrix, k: usize, cfg: &RobustConfig) -> Result<Reconstruction> {
    let fr = factor_with(method, w, k, cfg)?;
    upgrade_result(fr, k, &cfg.upgrade)
}
