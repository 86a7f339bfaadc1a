use std::path::{Path, PathBuf};

use nrsfm::eval::{evaluate_parts, sweep, SweepConfig};
use nrsfm::synth::GroundTruthFile;
use nrsfm::{corrupt, generate_scene, parse_trk, par, reconstruct_with, Audit, Mask, Parallelism, RobustConfig};
use serde::de::DeserializeOwned;

use crate::args::{EvalArgs, ReconstructArgs, SweepArgs, SynthArgs};
use crate::error::{CliError, Result};
use crate::files::{xyz, ReconstructionFile};
use crate::output::{read, to_json, OutDir, MANIFEST};

pub const CLEAN_TRK: &str = "clean.trk";
pub const TRACKING_TRK: &str = "tracking.trk";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const RECONSTRUCTION: &str = "reconstruction.json";
pub const AUDIT: &str = "audit.json";
pub const METRICS: &str = "metrics.json";
pub const SWEEP_CSV: &str = "sweep.csv";

fn snapshot<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>)> {
    let bytes = read(path)?;
    let v = serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_path_buf(), source })?;
    Ok((v, bytes))
}

pub fn synth(a: &SynthArgs, command: &[String]) -> Result<()> {
    let cfg = a.scene.config(a.noise, a.outliers, a.seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut gt = generate_scene(&cfg)?;
    let w = corrupt(&mut gt, &cfg)?;

    let mut out = OutDir::create(&a.out_dir)?;
    out.write(CLEAN_TRK, gt.clean_tracking.to_trk().as_bytes())?;
    out.write(TRACKING_TRK, w.to_trk().as_bytes())?;
    out.write(GROUND_TRUTH, &to_json(&GroundTruthFile::from_truth(&gt, &cfg)))?;
    out.finish(MANIFEST, command, snapshot(&cfg), &[cfg.seed])?;
    println!(
        "{} frames, {} points, {} outlier cells -> {}",
        gt.frames(),
        gt.points(),
        gt.outlier_mask.count(),
        a.out_dir.display()
    );
    Ok(())
}

/// Single-threaded: only the sweep parallelizes, across trials.
fn sequential(mut cfg: RobustConfig) -> RobustConfig {
    cfg.solver.parallelism = Parallelism::Sequential;
    cfg.upgrade.parallelism = Parallelism::Sequential;
    cfg
}

pub fn reconstruct(a: &ReconstructArgs, command: &[String]) -> Result<()> {
    let cfg = sequential(a.pipeline.config());
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bytes = read(&a.input)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| CliError::io(&a.input, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    let w = parse_trk(&text)?;
    let rec = reconstruct_with(a.mode, &w, a.bases, &cfg)?;

    let mut out = OutDir::create(&a.out_dir)?;
    out.input(&a.input, &bytes);
    let file = ReconstructionFile::new(a.mode, a.bases, w.mask(), &rec);
    out.write(RECONSTRUCTION, &to_json(&file))?;
    out.write(AUDIT, &to_json(&rec.audit))?;
    out.subdir("frames")?;
    for (i, s) in rec.euclidean.shapes.iter().enumerate() {
        out.write(&format!("frames/frame_{i:04}.xyz"), xyz(s).as_bytes())?;
    }
    let config = serde_json::json!({ "mode": a.mode, "bases": a.bases, "pipeline": cfg });
    out.finish(MANIFEST, command, config, &[cfg.upgrade.seed])?;

    let rejected: usize = rec.audit.rounds.iter().map(|r| r.rejected_count).sum();
    println!(
        "{}: {} of {} observed cells kept ({} rejected), {} ALS iterations",
        a.mode.name(),
        rec.audit.inliers,
        rec.audit.observed,
        rejected,
        rec.iterations
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6}"))
}

pub fn eval(a: &EvalArgs, command: &[String]) -> Result<()> {
    let rec_path = a.recon.join(RECONSTRUCTION);
    let (rec, rec_bytes): (ReconstructionFile, _) = read_json(&rec_path)?;
    let audit_path = a.recon.join(AUDIT);
    let (audit, audit_bytes): (Audit, _) = read_json(&audit_path)?;
    let (gtf, gt_bytes): (GroundTruthFile, _) = read_json(&a.gt)?;
    let gt = gtf.to_truth()?;
    if (gt.frames(), gt.points()) != (rec.frames, rec.points) {
        return Err(nrsfm::Error::DimensionMismatch(format!(
            "reconstruction is {} frames x {} points, ground truth is {} x {}",
            rec.frames,
            rec.points,
            gt.frames(),
            gt.points()
        ))
        .into());
    }
    let observed = Mask::try_from(&rec.observed_mask)?;
    let inliers = Mask::try_from(&rec.inlier_mask)?;
    let shapes = rec.shape_clouds()?;
    let report = evaluate_parts(&gt, &rec.reprojection()?, &inliers, &observed, Some(&shapes), Some(audit))?;

    let out_path = a.out.clone().unwrap_or_else(|| a.recon.join(METRICS));
    let dir = match out_path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = out_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| METRICS.into());
    let mut out = OutDir::create(&dir)?;
    out.input(&rec_path, &rec_bytes);
    out.input(&audit_path, &audit_bytes);
    out.input(&a.gt, &gt_bytes);
    out.write(&name, &to_json(&report))?;
    // The reconstruction directory already holds the reconstruct manifest.
    out.finish(&format!("{name}.manifest.json"), command, serde_json::json!({}), &[])?;

    println!("reprojection variance (inlier cells): {:.6}", report.reproj_variance_inliers);
    println!("reprojection rms: {:.6}", report.reproj_rms);
    println!("shape error: {}", fmt_opt(report.shape_error));
    println!("detection precision: {}", fmt_opt(report.detection_precision));
    println!("detection recall: {}", fmt_opt(report.detection_recall));
    Ok(())
}

pub fn sweep_cmd(a: &SweepArgs, command: &[String]) -> Result<()> {
    let cfg = SweepConfig {
        noise: a.noise.0.clone(),
        ratios: a.ratios.0.clone(),
        seeds: (0..a.trials as u64).map(|i| a.seed + i).collect(),
        methods: a.methods.0.clone(),
        k: a.bases,
        scene: a.scene.config(0.0, 0.0, 0),
        robust: a.pipeline.config(),
        parallelism: Parallelism::Rayon,
    };
    let table = par::with_jobs(a.jobs, || sweep(&cfg)).map_err(|e| match e {
        nrsfm::Error::Argument(m) | nrsfm::Error::Precondition(m) => CliError::Usage(m),
        e => e.into(),
    })?;
    let csv = table.to_csv();

    let mut out = OutDir::create(&a.out_dir)?;
    out.write(SWEEP_CSV, csv.as_bytes())?;
    out.finish(MANIFEST, command, snapshot(&cfg), &cfg.seeds)?;
    print!("{csv}");

    let total = cfg.seeds.len() * cfg.noise.len() * cfg.ratios.len() * cfg.methods.len();
    if table.failures() == total {
        return Err(CliError::AllTrialsFailed(total));
    }
    Ok(())
}
