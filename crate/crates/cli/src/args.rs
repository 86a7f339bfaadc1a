use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nrsfm::{Method, RobustConfig, SceneConfig, SolverConfig, UpgradeConfig};

#[derive(Parser, Debug)]
#[command(name = "nrsfm", version, about = "Robust nonrigid structure from motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a deformable cube sequence and corrupt it.
    Synth(SynthArgs),
    /// Reconstruct shapes and cameras from a TRK file.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against ground truth.
    Eval(EvalArgs),
    /// Run the noise × outlier ratio benchmark grid.
    Sweep(SweepArgs),
}

/// Scene fields; the noise, outlier ratio and seed live on the commands
/// because the sweep takes grids for them.
#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 21)]
    pub side_points: usize,
    #[arg(long, default_value_t = 3)]
    pub dynamic_sets: usize,
    #[arg(long, default_value_t = 33)]
    pub dynamic_set_size: usize,
    #[arg(long, default_value_t = 800)]
    pub image_size: u32,
    #[arg(long, default_value_t = 100.0)]
    pub cube_side: f64,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
}

impl SceneArgs {
    pub fn config(&self, noise_sigma: f64, outlier_ratio: f64, seed: u64) -> SceneConfig {
        SceneConfig {
            frames: self.frames,
            side_points: self.side_points,
            dynamic_sets: self.dynamic_sets,
            dynamic_set_size: self.dynamic_set_size,
            image_size: self.image_size,
            noise_sigma,
            outlier_ratio,
            seed,
            cube_side: self.cube_side,
            amplitude: self.amplitude,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Gaussian noise standard deviation, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Fraction of cells replaced by uniform outliers.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Overrides for the robust pipeline, the ALS solver and the upgrade.
/// Defaults are the library's.
#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    #[arg(long)]
    pub threshold_multiplier: Option<f64>,
    #[arg(long)]
    pub rejection_rounds: Option<usize>,
    #[arg(long)]
    pub refits_per_round: Option<usize>,
    #[arg(long)]
    pub huber_steps: Option<usize>,
    #[arg(long)]
    pub weight_floor: Option<f64>,
    #[arg(long)]
    pub noise_floor: Option<f64>,
    /// ALS relative convergence tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub degeneracy_tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub projection_iters: Option<usize>,
    #[arg(long)]
    pub lm_iters: Option<usize>,
    #[arg(long)]
    pub refine_passes: Option<usize>,
    #[arg(long)]
    pub upgrade_seed: Option<u64>,
}

impl PipelineArgs {
    pub fn config(&self) -> RobustConfig {
        let d = RobustConfig::default();
        let (s, u): (SolverConfig, UpgradeConfig) = (d.solver, d.upgrade);
        RobustConfig {
            threshold_multiplier: self.threshold_multiplier.unwrap_or(d.threshold_multiplier),
            rejection_rounds: self.rejection_rounds.unwrap_or(d.rejection_rounds),
            refits_per_round: self.refits_per_round.unwrap_or(d.refits_per_round),
            huber_steps: self.huber_steps.unwrap_or(d.huber_steps),
            weight_floor: self.weight_floor.unwrap_or(d.weight_floor),
            noise_floor: self.noise_floor.unwrap_or(d.noise_floor),
            solver: SolverConfig {
                tol: self.tol.unwrap_or(s.tol),
                max_iters: self.max_iters.unwrap_or(s.max_iters),
                parallelism: s.parallelism,
            },
            upgrade: UpgradeConfig {
                degeneracy_tol: self.degeneracy_tol.unwrap_or(u.degeneracy_tol),
                restarts: self.restarts.unwrap_or(u.restarts),
                projection_iters: self.projection_iters.unwrap_or(u.projection_iters),
                lm_iters: self.lm_iters.unwrap_or(u.lm_iters),
                refine_passes: self.refine_passes.unwrap_or(u.refine_passes),
                seed: self.upgrade_seed.unwrap_or(u.seed),
                parallelism: u.parallelism,
            },
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Input TRK file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Number of shape bases k.
    #[arg(long, value_parser = positive)]
    pub bases: usize,
    /// direct, robust or registered.
    #[arg(long, default_value = "robust", value_parser = parse_method)]
    pub mode: Method,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory written by `reconstruct`.
    #[arg(long)]
    pub recon: PathBuf,
    /// Ground-truth JSON written by `synth`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Metrics output; defaults to metrics.json inside the reconstruction
    /// directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// start:end:step, inclusive.
    #[arg(long, default_value = "1:5:1", value_parser = parse_range)]
    pub noise: Grid,
    /// Comma-separated outlier ratios.
    #[arg(long, default_value = "0.05,0.20", value_parser = parse_list, allow_hyphen_values = true)]
    pub ratios: Grid,
    /// Seeds per grid cell: seed, seed + 1, ...
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub trials: usize,
    /// First trial seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "direct,robust", value_parser = parse_methods)]
    pub methods: Methods,
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub bases: usize,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// One flag value holding a whole list; a bare `Vec` field would make clap
/// expect the flag repeated.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct Methods(pub Vec<Method>);

fn parse_range(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    let (start, end, step) = match nums[..] {
        [v] => (v, v, 1.0),
        [a, b, c] => (a, b, c),
        _ => return Err("expected start:end:step".into()),
    };
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err("need finite start <= end and step > 0".into());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok(Grid((0..count).map(|i| start + i as f64 * step).collect()))
}

fn parse_list(s: &str) -> Result<Grid, String> {
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>().map(Grid)
}

fn parse_methods(s: &str) -> Result<Methods, String> {
    s.split(',').map(|p| parse_method(p.trim())).collect::<Result<_, _>>().map(Methods)
}
