//! The `smsdiff` command line tool.
//!
//! Every subcommand reads an optional JSON run file, applies flag
//! overrides, and writes its artifacts into `out_dir`: tensors as CT4F,
//! everything else as JSON. Each command also writes the resolved run
//! file as `<command>.config.json`; feeding it back with `--config`
//! repeats the run exactly.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{calibrate, CalibConfig};
use crate::error::{Error, Result};
use crate::experiment::{diffusion_reconstruct, train_score, DiffusionSetup, ScoreSetup};
use crate::io::{read_json, read_tensor, write_json, write_tensor};
use crate::kernel::KernelSet;
use crate::metrics::{metrics, Metrics};
use crate::operators::CompositeH;
use crate::phantom::PhantomSpec;
use crate::plot::write_slice_pngs;
use crate::sampling::{simulate, SamplingPlan, SimulationSpec, SmsSampling};
use crate::score::{load_checkpoint, save_checkpoint, CheckpointMeta, CheckpointSink};
use crate::sgsp::{sgsp_reconstruct, SgspConfig};
use crate::tensor::{ComplexTensor4, Dims};

#[derive(Debug, Parser)]
#[command(name = "smsdiff", version, about = "Simultaneous multi-slice MRI reconstruction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phantom scan: truth, coil maps, calibration data, measurement, plan.
    Simulate(SimulateFlags),
    /// Fit SPIRiT and slice-GRAPPA kernels from the calibration data.
    Calibrate,
    /// SGSP reconstruction of the measurement.
    ReconSgsp,
    /// Train the score network on simulated phantoms.
    TrainScore,
    /// Projected diffusion reconstruction of the measurement.
    ReconDiffusion(DiffusionFlags),
    /// NMSE and PSNR of a reconstruction against the truth.
    Metrics {
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// One grayscale PNG per slice of an image-domain tensor.
    Plot {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SimulateFlags {
    #[arg(long)]
    pub accel: Option<usize>,
    #[arg(long)]
    pub acs_lines: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiffusionFlags {
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub lambda_dc: Option<f64>,
    /// Projection weight of `T = (I + Psi / mu)^{-1}`.
    #[arg(long)]
    pub mu: Option<f64>,
}

/// File locations. Unset entries default to standard names in `out_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub truth: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    /// Directory holding `spirit.*` and `grappa.*`.
    pub kernels: Option<PathBuf>,
    /// Directory holding `score.*`.
    pub checkpoint: Option<PathBuf>,
    /// Starting point for the reverse process.
    pub init: Option<PathBuf>,
    /// Reconstruction scored by `metrics`.
    pub recon: Option<PathBuf>,
    /// Tensor drawn by `plot`.
    pub tensor: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required by `simulate`, `train-score` and `recon-diffusion`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_simulation")]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub calibration: CalibConfig,
    #[serde(default)]
    pub sgsp: SgspConfig,
    #[serde(default)]
    pub score: ScoreSetup,
    #[serde(default)]
    pub diffusion: DiffusionSetup,
    #[serde(default)]
    pub inputs: Inputs,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_simulation() -> SimulationSpec {
    SimulationSpec::new(PhantomSpec::new(3, 8, 64, 64, 0), 3, 32)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out_dir: default_out_dir(),
            simulation: default_simulation(),
            calibration: CalibConfig::default(),
            sgsp: SgspConfig::default(),
            score: ScoreSetup::default(),
            diffusion: DiffusionSetup::default(),
            inputs: Inputs::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn path(&self, set: &Option<PathBuf>, default: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.out_dir.join(default))
    }
}

/// Sampling plan plus the slice count it applies to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub slices: usize,
    pub plan: SamplingPlan,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config_sha256: String,
    config: &'a RunConfig,
    result: T,
}

/// Exit status for an error: 2 config or usage, 3 missing file, 4 file
/// format, 5 geometry, 6 numerical failure, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Io { .. } => 1,
        Error::Format { .. } => 4,
        Error::Geometry(_) => 5,
        Error::Calibration(_)
        | Error::Solver(_)
        | Error::StepSize(_)
        | Error::OperatorDefect(_)
        | Error::Divergence { .. }
        | Error::Training { .. } => 6,
    }
}

fn category(code: i32) -> &'static str {
    match code {
        2 => "config",
        3 => "missing file",
        4 => "format",
        5 => "geometry",
        6 => "numerical",
        _ => "other",
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("smsdiff: {e} (exit {code}, {})", category(code));
            code
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    match cli.command {
        Command::Simulate(f) => {
            let seed = require_seed(&cfg, "simulate")?;
            cfg.simulation.phantom.seed = seed;
            if let Some(v) = f.accel {
                cfg.simulation.accel = v;
            }
            if let Some(v) = f.acs_lines {
                cfg.simulation.acs_lines = v;
            }
            if let Some(v) = f.noise_std {
                cfg.simulation.noise_std = v;
            }
            cmd_simulate(&cfg)
        }
        Command::Calibrate => cmd_calibrate(&cfg),
        Command::ReconSgsp => cmd_recon_sgsp(&cfg),
        Command::TrainScore => {
            cfg.score.train.seed = require_seed(&cfg, "train-score")?;
            cmd_train_score(&cfg)
        }
        Command::ReconDiffusion(f) => {
            cfg.diffusion.seed = require_seed(&cfg, "recon-diffusion")?;
            let s = &mut cfg.diffusion.schedule;
            s.n_steps = f.n_steps.unwrap_or(s.n_steps);
            s.sigma_min = f.sigma_min.unwrap_or(s.sigma_min);
            s.sigma_max = f.sigma_max.unwrap_or(s.sigma_max);
            s.kappa = f.kappa.unwrap_or(s.kappa);
            cfg.diffusion.lambda_dc = f.lambda_dc.unwrap_or(cfg.diffusion.lambda_dc);
            let p = &mut cfg.diffusion.sampler.projection;
            p.mu = f.mu.unwrap_or(p.mu);
            cmd_recon_diffusion(&cfg)
        }
        Command::Metrics { recon, truth } => {
            cfg.inputs.recon = recon.or(cfg.inputs.recon);
            cfg.inputs.truth = truth.or(cfg.inputs.truth);
            cmd_metrics(&cfg)
        }
        Command::Plot { input } => {
            cfg.inputs.tensor = input.or(cfg.inputs.tensor);
            cmd_plot(&cfg)
        }
    }
}

fn require_seed(cfg: &RunConfig, command: &str) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| Error::Config(format!("`{command}` is stochastic: set \"seed\" in the run file or pass --seed")))
}

fn finish<T: Serialize>(cfg: &RunConfig, command: &str, result: T) -> Result<()> {
    let report = Report { command, config_sha256: cfg.hash(), config: cfg, result };
    write_json(cfg, cfg.out_dir.join(format!("{command}.config.json")))?;
    let path = cfg.out_dir.join(format!("{command}.json"));
    write_json(&report, &path)?;
    println!("{command}: wrote {}", path.display());
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let sim = simulate(&cfg.simulation)?;
    let dir = &cfg.out_dir;
    write_tensor(&sim.truth, dir.join("truth.ct4"))?;
    write_tensor(&sim.coils, dir.join("coils.ct4"))?;
    write_tensor(&sim.calib, dir.join("calib.ct4"))?;
    write_tensor(&sim.y, dir.join("y.ct4"))?;
    let plan = PlanFile { slices: sim.truth.dims().slices, plan: sim.plan.clone() };
    write_json(&plan, dir.join("plan.json"))?;
    #[derive(Serialize)]
    struct Out {
        dims: [usize; 4],
        sampled_lines: usize,
    }
    finish(cfg, "simulate", Out { dims: sim.truth.dims().as_array(), sampled_lines: sim.plan.n_sampled() })
}

fn load_plan(cfg: &RunConfig) -> Result<PlanFile> {
    read_json(cfg.path(&cfg.inputs.plan, "plan.json"))
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<()> {
    let calib = read_tensor(cfg.path(&cfg.inputs.calib, "calib.ct4"))?;
    let pf = load_plan(cfg)?;
    pf.plan.check_grid(calib.dims())?;
    let (spirit, grappa) = calibrate(&calib, pf.plan.acs_range(), pf.plan.caipi_increment, &cfg.calibration)?;
    let dir = cfg.path(&cfg.inputs.kernels, "");
    spirit.0.save(&dir, "spirit")?;
    grappa.0.save(&dir, "grappa")?;
    #[derive(Serialize)]
    struct Out {
        spirit_residuals: Vec<f64>,
        grappa_residuals: Vec<f64>,
    }
    finish(cfg, "calibrate", Out { spirit_residuals: spirit.0.residuals, grappa_residuals: grappa.0.residuals })
}

/// Measurement, sampling operator and composite `H` from the artifacts.
fn load_problem(cfg: &RunConfig) -> Result<(ComplexTensor4, SmsSampling, CompositeH)> {
    let y = read_tensor(cfg.path(&cfg.inputs.measurement, "y.ct4"))?;
    let pf = load_plan(cfg)?;
    let kdir = cfg.path(&cfg.inputs.kernels, "");
    let spirit = KernelSet::load(&kdir, "spirit")?.into_spirit()?;
    let grappa = KernelSet::load(&kdir, "grappa")?.into_slice_grappa()?;
    let yd = y.dims();
    let dims = Dims::new(pf.slices, yd.coils, yd.ny, yd.nx);
    let h = CompositeH::new(&spirit, &grappa, pf.plan.caipi_increment, dims)?;
    let sampling = SmsSampling::new(pf.plan, pf.slices);
    Ok((y, sampling, h))
}

/// The truth, if configured explicitly or present at its default path.
fn optional_truth(cfg: &RunConfig) -> Result<Option<ComplexTensor4>> {
    let p = cfg.path(&cfg.inputs.truth, "truth.ct4");
    if cfg.inputs.truth.is_none() && !p.exists() {
        return Ok(None);
    }
    read_tensor(p).map(Some)
}

fn score_against(x: &ComplexTensor4, truth: &Option<ComplexTensor4>) -> Result<Option<Metrics>> {
    truth.as_ref().map(|t| metrics(x, t)).transpose()
}

pub fn cmd_recon_sgsp(cfg: &RunConfig) -> Result<()> {
    let (y, sampling, h) = load_problem(cfg)?;
    let truth = optional_truth(cfg)?;
    let out = sgsp_reconstruct(&y, &sampling, &h, &cfg.sgsp)?;
    write_tensor(&out.x, cfg.out_dir.join("sgsp.ct4"))?;
    #[derive(Serialize)]
    struct Out {
        metrics: Option<Metrics>,
        log: crate::sgsp::SgspLog,
    }
    finish(cfg, "recon-sgsp", Out { metrics: score_against(&out.x, &truth)?, log: out.log })
}

pub fn cmd_train_score(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.path(&cfg.inputs.checkpoint, "");
    let sched = &cfg.diffusion.schedule;
    let sink = CheckpointSink { dir: dir.clone(), stem: "score".into(), schedule: sched };
    let trained = train_score(&cfg.simulation, &cfg.calibration, &cfg.score, sched, Some(&sink))?;
    let meta = CheckpointMeta {
        net: *trained.net.config(),
        schedule: *sched,
        seed: cfg.score.train.seed,
        step: cfg.score.train.steps,
        n_params: trained.net.n_params(),
    };
    save_checkpoint(&trained.net, &meta, &dir, "score")?;
    finish(cfg, "train-score", trained.log)
}

pub fn cmd_recon_diffusion(cfg: &RunConfig) -> Result<()> {
    let (y, sampling, h) = load_problem(cfg)?;
    let truth = optional_truth(cfg)?;
    let (net, _) = load_checkpoint(&cfg.path(&cfg.inputs.checkpoint, ""), "score")?;
    let init = cfg.inputs.init.as_ref().map(read_tensor).transpose()?;
    let out = diffusion_reconstruct(&y, &sampling, &h, &net, &cfg.diffusion, &cfg.sgsp, init, truth.as_ref())?;
    write_tensor(&out.x, cfg.out_dir.join("diffusion.ct4"))?;
    #[derive(Serialize)]
    struct Out {
        metrics: Option<Metrics>,
        unconverged_projections: usize,
        trajectory: Vec<crate::diffusion::StepRecord>,
    }
    let result = Out {
        metrics: score_against(&out.x, &truth)?,
        unconverged_projections: out.unconverged_projections,
        trajectory: out.trajectory,
    };
    finish(cfg, "recon-diffusion", result)
}

fn stem_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "tensor".into())
}

pub fn cmd_metrics(cfg: &RunConfig) -> Result<()> {
    let rp = cfg.path(&cfg.inputs.recon, "diffusion.ct4");
    let recon = read_tensor(&rp)?;
    let truth = read_tensor(cfg.path(&cfg.inputs.truth, "truth.ct4"))?;
    let m = metrics(&recon, &truth)?;
    let path = cfg.out_dir.join(format!("metrics_{}.json", stem_of(&rp)));
    write_json(&m, &path)?;
    finish(cfg, "metrics", m)
}

pub fn cmd_plot(cfg: &RunConfig) -> Result<()> {
    let p = cfg
        .inputs
        .tensor
        .clone()
        .ok_or_else(|| Error::Config("plot needs --input or inputs.tensor in the run file".into()))?;
    let t = read_tensor(&p)?;
    let files = write_slice_pngs(&t, &cfg.out_dir, &stem_of(&p))?;
    finish(cfg, "plot", files)
}
