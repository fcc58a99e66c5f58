//! End-to-end phantom experiments: simulate, calibrate, reconstruct with
//! SGSP and with the projected diffusion sampler, and score the results.
//!
//! The command line tool and the examples are thin wrappers over these
//! functions.

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibConfig};
use crate::diffusion::{
    reverse_sample, Guidance, NoiseSchedule, ProjectionConfig, RngNoise, SampleOutcome, SamplerConfig,
};
use crate::error::{invalid, Result};
use crate::kernel::{SliceGrappaKernelSet, SpiritKernelSet};
use crate::metrics::{metrics, Metrics};
use crate::operators::CompositeH;
use crate::sampling::{simulate, Simulation, SimulationSpec, SmsSampling};
use crate::score::{train, CheckpointSink, ScoreNet, ScoreNetConfig, TrainConfig, TrainLog};
use crate::sgsp::{sgsp_reconstruct, zero_filled, SgspConfig, SgspOutcome};
use crate::tensor::ComplexTensor4;

/// A simulated scan with its calibrated operators.
pub struct Prepared {
    pub spec: SimulationSpec,
    pub sim: Simulation,
    pub spirit: SpiritKernelSet,
    pub grappa: SliceGrappaKernelSet,
    pub h: CompositeH,
    pub sampling: SmsSampling,
}

pub fn prepare(spec: &SimulationSpec, calib: &CalibConfig) -> Result<Prepared> {
    let sim = simulate(spec)?;
    let (spirit, grappa) = calibrate(&sim.calib, sim.plan.acs_range(), spec.caipi_increment, calib)?;
    let h = CompositeH::new(&spirit, &grappa, spec.caipi_increment, sim.truth.dims())?;
    let sampling = SmsSampling::new(sim.plan.clone(), spec.phantom.n_slice);
    Ok(Prepared { spec: spec.clone(), sim, spirit, grappa, h, sampling })
}

impl Prepared {
    pub fn zero_filled(&self) -> Result<ComplexTensor4> {
        zero_filled(&self.sim.y, &self.sampling)
    }

    pub fn sgsp(&self, cfg: &SgspConfig) -> Result<SgspOutcome> {
        sgsp_reconstruct(&self.sim.y, &self.sampling, &self.h, cfg)
    }

    pub fn score(&self, x: &ComplexTensor4) -> Result<Metrics> {
        metrics(x, &self.sim.truth)
    }
}

/// Network shape and training budget for the score model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSetup {
    pub width: usize,
    pub hidden_layers: usize,
    pub embed_dim: usize,
    pub sigma_data: Option<f64>,
    pub train: TrainConfig,
    /// Projection used inside the training loss.
    pub projection: ProjectionConfig,
    /// Number of training phantoms.
    pub phantoms: usize,
    /// Training phantom `i` uses seed `seed_base + i`.
    pub seed_base: u64,
}

impl Default for ScoreSetup {
    fn default() -> Self {
        ScoreSetup {
            width: 32,
            hidden_layers: 3,
            embed_dim: 16,
            sigma_data: None,
            train: TrainConfig::default(),
            projection: ProjectionConfig::default(),
            phantoms: 20,
            seed_base: 1000,
        }
    }
}

impl ScoreSetup {
    pub fn net_config(&self, slices: usize, coils: usize) -> ScoreNetConfig {
        ScoreNetConfig {
            slices,
            coils,
            width: self.width,
            hidden_layers: self.hidden_layers,
            embed_dim: self.embed_dim,
            sigma_data: self.sigma_data,
        }
    }
}

/// Ground-truth images of `n` phantoms that share the scan geometry and
/// coil maps of `spec`.
pub fn training_set(spec: &SimulationSpec, n: usize, seed_base: u64) -> Result<Vec<ComplexTensor4>> {
    (0..n)
        .map(|i| {
            let mut s = spec.clone();
            s.phantom.seed = seed_base + i as u64;
            s.noise_std = 0.0;
            Ok(simulate(&s)?.truth)
        })
        .collect()
}

pub struct Trained {
    pub net: ScoreNet,
    pub log: TrainLog,
}

/// Train a score model on phantoms drawn like `spec`. The projection uses
/// `H` calibrated on the first training phantom.
pub fn train_score(
    spec: &SimulationSpec,
    calib: &CalibConfig,
    setup: &ScoreSetup,
    sched: &NoiseSchedule,
    sink: Option<&CheckpointSink<'_>>,
) -> Result<Trained> {
    if setup.phantoms == 0 {
        return Err(invalid!("score training needs at least one phantom"));
    }
    let data = training_set(spec, setup.phantoms, setup.seed_base)?;
    let mut first = spec.clone();
    first.phantom.seed = setup.seed_base;
    first.noise_std = 0.0;
    let prep = prepare(&first, calib)?;
    let p = &spec.phantom;
    let mut net = ScoreNet::new(setup.net_config(p.n_slice, p.n_coil), setup.train.seed)?;
    let log = train(&mut net, &data, sched, &prep.h, &setup.projection, &setup.train, sink)?;
    Ok(Trained { net, log })
}

/// Sampler settings for a diffusion reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSetup {
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub lambda_dc: f64,
    pub seed: u64,
    /// Start the reverse process from the SGSP reconstruction instead of
    /// the sampler's own initial state.
    pub warm_start: bool,
}

impl Default for DiffusionSetup {
    fn default() -> Self {
        DiffusionSetup {
            schedule: NoiseSchedule::default(),
            sampler: SamplerConfig::default(),
            lambda_dc: 1.0,
            seed: 0,
            warm_start: false,
        }
    }
}

impl Prepared {
    /// Run the reverse sampler on this scan's measurement. `x_init`, when
    /// given, overrides both the sampler init and `warm_start`.
    pub fn diffusion(
        &self,
        net: &ScoreNet,
        setup: &DiffusionSetup,
        sgsp: &SgspConfig,
        x_init: Option<ComplexTensor4>,
    ) -> Result<SampleOutcome> {
        diffusion_reconstruct(&self.sim.y, &self.sampling, &self.h, net, setup, sgsp, x_init, Some(&self.sim.truth))
    }
}

/// Diffusion reconstruction of measurement `y`; `truth`, when given, is
/// only used for the NMSE trajectory.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_reconstruct(
    y: &ComplexTensor4,
    sampling: &SmsSampling,
    h: &CompositeH,
    net: &ScoreNet,
    setup: &DiffusionSetup,
    sgsp: &SgspConfig,
    x_init: Option<ComplexTensor4>,
    truth: Option<&ComplexTensor4>,
) -> Result<SampleOutcome> {
    setup.schedule.validate()?;
    let x_init = match x_init {
        Some(x) => Some(x),
        None if setup.warm_start => Some(sgsp_reconstruct(y, sampling, h, sgsp)?.x),
        None => None,
    };
    let guidance = Guidance { sampling, y, lambda_dc: setup.lambda_dc };
    let mut noise = RngNoise::new(setup.seed);
    reverse_sample(h, net, &setup.schedule, Some(guidance), x_init, &setup.sampler, &mut noise, truth)
}
