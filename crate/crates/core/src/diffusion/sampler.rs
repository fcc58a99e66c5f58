use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{geometry, invalid, Error, Result};
use crate::operators::SelfConsistency;
use crate::sampling::SmsSampling;
use crate::tensor::{ComplexTensor4, Dims, Domain};

use super::projection::{project_t, proximal_psi, ProjectionConfig};
use super::schedule::Schedule;

/// Unconditional score `s(x, t)`; `sigma` is the schedule's noise scale at `t`.
pub trait ScoreModel {
    fn score(&self, x: &ComplexTensor4, t: f64, sigma: f64) -> Result<ComplexTensor4>;
}

impl<F> ScoreModel for F
where
    F: Fn(&ComplexTensor4, f64, f64) -> Result<ComplexTensor4>,
{
    fn score(&self, x: &ComplexTensor4, t: f64, sigma: f64) -> Result<ComplexTensor4> {
        self(x, t, sigma)
    }
}

/// Standard complex Gaussian draws for the sampler.
pub trait NoiseSource {
    /// A fresh `CN(0, I)` tensor (initial state, corrector moves).
    fn fresh(&mut self, dims: Dims) -> ComplexTensor4;
    /// Brownian increment of step `step` out of `n_steps`, divided by
    /// `sqrt(h)` so that it is `CN(0, I)`.
    fn increment(&mut self, step: usize, n_steps: usize, dims: Dims) -> Result<ComplexTensor4>;
}

pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(seed: u64) -> Self {
        RngNoise { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl NoiseSource for RngNoise {
    fn fresh(&mut self, dims: Dims) -> ComplexTensor4 {
        ComplexTensor4::random_normal(dims, Domain::Image, &mut self.rng)
    }

    fn increment(&mut self, _step: usize, _n_steps: usize, dims: Dims) -> Result<ComplexTensor4> {
        Ok(self.fresh(dims))
    }
}

/// One fixed Brownian path on a fine uniform grid, shared by coarser
/// discretizations whose step count divides the fine one.
pub struct BrownianPath {
    initial: Option<ComplexTensor4>,
    fine: Vec<ComplexTensor4>,
    rng: ChaCha8Rng,
}

impl BrownianPath {
    pub fn new(dims: Dims, n_fine: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = ComplexTensor4::random_normal(dims, Domain::Image, &mut rng);
        let fine = (0..n_fine).map(|_| ComplexTensor4::random_normal(dims, Domain::Image, &mut rng)).collect();
        BrownianPath { initial: Some(initial), fine, rng }
    }
}

impl NoiseSource for BrownianPath {
    fn fresh(&mut self, dims: Dims) -> ComplexTensor4 {
        match self.initial.take() {
            Some(t) if t.dims() == dims => t,
            _ => ComplexTensor4::random_normal(dims, Domain::Image, &mut self.rng),
        }
    }

    fn increment(&mut self, step: usize, n_steps: usize, dims: Dims) -> Result<ComplexTensor4> {
        let n_fine = self.fine.len();
        if n_steps == 0 || !n_fine.is_multiple_of(n_steps) {
            return Err(invalid!("{n_steps} steps do not divide the {n_fine}-step path"));
        }
        let r = n_fine / n_steps;
        let mut out = ComplexTensor4::zeros(dims, Domain::Image);
        for w in &self.fine[step * r..(step + 1) * r] {
            if w.dims() != dims {
                return Err(geometry!("path holds {}, sampler needs {}", w.dims(), dims));
            }
            out.axpy_real(1.0, w);
        }
        out.scale_real(1.0 / (r as f64).sqrt());
        Ok(out)
    }
}

/// Measurement term of the conditional score.
#[derive(Clone, Copy)]
pub struct Guidance<'a> {
    pub sampling: &'a SmsSampling,
    pub y: &'a ComplexTensor4,
    pub lambda_dc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// `F^{-1} D^* y`.
    ZeroFilled,
}

/// How the `eta/2 Psi` drift is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    /// Forward Euler on the drift, as in plain Euler-Maruyama.
    Explicit,
    /// Backward Euler on the linear drift: `x <- (I + h eta/2 Psi)^{-1} x`.
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub projection: ProjectionConfig,
    pub drift: DriftScheme,
    pub init: Init,
    /// Inject noise on the last step too.
    pub final_noise: bool,
    /// Replace sampled lines of the final iterate by the measurement.
    pub hard_dc: bool,
    /// Langevin corrector moves per step.
    pub corrector_steps: usize,
    pub corrector_snr: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            projection: ProjectionConfig::default(),
            drift: DriftScheme::SemiImplicit,
            init: Init::ZeroFilled,
            final_noise: false,
            hard_dc: false,
            corrector_steps: 0,
            corrector_snr: 0.16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub sigma: f64,
    /// `||(H - I) F x|| / ||x||`.
    pub consistency: f64,
    /// `||D F x - y|| / ||y||`, when guided.
    pub data_residual: Option<f64>,
    /// NMSE against the truth, when supplied.
    pub nmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub x: ComplexTensor4,
    /// Entry 0 is the initial state; entry `k` follows step `k`.
    pub trajectory: Vec<StepRecord>,
    /// Projections that stopped before reaching their tolerance.
    pub unconverged_projections: usize,
}

struct Run<'a, H: SelfConsistency + ?Sized> {
    h: &'a H,
    guidance: Option<Guidance<'a>>,
    cfg: &'a SamplerConfig,
    truth: Option<&'a ComplexTensor4>,
    unconverged: usize,
}

impl<H: SelfConsistency + ?Sized> Run<'_, H> {
    fn project(&mut self, z: &ComplexTensor4) -> Result<ComplexTensor4> {
        let p = project_t(z, self.h, &self.cfg.projection)?;
        if !p.converged {
            self.unconverged += 1;
        }
        Ok(p.z)
    }

    fn conditional_score(
        &self,
        score: &(impl ScoreModel + ?Sized),
        x: &ComplexTensor4,
        t: f64,
        sigma: f64,
    ) -> Result<ComplexTensor4> {
        let mut s = score.score(x, t, sigma)?;
        if s.dims() != x.dims() {
            return Err(geometry!("score model returned {} for input {}", s.dims(), x.dims()));
        }
        if let Some(g) = self.guidance {
            if g.lambda_dc > 0.0 && sigma > 0.0 {
                let mut r = g.y.clone();
                r.axpy_real(-1.0, &g.sampling.apply_image(x)?);
                s.axpy_real(g.lambda_dc / (sigma * sigma), &g.sampling.adjoint_image(&r)?);
            }
        }
        Ok(s)
    }

    fn record(&self, step: usize, t: f64, sigma: f64, x: &ComplexTensor4) -> Result<StepRecord> {
        let xn = x.norm();
        let consistency = if xn > 0.0 { self.h.residual_norm(x)? / xn } else { 0.0 };
        let data_residual = match self.guidance {
            Some(g) => {
                let mut r = g.sampling.apply_image(x)?;
                r.axpy_real(-1.0, g.y);
                let yn = g.y.norm();
                Some(if yn > 0.0 { r.norm() / yn } else { r.norm() })
            }
            None => None,
        };
        let nmse = match self.truth {
            Some(truth) => Some(crate::metrics::nmse(x, truth)?),
            None => None,
        };
        Ok(StepRecord { step, t, sigma, consistency, data_residual, nmse })
    }
}

/// Starting point from the configured rule.
pub fn initial_state(dims: Dims, init: Init, guidance: Option<Guidance<'_>>) -> Result<ComplexTensor4> {
    match (init, guidance) {
        (Init::ZeroFilled, Some(g)) => g.sampling.adjoint_image(g.y),
        _ => Ok(ComplexTensor4::zeros(dims, Domain::Image)),
    }
}

/// Integrate the reverse SDE from `t = 1` to the schedule's final time.
///
/// The start is `x_init + sigma(1) T(xi)`. Each step evaluates the
/// conditional score, projects it with `T`, adds `sqrt(beta h) T(w)` and
/// applies the `eta/2 Psi` drift.
#[allow(clippy::too_many_arguments)]
pub fn reverse_sample<H, S, M, N>(
    h: &H,
    score: &M,
    sched: &S,
    guidance: Option<Guidance<'_>>,
    x_init: Option<ComplexTensor4>,
    cfg: &SamplerConfig,
    noise: &mut N,
    truth: Option<&ComplexTensor4>,
) -> Result<SampleOutcome>
where
    H: SelfConsistency + ?Sized,
    S: Schedule + ?Sized,
    M: ScoreModel + ?Sized,
    N: NoiseSource + ?Sized,
{
    cfg.projection.validate()?;
    let dims = h.dims();
    if let Some(g) = guidance {
        if !(g.lambda_dc >= 0.0) {
            return Err(invalid!("guidance weight must be non-negative"));
        }
        if g.y.dims() != dims.with_slices(1) || g.sampling.slices() != dims.slices {
            return Err(geometry!("measurement {} does not match {}", g.y.dims(), dims));
        }
        g.sampling.plan().check_grid(dims)?;
    }
    if let Some(t) = truth {
        h.check_image(t)?;
    }
    let grid = sched.grid();
    if grid.len() < 2 {
        return Err(invalid!("schedule grid needs at least one step"));
    }
    let n_steps = grid.len() - 1;
    let mut run = Run { h, guidance, cfg, truth, unconverged: 0 };

    let mut x = match x_init {
        Some(x) => {
            h.check_image(&x)?;
            x
        }
        None => initial_state(dims, cfg.init, guidance)?,
    };
    let sigma1 = sched.sigma(grid[0]);
    if sigma1 != 0.0 {
        let xi = noise.fresh(dims);
        x.axpy_real(sigma1, &run.project(&xi)?);
    }
    let mut trajectory = vec![run.record(0, grid[0], sigma1, &x)?];

    for k in 0..n_steps {
        let t = grid[k];
        let step = t - grid[k + 1];
        let (sigma, beta, eta) = (sched.sigma(t), sched.beta(t), sched.eta(t));

        let ts = {
            let s = run.conditional_score(score, &x, t, sigma)?;
            if !s.is_finite() {
                return Err(Error::Divergence { step: k, what: format!("non-finite score at t = {t}") });
            }
            run.project(&s)?
        };
        let mut next = x.clone();
        if beta != 0.0 {
            next.axpy_real(beta * step, &ts);
        }
        let inject = k + 1 < n_steps || cfg.final_noise;
        let w = noise.increment(k, n_steps, dims)?;
        if inject && beta != 0.0 {
            next.axpy_real((beta * step).sqrt(), &run.project(&w)?);
        }
        let c = 0.5 * eta * step;
        if c != 0.0 {
            match cfg.drift {
                DriftScheme::Explicit => next.axpy_real(-c, &h.normal_psi(&x)?),
                DriftScheme::SemiImplicit => {
                    let p = proximal_psi(&next, h, c, cfg.projection.max_iters, cfg.projection.tol)?;
                    if !p.converged {
                        run.unconverged += 1;
                    }
                    next = p.z;
                }
            }
        }
        x = next;

        let t_next = grid[k + 1];
        let sigma_next = sched.sigma(t_next);
        for _ in 0..cfg.corrector_steps {
            let s = run.conditional_score(score, &x, t_next, sigma_next)?;
            let s = run.project(&s)?;
            let xi = noise.fresh(dims);
            let sn = s.norm();
            if sn == 0.0 {
                break;
            }
            let eps_c = 2.0 * (cfg.corrector_snr * xi.norm() / sn).powi(2);
            x.axpy_real(eps_c, &s);
            x.axpy_real((2.0 * eps_c).sqrt(), &run.project(&xi)?);
        }

        if !x.is_finite() {
            return Err(Error::Divergence { step: k, what: format!("non-finite iterate at t = {t_next}") });
        }
        trajectory.push(run.record(k + 1, t_next, sigma_next, &x)?);
    }

    if cfg.hard_dc {
        if let Some(g) = guidance {
            let mut r = g.y.clone();
            r.axpy_real(-1.0, &g.sampling.apply_image(&x)?);
            // D D^* equals the slice count on sampled lines.
            x.axpy_real(1.0 / dims.slices as f64, &g.sampling.adjoint_image(&r)?);
            let last = trajectory.len() - 1;
            let (t, sigma) = (trajectory[last].t, trajectory[last].sigma);
            trajectory[last] = run.record(n_steps, t, sigma, &x)?;
        }
    }
    Ok(SampleOutcome { x, trajectory, unconverged_projections: run.unconverged })
}
