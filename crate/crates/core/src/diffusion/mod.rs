//! Self-consistency-projected score-based diffusion.
//!
//! The projection `T` pulls noise fields toward the null space of `H - I`,
//! the perturbation kernel draws `x_t = x_0 + sigma(t) T(z)`, and the
//! reverse sampler integrates
//!
//! ```text
//! dx = (eta/2 Psi(x) - beta T(score(x | y))) dt + sqrt(beta) T dw
//! ```
//!
//! from `t = 1` down to `t = eps`.

mod projection;
mod sampler;
mod schedule;

pub use projection::{perturb, project_t, proximal_psi, Projected, ProjectionConfig};
pub use sampler::{
    initial_state, reverse_sample, BrownianPath, DriftScheme, Guidance, Init, NoiseSource, RngNoise, SampleOutcome,
    SamplerConfig, ScoreModel, StepRecord,
};
pub use schedule::{ConstantRate, Frozen, NoiseSchedule, Schedule};
