use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cg::{conjugate_gradient, CgOptions};
use crate::error::{invalid, Result};
use crate::operators::SelfConsistency;
use crate::tensor::{ComplexTensor4, Domain};

use super::schedule::Schedule;

/// `T(z) = argmin_w ||(H - I) F w||^2 + mu ||w - z||^2`, solved by CG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub mu: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { mu: 1e-2, max_iters: 10, tol: 1e-6 }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(invalid!("proximity weight mu must be positive, got {}", self.mu));
        }
        if self.max_iters == 0 {
            return Err(invalid!("projection needs at least one CG iteration"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid!("projection tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Projected {
    pub z: ComplexTensor4,
    /// False when CG stopped at `max_iters` before reaching `tol`; `z` is
    /// then the last iterate, which still has a residual no larger than the
    /// input's.
    pub converged: bool,
    pub iterations: usize,
}

/// Apply `T` to an image-domain tensor.
pub fn project_t<H: SelfConsistency + ?Sized>(z: &ComplexTensor4, h: &H, cfg: &ProjectionConfig) -> Result<Projected> {
    cfg.validate()?;
    proximal_psi(z, h, 1.0 / cfg.mu, cfg.max_iters, cfg.tol)
}

/// `(I + c Psi)^{-1} v`, the minimizer of `c ||(H - I) F w||^2 + ||w - v||^2`.
///
/// CG starts at `v`, so every iterate lowers the objective and therefore
/// never increases the self-consistency residual beyond that of `v`.
pub fn proximal_psi<H: SelfConsistency + ?Sized>(
    v: &ComplexTensor4,
    h: &H,
    c: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Projected> {
    h.check_image(v)?;
    if !v.is_finite() {
        return Err(invalid!("projection input contains non-finite values"));
    }
    if c == 0.0 {
        return Ok(Projected { z: v.clone(), converged: true, iterations: 0 });
    }
    let out = conjugate_gradient(
        |w| {
            let mut a = h.normal_psi(w)?;
            a.scale_real(c);
            a.axpy_real(1.0, w);
            Ok(a)
        },
        v,
        v.clone(),
        CgOptions { max_iters, tol },
    )?;
    Ok(Projected { z: out.x, converged: out.converged, iterations: out.iterations })
}

/// Draw `z ~ CN(0, I)` and return `(x0 + sigma(t) T(z), z)`.
pub fn perturb<H, S, R>(
    x0: &ComplexTensor4,
    t: f64,
    sched: &S,
    h: &H,
    cfg: &ProjectionConfig,
    rng: &mut R,
) -> Result<(ComplexTensor4, ComplexTensor4)>
where
    H: SelfConsistency + ?Sized,
    S: Schedule + ?Sized,
    R: Rng + ?Sized,
{
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid!("perturbation time must lie in (0, 1], got {t}"));
    }
    x0.check_domain(Domain::Image)?;
    let z = ComplexTensor4::random_normal(x0.dims(), Domain::Image, rng);
    let sigma = sched.sigma(t);
    let mut xt = x0.clone();
    if sigma != 0.0 {
        xt.axpy_real(sigma, &project_t(&z, h, cfg)?.z);
    }
    Ok((xt, z))
}
