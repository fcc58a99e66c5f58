//! Reconstruction quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::ComplexTensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nmse: f64,
    /// `None` when the reconstruction is exact.
    pub psnr: Option<f64>,
}

/// `||recon - truth||^2 / ||truth||^2`.
pub fn nmse(recon: &ComplexTensor4, truth: &ComplexTensor4) -> Result<f64> {
    recon.check_same_shape(truth)?;
    let t2 = truth.norm_sqr();
    if t2 == 0.0 {
        return Err(invalid!("NMSE undefined for an all-zero reference"));
    }
    let e2: f64 = recon.data().iter().zip(truth.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(e2 / t2)
}

/// PSNR in dB of magnitude images with peak `max |truth|`.
pub fn psnr(recon: &ComplexTensor4, truth: &ComplexTensor4) -> Result<Option<f64>> {
    recon.check_same_shape(truth)?;
    let peak = truth.max_abs();
    let mse = recon.data().iter().zip(truth.data()).map(|(a, b)| (a.norm() - b.norm()).powi(2)).sum::<f64>()
        / truth.len() as f64;
    if mse == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (peak * peak / mse).log10()))
}

pub fn metrics(recon: &ComplexTensor4, truth: &ComplexTensor4) -> Result<Metrics> {
    Ok(Metrics { nmse: nmse(recon, truth)?, psnr: psnr(recon, truth)? })
}
