//! Simulate SMS-3 data, calibrate kernels and compare SGSP against the
//! zero-filled adjoint.
//!
//! ```text
//! cargo run --release --example sgsp_recon -- [seed] [accel] [noise_std]
//! ```

use std::time::Instant;

use sms_diffusion::calibration::{calibrate, CalibConfig};
use sms_diffusion::metrics::nmse;
use sms_diffusion::operators::CompositeH;
use sms_diffusion::phantom::PhantomSpec;
use sms_diffusion::sampling::{simulate, SimulationSpec, SmsSampling};
use sms_diffusion::sgsp::{sgsp_reconstruct, zero_filled, SgspConfig};

fn main() -> sms_diffusion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let accel = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let noise = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let mut spec = SimulationSpec::new(PhantomSpec::new(3, 8, 64, 64, seed), accel, 32);
    spec.noise_std = noise;
    let sim = simulate(&spec)?;
    let start = Instant::now();
    let (spirit, grappa) = calibrate(&sim.calib, sim.plan.acs_range(), spec.caipi_increment, &CalibConfig::default())?;
    println!("calibration: {:.2?}", start.elapsed());

    let h = CompositeH::new(&spirit, &grappa, spec.caipi_increment, sim.truth.dims())?;
    let d = SmsSampling::new(sim.plan.clone(), 3);
    let baseline = zero_filled(&sim.y, &d)?;
    let start = Instant::now();
    let out = sgsp_reconstruct(&sim.y, &d, &h, &SgspConfig::default())?;
    println!(
        "SGSP: {} CG iterations in {:.2?}, objective {:.3e} -> {:.3e}",
        out.log.iterations,
        start.elapsed(),
        out.log.objective[0],
        out.log.objective.last().unwrap()
    );
    println!("NMSE zero-filled {:.4e}", nmse(&baseline, &sim.truth)?);
    println!("NMSE SGSP        {:.4e}", nmse(&out.x, &sim.truth)?);
    Ok(())
}
