//! Fit SPIRiT and slice-GRAPPA kernels from the ACS region and check how
//! well the fully sampled truth satisfies the resulting self-consistency.
//!
//! ```text
//! cargo run --release --example calibrate_kernels -- [kernel_size] [seed]
//! ```

use sms_diffusion::calibration::{calibrate, CalibConfig, Tikhonov};
use sms_diffusion::operators::CompositeH;
use sms_diffusion::phantom::PhantomSpec;
use sms_diffusion::sampling::{simulate, SimulationSpec};

fn main() -> sms_diffusion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let size = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    let spec = SimulationSpec::new(PhantomSpec::new(3, 8, 64, 64, seed), 3, 32);
    let sim = simulate(&spec)?;
    for ridge in [1e-6, 1e-4, 1e-2] {
        let cfg = CalibConfig::with_kernel(size, size, Tikhonov::Scaled(ridge));
        let (spirit, grappa) = calibrate(&sim.calib, sim.plan.acs_range(), spec.caipi_increment, &cfg)?;
        let h = CompositeH::new(&spirit, &grappa, spec.caipi_increment, sim.truth.dims())?;
        let consistency = h.residual(&sim.kspace)?.norm() / sim.kspace.norm();
        let fmt = |r: &[f64]| r.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ");
        println!("ridge {ridge:.0e}, {size}x{size} kernels");
        println!("  SPIRiT fit residuals       {}", fmt(&spirit.0.residuals));
        println!("  slice-GRAPPA fit residuals {}", fmt(&grappa.0.residuals));
        println!("  ||(H - I) k|| / ||k||      {consistency:.3e}");
    }
    Ok(())
}
