//! The self-consistency projection `T = (I + Psi / mu)^-1` and the
//! perturbation it induces on the forward noise.
//!
//! ```text
//! cargo run --release --example projection
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sms_diffusion::calibration::{calibrate, CalibConfig};
use sms_diffusion::diffusion::{perturb, project_t, NoiseSchedule, ProjectionConfig, Schedule};
use sms_diffusion::operators::{CompositeH, SelfConsistency};
use sms_diffusion::phantom::PhantomSpec;
use sms_diffusion::sampling::{simulate, SimulationSpec, SmsSampling};
use sms_diffusion::sgsp::zero_filled;

fn main() -> sms_diffusion::Result<()> {
    let spec = SimulationSpec::new(PhantomSpec::new(3, 4, 64, 64, 2), 3, 32);
    let sim = simulate(&spec)?;
    let (spirit, grappa) = calibrate(&sim.calib, sim.plan.acs_range(), spec.caipi_increment, &CalibConfig::default())?;
    let h = CompositeH::new(&spirit, &grappa, spec.caipi_increment, sim.truth.dims())?;

    // The zero-filled image is far from consistent; T pulls it back.
    let z = zero_filled(&sim.y, &SmsSampling::new(sim.plan.clone(), 3))?;
    println!("zero-filled residual {:.3e}", h.residual_norm(&z)? / z.norm());
    for mu in [1.0, 1e-1, 1e-2, 1e-3] {
        let cfg = ProjectionConfig { mu, max_iters: 200, tol: 1e-8 };
        let p = project_t(&z, &h, &cfg)?;
        println!(
            "mu {mu:.0e}: residual {:.3e}, norm kept {:.3}, {} CG iterations",
            h.residual_norm(&p.z)? / z.norm(),
            p.z.norm() / z.norm(),
            p.iterations
        );
    }

    // Forward noise is white noise passed through T, so it mostly lives in
    // the consistent subspace.
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in [0.1, 0.5, 1.0] {
        let (xt, n) = perturb(&sim.truth, t, &sched, &h, &ProjectionConfig::default(), &mut rng)?;
        let noise = xt.sub(&sim.truth);
        println!(
            "t {t}: sigma {:.3}, projected noise keeps {:.1}% of the white-noise energy",
            sched.sigma(t),
            100.0 * noise.norm_sqr() / (sched.sigma(t).powi(2) * n.norm_sqr())
        );
    }
    Ok(())
}
