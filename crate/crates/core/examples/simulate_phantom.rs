//! Simulate an SMS acquisition and write the tensors and slice images.
//!
//! ```text
//! cargo run --release --example simulate_phantom -- [out_dir] [seed]
//! ```

use std::path::PathBuf;

use sms_diffusion::io::{read_tensor, write_tensor};
use sms_diffusion::phantom::PhantomSpec;
use sms_diffusion::plot::write_slice_pngs;
use sms_diffusion::sampling::{simulate, SimulationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sim_out".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    std::fs::create_dir_all(&out)?;

    let mut spec = SimulationSpec::new(PhantomSpec::new(3, 8, 64, 64, seed), 3, 32);
    spec.noise_std = 0.01;
    let sim = simulate(&spec)?;
    let plan = &sim.plan;
    println!("truth {}  measurement {}", sim.truth.dims(), sim.y.dims());
    println!(
        "{} of {} phase-encode lines sampled, ACS rows {:?}",
        plan.n_sampled(),
        sim.truth.dims().ny,
        plan.acs_range()
    );

    for (name, t) in [("truth", &sim.truth), ("calib", &sim.calib), ("y", &sim.y)] {
        let p = out.join(format!("{name}.ct4"));
        write_tensor(t, &p)?;
        assert_eq!(&read_tensor(&p)?, t);
    }
    for p in write_slice_pngs(&sim.truth, &out, "truth")? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
