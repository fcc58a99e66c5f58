//! Slice-diffusion reconstruction from a run file, compared against SGSP
//! and the zero-filled baseline.
//!
//! ```text
//! cargo run --release --example diffusion_recon -- [run.json] [seed] [train_steps]
//! ```
//!
//! Defaults to `configs/sms3_r3.json` with a shortened training run.

use std::path::PathBuf;

use sms_diffusion::cli::RunConfig;
use sms_diffusion::experiment::{prepare, train_score};

fn main() -> sms_diffusion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/sms3_r3.json"));
    let mut cfg = RunConfig::load(&path)?;
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    if let Some(steps) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.score.train.steps = steps;
    } else {
        cfg.score.train.steps = 150;
    }

    let trained = train_score(&cfg.simulation, &cfg.calibration, &cfg.score, &cfg.diffusion.schedule, None)?;
    println!("trained {} steps, final loss {:.4e}", cfg.score.train.steps, trained.log.smoothed(20).last().unwrap());

    let mut spec = cfg.simulation.clone();
    spec.phantom.seed = seed;
    let prep = prepare(&spec, &cfg.calibration)?;
    let zf = prep.score(&prep.zero_filled()?)?;
    let sg = prep.sgsp(&cfg.sgsp)?;
    let sg_metrics = prep.score(&sg.x)?;
    let mut setup = cfg.diffusion;
    setup.seed = seed;
    let out = prep.diffusion(&trained.net, &setup, &cfg.sgsp, Some(sg.x))?;
    for r in out.trajectory.iter().step_by(10) {
        println!(
            "step {:>4}  sigma {:.3e}  consistency {:.2e}  nmse {:.3e}",
            r.step,
            r.sigma,
            r.consistency,
            r.nmse.unwrap_or(f64::NAN)
        );
    }
    println!("NMSE zero-filled {:.4e}", zf.nmse);
    println!("NMSE SGSP        {:.4e}", sg_metrics.nmse);
    println!("NMSE diffusion   {:.4e}", prep.score(&out.x)?.nmse);
    Ok(())
}
