//! Train a small score network on simulated phantoms and save it as a
//! checkpoint.
//!
//! ```text
//! cargo run --release --example train_score -- [steps] [out_dir]
//! ```

use std::path::PathBuf;

use sms_diffusion::calibration::CalibConfig;
use sms_diffusion::diffusion::NoiseSchedule;
use sms_diffusion::experiment::{train_score, ScoreSetup};
use sms_diffusion::phantom::PhantomSpec;
use sms_diffusion::sampling::SimulationSpec;
use sms_diffusion::score::{load_checkpoint, save_checkpoint, CheckpointMeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "score_out".into()));
    std::fs::create_dir_all(&out)?;

    let spec = SimulationSpec::new(PhantomSpec::new(3, 4, 32, 32, 0), 3, 16);
    let sched = NoiseSchedule { sigma_max: 0.2, kappa: 1000.0, n_steps: 100, ..NoiseSchedule::default() };
    let mut setup =
        ScoreSetup { width: 16, hidden_layers: 2, phantoms: 8, sigma_data: Some(0.085), ..ScoreSetup::default() };
    setup.train.steps = steps;
    setup.projection.max_iters = 10;

    let trained = train_score(&spec, &CalibConfig::default(), &setup, &sched, None)?;
    let curve = trained.log.smoothed(20);
    for i in (0..curve.len()).step_by((curve.len() / 10).max(1)) {
        println!("step {i:>5}  loss {:.4e}", curve[i]);
    }

    let net = trained.net;
    let meta = CheckpointMeta {
        net: *net.config(),
        schedule: sched,
        seed: setup.train.seed,
        step: steps,
        n_params: net.n_params(),
    };
    save_checkpoint(&net, &meta, &out, "score")?;
    let (back, _) = load_checkpoint(&out, "score")?;
    assert_eq!(back.params, net.params);
    println!("{} parameters saved to {}", net.n_params(), out.join("score.ct4").display());
    Ok(())
}
