//! Unpaired translation between two 2-D Gaussians with a fully shared latent.
//! Reports the learned transport cost against the closed-form Monge map.
//!
//! `ITERS` overrides the preset iteration count.

use std::env;

use pwae::experiment::{evaluate, prepare, run_training};
use pwae::io::config::RunConfig;

fn main() -> pwae::Result<()> {
    let mut c = RunConfig::preset("translate", "")?;
    if let Some(n) = env::var("ITERS").ok().and_then(|v| v.parse().ok()) {
        c.train.iterations = n;
    }
    let data = prepare(&c)?;
    let out = run_training(&c, &data, env::temp_dir().join("pwae-translate"))?;
    println!("trained {} steps in {:.1}s", c.train.iterations, out.report.history.last().map_or(0.0, |m| m.wall_clock));
    let report = evaluate(&out.model, &c, &data, true)?;
    if let Some(t) = &report.translation {
        println!("transport cost {:.4} (oracle {:.4}, relative error {:.3})", t.transport_cost, t.oracle_cost, t.cost_relative_error);
        println!("mean direction error {:.2} deg, cycle error {:.4}", t.mean_direction_error_deg, t.cycle_error);
    }
    Ok(())
}
