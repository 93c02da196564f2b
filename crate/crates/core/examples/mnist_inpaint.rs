//! MNIST inpainting with a fixed mask. Prints PSNR, the spread of the
//! conditional samples inside the hole and the residual on observed pixels.
//!
//! `ITERS` and `MNIST_DIR` override the preset.

use std::env;

use pwae::experiment::{evaluate, prepare, run_training};
use pwae::io::config::RunConfig;

fn main() -> pwae::Result<()> {
    let dir = env::var("MNIST_DIR").unwrap_or_else(|_| "data/mnist".into());
    let mut c = RunConfig::preset("inpaint", &dir)?;
    c.train.iterations = env::var("ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(300);
    let data = prepare(&c)?;
    let out = run_training(&c, &data, env::temp_dir().join("pwae-inpaint"))?;
    let report = evaluate(&out.model, &c, &data, false)?;
    println!("{}", report.to_json()?);
    Ok(())
}
