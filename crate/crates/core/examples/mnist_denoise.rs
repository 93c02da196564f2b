//! MNIST denoising: trains on `X2 = X1 + N(0, I)` and reports PSNR of the
//! point estimate against the noisy input.
//!
//! `ITERS`, `TRAIN`, `WIDTHS` (comma separated) and `MNIST_DIR` override
//! the preset.

use std::env;

use pwae::experiment::{evaluate, prepare, run_training};
use pwae::io::config::RunConfig;
use pwae::model::ArchitectureSpec;

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> pwae::Result<()> {
    let dir = var("MNIST_DIR", "data/mnist".to_string());
    let mut c = RunConfig::preset(&var("PRESET", "denoise".to_string()), &dir)?;
    c.train.iterations = var("ITERS", 300);
    c.eval.conditions = var("CONDITIONS", 100);
    c.eval.n_samples = var("SAMPLES", 32);
    if let pwae::tasks::DatasetSource::Mnist { train, .. } = &mut c.task.dataset {
        *train = var("TRAIN", 9000);
    }
    if let Ok(w) = env::var("WIDTHS") {
        let widths: Vec<usize> = w.split(',').filter_map(|s| s.parse().ok()).collect();
        c.model.architecture = ArchitectureSpec { output2: c.model.architecture.output2, ..ArchitectureSpec::mnist_with_widths(&widths) };
    }
    let data = prepare(&c)?;
    let out_dir = env::temp_dir().join(format!("pwae-{}", c.name));
    let out = run_training(&c, &data, &out_dir)?;
    let h = &out.report.history;
    for m in h.iter().step_by((h.len() / 10).max(1)) {
        println!("step {:5} total {:.4} recon {:.4} div {:.4} fidelity {:.4} ({:.1}s)", m.step, m.loss.total, m.loss.recon, m.loss.div, m.loss.fidelity, m.wall_clock);
    }
    let report = evaluate(&out.model, &c, &data, true)?;
    println!("{}", report.to_json()?);
    println!("artifacts in {}", out.dir.display());
    Ok(())
}
