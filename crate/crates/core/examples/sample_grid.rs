//! Briefly trains the denoiser and writes the sample grid: truth,
//! observation, a ladder along one private axis, the Monte-Carlo mean and
//! the per-pixel std.
//!
//! `ITERS`, `ROWS` and `MNIST_DIR` are optional.

use std::env;

use pwae::experiment::{prepare, run_training};
use pwae::io::config::RunConfig;
use pwae::io::grid::{sample_grid, save_grid};
use pwae::sampler::{conditional_moments, perturbed_estimates};
use pwae::tensor::Batch;

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> pwae::Result<()> {
    let mut c = RunConfig::preset("denoise", &var("MNIST_DIR", "data/mnist".to_string()))?;
    c.train.iterations = var("ITERS", 50);
    let data = prepare(&c)?;
    let out = run_training(&c, &data, env::temp_dir().join("pwae-grid"))?;
    let rows = var("ROWS", 6usize).min(data.test_x2.n());
    let sigmas = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let idx: Vec<usize> = (0..rows).collect();
    let truth = data.test_x1.select(&idx)?;
    let obs = data.test_x2.select(&idx)?;

    let shape = obs.shape().to_vec();
    let mut ladder = vec![Vec::new(); sigmas.len()];
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for i in 0..rows {
        let x2 = obs.single(i)?;
        for (col, img) in perturbed_estimates(&out.model, &x2, &sigmas, 0)?.into_iter().enumerate() {
            ladder[col].extend_from_slice(img.data());
        }
        let (m, s) = conditional_moments(&out.model, &x2, 32, i as u64)?;
        mean.extend(m);
        std.extend(s);
    }
    let ladder: Vec<Batch> = ladder.into_iter().map(|d| Batch::new(rows, shape.clone(), d)).collect::<pwae::Result<_>>()?;
    let grid = sample_grid(Some(&truth), &obs, &ladder, &Batch::new(rows, shape.clone(), mean)?, &Batch::new(rows, shape, std)?)?;
    let path = env::temp_dir().join("pwae-grid.png");
    save_grid(&grid, &path, &c.hash()?)?;
    println!("wrote {}", path.display());
    Ok(())
}
