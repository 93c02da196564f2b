//! Trains on `X1 ~ N(0, I)`, `X2 = X1 + N(0, 0.5^2 I)` and compares the
//! conditional samples with the analytic posterior.

use std::env;

use pwae::eval::{latent_diagnostics, w2_to_posterior};
use pwae::latent::LatentSplit;
use pwae::measures::SinkhornOptions;
use pwae::model::{ArchitectureSpec, PairedModel};
use pwae::objective::{Fidelity, TrainConfig};
use pwae::tasks::LinearGaussianOracle;
use pwae::train::{train, TrainingData};

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> pwae::Result<()> {
    let split = LatentSplit::new(var("D1", 2), var("D2", 2), var("D3", 2))?;
    let hidden = var("HIDDEN", 64usize);
    let oracle = LinearGaussianOracle::isotropic(2, 1.0, 0.5)?;
    let (x1, x2) = oracle.sample_pairs(var("TRAIN", 4096), 1)?;
    let data = TrainingData::paired(x1, x2)?;
    let config = TrainConfig {
        lambda1: var("L1", 1.0),
        lambda2: var("L2", 1.0),
        batch_size: var("BATCH", 128),
        learning_rate: var("LR", 1e-3),
        iterations: var("ITERS", 2000),
        seed: 7,
        ..TrainConfig::default()
    };
    let mut model = PairedModel::new(ArchitectureSpec::dense(2, 2, vec![hidden, hidden]), split, 7)?;
    let report = train(&mut model, &data, &Fidelity::Denoising, &config, |m| {
        if m.step % 250 == 0 {
            println!(
                "step {:5} total {:.4} recon {:.4} div {:.4} fidelity {:.4} ({:.1}s)",
                m.step, m.loss.total, m.loss.recon, m.loss.div, m.loss.fidelity, m.wall_clock
            );
        }
    })?;
    println!("unconverged steps: {}", report.unconverged_steps);

    let (_, held_out) = oracle.sample_pairs(10, 99)?;
    let w = w2_to_posterior(&model, &oracle, &held_out, 512, 3)?;
    let worst = w.iter().cloned().fold(0.0, f64::max);
    println!("W2 to posterior per condition: {:?}", w.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    println!("mean {:.3} max {:.3}", w.iter().sum::<f64>() / w.len() as f64, worst);

    if env::var("VERBOSE").is_ok() {
        for i in 0..3 {
            let c = held_out.single(i)?;
            let s = pwae::sampler::sample_conditional(&model, &c, 512, 11)?;
            let (m, sd) = pwae::sampler::moments(&s);
            let (pm, _) = oracle.posterior(c.data())?;
            println!("x2 {:?} model mean {:.3?} std {:.3?} posterior mean {:.3?} std 0.447", c.data(), m, sd, pm.as_slice());
        }
    }
    let (e1, e2) = oracle.sample_pairs(256, 1234)?;
    let diag = latent_diagnostics(&model, &e1, &e2, &SinkhornOptions::default(), 5)?;
    println!("{diag:?}");
    Ok(())
}
