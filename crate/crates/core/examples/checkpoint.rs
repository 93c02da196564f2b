//! Saves a model, reloads it into a fresh instance and checks that both give
//! the same point estimates.

use pwae::io::checkpoint::{file_sha256, load_checkpoint, save_checkpoint, RunStamp};
use pwae::latent::LatentSplit;
use pwae::model::{ArchitectureSpec, PairedModel};
use pwae::sampler::point_estimate;
use pwae::tasks::LinearGaussianOracle;

fn main() -> pwae::Result<()> {
    let arch = ArchitectureSpec::dense(2, 2, vec![32, 32]);
    let split = LatentSplit::new(2, 2, 0)?;
    let model = PairedModel::new(arch.clone(), split, 5)?;
    let stamp = RunStamp { task: "linear-gaussian".into(), config_hash: "example".into(), seed: 5, steps: 0, config: String::new() };
    let path = std::env::temp_dir().join("pwae-example.ckpt");
    save_checkpoint(&model, &stamp, &path)?;
    println!("wrote {} sha256={}", path.display(), file_sha256(&path)?);

    let mut restored = PairedModel::new(arch, split, 6)?;
    let manifest = load_checkpoint(&mut restored, &path)?;
    println!("{manifest:?}");
    let (_, x2) = LinearGaussianOracle::isotropic(2, 1.0, 0.5)?.sample_pairs(4, 9)?;
    for i in 0..x2.n() {
        let c = x2.single(i)?;
        let (a, b) = (point_estimate(&model, &c)?, point_estimate(&restored, &c)?);
        println!("{:?} -> {:?} equal={}", c.data(), a.data(), a.data() == b.data());
    }
    Ok(())
}
