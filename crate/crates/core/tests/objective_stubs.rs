mod common;

use common::Stub;
use pwae::latent::LatentSplit;
use pwae::measures::{exact_wasserstein, Divergence, Epsilon, SinkhornOptions};
use pwae::model::PairedMaps;
use pwae::objective::*;
use pwae::sampler;
use pwae::tasks::GaussianPairSpec;
use pwae::tensor::Batch;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity_stub(split: LatentSplit, dim: usize) -> Stub {
    assert_eq!(split.first_width(), dim);
    assert_eq!(split.second_width(), dim);
    Stub {
        split,
        x1_shape: vec![dim],
        x2_shape: vec![dim],
        e1: Box::new(|x| x.to_vec()),
        e2: Box::new(|x| x.to_vec()),
        d1: Box::new(|z| z.to_vec()),
        d2: Box::new(|z| z.to_vec()),
    }
}

fn scaled_decoder_stub(split: LatentSplit, dim: usize, t: f64) -> Stub {
    let mut s = identity_stub(split, dim);
    s.d1 = Box::new(move |z| z.iter().map(|v| t * v).collect());
    s.d2 = Box::new(move |z| z.iter().map(|v| t * v).collect());
    s
}

fn rows(r: &[&[f64]]) -> Batch {
    Batch::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn reconstruction_of_identity_and_zero_decoders() {
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let x1 = rows(&[&[0.2, 0.4], &[0.6, 0.8]]);
    let x2 = rows(&[&[0.1, 0.0], &[0.3, 0.4]]);
    assert_eq!(reconstruction_term(&identity_stub(split, 2), &x1, &x2).unwrap(), 0.0);
    // Mean pixel values 0.5 and 0.2.
    let zero = reconstruction_term(&scaled_decoder_stub(split, 2, 0.0), &x1, &x2).unwrap();
    assert!((zero - 0.7).abs() < 1e-12, "{zero}");

    let mut last = f64::INFINITY;
    for k in 0..=20 {
        let t = k as f64 / 20.0;
        let v = reconstruction_term(&scaled_decoder_stub(split, 2, t), &x1, &x2).unwrap();
        assert!(v < last || (k == 20 && v == 0.0));
        assert!((v - (1.0 - t) * 0.7).abs() < 1e-12);
        last = v;
    }
}

fn sinkhorn() -> Divergence {
    Divergence::Sinkhorn(SinkhornOptions::default())
}

/// Largest exact `W2^2` between independent prior samples of this width.
fn same_distribution_floor(width: usize, n: usize) -> f64 {
    (0..10)
        .map(|seed| {
            let a = PriorDraw::sample(LatentSplit::new(0, width, 0).unwrap(), n, 1000 + seed).unwrap();
            let b = PriorDraw::sample(LatentSplit::new(0, width, 0).unwrap(), n, 2000 + seed).unwrap();
            exact_wasserstein(&a.first().unwrap().to_measure().unwrap(), &b.first().unwrap().to_measure().unwrap(), 2.0).unwrap()
        })
        .fold(0.0, f64::max)
}

/// Encoders that ignore the input row except for its first entry, an index
/// into a fixed table of codes.
fn lookup_stub(split: LatentSplit, first: Batch, second: Batch) -> Stub {
    let (f, s) = (first.clone(), second.clone());
    Stub {
        split,
        x1_shape: vec![1],
        x2_shape: vec![1],
        e1: Box::new(move |x| f.sample(x[0] as usize).to_vec()),
        e2: Box::new(move |x| s.sample(x[0] as usize).to_vec()),
        d1: Box::new(|_| vec![0.0]),
        d2: Box::new(|_| vec![0.0]),
    }
}

#[test]
fn encoders_emitting_prior_samples_sit_at_the_floor() {
    let split = LatentSplit::new(2, 2, 2).unwrap();
    let n = 128;
    let codes = PriorDraw::sample(split, n, 77).unwrap();
    let stub = lookup_stub(split, codes.first().unwrap(), codes.second().unwrap());
    let idx = Batch::new(n, vec![1], (0..n).map(|i| i as f64).collect()).unwrap();
    let reference = PriorDraw::sample(split, n, 78).unwrap();
    let (term, converged) = latent_divergence_term(&stub, &idx, &idx, &reference, &sinkhorn(), 0).unwrap();
    let floor = 2.0 * same_distribution_floor(4, n);
    assert!(term >= 0.0 && term <= floor, "{term} vs floor {floor}");

    // The exact same draw gives zero.
    let (same, _) = latent_divergence_term(&stub, &idx, &idx, &codes, &sinkhorn(), 0).unwrap();
    assert!(same.abs() < 1e-6, "{same} {converged}");
}

#[test]
fn zero_encoder_pays_the_prior_second_moment() {
    let split = LatentSplit::new(16, 16, 16).unwrap();
    let n = 256;
    let zeros = Batch::zeros(n, vec![32]);
    let stub = lookup_stub(split, zeros.clone(), zeros);
    let idx = Batch::zeros(n, vec![1]);
    let prior = PriorDraw::sample(split, n, 5).unwrap();
    // Transport from a point mass at the origin costs the mean squared norm.
    let second_moment = |b: Batch| b.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let oracle = second_moment(prior.first().unwrap()) + second_moment(prior.second().unwrap());
    assert!((oracle - 64.0).abs() / 64.0 < 0.1, "{oracle}");
    // Debiasing subtracts half the entropic self-transport of the prior
    // sample, which vanishes as epsilon shrinks.
    let mut gaps = Vec::new();
    for f in [0.05, 0.02, 0.01] {
        let d = Divergence::Sinkhorn(SinkhornOptions { epsilon: Epsilon::RelativeToMeanCost(f), max_iters: 2000, tol: 1e-6 });
        let (term, converged) = latent_divergence_term(&stub, &idx, &idx, &prior, &d, 0).unwrap();
        assert!(converged);
        gaps.push((oracle - term).abs());
        if f == 0.01 {
            assert!((term - 64.0).abs() / 64.0 <= 0.1, "{term}");
        }
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn loss_is_permutation_invariant() {
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let stub = Stub {
        split,
        x1_shape: vec![2],
        x2_shape: vec![2],
        e1: Box::new(|x| vec![x[0] - x[1], 0.5 * x[0]]),
        e2: Box::new(|x| vec![x[1].sin(), x[0] + x[1]]),
        d1: Box::new(|z| vec![z[0] * z[1], z[0] + 0.3]),
        d2: Box::new(|z| vec![z[1] - z[0], 2.0 * z[0]]),
    };
    let n = 16;
    let x1 = Batch::new(n, vec![2], (0..2 * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let x2 = Batch::new(n, vec![2], (0..2 * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let prior = PriorDraw::sample(split, n, 3).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (p1, p2) = (x1.select(&perm).unwrap(), x2.select(&perm).unwrap());
    for div in [sinkhorn(), Divergence::Sliced { projections: 50, p: 2.0 }, Divergence::Mmd { bandwidth: Some(1.0) }] {
        let (a, _) = latent_divergence_term(&stub, &x1, &x2, &prior, &div, 4).unwrap();
        let (b, _) = latent_divergence_term(&stub, &p1, &p2, &prior, &div, 4).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{div:?}: {a} vs {b}");
    }
    let r = reconstruction_term(&stub, &x1, &x2).unwrap();
    assert!((r - reconstruction_term(&stub, &p1, &p2).unwrap()).abs() < 1e-12);
}

#[test]
fn denoising_fidelity_examples() {
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let x1 = rows(&[&[0.5, -1.0], &[2.0, 0.0]]);
    let x2 = rows(&[&[1.0, 1.0], &[0.0, 3.0]]);
    let z = Batch::zeros(2, vec![1]);
    let zero = scaled_decoder_stub(split, 2, 0.0);
    let v = data_fidelity_denoising(&zero, &x1, &x2, &z, &z).unwrap();
    // Mean squared entries: (0.25 + 1 + 4 + 0) / 4 and (1 + 1 + 0 + 9) / 4.
    assert!((v - (5.25 / 4.0 + 11.0 / 4.0)).abs() < 1e-12, "{v}");

    // Cross reconstructions that return the inputs exactly.
    let (a, b) = (x1.clone(), x2.clone());
    let perfect = Stub {
        split,
        x1_shape: vec![2],
        x2_shape: vec![2],
        e1: Box::new(|x| vec![0.0, x[0]]),
        e2: Box::new(|x| vec![x[0], 0.0]),
        d1: Box::new(move |z| if z[1] == 1.0 { a.sample(0).to_vec() } else { a.sample(1).to_vec() }),
        d2: Box::new(move |z| if z[0] == 0.5 { b.sample(0).to_vec() } else { b.sample(1).to_vec() }),
    };
    assert_eq!(data_fidelity_denoising(&perfect, &x1, &x2, &z, &z).unwrap(), 0.0);
}

#[test]
fn inpainting_fidelity_examples() {
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let x1 = rows(&[&[0.4, 0.4], &[0.4, 0.4]]);
    let x2 = rows(&[&[0.4, 0.4], &[0.4, 0.4]]);
    let z = Batch::zeros(2, vec![1]);
    let zero = scaled_decoder_stub(split, 2, 0.0);
    assert_eq!(data_fidelity_inpainting(&zero, &x1, &x2, &[0.0, 0.0], &z, &z).unwrap(), 0.0);
    let full = data_fidelity_inpainting(&zero, &x1, &x2, &[1.0, 1.0], &z, &z).unwrap();
    let half = data_fidelity_inpainting(&zero, &x1, &x2, &[1.0, 0.0], &z, &z).unwrap();
    assert!((full - 0.8).abs() < 1e-12);
    assert!((half - 0.5 * full).abs() < 1e-12);
    assert!(data_fidelity_inpainting(&zero, &x1, &x2, &[1.0], &z, &z).is_err());
}

fn affine_stub(spec: &GaussianPairSpec) -> Stub {
    let there = spec.monge_map().unwrap();
    let back = {
        let mut swapped = spec.clone();
        std::mem::swap(&mut swapped.mean1, &mut swapped.mean2);
        std::mem::swap(&mut swapped.cov1, &mut swapped.cov2);
        swapped.monge_map().unwrap()
    };
    let d = spec.dim();
    Stub {
        split: LatentSplit::shared_only(d).unwrap(),
        x1_shape: vec![d],
        x2_shape: vec![d],
        // z2 lives in the first space; D2 pushes it forward, D1 is identity.
        e1: Box::new(|x| x.to_vec()),
        e2: Box::new(move |x| back.apply(x).unwrap()),
        d1: Box::new(|z| z.to_vec()),
        d2: Box::new(move |z| there.apply(z).unwrap()),
    }
}

#[test]
fn translation_penalty_at_the_monge_map_is_the_transport_cost() {
    let spec = GaussianPairSpec::default();
    let (x1, x2) = pwae::tasks::make_translation_datasets(&spec, 10_000, 31).unwrap();
    let stub = affine_stub(&spec);
    let v = data_fidelity_translation(&stub, &x1, &x2).unwrap();
    // Each term is a mean over the two coordinates, so the sum of both
    // directions is W2^2 in two dimensions.
    let w2 = spec.w2_squared().unwrap();
    assert!((v - w2).abs() / w2 <= 0.03, "{v} vs {w2}");

    let same = identity_stub(LatentSplit::shared_only(2).unwrap(), 2);
    assert_eq!(data_fidelity_translation(&same, &x1, &x1).unwrap(), 0.0);
    assert_eq!(sampler::translate(&same, &x1).unwrap(), x1);
    assert!(data_fidelity_translation(&identity_stub(LatentSplit::new(1, 1, 1).unwrap(), 2), &x1, &x2).is_err());
}

#[test]
fn swapping_modes_costs_more_than_the_monge_map() {
    // Symmetric two-mode law around the origin, mapped to itself.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 512;
    let data: Vec<f64> = (0..n)
        .flat_map(|i| {
            let c = if i % 2 == 0 { 2.0 } else { -2.0 };
            [c + 0.3 * rng.gen_range(-1.0..1.0), 0.3 * rng.gen_range(-1.0..1.0)]
        })
        .collect();
    let x = Batch::new(n, vec![2], data).unwrap();
    let split = LatentSplit::shared_only(2).unwrap();
    let monge = identity_stub(split, 2);
    let mut swap = identity_stub(split, 2);
    swap.d2 = Box::new(|z| z.iter().map(|v| -v).collect());
    swap.d1 = Box::new(|z| z.iter().map(|v| -v).collect());
    let a = data_fidelity_translation(&monge, &x, &x).unwrap();
    let b = data_fidelity_translation(&swap, &x, &x).unwrap();
    // Swap is its own inverse: cycle consistent.
    let cycle = sampler::translate_inverse(&swap, &sampler::translate(&swap, &x).unwrap()).unwrap();
    assert_eq!(cycle, x);
    // Brute-force comparison of the two couplings' mean squared displacement.
    let cost = |f: fn(f64) -> f64| x.data().iter().map(|v| (v - f(*v)).powi(2)).sum::<f64>() / x.data().len() as f64;
    assert!((a - 2.0 * cost(|v| v)).abs() < 1e-12);
    assert!((b - 2.0 * cost(|v| -v)).abs() < 1e-12);
    assert!(b > a);
}

#[test]
fn total_loss_examples() {
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 32;
    let x1 = Batch::new(n, vec![2], (0..2 * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let x2 = Batch::new(n, vec![2], (0..2 * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let prior = PriorDraw::sample(split, n, 1).unwrap();
    let stub = scaled_decoder_stub(split, 2, 0.7);
    let mut cfg = TrainConfig { lambda1: 0.0, lambda2: 0.0, ..TrainConfig::default() };
    let base = total_loss(&stub, &x1, &x2, &prior, &cfg, &Fidelity::Denoising, 0).unwrap();
    assert_eq!(base.total, reconstruction_term(&stub, &x1, &x2).unwrap());

    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.5;
    let one = total_loss(&stub, &x1, &x2, &prior, &cfg, &Fidelity::Denoising, 0).unwrap();
    cfg.lambda2 = 1.0;
    let two = total_loss(&stub, &x1, &x2, &prior, &cfg, &Fidelity::Denoising, 0).unwrap();
    assert_eq!((one.recon, one.div, one.fidelity), (two.recon, two.div, two.fidelity));
    assert!((two.total - one.total - 0.5 * one.fidelity).abs() < 1e-12);
    let again = TrainConfig { lambda2: 0.5, ..cfg };
    assert_eq!(one, total_loss(&stub, &x1, &x2, &prior, &again, &Fidelity::Denoising, 0).unwrap());
}

#[test]
fn perfect_stubs_cost_at_most_the_divergence_floor() {
    // Encoders emit prior samples, decoders invert the encoders, and cross
    // reconstructions hit the data exactly.
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let n = 64;
    let codes = PriorDraw::sample(split, n, 40).unwrap();
    let (first, second) = (codes.first().unwrap(), codes.second().unwrap());
    // x1 = (index, z1, z2) and x2 = (index, z2, z3) so every map is a lookup.
    let x1 = Batch::new(n, vec![3], (0..n).flat_map(|i| [i as f64, first.sample(i)[0], first.sample(i)[1]]).collect()).unwrap();
    let x2 = Batch::new(n, vec![3], (0..n).flat_map(|i| [i as f64, second.sample(i)[0], second.sample(i)[1]]).collect()).unwrap();
    let (f, s) = (first.clone(), second.clone());
    let find = |table: &Batch, z: &[f64], col: usize| (0..table.n()).find(|&i| table.sample(i)[col] == z[col]).unwrap();
    let stub = Stub {
        split,
        x1_shape: vec![3],
        x2_shape: vec![3],
        e1: Box::new(|x| vec![x[1], x[2]]),
        e2: Box::new(|x| vec![x[1], x[2]]),
        d1: Box::new(move |z| {
            let i = find(&f, z, 1);
            vec![i as f64, f.sample(i)[0], f.sample(i)[1]]
        }),
        d2: Box::new(move |z| {
            let i = find(&s, z, 0);
            vec![i as f64, s.sample(i)[0], s.sample(i)[1]]
        }),
    };
    let reference = PriorDraw::sample(split, n, 41).unwrap();
    let own = Batch::hconcat(&[&first.columns(0..1).unwrap(), &first.columns(1..2).unwrap(), &second.columns(1..2).unwrap()]).unwrap();
    let own = PriorDraw::from_batch(split, own).unwrap();
    let cfg = TrainConfig { lambda1: 2.0, ..TrainConfig::default() };
    let loss = total_loss(&stub, &x1, &x2, &own, &cfg, &Fidelity::Denoising, 0).unwrap();
    assert_eq!(loss.recon, 0.0);
    assert_eq!(loss.fidelity, 0.0);
    let with_other = total_loss(&stub, &x1, &x2, &reference, &TrainConfig { lambda2: 0.0, ..cfg.clone() }, &Fidelity::Denoising, 0).unwrap();
    let floor = 2.0 * same_distribution_floor(2, n);
    assert!(with_other.total <= cfg.lambda1 * floor, "{} vs {}", with_other.total, cfg.lambda1 * floor);
}

#[test]
fn cross_reconstruction_ignores_the_other_private_block() {
    // E2 writes garbage into z3; nothing downstream of x1 | x2 may see it.
    let split = LatentSplit::new(1, 1, 1).unwrap();
    let make = |garbage: f64| Stub {
        split,
        x1_shape: vec![2],
        x2_shape: vec![2],
        e1: Box::new(|x| vec![x[0], x[1]]),
        e2: Box::new(move |x| vec![x[0] + x[1], garbage]),
        d1: Box::new(|z| vec![z[0] * 2.0, z[1] - 1.0]),
        d2: Box::new(|z| vec![z[0], z[1]]),
    };
    let x2 = rows(&[&[0.3, 0.1], &[1.0, -2.0]]);
    let z1 = rows(&[&[0.5], &[-0.25]]);
    let (a, b) = (make(0.0), make(1e6));
    assert_eq!(a.cross_reconstruct_x1(&z1, &x2).unwrap(), b.cross_reconstruct_x1(&z1, &x2).unwrap());
    assert_eq!(sampler::point_estimate(&a, &x2).unwrap(), sampler::point_estimate(&b, &x2).unwrap());
    let one = x2.single(0).unwrap();
    assert_eq!(sampler::sample_conditional(&a, &one, 8, 3).unwrap(), sampler::sample_conditional(&b, &one, 8, 3).unwrap());
    // z1 = 0 is the point estimate.
    let zero = Batch::zeros(2, vec![1]);
    assert_eq!(a.cross_reconstruct_x1(&zero, &x2).unwrap(), sampler::point_estimate(&a, &x2).unwrap());
}

#[test]
fn deterministic_conditionals_without_a_private_block() {
    let split = LatentSplit::shared_only(2).unwrap();
    let stub = identity_stub(split, 2);
    let x2 = rows(&[&[0.3, 0.7]]);
    let s = sampler::sample_conditional(&stub, &x2, 6, 1).unwrap();
    assert!(s.rows().all(|r| r == x2.sample(0)));
    let (_, std) = sampler::conditional_moments(&stub, &x2, 6, 1).unwrap();
    assert!(std.iter().all(|&v| v == 0.0));
}

#[test]
fn sampling_sequences_extend_with_n() {
    let split = LatentSplit::new(2, 1, 1).unwrap();
    let stub = Stub {
        split,
        x1_shape: vec![3],
        x2_shape: vec![2],
        e1: Box::new(|x| x.to_vec()),
        e2: Box::new(|x| x.to_vec()),
        d1: Box::new(|z| z.to_vec()),
        d2: Box::new(|z| z.to_vec()),
    };
    let x2 = rows(&[&[0.5, -0.5]]);
    let short = sampler::sample_conditional(&stub, &x2, 4, 9).unwrap();
    let long = sampler::sample_conditional(&stub, &x2, 10, 9).unwrap();
    assert_eq!(short.data(), &long.data()[..short.data().len()]);
    let back = sampler::sample_conditional_reverse(&stub, &rows(&[&[0.1, 0.2, 0.3]]), 5, 2).unwrap();
    assert!(back.rows().all(|r| r[0] == 0.3));

    let ladder = sampler::perturbed_estimates(&stub, &x2, &sampler::DEFAULT_SIGMAS, 1).unwrap();
    assert_eq!(ladder.len(), 5);
    assert_eq!(ladder[2], sampler::point_estimate(&stub, &x2).unwrap());
    assert_eq!(ladder[4].data(), &[0.0, 1.0, 0.5]);
}

