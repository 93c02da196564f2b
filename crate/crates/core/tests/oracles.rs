use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use pwae::latent::{sample_prior, LatentCode, LatentSplit};
use pwae::measures::wasserstein_1d;
use pwae::tasks::*;
use pwae::tensor::Batch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn prior_marginals_concentrate() {
    let split = LatentSplit::new(16, 16, 16).unwrap();
    let n = 10_000;
    let codes: Vec<Vec<f64>> = sample_prior(&split, n, 21).unwrap().iter().map(LatentCode::concat).collect();
    let col = |j: usize| codes.iter().map(|c| c[j]).collect::<Vec<f64>>();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let columns: Vec<Vec<f64>> = (0..48).map(col).collect();
    for c in &columns {
        let m = mean(c);
        let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(m.abs() < 0.05, "mean {m}");
        assert!(var > 0.9 && var < 1.1, "variance {var}");
    }
    let corr = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    for i in 0..16 {
        for j in 16..32 {
            let r = corr(&columns[i], &columns[j]);
            assert!(r.abs() <= 0.05, "corr(z1_{i}, z2_{}) = {r}", j - 16);
        }
    }
}

proptest! {
    #[test]
    fn code_round_trip(d1 in 0usize..5, d2 in 0usize..5, d3 in 0usize..5, seed in any::<u64>()) {
        let split = LatentSplit::new(d1, d2, d3);
        prop_assume!(split.is_ok());
        let split = split.unwrap();
        for code in sample_prior(&split, 3, seed).unwrap() {
            prop_assert!(code.matches(&split));
            prop_assert_eq!(split.split(&code.concat()).unwrap(), code);
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * floor
}

fn log_gauss(x: &DVector<f64>, m: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let diff = x - m;
    -0.5 * (diff.transpose() * cov.clone().try_inverse().unwrap() * &diff)[0]
}

/// Posterior mean and covariance by quadrature of prior times likelihood
/// on an `n` by `n` grid covering `center +- half`.
fn grid_moments(
    oracle: &LinearGaussianOracle,
    x2: &DVector<f64>,
    center: [f64; 2],
    half: [f64; 2],
    n: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let h = [2.0 * half[0] / n as f64, 2.0 * half[1] / n as f64];
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = DVector::from_vec(vec![
                center[0] - half[0] + (i as f64 + 0.5) * h[0],
                center[1] - half[1] + (j as f64 + 0.5) * h[1],
            ]);
            let lp = log_gauss(&x, &oracle.prior_mean, &oracle.prior_cov)
                + log_gauss(x2, &(&oracle.forward * &x), &oracle.noise_cov);
            pts.push((x, lp));
        }
    }
    let top = pts.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.1));
    let mut z = 0.0;
    let mut mean = DVector::zeros(2);
    for (x, lp) in &pts {
        let w = (lp - top).exp();
        z += w;
        mean += x * w;
    }
    mean /= z;
    let mut cov = DMatrix::zeros(2, 2);
    for (x, lp) in &pts {
        let d = x - &mean;
        cov += &d * d.transpose() * ((lp - top).exp() / z);
    }
    (mean, cov)
}

#[test]
fn posterior_matches_grid_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let m0 = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let s0 = random_spd(&mut rng, 2, 0.3);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.5..1.5));
        let se = random_spd(&mut rng, 2, 0.2) * 0.5;
        let oracle = LinearGaussianOracle::new(m0, s0, a, se).unwrap();
        let (x1, x2) = oracle.sample_pairs(1, rng.gen()).unwrap();
        let _ = x1;
        let x2 = DVector::from_column_slice(x2.sample(0));

        // Coarse pass over the prior's range locates the posterior; the
        // fine pass is centred on it.
        let sd = [oracle.prior_cov[(0, 0)].sqrt(), oracle.prior_cov[(1, 1)].sqrt()];
        let (cm, cc) = grid_moments(&oracle, &x2, [oracle.prior_mean[0], oracle.prior_mean[1]], [8.0 * sd[0], 8.0 * sd[1]], 200);
        let (mean, cov) = grid_moments(&oracle, &x2, [cm[0], cm[1]], [9.0 * cc[(0, 0)].sqrt(), 9.0 * cc[(1, 1)].sqrt()], 200);

        let (pm, pc) = linear_gaussian_posterior(&oracle, x2.as_slice()).unwrap();
        assert!((&pm - &mean).amax() <= 1e-3, "{pm} vs {mean}");
        assert!((&pc - &cov).amax() <= 1e-2, "{pc} vs {cov}");
    }
}

#[test]
fn monge_map_in_one_dimension_matches_quantiles() {
    let map = gaussian_monge_map(
        &DVector::from_element(1, 0.0),
        &DMatrix::from_element(1, 1, 1.0),
        &DVector::from_element(1, 3.0),
        &DMatrix::from_element(1, 1, 4.0),
    )
    .unwrap();
    assert!((map.matrix[(0, 0)] - 2.0).abs() < 1e-12);
    assert!((map.offset[0] - 3.0).abs() < 1e-12);

    // Least-squares line through matched order statistics of the two laws.
    let n = 100_000;
    let sorted = |m: f64, s: f64, seed: u64| {
        let b = sample_gaussian(&DVector::from_element(1, m), &DMatrix::from_element(1, 1, s * s), n, seed).unwrap();
        let mut v = b.into_data();
        v.sort_by(f64::total_cmp);
        v
    };
    let (xs, ys) = (sorted(0.0, 1.0, 1), sorted(3.0, 2.0, 2));
    let (mx, my) = (xs.iter().sum::<f64>() / n as f64, ys.iter().sum::<f64>() / n as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    assert!((slope - 2.0).abs() < 0.02, "{slope}");
    assert!((intercept - 3.0).abs() < 0.02, "{intercept}");
}

#[test]
fn monge_cost_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut specs = vec![GaussianPairSpec::default()];
    for _ in 0..3 {
        let s1 = random_spd(&mut rng, 3, 0.2);
        let s2 = random_spd(&mut rng, 3, 0.2);
        specs.push(GaussianPairSpec {
            mean1: (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            cov1: s1.transpose().iter().copied().collect(),
            mean2: (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            cov2: s2.transpose().iter().copied().collect(),
            train: 10,
            test: 10,
        });
    }
    for spec in &specs {
        let (m1, s1, _, _) = spec.moments().unwrap();
        let map = spec.monge_map().unwrap();
        let x = sample_gaussian(&m1, &s1, 10_000, 3).unwrap();
        let y = map.apply_batch(&x).unwrap();
        let cost: f64 = x
            .rows()
            .zip(y.rows())
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
            .sum::<f64>()
            / 10_000.0;
        let w2 = spec.w2_squared().unwrap();
        assert!((cost - w2).abs() / w2 <= 0.02, "{cost} vs {w2}");
    }
}

#[test]
fn closed_form_agrees_with_sorted_samples_in_one_dimension() {
    let (m1, s1, m2, s2) = (0.5, 0.7, -1.0, 1.8);
    let w2 = gaussian_w2_squared(
        &DVector::from_element(1, m1),
        &DMatrix::from_element(1, 1, s1 * s1),
        &DVector::from_element(1, m2),
        &DMatrix::from_element(1, 1, s2 * s2),
    )
    .unwrap();
    assert!((w2 - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs() < 1e-12);
    let a = sample_gaussian(&DVector::from_element(1, m1), &DMatrix::from_element(1, 1, s1 * s1), 50_000, 8).unwrap();
    let b = sample_gaussian(&DVector::from_element(1, m2), &DMatrix::from_element(1, 1, s2 * s2), 50_000, 9).unwrap();
    let empirical = wasserstein_1d(a.data(), b.data(), 2.0).unwrap();
    assert!((empirical - w2).abs() / w2 < 0.02, "{empirical} vs {w2}");
}

#[test]
fn monge_maps_are_mutually_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for d in [1, 2, 4] {
        let (s1, s2) = (random_spd(&mut rng, d, 0.1), random_spd(&mut rng, d, 0.1));
        let m1 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let m2 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let there = gaussian_monge_map(&m1, &s1, &m2, &s2).unwrap();
        let back = gaussian_monge_map(&m2, &s2, &m1, &s1).unwrap();
        let cycle = back.compose(&there);
        let err = (&cycle.matrix - DMatrix::<f64>::identity(d, d)).svd(false, false).singular_values.max();
        assert!(err <= 1e-8, "operator norm {err}");
        assert!(cycle.offset.amax() <= 1e-8);
    }
    let same = gaussian_monge_map(&DVector::zeros(2), &random_spd(&mut rng, 2, 0.5), &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
    assert!(same.offset.amax() < 1e-12);
}

#[test]
fn translation_datasets_match_their_moments() {
    let spec = GaussianPairSpec::default();
    let n = 10_000;
    let (a, b) = make_translation_datasets(&spec, n, 12).unwrap();
    let (a2, b2) = make_translation_datasets(&spec, n, 12).unwrap();
    assert_eq!((a.data(), b.data()), (a2.data(), b2.data()));
    let (m1, s1, m2, s2) = spec.moments().unwrap();
    for (x, m, s) in [(&a, m1, s1), (&b, m2, s2)] {
        let d = m.len();
        let mean = DVector::from_fn(d, |k, _| x.rows().map(|r| r[k]).sum::<f64>() / n as f64);
        let mut cov = DMatrix::zeros(d, d);
        for r in x.rows() {
            let v = DVector::from_column_slice(r) - &mean;
            cov += &v * v.transpose();
        }
        cov /= (n - 1) as f64;
        for i in 0..d {
            assert!((mean[i] - m[i]).abs() <= 4.0 * (s[(i, i)] / n as f64).sqrt());
            for j in 0..d {
                let se = ((s[(i, i)] * s[(j, j)] + s[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((cov[(i, j)] - s[(i, j)]).abs() <= 4.0 * se, "cov[{i},{j}] {}", cov[(i, j)]);
            }
        }
    }
}

#[test]
fn noise_levels() {
    let x1 = Batch::new(100, vec![10, 10], vec![0.5; 10_000]).unwrap();
    let x2 = make_denoising_pair(&x1, 1.0, 4).unwrap();
    let d: Vec<f64> = x2.data().iter().zip(x1.data()).map(|(a, b)| a - b).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    assert!((sd - 1.0).abs() <= 0.03, "{sd}");
    assert_eq!(make_denoising_pair(&x1, 0.0, 4).unwrap(), x1);

    let zero = vec![0.0; 100];
    let x2 = make_inpainting_pair(&x1, &zero, 0.1, 5).unwrap();
    let sd = (x2.data().iter().map(|v| v * v).sum::<f64>() / x2.data().len() as f64).sqrt();
    assert!((sd - 0.1).abs() <= 0.003, "{sd}");
    assert_eq!(make_inpainting_pair(&x1, &[1.0; 100], 0.0, 5).unwrap(), x1);
    assert!(make_inpainting_pair(&x1, &[1.0; 99], 0.1, 5).is_err());
}
