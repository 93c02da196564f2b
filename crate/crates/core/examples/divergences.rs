//! Compares the exact, entropic, sliced and kernel discrepancies between two
//! shifted Gaussian clouds as the shift grows.

use nalgebra::{DMatrix, DVector};
use pwae::measures::{exact_wasserstein, mmd, median_heuristic, sinkhorn_divergence, sliced_wasserstein, CostMatrix};
use pwae::tasks::sample_gaussian;

fn main() -> pwae::Result<()> {
    let n = 128;
    let cov = DMatrix::identity(2, 2);
    let a = sample_gaussian(&DVector::zeros(2), &cov, n, 1)?.to_measure()?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "shift", "exact", "sinkhorn", "sliced", "mmd");
    for shift in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let b = sample_gaussian(&DVector::from_vec(vec![shift, 0.0]), &cov, n, 2)?.to_measure()?;
        let exact = exact_wasserstein(&a, &b, 2.0)?;
        let eps = 0.05 * CostMatrix::squared_euclidean(&a, &b)?.mean();
        let s = sinkhorn_divergence(&a, &b, eps, 500, 1e-6)?;
        let sw = sliced_wasserstein(&a, &b, 64, 2.0, 3)?;
        let k = mmd(&a, &b, median_heuristic(&a, &b))?;
        println!("{shift:>6.1} {exact:>10.4} {:>10.4} {sw:>10.4} {k:>10.4}", s.value);
    }
    Ok(())
}
