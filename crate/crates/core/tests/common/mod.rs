#![allow(dead_code)]

use pwae::latent::LatentSplit;
use pwae::model::PairedMaps;
use pwae::tensor::Batch;
use pwae::Result;

type RowMap = Box<dyn Fn(&[f64]) -> Vec<f64>>;

/// Paired maps built from per-sample closures.
pub struct Stub {
    pub split: LatentSplit,
    pub x1_shape: Vec<usize>,
    pub x2_shape: Vec<usize>,
    pub e1: RowMap,
    pub e2: RowMap,
    pub d1: RowMap,
    pub d2: RowMap,
}

fn map_rows(b: &Batch, f: &RowMap, shape: &[usize]) -> Result<Batch> {
    let data: Vec<f64> = b.rows().flat_map(|r| f(r)).collect();
    Batch::new(b.n(), shape.to_vec(), data)
}

impl PairedMaps for Stub {
    fn split(&self) -> LatentSplit {
        self.split
    }
    fn encode1(&self, x1: &Batch) -> Result<Batch> {
        map_rows(x1, &self.e1, &[self.split.first_width()])
    }
    fn encode2(&self, x2: &Batch) -> Result<Batch> {
        map_rows(x2, &self.e2, &[self.split.second_width()])
    }
    fn decode1(&self, code: &Batch) -> Result<Batch> {
        map_rows(code, &self.d1, &self.x1_shape)
    }
    fn decode2(&self, code: &Batch) -> Result<Batch> {
        map_rows(code, &self.d2, &self.x2_shape)
    }
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// `W_p^p` with ground cost `||x - y||_p^p` between uniform equal-size
/// point sets, by enumerating every assignment.
pub fn brute_force_wasserstein(xs: &[Vec<f64>], ys: &[Vec<f64>], p: f64) -> f64 {
    let n = xs.len();
    let cost = |i: usize, j: usize| -> f64 {
        xs[i].iter().zip(&ys[j]).map(|(a, b)| (a - b).abs().powf(p)).sum::<f64>()
    };
    permutations(n)
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}
