//! Shared helpers for the in-crate test suites: seeded generators for
//! tensors, convention-respecting covariance factors, and whole parameter
//! sets. Test-only code; nothing here ships in the public API.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::model::{SigmaOps, TnmmParams};
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = dims.iter().product();
    let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

/// Well-conditioned random SPD matrix with its leading entry scaled to 1.
pub fn random_spd_unit(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let mut a = g.mul(&g.transpose());
    a.scale_mut(1.0 / n as f64);
    a.add_scaled_identity(0.5);
    a.symmetrize();
    let lead = a.get(0, 0);
    a.scale_mut(1.0 / lead);
    a.set(0, 0, 1.0);
    a
}

/// Random valid parameter set: the first factor carries a free scale, every
/// other factor has a unit leading entry, and the means are independent
/// Gaussian tensors with standard deviation `sep`.
pub fn random_params(dims: &[usize], k: usize, sep: f64, rng: &mut ChaCha8Rng) -> TnmmParams {
    let sigmas: Vec<Matrix> = dims
        .iter()
        .enumerate()
        .map(|(m, &p)| {
            let mut s = random_spd_unit(p, rng);
            if m == 0 {
                s.scale_mut(rng.gen_range(0.5..2.0));
            }
            s
        })
        .collect();
    let mus: Vec<Tensor> = (0..k)
        .map(|_| {
            let mut t = random_tensor(dims, rng);
            t.scale_mut(sep);
            t
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let pis = raw.iter().map(|v| v / total).collect();
    TnmmParams { pis, mus, sigmas }
}

/// Draws `n_per_k` observations from every cluster, labels in cluster order.
pub fn sample_dataset(
    params: &TnmmParams,
    n_per_k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Tensor>, Vec<usize>) {
    let ops = SigmaOps::new(&params.sigmas).unwrap();
    let mut data = Vec::with_capacity(params.k() * n_per_k);
    let mut labels = Vec::with_capacity(params.k() * n_per_k);
    for k in 0..params.k() {
        for _ in 0..n_per_k {
            let z = random_tensor(params.dims(), rng);
            let mut x = z.tucker(&ops.sqrt).unwrap();
            x.add_scaled(&params.mus[k], 1.0).unwrap();
            data.push(x);
            labels.push(k);
        }
    }
    (data, labels)
}
