//! Simulation designs: covariance generators, tensor-normal sampling, the
//! seven benchmark models, and the permutation-minimized error metric.
//!
//! Everything is deterministic given a spec: model ingredients draw from
//! stream 0 of the seed, observations from stream 1, so the same truth can
//! be paired with fresh data by changing only the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::rescale_product_preserving;
use crate::error::{Error, Result};
use crate::matrix::{min_eigenvalue, spd_inverse, spd_sqrt, Matrix};
use crate::model::TnmmParams;
use crate::tensor::Tensor;

/// Per-mode covariance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovRecipe {
    Identity,
    /// Auto-regressive: entry (i, j) is rho^|i-j|.
    Ar { rho: f64 },
    /// Compound symmetry: unit diagonal, rho off the diagonal.
    Cs { rho: f64 },
    /// Randomly masked sparse precision matrix, inverted.
    SparsePrecision,
    /// Two-block-diagonal with random orthogonal bases and fixed spectra,
    /// Frobenius-normalized; `first_block` is the leading block size.
    EnvelopeBlocks { first_block: usize },
}

/// How the cluster means arise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeanRecipe {
    /// Cluster 0 sits at zero; cluster k >= 1 has discriminant tensor with
    /// `values[k-1]` at coordinates (j, 0, ..., 0) for j < rows, and its
    /// mean is that tensor hit with every covariance factor.
    CornerB { rows: usize, values: Vec<f64> },
    /// Every cluster's mean has its corner block of the given shape filled
    /// with Unif[0,1] draws (zeros elsewhere), then all means are centered
    /// by subtracting cluster 0's.
    CornerUniform { corner: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub dims: Vec<usize>,
    pub k: usize,
    pub n_per_cluster: usize,
    pub covariances: Vec<CovRecipe>,
    pub mean: MeanRecipe,
    pub seed: u64,
    /// Multiplies the mean-side generator (discriminant values, or the
    /// centered explicit means); the separation scales with its square.
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
}

fn default_mean_scale() -> f64 {
    1.0
}

impl SimSpec {
    /// Same design with the mean generator scaled by `scale`.
    pub fn with_mean_scale(&self, scale: f64) -> SimSpec {
        SimSpec { mean_scale: scale, ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub data: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub truth: TnmmParams,
}

/// Auto-regressive correlation matrix, entries rho^|i-j|.
pub fn ar_matrix(p: usize, rho: f64) -> Result<Matrix> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParams(format!(
            "auto-regressive coefficient must satisfy |rho| < 1, got {rho}"
        )));
    }
    Ok(Matrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())))
}

/// Compound-symmetry matrix: unit diagonal, rho elsewhere.
pub fn cs_matrix(p: usize, rho: f64) -> Result<Matrix> {
    let lower = if p > 1 { -1.0 / (p as f64 - 1.0) } else { -1.0 };
    if !(rho < 1.0 && rho > lower) {
        return Err(Error::InvalidParams(format!(
            "compound symmetry needs rho in ({lower}, 1) for p = {p}, got {rho}"
        )));
    }
    Ok(Matrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }))
}

/// Covariance with a sparse precision: a Bernoulli(0.05) mask with
/// magnitudes Unif[0.5,1] of random sign, symmetrized, shifted past its
/// smallest eigenvalue by 0.05, rescaled to a unit diagonal, and inverted.
/// The construction cannot fail: the shift forces positive definiteness.
pub fn sparse_precision_sigma(p: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = Matrix::zeros(p, p);
    for j in 0..p {
        for i in 0..p {
            let keep = rng.gen_bool(0.05);
            let mag: f64 = rng.gen_range(0.5..1.0);
            let neg = rng.gen_bool(0.5);
            if keep {
                omega.set(i, j, if neg { -mag } else { mag });
            }
        }
    }
    omega.symmetrize();
    let shift = (-min_eigenvalue(&omega).expect("eigen of a finite matrix")).max(0.0) + 0.05;
    omega.add_scaled_identity(shift);
    let scale: Vec<f64> = (0..p).map(|i| omega.get(i, i).sqrt()).collect();
    let mut unit = Matrix::from_fn(p, p, |i, j| omega.get(i, j) / (scale[i] * scale[j]));
    for i in 0..p {
        unit.set(i, i, 1.0);
    }
    spd_inverse(&unit).expect("shifted precision is positive definite")
}

/// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the
/// signs fixed so the triangular factor has a positive diagonal.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Matrix::new(n, n, q.as_slice().to_vec()).expect("square buffer")
}

/// Two-block-diagonal covariance: the leading `u`-sized block has
/// eigenvalues 5, 10, ..., 5u and the trailing block 2 log 2, 2 log 3, ...,
/// each in a random orthogonal basis; the whole matrix is scaled to unit
/// Frobenius norm.
pub fn envelope_block_sigma(p: usize, u: usize, seed: u64) -> Result<Matrix> {
    if u == 0 || u > p {
        return Err(Error::InvalidConfig(format!(
            "leading block size must satisfy 1 <= u <= p, got u = {u}, p = {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma = Matrix::zeros(p, p);
    let mut place_block = |offset: usize, eigs: &[f64], rng: &mut ChaCha8Rng| {
        let b = eigs.len();
        if b == 0 {
            return;
        }
        let o = random_orthogonal(b, rng);
        for j in 0..b {
            for i in 0..b {
                let mut v = 0.0;
                for (t, &e) in eigs.iter().enumerate() {
                    v += o.get(i, t) * e * o.get(j, t);
                }
                sigma.set(offset + i, offset + j, v);
            }
        }
    };
    let first: Vec<f64> = (1..=u).map(|t| 5.0 * t as f64).collect();
    let second: Vec<f64> = (1..=(p - u)).map(|t| 2.0 * ((t + 1) as f64).ln()).collect();
    place_block(0, &first, &mut rng);
    place_block(u, &second, &mut rng);
    sigma.symmetrize();
    let norm = sigma.frobenius_norm();
    sigma.scale_mut(1.0 / norm);
    Ok(sigma)
}

/// One tensor-normal draw: the mean plus an i.i.d. standard normal tensor
/// hit with the symmetric square root of every covariance factor.
pub fn sample_tn(mu: &Tensor, sigmas: &[Matrix], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let sqrts: Vec<Matrix> = sigmas.iter().map(spd_sqrt).collect::<Result<_>>()?;
    let mut z = Tensor::zeros(mu.dims())?;
    for v in z.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    let mut x = z.tucker(&sqrts)?;
    x.add_scaled(mu, 1.0)?;
    Ok(x)
}

fn corner_b_means(
    dims: &[usize],
    k: usize,
    rows: usize,
    values: &[f64],
    scale: f64,
    sigmas: &[Matrix],
) -> Result<Vec<Tensor>> {
    if values.len() + 1 != k {
        return Err(Error::InvalidConfig(format!(
            "{} discriminant values for {} clusters; expected k - 1",
            values.len(),
            k
        )));
    }
    if rows == 0 || rows > dims[0] {
        return Err(Error::InvalidConfig(format!(
            "corner rows {} out of range for leading dimension {}",
            rows, dims[0]
        )));
    }
    let mut mus = vec![Tensor::zeros(dims)?];
    for &v in values {
        let mut b = Tensor::zeros(dims)?;
        for j in 0..rows {
            b.data_mut()[j] = v * scale;
        }
        mus.push(b.tucker(sigmas)?);
    }
    Ok(mus)
}

fn corner_uniform_means(
    dims: &[usize],
    k: usize,
    corner: &[usize],
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor>> {
    if corner.len() != dims.len() || corner.iter().zip(dims).any(|(&c, &d)| c == 0 || c > d) {
        return Err(Error::InvalidConfig(format!(
            "corner shape {corner:?} does not fit inside {dims:?}"
        )));
    }
    let mut raw = Vec::with_capacity(k);
    for _ in 0..k {
        let mut mu = Tensor::zeros(dims)?;
        let mut idx = vec![0usize; dims.len()];
        loop {
            mu.set(&idx, rng.gen_range(0.0..1.0));
            let mut m = 0;
            loop {
                if m == idx.len() {
                    break;
                }
                idx[m] += 1;
                if idx[m] < corner[m] {
                    break;
                }
                idx[m] = 0;
                m += 1;
            }
            if m == idx.len() {
                break;
            }
        }
        raw.push(mu);
    }
    let base = raw[0].clone();
    let mut mus = Vec::with_capacity(k);
    for mu in raw {
        let mut c = mu;
        c.add_scaled(&base, -1.0)?;
        c.scale_mut(scale);
        mus.push(c);
    }
    Ok(mus)
}

/// Expands a spec into true mixture parameters. Random ingredients (sparse
/// precisions, envelope bases, uniform corner means) come from stream 0 of
/// the spec seed; the covariance factors are put on the identifiability
/// convention by a Kronecker-product-preserving rescale.
pub fn build_model(spec: &SimSpec) -> Result<TnmmParams> {
    if spec.dims.is_empty() || spec.dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidConfig(format!("bad dims {:?}", spec.dims)));
    }
    if spec.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if spec.covariances.len() != spec.dims.len() {
        return Err(Error::InvalidConfig(format!(
            "{} covariance recipes for {} modes",
            spec.covariances.len(),
            spec.dims.len()
        )));
    }
    if !spec.mean_scale.is_finite() {
        return Err(Error::InvalidConfig("mean_scale must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let mut sigmas = Vec::with_capacity(spec.dims.len());
    for (recipe, &p) in spec.covariances.iter().zip(&spec.dims) {
        let s = match recipe {
            CovRecipe::Identity => Matrix::identity(p),
            CovRecipe::Ar { rho } => ar_matrix(p, *rho)?,
            CovRecipe::Cs { rho } => cs_matrix(p, *rho)?,
            CovRecipe::SparsePrecision => sparse_precision_sigma(p, rng.gen()),
            CovRecipe::EnvelopeBlocks { first_block } => {
                envelope_block_sigma(p, *first_block, rng.gen())?
            }
        };
        sigmas.push(s);
    }
    rescale_product_preserving(&mut sigmas)?;
    let mus = match &spec.mean {
        MeanRecipe::CornerB { rows, values } => {
            corner_b_means(&spec.dims, spec.k, *rows, values, spec.mean_scale, &sigmas)?
        }
        MeanRecipe::CornerUniform { corner } => {
            corner_uniform_means(&spec.dims, spec.k, corner, spec.mean_scale, &mut rng)?
        }
    };
    let params =
        TnmmParams { pis: vec![1.0 / spec.k as f64; spec.k], mus, sigmas };
    params.validate()?;
    Ok(params)
}

/// Draws `n_per_cluster` observations per cluster (stream 1 of the seed),
/// labels in cluster order.
pub fn generate(spec: &SimSpec) -> Result<LabeledDataset> {
    if spec.n_per_cluster == 0 {
        return Err(Error::InvalidConfig("n_per_cluster must be at least 1".into()));
    }
    let truth = build_model(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let n = spec.k * spec.n_per_cluster;
    let mut data = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.k {
        for _ in 0..spec.n_per_cluster {
            data.push(sample_tn(&truth.mus[k], &truth.sigmas, &mut rng)?);
            labels.push(k);
        }
    }
    Ok(LabeledDataset { data, labels, truth })
}

/// The named benchmark designs, m1 through m7 (case-insensitive).
pub fn model_spec(name: &str, seed: u64) -> Result<SimSpec> {
    let dims = vec![10, 10, 4];
    let corner = |values: Vec<f64>| MeanRecipe::CornerB { rows: 6, values };
    let spec = match name.to_ascii_lowercase().as_str() {
        "m1" => SimSpec {
            dims,
            k: 2,
            n_per_cluster: 75,
            covariances: vec![
                CovRecipe::Cs { rho: 0.3 },
                CovRecipe::Ar { rho: 0.8 },
                CovRecipe::Cs { rho: 0.3 },
            ],
            mean: corner(vec![0.5]),
            seed,
            mean_scale: 1.0,
        },
        "m2" => SimSpec {
            dims,
            k: 2,
            n_per_cluster: 75,
            covariances: vec![
                CovRecipe::Cs { rho: 0.3 },
                CovRecipe::SparsePrecision,
                CovRecipe::Cs { rho: 0.3 },
            ],
            mean: corner(vec![0.5]),
            seed,
            mean_scale: 1.0,
        },
        "m3" => SimSpec {
            dims,
            k: 3,
            n_per_cluster: 75,
            covariances: vec![
                CovRecipe::Cs { rho: 0.3 },
                CovRecipe::Ar { rho: 0.8 },
                CovRecipe::Cs { rho: 0.5 },
            ],
            mean: corner(vec![0.5, -0.5]),
            seed,
            mean_scale: 1.0,
        },
        "m4" => SimSpec {
            dims,
            k: 3,
            n_per_cluster: 75,
            covariances: vec![
                CovRecipe::Identity,
                CovRecipe::Ar { rho: 0.8 },
                CovRecipe::Identity,
            ],
            mean: corner(vec![0.8, -0.8]),
            seed,
            mean_scale: 1.0,
        },
        "m5" => SimSpec {
            dims,
            k: 6,
            n_per_cluster: 50,
            covariances: vec![
                CovRecipe::Ar { rho: 0.9 },
                CovRecipe::Cs { rho: 0.6 },
                CovRecipe::Ar { rho: 0.9 },
            ],
            mean: corner(vec![0.6, 1.2, 1.8, 2.4, 3.0]),
            seed,
            mean_scale: 1.0,
        },
        "m6" => SimSpec {
            dims,
            k: 6,
            n_per_cluster: 50,
            covariances: vec![
                CovRecipe::EnvelopeBlocks { first_block: 8 },
                CovRecipe::EnvelopeBlocks { first_block: 1 },
                CovRecipe::EnvelopeBlocks { first_block: 1 },
            ],
            mean: MeanRecipe::CornerUniform { corner: vec![8, 1, 1] },
            seed,
            mean_scale: 1.0,
        },
        "m7" => SimSpec {
            dims: vec![30, 30, 30],
            k: 2,
            n_per_cluster: 75,
            covariances: vec![
                CovRecipe::Cs { rho: 0.5 },
                CovRecipe::Ar { rho: 0.8 },
                CovRecipe::Cs { rho: 0.5 },
            ],
            mean: corner(vec![0.6]),
            seed,
            mean_scale: 1.0,
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown model '{other}'; expected m1 through m7"
            )))
        }
    };
    Ok(spec)
}

/// Fraction of misclassified observations, minimized over every relabeling
/// of the predictions. Exhaustive over the k! permutations, so k is capped
/// at 8.
pub fn clustering_error(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::DimMismatch(format!(
            "{} predictions vs {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    if k == 0 || k > 8 {
        return Err(Error::Unsupported(format!(
            "exhaustive permutation matching handles 1 <= k <= 8, got {k}"
        )));
    }
    if pred.iter().chain(truth).any(|&l| l >= k) {
        return Err(Error::InvalidParams(format!("label out of range for k = {k}")));
    }
    let mismatches = |perm: &[usize]| -> usize {
        pred.iter().zip(truth).filter(|(&p, &t)| perm[p] != t).count()
    };
    // Heap's algorithm over all permutations of 0..k.
    let mut perm: Vec<usize> = (0..k).collect();
    let mut c = vec![0usize; k];
    let mut best = mismatches(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(mismatches(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::kron;
    use crate::model;
    use crate::testutil;

    #[test]
    fn ar_and_cs_formulas_and_spectra() {
        assert_eq!(ar_matrix(3, 0.0).unwrap().max_abs_diff(&Matrix::identity(3)), 0.0);
        let ar = ar_matrix(2, 0.8).unwrap();
        assert_eq!(ar.get(0, 0), 1.0);
        assert_eq!(ar.get(1, 0), 0.8);
        assert_eq!(ar.get(0, 1), 0.8);

        let cs = cs_matrix(10, 0.3).unwrap();
        assert_eq!(cs.get(4, 4), 1.0);
        assert_eq!(cs.get(2, 7), 0.3);
        // Closed-form spectrum: 1 - rho (multiplicity p-1) and 1 + (p-1) rho.
        let eig = crate::matrix::SymEigen::new(&cs).unwrap();
        let mut vals = eig.values.clone();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 0.7).abs() < 1e-12);
        assert!((vals[9] - 3.7).abs() < 1e-12);

        assert!(min_eigenvalue(&ar_matrix(30, 0.9).unwrap()).unwrap() > 0.0);

        assert!(ar_matrix(3, 1.0).is_err());
        assert!(cs_matrix(10, -0.2).is_err());
        assert!(cs_matrix(10, 1.0).is_err());
    }

    #[test]
    fn sparse_precision_is_spd_with_a_unit_diagonal_inverse() {
        for seed in [1u64, 2, 3] {
            let sigma = sparse_precision_sigma(10, seed);
            assert!(min_eigenvalue(&sigma).unwrap() > 0.0);
            let omega = spd_inverse(&sigma).unwrap();
            for i in 0..10 {
                assert!((omega.get(i, i) - 1.0).abs() < 1e-8, "diagonal {i} off");
            }
        }
        let a = sparse_precision_sigma(10, 7);
        let b = sparse_precision_sigma(10, 7);
        assert_eq!(a.max_abs_diff(&b), 0.0);
    }

    #[test]
    fn sparse_precision_mask_frequency_matches_the_symmetrized_rate() {
        // An off-diagonal pair survives when either directed draw does:
        // 1 - 0.95^2 = 0.0975.
        let p = 30;
        let mut nonzero = 0usize;
        let mut total = 0usize;
        for seed in 0..40u64 {
            let sigma = sparse_precision_sigma(p, seed);
            let omega = spd_inverse(&sigma).unwrap();
            for i in 0..p {
                for j in 0..i {
                    total += 1;
                    if omega.get(i, j).abs() > 1e-9 {
                        nonzero += 1;
                    }
                }
            }
        }
        let freq = nonzero as f64 / total as f64;
        assert!((freq - 0.0975).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn envelope_blocks_have_the_stated_spectrum_and_unit_norm() {
        let p = 10;
        let u = 8;
        let sigma = envelope_block_sigma(p, u, 5).unwrap();
        assert!((sigma.frobenius_norm() - 1.0).abs() < 1e-12);
        // Exact zeros between the two blocks.
        for i in 0..u {
            for j in u..p {
                assert_eq!(sigma.get(i, j), 0.0);
                assert_eq!(sigma.get(j, i), 0.0);
            }
        }
        let mut expected: Vec<f64> = (1..=u).map(|t| 5.0 * t as f64).collect();
        expected.extend((1..=(p - u)).map(|t| 2.0 * ((t + 1) as f64).ln()));
        let norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in expected.iter_mut() {
            *v /= norm;
        }
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let eig = crate::matrix::SymEigen::new(&sigma).unwrap();
        let mut got = eig.values.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-8, "eigenvalue {g} vs {e}");
        }

        // Single-block edge case and the invalid split.
        let whole = envelope_block_sigma(3, 3, 9).unwrap();
        assert!((whole.frobenius_norm() - 1.0).abs() < 1e-12);
        assert!(envelope_block_sigma(3, 0, 9).is_err());
        assert!(envelope_block_sigma(3, 4, 9).is_err());
    }

    /// Abramowitz-Stegun style error-function approximation, good to about
    /// 1.5e-7, plenty below the distributional tolerances used here.
    fn phi(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
        let poly = t
            * (0.254829592
                + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-x * x / 2.0).exp();
        if x >= 0.0 {
            0.5 * (1.0 + erf)
        } else {
            0.5 * (1.0 - erf)
        }
    }

    #[test]
    fn identity_samples_pass_a_normality_check() {
        let mut rng = testutil::rng(61);
        let mu = Tensor::zeros(&[10, 10]).unwrap();
        let sigmas = [Matrix::identity(10), Matrix::identity(10)];
        let mut values = Vec::with_capacity(100_000);
        for _ in 0..1000 {
            let x = sample_tn(&mu, &sigmas, &mut rng).unwrap();
            values.extend_from_slice(x.data());
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len() as f64;
        let mut d = 0.0f64;
        for (i, &v) in values.iter().enumerate() {
            let f = phi(v);
            d = d.max((f - i as f64 / n).abs());
            d = d.max(((i + 1) as f64 / n - f).abs());
        }
        // Kolmogorov-Smirnov bound at the 1% level for 1e5 draws.
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn vectorized_sample_covariance_approaches_the_kronecker_product() {
        let mut rng = testutil::rng(67);
        let s1 = testutil::random_spd_unit(2, &mut rng);
        let s2 = testutil::random_spd_unit(2, &mut rng);
        let mu = Tensor::zeros(&[2, 2]).unwrap();
        let n = 5000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(sample_tn(&mu, &[s1.clone(), s2.clone()], &mut rng).unwrap().vectorize());
        }
        let mut mean = vec![0.0; 4];
        for d in &draws {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = Matrix::zeros(4, 4);
        for d in &draws {
            for a in 0..4 {
                for b in 0..4 {
                    let v = cov.get(a, b) + (d[a] - mean[a]) * (d[b] - mean[b]);
                    cov.set(a, b, v);
                }
            }
        }
        cov.scale_mut(1.0 / n as f64);
        let want = kron(&s2, &s1);
        assert!(cov.max_abs_diff(&want) < 0.15, "off by {}", cov.max_abs_diff(&want));
    }

    #[test]
    fn first_design_recovers_its_corner_discriminant() {
        let spec = model_spec("m1", 3).unwrap();
        let params = build_model(&spec).unwrap();
        assert_eq!(params.k(), 2);
        assert_eq!(params.dims(), &[10, 10, 4]);
        let discs = model::discriminants(&params).unwrap();
        let b = &discs.bs[1];
        for j1 in 0..10 {
            for j2 in 0..10 {
                for j3 in 0..4 {
                    let v = b.get(&[j1, j2, j3]);
                    if j1 < 6 && j2 == 0 && j3 == 0 {
                        assert!((v - 0.5).abs() < 1e-8, "corner {j1} got {v}");
                    } else {
                        assert!(v.abs() < 1e-8, "off-corner ({j1},{j2},{j3}) got {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn separation_of_the_first_design_is_exact() {
        // <mu_2 - mu_1, B_2> = 0.25 * (6 + 30 * 0.3) = 3.75 by the
        // compound-symmetry inner product over the six corner rows.
        let params = build_model(&model_spec("m1", 11).unwrap()).unwrap();
        let sep = model::separation(&params).unwrap();
        assert!((sep - 3.75).abs() < 1e-8, "separation {sep}");

        let doubled =
            build_model(&model_spec("m1", 11).unwrap().with_mean_scale(2f64.sqrt())).unwrap();
        let sep2 = model::separation(&doubled).unwrap();
        assert!((sep2 - 7.5).abs() < 1e-8, "scaled separation {sep2}");
    }

    #[test]
    fn identity_mode_design_routes_the_gap_through_one_mode() {
        let params = build_model(&model_spec("m4", 17).unwrap()).unwrap();
        let ar = ar_matrix(10, 0.8).unwrap();
        let gap = params.mus[1].sub(&params.mus[0]).unwrap();
        for j1 in 0..10 {
            for j2 in 0..10 {
                for j3 in 0..4 {
                    let v = gap.get(&[j1, j2, j3]);
                    if j1 < 6 && j3 == 0 {
                        let want = 0.8 * ar.get(j2, 0);
                        assert!((v - want).abs() < 1e-12, "({j1},{j2},{j3}): {v} vs {want}");
                    } else {
                        assert_eq!(v, 0.0, "({j1},{j2},{j3}) should be untouched");
                    }
                }
            }
        }
    }

    #[test]
    fn explicit_mean_design_builds_centered_corner_means() {
        let spec = model_spec("m6", 23).unwrap();
        let params = build_model(&spec).unwrap();
        assert_eq!(params.k(), 6);
        assert_eq!(params.mus[0].frobenius_norm(), 0.0);
        for k in 1..6 {
            let mu = &params.mus[k];
            let mut corner_norm = 0.0f64;
            for j1 in 0..10 {
                for j2 in 0..10 {
                    for j3 in 0..4 {
                        let v = mu.get(&[j1, j2, j3]);
                        if j1 < 8 && j2 == 0 && j3 == 0 {
                            assert!(v.abs() <= 1.0);
                            corner_norm += v * v;
                        } else {
                            assert_eq!(v, 0.0);
                        }
                    }
                }
            }
            assert!(corner_norm > 0.0, "cluster {k} mean collapsed");
        }
        params.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic_with_cluster_ordered_labels() {
        let spec = SimSpec {
            dims: vec![2, 3],
            k: 2,
            n_per_cluster: 4,
            covariances: vec![CovRecipe::Cs { rho: 0.3 }, CovRecipe::Ar { rho: 0.5 }],
            mean: MeanRecipe::CornerB { rows: 2, values: vec![1.0] },
            seed: 99,
            mean_scale: 1.0,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.data(), y.data());
        }

        // A different seed moves the data but not this deterministic truth.
        let mut other = spec.clone();
        other.seed = 100;
        let c = generate(&other).unwrap();
        assert_eq!(
            serde_json::to_string(&a.truth.mus).unwrap(),
            serde_json::to_string(&c.truth.mus).unwrap()
        );
        assert_ne!(a.data[0].data(), c.data[0].data());
    }

    #[test]
    fn spec_round_trips_through_json_with_stable_field_names() {
        let spec = model_spec("m2", 5).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        for field in ["dims", "n_per_cluster", "covariances", "mean", "seed", "mean_scale"] {
            assert!(text.contains(field), "serialized spec lacks '{field}'");
        }
        let back: SimSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);

        // mean_scale may be omitted and defaults to one.
        let no_scale = text.replace(",\"mean_scale\":1.0", "");
        let parsed: SimSpec = serde_json::from_str(&no_scale).unwrap();
        assert_eq!(parsed.mean_scale, 1.0);
    }

    #[test]
    fn clustering_error_minimizes_over_relabelings() {
        let truth: Vec<usize> = (0..150).map(|i| i / 75).collect();
        assert_eq!(clustering_error(&truth, &truth, 2).unwrap(), 0.0);
        let flipped: Vec<usize> = truth.iter().map(|&l| 1 - l).collect();
        assert_eq!(clustering_error(&flipped, &truth, 2).unwrap(), 0.0);

        // Exactly 30 disagreements is 30/150 after the better relabeling.
        let mut pred = truth.clone();
        for l in pred.iter_mut().take(30) {
            *l = 1 - *l;
        }
        assert!((clustering_error(&pred, &truth, 2).unwrap() - 0.2).abs() < 1e-12);

        let t3 = vec![0, 0, 1, 1, 2, 2];
        let rotated = vec![1, 1, 2, 2, 0, 0];
        assert_eq!(clustering_error(&rotated, &t3, 3).unwrap(), 0.0);
        let one_off = vec![1, 1, 2, 0, 0, 0];
        assert!((clustering_error(&one_off, &t3, 3).unwrap() - 1.0 / 6.0).abs() < 1e-12);

        assert!(matches!(
            clustering_error(&[0, 1], &[0, 1], 9),
            Err(Error::Unsupported(_))
        ));
        assert!(clustering_error(&[0, 2], &[0, 1], 2).is_err());
        assert!(clustering_error(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn unknown_model_names_are_rejected() {
        assert!(model_spec("m8", 0).is_err());
        assert!(model_spec("", 0).is_err());
        assert!(model_spec("M3", 0).is_ok());
    }
}
