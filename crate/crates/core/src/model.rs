//! The tensor normal mixture model: parameters, densities, discriminant
//! tensors, posterior responsibilities, and the optimal assignment rule.
//!
//! An observation is an order-M tensor X. Under cluster k it is distributed
//! as mu_k plus noise whose vectorization is Gaussian with covariance
//! `Sigma_M kron ... kron Sigma_1`; the per-mode factors are shared across
//! clusters. The factors are identified up to scale, so the convention here
//! is `sigma_m[0, 0] = 1` for every mode but the first, with the first
//! factor carrying the overall variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, SymEigen};
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.8378770664093453;

/// Mixture parameters: weights, per-cluster mean tensors, and the shared
/// per-mode covariance factors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TnmmParams {
    pub pis: Vec<f64>,
    pub mus: Vec<Tensor>,
    pub sigmas: Vec<Matrix>,
}

impl TnmmParams {
    pub fn k(&self) -> usize {
        self.pis.len()
    }

    pub fn dims(&self) -> &[usize] {
        self.mus[0].dims()
    }

    pub fn p(&self) -> usize {
        self.mus[0].len()
    }

    /// Checks every structural invariant: weights form a distribution, the
    /// means share one shape that matches the covariance sides, each factor
    /// is symmetric positive definite, and all factors but the first have a
    /// unit leading diagonal entry.
    pub fn validate(&self) -> Result<()> {
        let k = self.pis.len();
        if k == 0 || self.mus.len() != k {
            return Err(Error::InvalidParams(format!(
                "{} weights for {} means",
                k,
                self.mus.len()
            )));
        }
        if self.pis.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidParams("weights must be positive".into()));
        }
        let total: f64 = self.pis.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParams(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let dims = self.mus[0].dims().to_vec();
        for mu in &self.mus {
            if mu.dims() != dims {
                return Err(Error::InvalidParams(format!(
                    "mean shapes differ: {:?} vs {:?}",
                    mu.dims(),
                    dims
                )));
            }
        }
        if self.sigmas.len() != dims.len() {
            return Err(Error::InvalidParams(format!(
                "{} covariance factors for an order-{} mean",
                self.sigmas.len(),
                dims.len()
            )));
        }
        for (m, sig) in self.sigmas.iter().enumerate() {
            if sig.rows() != dims[m] || sig.cols() != dims[m] {
                return Err(Error::InvalidParams(format!(
                    "factor {m} is {}x{}, mode has size {}",
                    sig.rows(),
                    sig.cols(),
                    dims[m]
                )));
            }
            if sig.max_asymmetry() > 1e-10 {
                return Err(Error::InvalidParams(format!(
                    "factor {m} is asymmetric by {:.3e}",
                    sig.max_asymmetry()
                )));
            }
            let min = SymEigen::new(sig)?.min_value();
            if min <= 0.0 {
                return Err(Error::NotSpd(format!(
                    "covariance factor {m} has eigenvalue {min:.3e}"
                )));
            }
            if m > 0 && (sig.get(0, 0) - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParams(format!(
                    "factor {m} has leading entry {}, expected 1",
                    sig.get(0, 0)
                )));
            }
        }
        Ok(())
    }
}

/// Discriminant tensors B_k relating every cluster to cluster 0; B_0 is the
/// zero tensor by definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscriminantSet {
    pub bs: Vec<Tensor>,
}

impl DiscriminantSet {
    /// Cluster/coordinate pairs with a non-zero coefficient, skipping the
    /// identically zero B_0.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, b) in self.bs.iter().enumerate().skip(1) {
            for (j, &v) in b.data().iter().enumerate() {
                if v != 0.0 {
                    out.push((k, j));
                }
            }
        }
        out
    }
}

/// Spectral byproducts of the covariance factors, computed once and shared
/// by every routine that needs inverses, square roots, or determinants.
pub struct SigmaOps {
    pub inv: Vec<Matrix>,
    pub inv_sqrt: Vec<Matrix>,
    pub sqrt: Vec<Matrix>,
    pub logdets: Vec<f64>,
}

impl SigmaOps {
    pub fn new(sigmas: &[Matrix]) -> Result<Self> {
        let mut inv = Vec::with_capacity(sigmas.len());
        let mut inv_sqrt = Vec::with_capacity(sigmas.len());
        let mut sqrt = Vec::with_capacity(sigmas.len());
        let mut logdets = Vec::with_capacity(sigmas.len());
        for (m, sig) in sigmas.iter().enumerate() {
            let eig = SymEigen::new(sig)?;
            let min = eig.min_value();
            if min <= 0.0 {
                return Err(Error::NotSpd(format!(
                    "covariance factor {m} has eigenvalue {min:.3e}"
                )));
            }
            inv.push(eig.apply(|l| 1.0 / l));
            inv_sqrt.push(eig.apply(|l| 1.0 / l.sqrt()));
            sqrt.push(eig.apply(f64::sqrt));
            logdets.push(eig.values.iter().map(|l| l.ln()).sum());
        }
        Ok(Self { inv, inv_sqrt, sqrt, logdets })
    }
}

/// Log-density of one observation under a single tensor normal component.
pub fn log_density(x: &Tensor, mu: &Tensor, sigmas: &[Matrix]) -> Result<f64> {
    let ops = SigmaOps::new(sigmas)?;
    log_density_with(x, mu, &ops)
}

/// As [`log_density`] but reusing precomputed spectral factors.
pub fn log_density_with(x: &Tensor, mu: &Tensor, ops: &SigmaOps) -> Result<f64> {
    if x.dims() != mu.dims() {
        return Err(Error::DimMismatch(format!(
            "observation {:?} vs mean {:?}",
            x.dims(),
            mu.dims()
        )));
    }
    if ops.inv.len() != x.order() {
        return Err(Error::DimMismatch(format!(
            "{} covariance factors for an order-{} observation",
            ops.inv.len(),
            x.order()
        )));
    }
    let p = x.len() as f64;
    let mut logdet_total = 0.0;
    for (m, ld) in ops.logdets.iter().enumerate() {
        let q = p / x.dims()[m] as f64;
        logdet_total += q * ld;
    }
    let resid = x.sub(mu)?;
    let whitened = resid.tucker(&ops.inv)?;
    let quad = whitened.inner(&resid)?;
    Ok(-0.5 * p * LN_2PI - 0.5 * logdet_total - 0.5 * quad)
}

/// Discriminant tensors `B_k = (mu_k - mu_0) x_1 Sigma_1^-1 ... x_M Sigma_M^-1`.
pub fn discriminants(params: &TnmmParams) -> Result<DiscriminantSet> {
    let ops = SigmaOps::new(&params.sigmas)?;
    discriminants_with(params, &ops)
}

pub fn discriminants_with(params: &TnmmParams, ops: &SigmaOps) -> Result<DiscriminantSet> {
    let mut bs = Vec::with_capacity(params.k());
    bs.push(Tensor::zeros(params.dims())?);
    for k in 1..params.k() {
        let diff = params.mus[k].sub(&params.mus[0])?;
        bs.push(diff.tucker(&ops.inv)?);
    }
    Ok(DiscriminantSet { bs })
}

/// Per-cluster assignment scores `log pi_k + <X - (mu_0 + mu_k)/2, B_k>`.
/// Exponentiated and normalized they are the posterior responsibilities;
/// their argmax is the optimal assignment rule.
fn scores(x: &Tensor, params: &TnmmParams, discs: &DiscriminantSet) -> Result<Vec<f64>> {
    if discs.bs.len() != params.k() {
        return Err(Error::DimMismatch(format!(
            "{} discriminants for {} clusters",
            discs.bs.len(),
            params.k()
        )));
    }
    let mut out = Vec::with_capacity(params.k());
    for k in 0..params.k() {
        let mut s = params.pis[k].ln();
        if k > 0 {
            let mut mid = params.mus[0].clone();
            mid.add_scaled(&params.mus[k], 1.0)?;
            mid.scale_mut(0.5);
            let centered = x.sub(&mid)?;
            s += centered.inner(&discs.bs[k])?;
        }
        out.push(s);
    }
    Ok(out)
}

pub(crate) fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Posterior cluster responsibilities of one observation, computed in log
/// space with max subtraction so extreme separations stay finite.
pub fn posteriors(x: &Tensor, params: &TnmmParams, discs: &DiscriminantSet) -> Result<Vec<f64>> {
    let s = scores(x, params, discs)?;
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Maximum-score cluster for one observation; ties resolve to the smallest
/// cluster index.
pub fn optimal_assign(x: &Tensor, params: &TnmmParams, discs: &DiscriminantSet) -> Result<usize> {
    let s = scores(x, params, discs)?;
    let mut best = 0;
    for (k, &v) in s.iter().enumerate().skip(1) {
        if v > s[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Mahalanobis-type separation between the two clusters of a two-component
/// model: `<mu_1 - mu_0, B_1>`.
pub fn separation(params: &TnmmParams) -> Result<f64> {
    if params.k() != 2 {
        return Err(Error::InvalidParams(format!(
            "separation is defined for two clusters, model has {}",
            params.k()
        )));
    }
    let discs = discriminants(params)?;
    params.mus[1].sub(&params.mus[0])?.inner(&discs.bs[1])
}

/// Observed-data log-likelihood `sum_i log sum_k pi_k f_k(X_i)`.
pub fn mixture_loglik(data: &[Tensor], params: &TnmmParams) -> Result<f64> {
    let ops = SigmaOps::new(&params.sigmas)?;
    let mut total = 0.0;
    let mut terms = vec![0.0; params.k()];
    for x in data {
        for k in 0..params.k() {
            terms[k] = params.pis[k].ln() + log_density_with(x, &params.mus[k], &ops)?;
        }
        total += logsumexp(&terms);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{kron, spd_log_det};
    use crate::testutil;

    fn scalar_params() -> TnmmParams {
        TnmmParams {
            pis: vec![1.0],
            mus: vec![Tensor::zeros(&[1]).unwrap()],
            sigmas: vec![Matrix::identity(1)],
        }
    }

    #[test]
    fn validate_accepts_and_rejects() {
        let mut rng = testutil::rng(1);
        let params = testutil::random_params(&[3, 2], 2, 1.0, &mut rng);
        params.validate().unwrap();

        let mut bad = params.clone();
        bad.pis = vec![0.6, 0.6];
        assert!(matches!(bad.validate(), Err(Error::InvalidParams(_))));

        let mut bad = params.clone();
        bad.sigmas[1].set(0, 0, 1.5);
        bad.sigmas[1].set(1, 1, 2.0);
        assert!(bad.validate().is_err());

        let mut bad = params.clone();
        let skewed = bad.sigmas[0].get(0, 1) + 1e-6;
        bad.sigmas[0].set(0, 1, skewed);
        assert!(matches!(bad.validate(), Err(Error::InvalidParams(_))));

        let mut bad = params.clone();
        bad.sigmas[0] = Matrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        assert!(matches!(bad.validate(), Err(Error::NotSpd(_))));

        let mut bad = params;
        bad.mus[1] = Tensor::zeros(&[2, 3]).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scalar_log_density_is_standard_normal() {
        let p = scalar_params();
        let x = Tensor::zeros(&[1]).unwrap();
        let ld = log_density(&x, &p.mus[0], &p.sigmas).unwrap();
        assert!((ld - (-0.9189385332046727)).abs() < 1e-14);
    }

    #[test]
    fn log_density_at_the_mean_is_the_normalizer() {
        let mut rng = testutil::rng(7);
        let params = testutil::random_params(&[2, 3], 1, 0.5, &mut rng);
        let ld = log_density(&params.mus[0], &params.mus[0], &params.sigmas).unwrap();
        let p = 6.0;
        let mut expect = -0.5 * p * LN_2PI;
        for (m, sig) in params.sigmas.iter().enumerate() {
            let q = p / params.dims()[m] as f64;
            expect -= 0.5 * q * spd_log_det(sig).unwrap();
        }
        assert!((ld - expect).abs() < 1e-10);
    }

    #[test]
    fn identity_factors_reduce_to_squared_distance() {
        let mut rng = testutil::rng(11);
        let x = testutil::random_tensor(&[2, 2, 2], &mut rng);
        let mu = testutil::random_tensor(&[2, 2, 2], &mut rng);
        let sigmas = vec![Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)];
        let ld = log_density(&x, &mu, &sigmas).unwrap();
        let d2 = x.sub(&mu).unwrap().frobenius_norm().powi(2);
        assert!((ld - (-4.0 * LN_2PI - 0.5 * d2)).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_dense_gaussian_oracle() {
        let mut rng = testutil::rng(13);
        for _ in 0..20 {
            let params = testutil::random_params(&[2, 3], 1, 0.8, &mut rng);
            let x = testutil::random_tensor(&[2, 3], &mut rng);
            let ld = log_density(&x, &params.mus[0], &params.sigmas).unwrap();

            // Oracle: Cholesky on the expanded Kronecker covariance.
            let psi = kron(&params.sigmas[1], &params.sigmas[0]);
            let n = psi.rows();
            let dm = nalgebra::DMatrix::from_column_slice(n, n, psi.data());
            let chol = dm.cholesky().expect("oracle covariance is SPD");
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let resid = x.sub(&params.mus[0]).unwrap();
            let rv = nalgebra::DVector::from_column_slice(&resid.vectorize());
            let solved = chol.solve(&rv);
            let quad = rv.dot(&solved);
            let want = -0.5 * (n as f64) * LN_2PI - 0.5 * logdet - 0.5 * quad;
            assert!((ld - want).abs() < 1e-8, "ld = {ld}, oracle = {want}");
        }
    }

    #[test]
    fn discriminants_zero_when_means_agree() {
        let mut rng = testutil::rng(17);
        let mut params = testutil::random_params(&[3, 2], 2, 1.0, &mut rng);
        params.mus[1] = params.mus[0].clone();
        let discs = discriminants(&params).unwrap();
        assert!(discs.bs[1].frobenius_norm() == 0.0);
        assert_eq!(discs.support().len(), 0);
    }

    #[test]
    fn discriminants_with_identity_factors_are_mean_gaps() {
        let mut rng = testutil::rng(19);
        let mut params = testutil::random_params(&[2, 2], 2, 1.0, &mut rng);
        params.sigmas = vec![Matrix::identity(2), Matrix::identity(2)];
        let discs = discriminants(&params).unwrap();
        let gap = params.mus[1].sub(&params.mus[0]).unwrap();
        assert!(discs.bs[1].sub(&gap).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn discriminants_solve_the_kronecker_system() {
        let mut rng = testutil::rng(23);
        for _ in 0..10 {
            let params = testutil::random_params(&[2, 3], 3, 1.0, &mut rng);
            let discs = discriminants(&params).unwrap();
            let psi = kron(&params.sigmas[1], &params.sigmas[0]);
            let n = psi.rows();
            let dm = nalgebra::DMatrix::from_column_slice(n, n, psi.data());
            for k in 1..3 {
                let gap = params.mus[k].sub(&params.mus[0]).unwrap();
                let rhs = nalgebra::DVector::from_column_slice(&gap.vectorize());
                let solved = dm.clone().lu().solve(&rhs).expect("oracle solve");
                for (j, &b) in discs.bs[k].data().iter().enumerate() {
                    assert!((b - solved[j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn posteriors_reduce_to_weights_when_means_agree() {
        let mut rng = testutil::rng(29);
        let mut params = testutil::random_params(&[2, 2], 3, 1.0, &mut rng);
        params.mus[1] = params.mus[0].clone();
        params.mus[2] = params.mus[0].clone();
        params.pis = vec![0.5, 0.3, 0.2];
        let discs = discriminants(&params).unwrap();
        let x = testutil::random_tensor(&[2, 2], &mut rng);
        let post = posteriors(&x, &params, &discs).unwrap();
        for (got, want) in post.iter().zip(&params.pis) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_on_the_midplane_is_half_half() {
        let mut rng = testutil::rng(31);
        let mut params = testutil::random_params(&[2, 3], 2, 1.0, &mut rng);
        params.pis = vec![0.5, 0.5];
        let discs = discriminants(&params).unwrap();
        let mut mid = params.mus[0].clone();
        mid.add_scaled(&params.mus[1], 1.0).unwrap();
        mid.scale_mut(0.5);
        // Any point whose centered inner product with B_1 vanishes works;
        // the midpoint itself is the canonical one.
        let post = posteriors(&mid, &params, &discs).unwrap();
        assert!((post[0] - 0.5).abs() < 1e-12);
        assert!((post[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posteriors_match_the_density_ratio_oracle() {
        let mut rng = testutil::rng(37);
        for _ in 0..20 {
            let params = testutil::random_params(&[2, 3], 3, 1.2, &mut rng);
            let discs = discriminants(&params).unwrap();
            let x = testutil::random_tensor(&[2, 3], &mut rng);
            let post = posteriors(&x, &params, &discs).unwrap();
            let logs: Vec<f64> = (0..3)
                .map(|k| {
                    params.pis[k].ln()
                        + log_density(&x, &params.mus[k], &params.sigmas).unwrap()
                })
                .collect();
            let lse = logsumexp(&logs);
            for k in 0..3 {
                let want = (logs[k] - lse).exp();
                assert!(
                    (post[k] - want).abs() < 1e-10,
                    "posterior {k}: {} vs {want}",
                    post[k]
                );
            }
        }
    }

    #[test]
    fn posteriors_survive_extreme_separation() {
        let mut rng = testutil::rng(41);
        let mut params = testutil::random_params(&[2, 2], 2, 1.0, &mut rng);
        let mut far = Tensor::zeros(&[2, 2]).unwrap();
        far.set(&[0, 0], 800.0);
        params.mus[1] = far;
        let discs = discriminants(&params).unwrap();
        let post = posteriors(&params.mus[1], &params, &discs).unwrap();
        assert!(post.iter().all(|v| v.is_finite()));
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(post[1] > 0.999999);
        let post0 = posteriors(&params.mus[0], &params, &discs).unwrap();
        assert!(post0[0] > 0.999999);
    }

    #[test]
    fn optimal_assign_recovers_the_generating_cluster() {
        let mut rng = testutil::rng(43);
        let params = testutil::random_params(&[2, 3], 3, 8.0, &mut rng);
        let discs = discriminants(&params).unwrap();
        for k in 0..3 {
            assert_eq!(optimal_assign(&params.mus[k], &params, &discs).unwrap(), k);
        }
    }

    #[test]
    fn optimal_assign_breaks_ties_to_the_smallest_index() {
        let mut rng = testutil::rng(47);
        let mut params = testutil::random_params(&[2, 2], 2, 1.0, &mut rng);
        params.pis = vec![0.5, 0.5];
        let discs = discriminants(&params).unwrap();
        let mut mid = params.mus[0].clone();
        mid.add_scaled(&params.mus[1], 1.0).unwrap();
        mid.scale_mut(0.5);
        assert_eq!(optimal_assign(&mid, &params, &discs).unwrap(), 0);
    }

    #[test]
    fn optimal_assign_agrees_with_max_posterior() {
        let mut rng = testutil::rng(53);
        for _ in 0..20 {
            let params = testutil::random_params(&[2, 2, 2], 3, 1.5, &mut rng);
            let discs = discriminants(&params).unwrap();
            let x = testutil::random_tensor(&[2, 2, 2], &mut rng);
            let post = posteriors(&x, &params, &discs).unwrap();
            let argmax = post
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(optimal_assign(&x, &params, &discs).unwrap(), argmax);
        }
    }

    #[test]
    fn separation_special_cases() {
        let mut rng = testutil::rng(59);
        let mut params = testutil::random_params(&[2, 3], 2, 1.0, &mut rng);
        params.mus[1] = params.mus[0].clone();
        assert!(separation(&params).unwrap().abs() < 1e-14);

        let mut params = testutil::random_params(&[2, 3], 2, 1.0, &mut rng);
        params.sigmas = vec![Matrix::identity(2), Matrix::identity(3)];
        let gap = params.mus[1].sub(&params.mus[0]).unwrap();
        let want = gap.frobenius_norm().powi(2);
        assert!((separation(&params).unwrap() - want).abs() < 1e-10);

        // Doubling the gap quadruples the separation.
        let mut scaled = params.clone();
        let mut mu1 = params.mus[0].clone();
        mu1.add_scaled(&gap, 2.0).unwrap();
        scaled.mus[1] = mu1;
        assert!((separation(&scaled).unwrap() - 4.0 * want).abs() < 1e-9);

        let three = testutil::random_params(&[2, 2], 3, 1.0, &mut rng);
        assert!(separation(&three).is_err());
    }

    #[test]
    fn mixture_loglik_matches_direct_sum() {
        let mut rng = testutil::rng(61);
        let params = testutil::random_params(&[2, 2], 2, 1.0, &mut rng);
        let data: Vec<Tensor> = (0..5)
            .map(|_| testutil::random_tensor(&[2, 2], &mut rng))
            .collect();
        let ll = mixture_loglik(&data, &params).unwrap();
        let mut want = 0.0;
        for x in &data {
            let l0 = params.pis[0].ln() + log_density(x, &params.mus[0], &params.sigmas).unwrap();
            let l1 = params.pis[1].ln() + log_density(x, &params.mus[1], &params.sigmas).unwrap();
            want += logsumexp(&[l0, l1]);
        }
        assert!((ll - want).abs() < 1e-10);
    }
}
