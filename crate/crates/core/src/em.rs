//! Standard EM baseline for the tensor normal mixture.
//!
//! The E-step uses exact posteriors. The M-step re-estimates weights and
//! means by weighted moments and the per-mode covariance factors by a
//! flip-flop pass: each factor is the weighted scatter of observations
//! whitened along every other mode, swept Gauss-Seidel style until the
//! factors stop moving. No sparsity is imposed anywhere.

use serde::{Deserialize, Serialize};

use crate::deem::{self, accumulate_lower_syrk, mirror_lower, FitResult};
use crate::error::{Error, Result};
use crate::matrix::{inv_sqrt_floored, Matrix};
use crate::model::{self, TnmmParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iters: usize,
    pub mean_shift_tol: f64,
    pub flipflop_max: usize,
    pub flipflop_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 50, mean_shift_tol: 0.1, flipflop_max: 20, flipflop_tol: 1e-6 }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.flipflop_max == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and flipflop_max must be at least 1".into(),
            ));
        }
        if !self.mean_shift_tol.is_finite() || self.mean_shift_tol < 0.0 {
            return Err(Error::InvalidConfig("mean_shift_tol must be non-negative".into()));
        }
        if !self.flipflop_tol.is_finite() || self.flipflop_tol < 0.0 {
            return Err(Error::InvalidConfig("flipflop_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FlipflopOutcome {
    pub sigmas: Vec<Matrix>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Rescales covariance factors onto the identifiability convention without
/// changing their Kronecker product: every factor past the first is divided
/// by its leading entry, and the first factor absorbs the product of those
/// entries.
pub(crate) fn rescale_product_preserving(sigmas: &mut [Matrix]) -> Result<()> {
    let mut absorbed = 1.0;
    for (m, s) in sigmas.iter_mut().enumerate().skip(1) {
        let lead = s.get(0, 0);
        if !(lead > 0.0) {
            return Err(Error::NotSpd(format!(
                "mode-{m} factor has non-positive leading entry {lead:.3e}"
            )));
        }
        absorbed *= lead;
        for v in s.data_mut() {
            *v /= lead;
        }
        s.set(0, 0, 1.0);
    }
    if let Some(first) = sigmas.first_mut() {
        first.scale_mut(absorbed);
    }
    Ok(())
}

/// Weighted flip-flop estimate of the per-mode covariance factors given
/// responsibilities and cluster means.
///
/// Mode `m` is updated to `(n q_m)^{-1} sum_{i,k} xi_{ik} W(m) W(m)^T` with
/// `W` the centered observation whitened by the current inverse square roots
/// of every other mode (eigenvalues floored at 1e-10). Modes are swept in
/// order, each update seeing the ones before it, until the largest relative
/// change in a sweep drops below `flipflop_tol` or `flipflop_max` sweeps
/// have run. The result is put on the identifiability convention by a
/// rescale that leaves the Kronecker product, and so the likelihood,
/// unchanged.
pub fn flipflop_sigma(
    data: &[Tensor],
    resp: &Matrix,
    mus: &[Tensor],
    init_sigmas: &[Matrix],
    config: &EmConfig,
) -> Result<FlipflopOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParams("empty dataset".into()));
    }
    let n = data.len();
    let dims = data[0].dims().to_vec();
    let order = dims.len();
    let kc = resp.cols();
    if resp.rows() != n || kc == 0 {
        return Err(Error::DimMismatch(format!(
            "responsibilities are {}x{}, expected {} rows",
            resp.rows(),
            resp.cols(),
            n
        )));
    }
    if mus.len() != kc {
        return Err(Error::DimMismatch(format!(
            "{} means for {} responsibility columns",
            mus.len(),
            kc
        )));
    }
    for mu in mus {
        if mu.dims() != dims {
            return Err(Error::DimMismatch(format!(
                "mean shape {:?} differs from data shape {:?}",
                mu.dims(),
                dims
            )));
        }
    }
    if init_sigmas.len() != order
        || init_sigmas.iter().zip(&dims).any(|(s, &pm)| s.rows() != pm || s.cols() != pm)
    {
        return Err(Error::DimMismatch("covariance factor shapes do not match data".into()));
    }

    let p: usize = dims.iter().product();
    let mut sigmas = init_sigmas.to_vec();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < config.flipflop_max {
        let mut max_rel = 0.0f64;
        for m in 0..order {
            let whiten: Vec<Matrix> =
                sigmas.iter().map(|s| inv_sqrt_floored(s, 1e-10)).collect::<Result<_>>()?;
            let pm = dims[m];
            let q = (p / pm) as f64;
            let mut scatter = Matrix::zeros(pm, pm);
            for (i, x) in data.iter().enumerate() {
                for k in 0..kc {
                    let w = resp.get(i, k);
                    if w == 0.0 {
                        continue;
                    }
                    let centered = x.sub(&mus[k])?;
                    let whitened = centered.tucker_skip(&whiten, Some(m))?;
                    let wm = whitened.matricize(m)?;
                    accumulate_lower_syrk(&mut scatter, &wm, w);
                }
            }
            mirror_lower(&mut scatter);
            scatter.scale_mut(1.0 / (n as f64 * q));
            let scale = sigmas[m].frobenius_norm().max(1.0);
            max_rel = max_rel.max(scatter.max_abs_diff(&sigmas[m]) / scale);
            sigmas[m] = scatter;
        }
        sweeps += 1;
        if max_rel < config.flipflop_tol {
            converged = true;
            break;
        }
    }
    rescale_product_preserving(&mut sigmas)?;
    Ok(FlipflopOutcome { sigmas, sweeps, converged })
}

/// Plain EM fit. The structure of the result matches the penalized fit:
/// the discriminants and responsibilities are recomputed fresh at the final
/// parameters, and the support simply lists every nonzero discriminant
/// coordinate, which outside of exact cancellation means all of them.
pub fn em_fit(
    data: &[Tensor],
    k: usize,
    config: &EmConfig,
    init: &TnmmParams,
) -> Result<FitResult> {
    config.validate()?;
    init.validate()?;
    if init.k() != k {
        return Err(Error::InvalidParams(format!(
            "initializer has {} clusters, fit asked for {k}",
            init.k()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidParams("empty dataset".into()));
    }
    if data[0].dims() != init.dims() {
        return Err(Error::DimMismatch(format!(
            "data shape {:?} vs initializer shape {:?}",
            data[0].dims(),
            init.dims()
        )));
    }
    let n = data.len();
    let dims = init.dims().to_vec();
    let mut params = init.clone();
    let mut iters = 0;
    for t in 0..config.max_iters {
        let discs = model::discriminants(&params)?;
        let resp = deem::estep_weights(data, &params, &discs)?;

        let mut weights = vec![0.0f64; k];
        for k_i in 0..k {
            let mut w = 0.0;
            for i in 0..n {
                w += resp.get(i, k_i);
            }
            if w < 1.0 {
                return Err(Error::DegenerateCluster { cluster: k_i, weight: w });
            }
            weights[k_i] = w;
        }
        let pis: Vec<f64> = weights.iter().map(|w| w / n as f64).collect();
        let mut mus = Vec::with_capacity(k);
        for k_i in 0..k {
            let mut acc = Tensor::zeros(&dims)?;
            for (i, x) in data.iter().enumerate() {
                let w = resp.get(i, k_i);
                if w != 0.0 {
                    acc.add_scaled(x, w)?;
                }
            }
            acc.scale_mut(1.0 / weights[k_i]);
            mus.push(acc);
        }
        let ff = flipflop_sigma(data, &resp, &mus, &params.sigmas, config)?;

        let mut shift = 0.0;
        for k_i in 0..k {
            shift += mus[k_i].sub(&params.mus[k_i])?.frobenius_norm().powi(2);
        }
        params = TnmmParams { pis, mus, sigmas: ff.sigmas };
        iters = t + 1;
        if shift <= config.mean_shift_tol {
            break;
        }
    }

    let discs = model::discriminants(&params)?;
    let resp = deem::estep_weights(data, &params, &discs)?;
    let labels = deem::hard_labels(&resp);
    let support = discs.support();
    let bic = deem::bic_value(data, &params, support.len())?;
    Ok(FitResult { params, discs, responsibilities: resp, labels, iters, bic, support })
}
