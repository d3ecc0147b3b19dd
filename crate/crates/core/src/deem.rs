//! Doubly-enhanced EM for tensor normal mixtures.
//!
//! Each iteration solves a group-penalized least-squares problem for the
//! discriminant tensors (the enhanced E-step), turns them into posterior
//! responsibilities, and then re-estimates weights, means, and per-mode
//! covariance factors by weighted moments (the enhanced M-step). A lasso
//! group collects the coefficients of one tensor coordinate across all
//! non-base clusters, so the penalty selects coordinates, not entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{self, KmeansConfig};
use crate::matrix::{min_eigenvalue, Matrix};
use crate::model::{self, DiscriminantSet, TnmmParams};
use crate::tensor::Tensor;

/// How the penalty level evolves across iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaMode {
    /// One fixed level for every iteration.
    Fixed { lambda: f64 },
    /// Contracts geometrically toward a statistical floor:
    /// `lambda_{t+1} = kappa * lambda_t + (1 - kappa^{t+1}) / (1 - kappa)
    ///  * c_lambda * sqrt(log p / n)`, starting from a caller-chosen level.
    Schedule { lambda0: f64, kappa: f64, c_lambda: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DeemConfig {
    pub lambda: LambdaMode,
    pub max_iters: usize,
    pub mean_shift_tol: f64,
    pub inner_tol: f64,
    pub inner_max_passes: usize,
    pub rng_seed: u64,
}

impl Default for DeemConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaMode::Fixed { lambda: 0.0 },
            max_iters: 50,
            mean_shift_tol: 0.1,
            inner_tol: 1e-6,
            inner_max_passes: 200,
            rng_seed: 0,
        }
    }
}

impl DeemConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !self.mean_shift_tol.is_finite() || self.mean_shift_tol < 0.0 {
            return Err(Error::InvalidConfig("mean_shift_tol must be non-negative".into()));
        }
        if !self.inner_tol.is_finite() || self.inner_tol < 0.0 {
            return Err(Error::InvalidConfig("inner_tol must be non-negative".into()));
        }
        if self.inner_max_passes == 0 {
            return Err(Error::InvalidConfig("inner_max_passes must be at least 1".into()));
        }
        match self.lambda {
            LambdaMode::Fixed { lambda } => check_lambda(lambda),
            LambdaMode::Schedule { lambda0, kappa, c_lambda } => {
                check_lambda(lambda0)?;
                if !(kappa > 0.0 && kappa < 0.5) {
                    return Err(Error::InvalidConfig(format!(
                        "schedule kappa must lie in (0, 1/2), got {kappa}"
                    )));
                }
                if !c_lambda.is_finite() || c_lambda < 0.0 {
                    return Err(Error::InvalidConfig("c_lambda must be non-negative".into()));
                }
                Ok(())
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "penalty level must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Everything a fit produces: final parameters, the last solved discriminant
/// set with its support, the last responsibilities with their hard labels,
/// the iteration count, and the model-selection score.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub params: TnmmParams,
    pub discs: DiscriminantSet,
    pub responsibilities: Matrix,
    pub labels: Vec<usize>,
    pub iters: usize,
    pub bic: f64,
    pub support: Vec<(usize, usize)>,
}

/// Outcome of the penalized discriminant solve. Non-convergence within the
/// pass budget is reported, not fatal: the iterate is still usable.
#[derive(Clone, Debug)]
pub struct BSolve {
    pub discs: DiscriminantSet,
    pub passes: usize,
    pub converged: bool,
}

/// Expands `prod_m cols[m][i_m]` into `out`, the column of the Kronecker
/// covariance matrix picked out by one tensor coordinate.
fn kron_column(cols: &[&[f64]], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    for col in cols {
        let len = out.len();
        out.resize(len * col.len(), 0.0);
        for c in (0..col.len()).rev() {
            let f = col[c];
            for t in (0..len).rev() {
                out[c * len + t] = f * out[t];
            }
        }
    }
}

struct GroupProblem {
    dims: Vec<usize>,
    p: usize,
    /// Mean gaps d_k = vec(mu_k - mu_0) for k = 1..K.
    d: Vec<Vec<f64>>,
    /// Diagonal of the Kronecker covariance, one entry per coordinate.
    sigma_diag: Vec<f64>,
    sigmas: Vec<Matrix>,
}

impl GroupProblem {
    fn new(params: &TnmmParams) -> Result<Self> {
        let dims = params.dims().to_vec();
        let p = params.p();
        let mut d = Vec::with_capacity(params.k().saturating_sub(1));
        for k in 1..params.k() {
            d.push(params.mus[k].sub(&params.mus[0])?.vectorize());
        }
        let mut sigma_diag = vec![1.0; p];
        let mut idx = vec![0usize; dims.len()];
        for entry in sigma_diag.iter_mut() {
            let mut prod = 1.0;
            for (m, &i) in idx.iter().enumerate() {
                prod *= params.sigmas[m].get(i, i);
            }
            *entry = prod;
            for (m, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < dims[m] {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Self { dims, p, d, sigma_diag, sigmas: params.sigmas.clone() })
    }

    fn fitted(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; self.p]);
        }
        let t = Tensor::new(self.dims.clone(), b.to_vec())?;
        Ok(t.tucker(&self.sigmas)?.vectorize())
    }
}

/// Solves the enhanced E-step problem
///
/// ```text
/// min_B sum_k ( <B_k, B_k x_1 Sigma_1 ... x_M Sigma_M> - 2 <B_k, mu_k - mu_0> )
///       + lambda * sum_J || (B_1[J], ..., B_{K-1}[J]) ||_2
/// ```
///
/// by blockwise coordinate descent over coordinate groups, with the closed
/// form update `b_J <- z / sigma_J * max(0, 1 - lambda / (2 ||z||))` where
/// `z_k = d_k[J] - F_k[J] + sigma_J b_k[J]` and `F_k` is the fitted field
/// `B_k x_1 Sigma_1 ... x_M Sigma_M`, maintained incrementally and rebuilt
/// from scratch after every pass to stop drift. Sweeps alternate between all
/// coordinates and the active set until the largest group change in a full
/// pass drops below `inner_tol` or the pass budget runs out.
#[allow(non_snake_case)]
pub fn estep_solve_B(
    params: &TnmmParams,
    lambda: f64,
    warm: Option<&DiscriminantSet>,
    config: &DeemConfig,
) -> Result<BSolve> {
    check_lambda(lambda)?;
    if config.inner_max_passes == 0 {
        return Err(Error::InvalidConfig("inner_max_passes must be at least 1".into()));
    }
    let kc = params.k();
    if kc == 1 {
        return Ok(BSolve {
            discs: DiscriminantSet { bs: vec![Tensor::zeros(params.dims())?] },
            passes: 0,
            converged: true,
        });
    }
    let prob = GroupProblem::new(params)?;
    let groups = kc - 1;

    let mut b: Vec<Vec<f64>> = match warm {
        Some(w) => {
            if w.bs.len() != kc {
                return Err(Error::DimMismatch(format!(
                    "warm start has {} discriminants for {} clusters",
                    w.bs.len(),
                    kc
                )));
            }
            w.bs
                .iter()
                .skip(1)
                .map(|t| {
                    if t.dims() != prob.dims {
                        return Err(Error::DimMismatch(format!(
                            "warm start shape {:?} vs model shape {:?}",
                            t.dims(),
                            prob.dims
                        )));
                    }
                    Ok(t.vectorize())
                })
                .collect::<Result<_>>()?
        }
        None => vec![vec![0.0; prob.p]; groups],
    };
    let mut fitted: Vec<Vec<f64>> = b.iter().map(|bk| prob.fitted(bk)).collect::<Result<_>>()?;

    let mut z = vec![0.0; groups];
    let mut kcol: Vec<f64> = Vec::with_capacity(prob.p);
    let mut idx_scratch = vec![0usize; prob.dims.len()];

    let mut sweep = |b: &mut Vec<Vec<f64>>,
                     fitted: &mut Vec<Vec<f64>>,
                     coords: &[usize]|
     -> f64 {
        let mut max_change = 0.0f64;
        for &j in coords {
            let sj = prob.sigma_diag[j];
            let mut znorm2 = 0.0;
            for g in 0..groups {
                let zg = prob.d[g][j] - fitted[g][j] + sj * b[g][j];
                z[g] = zg;
                znorm2 += zg * zg;
            }
            let znorm = znorm2.sqrt();
            let shrink = if lambda > 0.0 {
                if znorm > lambda / 2.0 {
                    1.0 - lambda / (2.0 * znorm)
                } else {
                    0.0
                }
            } else {
                1.0
            };
            let mut change2 = 0.0;
            let mut any = false;
            for g in 0..groups {
                let new = if shrink == 0.0 { 0.0 } else { z[g] * shrink / sj };
                let delta = new - b[g][j];
                if delta != 0.0 {
                    any = true;
                }
                change2 += delta * delta;
            }
            if any {
                // One shared Kronecker column serves every group's update.
                decode_index(j, &prob.dims, &mut idx_scratch);
                let cols: Vec<&[f64]> = prob
                    .sigmas
                    .iter()
                    .enumerate()
                    .map(|(m, s)| s.col(idx_scratch[m]))
                    .collect();
                kron_column(&cols, &mut kcol);
                for g in 0..groups {
                    let new = if shrink == 0.0 { 0.0 } else { z[g] * shrink / sj };
                    let delta = new - b[g][j];
                    if delta != 0.0 {
                        b[g][j] = new;
                        let fg = &mut fitted[g];
                        for (f, &c) in fg.iter_mut().zip(kcol.iter()) {
                            *f += delta * c;
                        }
                    }
                }
            }
            max_change = max_change.max(change2.sqrt());
        }
        max_change
    };

    let all: Vec<usize> = (0..prob.p).collect();
    let mut passes = 0usize;
    let mut converged = false;
    'outer: while passes < config.inner_max_passes {
        let change = sweep(&mut b, &mut fitted, &all);
        passes += 1;
        for (fk, bk) in fitted.iter_mut().zip(b.iter()) {
            *fk = prob.fitted(bk)?;
        }
        if change < config.inner_tol {
            converged = true;
            break;
        }
        // Refine on the active set before paying for another full pass.
        loop {
            if passes >= config.inner_max_passes {
                break 'outer;
            }
            let active: Vec<usize> = (0..prob.p)
                .filter(|&j| (0..groups).any(|g| b[g][j] != 0.0))
                .collect();
            if active.is_empty() {
                break;
            }
            let change = sweep(&mut b, &mut fitted, &active);
            passes += 1;
            for (fk, bk) in fitted.iter_mut().zip(b.iter()) {
                *fk = prob.fitted(bk)?;
            }
            if change < config.inner_tol {
                break;
            }
        }
    }

    let mut bs = Vec::with_capacity(kc);
    bs.push(Tensor::zeros(&prob.dims)?);
    for bk in b {
        bs.push(Tensor::new(prob.dims.clone(), bk)?);
    }
    Ok(BSolve { discs: DiscriminantSet { bs }, passes, converged })
}

fn decode_index(mut lin: usize, dims: &[usize], idx: &mut [usize]) {
    for (m, &d) in dims.iter().enumerate() {
        idx[m] = lin % d;
        lin /= d;
    }
}

/// Value of the penalized E-step objective at a candidate discriminant set.
pub fn penalized_objective(
    params: &TnmmParams,
    discs: &DiscriminantSet,
    lambda: f64,
) -> Result<f64> {
    let mut value = 0.0;
    for k in 1..params.k() {
        let b = &discs.bs[k];
        let fitted = b.tucker(&params.sigmas)?;
        let d = params.mus[k].sub(&params.mus[0])?;
        value += b.inner(&fitted)? - 2.0 * b.inner(&d)?;
    }
    let p = params.p();
    for j in 0..p {
        let mut norm2 = 0.0;
        for k in 1..params.k() {
            let v = discs.bs[k].data()[j];
            norm2 += v * v;
        }
        value += lambda * norm2.sqrt();
    }
    Ok(value)
}

/// Worst first-order optimality violation of a candidate solution: active
/// groups must zero the subgradient, inactive groups must keep the smooth
/// gradient's group norm at or below `lambda`.
pub fn kkt_residual(params: &TnmmParams, discs: &DiscriminantSet, lambda: f64) -> Result<f64> {
    let p = params.p();
    let kc = params.k();
    let mut grads = Vec::with_capacity(kc.saturating_sub(1));
    for k in 1..kc {
        let fitted = discs.bs[k].tucker(&params.sigmas)?.vectorize();
        let d = params.mus[k].sub(&params.mus[0])?.vectorize();
        let g: Vec<f64> = fitted.iter().zip(&d).map(|(f, dv)| 2.0 * (f - dv)).collect();
        grads.push(g);
    }
    let mut worst = 0.0f64;
    for j in 0..p {
        let mut bn2 = 0.0;
        for k in 1..kc {
            let v = discs.bs[k].data()[j];
            bn2 += v * v;
        }
        if bn2 > 0.0 {
            let bn = bn2.sqrt();
            for (g, grad) in grads.iter().enumerate() {
                let bkj = discs.bs[g + 1].data()[j];
                worst = worst.max((grad[j] + lambda * bkj / bn).abs());
            }
        } else {
            let gn = grads.iter().map(|g| g[j] * g[j]).sum::<f64>().sqrt();
            worst = worst.max((gn - lambda).max(0.0));
        }
    }
    Ok(worst)
}

/// Posterior responsibilities of every observation, one row per observation;
/// each row is exactly [`model::posteriors`] at the given estimates.
pub fn estep_weights(
    data: &[Tensor],
    params: &TnmmParams,
    discs: &DiscriminantSet,
) -> Result<Matrix> {
    let n = data.len();
    let kc = params.k();
    let mut resp = Matrix::zeros(n, kc);
    for (i, x) in data.iter().enumerate() {
        let row = model::posteriors(x, params, discs)?;
        for (k, &v) in row.iter().enumerate() {
            resp.set(i, k, v);
        }
    }
    Ok(resp)
}

/// Per-mode Gram matrices `sum_i X_i(m) X_i(m)^T`; they depend only on the
/// data, so fits compute them once and reuse them every iteration.
pub(crate) fn mode_grams(data: &[Tensor]) -> Result<Vec<Matrix>> {
    let dims = data[0].dims().to_vec();
    let mut grams: Vec<Matrix> = dims.iter().map(|&pm| Matrix::zeros(pm, pm)).collect();
    for x in data {
        if x.dims() != dims {
            return Err(Error::DimMismatch(format!(
                "observation shape {:?} differs from {:?}",
                x.dims(),
                dims
            )));
        }
        for (m, gram) in grams.iter_mut().enumerate() {
            let mat = x.matricize(m)?;
            accumulate_lower_syrk(gram, &mat, 1.0);
        }
    }
    for gram in &mut grams {
        mirror_lower(gram);
    }
    Ok(grams)
}

/// `g += w * m m^T`, lower triangle only.
pub(crate) fn accumulate_lower_syrk(g: &mut Matrix, m: &Matrix, w: f64) {
    let pm = m.rows();
    let q = m.cols();
    let gd = g.data_mut();
    for c in 0..q {
        let col = &m.data()[c * pm..(c + 1) * pm];
        for a in 0..pm {
            let f = w * col[a];
            if f == 0.0 {
                continue;
            }
            let gcol = &mut gd[a * pm..(a + 1) * pm];
            for bidx in a..pm {
                gcol[bidx] += f * col[bidx];
            }
        }
    }
}

pub(crate) fn mirror_lower(g: &mut Matrix) {
    let n = g.rows();
    for a in 0..n {
        for bidx in (a + 1)..n {
            let v = g.get(bidx, a);
            g.set(a, bidx, v);
        }
    }
}

/// Weighted-moment M-step: mixture weights and means are responsibility
/// averages; the shared per-mode factors pool mode-wise scatter across
/// clusters and are then rescaled to the identifiability convention, with
/// the overall variance pinned by the first coordinate's weighted moment.
pub fn mstep(data: &[Tensor], resp: &Matrix) -> Result<TnmmParams> {
    let grams = mode_grams(data)?;
    mstep_with_grams(data, resp, &grams)
}

pub(crate) fn mstep_with_grams(
    data: &[Tensor],
    resp: &Matrix,
    grams: &[Matrix],
) -> Result<TnmmParams> {
    if data.is_empty() {
        return Err(Error::InvalidParams("empty dataset".into()));
    }
    let n = data.len();
    if resp.rows() != n || resp.cols() == 0 {
        return Err(Error::DimMismatch(format!(
            "responsibilities are {}x{}, expected {} rows",
            resp.rows(),
            resp.cols(),
            n
        )));
    }
    let kc = resp.cols();
    let dims = data[0].dims().to_vec();

    let mut weights = vec![0.0f64; kc];
    for k in 0..kc {
        let mut w = 0.0;
        for i in 0..n {
            w += resp.get(i, k);
        }
        if w < 1.0 {
            return Err(Error::DegenerateCluster { cluster: k, weight: w });
        }
        weights[k] = w;
    }
    let pis: Vec<f64> = weights.iter().map(|w| w / n as f64).collect();

    let mut mus: Vec<Tensor> = Vec::with_capacity(kc);
    for k in 0..kc {
        let mut acc = Tensor::zeros(&dims)?;
        for (i, x) in data.iter().enumerate() {
            let w = resp.get(i, k);
            if w != 0.0 {
                acc.add_scaled(x, w)?;
            }
        }
        acc.scale_mut(1.0 / weights[k]);
        mus.push(acc);
    }

    // Pooled scatter via sum_i X(m) X(m)^T - sum_k w_k mu_k(m) mu_k(m)^T,
    // exact because each mu_k is the weighted mean of the same weights.
    let p: usize = dims.iter().product();
    let mut sigmas_pooled = Vec::with_capacity(dims.len());
    for (m, &pm) in dims.iter().enumerate() {
        let q = (p / pm) as f64;
        let mut s = grams[m].clone();
        for k in 0..kc {
            let mk = mus[k].matricize(m)?;
            accumulate_lower_syrk(&mut s, &mk, -weights[k]);
        }
        mirror_lower(&mut s);
        s.scale_mut(1.0 / (n as f64 * q));
        s.symmetrize();
        if min_eigenvalue(&s)? < 1e-8 {
            s.add_scaled_identity(1e-8);
        }
        sigmas_pooled.push(s);
    }

    // Overall variance from the first coordinate's weighted second moment.
    let mut var11 = 0.0;
    for (i, x) in data.iter().enumerate() {
        let x0 = x.data()[0];
        for k in 0..kc {
            let d = x0 - mus[k].data()[0];
            var11 += resp.get(i, k) * d * d;
        }
    }
    var11 /= n as f64;

    let mut sigmas = Vec::with_capacity(dims.len());
    for (m, pooled) in sigmas_pooled.into_iter().enumerate() {
        let lead = pooled.get(0, 0);
        if !(lead > 0.0) {
            return Err(Error::NotSpd(format!(
                "pooled mode-{m} scatter has leading entry {lead:.3e}"
            )));
        }
        let mut s = pooled;
        if m == 0 {
            let f = var11 / lead;
            s.scale_mut(f);
        } else {
            for v in s.data_mut() {
                *v /= lead;
            }
            s.set(0, 0, 1.0);
        }
        sigmas.push(s);
    }

    Ok(TnmmParams { pis, mus, sigmas })
}

fn next_lambda(mode: &LambdaMode, t: usize, current: f64, p: usize, n: usize) -> f64 {
    match mode {
        LambdaMode::Fixed { lambda } => *lambda,
        LambdaMode::Schedule { kappa, c_lambda, .. } => {
            let floor = c_lambda * ((p as f64).ln() / n as f64).sqrt();
            let geom = (1.0 - kappa.powi(t as i32 + 1)) / (1.0 - kappa);
            kappa * current + geom * floor
        }
    }
}

/// Runs the doubly-enhanced EM from a given initial parameter set.
///
/// Stops once the summed squared Frobenius shift of the means falls to
/// `mean_shift_tol` or `max_iters` iterations have run. The result carries
/// the last E-step's discriminants and responsibilities together with the
/// last M-step's parameters.
pub fn fit(
    data: &[Tensor],
    k: usize,
    config: &DeemConfig,
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
    let grams = mode_grams(data)?;
    let n = data.len();
    let p = init.p();

    let mut params = init.clone();
    let mut discs: Option<DiscriminantSet> = None;
    let mut resp = Matrix::zeros(n, k);
    let mut lambda_cur = match &config.lambda {
        LambdaMode::Fixed { lambda } => *lambda,
        LambdaMode::Schedule { lambda0, .. } => *lambda0,
    };
    let mut iters = 0;
    for t in 0..config.max_iters {
        lambda_cur = next_lambda(&config.lambda, t, lambda_cur, p, n);
        let solve = estep_solve_B(&params, lambda_cur, discs.as_ref(), config)?;
        resp = estep_weights(data, &params, &solve.discs)?;
        discs = Some(solve.discs);
        let new_params = mstep_with_grams(data, &resp, &grams)?;
        let mut shift = 0.0;
        for k_i in 0..k {
            shift += new_params.mus[k_i]
                .sub(&params.mus[k_i])?
                .frobenius_norm()
                .powi(2);
        }
        params = new_params;
        iters = t + 1;
        if shift <= config.mean_shift_tol {
            break;
        }
    }

    let discs = discs.expect("at least one iteration ran");
    let support = discs.support();
    let bic = bic_value(data, &params, support.len())?;
    let labels = hard_labels(&resp);
    Ok(FitResult { params, discs, responsibilities: resp, labels, iters, bic, support })
}

pub(crate) fn hard_labels(resp: &Matrix) -> Vec<usize> {
    let mut labels = Vec::with_capacity(resp.rows());
    for i in 0..resp.rows() {
        let mut best = 0;
        for k in 1..resp.cols() {
            if resp.get(i, k) > resp.get(i, best) {
                best = k;
            }
        }
        labels.push(best);
    }
    labels
}

pub(crate) fn bic_value(data: &[Tensor], params: &TnmmParams, support_len: usize) -> Result<f64> {
    let ll = model::mixture_loglik(data, params)?;
    Ok(-2.0 * ll + (data.len() as f64).ln() * support_len as f64)
}

/// Bayesian information criterion of a fit on its data: twice the negative
/// mixture log-likelihood plus `log n` per selected coordinate.
pub fn bic(data: &[Tensor], fit: &FitResult) -> Result<f64> {
    bic_value(data, &fit.params, fit.support.len())
}

/// Penalty grid for [`tune`]: twenty log-spaced levels descending from the
/// smallest level that zeroes every coordinate group at the initializer down
/// to one hundredth of it.
pub fn default_lambda_grid(init: &TnmmParams) -> Vec<f64> {
    let p = init.p();
    let mut lambda_max = 0.0f64;
    for j in 0..p {
        let mut norm2 = 0.0;
        for k in 1..init.k() {
            let d = init.mus[k].data()[j] - init.mus[0].data()[j];
            norm2 += d * d;
        }
        lambda_max = lambda_max.max(norm2.sqrt());
    }
    lambda_max *= 2.0;
    if lambda_max == 0.0 {
        return vec![0.0];
    }
    (0..20)
        .map(|i| lambda_max * 100f64.powf(-(i as f64) / 19.0))
        .collect()
}

/// One row of the tuning table: the level, and either its score or why the
/// fit at that level failed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    pub fit: FitResult,
    pub lambda: f64,
    pub table: Vec<LambdaScore>,
}

/// Fits once per grid level and keeps the smallest BIC; exact ties go to the
/// smaller level (the denser model). Per-level failures are recorded in the
/// table and skipped; only a grid with no viable level is an error.
pub fn tune(
    data: &[Tensor],
    k: usize,
    lambda_grid: &[f64],
    config: &DeemConfig,
    init: &TnmmParams,
) -> Result<TuneResult> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    let mut table = Vec::with_capacity(lambda_grid.len());
    let mut best: Option<(f64, f64, FitResult)> = None;
    let mut last_err = String::new();
    for &lambda in lambda_grid {
        let mut cfg = config.clone();
        cfg.lambda = LambdaMode::Fixed { lambda };
        match fit(data, k, &cfg, init) {
            Ok(res) if res.bic.is_finite() => {
                let score = res.bic;
                table.push(LambdaScore { lambda, bic: Some(score), error: None });
                let better = match &best {
                    None => true,
                    Some((bb, bl, _)) => score < *bb || (score == *bb && lambda < *bl),
                };
                if better {
                    best = Some((score, lambda, res));
                }
            }
            Ok(res) => {
                let msg = format!("non-finite BIC {}", res.bic);
                last_err = msg.clone();
                table.push(LambdaScore { lambda, bic: None, error: Some(msg) });
            }
            Err(e) => {
                let msg = e.to_string();
                last_err = msg.clone();
                table.push(LambdaScore { lambda, bic: None, error: Some(msg) });
            }
        }
    }
    match best {
        Some((_, lambda, fit)) => Ok(TuneResult { fit, lambda, table }),
        None => Err(Error::GridExhausted(last_err)),
    }
}

/// Tuning table for one candidate cluster count inside [`select_k`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub lambda: Option<f64>,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SelectKResult {
    pub k: usize,
    pub lambda: f64,
    pub fit: FitResult,
    pub scores: Vec<KScore>,
}

/// Joint selection of the cluster count and penalty level by smallest BIC.
/// Every candidate count gets its own k-means initializer (seeded from the
/// config) and its own tuning sweep; `lambda_grid = None` derives the
/// default grid from each initializer. Exact ties prefer the smaller count.
pub fn select_k(
    data: &[Tensor],
    k_grid: &[usize],
    lambda_grid: Option<&[f64]>,
    config: &DeemConfig,
) -> Result<SelectKResult> {
    if k_grid.is_empty() {
        return Err(Error::InvalidConfig("k grid is empty".into()));
    }
    let mut scores = Vec::with_capacity(k_grid.len());
    let mut best: Option<(f64, usize, f64, FitResult)> = None;
    let mut last_err = String::new();
    for &k in k_grid {
        let attempt = (|| -> Result<TuneResult> {
            let km = KmeansConfig { seed: config.rng_seed, ..KmeansConfig::default() };
            let labels = init::kmeans_labels(data, k, &km)?;
            let start = init::init_params(data, &labels, k)?;
            let grid_owned;
            let grid = match lambda_grid {
                Some(g) => g,
                None => {
                    grid_owned = default_lambda_grid(&start);
                    &grid_owned
                }
            };
            tune(data, k, grid, config, &start)
        })();
        match attempt {
            Ok(t) => {
                scores.push(KScore {
                    k,
                    lambda: Some(t.lambda),
                    bic: Some(t.fit.bic),
                    error: None,
                });
                let score = t.fit.bic;
                let better = match &best {
                    None => true,
                    Some((bb, bk, _, _)) => score < *bb || (score == *bb && k < *bk),
                };
                if better {
                    best = Some((score, k, t.lambda, t.fit));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                last_err = msg.clone();
                scores.push(KScore { k, lambda: None, bic: None, error: Some(msg) });
            }
        }
    }
    match best {
        Some((_, k, lambda, fit)) => Ok(SelectKResult { k, lambda, fit, scores }),
        None => Err(Error::GridExhausted(last_err)),
    }
}
