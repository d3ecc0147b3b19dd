//! K-means initialization for the mixture fits.
//!
//! Observations are vectorized and clustered with Lloyd's algorithm under
//! plus-plus seeding; the best of several restarts (by within-cluster sum of
//! squares) wins. `init_params` then turns hard labels into a first
//! parameter estimate by running the weighted-moment M-step with one-hot
//! responsibilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deem;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::TnmmParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iters: 100, seed: 0 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Plus-plus seeding: the first center is uniform, later ones are drawn with
/// probability proportional to squared distance from the nearest chosen
/// center, falling back to a uniform draw when every point already sits on
/// a center.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[chosen].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            let nd = sq_dist(p, centers.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize]) {
    for (l, p) in labels.iter_mut().zip(points) {
        let mut best = 0;
        let mut best_d = sq_dist(p, &centers[0]);
        for (c, center) in centers.iter().enumerate().skip(1) {
            let d = sq_dist(p, center);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *l = best;
    }
}

struct LloydRun {
    labels: Vec<usize>,
    wcss: f64,
    /// Objective after every assignment step; only tests consume it.
    #[allow(dead_code)]
    trace: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Result<LloydRun> {
    let n = points.len();
    let dim = points[0].len();
    let mut centers = seed_centers(points, k, rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    let mut wcss = f64::INFINITY;
    for _ in 0..max_iters {
        let prev = labels.clone();
        assign(points, &centers, &mut labels);

        // Repair empty clusters by stealing the point farthest from its
        // center before computing the objective.
        loop {
            let mut counts = vec![0usize; k];
            for &l in &labels {
                counts[l] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let mut far = None;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if counts[labels[i]] <= 1 {
                    continue;
                }
                let d = sq_dist(p, &centers[labels[i]]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            match far {
                Some(i) => {
                    labels[i] = empty;
                    centers[empty] = points[i].clone();
                }
                None => return Err(Error::EmptyCluster { k, n }),
            }
        }

        wcss = labels
            .iter()
            .zip(points)
            .map(|(&l, p)| sq_dist(p, &centers[l]))
            .sum();
        trace.push(wcss);
        if labels == prev {
            break;
        }
        let mut counts = vec![0usize; k];
        for c in centers.iter_mut() {
            for v in c.iter_mut() {
                *v = 0.0;
            }
        }
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (cv, pv) in centers[l].iter_mut().zip(p) {
                *cv += pv;
            }
        }
        for (c, &count) in centers.iter_mut().zip(&counts) {
            debug_assert!(count > 0);
            for v in c.iter_mut() {
                *v /= count as f64;
            }
        }
        debug_assert_eq!(centers[0].len(), dim);
    }
    Ok(LloydRun { labels, wcss, trace })
}

/// Clusters vectorized observations, returning one label per observation.
/// Restarts run serially on independent substreams of the seed; the run
/// with the smallest within-cluster sum of squares wins.
pub fn kmeans_labels(data: &[Tensor], k: usize, config: &KmeansConfig) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if config.restarts == 0 || config.max_iters == 0 {
        return Err(Error::InvalidConfig("restarts and max_iters must be at least 1".into()));
    }
    let n = data.len();
    if n < k {
        return Err(Error::EmptyCluster { k, n });
    }
    let dims = data[0].dims().to_vec();
    let mut points = Vec::with_capacity(n);
    for x in data {
        if x.dims() != dims {
            return Err(Error::DimMismatch(format!(
                "observation shape {:?} differs from {:?}",
                x.dims(),
                dims
            )));
        }
        points.push(x.vectorize());
    }
    let mut best: Option<LloydRun> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let run = lloyd(&points, k, config.max_iters, &mut rng)?;
        let better = match &best {
            None => true,
            Some(b) => run.wcss < b.wcss,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart").labels)
}

/// First parameter estimate from hard labels: the weighted-moment M-step
/// with one-hot responsibilities.
pub fn init_params(data: &[Tensor], labels: &[usize], k: usize) -> Result<TnmmParams> {
    if labels.len() != data.len() {
        return Err(Error::DimMismatch(format!(
            "{} labels for {} observations",
            labels.len(),
            data.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::InvalidParams(format!("label {l} out of range for k = {k}")));
        }
        counts[l] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::EmptyCluster { k, n: data.len() });
    }
    let mut resp = Matrix::zeros(data.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        resp.set(i, l, 1.0);
    }
    deem::mstep(data, &resp)
}
