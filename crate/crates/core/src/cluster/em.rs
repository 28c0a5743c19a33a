//! Expectation-maximization for full-covariance Gaussian mixtures.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::kmeans::fit_kmeans;
use super::{ClusterError, Clustering};
use crate::embed::Embedding;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when the log-likelihood gain falls below this fraction of its
    /// magnitude.
    pub rel_tolerance: f64,
    /// Covariance condition number above which the fit is abandoned.
    pub max_condition: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tolerance: 1e-10,
            max_condition: 1e12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    /// Labels by maximum responsibility.
    pub clustering: Clustering,
    pub weights: Vec<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum EmOutcome {
    Fitted(GmmFit),
    /// A component covariance became singular or nearly so.
    IllConditioned {
        iteration: usize,
        component: usize,
        condition: f64,
    },
}

pub fn fit_em_gmm(data: &Embedding, k: usize, config: EmConfig) -> Result<EmOutcome, ClusterError> {
    let (n, d) = (data.len(), data.dim());
    let km = fit_kmeans(data, k, config.seed)?;
    let points: Vec<DVector<f64>> = data.points().map(|p| DVector::from_column_slice(p)).collect();

    let mut resp = DMatrix::zeros(n, k);
    for (i, &l) in km.clustering.labels.iter().enumerate() {
        resp[(i, l)] = 1.0;
    }
    let mut trace = Vec::new();
    let mut iteration = 0;
    loop {
        // M step.
        let mut weights = vec![0.0; k];
        let mut means = vec![DVector::zeros(d); k];
        let mut covs = vec![DMatrix::zeros(d, d); k];
        for c in 0..k {
            let nk: f64 = resp.column(c).sum();
            if nk <= 0.0 {
                return Ok(EmOutcome::IllConditioned {
                    iteration,
                    component: c,
                    condition: f64::INFINITY,
                });
            }
            weights[c] = nk / n as f64;
            for (i, x) in points.iter().enumerate() {
                means[c].axpy(resp[(i, c)] / nk, x, 1.0);
            }
            for (i, x) in points.iter().enumerate() {
                let y = x - &means[c];
                covs[c].ger(resp[(i, c)] / nk, &y, &y, 1.0);
            }
            let condition = condition_number(&covs[c]);
            if !(condition <= config.max_condition) {
                return Ok(EmOutcome::IllConditioned {
                    iteration,
                    component: c,
                    condition,
                });
            }
        }

        // E step.
        let mut factors = Vec::with_capacity(k);
        for (c, cov) in covs.iter().enumerate() {
            match Cholesky::new(cov.clone()) {
                Some(ch) => factors.push(ch.unpack()),
                None => {
                    return Ok(EmOutcome::IllConditioned {
                        iteration,
                        component: c,
                        condition: f64::INFINITY,
                    })
                }
            }
        }
        let mut ll = 0.0;
        for (i, x) in points.iter().enumerate() {
            let logp: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + log_gaussian(x, &means[c], &factors[c]))
                .collect();
            let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logp.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (logp[c] - lse).exp();
            }
        }
        trace.push(ll);
        iteration += 1;

        let converged = trace.len() >= 2 && {
            let prev = trace[trace.len() - 2];
            (ll - prev).abs() <= config.rel_tolerance * ll.abs().max(1.0)
        };
        if converged || iteration >= config.max_iterations {
            let labels: Vec<usize> = (0..n)
                .map(|i| {
                    let row = resp.row(i);
                    (0..k).fold(0, |best, c| if row[c] > row[best] { c } else { best })
                })
                .collect();
            return Ok(EmOutcome::Fitted(GmmFit {
                clustering: Clustering {
                    labels,
                    means: means.iter().map(|m| m.iter().copied().collect()).collect(),
                },
                weights,
                covariances: covs,
                log_likelihood_trace: trace,
            }));
        }
    }
}

fn condition_number(cov: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, chol: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let z = chol
        .solve_lower_triangular(&(x - mean))
        .expect("Cholesky factor has a positive diagonal");
    let half_ln_det: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - half_ln_det - 0.5 * z.norm_squared()
}
