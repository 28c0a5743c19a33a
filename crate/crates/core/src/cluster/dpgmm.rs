//! Dirichlet process Gaussian mixture with collapsed Gibbs sampling.
//!
//! Component means and precisions carry a Gaussian-Wishart prior
//! `μ | Λ ~ N(m₀, (β₀Λ)⁻¹)`, `Λ ~ W(W₀, ν₀)` and are integrated out, so each
//! Gibbs update only resamples one point's component label from
//!
//! ```text
//! p(c_i = k | c_-i, x) ∝ N_-i,k / (N + α₀ − 1) · t_k(x_i)       (existing k)
//!                      ∝ α₀     / (N + α₀ − 1) · t_prior(x_i)    (new component)
//! ```
//!
//! where `t` is the multivariate Student-t posterior predictive. Data are
//! shifted by `m₀` internally so the prior mean is the origin.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{centroids, ClusterError, Clustering};
use crate::embed::Embedding;

/// Prior component precision relative to the data precision: components are
/// expected to spread about a fifth of the data's standard deviation.
pub const PRIOR_PRECISION_RATIO: f64 = 25.0;

/// Concentration plus Gaussian-Wishart prior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DpHyperparams {
    pub alpha0: f64,
    pub mean0: Vec<f64>,
    pub beta0: f64,
    /// Wishart scale matrix `W₀` (symmetric positive definite).
    pub scale0: DMatrix<f64>,
    /// Wishart degrees of freedom `ν₀ > m − 1`.
    pub dof0: f64,
}

impl DpHyperparams {
    /// Weakly informative defaults scaled to the data: `α₀ = 1`, `m₀` the
    /// data mean, `β₀ = 0.01`, `ν₀ = m + 2` and `W₀ = (ν₀ Σ / r)⁻¹` with `Σ`
    /// the data covariance, so the prior mean precision is `r Σ⁻¹` for
    /// `r = PRIOR_PRECISION_RATIO` in every dimension.
    pub fn from_data(data: &Embedding) -> Self {
        let (n, m) = (data.len(), data.dim());
        let mut mean = vec![0.0; m];
        for p in data.points() {
            for (a, v) in mean.iter_mut().zip(p) {
                *a += v / n.max(1) as f64;
            }
        }
        let mut cov = DMatrix::zeros(m, m);
        for p in data.points() {
            let y = DVector::from_iterator(m, p.iter().zip(&mean).map(|(v, mu)| v - mu));
            cov.ger(1.0 / n.max(1) as f64, &y, &y, 1.0);
        }
        // Identical or collinear points leave the covariance singular.
        let jitter = (1e-6 * cov.trace() / m.max(1) as f64).max(1e-9);
        for i in 0..m {
            cov[(i, i)] += jitter;
        }
        let dof0 = m as f64 + 2.0;
        let scaled = cov * (dof0 / PRIOR_PRECISION_RATIO);
        let scale0 = scaled
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::identity(m, m));
        Self {
            alpha0: 1.0,
            mean0: mean,
            beta0: 0.01,
            scale0,
            dof0,
        }
    }

    fn validate(&self, m: usize) -> Result<(), ClusterError> {
        let bad = |s: String| Err(ClusterError::Hyperparameter(s));
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return bad(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return bad(format!("beta0 must be positive, got {}", self.beta0));
        }
        if self.mean0.len() != m {
            return bad(format!("mean0 has length {}, data dimension is {m}", self.mean0.len()));
        }
        if self.scale0.shape() != (m, m) {
            return bad(format!("scale0 must be {m}x{m}"));
        }
        if (&self.scale0 - self.scale0.transpose()).abs().max() > 1e-9 * self.scale0.abs().max() {
            return bad("scale0 must be symmetric".into());
        }
        if self.dof0 <= m as f64 - 1.0 {
            return bad(format!("dof0 must exceed {}, got {}", m as f64 - 1.0, self.dof0));
        }
        Ok(())
    }
}

struct Prior {
    dim: usize,
    alpha: f64,
    beta0: f64,
    dof0: f64,
    /// `W₀⁻¹`.
    psi0: DMatrix<f64>,
    ln_det_psi0: f64,
}

impl Prior {
    fn new(h: &DpHyperparams) -> Result<Self, ClusterError> {
        let dim = h.mean0.len();
        let chol = Cholesky::new(h.scale0.clone()).ok_or_else(|| {
            ClusterError::Hyperparameter("scale0 must be positive definite".into())
        })?;
        let psi0 = chol.inverse();
        let ln_det_psi0 = ln_det(&psi0).ok_or_else(|| {
            ClusterError::Hyperparameter("scale0 inverse is not positive definite".into())
        })?;
        Ok(Self {
            dim,
            alpha: h.alpha0,
            beta0: h.beta0,
            dof0: h.dof0,
            psi0,
            ln_det_psi0,
        })
    }

    /// `Ψ_N = Ψ₀ + Σ y yᵀ − s sᵀ / β_N` in prior-centered coordinates.
    fn posterior_scale(&self, c: &Component) -> DMatrix<f64> {
        let beta_n = self.beta0 + c.count as f64;
        let mut psi = &self.psi0 + &c.outer;
        psi.ger(-1.0 / beta_n, &c.sum, &c.sum, 1.0);
        psi
    }

    fn predictive(&self, c: &Component) -> Result<Predictive, ClusterError> {
        let d = self.dim as f64;
        let n = c.count as f64;
        let beta_n = self.beta0 + n;
        let dof = self.dof0 + n - d + 1.0;
        let scale = self.posterior_scale(c) * ((beta_n + 1.0) / (beta_n * dof));
        let chol = Cholesky::new(scale)
            .ok_or(ClusterError::NotPositiveDefinite { count: c.count })?
            .unpack();
        let half_ln_det: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
        let log_norm = ln_gamma((dof + d) / 2.0)
            - ln_gamma(dof / 2.0)
            - 0.5 * d * (dof * std::f64::consts::PI).ln()
            - half_ln_det;
        Ok(Predictive {
            loc: &c.sum / beta_n,
            chol,
            log_norm,
            dof,
        })
    }

    fn log_marginal(&self, c: &Component) -> Result<f64, ClusterError> {
        let d = self.dim as f64;
        let n = c.count as f64;
        let beta_n = self.beta0 + n;
        let dof_n = self.dof0 + n;
        let ln_det_n = ln_det(&self.posterior_scale(c))
            .ok_or(ClusterError::NotPositiveDefinite { count: c.count })?;
        Ok(-0.5 * n * d * std::f64::consts::PI.ln()
            + ln_multi_gamma(self.dim, dof_n / 2.0)
            - ln_multi_gamma(self.dim, self.dof0 / 2.0)
            + 0.5 * self.dof0 * self.ln_det_psi0
            - 0.5 * dof_n * ln_det_n
            + 0.5 * d * (self.beta0.ln() - beta_n.ln()))
    }
}

fn ln_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(m.clone())?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn ln_multi_gamma(dim: usize, a: f64) -> f64 {
    let d = dim as f64;
    0.25 * d * (d - 1.0) * std::f64::consts::PI.ln()
        + (1..=dim).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

#[derive(Clone)]
struct Predictive {
    loc: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
    dof: f64,
}

impl Predictive {
    fn log_density(&self, y: &DVector<f64>) -> f64 {
        let d = y.len() as f64;
        let diff = y - &self.loc;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * (self.dof + d) * (1.0 + z.norm_squared() / self.dof).ln()
    }
}

#[derive(Clone)]
struct Component {
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    predictive: Option<Predictive>,
}

impl Component {
    fn empty(dim: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(dim),
            outer: DMatrix::zeros(dim, dim),
            predictive: None,
        }
    }

    fn add(&mut self, y: &DVector<f64>) {
        self.count += 1;
        self.sum += y;
        self.outer.ger(1.0, y, y, 1.0);
        self.predictive = None;
    }

    fn remove(&mut self, y: &DVector<f64>) {
        self.count -= 1;
        self.sum -= y;
        self.outer.ger(-1.0, y, y, 1.0);
        self.predictive = None;
    }
}

/// Sampler state: labels plus per-component sufficient statistics.
pub struct DpgmmState {
    prior: Prior,
    points: Vec<DVector<f64>>,
    assignments: Vec<usize>,
    components: Vec<Component>,
    prior_predictive: Predictive,
    use_likelihood: bool,
}

const UNASSIGNED: usize = usize::MAX;

impl DpgmmState {
    /// Seeds the chain by adding points one at a time, each drawn from its
    /// conditional given the points placed before it.
    pub fn new_sequential(
        data: &Embedding,
        h: &DpHyperparams,
        rng: &mut impl Rng,
    ) -> Result<Self, ClusterError> {
        let mut state = Self::unassigned(data, h)?;
        for i in 0..state.points.len() {
            let k = state.sample_label(i, rng)?;
            state.insert(i, k);
        }
        Ok(state)
    }

    /// Starts from the given labels (any non-negative ids).
    pub fn with_assignments(
        data: &Embedding,
        h: &DpHyperparams,
        labels: &[usize],
    ) -> Result<Self, ClusterError> {
        let mut state = Self::unassigned(data, h)?;
        if labels.len() != state.points.len() {
            return Err(ClusterError::Coverage {
                expected: state.points.len(),
                got: labels.len(),
            });
        }
        let canon = canonical_labels(labels);
        for (i, &k) in canon.iter().enumerate() {
            state.insert(i, k);
        }
        Ok(state)
    }

    fn unassigned(data: &Embedding, h: &DpHyperparams) -> Result<Self, ClusterError> {
        if data.is_empty() {
            return Err(ClusterError::Empty);
        }
        h.validate(data.dim())?;
        let prior = Prior::new(h)?;
        let points = data
            .points()
            .map(|p| DVector::from_iterator(p.len(), p.iter().zip(&h.mean0).map(|(v, m)| v - m)))
            .collect();
        let prior_predictive = prior.predictive(&Component::empty(data.dim()))?;
        Ok(Self {
            prior,
            points,
            assignments: vec![UNASSIGNED; data.len()],
            components: Vec::new(),
            prior_predictive,
            use_likelihood: true,
        })
    }

    /// Replaces every predictive density by a constant, leaving the bare
    /// Chinese-restaurant prior. Used to check the sampler's prior dynamics.
    pub fn disable_likelihood(&mut self) {
        self.use_likelihood = false;
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn cluster_count(&self) -> usize {
        self.components.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.count).collect()
    }

    fn insert(&mut self, i: usize, k: usize) {
        if k == self.components.len() {
            self.components.push(Component::empty(self.prior.dim));
        }
        self.components[k].add(&self.points[i]);
        self.assignments[i] = k;
    }

    fn detach(&mut self, i: usize) {
        let k = self.assignments[i];
        self.components[k].remove(&self.points[i]);
        self.assignments[i] = UNASSIGNED;
        if self.components[k].count == 0 {
            let last = self.components.len() - 1;
            self.components.swap_remove(k);
            if k != last {
                for a in &mut self.assignments {
                    if *a == last {
                        *a = k;
                    }
                }
            }
        }
    }

    /// Normalized conditional over existing components then a new one, for
    /// a point that is currently detached.
    fn conditional(&mut self, i: usize) -> Result<Vec<f64>, ClusterError> {
        let n_others = self.assignments.iter().filter(|&&a| a != UNASSIGNED).count() as f64;
        let denom = (n_others + self.prior.alpha).ln();
        let y = &self.points[i];
        let mut logw = Vec::with_capacity(self.components.len() + 1);
        for c in &mut self.components {
            let lik = if self.use_likelihood {
                if c.predictive.is_none() {
                    c.predictive = Some(self.prior.predictive(c)?);
                }
                c.predictive.as_ref().expect("just filled").log_density(y)
            } else {
                0.0
            };
            logw.push((c.count as f64).ln() - denom + lik);
        }
        let lik_new = if self.use_likelihood {
            self.prior_predictive.log_density(y)
        } else {
            0.0
        };
        logw.push(self.prior.alpha.ln() - denom + lik_new);
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logw.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(probs)
    }

    fn sample_label(&mut self, i: usize, rng: &mut impl Rng) -> Result<usize, ClusterError> {
        let probs = self.conditional(i)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(k);
            }
        }
        Ok(probs.len() - 1)
    }

    /// Conditional label probabilities for point `i` given all others; the
    /// last entry is the new-component probability. The state is unchanged.
    pub fn conditional_probabilities(&mut self, i: usize) -> Result<Vec<f64>, ClusterError> {
        let members: Vec<usize> = {
            let k = self.assignments[i];
            (0..self.points.len())
                .filter(|&j| self.assignments[j] == k)
                .collect()
        };
        let labels_before = self.assignments.clone();
        self.detach(i);
        let probs = self.conditional(i);
        // Restore the exact labelling the state had before.
        if members.len() == 1 {
            *self = Self::rebuild(self, &labels_before);
        } else {
            let k = self.assignments[members.iter().copied().find(|&j| j != i).expect("other member")];
            self.insert(i, k);
        }
        probs
    }

    fn rebuild(state: &Self, labels: &[usize]) -> Self {
        let mut components = vec![Component::empty(state.prior.dim); labels.iter().max().map_or(0, |m| m + 1)];
        for (y, &k) in state.points.iter().zip(labels) {
            components[k].add(y);
        }
        Self {
            prior: Prior {
                dim: state.prior.dim,
                alpha: state.prior.alpha,
                beta0: state.prior.beta0,
                dof0: state.prior.dof0,
                psi0: state.prior.psi0.clone(),
                ln_det_psi0: state.prior.ln_det_psi0,
            },
            points: state.points.clone(),
            assignments: labels.to_vec(),
            components,
            prior_predictive: state.prior_predictive.clone(),
            use_likelihood: state.use_likelihood,
        }
    }

    /// One systematic-scan sweep over all points in index order.
    pub fn sweep(&mut self, rng: &mut impl Rng) -> Result<(), ClusterError> {
        for i in 0..self.points.len() {
            self.detach(i);
            let k = self.sample_label(i, rng)?;
            self.insert(i, k);
        }
        Ok(())
    }

    /// `log p(c) + Σ_k log p(x_k)` for the current labelling.
    pub fn log_joint(&self) -> Result<f64, ClusterError> {
        let sizes = self.cluster_sizes();
        let mut total = log_crp_prior(&sizes, self.prior.alpha);
        if self.use_likelihood {
            for c in &self.components {
                total += self.prior.log_marginal(c)?;
            }
        }
        Ok(total)
    }

    /// Largest absolute difference between the maintained statistics and
    /// statistics recomputed from the labels.
    pub fn statistics_drift(&self) -> f64 {
        let mut fresh = vec![Component::empty(self.prior.dim); self.components.len()];
        for (y, &k) in self.points.iter().zip(&self.assignments) {
            fresh[k].add(y);
        }
        let mut drift: f64 = 0.0;
        for (a, b) in self.components.iter().zip(&fresh) {
            if a.count != b.count {
                return f64::INFINITY;
            }
            drift = drift
                .max((&a.sum - &b.sum).abs().max())
                .max((&a.outer - &b.outer).abs().max());
        }
        drift
    }
}

/// Log probability of a labelling with the given block sizes under a
/// Chinese restaurant process with concentration `alpha`.
pub fn log_crp_prior(sizes: &[usize], alpha: f64) -> f64 {
    let n: usize = sizes.iter().sum();
    sizes.len() as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n as f64)
        + sizes.iter().map(|&s| ln_gamma(s as f64)).sum::<f64>()
}

/// Log marginal likelihood of `data` as a single component under `h`.
pub fn log_marginal_likelihood(data: &Embedding, h: &DpHyperparams) -> Result<f64, ClusterError> {
    let state = DpgmmState::with_assignments(data, h, &vec![0; data.len()])?;
    state.prior.log_marginal(&state.components[0])
}

/// Relabels to first-appearance order: the first point is always label 0.
pub(crate) fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpgmmConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for DpgmmConfig {
    fn default() -> Self {
        Self {
            sweeps: 500,
            burn_in: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DpgmmFit {
    /// Post-burn-in sample with the highest joint density.
    pub clustering: Clustering,
    pub log_joint: f64,
    /// Component count after every sweep.
    pub k_trace: Vec<usize>,
}

pub fn fit_dpgmm(
    data: &Embedding,
    h: &DpHyperparams,
    config: DpgmmConfig,
) -> Result<DpgmmFit, ClusterError> {
    if config.sweeps <= config.burn_in {
        return Err(ClusterError::Schedule {
            sweeps: config.sweeps,
            burn_in: config.burn_in,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = DpgmmState::new_sequential(data, h, &mut rng)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut k_trace = Vec::with_capacity(config.sweeps);
    for sweep in 0..config.sweeps {
        state.sweep(&mut rng)?;
        k_trace.push(state.cluster_count());
        if sweep >= config.burn_in {
            let lj = state.log_joint()?;
            if best.as_ref().is_none_or(|(b, _)| lj > *b) {
                best = Some((lj, state.assignments().to_vec()));
            }
        }
    }
    let (log_joint, labels) = best.expect("at least one post-burn-in sweep");
    let labels = canonical_labels(&labels);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let means = centroids(data, &labels, k);
    Ok(DpgmmFit {
        clustering: Clustering { labels, means },
        log_joint,
        k_trace,
    })
}
