//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{centroids, nearest, ClusterError, Clustering};
use crate::embed::{squared_distance, Embedding};

#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub clustering: Clustering,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

const MAX_ITERATIONS: usize = 1000;

pub fn fit_kmeans(data: &Embedding, k: usize, seed: u64) -> Result<KmeansFit, ClusterError> {
    let n = data.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = seed_plus_plus(data, k, &mut rng);
    let mut labels: Vec<usize> = data.points().map(|p| nearest(p, &means)).collect();
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        means = centroids(data, &labels, k);
        reseed_empty(data, &mut labels, &mut means, k);
        let next: Vec<usize> = data.points().map(|p| nearest(p, &means)).collect();
        trace.push(objective(data, &next, &means));
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KmeansFit {
        clustering: Clustering { labels, means },
        objective_trace: trace,
    })
}

fn seed_plus_plus(data: &Embedding, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut means = vec![data.point(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = data.points().map(|p| squared_distance(p, &means[0])).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&w| {
                    acc += w;
                    u < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let m = data.point(pick).to_vec();
        for (w, p) in d2.iter_mut().zip(data.points()) {
            *w = w.min(squared_distance(p, &m));
        }
        means.push(m);
    }
    means
}

/// Moves each empty cluster's center onto the point farthest from its
/// current center.
fn reseed_empty(data: &Embedding, labels: &mut [usize], means: &mut [Vec<f64>], k: usize) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..data.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = squared_distance(data.point(a), &means[labels[a]]);
                let db = squared_distance(data.point(b), &means[labels[b]]);
                da.total_cmp(&db)
            });
        if let Some(i) = far {
            counts[labels[i]] -= 1;
            counts[c] = 1;
            labels[i] = c;
            means[c] = data.point(i).to_vec();
        }
    }
}

fn objective(data: &Embedding, labels: &[usize], means: &[Vec<f64>]) -> f64 {
    data.points()
        .zip(labels)
        .map(|(p, &l)| squared_distance(p, &means[l]))
        .sum()
}
