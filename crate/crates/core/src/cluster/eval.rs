//! Partition quality: travel time to region centers and label agreement.

use serde::{Deserialize, Serialize};

use super::{ClusterError, PartitionResult};
use crate::netgraph::DistanceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEvaluation {
    /// Mean travel time (s) from each member link to its region center.
    pub region_means: Vec<f64>,
    /// Mean over all links.
    pub overall_mean: f64,
    /// Population standard deviation of `region_means`.
    pub region_std: f64,
}

pub fn evaluate_partition(
    p: &PartitionResult,
    d: &DistanceMatrix,
) -> Result<PartitionEvaluation, ClusterError> {
    if p.link_region.len() != d.len() {
        return Err(ClusterError::Coverage {
            expected: d.len(),
            got: p.link_region.len(),
        });
    }
    let k = p.k();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (link, &r) in p.link_region.iter().enumerate() {
        sums[r] += d.get(link, p.region_center_link[r]);
        counts[r] += 1;
    }
    let region_means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let overall_mean = sums.iter().sum::<f64>() / d.len() as f64;
    let mu = region_means.iter().sum::<f64>() / k as f64;
    let region_std =
        (region_means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / k as f64).sqrt();
    Ok(PartitionEvaluation {
        region_means,
        overall_mean,
        region_std,
    })
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| pairs(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = pairs(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
