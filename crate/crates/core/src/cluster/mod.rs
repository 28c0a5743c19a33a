//! Network partitioning by clustering link (or trip-endpoint) embeddings.
//!
//! The primary method is a Dirichlet process Gaussian mixture sampled with
//! collapsed Gibbs updates; k-means and EM Gaussian mixtures serve as
//! fixed-K baselines in either the embedded or the geometric space.

mod dpgmm;
mod em;
mod eval;
mod kmeans;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{squared_distance, Embedding};
use crate::netgraph::LinkId;

pub use dpgmm::{
    fit_dpgmm, log_crp_prior, log_marginal_likelihood, DpHyperparams, DpgmmConfig, DpgmmFit,
    DpgmmState, PRIOR_PRECISION_RATIO,
};
pub use em::{fit_em_gmm, EmConfig, EmOutcome, GmmFit};
pub use eval::{adjusted_rand_index, evaluate_partition, PartitionEvaluation};
pub use kmeans::{fit_kmeans, KmeansFit};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("no data points to cluster")]
    Empty,
    #[error("K = {k} is invalid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
    #[error("posterior scale matrix lost positive definiteness (cluster of {count} points)")]
    NotPositiveDefinite { count: usize },
    #[error("sweeps ({sweeps}) must exceed burn-in ({burn_in})")]
    Schedule { sweeps: usize, burn_in: usize },
    #[error("partition covers {got} links, expected {expected}")]
    Coverage { expected: usize, got: usize },
    #[error("partition file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hard cluster labels over a set of points together with component means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub means: Vec<Vec<f64>>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.means.len()
    }
}

/// Link-to-region map with one representative center link per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub link_region: Vec<usize>,
    pub region_center_link: Vec<LinkId>,
    /// Component means in the space the partition was built in.
    pub means: Vec<Vec<f64>>,
}

impl PartitionResult {
    pub fn k(&self) -> usize {
        self.region_center_link.len()
    }

    pub fn region_of(&self, link: LinkId) -> usize {
        self.link_region[link]
    }

    pub fn members(&self, region: usize) -> impl Iterator<Item = LinkId> + '_ {
        self.link_region
            .iter()
            .enumerate()
            .filter(move |(_, &r)| r == region)
            .map(|(l, _)| l)
    }

    /// Builds a partition from one label per link. Empty label ids are
    /// dropped and the rest renumbered in ascending order; means are member
    /// centroids and each center is the member nearest its centroid.
    pub fn from_labels(labels: &[usize], link_points: &Embedding) -> Self {
        assert_eq!(labels.len(), link_points.len(), "one label per link");
        let mut used: Vec<usize> = labels.to_vec();
        used.sort_unstable();
        used.dedup();
        let link_region: Vec<usize> = labels
            .iter()
            .map(|l| used.binary_search(l).expect("label present"))
            .collect();
        let k = used.len();
        let means = centroids(link_points, &link_region, k);
        Self::with_means(link_region, means, link_points)
    }

    /// Assigns every link to its nearest component mean, dropping
    /// components that attract no link.
    pub fn nearest_mean(link_points: &Embedding, means: &[Vec<f64>]) -> Self {
        let labels: Vec<usize> = link_points.points().map(|p| nearest(p, means)).collect();
        let mut used: Vec<usize> = labels.clone();
        used.sort_unstable();
        used.dedup();
        let link_region = labels
            .iter()
            .map(|l| used.binary_search(l).expect("label present"))
            .collect();
        let kept = used.iter().map(|&u| means[u].clone()).collect();
        Self::with_means(link_region, kept, link_points)
    }

    fn with_means(link_region: Vec<usize>, means: Vec<Vec<f64>>, link_points: &Embedding) -> Self {
        let k = means.len();
        let mut best: Vec<Option<(f64, LinkId)>> = vec![None; k];
        for (link, &region) in link_region.iter().enumerate() {
            let dist = squared_distance(link_points.point(link), &means[region]);
            match best[region] {
                Some((b, _)) if b <= dist => {}
                _ => best[region] = Some((dist, link)),
            }
        }
        let region_center_link = best
            .into_iter()
            .map(|b| b.expect("every region has a member").1)
            .collect();
        Self {
            link_region,
            region_center_link,
            means,
        }
    }

    /// Writes `link_id region_id` lines.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for (link, region) in self.link_region.iter().enumerate() {
            writeln!(out, "{link} {region}")?;
        }
        Ok(())
    }
}

/// Reads `link_id region_id` lines into a label vector indexed by link.
pub fn read_partition_labels(reader: impl BufRead) -> Result<Vec<usize>, ClusterError> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| ClusterError::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected `link_id region_id`, got {} fields", fields.len())));
        }
        let link: usize = fields[0].parse().map_err(|e| err(format!("link id: {e}")))?;
        let region: usize = fields[1].parse().map_err(|e| err(format!("region id: {e}")))?;
        pairs.push((link, region));
    }
    let n = pairs.len();
    let mut labels = vec![usize::MAX; n];
    for (link, region) in pairs {
        if link >= n || labels[link] != usize::MAX {
            return Err(ClusterError::Coverage { expected: n, got: link + 1 });
        }
        labels[link] = region;
    }
    Ok(labels)
}

pub(crate) fn nearest(p: &[f64], means: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, m) in means.iter().enumerate() {
        let d = squared_distance(p, m);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

pub(crate) fn centroids(points: &Embedding, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let m = points.dim();
    let mut sums = vec![vec![0.0; m]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.points().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_labels_compacts_and_centers() {
        let pts = Embedding::from_rows(&[[0.0], [1.0], [2.0], [10.0], [11.0]]);
        let p = PartitionResult::from_labels(&[4, 4, 4, 9, 9], &pts);
        assert_eq!(p.link_region, vec![0, 0, 0, 1, 1]);
        assert_eq!(p.k(), 2);
        assert_eq!(p.region_center_link, vec![1, 3]);
        for (r, &c) in p.region_center_link.iter().enumerate() {
            assert_eq!(p.region_of(c), r);
        }
    }

    #[test]
    fn nearest_mean_drops_unused() {
        let pts = Embedding::from_rows(&[[0.0], [1.0], [9.0]]);
        let means = vec![vec![0.5], vec![100.0], vec![8.0]];
        let p = PartitionResult::nearest_mean(&pts, &means);
        assert_eq!(p.k(), 2);
        assert_eq!(p.link_region, vec![0, 0, 1]);
        assert_eq!(p.means[1], vec![8.0]);
    }

    #[test]
    fn partition_file_round_trip() {
        let pts = Embedding::from_rows(&[[0.0], [1.0], [5.0]]);
        let p = PartitionResult::from_labels(&[0, 0, 1], &pts);
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0 0\n1 0\n2 1\n");
        assert_eq!(read_partition_labels(buf.as_slice()).unwrap(), p.link_region);
        assert!(read_partition_labels("0 0\n0 1\n".as_bytes()).is_err());
    }
}
