//! Demand and empty-seat distributions over origin-destination region pairs.
//!
//! Both are multinomials on the `K × K` grid of ordered region pairs,
//! flattened as `origin * K + destination`. The fleet's empty-seat
//! distribution is pushed toward the demand distribution through a KL
//! penalty whose log term is linearized per vehicle.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::cluster::PartitionResult;
use crate::netgraph::LinkId;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("no trips to estimate demand from")]
    NoTrips,
    #[error("expected {expected} probabilities for K = {k}, got {got}")]
    Length { k: usize, expected: usize, got: usize },
    #[error("probability at index {index} is {value}")]
    Invalid { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("region {region} out of range for K = {k}")]
    RegionOutOfRange { region: usize, k: usize },
    #[error("link {link} is not covered by the partition")]
    UnknownLink { link: LinkId },
    #[error("fleet has no empty seats; the space distribution is undefined")]
    ZeroSpace,
    #[error("demand file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const SUM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ODDistribution {
    k: usize,
    prob: Vec<f64>,
}

impl ODDistribution {
    pub fn new(k: usize, prob: Vec<f64>) -> Result<Self, DemandError> {
        if prob.len() != k * k {
            return Err(DemandError::Length {
                k,
                expected: k * k,
                got: prob.len(),
            });
        }
        if let Some((index, &value)) = prob
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(DemandError::Invalid { index, value });
        }
        let sum: f64 = prob.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DemandError::NotNormalized { sum });
        }
        Ok(Self { k, prob })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(k: usize, weights: Vec<f64>) -> Result<Self, DemandError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(DemandError::NotNormalized { sum: total });
        }
        Self::new(k, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        let n = k * k;
        Self {
            k,
            prob: vec![1.0 / n as f64; n],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn probs(&self) -> &[f64] {
        &self.prob
    }

    pub fn pair_index(&self, origin: usize, destination: usize) -> usize {
        origin * self.k + destination
    }

    pub fn get(&self, pair: usize) -> f64 {
        self.prob[pair]
    }

    pub fn od(&self, origin: usize, destination: usize) -> f64 {
        self.prob[self.pair_index(origin, destination)]
    }

    /// Writes `origin destination probability` lines for non-zero pairs.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, &p) in self.prob.iter().enumerate() {
            if p > 0.0 {
                writeln!(out, "{} {} {p:e}", i / self.k, i % self.k)?;
            }
        }
        Ok(())
    }
}

/// Reads `origin destination probability` lines; unlisted pairs are zero.
pub fn read_demand(reader: impl BufRead, k: usize) -> Result<ODDistribution, DemandError> {
    let mut prob = vec![0.0; k * k];
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| DemandError::Parse { line: idx + 1, msg };
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", f.len())));
        }
        let o: usize = f[0].parse().map_err(|e| err(format!("origin: {e}")))?;
        let d: usize = f[1].parse().map_err(|e| err(format!("destination: {e}")))?;
        let p: f64 = f[2].parse().map_err(|e| err(format!("probability: {e}")))?;
        for r in [o, d] {
            if r >= k {
                return Err(DemandError::RegionOutOfRange { region: r, k });
            }
        }
        prob[o * k + d] += p;
    }
    ODDistribution::new(k, prob)
}

/// Maximum-likelihood OD distribution from trip endpoints.
pub fn estimate_demand(
    trips: &[(LinkId, LinkId)],
    partition: &PartitionResult,
) -> Result<ODDistribution, DemandError> {
    if trips.is_empty() {
        return Err(DemandError::NoTrips);
    }
    let k = partition.k();
    let mut counts = vec![0u64; k * k];
    for &(o, d) in trips {
        for link in [o, d] {
            if link >= partition.link_region.len() {
                return Err(DemandError::UnknownLink { link });
            }
        }
        counts[partition.region_of(o) * k + partition.region_of(d)] += 1;
    }
    let n = trips.len() as f64;
    ODDistribution::new(k, counts.into_iter().map(|c| c as f64 / n).collect())
}

/// One vehicle's contribution to the empty-seat distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VehicleSpace {
    pub space: u32,
    /// OD pair the vehicle is travelling between; `None` when idle.
    pub od_pair: Option<usize>,
    pub region: usize,
}

impl VehicleSpace {
    /// Idle vehicles count toward their own region's self pair.
    pub fn effective_pair(&self, k: usize) -> usize {
        self.od_pair.unwrap_or(self.region * k + self.region)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FleetSpaceSnapshot {
    pub k: usize,
    pub vehicles: Vec<VehicleSpace>,
}

impl FleetSpaceSnapshot {
    fn pair_space(&self) -> Vec<u64> {
        let mut space = vec![0u64; self.k * self.k];
        for v in &self.vehicles {
            space[v.effective_pair(self.k)] += u64::from(v.space);
        }
        space
    }
}

pub fn vehicle_space_distribution(fleet: &FleetSpaceSnapshot) -> Result<ODDistribution, DemandError> {
    let space = fleet.pair_space();
    let total: u64 = space.iter().sum();
    if total == 0 {
        return Err(DemandError::ZeroSpace);
    }
    ODDistribution::new(
        fleet.k,
        space.into_iter().map(|s| s as f64 / total as f64).collect(),
    )
}

/// `Σ q_i ln(q_i / p_i)` with `0 ln 0 = 0`; `+∞` where `q_i > 0 = p_i`.
pub fn kl_divergence(q: &ODDistribution, p: &ODDistribution) -> f64 {
    assert_eq!(q.k, p.k, "distributions over different region counts");
    let mut kl = 0.0;
    for (&qi, &pi) in q.prob.iter().zip(&p.prob) {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return f64::INFINITY;
        }
        kl += qi * (qi / pi).ln();
    }
    kl.max(0.0)
}

/// `q_pair · ln s`, with full vehicles (`s = 0`) contributing nothing.
pub fn regularizer_coefficient(q: &ODDistribution, od_pair: usize, space: u32) -> f64 {
    if space <= 1 {
        return 0.0;
    }
    q.get(od_pair) * f64::from(space).ln()
}

/// Linearized space term `−Σ_j q_{pair(j)} ln s_j` over vehicles with room.
pub fn linearized_space_term(q: &ODDistribution, fleet: &FleetSpaceSnapshot) -> f64 {
    -fleet
        .vehicles
        .iter()
        .map(|v| regularizer_coefficient(q, v.effective_pair(fleet.k), v.space))
        .sum::<f64>()
}

/// Exact space term `−Σ_i q_i ln(Σ_j s_j δ_ij)` over pairs that have room.
pub fn exact_space_term(q: &ODDistribution, fleet: &FleetSpaceSnapshot) -> f64 {
    -fleet
        .pair_space()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(i, &s)| q.get(i) * (s as f64).ln())
        .sum::<f64>()
}
