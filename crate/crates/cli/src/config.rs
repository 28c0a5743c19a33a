//! Flat `key = value` run configuration shared by every subcommand.
//!
//! Values are TOML scalars or arrays; on the command line a bare word is
//! read as a string and lists may be written comma-separated
//! (`policies=baseline,regularized`). Sources apply in order: defaults,
//! config file, command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mobility_core::sim::Policy;
use serde::de::{DeserializeOwned, Deserializer};
use serde::{Deserialize, Serialize};

/// Marks an error caused by the user's input (exit code 1).
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user_error(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dpgmm,
    Kmeans,
    Emgmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Root seed; each component derives its own stream from it.
    pub seed: u64,

    /// Network file; when absent a grid is generated from the grid keys.
    pub network: Option<PathBuf>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub block_m: f64,
    pub speed_mps: f64,
    /// Perimeter speed; set to build a fast ring around a `speed_mps` core.
    pub ring_speed_mps: Option<f64>,
    pub lanes: u32,
    pub allow_u_turns: bool,
    /// Defaults to `<out_dir>/distances.bin`.
    pub distance_cache: Option<PathBuf>,

    pub dim: usize,
    #[serde(deserialize_with = "list")]
    pub sweep_dims: Vec<usize>,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    /// Defaults to `<out_dir>/embedding.txt`.
    pub embedding: Option<PathBuf>,

    pub method: Method,
    /// Region count for k-means and EM; DPGMM discovers its own.
    pub k: Option<usize>,
    pub sweeps: usize,
    pub burn_in: usize,
    pub alpha: f64,
    pub bench_seeds: usize,
    /// Score partitions by travel time to region centers.
    pub evaluate: bool,
    /// Defaults to `<out_dir>/partition.txt`.
    pub partition: Option<PathBuf>,

    /// Defaults to `<out_dir>/demand.txt`.
    pub demand: Option<PathBuf>,
    /// Request file to estimate the demand distribution from.
    pub demand_from: Option<PathBuf>,
    /// Zipf exponent over OD pairs for synthetic demand; 0 is uniform.
    pub demand_skew: f64,
    /// Also write a synthetic request file in `gen-demand`.
    pub gen_requests: bool,
    /// Request file to replay; synthetic Poisson arrivals when absent.
    pub requests: Option<PathBuf>,
    pub rate_per_epoch: f64,

    #[serde(deserialize_with = "list")]
    pub policies: Vec<Policy>,
    /// Replications per policy.
    pub runs: usize,
    pub epoch_s: f64,
    pub horizon_s: f64,
    pub fleet_size: usize,
    pub capacity: u32,
    pub max_wait_s: f64,
    pub max_delay_s: f64,
    pub w_r: f64,
    pub penalty: f64,
    pub sigma: f64,
    pub max_trip_customers: usize,
    pub max_trips_per_vehicle: usize,
    pub ilp_node_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = mobility_core::sim::SimConfig::default();
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            network: None,
            grid_rows: 6,
            grid_cols: 6,
            block_m: 100.0,
            speed_mps: 10.0,
            ring_speed_mps: None,
            lanes: 1,
            allow_u_turns: false,
            distance_cache: None,
            dim: 18,
            sweep_dims: Vec::new(),
            max_iterations: 2000,
            rel_tolerance: 1e-9,
            embedding: None,
            method: Method::Dpgmm,
            k: None,
            sweeps: 500,
            burn_in: 200,
            alpha: 1.0,
            bench_seeds: 5,
            evaluate: true,
            partition: None,
            demand: None,
            demand_from: None,
            demand_skew: 0.0,
            gen_requests: false,
            requests: None,
            rate_per_epoch: 37.5,
            policies: vec![Policy::Baseline, Policy::Regularized],
            runs: 1,
            epoch_s: sim.epoch_s,
            horizon_s: sim.horizon_s,
            fleet_size: sim.fleet_size,
            capacity: sim.capacity,
            max_wait_s: sim.max_wait_s,
            max_delay_s: sim.max_delay_s,
            w_r: sim.w_r,
            penalty: sim.penalty,
            sigma: sim.sigma,
            max_trip_customers: sim.max_trip_customers,
            max_trips_per_vehicle: sim.max_trips_per_vehicle,
            ilp_node_limit: sim.ilp_node_limit,
        }
    }
}

/// Accepts a TOML array or a comma-separated string.
fn list<'de, D, T>(de: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: DeserializeOwned,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        List(Vec<toml::Value>),
        Text(String),
    }
    let items = match Raw::deserialize(de)? {
        Raw::List(items) => items,
        Raw::Text(s) => s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(scalar)
            .collect(),
    };
    items
        .into_iter()
        .map(|v| T::deserialize(v).map_err(serde::de::Error::custom))
        .collect()
}

/// A TOML literal if `raw` parses as one, otherwise the raw string.
fn scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Merges the config file (if any) and `key=value` overrides over the
    /// defaults.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| {
                    UserError(format!("cannot read config file {}", path.display()))
                })?;
                text.parse::<toml::Table>().map_err(|e| {
                    user_error(format!("config file {}: {}", path.display(), e.message()))
                })?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| user_error(format!("override `{item}` is not key=value")))?;
            table.insert(key.trim().to_string(), scalar(value.trim()));
        }
        let config = RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| user_error(format!("configuration: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(user_error(m));
        if self.seed > i64::MAX as u64 {
            return fail(format!("seed must be at most {}", i64::MAX));
        }
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return fail("grid_rows and grid_cols must be at least 2".into());
        }
        if !(self.block_m > 0.0 && self.speed_mps > 0.0) || self.lanes == 0 {
            return fail("block_m, speed_mps and lanes must be positive".into());
        }
        if self.ring_speed_mps.is_some_and(|s| !(s > 0.0)) {
            return fail("ring_speed_mps must be positive".into());
        }
        if self.dim == 0 || self.sweep_dims.contains(&0) {
            return fail("embedding dimensions must be at least 1".into());
        }
        if self.k == Some(0) {
            return fail("k must be at least 1".into());
        }
        if self.sweeps <= self.burn_in {
            return fail(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            ));
        }
        if !(self.alpha > 0.0) {
            return fail("alpha must be positive".into());
        }
        if self.bench_seeds == 0 || self.runs == 0 {
            return fail("bench_seeds and runs must be at least 1".into());
        }
        if !(self.demand_skew >= 0.0 && self.demand_skew.is_finite()) {
            return fail("demand_skew must be finite and non-negative".into());
        }
        if self.policies.is_empty() {
            return fail("policies must name at least one policy".into());
        }
        self.sim_config(Policy::Baseline, 0)
            .validate()
            .map_err(|e| user_error(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.distance_cache
            .clone()
            .unwrap_or_else(|| self.out("distances.bin"))
    }

    pub fn embedding_path(&self) -> PathBuf {
        self.embedding
            .clone()
            .unwrap_or_else(|| self.out("embedding.txt"))
    }

    pub fn partition_path(&self) -> PathBuf {
        self.partition
            .clone()
            .unwrap_or_else(|| self.out("partition.txt"))
    }

    pub fn demand_path(&self) -> PathBuf {
        self.demand
            .clone()
            .unwrap_or_else(|| self.out("demand.txt"))
    }

    pub fn sim_config(&self, policy: Policy, seed: u64) -> mobility_core::sim::SimConfig {
        use mobility_core::sim::{DemandSource, SimConfig};
        SimConfig {
            epoch_s: self.epoch_s,
            horizon_s: self.horizon_s,
            fleet_size: self.fleet_size,
            capacity: self.capacity,
            max_wait_s: self.max_wait_s,
            max_delay_s: self.max_delay_s,
            policy,
            w_r: self.w_r,
            penalty: self.penalty,
            seed,
            demand: match &self.requests {
                Some(path) => DemandSource::File(path.clone()),
                None => DemandSource::Synthetic {
                    rate_per_epoch: self.rate_per_epoch,
                },
            },
            sigma: self.sigma,
            max_trip_customers: self.max_trip_customers,
            max_trips_per_vehicle: self.max_trips_per_vehicle,
            ilp_node_limit: self.ilp_node_limit,
        }
    }
}

/// Seed for replication `index` of a pipeline component, derived from the
/// root seed.
pub fn derive_seed(root: u64, component: u64, index: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(component);
    for _ in 0..index {
        rng.next_u64();
    }
    rng.next_u64()
}

pub const KEYS_HELP: &str = "\
Configuration keys (config file `key = value`, or trailing KEY=VALUE arguments):
  out_dir, seed
  network | grid_rows, grid_cols, block_m, speed_mps, ring_speed_mps, lanes
  allow_u_turns, distance_cache
  dim (default 18), sweep_dims, max_iterations, rel_tolerance, embedding
  method (dpgmm|kmeans|emgmm), k, sweeps, burn_in, alpha, bench_seeds,
  evaluate, partition
  demand, demand_from, demand_skew, gen_requests, requests, rate_per_epoch
  policies, runs, epoch_s, horizon_s, fleet_size, capacity, max_wait_s,
  max_delay_s, w_r, penalty, sigma, max_trip_customers,
  max_trips_per_vehicle, ilp_node_limit
Paths default to files in out_dir. Every run writes effective.conf there.";
