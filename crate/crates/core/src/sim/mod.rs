//! Fleet simulation with fixed re-optimization epochs.
//!
//! At every epoch boundary the simulator admits the requests of the past
//! window, drops customers whose pickup deadline has passed, builds and
//! solves the assignment program, and then moves vehicles along shortest
//! paths until the next boundary. Stops fire when a vehicle reaches them.

mod fleet;
mod metrics;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{
    build_baseline_ilp, build_regularized_ilp, rebalance_ignored, solve_ilp, Regularization,
    SolveLimits, DEFAULT_PENALTY, DEFAULT_REG_WEIGHT,
};
use crate::cluster::PartitionResult;
use crate::demand::ODDistribution;
use crate::netgraph::{MovementGraph, ShortestPaths};
use crate::rideshare::{
    build_shareability_graph, generate_candidate_trips, read_requests, relax_onboard_bounds,
    solve_tsp_pd, Constraints, Customer, CustomerId, RideshareError, TripRequest, VehicleId,
};

use fleet::{FleetVehicle, Fired, Motion};

pub use metrics::{
    audit_event_log, compute_metrics, read_event_log, write_event_log, EpochRecord, Event,
    EventKind, LogAudit, MetricsReport, RunTrace, WaitHistogram, COMPLIANCE_EPS, WAIT_BIN_S,
};

const STREAM_DEMAND: u64 = 0;
const STREAM_FLEET: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("request {id} references link {link}, but the network has {n} links")]
    UnknownLink { id: CustomerId, link: usize, n: usize },
    #[error("duplicate request id {0}")]
    DuplicateRequest(CustomerId),
    #[error(transparent)]
    Requests(#[from] RideshareError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Baseline,
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandSource {
    /// Replay of a request file.
    File(PathBuf),
    /// Poisson arrivals per epoch with OD regions drawn from the demand
    /// distribution and links uniform within regions.
    Synthetic { rate_per_epoch: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epoch_s: f64,
    pub horizon_s: f64,
    pub fleet_size: usize,
    pub capacity: u32,
    pub max_wait_s: f64,
    pub max_delay_s: f64,
    pub policy: Policy,
    pub w_r: f64,
    pub penalty: f64,
    pub seed: u64,
    pub demand: DemandSource,
    /// Log-normal travel-time noise per leg; 0 keeps the network static.
    pub sigma: f64,
    /// Largest number of new customers in one trip.
    pub max_trip_customers: usize,
    pub max_trips_per_vehicle: usize,
    pub ilp_node_limit: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            epoch_s: 30.0,
            horizon_s: 1800.0,
            fleet_size: 100,
            capacity: 4,
            max_wait_s: 120.0,
            max_delay_s: 240.0,
            policy: Policy::Baseline,
            w_r: DEFAULT_REG_WEIGHT,
            penalty: DEFAULT_PENALTY,
            seed: 0,
            demand: DemandSource::Synthetic {
                rate_per_epoch: 37.5,
            },
            sigma: 0.0,
            max_trip_customers: 4,
            max_trips_per_vehicle: 64,
            ilp_node_limit: 20_000,
        }
    }
}

impl SimConfig {
    pub fn constraints(&self) -> Constraints {
        Constraints {
            max_wait: self.max_wait_s,
            max_delay: self.max_delay_s,
        }
    }

    pub fn epochs(&self) -> usize {
        (self.horizon_s / self.epoch_s).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::Config(m.into()));
        if !(self.epoch_s > 0.0 && self.epoch_s.is_finite()) {
            return fail("epoch_s must be positive");
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return fail("horizon_s must be positive");
        }
        let ratio = self.horizon_s / self.epoch_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return fail("horizon_s must be a multiple of epoch_s");
        }
        if self.capacity == 0 {
            return fail("capacity must be at least 1");
        }
        if !(self.max_wait_s >= 0.0 && self.max_delay_s >= 0.0) {
            return fail("max_wait_s and max_delay_s must be non-negative");
        }
        if !(self.w_r >= 0.0 && self.w_r.is_finite()) {
            return fail("w_r must be finite and non-negative");
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return fail("penalty must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail("sigma must be finite and non-negative");
        }
        if self.max_trip_customers == 0 || self.max_trips_per_vehicle == 0 {
            return fail("trip limits must be at least 1");
        }
        if let DemandSource::Synthetic { rate_per_epoch } = self.demand {
            if !(rate_per_epoch >= 0.0 && rate_per_epoch.is_finite()) {
                return fail("rate_per_epoch must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Read-only artifacts shared by every epoch.
#[derive(Debug, Clone, Copy)]
pub struct SimContext<'a> {
    pub graph: &'a MovementGraph,
    pub paths: &'a ShortestPaths,
    /// Needed by the regularized policy and by synthetic demand.
    pub partition: Option<&'a PartitionResult>,
    pub demand: Option<&'a ODDistribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub trace: RunTrace,
    pub metrics: MetricsReport,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Poisson arrivals per epoch window over `[0, horizon)`. Ids are
/// sequential in time order. A draw whose destination region only offers
/// the origin link is discarded.
pub fn synthesize_requests(
    q: &ODDistribution,
    partition: &PartitionResult,
    rate_per_epoch: f64,
    epoch_s: f64,
    horizon_s: f64,
    rng: &mut impl Rng,
) -> Result<Vec<TripRequest>, SimError> {
    let k = q.k();
    if partition.k() != k {
        return Err(SimError::Config(format!(
            "demand has {k} regions, partition has {}",
            partition.k()
        )));
    }
    let members: Vec<Vec<usize>> = (0..k).map(|r| partition.members(r).collect()).collect();
    for (pair, &p) in q.probs().iter().enumerate() {
        if p > 0.0 && (members[pair / k].is_empty() || members[pair % k].is_empty()) {
            return Err(SimError::Config(format!("demand on empty region pair {pair}")));
        }
    }
    let mut out = Vec::new();
    if rate_per_epoch == 0.0 {
        return Ok(out);
    }
    let pairs = WeightedIndex::new(q.probs()).map_err(|e| SimError::Config(e.to_string()))?;
    let arrivals =
        Poisson::new(rate_per_epoch).map_err(|e| SimError::Config(e.to_string()))?;
    let windows = (horizon_s / epoch_s).round() as usize;
    for w in 0..windows {
        let n = arrivals.sample(rng) as usize;
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            let pair = pairs.sample(rng);
            let (o, d) = (&members[pair / k], &members[pair % k]);
            let origin = o[rng.random_range(0..o.len())];
            let destination = (0..32)
                .map(|_| d[rng.random_range(0..d.len())])
                .find(|&l| l != origin);
            let t = (w as f64 + rng.random::<f64>()) * epoch_s;
            if let Some(destination) = destination {
                batch.push((t, origin, destination));
            }
        }
        batch.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, origin, destination) in batch {
            out.push(TripRequest {
                id: out.len() as CustomerId,
                request_time: t,
                origin,
                destination,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Waiting {
        assigned: Option<VehicleId>,
        ignored_once: bool,
    },
    Onboard,
    Done,
}

struct World<'a> {
    config: &'a SimConfig,
    ctx: SimContext<'a>,
    constraints: Constraints,
    clock: f64,
    vehicles: Vec<FleetVehicle>,
    customers: BTreeMap<CustomerId, (Customer, Status)>,
    events: Vec<Event>,
    trace: RunTrace,
    noise: ChaCha8Rng,
}

impl World<'_> {
    fn log(&mut self, t: f64, kind: EventKind, customer: CustomerId, vehicle: Option<VehicleId>, link: Option<usize>) {
        self.events.push(Event {
            t,
            kind,
            customer: Some(customer),
            vehicle,
            link,
        });
    }

    fn admit(&mut self, requests: &[TripRequest]) -> usize {
        for r in requests {
            let c = Customer::from_request(r, &self.constraints);
            self.customers.insert(
                r.id,
                (
                    c,
                    Status::Waiting {
                        assigned: None,
                        ignored_once: false,
                    },
                ),
            );
            self.log(r.request_time, EventKind::Request, r.id, None, Some(r.origin));
        }
        requests.len()
    }

    /// Abandons waiting customers whose pickup deadline has passed.
    fn prune(&mut self) {
        let expired: Vec<(CustomerId, Option<VehicleId>)> = self
            .customers
            .iter()
            .filter_map(|(&id, (c, s))| match *s {
                Status::Waiting { assigned, .. } if self.clock > c.pickup_deadline => {
                    Some((id, assigned))
                }
                _ => None,
            })
            .collect();
        for (id, assigned) in expired {
            if let Some(v) = assigned {
                self.vehicles[v].forget(id);
            }
            self.customers.get_mut(&id).expect("known customer").1 = Status::Done;
            self.log(self.clock, EventKind::Abandon, id, None, None);
        }
    }

    fn plan(&mut self, admitted: usize) {
        let now = self.clock;
        let ctx = self.ctx;
        let d = &ctx.paths.distances;
        let c = self.constraints;
        let pool: Vec<Customer> = self
            .customers
            .values()
            .filter(|(_, s)| matches!(s, Status::Waiting { .. }))
            .map(|(c, _)| *c)
            .collect();
        let mut states: Vec<_> = self.vehicles.iter().map(|v| v.planning_state(now)).collect();
        for (v, s) in self.vehicles.iter_mut().zip(&mut states) {
            if relax_onboard_bounds(s, d, now, &c) {
                v.onboard = s.onboard.clone();
            }
        }

        let g = build_shareability_graph(&pool, &states, d, now, &c);
        let max_customers = self.config.max_trip_customers.min(self.config.capacity as usize);
        let cands = generate_candidate_trips(
            &g,
            &pool,
            &states,
            d,
            now,
            &c,
            max_customers,
            self.config.max_trips_per_vehicle,
        );
        let inst = match (self.config.policy, ctx.demand, ctx.partition) {
            (Policy::Regularized, Some(q), Some(partition)) => {
                let reg = Regularization {
                    q,
                    w_r: self.config.w_r,
                    partition,
                };
                build_regularized_ilp(&cands.trips, &pool, &states, &reg, self.config.penalty, d, now, &c)
            }
            _ => build_baseline_ilp(&cands.trips, &pool, &states, self.config.penalty),
        };
        let limits = SolveLimits {
            time_budget: None,
            node_limit: Some(self.config.ilp_node_limit),
        };
        let sol = solve_ilp(&inst, limits);

        // Apply: selected trips, base schedules for everyone else.
        let mut new_owner: BTreeMap<CustomerId, VehicleId> = BTreeMap::new();
        for (j, state) in states.iter().enumerate() {
            let v = &mut self.vehicles[j];
            match sol.vehicle_trip[j] {
                Some(t) => {
                    let trip = &cands.trips[t];
                    let assigned: Vec<Customer> = trip
                        .customers
                        .iter()
                        .map(|id| pool.iter().find(|c| c.id == *id).copied().expect("pool customer"))
                        .collect();
                    for cu in &assigned {
                        let (wait, delay) = trip
                            .schedule
                            .wait_and_delay(cu, d)
                            .expect("trip schedules its customers");
                        if wait > c.max_wait + COMPLIANCE_EPS || delay > c.max_delay + COMPLIANCE_EPS {
                            self.trace.planned_violations += 1;
                        }
                        new_owner.insert(cu.id, v.id);
                    }
                    v.replan(now, trip.schedule.stops.clone(), assigned);
                }
                None => {
                    let base = solve_tsp_pd(state, &[], d, now, &c)
                        .expect("onboard-only schedules are feasible after relaxation");
                    if !base.stops.is_empty() || !v.plan.is_empty() {
                        v.replan(now, base.stops, Vec::new());
                    } else {
                        v.assigned.clear();
                    }
                }
            }
        }

        let mut first_ignored = Vec::new();
        for cu in &pool {
            let entry = self.customers.get_mut(&cu.id).expect("pool customer");
            let Status::Waiting { assigned, ignored_once } = entry.1 else {
                unreachable!("pool holds waiting customers")
            };
            match new_owner.get(&cu.id) {
                Some(&v) => {
                    entry.1 = Status::Waiting {
                        assigned: Some(v),
                        ignored_once,
                    };
                    if assigned != Some(v) {
                        self.log(now, EventKind::Assign, cu.id, Some(v), None);
                    }
                }
                None => {
                    entry.1 = Status::Waiting {
                        assigned: None,
                        ignored_once: true,
                    };
                    if !ignored_once || assigned.is_some() {
                        self.log(now, EventKind::Ignore, cu.id, None, None);
                    }
                    first_ignored.push(*cu);
                }
            }
        }

        // Rebalance idle vehicles toward ignored customers nobody is heading for.
        for v in &mut self.vehicles {
            if let Some((cid, _)) = v.rebalance {
                if !first_ignored.iter().any(|c| c.id == cid) {
                    v.cancel_rebalance();
                }
            }
        }
        let targeted: Vec<CustomerId> = self
            .vehicles
            .iter()
            .filter_map(|v| v.rebalance.map(|(c, _)| c))
            .collect();
        first_ignored.retain(|c| !targeted.contains(&c.id));
        let idle: Vec<_> = self
            .vehicles
            .iter()
            .zip(&states)
            .filter(|(v, _)| v.is_idle() && v.rebalance.is_none())
            .map(|(_, s)| s.clone())
            .collect();
        for (vid, cid) in rebalance_ignored(&first_ignored, &idle, d) {
            let origin = self.customers[&cid].0.origin;
            self.vehicles[vid].start_rebalance(now, cid, origin);
            self.log(now, EventKind::Rebalance, cid, Some(vid), Some(origin));
        }

        let operating = self.vehicles.iter().filter(|v| !v.plan.is_empty()).count();
        self.trace.epochs.push(EpochRecord {
            t: now,
            admitted,
            pool: pool.len(),
            candidates: cands.trips.len(),
            assigned: sol.served.len(),
            ignored: sol.ignored.len(),
            operating,
            idle: self.vehicles.iter().filter(|v| v.is_idle()).count(),
            planned_customers: self.vehicles.iter().map(FleetVehicle::planned_customers).sum(),
            optimal: sol.optimal,
            clique_overflow: cands.overflow,
        });
    }

    fn advance(&mut self, until: f64) {
        let motion = Motion {
            graph: self.ctx.graph,
            paths: self.ctx.paths,
            sigma: self.config.sigma,
        };
        let mut fired: Vec<Fired> = Vec::new();
        for v in &mut self.vehicles {
            v.advance(until, &motion, &mut self.noise, &mut fired);
        }
        fired.sort_by(|a, b| a.t.total_cmp(&b.t));
        for f in fired {
            let status = &mut self.customers.get_mut(&f.stop.customer).expect("known customer").1;
            let kind = match f.stop.kind {
                crate::rideshare::StopKind::Pickup => {
                    *status = Status::Onboard;
                    EventKind::Pickup
                }
                crate::rideshare::StopKind::Dropoff => {
                    *status = Status::Done;
                    EventKind::Dropoff
                }
            };
            self.log(f.t, kind, f.stop.customer, Some(f.vehicle), Some(f.stop.link));
        }
        self.clock = until;
    }
}

/// Runs with the configured demand source.
pub fn run(config: &SimConfig, ctx: SimContext) -> Result<SimOutput, SimError> {
    config.validate()?;
    let requests = match &config.demand {
        DemandSource::File(path) => {
            read_requests(std::io::BufReader::new(std::fs::File::open(path)?))?
        }
        DemandSource::Synthetic { rate_per_epoch } => {
            let (Some(q), Some(partition)) = (ctx.demand, ctx.partition) else {
                return Err(SimError::Config(
                    "synthetic demand needs a partition and a demand distribution".into(),
                ));
            };
            let mut rng = rng_stream(config.seed, STREAM_DEMAND);
            synthesize_requests(q, partition, *rate_per_epoch, config.epoch_s, config.horizon_s, &mut rng)?
        }
    };
    run_with_requests(config, ctx, &requests)
}

/// Runs on an explicit request list (sorted or not). Requests at or after
/// the horizon are never admitted.
pub fn run_with_requests(
    config: &SimConfig,
    ctx: SimContext,
    requests: &[TripRequest],
) -> Result<SimOutput, SimError> {
    config.validate()?;
    let n = ctx.paths.distances.len();
    if config.policy == Policy::Regularized {
        match (ctx.partition, ctx.demand) {
            (Some(p), Some(q)) if p.k() == q.k() && p.link_region.len() == n => {}
            (Some(_), Some(_)) => {
                return Err(SimError::Config(
                    "partition and demand do not match the network".into(),
                ))
            }
            _ => {
                return Err(SimError::Config(
                    "the regularized policy needs a partition and a demand distribution".into(),
                ))
            }
        }
    }
    let mut requests = requests.to_vec();
    requests.sort_by(|a, b| a.request_time.total_cmp(&b.request_time).then(a.id.cmp(&b.id)));
    let mut seen = std::collections::BTreeSet::new();
    for r in &requests {
        for link in [r.origin, r.destination] {
            if link >= n {
                return Err(SimError::UnknownLink { id: r.id, link, n });
            }
        }
        if !seen.insert(r.id) {
            return Err(SimError::DuplicateRequest(r.id));
        }
    }

    let mut fleet_rng = rng_stream(config.seed, STREAM_FLEET);
    let in_horizon: Vec<&TripRequest> = requests
        .iter()
        .filter(|r| r.request_time < config.horizon_s)
        .collect();
    let vehicles = (0..config.fleet_size)
        .map(|id| {
            let at = if in_horizon.is_empty() {
                fleet_rng.random_range(0..n)
            } else {
                in_horizon[fleet_rng.random_range(0..in_horizon.len())].origin
            };
            FleetVehicle::new(id, config.capacity, at)
        })
        .collect();

    let mut world = World {
        config,
        ctx,
        constraints: config.constraints(),
        clock: 0.0,
        vehicles,
        customers: BTreeMap::new(),
        events: Vec::new(),
        trace: RunTrace {
            fleet_size: config.fleet_size,
            capacity: config.capacity,
            ..Default::default()
        },
        noise: rng_stream(config.seed, STREAM_NOISE),
    };

    let epochs = config.epochs();
    let mut next = 0;
    let mut admit_until = |world: &mut World, t: f64| {
        let start = next;
        while next < requests.len() && requests[next].request_time < t.min(config.horizon_s) {
            next += 1;
        }
        world.admit(&requests[start..next])
    };
    for e in 0..epochs {
        let now = e as f64 * config.epoch_s;
        world.clock = now;
        let admitted = admit_until(&mut world, now);
        world.prune();
        world.plan(admitted);
        world.advance((e + 1) as f64 * config.epoch_s);
    }
    world.clock = config.horizon_s;
    admit_until(&mut world, f64::INFINITY);
    world.prune();

    world.trace.total_distance = world.vehicles.iter().map(|v| v.distance).sum();
    let metrics = compute_metrics(
        &world.events,
        &ctx.paths.distances,
        &world.constraints,
        &world.trace,
    );
    Ok(SimOutput {
        events: world.events,
        trace: world.trace,
        metrics,
    })
}
