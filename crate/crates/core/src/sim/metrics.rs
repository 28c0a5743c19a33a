//! Event log records and the metrics derived from them.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::netgraph::{DistanceMatrix, LinkId};
use crate::rideshare::{Constraints, CustomerId, VehicleId};

/// Tolerance on actual wait and delay when judging constraint compliance.
pub const COMPLIANCE_EPS: f64 = 1e-6;
pub const WAIT_BIN_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Request,
    Assign,
    Ignore,
    Pickup,
    Dropoff,
    Abandon,
    Rebalance,
}

/// One log record. `link` is the origin for requests, the stop link for
/// pickups and dropoffs and the target for rebalancing moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub customer: Option<CustomerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkId>,
}

pub fn write_event_log(events: &[Event], mut out: impl Write) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_event_log(reader: impl BufRead) -> std::io::Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// State of the fleet after one epoch's assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: f64,
    pub admitted: usize,
    pub pool: usize,
    pub candidates: usize,
    pub assigned: usize,
    pub ignored: usize,
    /// Vehicles with at least one planned stop.
    pub operating: usize,
    /// Vehicles with no planned stop and nobody onboard.
    pub idle: usize,
    /// Onboard plus planned pickups, summed over the fleet.
    pub planned_customers: usize,
    pub optimal: bool,
    pub clique_overflow: bool,
}

impl EpochRecord {
    pub fn planned_per_operating(&self) -> Option<f64> {
        (self.operating > 0).then(|| self.planned_customers as f64 / self.operating as f64)
    }
}

/// Simulation-side quantities the event log does not carry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub fleet_size: usize,
    pub capacity: u32,
    /// Meters driven by the whole fleet.
    pub total_distance: f64,
    pub epochs: Vec<EpochRecord>,
    /// Assigned customers whose planned wait or delay broke a bound.
    pub planned_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitHistogram {
    pub bin_width: f64,
    /// Bin `i` covers `[i·w, (i+1)·w)`; the last regular bin also takes
    /// waits equal to the bound.
    pub counts: Vec<usize>,
    /// Waits above the bound.
    pub overflow: usize,
}

impl WaitHistogram {
    fn new(max_wait: f64) -> Self {
        let bins = ((max_wait / WAIT_BIN_S).ceil() as usize).max(1);
        Self {
            bin_width: WAIT_BIN_S,
            counts: vec![0; bins],
            overflow: 0,
        }
    }

    fn add(&mut self, wait: f64, max_wait: f64) {
        if wait > max_wait + COMPLIANCE_EPS {
            self.overflow += 1;
        } else {
            let bin = (wait.max(0.0) / self.bin_width) as usize;
            let last = self.counts.len() - 1;
            self.counts[bin.min(last)] += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub admitted: usize,
    /// Customers dropped off.
    pub served: usize,
    pub served_within_constraints: usize,
    /// Share of admitted customers served within both bounds.
    pub fraction_within_constraints: Option<f64>,
    pub abandoned: usize,
    pub pool_at_end: usize,
    pub onboard_at_end: usize,
    pub mean_wait: Option<f64>,
    pub median_wait: Option<f64>,
    pub mean_delay: Option<f64>,
    pub wait_histogram: WaitHistogram,
    pub total_distance: f64,
    pub distance_per_served: Option<f64>,
    /// Mean over epochs with an operating vehicle.
    pub mean_planned_per_operating_vehicle: Option<f64>,
    pub mean_planned_per_vehicle: Option<f64>,
    pub mean_idle_vehicles: Option<f64>,
    pub planned_per_operating_series: Vec<Option<f64>>,
    pub idle_series: Vec<usize>,
    pub planned_violations: usize,
    pub capacity_violations: usize,
    pub suboptimal_epochs: usize,
    pub clique_overflow_epochs: usize,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct Lifecycle {
    request: Option<(f64, LinkId)>,
    pickup: Option<(f64, VehicleId)>,
    dropoff: Option<(f64, LinkId)>,
    abandoned: bool,
}

fn lifecycles(events: &[Event]) -> BTreeMap<CustomerId, Lifecycle> {
    let mut out: BTreeMap<CustomerId, Lifecycle> = BTreeMap::new();
    for e in events {
        let Some(c) = e.customer else { continue };
        let l = out.entry(c).or_default();
        match e.kind {
            EventKind::Request => l.request = Some((e.t, e.link.unwrap_or(0))),
            EventKind::Pickup => l.pickup = Some((e.t, e.vehicle.unwrap_or(0))),
            EventKind::Dropoff => l.dropoff = Some((e.t, e.link.unwrap_or(0))),
            EventKind::Abandon => l.abandoned = true,
            _ => {}
        }
    }
    out
}

/// Derives every customer-level figure from the event log; distance and
/// per-epoch fleet figures come from the trace.
pub fn compute_metrics(
    events: &[Event],
    d: &DistanceMatrix,
    c: &Constraints,
    trace: &RunTrace,
) -> MetricsReport {
    let life = lifecycles(events);
    let mut hist = WaitHistogram::new(c.max_wait);
    let (mut admitted, mut abandoned, mut pool, mut onboard) = (0, 0, 0, 0);
    let mut waits = Vec::new();
    let mut delays = Vec::new();
    let mut within = 0;
    for l in life.values() {
        let Some((requested, origin)) = l.request else { continue };
        admitted += 1;
        match (l.pickup, l.dropoff) {
            (Some((picked, _)), Some((dropped, dest))) => {
                let wait = picked - requested;
                let delay = dropped - picked - d.get(origin, dest);
                hist.add(wait, c.max_wait);
                if wait <= c.max_wait + COMPLIANCE_EPS && delay <= c.max_delay + COMPLIANCE_EPS {
                    within += 1;
                }
                waits.push(wait);
                delays.push(delay);
            }
            (Some(_), None) => onboard += 1,
            _ if l.abandoned => abandoned += 1,
            _ => pool += 1,
        }
    }
    let served = waits.len();
    let epochs = || trace.epochs.iter();
    MetricsReport {
        admitted,
        served,
        served_within_constraints: within,
        fraction_within_constraints: (admitted > 0).then(|| within as f64 / admitted as f64),
        abandoned,
        pool_at_end: pool,
        onboard_at_end: onboard,
        mean_wait: mean(waits.iter().copied()),
        median_wait: median(&waits),
        mean_delay: mean(delays.iter().copied()),
        wait_histogram: hist,
        total_distance: trace.total_distance,
        distance_per_served: (served > 0).then(|| trace.total_distance / served as f64),
        mean_planned_per_operating_vehicle: mean(epochs().filter_map(EpochRecord::planned_per_operating)),
        mean_planned_per_vehicle: (trace.fleet_size > 0)
            .then(|| mean(epochs().map(|e| e.planned_customers as f64 / trace.fleet_size as f64)))
            .flatten(),
        mean_idle_vehicles: mean(epochs().map(|e| e.idle as f64)),
        planned_per_operating_series: epochs().map(EpochRecord::planned_per_operating).collect(),
        idle_series: epochs().map(|e| e.idle).collect(),
        planned_violations: trace.planned_violations,
        capacity_violations: audit_event_log(events, trace.capacity).capacity_violations,
        suboptimal_epochs: epochs().filter(|e| !e.optimal).count(),
        clique_overflow_epochs: epochs().filter(|e| e.clique_overflow).count(),
    }
}

/// Consistency findings over an event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogAudit {
    pub max_onboard: usize,
    pub capacity_violations: usize,
    /// Human-readable lifecycle problems, empty for a valid log.
    pub errors: Vec<String>,
}

/// Replays the log checking that each customer goes request, then pickup
/// by its assigned vehicle, then dropoff by the same vehicle (or is
/// abandoned while waiting), and that no vehicle exceeds `capacity`.
pub fn audit_event_log(events: &[Event], capacity: u32) -> LogAudit {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Waiting(Option<VehicleId>),
        Onboard(VehicleId),
        Done,
    }
    let mut audit = LogAudit::default();
    let mut state: BTreeMap<CustomerId, State> = BTreeMap::new();
    let mut load: BTreeMap<VehicleId, usize> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        let Some(c) = e.customer else {
            audit.errors.push(format!("event {i}: no customer"));
            continue;
        };
        let current = state.get(&c).copied();
        let mut fail = |msg: &str| audit.errors.push(format!("event {i} (customer {c}): {msg}"));
        match (e.kind, current) {
            (EventKind::Request, None) => {
                state.insert(c, State::Waiting(None));
            }
            (EventKind::Request, Some(_)) => fail("repeated request"),
            (_, None) => fail("event before request"),
            (EventKind::Assign, Some(State::Waiting(_))) => {
                state.insert(c, State::Waiting(e.vehicle));
            }
            (EventKind::Ignore, Some(State::Waiting(_))) => {
                state.insert(c, State::Waiting(None));
            }
            (EventKind::Rebalance, Some(State::Waiting(_))) => {}
            (EventKind::Pickup, Some(State::Waiting(v))) => {
                if v.is_none() || v != e.vehicle {
                    fail("pickup by a vehicle it was not assigned to");
                }
                let vid = e.vehicle.unwrap_or(usize::MAX);
                let n = load.entry(vid).or_default();
                *n += 1;
                audit.max_onboard = audit.max_onboard.max(*n);
                if *n > capacity as usize {
                    audit.capacity_violations += 1;
                }
                state.insert(c, State::Onboard(vid));
            }
            (EventKind::Dropoff, Some(State::Onboard(v))) => {
                if e.vehicle != Some(v) {
                    fail("dropoff by a different vehicle");
                }
                if let Some(n) = load.get_mut(&v) {
                    *n = n.saturating_sub(1);
                }
                state.insert(c, State::Done);
            }
            (EventKind::Abandon, Some(State::Waiting(_))) => {
                state.insert(c, State::Done);
            }
            (kind, Some(_)) => fail(&format!("{kind:?} in the wrong state")),
        }
    }
    audit
}
