//! Candidate ride-share trips for one assignment epoch.
//!
//! Customers and vehicles form a shareability graph; every clique holding
//! exactly one vehicle is a candidate trip, scheduled exactly by a
//! pickup-and-delivery dynamic program.

mod graph;
mod tsp;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{DistanceMatrix, LinkId};

pub use graph::{
    build_shareability_graph, customers_shareable, enumerate_cliques, generate_candidate_trips,
    vehicle_can_serve, CandidateSet, CliqueEnumeration, ShareabilityGraph,
};
pub use tsp::{evaluate_order, relax_onboard_bounds, solve_tsp_pd};

pub type CustomerId = u64;
pub type VehicleId = usize;

#[derive(Debug, Error)]
pub enum RideshareError {
    #[error("request file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("request {id}: origin and destination are both link {link}")]
    SameEndpoints { id: CustomerId, link: LinkId },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Service-quality bounds in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub max_wait: f64,
    pub max_delay: f64,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            max_wait: 120.0,
            max_delay: 240.0,
        }
    }
}

impl Constraints {
    pub fn unbounded() -> Self {
        Self {
            max_wait: f64::INFINITY,
            max_delay: f64::INFINITY,
        }
    }
}

/// A raw request as read from a request file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRequest {
    pub id: CustomerId,
    pub request_time: f64,
    pub origin: LinkId,
    pub destination: LinkId,
}

/// A customer waiting to be picked up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: CustomerId,
    pub origin: LinkId,
    pub destination: LinkId,
    pub request_time: f64,
    pub pickup_deadline: f64,
}

impl Customer {
    pub fn from_request(r: &TripRequest, c: &Constraints) -> Self {
        Self {
            id: r.id,
            origin: r.origin,
            destination: r.destination,
            request_time: r.request_time,
            pickup_deadline: r.request_time + c.max_wait,
        }
    }
}

/// A passenger already in a vehicle; only the dropoff remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnboardPassenger {
    pub customer: CustomerId,
    pub origin: LinkId,
    pub destination: LinkId,
    pub request_time: f64,
    pub pickup_time: f64,
    /// Delay already unavoidable when the passenger's bound was set; the
    /// effective bound is the larger of this and `max_delay`.
    pub delay_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub capacity: u32,
    /// Link the vehicle is on (or about to enter) at `ready_time`.
    pub location: LinkId,
    pub ready_time: f64,
    pub onboard: Vec<OnboardPassenger>,
}

impl VehicleState {
    pub fn idle(id: VehicleId, capacity: u32, location: LinkId, ready_time: f64) -> Self {
        Self {
            id,
            capacity,
            location,
            ready_time,
            onboard: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StopKind {
    Pickup,
    Dropoff,
}

/// Orders stops for tie-breaking: by customer id, pickup before dropoff.
pub type StopKey = (CustomerId, StopKind);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub customer: CustomerId,
    pub kind: StopKind,
    pub link: LinkId,
    /// Planned arrival time.
    pub time: f64,
}

impl Stop {
    pub fn key(&self) -> StopKey {
        (self.customer, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub stops: Vec<Stop>,
    /// Σ (dropoff − request − shortest) over new customers plus
    /// Σ (dropoff − pickup − shortest) over onboard passengers.
    pub cost: f64,
}

impl Schedule {
    pub fn keys(&self) -> Vec<StopKey> {
        self.stops.iter().map(Stop::key).collect()
    }

    /// Planned `(wait, delay)` for a customer picked up in this schedule.
    pub fn wait_and_delay(&self, c: &Customer, d: &DistanceMatrix) -> Option<(f64, f64)> {
        let pick = self
            .stops
            .iter()
            .find(|s| s.customer == c.id && s.kind == StopKind::Pickup)?;
        let drop = self
            .stops
            .iter()
            .find(|s| s.customer == c.id && s.kind == StopKind::Dropoff)?;
        Some((
            pick.time - c.request_time,
            drop.time - pick.time - d.get(c.origin, c.destination),
        ))
    }
}

/// A feasible trip: one vehicle, a set of new customers, and its best
/// schedule (which also covers the vehicle's onboard passengers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrip {
    pub vehicle: VehicleId,
    /// Sorted ascending.
    pub customers: Vec<CustomerId>,
    pub schedule: Schedule,
    /// Schedule cost minus the cost of serving the onboard passengers alone.
    pub cost: f64,
}

/// Reads `id request_time origin_link dest_link` lines, sorted by
/// `(request_time, id)`.
pub fn read_requests(reader: impl BufRead) -> Result<Vec<TripRequest>, RideshareError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| RideshareError::Parse { line: idx + 1, msg };
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", f.len())));
        }
        let r = TripRequest {
            id: f[0].parse().map_err(|e| err(format!("id: {e}")))?,
            request_time: f[1].parse().map_err(|e| err(format!("request_time: {e}")))?,
            origin: f[2].parse().map_err(|e| err(format!("origin: {e}")))?,
            destination: f[3].parse().map_err(|e| err(format!("destination: {e}")))?,
        };
        if !r.request_time.is_finite() {
            return Err(err("request_time must be finite".into()));
        }
        if r.origin == r.destination {
            return Err(RideshareError::SameEndpoints {
                id: r.id,
                link: r.origin,
            });
        }
        out.push(r);
    }
    out.sort_by(|a, b| a.request_time.total_cmp(&b.request_time).then(a.id.cmp(&b.id)));
    Ok(out)
}

pub fn write_requests(requests: &[TripRequest], mut out: impl Write) -> std::io::Result<()> {
    for r in requests {
        writeln!(out, "{} {} {} {}", r.id, r.request_time, r.origin, r.destination)?;
    }
    Ok(())
}
