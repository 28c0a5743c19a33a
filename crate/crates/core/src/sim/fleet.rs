//! Vehicle motion along shortest paths between committed stops.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::netgraph::{LinkId, MovementGraph, ShortestPaths};
use crate::rideshare::{
    Customer, CustomerId, OnboardPassenger, Stop, StopKind, VehicleId, VehicleState,
};

pub(crate) struct Motion<'a> {
    pub graph: &'a MovementGraph,
    pub paths: &'a ShortestPaths,
    pub sigma: f64,
}

impl Motion<'_> {
    /// Multiplicative travel-time factor for one leg: mean-one log-normal,
    /// clamped to [0.5, 2]. Exactly 1 (and no draw) when noise is off.
    fn leg_factor(&self, rng: &mut impl Rng) -> f64 {
        if self.sigma == 0.0 {
            return 1.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        (self.sigma * z - 0.5 * self.sigma * self.sigma)
            .exp()
            .clamp(0.5, 2.0)
    }
}

/// A stop reached during motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Fired {
    pub t: f64,
    pub vehicle: VehicleId,
    pub stop: Stop,
}

pub(crate) struct FleetVehicle {
    pub id: VehicleId,
    pub capacity: u32,
    /// Last link reached.
    pub at: LinkId,
    /// When the vehicle reached `at`, or became free to leave it.
    pub ready: f64,
    pub onboard: Vec<OnboardPassenger>,
    /// Customers assigned to this vehicle but not yet picked up.
    pub assigned: Vec<Customer>,
    pub plan: VecDeque<Stop>,
    /// Upcoming link arrivals on the current leg.
    pub route: VecDeque<(LinkId, f64)>,
    pub rebalance: Option<(CustomerId, LinkId)>,
    /// Meters driven.
    pub distance: f64,
}

impl FleetVehicle {
    pub fn new(id: VehicleId, capacity: u32, at: LinkId) -> Self {
        Self {
            id,
            capacity,
            at,
            ready: 0.0,
            onboard: Vec::new(),
            assigned: Vec::new(),
            plan: VecDeque::new(),
            route: VecDeque::new(),
            rebalance: None,
            distance: 0.0,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.plan.is_empty() && self.onboard.is_empty()
    }

    pub fn planned_customers(&self) -> usize {
        self.onboard.len()
            + self
                .plan
                .iter()
                .filter(|s| s.kind == StopKind::Pickup)
                .count()
    }

    /// Planning view at `now`: a vehicle between links is placed on the link
    /// it is entering, ready when it gets there.
    pub fn planning_state(&self, now: f64) -> VehicleState {
        let (location, ready_time) = match self.route.front() {
            Some(&(link, t)) => (link, t),
            None => (self.at, self.ready.max(now)),
        };
        VehicleState {
            id: self.id,
            capacity: self.capacity,
            location,
            ready_time,
            onboard: self.onboard.clone(),
        }
    }

    /// Replaces the committed stops. The link currently being entered is
    /// kept; the rest of the leg is re-routed on the next advance.
    pub fn replan(&mut self, now: f64, stops: Vec<Stop>, assigned: Vec<Customer>) {
        self.route.truncate(1);
        if self.route.is_empty() {
            self.ready = self.ready.max(now);
        }
        self.plan = stops.into();
        self.assigned = assigned;
        self.rebalance = None;
    }

    pub fn start_rebalance(&mut self, now: f64, customer: CustomerId, target: LinkId) {
        self.route.truncate(1);
        if self.route.is_empty() {
            self.ready = self.ready.max(now);
        }
        self.rebalance = Some((customer, target));
    }

    pub fn cancel_rebalance(&mut self) {
        if self.rebalance.take().is_some() {
            self.route.truncate(1);
        }
    }

    /// Drops an abandoned customer's stops from the plan.
    pub fn forget(&mut self, customer: CustomerId) {
        self.assigned.retain(|c| c.id != customer);
        let before = self.plan.len();
        self.plan.retain(|s| s.customer != customer);
        if self.plan.len() != before {
            self.route.truncate(1);
        }
    }

    fn start_leg(&mut self, target: LinkId, motion: &Motion, rng: &mut impl Rng) {
        let f = motion.leg_factor(rng);
        let d = &motion.paths.distances;
        for x in motion.paths.path(self.at, target) {
            self.route.push_back((x, self.ready + f * d.get(self.at, x)));
        }
    }

    fn fire(&mut self, stop: Stop, out: &mut Vec<Fired>) {
        match stop.kind {
            StopKind::Pickup => {
                let idx = self
                    .assigned
                    .iter()
                    .position(|c| c.id == stop.customer)
                    .expect("pickup stop for an assigned customer");
                let c = self.assigned.remove(idx);
                self.onboard.push(OnboardPassenger {
                    customer: c.id,
                    origin: c.origin,
                    destination: c.destination,
                    request_time: c.request_time,
                    pickup_time: self.ready,
                    delay_floor: 0.0,
                });
            }
            StopKind::Dropoff => {
                self.onboard.retain(|p| p.customer != stop.customer);
            }
        }
        out.push(Fired {
            t: self.ready,
            vehicle: self.id,
            stop,
        });
    }

    /// Moves the vehicle through every link arrival and stop up to and
    /// including time `until`.
    pub fn advance(&mut self, until: f64, motion: &Motion, rng: &mut impl Rng, out: &mut Vec<Fired>) {
        loop {
            if let Some(&(link, t)) = self.route.front() {
                if t > until {
                    return;
                }
                self.route.pop_front();
                self.distance += motion.graph.movement_length(self.at, link);
                self.at = link;
                self.ready = t;
                continue;
            }
            if let Some(&stop) = self.plan.front() {
                if stop.link == self.at {
                    self.plan.pop_front();
                    self.fire(stop, out);
                } else {
                    self.start_leg(stop.link, motion, rng);
                }
                continue;
            }
            match self.rebalance {
                Some((_, target)) if target != self.at => self.start_leg(target, motion, rng),
                Some(_) => {
                    self.rebalance = None;
                    return;
                }
                None => return,
            }
        }
    }
}
