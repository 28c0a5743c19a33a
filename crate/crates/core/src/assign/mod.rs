//! Epoch trip assignment as a binary integer program.
//!
//! Variables are one binary per candidate trip, one per pool customer
//! (served or not) and, in regularized mode, one idle binary per vehicle.
//! The objective is trip cost plus a penalty `D` per ignored customer; the
//! regularized form subtracts `w_R · q_od · ln s` for the OD pair and empty
//! seats each vehicle ends up with, whether it takes a trip or stays idle.

mod bnb;
mod lp;

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::PartitionResult;
use crate::demand::{regularizer_coefficient, ODDistribution};
use crate::netgraph::{DistanceMatrix, LinkId};
use crate::rideshare::{
    solve_tsp_pd, CandidateTrip, Constraints, Customer, CustomerId, StopKind, VehicleId,
    VehicleState,
};

pub use bnb::{solve_ilp, SolveLimits};

/// Default penalty per ignored customer, seconds.
pub const DEFAULT_PENALTY: f64 = 3600.0;
/// Default regularization weight, seconds per unit of `q · ln s`.
pub const DEFAULT_REG_WEIGHT: f64 = 600.0;

/// One trip variable: vehicle and customers by instance index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripVar {
    pub vehicle: usize,
    /// Sorted ascending.
    pub customers: Vec<usize>,
    /// Objective coefficient, regularization included.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ILPInstance {
    pub trips: Vec<TripVar>,
    pub customer_ids: Vec<CustomerId>,
    pub vehicle_ids: Vec<VehicleId>,
    pub penalty: f64,
    /// Idle-indicator coefficients; `Some` turns vehicle rows into
    /// equalities with an idle binary.
    pub idle_cost: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// Selected trip indices, ascending.
    pub selected: Vec<usize>,
    pub served: Vec<CustomerId>,
    pub ignored: Vec<CustomerId>,
    /// Trip index per vehicle, `None` when idle.
    pub vehicle_trip: Vec<Option<usize>>,
    pub objective: f64,
    /// The search finished; `objective` is the optimum.
    pub optimal: bool,
    pub nodes: usize,
}

impl ILPInstance {
    pub fn customer_count(&self) -> usize {
        self.customer_ids.len()
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicle_ids.len()
    }

    /// Whether `selected` gives each vehicle and customer at most one trip.
    pub fn is_feasible(&self, selected: &[usize]) -> bool {
        let mut v_used = vec![false; self.vehicle_count()];
        let mut c_used = vec![false; self.customer_count()];
        for &t in selected {
            let trip = &self.trips[t];
            if std::mem::replace(&mut v_used[trip.vehicle], true) {
                return false;
            }
            for &c in &trip.customers {
                if std::mem::replace(&mut c_used[c], true) {
                    return false;
                }
            }
        }
        true
    }

    /// Objective for a selection of trips, evaluated in a fixed order:
    /// selected trip costs ascending by index, then ignored-customer
    /// penalties, then idle costs by vehicle.
    pub fn objective(&self, selected: &[usize]) -> f64 {
        let mut sorted = selected.to_vec();
        sorted.sort_unstable();
        let mut served = vec![false; self.customer_count()];
        let mut busy = vec![false; self.vehicle_count()];
        let mut total = 0.0;
        for &t in &sorted {
            total += self.trips[t].cost;
            busy[self.trips[t].vehicle] = true;
            for &c in &self.trips[t].customers {
                served[c] = true;
            }
        }
        for s in served {
            if !s {
                total += self.penalty;
            }
        }
        if let Some(idle) = &self.idle_cost {
            for (b, cost) in busy.iter().zip(idle) {
                if !b {
                    total += cost;
                }
            }
        }
        total
    }

    /// Expands a trip selection into a full solution record.
    pub fn solution(&self, selected: Vec<usize>, optimal: bool, nodes: usize) -> AssignmentSolution {
        let mut selected = selected;
        selected.sort_unstable();
        let mut vehicle_trip = vec![None; self.vehicle_count()];
        let mut served_mask = vec![false; self.customer_count()];
        for &t in &selected {
            vehicle_trip[self.trips[t].vehicle] = Some(t);
            for &c in &self.trips[t].customers {
                served_mask[c] = true;
            }
        }
        let (mut served, mut ignored) = (Vec::new(), Vec::new());
        for (c, &s) in served_mask.iter().enumerate() {
            if s {
                served.push(self.customer_ids[c]);
            } else {
                ignored.push(self.customer_ids[c]);
            }
        }
        AssignmentSolution {
            objective: self.objective(&selected),
            selected,
            served,
            ignored,
            vehicle_trip,
            optimal,
            nodes,
        }
    }

    /// Line-oriented LP dump. Records, one per line, fields separated by a
    /// single space, numbers in shortest round-trip form:
    ///
    /// ```text
    /// min const <value>
    /// min <var> <coef>
    /// row <name> <sense: <= | => <rhs> <var>:<coef> ...
    /// bin <var>
    /// ```
    ///
    /// Variables are `t<i>` (trips), `c<j>` (customer served) and `v<k>`
    /// (vehicle idle, regularized mode only).
    pub fn write_lp(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "min const {:?}", self.penalty * self.customer_count() as f64)?;
        for (i, t) in self.trips.iter().enumerate() {
            writeln!(out, "min t{i} {:?}", t.cost)?;
        }
        for j in 0..self.customer_count() {
            writeln!(out, "min c{j} {:?}", -self.penalty)?;
        }
        if let Some(idle) = &self.idle_cost {
            for (k, c) in idle.iter().enumerate() {
                writeln!(out, "min v{k} {c:?}")?;
            }
        }
        for k in 0..self.vehicle_count() {
            let sense = if self.idle_cost.is_some() { "=" } else { "<=" };
            write!(out, "row veh{k} {sense} 1")?;
            for (i, t) in self.trips.iter().enumerate() {
                if t.vehicle == k {
                    write!(out, " t{i}:1")?;
                }
            }
            if self.idle_cost.is_some() {
                write!(out, " v{k}:1")?;
            }
            writeln!(out)?;
        }
        for j in 0..self.customer_count() {
            write!(out, "row cust{j} = 0")?;
            for (i, t) in self.trips.iter().enumerate() {
                if t.customers.contains(&j) {
                    write!(out, " t{i}:1")?;
                }
            }
            writeln!(out, " c{j}:-1")?;
        }
        for i in 0..self.trips.len() {
            writeln!(out, "bin t{i}")?;
        }
        for j in 0..self.customer_count() {
            writeln!(out, "bin c{j}")?;
        }
        if let Some(idle) = &self.idle_cost {
            for k in 0..idle.len() {
                writeln!(out, "bin v{k}")?;
            }
        }
        Ok(())
    }
}

fn index_trips(
    trips: &[CandidateTrip],
    customers: &[Customer],
    vehicles: &[VehicleState],
) -> (Vec<TripVar>, Vec<CustomerId>, Vec<VehicleId>) {
    let c_index: HashMap<CustomerId, usize> =
        customers.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let v_index: HashMap<VehicleId, usize> =
        vehicles.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
    let vars = trips
        .iter()
        .map(|t| {
            let mut cs: Vec<usize> = t
                .customers
                .iter()
                .map(|id| *c_index.get(id).expect("trip customer is in the pool"))
                .collect();
            cs.sort_unstable();
            TripVar {
                vehicle: *v_index.get(&t.vehicle).expect("trip vehicle is in the fleet"),
                customers: cs,
                cost: t.cost,
            }
        })
        .collect();
    (
        vars,
        customers.iter().map(|c| c.id).collect(),
        vehicles.iter().map(|v| v.id).collect(),
    )
}

pub fn build_baseline_ilp(
    trips: &[CandidateTrip],
    customers: &[Customer],
    vehicles: &[VehicleState],
    penalty: f64,
) -> ILPInstance {
    let (trips, customer_ids, vehicle_ids) = index_trips(trips, customers, vehicles);
    ILPInstance {
        trips,
        customer_ids,
        vehicle_ids,
        penalty,
        idle_cost: None,
    }
}

/// Demand distribution, weight and partition for the regularized objective.
#[derive(Debug, Clone, Copy)]
pub struct Regularization<'a> {
    pub q: &'a ODDistribution,
    pub w_r: f64,
    pub partition: &'a PartitionResult,
}

impl Regularization<'_> {
    /// OD pair from the vehicle's current region to the region of its final
    /// dropoff (its own region when there is none).
    fn od_pair(&self, location: LinkId, last_dropoff: Option<LinkId>) -> usize {
        let o = self.partition.region_of(location);
        let d = last_dropoff.map_or(o, |l| self.partition.region_of(l));
        self.q.pair_index(o, d)
    }

    fn credit(&self, pair: usize, space: u32) -> f64 {
        self.w_r * regularizer_coefficient(self.q, pair, space)
    }
}

fn last_dropoff(stops: &[crate::rideshare::Stop]) -> Option<LinkId> {
    stops
        .iter()
        .rev()
        .find(|s| s.kind == StopKind::Dropoff)
        .map(|s| s.link)
}

/// Baseline costs minus the linearized KL credit. A trip leaves its vehicle
/// with `capacity − onboard − |customers|` free seats heading for the OD
/// pair of its final dropoff; an idle vehicle keeps its onboard-only plan.
#[allow(clippy::too_many_arguments)]
pub fn build_regularized_ilp(
    trips: &[CandidateTrip],
    customers: &[Customer],
    vehicles: &[VehicleState],
    reg: &Regularization,
    penalty: f64,
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> ILPInstance {
    assert!(reg.w_r >= 0.0, "regularization weight must be non-negative");
    let mut inst = build_baseline_ilp(trips, customers, vehicles, penalty);
    for (var, trip) in inst.trips.iter_mut().zip(trips) {
        let v = &vehicles[var.vehicle];
        let pair = reg.od_pair(v.location, last_dropoff(&trip.schedule.stops));
        let space = v
            .capacity
            .saturating_sub((v.onboard.len() + trip.customers.len()) as u32);
        var.cost -= reg.credit(pair, space);
    }
    let idle = vehicles
        .iter()
        .map(|v| {
            let last = solve_tsp_pd(v, &[], d, now, c).and_then(|s| last_dropoff(&s.stops));
            let pair = reg.od_pair(v.location, last);
            let space = v.capacity.saturating_sub(v.onboard.len() as u32);
            -reg.credit(pair, space)
        })
        .collect();
    inst.idle_cost = Some(idle);
    inst
}

/// Sends idle vehicles toward ignored customers: repeatedly matches the
/// pair with the shortest travel time to the customer's origin (ties to the
/// lower vehicle id, then lower customer id).
pub fn rebalance_ignored(
    ignored: &[Customer],
    idle: &[VehicleState],
    d: &DistanceMatrix,
) -> Vec<(VehicleId, CustomerId)> {
    let mut pairs: Vec<(f64, VehicleId, CustomerId, usize, usize)> = Vec::new();
    for (vi, v) in idle.iter().enumerate() {
        for (ci, c) in ignored.iter().enumerate() {
            pairs.push((d.get(v.location, c.origin), v.id, c.id, vi, ci));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut v_used = vec![false; idle.len()];
    let mut c_used = vec![false; ignored.len()];
    let mut out = Vec::new();
    for (_, vid, cid, vi, ci) in pairs {
        if v_used[vi] || c_used[ci] {
            continue;
        }
        v_used[vi] = true;
        c_used[ci] = true;
        out.push((vid, cid));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedding;
    use crate::rideshare::{Schedule, Stop};

    fn customer(id: u64, o: usize, d: usize) -> Customer {
        Customer {
            id,
            origin: o,
            destination: d,
            request_time: 0.0,
            pickup_deadline: 120.0,
        }
    }

    fn trip(vehicle: VehicleId, customers: &[u64], cost: f64, last: LinkId) -> CandidateTrip {
        CandidateTrip {
            vehicle,
            customers: customers.to_vec(),
            schedule: Schedule {
                stops: vec![Stop {
                    customer: customers[0],
                    kind: StopKind::Dropoff,
                    link: last,
                    time: 0.0,
                }],
                cost,
            },
            cost,
        }
    }

    #[test]
    fn no_trips_ignores_everyone() {
        let cs = [customer(1, 0, 1), customer(2, 1, 0)];
        let inst = build_baseline_ilp(&[], &cs, &[], DEFAULT_PENALTY);
        let sol = solve_ilp(&inst, SolveLimits::default());
        assert_eq!(sol.objective, 2.0 * DEFAULT_PENALTY);
        assert_eq!(sol.ignored, vec![1, 2]);
        assert!(sol.optimal);
    }

    #[test]
    fn cheap_trip_is_selected() {
        let cs = [customer(1, 0, 1)];
        let vs = [VehicleState::idle(7, 4, 0, 0.0)];
        let inst = build_baseline_ilp(&[trip(7, &[1], 50.0, 1)], &cs, &vs, DEFAULT_PENALTY);
        let sol = solve_ilp(&inst, SolveLimits::default());
        assert_eq!(sol.selected, vec![0]);
        assert_eq!(sol.served, vec![1]);
        assert_eq!(sol.objective, 50.0);
        assert_eq!(sol.vehicle_trip, vec![Some(0)]);
    }

    #[test]
    fn vehicle_takes_one_trip() {
        let cs = [customer(1, 0, 1), customer(2, 0, 1)];
        let vs = [VehicleState::idle(0, 4, 0, 0.0)];
        let trips = [trip(0, &[1], 10.0, 1), trip(0, &[2], 20.0, 1)];
        let inst = build_baseline_ilp(&trips, &cs, &vs, DEFAULT_PENALTY);
        let sol = solve_ilp(&inst, SolveLimits::default());
        assert_eq!(sol.selected, vec![0]);
        assert_eq!(sol.objective, 10.0 + DEFAULT_PENALTY);
        assert!(!inst.is_feasible(&[0, 1]));
    }

    fn two_region_setup() -> (PartitionResult, ODDistribution) {
        // Links 0,1 in region 0; links 2,3 in region 1.
        let pts = Embedding::from_rows(&[[0.0], [0.1], [5.0], [5.1]]);
        let p = PartitionResult::from_labels(&[0, 0, 1, 1], &pts);
        let q = ODDistribution::new(2, vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        (p, q)
    }

    fn chain(n: usize) -> DistanceMatrix {
        DistanceMatrix::from_rows(
            (0..n)
                .map(|i| (0..n).map(|j| 10.0 * (i as f64 - j as f64).abs()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_matches_baseline_costs() {
        let (p, q) = two_region_setup();
        let cs = [customer(1, 0, 3)];
        let vs = [VehicleState::idle(0, 4, 0, 0.0), VehicleState::idle(1, 4, 2, 0.0)];
        let trips = [trip(0, &[1], 30.0, 3), trip(1, &[1], 40.0, 3)];
        let reg = Regularization { q: &q, w_r: 0.0, partition: &p };
        let d = chain(4);
        let r = build_regularized_ilp(&trips, &cs, &vs, &reg, DEFAULT_PENALTY, &d, 0.0, &Constraints::default());
        let b = build_baseline_ilp(&trips, &cs, &vs, DEFAULT_PENALTY);
        assert_eq!(r.trips, b.trips);
        assert_eq!(r.idle_cost, Some(vec![0.0, 0.0]));
        let (rs, bs) = (solve_ilp(&r, SolveLimits::default()), solve_ilp(&b, SolveLimits::default()));
        assert_eq!(rs.objective, bs.objective);
        assert_eq!(rs.selected, bs.selected);
    }

    #[test]
    fn regularization_prefers_high_demand_pair() {
        // Two vehicles, equal trip cost, each left with 3 seats. Vehicle 0
        // heads for OD (0,0) with q = 0.4, vehicle 1 for (1,0) with q = 0.2;
        // idle credits use each vehicle's self pair with 4 seats.
        let (p, q) = two_region_setup();
        let cs = [customer(1, 0, 1)];
        let vs = [VehicleState::idle(0, 4, 1, 0.0), VehicleState::idle(1, 4, 2, 0.0)];
        let trips = [trip(0, &[1], 30.0, 1), trip(1, &[1], 30.0, 1)];
        let d = chain(4);
        let base = build_baseline_ilp(&trips, &cs, &vs, DEFAULT_PENALTY);
        let b0 = base.objective(&[0]);
        let b1 = base.objective(&[1]);
        assert_eq!(b0, b1);
        let reg = Regularization { q: &q, w_r: 100.0, partition: &p };
        let inst = build_regularized_ilp(&trips, &cs, &vs, &reg, DEFAULT_PENALTY, &d, 0.0, &Constraints::default());
        let via0 = 30.0 - 100.0 * 0.4 * 3f64.ln() - 100.0 * 0.3 * 4f64.ln();
        let via1 = 30.0 - 100.0 * 0.2 * 3f64.ln() - 100.0 * 0.4 * 4f64.ln();
        assert!((inst.objective(&[0]) - via0).abs() < 1e-9);
        assert!((inst.objective(&[1]) - via1).abs() < 1e-9);
        let sol = solve_ilp(&inst, SolveLimits::default());
        assert_eq!(sol.objective, inst.objective(&[0]).min(inst.objective(&[1])));
    }

    #[test]
    fn full_vehicle_gets_no_credit() {
        let (p, q) = two_region_setup();
        let cs = [customer(1, 0, 1)];
        let vs = [VehicleState::idle(0, 1, 0, 0.0)];
        let trips = [trip(0, &[1], 30.0, 1)];
        let reg = Regularization { q: &q, w_r: 100.0, partition: &p };
        let inst = build_regularized_ilp(&trips, &cs, &vs, &reg, DEFAULT_PENALTY, &chain(4), 0.0, &Constraints::default());
        assert_eq!(inst.trips[0].cost, 30.0);
    }

    #[test]
    fn lp_dump_layout() {
        let cs = [customer(1, 0, 1)];
        let vs = [VehicleState::idle(0, 4, 0, 0.0)];
        let mut inst = build_baseline_ilp(&[trip(0, &[1], 12.5, 1)], &cs, &vs, 3600.0);
        let mut buf = Vec::new();
        inst.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "min const 3600.0\nmin t0 12.5\nmin c0 -3600.0\nrow veh0 <= 1 t0:1\nrow cust0 = 0 t0:1 c0:-1\nbin t0\nbin c0\n"
        );
        inst.idle_cost = Some(vec![-0.25]);
        let mut buf = Vec::new();
        inst.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("min v0 -0.25\n"));
        assert!(text.contains("row veh0 = 1 t0:1 v0:1\n"));
        assert!(text.ends_with("bin v0\n"));
    }

    #[test]
    fn rebalance_examples() {
        let d = chain(10);
        let v = [VehicleState::idle(3, 4, 5, 0.0)];
        let cs = [customer(1, 0, 2), customer(2, 7, 8)];
        assert_eq!(rebalance_ignored(&cs, &v, &d), vec![(3, 2)]);
        assert!(rebalance_ignored(&cs, &[], &d).is_empty());
    }

    #[test]
    fn rebalance_two_by_two_against_matchings() {
        let d = chain(10);
        let vs = [VehicleState::idle(0, 4, 0, 0.0), VehicleState::idle(1, 4, 9, 0.0)];
        let cs = [customer(1, 1, 2), customer(2, 8, 7)];
        let greedy = rebalance_ignored(&cs, &vs, &d);
        let total = |m: &[(VehicleId, CustomerId)]| -> f64 {
            m.iter()
                .map(|&(v, c)| d.get(vs[v].location, cs[(c - 1) as usize].origin))
                .sum()
        };
        let straight = total(&[(0, 1), (1, 2)]);
        let crossed = total(&[(0, 2), (1, 1)]);
        assert_eq!(total(&greedy), straight.min(crossed));
        assert_eq!(greedy, vec![(0, 1), (1, 2)]);
    }
}
