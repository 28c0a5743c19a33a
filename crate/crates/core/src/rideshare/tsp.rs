//! Exact single-vehicle pickup-and-delivery scheduling.
//!
//! States are (visited stop set, last stop). Each state keeps a Pareto set
//! of labels over arrival time, accumulated cost and the pickup times of
//! customers still on board, since a later pickup loosens that customer's
//! delay bound. Costs accrue at dropoffs: wait plus delay telescopes to
//! `dropoff − request − shortest`, which does not depend on the pickup time.

use super::{
    Constraints, Customer, OnboardPassenger, Schedule, Stop, StopKey, StopKind, VehicleState,
};
use crate::netgraph::{DistanceMatrix, LinkId};

#[derive(Clone, Copy)]
enum Role {
    OnboardDrop { pickup_time: f64, shortest: f64, bound: f64 },
    Pick { j: usize, deadline: f64 },
    Drop { j: usize, request: f64, shortest: f64, bound: f64 },
}

struct StopSpec {
    key: StopKey,
    link: LinkId,
    role: Role,
}

struct Problem<'a> {
    d: &'a DistanceMatrix,
    stops: Vec<StopSpec>,
    n_onboard: usize,
    n_new: usize,
    capacity: usize,
    start_link: LinkId,
    start_time: f64,
}

#[derive(Clone)]
struct Label {
    time: f64,
    cost: f64,
    picks: Vec<f64>,
    path: Vec<u8>,
}

impl<'a> Problem<'a> {
    fn new(
        v: &VehicleState,
        customers: &[Customer],
        d: &'a DistanceMatrix,
        now: f64,
        c: &Constraints,
    ) -> Self {
        let mut stops = Vec::with_capacity(v.onboard.len() + 2 * customers.len());
        for p in &v.onboard {
            stops.push(StopSpec {
                key: (p.customer, StopKind::Dropoff),
                link: p.destination,
                role: Role::OnboardDrop {
                    pickup_time: p.pickup_time,
                    shortest: d.get(p.origin, p.destination),
                    bound: c.max_delay.max(p.delay_floor),
                },
            });
        }
        for (j, cu) in customers.iter().enumerate() {
            let shortest = d.get(cu.origin, cu.destination);
            stops.push(StopSpec {
                key: (cu.id, StopKind::Pickup),
                link: cu.origin,
                role: Role::Pick {
                    j,
                    deadline: cu.pickup_deadline.min(cu.request_time + c.max_wait),
                },
            });
            stops.push(StopSpec {
                key: (cu.id, StopKind::Dropoff),
                link: cu.destination,
                role: Role::Drop {
                    j,
                    request: cu.request_time,
                    shortest,
                    bound: c.max_delay,
                },
            });
        }
        Self {
            d,
            stops,
            n_onboard: v.onboard.len(),
            n_new: customers.len(),
            capacity: v.capacity as usize,
            start_link: v.location,
            start_time: now.max(v.ready_time),
        }
    }

    fn load(&self, mask: u32) -> usize {
        let dropped_onboard = (mask & ((1u32 << self.n_onboard) - 1)).count_ones() as usize;
        let mut load = self.n_onboard - dropped_onboard;
        for j in 0..self.n_new {
            let p = self.n_onboard + 2 * j;
            if mask & (1 << p) != 0 && mask & (1 << (p + 1)) == 0 {
                load += 1;
            }
        }
        load
    }

    fn start(&self) -> Label {
        Label {
            time: self.start_time,
            cost: 0.0,
            picks: vec![f64::NAN; self.n_new],
            path: Vec::new(),
        }
    }

    /// Appends stop `next` to a label whose visited set is `mask`.
    fn extend(&self, label: &Label, mask: u32, next: usize) -> Option<Label> {
        let from = label.path.last().map_or(self.start_link, |&s| self.stops[s as usize].link);
        let spec = &self.stops[next];
        let t = label.time + self.d.get(from, spec.link);
        let mut out = Label {
            time: t,
            cost: label.cost,
            picks: label.picks.clone(),
            path: label.path.clone(),
        };
        match spec.role {
            Role::OnboardDrop { pickup_time, shortest, bound } => {
                let delay = t - pickup_time - shortest;
                if !(delay <= bound) {
                    return None;
                }
                out.cost += delay;
            }
            Role::Pick { j, deadline } => {
                if self.load(mask) + 1 > self.capacity || !(t <= deadline) {
                    return None;
                }
                out.picks[j] = t;
            }
            Role::Drop { j, request, shortest, bound } => {
                let pick = label.picks[j];
                if pick.is_nan() || !(t - pick - shortest <= bound) {
                    return None;
                }
                out.cost += t - request - shortest;
            }
        }
        out.path.push(next as u8);
        Some(out)
    }

    fn path_less(&self, a: &[u8], b: &[u8]) -> bool {
        let ka = a.iter().map(|&s| self.stops[s as usize].key);
        let kb = b.iter().map(|&s| self.stops[s as usize].key);
        ka.lt(kb)
    }

    /// `a` may replace `b`: no worse on every resource and lexicographically
    /// earlier, so no completion of `b` can beat the same completion of `a`.
    fn dominates(&self, a: &Label, b: &Label) -> bool {
        a.time <= b.time
            && a.cost <= b.cost
            && a.picks
                .iter()
                .zip(&b.picks)
                .all(|(x, y)| x.is_nan() || x >= y)
            && self.path_less(&a.path, &b.path)
    }

    fn insert(&self, bucket: &mut Vec<Label>, label: Label) {
        if bucket.iter().any(|b| self.dominates(b, &label)) {
            return;
        }
        bucket.retain(|b| !self.dominates(&label, b));
        bucket.push(label);
    }

    fn schedule(&self, label: &Label) -> Schedule {
        let mut t = self.start_time;
        let mut at = self.start_link;
        let stops = label
            .path
            .iter()
            .map(|&s| {
                let spec = &self.stops[s as usize];
                t += self.d.get(at, spec.link);
                at = spec.link;
                Stop {
                    customer: spec.key.0,
                    kind: spec.key.1,
                    link: spec.link,
                    time: t,
                }
            })
            .collect();
        Schedule {
            stops,
            cost: label.cost,
        }
    }

    fn solve(&self) -> Option<Schedule> {
        if self.n_onboard > self.capacity {
            return None;
        }
        let s = self.stops.len();
        assert!(s <= 16, "too many stops for exact scheduling: {s}");
        if s == 0 {
            return Some(Schedule {
                stops: Vec::new(),
                cost: 0.0,
            });
        }
        let full = (1u32 << s) - 1;
        let mut table: Vec<Vec<Label>> = vec![Vec::new(); (1usize << s) * s];
        let start = self.start();
        for next in 0..s {
            if let Some(l) = self.extend(&start, 0, next) {
                self.insert(&mut table[(1usize << next) * s + next], l);
            }
        }
        for mask in 1..full {
            for last in 0..s {
                if mask & (1 << last) == 0 {
                    continue;
                }
                let labels = std::mem::take(&mut table[mask as usize * s + last]);
                for l in &labels {
                    for next in 0..s {
                        if mask & (1 << next) != 0 {
                            continue;
                        }
                        if let Some(nl) = self.extend(l, mask, next) {
                            let nm = (mask | (1 << next)) as usize;
                            self.insert(&mut table[nm * s + next], nl);
                        }
                    }
                }
            }
        }
        let mut best: Option<&Label> = None;
        for last in 0..s {
            for l in &table[full as usize * s + last] {
                let better = match best {
                    None => true,
                    Some(b) => l.cost < b.cost || (l.cost == b.cost && self.path_less(&l.path, &b.path)),
                };
                if better {
                    best = Some(l);
                }
            }
        }
        best.map(|l| self.schedule(l))
    }
}

/// Minimum-cost schedule serving `customers` plus the vehicle's onboard
/// passengers, or `None` when no stop order meets every constraint. Ties
/// go to the lexicographically smallest stop sequence.
pub fn solve_tsp_pd(
    v: &VehicleState,
    customers: &[Customer],
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> Option<Schedule> {
    Problem::new(v, customers, d, now, c).solve()
}

/// Simulates one explicit stop order; `None` if the order is incomplete,
/// breaks precedence or capacity, or violates a time bound.
pub fn evaluate_order(
    v: &VehicleState,
    customers: &[Customer],
    order: &[StopKey],
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> Option<Schedule> {
    let p = Problem::new(v, customers, d, now, c);
    if order.len() != p.stops.len() || p.n_onboard > p.capacity {
        return None;
    }
    let mut label = p.start();
    let mut mask = 0u32;
    for key in order {
        let idx = p.stops.iter().position(|s| s.key == *key)?;
        if mask & (1 << idx) != 0 {
            return None;
        }
        label = p.extend(&label, mask, idx)?;
        mask |= 1 << idx;
    }
    Some(p.schedule(&label))
}

/// If the onboard passengers alone can no longer be dropped within their
/// bounds (travel times changed after pickup), raises each passenger's
/// delay floor to its delay under the best unconstrained dropoff order.
/// Returns whether any floor changed.
pub fn relax_onboard_bounds(
    v: &mut VehicleState,
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> bool {
    if solve_tsp_pd(v, &[], d, now, c).is_some() {
        return false;
    }
    let mut free = v.clone();
    free.onboard.iter_mut().for_each(|p| p.delay_floor = f64::INFINITY);
    let sched = solve_tsp_pd(&free, &[], d, now, c).expect("dropoff-only schedules are feasible");
    for p in &mut v.onboard {
        let stop = sched
            .stops
            .iter()
            .find(|s| s.customer == p.customer)
            .expect("every onboard passenger has a dropoff");
        p.delay_floor = onboard_delay(p, stop.time, d);
    }
    true
}

fn onboard_delay(p: &OnboardPassenger, drop_time: f64, d: &DistanceMatrix) -> f64 {
    drop_time - p.pickup_time - d.get(p.origin, p.destination)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Links 0..n in a line, 10 s per hop in either direction.
    fn chain(n: usize) -> DistanceMatrix {
        DistanceMatrix::from_rows(
            (0..n)
                .map(|i| (0..n).map(|j| 10.0 * (i as f64 - j as f64).abs()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn customer(id: u64, o: usize, dest: usize, t: f64) -> Customer {
        Customer {
            id,
            origin: o,
            destination: dest,
            request_time: t,
            pickup_deadline: t + 120.0,
        }
    }

    #[test]
    fn single_customer_at_vehicle() {
        let d = chain(4);
        let v = VehicleState::idle(0, 4, 1, 0.0);
        let s = solve_tsp_pd(&v, &[customer(5, 1, 3, 0.0)], &d, 0.0, &Constraints::default()).unwrap();
        assert_eq!(s.cost, 0.0);
        assert_eq!(s.keys(), vec![(5, StopKind::Pickup), (5, StopKind::Dropoff)]);
        assert_eq!(s.stops[1].time, 20.0);
    }

    #[test]
    fn two_customers_on_chain() {
        // Vehicle at 0; customers 0->3 and 1->2 ride together with no detour.
        let d = chain(4);
        let v = VehicleState::idle(0, 4, 0, 0.0);
        let cs = [customer(1, 0, 3, 0.0), customer(2, 1, 2, 0.0)];
        let s = solve_tsp_pd(&v, &cs, &d, 0.0, &Constraints::default()).unwrap();
        // Customer 2 waits 10 s; nobody is delayed.
        assert_eq!(s.cost, 10.0);
        let (w, dl) = s.wait_and_delay(&cs[1], &d).unwrap();
        assert_eq!((w, dl), (10.0, 0.0));
    }

    #[test]
    fn capacity_blocks_pickup() {
        let d = chain(4);
        let mut v = VehicleState::idle(0, 1, 0, 0.0);
        v.onboard.push(OnboardPassenger {
            customer: 9,
            origin: 0,
            destination: 3,
            request_time: 0.0,
            pickup_time: 0.0,
            delay_floor: 0.0,
        });
        let c = customer(1, 1, 2, 0.0);
        // Must drop 9 at link 3 first, then return to 1: pickup at 50 s.
        let s = solve_tsp_pd(&v, &[c], &d, 0.0, &Constraints::default()).unwrap();
        assert_eq!(s.keys()[0], (9, StopKind::Dropoff));
        assert_eq!(s.stops[1].time, 50.0);
        v.capacity = 0;
        assert!(solve_tsp_pd(&v, &[c], &d, 0.0, &Constraints::default()).is_none());
    }

    #[test]
    fn deadline_and_delay_bounds() {
        let d = chain(20);
        let v = VehicleState::idle(0, 4, 19, 0.0);
        // 190 s away from pickup with a 120 s wait limit.
        assert!(solve_tsp_pd(&v, &[customer(1, 0, 1, 0.0)], &d, 0.0, &Constraints::default()).is_none());
        let tight = Constraints { max_wait: 60.0, max_delay: 5.0 };
        let v = VehicleState::idle(0, 4, 0, 0.0);
        // Both board at link 0 and customer 2 is dropped on the way.
        let cs = [customer(1, 0, 5, 0.0), customer(2, 0, 1, 0.0)];
        let s = solve_tsp_pd(&v, &cs, &d, 0.0, &tight).unwrap();
        for c in &cs {
            let (w, dl) = s.wait_and_delay(c, &d).unwrap();
            assert!(w <= 60.0 && dl <= 5.0);
        }
        // Opposite directions: riding together or serving in turn both break a bound.
        let opposite = [customer(1, 5, 0, 0.0), customer(2, 5, 10, 0.0)];
        let v = VehicleState::idle(0, 4, 5, 0.0);
        assert!(solve_tsp_pd(&v, &opposite, &d, 0.0, &tight).is_none());
    }

    #[test]
    fn evaluate_order_matches_solution() {
        let d = chain(6);
        let v = VehicleState::idle(0, 4, 2, 3.0);
        let cs = [customer(4, 1, 5, 0.0), customer(2, 3, 0, 0.0)];
        let s = solve_tsp_pd(&v, &cs, &d, 0.0, &Constraints::unbounded()).unwrap();
        let again = evaluate_order(&v, &cs, &s.keys(), &d, 0.0, &Constraints::unbounded()).unwrap();
        assert_eq!(again, s);
        let bad = [(2, StopKind::Dropoff), (2, StopKind::Pickup), (4, StopKind::Pickup), (4, StopKind::Dropoff)];
        assert!(evaluate_order(&v, &cs, &bad, &d, 0.0, &Constraints::unbounded()).is_none());
        assert!(evaluate_order(&v, &cs, &bad[..2], &d, 0.0, &Constraints::unbounded()).is_none());
    }

    #[test]
    fn relaxation_restores_feasibility() {
        let d = chain(30);
        let mut v = VehicleState::idle(0, 4, 0, 0.0);
        v.onboard.push(OnboardPassenger {
            customer: 1,
            origin: 0,
            destination: 29,
            request_time: 0.0,
            pickup_time: -300.0,
            delay_floor: 0.0,
        });
        let c = Constraints::default();
        assert!(solve_tsp_pd(&v, &[], &d, 0.0, &c).is_none());
        assert!(relax_onboard_bounds(&mut v, &d, 0.0, &c));
        assert_eq!(v.onboard[0].delay_floor, 300.0);
        assert!(solve_tsp_pd(&v, &[], &d, 0.0, &c).is_some());
        assert!(!relax_onboard_bounds(&mut v, &d, 0.0, &c));
    }
}
