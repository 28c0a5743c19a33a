//! Best-first branch and bound for the assignment program.
//!
//! With every customer ignored and every vehicle idle as the starting
//! point, selecting trip `t` changes the objective by
//! `gain_t = c_t − D·|C_t| − idle_{v(t)}`. The problem is then a weighted
//! set packing over trips (vehicles and customers as disjoint resources).
//! Trips sharing no vehicle or customer, directly or transitively, form
//! independent components that are searched separately. Within a component
//! the search decides vehicles in index order: one child per compatible
//! trip, plus the child leaving the vehicle without one.
//!
//! The node bound is the largest of three admissible bounds over the
//! undecided vehicles: each vehicle's best remaining gain, each free
//! customer's best per-customer share of a trip gain, and a Lagrangian
//! bound whose customer multipliers are the duals of the root packing LP.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use fixedbitset::FixedBitSet;
use ordered_float::OrderedFloat;

use super::lp::solve_packing_lp;
use super::{AssignmentSolution, ILPInstance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveLimits {
    /// Wall-clock budget; results then depend on machine speed.
    pub time_budget: Option<Duration>,
    /// Deterministic budget on expanded nodes, per component.
    pub node_limit: Option<usize>,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            time_budget: None,
            node_limit: Some(200_000),
        }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    value: f64,
    /// Next vehicle position to decide.
    depth: usize,
    customers: FixedBitSet,
    chosen: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: smallest bound first, then earliest created.
    fn cmp(&self, other: &Self) -> Ordering {
        OrderedFloat(other.bound)
            .cmp(&OrderedFloat(self.bound))
            .then(other.seq.cmp(&self.seq))
    }
}

/// One independent group of trips.
struct Component<'a> {
    inst: &'a ILPInstance,
    gain: &'a [f64],
    /// Trips per vehicle, vehicles in index order, trips ascending.
    by_vehicle: Vec<Vec<usize>>,
    customers: Vec<usize>,
    /// Lagrange multiplier per customer (indexed globally).
    mu: Vec<f64>,
}

impl Component<'_> {
    fn compatible(&self, t: usize, used: &FixedBitSet) -> bool {
        self.inst.trips[t].customers.iter().all(|&c| !used.contains(c))
    }

    fn reduced(&self, t: usize) -> f64 {
        self.gain[t] + self.inst.trips[t].customers.iter().map(|&c| self.mu[c]).sum::<f64>()
    }

    /// Lower bound on the gain still obtainable from vehicles `depth..`.
    fn bound(&self, depth: usize, used: &FixedBitSet) -> f64 {
        let mut by_vehicle = 0.0;
        let mut lagrange = 0.0;
        let mut share = vec![0.0f64; self.inst.customer_count()];
        let mut seen = FixedBitSet::with_capacity(self.inst.customer_count());
        for trips in &self.by_vehicle[depth..] {
            let (mut best, mut best_reduced) = (0.0f64, 0.0f64);
            for &t in trips {
                if !self.compatible(t, used) {
                    continue;
                }
                let g = self.gain[t];
                best = best.min(g);
                best_reduced = best_reduced.min(self.reduced(t));
                let cs = &self.inst.trips[t].customers;
                let s = g / cs.len() as f64;
                for &c in cs {
                    share[c] = share[c].min(s);
                    seen.insert(c);
                }
            }
            by_vehicle += best;
            lagrange += best_reduced;
        }
        let by_customer: f64 = share.iter().sum();
        lagrange -= seen.ones().map(|c| self.mu[c]).sum::<f64>();
        by_vehicle.max(by_customer).max(lagrange)
    }

    /// Vehicles in order, each taking its best still-compatible trip by
    /// `score`.
    fn greedy(&self, score: impl Fn(usize) -> f64) -> (f64, Vec<usize>) {
        let mut order: Vec<usize> = self.by_vehicle.iter().flatten().copied().collect();
        order.sort_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)));
        let mut vehicles = FixedBitSet::with_capacity(self.inst.vehicle_count());
        let mut used = FixedBitSet::with_capacity(self.inst.customer_count());
        let mut chosen = Vec::new();
        let mut value = 0.0;
        for t in order {
            let v = self.inst.trips[t].vehicle;
            if !vehicles.contains(v) && self.compatible(t, &used) {
                vehicles.insert(v);
                used.extend(self.inst.trips[t].customers.iter().copied());
                value += self.gain[t];
                chosen.push(t);
            }
        }
        chosen.sort_unstable();
        (value, chosen)
    }

    /// Sets the multipliers to the customer-row duals of the packing LP.
    /// Returns the LP optimum when it is integral.
    fn fit_multipliers(&mut self) -> Option<Vec<usize>> {
        let nv = self.by_vehicle.len();
        let mut row_of = vec![usize::MAX; self.inst.customer_count()];
        for (k, &c) in self.customers.iter().enumerate() {
            row_of[c] = nv + k;
        }
        let trips: Vec<usize> = self.by_vehicle.iter().flatten().copied().collect();
        let mut cols = Vec::with_capacity(trips.len());
        for (k, ts) in self.by_vehicle.iter().enumerate() {
            for &t in ts {
                let mut rows = vec![k];
                rows.extend(self.inst.trips[t].customers.iter().map(|&c| row_of[c]));
                cols.push((self.gain[t], rows));
            }
        }
        let lp = solve_packing_lp(nv + self.customers.len(), &cols)?;
        for (k, &c) in self.customers.iter().enumerate() {
            self.mu[c] = lp.duals[nv + k];
        }
        let integral = lp.x.iter().all(|&x| x < 1e-9 || x > 1.0 - 1e-9);
        integral.then(|| {
            let mut chosen: Vec<usize> = trips
                .iter()
                .zip(&lp.x)
                .filter(|(_, &x)| x > 0.5)
                .map(|(&t, _)| t)
                .collect();
            chosen.sort_unstable();
            chosen
        })
    }
}

/// Groups useful trips into components connected through shared vehicles
/// or customers.
fn components(inst: &ILPInstance, useful: &[usize]) -> Vec<Vec<usize>> {
    let nv = inst.vehicle_count();
    let mut parent: Vec<usize> = (0..nv + inst.customer_count()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &t in useful {
        let trip = &inst.trips[t];
        for &c in &trip.customers {
            let (a, b) = (find(&mut parent, trip.vehicle), find(&mut parent, nv + c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &t in useful {
        let root = find(&mut parent, inst.trips[t].vehicle);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(t),
            None => groups.push((root, vec![t])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

struct Outcome {
    chosen: Vec<usize>,
    optimal: bool,
    nodes: usize,
}

fn solve_component(
    inst: &ILPInstance,
    gain: &[f64],
    trips: &[usize],
    limits: SolveLimits,
    start: Instant,
) -> Outcome {
    let mut vehicles: Vec<usize> = trips.iter().map(|&t| inst.trips[t].vehicle).collect();
    vehicles.sort_unstable();
    vehicles.dedup();
    let by_vehicle: Vec<Vec<usize>> = vehicles
        .iter()
        .map(|&v| trips.iter().copied().filter(|&t| inst.trips[t].vehicle == v).collect())
        .collect();
    let mut customers: Vec<usize> = trips
        .iter()
        .flat_map(|&t| inst.trips[t].customers.iter().copied())
        .collect();
    customers.sort_unstable();
    customers.dedup();
    let mut comp = Component {
        inst,
        gain,
        by_vehicle,
        customers,
        mu: vec![0.0; inst.customer_count()],
    };

    let objective = |chosen: &[usize]| chosen.iter().map(|&t| gain[t]).sum::<f64>();
    let (mut best_value, mut best) = comp.greedy(|t| gain[t]);
    if comp.by_vehicle.len() > 1 {
        let mut candidates = Vec::new();
        if let Some(chosen) = comp.fit_multipliers() {
            if inst.is_feasible(&chosen) {
                candidates.push((objective(&chosen), chosen));
            }
        }
        candidates.push(comp.greedy(|t| comp.reduced(t)));
        for (v, c) in candidates {
            if v < best_value {
                (best_value, best) = (v, c);
            }
        }
    }
    // Gains are summed in search order but compared on the canonical
    // (index-ordered) sum. Only improvements beyond rounding replace the
    // incumbent, so near-ties keep the earlier solution.
    best_value = objective(&best);
    let slack = |v: f64| 1e-9 * (1.0 + v.abs());

    let n_customers = inst.customer_count();
    let root = FixedBitSet::with_capacity(n_customers);
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: comp.bound(0, &root),
        seq,
        value: 0.0,
        depth: 0,
        customers: root,
        chosen: Vec::new(),
    });
    let depth_end = comp.by_vehicle.len();
    let mut nodes = 0;
    let mut optimal = true;
    while let Some(node) = heap.pop() {
        if node.bound >= best_value - slack(best_value) {
            break;
        }
        if limits.node_limit.is_some_and(|n| nodes >= n)
            || limits.time_budget.is_some_and(|b| start.elapsed() >= b)
        {
            optimal = false;
            break;
        }
        nodes += 1;
        let k = node.depth;
        let options = comp.by_vehicle[k]
            .iter()
            .copied()
            .filter(|&t| comp.compatible(t, &node.customers))
            .map(Some)
            .chain([None]);
        for option in options {
            let mut used = node.customers.clone();
            let mut chosen = node.chosen.clone();
            let mut value = node.value;
            if let Some(t) = option {
                used.extend(inst.trips[t].customers.iter().copied());
                chosen.push(t);
                value += gain[t];
                if value < best_value - slack(best_value) {
                    let canonical = objective(&chosen);
                    if canonical < best_value - slack(best_value) {
                        best_value = canonical;
                        best = chosen.clone();
                        best.sort_unstable();
                    }
                }
            }
            if k + 1 == depth_end {
                continue;
            }
            let bound = value + comp.bound(k + 1, &used);
            if bound < best_value - slack(best_value) {
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    value,
                    depth: k + 1,
                    customers: used,
                    chosen,
                });
            }
        }
    }

    Outcome {
        chosen: best,
        optimal,
        nodes,
    }
}

/// Solves to optimality unless a limit stops the search first, in which case
/// the best selection found is returned with `optimal = false`.
pub fn solve_ilp(inst: &ILPInstance, limits: SolveLimits) -> AssignmentSolution {
    let idle = |v: usize| inst.idle_cost.as_ref().map_or(0.0, |c| c[v]);
    let gain: Vec<f64> = inst
        .trips
        .iter()
        .map(|t| t.cost - inst.penalty * t.customers.len() as f64 - idle(t.vehicle))
        .collect();
    let useful: Vec<usize> = (0..inst.trips.len()).filter(|&t| gain[t] < 0.0).collect();
    let start = Instant::now();
    let mut selected = Vec::new();
    let mut optimal = true;
    let mut nodes = 0;
    for trips in components(inst, &useful) {
        let out = solve_component(inst, &gain, &trips, limits, start);
        selected.extend(out.chosen);
        optimal &= out.optimal;
        nodes += out.nodes;
    }
    selected.sort_unstable();

    let sol = inst.solution(selected, optimal, nodes);
    debug_assert!(inst.is_feasible(&sol.selected));
    sol
}
