//! Shareability graph, clique enumeration and candidate trip generation.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::tsp::{evaluate_order, solve_tsp_pd};
use super::{CandidateTrip, Constraints, Customer, StopKey, StopKind, VehicleState};
use crate::netgraph::DistanceMatrix;

/// Undirected graph over customers `0..C` followed by vehicles `C..C+V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareabilityGraph {
    n_customers: usize,
    n_vehicles: usize,
    adj: Vec<BTreeSet<usize>>,
}

impl ShareabilityGraph {
    pub fn empty(n_customers: usize, n_vehicles: usize) -> Self {
        Self {
            n_customers,
            n_vehicles,
            adj: vec![BTreeSet::new(); n_customers + n_vehicles],
        }
    }

    /// Panics on self loops, vehicle-vehicle edges or out-of-range nodes.
    pub fn from_edges(n_customers: usize, n_vehicles: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(n_customers, n_vehicles);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        let n = self.adj.len();
        assert!(a < n && b < n, "edge ({a}, {b}) outside {n} nodes");
        assert_ne!(a, b, "self loop on node {a}");
        assert!(
            !(self.is_vehicle(a) && self.is_vehicle(b)),
            "vehicle-vehicle edge ({a}, {b})"
        );
        self.adj[a].insert(b);
        self.adj[b].insert(a);
    }

    pub fn customer_count(&self) -> usize {
        self.n_customers
    }

    pub fn vehicle_count(&self) -> usize {
        self.n_vehicles
    }

    pub fn vehicle_node(&self, vehicle: usize) -> usize {
        self.n_customers + vehicle
    }

    pub fn is_vehicle(&self, node: usize) -> bool {
        node >= self.n_customers
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[node].iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }
}

/// Every valid order of the four stops of two customers.
fn pair_orders(a: u64, b: u64) -> Vec<[StopKey; 4]> {
    use StopKind::{Dropoff, Pickup};
    let stops = [(a, Pickup), (a, Dropoff), (b, Pickup), (b, Dropoff)];
    let mut out = Vec::with_capacity(6);
    for code in 0..256usize {
        let idx = [code & 3, (code >> 2) & 3, (code >> 4) & 3, (code >> 6) & 3];
        if (0..4).any(|x| idx[..x].contains(&idx[x])) {
            continue;
        }
        let order = idx.map(|x| stops[x]);
        let pos = |s: StopKey| order.iter().position(|&x| x == s).unwrap();
        if pos((a, Pickup)) < pos((a, Dropoff)) && pos((b, Pickup)) < pos((b, Dropoff)) {
            out.push(order);
        }
    }
    out
}

/// Whether a vehicle starting at either customer's origin at `now` can
/// serve both within their bounds, trying every valid stop order.
pub fn customers_shareable(
    c1: &Customer,
    c2: &Customer,
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> bool {
    if c1.id == c2.id {
        return false;
    }
    let orders = pair_orders(c1.id, c2.id);
    [c1.origin, c2.origin].iter().any(|&start| {
        let v = VehicleState::idle(usize::MAX, 2, start, now);
        orders
            .iter()
            .any(|o| evaluate_order(&v, &[*c1, *c2], o, d, now, c).is_some())
    })
}

pub fn vehicle_can_serve(
    v: &VehicleState,
    customer: &Customer,
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> bool {
    solve_tsp_pd(v, std::slice::from_ref(customer), d, now, c).is_some()
}

pub fn build_shareability_graph(
    customers: &[Customer],
    vehicles: &[VehicleState],
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> ShareabilityGraph {
    let nc = customers.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..nc {
        for j in i + 1..nc {
            pairs.push((i, j));
        }
        for v in 0..vehicles.len() {
            pairs.push((i, nc + v));
        }
    }
    let edges: Vec<(usize, usize)> = pairs
        .into_par_iter()
        .filter(|&(a, b)| {
            if b < nc {
                customers_shareable(&customers[a], &customers[b], d, now, c)
            } else {
                vehicle_can_serve(&vehicles[b - nc], &customers[a], d, now, c)
            }
        })
        .collect();
    ShareabilityGraph::from_edges(nc, vehicles.len(), &edges)
}

/// Vehicle-customer cliques, as `(vehicle index, sorted customer indices)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueEnumeration {
    pub cliques: Vec<(usize, Vec<usize>)>,
    /// Some vehicle hit the per-vehicle clique cap; its list is truncated
    /// to the smallest cliques.
    pub overflow: bool,
}

fn bron_kerbosch(
    g: &ShareabilityGraph,
    r: &mut Vec<usize>,
    mut p: BTreeSet<usize>,
    mut x: BTreeSet<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() {
            let mut c = r.clone();
            c.sort_unstable();
            out.push(c);
        }
        return;
    }
    let pivot = p
        .iter()
        .chain(&x)
        .copied()
        .max_by_key(|&u| (p.iter().filter(|&&w| g.has_edge(u, w)).count(), std::cmp::Reverse(u)))
        .expect("p is non-empty");
    let candidates: Vec<usize> = p.iter().copied().filter(|&w| !g.has_edge(pivot, w)).collect();
    for w in candidates {
        let np = p.iter().copied().filter(|&u| g.has_edge(w, u)).collect();
        let nx = x.iter().copied().filter(|&u| g.has_edge(w, u)).collect();
        r.push(w);
        bron_kerbosch(g, r, np, nx, out);
        r.pop();
        p.remove(&w);
        x.insert(w);
    }
}

fn combinations(items: &[usize], k: usize, f: &mut impl FnMut(&[usize]) -> bool) -> bool {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == k {
            return f(cur);
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            let go = rec(items, k, i + 1, cur, f);
            cur.pop();
            if !go {
                return false;
            }
        }
        true
    }
    rec(items, k, 0, &mut Vec::with_capacity(k), f)
}

/// Every clique with exactly one vehicle and 1..=`max_customers`
/// customers: maximal cliques of each vehicle's neighborhood by
/// Bron-Kerbosch with pivoting, expanded to their sub-cliques.
pub fn enumerate_cliques(
    g: &ShareabilityGraph,
    max_customers: usize,
    max_per_vehicle: usize,
) -> CliqueEnumeration {
    assert!(max_customers >= 1, "max_customers must be at least 1");
    let per_vehicle: Vec<(Vec<Vec<usize>>, bool)> = (0..g.vehicle_count())
        .into_par_iter()
        .map(|v| {
            let node = g.vehicle_node(v);
            let hood: BTreeSet<usize> = g.neighbors(node).collect();
            if hood.is_empty() {
                return (Vec::new(), false);
            }
            let mut maximal = Vec::new();
            bron_kerbosch(g, &mut Vec::new(), hood, BTreeSet::new(), &mut maximal);
            let mut found: BTreeSet<Vec<usize>> = BTreeSet::new();
            let mut overflow = false;
            'sizes: for k in 1..=max_customers {
                let mut size_k: BTreeSet<Vec<usize>> = BTreeSet::new();
                for m in &maximal {
                    let go = combinations(m, k, &mut |s| {
                        size_k.insert(s.to_vec());
                        found.len() + size_k.len() <= max_per_vehicle
                    });
                    if !go {
                        overflow = true;
                        found.extend(size_k.into_iter().take(max_per_vehicle - found.len()));
                        break 'sizes;
                    }
                }
                found.extend(size_k);
            }
            (found.into_iter().collect(), overflow)
        })
        .collect();
    let mut cliques = Vec::new();
    let mut overflow = false;
    for (v, (sets, o)) in per_vehicle.into_iter().enumerate() {
        overflow |= o;
        cliques.extend(sets.into_iter().map(|s| (v, s)));
    }
    CliqueEnumeration { cliques, overflow }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Sorted by vehicle, then customer set.
    pub trips: Vec<CandidateTrip>,
    pub overflow: bool,
}

/// Schedules every vehicle clique and keeps the feasible ones. Trip cost is
/// the schedule cost minus the cost of the vehicle's onboard-only
/// schedule, so an unassigned vehicle is the zero-cost baseline.
#[allow(clippy::too_many_arguments)]
pub fn generate_candidate_trips(
    g: &ShareabilityGraph,
    customers: &[Customer],
    vehicles: &[VehicleState],
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
    max_customers: usize,
    max_per_vehicle: usize,
) -> CandidateSet {
    let cliques = enumerate_cliques(g, max_customers, max_per_vehicle);
    let base: Vec<Option<f64>> = vehicles
        .par_iter()
        .map(|v| solve_tsp_pd(v, &[], d, now, c).map(|s| s.cost))
        .collect();
    let trips = cliques
        .cliques
        .par_iter()
        .filter_map(|(v, members)| {
            let base = base[*v]?;
            let mut cs: Vec<Customer> = members.iter().map(|&i| customers[i]).collect();
            cs.sort_by_key(|c| c.id);
            let schedule = solve_tsp_pd(&vehicles[*v], &cs, d, now, c)?;
            Some(CandidateTrip {
                vehicle: vehicles[*v].id,
                customers: cs.iter().map(|c| c.id).collect(),
                cost: schedule.cost - base,
                schedule,
            })
        })
        .collect();
    CandidateSet {
        trips,
        overflow: cliques.overflow,
    }
}
