//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mobility_core::assign::ILPInstance;
use mobility_core::cluster::PartitionResult;
use mobility_core::demand::ODDistribution;
use mobility_core::embed::Embedding;
use mobility_core::netgraph::{
    all_pairs_shortest_paths, build_movement_graph, generate_grid_network, DistanceMatrix,
    MovementGraph, MovementOptions, ShortestPaths,
};
use mobility_core::rideshare::{
    build_shareability_graph, generate_candidate_trips, CandidateTrip, Constraints, Customer,
    OnboardPassenger, ShareabilityGraph, StopKey, StopKind, VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Random integer weights closed under shortest paths (Floyd-Warshall),
/// so the matrix satisfies the triangle inequality.
pub fn random_metric(n: usize, rng: &mut impl Rng) -> DistanceMatrix {
    let mut d = vec![vec![0.0f64; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if i != j {
                *x = f64::from(rng.random_range(5u32..80));
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    DistanceMatrix::from_rows(d).unwrap()
}

pub fn random_customer(id: u64, n_links: usize, now: f64, c: &Constraints, rng: &mut impl Rng) -> Customer {
    let origin = rng.random_range(0..n_links);
    let mut destination = rng.random_range(0..n_links);
    while destination == origin {
        destination = rng.random_range(0..n_links);
    }
    let request_time = now - f64::from(rng.random_range(0u32..40));
    Customer {
        id,
        origin,
        destination,
        request_time,
        pickup_deadline: request_time + c.max_wait,
    }
}

pub fn random_onboard(id: u64, n_links: usize, now: f64, d: &DistanceMatrix, rng: &mut impl Rng) -> OnboardPassenger {
    let origin = rng.random_range(0..n_links);
    let mut destination = rng.random_range(0..n_links);
    while destination == origin {
        destination = rng.random_range(0..n_links);
    }
    let _ = d;
    OnboardPassenger {
        customer: id,
        origin,
        destination,
        request_time: now - f64::from(rng.random_range(60u32..120)),
        pickup_time: now - f64::from(rng.random_range(0u32..60)),
        delay_floor: 0.0,
    }
}

/// Best stop order by brute force over all permutations:
/// `(cost, stop keys)` of the cheapest feasible order, ties to the
/// lexicographically smallest key sequence.
pub fn tsp_oracle(
    v: &VehicleState,
    customers: &[Customer],
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> Option<(f64, Vec<StopKey>)> {
    // (key, link) for every stop.
    let mut stops: Vec<(StopKey, usize)> = Vec::new();
    for p in &v.onboard {
        stops.push(((p.customer, StopKind::Dropoff), p.destination));
    }
    for cu in customers {
        stops.push(((cu.id, StopKind::Pickup), cu.origin));
        stops.push(((cu.id, StopKind::Dropoff), cu.destination));
    }
    let mut best: Option<(f64, Vec<StopKey>)> = None;
    let mut order: Vec<usize> = (0..stops.len()).collect();
    permute(&mut order, 0, &mut |perm| {
        let Some(cost) = simulate_order(v, customers, &stops, perm, d, now, c) else {
            return;
        };
        let keys: Vec<StopKey> = perm.iter().map(|&i| stops[i].0).collect();
        let better = match &best {
            None => true,
            Some((bc, bk)) => cost < *bc || (cost == *bc && keys < *bk),
        };
        if better {
            best = Some((cost, keys));
        }
    });
    best
}

fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}

fn simulate_order(
    v: &VehicleState,
    customers: &[Customer],
    stops: &[(StopKey, usize)],
    perm: &[usize],
    d: &DistanceMatrix,
    now: f64,
    c: &Constraints,
) -> Option<f64> {
    let mut t = now.max(v.ready_time);
    let mut at = v.location;
    let mut load = v.onboard.len();
    if load > v.capacity as usize {
        return None;
    }
    let mut picked: Vec<Option<f64>> = vec![None; customers.len()];
    let mut cost = 0.0;
    for &i in perm {
        let ((id, kind), link) = stops[i];
        t += d.get(at, link);
        at = link;
        if let Some(p) = v.onboard.iter().find(|p| p.customer == id) {
            let delay = t - p.pickup_time - d.get(p.origin, p.destination);
            if delay > c.max_delay.max(p.delay_floor) {
                return None;
            }
            cost += delay;
            load -= 1;
            continue;
        }
        let j = customers.iter().position(|cu| cu.id == id).unwrap();
        let cu = &customers[j];
        match kind {
            StopKind::Pickup => {
                if t - cu.request_time > c.max_wait || t > cu.pickup_deadline {
                    return None;
                }
                load += 1;
                if load > v.capacity as usize {
                    return None;
                }
                picked[j] = Some(t);
            }
            StopKind::Dropoff => {
                let pick = picked[j]?;
                let shortest = d.get(cu.origin, cu.destination);
                if t - pick - shortest > c.max_delay {
                    return None;
                }
                cost += t - cu.request_time - shortest;
                load -= 1;
            }
        }
    }
    Some(cost)
}

/// Every vehicle clique by subset enumeration:
/// `(vehicle index, sorted customer indices)`.
pub fn clique_oracle(g: &ShareabilityGraph, max_customers: usize) -> BTreeSet<(usize, Vec<usize>)> {
    let nc = g.customer_count();
    let mut out = BTreeSet::new();
    for v in 0..g.vehicle_count() {
        let vn = g.vehicle_node(v);
        for mask in 1u32..(1 << nc) {
            let members: Vec<usize> = (0..nc).filter(|&i| mask >> i & 1 == 1).collect();
            if members.len() > max_customers {
                continue;
            }
            let clique = members.iter().all(|&a| g.has_edge(a, vn))
                && members
                    .iter()
                    .enumerate()
                    .all(|(x, &a)| members[x + 1..].iter().all(|&b| g.has_edge(a, b)));
            if clique {
                out.insert((v, members));
            }
        }
    }
    out
}

/// Minimum objective over all `2^n` trip subsets.
pub fn ilp_oracle(inst: &ILPInstance) -> (f64, Vec<usize>) {
    let n = inst.trips.len();
    assert!(n <= 20);
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|&t| mask >> t & 1 == 1).collect();
        if !inst.is_feasible(&s) {
            continue;
        }
        let v = inst.objective(&s);
        if v < best.0 {
            best = (v, s);
        }
    }
    best
}

/// Grid network with its movement graph, routes, a split into
/// `bands` vertical bands and a demand over those bands.
pub struct GridWorld {
    pub graph: MovementGraph,
    pub paths: ShortestPaths,
    pub partition: PartitionResult,
    pub q: ODDistribution,
}

impl GridWorld {
    pub fn new(rows: usize, cols: usize, bands: usize, q_weights: Vec<f64>) -> Self {
        let block = 100.0;
        let net = generate_grid_network(rows, cols, block, 10.0, 1).unwrap();
        let graph = build_movement_graph(&net, MovementOptions::default()).unwrap();
        let paths = all_pairs_shortest_paths(&graph).unwrap();
        let width = block * (cols - 1) as f64;
        let link_region: Vec<usize> = net
            .links()
            .iter()
            .map(|l| (((l.midpoint[0] / width) * bands as f64) as usize).min(bands - 1))
            .collect();
        let centers = (0..bands)
            .map(|r| link_region.iter().position(|&x| x == r).unwrap())
            .collect();
        Self {
            graph,
            paths,
            partition: PartitionResult {
                link_region,
                region_center_link: centers,
                means: vec![Vec::new(); bands],
            },
            q: ODDistribution::from_weights(bands, q_weights).unwrap(),
        }
    }

    pub fn d(&self) -> &DistanceMatrix {
        &self.paths.distances
    }
}

/// Random shareability graph with at most 12 nodes: `(graph, customers)`.
pub fn random_graph(seed: u64) -> (ShareabilityGraph, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = rng.random_range(1..=9);
    let nv = rng.random_range(1..=3);
    let density = rng.random_range(0.2..0.9);
    let mut edges = Vec::new();
    for a in 0..nc + nv {
        for b in a + 1..nc + nv {
            if a < nc && rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    (ShareabilityGraph::from_edges(nc, nv, &edges), nc)
}

pub struct Epoch {
    pub d: DistanceMatrix,
    pub customers: Vec<Customer>,
    pub vehicles: Vec<VehicleState>,
    pub trips: Vec<CandidateTrip>,
    pub partition: PartitionResult,
    pub q: ODDistribution,
    pub c: Constraints,
    pub now: f64,
}

/// A random epoch from the real candidate pipeline, trimmed to at most
/// `max_trips` candidates.
pub fn random_epoch(seed: u64, max_trips: usize) -> Epoch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let d = random_metric(n, &mut rng);
    let now = 50.0;
    let c = Constraints { max_wait: 90.0, max_delay: 90.0 };
    let customers: Vec<_> = (0..rng.random_range(2..=5))
        .map(|i| random_customer(i + 1, n, now, &c, &mut rng))
        .collect();
    let vehicles: Vec<_> = (0..rng.random_range(1..=3))
        .map(|i| VehicleState::idle(i, rng.random_range(1..=3), rng.random_range(0..n), now))
        .collect();
    let g = build_shareability_graph(&customers, &vehicles, &d, now, &c);
    let mut trips = generate_candidate_trips(&g, &customers, &vehicles, &d, now, &c, 3, 64).trips;
    while trips.len() > max_trips {
        trips.remove(rng.random_range(0..trips.len()));
    }
    let labels: Vec<usize> = (0..n).map(|l| usize::from(l >= n / 2)).collect();
    let pts = Embedding::from_rows(&(0..n).map(|l| [l as f64]).collect::<Vec<_>>());
    let weights = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
    Epoch {
        d,
        customers,
        vehicles,
        trips,
        partition: PartitionResult::from_labels(&labels, &pts),
        q: ODDistribution::from_weights(2, weights).unwrap(),
        c,
        now,
    }
}

/// 500 points around three well-separated 2-D centers with their true labels.
pub fn three_blobs(seed: u64) -> (Embedding, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let centers = [[0.0, 0.0], [12.0, 0.0], [6.0, 10.0]];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for i in 0..500 {
        let c = i % 3;
        rows.push([
            centers[c][0] + noise.sample(&mut rng),
            centers[c][1] + noise.sample(&mut rng),
        ]);
        truth.push(c);
    }
    (Embedding::from_rows(&rows), truth)
}
