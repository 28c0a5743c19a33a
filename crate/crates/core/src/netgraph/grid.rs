//! Synthetic Manhattan-grid networks.

use super::{Link, NetworkError, RoadNetwork};

/// Bidirectional `rows x cols` grid; every street segment becomes two
/// opposing links with identical attributes.
pub fn generate_grid_network(
    rows: usize,
    cols: usize,
    block_length: f64,
    speed: f64,
    lanes: u32,
) -> Result<RoadNetwork, NetworkError> {
    grid_with(rows, cols, block_length, lanes, |_, _| speed)
}

/// Grid whose perimeter streets run at `ring_speed` and whose interior
/// streets run at `core_speed`, giving travel times that disagree with
/// straight-line geometry.
pub fn generate_ring_core_network(
    rows: usize,
    cols: usize,
    block_length: f64,
    ring_speed: f64,
    core_speed: f64,
    lanes: u32,
) -> Result<RoadNetwork, NetworkError> {
    let on_ring = move |(r0, c0): (usize, usize), (r1, c1): (usize, usize)| {
        (r0 == r1 && (r0 == 0 || r0 == rows - 1)) || (c0 == c1 && (c0 == 0 || c0 == cols - 1))
    };
    grid_with(rows, cols, block_length, lanes, move |a, b| {
        if on_ring(a, b) {
            ring_speed
        } else {
            core_speed
        }
    })
}

fn grid_with(
    rows: usize,
    cols: usize,
    block_length: f64,
    lanes: u32,
    speed_of: impl Fn((usize, usize), (usize, usize)) -> f64,
) -> Result<RoadNetwork, NetworkError> {
    if rows < 2 || cols < 2 {
        return Err(NetworkError::DegenerateGrid { rows, cols });
    }
    if !(block_length.is_finite() && block_length > 0.0) {
        return Err(NetworkError::InvalidGridParameter(format!(
            "block length {block_length}"
        )));
    }
    let node = |r: usize, c: usize| (r * cols + c) as u64;
    let xy = |r: usize, c: usize| [c as f64 * block_length, r as f64 * block_length];

    let mut segments = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                segments.push(((r, c), (r, c + 1)));
            }
            if r + 1 < rows {
                segments.push(((r, c), (r + 1, c)));
            }
        }
    }

    let mut links = Vec::with_capacity(2 * segments.len());
    for (a, b) in segments {
        let speed = speed_of(a, b);
        let pa = xy(a.0, a.1);
        let pb = xy(b.0, b.1);
        let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
        for (from, to) in [(a, b), (b, a)] {
            links.push(Link {
                id: links.len(),
                from_node: node(from.0, from.1),
                to_node: node(to.0, to.1),
                length: block_length,
                speed,
                lanes,
                midpoint: mid,
            });
        }
    }
    RoadNetwork::new(links)
}
