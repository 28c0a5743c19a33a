//! Text network files and the binary distance-matrix cache.
//!
//! Network file, one record per line, `#` starts a comment:
//!
//! ```text
//! id from_node to_node length_m speed_mps lanes mid_x mid_y
//! ban i j
//! ```
//!
//! Distance cache: little-endian `u64` point count `n`, then `n * n`
//! little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DistanceMatrix, Link, NetworkError, RoadNetwork};

pub fn parse_network(reader: impl BufRead) -> Result<RoadNetwork, NetworkError> {
    let mut links = Vec::new();
    let mut bans = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let err = |msg: String| NetworkError::Parse { line: lineno, msg };
        if fields[0] == "ban" {
            if fields.len() != 3 {
                return Err(err(format!("expected `ban i j`, got {} fields", fields.len())));
            }
            let i = fields[1].parse().map_err(|e| err(format!("ban source: {e}")))?;
            let j = fields[2].parse().map_err(|e| err(format!("ban target: {e}")))?;
            bans.push((i, j));
            continue;
        }
        if fields.len() != 8 {
            return Err(err(format!("expected 8 link fields, got {}", fields.len())));
        }
        macro_rules! field {
            ($i:expr, $name:literal) => {
                fields[$i]
                    .parse()
                    .map_err(|e| err(format!(concat!($name, ": {}"), e)))?
            };
        }
        links.push(Link {
            id: field!(0, "id"),
            from_node: field!(1, "from_node"),
            to_node: field!(2, "to_node"),
            length: field!(3, "length"),
            speed: field!(4, "speed"),
            lanes: field!(5, "lanes"),
            midpoint: [field!(6, "mid_x"), field!(7, "mid_y")],
        });
    }
    let mut network = RoadNetwork::new(links)?;
    for (i, j) in bans {
        network.ban_movement(i, j)?;
    }
    Ok(network)
}

pub fn read_network(path: &Path) -> Result<RoadNetwork, NetworkError> {
    parse_network(BufReader::new(File::open(path)?))
}

pub fn write_network(network: &RoadNetwork, mut out: impl Write) -> Result<(), NetworkError> {
    writeln!(out, "# id from_node to_node length_m speed_mps lanes mid_x mid_y")?;
    for l in network.links() {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            l.id, l.from_node, l.to_node, l.length, l.speed, l.lanes, l.midpoint[0], l.midpoint[1]
        )?;
    }
    for (i, j) in network.banned_movements() {
        writeln!(out, "ban {i} {j}")?;
    }
    Ok(())
}

pub fn write_distance_matrix(matrix: &DistanceMatrix, path: &Path) -> Result<(), NetworkError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(matrix.len() as u64).to_le_bytes())?;
    for v in matrix.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_distance_matrix(path: &Path) -> Result<DistanceMatrix, NetworkError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(NetworkError::MatrixFormat("missing count header".into()));
    }
    let (header, body) = bytes.split_at(8);
    let n = u64::from_le_bytes(header.try_into().expect("8-byte header")) as usize;
    let expected = n
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| NetworkError::MatrixFormat(format!("count {n} too large")))?;
    if body.len() != expected {
        return Err(NetworkError::MatrixFormat(format!(
            "expected {expected} bytes for n={n}, found {}",
            body.len()
        )));
    }
    let d = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DistanceMatrix::from_flat(n, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{
        all_pairs_distances, build_movement_graph, generate_grid_network, MovementOptions,
    };

    #[test]
    fn network_text_round_trip() {
        let mut net = generate_grid_network(3, 3, 80.0, 11.5, 2).unwrap();
        net.ban_movement(0, 5).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        let back = parse_network(buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "# header\n0 0 1 100 10 1 0 0\n1 1 0 abc 10 1 0 0\n";
        match parse_network(text.as_bytes()) {
            Err(NetworkError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matrix_cache_layout() {
        let net = generate_grid_network(3, 3, 100.0, 10.0, 1).unwrap();
        let g = build_movement_graph(&net, MovementOptions::default()).unwrap();
        let d = all_pairs_distances(&g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_distance_matrix(&d, &path).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(raw.len(), 8 + 8 * d.len() * d.len());
        assert_eq!(u64::from_le_bytes(raw[..8].try_into().unwrap()), d.len() as u64);
        assert_eq!(
            f64::from_le_bytes(raw[8 + 8..16 + 8].try_into().unwrap()),
            d.get(0, 1)
        );
        assert_eq!(read_distance_matrix(&path).unwrap(), d);
        std::fs::write(&path, &raw[..raw.len() - 3]).unwrap();
        assert!(read_distance_matrix(&path).is_err());
    }
}
