#![allow(dead_code)]

use std::path::PathBuf;

use iges_dse::model::{GasNetwork, GasNode, NodeKind, Pipeline};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn pipe(from: usize, to: usize, length: f64, diameter: f64) -> Pipeline {
    Pipeline { from, to, length, diameter, avg_velocity: 5.0 }
}

/// Node 1 is the only source; pipes are given as (from, to, length, diameter).
pub fn network(n_nodes: usize, rho_source: f64, pipes: &[(usize, usize, f64, f64)]) -> GasNetwork {
    let nodes = (1..=n_nodes)
        .map(|id| GasNode {
            id,
            kind: if id == 1 { NodeKind::Source } else { NodeKind::Sink },
            fixed_density: (id == 1).then_some(rho_source),
        })
        .collect();
    GasNetwork {
        nodes,
        pipelines: pipes.iter().map(|&(i, j, l, d)| pipe(i, j, l, d)).collect(),
        friction: 0.015,
        sound_speed: 340.0,
        dt: 600.0,
    }
}

/// 1 → 2 → 3 with node 1 the source.
pub fn path3() -> GasNetwork {
    network(3, 34.0, &[(1, 2, 30_000.0, 0.8), (2, 3, 20_000.0, 0.6)])
}

pub fn single_pipe() -> GasNetwork {
    network(2, 34.0, &[(1, 2, 10_000.0, 0.5)])
}
