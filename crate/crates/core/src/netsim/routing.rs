use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::topology::{Topology, TopologyError};
use super::{LinkId, NodeId};

/// A routed path: `nodes.len() == links.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub cost: u64,
}

impl Path {
    pub fn hops(&self) -> usize {
        self.links.len()
    }
}

fn distances(topo: &Topology, from: NodeId) -> BTreeMap<NodeId, u64> {
    let mut dist = BTreeMap::from([(from, 0u64)]);
    let mut heap = BinaryHeap::from([Reverse((0u64, from))]);
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist.get(&u).is_some_and(|&best| d > best) {
            continue;
        }
        for &(v, l) in topo.neighbours(u) {
            let nd = d + u64::from(topo.link(l).metric);
            if dist.get(&v).is_none_or(|&cur| nd < cur) {
                dist.insert(v, nd);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

/// Minimum-metric path. Among equal-cost paths the one with the
/// lexicographically smallest node sequence wins.
pub fn route(topo: &Topology, source: NodeId, destination: NodeId) -> Result<Path, TopologyError> {
    for n in [source, destination] {
        if !topo.contains(n) {
            return Err(TopologyError::UnknownNode(n));
        }
    }
    if source == destination {
        return Err(TopologyError::SameEndpoints(source));
    }
    let from_src = distances(topo, source);
    let to_dst = distances(topo, destination);
    let total = *to_dst
        .get(&source)
        .ok_or(TopologyError::Unreachable(source, destination))?;

    let mut nodes = vec![source];
    let mut links = Vec::new();
    let mut u = source;
    while u != destination {
        // Neighbours are sorted, so the first node on a shortest path is the
        // lexicographically smallest continuation.
        let du = from_src[&u];
        let &(v, l) = topo
            .neighbours(u)
            .iter()
            .find(|&&(v, l)| {
                let w = u64::from(topo.link(l).metric);
                to_dst.get(&v).is_some_and(|&dv| du + w + dv == total)
            })
            .expect("a shortest-path continuation exists");
        nodes.push(v);
        links.push(l);
        u = v;
    }
    Ok(Path {
        nodes,
        links,
        cost: total,
    })
}
