use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use super::{LinkId, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("topology has no links")]
    Empty,
    #[error("link {a}-{b} appears twice")]
    DuplicateLink { a: NodeId, b: NodeId },
    #[error("link {0}-{0} is a self loop")]
    SelfLoop(NodeId),
    #[error("link {a}-{b}: {message}")]
    InvalidLink { a: NodeId, b: NodeId, message: String },
    #[error("node {0} cannot reach node {1}")]
    Disconnected(NodeId, NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {0} to {1}")]
    Unreachable(NodeId, NodeId),
    #[error("source and destination are both node {0}")]
    SameEndpoints(NodeId),
}

/// Undirected link. Both directions share one key pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub metric: u32,
    pub mean_delay_s: f64,
    /// Quantum key generation rate in bits per second.
    pub key_rate_bps: f64,
}

impl Link {
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    /// Neighbours per node, sorted by node id: (neighbour, link).
    adjacency: BTreeMap<NodeId, Vec<(NodeId, LinkId)>>,
}

/// The 14-node NSFnet with integral routing metrics (link length / 300 km).
/// Mean delays default to 200 ms; key rate to 79.3 kbit/s.
const NSFNET: &[(NodeId, NodeId, u32)] = &[
    (0, 1, 7),
    (0, 2, 10),
    (0, 7, 16),
    (1, 2, 4),
    (1, 3, 5),
    (2, 5, 12),
    (3, 4, 4),
    (3, 10, 13),
    (4, 5, 8),
    (4, 6, 4),
    (5, 9, 7),
    (5, 13, 12),
    (6, 7, 5),
    (7, 8, 5),
    (8, 9, 5),
    (8, 11, 2),
    (8, 12, 2),
    (10, 11, 4),
    (10, 12, 5),
    (11, 13, 2),
    (12, 13, 1),
];

pub const DEFAULT_KEY_RATE_BPS: f64 = 79_300.0;

impl Topology {
    pub fn new(links: Vec<Link>) -> Result<Self, TopologyError> {
        if links.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut nodes = BTreeSet::new();
        let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, LinkId)>> = BTreeMap::new();
        for (id, l) in links.iter().enumerate() {
            if l.a == l.b {
                return Err(TopologyError::SelfLoop(l.a));
            }
            let key = (l.a.min(l.b), l.a.max(l.b));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateLink { a: key.0, b: key.1 });
            }
            let invalid = |message: &str| TopologyError::InvalidLink {
                a: l.a,
                b: l.b,
                message: message.to_string(),
            };
            if l.metric == 0 {
                return Err(invalid("metric must be positive"));
            }
            if !(l.mean_delay_s > 0.0 && l.mean_delay_s.is_finite()) {
                return Err(invalid("mean delay must be positive"));
            }
            if !(l.key_rate_bps >= 0.0 && l.key_rate_bps.is_finite()) {
                return Err(invalid("key rate must be non-negative"));
            }
            nodes.insert(l.a);
            nodes.insert(l.b);
            adjacency.entry(l.a).or_default().push((l.b, id));
            adjacency.entry(l.b).or_default().push((l.a, id));
        }
        for adj in adjacency.values_mut() {
            adj.sort_unstable();
        }
        let topo = Self {
            nodes,
            links,
            adjacency,
        };
        topo.check_connected()?;
        Ok(topo)
    }

    pub fn nsfnet() -> Self {
        let links = NSFNET
            .iter()
            .map(|&(a, b, metric)| Link {
                a,
                b,
                metric,
                mean_delay_s: 0.2,
                key_rate_bps: DEFAULT_KEY_RATE_BPS,
            })
            .collect();
        Self::new(links).expect("bundled topology is valid")
    }

    /// Parses `node_a node_b metric mean_delay_ms key_rate_bps` lines.
    /// `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut links = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| TopologyError::Parse { line, message };
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let node = |s: &str| s.parse::<NodeId>().map_err(|e| err(format!("bad node id {s:?}: {e}")));
            let real = |s: &str, what: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad {what} {s:?}")))
            };
            let a = node(fields[0])?;
            let b = node(fields[1])?;
            let metric = fields[2]
                .parse::<u32>()
                .map_err(|e| err(format!("bad metric {:?}: {e}", fields[2])))?;
            let delay_ms = real(fields[3], "delay")?;
            let key_rate_bps = real(fields[4], "key rate")?;
            links.push(Link {
                a,
                b,
                metric,
                mean_delay_s: delay_ms / 1000.0,
                key_rate_bps,
            });
        }
        Self::new(links)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::from("# node_a node_b metric mean_delay_ms key_rate_bps\n");
        for l in &self.links {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                l.a,
                l.b,
                l.metric,
                l.mean_delay_s * 1000.0,
                l.key_rate_bps
            );
        }
        out
    }

    fn check_connected(&self) -> Result<(), TopologyError> {
        let first = *self.nodes.iter().next().ok_or(TopologyError::Empty)?;
        let mut seen = BTreeSet::from([first]);
        let mut queue = VecDeque::from([first]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[&u] {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        match self.nodes.iter().find(|n| !seen.contains(n)) {
            Some(&missing) => Err(TopologyError::Disconnected(first, missing)),
            None => Ok(()),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn neighbours(&self, n: NodeId) -> &[(NodeId, LinkId)] {
        self.adjacency.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.neighbours(a).iter().find(|(n, _)| *n == b).map(|&(_, l)| l)
    }

    /// Replaces every link's mean delay.
    pub fn with_uniform_delay(mut self, delay_s: f64) -> Self {
        for l in &mut self.links {
            l.mean_delay_s = delay_s;
        }
        self
    }
}
