use std::path::{Path as FsPath, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{BaselineScheme, DtVqkpParams, QuiksParams};
use crate::netsim::{route, KeyBudget, NodeId, Topology, TopologyError};
use crate::traffic::{AppSpec, ArrivalProcess, TrafficError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{field}: {source}")]
    Topology {
        field: String,
        #[source]
        source: TopologyError,
    },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Nsfnet {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link_delay_ms: Option<f64>,
    },
    /// Edge-list file, relative to the config file.
    EdgeList {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link_delay_ms: Option<f64>,
    },
    /// Edge-list text embedded in the config.
    Inline {
        edges: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link_delay_ms: Option<f64>,
    },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Nsfnet { link_delay_ms: None }
    }
}

impl TopologySpec {
    fn link_delay_ms(&self) -> Option<f64> {
        match self {
            TopologySpec::Nsfnet { link_delay_ms }
            | TopologySpec::EdgeList { link_delay_ms, .. }
            | TopologySpec::Inline { link_delay_ms, .. } => *link_delay_ms,
        }
    }

    pub fn load(&self, base_dir: Option<&FsPath>) -> Result<Topology, ConfigError> {
        let topo_err = |source| ConfigError::Topology {
            field: "topology".into(),
            source,
        };
        let topo = match self {
            TopologySpec::Nsfnet { .. } => Topology::nsfnet(),
            TopologySpec::EdgeList { path, .. } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                    path: full.clone(),
                    source,
                })?;
                Topology::parse_edge_list(&text).map_err(topo_err)?
            }
            TopologySpec::Inline { edges, .. } => Topology::parse_edge_list(edges).map_err(topo_err)?,
        };
        Ok(match self.link_delay_ms() {
            Some(ms) => topo.with_uniform_delay(ms / 1000.0),
            None => topo,
        })
    }
}

/// Relay-request policy of an end-to-end buffering unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Quiks(QuiksParams),
    NoBuffer {},
    KaasFixed { rate_rps: f64 },
    StVqkp { multiplier: f64 },
    DtVqkp(DtVqkpParams),
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec::Quiks(QuiksParams::default())
    }
}

impl ControllerSpec {
    pub fn label(&self) -> String {
        match self {
            ControllerSpec::Quiks(_) => "QuIKS".into(),
            ControllerSpec::NoBuffer {} => "NoBuffer".into(),
            ControllerSpec::KaasFixed { rate_rps } => format!("KaaS-{rate_rps}"),
            ControllerSpec::StVqkp { .. } => "ST-VQKP".into(),
            ControllerSpec::DtVqkp(_) => "DT-VQKP".into(),
        }
    }

    pub fn baseline_scheme(&self) -> Option<BaselineScheme> {
        match *self {
            ControllerSpec::Quiks(_) => None,
            ControllerSpec::NoBuffer {} => Some(BaselineScheme::NoBuffer),
            ControllerSpec::KaasFixed { rate_rps } => Some(BaselineScheme::KaasFixed { rate_rps }),
            ControllerSpec::StVqkp { multiplier } => Some(BaselineScheme::StVqkp { multiplier }),
            ControllerSpec::DtVqkp(p) => Some(BaselineScheme::DtVqkp(p)),
        }
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let bad = |what: &str, msg: &str| Err(ConfigError::invalid(format!("{field}.{what}"), msg));
        match self {
            ControllerSpec::Quiks(p) => {
                if p.alpha < 1 {
                    return bad("alpha", "must be at least 1");
                }
                if p.beta < 1 {
                    return bad("beta", "must be at least 1");
                }
                if p.k_cap < 1 {
                    return bad("k_cap", "must be at least 1");
                }
            }
            ControllerSpec::NoBuffer {} => {}
            ControllerSpec::KaasFixed { rate_rps } => {
                if !(*rate_rps >= 0.0 && rate_rps.is_finite()) {
                    return bad("rate_rps", "must be a non-negative number");
                }
            }
            ControllerSpec::StVqkp { multiplier } => {
                if !(*multiplier >= 1.0 && multiplier.is_finite()) {
                    return bad("multiplier", "must be at least 1");
                }
            }
            ControllerSpec::DtVqkp(p) => {
                if !(p.factor > 0.0 && p.factor.is_finite()) {
                    return bad("factor", "must be positive");
                }
                if !(p.watermark_slots >= 0.0) {
                    return bad("watermark_slots", "must be non-negative");
                }
                if !(p.smoothing > 0.0 && p.smoothing <= 1.0) {
                    return bad("smoothing", "must lie in (0, 1]");
                }
                if !(p.initial_delay_slots > 0.0) {
                    return bad("initial_delay_slots", "must be positive");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairController {
    pub source: NodeId,
    pub destination: NodeId,
    pub controller: ControllerSpec,
}

/// Applications between uniformly drawn node pairs with uniform start times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomApps {
    pub count: usize,
    pub rate_rps: f64,
    pub demand_blocks: u64,
    #[serde(default)]
    pub start_max_s: f64,
    #[serde(default = "default_process")]
    pub process: ArrivalProcess,
}

fn default_process() -> ArrivalProcess {
    ArrivalProcess::Poisson
}

/// Bounds a run must meet. A scenario with bounds is acceptance-tagged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_instant_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_post_warmup_instant_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_completion_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mean_buffer_bytes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slot_seconds")]
    pub slot_seconds: f64,
    #[serde(default = "default_block_bits")]
    pub block_size_bits: u32,
    pub horizon_slots: u64,
    /// Count probe and adjust slots in the buffer statistics.
    #[serde(default)]
    pub include_warmup: bool,
    #[serde(default)]
    pub topology: TopologySpec,
    #[serde(default = "default_budget")]
    pub budget: KeyBudget,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_controllers: Vec<PairController>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub apps: Vec<AppSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_apps: Option<RandomApps>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckBounds>,
}

fn default_slot_seconds() -> f64 {
    0.05
}

fn default_block_bits() -> u32 {
    256
}

fn default_budget() -> KeyBudget {
    KeyBudget::Abundant
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &FsPath) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn block_bytes(&self) -> u64 {
        u64::from(self.block_size_bits / 8)
    }

    /// Checks scalar fields and controller parameters.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon_slots == 0 {
            return Err(ConfigError::invalid("horizon_slots", "must be positive"));
        }
        if !(self.slot_seconds > 0.0 && self.slot_seconds.is_finite()) {
            return Err(ConfigError::invalid("slot_seconds", "must be positive"));
        }
        if self.block_size_bits == 0 || !self.block_size_bits.is_multiple_of(8) {
            return Err(ConfigError::invalid(
                "block_size_bits",
                "must be a positive multiple of 8",
            ));
        }
        if let Some(ms) = self.topology.link_delay_ms() {
            if !(ms > 0.0 && ms.is_finite()) {
                return Err(ConfigError::invalid("topology.link_delay_ms", "must be positive"));
            }
        }
        match self.budget {
            KeyBudget::Abundant | KeyBudget::LinkRates { .. } => {}
            KeyBudget::Limited {
                headroom,
                initial_fraction,
            } => {
                if !(headroom > 0.0 && headroom.is_finite()) {
                    return Err(ConfigError::invalid("budget.headroom", "must be positive"));
                }
                if !(0.0..=1.0).contains(&initial_fraction) {
                    return Err(ConfigError::invalid("budget.initial_fraction", "must lie in [0, 1]"));
                }
            }
        }
        self.controller.validate("controller")?;
        for (i, pc) in self.pair_controllers.iter().enumerate() {
            pc.controller.validate(&format!("pair_controllers[{i}].controller"))?;
        }
        for (i, app) in self.apps.iter().enumerate() {
            app.validate().map_err(|e| traffic_error(&format!("apps[{i}]"), e))?;
        }
        if let Some(r) = &self.random_apps {
            if r.count == 0 {
                return Err(ConfigError::invalid("random_apps.count", "must be positive"));
            }
            if !(r.start_max_s >= 0.0) {
                return Err(ConfigError::invalid("random_apps.start_max_s", "must be non-negative"));
            }
            let probe = AppSpec {
                source: 0,
                destination: 1,
                start_s: 0.0,
                rate_rps: r.rate_rps,
                process: r.process,
                demand_blocks: r.demand_blocks,
            };
            probe.validate().map_err(|e| traffic_error("random_apps", e))?;
        }
        if self.apps.is_empty() && self.random_apps.is_none() {
            return Err(ConfigError::invalid("apps", "at least one application is required"));
        }
        if let Some(c) = &self.check {
            for (field, v) in [
                ("check.min_instant_ratio", c.min_instant_ratio),
                ("check.min_post_warmup_instant_ratio", c.min_post_warmup_instant_ratio),
                ("check.min_completion_ratio", c.min_completion_ratio),
            ] {
                if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                    return Err(ConfigError::invalid(field, "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Validates the config against its topology and expands random
    /// applications.
    pub fn resolve(&self, base_dir: Option<&FsPath>) -> Result<ResolvedScenario, ConfigError> {
        self.validate()?;
        let topology = self.topology.load(base_dir)?;
        let mut apps = self.apps.clone();
        if let Some(r) = &self.random_apps {
            let nodes: Vec<NodeId> = topology.nodes().collect();
            if nodes.len() < 2 {
                return Err(ConfigError::invalid("random_apps", "topology needs two nodes"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(STREAM_PLACEMENT);
            for _ in 0..r.count {
                let s = nodes[rng.random_range(0..nodes.len())];
                let d = loop {
                    let d = nodes[rng.random_range(0..nodes.len())];
                    if d != s {
                        break d;
                    }
                };
                let start_s = if r.start_max_s > 0.0 {
                    rng.random_range(0.0..r.start_max_s)
                } else {
                    0.0
                };
                apps.push(AppSpec {
                    source: s,
                    destination: d,
                    start_s,
                    rate_rps: r.rate_rps,
                    process: r.process,
                    demand_blocks: r.demand_blocks,
                });
            }
        }
        for (i, app) in apps.iter().enumerate() {
            route(&topology, app.source, app.destination).map_err(|source| ConfigError::Topology {
                field: format!("apps[{i}]"),
                source,
            })?;
        }
        for (i, pc) in self.pair_controllers.iter().enumerate() {
            route(&topology, pc.source, pc.destination).map_err(|source| ConfigError::Topology {
                field: format!("pair_controllers[{i}]"),
                source,
            })?;
        }
        Ok(ResolvedScenario {
            config: self.clone(),
            topology,
            apps,
        })
    }

    pub fn controller_for(&self, source: NodeId, destination: NodeId) -> &ControllerSpec {
        self.pair_controllers
            .iter()
            .find(|pc| pc.source == source && pc.destination == destination)
            .map(|pc| &pc.controller)
            .unwrap_or(&self.controller)
    }
}

fn traffic_error(field: &str, e: TrafficError) -> ConfigError {
    let sub = match &e {
        TrafficError::InvalidShape(_) => "process.shape",
        TrafficError::InvalidScale(_) => "process.scale",
        TrafficError::NonPositive { field, .. } => field,
        TrafficError::SameEndpoints(_) => "destination",
    };
    ConfigError::invalid(format!("{field}.{sub}"), e.to_string())
}

pub(crate) const STREAM_PLACEMENT: u64 = 1;
pub(crate) const STREAM_RELAY: u64 = 2;
pub(crate) const STREAM_TRAFFIC: u64 = 3;

/// A validated config with its topology loaded and every application listed.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub apps: Vec<AppSpec>,
}
