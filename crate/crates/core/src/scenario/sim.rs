use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ResolvedScenario, STREAM_RELAY, STREAM_TRAFFIC};
use crate::controllers::{Baseline, Controller, KEstimate, Observation, Quiks, RelayController};
use crate::metrics::{BufferRow, MetricsSummary, RequestGroup, RunMetrics};
use crate::model::{Delivery, SlotIndex};
use crate::netsim::{min_key_requirement, route, sample_hop_delay_us, NodeId, Path, RelayEngine};
use crate::traffic::RequestGenerator;

#[derive(Debug, Clone, Copy)]
struct Pending {
    app: usize,
    arrival_slot: u64,
    count: u64,
    post_warmup: bool,
}

/// End-to-end buffering unit of one ordered node pair.
struct Ebu {
    source: NodeId,
    destination: NodeId,
    path: Path,
    apps: Vec<usize>,
    controller: Controller,
    created: bool,
    key_blocks: u64,
    queue: VecDeque<Pending>,
    backlog: u64,
    metrics: RunMetrics,
    episodes: Vec<StableEpisode>,
    in_episode: bool,
}

struct AppRun {
    generator: RequestGenerator,
    pair: usize,
    start_slot: u64,
    generated: u64,
    served: u64,
    instant: u64,
    completion_slot: Option<u64>,
}

impl AppRun {
    fn done(&self) -> bool {
        self.generator.exhausted() && self.served == self.generated
    }
}

/// Buffer levels over one uninterrupted QuIKS stable phase, counted while the
/// pair had an active application.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableEpisode {
    pub start_slot: u64,
    /// Sigma estimate the episode was sized with.
    pub sigma_hat: f64,
    #[serde(skip)]
    pub levels: Vec<u64>,
}

impl StableEpisode {
    pub fn mean_std(&self) -> (f64, f64) {
        stats(&self.levels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub start_slot: u64,
    pub sigma_hat: f64,
    pub slots: u64,
    pub mean_blocks: f64,
    pub std_blocks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuiksSummary {
    pub k_estimate: Option<u32>,
    pub sigma_history: Vec<f64>,
    pub probes_completed: u64,
    pub probes_abandoned: u64,
    pub first_stable_slot: Option<u64>,
    pub stable_slots: u64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSummary {
    pub source: NodeId,
    pub destination: NodeId,
    pub path: Vec<NodeId>,
    pub scheme: String,
    pub apps: Vec<usize>,
    pub metrics: MetricsSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quiks: Option<QuiksSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppSummary {
    pub app: usize,
    pub source: NodeId,
    pub destination: NodeId,
    pub start_slot: u64,
    pub demand_blocks: u64,
    pub generated: u64,
    pub served: u64,
    pub instant: u64,
    pub completed: bool,
    pub completion_slot: Option<u64>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub slot_seconds: f64,
    pub block_bytes: u64,
    pub slots: u64,
    pub metrics: RunMetrics,
    pub pairs: Vec<PairSummary>,
    pub apps: Vec<AppSummary>,
    /// QuIKS stable episodes, per pair.
    pub stable_episodes: Vec<Vec<StableEpisode>>,
    pub requests: Vec<RequestGroup>,
    pub buffer_rows: Vec<BufferRow>,
    pub delivered_jobs: u64,
    /// Sum over delivered jobs of blocks times path length.
    pub delivered_hop_blocks: u64,
    pub link_blocks_in_flight: u64,
    /// Demand routed over each link, in blocks.
    pub link_requirement: Vec<u64>,
}

impl RunResult {
    pub fn summary(&self) -> MetricsSummary {
        self.metrics.summary(self.slot_seconds, self.block_bytes)
    }
}

fn stats(levels: &[u64]) -> (f64, f64) {
    if levels.is_empty() {
        return (0.0, 0.0);
    }
    let n = levels.len() as f64;
    let mean = levels.iter().sum::<u64>() as f64 / n;
    let var = levels.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn build_controller(scenario: &ResolvedScenario, source: NodeId, destination: NodeId, slot: u64) -> Controller {
    let spec = scenario.config.controller_for(source, destination);
    match spec.baseline_scheme() {
        None => {
            let crate::scenario::ControllerSpec::Quiks(p) = spec else {
                unreachable!("only QuIKS has no baseline scheme")
            };
            Controller::Quiks(Quiks::new(*p, SlotIndex(slot)))
        }
        Some(scheme) => Controller::Baseline(Baseline::new(scheme, scenario.config.slot_seconds)),
    }
}

/// Runs a resolved scenario to its horizon.
///
/// Within a slot, relay deliveries land first, then arrivals are served in
/// FIFO order, then each controller issues relay requests that leave at the
/// end of the slot.
pub fn run(scenario: &ResolvedScenario) -> RunResult {
    let cfg = &scenario.config;
    let topo = &scenario.topology;
    let t = cfg.slot_seconds;

    let mut pair_index: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    let mut ebus: Vec<Ebu> = Vec::new();
    let mut traffic_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    traffic_rng.set_stream(STREAM_TRAFFIC);
    let mut apps = Vec::with_capacity(scenario.apps.len());
    for (i, spec) in scenario.apps.iter().enumerate() {
        let key = (spec.source, spec.destination);
        let pair = *pair_index.entry(key).or_insert_with(|| {
            ebus.push(Ebu {
                source: key.0,
                destination: key.1,
                path: route(topo, key.0, key.1).expect("resolved scenarios are routable"),
                apps: Vec::new(),
                controller: Controller::Baseline(Baseline::new(crate::controllers::BaselineScheme::NoBuffer, t)),
                created: false,
                key_blocks: 0,
                queue: VecDeque::new(),
                backlog: 0,
                metrics: RunMetrics::default(),
                episodes: Vec::new(),
                in_episode: false,
            });
            ebus.len() - 1
        });
        ebus[pair].apps.push(i);
        let seed: u64 = traffic_rng.random();
        apps.push(AppRun {
            generator: RequestGenerator::new(spec.clone(), t, seed).expect("validated app"),
            pair,
            start_slot: spec.start_slot(t),
            generated: 0,
            served: 0,
            instant: 0,
            completion_slot: None,
        });
    }

    let requirement = min_key_requirement(
        topo.links().len(),
        scenario
            .apps
            .iter()
            .zip(&apps)
            .map(|(spec, run)| (&ebus[run.pair].path, spec.demand_blocks)),
    );
    let pools = cfg.budget.build_pools(topo, &requirement, cfg.horizon_slots as f64 * t);
    let mut engine = RelayEngine::new(t, pools);
    let mut relay_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    relay_rng.set_stream(STREAM_RELAY);

    let mut requests = Vec::new();
    let mut buffer_rows = Vec::new();
    let mut delivered_hop_blocks = 0;
    let mut arrivals = vec![0u64; ebus.len()];
    let mut slot_arrivals: Vec<Vec<(usize, u64)>> = vec![Vec::new(); ebus.len()];
    let mut deliveries: Vec<Vec<Delivery>> = vec![Vec::new(); ebus.len()];

    for slot in 0..cfg.horizon_slots {
        for a in arrivals.iter_mut() {
            *a = 0;
        }
        for s in slot_arrivals.iter_mut() {
            s.clear();
        }
        for (i, app) in apps.iter_mut().enumerate() {
            if slot < app.start_slot {
                continue;
            }
            let ebu = &mut ebus[app.pair];
            if !ebu.created {
                ebu.created = true;
                ebu.controller = build_controller(scenario, ebu.source, ebu.destination, slot);
            }
            let n = app.generator.next_slot();
            if n > 0 {
                app.generated += n;
                arrivals[app.pair] += n;
                slot_arrivals[app.pair].push((i, n));
            }
        }

        for d in deliveries.iter_mut() {
            d.clear();
        }
        for job in engine.advance(slot) {
            delivered_hop_blocks += job.blocks * ebus[job.pair].path.hops() as u64;
            ebus[job.pair].metrics.key_blocks_delivered += job.blocks;
            deliveries[job.pair].push(Delivery {
                send_slot: SlotIndex(job.send_slot),
                delay: job.delay_slots,
                count: job.blocks,
            });
        }

        for (p, ebu) in ebus.iter_mut().enumerate() {
            if !ebu.created {
                continue;
            }
            let prev_level = ebu.key_blocks;
            ebu.key_blocks += deliveries[p].iter().map(|d| d.count).sum::<u64>();

            let post_warmup = !ebu.controller.in_warmup();
            for &(app, count) in &slot_arrivals[p] {
                ebu.metrics.record_arrivals(count, post_warmup);
                ebu.queue.push_back(Pending {
                    app,
                    arrival_slot: slot,
                    count,
                    post_warmup,
                });
            }
            ebu.backlog += arrivals[p];

            let mut budget = ebu.key_blocks.min(ebu.backlog);
            ebu.key_blocks -= budget;
            ebu.backlog -= budget;
            while budget > 0 {
                let front = ebu.queue.front_mut().expect("backlog is queued");
                let take = front.count.min(budget);
                let latency = ebu
                    .metrics
                    .record_requests(front.arrival_slot, slot, take, front.post_warmup);
                requests.push(RequestGroup {
                    app: front.app,
                    arrival_slot: front.arrival_slot,
                    served_slot: Some(slot),
                    count: take,
                });
                let run = &mut apps[front.app];
                run.served += take;
                if latency == 0 {
                    run.instant += take;
                }
                if run.done() {
                    run.completion_slot = Some(slot);
                }
                budget -= take;
                front.count -= take;
                if front.count == 0 {
                    ebu.queue.pop_front();
                }
            }

            let app_active = ebu.apps.iter().any(|&a| slot >= apps[a].start_slot && !apps[a].done());
            let obs = Observation {
                slot: SlotIndex(slot),
                arrivals: arrivals[p],
                deliveries: &deliveries[p],
                buffer_level: prev_level,
                app_active,
            };
            let r = ebu.controller.decide(&obs).relay_requests;
            if r > 0 {
                ebu.metrics.relay_requests_sent += r;
                let delays = ebu
                    .path
                    .links
                    .iter()
                    .map(|&l| sample_hop_delay_us(topo.link(l).mean_delay_s, &mut relay_rng))
                    .collect();
                engine.submit(p, ebu.path.links.clone(), r, slot, delays);
            }

            if app_active && (cfg.include_warmup || !ebu.controller.in_warmup()) {
                ebu.metrics.record_buffer(ebu.key_blocks);
            }
            if let Some(q) = ebu.controller.as_quiks() {
                if !q.is_stable() {
                    ebu.in_episode = false;
                } else if app_active {
                    if !ebu.in_episode {
                        ebu.in_episode = true;
                        ebu.episodes.push(StableEpisode {
                            start_slot: slot,
                            sigma_hat: q.state().sigma_hat,
                            levels: Vec::new(),
                        });
                    }
                    ebu.episodes
                        .last_mut()
                        .expect("episode open")
                        .levels
                        .push(ebu.key_blocks);
                }
            }
            buffer_rows.push(BufferRow {
                slot,
                source: ebu.source,
                destination: ebu.destination,
                key_blocks: ebu.key_blocks,
                backlog: ebu.backlog,
                phase: ebu.controller.phase_label().to_string(),
            });
        }
    }

    // Whatever is still queued was never served.
    for ebu in &ebus {
        for p in &ebu.queue {
            requests.push(RequestGroup {
                app: p.app,
                arrival_slot: p.arrival_slot,
                served_slot: None,
                count: p.count,
            });
        }
    }
    requests.sort_by_key(|g| (g.arrival_slot, g.app, g.served_slot.is_none(), g.served_slot));

    let app_summaries: Vec<AppSummary> = apps
        .iter()
        .enumerate()
        .map(|(i, a)| AppSummary {
            app: i,
            source: scenario.apps[i].source,
            destination: scenario.apps[i].destination,
            start_slot: a.start_slot,
            demand_blocks: scenario.apps[i].demand_blocks,
            generated: a.generated,
            served: a.served,
            instant: a.instant,
            completed: a.done(),
            completion_slot: a.completion_slot,
        })
        .collect();

    let block_bytes = cfg.block_bytes();
    let mut total = RunMetrics::default();
    let mut pairs = Vec::with_capacity(ebus.len());
    let mut stable_episodes = Vec::with_capacity(ebus.len());
    for ebu in &mut ebus {
        ebu.metrics.apps_total = ebu.apps.len() as u64;
        ebu.metrics.apps_completed = ebu.apps.iter().filter(|&&a| apps[a].done()).count() as u64;
        total.merge(&ebu.metrics);
        let quiks = ebu.controller.as_quiks().map(|q| QuiksSummary {
            k_estimate: match q.state().k_est {
                KEstimate::Slots(k) => Some(k),
                KEstimate::Undetermined => None,
            },
            sigma_history: q.stats().sigma_history.clone(),
            probes_completed: q.stats().probes_completed,
            probes_abandoned: q.stats().probes_abandoned,
            first_stable_slot: q.stats().first_stable_slot.map(|s| s.0),
            stable_slots: ebu.episodes.iter().map(|e| e.levels.len() as u64).sum(),
            episodes: ebu
                .episodes
                .iter()
                .map(|e| {
                    let (mean_blocks, std_blocks) = e.mean_std();
                    EpisodeSummary {
                        start_slot: e.start_slot,
                        sigma_hat: e.sigma_hat,
                        slots: e.levels.len() as u64,
                        mean_blocks,
                        std_blocks,
                    }
                })
                .collect(),
        });
        pairs.push(PairSummary {
            source: ebu.source,
            destination: ebu.destination,
            path: ebu.path.nodes.clone(),
            scheme: cfg.controller_for(ebu.source, ebu.destination).label(),
            apps: ebu.apps.clone(),
            metrics: ebu.metrics.summary(t, block_bytes),
            quiks,
        });
        stable_episodes.push(std::mem::take(&mut ebu.episodes));
    }
    total.link_consumption = engine.pools().iter().map(|p| p.consumed()).collect();
    let consumed: u64 = total.link_consumption.iter().sum();

    RunResult {
        name: cfg.name.clone(),
        seed: cfg.seed,
        slot_seconds: t,
        block_bytes,
        slots: cfg.horizon_slots,
        metrics: total,
        pairs,
        apps: app_summaries,
        stable_episodes,
        requests,
        buffer_rows,
        delivered_jobs: engine.delivered_jobs(),
        delivered_hop_blocks,
        link_blocks_in_flight: consumed - delivered_hop_blocks,
        link_requirement: requirement,
    }
}
