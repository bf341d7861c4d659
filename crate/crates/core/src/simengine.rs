//! Episode loop, training, evaluation and scheme comparison.

use std::collections::BTreeMap;
use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, Scheme};
use crate::masac::{self, ActMode, Checkpoint, Learner, SacError, Transition};
use crate::metrics::{self, DiscardCause, MetricsError, Summary, TaskRecord, TaskStatus};
use crate::offload::{self, EnergyInputs, OffloadError};
use crate::pathsel::{self, Attempt, PathCandidate, Reservation, Route};
use crate::rng::{self, tag};
use crate::topology::{Band, LedgerError, LinkId, NetworkGraph, NodeId, NodeKind, TopologyError};
use crate::workload::{self, Destination, Endpoints, Task, TaskKind, WorkloadError};

pub const OBS_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Offload(#[from] OffloadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error("episode {0}: reservations still open at episode end")]
    LedgerOpen(u64),
    #[error("training diverged at episode {episode}: {detail}")]
    NonFinite { episode: u64, detail: String, checkpoint: Box<Checkpoint> },
    #[error("scheme {0} needs a trained policy")]
    MissingPolicy(&'static str),
    #[error("checkpoint was written for scheme {found}, not {expected}")]
    WrongScheme { expected: &'static str, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Train => tag::TRAIN,
            Phase::Eval => tag::EVAL,
        }
    }
}

/// Who picks paths and bitrates.
pub enum Controller<'a> {
    Learned { learner: &'a Learner, mode: ActMode },
    Rrp,
    RndMaxbr,
}

/// One bitrate decision taken by an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub agent: usize,
    /// Index into the episode's records.
    pub record: usize,
    pub obs: Vec<f64>,
    pub state: Vec<f64>,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathLog {
    pub episode: u64,
    pub task_id: usize,
    pub candidates: Vec<Attempt>,
    pub chosen: Option<Vec<NodeId>>,
}

/// Peak reservations of one slot, taken before the slot's release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotSnapshot {
    pub episode: u64,
    pub step: usize,
    pub tasks: usize,
    pub link_reserved_bps: u64,
    pub compute_reserved_cps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: u64,
    pub records: Vec<TaskRecord>,
    pub decisions: Vec<Decision>,
    pub snapshots: Vec<SlotSnapshot>,
    pub paths: Vec<PathLog>,
    pub summary: Summary,
}

struct Held {
    links: Vec<LinkId>,
    rate: u64,
    compute: Vec<(NodeId, u64)>,
}

impl Held {
    fn release(&self, g: &mut NetworkGraph) -> Result<(), LedgerError> {
        pathsel::release(g, &self.links, self.rate, &self.compute)
    }
}

/// Per-episode mutable state threaded through the task loop.
struct EpisodeState {
    latest_obs: Vec<Vec<f64>>,
    last_action: Vec<Option<usize>>,
    prev_raw: Vec<Option<u64>>,
    prev_exec: Vec<Option<u64>>,
    act_rng: ChaCha8Rng,
    baseline_rng: ChaCha8Rng,
    records: Vec<TaskRecord>,
    decisions: Vec<Decision>,
    paths: Vec<PathLog>,
}

pub struct Engine {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    base: NetworkGraph,
    endpoints: Endpoints,
    agents: Vec<NodeId>,
    rates: Vec<u64>,
}

fn blank_record(scheme: &str, episode: u64, step: usize, task: &Task, agent: Option<usize>) -> TaskRecord {
    TaskRecord {
        scheme: scheme.to_string(),
        episode,
        step,
        task_id: task.id,
        kind: task.kind,
        deadline_s: task.deadline_s,
        agent,
        action: None,
        level: None,
        bitrate_bps: 0.0,
        status: TaskStatus::Discarded,
        cause: None,
        path: String::new(),
        path_score: 0.0,
        t_total: 0.0,
        t_comp_lc: 0.0,
        t_comm_lc: 0.0,
        t_comp_sc: 0.0,
        t_comm_sc: 0.0,
        e_encode: 0.0,
        e_upload: 0.0,
        e_transcode: 0.0,
        e_total: 0.0,
        u_comm: 0.0,
        u_comp: 0.0,
        qoe: 0.0,
        slot_completion: 0.0,
        reward: 0.0,
    }
}

impl Engine {
    /// `cfg` is assumed validated.
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self, EngineError> {
        let base = NetworkGraph::build(&cfg.topology, &cfg.channel)?;
        let endpoints = Endpoints {
            edges: base.nodes_of(NodeKind::Edge),
            ground_stations: base.nodes_of(NodeKind::GroundStation),
            users: base.nodes_of(NodeKind::User),
        };
        Ok(Self {
            agents: endpoints.ground_stations.clone(),
            rates: cfg.ladder.levels.iter().map(|l| l.bitrate_bps).collect(),
            cfg: cfg.clone(),
            seed,
            base,
            endpoints,
        })
    }

    /// Hash of the settings a trained policy depends on; run-only fields are blanked.
    pub fn policy_hash(&self) -> String {
        let mut c = self.cfg.clone();
        c.seed = None;
        c.mode = crate::config::Mode::Train;
        c.eval_episodes = 0;
        c.schemes.clear();
        c.volume_series = Default::default();
        c.hash()
    }

    /// A fresh copy of the idle network.
    pub fn graph(&self) -> NetworkGraph {
        self.base.clone()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rates.len()
    }

    pub fn new_learner(&self, scheme: Scheme) -> Learner {
        let seed = rng::derive_seed(self.seed, &[tag::INIT, scheme as u64]);
        Learner::new(self.n_agents(), OBS_DIM, self.n_actions(), scheme == Scheme::Sac, &self.cfg.sac, seed)
    }

    fn phase_seed(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Train => self.seed,
            Phase::Eval => rng::derive_seed(self.seed, &[tag::EVAL]),
        }
    }

    pub fn tasks(&self, phase: Phase, episode: u64) -> Result<Vec<Task>, EngineError> {
        Ok(workload::generate_episode(&self.cfg.workload, &self.endpoints, self.phase_seed(phase), episode)?)
    }

    fn agent_of(&self, g: &NetworkGraph, task: &Task) -> Option<usize> {
        let gs = match task.destination {
            Destination::GroundStation(gs) => Some(gs),
            Destination::User(u) => g.ground_station_of(u),
        }?;
        self.agents.iter().position(|&a| a == gs)
    }

    fn monitoring_rate(task: &Task) -> u64 {
        let bits = task.data_bytes.unwrap_or(0) as f64 * 8.0;
        ((bits / task.deadline_s).ceil() as u64).max(1)
    }

    fn observe(&self, g: &NetworkGraph, cand: &PathCandidate, task: &Task, fit: usize, st: &EpisodeState, agent: usize) -> Vec<f64> {
        let min_ratio = |band: Band| {
            cand.links
                .iter()
                .map(|&l| g.link(l))
                .filter(|l| l.band == band)
                .map(|l| l.available_ratio())
                .fold(1.0, f64::min)
        };
        let uplink_gain = cand
            .links
            .iter()
            .map(|&l| g.link(l))
            .find(|l| g.nodes()[l.src.0].kind == NodeKind::Gateway && g.nodes()[l.dst.0].kind == NodeKind::Satellite)
            .map_or(1.0, |l| l.normalized_gain());
        let first_gain = cand.links.first().map_or(1.0, |&l| g.link(l).normalized_gain());
        let max_rate = *self.rates.last().expect("non-empty ladder") as f64;
        let norm = |r: Option<u64>| r.map_or(0.0, |r| r as f64 / max_rate);
        let fit_bytes = self.cfg.ladder.levels[fit].segment_bytes as f64 / self.cfg.ladder.max_segment_bytes() as f64;
        vec![
            min_ratio(Band::Satellite),
            uplink_gain,
            min_ratio(Band::Ground),
            first_gain,
            norm(st.prev_raw[agent]),
            norm(st.prev_exec[agent]),
            fit_bytes,
            task.deadline_s / self.cfg.workload.max_deadline_s(),
        ]
    }

    /// Runs one episode on `g`, which must be idle; it is idle again on return.
    pub fn run_episode(&self, g: &mut NetworkGraph, ctl: &Controller, phase: Phase, episode: u64) -> Result<EpisodeTrace, EngineError> {
        let scheme = match ctl {
            Controller::Learned { learner, .. } if learner.shared => Scheme::Sac,
            Controller::Learned { .. } => Scheme::CcMasac,
            Controller::Rrp => Scheme::Rrp,
            Controller::RndMaxbr => Scheme::RndMaxbr,
        }
        .label();
        let tasks = self.tasks(phase, episode)?;
        let n = self.n_agents();
        let mut st = EpisodeState {
            latest_obs: vec![vec![0.0; OBS_DIM]; n],
            last_action: vec![None; n],
            prev_raw: vec![None; n],
            prev_exec: vec![None; n],
            act_rng: rng::stream(self.seed, &[tag::ACT, phase.tag(), episode]),
            baseline_rng: rng::stream(self.seed, &[tag::BASELINE, phase.tag(), episode]),
            records: Vec::with_capacity(tasks.len()),
            decisions: Vec::new(),
            paths: Vec::with_capacity(tasks.len()),
        };
        let steps = self.cfg.workload.steps_per_episode;
        let channel_seed = self.phase_seed(phase);
        let mut snapshots = Vec::with_capacity(steps);
        let mut next = 0;
        for step in 0..steps {
            g.refresh_capacities(episode * steps as u64 + step as u64, channel_seed, &self.cfg.channel)?;
            let slot_start = st.records.len();
            let mut held = Vec::new();
            while next < tasks.len() && tasks[next].arrival_step == step {
                if let Some(h) = self.run_task(g, ctl, &tasks[next], scheme, episode, step, &mut st)? {
                    held.push(h);
                }
                next += 1;
            }
            let (link_reserved_bps, compute_reserved_cps) = g.total_reserved();
            snapshots.push(SlotSnapshot {
                episode,
                step,
                tasks: st.records.len() - slot_start,
                link_reserved_bps,
                compute_reserved_cps,
            });
            self.settle_slot(&mut st.records[slot_start..]);
            for h in &held {
                h.release(g)?;
            }
        }
        if !g.is_idle() || !g.ledger().closed() {
            return Err(EngineError::LedgerOpen(episode));
        }
        let summary = metrics::summarize(&st.records);
        Ok(EpisodeTrace { episode, records: st.records, decisions: st.decisions, snapshots, paths: st.paths, summary })
    }

    /// Fills completion ratio and reward once every task of the slot is known.
    fn settle_slot(&self, slot: &mut [TaskRecord]) {
        let ratio = |rs: &mut dyn Iterator<Item = &TaskRecord>| {
            let (done, all) = rs.fold((0usize, 0usize), |(d, a), r| (d + r.completed() as usize, a + 1));
            if all == 0 {
                0.0
            } else {
                done as f64 / all as f64
            }
        };
        let slot_rc = ratio(&mut slot.iter());
        let per_agent: BTreeMap<Option<usize>, f64> = slot
            .iter()
            .map(|r| r.agent)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|a| (a, ratio(&mut slot.iter().filter(|r| r.agent == a))))
            .collect();
        for r in slot.iter_mut() {
            let rc = if self.cfg.sac.per_agent_reward { per_agent[&r.agent] } else { slot_rc };
            r.slot_completion = rc;
            r.reward = metrics::task_reward(r.qoe, r.e_total, r.completed(), &self.cfg.reward, rc);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_task(
        &self,
        g: &mut NetworkGraph,
        ctl: &Controller,
        task: &Task,
        scheme: &str,
        episode: u64,
        step: usize,
        st: &mut EpisodeState,
    ) -> Result<Option<Held>, EngineError> {
        let agent = self.agent_of(g, task);
        let mut rec = blank_record(scheme, episode, step, task, agent);
        let discard = |mut rec: TaskRecord, cause, st: &mut EpisodeState| {
            rec.cause = Some(cause);
            st.records.push(rec);
        };
        let Ok(route) = Route::for_task(task, g) else {
            st.paths.push(PathLog { episode, task_id: task.id, candidates: vec![], chosen: None });
            discard(rec, DiscardCause::NoPath, st);
            return Ok(None);
        };
        let video = task.kind == TaskKind::VideoStreaming;
        let base_rate = if video { self.rates[0] } else { Self::monitoring_rate(task) };
        let psru = &self.cfg.psru;

        let (attempts, chosen) = match ctl {
            Controller::Learned { .. } => {
                let sel = pathsel::select_path(g, &route, base_rate, psru)?;
                (sel.candidates, sel.chosen)
            }
            Controller::Rrp | Controller::RndMaxbr => {
                let pick = match ctl {
                    Controller::Rrp => masac::baseline_rrp(g, &route, base_rate, psru),
                    _ => masac::baseline_rnd_maxbr(g, &route, base_rate, psru, &mut st.baseline_rng),
                };
                if let Some(c) = &pick {
                    let r = pathsel::try_reserve(g, &c.links, base_rate, &[])?;
                    debug_assert_eq!(r, Reservation::Accepted);
                }
                let attempts = pick
                    .iter()
                    .map(|c| Attempt { nodes: c.nodes.clone(), score: Some(c.score), accepted: true })
                    .collect();
                (attempts, pick)
            }
        };
        st.paths.push(PathLog { episode, task_id: task.id, candidates: attempts, chosen: chosen.as_ref().map(|c| c.nodes.clone()) });
        let Some(cand) = chosen else {
            discard(rec, DiscardCause::NoPath, st);
            return Ok(None);
        };
        rec.path = cand.label();
        rec.path_score = cand.score;

        let mut rate = base_rate;
        let mut sized = task.clone();
        let mut prev_bitrate = None;
        if video {
            let fit = masac::highest_fitting_level(g, &cand.links, &self.rates, base_rate).unwrap_or(0);
            let action = match ctl {
                Controller::Learned { learner, mode } => {
                    let a = agent.expect("video tasks have an owning ground station");
                    let obs = self.observe(g, &cand, task, fit, st, a);
                    st.latest_obs[a] = obs.clone();
                    let state = learner.critic_input(&obs, &st.latest_obs, &st.last_action);
                    let action = learner.act(a, &obs, *mode, &mut st.act_rng)?;
                    st.decisions.push(Decision { agent: a, record: st.records.len(), obs, state, action });
                    action
                }
                _ => fit,
            };
            let level = action.min(fit);
            let extra = self.rates[level] - base_rate;
            if extra > 0 {
                let r = pathsel::try_reserve(g, &cand.links, extra, &[])?;
                debug_assert_eq!(r, Reservation::Accepted);
            }
            rate = self.rates[level];
            if let Some(a) = agent {
                st.last_action[a] = Some(action);
                prev_bitrate = st.prev_exec[a];
                st.prev_raw[a] = Some(self.rates[action]);
                st.prev_exec[a] = Some(rate);
            }
            sized = task.with_level(&self.cfg.ladder, level)?;
            rec.action = Some(action);
            rec.level = Some(level);
            rec.bitrate_bps = rate as f64;
        }

        let plan = match offload::plan_offload(&sized, &cand.nodes, g, &self.cfg.offload, rate) {
            Ok(p) => p,
            Err(OffloadError::Infeasible { .. } | OffloadError::ZeroRate(_)) => {
                pathsel::release(g, &cand.links, rate, &[])?;
                discard(rec, DiscardCause::Infeasible, st);
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        let compute: Vec<(NodeId, u64)> =
            plan.shares.iter().filter(|s| s.fraction > 0.0 && s.alloc_cps > 0).map(|s| (s.node, s.alloc_cps)).collect();
        for &(n, c) in &compute {
            g.reserve_compute(n, c)?;
        }
        let held = Held { links: cand.links.clone(), rate, compute };
        let d = offload::total_delay(&plan)?;
        rec.t_total = d.t_total;
        rec.t_comp_lc = d.t_comp_lc;
        rec.t_comm_lc = d.t_comm_lc;
        rec.t_comp_sc = d.t_comp_sc;
        rec.t_comm_sc = d.t_comm_sc;
        if offload::enforce_deadline(&d, &sized) == offload::DeadlineOutcome::Discarded {
            held.release(g)?;
            discard(rec, DiscardCause::DeadlineMiss, st);
            return Ok(None);
        }
        let usage = offload::usage_ratios(&plan, g, self.cfg.offload.slot_s);
        rec.u_comm = usage.u_comm;
        rec.u_comp = usage.u_comp;
        if video {
            let first = g.link(cand.links[0]);
            let first_rate = (first.available_bps() + rate.min(first.reserved_bps)) as f64;
            let bytes = sized.data_bytes.unwrap_or(0) as f64;
            let mut transcode = 0.0;
            for s in plan.shares.iter().filter(|s| s.fraction > 0.0) {
                transcode += offload::computation_delay(s.fraction, bytes, plan.cycles_per_byte as f64, s.alloc_cps as f64)?;
            }
            let src = &g.nodes()[cand.nodes[0].0];
            let cpu = plan.shares.first().filter(|s| s.alloc_cps > 0).map_or(src.compute_capacity, |s| s.alloc_cps);
            let e = offload::streaming_energy(
                &EnergyInputs {
                    bitrate_bps: rate as f64,
                    segment_seconds: self.cfg.ladder.segment_seconds,
                    uplink_gain: first.current_gain,
                    uplink_bandwidth_hz: first.bandwidth_hz,
                    upload_time_s: offload::transmission_delay(bytes, first_rate)?,
                    cpu_hz: cpu as f64,
                    transcode_time_s: transcode,
                    noise_psd_w_per_hz: self.cfg.channel.noise_psd_w_per_hz(),
                },
                &self.cfg.offload.energy,
            )?;
            rec.e_encode = e.e_encode;
            rec.e_upload = e.e_upload;
            rec.e_transcode = e.e_transcode;
            rec.e_total = e.e_total;
            let bottleneck = cand
                .links
                .iter()
                .map(|&l| {
                    let l = g.link(l);
                    (l.available_bps() + rate.min(l.reserved_bps)) as f64
                })
                .fold(f64::INFINITY, f64::min);
            let prev = prev_bitrate.unwrap_or(rate) as f64;
            rec.qoe = metrics::qoe(prev, rate as f64, bottleneck, &self.cfg.qoe)?;
        }
        rec.status = TaskStatus::Completed;
        st.records.push(rec);
        Ok(Some(held))
    }
}

/// Turns an episode's decisions into replay transitions, per agent in order.
pub fn transitions(trace: &EpisodeTrace) -> Vec<(usize, Transition)> {
    let mut out = Vec::with_capacity(trace.decisions.len());
    for (i, d) in trace.decisions.iter().enumerate() {
        let next = trace.decisions[i + 1..].iter().find(|n| n.agent == d.agent);
        let (next_state, next_obs, done) = match next {
            Some(n) => (n.state.clone(), n.obs.clone(), false),
            None => (d.state.clone(), d.obs.clone(), true),
        };
        out.push((
            d.agent,
            Transition {
                state: d.state.clone(),
                obs: d.obs.clone(),
                action: d.action,
                reward: trace.records[d.record].reward,
                next_state,
                next_obs,
                done,
            },
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    /// Gradient updates so far.
    pub step: u64,
    pub episode: u64,
    pub loss_actor: Option<f64>,
    pub loss_q1: Option<f64>,
    pub loss_q2: Option<f64>,
    pub entropy: Option<f64>,
    pub mean_reward: f64,
}

/// Flat per-episode row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scheme: String,
    pub episode: u64,
    pub tasks: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub mean_reward: f64,
    pub mean_qoe: f64,
    pub mean_energy: f64,
    pub mean_delay: f64,
}

impl EpisodeRow {
    pub fn new(scheme: &str, episode: u64, s: &Summary) -> Self {
        Self {
            scheme: scheme.to_string(),
            episode,
            tasks: s.tasks,
            completed: s.completed,
            completion_rate: s.completion_rate,
            mean_reward: s.mean_reward,
            mean_qoe: s.mean_qoe,
            mean_energy: s.mean_energy,
            mean_delay: s.mean_delay,
        }
    }
}

pub struct TrainOutput {
    pub learner: Learner,
    pub log: Vec<TrainLogRow>,
    pub episodes: Vec<EpisodeRow>,
    pub records: Vec<TaskRecord>,
    pub snapshots: Vec<SlotSnapshot>,
    pub checkpoints: Vec<(u64, Checkpoint)>,
}

#[derive(Default)]
struct StatsAcc {
    n: usize,
    actor: f64,
    q1: f64,
    q2: f64,
    entropy: f64,
}

impl StatsAcc {
    fn add(&mut self, s: &masac::UpdateStats) {
        self.n += 1;
        self.actor += s.loss_actor;
        self.q1 += s.loss_q1;
        self.q2 += s.loss_q2;
        self.entropy += s.entropy;
    }

    fn mean(&self, v: f64) -> Option<f64> {
        (self.n > 0).then(|| v / self.n as f64)
    }
}

impl Engine {
    /// Trains `scheme` (cc-masac or sac) for the configured number of episodes.
    pub fn train(&self, scheme: Scheme) -> Result<TrainOutput, EngineError> {
        if !scheme.learns() {
            return Err(EngineError::MissingPolicy(scheme.label()));
        }
        let mut learner = self.new_learner(scheme);
        let mut g = self.graph();
        let hash = self.policy_hash();
        let mut out = TrainOutput {
            learner: learner.clone(),
            log: Vec::new(),
            episodes: Vec::new(),
            records: Vec::new(),
            snapshots: Vec::new(),
            checkpoints: Vec::new(),
        };
        let mut updates = 0u64;
        for ep in 0..self.cfg.episodes as u64 {
            let trace = self.run_episode(&mut g, &Controller::Learned { learner: &learner, mode: ActMode::Sample }, Phase::Train, ep)?;
            let mut acc = StatsAcc::default();
            for (agent, t) in transitions(&trace) {
                learner.store(agent, t);
                for _ in 0..self.cfg.sac.updates_per_transition {
                    match learner.update_agent(agent) {
                        Ok(Some(s)) => {
                            updates += 1;
                            acc.add(&s);
                        }
                        Ok(None) => {}
                        Err(e) => {
                            return Err(EngineError::NonFinite {
                                episode: ep,
                                detail: e.to_string(),
                                checkpoint: Box::new(learner.checkpoint(scheme.label(), &hash)),
                            })
                        }
                    }
                }
            }
            if !learner.is_finite() {
                return Err(EngineError::NonFinite {
                    episode: ep,
                    detail: "non-finite network parameters".into(),
                    checkpoint: Box::new(learner.checkpoint(scheme.label(), &hash)),
                });
            }
            out.log.push(TrainLogRow {
                step: updates,
                episode: ep,
                loss_actor: acc.mean(acc.actor),
                loss_q1: acc.mean(acc.q1),
                loss_q2: acc.mean(acc.q2),
                entropy: acc.mean(acc.entropy),
                mean_reward: trace.summary.mean_reward,
            });
            out.episodes.push(EpisodeRow::new(scheme.label(), ep, &trace.summary));
            out.snapshots.extend(trace.snapshots);
            out.records.extend(trace.records);
            if (ep + 1) % self.cfg.checkpoint_every as u64 == 0 {
                out.checkpoints.push((ep + 1, learner.checkpoint(scheme.label(), &hash)));
            }
        }
        out.learner = learner;
        Ok(out)
    }

    /// Loads `ck` into a fresh learner for `scheme`.
    pub fn learner_from(&self, scheme: Scheme, ck: &Checkpoint) -> Result<Learner, EngineError> {
        if ck.scheme != scheme.label() {
            return Err(EngineError::WrongScheme { expected: scheme.label(), found: ck.scheme.clone() });
        }
        if ck.config_hash != self.policy_hash() {
            log::warn!("checkpoint config hash differs from the current configuration");
        }
        let mut l = self.new_learner(scheme);
        l.load(ck)?;
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub scheme: Scheme,
    pub records: Vec<TaskRecord>,
    pub episodes: Vec<EpisodeRow>,
    pub paths: Vec<PathLog>,
    pub summary: Summary,
}

impl Engine {
    /// Greedy rollout of `scheme` over the evaluation episodes; nothing is learned.
    pub fn evaluate(&self, scheme: Scheme, learner: Option<&Learner>) -> Result<EvalOutput, EngineError> {
        let ctl = match scheme {
            Scheme::CcMasac | Scheme::Sac => Controller::Learned {
                learner: learner.ok_or(EngineError::MissingPolicy(scheme.label()))?,
                mode: ActMode::Greedy,
            },
            Scheme::Rrp => Controller::Rrp,
            Scheme::RndMaxbr => Controller::RndMaxbr,
        };
        let mut g = self.graph();
        let mut records = Vec::new();
        let mut episodes = Vec::new();
        let mut paths = Vec::new();
        for ep in 0..self.cfg.eval_episodes as u64 {
            let trace = self.run_episode(&mut g, &ctl, Phase::Eval, ep)?;
            episodes.push(EpisodeRow::new(scheme.label(), ep, &trace.summary));
            records.extend(trace.records);
            paths.extend(trace.paths);
        }
        let summary = metrics::summarize(&records);
        Ok(EvalOutput { scheme, records, episodes, paths, summary })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: String,
    pub tasks: usize,
    pub completion_rate: f64,
    pub mean_reward: f64,
    pub mean_qoe: f64,
    pub mean_energy: f64,
    pub mean_delay: f64,
}

impl CompareRow {
    pub fn new(scheme: &str, s: &Summary) -> Self {
        Self {
            scheme: scheme.to_string(),
            tasks: s.tasks,
            completion_rate: s.completion_rate,
            mean_reward: s.mean_reward,
            mean_qoe: s.mean_qoe,
            mean_energy: s.mean_energy,
            mean_delay: s.mean_delay,
        }
    }
}

/// One point of the task-volume series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub scheme: String,
    pub tasks: usize,
    pub completion_rate: f64,
    pub mean_reward: f64,
    pub mean_energy: f64,
    pub mean_delay: f64,
    pub window_completion_rate: f64,
    pub window_mean_reward: f64,
    pub window_mean_energy: f64,
    pub window_mean_delay: f64,
}

/// Cumulative and trailing-window summaries at each task volume.
pub fn volume_series(scheme: &str, records: &[TaskRecord], vs: &crate::config::VolumeSeries) -> Vec<VolumeRow> {
    let mut points = Vec::new();
    let mut v = vs.start_tasks.min(records.len());
    if v == 0 {
        return Vec::new();
    }
    while v <= records.len() {
        points.push(v);
        v += vs.step_tasks;
    }
    points
        .into_iter()
        .map(|v| {
            let cum = metrics::summarize(&records[..v]);
            let win = metrics::summarize(&records[v.saturating_sub(vs.window_tasks)..v]);
            VolumeRow {
                scheme: scheme.to_string(),
                tasks: v,
                completion_rate: cum.completion_rate,
                mean_reward: cum.mean_reward,
                mean_energy: cum.mean_energy,
                mean_delay: cum.mean_delay,
                window_completion_rate: win.completion_rate,
                window_mean_reward: win.mean_reward,
                window_mean_energy: win.mean_energy,
                window_mean_delay: win.mean_delay,
            }
        })
        .collect()
}

/// Training-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub scheme: String,
    pub episode: u64,
    pub mean_reward: f64,
    pub rolling_reward: f64,
    pub completion_rate: f64,
    pub mean_qoe: f64,
    pub mean_energy: f64,
}

pub fn training_curve(episodes: &[EpisodeRow], window: usize) -> Vec<CurveRow> {
    let mut out = Vec::new();
    let mut by_scheme: BTreeMap<&str, Vec<&EpisodeRow>> = BTreeMap::new();
    for e in episodes {
        by_scheme.entry(e.scheme.as_str()).or_default().push(e);
    }
    for (scheme, rows) in by_scheme {
        let rewards: Vec<f64> = rows.iter().map(|r| r.mean_reward).collect();
        let rolling = metrics::rolling_mean(&rewards, window);
        for (r, roll) in rows.iter().zip(rolling) {
            out.push(CurveRow {
                scheme: scheme.to_string(),
                episode: r.episode,
                mean_reward: r.mean_reward,
                rolling_reward: roll,
                completion_rate: r.completion_rate,
                mean_qoe: r.mean_qoe,
                mean_energy: r.mean_energy,
            });
        }
    }
    out
}

pub struct CompareOutput {
    pub table: Vec<CompareRow>,
    pub volume: Vec<VolumeRow>,
    pub evals: Vec<EvalOutput>,
}

impl Engine {
    /// Evaluates every scheme on the same evaluation workload. Learned schemes
    /// take their policy from `policies`.
    pub fn compare(&self, schemes: &[Scheme], policies: &BTreeMap<Scheme, Learner>) -> Result<CompareOutput, EngineError> {
        let mut out = CompareOutput { table: Vec::new(), volume: Vec::new(), evals: Vec::new() };
        for &s in schemes {
            let eval = self.evaluate(s, policies.get(&s))?;
            out.table.push(CompareRow::new(s.label(), &eval.summary));
            out.volume.extend(volume_series(s.label(), &eval.records, &self.cfg.volume_series));
            out.evals.push(eval);
        }
        Ok(out)
    }
}

/// Writes rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads rows written by [`write_csv`].
pub fn read_csv<T: serde::de::DeserializeOwned, R: std::io::Read>(r: R) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(rows: &[T], mut w: W) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
