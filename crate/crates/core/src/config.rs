//! Experiment configuration document and the `paper-fig4` preset.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{db_to_linear, ChannelParams, GainModel};
use crate::masac::SacConfig;
use crate::metrics::{QoEParams, RewardWeights};
use crate::offload::{Allocation, OffloadParams};
use crate::pathsel::PsruConfig;
use crate::topology::{Band, LinkSpec, NetworkGraph, NodeKind, NodeSpec, SatUserPair, TopologyConfig, TopologyError};
use crate::workload::{BitrateLadder, WorkloadConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const PRESET: &str = "paper-fig4";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}{path}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { path: String, line: Option<usize>, message: String },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.into(), line: None, message: message.into() }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Parse { .. } => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Invalid { line, .. } => *line,
            ConfigError::Parse { line, .. } => Some(*line),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "cc-masac")]
    CcMasac,
    #[serde(rename = "sac")]
    Sac,
    #[serde(rename = "rrp")]
    Rrp,
    #[serde(rename = "rnd-maxbr")]
    RndMaxbr,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::CcMasac, Scheme::Sac, Scheme::Rrp, Scheme::RndMaxbr];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::CcMasac => "cc-masac",
            Scheme::Sac => "sac",
            Scheme::Rrp => "rrp",
            Scheme::RndMaxbr => "rnd-maxbr",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, Scheme::CcMasac | Scheme::Sac)
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| format!("unknown scheme `{s}` (expected cc-masac, sac, rrp or rnd-maxbr)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
    Compare,
}

/// Task-volume series settings for the comparison export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeSeries {
    /// First plotted volume; everything before it is averaged into the first point.
    pub start_tasks: usize,
    pub step_tasks: usize,
    pub window_tasks: usize,
}

impl Default for VolumeSeries {
    fn default() -> Self {
        Self { start_tasks: 2500, step_tasks: 500, window_tasks: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub preset: String,
    pub seed: Option<u64>,
    pub mode: Mode,
    pub episodes: usize,
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub schemes: Vec<Scheme>,
    pub volume_series: VolumeSeries,
    pub topology: TopologyConfig,
    pub channel: ChannelParams,
    pub workload: WorkloadConfig,
    pub ladder: BitrateLadder,
    pub offload: OffloadParams,
    pub qoe: QoEParams,
    pub reward: RewardWeights,
    pub psru: PsruConfig,
    pub sac: SacConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        paper_fig4()
    }
}

/// Channel power gain that yields `rate_bps` over `bandwidth_hz` at `tx_power_w`.
pub fn gain_for_rate(rate_bps: f64, bandwidth_hz: f64, tx_power_w: f64, channel: &ChannelParams) -> f64 {
    (2f64.powf(rate_bps / bandwidth_hz) - 1.0) * bandwidth_hz * channel.noise_psd_w_per_hz() / tx_power_w
}

/// Ten edges behind five gateways, three core satellites with seven
/// neighbours, three ground stations with two users each.
pub fn paper_fig4_topology(channel: &ChannelParams) -> TopologyConfig {
    const KM: f64 = 1e3;
    const ALT: f64 = 550.0 * KM;
    const SIGMA: f64 = 0.4;
    let mut nodes = Vec::new();
    let mut node = |kind: NodeKind, position: [f64; 3], compute: f64| {
        let id = nodes.len();
        nodes.push(NodeSpec { id, kind, position, compute_capacity: compute });
        id
    };
    let edges: Vec<usize> = (0..10)
        .map(|i| node(NodeKind::Edge, [(i / 2) as f64 * 200.0 * KM + (i % 2) as f64 * 30.0 * KM, 0.0, 0.0], 0.5e9))
        .collect();
    let gateways: Vec<usize> =
        (0..5).map(|k| node(NodeKind::Gateway, [k as f64 * 200.0 * KM + 15.0 * KM, 20.0 * KM, 0.0], 0.0)).collect();
    let cores: Vec<usize> =
        (0..3).map(|c| node(NodeKind::Satellite, [c as f64 * 400.0 * KM + 50.0 * KM, 100.0 * KM, ALT], 50e9)).collect();
    let neighbour_count = [2usize, 3, 2];
    let mut neighbours: Vec<(usize, usize)> = Vec::new();
    for (c, &n) in neighbour_count.iter().enumerate() {
        for j in 0..n {
            let x = c as f64 * 400.0 * KM + (j as f64 - 1.0) * 150.0 * KM + 50.0 * KM;
            let id = node(NodeKind::Satellite, [x, 350.0 * KM, ALT], 50e9);
            neighbours.push((c, id));
        }
    }
    let stations: Vec<usize> =
        (0..3).map(|k| node(NodeKind::GroundStation, [k as f64 * 400.0 * KM + 50.0 * KM, 500.0 * KM, 0.0], 0.0)).collect();
    let users: Vec<usize> = (0..6)
        .map(|u| node(NodeKind::User, [(u / 2) as f64 * 400.0 * KM + (u % 2) as f64 * 40.0 * KM, 550.0 * KM, 0.0], 0.0))
        .collect();

    let ground_bw = channel.ground_bandwidth_hz;
    let sat_bw = channel.satellite_bandwidth_hz;
    let shannon = |src: usize, dst: usize, band: Band, mbps: f64, bidirectional: bool| {
        let (bw, p) = match band {
            Band::Ground => (ground_bw, 1.0),
            Band::Satellite => (sat_bw, 10.0),
        };
        LinkSpec {
            src,
            dst,
            band,
            bandwidth_hz: None,
            tx_power_w: p,
            gain_tx: 1.0,
            gain_rx: 1.0,
            channel_gain: Some(GainModel { mean: gain_for_rate(mbps * 1e6, bw, p, channel), sigma: SIGMA }),
            bidirectional,
        }
    };
    let antenna = db_to_linear(16.2);
    let isl = |src: usize, dst: usize| LinkSpec {
        src,
        dst,
        band: Band::Satellite,
        bandwidth_hz: None,
        tx_power_w: db_to_linear(30.0),
        gain_tx: antenna,
        gain_rx: antenna,
        channel_gain: None,
        bidirectional: true,
    };

    let mut links = Vec::new();
    for k in 0..5 {
        let (a, b) = (edges[2 * k], edges[2 * k + 1]);
        links.push(shannon(a, b, Band::Ground, 100.0, true));
        links.push(shannon(a, gateways[k], Band::Ground, 60.0, false));
        links.push(shannon(b, gateways[k], Band::Ground, 60.0, false));
    }
    // Each gateway sees one core satellite and one neighbour.
    let uplinks = [(0, 0), (1, 2), (1, 3), (2, 5), (2, 6)];
    for (k, &(core, nb)) in uplinks.iter().enumerate() {
        links.push(shannon(gateways[k], cores[core], Band::Satellite, 80.0, false));
        links.push(shannon(gateways[k], neighbours[nb].1, Band::Satellite, 80.0, false));
    }
    links.push(isl(cores[0], cores[1]));
    links.push(isl(cores[0], cores[2]));
    links.push(isl(cores[1], cores[2]));
    for &(c, n) in &neighbours {
        links.push(isl(cores[c], n));
    }
    for (k, &gs) in stations.iter().enumerate() {
        links.push(shannon(cores[k], gs, Band::Satellite, 150.0, false));
        for &(c, n) in &neighbours {
            if c == k {
                links.push(shannon(n, gs, Band::Satellite, 150.0, false));
            }
        }
        for &u in &users[2 * k..2 * k + 2] {
            links.push(shannon(gs, u, Band::Ground, 80.0, false));
        }
    }
    let sat_user_pairs =
        (0..3).map(|k| SatUserPair { satellite: cores[k], users: users[2 * k..2 * k + 2].to_vec() }).collect();
    TopologyConfig { nodes, links, sat_user_pairs }
}

pub fn paper_fig4() -> ExperimentConfig {
    let channel = ChannelParams::default();
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        preset: PRESET.to_string(),
        seed: None,
        mode: Mode::Train,
        episodes: 500,
        checkpoint_every: 100,
        eval_episodes: 200,
        schemes: Scheme::ALL.to_vec(),
        volume_series: VolumeSeries::default(),
        topology: paper_fig4_topology(&channel),
        channel,
        workload: WorkloadConfig { video_deadline_s: 1.0, ..WorkloadConfig::default() },
        ladder: BitrateLadder::default(),
        offload: OffloadParams {
            allocation: Allocation::FixedShare { edge: 0.25, satellite: 0.1 },
            ..OffloadParams::default()
        },
        qoe: QoEParams::default(),
        reward: RewardWeights::default(),
        psru: PsruConfig::default(),
        sac: SacConfig::default(),
    }
}

impl ExperimentConfig {
    /// Parses a config document; absent fields take preset values.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
        })?;
        cfg.validate().map_err(|e| locate(e, text))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad("schema_version", format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.preset != PRESET {
            return Err(bad("preset", format!("unknown preset `{}` (expected `{PRESET}`)", self.preset)));
        }
        if self.checkpoint_every == 0 {
            return Err(bad("checkpoint_every", "must be >= 1"));
        }
        if self.schemes.is_empty() {
            return Err(bad("schemes", "needs at least one scheme"));
        }
        if self.volume_series.step_tasks == 0 || self.volume_series.window_tasks == 0 {
            return Err(bad("volume_series", "step_tasks and window_tasks must be >= 1"));
        }
        let ch = &self.channel;
        for (f, v) in [
            ("channel.satellite_bandwidth_hz", ch.satellite_bandwidth_hz),
            ("channel.ground_bandwidth_hz", ch.ground_bandwidth_hz),
            ("channel.carrier_hz", ch.carrier_hz),
            ("channel.noise_temperature_k", ch.noise_temperature_k),
            ("channel.light_speed", ch.light_speed),
            ("channel.boltzmann", ch.boltzmann),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(f, format!("must be positive and finite, got {v}")));
            }
        }
        if let Some(db) = ch.noise_psd_dbm_hz {
            if !db.is_finite() {
                return Err(bad("channel.noise_psd_dbm_hz", "must be finite"));
            }
        }
        self.workload.validate().map_err(|e| bad(workload_path(&e), e.to_string()))?;
        self.ladder.validate().map_err(|e| bad("ladder", e.to_string()))?;
        self.offload.validate().map_err(|e| bad("offload", e))?;
        self.qoe.validate().map_err(|e| bad("qoe", e.to_string()))?;
        self.reward.validate().map_err(|e| bad("reward", e.to_string()))?;
        self.psru.validate().map_err(|e| bad("psru", e))?;
        self.sac.validate().map_err(|e| bad("sac", e))?;
        for (i, l) in self.topology.links.iter().enumerate() {
            if let Some(bw) = l.bandwidth_hz {
                if !(bw > 0.0 && bw.is_finite()) {
                    return Err(bad(format!("topology.links[{i}].bandwidth_hz"), format!("must be positive, got {bw}")));
                }
            }
        }
        let g = NetworkGraph::build(&self.topology, &self.channel).map_err(topology_error)?;
        if g.nodes_of(NodeKind::GroundStation).is_empty() {
            return Err(bad("topology.nodes", "needs at least one ground station"));
        }
        Ok(())
    }
}

fn bad(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::invalid(path, message)
}

fn workload_path(e: &crate::workload::WorkloadError) -> String {
    match e {
        crate::workload::WorkloadError::Invalid { field, .. } => format!("workload.{field}"),
        _ => "workload".to_string(),
    }
}

fn topology_error(e: TopologyError) -> ConfigError {
    let msg = e.to_string();
    // Errors that concern one entry start with `nodes[i]` or `links[i]`.
    match msg.split_once(": ") {
        Some((head, rest)) if head.ends_with(']') => ConfigError::invalid(format!("topology.{head}"), rest),
        _ => ConfigError::invalid("topology", msg),
    }
}

/// Best-effort source line for a field path such as `topology.links[3].bandwidth_hz`.
fn locate(e: ConfigError, text: &str) -> ConfigError {
    let ConfigError::Invalid { path, message, .. } = e else { return e };
    let mut pos = 0usize;
    for seg in path.split('.') {
        let (key, index) = match seg.split_once('[') {
            Some((k, i)) => (k, i.trim_end_matches(']').parse::<usize>().ok()),
            None => (seg, None),
        };
        let needle = format!("\"{key}\"");
        let Some(off) = text[pos..].find(&needle) else { break };
        pos += off + needle.len();
        if let Some(i) = index {
            // Skip to the i-th object of the array.
            let mut depth = 0i32;
            let mut seen = 0usize;
            for (j, ch) in text[pos..].char_indices() {
                match ch {
                    '{' => {
                        if depth == 1 {
                            if seen == i {
                                pos += j;
                                break;
                            }
                            seen += 1;
                        }
                        depth += 1;
                    }
                    '[' => depth += 1,
                    '}' | ']' => {
                        depth -= 1;
                        if depth <= 0 {
                            break;
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    let line = if pos == 0 { None } else { Some(text[..pos].matches('\n').count() + 1) };
    ConfigError::Invalid { path, line, message }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ground_uplink_rate;

    #[test]
    fn preset_shape() {
        let cfg = paper_fig4();
        cfg.validate().unwrap();
        let g = NetworkGraph::build(&cfg.topology, &cfg.channel).unwrap();
        assert_eq!(g.nodes_of(NodeKind::Edge).len(), 10);
        assert_eq!(g.nodes_of(NodeKind::GroundStation).len(), 3);
        let sats = g.nodes_of(NodeKind::Satellite);
        // Core satellites are the ones with at least three inter-satellite links.
        let cores = sats
            .iter()
            .filter(|&&s| g.out_links(s).iter().filter(|l| g.nodes()[g.link(**l).dst.0].kind == NodeKind::Satellite).count() >= 3)
            .count();
        assert_eq!(cores, 3);
    }

    #[test]
    fn gain_inverts_rate() {
        let ch = ChannelParams::default();
        let g = gain_for_rate(60e6, 100e6, 1.0, &ch);
        let r = ground_uplink_rate(100e6, g, 1.0, &ch).unwrap();
        assert!((r - 60e6).abs() < 1e-3);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig { seed: Some(9), ..paper_fig4() };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn empty_document_is_the_preset() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), paper_fig4());
    }

    #[test]
    fn unknown_field_reports_line() {
        let e = ExperimentConfig::from_json("{\n  \"episodes\": 3,\n  \"bogus\": 1\n}").unwrap_err();
        assert_eq!(e.line(), Some(3));
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn negative_bandwidth_names_field() {
        let text = "{\n  \"channel\": {\n    \"ground_bandwidth_hz\": -5.0\n  }\n}";
        let e = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(e.path(), Some("channel.ground_bandwidth_hz"));
        assert_eq!(e.line(), Some(3));
    }

    #[test]
    fn link_errors_point_into_the_array() {
        let mut cfg = paper_fig4();
        cfg.topology.links[4].bandwidth_hz = Some(-1.0);
        let text = cfg.to_json();
        let e = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(e.path(), Some("topology.links[4].bandwidth_hz"));
        let line = e.line().unwrap();
        assert!(text.lines().nth(line - 1).unwrap().contains("bandwidth_hz"), "{line}");
    }

    #[test]
    fn other_presets_are_rejected() {
        let e = ExperimentConfig::from_json("{\"preset\": \"custom\"}").unwrap_err();
        assert_eq!(e.path(), Some("preset"));
    }

    #[test]
    fn scheme_names_parse() {
        for s in Scheme::ALL {
            assert_eq!(s.label().parse::<Scheme>().unwrap(), s);
        }
        assert!("dqn".parse::<Scheme>().is_err());
    }
}
