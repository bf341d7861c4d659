//! Task generation for monitoring and video-streaming workloads.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, tag};
use crate::topology::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("bitrate level {level} out of range (ladder has {len})")]
    LevelOutOfRange { level: usize, len: usize },
    #[error("ladder needs at least 2 levels")]
    ShortLadder,
    #[error("ladder must be strictly increasing in bitrate and segment size (level {0})")]
    NotIncreasing(usize),
    #[error("segment_seconds must be > 0")]
    BadSegment,
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("workload needs at least one {0}")]
    MissingEndpoint(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitrateLevel {
    pub bitrate_bps: u64,
    pub label: String,
    pub segment_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitrateLadder {
    pub levels: Vec<BitrateLevel>,
    /// L_f
    pub segment_seconds: f64,
}

impl Default for BitrateLadder {
    fn default() -> Self {
        let level = |mbps: u64, label: &str, bytes: u64| BitrateLevel {
            bitrate_bps: mbps * 1_000_000,
            label: label.to_string(),
            segment_bytes: bytes,
        };
        Self {
            levels: vec![
                level(1, "360P", 1_280_000),
                level(5, "720P", 3_200_000),
                level(8, "1080P", 5_120_000),
                level(16, "2K", 7_680_000),
            ],
            segment_seconds: 1.0,
        }
    }
}

impl BitrateLadder {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.levels.len() < 2 {
            return Err(WorkloadError::ShortLadder);
        }
        for i in 1..self.levels.len() {
            let (a, b) = (&self.levels[i - 1], &self.levels[i]);
            if a.bitrate_bps >= b.bitrate_bps || a.segment_bytes >= b.segment_bytes {
                return Err(WorkloadError::NotIncreasing(i));
            }
        }
        if self.levels[0].bitrate_bps == 0 || self.levels[0].segment_bytes == 0 {
            return Err(WorkloadError::NotIncreasing(0));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(WorkloadError::BadSegment);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, level: usize) -> Result<&BitrateLevel, WorkloadError> {
        self.levels
            .get(level)
            .ok_or(WorkloadError::LevelOutOfRange { level, len: self.levels.len() })
    }

    pub fn video_bytes_for_level(&self, level: usize) -> Result<u64, WorkloadError> {
        Ok(self.level(level)?.segment_bytes)
    }

    pub fn max_bitrate_bps(&self) -> u64 {
        self.levels.last().map_or(0, |l| l.bitrate_bps)
    }

    pub fn max_segment_bytes(&self) -> u64 {
        self.levels.last().map_or(0, |l| l.segment_bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Monitoring,
    VideoStreaming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    User(NodeId),
    GroundStation(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub kind: TaskKind,
    /// D_m. `None` for a video task until its level is chosen.
    pub data_bytes: Option<u64>,
    pub cycles_per_byte: u64,
    pub deadline_s: f64,
    pub source_edge: NodeId,
    pub destination: Destination,
    pub arrival_step: usize,
    pub chosen_level: Option<usize>,
}

impl Task {
    /// Fixes the bitrate level of a video task.
    pub fn with_level(&self, ladder: &BitrateLadder, level: usize) -> Result<Task, WorkloadError> {
        let bytes = ladder.video_bytes_for_level(level)?;
        Ok(Task { data_bytes: Some(bytes), chosen_level: Some(level), ..self.clone() })
    }

    /// Task size; a video task without a level reports the given level's size.
    pub fn bytes_at(&self, ladder: &BitrateLadder, level: usize) -> Result<u64, WorkloadError> {
        match self.kind {
            TaskKind::Monitoring => Ok(self.data_bytes.unwrap_or(0)),
            TaskKind::VideoStreaming => ladder.video_bytes_for_level(level),
        }
    }

    pub fn cycles(&self) -> Option<u64> {
        self.data_bytes.map(|d| d * self.cycles_per_byte)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub tasks_per_episode: usize,
    /// Inclusive byte range for monitoring tasks.
    pub monitoring_bytes_range: [u64; 2],
    pub monitoring_cycles_per_byte: u64,
    pub video_cycles_per_byte_range: [u64; 2],
    /// Fraction of video tasks.
    pub video_ratio: f64,
    pub monitoring_deadline_s: f64,
    pub video_deadline_s: f64,
    /// Tasks are split evenly over this many arrival steps.
    pub steps_per_episode: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            tasks_per_episode: 25,
            monitoring_bytes_range: [100_000, 500_000],
            monitoring_cycles_per_byte: 200,
            video_cycles_per_byte_range: [50, 100],
            video_ratio: 0.5,
            monitoring_deadline_s: 2.0,
            video_deadline_s: 5.0,
            steps_per_episode: 1,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let invalid = |field, reason: &str| Err(WorkloadError::Invalid { field, reason: reason.into() });
        let [lo, hi] = self.monitoring_bytes_range;
        if lo == 0 || lo > hi {
            return invalid("monitoring_bytes_range", "needs 0 < low <= high");
        }
        let [lo, hi] = self.video_cycles_per_byte_range;
        if lo == 0 || lo > hi {
            return invalid("video_cycles_per_byte_range", "needs 0 < low <= high");
        }
        if self.monitoring_cycles_per_byte == 0 {
            return invalid("monitoring_cycles_per_byte", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.video_ratio) {
            return invalid("video_ratio", "must lie in [0, 1]");
        }
        if !(self.monitoring_deadline_s > 0.0) {
            return invalid("monitoring_deadline_s", "must be > 0");
        }
        if !(self.video_deadline_s > 0.0) {
            return invalid("video_deadline_s", "must be > 0");
        }
        if self.steps_per_episode == 0 {
            return invalid("steps_per_episode", "must be >= 1");
        }
        Ok(())
    }

    /// (monitoring, video) counts for one episode.
    pub fn class_counts(&self) -> (usize, usize) {
        let video = (self.tasks_per_episode as f64 * self.video_ratio).round_ties_even() as usize;
        let video = video.min(self.tasks_per_episode);
        (self.tasks_per_episode - video, video)
    }

    pub fn max_deadline_s(&self) -> f64 {
        self.monitoring_deadline_s.max(self.video_deadline_s)
    }
}

/// Node sets tasks are drawn from.
#[derive(Debug, Clone, Default)]
pub struct Endpoints {
    pub edges: Vec<NodeId>,
    pub ground_stations: Vec<NodeId>,
    pub users: Vec<NodeId>,
}

pub fn generate_episode(
    cfg: &WorkloadConfig,
    endpoints: &Endpoints,
    seed: u64,
    episode: u64,
) -> Result<Vec<Task>, WorkloadError> {
    let (n_mon, n_video) = cfg.class_counts();
    if cfg.tasks_per_episode > 0 && endpoints.edges.is_empty() {
        return Err(WorkloadError::MissingEndpoint("edge"));
    }
    if n_mon > 0 && endpoints.ground_stations.is_empty() {
        return Err(WorkloadError::MissingEndpoint("ground station"));
    }
    if n_video > 0 && endpoints.users.is_empty() {
        return Err(WorkloadError::MissingEndpoint("user"));
    }
    let mut rng = rng::stream(seed, &[tag::WORKLOAD, episode]);
    let mut kinds: Vec<TaskKind> = std::iter::repeat_n(TaskKind::VideoStreaming, n_video)
        .chain(std::iter::repeat_n(TaskKind::Monitoring, n_mon))
        .collect();
    kinds.shuffle(&mut rng);

    let n = kinds.len();
    let steps = cfg.steps_per_episode;
    let mut tasks = Vec::with_capacity(n);
    for (id, kind) in kinds.into_iter().enumerate() {
        let source_edge = endpoints.edges[rng.random_range(0..endpoints.edges.len())];
        let task = match kind {
            TaskKind::Monitoring => {
                let [lo, hi] = cfg.monitoring_bytes_range;
                let gs = endpoints.ground_stations[rng.random_range(0..endpoints.ground_stations.len())];
                Task {
                    id,
                    kind,
                    data_bytes: Some(rng.random_range(lo..=hi)),
                    cycles_per_byte: cfg.monitoring_cycles_per_byte,
                    deadline_s: cfg.monitoring_deadline_s,
                    source_edge,
                    destination: Destination::GroundStation(gs),
                    arrival_step: id * steps / n,
                    chosen_level: None,
                }
            }
            TaskKind::VideoStreaming => {
                let [lo, hi] = cfg.video_cycles_per_byte_range;
                let user = endpoints.users[rng.random_range(0..endpoints.users.len())];
                Task {
                    id,
                    kind,
                    data_bytes: None,
                    cycles_per_byte: rng.random_range(lo..=hi),
                    deadline_s: cfg.video_deadline_s,
                    source_edge,
                    destination: Destination::User(user),
                    arrival_step: id * steps / n,
                    chosen_level: None,
                }
            }
        };
        tasks.push(task);
    }
    Ok(tasks)
}

/// Writes one JSON object per task.
pub fn write_jsonl<W: Write>(tasks: &[Task], mut w: W) -> std::io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<Task>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoints() -> Endpoints {
        Endpoints {
            edges: (0..10).map(NodeId).collect(),
            ground_stations: vec![NodeId(20), NodeId(21)],
            users: vec![NodeId(30), NodeId(31), NodeId(32)],
        }
    }

    #[test]
    fn default_mix_splits_twelve_thirteen() {
        let cfg = WorkloadConfig::default();
        assert_eq!(cfg.class_counts(), (13, 12));
        let tasks = generate_episode(&cfg, &endpoints(), 1, 0).unwrap();
        let mon = tasks.iter().filter(|t| t.kind == TaskKind::Monitoring).count();
        assert_eq!((mon, tasks.len() - mon), (13, 12));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorkloadConfig::default();
        let a = generate_episode(&cfg, &endpoints(), 5, 3).unwrap();
        let b = generate_episode(&cfg, &endpoints(), 5, 3).unwrap();
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        write_jsonl(&a, &mut ja).unwrap();
        write_jsonl(&b, &mut jb).unwrap();
        assert_eq!(ja, jb);
        assert_ne!(a, generate_episode(&cfg, &endpoints(), 5, 4).unwrap());
        assert_eq!(read_jsonl(std::str::from_utf8(&ja).unwrap()).unwrap(), a);
    }

    #[test]
    fn monitoring_sizes_cover_range() {
        let cfg = WorkloadConfig { tasks_per_episode: 10_000, video_ratio: 0.0, ..Default::default() };
        let tasks = generate_episode(&cfg, &endpoints(), 11, 0).unwrap();
        let sizes: Vec<u64> = tasks.iter().map(|t| t.data_bytes.unwrap()).collect();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        assert!(lo >= 100_000 && hi <= 500_000);
        assert!((lo as f64) < 100_000.0 * 1.01);
        assert!((hi as f64) > 500_000.0 * 0.99);
        for t in &tasks {
            assert_eq!(t.cycles().unwrap(), t.data_bytes.unwrap() * 200);
        }
    }

    #[test]
    fn video_tasks_defer_size_until_level() {
        let ladder = BitrateLadder::default();
        let cfg = WorkloadConfig { video_ratio: 1.0, ..Default::default() };
        let tasks = generate_episode(&cfg, &endpoints(), 2, 0).unwrap();
        for t in &tasks {
            assert_eq!(t.data_bytes, None);
            assert!((50..=100).contains(&t.cycles_per_byte));
            let v = t.with_level(&ladder, 2).unwrap();
            assert_eq!(v.data_bytes, Some(5_120_000));
            assert_eq!(v.cycles(), Some(5_120_000 * t.cycles_per_byte));
        }
    }

    #[test]
    fn ladder_lookup() {
        let ladder = BitrateLadder::default();
        ladder.validate().unwrap();
        assert_eq!(ladder.video_bytes_for_level(3).unwrap(), 7_680_000);
        assert_eq!(ladder.video_bytes_for_level(0).unwrap(), 1_280_000);
        assert_eq!(
            ladder.video_bytes_for_level(4),
            Err(WorkloadError::LevelOutOfRange { level: 4, len: 4 })
        );
        let mut bad = ladder.clone();
        bad.levels.swap(1, 2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn arrivals_split_evenly() {
        let cfg = WorkloadConfig { steps_per_episode: 5, ..Default::default() };
        let tasks = generate_episode(&cfg, &endpoints(), 3, 0).unwrap();
        for s in 0..5 {
            assert_eq!(tasks.iter().filter(|t| t.arrival_step == s).count(), 5);
        }
    }

    #[test]
    fn empty_episode() {
        let cfg = WorkloadConfig { tasks_per_episode: 0, ..Default::default() };
        assert!(generate_episode(&cfg, &Endpoints::default(), 0, 0).unwrap().is_empty());
    }
}
