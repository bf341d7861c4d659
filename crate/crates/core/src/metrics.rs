//! QoE, rewards, objective score and per-episode aggregates.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::TaskKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("link usage must be > 0, got {0}")]
    ZeroLinkUsage(f64),
    #[error("{0} must be >= 0")]
    Negative(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoEParams {
    pub eta: f64,
    pub kappa: f64,
    pub nu: f64,
    /// Bitrates and link usage are divided by this before scoring.
    pub bitrate_unit_bps: f64,
}

impl Default for QoEParams {
    fn default() -> Self {
        Self { eta: 1.0, kappa: 1.0, nu: 3.0, bitrate_unit_bps: 1e6 }
    }
}

impl QoEParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [("eta", self.eta), ("kappa", self.kappa), ("nu", self.nu)] {
            if !(v >= 0.0) {
                return Err(MetricsError::Negative(name));
            }
        }
        if !(self.bitrate_unit_bps > 0.0) {
            return Err(MetricsError::Negative("bitrate_unit_bps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Energy weight.
    pub delta: f64,
    /// Completion-ratio weight.
    pub omega: f64,
    pub alpha_delay: f64,
    pub beta_comp: f64,
    pub gamma_comm: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { delta: 1.0, omega: 1.0, alpha_delay: 1.0, beta_comp: 1.0, gamma_comm: 1.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [
            ("delta", self.delta),
            ("omega", self.omega),
            ("alpha_delay", self.alpha_delay),
            ("beta_comp", self.beta_comp),
            ("gamma_comm", self.gamma_comm),
        ] {
            if !(v >= 0.0) {
                return Err(MetricsError::Negative(name));
            }
        }
        Ok(())
    }
}

/// η r' − κ|r' − r| − ν r'/f with all rates in `bitrate_unit_bps`.
pub fn qoe(prev_bps: f64, new_bps: f64, link_usage_bps: f64, p: &QoEParams) -> Result<f64, MetricsError> {
    if !(link_usage_bps > 0.0) {
        return Err(MetricsError::ZeroLinkUsage(link_usage_bps));
    }
    let u = p.bitrate_unit_bps;
    let (r0, r1, f) = (prev_bps / u, new_bps / u, link_usage_bps / u);
    Ok(p.eta * r1 - p.kappa * (r1 - r0).abs() - p.nu * r1 / f)
}

/// q − δe + ω r^c; a discarded task contributes no QoE and no energy.
pub fn task_reward(qoe: f64, energy_j: f64, completed: bool, w: &RewardWeights, batch_completion: f64) -> f64 {
    let own = if completed { qoe - w.delta * energy_j } else { 0.0 };
    own + w.omega * batch_completion
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardCause {
    /// No path could be reserved.
    NoPath,
    /// The path cannot process the whole task before the deadline.
    Infeasible,
    /// Total delay exceeded the deadline.
    DeadlineMiss,
}

/// One task outcome; also the per-task CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub scheme: String,
    pub episode: u64,
    pub step: usize,
    pub task_id: usize,
    pub kind: TaskKind,
    pub deadline_s: f64,
    pub agent: Option<usize>,
    /// Raw policy output before clamping.
    pub action: Option<usize>,
    pub level: Option<usize>,
    pub bitrate_bps: f64,
    pub status: TaskStatus,
    pub cause: Option<DiscardCause>,
    /// Node ids joined with '-'.
    pub path: String,
    pub path_score: f64,
    pub t_total: f64,
    pub t_comp_lc: f64,
    pub t_comm_lc: f64,
    pub t_comp_sc: f64,
    pub t_comm_sc: f64,
    pub e_encode: f64,
    pub e_upload: f64,
    pub e_transcode: f64,
    pub e_total: f64,
    pub u_comm: f64,
    pub u_comp: f64,
    pub qoe: f64,
    pub slot_completion: f64,
    pub reward: f64,
}

impl TaskRecord {
    pub fn completed(&self) -> bool {
        self.status == TaskStatus::Completed
    }

    /// Time the task held the system: its delay if completed, else its deadline.
    pub fn service_delay(&self) -> f64 {
        if self.completed() {
            self.t_total
        } else {
            self.deadline_s
        }
    }
}

/// Σ [q − α t − γ u_comm − β u_comp − δ e] over the records.
pub fn objective_score(records: &[TaskRecord], w: &RewardWeights) -> f64 {
    records
        .iter()
        .map(|r| {
            r.qoe - w.alpha_delay * r.t_total - w.gamma_comm * r.u_comm - w.beta_comp * r.u_comp - w.delta * r.e_total
        })
        .sum()
}

pub fn completion_ratio(records: &[TaskRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.completed()).count() as f64 / records.len() as f64
}

/// Aggregate over a set of records.
///
/// Reward and service delay are averaged over all tasks, QoE and energy over
/// video tasks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub tasks: usize,
    pub completed: usize,
    pub discarded: usize,
    pub completion_rate: f64,
    pub mean_reward: f64,
    pub mean_qoe: f64,
    pub mean_energy: f64,
    pub mean_delay: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn summarize(records: &[TaskRecord]) -> Summary {
    let completed = records.iter().filter(|r| r.completed()).count();
    let video = || records.iter().filter(|r| r.kind == TaskKind::VideoStreaming);
    Summary {
        tasks: records.len(),
        completed,
        discarded: records.len() - completed,
        completion_rate: completion_ratio(records),
        mean_reward: mean(records.iter().map(|r| r.reward)),
        mean_qoe: mean(video().map(|r| r.qoe)),
        mean_energy: mean(video().map(|r| r.e_total)),
        mean_delay: mean(records.iter().map(TaskRecord::service_delay)),
    }
}

/// Trailing rolling mean; entry i averages values[i+1-window ..= i].
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

pub fn write_records_csv<W: Write>(records: &[TaskRecord], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
