//! Partial offloading along a chosen path: work split, delay, usage and energy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::LIGHT_SPEED;
use crate::topology::{LinkId, NetworkGraph, NodeId, NodeKind};
use crate::workload::Task;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffloadError {
    #[error("path leaves {remaining:.6} of the task unprocessed")]
    Infeasible { remaining: f64 },
    #[error("zero transmission rate on link {0:?}")]
    ZeroRate(LinkId),
    #[error("positive fraction with zero compute allocation")]
    ZeroAllocation,
    #[error("task has no data size")]
    Unsized,
    #[error("path is not a chain of graph links")]
    BrokenPath,
    #[error("remaining size went negative ({0})")]
    NegativeRemainder(f64),
    #[error("{0} must be > 0")]
    NonPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Allocation {
    /// Each task takes the node's whole free capacity.
    FullAvailable,
    /// Each task takes at most this fraction of node capacity.
    FixedShare { edge: f64, satellite: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyCoeffs {
    /// κ_v, joules per encoded bit.
    pub kappa_v: f64,
    /// η_v, joules per cycle³·s².
    pub eta_v: f64,
}

impl Default for EnergyCoeffs {
    fn default() -> Self {
        Self { kappa_v: 1e-7, eta_v: 1e-27 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffloadParams {
    pub allocation: Allocation,
    /// Time base for link usage ratios.
    pub slot_s: f64,
    pub energy: EnergyCoeffs,
}

impl Default for OffloadParams {
    fn default() -> Self {
        Self { allocation: Allocation::FullAvailable, slot_s: 1.0, energy: EnergyCoeffs::default() }
    }
}

impl OffloadParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.slot_s > 0.0) {
            return Err("slot_s must be > 0".into());
        }
        if let Allocation::FixedShare { edge, satellite } = self.allocation {
            for (name, v) in [("edge", edge), ("satellite", satellite)] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(format!("allocation.{name} must lie in (0, 1]"));
                }
            }
        }
        if !(self.energy.kappa_v >= 0.0) || !(self.energy.eta_v >= 0.0) {
            return Err("energy coefficients must be >= 0".into());
        }
        Ok(())
    }

    /// Compute granted to one task on node `n` given its current reservations.
    pub fn allocation_for(&self, g: &NetworkGraph, n: NodeId) -> u64 {
        let node = &g.nodes()[n.0];
        if !node.kind.computes() {
            return 0;
        }
        match self.allocation {
            Allocation::FullAvailable => node.compute_available(),
            Allocation::FixedShare { edge, satellite } => {
                let share = if node.kind == NodeKind::Edge { edge } else { satellite };
                let want = (share * node.compute_capacity as f64).round() as u64;
                want.min(node.compute_available())
            }
        }
    }
}

/// One compute node's part of a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Share {
    pub node: NodeId,
    pub kind: NodeKind,
    /// Fraction of the full task D.
    pub fraction: f64,
    pub alloc_cps: u64,
}

/// One hop that carries unprocessed data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Leg {
    pub link: LinkId,
    /// Edge-to-edge hop.
    pub local: bool,
    pub rate_bps: f64,
    pub distance_m: f64,
    /// Fraction of D still unprocessed when the hop starts.
    pub carried: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffloadPlan {
    pub data_bytes: u64,
    pub cycles_per_byte: u64,
    /// In path order; includes nodes that took nothing only if they compute.
    pub shares: Vec<Share>,
    pub legs: Vec<Leg>,
}

impl OffloadPlan {
    pub fn edge_fractions(&self) -> impl Iterator<Item = &Share> {
        self.shares.iter().filter(|s| s.kind == NodeKind::Edge && s.fraction > 0.0)
    }

    pub fn satellite_fractions(&self) -> impl Iterator<Item = &Share> {
        self.shares.iter().filter(|s| s.kind == NodeKind::Satellite && s.fraction > 0.0)
    }

    pub fn source_fraction(&self) -> f64 {
        self.shares.first().filter(|s| s.kind == NodeKind::Edge).map_or(0.0, |s| s.fraction)
    }

    pub fn total_fraction(&self) -> f64 {
        self.shares.iter().map(|s| s.fraction).sum()
    }
}

pub fn transmission_delay(bytes: f64, rate_bps: f64) -> Result<f64, OffloadError> {
    if !(rate_bps > 0.0) {
        return Err(OffloadError::NonPositive("rate_bps"));
    }
    Ok(8.0 * bytes / rate_bps)
}

/// Round-trip propagation, 2d/c.
pub fn propagation_delay(dist_m: f64) -> f64 {
    2.0 * dist_m / LIGHT_SPEED
}

pub fn computation_delay(
    fraction: f64,
    bytes: f64,
    cycles_per_byte: f64,
    alloc_cps: f64,
) -> Result<f64, OffloadError> {
    if fraction == 0.0 {
        return Ok(0.0);
    }
    if !(alloc_cps > 0.0) {
        return Err(OffloadError::ZeroAllocation);
    }
    Ok(fraction * bytes * cycles_per_byte / alloc_cps)
}

fn leg_time(leg: &Leg, bytes: f64) -> f64 {
    8.0 * leg.carried * bytes / leg.rate_bps + propagation_delay(leg.distance_m)
}

/// Splits `task` over the compute nodes of `path` by greedy deadline-aware fill.
///
/// `own_reserved_bps` is what the task itself holds on each path link; the
/// task transmits at the link's free rate plus its own reservation.
pub fn plan_offload(
    task: &Task,
    path: &[NodeId],
    g: &NetworkGraph,
    params: &OffloadParams,
    own_reserved_bps: u64,
) -> Result<OffloadPlan, OffloadError> {
    let bytes_u = task.data_bytes.ok_or(OffloadError::Unsized)?;
    let bytes = bytes_u as f64;
    let work = bytes * task.cycles_per_byte as f64;
    let mut remaining = 1.0f64;
    let mut comm = 0.0f64;
    let mut shares = Vec::new();
    let mut legs = Vec::new();
    for (i, &n) in path.iter().enumerate() {
        if i > 0 {
            if remaining == 0.0 {
                break;
            }
            let prev = path[i - 1];
            let lid = g.link_between(prev, n).ok_or(OffloadError::BrokenPath)?;
            let link = g.link(lid);
            let rate = (link.available_bps() + own_reserved_bps.min(link.reserved_bps)) as f64;
            if rate <= 0.0 {
                return Err(OffloadError::ZeroRate(lid));
            }
            let nodes = g.nodes();
            let leg = Leg {
                link: lid,
                local: nodes[prev.0].kind == NodeKind::Edge && nodes[n.0].kind == NodeKind::Edge,
                rate_bps: rate,
                distance_m: g.euclidean_distance(prev, n).map_err(|_| OffloadError::BrokenPath)?,
                carried: remaining,
            };
            comm += leg_time(&leg, bytes);
            legs.push(leg);
        }
        let kind = g.nodes()[n.0].kind;
        if !kind.computes() {
            continue;
        }
        let alloc = params.allocation_for(g, n);
        let budget = task.deadline_s - comm;
        let mut frac = 0.0;
        if alloc > 0 && budget > 0.0 && work > 0.0 {
            let f = alloc as f64;
            frac = remaining.min(f * budget / work);
            while frac > 0.0 && frac * work / f > budget {
                frac = frac.next_down();
            }
        } else if work == 0.0 {
            frac = remaining;
        }
        shares.push(Share { node: n, kind, fraction: frac, alloc_cps: if frac > 0.0 { alloc } else { 0 } });
        remaining = if frac == remaining { 0.0 } else { remaining - frac };
    }
    if remaining > 0.0 {
        return Err(OffloadError::Infeasible { remaining });
    }
    Ok(OffloadPlan { data_bytes: bytes_u, cycles_per_byte: task.cycles_per_byte, shares, legs })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DelayBreakdown {
    /// Compute time at the source edge.
    pub t_comp_lc: f64,
    pub t_comm_lc: f64,
    /// Summed over satellites.
    pub t_comp_sc: f64,
    pub t_comm_sc: f64,
    pub t_total: f64,
}

/// Total delay from the piecewise local/satellite rule.
pub fn total_delay(plan: &OffloadPlan) -> Result<DelayBreakdown, OffloadError> {
    let bytes = plan.data_bytes as f64;
    let cpb = plan.cycles_per_byte as f64;
    let mut d = DelayBreakdown::default();
    if let Some(src) = plan.shares.first().filter(|s| s.kind == NodeKind::Edge) {
        d.t_comp_lc = computation_delay(src.fraction, bytes, cpb, src.alloc_cps as f64)?;
    }
    for s in plan.satellite_fractions() {
        d.t_comp_sc += computation_delay(s.fraction, bytes, cpb, s.alloc_cps as f64)?;
    }
    for leg in &plan.legs {
        if !(leg.rate_bps > 0.0) {
            return Err(OffloadError::ZeroRate(leg.link));
        }
        let t = leg_time(leg, bytes);
        if leg.local {
            d.t_comm_lc += t;
        } else {
            d.t_comm_sc += t;
        }
    }
    d.t_total = if plan.source_fraction() == 1.0 {
        d.t_comp_lc
    } else if plan.satellite_fractions().next().is_none() {
        d.t_comp_lc.max(d.t_comm_lc)
    } else {
        d.t_comp_lc.max(d.t_comm_lc + d.t_comp_sc).max(d.t_comm_lc + d.t_comm_sc)
    };
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineOutcome {
    Completed,
    Discarded,
}

pub fn enforce_deadline(d: &DelayBreakdown, task: &Task) -> DeadlineOutcome {
    if d.t_total <= task.deadline_s {
        DeadlineOutcome::Completed
    } else {
        DeadlineOutcome::Discarded
    }
}

/// Unprocessed (bytes, cycles) after the edges.
pub fn remaining_after_lc(task: &Task, plan: &OffloadPlan) -> Result<(f64, f64), OffloadError> {
    let d = task.data_bytes.ok_or(OffloadError::Unsized)? as f64;
    let c = d * task.cycles_per_byte as f64;
    let alpha: f64 = plan.edge_fractions().map(|s| s.fraction).sum();
    Ok((d - alpha * d, c - alpha * d * task.cycles_per_byte as f64))
}

/// Bytes left after the satellites take their fractions of D.
pub fn remaining_after_sc(d_re_lc: f64, plan: &OffloadPlan) -> Result<f64, OffloadError> {
    let d = plan.data_bytes as f64;
    let beta: f64 = plan.satellite_fractions().map(|s| s.fraction).sum();
    let rest = d_re_lc - beta * d;
    if rest < -1e-9 * d.max(1.0) {
        return Err(OffloadError::NegativeRemainder(rest));
    }
    Ok(rest.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyInputs {
    pub bitrate_bps: f64,
    pub segment_seconds: f64,
    /// h
    pub uplink_gain: f64,
    /// W
    pub uplink_bandwidth_hz: f64,
    /// t^u
    pub upload_time_s: f64,
    /// f
    pub cpu_hz: f64,
    /// t^tc
    pub transcode_time_s: f64,
    /// N_0, W/Hz
    pub noise_psd_w_per_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub e_encode: f64,
    pub e_upload: f64,
    pub e_transcode: f64,
    pub e_total: f64,
}

/// Power needed to push `x` bits/s through bandwidth `w`.
pub fn upload_power(x: f64, w: f64, n0: f64) -> f64 {
    n0 * w * ((x / w).exp2() - 1.0)
}

pub fn streaming_energy(i: &EnergyInputs, k: &EnergyCoeffs) -> Result<EnergyBreakdown, OffloadError> {
    if !(i.upload_time_s > 0.0) {
        return Err(OffloadError::NonPositive("upload_time_s"));
    }
    if !(i.uplink_bandwidth_hz > 0.0) {
        return Err(OffloadError::NonPositive("uplink_bandwidth_hz"));
    }
    if !(i.uplink_gain > 0.0) {
        return Err(OffloadError::NonPositive("uplink_gain"));
    }
    let e_encode = k.kappa_v * i.bitrate_bps * i.segment_seconds;
    let x = i.bitrate_bps * i.segment_seconds / i.upload_time_s;
    let e_upload = i.upload_time_s / i.uplink_gain * upload_power(x, i.uplink_bandwidth_hz, i.noise_psd_w_per_hz);
    let e_transcode = k.eta_v * i.cpu_hz.powi(3) * i.transcode_time_s;
    Ok(EnergyBreakdown { e_encode, e_upload, e_transcode, e_total: e_encode + e_upload + e_transcode })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct UsageSnapshot {
    pub u_comm: f64,
    pub u_comp: f64,
    pub link_ratios: Vec<(LinkId, f64)>,
    pub node_ratios: Vec<(NodeId, f64)>,
}

pub fn usage_ratios(plan: &OffloadPlan, g: &NetworkGraph, slot_s: f64) -> UsageSnapshot {
    let bytes = plan.data_bytes as f64;
    let link_ratios: Vec<(LinkId, f64)> = plan
        .legs
        .iter()
        .map(|leg| {
            let cap = g.link(leg.link).capacity_bps as f64;
            (leg.link, (leg.carried * bytes * 8.0 / (cap * slot_s)).clamp(0.0, 1.0))
        })
        .collect();
    let node_ratios: Vec<(NodeId, f64)> = plan
        .shares
        .iter()
        .filter(|s| s.fraction > 0.0)
        .map(|s| {
            let cap = g.nodes()[s.node.0].compute_capacity as f64;
            (s.node, if cap > 0.0 { (s.alloc_cps as f64 / cap).clamp(0.0, 1.0) } else { 0.0 })
        })
        .collect();
    let u_comm = link_ratios.iter().map(|p| p.1).fold(0.0, f64::max);
    let u_comp = node_ratios.iter().map(|p| p.1).fold(0.0, f64::max);
    UsageSnapshot { u_comm, u_comp, link_ratios, node_ratios }
}
