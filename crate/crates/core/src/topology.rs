//! The satellite-terrestrial network graph.
//!
//! Links are directed in the data-flow direction (device to edge, edge to
//! gateway, gateway to satellite, satellite to ground station, ground station
//! to user). Edge-edge and satellite-satellite links may be declared
//! bidirectional. All reservations are integer (bits/s and cycles/s) so the
//! ledger closes exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError, ChannelParams, GainModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Device,
    Edge,
    Gateway,
    Satellite,
    GroundStation,
    User,
}

impl NodeKind {
    /// Edges and satellites can run task fractions.
    pub fn computes(self) -> bool {
        matches!(self, NodeKind::Edge | NodeKind::Satellite)
    }

    fn may_link_to(self, dst: NodeKind) -> bool {
        use NodeKind::*;
        matches!(
            (self, dst),
            (Device, Edge)
                | (Edge, Edge)
                | (Edge, Gateway)
                | (Gateway, Satellite)
                | (Satellite, Satellite)
                | (Satellite, GroundStation)
                | (GroundStation, User)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Ground,
    Satellite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: [f64; 3],
    /// cycles/s
    pub compute_capacity: u64,
    /// cycles/s
    pub compute_reserved: u64,
}

impl Node {
    pub fn compute_available(&self) -> u64 {
        self.compute_capacity - self.compute_reserved
    }
}

/// How a link's maximum data rate is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum LinkModel {
    /// Shannon rate with a per-step channel power gain.
    Shannon { gain: GainModel },
    /// Line-of-sight inter-satellite link through free-space path loss.
    Isl,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub src: NodeId,
    pub dst: NodeId,
    pub band: Band,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub antenna_gain_tx: f64,
    pub antenna_gain_rx: f64,
    pub model: LinkModel,
    /// Channel gain in effect for the current step (1.0 for ISLs).
    pub current_gain: f64,
    pub capacity_bps: u64,
    pub reserved_bps: u64,
}

impl Link {
    pub fn available_bps(&self) -> u64 {
        self.capacity_bps - self.reserved_bps
    }

    pub fn available_ratio(&self) -> f64 {
        if self.capacity_bps == 0 {
            0.0
        } else {
            self.available_bps() as f64 / self.capacity_bps as f64
        }
    }

    /// Current gain relative to the configured mean (1.0 for ISLs).
    pub fn normalized_gain(&self) -> f64 {
        match self.model {
            LinkModel::Shannon { gain } if gain.mean > 0.0 => self.current_gain / gain.mean,
            _ => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    pub kind: NodeKind,
    pub position: [f64; 3],
    #[serde(default)]
    pub compute_capacity: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub src: usize,
    pub dst: usize,
    pub band: Band,
    /// Falls back to the channel default for the band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
    pub tx_power_w: f64,
    #[serde(default = "one")]
    pub gain_tx: f64,
    #[serde(default = "one")]
    pub gain_rx: f64,
    /// Channel power gain model; required for every non-ISL link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_gain: Option<GainModel>,
    #[serde(default)]
    pub bidirectional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatUserPair {
    pub satellite: usize,
    pub users: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub sat_user_pairs: Vec<SatUserPair>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("topology has no nodes")]
    Empty,
    #[error("nodes[{index}]: duplicate node id {id}")]
    DuplicateNode { index: usize, id: usize },
    #[error("nodes[{index}]: node id {id} leaves a gap; ids must cover 0..{count}")]
    SparseIds { index: usize, id: usize, count: usize },
    #[error("nodes[{index}]: {reason}")]
    BadNode { index: usize, reason: String },
    #[error("links[{index}]: references unknown node {id}")]
    UnknownNode { index: usize, id: usize },
    #[error("links[{index}]: {reason}")]
    BadLink { index: usize, reason: String },
    #[error("links[{index}]: {source}")]
    Channel { index: usize, source: ChannelError },
    #[error("sat_user_pairs[{index}]: {reason}")]
    BadPair { index: usize, reason: String },
    #[error("user {0} does not appear in any sat_user_pairs entry")]
    UnpairedUser(NodeId),
    #[error("edge {edge} cannot reach ground station {ground_station}")]
    Disconnected { edge: NodeId, ground_station: NodeId },
    #[error("invalid node id {0}")]
    InvalidId(NodeId),
    #[error("unreachable user {0}")]
    UnreachableUser(NodeId),
    #[error("node {0} is not a {1:?}")]
    WrongKind(NodeId, NodeKind),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("link {link:?}: reserving {amount} bps exceeds available {available}")]
    LinkOverbooked { link: LinkId, amount: u64, available: u64 },
    #[error("link {link:?}: releasing {amount} bps exceeds reserved {reserved}")]
    LinkUnderflow { link: LinkId, amount: u64, reserved: u64 },
    #[error("node {node}: reserving {amount} cycles/s exceeds available {available}")]
    NodeOverbooked { node: NodeId, amount: u64, available: u64 },
    #[error("node {node}: releasing {amount} cycles/s exceeds reserved {reserved}")]
    NodeUnderflow { node: NodeId, amount: u64, reserved: u64 },
    #[error("capacities refreshed while resources are still reserved")]
    RefreshWhileBusy,
}

/// Cumulative reservation accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Ledger {
    pub link_reserved: u128,
    pub link_released: u128,
    pub compute_reserved: u128,
    pub compute_released: u128,
}

impl Ledger {
    pub fn closed(&self) -> bool {
        self.link_reserved == self.link_released && self.compute_reserved == self.compute_released
    }
}

/// A satellite's editable copy of the topology: the base links minus pruned ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TopologyView {
    removed: BTreeSet<(NodeId, NodeId)>,
}

impl TopologyView {
    pub fn allows(&self, src: NodeId, dst: NodeId) -> bool {
        !self.removed.contains(&(src, dst))
    }

    pub fn remove(&mut self, link: (NodeId, NodeId)) {
        self.removed.insert(link);
    }

    pub fn removed(&self) -> impl Iterator<Item = &(NodeId, NodeId)> {
        self.removed.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    links: Vec<Link>,
    /// Outgoing links per node, sorted by destination id.
    #[serde(skip)]
    out: Vec<Vec<LinkId>>,
    #[serde(skip)]
    by_endpoints: BTreeMap<(NodeId, NodeId), LinkId>,
    sat_user_pairs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    topology_views: BTreeMap<NodeId, TopologyView>,
    #[serde(skip)]
    ledger: Ledger,
}

fn link_capacity(
    model: &LinkModel,
    gain: f64,
    bw: f64,
    tx: f64,
    gtx: f64,
    grx: f64,
    dist: f64,
    p: &ChannelParams,
) -> Result<u64, ChannelError> {
    let rate = match model {
        LinkModel::Shannon { .. } => channel::ground_uplink_rate(bw, gain, tx, p)?,
        LinkModel::Isl => channel::isl_rate_for_distance(bw, tx, gtx, grx, dist, p)?,
    };
    Ok(rate.floor() as u64)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl NetworkGraph {
    /// Validates `cfg` and builds the graph with link capacities from `channel`.
    pub fn build(cfg: &TopologyConfig, channel: &ChannelParams) -> Result<Self, TopologyError> {
        if cfg.nodes.is_empty() {
            return Err(TopologyError::Empty);
        }
        let count = cfg.nodes.len();
        let mut slots: Vec<Option<Node>> = vec![None; count];
        for (index, spec) in cfg.nodes.iter().enumerate() {
            if spec.id >= count {
                return Err(TopologyError::SparseIds { index, id: spec.id, count });
            }
            if slots[spec.id].is_some() {
                return Err(TopologyError::DuplicateNode { index, id: spec.id });
            }
            if !spec.position.iter().all(|c| c.is_finite()) {
                return Err(TopologyError::BadNode { index, reason: "position must be finite".into() });
            }
            if !(spec.compute_capacity >= 0.0) || !spec.compute_capacity.is_finite() {
                return Err(TopologyError::BadNode {
                    index,
                    reason: format!("compute_capacity must be >= 0, got {}", spec.compute_capacity),
                });
            }
            if !spec.kind.computes() && spec.compute_capacity != 0.0 {
                return Err(TopologyError::BadNode {
                    index,
                    reason: format!("{:?} nodes must have compute_capacity 0", spec.kind),
                });
            }
            slots[spec.id] = Some(Node {
                id: NodeId(spec.id),
                kind: spec.kind,
                position: spec.position,
                compute_capacity: spec.compute_capacity.round() as u64,
                compute_reserved: 0,
            });
        }
        let nodes: Vec<Node> = slots.into_iter().map(|n| n.expect("dense ids checked")).collect();

        let mut links = Vec::new();
        let mut by_endpoints = BTreeMap::new();
        for (index, spec) in cfg.links.iter().enumerate() {
            for id in [spec.src, spec.dst] {
                if id >= count {
                    return Err(TopologyError::UnknownNode { index, id });
                }
            }
            let bad = |reason: String| TopologyError::BadLink { index, reason };
            if spec.src == spec.dst {
                return Err(bad("self-loop".into()));
            }
            let (sk, dk) = (nodes[spec.src].kind, nodes[spec.dst].kind);
            if !sk.may_link_to(dk) {
                return Err(bad(format!("{sk:?} -> {dk:?} links are not allowed")));
            }
            if spec.bidirectional && sk != dk {
                return Err(bad("only edge-edge and satellite-satellite links may be bidirectional".into()));
            }
            let bw = spec.bandwidth_hz.unwrap_or(match spec.band {
                Band::Ground => channel.ground_bandwidth_hz,
                Band::Satellite => channel.satellite_bandwidth_hz,
            });
            if !(bw > 0.0) {
                return Err(bad(format!("bandwidth_hz must be > 0, got {bw}")));
            }
            if !(spec.tx_power_w > 0.0) {
                return Err(bad(format!("tx_power_w must be > 0, got {}", spec.tx_power_w)));
            }
            if !(spec.gain_tx > 0.0) || !(spec.gain_rx > 0.0) {
                return Err(bad("antenna gains must be > 0".into()));
            }
            let isl = sk == NodeKind::Satellite && dk == NodeKind::Satellite;
            let model = if isl {
                LinkModel::Isl
            } else {
                let gain = spec
                    .channel_gain
                    .ok_or_else(|| bad("channel_gain is required for non-ISL links".into()))?;
                if !(gain.mean > 0.0) || !(gain.sigma >= 0.0) {
                    return Err(bad("channel_gain needs mean > 0 and sigma >= 0".into()));
                }
                LinkModel::Shannon { gain }
            };
            let mut dirs = vec![(spec.src, spec.dst)];
            if spec.bidirectional {
                dirs.push((spec.dst, spec.src));
            }
            for (s, d) in dirs {
                let key = (NodeId(s), NodeId(d));
                if by_endpoints.contains_key(&key) {
                    return Err(bad(format!("duplicate link {s} -> {d}")));
                }
                let gain = match model {
                    LinkModel::Shannon { gain } => gain.mean,
                    LinkModel::Isl => 1.0,
                };
                let dist = distance(&nodes[s].position, &nodes[d].position);
                let capacity = link_capacity(
                    &model, gain, bw, spec.tx_power_w, spec.gain_tx, spec.gain_rx, dist, channel,
                )
                .map_err(|source| TopologyError::Channel { index, source })?;
                if capacity == 0 {
                    return Err(bad(format!("link {s} -> {d} has zero capacity")));
                }
                let id = LinkId(links.len());
                by_endpoints.insert(key, id);
                links.push(Link {
                    id,
                    src: NodeId(s),
                    dst: NodeId(d),
                    band: spec.band,
                    bandwidth_hz: bw,
                    tx_power_w: spec.tx_power_w,
                    antenna_gain_tx: spec.gain_tx,
                    antenna_gain_rx: spec.gain_rx,
                    model,
                    current_gain: gain,
                    capacity_bps: capacity,
                    reserved_bps: 0,
                });
            }
        }

        let mut out = vec![Vec::new(); count];
        for l in &links {
            out[l.src.0].push(l.id);
        }
        for v in &mut out {
            v.sort_by_key(|id| links[id.0].dst);
        }

        let mut g = Self {
            nodes,
            links,
            out,
            by_endpoints,
            sat_user_pairs: BTreeMap::new(),
            topology_views: BTreeMap::new(),
            ledger: Ledger::default(),
        };

        for (index, pair) in cfg.sat_user_pairs.iter().enumerate() {
            let bad = |reason: String| TopologyError::BadPair { index, reason };
            let sat = g.checked(pair.satellite).map_err(|e| bad(e.to_string()))?;
            if g.nodes[sat.0].kind != NodeKind::Satellite {
                return Err(bad(format!("{sat} is not a satellite")));
            }
            for &u in &pair.users {
                let user = g.checked(u).map_err(|e| bad(e.to_string()))?;
                if g.nodes[user.0].kind != NodeKind::User {
                    return Err(bad(format!("{user} is not a user")));
                }
                if g.tail_to_user(sat, user).is_none() {
                    return Err(bad(format!("{sat} has no ground-station hop to {user}")));
                }
                g.sat_user_pairs.entry(sat).or_default().insert(user);
            }
        }
        for n in &g.nodes {
            if n.kind == NodeKind::User && !g.sat_user_pairs.values().any(|s| s.contains(&n.id)) {
                return Err(TopologyError::UnpairedUser(n.id));
            }
        }

        let stations = g.nodes_of(NodeKind::GroundStation);
        for edge in g.nodes_of(NodeKind::Edge) {
            let seen = g.reachable_from(edge);
            // Gateways and satellites are the only way onto a ground station,
            // so plain reachability implies the gateway/satellite chain.
            if let Some(&gs) = stations.iter().find(|gs| !seen.contains(gs)) {
                return Err(TopologyError::Disconnected { edge, ground_station: gs });
            }
        }

        for sat in g.nodes_of(NodeKind::Satellite) {
            g.topology_views.insert(sat, TopologyView::default());
        }
        Ok(g)
    }

    fn checked(&self, id: usize) -> Result<NodeId, TopologyError> {
        if id < self.nodes.len() {
            Ok(NodeId(id))
        } else {
            Err(TopologyError::InvalidId(NodeId(id)))
        }
    }

    fn reachable_from(&self, start: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &l in &self.out[n.0] {
                let d = self.links[l.0].dst;
                if seen.insert(d) {
                    queue.push_back(d);
                }
            }
        }
        seen
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TopologyError> {
        self.nodes.get(id.0).ok_or(TopologyError::InvalidId(id))
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_between(&self, src: NodeId, dst: NodeId) -> Option<LinkId> {
        self.by_endpoints.get(&(src, dst)).copied()
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out[n.0]
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.kind == kind).map(|n| n.id).collect()
    }

    pub fn sat_user_pairs(&self) -> &BTreeMap<NodeId, BTreeSet<NodeId>> {
        &self.sat_user_pairs
    }

    pub fn euclidean_distance(&self, a: NodeId, b: NodeId) -> Result<f64, TopologyError> {
        let pa = self.node(a)?.position;
        let pb = self.node(b)?.position;
        Ok(distance(&pa, &pb))
    }

    /// Destination satellite recorded for `u`; lowest id when several qualify.
    pub fn reachable_satellite_for_user(&self, u: NodeId) -> Result<NodeId, TopologyError> {
        if self.node(u)?.kind != NodeKind::User {
            return Err(TopologyError::WrongKind(u, NodeKind::User));
        }
        self.sat_user_pairs
            .iter()
            .find(|(_, users)| users.contains(&u))
            .map(|(&s, _)| s)
            .ok_or(TopologyError::UnreachableUser(u))
    }

    /// `[sat, ground_station, user]` for the lowest-id ground station joining them.
    pub fn tail_to_user(&self, sat: NodeId, user: NodeId) -> Option<Vec<NodeId>> {
        self.out[sat.0]
            .iter()
            .map(|l| self.links[l.0].dst)
            .filter(|gs| self.nodes[gs.0].kind == NodeKind::GroundStation)
            .find(|&gs| self.link_between(gs, user).is_some())
            .map(|gs| vec![sat, gs, user])
    }

    /// Ground station serving `user` (lowest id if several).
    pub fn ground_station_of(&self, user: NodeId) -> Option<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::GroundStation)
            .map(|n| n.id)
            .find(|&gs| self.link_between(gs, user).is_some())
    }

    /// First satellite reachable from an edge through its lowest-id gateway.
    pub fn access_satellite(&self, edge: NodeId) -> Option<NodeId> {
        let gw = self.out[edge.0]
            .iter()
            .map(|l| self.links[l.0].dst)
            .find(|d| self.nodes[d.0].kind == NodeKind::Gateway)?;
        self.out[gw.0].first().map(|l| self.links[l.0].dst)
    }

    pub fn topology_view(&self, s: NodeId) -> Option<&TopologyView> {
        self.topology_views.get(&s)
    }

    /// Prunes `link` from satellite `s`'s view. The base graph is untouched.
    pub fn remove_link_from_view(
        &mut self,
        s: NodeId,
        link: (NodeId, NodeId),
    ) -> Result<&TopologyView, TopologyError> {
        let view = self
            .topology_views
            .get_mut(&s)
            .ok_or(TopologyError::WrongKind(s, NodeKind::Satellite))?;
        view.remove(link);
        Ok(view)
    }

    // -- reservations -------------------------------------------------------

    pub fn reserve_link(&mut self, id: LinkId, bps: u64) -> Result<(), LedgerError> {
        let l = &mut self.links[id.0];
        if bps > l.available_bps() {
            return Err(LedgerError::LinkOverbooked { link: id, amount: bps, available: l.available_bps() });
        }
        l.reserved_bps += bps;
        self.ledger.link_reserved += bps as u128;
        Ok(())
    }

    pub fn release_link(&mut self, id: LinkId, bps: u64) -> Result<(), LedgerError> {
        let l = &mut self.links[id.0];
        if bps > l.reserved_bps {
            return Err(LedgerError::LinkUnderflow { link: id, amount: bps, reserved: l.reserved_bps });
        }
        l.reserved_bps -= bps;
        self.ledger.link_released += bps as u128;
        Ok(())
    }

    pub fn reserve_compute(&mut self, id: NodeId, cps: u64) -> Result<(), LedgerError> {
        let n = &mut self.nodes[id.0];
        if cps > n.compute_available() {
            return Err(LedgerError::NodeOverbooked { node: id, amount: cps, available: n.compute_available() });
        }
        n.compute_reserved += cps;
        self.ledger.compute_reserved += cps as u128;
        Ok(())
    }

    pub fn release_compute(&mut self, id: NodeId, cps: u64) -> Result<(), LedgerError> {
        let n = &mut self.nodes[id.0];
        if cps > n.compute_reserved {
            return Err(LedgerError::NodeUnderflow { node: id, amount: cps, reserved: n.compute_reserved });
        }
        n.compute_reserved -= cps;
        self.ledger.compute_released += cps as u128;
        Ok(())
    }

    pub fn ledger(&self) -> Ledger {
        self.ledger
    }

    /// True when nothing is reserved anywhere.
    pub fn is_idle(&self) -> bool {
        self.links.iter().all(|l| l.reserved_bps == 0) && self.nodes.iter().all(|n| n.compute_reserved == 0)
    }

    pub fn total_reserved(&self) -> (u64, u64) {
        (
            self.links.iter().map(|l| l.reserved_bps).sum(),
            self.nodes.iter().map(|n| n.compute_reserved).sum(),
        )
    }

    /// Re-samples channel gains for `step` and recomputes capacities.
    pub fn refresh_capacities(
        &mut self,
        step: u64,
        seed: u64,
        channel: &ChannelParams,
    ) -> Result<(), LedgerError> {
        if !self.is_idle() {
            return Err(LedgerError::RefreshWhileBusy);
        }
        for i in 0..self.links.len() {
            let LinkModel::Shannon { gain } = self.links[i].model else { continue };
            if gain.sigma == 0.0 {
                continue;
            }
            let g = channel::sample_gain(&gain, i, step, seed);
            let l = &self.links[i];
            // Capacity from a positive gain is positive; keep at least 1 bps.
            let cap = link_capacity(&l.model, g, l.bandwidth_hz, l.tx_power_w, 1.0, 1.0, 0.0, channel)
                .unwrap_or(0)
                .max(1);
            let l = &mut self.links[i];
            l.current_gain = g;
            l.capacity_bps = cap;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn ground(src: usize, dst: usize) -> LinkSpec {
        LinkSpec {
            src,
            dst,
            band: Band::Ground,
            bandwidth_hz: None,
            tx_power_w: 1.0,
            gain_tx: 1.0,
            gain_rx: 1.0,
            channel_gain: Some(GainModel::fixed(1e-12)),
            bidirectional: false,
        }
    }

    fn sat_link(src: usize, dst: usize) -> LinkSpec {
        LinkSpec { band: Band::Satellite, ..ground(src, dst) }
    }

    fn node(id: usize, kind: NodeKind, position: [f64; 3], cap: f64) -> NodeSpec {
        NodeSpec { id, kind, position, compute_capacity: cap }
    }

    /// edge0, edge1 -> gateway2 -> sat3 -> gs4
    pub(crate) fn toy_config() -> TopologyConfig {
        TopologyConfig {
            nodes: vec![
                node(0, NodeKind::Edge, [0.0, 0.0, 0.0], 0.5e9),
                node(1, NodeKind::Edge, [3.0e3, 0.0, 0.0], 0.5e9),
                node(2, NodeKind::Gateway, [1.0e3, 4.0e3, 0.0], 0.0),
                node(3, NodeKind::Satellite, [0.0, 0.0, 550e3], 50e9),
                node(4, NodeKind::GroundStation, [100e3, 0.0, 0.0], 0.0),
            ],
            links: vec![ground(0, 2), ground(1, 2), sat_link(2, 3), sat_link(3, 4)],
            sat_user_pairs: vec![],
        }
    }

    #[test]
    fn toy_graph_builds() {
        let g = NetworkGraph::build(&toy_config(), &ChannelParams::default()).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.links().len(), 4);
        assert_eq!(g.link_between(NodeId(0), NodeId(2)), Some(LinkId(0)));
        assert_eq!(g.link_between(NodeId(2), NodeId(0)), None);
        assert_eq!(g.out_links(NodeId(2)), &[LinkId(2)]);
        for l in g.links() {
            assert!(l.capacity_bps > 0);
            assert_eq!(l.reserved_bps, 0);
        }
        assert!(g.topology_view(NodeId(3)).is_some());
        assert_eq!(g.access_satellite(NodeId(1)), Some(NodeId(3)));
    }

    #[test]
    fn empty_topology_rejected() {
        let err = NetworkGraph::build(&TopologyConfig::default(), &ChannelParams::default()).unwrap_err();
        assert_eq!(err, TopologyError::Empty);
    }

    #[test]
    fn duplicate_and_unknown_ids_rejected() {
        let mut cfg = toy_config();
        cfg.nodes[1].id = 0;
        assert!(matches!(
            NetworkGraph::build(&cfg, &ChannelParams::default()),
            Err(TopologyError::DuplicateNode { index: 1, id: 0 })
        ));
        let mut cfg = toy_config();
        cfg.links.push(ground(0, 9));
        assert!(matches!(
            NetworkGraph::build(&cfg, &ChannelParams::default()),
            Err(TopologyError::UnknownNode { index: 4, id: 9 })
        ));
    }

    #[test]
    fn disconnected_edge_rejected() {
        let mut cfg = toy_config();
        cfg.links.remove(1);
        let err = NetworkGraph::build(&cfg, &ChannelParams::default()).unwrap_err();
        assert_eq!(err, TopologyError::Disconnected { edge: NodeId(1), ground_station: NodeId(4) });
        assert!(err.to_string().contains("n1"));
    }

    #[test]
    fn role_rules_enforced() {
        let mut cfg = toy_config();
        cfg.nodes.push(node(5, NodeKind::Gateway, [0.0; 3], 0.0));
        cfg.links.push(ground(2, 5));
        assert!(matches!(
            NetworkGraph::build(&cfg, &ChannelParams::default()),
            Err(TopologyError::BadLink { index: 4, .. })
        ));
        let mut cfg = toy_config();
        cfg.nodes[2].compute_capacity = 1.0;
        assert!(matches!(
            NetworkGraph::build(&cfg, &ChannelParams::default()),
            Err(TopologyError::BadNode { index: 2, .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let g = NetworkGraph::build(&toy_config(), &ChannelParams::default()).unwrap();
        assert_eq!(g.euclidean_distance(NodeId(2), NodeId(0)).unwrap(), (1e6f64 + 16e6).sqrt());
        assert_eq!(g.euclidean_distance(NodeId(3), NodeId(3)).unwrap(), 0.0);
        assert!(g.euclidean_distance(NodeId(0), NodeId(42)).is_err());
        let mut cfg = toy_config();
        cfg.nodes[1].position = [3.0, 4.0, 0.0];
        let g = NetworkGraph::build(&cfg, &ChannelParams::default()).unwrap();
        assert_eq!(g.euclidean_distance(NodeId(0), NodeId(1)).unwrap(), 5.0);
        assert_eq!(g.euclidean_distance(NodeId(1), NodeId(0)).unwrap(), 5.0);
    }

    fn with_users() -> TopologyConfig {
        let mut cfg = toy_config();
        cfg.nodes.push(node(5, NodeKind::Satellite, [10e3, 0.0, 550e3], 50e9));
        cfg.nodes.push(node(6, NodeKind::User, [101e3, 0.0, 0.0], 0.0));
        cfg.nodes.push(node(7, NodeKind::User, [102e3, 0.0, 0.0], 0.0));
        cfg.links.push(LinkSpec { bidirectional: true, ..sat_link(3, 5) });
        cfg.links.push(sat_link(5, 4));
        cfg.links.push(ground(4, 6));
        cfg.links.push(ground(4, 7));
        cfg.sat_user_pairs = vec![
            SatUserPair { satellite: 5, users: vec![6, 7] },
            SatUserPair { satellite: 3, users: vec![7] },
        ];
        cfg
    }

    #[test]
    fn user_satellite_lookup() {
        let g = NetworkGraph::build(&with_users(), &ChannelParams::default()).unwrap();
        assert_eq!(g.reachable_satellite_for_user(NodeId(6)).unwrap(), NodeId(5));
        assert_eq!(g.reachable_satellite_for_user(NodeId(7)).unwrap(), NodeId(3));
        assert!(matches!(g.reachable_satellite_for_user(NodeId(4)), Err(TopologyError::WrongKind(..))));
        assert_eq!(g.tail_to_user(NodeId(5), NodeId(6)), Some(vec![NodeId(5), NodeId(4), NodeId(6)]));
        assert_eq!(g.ground_station_of(NodeId(7)), Some(NodeId(4)));
    }

    #[test]
    fn unpaired_user_rejected() {
        let mut cfg = with_users();
        cfg.sat_user_pairs.pop();
        cfg.sat_user_pairs[0].users = vec![6];
        assert_eq!(
            NetworkGraph::build(&cfg, &ChannelParams::default()).unwrap_err(),
            TopologyError::UnpairedUser(NodeId(7))
        );
    }

    #[test]
    fn unmapped_user_lookup_errors() {
        let g = NetworkGraph::build(&with_users(), &ChannelParams::default()).unwrap();
        let mut g2 = g.clone();
        g2.sat_user_pairs.clear();
        assert_eq!(g2.reachable_satellite_for_user(NodeId(6)), Err(TopologyError::UnreachableUser(NodeId(6))));
    }

    #[test]
    fn view_edits_leave_base_graph_alone() {
        let mut g = NetworkGraph::build(&with_users(), &ChannelParams::default()).unwrap();
        let before = g.links().to_vec();
        g.remove_link_from_view(NodeId(3), (NodeId(3), NodeId(5))).unwrap();
        g.remove_link_from_view(NodeId(3), (NodeId(0), NodeId(1))).unwrap();
        let v = g.topology_view(NodeId(3)).unwrap();
        assert!(!v.allows(NodeId(3), NodeId(5)));
        assert!(v.allows(NodeId(5), NodeId(3)));
        assert_eq!(g.links(), &before[..]);
        assert!(g.remove_link_from_view(NodeId(0), (NodeId(0), NodeId(2))).is_err());
    }

    #[test]
    fn ledger_accounting() {
        let mut g = NetworkGraph::build(&toy_config(), &ChannelParams::default()).unwrap();
        let cap = g.link(LinkId(0)).capacity_bps;
        g.reserve_link(LinkId(0), cap).unwrap();
        assert!(g.reserve_link(LinkId(0), 1).is_err());
        g.reserve_compute(NodeId(3), 10).unwrap();
        assert!(g.reserve_compute(NodeId(2), 1).is_err());
        assert!(!g.is_idle());
        assert!(g.refresh_capacities(0, 1, &ChannelParams::default()).is_err());
        g.release_link(LinkId(0), cap).unwrap();
        assert!(g.release_link(LinkId(0), 1).is_err());
        g.release_compute(NodeId(3), 10).unwrap();
        assert!(g.is_idle());
        assert!(g.ledger().closed());
    }

    #[test]
    fn build_is_deterministic() {
        let a = NetworkGraph::build(&with_users(), &ChannelParams::default()).unwrap();
        let b = NetworkGraph::build(&with_users(), &ChannelParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refresh_resamples_only_noisy_links() {
        let mut cfg = toy_config();
        cfg.links[0].channel_gain = Some(GainModel { mean: 1e-12, sigma: 0.5 });
        let mut g = NetworkGraph::build(&cfg, &ChannelParams::default()).unwrap();
        let before: Vec<u64> = g.links().iter().map(|l| l.capacity_bps).collect();
        g.refresh_capacities(3, 9, &ChannelParams::default()).unwrap();
        assert_ne!(g.link(LinkId(0)).capacity_bps, before[0]);
        assert_eq!(g.link(LinkId(1)).capacity_bps, before[1]);
        let expect = channel::sample_gain(&GainModel { mean: 1e-12, sigma: 0.5 }, 0, 3, 9);
        assert_eq!(g.link(LinkId(0)).current_gain, expect);
    }
}
