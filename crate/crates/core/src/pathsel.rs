//! Reservation-aware path selection scored by vacant resources.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::LIGHT_SPEED;
use crate::topology::{LedgerError, LinkId, NetworkGraph, NodeId, NodeKind, TopologyView};
use crate::workload::{Destination, Task};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("empty path")]
    EmptyPath,
    #[error("no ground station joins satellite {sat} to user {user}")]
    NoTail { sat: NodeId, user: NodeId },
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkWeight {
    HopCount,
    PropagationDelay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsruConfig {
    pub alpha_mix: f64,
    pub count_max: usize,
    pub link_weight: LinkWeight,
}

impl Default for PsruConfig {
    fn default() -> Self {
        Self { alpha_mix: 0.5, count_max: 5, link_weight: LinkWeight::PropagationDelay }
    }
}

impl PsruConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha_mix) {
            return Err("alpha_mix must lie in [0, 1]".into());
        }
        if self.count_max == 0 {
            return Err("count_max must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCandidate {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub score: f64,
    pub avail_link_ratios: Vec<f64>,
    pub avail_comp_ratios: Vec<(NodeId, f64)>,
}

impl PathCandidate {
    pub fn label(&self) -> String {
        join_nodes(&self.nodes)
    }
}

pub fn join_nodes(nodes: &[NodeId]) -> String {
    nodes.iter().map(|n| n.0.to_string()).collect::<Vec<_>>().join("-")
}

/// Where a task's path must go: `src` to `target` by search, then the fixed `tail`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub src: NodeId,
    pub target: NodeId,
    pub tail: Vec<NodeId>,
}

impl Route {
    pub fn for_task(task: &Task, g: &NetworkGraph) -> Result<Route, PathError> {
        match task.destination {
            Destination::GroundStation(gs) => Ok(Route { src: task.source_edge, target: gs, tail: vec![] }),
            Destination::User(user) => {
                let sat = g.reachable_satellite_for_user(user)?;
                let tail = g.tail_to_user(sat, user).ok_or(PathError::NoTail { sat, user })?;
                Ok(Route { src: task.source_edge, target: sat, tail: tail[1..].to_vec() })
            }
        }
    }
}

fn path_links(g: &NetworkGraph, nodes: &[NodeId]) -> Option<Vec<LinkId>> {
    nodes.windows(2).map(|w| g.link_between(w[0], w[1])).collect()
}

/// Builds a candidate with availability ratios from the current graph state.
pub fn snapshot(g: &NetworkGraph, nodes: &[NodeId], cfg: &PsruConfig) -> Option<PathCandidate> {
    let links = path_links(g, nodes)?;
    let avail_link_ratios = links.iter().map(|&l| g.link(l).available_ratio()).collect();
    let avail_comp_ratios = nodes
        .iter()
        .filter_map(|&n| {
            let node = &g.nodes()[n.0];
            (node.kind.computes() && node.compute_capacity > 0)
                .then(|| (n, node.compute_available() as f64 / node.compute_capacity as f64))
        })
        .collect();
    let mut c = PathCandidate { nodes: nodes.to_vec(), links, score: 0.0, avail_link_ratios, avail_comp_ratios };
    c.score = psru_score(&c, cfg).ok()?;
    Some(c)
}

/// α·(Σ link availability)/len + (1−α)·(Σ compute availability)/len, len = link count.
pub fn psru_score(c: &PathCandidate, cfg: &PsruConfig) -> Result<f64, PathError> {
    let len = c.avail_link_ratios.len();
    if len == 0 {
        return Err(PathError::EmptyPath);
    }
    let link: f64 = c.avail_link_ratios.iter().sum();
    let comp: f64 = c.avail_comp_ratios.iter().map(|p| p.1).sum();
    Ok(cfg.alpha_mix * (link / len as f64) + (1.0 - cfg.alpha_mix) * (comp / len as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Congestion {
    Link(LinkId),
    Node(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reservation {
    Accepted,
    Rejected(Congestion),
}

/// First resource that cannot take the demand, if any.
pub fn first_shortfall(g: &NetworkGraph, links: &[LinkId], rate_bps: u64, compute: &[(NodeId, u64)]) -> Option<Congestion> {
    if let Some(&l) = links.iter().find(|&&l| g.link(l).available_bps() < rate_bps) {
        return Some(Congestion::Link(l));
    }
    compute
        .iter()
        .find(|&&(n, c)| g.nodes()[n.0].compute_available() < c)
        .map(|&(n, _)| Congestion::Node(n))
}

/// Reserves `rate_bps` on every link and the listed compute, or nothing.
pub fn try_reserve(
    g: &mut NetworkGraph,
    links: &[LinkId],
    rate_bps: u64,
    compute: &[(NodeId, u64)],
) -> Result<Reservation, LedgerError> {
    if let Some(c) = first_shortfall(g, links, rate_bps, compute) {
        return Ok(Reservation::Rejected(c));
    }
    for &l in links {
        g.reserve_link(l, rate_bps)?;
    }
    for &(n, c) in compute {
        g.reserve_compute(n, c)?;
    }
    Ok(Reservation::Accepted)
}

pub fn release(g: &mut NetworkGraph, links: &[LinkId], rate_bps: u64, compute: &[(NodeId, u64)]) -> Result<(), LedgerError> {
    for &l in links {
        g.release_link(l, rate_bps)?;
    }
    for &(n, c) in compute {
        g.release_compute(n, c)?;
    }
    Ok(())
}

fn weight(g: &NetworkGraph, l: LinkId, w: LinkWeight) -> f64 {
    match w {
        LinkWeight::HopCount => 1.0,
        LinkWeight::PropagationDelay => {
            let link = g.link(l);
            g.euclidean_distance(link.src, link.dst).unwrap_or(0.0) / LIGHT_SPEED
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Partial {
    cost: f64,
    nodes: Vec<NodeId>,
}

impl Eq for Partial {}

impl Ord for Partial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost.total_cmp(&other.cost).then_with(|| self.nodes.cmp(&other.nodes))
    }
}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Yields simple paths from `src` to `dst` in order of (cost, node sequence).
pub struct ShortestPaths {
    dst: NodeId,
    weight: LinkWeight,
    heap: BinaryHeap<Reverse<Partial>>,
}

impl ShortestPaths {
    pub fn new(src: NodeId, dst: NodeId, weight: LinkWeight) -> Self {
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(Partial { cost: 0.0, nodes: vec![src] }));
        Self { dst, weight, heap }
    }

    /// Next path whose links are all allowed by `view`, with its cost.
    pub fn next_path(&mut self, g: &NetworkGraph, view: &TopologyView) -> Option<(f64, Vec<NodeId>)> {
        while let Some(Reverse(p)) = self.heap.pop() {
            if !p.nodes.windows(2).all(|w| view.allows(w[0], w[1])) {
                continue;
            }
            let last = *p.nodes.last().expect("non-empty");
            if last == self.dst {
                if p.nodes.len() > 1 {
                    return Some((p.cost, p.nodes));
                }
                continue;
            }
            for &l in g.out_links(last) {
                let d = g.link(l).dst;
                if p.nodes.contains(&d) || !view.allows(last, d) {
                    continue;
                }
                let mut nodes = p.nodes.clone();
                nodes.push(d);
                self.heap.push(Reverse(Partial { cost: p.cost + weight(g, l, self.weight), nodes }));
            }
        }
        None
    }
}

pub fn shortest_path(
    g: &NetworkGraph,
    view: &TopologyView,
    src: NodeId,
    dst: NodeId,
    w: LinkWeight,
) -> Option<Vec<NodeId>> {
    ShortestPaths::new(src, dst, w).next_path(g, view).map(|p| p.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub nodes: Vec<NodeId>,
    pub score: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub candidates: Vec<Attempt>,
    pub chosen: Option<PathCandidate>,
}

/// The satellite whose view governs a route: the source's access satellite.
pub fn view_owner(g: &NetworkGraph, route: &Route) -> Option<NodeId> {
    g.access_satellite(route.src)
}

/// Retry loop: shortest path, reserve, score; prune the congested link on rejection.
/// The best-scoring accepted candidate is left reserved.
pub fn select_path(
    g: &mut NetworkGraph,
    route: &Route,
    rate_bps: u64,
    cfg: &PsruConfig,
) -> Result<Selection, LedgerError> {
    let mut view = view_owner(g, route).and_then(|s| g.topology_view(s).cloned()).unwrap_or_default();
    let mut paths = ShortestPaths::new(route.src, route.target, cfg.link_weight);
    let mut attempts = Vec::new();
    let mut best: Option<PathCandidate> = None;
    for _ in 0..cfg.count_max {
        let Some((_, mut nodes)) = paths.next_path(g, &view) else { break };
        nodes.extend_from_slice(&route.tail);
        let Some(cand) = snapshot(g, &nodes, cfg) else { break };
        match try_reserve(g, &cand.links, rate_bps, &[])? {
            Reservation::Accepted => {
                release(g, &cand.links, rate_bps, &[])?;
                attempts.push(Attempt { nodes, score: Some(cand.score), accepted: true });
                if best.as_ref().is_none_or(|b| cand.score > b.score) {
                    best = Some(cand);
                }
            }
            Reservation::Rejected(c) => {
                attempts.push(Attempt { nodes, score: None, accepted: false });
                let Congestion::Link(l) = c else { break };
                let link = g.link(l);
                view.remove((link.src, link.dst));
                let searched = cand.links.len() - route.tail.len();
                if cand.links[searched..].contains(&l) {
                    break;
                }
            }
        }
    }
    if let Some(b) = &best {
        let r = try_reserve(g, &b.links, rate_bps, &[])?;
        debug_assert_eq!(r, Reservation::Accepted);
    }
    Ok(Selection { candidates: attempts, chosen: best })
}

/// Every simple path of the route in lexicographic node order, up to `cap`.
pub fn enumerate_paths(g: &NetworkGraph, route: &Route, view: &TopologyView, cap: usize) -> Vec<Vec<NodeId>> {
    fn dfs(
        g: &NetworkGraph,
        view: &TopologyView,
        dst: NodeId,
        path: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
        cap: usize,
    ) {
        if out.len() >= cap {
            return;
        }
        let last = *path.last().expect("non-empty");
        if last == dst {
            out.push(path.clone());
            return;
        }
        for &l in g.out_links(last) {
            let d = g.link(l).dst;
            if path.contains(&d) || !view.allows(last, d) {
                continue;
            }
            path.push(d);
            dfs(g, view, dst, path, out, cap);
            path.pop();
        }
    }
    let mut out = Vec::new();
    if route.src == route.target {
        return out;
    }
    dfs(g, view, route.target, &mut vec![route.src], &mut out, cap);
    for p in &mut out {
        p.extend_from_slice(&route.tail);
    }
    out
}

fn path_cost(g: &NetworkGraph, links: &[LinkId], w: LinkWeight) -> f64 {
    links.iter().fold(0.0, |acc, &l| acc + weight(g, l, w))
}

/// Feasible candidates of the route in lexicographic order.
pub fn feasible_candidates(
    g: &NetworkGraph,
    route: &Route,
    rate_bps: u64,
    cfg: &PsruConfig,
    cap: usize,
) -> Vec<PathCandidate> {
    let view = view_owner(g, route).and_then(|s| g.topology_view(s).cloned()).unwrap_or_default();
    enumerate_paths(g, route, &view, cap)
        .into_iter()
        .filter_map(|nodes| snapshot(g, &nodes, cfg))
        .filter(|c| first_shortfall(g, &c.links, rate_bps, &[]).is_none())
        .collect()
}

/// Exhaustive counterpart of [`select_path`]; does not reserve.
pub fn oracle_select(g: &NetworkGraph, route: &Route, rate_bps: u64, cfg: &PsruConfig) -> Option<PathCandidate> {
    let mut all = feasible_candidates(g, route, rate_bps, cfg, usize::MAX);
    let key = |c: &PathCandidate| {
        let n = c.nodes.len() - route.tail.len();
        path_cost(g, &c.links[..n - 1], cfg.link_weight)
    };
    all.sort_by(|a, b| {
        key(a).total_cmp(&key(b)).then_with(|| a.nodes[..a.nodes.len() - route.tail.len()].cmp(&b.nodes[..b.nodes.len() - route.tail.len()]))
    });
    let mut best: Option<PathCandidate> = None;
    for c in all {
        if best.as_ref().is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    best
}

/// Mean link availability plus mean compute availability.
pub fn residual_score(c: &PathCandidate) -> f64 {
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    mean(&mut c.avail_link_ratios.iter().copied()) + mean(&mut c.avail_comp_ratios.iter().map(|p| p.1))
}

/// Compute-capable nodes of a path.
pub fn compute_nodes<'a>(g: &'a NetworkGraph, nodes: &'a [NodeId]) -> impl Iterator<Item = NodeId> + 'a {
    nodes.iter().copied().filter(|n| matches!(g.nodes()[n.0].kind, NodeKind::Edge | NodeKind::Satellite))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, GainModel};
    use crate::topology::{Band, LinkSpec, NodeKind, NodeSpec, TopologyConfig};

    fn node(id: usize, kind: NodeKind, x: f64, z: f64, cap: f64) -> NodeSpec {
        NodeSpec { id, kind, position: [x, 0.0, z], compute_capacity: cap }
    }

    fn link(src: usize, dst: usize, band: Band) -> LinkSpec {
        LinkSpec {
            src,
            dst,
            band,
            bandwidth_hz: None,
            tx_power_w: 1.0,
            gain_tx: 1.0,
            gain_rx: 1.0,
            channel_gain: Some(GainModel::fixed(1e-12)),
            bidirectional: false,
        }
    }

    /// edge0 -> gw1 -> {sat2, sat3} -> gs4, with sat2 <-> sat3.
    fn diamond() -> NetworkGraph {
        let cfg = TopologyConfig {
            nodes: vec![
                node(0, NodeKind::Edge, 0.0, 0.0, 0.5e9),
                node(1, NodeKind::Gateway, 1e3, 0.0, 0.0),
                node(2, NodeKind::Satellite, 0.0, 550e3, 50e9),
                node(3, NodeKind::Satellite, 1e3, 550e3, 50e9),
                node(4, NodeKind::GroundStation, 0.0, 0.0, 0.0),
            ],
            links: vec![
                link(0, 1, Band::Ground),
                link(1, 2, Band::Satellite),
                link(1, 3, Band::Satellite),
                LinkSpec { bidirectional: true, ..link(2, 3, Band::Satellite) },
                link(2, 4, Band::Satellite),
                link(3, 4, Band::Satellite),
            ],
            sat_user_pairs: vec![],
        };
        NetworkGraph::build(&cfg, &ChannelParams::default()).unwrap()
    }

    fn route() -> Route {
        Route { src: NodeId(0), target: NodeId(4), tail: vec![] }
    }

    fn ids(v: &[usize]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn shortest_path_examples() {
        let g = diamond();
        let v = TopologyView::default();
        // Equal-length routes via 2 and via 3: lexicographic wins.
        assert_eq!(shortest_path(&g, &v, NodeId(0), NodeId(4), LinkWeight::HopCount), Some(ids(&[0, 1, 2, 4])));
        assert_eq!(shortest_path(&g, &v, NodeId(0), NodeId(1), LinkWeight::HopCount), Some(ids(&[0, 1])));
        assert_eq!(shortest_path(&g, &v, NodeId(4), NodeId(0), LinkWeight::HopCount), None);
        let mut sp = ShortestPaths::new(NodeId(0), NodeId(4), LinkWeight::HopCount);
        let all: Vec<_> = std::iter::from_fn(|| sp.next_path(&g, &v).map(|p| p.1)).collect();
        assert_eq!(all, vec![ids(&[0, 1, 2, 4]), ids(&[0, 1, 3, 4]), ids(&[0, 1, 2, 3, 4]), ids(&[0, 1, 3, 2, 4])]);
    }

    #[test]
    fn pruned_view_avoids_link() {
        let mut g = diamond();
        g.remove_link_from_view(NodeId(2), (NodeId(2), NodeId(4))).unwrap();
        let v = g.topology_view(NodeId(2)).unwrap().clone();
        assert_eq!(shortest_path(&g, &v, NodeId(0), NodeId(4), LinkWeight::HopCount), Some(ids(&[0, 1, 3, 4])));
        g.remove_link_from_view(NodeId(2), (NodeId(0), NodeId(1))).unwrap();
        let v = g.topology_view(NodeId(2)).unwrap().clone();
        assert_eq!(shortest_path(&g, &v, NodeId(0), NodeId(4), LinkWeight::HopCount), None);
        let before = g.topology_view(NodeId(2)).unwrap().clone();
        g.remove_link_from_view(NodeId(2), (NodeId(0), NodeId(1))).unwrap();
        assert_eq!(g.topology_view(NodeId(2)).unwrap(), &before);
    }

    #[test]
    fn reservation_is_atomic() {
        let mut g = diamond();
        let links = path_links(&g, &ids(&[0, 1, 2, 4])).unwrap();
        assert_eq!(try_reserve(&mut g, &links, 1000, &[]).unwrap(), Reservation::Accepted);
        let cap = g.link(links[1]).available_bps();
        let before = g.clone();
        let r = try_reserve(&mut g, &links, cap + 1, &[]).unwrap();
        assert!(matches!(r, Reservation::Rejected(Congestion::Link(_))));
        assert_eq!(g, before);
        let l0 = g.link(links[0]).available_bps();
        let exact = l0.min(cap).min(g.link(links[2]).available_bps());
        assert_eq!(try_reserve(&mut g, &links, exact, &[]).unwrap(), Reservation::Accepted);
        let r = try_reserve(&mut g, &[], 0, &[(NodeId(2), 60_000_000_000)]).unwrap();
        assert_eq!(r, Reservation::Rejected(Congestion::Node(NodeId(2))));
    }

    #[test]
    fn psru_examples() {
        let cfg = PsruConfig::default();
        let mk = |l: Vec<f64>, c: Vec<f64>| PathCandidate {
            nodes: vec![],
            links: vec![],
            score: 0.0,
            avail_link_ratios: l,
            avail_comp_ratios: c.into_iter().map(|r| (NodeId(0), r)).collect(),
        };
        assert_eq!(psru_score(&mk(vec![1.0, 1.0], vec![1.0, 1.0]), &cfg).unwrap(), 1.0);
        let a1 = PsruConfig { alpha_mix: 1.0, ..cfg };
        assert_eq!(psru_score(&mk(vec![0.5, 1.0], vec![0.0]), &a1).unwrap(), 0.75);
        assert!((psru_score(&mk(vec![0.5, 1.0], vec![0.6]), &cfg).unwrap() - 0.525).abs() < 1e-15);
        assert_eq!(psru_score(&mk(vec![], vec![]), &cfg), Err(PathError::EmptyPath));
    }

    #[test]
    fn select_prefers_higher_score_and_releases_rest() {
        let mut g = diamond();
        // Load satellite 2 so the route via 3 scores higher.
        g.reserve_compute(NodeId(2), 40_000_000_000).unwrap();
        let cfg = PsruConfig { link_weight: LinkWeight::HopCount, count_max: 4, ..Default::default() };
        let before = g.total_reserved();
        let sel = select_path(&mut g, &route(), 1_000_000, &cfg).unwrap();
        let chosen = sel.chosen.unwrap();
        assert_eq!(chosen.nodes, ids(&[0, 1, 3, 4]));
        assert_eq!(sel.candidates.len(), 4);
        assert_eq!(g.total_reserved().0, before.0 + 3 * 1_000_000);
        let mut probe = g.clone();
        release(&mut probe, &chosen.links, 1_000_000, &[]).unwrap();
        assert_eq!(snapshot(&probe, &chosen.nodes, &cfg).unwrap().score, chosen.score);
        let oracle = oracle_select(&probe, &route(), 1_000_000, &cfg).unwrap();
        assert_eq!(oracle.nodes, chosen.nodes);
    }

    #[test]
    fn congested_links_are_pruned() {
        let mut g = diamond();
        let l = g.link_between(NodeId(2), NodeId(4)).unwrap();
        let cap = g.link(l).capacity_bps;
        g.reserve_link(l, cap).unwrap();
        let cfg = PsruConfig { link_weight: LinkWeight::HopCount, count_max: 5, ..Default::default() };
        let sel = select_path(&mut g, &route(), 1, &cfg).unwrap();
        for a in &sel.candidates[1..] {
            assert!(!a.nodes.windows(2).any(|w| w == [NodeId(2), NodeId(4)]));
        }
        // Four links with three compute nodes beat three links with two.
        let chosen = sel.chosen.unwrap();
        assert_eq!(chosen.nodes, ids(&[0, 1, 2, 3, 4]));
        assert!((chosen.score - (0.5 + 0.5 * 3.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn saturated_network_gives_none() {
        let mut g = diamond();
        let l = g.link_between(NodeId(0), NodeId(1)).unwrap();
        let cap = g.link(l).capacity_bps;
        g.reserve_link(l, cap).unwrap();
        let before = g.clone();
        let sel = select_path(&mut g, &route(), 1, &PsruConfig::default()).unwrap();
        assert!(sel.chosen.is_none());
        assert_eq!(g.total_reserved(), before.total_reserved());
        assert!(oracle_select(&g, &route(), 1, &PsruConfig::default()).is_none());
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let g = diamond();
        let paths = enumerate_paths(&g, &route(), &TopologyView::default(), usize::MAX);
        assert_eq!(paths, vec![ids(&[0, 1, 2, 3, 4]), ids(&[0, 1, 2, 4]), ids(&[0, 1, 3, 2, 4]), ids(&[0, 1, 3, 4])]);
        assert_eq!(enumerate_paths(&g, &route(), &TopologyView::default(), 2).len(), 2);
    }
}
