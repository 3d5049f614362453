//! The centralized controller: global topology graph from periodic node
//! reports, ETX-shortest paths, and flow-entry synthesis/distribution.
//!
//! All handlers are deterministic functions over (graph, request, clock);
//! they return the messages to send rather than sending them, so the whole
//! module is table-testable outside the simulator.

use std::collections::{BTreeMap, BTreeSet};

use crate::flow::{Action, FieldSelector, FlowEntry, KeyFeatureSpec, Rule};
use crate::packet::ShortAddr;
use crate::sbi::codec::{MissBody, NodeConfigParams, TableMissReport, TopologyReport};

/// Path metric: ETX sums reported link costs; HOP charges one ETX unit
/// (128) per edge.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PathMetric {
    Hop,
    Etx,
}

/// Per-node state in the global view.
#[derive(Clone, Debug)]
pub struct NodeState {
    pub battery_level: u8,
    pub update_period_s: u32,
    pub last_report_us: u64,
}

/// A directed edge reported by its source node.
#[derive(Clone, Copy, Debug)]
pub struct EdgeState {
    pub etx_x128: u16,
    pub rssi_dbm: i16,
    pub last_seen_us: u64,
}

/// The controller's network view: reporting nodes and the directed edges
/// their reports establish.
#[derive(Default)]
pub struct TopologyGraph {
    pub nodes: BTreeMap<ShortAddr, NodeState>,
    pub edges: BTreeMap<(ShortAddr, ShortAddr), EdgeState>,
}

impl TopologyGraph {
    /// Upsert the reporting node and its out-edges. Edges this reporter
    /// previously advertised but omitted now are dropped immediately.
    pub fn merge_report(&mut self, report: &TopologyReport, now_us: u64) {
        self.nodes.insert(
            report.node,
            NodeState {
                battery_level: report.battery_level,
                update_period_s: report.update_period_s,
                last_report_us: now_us,
            },
        );
        let present: BTreeSet<ShortAddr> = report.neighbors.iter().map(|n| n.addr).collect();
        self.edges
            .retain(|(src, dst), _| *src != report.node || present.contains(dst));
        for n in &report.neighbors {
            self.edges.insert(
                (report.node, n.addr),
                EdgeState {
                    etx_x128: n.etx_x128,
                    rssi_dbm: n.rssi_dbm,
                    last_seen_us: now_us,
                },
            );
        }
    }

    /// A node is stale once it has missed two report periods.
    pub fn node_fresh(&self, addr: ShortAddr, now_us: u64) -> bool {
        self.nodes.get(&addr).is_some_and(|n| {
            now_us - n.last_report_us <= 2 * n.update_period_s as u64 * 1_000_000
        })
    }

    /// An edge is usable while its reporter is fresh and the edge itself
    /// was seen within two of the reporter's periods.
    pub(crate) fn edge_usable(&self, src: ShortAddr, edge: &EdgeState, now_us: u64) -> bool {
        let Some(n) = self.nodes.get(&src) else {
            return false;
        };
        let horizon = 2 * n.update_period_s as u64 * 1_000_000;
        now_us - n.last_report_us <= horizon && now_us - edge.last_seen_us <= horizon
    }

    /// Remove unusable edges and return the currently stale nodes.
    pub fn expire(&mut self, now_us: u64) -> Vec<ShortAddr> {
        let stale: Vec<ShortAddr> = self
            .nodes
            .keys()
            .copied()
            .filter(|a| !self.node_fresh(*a, now_us))
            .collect();
        let keep: BTreeSet<(ShortAddr, ShortAddr)> = self
            .edges
            .iter()
            .filter(|((s, _), e)| self.edge_usable(*s, e, now_us))
            .map(|(k, _)| *k)
            .collect();
        self.edges.retain(|k, _| keep.contains(k));
        stale
    }

    /// Shortest path under the metric, ties broken by the lexicographically
    /// smallest node sequence. Paths are simple by construction.
    pub fn compute_path(
        &self,
        src: ShortAddr,
        dst: ShortAddr,
        metric: PathMetric,
        now_us: u64,
    ) -> Option<Vec<ShortAddr>> {
        if !self.node_fresh(src, now_us) || !self.node_fresh(dst, now_us) {
            return None;
        }
        if src == dst {
            return Some(vec![src]);
        }
        let mut best: BTreeMap<ShortAddr, (u64, Vec<ShortAddr>)> = BTreeMap::new();
        let mut done: BTreeSet<ShortAddr> = BTreeSet::new();
        best.insert(src, (0, vec![src]));
        loop {
            let (&node, _) = best
                .iter()
                .filter(|(a, _)| !done.contains(*a))
                .min_by(|(_, (ca, pa)), (_, (cb, pb))| (ca, pa).cmp(&(cb, pb)))?;
            if node == dst {
                return Some(best[&node].1.clone());
            }
            done.insert(node);
            let (cost, path) = best[&node].clone();
            for ((s, d), e) in self.edges.range((node, ShortAddr(0))..=(node, ShortAddr(u16::MAX)))
            {
                debug_assert_eq!(*s, node);
                if done.contains(d)
                    || !self.edge_usable(*s, e, now_us)
                    || !self.node_fresh(*d, now_us)
                {
                    continue;
                }
                let w = match metric {
                    PathMetric::Etx => e.etx_x128 as u64,
                    PathMetric::Hop => 128,
                };
                let mut cand_path = path.clone();
                cand_path.push(*d);
                let cand_cost = cost + w;
                match best.get(d) {
                    Some((c, p)) if (*c, p) <= (cand_cost, &cand_path) => {}
                    _ => {
                        best.insert(*d, (cand_cost, cand_path));
                    }
                }
            }
        }
    }
}

/// Priority of controller-synthesized path entries. Below it, one-hop
/// neighbor rules (20); above it, the node-local upstream rule (250).
pub const SYNTH_PRIORITY: u16 = 50;

/// For each non-terminal node of `path`, one entry forwarding frames whose
/// mesh final address is `final_addr` to the next node; the same call also
/// generates the reverse-direction entries (matching the path head's
/// address along the reversed path) so replies follow the same route.
pub fn synthesize_entries(
    path: &[ShortAddr],
    final_addr: ShortAddr,
    ttl_s: u32,
) -> Vec<(ShortAddr, FlowEntry)> {
    debug_assert!(path.len() >= 2);
    let mut out = Vec::new();
    for i in 0..path.len() - 1 {
        out.push((path[i], path_entry(final_addr, path[i + 1], ttl_s)));
    }
    let head = path[0];
    for i in (1..path.len()).rev() {
        out.push((path[i], path_entry(head, path[i - 1], ttl_s)));
    }
    out
}

fn path_entry(final_addr: ShortAddr, next_hop: ShortAddr, ttl_s: u32) -> FlowEntry {
    FlowEntry::new(
        SYNTH_PRIORITY,
        vec![Rule::field_eq(FieldSelector::MeshFinal, final_addr.0 as u64)],
        vec![
            Action::Decrement {
                field: FieldSelector::MeshHopsLeft,
                value: 1,
            },
            Action::Forward { next_hop },
        ],
        ttl_s,
    )
}

struct PathRecord {
    path: Vec<ShortAddr>,
    installed_at_us: u64,
}

struct TrackedEntry {
    entry: FlowEntry,
    installed_at_us: u64,
}

/// Entries to install at a node, in delivery order.
pub type Push = (ShortAddr, Vec<FlowEntry>);

/// Result of a `POST /network`.
pub struct NetworkPostResult {
    /// Configuration parameters; present only on a node's first report.
    pub config: Option<NodeConfigParams>,
    /// Path installs needed to keep this node reachable from the border
    /// router, delivered before the response.
    pub pushes: Vec<Push>,
}

/// Result of a `POST /flow-engine` (table miss).
pub enum FlowEnginePostResult {
    Ok {
        /// Entries for the requesting node (the response body).
        response: Vec<FlowEntry>,
        /// Proactive installs for the other on-path nodes.
        pushes: Vec<Push>,
    },
    /// The final address is unknown, stale, or unreachable.
    NotFound,
}

/// Controller configuration handed to nodes and used for synthesis.
#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub border_router: ShortAddr,
    pub metric: PathMetric,
    pub default_ttl_s: u32,
    pub update_period_s: u32,
    pub key_features: KeyFeatureSpec,
}

pub struct Controller {
    cfg: ControllerConfig,
    pub graph: TopologyGraph,
    configured: BTreeSet<ShortAddr>,
    /// (path source, final address) -> last synthesized path.
    records: BTreeMap<(ShortAddr, ShortAddr), PathRecord>,
    /// Node -> entries the controller has installed there.
    tracked: BTreeMap<ShortAddr, Vec<TrackedEntry>>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        Controller {
            cfg,
            graph: TopologyGraph::default(),
            configured: BTreeSet::new(),
            records: BTreeMap::new(),
            tracked: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    fn record_fresh(&self, key: (ShortAddr, ShortAddr), now_us: u64, margin_s: u32) -> bool {
        self.records.get(&key).is_some_and(|r| {
            now_us - r.installed_at_us + margin_s as u64 * 1_000_000
                < self.cfg.default_ttl_s as u64 * 1_000_000
        })
    }

    fn track(&mut self, node: ShortAddr, entries: &[FlowEntry], now_us: u64) {
        let list = self.tracked.entry(node).or_default();
        for e in entries {
            if let Some(t) = list
                .iter_mut()
                .find(|t| t.entry.priority == e.priority && t.entry.rules == e.rules)
            {
                t.entry = e.clone();
                t.installed_at_us = now_us;
            } else {
                list.push(TrackedEntry {
                    entry: e.clone(),
                    installed_at_us: now_us,
                });
            }
        }
    }

    /// Group per node, delivering in `order` (nodes absent from `order`
    /// keep their first-appearance position).
    fn push_grouped(
        &mut self,
        pushes: &mut Vec<Push>,
        entries: Vec<(ShortAddr, FlowEntry)>,
        order: &[ShortAddr],
        now_us: u64,
    ) {
        let mut grouped: BTreeMap<ShortAddr, Vec<FlowEntry>> = BTreeMap::new();
        let mut seen = Vec::new();
        for (node, e) in entries {
            if !seen.contains(&node) {
                seen.push(node);
            }
            grouped.entry(node).or_default().push(e);
        }
        let mut ordered: Vec<ShortAddr> = order
            .iter()
            .copied()
            .filter(|n| grouped.contains_key(n))
            .collect();
        for n in seen {
            if !ordered.contains(&n) {
                ordered.push(n);
            }
        }
        for node in ordered {
            let es = grouped.remove(&node).unwrap();
            self.track(node, &es, now_us);
            pushes.push((node, es));
        }
    }

    /// True while every hop of a recorded path is still usable and its
    /// cost matches the current optimum: recomputing would only flap
    /// between equal-cost paths, churning installed state.
    fn path_still_optimal(&self, path: &[ShortAddr], now_us: u64) -> bool {
        let mut cost = 0u64;
        for w in path.windows(2) {
            if !self.graph.node_fresh(w[1], now_us) {
                return false;
            }
            match self.graph.edges.get(&(w[0], w[1])) {
                Some(e) if self.graph.edge_usable(w[0], e, now_us) => {
                    cost += match self.cfg.metric {
                        PathMetric::Etx => e.etx_x128 as u64,
                        PathMetric::Hop => 128,
                    };
                }
                _ => return false,
            }
        }
        let Some(best) = self
            .graph
            .compute_path(path[0], *path.last().unwrap(), self.cfg.metric, now_us)
        else {
            return false;
        };
        let best_cost: u64 = best
            .windows(2)
            .map(|w| match self.cfg.metric {
                PathMetric::Etx => self.graph.edges[&(w[0], w[1])].etx_x128 as u64,
                PathMetric::Hop => 128,
            })
            .sum();
        cost <= best_cost
    }

    /// Install (or refresh) the border-router-to-`dst` path so downward
    /// traffic — including the controller's own responses — can reach
    /// `dst`. Intermediate nodes are covered first, over prefixes of the
    /// same path, so every push is itself deliverable.
    fn ensure_path_from_br(
        &mut self,
        dst: ShortAddr,
        now_us: u64,
        margin_s: u32,
        pushes: &mut Vec<Push>,
    ) {
        let br = self.cfg.border_router;
        if dst == br || self.record_fresh((br, dst), now_us, margin_s) {
            return;
        }
        // Sticky routing: while the previously installed path is still
        // optimal-cost, refresh it rather than flapping to an equal-cost
        // alternative.
        let previous = self.records.get(&(br, dst)).map(|r| r.path.clone());
        let path = match previous {
            Some(ref old) if self.path_still_optimal(old, now_us) => old.clone(),
            _ => match self.graph.compute_path(br, dst, self.cfg.metric, now_us) {
                Some(p) => p,
                None => return,
            },
        };
        let changed = previous.is_some_and(|old| old != path);
        for i in 1..path.len() {
            let target = path[i];
            if self.record_fresh((br, target), now_us, margin_s) {
                continue;
            }
            let prefix = &path[..=i];
            let entries = synthesize_entries(prefix, target, self.cfg.default_ttl_s);
            self.records.insert(
                (br, target),
                PathRecord {
                    path: prefix.to_vec(),
                    installed_at_us: now_us,
                },
            );
            // On a path change the border router must repoint last, after
            // the downstream entries exist; data in flight keeps using the
            // old working path until then. New installs go root-outward
            // so every push can already be routed.
            let order: Vec<ShortAddr> = if changed {
                prefix.iter().rev().copied().collect()
            } else {
                prefix.to_vec()
            };
            self.push_grouped(pushes, entries, &order, now_us);
        }
    }

    /// `POST /network`: merge the report, keep the reporter reachable,
    /// and hand out configuration on first contact.
    pub fn handle_network_post(
        &mut self,
        report: &TopologyReport,
        now_us: u64,
    ) -> NetworkPostResult {
        self.graph.merge_report(report, now_us);
        let mut pushes = Vec::new();
        self.ensure_path_from_br(report.node, now_us, 0, &mut pushes);
        let config = if self.configured.insert(report.node) {
            Some(NodeConfigParams {
                update_period_s: self.cfg.update_period_s,
                key_features: self.cfg.key_features.clone(),
                default_ttl_s: self.cfg.default_ttl_s,
            })
        } else {
            None
        };
        NetworkPostResult { config, pushes }
    }

    /// Decode the final address a miss report asks about.
    pub fn miss_final(&self, report: &TableMissReport) -> Option<ShortAddr> {
        match &report.body {
            MissBody::KeyValues(vs) => {
                let idx = self
                    .cfg
                    .key_features
                    .iter()
                    .position(|k| k.field == FieldSelector::MeshFinal)?;
                vs.get(idx).map(|v| ShortAddr(*v as u16))
            }
            MissBody::WholeFrame(bytes) => {
                crate::sbi::codec::whole_frame_final(bytes).ok().flatten()
            }
        }
    }

    /// `POST /flow-engine`: compute the requester-to-final path, answer
    /// with the requester's entries, and push the rest proactively.
    pub fn handle_flow_engine_post(
        &mut self,
        report: &TableMissReport,
        now_us: u64,
    ) -> FlowEnginePostResult {
        let requester = report.node;
        let Some(final_addr) = self.miss_final(report) else {
            return FlowEnginePostResult::NotFound;
        };
        let record_key = (requester, final_addr);
        if self.record_fresh(record_key, now_us, 0) {
            // Identical miss within the entry TTL (e.g. a retransmission
            // that raced the response): same answer, no duplicate pushes.
            let path = self.records[&record_key].path.clone();
            let entries = synthesize_entries(&path, final_addr, self.cfg.default_ttl_s);
            let response = entries
                .into_iter()
                .filter(|(n, _)| *n == requester)
                .map(|(_, e)| e)
                .collect();
            return FlowEnginePostResult::Ok {
                response,
                pushes: Vec::new(),
            };
        }
        let Some(path) = self
            .graph
            .compute_path(requester, final_addr, self.cfg.metric, now_us)
        else {
            return FlowEnginePostResult::NotFound;
        };
        if path.len() < 2 {
            return FlowEnginePostResult::NotFound;
        }
        let mut pushes = Vec::new();
        // Make sure every node we are about to push to is reachable from
        // the border router first.
        for node in path.iter().skip(1) {
            self.ensure_path_from_br(*node, now_us, 0, &mut pushes);
        }
        let entries = synthesize_entries(&path, final_addr, self.cfg.default_ttl_s);
        self.records.insert(
            record_key,
            PathRecord {
                path: path.clone(),
                installed_at_us: now_us,
            },
        );
        let mut response = Vec::new();
        let mut rest = Vec::new();
        for (node, e) in entries {
            if node == requester {
                response.push(e);
            } else {
                rest.push((node, e));
            }
        }
        let order = path.clone();
        self.push_grouped(&mut pushes, rest, &order, now_us);
        FlowEnginePostResult::Ok { response, pushes }
    }

    /// `GET /flow-engine`: every entry synthesized for `node` still within
    /// its TTL.
    pub fn handle_flow_engine_get(&self, node: ShortAddr, now_us: u64) -> Vec<FlowEntry> {
        let ttl_us = self.cfg.default_ttl_s as u64 * 1_000_000;
        self.tracked
            .get(&node)
            .map(|list| {
                list.iter()
                    .filter(|t| now_us - t.installed_at_us < ttl_us)
                    .map(|t| t.entry.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Periodic maintenance: re-push border-router paths that would expire
    /// within `horizon_s` of now, so steady-state downward traffic never
    /// misses. Returns the installs to deliver.
    pub fn refresh_paths(&mut self, now_us: u64, horizon_s: u32) -> Vec<Push> {
        let targets: Vec<ShortAddr> = self
            .graph
            .nodes
            .keys()
            .copied()
            .filter(|a| *a != self.cfg.border_router && self.graph.node_fresh(*a, now_us))
            .collect();
        let mut pushes = Vec::new();
        for t in targets {
            self.ensure_path_from_br(t, now_us, horizon_s, &mut pushes);
        }
        pushes
    }

    /// Text snapshot of the global view, for debugging.
    pub fn dump_topology(&self, now_us: u64) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "# topology at t={}us", now_us);
        for (a, n) in &self.graph.nodes {
            let _ = writeln!(
                s,
                "node {} battery={} period_s={} last_report_us={} fresh={}",
                a,
                n.battery_level,
                n.update_period_s,
                n.last_report_us,
                self.graph.node_fresh(*a, now_us)
            );
        }
        for ((src, dst), e) in &self.graph.edges {
            let _ = writeln!(
                s,
                "edge {}->{} etx_x128={} rssi_dbm={} last_seen_us={}",
                src, dst, e.etx_x128, e.rssi_dbm, e.last_seen_us
            );
        }
        s
    }
}
