//! One simulation replica: nodes, radio, MAC instances, the controller
//! and the external echo server, driven by a single event loop.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::controller::{
    Controller, ControllerConfig, FlowEnginePostResult, PathMetric, Push,
};
use crate::node::{
    Body, EchoBody, FrameInFlight, Mode, Node, NodeConfig, NodeCtx, NodeTimer, Wire,
    COMPRESSED_HDR_BYTES,
};
use crate::packet::{Datagram, DatagramKind, Host, LinkLimits, PayloadWindow, ShortAddr};
use crate::sbi::{self, codec, Code, Endpoint, ExchangeId, Inbound, RetxOutcome, Transmit};
use crate::scenario::Scenario;
use crate::sim::channel::{Position, Radio, RxOutcome};
use crate::sim::mac::{
    Mac, MacJob, MacPhase, ACK_BYTES, ACK_TIMEOUT_US, BACKOFF_MAX_US, CARRIER_REDRAWS,
    MAX_ATTEMPTS, TURNAROUND_US,
};
use crate::sim::metrics::{Category, DropCause, Metrics, RttSample};
use crate::sim::queue::EventQueue;
use crate::sim::rng::Rng;
use crate::sim::CostModel;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum ExtDest {
    Controller,
    Server,
    Border,
}

enum Ev {
    MacBackoff { node: usize, tag: u64 },
    MacStartDelayed { node: usize, job: MacJob },
    TxEnd { id: u64 },
    AckTx { node: usize, to: usize, tag: u64, category: Category },
    AckRx { node: usize, tag: u64 },
    AckTimeout { node: usize, tag: u64 },
    FrameRx { node: usize, fif: FrameInFlight },
    Timer { node: usize, timer: NodeTimer },
    GlobalTick,
    ControllerSweep,
    CtlDeadline { exchange: ExchangeId },
    CtlPush { node: ShortAddr, entries: Vec<crate::flow::FlowEntry> },
    ExtDeliver { dest: ExtDest, wire: Rc<Wire>, trace: Vec<u16> },
    /// Raw interference source (test harnesses).
    Jam { node: usize, bytes: u16 },
}

enum TxMeta {
    Data { node: usize, tag: u64 },
    Ack { to: usize, tag: u64 },
    Jam,
}

/// Everything a node context needs besides the node itself.
struct Sys {
    now: u64,
    queue: EventQueue<Ev>,
    rng: Rng,
    metrics: Metrics,
    macs: Vec<Mac>,
    next_dgram_id: u64,
    ext_link_us: u64,
    limits: LinkLimits,
}

struct Ctx<'a> {
    sys: &'a mut Sys,
    node_idx: usize,
    node_addr: ShortAddr,
}

impl NodeCtx for Ctx<'_> {
    fn now_us(&self) -> u64 {
        self.sys.now
    }

    fn rand_range(&mut self, lo: u64, hi: u64) -> u64 {
        self.sys.rng.range_inclusive(lo, hi)
    }

    fn next_datagram_id(&mut self) -> u64 {
        self.sys.next_dgram_id += 1;
        self.sys.next_dgram_id
    }

    fn send_frame(&mut self, delay_us: u64, mut fif: FrameInFlight) {
        fif.trace.push(self.node_addr.0);
        if fif.wire.meta.kind == DatagramKind::RplDao && fif.trace.len() == 1 {
            self.sys.metrics.dao_datagrams_created += 1;
        }
        let dst = fif.frame.mac_dst;
        let job = MacJob { fif, dst };
        if delay_us == 0 {
            sys_mac_enqueue(self.sys, self.node_idx, job);
        } else {
            let at = self.sys.now + delay_us;
            self.sys.queue.schedule(
                at,
                Ev::MacStartDelayed {
                    node: self.node_idx,
                    job,
                },
            );
        }
    }

    fn gateway_out(&mut self, wire: Rc<Wire>, trace: Vec<u16>) {
        let dest = match wire.meta.dst {
            Host::Controller => ExtDest::Controller,
            Host::ExternalServer => ExtDest::Server,
            Host::Node(_) => ExtDest::Border,
        };
        let at = self.sys.now + self.sys.ext_link_us;
        self.sys.queue.schedule(at, Ev::ExtDeliver { dest, wire, trace });
    }

    fn schedule(&mut self, at_us: u64, timer: NodeTimer) {
        self.sys.queue.schedule(
            at_us,
            Ev::Timer {
                node: self.node_idx,
                timer,
            },
        );
    }

    fn diag(&mut self, cause: DropCause) {
        self.sys.metrics.diag(cause);
    }

    fn rtt_sample(&mut self, sample: RttSample) {
        self.sys.metrics.rtt_sample(sample);
    }

    fn miss_request(&mut self) {
        let now = self.sys.now;
        self.sys.metrics.miss_request(now);
    }
}

/// Queue a frame at a node's MAC, starting the backoff cycle if idle.
fn sys_mac_enqueue(sys: &mut Sys, node: usize, job: MacJob) {
    match sys.macs[node].enqueue(job) {
        Err(()) => sys.metrics.diag(DropCause::MacQueueFull),
        Ok(true) => sys_mac_start_next(sys, node),
        Ok(false) => {}
    }
    sys.metrics.max_mac_queue = sys.metrics.max_mac_queue.max(sys.macs[node].queue_len());
}

fn sys_mac_start_next(sys: &mut Sys, node: usize) {
    if let Some(tag) = sys.macs[node].begin_next() {
        let at = sys.now + sys.rng.range_inclusive(0, BACKOFF_MAX_US);
        sys.queue.schedule(at, Ev::MacBackoff { node, tag });
    }
}

enum CtlPurpose {
    Push,
}

pub struct World {
    sys: Sys,
    nodes: Vec<Node>,
    radio: Radio,
    tx_meta: BTreeMap<u64, TxMeta>,
    addr_to_idx: BTreeMap<u16, usize>,
    br_idx: usize,
    controller: Controller,
    ctl_endpoint: Endpoint,
    ctl_pending: BTreeMap<ExchangeId, CtlPurpose>,
    mode: Mode,
    costs: CostModel,
    sweep_period_us: u64,
    duration_us: u64,
}

impl World {
    pub fn new(scenario: &Scenario, mode: Mode, seed: u64) -> Self {
        let mut nodes_sorted = scenario.nodes.clone();
        nodes_sorted.sort_by_key(|n| n.id);
        let positions: Vec<Position> = nodes_sorted
            .iter()
            .map(|n| Position {
                x_m: n.x_m,
                y_m: n.y_m,
            })
            .collect();
        let radio = Radio::new(positions, scenario.channel);
        let limits = LinkLimits::default();
        let mut addr_to_idx = BTreeMap::new();
        let mut nodes = Vec::with_capacity(nodes_sorted.len());
        let mut br_idx = 0;
        for (idx, sn) in nodes_sorted.iter().enumerate() {
            addr_to_idx.insert(sn.id, idx);
            if sn.role == crate::node::Role::BorderRouter {
                br_idx = idx;
            }
            nodes.push(Node::new(NodeConfig {
                addr: ShortAddr(sn.id),
                role: sn.role,
                mode,
                traffic: sn.traffic,
                payload_bytes: scenario.payload_bytes,
                update_period_s: scenario.sdn.update_period_s,
                key_features: scenario.sdn.key_features.clone(),
                miss_queue_cap: scenario.sdn.miss_queue_cap,
                default_ttl_s: scenario.sdn.default_ttl_s,
                flow_capacity: scenario.sdn.flow_table_capacity,
                routing_capacity: scenario.rpl.routing_capacity,
                dao_period_s: scenario.rpl.dao_period_s,
                limits,
                t_proc_mesh_us: scenario.costs.t_proc_mesh_us,
                t_proc_routeover_base_us: scenario.costs.t_proc_routeover_base_us,
                t_proc_routeover_per_frag_us: scenario.costs.t_proc_routeover_per_frag_us,
            }));
        }
        let controller = Controller::new(ControllerConfig {
            border_router: scenario.border_router(),
            metric: PathMetric::Etx,
            default_ttl_s: scenario.sdn.default_ttl_s,
            update_period_s: scenario.sdn.update_period_s,
            key_features: scenario.sdn.key_features.clone(),
        });
        let warmup_us = scenario.run.warmup_s as u64 * 1_000_000;
        World {
            sys: Sys {
                now: 0,
                queue: EventQueue::default(),
                rng: Rng::new(seed),
                metrics: Metrics::new(warmup_us),
                macs: (0..nodes.len()).map(|_| Mac::default()).collect(),
                next_dgram_id: 0,
                ext_link_us: scenario.costs.t_ext_link_us,
                limits,
            },
            nodes,
            radio,
            tx_meta: BTreeMap::new(),
            addr_to_idx,
            br_idx,
            controller,
            ctl_endpoint: Endpoint::new(0xC000),
            ctl_pending: BTreeMap::new(),
            mode,
            costs: scenario.costs,
            sweep_period_us: scenario.sdn.path_refresh_period_s as u64 * 1_000_000,
            duration_us: scenario.run.duration_s as u64 * 1_000_000,
        }
    }

    fn with_node<R>(&mut self, idx: usize, f: impl FnOnce(&mut Node, &mut Ctx) -> R) -> R {
        let node = &mut self.nodes[idx];
        let mut ctx = Ctx {
            node_addr: node.addr(),
            node_idx: idx,
            sys: &mut self.sys,
        };
        f(node, &mut ctx)
    }

    /// Run the replica to its configured duration and return the metrics.
    pub fn run(mut self) -> Metrics {
        for idx in 0..self.nodes.len() {
            self.with_node(idx, |n, ctx| n.start(ctx));
        }
        self.sys.queue.schedule(1_000_000, Ev::GlobalTick);
        if self.mode == Mode::Sdn {
            self.sys
                .queue
                .schedule(self.sweep_period_us, Ev::ControllerSweep);
        }
        while let Some((at, ev)) = self.sys.queue.pop() {
            if at > self.duration_us {
                break;
            }
            self.sys.now = at;
            self.dispatch(ev);
        }
        self.sys.metrics
    }

    /// Test access to a node (by address) after construction.
    pub fn node(&self, addr: u16) -> &Node {
        &self.nodes[self.addr_to_idx[&addr]]
    }

    /// Test hook: schedule a raw interfering transmission.
    pub fn schedule_jam(&mut self, node_addr: u16, at_us: u64, bytes: u16) {
        let idx = self.addr_to_idx[&node_addr];
        self.sys.queue.schedule(at_us, Ev::Jam { node: idx, bytes });
    }

    /// Run until `until_us` only (test harnesses); events beyond stay
    /// queued. Returns the world for inspection.
    pub fn run_until(mut self, until_us: u64) -> Self {
        for idx in 0..self.nodes.len() {
            self.with_node(idx, |n, ctx| n.start(ctx));
        }
        self.sys.queue.schedule(1_000_000, Ev::GlobalTick);
        if self.mode == Mode::Sdn {
            self.sys
                .queue
                .schedule(self.sweep_period_us, Ev::ControllerSweep);
        }
        while let Some(t) = self.sys.queue.peek_time() {
            if t > until_us {
                break;
            }
            let (at, ev) = self.sys.queue.pop().unwrap();
            self.sys.now = at;
            self.dispatch(ev);
        }
        self
    }

    pub fn metrics(&self) -> &Metrics {
        &self.sys.metrics
    }

    pub fn topology_dump(&self) -> String {
        self.controller.dump_topology(self.sys.now)
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::MacBackoff { node, tag } => self.on_mac_backoff(node, tag),
            Ev::MacStartDelayed { node, job } => sys_mac_enqueue(&mut self.sys, node, job),
            Ev::TxEnd { id } => self.on_tx_end(id),
            Ev::AckTx {
                node,
                to,
                tag,
                category,
            } => self.on_ack_tx(node, to, tag, category),
            Ev::AckRx { node, tag } => self.on_ack_rx(node, tag),
            Ev::AckTimeout { node, tag } => self.on_ack_timeout(node, tag),
            Ev::FrameRx { node, fif } => self.with_node(node, |n, ctx| n.on_frame(ctx, fif)),
            Ev::Timer { node, timer } => self.with_node(node, |n, ctx| n.on_timer(ctx, timer)),
            Ev::GlobalTick => {
                for idx in 0..self.nodes.len() {
                    self.with_node(idx, |n, ctx| n.tick_1s(ctx));
                }
                let at = self.sys.now + 1_000_000;
                self.sys.queue.schedule(at, Ev::GlobalTick);
            }
            Ev::ControllerSweep => {
                let horizon = (self.sweep_period_us / 1_000_000) as u32;
                let pushes = self.controller.refresh_paths(self.sys.now, horizon);
                self.send_pushes(pushes);
                let at = self.sys.now + self.sweep_period_us;
                self.sys.queue.schedule(at, Ev::ControllerSweep);
            }
            Ev::CtlDeadline { exchange } => self.on_ctl_deadline(exchange),
            Ev::CtlPush { node, entries } => self.ctl_push_now(node, entries),
            Ev::ExtDeliver { dest, wire, trace } => match dest {
                ExtDest::Border => {
                    let br = self.br_idx;
                    self.with_node(br, |n, ctx| n.gateway_inject(ctx, wire, trace));
                }
                ExtDest::Server => self.on_server_deliver(wire, trace),
                ExtDest::Controller => self.on_controller_deliver(wire),
            },
            Ev::Jam { node, bytes } => {
                let (id, end) = self.radio.begin_tx(
                    node,
                    bytes,
                    self.sys.now,
                    self.costs.bitrate_bps,
                    &mut self.sys.rng,
                );
                self.tx_meta.insert(id, TxMeta::Jam);
                self.sys.queue.schedule(end, Ev::TxEnd { id });
            }
        }
    }

    // ------------------------------------------------------------------
    // MAC and radio
    // ------------------------------------------------------------------

    fn on_mac_backoff(&mut self, node: usize, tag: u64) {
        if !self.sys.macs[node].is_current(tag, MacPhase::Backoff) {
            return;
        }
        let busy = self.radio.busy_for(node, self.sys.now)
            || self.sys.now < self.sys.macs[node].reserved_until_us;
        if busy {
            let redraws = {
                let cur = self.sys.macs[node].current.as_mut().unwrap();
                cur.redraws += 1;
                cur.redraws
            };
            if redraws <= CARRIER_REDRAWS {
                let at = self.sys.now + self.sys.rng.range_inclusive(0, BACKOFF_MAX_US);
                self.sys.queue.schedule(at, Ev::MacBackoff { node, tag });
            } else {
                // Carrier never cleared: counts as a failed attempt.
                let cur = self.sys.macs[node].current.as_mut().unwrap();
                cur.redraws = 0;
                cur.attempts += 1;
                let attempts = cur.attempts;
                if attempts >= MAX_ATTEMPTS {
                    self.mac_give_up(node);
                } else {
                    let at = self.sys.now + self.sys.rng.range_inclusive(0, BACKOFF_MAX_US);
                    self.sys.queue.schedule(at, Ev::MacBackoff { node, tag });
                }
            }
            return;
        }
        // Clear channel: transmit.
        let (bytes, category) = {
            let cur = self.sys.macs[node].current.as_mut().unwrap();
            cur.attempts += 1;
            cur.phase = MacPhase::Transmitting;
            (
                cur.job.fif.frame.on_air_bytes(&self.sys.limits),
                cur.job.fif.wire.category,
            )
        };
        self.sys.metrics.count_frame(self.sys.now, category, bytes);
        self.sys.metrics.channel.rx_opportunities += self.radio.neighbors_of(node).len() as u64;
        let (id, end) = self.radio.begin_tx(
            node,
            bytes,
            self.sys.now,
            self.costs.bitrate_bps,
            &mut self.sys.rng,
        );
        self.tx_meta.insert(id, TxMeta::Data { node, tag });
        self.sys.queue.schedule(end, Ev::TxEnd { id });
    }

    fn mac_give_up(&mut self, node: usize) {
        let job = self.sys.macs[node].finish_current().unwrap();
        if !job.dst.is_broadcast() {
            self.with_node(node, |n, ctx| {
                n.on_mac_result(ctx, job.dst, MAX_ATTEMPTS, false)
            });
        }
        sys_mac_start_next(&mut self.sys, node);
    }

    fn on_tx_end(&mut self, id: u64) {
        let meta = self.tx_meta.remove(&id).expect("tx meta");
        let outcomes = self.radio.finish_tx(id);
        match meta {
            TxMeta::Jam => {}
            TxMeta::Ack { to, tag } => {
                for (rx, outcome) in outcomes {
                    self.count_outcome(outcome);
                    if outcome == RxOutcome::Delivered {
                        // ACKs are link frames too: they feed overhearing.
                        let tx_node = self.ack_sender_for(to, tag, rx);
                        if let Some(addr) = tx_node {
                            let rssi = self.radio.rssi_dbm(self.addr_to_idx[&addr.0], rx);
                            self.with_node(rx, |n, ctx| n.on_overhear(ctx, addr, rssi));
                        }
                        if rx == to {
                            self.sys.queue.schedule(self.sys.now, Ev::AckRx { node: to, tag });
                        }
                    }
                }
            }
            TxMeta::Data { node, tag } => {
                let (fif, dst, category, broadcast) = {
                    let cur = self.sys.macs[node].current.as_ref().unwrap();
                    (
                        cur.job.fif.clone(),
                        cur.job.dst,
                        cur.job.fif.wire.category,
                        cur.job.dst.is_broadcast(),
                    )
                };
                let tx_addr = self.nodes[node].addr();
                for (rx, outcome) in outcomes {
                    self.count_outcome(outcome);
                    if outcome != RxOutcome::Delivered {
                        continue;
                    }
                    let rssi = self.radio.rssi_dbm(node, rx);
                    self.with_node(rx, |n, ctx| n.on_overhear(ctx, tx_addr, rssi));
                    let rx_addr = self.nodes[rx].addr();
                    if broadcast || dst == rx_addr {
                        self.sys.queue.schedule(
                            self.sys.now,
                            Ev::FrameRx {
                                node: rx,
                                fif: fif.clone(),
                            },
                        );
                    }
                    if !broadcast && dst == rx_addr {
                        // Immediate ACK after the turnaround; reserve the
                        // window so the receiver's own backoffs hold off.
                        let ack_air = ACK_BYTES as u64 * 8_000_000 / self.costs.bitrate_bps;
                        self.sys.macs[rx].reserved_until_us =
                            self.sys.now + TURNAROUND_US + ack_air;
                        self.sys.queue.schedule(
                            self.sys.now + TURNAROUND_US,
                            Ev::AckTx {
                                node: rx,
                                to: node,
                                tag,
                                category,
                            },
                        );
                    }
                }
                if broadcast {
                    // No acknowledgment for broadcasts.
                    self.sys.macs[node].finish_current();
                    sys_mac_start_next(&mut self.sys, node);
                } else {
                    self.sys.macs[node].current.as_mut().unwrap().phase = MacPhase::AwaitingAck;
                    self.sys.queue.schedule(
                        self.sys.now + ACK_TIMEOUT_US,
                        Ev::AckTimeout { node, tag },
                    );
                }
            }
        }
    }

    /// Address of the node that acked (for overhearing): the ACK's
    /// transmitter is the unicast destination of the data frame the
    /// awaiting node sent.
    fn ack_sender_for(&self, awaiting: usize, tag: u64, _rx: usize) -> Option<ShortAddr> {
        self.sys.macs[awaiting]
            .current
            .as_ref()
            .filter(|c| c.tag == tag)
            .map(|c| c.job.dst)
    }

    fn count_outcome(&mut self, outcome: RxOutcome) {
        match outcome {
            RxOutcome::Delivered => self.sys.metrics.channel.delivered += 1,
            RxOutcome::LostToDraw => self.sys.metrics.channel.lost_to_draw += 1,
            RxOutcome::Collided => self.sys.metrics.channel.collided += 1,
        }
    }

    fn on_ack_tx(&mut self, node: usize, to: usize, tag: u64, category: Category) {
        if self.radio.transmitting(node, self.sys.now) {
            self.sys.metrics.diag(DropCause::AckSkipped);
            return;
        }
        self.sys
            .metrics
            .count_frame(self.sys.now, category, ACK_BYTES);
        self.sys.metrics.channel.rx_opportunities += self.radio.neighbors_of(node).len() as u64;
        let (id, end) = self.radio.begin_tx(
            node,
            ACK_BYTES,
            self.sys.now,
            self.costs.bitrate_bps,
            &mut self.sys.rng,
        );
        self.tx_meta.insert(id, TxMeta::Ack { to, tag });
        self.sys.queue.schedule(end, Ev::TxEnd { id });
    }

    fn on_ack_rx(&mut self, node: usize, tag: u64) {
        if !self.sys.macs[node].is_current(tag, MacPhase::AwaitingAck) {
            return;
        }
        let attempts = self.sys.macs[node].current.as_ref().unwrap().attempts;
        let job = self.sys.macs[node].finish_current().unwrap();
        self.with_node(node, |n, ctx| n.on_mac_result(ctx, job.dst, attempts, true));
        sys_mac_start_next(&mut self.sys, node);
    }

    fn on_ack_timeout(&mut self, node: usize, tag: u64) {
        if !self.sys.macs[node].is_current(tag, MacPhase::AwaitingAck) {
            return;
        }
        let attempts = self.sys.macs[node].current.as_ref().unwrap().attempts;
        if attempts >= MAX_ATTEMPTS {
            self.mac_give_up(node);
        } else {
            let cur = self.sys.macs[node].current.as_mut().unwrap();
            cur.phase = MacPhase::Backoff;
            cur.redraws = 0;
            let at = self.sys.now + self.sys.rng.range_inclusive(0, BACKOFF_MAX_US);
            self.sys.queue.schedule(at, Ev::MacBackoff { node, tag });
        }
    }

    // ------------------------------------------------------------------
    // External hosts
    // ------------------------------------------------------------------

    fn on_server_deliver(&mut self, wire: Rc<Wire>, trace: Vec<u16>) {
        // The UDP server echoes the same payload back to the source.
        let Body::Echo(echo) = &wire.body else {
            return;
        };
        if echo.is_reply {
            return;
        }
        self.sys.next_dgram_id += 1;
        let mut window = [0u8; 16];
        window[0] = 1;
        window[1..5].copy_from_slice(&echo.seq.to_be_bytes());
        window[5..7].copy_from_slice(&echo.sender.0.to_be_bytes());
        let reply = Rc::new(Wire {
            meta: Datagram {
                id: self.sys.next_dgram_id,
                src: Host::ExternalServer,
                dst: wire.meta.src,
                kind: DatagramKind::UdpData,
                app_payload_len: wire.meta.app_payload_len,
                compressed_header_len: COMPRESSED_HDR_BYTES,
                created_at_us: self.sys.now,
                window: PayloadWindow::from_payload(&window, 16),
            },
            body: Body::Echo(EchoBody {
                is_reply: true,
                seq: echo.seq,
                sender: echo.sender,
                req_path: trace,
            }),
            category: Category::Data,
        });
        let at = self.sys.now + self.sys.ext_link_us;
        self.sys.queue.schedule(
            at,
            Ev::ExtDeliver {
                dest: ExtDest::Border,
                wire: reply,
                trace: Vec::new(),
            },
        );
    }

    // ------------------------------------------------------------------
    // Controller driver
    // ------------------------------------------------------------------

    fn ctl_send(&mut self, tx: Transmit, category: Category) {
        self.ctl_send_after(tx, category, 0);
    }

    /// Send after an extra delay beyond the external-link latency. Used
    /// to emit a response behind the path installs it depends on: frames
    /// entering the mesh in order stay in order (FIFO MAC queues), so the
    /// response never overtakes its pushes.
    fn ctl_send_after(&mut self, tx: Transmit, category: Category, extra_us: u64) {
        self.sys.next_dgram_id += 1;
        let wire = Rc::new(Wire {
            meta: Datagram {
                id: self.sys.next_dgram_id,
                src: Host::Controller,
                dst: tx.dst,
                kind: DatagramKind::Sbi,
                app_payload_len: tx.msg.encoded_len(),
                compressed_header_len: COMPRESSED_HDR_BYTES,
                created_at_us: self.sys.now,
                window: PayloadWindow::from_payload(&tx.msg.payload, 16),
            },
            body: Body::Sbi(tx.msg),
            category,
        });
        let at = self.sys.now + extra_us + self.sys.ext_link_us;
        self.sys.queue.schedule(
            at,
            Ev::ExtDeliver {
                dest: ExtDest::Border,
                wire,
                trace: Vec::new(),
            },
        );
    }

    /// Spacing between successive controller PUT initiations; a sweep of
    /// the whole network would otherwise flood the mesh in one instant.
    const PUSH_SPACING_US: u64 = 150_000;

    /// Delay to apply to a response sent behind `n` pushes.
    fn after_pushes(n: usize) -> u64 {
        if n == 0 {
            0
        } else {
            n as u64 * Self::PUSH_SPACING_US + 50_000
        }
    }

    fn send_pushes(&mut self, pushes: Vec<Push>) {
        for (k, (node, entries)) in pushes.into_iter().enumerate() {
            let at = self.sys.now + k as u64 * Self::PUSH_SPACING_US;
            self.sys.queue.schedule(at, Ev::CtlPush { node, entries });
        }
    }

    fn ctl_push_now(&mut self, node: ShortAddr, entries: Vec<crate::flow::FlowEntry>) {
        let payload = codec::encode_flow_entry_set(&entries);
        let (exchange, tx, deadline) = self.ctl_endpoint.start_request(
            self.sys.now,
            Host::Node(node),
            Code::Put,
            &["flow-table"],
            payload,
        );
        self.ctl_pending.insert(exchange, CtlPurpose::Push);
        self.sys
            .queue
            .schedule(deadline, Ev::CtlDeadline { exchange });
        self.ctl_send(tx, Category::FlowPut);
    }

    fn on_controller_deliver(&mut self, wire: Rc<Wire>) {
        let Body::Sbi(msg) = &wire.body else {
            return;
        };
        let from = wire.meta.src;
        match self.ctl_endpoint.on_message(self.sys.now, from, msg) {
            Inbound::Request(req) => self.ctl_handle_request(from, req),
            Inbound::ResendCached(tx) => self.ctl_send(tx, Category::OtherSbi),
            Inbound::Response { exchange, .. } => {
                self.ctl_pending.remove(&exchange);
            }
            Inbound::DuplicateIgnored | Inbound::Unmatched => {}
        }
    }

    fn ctl_handle_request(&mut self, from: Host, req: sbi::SbiMessage) {
        use sbi::ResourceOp;
        let now = self.sys.now;
        match sbi::dispatch(sbi::EndpointRole::Controller, &req.uri_path, req.code) {
            Err(code) => {
                let tx = self.ctl_endpoint.make_response(from, &req, code, Vec::new());
                self.ctl_send(tx, Category::OtherSbi);
            }
            Ok(ResourceOp::NetworkPost) => match codec::decode_topology_report(&req.payload) {
                Err(_) => {
                    let tx = self.ctl_endpoint.make_response(
                        from,
                        &req,
                        Code::InternalError,
                        Vec::new(),
                    );
                    self.ctl_send(tx, Category::TopologyUpdate);
                }
                Ok(report) => {
                    let result = self.controller.handle_network_post(&report, now);
                    let delay = Self::after_pushes(result.pushes.len());
                    self.send_pushes(result.pushes);
                    let payload = result
                        .config
                        .map(|c| codec::encode_node_config(&c))
                        .unwrap_or_default();
                    let tx = self
                        .ctl_endpoint
                        .make_response(from, &req, Code::Changed, payload);
                    self.ctl_send_after(tx, Category::TopologyUpdate, delay);
                }
            },
            Ok(ResourceOp::FlowEnginePost) => {
                match codec::decode_table_miss_report(&req.payload) {
                    Err(_) => {
                        let tx = self.ctl_endpoint.make_response(
                            from,
                            &req,
                            Code::InternalError,
                            Vec::new(),
                        );
                        self.ctl_send(tx, Category::TableMissResp);
                    }
                    Ok(report) => match self.controller.handle_flow_engine_post(&report, now) {
                        #[allow(unused_variables)]
                        FlowEnginePostResult::Ok { response, pushes } => {
                            #[cfg(feature = "trace-ctl")]
                            eprintln!("t={} miss from {:?} body {:?} -> {} entries {} pushes", now, report.node, report.body, response.len(), pushes.len());
                            self.send_pushes(pushes);
                            let payload = codec::encode_flow_entry_set(&response);
                            let tx = self
                                .ctl_endpoint
                                .make_response(from, &req, Code::Content, payload);
                            self.ctl_send(tx, Category::TableMissResp);
                        }
                        FlowEnginePostResult::NotFound => {
                            #[cfg(feature = "trace-ctl")]
                            eprintln!("t={} miss REJECTED from {:?} body {:?} final={:?} fresh_src={} ", now, report.node, report.body, self.controller.miss_final(&report), self.controller.graph.node_fresh(report.node, now));
                            let tx = self.ctl_endpoint.make_response(
                                from,
                                &req,
                                Code::NotFound,
                                Vec::new(),
                            );
                            self.ctl_send(tx, Category::TableMissResp);
                        }
                    },
                }
            }
            Ok(ResourceOp::FlowEngineGet) => {
                let (code, payload) = match codec::decode_addr_query(&req.payload) {
                    Err(_) => (Code::InternalError, Vec::new()),
                    Ok(addr) => (
                        Code::Content,
                        codec::encode_flow_entry_set(
                            &self.controller.handle_flow_engine_get(addr, now),
                        ),
                    ),
                };
                let tx = self.ctl_endpoint.make_response(from, &req, code, payload);
                self.ctl_send(tx, Category::OtherSbi);
            }
            // Node-side resources are not served by the controller.
            Ok(_) => {
                let tx = self
                    .ctl_endpoint
                    .make_response(from, &req, Code::NotFound, Vec::new());
                self.ctl_send(tx, Category::OtherSbi);
            }
        }
    }

    fn on_ctl_deadline(&mut self, exchange: ExchangeId) {
        if !self.ctl_pending.contains_key(&exchange) {
            return;
        }
        match self.ctl_endpoint.on_deadline(self.sys.now, exchange) {
            RetxOutcome::Retransmit(tx, next) => {
                self.sys.queue.schedule(next, Ev::CtlDeadline { exchange });
                self.ctl_send(tx, Category::FlowPut);
            }
            RetxOutcome::TimedOut => {
                self.ctl_pending.remove(&exchange);
                self.sys.metrics.diag(DropCause::PushTimeout);
            }
            RetxOutcome::Obsolete => {
                self.ctl_pending.remove(&exchange);
            }
        }
    }
}

/// Run one replica of `scenario` in the given mode. The replica seed is
/// `base_seed + replica_index`.
pub fn run_replica(scenario: &Scenario, mode: Mode, replica_index: u32) -> Metrics {
    let seed = scenario.run.base_seed + replica_index as u64;
    World::new(scenario, mode, seed).run()
}
