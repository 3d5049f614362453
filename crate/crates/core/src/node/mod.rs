//! The per-node protocol stack.
//!
//! In SDN mode a node runs: the SDN sub-layer (flow-table forwarding below
//! IP, with bypass for self-addressed frames and RPL messages), the local
//! controller (bootstrap rules, topology updates, table-miss handling over
//! the SBI), and RPL-lite for upward connectivity. In baseline mode it
//! runs RPL storing mode with route-over forwarding instead.
//!
//! Node logic is driven entirely through [`NodeCtx`], which the simulator
//! (or a test harness) implements: nodes never touch the event queue, the
//! channel, or the clock directly.

pub mod neighbors;
pub mod rpl;

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use crate::flow::{
    self, Action, Disposition, FieldSelector, FlowEntry, FlowTable, InstallOutcome,
    KeyFeatureSpec, MatchOutcome, Rule,
};
use crate::packet::{
    fragment, Datagram, DatagramKind, Frame, Host, LinkLimits, MeshHeader, PayloadWindow,
    Reassembler, ReassemblyOutcome, ShortAddr,
};
use crate::sbi::codec::{
    self, MissBody, NeighborReport, TableMissReport, TopologyReport,
};
use crate::sbi::{self, Code, Endpoint, ExchangeId, Inbound, RetxOutcome, Transmit};
use crate::sim::metrics::{Category, DropCause, RttSample};

use neighbors::NeighborTable;
use rpl::{Rpl, RoutingTable};

/// Modeled compressed IPv6+UDP header size for data and SBI datagrams.
pub const COMPRESSED_HDR_BYTES: u16 = 10;
/// Battery level reported in topology updates (no energy model).
pub const BATTERY_LEVEL: u8 = 100;
/// Priority of locally installed one-hop neighbor rules.
pub const ONE_HOP_PRIORITY: u16 = 20;
/// Priority of the locally installed upstream rule.
pub const UPSTREAM_PRIORITY: u16 = 250;
/// Window after joining (or booting, for the border router) in which the
/// first topology report fires: late enough that the one-hop neighborhood
/// has been overheard through its first two trickle intervals.
pub const FIRST_REPORT_MIN_US: u64 = 20_000_000;
pub const FIRST_REPORT_MAX_US: u64 = 30_000_000;
/// IPv6 hop limit applied to route-over forwarding. Storing-mode routing
/// can loop transiently (a stale downward route against the default-up
/// rule); the hop limit bounds the damage like real IP forwarding does.
pub const ROUTE_OVER_HOP_LIMIT: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    Sender,
    Forwarder,
    BorderRouter,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Sdn,
    RplBaseline,
}

/// Where a sender's periodic traffic goes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TrafficDst {
    None,
    Server,
    Peer(ShortAddr),
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub addr: ShortAddr,
    pub role: Role,
    pub mode: Mode,
    pub traffic: TrafficDst,
    pub payload_bytes: u16,
    pub update_period_s: u32,
    pub key_features: KeyFeatureSpec,
    pub miss_queue_cap: usize,
    pub default_ttl_s: u32,
    pub flow_capacity: usize,
    pub routing_capacity: usize,
    pub dao_period_s: u32,
    pub limits: LinkLimits,
    pub t_proc_mesh_us: u64,
    pub t_proc_routeover_base_us: u64,
    pub t_proc_routeover_per_frag_us: u64,
}

/// Structured content riding a datagram. Sizes are modeled by the datagram
/// metadata; the body is what handlers act on.
#[derive(Clone, Debug)]
pub enum Body {
    Dio { sender_rank: u16, root: ShortAddr },
    Dao { advertised: Vec<ShortAddr> },
    Sbi(sbi::SbiMessage),
    Echo(EchoBody),
}

#[derive(Clone, Debug)]
pub struct EchoBody {
    pub is_reply: bool,
    pub seq: u32,
    /// The node that originated the request (identifies the flow).
    pub sender: ShortAddr,
    /// Filled by the replier: node sequence the request traversed.
    pub req_path: Vec<u16>,
}

/// A datagram plus its body and metrics category.
#[derive(Clone, Debug)]
pub struct Wire {
    pub meta: Datagram,
    pub body: Body,
    pub category: Category,
}

/// A frame traveling the radio, with its datagram and transmit trace.
#[derive(Clone, Debug)]
pub struct FrameInFlight {
    pub frame: Frame,
    pub wire: Rc<Wire>,
    /// Addresses of the nodes that transmitted this frame so far.
    pub trace: Vec<u16>,
}

/// Timers a node can arm; delivered back via `on_timer`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeTimer {
    TrickleFire { gen: u64 },
    TrickleInterval { gen: u64 },
    TopologyUpdate { gen: u64 },
    DaoCycle,
    TrafficSend,
    SbiDeadline { exchange: ExchangeId },
}

/// Everything a node may ask of its environment.
pub trait NodeCtx {
    fn now_us(&self) -> u64;
    /// Uniform draw in `[lo, hi]` inclusive.
    fn rand_range(&mut self, lo: u64, hi: u64) -> u64;
    fn next_datagram_id(&mut self) -> u64;
    /// Hand a frame to the MAC after `delay_us` of local processing.
    fn send_frame(&mut self, delay_us: u64, fif: FrameInFlight);
    /// Border router only: push a datagram onto the external link.
    fn gateway_out(&mut self, wire: Rc<Wire>, trace: Vec<u16>);
    fn schedule(&mut self, at_us: u64, timer: NodeTimer);
    fn diag(&mut self, cause: DropCause);
    fn rtt_sample(&mut self, sample: RttSample);
    /// A table-miss request was initiated.
    fn miss_request(&mut self);
}

enum SbiPurpose {
    TopologyReport,
    MissRequest { key: Vec<u64> },
}

struct MissState {
    queue: VecDeque<(Vec<u64>, FrameInFlight)>,
    outstanding: BTreeMap<Vec<u64>, ExchangeId>,
}

struct AppState {
    next_seq: u32,
    pending: BTreeMap<u32, u64>,
}

pub struct Node {
    pub cfg: NodeConfig,
    pub neighbors: NeighborTable,
    pub rpl: Rpl,
    pub flow: FlowTable,
    pub routes: RoutingTable,
    pub sbi: Endpoint,
    reasm: Reassembler,
    miss: MissState,
    app: AppState,
    pending_sbi: BTreeMap<ExchangeId, SbiPurpose>,
    bootstrap_retry: bool,
    topo_timer_armed: bool,
    topo_gen: u64,
}

impl Node {
    pub fn new(cfg: NodeConfig) -> Self {
        let rpl = if cfg.role == Role::BorderRouter {
            Rpl::new_root(cfg.addr)
        } else {
            Rpl::new_node()
        };
        Node {
            neighbors: NeighborTable::default(),
            rpl,
            flow: FlowTable::with_capacity(cfg.flow_capacity),
            routes: RoutingTable::new(cfg.routing_capacity, cfg.dao_period_s),
            sbi: Endpoint::new(cfg.addr.0),
            reasm: Reassembler::default(),
            miss: MissState {
                queue: VecDeque::new(),
                outstanding: BTreeMap::new(),
            },
            app: AppState {
                next_seq: 0,
                pending: BTreeMap::new(),
            },
            pending_sbi: BTreeMap::new(),
            bootstrap_retry: false,
            topo_timer_armed: false,
            topo_gen: 0,
            cfg,
        }
    }

    pub fn addr(&self) -> ShortAddr {
        self.cfg.addr
    }

    fn is_border(&self) -> bool {
        self.cfg.role == Role::BorderRouter
    }

    /// Called once at simulation start.
    pub fn start(&mut self, ctx: &mut dyn NodeCtx) {
        if self.is_border() {
            self.start_trickle_interval(ctx);
            if self.cfg.mode == Mode::Sdn {
                // The border router reports too (over the external link):
                // the controller cannot compute any downward path until it
                // knows the root's out-edges.
                self.topo_timer_armed = true;
                let gen = self.topo_gen;
                let at = ctx.now_us() + ctx.rand_range(FIRST_REPORT_MIN_US, FIRST_REPORT_MAX_US);
                ctx.schedule(at, NodeTimer::TopologyUpdate { gen });
            }
        }
        if self.cfg.traffic != TrafficDst::None {
            // First transmission offset uniform in [0, period].
            let period = ctx.rand_range(30_000_000, 90_000_000);
            let offset = ctx.rand_range(0, period);
            ctx.schedule(ctx.now_us() + offset, NodeTimer::TrafficSend);
        }
    }

    // ------------------------------------------------------------------
    // Timers
    // ------------------------------------------------------------------

    pub fn on_timer(&mut self, ctx: &mut dyn NodeCtx, timer: NodeTimer) {
        match timer {
            NodeTimer::TrickleFire { gen } => {
                if gen == self.rpl.trickle_gen && self.rpl.joined() {
                    self.emit_dio(ctx);
                }
            }
            NodeTimer::TrickleInterval { gen } => {
                if gen == self.rpl.trickle_gen {
                    self.rpl.grow_interval();
                    self.start_trickle_interval(ctx);
                }
            }
            NodeTimer::TopologyUpdate { gen } => self.on_topology_update(ctx, gen),
            NodeTimer::DaoCycle => self.on_dao_cycle(ctx),
            NodeTimer::TrafficSend => self.on_traffic_send(ctx),
            NodeTimer::SbiDeadline { exchange } => self.on_sbi_deadline(ctx, exchange),
        }
    }

    fn start_trickle_interval(&mut self, ctx: &mut dyn NodeCtx) {
        let now = ctx.now_us();
        let i = self.rpl.interval_us;
        let gen = self.rpl.trickle_gen;
        // Fire at a random point in the second half of the interval.
        let fire = now + ctx.rand_range(i / 2, i - 1);
        ctx.schedule(fire, NodeTimer::TrickleFire { gen });
        ctx.schedule(now + i, NodeTimer::TrickleInterval { gen });
    }

    fn emit_dio(&mut self, ctx: &mut dyn NodeCtx) {
        let Some(root) = self.rpl.root_addr else {
            return;
        };
        let meta = Datagram {
            id: ctx.next_datagram_id(),
            src: Host::Node(self.cfg.addr),
            dst: Host::Node(ShortAddr::BROADCAST),
            kind: DatagramKind::RplDio,
            app_payload_len: rpl::DIO_BYTES,
            compressed_header_len: 0,
            created_at_us: ctx.now_us(),
            window: PayloadWindow::empty(),
        };
        let wire = Rc::new(Wire {
            meta,
            body: Body::Dio {
                sender_rank: self.rpl.rank,
                root,
            },
            category: Category::Dio,
        });
        self.broadcast_wire(ctx, wire);
    }

    fn broadcast_wire(&mut self, ctx: &mut dyn NodeCtx, wire: Rc<Wire>) {
        let frames = fragment(
            &wire.meta,
            None,
            &self.cfg.limits,
            self.cfg.addr,
            ShortAddr::BROADCAST,
        )
        .expect("control datagram fits");
        for frame in frames {
            ctx.send_frame(
                0,
                FrameInFlight {
                    frame,
                    wire: wire.clone(),
                    trace: Vec::new(),
                },
            );
        }
    }

    fn on_topology_update(&mut self, ctx: &mut dyn NodeCtx, gen: u64) {
        if self.cfg.mode != Mode::Sdn || gen != self.topo_gen {
            return;
        }
        if !self.rpl.joined() {
            // Not joined yet; try again shortly.
            ctx.schedule(
                ctx.now_us() + 10_000_000,
                NodeTimer::TopologyUpdate { gen },
            );
            return;
        }
        self.refresh_bootstrap(ctx);
        let report = TopologyReport {
            node: self.cfg.addr,
            battery_level: BATTERY_LEVEL,
            update_period_s: self.cfg.update_period_s,
            neighbors: self
                .neighbors
                .iter()
                .map(|r| NeighborReport {
                    addr: r.addr,
                    rssi_dbm: r.rssi_dbm,
                    etx_x128: r.etx_x128,
                })
                .collect(),
        };
        let payload = codec::encode_topology_report(&report);
        let (exchange, tx, deadline) = self.sbi.start_request(
            ctx.now_us(),
            Host::Controller,
            Code::Post,
            &["network"],
            payload,
        );
        self.pending_sbi.insert(exchange, SbiPurpose::TopologyReport);
        self.sbi_send(ctx, tx, Category::TopologyUpdate);
        ctx.schedule(deadline, NodeTimer::SbiDeadline { exchange });
        // Next report: the period with +/-10% jitter.
        let p = self.cfg.update_period_s as u64 * 1_000_000;
        let next = ctx.rand_range(p * 9 / 10, p * 11 / 10);
        ctx.schedule(ctx.now_us() + next, NodeTimer::TopologyUpdate { gen });
    }

    /// The update period changed: invalidate the armed timer and start a
    /// fresh cycle at the new period.
    fn reschedule_topology_updates(&mut self, ctx: &mut dyn NodeCtx) {
        self.topo_gen += 1;
        let gen = self.topo_gen;
        let p = self.cfg.update_period_s as u64 * 1_000_000;
        let next = ctx.rand_range(p * 9 / 10, p * 11 / 10);
        ctx.schedule(ctx.now_us() + next, NodeTimer::TopologyUpdate { gen });
    }

    fn on_dao_cycle(&mut self, ctx: &mut dyn NodeCtx) {
        if self.cfg.mode != Mode::RplBaseline || self.is_border() {
            return;
        }
        if let Some(parent) = self.rpl.preferred_parent {
            let mut advertised = vec![self.cfg.addr];
            advertised.extend(self.routes.destinations());
            let meta = Datagram {
                id: ctx.next_datagram_id(),
                src: Host::Node(self.cfg.addr),
                dst: Host::Node(parent),
                kind: DatagramKind::RplDao,
                app_payload_len: rpl::DAO_BYTES,
                compressed_header_len: 0,
                created_at_us: ctx.now_us(),
                window: PayloadWindow::empty(),
            };
            let wire = Rc::new(Wire {
                meta,
                body: Body::Dao { advertised },
                category: Category::Dao,
            });
            let frames = fragment(&wire.meta, None, &self.cfg.limits, self.cfg.addr, parent)
                .expect("dao fits");
            for frame in frames {
                ctx.send_frame(
                    0,
                    FrameInFlight {
                        frame,
                        wire: wire.clone(),
                        trace: Vec::new(),
                    },
                );
            }
        }
        let p = self.cfg.dao_period_s as u64 * 1_000_000;
        ctx.schedule(ctx.now_us() + p, NodeTimer::DaoCycle);
    }

    fn on_traffic_send(&mut self, ctx: &mut dyn NodeCtx) {
        let dst = match self.cfg.traffic {
            TrafficDst::None => return,
            TrafficDst::Server => Host::ExternalServer,
            TrafficDst::Peer(a) => Host::Node(a),
        };
        let seq = self.app.next_seq;
        self.app.next_seq += 1;
        let now = ctx.now_us();
        self.app.pending.insert(seq, now);
        let wire = Rc::new(self.make_echo_wire(
            ctx,
            dst,
            seq,
            false,
            self.cfg.addr,
            Vec::new(),
            self.cfg.payload_bytes,
        ));
        self.send_datagram(ctx, wire);
        let period = ctx.rand_range(30_000_000, 90_000_000);
        ctx.schedule(now + period, NodeTimer::TrafficSend);
    }

    #[allow(clippy::too_many_arguments)]
    fn make_echo_wire(
        &self,
        ctx: &mut dyn NodeCtx,
        dst: Host,
        seq: u32,
        is_reply: bool,
        sender: ShortAddr,
        req_path: Vec<u16>,
        payload_len: u16,
    ) -> Wire {
        let mut window = [0u8; 16];
        window[0] = is_reply as u8;
        window[1..5].copy_from_slice(&seq.to_be_bytes());
        window[5..7].copy_from_slice(&sender.0.to_be_bytes());
        Wire {
            meta: Datagram {
                id: ctx.next_datagram_id(),
                src: Host::Node(self.cfg.addr),
                dst,
                kind: DatagramKind::UdpData,
                app_payload_len: payload_len,
                compressed_header_len: COMPRESSED_HDR_BYTES,
                created_at_us: ctx.now_us(),
                window: PayloadWindow::from_payload(
                    &window,
                    self.cfg.limits.window_bytes as usize,
                ),
            },
            body: Body::Echo(EchoBody {
                is_reply,
                seq,
                sender,
                req_path,
            }),
            category: Category::Data,
        }
    }

    // ------------------------------------------------------------------
    // Receive path
    // ------------------------------------------------------------------

    /// A frame addressed to this node (or broadcast) was received.
    pub fn on_frame(&mut self, ctx: &mut dyn NodeCtx, fif: FrameInFlight) {
        match fif.wire.meta.kind {
            // RPL messages bypass the flow table in both modes.
            DatagramKind::RplDio => {
                if let Body::Dio { sender_rank, root } = fif.wire.body {
                    self.on_dio(ctx, fif.frame.mac_src, sender_rank, root);
                }
                return;
            }
            DatagramKind::RplDao => {
                if let Body::Dao { ref advertised } = fif.wire.body {
                    let child = fif.frame.mac_src;
                    let now = ctx.now_us();
                    for a in advertised {
                        if *a != self.cfg.addr && !self.routes.learn(*a, child, now) {
                            ctx.diag(DropCause::RouteCapacity);
                        }
                    }
                }
                return;
            }
            _ => {}
        }
        match self.cfg.mode {
            Mode::Sdn => self.sdn_receive(ctx, fif),
            Mode::RplBaseline => self.baseline_receive(ctx, fif),
        }
    }

    fn sdn_receive(&mut self, ctx: &mut dyn NodeCtx, fif: FrameInFlight) {
        let self_final = fif
            .frame
            .mesh
            .is_none_or(|m| m.final_dest == self.cfg.addr);
        if self_final {
            // Bypass: self-addressed frames go straight up, without
            // consuming a flow-table lookup.
            self.local_delivery(ctx, fif);
        } else {
            let delay = self.cfg.t_proc_mesh_us;
            self.sdn_process(ctx, fif, true, delay);
        }
    }

    fn local_delivery(&mut self, ctx: &mut dyn NodeCtx, fif: FrameInFlight) {
        match self.reasm.push(&fif.frame, &fif.wire.meta, ctx.now_us()) {
            Ok(ReassemblyOutcome::Complete(_)) => {
                self.deliver_datagram(ctx, fif.wire.clone(), fif.trace)
            }
            Ok(ReassemblyOutcome::Incomplete) => {}
            Ok(ReassemblyOutcome::Stale) => ctx.diag(DropCause::ReassemblyStale),
            Err(_) => ctx.diag(DropCause::ReassemblyError),
        }
    }

    /// Run a frame through the flow table and execute the outcome.
    fn sdn_process(
        &mut self,
        ctx: &mut dyn NodeCtx,
        mut fif: FrameInFlight,
        allow_miss: bool,
        delay_us: u64,
    ) {
        match self.flow.lookup(&fif.frame) {
            MatchOutcome::TableMiss => self.handle_table_miss(ctx, fif, allow_miss),
            MatchOutcome::Matched(plan) => {
                let (disposition, diags) = flow::apply_actions(&mut fif.frame, &plan);
                for d in diags {
                    ctx.diag(match d {
                        flow::ActionDiag::FieldAbsentSkipped => DropCause::ActionFieldAbsent,
                        flow::ActionDiag::NoDisposition => DropCause::NoDisposition,
                    });
                }
                match disposition {
                    Disposition::Forward(next) => {
                        if fif.frame.mesh.is_some_and(|m| m.hops_left == 0) {
                            ctx.diag(DropCause::HopsExhausted);
                            return;
                        }
                        fif.frame.mac_src = self.cfg.addr;
                        fif.frame.mac_dst = next;
                        ctx.send_frame(delay_us, fif);
                    }
                    Disposition::Broadcast => {
                        fif.frame.mac_src = self.cfg.addr;
                        fif.frame.mac_dst = ShortAddr::BROADCAST;
                        ctx.send_frame(delay_us, fif);
                    }
                    Disposition::ToUpper => self.local_delivery(ctx, fif),
                    Disposition::Dropped => {
                        // Explicit Drop is policy, not an error; the
                        // no-disposition case was already diagnosed.
                        if plan.contains(&Action::Drop) {
                            ctx.diag(DropCause::RuleDrop);
                        }
                    }
                }
            }
        }
    }

    fn baseline_receive(&mut self, ctx: &mut dyn NodeCtx, fif: FrameInFlight) {
        // Route-over: every hop reassembles before forwarding.
        match self.reasm.push(&fif.frame, &fif.wire.meta, ctx.now_us()) {
            Ok(ReassemblyOutcome::Complete(_)) => {}
            Ok(ReassemblyOutcome::Incomplete) => return,
            Ok(ReassemblyOutcome::Stale) => {
                ctx.diag(DropCause::ReassemblyStale);
                return;
            }
            Err(_) => {
                ctx.diag(DropCause::ReassemblyError);
                return;
            }
        }
        let wire = fif.wire.clone();
        let for_me = wire.meta.dst == Host::Node(self.cfg.addr);
        let external = !matches!(wire.meta.dst, Host::Node(_));
        if for_me || (external && self.is_border()) {
            self.deliver_datagram(ctx, wire, fif.trace);
        } else if fif.trace.len() >= ROUTE_OVER_HOP_LIMIT {
            ctx.diag(DropCause::HopsExhausted);
        } else {
            self.baseline_forward(ctx, wire, fif.trace, true);
        }
    }

    /// Route-over next-hop selection and (re-)fragmentation. Forwarding
    /// pays the per-hop processing cost; origination does not.
    fn baseline_forward(
        &mut self,
        ctx: &mut dyn NodeCtx,
        wire: Rc<Wire>,
        trace: Vec<u16>,
        forwarding: bool,
    ) {
        let next = match wire.meta.dst {
            Host::Node(a) => self.routes.next_hop(a).or(self.rpl.preferred_parent),
            // External destinations ride the DODAG up to the border router.
            _ => self.rpl.preferred_parent,
        };
        let Some(next) = next else {
            ctx.diag(DropCause::NoRoute);
            return;
        };
        let frames = match fragment(&wire.meta, None, &self.cfg.limits, self.cfg.addr, next) {
            Ok(f) => f,
            Err(_) => {
                ctx.diag(DropCause::NoRoute);
                return;
            }
        };
        let delay = if forwarding {
            self.cfg.t_proc_routeover_base_us
                + self.cfg.t_proc_routeover_per_frag_us * frames.len() as u64
        } else {
            0
        };
        for frame in frames {
            ctx.send_frame(
                delay,
                FrameInFlight {
                    frame,
                    wire: wire.clone(),
                    trace: trace.clone(),
                },
            );
        }
    }

    fn on_dio(&mut self, ctx: &mut dyn NodeCtx, sender: ShortAddr, sender_rank: u16, root: ShortAddr) {
        use rpl::DioOutcome;
        match self.rpl.on_dio(sender, sender_rank, root, &self.neighbors) {
            DioOutcome::None | DioOutcome::RankRefreshed => {}
            DioOutcome::Joined => {
                self.start_trickle_interval(ctx);
                match self.cfg.mode {
                    Mode::Sdn => {
                        self.refresh_bootstrap(ctx);
                        if !self.topo_timer_armed {
                            // First report only after the early trickle
                            // waves: reporting sooner would hand the
                            // controller a neighbor list of one.
                            self.topo_timer_armed = true;
                            let gen = self.topo_gen;
                            let at = ctx.now_us()
                                + ctx.rand_range(FIRST_REPORT_MIN_US, FIRST_REPORT_MAX_US);
                            ctx.schedule(at, NodeTimer::TopologyUpdate { gen });
                        }
                    }
                    Mode::RplBaseline => {
                        let offset =
                            ctx.rand_range(0, self.cfg.dao_period_s as u64 * 1_000_000 - 1);
                        ctx.schedule(ctx.now_us() + offset, NodeTimer::DaoCycle);
                    }
                }
            }
            DioOutcome::ParentChanged => {
                self.start_trickle_interval(ctx);
                if self.cfg.mode == Mode::Sdn {
                    self.refresh_bootstrap(ctx);
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Overhearing and MAC feedback
    // ------------------------------------------------------------------

    /// Any successfully decodable frame updates the transmitter's record,
    /// addressed to us or not.
    pub fn on_overhear(&mut self, ctx: &mut dyn NodeCtx, tx_addr: ShortAddr, rssi_dbm: i16) {
        let new = self.neighbors.overhear(tx_addr, rssi_dbm, ctx.now_us());
        if new && self.cfg.mode == Mode::Sdn {
            self.install_one_hop(ctx, tx_addr);
        }
    }

    /// The MAC finished a unicast: `attempts` transmissions, delivered or
    /// not. Failures count as one attempt beyond the maximum.
    pub fn on_mac_result(
        &mut self,
        ctx: &mut dyn NodeCtx,
        dst: ShortAddr,
        attempts: u32,
        delivered: bool,
    ) {
        let reported = if delivered { attempts } else { attempts + 1 };
        self.neighbors.etx_update(dst, reported, ctx.now_us());
        self.rpl.refresh_rank(&self.neighbors);
        if !delivered {
            ctx.diag(DropCause::MacFailed);
        }
    }

    // ------------------------------------------------------------------
    // SDN bootstrap rules
    // ------------------------------------------------------------------

    fn install_one_hop(&mut self, ctx: &mut dyn NodeCtx, nbr: ShortAddr) {
        let ttl = 2 * self.cfg.update_period_s;
        let entry = FlowEntry::new(
            ONE_HOP_PRIORITY,
            vec![Rule::field_eq(FieldSelector::MeshFinal, nbr.0 as u64)],
            vec![
                Action::Decrement {
                    field: FieldSelector::MeshHopsLeft,
                    value: 1,
                },
                Action::Forward { next_hop: nbr },
            ],
            ttl,
        );
        if self.flow.install(entry, ctx.now_us()) == InstallOutcome::Rejected {
            self.bootstrap_retry = true;
            ctx.diag(DropCause::TableFull);
        }
    }

    /// (Re-)install the local rules: one-hop entries for every neighbor
    /// and the upstream rule forwarding root-addressed traffic to the
    /// preferred parent. Replacement-in-place refreshes TTLs and, on a
    /// parent change, the upstream next hop.
    fn refresh_bootstrap(&mut self, ctx: &mut dyn NodeCtx) {
        self.bootstrap_retry = false;
        let nbrs: Vec<ShortAddr> = self.neighbors.iter().map(|r| r.addr).collect();
        for nbr in nbrs {
            self.install_one_hop(ctx, nbr);
        }
        let (Some(parent), Some(root)) = (self.rpl.preferred_parent, self.rpl.root_addr) else {
            return;
        };
        let ttl = 2 * self.cfg.update_period_s;
        let entry = FlowEntry::new(
            UPSTREAM_PRIORITY,
            vec![Rule::field_eq(FieldSelector::MeshFinal, root.0 as u64)],
            vec![
                Action::Decrement {
                    field: FieldSelector::MeshHopsLeft,
                    value: 1,
                },
                Action::Forward { next_hop: parent },
            ],
            ttl,
        );
        if self.flow.install(entry, ctx.now_us()) == InstallOutcome::Rejected {
            self.bootstrap_retry = true;
            ctx.diag(DropCause::TableFull);
        }
    }

    // ------------------------------------------------------------------
    // Origination
    // ------------------------------------------------------------------

    /// Send a locally created datagram using the active stack.
    pub fn send_datagram(&mut self, ctx: &mut dyn NodeCtx, wire: Rc<Wire>) {
        match self.cfg.mode {
            Mode::Sdn => {
                let final_dest = match wire.meta.dst {
                    Host::Node(a) => a,
                    // External hosts sit behind the border router.
                    _ => match self.rpl.root_addr {
                        Some(r) => r,
                        None => {
                            ctx.diag(DropCause::NoRoute);
                            return;
                        }
                    },
                };
                if final_dest == self.cfg.addr {
                    // Degenerate self-addressed datagram.
                    self.deliver_datagram(ctx, wire, vec![self.cfg.addr.0]);
                    return;
                }
                let mesh = MeshHeader::new(self.cfg.addr, final_dest);
                let frames = match fragment(
                    &wire.meta,
                    Some(mesh),
                    &self.cfg.limits,
                    self.cfg.addr,
                    self.cfg.addr,
                ) {
                    Ok(f) => f,
                    Err(_) => {
                        ctx.diag(DropCause::NoRoute);
                        return;
                    }
                };
                let allow_miss = wire.meta.kind == DatagramKind::UdpData;
                for frame in frames {
                    self.sdn_process(
                        ctx,
                        FrameInFlight {
                            frame,
                            wire: wire.clone(),
                            trace: Vec::new(),
                        },
                        allow_miss,
                        0,
                    );
                }
            }
            Mode::RplBaseline => self.baseline_forward(ctx, wire, Vec::new(), false),
        }
    }

    /// Border router: a datagram arrived over the external link and must
    /// enter the mesh (or be consumed locally).
    pub fn gateway_inject(&mut self, ctx: &mut dyn NodeCtx, wire: Rc<Wire>, trace: Vec<u16>) {
        debug_assert!(self.is_border());
        match wire.meta.dst {
            Host::Node(a) if a == self.cfg.addr => self.deliver_datagram(ctx, wire, trace),
            Host::Node(_) => self.send_datagram(ctx, wire),
            // Controller-to-server traffic does not exist; anything else
            // external terminates here.
            _ => ctx.diag(DropCause::Misrouted),
        }
    }

    // ------------------------------------------------------------------
    // Upper layer
    // ------------------------------------------------------------------

    fn deliver_datagram(&mut self, ctx: &mut dyn NodeCtx, wire: Rc<Wire>, trace: Vec<u16>) {
        let mine = wire.meta.dst == Host::Node(self.cfg.addr);
        if !mine {
            if self.is_border() {
                let mut t = trace;
                t.push(self.cfg.addr.0);
                ctx.gateway_out(wire, t);
            } else {
                ctx.diag(DropCause::Misrouted);
            }
            return;
        }
        match &wire.body {
            Body::Sbi(msg) => self.sbi_inbound(ctx, wire.meta.src, msg.clone()),
            Body::Echo(echo) => self.app_deliver(ctx, &wire, echo.clone(), trace),
            Body::Dio { .. } | Body::Dao { .. } => {}
        }
    }

    fn app_deliver(
        &mut self,
        ctx: &mut dyn NodeCtx,
        wire: &Wire,
        echo: EchoBody,
        trace: Vec<u16>,
    ) {
        if !echo.is_reply {
            // Act as the UDP echo server: same payload back to the source.
            let mut req_path = trace;
            req_path.push(self.cfg.addr.0);
            // Echo semantics: the reply carries the same payload size.
            let reply = Rc::new(self.make_echo_wire(
                ctx,
                wire.meta.src,
                echo.seq,
                true,
                echo.sender,
                req_path,
                wire.meta.app_payload_len,
            ));
            self.send_datagram(ctx, reply);
            return;
        }
        let Some(send_time) = self.app.pending.remove(&echo.seq) else {
            return;
        };
        let now = ctx.now_us();
        let dst_label = match wire.meta.src {
            Host::Node(a) => a.0,
            _ => 0,
        };
        ctx.rtt_sample(RttSample {
            send_time_us: send_time,
            rtt_us: now - send_time,
            src: self.cfg.addr.0,
            dst: dst_label,
            req_hops: echo.req_path.len().saturating_sub(1) as u16,
            rep_hops: trace.len() as u16,
            req_path: echo.req_path,
        });
    }

    // ------------------------------------------------------------------
    // SBI plumbing
    // ------------------------------------------------------------------

    fn sbi_send(&mut self, ctx: &mut dyn NodeCtx, tx: Transmit, category: Category) {
        let wire = Rc::new(Wire {
            meta: Datagram {
                id: ctx.next_datagram_id(),
                src: Host::Node(self.cfg.addr),
                dst: tx.dst,
                kind: DatagramKind::Sbi,
                app_payload_len: tx.msg.encoded_len(),
                compressed_header_len: COMPRESSED_HDR_BYTES,
                created_at_us: ctx.now_us(),
                window: PayloadWindow::from_payload(
                    &tx.msg.payload,
                    self.cfg.limits.window_bytes as usize,
                ),
            },
            body: Body::Sbi(tx.msg),
            category,
        });
        if self.is_border() && wire.meta.dst == Host::Controller {
            ctx.gateway_out(wire, vec![self.cfg.addr.0]);
        } else {
            self.send_datagram(ctx, wire);
        }
    }

    fn sbi_inbound(&mut self, ctx: &mut dyn NodeCtx, from: Host, msg: sbi::SbiMessage) {
        match self.sbi.on_message(ctx.now_us(), from, &msg) {
            Inbound::Request(req) => self.handle_resource(ctx, from, req),
            Inbound::ResendCached(tx) => self.sbi_send(ctx, tx, Category::OtherSbi),
            Inbound::Response { exchange, msg } => self.on_sbi_response(ctx, exchange, msg),
            Inbound::DuplicateIgnored | Inbound::Unmatched => {}
        }
    }

    fn handle_resource(&mut self, ctx: &mut dyn NodeCtx, from: Host, req: sbi::SbiMessage) {
        use sbi::ResourceOp;
        let (code, payload, category) =
            match sbi::dispatch(sbi::EndpointRole::Node, &req.uri_path, req.code) {
                Err(e) => (e, Vec::new(), Category::OtherSbi),
                Ok(ResourceOp::FlowTablePut) => {
                    match codec::decode_flow_entry_set(&req.payload) {
                        Err(_) => (Code::InternalError, Vec::new(), Category::FlowPut),
                        Ok(entries) => {
                            let now = ctx.now_us();
                            let mut rejected = false;
                            for e in entries {
                                if e.validate().is_err()
                                    || self.flow.install(e, now) == InstallOutcome::Rejected
                                {
                                    rejected = true;
                                }
                            }
                            if rejected {
                                ctx.diag(DropCause::TableFull);
                                (Code::InternalError, Vec::new(), Category::FlowPut)
                            } else {
                                (Code::Changed, Vec::new(), Category::FlowPut)
                            }
                        }
                    }
                }
                Ok(ResourceOp::FlowTableGet) => (
                    Code::Content,
                    codec::encode_flow_entry_set(self.flow.entries()),
                    Category::OtherSbi,
                ),
                Ok(ResourceOp::FlowTableDelete) => {
                    self.flow.clear();
                    // The local controller keeps upstream connectivity
                    // alive regardless of table content.
                    self.refresh_bootstrap(ctx);
                    (Code::Deleted, Vec::new(), Category::OtherSbi)
                }
                Ok(ResourceOp::UpdatePeriodGet) => (
                    Code::Content,
                    codec::encode_period(self.cfg.update_period_s),
                    Category::OtherSbi,
                ),
                Ok(ResourceOp::UpdatePeriodPost) => match codec::decode_period(&req.payload) {
                    Ok(p) if p > 0 => {
                        if p != self.cfg.update_period_s {
                            self.cfg.update_period_s = p;
                            self.reschedule_topology_updates(ctx);
                        }
                        (Code::Changed, Vec::new(), Category::OtherSbi)
                    }
                    _ => (Code::InternalError, Vec::new(), Category::OtherSbi),
                },
                Ok(ResourceOp::KeyFeatureGet) => (
                    Code::Content,
                    codec::encode_key_feature_spec(&self.cfg.key_features),
                    Category::OtherSbi,
                ),
                Ok(ResourceOp::KeyFeaturePost) => {
                    match codec::decode_key_feature_spec(&req.payload) {
                        Ok(spec) => {
                            self.cfg.key_features = spec;
                            (Code::Changed, Vec::new(), Category::OtherSbi)
                        }
                        Err(_) => (Code::InternalError, Vec::new(), Category::OtherSbi),
                    }
                }
                Ok(ResourceOp::NeighborsGet) => {
                    let report = TopologyReport {
                        node: self.cfg.addr,
                        battery_level: BATTERY_LEVEL,
                        update_period_s: self.cfg.update_period_s,
                        neighbors: self
                            .neighbors
                            .iter()
                            .map(|r| NeighborReport {
                                addr: r.addr,
                                rssi_dbm: r.rssi_dbm,
                                etx_x128: r.etx_x128,
                            })
                            .collect(),
                    };
                    (
                        Code::Content,
                        codec::encode_topology_report(&report),
                        Category::OtherSbi,
                    )
                }
                // Controller-side resources are not served by nodes.
                Ok(_) => (Code::NotFound, Vec::new(), Category::OtherSbi),
            };
        let tx = self.sbi.make_response(from, &req, code, payload);
        self.sbi_send(ctx, tx, category);
    }

    fn on_sbi_response(
        &mut self,
        ctx: &mut dyn NodeCtx,
        exchange: ExchangeId,
        msg: sbi::SbiMessage,
    ) {
        match self.pending_sbi.remove(&exchange) {
            None => {}
            Some(SbiPurpose::TopologyReport) => {
                if !msg.payload.is_empty() {
                    if let Ok(cfg) = codec::decode_node_config(&msg.payload) {
                        if cfg.update_period_s > 0
                            && cfg.update_period_s != self.cfg.update_period_s
                        {
                            self.cfg.update_period_s = cfg.update_period_s;
                            self.reschedule_topology_updates(ctx);
                        }
                        self.cfg.key_features = cfg.key_features;
                        self.cfg.default_ttl_s = cfg.default_ttl_s;
                    }
                }
            }
            Some(SbiPurpose::MissRequest { key }) => {
                self.miss.outstanding.remove(&key);
                if msg.code.is_error() {
                    self.drop_missed(ctx, &key, DropCause::MissRejected);
                    return;
                }
                let entries = match codec::decode_flow_entry_set(&msg.payload) {
                    Ok(e) => e,
                    Err(_) => {
                        self.drop_missed(ctx, &key, DropCause::MissRejected);
                        return;
                    }
                };
                let now = ctx.now_us();
                for e in entries {
                    if e.validate().is_err()
                        || self.flow.install(e, now) == InstallOutcome::Rejected
                    {
                        ctx.diag(DropCause::TableFull);
                    }
                }
                // Re-run the lookup for every frame buffered on this key.
                let mut rest = VecDeque::new();
                let mut ready = Vec::new();
                while let Some((k, f)) = self.miss.queue.pop_front() {
                    if k == key {
                        ready.push(f);
                    } else {
                        rest.push_back((k, f));
                    }
                }
                self.miss.queue = rest;
                for fif in ready {
                    // Forwarded frames pay the mesh processing cost;
                    // locally originated ones (empty trace) do not.
                    let delay = if fif.trace.is_empty() {
                        0
                    } else {
                        self.cfg.t_proc_mesh_us
                    };
                    self.sdn_process(ctx, fif, false, delay);
                }
            }
        }
    }

    fn on_sbi_deadline(&mut self, ctx: &mut dyn NodeCtx, exchange: ExchangeId) {
        if !self.pending_sbi.contains_key(&exchange) {
            return;
        }
        match self.sbi.on_deadline(ctx.now_us(), exchange) {
            RetxOutcome::Retransmit(tx, next_deadline) => {
                let category = match self.pending_sbi.get(&exchange) {
                    Some(SbiPurpose::TopologyReport) => Category::TopologyUpdate,
                    Some(SbiPurpose::MissRequest { .. }) => Category::TableMissReq,
                    None => Category::OtherSbi,
                };
                self.sbi_send(ctx, tx, category);
                ctx.schedule(next_deadline, NodeTimer::SbiDeadline { exchange });
            }
            RetxOutcome::TimedOut => match self.pending_sbi.remove(&exchange) {
                Some(SbiPurpose::TopologyReport) => ctx.diag(DropCause::TopoUpdateTimeout),
                Some(SbiPurpose::MissRequest { key }) => {
                    self.miss.outstanding.remove(&key);
                    self.drop_missed(ctx, &key, DropCause::MissTimeout);
                }
                None => {}
            },
            RetxOutcome::Obsolete => {
                self.pending_sbi.remove(&exchange);
            }
        }
    }

    fn drop_missed(&mut self, ctx: &mut dyn NodeCtx, key: &[u64], cause: DropCause) {
        let before = self.miss.queue.len();
        self.miss.queue.retain(|(k, _)| k != key);
        for _ in 0..before - self.miss.queue.len() {
            ctx.diag(cause);
        }
    }

    // ------------------------------------------------------------------
    // Table miss
    // ------------------------------------------------------------------

    fn miss_key(&self, frame: &Frame) -> (Vec<u64>, MissBody) {
        if !self.cfg.key_features.is_empty() {
            let mut values = Vec::with_capacity(self.cfg.key_features.len());
            let mut ok = true;
            for k in &self.cfg.key_features {
                match flow::extract_window(frame, k.field, k.offset_bits, k.size_bits) {
                    Ok(v) => values.push(v),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                return (values.clone(), MissBody::KeyValues(values));
            }
        }
        // No key features (or extraction failed): report the whole frame.
        let key = vec![
            frame.mesh.map_or(frame.mac_src.0, |m| m.originator.0) as u64,
            frame.mesh.map_or(frame.mac_dst.0, |m| m.final_dest.0) as u64,
        ];
        (key, MissBody::WholeFrame(codec::encode_whole_frame(frame)))
    }

    fn handle_table_miss(&mut self, ctx: &mut dyn NodeCtx, fif: FrameInFlight, allow: bool) {
        if !allow || fif.wire.meta.kind != DatagramKind::UdpData {
            // SBI frames rely on locally maintained and controller-pushed
            // entries; on a miss they are dropped and the CoAP layer's
            // retransmissions recover once the path exists.
            ctx.diag(DropCause::MissDisallowed);
            return;
        }
        if self.miss.queue.len() >= self.cfg.miss_queue_cap {
            ctx.diag(DropCause::MissQueueFull);
            return;
        }
        let (key, body) = self.miss_key(&fif.frame);
        self.miss.queue.push_back((key.clone(), fif));
        if self.miss.outstanding.contains_key(&key) {
            return;
        }
        let report = TableMissReport {
            node: self.cfg.addr,
            body,
        };
        let payload = codec::encode_table_miss_report(&report);
        let (exchange, tx, deadline) = self.sbi.start_request(
            ctx.now_us(),
            Host::Controller,
            Code::Post,
            &["flow-engine"],
            payload,
        );
        self.miss.outstanding.insert(key.clone(), exchange);
        self.pending_sbi
            .insert(exchange, SbiPurpose::MissRequest { key });
        ctx.miss_request();
        self.sbi_send(ctx, tx, Category::TableMissReq);
        ctx.schedule(deadline, NodeTimer::SbiDeadline { exchange });
    }

    // ------------------------------------------------------------------
    // Housekeeping
    // ------------------------------------------------------------------

    /// One-second maintenance tick, driven by the simulator.
    pub fn tick_1s(&mut self, ctx: &mut dyn NodeCtx) {
        for _ in self.flow.tick(1) {
            ctx.diag(DropCause::FlowExpired);
        }
        let max_age = 2 * self.cfg.update_period_s as u64 * 1_000_000;
        self.neighbors.purge(ctx.now_us(), max_age);
        for _ in 0..self.reasm.purge(ctx.now_us()) {
            ctx.diag(DropCause::ReassemblyStale);
        }
        if self.cfg.mode == Mode::RplBaseline {
            self.routes.purge(ctx.now_us());
        }
        if self.bootstrap_retry && self.cfg.mode == Mode::Sdn {
            self.refresh_bootstrap(ctx);
        }
    }

    /// Number of frames parked in the miss queue (for tests).
    pub fn miss_queue_len(&self) -> usize {
        self.miss.queue.len()
    }

    /// Outstanding miss requests (for tests).
    pub fn miss_outstanding(&self) -> usize {
        self.miss.outstanding.len()
    }

    /// Pending echo requests awaiting replies (for tests).
    pub fn app_pending(&self) -> usize {
        self.app.pending.len()
    }
}
