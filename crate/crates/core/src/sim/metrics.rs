//! Per-replica measurement collection.
//!
//! Every transmitted frame is attributed to exactly one traffic category;
//! counters are split into the warmup window and the steady window by the
//! frame's transmission start time. RTT samples are classified by their
//! request's send time.

use std::collections::BTreeMap;

/// Traffic categories. Everything except `Data` counts as control traffic.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Category {
    Dio,
    Dao,
    TopologyUpdate,
    TableMissReq,
    TableMissResp,
    FlowPut,
    OtherSbi,
    Data,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Dio,
        Category::Dao,
        Category::TopologyUpdate,
        Category::TableMissReq,
        Category::TableMissResp,
        Category::FlowPut,
        Category::OtherSbi,
        Category::Data,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Dio => "dio",
            Category::Dao => "dao",
            Category::TopologyUpdate => "topology_update",
            Category::TableMissReq => "table_miss_req",
            Category::TableMissResp => "table_miss_resp",
            Category::FlowPut => "flow_put",
            Category::OtherSbi => "other_sbi",
            Category::Data => "data",
        }
    }

    pub fn is_control(self) -> bool {
        self != Category::Data
    }
}

/// Why a frame or datagram was dropped (or another noteworthy anomaly).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum DropCause {
    /// hops-left reached zero after the decrement.
    HopsExhausted,
    /// Miss queue at capacity; tail-dropped the newest frame.
    MissQueueFull,
    /// Flow-engine request timed out; buffered frames dropped.
    MissTimeout,
    /// Flow-engine request answered with an error; buffered frames dropped.
    MissRejected,
    /// An SBI or re-dispatched frame missed; such frames are not queued.
    MissDisallowed,
    /// No preferred parent / DODAG root known yet.
    NoRoute,
    /// Flow table rejected an install.
    TableFull,
    /// Unicast failed after all MAC attempts.
    MacFailed,
    /// Reassembly buffer outlived its timeout.
    ReassemblyStale,
    /// Fragments disagreed on the datagram size.
    ReassemblyError,
    /// Baseline routing table at capacity.
    RouteCapacity,
    /// A matched plan set no disposition.
    NoDisposition,
    /// Modify/Decrement/Increment on an absent field was skipped.
    ActionFieldAbsent,
    /// A Drop action discarded the frame (policy, not an error).
    RuleDrop,
    /// Topology update exchange timed out.
    TopoUpdateTimeout,
    /// Datagram delivered to a node that is neither its destination nor
    /// the border router.
    Misrouted,
    /// Receiver was busy transmitting when its MAC ACK was due.
    AckSkipped,
    /// Flow entries removed by TTL expiry.
    FlowExpired,
    /// A controller push exchange timed out.
    PushTimeout,
    /// MAC transmit queue overflowed; the newest frame was dropped.
    MacQueueFull,
}

impl DropCause {
    pub fn label(self) -> &'static str {
        match self {
            DropCause::HopsExhausted => "hops_exhausted",
            DropCause::MissQueueFull => "miss_queue_full",
            DropCause::MissTimeout => "miss_timeout",
            DropCause::MissRejected => "miss_rejected",
            DropCause::MissDisallowed => "miss_disallowed",
            DropCause::NoRoute => "no_route",
            DropCause::TableFull => "table_full",
            DropCause::MacFailed => "mac_failed",
            DropCause::ReassemblyStale => "reassembly_stale",
            DropCause::ReassemblyError => "reassembly_error",
            DropCause::RouteCapacity => "route_capacity",
            DropCause::NoDisposition => "no_disposition",
            DropCause::ActionFieldAbsent => "action_field_absent",
            DropCause::RuleDrop => "rule_drop",
            DropCause::TopoUpdateTimeout => "topo_update_timeout",
            DropCause::Misrouted => "misrouted",
            DropCause::AckSkipped => "ack_skipped",
            DropCause::FlowExpired => "flow_expired",
            DropCause::PushTimeout => "push_timeout",
            DropCause::MacQueueFull => "mac_queue_full",
        }
    }
}

/// One application-level round trip.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RttSample {
    pub send_time_us: u64,
    pub rtt_us: u64,
    /// Sender node address.
    pub src: u16,
    /// Peer node address, or 0 for the external server.
    pub dst: u16,
    /// Radio hops the request took (external links excluded).
    pub req_hops: u16,
    /// Radio hops the reply took.
    pub rep_hops: u16,
    /// Node sequence of the request path, source to destination.
    pub req_path: Vec<u16>,
}

#[derive(Clone, Copy, Default, Debug)]
pub struct CatCounter {
    pub frames: u64,
    pub bytes: u64,
}

/// Per-(transmission, in-range receiver) channel outcomes, for the
/// conservation check.
#[derive(Clone, Copy, Default, Debug)]
pub struct ChannelOutcomes {
    pub transmissions: u64,
    /// Sum over transmissions of in-range receiver counts; every
    /// opportunity resolves to exactly one of the three outcomes below.
    pub rx_opportunities: u64,
    pub delivered: u64,
    pub lost_to_draw: u64,
    pub collided: u64,
}

pub struct Metrics {
    pub warmup_us: u64,
    warmup: BTreeMap<Category, CatCounter>,
    steady: BTreeMap<Category, CatCounter>,
    pub rtt: Vec<RttSample>,
    pub diags: BTreeMap<DropCause, u64>,
    pub miss_requests_warmup: u64,
    pub miss_requests_steady: u64,
    /// DAO datagrams created over the whole run (zero in SDN mode).
    pub dao_datagrams_created: u64,
    pub channel: ChannelOutcomes,
    /// Deepest MAC transmit queue observed (bookkeeping, not serialized).
    pub max_mac_queue: usize,
}

impl Metrics {
    pub fn new(warmup_us: u64) -> Self {
        Metrics {
            warmup_us,
            warmup: BTreeMap::new(),
            steady: BTreeMap::new(),
            rtt: Vec::new(),
            diags: BTreeMap::new(),
            miss_requests_warmup: 0,
            miss_requests_steady: 0,
            dao_datagrams_created: 0,
            channel: ChannelOutcomes::default(),
            max_mac_queue: 0,
        }
    }

    fn window(&mut self, at_us: u64) -> &mut BTreeMap<Category, CatCounter> {
        if at_us < self.warmup_us {
            &mut self.warmup
        } else {
            &mut self.steady
        }
    }

    pub fn count_frame(&mut self, at_us: u64, category: Category, bytes: u16) {
        let c = self.window(at_us).entry(category).or_default();
        c.frames += 1;
        c.bytes += bytes as u64;
        self.channel.transmissions += 1;
    }

    pub fn miss_request(&mut self, at_us: u64) {
        if at_us < self.warmup_us {
            self.miss_requests_warmup += 1;
        } else {
            self.miss_requests_steady += 1;
        }
    }

    pub fn rtt_sample(&mut self, s: RttSample) {
        self.rtt.push(s);
    }

    pub fn diag(&mut self, cause: DropCause) {
        *self.diags.entry(cause).or_insert(0) += 1;
    }

    pub fn counter(&self, steady: bool, cat: Category) -> CatCounter {
        let m = if steady { &self.steady } else { &self.warmup };
        m.get(&cat).copied().unwrap_or_default()
    }

    pub fn control_bytes(&self, steady: bool) -> u64 {
        Category::ALL
            .iter()
            .filter(|c| c.is_control())
            .map(|c| self.counter(steady, *c).bytes)
            .sum()
    }

    pub fn control_frames(&self, steady: bool) -> u64 {
        Category::ALL
            .iter()
            .filter(|c| c.is_control())
            .map(|c| self.counter(steady, *c).frames)
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        Category::ALL
            .iter()
            .map(|c| self.counter(false, *c).bytes + self.counter(true, *c).bytes)
            .sum()
    }

    /// RTT samples whose request was sent in the steady window.
    pub fn steady_rtt(&self) -> impl Iterator<Item = &RttSample> {
        self.rtt.iter().filter(|s| s.send_time_us >= self.warmup_us)
    }
}
