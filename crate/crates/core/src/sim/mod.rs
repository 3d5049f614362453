//! Deterministic seeded discrete-event simulation: UDGM radio, CSMA/CA
//! MAC, the two protocol stacks, an external UDP echo server, and the SDN
//! controller behind a fixed-latency link off the border router.
//!
//! A replica is a single-threaded event loop; identical (scenario, seed)
//! pairs replay identical event sequences. Replicas are independent and
//! may run on separate threads.

pub mod channel;
pub mod mac;
pub mod metrics;
pub mod pipeline;
pub mod queue;
pub mod rng;
pub mod world;

/// Timing costs of forwarding and the external link.
#[derive(Clone, Copy, Debug)]
pub struct CostModel {
    pub bitrate_bps: u64,
    /// Mesh-under: per forwarded fragment.
    pub t_proc_mesh_us: u64,
    /// Route-over: per forwarded datagram, plus the per-fragment part.
    pub t_proc_routeover_base_us: u64,
    pub t_proc_routeover_per_frag_us: u64,
    /// One-way latency between the border router and the controller or
    /// the external server.
    pub t_ext_link_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            bitrate_bps: 250_000,
            t_proc_mesh_us: 500,
            t_proc_routeover_base_us: 2_000,
            t_proc_routeover_per_frag_us: 1_000,
            t_ext_link_us: 5_000,
        }
    }
}
