//! Software-defined forwarding for 6LoWPAN networks.
//!
//! This crate implements two complete protocol stacks over a shared
//! 802.15.4-scale link model, together with a deterministic discrete-event
//! simulator that compares them:
//!
//! * an SDN stack that forwards frames below the IP layer (6LoWPAN
//!   mesh-under) according to a prioritized flow table populated by a
//!   centralized controller over a CoAP-style southbound interface, and
//! * a baseline RPL storing-mode stack that forwards reassembled datagrams
//!   at the IP layer (route-over).
//!
//! Module map:
//!
//! * [`packet`] — frames, 6LoWPAN mesh/fragment headers, fragmentation and
//!   reassembly with exact on-air size accounting.
//! * [`flow`] — the flow table: rules over frame bit-windows, sequential
//!   actions, per-entry statistics and TTL expiry.
//! * [`sbi`] — CoAP-lite message sub-layer (confirmable exchanges, dedup,
//!   stop-and-wait retransmission) and the canonical CBOR-subset payload
//!   codec for the southbound resources.
//! * [`node`] — the per-node stack: SDN sub-layer, local controller,
//!   RPL-lite DODAG maintenance, and the storing-mode baseline.
//! * [`controller`] — global topology graph, ETX Dijkstra, flow-entry
//!   synthesis and distribution.
//! * [`sim`] — seeded discrete-event engine, UDGM channel, CSMA/CA MAC,
//!   traffic generation and metrics collection.
//! * [`scenario`] — scenario file parsing and validation.
//! * [`experiment`] — replica orchestration, CSV reports, mode comparison.

pub mod controller;
pub mod experiment;
pub mod flow;
pub mod node;
pub mod packet;
pub mod sbi;
pub mod scenario;
pub mod sim;
