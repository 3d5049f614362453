//! CoAP-lite southbound interface: message sub-layer and resource dispatch.
//!
//! The message sub-layer provides confirmable exchanges with stop-and-wait
//! retransmission (base timeout 2 s doubling up to 4 retransmissions),
//! duplicate detection per (peer, message id), and piggybacked responses:
//! a response always rides the ACK of the request that produced it.
//!
//! The [`Endpoint`] owns no timers and no transport. Callers transmit the
//! messages it hands back and call [`Endpoint::on_deadline`] when a
//! retransmission deadline they scheduled fires; this keeps the state
//! machine testable outside the simulator.

pub mod codec;

use std::collections::BTreeMap;
use std::fmt;

use crate::packet::Host;

/// CoAP message types.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MsgKind {
    Con,
    Non,
    Ack,
    Rst,
}

/// Request methods and the response codes the SBI uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Code {
    Get,
    Post,
    Put,
    Delete,
    /// 2.05
    Content,
    /// 2.04
    Changed,
    /// 2.02
    Deleted,
    /// 4.04
    NotFound,
    /// 5.00
    InternalError,
}

impl Code {
    pub fn is_request(self) -> bool {
        matches!(self, Code::Get | Code::Post | Code::Put | Code::Delete)
    }

    pub fn is_error(self) -> bool {
        matches!(self, Code::NotFound | Code::InternalError)
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Code::Get => "GET",
            Code::Post => "POST",
            Code::Put => "PUT",
            Code::Delete => "DELETE",
            Code::Content => "2.05",
            Code::Changed => "2.04",
            Code::Deleted => "2.02",
            Code::NotFound => "4.04",
            Code::InternalError => "5.00",
        };
        f.write_str(s)
    }
}

/// A southbound message. Options are size-modeled: each Uri-Path segment
/// contributes one option byte plus its length.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SbiMessage {
    pub kind: MsgKind,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    pub uri_path: Vec<String>,
    pub payload: Vec<u8>,
}

impl SbiMessage {
    /// Modeled encoded size: 4-byte base header + token + options + payload.
    pub fn encoded_len(&self) -> u16 {
        let options: usize = self.uri_path.iter().map(|s| 1 + s.len()).sum();
        (4 + self.token.len() + options + self.payload.len()) as u16
    }
}

/// Base retransmission timeout.
pub const ACK_TIMEOUT_US: u64 = 2_000_000;
/// Maximum retransmissions of a confirmable message (5 attempts total).
pub const MAX_RETRANSMISSIONS: u32 = 4;
/// How long a (peer, message id) pair stays in the dedup window.
pub const EXCHANGE_LIFETIME_US: u64 = 247_000_000;

pub type ExchangeId = u64;

/// A message to put on the wire, addressed at the IP layer.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transmit {
    pub dst: Host,
    pub msg: SbiMessage,
}

/// What [`Endpoint::on_deadline`] decided.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum RetxOutcome {
    /// Send this again and arm the new deadline.
    Retransmit(Transmit, u64),
    /// Attempts exhausted; the exchange failed.
    TimedOut,
    /// The exchange already completed; nothing to do.
    Obsolete,
}

/// Effects of an inbound message.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Inbound {
    /// A fresh request: the caller must produce a response via
    /// [`Endpoint::make_response`].
    Request(SbiMessage),
    /// A duplicate request whose cached response should be re-sent.
    ResendCached(Transmit),
    /// A duplicate request still being processed; nothing to send.
    DuplicateIgnored,
    /// A response correlated with one of our outstanding exchanges.
    Response {
        exchange: ExchangeId,
        msg: SbiMessage,
    },
    /// An ACK or response that matched nothing (late retransmission).
    Unmatched,
}

struct OutstandingExchange {
    dst: Host,
    msg: SbiMessage,
    retransmissions: u32,
    timeout_us: u64,
}

struct DedupEntry {
    seen_at_us: u64,
    cached_response: Option<SbiMessage>,
}

/// One side of the southbound interface (a node or the controller).
pub struct Endpoint {
    next_message_id: u16,
    next_token: u16,
    next_exchange: ExchangeId,
    outstanding: BTreeMap<ExchangeId, OutstandingExchange>,
    dedup: BTreeMap<(Host, u16), DedupEntry>,
}

impl Default for Endpoint {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Endpoint {
    /// `id_salt` offsets the message-id/token sequences so distinct
    /// endpoints do not start aligned.
    pub fn new(id_salt: u16) -> Self {
        Endpoint {
            next_message_id: id_salt,
            next_token: id_salt.wrapping_mul(3),
            next_exchange: 0,
            outstanding: BTreeMap::new(),
            dedup: BTreeMap::new(),
        }
    }

    pub fn outstanding_count(&self) -> usize {
        self.outstanding.len()
    }

    /// Build and register a confirmable request. Returns the exchange id,
    /// the message to transmit, and the first retransmission deadline.
    pub fn start_request(
        &mut self,
        now_us: u64,
        dst: Host,
        code: Code,
        uri_path: &[&str],
        payload: Vec<u8>,
    ) -> (ExchangeId, Transmit, u64) {
        let message_id = self.next_message_id;
        self.next_message_id = self.next_message_id.wrapping_add(1);
        let token = self.next_token.to_be_bytes().to_vec();
        self.next_token = self.next_token.wrapping_add(1);
        let msg = SbiMessage {
            kind: MsgKind::Con,
            code,
            message_id,
            token,
            uri_path: uri_path.iter().map(|s| s.to_string()).collect(),
            payload,
        };
        let id = self.next_exchange;
        self.next_exchange += 1;
        self.outstanding.insert(
            id,
            OutstandingExchange {
                dst,
                msg: msg.clone(),
                retransmissions: 0,
                timeout_us: ACK_TIMEOUT_US,
            },
        );
        let deadline = now_us + ACK_TIMEOUT_US;
        (id, Transmit { dst, msg }, deadline)
    }

    /// A retransmission deadline fired. The timeout doubles after every
    /// retransmission; after the last one the exchange fails.
    pub fn on_deadline(&mut self, now_us: u64, id: ExchangeId) -> RetxOutcome {
        let ex = match self.outstanding.get_mut(&id) {
            Some(ex) => ex,
            None => return RetxOutcome::Obsolete,
        };
        if ex.retransmissions >= MAX_RETRANSMISSIONS {
            self.outstanding.remove(&id);
            return RetxOutcome::TimedOut;
        }
        ex.retransmissions += 1;
        ex.timeout_us *= 2;
        let deadline = now_us + ex.timeout_us;
        RetxOutcome::Retransmit(
            Transmit {
                dst: ex.dst,
                msg: ex.msg.clone(),
            },
            deadline,
        )
    }

    /// Process an inbound message from `from`.
    pub fn on_message(&mut self, now_us: u64, from: Host, msg: &SbiMessage) -> Inbound {
        self.purge_dedup(now_us);
        match msg.kind {
            MsgKind::Con | MsgKind::Non if msg.code.is_request() => {
                let key = (from, msg.message_id);
                if let Some(entry) = self.dedup.get(&key) {
                    if now_us - entry.seen_at_us <= EXCHANGE_LIFETIME_US {
                        return match &entry.cached_response {
                            Some(resp) => Inbound::ResendCached(Transmit {
                                dst: from,
                                msg: resp.clone(),
                            }),
                            None => Inbound::DuplicateIgnored,
                        };
                    }
                }
                self.dedup.insert(
                    key,
                    DedupEntry {
                        seen_at_us: now_us,
                        cached_response: None,
                    },
                );
                Inbound::Request(msg.clone())
            }
            MsgKind::Ack => {
                // Correlate by token; the ACK also carries the message id
                // of the CON it acknowledges.
                let found = self
                    .outstanding
                    .iter()
                    .find(|(_, ex)| {
                        ex.msg.token == msg.token && ex.msg.message_id == msg.message_id
                    })
                    .map(|(id, _)| *id);
                match found {
                    Some(id) => {
                        self.outstanding.remove(&id);
                        Inbound::Response {
                            exchange: id,
                            msg: msg.clone(),
                        }
                    }
                    None => Inbound::Unmatched,
                }
            }
            _ => Inbound::Unmatched,
        }
    }

    /// Build the piggybacked response for a previously delivered request
    /// and cache it for duplicate suppression.
    pub fn make_response(
        &mut self,
        req_from: Host,
        req: &SbiMessage,
        code: Code,
        payload: Vec<u8>,
    ) -> Transmit {
        let resp = SbiMessage {
            kind: MsgKind::Ack,
            code,
            message_id: req.message_id,
            token: req.token.clone(),
            uri_path: Vec::new(),
            payload,
        };
        if let Some(entry) = self.dedup.get_mut(&(req_from, req.message_id)) {
            entry.cached_response = Some(resp.clone());
        }
        Transmit {
            dst: req_from,
            msg: resp,
        }
    }

    fn purge_dedup(&mut self, now_us: u64) {
        self.dedup
            .retain(|_, e| now_us - e.seen_at_us <= EXCHANGE_LIFETIME_US);
    }
}

/// Which end of the SBI a dispatcher serves.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EndpointRole {
    Controller,
    Node,
}

/// The resource operations reachable over the SBI.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ResourceOp {
    NetworkPost,
    FlowEngineGet,
    FlowEnginePost,
    FlowTableGet,
    FlowTablePut,
    FlowTableDelete,
    UpdatePeriodGet,
    UpdatePeriodPost,
    KeyFeatureGet,
    KeyFeaturePost,
    NeighborsGet,
}

/// Route a request by (uri path, method). Unknown paths and disallowed
/// methods both map to 4.04.
pub fn dispatch(role: EndpointRole, uri_path: &[String], code: Code) -> Result<ResourceOp, Code> {
    if uri_path.len() != 1 {
        return Err(Code::NotFound);
    }
    let op = match (role, uri_path[0].as_str(), code) {
        (EndpointRole::Controller, "network", Code::Post) => ResourceOp::NetworkPost,
        (EndpointRole::Controller, "flow-engine", Code::Get) => ResourceOp::FlowEngineGet,
        (EndpointRole::Controller, "flow-engine", Code::Post) => ResourceOp::FlowEnginePost,
        (EndpointRole::Node, "flow-table", Code::Get) => ResourceOp::FlowTableGet,
        (EndpointRole::Node, "flow-table", Code::Put) => ResourceOp::FlowTablePut,
        (EndpointRole::Node, "flow-table", Code::Delete) => ResourceOp::FlowTableDelete,
        (EndpointRole::Node, "update-period", Code::Get) => ResourceOp::UpdatePeriodGet,
        (EndpointRole::Node, "update-period", Code::Post) => ResourceOp::UpdatePeriodPost,
        (EndpointRole::Node, "key-feature", Code::Get) => ResourceOp::KeyFeatureGet,
        (EndpointRole::Node, "key-feature", Code::Post) => ResourceOp::KeyFeaturePost,
        (EndpointRole::Node, "neighbors", Code::Get) => ResourceOp::NeighborsGet,
        _ => return Err(Code::NotFound),
    };
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::ShortAddr;

    const CLIENT: Host = Host::Node(ShortAddr(3));
    const SERVER: Host = Host::Controller;

    fn request(ep: &mut Endpoint, now: u64) -> (ExchangeId, Transmit, u64) {
        ep.start_request(now, SERVER, Code::Post, &["network"], vec![1, 2, 3])
    }

    #[test]
    fn encoded_len_model() {
        let msg = SbiMessage {
            kind: MsgKind::Con,
            code: Code::Post,
            message_id: 7,
            token: vec![0, 1],
            uri_path: vec!["network".into()],
            payload: vec![0; 10],
        };
        // 4 base + 2 token + (1 + 7) options + 10 payload.
        assert_eq!(msg.encoded_len(), 24);
    }

    #[test]
    fn lossless_exchange_single_transmission() {
        let mut client = Endpoint::new(1);
        let mut server = Endpoint::new(2);
        let (id, tx, _deadline) = request(&mut client, 0);
        match server.on_message(10, CLIENT, &tx.msg) {
            Inbound::Request(req) => {
                let resp = server.make_response(CLIENT, &req, Code::Changed, vec![]);
                match client.on_message(20, SERVER, &resp.msg) {
                    Inbound::Response { exchange, msg } => {
                        assert_eq!(exchange, id);
                        assert_eq!(msg.code, Code::Changed);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(client.outstanding_count(), 0);
    }

    #[test]
    fn retransmission_schedule_2_4_8_16() {
        let mut client = Endpoint::new(1);
        let (id, _tx, d0) = request(&mut client, 0);
        assert_eq!(d0, 2_000_000);
        let mut now = d0;
        let mut deadlines = Vec::new();
        loop {
            match client.on_deadline(now, id) {
                RetxOutcome::Retransmit(_, next) => {
                    deadlines.push(next - now);
                    now = next;
                }
                RetxOutcome::TimedOut => break,
                RetxOutcome::Obsolete => panic!("lost exchange"),
            }
        }
        assert_eq!(deadlines, vec![4_000_000, 8_000_000, 16_000_000, 32_000_000]);
        // Total elapsed: 2 + 4 + 8 + 16 + 32 = 62 s.
        assert_eq!(now, 62_000_000);
    }

    #[test]
    fn success_after_two_losses() {
        let mut client = Endpoint::new(1);
        let mut server = Endpoint::new(2);
        let (id, _tx1, d1) = request(&mut client, 0);
        // First two transmissions lost; third arrives.
        let r1 = client.on_deadline(d1, id);
        let RetxOutcome::Retransmit(_tx2, d2) = r1 else {
            panic!()
        };
        let RetxOutcome::Retransmit(tx3, _d3) = client.on_deadline(d2, id) else {
            panic!()
        };
        assert!(d2 >= 6_000_000);
        let Inbound::Request(req) = server.on_message(d2 + 1, CLIENT, &tx3.msg) else {
            panic!()
        };
        let resp = server.make_response(CLIENT, &req, Code::Changed, vec![]);
        let Inbound::Response { exchange, .. } = client.on_message(d2 + 2, SERVER, &resp.msg)
        else {
            panic!()
        };
        assert_eq!(exchange, id);
    }

    #[test]
    fn duplicate_request_runs_handler_once() {
        let mut server = Endpoint::new(2);
        let req = SbiMessage {
            kind: MsgKind::Con,
            code: Code::Post,
            message_id: 100,
            token: vec![9],
            uri_path: vec!["network".into()],
            payload: vec![],
        };
        let mut handler_runs = 0;
        // First delivery.
        if let Inbound::Request(r) = server.on_message(0, CLIENT, &req) {
            handler_runs += 1;
            server.make_response(CLIENT, &r, Code::Changed, vec![]);
        }
        // Second delivery: cached response is re-sent, handler not run.
        match server.on_message(1000, CLIENT, &req) {
            Inbound::ResendCached(tx) => {
                assert_eq!(tx.msg.message_id, 100);
                assert_eq!(tx.msg.kind, MsgKind::Ack);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(handler_runs, 1);
    }

    #[test]
    fn distinct_message_ids_are_fresh() {
        let mut server = Endpoint::new(2);
        for mid in [1u16, 2] {
            let req = SbiMessage {
                kind: MsgKind::Con,
                code: Code::Post,
                message_id: mid,
                token: vec![mid as u8],
                uri_path: vec!["network".into()],
                payload: vec![],
            };
            assert!(matches!(
                server.on_message(0, CLIENT, &req),
                Inbound::Request(_)
            ));
        }
    }

    #[test]
    fn dedup_expires_after_lifetime() {
        let mut server = Endpoint::new(2);
        let req = SbiMessage {
            kind: MsgKind::Con,
            code: Code::Post,
            message_id: 5,
            token: vec![1],
            uri_path: vec!["network".into()],
            payload: vec![],
        };
        assert!(matches!(server.on_message(0, CLIENT, &req), Inbound::Request(_)));
        // Within the window: duplicate.
        assert!(matches!(
            server.on_message(EXCHANGE_LIFETIME_US, CLIENT, &req),
            Inbound::DuplicateIgnored
        ));
        // After expiry: fresh again.
        assert!(matches!(
            server.on_message(2 * EXCHANGE_LIFETIME_US + 1, CLIENT, &req),
            Inbound::Request(_)
        ));
    }

    #[test]
    fn dispatch_routes_and_rejects() {
        let p = |s: &str| vec![s.to_string()];
        assert_eq!(
            dispatch(EndpointRole::Node, &p("neighbors"), Code::Get),
            Ok(ResourceOp::NeighborsGet)
        );
        assert_eq!(
            dispatch(EndpointRole::Node, &p("flow-table"), Code::Delete),
            Ok(ResourceOp::FlowTableDelete)
        );
        assert_eq!(
            dispatch(EndpointRole::Controller, &p("no-such"), Code::Post),
            Err(Code::NotFound)
        );
        // Disallowed method maps to 4.04 as well.
        assert_eq!(
            dispatch(EndpointRole::Node, &p("neighbors"), Code::Post),
            Err(Code::NotFound)
        );
    }
}
