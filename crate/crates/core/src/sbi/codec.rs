//! Canonical CBOR-subset codec for southbound payloads.
//!
//! Only the pieces of CBOR the southbound interface needs are implemented:
//! unsigned integers, byte strings, definite-length arrays, and
//! definite-length maps with unsigned keys. Encoding is canonical —
//! shortest integer forms, definite lengths, map keys in ascending order —
//! so any two encoders produce byte-identical output for equal values and
//! `encode(decode(bytes)) == bytes` for every accepted input.
//!
//! Wire schemas (all integers unsigned):
//!
//! * flow entry set: `[entry*]`, entry = `[priority, [rule*], [action*], ttl_s]`
//!   * rule = `[field, offset_bits, size_bits, op, value]`
//!   * action = `[type, field_plus_one, value, offset_bits, size_bits]`
//!     (`field_plus_one` is 0 when the action has no field operand)
//! * topology report: `[node, battery, update_period_s, [[nbr, rssi_mag, etx_x128]*]]`
//!   (`rssi_mag` is the magnitude of the negative RSSI in dBm)
//! * table-miss report: `[node, [key_value*]]` or `[node, whole_frame_bstr]`
//! * key-feature spec: `[[field, offset_bits, size_bits]*]`
//! * node config: `{0: update_period_s, 1: key_feature_spec, 2: default_ttl_s}`
//! * flow-engine GET request: `[node]`
//!
//! Field, operator and action identifiers are the declaration order of the
//! corresponding enums in [`crate::flow`], starting at zero.

use std::fmt;

use crate::flow::{
    Action, FieldSelector, FlowEntry, KeyFeature, KeyFeatureSpec, RelOp, Rule,
};
use crate::packet::ShortAddr;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CodecError(pub &'static str);

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed payload: {}", self.0)
    }
}

impl std::error::Error for CodecError {}

const MAJOR_UINT: u8 = 0;
const MAJOR_BYTES: u8 = 2;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;

pub(crate) fn put_head(out: &mut Vec<u8>, major: u8, value: u64) {
    let m = major << 5;
    if value < 24 {
        out.push(m | value as u8);
    } else if value <= 0xFF {
        out.push(m | 24);
        out.push(value as u8);
    } else if value <= 0xFFFF {
        out.push(m | 25);
        out.extend_from_slice(&(value as u16).to_be_bytes());
    } else if value <= 0xFFFF_FFFF {
        out.push(m | 26);
        out.extend_from_slice(&(value as u32).to_be_bytes());
    } else {
        out.push(m | 27);
        out.extend_from_slice(&value.to_be_bytes());
    }
}

pub(crate) fn put_uint(out: &mut Vec<u8>, v: u64) {
    put_head(out, MAJOR_UINT, v);
}

pub(crate) fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_head(out, MAJOR_BYTES, b.len() as u64);
    out.extend_from_slice(b);
}

pub(crate) fn put_array(out: &mut Vec<u8>, len: usize) {
    put_head(out, MAJOR_ARRAY, len as u64);
}

pub(crate) fn put_map(out: &mut Vec<u8>, len: usize) {
    put_head(out, MAJOR_MAP, len as u64);
}

/// Cursor over encoded bytes that rejects non-canonical forms.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn byte(&mut self) -> Result<u8, CodecError> {
        let b = *self.buf.get(self.pos).ok_or(CodecError("truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn head(&mut self) -> Result<(u8, u64), CodecError> {
        let b = self.byte()?;
        let major = b >> 5;
        let ai = b & 0x1F;
        let value = match ai {
            0..=23 => ai as u64,
            24 => {
                let v = self.byte()? as u64;
                if v < 24 {
                    return Err(CodecError("non-canonical integer"));
                }
                v
            }
            25 => {
                let v = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64;
                if v <= 0xFF {
                    return Err(CodecError("non-canonical integer"));
                }
                v
            }
            26 => {
                let v = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64;
                if v <= 0xFFFF {
                    return Err(CodecError("non-canonical integer"));
                }
                v
            }
            27 => {
                let v = u64::from_be_bytes(self.take(8)?.try_into().unwrap());
                if v <= 0xFFFF_FFFF {
                    return Err(CodecError("non-canonical integer"));
                }
                v
            }
            _ => return Err(CodecError("indefinite or reserved length")),
        };
        Ok((major, value))
    }

    pub fn uint(&mut self) -> Result<u64, CodecError> {
        let (major, v) = self.head()?;
        if major != MAJOR_UINT {
            return Err(CodecError("expected unsigned integer"));
        }
        Ok(v)
    }

    pub fn uint_max(&mut self, max: u64) -> Result<u64, CodecError> {
        let v = self.uint()?;
        if v > max {
            return Err(CodecError("integer out of range"));
        }
        Ok(v)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let (major, len) = self.head()?;
        if major != MAJOR_BYTES {
            return Err(CodecError("expected byte string"));
        }
        self.take(len as usize)
    }

    pub fn array(&mut self) -> Result<usize, CodecError> {
        let (major, len) = self.head()?;
        if major != MAJOR_ARRAY {
            return Err(CodecError("expected array"));
        }
        Ok(len as usize)
    }

    pub fn array_exact(&mut self, n: usize) -> Result<(), CodecError> {
        if self.array()? != n {
            return Err(CodecError("unexpected array length"));
        }
        Ok(())
    }

    pub fn map(&mut self) -> Result<usize, CodecError> {
        let (major, len) = self.head()?;
        if major != MAJOR_MAP {
            return Err(CodecError("expected map"));
        }
        Ok(len as usize)
    }

    pub fn peek_major(&self) -> Result<u8, CodecError> {
        self.buf
            .get(self.pos)
            .map(|b| b >> 5)
            .ok_or(CodecError("truncated"))
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CodecError("trailing bytes"))
        }
    }
}

fn field_id(f: FieldSelector) -> u64 {
    match f {
        FieldSelector::MacSrc => 0,
        FieldSelector::MacDst => 1,
        FieldSelector::MeshOrig => 2,
        FieldSelector::MeshFinal => 3,
        FieldSelector::MeshHopsLeft => 4,
        FieldSelector::FragTag => 5,
        FieldSelector::Payload => 6,
    }
}

fn field_from_id(id: u64) -> Result<FieldSelector, CodecError> {
    Ok(match id {
        0 => FieldSelector::MacSrc,
        1 => FieldSelector::MacDst,
        2 => FieldSelector::MeshOrig,
        3 => FieldSelector::MeshFinal,
        4 => FieldSelector::MeshHopsLeft,
        5 => FieldSelector::FragTag,
        6 => FieldSelector::Payload,
        _ => return Err(CodecError("unknown field selector")),
    })
}

fn op_id(op: RelOp) -> u64 {
    match op {
        RelOp::Eq => 0,
        RelOp::Neq => 1,
        RelOp::Le => 2,
        RelOp::Ge => 3,
        RelOp::Lt => 4,
        RelOp::Gt => 5,
    }
}

fn op_from_id(id: u64) -> Result<RelOp, CodecError> {
    Ok(match id {
        0 => RelOp::Eq,
        1 => RelOp::Neq,
        2 => RelOp::Le,
        3 => RelOp::Ge,
        4 => RelOp::Lt,
        5 => RelOp::Gt,
        _ => return Err(CodecError("unknown operator")),
    })
}

fn encode_rule(out: &mut Vec<u8>, r: &Rule) {
    put_array(out, 5);
    put_uint(out, field_id(r.field));
    put_uint(out, r.offset_bits as u64);
    put_uint(out, r.size_bits as u64);
    put_uint(out, op_id(r.op));
    put_uint(out, r.value);
}

fn decode_rule(rd: &mut Reader) -> Result<Rule, CodecError> {
    rd.array_exact(5)?;
    let rule = Rule {
        field: field_from_id(rd.uint()?)?,
        offset_bits: rd.uint_max(u16::MAX as u64)? as u16,
        size_bits: rd.uint_max(64)? as u8,
        op: op_from_id(rd.uint()?)?,
        value: rd.uint()?,
    };
    rule.validate().map_err(|_| CodecError("invalid rule"))?;
    Ok(rule)
}

fn encode_action(out: &mut Vec<u8>, a: &Action) {
    // [type, field_plus_one, value, offset, size]; unused operands are 0.
    let (ty, field, value, offset, size) = match a {
        Action::Forward { next_hop } => (0u64, None, next_hop.0 as u64, 0, 0),
        Action::Broadcast => (1, None, 0, 0, 0),
        Action::Modify {
            field,
            offset_bits,
            size_bits,
            value,
        } => (2, Some(*field), *value, *offset_bits as u64, *size_bits as u64),
        Action::Drop => (3, None, 0, 0, 0),
        Action::Decrement { field, value } => (4, Some(*field), *value, 0, 0),
        Action::Increment { field, value } => (5, Some(*field), *value, 0, 0),
        Action::ToUpperLayer => (6, None, 0, 0, 0),
        Action::Continue => (7, None, 0, 0, 0),
    };
    put_array(out, 5);
    put_uint(out, ty);
    put_uint(out, field.map_or(0, |f| field_id(f) + 1));
    put_uint(out, value);
    put_uint(out, offset);
    put_uint(out, size);
}

fn decode_action(rd: &mut Reader) -> Result<Action, CodecError> {
    rd.array_exact(5)?;
    let ty = rd.uint()?;
    let field_plus_one = rd.uint()?;
    let value = rd.uint()?;
    let offset = rd.uint_max(u16::MAX as u64)? as u16;
    let size = rd.uint_max(64)? as u8;
    let field = match field_plus_one {
        0 => None,
        n => Some(field_from_id(n - 1)?),
    };
    let need_field = || field.ok_or(CodecError("action missing field operand"));
    Ok(match ty {
        0 => Action::Forward {
            next_hop: ShortAddr(value as u16),
        },
        1 => Action::Broadcast,
        2 => Action::Modify {
            field: need_field()?,
            offset_bits: offset,
            size_bits: size,
            value,
        },
        3 => Action::Drop,
        4 => Action::Decrement {
            field: need_field()?,
            value,
        },
        5 => Action::Increment {
            field: need_field()?,
            value,
        },
        6 => Action::ToUpperLayer,
        7 => Action::Continue,
        _ => return Err(CodecError("unknown action type")),
    })
}

fn encode_entry(out: &mut Vec<u8>, e: &FlowEntry) {
    put_array(out, 4);
    put_uint(out, e.priority as u64);
    put_array(out, e.rules.len());
    for r in &e.rules {
        encode_rule(out, r);
    }
    put_array(out, e.actions.len());
    for a in &e.actions {
        encode_action(out, a);
    }
    put_uint(out, e.ttl_s as u64);
}

fn decode_entry(rd: &mut Reader) -> Result<FlowEntry, CodecError> {
    rd.array_exact(4)?;
    let priority = rd.uint_max(u16::MAX as u64)? as u16;
    let nrules = rd.array()?;
    let mut rules = Vec::with_capacity(nrules);
    for _ in 0..nrules {
        rules.push(decode_rule(rd)?);
    }
    let nactions = rd.array()?;
    if nactions == 0 {
        return Err(CodecError("entry without actions"));
    }
    let mut actions = Vec::with_capacity(nactions);
    for _ in 0..nactions {
        actions.push(decode_action(rd)?);
    }
    let ttl = rd.uint_max(u32::MAX as u64)? as u32;
    Ok(FlowEntry::new(priority, rules, actions, ttl))
}

/// Encode a set of flow entries (`PUT /flow-table` request body, flow
/// engine responses, `GET /flow-table` response body).
pub fn encode_flow_entry_set(entries: &[FlowEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    put_array(&mut out, entries.len());
    for e in entries {
        encode_entry(&mut out, e);
    }
    out
}

pub fn decode_flow_entry_set(bytes: &[u8]) -> Result<Vec<FlowEntry>, CodecError> {
    let mut rd = Reader::new(bytes);
    let n = rd.array()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(decode_entry(&mut rd)?);
    }
    rd.finish()?;
    Ok(out)
}

/// One neighbor as reported to the controller. RSSI is carried as the
/// magnitude of the (negative) dBm value; ETX as fixed-point x128.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NeighborReport {
    pub addr: ShortAddr,
    pub rssi_dbm: i16,
    pub etx_x128: u16,
}

/// Body of a `POST /network` topology update.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TopologyReport {
    pub node: ShortAddr,
    pub battery_level: u8,
    pub update_period_s: u32,
    pub neighbors: Vec<NeighborReport>,
}

pub fn encode_topology_report(r: &TopologyReport) -> Vec<u8> {
    let mut out = Vec::new();
    put_array(&mut out, 4);
    put_uint(&mut out, r.node.0 as u64);
    put_uint(&mut out, r.battery_level as u64);
    put_uint(&mut out, r.update_period_s as u64);
    put_array(&mut out, r.neighbors.len());
    for n in &r.neighbors {
        put_array(&mut out, 3);
        put_uint(&mut out, n.addr.0 as u64);
        put_uint(&mut out, (-n.rssi_dbm).max(0) as u64);
        put_uint(&mut out, n.etx_x128 as u64);
    }
    out
}

pub fn decode_topology_report(bytes: &[u8]) -> Result<TopologyReport, CodecError> {
    let mut rd = Reader::new(bytes);
    rd.array_exact(4)?;
    let node = ShortAddr(rd.uint_max(u16::MAX as u64)? as u16);
    let battery_level = rd.uint_max(u8::MAX as u64)? as u8;
    let update_period_s = rd.uint_max(u32::MAX as u64)? as u32;
    let n = rd.array()?;
    let mut neighbors = Vec::with_capacity(n);
    for _ in 0..n {
        rd.array_exact(3)?;
        neighbors.push(NeighborReport {
            addr: ShortAddr(rd.uint_max(u16::MAX as u64)? as u16),
            rssi_dbm: -(rd.uint_max(i16::MAX as u64)? as i16),
            etx_x128: rd.uint_max(u16::MAX as u64)? as u16,
        });
    }
    rd.finish()?;
    Ok(TopologyReport {
        node,
        battery_level,
        update_period_s,
        neighbors,
    })
}

/// Body of a `POST /flow-engine` table-miss report: either the configured
/// key-feature values or the whole triggering frame.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MissBody {
    KeyValues(Vec<u64>),
    WholeFrame(Vec<u8>),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TableMissReport {
    pub node: ShortAddr,
    pub body: MissBody,
}

pub fn encode_table_miss_report(r: &TableMissReport) -> Vec<u8> {
    let mut out = Vec::new();
    put_array(&mut out, 2);
    put_uint(&mut out, r.node.0 as u64);
    match &r.body {
        MissBody::KeyValues(vs) => {
            put_array(&mut out, vs.len());
            for v in vs {
                put_uint(&mut out, *v);
            }
        }
        MissBody::WholeFrame(b) => put_bytes(&mut out, b),
    }
    out
}

pub fn decode_table_miss_report(bytes: &[u8]) -> Result<TableMissReport, CodecError> {
    let mut rd = Reader::new(bytes);
    rd.array_exact(2)?;
    let node = ShortAddr(rd.uint_max(u16::MAX as u64)? as u16);
    let body = match rd.peek_major()? {
        2 => MissBody::WholeFrame(rd.bytes()?.to_vec()),
        4 => {
            let n = rd.array()?;
            let mut vs = Vec::with_capacity(n);
            for _ in 0..n {
                vs.push(rd.uint()?);
            }
            MissBody::KeyValues(vs)
        }
        _ => return Err(CodecError("miss body must be array or bytes")),
    };
    rd.finish()?;
    Ok(TableMissReport { node, body })
}

pub fn encode_key_feature_spec(spec: &KeyFeatureSpec) -> Vec<u8> {
    let mut out = Vec::new();
    put_key_feature_spec(&mut out, spec);
    out
}

fn put_key_feature_spec(out: &mut Vec<u8>, spec: &KeyFeatureSpec) {
    put_array(out, spec.len());
    for k in spec {
        put_array(out, 3);
        put_uint(out, field_id(k.field));
        put_uint(out, k.offset_bits as u64);
        put_uint(out, k.size_bits as u64);
    }
}

pub fn decode_key_feature_spec(bytes: &[u8]) -> Result<KeyFeatureSpec, CodecError> {
    let mut rd = Reader::new(bytes);
    let spec = read_key_feature_spec(&mut rd)?;
    rd.finish()?;
    Ok(spec)
}

fn read_key_feature_spec(rd: &mut Reader) -> Result<KeyFeatureSpec, CodecError> {
    let n = rd.array()?;
    let mut spec = Vec::with_capacity(n);
    for _ in 0..n {
        rd.array_exact(3)?;
        spec.push(KeyFeature {
            field: field_from_id(rd.uint()?)?,
            offset_bits: rd.uint_max(u16::MAX as u64)? as u16,
            size_bits: rd.uint_max(64)? as u8,
        });
    }
    Ok(spec)
}

/// Configuration parameters delivered in the first `POST /network`
/// response of a node's lifetime.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NodeConfigParams {
    pub update_period_s: u32,
    pub key_features: KeyFeatureSpec,
    pub default_ttl_s: u32,
}

pub fn encode_node_config(c: &NodeConfigParams) -> Vec<u8> {
    let mut out = Vec::new();
    put_map(&mut out, 3);
    put_uint(&mut out, 0);
    put_uint(&mut out, c.update_period_s as u64);
    put_uint(&mut out, 1);
    put_key_feature_spec(&mut out, &c.key_features);
    put_uint(&mut out, 2);
    put_uint(&mut out, c.default_ttl_s as u64);
    out
}

pub fn decode_node_config(bytes: &[u8]) -> Result<NodeConfigParams, CodecError> {
    let mut rd = Reader::new(bytes);
    let n = rd.map()?;
    let mut update_period_s = None;
    let mut key_features = None;
    let mut default_ttl_s = None;
    let mut last_key = None;
    for _ in 0..n {
        let k = rd.uint()?;
        if let Some(prev) = last_key {
            if k <= prev {
                return Err(CodecError("map keys not strictly ascending"));
            }
        }
        last_key = Some(k);
        match k {
            0 => update_period_s = Some(rd.uint_max(u32::MAX as u64)? as u32),
            1 => key_features = Some(read_key_feature_spec(&mut rd)?),
            2 => default_ttl_s = Some(rd.uint_max(u32::MAX as u64)? as u32),
            _ => return Err(CodecError("unknown config key")),
        }
    }
    rd.finish()?;
    match (update_period_s, key_features, default_ttl_s) {
        (Some(u), Some(k), Some(d)) => Ok(NodeConfigParams {
            update_period_s: u,
            key_features: k,
            default_ttl_s: d,
        }),
        _ => Err(CodecError("missing config key")),
    }
}

/// `GET /flow-engine` request body: the MAC address being queried.
pub fn encode_addr_query(addr: ShortAddr) -> Vec<u8> {
    let mut out = Vec::new();
    put_array(&mut out, 1);
    put_uint(&mut out, addr.0 as u64);
    out
}

pub fn decode_addr_query(bytes: &[u8]) -> Result<ShortAddr, CodecError> {
    let mut rd = Reader::new(bytes);
    rd.array_exact(1)?;
    let a = ShortAddr(rd.uint_max(u16::MAX as u64)? as u16);
    rd.finish()?;
    Ok(a)
}

/// `GET /update-period` and `POST /update-period` bodies.
pub fn encode_period(period_s: u32) -> Vec<u8> {
    let mut out = Vec::new();
    put_array(&mut out, 1);
    put_uint(&mut out, period_s as u64);
    out
}

pub fn decode_period(bytes: &[u8]) -> Result<u32, CodecError> {
    let mut rd = Reader::new(bytes);
    rd.array_exact(1)?;
    let p = rd.uint_max(u32::MAX as u64)? as u32;
    rd.finish()?;
    Ok(p)
}

/// The size-modeled "whole frame" body used when no key features are
/// configured: the frame's structural fields in canonical form.
pub fn encode_whole_frame(f: &crate::packet::Frame) -> Vec<u8> {
    let mut out = Vec::new();
    put_array(&mut out, 5);
    put_uint(&mut out, f.mac_src.0 as u64);
    put_uint(&mut out, f.mac_dst.0 as u64);
    match f.mesh {
        None => put_array(&mut out, 0),
        Some(m) => {
            put_array(&mut out, 3);
            put_uint(&mut out, m.hops_left as u64);
            put_uint(&mut out, m.originator.0 as u64);
            put_uint(&mut out, m.final_dest.0 as u64);
        }
    }
    match f.frag {
        None => put_array(&mut out, 0),
        Some(h) => {
            put_array(&mut out, 4);
            put_uint(&mut out, h.datagram_size as u64);
            put_uint(&mut out, h.tag as u64);
            put_uint(&mut out, h.offset_units as u64);
            put_uint(&mut out, h.is_first as u64);
        }
    }
    put_bytes(&mut out, f.window.as_slice());
    out
}

/// Extract the mesh final address from a whole-frame body, if present.
pub fn whole_frame_final(bytes: &[u8]) -> Result<Option<ShortAddr>, CodecError> {
    let mut rd = Reader::new(bytes);
    rd.array_exact(5)?;
    let _src = rd.uint()?;
    let _dst = rd.uint()?;
    let mesh_len = rd.array()?;
    if mesh_len == 0 {
        return Ok(None);
    }
    if mesh_len != 3 {
        return Err(CodecError("bad mesh header encoding"));
    }
    let _hops = rd.uint()?;
    let _orig = rd.uint()?;
    let fin = rd.uint_max(u16::MAX as u64)? as u16;
    Ok(Some(ShortAddr(fin)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::default_key_features;

    #[test]
    fn shortest_integer_forms() {
        let mut out = Vec::new();
        put_uint(&mut out, 0);
        put_uint(&mut out, 23);
        put_uint(&mut out, 24);
        put_uint(&mut out, 0xFF);
        put_uint(&mut out, 0x100);
        put_uint(&mut out, 0xFFFF);
        put_uint(&mut out, 0x10000);
        assert_eq!(
            out,
            vec![
                0x00, 0x17, 0x18, 0x18, 0x18, 0xFF, 0x19, 0x01, 0x00, 0x19, 0xFF, 0xFF, 0x1A,
                0x00, 0x01, 0x00, 0x00
            ]
        );
    }

    #[test]
    fn non_canonical_integers_rejected() {
        // 5 encoded with a one-byte argument.
        let mut rd = Reader::new(&[0x18, 0x05]);
        assert!(rd.uint().is_err());
        // 0xFF encoded with a two-byte argument.
        let mut rd = Reader::new(&[0x19, 0x00, 0xFF]);
        assert!(rd.uint().is_err());
    }

    #[test]
    fn empty_flow_entry_set_is_one_byte() {
        let bytes = encode_flow_entry_set(&[]);
        assert_eq!(bytes, vec![0x80]);
        assert!(decode_flow_entry_set(&bytes).unwrap().is_empty());
    }

    #[test]
    fn etx_fixed_point_encoding() {
        // ETX 1.5 is carried as unsigned 192 (1.5 x 128): head 0x18, 0xC0.
        let report = TopologyReport {
            node: ShortAddr(4),
            battery_level: 100,
            update_period_s: 1200,
            neighbors: vec![NeighborReport {
                addr: ShortAddr(2),
                rssi_dbm: -60,
                etx_x128: 192,
            }],
        };
        let bytes = encode_topology_report(&report);
        assert!(bytes
            .windows(2)
            .any(|w| w == [0x18, 0xC0]));
        assert_eq!(decode_topology_report(&bytes).unwrap(), report);
    }

    #[test]
    fn topology_report_roundtrip() {
        let report = TopologyReport {
            node: ShortAddr(9),
            battery_level: 100,
            update_period_s: 600,
            neighbors: vec![
                NeighborReport {
                    addr: ShortAddr(1),
                    rssi_dbm: -42,
                    etx_x128: 128,
                },
                NeighborReport {
                    addr: ShortAddr(2),
                    rssi_dbm: -77,
                    etx_x128: 141,
                },
                NeighborReport {
                    addr: ShortAddr(30),
                    rssi_dbm: -90,
                    etx_x128: 2048,
                },
            ],
        };
        let bytes = encode_topology_report(&report);
        assert_eq!(decode_topology_report(&bytes).unwrap(), report);
        // Re-encoding is byte-identical.
        assert_eq!(encode_topology_report(&decode_topology_report(&bytes).unwrap()), bytes);
    }

    #[test]
    fn miss_report_both_bodies() {
        let kv = TableMissReport {
            node: ShortAddr(3),
            body: MissBody::KeyValues(vec![3, 7]),
        };
        let bytes = encode_table_miss_report(&kv);
        assert_eq!(decode_table_miss_report(&bytes).unwrap(), kv);

        let wf = TableMissReport {
            node: ShortAddr(3),
            body: MissBody::WholeFrame(vec![1, 2, 3, 4]),
        };
        let bytes = encode_table_miss_report(&wf);
        assert_eq!(decode_table_miss_report(&bytes).unwrap(), wf);
    }

    #[test]
    fn node_config_roundtrip() {
        let c = NodeConfigParams {
            update_period_s: 600,
            key_features: default_key_features(),
            default_ttl_s: 600,
        };
        let bytes = encode_node_config(&c);
        assert_eq!(decode_node_config(&bytes).unwrap(), c);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_addr_query(ShortAddr(7));
        bytes.push(0x00);
        assert!(decode_addr_query(&bytes).is_err());
    }

    #[test]
    fn whole_frame_final_extraction() {
        use crate::packet::{Frame, MeshHeader, PayloadWindow};
        let f = Frame {
            mac_src: ShortAddr(3),
            mac_dst: ShortAddr(5),
            mesh: Some(MeshHeader::new(ShortAddr(3), ShortAddr(7))),
            frag: None,
            payload_len: 50,
            window: PayloadWindow::from_payload(&[1, 2, 3], 16),
            datagram_ref: 1,
        };
        let bytes = encode_whole_frame(&f);
        assert_eq!(whole_frame_final(&bytes).unwrap(), Some(ShortAddr(7)));
    }
}
