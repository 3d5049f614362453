//! The flow table: prioritized rule matching over frame bit-windows and
//! sequential action execution, with per-entry statistics and TTL expiry.
//!
//! An entry is a row of (priority, rules, actions, statistics). Rules are
//! ANDed conditions comparing a bit window of a frame field against a
//! constant; actions run in order and decide what happens to the frame.

use std::fmt;

use crate::packet::{Frame, ShortAddr};

/// A matchable frame field. Each selector has a fixed bit width except
/// `Payload`, whose width is 8x the frame's carried window.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum FieldSelector {
    MacSrc,
    MacDst,
    MeshOrig,
    MeshFinal,
    MeshHopsLeft,
    FragTag,
    Payload,
}

impl FieldSelector {
    /// Bit width of the field, or `None` for the variable-width payload.
    pub fn fixed_width_bits(self) -> Option<u16> {
        match self {
            FieldSelector::MacSrc
            | FieldSelector::MacDst
            | FieldSelector::MeshOrig
            | FieldSelector::MeshFinal
            | FieldSelector::FragTag => Some(16),
            FieldSelector::MeshHopsLeft => Some(4),
            FieldSelector::Payload => None,
        }
    }
}

/// Comparison operators available to rules.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum RelOp {
    Eq,
    Neq,
    Le,
    Ge,
    Lt,
    Gt,
}

impl RelOp {
    pub fn eval(self, a: u64, b: u64) -> bool {
        match self {
            RelOp::Eq => a == b,
            RelOp::Neq => a != b,
            RelOp::Le => a <= b,
            RelOp::Ge => a >= b,
            RelOp::Lt => a < b,
            RelOp::Gt => a > b,
        }
    }
}

/// One matching condition: compare a bit window of a field to a constant.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Rule {
    pub field: FieldSelector,
    pub offset_bits: u16,
    pub size_bits: u8,
    pub op: RelOp,
    pub value: u64,
}

impl Rule {
    /// Shorthand for a whole-field equality rule.
    pub fn field_eq(field: FieldSelector, value: u64) -> Self {
        let size = field.fixed_width_bits().unwrap_or(16) as u8;
        Rule {
            field,
            offset_bits: 0,
            size_bits: size,
            op: RelOp::Eq,
            value,
        }
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.size_bits == 0 || self.size_bits > 64 {
            return Err(RuleError::BadSize(self.size_bits));
        }
        if let Some(w) = self.field.fixed_width_bits() {
            if self.offset_bits + self.size_bits as u16 > w {
                return Err(RuleError::WindowOutOfRange);
            }
        }
        if self.size_bits < 64 && self.value >= 1u64 << self.size_bits {
            return Err(RuleError::ValueTooWide);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RuleError {
    BadSize(u8),
    WindowOutOfRange,
    ValueTooWide,
}

impl fmt::Display for RuleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleError::BadSize(s) => write!(f, "rule size {s} outside 1..=64 bits"),
            RuleError::WindowOutOfRange => write!(f, "rule window exceeds field width"),
            RuleError::ValueTooWide => write!(f, "rule value wider than its window"),
        }
    }
}

impl std::error::Error for RuleError {}

/// One step of an entry's action program.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Action {
    /// Send the frame towards the given next hop.
    Forward { next_hop: ShortAddr },
    /// Send the frame as a link broadcast.
    Broadcast,
    /// Write `value` into a bit window of a field.
    Modify {
        field: FieldSelector,
        offset_bits: u16,
        size_bits: u8,
        value: u64,
    },
    /// Discard the frame and stop executing.
    Drop,
    /// Decrease a field by `value`, saturating at zero.
    Decrement { field: FieldSelector, value: u64 },
    /// Increase a field by `value`, saturating at the field maximum.
    Increment { field: FieldSelector, value: u64 },
    /// Deliver the frame to the upper layer.
    ToUpperLayer,
    /// Resume table scanning after this entry (lookup-time only).
    Continue,
}

/// A configured key feature: which bit window to report on a table miss.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct KeyFeature {
    pub field: FieldSelector,
    pub offset_bits: u16,
    pub size_bits: u8,
}

pub type KeyFeatureSpec = Vec<KeyFeature>;

/// Default key features: mesh originator and final address.
pub fn default_key_features() -> KeyFeatureSpec {
    vec![
        KeyFeature {
            field: FieldSelector::MeshOrig,
            offset_bits: 0,
            size_bits: 16,
        },
        KeyFeature {
            field: FieldSelector::MeshFinal,
            offset_bits: 0,
            size_bits: 16,
        },
    ]
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ExtractError {
    /// The selected field is not present in this frame (e.g. no mesh
    /// header). Callers treat this as rule-not-matched.
    FieldAbsent,
    /// offset/size violate the field width.
    WindowOutOfRange,
}

/// Read the big-endian unsigned value of the selected bit window.
pub fn extract_window(
    frame: &Frame,
    field: FieldSelector,
    offset_bits: u16,
    size_bits: u8,
) -> Result<u64, ExtractError> {
    if size_bits == 0 || size_bits > 64 {
        return Err(ExtractError::WindowOutOfRange);
    }
    if field == FieldSelector::Payload {
        let bytes = frame.window.as_slice();
        let width = bytes.len() as u16 * 8;
        if offset_bits + size_bits as u16 > width {
            // Window shorter than the requested slice: nothing to match.
            return Err(ExtractError::FieldAbsent);
        }
        return Ok(read_bits(bytes, offset_bits, size_bits));
    }
    let (value, width) = field_value(frame, field)?;
    if offset_bits + size_bits as u16 > width {
        return Err(ExtractError::WindowOutOfRange);
    }
    let shift = width - offset_bits - size_bits as u16;
    let mask = if size_bits == 64 {
        u64::MAX
    } else {
        (1u64 << size_bits) - 1
    };
    Ok((value >> shift) & mask)
}

fn field_value(frame: &Frame, field: FieldSelector) -> Result<(u64, u16), ExtractError> {
    match field {
        FieldSelector::MacSrc => Ok((frame.mac_src.0 as u64, 16)),
        FieldSelector::MacDst => Ok((frame.mac_dst.0 as u64, 16)),
        FieldSelector::MeshOrig => frame
            .mesh
            .map(|m| (m.originator.0 as u64, 16))
            .ok_or(ExtractError::FieldAbsent),
        FieldSelector::MeshFinal => frame
            .mesh
            .map(|m| (m.final_dest.0 as u64, 16))
            .ok_or(ExtractError::FieldAbsent),
        FieldSelector::MeshHopsLeft => frame
            .mesh
            .map(|m| (m.hops_left as u64, 4))
            .ok_or(ExtractError::FieldAbsent),
        FieldSelector::FragTag => frame
            .frag
            .map(|h| (h.tag as u64, 16))
            .ok_or(ExtractError::FieldAbsent),
        FieldSelector::Payload => unreachable!("payload handled by caller"),
    }
}

fn store_field_value(frame: &mut Frame, field: FieldSelector, value: u64) {
    match field {
        FieldSelector::MacSrc => frame.mac_src = ShortAddr(value as u16),
        FieldSelector::MacDst => frame.mac_dst = ShortAddr(value as u16),
        FieldSelector::MeshOrig => {
            if let Some(m) = frame.mesh.as_mut() {
                m.originator = ShortAddr(value as u16);
            }
        }
        FieldSelector::MeshFinal => {
            if let Some(m) = frame.mesh.as_mut() {
                m.final_dest = ShortAddr(value as u16);
            }
        }
        FieldSelector::MeshHopsLeft => {
            if let Some(m) = frame.mesh.as_mut() {
                m.hops_left = (value & 0xF) as u8;
            }
        }
        FieldSelector::FragTag => {
            if let Some(h) = frame.frag.as_mut() {
                h.tag = value as u16;
            }
        }
        FieldSelector::Payload => unreachable!("payload handled by caller"),
    }
}

fn read_bits(bytes: &[u8], offset_bits: u16, size_bits: u8) -> u64 {
    let mut out = 0u64;
    for i in 0..size_bits as u16 {
        let bit = offset_bits + i;
        let byte = bytes[(bit / 8) as usize];
        let b = (byte >> (7 - bit % 8)) & 1;
        out = (out << 1) | b as u64;
    }
    out
}

fn write_bits(bytes: &mut [u8], offset_bits: u16, size_bits: u8, value: u64) {
    for i in 0..size_bits as u16 {
        let bit = offset_bits + i;
        let mask = 1u8 << (7 - bit % 8);
        let v = (value >> (size_bits as u16 - 1 - i)) & 1;
        let byte = &mut bytes[(bit / 8) as usize];
        if v == 1 {
            *byte |= mask;
        } else {
            *byte &= !mask;
        }
    }
}

/// One row of the flow table.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FlowEntry {
    /// Lower priorities are examined first.
    pub priority: u16,
    pub rules: Vec<Rule>,
    pub actions: Vec<Action>,
    pub stats_counter: u64,
    /// Remaining lifetime. The entry is removed when this reaches zero; a
    /// matching access resets it to `initial_ttl_s` (idle timeout).
    pub ttl_s: u32,
    pub initial_ttl_s: u32,
    pub installed_at_us: u64,
    seq: u64,
}

impl FlowEntry {
    pub fn new(priority: u16, rules: Vec<Rule>, actions: Vec<Action>, ttl_s: u32) -> Self {
        FlowEntry {
            priority,
            rules,
            actions,
            stats_counter: 0,
            ttl_s,
            initial_ttl_s: ttl_s,
            installed_at_us: 0,
            seq: 0,
        }
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        for r in &self.rules {
            r.validate()?;
        }
        Ok(())
    }
}

/// True iff every rule of the entry holds for the frame. Entries without
/// rules match everything; a missing field fails the whole entry.
pub fn entry_matches(frame: &Frame, entry: &FlowEntry) -> bool {
    entry.rules.iter().all(|r| {
        match extract_window(frame, r.field, r.offset_bits, r.size_bits) {
            Ok(v) => r.op.eval(v, r.value),
            Err(_) => false,
        }
    })
}

/// Result of a table lookup.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MatchOutcome {
    /// Concatenated actions of the matched entries, in match order.
    Matched(Vec<Action>),
    TableMiss,
}

/// Result of installing an entry.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InstallOutcome {
    Installed,
    /// An entry with the same (priority, rules) was refreshed in place.
    Replaced,
    /// Table full and nothing evictable.
    Rejected,
}

/// What should happen to a frame after its action plan ran.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Disposition {
    Forward(ShortAddr),
    Broadcast,
    ToUpper,
    Dropped,
}

/// Non-fatal observations produced while executing an action plan.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ActionDiag {
    /// A Modify/Decrement/Increment referenced an absent field; skipped.
    FieldAbsentSkipped,
    /// No disposition-setting action executed; the frame was dropped.
    NoDisposition,
}

pub const DEFAULT_TABLE_CAPACITY: usize = 40;

/// The per-node forwarding table. Entries are kept in examination order:
/// priority ascending, then installation time, then installation sequence.
pub struct FlowTable {
    entries: Vec<FlowEntry>,
    capacity: usize,
    next_seq: u64,
}

impl Default for FlowTable {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_TABLE_CAPACITY)
    }
}

impl FlowTable {
    pub fn with_capacity(capacity: usize) -> Self {
        FlowTable {
            entries: Vec::new(),
            capacity,
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Scan the table in order. The first matching entry contributes its
    /// actions and bumps its counter; if its action list ends with
    /// `Continue`, scanning resumes at the next entry.
    pub fn lookup(&mut self, frame: &Frame) -> MatchOutcome {
        let mut plan = Vec::new();
        let mut matched = false;
        for e in self.entries.iter_mut() {
            if entry_matches(frame, e) {
                matched = true;
                e.stats_counter += 1;
                e.ttl_s = e.initial_ttl_s;
                plan.extend(e.actions.iter().cloned());
                if e.actions.last() != Some(&Action::Continue) {
                    break;
                }
            }
        }
        if matched {
            MatchOutcome::Matched(plan)
        } else {
            MatchOutcome::TableMiss
        }
    }

    /// Install or refresh an entry. Identity for replacement is the
    /// structural pair (priority, rules).
    pub fn install(&mut self, mut entry: FlowEntry, now_us: u64) -> InstallOutcome {
        if let Some(cur) = self
            .entries
            .iter_mut()
            .find(|e| e.priority == entry.priority && e.rules == entry.rules)
        {
            cur.actions = entry.actions;
            cur.ttl_s = entry.ttl_s;
            cur.initial_ttl_s = entry.initial_ttl_s;
            return InstallOutcome::Replaced;
        }
        if self.entries.len() >= self.capacity {
            match self.entries.iter().position(|e| e.ttl_s == 0) {
                Some(i) => {
                    self.entries.remove(i);
                }
                None => return InstallOutcome::Rejected,
            }
        }
        entry.installed_at_us = now_us;
        entry.seq = self.next_seq;
        self.next_seq += 1;
        let at = self
            .entries
            .partition_point(|e| {
                (e.priority, e.installed_at_us, e.seq)
                    <= (entry.priority, entry.installed_at_us, entry.seq)
            });
        self.entries.insert(at, entry);
        InstallOutcome::Installed
    }

    /// Age every entry by `dt_s`; entries reaching zero are removed and
    /// returned.
    pub fn tick(&mut self, dt_s: u32) -> Vec<FlowEntry> {
        debug_assert!(dt_s > 0);
        let mut expired = Vec::new();
        let mut i = 0;
        while i < self.entries.len() {
            let e = &mut self.entries[i];
            e.ttl_s = e.ttl_s.saturating_sub(dt_s);
            if e.ttl_s == 0 {
                expired.push(self.entries.remove(i));
            } else {
                i += 1;
            }
        }
        expired
    }
}

/// Execute an action plan against a frame. Returns the disposition and any
/// diagnostics; the frame is modified in place.
pub fn apply_actions(frame: &mut Frame, plan: &[Action]) -> (Disposition, Vec<ActionDiag>) {
    debug_assert!(!plan.is_empty());
    let mut disposition = None;
    let mut diags = Vec::new();
    for action in plan {
        match action {
            Action::Drop => return (Disposition::Dropped, diags),
            Action::Forward { next_hop } => disposition = Some(Disposition::Forward(*next_hop)),
            Action::Broadcast => disposition = Some(Disposition::Broadcast),
            Action::ToUpperLayer => disposition = Some(Disposition::ToUpper),
            Action::Continue => {}
            Action::Modify {
                field,
                offset_bits,
                size_bits,
                value,
            } => {
                if *field == FieldSelector::Payload {
                    let width = frame.window.len() as u16 * 8;
                    if *offset_bits + *size_bits as u16 > width {
                        diags.push(ActionDiag::FieldAbsentSkipped);
                    } else {
                        write_bits(frame.window.as_mut_slice(), *offset_bits, *size_bits, *value);
                    }
                    continue;
                }
                match field_value(frame, *field) {
                    Err(_) => diags.push(ActionDiag::FieldAbsentSkipped),
                    Ok((cur, width)) => {
                        if *offset_bits + *size_bits as u16 > width {
                            diags.push(ActionDiag::FieldAbsentSkipped);
                            continue;
                        }
                        let shift = width - offset_bits - *size_bits as u16;
                        let mask = if *size_bits == 64 {
                            u64::MAX
                        } else {
                            (1u64 << size_bits) - 1
                        };
                        let new = (cur & !(mask << shift)) | ((value & mask) << shift);
                        store_field_value(frame, *field, new);
                    }
                }
            }
            Action::Decrement { field, value } | Action::Increment { field, value } => {
                if *field == FieldSelector::Payload {
                    diags.push(ActionDiag::FieldAbsentSkipped);
                    continue;
                }
                match field_value(frame, *field) {
                    Err(_) => diags.push(ActionDiag::FieldAbsentSkipped),
                    Ok((cur, width)) => {
                        let max = if width >= 64 {
                            u64::MAX
                        } else {
                            (1u64 << width) - 1
                        };
                        let new = match action {
                            Action::Decrement { .. } => cur.saturating_sub(*value),
                            _ => cur.saturating_add(*value).min(max),
                        };
                        store_field_value(frame, *field, new);
                    }
                }
            }
        }
    }
    match disposition {
        Some(d) => (d, diags),
        None => {
            diags.push(ActionDiag::NoDisposition);
            (Disposition::Dropped, diags)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{MeshHeader, PayloadWindow};

    fn fig3_frame() -> Frame {
        // The packet of the forwarding example: originator node 3, final
        // destination node 7, observed at an intermediate node.
        Frame {
            mac_src: ShortAddr(3),
            mac_dst: ShortAddr(5),
            mesh: Some(MeshHeader::new(ShortAddr(3), ShortAddr(7))),
            frag: None,
            payload_len: 50,
            window: PayloadWindow::from_payload(&[0xAB, 0xCD], 16),
            datagram_ref: 1,
        }
    }

    fn bare_frame() -> Frame {
        Frame {
            mac_src: ShortAddr(0),
            mac_dst: ShortAddr(0),
            mesh: None,
            frag: None,
            payload_len: 1,
            window: PayloadWindow::empty(),
            datagram_ref: 2,
        }
    }

    #[test]
    fn extract_mesh_final() {
        let f = fig3_frame();
        assert_eq!(
            extract_window(&f, FieldSelector::MeshFinal, 0, 16).unwrap(),
            0x0007
        );
    }

    #[test]
    fn extract_zeroed_frame() {
        let f = bare_frame();
        assert_eq!(extract_window(&f, FieldSelector::MacSrc, 0, 16).unwrap(), 0);
        assert_eq!(extract_window(&f, FieldSelector::MacDst, 0, 16).unwrap(), 0);
    }

    #[test]
    fn extract_payload_bit_slice() {
        let f = fig3_frame();
        // 0xAB 0xCD, offset 4, size 8 -> 0xBC.
        assert_eq!(
            extract_window(&f, FieldSelector::Payload, 4, 8).unwrap(),
            0xBC
        );
    }

    #[test]
    fn extract_absent_field() {
        let f = bare_frame();
        assert_eq!(
            extract_window(&f, FieldSelector::MeshFinal, 0, 16),
            Err(ExtractError::FieldAbsent)
        );
        assert_eq!(
            extract_window(&f, FieldSelector::FragTag, 0, 16),
            Err(ExtractError::FieldAbsent)
        );
    }

    #[test]
    fn extract_out_of_range() {
        let f = fig3_frame();
        assert_eq!(
            extract_window(&f, FieldSelector::MacSrc, 10, 10),
            Err(ExtractError::WindowOutOfRange)
        );
    }

    #[test]
    fn empty_rules_match_everything() {
        let e = FlowEntry::new(100, vec![], vec![Action::Drop], 600);
        assert!(entry_matches(&fig3_frame(), &e));
        assert!(entry_matches(&bare_frame(), &e));
    }

    #[test]
    fn conjunction_of_rules() {
        let e = FlowEntry::new(
            10,
            vec![
                Rule::field_eq(FieldSelector::MeshFinal, 0x0007),
                Rule {
                    field: FieldSelector::MeshHopsLeft,
                    offset_bits: 0,
                    size_bits: 4,
                    op: RelOp::Gt,
                    value: 0,
                },
            ],
            vec![Action::Drop],
            600,
        );
        assert!(entry_matches(&fig3_frame(), &e));
    }

    #[test]
    fn absent_field_fails_entry() {
        let e = FlowEntry::new(
            10,
            vec![Rule::field_eq(FieldSelector::MeshFinal, 0x0007)],
            vec![Action::Drop],
            600,
        );
        assert!(!entry_matches(&bare_frame(), &e));
    }

    #[test]
    fn lookup_empty_table_misses() {
        let mut t = FlowTable::default();
        assert_eq!(t.lookup(&fig3_frame()), MatchOutcome::TableMiss);
    }

    #[test]
    fn lookup_prefers_lower_priority_and_counts() {
        let mut t = FlowTable::default();
        t.install(
            FlowEntry::new(
                100,
                vec![],
                vec![Action::Forward {
                    next_hop: ShortAddr(1),
                }],
                600,
            ),
            0,
        );
        t.install(
            FlowEntry::new(
                10,
                vec![Rule::field_eq(FieldSelector::MeshFinal, 0x0005)],
                vec![Action::Forward {
                    next_hop: ShortAddr(5),
                }],
                600,
            ),
            0,
        );
        let mut f = fig3_frame();
        f.mesh.as_mut().unwrap().final_dest = ShortAddr(5);
        let out = t.lookup(&f);
        assert_eq!(
            out,
            MatchOutcome::Matched(vec![Action::Forward {
                next_hop: ShortAddr(5)
            }])
        );
        let specific = t
            .entries()
            .iter()
            .find(|e| e.priority == 10)
            .unwrap();
        assert_eq!(specific.stats_counter, 1);
        let default = t.entries().iter().find(|e| e.priority == 100).unwrap();
        assert_eq!(default.stats_counter, 0);
    }

    #[test]
    fn continue_chains_entries() {
        let mut t = FlowTable::default();
        t.install(
            FlowEntry::new(
                5,
                vec![],
                vec![
                    Action::Increment {
                        field: FieldSelector::FragTag,
                        value: 1,
                    },
                    Action::Continue,
                ],
                600,
            ),
            0,
        );
        t.install(
            FlowEntry::new(
                9,
                vec![],
                vec![Action::Forward {
                    next_hop: ShortAddr(0x000A),
                }],
                600,
            ),
            0,
        );
        let out = t.lookup(&fig3_frame());
        assert_eq!(
            out,
            MatchOutcome::Matched(vec![
                Action::Increment {
                    field: FieldSelector::FragTag,
                    value: 1
                },
                Action::Continue,
                Action::Forward {
                    next_hop: ShortAddr(0x000A)
                },
            ])
        );
    }

    #[test]
    fn apply_decrement_then_forward() {
        let mut f = fig3_frame();
        let plan = vec![
            Action::Decrement {
                field: FieldSelector::MeshHopsLeft,
                value: 1,
            },
            Action::Forward {
                next_hop: ShortAddr(5),
            },
        ];
        let (d, diags) = apply_actions(&mut f, &plan);
        assert_eq!(d, Disposition::Forward(ShortAddr(5)));
        assert!(diags.is_empty());
        assert_eq!(f.mesh.unwrap().hops_left, 13);
    }

    #[test]
    fn drop_short_circuits() {
        let mut f = fig3_frame();
        let plan = vec![
            Action::Drop,
            Action::Forward {
                next_hop: ShortAddr(2),
            },
        ];
        let (d, _) = apply_actions(&mut f, &plan);
        assert_eq!(d, Disposition::Dropped);
        // Frame untouched by the never-executed forward.
        assert_eq!(f.mesh.unwrap().hops_left, 14);
    }

    #[test]
    fn modify_write_then_read() {
        let mut f = fig3_frame();
        let plan = vec![
            Action::Modify {
                field: FieldSelector::MeshFinal,
                offset_bits: 0,
                size_bits: 16,
                value: 0x0009,
            },
            Action::ToUpperLayer,
        ];
        apply_actions(&mut f, &plan);
        assert_eq!(
            extract_window(&f, FieldSelector::MeshFinal, 0, 16).unwrap(),
            0x0009
        );
    }

    #[test]
    fn modify_payload_window() {
        let mut f = fig3_frame();
        let plan = vec![
            Action::Modify {
                field: FieldSelector::Payload,
                offset_bits: 4,
                size_bits: 8,
                value: 0xFF,
            },
            Action::ToUpperLayer,
        ];
        apply_actions(&mut f, &plan);
        assert_eq!(
            extract_window(&f, FieldSelector::Payload, 4, 8).unwrap(),
            0xFF
        );
        // Bits outside the window are untouched.
        assert_eq!(
            extract_window(&f, FieldSelector::Payload, 0, 4).unwrap(),
            0xA
        );
        assert_eq!(
            extract_window(&f, FieldSelector::Payload, 12, 4).unwrap(),
            0xD
        );
    }

    #[test]
    fn saturation_bounds() {
        let mut f = fig3_frame();
        apply_actions(
            &mut f,
            &[
                Action::Decrement {
                    field: FieldSelector::MeshHopsLeft,
                    value: 200,
                },
                Action::ToUpperLayer,
            ],
        );
        assert_eq!(f.mesh.unwrap().hops_left, 0);
        apply_actions(
            &mut f,
            &[
                Action::Increment {
                    field: FieldSelector::MeshHopsLeft,
                    value: 200,
                },
                Action::ToUpperLayer,
            ],
        );
        assert_eq!(f.mesh.unwrap().hops_left, 15);
    }

    #[test]
    fn no_disposition_is_dropped_with_diag() {
        let mut f = fig3_frame();
        let (d, diags) = apply_actions(
            &mut f,
            &[Action::Increment {
                field: FieldSelector::FragTag,
                value: 1,
            }],
        );
        assert_eq!(d, Disposition::Dropped);
        assert!(diags.contains(&ActionDiag::NoDisposition));
        // The increment on the absent frag header was skipped too.
        assert!(diags.contains(&ActionDiag::FieldAbsentSkipped));
    }

    #[test]
    fn install_and_replace() {
        let mut t = FlowTable::default();
        let e = FlowEntry::new(
            20,
            vec![Rule::field_eq(FieldSelector::MeshFinal, 7)],
            vec![Action::Forward {
                next_hop: ShortAddr(5),
            }],
            600,
        );
        assert_eq!(t.install(e.clone(), 0), InstallOutcome::Installed);
        assert_eq!(t.len(), 1);
        let mut e2 = e.clone();
        e2.actions = vec![Action::Forward {
            next_hop: ShortAddr(9),
        }];
        assert_eq!(t.install(e2, 1), InstallOutcome::Replaced);
        assert_eq!(t.len(), 1);
        match t.lookup(&fig3_frame()) {
            MatchOutcome::Matched(plan) => assert_eq!(
                plan,
                vec![Action::Forward {
                    next_hop: ShortAddr(9)
                }]
            ),
            _ => panic!("expected match"),
        }
    }

    #[test]
    fn reject_when_full_and_alive() {
        let mut t = FlowTable::with_capacity(40);
        for i in 0..40 {
            assert_eq!(
                t.install(
                    FlowEntry::new(
                        i,
                        vec![Rule::field_eq(FieldSelector::MeshFinal, i as u64)],
                        vec![Action::Drop],
                        600
                    ),
                    0
                ),
                InstallOutcome::Installed
            );
        }
        let extra = FlowEntry::new(99, vec![], vec![Action::Drop], 600);
        assert_eq!(t.install(extra.clone(), 1), InstallOutcome::Rejected);
        // Expire one entry: installation now evicts it.
        t.entries[0].ttl_s = 0;
        assert_eq!(t.install(extra, 2), InstallOutcome::Installed);
        assert_eq!(t.len(), 40);
    }

    #[test]
    fn tick_expires_entries() {
        let mut t = FlowTable::default();
        t.install(FlowEntry::new(1, vec![], vec![Action::Drop], 10), 0);
        t.install(
            FlowEntry::new(
                2,
                vec![Rule::field_eq(FieldSelector::MacSrc, 1)],
                vec![Action::Drop],
                600,
            ),
            0,
        );
        let expired = t.tick(10);
        assert_eq!(expired.len(), 1);
        assert_eq!(expired[0].priority, 1);
        assert_eq!(t.len(), 1);

        let mut empty = FlowTable::default();
        assert!(empty.tick(1000).is_empty());

        let mut t2 = FlowTable::default();
        t2.install(FlowEntry::new(3, vec![], vec![Action::Drop], 600), 0);
        assert_eq!(t2.tick(600).len(), 1);
    }

    #[test]
    fn matching_access_refreshes_ttl() {
        let mut t = FlowTable::default();
        t.install(FlowEntry::new(1, vec![], vec![Action::Drop], 600), 0);
        t.tick(500);
        assert_eq!(t.entries()[0].ttl_s, 100);
        t.lookup(&fig3_frame());
        assert_eq!(t.entries()[0].ttl_s, 600);
    }
}
