//! 802.15.4-scale frames, 6LoWPAN mesh/fragment headers, and datagram
//! fragmentation/reassembly.
//!
//! Sizes are modeled exactly (every byte that would go on the air is
//! accounted for) but header *contents* are modeled structurally: IPv6/UDP
//! compression is a configurable byte count, not bit-exact IPHC.

use std::collections::BTreeMap;
use std::fmt;

/// 16-bit link-layer short address. `0xFFFF` is the broadcast address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShortAddr(pub u16);

impl ShortAddr {
    pub const BROADCAST: ShortAddr = ShortAddr(0xFFFF);

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Debug for ShortAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04x}", self.0)
    }
}

impl fmt::Display for ShortAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An IP-layer endpoint: an in-network node, or one of the two hosts that
/// sit behind the border router on the external network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Host {
    Node(ShortAddr),
    ExternalServer,
    Controller,
}

/// 6LoWPAN mesh header: hops-left plus the link-layer end points of the IP
/// hop. Encoded size is 5 bytes (1 dispatch + 2 + 2 with short addressing).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MeshHeader {
    pub hops_left: u8,
    pub originator: ShortAddr,
    pub final_dest: ShortAddr,
}

impl MeshHeader {
    /// Encoded size on the air.
    pub const SIZE: u16 = 5;
    /// Initial hops-left value (4-bit field, one value reserved).
    pub const INITIAL_HOPS_LEFT: u8 = 14;

    pub fn new(originator: ShortAddr, final_dest: ShortAddr) -> Self {
        MeshHeader {
            hops_left: Self::INITIAL_HOPS_LEFT,
            originator,
            final_dest,
        }
    }
}

/// 6LoWPAN fragmentation header. FRAG1 (first fragment) encodes in 4 bytes,
/// FRAGN in 5 (the extra offset byte).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FragHeader {
    /// Total size in bytes of the compressed datagram being fragmented.
    pub datagram_size: u16,
    pub tag: u16,
    /// Offset of this fragment in multiples of 8 bytes.
    pub offset_units: u16,
    pub is_first: bool,
}

impl FragHeader {
    pub fn size(&self) -> u16 {
        if self.is_first {
            4
        } else {
            5
        }
    }

    pub fn offset_bytes(&self) -> u16 {
        self.offset_units * 8
    }
}

/// What a datagram carries, for dispatch above the adaptation layer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum DatagramKind {
    UdpData,
    Sbi,
    RplDio,
    RplDao,
}

/// Upper bound on the matching window carried by each frame.
pub const MAX_PAYLOAD_WINDOW: usize = 16;

/// The first few bytes of a datagram's payload, carried alongside every
/// fragment so the flow engine can match on payload content.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PayloadWindow {
    len: u8,
    bytes: [u8; MAX_PAYLOAD_WINDOW],
}

impl PayloadWindow {
    pub fn empty() -> Self {
        PayloadWindow {
            len: 0,
            bytes: [0; MAX_PAYLOAD_WINDOW],
        }
    }

    /// Window over the first `w` bytes of `payload` (w capped at 16).
    pub fn from_payload(payload: &[u8], w: usize) -> Self {
        let n = payload.len().min(w).min(MAX_PAYLOAD_WINDOW);
        let mut bytes = [0; MAX_PAYLOAD_WINDOW];
        bytes[..n].copy_from_slice(&payload[..n]);
        PayloadWindow {
            len: n as u8,
            bytes,
        }
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.bytes[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl fmt::Debug for PayloadWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PayloadWindow({:02x?})", self.as_slice())
    }
}

/// A compressed datagram, modeled by size accounting: the application
/// payload length plus the compressed IPv6/UDP header length.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Datagram {
    pub id: u64,
    pub src: Host,
    pub dst: Host,
    pub kind: DatagramKind,
    pub app_payload_len: u16,
    pub compressed_header_len: u16,
    pub created_at_us: u64,
    pub window: PayloadWindow,
}

impl Datagram {
    /// Total compressed size carried by the adaptation layer.
    pub fn compressed_total(&self) -> u16 {
        self.app_payload_len + self.compressed_header_len
    }
}

/// A link frame: MAC addressing, optional 6LoWPAN headers, and a payload
/// modeled by length plus the matching window.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame {
    pub mac_src: ShortAddr,
    pub mac_dst: ShortAddr,
    pub mesh: Option<MeshHeader>,
    pub frag: Option<FragHeader>,
    pub payload_len: u16,
    pub window: PayloadWindow,
    /// Identifier of the originating datagram.
    pub datagram_ref: u64,
}

impl Frame {
    /// Bytes this frame occupies on the air, including MAC framing.
    pub fn on_air_bytes(&self, limits: &LinkLimits) -> u16 {
        limits.mac_overhead
            + self.mesh.map_or(0, |_| MeshHeader::SIZE)
            + self.frag.map_or(0, |h| h.size())
            + self.payload_len
    }
}

/// Link-layer size constants.
#[derive(Clone, Copy, Debug)]
pub struct LinkLimits {
    /// Maximum on-air frame size (127 bytes for 802.15.4).
    pub max_frame: u16,
    /// MAC framing bytes: 9 header + 2 frame check sequence with short
    /// addressing and a short PAN id.
    pub mac_overhead: u16,
    /// Matching-window width carried per frame.
    pub window_bytes: u8,
}

impl Default for LinkLimits {
    fn default() -> Self {
        LinkLimits {
            max_frame: 127,
            mac_overhead: 11,
            window_bytes: MAX_PAYLOAD_WINDOW as u8,
        }
    }
}

/// Widest datagram the 11-bit fragment size field can describe.
pub const MAX_DATAGRAM_SIZE: u16 = 2047;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FragmentError {
    /// The compressed datagram exceeds the fragment header's size field.
    DatagramTooLarge { total: u16 },
}

impl fmt::Display for FragmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FragmentError::DatagramTooLarge { total } => {
                write!(f, "datagram of {total} bytes exceeds {MAX_DATAGRAM_SIZE}")
            }
        }
    }
}

impl std::error::Error for FragmentError {}

/// Split a compressed datagram into link frames.
///
/// If the whole datagram fits in one frame no fragment header is added.
/// Otherwise the first fragment carries a 4-byte FRAG1 header and the rest
/// 5-byte FRAGN headers; every non-final fragment payload is a multiple of
/// 8 bytes so offsets can be expressed in 8-byte units.
pub fn fragment(
    d: &Datagram,
    mesh: Option<MeshHeader>,
    limits: &LinkLimits,
    mac_src: ShortAddr,
    mac_dst: ShortAddr,
) -> Result<Vec<Frame>, FragmentError> {
    let total = d.compressed_total();
    debug_assert!(total >= 1, "empty datagram");
    if total > MAX_DATAGRAM_SIZE {
        return Err(FragmentError::DatagramTooLarge { total });
    }
    let mesh_size = mesh.map_or(0, |_| MeshHeader::SIZE);
    let budget = limits.max_frame - limits.mac_overhead - mesh_size;

    if total <= budget {
        return Ok(vec![Frame {
            mac_src,
            mac_dst,
            mesh,
            frag: None,
            payload_len: total,
            window: d.window,
            datagram_ref: d.id,
        }]);
    }

    let tag = (d.id & 0xFFFF) as u16;
    // Per-fragment payload capacities, rounded down to 8-byte units.
    let cap_first = (budget - 4) / 8 * 8;
    let cap_rest = (budget - 5) / 8 * 8;
    let mut frames = Vec::new();
    let mut sent: u16 = 0;
    while sent < total {
        let is_first = sent == 0;
        let cap = if is_first { cap_first } else { cap_rest };
        let remaining = total - sent;
        // The final fragment may be shorter and need not be 8-aligned.
        let len = remaining.min(cap);
        frames.push(Frame {
            mac_src,
            mac_dst,
            mesh,
            frag: Some(FragHeader {
                datagram_size: total,
                tag,
                offset_units: sent / 8,
                is_first,
            }),
            payload_len: len,
            window: d.window,
            datagram_ref: d.id,
        });
        sent += len;
    }
    Ok(frames)
}

/// Outcome of feeding one frame to the reassembler.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ReassemblyOutcome {
    Incomplete,
    Complete(Datagram),
    /// A buffer for this datagram outlived the reassembly timeout and was
    /// discarded (together with the offered fragment).
    Stale,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReassemblyError {
    /// Two fragments with the same (originator, tag) declared different
    /// datagram sizes.
    InconsistentSize { declared: u16, seen: u16 },
}

impl fmt::Display for ReassemblyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReassemblyError::InconsistentSize { declared, seen } => {
                write!(f, "fragment declares size {declared}, buffer has {seen}")
            }
        }
    }
}

impl std::error::Error for ReassemblyError {}

struct Buffer {
    datagram: Datagram,
    size: u16,
    /// offset_units -> payload length of the received fragment.
    received: BTreeMap<u16, u16>,
    created_at_us: u64,
}

impl Buffer {
    fn covers_all(&self) -> bool {
        let mut expect = 0u16;
        for (&units, &len) in &self.received {
            if units * 8 != expect {
                return false;
            }
            expect += len;
        }
        expect == self.size
    }
}

/// Default reassembly buffer lifetime: 8 simulated seconds.
pub const REASSEMBLY_TIMEOUT_US: u64 = 8_000_000;

/// Reassembles fragmented datagrams, keyed by (source address, tag).
pub struct Reassembler {
    buffers: BTreeMap<(ShortAddr, u16), Buffer>,
    timeout_us: u64,
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(REASSEMBLY_TIMEOUT_US)
    }
}

impl Reassembler {
    pub fn new(timeout_us: u64) -> Self {
        Reassembler {
            buffers: BTreeMap::new(),
            timeout_us,
        }
    }

    /// Feed one received frame. `datagram` is the metadata carried with the
    /// frame (all fragments of a datagram carry the same metadata).
    pub fn push(
        &mut self,
        frame: &Frame,
        datagram: &Datagram,
        now_us: u64,
    ) -> Result<ReassemblyOutcome, ReassemblyError> {
        let frag = match frame.frag {
            // Whole datagram in a single frame.
            None => return Ok(ReassemblyOutcome::Complete(datagram.clone())),
            Some(f) => f,
        };
        let src = frame.mesh.map_or(frame.mac_src, |m| m.originator);
        let key = (src, frag.tag);

        if let Some(buf) = self.buffers.get(&key) {
            if now_us.saturating_sub(buf.created_at_us) > self.timeout_us {
                self.buffers.remove(&key);
                return Ok(ReassemblyOutcome::Stale);
            }
            if buf.size != frag.datagram_size {
                return Err(ReassemblyError::InconsistentSize {
                    declared: frag.datagram_size,
                    seen: buf.size,
                });
            }
        }

        let buf = self.buffers.entry(key).or_insert_with(|| Buffer {
            datagram: datagram.clone(),
            size: frag.datagram_size,
            received: BTreeMap::new(),
            created_at_us: now_us,
        });
        // Duplicate fragments are idempotent.
        buf.received.entry(frag.offset_units).or_insert(frame.payload_len);

        if buf.covers_all() {
            let done = self.buffers.remove(&key).unwrap();
            Ok(ReassemblyOutcome::Complete(done.datagram))
        } else {
            Ok(ReassemblyOutcome::Incomplete)
        }
    }

    /// Drop buffers older than the timeout; returns how many were dropped.
    pub fn purge(&mut self, now_us: u64) -> usize {
        let timeout = self.timeout_us;
        let before = self.buffers.len();
        self.buffers
            .retain(|_, b| now_us.saturating_sub(b.created_at_us) <= timeout);
        before - self.buffers.len()
    }

    pub fn pending(&self) -> usize {
        self.buffers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dgram(id: u64, app: u16, hdr: u16) -> Datagram {
        Datagram {
            id,
            src: Host::Node(ShortAddr(3)),
            dst: Host::Node(ShortAddr(7)),
            kind: DatagramKind::UdpData,
            app_payload_len: app,
            compressed_header_len: hdr,
            created_at_us: 0,
            window: PayloadWindow::from_payload(&[0xAB, 0xCD], 16),
        }
    }

    fn mesh37() -> MeshHeader {
        MeshHeader::new(ShortAddr(3), ShortAddr(7))
    }

    /// Independent packing oracle: greedily fills fragments of the given
    /// capacities and returns the payload length of each.
    fn packing_oracle(total: u16, budget: u16) -> Vec<u16> {
        if total <= budget {
            return vec![total];
        }
        let cap1 = (budget - 4) / 8 * 8;
        let capn = (budget - 5) / 8 * 8;
        let mut out = vec![cap1.min(total)];
        let mut left = total - out[0];
        while left > 0 {
            let l = left.min(capn);
            out.push(l);
            left -= l;
        }
        out
    }

    #[test]
    fn unfragmented_when_it_fits() {
        // 40-byte UDP payload + 10-byte compressed header = 50 bytes;
        // budget = 127 - 11 - 5 = 111.
        let d = dgram(1, 40, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        assert_eq!(frames.len(), 1);
        assert!(frames[0].frag.is_none());
        assert_eq!(frames[0].payload_len, 50);
        assert_eq!(frames[0].on_air_bytes(&LinkLimits::default()), 66);
    }

    #[test]
    fn three_fragments_for_300_bytes() {
        let d = dgram(2, 290, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let lens: Vec<u16> = frames.iter().map(|f| f.payload_len).collect();
        assert_eq!(lens, vec![104, 104, 92]);
        assert_eq!(lens, packing_oracle(300, 111));
        assert!(frames[0].frag.unwrap().is_first);
        assert_eq!(frames[0].on_air_bytes(&LinkLimits::default()), 124);
        for w in frames.windows(2) {
            let a = w[0].frag.unwrap();
            let b = w[1].frag.unwrap();
            assert_eq!(a.tag, b.tag);
            assert_eq!(a.datagram_size, b.datagram_size);
            assert!(!b.is_first);
        }
        // Non-final fragments are 8-byte aligned.
        for f in &frames[..frames.len() - 1] {
            assert_eq!(f.payload_len % 8, 0);
        }
    }

    #[test]
    fn minimal_datagram_single_frame() {
        let d = dgram(3, 1, 0);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].payload_len, 1);
        assert!(frames[0].frag.is_none());
    }

    #[test]
    fn oversized_datagram_rejected() {
        let d = dgram(4, 2040, 10);
        let err = fragment(
            &d,
            None,
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap_err();
        assert_eq!(err, FragmentError::DatagramTooLarge { total: 2050 });
    }

    #[test]
    fn dio_on_air_size() {
        // RPL DIO modeled at 76 compressed bytes, broadcast, no mesh header.
        let d = Datagram {
            id: 5,
            src: Host::Node(ShortAddr(1)),
            dst: Host::Node(ShortAddr::BROADCAST),
            kind: DatagramKind::RplDio,
            app_payload_len: 76,
            compressed_header_len: 0,
            created_at_us: 0,
            window: PayloadWindow::empty(),
        };
        let frames = fragment(
            &d,
            None,
            &LinkLimits::default(),
            ShortAddr(1),
            ShortAddr::BROADCAST,
        )
        .unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].on_air_bytes(&LinkLimits::default()), 87);
    }

    #[test]
    fn fragment_count_matches_packing_oracle_all_sizes() {
        let limits = LinkLimits::default();
        for total in 1..=MAX_DATAGRAM_SIZE {
            let d = dgram(total as u64, total, 0);
            for mesh in [None, Some(mesh37())] {
                let budget = limits.max_frame - limits.mac_overhead - mesh.map_or(0, |_| 5);
                let frames =
                    fragment(&d, mesh, &limits, ShortAddr(3), ShortAddr(5)).unwrap();
                let oracle = packing_oracle(total, budget);
                assert_eq!(
                    frames.iter().map(|f| f.payload_len).collect::<Vec<_>>(),
                    oracle,
                    "total={total} mesh={}",
                    mesh.is_some()
                );
                let sum: u16 = frames.iter().map(|f| f.payload_len).sum();
                assert_eq!(sum, total);
                for f in &frames {
                    assert!(f.on_air_bytes(&limits) <= limits.max_frame);
                }
            }
        }
    }

    #[test]
    fn reassembly_whole_datagram_completes_immediately() {
        let d = dgram(10, 40, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let mut r = Reassembler::default();
        assert_eq!(
            r.push(&frames[0], &d, 0).unwrap(),
            ReassemblyOutcome::Complete(d.clone())
        );
    }

    #[test]
    fn reassembly_out_of_order() {
        let d = dgram(11, 290, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let mut r = Reassembler::default();
        // Delivery order 2, 1, 3.
        assert_eq!(
            r.push(&frames[1], &d, 0).unwrap(),
            ReassemblyOutcome::Incomplete
        );
        assert_eq!(
            r.push(&frames[0], &d, 10).unwrap(),
            ReassemblyOutcome::Incomplete
        );
        assert_eq!(
            r.push(&frames[2], &d, 20).unwrap(),
            ReassemblyOutcome::Complete(d.clone())
        );
        assert_eq!(r.pending(), 0);
    }

    #[test]
    fn reassembly_duplicates_are_idempotent() {
        let d = dgram(12, 290, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let mut r = Reassembler::default();
        assert_eq!(
            r.push(&frames[0], &d, 0).unwrap(),
            ReassemblyOutcome::Incomplete
        );
        assert_eq!(
            r.push(&frames[0], &d, 1).unwrap(),
            ReassemblyOutcome::Incomplete
        );
        assert_eq!(
            r.push(&frames[1], &d, 2).unwrap(),
            ReassemblyOutcome::Incomplete
        );
        let mut completions = 0;
        if let ReassemblyOutcome::Complete(_) = r.push(&frames[2], &d, 3).unwrap() {
            completions += 1;
        }
        assert_eq!(completions, 1);
    }

    #[test]
    fn reassembly_inconsistent_size_rejected() {
        let d = dgram(13, 290, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let mut r = Reassembler::default();
        r.push(&frames[0], &d, 0).unwrap();
        let mut bad = frames[1].clone();
        bad.frag.as_mut().unwrap().datagram_size = 400;
        assert_eq!(
            r.push(&bad, &d, 1).unwrap_err(),
            ReassemblyError::InconsistentSize {
                declared: 400,
                seen: 300
            }
        );
    }

    #[test]
    fn reassembly_stale_buffer_discarded() {
        let d = dgram(14, 290, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let mut r = Reassembler::default();
        r.push(&frames[0], &d, 0).unwrap();
        assert_eq!(
            r.push(&frames[1], &d, REASSEMBLY_TIMEOUT_US + 1).unwrap(),
            ReassemblyOutcome::Stale
        );
        assert_eq!(r.pending(), 0);
    }

    #[test]
    fn reassembly_roundtrip_any_order_with_duplicates() {
        // fragment -> reassemble yields the original compressed total and
        // window for a spread of sizes and delivery permutations.
        let limits = LinkLimits::default();
        let mut shuffle_seed = 0x9e3779b97f4a7c15u64;
        for total in [1u16, 50, 111, 112, 300, 517, 1024, 2047] {
            let d = dgram(1000 + total as u64, total, 0);
            let frames =
                fragment(&d, Some(mesh37()), &limits, ShortAddr(3), ShortAddr(5)).unwrap();
            let mut order: Vec<usize> = (0..frames.len()).collect();
            // Cheap deterministic shuffle.
            for i in (1..order.len()).rev() {
                shuffle_seed = shuffle_seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                order.swap(i, (shuffle_seed % (i as u64 + 1)) as usize);
            }
            let mut r = Reassembler::default();
            let mut done = None;
            for (k, &i) in order.iter().enumerate() {
                // Deliver every other fragment twice; completion must be
                // emitted exactly once either way.
                let copies = if k % 2 == 0 { 2 } else { 1 };
                for _ in 0..copies {
                    if done.is_some() {
                        break;
                    }
                    if let ReassemblyOutcome::Complete(out) =
                        r.push(&frames[i], &d, k as u64).unwrap()
                    {
                        done = Some(out);
                    }
                }
            }
            let out = done.expect("never completed");
            assert_eq!(out.compressed_total(), total);
            assert_eq!(out.window, d.window);
        }
    }

    #[test]
    fn purge_reports_dropped_buffers() {
        let d = dgram(15, 290, 10);
        let frames = fragment(
            &d,
            Some(mesh37()),
            &LinkLimits::default(),
            ShortAddr(3),
            ShortAddr(5),
        )
        .unwrap();
        let mut r = Reassembler::default();
        r.push(&frames[0], &d, 0).unwrap();
        assert_eq!(r.purge(REASSEMBLY_TIMEOUT_US), 0);
        assert_eq!(r.purge(REASSEMBLY_TIMEOUT_US + 1), 1);
    }
}
