//! Simplified CSMA/CA MAC: random backoff with carrier sensing, immediate
//! acknowledgments for unicast frames, and bounded retransmission.
//!
//! Per attempt: draw a backoff uniform in [0, 2.4 ms]; on expiry sense the
//! carrier, redrawing up to 5 times while busy (then the attempt counts as
//! failed); transmit; for unicast, wait 1 ms for the 11-byte ACK. Up to 3
//! retransmissions (4 attempts total), then the frame is dropped and the
//! failure reported to the ETX estimator.

use std::collections::VecDeque;

use crate::node::FrameInFlight;
use crate::packet::ShortAddr;

pub const BACKOFF_MAX_US: u64 = 2400;
/// Transmit queue bound; arrivals beyond it are tail-dropped.
pub const QUEUE_CAP: usize = 16;
pub const CARRIER_REDRAWS: u32 = 5;
pub const ACK_TIMEOUT_US: u64 = 1000;
pub const MAX_ATTEMPTS: u32 = 4;
/// Rx/tx turnaround before the ACK goes on the air.
pub const TURNAROUND_US: u64 = 192;
pub const ACK_BYTES: u16 = 11;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MacPhase {
    Backoff,
    Transmitting,
    AwaitingAck,
}

pub struct MacJob {
    pub fif: FrameInFlight,
    pub dst: ShortAddr,
}

pub struct CurrentOp {
    pub job: MacJob,
    pub attempts: u32,
    pub redraws: u32,
    /// Distinguishes timer events of this operation from stale ones.
    pub tag: u64,
    pub phase: MacPhase,
}

/// Per-node MAC state. One operation at a time; the rest wait in FIFO
/// order.
#[derive(Default)]
pub struct Mac {
    queue: VecDeque<MacJob>,
    pub current: Option<CurrentOp>,
    next_tag: u64,
    /// Reserved until this time for an ACK we owe (carrier sensing treats
    /// the reservation as busy so the turnaround window stays clear).
    pub reserved_until_us: u64,
}

impl Mac {
    /// Queue a frame. `Ok(true)` means the caller must start the backoff
    /// cycle (the MAC was idle); `Err(())` means the queue was full and
    /// the frame was dropped.
    pub fn enqueue(&mut self, job: MacJob) -> Result<bool, ()> {
        if self.queue.len() >= QUEUE_CAP {
            return Err(());
        }
        self.queue.push_back(job);
        Ok(self.current.is_none())
    }

    /// Pull the next job into the current slot and hand out its tag.
    pub fn begin_next(&mut self) -> Option<u64> {
        debug_assert!(self.current.is_none());
        let job = self.queue.pop_front()?;
        let tag = self.next_tag;
        self.next_tag += 1;
        self.current = Some(CurrentOp {
            job,
            attempts: 0,
            redraws: 0,
            tag,
            phase: MacPhase::Backoff,
        });
        Some(tag)
    }

    pub fn finish_current(&mut self) -> Option<MacJob> {
        self.current.take().map(|c| c.job)
    }

    pub fn is_current(&self, tag: u64, phase: MacPhase) -> bool {
        self.current
            .as_ref()
            .is_some_and(|c| c.tag == tag && c.phase == phase)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }
}
