//! Idealized store-and-forward pipeline measurement.
//!
//! Compares the two forwarding disciplines over a chain of independent
//! full-duplex links with uniform airtime and zero processing cost:
//! mesh-under relays each fragment as soon as it arrives, route-over
//! relays only once the whole datagram has been reassembled. The
//! completion time is measured by running the schedule as discrete
//! events, not computed from a closed form — the closed forms
//! `(hops + fragments - 1) * airtime` and `hops * fragments * airtime`
//! are what the tests assert against.

use std::collections::VecDeque;

use crate::sim::queue::EventQueue;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ForwardingMode {
    MeshUnder,
    RouteOver,
}

#[derive(Clone, Copy, Debug)]
enum PipeEv {
    /// Fragment fully received at a node.
    Arrived { node: usize, frag: usize },
    /// Link out of `node` became free.
    LinkFree { node: usize },
}

/// Time for `fragments` fragments of one datagram to fully arrive at the
/// end of a chain of `hops` links, each with the given airtime.
pub fn completion_time_us(
    mode: ForwardingMode,
    hops: usize,
    fragments: usize,
    airtime_us: u64,
) -> u64 {
    assert!(hops >= 1 && fragments >= 1);
    let nodes = hops + 1;
    let mut queue: EventQueue<PipeEv> = EventQueue::default();
    // Per forwarding node: fragments ready to transmit, link state, and
    // how many fragments have arrived (route-over holds until all have).
    let mut ready: Vec<VecDeque<usize>> = vec![VecDeque::new(); nodes];
    let mut link_busy: Vec<bool> = vec![false; nodes];
    let mut arrived_count: Vec<usize> = vec![0; nodes];
    let mut done = 0usize;
    let mut last_arrival = 0u64;

    for f in 0..fragments {
        queue.schedule(0, PipeEv::Arrived { node: 0, frag: f });
    }

    fn try_start(
        node: usize,
        now: u64,
        airtime: u64,
        ready: &mut [VecDeque<usize>],
        link_busy: &mut [bool],
        queue: &mut EventQueue<PipeEv>,
    ) {
        if link_busy[node] {
            return;
        }
        if let Some(frag) = ready[node].pop_front() {
            link_busy[node] = true;
            queue.schedule(
                now + airtime,
                PipeEv::Arrived {
                    node: node + 1,
                    frag,
                },
            );
            queue.schedule(now + airtime, PipeEv::LinkFree { node });
        }
    }

    while let Some((now, ev)) = queue.pop() {
        match ev {
            PipeEv::Arrived { node, frag } => {
                if node == hops {
                    done += 1;
                    last_arrival = now;
                    if done == fragments {
                        break;
                    }
                    continue;
                }
                arrived_count[node] += 1;
                match mode {
                    ForwardingMode::MeshUnder => {
                        // Forward each fragment independently.
                        ready[node].push_back(frag);
                        try_start(node, now, airtime_us, &mut ready, &mut link_busy, &mut queue);
                    }
                    ForwardingMode::RouteOver => {
                        // Hold until the datagram is complete, then
                        // release all fragments in order.
                        if arrived_count[node] == fragments {
                            for f in 0..fragments {
                                ready[node].push_back(f);
                            }
                            try_start(
                                node,
                                now,
                                airtime_us,
                                &mut ready,
                                &mut link_busy,
                                &mut queue,
                            );
                        }
                    }
                }
            }
            PipeEv::LinkFree { node } => {
                link_busy[node] = false;
                try_start(node, now, airtime_us, &mut ready, &mut link_busy, &mut queue);
            }
        }
    }
    last_arrival
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_under_pipelines_fragments() {
        // (hops + fragments - 1) * airtime, exactly.
        for hops in 1..=6 {
            for frags in 1..=6 {
                let t = completion_time_us(ForwardingMode::MeshUnder, hops, frags, 1000);
                assert_eq!(
                    t,
                    (hops + frags - 1) as u64 * 1000,
                    "hops={hops} frags={frags}"
                );
            }
        }
    }

    #[test]
    fn route_over_stores_and_forwards() {
        // hops * fragments * airtime, exactly.
        for hops in 1..=6 {
            for frags in 1..=6 {
                let t = completion_time_us(ForwardingMode::RouteOver, hops, frags, 1000);
                assert_eq!(t, (hops * frags) as u64 * 1000, "hops={hops} frags={frags}");
            }
        }
    }

    #[test]
    fn single_hop_modes_agree() {
        for frags in 1..=6 {
            let m = completion_time_us(ForwardingMode::MeshUnder, 1, frags, 777);
            let r = completion_time_us(ForwardingMode::RouteOver, 1, frags, 777);
            assert_eq!(m, r);
        }
    }
}
