//! RPL-lite: DIO processing, rank and preferred-parent maintenance with a
//! simplified trickle timer, plus the storing-mode pieces the baseline
//! needs (DAO cycle and the downward routing table).
//!
//! Both stacks run the DIO side: the SDN mode uses the DODAG only for
//! upward connectivity to the border router (no DAOs at all), while the
//! baseline also propagates DAOs to build per-node routing tables.

use std::collections::BTreeMap;

use crate::node::neighbors::NeighborTable;
use crate::packet::ShortAddr;

/// Rank of the DODAG root.
pub const ROOT_RANK: u16 = 256;
/// Rank of a node that has not joined.
pub const RANK_INFINITE: u16 = u16::MAX;
/// A candidate parent must beat the current path rank by this much
/// (1.5 ETX units) before the node switches.
pub const PARENT_HYSTERESIS_X128: u16 = 192;
/// Smallest trickle interval.
pub const TRICKLE_IMIN_US: u64 = 4_000_000;
/// Interval doublings: the interval grows from 4 s up to 1024 s.
pub const TRICKLE_DOUBLINGS: u32 = 8;
/// Modeled compressed size of a DIO datagram.
pub const DIO_BYTES: u16 = 76;
/// Modeled compressed size of a DAO datagram.
pub const DAO_BYTES: u16 = 40;

/// What processing a DIO asked the caller to do.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DioOutcome {
    /// Nothing changed.
    None,
    /// First parent adopted: the node just joined the DODAG.
    Joined,
    /// Preferred parent switched to the DIO sender.
    ParentChanged,
    /// Same parent, refreshed rank information.
    RankRefreshed,
}

pub struct Rpl {
    pub is_root: bool,
    pub rank: u16,
    pub preferred_parent: Option<ShortAddr>,
    parent_rank: u16,
    pub root_addr: Option<ShortAddr>,
    /// Current trickle interval.
    pub interval_us: u64,
    /// Bumped on every trickle reset so stale timer events are ignored.
    pub trickle_gen: u64,
}

impl Rpl {
    pub fn new_root(own_addr: ShortAddr) -> Self {
        Rpl {
            is_root: true,
            rank: ROOT_RANK,
            preferred_parent: None,
            parent_rank: 0,
            root_addr: Some(own_addr),
            interval_us: TRICKLE_IMIN_US,
            trickle_gen: 0,
        }
    }

    pub fn new_node() -> Self {
        Rpl {
            is_root: false,
            rank: RANK_INFINITE,
            preferred_parent: None,
            parent_rank: 0,
            root_addr: None,
            interval_us: TRICKLE_IMIN_US,
            trickle_gen: 0,
        }
    }

    pub fn joined(&self) -> bool {
        self.is_root || self.preferred_parent.is_some()
    }

    /// Process a received DIO. Neighbor link quality comes from the
    /// caller's neighbor table; the candidate path rank is the sender's
    /// advertised rank plus the measured ETX towards it.
    pub fn on_dio(
        &mut self,
        sender: ShortAddr,
        sender_rank: u16,
        root: ShortAddr,
        neighbors: &NeighborTable,
    ) -> DioOutcome {
        if self.is_root {
            return DioOutcome::None;
        }
        let etx = neighbors.etx(sender);
        let candidate_path = sender_rank.saturating_add(etx);

        if self.preferred_parent == Some(sender) {
            self.parent_rank = sender_rank;
            self.rank = candidate_path;
            self.root_addr = Some(root);
            return DioOutcome::RankRefreshed;
        }
        // Only neighbors advertising a lower rank are parent material.
        if sender_rank >= self.rank {
            return DioOutcome::None;
        }
        if self.preferred_parent.is_none() {
            self.preferred_parent = Some(sender);
            self.parent_rank = sender_rank;
            self.rank = candidate_path;
            self.root_addr = Some(root);
            self.reset_trickle();
            return DioOutcome::Joined;
        }
        if candidate_path.saturating_add(PARENT_HYSTERESIS_X128) < self.rank {
            self.preferred_parent = Some(sender);
            self.parent_rank = sender_rank;
            self.rank = candidate_path;
            self.root_addr = Some(root);
            self.reset_trickle();
            return DioOutcome::ParentChanged;
        }
        DioOutcome::None
    }

    /// Recompute the advertised rank after an ETX change on the parent
    /// link.
    pub fn refresh_rank(&mut self, neighbors: &NeighborTable) {
        if let Some(p) = self.preferred_parent {
            self.rank = self.parent_rank.saturating_add(neighbors.etx(p));
        }
    }

    pub fn reset_trickle(&mut self) {
        self.interval_us = TRICKLE_IMIN_US;
        self.trickle_gen += 1;
    }

    /// Double the interval at the end of each trickle period, up to
    /// i_min * 2^doublings.
    pub fn grow_interval(&mut self) {
        let max = TRICKLE_IMIN_US << TRICKLE_DOUBLINGS;
        self.interval_us = (self.interval_us * 2).min(max);
    }
}

#[derive(Clone, Copy, Debug)]
struct Route {
    next_hop: ShortAddr,
    refreshed_at_us: u64,
}

/// Storing-mode downward routes, learned from DAOs (baseline only).
pub struct RoutingTable {
    routes: BTreeMap<ShortAddr, Route>,
    capacity: usize,
    /// Routes expire after this many missed DAO periods.
    pub expiry_us: u64,
}

/// Default routing-table capacity.
pub const ROUTING_CAPACITY: usize = 40;
/// DAO emission period (baseline).
pub const DAO_PERIOD_S: u32 = 60;
/// Routes survive three missed DAO periods.
pub const DAO_MISSED_PERIODS: u32 = 3;

impl RoutingTable {
    pub fn new(capacity: usize, dao_period_s: u32) -> Self {
        RoutingTable {
            routes: BTreeMap::new(),
            capacity,
            expiry_us: DAO_MISSED_PERIODS as u64 * dao_period_s as u64 * 1_000_000,
        }
    }

    /// Record one advertised address from a DAO sent by `child`.
    /// Returns false when the table is full and the route was rejected.
    pub fn learn(&mut self, advertised: ShortAddr, child: ShortAddr, now_us: u64) -> bool {
        if let Some(r) = self.routes.get_mut(&advertised) {
            r.next_hop = child;
            r.refreshed_at_us = now_us;
            return true;
        }
        if self.routes.len() >= self.capacity {
            return false;
        }
        self.routes.insert(
            advertised,
            Route {
                next_hop: child,
                refreshed_at_us: now_us,
            },
        );
        true
    }

    pub fn next_hop(&self, dst: ShortAddr) -> Option<ShortAddr> {
        self.routes.get(&dst).map(|r| r.next_hop)
    }

    /// Destinations currently known, for bundling into the next DAO.
    pub fn destinations(&self) -> Vec<ShortAddr> {
        self.routes.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn purge(&mut self, now_us: u64) -> usize {
        let before = self.routes.len();
        let expiry = self.expiry_us;
        self.routes
            .retain(|_, r| now_us.saturating_sub(r.refreshed_at_us) <= expiry);
        before - self.routes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_with(addr: u16, etx: u16) -> NeighborTable {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(addr), -50, 0);
        if etx != 128 {
            // Drive the EWMA to an exact value for the test.
            for i in 0..400 {
                t.etx_update(ShortAddr(addr), (etx / 128) as u32, i);
            }
            assert_eq!(t.etx(ShortAddr(addr)), etx);
        }
        t
    }

    #[test]
    fn fresh_node_adopts_root() {
        let mut rpl = Rpl::new_node();
        let nbrs = table_with(1, 128);
        let out = rpl.on_dio(ShortAddr(1), ROOT_RANK, ShortAddr(1), &nbrs);
        assert_eq!(out, DioOutcome::Joined);
        assert_eq!(rpl.preferred_parent, Some(ShortAddr(1)));
        assert_eq!(rpl.rank, 384);
        assert_eq!(rpl.root_addr, Some(ShortAddr(1)));
    }

    #[test]
    fn higher_rank_dio_rejected() {
        let mut rpl = Rpl::new_node();
        let nbrs = table_with(1, 128);
        rpl.on_dio(ShortAddr(1), ROOT_RANK, ShortAddr(1), &nbrs);
        assert_eq!(rpl.rank, 384);
        let out = rpl.on_dio(ShortAddr(9), 512, ShortAddr(1), &nbrs);
        assert_eq!(out, DioOutcome::None);
        assert_eq!(rpl.preferred_parent, Some(ShortAddr(1)));
    }

    #[test]
    fn hysteresis_gates_parent_switch() {
        let mut rpl = Rpl::new_node();
        let mut nbrs = NeighborTable::default();
        nbrs.overhear(ShortAddr(4), -50, 0);
        nbrs.overhear(ShortAddr(2), -50, 0);
        // Join via node 4 at path rank 640 (sender rank 512 + etx 128).
        rpl.on_dio(ShortAddr(4), 512, ShortAddr(1), &nbrs);
        assert_eq!(rpl.rank, 640);
        // Candidate: rank 256 + etx 128 = 384; 384 + 192 = 576 < 640.
        let out = rpl.on_dio(ShortAddr(2), 256, ShortAddr(1), &nbrs);
        assert_eq!(out, DioOutcome::ParentChanged);
        assert_eq!(rpl.preferred_parent, Some(ShortAddr(2)));
        assert_eq!(rpl.rank, 384);
    }

    #[test]
    fn marginal_improvement_does_not_flap() {
        let mut rpl = Rpl::new_node();
        let mut nbrs = NeighborTable::default();
        nbrs.overhear(ShortAddr(4), -50, 0);
        nbrs.overhear(ShortAddr(2), -50, 0);
        rpl.on_dio(ShortAddr(4), 384, ShortAddr(1), &nbrs);
        assert_eq!(rpl.rank, 512);
        // Candidate path 384 + 192 hysteresis = 576 >= 512: stay.
        let out = rpl.on_dio(ShortAddr(2), 256, ShortAddr(1), &nbrs);
        assert_eq!(out, DioOutcome::None);
        assert_eq!(rpl.preferred_parent, Some(ShortAddr(4)));
    }

    #[test]
    fn root_ignores_dios() {
        let mut rpl = Rpl::new_root(ShortAddr(1));
        let nbrs = table_with(2, 128);
        assert_eq!(
            rpl.on_dio(ShortAddr(2), 384, ShortAddr(1), &nbrs),
            DioOutcome::None
        );
        assert_eq!(rpl.rank, ROOT_RANK);
    }

    #[test]
    fn trickle_reset_and_growth() {
        let mut rpl = Rpl::new_node();
        assert_eq!(rpl.interval_us, 4_000_000);
        for _ in 0..12 {
            rpl.grow_interval();
        }
        // Capped at 4 s * 2^8 = 1024 s.
        assert_eq!(rpl.interval_us, 1_024_000_000);
        let gen = rpl.trickle_gen;
        rpl.reset_trickle();
        assert_eq!(rpl.interval_us, 4_000_000);
        assert_eq!(rpl.trickle_gen, gen + 1);
    }

    #[test]
    fn routing_table_learn_refresh_reject() {
        let mut rt = RoutingTable::new(2, 60);
        assert!(rt.learn(ShortAddr(10), ShortAddr(2), 0));
        assert!(rt.learn(ShortAddr(11), ShortAddr(2), 0));
        // Full: new destination rejected.
        assert!(!rt.learn(ShortAddr(12), ShortAddr(3), 0));
        // Refresh of a known destination still works and can move.
        assert!(rt.learn(ShortAddr(10), ShortAddr(3), 5));
        assert_eq!(rt.next_hop(ShortAddr(10)), Some(ShortAddr(3)));
    }

    #[test]
    fn routes_expire_after_three_periods() {
        let mut rt = RoutingTable::new(40, 60);
        rt.learn(ShortAddr(10), ShortAddr(2), 0);
        assert_eq!(rt.purge(180_000_000), 0);
        assert_eq!(rt.purge(180_000_001), 1);
        assert!(rt.next_hop(ShortAddr(10)).is_none());
    }
}
