//! Overhearing-based neighbor discovery and link-quality estimation.
//!
//! Every successfully received frame — addressed or not — upserts the
//! transmitter's record. RSSI and last-heard come from overhearing; ETX is
//! updated only by unicast transmission outcomes reported by the MAC.

use std::collections::BTreeMap;

use crate::packet::ShortAddr;

/// ETX fixed-point unit: 1.0 expected transmissions.
pub const ETX_ONE: u16 = 128;
/// Upper bound on the estimate (16 expected transmissions).
pub const ETX_MAX: u16 = 128 * 16;

#[derive(Clone, Copy, Debug)]
pub struct NeighborRecord {
    pub addr: ShortAddr,
    pub rssi_dbm: i16,
    pub etx_x128: u16,
    pub last_heard_us: u64,
}

#[derive(Default)]
pub struct NeighborTable {
    records: BTreeMap<ShortAddr, NeighborRecord>,
}

impl NeighborTable {
    /// Upsert from an overheard frame. Returns true when the record is new.
    pub fn overhear(&mut self, addr: ShortAddr, rssi_dbm: i16, now_us: u64) -> bool {
        match self.records.get_mut(&addr) {
            Some(r) => {
                r.rssi_dbm = rssi_dbm;
                r.last_heard_us = now_us;
                false
            }
            None => {
                self.records.insert(
                    addr,
                    NeighborRecord {
                        addr,
                        rssi_dbm,
                        etx_x128: ETX_ONE,
                        last_heard_us: now_us,
                    },
                );
                true
            }
        }
    }

    /// EWMA update from a unicast outcome: `attempts` transmissions were
    /// needed (MAC failure is reported as max attempts + 1).
    ///
    /// etx <- ceil(0.9 * etx + 0.1 * attempts*128), clamped to
    /// [128, 2048]; fixed-point integer arithmetic so replays are exact.
    pub fn etx_update(&mut self, addr: ShortAddr, attempts: u32, now_us: u64) -> u16 {
        let r = self.records.entry(addr).or_insert(NeighborRecord {
            addr,
            rssi_dbm: 0,
            etx_x128: ETX_ONE,
            last_heard_us: now_us,
        });
        let new = (9 * r.etx_x128 as u64 + attempts as u64 * 128).div_ceil(10);
        r.etx_x128 = (new as u16).clamp(ETX_ONE, ETX_MAX);
        r.etx_x128
    }

    /// Current estimate; 1.0 for unknown neighbors (first contact).
    pub fn etx(&self, addr: ShortAddr) -> u16 {
        self.records.get(&addr).map_or(ETX_ONE, |r| r.etx_x128)
    }

    pub fn get(&self, addr: ShortAddr) -> Option<&NeighborRecord> {
        self.records.get(&addr)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Drop records not heard within `max_age_us`.
    pub fn purge(&mut self, now_us: u64, max_age_us: u64) -> Vec<ShortAddr> {
        let dead: Vec<ShortAddr> = self
            .records
            .values()
            .filter(|r| now_us.saturating_sub(r.last_heard_us) > max_age_us)
            .map(|r| r.addr)
            .collect();
        for a in &dead {
            self.records.remove(a);
        }
        dead
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_overhear_initializes_at_etx_one() {
        let mut t = NeighborTable::default();
        assert!(t.overhear(ShortAddr(9), -55, 100));
        let r = t.get(ShortAddr(9)).unwrap();
        assert_eq!(r.etx_x128, 128);
        assert_eq!(r.rssi_dbm, -55);
        assert_eq!(r.last_heard_us, 100);
    }

    #[test]
    fn overhear_upserts_single_record() {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(9), -55, 0);
        assert!(!t.overhear(ShortAddr(9), -60, 10_000_000));
        assert_eq!(t.len(), 1);
        assert_eq!(t.get(ShortAddr(9)).unwrap().last_heard_us, 10_000_000);
    }

    #[test]
    fn purged_neighbor_recreated_on_next_overhear() {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(9), -55, 0);
        let gone = t.purge(10_000_000, 1_000_000);
        assert_eq!(gone, vec![ShortAddr(9)]);
        assert!(t.overhear(ShortAddr(9), -58, 11_000_000));
    }

    #[test]
    fn etx_success_first_try_is_fixed_point() {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(2), -50, 0);
        assert_eq!(t.etx_update(ShortAddr(2), 1, 1), 128);
    }

    #[test]
    fn etx_single_retry_ewma() {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(2), -50, 0);
        // ceil(0.9*128 + 0.1*256) = ceil(140.8) = 141.
        assert_eq!(t.etx_update(ShortAddr(2), 2, 1), 141);
    }

    #[test]
    fn etx_converges_to_attempt_count() {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(2), -50, 0);
        let mut last = 0;
        for i in 0..60 {
            last = t.etx_update(ShortAddr(2), 2, i);
        }
        // Geometric approach to 2.0 x 128 = 256, within one unit.
        assert!((255..=256).contains(&last), "etx {last}");
    }

    #[test]
    fn etx_clamped_at_bounds() {
        let mut t = NeighborTable::default();
        t.overhear(ShortAddr(2), -50, 0);
        for i in 0..200 {
            t.etx_update(ShortAddr(2), 17, i);
        }
        assert_eq!(t.etx(ShortAddr(2)), ETX_MAX);
    }
}
