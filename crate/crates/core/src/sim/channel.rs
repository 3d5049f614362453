//! Unit disk graph medium: hard reception disk, larger interference disk,
//! and per-link success probabilities.
//!
//! Reception of a transmission is decided in two steps: a Bernoulli draw
//! against `p_tx_success * p_rx_success` made when the transmission starts
//! (one draw per in-range receiver, in ascending node order), and a
//! collision check made when it ends — any other transmission overlapping
//! in time whose transmitter is within the receiver's interference disk
//! (or the receiver itself transmitting) destroys the frame.

use std::collections::BTreeMap;

use crate::sim::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub struct UdgmParams {
    pub tx_range_m: f64,
    pub interference_range_m: f64,
    pub p_tx_success: f64,
    pub p_rx_success: f64,
}

impl Default for UdgmParams {
    fn default() -> Self {
        UdgmParams {
            tx_range_m: 60.0,
            interference_range_m: 90.0,
            p_tx_success: 1.0,
            p_rx_success: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
}

/// Per-receiver outcome of one finished transmission.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RxOutcome {
    Delivered,
    LostToDraw,
    Collided,
}

struct ActiveTx {
    tx: usize,
    start_us: u64,
    end_us: u64,
    /// (receiver, loss-draw passed), ascending by receiver index.
    draws: Vec<(usize, bool)>,
}

/// The shared radio medium.
pub struct Radio {
    params: UdgmParams,
    positions: Vec<Position>,
    /// Per node: nodes within its reception disk (ascending).
    in_range: Vec<Vec<usize>>,
    /// Per node: nodes whose transmissions interfere at it (ascending).
    interferers: Vec<Vec<usize>>,
    live: BTreeMap<u64, ActiveTx>,
    /// Finished transmissions kept until they cannot overlap anything.
    recent: Vec<(u64, ActiveTx)>,
    next_id: u64,
}

impl Radio {
    pub fn new(positions: Vec<Position>, params: UdgmParams) -> Self {
        let n = positions.len();
        let dist = |a: &Position, b: &Position| {
            ((a.x_m - b.x_m).powi(2) + (a.y_m - b.y_m).powi(2)).sqrt()
        };
        let mut in_range = vec![Vec::new(); n];
        let mut interferers = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = dist(&positions[i], &positions[j]);
                if d <= params.tx_range_m {
                    in_range[i].push(j);
                }
                if d <= params.interference_range_m {
                    interferers[i].push(j);
                }
            }
        }
        Radio {
            params,
            positions,
            in_range,
            interferers,
            live: BTreeMap::new(),
            recent: Vec::new(),
            next_id: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.in_range[node]
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (&self.positions[a], &self.positions[b]);
        ((pa.x_m - pb.x_m).powi(2) + (pa.y_m - pb.y_m).powi(2)).sqrt()
    }

    /// Modeled received power: -10 dBm at zero distance falling linearly
    /// to -90 dBm at the edge of the reception disk.
    pub fn rssi_dbm(&self, tx: usize, rx: usize) -> i16 {
        let d = self.distance(tx, rx);
        let frac = (d / self.params.tx_range_m).min(1.0);
        -10 - (80.0 * frac).round() as i16
    }

    /// Carrier sense: the medium is busy at `node` if any live
    /// transmission is audible there (its own included).
    pub fn busy_for(&self, node: usize, now_us: u64) -> bool {
        self.live.values().any(|t| {
            t.end_us > now_us && (t.tx == node || self.interferers[node].contains(&t.tx))
        })
    }

    /// True while `node` itself has a transmission on the air.
    pub fn transmitting(&self, node: usize, now_us: u64) -> bool {
        self.live.values().any(|t| t.tx == node && t.end_us > now_us)
    }

    /// Start a transmission of `bytes` at `now`. Returns the transmission
    /// id and its end time.
    pub fn begin_tx(
        &mut self,
        tx: usize,
        bytes: u16,
        now_us: u64,
        bitrate_bps: u64,
        rng: &mut Rng,
    ) -> (u64, u64) {
        let airtime = bytes as u64 * 8_000_000 / bitrate_bps;
        let end_us = now_us + airtime;
        let p = self.params.p_tx_success * self.params.p_rx_success;
        let draws = self.in_range[tx]
            .iter()
            .map(|&rx| (rx, rng.chance(p)))
            .collect();
        let id = self.next_id;
        self.next_id += 1;
        self.live.insert(
            id,
            ActiveTx {
                tx,
                start_us: now_us,
                end_us,
                draws,
            },
        );
        (id, end_us)
    }

    /// Close out a transmission and decide reception per in-range node.
    pub fn finish_tx(&mut self, id: u64) -> Vec<(usize, RxOutcome)> {
        let done = self.live.remove(&id).expect("unknown transmission");
        let mut outcomes = Vec::with_capacity(done.draws.len());
        for &(rx, draw_ok) in &done.draws {
            let collided = self
                .live
                .values()
                .map(|t| (t.tx, t.start_us, t.end_us))
                .chain(self.recent.iter().map(|(_, t)| (t.tx, t.start_us, t.end_us)))
                .any(|(tx, start, end)| {
                    (tx == rx || self.interferers[rx].contains(&tx))
                        && start < done.end_us
                        && end > done.start_us
                });
            let outcome = if collided {
                RxOutcome::Collided
            } else if !draw_ok {
                RxOutcome::LostToDraw
            } else {
                RxOutcome::Delivered
            };
            outcomes.push((rx, outcome));
        }
        self.recent.retain(|(_, t)| t.end_us + 10_000 > done.end_us);
        self.recent.push((id, done));
        outcomes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(nodes: usize, spacing: f64) -> Vec<Position> {
        (0..nodes)
            .map(|i| Position {
                x_m: i as f64 * spacing,
                y_m: 0.0,
            })
            .collect()
    }

    fn params() -> UdgmParams {
        UdgmParams {
            tx_range_m: 60.0,
            interference_range_m: 90.0,
            p_tx_success: 1.0,
            p_rx_success: 1.0,
        }
    }

    #[test]
    fn delivery_inside_disk_only() {
        // 0 -- 50m -- 1 -- 50m -- 2: node 2 is 100 m from node 0.
        let mut radio = Radio::new(line(3, 50.0), params());
        let mut rng = Rng::new(1);
        let (id, _end) = radio.begin_tx(0, 127, 0, 250_000, &mut rng);
        let outcomes = radio.finish_tx(id);
        assert_eq!(outcomes, vec![(1, RxOutcome::Delivered)]);
    }

    #[test]
    fn airtime_of_full_frame() {
        let mut radio = Radio::new(line(2, 10.0), params());
        let mut rng = Rng::new(1);
        let (_, end) = radio.begin_tx(0, 127, 0, 250_000, &mut rng);
        assert_eq!(end, 4064);
    }

    #[test]
    fn overlapping_transmissions_collide() {
        // Nodes 0 and 2 both reach node 1; simultaneous sends destroy
        // both frames there.
        let mut radio = Radio::new(line(3, 50.0), params());
        let mut rng = Rng::new(1);
        let (a, _) = radio.begin_tx(0, 50, 0, 250_000, &mut rng);
        let (b, _) = radio.begin_tx(2, 50, 100, 250_000, &mut rng);
        let out_a = radio.finish_tx(a);
        assert!(out_a.contains(&(1, RxOutcome::Collided)));
        let out_b = radio.finish_tx(b);
        assert!(out_b.contains(&(1, RxOutcome::Collided)));
    }

    #[test]
    fn interferer_beyond_rx_range_still_destroys() {
        // 0 at x=0, receiver 1 at x=55, far node 2 at x=135: node 2 is
        // 80 m from the receiver - outside reception, inside interference.
        let positions = vec![
            Position { x_m: 0.0, y_m: 0.0 },
            Position { x_m: 55.0, y_m: 0.0 },
            Position { x_m: 135.0, y_m: 0.0 },
        ];
        let mut radio = Radio::new(positions, params());
        let mut rng = Rng::new(1);
        let (a, _) = radio.begin_tx(0, 50, 0, 250_000, &mut rng);
        let (b, _) = radio.begin_tx(2, 50, 500, 250_000, &mut rng);
        let out_a = radio.finish_tx(a);
        assert_eq!(out_a, vec![(1, RxOutcome::Collided)]);
        // Node 2's own frame reaches nobody (node 1 is its only candidate
        // at 80 m, beyond the 60 m disk).
        let out_b = radio.finish_tx(b);
        assert!(out_b.is_empty());
    }

    #[test]
    fn receiver_transmitting_loses_reception() {
        let mut radio = Radio::new(line(2, 50.0), params());
        let mut rng = Rng::new(1);
        let (a, _) = radio.begin_tx(0, 127, 0, 250_000, &mut rng);
        // Node 1 starts its own transmission mid-air (half duplex).
        let (b, _) = radio.begin_tx(1, 20, 2000, 250_000, &mut rng);
        let out = radio.finish_tx(a);
        assert_eq!(out, vec![(1, RxOutcome::Collided)]);
        radio.finish_tx(b);
    }

    #[test]
    fn sequential_transmissions_do_not_collide() {
        let mut radio = Radio::new(line(2, 50.0), params());
        let mut rng = Rng::new(1);
        let (a, end_a) = radio.begin_tx(0, 50, 0, 250_000, &mut rng);
        assert_eq!(radio.finish_tx(a), vec![(1, RxOutcome::Delivered)]);
        let (b, _) = radio.begin_tx(1, 50, end_a, 250_000, &mut rng);
        assert_eq!(radio.finish_tx(b), vec![(0, RxOutcome::Delivered)]);
    }

    #[test]
    fn lossy_profile_draws_against_product() {
        let mut radio = Radio::new(
            line(2, 10.0),
            UdgmParams {
                p_tx_success: 0.9,
                p_rx_success: 0.9,
                ..params()
            },
        );
        let mut rng = Rng::new(99);
        let mut delivered = 0u32;
        let n = 20_000;
        for i in 0..n {
            let (id, _) = radio.begin_tx(0, 10, i as u64 * 10_000, 250_000, &mut rng);
            if radio.finish_tx(id)[0].1 == RxOutcome::Delivered {
                delivered += 1;
            }
        }
        let rate = delivered as f64 / n as f64;
        assert!((rate - 0.81).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn carrier_sense_hears_interference_disk() {
        let positions = vec![
            Position { x_m: 0.0, y_m: 0.0 },
            Position { x_m: 80.0, y_m: 0.0 },
            Position { x_m: 300.0, y_m: 0.0 },
        ];
        let mut radio = Radio::new(positions, params());
        let mut rng = Rng::new(1);
        let (_, end) = radio.begin_tx(0, 127, 0, 250_000, &mut rng);
        // Node 1 at 80 m: inside the interference disk, hears it busy.
        assert!(radio.busy_for(1, 100));
        // Node 2 at 300 m: idle.
        assert!(!radio.busy_for(2, 100));
        // After the transmission ends, everyone is idle.
        assert!(!radio.busy_for(1, end));
    }

    #[test]
    fn rssi_falls_with_distance() {
        let radio = Radio::new(line(3, 30.0), params());
        let near = radio.rssi_dbm(0, 1);
        let far = radio.rssi_dbm(0, 2);
        assert!(near > far);
        assert_eq!(near, -50);
        assert_eq!(far, -90);
    }
}
