//! Packet-level marking and the drop-largest-DP-from-head FIFO.

use std_alloc::collections::VecDeque;
use std_alloc::vec;
use std_alloc::vec::Vec;

use crate::{bytes_to_gbit, Error, Matrix, Result};

/// Outcome of marking a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Marking {
    /// Drop precedence, 0-based (0 is green in trTCM terms).
    Dp(u8),
    /// Out of profile on every drop precedence.
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub size: u32,
    pub arrival: f64,
    pub marking: Marking,
}

/// Token buckets of one marker. Levels are in Gbit.
#[derive(Debug, Clone)]
pub struct MarkerState {
    rates: Matrix,
    bucket_sizes: Matrix,
    levels: Matrix,
    last_update: f64,
}

impl MarkerState {
    /// A marker with every bucket full at time `start`.
    ///
    /// `bucket_sizes` are the packet-level sizes, see
    /// [`packet_bucket_sizes`](crate::profile::packet_bucket_sizes).
    pub fn new(rates: Matrix, bucket_sizes: Matrix, start: f64) -> Result<Self> {
        if rates.shape() != bucket_sizes.shape() {
            return Err(Error::Shape {
                expected: rates.shape(),
                got: bucket_sizes.shape(),
            });
        }
        if rates.rows() > usize::from(u8::MAX) + 1 {
            return Err(Error::InvalidProfile("too many drop precedences".into()));
        }
        Ok(Self {
            levels: bucket_sizes.clone(),
            rates,
            bucket_sizes,
            last_update: start,
        })
    }

    /// Replaces the token levels; each is clamped into `[0, BS*]`.
    pub fn with_levels(mut self, levels: Matrix) -> Result<Self> {
        self.levels = levels.zip_map(&self.bucket_sizes, |l, cap| l.clamp(0.0, cap))?;
        Ok(self)
    }

    pub fn levels(&self) -> &Matrix {
        &self.levels
    }

    pub fn bucket_sizes(&self) -> &Matrix {
        &self.bucket_sizes
    }

    pub fn last_update(&self) -> f64 {
        self.last_update
    }

    /// Accrues tokens continuously at `R[dp,ts]`, capped at the bucket size.
    pub fn refill(&mut self, now: f64) -> Result<()> {
        if now < self.last_update {
            return Err(Error::TimeRegression {
                now,
                last: self.last_update,
            });
        }
        let dt = now - self.last_update;
        if dt > 0.0 {
            for dp in 0..self.levels.rows() {
                for ts in 0..self.levels.cols() {
                    let level = self.levels[(dp, ts)] + self.rates[(dp, ts)] * dt;
                    self.levels[(dp, ts)] = level.min(self.bucket_sizes[(dp, ts)]);
                }
            }
        }
        self.last_update = now;
        Ok(())
    }

    /// Marks a packet with the smallest drop precedence whose buckets all
    /// hold at least `size_bytes` worth of tokens, and takes the tokens from
    /// every bucket of that precedence. Nothing is taken for red packets.
    pub fn mark(&mut self, size_bytes: u32, now: f64) -> Result<Marking> {
        self.refill(now)?;
        let need = bytes_to_gbit(f64::from(size_bytes));
        let fits = |dp: usize| self.levels.row(dp).iter().all(|&l| l >= need);
        match (0..self.levels.rows()).find(|&dp| fits(dp)) {
            Some(dp) => {
                for l in self.levels.row_mut(dp) {
                    *l = (*l - need).max(0.0);
                }
                Ok(Marking::Dp(dp as u8))
            }
            None => Ok(Marking::Red),
        }
    }
}

/// FIFO buffer that, when full, drops the head-most packet of the largest
/// drop precedence present.
#[derive(Debug, Clone)]
pub struct DpFifo {
    capacity: u64,
    packets: VecDeque<Packet>,
    occupancy: u64,
    // buffered packets per drop precedence
    per_dp: Vec<usize>,
}

impl DpFifo {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity: capacity_bytes,
            packets: VecDeque::new(),
            occupancy: 0,
            per_dp: Vec::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    /// Largest drop precedence currently buffered.
    pub fn max_dp(&self) -> Option<u8> {
        self.per_dp.iter().rposition(|&n| n > 0).map(|dp| dp as u8)
    }

    /// Appends `p`, first making room by dropping. Returns the dropped
    /// packets in drop order. When `p` ties for the largest drop precedence
    /// it is the one dropped; red packets are dropped on arrival.
    pub fn enqueue(&mut self, p: Packet) -> Vec<Packet> {
        let dp = match p.marking {
            Marking::Dp(dp) => dp,
            Marking::Red => return vec![p],
        };
        let size = u64::from(p.size);
        if size > self.capacity {
            return vec![p];
        }
        let mut dropped = Vec::new();
        while self.occupancy + size > self.capacity {
            match self.max_dp() {
                Some(max) if max > dp => {
                    let at = self
                        .packets
                        .iter()
                        .position(|q| q.marking == Marking::Dp(max))
                        .expect("per-DP count out of sync");
                    let victim = self.packets.remove(at).expect("position in range");
                    self.forget(&victim, max);
                    dropped.push(victim);
                }
                _ => {
                    dropped.push(p);
                    return dropped;
                }
            }
        }
        let idx = usize::from(dp);
        if self.per_dp.len() <= idx {
            self.per_dp.resize(idx + 1, 0);
        }
        self.per_dp[idx] += 1;
        self.occupancy += size;
        self.packets.push_back(p);
        dropped
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        let p = self.packets.pop_front()?;
        if let Marking::Dp(dp) = p.marking {
            self.forget(&p, dp);
        }
        Some(p)
    }

    fn forget(&mut self, p: &Packet, dp: u8) {
        self.per_dp[usize::from(dp)] -= 1;
        self.occupancy -= u64::from(p.size);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::trtcm_profile;

    fn pkt(size: u32, dp: u8) -> Packet {
        Packet {
            size,
            arrival: 0.0,
            marking: Marking::Dp(dp),
        }
    }

    fn one_bucket(rate: f64, size: f64, level: f64) -> MarkerState {
        MarkerState::new(
            Matrix::from_rows(&[[rate]]).unwrap(),
            Matrix::from_rows(&[[size]]).unwrap(),
            0.0,
        )
        .unwrap()
        .with_levels(Matrix::from_rows(&[[level]]).unwrap())
        .unwrap()
    }

    #[test]
    fn refill_zero_interval_is_noop() {
        let mut m = one_bucket(2.0, 1.0, 0.5);
        m.refill(0.0).unwrap();
        assert_eq!(m.levels()[(0, 0)], 0.5);
    }

    #[test]
    fn refill_caps_at_bucket_size() {
        let mut m = one_bucket(2.0, 1.0, 0.0);
        m.refill(1.0).unwrap();
        assert_eq!(m.levels()[(0, 0)], 1.0);
    }

    #[test]
    fn refill_is_linear() {
        let mut m = one_bucket(2.0, 1.0, 0.5);
        m.refill(0.1).unwrap();
        assert!((m.levels()[(0, 0)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn refill_rejects_time_regression() {
        let mut m = one_bucket(2.0, 1.0, 0.5);
        m.refill(1.0).unwrap();
        assert!(matches!(m.refill(0.5), Err(Error::TimeRegression { .. })));
    }

    #[test]
    fn trtcm_green_first() {
        let cbs = bytes_to_gbit(10_000.0);
        let p = trtcm_profile(2.0, 8.0, cbs, cbs).unwrap();
        let mut m = MarkerState::new(p.rates().clone(), p.bucket_sizes().clone(), 0.0).unwrap();
        assert_eq!(m.mark(1000, 0.0).unwrap(), Marking::Dp(0));
        assert!((m.levels()[(0, 0)] - bytes_to_gbit(9000.0)).abs() < 1e-18);
        assert_eq!(m.levels()[(1, 0)], cbs);
    }

    #[test]
    fn empty_buckets_mark_red_without_side_effects() {
        let p = trtcm_profile(2.0, 8.0, 1e-5, 1e-5).unwrap();
        let mut m = MarkerState::new(p.rates().clone(), p.bucket_sizes().clone(), 0.0)
            .unwrap()
            .with_levels(Matrix::zeros(2, 1))
            .unwrap();
        assert_eq!(m.mark(1000, 0.0).unwrap(), Marking::Red);
        assert!(m.levels().iter().all(|l| l == 0.0));
    }

    #[test]
    fn falls_through_to_next_dp() {
        let rates = Matrix::from_rows(&[
            [2.0, 2.0, 2.0, 0.75],
            [4.0, 2.0, 1.0, 0.25],
            [10.0, 10.0, 1.0, 1.0],
            [10.0, 10.0, 10.0, 10.0],
        ])
        .unwrap();
        let bs = Matrix::filled(4, 4, 0.02);
        let mut levels = bs.clone();
        levels[(0, 3)] = 0.0;
        let mut m = MarkerState::new(rates, bs, 0.0)
            .unwrap()
            .with_levels(levels)
            .unwrap();
        assert_eq!(m.mark(1500, 0.0).unwrap(), Marking::Dp(1));
        assert!(m.levels().row(0)[..3].iter().all(|&l| l == 0.02));
        assert!(m.levels().row(1).iter().all(|&l| l < 0.02));
    }

    #[test]
    fn drops_first_packet_of_largest_dp() {
        let mut q = DpFifo::new(400);
        for dp in [0, 2, 1, 2] {
            assert!(q.enqueue(pkt(100, dp)).is_empty());
        }
        let dropped = q.enqueue(pkt(100, 1));
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].marking, Marking::Dp(2));
        let left: Vec<_> = q.iter().map(|p| p.marking).collect();
        assert_eq!(
            left,
            vec![Marking::Dp(0), Marking::Dp(1), Marking::Dp(2), Marking::Dp(1)]
        );
        assert_eq!(q.occupancy(), 400);
    }

    #[test]
    fn arrival_with_largest_dp_is_dropped() {
        let mut q = DpFifo::new(200);
        q.enqueue(pkt(100, 0));
        q.enqueue(pkt(100, 0));
        let dropped = q.enqueue(pkt(100, 3));
        assert_eq!(dropped, vec![pkt(100, 3)]);
        assert_eq!(q.len(), 2);
        // tie goes against the arrival too
        let dropped = q.enqueue(pkt(100, 0));
        assert_eq!(dropped, vec![pkt(100, 0)]);
    }

    #[test]
    fn oversized_and_red_packets_dropped() {
        let mut q = DpFifo::new(100);
        assert_eq!(q.enqueue(pkt(101, 0)).len(), 1);
        let red = Packet {
            size: 10,
            arrival: 0.0,
            marking: Marking::Red,
        };
        assert_eq!(q.enqueue(red), vec![red]);
        assert!(q.is_empty());
    }

    #[test]
    fn fifo_order() {
        let mut q = DpFifo::new(1000);
        assert_eq!(q.dequeue(), None);
        q.enqueue(pkt(1, 0));
        q.enqueue(pkt(2, 1));
        assert_eq!(q.dequeue(), Some(pkt(1, 0)));
        assert_eq!(q.dequeue(), Some(pkt(2, 1)));
        assert_eq!(q.dequeue(), None);
        assert_eq!(q.occupancy(), 0);
    }

    #[test]
    fn multiple_drops_to_fit_large_arrival() {
        let mut q = DpFifo::new(300);
        for dp in [3, 0, 3] {
            q.enqueue(pkt(100, dp));
        }
        let dropped = q.enqueue(pkt(200, 1));
        assert_eq!(dropped, vec![pkt(100, 3), pkt(100, 3)]);
        assert_eq!(q.max_dp(), Some(1));
    }
}
