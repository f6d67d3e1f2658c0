//! Cross-polarization pulse pair matching, zero-interarrival excision and
//! the global lower-SNR sort that defines trial numbers.

use std::cmp::Ordering;

use crate::channelizer::{Pol, ThresholdEvent};
use crate::config::{ObservationConfig, PairingConfig, SECONDS_PER_DAY};
use crate::error::Result;
use crate::sky;

/// Time differences are compared at 10 us resolution, well above the
/// rounding of an f64 MJD and well below a frame.
const DT_QUANTUM_S: f64 = 1e-5;
/// Frequency differences are compared at 1 mHz resolution.
const DF_QUANTUM_HZ: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulsePair {
    pub event_l: ThresholdEvent,
    pub event_r: ThresholdEvent,
    /// `t_R - t_L`, seconds.
    pub dt: f64,
    /// `f_R - f_L`, Hz.
    pub df: f64,
    pub snr_low: f64,
    pub snr_high: f64,
    /// Pointing RA at the reference time, hours.
    pub ra: f64,
    /// Gap to the previous accepted pair, seconds, on the frame grid.
    pub interarrival: Option<f64>,
}

impl PulsePair {
    fn new(l: ThresholdEvent, r: ThresholdEvent, cfg: &ObservationConfig) -> Result<Self> {
        debug_assert!(l.pol == Pol::Lcp && r.pol == Pol::Rcp);
        let reference = l.mjd.min(r.mjd);
        Ok(PulsePair {
            event_l: l,
            event_r: r,
            dt: quantize((r.mjd - l.mjd) * SECONDS_PER_DAY, DT_QUANTUM_S),
            df: quantize(r.rf_freq - l.rf_freq, DF_QUANTUM_HZ),
            snr_low: l.snr.min(r.snr),
            snr_high: l.snr.max(r.snr),
            ra: sky::pointing_ra(reference, cfg)?,
            interarrival: None,
        })
    }

    /// `min(t_L, t_R)`.
    pub fn reference_mjd(&self) -> f64 {
        self.event_l.mjd.min(self.event_r.mjd)
    }

    pub fn mean_freq(&self) -> f64 {
        0.5 * (self.event_l.rf_freq + self.event_r.rf_freq)
    }

    pub fn ra_bin(&self) -> sky::RaBin {
        sky::ra_bin(self.ra)
    }

    fn time_order(a: &Self, b: &Self) -> Ordering {
        a.reference_mjd()
            .total_cmp(&b.reference_mjd())
            .then(a.event_l.rf_freq.total_cmp(&b.event_l.rf_freq))
            .then(a.event_r.rf_freq.total_cmp(&b.event_r.rf_freq))
    }
}

fn quantize(x: f64, q: f64) -> f64 {
    (x / q).round() * q
}

/// A pairing candidate. Ordering is by matching priority, reversed so
/// that `BinaryHeap` pops the most preferred candidate first.
struct Candidate {
    abs_dt: f64,
    abs_df: f64,
    low_freq: f64,
    l: usize,
    r: usize,
    /// Set on one member of each block; popping it extends the cursor.
    cursor: Option<Cursor>,
}

impl Candidate {
    fn priority(&self, other: &Self) -> Ordering {
        self.abs_dt
            .total_cmp(&other.abs_dt)
            .then(self.abs_df.total_cmp(&other.abs_df))
            .then(self.low_freq.total_cmp(&other.low_freq))
            .then(self.l.cmp(&other.l))
            .then(self.r.cmp(&other.r))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.priority(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority(other).reverse()
    }
}

/// Walks one RCP time group away from an LCP frequency, yielding
/// candidates in blocks of equal quantized `|df|`.
#[derive(Clone, Copy)]
struct Cursor {
    l: usize,
    group: usize,
    abs_dt: f64,
    upward: bool,
    /// Next position in the group's frequency order; for a downward cursor,
    /// one past it.
    pos: usize,
}

/// RCP events sharing one timestamp, as `(freq, r)` sorted by frequency.
struct Group {
    mjd: f64,
    members: Vec<(f64, usize)>,
}

/// Matches LCP and RCP events into pairs with `|dt| < dt_max_s` and
/// `df_min_hz <= |df| <= df_max_hz`.
///
/// Each event joins at most one pair. Candidates are taken greedily by
/// smallest `|dt|`, then smallest `|df|`, then lowest frequency. Output is
/// ordered by reference time.
pub fn match_pairs(
    events: &[ThresholdEvent],
    window: &PairingConfig,
    cfg: &ObservationConfig,
) -> Result<Vec<PulsePair>> {
    window.validate()?;
    let lcp: Vec<&ThresholdEvent> = events.iter().filter(|e| e.pol == Pol::Lcp).collect();
    let mut rcp: Vec<&ThresholdEvent> = events.iter().filter(|e| e.pol == Pol::Rcp).collect();
    rcp.sort_by(|a, b| a.mjd.total_cmp(&b.mjd));

    let mut groups: Vec<Group> = Vec::new();
    for (ri, r) in rcp.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if g.mjd == r.mjd => g.members.push((r.rf_freq, ri)),
            _ => groups.push(Group {
                mjd: r.mjd,
                members: vec![(r.rf_freq, ri)],
            }),
        }
    }
    for g in &mut groups {
        g.members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let abs_df = |lf: f64, rf: f64| quantize(rf - lf, DF_QUANTUM_HZ).abs();
    let span_days = (window.dt_max_s + 1.0) / SECONDS_PER_DAY;
    let mut heap = std::collections::BinaryHeap::new();

    // Pushes the next block of equal `|df|` from `c`, if any remains.
    let push_block = |heap: &mut std::collections::BinaryHeap<Candidate>, mut c: Cursor| {
        let members = &groups[c.group].members;
        let lf = lcp[c.l].rf_freq;
        let at = |pos: usize| members[if c.upward { pos } else { pos - 1 }];
        let remaining = |pos: usize| if c.upward { pos < members.len() } else { pos > 0 };
        if !remaining(c.pos) {
            return;
        }
        let block_df = abs_df(lf, at(c.pos).0);
        if block_df > window.df_max_hz {
            return;
        }
        let mut block = Vec::new();
        while remaining(c.pos) && abs_df(lf, at(c.pos).0) == block_df {
            block.push(at(c.pos));
            if c.upward {
                c.pos += 1;
            } else {
                c.pos -= 1;
            }
        }
        for (i, (rf, r)) in block.into_iter().enumerate() {
            heap.push(Candidate {
                abs_dt: c.abs_dt,
                abs_df: block_df,
                low_freq: lf.min(rf),
                l: c.l,
                r,
                cursor: (i == 0).then_some(c),
            });
        }
    };

    for (li, l) in lcp.iter().enumerate() {
        let first = groups.partition_point(|g| g.mjd < l.mjd - span_days);
        for (gi, g) in groups.iter().enumerate().skip(first) {
            if g.mjd > l.mjd + span_days {
                break;
            }
            let abs_dt = quantize((g.mjd - l.mjd) * SECONDS_PER_DAY, DT_QUANTUM_S).abs();
            if abs_dt >= window.dt_max_s {
                continue;
            }
            let m = &g.members;
            let split = m.partition_point(|&(f, _)| f < l.rf_freq);
            let up = split + m[split..].partition_point(|&(f, _)| abs_df(l.rf_freq, f) < window.df_min_hz);
            let down = m[..split].partition_point(|&(f, _)| abs_df(l.rf_freq, f) >= window.df_min_hz);
            for (upward, pos) in [(true, up), (false, down)] {
                let c = Cursor {
                    l: li,
                    group: gi,
                    abs_dt,
                    upward,
                    pos,
                };
                push_block(&mut heap, c);
            }
        }
    }

    let mut used_l = vec![false; lcp.len()];
    let mut used_r = vec![false; rcp.len()];
    let mut pairs = Vec::new();
    while let Some(c) = heap.pop() {
        if used_l[c.l] {
            continue;
        }
        if let Some(cursor) = c.cursor {
            push_block(&mut heap, cursor);
        }
        if used_r[c.r] {
            continue;
        }
        used_l[c.l] = true;
        used_r[c.r] = true;
        pairs.push(PulsePair::new(*lcp[c.l], *rcp[c.r], cfg)?);
    }
    pairs.sort_by(PulsePair::time_order);
    Ok(pairs)
}

/// Removes every run of two or more consecutive pairs whose reference times
/// fall in the same integration frame, then recomputes interarrival times
/// of the survivors.
pub fn interarrival_filter(pairs: &[PulsePair], cfg: &ObservationConfig) -> Vec<PulsePair> {
    let frame = |p: &PulsePair| cfg.frame_of(p.reference_mjd());
    let mut out: Vec<PulsePair> = Vec::with_capacity(pairs.len());
    let mut i = 0;
    while i < pairs.len() {
        let f = frame(&pairs[i]);
        let mut j = i + 1;
        while j < pairs.len() && frame(&pairs[j]) == f {
            j += 1;
        }
        if j - i == 1 {
            out.push(pairs[i]);
        }
        i = j;
    }
    let mut prev: Option<i64> = None;
    for p in &mut out {
        let f = frame(p);
        p.interarrival = prev.map(|q| (f - q) as f64 * cfg.integration_t_s);
        prev = Some(f);
    }
    out
}

/// Drops pairs below the SNR gates and sorts the rest by lower SNR, high to
/// low. Position `i` in the result is trial number `i + 1`.
pub fn snr_sort(pairs: &[PulsePair], high_threshold_db: f64, low_threshold_db: f64) -> Vec<PulsePair> {
    let mut out: Vec<PulsePair> = pairs
        .iter()
        .filter(|p| p.snr_high >= high_threshold_db && p.snr_low >= low_threshold_db)
        .copied()
        .collect();
    out.sort_by(|a, b| {
        b.snr_low
            .total_cmp(&a.snr_low)
            .then(b.snr_high.total_cmp(&a.snr_high))
            .then(PulsePair::time_order(a, b))
    });
    out
}
