//! Event-level RFI excision: frequency masks, occupancy masks built after
//! the fact, a causal per-channel IIR crossing-rate filter, the 500 kHz and
//! 100 kHz harmonic grids, and band-edge / baseband-DC exclusion.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::channelizer::ThresholdEvent;
use crate::config::ObservationConfig;
use crate::error::{Error, Result};

/// Why an interval was excised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Static,
    Post,
    Dynamic,
    Harmonic,
    EdgeDc,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Static => "static",
            Provenance::Post => "post",
            Provenance::Dynamic => "dynamic",
            Provenance::Harmonic => "harmonic",
            Provenance::EdgeDc => "edge_dc",
        }
    }
}

/// Closed frequency interval `[lo_hz, hi_hz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskInterval {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub provenance: Provenance,
    pub label: String,
}

impl MaskInterval {
    pub fn new(lo_hz: f64, hi_hz: f64, provenance: Provenance, label: impl Into<String>) -> Self {
        MaskInterval {
            lo_hz,
            hi_hz,
            provenance,
            label: label.into(),
        }
    }
}

/// A set of excised frequency intervals, kept sorted and disjoint.
///
/// When overlapping intervals are merged the result keeps the provenance and
/// label of the interval that starts lowest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RfiMask {
    intervals: Vec<MaskInterval>,
}

impl RfiMask {
    pub fn empty() -> Self {
        RfiMask::default()
    }

    pub fn new(mut intervals: Vec<MaskInterval>) -> Result<Self> {
        for iv in &intervals {
            if !(iv.lo_hz.is_finite() && iv.hi_hz.is_finite() && iv.lo_hz <= iv.hi_hz) {
                return Err(Error::Argument(format!(
                    "mask interval [{}, {}] is not a valid closed interval",
                    iv.lo_hz, iv.hi_hz
                )));
            }
        }
        intervals.sort_by(|a, b| a.lo_hz.total_cmp(&b.lo_hz));
        let mut merged: Vec<MaskInterval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.lo_hz <= last.hi_hz => last.hi_hz = last.hi_hz.max(iv.hi_hz),
                _ => merged.push(iv),
            }
        }
        Ok(RfiMask { intervals: merged })
    }

    pub fn intervals(&self) -> &[MaskInterval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn union(&self, other: &RfiMask) -> RfiMask {
        let all = self.intervals.iter().chain(&other.intervals).cloned().collect();
        RfiMask::new(all).expect("inputs already validated")
    }

    pub fn contains(&self, freq_hz: f64) -> bool {
        // First interval starting beyond freq; the candidate is the one before.
        let i = self.intervals.partition_point(|iv| iv.lo_hz <= freq_hz);
        i > 0 && freq_hz <= self.intervals[i - 1].hi_hz
    }

    /// Drops intervals that do not touch `[lo_hz, hi_hz]`.
    pub fn restrict_to(&self, lo_hz: f64, hi_hz: f64) -> RfiMask {
        RfiMask {
            intervals: self
                .intervals
                .iter()
                .filter(|iv| iv.hi_hz >= lo_hz && iv.lo_hz <= hi_hz)
                .cloned()
                .collect(),
        }
    }

    /// The harmonic grids of [`harmonic_excise`] expressed as a mask over a
    /// frequency range, for auditing.
    pub fn harmonic(lo_hz: f64, hi_hz: f64) -> RfiMask {
        let mut out = Vec::new();
        for (grid, half) in HARMONIC_GRIDS {
            let k0 = ((lo_hz - half) / grid).ceil() as i64;
            let k1 = ((hi_hz + half) / grid).floor() as i64;
            for k in k0..=k1 {
                let c = k as f64 * grid;
                out.push(MaskInterval::new(
                    c - half,
                    c + half,
                    Provenance::Harmonic,
                    format!("{} kHz harmonic {k}", grid / 1e3),
                ));
            }
        }
        RfiMask::new(out).expect("grid intervals are well formed")
    }

    /// Band edges and the IQ zero-baseband channel as a mask.
    pub fn edge_dc(cfg: &ObservationConfig, edge_margin_hz: f64, dc_margin_hz: f64) -> RfiMask {
        let lo = cfg.band_lo_hz();
        let hi = cfg.band_hi_hz();
        let c = cfg.center_freq_hz;
        RfiMask::new(vec![
            MaskInterval::new(lo - edge_margin_hz, lo + edge_margin_hz, Provenance::EdgeDc, "low edge"),
            MaskInterval::new(hi - edge_margin_hz, hi + edge_margin_hz, Provenance::EdgeDc, "high edge"),
            MaskInterval::new(c - dc_margin_hz, c + dc_margin_hz, Provenance::EdgeDc, "baseband dc"),
        ])
        .expect("margins validated by caller")
    }
}

/// Removes events inside any mask interval. Order of the survivors is kept.
pub fn apply_mask(events: &[ThresholdEvent], mask: &RfiMask) -> Vec<ThresholdEvent> {
    if mask.is_empty() {
        return events.to_vec();
    }
    events
        .iter()
        .filter(|e| !mask.contains(e.rf_freq))
        .copied()
        .collect()
}

/// Masks every channel whose crossing occupancy (frames with a crossing in
/// either polarization, over all frames) exceeds `occupancy_threshold`.
pub fn build_post_mask(
    events: &[ThresholdEvent],
    cfg: &ObservationConfig,
    occupancy_threshold: f64,
) -> Result<RfiMask> {
    let frames = cfg.frame_count();
    if frames == 0 {
        return Err(Error::Argument(
            "post mask needs an observation of at least one frame".into(),
        ));
    }
    if !(occupancy_threshold > 0.0 && occupancy_threshold < 1.0) {
        return Err(Error::Argument("occupancy_threshold must lie in (0, 1)".into()));
    }
    // bin -> (frames with a crossing, last frame counted)
    let mut occupancy: HashMap<i64, (u64, i64)> = HashMap::new();
    for e in events {
        let frame = cfg.frame_of(e.mjd);
        let entry = occupancy.entry(cfg.bin_of(e.rf_freq)).or_insert((0, i64::MIN));
        if entry.1 != frame {
            entry.0 += 1;
            entry.1 = frame;
        }
    }
    let w = cfg.bin_width_hz();
    let mut bins: Vec<(i64, f64)> = occupancy
        .into_iter()
        .map(|(bin, (count, _))| (bin, count as f64 / frames as f64))
        .filter(|&(_, occ)| occ > occupancy_threshold)
        .collect();
    bins.sort_by_key(|&(b, _)| b);
    let intervals = bins
        .into_iter()
        .map(|(bin, occ)| {
            let f = cfg.bin0_freq_hz() + bin as f64 * w;
            MaskInterval::new(
                f - w / 2.0,
                f + w / 2.0,
                Provenance::Post,
                format!("occupancy {occ:.4}"),
            )
        })
        .collect();
    RfiMask::new(intervals)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ChannelState {
    s: f64,
    /// Frame of the last update.
    frame: i64,
    excised: bool,
}

/// One period during which a channel was excised: events in frames
/// `start_frame..end_frame` were dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcisionEpisode {
    pub bin: i64,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub start_frame: i64,
    pub end_frame: i64,
    pub start_mjd: f64,
    pub end_mjd: f64,
}

/// Per-channel IIR-smoothed crossing rate with hysteresis.
///
/// Channels are updated every frame with `s <- (1 - alpha) s + alpha x`,
/// where `x` is 1 when the channel crossed in that frame. Updates for frames
/// without crossings are applied lazily in closed form, so the cost is per
/// event rather than per channel-frame.
#[derive(Clone, Debug)]
pub struct DynamicExcisionState {
    alpha: f64,
    theta_on: f64,
    theta_off: f64,
    channels: HashMap<i64, ChannelState>,
    /// Open episodes: bin -> start frame.
    open: HashMap<i64, i64>,
    closed: Vec<(i64, i64, i64)>,
    last_frame: Option<i64>,
}

impl DynamicExcisionState {
    pub fn new(alpha: f64, theta_on: f64, theta_off: f64) -> Result<Self> {
        Self::check_coefficients(alpha, theta_on, theta_off)?;
        Ok(DynamicExcisionState {
            alpha,
            theta_on,
            theta_off,
            channels: HashMap::new(),
            open: HashMap::new(),
            closed: Vec::new(),
            last_frame: None,
        })
    }

    pub fn check_coefficients(alpha: f64, theta_on: f64, theta_off: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("dynamic alpha {alpha} outside (0, 1]")));
        }
        if !(theta_off > 0.0 && theta_off < theta_on && theta_on <= 1.0) {
            return Err(Error::Config(
                "dynamic thresholds need 0 < theta_off < theta_on <= 1".into(),
            ));
        }
        Ok(())
    }

    /// Smoothed rate of a channel as of the end of `frame`, assuming no
    /// crossings after its last update.
    pub fn rate(&self, bin: i64, frame: i64) -> f64 {
        self.channels
            .get(&bin)
            .map(|c| self.decayed(c.s, frame - c.frame))
            .unwrap_or(0.0)
    }

    pub fn is_excised(&self, bin: i64, frame: i64) -> bool {
        self.channels
            .get(&bin)
            .map(|c| self.advance(*c, frame).excised)
            .unwrap_or(false)
    }

    fn decayed(&self, s: f64, frames: i64) -> f64 {
        if frames <= 0 {
            s
        } else {
            s * (1.0 - self.alpha).powi(frames.min(i32::MAX as i64) as i32)
        }
    }

    /// Number of crossing-free frames after which a rate of `s` first drops
    /// below `theta_off`.
    fn frames_to_release(&self, s: f64) -> i64 {
        if s < self.theta_off {
            return 0;
        }
        if self.alpha >= 1.0 {
            return 1;
        }
        let guess = ((self.theta_off / s).ln() / (1.0 - self.alpha).ln()).floor() as i64;
        // Settle float rounding against the exact recurrence.
        let mut j = guess.max(1) - 1;
        while j > 1 && self.decayed(s, j - 1) < self.theta_off {
            j -= 1;
        }
        while self.decayed(s, j) >= self.theta_off {
            j += 1;
        }
        j.max(1)
    }

    /// Channel state at the end of `frame` with no crossings since its last
    /// update.
    fn advance(&self, c: ChannelState, frame: i64) -> ChannelState {
        let s = self.decayed(c.s, frame - c.frame);
        ChannelState {
            s,
            frame: frame.max(c.frame),
            excised: c.excised && s >= self.theta_off,
        }
    }

    /// Updates a channel for a frame in which it crossed. Returns whether the
    /// channel was excised going into the frame.
    fn cross(&mut self, bin: i64, frame: i64) -> bool {
        let prev = self.channels.get(&bin).copied().unwrap_or(ChannelState {
            s: 0.0,
            frame,
            excised: false,
        });
        let before = self.advance(prev, frame - 1);
        if prev.excised && !before.excised {
            let start = self.open.remove(&bin).expect("episode opened on entry");
            let end = prev.frame + self.frames_to_release(prev.s) + 1;
            self.closed.push((bin, start, end));
        }
        let s = (1.0 - self.alpha) * before.s + self.alpha;
        let mut excised = before.excised;
        if s >= self.theta_on && !excised {
            excised = true;
            self.open.insert(bin, frame + 1);
        } else if s < self.theta_off && excised {
            excised = false;
            let start = self.open.remove(&bin).expect("episode opened on entry");
            self.closed.push((bin, start, frame + 1));
        }
        self.channels.insert(bin, ChannelState { s, frame, excised });
        before.excised
    }

    /// Excision periods so far. Episodes still open are closed at the frame
    /// where the channel would release if it never crossed again.
    pub fn episodes(&self, cfg: &ObservationConfig) -> Vec<ExcisionEpisode> {
        let w = cfg.bin_width_hz();
        let mut all: Vec<(i64, i64, i64)> = self.closed.clone();
        for (&bin, &start) in &self.open {
            let c = self.channels[&bin];
            all.push((bin, start, c.frame + self.frames_to_release(c.s) + 1));
        }
        all.sort();
        let to_mjd = |f: i64| cfg.start_mjd + f as f64 * cfg.frame_days();
        all.into_iter()
            .map(|(bin, start, end)| {
                let f = cfg.bin0_freq_hz() + bin as f64 * w;
                ExcisionEpisode {
                    bin,
                    lo_hz: f - w / 2.0,
                    hi_hz: f + w / 2.0,
                    start_frame: start,
                    end_frame: end,
                    start_mjd: to_mjd(start),
                    end_mjd: to_mjd(end),
                }
            })
            .collect()
    }
}

/// Causal dynamic excision over a time-ordered event stream.
///
/// An event at frame `t` is dropped when its channel is excised after the
/// update for frame `t - 1`. The state may be reused across consecutive
/// calls to process a stream in pieces.
pub fn dynamic_excise(
    events: &[ThresholdEvent],
    state: &mut DynamicExcisionState,
    cfg: &ObservationConfig,
) -> Result<(Vec<ThresholdEvent>, Vec<ExcisionEpisode>)> {
    let mut out = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let frame = cfg.frame_of(events[i].mjd);
        if state.last_frame.is_some_and(|last| frame < last) {
            return Err(Error::Ordering { index: i });
        }
        state.last_frame = Some(frame);
        let mut j = i;
        while j < events.len() && cfg.frame_of(events[j].mjd) == frame {
            j += 1;
        }
        let group = &events[i..j];
        // Decide every event of the frame on the pre-frame state, then
        // update each crossed channel exactly once.
        let mut decided: HashMap<i64, bool> = HashMap::new();
        for e in group {
            let bin = cfg.bin_of(e.rf_freq);
            let excised = match decided.get(&bin) {
                Some(&x) => x,
                None => {
                    let x = state.cross(bin, frame);
                    decided.insert(bin, x);
                    x
                }
            };
            if !excised {
                out.push(*e);
            }
        }
        i = j;
    }
    Ok((out, state.episodes(cfg)))
}

/// (grid spacing, half width) of the clock-harmonic exclusion zones.
pub const HARMONIC_GRIDS: [(f64, f64); 2] = [(500.0e3, 25.0e3), (100.0e3, 1.0e3)];

/// Distance from `freq_hz` to the nearest integer multiple of `grid_hz`.
pub fn grid_distance(freq_hz: f64, grid_hz: f64) -> f64 {
    let k = (freq_hz / grid_hz).round();
    (freq_hz - k * grid_hz).abs()
}

pub fn is_harmonic(freq_hz: f64) -> bool {
    HARMONIC_GRIDS
        .iter()
        .any(|&(grid, half)| grid_distance(freq_hz, grid) <= half)
}

/// Removes events within 25 kHz of a 500 kHz multiple or within 1 kHz of a
/// 100 kHz multiple of absolute RF frequency.
pub fn harmonic_excise(events: &[ThresholdEvent]) -> Vec<ThresholdEvent> {
    events
        .iter()
        .filter(|e| !is_harmonic(e.rf_freq))
        .copied()
        .collect()
}

/// Removes events within `edge_margin_hz` of either band edge (or outside
/// the band) and within `dc_margin_hz` of the band center.
pub fn edge_dc_excise(
    events: &[ThresholdEvent],
    cfg: &ObservationConfig,
    edge_margin_hz: f64,
    dc_margin_hz: f64,
) -> Vec<ThresholdEvent> {
    let lo = cfg.band_lo_hz() + edge_margin_hz;
    let hi = cfg.band_hi_hz() - edge_margin_hz;
    let c = cfg.center_freq_hz;
    events
        .iter()
        .filter(|e| e.rf_freq > lo && e.rf_freq < hi && (e.rf_freq - c).abs() > dc_margin_hz)
        .copied()
        .collect()
}
