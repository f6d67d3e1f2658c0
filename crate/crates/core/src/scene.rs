//! Synthetic observations.
//!
//! A scene is AWGN plus a list of declarative components: hypothetical
//! polarized pulse pair trains and a handful of RFI archetypes. It can be
//! rendered two ways:
//!
//! * [`render_iq`] produces dual-polarization complex baseband frames that go
//!   through the real channelizer. Accurate, but one FFT per frame and
//!   polarization.
//! * [`render_events`] produces the threshold-crossing stream directly. The
//!   AWGN background is drawn as sparse Bernoulli crossings with the SNR
//!   taken from the exponential tail above the capture threshold, which is
//!   what the channelizer would report for pure noise. This is the path used
//!   for multi-week runs.
//!
//! All randomness is derived from `(rng_seed, stream)` where the stream is a
//! frame or chunk counter, so frames can be rendered in any order or in
//! parallel with identical output.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Geometric, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channelizer::{Pol, ThresholdEvent};
use crate::config::{db_to_linear, linear_to_db, ObservationConfig, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::sky::{self, RA_BIN_HOURS};

/// Frames per noise chunk on the event path. Each chunk and polarization
/// draws from its own RNG stream.
const CHUNK_FRAMES: u64 = 4096;

const TAG_NOISE: u64 = 1;
const TAG_IQ_NOISE: u64 = 2;
const TAG_COMPONENT: u64 = 16;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SILVER: f64 = std::f64::consts::SQRT_2 - 1.0;

/// Hypothetical signal: orthogonally circular-polarized T-duration pulses
/// separated by `dt_s` and `df_hz`, emitted while the beam transits
/// `ra_target_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsePairTrain {
    pub ra_target_h: f64,
    /// LCP pulse frequency for the first emission.
    pub freq_hz: f64,
    /// Emissions hop deterministically across `[freq_hz, freq_hz + span]`.
    #[serde(default)]
    pub freq_span_hz: f64,
    /// RCP time minus LCP time.
    pub dt_s: f64,
    /// RCP frequency minus LCP frequency.
    pub df_hz: f64,
    pub snr_lcp_db: f64,
    pub snr_rcp_db: f64,
    /// Mean emissions per transit; fractional rates are spread evenly
    /// across transits.
    pub rate_per_transit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwTone {
    pub freq_hz: f64,
    pub snr_db: f64,
    /// How much weaker the LCP image is than the RCP image (negative: RCP
    /// weaker). Zero is linear polarization.
    #[serde(default)]
    pub pol_imbalance_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopplerSpreadTone {
    pub center_hz: f64,
    /// Full two-sided spectral width.
    pub spread_hz: f64,
    pub snr_db: f64,
    #[serde(default)]
    pub pol_imbalance_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicComb {
    #[serde(default = "default_comb_fundamental")]
    pub fundamental_hz: f64,
    /// Defaults to the lowest in-band multiple of the fundamental.
    #[serde(default)]
    pub first_tooth_hz: Option<f64>,
    pub tooth_count: u32,
    pub snr_db: f64,
    /// Zero for continuous teeth. Otherwise one tooth fires per period, in
    /// round-robin order.
    #[serde(default)]
    pub key_period_s: f64,
    /// Frequency offset of the RCP image relative to LCP.
    #[serde(default)]
    pub pol_split_hz: f64,
    #[serde(default)]
    pub pol_imbalance_db: f64,
}

fn default_comb_fundamental() -> f64 {
    2.44e6
}

/// Broadband RFI present in both polarizations during a single frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidentBurst {
    /// Seconds after the observation start.
    pub time_s: f64,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneComponent {
    PulsePairTrain(PulsePairTrain),
    CwTone(CwTone),
    DopplerSpreadTone(DopplerSpreadTone),
    HarmonicComb(HarmonicComb),
    CoincidentBurst(CoincidentBurst),
}

impl SceneComponent {
    pub fn kind(&self) -> &'static str {
        match self {
            SceneComponent::PulsePairTrain(_) => "pulse_pair_train",
            SceneComponent::CwTone(_) => "cw_tone",
            SceneComponent::DopplerSpreadTone(_) => "doppler_spread_tone",
            SceneComponent::HarmonicComb(_) => "harmonic_comb",
            SceneComponent::CoincidentBurst(_) => "coincident_burst",
        }
    }

    fn validate(&self, index: usize, cfg: &ObservationConfig) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Component {
                index,
                kind: self.kind(),
                reason,
            })
        };
        let in_band = |name: &str, f: f64| -> Result<()> {
            if f.is_finite() && cfg.in_band(f) {
                Ok(())
            } else {
                Err(Error::Component {
                    index,
                    kind: self.kind(),
                    reason: format!(
                        "{name} {f} Hz outside band [{}, {}] Hz",
                        cfg.band_lo_hz(),
                        cfg.band_hi_hz()
                    ),
                })
            }
        };
        let snr = |v: f64| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Component {
                    index,
                    kind: self.kind(),
                    reason: "SNR must be finite".into(),
                })
            }
        };
        match self {
            SceneComponent::PulsePairTrain(p) => {
                if !p.ra_target_h.is_finite() {
                    return fail("ra_target_h must be finite".into());
                }
                if !(p.freq_span_hz >= 0.0) {
                    return fail("freq_span_hz must be >= 0".into());
                }
                in_band("freq_hz", p.freq_hz)?;
                in_band("freq_hz + freq_span_hz", p.freq_hz + p.freq_span_hz)?;
                in_band("freq_hz + df_hz", p.freq_hz + p.df_hz)?;
                in_band(
                    "freq_hz + freq_span_hz + df_hz",
                    p.freq_hz + p.freq_span_hz + p.df_hz,
                )?;
                if !(p.df_hz.abs() >= cfg.bin_width_hz()) {
                    return fail(format!(
                        "|df_hz| = {} is below one channel ({} Hz)",
                        p.df_hz.abs(),
                        cfg.bin_width_hz()
                    ));
                }
                if !p.dt_s.is_finite() {
                    return fail("dt_s must be finite".into());
                }
                let margin = transit_margin_hours(p.dt_s, cfg);
                if 2.0 * margin >= RA_BIN_HOURS {
                    return fail("dt_s too large to fit both pulses in one RA bin".into());
                }
                if !(p.rate_per_transit >= 0.0 && p.rate_per_transit.is_finite()) {
                    return fail("rate_per_transit must be >= 0".into());
                }
                snr(p.snr_lcp_db)?;
                snr(p.snr_rcp_db)?;
            }
            SceneComponent::CwTone(t) => {
                in_band("freq_hz", t.freq_hz)?;
                snr(t.snr_db)?;
                snr(t.pol_imbalance_db)?;
            }
            SceneComponent::DopplerSpreadTone(t) => {
                if !(t.spread_hz >= 0.0) {
                    return fail("spread_hz must be >= 0".into());
                }
                in_band("center_hz - spread_hz/2", t.center_hz - t.spread_hz / 2.0)?;
                in_band("center_hz + spread_hz/2", t.center_hz + t.spread_hz / 2.0)?;
                snr(t.snr_db)?;
                snr(t.pol_imbalance_db)?;
            }
            SceneComponent::HarmonicComb(c) => {
                if !(c.fundamental_hz > 0.0) {
                    return fail("fundamental_hz must be positive".into());
                }
                if c.tooth_count == 0 {
                    return fail("tooth_count must be >= 1".into());
                }
                if !(c.key_period_s >= 0.0) {
                    return fail("key_period_s must be >= 0".into());
                }
                let teeth = c.teeth(cfg);
                for (j, f) in teeth.iter().enumerate() {
                    in_band(&format!("tooth {j}"), *f)?;
                    in_band(&format!("tooth {j} + pol_split_hz"), f + c.pol_split_hz)?;
                }
                snr(c.snr_db)?;
                snr(c.pol_imbalance_db)?;
            }
            SceneComponent::CoincidentBurst(b) => {
                if !(b.bandwidth_hz >= 0.0) {
                    return fail("bandwidth_hz must be >= 0".into());
                }
                in_band("center_hz - bandwidth_hz/2", b.center_hz - b.bandwidth_hz / 2.0)?;
                in_band("center_hz + bandwidth_hz/2", b.center_hz + b.bandwidth_hz / 2.0)?;
                let span = cfg.duration_days * SECONDS_PER_DAY;
                if !(0.0..span).contains(&b.time_s) {
                    return fail(format!("time_s {} outside observation", b.time_s));
                }
                snr(b.snr_db)?;
            }
        }
        Ok(())
    }
}

impl HarmonicComb {
    pub fn teeth(&self, cfg: &ObservationConfig) -> Vec<f64> {
        let first = self.first_tooth_hz.unwrap_or_else(|| {
            (cfg.band_lo_hz() / self.fundamental_hz).ceil() * self.fundamental_hz
        });
        (0..self.tooth_count)
            .map(|j| first + j as f64 * self.fundamental_hz)
            .collect()
    }
}

/// Per-polarization SNRs for an RFI source with a fixed polarization state.
fn pol_snrs(snr_db: f64, imbalance_db: f64) -> (f64, f64) {
    (
        snr_db - imbalance_db.max(0.0),
        snr_db - (-imbalance_db).max(0.0),
    )
}

/// Keeps both pulses of a pair inside the target RA bin: the pair spans
/// |dt| plus up to a frame of quantization at each end.
fn transit_margin_hours(dt_s: f64, cfg: &ObservationConfig) -> f64 {
    (dt_s.abs() + 2.0 * cfg.integration_t_s) * sky::SIDEREAL_HOURS_PER_DAY / SECONDS_PER_DAY
}

/// A list of components, as loaded from a scene file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default, rename = "component")]
    pub components: Vec<SceneComponent>,
}

impl Scene {
    pub fn new(components: Vec<SceneComponent>) -> Self {
        Scene { components }
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| crate::config::toml_error(path, text, &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene is always representable as TOML")
    }

    pub fn validate(&self, cfg: &ObservationConfig) -> Result<()> {
        cfg.validate()?;
        for (i, c) in self.components.iter().enumerate() {
            c.validate(i, cfg)?;
        }
        Ok(())
    }
}

/// One scheduled pulse pair of a [`PulsePairTrain`], on the frame and
/// channel grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Emission {
    pub frame_l: u64,
    pub frame_r: u64,
    pub bin_l: u32,
    pub bin_r: u32,
    pub snr_lcp_db: f64,
    pub snr_rcp_db: f64,
}

impl Emission {
    pub fn freq_l(&self, cfg: &ObservationConfig) -> f64 {
        cfg.bin_freq_hz(self.bin_l as usize)
    }

    pub fn freq_r(&self, cfg: &ObservationConfig) -> f64 {
        cfg.bin_freq_hz(self.bin_r as usize)
    }
}

impl PulsePairTrain {
    /// Deterministic emission schedule over the observation. Emission `i`
    /// is placed at a low-discrepancy offset inside the target RA bin and at
    /// a low-discrepancy frequency inside the hop span.
    pub fn emissions(&self, cfg: &ObservationConfig) -> Result<Vec<Emission>> {
        let bin = sky::ra_bin(self.ra_target_h);
        let margin = transit_margin_hours(self.dt_s, cfg);
        let window_lo = bin.lo_hours() + margin;
        let width = RA_BIN_HOURS - 2.0 * margin;
        let frames = cfg.frame_count();
        let end_mjd = cfg.start_mjd + cfg.duration_days;
        let day = sky::sidereal_day_days();
        let first = sky::next_transit(window_lo, cfg.start_mjd, cfg.telescope_longitude_deg)?;
        let to_frame = |mjd: f64| -> Option<u64> {
            let f = cfg.frame_of(mjd);
            (f >= 0 && (f as u64) < frames).then_some(f as u64)
        };

        let mut out = Vec::new();
        let mut index = 0u64;
        let mut transit = 0u64;
        loop {
            let t0 = first + transit as f64 * day;
            if t0 >= end_mjd {
                break;
            }
            let n = ((transit + 1) as f64 * self.rate_per_transit).floor()
                - (transit as f64 * self.rate_per_transit).floor();
            for _ in 0..n as u64 {
                let u = ((index as f64 + 0.5) * GOLDEN).fract();
                let v = ((index as f64 + 0.5) * SILVER).fract();
                index += 1;
                let mjd_l = t0 + u * width / sky::SIDEREAL_HOURS_PER_DAY;
                let mjd_r = mjd_l + self.dt_s / SECONDS_PER_DAY;
                let (Some(frame_l), Some(frame_r)) = (to_frame(mjd_l), to_frame(mjd_r)) else {
                    continue;
                };
                let f_l = self.freq_hz + v * self.freq_span_hz;
                let bin_l = cfg.bin_of(f_l);
                let bin_r = cfg.bin_of(cfg.bin_freq_hz(bin_l as usize) + self.df_hz);
                out.push(Emission {
                    frame_l,
                    frame_r,
                    bin_l: bin_l as u32,
                    bin_r: bin_r as u32,
                    snr_lcp_db: self.snr_lcp_db,
                    snr_rcp_db: self.snr_rcp_db,
                });
            }
            transit += 1;
        }
        Ok(out)
    }
}

/// Complex baseband samples for one integration period.
#[derive(Clone, Debug, PartialEq)]
pub struct IqBlock {
    pub start_mjd: f64,
    pub samples_lcp: Vec<Complex<f64>>,
    pub samples_rcp: Vec<Complex<f64>>,
    pub sample_rate: f64,
}

pub(crate) fn stream_rng(seed: u64, tag: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(counter);
    rng
}

/// One crossing on the (frame, channel, polarization) grid.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Crossing {
    frame: u64,
    bin: u32,
    pol: Pol,
    snr: f64,
}

/// Renders the threshold-crossing stream a capture of this scene would
/// produce, without synthesizing samples.
pub fn render_events(
    scene: &[SceneComponent],
    cfg: &ObservationConfig,
    noise_event_rate: f64,
) -> Result<Vec<ThresholdEvent>> {
    if !(0.0..=1.0).contains(&noise_event_rate) {
        return Err(Error::Argument(format!(
            "noise_event_rate {noise_event_rate} outside [0, 1]"
        )));
    }
    let scene_owned = Scene::new(scene.to_vec());
    scene_owned.validate(cfg)?;

    let mut crossings = noise_crossings(cfg, noise_event_rate);
    let threshold = cfg.capture_snr_threshold_db;
    for (index, c) in scene.iter().enumerate() {
        component_crossings(c, index, cfg, &mut crossings)?;
    }
    crossings.retain(|c| c.snr >= threshold);
    crossings.par_sort_unstable_by(|a, b| {
        (a.frame, a.bin, a.pol)
            .cmp(&(b.frame, b.bin, b.pol))
            .then(b.snr.total_cmp(&a.snr))
    });
    // Overlapping sources in one channel produce a single crossing.
    crossings.dedup_by(|b, a| (a.frame, a.bin, a.pol) == (b.frame, b.bin, b.pol));

    Ok(crossings
        .into_iter()
        .map(|c| ThresholdEvent {
            mjd: cfg.frame_mjd(c.frame),
            rf_freq: cfg.bin_freq_hz(c.bin as usize),
            pol: c.pol,
            snr: c.snr,
        })
        .collect())
}

fn noise_crossings(cfg: &ObservationConfig, rate: f64) -> Vec<Crossing> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let frames = cfg.frame_count();
    let bins = cfg.band_bins();
    let first_bin = *bins.start() as u64;
    let n_bins = (*bins.end() - *bins.start() + 1) as u64;
    let threshold = db_to_linear(cfg.capture_snr_threshold_db);
    let geometric = Geometric::new(rate).expect("rate validated");
    let chunks = frames.div_ceil(CHUNK_FRAMES);
    let seed = cfg.rng_seed;

    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let f0 = chunk * CHUNK_FRAMES;
            let f1 = (f0 + CHUNK_FRAMES).min(frames);
            let cells = (f1 - f0) * n_bins;
            let mut out = Vec::new();
            for pol in [Pol::Lcp, Pol::Rcp] {
                let mut rng = stream_rng(seed, TAG_NOISE, chunk * 2 + pol as u64);
                let mut next = 0u64;
                loop {
                    let skip: u64 = geometric.sample(&mut rng);
                    let Some(idx) = next.checked_add(skip).filter(|&i| i < cells) else {
                        break;
                    };
                    next = idx + 1;
                    // Exceedance of an exponential power is memoryless: the
                    // excess above the threshold is again Exp(1).
                    let excess: f64 = Exp1.sample(&mut rng);
                    out.push(Crossing {
                        frame: f0 + idx / n_bins,
                        bin: (first_bin + idx % n_bins) as u32,
                        pol,
                        snr: linear_to_db(threshold + excess),
                    });
                }
            }
            out
        })
        .collect()
}

fn component_crossings(
    component: &SceneComponent,
    index: usize,
    cfg: &ObservationConfig,
    out: &mut Vec<Crossing>,
) -> Result<()> {
    let frames = cfg.frame_count();
    let seed = cfg.rng_seed;
    let bin_of = |f: f64| cfg.bin_of(f) as u32;
    match component {
        SceneComponent::PulsePairTrain(p) => {
            for e in p.emissions(cfg)? {
                out.push(Crossing {
                    frame: e.frame_l,
                    bin: e.bin_l,
                    pol: Pol::Lcp,
                    snr: e.snr_lcp_db,
                });
                out.push(Crossing {
                    frame: e.frame_r,
                    bin: e.bin_r,
                    pol: Pol::Rcp,
                    snr: e.snr_rcp_db,
                });
            }
        }
        SceneComponent::CwTone(t) => {
            let (l, r) = pol_snrs(t.snr_db, t.pol_imbalance_db);
            let bin = bin_of(t.freq_hz);
            for frame in 0..frames {
                out.push(Crossing { frame, bin, pol: Pol::Lcp, snr: l });
                out.push(Crossing { frame, bin, pol: Pol::Rcp, snr: r });
            }
        }
        SceneComponent::DopplerSpreadTone(t) => {
            let (l, r) = pol_snrs(t.snr_db, t.pol_imbalance_db);
            let lo = bin_of(t.center_hz - t.spread_hz / 2.0);
            let hi = bin_of(t.center_hz + t.spread_hz / 2.0);
            let tag = TAG_COMPONENT + index as u64;
            for chunk in 0..frames.div_ceil(CHUNK_FRAMES) {
                let mut rng = stream_rng(seed, tag, chunk);
                let f0 = chunk * CHUNK_FRAMES;
                for frame in f0..(f0 + CHUNK_FRAMES).min(frames) {
                    let bl = rng.random_range(lo..=hi);
                    let br = rng.random_range(lo..=hi);
                    out.push(Crossing { frame, bin: bl, pol: Pol::Lcp, snr: l });
                    out.push(Crossing { frame, bin: br, pol: Pol::Rcp, snr: r });
                }
            }
        }
        SceneComponent::HarmonicComb(c) => {
            let (l, r) = pol_snrs(c.snr_db, c.pol_imbalance_db);
            let teeth: Vec<(u32, u32)> = c
                .teeth(cfg)
                .into_iter()
                .map(|f| (bin_of(f), bin_of(f + c.pol_split_hz)))
                .collect();
            for (frame, tooth) in comb_firings(c, cfg, teeth.len()) {
                let mut fire = |(bl, br): (u32, u32)| {
                    out.push(Crossing { frame, bin: bl, pol: Pol::Lcp, snr: l });
                    out.push(Crossing { frame, bin: br, pol: Pol::Rcp, snr: r });
                };
                match tooth {
                    Some(j) => fire(teeth[j]),
                    None => teeth.iter().copied().for_each(fire),
                }
            }
        }
        SceneComponent::CoincidentBurst(b) => {
            let frame = burst_frame(b, cfg);
            let lo = cfg.bin_of(b.center_hz - b.bandwidth_hz / 2.0) as u32;
            let hi = cfg.bin_of(b.center_hz + b.bandwidth_hz / 2.0) as u32;
            for bin in lo..=hi {
                for pol in [Pol::Lcp, Pol::Rcp] {
                    out.push(Crossing { frame, bin, pol, snr: b.snr_db });
                }
            }
        }
    }
    Ok(())
}

/// `(frame, tooth)` firing schedule; `None` means all teeth (continuous comb).
fn comb_firings(
    c: &HarmonicComb,
    cfg: &ObservationConfig,
    teeth: usize,
) -> Box<dyn Iterator<Item = (u64, Option<usize>)>> {
    let frames = cfg.frame_count();
    if c.key_period_s <= 0.0 {
        return Box::new((0..frames).map(|f| (f, None)));
    }
    let period_frames = c.key_period_s / cfg.integration_t_s;
    Box::new(
        (0u64..)
            .map(move |k| ((k as f64 * period_frames).round() as u64, k))
            .take_while(move |&(f, _)| f < frames)
            .map(move |(f, k)| (f, Some(k as usize % teeth))),
    )
}

fn burst_frame(b: &CoincidentBurst, cfg: &ObservationConfig) -> u64 {
    (b.time_s / cfg.integration_t_s).round() as u64
}

/// Frame-at-a-time IQ synthesis. Frames are independent of each other.
pub struct IqRenderer {
    cfg: ObservationConfig,
    scene: Vec<SceneComponent>,
    ifft: Arc<dyn Fft<f64>>,
    /// Pulse pair pulses keyed by frame: (bin, pol, snr_db).
    pulses: BTreeMap<u64, Vec<(u32, Pol, f64)>>,
    noise: bool,
}

impl IqRenderer {
    pub fn new(scene: &[SceneComponent], cfg: &ObservationConfig) -> Result<Self> {
        Scene::new(scene.to_vec()).validate(cfg)?;
        let mut pulses: BTreeMap<u64, Vec<(u32, Pol, f64)>> = BTreeMap::new();
        for c in scene {
            if let SceneComponent::PulsePairTrain(p) = c {
                for e in p.emissions(cfg)? {
                    pulses
                        .entry(e.frame_l)
                        .or_default()
                        .push((e.bin_l, Pol::Lcp, e.snr_lcp_db));
                    pulses
                        .entry(e.frame_r)
                        .or_default()
                        .push((e.bin_r, Pol::Rcp, e.snr_rcp_db));
                }
            }
        }
        Ok(IqRenderer {
            cfg: cfg.clone(),
            scene: scene.to_vec(),
            ifft: FftPlanner::new().plan_fft_inverse(cfg.fft_len()),
            pulses,
            noise: true,
        })
    }

    /// Disables the AWGN background; only scene components are rendered.
    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn config(&self) -> &ObservationConfig {
        &self.cfg
    }

    pub fn frame(&self, frame: u64) -> IqBlock {
        let cfg = &self.cfg;
        let n = cfg.fft_len();
        let seed = cfg.rng_seed;
        let mut lcp = vec![Complex::new(0.0, 0.0); n];
        let mut rcp = vec![Complex::new(0.0, 0.0); n];

        if self.noise {
            // Complex Gaussian with variance 1/n gives unit mean power per bin.
            let sigma = (0.5 / n as f64).sqrt();
            for (pol, buf) in [(0u64, &mut lcp), (1, &mut rcp)] {
                let mut rng = stream_rng(seed, TAG_IQ_NOISE, frame * 2 + pol);
                for x in buf.iter_mut() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *x = Complex::new(re * sigma, im * sigma);
                }
            }
        }

        // Components on exact channel centers are added in the frequency
        // domain and brought to baseband with one inverse transform.
        let mut spec_l = vec![Complex::new(0.0, 0.0); n];
        let mut spec_r = vec![Complex::new(0.0, 0.0); n];
        let mut spectral = false;
        let put = |spec: &mut Vec<Complex<f64>>, bin: u32, snr_db: f64, phase: f64| {
            // Spectrum index -> FFT bin.
            let m = (bin as usize + n - n / 2) % n;
            spec[m] += Complex::from_polar(db_to_linear(snr_db).sqrt(), phase);
        };

        if let Some(list) = self.pulses.get(&frame) {
            for &(bin, pol, snr) in list {
                let spec = if pol == Pol::Lcp { &mut spec_l } else { &mut spec_r };
                put(spec, bin, snr, 0.0);
                spectral = true;
            }
        }

        let t_frame = frame as f64 * n as f64 / cfg.sample_rate_hz;
        for (index, c) in self.scene.iter().enumerate() {
            match c {
                SceneComponent::CwTone(t) => {
                    let (l, r) = pol_snrs(t.snr_db, t.pol_imbalance_db);
                    add_tone(&mut lcp, &mut rcp, cfg, t.freq_hz, l, r, t_frame);
                }
                SceneComponent::DopplerSpreadTone(t) => {
                    let (l, r) = pol_snrs(t.snr_db, t.pol_imbalance_db);
                    let mut rng = stream_rng(seed, TAG_COMPONENT + index as u64, frame);
                    add_doppler(&mut lcp, &mut rcp, cfg, t, l, r, &mut rng);
                }
                SceneComponent::HarmonicComb(comb) => {
                    let (l, r) = pol_snrs(comb.snr_db, comb.pol_imbalance_db);
                    let teeth = comb.teeth(cfg);
                    let firing: Vec<usize> = if comb.key_period_s <= 0.0 {
                        (0..teeth.len()).collect()
                    } else {
                        comb_firings(comb, cfg, teeth.len())
                            .skip_while(|&(f, _)| f < frame)
                            .take_while(|&(f, _)| f == frame)
                            .filter_map(|(_, j)| j)
                            .collect()
                    };
                    for j in firing {
                        let f = teeth[j];
                        add_tone_pol(&mut lcp, cfg, f, l, t_frame);
                        add_tone_pol(&mut rcp, cfg, f + comb.pol_split_hz, r, t_frame);
                    }
                }
                SceneComponent::CoincidentBurst(b) if burst_frame(b, cfg) == frame => {
                    let mut rng = stream_rng(seed, TAG_COMPONENT + index as u64, frame);
                    let lo = cfg.bin_of(b.center_hz - b.bandwidth_hz / 2.0) as u32;
                    let hi = cfg.bin_of(b.center_hz + b.bandwidth_hz / 2.0) as u32;
                    for bin in lo..=hi {
                        let phase = rng.random::<f64>() * std::f64::consts::TAU;
                        put(&mut spec_l, bin, b.snr_db, phase);
                        put(&mut spec_r, bin, b.snr_db, phase);
                    }
                    spectral = true;
                }
                _ => {}
            }
        }

        if spectral {
            let scale = 1.0 / n as f64;
            for (spec, buf) in [(&mut spec_l, &mut lcp), (&mut spec_r, &mut rcp)] {
                self.ifft.process(spec);
                for (x, s) in buf.iter_mut().zip(spec.iter()) {
                    *x += s * scale;
                }
            }
        }

        IqBlock {
            start_mjd: cfg.frame_mjd(frame),
            samples_lcp: lcp,
            samples_rcp: rcp,
            sample_rate: cfg.sample_rate_hz,
        }
    }
}

fn add_tone(
    lcp: &mut [Complex<f64>],
    rcp: &mut [Complex<f64>],
    cfg: &ObservationConfig,
    freq: f64,
    snr_l: f64,
    snr_r: f64,
    t_frame: f64,
) {
    add_tone_pol(lcp, cfg, freq, snr_l, t_frame);
    add_tone_pol(rcp, cfg, freq, snr_r, t_frame);
}

/// Continuous-phase complex exponential at an RF frequency. Amplitude is
/// chosen so an on-channel tone has the requested SNR against unit noise.
fn add_tone_pol(buf: &mut [Complex<f64>], cfg: &ObservationConfig, freq: f64, snr_db: f64, t0: f64) {
    let n = buf.len() as f64;
    let amp = db_to_linear(snr_db).sqrt() / n;
    let offset = freq - cfg.center_freq_hz;
    let start_cycles = (offset * t0).fract();
    let step = offset / cfg.sample_rate_hz;
    for (i, x) in buf.iter_mut().enumerate() {
        let cycles = start_cycles + (step * i as f64).fract();
        *x += Complex::from_polar(amp, std::f64::consts::TAU * cycles);
    }
}

/// Carrier with a Wiener phase process. A phase increment variance of
/// 2 pi B / fs per sample gives a Lorentzian line of full width B.
fn add_doppler(
    lcp: &mut [Complex<f64>],
    rcp: &mut [Complex<f64>],
    cfg: &ObservationConfig,
    t: &DopplerSpreadTone,
    snr_l: f64,
    snr_r: f64,
    rng: &mut ChaCha8Rng,
) {
    let n = lcp.len() as f64;
    let amp_l = db_to_linear(snr_l).sqrt() / n;
    let amp_r = db_to_linear(snr_r).sqrt() / n;
    let step = (t.center_hz - cfg.center_freq_hz) / cfg.sample_rate_hz;
    let sigma = (std::f64::consts::TAU * t.spread_hz / cfg.sample_rate_hz).sqrt();
    let mut phase = rng.random::<f64>() * std::f64::consts::TAU;
    for i in 0..lcp.len() {
        let w: f64 = rng.sample(StandardNormal);
        phase += sigma * w;
        let carrier = std::f64::consts::TAU * (step * i as f64).fract() + phase;
        lcp[i] += Complex::from_polar(amp_l, carrier);
        rcp[i] += Complex::from_polar(amp_r, carrier);
    }
}

/// Renders `frames` consecutive IQ frames starting at frame 0.
pub fn render_iq(
    scene: &[SceneComponent],
    cfg: &ObservationConfig,
    frames: u64,
) -> Result<Vec<IqBlock>> {
    if frames == 0 {
        return Err(Error::Argument("frames must be >= 1".into()));
    }
    let r = IqRenderer::new(scene, cfg)?;
    Ok((0..frames).into_par_iter().map(|f| r.frame(f)).collect())
}
