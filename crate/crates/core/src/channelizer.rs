//! Spectrometer: one rectangular-window DFT per integration period and
//! polarization, a median noise-floor estimate, and SNR threshold crossings.

use std::cmp::Ordering;
use std::ops::Range;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::config::{db_to_linear, linear_to_db, ObservationConfig};
use crate::error::{Error, Result};
use crate::scene::IqBlock;

/// Circular polarization of a receiver channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pol {
    #[serde(rename = "L")]
    Lcp,
    #[serde(rename = "R")]
    Rcp,
}

impl Pol {
    pub fn code(self) -> char {
        match self {
            Pol::Lcp => 'L',
            Pol::Rcp => 'R',
        }
    }

    pub fn from_code(s: &str) -> Option<Pol> {
        match s {
            "L" => Some(Pol::Lcp),
            "R" => Some(Pol::Rcp),
            _ => None,
        }
    }

    pub fn other(self) -> Pol {
        match self {
            Pol::Lcp => Pol::Rcp,
            Pol::Rcp => Pol::Lcp,
        }
    }
}

/// A single SNR threshold crossing as saved by the capture system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEvent {
    /// Frame timestamp.
    pub mjd: f64,
    /// Channel center frequency.
    pub rf_freq: f64,
    pub pol: Pol,
    pub snr: f64,
}

impl ThresholdEvent {
    /// Capture-file ordering: time, then frequency, then polarization.
    pub fn capture_order(a: &Self, b: &Self) -> Ordering {
        a.mjd
            .total_cmp(&b.mjd)
            .then(a.rf_freq.total_cmp(&b.rf_freq))
            .then(a.pol.cmp(&b.pol))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub frame_mjd: f64,
    pub pol: Pol,
    pub bin_width: f64,
    pub bin0_freq: f64,
    /// Unnormalized `|X_k|^2`, ascending RF frequency.
    pub powers: Vec<f64>,
    /// Indices of channels inside the observation band.
    pub band: Range<usize>,
}

impl Spectrum {
    pub fn freq_of(&self, bin: usize) -> f64 {
        self.bin0_freq + bin as f64 * self.bin_width
    }
}

/// Planned transform for one observation geometry.
pub struct Channelizer {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
    bin_width: f64,
    bin0_freq: f64,
    band: Range<usize>,
}

impl Channelizer {
    pub fn new(cfg: &ObservationConfig) -> Result<Self> {
        cfg.validate()?;
        let len = cfg.fft_len();
        let fft = FftPlanner::new().plan_fft_forward(len);
        let band = cfg.band_bins();
        Ok(Channelizer {
            fft,
            len,
            bin_width: cfg.bin_width_hz(),
            bin0_freq: cfg.bin0_freq_hz(),
            band: *band.start()..band.end() + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channelize(&self, block: &IqBlock) -> Result<(Spectrum, Spectrum)> {
        let lcp = self.spectrum(block.start_mjd, Pol::Lcp, &block.samples_lcp)?;
        let rcp = self.spectrum(block.start_mjd, Pol::Rcp, &block.samples_rcp)?;
        Ok((lcp, rcp))
    }

    fn spectrum(&self, mjd: f64, pol: Pol, samples: &[Complex<f64>]) -> Result<Spectrum> {
        if samples.len() != self.len {
            return Err(Error::FrameSize {
                expected: self.len,
                got: samples.len(),
            });
        }
        let mut buf = samples.to_vec();
        self.fft.process(&mut buf);
        // FFT order is DC, positive, negative; rotate so index 0 is the most
        // negative baseband frequency and DC sits at len/2.
        let half = self.len / 2;
        let mut powers = vec![0.0; self.len];
        for (m, x) in buf.iter().enumerate() {
            powers[(m + half) % self.len] = x.norm_sqr();
        }
        Ok(Spectrum {
            frame_mjd: mjd,
            pol,
            bin_width: self.bin_width,
            bin0_freq: self.bin0_freq,
            powers,
            band: self.band.clone(),
        })
    }
}

pub fn channelize(block: &IqBlock, cfg: &ObservationConfig) -> Result<(Spectrum, Spectrum)> {
    Channelizer::new(cfg)?.channelize(block)
}

/// Noise floor as the median bin power over ln 2, which is the mean of an
/// exponential (two degree of freedom) power distribution.
pub fn estimate_noise_floor(spec: &Spectrum) -> f64 {
    median(&spec.powers) / std::f64::consts::LN_2
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Emits one event per in-band (bin, polarization) whose SNR reaches the
/// threshold. The comparison is inclusive and done on linear power.
pub fn detect_events(
    specs: (&Spectrum, &Spectrum),
    floors: (f64, f64),
    threshold_db: f64,
) -> Vec<ThresholdEvent> {
    let ratio = db_to_linear(threshold_db);
    let (lcp, rcp) = specs;
    let band = lcp.band.start..lcp.band.end.min(lcp.powers.len());
    let mut out = Vec::new();
    for bin in band {
        for (spec, floor) in [(lcp, floors.0), (rcp, floors.1)] {
            if floor <= 0.0 {
                continue;
            }
            let p = spec.powers[bin];
            if p >= floor * ratio {
                out.push(ThresholdEvent {
                    mjd: spec.frame_mjd,
                    rf_freq: spec.freq_of(bin),
                    pol: spec.pol,
                    snr: linear_to_db(p / floor).max(threshold_db),
                });
            }
        }
    }
    out
}
