//! Observation and run configuration.
//!
//! Configuration files are TOML: one table per pipeline area, units spelled
//! out in every key name, and unknown keys rejected so that a misspelled
//! threshold can never silently fall back to its default.

use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reciprocal of the pulse integration period, in Hz. This is also the
/// channel width of the spectrometer.
pub const INTEGRATION_RATE_HZ: f64 = 3.725;

/// SNR threshold at which crossings are written to the capture file.
pub const CAPTURE_SNR_DB: f64 = 11.8;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Static description of a drift-scan observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub center_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub sample_rate_hz: f64,
    pub integration_t_s: f64,
    /// Degrees east of Greenwich.
    pub telescope_longitude_deg: f64,
    pub telescope_latitude_deg: f64,
    pub pointing_dec_deg: f64,
    pub start_mjd: f64,
    pub duration_days: f64,
    pub capture_snr_threshold_db: f64,
    pub rng_seed: u64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        let fft_len = 1u64 << 19;
        ObservationConfig {
            center_freq_hz: 1420.0e6,
            bandwidth_hz: 1.9e6,
            sample_rate_hz: fft_len as f64 * INTEGRATION_RATE_HZ,
            integration_t_s: 1.0 / INTEGRATION_RATE_HZ,
            // Placeholder site in southern New Hampshire.
            telescope_longitude_deg: -71.5,
            telescope_latitude_deg: 43.0,
            pointing_dec_deg: -7.6,
            start_mjd: 59_300.0,
            duration_days: 40.0,
            capture_snr_threshold_db: CAPTURE_SNR_DB,
            rng_seed: 0x5eed,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let finite = [
            ("center_freq_hz", self.center_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("sample_rate_hz", self.sample_rate_hz),
            ("integration_t_s", self.integration_t_s),
            ("telescope_longitude_deg", self.telescope_longitude_deg),
            ("telescope_latitude_deg", self.telescope_latitude_deg),
            ("pointing_dec_deg", self.pointing_dec_deg),
            ("start_mjd", self.start_mjd),
            ("duration_days", self.duration_days),
            ("capture_snr_threshold_db", self.capture_snr_threshold_db),
        ];
        if let Some((key, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{key} must be finite"));
        }
        if self.bandwidth_hz <= 0.0 {
            return bad("bandwidth_hz must be positive".into());
        }
        if self.bandwidth_hz > self.sample_rate_hz {
            return bad(format!(
                "bandwidth_hz ({}) exceeds sample_rate_hz ({})",
                self.bandwidth_hz, self.sample_rate_hz
            ));
        }
        if self.integration_t_s <= 0.0 {
            return bad("integration_t_s must be positive".into());
        }
        let exact = self.sample_rate_hz * self.integration_t_s;
        let n = exact.round();
        if n < 2.0 {
            return bad(format!("FFT length {n} is below 2"));
        }
        // The channel width must be 1/T; otherwise bin centers drift away
        // from the pulse bandwidth the search is matched to.
        if ((exact - n) / n).abs() > 1e-9 {
            return bad(format!(
                "sample_rate_hz x integration_t_s = {exact} is not an integer FFT length"
            ));
        }
        if self.duration_days <= 0.0 {
            return bad("duration_days must be positive".into());
        }
        if !(40_000.0..=80_000.0).contains(&self.start_mjd) {
            return bad(format!("start_mjd {} outside 40000..80000", self.start_mjd));
        }
        if !(-90.0..=90.0).contains(&self.pointing_dec_deg) {
            return bad("pointing_dec_deg outside [-90, 90]".into());
        }
        if self.capture_snr_threshold_db < 0.0 {
            return bad("capture_snr_threshold_db must be >= 0".into());
        }
        Ok(())
    }

    pub fn fft_len(&self) -> usize {
        (self.sample_rate_hz * self.integration_t_s).round() as usize
    }

    pub fn bin_width_hz(&self) -> f64 {
        self.sample_rate_hz / self.fft_len() as f64
    }

    /// RF frequency of spectrum index 0 (the most negative baseband bin).
    pub fn bin0_freq_hz(&self) -> f64 {
        self.center_freq_hz - (self.fft_len() / 2) as f64 * self.bin_width_hz()
    }

    pub fn bin_freq_hz(&self, bin: usize) -> f64 {
        self.bin0_freq_hz() + bin as f64 * self.bin_width_hz()
    }

    /// Nearest spectrum index for an RF frequency. May fall outside the
    /// spectrum for out-of-band frequencies.
    pub fn bin_of(&self, freq_hz: f64) -> i64 {
        ((freq_hz - self.bin0_freq_hz()) / self.bin_width_hz()).round() as i64
    }

    /// Quantizes an RF frequency to the center of its channel.
    pub fn snap_to_bin(&self, freq_hz: f64) -> f64 {
        self.bin0_freq_hz() + self.bin_of(freq_hz) as f64 * self.bin_width_hz()
    }

    pub fn band_lo_hz(&self) -> f64 {
        self.center_freq_hz - self.bandwidth_hz / 2.0
    }

    pub fn band_hi_hz(&self) -> f64 {
        self.center_freq_hz + self.bandwidth_hz / 2.0
    }

    pub fn in_band(&self, freq_hz: f64) -> bool {
        freq_hz >= self.band_lo_hz() && freq_hz <= self.band_hi_hz()
    }

    /// Spectrum indices whose channel centers lie inside the observation band.
    pub fn band_bins(&self) -> RangeInclusive<usize> {
        let w = self.bin_width_hz();
        let b0 = self.bin0_freq_hz();
        let lo = ((self.band_lo_hz() - b0) / w - 1e-9).ceil().max(0.0) as usize;
        let hi = ((self.band_hi_hz() - b0) / w + 1e-9).floor() as usize;
        lo..=hi.min(self.fft_len() - 1)
    }

    pub fn frame_days(&self) -> f64 {
        self.integration_t_s / SECONDS_PER_DAY
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_days * SECONDS_PER_DAY / self.integration_t_s + 1e-9).floor() as u64
    }

    /// Timestamp of the start of a frame.
    pub fn frame_mjd(&self, frame: u64) -> f64 {
        self.start_mjd + frame as f64 * self.frame_days()
    }

    /// Frame index nearest to a timestamp.
    pub fn frame_of(&self, mjd: f64) -> i64 {
        ((mjd - self.start_mjd) / self.frame_days()).round() as i64
    }

    pub fn noise_event_rate_at(&self, threshold_db: f64) -> f64 {
        (-db_to_linear(threshold_db)).exp()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Background crossings per bin-frame per polarization. When absent the
    /// rate implied by AWGN at the capture threshold is used.
    pub noise_event_rate: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            noise_event_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub post_mask_enabled: bool,
    pub occupancy_threshold: f64,
    pub dynamic_enabled: bool,
    pub dynamic_alpha: f64,
    pub dynamic_theta_on: f64,
    pub dynamic_theta_off: f64,
    pub harmonic_enabled: bool,
    pub edge_dc_enabled: bool,
    /// Defaults to 1 % of the observation bandwidth.
    pub edge_margin_hz: Option<f64>,
    pub dc_margin_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            post_mask_enabled: true,
            occupancy_threshold: 0.01,
            dynamic_enabled: true,
            dynamic_alpha: 0.02,
            dynamic_theta_on: 0.2,
            dynamic_theta_off: 0.05,
            harmonic_enabled: true,
            edge_dc_enabled: true,
            edge_margin_hz: None,
            dc_margin_hz: 100.0,
        }
    }
}

impl FilterConfig {
    pub fn edge_margin_for(&self, obs: &ObservationConfig) -> f64 {
        self.edge_margin_hz.unwrap_or(0.01 * obs.bandwidth_hz)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    pub dt_max_s: f64,
    pub df_min_hz: f64,
    pub df_max_hz: f64,
    pub interarrival_enabled: bool,
    pub snr_high_db: f64,
    pub snr_low_db: f64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            dt_max_s: 3.0,
            df_min_hz: 80.0,
            df_max_hz: 1100.0,
            interarrival_enabled: true,
            snr_high_db: 13.0,
            snr_low_db: CAPTURE_SNR_DB,
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max_s > 0.0) {
            return Err(Error::Config("dt_max_s must be positive".into()));
        }
        if !(self.df_min_hz > 0.0 && self.df_min_hz < self.df_max_hz) {
            return Err(Error::Config(
                "pairing window requires 0 < df_min_hz < df_max_hz".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Per-trial probability that an AWGN pair lands in a given RA bin.
    pub event_probability: f64,
    pub prior: Option<f64>,
    pub comb_fundamental_hz: f64,
    pub comb_tolerance_hz: f64,
    pub histogram_bin_hz: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            event_probability: crate::stats::EVENT_PROBABILITY,
            prior: None,
            comb_fundamental_hz: 2.44e6,
            comb_tolerance_hz: 2.0e3,
            histogram_bin_hz: 10.0e3,
        }
    }
}

/// Everything a pipeline run needs, as loaded from a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub observation: ObservationConfig,
    pub simulation: SimulationConfig,
    pub filters: FilterConfig,
    pub pairing: PairingConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(path, text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.observation.validate()?;
        self.pairing.validate()?;
        if let Some(r) = self.simulation.noise_event_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config("noise_event_rate must lie in [0, 1]".into()));
            }
        }
        let f = &self.filters;
        if !(f.occupancy_threshold > 0.0 && f.occupancy_threshold < 1.0) {
            return Err(Error::Config("occupancy_threshold must lie in (0, 1)".into()));
        }
        crate::rfi::DynamicExcisionState::check_coefficients(
            f.dynamic_alpha,
            f.dynamic_theta_on,
            f.dynamic_theta_off,
        )?;
        let half = self.observation.bandwidth_hz / 2.0;
        let edge = f.edge_margin_for(&self.observation);
        if !(0.0..half).contains(&edge) || !(0.0..half).contains(&f.dc_margin_hz) {
            return Err(Error::Config(
                "edge and DC margins must be >= 0 and below half the bandwidth".into(),
            ));
        }
        let p = self.analysis.event_probability;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config("event_probability must lie in (0, 1)".into()));
        }
        if let Some(prior) = self.analysis.prior {
            if !(prior > 0.0 && prior < 1.0) {
                return Err(Error::Config("prior must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn noise_event_rate(&self) -> f64 {
        self.simulation.noise_event_rate.unwrap_or_else(|| {
            self.observation
                .noise_event_rate_at(self.observation.capture_snr_threshold_db)
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

pub(crate) fn toml_error(path: &Path, text: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1)
        .unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.message().to_string(),
    }
}
