//! Pointing model for a meridian drift scan: timestamps to local sidereal
//! time, and right ascension to the 0.3 h survey bins.

use serde::{Deserialize, Serialize};

use crate::config::ObservationConfig;
use crate::error::{Error, Result};

pub const RA_BIN_HOURS: f64 = 0.3;
pub const RA_BIN_COUNT: usize = 80;

/// GMST at the J2000.0 epoch, hours.
const GMST_J2000_HOURS: f64 = 18.697_374_558;
/// Sidereal hours elapsed per solar day.
pub const SIDEREAL_HOURS_PER_DAY: f64 = 24.065_709_824_419_08;
/// MJD of JD 2451545.0.
const MJD_J2000: f64 = 51_544.5;

/// Length of a mean sidereal day in solar days.
pub fn sidereal_day_days() -> f64 {
    24.0 / SIDEREAL_HOURS_PER_DAY
}

/// Local mean sidereal time in hours, `[0, 24)`.
///
/// Uses the linear GMST approximation, which stays well under a second of
/// the full IAU expression across the supported date range.
pub fn mjd_to_lst(mjd: f64, longitude_east_deg: f64) -> Result<f64> {
    if !(40_000.0..=80_000.0).contains(&mjd) {
        return Err(Error::Argument(format!("mjd {mjd} outside 40000..80000")));
    }
    let gmst = GMST_J2000_HOURS + SIDEREAL_HOURS_PER_DAY * (mjd - MJD_J2000);
    Ok(wrap_hours(gmst + longitude_east_deg / 15.0))
}

/// Pointing right ascension of a transit instrument: the meridian, i.e. the
/// local sidereal time.
pub fn pointing_ra(mjd: f64, cfg: &ObservationConfig) -> Result<f64> {
    mjd_to_lst(mjd, cfg.telescope_longitude_deg)
}

/// First MJD at or after `after_mjd` at which the meridian sits at `ra_hours`.
pub fn next_transit(ra_hours: f64, after_mjd: f64, longitude_east_deg: f64) -> Result<f64> {
    let lst = mjd_to_lst(after_mjd, longitude_east_deg)?;
    let ahead = wrap_hours(ra_hours - lst);
    Ok(after_mjd + ahead / SIDEREAL_HOURS_PER_DAY)
}

pub fn wrap_hours(h: f64) -> f64 {
    let w = h.rem_euclid(24.0);
    // rem_euclid can round up to exactly 24.0 for tiny negative inputs.
    if w >= 24.0 {
        0.0
    } else {
        w
    }
}

/// One of the 80 half-open right-ascension intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RaBin(u8);

impl RaBin {
    pub fn new(index: usize) -> Option<Self> {
        (index < RA_BIN_COUNT).then_some(RaBin(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn lo_hours(self) -> f64 {
        self.0 as f64 * RA_BIN_HOURS
    }

    pub fn hi_hours(self) -> f64 {
        self.lo_hours() + RA_BIN_HOURS
    }

    pub fn center_hours(self) -> f64 {
        self.lo_hours() + RA_BIN_HOURS / 2.0
    }

    pub fn contains(self, ra_hours: f64) -> bool {
        ra_bin(ra_hours) == self
    }

    pub fn all() -> impl Iterator<Item = RaBin> {
        (0..RA_BIN_COUNT as u8).map(RaBin)
    }
}

impl std::fmt::Display for RaBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}-{:.1} h", self.lo_hours(), self.hi_hours())
    }
}

pub fn ra_bin(ra_hours: f64) -> RaBin {
    let h = wrap_hours(ra_hours);
    // Compare against the decimal grid so that e.g. 5.1 (stored as
    // 5.0999999...) still opens bin 17.
    let mut idx = (h / RA_BIN_HOURS).floor() as usize;
    if idx + 1 < RA_BIN_COUNT && h >= grid_edge(idx + 1) {
        idx += 1;
    } else if idx > 0 && h < grid_edge(idx) {
        idx -= 1;
    }
    RaBin(idx.min(RA_BIN_COUNT - 1) as u8)
}

fn grid_edge(idx: usize) -> f64 {
    // 0.3 * idx rounded to the nearest representable decimal.
    (idx as f64 * 3.0) / 10.0
}
