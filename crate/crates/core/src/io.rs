//! CSV interchange: capture events, frequency masks, the dynamic excision
//! trace, pair files and analysis reports.
//!
//! Writers render into memory first so a failed run never leaves a
//! truncated file behind. Readers load the whole file and report the first
//! bad record by line number.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::channelizer::{Pol, ThresholdEvent};
use crate::error::{Error, Result};
use crate::pairing::PulsePair;
use crate::rfi::{ExcisionEpisode, MaskInterval, Provenance, RfiMask};
use crate::sky;
use crate::stats::{AnalysisReport, BinomialCurve};

pub const EVENT_HEADER: [&str; 4] = ["mjd", "freq_hz", "pol", "snr_db"];
pub const MASK_HEADER: [&str; 3] = ["lo_hz", "hi_hz", "label"];
pub const TRACE_HEADER: [&str; 5] = ["lo_hz", "hi_hz", "label", "start_mjd", "end_mjd"];
pub const PAIR_HEADER: [&str; 10] = [
    "trial",
    "mjd_ref",
    "ra_hours",
    "dt_s",
    "df_hz",
    "snr_low_db",
    "snr_high_db",
    "freq_l_hz",
    "freq_r_hz",
    "interarrival_s",
];
pub const CURVE_HEADER: [&str; 4] = ["bin", "n", "k", "density"];
pub const SUMMARY_HEADER: [&str; 6] = [
    "bin",
    "min_density",
    "n_at_min",
    "k_at_min",
    "normalized_likelihood",
    "posterior",
];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

fn write_error(e: csv::Error) -> Error {
    Error::Argument(format!("csv encoding failed: {e}"))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn render<const N: usize>(header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<Vec<u8>> {
    rows_to_csv(&header, rows.map(Vec::from))
}

/// Renders an arbitrary table with the same dialect as the fixed formats.
pub fn rows_to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(write_error)?;
    for row in rows {
        w.write_record(&row).map_err(write_error)?;
    }
    w.into_inner()
        .map_err(|e| Error::Argument(format!("csv encoding failed: {e}")))
}

/// Parsed records with their 1-based line numbers.
struct Table {
    path: PathBuf,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, header: &[&str]) -> Result<Table> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &bytes, header)
    }

    fn parse(path: &Path, bytes: &[u8], header: &[&str]) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(bytes);
        let mut records = r.records();
        let parse_err = |line: u64, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        match records.next() {
            None => return Err(parse_err(1, "missing header".into())),
            Some(rec) => {
                let rec = rec.map_err(|e| csv_error(path, e))?;
                if rec.iter().ne(header.iter().copied()) {
                    return Err(parse_err(
                        1,
                        format!("expected header `{}`", header.join(",")),
                    ));
                }
            }
        }
        let mut rows = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != header.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", header.len(), rec.len()),
                ));
            }
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            rows,
        })
    }

    fn err(&self, line: u64, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            reason: reason.into(),
        }
    }

    fn float(&self, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
        let s = &rec[i];
        match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(line, format!("{name}: `{s}` is not a finite number"))),
        }
    }

    fn uint(&self, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<u64> {
        let s = &rec[i];
        s.trim()
            .parse::<u64>()
            .map_err(|_| self.err(line, format!("{name}: `{s}` is not a non-negative integer")))
    }
}

fn event_row(e: &ThresholdEvent) -> [String; 4] {
    [
        format!("{:.9}", e.mjd),
        format!("{:.4}", e.rf_freq),
        e.pol.code().to_string(),
        format!("{:.4}", e.snr),
    ]
}

pub fn events_to_csv(events: &[ThresholdEvent]) -> Result<Vec<u8>> {
    render(EVENT_HEADER, events.iter().map(event_row))
}

pub fn write_events(path: &Path, events: &[ThresholdEvent]) -> Result<()> {
    write_file(path, &events_to_csv(events)?)
}

/// Append-only event log. Each record is flushed as written so an
/// interrupted capture keeps everything before the interruption.
pub struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    /// Opens `path` for appending, writing the header if the file is new or
    /// empty.
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let mut log = EventLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if empty {
            log.line(&EVENT_HEADER.map(String::from))?;
        }
        Ok(log)
    }

    fn line(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(",")).map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, event: &ThresholdEvent) -> Result<()> {
        self.line(&event_row(event))
    }
}

/// Reads a capture event file. Records must be in non-decreasing time
/// order.
pub fn read_events(path: &Path) -> Result<Vec<ThresholdEvent>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_events(path, &bytes)
}

pub fn parse_events(path: &Path, bytes: &[u8]) -> Result<Vec<ThresholdEvent>> {
    let t = Table::parse(path, bytes, &EVENT_HEADER)?;
    let mut out: Vec<ThresholdEvent> = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let mjd = t.float(line, rec, 0, "mjd")?;
        let rf_freq = t.float(line, rec, 1, "freq_hz")?;
        let pol = Pol::from_code(rec[2].trim())
            .ok_or_else(|| t.err(line, format!("pol: `{}` is not L or R", &rec[2])))?;
        let snr = t.float(line, rec, 3, "snr_db")?;
        if let Some(prev) = out.last() {
            if mjd < prev.mjd {
                return Err(t.err(line, "events out of time order"));
            }
        }
        out.push(ThresholdEvent {
            mjd,
            rf_freq,
            pol,
            snr,
        });
    }
    Ok(out)
}

pub fn mask_to_csv(mask: &RfiMask) -> Result<Vec<u8>> {
    render(
        MASK_HEADER,
        mask.intervals().iter().map(|iv| {
            [
                format!("{:.4}", iv.lo_hz),
                format!("{:.4}", iv.hi_hz),
                iv.label.clone(),
            ]
        }),
    )
}

pub fn write_mask(path: &Path, mask: &RfiMask) -> Result<()> {
    write_file(path, &mask_to_csv(mask)?)
}

/// Reads a frequency mask. Every interval gets the given provenance.
pub fn read_mask(path: &Path, provenance: Provenance) -> Result<RfiMask> {
    let t = Table::read(path, &MASK_HEADER)?;
    let mut intervals = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let lo = t.float(*line, rec, 0, "lo_hz")?;
        let hi = t.float(*line, rec, 1, "hi_hz")?;
        if lo > hi {
            return Err(t.err(*line, format!("lo_hz {lo} exceeds hi_hz {hi}")));
        }
        intervals.push(MaskInterval::new(lo, hi, provenance, &rec[2]));
    }
    RfiMask::new(intervals)
}

pub fn trace_to_csv(episodes: &[ExcisionEpisode]) -> Result<Vec<u8>> {
    render(
        TRACE_HEADER,
        episodes.iter().map(|e| {
            [
                format!("{:.4}", e.lo_hz),
                format!("{:.4}", e.hi_hz),
                format!("dynamic bin {}", e.bin),
                format!("{:.9}", e.start_mjd),
                format!("{:.9}", e.end_mjd),
            ]
        }),
    )
}

/// One row of a pair file.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub trial: u64,
    pub mjd_ref: f64,
    pub ra_hours: f64,
    pub dt_s: f64,
    pub df_hz: f64,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub freq_l_hz: f64,
    pub freq_r_hz: f64,
    pub interarrival_s: Option<f64>,
}

impl PairRecord {
    /// Records for pairs already in trial order.
    pub fn from_sorted(pairs: &[PulsePair]) -> Vec<PairRecord> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| PairRecord {
                trial: i as u64 + 1,
                mjd_ref: p.reference_mjd(),
                ra_hours: p.ra,
                dt_s: p.dt,
                df_hz: p.df,
                snr_low_db: p.snr_low,
                snr_high_db: p.snr_high,
                freq_l_hz: p.event_l.rf_freq,
                freq_r_hz: p.event_r.rf_freq,
                interarrival_s: p.interarrival,
            })
            .collect()
    }

    pub fn ra_bin(&self) -> sky::RaBin {
        sky::ra_bin(self.ra_hours)
    }

    pub fn mean_freq(&self) -> f64 {
        0.5 * (self.freq_l_hz + self.freq_r_hz)
    }
}

pub fn pairs_to_csv(pairs: &[PairRecord]) -> Result<Vec<u8>> {
    render(
        PAIR_HEADER,
        pairs.iter().map(|p| {
            [
                p.trial.to_string(),
                format!("{:.9}", p.mjd_ref),
                format!("{:.9}", p.ra_hours),
                format!("{:.5}", p.dt_s),
                format!("{:.3}", p.df_hz),
                format!("{:.4}", p.snr_low_db),
                format!("{:.4}", p.snr_high_db),
                format!("{:.4}", p.freq_l_hz),
                format!("{:.4}", p.freq_r_hz),
                p.interarrival_s.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    write_file(path, &pairs_to_csv(pairs)?)
}

/// Reads a pair file. Trials must run 1, 2, 3, ... in file order.
pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(path, &bytes)
}

pub fn parse_pairs(path: &Path, bytes: &[u8]) -> Result<Vec<PairRecord>> {
    let t = Table::parse(path, bytes, &PAIR_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, (line, rec)) in t.rows.iter().enumerate() {
        let line = *line;
        let trial = t.uint(line, rec, 0, "trial")?;
        if trial != i as u64 + 1 {
            return Err(t.err(line, format!("trial {trial} out of sequence, expected {}", i + 1)));
        }
        let ra_hours = t.float(line, rec, 2, "ra_hours")?;
        if !(0.0..24.0).contains(&ra_hours) {
            return Err(t.err(line, format!("ra_hours {ra_hours} outside [0, 24)")));
        }
        let interarrival_s = if rec[9].trim().is_empty() {
            None
        } else {
            Some(t.float(line, rec, 9, "interarrival_s")?)
        };
        out.push(PairRecord {
            trial,
            mjd_ref: t.float(line, rec, 1, "mjd_ref")?,
            ra_hours,
            dt_s: t.float(line, rec, 3, "dt_s")?,
            df_hz: t.float(line, rec, 4, "df_hz")?,
            snr_low_db: t.float(line, rec, 5, "snr_low_db")?,
            snr_high_db: t.float(line, rec, 6, "snr_high_db")?,
            freq_l_hz: t.float(line, rec, 7, "freq_l_hz")?,
            freq_r_hz: t.float(line, rec, 8, "freq_r_hz")?,
            interarrival_s,
        });
    }
    Ok(out)
}

pub fn curves_to_csv(curves: &[BinomialCurve]) -> Result<Vec<u8>> {
    render(
        CURVE_HEADER,
        curves.iter().flat_map(|c| {
            c.points.iter().map(move |pt| {
                [
                    c.bin.index().to_string(),
                    pt.n.to_string(),
                    pt.k.to_string(),
                    format!("{:.12e}", pt.density),
                ]
            })
        }),
    )
}

pub fn summary_to_csv(report: &AnalysisReport) -> Result<Vec<u8>> {
    render(
        SUMMARY_HEADER,
        report.bins.iter().map(|b| {
            [
                b.bin.index().to_string(),
                format!("{:.12e}", b.min_density),
                b.n_at_min.to_string(),
                b.k_at_min.to_string(),
                format!("{:.12e}", b.normalized_likelihood),
                b.posterior.map(|v| format!("{v:.12e}")).unwrap_or_default(),
            ]
        }),
    )
}

/// A summary row read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub bin: usize,
    pub min_density: f64,
    pub n_at_min: u64,
    pub k_at_min: u64,
    pub normalized_likelihood: f64,
    pub posterior: Option<f64>,
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let t = Table::read(path, &SUMMARY_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        out.push(SummaryRow {
            bin: t.uint(line, rec, 0, "bin")? as usize,
            min_density: t.float(line, rec, 1, "min_density")?,
            n_at_min: t.uint(line, rec, 2, "n_at_min")?,
            k_at_min: t.uint(line, rec, 3, "k_at_min")?,
            normalized_likelihood: t.float(line, rec, 4, "normalized_likelihood")?,
            posterior: if rec[5].trim().is_empty() {
                None
            } else {
                Some(t.float(line, rec, 5, "posterior")?)
            },
        });
    }
    Ok(out)
}
