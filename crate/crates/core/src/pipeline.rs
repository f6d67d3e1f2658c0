//! End-to-end stages behind the command line: simulate a capture, process
//! events into trials, analyze trials into per-bin reports. Every stage
//! writes a JSON manifest with content digests, timings and survival counts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channelizer::{detect_events, estimate_noise_floor, Channelizer, ThresholdEvent};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, PairRecord};
use crate::pairing::{self, PulsePair};
use crate::rfi::{self, DynamicExcisionState, ExcisionEpisode, Provenance, RfiMask};
use crate::scene::{render_events, IqRenderer, Scene};
use crate::sky::{RaBin, RA_BIN_COUNT};
use crate::stats::{self, AnalysisReport, BinomialCurve, ChiSquareTest, FreqDiffHistogram};

/// How `simulate` produces threshold crossings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Sample crossings directly at the event level.
    Events,
    /// Synthesize IQ, channelize and threshold every frame.
    Iq,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub count: u64,
}

/// Audit record of one pipeline invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub software_version: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stage_timings: Vec<StageTiming>,
    pub survival: Vec<StageCount>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            stage_timings: Vec::new(),
            survival: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        io::write_file(path, bytes)?;
        self.outputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f()?;
        self.stage_timings.push(StageTiming {
            stage: stage.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Argument(format!("manifest encoding failed: {e}")))?;
        io::write_file(path, format!("{text}\n").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            reason: e.to_string(),
        })
    }
}

/// `dir/name.ext` -> `dir/name.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Threshold crossings of `scene` as captured under `cfg`.
pub fn simulate(scene: &Scene, cfg: &RunConfig, mode: RenderMode) -> Result<Vec<ThresholdEvent>> {
    cfg.validate()?;
    match mode {
        RenderMode::Events => render_events(&scene.components, &cfg.observation, cfg.noise_event_rate()),
        RenderMode::Iq => capture_iq(scene, cfg),
    }
}

fn capture_iq(scene: &Scene, cfg: &RunConfig) -> Result<Vec<ThresholdEvent>> {
    let obs = &cfg.observation;
    let renderer = IqRenderer::new(&scene.components, obs)?;
    let channelizer = Channelizer::new(obs)?;
    let frames = obs.frame_count();
    let per_frame: Vec<Vec<ThresholdEvent>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let block = renderer.frame(f);
            let (l, r) = channelizer.channelize(&block)?;
            let floors = (estimate_noise_floor(&l), estimate_noise_floor(&r));
            Ok(detect_events((&l, &r), floors, obs.capture_snr_threshold_db))
        })
        .collect::<Result<_>>()?;
    let mut events: Vec<ThresholdEvent> = per_frame.into_iter().flatten().collect();
    events.sort_by(ThresholdEvent::capture_order);
    Ok(events)
}

/// Renders a scene file to an event file plus `<stem>.manifest.json`.
pub fn run_simulate(
    scene_path: &Path,
    cfg: &RunConfig,
    config_path: Option<&Path>,
    mode: RenderMode,
    out: &Path,
) -> Result<RunManifest> {
    let mut m = RunManifest::new(&format!("simulate --{}", mode_name(mode)), cfg);
    if let Some(p) = config_path {
        m.input(p)?;
    }
    m.input(scene_path)?;
    let scene = Scene::load(scene_path)?;
    let events = m.time("render", || simulate(&scene, cfg, mode))?;
    m.survival.push(StageCount {
        stage: "events".into(),
        count: events.len() as u64,
    });
    let bytes = io::events_to_csv(&events)?;
    m.output(out, &bytes)?;
    m.write(&sidecar(out, "manifest.json"))?;
    Ok(m)
}

fn mode_name(mode: RenderMode) -> &'static str {
    match mode {
        RenderMode::Events => "events",
        RenderMode::Iq => "iq",
    }
}

/// Stage names in processing order.
pub const STAGES: [&str; 9] = [
    "input",
    "static_mask",
    "post_mask",
    "dynamic",
    "harmonic",
    "edge_dc",
    "pair_match",
    "interarrival",
    "snr_sort",
];

#[derive(Clone, Debug)]
pub struct ProcessOutput {
    pub survival: Vec<StageCount>,
    pub post_mask: RfiMask,
    pub episodes: Vec<ExcisionEpisode>,
    /// Pairs after interarrival excision, in time order.
    pub time_ordered: Vec<PulsePair>,
    /// Trials, in trial order.
    pub trials: Vec<PulsePair>,
    pub timings: Vec<StageTiming>,
}

/// Runs the filter chain and pairing over a time-ordered event stream.
pub fn process_events(
    events: &[ThresholdEvent],
    cfg: &RunConfig,
    static_mask: &RfiMask,
) -> Result<ProcessOutput> {
    cfg.validate()?;
    let obs = &cfg.observation;
    let f = &cfg.filters;
    let mut counts = vec![events.len() as u64];
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage: name.into(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };

    let ev = rfi::apply_mask(events, static_mask);
    counts.push(ev.len() as u64);
    lap("static_mask", &mut timings);

    let (ev, post_mask) = if f.post_mask_enabled {
        let mask = rfi::build_post_mask(&ev, obs, f.occupancy_threshold)?;
        (rfi::apply_mask(&ev, &mask), mask)
    } else {
        (ev, RfiMask::empty())
    };
    counts.push(ev.len() as u64);
    lap("post_mask", &mut timings);

    let (ev, episodes) = if f.dynamic_enabled {
        let mut state = DynamicExcisionState::new(f.dynamic_alpha, f.dynamic_theta_on, f.dynamic_theta_off)?;
        rfi::dynamic_excise(&ev, &mut state, obs)?
    } else {
        (ev, Vec::new())
    };
    counts.push(ev.len() as u64);
    lap("dynamic", &mut timings);

    let ev = if f.harmonic_enabled {
        rfi::harmonic_excise(&ev)
    } else {
        ev
    };
    counts.push(ev.len() as u64);
    lap("harmonic", &mut timings);

    let ev = if f.edge_dc_enabled {
        rfi::edge_dc_excise(&ev, obs, f.edge_margin_for(obs), f.dc_margin_hz)
    } else {
        ev
    };
    counts.push(ev.len() as u64);
    lap("edge_dc", &mut timings);

    let pairs = pairing::match_pairs(&ev, &cfg.pairing, obs)?;
    counts.push(pairs.len() as u64);
    lap("pair_match", &mut timings);

    let pairs = if cfg.pairing.interarrival_enabled {
        pairing::interarrival_filter(&pairs, obs)
    } else {
        pairs
    };
    counts.push(pairs.len() as u64);
    lap("interarrival", &mut timings);

    let trials = pairing::snr_sort(&pairs, cfg.pairing.snr_high_db, cfg.pairing.snr_low_db);
    counts.push(trials.len() as u64);
    lap("snr_sort", &mut timings);

    Ok(ProcessOutput {
        survival: STAGES
            .iter()
            .zip(counts)
            .map(|(s, count)| StageCount {
                stage: (*s).into(),
                count,
            })
            .collect(),
        post_mask,
        episodes,
        time_ordered: pairs,
        trials,
        timings,
    })
}

/// Processes an event file into a pair file. Sidecars next to `out`:
/// `<stem>.dynamic.csv`, `<stem>.post_mask.csv`, `<stem>.manifest.json`.
pub fn run_process(
    events_path: &Path,
    cfg: &RunConfig,
    config_path: Option<&Path>,
    static_mask_path: Option<&Path>,
    out: &Path,
) -> Result<RunManifest> {
    let mut m = RunManifest::new("process", cfg);
    if let Some(p) = config_path {
        m.input(p)?;
    }
    m.input(events_path)?;
    let static_mask = match static_mask_path {
        Some(p) => {
            m.input(p)?;
            io::read_mask(p, Provenance::Static)?
        }
        None => RfiMask::empty(),
    };
    let events = m.time("read_events", || io::read_events(events_path))?;
    let result = process_events(&events, cfg, &static_mask)?;
    m.stage_timings.extend(result.timings.iter().cloned());
    m.survival = result.survival.clone();

    m.output(out, &io::pairs_to_csv(&PairRecord::from_sorted(&result.trials))?)?;
    m.output(&sidecar(out, "dynamic.csv"), &io::trace_to_csv(&result.episodes)?)?;
    m.output(&sidecar(out, "post_mask.csv"), &io::mask_to_csv(&result.post_mask)?)?;
    m.write(&sidecar(out, "manifest.json"))?;
    Ok(m)
}

#[derive(Clone, Debug, Default)]
pub struct AnalyzeOptions {
    /// Overrides the prior in the configuration.
    pub prior: Option<f64>,
    /// Restrict the frequency-difference histogram to one RA bin.
    pub histogram_bin: Option<RaBin>,
    pub svg: bool,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub curves: Vec<BinomialCurve>,
    pub report: AnalysisReport,
    pub bin_counts: Vec<u64>,
    pub uniformity: Option<ChiSquareTest>,
    pub histogram: FreqDiffHistogram,
    pub chance_level: f64,
    pub warnings: Vec<String>,
}

pub fn analyze_records(records: &[PairRecord], cfg: &RunConfig, opts: &AnalyzeOptions) -> Result<Analysis> {
    cfg.validate()?;
    let a = &cfg.analysis;
    let prior = opts.prior.or(a.prior);
    let bins: Vec<RaBin> = records.iter().map(PairRecord::ra_bin).collect();
    let curves = stats::likelihood_curves(&bins, a.event_probability)?;
    let report = stats::analyze_curves(&curves, prior)?;

    let mut bin_counts = vec![0u64; RA_BIN_COUNT];
    for b in &bins {
        bin_counts[b.index()] += 1;
    }
    let uniformity = if records.len() >= RA_BIN_COUNT {
        Some(stats::uniformity_test(&bin_counts)?)
    } else {
        None
    };
    let freqs: Vec<f64> = records
        .iter()
        .filter(|r| opts.histogram_bin.map_or(true, |b| r.ra_bin() == b))
        .map(PairRecord::mean_freq)
        .collect();
    let histogram = stats::freq_diff_histogram(&freqs, a.histogram_bin_hz, a.comb_fundamental_hz, a.comb_tolerance_hz)?;
    let obs = &cfg.observation;
    let chance_level = stats::harmonic_chance_level(
        obs.band_hi_hz() - obs.band_lo_hz(),
        a.comb_fundamental_hz,
        a.comb_tolerance_hz,
    );
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push("pair file holds no trials; every bin reports density 1".into());
    }
    Ok(Analysis {
        curves,
        report,
        bin_counts,
        uniformity,
        histogram,
        chance_level,
        warnings,
    })
}

/// Analyzes a pair file into `out_dir`.
pub fn run_analyze(
    pairs_path: &Path,
    cfg: &RunConfig,
    config_path: Option<&Path>,
    opts: &AnalyzeOptions,
    out_dir: &Path,
) -> Result<(RunManifest, Analysis)> {
    let mut m = RunManifest::new("analyze", cfg);
    if let Some(p) = config_path {
        m.input(p)?;
    }
    m.input(pairs_path)?;
    let records = io::read_pairs(pairs_path)?;
    let analysis = m.time("analyze", || analyze_records(&records, cfg, opts))?;
    m.warnings = analysis.warnings.clone();
    m.survival.push(StageCount {
        stage: "trials".into(),
        count: records.len() as u64,
    });

    m.output(&out_dir.join("summary.csv"), &io::summary_to_csv(&analysis.report)?)?;
    m.output(&out_dir.join("curves.csv"), &io::curves_to_csv(&analysis.curves)?)?;
    m.output(
        &out_dir.join("scatter_mjd_freq.csv"),
        &io::rows_to_csv(
            &["trial", "mjd_ref", "freq_hz", "ra_bin"],
            records.iter().map(|r| {
                vec![
                    r.trial.to_string(),
                    format!("{:.9}", r.mjd_ref),
                    format!("{:.4}", r.mean_freq()),
                    r.ra_bin().index().to_string(),
                ]
            }),
        )?,
    )?;
    m.output(
        &out_dir.join("scatter_dt_df.csv"),
        &io::rows_to_csv(
            &["trial", "dt_s", "df_hz"],
            records
                .iter()
                .map(|r| vec![r.trial.to_string(), format!("{:.5}", r.dt_s), format!("{:.3}", r.df_hz)]),
        )?,
    )?;
    let h = &analysis.histogram;
    m.output(
        &out_dir.join("freq_diff_histogram.csv"),
        &io::rows_to_csv(
            &["lo_hz", "hi_hz", "count"],
            h.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, c)| {
                vec![
                    format!("{:.1}", i as f64 * h.bin_width_hz),
                    format!("{:.1}", (i + 1) as f64 * h.bin_width_hz),
                    c.to_string(),
                ]
            }),
        )?,
    )?;
    m.output(&out_dir.join("report.txt"), report_text(&analysis, opts).as_bytes())?;
    if opts.svg {
        for c in &analysis.curves {
            let path = out_dir.join("svg").join(format!("bin_{:02}.svg", c.bin.index()));
            m.output(&path, curve_svg(c).as_bytes())?;
        }
    }
    m.write(&out_dir.join("manifest.json"))?;
    Ok((m, analysis))
}

/// Human-readable summary; byte-stable for identical inputs.
pub fn report_text(a: &Analysis, opts: &AnalyzeOptions) -> String {
    use std::fmt::Write;
    let r = &a.report;
    let mut s = String::new();
    let _ = writeln!(s, "trials: {}", r.total_trials);
    let _ = writeln!(s, "event probability: {:.6}", r.event_probability);
    if let Some(p) = r.prior {
        let _ = writeln!(s, "prior: {p:e}");
    }
    for w in &a.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let worst = r.most_anomalous();
    let _ = writeln!(
        s,
        "most anomalous bin: {} ({}), min density {:.6e} at n = {}, k = {} ({}), expected {:.4}",
        worst.bin.index(),
        worst.bin,
        worst.min_density,
        worst.n_at_min,
        worst.k_at_min,
        worst.direction.name(),
        worst.n_at_min as f64 * r.event_probability,
    );
    let _ = writeln!(s, "normalized likelihood: {:.6e}", worst.normalized_likelihood);
    if let Some(p) = worst.posterior {
        let _ = writeln!(s, "posterior: {p:.6e}");
    }
    match &a.uniformity {
        Some(u) => {
            let _ = writeln!(
                s,
                "uniformity: chi2 = {:.4}, dof = {}, p = {:.6}",
                u.statistic, u.dof, u.p_value
            );
        }
        None => {
            let _ = writeln!(s, "uniformity: not computed (fewer than {RA_BIN_COUNT} trials)");
        }
    }
    let scope = match opts.histogram_bin {
        Some(b) => format!("bin {}", b.index()),
        None => "all bins".into(),
    };
    match a.histogram.harmonic_score {
        Some(score) => {
            let _ = writeln!(
                s,
                "harmonic score ({scope}): {score:.4} over {} differences, chance {:.6}",
                a.histogram.differences, a.chance_level
            );
        }
        None => {
            let _ = writeln!(s, "harmonic score ({scope}): n/a");
        }
    }
    let _ = writeln!(s, "bin,k_final,min_density,direction");
    for (b, c) in r.bins.iter().zip(&a.bin_counts) {
        let _ = writeln!(s, "{},{},{:.6e},{}", b.bin.index(), c, b.min_density, b.direction.name());
    }
    s
}

/// Density against trial number on a log axis, with markers where the bin
/// gained a trial.
pub fn curve_svg(c: &BinomialCurve) -> String {
    use std::fmt::Write;
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let n_max = c.points.len().max(1) as f64;
    let floor = c
        .points
        .iter()
        .map(|p| p.density)
        .fold(1e-4, f64::min)
        .max(1e-300)
        .log10()
        .floor();
    let x = |n: u64| pad + (n as f64 - 1.0).max(0.0) / (n_max - 1.0).max(1.0) * (w - 2.0 * pad);
    let y = |d: f64| pad + d.max(1e-300).log10() / floor * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">RA {} binomial density vs SNR-sorted trial</text>"#,
        c.bin
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{:.1}" font-family="sans-serif" font-size="11">1e{floor}</text>"#,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="4" y="{pad}" font-family="sans-serif" font-size="11">1</text>"#);
    let pts: Vec<String> = c
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.n), y(p.density)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="black" stroke-width="1" points="{}"/>"#,
        pts.join(" ")
    );
    for p in c.points.iter().filter(|p| p.step) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="red"/>"#,
            x(p.n),
            y(p.density)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Outcome of one built-in check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck {
        name: name.into(),
        passed,
        detail,
    }
}

/// Fast end-to-end sanity checks of the numerics and a one-day pipeline
/// run with an injected pulse pair train.
pub fn selftest() -> Result<Vec<SelfCheck>> {
    use crate::scene::{PulsePairTrain, SceneComponent};
    let p = stats::EVENT_PROBABILITY;
    let mut out = Vec::new();

    let d = stats::binomial_density(14, 417, p)?;
    out.push(check(
        "binomial density (14 of 417)",
        (0.00060..=0.00066).contains(&d),
        format!("{d:.6e}"),
    ));
    let l = stats::normalized_likelihood(14, 417, p)?;
    out.push(check(
        "normalized likelihood (14 of 417)",
        (0.0032..=0.0040).contains(&l),
        format!("{l:.6e}"),
    ));
    let post = stats::bayes_update(1e-4, 0.0036)?;
    out.push(check(
        "posterior from prior 1e-4",
        ((post - 3.6e-7) / 3.6e-7).abs() <= 0.01,
        format!("{post:.6e}"),
    ));

    let any = stats::df_coincidence_analytic(&stats::CoincidenceParams {
        n_pairs: 14,
        df_min_hz: 80.0,
        df_max_hz: stats::ANY_MATCH_REFERENCE_DF_MAX_HZ,
        tolerance_hz: 3.7,
        mode: stats::CoincidenceMode::AnyMatchPair,
        targets_hz: Vec::new(),
    })?;
    out.push(check(
        "any-match coincidence",
        (any - 0.075).abs() <= 0.01,
        format!("{any:.4}"),
    ));

    let mut cfg = RunConfig::default();
    cfg.observation.duration_days = 1.0;
    let train = PulsePairTrain {
        ra_target_h: 5.25,
        freq_hz: 1_420_250_000.0,
        freq_span_hz: 40_000.0,
        dt_s: 1.2,
        df_hz: 300.0,
        snr_lcp_db: 16.0,
        snr_rcp_db: 15.0,
        rate_per_transit: 20.0,
    };
    let injected = train.emissions(&cfg.observation)?.len();
    let scene = Scene::new(vec![SceneComponent::PulsePairTrain(train)]);
    let events = simulate(&scene, &cfg, RenderMode::Events)?;
    let result = process_events(&events, &cfg, &RfiMask::empty())?;
    let recovered = result
        .trials
        .iter()
        .filter(|t| t.ra_bin().index() == 17 && (t.df - 300.0).abs() < 4.0)
        .count();
    out.push(check(
        "one-day pipeline recovers injected pairs",
        injected > 0 && recovered as f64 >= 0.95 * injected as f64,
        format!("{recovered} of {injected}, {} trials total", result.trials.len()),
    ));
    Ok(out)
}
