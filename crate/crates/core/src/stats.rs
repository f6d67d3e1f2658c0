//! Binomial likelihood curves over SNR-sorted trials, Bayesian updates,
//! Δf coincidence probabilities and frequency-difference diagnostics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::scene::stream_rng;
use crate::sky::{RaBin, RA_BIN_COUNT};

/// Chance that a trial lands in a given RA bin under the null: 0.3 h of
/// 24 h. Written as 1/80 because `0.3 / 24.0` rounds below 0.0125.
pub const EVENT_PROBABILITY: f64 = 1.0 / RA_BIN_COUNT as f64;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(n!) - ((n + 1/2) ln n - n + ln sqrt(2 pi))`, the Stirling remainder.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        let nf = n as f64;
        let ln_fact: f64 = (2..=n).map(|i| (i as f64).ln()).sum();
        return ln_fact - (nf + 0.5) * nf.ln() + nf - LN_SQRT_2PI;
    }
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated without cancellation
/// when `x` is close to `np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `C(n, k) p^k (1 - p)^(n - k)`.
///
/// Uses the saddle-point form (Stirling remainders plus deviance terms),
/// which keeps full double precision out to very large `n` where a plain
/// log-gamma difference loses digits to cancellation.
pub fn binomial_density(k: u64, n: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
    }
    let q = 1.0 - p;
    let (kf, nf) = (k as f64, n as f64);
    if p == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if q == 0.0 {
        return Ok(if k == n { 1.0 } else { 0.0 });
    }
    if k == 0 {
        if n == 0 {
            return Ok(1.0);
        }
        let lc = if p < 0.1 {
            -bd0(nf, nf * q) - nf * p
        } else {
            nf * q.ln()
        };
        return Ok(lc.exp());
    }
    if k == n {
        let lc = if q < 0.1 {
            -bd0(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
        return Ok(lc.exp());
    }
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = std::f64::consts::TAU.ln() + kf.ln() + (-kf / nf).ln_1p();
    Ok((lc - 0.5 * lf).exp())
}

/// Most probable count, `floor((n + 1) p)`.
pub fn modal_count(n: u64, p: f64) -> u64 {
    (((n + 1) as f64 * p).floor() as u64).min(n)
}

/// Density at `k` relative to the density at the modal count.
pub fn normalized_likelihood(k: u64, n: u64, p: f64) -> Result<f64> {
    let d = binomial_density(k, n, p)?;
    let mode = binomial_density(modal_count(n, p), n, p)?;
    Ok((d / mode).min(1.0))
}

/// Posterior probability of a hypothesis after observing data with the
/// given likelihood ratio against the null.
pub fn bayes_update(prior: f64, likelihood_ratio: f64) -> Result<f64> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::Argument(format!("prior {prior} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&likelihood_ratio) {
        return Err(Error::Argument(format!(
            "likelihood ratio {likelihood_ratio} outside [0, 1]"
        )));
    }
    let num = prior * likelihood_ratio;
    Ok(num / (num + (1.0 - prior)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub k: u64,
    pub density: f64,
    /// Trial `n` landed in this bin.
    pub step: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialCurve {
    pub bin: RaBin,
    pub p: f64,
    pub points: Vec<CurvePoint>,
}

impl BinomialCurve {
    /// Earliest point of least density, if the curve has any points.
    pub fn minimum(&self) -> Option<&CurvePoint> {
        self.points
            .iter()
            .reduce(|best, pt| if pt.density < best.density { pt } else { best })
    }

    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

/// One curve per RA bin. `trial_bins[i]` is the bin of trial `i + 1`.
pub fn likelihood_curves(trial_bins: &[RaBin], p: f64) -> Result<Vec<BinomialCurve>> {
    binomial_density(0, 0, p)?;
    RaBin::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|bin| {
            let mut k = 0u64;
            let mut points = Vec::with_capacity(trial_bins.len());
            for (i, &b) in trial_bins.iter().enumerate() {
                let step = b == bin;
                k += step as u64;
                let n = i as u64 + 1;
                points.push(CurvePoint {
                    n,
                    k,
                    density: binomial_density(k, n, p)?,
                    step,
                });
            }
            Ok(BinomialCurve { bin, p, points })
        })
        .collect()
}

/// Whether a bin's least-likely point sits above or below the mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Excess,
    Deficit,
    Modal,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Excess => "excess",
            Direction::Deficit => "deficit",
            Direction::Modal => "modal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: RaBin,
    pub min_density: f64,
    pub n_at_min: u64,
    pub k_at_min: u64,
    pub normalized_likelihood: f64,
    pub posterior: Option<f64>,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub total_trials: u64,
    pub event_probability: f64,
    pub prior: Option<f64>,
    pub bins: Vec<BinSummary>,
}

impl AnalysisReport {
    pub fn bin(&self, bin: RaBin) -> &BinSummary {
        &self.bins[bin.index()]
    }

    /// Bin with the smallest minimum density.
    pub fn most_anomalous(&self) -> &BinSummary {
        self.bins
            .iter()
            .reduce(|a, b| if b.min_density < a.min_density { b } else { a })
            .expect("report covers every bin")
    }
}

/// Summarizes each curve at its minimum. An empty curve reports density 1
/// at `n = k = 0`.
pub fn analyze_curves(curves: &[BinomialCurve], prior: Option<f64>) -> Result<AnalysisReport> {
    if curves.len() != RA_BIN_COUNT {
        return Err(Error::Argument(format!(
            "expected {RA_BIN_COUNT} curves, got {}",
            curves.len()
        )));
    }
    let p = curves[0].p;
    let mut bins = Vec::with_capacity(RA_BIN_COUNT);
    for c in curves {
        let (min_density, n, k) = match c.minimum() {
            Some(pt) => (pt.density, pt.n, pt.k),
            None => (1.0, 0, 0),
        };
        let normalized = normalized_likelihood(k, n, c.p)?;
        let posterior = prior.map(|pr| bayes_update(pr, normalized)).transpose()?;
        let mode = modal_count(n, c.p);
        let direction = match k.cmp(&mode) {
            std::cmp::Ordering::Greater => Direction::Excess,
            std::cmp::Ordering::Less => Direction::Deficit,
            std::cmp::Ordering::Equal => Direction::Modal,
        };
        bins.push(BinSummary {
            bin: c.bin,
            min_density,
            n_at_min: n,
            k_at_min: k,
            normalized_likelihood: normalized,
            posterior,
            direction,
        });
    }
    Ok(AnalysisReport {
        total_trials: curves[0].points.len() as u64,
        event_probability: p,
        prior,
        bins,
    })
}

/// Which coincidence event a Δf experiment counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoincidenceMode {
    /// Two or more disjoint pairs of draws agree within tolerance.
    AnyMatchPair,
    /// Some draw lands within tolerance of `±target`.
    TargetMatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceParams {
    pub n_pairs: u32,
    pub df_min_hz: f64,
    pub df_max_hz: f64,
    pub tolerance_hz: f64,
    pub mode: CoincidenceMode,
    pub targets_hz: Vec<f64>,
}

impl CoincidenceParams {
    fn validate(&self) -> Result<()> {
        if !(self.df_min_hz >= 0.0 && self.df_max_hz > self.df_min_hz && self.df_max_hz.is_finite()) {
            return Err(Error::Argument(format!(
                "need 0 <= df_min < df_max, got [{}, {}]",
                self.df_min_hz, self.df_max_hz
            )));
        }
        if !(self.tolerance_hz >= 0.0 && self.tolerance_hz.is_finite()) {
            return Err(Error::Argument(format!(
                "tolerance {} must be finite and >= 0",
                self.tolerance_hz
            )));
        }
        if self.mode == CoincidenceMode::TargetMatch {
            if self.targets_hz.is_empty() {
                return Err(Error::Argument("target_match needs at least one target".into()));
            }
            if self.targets_hz.iter().any(|t| !t.is_finite()) {
                return Err(Error::Argument("targets must be finite".into()));
            }
        }
        Ok(())
    }

    fn segment(&self) -> f64 {
        self.df_max_hz - self.df_min_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub trials: u64,
}

pub const MIN_MC_TRIALS: u64 = 100_000;

/// Upper Δf limit (Hz, with a lower limit of 80 Hz) at which 14 signed
/// draws with a 3.7 Hz tolerance give an any-match probability of 0.075.
pub const ANY_MATCH_REFERENCE_DF_MAX_HZ: f64 = 728.984;
/// Upper Δf limit (Hz, lower limit 80 Hz) at which 14 draws hit one of the
/// targets 207.7 Hz or 252.5 Hz within 3.7 Hz with probability 0.19.
pub const TARGET_MATCH_REFERENCE_DF_MAX_HZ: f64 = 1070.709;
pub const REFERENCE_TARGETS_HZ: [f64; 2] = [207.7, 252.5];
const MC_BLOCK: u64 = 8192;
const MC_STREAM_TAG: u64 = 0xc01c;

/// Monte Carlo estimate over `trials` experiments of `n_pairs` signed Δf
/// draws, uniform on `±[df_min, df_max]`.
pub fn df_coincidence_mc(params: &CoincidenceParams, trials: u64, seed: u64) -> Result<McEstimate> {
    params.validate()?;
    if trials < MIN_MC_TRIALS {
        return Err(Error::Argument(format!(
            "{trials} trials requested, at least {MIN_MC_TRIALS} required"
        )));
    }
    let blocks = trials.div_ceil(MC_BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, MC_STREAM_TAG, b);
            let count = MC_BLOCK.min(trials - b * MC_BLOCK);
            let mut draws = vec![0.0; params.n_pairs as usize];
            let mut hits = 0u64;
            for _ in 0..count {
                for d in draws.iter_mut() {
                    let mag = rng.random_range(params.df_min_hz..=params.df_max_hz);
                    *d = if rng.random::<bool>() { mag } else { -mag };
                }
                hits += experiment_hit(params, &mut draws) as u64;
            }
            hits
        })
        .sum();
    let p = hits as f64 / trials as f64;
    Ok(McEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    })
}

fn experiment_hit(params: &CoincidenceParams, draws: &mut [f64]) -> bool {
    let tol = params.tolerance_hz;
    match params.mode {
        CoincidenceMode::TargetMatch => draws.iter().any(|d| {
            params
                .targets_hz
                .iter()
                .any(|t| (d - t).abs() <= tol || (d + t).abs() <= tol)
        }),
        CoincidenceMode::AnyMatchPair => {
            if tol == 0.0 {
                return false;
            }
            draws.sort_by(f64::total_cmp);
            // Greedy matching along the sorted line is maximum for a
            // threshold graph on points.
            let mut matched = 0;
            let mut i = 0;
            while i + 1 < draws.len() {
                if draws[i + 1] - draws[i] <= tol {
                    matched += 1;
                    if matched >= 2 {
                        return true;
                    }
                    i += 2;
                } else {
                    i += 1;
                }
            }
            false
        }
    }
}

/// Closed-form counterpart of [`df_coincidence_mc`].
///
/// `any_match_pair` is exact when the tolerance is below the gap between the
/// positive and negative ranges (`2 df_min`), and when it spans the whole
/// support. Tolerances in between return [`Error::Unsupported`].
pub fn df_coincidence_analytic(params: &CoincidenceParams) -> Result<f64> {
    params.validate()?;
    let n = params.n_pairs as i32;
    let tol = params.tolerance_hz;
    match params.mode {
        CoincidenceMode::TargetMatch => {
            let mut windows: Vec<(f64, f64)> = params
                .targets_hz
                .iter()
                .flat_map(|&t| [(t - tol, t + tol), (-t - tol, -t + tol)])
                .collect();
            windows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut covered = 0.0;
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for w in windows {
                match merged.last_mut() {
                    Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
                    _ => merged.push(w),
                }
            }
            let (lo, hi) = (params.df_min_hz, params.df_max_hz);
            for (a, b) in merged {
                covered += overlap(a, b, lo, hi) + overlap(a, b, -hi, -lo);
            }
            let q = (covered / (2.0 * params.segment())).clamp(0.0, 1.0);
            Ok(1.0 - (1.0 - q).powi(n))
        }
        CoincidenceMode::AnyMatchPair => {
            // Two disjoint matches need four draws.
            if tol == 0.0 || n < 4 {
                return Ok(0.0);
            }
            if tol >= 2.0 * params.df_max_hz {
                return Ok(1.0);
            }
            if tol >= 2.0 * params.df_min_hz {
                return Err(Error::Unsupported(format!(
                    "closed form needs tolerance < 2 df_min ({}) or >= 2 df_max ({}), got {tol}",
                    2.0 * params.df_min_hz,
                    2.0 * params.df_max_hz
                )));
            }
            let x = tol / params.segment();
            let n = n as u64;
            let mut none_or_one = 0.0;
            for k in 0..=n {
                let w = binomial_density(k, n, 0.5)?;
                let (p0a, p1a) = (no_match(k, x), one_match(k, x));
                let (p0b, p1b) = (no_match(n - k, x), one_match(n - k, x));
                none_or_one += w * (p0a * p0b + p1a * p0b + p0a * p1b);
            }
            Ok((1.0 - none_or_one).clamp(0.0, 1.0))
        }
    }
}

fn overlap(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    (b.min(hi) - a.max(lo)).max(0.0)
}

/// Probability that `a` named gaps among `m` uniform points on a unit
/// segment are at most `x` and the remaining gaps exceed it.
fn gap_pattern(m: u64, a: u64, x: f64) -> f64 {
    let b = (m - 1 - a) as f64;
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..=a {
        let term = (1.0 - (b + j as f64) * x).max(0.0).powi(m as i32);
        sum += if j % 2 == 0 { binom * term } else { -binom * term };
        binom = binom * (a - j) as f64 / (j + 1) as f64;
    }
    sum.max(0.0)
}

/// No two of `m` uniform points within `x` of each other.
fn no_match(m: u64, x: f64) -> f64 {
    if m < 2 {
        1.0
    } else {
        gap_pattern(m, 0, x)
    }
}

/// Maximum matching of size exactly one: a single cluster of two or three
/// points, everything else isolated.
fn one_match(m: u64, x: f64) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => gap_pattern(2, 1, x),
        _ => (m - 1) as f64 * gap_pattern(m, 1, x) + (m - 2) as f64 * gap_pattern(m, 2, x),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqDiffHistogram {
    pub bin_width_hz: f64,
    /// `counts[i]` covers `[i w, (i + 1) w)`.
    pub counts: Vec<u64>,
    pub differences: u64,
    /// Fraction of differences above tolerance that sit within tolerance of
    /// a positive multiple of the fundamental.
    pub harmonic_score: Option<f64>,
}

/// Histogram of all pairwise absolute differences of `freqs_hz`.
pub fn freq_diff_histogram(
    freqs_hz: &[f64],
    bin_width_hz: f64,
    fundamental_hz: f64,
    tolerance_hz: f64,
) -> Result<FreqDiffHistogram> {
    if !(bin_width_hz > 0.0 && fundamental_hz > 0.0 && tolerance_hz >= 0.0) {
        return Err(Error::Argument(
            "bin width and fundamental must be > 0, tolerance >= 0".into(),
        ));
    }
    let mut counts: Vec<u64> = Vec::new();
    let mut differences = 0u64;
    let (mut eligible, mut on_grid) = (0u64, 0u64);
    for (i, a) in freqs_hz.iter().enumerate() {
        for b in &freqs_hz[i + 1..] {
            let d = (a - b).abs();
            let idx = (d / bin_width_hz).floor() as usize;
            if idx >= counts.len() {
                counts.resize(idx + 1, 0);
            }
            counts[idx] += 1;
            differences += 1;
            if d > tolerance_hz {
                eligible += 1;
                let k = (d / fundamental_hz).round().max(1.0);
                if (d - k * fundamental_hz).abs() <= tolerance_hz {
                    on_grid += 1;
                }
            }
        }
    }
    Ok(FreqDiffHistogram {
        bin_width_hz,
        counts,
        differences,
        harmonic_score: (eligible > 0).then(|| on_grid as f64 / eligible as f64),
    })
}

/// Expected harmonic score for frequencies uniform over a span of
/// `span_hz`, using the triangular density of their differences.
pub fn harmonic_chance_level(span_hz: f64, fundamental_hz: f64, tolerance_hz: f64) -> f64 {
    let s = span_hz;
    let mass = |a: f64, b: f64| {
        let (a, b) = (a.clamp(0.0, s), b.clamp(0.0, s));
        ((s - a).powi(2) - (s - b).powi(2)) / (s * s)
    };
    let eligible = mass(tolerance_hz, s);
    if eligible <= 0.0 {
        return 0.0;
    }
    let mut hit = 0.0;
    let mut k = 1.0;
    while k * fundamental_hz - tolerance_hz < s {
        let lo = (k * fundamental_hz - tolerance_hz).max(tolerance_hz);
        hit += mass(lo, k * fundamental_hz + tolerance_hz);
        k += 1.0;
    }
    hit / eligible
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

fn chi_square_sf(statistic: f64, dof: u64) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson chi-square of per-bin counts against a flat expectation.
pub fn uniformity_test(counts: &[u64]) -> Result<ChiSquareTest> {
    let bins = counts.len() as u64;
    let total: u64 = counts.iter().sum();
    if bins < 2 || total < bins {
        return Err(Error::Argument(format!(
            "uniformity test needs >= 2 bins and total >= bins, got {bins} bins, total {total}"
        )));
    }
    let expected = total as f64 / bins as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    Ok(ChiSquareTest {
        statistic,
        dof: bins - 1,
        p_value: chi_square_sf(statistic, bins - 1)?,
    })
}

/// Pearson chi-square of observed `(n, k)` counts against
/// `Binomial(n, p)`, pooling tail categories until each expects at least
/// five observations.
pub fn binomial_count_test(samples: &[(u64, u64)], p: f64) -> Result<ChiSquareTest> {
    if samples.is_empty() {
        return Err(Error::Argument("no samples".into()));
    }
    let k_max = samples.iter().map(|s| s.1).max().unwrap_or(0);
    let n_max = samples.iter().map(|s| s.0).max().unwrap_or(0);
    let top = (k_max + 1).max(((n_max as f64 * p) * 3.0 + 10.0) as u64).min(n_max);
    let mut expected = vec![0.0; top as usize + 1];
    let mut observed = vec![0.0; top as usize + 1];
    for &(n, k) in samples {
        if k > n {
            return Err(Error::Argument(format!("k = {k} exceeds n = {n}")));
        }
        let mut cum = 0.0;
        for j in 0..top.min(n) {
            let d = binomial_density(j, n, p)?;
            expected[j as usize] += d;
            cum += d;
        }
        expected[top.min(n) as usize] += (1.0 - cum).max(0.0);
        observed[k.min(top) as usize] += 1.0;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut e_acc, mut o_acc) = (0.0, 0.0);
    for (e, o) in expected.iter().zip(&observed) {
        e_acc += e;
        o_acc += o;
        if e_acc >= 5.0 {
            cells.push((e_acc, o_acc));
            e_acc = 0.0;
            o_acc = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += e_acc;
        last.1 += o_acc;
    }
    if cells.len() < 2 {
        return Err(Error::Argument("too few samples for a goodness-of-fit test".into()));
    }
    let statistic: f64 = cells.iter().map(|(e, o)| (o - e).powi(2) / e).sum();
    let dof = cells.len() as u64 - 1;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof)?,
    })
}
