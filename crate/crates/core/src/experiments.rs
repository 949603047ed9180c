//! Parameter sweeps over ensembles and the diagnostics applied to their
//! output: power-law fits of the QFI, thermalization times of the
//! staggered magnetization and the finite-field crossover.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ensemble::{run_ensemble, EnsembleParams, EnsembleStats};
use crate::error::{Error, Result};
use crate::floquet::DriveConfig;

/// Number of periods in the rolling slope window of the crossover detector.
pub const SLOPE_WINDOW: usize = 10;
/// Minimum length of the settled run of local slopes.
pub const MIN_SETTLED_RUN: usize = 10;
pub const TARGET_SLOPE: f64 = 2.0;
pub const SLOPE_BAND: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    OmegaAc,
    HAc,
    PhiKick,
    NSpins,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::OmegaAc => "omega_ac",
            SweepAxis::HAc => "h_ac",
            SweepAxis::PhiKick => "phi_kick",
            SweepAxis::NSpins => "n_spins",
        }
    }

    /// Copies of the base parameters with this axis set to `value`.
    pub fn apply(
        self,
        params: &EnsembleParams,
        cfg: &DriveConfig,
        value: f64,
    ) -> Result<(EnsembleParams, DriveConfig)> {
        let mut params = params.clone();
        let mut cfg = cfg.clone();
        match self {
            SweepAxis::OmegaAc => cfg.omega_ac = value,
            SweepAxis::HAc => cfg.h_ac = value,
            SweepAxis::PhiKick => cfg.phi_kick = value,
            SweepAxis::NSpins => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "n_spins sweep value {value} is not a positive integer"
                    )));
                }
                params.n_spins = value as usize;
            }
        }
        Ok((params, cfg))
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub params: EnsembleParams,
    pub drive: DriveConfig,
    /// Periods reported in the table; empty means every period.
    pub record_times: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("sweep value {v} is not finite")));
        }
        if let Some(p) = self.record_times.iter().find(|&&p| p > self.drive.n_periods) {
            return Err(Error::Config(format!(
                "record time {p} exceeds n_periods = {}",
                self.drive.n_periods
            )));
        }
        Ok(())
    }

    fn recorded_periods(&self) -> Vec<usize> {
        if self.record_times.is_empty() {
            (0..=self.drive.n_periods).collect()
        } else {
            let mut t = self.record_times.clone();
            t.sort_unstable();
            t.dedup();
            t
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// `Err` carries the message of a point that failed.
    pub outcome: std::result::Result<EnsembleStats, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub period: usize,
    pub time: f64,
    pub mag_mean: f64,
    pub mag_stderr: f64,
    pub qfi_mean: f64,
    pub qfi_stderr: f64,
    pub status: String,
}

/// Sweep output, ordered by ascending axis value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub record_times: Vec<usize>,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    /// One row per (value, recorded period). Failed points contribute a
    /// single row with NaN statistics and the error as status.
    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for point in &self.points {
            match &point.outcome {
                Ok(stats) => {
                    for &p in &self.record_times {
                        let s = &stats.periods[p];
                        rows.push(SweepRow {
                            value: point.value,
                            period: s.period,
                            time: s.time,
                            mag_mean: s.mag_mean,
                            mag_stderr: s.mag_stderr,
                            qfi_mean: s.qfi_mean,
                            qfi_stderr: s.qfi_stderr,
                            status: "ok".into(),
                        });
                    }
                }
                Err(msg) => rows.push(SweepRow {
                    value: point.value,
                    period: 0,
                    time: f64::NAN,
                    mag_mean: f64::NAN,
                    mag_stderr: f64::NAN,
                    qfi_mean: f64::NAN,
                    qfi_stderr: f64::NAN,
                    status: msg.clone(),
                }),
            }
        }
        rows
    }

    /// Axis value maximizing the mean QFI at `period`, among successful
    /// points. Ties resolve to the smaller value.
    pub fn argmax_qfi(&self, period: usize) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for point in &self.points {
            if let Ok(stats) = &point.outcome {
                let f = stats.periods.get(period)?.qfi_mean;
                if best.is_none_or(|(_, bf)| f > bf) {
                    best = Some((point.value, f));
                }
            }
        }
        best.map(|(v, _)| v)
    }
}

/// Runs one ensemble per axis value. Per-point failures are recorded in
/// the table rather than aborting the sweep.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepTable> {
    spec.validate()?;
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    let mut points = Vec::with_capacity(values.len());
    for value in values {
        let outcome = spec
            .axis
            .apply(&spec.params, &spec.drive, value)
            .and_then(|(params, cfg)| run_ensemble(&params, &cfg, workers));
        if let Err(e) = &outcome {
            log::warn!("sweep point {}={value} failed: {e}", spec.axis);
        }
        points.push(SweepPoint {
            value,
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }
    Ok(SweepTable {
        axis: spec.axis,
        record_times: spec.recorded_periods(),
        points,
    })
}

/// Response of the mean QFI to the AC frequency at each recorded time.
pub fn frequency_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepTable> {
    if spec.axis != SweepAxis::OmegaAc {
        return Err(Error::Config(format!(
            "frequency sweep needs axis omega_ac, got {}",
            spec.axis
        )));
    }
    run_sweep(spec, workers)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    /// Natural-log intercept: `ln F ≈ exponent · ln t + intercept`.
    pub intercept: f64,
    pub window: (usize, usize),
    /// RMS of the log-log residuals.
    pub residual: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Least-squares slope of `ln F` against `ln t` over the inclusive index
/// window `[lo, hi]`, where index `p` is the stroboscopic period.
pub fn fit_growth_exponent(times: &[f64], qfi: &[f64], window: (usize, usize)) -> Result<FitResult> {
    let (lo, hi) = window;
    if times.len() != qfi.len() {
        return Err(Error::FitDomain(format!(
            "{} times but {} QFI values",
            times.len(),
            qfi.len()
        )));
    }
    if lo >= hi || hi >= qfi.len() {
        return Err(Error::FitDomain(format!(
            "window [{lo}, {hi}] does not fit {} points with at least two samples",
            qfi.len()
        )));
    }
    for p in lo..=hi {
        if !(qfi[p] > 0.0 && times[p] > 0.0) {
            return Err(Error::FitDomain(format!(
                "nonpositive value at period {p} (t = {}, F = {})",
                times[p], qfi[p]
            )));
        }
    }
    let x: Vec<f64> = times[lo..=hi].iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = qfi[lo..=hi].iter().map(|f| f.ln()).collect();
    let (exponent, intercept, residual) = least_squares(&x, &y);
    Ok(FitResult {
        exponent,
        intercept,
        window,
        residual,
    })
}

/// `(−1)^p m(p)`
pub fn staggered(magnetization: &[f64]) -> Vec<f64> {
    magnetization
        .iter()
        .enumerate()
        .map(|(p, &m)| if p % 2 == 0 { m } else { -m })
        .collect()
}

/// First period at which the staggered magnetization drops below `eps`,
/// or `None` within the available horizon.
pub fn thermalization_time(staggered: &[f64], eps: f64) -> Result<Option<usize>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("threshold {eps} is outside (0, 1)")));
    }
    Ok(staggered.iter().position(|&m| m < eps))
}

/// Local log-log slope over `[p, p + SLOPE_WINDOW]` for each start `p ≥ 1`.
/// Entry `i` belongs to start period `i + 1`.
pub fn local_slopes(times: &[f64], qfi: &[f64]) -> Vec<f64> {
    if qfi.len() <= SLOPE_WINDOW + 1 {
        return Vec::new();
    }
    (1..qfi.len() - SLOPE_WINDOW)
        .map(|p| {
            let range = p..=p + SLOPE_WINDOW;
            let x: Vec<f64> = times[range.clone()].iter().map(|t| t.ln()).collect();
            let y: Vec<f64> = qfi[range].iter().map(|f| f.max(f64::MIN_POSITIVE).ln()).collect();
            least_squares(&x, &y).0
        })
        .collect()
}

/// Onset of the final settled stretch of quadratic growth.
///
/// The rolling slope must lie within `2 ± 0.15` from the returned period
/// to the end of the series for at least [`MIN_SETTLED_RUN`] window
/// starts, and must have been outside the band just before it.
pub fn crossover_time_ac(times: &[f64], qfi: &[f64], h_ac: f64) -> Result<usize> {
    if !(h_ac.is_finite() && h_ac > 0.0) {
        return Err(Error::Config(format!("crossover detection needs h_ac > 0, got {h_ac}")));
    }
    if times.len() != qfi.len() {
        return Err(Error::FitDomain(format!(
            "{} times but {} QFI values",
            times.len(),
            qfi.len()
        )));
    }
    let slopes = local_slopes(times, qfi);
    let in_band = |s: f64| (s - TARGET_SLOPE).abs() <= SLOPE_BAND;
    let run = slopes.iter().rev().take_while(|&&s| in_band(s)).count();
    if run < MIN_SETTLED_RUN {
        return Err(Error::NoCrossover(format!(
            "local slope is not settled in {TARGET_SLOPE}±{SLOPE_BAND} at the end of {} periods",
            qfi.len().saturating_sub(1)
        )));
    }
    if run == slopes.len() {
        return Err(Error::NoCrossover(
            "local slope is within the band over the whole series".into(),
        ));
    }
    Ok(slopes.len() - run + 1)
}
