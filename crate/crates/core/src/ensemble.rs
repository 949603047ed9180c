//! Disorder and initial-state sampling, parallel execution over
//! realizations, and statistics per stroboscopic time.
//!
//! Each realization draws from its own ChaCha substream keyed by
//! `(master_seed, index)`, and the reduction walks realizations in index
//! order, so results do not depend on the worker count.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{run_magnetization, run_trajectory_with, DriveConfig, StroboscopicRecord};
use crate::hilbert::{
    build_static_hamiltonian_with_limit, Boundary, DisorderRealization, StateVector,
    DEFAULT_MAX_SPINS,
};

pub const DEFAULT_N_DIS: usize = 200;

/// Largest failed fraction an ensemble tolerates.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub n_spins: usize,
    pub n_dis: usize,
    /// Coupling amplitude: `J_i ~ U[−j_amp, j_amp]`.
    pub j_amp: f64,
    pub w_z: f64,
    pub w_x: f64,
    pub master_seed: u64,
    /// Cap on the initial polar angle.
    pub theta_max: f64,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default = "default_max_spins")]
    pub max_spins: usize,
}

fn default_max_spins() -> usize {
    DEFAULT_MAX_SPINS
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            n_spins: 4,
            n_dis: DEFAULT_N_DIS,
            j_amp: 1.0,
            w_z: 1.0,
            w_x: 0.1,
            master_seed: 0,
            theta_max: FRAC_PI_4,
            boundary: Boundary::Open,
            max_spins: DEFAULT_MAX_SPINS,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_spins == 0 {
            return Err(Error::Config("ensemble.n_spins must be >= 1".into()));
        }
        if self.n_spins > self.max_spins {
            return Err(Error::Capacity {
                n_spins: self.n_spins,
                limit: self.max_spins,
            });
        }
        if self.n_dis == 0 {
            return Err(Error::Config("ensemble.n_dis must be >= 1".into()));
        }
        for (name, v) in [
            ("j_amp", self.j_amp),
            ("w_z", self.w_z),
            ("w_x", self.w_x),
            ("theta_max", self.theta_max),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("ensemble.{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

const DISORDER_STREAM: u64 = 0;
const INITIAL_STATE_STREAM: u64 = 1;

fn substream(params: &EnsembleParams, index: u64, purpose: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(params.master_seed);
    rng.set_stream(index << 1 | purpose);
    rng
}

fn symmetric(rng: &mut impl Rng, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        0.0
    } else {
        amplitude * (2.0 * rng.random::<f64>() - 1.0)
    }
}

/// Couplings and fields of realization `index`, uniform in their symmetric
/// intervals.
pub fn sample_realization(params: &EnsembleParams, index: u64) -> DisorderRealization {
    let mut rng = substream(params, index, DISORDER_STREAM);
    let n = params.n_spins;
    let j = (0..params.boundary.n_bonds(n))
        .map(|_| symmetric(&mut rng, params.j_amp))
        .collect();
    let h_z = (0..n).map(|_| symmetric(&mut rng, params.w_z)).collect();
    let h_x = (0..n).map(|_| symmetric(&mut rng, params.w_x)).collect();
    DisorderRealization {
        j,
        h_z,
        h_x,
        boundary: params.boundary,
        seed: params.master_seed,
        index,
    }
}

/// Polar and azimuthal angle of realization `index`:
/// `ϑ ~ U[0, theta_max]`, `φ₀ ~ U[0, 2π)`.
pub fn sample_initial_angles(params: &EnsembleParams, index: u64) -> (f64, f64) {
    let mut rng = substream(params, index, INITIAL_STATE_STREAM);
    let theta = params.theta_max * rng.random::<f64>();
    let phi = 2.0 * PI * rng.random::<f64>();
    (theta, phi)
}

/// `[cos(ϑ/2)|↑⟩ + e^{iφ₀} sin(ϑ/2)|↓⟩]^{⊗N}` with one angle pair shared by
/// all sites.
pub fn separable_state(n_spins: usize, theta: f64, phi: f64) -> StateVector {
    StateVector::product(
        n_spins,
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    )
}

pub fn sample_initial_state(params: &EnsembleParams, index: u64) -> StateVector {
    let (theta, phi) = sample_initial_angles(params, index);
    separable_state(params.n_spins, theta, phi)
}

/// Sample mean and `stddev/√n` (zero for a single sample).
fn mean_stderr(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Ensemble statistics at one stroboscopic time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodStats {
    pub period: usize,
    pub time: f64,
    pub mag_mean: f64,
    pub mag_stderr: f64,
    pub qfi_mean: f64,
    pub qfi_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub periods: Vec<PeriodStats>,
    pub n_effective: usize,
    pub n_failed: usize,
    pub failures: Vec<String>,
}

impl EnsembleStats {
    pub fn times(&self) -> Vec<f64> {
        self.periods.iter().map(|p| p.time).collect()
    }

    pub fn qfi_means(&self) -> Vec<f64> {
        self.periods.iter().map(|p| p.qfi_mean).collect()
    }

    pub fn mag_means(&self) -> Vec<f64> {
        self.periods.iter().map(|p| p.mag_mean).collect()
    }

    /// `(−1)^p m(p)`
    pub fn staggered_magnetization(&self) -> Vec<f64> {
        self.periods
            .iter()
            .map(|p| if p.period % 2 == 0 { p.mag_mean } else { -p.mag_mean })
            .collect()
    }

    /// Reduces per-realization trajectories, in the order given.
    pub fn from_trajectories(trajectories: &[Vec<StroboscopicRecord>]) -> Self {
        let n = trajectories.len();
        let len = trajectories.iter().map(Vec::len).min().unwrap_or(0);
        let periods = (0..len)
            .map(|p| {
                let first = &trajectories[0][p];
                let (mag_mean, mag_stderr) =
                    mean_stderr(trajectories.iter().map(|t| t[p].magnetization), n);
                let (qfi_mean, qfi_stderr) = mean_stderr(trajectories.iter().map(|t| t[p].qfi), n);
                PeriodStats {
                    period: first.period,
                    time: first.time,
                    mag_mean,
                    mag_stderr,
                    qfi_mean,
                    qfi_stderr,
                }
            })
            .collect();
        Self {
            periods,
            n_effective: n,
            n_failed: 0,
            failures: Vec::new(),
        }
    }
}

/// One trajectory of realization `index`.
pub fn run_realization(
    params: &EnsembleParams,
    cfg: &DriveConfig,
    index: u64,
) -> Result<Vec<StroboscopicRecord>> {
    let realization = sample_realization(params, index);
    let h = build_static_hamiltonian_with_limit(&realization, params.n_spins, params.max_spins)?;
    let initial = sample_initial_state(params, index);
    run_trajectory_with(cfg, &h, &initial)
}

/// Per-realization results in index order, with the messages of
/// realizations that hit a numerical failure.
struct Mapped<T> {
    ok: Vec<T>,
    failures: Vec<String>,
}

fn map_realizations<T, F>(params: &EnsembleParams, workers: usize, f: F) -> Result<Mapped<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    params.validate()?;
    if workers == 0 {
        return Err(Error::Config("worker count must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<Result<T>> =
        pool.install(|| (0..params.n_dis as u64).into_par_iter().map(&f).collect());

    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => ok.push(t),
            Err(e @ Error::NumericalFailure { .. }) => failures.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * params.n_dis as f64 || ok.is_empty() {
        return Err(Error::Ensemble {
            failed: failures.len(),
            total: params.n_dis,
            first: failures.first().cloned().unwrap_or_default(),
        });
    }
    for msg in &failures {
        log::warn!("excluded realization: {msg}");
    }
    Ok(Mapped { ok, failures })
}

/// Runs all `n_dis` realizations on `workers` threads and aggregates them.
///
/// Realizations that hit a numerical failure are excluded and counted; more
/// than 1% failures is an error.
pub fn run_ensemble(
    params: &EnsembleParams,
    cfg: &DriveConfig,
    workers: usize,
) -> Result<EnsembleStats> {
    cfg.validate()?;
    let mapped = map_realizations(params, workers, |i| run_realization(params, cfg, i))?;
    let mut stats = EnsembleStats::from_trajectories(&mapped.ok);
    stats.n_failed = mapped.failures.len();
    stats.failures = mapped.failures;
    Ok(stats)
}

/// Mean magnetization and its standard error per period, without the QFI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationStats {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_effective: usize,
    pub n_failed: usize,
}

impl MagnetizationStats {
    pub fn staggered(&self) -> Vec<f64> {
        self.mean
            .iter()
            .enumerate()
            .map(|(p, &m)| if p % 2 == 0 { m } else { -m })
            .collect()
    }
}

/// Ensemble magnetization only. Much cheaper than [`run_ensemble`] for long
/// horizons at `h_ac = 0`, where each period is one dense matrix–vector
/// product.
pub fn run_magnetization_ensemble(
    params: &EnsembleParams,
    cfg: &DriveConfig,
    workers: usize,
) -> Result<MagnetizationStats> {
    cfg.validate()?;
    let mapped = map_realizations(params, workers, |i| {
        let realization = sample_realization(params, i);
        let h =
            build_static_hamiltonian_with_limit(&realization, params.n_spins, params.max_spins)?;
        run_magnetization(cfg, &h, &sample_initial_state(params, i))
    })?;
    let n = mapped.ok.len();
    let (mean, stderr) = (0..=cfg.n_periods)
        .map(|p| mean_stderr(mapped.ok.iter().map(|m| m[p]), n))
        .unzip();
    Ok(MagnetizationStats {
        mean,
        stderr,
        n_effective: n,
        n_failed: mapped.failures.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::run_trajectory;
    use crate::hilbert::measure_site_z;

    fn params(n: usize, n_dis: usize) -> EnsembleParams {
        EnsembleParams {
            n_spins: n,
            n_dis,
            master_seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn zero_transverse_amplitude_gives_exact_zeros() {
        let p = EnsembleParams {
            w_x: 0.0,
            ..params(5, 10)
        };
        for i in 0..10 {
            assert!(sample_realization(&p, i).h_x.iter().all(|&h| h == 0.0));
        }
    }

    #[test]
    fn draws_are_deterministic_and_bounded() {
        let p = params(6, 10);
        assert_eq!(sample_realization(&p, 3), sample_realization(&p, 3));
        assert_ne!(sample_realization(&p, 3), sample_realization(&p, 4));
        assert_eq!(sample_initial_state(&p, 7), sample_initial_state(&p, 7));
        for i in 0..50 {
            let r = sample_realization(&p, i);
            assert_eq!(r.j.len(), 5);
            assert!(r.j.iter().all(|v| v.abs() <= p.j_amp));
            assert!(r.h_z.iter().all(|v| v.abs() <= p.w_z));
            assert!(r.h_x.iter().all(|v| v.abs() <= p.w_x));
        }
        let periodic = EnsembleParams {
            boundary: Boundary::Periodic,
            ..p
        };
        assert_eq!(sample_realization(&periodic, 0).j.len(), 6);
    }

    #[test]
    fn coupling_moments() {
        // U[−1, 1]: mean 0, variance 1/3
        let p = params(2, 1);
        let draws: Vec<f64> = (0..10_000).map(|i| sample_realization(&p, i).j[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 3.0 * (1.0 / 3f64.sqrt()) / 100.0, "mean {mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.05 / 3.0, "var {var}");
    }

    #[test]
    fn initial_state_geometry() {
        let up = separable_state(3, 0.0, 1.234);
        assert_eq!(up, StateVector::all_up(3));
        let p = params(4, 1);
        for i in 0..40 {
            let (theta, phi) = sample_initial_angles(&p, i);
            assert!((0.0..=FRAC_PI_4).contains(&theta) && (0.0..2.0 * PI).contains(&phi));
            let s = sample_initial_state(&p, i);
            assert!((s.norm_sqr() - 1.0).abs() < 1e-14);
            for m in measure_site_z(&s) {
                assert!((m - theta.cos()).abs() < 1e-13);
                assert!(m >= FRAC_PI_4.cos() - 1e-15);
            }
        }
    }

    #[test]
    fn two_spin_state_matches_kronecker_product() {
        let (theta, phi) = (FRAC_PI_4, PI / 3.0);
        let a = C64::new((theta / 2.0).cos(), 0.0);
        let b = C64::from_polar((theta / 2.0).sin(), phi);
        // index = bit0 (spin 0) + 2·bit1 (spin 1): |↑↑⟩, |↓↑⟩, |↑↓⟩, |↓↓⟩
        let expect = [a * a, b * a, a * b, b * b];
        let s = separable_state(2, theta, phi);
        for (x, y) in s.amplitudes().iter().zip(&expect) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn single_realization_ensemble_equals_trajectory() {
        let p = params(3, 1);
        let cfg = DriveConfig {
            phi_kick: 3.08,
            n_periods: 15,
            ..Default::default()
        };
        let stats = run_ensemble(&p, &cfg, 1).unwrap();
        let traj = run_trajectory(&cfg, &sample_realization(&p, 0), &sample_initial_state(&p, 0))
            .unwrap();
        assert_eq!(stats.n_effective, 1);
        for (s, r) in stats.periods.iter().zip(&traj) {
            assert_eq!(s.mag_mean, r.magnetization);
            assert_eq!(s.qfi_mean, r.qfi);
            assert_eq!(s.mag_stderr, 0.0);
            assert_eq!(s.qfi_stderr, 0.0);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = params(4, 12);
        let cfg = DriveConfig {
            phi_kick: 3.08,
            n_periods: 20,
            ..Default::default()
        };
        let a = run_ensemble(&p, &cfg, 1).unwrap();
        let b = run_ensemble(&p, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.periods.iter().all(|s| s.qfi_mean >= 0.0));
    }

    #[test]
    fn magnetization_ensemble_matches_full_ensemble() {
        let p = params(4, 8);
        for h_ac in [0.0, 0.1] {
            let cfg = DriveConfig {
                phi_kick: 3.08,
                h_ac,
                n_periods: 30,
                ..Default::default()
            };
            let full = run_ensemble(&p, &cfg, 2).unwrap();
            let mag = run_magnetization_ensemble(&p, &cfg, 2).unwrap();
            assert_eq!(mag.n_effective, 8);
            for (s, (m, e)) in full.periods.iter().zip(mag.mean.iter().zip(&mag.stderr)) {
                assert!((s.mag_mean - m).abs() < 1e-11);
                assert!((s.mag_stderr - e).abs() < 1e-11);
            }
            let st = mag.staggered();
            for (a, b) in st.iter().zip(full.staggered_magnetization()) {
                assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn zero_field_magnetization_ignores_ac_frequency() {
        let p = params(3, 6);
        let cfg = DriveConfig {
            phi_kick: 3.08,
            n_periods: 10,
            ..Default::default()
        };
        let a = run_ensemble(&p, &cfg, 1).unwrap();
        let b = run_ensemble(
            &p,
            &DriveConfig {
                omega_ac: 2.0,
                ..cfg
            },
            1,
        )
        .unwrap();
        assert_eq!(a.mag_means(), b.mag_means());
    }

    #[test]
    fn standard_error_definition() {
        let rec = |m: f64, f: f64| StroboscopicRecord {
            period: 0,
            time: 0.0,
            magnetization: m,
            qfi: f,
            delta_h_bound: 0.0,
            site_z: None,
        };
        let trajs = vec![vec![rec(1.0, 2.0)], vec![rec(0.0, 4.0)], vec![rec(0.5, 9.0)]];
        let s = EnsembleStats::from_trajectories(&trajs);
        let st = &s.periods[0];
        assert!((st.mag_mean - 0.5).abs() < 1e-15);
        // sample stddev 0.5, over √3
        assert!((st.mag_stderr - 0.5 / 3f64.sqrt()).abs() < 1e-15);
        assert!((st.qfi_mean - 5.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        let cfg = DriveConfig::default();
        assert!(matches!(
            run_ensemble(&EnsembleParams { n_dis: 0, ..params(2, 1) }, &cfg, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run_ensemble(&EnsembleParams { j_amp: -1.0, ..params(2, 1) }, &cfg, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run_ensemble(&params(15, 1), &cfg, 1),
            Err(Error::Capacity { .. })
        ));
        assert!(matches!(run_ensemble(&params(2, 1), &cfg, 0), Err(Error::Config(_))));
    }
}
