//! Quantum Fisher information of the AC amplitude.
//!
//! Three independent evaluators that must agree with one another:
//!
//! * [`qfi_from_pair`]: from the co-evolved state and derivative state,
//!   `F = 4(⟨∂ψ|∂ψ⟩ − |⟨ψ|∂ψ⟩|²)`.
//! * [`qfi_fidelity_fd`]: from the overlap of two trajectories at `h ± δ`.
//! * [`build_generator_oracle`] + [`qfi_generator`]: `F = 4 var_ψ0(G)` with
//!   the Hermitian generator `G(t) = Σ_k w_k W_k† S^z W_k` built from dense
//!   matrix exponentials, where `W_k` is the evolution up to the middle of
//!   substep `k`.
//!
//! plus the closed form [`qfi_analytic_ideal`] for the perfect-flip,
//! transverse-field-free limit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{run_states, DriveConfig};
use crate::hilbert::{
    build_static_hamiltonian, magnetization_z, pauli_string_matrix, total_spin_matrix,
    DisorderRealization, Pauli, StateVector,
};

/// Negative values down to this are roundoff and are reported as zero.
pub const QFI_CLAMP: f64 = 1e-9;

/// Default half-width of the central difference in [`qfi_fidelity_fd`].
pub const DEFAULT_FD_DELTA: f64 = 1e-5;

/// Largest chain for the dense generator oracle.
pub const ORACLE_MAX_SPINS: usize = 6;

fn clamp(f: f64) -> f64 {
    if (-QFI_CLAMP..0.0).contains(&f) {
        0.0
    } else {
        f
    }
}

/// `4(⟨∂ψ|∂ψ⟩ − |⟨ψ|∂ψ⟩|²)` for normalized `psi`.
pub fn qfi_from_pair(psi: &StateVector, dpsi: &StateVector) -> f64 {
    let dd = dpsi.norm_sqr();
    let pd = psi.inner(dpsi).norm_sqr();
    clamp(4.0 * (dd - pd))
}

/// `1 − |⟨a|b⟩|` for unit vectors, evaluated as half the squared distance
/// after aligning the global phase so small values keep full precision.
fn infidelity(a: &StateVector, b: &StateVector) -> f64 {
    let a = a.normalized();
    let b = b.normalized();
    let ov = a.inner(&b);
    let align = if ov.norm() > 0.0 {
        ov.conj() / ov.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    0.5 * a
        .amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y * align).norm_sqr())
        .sum::<f64>()
}

/// Fidelity-susceptibility estimate `8(1 − |⟨ψ(h−δ)|ψ(h+δ)⟩|)/(2δ)²` at
/// every recorded period `p = 0..=n_periods`.
pub fn qfi_fidelity_fd(
    cfg: &DriveConfig,
    realization: &DisorderRealization,
    initial: &StateVector,
    delta: f64,
) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("finite-difference delta must be > 0, got {delta}")));
    }
    let h = build_static_hamiltonian(realization, initial.n_spins())?;
    let at = |hval: f64| {
        let c = DriveConfig {
            h_ac: hval,
            ..cfg.clone()
        };
        run_states(&c, &h, initial)
    };
    let minus = at(cfg.h_ac - delta)?;
    let plus = at(cfg.h_ac + delta)?;
    Ok(minus
        .iter()
        .zip(&plus)
        .enumerate()
        .map(|(p, (m, q))| {
            let f = 8.0 * infidelity(m, q) / (4.0 * delta * delta);
            if f > 0.0 && f * delta * delta < 1e-12 {
                log::warn!(
                    "fidelity estimate at period {p} is roundoff dominated (F δ² = {:.1e})",
                    f * delta * delta
                );
            }
            f
        })
        .collect())
}

/// Hermitian generator `G(t)` with `∂_h U(t) = −i U(t) G(t)`, built from
/// dense operators on the same substep grid as the engine. `t` must lie on
/// that grid.
pub fn build_generator_oracle(
    cfg: &DriveConfig,
    realization: &DisorderRealization,
    t: f64,
) -> Result<DMatrix<C64>> {
    cfg.validate()?;
    let dt = cfg.dt();
    let n_sub = (t / dt).round();
    if t < 0.0 || (n_sub * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::Config(format!("t = {t} is not on the substep grid (dt = {dt})")));
    }
    let mut last = None;
    generator_walk(cfg, realization, n_sub as usize, |s, g| {
        if s == n_sub as usize {
            last = Some(g.clone());
        }
    })?;
    Ok(last.expect("walk visits its final step"))
}

/// `G(pT)` for `p = 0..=n_periods` from a single pass.
pub fn generator_oracle_by_period(
    cfg: &DriveConfig,
    realization: &DisorderRealization,
) -> Result<Vec<DMatrix<C64>>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_periods + 1);
    generator_walk(cfg, realization, cfg.n_periods * cfg.substeps, |s, g| {
        if s % cfg.substeps == 0 {
            out.push(g.clone());
        }
    })?;
    Ok(out)
}

/// Accumulates `G` over `n_sub` substeps, reporting it after `s = 0..=n_sub`
/// completed substeps (after the kick when `s` closes a period).
fn generator_walk(
    cfg: &DriveConfig,
    realization: &DisorderRealization,
    n_sub: usize,
    mut visit: impl FnMut(usize, &DMatrix<C64>),
) -> Result<()> {
    let n = realization.n_spins();
    if n > ORACLE_MAX_SPINS {
        return Err(Error::Capacity {
            n_spins: n,
            limit: ORACLE_MAX_SPINS,
        });
    }
    let dt = cfg.dt();
    let dim = 1usize << n;
    let c = |x: f64| C64::new(x, 0.0);
    let minus_i = C64::new(0.0, -1.0);

    // H from Pauli strings, independent of the sparse construction
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    let site = |i: usize, op: Pauli| {
        let mut ops = vec![Pauli::I; n];
        ops[i] = op;
        ops
    };
    for (&(i, j), &coupling) in realization.boundary.bonds(n).iter().zip(&realization.j) {
        let mut ops = site(i, Pauli::Z);
        ops[j] = Pauli::Z;
        h += pauli_string_matrix(&ops) * c(coupling);
    }
    for i in 0..n {
        h += pauli_string_matrix(&site(i, Pauli::Z)) * c(realization.h_z[i]);
        h += pauli_string_matrix(&site(i, Pauli::X)) * c(realization.h_x[i]);
    }
    let half_step = (h * (minus_i * 0.5 * dt)).exp();
    let kick = (total_spin_matrix(n, Pauli::X) * (minus_i * cfg.phi_kick)).exp();
    let sz: Vec<f64> = (0..dim).map(|b| magnetization_z(n, b)).collect();

    let mut w_op = DMatrix::<C64>::identity(dim, dim);
    let mut g = DMatrix::<C64>::zeros(dim, dim);
    visit(0, &g);
    for s in 0..n_sub {
        let k = s % cfg.substeps;
        let p = s / cfg.substeps;
        let weight = cfg.ac_weight(p as f64 * cfg.period + k as f64 * dt, dt);
        w_op = &half_step * &w_op;
        let mut sz_w = w_op.clone();
        for (b, mut row) in sz_w.row_iter_mut().enumerate() {
            row *= c(sz[b]);
        }
        g += w_op.adjoint() * sz_w * c(weight);
        for (b, mut row) in w_op.row_iter_mut().enumerate() {
            row *= C64::from_polar(1.0, -cfg.h_ac * weight * sz[b]);
        }
        w_op = &half_step * &w_op;
        if k + 1 == cfg.substeps {
            w_op = &kick * &w_op;
        }
        visit(s + 1, &g);
    }
    Ok(())
}

/// The three QFI evaluations at one stroboscopic time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRow {
    pub period: usize,
    pub pair: f64,
    pub fidelity: f64,
    pub generator: f64,
}

impl OracleRow {
    fn pairs(&self) -> [(f64, f64); 3] {
        [
            (self.pair, self.fidelity),
            (self.pair, self.generator),
            (self.fidelity, self.generator),
        ]
    }

    /// Largest `|a − b| / max(|a|, |b|)` over the three pairs; zero when
    /// both values vanish.
    pub fn max_relative_deviation(&self) -> f64 {
        self.pairs()
            .iter()
            .map(|&(a, b)| {
                let scale = a.abs().max(b.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    /// Every pair within `rel` relative or `abs` absolute deviation.
    pub fn agrees(&self, rel: f64, abs: f64) -> bool {
        self.pairs()
            .iter()
            .all(|&(a, b)| (a - b).abs() <= abs.max(rel * a.abs().max(b.abs())))
    }
}

/// Pair-state, fidelity and generator QFI at `p = 0..=n_periods`.
pub fn three_way_qfi(
    cfg: &DriveConfig,
    realization: &DisorderRealization,
    initial: &StateVector,
    delta: f64,
) -> Result<Vec<OracleRow>> {
    let pair = crate::floquet::run_trajectory(cfg, realization, initial)?;
    let fidelity = qfi_fidelity_fd(cfg, realization, initial, delta)?;
    let generators = generator_oracle_by_period(cfg, realization)?;
    Ok(pair
        .iter()
        .zip(&fidelity)
        .zip(&generators)
        .map(|((r, &f), g)| OracleRow {
            period: r.period,
            pair: r.qfi,
            fidelity: f,
            generator: qfi_generator(g, initial),
        })
        .collect())
}

/// `4(⟨ψ0|G²|ψ0⟩ − ⟨ψ0|G|ψ0⟩²)` for Hermitian `G`.
pub fn qfi_generator(g: &DMatrix<C64>, initial: &StateVector) -> f64 {
    let v = DVector::from_column_slice(initial.amplitudes());
    let gv = g * &v;
    let mean = v.dotc(&gv).re;
    clamp(4.0 * (gv.norm_squared() - mean * mean))
}

/// Variance of `S^z` in `state`.
pub fn sz_variance(state: &StateVector) -> f64 {
    let n = state.n_spins();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (b, a) in state.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        let mz = magnetization_z(n, b);
        m1 += p * mz;
        m2 += p * mz * mz;
    }
    m2 - m1 * m1
}

/// `Φ(t) = ∫₀ᵗ α(t′) (−1)^⌊t′/T_S⌋ dt′`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccumulatedPhase {
    pub value: f64,
    pub t: f64,
    pub omega_ac: f64,
    pub theta_ac: f64,
    pub period: f64,
}

/// Exact piecewise integral of the AC modulation against the period-wise
/// sign.
pub fn accumulated_phase(t: f64, cfg: &DriveConfig) -> AccumulatedPhase {
    assert!(t >= 0.0, "accumulated phase needs t >= 0");
    let (w, th, big_t) = (cfg.omega_ac, cfg.theta_ac, cfg.period);
    let segment = |a: f64, b: f64| {
        if w == 0.0 {
            th.sin() * (b - a)
        } else {
            // cos x − cos y = 2 sin((x+y)/2) sin((y−x)/2)
            let mid = 0.5 * (a + b);
            2.0 * (w * mid + th).sin() * (0.5 * w * (b - a)).sin() / w
        }
    };
    let full = (t / big_t).floor() as usize;
    let mut value = 0.0;
    for n in 0..full {
        let s = segment(n as f64 * big_t, (n + 1) as f64 * big_t);
        value += if n % 2 == 0 { s } else { -s };
    }
    let start = full as f64 * big_t;
    if t > start {
        let s = segment(start, t);
        value += if full.is_multiple_of(2) { s } else { -s };
    }
    AccumulatedPhase {
        value,
        t,
        omega_ac: w,
        theta_ac: th,
        period: big_t,
    }
}

/// `4 Φ(pT)² var_ψ0(S^z)`.
pub fn qfi_analytic_ideal(p: usize, cfg: &DriveConfig, initial: &StateVector) -> f64 {
    let phi = accumulated_phase(p as f64 * cfg.period, cfg).value;
    4.0 * phi * phi * sz_variance(initial)
}
