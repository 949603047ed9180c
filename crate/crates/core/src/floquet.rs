//! Stroboscopic evolution of the sensor state and its derivative with
//! respect to the AC amplitude.
//!
//! One drive period is split into `K` substeps. Each substep applies the
//! symmetric splitting
//!
//!   u_k = A · D_k(h) · A,   A = exp(−i H dt/2),   D_k(h) = exp(−i h w_k S^z),
//!
//! where `w_k` is the AC weight of the substep (see [`AcQuadrature`]). The
//! derivative state is the exact `∂/∂h` of the product of these discrete
//! factors, so it carries no error beyond the shared splitting error. The
//! kick `exp(−i φ S^x)` closes every period and does not depend on `h`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    apply_diagonal_z_propagator, apply_global_kick, apply_static_propagator,
    build_static_hamiltonian, kick_amplitudes, magnetization_z, measure_site_z, sz_phases,
    DisorderRealization, StateVector, StaticHamiltonian, NORM_TOLERANCE,
};
use crate::qfi::qfi_from_pair;

pub const DEFAULT_SUBSTEPS: usize = 64;

/// How the AC modulation is integrated over one substep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcQuadrature {
    /// Exact integral of `α(t)` over the substep.
    #[default]
    CellAverage,
    /// `α(t_mid) · dt`.
    Midpoint,
}

/// Sensor drive and AC signal parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Kick period `T_S`.
    pub period: f64,
    pub phi_kick: f64,
    pub h_ac: f64,
    pub omega_ac: f64,
    pub theta_ac: f64,
    pub n_periods: usize,
    pub substeps: usize,
    #[serde(default)]
    pub quadrature: AcQuadrature,
    /// Keep per-site `⟨σ^z_i⟩` in every record.
    #[serde(default)]
    pub record_site_z: bool,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            period: 1.0,
            phi_kick: PI,
            h_ac: 0.0,
            omega_ac: PI,
            theta_ac: 0.0,
            n_periods: 100,
            substeps: DEFAULT_SUBSTEPS,
            quadrature: AcQuadrature::default(),
            record_site_z: false,
        }
    }
}

impl DriveConfig {
    /// Drive angular frequency `ω_S = 2π / T_S`.
    pub fn omega_s(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn dt(&self) -> f64 {
        self.period / self.substeps as f64
    }

    /// `α(t) = sin(ω_AC t + θ_AC)`
    pub fn alpha(&self, t: f64) -> f64 {
        (self.omega_ac * t + self.theta_ac).sin()
    }

    /// Weight `w` of the AC term over `[t_start, t_start + dt]`, so that the
    /// substep applies `exp(−i h w S^z)`.
    pub fn ac_weight(&self, t_start: f64, dt: f64) -> f64 {
        let mid = self.alpha(t_start + 0.5 * dt) * dt;
        match self.quadrature {
            AcQuadrature::Midpoint => mid,
            AcQuadrature::CellAverage => {
                // ∫ sin(ωt+θ) = 2 sin(ω t_mid + θ) sin(ω dt/2) / ω
                let x = 0.5 * self.omega_ac * dt;
                if x.abs() < 1e-8 {
                    mid * (1.0 - x * x / 6.0)
                } else {
                    mid * x.sin() / x
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("period", self.period),
            ("phi_kick", self.phi_kick),
            ("h_ac", self.h_ac),
            ("omega_ac", self.omega_ac),
            ("theta_ac", self.theta_ac),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("drive.{name} must be finite")));
        }
        if self.period <= 0.0 {
            return Err(Error::Config("drive.period must be > 0".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("drive.substeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// The state `|ψ⟩` and its derivative `|∂_h ψ⟩`, evolved together.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorPair {
    pub psi: StateVector,
    pub dpsi: StateVector,
}

impl SensorPair {
    pub fn new(initial: StateVector) -> Self {
        let dpsi = StateVector::zeros(initial.n_spins());
        Self { psi: initial, dpsi }
    }

    pub fn qfi(&self) -> f64 {
        qfi_from_pair(&self.psi, &self.dpsi)
    }
}

/// Observables at `t = p T_S`, taken right after the kick closing period `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StroboscopicRecord {
    pub period: usize,
    pub time: f64,
    /// Site average of `⟨σ^z_i⟩`.
    pub magnetization: f64,
    pub qfi: f64,
    /// Cramér–Rao bound `1/√F`; infinite while `F = 0`.
    pub delta_h_bound: f64,
    pub site_z: Option<Vec<f64>>,
}

impl StroboscopicRecord {
    fn capture(period: usize, cfg: &DriveConfig, pair: &SensorPair) -> Self {
        let site_z = measure_site_z(&pair.psi);
        let magnetization = site_z.iter().sum::<f64>() / site_z.len() as f64;
        let qfi = pair.qfi();
        Self {
            period,
            time: period as f64 * cfg.period,
            magnetization,
            qfi,
            delta_h_bound: delta_h_bound(qfi),
            site_z: cfg.record_site_z.then_some(site_z),
        }
    }
}

pub fn delta_h_bound(qfi: f64) -> f64 {
    if qfi > 0.0 {
        1.0 / qfi.sqrt()
    } else {
        f64::INFINITY
    }
}

fn non_finite(h: &StaticHamiltonian, period: usize, substep: usize) -> Error {
    let (seed, index) = h.realization_id();
    Error::NumericalFailure {
        seed,
        index,
        period,
        substep,
    }
}

/// One splitting substep on the pair, built from the generic kernel
/// operations. Failures are labelled with the period and substep that
/// contain `t_start`.
pub fn evolve_substep(
    pair: &mut SensorPair,
    h: &StaticHamiltonian,
    cfg: &DriveConfig,
    t_start: f64,
    dt: f64,
) -> Result<()> {
    let w = cfg.ac_weight(t_start, dt);
    apply_static_propagator(&mut pair.psi, h, 0.5 * dt);
    apply_static_propagator(&mut pair.dpsi, h, 0.5 * dt);
    apply_diagonal_z_propagator(&mut pair.psi, cfg.h_ac * w);
    apply_diagonal_z_propagator(&mut pair.dpsi, cfg.h_ac * w);
    let n = pair.psi.n_spins();
    for (b, (d, p)) in pair
        .dpsi
        .amplitudes_mut()
        .iter_mut()
        .zip(pair.psi.amplitudes())
        .enumerate()
    {
        *d += C64::new(0.0, -w * magnetization_z(n, b)) * p;
    }
    apply_static_propagator(&mut pair.psi, h, 0.5 * dt);
    apply_static_propagator(&mut pair.dpsi, h, 0.5 * dt);
    if !pair.psi.is_finite() || !pair.dpsi.is_finite() {
        let period = (t_start / cfg.period).floor() as usize + 1;
        let k = ((t_start - (period - 1) as f64 * cfg.period) / dt).round() as usize;
        return Err(non_finite(h, period, k));
    }
    Ok(())
}

/// Reusable buffers for the fused per-period kernel of one trajectory.
///
/// Within a period consecutive half steps merge into full steps, so each
/// substep costs one basis change into and one out of the eigenbasis. The
/// pair is packed as real columns `[Re ψ, Im ψ, Re ∂ψ, Im ∂ψ]` so both basis
/// changes are real matrix products.
pub struct PeriodPropagator<'a> {
    h: &'a StaticHamiltonian,
    cfg: &'a DriveConfig,
    with_derivative: bool,
    half: Vec<C64>,
    full: Vec<C64>,
    mz: Vec<f64>,
    n_down: Vec<usize>,
    z_basis: DMatrix<f64>,
    eigen_basis: DMatrix<f64>,
}

impl<'a> PeriodPropagator<'a> {
    pub fn new(h: &'a StaticHamiltonian, cfg: &'a DriveConfig, with_derivative: bool) -> Self {
        let dt = cfg.dt();
        let dim = h.dim();
        let n = h.n_spins();
        let phases = |tau: f64| -> Vec<C64> {
            h.eigenvalues()
                .iter()
                .map(|&l| C64::from_polar(1.0, -l * tau))
                .collect()
        };
        let cols = if with_derivative { 4 } else { 2 };
        Self {
            h,
            cfg,
            with_derivative,
            half: phases(0.5 * dt),
            full: phases(dt),
            mz: (0..dim).map(|b| magnetization_z(n, b)).collect(),
            n_down: (0..dim).map(|b| b.count_ones() as usize).collect(),
            z_basis: DMatrix::zeros(dim, cols),
            eigen_basis: DMatrix::zeros(dim, cols),
        }
    }

    fn apply_phases(&mut self, full: bool) {
        let phases = if full { &self.full } else { &self.half };
        let m = &mut self.eigen_basis;
        for c in (0..m.ncols()).step_by(2) {
            for (k, ph) in phases.iter().enumerate() {
                let v = C64::new(m[(k, c)], m[(k, c + 1)]) * ph;
                m[(k, c)] = v.re;
                m[(k, c + 1)] = v.im;
            }
        }
    }

    /// `D_k` on ψ and `D_k ∂ψ − i w S^z D_k ψ` on the derivative, in the
    /// z basis.
    fn apply_ac(&mut self, w: f64) -> bool {
        let phases = sz_phases(self.h.n_spins(), self.cfg.h_ac * w);
        let m = &mut self.z_basis;
        let mut finite = true;
        for b in 0..m.nrows() {
            let ph = phases[self.n_down[b]];
            let psi = C64::new(m[(b, 0)], m[(b, 1)]) * ph;
            m[(b, 0)] = psi.re;
            m[(b, 1)] = psi.im;
            finite &= psi.re.is_finite() && psi.im.is_finite();
            if self.with_derivative {
                let d = C64::new(m[(b, 2)], m[(b, 3)]) * ph
                    + C64::new(0.0, -w * self.mz[b]) * psi;
                m[(b, 2)] = d.re;
                m[(b, 3)] = d.im;
                finite &= d.re.is_finite() && d.im.is_finite();
            }
        }
        finite
    }

    fn rotate_to_eigen(&mut self) {
        self.eigen_basis
            .gemm(1.0, self.h.eigenvectors_t(), &self.z_basis, 0.0);
    }

    fn rotate_to_z(&mut self) {
        self.z_basis
            .gemm(1.0, self.h.eigenvectors(), &self.eigen_basis, 0.0);
    }

    fn pack(&mut self, states: &[&StateVector]) {
        for (s, state) in states.iter().enumerate() {
            for (b, a) in state.amplitudes().iter().enumerate() {
                self.z_basis[(b, 2 * s)] = a.re;
                self.z_basis[(b, 2 * s + 1)] = a.im;
            }
        }
    }

    fn unpack(&self, states: &mut [&mut StateVector]) {
        for (s, state) in states.iter_mut().enumerate() {
            for (b, a) in state.amplitudes_mut().iter_mut().enumerate() {
                *a = C64::new(self.z_basis[(b, 2 * s)], self.z_basis[(b, 2 * s + 1)]);
            }
        }
    }

    /// The K substeps of period `p` (covering `((p−1)T, pT]`), without the
    /// closing kick. The packed buffer holds the result in the z basis.
    fn substeps(&mut self, p: usize) -> Result<()> {
        let k_total = self.cfg.substeps;
        let dt = self.cfg.dt();
        let t0 = (p - 1) as f64 * self.cfg.period;
        self.rotate_to_eigen();
        self.apply_phases(false);
        for k in 0..k_total {
            self.rotate_to_z();
            let w = self.cfg.ac_weight(t0 + k as f64 * dt, dt);
            if !self.apply_ac(w) {
                return Err(non_finite(self.h, p, k));
            }
            self.rotate_to_eigen();
            self.apply_phases(k + 1 < k_total);
        }
        self.rotate_to_z();
        Ok(())
    }

    /// Advances the pair through period `p ≥ 1`, closing with the kick.
    pub fn evolve_period(&mut self, pair: &mut SensorPair, p: usize) -> Result<()> {
        assert!(self.with_derivative, "propagator was built without the derivative");
        assert!(p >= 1, "periods are numbered from 1");
        self.pack(&[&pair.psi, &pair.dpsi]);
        self.substeps(p)?;
        self.unpack(&mut [&mut pair.psi, &mut pair.dpsi]);
        let n = pair.psi.n_spins();
        kick_amplitudes(pair.psi.amplitudes_mut(), n, self.cfg.phi_kick);
        kick_amplitudes(pair.dpsi.amplitudes_mut(), n, self.cfg.phi_kick);
        self.check(pair, p)
    }

    /// Advances `ψ` alone through period `p`.
    pub fn evolve_state_period(&mut self, psi: &mut StateVector, p: usize) -> Result<()> {
        assert!(p >= 1, "periods are numbered from 1");
        self.pack(&[psi]);
        self.substeps(p)?;
        self.unpack(&mut [psi]);
        let n = psi.n_spins();
        kick_amplitudes(psi.amplitudes_mut(), n, self.cfg.phi_kick);
        if !psi.is_finite() {
            return Err(non_finite(self.h, p, self.cfg.substeps));
        }
        Ok(())
    }

    fn check(&self, pair: &SensorPair, p: usize) -> Result<()> {
        let drift = (pair.psi.norm_sqr().sqrt() - 1.0).abs();
        if !pair.psi.is_finite() || !pair.dpsi.is_finite() || drift > 1e3 * NORM_TOLERANCE {
            return Err(non_finite(self.h, p, self.cfg.substeps));
        }
        Ok(())
    }
}

/// Exact resummation of a period's K substeps at `h_ac = 0`.
///
/// With `D_k = 1` the state only picks up eigenphases between kicks, and the
/// derivative source of substep `k` is `−i w_k e^{−iH(T−τ_k)} S^z e^{−iHτ_k} ψ`
/// with `τ_k = (k + ½) dt`. Writing `w_k` through `e^{±i(ω t + θ)}` turns the
/// sum over `k` into two fixed matrices in the eigenbasis,
///
///   P_mn = Z_mn Σ_k e^{i(λ_m − λ_n + ω) τ_k},  Q_mn = Z_mn Σ_k e^{i(λ_m − λ_n − ω) τ_k},
///
/// with `Z = Vᵀ S^z V`, so each period costs two matrix–vector products plus
/// the basis changes around the kick. The result equals the substep kernel
/// up to roundoff.
pub struct LinearResponsePropagator<'a> {
    h: &'a StaticHamiltonian,
    cfg: &'a DriveConfig,
    p_plus: DMatrix<C64>,
    q_minus: DMatrix<C64>,
    period_phase: Vec<C64>,
    weight_scale: f64,
    z_basis: DMatrix<f64>,
    eigen_basis: DMatrix<f64>,
}

impl<'a> LinearResponsePropagator<'a> {
    pub fn new(h: &'a StaticHamiltonian, cfg: &'a DriveConfig) -> Self {
        let dim = h.dim();
        let n = h.n_spins();
        let dt = cfg.dt();
        let k_total = cfg.substeps;
        let lambda = h.eigenvalues();

        let mut sz_v = h.eigenvectors().clone();
        for (b, mut row) in sz_v.row_iter_mut().enumerate() {
            row *= magnetization_z(n, b);
        }
        let z = h.eigenvectors_t() * sz_v;

        // Σ_{k<K} e^{i x (k+½) dt}, a Dirichlet kernel
        let dirichlet = |x: f64| -> C64 {
            let half = 0.5 * x * dt;
            if half.sin().abs() > 1e-6 {
                C64::from_polar(1.0, 0.5 * x * k_total as f64 * dt)
                    * ((k_total as f64 * half).sin() / half.sin())
            } else {
                (0..k_total)
                    .map(|k| C64::from_polar(1.0, x * (k as f64 + 0.5) * dt))
                    .sum()
            }
        };
        let omega = cfg.omega_ac;
        let p_plus = DMatrix::from_fn(dim, dim, |m, j| {
            dirichlet(lambda[m] - lambda[j] + omega) * z[(m, j)]
        });
        let q_minus = DMatrix::from_fn(dim, dim, |m, j| {
            dirichlet(lambda[m] - lambda[j] - omega) * z[(m, j)]
        });
        // ac_weight = scale · sin(ω t_mid + θ)
        let weight_scale = match cfg.quadrature {
            AcQuadrature::Midpoint => dt,
            AcQuadrature::CellAverage => {
                let x = 0.5 * omega * dt;
                if x.abs() < 1e-8 {
                    dt * (1.0 - x * x / 6.0)
                } else {
                    dt * x.sin() / x
                }
            }
        };
        Self {
            h,
            cfg,
            p_plus,
            q_minus,
            period_phase: lambda
                .iter()
                .map(|&l| C64::from_polar(1.0, -l * cfg.period))
                .collect(),
            weight_scale,
            z_basis: DMatrix::zeros(dim, 4),
            eigen_basis: DMatrix::zeros(dim, 4),
        }
    }

    /// Advances the pair through period `p ≥ 1`, closing with the kick.
    pub fn evolve_period(&mut self, pair: &mut SensorPair, p: usize) -> Result<()> {
        assert!(p >= 1, "periods are numbered from 1");
        let dim = self.h.dim();
        for (s, state) in [&pair.psi, &pair.dpsi].into_iter().enumerate() {
            for (b, a) in state.amplitudes().iter().enumerate() {
                self.z_basis[(b, 2 * s)] = a.re;
                self.z_basis[(b, 2 * s + 1)] = a.im;
            }
        }
        self.eigen_basis
            .gemm(1.0, self.h.eigenvectors_t(), &self.z_basis, 0.0);
        let col = |m: &DMatrix<f64>, c: usize| {
            nalgebra::DVector::from_fn(dim, |b, _| C64::new(m[(b, c)], m[(b, c + 1)]))
        };
        let psi = col(&self.eigen_basis, 0);
        let dpsi = col(&self.eigen_basis, 2);
        let phase_p = C64::from_polar(
            1.0,
            self.cfg.omega_ac * (p - 1) as f64 * self.cfg.period + self.cfg.theta_ac,
        );
        let src = (&self.p_plus * &psi) * phase_p - (&self.q_minus * &psi) * phase_p.conj();
        let half_w = 0.5 * self.weight_scale;
        for m in 0..dim {
            let ph = self.period_phase[m];
            let a = psi[m] * ph;
            let d = (dpsi[m] - src[m] * half_w) * ph;
            self.eigen_basis[(m, 0)] = a.re;
            self.eigen_basis[(m, 1)] = a.im;
            self.eigen_basis[(m, 2)] = d.re;
            self.eigen_basis[(m, 3)] = d.im;
        }
        self.z_basis
            .gemm(1.0, self.h.eigenvectors(), &self.eigen_basis, 0.0);
        for (s, state) in [&mut pair.psi, &mut pair.dpsi].into_iter().enumerate() {
            for (b, a) in state.amplitudes_mut().iter_mut().enumerate() {
                *a = C64::new(self.z_basis[(b, 2 * s)], self.z_basis[(b, 2 * s + 1)]);
            }
        }
        let n = pair.psi.n_spins();
        kick_amplitudes(pair.psi.amplitudes_mut(), n, self.cfg.phi_kick);
        kick_amplitudes(pair.dpsi.amplitudes_mut(), n, self.cfg.phi_kick);
        let drift = (pair.psi.norm_sqr().sqrt() - 1.0).abs();
        if !pair.psi.is_finite() || !pair.dpsi.is_finite() || drift > 1e3 * NORM_TOLERANCE {
            return Err(non_finite(self.h, p, self.cfg.substeps));
        }
        Ok(())
    }
}

enum Stepper<'a> {
    Substeps(PeriodPropagator<'a>),
    LinearResponse(LinearResponsePropagator<'a>),
}

impl Stepper<'_> {
    fn evolve_period(&mut self, pair: &mut SensorPair, p: usize) -> Result<()> {
        match self {
            Stepper::Substeps(s) => s.evolve_period(pair, p),
            Stepper::LinearResponse(s) => s.evolve_period(pair, p),
        }
    }
}

/// Advances the pair through period `p ≥ 1` (K substeps, then the kick).
pub fn evolve_period(
    pair: &mut SensorPair,
    h: &StaticHamiltonian,
    cfg: &DriveConfig,
    p: usize,
) -> Result<()> {
    PeriodPropagator::new(h, cfg, true).evolve_period(pair, p)
}

/// Records at `p = 0..=n_periods` for one realization.
pub fn run_trajectory(
    cfg: &DriveConfig,
    realization: &DisorderRealization,
    initial: &StateVector,
) -> Result<Vec<StroboscopicRecord>> {
    let h = build_static_hamiltonian(realization, initial.n_spins())?;
    run_trajectory_with(cfg, &h, initial)
}

/// As [`run_trajectory`], with a prebuilt Hamiltonian.
pub fn run_trajectory_with(
    cfg: &DriveConfig,
    h: &StaticHamiltonian,
    initial: &StateVector,
) -> Result<Vec<StroboscopicRecord>> {
    cfg.validate()?;
    if initial.dim() != h.dim() {
        return Err(Error::Config(format!(
            "initial state has {} spins, Hamiltonian has {}",
            initial.n_spins(),
            h.n_spins()
        )));
    }
    let mut pair = SensorPair::new(initial.clone());
    let mut records = Vec::with_capacity(cfg.n_periods + 1);
    records.push(StroboscopicRecord::capture(0, cfg, &pair));
    // the resummed kernel only pays off over several periods
    let mut prop = if cfg.h_ac == 0.0 && cfg.n_periods > 2 {
        Stepper::LinearResponse(LinearResponsePropagator::new(h, cfg))
    } else {
        Stepper::Substeps(PeriodPropagator::new(h, cfg, true))
    };
    for p in 1..=cfg.n_periods {
        prop.evolve_period(&mut pair, p)?;
        records.push(StroboscopicRecord::capture(p, cfg, &pair));
    }
    Ok(records)
}

/// States `ψ(pT)` for `p = 0..=n_periods`, without the derivative.
pub fn run_states(
    cfg: &DriveConfig,
    h: &StaticHamiltonian,
    initial: &StateVector,
) -> Result<Vec<StateVector>> {
    cfg.validate()?;
    let mut psi = initial.clone();
    let mut out = Vec::with_capacity(cfg.n_periods + 1);
    out.push(psi.clone());
    let mut prop = PeriodPropagator::new(h, cfg, false);
    for p in 1..=cfg.n_periods {
        prop.evolve_state_period(&mut psi, p)?;
        out.push(psi.clone());
    }
    Ok(out)
}

/// Dense one-period propagator `exp(−iφS^x) exp(−iHT)` of the undriven
/// chain (`h_ac = 0`).
pub struct FloquetOperator {
    matrix: DMatrix<C64>,
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl FloquetOperator {
    pub fn new(h: &StaticHamiltonian, cfg: &DriveConfig) -> Self {
        let v = h.eigenvectors();
        let scaled = |f: fn(f64) -> f64| {
            let mut m = v.clone();
            for (mut col, &l) in m.column_iter_mut().zip(h.eigenvalues().iter()) {
                col *= f(-l * cfg.period);
            }
            m * h.eigenvectors_t()
        };
        let mut matrix = scaled(f64::cos).zip_map(&scaled(f64::sin), C64::new);
        let n = h.n_spins();
        for mut col in matrix.column_iter_mut() {
            kick_amplitudes(col.as_mut_slice(), n, cfg.phi_kick);
        }
        Self {
            re: matrix.map(|z| z.re),
            im: matrix.map(|z| z.im),
            matrix,
        }
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn apply(&self, psi: &mut StateVector) {
        let dim = psi.dim();
        let packed = DMatrix::from_fn(dim, 2, |b, c| {
            let a = psi.amplitudes()[b];
            if c == 0 { a.re } else { a.im }
        });
        // (R + iI)(x + iy) = (Rx − Iy) + i(Ry + Ix)
        let r = &self.re * &packed;
        let i = &self.im * &packed;
        for (b, a) in psi.amplitudes_mut().iter_mut().enumerate() {
            *a = C64::new(r[(b, 0)] - i[(b, 1)], r[(b, 1)] + i[(b, 0)]);
        }
    }
}

/// Site-averaged `⟨σ^z⟩` at `p = 0..=n_periods`, without the derivative.
pub fn run_magnetization(
    cfg: &DriveConfig,
    h: &StaticHamiltonian,
    initial: &StateVector,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = initial.n_spins();
    let mag = |psi: &StateVector| -> f64 {
        psi.amplitudes()
            .iter()
            .enumerate()
            .map(|(b, a)| a.norm_sqr() * magnetization_z(n, b))
            .sum::<f64>()
            * 2.0
            / n as f64
    };
    let mut psi = initial.clone();
    let mut out = Vec::with_capacity(cfg.n_periods + 1);
    out.push(mag(&psi));
    if cfg.h_ac == 0.0 {
        let u = FloquetOperator::new(h, cfg);
        for p in 1..=cfg.n_periods {
            u.apply(&mut psi);
            if !psi.is_finite() {
                return Err(non_finite(h, p, cfg.substeps));
            }
            out.push(mag(&psi));
        }
    } else {
        let mut prop = PeriodPropagator::new(h, cfg, false);
        for p in 1..=cfg.n_periods {
            prop.evolve_state_period(&mut psi, p)?;
            out.push(mag(&psi));
        }
    }
    Ok(out)
}

/// Reference path for one period built from [`evolve_substep`] and
/// [`apply_global_kick`]; slower than [`evolve_period`].
pub fn evolve_period_reference(
    pair: &mut SensorPair,
    h: &StaticHamiltonian,
    cfg: &DriveConfig,
    p: usize,
) -> Result<()> {
    let dt = cfg.dt();
    let t0 = (p - 1) as f64 * cfg.period;
    for k in 0..cfg.substeps {
        evolve_substep(pair, h, cfg, t0 + k as f64 * dt, dt)?;
    }
    apply_global_kick(&mut pair.psi, cfg.phi_kick);
    apply_global_kick(&mut pair.dpsi, cfg.phi_kick);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{total_spin_matrix, Boundary, Pauli};
    use nalgebra::DVector;

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut x = seed ^ 0x9e3779b97f4a7c15;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let amps = (0..1 << n).map(|_| C64::new(next(), next())).collect();
        StateVector::new(n, amps).unwrap().normalized()
    }

    fn realization(n: usize) -> DisorderRealization {
        let j = [0.73, -0.41, 0.18, -0.92, 0.55];
        let hz = [0.31, -0.88, 0.47, 0.12, -0.64, 0.29];
        let hx = [0.07, -0.03, 0.09, -0.06, 0.02, 0.05];
        DisorderRealization {
            j: j[..n - 1].to_vec(),
            h_z: hz[..n].to_vec(),
            h_x: hx[..n].to_vec(),
            boundary: Boundary::Open,
            seed: 7,
            index: 3,
        }
    }

    fn dtc_cfg() -> DriveConfig {
        DriveConfig {
            phi_kick: 3.08,
            h_ac: 0.0,
            omega_ac: PI,
            n_periods: 10,
            ..Default::default()
        }
    }

    fn max_diff(a: &StateVector, b: &StateVector) -> f64 {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn substep_at_zero_field() {
        let h = build_static_hamiltonian(&realization(3), 3).unwrap();
        let cfg = dtc_cfg();
        let psi0 = random_state(3, 1);
        let dt = cfg.dt();
        let t0 = 0.2;
        let mut pair = SensorPair::new(psi0.clone());
        evolve_substep(&mut pair, &h, &cfg, t0, dt).unwrap();

        let mut expect_psi = psi0.clone();
        apply_static_propagator(&mut expect_psi, &h, dt);
        assert!(max_diff(&pair.psi, &expect_psi) < 1e-13);

        // A (−i w S^z) A ψ
        let w = cfg.ac_weight(t0, dt);
        let mut d = psi0.clone();
        apply_static_propagator(&mut d, &h, dt / 2.0);
        for (b, a) in d.amplitudes_mut().iter_mut().enumerate() {
            *a *= C64::new(0.0, -w * magnetization_z(3, b));
        }
        apply_static_propagator(&mut d, &h, dt / 2.0);
        assert!(max_diff(&pair.dpsi, &d) < 1e-13);
    }

    #[test]
    fn substep_with_vanishing_source_is_homogeneous() {
        let h = build_static_hamiltonian(&realization(2), 2).unwrap();
        let mut cfg = dtc_cfg();
        cfg.h_ac = 0.3;
        let dt = cfg.dt();
        // α(t_mid) = sin(π t_mid) = 0 at t_mid = 1
        let t0 = 1.0 - dt / 2.0;
        let mut pair = SensorPair {
            psi: random_state(2, 2),
            dpsi: random_state(2, 3),
        };
        let mut expect = pair.dpsi.clone();
        evolve_substep(&mut pair, &h, &cfg, t0, dt).unwrap();
        // u dpsi with D = identity since the weight vanishes
        apply_static_propagator(&mut expect, &h, dt);
        assert!(cfg.ac_weight(t0, dt).abs() < 1e-15);
        assert!(max_diff(&pair.dpsi, &expect) < 1e-13);
    }

    #[test]
    fn substep_derivative_matches_finite_difference() {
        let h = build_static_hamiltonian(&realization(2), 2).unwrap();
        let mut cfg = dtc_cfg();
        cfg.h_ac = 0.7;
        cfg.theta_ac = 0.4;
        let dt = 0.05;
        let t0 = 0.33;
        let psi0 = random_state(2, 4);
        let mut pair = SensorPair {
            psi: psi0.clone(),
            dpsi: StateVector::zeros(2),
        };
        evolve_substep(&mut pair, &h, &cfg, t0, dt).unwrap();

        let delta = 1e-6;
        let step = |hval: f64| {
            let mut c = cfg.clone();
            c.h_ac = hval;
            let mut p = SensorPair::new(psi0.clone());
            evolve_substep(&mut p, &h, &c, t0, dt).unwrap();
            p.psi
        };
        let plus = step(cfg.h_ac + delta);
        let minus = step(cfg.h_ac - delta);
        for ((p, m), d) in plus
            .amplitudes()
            .iter()
            .zip(minus.amplitudes())
            .zip(pair.dpsi.amplitudes())
        {
            let fd = (p - m) / C64::new(2.0 * delta, 0.0);
            assert!((fd - d).norm() < 1e-7, "fd {fd} vs {d}");
        }
    }

    #[test]
    fn fused_period_matches_reference_path() {
        let h = build_static_hamiltonian(&realization(4), 4).unwrap();
        let mut cfg = dtc_cfg();
        cfg.h_ac = 0.2;
        cfg.theta_ac = 0.3;
        cfg.omega_ac = 2.9;
        cfg.substeps = 16;
        let mut fused = SensorPair::new(random_state(4, 5));
        let mut reference = fused.clone();
        let mut prop = PeriodPropagator::new(&h, &cfg, true);
        for p in 1..=3 {
            prop.evolve_period(&mut fused, p).unwrap();
            evolve_period_reference(&mut reference, &h, &cfg, p).unwrap();
        }
        assert!(max_diff(&fused.psi, &reference.psi) < 1e-12);
        assert!(max_diff(&fused.dpsi, &reference.dpsi) < 1e-11);
    }

    #[test]
    fn linear_response_path_matches_substeps() {
        let h = build_static_hamiltonian(&realization(5), 5).unwrap();
        for (quadrature, omega, theta) in [
            (AcQuadrature::CellAverage, PI, 0.0),
            (AcQuadrature::CellAverage, 2.7, 0.4),
            (AcQuadrature::Midpoint, 3.3, -0.2),
            (AcQuadrature::CellAverage, 0.0, 0.9),
        ] {
            let cfg = DriveConfig {
                phi_kick: 3.08,
                omega_ac: omega,
                theta_ac: theta,
                substeps: 32,
                quadrature,
                ..Default::default()
            };
            let mut a = SensorPair::new(random_state(5, 17));
            let mut b = a.clone();
            let mut sub = PeriodPropagator::new(&h, &cfg, true);
            let mut lr = LinearResponsePropagator::new(&h, &cfg);
            for p in 1..=12 {
                sub.evolve_period(&mut a, p).unwrap();
                lr.evolve_period(&mut b, p).unwrap();
            }
            assert!(max_diff(&a.psi, &b.psi) < 1e-12);
            assert!(max_diff(&a.dpsi, &b.dpsi) < 1e-10 * (1.0 + a.dpsi.norm_sqr().sqrt()));
        }
    }

    #[test]
    fn magnetization_paths_agree_with_trajectory() {
        let h = build_static_hamiltonian(&realization(4), 4).unwrap();
        let psi = random_state(4, 5);
        for h_ac in [0.0, 0.2] {
            let cfg = DriveConfig {
                h_ac,
                n_periods: 25,
                ..dtc_cfg()
            };
            let recs = run_trajectory_with(&cfg, &h, &psi).unwrap();
            let mag = run_magnetization(&cfg, &h, &psi).unwrap();
            assert_eq!(mag.len(), recs.len());
            for (m, r) in mag.iter().zip(&recs) {
                assert!((m - r.magnetization).abs() < 1e-11, "{m} vs {}", r.magnetization);
            }
        }
        let u = FloquetOperator::new(&h, &dtc_cfg());
        let unitarity = u.matrix().adjoint() * u.matrix() - DMatrix::<C64>::identity(16, 16);
        assert!(unitarity.norm() < 1e-12);
    }

    #[test]
    fn ideal_dtc_magnetization_alternates() {
        let r = DisorderRealization {
            h_x: vec![0.0; 4],
            ..realization(4)
        };
        let cfg = DriveConfig {
            phi_kick: PI,
            n_periods: 6,
            ..Default::default()
        };
        let recs = run_trajectory(&cfg, &r, &StateVector::all_up(4)).unwrap();
        for rec in &recs {
            let expect = if rec.period % 2 == 0 { 1.0 } else { -1.0 };
            assert!((rec.magnetization - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_periods_gives_initial_record() {
        let cfg = DriveConfig {
            n_periods: 0,
            ..dtc_cfg()
        };
        let recs = run_trajectory(&cfg, &realization(3), &StateVector::all_up(3)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].qfi, 0.0);
        assert_eq!(recs[0].magnetization, 1.0);
        assert!(recs[0].delta_h_bound.is_infinite());
    }

    #[test]
    fn zero_field_state_ignores_ac_parameters() {
        let r = realization(4);
        let psi0 = random_state(4, 8);
        let a = run_trajectory(&dtc_cfg(), &r, &psi0).unwrap();
        let cfg_b = DriveConfig {
            omega_ac: 1.234,
            theta_ac: 0.77,
            ..dtc_cfg()
        };
        let b = run_trajectory(&cfg_b, &r, &psi0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.magnetization.to_bits(), y.magnetization.to_bits());
        }
    }

    #[test]
    fn kick_commutes_with_derivative() {
        // ∂_h of (kick · ψ(h)) equals kick · ∂_h ψ(h)
        let h = build_static_hamiltonian(&realization(3), 3).unwrap();
        let mut cfg = dtc_cfg();
        cfg.h_ac = 0.1;
        let psi0 = random_state(3, 12);
        let mut pair = SensorPair::new(psi0.clone());
        evolve_period(&mut pair, &h, &cfg, 1).unwrap();
        let delta = 1e-6;
        let run = |hval: f64| {
            let mut c = cfg.clone();
            c.h_ac = hval;
            let mut p = SensorPair::new(psi0.clone());
            evolve_period(&mut p, &h, &c, 1).unwrap();
            p.psi
        };
        let (plus, minus) = (run(0.1 + delta), run(0.1 - delta));
        for ((p, m), d) in plus
            .amplitudes()
            .iter()
            .zip(minus.amplitudes())
            .zip(pair.dpsi.amplitudes())
        {
            assert!(((p - m) / C64::new(2.0 * delta, 0.0) - d).norm() < 1e-7);
        }
    }

    /// RK4 on i dψ/dt = (H + h α(t) S^z) ψ over one period, then the kick.
    fn rk4_period(h: &StaticHamiltonian, cfg: &DriveConfig, psi0: &StateVector, steps: usize) -> StateVector {
        let n = psi0.n_spins();
        let hs = h.matrix().map(|x| C64::new(x, 0.0));
        let sz = total_spin_matrix(n, Pauli::Z);
        let f = |t: f64, v: &DVector<C64>| -> DVector<C64> {
            (&hs * v + &sz * v * C64::new(cfg.h_ac * cfg.alpha(t), 0.0)) * C64::new(0.0, -1.0)
        };
        let dt = cfg.period / steps as f64;
        let mut y = DVector::from_column_slice(psi0.amplitudes());
        for s in 0..steps {
            let t = s as f64 * dt;
            let c = |x: f64| C64::new(x, 0.0);
            let k1 = f(t, &y);
            let k2 = f(t + dt / 2.0, &(&y + &k1 * c(dt / 2.0)));
            let k3 = f(t + dt / 2.0, &(&y + &k2 * c(dt / 2.0)));
            let k4 = f(t + dt, &(&y + &k3 * c(dt)));
            y += (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(dt / 6.0);
        }
        let mut out = StateVector::new(n, y.iter().copied().collect()).unwrap();
        apply_global_kick(&mut out, cfg.phi_kick);
        out
    }

    #[test]
    fn one_period_matches_rk4() {
        let h = build_static_hamiltonian(&realization(3), 3).unwrap();
        let mut cfg = dtc_cfg();
        cfg.h_ac = 0.1;
        let psi0 = random_state(3, 13);
        let mut pair = SensorPair::new(psi0.clone());
        evolve_period(&mut pair, &h, &cfg, 1).unwrap();
        let rk = rk4_period(&h, &cfg, &psi0, 20_000);
        assert!(max_diff(&pair.psi, &rk) < 1e-5, "{}", max_diff(&pair.psi, &rk));
    }

    #[test]
    fn numerical_failure_carries_location() {
        let h = build_static_hamiltonian(&realization(2), 2).unwrap();
        let mut bad = StateVector::all_up(2);
        bad.amplitudes_mut()[1] = C64::new(f64::NAN, 0.0);
        let cfg = DriveConfig { h_ac: 0.1, ..dtc_cfg() };
        let err = run_trajectory_with(&cfg, &h, &bad).unwrap_err();
        match err {
            Error::NumericalFailure { seed, index, period, substep } => {
                assert_eq!((seed, index, period, substep), (7, 3, 1, 0));
            }
            other => panic!("unexpected {other}"),
        }
        // the resummed zero-field path only knows the period
        let err = run_trajectory_with(&dtc_cfg(), &h, &bad).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure { period: 1, .. }));
        assert_eq!(
            build_static_hamiltonian(
                &DisorderRealization { h_z: vec![f64::NAN, 0.0], ..realization(2) },
                2
            )
            .unwrap_err()
            .exit_code(),
            2
        );
    }

    #[test]
    fn cell_average_weight_is_exact_integral() {
        let cfg = DriveConfig {
            omega_ac: 2.3,
            theta_ac: 0.4,
            ..Default::default()
        };
        let (a, dt) = (0.37, 0.11);
        let exact = ((cfg.omega_ac * a + cfg.theta_ac).cos()
            - (cfg.omega_ac * (a + dt) + cfg.theta_ac).cos())
            / cfg.omega_ac;
        assert!((cfg.ac_weight(a, dt) - exact).abs() < 1e-16);
        let mid = DriveConfig {
            quadrature: AcQuadrature::Midpoint,
            ..cfg.clone()
        };
        assert_eq!(mid.ac_weight(a, dt), cfg.alpha(a + dt / 2.0) * dt);
        let dc = DriveConfig {
            omega_ac: 0.0,
            ..cfg
        };
        assert!((dc.ac_weight(a, dt) - dt * 0.4f64.sin()).abs() < 1e-16);
    }
}
