//! Hilbert-space kernel for a chain of spins-1/2.
//!
//! Basis index bit `i` encodes spin `i`: bit value 0 is |↑⟩ (σ^z = +1) and
//! bit value 1 is |↓⟩ (σ^z = −1). Every diagonal operator in the crate
//! follows this convention.
//!
//! The static part of the Hamiltonian between kicks,
//!
//!   H = Σ_b J_b σ^z_i σ^z_j + Σ_i (h^z_i σ^z_i + h^x_i σ^x_i),
//!
//! is real symmetric in the z basis, so it is diagonalized once with a real
//! symmetric eigensolver and every subsequent static step is exact.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest chain accepted unless the caller raises the limit explicitly.
pub const DEFAULT_MAX_SPINS: usize = 14;

/// Norm drift tolerated after any single propagation step.
pub const NORM_TOLERANCE: f64 = 1e-10;

const I: C64 = C64::new(0.0, 1.0);

/// Complex amplitudes over the 2^N computational basis.
///
/// Used both for the normalized sensor state and for its (unnormalized)
/// derivative with respect to the field amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_spins: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(n_spins: usize, amps: Vec<C64>) -> Result<Self> {
        if n_spins == 0 || n_spins >= usize::BITS as usize {
            return Err(Error::Config(format!("invalid spin count {n_spins}")));
        }
        if amps.len() != 1 << n_spins {
            return Err(Error::Config(format!(
                "state of {n_spins} spins needs {} amplitudes, got {}",
                1usize << n_spins,
                amps.len()
            )));
        }
        Ok(Self { n_spins, amps })
    }

    /// The zero vector; the derivative state starts here.
    pub fn zeros(n_spins: usize) -> Self {
        Self {
            n_spins,
            amps: vec![C64::new(0.0, 0.0); 1 << n_spins],
        }
    }

    pub fn basis(n_spins: usize, index: usize) -> Self {
        let mut s = Self::zeros(n_spins);
        s.amps[index] = C64::new(1.0, 0.0);
        s
    }

    /// |↑…↑⟩
    pub fn all_up(n_spins: usize) -> Self {
        Self::basis(n_spins, 0)
    }

    /// The product state `(up |↑⟩ + down |↓⟩)^{⊗N}`.
    pub fn product(n_spins: usize, up: C64, down: C64) -> Self {
        let amps = (0..1usize << n_spins)
            .map(|b| {
                let n_down = b.count_ones() as i32;
                up.powi(n_spins as i32 - n_down) * down.powi(n_down)
            })
            .collect();
        Self { n_spins, amps }
    }

    /// Every spin along +x: `((|↑⟩ + |↓⟩)/√2)^{⊗N}`.
    pub fn x_polarized(n_spins: usize) -> Self {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::product(n_spins, a, a)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> C64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    pub fn scale(&mut self, factor: C64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }

    /// Returns a copy rescaled to unit norm.
    pub fn normalized(&self) -> StateVector {
        let mut out = self.clone();
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            out.scale(C64::new(1.0 / n, 0.0));
        }
        out
    }
}

/// Eigenvalue of S^z = Σ σ^z / 2 on a basis index.
#[inline]
pub fn magnetization_z(n_spins: usize, index: usize) -> f64 {
    0.5 * (n_spins as f64 - 2.0 * index.count_ones() as f64)
}

/// Boundary condition of the ZZ coupling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

impl Boundary {
    /// Bonds `(i, j)` of the chain. A periodic chain of two spins keeps its
    /// single bond; the wrap-around bond only exists for N > 2.
    pub fn bonds(self, n_spins: usize) -> Vec<(usize, usize)> {
        let mut bonds: Vec<_> = (0..n_spins.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if self == Boundary::Periodic && n_spins > 2 {
            bonds.push((n_spins - 1, 0));
        }
        bonds
    }

    pub fn n_bonds(self, n_spins: usize) -> usize {
        self.bonds(n_spins).len()
    }
}

/// One draw of the disordered couplings and fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    /// Couplings, one per bond.
    pub j: Vec<f64>,
    pub h_z: Vec<f64>,
    pub h_x: Vec<f64>,
    pub boundary: Boundary,
    /// Master seed of the stream that produced the draw.
    pub seed: u64,
    /// Realization index within the ensemble (the RNG substream key).
    pub index: u64,
}

impl DisorderRealization {
    /// A clean realization with uniform couplings and fields.
    pub fn uniform(n_spins: usize, boundary: Boundary, j: f64, h_z: f64, h_x: f64) -> Self {
        Self {
            j: vec![j; boundary.n_bonds(n_spins)],
            h_z: vec![h_z; n_spins],
            h_x: vec![h_x; n_spins],
            boundary,
            seed: 0,
            index: 0,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.h_z.len()
    }
}

/// The static Hamiltonian and its eigendecomposition `H = V Λ Vᵀ`.
///
/// The matrix is real symmetric, so `V` is real orthogonal.
#[derive(Clone, Debug)]
pub struct StaticHamiltonian {
    n_spins: usize,
    seed: u64,
    index: u64,
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    eigenvectors_t: DMatrix<f64>,
}

/// Builds `H` for `realization` and diagonalizes it, refusing chains longer
/// than [`DEFAULT_MAX_SPINS`].
pub fn build_static_hamiltonian(
    realization: &DisorderRealization,
    n_spins: usize,
) -> Result<StaticHamiltonian> {
    build_static_hamiltonian_with_limit(realization, n_spins, DEFAULT_MAX_SPINS)
}

pub fn build_static_hamiltonian_with_limit(
    realization: &DisorderRealization,
    n_spins: usize,
    max_spins: usize,
) -> Result<StaticHamiltonian> {
    if n_spins == 0 {
        return Err(Error::Config("n_spins must be at least 1".into()));
    }
    if n_spins > max_spins {
        return Err(Error::Capacity {
            n_spins,
            limit: max_spins,
        });
    }
    let bonds = realization.boundary.bonds(n_spins);
    if realization.j.len() != bonds.len()
        || realization.h_z.len() != n_spins
        || realization.h_x.len() != n_spins
    {
        return Err(Error::Config(format!(
            "realization sized (J: {}, h_z: {}, h_x: {}) does not match {n_spins} spins with {} bonds",
            realization.j.len(),
            realization.h_z.len(),
            realization.h_x.len(),
            bonds.len()
        )));
    }
    let all = realization.j.iter().chain(&realization.h_z).chain(&realization.h_x);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::Config("realization contains non-finite couplings or fields".into()));
    }

    let dim = 1usize << n_spins;
    let z = |b: usize, i: usize| if b >> i & 1 == 0 { 1.0 } else { -1.0 };
    let mut matrix = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        let mut diag = 0.0;
        for (&(i, j), &coupling) in bonds.iter().zip(&realization.j) {
            diag += coupling * z(b, i) * z(b, j);
        }
        for i in 0..n_spins {
            diag += realization.h_z[i] * z(b, i);
            let hx = realization.h_x[i];
            if hx != 0.0 {
                matrix[(b ^ (1 << i), b)] += hx;
            }
        }
        matrix[(b, b)] = diag;
    }

    let mut h = StaticHamiltonian::from_symmetric_matrix(n_spins, matrix);
    h.seed = realization.seed;
    h.index = realization.index;
    Ok(h)
}

impl StaticHamiltonian {
    /// Diagonalizes a real symmetric `2^N × 2^N` matrix.
    pub fn from_symmetric_matrix(n_spins: usize, matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), 1 << n_spins);
        let eig = SymmetricEigen::new(matrix.clone());
        let eigenvectors_t = eig.eigenvectors.transpose();
        Self {
            n_spins,
            seed: 0,
            index: 0,
            matrix,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
            eigenvectors_t,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `(seed, index)` of the realization this Hamiltonian was built from.
    pub fn realization_id(&self) -> (u64, u64) {
        (self.seed, self.index)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors as columns.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub(crate) fn eigenvectors_t(&self) -> &DMatrix<f64> {
        &self.eigenvectors_t
    }

    /// Largest `‖H v − λ v‖` over all eigenpairs.
    pub fn max_eigen_residual(&self) -> f64 {
        let hv = &self.matrix * &self.eigenvectors;
        (0..self.dim())
            .map(|k| {
                let r = hv.column(k) - self.eigenvectors.column(k) * self.eigenvalues[k];
                r.norm()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|H_ab − conj(H_ba)|`.
    pub fn max_hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Applies `exp(−i φ S^x) = ⊗_i exp(−i φ σ^x_i / 2)` in place.
pub fn apply_global_kick(state: &mut StateVector, phi_kick: f64) {
    let n = state.n_spins;
    kick_amplitudes(&mut state.amps, n, phi_kick);
}

pub(crate) fn kick_amplitudes(amps: &mut [C64], n_spins: usize, phi_kick: f64) {
    if phi_kick == 0.0 {
        return;
    }
    let c = C64::new((phi_kick / 2.0).cos(), 0.0);
    let s = -I * (phi_kick / 2.0).sin();
    for site in 0..n_spins {
        let mask = 1usize << site;
        for b in 0..amps.len() {
            if b & mask == 0 {
                let a0 = amps[b];
                let a1 = amps[b | mask];
                amps[b] = c * a0 + s * a1;
                amps[b | mask] = s * a0 + c * a1;
            }
        }
    }
}

/// Multiplies each amplitude by `exp(−i · angle · m_z(b))`, the propagator
/// of `angle · S^z`.
pub fn apply_diagonal_z_propagator(state: &mut StateVector, angle: f64) {
    let n = state.n_spins;
    let phases = sz_phases(n, angle);
    for (b, a) in state.amps.iter_mut().enumerate() {
        *a *= phases[b.count_ones() as usize];
    }
}

/// `exp(−i angle m_z)` indexed by the number of down spins.
pub(crate) fn sz_phases(n_spins: usize, angle: f64) -> Vec<C64> {
    (0..=n_spins)
        .map(|n_down| {
            let mz = 0.5 * (n_spins as f64 - 2.0 * n_down as f64);
            C64::from_polar(1.0, -angle * mz)
        })
        .collect()
}

/// Applies `V exp(−i Λ dt) Vᵀ` in place.
pub fn apply_static_propagator(state: &mut StateVector, h: &StaticHamiltonian, dt: f64) {
    assert_eq!(state.dim(), h.dim(), "state and Hamiltonian dimensions differ");
    if dt == 0.0 {
        return;
    }
    let dim = h.dim();
    let mut packed = DMatrix::<f64>::zeros(dim, 2);
    for (b, a) in state.amps.iter().enumerate() {
        packed[(b, 0)] = a.re;
        packed[(b, 1)] = a.im;
    }
    let mut eig = h.eigenvectors_t() * &packed;
    for (k, &lambda) in h.eigenvalues().iter().enumerate() {
        let ph = C64::from_polar(1.0, -lambda * dt);
        let c = C64::new(eig[(k, 0)], eig[(k, 1)]) * ph;
        eig[(k, 0)] = c.re;
        eig[(k, 1)] = c.im;
    }
    packed.gemm(1.0, h.eigenvectors(), &eig, 0.0);
    for (b, a) in state.amps.iter_mut().enumerate() {
        *a = C64::new(packed[(b, 0)], packed[(b, 1)]);
    }
}

/// `⟨σ^z_i⟩` for every site.
pub fn measure_site_z(state: &StateVector) -> Vec<f64> {
    let mut out = vec![0.0; state.n_spins];
    for (b, a) in state.amps.iter().enumerate() {
        let p = a.norm_sqr();
        for (i, m) in out.iter_mut().enumerate() {
            if b >> i & 1 == 0 {
                *m += p;
            } else {
                *m -= p;
            }
        }
    }
    out
}

/// Single-site Pauli factor of a Pauli string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// Dense matrix of `⊗_i ops[i]` with `ops[i]` acting on spin `i`.
pub fn pauli_string_matrix(ops: &[Pauli]) -> DMatrix<C64> {
    let n = ops.len();
    let dim = 1usize << n;
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let mut row = col;
        let mut coeff = C64::new(1.0, 0.0);
        for (i, op) in ops.iter().enumerate() {
            let down = col >> i & 1 == 1;
            match op {
                Pauli::I => {}
                Pauli::X => row ^= 1 << i,
                Pauli::Y => {
                    row ^= 1 << i;
                    // σ^y|↑⟩ = i|↓⟩, σ^y|↓⟩ = −i|↑⟩
                    coeff *= if down { -I } else { I };
                }
                Pauli::Z => {
                    if down {
                        coeff = -coeff;
                    }
                }
            }
        }
        m[(row, col)] = coeff;
    }
    m
}

/// Dense `S^α = Σ_i σ^α_i / 2`.
pub fn total_spin_matrix(n_spins: usize, axis: Pauli) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::zeros(1 << n_spins, 1 << n_spins);
    for site in 0..n_spins {
        let mut ops = vec![Pauli::I; n_spins];
        ops[site] = axis;
        out += pauli_string_matrix(&ops) * C64::new(0.5, 0.0);
    }
    out
}
