//! Truncated Fock-space linear algebra.
//!
//! Every state and operator lives on the basis |0⟩ … |dim−1⟩. Constructors
//! compute the analytic probability mass above the cutoff and refuse to build
//! a state when it exceeds the caller's tail tolerance; the retained levels are
//! then renormalized so that the trace is exactly one.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense operator in the Fock basis.
pub type Operator = DMatrix<C64>;

/// Default tolerance for probability discarded by truncation.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Thresholds a valid density matrix must satisfy.
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-9;

/// Number of retained Fock levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FockDim(usize);

impl FockDim {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self(dim))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for FockDim {
    type Error = Error;

    fn try_from(dim: usize) -> Result<Self> {
        Self::new(dim)
    }
}

/// Bosonic annihilation operator, ⟨n−1|â|n⟩ = √n.
pub fn annihilation(dim: FockDim) -> Operator {
    let d = dim.get();
    let mut a = DMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Creation operator â†. The image of |dim−1⟩ is dropped.
pub fn creation(dim: FockDim) -> Operator {
    annihilation(dim).adjoint()
}

pub fn number_operator(dim: FockDim) -> Operator {
    let d = dim.get();
    DMatrix::from_diagonal(&DVector::from_fn(d, |n, _| C64::new(n as f64, 0.0)))
}

/// Normalized lowering operator Ê = (n̂+1)^{−1/2} â: Ê|0⟩ = 0, Ê|n⟩ = |n−1⟩.
pub fn e_lowering(dim: FockDim) -> Operator {
    let d = dim.get();
    let mut e = DMatrix::zeros(d, d);
    for n in 1..d {
        e[(n - 1, n)] = C64::new(1.0, 0.0);
    }
    e
}

/// Hermitian, unit-trace, positive semidefinite field state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: DMatrix<C64>,
    tail_mass: f64,
}

impl DensityMatrix {
    /// Wraps a matrix after checking every density-matrix invariant.
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidParameter(format!(
                "density matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        FockDim::new(mat.nrows())?;
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("density matrix has non-finite entries".into()));
        }
        let diag = Diagnostics::of_matrix(&mat);
        if !diag.is_valid_state() {
            return Err(Error::InvalidParameter(format!(
                "not a density matrix: trace {:.3e}, hermiticity residual {:.3e}, min eigenvalue {:.3e}",
                diag.trace, diag.hermiticity_residual, diag.min_eigenvalue
            )));
        }
        Ok(Self { mat, tail_mass: 0.0 })
    }

    /// Normalized projector onto a state vector.
    pub fn from_pure(psi: &DVector<C64>) -> Result<Self> {
        FockDim::new(psi.len())?;
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::EmptySuperposition);
        }
        let psi = psi / C64::new(norm, 0.0);
        Ok(Self::from_parts(&psi * psi.adjoint(), 0.0))
    }

    /// Internal constructor for outputs of maps that preserve the invariants.
    pub(crate) fn from_parts(mat: DMatrix<C64>, tail_mass: f64) -> Self {
        debug_assert!(mat.is_square());
        Self { mat, tail_mass }
    }

    pub fn dim(&self) -> FockDim {
        FockDim(self.mat.nrows())
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    /// Probability that was above the cutoff when the state was built.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Photon-number probability p_n = ⟨n|ρ|n⟩.
    pub fn prob(&self, n: usize) -> f64 {
        if n < self.mat.nrows() {
            self.mat[(n, n)].re
        } else {
            0.0
        }
    }

    pub fn vacuum_prob(&self) -> f64 {
        self.prob(0)
    }

    pub fn distribution(&self) -> PhotonDistribution {
        PhotonDistribution(self.mat.diagonal().iter().map(|z| z.re).collect())
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// trace(ρ²).
    pub fn purity(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    /// ⟨ψ|ρ|ψ⟩ for a normalized state vector ψ.
    pub fn fidelity_with_pure(&self, psi: &DVector<C64>) -> f64 {
        (psi.adjoint() * &self.mat * psi)[(0, 0)].re
    }

    /// Largest modulus among off-diagonal entries.
    pub fn max_offdiagonal(&self) -> f64 {
        let d = self.mat.nrows();
        let mut m = 0.0_f64;
        for j in 0..d {
            for i in 0..d {
                if i != j {
                    m = m.max(self.mat[(i, j)].norm());
                }
            }
        }
        m
    }
}

/// Numerator of a conditioned state: Hermitian and PSD with trace in [0, 1].
/// The trace is the probability (or rate) of the event it was produced by.
#[derive(Clone, Debug, PartialEq)]
pub struct UnnormalizedDensity {
    mat: DMatrix<C64>,
}

impl UnnormalizedDensity {
    pub(crate) fn new(mat: DMatrix<C64>) -> Self {
        Self { mat }
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// Divides by the trace. Fails when the event had zero weight.
    pub fn normalize(self) -> Result<DensityMatrix> {
        let tr = self.trace();
        if !(tr > f64::MIN_POSITIVE) || !tr.is_finite() {
            return Err(Error::ZeroProbabilityEvent { rate: tr });
        }
        Ok(DensityMatrix::from_parts(
            self.mat.unscale(tr),
            0.0,
        ))
    }
}

/// Photon-number distribution p_n over the retained levels.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonDistribution(Vec<f64>);

impl PhotonDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        FockDim::new(probs.len())?;
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn to_density(&self) -> DensityMatrix {
        let d = DVector::from_iterator(self.0.len(), self.0.iter().map(|p| C64::new(*p, 0.0)));
        DensityMatrix::from_parts(DMatrix::from_diagonal(&d), 0.0)
    }
}

/// Fock state |m⟩⟨m|.
pub fn make_fock(m: usize, dim: FockDim) -> Result<DensityMatrix> {
    let d = dim.get();
    if m >= d {
        return Err(Error::Cutoff { level: m, dim: d });
    }
    let mut mat = DMatrix::zeros(d, d);
    mat[(m, m)] = C64::new(1.0, 0.0);
    Ok(DensityMatrix::from_parts(mat, 0.0))
}

/// Thermal state with geometric distribution p_n = n̄ⁿ/(1+n̄)^{n+1}.
pub fn make_thermal(nbar: f64, dim: FockDim, tail_tol: f64) -> Result<DensityMatrix> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidParameter(format!("mean photon number must be >= 0, got {nbar}")));
    }
    let d = dim.get();
    let q = nbar / (1.0 + nbar);
    // Σ_{n≥d} (1−q)qⁿ = q^d
    let tail_mass = q.powi(d as i32);
    if tail_mass > tail_tol {
        return Err(Error::Truncation { dim: d, tail_mass, tail_tol });
    }
    let mut probs = Vec::with_capacity(d);
    let mut p = 1.0 - q;
    for _ in 0..d {
        probs.push(p);
        p *= q;
    }
    let kept: f64 = probs.iter().sum();
    let diag = DVector::from_iterator(d, probs.iter().map(|p| C64::new(p / kept, 0.0)));
    Ok(DensityMatrix::from_parts(DMatrix::from_diagonal(&diag), tail_mass))
}

/// Fock amplitudes αⁿe^{−|α|²/2}/√(n!) of a coherent state on the retained
/// levels, together with the probability above the cutoff.
pub fn coherent_amplitudes(alpha: C64, dim: FockDim) -> (DVector<C64>, f64) {
    let d = dim.get();
    let x = alpha.norm_sqr();
    let mut amps = DVector::zeros(d);
    let mut c = C64::new((-x / 2.0).exp(), 0.0);
    for n in 0..d {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        amps[n] = c;
    }
    // Poisson tail summed directly rather than as 1 − Σ, which would cancel.
    let mut tail = 0.0;
    let mut term = c.norm_sqr();
    let mut n = d - 1;
    loop {
        n += 1;
        term *= x / n as f64;
        tail += term;
        if term <= tail * 1e-17 || term == 0.0 || n > d + 100_000 {
            break;
        }
    }
    (amps, tail)
}

/// Coherent state |α⟩⟨α|.
pub fn make_coherent(alpha: C64, dim: FockDim, tail_tol: f64) -> Result<DensityMatrix> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::InvalidParameter("coherent amplitude must be finite".into()));
    }
    let (amps, tail_mass) = coherent_amplitudes(alpha, dim);
    if tail_mass > tail_tol {
        return Err(Error::Truncation { dim: dim.get(), tail_mass, tail_tol });
    }
    let mut rho = DensityMatrix::from_pure(&amps)?;
    rho.tail_mass = tail_mass;
    Ok(rho)
}

/// Normalized pure superposition Σ c_k |n_k⟩. Repeated levels add.
pub fn make_superposition(amps: &[(usize, C64)], dim: FockDim) -> Result<DensityMatrix> {
    if amps.is_empty() {
        return Err(Error::EmptySuperposition);
    }
    let d = dim.get();
    let mut psi = DVector::zeros(d);
    for &(level, c) in amps {
        if level >= d {
            return Err(Error::Cutoff { level, dim: d });
        }
        psi[level] += c;
    }
    DensityMatrix::from_pure(&psi)
}

/// n̄ = Σ n p_n.
pub fn mean_photon(rho: &DensityMatrix) -> f64 {
    rho.mat
        .diagonal()
        .iter()
        .enumerate()
        .map(|(n, z)| n as f64 * z.re)
        .sum()
}

/// Invariant metrics of a density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub trace: f64,
    pub hermiticity_residual: f64,
    pub min_eigenvalue: f64,
    pub vacuum_prob: f64,
}

impl Diagnostics {
    pub fn of_matrix(mat: &DMatrix<C64>) -> Self {
        let d = mat.nrows();
        let mut herm = 0.0_f64;
        for j in 0..d {
            for i in 0..=j {
                herm = herm.max((mat[(i, j)] - mat[(j, i)].conj()).norm());
            }
        }
        // Eigenvalues of the Hermitian part; the anti-Hermitian residual is
        // reported separately.
        let hermitian_part = (mat + mat.adjoint()).scale(0.5);
        let min_eigenvalue = hermitian_part
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Self {
            trace: mat.trace().re,
            hermiticity_residual: herm,
            min_eigenvalue,
            vacuum_prob: mat[(0, 0)].re,
        }
    }

    /// Hermitian and PSD, trace unconstrained.
    pub fn is_valid_unnormalized(&self) -> bool {
        self.hermiticity_residual <= HERMITICITY_TOL && self.min_eigenvalue >= -POSITIVITY_TOL
    }

    pub fn is_valid_state(&self) -> bool {
        self.is_valid_unnormalized() && (self.trace - 1.0).abs() <= TRACE_TOL
    }
}

pub fn diagnostics(rho: &DensityMatrix) -> Diagnostics {
    Diagnostics::of_matrix(&rho.mat)
}

/// Largest entrywise modulus.
pub fn max_norm(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
