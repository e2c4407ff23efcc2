//! First-principles check of the counting superoperators.
//!
//! The field is coupled to a two-level detector by the rotating-wave
//! interaction `H = Ω(â†|g⟩⟨e| + â|e⟩⟨g|)` (ħ = 1). Starting with the detector
//! in |g⟩, the joint state is advanced over one short interval dt and the
//! detector is projected out: the |e⟩ block is the one-count part and the |g⟩
//! block the no-count part of the field state. To second order in Ωdt these
//! reproduce the SD maps with absorption rate λ = Ω²dt.
//!
//! Joint basis ordering: index `level * dim + n` with level 0 = g, 1 = e.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fockspace::{max_norm, number_operator, DensityMatrix, FockDim, UnnormalizedDensity, C64};
use crate::jump_models::{one_count_map, JumpModel};

/// Largest Ωdt accepted as a short step.
pub const MAX_COUPLING_STEP: f64 = 0.1;

/// Excited population tolerated at the start of a step.
pub const GROUND_STATE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorLevel {
    Ground,
    Excited,
}

impl DetectorLevel {
    fn offset(self, dim: usize) -> usize {
        match self {
            DetectorLevel::Ground => 0,
            DetectorLevel::Excited => dim,
        }
    }
}

/// Density matrix of detector ⊗ field.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDensity {
    dim: FockDim,
    mat: DMatrix<C64>,
}

impl JointDensity {
    /// ρ_f ⊗ |g⟩⟨g|.
    pub fn from_field(rho_f: &DensityMatrix) -> Self {
        let dim = rho_f.dim();
        let d = dim.get();
        let mut mat = DMatrix::zeros(2 * d, 2 * d);
        mat.view_mut((0, 0), (d, d)).copy_from(rho_f.matrix());
        Self { dim, mat }
    }

    pub fn from_matrix(dim: FockDim, mat: DMatrix<C64>) -> Result<Self> {
        let n = 2 * dim.get();
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: mat.nrows() });
        }
        Ok(Self { dim, mat })
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    /// ⟨a|ρ|b⟩ as a field operator.
    pub fn block(&self, a: DetectorLevel, b: DetectorLevel) -> DMatrix<C64> {
        let d = self.dim.get();
        self.mat
            .view((a.offset(d), b.offset(d)), (d, d))
            .into_owned()
    }

    pub fn excited_population(&self) -> f64 {
        let d = self.dim.get();
        (d..2 * d).map(|i| self.mat[(i, i)].re).sum()
    }
}

/// Field–detector coupling Ω and the step length dt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingParams {
    omega: f64,
    dt: f64,
}

impl CouplingParams {
    pub fn new(omega: f64, dt: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidParameter(format!("coupling must be positive, got {omega}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
        }
        if omega * dt > MAX_COUPLING_STEP {
            return Err(Error::InvalidParameter(format!(
                "coupling step Omega*dt = {} exceeds {MAX_COUPLING_STEP}",
                omega * dt
            )));
        }
        Ok(Self { omega, dt })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// λ = Ω²dt, the absorption probability per unit time.
    pub fn absorption_rate(&self) -> f64 {
        self.omega * self.omega * self.dt
    }

    pub fn with_dt(self, dt: f64) -> Result<Self> {
        Self::new(self.omega, dt)
    }
}

/// Rotating-wave interaction Ω(â†|g⟩⟨e| + â|e⟩⟨g|) on the joint space.
pub fn interaction_hamiltonian(dim: FockDim, omega: f64) -> DMatrix<C64> {
    let d = dim.get();
    let mut h = DMatrix::zeros(2 * d, 2 * d);
    for n in 1..d {
        let g = n;
        let e = d + n - 1;
        let v = C64::new(omega * (n as f64).sqrt(), 0.0);
        h[(e, g)] = v;
        h[(g, e)] = v;
    }
    h
}

fn require_ground(rho: &JointDensity) -> Result<()> {
    let pe = rho.excited_population();
    if pe.abs() > GROUND_STATE_TOL {
        return Err(Error::DetectorExcited(pe));
    }
    Ok(())
}

/// Second-order Taylor step
/// `ρ + (−i[H, ρ]) dt + (dt²/2)(2HρH − {H², ρ})`.
pub fn taylor_step(rho: &JointDensity, params: CouplingParams) -> Result<JointDensity> {
    require_ground(rho)?;
    let h = interaction_hamiltonian(rho.dim, params.omega);
    let dt = params.dt;
    let r = &rho.mat;
    let hr = &h * r;
    let rh = r * &h;
    let hh = &h * &h;
    let commutator = &hr - &rh;
    let second = (&hr * &h).scale(2.0) - &hh * r - r * &hh;
    let mat = r + commutator * C64::new(0.0, -dt) + second.scale(0.5 * dt * dt);
    Ok(JointDensity { dim: rho.dim, mat })
}

/// Exact step `U ρ U†` with `U = exp(−iH dt)`.
///
/// H only couples |n,g⟩ with |n−1,e⟩, so U is a direct sum of 2×2 rotations
/// by θ_n = Ω√n dt plus the uncoupled |0,g⟩ and |dim−1,e⟩.
pub fn exact_step(rho: &JointDensity, params: CouplingParams) -> JointDensity {
    let u = exact_propagator(rho.dim, params);
    let mat = &u * &rho.mat * u.adjoint();
    JointDensity { dim: rho.dim, mat }
}

pub fn exact_propagator(dim: FockDim, params: CouplingParams) -> DMatrix<C64> {
    let d = dim.get();
    let mut u = DMatrix::zeros(2 * d, 2 * d);
    u[(0, 0)] = C64::new(1.0, 0.0);
    u[(2 * d - 1, 2 * d - 1)] = C64::new(1.0, 0.0);
    for n in 1..d {
        let g = n;
        let e = d + n - 1;
        let theta = params.omega * (n as f64).sqrt() * params.dt;
        let (s, c) = theta.sin_cos();
        u[(g, g)] = C64::new(c, 0.0);
        u[(e, e)] = C64::new(c, 0.0);
        u[(g, e)] = C64::new(0.0, -s);
        u[(e, g)] = C64::new(0.0, -s);
    }
    u
}

/// Field blocks conditioned on the detector level.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorBlocks {
    /// ⟨g|ρ|g⟩: no photon absorbed.
    pub ground: UnnormalizedDensity,
    /// ⟨e|ρ|e⟩: one photon absorbed.
    pub excited: UnnormalizedDensity,
}

impl DetectorBlocks {
    /// Partial trace over the detector.
    pub fn field(&self) -> DMatrix<C64> {
        self.ground.matrix() + self.excited.matrix()
    }
}

pub fn detector_reduce(rho: &JointDensity) -> DetectorBlocks {
    DetectorBlocks {
        ground: UnnormalizedDensity::new(rho.block(DetectorLevel::Ground, DetectorLevel::Ground)),
        excited: UnnormalizedDensity::new(rho.block(DetectorLevel::Excited, DetectorLevel::Excited)),
    }
}

/// How the joint state is advanced over dt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointPropagator {
    /// Second-order Taylor expansion; reproduces the SD forms identically.
    Taylor,
    /// Exact unitary; departs from the SD forms at fourth order in Ωdt.
    Exact,
}

/// Deviations of the reduced blocks from the SD superoperators at λ = Ω²dt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperoperatorResiduals {
    /// ‖⟨e|ρ(dt)|e⟩ − λ dt âρâ†‖_max
    pub one_count_residual: f64,
    /// ‖⟨g|ρ(dt)|g⟩ − (ρ − (λ/2){n̂, ρ} dt)‖_max
    pub no_count_residual: f64,
    /// Tr⟨e|ρ(dt)|e⟩
    pub excited_trace: f64,
    /// λ = Ω²dt
    pub absorption_rate: f64,
    /// ‖ρ_f‖_max, the scale for relative residuals.
    pub field_scale: f64,
}

impl SuperoperatorResiduals {
    pub fn max_residual(&self) -> f64 {
        self.one_count_residual.max(self.no_count_residual)
    }
}

pub fn verify_superoperators(
    rho_f: &DensityMatrix,
    params: CouplingParams,
    propagator: JointPropagator,
) -> Result<SuperoperatorResiduals> {
    let joint = JointDensity::from_field(rho_f);
    let stepped = match propagator {
        JointPropagator::Taylor => taylor_step(&joint, params)?,
        JointPropagator::Exact => exact_step(&joint, params),
    };
    let blocks = detector_reduce(&stepped);

    let lambda = params.absorption_rate();
    let dt = params.dt;
    let sd = JumpModel::sd(lambda)?;
    let jump = one_count_map(&sd, rho_f).into_matrix().scale(dt);

    let n = number_operator(rho_f.dim());
    let r = rho_f.matrix();
    let no_count = r - (&n * r + r * &n).scale(0.5 * lambda * dt);

    Ok(SuperoperatorResiduals {
        one_count_residual: max_norm(&(blocks.excited.matrix() - jump)),
        no_count_residual: max_norm(&(blocks.ground.matrix() - no_count)),
        excited_trace: blocks.excited.trace(),
        absorption_rate: lambda,
        field_scale: max_norm(r),
    })
}

/// ‖taylor_step − exact_step‖_max for one step.
pub fn taylor_error(rho_f: &DensityMatrix, params: CouplingParams) -> Result<f64> {
    let joint = JointDensity::from_field(rho_f);
    let t = taylor_step(&joint, params)?;
    let e = exact_step(&joint, params);
    Ok(max_norm(&(t.mat - e.mat)))
}

/// Least-squares slope of ln(residual) against ln(step).
pub fn convergence_order(steps: &[f64], residuals: &[f64]) -> f64 {
    assert_eq!(steps.len(), residuals.len());
    let n = steps.len() as f64;
    let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::*;

    fn dim(d: usize) -> FockDim {
        FockDim::new(d).unwrap()
    }

    #[test]
    fn coupling_params_validation() {
        assert!(CouplingParams::new(1.0, 0.1).is_ok());
        assert!(CouplingParams::new(1.0, 0.11).is_err());
        assert!(CouplingParams::new(0.0, 1e-3).is_err());
        assert!(CouplingParams::new(1.0, -1e-3).is_err());
        let p = CouplingParams::new(2.0, 1e-3).unwrap();
        assert!((p.absorption_rate() - 4e-3).abs() < 1e-18);
    }

    #[test]
    fn hamiltonian_elements() {
        let d = dim(6);
        let omega = 0.7;
        let h = interaction_hamiltonian(d, omega);
        let idx = |level: usize, n: usize| level * 6 + n;
        assert!((h[(idx(1, 0), idx(0, 1))].re - omega).abs() < 1e-15);
        assert!((h[(idx(1, 3), idx(0, 4))].re - 2.0 * omega).abs() < 1e-15);
        assert_eq!(max_norm(&(h.adjoint() - &h)), 0.0);
        for a in 0..6 {
            for b in 0..6 {
                assert_eq!(h[(idx(0, a), idx(0, b))].norm(), 0.0);
                assert_eq!(h[(idx(1, a), idx(1, b))].norm(), 0.0);
            }
        }
    }

    #[test]
    fn exact_propagator_matches_matrix_exponential() {
        let d = dim(5);
        let params = CouplingParams::new(1.3, 0.05).unwrap();
        let h = interaction_hamiltonian(d, params.omega());
        let oracle = (h * C64::new(0.0, -params.dt())).exp();
        assert!(max_norm(&(oracle - exact_propagator(d, params))) < 1e-14);
    }

    #[test]
    fn single_photon_absorption() {
        let omega = 1.0;
        let dt = 1e-3;
        let params = CouplingParams::new(omega, dt).unwrap();
        let one = make_fock(1, dim(4)).unwrap();
        let joint = JointDensity::from_field(&one);
        assert_eq!(joint.excited_population(), 0.0);
        let stepped = taylor_step(&joint, params).unwrap();
        let blocks = detector_reduce(&stepped);
        let expected = omega * omega * dt * dt;
        assert!((blocks.excited.trace() - expected).abs() < 1e-18);
        assert!((blocks.excited.matrix()[(0, 0)].re - expected).abs() < 1e-18);
        assert!((blocks.ground.trace() + blocks.excited.trace() - 1.0).abs() < 1e-12);
        let rate = blocks.excited.trace() / dt;
        assert!(((rate - params.absorption_rate()) / params.absorption_rate()).abs() < 1e-6);
    }

    #[test]
    fn vacuum_is_stationary() {
        let vac = make_fock(0, dim(6)).unwrap();
        let params = CouplingParams::new(1.0, 0.05).unwrap();
        let joint = JointDensity::from_field(&vac);
        assert_eq!(taylor_step(&joint, params).unwrap(), joint);
        for prop in [JointPropagator::Taylor, JointPropagator::Exact] {
            let r = verify_superoperators(&vac, params, prop).unwrap();
            assert_eq!(r.one_count_residual, 0.0);
            assert_eq!(r.no_count_residual, 0.0);
        }
    }

    #[test]
    fn initial_joint_state_has_empty_excited_block() {
        let th = make_thermal(1.0, dim(40), DEFAULT_TAIL_TOL).unwrap();
        let blocks = detector_reduce(&JointDensity::from_field(&th));
        assert_eq!(max_norm(blocks.excited.matrix()), 0.0);
        assert_eq!(blocks.ground.matrix(), th.matrix());
    }

    #[test]
    fn taylor_step_rejects_excited_detector() {
        let d = dim(3);
        let mut m = DMatrix::zeros(6, 6);
        m[(3, 3)] = C64::new(1.0, 0.0);
        let joint = JointDensity::from_matrix(d, m).unwrap();
        let params = CouplingParams::new(1.0, 1e-3).unwrap();
        assert!(matches!(taylor_step(&joint, params), Err(Error::DetectorExcited(_))));
    }

    #[test]
    fn taylor_path_reproduces_sd_forms() {
        let th = make_thermal(1.0, dim(64), DEFAULT_TAIL_TOL).unwrap();
        let params = CouplingParams::new(1.0, 1e-3).unwrap();
        let r = verify_superoperators(&th, params, JointPropagator::Taylor).unwrap();
        assert!(r.max_residual() <= 1e-8 * r.field_scale);
        let rate = r.excited_trace / params.dt();
        assert!((rate / (r.absorption_rate * 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exact_path_residuals_shrink_fourfold_per_halving() {
        let th = make_thermal(1.0, dim(64), DEFAULT_TAIL_TOL).unwrap();
        let r1 = verify_superoperators(&th, CouplingParams::new(1.0, 1e-2).unwrap(), JointPropagator::Exact).unwrap();
        let r2 = verify_superoperators(&th, CouplingParams::new(1.0, 5e-3).unwrap(), JointPropagator::Exact).unwrap();
        assert!(r1.one_count_residual / r2.one_count_residual > 7.0);
        assert!(r1.no_count_residual / r2.no_count_residual > 7.0);
    }

    #[test]
    fn taylor_step_is_third_order() {
        let coh = make_coherent(C64::new(0.9, 0.4), dim(24), DEFAULT_TAIL_TOL).unwrap();
        let steps = [1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&dt| taylor_error(&coh, CouplingParams::new(1.0, dt).unwrap()).unwrap())
            .collect();
        assert!(convergence_order(&steps, &errs) >= 2.9);
    }

    #[test]
    fn reduction_preserves_trace_and_positivity() {
        let d = dim(24);
        let params = CouplingParams::new(1.0, 1e-3).unwrap();
        let states = [
            make_fock(3, d).unwrap(),
            make_thermal(1.0, d, 1e-6).unwrap(),
            make_coherent(C64::new(1.0, 0.5), d, DEFAULT_TAIL_TOL).unwrap(),
        ];
        for rho in &states {
            for stepped in [
                taylor_step(&JointDensity::from_field(rho), params).unwrap(),
                exact_step(&JointDensity::from_field(rho), params),
            ] {
                let b = detector_reduce(&stepped);
                assert!((b.ground.trace() + b.excited.trace() - 1.0).abs() < 1e-12);
                let dd = d.get();
                let m = stepped.matrix();
                let partial = DMatrix::from_fn(dd, dd, |i, j| m[(i, j)] + m[(dd + i, dd + j)]);
                assert!(max_norm(&(b.field() - partial)) == 0.0);
                assert!(Diagnostics::of_matrix(b.ground.matrix()).is_valid_unnormalized());
                assert!(Diagnostics::of_matrix(b.excited.matrix()).is_valid_unnormalized());
            }
        }
    }

    #[test]
    fn convergence_order_of_power_law() {
        let steps = [1.0, 0.5, 0.25];
        let res: Vec<f64> = steps.iter().map(|s: &f64| 3.0 * s.powi(4)).collect();
        assert!((convergence_order(&steps, &res) - 4.0).abs() < 1e-12);
    }
}
