//! Quantum-jump superoperators of the SD and E photon counting models.
//!
//! Both families act through a lowering operator Â that maps |n⟩ to a multiple
//! of |n−1⟩ (Â = â for SD, Â = Ê for E):
//!
//! * one-count map `J ρ = γ Â ρ Â†`, with rate `γ Tr(Â†Â ρ)`;
//! * no-count map `S_τ ρ = K ρ K†` with `K = exp(−iω₀ n̂ τ − γ Â†Â τ / 2)`.
//!
//! Since Â†Â is diagonal in the Fock basis, K is diagonal and both maps are
//! applied entrywise in O(dim²) without forming operator products.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fockspace::{e_lowering, annihilation, DensityMatrix, FockDim, Operator, UnnormalizedDensity, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Â = â; count rate proportional to the mean photon number.
    Sd,
    /// Â = (n̂+1)^{−1/2}â; count rate proportional to 1 − p₀.
    E,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sd => "SD",
            ModelKind::E => "E",
        }
    }
}

/// A jump model together with its coupling constant γ and the field
/// frequency ω₀ (zero in the rotating frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpModel {
    kind: ModelKind,
    gamma: f64,
    omega0: f64,
}

impl JumpModel {
    pub fn new(kind: ModelKind, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "coupling constant gamma must be finite and positive, got {gamma}"
            )));
        }
        Ok(Self { kind, gamma, omega0: 0.0 })
    }

    pub fn sd(gamma: f64) -> Result<Self> {
        Self::new(ModelKind::Sd, gamma)
    }

    pub fn e(gamma: f64) -> Result<Self> {
        Self::new(ModelKind::E, gamma)
    }

    /// Sets the free field frequency used in the no-count phase factors.
    pub fn with_frequency(mut self, omega0: f64) -> Result<Self> {
        if !omega0.is_finite() {
            return Err(Error::InvalidParameter("field frequency must be finite".into()));
        }
        self.omega0 = omega0;
        Ok(self)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Â as a dense matrix.
    pub fn lowering_operator(&self, dim: FockDim) -> Operator {
        match self.kind {
            ModelKind::Sd => annihilation(dim),
            ModelKind::E => e_lowering(dim),
        }
    }

    /// c_n with Â|n⟩ = c_n|n−1⟩.
    #[inline]
    pub fn lowering_coefficient(&self, n: usize) -> f64 {
        match (self.kind, n) {
            (_, 0) => 0.0,
            (ModelKind::Sd, n) => (n as f64).sqrt(),
            (ModelKind::E, _) => 1.0,
        }
    }

    /// κ_n = γ⟨n|Â†Â|n⟩: the count rate out of |n⟩.
    #[inline]
    pub fn decay_rate(&self, n: usize) -> f64 {
        match (self.kind, n) {
            (_, 0) => 0.0,
            (ModelKind::Sd, n) => self.gamma * n as f64,
            (ModelKind::E, _) => self.gamma,
        }
    }

    /// Diagonal of the no-count propagator K over an interval τ.
    pub fn no_count_weights(&self, dim: usize, tau: f64) -> Vec<C64> {
        (0..dim)
            .map(|n| {
                C64::new(-0.5 * self.decay_rate(n) * tau, -self.omega0 * n as f64 * tau).exp()
            })
            .collect()
    }
}

fn check_interval(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::NegativeInterval(tau));
    }
    Ok(())
}

/// γ Â ρ Â†. Its trace is the one-count rate.
pub fn one_count_map(model: &JumpModel, rho: &DensityMatrix) -> UnnormalizedDensity {
    let d = rho.dim().get();
    let src = rho.matrix();
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d - 1 {
        let cj = model.lowering_coefficient(j + 1);
        for i in 0..d - 1 {
            let ci = model.lowering_coefficient(i + 1);
            out[(i, j)] = src[(i + 1, j + 1)] * (model.gamma * ci * cj);
        }
    }
    UnnormalizedDensity::new(out)
}

/// w = γ Tr(Â†Â ρ): γn̄ for SD and γ(1 − p₀) for E.
pub fn one_count_rate(model: &JumpModel, rho: &DensityMatrix) -> f64 {
    let d = rho.dim().get();
    (1..d).map(|n| model.decay_rate(n) * rho.prob(n)).sum()
}

/// Field state immediately after a detected photon.
pub fn post_one_count(model: &JumpModel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let rate = one_count_rate(model, rho);
    if !(rate > 0.0) {
        return Err(Error::ZeroProbabilityEvent { rate });
    }
    one_count_map(model, rho).normalize()
}

/// K ρ K† for an interval τ without counts.
pub fn no_count_map(model: &JumpModel, rho: &DensityMatrix, tau: f64) -> Result<UnnormalizedDensity> {
    check_interval(tau)?;
    let d = rho.dim().get();
    let k = model.no_count_weights(d, tau);
    let src = rho.matrix();
    let out = DMatrix::from_fn(d, d, |i, j| src[(i, j)] * k[i] * k[j].conj());
    Ok(UnnormalizedDensity::new(out))
}

/// Probability of no count in an interval τ: Σ e^{−κ_n τ} p_n.
pub fn no_count_probability(model: &JumpModel, rho: &DensityMatrix, tau: f64) -> Result<f64> {
    check_interval(tau)?;
    let d = rho.dim().get();
    Ok((0..d).map(|n| (-model.decay_rate(n) * tau).exp() * rho.prob(n)).sum())
}

/// Field state conditioned on no count during τ.
pub fn post_no_count(model: &JumpModel, rho: &DensityMatrix, tau: f64) -> Result<DensityMatrix> {
    no_count_map(model, rho, tau)?.normalize()
}

/// Canonical single-mode fields with closed-form counting statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Fock,
    Thermal,
    Coherent,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Fock => "fock",
            FieldKind::Thermal => "thermal",
            FieldKind::Coherent => "coherent",
        }
    }
}

/// Mean photon number and vacuum probability right after a count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostCountMoments {
    pub mean_after: f64,
    pub vacuum_after: f64,
}

/// Count rate, conditional count rate right after a count, and g².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountingRates {
    pub rate: f64,
    pub conditional_rate: f64,
    pub g2: f64,
}

fn fock_level(nbar: f64) -> Result<usize> {
    if nbar >= 1.0 && nbar.fract() == 0.0 && nbar.is_finite() {
        Ok(nbar as usize)
    } else {
        Err(Error::InvalidParameter(format!(
            "Fock oracle needs an integer photon number >= 1, got {nbar}"
        )))
    }
}

fn positive_mean(nbar: f64) -> Result<f64> {
    if nbar > 0.0 && nbar.is_finite() {
        Ok(nbar)
    } else {
        Err(Error::InvalidParameter(format!(
            "closed forms need a positive mean photon number, got {nbar}"
        )))
    }
}

/// Closed-form post-count mean photon number and vacuum probability.
pub fn table1_oracle(kind: ModelKind, field: FieldKind, nbar: f64) -> Result<PostCountMoments> {
    let entry = match field {
        FieldKind::Fock => {
            let m = fock_level(nbar)?;
            PostCountMoments {
                mean_after: nbar - 1.0,
                vacuum_after: if m == 1 { 1.0 } else { 0.0 },
            }
        }
        FieldKind::Thermal => {
            let n = positive_mean(nbar)?;
            match kind {
                ModelKind::Sd => PostCountMoments {
                    mean_after: 2.0 * n,
                    vacuum_after: 1.0 / ((1.0 + n) * (1.0 + n)),
                },
                ModelKind::E => PostCountMoments {
                    mean_after: n,
                    vacuum_after: 1.0 / (1.0 + n),
                },
            }
        }
        FieldKind::Coherent => {
            let n = positive_mean(nbar)?;
            match kind {
                ModelKind::Sd => PostCountMoments {
                    mean_after: n,
                    vacuum_after: (-n).exp(),
                },
                ModelKind::E => PostCountMoments {
                    mean_after: n / (-(-n).exp_m1()) - 1.0,
                    vacuum_after: n / n.exp_m1(),
                },
            }
        }
    };
    Ok(entry)
}

/// Closed-form count rate, conditional rate and g² for coupling γ.
///
/// For the E model the conditional rate of a Fock state is γ only when a
/// photon remains after the first count; |1⟩ conditions to vacuum, so its
/// conditional rate and g² are zero.
pub fn table2_oracle(kind: ModelKind, field: FieldKind, nbar: f64, gamma: f64) -> Result<CountingRates> {
    let (rate, conditional_rate) = match field {
        FieldKind::Fock => {
            let m = fock_level(nbar)?;
            match kind {
                ModelKind::Sd => (gamma * nbar, gamma * (nbar - 1.0)),
                ModelKind::E => (gamma, if m >= 2 { gamma } else { 0.0 }),
            }
        }
        FieldKind::Thermal => {
            let n = positive_mean(nbar)?;
            match kind {
                ModelKind::Sd => (gamma * n, 2.0 * gamma * n),
                ModelKind::E => (gamma * n / (1.0 + n), gamma * n / (1.0 + n)),
            }
        }
        FieldKind::Coherent => {
            let n = positive_mean(nbar)?;
            match kind {
                ModelKind::Sd => (gamma * n, gamma * n),
                ModelKind::E => (gamma * -(-n).exp_m1(), gamma * (1.0 - n / n.exp_m1())),
            }
        }
    };
    let g2 = match (kind, field) {
        (ModelKind::Sd, FieldKind::Fock) => (nbar - 1.0) / nbar,
        (ModelKind::Sd, FieldKind::Thermal) => 2.0,
        (ModelKind::Sd, FieldKind::Coherent) => 1.0,
        (ModelKind::E, FieldKind::Fock) => conditional_rate / rate,
        (ModelKind::E, FieldKind::Thermal) => 1.0,
        (ModelKind::E, FieldKind::Coherent) => {
            let e = nbar.exp();
            (e - (nbar + 1.0)) / (e + 1.0 / e - 2.0)
        }
    };
    Ok(CountingRates { rate, conditional_rate, g2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::*;
    use nalgebra::DVector;

    fn dim(d: usize) -> FockDim {
        FockDim::new(d).unwrap()
    }

    fn sd() -> JumpModel {
        JumpModel::sd(1.0).unwrap()
    }

    fn em() -> JumpModel {
        JumpModel::e(1.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 { a.abs() } else { ((a - b) / b).abs() }
    }

    #[test]
    fn gamma_validation() {
        assert!(JumpModel::sd(0.0).is_err());
        assert!(JumpModel::e(-1.0).is_err());
        assert!(JumpModel::e(f64::NAN).is_err());
        assert!(JumpModel::sd(f64::INFINITY).is_err());
    }

    #[test]
    fn one_count_on_vacuum_and_fock() {
        let vac = make_fock(0, dim(4)).unwrap();
        assert_eq!(max_norm(one_count_map(&sd(), &vac).matrix()), 0.0);
        assert_eq!(one_count_rate(&sd(), &vac), 0.0);
        assert_eq!(one_count_rate(&em(), &vac), 0.0);

        let one = make_fock(1, dim(4)).unwrap();
        let j = one_count_map(&sd(), &one);
        assert_eq!(j.trace(), 1.0);
        assert_eq!(j.matrix()[(0, 0)], C64::new(1.0, 0.0));

        let g = JumpModel::sd(2.5).unwrap();
        assert!((one_count_rate(&g, &make_fock(3, dim(8)).unwrap()) - 7.5).abs() < 1e-15);
    }

    #[test]
    fn e_model_thermal_rate() {
        let th = make_thermal(1.0, dim(64), DEFAULT_TAIL_TOL).unwrap();
        assert!((one_count_map(&em(), &th).trace() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn superposition_rates() {
        let s = make_superposition(&[(0, C64::new(1.0, 0.0)), (100, C64::new(1.0, 0.0))], dim(128)).unwrap();
        assert!((one_count_rate(&em(), &s) - 0.5).abs() < 1e-12);
        assert!((one_count_rate(&sd(), &s) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn one_count_map_matches_operator_product() {
        let d = dim(20);
        let rho = make_coherent(C64::new(0.7, 0.4), d, DEFAULT_TAIL_TOL).unwrap();
        let rho = DensityMatrix::from_matrix(
            (rho.matrix() + make_thermal(0.8, d, 1e-3).unwrap().matrix()).scale(0.5),
        )
        .unwrap();
        for model in [JumpModel::sd(1.3).unwrap(), JumpModel::e(0.7).unwrap()] {
            let a = model.lowering_operator(d);
            let direct = (&a * rho.matrix() * a.adjoint()).scale(model.gamma());
            let fast = one_count_map(&model, &rho);
            assert!(max_norm(&(direct - fast.matrix())) < 1e-15);
            assert!((fast.trace() - one_count_rate(&model, &rho)).abs() < 1e-12);
        }
    }

    #[test]
    fn post_one_count_examples() {
        let d = dim(128);
        let th = make_thermal(1.5, d, DEFAULT_TAIL_TOL).unwrap();
        let after = post_one_count(&sd(), &th).unwrap();
        assert!(rel(mean_photon(&after), 3.0) < 1e-9);

        let coh = make_coherent(C64::new(1.5, 0.0), d, DEFAULT_TAIL_TOL).unwrap();
        let after = post_one_count(&sd(), &coh).unwrap();
        assert!(rel(mean_photon(&after), 2.25) < 1e-9);

        let th2 = make_thermal(2.0, d, DEFAULT_TAIL_TOL).unwrap();
        let after = post_one_count(&em(), &th2).unwrap();
        assert!(rel(after.vacuum_prob(), 1.0 / 3.0) < 1e-9);

        let one = make_fock(1, d).unwrap();
        assert_eq!(post_one_count(&sd(), &one).unwrap().vacuum_prob(), 1.0);
    }

    #[test]
    fn conditioning_on_vacuum_is_an_error() {
        let vac = make_fock(0, dim(4)).unwrap();
        assert!(matches!(post_one_count(&sd(), &vac), Err(Error::ZeroProbabilityEvent { .. })));
        assert!(matches!(post_one_count(&em(), &vac), Err(Error::ZeroProbabilityEvent { .. })));
    }

    #[test]
    fn post_one_count_diagonal_formulas() {
        let d = dim(40);
        let th = make_thermal(0.9, d, DEFAULT_TAIL_TOL).unwrap();
        let nbar = mean_photon(&th);
        let sd_after = post_one_count(&sd(), &th).unwrap();
        let e_after = post_one_count(&em(), &th).unwrap();
        for n in 0..d.get() - 1 {
            let expect_sd = (n + 1) as f64 * th.prob(n + 1) / nbar;
            let expect_e = th.prob(n + 1) / (1.0 - th.prob(0));
            assert!((sd_after.prob(n) - expect_sd).abs() < 1e-15);
            assert!((e_after.prob(n) - expect_e).abs() < 1e-15);
        }
    }

    #[test]
    fn no_count_identity_at_zero() {
        let rho = make_coherent(C64::new(0.5, 0.5), dim(16), DEFAULT_TAIL_TOL).unwrap();
        for model in [sd(), em()] {
            let out = no_count_map(&model, &rho, 0.0).unwrap();
            assert_eq!(out.matrix(), rho.matrix());
            assert_eq!(post_no_count(&model, &rho, 0.0).unwrap().matrix(), rho.matrix());
        }
        assert_eq!(no_count_map(&sd(), &rho, -1.0), Err(Error::NegativeInterval(-1.0)));
        assert!(no_count_probability(&em(), &rho, -0.5).is_err());
    }

    #[test]
    fn no_count_weights_fock() {
        let tau = 0.37;
        let m = 3;
        let f = make_fock(m, dim(8)).unwrap();
        let w = no_count_map(&sd(), &f, tau).unwrap().trace();
        assert!((w - (-(m as f64) * tau).exp()).abs() < 1e-15);
        let post = post_no_count(&sd(), &f, tau).unwrap();
        assert!(max_norm(&(post.matrix() - f.matrix())) < 1e-15);
    }

    #[test]
    fn e_model_no_count_structure() {
        let d = dim(24);
        let gamma = 0.8;
        let omega = 2.1;
        let tau = 0.6;
        let model = JumpModel::e(gamma).unwrap().with_frequency(omega).unwrap();
        let rho = make_coherent(C64::new(1.0, 0.3), d, DEFAULT_TAIL_TOL).unwrap();
        let out = no_count_map(&model, &rho, tau).unwrap();
        let src = rho.matrix();
        for i in 0..d.get() {
            for j in 0..d.get() {
                let phase = C64::new(0.0, -omega * (i as f64 - j as f64) * tau).exp();
                let decay = match (i, j) {
                    (0, 0) => 1.0,
                    (0, _) | (_, 0) => (-gamma * tau / 2.0).exp(),
                    _ => (-gamma * tau).exp(),
                };
                let expect = src[(i, j)] * phase * decay;
                assert!((out.matrix()[(i, j)] - expect).norm() < 1e-15);
            }
        }
        let p0 = rho.vacuum_prob();
        let s = no_count_probability(&model, &rho, tau).unwrap();
        assert!((s - (p0 + (1.0 - p0) * (-gamma * tau).exp())).abs() < 1e-14);
        let post = post_no_count(&model, &rho, tau).unwrap();
        assert!((post.vacuum_prob() - p0 / s).abs() < 1e-14);
        assert!(post.vacuum_prob() >= p0);
    }

    #[test]
    fn sd_no_count_phases() {
        let d = dim(6);
        let model = JumpModel::sd(1.2).unwrap().with_frequency(3.0).unwrap();
        let rho = make_superposition(&[(1, C64::new(1.0, 0.0)), (4, C64::new(0.0, 1.0))], d).unwrap();
        let tau = 0.25;
        let out = no_count_map(&model, &rho, tau).unwrap();
        let expect = rho.matrix()[(1, 4)]
            * C64::new(-1.2 * (1.0 + 4.0) * tau / 2.0, -3.0 * (1.0 - 4.0) * tau).exp();
        assert!((out.matrix()[(1, 4)] - expect).norm() < 1e-15);
    }

    #[test]
    fn sd_no_count_keeps_coherent_states_coherent() {
        let d = dim(48);
        let gamma = 0.9;
        let tau = 0.7;
        let alpha = C64::new(1.1, -0.6);
        let rho = make_coherent(alpha, d, DEFAULT_TAIL_TOL).unwrap();
        let post = post_no_count(&JumpModel::sd(gamma).unwrap(), &rho, tau).unwrap();
        let (target, _) = coherent_amplitudes(alpha * (-gamma * tau / 2.0).exp(), d);
        let target: DVector<C64> = target.normalize();
        assert!(post.fidelity_with_pure(&target) >= 1.0 - 1e-9);
    }

    #[test]
    fn survival_on_vacuum_is_one() {
        let vac = make_fock(0, dim(5)).unwrap();
        for tau in [0.0, 0.5, 10.0] {
            assert_eq!(no_count_probability(&sd(), &vac, tau).unwrap(), 1.0);
            assert_eq!(no_count_probability(&em(), &vac, tau).unwrap(), 1.0);
        }
    }

    #[test]
    fn sd_thermal_survival_series() {
        let th = make_thermal(1.0, dim(64), DEFAULT_TAIL_TOL).unwrap();
        let tau: f64 = 0.4;
        // geometric series: Σ (1−q)(q e^{−τ})ⁿ = (1−q)/(1 − q e^{−τ})
        let q = 0.5;
        let closed = (1.0 - q) / (1.0 - q * (-tau).exp());
        assert!((no_count_probability(&sd(), &th, tau).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn table_oracles() {
        let t = table1_oracle(ModelKind::Sd, FieldKind::Thermal, 1.7).unwrap();
        assert_eq!(t.mean_after, 3.4);
        let t = table1_oracle(ModelKind::E, FieldKind::Thermal, 1.7).unwrap();
        assert_eq!(t.mean_after, 1.7);
        let t = table1_oracle(ModelKind::Sd, FieldKind::Coherent, 1.0).unwrap();
        assert!((t.vacuum_after - (-1.0f64).exp()).abs() < 1e-16);
        assert!(table1_oracle(ModelKind::Sd, FieldKind::Fock, 0.0).is_err());
        assert!(table1_oracle(ModelKind::Sd, FieldKind::Fock, 1.5).is_err());

        let r = table2_oracle(ModelKind::Sd, FieldKind::Thermal, 0.3, 1.0).unwrap();
        assert_eq!(r.g2, 2.0);
        let r = table2_oracle(ModelKind::Sd, FieldKind::Fock, 4.0, 1.0).unwrap();
        assert_eq!(r.g2, 0.75);
        let e = std::f64::consts::E;
        let r = table2_oracle(ModelKind::E, FieldKind::Coherent, 1.0, 1.0).unwrap();
        assert!((r.g2 - (e - 2.0) / (e + 1.0 / e - 2.0)).abs() < 1e-15);
        assert!((r.g2 - r.conditional_rate / r.rate).abs() < 1e-14);
        let r = table2_oracle(ModelKind::E, FieldKind::Fock, 3.0, 2.0).unwrap();
        assert_eq!((r.rate, r.conditional_rate, r.g2), (2.0, 2.0, 1.0));
        assert!(table2_oracle(ModelKind::E, FieldKind::Thermal, 0.0, 1.0).is_err());
    }
}
