//! Unconditioned evolution of the field under continuous counting.
//!
//! Averaging over all count records, either model generates the Lindblad
//! equation
//!
//! ```text
//! dρ/dt = −iω₀[n̂, ρ] + γ(ÂρÂ† − ½{Â†Â, ρ})
//! ```
//!
//! which is integrated here with classical RK4 and step-doubling error
//! control. For diagonal states the photon-number rate equations also have
//! exact solutions (binomial thinning for SD, a Poisson shift for E), exposed
//! through [`propagate_diagonal`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fockspace::{mean_photon, number_operator, DensityMatrix, PhotonDistribution, C64};
use crate::jump_models::{one_count_rate, post_one_count, JumpModel, ModelKind};

/// Uniform output grid t0, t0 + h, …, t1 with `steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !t0.is_finite() || !t1.is_finite() || !(t1 > t0) {
            return Err(Error::InvalidParameter(format!("time grid needs t1 > t0, got [{t0}, {t1}]")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn spacing(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t1
        } else {
            self.t0 + i as f64 * self.spacing()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }
}

/// Nonzero entries of an operator, for O(nnz·dim) products.
#[derive(Clone, Debug)]
struct SparseOperator {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOperator {
    fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    /// out += s · A m
    fn left_mul_acc(&self, m: &DMatrix<C64>, s: C64, out: &mut DMatrix<C64>) {
        let cols = m.ncols();
        for &(i, j, v) in &self.entries {
            let w = v * s;
            for k in 0..cols {
                out[(i, k)] += w * m[(j, k)];
            }
        }
    }

    /// out += s · m A†
    fn right_mul_adjoint_acc(&self, m: &DMatrix<C64>, s: C64, out: &mut DMatrix<C64>) {
        let rows = m.nrows();
        for &(i, j, v) in &self.entries {
            let w = v.conj() * s;
            for k in 0..rows {
                out[(k, i)] += m[(k, j)] * w;
            }
        }
    }

    fn left_mul(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        self.left_mul_acc(m, C64::new(1.0, 0.0), &mut out);
        out
    }
}

/// Lindblad generator `L ρ = Kρ + ρK† + γÂρÂ†` with
/// `K = −iω₀n̂ − (γ/2)Â†Â`, assembled from the model's Â matrix.
#[derive(Clone, Debug)]
pub struct Generator {
    dim: usize,
    gamma: f64,
    jump: SparseOperator,
    effective: SparseOperator,
}

impl Generator {
    pub fn new(model: &JumpModel, dim: crate::fockspace::FockDim) -> Self {
        let a = model.lowering_operator(dim);
        let ada = a.adjoint() * &a;
        let n = number_operator(dim);
        let k = n * C64::new(0.0, -model.omega0()) - ada.scale(0.5 * model.gamma());
        Self {
            dim: dim.get(),
            gamma: model.gamma(),
            jump: SparseOperator::from_dense(&a),
            effective: SparseOperator::from_dense(&k),
        }
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        assert_eq!(rho.nrows(), self.dim);
        let one = C64::new(1.0, 0.0);
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.effective.left_mul_acc(rho, one, &mut out);
        self.effective.right_mul_adjoint_acc(rho, one, &mut out);
        let a_rho = self.jump.left_mul(rho);
        self.jump
            .right_mul_adjoint_acc(&a_rho, C64::new(self.gamma, 0.0), &mut out);
        out
    }
}

/// dρ/dt for the given model.
pub fn lindblad_rhs(model: &JumpModel, rho: &DensityMatrix) -> DMatrix<C64> {
    Generator::new(model, rho.dim()).apply(rho.matrix())
}

/// Which states an evolution keeps at the output times.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateStorage {
    Full,
    Diagonal,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub storage: StateStorage,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            storage: StateStorage::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Snapshots {
    Full(Vec<DensityMatrix>),
    Diagonal(Vec<PhotonDistribution>),
    None,
}

/// Observables on the output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub mean_photon: Vec<f64>,
    pub vacuum_prob: Vec<f64>,
    pub trace: Vec<f64>,
    pub snapshots: Snapshots,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl EvolutionResult {
    fn with_capacity(n: usize, storage: StateStorage) -> Self {
        Self {
            times: Vec::with_capacity(n),
            mean_photon: Vec::with_capacity(n),
            vacuum_prob: Vec::with_capacity(n),
            trace: Vec::with_capacity(n),
            snapshots: match storage {
                StateStorage::Full => Snapshots::Full(Vec::with_capacity(n)),
                StateStorage::Diagonal => Snapshots::Diagonal(Vec::with_capacity(n)),
                StateStorage::None => Snapshots::None,
            },
            accepted_steps: 0,
            rejected_steps: 0,
        }
    }

    fn record(&mut self, t: f64, rho: &DMatrix<C64>) {
        let d = rho.nrows();
        let trace = rho.trace().re;
        let mean: f64 = (0..d).map(|n| n as f64 * rho[(n, n)].re).sum();
        self.times.push(t);
        self.trace.push(trace);
        self.mean_photon.push(mean / trace);
        self.vacuum_prob.push(rho[(0, 0)].re / trace);
        match &mut self.snapshots {
            Snapshots::Full(v) => v.push(DensityMatrix::from_parts(rho.unscale(trace), 0.0)),
            Snapshots::Diagonal(v) => v.push(PhotonDistribution::from_vec_unchecked(
                (0..d).map(|n| rho[(n, n)].re / trace).collect(),
            )),
            Snapshots::None => {}
        }
    }

    /// Photon-number distributions at the output times, when stored.
    pub fn distributions(&self) -> Option<Vec<PhotonDistribution>> {
        match &self.snapshots {
            Snapshots::Full(v) => Some(v.iter().map(|r| r.distribution()).collect()),
            Snapshots::Diagonal(v) => Some(v.clone()),
            Snapshots::None => None,
        }
    }
}

fn rk4_step(gen: &Generator, y: &DMatrix<C64>, h: f64) -> DMatrix<C64> {
    let k1 = gen.apply(y);
    let k2 = gen.apply(&(y + &k1 * C64::new(0.5 * h, 0.0)));
    let k3 = gen.apply(&(y + &k2 * C64::new(0.5 * h, 0.0)));
    let k4 = gen.apply(&(y + &k3 * C64::new(h, 0.0)));
    y + (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Integrates the master equation from `rho0` over `grid`.
///
/// Each step is taken once with length h and again as two halves; the
/// difference estimates the local error, the step is accepted when it is
/// below `atol + rtol·‖ρ‖_max`, and the accepted value is the Richardson
/// combination of the two.
pub fn evolve(
    model: &JumpModel,
    rho0: &DensityMatrix,
    grid: TimeGrid,
    opts: EvolveOptions,
) -> Result<EvolutionResult> {
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(Error::InvalidParameter("integrator tolerances must be positive".into()));
    }
    let gen = Generator::new(model, rho0.dim());
    let mut out = EvolutionResult::with_capacity(grid.len(), opts.storage);
    let mut y = rho0.matrix().clone();
    let mut t = grid.t0();
    out.record(t, &y);

    let d = rho0.dim().get();
    let fastest = (0..d)
        .map(|n| model.decay_rate(n) + model.omega0().abs() * n as f64)
        .fold(model.gamma(), f64::max);
    let mut h = (0.5 / fastest).min(grid.spacing());
    let h_min = 1e-14 * (grid.t1() - grid.t0()).max(1.0);

    for i in 1..grid.len() {
        let target = grid.time(i);
        while t < target {
            let last = target - t <= h * (1.0 + 1e-12);
            let step = if last { target - t } else { h };
            let full = rk4_step(&gen, &y, step);
            let half = rk4_step(&gen, &y, 0.5 * step);
            let two_half = rk4_step(&gen, &half, 0.5 * step);
            let diff = &two_half - &full;
            let scale = opts.atol + opts.rtol * max_abs(&two_half);
            let err = max_abs(&diff) / 15.0 / scale;
            if err <= 1.0 {
                y = two_half + diff * C64::new(1.0 / 15.0, 0.0);
                // The map is Hermiticity-preserving; remove rounding drift.
                y = (&y + y.adjoint()) * C64::new(0.5, 0.0);
                t = if last { target } else { t + step };
                out.accepted_steps += 1;
                let grow = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-0.2)).min(4.0) };
                if !last || grow < 1.0 {
                    h = step * grow.max(0.2);
                }
            } else {
                out.rejected_steps += 1;
                h = step * (0.9 * err.powf(-0.2)).max(0.1);
                if h < h_min {
                    return Err(Error::StepSizeUnderflow { time: t, step: h, error: err * scale });
                }
            }
        }
        out.record(target, &y);
    }
    Ok(out)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// Exact photon-number distribution after time t of unconditioned evolution.
///
/// SD: each photon independently survives with probability s = e^{−γt}, so
/// p_n(t) = Σ_k C(k, n) sⁿ(1−s)^{k−n} p_k. E: the levels n ≥ 1 shift down as
/// a Poisson process of rate γ, p_n(t) = Σ_j Pois(j; γt) p_{n+j}, with the
/// vacuum absorbing the remainder.
pub fn propagate_diagonal(model: &JumpModel, p: &PhotonDistribution, t: f64) -> Result<PhotonDistribution> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::NegativeInterval(t));
    }
    let probs = p.probs();
    let d = probs.len();
    if t == 0.0 {
        return Ok(p.clone());
    }
    let lf = ln_factorials(d);
    let gt = model.gamma() * t;
    let mut out = vec![0.0; d];
    match model.kind() {
        ModelKind::Sd => {
            let ln_s = -gt;
            let ln_1ms = (-(-gt).exp_m1()).ln();
            for (k, &pk) in probs.iter().enumerate() {
                if pk == 0.0 {
                    continue;
                }
                for (n, slot) in out.iter_mut().enumerate().take(k + 1) {
                    let ln_b = lf[k] - lf[n] - lf[k - n] + n as f64 * ln_s + (k - n) as f64 * ln_1ms;
                    *slot += pk * ln_b.exp();
                }
            }
        }
        ModelKind::E => {
            let pois: Vec<f64> = (0..d).map(|j| (-gt + j as f64 * gt.ln() - lf[j]).exp()).collect();
            for n in 1..d {
                out[n] = (0..d - n).map(|j| pois[j] * probs[n + j]).sum();
            }
            // P(N ≥ k) for N ~ Pois(γt), accumulated from the top to avoid
            // forming 1 − CDF.
            let mut vacuum = probs[0];
            for (k, &pk) in probs.iter().enumerate().skip(1) {
                let below: f64 = pois[..k].iter().sum();
                vacuum += pk * (1.0 - below).max(0.0);
            }
            out[0] = vacuum;
        }
    }
    Ok(PhotonDistribution::from_vec_unchecked(out))
}

/// Exact evolution of a diagonal initial state on a grid.
pub fn evolve_diagonal(model: &JumpModel, p0: &PhotonDistribution, grid: TimeGrid) -> Result<Vec<PhotonDistribution>> {
    grid.times()
        .into_iter()
        .map(|t| propagate_diagonal(model, p0, t - grid.t0()))
        .collect()
}

/// n̄(t) = n̄(0) e^{−γt}.
pub fn sd_mean_closed_form(nbar0: f64, gamma: f64, t: f64) -> f64 {
    nbar0 * (-gamma * t).exp()
}

/// Count rate immediately after a count, w(t⁺|t).
pub fn conditional_rate(model: &JumpModel, rho: &DensityMatrix) -> Result<f64> {
    let after = post_one_count(model, rho)?;
    Ok(one_count_rate(model, &after))
}

/// Coincident-time second-order coherence w(t⁺|t)/w(t).
pub fn g2_immediate(model: &JumpModel, rho: &DensityMatrix) -> Result<f64> {
    let rate = one_count_rate(model, rho);
    if !(rate > 0.0) {
        return Err(Error::ZeroProbabilityEvent { rate });
    }
    Ok(conditional_rate(model, rho)? / rate)
}

/// Running integral ∫_{x₀}^{x_i} f on a uniform grid, fourth-order accurate
/// at every node (composite Simpson, closed with a 3/8 panel on odd nodes).
pub fn cumulative_simpson(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    out[1] = if n >= 4 {
        h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    } else {
        h / 12.0 * (5.0 * f[0] + 8.0 * f[1] - f[2])
    };
    for i in 2..n {
        out[i] = if i % 2 == 0 {
            out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i])
        } else {
            out[i - 3] + 3.0 * h / 8.0 * (f[i - 3] + 3.0 * f[i - 2] + 3.0 * f[i - 1] + f[i])
        };
    }
    out
}

/// n̄(t) − [n̄(0) + γ∫₀ᵗ(p₀ − 1)] along an E-model evolution.
pub fn e_model_integral_residuals(result: &EvolutionResult, gamma: f64) -> Vec<f64> {
    let h = if result.times.len() > 1 { result.times[1] - result.times[0] } else { 0.0 };
    let integrand: Vec<f64> = result.vacuum_prob.iter().map(|p0| p0 - 1.0).collect();
    let integral = cumulative_simpson(h, &integrand);
    let n0 = result.mean_photon[0];
    result
        .mean_photon
        .iter()
        .zip(&integral)
        .map(|(n, i)| n - (n0 + gamma * i))
        .collect()
}

/// Mean photon number of each stored snapshot.
pub fn snapshot_means(result: &EvolutionResult) -> Option<Vec<f64>> {
    match &result.snapshots {
        Snapshots::Full(v) => Some(v.iter().map(mean_photon).collect()),
        Snapshots::Diagonal(v) => Some(v.iter().map(|p| p.mean()).collect()),
        Snapshots::None => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::*;
    use crate::jump_models::*;

    fn dim(d: usize) -> FockDim {
        FockDim::new(d).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        let g = TimeGrid::new(0.0, 3.0, 29).unwrap();
        assert_eq!(g.len(), 30);
        assert_eq!(g.times()[29], 3.0);
    }

    #[test]
    fn rhs_vanishes_on_vacuum() {
        let vac = make_fock(0, dim(5)).unwrap();
        for m in [JumpModel::sd(1.0).unwrap(), JumpModel::e(1.0).unwrap()] {
            assert_eq!(max_norm(&lindblad_rhs(&m, &vac)), 0.0);
        }
    }

    #[test]
    fn rhs_diagonal_matches_rate_equations() {
        let d = dim(40);
        let gamma = 1.7;
        let th = make_thermal(0.8, d, DEFAULT_TAIL_TOL).unwrap();
        let p: Vec<f64> = (0..40).map(|n| th.prob(n)).collect();
        let pn = |n: usize| if n < 40 { p[n] } else { 0.0 };

        let sd = lindblad_rhs(&JumpModel::sd(gamma).unwrap(), &th);
        let e = lindblad_rhs(&JumpModel::e(gamma).unwrap(), &th);
        for n in 0..40 {
            let expect_sd = gamma * ((n + 1) as f64 * pn(n + 1) - n as f64 * pn(n));
            let expect_e = if n == 0 { gamma * pn(1) } else { gamma * (pn(n + 1) - pn(n)) };
            assert!((sd[(n, n)].re - expect_sd).abs() < 1e-14);
            assert!((e[(n, n)].re - expect_e).abs() < 1e-14);
        }
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let d = dim(24);
        let rho = make_coherent(C64::new(1.1, -0.4), d, DEFAULT_TAIL_TOL).unwrap();
        for m in [
            JumpModel::sd(0.6).unwrap().with_frequency(1.3).unwrap(),
            JumpModel::e(2.0).unwrap().with_frequency(-0.4).unwrap(),
        ] {
            let r = lindblad_rhs(&m, &rho);
            assert!(r.trace().norm() < 1e-14);
            assert!(max_norm(&(r.adjoint() - &r)) < 1e-14);
            // dense reference
            let a = m.lowering_operator(d);
            let ada = a.adjoint() * &a;
            let n = number_operator(d);
            let x = rho.matrix();
            let reference = (&n * x - x * &n) * C64::new(0.0, -m.omega0())
                + (&a * x * a.adjoint()).scale(m.gamma())
                - (&ada * x + x * &ada).scale(0.5 * m.gamma());
            assert!(max_norm(&(r - reference)) < 1e-14);
        }
    }

    #[test]
    fn sd_single_photon_decay() {
        let gamma = 0.8;
        let model = JumpModel::sd(gamma).unwrap();
        let grid = TimeGrid::new(0.0, 4.0, 40).unwrap();
        let res = evolve(&model, &make_fock(1, dim(4)).unwrap(), grid, EvolveOptions::default()).unwrap();
        let dists = res.distributions().unwrap();
        for (t, p) in res.times.iter().zip(&dists) {
            let s = (-gamma * t).exp();
            assert!((p.probs()[1] - s).abs() < 1e-9);
            assert!((p.probs()[0] - (1.0 - s)).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_agrees_with_exact_diagonal_propagation() {
        let d = dim(48);
        let th = make_thermal(1.0, d, DEFAULT_TAIL_TOL).unwrap();
        let grid = TimeGrid::new(0.0, 3.0, 12).unwrap();
        for model in [JumpModel::sd(1.0).unwrap(), JumpModel::e(1.0).unwrap()] {
            let res = evolve(&model, &th, grid, EvolveOptions::default()).unwrap();
            let exact = evolve_diagonal(&model, &th.distribution(), grid).unwrap();
            for (num, ex) in res.distributions().unwrap().iter().zip(&exact) {
                for (a, b) in num.probs().iter().zip(ex.probs()) {
                    assert!((a - b).abs() < 1e-9, "{model:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn exact_diagonal_propagation_conserves_probability() {
        let p = make_thermal(2.0, dim(80), DEFAULT_TAIL_TOL).unwrap().distribution();
        for model in [JumpModel::sd(1.0).unwrap(), JumpModel::e(1.0).unwrap()] {
            for t in [0.0, 0.1, 1.0, 7.0] {
                let q = propagate_diagonal(&model, &p, t).unwrap();
                assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(q.probs().iter().all(|x| *x >= 0.0));
            }
        }
        let q = propagate_diagonal(&JumpModel::sd(1.0).unwrap(), &p, 1.0).unwrap();
        assert!((q.mean() - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_states_stay_diagonal() {
        let th = make_thermal(1.0, dim(48), DEFAULT_TAIL_TOL).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 8).unwrap();
        for model in [JumpModel::sd(1.0).unwrap(), JumpModel::e(1.0).unwrap()] {
            let res = evolve(&model, &th, grid, EvolveOptions::default()).unwrap();
            if let Snapshots::Full(states) = &res.snapshots {
                for s in states {
                    assert!(s.max_offdiagonal() <= 1e-12);
                }
            } else {
                panic!("expected full snapshots");
            }
        }
    }

    #[test]
    fn closed_form_mean() {
        assert_eq!(sd_mean_closed_form(3.0, 1.0, 0.0), 3.0);
        assert!((sd_mean_closed_form(3.0, 2.0, std::f64::consts::LN_2 / 2.0) - 1.5).abs() < 1e-15);
        assert_eq!(sd_mean_closed_form(0.0, 1.0, 5.0), 0.0);
    }

    #[test]
    fn conditional_rates_and_g2() {
        let d = dim(128);
        let sd = JumpModel::sd(1.0).unwrap();
        let em = JumpModel::e(1.0).unwrap();
        let th = make_thermal(1.5, d, DEFAULT_TAIL_TOL).unwrap();
        assert!((conditional_rate(&sd, &th).unwrap() - 3.0).abs() < 1e-9);
        assert!((g2_immediate(&sd, &th).unwrap() - 2.0).abs() < 1e-9);
        let coh = make_coherent(C64::new(1.2, 0.0), d, DEFAULT_TAIL_TOL).unwrap();
        assert!((g2_immediate(&sd, &coh).unwrap() - 1.0).abs() < 1e-9);
        let f3 = make_fock(3, d).unwrap();
        assert_eq!(conditional_rate(&em, &f3).unwrap(), 1.0);
        assert_eq!(conditional_rate(&sd, &make_fock(1, d).unwrap()).unwrap(), 0.0);
        for m in [2usize, 3, 5, 10] {
            let g2 = g2_immediate(&sd, &make_fock(m, d).unwrap()).unwrap();
            assert!((g2 - (m as f64 - 1.0) / m as f64).abs() < 1e-9);
            assert!(g2 < 1.0);
        }
        let n = 0.7_f64;
        let coh = make_coherent(C64::new(n.sqrt(), 0.0), d, DEFAULT_TAIL_TOL).unwrap();
        let expect = (n.exp() - (n + 1.0)) / (n.exp() + (-n).exp() - 2.0);
        assert!((g2_immediate(&em, &coh).unwrap() - expect).abs() < 1e-9);
        assert!(g2_immediate(&sd, &make_fock(0, d).unwrap()).is_err());
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let h = 0.1;
        let f: Vec<f64> = (0..12).map(|i| {
            let x = i as f64 * h;
            x * x * x - 2.0 * x + 1.0
        }).collect();
        let integral = cumulative_simpson(h, &f);
        for (i, v) in integral.iter().enumerate() {
            let x = i as f64 * h;
            let exact = x.powi(4) / 4.0 - x * x + x;
            assert!((v - exact).abs() < 1e-13, "node {i}: {v} vs {exact}");
        }
    }
}
