//! Stochastic unraveling of the counting process.
//!
//! A trajectory alternates no-count evolution and one-count jumps. Waiting
//! times are drawn by inverting the survival function
//! `S(τ) = Σ_n e^{−κ_n τ} p_n` exactly, so there is no time-step bias.
//! Every trajectory owns an independent ChaCha8 stream selected by
//! `(seed, stream_index)`, and ensembles are reduced in fixed-size chunks in
//! stream order, which makes results identical for any number of threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolution::TimeGrid;
use crate::fockspace::DensityMatrix;
use crate::jump_models::{one_count_rate, post_no_count, post_one_count, JumpModel};

/// Trajectories per work unit of the ensemble reducer.
const CHUNK: usize = 64;

/// Coincidence count below which a g² estimate is flagged as unreliable.
pub const MIN_COINCIDENCES: u64 = 100;

/// Independent random stream for one trajectory.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        Self {
            seed,
            stream_index,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }
}

/// `Σ_n e^{−κ_n τ} p_n` and its τ-derivative.
fn survival_and_slope(kappa: &[f64], p: &[f64], tau: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    for (&k, &pn) in kappa.iter().zip(p) {
        if pn == 0.0 {
            continue;
        }
        let w = (-k * tau).exp() * pn;
        s += w;
        ds -= k * w;
    }
    (s, ds)
}

/// Time to the next count, or `None` when no count occurs within `t_max`.
///
/// `t_max` may be `f64::INFINITY`, in which case `None` means the record has
/// ended for good. Roots are located to `1e−12·t_max` (or relative to the
/// bracket when the horizon is infinite).
pub fn sample_waiting_time(model: &JumpModel, rho: &DensityMatrix, u: f64, t_max: f64) -> Option<f64> {
    assert!(u > 0.0 && u < 1.0, "u must lie in (0, 1)");
    assert!(t_max > 0.0, "t_max must be positive");
    let d = rho.dim().get();
    let kappa: Vec<f64> = (0..d).map(|n| model.decay_rate(n)).collect();
    let p: Vec<f64> = (0..d).map(|n| rho.prob(n)).collect();

    let total: f64 = p.iter().sum();
    let stuck: f64 = p.iter().zip(&kappa).filter(|(_, &k)| k == 0.0).map(|(pn, _)| pn).sum();
    let p_stuck = stuck / total;
    if u <= p_stuck {
        return None;
    }

    let mut active = kappa.iter().zip(&p).filter(|(&k, &pn)| k > 0.0 && pn > 0.0);
    let first = active.next().map(|(&k, _)| k);
    let single_rate = first.filter(|&k0| active.all(|(&k, _)| k == k0));
    if let Some(k) = single_rate {
        let tau = -((u - p_stuck) / (1.0 - p_stuck)).ln() / k;
        return (tau <= t_max).then_some(tau);
    }

    let f = |tau: f64| {
        let (s, ds) = survival_and_slope(&kappa, &p, tau);
        (s / total - u, ds / total)
    };
    let (mut lo, mut hi) = (0.0, t_max);
    if t_max.is_finite() {
        if f(t_max).0 >= 0.0 {
            return None;
        }
    } else {
        let k_max = kappa.iter().cloned().fold(0.0, f64::max);
        hi = 1.0 / k_max;
        while f(hi).0 >= 0.0 {
            lo = hi;
            hi *= 2.0;
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let tol = 1e-12 * if t_max.is_finite() { t_max } else { hi };
        let (g, dg) = f(x);
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if g == 0.0 || hi - lo <= tol {
            return Some(x);
        }
        let newton = if dg < 0.0 { x - g / dg } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= tol {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Conditioned populations after `tau` without a count: `p_n ∝ e^{−κ_n τ} p_n`.
fn no_count_populations(model: &JumpModel, rho: &DensityMatrix, tau: f64) -> Vec<f64> {
    let d = rho.dim().get();
    let w: Vec<f64> = (0..d)
        .map(|n| (-model.decay_rate(n) * tau).exp() * rho.prob(n))
        .collect();
    let norm: f64 = w.iter().sum();
    w.into_iter().map(|x| x / norm).collect()
}

/// One realization of the counting process on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub stream_index: u64,
    /// Count times, strictly increasing, within the grid interval.
    pub jump_times: Vec<f64>,
    pub final_state: DensityMatrix,
    /// Conditioned photon-number distribution at each grid time.
    pub populations: Vec<Vec<f64>>,
    /// Conditioned mean photon number at each grid time.
    pub mean_photon: Vec<f64>,
    pub snapshots: Option<Vec<(f64, DensityMatrix)>>,
}

fn mean_of(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(n, x)| n as f64 * x).sum()
}

/// Simulates one trajectory over `grid`. With `keep_snapshots` the full
/// conditioned state is stored at every grid time.
pub fn run_trajectory(
    model: &JumpModel,
    rho0: &DensityMatrix,
    grid: TimeGrid,
    rng: &mut RngStream,
    keep_snapshots: bool,
) -> Result<TrajectoryRecord> {
    let times = grid.times();
    let mut populations = Vec::with_capacity(times.len());
    let mut mean_photon = Vec::with_capacity(times.len());
    let mut snapshots = keep_snapshots.then(|| Vec::with_capacity(times.len()));
    let mut jump_times = Vec::new();

    let mut rho = rho0.clone();
    let mut t = grid.t0();
    let mut next = 0;
    loop {
        let remaining = grid.t1() - t;
        let wait = if remaining > 0.0 {
            sample_waiting_time(model, &rho, rng.uniform(), remaining)
        } else {
            None
        };
        let t_jump = wait.map(|w| t + w).filter(|&tj| tj > t && tj <= grid.t1());
        while next < times.len() && t_jump.is_none_or(|tj| times[next] < tj) {
            let tau = times[next] - t;
            let p = no_count_populations(model, &rho, tau);
            mean_photon.push(mean_of(&p));
            populations.push(p);
            if let Some(s) = snapshots.as_mut() {
                s.push((times[next], post_no_count(model, &rho, tau)?));
            }
            next += 1;
        }
        match t_jump {
            Some(tj) => {
                let before = post_no_count(model, &rho, tj - t)?;
                rho = post_one_count(model, &before)?;
                jump_times.push(tj);
                t = tj;
            }
            None => {
                let final_state = post_no_count(model, &rho, grid.t1() - t)?;
                return Ok(TrajectoryRecord {
                    stream_index: rng.stream_index(),
                    jump_times,
                    final_state,
                    populations,
                    mean_photon,
                    snapshots,
                });
            }
        }
    }
}

/// Count times of one trajectory over `[0, horizon]`, or until the field is
/// exhausted when `horizon` is `None`.
pub fn sample_jump_times(
    model: &JumpModel,
    rho0: &DensityMatrix,
    horizon: Option<f64>,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let end = horizon.unwrap_or(f64::INFINITY);
    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut jumps = Vec::new();
    while end - t > 0.0 {
        match sample_waiting_time(model, &rho, rng.uniform(), end - t) {
            Some(w) if t + w > t && t + w <= end => {
                let before = post_no_count(model, &rho, w)?;
                rho = post_one_count(model, &before)?;
                t += w;
                jumps.push(t);
            }
            _ => break,
        }
    }
    Ok(jumps)
}

/// Ensemble averages of the conditioned observables.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    pub mean_photon: Vec<f64>,
    pub mean_photon_se: Vec<f64>,
    /// `p_n[i][n]` at grid time `i`.
    pub p_n: Vec<Vec<f64>>,
    pub p_n_se: Vec<Vec<f64>>,
    /// Fraction of trajectories with each total number of counts.
    pub count_histogram: BTreeMap<usize, f64>,
    /// Time from the grid start to the first count, per trajectory in stream
    /// order.
    pub first_jump_times: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
struct Partial {
    n: usize,
    mean_sum: Vec<f64>,
    mean_sq: Vec<f64>,
    p_sum: Vec<Vec<f64>>,
    p_sq: Vec<Vec<f64>>,
    counts: BTreeMap<usize, usize>,
    first_jumps: Vec<Option<f64>>,
}

impl Partial {
    fn new(points: usize, dim: usize) -> Self {
        Self {
            n: 0,
            mean_sum: vec![0.0; points],
            mean_sq: vec![0.0; points],
            p_sum: vec![vec![0.0; dim]; points],
            p_sq: vec![vec![0.0; dim]; points],
            counts: BTreeMap::new(),
            first_jumps: Vec::new(),
        }
    }

    fn add(&mut self, rec: &TrajectoryRecord, t0: f64) {
        self.n += 1;
        for (i, &m) in rec.mean_photon.iter().enumerate() {
            self.mean_sum[i] += m;
            self.mean_sq[i] += m * m;
            for (n, &p) in rec.populations[i].iter().enumerate() {
                self.p_sum[i][n] += p;
                self.p_sq[i][n] += p * p;
            }
        }
        *self.counts.entry(rec.jump_times.len()).or_insert(0) += 1;
        self.first_jumps.push(rec.jump_times.first().map(|t| t - t0));
    }

    fn merge(&mut self, other: Partial) {
        self.n += other.n;
        for i in 0..self.mean_sum.len() {
            self.mean_sum[i] += other.mean_sum[i];
            self.mean_sq[i] += other.mean_sq[i];
            for n in 0..self.p_sum[i].len() {
                self.p_sum[i][n] += other.p_sum[i][n];
                self.p_sq[i][n] += other.p_sq[i][n];
            }
        }
        for (k, c) in other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
        self.first_jumps.extend(other.first_jumps);
    }
}

fn mean_and_se(sum: f64, sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sq - sum * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Runs `n_traj` trajectories with streams `0..n_traj` of `seed`.
pub fn ensemble(
    model: &JumpModel,
    rho0: &DensityMatrix,
    grid: TimeGrid,
    n_traj: usize,
    seed: u64,
) -> Result<EnsembleStats> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    let points = grid.len();
    let dim = rho0.dim().get();
    let chunks = n_traj.div_ceil(CHUNK);
    let partials: Vec<Result<Partial>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial::new(points, dim);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(n_traj) {
                let mut rng = RngStream::new(seed, idx as u64);
                let rec = run_trajectory(model, rho0, grid, &mut rng, false)?;
                part.add(&rec, grid.t0());
            }
            Ok(part)
        })
        .collect();

    let mut total = Partial::new(points, dim);
    for p in partials {
        total.merge(p?);
    }

    let mut mean_photon = Vec::with_capacity(points);
    let mut mean_photon_se = Vec::with_capacity(points);
    let mut p_n = Vec::with_capacity(points);
    let mut p_n_se = Vec::with_capacity(points);
    for i in 0..points {
        let (m, se) = mean_and_se(total.mean_sum[i], total.mean_sq[i], total.n);
        mean_photon.push(m);
        mean_photon_se.push(se);
        let (ps, pse): (Vec<f64>, Vec<f64>) = (0..dim)
            .map(|n| mean_and_se(total.p_sum[i][n], total.p_sq[i][n], total.n))
            .unzip();
        p_n.push(ps);
        p_n_se.push(pse);
    }
    let count_histogram = total
        .counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total.n as f64))
        .collect();

    Ok(EnsembleStats {
        n_traj,
        seed,
        times: grid.times(),
        mean_photon,
        mean_photon_se,
        p_n,
        p_n_se,
        count_histogram,
        first_jump_times: total.first_jumps,
    })
}

/// Agreement of ensemble means with a deterministic reference curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// Fraction of grid points with |ensemble − reference| ≤ 3·SE.
    pub fraction_within: f64,
    /// Largest |ensemble − reference| / SE over the grid.
    pub max_z: f64,
    pub pass: bool,
}

/// Absolute allowance added to 3·SE.
pub const CONSISTENCY_FLOOR: f64 = 1e-9;

/// Required fraction of grid points within 3·SE.
pub const CONSISTENCY_FRACTION: f64 = 0.95;

/// Compares ensemble means with `reference` point by point.
///
/// Where every trajectory carries the same value the sample variance is
/// zero and says nothing about the spread; there the allowance is the
/// resolution of an N-trajectory mean, `max|reference| / N`.
pub fn unraveling_consistency(stats: &EnsembleStats, reference: &[f64]) -> ConsistencyReport {
    assert_eq!(stats.mean_photon.len(), reference.len());
    let scale = reference.iter().fold(0.0, |a: f64, r| a.max(r.abs()));
    let resolution = (scale / stats.n_traj as f64).max(CONSISTENCY_FLOOR);
    let mut within = 0;
    let mut max_z: f64 = 0.0;
    for ((m, se), r) in stats.mean_photon.iter().zip(&stats.mean_photon_se).zip(reference) {
        let dev = (m - r).abs();
        let allowance = if *se > 0.0 { 3.0 * se + CONSISTENCY_FLOOR } else { resolution };
        if dev <= allowance {
            within += 1;
        }
        if *se > 0.0 {
            max_z = max_z.max(dev / se);
        }
    }
    let fraction_within = within as f64 / reference.len() as f64;
    ConsistencyReport {
        fraction_within,
        max_z,
        pass: fraction_within >= CONSISTENCY_FRACTION,
    }
}

/// Kolmogorov–Smirnov comparison of first-count times with `1 − S(τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KsReport {
    pub statistic: f64,
    pub critical_1pct: f64,
    pub n: usize,
    pub pass: bool,
}

/// KS statistic of the first-count times against the analytic CDF
/// `1 − Σ e^{−κ_n τ} p_n`, evaluated on `[0, horizon]`. Trajectories
/// without a count (`None`) are censored at the horizon.
pub fn ks_first_jump(model: &JumpModel, rho0: &DensityMatrix, first: &[Option<f64>], horizon: f64) -> KsReport {
    let d = rho0.dim().get();
    let kappa: Vec<f64> = (0..d).map(|n| model.decay_rate(n)).collect();
    let p: Vec<f64> = (0..d).map(|n| rho0.prob(n)).collect();
    let cdf = |tau: f64| 1.0 - survival_and_slope(&kappa, &p, tau).0;

    let mut obs: Vec<f64> = first.iter().flatten().copied().filter(|&t| t <= horizon).collect();
    obs.sort_by(f64::total_cmp);
    let n = first.len();
    let nf = n as f64;
    let mut stat: f64 = 0.0;
    for (i, &t) in obs.iter().enumerate() {
        let f = cdf(t);
        stat = stat.max((f - i as f64 / nf).abs()).max(((i + 1) as f64 / nf - f).abs());
    }
    stat = stat.max((cdf(horizon) - obs.len() as f64 / nf).abs());
    let critical_1pct = 1.628 / nf.sqrt();
    KsReport {
        statistic: stat,
        critical_1pct,
        n,
        pass: stat < critical_1pct,
    }
}

/// Monte Carlo estimate of the coincident-time second-order coherence.
#[derive(Clone, Debug, PartialEq)]
pub struct G2Estimate {
    pub g2: f64,
    pub se: f64,
    pub window: f64,
    pub n_traj: usize,
    pub total_counts: u64,
    /// Pairs of counts closer than the window within one trajectory.
    pub coincidences: u64,
    /// Pairs closer than the window drawn from different trajectories.
    pub accidental_pairs: u64,
    pub low_statistics: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McG2Options {
    pub window: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Observation time per trajectory; `None` follows each trajectory until
    /// the field is exhausted.
    pub duration: Option<f64>,
}

/// Count records for streams `0..n_traj`, in stream order.
pub fn jump_records(
    model: &JumpModel,
    rho0: &DensityMatrix,
    duration: Option<f64>,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..n_traj)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| sample_jump_times(model, rho0, duration, &mut RngStream::new(seed, i as u64)))
        .collect()
}

fn pairs_within(sorted: &[f64], window: f64) -> u64 {
    let mut j = 0;
    let mut total = 0u64;
    for i in 0..sorted.len() {
        while sorted[i] - sorted[j] >= window {
            j += 1;
        }
        total += (i - j) as u64;
    }
    total
}

/// g² from count records: same-trajectory pairs closer than `window`,
/// normalized by the cross-trajectory (accidental) pairs at the same
/// separation, `g² = P·(N−1)/X`.
pub fn g2_from_records(records: &[Vec<f64>], window: f64) -> Result<G2Estimate> {
    if !(window > 0.0) {
        return Err(Error::InvalidParameter(format!("window must be positive, got {window}")));
    }
    let n = records.len();
    if n < 2 {
        return Err(Error::InvalidParameter("g2 estimation needs at least 2 trajectories".into()));
    }
    let coincidences: u64 = records.iter().map(|r| pairs_within(r, window)).sum();
    let mut pooled: Vec<f64> = records.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let accidental_pairs = pairs_within(&pooled, window) - coincidences;
    if accidental_pairs == 0 {
        return Err(Error::InvalidParameter(
            "no accidental coincidences; increase n_traj or the window".into(),
        ));
    }
    let scale = (n - 1) as f64 / accidental_pairs as f64;
    let g2 = coincidences as f64 * scale;
    let se = if coincidences > 0 {
        g2 * (1.0 / coincidences as f64 + 1.0 / accidental_pairs as f64).sqrt()
    } else {
        scale
    };
    Ok(G2Estimate {
        g2,
        se,
        window,
        n_traj: n,
        total_counts: pooled.len() as u64,
        coincidences,
        accidental_pairs,
        low_statistics: coincidences < MIN_COINCIDENCES,
    })
}

/// Coincidence estimate of g² for trajectories started in `rho0`.
///
/// Pairs are pooled over the whole observation time, so the result is the
/// w²-weighted average of g²(t) over that time. Under SD it equals the
/// coincident-time value for any duration; under E it does only as the
/// duration shrinks.
pub fn mc_g2(model: &JumpModel, rho0: &DensityMatrix, opts: McG2Options) -> Result<G2Estimate> {
    let rate = one_count_rate(model, rho0);
    if !(rate > 0.0) {
        return Err(Error::ZeroProbabilityEvent { rate });
    }
    if let Some(d) = opts.duration {
        if !(d > 0.0) {
            return Err(Error::InvalidParameter(format!("duration must be positive, got {d}")));
        }
    }
    let records = jump_records(model, rho0, opts.duration, opts.n_traj, opts.seed)?;
    g2_from_records(&records, opts.window)
}
