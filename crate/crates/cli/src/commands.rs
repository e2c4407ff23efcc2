use serde::Serialize;
use serde_json::{json, Value};

use photocount::evolution::{
    e_model_integral_residuals, evolve, g2_immediate, conditional_rate, sd_mean_closed_form, EvolveOptions,
    StateStorage,
};
use photocount::fockspace::mean_photon;
use photocount::jump_models::{one_count_rate, post_one_count, table1_oracle, table2_oracle};
use photocount::microderivation::{convergence_order, verify_superoperators, CouplingParams, JointPropagator};
use photocount::trajectories::{ensemble, ks_first_jump, mc_g2, unraveling_consistency, McG2Options};
use photocount::{FieldKind, JumpModel, ModelKind};

use crate::config::{build_state, FieldSpec, Observable, Validated};
use crate::error::CliError;
use crate::output::{fmt_f64, OutputDir};

pub const TABLE_TOL: f64 = 1e-9;
pub const CLOSED_FORM_TOL: f64 = 1e-6;
pub const INTEGRAL_TOL: f64 = 1e-5;
pub const MIN_ORDER: f64 = 2.9;
pub const LAMBDA_TOL: f64 = 1e-5;
/// Absolute allowance for curves that decay towards zero, matching the
/// integrator's absolute tolerance.
const ABS_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    NumericalFailure(String),
    StatisticalFailure(String),
}

pub struct Outcome {
    pub results: Value,
    pub verdict: Verdict,
    pub report: Vec<String>,
}

fn rel(value: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        value.abs()
    } else {
        ((value - expected) / expected).abs()
    }
}

fn f(x: f64) -> String {
    fmt_f64(x)
}

pub fn tables(v: &Validated, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let c = &v.config;
    let mut cases: Vec<(FieldKind, f64, FieldSpec)> = c
        .tables
        .fock_levels
        .iter()
        .map(|&m| (FieldKind::Fock, m as f64, FieldSpec::Fock { m }))
        .collect();
    for &nbar in &c.tables.nbar {
        cases.push((FieldKind::Thermal, nbar, FieldSpec::Thermal { nbar }));
    }
    for &nbar in &c.tables.nbar {
        cases.push((FieldKind::Coherent, nbar, FieldSpec::Coherent { nbar, phase: 0.0 }));
    }

    let mut rows = Vec::new();
    let mut worst_rel: f64 = 0.0;
    let mut worst_case = String::new();
    for kind in [ModelKind::Sd, ModelKind::E] {
        let model = JumpModel::new(kind, c.gamma)?;
        for (field, nbar, spec) in &cases {
            let rho = build_state(spec, v.dim, c.tail_tol)
                .map_err(|e| CliError::Config(format!("tables ({} n̄={nbar}): {e}", field.name())))?;
            let before = mean_photon(&rho);
            let after = post_one_count(&model, &rho)?;
            let rate = one_count_rate(&model, &rho);
            let cond = one_count_rate(&model, &after);
            let g2 = cond / rate;
            let t1 = table1_oracle(kind, *field, *nbar)?;
            let t2 = table2_oracle(kind, *field, *nbar, c.gamma)?;
            let pairs = [
                (mean_photon(&after), t1.mean_after),
                (after.vacuum_prob(), t1.vacuum_after),
                (rate, t2.rate),
                (cond, t2.conditional_rate),
                (g2, t2.g2),
            ];
            let abs_dev = pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let rel_dev = pairs.iter().map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
            if rel_dev > worst_rel || worst_case.is_empty() {
                worst_rel = worst_rel.max(rel_dev);
                worst_case = format!("{} {} n̄={nbar}", kind.name(), field.name());
            }
            let mut row = vec![kind.name().to_string(), field.name().to_string(), f(*nbar), f(before)];
            row.push(f(mean_photon(&after) / before));
            for (a, b) in pairs {
                row.push(f(a));
                row.push(f(b));
            }
            row.push(f(abs_dev));
            row.push(f(rel_dev));
            rows.push(row);
        }
    }
    out.csv(
        "tables.csv",
        &[
            "model",
            "field",
            "nbar",
            "mean_before",
            "mean_ratio_after_before",
            "mean_after",
            "mean_after_closed_form",
            "vacuum_after",
            "vacuum_after_closed_form",
            "rate_per_time",
            "rate_closed_form",
            "conditional_rate_per_time",
            "conditional_rate_closed_form",
            "g2",
            "g2_closed_form",
            "max_abs_dev",
            "max_rel_dev",
        ],
        &rows,
    )?;
    let pass = worst_rel <= TABLE_TOL;
    let verdict = if pass {
        Verdict::Pass
    } else {
        Verdict::NumericalFailure(format!("{worst_case}: relative deviation {worst_rel:.3e} > {TABLE_TOL:e}"))
    };
    Ok(Outcome {
        results: json!({
            "rows": rows.len(),
            "max_rel_dev": worst_rel,
            "tolerance": TABLE_TOL,
            "pass": pass,
        }),
        verdict,
        report: vec![format!("{} rows, max relative deviation {worst_rel:.3e}", rows.len())],
    })
}

pub fn evolve_cmd(v: &Validated, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let gamma = v.config.gamma;
    let want_p = v.wants(Observable::PhotonDistribution);
    let opts = EvolveOptions {
        storage: if want_p { StateStorage::Diagonal } else { StateStorage::None },
        ..EvolveOptions::default()
    };
    let res = evolve(&v.model, &v.state, v.grid, opts)?;
    let n0 = res.mean_photon[0];
    let t0 = res.times[0];

    let mut header = vec!["gamma_t", "mean_photon", "vacuum_prob", "trace_residual"];
    let extra: Vec<f64>;
    let mut worst: f64 = 0.0;
    let mut failed_at = None;
    let tolerance;
    match v.model.kind() {
        ModelKind::Sd => {
            header.push("mean_photon_closed_form");
            tolerance = CLOSED_FORM_TOL;
            extra = res.times.iter().map(|t| sd_mean_closed_form(n0, gamma, t - t0)).collect();
            for ((t, n), e) in res.times.iter().zip(&res.mean_photon).zip(&extra) {
                let dev = (n - e).abs();
                worst = worst.max(rel(*n, *e));
                if dev > CLOSED_FORM_TOL * e.abs() + ABS_FLOOR && failed_at.is_none() {
                    failed_at = Some(t * gamma);
                }
            }
        }
        ModelKind::E => {
            header.push("integral_identity_residual");
            tolerance = INTEGRAL_TOL;
            extra = e_model_integral_residuals(&res, gamma);
            for ((t, n), r) in res.times.iter().zip(&res.mean_photon).zip(&extra) {
                worst = worst.max(rel(n - r, *n));
                if r.abs() > INTEGRAL_TOL * n.abs() + ABS_FLOOR && failed_at.is_none() {
                    failed_at = Some(t * gamma);
                }
            }
        }
    }
    let rows: Vec<Vec<String>> = (0..res.times.len())
        .map(|i| {
            vec![
                f(res.times[i] * gamma),
                f(res.mean_photon[i]),
                f(res.vacuum_prob[i]),
                f(res.trace[i] - 1.0),
                f(extra[i]),
            ]
        })
        .collect();
    out.csv("evolve.csv", &header, &rows)?;
    if let Some(dists) = res.distributions() {
        write_distributions(out, &res.times, gamma, &dists.iter().map(|p| p.probs().to_vec()).collect::<Vec<_>>())?;
    }

    let check = header[4];
    let verdict = match failed_at {
        None => Verdict::Pass,
        Some(gt) => Verdict::NumericalFailure(format!("{check} exceeds tolerance {tolerance:e} at gamma_t = {gt}")),
    };
    let max_trace_residual = res.trace.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max);
    Ok(Outcome {
        results: json!({
            "check": check,
            "max_rel_dev": worst,
            "tolerance": tolerance,
            "max_trace_residual": max_trace_residual,
            "accepted_steps": res.accepted_steps,
            "rejected_steps": res.rejected_steps,
            "pass": failed_at.is_none(),
        }),
        verdict,
        report: vec![format!(
            "{} grid points, {check} max relative deviation {worst:.3e}",
            res.times.len()
        )],
    })
}

fn write_distributions(out: &mut OutputDir, times: &[f64], gamma: f64, p: &[Vec<f64>]) -> Result<(), CliError> {
    let d = p.first().map_or(0, |x| x.len());
    let names: Vec<String> = (0..d).map(|n| format!("p_{n}")).collect();
    let mut header = vec!["gamma_t"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = times
        .iter()
        .zip(p)
        .map(|(t, row)| std::iter::once(f(t * gamma)).chain(row.iter().map(|x| f(*x))).collect())
        .collect();
    out.csv("p_n.csv", &header, &rows)
}

pub fn trajectories(v: &Validated, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let c = &v.config;
    let gamma = c.gamma;
    if c.n_traj == 0 {
        return Err(CliError::Config("n_traj: must be at least 1 for trajectories".into()));
    }
    let stats = ensemble(&v.model, &v.state, v.grid, c.n_traj, c.seed)?;
    let reference = evolve(
        &v.model,
        &v.state,
        v.grid,
        EvolveOptions {
            storage: StateStorage::None,
            ..EvolveOptions::default()
        },
    )?;
    let consistency = unraveling_consistency(&stats, &reference.mean_photon);
    let horizon = v.grid.t1() - v.grid.t0();
    let ks = ks_first_jump(&v.model, &v.state, &stats.first_jump_times, horizon);

    let rows: Vec<Vec<String>> = (0..stats.times.len())
        .map(|i| {
            vec![
                f(stats.times[i] * gamma),
                f(stats.mean_photon[i]),
                f(stats.mean_photon_se[i]),
                f(reference.mean_photon[i]),
                f(stats.p_n[i][0]),
                f(stats.p_n_se[i][0]),
                f(reference.vacuum_prob[i]),
            ]
        })
        .collect();
    out.csv(
        "trajectories.csv",
        &[
            "gamma_t",
            "mean_photon",
            "mean_photon_se",
            "mean_photon_master_equation",
            "vacuum_prob",
            "vacuum_prob_se",
            "vacuum_prob_master_equation",
        ],
        &rows,
    )?;
    let hist_rows: Vec<Vec<String>> = stats
        .count_histogram
        .iter()
        .map(|(k, p)| vec![k.to_string(), f(*p)])
        .collect();
    out.csv("count_histogram.csv", &["counts", "frequency"], &hist_rows)?;
    if v.wants(Observable::PhotonDistribution) {
        write_distributions(out, &stats.times, gamma, &stats.p_n)?;
    }
    if v.wants(Observable::FirstJumpTimes) {
        let rows: Vec<Vec<String>> = stats
            .first_jump_times
            .iter()
            .enumerate()
            .map(|(i, t)| vec![i.to_string(), t.map(|t| f(t * gamma)).unwrap_or_default()])
            .collect();
        out.csv("first_jump_times.csv", &["stream_index", "gamma_t"], &rows)?;
    }

    let histogram: serde_json::Map<String, Value> =
        stats.count_histogram.iter().map(|(k, p)| (k.to_string(), json!(p))).collect();
    let mut failures = Vec::new();
    if !consistency.pass {
        failures.push(format!(
            "only {:.1}% of grid points within 3 SE of the master equation",
            100.0 * consistency.fraction_within
        ));
    }
    if !ks.pass {
        failures.push(format!(
            "first-count KS statistic {:.4} >= {:.4}",
            ks.statistic, ks.critical_1pct
        ));
    }
    let verdict = if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::StatisticalFailure(failures.join("; "))
    };
    Ok(Outcome {
        results: json!({
            "n_traj": stats.n_traj,
            "count_histogram": histogram,
            "unraveling_consistency": {
                "fraction_within_3se": consistency.fraction_within,
                "max_z": consistency.max_z,
                "pass": consistency.pass,
            },
            "first_count_ks": {
                "statistic": ks.statistic,
                "critical_1pct": ks.critical_1pct,
                "pass": ks.pass,
            },
        }),
        verdict,
        report: vec![
            format!(
                "{} trajectories, {:.1}% of grid points within 3 SE",
                stats.n_traj,
                100.0 * consistency.fraction_within
            ),
            format!("first-count KS {:.4} (1% critical {:.4})", ks.statistic, ks.critical_1pct),
        ],
    })
}

pub fn g2(v: &Validated, _out: &mut OutputDir) -> Result<Outcome, CliError> {
    let c = &v.config;
    let rate = one_count_rate(&v.model, &v.state);
    if !(rate > 0.0) {
        return Err(CliError::Config(
            "field: the initial state has zero count rate, so g2 is undefined (no photons can be detected)".into(),
        ));
    }
    let analytic = g2_immediate(&v.model, &v.state)?;
    let conditional = conditional_rate(&v.model, &v.state)?;
    let mut results = json!({
        "rate_per_time": rate,
        "conditional_rate_per_time": conditional,
        "g2_analytic": analytic,
    });
    let mut report = vec![format!("analytic g2 = {analytic:.6}")];
    let mut verdict = Verdict::Pass;
    if c.n_traj > 0 {
        let duration = c.g2.effective_duration(c.model);
        let opts = McG2Options {
            window: c.g2.window / c.gamma,
            n_traj: c.n_traj,
            seed: c.seed,
            duration: duration.map(|d| d / c.gamma),
        };
        let est = mc_g2(&v.model, &v.state, opts).map_err(|e| CliError::Statistical(e.to_string()))?;
        let z = if est.se > 0.0 { (est.g2 - analytic) / est.se } else { 0.0 };
        let pass = z.abs() <= 3.0;
        results["monte_carlo"] = json!({
            "g2": est.g2,
            "se": est.se,
            "z": z,
            "window_gamma_t": c.g2.window,
            "duration_gamma_t": duration,
            "n_traj": est.n_traj,
            "total_counts": est.total_counts,
            "coincidences": est.coincidences,
            "accidental_pairs": est.accidental_pairs,
            "low_statistics": est.low_statistics,
            "pass": pass,
        });
        report.push(format!(
            "Monte Carlo g2 = {:.4} ± {:.4} ({} coincidences{})",
            est.g2,
            est.se,
            est.coincidences,
            if est.low_statistics { ", low statistics" } else { "" }
        ));
        if !pass {
            verdict = Verdict::StatisticalFailure(format!(
                "Monte Carlo g2 {:.4} is {z:.2} standard errors from the analytic value {analytic:.4}",
                est.g2
            ));
        }
    }
    Ok(Outcome {
        results,
        verdict,
        report,
    })
}

pub fn derive_check(v: &Validated, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let d = &v.config.derive;
    let nbar = mean_photon(&v.state);
    let steps = [d.dt, d.dt / 2.0, d.dt / 4.0];
    let mut rows = Vec::new();
    let mut residuals = Vec::new();
    let mut worst_lambda: f64 = 0.0;
    let mut worst_taylor: f64 = 0.0;
    for &dt in &steps {
        let params = CouplingParams::new(d.omega, dt).map_err(|e| CliError::Config(format!("derive: {e}")))?;
        let exact = verify_superoperators(&v.state, params, JointPropagator::Exact)?;
        let taylor = verify_superoperators(&v.state, params, JointPropagator::Taylor)?;
        let lambda_nbar = taylor.absorption_rate * nbar;
        let lambda_dev = rel(taylor.excited_trace / dt, lambda_nbar);
        worst_lambda = worst_lambda.max(lambda_dev);
        worst_taylor = worst_taylor.max(taylor.max_residual());
        residuals.push(exact.max_residual());
        rows.push(vec![
            f(d.omega * dt),
            f(exact.one_count_residual),
            f(exact.no_count_residual),
            f(taylor.max_residual()),
            f(taylor.excited_trace / dt),
            f(lambda_nbar),
            f(lambda_dev),
        ]);
    }
    out.csv(
        "derive_check.csv",
        &[
            "omega_dt",
            "exact_one_count_residual",
            "exact_no_count_residual",
            "taylor_max_residual",
            "excited_trace_per_dt",
            "lambda_nbar",
            "lambda_rel_dev",
        ],
        &rows,
    )?;
    let all_zero = residuals.iter().all(|r| *r == 0.0);
    let order = (!all_zero).then(|| convergence_order(&steps, &residuals));
    let order_ok = order.is_none_or(|o| o >= MIN_ORDER);
    let lambda_ok = worst_lambda <= LAMBDA_TOL;
    let verdict = match (order_ok, lambda_ok) {
        (true, true) => Verdict::Pass,
        (false, _) => Verdict::NumericalFailure(format!(
            "fitted convergence order {:.3} < {MIN_ORDER}",
            order.unwrap_or(f64::NAN)
        )),
        (true, false) => Verdict::NumericalFailure(format!(
            "excited-block trace per dt deviates from lambda*nbar by {worst_lambda:.3e}"
        )),
    };
    let order_text = order.map_or_else(|| "n/a (all residuals zero)".to_string(), |o| format!("{o:.3}"));
    Ok(Outcome {
        results: json!({
            "convergence_order": order,
            "residuals_identically_zero": all_zero,
            "min_order": MIN_ORDER,
            "lambda_identification": {
                "max_rel_dev": worst_lambda,
                "tolerance": LAMBDA_TOL,
                "pass": lambda_ok,
            },
            "taylor_max_residual": worst_taylor,
            "pass": order_ok && lambda_ok,
        }),
        verdict,
        report: vec![
            format!("fitted convergence order {order_text}"),
            format!("lambda = Omega^2 dt identification: max relative deviation {worst_lambda:.3e}"),
        ],
    })
}
