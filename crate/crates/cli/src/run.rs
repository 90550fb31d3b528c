//! Command dispatch. Each command returns its CSV table and a JSON summary;
//! `passed` is false iff one of the command's checks failed.

use garchmix_core::coupling::CoupledState;
use garchmix_core::mixing::first_return_moment;
use garchmix_core::model::{drift_probe, probe_states};
use garchmix_core::replicate::replicate;
use garchmix_core::*;
use serde_json::{json, Value};

use crate::config::{Command, ConfigError, ModelConfig, RunConfig};
use crate::format::Csv;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Model(#[from] Error),
}

impl RunError {
    /// 2 for anything wrong with the input, 1 for failures during the run.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Model(e) => match e {
                Error::InvalidParameter(_)
                | Error::Shape { .. }
                | Error::InfeasibleDrift { .. }
                | Error::DriftConstruction(_)
                | Error::InfeasibleContraction { .. }
                | Error::MissingFloor
                | Error::Config(_) => 2,
                Error::Domain(_)
                | Error::ContractViolation(_)
                | Error::Inconsistent(_)
                | Error::InsufficientData(_) => 1,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: String,
    pub summary: Value,
    pub passed: bool,
}

#[derive(Default)]
struct Checks(Vec<Value>);

impl Checks {
    fn add(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.0.push(json!({ "name": name, "passed": passed, "detail": detail.into() }));
    }

    fn all_passed(&self) -> bool {
        self.0.iter().all(|c| c["passed"] == Value::Bool(true))
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let mut checks = Checks::default();
    let (csv, results) = match cfg.command {
        Command::Simulate => simulate(cfg, &spec)?,
        Command::Couple => couple(cfg, &spec, &mut checks)?,
        Command::CoalescenceLemma => lemma(cfg, &spec, &mut checks)?,
        Command::MixingRate => mixing_rate(cfg, &spec, &mut checks)?,
        Command::DriftCheck => drift_check(cfg, &spec, &mut checks)?,
        Command::Reconstruct => reconstruct(cfg, &spec, &mut checks)?,
        Command::Counterexample => counterexample(cfg, &spec, &mut checks)?,
    };
    let passed = checks.all_passed();
    let summary = json!({
        "command": cfg.command.name(),
        "metadata": {
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": format!("{:016x}", cfg.hash()),
            "seed": cfg.experiment.seed,
        },
        "results": results,
        "checks": checks.0,
        "passed": passed,
    });
    Ok(RunOutput {
        csv,
        summary,
        passed,
    })
}

/// Relative allowance for floating-point error where a bound can hold with
/// equality.
const ROUNDING: f64 = 1e-12;

fn burn_in(cfg: &RunConfig, spec: &IntensitySpec) -> usize {
    cfg.experiment
        .burn_in
        .unwrap_or(1000 * (spec.order().p() + spec.order().q()))
}

fn explicit_state(spec: &IntensitySpec, y: &Option<Vec<f64>>, l: &Option<Vec<f64>>) -> Result<Option<ChainState>> {
    if y.is_none() && l.is_none() {
        return Ok(None);
    }
    let order = spec.order();
    let y = y.clone().unwrap_or_else(|| vec![0.0; order.p()]);
    let l = l.clone().unwrap_or_else(|| vec![0.0; order.q()]);
    ChainState::new(order, y, l).map(Some)
}

fn simulate(cfg: &RunConfig, spec: &IntensitySpec) -> Result<(String, Value)> {
    let e = &cfg.experiment;
    let n = e.horizon.unwrap_or(1000);
    let init = explicit_state(spec, &e.init_y, &e.init_lambda)?.unwrap_or_else(|| ChainState::zeros(spec.order()));
    let path = simulate_path(spec, &cfg.family, n, &init, &mut derive_stream(e.seed, 0))?;
    let mut csv = Csv::new(&["t", "y", "lambda"]);
    for (t, p) in path.iter().enumerate() {
        csv.row(&[(t + 1).into(), p.y.into(), p.lambda.into()]);
    }
    let mean_y = path.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let mean_l = path.iter().map(|p| p.lambda).sum::<f64>() / n as f64;
    Ok((
        csv.finish(),
        json!({ "steps": n, "mean_y": mean_y, "mean_lambda": mean_l }),
    ))
}

fn couple(cfg: &RunConfig, spec: &IntensitySpec, checks: &mut Checks) -> Result<(String, Value)> {
    let e = &cfg.experiment;
    let horizon = e.horizon.unwrap_or(200);
    let base = derive_stream(e.seed, 0);
    let a = match explicit_state(spec, &e.init_y, &e.init_lambda)? {
        Some(s) => s,
        None => stationary_draw(spec, &cfg.family, burn_in(cfg, spec), &mut base.substream(0))?,
    };
    let b = match explicit_state(spec, &e.init_b_y, &e.init_b_lambda)? {
        Some(s) => s,
        None => stationary_draw(spec, &cfg.family, burn_in(cfg, spec), &mut base.substream(1))?,
    };
    let mut state = CoupledState::new(spec, a, b)?;
    let mut u = base.substream(2);
    let mut csv = Csv::new(&["t", "y", "y_prime", "hit", "lambda", "lambda_prime", "gap"]);
    let mut absorbed_at = None;
    let mut broken = None;
    let mut last_miss = 0;
    let mut gap_sum = 0.0;
    for _ in 0..horizon {
        let r = state.step(spec, &cfg.family, u.uniform())?;
        csv.row(&[
            r.t.into(),
            r.y.into(),
            r.y_prime.into(),
            r.hit.into(),
            r.lambda.into(),
            r.lambda_prime.into(),
            r.gap.into(),
        ]);
        gap_sum += (r.lambda - r.lambda_prime).abs();
        if !r.hit {
            last_miss = r.t;
            if absorbed_at.is_some() && broken.is_none() {
                broken = Some(r.t);
            }
        }
        if absorbed_at.is_none() && state.trailing_hits >= spec.order().p() && r.gap == 0.0 {
            absorbed_at = Some(r.t);
        }
    }
    let first = (last_miss < horizon).then_some(last_miss + 1);
    checks.add(
        "absorption",
        broken.is_none(),
        match broken {
            Some(t) => format!("miss at step {t} after exact coalescence"),
            None => "no miss after exact coalescence".into(),
        },
    );
    Ok((
        csv.finish(),
        json!({
            "horizon": horizon,
            "first_coalescence": first,
            "exact_coalescence": absorbed_at,
            "gap_sum": gap_sum,
        }),
    ))
}

fn lemma(cfg: &RunConfig, spec: &IntensitySpec, checks: &mut Checks) -> Result<(String, Value)> {
    let e = &cfg.experiment;
    let lc = LemmaConfig {
        gaps: e.gaps.clone(),
        replicates: e.replicates.unwrap_or(10_000),
        horizon: e.horizon.unwrap_or(100),
        burn_in: burn_in(cfg, spec),
        base_seed: e.seed,
        workers: e.workers,
    };
    let rep = verify_coalescence_lemma(spec, &cfg.family, &lc)?;
    let mut csv = Csv::new(&[
        "gap",
        "bound",
        "successes",
        "replicates",
        "frequency",
        "std_error",
        "ci_lo",
        "ci_hi",
        "gap_sum_ratio",
        "gap_sum_violations",
    ]);
    for p in &rep.points {
        csv.row(&[
            p.gap.into(),
            p.bound.into(),
            p.successes.into(),
            p.replicates.into(),
            p.frequency.into(),
            p.std_error.into(),
            p.ci_lo.into(),
            p.ci_hi.into(),
            p.gap_sum_ratio.into(),
            p.gap_sum_violations.into(),
        ]);
        checks.add(
            &format!("coalescence frequency at K = {}", p.gap),
            p.frequency_ok(),
            format!("{} ≥ {} - 3·{}", p.frequency, p.bound, p.std_error),
        );
        checks.add(
            &format!("gap sum at K = {}", p.gap),
            p.gap_sum_ok(),
            format!("{} violations, max ratio {}", p.gap_sum_violations, p.gap_sum_ratio),
        );
    }
    let results = json!({
        "delta": rep.delta,
        "c": rep.c,
        "replicates": lc.replicates,
        "horizon": lc.horizon,
        "points": serde_json::to_value(&rep.points).expect("serializable"),
    });
    Ok((csv.finish(), results))
}

fn mixing_rate(cfg: &RunConfig, spec: &IntensitySpec, checks: &mut Checks) -> Result<(String, Value)> {
    let e = &cfg.experiment;
    let max_n = *e.grid.last().expect("validated grid");
    let bc = BetaConfig {
        grid: e.grid.clone(),
        replicates: e.replicates.unwrap_or(1000),
        horizon: e.horizon.unwrap_or(4 * max_n),
        burn_in: burn_in(cfg, spec),
        base_seed: e.seed,
        workers: e.workers,
    };
    let est = estimate_beta(spec, &cfg.family, &bc)?;
    let mut csv = Csv::new(&["n", "beta_hat", "ci_lo", "ci_hi"]);
    for i in 0..est.grid.len() {
        csv.row(&[
            est.grid[i].into(),
            est.beta_hat[i].into(),
            est.ci_lo[i].into(),
            est.ci_hi[i].into(),
        ]);
    }
    let fit = match fit_subgeometric_rate(&est) {
        Ok(f) => json!({
            "fitted": true,
            "c": f.c,
            "rho": f.rho,
            "slope": f.slope,
            "slope_se": f.slope_se,
            "r_squared": f.r_squared,
            "residuals": f.residuals,
            "decay_significant": f.significant_decay(),
            "geometric": { "c": f.geometric_c, "rho": f.geometric_rho, "r_squared": f.geometric_r_squared },
            "points": f.points,
        }),
        Err(Error::InsufficientData(reason)) => json!({ "fitted": false, "reason": reason }),
        Err(other) => return Err(other),
    };
    checks.add(
        "beta nonincreasing",
        est.is_nonincreasing(),
        format!("{:?}", est.beta_hat),
    );
    let results = json!({
        "grid": est.grid,
        "beta_hat": est.beta_hat,
        "ci_lo": est.ci_lo,
        "ci_hi": est.ci_hi,
        "replicates": est.replicates,
        "horizon": est.horizon,
        "unresolved_at_horizon": est.unresolved,
        "fit": fit,
    });
    Ok((csv.finish(), results))
}

fn drift_check(cfg: &RunConfig, spec: &IntensitySpec, checks: &mut Checks) -> Result<(String, Value)> {
    let e = &cfg.experiment;
    let bound = spec
        .drift_bound()
        .ok_or_else(|| Error::Config("the intensity has no drift bound".into()))?;
    let drift = drift_constants(bound, &cfg.family)?;
    let stop = stopping_constants(&drift)?;
    for ineq in &drift.inequalities {
        checks.add(
            &format!("inequality: {}", ineq.name),
            ineq.holds(),
            format!("{} < {}", ineq.lhs, ineq.rhs),
        );
    }
    let base = derive_stream(e.seed, 0);
    let probe = semicontractive_probe(spec, 10_000, &mut base.substream(0));
    checks.add("semi-contraction", probe.is_ok(), format!("{probe:?}"));

    let reps = e.replicates.unwrap_or(10_000);
    let mut st = base.substream(1);
    let states = probe_states(spec, e.probes, &mut st);
    let mut csv = Csv::new(&["probe", "v", "bound", "mean", "std_error", "passed"]);
    let mut failed = 0;
    for (i, s) in states.iter().enumerate() {
        let r = drift_probe(spec, &cfg.family, &drift, s, reps, &mut st)?;
        failed += usize::from(!r.passes());
        csv.row(&[
            (i + 1).into(),
            r.v.into(),
            r.bound.into(),
            r.mean.into(),
            r.std_error.into(),
            r.passes().into(),
        ]);
    }
    checks.add(
        "drift at probe states",
        failed == 0,
        format!("{failed} of {} probes above κV + a₀ + 3se", states.len()),
    );

    // E η^{τ₁} from a pair started on the level 2C₁.
    let start = level_state(spec, &drift, 2.0 * stop.level);
    let (acc, censored) = first_return_moment(
        spec,
        &cfg.family,
        &drift,
        &start,
        &start,
        reps,
        10_000,
        e.seed ^ 0x5eed,
        e.workers,
    )?;
    let w0 = 2.0 * stop.level;
    checks.add(
        "first return moment",
        censored == 0 && acc.mean() <= w0 + 3.0 * acc.std_error(),
        format!("mean η^τ₁ = {} (se {}) vs W₀ = {w0}", acc.mean(), acc.std_error()),
    );
    let results = json!({
        "kappa": drift.kappa,
        "a0": drift.a0,
        "epsilon": drift.epsilon,
        "count_weights": drift.count_weights,
        "intensity_weights": drift.intensity_weights,
        "inequalities": serde_json::to_value(&drift.inequalities).expect("serializable"),
        "eta": stop.eta,
        "level": stop.level,
        "first_return": { "w0": w0, "mean": acc.mean(), "std_error": acc.std_error(), "censored": censored },
    });
    Ok((csv.finish(), results))
}

/// State whose Lyapunov value is `w`, carried entirely by the newest intensity.
pub fn level_state(spec: &IntensitySpec, drift: &DriftConstants, w: f64) -> ChainState {
    let mut s = ChainState::zeros(spec.order());
    s.lambda[0] = w / drift.intensity_weights[0];
    s
}

fn reconstruct(cfg: &RunConfig, spec: &IntensitySpec, checks: &mut Checks) -> Result<(String, Value)> {
    let e = &cfg.experiment;
    let (p, q) = (spec.order().p(), spec.order().q());
    let kmax = e.horizon.unwrap_or(40);
    let paths = e.replicates.unwrap_or(100);
    let lambda0 = e.init_lambda.clone().unwrap_or_else(|| vec![2.0; q]);
    let prior = lambda0.clone();
    let family = &cfg.family;
    let per_path = replicate(e.seed, paths, e.workers, |_, mut st| -> Result<Vec<(f64, f64)>> {
        let mut y = e.init_y.clone().unwrap_or_else(|| vec![0.0; p]);
        if e.init_y.is_none() {
            y[0] = spec.mode().lag_value(family.sample(lambda0[0], st.uniform())?);
        }
        let init = ChainState::new(spec.order(), y.clone(), lambda0.clone())?;
        let path = simulate_path(spec, family, kmax, &init, &mut st)?;
        let mut hist: Vec<f64> = y.iter().rev().copied().collect();
        hist.extend(path.iter().map(|pt| spec.mode().lag_value(pt.y)));
        (0..=kmax)
            .map(|k| {
                let rec = reconstruct_intensity(spec, &hist[..k + p - 1], &prior)?;
                let truth = if k == 0 { lambda0[0] } else { path[k - 1].lambda };
                // Linear maps attain the bound, so allow for rounding in λ.
                let slack = ROUNDING * (1.0 + truth.abs());
                Ok(((truth - rec.estimate).abs(), rec.bound + slack))
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let table = contraction_coeffs(spec.contraction(), kmax + 1)?;
    let mut csv = Csv::new(&["k", "max_error", "bound", "violations"]);
    let mut total = 0;
    for k in 0..=kmax {
        let bound: f64 = prior.iter().enumerate().map(|(i, b)| table.d(k + 1, i + 1) * b).sum();
        let max_err = per_path.iter().map(|v| v[k].0).fold(0.0, f64::max);
        let viol = per_path.iter().filter(|v| v[k].0 > v[k].1).count();
        total += viol;
        csv.row(&[k.into(), max_err.into(), bound.into(), viol.into()]);
    }
    checks.add(
        "forward iteration bound",
        total == 0,
        format!("{total} (path, k) pairs above the bound"),
    );
    Ok((csv.finish(), json!({ "paths": paths, "kmax": kmax, "prior": prior })))
}

fn counterexample(cfg: &RunConfig, spec: &IntensitySpec, checks: &mut Checks) -> Result<(String, Value)> {
    let ModelConfig::HalfCountLink { base, scale } = cfg.model else {
        unreachable!("validated");
    };
    let link = SaturatingLink::new(base, scale)?;
    let e = &cfg.experiment;
    let n = e.horizon.unwrap_or(10_000);
    let init = explicit_state(spec, &e.init_y, &e.init_lambda)?.unwrap_or_else(|| ChainState::zeros(spec.order()));
    let path = simulate_path(spec, &cfg.family, n, &init, &mut derive_stream(e.seed, 0))?;
    let mut csv = Csv::new(&["t", "y", "lambda", "recovered_y_prev", "recovered_lambda_prev", "exact"]);
    let (mut prev_y, mut prev_l) = (init.y[0], init.lambda[0]);
    let mut int_ok = 0;
    let mut max_err: f64 = 0.0;
    for (t, pt) in path.iter().enumerate() {
        let (ry, rl) = counterexample_recover(&link, pt.lambda)?;
        let err = (rl - prev_l).abs();
        let exact = ry as f64 == prev_y && err <= 1e-10;
        int_ok += usize::from(ry as f64 == prev_y);
        max_err = max_err.max(err);
        csv.row(&[(t + 1).into(), pt.y.into(), pt.lambda.into(), ry.into(), rl.into(), exact.into()]);
        prev_y = pt.y;
        prev_l = pt.lambda;
    }
    checks.add("count recovery", int_ok == n, format!("{int_ok} of {n} exact"));
    checks.add("intensity recovery", max_err <= 1e-10, format!("max error {max_err}"));
    Ok((
        csv.finish(),
        json!({ "steps": n, "count_recovered": int_ok, "max_lambda_error": max_err }),
    ))
}
