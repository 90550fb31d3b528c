//! Contraction tables, the coalescence bound, return times and Monte Carlo
//! estimation of the coupling bound on beta-mixing coefficients.

use serde::{Deserialize, Serialize};

use crate::coupling::{CoupledChain, CoupledState};
use crate::error::{Error, Result};
use crate::model::{drift_constants, stationary_draw, ChainState, DriftConstants, IntensitySpec};
use crate::replicate::replicate;
use crate::rng::Stream;
use crate::seed::SeedFamily;
use crate::stats::{fit_line, LineFit, MeanAccumulator, Proportion};

/// Relative slack for the gap-sum check: the bound can be attained exactly by
/// linear maps, so only accumulated rounding is tolerated.
pub const GAP_SUM_RTOL: f64 = 1e-9;

/// `d_{k,i}` for `k = 1..=kmax`, `i = 1..=q`, and the partial sums
/// `D_{m,i} = Σ_{k ≤ m} d_{k,i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionTable {
    c: Vec<f64>,
    d: Vec<Vec<f64>>,
    partial: Vec<Vec<f64>>,
}

impl ContractionTable {
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn q(&self) -> usize {
        self.c.len()
    }

    pub fn kmax(&self) -> usize {
        self.d.len()
    }

    /// `d_{k,i}`, one-based. Panics outside the table.
    pub fn d(&self, k: usize, i: usize) -> f64 {
        self.d[k - 1][i - 1]
    }

    /// `D_{m,i}`, one-based.
    pub fn partial(&self, m: usize, i: usize) -> f64 {
        self.partial[m - 1][i - 1]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.d[k - 1]
    }

    /// `1/(1 - Σ cᵢ)`, the bound on every `D_{m,i}`.
    pub fn partial_bound(&self) -> f64 {
        1.0 / (1.0 - self.c.iter().sum::<f64>())
    }
}

/// `d_{1,·} = (1, 0, …)` and for `k ≥ 2`
/// `d_{k,i} = Σ_{j=1}^{min(q,k-2)} c_j d_{k-j,i} + c_{k+i-2} 𝟙{k+i-2 ≤ q}`.
pub fn contraction_coeffs(c: &[f64], kmax: usize) -> Result<ContractionTable> {
    let q = c.len();
    if q == 0 || kmax == 0 {
        return Err(Error::param("contraction table needs q ≥ 1 and kmax ≥ 1"));
    }
    if let Some(x) = c.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::param(format!("contraction constant {x} must be finite and ≥ 0")));
    }
    let sum: f64 = c.iter().sum();
    if sum >= 1.0 {
        return Err(Error::InfeasibleContraction { sum });
    }
    let mut d: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut first = vec![0.0; q];
    first[0] = 1.0;
    d.push(first);
    for k in 2..=kmax {
        let row: Vec<f64> = (1..=q)
            .map(|i| {
                let mut v: f64 = (1..=q.min(k - 2)).map(|j| c[j - 1] * d[k - j - 1][i - 1]).sum();
                let idx = k + i - 2;
                if idx <= q {
                    v += c[idx - 1];
                }
                v
            })
            .collect();
        d.push(row);
    }
    let mut partial = Vec::with_capacity(kmax);
    let mut acc = vec![0.0; q];
    for row in &d {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
        partial.push(acc.clone());
    }
    Ok(ContractionTable {
        c: c.to_vec(),
        d,
        partial,
    })
}

/// `exp(-δK/(1-c))`, a lower bound on the probability that a pair whose
/// next-step gap is `K` hits forever after. Returns 0 (a trivial bound) when
/// `c ≥ 1`.
pub fn coalescence_bound(delta: f64, c: f64, k: f64) -> f64 {
    if !(c < 1.0) {
        return 0.0;
    }
    (-delta * k / (1.0 - c)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingConstants {
    /// `η = 2/(1+κ)`.
    pub eta: f64,
    /// `C₁ = (2a₀ + 2)/(1-κ)`, the return level for `W = (V + V')/2`.
    pub level: f64,
    pub kappa: f64,
    pub a0: f64,
}

impl StoppingConstants {
    pub fn new(kappa: f64, a0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&kappa) || !(a0 >= 0.0) {
            return Err(Error::param(format!(
                "stopping constants need 0 ≤ κ < 1 and a₀ ≥ 0 (κ = {kappa}, a₀ = {a0})"
            )));
        }
        Ok(StoppingConstants {
            eta: 2.0 / (1.0 + kappa),
            level: (2.0 * a0 + 2.0) / (1.0 - kappa),
            kappa,
            a0,
        })
    }

    /// Bound on `E η^{τ_{m+1} - τ_m}` for retarded returns with trial length
    /// `D`: `η^D (1 + (a₀ + κC₁)/(1-κ))`.
    pub fn retarded_return_bound(&self, trial_length: usize) -> f64 {
        self.eta.powi(trial_length as i32)
            * (1.0 + (self.a0 + self.kappa * self.level) / (1.0 - self.kappa))
    }
}

pub fn stopping_constants(drift: &DriftConstants) -> Result<StoppingConstants> {
    StoppingConstants::new(drift.kappa, drift.a0)
}

fn check_feasible(spec: &IntensitySpec, family: &SeedFamily) -> Result<DriftConstants> {
    spec.check_family(family)?;
    let bound = spec
        .drift_bound()
        .ok_or_else(|| Error::Config("the intensity has no drift bound".into()))?;
    drift_constants(bound, family)
}

/// Kappa-weighted level `W = (V(A) + V(B))/2` of a coupled state.
pub fn pair_level(drift: &DriftConstants, state: &CoupledState) -> f64 {
    0.5 * (drift.lyapunov(&state.a) + drift.lyapunov(&state.b))
}

/// First `t ≥ 0` with `W_t ≤ C₁`, or `None` within `max_steps`.
pub fn first_return(
    chain: &mut CoupledChain<'_>,
    drift: &DriftConstants,
    level: f64,
    max_steps: usize,
    stream: &mut Stream,
) -> Result<Option<usize>> {
    for t in 0..=max_steps {
        if pair_level(drift, chain.state()) <= level {
            return Ok(Some(t));
        }
        if t < max_steps {
            chain.step(stream.uniform())?;
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Coalescence lemma

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaConfig {
    pub gaps: Vec<f64>,
    pub replicates: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub base_seed: u64,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaPoint {
    pub gap: f64,
    pub bound: f64,
    pub successes: u64,
    pub replicates: u64,
    pub frequency: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Largest `Σ|λ - λ'| / (K/(1-c))` over successful runs.
    pub gap_sum_ratio: f64,
    pub gap_sum_violations: u64,
}

impl LemmaPoint {
    pub fn frequency_ok(&self) -> bool {
        self.frequency >= self.bound - 3.0 * self.std_error
    }

    pub fn gap_sum_ok(&self) -> bool {
        self.gap_sum_violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub delta: f64,
    pub c: f64,
    pub points: Vec<LemmaPoint>,
}

impl LemmaReport {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for p in &self.points {
            if !p.frequency_ok() {
                v.push(format!(
                    "K = {}: frequency {} below bound {} - 3·{}",
                    p.gap, p.frequency, p.bound, p.std_error
                ));
            }
            if !p.gap_sum_ok() {
                v.push(format!(
                    "K = {}: gap sum exceeded K/(1-c) in {} runs",
                    p.gap, p.gap_sum_violations
                ));
            }
        }
        v
    }

    pub fn all_ok(&self) -> bool {
        self.violations().is_empty()
    }
}

/// Second chain with the same lags as `a` except the oldest intensity lag,
/// shifted upwards so that the next intensities differ by `k`.
fn offset_pair(spec: &IntensitySpec, a: &ChainState, k: f64) -> Result<(ChainState, f64)> {
    let q = spec.order().q();
    let base = spec.evaluate(&a.y, &a.lambda)?;
    let with_shift = |s: f64| -> Result<(ChainState, f64)> {
        let mut b = a.clone();
        b.lambda[q - 1] += s;
        let g = (spec.evaluate(&b.y, &b.lambda)? - base).abs();
        Ok((b, g))
    };
    if k == 0.0 {
        return Ok((a.clone(), 0.0));
    }
    let mut hi = k.max(1e-6);
    while with_shift(hi)?.1 < k {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Config(format!(
                "cannot open an intensity gap of {k} through the oldest intensity lag"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if with_shift(mid)?.1 < k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    with_shift(hi)
}

/// For every `K` in the grid, starts coupled pairs that agree in all
/// observation lags and whose next intensities differ by `K`, and compares
/// the frequency of "every step hits" with `exp(-δK/(1-c))`. Successful runs
/// must also keep `Σ_m |λ_m - λ'_m| ≤ K/(1-c)`.
pub fn verify_coalescence_lemma(
    spec: &IntensitySpec,
    family: &SeedFamily,
    config: &LemmaConfig,
) -> Result<LemmaReport> {
    check_feasible(spec, family)?;
    if config.replicates == 0 || config.horizon == 0 {
        return Err(Error::Config("lemma runs need replicates ≥ 1 and horizon ≥ 1".into()));
    }
    if let Some(k) = config.gaps.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
        return Err(Error::Config(format!("gap {k} must be finite and ≥ 0")));
    }
    let delta = family.similarity_delta()?.value();
    let c = spec.contraction_sum();
    let mut points = Vec::with_capacity(config.gaps.len());
    for (gi, &k) in config.gaps.iter().enumerate() {
        let seed = crate::rng::derive_stream(config.base_seed, gi as u64).next_u64();
        let runs = replicate(seed, config.replicates, config.workers, |_, stream| {
            lemma_run(spec, family, config, k, c, stream)
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let successes = runs.iter().filter(|r| r.0).count() as u64;
        let mut ratio: f64 = 0.0;
        let mut violations = 0;
        for &(ok, sum, limit) in &runs {
            if ok && limit > 0.0 {
                ratio = ratio.max(sum / limit);
            }
            if ok && sum > limit * (1.0 + GAP_SUM_RTOL) + f64::MIN_POSITIVE {
                violations += 1;
            }
        }
        let prop = Proportion::new(successes, runs.len() as u64);
        let (lo, hi) = prop.wilson99();
        points.push(LemmaPoint {
            gap: k,
            bound: coalescence_bound(delta, c, k),
            successes,
            replicates: runs.len() as u64,
            frequency: prop.estimate(),
            std_error: prop.wilson_se(),
            ci_lo: lo,
            ci_hi: hi,
            gap_sum_ratio: ratio,
            gap_sum_violations: violations,
        });
    }
    Ok(LemmaReport { delta, c, points })
}

/// (all steps hit, gap sum, K_realized/(1-c)).
fn lemma_run(
    spec: &IntensitySpec,
    family: &SeedFamily,
    config: &LemmaConfig,
    k: f64,
    c: f64,
    stream: Stream,
) -> Result<(bool, f64, f64)> {
    let a = stationary_draw(spec, family, config.burn_in, &mut stream.substream(0))?;
    let (b, realized) = offset_pair(spec, &a, k)?;
    let mut chain = CoupledChain::new(spec, family, a, b)?;
    let mut u = stream.substream(1);
    let mut sum = 0.0;
    for _ in 0..config.horizon {
        let rec = chain.step(u.uniform())?;
        if !rec.hit {
            return Ok((false, 0.0, 0.0));
        }
        sum += (rec.lambda - rec.lambda_prime).abs();
        if chain.state().coalesced() {
            break;
        }
    }
    Ok((true, sum, realized / (1.0 - c)))
}

// ---------------------------------------------------------------------------
// Trial schedules

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    /// `D_n`, steps per trial.
    pub trial_length: usize,
    pub horizon: usize,
    /// Largest look-ahead gap at the end of a successful trial.
    pub gap_target: f64,
}

impl TrialConfig {
    /// Trial length for lag `n`: the smallest `m` with
    /// `max_i d_{m+1,i}·C₁ ≤ ρ^√n`, plus `p - 1`. Also returns `m/√n`.
    pub fn for_lag(
        spec: &IntensitySpec,
        level: f64,
        rho_target: f64,
        n: usize,
        horizon: usize,
    ) -> Result<(Self, f64)> {
        if !(rho_target > 0.0 && rho_target < 1.0) || n == 0 {
            return Err(Error::Config(format!(
                "trial target needs ρ in (0, 1) and n ≥ 1 (ρ = {rho_target}, n = {n})"
            )));
        }
        let target = rho_target.powf((n as f64).sqrt());
        let mut kmax = 64;
        loop {
            let table = contraction_coeffs(spec.contraction(), kmax + 1)?;
            if let Some(m) = (1..=kmax).find(|&m| {
                table.row(m + 1).iter().fold(0.0_f64, |a, &b| a.max(b)) * level <= target
            }) {
                let cfg = TrialConfig {
                    trial_length: m + spec.order().p() - 1,
                    horizon,
                    gap_target: target,
                };
                return Ok((cfg, m as f64 / (n as f64).sqrt()));
            }
            kmax *= 4;
            if kmax > 1 << 22 {
                return Err(Error::Config("trial length does not converge".into()));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub start: usize,
    pub success: bool,
    pub end_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSchedule {
    pub level: f64,
    pub trial_length: usize,
    pub trials: Vec<Trial>,
    /// The horizon ended before a return or inside a trial.
    pub truncated: bool,
}

impl TrialSchedule {
    pub fn returns(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.start).collect()
    }

    pub fn outcomes(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.success).collect()
    }
}

/// Runs the coupled pair from `(a, b)`. `τ₁` is the first `t ≥ 0` with
/// `W_t ≤ C₁`; after a trial starting at `τ`, the next start is the first
/// `t > τ + D` with `W_t ≤ C₁`. A trial succeeds when its `D` steps all hit
/// and the look-ahead gap at its end is at most the target.
pub fn run_trial_schedule_from(
    spec: &IntensitySpec,
    family: &SeedFamily,
    drift: &DriftConstants,
    config: &TrialConfig,
    a: ChainState,
    b: ChainState,
    stream: &mut Stream,
) -> Result<TrialSchedule> {
    if config.trial_length < spec.order().p() {
        return Err(Error::Config(format!(
            "trial length {} is shorter than p = {}",
            config.trial_length,
            spec.order().p()
        )));
    }
    let consts = stopping_constants(drift)?;
    let mut chain = CoupledChain::new(spec, family, a, b)?;
    let mut trials = Vec::new();
    let mut earliest = 0;
    let truncated: bool;
    'outer: loop {
        while chain.state().t < earliest || pair_level(drift, chain.state()) > consts.level {
            if chain.state().t >= config.horizon {
                truncated = true;
                break 'outer;
            }
            chain.step(stream.uniform())?;
        }
        let start = chain.state().t;
        if start + config.trial_length > config.horizon {
            truncated = true;
            break;
        }
        let mut all_hit = true;
        for _ in 0..config.trial_length {
            all_hit &= chain.step(stream.uniform())?.hit;
        }
        let end_gap = chain.lookahead_gap()?;
        trials.push(Trial {
            start,
            success: all_hit && end_gap <= config.gap_target,
            end_gap,
        });
        earliest = start + config.trial_length + 1;
    }
    Ok(TrialSchedule {
        level: consts.level,
        trial_length: config.trial_length,
        trials,
        truncated,
    })
}

/// Trial schedule from independent approximate stationary draws: chain A from
/// sub-stream 0, chain B from sub-stream 1, coupling uniforms from 2.
pub fn run_trial_schedule(
    spec: &IntensitySpec,
    family: &SeedFamily,
    drift: &DriftConstants,
    config: &TrialConfig,
    burn_in: usize,
    stream: &Stream,
) -> Result<TrialSchedule> {
    let a = stationary_draw(spec, family, burn_in, &mut stream.substream(0))?;
    let b = stationary_draw(spec, family, burn_in, &mut stream.substream(1))?;
    run_trial_schedule_from(spec, family, drift, config, a, b, &mut stream.substream(2))
}

// ---------------------------------------------------------------------------
// Beta estimation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaConfig {
    pub grid: Vec<usize>,
    pub replicates: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub base_seed: u64,
    pub workers: usize,
}

impl BetaConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.grid.is_empty() {
            errs.push("the n-grid is empty".to_string());
        }
        if self.grid.first() == Some(&0) {
            errs.push("n-grid values must be ≥ 1".to_string());
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("the n-grid must be strictly increasing".to_string());
        }
        if self.replicates < 100 {
            errs.push(format!("replicates = {} (need ≥ 100)", self.replicates));
        }
        if let Some(&max) = self.grid.last() {
            if self.horizon < max {
                errs.push(format!("horizon {} is below the largest lag {max}", self.horizon));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub grid: Vec<usize>,
    pub beta_hat: Vec<f64>,
    pub misses: Vec<u64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub replicates: u64,
    pub horizon: usize,
    /// Replicates still disagreeing at the horizon: the part of the estimand
    /// the truncation cannot see.
    pub unresolved: u64,
}

impl MixingEstimate {
    /// Builds an estimate from miss counts.
    pub fn from_counts(grid: Vec<usize>, misses: Vec<u64>, replicates: u64, horizon: usize, unresolved: u64) -> Self {
        let props: Vec<Proportion> = misses.iter().map(|&m| Proportion::new(m, replicates)).collect();
        let (ci_lo, ci_hi) = props.iter().map(Proportion::wilson99).unzip();
        MixingEstimate {
            beta_hat: props.iter().map(Proportion::estimate).collect(),
            grid,
            misses,
            ci_lo,
            ci_hi,
            replicates,
            horizon,
            unresolved,
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.beta_hat.windows(2).all(|w| w[1] <= w[0])
    }
}

/// For each replicate, couples two independent approximate stationary draws
/// (sub-streams 0 and 1, uniforms from 2) up to the horizon and records the
/// last step with `Y ≠ Y'`. `β̂_n` is the fraction of replicates with a miss
/// at some `m ∈ [n, horizon]`, so it is nonincreasing in `n` by construction.
pub fn estimate_beta(
    spec: &IntensitySpec,
    family: &SeedFamily,
    config: &BetaConfig,
) -> Result<MixingEstimate> {
    config.validate()?;
    check_feasible(spec, family)?;
    let last_miss = replicate(config.base_seed, config.replicates, config.workers, |_, stream| {
        last_miss(spec, family, config, stream)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let misses = config
        .grid
        .iter()
        .map(|&n| last_miss.iter().filter(|&&m| m >= n).count() as u64)
        .collect();
    let unresolved = last_miss.iter().filter(|&&m| m == config.horizon).count() as u64;
    Ok(MixingEstimate::from_counts(
        config.grid.clone(),
        misses,
        config.replicates as u64,
        config.horizon,
        unresolved,
    ))
}

/// Index of the last miss in `1..=horizon`, 0 if none.
fn last_miss(spec: &IntensitySpec, family: &SeedFamily, config: &BetaConfig, stream: Stream) -> Result<usize> {
    let a = stationary_draw(spec, family, config.burn_in, &mut stream.substream(0))?;
    let b = stationary_draw(spec, family, config.burn_in, &mut stream.substream(1))?;
    let mut u = stream.substream(2);
    let mut chain = CoupledChain::new(spec, family, a, b)?;
    let mut last = 0;
    while chain.state().t < config.horizon {
        if chain.state().coalesced() {
            break;
        }
        let rec = chain.step(u.uniform())?;
        if !rec.hit {
            last = rec.t;
        }
    }
    Ok(last)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `C` in `β_n ≈ C ρ^√n`.
    pub c: f64,
    pub rho: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// `C'`, `ρ'` and `R²` of the geometric model `β_n ≈ C' ρ'^n`.
    pub geometric_c: f64,
    pub geometric_rho: f64,
    pub geometric_r_squared: f64,
    pub points: usize,
}

impl RateFit {
    /// Slope of `log β̂` on `√n` is negative by more than three standard errors.
    pub fn significant_decay(&self) -> bool {
        self.slope + 3.0 * self.slope_se < 0.0
    }
}

/// Least squares of `log β̂_n` on `√n` over the points with `β̂_n > 0`.
pub fn fit_subgeometric_rate(estimate: &MixingEstimate) -> Result<RateFit> {
    fit_rate_points(&estimate.grid, &estimate.beta_hat)
}

pub fn fit_rate_points(grid: &[usize], beta: &[f64]) -> Result<RateFit> {
    if grid.len() != beta.len() {
        return Err(Error::Shape {
            what: "beta values",
            expected: grid.len(),
            got: beta.len(),
        });
    }
    let (n, lb): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .zip(beta)
        .filter(|(_, b)| **b > 0.0)
        .map(|(&n, &b)| (n as f64, b.ln()))
        .unzip();
    if n.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} grid points with β̂ > 0 (need 3)",
            n.len()
        )));
    }
    let root: Vec<f64> = n.iter().map(|x| x.sqrt()).collect();
    let sub: LineFit = fit_line(&root, &lb);
    let geo: LineFit = fit_line(&n, &lb);
    Ok(RateFit {
        c: sub.intercept.exp(),
        rho: sub.slope.exp(),
        slope: sub.slope,
        slope_se: sub.slope_se,
        r_squared: sub.r_squared,
        residuals: sub.residuals,
        geometric_c: geo.intercept.exp(),
        geometric_rho: geo.slope.exp(),
        geometric_r_squared: geo.r_squared,
        points: n.len(),
    })
}

/// Monte Carlo `E η^{τ₁}` for a pair started at the given states, with the
/// newest observations redrawn.
#[allow(clippy::too_many_arguments)]
pub fn first_return_moment(
    spec: &IntensitySpec,
    family: &SeedFamily,
    drift: &DriftConstants,
    a: &ChainState,
    b: &ChainState,
    replicates: usize,
    max_steps: usize,
    base_seed: u64,
    workers: usize,
) -> Result<(MeanAccumulator, u64)> {
    let consts = stopping_constants(drift)?;
    let draws = replicate(base_seed, replicates, workers, |_, stream| -> Result<Option<usize>> {
        let mut chain = CoupledChain::new(spec, family, a.clone(), b.clone())?;
        let mut u = stream;
        chain.redraw_newest(u.uniform())?;
        first_return(&mut chain, drift, consts.level, max_steps, &mut u)
    });
    let mut acc = MeanAccumulator::default();
    let mut censored = 0;
    for d in draws {
        match d? {
            Some(t) => acc.push(consts.eta.powi(t as i32)),
            None => censored += 1,
        }
    }
    Ok((acc, censored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use approx::assert_abs_diff_eq;

    #[test]
    fn table_examples() {
        let t = contraction_coeffs(&[0.5], 4).unwrap();
        let d: Vec<f64> = (1..=4).map(|k| t.d(k, 1)).collect();
        assert_eq!(d, vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(t.partial(4, 1), 1.875);
        assert_eq!(t.partial_bound(), 2.0);

        let t = contraction_coeffs(&[0.3, 0.2], 3).unwrap();
        assert_eq!(t.row(1), &[1.0, 0.0]);
        assert_eq!(t.row(2), &[0.3, 0.2]);
        assert_abs_diff_eq!(t.d(3, 1), 0.29, epsilon = 1e-15);
        assert_abs_diff_eq!(t.d(3, 2), 0.06, epsilon = 1e-15);

        assert!(matches!(contraction_coeffs(&[0.6, 0.4], 3), Err(Error::InfeasibleContraction { .. })));
    }

    #[test]
    fn bound_examples() {
        assert_eq!(coalescence_bound(1.0, 0.5, 0.0), 1.0);
        assert_abs_diff_eq!(coalescence_bound(1.0, 0.5, 0.1), (-0.2f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(coalescence_bound(1.0, 0.5, 0.1), 0.8187, epsilon = 1e-4);
        for k in [0.0, 0.01, 0.3, 2.0, 10.0] {
            assert!(coalescence_bound(2.0, 0.3, k) >= 1.0 - 2.0 * k / 0.7);
        }
    }

    #[test]
    fn stopping_examples() {
        let s = StoppingConstants::new(0.7, 1.0).unwrap();
        assert_abs_diff_eq!(s.eta, 1.176_470_588_235_294, epsilon = 1e-12);
        assert_abs_diff_eq!(s.level, 13.333_333_333_333_334, epsilon = 1e-12);
        let z = StoppingConstants::new(0.0, 1.5).unwrap();
        assert_eq!((z.eta, z.level), (2.0, 5.0));
        assert!(StoppingConstants::new(1.0, 1.0).is_err());
    }

    #[test]
    fn fit_synthetic_curves() {
        let grid: Vec<usize> = vec![1, 4, 9, 16, 25];
        let exact: Vec<f64> = grid.iter().map(|&n| 0.5f64.powf((n as f64).sqrt())).collect();
        let f = fit_rate_points(&grid, &exact).unwrap();
        assert_abs_diff_eq!(f.c, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.rho, 0.5, epsilon = 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!(f.r_squared > 1.0 - 1e-12);
        assert!(f.geometric_r_squared < f.r_squared);

        let scaled: Vec<f64> = grid.iter().map(|&n| 2.0 * 0.8f64.powf((n as f64).sqrt())).collect();
        let f = fit_rate_points(&grid, &scaled).unwrap();
        assert_abs_diff_eq!(f.c, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.rho, 0.8, epsilon = 1e-12);

        assert!(matches!(
            fit_rate_points(&[1, 2, 3], &[0.5, 0.0, 0.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn constant_intensity_never_misses() {
        let s = IntensitySpec::linear(Mode::Ingarch, 1.0, vec![0.0], vec![0.0]).unwrap();
        let cfg = BetaConfig {
            grid: vec![1, 2, 4],
            replicates: 100,
            horizon: 16,
            burn_in: 20,
            base_seed: 5,
            workers: 1,
        };
        let e = estimate_beta(&s, &SeedFamily::Poisson, &cfg).unwrap();
        assert!(e.beta_hat.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn beta_config_errors() {
        let s = IntensitySpec::linear(Mode::Ingarch, 1.0, vec![0.3], vec![0.5]).unwrap();
        let cfg = BetaConfig {
            grid: vec![1, 64],
            replicates: 100,
            horizon: 32,
            burn_in: 10,
            base_seed: 1,
            workers: 1,
        };
        assert!(matches!(estimate_beta(&s, &SeedFamily::Poisson, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn beta_linear_model_decays() {
        let s = IntensitySpec::linear(Mode::Ingarch, 1.0, vec![0.3], vec![0.5]).unwrap();
        let cfg = BetaConfig {
            grid: vec![1, 2, 4, 9, 16, 25, 36, 49, 64],
            replicates: 2000,
            horizon: 256,
            burn_in: 200,
            base_seed: 11,
            workers: 0,
        };
        let e = estimate_beta(&s, &SeedFamily::Poisson, &cfg).unwrap();
        assert!(e.is_nonincreasing());
        let last = *e.beta_hat.last().unwrap();
        assert!(last < e.beta_hat[0] && last < 0.05, "{:?}", e.beta_hat);
    }

    #[test]
    fn trial_schedule_structure() {
        let s = IntensitySpec::linear(Mode::Ingarch, 1.0, vec![0.3], vec![0.5]).unwrap();
        let f = SeedFamily::Poisson;
        let drift = drift_constants(s.drift_bound().unwrap(), &f).unwrap();
        let consts = stopping_constants(&drift).unwrap();
        let (cfg, c5) = TrialConfig::for_lag(&s, consts.level, 0.5, 16, 2000).unwrap();
        assert!(c5 > 0.0 && cfg.trial_length >= 1);
        // d_{m+1,1} = 0.5^m and C₁ = 4/0.2 = 20: need 0.5^m·20 ≤ 0.5^4.
        assert_eq!(cfg.trial_length, 9);

        let low = ChainState::new(s.order(), vec![1.0], vec![2.0]).unwrap();
        let sched = run_trial_schedule_from(&s, &f, &drift, &cfg, low.clone(), low, &mut Stream::new(3)).unwrap();
        assert_eq!(sched.trials[0].start, 0);
        let (mut successes, mut total) = (0, 0);
        for r in 0..1000 {
            let sched = run_trial_schedule(&s, &f, &drift, &cfg, 200, &crate::rng::derive_stream(4, r)).unwrap();
            for w in sched.returns().windows(2) {
                assert!(w[1] - w[0] > cfg.trial_length);
            }
            successes += sched.outcomes().iter().filter(|s| **s).count();
            total += sched.trials.len();
        }
        let freq = successes as f64 / total as f64;
        assert!(freq > 0.1, "{successes}/{total}");
    }

    #[test]
    fn lemma_small_run() {
        let s = IntensitySpec::linear(Mode::Ingarch, 1.0, vec![0.3], vec![0.5]).unwrap();
        let cfg = LemmaConfig {
            gaps: vec![0.0, 0.2],
            replicates: 2000,
            horizon: 80,
            burn_in: 100,
            base_seed: 17,
            workers: 1,
        };
        let rep = verify_coalescence_lemma(&s, &SeedFamily::Poisson, &cfg).unwrap();
        assert_eq!(rep.points[0].frequency, 1.0);
        assert!(rep.all_ok(), "{:?}", rep.violations());
    }

    #[test]
    fn offset_pair_hits_requested_gap() {
        let th = IntensitySpec::threshold(
            Mode::Ingarch,
            0.0,
            3.0,
            crate::model::Regime::new(1.0, 0.2, 0.5),
            crate::model::Regime::new(2.0, 0.1, 0.6),
        )
        .unwrap();
        let a = ChainState::new(th.order(), vec![5.0], vec![2.0]).unwrap();
        let (b, k) = offset_pair(&th, &a, 0.3).unwrap();
        assert_abs_diff_eq!(k, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(b.lambda[0] - 2.0, 0.5, epsilon = 1e-9);
    }
}
