//! Maximal coupling of two versions of a process driven by one shared uniform
//! per step.
//!
//! At step `t` both intensities are computed from their own lag windows. With
//! overlap `Δ` of `Q(λ)` and `Q(λ')`, a uniform `u ≤ Δ` gives a hit
//! `y = y' = F^{-1}(u)`; otherwise `y = G^{-1}(u - Δ)` and `y' = G'^{-1}(u - Δ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, IntensitySpec, Mode};
use crate::rng::Stream;
use crate::seed::SeedFamily;

/// Below this λ-gap a continuous-seed pair with `p` trailing hits is treated
/// as coalesced and the second chain is pinned to the first.
pub const LOCK_GAP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupleStepOutcome {
    pub y: f64,
    pub y_prime: f64,
    pub hit: bool,
    /// The overlap `Δ` in force for this draw.
    pub overlap: f64,
}

pub fn maximal_couple_draw(
    family: &SeedFamily,
    lambda: f64,
    lambda_prime: f64,
    u: f64,
) -> Result<CoupleStepOutcome> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!("uniform {u} is outside [0, 1]")));
    }
    if lambda == lambda_prime {
        let y = family.quantile(lambda, u)?;
        return Ok(CoupleStepOutcome {
            y,
            y_prime: y,
            hit: true,
            overlap: 1.0,
        });
    }
    let split = family.split(lambda, lambda_prime)?;
    let overlap = split.overlap();
    Ok(if u <= overlap {
        let y = split.common_inverse(u);
        CoupleStepOutcome {
            y,
            y_prime: y,
            hit: true,
            overlap,
        }
    } else {
        let v = u - overlap;
        CoupleStepOutcome {
            y: split.first_inverse(v),
            y_prime: split.second_inverse(v),
            hit: false,
            overlap,
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub y: f64,
    pub y_prime: f64,
    pub hit: bool,
    pub lambda: f64,
    pub lambda_prime: f64,
    /// `Σ_j |λ_{t-j} - λ'_{t-j}|` over the `q` intensity lags after the step.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub a: ChainState,
    pub b: ChainState,
    pub t: usize,
    /// Length of the current run of hits ending at `t`.
    pub trailing_hits: usize,
    /// Set once a continuous-seed pair has been pinned together.
    pub locked: bool,
}

impl CoupledState {
    pub fn new(spec: &IntensitySpec, a: ChainState, b: ChainState) -> Result<Self> {
        let order = spec.order();
        let a = ChainState::new(order, a.y, a.lambda)?;
        let b = ChainState::new(order, b.y, b.lambda)?;
        Ok(CoupledState {
            a,
            b,
            t: 0,
            trailing_hits: 0,
            locked: false,
        })
    }

    pub fn gap(&self) -> f64 {
        self.a
            .lambda
            .iter()
            .zip(&self.b.lambda)
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    /// Both lag windows agree, so every later step hits.
    pub fn coalesced(&self) -> bool {
        self.a == self.b
    }

    /// Replaces the newest observation of both chains by a coupled draw from
    /// `Q(λ[0])` and `Q(λ'[0])`. Used when a state is specified through its
    /// Markov part only.
    pub fn redraw_newest(&mut self, spec: &IntensitySpec, family: &SeedFamily, u: f64) -> Result<()> {
        let out = maximal_couple_draw(family, self.a.lambda[0], self.b.lambda[0], u)?;
        self.a.y[0] = spec.mode().lag_value(out.y);
        self.b.y[0] = spec.mode().lag_value(out.y_prime);
        Ok(())
    }

    pub fn step(&mut self, spec: &IntensitySpec, family: &SeedFamily, u: f64) -> Result<StepRecord> {
        let lambda = spec.evaluate(&self.a.y, &self.a.lambda)?;
        let lambda_prime = spec.evaluate(&self.b.y, &self.b.lambda)?;
        let out = maximal_couple_draw(family, lambda, lambda_prime, u)?;
        let mode: Mode = spec.mode();
        self.a.push(mode.lag_value(out.y), lambda);
        self.b.push(mode.lag_value(out.y_prime), lambda_prime);
        self.t += 1;
        self.trailing_hits = if out.hit { self.trailing_hits + 1 } else { 0 };
        let mut gap = self.gap();
        if !family.is_discrete()
            && !self.locked
            && self.trailing_hits >= spec.order().p()
            && gap < LOCK_GAP
        {
            self.b = self.a.clone();
            self.locked = true;
            gap = 0.0;
        }
        Ok(StepRecord {
            t: self.t,
            y: out.y,
            y_prime: out.y_prime,
            hit: out.hit,
            lambda,
            lambda_prime,
            gap,
        })
    }
}

/// `|f(A) - f(B)| + Σ_{j=0}^{q-2} |λ_j - λ'_j|`: the gap over the next
/// intensity and the `q - 1` most recent ones.
pub fn lookahead_gap(state: &CoupledState, spec: &IntensitySpec) -> Result<f64> {
    let next = spec.evaluate(&state.a.y, &state.a.lambda)?;
    let next_prime = spec.evaluate(&state.b.y, &state.b.lambda)?;
    let q = spec.order().q();
    let rest: f64 = state.a.lambda[..q - 1]
        .iter()
        .zip(&state.b.lambda[..q - 1])
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok((next - next_prime).abs() + rest)
}

/// A coupled pair bound to its model.
#[derive(Clone, Debug)]
pub struct CoupledChain<'a> {
    spec: &'a IntensitySpec,
    family: &'a SeedFamily,
    state: CoupledState,
}

impl<'a> CoupledChain<'a> {
    pub fn new(
        spec: &'a IntensitySpec,
        family: &'a SeedFamily,
        a: ChainState,
        b: ChainState,
    ) -> Result<Self> {
        spec.check_family(family)?;
        Ok(CoupledChain {
            spec,
            family,
            state: CoupledState::new(spec, a, b)?,
        })
    }

    pub fn step(&mut self, u: f64) -> Result<StepRecord> {
        self.state.step(self.spec, self.family, u)
    }

    pub fn redraw_newest(&mut self, u: f64) -> Result<()> {
        self.state.redraw_newest(self.spec, self.family, u)
    }

    pub fn state(&self) -> &CoupledState {
        &self.state
    }

    pub fn lookahead_gap(&self) -> Result<f64> {
        lookahead_gap(&self.state, self.spec)
    }

    pub fn into_state(self) -> CoupledState {
        self.state
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    /// Smallest `n` such that steps `n..=horizon` all hit.
    pub first_coalescence: Option<usize>,
    /// `Σ_t |λ_t - λ'_t|` over the run.
    pub gap_sum: f64,
}

impl TrajectoryLog {
    fn from_records(records: Vec<StepRecord>) -> Self {
        let horizon = records.len();
        let last_miss = records.iter().rposition(|r| !r.hit);
        let first_coalescence = match last_miss {
            None => Some(1),
            Some(i) if i + 1 < horizon => Some(i + 2),
            Some(_) => None,
        };
        let gap_sum = records
            .iter()
            .map(|r| (r.lambda - r.lambda_prime).abs())
            .sum();
        TrajectoryLog {
            records,
            first_coalescence,
            gap_sum,
        }
    }
}

/// Runs `horizon` coupled steps, one uniform each.
pub fn run_coupled(
    init_a: &ChainState,
    init_b: &ChainState,
    spec: &IntensitySpec,
    family: &SeedFamily,
    horizon: usize,
    stream: &mut Stream,
) -> Result<TrajectoryLog> {
    if horizon == 0 {
        return Err(Error::Config("coupled runs need a horizon ≥ 1".into()));
    }
    let mut chain = CoupledChain::new(spec, family, init_a.clone(), init_b.clone())?;
    let records = (0..horizon)
        .map(|_| chain.step(stream.uniform()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryLog::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::contraction_coeffs;
    use crate::model::{simulate_path, stationary_draw, CustomIntensity, ModelOrder};
    use crate::stats::Proportion;
    use approx::assert_abs_diff_eq;

    fn lin(a0: f64, a: f64, b: f64) -> IntensitySpec {
        IntensitySpec::linear(Mode::Ingarch, a0, vec![a], vec![b]).unwrap()
    }

    fn poisson_overlap(l: f64, lp: f64) -> f64 {
        let mut pa = (-l).exp();
        let mut pb = (-lp).exp();
        let mut s = 0.0;
        for k in 0..200 {
            if k > 0 {
                pa *= l / k as f64;
                pb *= lp / k as f64;
            }
            s += pa.min(pb);
        }
        s
    }

    #[test]
    fn equal_intensities_always_hit() {
        let f = SeedFamily::Poisson;
        let mut s = Stream::new(3);
        for _ in 0..1000 {
            let u = s.uniform();
            let out = maximal_couple_draw(&f, 2.5, 2.5, u).unwrap();
            assert!(out.hit);
            assert_eq!(out.y, f.quantile(2.5, u).unwrap());
        }
    }

    #[test]
    fn hit_iff_below_overlap() {
        let f = SeedFamily::Poisson;
        let d = f.split(1.0, 1.5).unwrap().overlap();
        assert_abs_diff_eq!(d, poisson_overlap(1.0, 1.5), epsilon = 1e-12);
        assert!((d - 0.82).abs() < 0.01);
        let mut s = Stream::new(8);
        let mut hits = 0;
        for _ in 0..100_000 {
            let u = s.uniform();
            let out = maximal_couple_draw(&f, 1.0, 1.5, u).unwrap();
            assert_eq!(out.hit, u <= d);
            if out.hit {
                assert_eq!(out.y, out.y_prime);
                hits += 1;
            } else {
                assert_ne!(out.y, out.y_prime);
            }
        }
        let (lo, hi) = Proportion::new(hits, 100_000).wilson99();
        assert!(lo <= d && d <= hi);
    }

    #[test]
    fn overlap_dominates_similarity_bound() {
        let fams = [
            SeedFamily::Poisson,
            SeedFamily::zero_inflated(0.6).unwrap(),
            SeedFamily::gaussian_with_floor(0.5).unwrap(),
        ];
        for f in &fams {
            let delta = f.similarity_delta().unwrap().value();
            for (l, lp) in [(0.5, 0.9), (1.0, 3.0), (2.0, 2.1), (5.0, 9.0)] {
                let d = maximal_couple_draw(f, l, lp, 0.5).unwrap().overlap;
                assert!(d >= (-delta * f64::abs(l - lp)).exp() - 1e-12, "{} {l} {lp}", f.name());
            }
        }
    }

    #[test]
    fn bad_uniform_rejected() {
        assert!(maximal_couple_draw(&SeedFamily::Poisson, 1.0, 2.0, 1.5).is_err());
    }

    #[test]
    fn identical_states_stay_identical() {
        let s = lin(1.0, 0.3, 0.5);
        let f = SeedFamily::Poisson;
        let init = ChainState::new(s.order(), vec![3.0], vec![2.0]).unwrap();
        let log = run_coupled(&init, &init, &s, &f, 500, &mut Stream::new(1)).unwrap();
        assert!(log.records.iter().all(|r| r.hit && r.gap == 0.0));
        assert_eq!(log.first_coalescence, Some(1));
    }

    #[test]
    fn constant_intensity_coalesces_immediately() {
        let s = lin(1.0, 0.0, 0.0);
        let a = ChainState::new(s.order(), vec![9.0], vec![40.0]).unwrap();
        let b = ChainState::new(s.order(), vec![0.0], vec![0.0]).unwrap();
        let log = run_coupled(&a, &b, &s, &SeedFamily::Poisson, 50, &mut Stream::new(2)).unwrap();
        assert_eq!(log.first_coalescence, Some(1));
    }

    #[test]
    fn hit_contracts_gap() {
        let s = lin(1.0, 0.3, 0.5);
        let f = SeedFamily::Poisson;
        let mut st = Stream::new(4);
        for _ in 0..2000 {
            let l = st.uniform_in(0.0, 10.0);
            let lp = st.uniform_in(0.0, 10.0);
            let y = st.below(8) as f64;
            let mut c = CoupledState::new(
                &s,
                ChainState::new(s.order(), vec![y], vec![l]).unwrap(),
                ChainState::new(s.order(), vec![y], vec![lp]).unwrap(),
            )
            .unwrap();
            let rec = c.step(&s, &f, st.uniform()).unwrap();
            assert!(rec.gap <= 0.5 * (l - lp).abs() + 1e-12);
        }
    }

    #[test]
    fn gap_under_hits_follows_table() {
        // Force hits by sharing the observation lags: with equal y-lags and a
        // run of hits, the λ-gap after k steps is bounded by Σ d_{k+1,i} g_i.
        let s = IntensitySpec::linear(Mode::Ingarch, 0.5, vec![0.2, 0.1], vec![0.3, 0.2]).unwrap();
        let f = SeedFamily::Poisson;
        let table = contraction_coeffs(s.contraction(), 60).unwrap();
        let mut st = Stream::new(12);
        for _ in 0..300 {
            let la = vec![st.uniform_in(0.0, 6.0), st.uniform_in(0.0, 6.0)];
            let lb = vec![st.uniform_in(0.0, 6.0), st.uniform_in(0.0, 6.0)];
            let init: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| (x - y).abs()).collect();
            let y = vec![1.0, 2.0];
            let mut c = CoupledState::new(
                &s,
                ChainState::new(s.order(), y.clone(), la).unwrap(),
                ChainState::new(s.order(), y, lb).unwrap(),
            )
            .unwrap();
            for k in 1..=50 {
                let rec = c.step(&s, &f, st.uniform()).unwrap();
                if !rec.hit {
                    break;
                }
                let bound: f64 = (0..2).map(|i| table.d(k + 1, i + 1) * init[i]).sum();
                let newest = (rec.lambda - rec.lambda_prime).abs();
                assert!(newest <= bound + 1e-12, "k={k}: {newest} > {bound}");
            }
        }
    }

    #[test]
    fn gaussian_pair_locks() {
        let s = IntensitySpec::linear(Mode::Garch, 0.5, vec![0.1], vec![0.5]).unwrap();
        let f = SeedFamily::gaussian_with_floor(0.5).unwrap();
        let a = ChainState::new(s.order(), vec![1.0], vec![1.0]).unwrap();
        let b = ChainState::new(s.order(), vec![0.2], vec![2.0]).unwrap();
        let log = run_coupled(&a, &b, &s, &f, 400, &mut Stream::new(6)).unwrap();
        let n = log.first_coalescence.expect("coalescence within 400 steps");
        assert!(log.records[n - 1..].iter().all(|r| r.y == r.y_prime));
        assert_eq!(log.records.last().unwrap().gap, 0.0);
    }

    #[test]
    fn first_coalescence_index() {
        let mk = |hits: &[bool]| {
            TrajectoryLog::from_records(
                hits.iter()
                    .enumerate()
                    .map(|(i, &hit)| StepRecord {
                        t: i + 1,
                        y: 0.0,
                        y_prime: 0.0,
                        hit,
                        lambda: 0.0,
                        lambda_prime: 0.0,
                        gap: 0.0,
                    })
                    .collect(),
            )
            .first_coalescence
        };
        assert_eq!(mk(&[true, true]), Some(1));
        assert_eq!(mk(&[false, true, true]), Some(2));
        assert_eq!(mk(&[true, false]), None);
    }

    #[test]
    fn independent_starts_coalesce() {
        let s = lin(1.0, 0.3, 0.5);
        let f = SeedFamily::Poisson;
        let mut count = 0;
        for r in 0..1000u64 {
            let base = crate::rng::derive_stream(99, r);
            let a = stationary_draw(&s, &f, 200, &mut base.substream(0)).unwrap();
            let b = stationary_draw(&s, &f, 200, &mut base.substream(1)).unwrap();
            let log = run_coupled(&a, &b, &s, &f, 200, &mut base.substream(2)).unwrap();
            count += usize::from(log.first_coalescence.is_some());
        }
        assert!(count > 990, "{count}");
    }

    #[test]
    fn coupled_marginal_matches_uncoupled() {
        // Chain A of a coupled run has the law of the model: compare the
        // distribution of y over a long run with an uncoupled path.
        let s = lin(1.0, 0.3, 0.5);
        let f = SeedFamily::Poisson;
        let init = ChainState::zeros(s.order());
        let other = ChainState::new(s.order(), vec![0.0], vec![30.0]).unwrap();
        let n = 100_000;
        let mut chain = CoupledChain::new(&s, &f, init.clone(), other).unwrap();
        let mut st = Stream::new(21);
        let mut ca = [0u64; 12];
        for _ in 0..n {
            let r = chain.step(st.uniform()).unwrap();
            ca[(r.y as usize).min(11)] += 1;
        }
        let path = simulate_path(&s, &f, n, &init, &mut Stream::new(22)).unwrap();
        let mut cb = vec![0u64; 12];
        for p in &path {
            cb[(p.y as usize).min(11)] += 1;
        }
        // Serial dependence inflates the variance; compare pmfs in TV.
        let tv: f64 = ca
            .iter()
            .zip(&cb)
            .map(|(x, y)| (*x as f64 - *y as f64).abs())
            .sum::<f64>()
            / (2.0 * n as f64);
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn custom_form_runs() {
        let s = IntensitySpec::custom(
            Mode::Ingarch,
            ModelOrder::new(1, 1).unwrap(),
            CustomIntensity::new("sqrt", |y, l| 1.0 + (y[0]).sqrt() + 0.4 * l[0]),
            vec![0.4],
        )
        .unwrap();
        let a = ChainState::new(s.order(), vec![2.0], vec![3.0]).unwrap();
        let b = ChainState::new(s.order(), vec![5.0], vec![1.0]).unwrap();
        let log = run_coupled(&a, &b, &s, &SeedFamily::Poisson, 300, &mut Stream::new(1)).unwrap();
        assert_eq!(log.records.len(), 300);
    }
}
