//! Observation families `Q(λ)`.
//!
//! Count families are handled through truncated pmf tables: terms are
//! accumulated from zero until the cumulative mass reaches `1 - 1e-12`, and
//! the residual is folded into the last bucket so every table sums to one.
//! All sampling is inverse-transform through [`SeedFamily::quantile`], so a
//! draw is a pure function of its uniform variate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Mass left in the upper tail when a pmf table is cut.
pub const TAIL_CUTOFF: f64 = 1e-12;

/// Absolute tolerance of the bisection used to invert Gaussian split CDFs.
pub const BISECTION_TOL: f64 = 1e-12;

/// Poisson terms switch from the multiplicative recurrence to log space above
/// this intensity, where `e^{-λ}` starts to lose range.
const LOG_SPACE_LAMBDA: f64 = 500.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    NonnegIntegers,
    Reals,
}

/// Finite jump distribution on `{0, 1, ..., m}` for the compound Poisson seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpPmf {
    probs: Vec<f64>,
}

impl JumpPmf {
    /// Builds the pmf from `(jump size, probability)` pairs. Repeated sizes
    /// are summed; total mass must be 1 within `1e-12`.
    pub fn new(entries: &[(u64, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::param("jump pmf needs at least one entry"));
        }
        let max = entries.iter().map(|e| e.0).max().unwrap_or(0) as usize;
        if max > 1 << 20 {
            return Err(Error::param("jump sizes above 2^20 are not supported"));
        }
        let mut probs = vec![0.0; max + 1];
        for &(k, p) in entries {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::param(format!("jump probability {p} is not a probability")));
            }
            probs[k as usize] += p;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("jump pmf sums to {total}, expected 1")));
        }
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        Ok(JumpPmf { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn entries(&self) -> Vec<(u64, f64)> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| (k as u64, p))
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SeedFamily {
    /// `Poisson(λ)`.
    Poisson,
    /// `N(0, λ)`; λ is the variance.
    GaussianZeroMean,
    /// `Poisson(λ Z)` with `Z ~ Bernoulli(pi)`.
    ZeroInflatedPoisson { pi: f64 },
    /// `Σ_{i ≤ N} J_i` with `N ~ Poisson(λ)` and `J_i` i.i.d. from `jumps`.
    CompoundPoisson { jumps: JumpPmf },
    /// `N(0, λ)` for volatilities known to stay above `omega`.
    GaussianWithFloor { omega: f64 },
}

/// Similarity constant `δ`: `TV(Q(λ), Q(λ')) ≤ 1 - exp(-δ |λ - λ'|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConstant(pub f64);

impl SimilarityConstant {
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - exp(-δ |λ - λ'|)`.
    pub fn tv_bound(self, lambda: f64, lambda_prime: f64) -> f64 {
        1.0 - (-self.0 * (lambda - lambda_prime).abs()).exp()
    }
}

impl SeedFamily {
    pub fn zero_inflated(pi: f64) -> Result<Self> {
        let f = SeedFamily::ZeroInflatedPoisson { pi };
        f.validate()?;
        Ok(f)
    }

    pub fn compound(entries: &[(u64, f64)]) -> Result<Self> {
        Ok(SeedFamily::CompoundPoisson {
            jumps: JumpPmf::new(entries)?,
        })
    }

    pub fn gaussian_with_floor(omega: f64) -> Result<Self> {
        let f = SeedFamily::GaussianWithFloor { omega };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SeedFamily::ZeroInflatedPoisson { pi } if !(pi > 0.0 && pi <= 1.0) => Err(
                Error::param(format!("zero-inflation probability {pi} must lie in (0, 1]")),
            ),
            SeedFamily::GaussianWithFloor { omega } if !(omega > 0.0 && omega.is_finite()) => {
                Err(Error::param(format!("volatility floor {omega} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> Support {
        if self.is_discrete() {
            Support::NonnegIntegers
        } else {
            Support::Reals
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(
            self,
            SeedFamily::GaussianZeroMean | SeedFamily::GaussianWithFloor { .. }
        )
    }

    /// Short identifier used in configs and reports.
    pub fn name(&self) -> &'static str {
        match self {
            SeedFamily::Poisson => "poisson",
            SeedFamily::GaussianZeroMean => "gaussian",
            SeedFamily::ZeroInflatedPoisson { .. } => "zip",
            SeedFamily::CompoundPoisson { .. } => "compound",
            SeedFamily::GaussianWithFloor { .. } => "gaussian-floor",
        }
    }

    /// `m` with `E[Y] = m λ` for count families and `E[Y²] = m λ` for Gaussian
    /// ones. This is the factor the drift construction needs.
    pub fn mean_factor(&self) -> f64 {
        match self {
            SeedFamily::Poisson => 1.0,
            SeedFamily::ZeroInflatedPoisson { pi } => *pi,
            SeedFamily::CompoundPoisson { jumps } => jumps.mean(),
            SeedFamily::GaussianZeroMean | SeedFamily::GaussianWithFloor { .. } => 1.0,
        }
    }

    pub fn similarity_delta(&self) -> Result<SimilarityConstant> {
        self.validate()?;
        match *self {
            SeedFamily::Poisson | SeedFamily::CompoundPoisson { .. } => Ok(SimilarityConstant(1.0)),
            SeedFamily::ZeroInflatedPoisson { pi } => Ok(SimilarityConstant(pi)),
            SeedFamily::GaussianWithFloor { omega } => Ok(SimilarityConstant(1.0 / omega)),
            SeedFamily::GaussianZeroMean => Err(Error::MissingFloor),
        }
    }

    fn check_lambda(lambda: f64) -> Result<()> {
        if lambda >= 0.0 && lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!("intensity {lambda} must be a finite non-negative number")))
        }
    }

    /// Truncated pmf table for count families, `None` for Gaussian ones.
    pub fn pmf_table(&self, lambda: f64) -> Result<Option<Vec<f64>>> {
        self.validate()?;
        Self::check_lambda(lambda)?;
        Ok(match self {
            SeedFamily::Poisson => Some(poisson_table(lambda)),
            SeedFamily::ZeroInflatedPoisson { pi } => Some(zip_table(*pi, lambda)),
            SeedFamily::CompoundPoisson { jumps } => Some(compound_table(jumps, lambda)),
            _ => None,
        })
    }

    /// Pmf (count families) or Lebesgue density (Gaussian families).
    /// Points outside the support have density zero.
    pub fn density(&self, lambda: f64, y: f64) -> Result<f64> {
        self.validate()?;
        Self::check_lambda(lambda)?;
        if self.is_discrete() {
            let k = match as_count(y) {
                Some(k) => k,
                None => return Ok(0.0),
            };
            return Ok(match self {
                SeedFamily::Poisson => poisson_pmf(lambda, k),
                SeedFamily::ZeroInflatedPoisson { pi } => {
                    let base = pi * poisson_pmf(lambda, k);
                    if k == 0 {
                        base + (1.0 - pi)
                    } else {
                        base
                    }
                }
                SeedFamily::CompoundPoisson { jumps } => {
                    compound_table(jumps, lambda).get(k as usize).copied().unwrap_or(0.0)
                }
                _ => unreachable!(),
            });
        }
        if !y.is_finite() {
            return Ok(0.0);
        }
        if lambda == 0.0 {
            return Ok(if y == 0.0 { f64::INFINITY } else { 0.0 });
        }
        let sd = lambda.sqrt();
        Ok(normal::pdf(y / sd) / sd)
    }

    pub fn cdf(&self, lambda: f64, y: f64) -> Result<f64> {
        self.validate()?;
        Self::check_lambda(lambda)?;
        if y.is_nan() {
            return Err(Error::domain("cdf at NaN"));
        }
        match self.pmf_table(lambda)? {
            Some(table) => {
                if y < 0.0 {
                    return Ok(0.0);
                }
                let k = y.floor();
                if k >= (table.len() - 1) as f64 {
                    return Ok(1.0);
                }
                Ok(table[..=k as usize].iter().sum::<f64>().min(1.0))
            }
            None => Ok(normal::cdf_scaled(y, lambda.sqrt())),
        }
    }

    /// Generalized inverse `inf{x : F(x) ≥ t}`. For count families this is the
    /// smallest support point whose cumulative mass reaches `t`; `t = 0` gives
    /// the smallest support point.
    pub fn quantile(&self, lambda: f64, t: f64) -> Result<f64> {
        self.validate()?;
        Self::check_lambda(lambda)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!("probability {t} outside [0, 1]")));
        }
        Ok(match self {
            SeedFamily::Poisson => poisson_quantile(lambda, t),
            SeedFamily::ZeroInflatedPoisson { pi } => table_quantile(&zip_table(*pi, lambda), t),
            SeedFamily::CompoundPoisson { jumps } => {
                table_quantile(&compound_table(jumps, lambda), t)
            }
            SeedFamily::GaussianZeroMean | SeedFamily::GaussianWithFloor { .. } => {
                if lambda == 0.0 {
                    0.0
                } else {
                    lambda.sqrt() * normal::quantile(t)
                }
            }
        })
    }

    /// Inverse-transform draw; identical to `quantile(lambda, u)`.
    pub fn sample(&self, lambda: f64, u: f64) -> Result<f64> {
        self.quantile(lambda, u)
    }

    /// Overlap `Δ = 1 - TV(Q(λ), Q(λ'))` together with the three pieces of the
    /// maximal coupling: the common part `min(q, q')` and the two excesses.
    pub fn tv_overlap(&self, lambda: f64, lambda_prime: f64) -> Result<(f64, SplitCdf)> {
        let split = self.split(lambda, lambda_prime)?;
        Ok((split.overlap(), split))
    }

    /// Same as [`tv_overlap`](Self::tv_overlap) without the tuple.
    pub fn split(&self, lambda: f64, lambda_prime: f64) -> Result<SplitCdf> {
        self.validate()?;
        Self::check_lambda(lambda)?;
        Self::check_lambda(lambda_prime)?;
        if self.is_discrete() {
            let first = self.pmf_table(lambda)?.expect("count family");
            if lambda == lambda_prime {
                return Ok(SplitCdf::Discrete(DiscreteSplit {
                    overlap: 1.0,
                    common: first,
                    first: Vec::new(),
                    second: Vec::new(),
                }));
            }
            let second = self.pmf_table(lambda_prime)?.expect("count family");
            Ok(SplitCdf::Discrete(DiscreteSplit::new(&first, &second)))
        } else {
            Ok(SplitCdf::Gaussian(GaussianSplit::new(lambda, lambda_prime)))
        }
    }

    /// `TV(Q(λ), Q(λ'))`.
    pub fn total_variation(&self, lambda: f64, lambda_prime: f64) -> Result<f64> {
        Ok(1.0 - self.split(lambda, lambda_prime)?.overlap())
    }
}

fn as_count(y: f64) -> Option<u64> {
    if y >= 0.0 && y.is_finite() && y.fract() == 0.0 {
        Some(y as u64)
    } else {
        None
    }
}

/// Exact Poisson pmf, no truncation.
fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (k * lambda.ln() - lambda - libm::lgamma(k + 1.0)).exp()
}

/// Successive Poisson probabilities `P(N = 0), P(N = 1), ...`.
struct PoissonTerms {
    lambda: f64,
    k: u64,
    current: f64,
    log_lambda: f64,
}

impl PoissonTerms {
    fn new(lambda: f64) -> Self {
        PoissonTerms {
            lambda,
            k: 0,
            current: (-lambda).exp(),
            log_lambda: lambda.ln(),
        }
    }
}

impl Iterator for PoissonTerms {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        let p = if self.lambda < LOG_SPACE_LAMBDA {
            if self.k > 0 {
                self.current *= self.lambda / self.k as f64;
            }
            self.current
        } else {
            let k = self.k as f64;
            (k * self.log_lambda - self.lambda - libm::lgamma(k + 1.0)).exp()
        };
        self.k += 1;
        Some(p)
    }
}

/// Sequential scan with the same stopping rule as [`poisson_table`] so both
/// paths return the same point.
fn poisson_quantile(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut cum = 0.0;
    for (k, p) in PoissonTerms::new(lambda).enumerate() {
        cum += p;
        if cum >= t || cum >= 1.0 - TAIL_CUTOFF {
            return k as f64;
        }
    }
    unreachable!("Poisson terms are infinite")
}

fn poisson_table(lambda: f64) -> Vec<f64> {
    if lambda == 0.0 {
        return vec![1.0];
    }
    let mut probs = Vec::with_capacity((lambda + 12.0 * lambda.sqrt() + 16.0) as usize);
    let mut cum = 0.0;
    for p in PoissonTerms::new(lambda) {
        probs.push(p);
        cum += p;
        if cum >= 1.0 - TAIL_CUTOFF {
            break;
        }
    }
    close_table(&mut probs);
    probs
}

/// Folds the residual mass into the last bucket.
fn close_table(probs: &mut [f64]) {
    let n = probs.len();
    let head: f64 = probs[..n - 1].iter().sum();
    probs[n - 1] = (1.0 - head).max(0.0);
}

fn zip_table(pi: f64, lambda: f64) -> Vec<f64> {
    let mut probs: Vec<f64> = poisson_table(lambda).into_iter().map(|p| pi * p).collect();
    probs[0] += 1.0 - pi;
    close_table(&mut probs);
    probs
}

/// `P(S = y)` by summing `P(N = n) P(J_1 + ... + J_n = y)` over the truncated
/// Poisson table, with the n-fold convolutions built up one jump at a time.
fn compound_table(jumps: &JumpPmf, lambda: f64) -> Vec<f64> {
    let counts = poisson_table(lambda);
    let j = jumps.probs();
    let max_len = (counts.len() - 1) * (j.len() - 1) + 1;
    let mut out = vec![0.0; max_len];
    let mut conv = vec![1.0];
    for (n, &pn) in counts.iter().enumerate() {
        for (y, &c) in conv.iter().enumerate() {
            out[y] += pn * c;
        }
        if n + 1 < counts.len() {
            let mut next = vec![0.0; conv.len() + j.len() - 1];
            for (a, &ca) in conv.iter().enumerate() {
                if ca == 0.0 {
                    continue;
                }
                for (b, &jb) in j.iter().enumerate() {
                    next[a + b] += ca * jb;
                }
            }
            conv = next;
        }
    }
    let mut cum = 0.0;
    let mut cut = out.len();
    for (y, &p) in out.iter().enumerate() {
        cum += p;
        if cum >= 1.0 - TAIL_CUTOFF {
            cut = y + 1;
            break;
        }
    }
    out.truncate(cut);
    close_table(&mut out);
    out
}

fn table_quantile(table: &[f64], t: f64) -> f64 {
    let mut cum = 0.0;
    for (k, &p) in table.iter().enumerate() {
        cum += p;
        if cum >= t {
            return k as f64;
        }
    }
    (table.len() - 1) as f64
}

/// Inverse of a sub-CDF given by pmf pieces: smallest `k` with cumulative mass
/// `≥ u`. Rounding can leave `u` marginally above the total; the last point
/// with positive mass is returned then.
fn piece_inverse(piece: &[f64], u: f64) -> f64 {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &p) in piece.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        cum += p;
        if cum >= u && p > 0.0 {
            return k as f64;
        }
    }
    last_positive as f64
}

fn piece_cdf(piece: &[f64], x: f64) -> f64 {
    if x < 0.0 || piece.is_empty() {
        return 0.0;
    }
    let k = (x.floor() as usize).min(piece.len() - 1);
    piece[..=k].iter().sum()
}

/// The three sub-distributions of a maximal coupling of `Q(λ)` and `Q(λ')`.
///
/// `common` has total mass `Δ`; `first` and `second` (the excesses of `Q(λ)`
/// and `Q(λ')` over the common part) each have mass `1 - Δ`. Inverses are
/// taken against the unnormalized sub-CDFs.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitCdf {
    Discrete(DiscreteSplit),
    Gaussian(GaussianSplit),
}

impl SplitCdf {
    pub fn overlap(&self) -> f64 {
        match self {
            SplitCdf::Discrete(d) => d.overlap,
            SplitCdf::Gaussian(g) => g.overlap,
        }
    }

    /// `F(x)`, the sub-CDF of `min(q, q')`.
    pub fn common_cdf(&self, x: f64) -> f64 {
        match self {
            SplitCdf::Discrete(d) => piece_cdf(&d.common, x),
            SplitCdf::Gaussian(g) => g.common_cdf(x),
        }
    }

    /// `G(x)`, the sub-CDF of `q - min(q, q')`.
    pub fn first_cdf(&self, x: f64) -> f64 {
        match self {
            SplitCdf::Discrete(d) => piece_cdf(&d.first, x),
            SplitCdf::Gaussian(g) => g.excess_cdf(x, true),
        }
    }

    /// `G'(x)`, the sub-CDF of `q' - min(q, q')`.
    pub fn second_cdf(&self, x: f64) -> f64 {
        match self {
            SplitCdf::Discrete(d) => piece_cdf(&d.second, x),
            SplitCdf::Gaussian(g) => g.excess_cdf(x, false),
        }
    }

    /// `F^{-1}(u)` for `u ∈ [0, Δ]`.
    pub fn common_inverse(&self, u: f64) -> f64 {
        match self {
            SplitCdf::Discrete(d) => piece_inverse(&d.common, u),
            SplitCdf::Gaussian(g) => g.common_inverse(u),
        }
    }

    /// `G^{-1}(v)` for `v ∈ (0, 1 - Δ]`.
    pub fn first_inverse(&self, v: f64) -> f64 {
        match self {
            SplitCdf::Discrete(d) => piece_inverse(&d.first, v),
            SplitCdf::Gaussian(g) => g.excess_inverse(v, true),
        }
    }

    /// `G'^{-1}(v)` for `v ∈ (0, 1 - Δ]`.
    pub fn second_inverse(&self, v: f64) -> f64 {
        match self {
            SplitCdf::Discrete(d) => piece_inverse(&d.second, v),
            SplitCdf::Gaussian(g) => g.excess_inverse(v, false),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSplit {
    pub overlap: f64,
    pub common: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl DiscreteSplit {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let n = a.len().max(b.len());
        let mut common = Vec::with_capacity(n);
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for k in 0..n {
            let pa = a.get(k).copied().unwrap_or(0.0);
            let pb = b.get(k).copied().unwrap_or(0.0);
            let m = pa.min(pb);
            common.push(m);
            first.push(pa - m);
            second.push(pb - m);
        }
        let overlap = common.iter().sum::<f64>().min(1.0);
        DiscreteSplit {
            overlap,
            common,
            first,
            second,
        }
    }
}

/// Split of `N(0, λ)` and `N(0, λ')`.
///
/// With `v < v'` the densities cross at `±x*`, `x*² = ln(v'/v) v v' / (v' - v)`.
/// Inside `(-x*, x*)` the narrow density dominates, so the common part there
/// is the wide density; outside it is the narrow one.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSplit {
    pub overlap: f64,
    sd_narrow: f64,
    sd_wide: f64,
    crossing: f64,
    /// `true` when `λ` (the first argument) is the narrow one.
    first_is_narrow: bool,
    identical: bool,
}

impl GaussianSplit {
    fn new(lambda: f64, lambda_prime: f64) -> Self {
        let first_is_narrow = lambda <= lambda_prime;
        let (v_n, v_w) = if first_is_narrow {
            (lambda, lambda_prime)
        } else {
            (lambda_prime, lambda)
        };
        let (sd_narrow, sd_wide) = (v_n.sqrt(), v_w.sqrt());
        if v_n == v_w {
            return GaussianSplit {
                overlap: 1.0,
                sd_narrow,
                sd_wide,
                crossing: f64::NAN,
                first_is_narrow,
                identical: true,
            };
        }
        if v_n == 0.0 {
            // Point mass at 0 against a continuous law.
            return GaussianSplit {
                overlap: 0.0,
                sd_narrow,
                sd_wide,
                crossing: 0.0,
                first_is_narrow,
                identical: false,
            };
        }
        let crossing = ((v_w / v_n).ln() * v_n * v_w / (v_w - v_n)).sqrt();
        let mut g = GaussianSplit {
            overlap: 0.0,
            sd_narrow,
            sd_wide,
            crossing,
            first_is_narrow,
            identical: false,
        };
        g.overlap = 2.0 * g.narrow(-crossing) + g.wide(crossing) - g.wide(-crossing);
        g
    }

    fn narrow(&self, x: f64) -> f64 {
        normal::cdf_scaled(x, self.sd_narrow)
    }

    fn wide(&self, x: f64) -> f64 {
        normal::cdf_scaled(x, self.sd_wide)
    }

    fn degenerate(&self) -> bool {
        !self.identical && self.sd_narrow == 0.0
    }

    fn common_cdf(&self, x: f64) -> f64 {
        if self.identical {
            return self.wide(x);
        }
        if self.degenerate() {
            return 0.0;
        }
        let c = self.crossing;
        if x <= -c {
            self.narrow(x)
        } else if x <= c {
            self.narrow(-c) + self.wide(x) - self.wide(-c)
        } else {
            self.narrow(-c) + self.wide(c) - self.wide(-c) + self.narrow(x) - self.narrow(c)
        }
    }

    fn narrow_excess_cdf(&self, x: f64) -> f64 {
        if self.degenerate() {
            return self.narrow(x);
        }
        let c = self.crossing;
        let x = x.min(c);
        if x <= -c {
            0.0
        } else {
            ((self.narrow(x) - self.narrow(-c)) - (self.wide(x) - self.wide(-c))).max(0.0)
        }
    }

    fn wide_excess_cdf(&self, x: f64) -> f64 {
        if self.degenerate() {
            return self.wide(x);
        }
        let c = self.crossing;
        if x <= -c {
            (self.wide(x) - self.narrow(x)).max(0.0)
        } else if x <= c {
            (self.wide(-c) - self.narrow(-c)).max(0.0)
        } else {
            ((self.wide(-c) - self.narrow(-c)) + (self.wide(x) - self.wide(c))
                - (self.narrow(x) - self.narrow(c)))
            .max(0.0)
        }
    }

    fn excess_cdf(&self, x: f64, first: bool) -> f64 {
        if self.identical {
            return 0.0;
        }
        if first == self.first_is_narrow {
            self.narrow_excess_cdf(x)
        } else {
            self.wide_excess_cdf(x)
        }
    }

    fn bracket(&self) -> f64 {
        40.0 * self.sd_wide + 1.0
    }

    fn common_inverse(&self, u: f64) -> f64 {
        if self.identical {
            if self.sd_wide == 0.0 {
                return 0.0;
            }
            return self.sd_wide * normal::quantile(u);
        }
        let b = self.bracket();
        bisect_inverse(|x| self.common_cdf(x), u, -b, b)
    }

    fn excess_inverse(&self, v: f64, first: bool) -> f64 {
        let b = self.bracket();
        if first == self.first_is_narrow {
            if self.degenerate() {
                return 0.0;
            }
            let c = self.crossing;
            bisect_inverse(|x| self.narrow_excess_cdf(x), v, -c, c)
        } else {
            if self.degenerate() {
                return self.sd_wide * normal::quantile(v.clamp(0.0, 1.0));
            }
            bisect_inverse(|x| self.wide_excess_cdf(x), v, -b, b)
        }
    }
}

/// `inf{x ∈ [lo, hi] : cdf(x) ≥ u}` for a nondecreasing `cdf`, to
/// [`BISECTION_TOL`]. Returns `hi` when `u` exceeds `cdf(hi)`.
fn bisect_inverse(cdf: impl Fn(f64) -> f64, u: f64, mut lo: f64, mut hi: f64) -> f64 {
    if cdf(lo) >= u {
        return lo;
    }
    if cdf(hi) < u {
        return hi;
    }
    for _ in 0..200 {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if cdf(mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
