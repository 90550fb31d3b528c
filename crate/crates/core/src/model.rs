//! Intensity (volatility) maps, drift constants and path simulation.
//!
//! A model is `λ_t = f(Y_{t-1}, …, Y_{t-p}; λ_{t-1}, …, λ_{t-q})` with
//! `Y_t ~ Q(λ_t)`. In GARCH mode the lagged observations enter `f` as squares
//! and `λ_t` is the conditional variance; in INGARCH mode they enter as
//! counts.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::contraction_coeffs;
use crate::rng::Stream;
use crate::seed::SeedFamily;
use crate::stats::MeanAccumulator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Garch,
    Ingarch,
}

impl Mode {
    /// Value stored in the observation lag window for an observation `y`.
    #[inline]
    pub fn lag_value(self, y: f64) -> f64 {
        match self {
            Mode::Garch => y * y,
            Mode::Ingarch => y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Garch => "garch",
            Mode::Ingarch => "ingarch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrder {
    p: usize,
    q: usize,
}

impl ModelOrder {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::param(format!("model order ({p}, {q}) must have p, q ≥ 1")));
        }
        Ok(ModelOrder { p, q })
    }

    /// Observation lags.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Intensity lags.
    pub fn q(&self) -> usize {
        self.q
    }
}

/// One regime `a + b y + c λ` of a threshold intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub intercept: f64,
    pub count_coef: f64,
    pub intensity_coef: f64,
}

impl Regime {
    pub fn new(intercept: f64, count_coef: f64, intensity_coef: f64) -> Self {
        Regime {
            intercept,
            count_coef,
            intensity_coef,
        }
    }

    fn eval(&self, y: f64, lambda: f64) -> f64 {
        self.intercept + self.count_coef * y + self.intensity_coef * lambda
    }
}

/// `g(λ) = base + scale·(1 - e^{-λ})`: strictly increasing with range
/// `[base, base + scale)` and Lipschitz constant `scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturatingLink {
    pub base: f64,
    pub scale: f64,
}

impl SaturatingLink {
    /// Requires `base > 0`, `0 < scale < 0.5` and `base + scale ≤ 0.5`, so the
    /// range sits inside `[base, 0.5)`.
    pub fn new(base: f64, scale: f64) -> Result<Self> {
        if !(base > 0.0 && scale > 0.0 && scale < 0.5 && base + scale <= 0.5) {
            return Err(Error::param(format!(
                "link (base {base}, scale {scale}) must satisfy base > 0, 0 < scale < 0.5, base + scale ≤ 0.5"
            )));
        }
        Ok(SaturatingLink { base, scale })
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.base + self.scale * (-(-lambda).exp_m1())
    }

    pub fn lipschitz(&self) -> f64 {
        self.scale
    }

    pub fn in_range(&self, v: f64) -> bool {
        v >= self.base && v < self.base + self.scale
    }

    pub fn inverse(&self, v: f64) -> Result<f64> {
        if !self.in_range(v) {
            return Err(Error::Inconsistent(format!(
                "{v} is outside the link range [{}, {})",
                self.base,
                self.base + self.scale
            )));
        }
        Ok(-(-(v - self.base) / self.scale).ln_1p())
    }
}

type IntensityFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// User-supplied intensity `f(y_lags, λ_lags)`.
#[derive(Clone)]
pub struct CustomIntensity {
    pub name: String,
    func: Arc<IntensityFn>,
}

impl CustomIntensity {
    pub fn new(
        name: impl Into<String>,
        func: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomIntensity {
            name: name.into(),
            func: Arc::new(func),
        }
    }
}

impl fmt::Debug for CustomIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomIntensity")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum IntensityForm {
    /// `ā₀ + Σ āᵢ yᵢ + Σ b̄ⱼ λⱼ`.
    Linear {
        intercept: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    /// Two linear regimes selected by whether the first observation lag lies
    /// in `[lower, upper]`; order (1, 1).
    Threshold {
        lower: f64,
        upper: f64,
        inside: Regime,
        outside: Regime,
    },
    /// `y/2 + g(λ)`; order (1, 1). The intensity process of this model is
    /// invertible and hence not mixing, while the counts are.
    HalfCountLink(SaturatingLink),
    Custom(CustomIntensity),
}

/// Coefficients of a linear upper bound `f ≤ ā₀ + Σ āᵢ yᵢ + Σ b̄ⱼ λⱼ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftBound {
    pub intercept: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl DriftBound {
    pub fn new(intercept: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        DriftBound {
            intercept,
            alpha,
            beta,
        }
    }

    pub fn coefficient_sum(&self) -> f64 {
        self.alpha.iter().sum::<f64>() + self.beta.iter().sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct IntensitySpec {
    order: ModelOrder,
    form: IntensityForm,
    mode: Mode,
    contraction: Vec<f64>,
    drift_bound: Option<DriftBound>,
}

fn check_coefficients(what: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        Some(x) => Err(Error::param(format!("{what} coefficient {x} must be finite and ≥ 0"))),
        None => Ok(()),
    }
}

fn check_contraction(c: &[f64]) -> Result<()> {
    check_coefficients("contraction", c)?;
    let sum: f64 = c.iter().sum();
    if sum >= 1.0 {
        return Err(Error::InfeasibleContraction { sum });
    }
    Ok(())
}

impl IntensitySpec {
    pub fn linear(mode: Mode, intercept: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let order = ModelOrder::new(alpha.len(), beta.len())?;
        check_coefficients("intercept", &[intercept])?;
        check_coefficients("observation", &alpha)?;
        check_contraction(&beta)?;
        Ok(IntensitySpec {
            order,
            contraction: beta.clone(),
            drift_bound: Some(DriftBound::new(intercept, alpha.clone(), beta.clone())),
            form: IntensityForm::Linear {
                intercept,
                alpha,
                beta,
            },
            mode,
        })
    }

    pub fn threshold(
        mode: Mode,
        lower: f64,
        upper: f64,
        inside: Regime,
        outside: Regime,
    ) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::param(format!("threshold interval [{lower}, {upper}] is empty")));
        }
        for r in [&inside, &outside] {
            check_coefficients("regime", &[r.intercept, r.count_coef, r.intensity_coef])?;
        }
        let c = inside.intensity_coef.max(outside.intensity_coef);
        check_contraction(&[c])?;
        let bound = DriftBound::new(
            inside.intercept.max(outside.intercept),
            vec![inside.count_coef.max(outside.count_coef)],
            vec![c],
        );
        Ok(IntensitySpec {
            order: ModelOrder::new(1, 1)?,
            form: IntensityForm::Threshold {
                lower,
                upper,
                inside,
                outside,
            },
            mode,
            contraction: vec![c],
            drift_bound: Some(bound),
        })
    }

    pub fn half_count_link(link: SaturatingLink) -> Result<Self> {
        let link = SaturatingLink::new(link.base, link.scale)?;
        Ok(IntensitySpec {
            order: ModelOrder::new(1, 1)?,
            form: IntensityForm::HalfCountLink(link),
            mode: Mode::Ingarch,
            contraction: vec![link.lipschitz()],
            drift_bound: Some(DriftBound::new(link.base + link.scale, vec![0.5], vec![0.0])),
        })
    }

    /// Custom intensity with declared contraction constants `c₁..c_q`. The
    /// constants are a claim; [`semicontractive_probe`] can falsify them.
    pub fn custom(
        mode: Mode,
        order: ModelOrder,
        func: CustomIntensity,
        contraction: Vec<f64>,
    ) -> Result<Self> {
        if contraction.len() != order.q() {
            return Err(Error::Shape {
                what: "contraction constants",
                expected: order.q(),
                got: contraction.len(),
            });
        }
        check_contraction(&contraction)?;
        Ok(IntensitySpec {
            order,
            form: IntensityForm::Custom(func),
            mode,
            contraction,
            drift_bound: None,
        })
    }

    /// Attaches a linear drift bound (needed by custom forms before stationary
    /// draws or drift constants can be produced).
    pub fn with_drift_bound(mut self, bound: DriftBound) -> Result<Self> {
        if bound.alpha.len() != self.order.p() {
            return Err(Error::Shape {
                what: "drift bound observation coefficients",
                expected: self.order.p(),
                got: bound.alpha.len(),
            });
        }
        if bound.beta.len() != self.order.q() {
            return Err(Error::Shape {
                what: "drift bound intensity coefficients",
                expected: self.order.q(),
                got: bound.beta.len(),
            });
        }
        check_coefficients("drift bound", &[bound.intercept])?;
        check_coefficients("drift bound", &bound.alpha)?;
        check_coefficients("drift bound", &bound.beta)?;
        self.drift_bound = Some(bound);
        Ok(self)
    }

    pub fn order(&self) -> ModelOrder {
        self.order
    }

    pub fn form(&self) -> &IntensityForm {
        &self.form
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn contraction(&self) -> &[f64] {
        &self.contraction
    }

    pub fn contraction_sum(&self) -> f64 {
        self.contraction.iter().sum()
    }

    pub fn drift_bound(&self) -> Option<&DriftBound> {
        self.drift_bound.as_ref()
    }

    /// GARCH mode needs a continuous seed, INGARCH mode a count seed.
    pub fn check_family(&self, family: &SeedFamily) -> Result<()> {
        family.validate()?;
        match (self.mode, family.is_discrete()) {
            (Mode::Ingarch, true) | (Mode::Garch, false) => Ok(()),
            (Mode::Ingarch, false) => Err(Error::param(
                "INGARCH mode needs a count-valued seed family",
            )),
            (Mode::Garch, true) => Err(Error::param("GARCH mode needs a Gaussian seed family")),
        }
    }

    /// `λ_t = f(y_lags; λ_lags)` with lag vectors ordered most recent first.
    pub fn evaluate(&self, y_lags: &[f64], lambda_lags: &[f64]) -> Result<f64> {
        if y_lags.len() != self.order.p() {
            return Err(Error::Shape {
                what: "observation lags",
                expected: self.order.p(),
                got: y_lags.len(),
            });
        }
        if lambda_lags.len() != self.order.q() {
            return Err(Error::Shape {
                what: "intensity lags",
                expected: self.order.q(),
                got: lambda_lags.len(),
            });
        }
        if let Some(l) = lambda_lags.iter().find(|l| !(**l >= 0.0)) {
            return Err(Error::domain(format!("intensity lag {l} is negative")));
        }
        let value = self.eval_unchecked(y_lags, lambda_lags);
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::ContractViolation(format!(
                "intensity evaluated to {value} at y = {y_lags:?}, λ = {lambda_lags:?}"
            )));
        }
        Ok(value)
    }

    #[inline]
    fn eval_unchecked(&self, y: &[f64], l: &[f64]) -> f64 {
        match &self.form {
            IntensityForm::Linear {
                intercept,
                alpha,
                beta,
            } => {
                intercept
                    + alpha.iter().zip(y).map(|(a, v)| a * v).sum::<f64>()
                    + beta.iter().zip(l).map(|(b, v)| b * v).sum::<f64>()
            }
            IntensityForm::Threshold {
                lower,
                upper,
                inside,
                outside,
            } => {
                if (*lower..=*upper).contains(&y[0]) {
                    inside.eval(y[0], l[0])
                } else {
                    outside.eval(y[0], l[0])
                }
            }
            IntensityForm::HalfCountLink(g) => 0.5 * y[0] + g.eval(l[0]),
            IntensityForm::Custom(c) => (c.func)(y, l),
        }
    }

    /// Stationary mean `ā₀ / (1 - m Σ āᵢ - Σ b̄ⱼ)` of a linear model, where
    /// `m` is the family's mean factor. `None` for other forms.
    pub fn linear_stationary_mean(&self, family: &SeedFamily) -> Option<f64> {
        match &self.form {
            IntensityForm::Linear {
                intercept,
                alpha,
                beta,
            } => {
                let s = family.mean_factor() * alpha.iter().sum::<f64>() + beta.iter().sum::<f64>();
                (s < 1.0).then(|| intercept / (1.0 - s))
            }
            _ => None,
        }
    }
}

/// Lag windows feeding the next intensity: `y[0] = Y_{t-1}` (squared in GARCH
/// mode) and `lambda[0] = λ_{t-1}`, both most recent first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl ChainState {
    pub fn zeros(order: ModelOrder) -> Self {
        ChainState {
            y: vec![0.0; order.p()],
            lambda: vec![0.0; order.q()],
        }
    }

    pub fn new(order: ModelOrder, y: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if y.len() != order.p() {
            return Err(Error::Shape {
                what: "observation lags",
                expected: order.p(),
                got: y.len(),
            });
        }
        if lambda.len() != order.q() {
            return Err(Error::Shape {
                what: "intensity lags",
                expected: order.q(),
                got: lambda.len(),
            });
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::domain("intensity lags must be finite and ≥ 0"));
        }
        Ok(ChainState { y, lambda })
    }

    /// Shifts both windows and inserts the newest values at the front.
    #[inline]
    pub fn push(&mut self, y_lag: f64, lambda: f64) {
        shift_in(&mut self.y, y_lag);
        shift_in(&mut self.lambda, lambda);
    }
}

#[inline]
fn shift_in(v: &mut [f64], x: f64) {
    let n = v.len();
    v.copy_within(0..n - 1, 1);
    v[0] = x;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub y: f64,
    pub lambda: f64,
}

/// One transition: computes the next intensity, draws the observation by
/// inverse transform at `u` and shifts the lag windows.
#[inline]
pub fn step(
    spec: &IntensitySpec,
    family: &SeedFamily,
    state: &mut ChainState,
    u: f64,
) -> Result<PathPoint> {
    let lambda = spec.evaluate(&state.y, &state.lambda)?;
    let y = family.sample(lambda, u)?;
    state.push(spec.mode().lag_value(y), lambda);
    Ok(PathPoint { y, lambda })
}

/// `n` steps from `init`, one uniform per step.
pub fn simulate_path(
    spec: &IntensitySpec,
    family: &SeedFamily,
    n: usize,
    init: &ChainState,
    stream: &mut Stream,
) -> Result<Vec<PathPoint>> {
    spec.check_family(family)?;
    let mut state = ChainState::new(spec.order(), init.y.clone(), init.lambda.clone())?;
    (0..n)
        .map(|_| step(spec, family, &mut state, stream.uniform()))
        .collect()
}

/// Approximate draw from the stationary law: `burn_in` steps from the zero
/// state. Fails if the model has no feasible drift constants.
pub fn stationary_draw(
    spec: &IntensitySpec,
    family: &SeedFamily,
    burn_in: usize,
    stream: &mut Stream,
) -> Result<ChainState> {
    spec.check_family(family)?;
    let bound = spec.drift_bound().ok_or_else(|| {
        Error::Config("stationary draws need a drift bound on the intensity".into())
    })?;
    drift_constants(bound, family)?;
    let mut state = ChainState::zeros(spec.order());
    for _ in 0..burn_in {
        step(spec, family, &mut state, stream.uniform())?;
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeOutcome {
    Ok { probes: usize },
    Witness {
        y: Vec<f64>,
        lambda: Vec<f64>,
        lambda_prime: Vec<f64>,
        lhs: f64,
        rhs: f64,
    },
}

impl ProbeOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ProbeOutcome::Ok { .. })
    }
}

/// Random search for a violation of
/// `|f(y; λ) - f(y; λ')| ≤ Σ cᵢ |λᵢ - λᵢ'|`.
///
/// Observation lags are drawn on `0..=30` (integers in INGARCH mode), with a
/// quarter of them pinned to threshold edges for threshold forms. Intensity
/// lags are uniform on `[0, 30]`; half of the `λ'` vectors are small
/// perturbations of `λ`.
pub fn semicontractive_probe(
    spec: &IntensitySpec,
    probes: usize,
    stream: &mut Stream,
) -> ProbeOutcome {
    let (p, q) = (spec.order().p(), spec.order().q());
    let edges: Vec<f64> = match spec.form() {
        IntensityForm::Threshold { lower, upper, .. } => vec![*lower, *upper],
        _ => Vec::new(),
    };
    let c = spec.contraction();
    for _ in 0..probes {
        let y: Vec<f64> = (0..p)
            .map(|_| {
                if !edges.is_empty() && stream.below(4) == 0 {
                    edges[stream.below(edges.len() as u64) as usize]
                } else {
                    match spec.mode() {
                        Mode::Ingarch => stream.below(31) as f64,
                        Mode::Garch => stream.uniform_in(0.0, 30.0),
                    }
                }
            })
            .collect();
        let lambda: Vec<f64> = (0..q).map(|_| stream.uniform_in(0.0, 30.0)).collect();
        let near = stream.below(2) == 0;
        let lambda_prime: Vec<f64> = lambda
            .iter()
            .map(|&l| {
                if near {
                    (l + stream.uniform_in(-1.0, 1.0)).max(0.0)
                } else {
                    stream.uniform_in(0.0, 30.0)
                }
            })
            .collect();
        let a = spec.eval_unchecked(&y, &lambda);
        let b = spec.eval_unchecked(&y, &lambda_prime);
        let lhs = (a - b).abs();
        let rhs: f64 = c
            .iter()
            .zip(lambda.iter().zip(&lambda_prime))
            .map(|(ci, (l, lp))| ci * (l - lp).abs())
            .sum();
        if !(lhs <= rhs + 1e-12 * (1.0 + rhs)) {
            return ProbeOutcome::Witness {
                y,
                lambda,
                lambda_prime,
                lhs,
                rhs,
            };
        }
    }
    ProbeOutcome::Ok { probes }
}

/// One strict inequality from the drift construction, as `lhs < rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftInequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl DriftInequality {
    pub fn holds(&self) -> bool {
        self.lhs < self.rhs
    }

    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }
}

/// Constants of the linear Lyapunov function
/// `V(x) = Σ_{i=1}^{p-1} aᵢ yᵢ + Σ_{j=0}^{q-1} bⱼ λⱼ` and its drift
/// `E[V(X_t) | X_{t-1}] ≤ κ V(X_{t-1}) + a₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    /// `a₁ … a_{p-1}`.
    pub count_weights: Vec<f64>,
    /// `b₀ … b_{q-1}` with `b₀ = 1`.
    pub intensity_weights: Vec<f64>,
    pub kappa: f64,
    pub a0: f64,
    pub epsilon: f64,
    pub inequalities: Vec<DriftInequality>,
}

impl DriftConstants {
    /// `V` evaluated on a chain state. `y[0]` (the newest observation) is not
    /// part of the Markov state and is ignored.
    pub fn lyapunov(&self, state: &ChainState) -> f64 {
        let a: f64 = self
            .count_weights
            .iter()
            .zip(state.y.iter().skip(1))
            .map(|(w, y)| w * y)
            .sum();
        let b: f64 = self
            .intensity_weights
            .iter()
            .zip(&state.lambda)
            .map(|(w, l)| w * l)
            .sum();
        a + b
    }

    /// `κ V + a₀`.
    pub fn drift_bound(&self, v: f64) -> f64 {
        self.kappa * v + self.a0
    }
}

/// Builds drift constants from a linear bound on `f`.
///
/// With `ā = Σ āᵢ`, `b̄ = Σ b̄ⱼ` and `ε = (1 - ā - b̄)/4`:
/// `b₀ = 1`, `a₀ = ā₀`, `a₁ = ā - ā₁ + ε`, `b₁ = b̄ - b̄₁ + ε`, then
/// `bⱼ = bⱼ₋₁ - b̄ⱼ - δ` and `aᵢ = aᵢ₋₁ - āᵢ - γ` with `δ = ε/(2(q-2))`,
/// `γ = ε/(2(p-2))`. `κ` is the largest coefficient ratio among the strict
/// inequalities that make the drift hold; observation terms are scaled by the
/// family's mean factor.
pub fn drift_constants(bound: &DriftBound, family: &SeedFamily) -> Result<DriftConstants> {
    let alpha = &bound.alpha;
    let beta = &bound.beta;
    let (p, q) = (alpha.len(), beta.len());
    ModelOrder::new(p, q)?;
    check_coefficients("drift bound", &[bound.intercept])?;
    check_coefficients("drift bound", alpha)?;
    check_coefficients("drift bound", beta)?;
    let a_sum: f64 = alpha.iter().sum();
    let b_sum: f64 = beta.iter().sum();
    if a_sum + b_sum >= 1.0 {
        return Err(Error::InfeasibleDrift {
            sum: a_sum + b_sum,
        });
    }
    let m = family.mean_factor();
    let eps = (1.0 - a_sum - b_sum) / 4.0;

    let mut a = Vec::with_capacity(p.saturating_sub(1));
    if p >= 2 {
        a.push(a_sum - alpha[0] + eps);
        let gamma = if p > 2 { eps / (2.0 * (p - 2) as f64) } else { 0.0 };
        for i in 2..p {
            let prev = a[i - 2];
            a.push(prev - alpha[i - 1] - gamma);
        }
    }
    let mut b = vec![1.0];
    if q >= 2 {
        b.push(b_sum - beta[0] + eps);
        let delta = if q > 2 { eps / (2.0 * (q - 2) as f64) } else { 0.0 };
        for j in 2..q {
            let prev = b[j - 1];
            b.push(prev - beta[j - 1] - delta);
        }
    }
    if let Some(w) = a.iter().chain(&b).find(|w| !(**w > 0.0)) {
        return Err(Error::DriftConstruction(format!(
            "constructed weight {w} is not positive (a = {a:?}, b = {b:?})"
        )));
    }

    let mut ineq = Vec::new();
    let lead = m * a.first().copied().unwrap_or(0.0)
        + m * alpha[0]
        + beta[0]
        + b.get(1).copied().unwrap_or(0.0);
    ineq.push(DriftInequality {
        name: "newest intensity".into(),
        lhs: lead,
        rhs: b[0],
    });
    for j in 2..q {
        ineq.push(DriftInequality {
            name: format!("intensity lag {j}"),
            lhs: beta[j - 1] + b[j],
            rhs: b[j - 1],
        });
    }
    if q >= 2 {
        ineq.push(DriftInequality {
            name: "oldest intensity lag".into(),
            lhs: beta[q - 1],
            rhs: b[q - 1],
        });
    }
    for i in 2..p {
        ineq.push(DriftInequality {
            name: format!("observation lag {i}"),
            lhs: alpha[i - 1] + a[i - 1],
            rhs: a[i - 2],
        });
    }
    if p >= 2 {
        ineq.push(DriftInequality {
            name: "oldest observation lag".into(),
            lhs: alpha[p - 1],
            rhs: a[p - 2],
        });
    }
    if let Some(bad) = ineq.iter().find(|i| !i.holds()) {
        return Err(Error::DriftConstruction(format!(
            "inequality '{}' fails: {} ≥ {}",
            bad.name, bad.lhs, bad.rhs
        )));
    }
    let kappa = ineq.iter().map(DriftInequality::ratio).fold(0.0, f64::max);
    Ok(DriftConstants {
        count_weights: a,
        intensity_weights: b,
        kappa,
        a0: bound.intercept,
        epsilon: eps,
        inequalities: ineq,
    })
}

/// Monte Carlo check of the drift at one probe state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftProbe {
    pub v: f64,
    pub bound: f64,
    pub mean: f64,
    pub std_error: f64,
}

impl DriftProbe {
    /// Sample mean within three standard errors of the bound.
    pub fn passes(&self) -> bool {
        self.mean <= self.bound + 3.0 * self.std_error
    }
}

/// Estimates `E[V(X_t) | X_{t-1} = x]` from `reps` transitions. The newest
/// observation of the probe is redrawn from `Q(λ[0])` each time since it is
/// not part of `x`.
pub fn drift_probe(
    spec: &IntensitySpec,
    family: &SeedFamily,
    drift: &DriftConstants,
    probe: &ChainState,
    reps: usize,
    stream: &mut Stream,
) -> Result<DriftProbe> {
    let mut acc = MeanAccumulator::default();
    for _ in 0..reps {
        let mut s = probe.clone();
        let y0 = family.sample(s.lambda[0], stream.uniform())?;
        s.y[0] = spec.mode().lag_value(y0);
        step(spec, family, &mut s, stream.uniform())?;
        acc.push(drift.lyapunov(&s));
    }
    let v = drift.lyapunov(probe);
    Ok(DriftProbe {
        v,
        bound: drift.drift_bound(v),
        mean: acc.mean(),
        std_error: acc.std_error(),
    })
}

/// Probe states spread over several orders of magnitude of intensity.
pub fn probe_states(spec: &IntensitySpec, count: usize, stream: &mut Stream) -> Vec<ChainState> {
    (0..count)
        .map(|i| {
            let scale = 10f64.powf(-1.0 + 3.0 * i as f64 / count.max(1) as f64);
            let lambda: Vec<f64> = (0..spec.order().q())
                .map(|_| scale * stream.uniform_in(0.0, 2.0))
                .collect();
            let y: Vec<f64> = (0..spec.order().p())
                .map(|_| {
                    let v = scale * stream.uniform_in(0.0, 2.0);
                    match spec.mode() {
                        Mode::Ingarch => v.round(),
                        Mode::Garch => v,
                    }
                })
                .collect();
            ChainState { y, lambda }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// Number of forward applications of `f`.
    pub steps: usize,
    pub estimate: f64,
    /// `Σᵢ d_{k+1,i} · priorᵢ`.
    pub bound: f64,
}

/// Forward iteration from zero intensity lags along a true observation path.
///
/// `y_history` is chronological (oldest first) and holds the `p` observation
/// lags for the first application followed by the `k - 1` observations
/// produced in between, so `k = len - p + 1` applications are made (`k = 0`
/// when only `p - 1` values are given; the estimate is then the zero start).
/// `prior[i]` bounds the `i`-th true initial intensity lag, most recent first.
/// The returned bound dominates `|λ_k - estimate|`.
pub fn reconstruct_intensity(
    spec: &IntensitySpec,
    y_history: &[f64],
    prior: &[f64],
) -> Result<Reconstruction> {
    let (p, q) = (spec.order().p(), spec.order().q());
    if y_history.len() + 1 < p {
        return Err(Error::Shape {
            what: "observations in the history (at least p - 1)",
            expected: p - 1,
            got: y_history.len(),
        });
    }
    if prior.len() != q {
        return Err(Error::Shape {
            what: "prior intensity bounds",
            expected: q,
            got: prior.len(),
        });
    }
    let k = y_history.len() + 1 - p;
    let mut lambda = vec![0.0; q];
    let mut estimate = 0.0;
    for j in 0..k {
        // Observation lags for application j, most recent first.
        let window: Vec<f64> = y_history[j..j + p].iter().rev().copied().collect();
        estimate = spec.evaluate(&window, &lambda)?;
        shift_in(&mut lambda, estimate);
    }
    let table = contraction_coeffs(spec.contraction(), k + 1)?;
    let bound = prior
        .iter()
        .enumerate()
        .map(|(i, b)| table.d(k + 1, i + 1) * b)
        .sum();
    Ok(Reconstruction {
        steps: k,
        estimate,
        bound,
    })
}

/// Recovers `(Y_{t-1}, λ_{t-1})` from `λ_t` for `f(y; λ) = y/2 + g(λ)`:
/// `Y_{t-1} = ⌊2λ_t⌋` and `λ_{t-1} = g^{-1}(λ_t - Y_{t-1}/2)`.
pub fn counterexample_recover(link: &SaturatingLink, lambda_t: f64) -> Result<(u64, f64)> {
    if !(lambda_t >= 0.0 && lambda_t.is_finite()) {
        return Err(Error::domain(format!("intensity {lambda_t} must be finite and ≥ 0")));
    }
    let y = (2.0 * lambda_t).floor();
    let rest = lambda_t - 0.5 * y;
    let prev = link.inverse(rest)?;
    Ok((y as u64, prev))
}
