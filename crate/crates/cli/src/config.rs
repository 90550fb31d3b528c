//! Flat `key = value` run configuration.
//!
//! Keys live in three sections: `model.*`, `family.*` and `experiment.*`.
//! Lists are comma separated, jump pmfs are `count:prob` pairs. Lines
//! starting with `#` are comments. Unknown or repeated keys are errors, and
//! every problem in a file is reported at once.
//!
//! ```text
//! model.form = threshold
//! model.lower = 0
//! model.upper = 3
//! model.inside = 1, 0.2, 0.5
//! model.outside = 2, 0.1, 0.6
//! family.kind = poisson
//! experiment.grid = 1, 4, 9, 16, 25, 36, 49, 64
//! experiment.replicates = 2000
//! experiment.horizon = 512
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use garchmix_core::{IntensitySpec, Mode, Regime, SaturatingLink, SeedFamily};

/// All problems found in a configuration, one per line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration:\n  {}", .0.join("\n  "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Couple,
    CoalescenceLemma,
    MixingRate,
    DriftCheck,
    Reconstruct,
    Counterexample,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Couple,
        Command::CoalescenceLemma,
        Command::MixingRate,
        Command::DriftCheck,
        Command::Reconstruct,
        Command::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::CoalescenceLemma => "coalescence-lemma",
            Command::MixingRate => "mixing-rate",
            Command::DriftCheck => "drift-check",
            Command::Reconstruct => "reconstruct",
            Command::Counterexample => "counterexample",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown experiment kind '{s}'"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelConfig {
    Linear {
        intercept: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    Threshold {
        lower: f64,
        upper: f64,
        inside: [f64; 3],
        outside: [f64; 3],
    },
    HalfCountLink {
        base: f64,
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub grid: Vec<usize>,
    pub gaps: Vec<f64>,
    pub replicates: Option<usize>,
    pub horizon: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    pub probes: usize,
    pub init_y: Option<Vec<f64>>,
    pub init_lambda: Option<Vec<f64>>,
    pub init_b_y: Option<Vec<f64>>,
    pub init_b_lambda: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: vec![1, 2, 4, 9, 16, 25, 36, 49, 64],
            gaps: vec![0.05, 0.1, 0.2, 0.5],
            replicates: None,
            horizon: None,
            burn_in: None,
            seed: 0,
            workers: 1,
            probes: 20,
            init_y: None,
            init_lambda: None,
            init_b_y: None,
            init_b_lambda: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub mode: Mode,
    pub model: ModelConfig,
    pub family: SeedFamily,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Simulate,
            mode: Mode::Ingarch,
            model: ModelConfig::Linear {
                intercept: 1.0,
                alpha: vec![0.3],
                beta: vec![0.5],
            },
            family: SeedFamily::Poisson,
            experiment: ExperimentConfig::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "model.mode",
    "model.form",
    "model.intercept",
    "model.alpha",
    "model.beta",
    "model.lower",
    "model.upper",
    "model.inside",
    "model.outside",
    "model.link_base",
    "model.link_scale",
    "family.kind",
    "family.pi",
    "family.jumps",
    "family.omega",
    "experiment.kind",
    "experiment.grid",
    "experiment.gaps",
    "experiment.replicates",
    "experiment.horizon",
    "experiment.burn_in",
    "experiment.seed",
    "experiment.workers",
    "experiment.probes",
    "experiment.init_y",
    "experiment.init_lambda",
    "experiment.init_b_y",
    "experiment.init_b_lambda",
];

struct Fields {
    map: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.take(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("{key}: cannot parse '{raw}': {e}"));
                None
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Option<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self.take(key)?;
        let mut out = Vec::new();
        for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse() {
                Ok(v) => out.push(v),
                Err(e) => {
                    self.errors.push(format!("{key}: cannot parse '{part}': {e}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn triple(&mut self, key: &str) -> Option<[f64; 3]> {
        let v = self.list::<f64>(key)?;
        match <[f64; 3]>::try_from(v.as_slice()) {
            Ok(t) => Some(t),
            Err(_) => {
                self.errors.push(format!(
                    "{key}: expected 'intercept, count coefficient, intensity coefficient', got {} values",
                    v.len()
                ));
                None
            }
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "garch" => Ok(Mode::Garch),
        "ingarch" => Ok(Mode::Ingarch),
        _ => Err(format!("unknown mode '{s}' (garch or ingarch)")),
    }
}

impl RunConfig {
    /// Parses a configuration file. Missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        let mut errors = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected 'key = value'", no + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                errors.push(format!("line {}: unknown key '{k}'", no + 1));
            } else if map.insert(k.to_string(), v.to_string()).is_some() {
                errors.push(format!("line {}: repeated key '{k}'", no + 1));
            }
        }
        let mut f = Fields { map, errors };
        let cfg = Self::build(&mut f);
        if f.errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError(f.errors))
        }
    }

    fn build(f: &mut Fields) -> RunConfig {
        let d = RunConfig::default();
        let command = match f.take("experiment.kind") {
            Some(s) => s.parse().unwrap_or_else(|e| {
                f.errors.push(format!("experiment.kind: {e}"));
                d.command
            }),
            None => d.command,
        };
        let mode = match f.take("model.mode") {
            Some(s) => parse_mode(&s).unwrap_or_else(|e| {
                f.errors.push(format!("model.mode: {e}"));
                d.mode
            }),
            None => d.mode,
        };
        let form = f.take("model.form").unwrap_or_else(|| "linear".into());
        let model = match form.as_str() {
            "linear" => ModelConfig::Linear {
                intercept: f.parse("model.intercept").unwrap_or(1.0),
                alpha: f.list("model.alpha").unwrap_or_else(|| vec![0.3]),
                beta: f.list("model.beta").unwrap_or_else(|| vec![0.5]),
            },
            "threshold" => ModelConfig::Threshold {
                lower: f.parse("model.lower").unwrap_or(0.0),
                upper: f.parse("model.upper").unwrap_or(3.0),
                inside: f.triple("model.inside").unwrap_or([1.0, 0.2, 0.5]),
                outside: f.triple("model.outside").unwrap_or([2.0, 0.1, 0.6]),
            },
            "half-count-link" => ModelConfig::HalfCountLink {
                base: f.parse("model.link_base").unwrap_or(0.2),
                scale: f.parse("model.link_scale").unwrap_or(0.25),
            },
            other => {
                f.errors.push(format!(
                    "model.form: unknown form '{other}' (linear, threshold or half-count-link)"
                ));
                d.model.clone()
            }
        };
        let kind = f.take("family.kind").unwrap_or_else(|| "poisson".into());
        let family = match kind.as_str() {
            "poisson" => SeedFamily::Poisson,
            "gaussian" => SeedFamily::GaussianZeroMean,
            "zip" => SeedFamily::ZeroInflatedPoisson {
                pi: f.parse("family.pi").unwrap_or(f64::NAN),
            },
            "gaussian-floor" => SeedFamily::GaussianWithFloor {
                omega: f.parse("family.omega").unwrap_or(f64::NAN),
            },
            "compound" => {
                let pairs: Vec<(u64, f64)> = f
                    .list::<String>("family.jumps")
                    .unwrap_or_default()
                    .iter()
                    .filter_map(|p| {
                        let parsed = p
                            .split_once(':')
                            .and_then(|(k, v)| Some((k.trim().parse().ok()?, v.trim().parse().ok()?)));
                        if parsed.is_none() {
                            f.errors.push(format!("family.jumps: cannot parse '{p}' as count:prob"));
                        }
                        parsed
                    })
                    .collect();
                match SeedFamily::compound(&pairs) {
                    Ok(fam) => fam,
                    Err(e) => {
                        f.errors.push(format!("family.jumps: {e}"));
                        SeedFamily::Poisson
                    }
                }
            }
            other => {
                f.errors.push(format!(
                    "family.kind: unknown family '{other}' (poisson, gaussian, zip, compound or gaussian-floor)"
                ));
                SeedFamily::Poisson
            }
        };
        let de = ExperimentConfig::default();
        let experiment = ExperimentConfig {
            grid: f.list("experiment.grid").unwrap_or(de.grid),
            gaps: f.list("experiment.gaps").unwrap_or(de.gaps),
            replicates: f.parse("experiment.replicates"),
            horizon: f.parse("experiment.horizon"),
            burn_in: f.parse("experiment.burn_in"),
            seed: f.parse("experiment.seed").unwrap_or(de.seed),
            workers: f.parse("experiment.workers").unwrap_or(de.workers),
            probes: f.parse("experiment.probes").unwrap_or(de.probes),
            init_y: f.list("experiment.init_y"),
            init_lambda: f.list("experiment.init_lambda"),
            init_b_y: f.list("experiment.init_b_y"),
            init_b_lambda: f.list("experiment.init_b_lambda"),
        };
        for k in std::mem::take(&mut f.map).into_keys() {
            f.errors.push(format!("{k}: not used by model.form = {form}, family.kind = {kind}"));
        }
        RunConfig {
            command,
            mode,
            model,
            family,
            experiment,
        }
    }

    /// Checks everything that can be checked without running: parameter
    /// ranges, mode/family compatibility, lag lengths and grid shape.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let spec = match self.spec() {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(format!("model: {e}"));
                None
            }
        };
        if let Err(e) = self.family.validate() {
            errs.push(format!("family: {e}"));
        } else if let Some(s) = &spec {
            if let Err(e) = s.check_family(&self.family) {
                errs.push(format!("model.mode: {e}"));
            }
        }
        if let SeedFamily::GaussianWithFloor { omega } = self.family {
            let floor = match &self.model {
                ModelConfig::Linear { intercept, .. } => *intercept,
                ModelConfig::Threshold { inside, outside, .. } => inside[0].min(outside[0]),
                ModelConfig::HalfCountLink { base, .. } => *base,
            };
            if floor < omega {
                errs.push(format!(
                    "family.omega: intensities can fall to {floor}, below the floor {omega}"
                ));
            }
        }
        let e = &self.experiment;
        if e.grid.is_empty() || e.grid[0] == 0 || e.grid.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("experiment.grid: must be nonempty, ≥ 1 and strictly increasing".into());
        }
        if e.gaps.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            errs.push("experiment.gaps: values must be finite and ≥ 0".into());
        }
        if e.replicates == Some(0) {
            errs.push("experiment.replicates: must be ≥ 1".into());
        }
        if self.command == Command::MixingRate && e.replicates.is_some_and(|r| r < 100) {
            errs.push("experiment.replicates: mixing-rate needs ≥ 100".into());
        }
        if e.horizon == Some(0) {
            errs.push("experiment.horizon: must be ≥ 1".into());
        }
        if let (Some(h), Some(&max)) = (e.horizon, e.grid.last()) {
            if self.command == Command::MixingRate && h < max {
                errs.push(format!("experiment.horizon: {h} is below the largest lag {max}"));
            }
        }
        if e.probes == 0 {
            errs.push("experiment.probes: must be ≥ 1".into());
        }
        if let Some(s) = &spec {
            let (p, q) = (s.order().p(), s.order().q());
            for (key, v, want) in [
                ("experiment.init_y", &e.init_y, p),
                ("experiment.init_lambda", &e.init_lambda, q),
                ("experiment.init_b_y", &e.init_b_y, p),
                ("experiment.init_b_lambda", &e.init_b_lambda, q),
            ] {
                if let Some(v) = v {
                    if v.len() != want {
                        errs.push(format!("{key}: expected {want} values, got {}", v.len()));
                    }
                    if key.contains("lambda") && v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                        errs.push(format!("{key}: intensities must be finite and ≥ 0"));
                    }
                }
            }
        }
        if self.command == Command::Counterexample
            && !matches!(self.model, ModelConfig::HalfCountLink { .. })
        {
            errs.push("model.form: counterexample needs model.form = half-count-link".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    pub fn spec(&self) -> garchmix_core::Result<IntensitySpec> {
        match &self.model {
            ModelConfig::Linear {
                intercept,
                alpha,
                beta,
            } => IntensitySpec::linear(self.mode, *intercept, alpha.clone(), beta.clone()),
            ModelConfig::Threshold {
                lower,
                upper,
                inside,
                outside,
            } => IntensitySpec::threshold(
                self.mode,
                *lower,
                *upper,
                Regime::new(inside[0], inside[1], inside[2]),
                Regime::new(outside[0], outside[1], outside[2]),
            ),
            ModelConfig::HalfCountLink { base, scale } => {
                if self.mode != Mode::Ingarch {
                    return Err(garchmix_core::Error::InvalidParameter(
                        "half-count-link is an INGARCH model".into(),
                    ));
                }
                IntensitySpec::half_count_link(SaturatingLink::new(*base, *scale)?)
            }
        }
    }

    /// Canonical text form; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = self.canonical_text();
        let _ = writeln!(s, "experiment.workers = {}", self.experiment.workers);
        s
    }

    /// Everything except the worker count, which never affects results.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        kv("experiment.kind", self.command.name().into());
        kv("model.mode", self.mode.name().into());
        match &self.model {
            ModelConfig::Linear {
                intercept,
                alpha,
                beta,
            } => {
                kv("model.form", "linear".into());
                kv("model.intercept", format!("{intercept:?}"));
                kv("model.alpha", join(alpha));
                kv("model.beta", join(beta));
            }
            ModelConfig::Threshold {
                lower,
                upper,
                inside,
                outside,
            } => {
                kv("model.form", "threshold".into());
                kv("model.lower", format!("{lower:?}"));
                kv("model.upper", format!("{upper:?}"));
                kv("model.inside", join(inside));
                kv("model.outside", join(outside));
            }
            ModelConfig::HalfCountLink { base, scale } => {
                kv("model.form", "half-count-link".into());
                kv("model.link_base", format!("{base:?}"));
                kv("model.link_scale", format!("{scale:?}"));
            }
        }
        kv("family.kind", self.family.name().into());
        match &self.family {
            SeedFamily::ZeroInflatedPoisson { pi } => kv("family.pi", format!("{pi:?}")),
            SeedFamily::GaussianWithFloor { omega } => kv("family.omega", format!("{omega:?}")),
            SeedFamily::CompoundPoisson { jumps } => kv(
                "family.jumps",
                jumps
                    .entries()
                    .iter()
                    .map(|(k, p)| format!("{k}:{p:?}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            _ => {}
        }
        let e = &self.experiment;
        kv(
            "experiment.grid",
            e.grid.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
        );
        kv("experiment.gaps", join(&e.gaps));
        if let Some(r) = e.replicates {
            kv("experiment.replicates", r.to_string());
        }
        if let Some(h) = e.horizon {
            kv("experiment.horizon", h.to_string());
        }
        if let Some(b) = e.burn_in {
            kv("experiment.burn_in", b.to_string());
        }
        kv("experiment.seed", e.seed.to_string());
        kv("experiment.probes", e.probes.to_string());
        for (k, v) in [
            ("experiment.init_y", &e.init_y),
            ("experiment.init_lambda", &e.init_lambda),
            ("experiment.init_b_y", &e.init_b_y),
            ("experiment.init_b_lambda", &e.init_b_lambda),
        ] {
            if let Some(v) = v {
                kv(k, join(v));
            }
        }
        s
    }

    /// 64-bit FNV-1a of [`canonical_text`](Self::canonical_text).
    pub fn hash(&self) -> u64 {
        self.canonical_text().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
