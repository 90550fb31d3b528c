//! Semi-contractive GARCH and INGARCH processes, the maximal coupling of two
//! versions of such a process, and Monte Carlo machinery for coalescence and
//! beta-mixing experiments.
//!
//! The crate is organised bottom-up:
//!
//! * [`seed`]: observation families `Q(λ)` with generalized-inverse quantiles,
//!   total-variation overlaps and similarity constants.
//! * [`model`]: intensity maps `f`, drift constants, path simulation, forward
//!   iteration and the non-mixing intensity example.
//! * [`coupling`]: the shared-uniform maximal coupling of two chains.
//! * [`mixing`]: contraction tables, the coalescence bound, stopping times,
//!   beta estimation and rate fitting.
//! * [`rng`], [`replicate`] and [`stats`]: reproducible streams, parallel
//!   replication and the proportion/mean summaries used throughout.

// NaN must fail every range check, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod mixing;
pub mod model;
pub mod normal;
pub mod replicate;
pub mod rng;
pub mod seed;
pub mod stats;

pub use coupling::{
    maximal_couple_draw, run_coupled, CoupleStepOutcome, CoupledChain, CoupledState, StepRecord,
    TrajectoryLog,
};
pub use error::{Error, Result};
pub use mixing::{
    coalescence_bound, contraction_coeffs, estimate_beta, fit_subgeometric_rate,
    run_trial_schedule, stopping_constants, verify_coalescence_lemma, BetaConfig,
    ContractionTable, LemmaConfig, LemmaReport, MixingEstimate, RateFit, StoppingConstants,
    TrialConfig, TrialSchedule,
};
pub use model::{
    counterexample_recover, drift_constants, reconstruct_intensity, semicontractive_probe,
    simulate_path, stationary_draw, ChainState, DriftBound, DriftConstants, IntensityForm,
    IntensitySpec, Mode, ModelOrder, PathPoint, ProbeOutcome, Reconstruction, Regime,
    SaturatingLink,
};
pub use rng::{derive_stream, Stream};
pub use seed::{JumpPmf, SeedFamily, SimilarityConstant, SplitCdf, Support};
