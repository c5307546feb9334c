//! Distribution-level diagnostics of the kicked system.

pub mod dictionary;
pub mod drift;
pub mod mixing;
pub mod stationary;

pub use dictionary::{
    dual_lipschitz_lower_bound, dual_lipschitz_value, DualLipschitzReport, EmpiricalEnsemble, Functional,
    FunctionalGap, TestDictionary, MIN_ENSEMBLE,
};
pub use drift::{lyapunov_probe, pair_hitting_stats, pair_hitting_time, DriftChoice, DriftReport, HittingReport};
pub use mixing::{mixing_curve, MixingOptions, MixingReport, MixingRow};
pub use stationary::{
    khasminskii_check, krylov_bogolyubov_estimate, KhasminskiiReport, StationaryOptions, StationaryProxy,
};
