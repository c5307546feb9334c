//! Coupling of two copies of the embedded chain.

pub mod density;
pub mod pair;
pub mod stopping;
pub mod tuning;

pub use density::{
    maximal_coupling_sample, shifted_density, total_mass, tv_oracle, CoupledDraw, ProductDensity, TvEstimate, TvMode,
};
pub use pair::{
    coupled_step, foias_prodi_probe, write_step_log, ContractionReport, CoupledPair, CoupledStep, CouplingConfig,
    CouplingModel, PairTrajectory, StepSummary,
};
pub use stopping::{
    martingale_tail_detector, run_until_ell, run_until_sigma, stopping_update, write_ell_csv, EllOutcome, EllReport,
    StoppingRecord, TailIndex,
};
pub use tuning::{coupling_envelope, select_n_prime, CouplingEnvelope, EnvelopeBin, NPrimeRow, NPrimeSelection};
