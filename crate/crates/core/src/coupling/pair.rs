//! Coupled pairs `(u_k, u′_k)` driven by shared waiting times, maximally
//! coupled low-mode kicks and shared high-mode kicks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::density::{maximal_coupling_sample, ProductDensity};
use crate::error::{Error, Result};
use crate::flow::{evolve, FlowParams};
use crate::kicks::{ClockSpec, KickSpec};
use crate::rng::ReplicaStreams;
use crate::spectral::{EnergyParams, SpectralField};
use crate::stats;

/// Parameters of the coupling construction.
///
/// `n` counts real H-coordinates, so the coupled block covers modes
/// `1..=n/2` when `n` is even. `n_prime` is a mode index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_prime")]
    pub n_prime: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub d: f64,
    /// Confirmation window for `ℓ`, in kicks.
    #[serde(rename = "W")]
    pub window: usize,
    pub max_kicks: usize,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            n: 8,
            n_prime: 4,
            m: 1e3,
            d: 0.5,
            window: 200,
            max_kicks: 5000,
        }
    }
}

impl CouplingConfig {
    /// Every violated invariant as `(field, message)`.
    pub fn violations(&self, n_modes: usize) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.n_prime < 1 {
            out.push(("N_prime", "must be >= 1".to_string()));
        }
        if 2 * self.n_prime > self.n {
            out.push((
                "N_prime",
                format!("2 * N_prime = {} exceeds N = {} coupled coordinates", 2 * self.n_prime, self.n),
            ));
        }
        if self.n == 0 || self.n >= 2 * n_modes {
            out.push(("N", format!("must lie in 1..{} for n_modes = {n_modes}", 2 * n_modes)));
        }
        if !(self.m.is_finite() && self.m > 0.0) {
            out.push(("M", format!("must be > 0, got {}", self.m)));
        }
        if !(self.d > 0.0 && self.d <= 1.0) {
            out.push(("d", format!("must lie in (0, 1], got {}", self.d)));
        }
        if self.window == 0 {
            out.push(("W", "must be >= 1".to_string()));
        }
        if self.max_kicks == 0 {
            out.push(("max_kicks", "must be >= 1".to_string()));
        }
        out
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        let v = self.violations(n_modes);
        if v.is_empty() {
            return Ok(());
        }
        let msg: Vec<String> = v.iter().map(|(f, m)| format!("coupling.{f}: {m}")).collect();
        Err(Error::Configuration(msg.join("; ")))
    }
}

/// Everything the coupled step needs besides the pair itself.
#[derive(Clone, Debug)]
pub struct CouplingModel {
    pub config: CouplingConfig,
    pub kicks: KickSpec,
    pub clock: ClockSpec,
    pub flow: FlowParams,
    density: ProductDensity,
}

impl CouplingModel {
    pub fn new(config: CouplingConfig, kicks: KickSpec, clock: ClockSpec, flow: FlowParams) -> Result<Self> {
        let density = ProductDensity::new(&kicks, config.n)?;
        Ok(Self {
            config,
            kicks,
            clock,
            flow,
            density,
        })
    }

    pub fn density(&self) -> &ProductDensity {
        &self.density
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub u: SpectralField,
    pub u_prime: SpectralField,
    /// Kicks taken so far.
    pub k: usize,
}

impl CoupledPair {
    pub fn new(u: SpectralField, u_prime: SpectralField) -> Result<Self> {
        if !std::sync::Arc::ptr_eq(u.grid(), u_prime.grid()) {
            return Err(Error::Argument("pair components live on different grids".into()));
        }
        Ok(Self { u, u_prime, k: 0 })
    }

    /// `P_N u = P_N u′`, bit for bit.
    pub fn low_matched(&self, n: usize) -> bool {
        self.u.h_coordinates(n) == self.u_prime.h_coordinates(n)
    }

    pub fn distance_h1(&self) -> f64 {
        self.u.distance_h1(&self.u_prime)
    }

    /// Both components in the closed ball `‖·‖₁ ≤ d`.
    pub fn in_ball(&self, d: f64) -> bool {
        self.u.norm_h1() <= d && self.u_prime.norm_h1() <= d
    }
}

/// Output of one coupled step: the new pair plus the ledger entry.
#[derive(Clone, Debug)]
pub struct CoupledStep {
    pub pair: CoupledPair,
    pub wait: f64,
    /// The low-mode draws were equal.
    pub coupled: bool,
    /// `‖S_t u − S_t u′‖₁` before the kicks.
    pub flowed_distance: f64,
    pub zeta: SpectralField,
    pub zeta_prime: SpectralField,
}

/// `(u, u′) ↦ (S_t u + ζ, S_t u′ + ζ′)` with one shared `t`, maximally
/// coupled `P_N ζ, P_N ζ′` and `Q_N ζ = Q_N ζ′` drawn once.
///
/// The low block of each new state is set directly to its coupled draw, so
/// a successful coupling matches `P_N u_k = P_N u′_k` exactly.
pub fn coupled_step(pair: &CoupledPair, model: &CouplingModel, streams: &mut ReplicaStreams) -> Result<CoupledStep> {
    let n = model.config.n;
    let grid = pair.u.grid();
    model.kicks.check_grid(grid)?;
    let wait = model.clock.sample_wait(&mut streams.clock);
    let su = evolve(&pair.u, wait, &model.flow)?;
    let su_prime = if pair.u == pair.u_prime {
        su.clone()
    } else {
        evolve(&pair.u_prime, wait, &model.flow)?
    };
    let mean_p = su.h_coordinates(n);
    let mean_q = su_prime.h_coordinates(n);
    let draw = maximal_coupling_sample(&model.density, &mean_p, &mean_q, &mut streams.coupling)?;
    let mut high = model
        .kicks
        .sample_coordinates(0..2 * grid.n_modes(), &mut streams.kicks);
    high[..n].iter_mut().for_each(|x| *x = 0.0);

    let build = |s: &SpectralField, v: &[f64], mean: &[f64]| {
        let mut zeta_coords = high.clone();
        for r in 0..n {
            zeta_coords[r] = v[r] - mean[r];
        }
        let mut zeta = SpectralField::zeros(grid);
        zeta.set_h_coordinates(&zeta_coords);
        let mut next = s + &zeta;
        next.set_h_coordinates(v);
        (next, zeta)
    };
    let (u, zeta) = build(&su, &draw.v, &mean_p);
    let (u_prime, zeta_prime) = if pair.u == pair.u_prime && draw.coupled {
        (u.clone(), zeta.clone())
    } else {
        build(&su_prime, &draw.v_prime, &mean_q)
    };
    Ok(CoupledStep {
        pair: CoupledPair {
            u,
            u_prime,
            k: pair.k + 1,
        },
        wait,
        coupled: draw.coupled,
        flowed_distance: su.distance_h1(&su_prime),
        zeta,
        zeta_prime,
    })
}

/// One row of the coupled-run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub k: usize,
    pub t_k: f64,
    pub coupled_flag: bool,
    pub distance_h1: f64,
    pub norm_h1: f64,
    pub norm_h1_prime: f64,
    #[serde(rename = "H")]
    pub energy: f64,
    #[serde(rename = "H_prime")]
    pub energy_prime: f64,
}

impl StepSummary {
    pub fn of(step: &CoupledStep, energy: &EnergyParams) -> Self {
        Self {
            k: step.pair.k,
            t_k: step.wait,
            coupled_flag: step.coupled,
            distance_h1: step.pair.distance_h1(),
            norm_h1: step.pair.u.norm_h1(),
            norm_h1_prime: step.pair.u_prime.norm_h1(),
            energy: step.pair.u.energy(energy),
            energy_prime: step.pair.u_prime.energy(energy),
        }
    }
}

/// Serialises per-step rows as a JSON array.
pub fn write_step_log<W: Write>(rows: &[StepSummary], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, rows)?;
    Ok(())
}

/// States `pairs[0..=n]` plus the ledger of the `n` steps between them.
#[derive(Clone, Debug)]
pub struct PairTrajectory {
    pub pairs: Vec<CoupledPair>,
    pub steps: Vec<CoupledStep>,
}

impl PairTrajectory {
    pub fn run(start: CoupledPair, n_steps: usize, model: &CouplingModel, streams: &mut ReplicaStreams) -> Result<Self> {
        let mut traj = PairTrajectory {
            pairs: vec![start],
            steps: Vec::with_capacity(n_steps),
        };
        for _ in 0..n_steps {
            let step = coupled_step(traj.pairs.last().unwrap(), model, streams)?;
            traj.pairs.push(step.pair.clone());
            traj.steps.push(step);
        }
        Ok(traj)
    }

    /// Largest `k` such that every step in `(0, k]` coupled.
    pub fn matched_prefix(&self) -> usize {
        self.steps.iter().take_while(|s| s.coupled).count()
    }
}

/// Squeezing report over a matched stretch `(l, k]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionReport {
    pub l: usize,
    pub k: usize,
    /// `‖u_i − u′_i‖₁` for `i = l..=k`.
    pub distances: Vec<f64>,
    /// `max_i |‖u_i − u′_i‖₁ − ‖Q_N(u_i − u′_i)‖₁|`.
    pub identity_error: f64,
    /// Measured `‖u_i − u′_i‖₁ / ‖u_{i−1} − u′_{i−1}‖₁`.
    pub factors: Vec<f64>,
    pub mean_log_contraction: f64,
    /// Least-squares `log C` and `C` in
    /// `log factor ≈ log C − ½ log α_{N′+1} − ½ log t_i + C·(‖u_{i−1}‖₁⁶ + ‖u′_{i−1}‖₁⁶)`.
    pub fitted_log_constant: Option<f64>,
    pub fitted_exponent_constant: Option<f64>,
}

/// Checks the squeezing mechanism on `(l, k]` of a coupled trajectory.
///
/// Factors are only formed while the previous distance exceeds
/// `floor · (‖u‖₁ + ‖u′‖₁)`; below that level round-off dominates.
pub fn foias_prodi_probe(
    traj: &PairTrajectory,
    l: usize,
    k: usize,
    config: &CouplingConfig,
    floor: f64,
) -> Result<ContractionReport> {
    if l >= k || k > traj.steps.len() {
        return Err(Error::ProbeInvalid(format!(
            "need l < k <= {}, got l = {l}, k = {k}",
            traj.steps.len()
        )));
    }
    let n = config.n;
    for i in l + 1..=k {
        let step = &traj.steps[i - 1];
        if !traj.pairs[i].low_matched(n) {
            return Err(Error::ProbeInvalid(format!("low modes differ at step {i}")));
        }
        if step.zeta.keep_high_coordinates(n) != step.zeta_prime.keep_high_coordinates(n) {
            return Err(Error::ProbeInvalid(format!("high-mode kicks differ at step {i}")));
        }
    }
    let grid = traj.pairs[0].u.grid();
    let alpha = grid.eigenvalue(config.n_prime + 1)?;
    let mut distances = Vec::with_capacity(k - l + 1);
    let mut identity_error: f64 = 0.0;
    for i in l..=k {
        let diff = &traj.pairs[i].u - &traj.pairs[i].u_prime;
        let d = diff.norm_h1();
        if i > l {
            identity_error = identity_error.max((d - diff.keep_high_coordinates(n).norm_h1()).abs());
        }
        distances.push(d);
    }
    let mut factors = Vec::new();
    let mut fit_pts = Vec::new();
    for i in l + 1..=k {
        let prev = &traj.pairs[i - 1];
        let d0 = distances[i - 1 - l];
        if d0 <= floor * (prev.u.norm_h1() + prev.u_prime.norm_h1()).max(f64::MIN_POSITIVE) {
            break;
        }
        let f = distances[i - l] / d0;
        factors.push(f);
        if f > 0.0 {
            let t = traj.steps[i - 1].wait;
            let s = prev.u.norm_h1().powi(6) + prev.u_prime.norm_h1().powi(6);
            fit_pts.push((s, f.ln() + 0.5 * alpha.ln() + 0.5 * t.ln()));
        }
    }
    let logs: Vec<f64> = factors.iter().filter(|f| **f > 0.0).map(|f| f.ln()).collect();
    let mean_log_contraction = if logs.is_empty() { f64::NAN } else { stats::mean(&logs) };
    let fit = stats::linear_fit(&fit_pts);
    Ok(ContractionReport {
        l,
        k,
        distances,
        identity_error,
        factors,
        mean_log_contraction,
        fitted_log_constant: fit.map(|f| f.intercept),
        fitted_exponent_constant: fit.map(|f| f.slope),
    })
}
