//! Random kicks at exponential waiting times and the embedded chain
//! `u_k = S_{t_k}(u_{k-1}) + η_k`.
//!
//! A kick is `η = Σ_r b_r ξ_r g_r` over the real H-orthonormal basis
//! `g_{2j-1} = α_j^{-1/2} e_j`, `g_{2j} = i α_j^{-1/2} e_j` (see
//! [`SpectralField::h_coordinates`]); `ξ_r` are i.i.d. draws from one
//! [`CoordinateLaw`].

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{evolve, FlowParams};
use crate::rng::{ReplicaStreams, StreamRng};
use crate::spectral::{EnergyParams, Grid, SpectralField};
use crate::stats;

/// Law of a single kick coordinate `ξ`. All members have bounded-variation
/// densities, positive mass around 0 and moments of every order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoordinateLaw {
    /// Uniform on `[−half_width, half_width]`.
    UniformSymmetric { half_width: f64 },
    /// Symmetric triangle on `[−half_width, half_width]`.
    Triangular { half_width: f64 },
    /// `N(0, σ²)` conditioned on `|ξ| ≤ cutoff·σ`.
    TruncatedGaussian { sigma: f64, cutoff: f64 },
}

impl Default for CoordinateLaw {
    fn default() -> Self {
        CoordinateLaw::UniformSymmetric { half_width: 1.0 }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

impl CoordinateLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CoordinateLaw::UniformSymmetric { half_width } => half_width > 0.0,
            CoordinateLaw::Triangular { half_width } => half_width > 0.0,
            CoordinateLaw::TruncatedGaussian { sigma, cutoff } => sigma > 0.0 && cutoff > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid coordinate law {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoordinateLaw::UniformSymmetric { .. } => "uniform_symmetric",
            CoordinateLaw::Triangular { .. } => "triangular",
            CoordinateLaw::TruncatedGaussian { .. } => "truncated_gaussian",
        }
    }

    /// Closed support `[−s, s]`.
    pub fn support_half_width(&self) -> f64 {
        match *self {
            CoordinateLaw::UniformSymmetric { half_width } => half_width,
            CoordinateLaw::Triangular { half_width } => half_width,
            CoordinateLaw::TruncatedGaussian { sigma, cutoff } => sigma * cutoff,
        }
    }

    /// Points where the density fails to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let s = self.support_half_width();
        match self {
            CoordinateLaw::Triangular { .. } => vec![-s, 0.0, s],
            _ => vec![-s, s],
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let s = self.support_half_width();
        if x.abs() > s {
            return 0.0;
        }
        match *self {
            CoordinateLaw::UniformSymmetric { half_width } => 0.5 / half_width,
            CoordinateLaw::Triangular { half_width } => (half_width - x.abs()) / (half_width * half_width),
            CoordinateLaw::TruncatedGaussian { sigma, cutoff } => {
                let z = x / sigma;
                let mass = 2.0 * std_normal_cdf(cutoff) - 1.0;
                (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma * mass)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let s = self.support_half_width();
        if x <= -s {
            return 0.0;
        }
        if x >= s {
            return 1.0;
        }
        match *self {
            CoordinateLaw::UniformSymmetric { half_width } => (x + half_width) / (2.0 * half_width),
            CoordinateLaw::Triangular { half_width } => {
                let h = half_width;
                if x <= 0.0 {
                    (x + h).powi(2) / (2.0 * h * h)
                } else {
                    1.0 - (h - x).powi(2) / (2.0 * h * h)
                }
            }
            CoordinateLaw::TruncatedGaussian { sigma, cutoff } => {
                let lo = std_normal_cdf(-cutoff);
                (std_normal_cdf(x / sigma) - lo) / (1.0 - 2.0 * lo)
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            CoordinateLaw::UniformSymmetric { half_width } => half_width * half_width / 3.0,
            CoordinateLaw::Triangular { half_width } => half_width * half_width / 6.0,
            CoordinateLaw::TruncatedGaussian { sigma, cutoff } => {
                let phi = (-0.5 * cutoff * cutoff).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = 2.0 * std_normal_cdf(cutoff) - 1.0;
                sigma * sigma * (1.0 - 2.0 * cutoff * phi / mass)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CoordinateLaw::UniformSymmetric { half_width } => rng.random_range(-half_width..=half_width),
            CoordinateLaw::Triangular { half_width } => {
                let a: f64 = rng.random();
                let b: f64 = rng.random();
                half_width * (a - b)
            }
            CoordinateLaw::TruncatedGaussian { sigma, cutoff } => loop {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                if z.abs() <= cutoff {
                    break sigma * z;
                }
            },
        }
    }
}

/// Law of one kick: coefficients `b_r ≥ 0` over the real H-basis plus the
/// coordinate law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickSpec {
    b: Vec<f64>,
    law: CoordinateLaw,
}

impl KickSpec {
    pub fn new(b: Vec<f64>, law: CoordinateLaw) -> Result<Self> {
        law.validate()?;
        if let Some(bad) = b.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Argument(format!("kick coefficient {bad} must be finite and >= 0")));
        }
        let spec = Self { b, law };
        if !spec.b_sum_sq().is_finite() {
            return Err(Error::Argument("sum of squared kick coefficients is not finite".into()));
        }
        Ok(spec)
    }

    /// `b = b0 · j^{−exponent}` on both real coordinates of every mode
    /// `j ≤ n_modes`.
    pub fn power_law(n_modes: usize, b0: f64, exponent: f64, law: CoordinateLaw) -> Result<Self> {
        let b = (0..2 * n_modes)
            .map(|r| b0 * ((r / 2 + 1) as f64).powf(-exponent))
            .collect();
        Self::new(b, law)
    }

    /// No noise at all.
    pub fn silent(n_modes: usize) -> Self {
        Self {
            b: vec![0.0; 2 * n_modes],
            law: CoordinateLaw::default(),
        }
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn law(&self) -> &CoordinateLaw {
        &self.law
    }

    /// Number of leading real coordinates, i.e. the largest `r` with `b_r ≠ 0`.
    pub fn n_active(&self) -> usize {
        self.b.iter().rposition(|&v| v != 0.0).map_or(0, |r| r + 1)
    }

    /// `B = Σ b_r²`.
    pub fn b_sum_sq(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum()
    }

    /// `E‖η‖₁² = B · E ξ²`.
    pub fn mean_h1_sq(&self) -> f64 {
        self.b_sum_sq() * self.law.second_moment()
    }

    /// Density `q_r(x) = b_r^{-1} p(x / b_r)` of the `r`-th coordinate of `η`.
    pub fn coordinate_pdf(&self, r: usize, x: f64) -> f64 {
        let b = self.b[r];
        self.law.pdf(x / b) / b
    }

    pub fn coordinate_cdf(&self, r: usize, x: f64) -> f64 {
        self.law.cdf(x / self.b[r])
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.b.len() > 2 * grid.n_modes() {
            return Err(Error::Shape {
                expected: 2 * grid.n_modes(),
                found: self.b.len(),
            });
        }
        Ok(())
    }

    /// Draws the H-coordinates `b_r ξ_r` for `r` in `range`.
    pub fn sample_coordinates<R: Rng + ?Sized>(&self, range: std::ops::Range<usize>, rng: &mut R) -> Vec<f64> {
        range
            .map(|r| {
                let b = self.b.get(r).copied().unwrap_or(0.0);
                if b == 0.0 {
                    0.0
                } else {
                    b * self.law.sample(rng)
                }
            })
            .collect()
    }

    /// One kick `η`.
    pub fn sample<R: Rng + ?Sized>(&self, grid: &std::sync::Arc<Grid>, rng: &mut R) -> Result<SpectralField> {
        self.check_grid(grid)?;
        let x = self.sample_coordinates(0..self.b.len(), rng);
        let mut eta = SpectralField::zeros(grid);
        eta.set_h_coordinates(&x);
        Ok(eta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub lambda: f64,
}

impl ClockSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Argument(format!("clock rate must be > 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    /// Exp(λ) waiting time; strictly positive.
    pub fn sample_wait<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let exp = Exp::new(self.lambda).expect("validated rate");
        loop {
            let t: f64 = exp.sample(rng);
            if t > 0.0 {
                return t;
            }
        }
    }

    /// `N_t = max{k : τ_k ≤ t}` for a fresh clock.
    pub fn count_kicks<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> usize {
        let mut tau = 0.0;
        let mut n = 0;
        loop {
            tau += self.sample_wait(rng);
            if tau > t {
                return n;
            }
            n += 1;
        }
    }
}

/// Kick law, clock and free flow of one kicked system.
#[derive(Clone, Debug)]
pub struct KickedSystem {
    pub kicks: KickSpec,
    pub clock: ClockSpec,
    pub flow: FlowParams,
}

impl KickedSystem {
    pub fn step(&self, u: &SpectralField, streams: &mut ReplicaStreams) -> Result<EmbeddedStep> {
        embedded_step(u, &self.kicks, &self.clock, &self.flow, streams)
    }

    pub fn chain(&self, u0: &SpectralField, n_steps: usize, streams: &mut ReplicaStreams) -> Result<Chain> {
        Chain::run(u0, n_steps, &self.kicks, &self.clock, &self.flow, streams)
    }

    pub fn simulate(
        &self,
        u0: &SpectralField,
        horizon: f64,
        sample_times: &[f64],
        seed: u64,
        replica: u64,
        streams: &mut ReplicaStreams,
    ) -> Result<TrajectoryLog> {
        simulate(u0, horizon, sample_times, &self.kicks, &self.clock, &self.flow, seed, replica, streams)
    }
}

/// Draws `η` from the kick stream of `streams`.
pub fn sample_kick(spec: &KickSpec, grid: &std::sync::Arc<Grid>, rng: &mut StreamRng) -> Result<SpectralField> {
    spec.sample(grid, rng)
}

pub fn sample_waiting_time(clock: &ClockSpec, rng: &mut StreamRng) -> f64 {
    clock.sample_wait(rng)
}

#[derive(Clone, Debug)]
pub struct EmbeddedStep {
    pub state: SpectralField,
    pub wait: f64,
    pub kick: SpectralField,
}

/// `u_next = S_t(u) + η` with fresh `t` (clock stream) and `η` (kick stream).
pub fn embedded_step(
    u: &SpectralField,
    spec: &KickSpec,
    clock: &ClockSpec,
    flow: &FlowParams,
    streams: &mut ReplicaStreams,
) -> Result<EmbeddedStep> {
    let wait = clock.sample_wait(&mut streams.clock);
    embedded_step_with_wait(u, wait, spec, flow, &mut streams.kicks)
}

/// Embedded step with a prescribed waiting time.
pub fn embedded_step_with_wait(
    u: &SpectralField,
    wait: f64,
    spec: &KickSpec,
    flow: &FlowParams,
    kick_rng: &mut StreamRng,
) -> Result<EmbeddedStep> {
    let kick = spec.sample(u.grid(), kick_rng)?;
    let state = &evolve(u, wait, flow)? + &kick;
    Ok(EmbeddedStep { state, wait, kick })
}

/// States `u_0, …, u_n` of the embedded chain with waits and kicks.
#[derive(Clone, Debug)]
pub struct Chain {
    pub states: Vec<SpectralField>,
    pub waits: Vec<f64>,
    pub kicks: Vec<SpectralField>,
}

impl Chain {
    pub fn run(
        u0: &SpectralField,
        n_steps: usize,
        spec: &KickSpec,
        clock: &ClockSpec,
        flow: &FlowParams,
        streams: &mut ReplicaStreams,
    ) -> Result<Chain> {
        let mut chain = Chain {
            states: vec![u0.clone()],
            waits: Vec::with_capacity(n_steps),
            kicks: Vec::with_capacity(n_steps),
        };
        for _ in 0..n_steps {
            let step = embedded_step(chain.states.last().unwrap(), spec, clock, flow, streams)?;
            chain.states.push(step.state);
            chain.waits.push(step.wait);
            chain.kicks.push(step.kick);
        }
        Ok(chain)
    }

    pub fn energies(&self, energy: &EnergyParams) -> Vec<f64> {
        self.states.iter().map(|u| u.energy(energy)).collect()
    }

    pub fn norms_h1(&self) -> Vec<f64> {
        self.states.iter().map(SpectralField::norm_h1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { time: f64, norm: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KickEvent {
    pub k: usize,
    pub tau: f64,
    pub wait: f64,
    /// Post-kick coefficients `u_{τ_k}` as `[re, im]` pairs.
    pub state: Vec<Complex64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseSample {
    pub t: f64,
    /// `N_t`.
    pub n_kicks: usize,
    pub state: Vec<Complex64>,
}

/// Piecewise trajectory on `[0, horizon]`: kicks at `τ_k`, deterministic flow
/// in between, plus dense samples at requested times.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub replica: u64,
    pub horizon: f64,
    pub initial: Vec<Complex64>,
    pub kicks: Vec<KickEvent>,
    pub samples: Vec<DenseSample>,
    pub status: RunStatus,
}

impl TrajectoryLog {
    pub fn kick_times(&self) -> Vec<f64> {
        self.kicks.iter().map(|e| e.tau).collect()
    }

    /// `N_t` by direct counting of recorded kick times.
    pub fn count_at(&self, t: f64) -> usize {
        self.kicks.iter().take_while(|e| e.tau <= t).count()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Dense samples as CSV:
    /// `t,norm_h1,H,re_c1,im_c1,…,re_cJ,im_cJ`.
    pub fn write_samples_csv<W: Write>(
        &self,
        grid: &std::sync::Arc<Grid>,
        energy: &EnergyParams,
        n_coeffs: usize,
        mut w: W,
    ) -> Result<()> {
        let n_coeffs = n_coeffs.min(grid.n_modes());
        let mut header = String::from("t,norm_h1,H");
        for j in 1..=n_coeffs {
            header.push_str(&format!(",re_c{j},im_c{j}"));
        }
        writeln!(w, "{header}")?;
        for s in &self.samples {
            let u = SpectralField::from_coeffs(grid, s.state.clone())?;
            let mut row = format!("{:.10e},{:.10e},{:.10e}", s.t, u.norm_h1(), u.energy(energy));
            for c in &s.state[..n_coeffs] {
                row.push_str(&format!(",{:.10e},{:.10e}", c.re, c.im));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

/// Simulates the kicked process on `[0, horizon]`. A divergence ends the run
/// early and is reported through [`TrajectoryLog::status`] with everything
/// recorded so far.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    u0: &SpectralField,
    horizon: f64,
    sample_times: &[f64],
    spec: &KickSpec,
    clock: &ClockSpec,
    flow: &FlowParams,
    seed: u64,
    replica: u64,
    streams: &mut ReplicaStreams,
) -> Result<TrajectoryLog> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Argument(format!("horizon must be > 0, got {horizon}")));
    }
    if let Some(t) = sample_times.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
        return Err(Error::Argument(format!("sample time {t} outside [0, {horizon}]")));
    }
    spec.check_grid(u0.grid())?;
    let mut times = sample_times.to_vec();
    times.sort_by(f64::total_cmp);

    let mut log = TrajectoryLog {
        seed,
        replica,
        horizon,
        initial: u0.coeffs().to_vec(),
        kicks: Vec::new(),
        samples: Vec::with_capacity(times.len()),
        status: RunStatus::Completed,
    };
    let mut next_sample = 0;
    let mut tau = 0.0;
    let mut state = u0.clone();
    loop {
        let wait = clock.sample_wait(&mut streams.clock);
        let next_tau = tau + wait;
        // dense samples in [τ_k, min(τ_{k+1}, T)]
        while next_sample < times.len() && times[next_sample] < next_tau {
            let t = times[next_sample];
            match evolve(&state, t - tau, flow) {
                Ok(v) => log.samples.push(DenseSample {
                    t,
                    n_kicks: log.kicks.len(),
                    state: v.into_coeffs(),
                }),
                Err(Error::Divergence { time, norm }) => {
                    log.status = RunStatus::Diverged { time: tau + time, norm };
                    return Ok(log);
                }
                Err(e) => return Err(e),
            }
            next_sample += 1;
        }
        if next_tau > horizon {
            return Ok(log);
        }
        let step = match embedded_step_with_wait(&state, wait, spec, flow, &mut streams.kicks) {
            Ok(s) => s,
            Err(Error::Divergence { time, norm }) => {
                log.status = RunStatus::Diverged { time: tau + time, norm };
                return Ok(log);
            }
            Err(e) => return Err(e),
        };
        tau = next_tau;
        state = step.state;
        log.kicks.push(KickEvent {
            k: log.kicks.len() + 1,
            tau,
            wait,
            state: state.coeffs().to_vec(),
        });
    }
}

/// First `k` with `‖u_k‖₁ ≤ R`, or `None` if the chain ends first.
pub fn hitting_time(norms_h1: &[f64], radius: f64) -> Option<usize> {
    norms_h1.iter().position(|&n| n <= radius)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    /// Empirical `E H(u_k)^p` for each `k`.
    pub per_step: Vec<f64>,
    pub running_max: Vec<f64>,
    /// Mean over the last quarter of the chain.
    pub plateau: f64,
    /// Geometric rate fitted to `|E H(u_k)^p − plateau|`.
    pub gamma: Option<f64>,
}

/// Per-step `p`-th energy moments over an ensemble of equal-length energy
/// series, with a fitted geometric approach rate `γ`.
pub fn moment_estimate(energies: &[Vec<f64>], p: f64) -> Result<MomentReport> {
    if energies.len() < 100 {
        return Err(Error::InsufficientData {
            needed: 100,
            got: energies.len(),
        });
    }
    if p < 1.0 {
        return Err(Error::Argument(format!("moment order must be >= 1, got {p}")));
    }
    let len = energies[0].len();
    if energies.iter().any(|c| c.len() != len) {
        return Err(Error::Argument("chains must have equal length".into()));
    }
    let per_step: Vec<f64> = (0..len)
        .map(|k| energies.iter().map(|c| c[k].powf(p)).sum::<f64>() / energies.len() as f64)
        .collect();
    let running_max = per_step
        .iter()
        .scan(f64::NEG_INFINITY, |m, &v| {
            *m = m.max(v);
            Some(*m)
        })
        .collect();
    let tail = &per_step[len - (len / 4).max(1)..];
    let plateau = stats::mean(tail);
    let gamma = fit_geometric_rate(&per_step, plateau);
    Ok(MomentReport {
        p,
        per_step,
        running_max,
        plateau,
        gamma,
    })
}

/// Fits `|m_k − plateau| ≈ C γ^k` over the leading steps where the residual
/// still exceeds a tenth of its initial size.
fn fit_geometric_rate(m: &[f64], plateau: f64) -> Option<f64> {
    let r0 = (m[0] - plateau).abs();
    if r0 == 0.0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = m
        .iter()
        .enumerate()
        .map(|(k, v)| (k as f64, (v - plateau).abs()))
        .take_while(|(_, r)| *r > 0.1 * r0)
        .map(|(k, r)| (k, r.ln()))
        .collect();
    let pts = if pts.len() < 2 {
        vec![(0.0, r0.ln()), (1.0, (m.get(1)? - plateau).abs().max(1e-300).ln())]
    } else {
        pts
    };
    stats::linear_fit(&pts).map(|f| f.slope.exp())
}

/// Smallest `C_ε` with `H(u_k) ≤ (1+ε) e^{−a t_k} H(u_{k−1}) + C_ε H(η_k)`
/// along the chain.
pub fn energy_recursion_constant(chain: &Chain, energy: &EnergyParams, decay_rate: f64, eps: f64) -> f64 {
    let h: Vec<f64> = chain.energies(energy);
    (1..h.len())
        .map(|k| {
            let free = (1.0 + eps) * (-decay_rate * chain.waits[k - 1]).exp() * h[k - 1];
            let hk = chain.kicks[k - 1].energy(energy);
            if hk > 0.0 {
                ((h[k] - free) / hk).max(0.0)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ReplicaStreams;
    use std::f64::consts::PI;

    fn grid() -> std::sync::Arc<Grid> {
        Grid::padded(PI, 16).unwrap()
    }

    #[test]
    fn silent_kick_is_zero() {
        let g = grid();
        let mut s = ReplicaStreams::new(1, 0);
        let eta = sample_kick(&KickSpec::silent(16), &g, &mut s.kicks).unwrap();
        assert!(eta.is_zero());
    }

    #[test]
    fn single_coordinate_kick_moments() {
        let g = grid();
        let mut b = vec![0.0; 32];
        b[0] = 1.0;
        let spec = KickSpec::new(b, CoordinateLaw::default()).unwrap();
        assert_eq!(spec.n_active(), 1);
        let mut s = ReplicaStreams::new(2, 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let eta = sample_kick(&spec, &g, &mut s.kicks).unwrap();
            let h1 = eta.norm_h1_sq();
            assert!(h1 <= 1.0 + 1e-12);
            acc += h1;
        }
        let m = acc / n as f64;
        // E ξ² = 1/3 for ξ ~ U[-1, 1]; Var ξ² = 4/45
        let se = (4.0f64 / 45.0 / n as f64).sqrt();
        assert!((m - 1.0 / 3.0).abs() < 4.0 * se, "mean {m}");
        assert!((spec.mean_h1_sq() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kick_norm_identity() {
        let g = grid();
        let spec = KickSpec::power_law(16, 0.5, 1.0, CoordinateLaw::Triangular { half_width: 1.0 }).unwrap();
        let mut s = ReplicaStreams::new(3, 0);
        let mut rng2 = s.kicks.clone();
        let eta = sample_kick(&spec, &g, &mut s.kicks).unwrap();
        let xs = spec.sample_coordinates(0..32, &mut rng2);
        let expected: f64 = xs.iter().map(|v| v * v).sum();
        assert!((eta.norm_h1_sq() - expected).abs() < 1e-12);
    }

    #[test]
    fn coordinate_laws_integrate_to_one() {
        for law in [
            CoordinateLaw::UniformSymmetric { half_width: 1.5 },
            CoordinateLaw::Triangular { half_width: 0.7 },
            CoordinateLaw::TruncatedGaussian { sigma: 0.5, cutoff: 3.0 },
        ] {
            let s = law.support_half_width();
            let n = 200_000;
            let h = 2.0 * s / n as f64;
            let total: f64 = (0..n).map(|i| law.pdf(-s + (i as f64 + 0.5) * h) * h).sum();
            assert!((total - 1.0).abs() < 1e-6, "{law:?}: {total}");
            assert!((law.cdf(0.0) - 0.5).abs() < 1e-12);
            assert!(law.pdf(s * 1.01) == 0.0);
            let m2: f64 = (0..n)
                .map(|i| {
                    let x = -s + (i as f64 + 0.5) * h;
                    x * x * law.pdf(x) * h
                })
                .sum();
            assert!((m2 - law.second_moment()).abs() < 1e-6, "{law:?}");
        }
    }

    #[test]
    fn waiting_times_are_exponential() {
        let mut s = ReplicaStreams::new(4, 0);
        let c1 = ClockSpec::new(1.0).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_waiting_time(&c1, &mut s.clock)).collect();
        assert!(xs.iter().all(|&t| t > 0.0));
        assert!((stats::mean(&xs) - 1.0).abs() < 0.01);
        let c2 = ClockSpec::new(2.0).unwrap();
        let tail = (0..n).filter(|_| sample_waiting_time(&c2, &mut s.clock) > 1.0).count() as f64 / n as f64;
        let p = (-2.0f64).exp();
        assert!((tail - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        assert!(ClockSpec::new(0.0).is_err());
    }

    #[test]
    fn embedded_step_without_noise_and_wait_is_identity() {
        let g = grid();
        let u = SpectralField::basis(&g, 2).unwrap();
        let flow = FlowParams::new(1.0, 1.0, 1e-2).unwrap();
        let mut s = ReplicaStreams::new(5, 0);
        let step = embedded_step_with_wait(&u, 0.0, &KickSpec::silent(16), &flow, &mut s.kicks).unwrap();
        assert_eq!(step.state, u);
    }

    #[test]
    fn strong_viscosity_leaves_only_the_kick() {
        let g = grid();
        let u = SpectralField::basis(&g, 1).unwrap().scaled(3.0);
        let flow = FlowParams::new(1e3, 1.0, 1e-2).unwrap();
        let spec = KickSpec::power_law(16, 0.5, 1.0, CoordinateLaw::default()).unwrap();
        let clock = ClockSpec::new(1.0).unwrap();
        let mut s = ReplicaStreams::new(6, 0);
        let step = embedded_step(&u, &spec, &clock, &flow, &mut s).unwrap();
        let resid = (&step.state - &step.kick).norm_h1();
        // e^{-ν α_1 t} with ν = 10³; waits below 0.05 would still leave e^{-50}
        assert!(resid < 3.0 * (-1e3 * step.wait).exp() + 1e-12, "resid {resid}, wait {}", step.wait);
    }

    #[test]
    fn simulate_without_kicks_is_deterministic_flow() {
        let g = grid();
        let u = SpectralField::basis(&g, 1).unwrap();
        let flow = FlowParams::new(1.0, 1.0, 1e-2).unwrap();
        let clock = ClockSpec::new(1e-9).unwrap();
        let spec = KickSpec::power_law(16, 0.5, 1.0, CoordinateLaw::default()).unwrap();
        let mut s = ReplicaStreams::new(7, 0);
        let log = simulate(&u, 2.0, &[0.5, 2.0, 0.0], &spec, &clock, &flow, 7, 0, &mut s).unwrap();
        assert!(log.kicks.is_empty());
        assert_eq!(log.samples.len(), 3);
        let exact = evolve(&u, 0.5, &flow).unwrap();
        assert_eq!(log.samples[1].state, exact.coeffs());
        assert!(simulate(&u, 2.0, &[3.0], &spec, &clock, &flow, 7, 0, &mut s).is_err());
        assert!(simulate(&u, 0.0, &[], &spec, &clock, &flow, 7, 0, &mut s).is_err());
    }

    #[test]
    fn simulate_is_reproducible_and_consistent() {
        let g = grid();
        let u = SpectralField::basis(&g, 1).unwrap();
        let flow = FlowParams::new(1.0, 1.0, 1e-2).unwrap();
        let clock = ClockSpec::new(2.0).unwrap();
        let spec = KickSpec::power_law(16, 0.5, 1.0, CoordinateLaw::default()).unwrap();
        let times = [0.25, 1.0, 2.5, 3.0];
        let a = simulate(&u, 3.0, &times, &spec, &clock, &flow, 9, 1, &mut ReplicaStreams::new(9, 1)).unwrap();
        let b = simulate(&u, 3.0, &times, &spec, &clock, &flow, 9, 1, &mut ReplicaStreams::new(9, 1)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let mut prev = 0.0;
        for e in &a.kicks {
            assert!(e.tau > prev);
            assert!((e.tau - prev - e.wait).abs() < 1e-12);
            prev = e.tau;
        }
        for s in &a.samples {
            assert_eq!(s.n_kicks, a.count_at(s.t));
            let k = s.n_kicks;
            let (base, tau) = if k == 0 {
                (u.clone(), 0.0)
            } else {
                let e = &a.kicks[k - 1];
                (SpectralField::from_coeffs(&g, e.state.clone()).unwrap(), e.tau)
            };
            let expected = evolve(&base, s.t - tau, &flow).unwrap();
            assert_eq!(expected.coeffs(), &s.state[..]);
        }
        let mut csv = Vec::new();
        a.write_samples_csv(&g, &EnergyParams::new(0.25, 1.0).unwrap(), 2, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,norm_h1,H,re_c1,im_c1,re_c2,im_c2\n"));
        assert_eq!(text.lines().count(), 1 + times.len());
    }

    #[test]
    fn hitting_time_cases() {
        assert_eq!(hitting_time(&[0.5, 3.0], 1.0), Some(0));
        assert_eq!(hitting_time(&[5.0, 3.0, 0.9], 1.0), Some(2));
        assert_eq!(hitting_time(&[5.0, 3.0], 1.0), None);
        assert_eq!(hitting_time(&[5.0, 3.0], 1e9), Some(0));
    }

    #[test]
    fn moment_estimate_requires_replicas() {
        let chains = vec![vec![1.0; 5]; 99];
        assert!(matches!(moment_estimate(&chains, 1.0), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn moment_estimate_recovers_geometric_decay() {
        let chains: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..40).map(|k| 2.0 + 8.0 * 0.6f64.powi(k)).collect())
            .collect();
        let r = moment_estimate(&chains, 1.0).unwrap();
        let g = r.gamma.unwrap();
        assert!((g - 0.6).abs() < 0.02, "gamma {g}");
        assert_eq!(r.running_max[10], 10.0);
        let zero_start: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..40).map(|k| 2.0 - 2.0 * 0.5f64.powi(k)).collect())
            .collect();
        let r0 = moment_estimate(&zero_start, 1.0).unwrap();
        assert_eq!(r0.per_step[0], 0.0);
        assert!(r0.gamma.unwrap() < 1.0);
    }
}
