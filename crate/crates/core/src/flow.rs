//! The resolving semigroup `S_t` of `u̇ − νΔu + iβ|u|²u = 0` with Dirichlet
//! conditions, and probes of its a-priori estimates.
//!
//! `S_t` is approximated by Strang splitting of two exactly solvable flows:
//! the heat flow, diagonal in the sine basis, and the phase flow
//! `u̇ = −iβ|u|²u`, which rotates every nodal value by `exp(−iβ|u|²t)`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{EnergyParams, Grid, SpectralField};

/// A replica is aborted once `‖u‖₁` exceeds this bound mid-flow.
pub const DIVERGENCE_H1: f64 = 1e6;

pub const DEFAULT_DT_MAX: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstepPolicy {
    /// `m = max(1, ceil(t / dt_max))`.
    Ceiling,
    /// Exactly `m` substeps regardless of `t`.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub nu: f64,
    pub beta: f64,
    pub dt_max: f64,
    pub policy: SubstepPolicy,
}

impl FlowParams {
    pub fn new(nu: f64, beta: f64, dt_max: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Argument(format!("nu must be > 0, got {nu}")));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::Argument(format!("beta must be >= 0, got {beta}")));
        }
        if !(dt_max.is_finite() && dt_max > 0.0) {
            return Err(Error::Argument(format!("dt_max must be > 0, got {dt_max}")));
        }
        Ok(Self {
            nu,
            beta,
            dt_max,
            policy: SubstepPolicy::Ceiling,
        })
    }

    pub fn with_policy(mut self, policy: SubstepPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn substeps(&self, t: f64) -> usize {
        match self.policy {
            SubstepPolicy::Ceiling => ((t / self.dt_max).ceil() as usize).max(1),
            SubstepPolicy::Fixed(m) => m.max(1),
        }
    }

    pub fn energy_params(&self, alpha: f64) -> Result<EnergyParams> {
        EnergyParams::new(alpha, self.beta)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Argument(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Exact heat flow: `c_j ← exp(−ν α_j t) c_j`.
pub fn heat_substep(u: &SpectralField, t: f64, nu: f64) -> Result<SpectralField> {
    check_time(t)?;
    let mut out = u.clone();
    let eig = u.grid().eigenvalues().to_vec();
    for (c, a) in out.coeffs_mut().iter_mut().zip(eig) {
        *c *= (-nu * a * t).exp();
    }
    Ok(out)
}

/// Rotates nodal samples in place by `exp(−iβ|u|²t)`.
pub fn phase_rotate_physical(samples: &mut [Complex64], t: f64, beta: f64) {
    for v in samples.iter_mut() {
        let theta = -beta * v.norm_sqr() * t;
        *v *= Complex64::from_polar(1.0, theta);
    }
}

/// Exact pointwise phase flow followed by projection onto the retained modes.
pub fn phase_substep(u: &SpectralField, t: f64, beta: f64) -> Result<SpectralField> {
    check_time(t)?;
    if t == 0.0 || beta == 0.0 {
        return Ok(u.clone());
    }
    let mut phys = u.to_physical();
    phase_rotate_physical(&mut phys, t, beta);
    SpectralField::from_physical(u.grid(), &phys)
}

struct Strang {
    half: Vec<f64>,
    dt: f64,
    beta: f64,
}

impl Strang {
    fn new(grid: &Grid, dt: f64, params: &FlowParams) -> Self {
        let half = grid
            .eigenvalues()
            .iter()
            .map(|a| (-params.nu * a * dt * 0.5).exp())
            .collect();
        Self {
            half,
            dt,
            beta: params.beta,
        }
    }

    fn heat(u: &mut SpectralField, factors: &[f64]) {
        for (c, f) in u.coeffs_mut().iter_mut().zip(factors) {
            *c *= *f;
        }
    }

    fn phase(&self, u: &mut SpectralField) {
        if self.beta == 0.0 {
            return;
        }
        let mut phys = u.to_physical();
        phase_rotate_physical(&mut phys, self.dt, self.beta);
        *u = SpectralField::from_physical(u.grid(), &phys).expect("grid-shaped samples");
    }

    /// One full Strang step `heat(dt/2) ∘ phase(dt) ∘ heat(dt/2)`.
    fn step(&self, u: &mut SpectralField) {
        Self::heat(u, &self.half);
        self.phase(u);
        Self::heat(u, &self.half);
    }
}

fn guard(u: &SpectralField, time: f64) -> Result<()> {
    let norm = u.norm_h1();
    if !norm.is_finite() || norm > DIVERGENCE_H1 {
        return Err(Error::Divergence { time, norm });
    }
    Ok(())
}

/// `S_t u`.
pub fn evolve(u: &SpectralField, t: f64, params: &FlowParams) -> Result<SpectralField> {
    evolve_observed(u, t, params, |_, _| {})
}

/// `S_t u`, calling `observer(s, S_s u)` at `s = 0` and after every Strang
/// substep.
pub fn evolve_observed<F>(
    u: &SpectralField,
    t: f64,
    params: &FlowParams,
    mut observer: F,
) -> Result<SpectralField>
where
    F: FnMut(f64, &SpectralField),
{
    check_time(t)?;
    observer(0.0, u);
    if t == 0.0 {
        return Ok(u.clone());
    }
    let m = params.substeps(t);
    let dt = t / m as f64;
    let strang = Strang::new(u.grid(), dt, params);
    let mut v = u.clone();
    for i in 1..=m {
        strang.step(&mut v);
        let s = if i == m { t } else { i as f64 * dt };
        guard(&v, s)?;
        observer(s, &v);
    }
    Ok(v)
}

/// Diagnostics sampled at substep boundaries of one deterministic run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub norm_h1: Vec<f64>,
    /// Trapezoid running value of `∫₀ᵗ ‖Δu‖² ds`.
    pub enstrophy_integral: Vec<f64>,
    pub fitted_decay_rate: Option<f64>,
}

impl FlowDiagnostics {
    pub fn record(
        u0: &SpectralField,
        t: f64,
        flow: &FlowParams,
        energy: &EnergyParams,
    ) -> Result<(SpectralField, FlowDiagnostics)> {
        let mut d = FlowDiagnostics::default();
        let lam = u0.grid().eigenvalues().to_vec();
        let mut last: Option<(f64, Vec<f64>)> = None;
        let mut integral = 0.0;
        let end = evolve_observed(u0, t, flow, |s, u| {
            // Per-mode logarithmic mean: exact for pure exponential decay,
            // which the trapezoid rule badly overestimates on rough data.
            let h2: Vec<f64> = u.coeffs().iter().zip(&lam).map(|(c, l)| l * l * c.norm_sqr()).collect();
            if let Some((s0, h20)) = &last {
                integral += (s - s0) * h20.iter().zip(&h2).map(|(&a, &b)| log_mean(a, b)).sum::<f64>();
            }
            last = Some((s, h2));
            d.times.push(s);
            d.energy.push(u.energy(energy));
            d.norm_h1.push(u.norm_h1());
            d.enstrophy_integral.push(integral);
        })?;
        d.fitted_decay_rate = fit_log_slope(&d.times, &d.energy).map(|s| -s);
        Ok((end, d))
    }

    /// Concatenates another replica's rows.
    pub fn merge(&mut self, other: FlowDiagnostics) {
        self.times.extend(other.times);
        self.energy.extend(other.energy);
        self.norm_h1.extend(other.norm_h1);
        self.enstrophy_integral.extend(other.enstrophy_integral);
    }

    /// CSV rows `time,H,enstrophy_integral,norm_h1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,H,enstrophy_integral,norm_h1")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.10e},{:.10e},{:.10e},{:.10e}",
                self.times[i], self.energy[i], self.enstrophy_integral[i], self.norm_h1[i]
            )?;
        }
        Ok(())
    }
}

fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.5 * (a + b);
    }
    let r = b / a;
    if (r - 1.0).abs() < 1e-6 {
        0.5 * (a + b)
    } else {
        (b - a) / r.ln()
    }
}

/// Least-squares slope of `log y` against `t` over the positive samples.
fn fit_log_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &y)| y > 0.0 && y.is_finite())
        .map(|(&t, &y)| (t, y.ln()))
        .collect();
    crate::stats::linear_fit(&pts).map(|f| f.slope)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub alpha0: f64,
    pub alpha_min: f64,
    pub horizon: f64,
    /// `a` is reported as `(1 − margin)` times the slowest observed decay rate.
    pub margin: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            alpha0: 0.25,
            alpha_min: 1e-6,
            horizon: 10.0,
            margin: 0.02,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    /// Decay rate `a` of `H(S_t u) ≤ e^{−at} H(u)`.
    pub decay_rate: f64,
    /// `(alpha, slowest observed rate or None when H failed to decrease)`
    /// for every schedule entry tried.
    pub schedule: Vec<(f64, Option<f64>)>,
}

impl Calibration {
    pub fn energy_params(&self, flow: &FlowParams) -> Result<EnergyParams> {
        EnergyParams::new(self.alpha, flow.beta)
    }
}

/// Slowest instantaneous decay rate of `log H(S_t u)` on `[0, horizon]`, or
/// `None` if `H` fails to decrease strictly between two samples.
pub fn slowest_energy_decay(
    u: &SpectralField,
    horizon: f64,
    flow: &FlowParams,
    energy: &EnergyParams,
) -> Result<Option<f64>> {
    let mut prev: Option<(f64, f64)> = None;
    let mut slowest = f64::INFINITY;
    let mut monotone = true;
    evolve_observed(u, horizon, flow, |s, v| {
        let h = v.energy(energy);
        // Below this level the state is numerically zero and log H is noise.
        if !(h > 1e-250) {
            return;
        }
        if let Some((s0, h0)) = prev {
            if h >= h0 {
                monotone = false;
            } else {
                slowest = slowest.min(-(h.ln() - h0.ln()) / (s - s0));
            }
        }
        prev = Some((s, h));
    })?;
    Ok(if monotone { Some(slowest) } else { None })
}

/// Largest `α` on the halving schedule `α₀, α₀/2, …` for which every trial
/// state shows strictly decreasing `H(S_t u)`, with the fitted exponential
/// rate `a`.
pub fn calibrate_alpha(
    flow: &FlowParams,
    trial_states: &[SpectralField],
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if trial_states.is_empty() {
        return Err(Error::Argument("calibration needs at least one trial state".into()));
    }
    let mut schedule = Vec::new();
    let mut alpha = opts.alpha0;
    while alpha >= opts.alpha_min {
        let energy = flow.energy_params(alpha)?;
        let mut slowest = f64::INFINITY;
        let mut ok = true;
        for u in trial_states.iter().filter(|u| !u.is_zero()) {
            match slowest_energy_decay(u, opts.horizon, flow, &energy)? {
                Some(r) if r > 0.0 => slowest = slowest.min(r),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            schedule.push((alpha, Some(slowest)));
            // All-zero trial sets carry no rate information; fall back to the
            // linear rate of the slowest mode.
            let rate = if slowest.is_finite() {
                slowest
            } else {
                2.0 * flow.nu * trial_states[0].grid().eigenvalues()[0]
            };
            return Ok(Calibration {
                alpha,
                decay_rate: (1.0 - opts.margin) * rate,
                schedule,
            });
        }
        schedule.push((alpha, None));
        alpha *= 0.5;
    }
    Err(Error::Calibration(format!(
        "no alpha >= {} gives monotone energy decay",
        opts.alpha_min
    )))
}

/// Count of samples `(s, H(S_s u))` on `[0, horizon]` breaking
/// `H(S_s u) ≤ e^{−as} H(u) (1 + rel_tol)`, and the worst ratio seen.
pub fn dissipation_violations(
    u: &SpectralField,
    horizon: f64,
    flow: &FlowParams,
    energy: &EnergyParams,
    decay_rate: f64,
    rel_tol: f64,
) -> Result<(usize, f64)> {
    let h0 = u.energy(energy);
    let mut violations = 0;
    let mut worst = 0.0f64;
    evolve_observed(u, horizon, flow, |s, v| {
        let bound = (-decay_rate * s).exp() * h0;
        let h = v.energy(energy);
        if bound > 0.0 {
            worst = worst.max(h / bound);
        }
        if h > bound * (1.0 + rel_tol) {
            violations += 1;
        }
    })?;
    Ok((violations, worst))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnstrophyReport {
    /// `αν ∫₀ᵗ ‖Δu‖² ds`.
    pub lhs: f64,
    /// `H(u₀)`.
    pub rhs: f64,
    pub tol: f64,
    pub holds: bool,
    /// Running left side at each substep boundary.
    pub running_lhs: Vec<(f64, f64)>,
}

/// Checks `αν ∫₀ᵗ ‖Δu‖² ds ≤ H(u₀)(1 + tol)`.
pub fn enstrophy_budget_check(
    u0: &SpectralField,
    t: f64,
    flow: &FlowParams,
    energy: &EnergyParams,
    tol: f64,
) -> Result<EnstrophyReport> {
    let (_, d) = FlowDiagnostics::record(u0, t, flow, energy)?;
    let scale = energy.alpha * flow.nu;
    let running_lhs: Vec<(f64, f64)> = d
        .times
        .iter()
        .zip(&d.enstrophy_integral)
        .map(|(&s, &i)| (s, scale * i))
        .collect();
    let lhs = running_lhs.last().map_or(0.0, |p| p.1);
    let rhs = u0.energy(energy);
    Ok(EnstrophyReport {
        lhs,
        rhs,
        tol,
        holds: lhs <= rhs * (1.0 + tol),
        running_lhs,
    })
}

fn distinct(u: &SpectralField, v: &SpectralField) -> Result<f64> {
    let d = u.distance_h1(v);
    if d == 0.0 {
        return Err(Error::DegenerateInput("probe needs u != v".into()));
    }
    Ok(d)
}

/// `√t ‖S_t u − S_t v‖₂ / ‖u − v‖₁` for each `t` in `t_list ⊂ (0, 1]`.
pub fn smoothing_probe(
    u: &SpectralField,
    v: &SpectralField,
    t_list: &[f64],
    flow: &FlowParams,
) -> Result<Vec<(f64, f64)>> {
    let d0 = distinct(u, v)?;
    t_list
        .iter()
        .map(|&t| {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Argument(format!("smoothing time {t} outside (0, 1]")));
            }
            let su = evolve(u, t, flow)?;
            let sv = evolve(v, t, flow)?;
            Ok((t, t.sqrt() * (&su - &sv).norm_h2() / d0))
        })
        .collect()
}

/// `‖S_t u − S_t v‖₁ / ‖u − v‖₁`.
pub fn lipschitz_probe(
    u: &SpectralField,
    v: &SpectralField,
    t: f64,
    flow: &FlowParams,
) -> Result<f64> {
    let d0 = distinct(u, v)?;
    let su = evolve(u, t, flow)?;
    let sv = evolve(v, t, flow)?;
    Ok(su.distance_h1(&sv) / d0)
}

/// Self-convergence errors `‖S^{(m)} − S^{(2m)}‖₁` for `m = m0, 2m0, …`
/// (`levels` differences, `levels + 1` runs).
pub fn strang_self_convergence(
    u: &SpectralField,
    t: f64,
    flow: &FlowParams,
    m0: usize,
    levels: usize,
) -> Result<Vec<f64>> {
    let runs = (0..=levels)
        .map(|i| {
            let p = flow.with_policy(SubstepPolicy::Fixed(m0 << i));
            evolve(u, t, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(runs.windows(2).map(|w| w[0].distance_h1(&w[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn smooth_field(grid: &Arc<Grid>, amp: f64, rng: &mut impl Rng) -> SpectralField {
        let coeffs = (1..=grid.n_modes())
            .map(|j| {
                let s = amp * (-(j as f64) / 2.0).exp();
                Complex64::new(s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0))
            })
            .collect();
        SpectralField::from_coeffs(grid, coeffs).unwrap()
    }

    #[test]
    fn heat_substep_decays_each_mode() {
        let g = Grid::padded(PI, 8).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap();
        let v = heat_substep(&u, 1.0, 1.0).unwrap();
        assert!((v.coeff(1).re - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(heat_substep(&u, 0.0, 1.0).unwrap(), u);
        assert!(heat_substep(&u, -1.0, 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = smooth_field(&g, 1.0, &mut rng);
        let a = heat_substep(&heat_substep(&w, 0.3, 0.7).unwrap(), 0.2, 0.7).unwrap();
        let b = heat_substep(&w, 0.5, 0.7).unwrap();
        assert!((&a - &b).norm_h1() < 1e-14);
        assert!(b.norm_h1() <= w.norm_h1());
    }

    #[test]
    fn phase_substep_preserves_modulus_and_norm() {
        let g = Grid::padded(PI, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = smooth_field(&g, 1.0, &mut rng);
        let before = u.to_physical();
        let mut after = before.clone();
        phase_rotate_physical(&mut after, 0.37, 2.0);
        let max_diff = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-12);
        let n0 = crate::spectral::physical_norm_sq(&g, &before).sqrt();
        let n1 = crate::spectral::physical_norm_sq(&g, &after).sqrt();
        assert!((n0 - u.norm()).abs() < 1e-12);
        assert!((n1 - n0).abs() <= 1e-10 * n0);
        assert_eq!(phase_substep(&u, 0.0, 2.0).unwrap(), u);
    }

    #[test]
    fn phase_rotation_matches_closed_form() {
        let l = PI;
        let g = Grid::padded(l, 8).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap().scaled(0.8);
        let mut phys = u.to_physical();
        let (beta, t) = (1.5, 0.2);
        phase_rotate_physical(&mut phys, t, beta);
        for (x, v) in g.nodes().iter().zip(phys) {
            let a = 0.8 * (2.0 / l).sqrt() * (PI * x / l).sin();
            let expected = Complex64::from_polar(a, -beta * a * a * t);
            assert!((v - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn linear_flow_is_exact_heat() {
        let g = Grid::padded(PI, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = smooth_field(&g, 1.0, &mut rng);
        let p = FlowParams::new(0.8, 0.0, 1e-2).unwrap();
        let a = evolve(&u, 0.73, &p).unwrap();
        let b = heat_substep(&u, 0.73, 0.8).unwrap();
        assert!((&a - &b).norm_h1() < 1e-13);
        let z = SpectralField::zeros(&g);
        assert!(evolve(&z, 2.0, &FlowParams::new(1.0, 1.0, 1e-2).unwrap())
            .unwrap()
            .is_zero());
        assert_eq!(evolve(&u, 0.0, &p).unwrap(), u);
    }

    #[test]
    fn substep_policy() {
        let p = FlowParams::new(1.0, 1.0, 1e-2).unwrap();
        assert_eq!(p.substeps(1e-9), 1);
        assert_eq!(p.substeps(0.1), 10);
        assert_eq!(p.substeps(0.105), 11);
        assert_eq!(p.with_policy(SubstepPolicy::Fixed(3)).substeps(10.0), 3);
    }

    #[test]
    fn divergence_is_reported_with_time() {
        let g = Grid::padded(PI, 8).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap().scaled(2e6);
        let p = FlowParams::new(1.0, 0.0, 1e-2).unwrap();
        match evolve(&u, 0.05, &p) {
            Err(Error::Divergence { time, .. }) => assert!(time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn strang_is_second_order() {
        let g = Grid::padded(PI, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = smooth_field(&g, 2.0, &mut rng);
        let p = FlowParams::new(1.0, 2.0, 1e-2).unwrap();
        let errs = strang_self_convergence(&u, 0.1, &p, 4, 3).unwrap();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}, errs {errs:?}");
        }
    }

    #[test]
    fn linear_decay_rate_calibrates_to_twice_first_eigenvalue() {
        let g = Grid::padded(PI, 16).unwrap();
        let p = FlowParams::new(1.0, 1e-3, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials: Vec<_> = (0..3).map(|_| smooth_field(&g, 0.5, &mut rng)).collect();
        let cal = calibrate_alpha(&p, &trials, &CalibrationOptions::default()).unwrap();
        assert_eq!(cal.alpha, 0.25);
        // slowest mode decays like e^{-2ν α_1 t}
        assert!((cal.decay_rate - 2.0).abs() < 0.1, "a = {}", cal.decay_rate);
        let zero_only = calibrate_alpha(&p, &[SpectralField::zeros(&g)], &CalibrationOptions::default()).unwrap();
        assert_eq!(zero_only.alpha, 0.25);
        assert!(calibrate_alpha(&p, &[], &CalibrationOptions::default()).is_err());
    }

    #[test]
    fn enstrophy_budget_zero_state() {
        let g = Grid::padded(PI, 8).unwrap();
        let p = FlowParams::new(1.0, 1.0, 1e-2).unwrap();
        let e = p.energy_params(0.25).unwrap();
        let r = enstrophy_budget_check(&SpectralField::zeros(&g), 1.0, &p, &e, 0.02).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn enstrophy_budget_first_mode() {
        let g = Grid::padded(PI, 16).unwrap();
        let p = FlowParams::new(1.0, 1.0, 1e-3).unwrap();
        let e = p.energy_params(0.25).unwrap();
        let u0 = SpectralField::basis(&g, 1).unwrap();
        let r = enstrophy_budget_check(&u0, 5.0, &p, &e, 0.02).unwrap();
        assert!(r.holds, "{} vs {}", r.lhs, r.rhs);
        assert!(r.running_lhs.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn smoothing_probe_linear_single_mode() {
        let g = Grid::padded(PI, 8).unwrap();
        let p = FlowParams::new(1.0, 0.0, 1e-2).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap().scaled(0.3);
        let v = SpectralField::zeros(&g);
        let ts = [1e-3, 0.1, 0.5];
        for (t, r) in smoothing_probe(&u, &v, &ts, &p).unwrap() {
            // √t α_1^{1/2} e^{-ν α_1 t} with α_1 = 1
            let expected = t.sqrt() * (-t).exp();
            assert!((r - expected).abs() < 1e-12);
        }
        assert!(matches!(smoothing_probe(&u, &u, &ts, &p), Err(Error::DegenerateInput(_))));
        assert!(smoothing_probe(&u, &v, &[0.0], &p).is_err());
        assert!(smoothing_probe(&u, &v, &[1.5], &p).is_err());
    }

    #[test]
    fn lipschitz_probe_properties() {
        let g = Grid::padded(PI, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = smooth_field(&g, 1.0, &mut rng);
        let v = smooth_field(&g, 1.0, &mut rng);
        let lin = FlowParams::new(1.0, 0.0, 1e-2).unwrap();
        assert!(lipschitz_probe(&u, &v, 0.5, &lin).unwrap() <= 1.0);
        let nl = FlowParams::new(1.0, 1.0, 1e-2).unwrap();
        let a = lipschitz_probe(&u, &v, 0.5, &nl).unwrap();
        let b = lipschitz_probe(&v, &u, 0.5, &nl).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
        assert!(lipschitz_probe(&u, &u, 0.5, &nl).is_err());
    }

    #[test]
    fn diagnostics_csv_has_schema() {
        let g = Grid::padded(PI, 8).unwrap();
        let p = FlowParams::new(1.0, 1.0, 0.1).unwrap();
        let e = p.energy_params(0.25).unwrap();
        let (_, d) = FlowDiagnostics::record(&SpectralField::basis(&g, 1).unwrap(), 0.3, &p, &e).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,H,enstrophy_integral,norm_h1"));
        assert_eq!(lines.count(), 4);
        assert!(d.fitted_decay_rate.unwrap() > 0.0);
    }
}
