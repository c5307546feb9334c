//! Mixing curves: distance between the laws of `u_t` started from two
//! initial conditions, as a function of `t`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dictionary::{lower_bound_from_features, TestDictionary, MIN_ENSEMBLE};
use crate::error::{Error, Result};
use crate::kicks::{KickedSystem, RunStatus};
use crate::rng::{map_replicas, splitmix64};
use crate::spectral::SpectralField;
use crate::stats::{self, Bootstrap, LinearFit};

/// Replica divergence rate above which a curve is flagged invalid.
pub const MAX_DIVERGENCE_RATE: f64 = 0.05;

/// Samples `u_t` at every `t` in `times` for `n` independent replicas.
/// Returns per-time feature rows of the completed replicas and the number
/// of diverged replicas.
pub fn ensemble_features(
    u0: &SpectralField,
    times: &[f64],
    n: usize,
    system: &KickedSystem,
    dict: &TestDictionary,
    seed: u64,
) -> Result<(Vec<Vec<Vec<f64>>>, usize)> {
    let horizon = times.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let runs = map_replicas(seed, n, |r, streams| -> Result<Option<Vec<Vec<f64>>>> {
        let log = system.simulate(u0, horizon, times, seed, r, streams)?;
        if log.status != RunStatus::Completed {
            return Ok(None);
        }
        let rows = log
            .samples
            .into_iter()
            .map(|s| SpectralField::from_coeffs(u0.grid(), s.state).map(|u| dict.eval(&u)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(rows))
    });
    let mut per_time = vec![Vec::with_capacity(n); times.len()];
    let mut diverged = 0;
    for run in runs {
        match run? {
            Some(rows) => {
                for (slot, row) in per_time.iter_mut().zip(rows) {
                    slot.push(row);
                }
            }
            None => diverged += 1,
        }
    }
    Ok((per_time, diverged))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingRow {
    pub t: f64,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub argmax: String,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    /// `c` of `e^{−ct}` or `p` of `t^{−p}`.
    pub rate: f64,
    pub log_prefactor: f64,
    pub rss: f64,
    pub aic: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingReport {
    pub rows: Vec<MixingRow>,
    pub exponential: Option<DecayFit>,
    pub power: Option<DecayFit>,
    pub divergence_rate: f64,
    pub valid: bool,
    pub threshold: f64,
    pub time_to_threshold: Option<f64>,
    /// 5-point moving median after burn-in, with the check that it never
    /// rises by more than the matching moving median of the bootstrap
    /// half-widths.
    pub moving_median: Vec<f64>,
    pub moving_median_nonincreasing: bool,
}

impl MixingReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value,ci_lo,ci_hi,argmax")?;
        for r in &self.rows {
            writeln!(w, "{:.6e},{:.6e},{:.6e},{:.6e},{}", r.t, r.value, r.ci_lo, r.ci_hi, r.argmax)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingOptions {
    pub replicas: usize,
    pub threshold: f64,
    /// Rows with `t < burn_in` are excluded from the monotonicity check.
    pub burn_in: f64,
    pub seed: u64,
}

/// Builds independent ensembles from `u0_a` and `u0_b`, evaluates the
/// dual-Lipschitz lower bound on `times` and fits exponential and power-law
/// decay models.
pub fn mixing_curve(
    u0_a: &SpectralField,
    u0_b: &SpectralField,
    times: &[f64],
    system: &KickedSystem,
    dict: &TestDictionary,
    opts: &MixingOptions,
    boot: &Bootstrap,
) -> Result<MixingReport> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::Argument("time grid must be nonnegative and strictly increasing".into()));
    }
    let seed_b = splitmix64(opts.seed ^ 0xB);
    let (fa, div_a) = ensemble_features(u0_a, times, opts.replicas, system, dict, opts.seed)?;
    let (fb, div_b) = ensemble_features(u0_b, times, opts.replicas, system, dict, seed_b)?;
    let divergence_rate = (div_a + div_b) as f64 / (2 * opts.replicas) as f64;
    let n_ok = (opts.replicas - div_a).min(opts.replicas - div_b);
    if n_ok < MIN_ENSEMBLE {
        return Err(Error::InsufficientData {
            needed: MIN_ENSEMBLE,
            got: n_ok,
        });
    }
    let names = dict.names();
    let rows: Vec<MixingRow> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let rep = lower_bound_from_features(&fa[i], &fb[i], &names, boot, i as u64);
            MixingRow {
                t,
                value: rep.value,
                ci_lo: rep.ci.lo,
                ci_hi: rep.ci.hi,
                argmax: rep.argmax,
            }
        })
        .collect();
    let time_to_threshold = rows.iter().find(|r| r.value < opts.threshold).map(|r| r.t);
    let (moving_median, ok) = moving_median_check(&rows, opts.burn_in);
    Ok(MixingReport {
        exponential: fit_decay(&rows, false),
        power: fit_decay(&rows, true),
        rows,
        divergence_rate,
        valid: divergence_rate <= MAX_DIVERGENCE_RATE,
        threshold: opts.threshold,
        time_to_threshold,
        moving_median,
        moving_median_nonincreasing: ok,
    })
}

fn moving_median_check(rows: &[MixingRow], burn_in: f64) -> (Vec<f64>, bool) {
    let post: Vec<&MixingRow> = rows.iter().filter(|r| r.t >= burn_in).collect();
    if post.len() < 5 {
        return (Vec::new(), true);
    }
    let med = |xs: Vec<f64>| stats::median(&xs);
    let mm: Vec<f64> = post.windows(5).map(|w| med(w.iter().map(|r| r.value).collect())).collect();
    let hw: Vec<f64> = post
        .windows(5)
        .map(|w| med(w.iter().map(|r| 0.5 * (r.ci_hi - r.ci_lo)).collect()))
        .collect();
    let ok = (1..mm.len()).all(|i| mm[i] <= mm[i - 1] + hw[i]);
    (mm, ok)
}

/// Least-squares fit of `log value` against `t` (exponential) or `log t`
/// (power law) over rows with positive value and, for the power law,
/// positive time.
fn fit_decay(rows: &[MixingRow], power: bool) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.value > 0.0 && (!power || r.t > 0.0))
        .map(|r| (if power { r.t.ln() } else { r.t }, r.value.ln()))
        .collect();
    let fit: LinearFit = stats::linear_fit(&pts)?;
    let n = fit.n as f64;
    let aic = n * (fit.rss / n).max(1e-300).ln() + 4.0;
    Some(DecayFit {
        rate: -fit.slope,
        log_prefactor: fit.intercept,
        rss: fit.rss,
        aic,
    })
}
