//! Stationary proxies by time averaging, and the Khasminskii relation
//! between the continuous-time and embedded-chain stationary laws.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dictionary::{EmpiricalEnsemble, TestDictionary};
use crate::error::{Error, Result};
use crate::flow::evolve_observed;
use crate::kicks::{KickedSystem, RunStatus};
use crate::rng::{map_replicas, ReplicaStreams};
use crate::spectral::SpectralField;
use crate::stats::{self, block_resample_indices, default_block_len, normal_quantile, Bootstrap, Interval};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    pub burn_in: f64,
    pub horizon: f64,
    /// Spacing of the continuous-time samples.
    pub sample_dt: f64,
    pub seed: u64,
    pub replica: u64,
}

/// Per-functional comparison of the two halves of a sample path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HalvesCheck {
    pub name: String,
    pub first: f64,
    pub second: f64,
    /// `|first − second| / sqrt(se_1² + se_2²)`, block-bootstrap errors.
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct StationaryProxy {
    /// `u_t` on the regular grid after burn-in.
    pub continuous: EmpiricalEnsemble,
    /// Post-kick states `u_{τ_k}` with `τ_k` after burn-in.
    pub chain: EmpiricalEnsemble,
    pub halves: Vec<HalvesCheck>,
    /// Bonferroni-corrected two-sided 95% critical value used for `halves`.
    pub critical_z: f64,
    pub converged: bool,
}

/// Block-bootstrap standard error of the mean.
fn block_se(xs: &[f64], boot: &Bootstrap, salt: u64) -> f64 {
    let block = default_block_len(xs.len()).max(10);
    let mut rng = boot.rng(salt);
    let n = xs.len();
    let reps: Vec<f64> = (0..boot.resamples)
        .map(|_| block_resample_indices(n, block, &mut rng).iter().map(|&i| xs[i]).sum::<f64>() / n as f64)
        .collect();
    stats::variance(&reps).sqrt()
}

/// Time averages along one long trajectory past `burn_in`. The run counts as
/// converged when no dictionary mean differs between the two halves of the
/// sample by more than the Bonferroni-corrected 95% critical value.
pub fn krylov_bogolyubov_estimate(
    u0: &SpectralField,
    opts: &StationaryOptions,
    system: &KickedSystem,
    dict: &TestDictionary,
    boot: &Bootstrap,
) -> Result<StationaryProxy> {
    if !(opts.horizon > opts.burn_in && opts.burn_in >= 0.0 && opts.sample_dt > 0.0) {
        return Err(Error::Argument("need 0 <= burn_in < horizon and sample_dt > 0".into()));
    }
    let n = ((opts.horizon - opts.burn_in) / opts.sample_dt).floor() as usize;
    let times: Vec<f64> = (1..=n).map(|i| opts.burn_in + i as f64 * opts.sample_dt).collect();
    let mut streams = ReplicaStreams::new(opts.seed, opts.replica);
    let log = system.simulate(u0, opts.horizon, &times, opts.seed, opts.replica, &mut streams)?;
    if let RunStatus::Diverged { time, norm } = log.status {
        return Err(Error::Divergence { time, norm });
    }
    let grid = u0.grid();
    let continuous: Vec<SpectralField> = log
        .samples
        .into_iter()
        .map(|s| SpectralField::from_coeffs(grid, s.state))
        .collect::<Result<_>>()?;
    let chain: Vec<SpectralField> = log
        .kicks
        .into_iter()
        .filter(|e| e.tau > opts.burn_in)
        .map(|e| SpectralField::from_coeffs(grid, e.state))
        .collect::<Result<_>>()?;
    let feats = dict.features(&continuous);
    let half = feats.len() / 2;
    let names = dict.names();
    let critical_z = normal_quantile(1.0 - 0.025 / names.len() as f64);
    let halves: Vec<HalvesCheck> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let a: Vec<f64> = feats[..half].iter().map(|r| r[j]).collect();
            let b: Vec<f64> = feats[half..].iter().map(|r| r[j]).collect();
            let (ma, mb) = (stats::mean(&a), stats::mean(&b));
            let se = (block_se(&a, boot, 2 * j as u64).powi(2) + block_se(&b, boot, 2 * j as u64 + 1).powi(2)).sqrt();
            let z = if se > 0.0 {
                (ma - mb).abs() / se
            } else if ma == mb {
                0.0
            } else {
                f64::INFINITY
            };
            HalvesCheck {
                name: name.clone(),
                first: ma,
                second: mb,
                z,
            }
        })
        .collect();
    let converged = halves.iter().all(|h| h.z <= critical_z);
    let cs = vec![(opts.seed, opts.replica); continuous.len()];
    let ks = vec![(opts.seed, opts.replica); chain.len()];
    Ok(StationaryProxy {
        continuous: EmpiricalEnsemble::new(continuous, opts.horizon, "continuous", cs)?,
        chain: EmpiricalEnsemble::new(chain, opts.horizon, "embedded", ks)?,
        halves,
        critical_z,
        converged,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KhasminskiiRow {
    pub name: String,
    pub lhs: f64,
    pub lhs_ci: Interval,
    pub rhs: f64,
    pub rhs_ci: Interval,
    pub overlap: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KhasminskiiReport {
    pub rows: Vec<KhasminskiiRow>,
    pub n_cycles: usize,
    pub mean_tau: f64,
    pub mean_tau_se: f64,
    pub inverse_lambda: f64,
}

impl KhasminskiiReport {
    pub fn all_overlap(&self) -> bool {
        self.rows.iter().all(|r| r.overlap)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "functional,lhs,lhs_lo,lhs_hi,rhs,rhs_lo,rhs_hi,overlap")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{}",
                r.name, r.lhs, r.lhs_ci.lo, r.lhs_ci.hi, r.rhs, r.rhs_ci.lo, r.rhs_ci.hi, r.overlap
            )?;
        }
        Ok(())
    }
}

/// Compares `(f, μ)` from continuous-time samples with
/// `E_ν ∫₀^{τ₁} f(u_t) dt / E_ν τ₁`, the cycle average restarted from
/// `n_cycles` embedded-chain states. Cycle integrals use the trapezoid rule
/// on the flow substeps.
pub fn khasminskii_check(
    dict: &TestDictionary,
    proxy: &StationaryProxy,
    n_cycles: usize,
    system: &KickedSystem,
    seed: u64,
    boot: &Bootstrap,
) -> Result<KhasminskiiReport> {
    let starts = &proxy.chain.states;
    if starts.is_empty() || proxy.continuous.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let w = dict.len();
    let cycles = map_replicas(seed, n_cycles, |r, streams| -> Result<(f64, Vec<f64>)> {
        let u = &starts[r as usize % starts.len()];
        let tau = system.clock.sample_wait(&mut streams.clock);
        let mut integral = vec![0.0; w];
        let mut prev: Option<(f64, Vec<f64>)> = None;
        evolve_observed(u, tau, &system.flow, |s, v| {
            let f = dict.eval(v);
            if let Some((s0, f0)) = &prev {
                let h = s - s0;
                for j in 0..w {
                    integral[j] += 0.5 * h * (f0[j] + f[j]);
                }
            }
            prev = Some((s, f));
        })?;
        Ok((tau, integral))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let taus: Vec<f64> = cycles.iter().map(|c| c.0).collect();
    let tau_sum: f64 = taus.iter().sum();
    let cont = dict.features(&proxy.continuous.states);
    let block_c = default_block_len(cont.len()).max(10);
    let block_r = default_block_len(n_cycles).max(10);
    let names = dict.names();
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let xs: Vec<f64> = cont.iter().map(|r| r[j]).collect();
            let lhs = stats::mean(&xs);
            let lhs_ci = boot.mean_interval(&xs, block_c, 100 + j as u64);
            let rhs = cycles.iter().map(|c| c.1[j]).sum::<f64>() / tau_sum;
            // Ratio of means, resampling whole cycles in blocks because
            // neighbouring starts are correlated.
            let mut rng = boot.rng(10_000 + j as u64);
            let reps: Vec<f64> = (0..boot.resamples)
                .map(|_| {
                    let idx = block_resample_indices(n_cycles, block_r, &mut rng);
                    let num: f64 = idx.iter().map(|&i| cycles[i].1[j]).sum();
                    let den: f64 = idx.iter().map(|&i| cycles[i].0).sum();
                    num / den
                })
                .collect();
            let rhs_ci = Interval::from_replicates(reps, boot.level);
            KhasminskiiRow {
                name: name.clone(),
                lhs,
                overlap: lhs_ci.overlaps(&rhs_ci),
                lhs_ci,
                rhs,
                rhs_ci,
            }
        })
        .collect();
    Ok(KhasminskiiReport {
        rows,
        n_cycles,
        mean_tau: stats::mean(&taus),
        mean_tau_se: stats::std_error(&taus),
        inverse_lambda: 1.0 / system.clock.lambda,
    })
}
