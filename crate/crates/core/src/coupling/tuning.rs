//! Empirical choice of the squeezing index and of the ball radius `d`.

use serde::{Deserialize, Serialize};

use super::pair::{coupled_step, foias_prodi_probe, CoupledPair, CouplingConfig, CouplingModel, PairTrajectory};
use crate::error::{Error, Result};
use crate::rng::{map_replicas, splitmix64};
use crate::spectral::SpectralField;
use crate::stats;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NPrimeRow {
    pub n_prime: usize,
    pub n: usize,
    pub mean_log_contraction: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NPrimeSelection {
    pub rows: Vec<NPrimeRow>,
    /// Smallest `N′` with mean per-step contraction below `e^{−1}`.
    pub selected: Option<usize>,
}

/// Sweeps `N′` over `candidates` with `N = 2N′`, starting each run from
/// `(u, u + h)` where `h` lives above the coupled block. Runs use common
/// random numbers across candidates.
pub fn select_n_prime(
    candidates: &[usize],
    starts: &[(SpectralField, SpectralField)],
    n_steps: usize,
    template: &CouplingModel,
    seed: u64,
) -> Result<NPrimeSelection> {
    if candidates.is_empty() || starts.is_empty() {
        return Err(Error::Argument("empty N' sweep".into()));
    }
    let n_modes = starts[0].0.grid().n_modes();
    let mut rows = Vec::with_capacity(candidates.len());
    for &n_prime in candidates {
        let config = CouplingConfig {
            n: 2 * n_prime,
            n_prime,
            ..template.config
        };
        config.validate(n_modes)?;
        let model = CouplingModel::new(config, template.kicks.clone(), template.clock, template.flow)?;
        let logs = map_replicas(seed, starts.len(), |r, streams| -> Result<Option<f64>> {
            let (u, v) = &starts[r as usize];
            let v = &u.keep_low_coordinates(config.n) + &v.keep_high_coordinates(config.n);
            let traj = PairTrajectory::run(CoupledPair::new(u.clone(), v)?, n_steps, &model, streams)?;
            let k = traj.matched_prefix();
            if k == 0 {
                return Ok(None);
            }
            let rep = foias_prodi_probe(&traj, 0, k, &config, 1e-11)?;
            Ok(rep.mean_log_contraction.is_finite().then_some(rep.mean_log_contraction))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let logs: Vec<f64> = logs.into_iter().flatten().collect();
        rows.push(NPrimeRow {
            n_prime,
            n: config.n,
            mean_log_contraction: if logs.is_empty() { f64::NAN } else { stats::mean(&logs) },
            runs: logs.len(),
        });
    }
    let selected = rows
        .iter()
        .filter(|r| r.mean_log_contraction < -1.0)
        .map(|r| r.n_prime)
        .min();
    Ok(NPrimeSelection { rows, selected })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeBin {
    pub mean_distance: f64,
    pub failure_rate: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingEnvelope {
    pub bins: Vec<EnvelopeBin>,
    /// Least-squares slope through the origin of failure rate on distance.
    pub slope: f64,
    /// Largest per-bin `failure_rate / mean_distance`.
    pub envelope: f64,
    pub d: f64,
    /// `d · envelope < 1/2`.
    pub d_admissible: bool,
}

/// Frequency of failed couplings against `‖S_t u − S_t u′‖₁` from single
/// coupled steps out of each start pair, `draws` times per pair, grouped
/// into `n_bins` equal-count bins.
pub fn coupling_envelope(
    starts: &[(SpectralField, SpectralField)],
    draws: usize,
    n_bins: usize,
    model: &CouplingModel,
    seed: u64,
) -> Result<CouplingEnvelope> {
    if starts.is_empty() || draws == 0 || n_bins == 0 {
        return Err(Error::Argument("empty envelope sample".into()));
    }
    let mut samples = Vec::with_capacity(starts.len() * draws);
    for (i, (u, v)) in starts.iter().enumerate() {
        let pair = CoupledPair::new(u.clone(), v.clone())?;
        let runs = map_replicas(splitmix64(seed ^ i as u64), draws, |_, streams| {
            coupled_step(&pair, model, streams).map(|s| (s.flowed_distance, !s.coupled))
        });
        for r in runs {
            samples.push(r?);
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per = samples.len().div_ceil(n_bins);
    let bins: Vec<EnvelopeBin> = samples
        .chunks(per)
        .map(|c| EnvelopeBin {
            mean_distance: stats::mean(&c.iter().map(|s| s.0).collect::<Vec<_>>()),
            failure_rate: c.iter().filter(|s| s.1).count() as f64 / c.len() as f64,
            count: c.len(),
        })
        .collect();
    let (sxy, sxx) = bins.iter().fold((0.0, 0.0), |(a, b), bin| {
        (a + bin.mean_distance * bin.failure_rate, b + bin.mean_distance * bin.mean_distance)
    });
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let envelope = bins
        .iter()
        .filter(|b| b.mean_distance > 0.0)
        .map(|b| b.failure_rate / b.mean_distance)
        .fold(0.0, f64::max);
    let d = model.config.d;
    Ok(CouplingEnvelope {
        bins,
        slope,
        envelope,
        d,
        d_admissible: d * envelope < 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowParams;
    use crate::kicks::{ClockSpec, KickSpec};
    use crate::spectral::Grid;

    fn model() -> CouplingModel {
        CouplingModel::new(
            CouplingConfig::default(),
            KickSpec::power_law(16, 0.5, 1.0, Default::default()).unwrap(),
            ClockSpec::new(20.0).unwrap(),
            FlowParams::new(1.0, 1.0, 1e-2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identical_starts_never_fail() {
        let g = Grid::padded(std::f64::consts::PI, 16).unwrap();
        let u = SpectralField::basis(&g, 2).unwrap().scaled(0.3);
        let env = coupling_envelope(&[(u.clone(), u)], 200, 4, &model(), 1).unwrap();
        assert!(env.bins.iter().all(|b| b.failure_rate == 0.0 && b.mean_distance == 0.0));
        assert!(env.d_admissible);
    }

    #[test]
    fn failure_rate_grows_with_distance() {
        let g = Grid::padded(std::f64::consts::PI, 16).unwrap();
        let e1 = SpectralField::basis(&g, 1).unwrap();
        let starts: Vec<_> = [0.01, 0.05, 0.2, 0.5]
            .iter()
            .map(|&s| (SpectralField::zeros(&g), e1.scaled(s)))
            .collect();
        let env = coupling_envelope(&starts, 400, 4, &model(), 2).unwrap();
        let first = env.bins.first().unwrap().failure_rate;
        let last = env.bins.last().unwrap().failure_rate;
        assert!(first < last, "{:?}", env.bins);
        assert!(env.slope > 0.0);
    }

    #[test]
    fn squeezing_sweep_prefers_larger_index() {
        let g = Grid::padded(std::f64::consts::PI, 16).unwrap();
        let mut rng = crate::rng::stream(5, 0, 3);
        let starts: Vec<_> = (0..8)
            .map(|_| {
                let mut u = SpectralField::zeros(&g);
                let c: Vec<f64> = (0..32).map(|r| 0.2 * rand::Rng::random_range(&mut rng, -1.0..1.0) / (1.0 + r as f64)).collect();
                u.set_h_coordinates(&c);
                let v = &u + &SpectralField::basis(&g, 9).unwrap().scaled(1e-2);
                (u, v)
            })
            .collect();
        let sel = select_n_prime(&[2, 4], &starts, 10, &model(), 3).unwrap();
        assert_eq!(sel.rows.len(), 2);
        assert!(sel.rows[1].mean_log_contraction < sel.rows[0].mean_log_contraction);
        assert!(sel.selected.is_some());
    }
}
