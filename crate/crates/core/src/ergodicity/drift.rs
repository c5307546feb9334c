//! Drift of the Lyapunov function `F = max(H, A)` along the embedded chain,
//! and exponential moments of the pair hitting time of `B_d`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::{coupled_step, CoupledPair, CouplingModel};
use crate::error::{Error, Result};
use crate::kicks::KickedSystem;
use crate::rng::{map_replicas, splitmix64};
use crate::spectral::{EnergyParams, SpectralField};
use crate::stats;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftPoint {
    pub norm_h1: f64,
    pub f0: f64,
    /// `E_u F(u_k)` for `k = 0..=n_max`.
    pub mean_f: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DriftChoice {
    pub n: usize,
    pub r_prime: f64,
    /// `max E_u F(u_n) / F(u)` over grid points with `‖u‖₁ ≥ R′`.
    pub a: f64,
    /// `max_{k ≤ n} E_u F(u_k)` over grid points with `‖u‖₁ < R′`.
    pub c_prime: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub a_floor: f64,
    pub points: Vec<DriftPoint>,
    pub table: Vec<DriftChoice>,
    /// Smallest `a` among admissible `(n, R′)`, if any is below one.
    pub best: Option<DriftChoice>,
    /// `A` dominates every observed energy, so `F ≡ A` and `a = 1`.
    pub trivial_boundary: bool,
}

impl DriftReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,r_prime,a,c_prime")?;
        for c in &self.table {
            writeln!(w, "{},{:.6e},{:.6e},{:.6e}", c.n, c.r_prime, c.a, c.c_prime)?;
        }
        Ok(())
    }
}

/// Estimates `E_u F(u_k)` from `replicas` chains per grid point and scans
/// `(n, R′)` for a drift factor `a < 1`.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_probe(
    grid_points: &[SpectralField],
    ns: &[usize],
    a_floor: f64,
    r_primes: &[f64],
    replicas: usize,
    system: &KickedSystem,
    energy: &EnergyParams,
    seed: u64,
) -> Result<DriftReport> {
    if a_floor < 1.0 {
        return Err(Error::Argument(format!("A must be >= 1, got {a_floor}")));
    }
    if grid_points.is_empty() || ns.is_empty() || r_primes.is_empty() || replicas == 0 {
        return Err(Error::Argument("empty probe grid".into()));
    }
    let n_max = *ns.iter().max().unwrap();
    let f = |u: &SpectralField| u.energy(energy).max(a_floor);
    let mut points = Vec::with_capacity(grid_points.len());
    let mut max_h: f64 = 0.0;
    for (g, u0) in grid_points.iter().enumerate() {
        let chains = map_replicas(splitmix64(seed ^ g as u64), replicas, |_, streams| {
            system.chain(u0, n_max, streams).map(|c| {
                let h: Vec<f64> = c.energies(energy);
                h
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mean_f: Vec<f64> = (0..=n_max)
            .map(|k| stats::mean(&chains.iter().map(|h| h[k].max(a_floor)).collect::<Vec<_>>()))
            .collect();
        for h in &chains {
            max_h = h.iter().copied().fold(max_h, f64::max);
        }
        points.push(DriftPoint {
            norm_h1: u0.norm_h1(),
            f0: f(u0),
            mean_f,
        });
    }
    let mut table = Vec::new();
    for &n in ns {
        for &r in r_primes {
            let outer: Vec<&DriftPoint> = points.iter().filter(|p| p.norm_h1 >= r).collect();
            if outer.is_empty() {
                continue;
            }
            let a = outer.iter().map(|p| p.mean_f[n] / p.f0).fold(0.0, f64::max);
            let c_prime = points
                .iter()
                .filter(|p| p.norm_h1 < r)
                .flat_map(|p| p.mean_f[..=n].iter().copied())
                .fold(0.0, f64::max);
            table.push(DriftChoice { n, r_prime: r, a, c_prime });
        }
    }
    let best = table
        .iter()
        .filter(|c| c.a < 1.0)
        .min_by(|x, y| x.a.total_cmp(&y.a))
        .copied();
    Ok(DriftReport {
        a_floor,
        points,
        table,
        best,
        trivial_boundary: max_h < a_floor,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairHitting {
    pub x: f64,
    /// `τ_d` per replica, `None` when censored at `max_kicks`.
    pub taus: Vec<Option<usize>>,
    pub censored_fraction: f64,
    /// `(γ, E e^{γ τ_d})` over uncensored replicas.
    pub exp_moments: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HittingReport {
    pub d: f64,
    pub pairs: Vec<PairHitting>,
    /// Largest `γ` whose estimate is finite and agrees within 10% between
    /// the first half of the replicas and all of them, at every pair.
    pub largest_stable_gamma: Option<f64>,
    /// Slope of `log E e^{γτ}` on `log(1 + H + H′)` at that `γ`.
    pub loglog_slope: Option<f64>,
    pub censoring_warning: bool,
}

/// First `k` with both components in `B_d`, coupled dynamics.
pub fn pair_hitting_time(
    start: CoupledPair,
    d: f64,
    max_kicks: usize,
    model: &CouplingModel,
    streams: &mut crate::rng::ReplicaStreams,
) -> Result<Option<usize>> {
    let mut pair = start;
    loop {
        if pair.in_ball(d) {
            return Ok(Some(pair.k));
        }
        if pair.k >= max_kicks {
            return Ok(None);
        }
        pair = coupled_step(&pair, model, streams)?.pair;
    }
}

/// Exponential moments of `τ_d` from each starting pair.
#[allow(clippy::too_many_arguments)]
pub fn pair_hitting_stats(
    starts: &[(SpectralField, SpectralField)],
    d: f64,
    gammas: &[f64],
    replicas: usize,
    max_kicks: usize,
    model: &CouplingModel,
    energy: &EnergyParams,
    seed: u64,
) -> Result<HittingReport> {
    let mut pairs = Vec::with_capacity(starts.len());
    let mut halves = Vec::with_capacity(starts.len());
    for (i, (u, v)) in starts.iter().enumerate() {
        let taus = map_replicas(splitmix64(seed ^ i as u64), replicas, |_, streams| {
            pair_hitting_time(CoupledPair::new(u.clone(), v.clone())?, d, max_kicks, model, streams)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let moment = |ts: &[Option<usize>], g: f64| {
            let hit: Vec<f64> = ts.iter().flatten().map(|&t| (g * t as f64).exp()).collect();
            if hit.is_empty() {
                f64::NAN
            } else {
                stats::mean(&hit)
            }
        };
        let exp_moments = gammas.iter().map(|&g| (g, moment(&taus, g))).collect();
        halves.push(gammas.iter().map(|&g| moment(&taus[..replicas / 2], g)).collect::<Vec<_>>());
        let censored = taus.iter().filter(|t| t.is_none()).count();
        pairs.push(PairHitting {
            x: 1.0 + u.energy(energy) + v.energy(energy),
            censored_fraction: censored as f64 / replicas as f64,
            taus,
            exp_moments,
        });
    }
    let mut stable = None;
    for (gi, &g) in gammas.iter().enumerate() {
        let ok = pairs.iter().zip(&halves).all(|(p, h)| {
            let full = p.exp_moments[gi].1;
            full.is_finite() && h[gi].is_finite() && (h[gi] / full - 1.0).abs() <= 0.1
        });
        if ok && stable.is_none_or(|s: (usize, f64)| g > s.1) {
            stable = Some((gi, g));
        }
    }
    let loglog_slope = stable.and_then(|(gi, _)| {
        let pts: Vec<(f64, f64)> = pairs.iter().map(|p| (p.x.ln(), p.exp_moments[gi].1.ln())).collect();
        stats::linear_fit(&pts).map(|f| f.slope)
    });
    Ok(HittingReport {
        d,
        censoring_warning: pairs.iter().any(|p| p.censored_fraction > 0.1),
        largest_stable_gamma: stable.map(|s| s.1),
        loglog_slope,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingConfig;
    use crate::flow::FlowParams;
    use crate::kicks::{ClockSpec, KickSpec};
    use crate::spectral::Grid;

    fn setup(b0: f64) -> (std::sync::Arc<Grid>, KickedSystem, EnergyParams) {
        let g = Grid::padded(std::f64::consts::PI, 8).unwrap();
        let kicks = if b0 == 0.0 {
            KickSpec::silent(8)
        } else {
            KickSpec::power_law(8, b0, 1.0, Default::default()).unwrap()
        };
        let sys = KickedSystem {
            kicks,
            clock: ClockSpec::new(2.0).unwrap(),
            flow: FlowParams::new(1.0, 1.0, 1e-2).unwrap(),
        };
        (g, sys, EnergyParams::new(0.25, 1.0).unwrap())
    }

    #[test]
    fn huge_floor_is_the_trivial_boundary() {
        let (g, sys, e) = setup(0.2);
        let pts = vec![SpectralField::basis(&g, 1).unwrap()];
        let rep = lyapunov_probe(&pts, &[1, 2], 1e9, &[0.0], 20, &sys, &e, 1).unwrap();
        assert!(rep.trivial_boundary);
        assert!(rep.table.iter().all(|c| (c.a - 1.0).abs() < 1e-15));
        assert!(rep.best.is_none());
        assert!(lyapunov_probe(&pts, &[1], 0.5, &[0.0], 20, &sys, &e, 1).is_err());
    }

    #[test]
    fn silent_dissipation_gives_drift_below_one() {
        let (g, sys, e) = setup(0.0);
        let pts: Vec<_> = [0.5, 2.0, 4.0]
            .iter()
            .map(|s| SpectralField::basis(&g, 1).unwrap().scaled(*s))
            .collect();
        let rep = lyapunov_probe(&pts, &[1, 3], 1.0, &[1.0], 50, &sys, &e, 2).unwrap();
        let best = rep.best.unwrap();
        assert!(best.a < 1.0);
    }

    #[test]
    fn pair_in_ball_hits_at_zero() {
        let (g, sys, e) = setup(0.2);
        let model = CouplingModel::new(CouplingConfig::default(), sys.kicks.clone(), sys.clock, sys.flow).unwrap();
        let z = SpectralField::zeros(&g);
        let rep = pair_hitting_stats(&[(z.clone(), z)], 0.5, &[0.1, 0.5], 20, 100, &model, &e, 3).unwrap();
        assert!(rep.pairs[0].taus.iter().all(|t| *t == Some(0)));
        assert_eq!(rep.pairs[0].exp_moments, vec![(0.1, 1.0), (0.5, 1.0)]);
        assert_eq!(rep.largest_stable_gamma, Some(0.5));
    }
}
