//! Stopping times `T1, T2, T3, σ = T1 ∧ T2 ∧ T3`, the hitting times
//! `ρ_i` of the small ball and the random integer `ℓ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pair::{coupled_step, CoupledPair, CouplingConfig, CouplingModel, StepSummary};
use crate::error::Result;
use crate::rng::ReplicaStreams;
use crate::spectral::EnergyParams;

/// Incremental monitor of `T1, T2, T3` started at index `start`.
///
/// `T1` fires at the first `k` with
/// `⟨‖u_i‖₁⁶ + ‖u′_i‖₁⁶⟩_{start}^{k} > M`, `T2` at the first `k > start` with
/// `½ |⟨log t_i⟩_{start+1}^{k}| > M`, `T3` at the first `k > start` where the
/// low modes differ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRecord {
    pub start: usize,
    pub last: usize,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub t3: Option<usize>,
    sum_norm6: f64,
    n_states: usize,
    sum_log_t: f64,
    n_waits: usize,
}

impl StoppingRecord {
    /// Opens the record with the state at `start`.
    pub fn new(start: usize, norm: f64, norm_prime: f64, m: f64) -> Self {
        let mut rec = Self {
            start,
            last: start,
            t1: None,
            t2: None,
            t3: None,
            sum_norm6: 0.0,
            n_states: 0,
            sum_log_t: 0.0,
            n_waits: 0,
        };
        rec.add_state(start, norm, norm_prime, m);
        rec
    }

    fn add_state(&mut self, k: usize, norm: f64, norm_prime: f64, m: f64) {
        self.sum_norm6 += norm.powi(6) + norm_prime.powi(6);
        self.n_states += 1;
        if self.t1.is_none() && self.sum_norm6 / self.n_states as f64 > m {
            self.t1 = Some(k);
        }
    }

    /// `σ = min(T1, T2, T3)`.
    pub fn sigma(&self) -> Option<usize> {
        [self.t1, self.t2, self.t3].into_iter().flatten().min()
    }

    pub fn fired(&self) -> bool {
        self.sigma().is_some()
    }

    pub fn cesaro_norm6(&self) -> f64 {
        self.sum_norm6 / self.n_states as f64
    }

    pub fn cesaro_half_abs_log_t(&self) -> f64 {
        if self.n_waits == 0 {
            0.0
        } else {
            0.5 * (self.sum_log_t / self.n_waits as f64).abs()
        }
    }
}

/// Folds step `row` (index `row.k`) into `record`.
pub fn stopping_update(record: &mut StoppingRecord, row: &StepSummary, config: &CouplingConfig) {
    let k = row.k;
    debug_assert!(k > record.last);
    record.last = k;
    record.add_state(k, row.norm_h1, row.norm_h1_prime, config.m);
    record.sum_log_t += row.t_k.ln();
    record.n_waits += 1;
    if record.t2.is_none() && record.cesaro_half_abs_log_t() > config.m {
        record.t2 = Some(k);
    }
    if record.t3.is_none() && !row.coupled_flag {
        record.t3 = Some(k);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EllOutcome {
    Resolved { ell: usize },
    /// `max_kicks` reached first.
    Unresolved { kicks: usize },
}

impl EllOutcome {
    pub fn value(&self) -> Option<usize> {
        match self {
            EllOutcome::Resolved { ell } => Some(*ell),
            EllOutcome::Unresolved { .. } => None,
        }
    }
}

/// Summary of one `ℓ` construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllReport {
    pub outcome: EllOutcome,
    /// Hitting times `ρ_0 < ρ_1 < …` at which a monitoring cycle opened.
    pub rho: Vec<usize>,
    /// Violation steps at which the pair was also in the ball; registered
    /// but not used to open a cycle.
    pub boundary_hits: Vec<usize>,
    /// Closed records of failed cycles plus the last one.
    pub records: Vec<StoppingRecord>,
    pub cycles: usize,
    pub window: usize,
    pub history: Vec<StepSummary>,
}

/// Builds `ℓ(u, u′)`: walk until both components are in `B_d` (giving
/// `ρ_i`), then require `σ` not to fire for `W` further steps. A violation
/// at step `k` restarts the search from `k`, with a fresh cycle allowed
/// from `k + 1` on.
pub fn run_until_ell(
    start: CoupledPair,
    model: &CouplingModel,
    energy: &EnergyParams,
    streams: &mut ReplicaStreams,
) -> Result<EllReport> {
    let cfg = model.config;
    let mut report = EllReport {
        outcome: EllOutcome::Unresolved { kicks: cfg.max_kicks },
        rho: Vec::new(),
        boundary_hits: Vec::new(),
        records: Vec::new(),
        cycles: 0,
        window: cfg.window,
        history: Vec::new(),
    };
    let mut pair = start;
    let mut earliest_cycle = pair.k;
    loop {
        // Search for the next hit of the ball.
        while !(pair.k >= earliest_cycle && pair.in_ball(cfg.d)) {
            if pair.k >= cfg.max_kicks {
                return Ok(report);
            }
            let step = coupled_step(&pair, model, streams)?;
            report.history.push(StepSummary::of(&step, energy));
            pair = step.pair;
        }
        let rho = pair.k;
        report.rho.push(rho);
        report.cycles += 1;
        let mut rec = StoppingRecord::new(rho, pair.u.norm_h1(), pair.u_prime.norm_h1(), cfg.m);
        let mut violated = rec.fired();
        while !violated && pair.k < rho + cfg.window {
            if pair.k >= cfg.max_kicks {
                report.records.push(rec);
                return Ok(report);
            }
            let step = coupled_step(&pair, model, streams)?;
            let row = StepSummary::of(&step, energy);
            report.history.push(row);
            pair = step.pair;
            stopping_update(&mut rec, &row, &cfg);
            violated = rec.fired();
        }
        report.records.push(rec);
        if !violated {
            report.outcome = EllOutcome::Resolved { ell: rho };
            return Ok(report);
        }
        if pair.in_ball(cfg.d) {
            report.boundary_hits.push(pair.k);
        }
        earliest_cycle = pair.k + 1;
    }
}

/// One CSV row per `ℓ` run.
pub fn write_ell_csv<W: Write>(reports: &[(u64, EllReport)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "replica,status,ell,cycles,first_rho,kicks_used,window")?;
    for (replica, r) in reports {
        let (status, ell) = match r.outcome {
            EllOutcome::Resolved { ell } => ("resolved", ell.to_string()),
            EllOutcome::Unresolved { .. } => ("unresolved", String::new()),
        };
        let first = r.rho.first().map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{replica},{status},{ell},{},{first},{},{}",
            r.cycles,
            r.history.len(),
            r.window
        )?;
    }
    Ok(())
}

/// Runs coupled steps from `start` until `σ` fires or `max_kicks` steps
/// pass; returns the record.
pub fn run_until_sigma(
    start: CoupledPair,
    model: &CouplingModel,
    energy: &EnergyParams,
    streams: &mut ReplicaStreams,
) -> Result<StoppingRecord> {
    let cfg = model.config;
    let mut pair = start;
    let mut rec = StoppingRecord::new(pair.k, pair.u.norm_h1(), pair.u_prime.norm_h1(), cfg.m);
    let end = pair.k + cfg.max_kicks;
    while !rec.fired() && pair.k < end {
        let step = coupled_step(&pair, model, streams)?;
        stopping_update(&mut rec, &StepSummary::of(&step, energy), &cfg);
        pair = step.pair;
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TailIndex {
    At { t: usize },
    /// The last observed `k` still violates `|M_k| ≤ k`.
    End,
}

/// `T = min{n ≥ 1 : |M_k|/k ≤ 1 for all observed k ≥ n}`; `series[k − 1]`
/// holds `M_k`.
pub fn martingale_tail_detector(series: &[f64]) -> TailIndex {
    let n = series.len();
    match series
        .iter()
        .enumerate()
        .rposition(|(i, m)| m.abs() > (i + 1) as f64)
    {
        None => TailIndex::At { t: 1 },
        Some(i) if i + 1 == n => TailIndex::End,
        Some(i) => TailIndex::At { t: i + 2 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowParams;
    use crate::kicks::{ClockSpec, CoordinateLaw, KickSpec};
    use crate::spectral::{Grid, SpectralField};

    fn row(k: usize, coupled: bool, norm: f64, t: f64) -> StepSummary {
        StepSummary {
            k,
            t_k: t,
            coupled_flag: coupled,
            distance_h1: 0.0,
            norm_h1: norm,
            norm_h1_prime: norm,
            energy: 0.0,
            energy_prime: 0.0,
        }
    }

    #[test]
    fn forced_decoupling_fires_t3() {
        let cfg = CouplingConfig::default();
        let mut rec = StoppingRecord::new(0, 0.1, 0.1, cfg.m);
        for k in 1..=5 {
            stopping_update(&mut rec, &row(k, k != 3, 0.1, 1.0), &cfg);
        }
        assert_eq!(rec.t3, Some(3));
        assert!(rec.sigma().unwrap() <= 3);
        assert_eq!(rec.t1, None);
    }

    #[test]
    fn t1_and_t2_use_cesaro_averages() {
        let cfg = CouplingConfig { m: 1.0, ..CouplingConfig::default() };
        let mut rec = StoppingRecord::new(0, 0.0, 0.0, cfg.m);
        // ‖u‖⁶ + ‖u′‖⁶ = 2 at k = 1: average (0 + 2)/2 = 1, not > 1.
        stopping_update(&mut rec, &row(1, true, 1.0, 1.0), &cfg);
        assert_eq!(rec.t1, None);
        stopping_update(&mut rec, &row(2, true, 1.0, 1.0), &cfg);
        assert_eq!(rec.t1, Some(2));
        let mut rec = StoppingRecord::new(0, 0.0, 0.0, cfg.m);
        stopping_update(&mut rec, &row(1, true, 0.0, (-1.0f64).exp()), &cfg);
        assert_eq!(rec.t2, None);
        stopping_update(&mut rec, &row(2, true, 0.0, (-4.0f64).exp()), &cfg);
        assert_eq!(rec.t2, Some(2));
    }

    #[test]
    fn bounded_coupled_pair_never_stops() {
        let cfg = CouplingConfig { m: 1e12, ..CouplingConfig::default() };
        let mut rec = StoppingRecord::new(0, 0.5, 0.5, cfg.m);
        for k in 1..=10_000 {
            stopping_update(&mut rec, &row(k, true, 0.5, 0.3), &cfg);
        }
        assert!(!rec.fired());
    }

    #[test]
    fn zero_pair_has_ell_zero() {
        let grid = Grid::padded(std::f64::consts::PI, 8).unwrap();
        let model = CouplingModel::new(
            CouplingConfig { window: 20, ..CouplingConfig::default() },
            KickSpec::power_law(8, 0.05, 1.0, CoordinateLaw::default()).unwrap(),
            ClockSpec::new(5.0).unwrap(),
            FlowParams::new(1.0, 1.0, 1e-2).unwrap(),
        )
        .unwrap();
        let z = SpectralField::zeros(&grid);
        let energy = EnergyParams::new(0.25, 1.0).unwrap();
        let rep = run_until_ell(CoupledPair::new(z.clone(), z).unwrap(), &model, &energy, &mut ReplicaStreams::new(1, 0)).unwrap();
        assert_eq!(rep.outcome, EllOutcome::Resolved { ell: 0 });
        assert_eq!(rep.rho, vec![0]);
        assert_eq!(rep.history.len(), 20);
    }

    #[test]
    fn detector_cases() {
        assert_eq!(martingale_tail_detector(&[0.0; 10]), TailIndex::At { t: 1 });
        let lin: Vec<f64> = (1..=50).map(|k| 2.0 * k as f64).collect();
        assert_eq!(martingale_tail_detector(&lin), TailIndex::End);
        assert_eq!(martingale_tail_detector(&[5.0, 0.0, 9.0, 1.0, 1.0]), TailIndex::At { t: 4 });
    }
}
