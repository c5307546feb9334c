//! Verification suites run at configuration scale, with CSV/JSON artifacts
//! and a run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{trial_states, RunConfig};
use crate::coupling::{
    coupling_envelope, foias_prodi_probe, maximal_coupling_sample, select_n_prime, run_until_ell, run_until_sigma, tv_oracle, write_ell_csv,
    write_step_log, CoupledPair, EllReport, PairTrajectory, ProductDensity, TvMode,
};
use crate::ergodicity::{
    khasminskii_check, krylov_bogolyubov_estimate, lyapunov_probe, mixing_curve, MixingOptions, StationaryOptions,
    TestDictionary,
};
use crate::error::{Error, Result};
use crate::flow::{
    dissipation_violations, enstrophy_budget_check, smoothing_probe, strang_self_convergence, FlowDiagnostics,
};
use crate::kicks::{moment_estimate, KickSpec, RunStatus};
use crate::rng::{map_replicas, stream};
use crate::spectral::{EnergyParams, SpectralField};
use crate::stats::{self, Bootstrap};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Flow,
    Kicks,
    Coupling,
    Mixing,
    Stationary,
    All,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Flow, Suite::Kicks, Suite::Coupling, Suite::Mixing, Suite::Stationary];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Flow => "flow",
            Suite::Kicks => "kicks",
            Suite::Coupling => "coupling",
            Suite::Mixing => "mixing",
            Suite::Stationary => "stationary",
            Suite::All => "all",
        }
    }

    pub fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => Suite::ALL.to_vec(),
            s => vec![s],
        }
    }

    pub fn needs_coupling(self) -> bool {
        matches!(self, Suite::Coupling | Suite::All)
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?}; expected flow, kicks, coupling, mixing, stationary or all"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteVerdict {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckVerdict>,
    /// Error that aborted the suite, if any.
    pub error: Option<String>,
    pub replicas: usize,
    pub diverged: usize,
    pub divergence_budget_exceeded: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub suites: Vec<SuiteVerdict>,
    /// Emitted files, relative to the output directory.
    pub files: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    /// 0 when every gate passes, 4 when a divergence budget is exceeded,
    /// 2 for any other failure.
    pub fn exit_code(&self) -> i32 {
        if self.suites.iter().any(|s| s.divergence_budget_exceeded) {
            4
        } else if self.passed() {
            0
        } else {
            2
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(out.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

/// Artifact sink for one suite.
struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    files: Vec<PathBuf>,
    checks: Vec<CheckVerdict>,
    replicas: usize,
    diverged: usize,
}

impl Ctx<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(PathBuf::from(name));
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckVerdict {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    /// Separates diverged replicas from other errors.
    fn tally<T>(&mut self, runs: Vec<Result<T>>) -> Result<Vec<T>> {
        self.replicas += runs.len();
        let mut ok = Vec::with_capacity(runs.len());
        for r in runs {
            match r {
                Ok(v) => ok.push(v),
                Err(e) if e.is_divergence() => self.diverged += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(ok)
    }
}

/// Runs `suite` (every suite for `all`) with the configured seeds, writing
/// artifacts and `manifest.json` into `cfg.output`. The manifest is
/// rewritten after each suite, so it exists even if a later one fails.
pub fn run_suite(suite: Suite, cfg: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let out = cfg.output.clone();
    std::fs::create_dir_all(&out)?;
    let mut manifest = RunManifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.experiment.seed,
        suites: Vec::new(),
        files: vec![PathBuf::from(MANIFEST_FILE)],
        wall_time_s: 0.0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.threads)
        .build()
        .map_err(|e| Error::Configuration(format!("experiment.threads: {e}")))?;
    for s in suite.expand() {
        let mut ctx = Ctx {
            cfg,
            out: &out,
            files: Vec::new(),
            checks: Vec::new(),
            replicas: 0,
            diverged: 0,
        };
        let result = pool.install(|| match s {
            Suite::Flow => flow_suite(&mut ctx),
            Suite::Kicks => kicks_suite(&mut ctx),
            Suite::Coupling => coupling_suite(&mut ctx),
            Suite::Mixing => mixing_suite(&mut ctx),
            Suite::Stationary => stationary_suite(&mut ctx),
            Suite::All => unreachable!("expanded above"),
        });
        let error = result.err().map(|e| e.to_string());
        let budget_exceeded =
            ctx.replicas > 0 && ctx.diverged as f64 / ctx.replicas as f64 > cfg.experiment.divergence_budget;
        manifest.files.extend(ctx.files);
        manifest.suites.push(SuiteVerdict {
            suite: s,
            passed: error.is_none() && !budget_exceeded && ctx.checks.iter().all(|c| c.passed),
            checks: ctx.checks,
            error,
            replicas: ctx.replicas,
            diverged: ctx.diverged,
            divergence_budget_exceeded: budget_exceeded,
        });
        manifest.wall_time_s = start.elapsed().as_secs_f64();
        manifest.write(&out)?;
    }
    Ok(manifest)
}

fn flow_suite(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let flow = cfg.flow_params()?;
    let (energy, a) = cfg.calibration()?;
    let seed = cfg.experiment.seed;

    let smooth = smooth_states(&grid, seed ^ 0x0D, 5);
    let mut w = ctx.create("flow_order.csv")?;
    writeln!(w, "state,level,error,ratio")?;
    let mut ratios = Vec::new();
    for (i, u) in smooth.iter().enumerate() {
        let errs = strang_self_convergence(u, 0.1, &flow, 4, 3)?;
        for (l, e) in errs.iter().enumerate() {
            let r = if l > 0 { errs[l - 1] / e } else { f64::NAN };
            if l > 0 {
                ratios.push(r);
            }
            writeln!(w, "{i},{l},{e:.10e},{r:.6}")?;
        }
    }
    w.flush()?;
    let (lo, hi) = min_max(&ratios);
    ctx.check(
        "order2",
        lo >= 3.2 && hi <= 4.8,
        format!("error ratios per dt halving in [{lo:.3}, {hi:.3}]"),
    );

    let amps: Vec<f64> = (0..20).map(|i| 0.05 * 1.25f64.powi(i)).collect();
    let held_out = trial_states(&grid, seed ^ 0xD15, &amps);
    let mut w = ctx.create("dissipation.csv")?;
    writeln!(w, "state,norm_h1,H,violations,worst_ratio,enstrophy_ratio")?;
    let (mut total, mut budget_ok) = (0, true);
    for (i, u) in held_out.iter().enumerate() {
        let (v, worst) = dissipation_violations(u, 10.0, &flow, &energy, a, 1e-6)?;
        let budget = enstrophy_budget_check(u, 5.0, &flow, &energy, 0.02)?;
        total += v;
        budget_ok &= budget.holds;
        writeln!(
            w,
            "{i},{:.10e},{:.10e},{v},{worst:.10e},{:.10e}",
            u.norm_h1(),
            u.energy(&energy),
            budget.lhs / budget.rhs
        )?;
    }
    w.flush()?;
    ctx.check(
        "dissipation",
        total == 0,
        format!("alpha = {:.6}, a = {a:.6}, violations = {total}", energy.alpha),
    );
    ctx.check("enstrophy_budget", budget_ok, "within 2% on every held-out state".into());

    // Below `1/(ν α_max)` the truncated flow cannot smooth and the ratio
    // just scales like `√t`.
    let t_min = (1.0 / (flow.nu * grid.eigenvalues()[grid.n_modes() - 1])).max(1e-4);
    let mut ts: Vec<f64> = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2]
        .into_iter()
        .filter(|&t| t >= t_min)
        .collect();
    ts.push(1e-1);
    let mut worst: f64 = 0.0;
    for (u, d) in held_out.iter().zip(trial_states(&grid, seed ^ 0x5300, &[1e-3; 20])) {
        let r = smoothing_probe(u, &(u + &d), &ts, &flow)?;
        let (lo, hi) = min_max(&r.iter().map(|p| p.1).collect::<Vec<_>>());
        worst = worst.max(hi / lo);
    }
    ctx.check(
        "smoothing",
        worst < 10.0,
        format!("worst max/min ratio {worst:.3} over t in [{:.1e}, 1e-1]", ts[0]),
    );

    let (_, diag) = FlowDiagnostics::record(&held_out[10], 10.0, &flow, &energy)?;
    diag.write_csv(ctx.create("flow_diagnostics.csv")?)?;
    Ok(())
}

fn kicks_suite(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let seed = cfg.experiment.seed;
    let n = cfg.experiment.replicas;
    let sys = cfg.system()?;
    let grid = cfg.grid()?;
    let (energy, _) = cfg.calibration()?;

    let lambda = sys.clock.lambda;
    let mut w = ctx.create("poisson.csv")?;
    writeln!(w, "t,mean_exp_neg_count,std_error,exact,z")?;
    let mut worst: f64 = 0.0;
    for (i, t) in [1.0, 3.0, 10.0].into_iter().enumerate() {
        // Counting is cheap; use at least 1e4 clocks whatever the replica count.
        let xs = map_replicas(seed ^ (0x9000 + i as u64), n.max(10_000), |_, s| {
            (-(sys.clock.count_kicks(t, &mut s.clock) as f64)).exp()
        });
        let exact = (-(lambda - lambda / std::f64::consts::E) * t).exp();
        // Exact σ: at large λt the sample SE is dominated by rare low counts.
        let var = (-lambda * (1.0 - (-2.0f64).exp()) * t).exp() - exact * exact;
        let se = (var / xs.len() as f64).sqrt();
        let z = (stats::mean(&xs) - exact).abs() / se;
        worst = worst.max(z);
        writeln!(w, "{t},{:.10e},{se:.10e},{exact:.10e},{z:.4}", stats::mean(&xs))?;
    }
    w.flush()?;
    ctx.check("poisson_identity", worst <= 3.0, format!("max |z| = {worst:.3}"));

    let u0 = energy_state(&grid, 10.0, &energy)?;
    let runs = map_replicas(seed ^ 0x3033, n, |_, s| sys.chain(&u0, 40, s).map(|c| c.energies(&energy)));
    let energies = ctx.tally(runs)?;
    let mut w = ctx.create("moments.csv")?;
    writeln!(w, "p,k,moment")?;
    let mut gammas = Vec::new();
    for p in [1.0, 3.0] {
        let rep = moment_estimate(&energies, p)?;
        for (k, m) in rep.per_step.iter().enumerate() {
            writeln!(w, "{p},{k},{m:.10e}")?;
        }
        gammas.push(rep.gamma);
    }
    w.flush()?;
    ctx.check(
        "moment_recursion",
        gammas.iter().all(|g| g.is_some_and(|g| g < 1.0)),
        format!("gamma(p=1) = {:?}, gamma(p=3) = {:?}", gammas[0], gammas[1]),
    );
    Ok(())
}

fn coupling_suite(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let seed = cfg.experiment.seed;
    let n = cfg.experiment.replicas;
    let grid = cfg.grid()?;
    let model = cfg.coupling_model()?;
    let (energy, _) = cfg.calibration()?;

    // Coupling of the first coordinate against its exact total variation.
    let spec = KickSpec::new(vec![model.kicks.b()[0]], *model.kicks.law())?;
    let dens = ProductDensity::new(&spec, 1)?;
    let width = 2.0 * spec.b()[0] * spec.law().support_half_width();
    let draws = 20_000;
    let mut w = ctx.create("maximal_coupling.csv")?;
    writeln!(w, "shift,tv,empirical,std_error")?;
    let mut worst: f64 = 0.0;
    for (i, frac) in [0.0, 0.125, 0.25, 0.5, 1.0].into_iter().enumerate() {
        let shift = [frac * width];
        let tv = tv_oracle(&dens, &[0.0], &shift, TvMode::Quadrature)?.value;
        let mut rng = stream(seed, i as u64, 2);
        let mut miss = 0;
        for _ in 0..draws {
            if !maximal_coupling_sample(&dens, &[0.0], &shift, &mut rng)?.coupled {
                miss += 1;
            }
        }
        let p = miss as f64 / draws as f64;
        let se = (tv * (1.0 - tv) / draws as f64).sqrt();
        if se > 0.0 {
            worst = worst.max((p - tv).abs() / se);
        } else if p != tv {
            worst = f64::INFINITY;
        }
        writeln!(w, "{:.6e},{tv:.10e},{p:.10e},{se:.10e}", shift[0])?;
    }
    w.flush()?;
    ctx.check("maximal_coupling", worst <= 3.0, format!("max |z| = {worst:.3}"));

    let starts = trial_states(&grid, seed ^ 0xC0, &[0.3, 0.3]);
    let nn = model.config.n;
    let runs = map_replicas(seed ^ 0xF0, n.min(50), |r, streams| {
        let mut rng = stream(seed ^ 0xF1, r, 3);
        let bump = trial_states(&grid, rand::Rng::random(&mut rng), &[1e-2])[0].keep_high_coordinates(nn);
        let pair = CoupledPair::new(starts[0].clone(), &starts[0] + &bump)?;
        let traj = PairTrajectory::run(pair, 30, &model, streams)?;
        let k = traj.matched_prefix();
        if k == 0 {
            return Ok(None);
        }
        foias_prodi_probe(&traj, 0, k, &model.config, 1e-11).map(Some)
    });
    let probes: Vec<_> = ctx.tally(runs)?.into_iter().flatten().collect();
    let identity = probes.iter().map(|p| p.identity_error).fold(0.0, f64::max);
    let logs: Vec<f64> = probes
        .iter()
        .map(|p| p.mean_log_contraction)
        .filter(|x| x.is_finite())
        .collect();
    let contraction = if logs.is_empty() { f64::NAN } else { stats::mean(&logs) };
    ctx.check(
        "squeezing",
        identity <= 1e-10 && contraction < 0.0,
        format!("identity error {identity:.2e}, mean log-contraction {contraction:.4} over {} runs", logs.len()),
    );

    // Reported only: N' selection and the empirical coupling envelope.
    let max_np = (grid.n_modes() - 1) / 2;
    let candidates: Vec<usize> = [2, 4, 8, 16].into_iter().filter(|&c| c <= max_np).collect();
    let sweep_starts: Vec<(SpectralField, SpectralField)> = (0..n.min(20) as u64)
        .map(|r| {
            let s = trial_states(&grid, seed ^ 0x5E ^ (r << 8), &[0.3, 1e-2]);
            (s[0].clone(), &s[0] + &s[1])
        })
        .collect();
    let selection = if candidates.is_empty() {
        None
    } else {
        Some(select_n_prime(&candidates, &sweep_starts, 30, &model, seed ^ 0x5F)?)
    };
    let e1 = SpectralField::basis(&grid, 1)?;
    let env_starts: Vec<_> = [0.05, 0.1, 0.25, 0.5, 1.0]
        .iter()
        .map(|&f| (SpectralField::zeros(&grid), e1.scaled(f * model.config.d)))
        .collect();
    let envelope = coupling_envelope(&env_starts, n.max(100), 5, &model, seed ^ 0xEE)?;
    let tuning = serde_json::json!({ "n_prime_selection": selection, "envelope": envelope });
    serde_json::to_writer_pretty(ctx.create("coupling_tuning.json")?, &tuning)?;

    let d = model.config.d;
    let survival = map_replicas(seed ^ 0x51, n, |r, streams| {
        let mut rng = stream(seed ^ 0x52, r, 3);
        let us = trial_states(&grid, rand::Rng::random(&mut rng), &[1.0, 1.0]);
        let radius = |rng: &mut crate::rng::StreamRng| d * rand::Rng::random::<f64>(rng);
        let (ru, rv) = (radius(&mut rng), radius(&mut rng));
        let pair = CoupledPair::new(us[0].scaled(ru / us[0].norm_h1()), us[1].scaled(rv / us[1].norm_h1()))?;
        let mut limited = model.clone();
        limited.config.max_kicks = model.config.max_kicks.min(500);
        run_until_sigma(pair, &limited, &energy, streams).map(|rec| !rec.fired())
    });
    let survived = ctx.tally(survival)?;
    let p = survived.iter().filter(|s| **s).count() as f64 / survived.len().max(1) as f64;
    let sigma = (p * (1.0 - p) / survived.len().max(1) as f64).sqrt();
    ctx.check(
        "coupling_survival",
        p >= 0.5 - 2.0 * sigma,
        format!("fraction surviving {p:.3} (sigma {sigma:.3})"),
    );

    let u = scale_energy(&starts[0], 1.0, &energy);
    let v = scale_energy(&starts[1], 1.0, &energy);
    let ells = map_replicas(seed ^ 0xE11, n, |_, streams| {
        run_until_ell(CoupledPair::new(u.clone(), v.clone())?, &model, &energy, streams)
    });
    let ells: Vec<(u64, EllReport)> = ctx.tally(ells)?.into_iter().enumerate().map(|(i, r)| (i as u64, r)).collect();
    write_ell_csv(&ells, ctx.create("ell.csv")?)?;
    if let Some((_, first)) = ells.first() {
        write_step_log(&first.history, ctx.create("coupling_steps.json")?)?;
    }
    let unresolved = ells.iter().filter(|(_, r)| r.outcome.value().is_none()).count();
    let rate = unresolved as f64 / ells.len().max(1) as f64;
    ctx.check(
        "ell_resolved",
        rate <= cfg.experiment.divergence_budget,
        format!("{unresolved} of {} runs unresolved within {} kicks", ells.len(), model.config.max_kicks),
    );
    Ok(())
}

fn mixing_suite(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let sys = cfg.system()?;
    let (energy, _) = cfg.calibration()?;
    let a = energy_state(&grid, 10.0, &energy)?;
    let b = SpectralField::zeros(&grid);
    let times = cfg.time_grid();
    let dict = TestDictionary::standard(4.min(2 * grid.n_modes()), 1.0);
    let opts = MixingOptions {
        replicas: cfg.experiment.replicas,
        threshold: 0.05,
        burn_in: 0.0,
        seed: cfg.experiment.seed,
    };
    ctx.replicas += 2 * opts.replicas;
    let rep = mixing_curve(&a, &b, &times, &sys, &dict, &opts, &Bootstrap::default())?;
    ctx.diverged += (rep.divergence_rate * (2 * opts.replicas) as f64).round() as usize;
    rep.write_csv(ctx.create("mixing.csv")?)?;
    let fit = serde_json::json!({
        "exponential": rep.exponential,
        "power": rep.power,
        "time_to_threshold": rep.time_to_threshold,
        "divergence_rate": rep.divergence_rate,
        "moving_median": rep.moving_median,
    });
    serde_json::to_writer_pretty(ctx.create("mixing_fit.json")?, &fit)?;
    let horizon = cfg.experiment.horizon;
    ctx.check(
        "mixing_threshold",
        rep.time_to_threshold.is_some_and(|t| t < horizon),
        format!("lower bound first below 0.05 at t = {:?}", rep.time_to_threshold),
    );
    ctx.check(
        "mixing_monotone",
        rep.moving_median_nonincreasing,
        "5-point moving median nonincreasing".into(),
    );
    Ok(())
}

fn stationary_suite(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let sys = cfg.system()?;
    let (energy, _) = cfg.calibration()?;
    let seed = cfg.experiment.seed;
    let n = cfg.experiment.replicas;
    let boot = Bootstrap::default();
    let full = TestDictionary::standard(2.min(2 * grid.n_modes()), 1.0);
    let dict = full.select(&["clip_norm_1", "tanh_x0_sq", "clip_norm_x_tanh_x0_sq"])?;

    let dt = cfg.experiment.sample_dt;
    let opts = StationaryOptions {
        burn_in: 20.0,
        horizon: 20.0 + 25.0 * n as f64 * dt,
        sample_dt: dt,
        seed,
        replica: 0,
    };
    ctx.replicas += 1;
    let proxy = match krylov_bogolyubov_estimate(&SpectralField::zeros(&grid), &opts, &sys, &dict, &boot) {
        Err(e) if e.is_divergence() => {
            ctx.diverged += 1;
            return Err(e);
        }
        r => r?,
    };
    let kh = khasminskii_check(&dict, &proxy, 50 * n, &sys, seed ^ 0x4A5, &boot)?;
    kh.write_csv(ctx.create("khasminskii.csv")?)?;
    ctx.check(
        "stationary_proxy",
        proxy.converged,
        "halves of the long run agree for every functional".into(),
    );
    ctx.check(
        "khasminskii",
        kh.all_overlap(),
        format!("{} functionals, {} cycles", kh.rows.len(), kh.n_cycles),
    );

    let norms: Vec<f64> = proxy.chain.states.iter().map(|u| u.norm_h1()).collect();
    let r90 = stats::quantile(&norms, 0.9);
    let shapes = trial_states(&grid, seed ^ 0xD1, &[1.0; 6]);
    let points: Vec<SpectralField> = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0]
        .iter()
        .zip(&shapes)
        .map(|(&r, w)| w.scaled(r / w.norm_h1()))
        .collect();
    let drift = lyapunov_probe(&points, &[1, 2, 4, 8], 1.0, &[r90, 2.0, 4.0], n, &sys, &energy, seed ^ 0xD2)?;
    drift.write_csv(ctx.create("drift.csv")?)?;
    ctx.check(
        "lyapunov_drift",
        drift.best.is_some(),
        match drift.best {
            Some(b) => format!("a = {:.4} at n = {}, R' = {:.3}", b.a, b.n, b.r_prime),
            None => "no (n, R') with a < 1".into(),
        },
    );
    Ok(())
}

/// Simulates one trajectory from zero on `[0, horizon]` and writes
/// `trajectory.json` and `samples.csv`. Returns the run status and the
/// emitted files.
pub fn simulate_run(cfg: &RunConfig) -> Result<(RunStatus, Vec<PathBuf>)> {
    std::fs::create_dir_all(&cfg.output)?;
    let grid = cfg.grid()?;
    let sys = cfg.system()?;
    let (energy, _) = cfg.calibration()?;
    let seed = cfg.experiment.seed;
    let mut streams = crate::rng::ReplicaStreams::new(seed, 0);
    let log = sys.simulate(
        &SpectralField::zeros(&grid),
        cfg.experiment.horizon,
        &cfg.time_grid(),
        seed,
        0,
        &mut streams,
    )?;
    log.write_json(BufWriter::new(File::create(cfg.output.join("trajectory.json"))?))?;
    log.write_samples_csv(
        &grid,
        &energy,
        grid.n_modes(),
        BufWriter::new(File::create(cfg.output.join("samples.csv"))?),
    )?;
    Ok((log.status, vec!["trajectory.json".into(), "samples.csv".into()]))
}

/// States with coefficients `2 e^{−j/2} · U(−1, 1)²`.
fn smooth_states(grid: &std::sync::Arc<crate::spectral::Grid>, seed: u64, n: usize) -> Vec<SpectralField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c = (1..=grid.n_modes())
                .map(|j| {
                    let s = 2.0 * (-(j as f64) / 2.0).exp();
                    num_complex::Complex64::new(s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0))
                })
                .collect();
            SpectralField::from_coeffs(grid, c).expect("length matches grid")
        })
        .collect()
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `e_1` rescaled to `H = target`.
fn energy_state(grid: &std::sync::Arc<crate::spectral::Grid>, target: f64, e: &EnergyParams) -> Result<SpectralField> {
    Ok(scale_energy(&SpectralField::basis(grid, 1)?, target, e))
}

/// `s · w` with `H(s · w) = target`, by bisection on `s`.
fn scale_energy(w: &SpectralField, target: f64, e: &EnergyParams) -> SpectralField {
    let (mut lo, mut hi) = (0.0, 1.0);
    while w.scaled(hi).energy(e) < target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if w.scaled(mid).energy(e) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    w.scaled(0.5 * (lo + hi))
}
