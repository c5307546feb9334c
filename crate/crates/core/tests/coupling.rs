use std::f64::consts::PI;
use std::sync::Arc;

use kickcgl::coupling::{coupled_step, run_until_ell, CoupledPair, CouplingConfig, CouplingModel};
use kickcgl::flow::FlowParams;
use kickcgl::kicks::{embedded_step, ClockSpec, CoordinateLaw, KickSpec};
use kickcgl::rng::{map_replicas, ReplicaStreams};
use kickcgl::spectral::{EnergyParams, Grid, SpectralField};
use kickcgl::stats::{ks_one_sample, ks_two_sample};

const MODES: usize = 16;

fn setup(d: f64, window: usize, max_kicks: usize) -> (Arc<Grid>, CouplingModel) {
    let g = Grid::padded(PI, MODES).unwrap();
    let model = CouplingModel::new(
        CouplingConfig {
            n: 8,
            n_prime: 4,
            m: 1e3,
            d,
            window,
            max_kicks,
        },
        KickSpec::power_law(MODES, 0.3, 1.0, CoordinateLaw::default()).unwrap(),
        ClockSpec::new(10.0).unwrap(),
        FlowParams::new(1.0, 1.0, 1e-2).unwrap(),
    )
    .unwrap();
    (g, model)
}

fn start_pair(g: &Arc<Grid>) -> (SpectralField, SpectralField) {
    let u = &SpectralField::basis(g, 1).unwrap().scaled(0.4) + &SpectralField::basis(g, 3).unwrap().scaled(-0.2);
    let v = &SpectralField::basis(g, 2).unwrap().scaled(0.3) + &SpectralField::basis(g, 6).unwrap().scaled(0.1);
    (u, v)
}

#[test]
fn each_component_is_a_copy_of_the_chain() {
    let (g, model) = setup(0.5, 50, 100);
    let (u, v) = start_pair(&g);
    let pair = CoupledPair::new(u.clone(), v.clone()).unwrap();
    let n = 4000;
    let steps = map_replicas(11, n, |_, s| coupled_step(&pair, &model, s).unwrap());
    let free_u = map_replicas(12, n, |_, s| {
        embedded_step(&u, &model.kicks, &model.clock, &model.flow, s).unwrap().state
    });
    let free_v = map_replicas(13, n, |_, s| {
        embedded_step(&v, &model.kicks, &model.clock, &model.flow, s).unwrap().state
    });
    for r in [0, 1, 3, 7, 12] {
        let coord = |w: &SpectralField| w.h_coordinates(2 * MODES)[r];
        let a: Vec<f64> = steps.iter().map(|s| coord(&s.pair.u)).collect();
        let b: Vec<f64> = free_u.iter().map(coord).collect();
        let p = ks_two_sample(&a, &b).p_value;
        assert!(p > 1e-3, "u coordinate {r}: p = {p}");
        let a: Vec<f64> = steps.iter().map(|s| coord(&s.pair.u_prime)).collect();
        let b: Vec<f64> = free_v.iter().map(coord).collect();
        let p = ks_two_sample(&a, &b).p_value;
        assert!(p > 1e-3, "u' coordinate {r}: p = {p}");
    }
}

#[test]
fn kick_coordinates_follow_the_kick_law() {
    let (g, model) = setup(0.5, 50, 100);
    let (u, v) = start_pair(&g);
    let pair = CoupledPair::new(u, v).unwrap();
    let steps = map_replicas(21, 4000, |_, s| coupled_step(&pair, &model, s).unwrap());
    for r in [0, 5, 9] {
        let xs: Vec<f64> = steps.iter().map(|s| s.zeta.h_coordinates(2 * MODES)[r]).collect();
        let p = ks_one_sample(&xs, |x| model.kicks.coordinate_cdf(r, x)).p_value;
        assert!(p > 1e-3, "zeta coordinate {r}: p = {p}");
        let xs: Vec<f64> = steps.iter().map(|s| s.zeta_prime.h_coordinates(2 * MODES)[r]).collect();
        let p = ks_one_sample(&xs, |x| model.kicks.coordinate_cdf(r, x)).p_value;
        assert!(p > 1e-3, "zeta' coordinate {r}: p = {p}");
    }
}

#[test]
fn high_modes_share_their_kick_exactly() {
    let (g, model) = setup(0.5, 50, 100);
    let (u, v) = start_pair(&g);
    let pair = CoupledPair::new(u, v).unwrap();
    let mut streams = ReplicaStreams::new(31, 0);
    for _ in 0..200 {
        let s = coupled_step(&pair, &model, &mut streams).unwrap();
        let a = s.zeta.h_coordinates(2 * MODES);
        let b = s.zeta_prime.h_coordinates(2 * MODES);
        for r in model.config.n..2 * MODES {
            assert_eq!(a[r].to_bits(), b[r].to_bits(), "coordinate {r}");
        }
        if s.coupled {
            let lo = s.pair.u.h_coordinates(model.config.n);
            let lo_prime = s.pair.u_prime.h_coordinates(model.config.n);
            assert_eq!(lo, lo_prime);
        }
    }
}

#[test]
fn window_after_ell_stays_coupled() {
    let (g, model) = setup(0.5, 40, 2000);
    let e = EnergyParams::new(0.25, 1.0).unwrap();
    let (u, v) = start_pair(&g);
    let reports = map_replicas(41, 200, |_, s| {
        run_until_ell(CoupledPair::new(u.clone(), v.clone()).unwrap(), &model, &e, s).unwrap()
    });
    let mut resolved = 0;
    for rep in &reports {
        let Some(ell) = rep.outcome.value() else { continue };
        resolved += 1;
        let window: Vec<_> = rep.history.iter().filter(|h| h.k > ell).collect();
        assert_eq!(window.len(), model.config.window);
        assert!(window.iter().all(|h| h.coupled_flag));
        assert!(window.iter().all(|h| h.norm_h1.max(h.norm_h1_prime) < 1e3));
    }
    assert!(resolved >= 190, "resolved {resolved} of 200");
}

#[test]
fn ell_tail_is_lighter_than_inverse_square() {
    let (g, model) = setup(0.5, 20, 5000);
    let e = EnergyParams::new(0.25, 1.0).unwrap();
    let (u, v) = start_pair(&g);
    let far = (u.scaled(10.0), v.scaled(-10.0));
    let ells: Vec<f64> = map_replicas(51, 2000, |_, s| {
        let rep = run_until_ell(CoupledPair::new(far.0.clone(), far.1.clone()).unwrap(), &model, &e, s).unwrap();
        rep.outcome.value().expect("unresolved run") as f64
    });
    let survival = |n: f64| ells.iter().filter(|&&l| l > n).count() as f64 / ells.len() as f64;
    let mut sorted = ells.clone();
    sorted.sort_by(f64::total_cmp);
    let n0 = sorted[sorted.len() * 9 / 10];
    let (s1, s2) = (survival(n0), survival(2.0 * n0));
    // A tail of order n^{-2} would keep S(2n)/S(n) near 1/4.
    assert!(s2 <= 0.25 * s1, "S({n0}) = {s1}, S({}) = {s2}", 2.0 * n0);
}
