//! Bounded Lipschitz test functionals and the dual-Lipschitz lower bound
//! between empirical ensembles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralField;
use crate::stats::{resample_indices, Bootstrap, Interval};

/// Smallest ensemble accepted by the distance estimators.
pub const MIN_ENSEMBLE: usize = 100;

/// Raw functional before normalisation. Each variant knows a bound on its
/// sup norm and on its Lipschitz constant in `‖·‖₁`.
#[derive(Clone, Debug, PartialEq)]
pub enum Functional {
    Constant,
    /// `min(1, ‖u‖₁ / c)`.
    ClippedNorm { c: f64 },
    /// `tanh(x_r)` with `x_r` the `r`-th H-coordinate.
    TanhCoordinate { r: usize },
    /// `min(1, ‖u − center‖₁)`.
    DistanceTo { center: SpectralField },
    Product(Box<Functional>, Box<Functional>),
}

impl Functional {
    /// `(sup |f|, Lip f)`.
    fn bounds(&self) -> (f64, f64) {
        match self {
            Functional::Constant => (1.0, 0.0),
            Functional::ClippedNorm { c } => (1.0, 1.0 / c),
            Functional::TanhCoordinate { .. } => (1.0, 1.0),
            Functional::DistanceTo { .. } => (1.0, 1.0),
            Functional::Product(f, g) => {
                let (sf, lf) = f.bounds();
                let (sg, lg) = g.bounds();
                (sf * sg, sf * lg + sg * lf)
            }
        }
    }

    /// `‖f‖_L = sup |f| + Lip f` of the raw functional (an upper bound).
    pub fn raw_norm(&self) -> f64 {
        let (s, l) = self.bounds();
        s + l
    }

    fn raw(&self, u: &SpectralField) -> f64 {
        match self {
            Functional::Constant => 1.0,
            Functional::ClippedNorm { c } => (u.norm_h1() / c).min(1.0),
            Functional::TanhCoordinate { r } => u.h_coordinates(r + 1)[*r].tanh(),
            Functional::DistanceTo { center } => u.distance_h1(center).min(1.0),
            Functional::Product(f, g) => f.raw(u) * g.raw(u),
        }
    }

    /// `f(u) / max(1, ‖f‖_L)`, so the evaluated functional has `‖·‖_L ≤ 1`.
    pub fn eval(&self, u: &SpectralField) -> f64 {
        self.raw(u) / self.raw_norm().max(1.0)
    }
}

#[derive(Clone, Debug)]
pub struct TestDictionary {
    members: Vec<(String, Functional)>,
}

impl TestDictionary {
    pub fn new(members: Vec<(String, Functional)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Argument("test dictionary is empty".into()));
        }
        Ok(Self { members })
    }

    /// Constant, clipped norms at three scales, `tanh` of the first
    /// `n_coords` H-coordinates, their squares and one cross product.
    pub fn standard(n_coords: usize, norm_scale: f64) -> Self {
        let mut m: Vec<(String, Functional)> = vec![("one".into(), Functional::Constant)];
        for f in [0.5, 1.0, 2.0] {
            let c = f * norm_scale;
            m.push((format!("clip_norm_{c}"), Functional::ClippedNorm { c }));
        }
        for r in 0..n_coords {
            m.push((format!("tanh_x{r}"), Functional::TanhCoordinate { r }));
        }
        for r in 0..n_coords {
            let t = Functional::TanhCoordinate { r };
            m.push((format!("tanh_x{r}_sq"), Functional::Product(Box::new(t.clone()), Box::new(t))));
        }
        if n_coords >= 2 {
            m.push((
                "tanh_x0_x1".into(),
                Functional::Product(
                    Box::new(Functional::TanhCoordinate { r: 0 }),
                    Box::new(Functional::TanhCoordinate { r: 1 }),
                ),
            ));
        }
        m.push((
            "clip_norm_x_tanh_x0_sq".into(),
            Functional::Product(
                Box::new(Functional::ClippedNorm { c: norm_scale }),
                Box::new(Functional::Product(
                    Box::new(Functional::TanhCoordinate { r: 0 }),
                    Box::new(Functional::TanhCoordinate { r: 0 }),
                )),
            ),
        ));
        Self { members: m }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Functional> {
        self.members.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let members = names
            .iter()
            .map(|n| {
                self.get(n)
                    .map(|f| (n.to_string(), f.clone()))
                    .ok_or_else(|| Error::Argument(format!("no functional named {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn push(&mut self, name: &str, f: Functional) {
        self.members.push((name.to_string(), f));
    }

    /// Values of every member at `u`.
    pub fn eval(&self, u: &SpectralField) -> Vec<f64> {
        self.members.iter().map(|(_, f)| f.eval(u)).collect()
    }

    /// Row-major `states × members` feature matrix.
    pub fn features(&self, states: &[SpectralField]) -> Vec<Vec<f64>> {
        states.iter().map(|u| self.eval(u)).collect()
    }
}

/// States sampled at a common time with their provenance.
#[derive(Clone, Debug)]
pub struct EmpiricalEnsemble {
    pub states: Vec<SpectralField>,
    pub time: f64,
    pub label: String,
    /// `(seed, replica)` of each state.
    pub seeds: Vec<(u64, u64)>,
}

impl EmpiricalEnsemble {
    pub fn new(states: Vec<SpectralField>, time: f64, label: &str, seeds: Vec<(u64, u64)>) -> Result<Self> {
        if let Some(first) = states.first() {
            if states.iter().any(|s| !Arc::ptr_eq(s.grid(), first.grid())) {
                return Err(Error::Argument("ensemble states live on different grids".into()));
            }
        }
        if seeds.len() != states.len() {
            return Err(Error::Shape {
                expected: states.len(),
                found: seeds.len(),
            });
        }
        Ok(Self {
            states,
            time,
            label: label.to_string(),
            seeds,
        })
    }

    /// `n` copies of one state.
    pub fn point_mass(u: &SpectralField, n: usize, label: &str) -> Self {
        Self {
            states: vec![u.clone(); n],
            time: 0.0,
            label: label.to_string(),
            seeds: vec![(0, 0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalGap {
    pub name: String,
    pub gap: f64,
    pub ci: Interval,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualLipschitzReport {
    /// `max_f |mean_A f − mean_B f|`, a lower bound for `‖μ_A − μ_B‖*_L`.
    pub value: f64,
    pub ci: Interval,
    pub argmax: String,
    pub per_functional: Vec<FunctionalGap>,
}

fn column_means(rows: &[Vec<f64>], idx: Option<&[usize]>, width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    let n = match idx {
        Some(ix) => {
            for &i in ix {
                for (a, v) in acc.iter_mut().zip(&rows[i]) {
                    *a += v;
                }
            }
            ix.len()
        }
        None => {
            for row in rows {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            rows.len()
        }
    };
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

fn check_sizes(a: usize, b: usize) -> Result<()> {
    let got = a.min(b);
    if got < MIN_ENSEMBLE {
        return Err(Error::InsufficientData {
            needed: MIN_ENSEMBLE,
            got,
        });
    }
    Ok(())
}

/// Point value of the lower bound, no intervals.
pub fn dual_lipschitz_value(a: &EmpiricalEnsemble, b: &EmpiricalEnsemble, dict: &TestDictionary) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    let fa = dict.features(&a.states);
    let fb = dict.features(&b.states);
    Ok(max_gap(&column_means(&fa, None, dict.len()), &column_means(&fb, None, dict.len())).0)
}

fn max_gap(ma: &[f64], mb: &[f64]) -> (f64, usize) {
    ma.iter()
        .zip(mb)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold((0.0, 0), |acc, (i, g)| if g > acc.0 { (g, i) } else { acc })
}

/// Lower bound with bootstrap intervals for the maximum and for each
/// functional.
pub fn dual_lipschitz_lower_bound(
    a: &EmpiricalEnsemble,
    b: &EmpiricalEnsemble,
    dict: &TestDictionary,
    boot: &Bootstrap,
) -> Result<DualLipschitzReport> {
    check_sizes(a.len(), b.len())?;
    let fa = dict.features(&a.states);
    let fb = dict.features(&b.states);
    Ok(lower_bound_from_features(&fa, &fb, &dict.names(), boot, 0))
}

/// Same as [`dual_lipschitz_lower_bound`] on precomputed feature rows.
pub fn lower_bound_from_features(
    fa: &[Vec<f64>],
    fb: &[Vec<f64>],
    names: &[String],
    boot: &Bootstrap,
    salt: u64,
) -> DualLipschitzReport {
    let w = names.len();
    let ma = column_means(fa, None, w);
    let mb = column_means(fb, None, w);
    let (value, arg) = max_gap(&ma, &mb);
    let mut rng = boot.rng(salt);
    let mut max_reps = Vec::with_capacity(boot.resamples);
    let mut per: Vec<Vec<f64>> = vec![Vec::with_capacity(boot.resamples); w];
    for _ in 0..boot.resamples {
        let ia = resample_indices(fa.len(), &mut rng);
        let ib = resample_indices(fb.len(), &mut rng);
        let ra = column_means(fa, Some(&ia), w);
        let rb = column_means(fb, Some(&ib), w);
        max_reps.push(max_gap(&ra, &rb).0);
        for j in 0..w {
            per[j].push((ra[j] - rb[j]).abs());
        }
    }
    let per_functional = names
        .iter()
        .zip(per)
        .enumerate()
        .map(|(j, (n, reps))| FunctionalGap {
            name: n.clone(),
            gap: (ma[j] - mb[j]).abs(),
            ci: Interval::from_replicates(reps, boot.level),
        })
        .collect();
    DualLipschitzReport {
        value,
        ci: Interval::from_replicates(max_reps, boot.level),
        argmax: names[arg].clone(),
        per_functional,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;

    #[test]
    fn evaluated_members_have_unit_lipschitz_norm_bound() {
        let d = TestDictionary::standard(4, 1.0);
        for (_, f) in &d.members {
            let s = f.raw_norm().max(1.0);
            let (sup, lip) = f.bounds();
            assert!((sup + lip) / s <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn point_masses_see_scaled_distance() {
        let g = Grid::padded(1.0, 8).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap().scaled(0.05);
        let v = SpectralField::basis(&g, 2).unwrap().scaled(0.02);
        let mut dict = TestDictionary::new(vec![("dist_u".into(), Functional::DistanceTo { center: u.clone() })]).unwrap();
        let a = EmpiricalEnsemble::point_mass(&u, 100, "u");
        let b = EmpiricalEnsemble::point_mass(&v, 100, "v");
        let val = dual_lipschitz_value(&a, &b, &dict).unwrap();
        assert!((val - 0.5 * u.distance_h1(&v).min(1.0)).abs() < 1e-15);
        dict.push("one", Functional::Constant);
        assert_eq!(dual_lipschitz_value(&a, &a, &dict).unwrap(), 0.0);
    }

    #[test]
    fn small_ensembles_are_rejected() {
        let g = Grid::padded(1.0, 8).unwrap();
        let u = SpectralField::zeros(&g);
        let a = EmpiricalEnsemble::point_mass(&u, 99, "a");
        let b = EmpiricalEnsemble::point_mass(&u, 500, "b");
        assert!(matches!(
            dual_lipschitz_value(&a, &b, &TestDictionary::standard(2, 1.0)),
            Err(Error::InsufficientData { needed: 100, got: 99 })
        ));
    }
}
