//! Shifted product densities of the low-mode kick part and their maximal
//! coupling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kicks::KickSpec;
use crate::quadrature;
use crate::rng::stream;
use crate::stats::{self, Interval};

/// Cap on the residual loop of [`maximal_coupling_sample`].
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Law of the first `dim` H-coordinates of a kick,
/// `p(x) = ∏_r q_r(x_r)` with `q_r(y) = b_r^{-1} p(y / b_r)`.
#[derive(Clone, Debug)]
pub struct ProductDensity {
    spec: KickSpec,
    dim: usize,
}

impl ProductDensity {
    pub fn new(spec: &KickSpec, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Configuration("coupled dimension must be >= 1".into()));
        }
        if spec.b().len() < dim {
            return Err(Error::Configuration(format!(
                "kick law has {} coordinates, coupling needs {dim}",
                spec.b().len()
            )));
        }
        if let Some(r) = spec.b()[..dim].iter().position(|&b| b == 0.0) {
            return Err(Error::Configuration(format!(
                "kick coefficient b_{} = 0 inside the coupled block; the coupling is undefined",
                r + 1
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &KickSpec {
        &self.spec
    }

    /// `∏_r q_r(x_r − mean_r)`.
    pub fn pdf(&self, x: &[f64], mean: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut p = 1.0;
        for r in 0..self.dim {
            p *= self.spec.coordinate_pdf(r, x[r] - mean[r]);
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        let mut x = self.spec.sample_coordinates(0..self.dim, rng);
        for (xi, m) in x.iter_mut().zip(mean) {
            *xi += m;
        }
        x
    }

    /// Breakpoints of coordinate `r` of the density centred at `mean_r`.
    fn cuts(&self, r: usize, mean_r: f64) -> Vec<f64> {
        let b = self.spec.b()[r];
        self.spec
            .law()
            .breakpoints()
            .into_iter()
            .map(|c| mean_r + b * c)
            .collect()
    }
}

/// Density of the kick's low block shifted to `mean`.
pub fn shifted_density(density: &ProductDensity, x: &[f64], mean: &[f64]) -> Result<f64> {
    check_dims(density, x)?;
    check_dims(density, mean)?;
    Ok(density.pdf(x, mean))
}

fn check_dims(density: &ProductDensity, v: &[f64]) -> Result<()> {
    if v.len() != density.dim {
        return Err(Error::Shape {
            expected: density.dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("non-finite coordinate".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledDraw {
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    pub coupled: bool,
}

/// Maximal (γ-)coupling of `p(· − mean_p)` and `p(· − mean_q)`: draw
/// `X ~ p`, keep `v = v′ = X` with probability `min(1, q(X)/p(X))`,
/// otherwise draw `v′` from the normalised residual `(q − p)^+`.
pub fn maximal_coupling_sample<R: Rng + ?Sized>(
    density: &ProductDensity,
    mean_p: &[f64],
    mean_q: &[f64],
    rng: &mut R,
) -> Result<CoupledDraw> {
    check_dims(density, mean_p)?;
    check_dims(density, mean_q)?;
    let x = density.sample(mean_p, rng);
    if mean_p == mean_q {
        return Ok(CoupledDraw {
            v_prime: x.clone(),
            v: x,
            coupled: true,
        });
    }
    let px = density.pdf(&x, mean_p);
    let qx = density.pdf(&x, mean_q);
    let u: f64 = rng.random();
    if u * px <= qx {
        return Ok(CoupledDraw {
            v_prime: x.clone(),
            v: x,
            coupled: true,
        });
    }
    for _ in 0..MAX_REJECTIONS {
        let y = density.sample(mean_q, rng);
        let qy = density.pdf(&y, mean_q);
        let py = density.pdf(&y, mean_p);
        let w: f64 = rng.random();
        if w * qy > py {
            return Ok(CoupledDraw {
                v: x,
                v_prime: y,
                coupled: false,
            });
        }
    }
    Err(Error::Degeneracy(MAX_REJECTIONS))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TvMode {
    /// Tensor Gauss–Legendre quadrature, `dim ≤ 3`.
    Quadrature,
    /// `E_p[(1 − q/p)^+]` from `samples` draws of `p`.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    /// Zero for quadrature.
    pub std_error: f64,
    pub ci95: Interval,
}

/// Total variation `1 − ∫ min(p, q)` between the two shifted laws.
pub fn tv_oracle(
    density: &ProductDensity,
    mean_p: &[f64],
    mean_q: &[f64],
    mode: TvMode,
) -> Result<TvEstimate> {
    check_dims(density, mean_p)?;
    check_dims(density, mean_q)?;
    match mode {
        TvMode::Quadrature => {
            let value = tv_quadrature(density, mean_p, mean_q)?;
            Ok(TvEstimate {
                value,
                std_error: 0.0,
                ci95: Interval { lo: value, hi: value },
            })
        }
        TvMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InsufficientData { needed: 2, got: samples });
            }
            let mut rng = stream(seed, 0, 3);
            let vals: Vec<f64> = (0..samples)
                .map(|_| {
                    let x = density.sample(mean_p, &mut rng);
                    let px = density.pdf(&x, mean_p);
                    (1.0 - density.pdf(&x, mean_q) / px).max(0.0)
                })
                .collect();
            let value = stats::mean(&vals);
            let se = stats::std_error(&vals);
            Ok(TvEstimate {
                value,
                std_error: se,
                ci95: Interval {
                    lo: value - 1.96 * se,
                    hi: value + 1.96 * se,
                },
            })
        }
    }
}

fn tv_quadrature(density: &ProductDensity, mean_p: &[f64], mean_q: &[f64]) -> Result<f64> {
    let dim = density.dim;
    if dim > 3 {
        return Err(Error::Mode(format!("quadrature TV needs dim <= 3, got {dim}")));
    }
    let rules: Vec<_> = (0..dim)
        .map(|r| {
            let mut cuts = density.cuts(r, mean_p[r]);
            cuts.extend(density.cuts(r, mean_q[r]));
            // Symmetric equal-width marginals cross half way between the means.
            cuts.push(0.5 * (mean_p[r] + mean_q[r]));
            axis_rule(&cuts, dim)
        })
        .collect();
    let overlap = tensor_integrate(&rules, |x| density.pdf(x, mean_p).min(density.pdf(x, mean_q)));
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Composite rule for one axis, sized so the tensor grid stays near 1e6
/// points.
fn axis_rule(cuts: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    const ORDER: usize = 8;
    let per_axis = [0, 1 << 14, 1 << 10, 96][dim];
    let pieces = cuts.len().saturating_sub(1).max(1);
    let sub = (per_axis / (pieces * ORDER)).max(1);
    quadrature::composite(cuts, sub, ORDER)
}

fn tensor_integrate<F: Fn(&[f64]) -> f64>(rules: &[(Vec<f64>, Vec<f64>)], f: F) -> f64 {
    let dim = rules.len();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut sum = 0.0;
    loop {
        let mut w = 1.0;
        for r in 0..dim {
            x[r] = rules[r].0[idx[r]];
            w *= rules[r].1[idx[r]];
        }
        sum += w * f(&x);
        let mut r = 0;
        loop {
            if r == dim {
                return sum;
            }
            idx[r] += 1;
            if idx[r] < rules[r].0.len() {
                break;
            }
            idx[r] = 0;
            r += 1;
        }
    }
}

/// `∫ p(· − mean)` by tensor quadrature (`dim ≤ 3`).
pub fn total_mass(density: &ProductDensity, mean: &[f64]) -> Result<f64> {
    check_dims(density, mean)?;
    let dim = density.dim;
    if dim > 3 {
        return Err(Error::Mode(format!("quadrature needs dim <= 3, got {dim}")));
    }
    let rules: Vec<_> = (0..dim).map(|r| axis_rule(&density.cuts(r, mean[r]), dim)).collect();
    Ok(tensor_integrate(&rules, |x| density.pdf(x, mean)))
}
