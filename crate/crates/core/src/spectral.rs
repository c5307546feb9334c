//! Dirichlet sine eigenbasis on `[0, L]`.
//!
//! A state is stored through its coordinates `c_j` in the L²-orthonormal
//! eigenfunctions `e_j(x) = sqrt(2/L) sin(jπx/L)`, `j = 1..=n_modes`, with
//! Laplacian eigenvalues `α_j = (jπ/L)²`. Physical samples live on the
//! `n_phys` interior nodes `x_m = mL/(n_phys+1)`; with `n_phys ≥ 2·n_modes`
//! both the quartic integral and the projection of `|u|²u` back onto the
//! retained modes are exact.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval, truncation and quadrature resolution, plus the cached sine
/// transform plan.
pub struct Grid {
    length: f64,
    n_modes: usize,
    n_phys: usize,
    eigenvalues: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("length", &self.length)
            .field("n_modes", &self.n_modes)
            .field("n_phys", &self.n_phys)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub n_modes: usize,
    pub n_phys: usize,
}

impl Grid {
    pub fn new(length: f64, n_modes: usize, n_phys: usize) -> Result<Arc<Grid>> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Argument(format!("grid length must be > 0, got {length}")));
        }
        if n_modes < 4 {
            return Err(Error::Argument(format!("n_modes must be >= 4, got {n_modes}")));
        }
        if n_phys < 2 * n_modes {
            return Err(Error::Argument(format!(
                "n_phys = {n_phys} must be >= 2 * n_modes = {}",
                2 * n_modes
            )));
        }
        let eigenvalues = (1..=n_modes)
            .map(|j| (j as f64 * PI / length).powi(2))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(2 * (n_phys + 1));
        Ok(Arc::new(Grid {
            length,
            n_modes,
            n_phys,
            eigenvalues,
            fft,
        }))
    }

    /// Grid with the default `n_phys = 4 · n_modes` padding.
    pub fn padded(length: f64, n_modes: usize) -> Result<Arc<Grid>> {
        Grid::new(length, n_modes, 4 * n_modes)
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Arc<Grid>> {
        Grid::new(spec.length, spec.n_modes, spec.n_phys)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            length: self.length,
            n_modes: self.n_modes,
            n_phys: self.n_phys,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_phys(&self) -> usize {
        self.n_phys
    }

    /// `α_j = (jπ/L)²` for `1 ≤ j ≤ n_modes`.
    pub fn eigenvalue(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.n_modes {
            return Err(Error::Index {
                what: "mode",
                index: j,
                lo: 1,
                hi: self.n_modes,
            });
        }
        Ok(self.eigenvalues[j - 1])
    }

    /// All eigenvalues, index `j - 1` holding `α_j`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Quadrature spacing `h = L / (n_phys + 1)`.
    pub fn spacing(&self) -> f64 {
        self.length / (self.n_phys + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..=self.n_phys).map(|m| m as f64 * h).collect()
    }

    /// Unnormalised DST-I, `out_k = Σ_m x_m sin(π k m / (n+1))`, in place on
    /// a buffer of length `n_phys`.
    fn dst1(&self, data: &mut [Complex64]) {
        let n = self.n_phys;
        debug_assert_eq!(data.len(), n);
        let size = 2 * (n + 1);
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        for (m, &x) in data.iter().enumerate() {
            buf[m + 1] = x;
            buf[size - m - 1] = -x;
        }
        self.fft.process(&mut buf);
        // FFT of the odd extension is -2i times the sine sum.
        for (k, out) in data.iter_mut().enumerate() {
            let y = buf[k + 1];
            *out = Complex64::new(-0.5 * y.im, 0.5 * y.re);
        }
    }
}

/// Weights of the energy functional `H(u) = α‖u‖₁² + (β/4)∫|u|⁴`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub alpha: f64,
    pub beta: f64,
}

impl EnergyParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Argument(format!("energy alpha must be > 0, got {alpha}")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Argument(format!("energy beta must be > 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n_modes],
        }
    }

    pub fn from_coeffs(grid: &Arc<Grid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n_modes {
            return Err(Error::Shape {
                expected: grid.n_modes,
                found: coeffs.len(),
            });
        }
        Ok(Self {
            grid: Arc::clone(grid),
            coeffs,
        })
    }

    /// The eigenfunction `e_j`.
    pub fn basis(grid: &Arc<Grid>, j: usize) -> Result<Self> {
        grid.eigenvalue(j)?;
        let mut u = Self::zeros(grid);
        u.coeffs[j - 1] = Complex64::new(1.0, 0.0);
        Ok(u)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficient of `e_j` (1-based).
    pub fn coeff(&self, j: usize) -> Complex64 {
        self.coeffs[j - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    fn weighted_sq(&self, power: i32) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.grid.eigenvalues)
            .map(|(c, a)| a.powi(power) * c.norm_sqr())
            .sum()
    }

    /// `‖u‖²` (L²).
    pub fn norm_sq(&self) -> f64 {
        self.weighted_sq(0)
    }

    /// `‖u‖₁² = ‖∇u‖²`.
    pub fn norm_h1_sq(&self) -> f64 {
        self.weighted_sq(1)
    }

    /// `‖u‖₂² = ‖Δu‖²`.
    pub fn norm_h2_sq(&self) -> f64 {
        self.weighted_sq(2)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_h1(&self) -> f64 {
        self.norm_h1_sq().sqrt()
    }

    pub fn norm_h2(&self) -> f64 {
        self.norm_h2_sq().sqrt()
    }

    /// Samples `u(x_m)` on the quadrature nodes.
    pub fn to_physical(&self) -> Vec<Complex64> {
        let grid = &self.grid;
        let mut buf = vec![Complex64::new(0.0, 0.0); grid.n_phys];
        buf[..grid.n_modes].copy_from_slice(&self.coeffs);
        grid.dst1(&mut buf);
        let scale = (2.0 / grid.length).sqrt();
        for v in &mut buf {
            *v *= scale;
        }
        buf
    }

    /// Inverse of [`SpectralField::to_physical`]: projects nodal samples onto
    /// the retained modes.
    pub fn from_physical(grid: &Arc<Grid>, samples: &[Complex64]) -> Result<Self> {
        if samples.len() != grid.n_phys {
            return Err(Error::Shape {
                expected: grid.n_phys,
                found: samples.len(),
            });
        }
        let mut buf = samples.to_vec();
        grid.dst1(&mut buf);
        let scale = grid.spacing() * (2.0 / grid.length).sqrt();
        buf.truncate(grid.n_modes);
        for v in &mut buf {
            *v *= scale;
        }
        Ok(Self {
            grid: Arc::clone(grid),
            coeffs: buf,
        })
    }

    fn check_cut(&self, n: usize, lo: usize, hi: usize) -> Result<()> {
        if n < lo || n > hi {
            return Err(Error::Index {
                what: "projection cutoff",
                index: n,
                lo,
                hi,
            });
        }
        Ok(())
    }

    /// `P_N u`: keeps modes `j ≤ N`.
    pub fn project_low(&self, n: usize) -> Result<Self> {
        self.check_cut(n, 1, self.grid.n_modes - 1)?;
        let mut out = self.clone();
        out.coeffs[n..].iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        Ok(out)
    }

    /// `Q_N u`: keeps modes `j > N`.
    pub fn project_high(&self, n: usize) -> Result<Self> {
        self.check_cut(n, 1, self.grid.n_modes - 1)?;
        let mut out = self.clone();
        out.coeffs[..n].iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        Ok(out)
    }

    /// `Q′_{N′} u`: L²-projection onto `span{e_{N′}, e_{N′+1}, …}`.
    pub fn project_high_l2(&self, n: usize) -> Result<Self> {
        self.check_cut(n, 1, self.grid.n_modes)?;
        let mut out = self.clone();
        out.coeffs[..n - 1]
            .iter_mut()
            .for_each(|c| *c = Complex64::new(0.0, 0.0));
        Ok(out)
    }

    /// `∫|u|⁴ dx` by nodal quadrature (exact on the truncated space).
    pub fn quartic_integral(&self) -> f64 {
        let h = self.grid.spacing();
        h * self.to_physical().iter().map(|v| v.norm_sqr().powi(2)).sum::<f64>()
    }

    /// `H(u) = α‖u‖₁² + (β/4)∫|u|⁴`.
    pub fn energy(&self, p: &EnergyParams) -> f64 {
        p.alpha * self.norm_h1_sq() + 0.25 * p.beta * self.quartic_integral()
    }

    /// Real coordinates of `u` in the H-orthonormal basis
    /// `{g_1, i g_1, g_2, i g_2, …}` with `g_j = α_j^{-1/2} e_j`. Coordinate
    /// `r` (0-based) belongs to mode `r/2 + 1`; even `r` is `√α_j Re c_j`, odd
    /// `r` is `√α_j Im c_j`. Returns the first `n_coords` of them.
    pub fn h_coordinates(&self, n_coords: usize) -> Vec<f64> {
        (0..n_coords)
            .map(|r| {
                let c = self.coeffs[r / 2];
                let s = self.grid.eigenvalues[r / 2].sqrt();
                if r % 2 == 0 {
                    s * c.re
                } else {
                    s * c.im
                }
            })
            .collect()
    }

    /// Overwrites the first `x.len()` H-coordinates (inverse of
    /// [`SpectralField::h_coordinates`]).
    pub fn set_h_coordinates(&mut self, x: &[f64]) {
        for (r, &v) in x.iter().enumerate() {
            let s = self.grid.eigenvalues[r / 2].sqrt();
            let c = &mut self.coeffs[r / 2];
            if r % 2 == 0 {
                c.re = v / s;
            } else {
                c.im = v / s;
            }
        }
    }

    /// Zeroes every H-coordinate from index `n_coords` on, i.e. the
    /// H-orthogonal projection onto the span of the first `n_coords` basis
    /// vectors.
    pub fn keep_low_coordinates(&self, n_coords: usize) -> Self {
        let mut out = self.clone();
        for r in n_coords..2 * self.grid.n_modes {
            let c = &mut out.coeffs[r / 2];
            if r % 2 == 0 {
                c.re = 0.0;
            } else {
                c.im = 0.0;
            }
        }
        out
    }

    /// Complement of [`SpectralField::keep_low_coordinates`].
    pub fn keep_high_coordinates(&self, n_coords: usize) -> Self {
        let low = self.keep_low_coordinates(n_coords);
        self - &low
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn distance_h1(&self, other: &Self) -> f64 {
        (self - other).norm_h1()
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;

    fn add(self, rhs: &SpectralField) -> SpectralField {
        debug_assert_eq!(self.coeffs.len(), rhs.coeffs.len());
        SpectralField {
            grid: Arc::clone(&self.grid),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;

    fn sub(self, rhs: &SpectralField) -> SpectralField {
        debug_assert_eq!(self.coeffs.len(), rhs.coeffs.len());
        SpectralField {
            grid: Arc::clone(&self.grid),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;

    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

/// Direct quadrature of `‖u‖²` from nodal samples.
pub fn physical_norm_sq(grid: &Grid, samples: &[Complex64]) -> f64 {
    grid.spacing() * samples.iter().map(|v| v.norm_sqr()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Arc<Grid>, rng: &mut impl Rng) -> SpectralField {
        let coeffs = (1..=grid.n_modes())
            .map(|j| {
                let s = 1.0 / (j as f64).powf(1.5);
                Complex64::new(s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0))
            })
            .collect();
        SpectralField::from_coeffs(grid, coeffs).unwrap()
    }

    #[test]
    fn eigenvalues_follow_dirichlet_spectrum() {
        let g = Grid::padded(PI, 8).unwrap();
        assert!((g.eigenvalue(1).unwrap() - 1.0).abs() < 1e-14);
        assert!((g.eigenvalue(2).unwrap() - 4.0).abs() < 1e-13);
        let g1 = Grid::padded(1.0, 8).unwrap();
        // 9π² evaluated directly
        let expected = 9.0 * PI * PI;
        assert!((g1.eigenvalue(3).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 88.8264).abs() < 1e-4);
        assert!(matches!(g.eigenvalue(0), Err(Error::Index { .. })));
        assert!(matches!(g.eigenvalue(9), Err(Error::Index { .. })));
        assert!(g.eigenvalues().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_rejects_insufficient_padding() {
        assert!(Grid::new(1.0, 8, 15).is_err());
        assert!(Grid::new(1.0, 3, 16).is_err());
        assert!(Grid::new(0.0, 8, 16).is_err());
        assert!(Grid::new(1.0, 8, 16).is_ok());
    }

    #[test]
    fn zero_field_transforms_to_zero() {
        let g = Grid::padded(2.0, 8).unwrap();
        let u = SpectralField::zeros(&g);
        assert!(u.to_physical().iter().all(|v| v.norm() == 0.0));
        let back = SpectralField::from_physical(&g, &u.to_physical()).unwrap();
        assert!(back.is_zero());
    }

    #[test]
    fn first_mode_samples_are_the_sine() {
        let l = 2.5;
        let g = Grid::padded(l, 8).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap();
        for (x, v) in g.nodes().iter().zip(u.to_physical()) {
            let exact = (2.0 / l).sqrt() * (PI * x / l).sin();
            assert!((v.re - exact).abs() < 1e-13 && v.im.abs() < 1e-13);
        }
    }

    #[test]
    fn roundtrip_is_exact_to_roundoff() {
        let g = Grid::padded(PI, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&g, &mut rng);
        let back = SpectralField::from_physical(&g, &u.to_physical()).unwrap();
        let rel = (&back - &u).norm() / u.norm();
        assert!(rel <= 1e-12, "roundtrip error {rel}");
    }

    #[test]
    fn shape_errors() {
        let g = Grid::padded(1.0, 8).unwrap();
        assert!(matches!(
            SpectralField::from_coeffs(&g, vec![Complex64::new(0.0, 0.0); 7]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            SpectralField::from_physical(&g, &[Complex64::new(0.0, 0.0); 3]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn projections_split_modes() {
        let g = Grid::padded(PI, 8).unwrap();
        let u = &SpectralField::basis(&g, 1).unwrap() + &SpectralField::basis(&g, 5).unwrap();
        assert_eq!(u.project_low(3).unwrap(), SpectralField::basis(&g, 1).unwrap());
        assert_eq!(u.project_high(3).unwrap(), SpectralField::basis(&g, 5).unwrap());
        assert!(u.project_low(0).is_err());
        assert!(u.project_low(8).is_err());
        assert!(u.project_high_l2(8).is_ok());
        assert!(u.project_high_l2(9).is_err());
        let z = SpectralField::zeros(&g);
        assert!(z.project_low(2).unwrap().is_zero());
        assert!(z.project_high(2).unwrap().is_zero());
        assert!(z.project_high_l2(2).unwrap().is_zero());
    }

    #[test]
    fn energy_of_first_mode_matches_quadrature() {
        let g = Grid::padded(PI, 16).unwrap();
        let u = SpectralField::basis(&g, 1).unwrap();
        let p = EnergyParams::new(0.1, 1.0).unwrap();
        // Independent oracle: composite Simpson on a fine mesh of (2/π)² sin⁴ x.
        let n = 20_000;
        let h = PI / n as f64;
        let f = |x: f64| (2.0 / PI).powi(2) * x.sin().powi(4);
        let mut s = f(0.0) + f(PI);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let quartic = s * h / 3.0;
        let expected = 0.1 + 0.25 * quartic;
        assert!((u.energy(&p) - expected).abs() < 1e-10);
        assert!((expected - 0.21937).abs() < 1e-5);
        assert_eq!(SpectralField::zeros(&g).energy(&p), 0.0);
    }

    #[test]
    fn energy_homogeneity() {
        let g = Grid::padded(PI, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&g, &mut rng);
        let u2 = u.scaled(2.0);
        assert!((u2.norm_h1_sq() - 4.0 * u.norm_h1_sq()).abs() < 1e-12 * u2.norm_h1_sq());
        let q = u.quartic_integral();
        assert!((u2.quartic_integral() - 16.0 * q).abs() < 1e-10 * q);
    }

    #[test]
    fn h_coordinates_roundtrip() {
        let g = Grid::padded(1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_field(&g, &mut rng);
        let x = u.h_coordinates(6);
        assert_eq!(x.len(), 6);
        let mut v = SpectralField::zeros(&g);
        v.set_h_coordinates(&x);
        let d = &v - &u.project_low(3).unwrap();
        assert!(d.norm() < 1e-14);
        let hx: f64 = x.iter().map(|v| v * v).sum();
        assert!((hx - u.project_low(3).unwrap().norm_h1_sq()).abs() < 1e-12);
        // odd cut keeps Re of mode 3 only
        let low = u.keep_low_coordinates(5);
        assert_eq!(low.coeff(3).re, u.coeff(3).re);
        assert_eq!(low.coeff(3).im, 0.0);
        let high = u.keep_high_coordinates(5);
        assert!((&(&low + &high) - &u).norm() == 0.0);
    }
}
