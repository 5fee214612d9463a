//! General-dyne observable `Θ = a + Υ a†`, its eigenvectors and the POVM
//! `dΠ(θ) = |θ⟩⟨θ| dθ₁dθ₂ / (π(1 - Υ²))`.
//!
//! Eigenvectors are improper in general but `ψ(x) = ⟨x|θ⟩` is square
//! integrable, so the Fock amplitudes are stored as computed from the
//! normalised `ψ` and the measure weight is kept separate. For `|Υ| → 1` both
//! the weight and the prefactor of `ψ` blow up, so those values go through the
//! homodyne branch instead.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{CMatrix, CVector, FockDensity, FockOperator};

/// Distance from `|Υ| = 1` below which the general-dyne formulas are refused.
pub const HOMODYNE_EPSILON: f64 = 1e-6;

const AMPLITUDE_TOL: f64 = 1e-13;
const MAX_REFINEMENTS: usize = 9;

/// The pair `(Υ, N)` that selects an unravelling of the thermal master equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unravelling {
    upsilon: f64,
    n_bath: f64,
}

impl Unravelling {
    pub fn new(upsilon: f64, n_bath: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&upsilon) {
            return Err(Error::Domain(format!("upsilon must lie in [-1, 1] (got {upsilon})")));
        }
        if !(n_bath >= 0.0) || !n_bath.is_finite() {
            return Err(Error::Domain(format!(
                "bath photon number must be finite and nonnegative (got {n_bath})"
            )));
        }
        Ok(Self { upsilon, n_bath })
    }

    pub fn upsilon(&self) -> f64 {
        self.upsilon
    }

    pub fn n_bath(&self) -> f64 {
        self.n_bath
    }

    /// `L₁ = (1 + Υ)(1 + N(1 + Υ))/2`, the variance of `θ₁` for a thermal bath.
    pub fn l1(&self) -> f64 {
        let u = 1.0 + self.upsilon;
        u * (1.0 + self.n_bath * u) / 2.0
    }

    /// `L₂ = (1 - Υ)(1 + N(1 - Υ))/2`, the variance of `θ₂` for a thermal bath.
    pub fn l2(&self) -> f64 {
        let u = 1.0 - self.upsilon;
        u * (1.0 + self.n_bath * u) / 2.0
    }

    /// Beam-splitter transmissivity realising this `Υ`: `T = (1 + Υ)/2`.
    pub fn t_upsilon(&self) -> f64 {
        (1.0 + self.upsilon) / 2.0
    }

    /// Which outcome component carries no information, if any.
    pub fn degenerate_component(&self) -> Option<Component> {
        if self.upsilon == 1.0 {
            Some(Component::Theta2)
        } else if self.upsilon == -1.0 {
            Some(Component::Theta1)
        } else {
            None
        }
    }
}

/// One of the two real components of `θ = θ₁ + iθ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Theta1,
    Theta2,
}

/// A general-dyne outcome `θ = θ₁ + iθ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GendyneOutcome {
    pub theta1: f64,
    pub theta2: f64,
    /// Set for `Υ = ±1`, where one component is identically zero.
    pub degenerate: Option<Component>,
}

impl GendyneOutcome {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self {
            theta1,
            theta2,
            degenerate: None,
        }
    }

    pub fn from_complex(theta: Complex64) -> Self {
        Self::new(theta.re, theta.im)
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.theta1, self.theta2)
    }
}

fn check_general_dyne(upsilon: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&upsilon) {
        return Err(Error::Domain(format!("upsilon must lie in [-1, 1] (got {upsilon})")));
    }
    if upsilon.abs() > 1.0 - HOMODYNE_EPSILON {
        return Err(Error::HomodyneLimit(upsilon));
    }
    Ok(())
}

/// Shape parameters of `ψ`: prefactor, `√((1+Υ)/(2(1-Υ)))`, `√(2/(1-Υ²))`.
fn wavefunction_coefficients(upsilon: f64) -> (f64, f64, f64) {
    let ratio = (1.0 + upsilon) / (1.0 - upsilon);
    let prefactor = (ratio / (2.0 * PI)).powf(0.25);
    let width = (ratio / 2.0).sqrt();
    let shift = (2.0 / (1.0 - upsilon * upsilon)).sqrt();
    (prefactor, width, shift)
}

/// `ψ(x) = ⟨x|θ⟩` for the position eigenbasis of `q = a + a†`.
pub fn eigen_wavefunction(x: f64, theta: GendyneOutcome, upsilon: f64) -> Result<Complex64> {
    check_general_dyne(upsilon)?;
    let (pref, width, shift) = wavefunction_coefficients(upsilon);
    let arg = width * x - shift * theta.theta1;
    let exponent = Complex64::new(-0.5 * arg * arg, theta.theta2 * x / (1.0 - upsilon));
    Ok(pref * exponent.exp())
}

/// Harmonic-oscillator eigenfunctions `⟨x|n⟩` for `[q, p] = 2i`, `n < dim`,
/// evaluated on `xs`. Row `n` holds `φₙ`.
pub(crate) fn oscillator_table(xs: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let norm0 = (2.0 * PI).powf(-0.25);
    let mut table = Vec::with_capacity(dim);
    table.push(xs.iter().map(|x| norm0 * (-x * x / 4.0).exp()).collect::<Vec<_>>());
    if dim > 1 {
        table.push(xs.iter().zip(&table[0]).map(|(x, p)| x * p).collect());
    }
    for n in 1..dim.saturating_sub(1) {
        let (sn, sn1) = ((n as f64).sqrt(), ((n + 1) as f64).sqrt());
        let next: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x * table[n][i] - sn * table[n - 1][i]) / sn1)
            .collect();
        table.push(next);
    }
    table
}

/// Region of `x` where `φₙ` (`n < dim`) is non-negligible.
fn oscillator_support(dim: usize) -> f64 {
    2.0 * (dim as f64).sqrt() + 14.0
}

fn amplitudes_on_grid(
    theta: GendyneOutcome,
    upsilon: f64,
    dim: usize,
    lo: f64,
    hi: f64,
    points: usize,
) -> CVector {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
    let psi: Vec<Complex64> = xs
        .iter()
        .map(|&x| eigen_wavefunction(x, theta, upsilon).expect("upsilon checked by caller"))
        .collect();
    let table = oscillator_table(&xs, dim);
    CVector::from_fn(dim, |n, _| {
        let s: Complex64 = table[n].iter().zip(&psi).map(|(f, p)| p * *f).sum();
        s * h
    })
}

/// Fock amplitudes `⟨n|θ⟩`, `n < dim`, by trapezoidal quadrature refined
/// until successive estimates agree to 1e-13.
pub fn eigen_amplitudes(theta: GendyneOutcome, upsilon: f64, dim: usize) -> Result<CVector> {
    check_general_dyne(upsilon)?;
    let (_, width, shift) = wavefunction_coefficients(upsilon);
    let centre = shift * theta.theta1 / width;
    let half = 9.0 / width;
    let support = oscillator_support(dim);
    let lo = (centre - half).max(-support);
    let hi = (centre + half).min(support);
    if lo >= hi {
        return Ok(CVector::zeros(dim));
    }
    // Resolve both the envelope and the carrier e^{iθ₂x/(1-Υ)}.
    let carrier = theta.theta2.abs() / (1.0 - upsilon);
    let scale = width.max(carrier).max(1.0);
    let mut points = (((hi - lo) * scale * 4.0).ceil() as usize).max(64) + 1;
    let mut prev = amplitudes_on_grid(theta, upsilon, dim, lo, hi, points);
    for _ in 0..MAX_REFINEMENTS {
        points = 2 * points - 1;
        let next = amplitudes_on_grid(theta, upsilon, dim, lo, hi, points);
        let change = (&next - &prev).camax();
        prev = next;
        if change < AMPLITUDE_TOL {
            return Ok(prev);
        }
    }
    Err(Error::Numerical(format!(
        "eigenvector quadrature did not converge for θ = {} (Υ = {upsilon})",
        theta.as_complex()
    )))
}

/// `‖P(Θ - θ)|ψ⟩‖/‖P|ψ⟩‖` with `P` the projector on the first `levels`
/// Fock states. `ket` needs at least `levels + 1` entries so that every
/// projected component is computed from exact amplitudes.
pub fn eigen_residual(ket: &CVector, upsilon: f64, theta: Complex64, levels: usize) -> Result<f64> {
    if ket.len() < levels + 1 {
        return Err(Error::DimensionMismatch {
            expected: levels + 1,
            got: ket.len(),
        });
    }
    let mut res = 0.0;
    let mut norm = 0.0;
    for n in 0..levels {
        let lower = if n > 0 { (n as f64).sqrt() * ket[n - 1] } else { Complex64::new(0.0, 0.0) };
        let upper = ((n + 1) as f64).sqrt() * ket[n + 1];
        res += (upper + upsilon * lower - theta * ket[n]).norm_sqr();
        norm += ket[n].norm_sqr();
    }
    Ok((res / norm).sqrt())
}

/// One element of the POVM: the eigenvector in the Fock basis and the measure
/// weight `1/(π(1 - Υ²))` (or `1` for the homodyne branch).
#[derive(Debug, Clone, PartialEq)]
pub struct PovmElement {
    pub ket: CVector,
    pub weight: f64,
}

impl PovmElement {
    /// `weight · |θ⟩⟨θ|`, the density of the POVM with respect to `dθ₁dθ₂`.
    pub fn operator(&self) -> FockOperator {
        let m = &self.ket * self.ket.adjoint() * Complex64::from(self.weight);
        FockOperator::from_matrix(m).expect("outer product is square")
    }

    /// `weight · ⟨θ|ρ|θ⟩`.
    pub fn probability_density(&self, rho: &FockDensity) -> f64 {
        let v = self.ket.adjoint() * rho.matrix() * &self.ket;
        self.weight * v[(0, 0)].re
    }
}

/// `|θ⟩⟨θ|` in the truncated Fock basis together with its measure weight.
pub fn povm_element(theta: GendyneOutcome, upsilon: f64, dim: usize) -> Result<PovmElement> {
    let ket = eigen_amplitudes(theta, upsilon, dim)?;
    Ok(PovmElement {
        ket,
        weight: 1.0 / (PI * (1.0 - upsilon * upsilon)),
    })
}

/// Homodyne branch: the improper quadrature eigenvector with eigenvalue `x`.
/// `Υ = 1` measures `q`; `Υ = -1` measures `p` (`Θ = a - a† = ip`).
pub fn homodyne_element(x: f64, upsilon_sign: f64, dim: usize) -> Result<PovmElement> {
    if upsilon_sign.abs() != 1.0 {
        return Err(Error::Domain(format!(
            "homodyne branch needs upsilon = ±1 (got {upsilon_sign})"
        )));
    }
    let table = oscillator_table(&[x], dim);
    // ⟨n|p = x⟩ = iⁿ φₙ(x), since e^{-iπ/2 a†a} maps q onto p.
    let ket = CVector::from_fn(dim, |n, _| {
        let phase = if upsilon_sign > 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::i().powu(n as u32)
        };
        phase * table[n][0]
    });
    Ok(PovmElement { ket, weight: 1.0 })
}

/// Uniform tensor grid for outcome-space quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeGrid {
    pub centre: (f64, f64),
    pub half_width: (f64, f64),
    pub points: (usize, usize),
}

impl OutcomeGrid {
    /// Square grid of the given radius and spacing, centred at the origin.
    pub fn square(radius: f64, spacing: f64) -> Self {
        let n = (2.0 * radius / spacing).round() as usize + 1;
        Self {
            centre: (0.0, 0.0),
            half_width: (radius, radius),
            points: (n, n),
        }
    }

    fn axis(c: f64, hw: f64, n: usize) -> (Vec<f64>, f64) {
        let h = 2.0 * hw / (n - 1) as f64;
        ((0..n).map(|i| c - hw + h * i as f64).collect(), h)
    }

    /// Grid nodes along `θ₁`, `θ₂` and the cell area.
    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let (x, hx) = Self::axis(self.centre.0, self.half_width.0, self.points.0);
        let (y, hy) = Self::axis(self.centre.1, self.half_width.1, self.points.1);
        (x, y, hx * hy)
    }
}

/// `Σ_grid weight |θ⟩⟨θ| Δθ₁Δθ₂`, which approaches the identity.
pub fn povm_completeness(upsilon: f64, dim: usize, grid: &OutcomeGrid) -> Result<CMatrix> {
    check_general_dyne(upsilon)?;
    let (xs, ys, area) = grid.nodes();
    let weight = 1.0 / (PI * (1.0 - upsilon * upsilon));
    let mut acc = CMatrix::zeros(dim, dim);
    for &t1 in &xs {
        for &t2 in &ys {
            let ket = eigen_amplitudes(GendyneOutcome::new(t1, t2), upsilon, dim)?;
            acc += &ket * ket.adjoint();
        }
    }
    Ok(acc * Complex64::from(weight * area))
}

/// Default completeness grid for a `dim`-level space: wide enough to hold the
/// outcome law of `|dim - 1⟩`, fine enough to resolve its structure.
pub fn completeness_grid(upsilon: f64, dim: usize) -> OutcomeGrid {
    let t = (1.0 + upsilon) / 2.0;
    let top = (2 * dim - 1) as f64;
    let v1 = t * (t * top + 1.0 - t);
    let v2 = (1.0 - t) * ((1.0 - t) * top + t);
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let spacing = |s: f64| (s / (dim as f64).sqrt()).min(0.25 * s.max(0.2)) * 0.5;
    let (h1, h2) = (spacing(s1), spacing(s2));
    let (r1, r2) = (3.0 * s1 + 6.0 * t.sqrt(), 3.0 * s2 + 6.0 * (1.0 - t).sqrt());
    OutcomeGrid {
        centre: (0.0, 0.0),
        half_width: (r1, r2),
        points: ((2.0 * r1 / h1).ceil() as usize + 1, (2.0 * r2 / h2).ceil() as usize + 1),
    }
}

/// Outcome law `p(θ) = weight ⟨θ|ρ|θ⟩` for a bath state `ρ`.
#[derive(Debug, Clone)]
pub struct OutcomeDistribution {
    rho: FockDensity,
    upsilon: f64,
}

/// First and second moments of an outcome law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMoments {
    pub total: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl OutcomeDistribution {
    pub fn upsilon(&self) -> f64 {
        self.upsilon
    }

    /// Probability density at `θ`.
    pub fn pdf(&self, theta1: f64, theta2: f64) -> Result<f64> {
        let el = povm_element(GendyneOutcome::new(theta1, theta2), self.upsilon, self.rho.dim())?;
        Ok(el.probability_density(&self.rho))
    }

    /// Grid sized from the bath state's quadrature moments.
    pub fn default_grid(&self) -> OutcomeGrid {
        let [mq, mp, vq, vp, _] = crate::fock::quadrature_moments(&self.rho);
        let t = (1.0 + self.upsilon) / 2.0;
        let (s1, s2) = (
            (t * (t * vq + 1.0 - t)).sqrt(),
            ((1.0 - t) * ((1.0 - t) * vp + t)).sqrt(),
        );
        let n1 = 81;
        OutcomeGrid {
            centre: (t * mq, (1.0 - t) * mp),
            half_width: (12.0 * s1, 12.0 * s2),
            points: (n1, n1),
        }
    }

    /// Total mass, mean and covariance by tensor-grid trapezoid.
    pub fn moments(&self, grid: &OutcomeGrid) -> Result<OutcomeMoments> {
        let (xs, ys, area) = grid.nodes();
        let (mut m0, mut m1, mut m2) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
        for &t1 in &xs {
            for &t2 in &ys {
                let p = self.pdf(t1, t2)? * area;
                m0 += p;
                m1[0] += p * t1;
                m1[1] += p * t2;
                m2[0][0] += p * t1 * t1;
                m2[0][1] += p * t1 * t2;
                m2[1][1] += p * t2 * t2;
            }
        }
        let mean = [m1[0] / m0, m1[1] / m0];
        let c01 = m2[0][1] / m0 - mean[0] * mean[1];
        Ok(OutcomeMoments {
            total: m0,
            mean,
            cov: [
                [m2[0][0] / m0 - mean[0] * mean[0], c01],
                [c01, m2[1][1] / m0 - mean[1] * mean[1]],
            ],
        })
    }
}

/// `p(θ) = weight ⟨θ|ρ|θ⟩` as a callable law.
pub fn outcome_distribution(rho: &FockDensity, upsilon: f64) -> Result<OutcomeDistribution> {
    check_general_dyne(upsilon)?;
    Ok(OutcomeDistribution {
        rho: rho.clone(),
        upsilon,
    })
}

/// Closed-form thermal outcome law: zero-mean Gaussian with covariance `diag(L₁, L₂)`.
pub fn thermal_outcome_pdf(unravelling: &Unravelling, theta1: f64, theta2: f64) -> f64 {
    let (l1, l2) = (unravelling.l1(), unravelling.l2());
    (-(theta1 * theta1 / l1 + theta2 * theta2 / l2) / 2.0).exp() / (2.0 * PI * (l1 * l2).sqrt())
}

/// The `Υ = ±1` law: a one-dimensional Gaussian in the informative component
/// with variance `1 + 2N`; the other component is a delta at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomodyneLaw {
    pub variance: f64,
    pub degenerate: Component,
}

impl HomodyneLaw {
    pub fn pdf(&self, x: f64) -> f64 {
        (-x * x / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }
}

/// Outcome law for homodyne detection of `q` (`Υ = 1`) on a thermal bath.
pub fn homodyne_limit_distribution(n_bath: f64) -> Result<HomodyneLaw> {
    if !(n_bath >= 0.0) || !n_bath.is_finite() {
        return Err(Error::Domain(format!(
            "bath photon number must be finite and nonnegative (got {n_bath})"
        )));
    }
    Ok(HomodyneLaw {
        variance: 1.0 + 2.0 * n_bath,
        degenerate: Component::Theta2,
    })
}

/// Largest residual of `½[(1+Υ)x + 2(1-Υ) d/dx] ψ = θ ψ` over `points`
/// equispaced nodes in `[-half_width, half_width]`, derivative by central
/// differences.
pub fn eigen_ode_residual(theta: GendyneOutcome, upsilon: f64, half_width: f64, points: usize) -> Result<f64> {
    check_general_dyne(upsilon)?;
    let h = 1e-4;
    let f = |x| eigen_wavefunction(x, theta, upsilon);
    let mut worst = 0.0f64;
    for i in 0..points {
        let x = -half_width + 2.0 * half_width * i as f64 / (points.max(2) - 1) as f64;
        let d = (f(x + h)? - f(x - h)?) / (2.0 * h);
        let psi = f(x)?;
        let lhs = ((1.0 + upsilon) * x * psi + 2.0 * (1.0 - upsilon) * d) * 0.5;
        worst = worst.max((lhs - theta.as_complex() * psi).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{annihilation, coherent_ket, thermal_density};
    use approx::assert_abs_diff_eq;

    fn residual_of_ode(theta: GendyneOutcome, upsilon: f64) -> f64 {
        eigen_ode_residual(theta, upsilon, 10.0, 2000).unwrap()
    }

    #[test]
    fn unravelling_derived_quantities() {
        let u = Unravelling::new(0.5, 1.0).unwrap();
        assert_abs_diff_eq!(u.l1(), 1.875, epsilon = 1e-15);
        assert_abs_diff_eq!(u.l2(), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(u.t_upsilon(), 0.75, epsilon = 1e-15);
        let u = Unravelling::new(0.9, 1.0).unwrap();
        assert_abs_diff_eq!(u.l1(), 2.755, epsilon = 1e-12);
        let u = Unravelling::new(1.0, 3.0).unwrap();
        assert_eq!(u.l2(), 0.0);
        assert_eq!(u.degenerate_component(), Some(Component::Theta2));
        let u = Unravelling::new(0.0, 2.0).unwrap();
        assert_abs_diff_eq!(u.l1(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u.l2(), 1.5, epsilon = 1e-15);
        assert!(Unravelling::new(1.5, 0.0).is_err());
        assert!(Unravelling::new(0.0, -1.0).is_err());
    }

    #[test]
    fn heterodyne_vacuum_wavefunction() {
        for x in [-3.0, -0.5, 0.0, 1.7] {
            let psi = eigen_wavefunction(x, GendyneOutcome::new(0.0, 0.0), 0.0).unwrap();
            let expect = (2.0 * PI).powf(-0.25) * (-x * x / 4.0).exp();
            assert_abs_diff_eq!(psi.re, expect, epsilon = 1e-15);
            assert_abs_diff_eq!(psi.im, 0.0, epsilon = 1e-15);
        }
        // |ψ|² for θ = 1 peaks at x = 2θ₁.
        let theta = GendyneOutcome::new(1.0, 0.0);
        let f = |x: f64| eigen_wavefunction(x, theta, 0.0).unwrap().norm_sqr();
        assert!(f(2.0) > f(1.99) && f(2.0) > f(2.01));
        assert_abs_diff_eq!(f(2.0 + 0.3), f(2.0 - 0.3), epsilon = 1e-15);
    }

    #[test]
    fn wavefunction_solves_eigen_ode() {
        for &u in &[-0.5, 0.3, 0.9] {
            for theta in [GendyneOutcome::new(0.0, 0.0), GendyneOutcome::new(1.0, 1.0)] {
                assert!(residual_of_ode(theta, u) < 1e-6);
            }
        }
    }

    #[test]
    fn homodyne_limit_is_refused() {
        let theta = GendyneOutcome::new(0.0, 0.0);
        assert!(matches!(eigen_wavefunction(0.0, theta, 1.0), Err(Error::HomodyneLimit(_))));
        assert!(matches!(povm_element(theta, -1.0 + 1e-7, 10), Err(Error::HomodyneLimit(_))));
        assert!(eigen_wavefunction(0.0, theta, 1.0 - 1e-5).is_ok());
    }

    #[test]
    fn heterodyne_eigenvector_is_coherent() {
        let alpha = Complex64::new(0.8, -0.4);
        let el = povm_element(GendyneOutcome::from_complex(alpha), 0.0, 30).unwrap();
        let coh = coherent_ket(alpha, 30);
        let overlap = (el.ket.adjoint() * &coh)[(0, 0)].norm();
        assert!(overlap > 1.0 - 1e-8, "overlap {overlap}");
        assert_abs_diff_eq!(el.weight, 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn eigenvector_residual() {
        let d = 40;
        for &u in &[-0.5, 0.3, 0.9] {
            for th in [Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0)] {
                let ket = povm_element(GendyneOutcome::from_complex(th), u, d + 1).unwrap().ket;
                let res = eigen_residual(&ket, u, th, d).unwrap();
                assert!(res < 1e-6, "Υ={u} θ={th}: residual {res}");
            }
        }
    }

    #[test]
    fn residual_matches_dense_operator() {
        let d = 60;
        let a = annihilation(d).unwrap();
        let (u, th) = (0.3, Complex64::new(1.0, 1.0));
        let theta_op = &a + &(&a.adjoint() * Complex64::from(u));
        let ket = povm_element(GendyneOutcome::from_complex(th), u, d).unwrap().ket;
        let dense = theta_op.apply(&ket) - &ket * th;
        let low: f64 = (0..d - 1).map(|n| dense[n].norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = (0..d - 1).map(|n| ket[n].norm_sqr()).sum::<f64>().sqrt();
        let banded = eigen_residual(&ket, u, th, d - 1).unwrap();
        assert_abs_diff_eq!(banded, low / norm, epsilon = 1e-14);
    }

    #[test]
    fn povm_elements_are_positive() {
        let el = povm_element(GendyneOutcome::new(0.4, -1.2), -0.3, 12).unwrap();
        let rho = FockDensity::from_matrix_unchecked(el.operator().into_matrix());
        assert!(rho.min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn heterodyne_law_is_husimi() {
        let n = 1.0;
        let rho = thermal_density(n, 40).unwrap();
        let law = outcome_distribution(&rho, 0.0).unwrap();
        for (t1, t2) in [(0.0, 0.0), (0.7, -0.2), (-1.5, 1.1)] {
            let expect = (-(t1 * t1 + t2 * t2) / (1.0 + n)).exp() / (PI * (1.0 + n));
            assert_abs_diff_eq!(law.pdf(t1, t2).unwrap(), expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn homodyne_law_normalisation() {
        assert_eq!(homodyne_limit_distribution(0.0).unwrap().variance, 1.0);
        let law = homodyne_limit_distribution(1.0).unwrap();
        assert_eq!(law.variance, 3.0);
        let h = 0.01;
        let total: f64 = (-2000..=2000).map(|i| law.pdf(i as f64 * h) * h).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn homodyne_element_is_quadrature_eigenvector() {
        let d = 40;
        let a = annihilation(d).unwrap();
        let q = &a + &a.adjoint();
        let p = &(&a - &a.adjoint()) * Complex64::new(0.0, -1.0);
        // Improper eigenvectors: check the residual on the low levels only.
        for (sign, op) in [(1.0, &q), (-1.0, &p)] {
            let x = 0.7;
            let ket = homodyne_element(x, sign, d).unwrap().ket;
            let res = op.apply(&ket) - &ket * Complex64::from(x);
            let low: f64 = (0..d - 1).map(|n| res[n].norm_sqr()).sum::<f64>().sqrt();
            assert!(low < 1e-12, "sign {sign}: {low}");
        }
    }

    #[test]
    fn completeness_on_default_grid() {
        let d = 15;
        let m = povm_completeness(0.5, d, &completeness_grid(0.5, d)).unwrap();
        assert!((m - CMatrix::identity(d, d)).camax() < 1e-3);
    }

    #[test]
    fn completeness_needs_room_for_the_top_level() {
        // |14⟩ has θ₁ spread ≈ 4.5 at Υ = 0.5, so a radius-6 box clips it.
        let d = 15;
        let m = povm_completeness(0.5, d, &OutcomeGrid::square(6.0, 0.1)).unwrap();
        let dev = m - CMatrix::identity(d, d);
        assert!(dev[(0, 0)].norm() < 1e-9);
        assert!(dev[(d - 1, d - 1)].norm() > 1e-3);
    }

    #[test]
    fn thermal_outcome_covariance() {
        let u = Unravelling::new(0.5, 1.0).unwrap();
        let law = outcome_distribution(&thermal_density(1.0, 60).unwrap(), 0.5).unwrap();
        let m = law.moments(&law.default_grid()).unwrap();
        assert_abs_diff_eq!(m.total, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.cov[0][0], u.l1(), epsilon = 1e-8);
        assert_abs_diff_eq!(m.cov[1][1], u.l2(), epsilon = 1e-8);
        assert_abs_diff_eq!(m.cov[0][1], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(law.pdf(0.4, -0.3).unwrap(), thermal_outcome_pdf(&u, 0.4, -0.3), epsilon = 1e-12);
    }

    #[test]
    fn continuity_towards_homodyne() {
        let law = outcome_distribution(&thermal_density(1.0, 60).unwrap(), 0.999).unwrap();
        let m = law.moments(&law.default_grid()).unwrap();
        let limit = homodyne_limit_distribution(1.0).unwrap().variance;
        assert!((m.cov[0][0] / limit - 1.0).abs() < 0.01);
    }
}
