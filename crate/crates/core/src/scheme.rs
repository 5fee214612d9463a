//! Linear-optics realisation of general-dyne detection: the input mode `a`
//! meets the vacuum `v` on a beam splitter of transmissivity `T = cos² φ`, and
//! `q_{a'}`, `p_{v'}` are measured on the two output arms.
//!
//! Conventions, fixed by requiring `(Θ - θ)|θ_φ⟩ = 0` on the Fock oracle:
//!
//! * `Z = q_{a'} + i p_{v'}` equals `√2 (a - v†)` at `T = 1/2`, so the raw
//!   outcome is `z = (q_{a'} + i p_{v'})/√2` and the rescaled outcome is
//!   `θ = √(1+Υ) z₁ + i √(1-Υ) z₂`;
//! * with `S(r) = exp{(r/2)(a² - a†²)}` one has `S†aS = cosh r a - sinh r a†`,
//!   so the eigenstate `D(β)S(r)|0⟩` needs `tanh r = Υ`, i.e.
//!   `r = log √(T/(1-T))`;
//! * the ancilla-traced construction uses the beam splitter at `-φ̃`,
//!   `φ̃ = φ - π/4`, followed by `D(z cos φ̃) ⊗ D(-z sin φ̃)` and a projection
//!   of `v` onto the vacuum.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, two_mode::TwoModeKet, CVector};
use crate::gaussian::{self, GaussianState, Quadrature};
use crate::povm::{self, Component, GendyneOutcome, HOMODYNE_EPSILON};

/// Squeezing values used by the finite-`s` pipeline.
pub const PIPELINE_SQUEEZING: [f64; 4] = [2.0, 4.0, 8.0, 12.0];

/// Above this `s` the pipeline loses about `cosh(2s)·ε` to rounding and is
/// reported but not used for extrapolation.
const PIPELINE_ROUNDING_S: f64 = 10.0;

fn check_upsilon(upsilon: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&upsilon) {
        return Err(Error::Domain(format!("upsilon must lie in [-1, 1] (got {upsilon})")));
    }
    Ok(())
}

/// `T_Υ = (1 + Υ)/2`.
pub fn transmissivity_for(upsilon: f64) -> Result<f64> {
    check_upsilon(upsilon)?;
    Ok((1.0 + upsilon) / 2.0)
}

/// `φ_Υ` with `cos² φ_Υ = T_Υ`, in `[0, π/2]`.
pub fn beam_splitter_angle(upsilon: f64) -> Result<f64> {
    Ok(transmissivity_for(upsilon)?.sqrt().acos())
}

/// Displaced squeezed vacuum `D(β)S(r)|0⟩` selected by the raw outcome `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeEigenstate {
    pub beta: Complex64,
    pub r: f64,
    pub upsilon: f64,
    pub z: Complex64,
}

impl SchemeEigenstate {
    /// `θ = β + Υ β*`.
    pub fn theta(&self) -> Complex64 {
        self.beta + self.beta.conj() * self.upsilon
    }

    pub fn mean(&self) -> Vector2<f64> {
        Vector2::new(2.0 * self.beta.re, 2.0 * self.beta.im)
    }

    pub fn cov(&self) -> Matrix2<f64> {
        Matrix2::new((-2.0 * self.r).exp(), 0.0, 0.0, (2.0 * self.r).exp())
    }

    /// Fock amplitudes of `D(β)S(r)|0⟩`, built from the operators directly.
    pub fn ket(&self, dim: usize) -> Result<CVector> {
        let vac = fock::squeezed_vacuum_ket(self.r, dim);
        let tail = fock::squeezed_tail(self.r, dim);
        if tail > fock::UNITARY_TAIL_LIMIT {
            return Err(Error::Truncation {
                dim,
                tail,
                limit: fock::UNITARY_TAIL_LIMIT,
            });
        }
        Ok(fock::displacement(self.beta, dim)?.apply(&vac))
    }
}

/// `β = z₁/√(2T) + i z₂/√(2(1-T))`, `r = log √(T/(1-T))`.
pub fn eigenstate_params(z: Complex64, t: f64) -> Result<SchemeEigenstate> {
    if !(t > 0.0 && t < 1.0) {
        if t == 0.0 || t == 1.0 {
            return Err(Error::HomodyneLimit(2.0 * t - 1.0));
        }
        return Err(Error::Domain(format!("transmissivity must lie in (0, 1) (got {t})")));
    }
    Ok(SchemeEigenstate {
        beta: Complex64::new(z.re / (2.0 * t).sqrt(), z.im / (2.0 * (1.0 - t)).sqrt()),
        r: 0.5 * (t / (1.0 - t)).ln(),
        upsilon: 2.0 * t - 1.0,
        z,
    })
}

/// Raw outcome `z` for a rescaled outcome `θ` at `Υ`.
pub fn raw_outcome(theta: Complex64, upsilon: f64) -> Result<Complex64> {
    check_upsilon(upsilon)?;
    if 1.0 - upsilon.abs() < HOMODYNE_EPSILON {
        return Err(Error::HomodyneLimit(upsilon));
    }
    Ok(Complex64::new(theta.re / (1.0 + upsilon).sqrt(), theta.im / (1.0 - upsilon).sqrt()))
}

/// Infinite-squeezing limit of the conditioned ancilla-traced state:
/// `X_out = (√2 z₁/√T, √2 z₂/√(1-T))`, `σ_out = diag((1-T)/T, T/(1-T))`.
pub fn conditioned_output_limit(z: Complex64, t: f64) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    let e = eigenstate_params(z, t)?;
    Ok((e.mean(), e.cov()))
}

fn pipeline_angle(t: f64) -> f64 {
    t.sqrt().acos() - FRAC_PI_4
}

/// Finite-`s` construction: two-mode squeezed vacuum, beam splitter at `-φ̃`,
/// `D(z cos φ̃) ⊗ D(-z sin φ̃)`, then `v` projected onto the vacuum.
pub fn pipeline_state(z: Complex64, t: f64, s: f64) -> Result<GaussianState> {
    eigenstate_params(z, t)?;
    let pt = pipeline_angle(t);
    let state = gaussian::make_two_mode_squeezed(s);
    let state = gaussian::apply(&gaussian::beam_splitter(-pt), &state)?;
    let shift = gaussian::displacement(z * pt.cos()).direct_sum(&gaussian::displacement(-z * pt.sin()));
    let state = gaussian::apply(&shift, &state)?;
    gaussian::condition_on_vacuum_projection(&state, 1)
}

/// The same construction carried out on truncated two-mode Fock kets;
/// usable for small `s` only.
pub fn fock_pipeline_ket(z: Complex64, t: f64, s: f64, dim: usize) -> Result<CVector> {
    eigenstate_params(z, t)?;
    let pt = pipeline_angle(t);
    let psi = TwoModeKet::two_mode_squeezed(s, dim)?
        .beam_splitter(-pt)?
        .apply_first(&fock::displacement(z * pt.cos(), dim)?)
        .apply_second(&fock::displacement(-z * pt.sin(), dim)?);
    let ket = psi.project_second_on_vacuum();
    let norm = ket.norm();
    if !(norm > 0.0) {
        return Err(Error::Numerical("vacuum projection has zero norm".into()));
    }
    Ok(ket / Complex64::from(norm))
}

/// `|⟨a|b⟩|²` for normalised kets.
pub fn ket_overlap(a: &CVector, b: &CVector) -> f64 {
    let ip = a.dotc(b);
    ip.norm_sqr() / (a.norm_squared() * b.norm_squared())
}

/// One point of the finite-`s` convergence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelinePoint {
    pub s: f64,
    pub overlap: f64,
}

/// Overlaps of the three constructions of `|θ_φ⟩` with the POVM eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub upsilon: f64,
    pub theta: GendyneOutcome,
    /// `D(β)S(r)|0⟩` against the POVM eigenvector.
    pub direct: f64,
    pub pipeline: Vec<PipelinePoint>,
    /// `s → ∞` estimate of the pipeline overlap.
    pub extrapolated: f64,
}

impl CrossCheck {
    pub fn min_overlap(&self) -> f64 {
        self.direct.min(self.extrapolated)
    }
}

/// Extrapolates `1 - overlap`, modelled as `a + b e^{-κ s}`, to `s → ∞`
/// from the points below the rounding threshold.
fn extrapolate(points: &[PipelinePoint]) -> Result<f64> {
    let usable: Vec<&PipelinePoint> = points.iter().filter(|p| p.s <= PIPELINE_ROUNDING_S).collect();
    let curve = || {
        points
            .iter()
            .map(|p| format!("s={}: {:.3e}", p.s, 1.0 - p.overlap))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let [.., a, b, c] = usable.as_slice() else {
        return Err(Error::Numerical(format!("too few pipeline points ({})", curve())));
    };
    let (e0, e1, e2) = (1.0 - a.overlap, 1.0 - b.overlap, 1.0 - c.overlap);
    let (d0, d1) = (e0 - e1, e1 - e2);
    if d0.abs() < 1e-15 || d1.abs() < 1e-15 {
        return Ok(c.overlap);
    }
    // Geometric decay in s: the ratio over the second gap follows from the
    // first by the ratio of gap lengths.
    let rho = (d1 / d0).abs().powf((c.s - b.s) / (b.s - a.s));
    if !(d1 / d0 > 0.0 && rho < 1.0) {
        return Err(Error::Numerical(format!("pipeline not converging in s ({})", curve())));
    }
    let tail = d1 * rho / (1.0 - rho);
    Ok(1.0 - (e2 - tail))
}

/// Builds `|θ_φ⟩` as `D(β)S(r)|0⟩` and through the finite-`s` pipeline, and
/// compares both with the POVM eigenvector at `dim`.
pub fn scheme_povm_crosscheck(upsilon: f64, theta: GendyneOutcome, dim: usize) -> Result<CrossCheck> {
    let t = transmissivity_for(upsilon)?;
    let z = raw_outcome(theta.as_complex(), upsilon)?;
    let eig = eigenstate_params(z, t)?;
    let reference = povm::eigen_amplitudes(theta, upsilon, dim)?;
    let direct = ket_overlap(&eig.ket(dim)?, &reference);
    let mut pipeline = Vec::with_capacity(PIPELINE_SQUEEZING.len());
    for &s in &PIPELINE_SQUEEZING {
        let out = pipeline_state(z, t, s)?;
        let mean = [out.mean()[0], out.mean()[1]];
        let c = out.cov();
        // Rounding can leave det σ slightly off one at large s.
        let scale = (c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)]).sqrt();
        let cov = [[c[(0, 0)] / scale, c[(0, 1)] / scale], [c[(1, 0)] / scale, c[(1, 1)] / scale]];
        let ket = fock::gaussian_pure_ket(mean, cov, dim)?;
        pipeline.push(PipelinePoint {
            s,
            overlap: ket_overlap(&ket, &reference),
        });
    }
    let extrapolated = extrapolate(&pipeline)?;
    Ok(CrossCheck {
        upsilon,
        theta,
        direct,
        pipeline,
        extrapolated,
    })
}

/// Symplectic rows of `q_{a'}` and `p_{v'}` after the beam splitter.
pub fn measured_quadrature_rows(upsilon: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let bs = gaussian::beam_splitter(beam_splitter_angle(upsilon)?);
    let m = bs.matrix();
    Ok((m.row(0).transpose(), m.row(3).transpose()))
}

/// Samples the scheme: input ⊗ vacuum, beam splitter at `φ_Υ`, joint
/// homodyne of `q_{a'}` and `p_{v'}`, then `θ₁ = √((1+Υ)/2) q_{a'}` and
/// `θ₂ = √((1-Υ)/2) p_{v'}`.
pub fn scheme_outcome_sample<R: Rng + ?Sized>(input: &GaussianState, upsilon: f64, rng: &mut R) -> Result<GendyneOutcome> {
    if input.n_modes() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: input.n_modes(),
        });
    }
    let phi = beam_splitter_angle(upsilon)?;
    let joint = gaussian::apply(&gaussian::beam_splitter(phi), &input.tensor(&GaussianState::vacuum(1)))?;
    let x = gaussian::sample_joint(&joint, &[Quadrature::Q(0), Quadrature::P(1)], rng)?;
    let mut out = GendyneOutcome::new(((1.0 + upsilon) / 2.0).sqrt() * x[0], ((1.0 - upsilon) / 2.0).sqrt() * x[1]);
    if upsilon == 1.0 {
        out.degenerate = Some(Component::Theta2);
    } else if upsilon == -1.0 {
        out.degenerate = Some(Component::Theta1);
    }
    Ok(out)
}

/// Exact mean and covariance of the rescaled scheme outcomes for a Gaussian
/// input: mean `(T⟨q⟩, (1-T)⟨p⟩)`, covariance from `σ` and the vacuum port.
pub fn scheme_outcome_moments(input: &GaussianState, upsilon: f64) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    let t = transmissivity_for(upsilon)?;
    let (m, c) = (input.mean(), input.cov());
    let mean = Vector2::new(t * m[0], (1.0 - t) * m[1]);
    let cov = Matrix2::new(
        t * (t * c[(0, 0)] + 1.0 - t),
        t * (1.0 - t) * c[(0, 1)],
        t * (1.0 - t) * c[(1, 0)],
        (1.0 - t) * ((1.0 - t) * c[(1, 1)] + t),
    );
    Ok((mean, cov))
}

/// `⟨a + Υ a†⟩` from the input first moments.
pub fn theta_expectation(input: &GaussianState, upsilon: f64) -> Complex64 {
    let m = input.mean();
    Complex64::new((1.0 + upsilon) * m[0] / 2.0, (1.0 - upsilon) * m[1] / 2.0)
}

/// `S†aS` coefficients `(μ, ν)` with `S†aS = μ a + ν a†` for the squeezer
/// convention in use.
pub fn squeeze_coefficients(r: f64) -> (f64, f64) {
    (r.cosh(), -r.sinh())
}

/// Covariance of the pipeline output minus its `s → ∞` limit, max-norm.
pub fn pipeline_cov_error(t: f64, s: f64) -> Result<f64> {
    let out = pipeline_state(Complex64::new(0.0, 0.0), t, s)?;
    let (_, lim) = conditioned_output_limit(Complex64::new(0.0, 0.0), t)?;
    let lim = DMatrix::from_fn(2, 2, |i, j| lim[(i, j)]);
    Ok((out.cov() - lim).amax())
}
