//! Dense matrices on a truncated Fock space.
//!
//! This is the brute-force reference used to check the analytic and Gaussian
//! routes. Truncation is guarded: constructors that know the exact state
//! compute the weight that falls outside the truncated space and refuse when
//! it is too large.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tail weight allowed for thermal states.
pub const THERMAL_TAIL_LIMIT: f64 = 1e-10;
/// Tail weight allowed for displaced and squeezed vacua.
pub const UNITARY_TAIL_LIMIT: f64 = 1e-8;
/// Largest dimension allowed by policy.
pub const MAX_DIM: usize = 200;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::Domain(format!("Fock dimension must be at least 2 (got {dim})")));
    }
    if dim > MAX_DIM {
        return Err(Error::Domain(format!(
            "Fock dimension {dim} exceeds the policy limit {MAX_DIM}"
        )));
    }
    Ok(())
}

/// Operator on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    matrix: CMatrix,
}

impl FockOperator {
    pub fn from_matrix(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn apply(&self, ket: &CVector) -> CVector {
        &self.matrix * ket
    }

    /// `max |U†U - I|` restricted to the leading `guard` levels.
    pub fn unitarity_defect(&self, guard: usize) -> f64 {
        let g = guard.min(self.dim());
        let prod = self.matrix.adjoint() * &self.matrix;
        let mut worst = 0.0f64;
        for r in 0..g {
            for c in 0..g {
                let target = if r == c { ONE } else { ZERO };
                worst = worst.max((prod[(r, c)] - target).norm());
            }
        }
        worst
    }
}

impl std::ops::Mul for &FockOperator {
    type Output = FockOperator;
    fn mul(self, rhs: &FockOperator) -> FockOperator {
        FockOperator {
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

impl std::ops::Add for &FockOperator {
    type Output = FockOperator;
    fn add(self, rhs: &FockOperator) -> FockOperator {
        FockOperator {
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl std::ops::Sub for &FockOperator {
    type Output = FockOperator;
    fn sub(self, rhs: &FockOperator) -> FockOperator {
        FockOperator {
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl std::ops::Mul<Complex64> for &FockOperator {
    type Output = FockOperator;
    fn mul(self, rhs: Complex64) -> FockOperator {
        FockOperator {
            matrix: &self.matrix * rhs,
        }
    }
}

/// Density matrix on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensity {
    matrix: CMatrix,
}

impl FockDensity {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let herm = (&matrix - matrix.adjoint()).camax();
        if herm > 1e-12 {
            return Err(Error::Domain(format!(
                "density matrix is not Hermitian (defect {herm:.3e})"
            )));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::Domain(format!("density matrix trace is {tr}, expected 1")));
        }
        let rho = Self { matrix };
        let min_eig = rho.min_eigenvalue();
        if min_eig < -1e-9 {
            return Err(Error::Domain(format!(
                "density matrix has negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(rho)
    }

    /// Wraps a matrix without validation; used inside integrators.
    pub fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn from_ket(ket: &CVector) -> Self {
        let norm2 = ket.norm_squared();
        Self {
            matrix: ket * ket.adjoint() / Complex64::from(norm2),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(&self.matrix))
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Population of the top `levels` Fock levels, a truncation-error estimate.
    pub fn edge_population(&self, levels: usize) -> f64 {
        let d = self.dim();
        (d.saturating_sub(levels)..d).map(|n| self.matrix[(n, n)].re).sum()
    }

    /// Embeds into a larger space (zero padding) or crops to a smaller one.
    pub fn resized(&self, dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        let k = dim.min(self.dim());
        m.view_mut((0, 0), (k, k))
            .copy_from(&self.matrix.view((0, 0), (k, k)));
        Self { matrix: m }
    }
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::from(0.5)
}

fn ladder(dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = Complex64::from((n as f64).sqrt());
    }
    m
}

/// Ladder operator with `a_{n-1,n} = √n`.
pub fn annihilation(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    Ok(FockOperator { matrix: ladder(dim) })
}

pub fn creation(dim: usize) -> Result<FockOperator> {
    Ok(annihilation(dim)?.adjoint())
}

/// `a†a`.
pub fn number(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    Ok(FockOperator {
        matrix: CMatrix::from_diagonal(&CVector::from_fn(dim, |n, _| Complex64::from(n as f64))),
    })
}

/// `q = a + a†`.
pub fn position(dim: usize) -> Result<FockOperator> {
    let a = annihilation(dim)?;
    Ok(&a + &a.adjoint())
}

/// `p = -i(a - a†)`.
pub fn momentum(dim: usize) -> Result<FockOperator> {
    let a = annihilation(dim)?;
    Ok(&(&a - &a.adjoint()) * (-I))
}

/// Fock basis vector `|n⟩`.
pub fn fock_ket(n: usize, dim: usize) -> Result<CVector> {
    if n >= dim {
        return Err(Error::Truncation {
            dim,
            tail: 1.0,
            limit: 0.0,
        });
    }
    let mut v = CVector::zeros(dim);
    v[n] = ONE;
    Ok(v)
}

/// Thermal state `pₙ = Nⁿ/(N+1)ⁿ⁺¹`, guarded at [`THERMAL_TAIL_LIMIT`].
pub fn thermal_density(n_photons: f64, dim: usize) -> Result<FockDensity> {
    thermal_density_with_limit(n_photons, dim, THERMAL_TAIL_LIMIT)
}

/// Thermal state with an explicit tail-weight guard; renormalised on the truncated space.
pub fn thermal_density_with_limit(n_photons: f64, dim: usize, limit: f64) -> Result<FockDensity> {
    check_dim(dim)?;
    if !(n_photons >= 0.0) || !n_photons.is_finite() {
        return Err(Error::Domain(format!(
            "thermal photon number must be finite and nonnegative (got {n_photons})"
        )));
    }
    let x = n_photons / (n_photons + 1.0);
    let tail = x.powi(dim as i32);
    if tail > limit {
        return Err(Error::Truncation { dim, tail, limit });
    }
    let mut p: Vec<f64> = (0..dim).map(|n| x.powi(n as i32) / (n_photons + 1.0)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(FockDensity {
        matrix: CMatrix::from_diagonal(&CVector::from_iterator(dim, p.into_iter().map(Complex64::from))),
    })
}

/// Exact coherent amplitudes `e^{-|α|²/2} αⁿ/√n!`, truncated (not renormalised).
pub fn coherent_ket(alpha: Complex64, dim: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    let mut amp = Complex64::from((-alpha.norm_sqr() / 2.0).exp());
    for n in 0..dim {
        v[n] = amp;
        amp *= alpha / ((n + 1) as f64).sqrt();
    }
    v
}

/// Weight of the coherent state `|z⟩` outside the first `dim` levels.
pub fn coherent_tail(z: Complex64, dim: usize) -> f64 {
    (1.0 - coherent_ket(z, dim).norm_squared()).max(0.0)
}

/// Exact amplitudes of `S(r)|0⟩` for `S(r) = exp{(r/2)(a² - a†²)}`, truncated.
pub fn squeezed_vacuum_ket(r: f64, dim: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    let t = -r.tanh();
    let mut amp = 1.0 / r.cosh().sqrt();
    let mut m = 0usize;
    while 2 * m < dim {
        v[2 * m] = Complex64::from(amp);
        // c_{m+1}/c_m = t · √((2m+1)(2m+2)) / (2(m+1))
        amp *= t * (((2 * m + 1) * (2 * m + 2)) as f64).sqrt() / (2.0 * (m + 1) as f64);
        m += 1;
    }
    v
}

/// Weight of `S(r)|0⟩` outside the first `dim` levels.
pub fn squeezed_tail(r: f64, dim: usize) -> f64 {
    (1.0 - squeezed_vacuum_ket(r, dim).norm_squared()).max(0.0)
}

/// Levels added above `dim` before exponentiating, so that the boundary of the
/// truncated generator does not reflect back into the retained block.
fn padding(dim: usize) -> usize {
    (dim / 2).max(24)
}

/// `exp(build(a))` on a padded space, cropped to `dim × dim`.
fn padded_expm(dim: usize, build: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let big = dim + padding(dim);
    let full = build(&ladder(big)).exp();
    full.view((0, 0), (dim, dim)).into_owned()
}

/// `D(z) = exp{z a† - z* a}`.
///
/// The exponential of the truncated generator is taken on a padded space and
/// cropped, which keeps the retained block accurate to the guarded tail.
pub fn displacement(z: Complex64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let tail = coherent_tail(z, dim);
    if tail > UNITARY_TAIL_LIMIT {
        return Err(Error::Truncation {
            dim,
            tail,
            limit: UNITARY_TAIL_LIMIT,
        });
    }
    let matrix = padded_expm(dim, |a| a.adjoint() * z - a * z.conj());
    Ok(FockOperator { matrix })
}

/// `S(r) = exp{(r/2)(a² - a†²)}`; squeezes `q` by `e^{-r}` for `r > 0`.
pub fn squeeze(r: f64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let tail = squeezed_tail(r, dim);
    if tail > UNITARY_TAIL_LIMIT {
        return Err(Error::Truncation {
            dim,
            tail,
            limit: UNITARY_TAIL_LIMIT,
        });
    }
    let matrix = padded_expm(dim, |a| {
        let a2 = a * a;
        (&a2 - a2.adjoint()) * Complex64::from(r / 2.0)
    });
    Ok(FockOperator { matrix })
}

/// `e^{-iφ a†a}`: `a ↦ a e^{-iφ}`.
pub fn rotation(phi: f64, dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    Ok(FockOperator {
        matrix: CMatrix::from_diagonal(&CVector::from_fn(dim, |n, _| {
            Complex64::from_polar(1.0, -phi * n as f64)
        })),
    })
}

/// Pure single-mode Gaussian ket with the given `(q, p)` mean and covariance,
/// built as `D(β) e^{-iϑ a†a} S(r)|0⟩`.
pub fn gaussian_pure_ket(mean: [f64; 2], cov: [[f64; 2]; 2], dim: usize) -> Result<CVector> {
    let m = nalgebra::Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
    let det = m.determinant();
    if (det - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "covariance does not describe a pure state (det = {det})"
        )));
    }
    let eig = m.symmetric_eigen();
    let k = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
    let lambda = eig.eigenvalues[k];
    let u = eig.eigenvectors.column(k);
    let r = -0.5 * lambda.ln();
    let theta = (-u[1]).atan2(u[0]);
    let beta = Complex64::new(mean[0] / 2.0, mean[1] / 2.0);
    let vac = squeezed_vacuum_ket(r, dim);
    let tail = 1.0 - vac.norm_squared();
    if tail > UNITARY_TAIL_LIMIT {
        return Err(Error::Truncation {
            dim,
            tail,
            limit: UNITARY_TAIL_LIMIT,
        });
    }
    let rotated = rotation(theta, dim)?.apply(&vac);
    Ok(displacement(beta, dim)?.apply(&rotated))
}

/// Single-mode Gaussian density `D(β) R(ϑ) S(r) ρ_th(n) S†R†D†` matching the
/// given `(q, p)` mean and covariance (`n = (√det σ - 1)/2`).
pub fn gaussian_density(mean: [f64; 2], cov: [[f64; 2]; 2], dim: usize) -> Result<FockDensity> {
    let m = nalgebra::Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
    let det = m.determinant();
    if !(det >= 1.0 - 1e-9) || m[(0, 0)] <= 0.0 {
        return Err(Error::Domain(format!(
            "covariance violates the uncertainty principle (det = {det})"
        )));
    }
    let nu = det.max(1.0).sqrt();
    let pure = m / nu;
    let eig = pure.symmetric_eigen();
    let k = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
    let u = eig.eigenvectors.column(k);
    let r = -0.5 * eig.eigenvalues[k].ln();
    let theta = (-u[1]).atan2(u[0]);
    let beta = Complex64::new(mean[0] / 2.0, mean[1] / 2.0);
    let unitary = &(&displacement(beta, dim)? * &rotation(theta, dim)?) * &squeeze(r, dim)?;
    let thermal = thermal_density((nu - 1.0) / 2.0, dim)?;
    let rho = unitary.matrix() * thermal.matrix() * unitary.matrix().adjoint();
    let tail = (1.0 - rho.trace().re).abs();
    if tail > UNITARY_TAIL_LIMIT {
        return Err(Error::Truncation {
            dim,
            tail,
            limit: UNITARY_TAIL_LIMIT,
        });
    }
    let tr = rho.trace();
    Ok(FockDensity {
        matrix: hermitian_part(&(rho / tr)),
    })
}

/// `⟨α|ρ|α⟩ / π`.
pub fn husimi_q(rho: &FockDensity, alpha: Complex64) -> f64 {
    let v = coherent_ket(alpha, rho.dim());
    let val = (v.adjoint() * &rho.matrix * &v)[(0, 0)];
    val.re / std::f64::consts::PI
}

/// `Tr(ρ O)`.
pub fn expectation(rho: &FockDensity, op: &FockOperator) -> Result<Complex64> {
    if rho.dim() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: op.dim(),
        });
    }
    Ok((&rho.matrix * &op.matrix).trace())
}

fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let d = CMatrix::from_diagonal(&eig.eigenvalues.map(|x| Complex64::from(x.max(0.0).sqrt())));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &FockDensity, sigma: &FockDensity) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: sigma.dim(),
        });
    }
    let root = psd_sqrt(&rho.matrix);
    let inner = &root * &sigma.matrix * &root;
    let s: f64 = SymmetricEigen::new(hermitian_part(&inner))
        .eigenvalues
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .sum();
    Ok(s * s)
}

/// `½ ‖ρ - σ‖₁`.
pub fn trace_distance(rho: &FockDensity, sigma: &FockDensity) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: sigma.dim(),
        });
    }
    let diff = &rho.matrix - &sigma.matrix;
    Ok(0.5
        * SymmetricEigen::new(hermitian_part(&diff))
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .sum::<f64>())
}

/// `(⟨q⟩, ⟨p⟩, Var q, Var p, Cov(q, p))` with the symmetrised covariance.
pub fn quadrature_moments(rho: &FockDensity) -> [f64; 5] {
    let d = rho.dim();
    let q = position(d).expect("dim already validated");
    let p = momentum(d).expect("dim already validated");
    let ev = |op: &CMatrix| (&rho.matrix * op).trace().re;
    let (qm, pm) = (q.matrix(), p.matrix());
    let mq = ev(qm);
    let mp = ev(pm);
    let qq = ev(&(qm * qm));
    let pp = ev(&(pm * pm));
    let qp = ev(&((qm * pm + pm * qm) * Complex64::from(0.5)));
    [mq, mp, qq - mq * mq, pp - mp * mp, qp - mq * mp]
}

/// Two-mode pure states stored as coefficient matrices `Ψ[n_a, n_v]`.
pub mod two_mode {
    use super::*;

    /// `|ψ⟩ = Σ Ψ[n_a, n_v] |n_a⟩|n_v⟩`.
    #[derive(Debug, Clone, PartialEq)]
    pub struct TwoModeKet {
        coeffs: CMatrix,
    }

    impl TwoModeKet {
        pub fn from_coeffs(coeffs: CMatrix) -> Self {
            Self { coeffs }
        }

        pub fn coeffs(&self) -> &CMatrix {
            &self.coeffs
        }

        pub fn dim(&self) -> usize {
            self.coeffs.nrows()
        }

        pub fn norm_squared(&self) -> f64 {
            self.coeffs.norm_squared()
        }

        /// `Σ tanhⁿ(s)/cosh(s) |n, n⟩`, truncated.
        pub fn two_mode_squeezed(s: f64, dim: usize) -> Result<Self> {
            check_dim(dim)?;
            let t = s.tanh();
            let tail = t.powi(2 * dim as i32);
            if tail > UNITARY_TAIL_LIMIT {
                return Err(Error::Truncation {
                    dim,
                    tail,
                    limit: UNITARY_TAIL_LIMIT,
                });
            }
            let mut c = CMatrix::zeros(dim, dim);
            for n in 0..dim {
                c[(n, n)] = Complex64::from(t.powi(n as i32) / s.cosh());
            }
            Ok(Self { coeffs: c })
        }

        /// `A ⊗ 1`.
        pub fn apply_first(&self, op: &FockOperator) -> Self {
            Self {
                coeffs: op.matrix() * &self.coeffs,
            }
        }

        /// `1 ⊗ B`.
        pub fn apply_second(&self, op: &FockOperator) -> Self {
            Self {
                coeffs: &self.coeffs * op.matrix().transpose(),
            }
        }

        /// The two-mode unitary whose phase-space action is
        /// [`crate::gaussian::beam_splitter`]: `exp{φ(a v† - a† v)}`.
        pub fn beam_splitter(&self, phi: f64) -> Result<Self> {
            let d = self.dim();
            let a = annihilation(d)?.into_matrix();
            let ad = a.adjoint();
            let at = a.transpose();
            let adt = ad.transpose();
            // G Ψ = a Ψ (a†)ᵀ - a† Ψ aᵀ
            let gen = |psi: &CMatrix| &a * psi * &adt - &ad * psi * &at;
            let steps = ((phi.abs() * d as f64).ceil() as usize).max(1);
            let h = phi / steps as f64;
            let mut psi = self.coeffs.clone();
            for _ in 0..steps {
                let mut term = psi.clone();
                let mut acc = psi.clone();
                for k in 1..=60 {
                    term = gen(&term) * Complex64::from(h / k as f64);
                    acc += &term;
                    if term.camax() < 1e-18 {
                        break;
                    }
                }
                psi = acc;
            }
            Ok(Self { coeffs: psi })
        }

        /// `⟨0|_v ψ⟩`, unnormalised.
        pub fn project_second_on_vacuum(&self) -> CVector {
            self.coeffs.column(0).into_owned()
        }
    }
}
