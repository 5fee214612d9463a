//! Phase-space description of Gaussian states.
//!
//! Quadratures follow `q = a + a†`, `p = -i(a - a†)`, so `[q, p] = 2i` and the
//! vacuum covariance matrix is the identity. First moments are ordered
//! `(q₁, p₁, q₂, p₂, …)` and expressed in the same units. The covariance is the
//! symmetrised second moment `σ_jk = ⟨{ΔR_j, ΔR_k}⟩ / 2`, which makes the
//! uncertainty relation read `σ + iJ ⪰ 0` with `J` the block-diagonal
//! `[[0, 1], [-1, 0]]` form (half the commutator matrix).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const UNCERTAINTY_TOL: f64 = 1e-9;
const SYMPLECTIC_TOL: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e14;

/// Block-diagonal symplectic form for `n_modes` modes.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        j[(2 * k, 2 * k + 1)] = 1.0;
        j[(2 * k + 1, 2 * k)] = -1.0;
    }
    j
}

/// A quadrature of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    Q(usize),
    P(usize),
}

impl Quadrature {
    /// Position in the `(q₁, p₁, q₂, p₂, …)` ordering.
    pub fn index(self) -> usize {
        match self {
            Quadrature::Q(m) => 2 * m,
            Quadrature::P(m) => 2 * m + 1,
        }
    }
}

/// Mean vector and covariance matrix of an `n`-mode Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    n_modes: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    /// Builds a state after checking symmetry and the uncertainty relation.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "mean vector must have even, nonzero length (got {dim})"
            )));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Domain(format!(
                "covariance matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let state = Self {
            n_modes: dim / 2,
            mean,
            cov: (&cov + cov.transpose()) * 0.5,
        };
        let min_eig = state.uncertainty_min_eigenvalue();
        if min_eig < -UNCERTAINTY_TOL * scale {
            return Err(Error::Domain(format!(
                "covariance violates the uncertainty relation (min eigenvalue of σ + iJ = {min_eig:.3e})"
            )));
        }
        Ok(state)
    }

    /// Vacuum of `n_modes` modes.
    pub fn vacuum(n_modes: usize) -> Self {
        Self {
            n_modes,
            mean: DVector::zeros(2 * n_modes),
            cov: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    /// Coherent state `|α⟩`: identity covariance, mean `(2 Re α, 2 Im α)`.
    pub fn coherent(alpha: Complex64) -> Self {
        Self {
            n_modes: 1,
            mean: DVector::from_vec(vec![2.0 * alpha.re, 2.0 * alpha.im]),
            cov: DMatrix::identity(2, 2),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Smallest eigenvalue of the Hermitian matrix `σ + iJ`.
    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        let j = symplectic_form(self.n_modes);
        let h = DMatrix::from_fn(self.cov.nrows(), self.cov.ncols(), |r, c| {
            Complex64::new(self.cov[(r, c)], j[(r, c)])
        });
        SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Symplectic eigenvalues in ascending order; all equal one for pure states.
    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
        let root = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
        let m = &root * symplectic_form(self.n_modes) * &root;
        let mut nu2: Vec<f64> = SymmetricEigen::new(&m * m.transpose())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nu2.sort_by(|a, b| a.total_cmp(b));
        nu2.iter().step_by(2).map(|x| x.max(0.0).sqrt()).collect()
    }

    /// `det σ`; equals one for pure single-mode states.
    pub fn cov_determinant(&self) -> f64 {
        self.cov.determinant()
    }

    /// Tensor product `self ⊗ other`, with `self` occupying the first modes.
    pub fn tensor(&self, other: &GaussianState) -> GaussianState {
        let d1 = self.mean.len();
        let d2 = other.mean.len();
        let mut mean = DVector::zeros(d1 + d2);
        mean.rows_mut(0, d1).copy_from(&self.mean);
        mean.rows_mut(d1, d2).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(d1 + d2, d1 + d2);
        cov.view_mut((0, 0), (d1, d1)).copy_from(&self.cov);
        cov.view_mut((d1, d1), (d2, d2)).copy_from(&other.cov);
        GaussianState {
            n_modes: self.n_modes + other.n_modes,
            mean,
            cov,
        }
    }

    /// Marginal of a single mode.
    pub fn mode(&self, mode: usize) -> Result<GaussianState> {
        if mode >= self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes,
                got: mode + 1,
            });
        }
        let k = 2 * mode;
        Ok(GaussianState {
            n_modes: 1,
            mean: self.mean.rows(k, 2).into_owned(),
            cov: self.cov.view((k, k), (2, 2)).into_owned(),
        })
    }

    /// `⟨a⟩` of a mode.
    pub fn amplitude(&self, mode: usize) -> Complex64 {
        Complex64::new(self.mean[2 * mode], self.mean[2 * mode + 1]) * 0.5
    }
}

/// Thermal state with `n_photons` mean occupation: `σ = (2N + 1) I`.
pub fn make_thermal(n_photons: f64) -> Result<GaussianState> {
    if !(n_photons >= 0.0) || !n_photons.is_finite() {
        return Err(Error::Domain(format!(
            "thermal photon number must be finite and nonnegative (got {n_photons})"
        )));
    }
    Ok(GaussianState {
        n_modes: 1,
        mean: DVector::zeros(2),
        cov: DMatrix::identity(2, 2) * (2.0 * n_photons + 1.0),
    })
}

/// Two-mode squeezed vacuum `Σ tanhⁿ(s)/cosh(s) |n, n⟩`.
///
/// Diagonal blocks `cosh(2s) I`, off-diagonal blocks `sinh(2s) σ_z`.
pub fn make_two_mode_squeezed(s: f64) -> GaussianState {
    let (c, h) = ((2.0 * s).cosh(), (2.0 * s).sinh());
    let mut cov = DMatrix::identity(4, 4) * c;
    cov[(0, 2)] = h;
    cov[(2, 0)] = h;
    cov[(1, 3)] = -h;
    cov[(3, 1)] = -h;
    GaussianState {
        n_modes: 2,
        mean: DVector::zeros(4),
        cov,
    }
}

/// Two-mode squeezer whose action on the vacuum gives [`make_two_mode_squeezed`].
pub fn two_mode_squeezer(s: f64) -> SymplecticMap {
    let (c, h) = (s.cosh(), s.sinh());
    let mut m = DMatrix::identity(4, 4) * c;
    m[(0, 2)] = h;
    m[(2, 0)] = h;
    m[(1, 3)] = -h;
    m[(3, 1)] = -h;
    SymplecticMap {
        matrix: m,
        displacement: DVector::zeros(4),
    }
}

/// Affine phase-space map `r ↦ S r + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMap {
    matrix: DMatrix<f64>,
    displacement: DVector<f64>,
}

impl SymplecticMap {
    /// Checks `S J Sᵀ = J` before accepting the matrix.
    pub fn new(matrix: DMatrix<f64>, displacement: DVector<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        if matrix.ncols() != dim || !dim.is_multiple_of(2) || displacement.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: displacement.len(),
            });
        }
        let map = Self {
            matrix,
            displacement,
        };
        let err = map.symplectic_defect();
        if err > SYMPLECTIC_TOL * map.matrix.amax().powi(2).max(1.0) {
            return Err(Error::Domain(format!(
                "matrix is not symplectic (max |S J Sᵀ - J| = {err:.3e})"
            )));
        }
        Ok(map)
    }

    pub fn identity(n_modes: usize) -> Self {
        Self {
            matrix: DMatrix::identity(2 * n_modes, 2 * n_modes),
            displacement: DVector::zeros(2 * n_modes),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn displacement(&self) -> &DVector<f64> {
        &self.displacement
    }

    /// `max |S J Sᵀ - J|`.
    pub fn symplectic_defect(&self) -> f64 {
        let j = symplectic_form(self.n_modes());
        (&self.matrix * &j * self.matrix.transpose() - j).amax()
    }

    /// Map applied first `other`, then `self`.
    pub fn compose(&self, other: &SymplecticMap) -> Result<SymplecticMap> {
        if self.n_modes() != other.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                got: other.n_modes(),
            });
        }
        Ok(SymplecticMap {
            matrix: &self.matrix * &other.matrix,
            displacement: &self.matrix * &other.displacement + &self.displacement,
        })
    }

    /// `self ⊕ other` acting on disjoint mode sets.
    pub fn direct_sum(&self, other: &SymplecticMap) -> SymplecticMap {
        let d1 = self.matrix.nrows();
        let d2 = other.matrix.nrows();
        let mut matrix = DMatrix::zeros(d1 + d2, d1 + d2);
        matrix.view_mut((0, 0), (d1, d1)).copy_from(&self.matrix);
        matrix.view_mut((d1, d1), (d2, d2)).copy_from(&other.matrix);
        let mut displacement = DVector::zeros(d1 + d2);
        displacement.rows_mut(0, d1).copy_from(&self.displacement);
        displacement.rows_mut(d1, d2).copy_from(&other.displacement);
        SymplecticMap {
            matrix,
            displacement,
        }
    }
}

/// Beam splitter on two modes: `[[cos φ I, -sin φ I], [sin φ I, cos φ I]]`.
///
/// Transmissivity is `T = cos² φ`; the first output is `cos φ r_a - sin φ r_v`.
pub fn beam_splitter(phi: f64) -> SymplecticMap {
    let (s, c) = phi.sin_cos();
    let mut m = DMatrix::zeros(4, 4);
    for k in 0..2 {
        m[(k, k)] = c;
        m[(k, k + 2)] = -s;
        m[(k + 2, k)] = s;
        m[(k + 2, k + 2)] = c;
    }
    SymplecticMap {
        matrix: m,
        displacement: DVector::zeros(4),
    }
}

/// Phase rotation `e^{-iφ a†a}`: `a ↦ a e^{-iφ}`.
pub fn phase_rotation(phi: f64) -> SymplecticMap {
    let (s, c) = phi.sin_cos();
    SymplecticMap {
        matrix: DMatrix::from_row_slice(2, 2, &[c, s, -s, c]),
        displacement: DVector::zeros(2),
    }
}

/// Displacement `D(z)` of one mode: shifts the mean by `(2 Re z, 2 Im z)`.
pub fn displacement(z: Complex64) -> SymplecticMap {
    SymplecticMap {
        matrix: DMatrix::identity(2, 2),
        displacement: DVector::from_vec(vec![2.0 * z.re, 2.0 * z.im]),
    }
}

/// Single-mode squeezer `S(r) = exp{(r/2)(a² - a†²)}`: `q ↦ e^{-r} q`, `p ↦ e^{r} p`.
pub fn squeezer(r: f64) -> SymplecticMap {
    SymplecticMap {
        matrix: DMatrix::from_diagonal(&DVector::from_vec(vec![(-r).exp(), r.exp()])),
        displacement: DVector::zeros(2),
    }
}

/// Applies `r ↦ S r + d`: `mean ↦ S·mean + d`, `cov ↦ S·cov·Sᵀ`.
pub fn apply(map: &SymplecticMap, state: &GaussianState) -> Result<GaussianState> {
    if map.n_modes() != state.n_modes {
        return Err(Error::DimensionMismatch {
            expected: map.n_modes(),
            got: state.n_modes,
        });
    }
    let cov = &map.matrix * &state.cov * map.matrix.transpose();
    Ok(GaussianState {
        n_modes: state.n_modes,
        mean: &map.matrix * &state.mean + &map.displacement,
        cov: (&cov + cov.transpose()) * 0.5,
    })
}

/// Projects one mode of a two-mode state onto the vacuum and returns the
/// remaining mode (Schur complement against `B + I`).
pub fn condition_on_vacuum_projection(
    state: &GaussianState,
    projected_mode: usize,
) -> Result<GaussianState> {
    if state.n_modes != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: state.n_modes,
        });
    }
    if projected_mode > 1 {
        return Err(Error::Domain(format!(
            "projected mode must be 0 or 1 (got {projected_mode})"
        )));
    }
    let (kept, proj) = if projected_mode == 1 { (0, 2) } else { (2, 0) };
    let a = state.cov.view((kept, kept), (2, 2)).into_owned();
    let b = state.cov.view((proj, proj), (2, 2)).into_owned();
    let c = state.cov.view((kept, proj), (2, 2)).into_owned();
    let xa = state.mean.rows(kept, 2).into_owned();
    let xv = state.mean.rows(proj, 2).into_owned();

    let b_plus = b + DMatrix::identity(2, 2);
    let eig = SymmetricEigen::new(b_plus.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x.abs()), hi.max(x.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::Singular {
            condition,
            context: "B + I in vacuum conditioning".into(),
        });
    }
    let inv = b_plus.try_inverse().ok_or_else(|| Error::Singular {
        condition,
        context: "B + I in vacuum conditioning".into(),
    })?;
    let gain = &c * inv;
    let mean = xa - &gain * xv;
    let cov = a - &gain * c.transpose();
    Ok(GaussianState {
        n_modes: 1,
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
    })
}

/// Draws one sample of a quadrature's marginal distribution.
pub fn sample_gaussian_outcome<R: Rng + ?Sized>(
    state: &GaussianState,
    which: Quadrature,
    rng: &mut R,
) -> f64 {
    let k = which.index();
    let z: f64 = rng.sample(StandardNormal);
    state.mean[k] + state.cov[(k, k)].max(0.0).sqrt() * z
}

/// Draws a joint sample of mutually commuting quadratures.
pub fn sample_joint<R: Rng + ?Sized>(
    state: &GaussianState,
    which: &[Quadrature],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let j = symplectic_form(state.n_modes);
    for (i, x) in which.iter().enumerate() {
        if x.index() >= state.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: state.n_modes,
                got: x.index() / 2 + 1,
            });
        }
        for y in &which[i + 1..] {
            if j[(x.index(), y.index())] != 0.0 {
                return Err(Error::Domain(format!(
                    "{x:?} and {y:?} do not commute"
                )));
            }
        }
    }
    let idx: Vec<usize> = which.iter().map(|q| q.index()).collect();
    let n = idx.len();
    let sub = DMatrix::from_fn(n, n, |r, c| state.cov[(idx[r], idx[c])]);
    let chol = sub.cholesky().ok_or_else(|| {
        Error::Numerical("quadrature covariance is not positive definite".into())
    })?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = chol.l() * z;
    Ok(idx.iter().zip(x.iter()).map(|(&k, &d)| state.mean[k] + d).collect())
}
