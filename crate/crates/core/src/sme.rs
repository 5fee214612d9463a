//! Unconditional and conditional dynamics of a mode damped by a thermal bath
//! (damping rate fixed to 1) and monitored by general-dyne detection.
//!
//! Two engines integrate the same stochastic master equation:
//!
//! * the Fock engine steps the truncated density matrix with Euler–Maruyama,
//!   using banded ladder-operator products so a step costs `O(D²)`;
//! * the Gaussian engine steps first moments and covariance. With
//!   `Δ = σ - (2N+1)I`, `κ₁ = (1+Υ)/(2√L₁)`, `κ₂ = (1-Υ)/(2√L₂)` and gains
//!   `g₁ = κ₁ Δ e_q`, `g₂ = κ₂ Δ e_p`:
//!
//!   ```text
//!   dm = -m/2 dt + g₁ dw₁ + g₂ dw₂
//!   dσ = -Δ dt - (g₁g₁ᵀ + g₂g₂ᵀ) dt
//!   ```
//!
//!   so `σ = (2N+1)I` is a fixed point for every `Υ`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, CMatrix, FockDensity};
use crate::povm::Unravelling;

/// Largest step accepted without an explicit override.
pub const DEFAULT_MAX_DT: f64 = 1e-2;
/// Single-step trace drift that signals a step size problem.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-3;
/// Most negative eigenvalue tolerated in a conditional state.
pub const POSITIVITY_LIMIT: f64 = -1e-6;

const ENSEMBLE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Fock,
    Gaussian,
    Both,
}

/// Time stepper of the Fock engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepper {
    /// Euler–Maruyama on `ρ`, then Hermitisation and renormalisation.
    #[default]
    Euler,
    /// Kraus-form step `MρM† + dt Σ JρJ†` with second-order Itô terms in `M`:
    /// positivity preserving and strong order one for this noise.
    Kraus,
    /// Milstein on the normalised equation. The linear noise fields commute
    /// (`[B₁, B₂]` is an imaginary multiple of the identity), so no Lévy
    /// areas are needed for strong order one.
    Milstein,
}

impl Engine {
    pub fn runs_fock(self) -> bool {
        matches!(self, Engine::Fock | Engine::Both)
    }

    pub fn runs_gaussian(self) -> bool {
        matches!(self, Engine::Gaussian | Engine::Both)
    }
}

/// Parameters of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmeConfig {
    pub unravelling: Unravelling,
    pub dt: f64,
    pub n_steps: usize,
    pub dim: usize,
    pub seed: u64,
    pub engine: Engine,
    /// Fock engine: steps between eigenvalue checks (0 disables them).
    pub positivity_check_every: usize,
    #[serde(default)]
    pub stepper: Stepper,
    /// Fock engine: substeps per record step. Sub-increments are drawn from a
    /// Brownian bridge pinned to the record-level increments, so the engines
    /// still share the same noise.
    #[serde(default = "one")]
    pub fock_substeps: usize,
}

fn one() -> usize {
    1
}

impl SmeConfig {
    pub fn new(unravelling: Unravelling, dt: f64, n_steps: usize, dim: usize, seed: u64, engine: Engine) -> Result<Self> {
        let cfg = Self {
            unravelling,
            dt,
            n_steps,
            dim,
            seed,
            engine,
            positivity_check_every: 100,
            stepper: Stepper::Euler,
            fock_substeps: 1,
        };
        cfg.validate(DEFAULT_MAX_DT)?;
        Ok(cfg)
    }

    /// Checks `0 < dt ≤ max_dt` and the Fock dimension range.
    pub fn validate(&self, max_dt: f64) -> Result<()> {
        if !(self.dt > 0.0) || self.dt > max_dt {
            return Err(Error::Domain(format!("dt must lie in (0, {max_dt}] (got {})", self.dt)));
        }
        if self.fock_substeps == 0 {
            return Err(Error::Domain("fock_substeps must be at least 1".into()));
        }
        if self.engine.runs_fock() && !(2..=fock::MAX_DIM).contains(&self.dim) {
            return Err(Error::Domain(format!(
                "Fock dimension must lie in [2, {}] (got {})",
                fock::MAX_DIM,
                self.dim
            )));
        }
        Ok(())
    }

    /// Builds a config from a final time, rounding to the nearest whole step.
    pub fn with_t_final(unravelling: Unravelling, dt: f64, t_final: f64, dim: usize, seed: u64, engine: Engine) -> Result<Self> {
        if !(t_final >= 0.0) || !t_final.is_finite() {
            return Err(Error::Domain(format!("t_final must be finite and nonnegative (got {t_final})")));
        }
        Self::new(unravelling, dt, (t_final / dt).round() as usize, dim, seed, engine)
    }

    pub fn t_final(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    fn weights(&self) -> NoiseWeights {
        NoiseWeights::new(&self.unravelling)
    }
}

/// Per-channel coefficients `(1±Υ)/(2√L)` and record scales; a channel with
/// vanishing weight is switched off.
#[derive(Debug, Clone, Copy)]
struct NoiseWeights {
    k1: Option<f64>,
    k2: Option<f64>,
    sqrt_l1: f64,
    sqrt_l2: f64,
    half_plus: f64,
    half_minus: f64,
}

impl NoiseWeights {
    fn new(u: &Unravelling) -> Self {
        let (l1, l2) = (u.l1(), u.l2());
        let half_plus = (1.0 + u.upsilon()) / 2.0;
        let half_minus = (1.0 - u.upsilon()) / 2.0;
        Self {
            k1: (half_plus > 0.0).then(|| half_plus / l1.sqrt()),
            k2: (half_minus > 0.0).then(|| half_minus / l2.sqrt()),
            sqrt_l1: l1.sqrt(),
            sqrt_l2: l2.sqrt(),
            half_plus,
            half_minus,
        }
    }

    fn records(&self, mean_q: f64, mean_p: f64, dw: Increments, dt: f64) -> (Option<f64>, Option<f64>) {
        let sdt = dt.sqrt();
        let t1 = self.k1.map(|_| (self.half_plus * mean_q * dt + self.sqrt_l1 * dw.dw1) / sdt);
        let t2 = self.k2.map(|_| (self.half_minus * mean_p * dt + self.sqrt_l2 * dw.dw2) / sdt);
        (t1, t2)
    }
}

/// Wiener increments of one step, each with variance `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Increments {
    pub dw1: f64,
    pub dw2: f64,
}

impl Increments {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, dt: f64) -> Self {
        let s = dt.sqrt();
        let dw1: f64 = rng.sample(StandardNormal);
        let dw2: f64 = rng.sample(StandardNormal);
        Self { dw1: s * dw1, dw2: s * dw2 }
    }
}

/// RNG stream for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Separate stream for Brownian-bridge refinement, so substepping never
/// perturbs the record-level increments.
fn bridge_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(index);
    rng
}

/// Splits `total` over `n` equal substeps of length `h` by sampling the
/// Brownian bridge.
pub fn bridge_increments<R: Rng + ?Sized>(total: Increments, n: usize, h: f64, rng: &mut R) -> Vec<Increments> {
    let mut rem = total;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i + 1 == n {
            out.push(rem);
            break;
        }
        let tau = (n - i) as f64 * h;
        let frac = h / tau;
        let sd = (h * (tau - h) / tau).sqrt();
        let (x1, x2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let sub = Increments {
            dw1: rem.dw1 * frac + sd * x1,
            dw2: rem.dw2 * frac + sd * x2,
        };
        rem.dw1 -= sub.dw1;
        rem.dw2 -= sub.dw2;
        out.push(sub);
    }
    out
}

/// `(⟨q⟩, ⟨p⟩, Var q, Var p, Cov(q, p))` and `⟨n⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub mean_q: f64,
    pub mean_p: f64,
    pub var_q: f64,
    pub var_p: f64,
    pub cov_qp: f64,
    pub n: f64,
}

impl Moments {
    fn from_gaussian(m: &Vector2<f64>, s: &Matrix2<f64>) -> Self {
        Self {
            mean_q: m[0],
            mean_p: m[1],
            var_q: s[(0, 0)],
            var_p: s[(1, 1)],
            cov_qp: s[(0, 1)],
            n: (s[(0, 0)] + s[(1, 1)] + m[0] * m[0] + m[1] * m[1] - 2.0) / 4.0,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.mean_q, self.mean_p, self.var_q, self.var_p, self.cov_qp, self.n]
    }
}

/// One output row: the step that ends at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dw1: f64,
    pub dw2: f64,
    /// `None` when the channel is degenerate (`Υ = ±1`).
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub moments: Moments,
    /// `|Tr ρ - 1|` before renormalisation (zero for the Gaussian engine).
    pub trace_err: f64,
}

/// A complete conditional trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub engine: Engine,
    pub initial: Moments,
    pub rows: Vec<StepRecord>,
    /// Fock engine: `(step, state)` pairs at requested checkpoints.
    pub snapshots: Vec<(usize, FockDensity)>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }
}

/// Initial condition understood by both engines where possible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialState {
    Thermal { n: f64 },
    Coherent { re: f64, im: f64 },
    Gaussian { mean: [f64; 2], cov: [[f64; 2]; 2] },
    Fock { n: usize },
}

impl InitialState {
    pub fn density(&self, dim: usize) -> Result<FockDensity> {
        match *self {
            InitialState::Thermal { n } => fock::thermal_density(n, dim),
            InitialState::Coherent { re, im } => {
                let z = Complex64::new(re, im);
                let tail = fock::coherent_tail(z, dim);
                if tail > fock::UNITARY_TAIL_LIMIT {
                    return Err(Error::Truncation {
                        dim,
                        tail,
                        limit: fock::UNITARY_TAIL_LIMIT,
                    });
                }
                let ket = fock::coherent_ket(z, dim);
                Ok(FockDensity::from_ket(&(&ket / Complex64::from(ket.norm()))))
            }
            InitialState::Gaussian { mean, cov } => fock::gaussian_density(mean, cov, dim),
            InitialState::Fock { n } => Ok(FockDensity::from_ket(&fock::fock_ket(n, dim)?)),
        }
    }

    pub fn gaussian_moments(&self) -> Result<(Vector2<f64>, Matrix2<f64>)> {
        match *self {
            InitialState::Thermal { n } => {
                if !(n >= 0.0) {
                    return Err(Error::Domain(format!("thermal photon number must be nonnegative (got {n})")));
                }
                Ok((Vector2::zeros(), Matrix2::identity() * (2.0 * n + 1.0)))
            }
            InitialState::Coherent { re, im } => Ok((Vector2::new(2.0 * re, 2.0 * im), Matrix2::identity())),
            InitialState::Gaussian { mean, cov } => {
                let s = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
                check_gaussian_cov(&s, 0)?;
                Ok((Vector2::new(mean[0], mean[1]), s))
            }
            InitialState::Fock { .. } => Err(Error::Domain(
                "Fock-state initial conditions are not Gaussian; use the fock engine".into(),
            )),
        }
    }
}

fn check_gaussian_cov(s: &Matrix2<f64>, step: usize) -> Result<()> {
    let ok = s[(0, 0)] > 0.0
        && s[(1, 1)] > 0.0
        && (s[(0, 1)] - s[(1, 0)]).abs() <= 1e-12 * s.amax()
        && s.determinant() >= 1.0 - 1e-9;
    if ok {
        Ok(())
    } else {
        Err(Error::Integration {
            step,
            reason: format!("covariance left the physical set (det = {})", s.determinant()),
        })
    }
}

// Banded ladder-operator kernels on column-major `D × D` matrices.

#[inline]
fn sqrt_table(d: usize) -> Vec<f64> {
    (0..=d).map(|k| (k as f64).sqrt()).collect()
}

/// `(α c + β c†) ρ`.
fn ladder_left(rho: &CMatrix, alpha: Complex64, beta: Complex64, sq: &[f64], out: &mut CMatrix) {
    let d = rho.nrows();
    let src = rho.as_slice();
    let dst = out.as_mut_slice();
    for n in 0..d {
        let col = &src[n * d..(n + 1) * d];
        let o = &mut dst[n * d..(n + 1) * d];
        for m in 0..d {
            let mut v = Complex64::new(0.0, 0.0);
            if m + 1 < d {
                v += alpha * (sq[m + 1] * col[m + 1]);
            }
            if m > 0 {
                v += beta * (sq[m] * col[m - 1]);
            }
            o[m] = v;
        }
    }
}

fn lindblad_into(rho: &CMatrix, n_bath: f64, sq: &[f64], out: &mut CMatrix) {
    let d = rho.nrows();
    let src = rho.as_slice();
    let dst = out.as_mut_slice();
    let (up, down) = (n_bath + 1.0, n_bath);
    // Diagonal part ½(N+1)(m+n) + ½N(f(m)+f(n)); c c† is diag(1, ..., D-1, 0)
    // in the truncated space.
    let half: Vec<f64> = (0..d)
        .map(|k| 0.5 * up * k as f64 + 0.5 * down * if k + 1 < d { (k + 1) as f64 } else { 0.0 })
        .collect();
    for n in 0..d {
        let col = &src[n * d..(n + 1) * d];
        let o = &mut dst[n * d..(n + 1) * d];
        let hn = half[n];
        for ((o, x), h) in o.iter_mut().zip(col).zip(&half) {
            *o = x * -(h + hn);
        }
        if n + 1 < d {
            let next = &src[(n + 1) * d..(n + 2) * d];
            let w = up * sq[n + 1];
            for m in 0..d - 1 {
                o[m] += next[m + 1] * (w * sq[m + 1]);
            }
        }
        if n > 0 {
            let prev = &src[(n - 1) * d..n * d];
            let w = down * sq[n];
            for m in 1..d {
                o[m] += prev[m - 1] * (w * sq[m]);
            }
        }
    }
}

/// `(N+1)𝒟[c]ρ + N𝒟[c†]ρ`.
pub fn lindblad_rhs(rho: &FockDensity, n_bath: f64) -> CMatrix {
    let d = rho.dim();
    let mut out = CMatrix::zeros(d, d);
    lindblad_into(rho.matrix(), n_bath, &sqrt_table(d), &mut out);
    out
}

/// `ℋ[O]ρ = Oρ + ρO† - Tr[(O + O†)ρ] ρ`.
pub fn h_superop(o: &fock::FockOperator, rho: &FockDensity) -> Result<CMatrix> {
    if o.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: o.dim(),
        });
    }
    let or = o.matrix() * rho.matrix();
    Ok(innovation(&or, rho.matrix()))
}

fn innovation(o_rho: &CMatrix, rho: &CMatrix) -> CMatrix {
    let tr = 2.0 * o_rho.trace().re;
    o_rho + o_rho.adjoint() - rho * Complex64::from(tr)
}

fn add_innovation(acc: &mut CMatrix, o_rho: &CMatrix, rho: &CMatrix, weight: f64) {
    let d = rho.nrows();
    let tr = 2.0 * o_rho.trace().re;
    let (a, x, r) = (acc.as_mut_slice(), o_rho.as_slice(), rho.as_slice());
    for n in 0..d {
        for m in 0..d {
            let v = x[m + n * d] + x[n + m * d].conj() - r[m + n * d] * tr;
            a[m + n * d] += v * weight;
        }
    }
}

/// Moments of a truncated density computed from banded sums.
pub fn fock_moments(rho: &CMatrix) -> Moments {
    let d = rho.nrows();
    let mut a = Complex64::new(0.0, 0.0);
    let mut a2 = Complex64::new(0.0, 0.0);
    let mut n = 0.0;
    for m in 0..d {
        n += m as f64 * rho[(m, m)].re;
        if m + 1 < d {
            a += ((m + 1) as f64).sqrt() * rho[(m + 1, m)];
        }
        if m + 2 < d {
            a2 += (((m + 1) * (m + 2)) as f64).sqrt() * rho[(m + 2, m)];
        }
    }
    let tr = rho.trace().re;
    let (a, a2, n) = (a / tr, a2 / tr, n / tr);
    let (mq, mp) = (2.0 * a.re, 2.0 * a.im);
    Moments {
        mean_q: mq,
        mean_p: mp,
        var_q: 2.0 * a2.re + 2.0 * n + 1.0 - mq * mq,
        var_p: -2.0 * a2.re + 2.0 * n + 1.0 - mp * mp,
        cov_qp: 2.0 * a2.im - mq * mp,
        n,
    }
}

/// Reusable buffers for the Fock engine.
struct FockWorkspace {
    sq: Vec<f64>,
    drift: CMatrix,
    o_rho: CMatrix,
    next: CMatrix,
    band: Band,
}

impl FockWorkspace {
    fn new(d: usize) -> Self {
        Self {
            sq: sqrt_table(d),
            drift: CMatrix::zeros(d, d),
            o_rho: CMatrix::zeros(d, d),
            next: CMatrix::zeros(d, d),
            band: Band::zeros(d),
        }
    }
}

/// Result of a single Fock step, before it is packaged into a [`StepRecord`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub increments: Increments,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub trace_err: f64,
}

fn fock_step_inplace(rho: &mut CMatrix, before: &Moments, cfg: &SmeConfig, w: &NoiseWeights, dw: Increments, ws: &mut FockWorkspace, step: usize) -> Result<StepOutcome> {
    let n = cfg.unravelling.n_bath();
    let dt = cfg.dt;
    lindblad_into(rho, n, &ws.sq, &mut ws.drift);
    for ((x, r), l) in ws.next.iter_mut().zip(rho.iter()).zip(ws.drift.iter()) {
        *x = r + l * dt;
    }
    if let Some(k1) = w.k1 {
        // (N+1)c - N c†
        ladder_left(rho, Complex64::from(n + 1.0), Complex64::from(-n), &ws.sq, &mut ws.o_rho);
        add_innovation(&mut ws.next, &ws.o_rho, rho, k1 * dw.dw1);
    }
    if let Some(k2) = w.k2 {
        // -i((N+1)c + N c†)
        let mi = Complex64::new(0.0, -1.0);
        ladder_left(rho, mi * (n + 1.0), mi * n, &ws.sq, &mut ws.o_rho);
        add_innovation(&mut ws.next, &ws.o_rho, rho, k2 * dw.dw2);
    }
    let tr = ws.next.trace().re;
    let trace_err = (tr - 1.0).abs();
    if trace_err > TRACE_DRIFT_LIMIT {
        return Err(Error::StepSize { step, drift: trace_err });
    }
    let d = rho.nrows();
    for j in 0..d {
        for i in 0..=j {
            let v = (ws.next[(i, j)] + ws.next[(j, i)].conj()) * (0.5 / tr);
            rho[(i, j)] = v;
            rho[(j, i)] = v.conj();
        }
    }
    let (theta1, theta2) = w.records(before.mean_q, before.mean_p, dw, dt);
    Ok(StepOutcome {
        increments: dw,
        theta1,
        theta2,
        trace_err,
    })
}

/// Pentadiagonal operator: `coeffs[m][s + 2] = O[m, m + s]`.
#[derive(Debug, Clone)]
struct Band {
    coeffs: Vec<[Complex64; 5]>,
}

impl Band {
    fn from_dense(m: &CMatrix) -> Self {
        let d = m.nrows();
        let coeffs = (0..d)
            .map(|i| {
                let mut row = [Complex64::new(0.0, 0.0); 5];
                for (k, s) in (-2i64..=2).enumerate() {
                    let j = i as i64 + s;
                    if (0..d as i64).contains(&j) {
                        row[k] = m[(i, j as usize)];
                    }
                }
                row
            })
            .collect();
        Self { coeffs }
    }

    fn zeros(d: usize) -> Self {
        Self {
            coeffs: vec![[Complex64::new(0.0, 0.0); 5]; d],
        }
    }

    fn set_combination(&mut self, terms: &[(&Band, Complex64)]) {
        for (i, row) in self.coeffs.iter_mut().enumerate() {
            for k in 0..5 {
                row[k] = terms.iter().map(|(b, w)| b.coeffs[i][k] * w).sum();
            }
        }
    }

    /// `out = O x`.
    fn apply(&self, x: &CMatrix, out: &mut CMatrix) {
        let d = x.nrows();
        let src = x.as_slice();
        let dst = out.as_mut_slice();
        for n in 0..d {
            let col = &src[n * d..(n + 1) * d];
            let o = &mut dst[n * d..(n + 1) * d];
            for m in 0..d {
                let row = &self.coeffs[m];
                let lo = m.saturating_sub(2);
                let hi = (m + 2).min(d - 1);
                let mut v = Complex64::new(0.0, 0.0);
                for j in lo..=hi {
                    v += row[j + 2 - m] * col[j];
                }
                o[m] = v;
            }
        }
    }
}

/// Precomputed operators of the Kraus-form step.
///
/// With `L₁ = √(N+1) c`, `L₂ = √N c†` the innovation operators are
/// `Bₖ = Σⱼ Uₖⱼ Lⱼ`. The step is
///
/// ```text
/// M  = I - K dt/2 + Σ Bₖ dYₖ + ½ Σₖₗ BₖBₗ (dYₖdYₗ - δₖₗ dt),   K = Σ Lⱼ†Lⱼ
/// ρ' ∝ MρM† + dt Σᵢⱼ (I - U†U)ᵢⱼ LᵢρLⱼ†
/// ```
///
/// with `dYₖ = dwₖ + ⟨Bₖ + Bₖ†⟩dt`. `I - U†U ⪰ 0` for every `(Υ, N)`, so
/// both terms are positive. `[B₁, B₂]` is a multiple of the identity, so no
/// Lévy-area term is needed for strong order one.
#[derive(Debug, Clone)]
struct KrausStepper {
    dt: f64,
    weights: NoiseWeights,
    identity_minus_drift: Band,
    b: [Option<Band>; 2],
    bb: [Option<Band>; 2],
    b_anti: Option<Band>,
    jumps: Vec<Band>,
}

impl KrausStepper {
    fn new(cfg: &SmeConfig) -> Result<Self> {
        let d = cfg.dim;
        let n = cfg.unravelling.n_bath();
        let w = cfg.weights();
        let a = fock::annihilation(d)?.into_matrix();
        let ad = a.adjoint();
        let l = [&a * Complex64::from((n + 1.0).sqrt()), &ad * Complex64::from(n.sqrt())];
        let mut u = nalgebra::Matrix2::<Complex64>::zeros();
        let mi = Complex64::new(0.0, -1.0);
        if let Some(k1) = w.k1 {
            u[(0, 0)] = Complex64::from(k1 * (n + 1.0).sqrt());
            u[(0, 1)] = Complex64::from(-k1 * n.sqrt());
        }
        if let Some(k2) = w.k2 {
            u[(1, 0)] = mi * (k2 * (n + 1.0).sqrt());
            u[(1, 1)] = mi * (k2 * n.sqrt());
        }
        let b_dense: Vec<CMatrix> = (0..2).map(|k| &l[0] * u[(k, 0)] + &l[1] * u[(k, 1)]).collect();
        let active = [w.k1.is_some(), w.k2.is_some()];
        let k_op = l[0].adjoint() * &l[0] + l[1].adjoint() * &l[1];
        let id = CMatrix::identity(d, d);
        let drift = &id - k_op * Complex64::from(cfg.dt / 2.0);
        let band = |m: &CMatrix| Band::from_dense(m);
        let b = [0, 1].map(|k| active[k].then(|| band(&b_dense[k])));
        let bb = [0, 1].map(|k| active[k].then(|| band(&(&b_dense[k] * &b_dense[k]))));
        let b_anti = (active[0] && active[1]).then(|| band(&(&b_dense[0] * &b_dense[1] + &b_dense[1] * &b_dense[0])));
        let rem = nalgebra::Matrix2::<Complex64>::identity() - u.adjoint() * u;
        let rem = (rem + rem.adjoint()) * Complex64::from(0.5);
        let eig = nalgebra::SymmetricEigen::new(rem);
        let mut jumps = Vec::new();
        for k in 0..2 {
            let lam = eig.eigenvalues[k];
            if lam < -1e-9 {
                return Err(Error::Numerical(format!("unravelling matrix exceeds unit norm ({lam:.3e})")));
            }
            if lam > 1e-14 {
                let v = eig.eigenvectors.column(k);
                // Σᵢⱼ Rᵢⱼ LᵢρLⱼ† = Σₖ λₖ JₖρJₖ† with Jₖ = Σᵢ vᵢₖ Lᵢ.
                let j = (&l[0] * v[0] + &l[1] * v[1]) * Complex64::from(lam.sqrt());
                jumps.push(band(&j));
            }
        }
        Ok(Self {
            dt: cfg.dt,
            weights: w,
            identity_minus_drift: band(&drift),
            b,
            bb,
            b_anti,
            jumps,
        })
    }

    fn step(&self, rho: &mut CMatrix, before: &Moments, dw: Increments, ws: &mut FockWorkspace) -> StepOutcome {
        let dt = self.dt;
        let w = &self.weights;
        // ⟨B₁ + B₁†⟩ = κ₁⟨q⟩, ⟨B₂ + B₂†⟩ = κ₂⟨p⟩.
        let dy = [
            w.k1.map(|k| dw.dw1 + k * before.mean_q * dt).unwrap_or(0.0),
            w.k2.map(|k| dw.dw2 + k * before.mean_p * dt).unwrap_or(0.0),
        ];
        let c = Complex64::from;
        let mut terms: Vec<(&Band, Complex64)> = vec![(&self.identity_minus_drift, c(1.0))];
        for k in 0..2 {
            if let (Some(b), Some(bb)) = (&self.b[k], &self.bb[k]) {
                terms.push((b, c(dy[k])));
                terms.push((bb, c(0.5 * (dy[k] * dy[k] - dt))));
            }
        }
        if let Some(ba) = &self.b_anti {
            terms.push((ba, c(0.5 * dy[0] * dy[1])));
        }
        // O ρ O† = O (O ρ)† for Hermitian ρ.
        ws.band.set_combination(&terms);
        ws.band.apply(rho, &mut ws.o_rho);
        ws.o_rho.adjoint_to(&mut ws.drift);
        ws.band.apply(&ws.drift, &mut ws.next);
        for j in &self.jumps {
            j.apply(rho, &mut ws.o_rho);
            ws.o_rho.adjoint_to(&mut ws.drift);
            j.apply(&ws.drift, &mut ws.o_rho);
            for (x, y) in ws.next.iter_mut().zip(ws.o_rho.iter()) {
                *x += y * dt;
            }
        }
        let tr = ws.next.trace().re;
        let d = rho.nrows();
        for jj in 0..d {
            for i in 0..=jj {
                let v = (ws.next[(i, jj)] + ws.next[(jj, i)].conj()) * (0.5 / tr);
                rho[(i, jj)] = v;
                rho[(jj, i)] = v.conj();
            }
        }
        let (theta1, theta2) = w.records(before.mean_q, before.mean_p, dw, dt);
        StepOutcome {
            increments: dw,
            theta1,
            theta2,
            trace_err: (rho.trace().re - 1.0).abs(),
        }
    }
}

/// `Σₖ kₖ dwₖ ℋ[Aₖ]ρ + ½ Σₖₗ bₖ'[bₗ](dwₖdwₗ - δₖₗdt)` added to `ρ + dt Lρ`.
fn milstein_step_inplace(rho: &mut CMatrix, before: &Moments, cfg: &SmeConfig, w: &NoiseWeights, dw: Increments, ws: &mut FockWorkspace, step: usize) -> Result<StepOutcome> {
    let n = cfg.unravelling.n_bath();
    let dt = cfg.dt;
    let d = rho.nrows();
    lindblad_into(rho, n, &ws.sq, &mut ws.drift);
    for ((x, r), l) in ws.next.iter_mut().zip(rho.iter()).zip(ws.drift.iter()) {
        *x = r + l * dt;
    }
    let mi = Complex64::new(0.0, -1.0);
    // Bₖ = αₖ c + βₖ c†.
    let channels: Vec<(Complex64, Complex64, f64)> = [
        w.k1.map(|k| (Complex64::from(k * (n + 1.0)), Complex64::from(-k * n), dw.dw1)),
        w.k2.map(|k| (mi * (k * (n + 1.0)), mi * (k * n), dw.dw2)),
    ]
    .into_iter()
    .flatten()
    .collect();
    let mut b = Vec::with_capacity(2);
    let mut t = Vec::with_capacity(2);
    for &(alpha, beta, _) in &channels {
        ladder_left(rho, alpha, beta, &ws.sq, &mut ws.o_rho);
        let tk = 2.0 * ws.o_rho.trace().re;
        b.push(&ws.o_rho + ws.o_rho.adjoint() - &*rho * Complex64::from(tk));
        t.push(tk);
    }
    for (k, &(_, _, dwk)) in channels.iter().enumerate() {
        ws.next += &b[k] * Complex64::from(dwk);
    }
    for (k, &(alpha, beta, dwk)) in channels.iter().enumerate() {
        let mut y = CMatrix::zeros(d, d);
        for (l, &(_, _, dwl)) in channels.iter().enumerate() {
            let c = dwk * dwl - if k == l { dt } else { 0.0 };
            y += &b[l] * Complex64::from(c);
        }
        ladder_left(&y, alpha, beta, &ws.sq, &mut ws.o_rho);
        let tr = 2.0 * ws.o_rho.trace().re;
        let corr = &ws.o_rho + ws.o_rho.adjoint() - &*rho * Complex64::from(tr) - y * Complex64::from(t[k]);
        ws.next += corr * Complex64::from(0.5);
    }
    let tr = ws.next.trace().re;
    let trace_err = (tr - 1.0).abs();
    if trace_err > TRACE_DRIFT_LIMIT {
        return Err(Error::StepSize { step, drift: trace_err });
    }
    for j in 0..d {
        for i in 0..=j {
            let v = (ws.next[(i, j)] + ws.next[(j, i)].conj()) * (0.5 / tr);
            rho[(i, j)] = v;
            rho[(j, i)] = v.conj();
        }
    }
    let (theta1, theta2) = w.records(before.mean_q, before.mean_p, dw, dt);
    Ok(StepOutcome {
        increments: dw,
        theta1,
        theta2,
        trace_err,
    })
}

/// One Milstein step with the given increments (see [`Stepper::Milstein`]).
pub fn fock_milstein_step_with(rho: &FockDensity, cfg: &SmeConfig, dw: Increments) -> Result<(FockDensity, StepOutcome)> {
    let mut m = rho.matrix().clone();
    let mut ws = FockWorkspace::new(rho.dim());
    let before = fock_moments(&m);
    let out = milstein_step_inplace(&mut m, &before, cfg, &cfg.weights(), dw, &mut ws, 0)?;
    if cfg.positivity_check_every > 0 {
        check_positivity(&m, 0)?;
    }
    Ok((FockDensity::from_matrix_unchecked(m), out))
}

fn check_positivity(rho: &CMatrix, step: usize) -> Result<()> {
    let min = FockDensity::from_matrix_unchecked(rho.clone()).min_eigenvalue();
    if min < POSITIVITY_LIMIT {
        return Err(Error::Integration {
            step,
            reason: format!("negative eigenvalue {min:.3e}; reduce dt"),
        });
    }
    Ok(())
}

/// One Euler–Maruyama step of the conditional master equation with the
/// given increments, followed by Hermitisation and renormalisation.
pub fn fock_sme_step_with(rho: &FockDensity, cfg: &SmeConfig, dw: Increments) -> Result<(FockDensity, StepOutcome)> {
    let mut m = rho.matrix().clone();
    let mut ws = FockWorkspace::new(rho.dim());
    let before = fock_moments(&m);
    let out = fock_step_inplace(&mut m, &before, cfg, &cfg.weights(), dw, &mut ws, 0)?;
    if cfg.positivity_check_every > 0 {
        check_positivity(&m, 0)?;
    }
    Ok((FockDensity::from_matrix_unchecked(m), out))
}

/// One Kraus-form step with the given increments (see [`Stepper::Kraus`]).
pub fn fock_kraus_step_with(rho: &FockDensity, cfg: &SmeConfig, dw: Increments) -> Result<(FockDensity, StepOutcome)> {
    let mut m = rho.matrix().clone();
    let kraus = KrausStepper::new(cfg)?;
    let mut ws = FockWorkspace::new(rho.dim());
    let before = fock_moments(&m);
    let out = kraus.step(&mut m, &before, dw, &mut ws);
    if cfg.positivity_check_every > 0 {
        check_positivity(&m, 0)?;
    }
    Ok((FockDensity::from_matrix_unchecked(m), out))
}

/// [`fock_sme_step_with`] with increments drawn from `rng`.
pub fn fock_sme_step<R: Rng + ?Sized>(rho: &FockDensity, cfg: &SmeConfig, rng: &mut R) -> Result<(FockDensity, StepOutcome)> {
    let dw = Increments::draw(rng, cfg.dt);
    fock_sme_step_with(rho, cfg, dw)
}

/// One step of the Gaussian-moment engine with the given increments.
pub fn gaussian_sme_step_with(mean: &Vector2<f64>, cov: &Matrix2<f64>, cfg: &SmeConfig, dw: Increments) -> Result<(Vector2<f64>, Matrix2<f64>, StepOutcome)> {
    let w = cfg.weights();
    gaussian_step_inner(mean, cov, cfg, &w, dw, 0)
}

/// [`gaussian_sme_step_with`] with increments drawn from `rng`.
pub fn gaussian_sme_step<R: Rng + ?Sized>(mean: &Vector2<f64>, cov: &Matrix2<f64>, cfg: &SmeConfig, rng: &mut R) -> Result<(Vector2<f64>, Matrix2<f64>, StepOutcome)> {
    let dw = Increments::draw(rng, cfg.dt);
    gaussian_sme_step_with(mean, cov, cfg, dw)
}

fn gaussian_step_inner(mean: &Vector2<f64>, cov: &Matrix2<f64>, cfg: &SmeConfig, w: &NoiseWeights, dw: Increments, step: usize) -> Result<(Vector2<f64>, Matrix2<f64>, StepOutcome)> {
    let dt = cfg.dt;
    let delta = cov - Matrix2::identity() * (2.0 * cfg.unravelling.n_bath() + 1.0);
    let g1 = w.k1.map(|k| delta.column(0) * k).unwrap_or_else(Vector2::zeros);
    let g2 = w.k2.map(|k| delta.column(1) * k).unwrap_or_else(Vector2::zeros);
    let m = mean - mean * (0.5 * dt) + g1 * dw.dw1 + g2 * dw.dw2;
    let mut s = cov - delta * dt - (g1 * g1.transpose() + g2 * g2.transpose()) * dt;
    let off = 0.5 * (s[(0, 1)] + s[(1, 0)]);
    s[(0, 1)] = off;
    s[(1, 0)] = off;
    check_gaussian_cov(&s, step)?;
    let (theta1, theta2) = w.records(mean[0], mean[1], dw, dt);
    Ok((
        m,
        s,
        StepOutcome {
            increments: dw,
            theta1,
            theta2,
            trace_err: 0.0,
        },
    ))
}

fn row(step: usize, dt: f64, out: StepOutcome, moments: Moments) -> StepRecord {
    StepRecord {
        t: (step + 1) as f64 * dt,
        dw1: out.increments.dw1,
        dw2: out.increments.dw2,
        theta1: out.theta1,
        theta2: out.theta2,
        moments,
        trace_err: out.trace_err,
    }
}

/// Observer hooks called after every step; used to stream statistics
/// without storing full trajectories.
trait Observer {
    fn fock(&mut self, _step: usize, _rho: &CMatrix, _moments: &Moments) {}
    fn moments(&mut self, step: usize, out: StepOutcome, moments: Moments);
}

struct Recorder {
    dt: f64,
    rows: Vec<StepRecord>,
    snapshot_every: Option<usize>,
    snapshots: Vec<(usize, FockDensity)>,
}

impl Observer for Recorder {
    fn fock(&mut self, step: usize, rho: &CMatrix, _m: &Moments) {
        if let Some(k) = self.snapshot_every {
            if k > 0 && (step + 1).is_multiple_of(k) {
                self.snapshots.push((step + 1, FockDensity::from_matrix_unchecked(rho.clone())));
            }
        }
    }

    fn moments(&mut self, step: usize, out: StepOutcome, moments: Moments) {
        self.rows.push(row(step, self.dt, out, moments));
    }
}

fn drive_fock<R: Rng, O: Observer>(cfg: &SmeConfig, rho0: &FockDensity, rng: &mut R, bridge: &mut R, obs: &mut O) -> Result<()> {
    let w = cfg.weights();
    let subs = cfg.fock_substeps;
    let sub_cfg = SmeConfig {
        dt: cfg.dt / subs as f64,
        ..*cfg
    };
    let mut ws = FockWorkspace::new(cfg.dim);
    let kraus = match cfg.stepper {
        Stepper::Kraus => Some(KrausStepper::new(&sub_cfg)?),
        _ => None,
    };
    let mut rho = rho0.matrix().clone();
    let mut before = fock_moments(&rho);
    for step in 0..cfg.n_steps {
        let dw = Increments::draw(rng, cfg.dt);
        let pieces = if subs > 1 {
            bridge_increments(dw, subs, sub_cfg.dt, bridge)
        } else {
            vec![dw]
        };
        let mut trace_err: f64 = 0.0;
        let mut inner = before;
        for (i, piece) in pieces.into_iter().enumerate() {
            if i > 0 {
                inner = fock_moments(&rho);
            }
            let out = match (&kraus, cfg.stepper) {
                (Some(k), _) => k.step(&mut rho, &inner, piece, &mut ws),
                (None, Stepper::Milstein) => milstein_step_inplace(&mut rho, &inner, &sub_cfg, &w, piece, &mut ws, step)?,
                (None, _) => fock_step_inplace(&mut rho, &inner, &sub_cfg, &w, piece, &mut ws, step)?,
            };
            trace_err = trace_err.max(out.trace_err);
        }
        let check = cfg.positivity_check_every;
        if check > 0 && ((step + 1) % check == 0 || step + 1 == cfg.n_steps) {
            check_positivity(&rho, step)?;
        }
        let (theta1, theta2) = w.records(before.mean_q, before.mean_p, dw, cfg.dt);
        let out = StepOutcome {
            increments: dw,
            theta1,
            theta2,
            trace_err,
        };
        let m = fock_moments(&rho);
        before = m;
        obs.fock(step, &rho, &m);
        obs.moments(step, out, m);
    }
    Ok(())
}

fn drive_gaussian<R: Rng, O: Observer>(cfg: &SmeConfig, m0: Vector2<f64>, s0: Matrix2<f64>, rng: &mut R, obs: &mut O) -> Result<()> {
    let w = cfg.weights();
    let (mut m, mut s) = (m0, s0);
    for step in 0..cfg.n_steps {
        let dw = Increments::draw(rng, cfg.dt);
        let (m1, s1, out) = gaussian_step_inner(&m, &s, cfg, &w, dw, step)?;
        m = m1;
        s = s1;
        obs.moments(step, out, Moments::from_gaussian(&m, &s));
    }
    Ok(())
}

/// Output of [`run_trajectory`]; with [`Engine::Both`] both records are
/// driven by the same increments.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub fock: Option<TrajectoryRecord>,
    pub gaussian: Option<TrajectoryRecord>,
}

/// Options for a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrajectoryOptions {
    /// Stream index within the seed (trajectory number in an ensemble).
    pub stream: u64,
    /// Keep the Fock state every this many steps.
    pub snapshot_every: Option<usize>,
}

/// Integrates one conditional trajectory for each requested engine.
pub fn run_trajectory(cfg: &SmeConfig, initial: &InitialState, opts: TrajectoryOptions) -> Result<RunOutput> {
    cfg.validate(f64::INFINITY)?;
    let recorder = || Recorder {
        dt: cfg.dt,
        rows: Vec::with_capacity(cfg.n_steps),
        snapshot_every: opts.snapshot_every,
        snapshots: Vec::new(),
    };
    let fock = if cfg.engine.runs_fock() {
        let rho0 = initial.density(cfg.dim)?;
        let mut rec = recorder();
        drive_fock(
            cfg,
            &rho0,
            &mut trajectory_rng(cfg.seed, opts.stream),
            &mut bridge_rng(cfg.seed, opts.stream),
            &mut rec,
        )?;
        Some(TrajectoryRecord {
            engine: Engine::Fock,
            initial: fock_moments(rho0.matrix()),
            rows: rec.rows,
            snapshots: rec.snapshots,
        })
    } else {
        None
    };
    let gaussian = if cfg.engine.runs_gaussian() {
        let (m0, s0) = initial.gaussian_moments()?;
        let mut rec = recorder();
        drive_gaussian(cfg, m0, s0, &mut trajectory_rng(cfg.seed, opts.stream), &mut rec)?;
        Some(TrajectoryRecord {
            engine: Engine::Gaussian,
            initial: Moments::from_gaussian(&m0, &s0),
            rows: rec.rows,
            snapshots: Vec::new(),
        })
    } else {
        None
    };
    Ok(RunOutput { fock, gaussian })
}

/// What an ensemble run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Sample statistics every this many steps (time zero is always sampled).
    pub sample_every: usize,
    /// Average the Fock states at sample times (unconditional estimate).
    pub keep_densities: bool,
    /// Start of the steady-state averaging window.
    pub burn_in: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            sample_every: 100,
            keep_densities: false,
            burn_in: f64::INFINITY,
        }
    }
}

/// Running sums for mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accumulator {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Ensemble statistics of one engine.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub engine: Engine,
    pub n_traj: usize,
    pub times: Vec<f64>,
    /// Per sample time, accumulators for `Moments::as_array` order.
    pub moments: Vec<[Accumulator; 6]>,
    /// Trajectory-averaged Fock states at the sample times.
    pub average_density: Vec<CMatrix>,
    /// Per-trajectory time averages over `[burn_in, t_final]` of
    /// `Var q`, `Var p`, `Cov(q, p)`, accumulated across trajectories.
    pub steady: [Accumulator; 3],
    /// Records check: `√dt θ₁ - (1+Υ)/2 ⟨q⟩ dt` and its `θ₂` counterpart,
    /// averaged over all steps.
    pub record_residual: [Accumulator; 2],
}

/// Steady conditional quadrature variance with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyEstimate {
    pub var_q: f64,
    pub var_q_se: f64,
    pub var_p: f64,
    pub var_p_se: f64,
    pub cov_qp: f64,
}

impl EnsembleStats {
    fn empty(engine: Engine, times: Vec<f64>, dim: Option<usize>) -> Self {
        let k = times.len();
        Self {
            engine,
            n_traj: 0,
            moments: vec![[Accumulator::default(); 6]; k],
            average_density: dim.map(|d| vec![CMatrix::zeros(d, d); k]).unwrap_or_default(),
            times,
            steady: [Accumulator::default(); 3],
            record_residual: [Accumulator::default(); 2],
        }
    }

    fn merge(&mut self, other: &EnsembleStats) {
        self.n_traj += other.n_traj;
        for (a, b) in self.moments.iter_mut().zip(&other.moments) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (a, b) in self.average_density.iter_mut().zip(&other.average_density) {
            *a += b;
        }
        for (x, y) in self.steady.iter_mut().zip(&other.steady) {
            x.merge(y);
        }
        for (x, y) in self.record_residual.iter_mut().zip(&other.record_residual) {
            x.merge(y);
        }
    }

    fn finish(mut self) -> Self {
        let n = self.n_traj.max(1) as f64;
        for m in &mut self.average_density {
            *m /= Complex64::from(n);
        }
        self
    }

    /// Index of the sample closest to time `t`.
    pub fn sample_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Steady conditional variances, error bars from the spread of the
    /// per-trajectory time averages.
    pub fn steady_state(&self) -> Option<SteadyEstimate> {
        if self.steady[0].count == 0 {
            return None;
        }
        Some(SteadyEstimate {
            var_q: self.steady[0].mean(),
            var_q_se: self.steady[0].std_error(),
            var_p: self.steady[1].mean(),
            var_p_se: self.steady[1].std_error(),
            cov_qp: self.steady[2].mean(),
        })
    }
}

struct StatsObserver<'a> {
    stats: &'a mut EnsembleStats,
    every: usize,
    keep_densities: bool,
    burn_step: usize,
    window: [f64; 3],
    window_len: usize,
    weights: NoiseWeights,
    dt: f64,
    prev: Moments,
}

impl Observer for StatsObserver<'_> {
    fn fock(&mut self, step: usize, rho: &CMatrix, _m: &Moments) {
        if self.keep_densities && (step + 1).is_multiple_of(self.every) {
            self.stats.average_density[(step + 1) / self.every] += rho;
        }
    }

    fn moments(&mut self, step: usize, out: StepOutcome, m: Moments) {
        let sdt = self.dt.sqrt();
        if let Some(t1) = out.theta1 {
            self.stats.record_residual[0].push(sdt * t1 - self.weights.half_plus * self.prev.mean_q * self.dt);
        }
        if let Some(t2) = out.theta2 {
            self.stats.record_residual[1].push(sdt * t2 - self.weights.half_minus * self.prev.mean_p * self.dt);
        }
        self.prev = m;
        if (step + 1).is_multiple_of(self.every) {
            for (acc, x) in self.stats.moments[(step + 1) / self.every].iter_mut().zip(m.as_array()) {
                acc.push(x);
            }
        }
        if step + 1 >= self.burn_step {
            self.window[0] += m.var_q;
            self.window[1] += m.var_p;
            self.window[2] += m.cov_qp;
            self.window_len += 1;
        }
    }
}

fn one_trajectory_stats(cfg: &SmeConfig, engine: Engine, initial: &InitialState, rho0: Option<&FockDensity>, opts: &EnsembleOptions, times: &[f64], index: u64) -> Result<EnsembleStats> {
    let dim = (engine == Engine::Fock && opts.keep_densities).then_some(cfg.dim);
    let mut stats = EnsembleStats::empty(engine, times.to_vec(), dim);
    stats.n_traj = 1;
    let burn_step = if opts.burn_in.is_finite() {
        (opts.burn_in / cfg.dt).ceil() as usize
    } else {
        usize::MAX
    };
    let mut rng = trajectory_rng(cfg.seed, index);
    let initial_moments;
    {
        let mut obs = StatsObserver {
            stats: &mut stats,
            every: opts.sample_every,
            keep_densities: opts.keep_densities,
            burn_step,
            window: [0.0; 3],
            window_len: 0,
            weights: cfg.weights(),
            dt: cfg.dt,
            prev: Moments::default(),
        };
        match engine {
            Engine::Fock => {
                let rho0 = rho0.expect("fock initial state prepared");
                initial_moments = fock_moments(rho0.matrix());
                obs.prev = initial_moments;
                if opts.keep_densities {
                    obs.stats.average_density[0] += rho0.matrix();
                }
                drive_fock(cfg, rho0, &mut rng, &mut bridge_rng(cfg.seed, index), &mut obs)?;
            }
            _ => {
                let (m0, s0) = initial.gaussian_moments()?;
                initial_moments = Moments::from_gaussian(&m0, &s0);
                obs.prev = initial_moments;
                drive_gaussian(cfg, m0, s0, &mut rng, &mut obs)?;
            }
        }
        if obs.window_len > 0 {
            let l = obs.window_len as f64;
            let w = obs.window;
            for (acc, x) in obs.stats.steady.iter_mut().zip(w) {
                acc.push(x / l);
            }
        }
    }
    for (acc, x) in stats.moments[0].iter_mut().zip(initial_moments.as_array()) {
        acc.push(x);
    }
    Ok(stats)
}

fn ensemble_for(cfg: &SmeConfig, engine: Engine, initial: &InitialState, n_traj: usize, opts: &EnsembleOptions) -> Result<EnsembleStats> {
    if opts.sample_every == 0 {
        return Err(Error::Domain("sample_every must be positive".into()));
    }
    let n_samples = cfg.n_steps / opts.sample_every + 1;
    let times: Vec<f64> = (0..n_samples).map(|k| (k * opts.sample_every) as f64 * cfg.dt).collect();
    let rho0 = if engine == Engine::Fock {
        Some(initial.density(cfg.dim)?)
    } else {
        None
    };
    // Fixed chunk boundaries and an in-order fold make the result
    // independent of scheduling.
    let chunks: Vec<(usize, usize)> = (0..n_traj)
        .step_by(ENSEMBLE_CHUNK)
        .map(|s| (s, (s + ENSEMBLE_CHUNK).min(n_traj)))
        .collect();
    let partial: Vec<Result<EnsembleStats>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let dim = (engine == Engine::Fock && opts.keep_densities).then_some(cfg.dim);
            let mut acc = EnsembleStats::empty(engine, times.clone(), dim);
            for i in lo..hi {
                let s = one_trajectory_stats(cfg, engine, initial, rho0.as_ref(), opts, &times, i as u64)?;
                acc.merge(&s);
            }
            Ok(acc)
        })
        .collect();
    let dim = (engine == Engine::Fock && opts.keep_densities).then_some(cfg.dim);
    let mut total = EnsembleStats::empty(engine, times, dim);
    for p in partial {
        total.merge(&p?);
    }
    Ok(total.finish())
}

/// Ensemble output; with [`Engine::Both`] trajectory `i` of each engine
/// uses the same noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub fock: Option<EnsembleStats>,
    pub gaussian: Option<EnsembleStats>,
}

/// Runs `n_traj` independent trajectories in parallel.
pub fn run_ensemble(cfg: &SmeConfig, initial: &InitialState, n_traj: usize, opts: &EnsembleOptions) -> Result<EnsembleOutput> {
    cfg.validate(f64::INFINITY)?;
    if n_traj == 0 {
        return Err(Error::Domain("ensemble needs at least one trajectory".into()));
    }
    let fock = if cfg.engine.runs_fock() {
        Some(ensemble_for(cfg, Engine::Fock, initial, n_traj, opts)?)
    } else {
        None
    };
    let gaussian = if cfg.engine.runs_gaussian() {
        Some(ensemble_for(cfg, Engine::Gaussian, initial, n_traj, opts)?)
    } else {
        None
    };
    Ok(EnsembleOutput { fock, gaussian })
}

/// `⟨n⟩(t) = N + (n₀ - N) e^{-t}`.
pub fn photon_number_decay(n0: f64, n_bath: f64, t: f64) -> f64 {
    n_bath + (n0 - n_bath) * (-t).exp()
}

/// Ensemble mean of `⟨n⟩` after `steps` Euler–Maruyama steps. The scheme is
/// linear in `ρ` up to renormalisation, so the averaged state follows the
/// deterministic Euler recursion and `⟨n⟩_k = N + (n₀ - N)(1 - dt)^k`.
pub fn euler_photon_number(n0: f64, n_bath: f64, dt: f64, steps: usize) -> f64 {
    n_bath + (n0 - n_bath) * (1.0 - dt).powi(steps as i32)
}

/// Classical RK4 integration of the Lindblad equation.
pub fn integrate_lindblad(rho: &FockDensity, n_bath: f64, dt: f64, steps: usize) -> FockDensity {
    let d = rho.dim();
    let sq = sqrt_table(d);
    let mut x = rho.matrix().clone();
    let mut k = [CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d)];
    let h = Complex64::from(dt);
    for _ in 0..steps {
        lindblad_into(&x, n_bath, &sq, &mut k[0]);
        let y = &x + &k[0] * (h * 0.5);
        lindblad_into(&y, n_bath, &sq, &mut k[1]);
        let y = &x + &k[1] * (h * 0.5);
        lindblad_into(&y, n_bath, &sq, &mut k[2]);
        let y = &x + &k[2] * h;
        lindblad_into(&y, n_bath, &sq, &mut k[3]);
        x += (&k[0] + &k[1] * Complex64::from(2.0) + &k[2] * Complex64::from(2.0) + &k[3]) * (h / 6.0);
    }
    FockDensity::from_matrix_unchecked(x)
}
