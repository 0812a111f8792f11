//! Spatially homogeneous Gaussian noise, white in time.
//!
//! A [`NoiseModel`] discretizes the covariance `Lambda` on a grid. Increments over one
//! step have covariance `dt * Lambda(x_i - x_j)`; for white noise the discrete delta is
//! `1/dx` on the diagonal. The Cameron-Martin inner product is the matching quadrature
//!
//! ```text
//! <phi, psi>_H = sum_k dt sum_{i,j} phi_k(x_i) psi_k(x_j) Lambda(x_i - x_j) dx^2,
//! ```
//!
//! so the Ito isometry `E[(sum phi dW dx)^2] = <phi, phi>_H` holds exactly on the grid.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Boundary, SpaceTimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceKind {
    /// `Lambda = delta`.
    White,
    /// `Lambda(x) = exp(-|x|^2 / (2 l^2))`.
    Gaussian { length: f64 },
    /// `Lambda(x) = |x|^{-beta}`, `0 < beta < d`.
    Riesz { beta: f64 },
}

/// Spatial covariance together with the declared Dalang exponent `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub eta: f64,
}

impl CovarianceSpec {
    pub fn new(kind: CovarianceKind, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Domain(format!("eta must lie in (0, 1) (got {eta})")));
        }
        match kind {
            CovarianceKind::White => {}
            CovarianceKind::Gaussian { length } => {
                if !(length > 0.0 && length.is_finite()) {
                    return Err(Error::Domain(format!(
                        "correlation length must be positive and finite (got {length})"
                    )));
                }
            }
            CovarianceKind::Riesz { beta } => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::Domain(format!(
                        "riesz exponent must lie in (0, d) = (0, 1) (got {beta})"
                    )));
                }
            }
        }
        Ok(Self { kind, eta })
    }

    pub fn white(eta: f64) -> Result<Self> {
        Self::new(CovarianceKind::White, eta)
    }

    pub fn gaussian(length: f64, eta: f64) -> Result<Self> {
        Self::new(CovarianceKind::Gaussian { length }, eta)
    }

    pub fn riesz(beta: f64, eta: f64) -> Result<Self> {
        Self::new(CovarianceKind::Riesz { beta }, eta)
    }

    /// Spectral density with `Lambda(x) = (2 pi)^{-1} int e^{i xi x} mu(xi) d xi`.
    pub fn spectral_density(&self, xi: f64) -> f64 {
        match self.kind {
            CovarianceKind::White => 1.0,
            CovarianceKind::Gaussian { length } => {
                length * (2.0 * PI).sqrt() * (-0.5 * length * length * xi * xi).exp()
            }
            CovarianceKind::Riesz { beta } => {
                2.0 * gamma(1.0 - beta) * (0.5 * PI * beta).sin() * xi.abs().powf(beta - 1.0)
            }
        }
    }

    /// `Q(t) = int_0^t int int G(s, y1) G(s, y2) Lambda(y1 - y2)`, in closed form (d = 1).
    ///
    /// `Y1 - Y2 ~ N(0, 2s)`, so the inner double integral is `E[Lambda(N(0, 2s))]`.
    pub fn q_lambda(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.kind {
            CovarianceKind::White => (t / PI).sqrt(),
            CovarianceKind::Gaussian { length } => {
                length * ((length * length + 2.0 * t).sqrt() - length)
            }
            CovarianceKind::Riesz { beta } => {
                let c = 2f64.powf(-beta) * gamma(0.5 * (1.0 - beta)) / PI.sqrt();
                c * t.powf(1.0 - 0.5 * beta) / (1.0 - 0.5 * beta)
            }
        }
    }

    /// Discretized `Lambda` at separation `d` on a grid of spacing `dx`.
    fn discrete(&self, d: f64, dx: f64) -> f64 {
        let on_diagonal = d < 0.5 * dx;
        match self.kind {
            CovarianceKind::White => {
                if on_diagonal {
                    1.0 / dx
                } else {
                    0.0
                }
            }
            CovarianceKind::Gaussian { length } => (-d * d / (2.0 * length * length)).exp(),
            CovarianceKind::Riesz { beta } => {
                if on_diagonal {
                    // cell average of |x|^{-beta} over [-dx/2, dx/2]
                    2.0 * (0.5 * dx).powf(1.0 - beta) / ((1.0 - beta) * dx)
                } else {
                    d.powf(-beta)
                }
            }
        }
    }
}

/// `q_lambda` as a free function.
pub fn q_lambda(t: f64, spec: &CovarianceSpec) -> f64 {
    spec.q_lambda(t)
}

/// Outcome of [`dalang_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DalangReport {
    pub passed: bool,
    /// `int mu(d xi) / (1 + |xi|^{2(1-eta)})`; infinite when the tail diverges.
    pub integral: f64,
    /// Power of the integrand at infinity (`-inf` for super-polynomial decay).
    pub tail_exponent: f64,
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    acc * h / 3.0
}

/// Strong Dalang condition for `d = 1`.
///
/// The integral is split at `|xi| = 1`. Near the origin the substitution `xi = s^{1/b}`
/// absorbs the `|xi|^{b-1}` singularity of the Riesz density; on `[1, inf)` the power tail
/// `c xi^a` is mapped to `(0, 1]` by `xi = r^{-1/g}`, `g = -a - 1`, which makes the leading
/// behaviour constant in `r`. A tail with `a >= -1` is reported as divergent.
pub fn dalang_check(spec: &CovarianceSpec) -> DalangReport {
    let p = 2.0 * (1.0 - spec.eta);
    let integrand = |xi: f64| spec.spectral_density(xi) / (1.0 + xi.abs().powf(p));
    let (head_exp, tail_exponent) = match spec.kind {
        CovarianceKind::White => (1.0, -p),
        CovarianceKind::Gaussian { .. } => (1.0, f64::NEG_INFINITY),
        CovarianceKind::Riesz { beta } => (beta, beta - 1.0 - p),
    };
    if tail_exponent >= -1.0 {
        return DalangReport {
            passed: false,
            integral: f64::INFINITY,
            tail_exponent,
        };
    }
    let b = head_exp;
    let head = simpson(
        |s| {
            if s <= 0.0 {
                // limit of integrand(s^{1/b}) * s^{1/b - 1} / b as s -> 0
                match spec.kind {
                    CovarianceKind::Riesz { beta } => {
                        2.0 * gamma(1.0 - beta) * (0.5 * PI * beta).sin() / b
                    }
                    _ => integrand(0.0),
                }
            } else {
                let xi = s.powf(1.0 / b);
                integrand(xi) * xi / (b * s)
            }
        },
        0.0,
        1.0,
        4000,
    );
    let g = if tail_exponent.is_finite() {
        -tail_exponent - 1.0
    } else {
        1.0
    };
    let tail = simpson(
        |r| {
            if r <= 0.0 {
                return match spec.kind {
                    CovarianceKind::White => 1.0 / g,
                    CovarianceKind::Gaussian { .. } => 0.0,
                    CovarianceKind::Riesz { beta } => {
                        2.0 * gamma(1.0 - beta) * (0.5 * PI * beta).sin() / g
                    }
                };
            }
            let xi = r.powf(-1.0 / g);
            integrand(xi) * xi / (g * r)
        },
        0.0,
        1.0,
        4000,
    );
    let integral = 2.0 * (head + tail);
    DalangReport {
        passed: integral.is_finite(),
        integral,
        tail_exponent,
    }
}

/// Derives the seed of path `path_id` from a base seed (splitmix64 finalizer over
/// `base + (path_id + 1) * 0x9E3779B97F4A7C15`).
pub fn derive_seed(base_seed: u64, path_id: u64) -> u64 {
    let mut z = base_seed.wrapping_add(path_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
enum Factor {
    White { scale: f64 },
    /// Eigenvalues of the circulant covariance per real-FFT bin.
    Circulant { eigen: Vec<f64>, sqrt_eigen: Vec<f64> },
    Dense { cov: DMatrix<f64>, sqrt: DMatrix<f64> },
}

/// Covariance discretized on a grid: sampling, smoothing and the `H_T` inner product.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    grid: SpaceTimeGrid,
    spec: CovarianceSpec,
    factor: Factor,
}

impl NoiseModel {
    pub fn new(grid: &SpaceTimeGrid, spec: &CovarianceSpec) -> Result<Self> {
        let n = grid.n_x();
        let dx = grid.dx();
        let factor = match (spec.kind, grid.boundary()) {
            (CovarianceKind::White, _) => Factor::White {
                scale: (1.0 / dx).sqrt(),
            },
            (_, Boundary::Periodic) => {
                let row: Vec<f64> = (0..n)
                    .map(|m| spec.discrete(grid.distance(grid.x(m), grid.x(0)), dx))
                    .collect();
                let mut spec_buf = grid.spectrum_vec();
                let mut work = grid.workspace();
                grid.forward(&row, &mut spec_buf, &mut work);
                let eigen: Vec<f64> = spec_buf.iter().map(|c| c.re).collect();
                let top = eigen.iter().cloned().fold(0.0, f64::max);
                let mut clipped = Vec::with_capacity(eigen.len());
                for (k, &v) in eigen.iter().enumerate() {
                    if v < -1e-10 * top {
                        return Err(Error::NotPositiveDefinite { index: k, value: v });
                    }
                    clipped.push(v.max(0.0));
                }
                Factor::Circulant {
                    sqrt_eigen: clipped.iter().map(|v| v.sqrt()).collect(),
                    eigen: clipped,
                }
            }
            (_, Boundary::TruncatedAbsorbing) => {
                let cov = DMatrix::from_fn(n, n, |i, j| {
                    spec.discrete((grid.x(i) - grid.x(j)).abs(), dx)
                });
                let eig = SymmetricEigen::new(cov.clone());
                let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
                for (k, &v) in eig.eigenvalues.iter().enumerate() {
                    if v < -1e-10 * top {
                        return Err(Error::NotPositiveDefinite { index: k, value: v });
                    }
                }
                let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
                Factor::Dense { cov, sqrt }
            }
        };
        Ok(Self {
            grid: grid.clone(),
            spec: *spec,
            factor,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    /// Fills `out` with one increment: covariance `dt * Lambda`.
    fn sample_slice(&self, rng: &mut ChaCha8Rng, out: &mut [f64], work: &mut Workspace) {
        let sdt = self.grid.dt().sqrt();
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        match &self.factor {
            Factor::White { scale } => {
                let s = sdt * scale;
                out.iter_mut().for_each(|v| *v *= s);
            }
            Factor::Circulant { sqrt_eigen, .. } => {
                work.real.copy_from_slice(out);
                self.grid.apply_symbol(
                    &work.real,
                    sqrt_eigen,
                    out,
                    &mut work.spec,
                    &mut work.spectral,
                );
                out.iter_mut().for_each(|v| *v *= sdt);
            }
            Factor::Dense { sqrt, .. } => {
                work.real.copy_from_slice(out);
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, z) in work.real.iter().enumerate() {
                        acc += sqrt[(i, j)] * z;
                    }
                    *o = sdt * acc;
                }
            }
        }
    }

    /// Draws a full path deterministically from `seed`.
    pub fn sample(&self, seed: u64) -> NoisePath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_x = self.grid.n_x();
        let n_t = self.grid.n_t();
        let mut increments = vec![0.0; n_t * n_x];
        let mut work = Workspace::new(&self.grid);
        for k in 0..n_t {
            self.sample_slice(&mut rng, &mut increments[k * n_x..(k + 1) * n_x], &mut work);
        }
        NoisePath {
            grid: self.grid.clone(),
            increments,
            seed,
        }
    }

    /// `(Lambda * h)(x_i) = sum_j Lambda(x_i - x_j) h_j dx`.
    pub fn smooth(&self, h: &[f64], out: &mut [f64]) {
        let dx = self.grid.dx();
        match &self.factor {
            Factor::White { .. } => out.copy_from_slice(h),
            Factor::Circulant { eigen, .. } => {
                let mut spec = self.grid.spectrum_vec();
                let mut work = self.grid.workspace();
                self.grid.apply_symbol(h, eigen, out, &mut spec, &mut work);
                out.iter_mut().for_each(|v| *v *= dx);
            }
            Factor::Dense { cov, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, v) in h.iter().enumerate() {
                        acc += cov[(i, j)] * v;
                    }
                    *o = acc * dx;
                }
            }
        }
    }

    /// `sum_{i,j} a_i b_j Lambda(x_i - x_j) dx^2`, exactly symmetric in `a` and `b`.
    pub fn slice_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let dx = self.grid.dx();
        match &self.factor {
            Factor::White { .. } => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * dx,
            Factor::Circulant { eigen, .. } => {
                let mut sa = self.grid.spectrum_vec();
                let mut sb = self.grid.spectrum_vec();
                let mut work = self.grid.workspace();
                self.grid.forward(a, &mut sa, &mut work);
                self.grid.forward(b, &mut sb, &mut work);
                let n = self.grid.n_x();
                let mut acc = 0.0;
                for (k, ((x, y), lam)) in sa.iter().zip(&sb).zip(eigen).enumerate() {
                    let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                    acc += w * lam * (x.re * y.re + x.im * y.im);
                }
                acc / n as f64 * dx * dx
            }
            Factor::Dense { cov, .. } => {
                let n = a.len();
                let mut acc = 0.0;
                for i in 0..n {
                    acc += a[i] * b[i] * cov[(i, i)];
                    for j in (i + 1)..n {
                        acc += (a[i] * b[j] + a[j] * b[i]) * cov[(i, j)];
                    }
                }
                acc * dx * dx
            }
        }
    }

    /// Cameron-Martin inner product of two grid elements.
    pub fn ht_inner(&self, phi: &CameronMartinElement, psi: &CameronMartinElement) -> Result<f64> {
        phi.check(&self.grid)?;
        psi.check(&self.grid)?;
        let dt = self.grid.dt();
        let mut acc = 0.0;
        for k in 0..self.grid.n_t() {
            let (a, b) = (phi.slice(k), psi.slice(k));
            if a.iter().all(|v| *v == 0.0) || b.iter().all(|v| *v == 0.0) {
                continue;
            }
            acc += dt * self.slice_inner(a, b);
        }
        Ok(acc)
    }

    /// Noise increments shifted along the Cameron-Martin direction `eps * h`:
    /// `dW_k + eps * dt * Lambda * h_k`.
    pub fn shift(&self, path: &NoisePath, h: &CameronMartinElement, eps: f64) -> Result<NoisePath> {
        h.check(&self.grid)?;
        let n_x = self.grid.n_x();
        let dt = self.grid.dt();
        let mut shifted = path.clone();
        let mut buf = vec![0.0; n_x];
        for k in 0..self.grid.n_t() {
            let hk = h.slice(k);
            if hk.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.smooth(hk, &mut buf);
            for (w, s) in shifted.increments[k * n_x..(k + 1) * n_x].iter_mut().zip(&buf) {
                *w += eps * dt * s;
            }
        }
        Ok(shifted)
    }
}

struct Workspace {
    real: Vec<f64>,
    spec: Vec<Complex64>,
    spectral: crate::grid::SpectralWork,
}

impl Workspace {
    fn new(grid: &SpaceTimeGrid) -> Self {
        Self {
            real: vec![0.0; grid.n_x()],
            spec: grid.spectrum_vec(),
            spectral: grid.workspace(),
        }
    }
}

/// Samples a noise path; see [`NoiseModel::sample`].
pub fn sample_noise(grid: &SpaceTimeGrid, spec: &CovarianceSpec, seed: u64) -> Result<NoisePath> {
    Ok(NoiseModel::new(grid, spec)?.sample(seed))
}

/// Gaussian increments `dW_k(x_i)`, one slice per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: SpaceTimeGrid,
    increments: Vec<f64>,
    seed: u64,
}

impl NoisePath {
    pub fn from_increments(grid: &SpaceTimeGrid, increments: Vec<f64>, seed: u64) -> Result<Self> {
        if increments.len() != grid.n_t() * grid.n_x() {
            return Err(Error::Contract(format!(
                "noise path has {} values, grid needs {}",
                increments.len(),
                grid.n_t() * grid.n_x()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            increments,
            seed,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_x();
        &self.increments[k * n..(k + 1) * n]
    }
    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.n_x();
        &mut self.increments[k * n..(k + 1) * n]
    }

    /// The first `n_t` steps, on the correspondingly shortened grid.
    pub fn truncated(&self, n_t: usize) -> Result<NoisePath> {
        if n_t > self.grid.n_t() {
            return Err(Error::Contract(format!(
                "cannot extend a {}-step path to {n_t} steps",
                self.grid.n_t()
            )));
        }
        let grid = self.grid.with_steps(n_t)?;
        Ok(NoisePath {
            increments: self.increments[..n_t * grid.n_x()].to_vec(),
            grid,
            seed: self.seed,
        })
    }
}

/// Element `h(t_k, x_i)` of the Cameron-Martin space, constant on each time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CameronMartinElement {
    n_t: usize,
    n_x: usize,
    values: Vec<f64>,
}

impl CameronMartinElement {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            n_t: grid.n_t(),
            n_x: grid.n_x(),
            values: vec![0.0; grid.n_t() * grid.n_x()],
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut h = Self::zeros(grid);
        for k in 0..grid.n_t() {
            let t = grid.t(k);
            for (i, v) in h.slice_mut(k).iter_mut().enumerate() {
                *v = f(t, grid.x(i));
            }
        }
        h
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_x..(k + 1) * self.n_x]
    }
    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_x..(k + 1) * self.n_x]
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n_t: self.n_t,
            n_x: self.n_x,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            n_t: self.n_t,
            n_x: self.n_x,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    fn check(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.n_t == grid.n_t() && self.n_x == grid.n_x() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "Cameron-Martin element {}x{} does not match grid {}x{}",
                self.n_t,
                self.n_x,
                grid.n_t(),
                grid.n_x()
            )))
        }
    }
}

/// `<phi, psi>_{H_T}` for the given covariance.
pub fn ht_inner(
    phi: &CameronMartinElement,
    psi: &CameronMartinElement,
    model: &NoiseModel,
) -> Result<f64> {
    model.ht_inner(phi, psi)
}

/// Wiener integral `sum_k sum_i phi_k(x_i) dW_k(x_i) dx` of a deterministic integrand.
pub fn wiener_integral(phi: &CameronMartinElement, path: &NoisePath) -> Result<f64> {
    phi.check(path.grid())?;
    let dx = path.grid().dx();
    Ok(phi
        .values
        .iter()
        .zip(&path.increments)
        .map(|(a, w)| a * w)
        .sum::<f64>()
        * dx)
}
