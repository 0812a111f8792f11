//! Space-time discretization and heat-kernel operations.
//!
//! The spatial domain `[-L, L)` is sampled at `n_x` nodes `x_i = -L + i*dx`. With the
//! periodic boundary the heat semigroup is applied spectrally with the exact continuum
//! symbol `exp(-t xi^2 / 2)`; the truncated-absorbing debug mode zero-pads to twice the
//! length so mass leaving `[-L, L)` is lost instead of wrapping around.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    TruncatedAbsorbing,
}

struct FftPlans {
    len: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    freqs: Vec<f64>,
}

/// Uniform discretization of `[0, T] x [-L, L)`.
#[derive(Clone)]
pub struct SpaceTimeGrid {
    t_max: f64,
    n_t: usize,
    half_width: f64,
    n_x: usize,
    dim: usize,
    boundary: Boundary,
    plans: Arc<FftPlans>,
}

impl fmt::Debug for SpaceTimeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpaceTimeGrid")
            .field("t_max", &self.t_max)
            .field("n_t", &self.n_t)
            .field("half_width", &self.half_width)
            .field("n_x", &self.n_x)
            .field("dim", &self.dim)
            .field("boundary", &self.boundary)
            .finish()
    }
}

impl PartialEq for SpaceTimeGrid {
    fn eq(&self, other: &Self) -> bool {
        self.t_max == other.t_max
            && self.n_t == other.n_t
            && self.half_width == other.half_width
            && self.n_x == other.n_x
            && self.dim == other.dim
            && self.boundary == other.boundary
    }
}

/// Scratch space for spectral transforms. One per thread of work.
pub struct SpectralWork {
    real: Vec<f64>,
    fwd_scratch: Vec<Complex64>,
    inv_scratch: Vec<Complex64>,
}

impl SpaceTimeGrid {
    pub fn new(
        t_max: f64,
        n_t: usize,
        half_width: f64,
        n_x: usize,
        boundary: Boundary,
    ) -> Result<Self> {
        Self::with_dim(t_max, n_t, half_width, n_x, 1, boundary)
    }

    /// Only `dim == 1` is implemented; other dimensions are rejected.
    pub fn with_dim(
        t_max: f64,
        n_t: usize,
        half_width: f64,
        n_x: usize,
        dim: usize,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) || n_t == 0 {
            return Err(Error::Domain(format!(
                "time grid needs t_max > 0 and n_t > 0 (got {t_max}, {n_t})"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) || n_x < 2 {
            return Err(Error::Domain(format!(
                "space grid needs L > 0 and n_x >= 2 (got {half_width}, {n_x})"
            )));
        }
        if dim != 1 {
            return Err(Error::Unsupported(format!(
                "spatial dimension {dim}; only d = 1 is implemented"
            )));
        }
        if boundary == Boundary::Periodic && !n_x.is_power_of_two() {
            return Err(Error::Domain(format!(
                "periodic grids need a power-of-two n_x (got {n_x})"
            )));
        }
        let len = match boundary {
            Boundary::Periodic => n_x,
            Boundary::TruncatedAbsorbing => 2 * n_x,
        };
        let dx = 2.0 * half_width / n_x as f64;
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let freqs = (0..=len / 2)
            .map(|k| 2.0 * PI * k as f64 / (len as f64 * dx))
            .collect();
        Ok(Self {
            t_max,
            n_t,
            half_width,
            n_x,
            dim,
            boundary,
            plans: Arc::new(FftPlans {
                len,
                forward,
                inverse,
                freqs,
            }),
        })
    }

    /// Same spacing, horizon cut to `n_t` steps.
    pub fn with_steps(&self, n_t: usize) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::Domain("n_t must be positive".into()));
        }
        let mut g = self.clone();
        g.t_max = self.dt() * n_t as f64;
        g.n_t = n_t;
        Ok(g)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
    pub fn dt(&self) -> f64 {
        self.t_max / self.n_t as f64
    }
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_x as f64
    }
    /// Number of stored time slices, `t_0 = 0` through `t_{n_t} = T`.
    pub fn n_slices(&self) -> usize {
        self.n_t + 1
    }
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }
    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }
    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    /// Index of the node at `x`, if `x` is a grid node.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let s = (x + self.half_width) / self.dx();
        let i = s.round();
        ((s - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.n_x).then_some(i as usize)
    }

    /// Index of the time level at `t`, if `t` is one.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let s = t / self.dt();
        let k = s.round();
        ((s - k).abs() < 1e-9 && k >= 0.0 && (k as usize) <= self.n_t).then_some(k as usize)
    }

    /// Distance used by spatial weights: wrapped on the torus, plain otherwise.
    pub fn distance(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        match self.boundary {
            Boundary::Periodic => {
                let period = 2.0 * self.half_width;
                let d = d % period;
                d.min(period - d)
            }
            Boundary::TruncatedAbsorbing => d,
        }
    }

    /// Angular frequencies of the real-FFT bins.
    pub fn frequencies(&self) -> &[f64] {
        &self.plans.freqs
    }

    /// Heat symbol `exp(-t xi^2 / 2)` per frequency bin.
    pub fn heat_symbol(&self, t: f64) -> Vec<f64> {
        self.plans
            .freqs
            .iter()
            .map(|xi| (-0.5 * t * xi * xi).exp())
            .collect()
    }

    /// Symbol applied to a noise increment over one step.
    ///
    /// `sqrt((1 - exp(-dt xi^2)) / (dt xi^2))` makes the variance injected per step equal
    /// to `int_0^dt exp(-s xi^2) ds`, the exact one-step contribution of the continuum
    /// stochastic convolution in mode `xi`.
    pub fn increment_symbol(&self) -> Vec<f64> {
        let dt = self.dt();
        self.plans
            .freqs
            .iter()
            .map(|xi| {
                let a = dt * xi * xi;
                if a < 1e-12 {
                    1.0 - 0.25 * a
                } else {
                    (-(-a).exp_m1() / a).sqrt()
                }
            })
            .collect()
    }

    pub fn workspace(&self) -> SpectralWork {
        SpectralWork {
            real: vec![0.0; self.plans.len],
            fwd_scratch: self.plans.forward.make_scratch_vec(),
            inv_scratch: self.plans.inverse.make_scratch_vec(),
        }
    }

    pub fn spectrum_vec(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.plans.len / 2 + 1]
    }

    /// Forward real transform of a spatial slice (zero-padded when truncated).
    pub fn forward(&self, slice: &[f64], spec: &mut [Complex64], work: &mut SpectralWork) {
        debug_assert_eq!(slice.len(), self.n_x);
        work.real[..self.n_x].copy_from_slice(slice);
        work.real[self.n_x..].fill(0.0);
        self.plans
            .forward
            .process_with_scratch(&mut work.real, spec, &mut work.fwd_scratch)
            .expect("fft buffer sizes are fixed by the grid");
    }

    /// Inverse transform, normalized, cropped to the grid. Consumes `spec`.
    pub fn inverse(&self, spec: &mut [Complex64], out: &mut [f64], work: &mut SpectralWork) {
        debug_assert_eq!(out.len(), self.n_x);
        let len = self.plans.len;
        spec[0].im = 0.0;
        if len % 2 == 0 {
            spec[len / 2].im = 0.0;
        }
        self.plans
            .inverse
            .process_with_scratch(spec, &mut work.real, &mut work.inv_scratch)
            .expect("fft buffer sizes are fixed by the grid");
        let scale = 1.0 / len as f64;
        for (o, r) in out.iter_mut().zip(&work.real[..self.n_x]) {
            *o = r * scale;
        }
    }

    /// `out = F^{-1}[symbol * F[slice]]`.
    pub fn apply_symbol(
        &self,
        slice: &[f64],
        symbol: &[f64],
        out: &mut [f64],
        spec: &mut [Complex64],
        work: &mut SpectralWork,
    ) {
        self.forward(slice, spec, work);
        for (c, s) in spec.iter_mut().zip(symbol) {
            *c *= *s;
        }
        self.inverse(spec, out, work);
    }
}

/// A fixed Fourier multiplier with its own buffers, for repeated use inside time loops.
pub struct SpectralFilter {
    grid: SpaceTimeGrid,
    symbol: Vec<f64>,
    spec: Vec<Complex64>,
    work: SpectralWork,
}

impl SpectralFilter {
    pub fn new(grid: &SpaceTimeGrid, symbol: Vec<f64>) -> Self {
        Self {
            spec: grid.spectrum_vec(),
            work: grid.workspace(),
            grid: grid.clone(),
            symbol,
        }
    }

    /// The semigroup `S(t)`.
    pub fn heat(grid: &SpaceTimeGrid, t: f64) -> Self {
        Self::new(grid, grid.heat_symbol(t))
    }

    /// The one-step noise increment filter of [`SpaceTimeGrid::increment_symbol`].
    pub fn increment(grid: &SpaceTimeGrid) -> Self {
        Self::new(grid, grid.increment_symbol())
    }

    pub fn apply(&mut self, input: &[f64], out: &mut [f64]) {
        self.grid
            .apply_symbol(input, &self.symbol, out, &mut self.spec, &mut self.work);
    }

    /// `out = F^{-1}[symbol F[a] + other_symbol F[b]]`, one inverse transform for two inputs.
    pub fn apply_pair(
        &mut self,
        a: &[f64],
        other: &mut SpectralFilter,
        b: &[f64],
        out: &mut [f64],
    ) {
        self.grid.forward(a, &mut self.spec, &mut self.work);
        other.grid.forward(b, &mut other.spec, &mut other.work);
        for ((c, s), (d, t)) in self
            .spec
            .iter_mut()
            .zip(&self.symbol)
            .zip(other.spec.iter().zip(&other.symbol))
        {
            *c = *c * *s + *d * *t;
        }
        self.grid.inverse(&mut self.spec, out, &mut self.work);
    }
}

/// `G(t, x) = (2 pi t)^{-d/2} exp(-|x|^2 / (2t))`, the fundamental solution of `u_t = u_xx / 2`.
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs t > 0 (got {t})")));
    }
    let d = x.len().max(1) as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI * t).powf(-0.5 * d) * (-r2 / (2.0 * t)).exp())
}

/// Heat semigroup `G(t) * slice` on the grid.
pub fn semigroup_apply(slice: &[f64], t: f64, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    if slice.len() != grid.n_x() {
        return Err(Error::Contract(format!(
            "slice has {} values, grid has {}",
            slice.len(),
            grid.n_x()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("semigroup time must be >= 0 (got {t})")));
    }
    if t == 0.0 {
        return Ok(slice.to_vec());
    }
    let mut out = vec![0.0; grid.n_x()];
    let mut spec = grid.spectrum_vec();
    let mut work = grid.workspace();
    grid.apply_symbol(slice, &grid.heat_symbol(t), &mut out, &mut spec, &mut work);
    Ok(out)
}

/// Outcome of [`weighted_convolution_bound_check`].
#[derive(Debug, Clone)]
pub struct BoundReport {
    /// Smallest `C` validating the bound on the sampled offsets.
    pub constant: f64,
    /// Left side at `x = x0`.
    pub lhs_at_center: f64,
    /// `(x - x0, lhs, 1 + t^{theta/2} + |x - x0|^theta)` per sample.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Checks `int G(t, x - y)(1 + |y - x0|^theta) dy <= C (1 + t^{theta/2} + |x - x0|^theta)`.
///
/// The left side is `E[1 + |x - x0 + sqrt(t) Z|^theta]`, evaluated by trapezoid quadrature
/// in `Z` on `[-12, 12]`; `x - x0` is swept over `[-R, R]` with `R = 8 (1 + sqrt t)`.
/// The result is independent of `x0`, which only shifts the sampled offsets.
pub fn weighted_convolution_bound_check(theta: f64, t: f64, x0: f64) -> Result<BoundReport> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("theta must be > 0 (got {theta})")));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time lag must be > 0 (got {t})")));
    }
    let _ = x0;
    let st = t.sqrt();
    // E[1 + |offset + sqrt(t) Z|^theta], split at the kink so Simpson stays high order
    let lhs = |offset: f64| -> f64 {
        let integrand = |z: f64| {
            let g = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
            g * (1.0 + (offset + st * z).abs().powf(theta))
        };
        let kink = (-offset / st).clamp(-12.0, 12.0);
        simpson_segment(&integrand, -12.0, kink) + simpson_segment(&integrand, kink, 12.0)
    };
    let radius = 8.0 * (1.0 + st);
    let n = 201;
    let mut samples = Vec::with_capacity(n);
    let mut constant: f64 = 0.0;
    for j in 0..n {
        let off = -radius + 2.0 * radius * j as f64 / (n - 1) as f64;
        let l = lhs(off);
        let r = 1.0 + t.powf(0.5 * theta) + off.abs().powf(theta);
        if !l.is_finite() || !r.is_finite() {
            return Err(Error::NonFinite("weighted convolution bound".into()));
        }
        constant = constant.max(l / r);
        samples.push((off, l, r));
    }
    Ok(BoundReport {
        constant,
        lhs_at_center: lhs(0.0),
        samples,
    })
}

fn simpson_segment(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const M: usize = 12_000;
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / M as f64;
    let mut acc = f(a) + f(b);
    for j in 1..M {
        acc += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Constant in `|y|^theta G(t, y) <= C t^{theta/2} G(2t, y)` (d = 1).
///
/// `|y|^theta G(t,y) / (t^{theta/2} G(2t,y)) = sqrt(2) |w|^theta exp(-w^2/4)` with
/// `w = y / sqrt(t)`, maximized at `w^2 = 2 theta`.
pub fn kernel_absorption_constant(theta: f64) -> f64 {
    2f64.sqrt() * (2.0 * theta / std::f64::consts::E).powf(0.5 * theta)
}

/// Real field sampled on every time level of a grid, stored slice by slice.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    n_slices: usize,
    n_x: usize,
    values: Vec<f64>,
}

impl RandomField {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self::zeros_with(grid.n_slices(), grid.n_x())
    }

    pub(crate) fn zeros_with(n_slices: usize, n_x: usize) -> Self {
        Self {
            n_slices,
            n_x,
            values: vec![0.0; n_slices * n_x],
        }
    }

    /// Samples `f(t, x)` at every node.
    pub fn from_fn(grid: &SpaceTimeGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for k in 0..grid.n_slices() {
            let t = grid.t(k);
            for (i, v) in field.slice_mut(k).iter_mut().enumerate() {
                *v = f(t, grid.x(i));
            }
        }
        field
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_slices() * grid.n_x() {
            return Err(Error::Contract(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.n_slices() * grid.n_x()
            )));
        }
        Ok(Self {
            n_slices: grid.n_slices(),
            n_x: grid.n_x(),
            values,
        })
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_x..(k + 1) * self.n_x]
    }
    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_x..(k + 1) * self.n_x]
    }
    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_x + i]
    }

    pub fn matches(&self, grid: &SpaceTimeGrid) -> bool {
        self.n_slices == grid.n_slices() && self.n_x == grid.n_x()
    }

    pub fn check_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "field shape {}x{} does not match grid {}x{}",
                self.n_slices,
                self.n_x,
                grid.n_slices(),
                grid.n_x()
            )))
        }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Pointwise `self + other`.
    pub fn add(&self, other: &RandomField) -> RandomField {
        assert_eq!(self.values.len(), other.values.len());
        RandomField {
            n_slices: self.n_slices,
            n_x: self.n_x,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Writes `self + other` into `out`, reusing its storage.
    pub fn sum_into(&self, other: &RandomField, out: &mut RandomField) {
        assert_eq!(self.values.len(), other.values.len());
        assert_eq!(self.values.len(), out.values.len());
        for ((o, a), b) in out.values.iter_mut().zip(&self.values).zip(&other.values) {
            *o = a + b;
        }
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &RandomField) -> RandomField {
        assert_eq!(self.values.len(), other.values.len());
        RandomField {
            n_slices: self.n_slices,
            n_x: self.n_x,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> RandomField {
        RandomField {
            n_slices: self.n_slices,
            n_x: self.n_x,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
