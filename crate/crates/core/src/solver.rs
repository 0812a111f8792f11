//! Picard iteration for the mild equation
//!
//! ```text
//! u = S(t) u0 + G * f(u) + I(sigma(u)),   I(X)(t) = int_0^t S(t - s) X(s) W(ds),
//! ```
//!
//! written as `u_{n+1} = M(U0 + Z_{n+1})` with `Z_{n+1} = I(sigma(u_n))` and `u_0 = U0`.
//! The stochastic convolution uses the left point (Ito) and the recursion
//! `I_{k+1} = S(dt) I_k + P (X_k dW_k)`, where `P` is the one-step increment filter of the grid.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::det_map::{csv_err, MapSolver, WeightedNorm};
use crate::error::{Error, Result};
use crate::grid::{Boundary, RandomField, SpaceTimeGrid};
use crate::noise::{NoiseModel, NoisePath};
use crate::reaction::ReactionFn;
use realfft::num_complex::Complex64;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const SWEEP_HALF_WIDTH: f64 = 10.0;
const SWEEP_POINTS: usize = 20_001;

/// Diffusion coefficient `sigma` with lower bound `alpha` and derivative bound.
#[derive(Clone)]
pub struct Diffusion {
    name: String,
    sigma: ScalarFn,
    dsigma: ScalarFn,
    alpha: f64,
    lipschitz: f64,
    constant: bool,
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffusion")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Diffusion {
    /// Builds a coefficient and checks `sigma >= alpha` and `|sigma'| <= lipschitz` on `[-10, 10]`.
    pub fn new(
        name: impl Into<String>,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dsigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        let d = Self {
            name: name.into(),
            sigma: Arc::new(sigma),
            dsigma: Arc::new(dsigma),
            alpha,
            lipschitz,
            constant: false,
        };
        let h = 2.0 * SWEEP_HALF_WIDTH / (SWEEP_POINTS - 1) as f64;
        for j in 0..SWEEP_POINTS {
            let u = -SWEEP_HALF_WIDTH + j as f64 * h;
            let (s, ds) = (d.eval(u), d.deriv(u));
            if !(s >= alpha - 1e-12) {
                return Err(d.invalid(format!("sigma({u}) = {s} is below alpha = {alpha}")));
            }
            if !(ds.abs() <= lipschitz + 1e-12) {
                return Err(d.invalid(format!("|sigma'({u})| = {} exceeds {lipschitz}", ds.abs())));
            }
        }
        Ok(d)
    }

    fn invalid(&self, reason: String) -> Error {
        Error::InvalidCoefficient {
            name: self.name.clone(),
            reason,
        }
    }

    /// `sigma = c`; `alpha = c`. `c = 0` gives the deterministic equation.
    pub fn constant(c: f64) -> Self {
        let mut d = Self::new("constant", move |_| c, |_| 0.0, c, 0.0).expect("catalogue coefficient");
        d.constant = true;
        d
    }

    /// `sigma(u) = 1 + 0.1 sin u`, `alpha = 0.9`.
    pub fn sine() -> Self {
        Self::new("sine", |u| 1.0 + 0.1 * u.sin(), |u| 0.1 * u.cos(), 0.9, 0.1)
            .expect("catalogue coefficient")
    }

    /// `sigma(u) = sqrt(1 + u^2)`, `alpha = 1`, `|sigma'| <= 1`.
    pub fn sqrt() -> Self {
        Self::new(
            "sqrt",
            |u| (1.0 + u * u).sqrt(),
            |u| u / (1.0 + u * u).sqrt(),
            1.0,
            1.0,
        )
        .expect("catalogue coefficient")
    }

    /// Catalogue lookup; `value` is only read by `constant`.
    pub fn from_name(name: &str, value: f64) -> Result<Self> {
        match name {
            "constant" => Ok(Self::constant(value)),
            "sine" => Ok(Self::sine()),
            "sqrt" => Ok(Self::sqrt()),
            other => Err(Error::config(
                "sigma.name",
                format!("unknown diffusion `{other}` (constant, sine, sqrt)"),
            )),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn eval(&self, u: f64) -> f64 {
        (self.sigma)(u)
    }
    pub fn deriv(&self, u: f64) -> f64 {
        (self.dsigma)(u)
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    /// Replaces `alpha` by a smaller declared lower bound.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= self.alpha) {
            return Err(Error::config(
                "sigma.alpha",
                format!("alpha = {alpha} must lie in (0, {}] for `{}`", self.alpha, self.name),
            ));
        }
        self.alpha = alpha;
        Ok(self)
    }
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    /// True for `sigma` independent of `u`.
    pub fn is_constant(&self) -> bool {
        self.constant
    }
}

/// Bounded initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Constant { value: f64 },
    /// `amplitude exp(-(x - center)^2 / (2 width^2))`.
    GaussianBump { amplitude: f64, width: f64, center: f64 },
}

impl InitialCondition {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialCondition::Constant { value } => value,
            InitialCondition::GaussianBump {
                amplitude,
                width,
                center,
            } => amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp(),
        }
    }

    /// Closed-form heat evolution `S(t) u0` on the real line.
    pub fn evolved(&self, t: f64, x: f64) -> f64 {
        match *self {
            InitialCondition::Constant { value } => value,
            InitialCondition::GaussianBump {
                amplitude,
                width,
                center,
            } => {
                let v = width * width + t;
                amplitude * width / v.sqrt() * (-(x - center).powi(2) / (2.0 * v)).exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialCondition::Constant { value } => value.is_finite(),
            InitialCondition::GaussianBump {
                amplitude,
                width,
                center,
            } => amplitude.is_finite() && width > 0.0 && center.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("initial", format!("invalid initial condition {self:?}")))
        }
    }
}

/// `U0(t_k) = S(t_k) u0` on the grid.
pub fn initial_field(u0: &InitialCondition, grid: &SpaceTimeGrid) -> RandomField {
    let first: Vec<f64> = grid.xs().iter().map(|&x| u0.eval(x)).collect();
    let mut field = RandomField::zeros(grid);
    field.slice_mut(0).copy_from_slice(&first);
    let mut spec = grid.spectrum_vec();
    let mut work = grid.workspace();
    let mut out = vec![0.0; grid.n_x()];
    for k in 1..grid.n_slices() {
        grid.apply_symbol(&first, &grid.heat_symbol(grid.t(k)), &mut out, &mut spec, &mut work);
        field.slice_mut(k).copy_from_slice(&out);
    }
    field
}

/// Everything that defines one equation on one grid.
#[derive(Debug, Clone)]
pub struct SpdeProblem {
    pub grid: SpaceTimeGrid,
    pub reaction: ReactionFn,
    pub diffusion: Diffusion,
    pub initial: InitialCondition,
    pub noise: NoiseModel,
    pub weight: WeightedNorm,
}

impl SpdeProblem {
    pub fn new(
        noise: NoiseModel,
        reaction: ReactionFn,
        diffusion: Diffusion,
        initial: InitialCondition,
        weight: WeightedNorm,
    ) -> Result<Self> {
        weight.check_reaction(&reaction)?;
        initial.validate()?;
        Ok(Self {
            grid: noise.grid().clone(),
            reaction,
            diffusion,
            initial,
            noise,
            weight,
        })
    }

    /// Same problem on the first `n_t` steps of the grid.
    pub fn truncated(&self, n_t: usize) -> Result<Self> {
        let grid = self.grid.with_steps(n_t)?;
        let noise = NoiseModel::new(&grid, self.noise.spec())?;
        Ok(Self {
            grid,
            noise,
            ..self.clone()
        })
    }
}

/// Stopping rule of the Picard loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub n_max: usize,
    pub stop_tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            n_max: 25,
            stop_tol: 1e-5,
        }
    }
}

/// Reusable stochastic-convolution operator for one grid.
pub struct Convolver {
    grid: SpaceTimeGrid,
    heat: Vec<f64>,
    increment: Vec<f64>,
    acc: Vec<Complex64>,
    spec: Vec<Complex64>,
    tmp: Vec<Complex64>,
    work: crate::grid::SpectralWork,
    buf: Vec<f64>,
}

impl Convolver {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            heat: grid.heat_symbol(grid.dt()),
            increment: grid.increment_symbol(),
            acc: grid.spectrum_vec(),
            spec: grid.spectrum_vec(),
            tmp: grid.spectrum_vec(),
            work: grid.workspace(),
            buf: vec![0.0; grid.n_x()],
        }
    }

    /// Writes `I(integrand(t_k, .))` into `out`, with the integrand given per slice by `g`.
    pub fn convolve_with(
        &mut self,
        path: &NoisePath,
        out: &mut RandomField,
        mut g: impl FnMut(usize, usize) -> f64,
    ) -> Result<()> {
        if path.grid() != &self.grid {
            return Err(Error::Contract("noise path and grid differ".into()));
        }
        out.check_grid(&self.grid)?;
        let periodic = self.grid.boundary() == Boundary::Periodic;
        self.acc.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        out.slice_mut(0).fill(0.0);
        for k in 0..self.grid.n_t() {
            let dw = path.slice(k);
            for (i, b) in self.buf.iter_mut().enumerate() {
                *b = g(k, i) * dw[i];
            }
            self.grid.forward(&self.buf, &mut self.spec, &mut self.work);
            if !periodic {
                // absorbing: restart from the cropped field
                self.grid.forward(out.slice(k), &mut self.acc, &mut self.work);
            }
            for (((a, s), h), p) in self.acc.iter_mut().zip(&self.spec).zip(&self.heat).zip(&self.increment) {
                *a = *a * *h + *s * *p;
            }
            self.tmp.copy_from_slice(&self.acc);
            self.grid.inverse(&mut self.tmp, out.slice_mut(k + 1), &mut self.work);
        }
        Ok(())
    }
}

/// `I(integrand)` on `path`.
pub fn stochastic_convolution(
    integrand: &RandomField,
    path: &NoisePath,
    grid: &SpaceTimeGrid,
) -> Result<RandomField> {
    integrand.check_grid(grid)?;
    let mut out = RandomField::zeros(grid);
    Convolver::new(grid).convolve_with(path, &mut out, |k, i| integrand.at(k, i))?;
    Ok(out)
}

/// Final state of a Picard run.
#[derive(Debug, Clone)]
pub struct PicardState {
    /// Number of map solves performed.
    pub n: usize,
    pub u: RandomField,
    /// Last stochastic convolution `Z_n`.
    pub z: RandomField,
    /// `||u_{n+1} - u_n||` in the weighted norm, starting with `||u_1 - U0||`.
    pub deltas: Vec<f64>,
}

/// Converged field with its trace.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub u: RandomField,
    pub state: PicardState,
    /// Residual certificate of the last map solve.
    pub map_residual: f64,
}

/// Picard solver with buffers reused across paths.
pub struct PicardSolver {
    problem: SpdeProblem,
    options: PicardOptions,
    map: MapSolver,
    conv: Convolver,
    u_init: RandomField,
    weights: Vec<f64>,
}

impl PicardSolver {
    pub fn new(problem: &SpdeProblem, options: PicardOptions) -> Result<Self> {
        if options.n_max == 0 || !(options.stop_tol > 0.0) {
            return Err(Error::Domain("picard needs n_max >= 1 and stop_tol > 0".into()));
        }
        let grid = &problem.grid;
        Ok(Self {
            map: MapSolver::new(grid, &problem.reaction),
            conv: Convolver::new(grid),
            u_init: initial_field(&problem.initial, grid),
            weights: problem.weight.weights(grid),
            problem: problem.clone(),
            options,
        })
    }

    pub fn problem(&self) -> &SpdeProblem {
        &self.problem
    }

    /// `U0`.
    pub fn initial(&self) -> &RandomField {
        &self.u_init
    }

    pub fn solve(&mut self, path: &NoisePath) -> Result<PicardSolution> {
        let grid = self.problem.grid.clone();
        let sigma = self.problem.diffusion.clone();
        let mut u = self.u_init.clone();
        let mut next = RandomField::zeros(&grid);
        let mut z = RandomField::zeros(&grid);
        let mut input = RandomField::zeros(&grid);
        let mut deltas = Vec::new();
        // A constant diffusion makes the stochastic convolution independent of the iterate.
        let constant = sigma.is_constant().then(|| sigma.eval(0.0));
        for n in 1..=self.options.n_max {
            match constant {
                Some(c) if c == 0.0 => {}
                Some(c) if n == 1 => self.conv.convolve_with(path, &mut z, |_, _| c)?,
                Some(_) => {}
                None => {
                    let current = &u;
                    self.conv
                        .convolve_with(path, &mut z, |k, i| sigma.eval(current.at(k, i)))?;
                }
            }
            self.u_init.sum_into(&z, &mut input);
            self.map.solve_into(&input, &mut next, false)?;
            let delta = weighted_diff(&next, &u, &self.weights);
            deltas.push(delta);
            std::mem::swap(&mut u, &mut next);
            if delta < self.options.stop_tol {
                let report = self.map.solve(&input)?;
                return Ok(PicardSolution {
                    u: report.solution,
                    state: PicardState { n, u, z, deltas },
                    map_residual: report.residual,
                });
            }
            if !delta.is_finite() {
                break;
            }
        }
        Err(Error::PicardDivergence {
            iterations: deltas.len(),
            deltas,
        })
    }

    /// `||u - M(U0 + I(sigma(u)))||` in the weighted norm.
    pub fn mild_defect(&mut self, path: &NoisePath, u: &RandomField) -> Result<f64> {
        let grid = self.problem.grid.clone();
        let sigma = self.problem.diffusion.clone();
        let mut z = RandomField::zeros(&grid);
        self.conv.convolve_with(path, &mut z, |k, i| sigma.eval(u.at(k, i)))?;
        let report = self.map.solve(&self.u_init.add(&z))?;
        Ok(weighted_diff(u, &report.solution, &self.weights) + report.residual)
    }
}

fn weighted_diff(a: &RandomField, b: &RandomField, weights: &[f64]) -> f64 {
    let n = weights.len();
    a.values()
        .chunks_exact(n)
        .zip(b.values().chunks_exact(n))
        .flat_map(|(sa, sb)| sa.iter().zip(sb).zip(weights).map(|((x, y), w)| (x - y).abs() / w))
        .fold(0.0, f64::max)
}

/// Solves one path.
pub fn picard_solve(
    problem: &SpdeProblem,
    path: &NoisePath,
    options: PicardOptions,
) -> Result<PicardSolution> {
    PicardSolver::new(problem, options)?.solve(path)
}

/// Summary of a delta history.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub deltas: Vec<f64>,
    /// `exp(slope)` of the least-squares fit of `log delta_n`; `None` with fewer than 3 usable deltas.
    pub rate: Option<f64>,
    /// Whether every usable delta is below its predecessor.
    pub geometric: bool,
}

/// Deltas at or below this floor are excluded from the fit.
pub const DELTA_FLOOR: f64 = 1e-14;

pub fn convergence_report(deltas: &[f64]) -> ConvergenceReport {
    let usable: Vec<(f64, f64)> = deltas
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > DELTA_FLOOR)
        .map(|(n, d)| (n as f64, d.ln()))
        .collect();
    let rate = if usable.len() >= 3 {
        let m = usable.len() as f64;
        let mx = usable.iter().map(|p| p.0).sum::<f64>() / m;
        let my = usable.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = usable.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        Some((sxy / sxx).exp())
    } else {
        None
    };
    let geometric = usable.windows(2).all(|w| w[1].1 < w[0].1);
    ConvergenceReport {
        deltas: deltas.to_vec(),
        rate,
        geometric,
    }
}

/// CSV with columns `n,delta,rate`, where `rate` is `delta_n / delta_{n-1}`.
pub fn write_trace_csv<W: Write>(deltas: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "delta", "rate"]).map_err(csv_err)?;
    for (n, d) in deltas.iter().enumerate() {
        let rate = if n == 0 || deltas[n - 1] == 0.0 {
            String::new()
        } else {
            (d / deltas[n - 1]).to_string()
        };
        w.write_record(&[(n + 1).to_string(), d.to_string(), rate]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
