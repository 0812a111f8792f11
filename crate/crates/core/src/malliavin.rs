//! Directional Malliavin derivatives along heat-kernel probes.
//!
//! The discrete solution satisfies the one-step relation
//!
//! ```text
//! u_{k+1} = J_dt( S (1 + kappa dt) u_k + P(sigma(u_k) dW_k) + U0_{k+1} - S U0_k ),
//! ```
//!
//! and shifting the noise by `eps h` adds `eps dt (Lambda h_k) dx` to `dW_k`. Differentiating in
//! `eps` gives the tangent recursion solved here,
//!
//! ```text
//! v_{k+1} = [S (1 + kappa dt) v_k + P(sigma'(u_k) v_k dW_k) + P(sigma(u_k) dt (Lambda h_k) dx)]
//!           / (1 - dt phi'(u_{k+1})),
//! ```
//!
//! which is the discrete form of `v = <G sigma(u), h> + G * (f'(u) v) + I(sigma'(u) v)`.
//! The three parts are propagated separately so that they add up to `v`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::det_map::{csv_err, WeightedNorm};
use crate::error::{Error, Result};
use crate::grid::{RandomField, SpaceTimeGrid, SpectralFilter};
use crate::noise::{derive_seed, CameronMartinElement, NoisePath};
use crate::reaction::Monotone;
use crate::solver::{PicardOptions, PicardSolver, SpdeProblem};

/// Picard options used around derivative computations, where the base solution must be a
/// fixed point to near machine precision.
pub const TIGHT_PICARD: PicardOptions = PicardOptions {
    n_max: 80,
    stop_tol: 1e-12,
};

/// Relative tolerance of the decomposition check.
pub const DECOMPOSITION_TOL: f64 = 1e-6;

/// Smallest admissible window, in time steps.
pub const MIN_WINDOW_STEPS: usize = 4;

/// Probe direction `h(r, .) = G_grid(t0 - r, x0 - .)` for `r` in `[t0 - delta, t0)`.
///
/// `G_grid(m dt)` is the grid-resolved kernel `S((m - 1) dt) P delta_{x0} / dx`, the same object
/// that carries a unit increment at `t0 - m dt` to `(t0, x0)` in the solver.
#[derive(Debug, Clone)]
pub struct MalliavinProbe {
    pub t0: f64,
    pub x0: f64,
    pub delta: f64,
    /// Time index of `t0`.
    pub n0: usize,
    /// Space index of `x0`.
    pub i0: usize,
    /// Number of steps in the window.
    pub window: usize,
    pub h: CameronMartinElement,
}

impl MalliavinProbe {
    /// `t0` and `x0` must be grid nodes and `delta` a positive multiple of `dt` not exceeding `t0`.
    pub fn new(grid: &SpaceTimeGrid, t0: f64, x0: f64, delta: f64) -> Result<Self> {
        let n0 = grid
            .time_index(t0)
            .ok_or_else(|| Error::Domain(format!("probe time {t0} is not a grid time")))?;
        let i0 = grid
            .node_index(x0)
            .ok_or_else(|| Error::Domain(format!("probe point {x0} is not a grid node")))?;
        let steps = delta / grid.dt();
        let window = steps.round() as usize;
        if !(delta > 0.0) || (steps - window as f64).abs() > 1e-9 * steps.max(1.0) || window == 0 {
            return Err(Error::Domain(format!(
                "delta = {delta} must be a positive multiple of dt = {}",
                grid.dt()
            )));
        }
        if window > n0 {
            return Err(Error::Domain(format!("delta = {delta} exceeds t0 = {t0}")));
        }
        let kernels = grid_kernels(grid, i0, window);
        let mut h = CameronMartinElement::zeros(grid);
        for m in 1..=window {
            h.slice_mut(n0 - m).copy_from_slice(&kernels[m - 1]);
        }
        Ok(Self {
            t0: grid.t(n0),
            x0: grid.x(i0),
            delta: window as f64 * grid.dt(),
            n0,
            i0,
            window,
            h,
        })
    }
}

/// `[S((m - 1) dt) P delta_{i0} / dx]` for `m = 1..=window`.
fn grid_kernels(grid: &SpaceTimeGrid, i0: usize, window: usize) -> Vec<Vec<f64>> {
    let n = grid.n_x();
    let mut spike = vec![0.0; n];
    spike[i0] = 1.0 / grid.dx();
    let mut first = vec![0.0; n];
    SpectralFilter::increment(grid).apply(&spike, &mut first);
    let mut heat = SpectralFilter::heat(grid, grid.dt());
    let mut out = Vec::with_capacity(window);
    out.push(first);
    for m in 1..window {
        let mut next = vec![0.0; n];
        heat.apply(&out[m - 1], &mut next);
        out.push(next);
    }
    out
}

/// The three parts of `D_h u(t0, x0)` and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeDecomposition {
    /// `<phi_{t0,x0}, h>` with `phi_{t0,x0} = G_grid(t0 - ., x0 - .) sigma(u)`.
    pub inner: f64,
    /// Drift part `G * (f'(u) v)` at `(t0, x0)`.
    pub a_term: f64,
    /// Stochastic part `I(sigma'(u) v)` at `(t0, x0)`.
    pub b_term: f64,
    /// `D_h u(t0, x0)` from the undivided recursion.
    pub total: f64,
    /// `<h, h>` on the grid.
    pub q_grid: f64,
}

struct Tangent {
    total: RandomField,
    drift: RandomField,
    stochastic: RandomField,
}

fn tangent(problem: &SpdeProblem, u: &RandomField, path: &NoisePath, h: &CameronMartinElement) -> Result<Tangent> {
    let grid = &problem.grid;
    u.check_grid(grid)?;
    if path.grid() != grid {
        return Err(Error::Contract("noise path and problem grid differ".into()));
    }
    let n = grid.n_x();
    let dt = grid.dt();
    let kappa = problem.reaction.kappa();
    let phi = problem.reaction.decompose();
    let sigma = &problem.diffusion;
    let mut heat = SpectralFilter::heat(grid, dt);
    let mut incr = SpectralFilter::increment(grid);
    let mut total = RandomField::zeros(grid);
    let mut drift = RandomField::zeros(grid);
    let mut stochastic = RandomField::zeros(grid);
    let mut sv = vec![0.0; n];
    let mut noise_part = vec![0.0; n];
    let mut source = vec![0.0; n];
    let mut smooth_h = vec![0.0; n];
    let mut buf = vec![0.0; n];
    let mut prop = vec![0.0; n];
    let mut drift_inc = vec![0.0; n];
    for k in 0..grid.n_t() {
        let (vk, uk, dw, hk) = (total.slice(k), u.slice(k), path.slice(k), h.slice(k));
        heat.apply(vk, &mut sv);
        if sigma.is_constant() {
            noise_part.fill(0.0);
        } else {
            for i in 0..n {
                buf[i] = sigma.deriv(uk[i]) * vk[i] * dw[i];
            }
            incr.apply(&buf, &mut noise_part);
        }
        if hk.iter().any(|v| *v != 0.0) {
            problem.noise.smooth(hk, &mut smooth_h);
            for i in 0..n {
                buf[i] = sigma.eval(uk[i]) * dt * smooth_h[i];
            }
            incr.apply(&buf, &mut source);
        } else {
            source.fill(0.0);
        }
        let un = u.slice(k + 1);
        {
            let next = total.slice_mut(k + 1);
            for i in 0..n {
                let dphi = phi.deriv(un[i]);
                next[i] = ((1.0 + kappa * dt) * sv[i] + noise_part[i] + source[i]) / (1.0 - dt * dphi);
                drift_inc[i] = dt * (kappa * sv[i] + dphi * next[i]);
            }
        }
        heat.apply(drift.slice(k), &mut prop);
        for (o, (p, d)) in drift.slice_mut(k + 1).iter_mut().zip(prop.iter().zip(&drift_inc)) {
            *o = p + d;
        }
        heat.apply(stochastic.slice(k), &mut prop);
        for (o, (p, d)) in stochastic.slice_mut(k + 1).iter_mut().zip(prop.iter().zip(&noise_part)) {
            *o = p + d;
        }
    }
    total.ensure_finite("directional derivative")?;
    Ok(Tangent {
        total,
        drift,
        stochastic,
    })
}

/// The field `D_h u` on the whole grid, for an arbitrary direction `h`.
pub fn solve_directional_derivative(
    problem: &SpdeProblem,
    u: &RandomField,
    path: &NoisePath,
    h: &CameronMartinElement,
) -> Result<RandomField> {
    Ok(tangent(problem, u, path, h)?.total)
}

/// `D_h u(t0, x0)` split into the inner-product, drift and stochastic parts.
pub fn decompose_derivative(
    problem: &SpdeProblem,
    u: &RandomField,
    path: &NoisePath,
    probe: &MalliavinProbe,
) -> Result<DerivativeDecomposition> {
    let t = tangent(problem, u, path, &probe.h)?;
    decomposition_from(problem, u, probe, &t)
}

fn decomposition_from(
    problem: &SpdeProblem,
    u: &RandomField,
    probe: &MalliavinProbe,
    t: &Tangent,
) -> Result<DerivativeDecomposition> {
    let (n0, i0) = (probe.n0, probe.i0);
    let sigma = &problem.diffusion;
    let mut phi = CameronMartinElement::zeros(&problem.grid);
    for m in 1..=probe.window {
        let k = n0 - m;
        let hk = probe.h.slice(k).to_vec();
        let uk = u.slice(k);
        for (o, (hv, uv)) in phi.slice_mut(k).iter_mut().zip(hk.iter().zip(uk)) {
            *o = hv * sigma.eval(*uv);
        }
    }
    let inner = problem.noise.ht_inner(&phi, &probe.h)?;
    let q_grid = problem.noise.ht_inner(&probe.h, &probe.h)?;
    let d = DerivativeDecomposition {
        inner,
        a_term: t.drift.at(n0, i0),
        b_term: t.stochastic.at(n0, i0),
        total: t.total.at(n0, i0),
        q_grid,
    };
    let gap = (d.total - (d.inner + d.a_term + d.b_term)).abs();
    if !(gap <= DECOMPOSITION_TOL * (1.0 + d.total.abs())) {
        return Err(Error::Decomposition {
            total: d.total,
            inner: d.inner,
            a_term: d.a_term,
            b_term: d.b_term,
        });
    }
    Ok(d)
}

/// `(u^eps(t0, x0) - u(t0, x0)) / eps` with `u^eps` solved on the noise shifted by `eps h`.
///
/// Both solves use `options`; they should be tight (see [`TIGHT_PICARD`]).
pub fn cameron_martin_fd_oracle(
    problem: &SpdeProblem,
    path: &NoisePath,
    probe: &MalliavinProbe,
    eps: f64,
    options: PicardOptions,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive (got {eps})")));
    }
    let mut solver = PicardSolver::new(problem, options)?;
    let base = solver.solve(path)?.u.at(probe.n0, probe.i0);
    let shifted = problem.noise.shift(path, &probe.h, eps)?;
    let bumped = solver.solve(&shifted)?.u.at(probe.n0, probe.i0);
    Ok((bumped - base) / eps)
}

/// One line of the positivity table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PositivityRow {
    pub path_id: usize,
    pub seed: u64,
    pub k: usize,
    pub delta: f64,
    pub q_lambda: f64,
    pub inner: f64,
    pub a_term: f64,
    pub b_term: f64,
    pub total: f64,
    pub positive: bool,
    /// `max_x |D_h u(t0, x)| / (1 + |x - x0|^theta)`.
    pub weighted_sup: f64,
}

/// Per-rung aggregate of the positivity table.
#[derive(Debug, Clone, Serialize)]
pub struct RungSummary {
    pub k: usize,
    pub delta: f64,
    pub q_grid: f64,
    pub q_continuum: f64,
    pub median_ratio: f64,
    pub positive_fraction: f64,
    /// `min over paths of inner - alpha q_grid`, scaled by `q_grid`.
    pub min_lower_bound_margin: f64,
    /// Mean of `(weighted_sup / q_grid)^2`.
    pub derivative_moment: f64,
}

/// Full result of [`positivity_study`].
#[derive(Debug, Clone, Serialize)]
pub struct PositivityStudy {
    pub t0: f64,
    pub x0: f64,
    pub alpha: f64,
    pub rows: Vec<PositivityRow>,
    pub summaries: Vec<RungSummary>,
    /// Rungs `(k, 2^{-k} t0)` below `MIN_WINDOW_STEPS` time steps or off the time grid.
    pub skipped: Vec<(usize, f64)>,
}

impl PositivityStudy {
    /// Fraction of paths with a positive derivative at the smallest resolved rung.
    pub fn best_positive_fraction(&self) -> f64 {
        self.summaries.last().map_or(f64::NAN, |s| s.positive_fraction)
    }
}

/// Resolved rungs `delta_k = 2^{-k} t0` of the ladder and the skipped ones.
pub fn delta_ladder(grid: &SpaceTimeGrid, t0: f64, k_max: usize) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for k in 0..=k_max {
        let delta = t0 * 0.5f64.powi(k as i32);
        let steps = delta / grid.dt();
        let whole = (steps - steps.round()).abs() <= 1e-9 * steps.max(1.0);
        if whole && steps.round() as usize >= MIN_WINDOW_STEPS {
            used.push((k, delta));
        } else {
            skipped.push((k, delta));
        }
    }
    (used, skipped)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the probe ladder on `n_paths` independent paths.
///
/// The problem is truncated at `t0`; paths are solved in parallel and reported in path order.
pub fn positivity_study(
    problem: &SpdeProblem,
    t0: f64,
    x0: f64,
    k_max: usize,
    n_paths: usize,
    base_seed: u64,
    options: PicardOptions,
) -> Result<PositivityStudy> {
    let n0 = problem
        .grid
        .time_index(t0)
        .ok_or_else(|| Error::Domain(format!("probe time {t0} is not a grid time")))?;
    if n0 == 0 {
        return Err(Error::Domain("probe time must be positive".into()));
    }
    let local = problem.truncated(n0)?;
    let (rungs, skipped) = delta_ladder(&local.grid, t0, k_max);
    if rungs.is_empty() {
        return Err(Error::Domain(format!("no resolvable delta for t0 = {t0}")));
    }
    let probes: Vec<(usize, MalliavinProbe)> = rungs
        .iter()
        .map(|&(k, d)| MalliavinProbe::new(&local.grid, t0, x0, d).map(|p| (k, p)))
        .collect::<Result<_>>()?;
    let weight = WeightedNorm::new(problem.weight.theta, x0)?;
    let weights = weight.weights(&local.grid);
    let per_path: Vec<Vec<PositivityRow>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let seed = derive_seed(base_seed, p as u64);
            let wrap = |e: Error| Error::Path {
                path_id: p,
                seed,
                source: Box::new(e),
            };
            let path = local.noise.sample(seed);
            let mut solver = PicardSolver::new(&local, options).map_err(wrap)?;
            let u = solver.solve(&path).map_err(wrap)?.u;
            probes
                .iter()
                .map(|(k, probe)| {
                    let t = tangent(&local, &u, &path, &probe.h)?;
                    let d = decomposition_from(&local, &u, probe, &t)?;
                    let weighted_sup = t
                        .total
                        .slice(probe.n0)
                        .iter()
                        .zip(&weights)
                        .map(|(v, w)| v.abs() / w)
                        .fold(0.0, f64::max);
                    Ok(PositivityRow {
                        path_id: p,
                        seed,
                        k: *k,
                        delta: probe.delta,
                        q_lambda: d.q_grid,
                        inner: d.inner,
                        a_term: d.a_term,
                        b_term: d.b_term,
                        total: d.total,
                        positive: d.total > 0.0,
                        weighted_sup,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PositivityRow> = per_path.into_iter().flatten().collect();
    let alpha = problem.diffusion.alpha();
    let summaries = probes
        .iter()
        .map(|(k, probe)| {
            let rung: Vec<&PositivityRow> = rows.iter().filter(|r| r.k == *k).collect();
            let q = rung.first().map_or(f64::NAN, |r| r.q_lambda);
            let count = rung.len().max(1) as f64;
            RungSummary {
                k: *k,
                delta: probe.delta,
                q_grid: q,
                q_continuum: problem.noise.spec().q_lambda(probe.delta),
                median_ratio: median(rung.iter().map(|r| (r.a_term.abs() + r.b_term.abs()) / r.q_lambda).collect()),
                positive_fraction: rung.iter().filter(|r| r.positive).count() as f64 / count,
                min_lower_bound_margin: rung
                    .iter()
                    .map(|r| (r.inner - alpha * r.q_lambda) / r.q_lambda)
                    .fold(f64::INFINITY, f64::min),
                derivative_moment: rung.iter().map(|r| (r.weighted_sup / r.q_lambda).powi(2)).sum::<f64>()
                    / count,
            }
        })
        .collect();
    Ok(PositivityStudy {
        t0,
        x0,
        alpha,
        rows,
        summaries,
        skipped,
    })
}

/// CSV with columns `path_id,k,delta,q_lambda,inner,a_term,b_term,total,positive_flag`.
pub fn write_positivity_csv<W: Write>(study: &PositivityStudy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "path_id",
        "k",
        "delta",
        "q_lambda",
        "inner",
        "a_term",
        "b_term",
        "total",
        "positive_flag",
    ])
    .map_err(csv_err)?;
    for r in &study.rows {
        w.write_record(&[
            r.path_id.to_string(),
            r.k.to_string(),
            r.delta.to_string(),
            r.q_lambda.to_string(),
            r.inner.to_string(),
            r.a_term.to_string(),
            r.b_term.to_string(),
            r.total.to_string(),
            u8::from(r.positive).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV of the per-rung summaries, one line per resolved rung, then one line per skipped rung.
pub fn write_rung_summary_csv<W: Write>(study: &PositivityStudy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "delta",
        "status",
        "q_grid",
        "q_continuum",
        "median_ratio",
        "positive_fraction",
        "min_lower_bound_margin",
        "derivative_moment",
    ])
    .map_err(csv_err)?;
    for s in &study.summaries {
        w.write_record(&[
            s.k.to_string(),
            s.delta.to_string(),
            "resolved".to_string(),
            s.q_grid.to_string(),
            s.q_continuum.to_string(),
            s.median_ratio.to_string(),
            s.positive_fraction.to_string(),
            s.min_lower_bound_margin.to_string(),
            s.derivative_moment.to_string(),
        ])
        .map_err(csv_err)?;
    }
    for (k, d) in &study.skipped {
        let mut rec = vec![k.to_string(), d.to_string(), "skipped".to_string()];
        rec.extend(std::iter::repeat_n(String::new(), 6));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use crate::noise::{CovarianceSpec, NoiseModel};
    use crate::reaction::ReactionFn;
    use crate::solver::{Diffusion, InitialCondition};

    fn problem(f: ReactionFn, sigma: Diffusion, spec: CovarianceSpec) -> SpdeProblem {
        let g = SpaceTimeGrid::new(0.5, 128, 4.0, 64, Boundary::Periodic).unwrap();
        let noise = NoiseModel::new(&g, &spec).unwrap();
        SpdeProblem::new(
            noise,
            f,
            sigma,
            InitialCondition::Constant { value: 0.0 },
            WeightedNorm::new(0.5, 0.0).unwrap(),
        )
        .unwrap()
    }

    fn white() -> CovarianceSpec {
        CovarianceSpec::white(0.25).unwrap()
    }

    #[test]
    fn probe_validation() {
        let p = problem(ReactionFn::zero(), Diffusion::constant(1.0), white());
        assert!(MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.125).is_ok());
        assert!(MalliavinProbe::new(&p.grid, 0.5, 0.01, 0.125).is_err());
        assert!(MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.6).is_err());
        assert!(MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.001).is_err());
        let probe = MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.125).unwrap();
        for k in 0..p.grid.n_t() {
            let inside = k >= probe.n0 - probe.window && k < probe.n0;
            assert_eq!(probe.h.slice(k).iter().any(|v| *v != 0.0), inside);
        }
    }

    #[test]
    fn additive_derivative_is_the_probe_norm() {
        for spec in [white(), CovarianceSpec::gaussian(0.3, 0.5).unwrap()] {
            let p = problem(ReactionFn::zero(), Diffusion::constant(1.0), spec);
            let path = p.noise.sample(3);
            let u = picard(&p, &path);
            let probe = MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.0625).unwrap();
            let d = decompose_derivative(&p, &u, &path, &probe).unwrap();
            assert_eq!(d.a_term, 0.0);
            assert_eq!(d.b_term, 0.0);
            assert!((d.total - d.q_grid).abs() < 1e-10 * d.q_grid);
            let fd = cameron_martin_fd_oracle(&p, &path, &probe, 1e-3, TIGHT_PICARD).unwrap();
            assert!((fd - d.q_grid).abs() < 1e-8 * d.q_grid);
        }
    }

    #[test]
    fn white_probe_norm_telescopes_to_truncated_q() {
        // sum_m dt P^2 e^{-(m-1) dt xi^2} = (1 - e^{-delta xi^2}) / xi^2 on every mode
        let p = problem(ReactionFn::zero(), Diffusion::constant(1.0), white());
        let probe = MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.25).unwrap();
        let q = p.noise.ht_inner(&probe.h, &probe.h).unwrap();
        let period = 2.0 * p.grid.half_width();
        let n = p.grid.n_x() as i64;
        let mut spectral = 0.0;
        for j in -(n / 2)..=(n / 2) {
            let xi = 2.0 * std::f64::consts::PI * j as f64 / period;
            let w = if j.abs() == n / 2 { 0.5 } else { 1.0 };
            let mode = if j == 0 { probe.delta } else { -(-probe.delta * xi * xi).exp_m1() / (xi * xi) };
            spectral += w * mode / period;
        }
        assert!((q - spectral).abs() < 1e-10 * spectral, "{q} vs {spectral}");
        // the modes above the grid Nyquist frequency carry about 1 / (pi xi_max) of the continuum value
        let continuum = white().q_lambda(probe.delta);
        let xi_max = std::f64::consts::PI / p.grid.dx();
        let tail = 1.0 / (std::f64::consts::PI * xi_max);
        assert!((q + tail - continuum).abs() < 0.01 * continuum, "{q} {tail} {continuum}");
    }

    fn picard(p: &SpdeProblem, path: &NoisePath) -> RandomField {
        PicardSolver::new(p, TIGHT_PICARD).unwrap().solve(path).unwrap().u
    }

    #[test]
    fn multiplicative_matches_finite_differences() {
        let p = problem(ReactionFn::cubic(), Diffusion::sine(), white());
        let probe = MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.125).unwrap();
        for seed in [1, 2] {
            let path = p.noise.sample(seed);
            let u = picard(&p, &path);
            let d = decompose_derivative(&p, &u, &path, &probe).unwrap();
            let fd3 = cameron_martin_fd_oracle(&p, &path, &probe, 1e-3, TIGHT_PICARD).unwrap();
            let fd4 = cameron_martin_fd_oracle(&p, &path, &probe, 1e-4, TIGHT_PICARD).unwrap();
            let e3 = (d.total - fd3).abs() / d.total.abs();
            let e4 = (d.total - fd4).abs() / d.total.abs();
            assert!(e3 < 0.05 && e4 < e3, "{e3} {e4}");
            assert!(d.inner >= 0.9 * d.q_grid);
        }
    }

    #[test]
    fn linear_in_the_direction_and_zero_before_support() {
        let p = problem(ReactionFn::cubic(), Diffusion::sqrt(), white());
        let path = p.noise.sample(8);
        let u = picard(&p, &path);
        let a = MalliavinProbe::new(&p.grid, 0.5, 0.0, 0.125).unwrap();
        let b = MalliavinProbe::new(&p.grid, 0.25, 0.5, 0.0625).unwrap();
        let va = solve_directional_derivative(&p, &u, &path, &a.h).unwrap();
        let vb = solve_directional_derivative(&p, &u, &path, &b.h).unwrap();
        let vab = solve_directional_derivative(&p, &u, &path, &a.h.plus(&b.h)).unwrap();
        let scale = 1.0 + vab.max_abs();
        assert!(vab.sub(&va.add(&vb)).max_abs() < 1e-8 * scale);
        for c in [2.0, -1.0] {
            let vc = solve_directional_derivative(&p, &u, &path, &a.h.scaled(c)).unwrap();
            assert!(vc.sub(&va.scale(c)).max_abs() < 1e-8 * scale);
        }
        for k in 0..=(a.n0 - a.window) {
            assert!(va.slice(k).iter().all(|v| *v == 0.0));
        }
        let zero = CameronMartinElement::zeros(&p.grid);
        assert_eq!(solve_directional_derivative(&p, &u, &path, &zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn ladder_skips_unresolved_rungs() {
        let g = SpaceTimeGrid::new(1.0, 512, 8.0, 256, Boundary::Periodic).unwrap();
        let (used, skipped) = delta_ladder(&g, 0.5, 8);
        assert_eq!(used.iter().map(|r| r.0).collect::<Vec<_>>(), (0..=6).collect::<Vec<_>>());
        assert_eq!(skipped.iter().map(|r| r.0).collect::<Vec<_>>(), vec![7, 8]);
    }

    #[test]
    fn additive_positivity_study() {
        let p = problem(ReactionFn::zero(), Diffusion::constant(1.0), white());
        let s = positivity_study(&p, 0.5, 0.0, 3, 4, 1, PicardOptions::default()).unwrap();
        assert_eq!(s.rows.len(), 16);
        for r in &s.summaries {
            assert_eq!(r.median_ratio, 0.0);
            assert_eq!(r.positive_fraction, 1.0);
        }
        let mut buf = Vec::new();
        write_positivity_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,k,delta,q_lambda,inner,a_term,b_term,total,positive_flag\n"));
        assert_eq!(text.lines().count(), 17);
    }
}
