//! The deterministic maps `M` and `L`.
//!
//! `M(z)` solves `m = G * f(m) + z`, realized as the mild solution of
//! `dm = (m_xx / 2 + f(m)) dt + dz` by exponential time stepping. The linear part `kappa m`
//! is taken explicitly and the non-increasing part `phi` implicitly through one resolvent
//! call per cell:
//!
//! ```text
//! m_{k+1} = J_dt( S(dt) [(1 + kappa dt) m_k - z_k] + z_{k+1} ).
//! ```
//!
//! Each solve is certified by an independent recursion for the Duhamel term
//! `D_{k+1} = S(dt) (D_k + kappa dt m_k) + dt phi(m_{k+1})`; the residual is `max |m - z - D|`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{RandomField, SpaceTimeGrid, SpectralFilter};
use crate::reaction::{resolvent, Monotone, MonotonePart, ReactionFn, YosidaApprox, RESOLVENT_TOL};

/// Relative defect tolerance: `residual <= DEFECT_TOL (1 + max|z|)`.
pub const DEFECT_TOL: f64 = 1e-6;

/// Weight `1 + |x - center|^theta` of the weighted supremum norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedNorm {
    pub theta: f64,
    pub center: f64,
}

impl WeightedNorm {
    pub fn new(theta: f64, center: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) || !center.is_finite() {
            return Err(Error::Domain(format!(
                "weight needs theta > 0 and a finite center (got {theta}, {center})"
            )));
        }
        Ok(Self { theta, center })
    }

    /// Requires `theta nu < 2` for the growth exponent `nu` of the reaction.
    pub fn check_reaction(&self, f: &ReactionFn) -> Result<()> {
        let nu = f.growth().1;
        if self.theta * nu >= 2.0 {
            return Err(Error::config(
                "weight.theta",
                format!("theta*nu >= 2 (theta = {}, nu = {nu})", self.theta),
            ));
        }
        Ok(())
    }

    /// Weights at the grid nodes, using the grid's distance (wrapped when periodic).
    pub fn weights(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        grid.xs()
            .iter()
            .map(|&x| 1.0 + grid.distance(x, self.center).powf(self.theta))
            .collect()
    }

    pub fn norm(&self, z: &RandomField, grid: &SpaceTimeGrid) -> f64 {
        weighted_sup(z.values(), &self.weights(grid))
    }
}

fn weighted_sup(values: &[f64], weights: &[f64]) -> f64 {
    values
        .chunks_exact(weights.len())
        .flat_map(|slice| slice.iter().zip(weights).map(|(v, w)| v.abs() / w))
        .fold(0.0, f64::max)
}

/// `max |z(t, x)| / (1 + |x - x0|^theta)` over the grid.
pub fn weighted_norm(z: &RandomField, w: &WeightedNorm, grid: &SpaceTimeGrid) -> f64 {
    w.norm(z, grid)
}

/// How the monotone part is treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum MapMethod {
    /// One resolvent `J_dt` per cell.
    SemiImplicit,
    /// `phi` replaced by `phi_lambda` for `lambda = dt, dt/2, ...`, then Richardson on the last two.
    YosidaLadder { levels: usize },
}

/// Result of one map solve.
#[derive(Debug, Clone)]
pub struct MapSolveReport {
    pub solution: RandomField,
    pub method: MapMethod,
    /// Yosida levels used (empty for the semi-implicit step).
    pub lambdas: Vec<f64>,
    /// Sup distance between successive ladder levels.
    pub ladder_gaps: Vec<f64>,
    /// Pointwise defect `m - z - D` of the last solve.
    pub defect: RandomField,
    pub residual: f64,
    pub tolerance: f64,
}

impl MapSolveReport {
    /// CSV with columns `t,x,value,defect`.
    pub fn write_csv<W: Write>(&self, grid: &SpaceTimeGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "value", "defect"]).map_err(csv_err)?;
        for k in 0..self.solution.n_slices() {
            for i in 0..self.solution.n_x() {
                w.write_record(&[
                    grid.t(k).to_string(),
                    grid.x(i).to_string(),
                    self.solution.at(k, i).to_string(),
                    self.defect.at(k, i).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// The pointwise drift step without diffusion: `J_dt((1 + kappa dt) a)`.
pub fn drift_step(f: &ReactionFn, dt: f64, a: f64) -> Result<f64> {
    resolvent(&f.decompose(), dt, (1.0 + f.kappa() * dt) * a, RESOLVENT_TOL)
}

/// Reusable solver for `M` on a fixed grid and reaction.
pub struct MapSolver {
    grid: SpaceTimeGrid,
    reaction: ReactionFn,
    phi: MonotonePart,
    heat: SpectralFilter,
    buf: Vec<f64>,
    prop: Vec<f64>,
}

impl MapSolver {
    pub fn new(grid: &SpaceTimeGrid, f: &ReactionFn) -> Self {
        let n = grid.n_x();
        Self {
            grid: grid.clone(),
            reaction: f.clone(),
            phi: f.decompose(),
            heat: SpectralFilter::heat(grid, grid.dt()),
            buf: vec![0.0; n],
            prop: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn reaction(&self) -> &ReactionFn {
        &self.reaction
    }

    /// Semi-implicit solve with defect certificate.
    pub fn solve(&mut self, z: &RandomField) -> Result<MapSolveReport> {
        let mut m = RandomField::zeros(&self.grid);
        let defect = self.solve_into(z, &mut m, true)?.expect("checked solve returns a defect");
        self.finish(z, m, defect, MapMethod::SemiImplicit, vec![], vec![])
    }

    fn finish(
        &self,
        z: &RandomField,
        solution: RandomField,
        defect: RandomField,
        method: MapMethod,
        lambdas: Vec<f64>,
        ladder_gaps: Vec<f64>,
    ) -> Result<MapSolveReport> {
        let residual = defect.max_abs();
        let tolerance = DEFECT_TOL * (1.0 + z.max_abs());
        if !(residual <= tolerance) {
            return Err(Error::Defect {
                defect: residual,
                tolerance,
            });
        }
        Ok(MapSolveReport {
            solution,
            method,
            lambdas,
            ladder_gaps,
            defect,
            residual,
            tolerance,
        })
    }

    /// Writes `M(z)` into `out`; with `check` also returns the defect field.
    pub fn solve_into(
        &mut self,
        z: &RandomField,
        out: &mut RandomField,
        check: bool,
    ) -> Result<Option<RandomField>> {
        let phi = self.phi.clone();
        self.march(z, out, check, |w, dt| resolvent(&phi, dt, w, RESOLVENT_TOL), |v| phi.value(v))
    }

    fn march(
        &mut self,
        z: &RandomField,
        m: &mut RandomField,
        check: bool,
        implicit: impl Fn(f64, f64) -> Result<f64>,
        monotone: impl Fn(f64) -> f64,
    ) -> Result<Option<RandomField>> {
        z.check_grid(&self.grid)?;
        m.check_grid(&self.grid)?;
        z.ensure_finite("map input")?;
        let dt = self.grid.dt();
        let kappa = self.reaction.kappa();
        if self.reaction.is_zero() {
            m.slice_mut(0).copy_from_slice(z.slice(0));
            for k in 0..self.grid.n_t() {
                m.slice_mut(k + 1).copy_from_slice(z.slice(k + 1));
            }
            return Ok(check.then(|| RandomField::zeros(&self.grid)));
        }
        m.slice_mut(0).copy_from_slice(z.slice(0));
        let mut duhamel = check.then(|| vec![0.0; self.grid.n_x()]);
        let mut defect = check.then(|| RandomField::zeros(&self.grid));
        for k in 0..self.grid.n_t() {
            let (mk, zk) = (m.slice(k), z.slice(k));
            for ((b, &a), &c) in self.buf.iter_mut().zip(mk).zip(zk) {
                *b = (1.0 + kappa * dt) * a - c;
            }
            self.heat.apply(&self.buf, &mut self.prop);
            let zn = z.slice(k + 1);
            let next = m.slice_mut(k + 1);
            for i in 0..next.len() {
                next[i] = implicit(self.prop[i] + zn[i], dt)?;
            }
            if let (Some(d), Some(def)) = (duhamel.as_mut(), defect.as_mut()) {
                let mk = m.slice(k);
                for ((b, &dv), &a) in self.buf.iter_mut().zip(d.iter()).zip(mk) {
                    *b = dv + kappa * dt * a;
                }
                self.heat.apply(&self.buf, d);
                let mn = m.slice(k + 1);
                let row = def.slice_mut(k + 1);
                for i in 0..d.len() {
                    d[i] += dt * monotone(mn[i]);
                    row[i] = mn[i] - zn[i] - d[i];
                }
            }
        }
        m.ensure_finite("map solution")?;
        Ok(defect)
    }

    /// Solve with `phi` replaced by its Yosida approximations `phi_lambda`,
    /// `lambda = dt 2^{-j}`, `j < levels`, Richardson-extrapolated on the last two levels.
    pub fn solve_yosida_ladder(&mut self, z: &RandomField, levels: usize) -> Result<MapSolveReport> {
        if levels == 0 {
            return Err(Error::Domain("the Yosida ladder needs at least one level".into()));
        }
        let dt = self.grid.dt();
        let mut lambdas = Vec::with_capacity(levels);
        let mut gaps = Vec::new();
        let mut prev: Option<RandomField> = None;
        let mut last: Option<RandomField> = None;
        let mut worst_defect = RandomField::zeros(&self.grid);
        for j in 0..levels {
            let lambda = dt * 0.5f64.powi(j as i32);
            lambdas.push(lambda);
            let y = YosidaApprox::new(&self.reaction, lambda)?;
            let mut m = RandomField::zeros(&self.grid);
            let defect = self
                .march(
                    z,
                    &mut m,
                    true,
                    |w, step| y.resolvent_of_approx(step, w),
                    |v| y.phi_lambda(v).unwrap_or(f64::NAN),
                )?
                .expect("checked solve returns a defect");
            if defect.max_abs() > worst_defect.max_abs() {
                worst_defect = defect;
            }
            if let Some(p) = &last {
                gaps.push(m.sub(p).max_abs());
            }
            prev = last.take();
            last = Some(m);
        }
        let last = last.expect("at least one level");
        let solution = match prev {
            Some(p) => last.scale(2.0).sub(&p),
            None => last,
        };
        self.finish(z, solution, worst_defect, MapMethod::YosidaLadder { levels }, lambdas, gaps)
    }
}

/// `M(z)` by the semi-implicit step.
pub fn apply_m(z: &RandomField, f: &ReactionFn, grid: &SpaceTimeGrid) -> Result<MapSolveReport> {
    MapSolver::new(grid, f).solve(z)
}

/// `M(z)` by the requested method.
pub fn apply_m_with(
    z: &RandomField,
    f: &ReactionFn,
    grid: &SpaceTimeGrid,
    method: MapMethod,
) -> Result<MapSolveReport> {
    let mut solver = MapSolver::new(grid, f);
    match method {
        MapMethod::SemiImplicit => solver.solve(z),
        MapMethod::YosidaLadder { levels } => solver.solve_yosida_ladder(z, levels),
    }
}

/// `L(z)` for the linear drift `c(s, y) V` with `c <= kappa`.
///
/// Same scheme as `M` with `phi(V) = (c - kappa) V`, whose resolvent is a division.
pub fn apply_l(
    z: &RandomField,
    coeff: &RandomField,
    kappa: f64,
    grid: &SpaceTimeGrid,
) -> Result<MapSolveReport> {
    z.check_grid(grid)?;
    coeff.check_grid(grid)?;
    if let Some(bad) = coeff.values().iter().find(|c| !(**c <= kappa + 1e-12 * (1.0 + kappa.abs()))) {
        return Err(Error::Domain(format!("coefficient {bad} exceeds kappa = {kappa}")));
    }
    let dt = grid.dt();
    let n = grid.n_x();
    let mut heat = SpectralFilter::heat(grid, dt);
    let mut v = RandomField::zeros(grid);
    let mut defect = RandomField::zeros(grid);
    let mut buf = vec![0.0; n];
    let mut prop = vec![0.0; n];
    let mut duhamel = vec![0.0; n];
    v.slice_mut(0).copy_from_slice(z.slice(0));
    for k in 0..grid.n_t() {
        for i in 0..n {
            buf[i] = (1.0 + kappa * dt) * v.at(k, i) - z.at(k, i);
        }
        heat.apply(&buf, &mut prop);
        for i in 0..n {
            let c = coeff.at(k + 1, i) - kappa;
            v.slice_mut(k + 1)[i] = (prop[i] + z.at(k + 1, i)) / (1.0 - dt * c);
        }
        for i in 0..n {
            buf[i] = duhamel[i] + kappa * dt * v.at(k, i);
        }
        heat.apply(&buf, &mut duhamel);
        for i in 0..n {
            let vn = v.at(k + 1, i);
            duhamel[i] += dt * (coeff.at(k + 1, i) - kappa) * vn;
            defect.slice_mut(k + 1)[i] = vn - z.at(k + 1, i) - duhamel[i];
        }
    }
    v.ensure_finite("linear map solution")?;
    let residual = defect.max_abs();
    let tolerance = DEFECT_TOL * (1.0 + z.max_abs());
    if !(residual <= tolerance) {
        return Err(Error::Defect {
            defect: residual,
            tolerance,
        });
    }
    Ok(MapSolveReport {
        solution: v,
        method: MapMethod::SemiImplicit,
        lambdas: vec![],
        ladder_gaps: vec![],
        defect,
        residual,
        tolerance,
    })
}

/// Smooth random field: a few random space-time cosine modes plus an offset.
///
/// Wavelengths are multiples of the grid period, so the field is periodic on periodic grids.
pub fn smooth_random_field(grid: &SpaceTimeGrid, seed: u64, amplitude: f64) -> RandomField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 2.0 * grid.half_width();
    let offset = amplitude * rng.gen_range(-1.0..1.0);
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let kx = rng.gen_range(1..=6) as f64 * 2.0 * std::f64::consts::PI / period;
            let omega = rng.gen_range(-2.0..2.0);
            let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let a = amplitude * rng.gen_range(-0.5..0.5);
            (kx, omega, phase, a)
        })
        .collect();
    RandomField::from_fn(grid, |t, x| {
        offset
            + modes
                .iter()
                .map(|(kx, om, ph, a)| a * (kx * x + om * t + ph).cos())
                .sum::<f64>()
    })
}

/// Empirical Lipschitz ratios of `M` for one weight.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzEstimate {
    pub theta: f64,
    pub center: f64,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// Ratios `||M(z2) - M(z1)|| / ||z2 - z1||` over `trials` random pairs, one estimate per center.
///
/// The same pairs (and the same solves) are reused for every center.
pub fn estimate_lipschitz_m_centers(
    f: &ReactionFn,
    grid: &SpaceTimeGrid,
    theta: f64,
    centers: &[f64],
    trials: usize,
    seed: u64,
    amplitude: f64,
) -> Result<Vec<LipschitzEstimate>> {
    if trials < 2 {
        return Err(Error::Domain(format!("need at least 2 trials (got {trials})")));
    }
    let norms: Vec<WeightedNorm> = centers
        .iter()
        .map(|&c| WeightedNorm::new(theta, c))
        .collect::<Result<_>>()?;
    for w in &norms {
        w.check_reaction(f)?;
    }
    let weights: Vec<Vec<f64>> = norms.iter().map(|w| w.weights(grid)).collect();
    let mut solver = MapSolver::new(grid, f);
    let mut out: Vec<LipschitzEstimate> = norms
        .iter()
        .map(|w| LipschitzEstimate {
            theta,
            center: w.center,
            ratios: Vec::with_capacity(trials),
            max_ratio: 0.0,
        })
        .collect();
    let mut m1 = RandomField::zeros(grid);
    let mut m2 = RandomField::zeros(grid);
    for p in 0..trials as u64 {
        let z1 = smooth_random_field(grid, crate::noise::derive_seed(seed, 2 * p), amplitude);
        let z2 = smooth_random_field(grid, crate::noise::derive_seed(seed, 2 * p + 1), amplitude);
        solver.solve_into(&z1, &mut m1, false)?;
        solver.solve_into(&z2, &mut m2, false)?;
        let dz = z2.sub(&z1);
        let dm = m2.sub(&m1);
        for (est, w) in out.iter_mut().zip(&weights) {
            let denom = weighted_sup(dz.values(), w);
            if denom == 0.0 {
                return Err(Error::Domain("identical inputs in a Lipschitz pair".into()));
            }
            let r = weighted_sup(dm.values(), w) / denom;
            est.max_ratio = est.max_ratio.max(r);
            est.ratios.push(r);
        }
    }
    Ok(out)
}

/// Single-center version of [`estimate_lipschitz_m_centers`] with unit amplitude.
pub fn estimate_lipschitz_m(
    f: &ReactionFn,
    grid: &SpaceTimeGrid,
    w: &WeightedNorm,
    trials: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    let mut v = estimate_lipschitz_m_centers(f, grid, w.theta, &[w.center], trials, seed, 1.0)?;
    Ok(v.remove(0))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use approx::assert_relative_eq;

    fn grid(n_t: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(1.0, n_t, 4.0, 32, Boundary::Periodic).unwrap()
    }

    #[test]
    fn weighted_norm_examples() {
        let g = SpaceTimeGrid::new(1.0, 4, 4.0, 64, Boundary::Periodic).unwrap();
        let w = WeightedNorm::new(1.0, 0.0).unwrap();
        assert_eq!(weighted_norm(&RandomField::zeros(&g), &w, &g), 0.0);
        let z = RandomField::from_fn(&g, |_, x| 1.0 + x.abs());
        assert_relative_eq!(weighted_norm(&z, &w, &g), 1.0, max_relative = 1e-15);
        let z = RandomField::from_fn(&g, |_, x| x);
        assert_relative_eq!(weighted_norm(&z, &w, &g), 0.8, max_relative = 1e-15);
        assert!(WeightedNorm::new(0.0, 0.0).is_err());
    }

    #[test]
    fn theta_nu_constraint() {
        let w = WeightedNorm::new(3.0, 0.0).unwrap();
        let e = w.check_reaction(&ReactionFn::cubic()).unwrap_err();
        assert!(e.to_string().contains("theta*nu >= 2"));
        assert!(WeightedNorm::new(1.5, 0.0).unwrap().check_reaction(&ReactionFn::cubic()).is_ok());
    }

    #[test]
    fn zero_reaction_is_identity() {
        let g = grid(16);
        let z = smooth_random_field(&g, 1, 2.0);
        let r = apply_m(&z, &ReactionFn::zero(), &g).unwrap();
        assert_eq!(r.solution, z);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn linear_reaction_on_constants() {
        let c = 0.7;
        let mut prev = f64::INFINITY;
        for n_t in [128, 256, 512] {
            let g = grid(n_t);
            let z = RandomField::from_fn(&g, |_, _| c);
            let r = apply_m(&z, &ReactionFn::linear(1.0), &g).unwrap();
            let err = (0..g.n_slices())
                .map(|k| (r.solution.at(k, 5) - c * g.t(k).exp()).abs())
                .fold(0.0, f64::max);
            assert!(err < 5.0 * g.dt());
            if prev.is_finite() {
                let ratio = prev / err;
                assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
            }
            prev = err;
        }
    }

    #[test]
    fn cubic_on_constant_two_decays_to_one() {
        let g = grid(512);
        let z = RandomField::from_fn(&g, |_, _| 2.0);
        let r = apply_m(&z, &ReactionFn::cubic(), &g).unwrap();
        let f = ReactionFn::cubic();
        for k in [64, 256, 512] {
            let exact = tests_support::ode_forced(|m| f.eval(m), |_| 0.0, 2.0, g.t(k));
            let got = r.solution.at(k, 3);
            assert!((got - exact).abs() / exact < 2e-3, "{k}: {got} vs {exact}");
            assert!(got > 1.0);
        }
        assert!(r.residual <= r.tolerance);
    }

    #[test]
    fn drift_step_is_half_lipschitz() {
        for f in [ReactionFn::cubic(), ReactionFn::exponential()] {
            let dt = 1.0 / 512.0;
            for j in 0..200 {
                let a = -5.0 + 0.05 * j as f64;
                let b = a + 0.013;
                let d = (drift_step(&f, dt, a).unwrap() - drift_step(&f, dt, b).unwrap()).abs();
                assert!(d <= (1.0 + f.kappa() * dt) * (a - b).abs() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn yosida_ladder_agrees_with_direct_step() {
        let g = grid(256);
        let w = WeightedNorm::new(0.5, 0.0).unwrap();
        for f in [ReactionFn::cubic(), ReactionFn::exponential()] {
            let z = smooth_random_field(&g, 4, 1.0);
            let direct = apply_m(&z, &f, &g).unwrap();
            let ladder = apply_m_with(&z, &f, &g, MapMethod::YosidaLadder { levels: 3 }).unwrap();
            assert_eq!(ladder.lambdas.len(), 3);
            let gap = weighted_norm(&direct.solution.sub(&ladder.solution), &w, &g);
            assert!(gap < 5e-3, "{}: {gap}", f.name());
        }
    }

    #[test]
    fn linear_map_properties() {
        let g = grid(64);
        let z1 = smooth_random_field(&g, 8, 1.0);
        let z2 = smooth_random_field(&g, 9, 1.0);
        let c = RandomField::from_fn(&g, |t, x| 0.5 - (x * t).sin().abs());
        let l1 = apply_l(&z1, &c, 0.5, &g).unwrap().solution;
        let l2 = apply_l(&z2, &c, 0.5, &g).unwrap().solution;
        let l12 = apply_l(&z1.add(&z2), &c, 0.5, &g).unwrap().solution;
        assert!(l12.sub(&l1.add(&l2)).max_abs() < 1e-8);
        // zero coefficient is the identity
        let zero = RandomField::zeros(&g);
        assert!(apply_l(&z1, &zero, 0.0, &g).unwrap().solution.sub(&z1).max_abs() < 1e-12);
        // constant coefficient on a constant input
        let g = grid(512);
        let one = RandomField::from_fn(&g, |_, _| 1.0);
        let kap = RandomField::from_fn(&g, |_, _| 1.0);
        let v = apply_l(&one, &kap, 1.0, &g).unwrap().solution;
        assert!((v.at(512, 0) - 1f64.exp()).abs() < 5.0 * g.dt());
        assert!(apply_l(&one, &kap, 0.5, &g).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let g = grid(64);
        let w = WeightedNorm::new(0.5, 0.0).unwrap();
        let e = estimate_lipschitz_m(&ReactionFn::zero(), &g, &w, 4, 1).unwrap();
        assert!(e.ratios.iter().all(|r| (r - 1.0).abs() < 1e-12));
        let e = estimate_lipschitz_m(&ReactionFn::cubic(), &g, &w, 4, 1).unwrap();
        assert!(e.max_ratio.is_finite() && e.max_ratio > 0.0);
        assert!(estimate_lipschitz_m(&ReactionFn::cubic(), &g, &w, 1, 1).is_err());
    }

    #[test]
    fn defect_csv_has_header_and_rows() {
        let g = SpaceTimeGrid::new(1.0, 2, 1.0, 4, Boundary::Periodic).unwrap();
        let z = RandomField::from_fn(&g, |_, _| 1.0);
        let r = apply_m(&z, &ReactionFn::cubic(), &g).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,value,defect\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 4);
    }
}
