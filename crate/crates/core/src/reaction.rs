//! Half-Lipschitz reaction terms and their Yosida approximations.
//!
//! Every reaction splits as `f(u) = phi(u) + kappa u` with `phi` non-increasing. The
//! resolvent `J_lambda = (I - lambda phi)^{-1}` is well defined because
//! `v -> v - lambda phi(v)` is strictly increasing, and the Yosida approximation is
//! `phi_lambda(u) = (J_lambda(u) - u) / lambda = phi(J_lambda(u))`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default resolvent tolerance on `|v - lambda phi(v) - u| / (1 + |u|)`.
pub const RESOLVENT_TOL: f64 = 1e-10;

const SWEEP_HALF_WIDTH: f64 = 10.0;
const SWEEP_POINTS: usize = 20_001;

/// A reaction `f` with derivative, half-Lipschitz slope `kappa` and growth certificate
/// `|f'(u)| <= K exp(K |u|^nu)`.
#[derive(Clone)]
pub struct ReactionFn {
    name: String,
    f: ScalarFn,
    df: ScalarFn,
    kappa: f64,
    growth: (f64, f64),
    zero: bool,
}

impl fmt::Debug for ReactionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReactionFn")
            .field("name", &self.name)
            .field("kappa", &self.kappa)
            .field("growth", &self.growth)
            .finish()
    }
}

impl ReactionFn {
    /// Builds a reaction and validates it on a dense sweep of `[-10, 10]`.
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kappa: f64,
        growth_k: f64,
        growth_nu: f64,
    ) -> Result<Self> {
        let r = Self {
            name: name.into(),
            f: Arc::new(f),
            df: Arc::new(df),
            kappa,
            growth: (growth_k, growth_nu),
            zero: false,
        };
        r.validate()?;
        Ok(r)
    }

    /// `f(u) = -u^3 + u`, `kappa = 1`.
    pub fn cubic() -> Self {
        Self::new("cubic", |u| -u * u * u + u, |u| 1.0 - 3.0 * u * u, 1.0, 3.0, 1.0)
            .expect("catalogue reaction")
    }

    /// `f(u) = u - e^u`, `kappa = 1`.
    pub fn exponential() -> Self {
        Self::new("exponential", |u| u - u.exp(), |u| 1.0 - u.exp(), 1.0, 1.0, 1.0)
            .expect("catalogue reaction")
    }

    /// `f(u) = kappa u`.
    pub fn linear(kappa: f64) -> Self {
        Self::new(
            "linear",
            move |u| kappa * u,
            move |_| kappa,
            kappa,
            kappa.abs().max(1.0),
            1.0,
        )
        .expect("catalogue reaction")
    }

    /// `f(u) = -u`, split with `kappa = 0`.
    pub fn damping() -> Self {
        Self::new("damping", |u| -u, |_| -1.0, 0.0, 1.0, 1.0).expect("catalogue reaction")
    }

    pub fn zero() -> Self {
        let mut r = Self::new("zero", |_| 0.0, |_| 0.0, 0.0, 1.0, 1.0).expect("catalogue reaction");
        r.zero = true;
        r
    }

    /// Catalogue lookup; `kappa` is only read by `linear`.
    pub fn from_name(name: &str, kappa: f64) -> Result<Self> {
        match name {
            "cubic" => Ok(Self::cubic()),
            "exponential" => Ok(Self::exponential()),
            "linear" => Ok(Self::linear(kappa)),
            "damping" => Ok(Self::damping()),
            "zero" => Ok(Self::zero()),
            other => Err(Error::config(
                "reaction.name",
                format!("unknown reaction `{other}` (cubic, exponential, linear, damping, zero)"),
            )),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }
    pub fn deriv(&self, u: f64) -> f64 {
        (self.df)(u)
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    /// `(K, nu)`.
    pub fn growth(&self) -> (f64, f64) {
        self.growth
    }
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// The non-increasing part `phi(u) = f(u) - kappa u`.
    pub fn decompose(&self) -> MonotonePart {
        MonotonePart {
            reaction: self.clone(),
        }
    }

    fn invalid(&self, reason: String) -> Error {
        Error::InvalidCoefficient {
            name: self.name.clone(),
            reason,
        }
    }

    fn validate(&self) -> Result<()> {
        let (k, nu) = self.growth;
        if !(k > 0.0 && nu > 0.0) {
            return Err(self.invalid(format!("growth constants must be positive (K={k}, nu={nu})")));
        }
        let h = 2.0 * SWEEP_HALF_WIDTH / (SWEEP_POINTS - 1) as f64;
        let us: Vec<f64> = (0..SWEEP_POINTS).map(|j| -SWEEP_HALF_WIDTH + j as f64 * h).collect();
        for &u in &us {
            let d = self.deriv(u);
            if !d.is_finite() || !self.eval(u).is_finite() {
                return Err(self.invalid(format!("non-finite value at u = {u}")));
            }
            if d > self.kappa + 1e-12 * (1.0 + d.abs()) {
                return Err(self.invalid(format!("f'({u}) = {d} exceeds kappa = {}", self.kappa)));
            }
            if d.abs() > k * (k * u.abs().powf(nu)).exp() * (1.0 + 1e-12) {
                return Err(self.invalid(format!("|f'({u})| = {} violates growth bound", d.abs())));
            }
        }
        for stride in [1, 7, 101, 2_003] {
            for j in stride..us.len() {
                let (u1, u2) = (us[j], us[j - stride]);
                let lhs = self.eval(u1) - self.eval(u2);
                let rhs = self.kappa * (u1 - u2);
                if lhs > rhs + 1e-9 * (1.0 + lhs.abs()) {
                    return Err(self.invalid(format!("half-Lipschitz fails for ({u1}, {u2})")));
                }
            }
        }
        Ok(())
    }
}

/// Anything that can be inverted by [`resolvent`]: a non-increasing scalar map.
pub trait Monotone {
    fn value(&self, u: f64) -> f64;
    fn deriv(&self, u: f64) -> f64;
}

/// `phi = f - kappa u` of a reaction.
#[derive(Debug, Clone)]
pub struct MonotonePart {
    reaction: ReactionFn,
}

impl MonotonePart {
    pub fn kappa(&self) -> f64 {
        self.reaction.kappa
    }
}

impl Monotone for MonotonePart {
    fn value(&self, u: f64) -> f64 {
        self.reaction.eval(u) - self.reaction.kappa * u
    }
    fn deriv(&self, u: f64) -> f64 {
        self.reaction.deriv(u) - self.reaction.kappa
    }
}

/// Non-increasing map given by closures; used in tests and for custom studies.
pub struct FnMonotone<F, D> {
    pub f: F,
    pub df: D,
}

impl<F: Fn(f64) -> f64, D: Fn(f64) -> f64> Monotone for FnMonotone<F, D> {
    fn value(&self, u: f64) -> f64 {
        (self.f)(u)
    }
    fn deriv(&self, u: f64) -> f64 {
        (self.df)(u)
    }
}

/// Root `v` of `v - lambda phi(v) = u`.
///
/// The root lies in the segment between `u` and `u + lambda phi(u)`; the bracket is
/// widened geometrically only if `phi` is not actually monotone. Inside the bracket a
/// Newton step is taken when it stays interior, bisection otherwise.
pub fn resolvent<P: Monotone + ?Sized>(phi: &P, lambda: f64, u: f64, tol: f64) -> Result<f64> {
    let fail = |reason: &str| Error::Resolvent {
        u,
        lambda,
        reason: reason.to_string(),
    };
    if !(lambda > 0.0) {
        return Err(fail("lambda must be positive"));
    }
    if !u.is_finite() {
        return Err(fail("non-finite argument"));
    }
    let g = |v: f64| v - lambda * phi.value(v) - u;
    let g0 = g(u);
    if g0 == 0.0 {
        return Ok(u);
    }
    if !g0.is_finite() {
        return Err(fail("phi is not finite at u"));
    }
    // g(u) = -lambda phi(u): the root is on the side of phi(u)
    let (mut lo, mut hi) = if g0 > 0.0 { (u - g0, u) } else { (u, u - g0) };
    let mut width = (hi - lo).abs().max(f64::MIN_POSITIVE);
    let mut expansions = 0;
    while !(g(lo) <= 0.0 && g(hi) >= 0.0) {
        expansions += 1;
        if expansions > 200 {
            return Err(fail("could not bracket the root"));
        }
        width *= 2.0;
        if g(lo) > 0.0 {
            lo -= width;
        }
        if g(hi) < 0.0 {
            hi += width;
        }
    }
    let mut v = if g0 > 0.0 { hi } else { lo };
    for _ in 0..200 {
        let gv = g(v);
        if gv == 0.0 {
            return Ok(v);
        }
        if gv < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let slope = 1.0 - lambda * phi.deriv(v);
        let newton = v - gv / slope;
        let next = if newton > lo && newton < hi && slope.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - v).abs();
        v = next;
        if step <= 4.0 * f64::EPSILON * (1.0 + v.abs()) || hi - lo <= 4.0 * f64::EPSILON * (1.0 + v.abs()) {
            break;
        }
    }
    let residual = g(v).abs();
    if residual <= tol * (1.0 + u.abs()) {
        Ok(v)
    } else {
        Err(fail(&format!("residual {residual:e} above tolerance")))
    }
}

/// Yosida approximation of the monotone part of a reaction at level `lambda`.
#[derive(Debug, Clone)]
pub struct YosidaApprox {
    base: MonotonePart,
    lambda: f64,
    tol: f64,
}

impl YosidaApprox {
    pub fn new(f: &ReactionFn, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive (got {lambda})")));
        }
        Ok(Self {
            base: f.decompose(),
            lambda,
            tol: RESOLVENT_TOL,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn resolvent(&self, u: f64) -> Result<f64> {
        resolvent(&self.base, self.lambda, u, self.tol)
    }

    /// `phi_lambda(u)`, evaluated as `phi(J_lambda(u))`.
    pub fn phi_lambda(&self, u: f64) -> Result<f64> {
        Ok(self.base.value(self.resolvent(u)?))
    }

    /// `phi_lambda'(u) = phi'(J) / (1 - lambda phi'(J))`.
    pub fn phi_lambda_deriv(&self, u: f64) -> Result<f64> {
        let d = self.base.deriv(self.resolvent(u)?);
        Ok(d / (1.0 - self.lambda * d))
    }

    /// `f_lambda(u) = phi_lambda(u) + kappa u`.
    pub fn f_lambda(&self, u: f64) -> Result<f64> {
        Ok(self.phi_lambda(u)? + self.base.kappa() * u)
    }

    /// Resolvent of `phi_lambda` itself with step `mu`:
    /// `(lambda w + mu J_{lambda+mu}(w)) / (lambda + mu)`.
    pub fn resolvent_of_approx(&self, mu: f64, w: f64) -> Result<f64> {
        let j = resolvent(&self.base, self.lambda + mu, w, self.tol)?;
        Ok((self.lambda * w + mu * j) / (self.lambda + mu))
    }
}

impl Monotone for YosidaApprox {
    fn value(&self, u: f64) -> f64 {
        self.phi_lambda(u).unwrap_or(f64::NAN)
    }
    fn deriv(&self, u: f64) -> f64 {
        self.phi_lambda_deriv(u).unwrap_or(f64::NAN)
    }
}

/// `f_lambda(u)`.
pub fn yosida_f(f: &ReactionFn, lambda: f64, u: f64) -> Result<f64> {
    YosidaApprox::new(f, lambda)?.f_lambda(u)
}

/// Violation count of one inequality over a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyTally {
    pub reaction: String,
    pub property: String,
    pub checks: usize,
    pub violations: usize,
    /// Largest excess over the slack, 0 when none.
    pub worst_excess: f64,
    /// Argument of the worst violation.
    pub worst_at: f64,
}

impl PropertyTally {
    fn new(reaction: &str, property: &str) -> Self {
        Self {
            reaction: reaction.into(),
            property: property.into(),
            checks: 0,
            violations: 0,
            worst_excess: 0.0,
            worst_at: f64::NAN,
        }
    }

    /// Records `lhs <= rhs` with slack `1e-6 (1 + |rhs|)` (or the one given).
    fn check(&mut self, lhs: f64, rhs: f64, slack: f64, at: f64) {
        self.checks += 1;
        let excess = lhs - rhs - slack;
        if !(excess <= 0.0) {
            self.violations += 1;
            if !(excess <= self.worst_excess) {
                self.worst_excess = excess;
                self.worst_at = at;
            }
        }
    }
}

/// Slack used by the property sweep.
pub const PROPERTY_SLACK: f64 = 1e-6;

fn slack(scale: f64) -> f64 {
    PROPERTY_SLACK * (1.0 + scale.abs())
}

/// Checks the Yosida properties on a randomized sweep `u ~ U[-10, 10]`.
///
/// For each point a far partner (independent uniform) and a near partner (`u + 1e-3 z`)
/// are used for the two-point inequalities. Limit properties are checked as monotone
/// decrease of the gap along `lambdas` extended by `1e-3 .. 1e-9`, plus a final gap bound.
/// Property names carry the `phi.` prefix for the monotone part and `f.` for `f_lambda`.
pub fn yosida_property_sweep(
    f: &ReactionFn,
    lambdas: &[f64],
    n_points: usize,
    seed: u64,
) -> Result<Vec<PropertyTally>> {
    let name = f.name().to_string();
    let kappa = f.kappa();
    let phi = f.decompose();
    let t = |p: &str| PropertyTally::new(&name, p);
    let mut phi_lip = t("phi.lipschitz_2_over_lambda");
    let mut phi_dom = t("phi.domination");
    let mut phi_mono = t("phi.monotone");
    let mut phi_lim = t("phi.pointwise_limit");
    let mut phi_dlim = t("phi.derivative_limit");
    let mut f_lip = t("f.lipschitz_2_over_lambda_plus_kappa");
    let mut f_dom = t("f.bound_1_plus_2kappa");
    let mut f_half = t("f.half_lipschitz");
    let mut f_lim = t("f.pointwise_limit");
    let mut f_dlim = t("f.derivative_limit");

    let mut ladder: Vec<f64> = lambdas.to_vec();
    ladder.extend([1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9]);
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ladder.dedup();
    let approx: Vec<YosidaApprox> = ladder
        .iter()
        .map(|&l| YosidaApprox::new(f, l))
        .collect::<Result<_>>()?;
    let swept: Vec<bool> = ladder.iter().map(|l| lambdas.contains(l)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fd_step = 1e-4;
    for _ in 0..n_points {
        let u: f64 = rng.gen_range(-SWEEP_HALF_WIDTH..SWEEP_HALF_WIDTH);
        let far: f64 = rng.gen_range(-SWEEP_HALF_WIDTH..SWEEP_HALF_WIDTH);
        let near = u + 1e-3 * rng.gen_range(-1.0..1.0);
        let phi_u = phi.value(u);
        let dphi_u = phi.deriv(u);
        let f_u = f.eval(u);

        let mut prev_gap = f64::INFINITY;
        let mut prev_dgap = f64::INFINITY;
        for (y, &in_sweep) in approx.iter().zip(&swept) {
            let lam = y.lambda();
            let pl = y.phi_lambda(u)?;
            let fl = pl + kappa * u;
            if in_sweep {
                for v in [far, near] {
                    let pv = y.phi_lambda(v)?;
                    let fv = pv + kappa * v;
                    let du = (u - v).abs();
                    phi_lip.check((pl - pv).abs(), 2.0 / lam * du, slack(pl.abs().max(pv.abs())), u);
                    let (lo, hi) = if u < v { (pl, pv) } else { (pv, pl) };
                    // u1 < u2 => phi_lambda(u1) >= phi_lambda(u2)
                    phi_mono.check(hi, lo, slack(hi), u);
                    f_lip.check((fl - fv).abs(), (2.0 / lam + kappa) * du, slack(fl.abs().max(fv.abs())), u);
                    f_half.check((fl - fv) * (u - v).signum(), kappa * du, slack(fl.abs().max(fv.abs())), u);
                }
                phi_dom.check(pl.abs(), phi_u.abs(), slack(phi_u), u);
                f_dom.check(fl.abs(), (1.0 + 2.0 * kappa) * f_u.abs(), slack(f_u), u);
            }
            // limits along the decreasing ladder
            let gap = (pl - phi_u).abs();
            phi_lim.check(gap, prev_gap, slack(phi_u), u);
            f_lim.check((fl - f_u).abs(), prev_gap, slack(f_u), u);
            prev_gap = gap;
            let h = fd_step * (1.0 + u.abs());
            let fd = (y.phi_lambda(u + h)? - y.phi_lambda(u - h)?) / (2.0 * h);
            let dgap = (fd - dphi_u).abs();
            phi_dlim.check(dgap, prev_dgap, slack(dphi_u), u);
            let fd_f = fd + kappa;
            f_dlim.check((fd_f - f.deriv(u)).abs(), prev_dgap, slack(dphi_u), u);
            prev_dgap = dgap;
        }
        // the smallest rung must have essentially converged
        let last = approx.last().expect("non-empty ladder");
        let gap = (last.phi_lambda(u)? - phi_u).abs();
        phi_lim.check(gap, last.lambda() * (phi_u * dphi_u).abs(), slack(phi_u), u);
        let fd = {
            let h = fd_step * (1.0 + u.abs());
            (last.phi_lambda(u + h)? - last.phi_lambda(u - h)?) / (2.0 * h)
        };
        phi_dlim.check((fd - dphi_u).abs(), 1e-2 * (1.0 + dphi_u.abs()), 0.0, u);
    }
    Ok(vec![
        phi_lip, phi_dom, phi_mono, phi_lim, phi_dlim, f_lip, f_dom, f_half, f_lim, f_dlim,
    ])
}
