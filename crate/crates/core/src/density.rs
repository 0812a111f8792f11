//! Ensembles of `u(t0, x0)`, kernel density estimates and atom statistics.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::det_map::csv_err;
use crate::error::{Error, Result};
use crate::noise::derive_seed;
use crate::solver::{PicardOptions, PicardSolver, SpdeProblem};

/// Number of points of the KDE value grid.
pub const KDE_POINTS: usize = 512;

/// Samples of `u(t0, x0)` over independent paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub t0: f64,
    pub x0: f64,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub samples: Vec<f64>,
    /// Hex SHA-256 of the description of everything that determines the samples.
    pub fingerprint: String,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    t_max: f64,
    n_t: usize,
    half_width: f64,
    n_x: usize,
    boundary: crate::grid::Boundary,
    covariance: &'a crate::noise::CovarianceSpec,
    reaction: &'a str,
    kappa: f64,
    sigma: &'a str,
    alpha: f64,
    initial: &'a crate::solver::InitialCondition,
    options: &'a PicardOptions,
    t0: f64,
    x0: f64,
    base_seed: u64,
    n_paths: usize,
}

/// One Picard solve per path, truncated at `t0`, collected in path order.
pub fn run_ensemble(
    problem: &SpdeProblem,
    t0: f64,
    x0: f64,
    n_paths: usize,
    base_seed: u64,
    options: PicardOptions,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(Error::Domain("an ensemble needs at least one path".into()));
    }
    let n0 = problem
        .grid
        .time_index(t0)
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Domain(format!("t0 = {t0} is not a positive grid time")))?;
    let i0 = problem
        .grid
        .node_index(x0)
        .ok_or_else(|| Error::Domain(format!("x0 = {x0} is not a grid node")))?;
    let local = problem.truncated(n0)?;
    let fingerprint = {
        let g = &problem.grid;
        let input = FingerprintInput {
            t_max: g.t_max(),
            n_t: g.n_t(),
            half_width: g.half_width(),
            n_x: g.n_x(),
            boundary: g.boundary(),
            covariance: problem.noise.spec(),
            reaction: problem.reaction.name(),
            kappa: problem.reaction.kappa(),
            sigma: problem.diffusion.name(),
            alpha: problem.diffusion.alpha(),
            initial: &problem.initial,
            options: &options,
            t0,
            x0,
            base_seed,
            n_paths,
        };
        let json = serde_json::to_vec(&input).map_err(|e| Error::Format(e.to_string()))?;
        hex::encode(Sha256::digest(&json))
    };
    let seeds: Vec<u64> = (0..n_paths as u64).map(|p| derive_seed(base_seed, p)).collect();
    let samples: Vec<f64> = seeds
        .par_iter()
        .enumerate()
        .map_init(
            || PicardSolver::new(&local, options),
            |solver, (p, &seed)| {
                let wrap = |e: Error| Error::Path {
                    path_id: p,
                    seed,
                    source: Box::new(e),
                };
                let solver = solver.as_mut().map_err(|e| wrap(Error::Domain(e.to_string())))?;
                let path = local.noise.sample(seed);
                let sol = solver.solve(&path).map_err(wrap)?;
                Ok(sol.u.at(n0, i0))
            },
        )
        .collect::<Result<_>>()?;
    Ok(Ensemble {
        t0: local.grid.t(n0),
        x0: local.grid.x(i0),
        base_seed,
        seeds,
        samples,
        fingerprint,
    })
}

/// CSV: a `# fingerprint=<hex>` line, then `path_id,seed,value`.
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, mut out: W) -> Result<()> {
    writeln!(out, "# fingerprint={}", ensemble.fingerprint)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "seed", "value"]).map_err(csv_err)?;
    for (p, (s, v)) in ensemble.seeds.iter().zip(&ensemble.samples).enumerate() {
        w.write_record(&[p.to_string(), s.to_string(), v.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Bandwidth choice for [`kde`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
    Silverman,
    /// Silverman's value times a factor.
    ScaledSilverman(f64),
    Fixed(f64),
}

/// Density curve on an evenly spaced value grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub values: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoid integral of the curve over the value grid.
    pub mass: f64,
}

/// KDE outcome: a curve, or an atom when all samples coincide.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KdeResult {
    Curve(KdeCurve),
    Atomic { value: f64, count: usize },
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian-kernel density estimate on `KDE_POINTS` points over `[min - 4h, max + 4h]`.
pub fn kde(samples: &[f64], bandwidth: Bandwidth) -> Result<KdeResult> {
    if samples.len() < 100 {
        return Err(Error::Domain(format!("kde needs at least 100 samples (got {})", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kde samples".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(KdeResult::Atomic {
            value: lo,
            count: samples.len(),
        });
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(samples),
        Bandwidth::ScaledSilverman(c) => c * silverman_bandwidth(samples),
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("bandwidth must be positive (got {h})")));
    }
    let (a, b) = (lo - 4.0 * h, hi + 4.0 * h);
    let step = (b - a) / (KDE_POINTS - 1) as f64;
    let values: Vec<f64> = (0..KDE_POINTS).map(|j| a + j as f64 * step).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = values
        .par_iter()
        .map(|&x| {
            samples
                .iter()
                .map(|s| {
                    let z = (x - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let mass = step * (density.iter().sum::<f64>() - 0.5 * (density[0] + density[KDE_POINTS - 1]));
    Ok(KdeResult::Curve(KdeCurve {
        bandwidth: h,
        values,
        density,
        mass,
    }))
}

/// CSV with columns `value,density`.
pub fn write_kde_csv<W: Write>(curve: &KdeCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "density"]).map_err(csv_err)?;
    for (v, d) in curve.values.iter().zip(&curve.density) {
        w.write_record(&[v.to_string(), d.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Largest bin fraction, minimized over two binnings offset by half a bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomReport {
    pub resolution: f64,
    pub max_mass: f64,
    pub samples: usize,
}

pub fn atom_test(samples: &[f64], resolution: f64) -> Result<AtomReport> {
    if samples.len() < 1000 {
        return Err(Error::Domain(format!(
            "atom test needs at least 1000 samples (got {})",
            samples.len()
        )));
    }
    if !(resolution > 0.0) {
        return Err(Error::Domain(format!("resolution must be positive (got {resolution})")));
    }
    let max_bin = |offset: f64| {
        let mut counts: HashMap<i64, usize> = HashMap::new();
        for s in samples {
            *counts.entry(((s - offset) / resolution).floor() as i64).or_default() += 1;
        }
        counts.values().copied().max().unwrap_or(0)
    };
    let best = max_bin(0.0).min(max_bin(0.5 * resolution));
    Ok(AtomReport {
        resolution,
        max_mass: best as f64 / samples.len() as f64,
        samples: samples.len(),
    })
}
