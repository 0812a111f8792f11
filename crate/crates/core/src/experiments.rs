//! The batch commands: each reads a validated configuration and writes tables, fields,
//! optional plots and a manifest under one output directory.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::density::{atom_test, kde, run_ensemble, write_ensemble_csv, write_kde_csv, Bandwidth, KdeResult};
use crate::det_map::{csv_err, estimate_lipschitz_m_centers, MapSolver};
use crate::error::{Error, Result};
use crate::io::{write_field, Manifest, RunDir};
use crate::malliavin::{
    cameron_martin_fd_oracle, decompose_derivative, delta_ladder, positivity_study, write_positivity_csv,
    write_rung_summary_csv, MalliavinProbe, TIGHT_PICARD,
};
use crate::noise::derive_seed;
use crate::plot::{Chart, Series};
use crate::reaction::{yosida_property_sweep, Monotone, YosidaApprox};
use crate::solver::{convergence_report, initial_field, write_trace_csv, PicardSolver};

/// Yosida parameters tabulated by `yosida-study`.
pub const STUDY_LAMBDAS: [f64; 5] = [1.0, 0.5, 0.1, 0.01, 0.001];
/// Points of the randomized Yosida property sweep.
pub const SWEEP_POINTS: usize = 100_000;
/// Random input pairs of the Lipschitz-of-M estimate.
pub const LIPSCHITZ_TRIALS: usize = 200;
/// Amplitude of the random inputs of the Lipschitz-of-M estimate.
pub const LIPSCHITZ_AMPLITUDE: f64 = 0.05;
/// Paths checked against the finite-difference oracle by `malliavin`.
pub const LINEARIZATION_PATHS: usize = 20;
/// Shift size of the finite-difference oracle.
pub const LINEARIZATION_EPS: f64 = 1e-3;
/// Bin widths of the atom test.
pub const ATOM_RESOLUTIONS: [f64; 3] = [0.1, 0.05, 0.025];

/// Where and how a command writes.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub plots: bool,
}

impl RunOptions {
    pub fn from_config(cfg: &ExperimentConfig, plots: bool) -> Self {
        Self {
            out_dir: PathBuf::from(&cfg.run.output_dir),
            plots,
        }
    }
}

/// Manifest of a finished command plus human-readable summary lines.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub manifest: Manifest,
    pub summary: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    PicardStudy,
    YosidaStudy,
    Malliavin,
    Density,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Simulate,
        Command::PicardStudy,
        Command::YosidaStudy,
        Command::Malliavin,
        Command::Density,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::PicardStudy => "picard-study",
            Command::YosidaStudy => "yosida-study",
            Command::Malliavin => "malliavin",
            Command::Density => "density",
        }
    }

    pub fn run(self, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandOutcome> {
        cfg.validate().into_result()?;
        match self {
            Command::Simulate => cmd_simulate(cfg, opts),
            Command::PicardStudy => cmd_picard_study(cfg, opts),
            Command::YosidaStudy => cmd_yosida_study(cfg, opts),
            Command::Malliavin => cmd_malliavin(cfg, opts),
            Command::Density => cmd_density(cfg, opts),
        }
    }
}

fn write_rows<T: Serialize>(rows: &[T]) -> impl FnOnce(&mut Vec<u8>) -> Result<()> + '_ {
    move |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn plot(run: &mut RunDir, opts: &RunOptions, name: &str, chart: Chart) -> Result<()> {
    if opts.plots {
        let svg = chart.to_svg();
        run.write(&format!("plots/{name}.svg"), |w| {
            w.extend_from_slice(svg.as_bytes());
            Ok(())
        })?;
    }
    Ok(())
}

fn path_seeds(cfg: &ExperimentConfig, n: usize) -> Vec<u64> {
    (0..n as u64).map(|p| derive_seed(cfg.run.base_seed, p)).collect()
}

#[derive(Serialize)]
struct SliceRow {
    x: f64,
    initial: f64,
    value: f64,
}

#[derive(Serialize)]
struct SeriesRow {
    t: f64,
    value: f64,
}

/// One path on the full grid: noise and solution fields, the final slice and the Picard trace.
pub fn cmd_simulate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandOutcome> {
    let problem = cfg.problem()?;
    let grid = &problem.grid;
    let seed = derive_seed(cfg.run.base_seed, 0);
    let path = problem.noise.sample(seed);
    let sol = PicardSolver::new(&problem, cfg.picard_options())?.solve(&path)?;
    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("fields/noise_path0.bin", |w| write_field(w, grid.n_x(), seed, path.increments()))?;
    run.write("fields/u_path0.bin", |w| write_field(w, grid.n_x(), seed, sol.u.values()))?;
    let last = grid.n_t();
    let slice: Vec<SliceRow> = (0..grid.n_x())
        .map(|i| SliceRow {
            x: grid.x(i),
            initial: sol.u.at(0, i),
            value: sol.u.at(last, i),
        })
        .collect();
    run.write("tables/final_slice.csv", write_rows(&slice))?;
    let i0 = grid
        .node_index(cfg.probe.x0)
        .ok_or_else(|| Error::config("probe.x0", "not a grid node"))?;
    let series: Vec<SeriesRow> = (0..=last)
        .map(|k| SeriesRow {
            t: grid.t(k),
            value: sol.u.at(k, i0),
        })
        .collect();
    run.write("tables/probe_series.csv", write_rows(&series))?;
    run.write("tables/picard_trace.csv", |w| write_trace_csv(&sol.state.deltas, w))?;
    plot(
        &mut run,
        opts,
        "final_slice",
        Chart::new(&format!("u(T, x), T = {}", grid.t_max()), "x", "u")
            .with(Series::new("u(T, .)", slice.iter().map(|r| (r.x, r.value)).collect())),
    )?;
    let summary = vec![
        format!("seed {seed}: {} map solves, last delta {:.3e}", sol.state.n, sol.state.deltas.last().copied().unwrap_or(0.0)),
        format!("u(T, x0) = {:.6}", sol.u.at(last, i0)),
        format!("map residual {:.3e}", sol.map_residual),
    ];
    let manifest = run.finish(Command::Simulate.name(), &cfg.hash(), cfg.run.base_seed, vec![seed])?;
    Ok(CommandOutcome { manifest, summary })
}

#[derive(Serialize)]
struct TraceRow {
    path_id: usize,
    seed: u64,
    n: usize,
    delta: f64,
}

#[derive(Serialize)]
struct PicardSummaryRow {
    path_id: usize,
    seed: u64,
    iterations: usize,
    final_delta: f64,
    fitted_rate: Option<f64>,
    geometric: bool,
    map_residual: f64,
}

#[derive(Serialize)]
struct LipschitzRow {
    center: f64,
    trial: usize,
    ratio: f64,
}

#[derive(Serialize)]
struct LipschitzSummaryRow {
    theta: f64,
    center: f64,
    max_ratio: f64,
}

#[derive(Serialize)]
struct MapMethodRow {
    method: &'static str,
    levels: usize,
    residual: f64,
    sup_gap_to_semi_implicit: f64,
}

/// Picard traces over paths, the Lipschitz-of-M estimate and a map-method comparison.
pub fn cmd_picard_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandOutcome> {
    let problem = cfg.problem()?;
    let grid = &problem.grid;
    let options = cfg.picard_options();
    let seeds = path_seeds(cfg, cfg.run.n_paths);
    let solved: Vec<(Vec<f64>, f64, Option<crate::grid::RandomField>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(p, &seed)| {
            let wrap = |e: Error| Error::Path {
                path_id: p,
                seed,
                source: Box::new(e),
            };
            let sol = PicardSolver::new(&problem, options)
                .and_then(|mut s| s.solve(&problem.noise.sample(seed)))
                .map_err(wrap)?;
            let z = (p == 0).then(|| sol.state.z.clone());
            Ok((sol.state.deltas, sol.map_residual, z))
        })
        .collect::<Result<_>>()?;
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    for (p, ((deltas, residual, _), &seed)) in solved.iter().zip(&seeds).enumerate() {
        for (n, d) in deltas.iter().enumerate() {
            traces.push(TraceRow {
                path_id: p,
                seed,
                n: n + 1,
                delta: *d,
            });
        }
        let report = convergence_report(deltas);
        summaries.push(PicardSummaryRow {
            path_id: p,
            seed,
            iterations: deltas.len(),
            final_delta: deltas.last().copied().unwrap_or(0.0),
            fitted_rate: report.rate,
            geometric: report.geometric,
            map_residual: *residual,
        });
    }
    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("tables/picard_traces.csv", write_rows(&traces))?;
    run.write("tables/picard_summary.csv", write_rows(&summaries))?;

    let estimates = estimate_lipschitz_m_centers(
        &problem.reaction,
        grid,
        cfg.weight.theta,
        &cfg.weight.centers,
        LIPSCHITZ_TRIALS,
        cfg.run.base_seed,
        LIPSCHITZ_AMPLITUDE,
    )?;
    let lip_rows: Vec<LipschitzRow> = estimates
        .iter()
        .flat_map(|e| {
            e.ratios.iter().enumerate().map(move |(trial, &ratio)| LipschitzRow {
                center: e.center,
                trial,
                ratio,
            })
        })
        .collect();
    let lip_summary: Vec<LipschitzSummaryRow> = estimates
        .iter()
        .map(|e| LipschitzSummaryRow {
            theta: e.theta,
            center: e.center,
            max_ratio: e.max_ratio,
        })
        .collect();
    run.write("tables/lipschitz_m.csv", write_rows(&lip_rows))?;
    run.write("tables/lipschitz_summary.csv", write_rows(&lip_summary))?;

    let z0 = solved[0].2.clone().expect("path 0 keeps its convolution");
    let input = initial_field(&problem.initial, grid).add(&z0);
    let mut map = MapSolver::new(grid, &problem.reaction);
    let semi = map.solve(&input)?;
    let ladder = map.solve_yosida_ladder(&input, 4)?;
    let methods = vec![
        MapMethodRow {
            method: "semi-implicit",
            levels: 0,
            residual: semi.residual,
            sup_gap_to_semi_implicit: 0.0,
        },
        MapMethodRow {
            method: "yosida-ladder",
            levels: 4,
            residual: ladder.residual,
            sup_gap_to_semi_implicit: ladder.solution.sub(&semi.solution).max_abs(),
        },
    ];
    run.write("tables/map_methods.csv", write_rows(&methods))?;
    run.write("tables/map_solve_path0.csv", |w| semi.write_csv(grid, w))?;
    run.write("tables/picard_trace_path0.csv", |w| write_trace_csv(&solved[0].0, w))?;

    let mut chart = Chart::new("Picard increments", "iteration n", "weighted delta").log_y();
    for (p, (deltas, _, _)) in solved.iter().enumerate().take(5) {
        chart = chart.with(Series::new(
            format!("path {p}"),
            deltas.iter().enumerate().map(|(n, d)| ((n + 1) as f64, *d)).collect(),
        ));
    }
    plot(&mut run, opts, "picard_traces", chart)?;

    let max_iter = summaries.iter().map(|s| s.iterations).max().unwrap_or(0);
    let geometric = summaries.iter().filter(|s| s.geometric).count();
    let mut summary = vec![
        format!("{} paths, at most {max_iter} map solves, {geometric} with geometric decay", seeds.len()),
        format!(
            "map methods: semi-implicit residual {:.3e}, Yosida ladder gap {:.3e}",
            semi.residual, methods[1].sup_gap_to_semi_implicit
        ),
    ];
    for e in &estimates {
        summary.push(format!("Lipschitz of M, center {}: max ratio {:.4}", e.center, e.max_ratio));
    }
    let manifest = run.finish(Command::PicardStudy.name(), &cfg.hash(), cfg.run.base_seed, seeds)?;
    Ok(CommandOutcome { manifest, summary })
}

#[derive(Debug, Clone, Serialize)]
struct YosidaRow {
    lambda: f64,
    u: f64,
    phi_lambda: f64,
    phi: f64,
    gap: f64,
}

#[derive(Serialize)]
struct GapRow {
    lambda: f64,
    max_gap: f64,
}

/// Yosida curves `phi_lambda` against `phi`, gap decay and the randomized property sweep.
pub fn cmd_yosida_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandOutcome> {
    let f = cfg.reaction_fn()?;
    let phi = f.decompose();
    let us: Vec<f64> = (0..=120).map(|j| -3.0 + 0.05 * j as f64).collect();
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    for &lambda in &STUDY_LAMBDAS {
        let y = YosidaApprox::new(&f, lambda)?;
        let mut max_gap: f64 = 0.0;
        for &u in &us {
            let pl = y.phi_lambda(u)?;
            let p = phi.value(u);
            let gap = (pl - p).abs();
            max_gap = max_gap.max(gap);
            rows.push(YosidaRow {
                lambda,
                u,
                phi_lambda: pl,
                phi: p,
                gap,
            });
        }
        gaps.push(GapRow { lambda, max_gap });
    }
    let tallies = yosida_property_sweep(&f, &STUDY_LAMBDAS[..4], SWEEP_POINTS, cfg.run.base_seed)?;
    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("tables/yosida_curves.csv", write_rows(&rows))?;
    run.write("tables/yosida_gap_summary.csv", write_rows(&gaps))?;
    run.write("tables/yosida_properties.csv", write_rows(&tallies))?;
    let mut chart = Chart::new(&format!("Yosida approximation of {}", f.name()), "u", "phi_lambda(u)");
    chart = chart.with(Series::new("phi", us.iter().map(|&u| (u, phi.value(u))).collect()));
    for &lambda in &STUDY_LAMBDAS {
        chart = chart.with(Series::new(
            format!("lambda = {lambda}"),
            rows.iter().filter(|r| r.lambda == lambda).map(|r| (r.u, r.phi_lambda)).collect(),
        ));
    }
    plot(&mut run, opts, "yosida_curves", chart)?;
    let decreasing = gaps.windows(2).all(|w| w[1].max_gap <= w[0].max_gap);
    let mut summary = vec![format!(
        "max gap by lambda: {} ({})",
        gaps.iter()
            .map(|g| format!("{}: {:.3e}", g.lambda, g.max_gap))
            .collect::<Vec<_>>()
            .join(", "),
        if decreasing { "monotone decay" } else { "not monotone" }
    )];
    for t in &tallies {
        summary.push(format!("{:<40} {:>8} checks, {} violations", t.property, t.checks, t.violations));
    }
    let manifest = run.finish(Command::YosidaStudy.name(), &cfg.hash(), cfg.run.base_seed, vec![cfg.run.base_seed])?;
    Ok(CommandOutcome { manifest, summary })
}

#[derive(Serialize)]
struct LinearizationRow {
    path_id: usize,
    seed: u64,
    delta: f64,
    eps: f64,
    derivative: f64,
    finite_difference: f64,
    relative_error: f64,
}

/// Positivity study over the delta ladder and the finite-difference linearization check.
pub fn cmd_malliavin(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandOutcome> {
    let problem = cfg.problem()?;
    let (t0, x0) = (cfg.probe.t0, cfg.probe.x0);
    let study = positivity_study(
        &problem,
        t0,
        x0,
        cfg.probe.k_max as usize,
        cfg.run.n_paths,
        cfg.run.base_seed,
        cfg.picard_options(),
    )?;
    let n0 = problem.grid.time_index(t0).expect("validated probe time");
    let local = problem.truncated(n0)?;
    let (rungs, _) = delta_ladder(&local.grid, t0, cfg.probe.k_max as usize);
    let delta = rungs.last().expect("validated ladder").1;
    let probe = MalliavinProbe::new(&local.grid, t0, x0, delta)?;
    let n_lin = cfg.run.n_paths.min(LINEARIZATION_PATHS);
    let lin: Vec<LinearizationRow> = (0..n_lin)
        .into_par_iter()
        .map(|p| {
            let seed = derive_seed(cfg.run.base_seed, p as u64);
            let wrap = |e: Error| Error::Path {
                path_id: p,
                seed,
                source: Box::new(e),
            };
            let path = local.noise.sample(seed);
            let u = PicardSolver::new(&local, TIGHT_PICARD)
                .and_then(|mut s| s.solve(&path))
                .map_err(wrap)?
                .u;
            let d = decompose_derivative(&local, &u, &path, &probe).map_err(wrap)?;
            let fd = cameron_martin_fd_oracle(&local, &path, &probe, LINEARIZATION_EPS, TIGHT_PICARD).map_err(wrap)?;
            Ok(LinearizationRow {
                path_id: p,
                seed,
                delta,
                eps: LINEARIZATION_EPS,
                derivative: d.total,
                finite_difference: fd,
                relative_error: (d.total - fd).abs() / d.total.abs().max(f64::MIN_POSITIVE),
            })
        })
        .collect::<Result<_>>()?;
    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("tables/positivity.csv", |w| write_positivity_csv(&study, w))?;
    run.write("tables/positivity_rungs.csv", |w| write_rung_summary_csv(&study, w))?;
    run.write("tables/linearization.csv", write_rows(&lin))?;
    plot(
        &mut run,
        opts,
        "positivity_ratio",
        Chart::new("median (|A| + |B|) / Q by rung", "k", "ratio")
            .log_y()
            .with(Series::new(
                "median ratio",
                study.summaries.iter().map(|s| (s.k as f64, s.median_ratio)).collect(),
            )),
    )?;
    let mut summary: Vec<String> = study
        .summaries
        .iter()
        .map(|s| {
            format!(
                "k = {} delta = {:.5}: positive {:.4}, median (|A|+|B|)/Q {:.4e}, min margin {:.4}",
                s.k, s.delta, s.positive_fraction, s.median_ratio, s.min_lower_bound_margin
            )
        })
        .collect();
    if !study.skipped.is_empty() {
        summary.push(format!("unresolved rungs: {:?}", study.skipped.iter().map(|s| s.0).collect::<Vec<_>>()));
    }
    let worst = lin.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    summary.push(format!("linearization: worst relative error {worst:.3e} over {n_lin} paths"));
    let seeds = path_seeds(cfg, cfg.run.n_paths);
    let manifest = run.finish(Command::Malliavin.name(), &cfg.hash(), cfg.run.base_seed, seeds)?;
    Ok(CommandOutcome { manifest, summary })
}

#[derive(Serialize)]
struct AtomRow {
    resolution: f64,
    max_mass: f64,
    samples: usize,
}

#[derive(Serialize)]
struct KdeSummaryRow {
    kind: &'static str,
    bandwidth: Option<f64>,
    mass: Option<f64>,
    atom_value: Option<f64>,
}

/// Ensemble of `u(t0, x0)`, its KDE and the atom test.
pub fn cmd_density(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CommandOutcome> {
    let problem = cfg.problem()?;
    let ensemble = run_ensemble(
        &problem,
        cfg.probe.t0,
        cfg.probe.x0,
        cfg.run.n_paths,
        cfg.run.base_seed,
        cfg.picard_options(),
    )?;
    let mut run = RunDir::create(&opts.out_dir)?;
    run.write("tables/ensemble.csv", |w| write_ensemble_csv(&ensemble, w))?;
    let mut summary = vec![format!("{} samples, fingerprint {}", ensemble.samples.len(), ensemble.fingerprint)];
    if ensemble.samples.len() >= 100 {
        let k = kde(&ensemble.samples, Bandwidth::Silverman)?;
        let row = match &k {
            KdeResult::Curve(c) => {
                run.write("tables/kde.csv", |w| write_kde_csv(c, w))?;
                plot(
                    &mut run,
                    opts,
                    "kde",
                    Chart::new("density of u(t0, x0)", "value", "density")
                        .with(Series::new("kde", c.values.iter().copied().zip(c.density.iter().copied()).collect())),
                )?;
                summary.push(format!("kde bandwidth {:.4e}, mass {:.6}", c.bandwidth, c.mass));
                KdeSummaryRow {
                    kind: "curve",
                    bandwidth: Some(c.bandwidth),
                    mass: Some(c.mass),
                    atom_value: None,
                }
            }
            KdeResult::Atomic { value, .. } => {
                summary.push(format!("all samples equal {value}: the law is a point mass"));
                KdeSummaryRow {
                    kind: "atomic",
                    bandwidth: None,
                    mass: None,
                    atom_value: Some(*value),
                }
            }
        };
        run.write("tables/kde_summary.csv", write_rows(&[row]))?;
    } else {
        summary.push("fewer than 100 samples: kde skipped".into());
    }
    if ensemble.samples.len() >= 1000 {
        let atoms: Vec<AtomRow> = ATOM_RESOLUTIONS
            .iter()
            .map(|&r| {
                atom_test(&ensemble.samples, r).map(|a| AtomRow {
                    resolution: r,
                    max_mass: a.max_mass,
                    samples: a.samples,
                })
            })
            .collect::<Result<_>>()?;
        for a in &atoms {
            summary.push(format!("atom mass at resolution {}: {:.4}", a.resolution, a.max_mass));
        }
        run.write("tables/atoms.csv", write_rows(&atoms))?;
    } else {
        summary.push("fewer than 1000 samples: atom test skipped".into());
    }
    let manifest = run.finish(Command::Density.name(), &cfg.hash(), cfg.run.base_seed, ensemble.seeds.clone())?;
    Ok(CommandOutcome { manifest, summary })
}
