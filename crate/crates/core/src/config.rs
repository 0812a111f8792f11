//! Experiment configuration: flat-sectioned TOML, dotted overrides and cross-field validation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::det_map::WeightedNorm;
use crate::error::{Error, Result};
use crate::grid::{Boundary, SpaceTimeGrid};
use crate::malliavin::MIN_WINDOW_STEPS;
use crate::noise::{dalang_check, CovarianceKind, CovarianceSpec, DalangReport, NoiseModel};
use crate::reaction::ReactionFn;
use crate::solver::{Diffusion, InitialCondition, PicardOptions, SpdeProblem};

/// The configuration shipped with the command-line tool.
pub const DEFAULT_CONFIG: &str = include_str!("../default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t_max: f64,
    pub n_t: usize,
    pub half_width: f64,
    pub n_x: usize,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "periodic")]
    pub boundary: Boundary,
}

fn one() -> usize {
    1
}
fn periodic() -> Boundary {
    Boundary::Periodic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// `white`, `gaussian` or `riesz`.
    pub kind: String,
    pub eta: f64,
    /// Correlation length of the `gaussian` kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    /// Exponent of the `riesz` kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSection {
    /// `cubic`, `exponential`, `linear`, `damping` or `zero`.
    pub name: String,
    /// Slope of the `linear` reaction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSection {
    /// `constant`, `sine` or `sqrt`.
    pub name: String,
    /// Level of the `constant` diffusion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Declared lower bound of `|sigma|`; must not exceed the catalogue bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    pub theta: f64,
    pub centers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub t0: f64,
    pub x0: f64,
    pub k_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_paths: usize,
    pub base_seed: u64,
    pub output_dir: String,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
}

fn default_n_max() -> usize {
    PicardOptions::default().n_max
}
fn default_stop_tol() -> f64 {
    PicardOptions::default().stop_tol
}

/// One experiment, as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub reaction: ReactionSection,
    pub sigma: SigmaSection,
    pub initial: InitialCondition,
    pub weight: WeightSection,
    pub probe: ProbeSection,
    pub run: RunSection,
}

/// A violated check, keyed by the dotted config path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ConfigIssue>,
    pub dalang_integral: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    /// The first issue as an error, if any.
    pub fn into_result(self) -> Result<()> {
        match self.issues.into_iter().next() {
            None => Ok(()),
            Some(i) => Err(Error::config(i.key, i.message)),
        }
    }
}

fn parse_error(e: toml::de::Error) -> Error {
    Error::config("(file)", e.message().to_string())
}

/// Parses an override value as a TOML value; bare words fall back to strings.
fn override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` overrides to a parsed document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.clone(), "override must look like section.key=value"))?;
        let path = path.trim();
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::config(path, "override key must be section.key"))?;
        let table = doc
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(section, "not a section"))?;
        table.insert(key.to_string(), override_value(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(parse_error)?;
        apply_overrides(&mut doc, overrides)?;
        toml::Value::Table(doc).try_into().map_err(parse_error)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("shipped configuration parses")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization, with `run.output_dir` left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.output_dir.clear();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn picard_options(&self) -> PicardOptions {
        PicardOptions {
            n_max: self.run.n_max,
            stop_tol: self.run.stop_tol,
        }
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        let g = &self.grid;
        SpaceTimeGrid::with_dim(g.t_max, g.n_t, g.half_width, g.n_x, g.dim, g.boundary).map_err(
            |e| match e {
                Error::Unsupported(m) => Error::config("grid.dim", m),
                other => Error::config("grid", other.to_string()),
            },
        )
    }

    pub fn covariance(&self) -> Result<CovarianceSpec> {
        let n = &self.noise;
        let kind = match n.kind.as_str() {
            "white" => CovarianceKind::White,
            "gaussian" => CovarianceKind::Gaussian {
                length: n
                    .length
                    .ok_or_else(|| Error::config("noise.length", "gaussian noise needs a length"))?,
            },
            "riesz" => CovarianceKind::Riesz {
                beta: n
                    .beta
                    .ok_or_else(|| Error::config("noise.beta", "riesz noise needs beta"))?,
            },
            other => {
                return Err(Error::config(
                    "noise.kind",
                    format!("unknown noise `{other}` (white, gaussian, riesz)"),
                ))
            }
        };
        CovarianceSpec::new(kind, n.eta).map_err(|e| Error::config("noise", e.to_string()))
    }

    pub fn reaction_fn(&self) -> Result<ReactionFn> {
        let r = &self.reaction;
        if r.name == "linear" && r.kappa.is_none() {
            return Err(Error::config("reaction.kappa", "linear reaction needs kappa"));
        }
        ReactionFn::from_name(&r.name, r.kappa.unwrap_or(0.0))
    }

    /// The diffusion, with the declared `alpha` if present.
    pub fn diffusion(&self) -> Result<Diffusion> {
        let s = &self.sigma;
        if s.name == "constant" && s.value.is_none() {
            return Err(Error::config("sigma.value", "constant diffusion needs a value"));
        }
        let d = Diffusion::from_name(&s.name, s.value.unwrap_or(0.0))?;
        match s.alpha {
            Some(a) => d.with_alpha(a),
            None if d.alpha() > 0.0 => Ok(d),
            None => Err(Error::config(
                "sigma.alpha",
                format!("alpha > 0 is required (`{}` has alpha = {})", s.name, d.alpha()),
            )),
        }
    }

    pub fn weights(&self) -> Result<Vec<WeightedNorm>> {
        if self.weight.centers.is_empty() {
            return Err(Error::config("weight.centers", "at least one center is required"));
        }
        self.weight
            .centers
            .iter()
            .map(|&c| WeightedNorm::new(self.weight.theta, c).map_err(|e| Error::config("weight", e.to_string())))
            .collect()
    }

    /// Runs every check and collects all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let mut push = |e: Error| {
            if let Error::Config { key, message } = e {
                issues.push(ConfigIssue { key, message });
            } else {
                issues.push(ConfigIssue {
                    key: "(model)".into(),
                    message: e.to_string(),
                });
            }
        };
        let grid = self.grid().map_err(&mut push).ok();
        let mut dalang: Option<DalangReport> = None;
        if let Ok(spec) = self.covariance().map_err(&mut push) {
            let report = dalang_check(&spec);
            if !report.passed {
                push(Error::config(
                    "noise.eta",
                    format!(
                        "Dalang condition fails: integrand tail |xi|^{:.3} is not integrable",
                        report.tail_exponent
                    ),
                ));
            }
            dalang = Some(report);
        }
        let reaction = self.reaction_fn().map_err(&mut push).ok();
        if let Err(e) = self.diffusion() {
            push(e);
        }
        if let Err(e) = self.initial.validate() {
            push(e);
        }
        if let (Ok(weights), Some(f)) = (self.weights().map_err(&mut push), &reaction) {
            if let Err(e) = weights[0].check_reaction(f) {
                push(e);
            }
        }
        if let Some(g) = &grid {
            let p = &self.probe;
            match g.time_index(p.t0) {
                Some(n) if n > 0 => {
                    let smallest = p.t0 * 2f64.powi(-(p.k_max as i32));
                    if smallest < MIN_WINDOW_STEPS as f64 * g.dt() * (1.0 - 1e-12) {
                        push(Error::config(
                            "probe.k_max",
                            format!(
                                "delta ladder unresolvable: t0 * 2^-k_max = {smallest} < {MIN_WINDOW_STEPS} dt = {}",
                                MIN_WINDOW_STEPS as f64 * g.dt()
                            ),
                        ));
                    }
                }
                _ => push(Error::config(
                    "probe.t0",
                    format!("t0 = {} must be a positive grid time in (0, {}]", p.t0, g.t_max()),
                )),
            }
            if g.node_index(p.x0).is_none() {
                push(Error::config("probe.x0", format!("x0 = {} is not a grid node", p.x0)));
            }
        }
        if self.run.n_paths == 0 {
            push(Error::config("run.n_paths", "at least one path is required"));
        }
        if self.run.n_max == 0 {
            push(Error::config("run.n_max", "at least one iteration is required"));
        }
        if !(self.run.stop_tol > 0.0) {
            push(Error::config("run.stop_tol", "stop_tol must be positive"));
        }
        ValidationReport {
            issues,
            dalang_integral: dalang.map(|d| d.integral),
        }
    }

    /// Validates and assembles the equation, weighted at the first center.
    pub fn problem(&self) -> Result<SpdeProblem> {
        self.validate().into_result()?;
        let grid = self.grid()?;
        let noise = NoiseModel::new(&grid, &self.covariance()?)?;
        SpdeProblem::new(
            noise,
            self.reaction_fn()?,
            self.diffusion()?,
            self.initial,
            self.weights()?[0],
        )
    }
}
