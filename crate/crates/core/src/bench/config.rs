//! Experiment configuration in a flat `key = value` text format.
//!
//! ```text
//! # Example 1
//! domain = square
//! p_max = 10
//! f = const:1
//! ```
//!
//! Keys: `domain` (`square`, `lshape`, `polygon:x,y;x,y;...`), `dirichlet`
//! (`all` or 0-based edge indices `0,2`), `initial_mesh` (`builtin` or
//! `file:<path>`), `p_max`, `lambda`, `q`, `f` (`const:c`,
//! `poly:c@a,b;c@a,b;...` for `sum c x^a y^b`, or `manufactured`), `alpha`,
//! `stopping` (`relative:theta`, `fixed:n`, `coupled:c`), `max_iterations`,
//! `solver` (`dense`, `condensed`), `reference_delta`, `reference_theta`,
//! `output`, `deterministic`, `seed`. Unknown keys are errors.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::Point;
use crate::ilg::{IlgConfig, Stopping};
use crate::linear_solve::SolverPath;
use crate::poly::Poly2;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("bad value for `{key}`: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Square,
    LShape,
    Polygon(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Constant(f64),
    Polynomial(Poly2),
    /// `u* = x(1-x)y(1-y)` on the unit square, `f = -lap u* + lambda u*^(2q+1)`.
    Manufactured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    /// `None` means every edge is Dirichlet.
    pub dirichlet: Option<Vec<usize>>,
    pub initial_mesh: MeshSpec,
    pub p_max: usize,
    pub lambda: f64,
    pub q: usize,
    pub f: SourceSpec,
    pub alpha: f64,
    pub stopping: Stopping,
    pub max_iterations: usize,
    pub solver: SolverPath,
    pub reference_delta: usize,
    pub reference_theta: f64,
    pub output: Option<PathBuf>,
    pub deterministic: bool,
    pub seed: u64,
    /// The `key = value` pairs as given, for echoing into output headers.
    pub raw: Vec<(String, String)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: DomainSpec::Square,
            dirichlet: None,
            initial_mesh: MeshSpec::Builtin,
            p_max: 4,
            lambda: 1.0,
            q: 1,
            f: SourceSpec::Constant(1.0),
            alpha: 0.5,
            stopping: Stopping::RelativeReduction(1e-2),
            max_iterations: 500,
            solver: SolverPath::Condensed,
            reference_delta: 2,
            reference_theta: 1e-12,
            output: None,
            deterministic: false,
            seed: 0,
            raw: Vec::new(),
        }
    }
}

const KEYS: &[&str] = &[
    "domain",
    "dirichlet",
    "initial_mesh",
    "p_max",
    "lambda",
    "q",
    "f",
    "alpha",
    "stopping",
    "max_iterations",
    "solver",
    "reference_delta",
    "reference_theta",
    "output",
    "deterministic",
    "seed",
];

fn bad(key: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, format!("`{v}`: {e}")))
}

fn parse_points(key: &str, s: &str) -> Result<Vec<Point>, ConfigError> {
    s.split(';')
        .map(|pair| {
            let (x, y) = pair
                .split_once(',')
                .ok_or_else(|| bad(key, format!("`{pair}` is not `x,y`")))?;
            Ok(Point::new(num(key, x.trim())?, num(key, y.trim())?))
        })
        .collect()
}

fn parse_poly(key: &str, s: &str) -> Result<Poly2, ConfigError> {
    let terms = s
        .split(';')
        .map(|term| {
            let (c, ab) = term
                .split_once('@')
                .ok_or_else(|| bad(key, format!("`{term}` is not `c@a,b`")))?;
            let (a, b) = ab
                .split_once(',')
                .ok_or_else(|| bad(key, format!("`{ab}` is not `a,b`")))?;
            Ok(((num(key, a.trim())?, num(key, b.trim())?), num(key, c.trim())?))
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    Ok(Poly2::from_terms(terms))
}

fn parse_value(cfg: &mut ExperimentConfig, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "domain" => {
            cfg.domain = match v {
                "square" => DomainSpec::Square,
                "lshape" => DomainSpec::LShape,
                _ => match v.strip_prefix("polygon:") {
                    Some(rest) => DomainSpec::Polygon(parse_points(key, rest)?),
                    None => return Err(bad(key, format!("unknown domain `{v}`"))),
                },
            }
        }
        "dirichlet" => {
            cfg.dirichlet = if v == "all" {
                None
            } else {
                Some(v.split(',').map(|s| num(key, s.trim())).collect::<Result<_, _>>()?)
            }
        }
        "initial_mesh" => {
            cfg.initial_mesh = if v == "builtin" {
                MeshSpec::Builtin
            } else if let Some(path) = v.strip_prefix("file:") {
                MeshSpec::File(PathBuf::from(path))
            } else {
                return Err(bad(key, format!("unknown mesh `{v}`")));
            }
        }
        "p_max" => cfg.p_max = num(key, v)?,
        "lambda" => cfg.lambda = num(key, v)?,
        "q" => cfg.q = num(key, v)?,
        "f" => {
            cfg.f = if v == "manufactured" {
                SourceSpec::Manufactured
            } else if let Some(c) = v.strip_prefix("const:") {
                SourceSpec::Constant(num(key, c)?)
            } else if let Some(p) = v.strip_prefix("poly:") {
                SourceSpec::Polynomial(parse_poly(key, p)?)
            } else {
                return Err(bad(key, format!("unknown source `{v}`")));
            }
        }
        "alpha" => cfg.alpha = num(key, v)?,
        "stopping" => {
            let (kind, arg) = v
                .split_once(':')
                .ok_or_else(|| bad(key, "expected `relative:theta`, `fixed:n` or `coupled:c`"))?;
            cfg.stopping = match kind {
                "relative" => Stopping::RelativeReduction(num(key, arg)?),
                "fixed" => Stopping::FixedSteps(num(key, arg)?),
                "coupled" => Stopping::Coupled { c: num(key, arg)? },
                _ => return Err(bad(key, format!("unknown rule `{kind}`"))),
            }
        }
        "max_iterations" => cfg.max_iterations = num(key, v)?,
        "solver" => cfg.solver = v.parse().map_err(|e| bad(key, e))?,
        "reference_delta" => cfg.reference_delta = num(key, v)?,
        "reference_theta" => cfg.reference_theta = num(key, v)?,
        "output" => cfg.output = Some(PathBuf::from(v)),
        "deterministic" => cfg.deterministic = num(key, v)?,
        "seed" => cfg.seed = num(key, v)?,
        _ => unreachable!("key list checked by caller"),
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            parse_value(&mut cfg, key, value)?;
            cfg.raw.push((key.to_string(), value.to_string()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p_max < 1 {
            return Err(bad("p_max", "must be at least 1"));
        }
        if self.reference_delta < 2 {
            return Err(bad("reference_delta", "must be at least 2"));
        }
        if !(self.reference_theta > 0.0 && self.reference_theta < 1.0) {
            return Err(bad("reference_theta", "must lie in (0, 1)"));
        }
        if self.f == SourceSpec::Manufactured
            && (self.domain != DomainSpec::Square || self.dirichlet.is_some())
        {
            return Err(bad("f", "the manufactured solution needs the all-Dirichlet unit square"));
        }
        if matches!(self.domain, DomainSpec::Polygon(_)) && self.initial_mesh == MeshSpec::Builtin {
            return Err(bad("initial_mesh", "custom polygons need `file:<path>`"));
        }
        self.ilg_config()
            .validate()
            .map_err(|e| bad("alpha/lambda/stopping/max_iterations", e))
    }

    pub fn ilg_config(&self) -> IlgConfig {
        IlgConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            q: self.q,
            stopping: self.stopping,
            max_iterations: self.max_iterations,
            solver_path: self.solver,
        }
    }

    /// Degree of the reference solution.
    pub fn p_ref(&self) -> usize {
        self.p_max + self.reference_delta
    }

    /// Header text echoing every parameter, including defaults.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.raw {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("# resolved: {self:?}\n"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example_config() {
        let text = "\
# Example 2
domain = lshape
p_max = 12
lambda = 1
q = 1
f = const:1
alpha = 0.5
stopping = relative:1e-2
solver = condensed
deterministic = true
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.domain, DomainSpec::LShape);
        assert_eq!(cfg.p_max, 12);
        assert_eq!(cfg.p_ref(), 14);
        assert_eq!(cfg.stopping, Stopping::RelativeReduction(1e-2));
        assert!(cfg.deterministic);
        assert_eq!(cfg.raw.len(), 9);
        assert!(cfg.echo().contains("domain = lshape"));
    }

    #[test]
    fn polynomial_and_polygon_values() {
        let cfg = ExperimentConfig::parse(
            "domain = polygon:0,0;2,0;0,2\ninitial_mesh = file:mesh.txt\nf = poly:1@0,0;2.5@1,0\ndirichlet = 0,2",
        )
        .unwrap();
        let DomainSpec::Polygon(pts) = &cfg.domain else { panic!() };
        assert_eq!(pts.len(), 3);
        let SourceSpec::Polynomial(p) = &cfg.f else { panic!() };
        assert_eq!(p.eval(2.0, 7.0), 6.0);
        assert_eq!(cfg.dirichlet, Some(vec![0, 2]));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ExperimentConfig::parse("speed = 3"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("p_max = 2\np_max = 3"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(ExperimentConfig::parse("p_max 2"), Err(ConfigError::Syntax { line: 1 })));
        assert!(ExperimentConfig::parse("reference_delta = 1").is_err());
        assert!(ExperimentConfig::parse("alpha = 0").is_err());
        assert!(ExperimentConfig::parse("domain = lshape\nf = manufactured").is_err());
        assert!(ExperimentConfig::parse("stopping = sometimes:3").is_err());
    }
}
