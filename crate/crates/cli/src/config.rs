//! Experiment configuration: a flat `key = value` text format with `#`
//! comments, plus the small grammars for step-size lists and surface
//! descriptors. Parsing and re-serialization round-trip exactly.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DVector;
use pwsde_core::Hypersurface;

/// Configuration/usage error with the offending line when parsing files.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }

    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Experiment command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Convergence,
    Occupation,
    Excursion,
    DumpTransform,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Convergence => "convergence",
            CommandKind::Occupation => "occupation",
            CommandKind::Excursion => "excursion",
            CommandKind::DumpTransform => "dump-transform",
        };
        write!(f, "{s}")
    }
}

impl FromStr for CommandKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "simulate" => Ok(CommandKind::Simulate),
            "convergence" => Ok(CommandKind::Convergence),
            "occupation" => Ok(CommandKind::Occupation),
            "excursion" => Ok(CommandKind::Excursion),
            "dump-transform" => Ok(CommandKind::DumpTransform),
            other => Err(ConfigError::new(format!("unknown command '{other}'"))),
        }
    }
}

/// Scheme selection, including the convergence-only `both`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Em,
    Gm,
    Both,
}

impl fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchemeChoice::Em => "em",
            SchemeChoice::Gm => "gm",
            SchemeChoice::Both => "both",
        };
        write!(f, "{s}")
    }
}

impl FromStr for SchemeChoice {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "em" => Ok(SchemeChoice::Em),
            "gm" => Ok(SchemeChoice::Gm),
            "both" => Ok(SchemeChoice::Both),
            other => Err(ConfigError::new(format!(
                "unknown scheme '{other}' (expected em, gm, or both)"
            ))),
        }
    }
}

/// Dyadic step sizes, stored as the exponents `k` of `horizon * 2^-k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaSpec {
    pub exponents: Vec<u32>,
}

impl DeltaSpec {
    pub fn deltas(&self, horizon: f64) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|&k| horizon * 2f64.powi(-(k as i32)))
            .collect()
    }
}

impl fmt::Display for DeltaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let contiguous = self.exponents.len() > 1
            && self
                .exponents
                .windows(2)
                .all(|w| w[1] == w[0] + 1);
        if contiguous {
            write!(
                f,
                "2^-{}..2^-{}",
                self.exponents[0],
                self.exponents.last().unwrap()
            )
        } else {
            let parts: Vec<String> =
                self.exponents.iter().map(|k| format!("2^-{k}")).collect();
            write!(f, "{}", parts.join(","))
        }
    }
}

fn parse_exponent(token: &str) -> Result<u32, ConfigError> {
    let rest = token
        .trim()
        .strip_prefix("2^-")
        .ok_or_else(|| ConfigError::new(format!("expected 2^-k, got '{token}'")))?;
    rest.parse::<u32>()
        .map_err(|_| ConfigError::new(format!("bad exponent in '{token}'")))
}

impl FromStr for DeltaSpec {
    type Err = ConfigError;

    /// `2^-a..2^-b` (inclusive range), a comma list of `2^-k`, or one
    /// `2^-k`.
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        let exponents = if let Some((lo, hi)) = s.split_once("..") {
            let a = parse_exponent(lo)?;
            let b = parse_exponent(hi)?;
            if a > b {
                return Err(ConfigError::new(format!(
                    "range '{s}' must go from coarse to fine (a <= b in 2^-a..2^-b)"
                )));
            }
            (a..=b).collect()
        } else {
            s.split(',')
                .map(parse_exponent)
                .collect::<Result<Vec<_>, _>>()?
        };
        if exponents.is_empty() {
            return Err(ConfigError::new("empty step-size list"));
        }
        Ok(DeltaSpec { exponents })
    }
}

/// Surface descriptor grammar:
/// `pointset1d(x1,x2,...)` | `hyperplane(a1,...,ad;b)` | `sphere(c1,...,cd;r)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceSpec {
    PointSet1D(Vec<f64>),
    Hyperplane(Vec<f64>, f64),
    Sphere(Vec<f64>, f64),
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<Hypersurface, ConfigError> {
        let made = match self {
            SurfaceSpec::PointSet1D(points) => Hypersurface::point_set_1d(points.clone()),
            SurfaceSpec::Hyperplane(normal, offset) => {
                Hypersurface::hyperplane(DVector::from_row_slice(normal), *offset)
            }
            SurfaceSpec::Sphere(center, radius) => {
                Hypersurface::sphere(DVector::from_row_slice(center), *radius)
            }
        };
        made.map_err(|e| ConfigError::new(format!("invalid surface: {e}")))
    }
}

fn join_numbers(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for SurfaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceSpec::PointSet1D(points) => {
                write!(f, "pointset1d({})", join_numbers(points))
            }
            SurfaceSpec::Hyperplane(normal, offset) => {
                write!(f, "hyperplane({};{offset})", join_numbers(normal))
            }
            SurfaceSpec::Sphere(center, radius) => {
                write!(f, "sphere({};{radius})", join_numbers(center))
            }
        }
    }
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError::new(format!("bad number '{t}'")))
        })
        .collect()
}

impl FromStr for SurfaceSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| ConfigError::new(format!("bad surface '{s}'")))?;
        if !s.ends_with(')') {
            return Err(ConfigError::new(format!("bad surface '{s}'")));
        }
        let name = &s[..open];
        let body = &s[open + 1..s.len() - 1];
        match name {
            "pointset1d" => Ok(SurfaceSpec::PointSet1D(parse_numbers(body)?)),
            "hyperplane" | "sphere" => {
                let (vec_part, scalar_part) = body.split_once(';').ok_or_else(|| {
                    ConfigError::new(format!(
                        "'{name}' needs a ';' between the vector and the scalar"
                    ))
                })?;
                let v = parse_numbers(vec_part)?;
                let scalar = scalar_part.trim().parse::<f64>().map_err(|_| {
                    ConfigError::new(format!("bad number '{scalar_part}'"))
                })?;
                if name == "hyperplane" {
                    Ok(SurfaceSpec::Hyperplane(v, scalar))
                } else {
                    Ok(SurfaceSpec::Sphere(v, scalar))
                }
            }
            other => Err(ConfigError::new(format!(
                "unknown surface '{other}' (expected pointset1d, hyperplane, or sphere)"
            ))),
        }
    }
}

/// A (possibly partial) experiment description. File values and
/// command-line flags merge into one of these; unspecified fields fall
/// back to per-command defaults at run time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub command: Option<CommandKind>,
    pub problem: Option<String>,
    pub scheme: Option<SchemeChoice>,
    pub deltas: Option<DeltaSpec>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub ref_levels: Option<u32>,
    pub eps: Option<Vec<f64>>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub initial: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub surface: Option<SurfaceSpec>,
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format. Unknown keys and malformed
    /// values report their line number.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line_no, format!("expected key = value, got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            let fail = |e: ConfigError| ConfigError::at(line_no, e.message);
            match key {
                "command" => cfg.command = Some(value.parse().map_err(fail)?),
                "problem" => cfg.problem = Some(value.to_string()),
                "scheme" => cfg.scheme = Some(value.parse().map_err(fail)?),
                "deltas" | "delta" => cfg.deltas = Some(value.parse().map_err(fail)?),
                "paths" => {
                    cfg.paths = Some(value.parse().map_err(|_| {
                        ConfigError::at(line_no, format!("bad path count '{value}'"))
                    })?)
                }
                "seed" => {
                    cfg.seed = Some(value.parse().map_err(|_| {
                        ConfigError::at(line_no, format!("bad seed '{value}'"))
                    })?)
                }
                "ref_levels" => {
                    cfg.ref_levels = Some(value.parse().map_err(|_| {
                        ConfigError::at(line_no, format!("bad ref_levels '{value}'"))
                    })?)
                }
                "eps" => cfg.eps = Some(parse_numbers(value).map_err(fail)?),
                "grid" => {
                    cfg.grid = Some(value.parse().map_err(|_| {
                        ConfigError::at(line_no, format!("bad grid size '{value}'"))
                    })?)
                }
                "out" => cfg.out = Some(PathBuf::from(value)),
                "initial" => cfg.initial = Some(parse_numbers(value).map_err(fail)?),
                "horizon" => {
                    cfg.horizon = Some(value.parse().map_err(|_| {
                        ConfigError::at(line_no, format!("bad horizon '{value}'"))
                    })?)
                }
                "surface" => cfg.surface = Some(value.parse().map_err(fail)?),
                other => {
                    return Err(ConfigError::at(line_no, format!("unknown key '{other}'")))
                }
            }
        }
        Ok(cfg)
    }

    /// Canonical `key = value` serialization; parsing it back yields an
    /// equal configuration.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        if let Some(v) = self.command {
            put("command", v.to_string());
        }
        if let Some(v) = &self.problem {
            put("problem", v.clone());
        }
        if let Some(v) = self.scheme {
            put("scheme", v.to_string());
        }
        if let Some(v) = &self.deltas {
            put("deltas", v.to_string());
        }
        if let Some(v) = self.paths {
            put("paths", v.to_string());
        }
        if let Some(v) = self.seed {
            put("seed", v.to_string());
        }
        if let Some(v) = self.ref_levels {
            put("ref_levels", v.to_string());
        }
        if let Some(v) = &self.eps {
            put("eps", join_numbers(v));
        }
        if let Some(v) = self.grid {
            put("grid", v.to_string());
        }
        if let Some(v) = &self.out {
            put("out", v.display().to_string());
        }
        if let Some(v) = &self.initial {
            put("initial", join_numbers(v));
        }
        if let Some(v) = self.horizon {
            put("horizon", v.to_string());
        }
        if let Some(v) = &self.surface {
            put("surface", v.to_string());
        }
        out
    }

    /// Overlays `other` on top of `self` (set fields in `other` win).
    pub fn merged_with(mut self, other: ExperimentConfig) -> ExperimentConfig {
        macro_rules! take {
            ($field:ident) => {
                if other.$field.is_some() {
                    self.$field = other.$field;
                }
            };
        }
        take!(command);
        take!(problem);
        take!(scheme);
        take!(deltas);
        take!(paths);
        take!(seed);
        take!(ref_levels);
        take!(eps);
        take!(grid);
        take!(out);
        take!(initial);
        take!(horizon);
        take!(surface);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_grammar() {
        let spec: DeltaSpec = "2^-6..2^-12".parse().unwrap();
        assert_eq!(spec.exponents, (6..=12).collect::<Vec<_>>());
        assert_eq!(spec.to_string(), "2^-6..2^-12");

        let spec: DeltaSpec = "2^-4,2^-8".parse().unwrap();
        assert_eq!(spec.exponents, vec![4, 8]);
        assert_eq!(spec.to_string(), "2^-4,2^-8");

        let spec: DeltaSpec = "2^-10".parse().unwrap();
        assert_eq!(spec.deltas(1.0), vec![2f64.powi(-10)]);

        assert!("2^-12..2^-6".parse::<DeltaSpec>().is_err());
        assert!("0.3".parse::<DeltaSpec>().is_err());
    }

    #[test]
    fn surface_grammar_round_trips() {
        for text in ["sphere(0,0;1)", "hyperplane(1,0;0.5)", "pointset1d(-1,2)"] {
            let spec: SurfaceSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
            spec.build().unwrap();
        }
        assert!("cube(1)".parse::<SurfaceSpec>().is_err());
        assert!("sphere(0,0)".parse::<SurfaceSpec>().is_err());
    }

    #[test]
    fn config_parse_and_round_trip() {
        let text = "\n# an experiment\ncommand = convergence\nproblem = circle2d\n\
                    scheme = both\ndeltas = 2^-6..2^-12\npaths = 1000\nseed = 7\n\
                    ref_levels = 16\nout = results/circle\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.command, Some(CommandKind::Convergence));
        assert_eq!(cfg.paths, Some(1000));
        let serialized = cfg.serialize();
        let reparsed = ExperimentConfig::parse(&serialized).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(serialized, reparsed.serialize());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("problem = circle2d\nwhat\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = ExperimentConfig::parse("\n\nbogus_key = 3\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        let err = ExperimentConfig::parse("paths = many\n").unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn merge_prefers_overrides() {
        let base = ExperimentConfig::parse("problem = gbm1d\npaths = 10\n").unwrap();
        let over = ExperimentConfig {
            paths: Some(99),
            ..Default::default()
        };
        let merged = base.merged_with(over);
        assert_eq!(merged.problem.as_deref(), Some("gbm1d"));
        assert_eq!(merged.paths, Some(99));
    }
}
