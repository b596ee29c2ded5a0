//! `key = value` experiment configuration.

use std::path::{Path, PathBuf};

use crate::bem_ops::QuadratureOptions;
use crate::error::{Error, Result};
use crate::formulation::{load_sources, parse_sources, DipoleSource};
use crate::geometry::Point;

pub const PAPER_FIG1: &str = "paper-fig1";

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// Concentric icospheres, re-meshed at every subdivision level.
    Spheres { radii: Vec<f64> },
    /// Fixed OFF meshes, innermost first.
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub conductivities: Vec<f64>,
    pub subdivisions: Vec<usize>,
    pub dipoles: Vec<DipoleSource>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub quadrature: QuadratureOptions,
    /// Skip the condition-number estimates.
    pub skip_conditioning: bool,
}

impl ExperimentConfig {
    /// Radii 0.8/0.9/1.0, conductivities 1 : 1/80 : 1 with an insulating
    /// exterior, a unit radial dipole at 0.6, subdivisions 1–3.
    pub fn paper_fig1() -> Self {
        Self {
            model: ModelSource::Spheres {
                radii: vec![0.8, 0.9, 1.0],
            },
            conductivities: vec![1.0, 1.0 / 80.0, 1.0, 0.0],
            subdivisions: vec![1, 2, 3],
            dipoles: vec![DipoleSource::new(Point::new(0.0, 0.0, 0.6), Point::new(0.0, 0.0, 1.0))],
            tolerance: 1e-8,
            max_iterations: 20_000,
            output: None,
            cache_dir: None,
            quadrature: QuadratureOptions::default(),
            skip_conditioning: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            PAPER_FIG1 => Ok(Self::paper_fig1()),
            other => Err(Error::Parse(format!("unknown preset '{other}'"))),
        }
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = entries.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str());
        let mut cfg = match preset {
            Some(name) => Self::preset(name)?,
            None => Self::paper_fig1(),
        };
        let mut explicit_dipoles = false;
        for (k, v) in &entries {
            if k == "dipole" && !explicit_dipoles {
                cfg.dipoles.clear();
                explicit_dipoles = true;
            }
            cfg.set(k, v, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("{key}: {e}"));
        let floats = |v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|t| parse_float(t.trim()).map_err(|e| bad(&e)))
                .collect()
        };
        match key {
            "preset" => {}
            "radii" => self.model = ModelSource::Spheres { radii: floats(value)? },
            "surfaces" => {
                self.model = ModelSource::Files(value.split(',').map(|p| base.join(p.trim())).collect());
            }
            "conductivities" => self.conductivities = floats(value)?,
            "subdivisions" => {
                self.subdivisions = value
                    .split(',')
                    .map(|t| t.trim().parse().map_err(|e| bad(&e)))
                    .collect::<Result<_>>()?;
            }
            "dipole" => self.dipoles.extend(parse_sources(value)?),
            "dipoles" => self.dipoles = parse_sources(&value.replace(';', "\n"))?,
            "sources" => self.dipoles = load_sources(base.join(value))?,
            "tolerance" => self.tolerance = value.parse().map_err(|e| bad(&e))?,
            "max_iterations" => self.max_iterations = value.parse().map_err(|e| bad(&e))?,
            "output" => self.output = Some(base.join(value)),
            "cache_dir" => self.cache_dir = Some(base.join(value)),
            "singular_order" => self.quadrature.singular_order = value.parse().map_err(|e| bad(&e))?,
            "conditioning" => {
                self.skip_conditioning = match value {
                    "on" | "true" | "yes" => false,
                    "off" | "false" | "no" => true,
                    other => return Err(bad(&format!("expected on/off, found '{other}'"))),
                }
            }
            other => return Err(Error::Parse(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a command-line override of the form `key=value`; call
    /// [`ExperimentConfig::validate`] once all overrides are in.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override '{assignment}' is not key=value")))?;
        if k.trim() == "dipole" {
            self.dipoles.clear();
        }
        if k.trim() == "preset" {
            let keep = self.output.clone();
            *self = Self::preset(v.trim())?;
            self.output = keep;
            return Ok(());
        }
        self.set(k.trim(), v.trim(), Path::new("."))
    }

    pub fn validate(&self) -> Result<()> {
        let surfaces = match &self.model {
            ModelSource::Spheres { radii } => radii.len(),
            ModelSource::Files(paths) => paths.len(),
        };
        if surfaces == 0 {
            return Err(Error::InvalidModel("no surfaces".into()));
        }
        if self.conductivities.len() != surfaces + 1 {
            return Err(Error::InvalidModel(format!(
                "{surfaces} surfaces need {} conductivities, got {}",
                surfaces + 1,
                self.conductivities.len()
            )));
        }
        if self.subdivisions.is_empty() {
            return Err(Error::InvalidModel("at least one subdivision is required".into()));
        }
        if self.dipoles.is_empty() {
            return Err(Error::InvalidModel("no dipoles".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::NonPositive {
                what: "tolerance",
                value: self.tolerance,
            });
        }
        Ok(())
    }
}

/// Accepts plain numbers and simple fractions such as `1/80`.
fn parse_float(s: &str) -> std::result::Result<f64, String> {
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        return Ok(a / b);
    }
    s.parse().map_err(|e| format!("'{s}': {e}"))
}
