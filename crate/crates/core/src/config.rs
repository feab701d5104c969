//! Pipeline configuration as a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error so
//! that typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::avr::KnudtsonConstants;
use crate::error::{Error, Result};
use crate::graph::GraphParams;
use crate::lsp::DEFAULT_ITERATIONS;
use crate::preprocess::NormalizationParams;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub graph: GraphParams,
    pub normalization: NormalizationParams,
    pub knudtson: KnudtsonConstants,
    pub iterations: usize,
    /// Restrict A/V sensitivity and specificity to truth centerlines.
    pub centerline_only: bool,
    /// Write `roc.csv` when truth is available.
    pub write_roc: bool,
    /// Write the propagation trace, graph edges and skeleton image.
    pub write_debug: bool,
    pub image: Option<PathBuf>,
    pub probs: Option<PathBuf>,
    pub fov: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub od: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            graph: GraphParams::default(),
            normalization: NormalizationParams::default(),
            knudtson: KnudtsonConstants::default(),
            iterations: DEFAULT_ITERATIONS,
            centerline_only: false,
            write_roc: true,
            write_debug: false,
            image: None,
            probs: None,
            fov: None,
            truth: None,
            od: None,
            out_dir: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.normalization.validate()?;
        self.knudtson.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidParams("iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "sigma_pos" => self.graph.sigma_pos = parse_f64(key, value)?,
            "sigma_lab" => self.graph.sigma_lab = parse_f64(key, value)?,
            "lambda_angle" => self.graph.lambda_angle = parse_f64(key, value)?,
            "sigma_prop" => self.graph.sigma_prop = parse_f64(key, value)?,
            "max_link_distance" => self.graph.max_link_distance = parse_f64(key, value)?,
            "sigma0" => self.normalization.sigma0 = parse_f64(key, value)?,
            "kernel_fraction" => self.normalization.kernel_fraction = parse_f64(key, value)?,
            "epsilon" => self.normalization.epsilon = parse_f64(key, value)?,
            "c_artery" => self.knudtson.c_artery = parse_f64(key, value)?,
            "c_vein" => self.knudtson.c_vein = parse_f64(key, value)?,
            "iterations" => {
                self.iterations = value
                    .parse()
                    .map_err(|_| Error::Config(format!("iterations: expected a count, got {value:?}")))?
            }
            "centerline_only" => self.centerline_only = parse_bool(key, value)?,
            "write_roc" => self.write_roc = parse_bool(key, value)?,
            "write_debug" => self.write_debug = parse_bool(key, value)?,
            "image" => self.image = path(),
            "probs" => self.probs = path(),
            "fov" => self.fov = path(),
            "truth" => self.truth = path(),
            "od" => self.od = path(),
            "out_dir" => self.out_dir = path(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Overlays the settings in `text` on `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_str_with_defaults(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_with_defaults(&text)
    }

    /// Serializes every parameter (paths only when set); `from_str_with_defaults`
    /// reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.graph;
        let n = &self.normalization;
        for (k, v) in [
            ("sigma_pos", g.sigma_pos),
            ("sigma_lab", g.sigma_lab),
            ("lambda_angle", g.lambda_angle),
            ("sigma_prop", g.sigma_prop),
            ("max_link_distance", g.max_link_distance),
            ("sigma0", n.sigma0),
            ("kernel_fraction", n.kernel_fraction),
            ("epsilon", n.epsilon),
            ("c_artery", self.knudtson.c_artery),
            ("c_vein", self.knudtson.c_vein),
        ] {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "centerline_only = {}", self.centerline_only);
        let _ = writeln!(s, "write_roc = {}", self.write_roc);
        let _ = writeln!(s, "write_debug = {}", self.write_debug);
        for (k, v) in [
            ("image", &self.image),
            ("probs", &self.probs),
            ("fov", &self.fov),
            ("truth", &self.truth),
            ("od", &self.od),
            ("out_dir", &self.out_dir),
        ] {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        s
    }
}
