//! Run configuration file: one TOML table per command, every key optional.

use std::ops::Range;
use std::path::{Path, PathBuf};

use comag::geometry::FieldVector;
use comag::simulation::{
    AngularMapConfig, MarginalConfig, NoiseModel, ScalarDemoConfig, SimConfig, SpatialScanConfig,
};
use comag::AngularMethod;
use serde::{Deserialize, Serialize};
use toml::de::{DeTable, DeValue};

use crate::error::CliError;

pub type Vec3 = FieldVector<f64>;

/// How grid repetitions are generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Gaussian perturbation of the readings.
    #[default]
    Gaussian,
    /// Full ODMR and lock-in trace synthesis and fitting (slow).
    Spectral,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    #[serde(flatten)]
    pub sim: SimConfig,
    pub noise_model: NoiseKind,
}

impl GridSection {
    /// The simulation settings with the selected noise model attached.
    pub fn sim_config(&self) -> SimConfig {
        let mut sim = self.sim.clone();
        sim.noise_model = match self.noise_model {
            NoiseKind::Gaussian => NoiseModel::Gaussian,
            NoiseKind::Spectral => NoiseModel::Spectral(Box::default()),
        };
        sim
    }
}

/// Background calibration input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateSection {
    /// Calibration readings `[nv_x, nv_y, nv_z, rb]`, G.
    pub pairs: Vec<[f64; 4]>,
    /// CSV file with header `nv_x,nv_y,nv_z,rb`; its rows are appended to
    /// `pairs`. Relative paths are resolved against the config file.
    pub pairs_csv: Option<PathBuf>,
    pub calibration_averages: u32,
    /// Single-reading NV noise per lab axis, G; divided by
    /// `sqrt(calibration_averages)` for the reported covariance.
    pub sigma_nv: f64,
    pub sigma_rb: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            pairs_csv: None,
            calibration_averages: 150,
            sigma_nv: 0.26,
            sigma_rb: 790e-6,
        }
    }
}

impl CalibrateSection {
    pub fn validate(&self) -> comag::Result<()> {
        if self.calibration_averages == 0 {
            return Err(invalid("calibration_averages", "must be at least 1"));
        }
        if !(self.sigma_nv >= 0.0 && self.sigma_nv.is_finite()) {
            return Err(invalid("sigma_nv", "must be finite and >= 0"));
        }
        if !(self.sigma_rb >= 0.0 && self.sigma_rb.is_finite()) {
            return Err(invalid("sigma_rb", "must be finite and >= 0"));
        }
        if self.pairs.iter().any(|p| p.iter().any(|v| !v.is_finite()) || p[3] < 0.0) {
            return Err(invalid("pairs", "readings must be finite with rb >= 0"));
        }
        Ok(())
    }
}

/// Single combined estimate; command-line flags override these values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateSection {
    pub b_nv: Option<Vec3>,
    pub b_0: Vec3,
    pub b_rb: Option<f64>,
    /// Direction for the stretch/rotation split; defaults to `b_nv`.
    pub reference: Option<Vec3>,
}

impl EstimateSection {
    pub fn validate(&self) -> comag::Result<()> {
        if self.b_nv.is_some_and(|v| !v.is_finite()) {
            return Err(invalid("b_nv", "must be finite"));
        }
        if !self.b_0.is_finite() {
            return Err(invalid("b_0", "must be finite"));
        }
        if self.b_rb.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid("b_rb", "must be finite and >= 0"));
        }
        if self.reference.is_some_and(|v| !v.is_finite()) {
            return Err(invalid("reference", "must be finite"));
        }
        Ok(())
    }
}

fn invalid(name: &'static str, reason: &str) -> comag::Error {
    comag::Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub grid: GridSection,
    pub marginal: MarginalConfig,
    pub scan: SpatialScanConfig,
    pub scalar_demo: ScalarDemoConfig,
    pub angular: AngularMapConfig,
    pub calibrate: CalibrateSection,
    pub estimate: EstimateSection,
}

impl FileConfig {
    /// Checks every section's invariants.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |section: &'static str| move |source| CliError::Validation { section, source };
        self.grid.sim.validate().map_err(wrap("grid"))?;
        self.marginal.validate().map_err(wrap("marginal"))?;
        self.scan.validate().map_err(wrap("scan"))?;
        self.scalar_demo.validate().map_err(wrap("scalar_demo"))?;
        self.angular.validate().map_err(wrap("angular"))?;
        self.calibrate.validate().map_err(wrap("calibrate"))?;
        self.estimate.validate().map_err(wrap("estimate"))?;
        Ok(())
    }

    /// Sets the seed of every section that has one.
    pub fn override_seed(&mut self, seed: u64) {
        self.grid.sim.seed = seed;
        self.marginal.sim.seed = seed;
        self.scan.seed = seed;
        self.scalar_demo.seed = seed;
        if let AngularMethod::MonteCarlo { seed: s, .. } = &mut self.angular.method {
            *s = seed;
        }
    }
}

/// Keys that may appear but have no value in the defaults.
const OPTIONAL_KEYS: &[(&str, &[&str])] = &[
    ("grid", &["sigma_rb"]),
    ("marginal", &["sigma_rb"]),
    ("scan", &["moment_direction"]),
    ("calibrate", &["pairs_csv"]),
    ("estimate", &["b_nv", "b_rb", "reference"]),
    ("angular.method", &["samples", "seed"]),
];

/// The documented defaults as TOML text.
pub fn emit_defaults() -> String {
    toml::to_string(&FileConfig::default()).expect("defaults serialize")
}

/// Parses and validates configuration text. `origin` labels error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<FileConfig, CliError> {
    let parse_error = |message: String| CliError::Parse {
        path: origin.to_string(),
        message,
    };
    let doc = DeTable::parse(text).map_err(|e| parse_error(e.to_string().trim_end().to_string()))?;
    let schema = toml::Table::try_from(FileConfig::default()).expect("defaults serialize to a table");
    check_keys(doc.get_ref(), &schema, "", text).map_err(parse_error)?;
    let cfg: FileConfig = toml::from_str(text).map_err(|e| parse_error(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a config file. Relative data paths inside it
/// are resolved against the file's directory.
pub fn parse_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = parse_config_str(&text, &path.display().to_string())?;
    if let Some(csv) = &mut cfg.calibrate.pairs_csv {
        if csv.is_relative() {
            if let Some(dir) = path.parent() {
                *csv = dir.join(&*csv);
            }
        }
    }
    Ok(cfg)
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

fn check_keys(doc: &DeTable<'_>, schema: &toml::Table, prefix: &str, text: &str) -> Result<(), String> {
    let optional: &[&str] = OPTIONAL_KEYS
        .iter()
        .find(|(section, _)| *section == prefix)
        .map_or(&[], |(_, keys)| keys);
    for (key, value) in doc {
        let name = key.get_ref().as_ref();
        let path = if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") };
        match schema.get(name) {
            Some(toml::Value::Table(sub)) => {
                if let DeValue::Table(t) = value.get_ref() {
                    check_keys(t, sub, &path, text)?;
                }
            }
            Some(expected) => {
                if let Some(found) = type_mismatch(expected, value.get_ref()) {
                    let place = if prefix.is_empty() { "at top level".to_string() } else { format!("in [{prefix}]") };
                    return Err(format!(
                        "key `{name}` {place} at line {}: expected {}, found {found}",
                        line_of(text, value.span()),
                        kind_name(expected)
                    ));
                }
            }
            None if optional.contains(&name) => {}
            None => {
                let candidates = schema.keys().map(String::as_str).chain(optional.iter().copied());
                let place = if prefix.is_empty() { "at top level".to_string() } else { format!("in [{prefix}]") };
                let mut msg = format!("unknown key `{name}` {place} at line {}", line_of(text, key.span()));
                if let Some(s) = suggest(name, candidates) {
                    msg.push_str(&format!("; did you mean `{s}`?"));
                }
                return Err(msg);
            }
        }
    }
    Ok(())
}

fn kind_name(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "a string",
        toml::Value::Integer(_) => "an integer",
        toml::Value::Float(_) => "a number",
        toml::Value::Boolean(_) => "a boolean",
        toml::Value::Datetime(_) => "a datetime",
        toml::Value::Array(_) => "an array",
        toml::Value::Table(_) => "a table",
    }
}

/// Name of the found kind when `found` cannot fill a slot whose default is
/// `expected`. Integers may fill number slots.
fn type_mismatch(expected: &toml::Value, found: &DeValue<'_>) -> Option<&'static str> {
    let (ok, name) = match found {
        DeValue::String(_) => (matches!(expected, toml::Value::String(_)), "a string"),
        DeValue::Integer(_) => (
            matches!(expected, toml::Value::Integer(_) | toml::Value::Float(_)),
            "an integer",
        ),
        DeValue::Float(_) => (matches!(expected, toml::Value::Float(_)), "a non-integer number"),
        DeValue::Boolean(_) => (matches!(expected, toml::Value::Boolean(_)), "a boolean"),
        DeValue::Datetime(_) => (matches!(expected, toml::Value::Datetime(_)), "a datetime"),
        DeValue::Array(_) => (matches!(expected, toml::Value::Array(_)), "an array"),
        DeValue::Table(_) => (matches!(expected, toml::Value::Table(_)), "a table"),
    };
    (!ok).then_some(name)
}

fn suggest<'a>(name: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let needle = name.to_lowercase().replace('-', "_");
    candidates
        .map(|c| (strsim::jaro_winkler(&needle, c), c))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}
