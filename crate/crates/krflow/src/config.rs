//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use krflow_core::dynamics::SimConfig;
use krflow_core::flowdecomp::{preset_flows, FlowKind, FlowMatrix};
use nalgebra::Matrix3;

use crate::error::HarnessError;

/// Background flow as written in a config file or on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowSpec {
    Zero,
    Preset { kind: FlowKind, rate: f64, rotation: Option<f64> },
    Matrix(Matrix3<f64>),
}

impl FlowSpec {
    pub fn matrix(&self) -> Result<FlowMatrix, HarnessError> {
        match self {
            FlowSpec::Zero => Ok(FlowMatrix::zero()),
            FlowSpec::Preset { kind, rate, rotation } => {
                preset_flows(*kind, *rate, *rotation).map_err(|e| HarnessError::config("rate", e.to_string()))
            }
            FlowSpec::Matrix(m) => FlowMatrix::new(*m).map_err(|e| HarnessError::config("matrix", e.to_string())),
        }
    }

    /// Short label: the preset name, `zero` or `matrix`.
    pub fn label(&self) -> String {
        match self {
            FlowSpec::Zero => "zero".into(),
            FlowSpec::Preset { kind, .. } => kind.name().to_lowercase(),
            FlowSpec::Matrix(_) => "matrix".into(),
        }
    }

    /// Build from a flow name and optional rates; `zero` and `eq` give no flow.
    pub fn from_parts(name: &str, rate: Option<f64>, rotation: Option<f64>) -> Result<Self, HarnessError> {
        let lower = name.trim().to_lowercase();
        if lower == "zero" || lower == "eq" || lower == "none" {
            return Ok(FlowSpec::Zero);
        }
        let kind = FlowKind::from_str(&lower).map_err(|e| HarnessError::config("flow", e.to_string()))?;
        let rate = match (kind, rate) {
            (_, Some(r)) => r,
            (FlowKind::Mixed, None) => 0.0,
            (_, None) => return Err(HarnessError::config("rate", format!("flow {lower} needs a rate"))),
        };
        let spec = FlowSpec::Preset { kind, rate, rotation };
        spec.matrix()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub flow: FlowSpec,
    /// Steps between stress samples.
    pub sample_every: u64,
    pub realizations: u32,
    pub stretch_trace: bool,
    /// The source text, echoed verbatim into reports.
    pub source: String,
}

const KEYS: &[&str] = &[
    "n",
    "temperature",
    "density",
    "dt",
    "t_max",
    "t_decorrelate",
    "seed",
    "flow",
    "rate",
    "rotation",
    "matrix",
    "sample_every",
    "realizations",
    "stretch_trace",
];

impl Default for RunConfig {
    /// The reference protocol: WCA fluid at `T = 0.722`, `ρ = 0.8442`, no flow.
    fn default() -> Self {
        Self {
            sim: SimConfig {
                n: 512,
                temperature: 0.722,
                density: 0.8442,
                dt: 0.002,
                t_max: 20.0,
                t_decorrelate: 2.0,
                seed: 1,
                flow: FlowMatrix::zero(),
                thermostat: true,
            },
            flow: FlowSpec::Zero,
            sample_every: 10,
            realizations: 10,
            stretch_trace: true,
            source: String::new(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| HarnessError::config(key, format!("cannot parse {value:?}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::config(&format!("line {}", lineno + 1), "expected key = value"))?;
            let key = key.trim().to_lowercase();
            if !KEYS.contains(&key.as_str()) {
                return Err(HarnessError::config(&key, "unknown key"));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(HarnessError::config(&key, "given more than once"));
            }
        }

        let mut cfg = RunConfig { source: text.to_string(), ..RunConfig::default() };
        let get = |k: &str| entries.get(k).map(String::as_str);
        if let Some(v) = get("n") {
            cfg.sim.n = parse_num("n", v)?;
        }
        if let Some(v) = get("temperature") {
            cfg.sim.temperature = parse_num("temperature", v)?;
        }
        if let Some(v) = get("density") {
            cfg.sim.density = parse_num("density", v)?;
        }
        if let Some(v) = get("dt") {
            cfg.sim.dt = parse_num("dt", v)?;
        }
        if let Some(v) = get("t_max") {
            cfg.sim.t_max = parse_num("t_max", v)?;
        }
        if let Some(v) = get("t_decorrelate") {
            cfg.sim.t_decorrelate = parse_num("t_decorrelate", v)?;
        }
        if let Some(v) = get("seed") {
            cfg.sim.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("sample_every") {
            cfg.sample_every = parse_num("sample_every", v)?;
            if cfg.sample_every == 0 {
                return Err(HarnessError::config("sample_every", "must be at least 1"));
            }
        }
        if let Some(v) = get("realizations") {
            cfg.realizations = parse_num("realizations", v)?;
            if cfg.realizations == 0 {
                return Err(HarnessError::config("realizations", "must be at least 1"));
            }
        }
        if let Some(v) = get("stretch_trace") {
            cfg.stretch_trace = parse_num("stretch_trace", v)?;
        }

        let rate = get("rate").map(|v| parse_num::<f64>("rate", v)).transpose()?;
        let rotation = get("rotation").map(|v| parse_num::<f64>("rotation", v)).transpose()?;
        cfg.flow = match (get("flow"), get("matrix")) {
            (Some(_), Some(_)) => return Err(HarnessError::config("matrix", "give either flow or matrix, not both")),
            (None, Some(m)) => {
                let values: Vec<f64> = m
                    .split([',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num("matrix", s))
                    .collect::<Result<_, _>>()?;
                if values.len() != 9 {
                    return Err(HarnessError::config("matrix", format!("need 9 entries, got {}", values.len())));
                }
                FlowSpec::Matrix(Matrix3::from_row_slice(&values))
            }
            (Some(name), None) => FlowSpec::from_parts(name, rate, rotation)?,
            (None, None) => FlowSpec::Zero,
        };
        cfg.sim.flow = cfg.flow.matrix()?;
        cfg.sim.validate().map_err(HarnessError::from_config)?;
        Ok(cfg)
    }

    /// Copy with another flow and seed, keeping everything else.
    pub fn with_flow(&self, flow: FlowSpec, seed: u64) -> Result<Self, HarnessError> {
        let mut c = self.clone();
        c.sim.flow = flow.matrix()?;
        c.flow = flow;
        c.sim.seed = seed;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_protocol() {
        let text = "# reference\nN = 512\ntemperature = 0.722\ndensity=0.8442\ndt = 0.002\nt_max = 20\nt_decorrelate = 2\nflow = pef  # planar\nrate = 1\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.sim.n, 512);
        assert_eq!(cfg.flow, FlowSpec::Preset { kind: FlowKind::Pef, rate: 1.0, rotation: None });
        assert_eq!(cfg.source, text);
        assert_eq!(cfg.sim.steps(), 10_000);
    }

    #[test]
    fn reports_field_names() {
        let err = |t: &str| RunConfig::parse(t).unwrap_err().to_string();
        assert!(err("bogus = 1").contains("bogus"));
        assert!(err("dt = fast").contains("dt"));
        assert!(err("t_max = 1\nt_decorrelate = 2").contains("t_decorrelate"));
        assert!(err("flow = pef\nrate = 0").contains("rate"));
        assert!(err("flow = pef").contains("rate"));
        assert!(err("seed = 1\nseed = 2").contains("seed"));
        assert!(err("matrix = 1 0 0 0 1 0 0 0 1").contains("matrix"));
    }

    #[test]
    fn matrix_and_mixed() {
        let cfg = RunConfig::parse("matrix = 0,1,0, 0,0,0, 0,0,0").unwrap();
        assert!(matches!(cfg.flow, FlowSpec::Matrix(_)));
        let cfg = RunConfig::parse("flow = mixed\nrotation = 1").unwrap();
        assert_eq!(cfg.flow, FlowSpec::Preset { kind: FlowKind::Mixed, rate: 0.0, rotation: Some(1.0) });
    }
}
