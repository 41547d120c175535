use std::path::PathBuf;

use reachsafe_core::concepts::SafetyConcept;
use reachsafe_core::harness::{percentile_report, synthetic_highway_log, HighwayConfig, PercentileReport};
use reachsafe_core::learning::DemoDataset;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{default_output_dir, outputs};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LogSource {
    /// Recorded log in the demonstration `.csv`/`.jsonl` format.
    File { path: PathBuf },
    Synthetic {
        samples: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        config: HighwayConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Concept bundle path.
    pub concept: PathBuf,
    pub log: LogSource,
    /// Defaults to the longest horizon stored in the concept's field.
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub concept: String,
    #[serde(flatten)]
    pub percentiles: PercentileReport,
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let c: EvalConfig = cfg.parse()?;
    let concept = SafetyConcept::load(&cfg.resolve(&c.concept))?;
    let log = match &c.log {
        LogSource::File { path } => DemoDataset::load(&cfg.resolve(path))?,
        LogSource::Synthetic { samples, seed, config } => synthetic_highway_log(config, *samples, *seed)?,
    };
    if log.state_dim != concept.dynamics().state_dim() {
        return Err(reachsafe_core::Error::Dimension {
            what: "log state",
            expected: concept.dynamics().state_dim(),
            got: log.state_dim,
        }
        .into());
    }
    let t = c
        .t
        .or_else(|| concept.field.as_ref().map(|f| f.times[f.times.len() - 1]))
        .unwrap_or(0.0);
    let report = EvalReport {
        concept: concept.kind.label().to_string(),
        percentiles: percentile_report(&concept, &log, t)?,
    };
    let mut out = outputs(cfg, &c.output_dir)?;
    out.write_json("percentiles.json", &report)?;
    out.finish("eval", cfg, json!({ "log_samples": log.len(), "t": t }))
}
