use std::path::PathBuf;

use reachsafe_core::harness::{gen_demo_corpus, synthetic_highway_log, HighwayConfig, ToyScenario};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{csv_bytes, default_output_dir, outputs};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemoSource {
    /// HOCBF-QP planner episodes around a circular obstacle.
    Toy {
        episodes: usize,
        #[serde(default)]
        scenario: ToyScenario,
    },
    /// Synthetic multi-car highway log.
    Highway {
        samples: usize,
        #[serde(default)]
        config: HighwayConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDemosConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seed: u64,
    pub source: DemoSource,
    #[serde(default)]
    pub format: DemoFormat,
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let c: GenDemosConfig = cfg.parse()?;
    let (data, extra) = match &c.source {
        DemoSource::Toy { episodes, scenario } => {
            let (data, stats) = gen_demo_corpus(scenario, *episodes, c.seed)?;
            (data, json!({ "source": "toy", "episodes": episodes, "stats": stats }))
        }
        DemoSource::Highway { samples, config } => {
            let data = synthetic_highway_log(config, *samples, c.seed)?;
            (data, json!({ "source": "highway", "samples": samples }))
        }
    };
    let mut out = outputs(cfg, &c.output_dir)?;
    match c.format {
        DemoFormat::Csv => out.write("demos.csv", &csv_bytes(|b| data.write_csv(b))?)?,
        DemoFormat::Jsonl => out.write("demos.jsonl", &csv_bytes(|b| data.write_jsonl(b))?)?,
    };
    let mut extra = extra;
    extra["sample_count"] = json!(data.len());
    out.finish("gen-demos", cfg, extra)
}
