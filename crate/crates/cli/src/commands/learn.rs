use std::path::PathBuf;

use reachsafe_core::dynamics::{ControlBox, DynamicsSpec};
use reachsafe_core::hocbf::{BarrierSpec, ClassKappaFn, HocbfModel};
use reachsafe_core::learning::{fit, satisfaction_rate, DemoDataset, DisturbanceProvider, FitOptions, LossWeights};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{default_output_dir, outputs};
use crate::config::RunConfig;
use crate::CliError;

fn default_provider() -> DisturbanceProvider {
    DisturbanceProvider::ground_truth()
}

fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// `.csv` or `.jsonl` demonstrations.
    pub demos: PathBuf,
    pub dynamics: DynamicsSpec,
    pub barrier: BarrierSpec,
    /// Initial class-K functions, effective parameters.
    pub alphas: Vec<ClassKappaFn>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_provider")]
    pub provider: DisturbanceProvider,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
    /// When given, demonstrations outside the boxes are rejected.
    #[serde(default)]
    pub ego_box: Option<ControlBox>,
    #[serde(default)]
    pub contender_box: Option<ControlBox>,
    /// Margin below zero still counted as satisfied.
    #[serde(default = "default_tolerance")]
    pub satisfaction_tolerance: f64,
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let c: LearnConfig = cfg.parse()?;
    let data = DemoDataset::load(&cfg.resolve(&c.demos))?;
    if let Some(bx) = &c.ego_box {
        data.validate(bx, c.contender_box.as_ref())?;
    }
    let dyn_ = c.dynamics.build()?;
    let init = HocbfModel::new(c.barrier.clone(), c.alphas.clone())?;
    let res = fit(&init, dyn_.as_ref(), &data, &c.weights, &c.provider, c.seed, &c.fit)?;
    let sat = satisfaction_rate(&res.model, dyn_.as_ref(), &data, &c.provider, c.satisfaction_tolerance)?;

    let mut out = outputs(cfg, &c.output_dir)?;
    out.write_json("model.json", &res.model)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "total", "violation", "saturation", "cbf_violation", "cbf_saturation", "regularizer"])
        .map_err(reachsafe_core::Error::from)?;
    for p in &res.trace {
        let l = p.loss;
        let row = [l.total, l.violation, l.saturation, l.cbf_violation, l.cbf_saturation, l.regularizer];
        let mut rec = vec![p.step.to_string()];
        rec.extend(row.iter().map(|v| format!("{:?}", v + 0.0)));
        w.write_record(&rec).map_err(reachsafe_core::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    out.write("loss_trace.csv", &bytes)?;
    let extra = json!({
        "samples": data.len(),
        "satisfaction": sat,
        "final_loss": res.trace.last().map(|p| p.loss.total),
        "aborted_at": res.aborted_at,
        "effective_params": res.model.effective_params(),
    });
    out.finish("learn", cfg, extra)
}
