use std::path::PathBuf;

use reachsafe_core::concepts::SafetyConcept;
use reachsafe_core::harness::{confusion, export_levelset, write_controls, write_polylines, SliceSpec, StateFilter};
use reachsafe_core::hj::Grid;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{csv_bytes, default_output_dir, outputs};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsetSpec {
    pub axes: [usize; 2],
    /// Full state; entries on `axes` are ignored.
    pub fixed: Vec<f64>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Concept bundle paths.
    pub reference: PathBuf,
    pub candidate: PathBuf,
    /// Nodes to classify; defaults to the reference value-field grid.
    #[serde(default)]
    pub grid: Option<Grid>,
    /// Defaults to the longest horizon stored in the reference field.
    #[serde(default)]
    pub t: Option<f64>,
    /// Defaults to speeds in [15, 30] m/s and headings within ±0.4π.
    #[serde(default)]
    pub filter: Option<StateFilter>,
    #[serde(default)]
    pub levelsets: Vec<LevelsetSpec>,
    /// States at which safe and optimal control sets are written.
    #[serde(default)]
    pub controls: Vec<Vec<f64>>,
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let c: CompareConfig = cfg.parse()?;
    let reference = SafetyConcept::load(&cfg.resolve(&c.reference))?;
    let candidate = SafetyConcept::load(&cfg.resolve(&c.candidate))?;
    let grid = match (&c.grid, &reference.field, &candidate.field) {
        (Some(g), _, _) => {
            g.validate()?;
            g.clone()
        }
        (None, Some(f), _) | (None, None, Some(f)) => f.grid.clone(),
        (None, None, None) => return Err(CliError::Config("no grid given and neither concept has a field".into())),
    };
    let t = c
        .t
        .or_else(|| reference.field.as_ref().or(candidate.field.as_ref()).map(|f| f.times[f.times.len() - 1]))
        .unwrap_or(0.0);
    let filter = c.filter.clone().unwrap_or_else(|| StateFilter::default_for(reference.dynamics()));
    let m = confusion(&reference, &candidate, &grid, t, &filter)?;

    let mut out = outputs(cfg, &c.output_dir)?;
    out.write_json("confusion.json", &m)?;
    for (k, ls) in c.levelsets.iter().enumerate() {
        let slice = SliceSpec {
            axes: ls.axes,
            fixed: ls.fixed.clone(),
            t: Some(ls.t.unwrap_or(t)),
        };
        for (role, concept) in [("reference", &reference), ("candidate", &candidate)] {
            let Some(field) = &concept.field else {
                continue;
            };
            let lines = export_levelset(field, &slice, ls.level)?;
            out.write(&format!("levelset_{k}_{role}.csv"), &csv_bytes(|b| write_polylines(&lines, b))?)?;
        }
    }
    for (k, x) in c.controls.iter().enumerate() {
        let bytes = csv_bytes(|b| write_controls(&[&reference, &candidate], x, t, b))?;
        out.write(&format!("controls_{k}.csv"), &bytes)?;
    }
    let extra = json!({ "t": t, "filter": filter, "classified_nodes": m.total });
    out.finish("compare", cfg, extra)
}
