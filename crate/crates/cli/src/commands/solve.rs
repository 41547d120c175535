use std::path::PathBuf;

use reachsafe_core::concepts::{ConceptBundle, ConceptKind, OpenLoopParams, SafetyConcept};
use reachsafe_core::dynamics::{ControlBox, DynamicsSpec};
use reachsafe_core::hj::{solve, BoundaryFn, Grid, HamiltonianKind, SolveProblem, SolverOptions, ValueField};
use reachsafe_core::hocbf::HocbfModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{default_output_dir, outputs};
use crate::config::RunConfig;
use crate::CliError;

fn default_horizon() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Stem of the `.vf` and `.concept.json` outputs.
    pub name: String,
    pub kind: ConceptKind,
    pub dynamics: DynamicsSpec,
    pub boundary: BoundaryFn,
    pub grid: Grid,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Required for `hocbf-hj`.
    #[serde(default)]
    pub hocbf_model: Option<PathBuf>,
    pub ego_box: ControlBox,
    #[serde(default = "ControlBox::empty")]
    pub contender_box: ControlBox,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Keep only this many evenly spaced time slices in the output.
    #[serde(default)]
    pub stored_slices: Option<usize>,
    /// Rollout settings of the open-loop kinds.
    #[serde(default)]
    pub open_loop: Option<OpenLoopParams>,
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let c: SolveConfig = cfg.parse()?;
    if c.name.is_empty() || c.name.contains(['/', '\\']) {
        return Err(CliError::Config(format!("invalid output name `{}`", c.name)));
    }
    let model: Option<HocbfModel> = match &c.hocbf_model {
        Some(p) => {
            let path = cfg.resolve(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read HOCBF model {}: {e}", path.display())))?;
            Some(serde_json::from_str(&text).map_err(reachsafe_core::Error::from)?)
        }
        None => None,
    };
    if c.kind == ConceptKind::HocbfHj && model.is_none() {
        return Err(CliError::Config("hocbf-hj needs `hocbf_model`".into()));
    }
    let dyn_ = c.dynamics.build()?;
    let mut extra = json!({ "kind": c.kind.label() });
    let field = if c.kind.is_hj() {
        let kind = match c.kind {
            ConceptKind::HocbfHj => HamiltonianKind::Constrained,
            _ if dyn_.contender_dim() == 0 => HamiltonianKind::NoContender,
            _ => HamiltonianKind::WorstCase,
        };
        let mut opts = c.solver.clone();
        opts.nan_dump = opts.nan_dump.map(|p| cfg.resolve(&p));
        let problem = SolveProblem {
            dynamics: dyn_.as_ref(),
            kind,
            boundary: &c.boundary,
            grid: &c.grid,
            horizon: c.horizon,
            hocbf: model.as_ref().filter(|_| kind == HamiltonianKind::Constrained),
            ego_box: &c.ego_box,
            contender_box: &c.contender_box,
        };
        let mut f = solve(&problem, &opts)?;
        if let Some(n) = c.stored_slices {
            f.decimate(n);
        }
        extra["scheme"] = serde_json::to_value(&f.scheme).map_err(reachsafe_core::Error::from)?;
        f
    } else {
        tabulate_open_loop(&c, model.clone())?
    };
    let mut field = field;
    field.config_hash = Some(cfg.hash());
    extra["slices"] = json!(field.times.len());
    extra["nodes"] = json!(field.grid.node_count());

    let mut out = outputs(cfg, &c.output_dir)?;
    let vf_name = format!("{}.vf", c.name);
    let mut vf = Vec::new();
    field.write_vf(&mut vf)?;
    out.write(&vf_name, &vf)?;
    let model_name = match &model {
        Some(m) => {
            let n = format!("{}.model.json", c.name);
            out.write_json(&n, m)?;
            Some(PathBuf::from(n))
        }
        None => None,
    };
    let bundle = ConceptBundle {
        kind: c.kind,
        dynamics: c.dynamics.clone(),
        boundary: c.boundary.clone(),
        ego_box: c.ego_box.clone(),
        contender_box: c.contender_box.clone(),
        value_field: c.kind.is_hj().then(|| PathBuf::from(&vf_name)),
        hocbf_model: model_name,
        open_loop: c.open_loop,
    };
    out.write_json(&format!("{}.concept.json", c.name), &bundle)?;
    out.finish("solve", cfg, extra)
}

/// Open-loop kinds have no PDE; their rollout values are tabulated on the
/// grid as a single `t = 0` slice.
fn tabulate_open_loop(c: &SolveConfig, model: Option<HocbfModel>) -> Result<ValueField, CliError> {
    c.grid.validate()?;
    let concept = SafetyConcept::new(
        c.kind,
        c.dynamics.clone(),
        c.boundary.clone(),
        c.ego_box.clone(),
        c.contender_box.clone(),
        None,
        model,
        c.open_loop.unwrap_or_default(),
    )?;
    let n = c.grid.dims();
    if n != concept.dynamics().state_dim() {
        return Err(reachsafe_core::Error::Dimension {
            what: "grid",
            expected: concept.dynamics().state_dim(),
            got: n,
        }
        .into());
    }
    let values = (0..c.grid.node_count())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let mut x = vec![0.0; n];
            c.grid.node_state(i, &mut x);
            concept.evaluate(&x, 0.0)
        })
        .collect::<reachsafe_core::Result<Vec<f64>>>()?;
    Ok(ValueField::new(c.grid.clone(), vec![0.0], vec![values])?)
}
