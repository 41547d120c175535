//! Demonstration generation, synthetic logs, comparison statistics and
//! plot-data export.

mod corpus;
mod highway;
mod levelset;
mod planner;
mod stats;

use std::io::Write;

pub use corpus::{gen_demo_corpus, CorpusStats, ToyScenario};
pub use highway::{synthetic_highway_log, HighwayConfig};
pub use levelset::{contour, export_levelset, write_polylines, Polyline, SliceSpec};
pub use planner::{plan_hocbf_qp, reference_control, PlanResult, PlannerConfig};
pub use stats::{
    concept_values, confusion, percentile, percentile_report, ConfusionMatrix, PercentileReport, StateFilter,
};

use crate::concepts::SafetyConcept;
use crate::error::Result;

/// Safe ego-control polygon and optimal controls of each HJ concept at one
/// state, as CSV rows `concept,role,index,u0,u1,..`.
pub fn write_controls<W: Write>(concepts: &[&SafetyConcept], x: &[f64], t: f64, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let width = concepts
        .iter()
        .map(|c| c.ego_box.dim().max(c.contender_box.dim()))
        .max()
        .unwrap_or(0);
    let mut head = vec!["concept".to_string(), "role".into(), "index".into()];
    head.extend((0..width).map(|i| format!("u{i}")));
    wr.write_record(&head)?;
    let mut row = |name: &str, role: &str, k: usize, u: &[f64]| {
        let mut r = vec![name.to_string(), role.to_string(), k.to_string()];
        r.extend((0..width).map(|i| u.get(i).map_or(String::new(), |v| format!("{v:?}"))));
        wr.write_record(&r)
    };
    for c in concepts {
        let name = c.kind.label();
        let safe = c.safe_controls(x, t)?;
        for (k, v) in safe.vertices.iter().enumerate() {
            row(name, "safe-vertex", k, v)?;
        }
        if c.kind.is_hj() {
            let opt = c.optimal_controls(x, t)?;
            row(name, "ego-optimal", 0, &opt.u_a)?;
            row(name, "contender-optimal", 0, &opt.u_b)?;
        }
    }
    wr.flush()?;
    Ok(())
}
