use std::f64::consts::PI;

use reachsafe_core::concepts::{ConceptBundle, ConceptKind, SafetyConcept};
use reachsafe_core::dynamics::{ControlBox, DynamicsSpec, PairFrame};
use reachsafe_core::harness::{confusion, percentile_report, synthetic_highway_log, HighwayConfig, StateFilter};
use reachsafe_core::hj::{solve, BoundaryFn, Grid, HamiltonianKind, SolveProblem, SolverOptions};
use reachsafe_core::hocbf::{BarrierSpec, ClassKappaFn, HocbfModel};
use reachsafe_core::learning::{fit, DisturbanceProvider, FitOptions, LossWeights, Optimizer};

/// Learn on a highway log, solve both HJ concepts with the learned model,
/// reload them from bundles and compare.
#[test]
fn learn_solve_compare() {
    let frame = PairFrame::Lane4 { contender_speed: 25.0 };
    let spec = DynamicsSpec::PairwiseCars { wheelbase: 2.7, frame };
    let dyn_ = spec.build().unwrap();
    let cfg = HighwayConfig {
        frame,
        ..Default::default()
    };
    let log = synthetic_highway_log(&cfg, 600, 21).unwrap();
    let ea = ControlBox::new(vec![-4.0], vec![3.0]).unwrap();
    let eb = ControlBox::symmetric(&[0.3]).unwrap();
    log.validate(&ea, Some(&eb)).unwrap();

    let init = HocbfModel::new(BarrierSpec::ellipse(5.4, 2.4), vec![ClassKappaFn::linear(0.5).unwrap(); 2]).unwrap();
    let weights = LossWeights {
        steps: 200,
        learning_rate: 0.01,
        ..Default::default()
    };
    let opts = FitOptions {
        optimizer: Optimizer::Adam,
        ..Default::default()
    };
    let provider = DisturbanceProvider::ground_truth();
    let res = fit(&init, dyn_.as_ref(), &log, &weights, &provider, 0, &opts).unwrap();
    assert!(res.aborted_at.is_none());
    let first = res.trace.first().unwrap().loss.total;
    let last = res.trace.last().unwrap().loss.total;
    assert!(last <= first, "{first} -> {last}");

    let grid = Grid::new(
        vec![-30.0, -8.0, -PI, 10.0],
        vec![30.0, 8.0, PI, 35.0],
        vec![9, 9, 9, 9],
        vec![false, false, true, false],
    )
    .unwrap();
    let boundary = BoundaryFn::ellipse(5.4, 2.4);
    let mut p = SolveProblem {
        dynamics: dyn_.as_ref(),
        kind: HamiltonianKind::WorstCase,
        boundary: &boundary,
        grid: &grid,
        horizon: 0.5,
        hocbf: None,
        ego_box: &ea,
        contender_box: &eb,
    };
    let wc = solve(&p, &SolverOptions::default()).unwrap();
    p.kind = HamiltonianKind::Constrained;
    p.hocbf = Some(&res.model);
    let hc = solve(&p, &SolverOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    wc.save(&dir.path().join("wc.vf")).unwrap();
    hc.save(&dir.path().join("hc.vf")).unwrap();
    std::fs::write(dir.path().join("model.json"), serde_json::to_string(&res.model).unwrap()).unwrap();
    let bundle = |kind, vf: &str, model: Option<&str>| ConceptBundle {
        kind,
        dynamics: spec.clone(),
        boundary: boundary.clone(),
        ego_box: ea.clone(),
        contender_box: eb.clone(),
        value_field: Some(vf.into()),
        hocbf_model: model.map(Into::into),
        open_loop: None,
    };
    for (name, b) in [
        ("wc.json", bundle(ConceptKind::WcHj, "wc.vf", None)),
        ("hc.json", bundle(ConceptKind::HocbfHj, "hc.vf", Some("model.json"))),
    ] {
        std::fs::write(dir.path().join(name), serde_json::to_string(&b).unwrap()).unwrap();
    }
    let wcc = SafetyConcept::load(&dir.path().join("wc.json")).unwrap();
    let hcc = SafetyConcept::load(&dir.path().join("hc.json")).unwrap();
    assert_eq!(hcc.hocbf.as_ref().unwrap().effective_params().len(), 2);

    let filter = StateFilter::default_for(wcc.dynamics());
    let m = confusion(&wcc, &hcc, &grid, -0.5, &filter).unwrap();
    // headings −π/4, 0, π/4; speeds 16.25 … 28.75
    assert_eq!(m.total, 9 * 9 * 3 * 5);
    let r = percentile_report(&hcc, &log, -0.5).unwrap();
    assert!(r.p0 <= r.p50 && r.p50 <= r.p100);
    // at every node the constrained value is at least the worst-case one, up to dissipation
    let (w, c) = (wc.final_slice(), hc.final_slice());
    let slack = 2.0 * w.windows(2).map(|p| (p[1] - p[0]).abs()).fold(0.0, f64::max);
    assert!(w.iter().zip(c).all(|(w, c)| *c >= *w - slack));
}
