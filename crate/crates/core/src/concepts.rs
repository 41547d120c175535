//! Safety concepts: maps from state to a scalar safety value and a set of
//! allowable ego controls.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_projected, AffineDynamics, ControlBox, DynamicsSpec, RolloutSpec, MAX_CONTROL, MAX_STATE};
use crate::error::{check_dim, Error, Result};
use crate::game::{constrained_contender_min, constrained_solve, safe_control_polytope, LinearGameInstance};
use crate::hj::{BoundaryFn, ValueField};
use crate::hocbf::HocbfModel;
use crate::polytope::FeasiblePolytope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptKind {
    WcHj,
    HocbfHj,
    Brake,
    Constant,
}

impl ConceptKind {
    pub fn label(self) -> &'static str {
        match self {
            ConceptKind::WcHj => "wc-hj",
            ConceptKind::HocbfHj => "hocbf-hj",
            ConceptKind::Brake => "brake",
            ConceptKind::Constant => "constant",
        }
    }

    pub fn is_hj(self) -> bool {
        matches!(self, ConceptKind::WcHj | ConceptKind::HocbfHj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Safety {
    Safe,
    Unsafe,
}

/// Rollout settings of the open-loop concepts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenLoopParams {
    pub horizon: f64,
    pub dt: f64,
}

impl Default for OpenLoopParams {
    fn default() -> Self {
        OpenLoopParams { horizon: 2.0, dt: 0.01 }
    }
}

/// On-disk description of a concept. Paths are relative to the bundle file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptBundle {
    pub kind: ConceptKind,
    pub dynamics: DynamicsSpec,
    pub boundary: BoundaryFn,
    pub ego_box: ControlBox,
    #[serde(default = "ControlBox::empty")]
    pub contender_box: ControlBox,
    #[serde(default)]
    pub value_field: Option<PathBuf>,
    #[serde(default)]
    pub hocbf_model: Option<PathBuf>,
    #[serde(default)]
    pub open_loop: Option<OpenLoopParams>,
}

#[derive(Debug)]
pub struct SafetyConcept {
    pub kind: ConceptKind,
    pub dynamics: DynamicsSpec,
    pub boundary: BoundaryFn,
    pub ego_box: ControlBox,
    pub contender_box: ControlBox,
    pub field: Option<ValueField>,
    pub hocbf: Option<HocbfModel>,
    pub open_loop: OpenLoopParams,
    dyn_: Box<dyn AffineDynamics>,
}

/// Optimal play at one state under a concept's assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalControls {
    pub u_a: Vec<f64>,
    pub u_b: Vec<f64>,
    /// The contender had no responsible control and the worst case was used.
    pub fallback: bool,
}

impl SafetyConcept {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ConceptKind,
        dynamics: DynamicsSpec,
        boundary: BoundaryFn,
        ego_box: ControlBox,
        contender_box: ControlBox,
        field: Option<ValueField>,
        hocbf: Option<HocbfModel>,
        open_loop: OpenLoopParams,
    ) -> Result<Self> {
        let dyn_ = dynamics.build()?;
        let n = dyn_.state_dim();
        boundary.validate(n)?;
        check_dim("ego box", dyn_.ego_dim(), ego_box.dim())?;
        check_dim("contender box", dyn_.contender_dim(), contender_box.dim())?;
        ego_box.validate()?;
        contender_box.validate()?;
        if kind.is_hj() {
            let f = field
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} concept needs a value field", kind.label())))?;
            check_dim("value field grid", n, f.grid.dims())?;
        }
        match (kind, &hocbf) {
            (ConceptKind::HocbfHj, None) => {
                return Err(Error::Config("hocbf-hj concept needs an HOCBF model".into()));
            }
            (ConceptKind::HocbfHj, Some(m)) => m.barrier().validate(n)?,
            _ => {}
        }
        if !kind.is_hj() {
            RolloutSpec {
                dt: open_loop.dt,
                horizon: open_loop.horizon,
            }
            .validate()?;
        }
        Ok(SafetyConcept {
            kind,
            dynamics,
            boundary,
            ego_box,
            contender_box,
            field,
            hocbf,
            open_loop,
            dyn_,
        })
    }

    pub fn from_bundle(bundle: &ConceptBundle, base: &Path) -> Result<Self> {
        let field = match &bundle.value_field {
            Some(p) => Some(ValueField::load(&base.join(p))?),
            None => None,
        };
        let hocbf = match &bundle.hocbf_model {
            Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(base.join(p))?)?),
            None => None,
        };
        Self::new(
            bundle.kind,
            bundle.dynamics.clone(),
            bundle.boundary.clone(),
            bundle.ego_box.clone(),
            bundle.contender_box.clone(),
            field,
            hocbf,
            bundle.open_loop.unwrap_or_default(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bundle: ConceptBundle = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_bundle(&bundle, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn dynamics(&self) -> &dyn AffineDynamics {
        self.dyn_.as_ref()
    }

    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<f64> {
        check_dim("state", self.dyn_.state_dim(), x.len())?;
        match &self.field {
            Some(f) if self.kind.is_hj() => Ok(f.value_at(x, t)?.value),
            _ => self.open_loop_value(x),
        }
    }

    pub fn classify(&self, x: &[f64], t: f64, threshold: f64) -> Result<Safety> {
        Ok(classify_value(self.evaluate(x, t)?, threshold))
    }

    /// Fixed controls of the open-loop policies for one agent.
    fn open_loop_control(&self, ego: bool, x: &[f64]) -> Vec<f64> {
        let (layout, bx) = if ego {
            (self.dyn_.ego_layout(), &self.ego_box)
        } else {
            (self.dyn_.contender_layout(), &self.contender_box)
        };
        let mut u = vec![0.0; bx.dim()];
        if self.kind == ConceptKind::Brake {
            if let (Some(a), Some(s)) = (layout.accel_channel, layout.speed_index) {
                if x[s] > 0.0 {
                    u[a] = bx.lower[a];
                }
            }
        }
        u
    }

    /// Minimum of `ℓ` along the rollout of both agents' fixed policies.
    fn open_loop_value(&self, x: &[f64]) -> Result<f64> {
        let spec = RolloutSpec {
            dt: self.open_loop.dt,
            horizon: self.open_loop.horizon,
        };
        let speeds: Vec<usize> = [self.dyn_.ego_layout(), self.dyn_.contender_layout()]
            .iter()
            .filter_map(|l| l.speed_index)
            .collect();
        let brake = self.kind == ConceptKind::Brake;
        let ego = |_t: f64, s: &[f64]| self.open_loop_control(true, s);
        let contender = |_t: f64, s: &[f64]| self.open_loop_control(false, s);
        let traj = rollout_projected(
            self.dyn_.as_ref(),
            x,
            &ego,
            &contender,
            &self.ego_box,
            &self.contender_box,
            spec,
            |s: &mut [f64]| {
                if brake {
                    for &i in &speeds {
                        s[i] = s[i].max(0.0);
                    }
                }
            },
        )?;
        Ok(traj.states.iter().map(|s| self.boundary.eval(s)).fold(f64::INFINITY, f64::min))
    }

    /// `∇V·f`, `∇V·g`, `∇V·h` at `x` for the given covector.
    fn project_gradient(&self, x: &[f64], grad: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dyn_.as_ref();
        let (n, ma, mb) = (d.state_dim(), d.ego_dim(), d.contender_dim());
        let mut f = [0.0; MAX_STATE];
        let mut g = [0.0; MAX_STATE * MAX_CONTROL];
        let mut h = [0.0; MAX_STATE * MAX_CONTROL];
        d.drift(x, &mut f[..n]);
        d.ego_gain(x, &mut g[..n * ma]);
        d.contender_gain(x, &mut h[..n * mb]);
        let drift = (0..n).map(|i| grad[i] * f[i]).sum();
        let a = (0..ma).map(|j| (0..n).map(|i| grad[i] * g[i * ma + j]).sum()).collect();
        let b = (0..mb).map(|j| (0..n).map(|i| grad[i] * h[i * mb + j]).sum()).collect();
        (drift, a, b)
    }

    fn game_at(&self, x: &[f64], t: f64) -> Result<(LinearGameInstance, f64)> {
        let field = self.field.as_ref().expect("HJ concept has a field");
        let (grad, _) = field.spatial_gradient(x, t)?;
        let dv_dt = field.time_derivative(x, t)?;
        let (drift, a, b) = self.project_gradient(x, &grad);
        let constraint = match &self.hocbf {
            Some(m) if self.kind == ConceptKind::HocbfHj => m.constraint_at(self.dyn_.as_ref(), x)?,
            _ => crate::hocbf::HocbfAffineConstraint::inactive(a.len(), b.len()),
        };
        let inst = LinearGameInstance {
            drift_term: drift,
            ego_grad_coeff: a,
            contender_grad_coeff: b,
            constraint,
            ego_box: self.ego_box.clone(),
            contender_box: self.contender_box.clone(),
        };
        Ok((inst, dv_dt))
    }

    /// Ego controls that keep the concept's value from decreasing.
    pub fn safe_controls(&self, x: &[f64], t: f64) -> Result<FeasiblePolytope> {
        check_dim("state", self.dyn_.state_dim(), x.len())?;
        if self.kind.is_hj() {
            let (inst, dv_dt) = self.game_at(x, t)?;
            let contender_min = match self.kind {
                ConceptKind::HocbfHj => constrained_contender_min(&inst).0,
                _ => inst.contender_box.min_linear(&inst.contender_grad_coeff),
            };
            return Ok(safe_control_polytope(
                inst.drift_term,
                &inst.ego_grad_coeff,
                contender_min,
                dv_dt,
                &self.ego_box,
            ));
        }
        // one-step surrogate: central-difference gradient of the rollout value
        let n = x.len();
        let mut grad = vec![0.0; n];
        let mut xp = x.to_vec();
        for i in 0..n {
            let h = 1e-4 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let up = self.open_loop_value(&xp)?;
            xp[i] = x[i] - h;
            let dn = self.open_loop_value(&xp)?;
            xp[i] = x[i];
            grad[i] = (up - dn) / (2.0 * h);
        }
        let (drift, a, b) = self.project_gradient(x, &grad);
        let ub = self.open_loop_control(false, x);
        let contender: f64 = b.iter().zip(&ub).map(|(p, q)| p * q).sum();
        Ok(safe_control_polytope(drift, &a, contender, 0.0, &self.ego_box))
    }

    /// Optimal ego and contender controls of the HJ concepts at `(x, t)`.
    pub fn optimal_controls(&self, x: &[f64], t: f64) -> Result<OptimalControls> {
        if !self.kind.is_hj() {
            return Err(Error::Config(format!("{} has no game solution", self.kind.label())));
        }
        let (inst, _) = self.game_at(x, t)?;
        let mut u_a = vec![0.0; inst.ego_grad_coeff.len()];
        let mut u_b = vec![0.0; inst.contender_grad_coeff.len()];
        let fallback = if self.kind == ConceptKind::HocbfHj {
            constrained_solve(&inst.as_ref(), &mut u_a, &mut u_b).1
        } else {
            u_a = inst.ego_box.argmax_linear(&inst.ego_grad_coeff);
            u_b = inst.contender_box.argmin_linear(&inst.contender_grad_coeff);
            false
        };
        Ok(OptimalControls { u_a, u_b, fallback })
    }
}

/// Unsafe exactly when the value is below the threshold.
pub fn classify_value(value: f64, threshold: f64) -> Safety {
    if value < threshold {
        Safety::Unsafe
    } else {
        Safety::Safe
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PairFrame;
    use crate::hj::Grid;
    use crate::hocbf::{BarrierSpec, ClassKappaFn};
    use proptest::prelude::*;

    fn lane4() -> DynamicsSpec {
        DynamicsSpec::PairwiseCars {
            wheelbase: 2.7,
            frame: PairFrame::Lane4 { contender_speed: 25.0 },
        }
    }

    fn ground6() -> DynamicsSpec {
        DynamicsSpec::PairwiseCars {
            wheelbase: 2.7,
            frame: PairFrame::Ground6,
        }
    }

    fn car_boxes() -> (ControlBox, ControlBox) {
        let b = ControlBox::new(vec![-0.3, -4.0], vec![0.3, 3.0]).unwrap();
        (b.clone(), b)
    }

    fn open_loop(kind: ConceptKind, r: f64) -> SafetyConcept {
        let (a, b) = car_boxes();
        SafetyConcept::new(kind, ground6(), BoundaryFn::circle([0.0, 0.0], r), a, b, None, None, OpenLoopParams::default())
            .unwrap()
    }

    /// Field whose every slice is the affine function `c·x + k`.
    fn affine_field(grid: Grid, c: &[f64], k: f64) -> ValueField {
        let n = grid.node_count();
        let mut s = vec![0.0; grid.dims()];
        let slice: Vec<f64> = (0..n)
            .map(|i| {
                grid.node_state(i, &mut s);
                k + c.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        ValueField::new(grid, vec![0.0, -1.0], vec![slice.clone(), slice]).unwrap()
    }

    #[test]
    fn brake_with_stopped_agents_is_boundary() {
        let c = open_loop(ConceptKind::Brake, 3.0);
        let x = [10.0, 4.0, 0.3, 2.0, 0.0, 0.0];
        assert_eq!(c.evaluate(&x, 0.0).unwrap(), c.boundary.eval(&x));
    }

    #[test]
    fn brake_never_reverses() {
        let c = open_loop(ConceptKind::Brake, 3.0);
        // contender behind and closing at 2 m/s: stops after 0.5 s, 0.5 m later
        let x = [-10.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        let v = c.evaluate(&x, 0.0).unwrap();
        assert!((v - (9.5 - 3.0)).abs() < 1e-3, "{v}");
    }

    #[test]
    fn constant_head_on_matches_closed_form() {
        // contender 20 m ahead, offset 1 m laterally, closing at 7 m/s head-on
        let c = open_loop(ConceptKind::Constant, 2.0);
        let x = [20.0, 1.0, 0.0, std::f64::consts::PI, 3.0, 4.0];
        let v = c.evaluate(&x, 0.0).unwrap();
        // closest approach at 20/7 s > horizon: Δx(2) = 6
        let want = (36.0f64 + 1.0).sqrt() - 2.0;
        assert!((v - want).abs() < 1e-9, "{v} vs {want}");
        let x = [10.0, 1.0, 0.0, std::f64::consts::PI, 3.0, 4.0];
        let v = c.evaluate(&x, 0.0).unwrap();
        // passes at t = 10/7, minimum distance is the lateral offset
        assert!((v - (1.0 - 2.0)).abs() < 1e-3, "{v}");
    }

    #[test]
    fn open_loop_values_converge_under_refinement() {
        for kind in [ConceptKind::Brake, ConceptKind::Constant] {
            let mut c = open_loop(kind, 3.0);
            let x = [12.0, 2.0, 0.1, -0.4, 18.0, 9.0];
            let a = c.evaluate(&x, 0.0).unwrap();
            c.open_loop.dt /= 2.0;
            let b = c.evaluate(&x, 0.0).unwrap();
            assert!((a - b).abs() < 1e-3, "{kind:?}: {a} vs {b}");
        }
    }

    #[test]
    fn hj_lookup_is_exact_at_nodes() {
        let grid = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![5, 5], vec![false, false]).unwrap();
        let field = affine_field(grid.clone(), &[1.0, 2.0], 0.5);
        let c = SafetyConcept::new(
            ConceptKind::WcHj,
            DynamicsSpec::DoubleIntegrator,
            BoundaryFn::Coordinate { index: 0, offset: 0.0 },
            ControlBox::symmetric(&[1.0]).unwrap(),
            ControlBox::empty(),
            Some(field.clone()),
            None,
            OpenLoopParams::default(),
        )
        .unwrap();
        let mut s = [0.0; 2];
        for i in 0..grid.node_count() {
            grid.node_state(i, &mut s);
            assert_eq!(c.evaluate(&s, 0.0).unwrap(), field.values[0][i]);
        }
    }

    #[test]
    fn known_gradient_gives_hand_halfspace() {
        // V = 2p + v: ∇V·f = 2v, ∇V·g = 1; safe set u ≥ −2v
        let grid = Grid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![9, 9], vec![false, false]).unwrap();
        let c = SafetyConcept::new(
            ConceptKind::WcHj,
            DynamicsSpec::DoubleIntegrator,
            BoundaryFn::Coordinate { index: 0, offset: 0.0 },
            ControlBox::symmetric(&[1.0]).unwrap(),
            ControlBox::empty(),
            Some(affine_field(grid, &[2.0, 1.0], 0.0)),
            None,
            OpenLoopParams::default(),
        )
        .unwrap();
        let p = c.safe_controls(&[0.3, -0.25], -0.5).unwrap();
        assert!(!p.contains(&[0.49], 0.0));
        assert!(p.contains(&[0.5], 1e-12));
        assert!(p.contains(&[1.0], 0.0));
        // far from the obstacle in the positive direction: everything is safe
        let p = c.safe_controls(&[0.3, 1.5], -0.5).unwrap();
        assert!(p.contains(&[-1.0], 0.0) && p.contains(&[1.0], 0.0));
        // zero gradient: full box
        let grid = Grid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![3, 3], vec![false, false]).unwrap();
        let mut flat = c;
        flat.field = Some(affine_field(grid, &[0.0, 0.0], 1.0));
        let p = flat.safe_controls(&[0.1, 0.1], 0.0).unwrap();
        assert_eq!(p.measure(), 2.0);
    }

    #[test]
    fn car_following_contender_is_not_a_corner_under_hocbf() {
        // contender 6 m ahead in the adjacent lane; steering towards the ego lowers the value
        let pi = std::f64::consts::PI;
        let grid = Grid::new(vec![-30.0, -8.0, -pi, 0.0], vec![30.0, 8.0, pi, 40.0], vec![7, 9, 9, 5], vec![false, false, true, false])
            .unwrap();
        let field = affine_field(grid, &[0.2, -0.5, 1.0, -0.05], 3.0);
        let model = HocbfModel::new(BarrierSpec::ellipse(5.4, 2.4), vec![ClassKappaFn::linear(1.0).unwrap(); 2]).unwrap();
        let ea = ControlBox::new(vec![-4.0], vec![3.0]).unwrap();
        let eb = ControlBox::symmetric(&[0.3]).unwrap();
        let make = |kind, hocbf| {
            SafetyConcept::new(
                kind,
                lane4(),
                BoundaryFn::ellipse(5.4, 2.4),
                ea.clone(),
                eb.clone(),
                Some(field.clone()),
                hocbf,
                OpenLoopParams::default(),
            )
            .unwrap()
        };
        let wc = make(ConceptKind::WcHj, None);
        let hc = make(ConceptKind::HocbfHj, Some(model));
        let x = [6.0, 3.0, 0.0, 25.0];
        let w = wc.optimal_controls(&x, 0.0).unwrap();
        let h = hc.optimal_controls(&x, 0.0).unwrap();
        let corner = |u: f64| u == eb.lower[0] || u == eb.upper[0];
        assert!(corner(w.u_b[0]));
        assert!(!h.fallback);
        assert!(!corner(h.u_b[0]), "{:?}", h.u_b);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![3, 3], vec![false, false]).unwrap();
        affine_field(grid, &[1.0, 0.0], 0.0).save(&dir.path().join("wc.vf")).unwrap();
        let bundle = ConceptBundle {
            kind: ConceptKind::WcHj,
            dynamics: DynamicsSpec::DoubleIntegrator,
            boundary: BoundaryFn::Coordinate { index: 0, offset: 0.0 },
            ego_box: ControlBox::symmetric(&[1.0]).unwrap(),
            contender_box: ControlBox::empty(),
            value_field: Some("wc.vf".into()),
            hocbf_model: None,
            open_loop: None,
        };
        let path = dir.path().join("wc.json");
        std::fs::write(&path, serde_json::to_string_pretty(&bundle).unwrap()).unwrap();
        let c = SafetyConcept::load(&path).unwrap();
        assert_eq!(c.evaluate(&[0.5, 0.0], 0.0).unwrap(), 0.5);
        let missing = ConceptBundle {
            value_field: None,
            ..bundle
        };
        assert!(matches!(SafetyConcept::from_bundle(&missing, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_value(-0.38, 0.0), Safety::Unsafe);
        assert_eq!(classify_value(0.0, 0.0), Safety::Safe);
    }

    proptest! {
        #[test]
        fn classify_is_threshold_monotone(v in -10.0f64..10.0, t1 in -5.0f64..5.0, dt in 0.0f64..5.0) {
            if classify_value(v, t1) == Safety::Unsafe {
                prop_assert_eq!(classify_value(v, t1 + dt), Safety::Unsafe);
            }
        }
    }
}
