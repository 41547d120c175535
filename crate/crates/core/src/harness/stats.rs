use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{classify_value, Safety, SafetyConcept};
use crate::dynamics::AffineDynamics;
use crate::error::{Error, Result};
use crate::hj::Grid;
use crate::learning::DemoDataset;

/// Axis-aligned box on selected state coordinates; nodes outside are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateFilter {
    pub ranges: Vec<(usize, f64, f64)>,
}

impl StateFilter {
    /// Speeds in `[15, 30]` m/s and headings in `[−0.4π, 0.4π]` for every
    /// agent coordinate the model exposes.
    pub fn default_for(dyn_: &dyn AffineDynamics) -> Self {
        let mut ranges = Vec::new();
        for l in [dyn_.ego_layout(), dyn_.contender_layout()] {
            if let Some(i) = l.speed_index {
                ranges.push((i, 15.0, 30.0));
            }
            if let Some(i) = l.heading_index {
                ranges.push((i, -0.4 * PI, 0.4 * PI));
            }
        }
        StateFilter { ranges }
    }

    pub fn accepts(&self, x: &[f64]) -> bool {
        self.ranges.iter().all(|&(i, lo, hi)| x[i] >= lo && x[i] <= hi)
    }
}

/// Reference × candidate safe/unsafe counts over grid nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub reference: String,
    pub candidate: String,
    pub total: usize,
    /// `[[safe/safe, safe/unsafe], [unsafe/safe, unsafe/unsafe]]`, reference first.
    pub counts: [[usize; 2]; 2],
    pub percent: [[f64; 2]; 2],
}

fn cell(s: Safety) -> usize {
    match s {
        Safety::Safe => 0,
        Safety::Unsafe => 1,
    }
}

impl ConfusionMatrix {
    pub fn from_values(reference: &str, candidate: &str, pairs: impl IntoIterator<Item = (f64, f64)>, threshold: f64) -> Self {
        let mut counts = [[0usize; 2]; 2];
        for (r, c) in pairs {
            counts[cell(classify_value(r, threshold))][cell(classify_value(c, threshold))] += 1;
        }
        let total: usize = counts.iter().flatten().sum();
        let pct = |n: usize| if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
        ConfusionMatrix {
            reference: reference.into(),
            candidate: candidate.into(),
            total,
            counts,
            percent: [[pct(counts[0][0]), pct(counts[0][1])], [pct(counts[1][0]), pct(counts[1][1])]],
        }
    }
}

/// Classifies every filtered grid node under both concepts at time `t`.
pub fn confusion(
    reference: &SafetyConcept,
    candidate: &SafetyConcept,
    grid: &Grid,
    t: f64,
    filter: &StateFilter,
) -> Result<ConfusionMatrix> {
    let n = grid.dims();
    if n != reference.dynamics().state_dim() || n != candidate.dynamics().state_dim() {
        return Err(Error::Config("comparison grid does not match the concepts' state dimension".into()));
    }
    let pairs = (0..grid.node_count())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let mut x = vec![0.0; n];
            grid.node_state(i, &mut x);
            if !filter.accepts(&x) {
                return Ok(None);
            }
            Ok(Some((reference.evaluate(&x, t)?, candidate.evaluate(&x, t)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfusionMatrix::from_values(
        reference.kind.label(),
        candidate.kind.label(),
        pairs.into_iter().flatten(),
        0.0,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileReport {
    pub count: usize,
    pub mean: f64,
    pub p0: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub p100: f64,
}

/// Linear-interpolation percentile of ascending `sorted` (`q` in percent).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

impl PercentileReport {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dataset("no values to summarise".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("concept values".into()));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(PercentileReport {
            count: s.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p0: s[0],
            p5: percentile(&s, 5.0),
            p50: percentile(&s, 50.0),
            p95: percentile(&s, 95.0),
            p100: s[s.len() - 1],
        })
    }
}

/// Concept values at every logged state.
pub fn concept_values(concept: &SafetyConcept, log: &DemoDataset, t: f64) -> Result<Vec<f64>> {
    log.samples.par_iter().map(|s| concept.evaluate(&s.x, t)).collect()
}

pub fn percentile_report(concept: &SafetyConcept, log: &DemoDataset, t: f64) -> Result<PercentileReport> {
    PercentileReport::from_values(&concept_values(concept, log, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{ConceptKind, OpenLoopParams};
    use crate::dynamics::{ControlBox, DynamicsSpec};
    use crate::hj::{BoundaryFn, ValueField};
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let r = PercentileReport::from_values(&[3.0, 1.0, 5.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.p50, 3.0);
        assert_eq!((r.p0, r.p100, r.mean), (1.0, 5.0, 3.0));
        let c = PercentileReport::from_values(&[2.5; 9]).unwrap();
        assert!([c.p0, c.p5, c.p50, c.p95, c.p100].iter().all(|&v| v == 2.5));
        // 5th percentile of 1..=5: position 0.2
        assert!((r.p5 - 1.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn percentiles_nondecreasing_and_odd_median(v in prop::collection::vec(-100.0f64..100.0, 1..60)) {
            let r = PercentileReport::from_values(&v).unwrap();
            prop_assert!(r.p0 <= r.p5 && r.p5 <= r.p50 && r.p50 <= r.p95 && r.p95 <= r.p100);
            if v.len() % 2 == 1 {
                let mut s = v.clone();
                s.sort_by(f64::total_cmp);
                prop_assert_eq!(r.p50, s[s.len() / 2]);
            }
        }

        #[test]
        fn confusion_ignores_order(v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..50)) {
            let a = ConfusionMatrix::from_values("a", "b", v.clone(), 0.0);
            let mut r = v;
            r.reverse();
            let b = ConfusionMatrix::from_values("a", "b", r, 0.0);
            prop_assert_eq!(&a, &b);
            let sum: f64 = a.percent.iter().flatten().sum();
            prop_assert!((sum - 100.0).abs() < 0.01);
        }
    }

    fn field_concept(values: Vec<f64>) -> SafetyConcept {
        let grid = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 3], vec![false, false]).unwrap();
        let field = ValueField::new(grid, vec![0.0], vec![values]).unwrap();
        SafetyConcept::new(
            ConceptKind::WcHj,
            DynamicsSpec::DoubleIntegrator,
            BoundaryFn::Coordinate { index: 0, offset: 0.0 },
            ControlBox::symmetric(&[1.0]).unwrap(),
            ControlBox::empty(),
            Some(field),
            None,
            OpenLoopParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn hand_tally() {
        let a = field_concept(vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 0.0, 1.0, 1.0]);
        let b = field_concept(vec![1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0]);
        let grid = a.field.as_ref().unwrap().grid.clone();
        let m = confusion(&a, &b, &grid, 0.0, &StateFilter::default()).unwrap();
        // reference safe: nodes 0,2,3,6,7,8; unsafe: 1,4,5
        assert_eq!(m.counts, [[4, 2], [2, 1]]);
        let same = confusion(&a, &a, &grid, 0.0, &StateFilter::default()).unwrap();
        assert_eq!(same.counts[0][1] + same.counts[1][0], 0);
        let only_left = StateFilter {
            ranges: vec![(0, 0.0, 0.0)],
        };
        assert_eq!(confusion(&a, &b, &grid, 0.0, &only_left).unwrap().total, 3);
    }
}
