//! Fitting class-K chain parameters to demonstrations.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, AffineDynamics, ControlBox};
use crate::error::{ensure_finite, Error, Result};
use crate::hocbf::{ContenderRule, HocbfModel, LieTerms};

/// Control membership tolerance when validating recorded demonstrations.
const CONTROL_TOL: f64 = 1e-9;
/// Below this many samples the per-sample pass runs on the calling thread.
const PAR_THRESHOLD: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_a: Vec<f64>,
    pub u_b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoDataset {
    pub source: String,
    pub dt: f64,
    pub state_dim: usize,
    pub ego_dim: usize,
    pub contender_dim: usize,
    pub samples: Vec<DemoSample>,
}

fn header(n: usize, ma: usize, mb: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..ma).map(|i| format!("uA{i}")));
    h.extend((0..mb).map(|i| format!("uB{i}")));
    h
}

/// Counts `x*`, `uA*`, `uB*` columns and checks they appear in canonical order.
fn parse_header(cols: &[String]) -> Result<(usize, usize, usize)> {
    let count = |p: &str| {
        cols.iter()
            .filter(|c| c.strip_prefix(p).is_some_and(|r| r.parse::<usize>().is_ok()))
            .count()
    };
    let (n, ma, mb) = (count("x"), count("uA"), count("uB"));
    if header(n, ma, mb) != cols {
        return Err(Error::Dataset(format!(
            "header must read t,x0..,uA0..[,uB0..]; got {}",
            cols.join(",")
        )));
    }
    if n == 0 || ma == 0 {
        return Err(Error::Dataset("dataset needs state and ego-control columns".into()));
    }
    Ok((n, ma, mb))
}

impl DemoDataset {
    pub fn new(source: impl Into<String>, dt: f64, state_dim: usize, ego_dim: usize, contender_dim: usize) -> Self {
        DemoDataset {
            source: source.into(),
            dt,
            state_dim,
            ego_dim,
            contender_dim,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, s: DemoSample) -> Result<()> {
        if s.x.len() != self.state_dim || s.u_a.len() != self.ego_dim {
            return Err(Error::Dataset(format!(
                "sample at t={} has {} states / {} ego controls, dataset expects {} / {}",
                s.t,
                s.x.len(),
                s.u_a.len(),
                self.state_dim,
                self.ego_dim
            )));
        }
        match &s.u_b {
            Some(u) if u.len() != self.contender_dim => {
                return Err(Error::Dataset(format!(
                    "sample at t={} has {} contender controls, expected {}",
                    s.t,
                    u.len(),
                    self.contender_dim
                )))
            }
            _ => {}
        }
        ensure_finite("sample state", &s.x)?;
        ensure_finite("sample ego control", &s.u_a)?;
        self.samples.push(s);
        Ok(())
    }

    pub fn has_contender_controls(&self) -> bool {
        self.contender_dim > 0 && self.samples.iter().all(|s| s.u_b.is_some())
    }

    /// Checks recorded controls against the declared boxes.
    pub fn validate(&self, ego_box: &ControlBox, contender_box: Option<&ControlBox>) -> Result<()> {
        for s in &self.samples {
            if !ego_box.contains(&s.u_a, CONTROL_TOL) {
                return Err(Error::Dataset(format!("ego control {:?} at t={} outside its box", s.u_a, s.t)));
            }
            if let (Some(bx), Some(u)) = (contender_box, &s.u_b) {
                if !bx.contains(u, CONTROL_TOL) {
                    return Err(Error::Dataset(format!("contender control {u:?} at t={} outside its box", s.t)));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mb = if self.has_contender_controls() { self.contender_dim } else { 0 };
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header(self.state_dim, self.ego_dim, mb))?;
        let mut row = Vec::with_capacity(1 + self.state_dim + self.ego_dim + mb);
        for s in &self.samples {
            row.clear();
            row.push(s.t);
            row.extend(&s.x);
            row.extend(&s.u_a);
            if mb > 0 {
                row.extend(s.u_b.as_deref().unwrap_or(&[]));
            }
            wr.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: impl Into<String>, r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let cols: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let (n, ma, mb) = parse_header(&cols)?;
        let mut ds = DemoDataset::new(source, 0.0, n, ma, mb);
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dataset(format!("row {}: {e}", line + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Dataset(format!("row {} has {} fields", line + 2, vals.len())));
            }
            ds.push(DemoSample {
                t: vals[0],
                x: vals[1..1 + n].to_vec(),
                u_a: vals[1 + n..1 + n + ma].to_vec(),
                u_b: (mb > 0).then(|| vals[1 + n + ma..].to_vec()),
            })?;
        }
        ds.dt = ds.infer_dt();
        Ok(ds)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mb = if self.has_contender_controls() { self.contender_dim } else { 0 };
        let names = header(self.state_dim, self.ego_dim, mb);
        for s in &self.samples {
            let mut vals = vec![s.t];
            vals.extend(&s.x);
            vals.extend(&s.u_a);
            if mb > 0 {
                vals.extend(s.u_b.as_deref().unwrap_or(&[]));
            }
            let obj: serde_json::Map<String, serde_json::Value> =
                names.iter().cloned().zip(vals.into_iter().map(serde_json::Value::from)).collect();
            serde_json::to_writer(&mut w, &obj)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(source: impl Into<String>, r: R) -> Result<Self> {
        let mut ds: Option<DemoDataset> = None;
        let source = source.into();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)?;
            let cols: Vec<String> = obj.keys().cloned().collect();
            let sorted = {
                let count = |p: &str| cols.iter().filter(|c| c.strip_prefix(p).is_some_and(|r| r.parse::<usize>().is_ok())).count();
                header(count("x"), count("uA"), count("uB"))
            };
            let (n, ma, mb) = parse_header(&sorted)?;
            if sorted.len() != cols.len() {
                return Err(Error::Dataset(format!("line {}: unexpected keys", i + 1)));
            }
            let get = |k: &String| {
                obj[k]
                    .as_f64()
                    .ok_or_else(|| Error::Dataset(format!("line {}: field {k} is not a number", i + 1)))
            };
            let vals: Vec<f64> = sorted.iter().map(get).collect::<Result<_>>()?;
            let d = ds.get_or_insert_with(|| DemoDataset::new(source.clone(), 0.0, n, ma, mb));
            if (d.state_dim, d.ego_dim, d.contender_dim) != (n, ma, mb) {
                return Err(Error::Dataset(format!("line {}: field set differs from first line", i + 1)));
            }
            d.push(DemoSample {
                t: vals[0],
                x: vals[1..1 + n].to_vec(),
                u_a: vals[1 + n..1 + n + ma].to_vec(),
                u_b: (mb > 0).then(|| vals[1 + n + ma..].to_vec()),
            })?;
        }
        let mut ds = ds.ok_or_else(|| Error::Dataset("empty JSONL dataset".into()))?;
        ds.dt = ds.infer_dt();
        Ok(ds)
    }

    /// Reads `.csv` or `.jsonl` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let src = path.display().to_string();
        let f = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Self::read_jsonl(src, std::io::BufReader::new(f)),
            _ => Self::read_csv(src, f),
        }
    }

    /// Smallest positive timestamp increment, or 0 if none.
    fn infer_dt(&self) -> f64 {
        let d = self
            .samples
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() {
            d
        } else {
            0.0
        }
    }
}

/// Loss weights and optimizer settings. Defaults are the selected
/// hyperparameters of the reference experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 1.0,
            beta2: 0.001,
            beta3: 1.0,
            beta4: 0.001,
            beta5: 0.001,
            learning_rate: 0.001,
            steps: 10_000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let b = [self.beta1, self.beta2, self.beta3, self.beta4, self.beta5];
        if b.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.beta1 <= 0.0 {
            return Err(Error::Config("beta1 must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceMode {
    /// Recorded contender control.
    GroundTruth,
    /// Constraint-minimizing contender control over `interval` (the physical box).
    WorstCase,
    /// Constraint-minimizing control over `recorded + interval`.
    FixedInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceProvider {
    pub mode: DisturbanceMode,
    #[serde(default)]
    pub interval: Option<ControlBox>,
}

impl DisturbanceProvider {
    pub fn ground_truth() -> Self {
        DisturbanceProvider {
            mode: DisturbanceMode::GroundTruth,
            interval: None,
        }
    }

    pub fn worst_case(contender_box: ControlBox) -> Self {
        DisturbanceProvider {
            mode: DisturbanceMode::WorstCase,
            interval: Some(contender_box),
        }
    }

    pub fn fixed_interval(offsets: ControlBox) -> Self {
        DisturbanceProvider {
            mode: DisturbanceMode::FixedInterval,
            interval: Some(offsets),
        }
    }

    pub fn validate(&self, dataset: &DemoDataset) -> Result<()> {
        if dataset.contender_dim == 0 {
            return Ok(());
        }
        let need_recorded = matches!(self.mode, DisturbanceMode::GroundTruth | DisturbanceMode::FixedInterval);
        if need_recorded && !dataset.has_contender_controls() {
            return Err(Error::Config(format!(
                "{:?} provider needs recorded contender controls in every sample",
                self.mode
            )));
        }
        if self.mode != DisturbanceMode::GroundTruth {
            let bx = self
                .interval
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{:?} provider needs an interval box", self.mode)))?;
            bx.validate()?;
            if bx.dim() != dataset.contender_dim {
                return Err(Error::Config(format!(
                    "provider interval has {} channels, dataset has {} contender controls",
                    bx.dim(),
                    dataset.contender_dim
                )));
            }
        }
        Ok(())
    }

    /// Contender contribution `coeff·u_B` for one sample.
    pub fn contribution(&self, coeff: &[f64], sample: &DemoSample) -> Result<f64> {
        if coeff.is_empty() {
            return Ok(0.0);
        }
        match self.mode {
            DisturbanceMode::GroundTruth => {
                let u = sample.u_b.as_deref().ok_or_else(|| Error::Config("missing contender control".into()))?;
                ContenderRule::Known(u).contribution(coeff)
            }
            DisturbanceMode::WorstCase => {
                let bx = self.interval.as_ref().ok_or_else(|| Error::Config("missing interval".into()))?;
                ContenderRule::WorstCase(bx).contribution(coeff)
            }
            DisturbanceMode::FixedInterval => {
                let u = sample.u_b.as_deref().ok_or_else(|| Error::Config("missing contender control".into()))?;
                let off = self.interval.as_ref().ok_or_else(|| Error::Config("missing interval".into()))?;
                Ok(dot(coeff, u) + off.min_linear(coeff))
            }
        }
    }
}

/// Weighted, sample-averaged loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub violation: f64,
    pub saturation: f64,
    pub cbf_violation: f64,
    pub cbf_saturation: f64,
    pub regularizer: f64,
}

/// Parameter-independent per-sample data: Lie terms plus the control part of
/// the constraint `G_x·u_A + contender term`.
#[derive(Debug, Clone)]
pub struct PreparedData {
    terms: Vec<LieTerms>,
    control_part: Vec<f64>,
}

impl PreparedData {
    pub fn new(model: &HocbfModel, dyn_: &dyn AffineDynamics, data: &DemoDataset, provider: &DisturbanceProvider) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        if data.state_dim != dyn_.state_dim() || data.ego_dim != dyn_.ego_dim() {
            return Err(Error::Dataset(format!(
                "dataset dims ({}, {}) do not match dynamics ({}, {})",
                data.state_dim,
                data.ego_dim,
                dyn_.state_dim(),
                dyn_.ego_dim()
            )));
        }
        provider.validate(data)?;
        let mut terms = Vec::with_capacity(data.len());
        let mut control_part = Vec::with_capacity(data.len());
        for s in &data.samples {
            let t = model.lie_terms(dyn_, &s.x)?;
            let c = model.constraint_from_terms(&t);
            control_part.push(dot(&c.ego_coeff, &s.u_a) + provider.contribution(&c.contender_coeff, s)?);
            terms.push(t);
        }
        Ok(PreparedData { terms, control_part })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Constraint margin `m_j` for every sample.
    pub fn margins(&self, model: &HocbfModel) -> Vec<f64> {
        self.terms
            .iter()
            .zip(&self.control_part)
            .map(|(t, c)| c + model.drift_margin_from_terms(t))
            .collect()
    }

    /// Loss and gradient with respect to raw parameters.
    pub fn loss_and_gradient(&self, model: &HocbfModel, w: &LossWeights) -> (LossBreakdown, Vec<f64>) {
        let np = model.param_count();
        // per sample: [β₁ term, β₂ term, β₃ term, β₄ term, grad...]
        let width = 4 + np;
        let mut rows = vec![0.0; self.len() * width];
        let work = |(j, row): (usize, &mut [f64])| sample_loss(model, w, &self.terms[j], self.control_part[j], row);
        if self.len() >= PAR_THRESHOLD {
            rows.par_chunks_mut(width).enumerate().for_each(work);
        } else {
            rows.chunks_mut(width).enumerate().for_each(work);
        }
        let sum = tree_sum(&mut rows, width);
        let inv = 1.0 / self.len() as f64;

        let eff = model.effective_params();
        let reg = w.beta5 * eff.iter().map(|p| p * p).sum::<f64>();
        let mut grad: Vec<f64> = sum[4..].iter().map(|g| g * inv).collect();
        let jac: Vec<f64> = model.alphas().iter().flat_map(|a| a.effective_jacobian()).collect();
        for k in 0..np {
            grad[k] += 2.0 * w.beta5 * eff[k] * jac[k];
        }
        let b = LossBreakdown {
            violation: sum[0] * inv,
            saturation: sum[1] * inv,
            cbf_violation: sum[2] * inv,
            cbf_saturation: sum[3] * inv,
            regularizer: reg,
            total: (sum[0] + sum[1] + sum[2] + sum[3]) * inv + reg,
        };
        (b, grad)
    }
}

/// Fills `row` with the weighted loss terms and their raw-parameter gradient.
fn sample_loss(model: &HocbfModel, w: &LossWeights, t: &LieTerms, control_part: f64, row: &mut [f64]) {
    let np = model.param_count();
    let (terms, grad) = row.split_at_mut(4);
    let alphas = model.alphas();
    // ∂m/∂raw and ∂ψ/∂raw
    let mut dm = [0.0; 16];
    let mut dpsi = [0.0; 16];
    let (m, psi) = match alphas.len() {
        1 => {
            let a1 = &alphas[0];
            a1.value_grad(t.b, &mut dm[..np]);
            (control_part + t.lf_b + a1.value(t.b), t.b)
        }
        _ => {
            let (a1, a2) = (&alphas[0], &alphas[1]);
            let n1 = a1.param_count();
            let psi1 = t.lf_b + a1.value(t.b);
            let a2_slope = a2.slope(psi1);
            let mut vg = [0.0; 8];
            let mut sg = [0.0; 8];
            a1.value_grad(t.b, &mut vg[..n1]);
            a1.slope_grad(t.b, &mut sg[..n1]);
            for k in 0..n1 {
                dm[k] = sg[k] * t.lf_b + a2_slope * vg[k];
                dpsi[k] = vg[k];
            }
            a2.value_grad(psi1, &mut dm[n1..np]);
            let m = control_part + t.lf2_b + a1.slope(t.b) * t.lf_b + a2.value(psi1);
            (m, psi1)
        }
    };
    // Kinks take the inactive branch at exactly zero.
    let (tm, tp) = (m.tanh(), psi.tanh());
    let dm_coef = if m < 0.0 { -w.beta1 } else { 0.0 } + if m > 0.0 { w.beta2 * (1.0 - tm * tm) } else { 0.0 };
    let dp_coef = if psi < 0.0 { -w.beta3 } else { 0.0 } + if psi > 0.0 { w.beta4 * (1.0 - tp * tp) } else { 0.0 };
    terms[0] = -w.beta1 * m.min(0.0);
    terms[1] = w.beta2 * tm.max(0.0);
    terms[2] = -w.beta3 * psi.min(0.0);
    terms[3] = w.beta4 * tp.max(0.0);
    for k in 0..np {
        grad[k] = dm_coef * dm[k] + dp_coef * dpsi[k];
    }
}

/// Sums rows of width `w` with a pairwise tree whose shape depends only on
/// the row count. Destroys `rows`.
fn tree_sum(rows: &mut [f64], w: usize) -> Vec<f64> {
    let mut n = rows.len() / w;
    if n == 0 {
        return vec![0.0; w];
    }
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            for k in 0..w {
                rows[i * w + k] = rows[2 * i * w + k] + rows[(2 * i + 1) * w + k];
            }
        }
        if n % 2 == 1 {
            for k in 0..w {
                rows[half * w + k] = rows[(n - 1) * w + k];
            }
            n = half + 1;
        } else {
            n = half;
        }
    }
    rows[..w].to_vec()
}

pub fn loss(
    model: &HocbfModel,
    dyn_: &dyn AffineDynamics,
    data: &DemoDataset,
    weights: &LossWeights,
    provider: &DisturbanceProvider,
) -> Result<LossBreakdown> {
    let prep = PreparedData::new(model, dyn_, data, provider)?;
    Ok(prep.loss_and_gradient(model, weights).0)
}

pub fn gradient(
    model: &HocbfModel,
    dyn_: &dyn AffineDynamics,
    data: &DemoDataset,
    weights: &LossWeights,
    provider: &DisturbanceProvider,
) -> Result<Vec<f64>> {
    let prep = PreparedData::new(model, dyn_, data, provider)?;
    let (l, g) = prep.loss_and_gradient(model, weights);
    if !l.total.is_finite() {
        return Err(Error::Numerical("loss is not finite".into()));
    }
    Ok(g)
}

/// Fraction of samples whose constraint margin is at least `-tol`.
pub fn satisfaction_rate(
    model: &HocbfModel,
    dyn_: &dyn AffineDynamics,
    data: &DemoDataset,
    provider: &DisturbanceProvider,
    tol: f64,
) -> Result<f64> {
    let prep = PreparedData::new(model, dyn_, data, provider)?;
    let m = prep.margins(model);
    Ok(m.iter().filter(|v| **v >= -tol).count() as f64 / m.len() as f64)
}

/// Update rule applied to the raw parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// `v ← μv − η∇L`, `p ← p + v`
    GradientDescent,
    /// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub optimizer: Optimizer,
    /// Only used by gradient descent.
    pub momentum: f64,
    /// Half-width of uniform jitter added to the raw initial parameters;
    /// 0 keeps `init` as given.
    pub init_jitter: f64,
    /// Record the loss every this many steps (the final step is always recorded).
    pub trace_every: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optimizer: Optimizer::GradientDescent,
            momentum: 0.0,
            init_jitter: 0.0,
            trace_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: HocbfModel,
    pub trace: Vec<TracePoint>,
    /// Set when a non-finite loss stopped descent; `model` is the last finite iterate.
    pub aborted_at: Option<usize>,
}

/// Full-batch descent on the raw parameters.
pub fn fit(
    init: &HocbfModel,
    dyn_: &dyn AffineDynamics,
    data: &DemoDataset,
    weights: &LossWeights,
    provider: &DisturbanceProvider,
    seed: u64,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    weights.validate()?;
    if !(0.0..1.0).contains(&opts.momentum) {
        return Err(Error::Config("momentum must lie in [0, 1)".into()));
    }
    let prep = PreparedData::new(init, dyn_, data, provider)?;
    let mut model = init.clone();
    if opts.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = model
            .raw_params()
            .iter()
            .map(|r| r + rng.gen_range(-opts.init_jitter..=opts.init_jitter))
            .collect();
        model.set_raw_params(&raw);
    }
    let every = opts.trace_every.max(1);
    let mut trace = Vec::new();
    let mut velocity = vec![0.0; model.param_count()];
    let mut second = vec![0.0; model.param_count()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut raw = model.raw_params();
    for step in 0..=weights.steps {
        let (l, g) = prep.loss_and_gradient(&model, weights);
        if !l.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            log::warn!("non-finite loss at step {step}; returning last finite iterate");
            let mut last = model.clone();
            last.set_raw_params(&raw);
            return Ok(FitOutcome {
                model: last,
                trace,
                aborted_at: Some(step),
            });
        }
        if step % every == 0 || step == weights.steps {
            trace.push(TracePoint { step, loss: l });
        }
        if step == weights.steps {
            break;
        }
        raw = model.raw_params();
        let mut next = raw.clone();
        match opts.optimizer {
            Optimizer::GradientDescent => {
                for k in 0..next.len() {
                    velocity[k] = opts.momentum * velocity[k] - weights.learning_rate * g[k];
                    next[k] += velocity[k];
                }
            }
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for k in 0..next.len() {
                    velocity[k] = b1 * velocity[k] + (1.0 - b1) * g[k];
                    second[k] = b2 * second[k] + (1.0 - b2) * g[k] * g[k];
                    next[k] -= weights.learning_rate * (velocity[k] / c1) / ((second[k] / c2).sqrt() + eps);
                }
            }
        }
        model.set_raw_params(&next);
    }
    Ok(FitOutcome {
        model,
        trace,
        aborted_at: None,
    })
}
