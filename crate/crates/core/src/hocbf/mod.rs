//! High-order control barrier functions.
//!
//! For relative degree `m_r` the chain is `ψ₀ = b`,
//! `ψᵢ = ψ̇ᵢ₋₁ + αᵢ(ψᵢ₋₁)`. With pairwise dynamics the last link is affine in
//! both agents' controls:
//!
//! ```text
//! L_g L_f^{m_r-1} b · u_A + L_h L_f^{m_r-1} b · u_B + L_f^{m_r} b + O(b) + α_{m_r}(ψ_{m_r-1}) ≥ 0
//! ```
//!
//! Only `m_r ∈ {1, 2}` is supported; for `m_r = 2`, `O(b) = α₁'(b)·L_f b`.
//! Lie derivatives are formed in closed form from the barrier's gradient and
//! Hessian and the drift Jacobian supplied by the dynamics.

mod barrier;
mod kappa;

pub use barrier::BarrierSpec;
pub use kappa::{sigmoid, softplus, softplus_inv, ClassKappaFn, KappaKind};

use serde::{Deserialize, Serialize};

use crate::dynamics::{dot, AffineDynamics, ControlBox, MAX_CONTROL, MAX_STATE};
use crate::error::{check_dim, ensure_finite, Error, Result};
use crate::polytope::{FeasiblePolytope, Halfspace};

/// Relative-degree check tolerance on `L_g b`, relative to `|∇b|·|g|`.
const LOWER_ORDER_TOL: f64 = 1e-9;

/// Parameter-independent Lie derivatives of a barrier at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LieTerms {
    pub b: f64,
    pub lf_b: f64,
    pub lf2_b: f64,
    pub lg_b: [f64; MAX_CONTROL],
    pub lh_b: [f64; MAX_CONTROL],
    pub lglf_b: [f64; MAX_CONTROL],
    pub lhlf_b: [f64; MAX_CONTROL],
    pub ego_dim: usize,
    pub contender_dim: usize,
    /// Scale used to judge whether `L_g b`, `L_h b` vanish.
    pub first_order_scale: f64,
}

impl LieTerms {
    /// Evaluates the closed-form chain at `x`.
    pub fn at(barrier: &BarrierSpec, dyn_: &dyn AffineDynamics, x: &[f64]) -> Self {
        let n = dyn_.state_dim();
        let (ma, mb) = (dyn_.ego_dim(), dyn_.contender_dim());
        let mut grad = [0.0; MAX_STATE];
        let mut hess = [0.0; MAX_STATE * MAX_STATE];
        let mut f = [0.0; MAX_STATE];
        let mut jf = [0.0; MAX_STATE * MAX_STATE];
        let mut g = [0.0; MAX_STATE * MAX_CONTROL];
        let mut h = [0.0; MAX_STATE * MAX_CONTROL];

        let b = barrier.eval(x, &mut grad[..n], &mut hess[..n * n]);
        dyn_.drift(x, &mut f[..n]);
        dyn_.drift_jacobian(x, &mut jf[..n * n]);
        dyn_.ego_gain(x, &mut g[..n * ma]);
        if mb > 0 {
            dyn_.contender_gain(x, &mut h[..n * mb]);
        }

        let lf_b = dot(&grad[..n], &f[..n]);
        // w = ∇(L_f b) = ∇²b·f + J_fᵀ·∇b
        let mut w = [0.0; MAX_STATE];
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += hess[k * n + i] * f[i] + jf[i * n + k] * grad[i];
            }
            w[k] = s;
        }
        let lf2_b = dot(&w[..n], &f[..n]);

        let mut terms = LieTerms {
            b,
            lf_b,
            lf2_b,
            lg_b: [0.0; MAX_CONTROL],
            lh_b: [0.0; MAX_CONTROL],
            lglf_b: [0.0; MAX_CONTROL],
            lhlf_b: [0.0; MAX_CONTROL],
            ego_dim: ma,
            contender_dim: mb,
            first_order_scale: 0.0,
        };
        let mut gmax: f64 = 0.0;
        for j in 0..ma {
            for i in 0..n {
                terms.lg_b[j] += grad[i] * g[i * ma + j];
                terms.lglf_b[j] += w[i] * g[i * ma + j];
                gmax = gmax.max(g[i * ma + j].abs());
            }
        }
        for j in 0..mb {
            for i in 0..n {
                terms.lh_b[j] += grad[i] * h[i * mb + j];
                terms.lhlf_b[j] += w[i] * h[i * mb + j];
                gmax = gmax.max(h[i * mb + j].abs());
            }
        }
        let gnorm = grad[..n].iter().map(|v| v.abs()).fold(0.0, f64::max);
        terms.first_order_scale = gnorm * gmax;
        terms
    }

    fn first_order_vanishes(&self) -> bool {
        let tol = LOWER_ORDER_TOL * self.first_order_scale.max(1.0);
        self.lg_b[..self.ego_dim].iter().all(|v| v.abs() <= tol)
            && self.lh_b[..self.contender_dim].iter().all(|v| v.abs() <= tol)
    }
}

/// `ego_coeff·u_A + contender_coeff·u_B + offset ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HocbfAffineConstraint {
    pub ego_coeff: Vec<f64>,
    pub contender_coeff: Vec<f64>,
    pub offset: f64,
}

impl HocbfAffineConstraint {
    pub fn lhs(&self, u_a: &[f64], u_b: &[f64]) -> f64 {
        dot(&self.ego_coeff, u_a) + dot(&self.contender_coeff, u_b) + self.offset
    }

    /// A constraint that never binds.
    pub fn inactive(ego_dim: usize, contender_dim: usize) -> Self {
        HocbfAffineConstraint {
            ego_coeff: vec![0.0; ego_dim],
            contender_coeff: vec![0.0; contender_dim],
            offset: f64::INFINITY,
        }
    }
}

/// How the contender term is folded into the ego's admissible set.
#[derive(Debug, Clone, Copy)]
pub enum ContenderRule<'a> {
    /// Single-agent systems, or ignore the contender altogether.
    Absent,
    /// Recorded contender control.
    Known(&'a [f64]),
    /// Contender control minimizing the constraint over a box.
    WorstCase(&'a ControlBox),
}

impl ContenderRule<'_> {
    /// Contender contribution `L_h L_f^{m_r-1} b · u_B` under this rule.
    pub fn contribution(&self, contender_coeff: &[f64]) -> Result<f64> {
        match self {
            ContenderRule::Absent => Ok(0.0),
            ContenderRule::Known(u) => {
                check_dim("contender control", contender_coeff.len(), u.len())?;
                Ok(dot(contender_coeff, u))
            }
            ContenderRule::WorstCase(bx) => {
                check_dim("contender box", contender_coeff.len(), bx.dim())?;
                Ok(bx.min_linear(contender_coeff))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HocbfDoc {
    barrier: BarrierSpec,
    alphas: Vec<ClassKappaFn>,
    relative_degree: usize,
}

/// A barrier together with its chain of class-K functions `p = [p₁, …, p_{m_r}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HocbfDoc", into = "HocbfDoc")]
pub struct HocbfModel {
    barrier: BarrierSpec,
    alphas: Vec<ClassKappaFn>,
}

impl TryFrom<HocbfDoc> for HocbfModel {
    type Error = Error;
    fn try_from(doc: HocbfDoc) -> Result<Self> {
        if doc.alphas.len() != doc.relative_degree {
            return Err(Error::Config(format!(
                "relative degree {} needs as many class-K functions, got {}",
                doc.relative_degree,
                doc.alphas.len()
            )));
        }
        HocbfModel::new(doc.barrier, doc.alphas)
    }
}

impl From<HocbfModel> for HocbfDoc {
    fn from(m: HocbfModel) -> Self {
        HocbfDoc {
            relative_degree: m.alphas.len(),
            barrier: m.barrier,
            alphas: m.alphas,
        }
    }
}

impl HocbfModel {
    /// The relative degree is the number of class-K functions supplied.
    pub fn new(barrier: BarrierSpec, alphas: Vec<ClassKappaFn>) -> Result<Self> {
        match alphas.len() {
            1 | 2 => Ok(HocbfModel { barrier, alphas }),
            0 => Err(Error::Config("at least one class-K function is required".into())),
            m => Err(Error::Config(format!(
                "relative degree {m} unsupported; only 1 and 2 are implemented"
            ))),
        }
    }

    pub fn barrier(&self) -> &BarrierSpec {
        &self.barrier
    }

    pub fn alphas(&self) -> &[ClassKappaFn] {
        &self.alphas
    }

    pub fn relative_degree(&self) -> usize {
        self.alphas.len()
    }

    pub fn param_count(&self) -> usize {
        self.alphas.iter().map(ClassKappaFn::param_count).sum()
    }

    pub fn raw_params(&self) -> Vec<f64> {
        self.alphas.iter().flat_map(|a| a.raw().iter().copied()).collect()
    }

    pub fn effective_params(&self) -> Vec<f64> {
        self.alphas.iter().flat_map(|a| a.effective()).collect()
    }

    pub fn set_raw_params(&mut self, raw: &[f64]) {
        assert_eq!(raw.len(), self.param_count(), "parameter vector length");
        let mut off = 0;
        for a in &mut self.alphas {
            let n = a.param_count();
            a.set_raw(&raw[off..off + n]);
            off += n;
        }
    }

    /// Offsets of each `αᵢ`'s block in the flat parameter vector.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.alphas.len());
        let mut off = 0;
        for a in &self.alphas {
            offs.push(off);
            off += a.param_count();
        }
        offs
    }

    pub fn lie_terms(&self, dyn_: &dyn AffineDynamics, x: &[f64]) -> Result<LieTerms> {
        check_dim("state", dyn_.state_dim(), x.len())?;
        ensure_finite("state", x)?;
        let t = LieTerms::at(&self.barrier, dyn_, x);
        if self.relative_degree() == 2 && !t.first_order_vanishes() {
            return Err(Error::Config(format!(
                "barrier has relative degree 1 at {x:?}, model declares 2"
            )));
        }
        Ok(t)
    }

    /// `[ψ₀, …, ψ_{m_r−1}]` from precomputed Lie terms.
    pub fn psi_from_terms(&self, t: &LieTerms) -> Vec<f64> {
        match self.relative_degree() {
            1 => vec![t.b],
            _ => vec![t.b, t.lf_b + self.alphas[0].value(t.b)],
        }
    }

    /// Effective CBF `ψ_{m_r−1}` from precomputed Lie terms.
    pub fn effective_from_terms(&self, t: &LieTerms) -> f64 {
        match self.relative_degree() {
            1 => t.b,
            _ => t.lf_b + self.alphas[0].value(t.b),
        }
    }

    /// Parameter-dependent part `F_x(p) = L_f^{m_r} b + O(b) + α_{m_r}(ψ_{m_r−1})`.
    pub fn drift_margin_from_terms(&self, t: &LieTerms) -> f64 {
        match self.relative_degree() {
            1 => t.lf_b + self.alphas[0].value(t.b),
            _ => {
                let psi1 = t.lf_b + self.alphas[0].value(t.b);
                t.lf2_b + self.alphas[0].slope(t.b) * t.lf_b + self.alphas[1].value(psi1)
            }
        }
    }

    pub fn constraint_from_terms(&self, t: &LieTerms) -> HocbfAffineConstraint {
        let (ego, cont) = match self.relative_degree() {
            1 => (&t.lg_b, &t.lh_b),
            _ => (&t.lglf_b, &t.lhlf_b),
        };
        HocbfAffineConstraint {
            ego_coeff: ego[..t.ego_dim].to_vec(),
            contender_coeff: cont[..t.contender_dim].to_vec(),
            offset: self.drift_margin_from_terms(t),
        }
    }

    pub fn psi_sequence(&self, dyn_: &dyn AffineDynamics, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.psi_from_terms(&self.lie_terms(dyn_, x)?))
    }

    pub fn effective_cbf(&self, dyn_: &dyn AffineDynamics, x: &[f64]) -> Result<f64> {
        Ok(self.effective_from_terms(&self.lie_terms(dyn_, x)?))
    }

    pub fn constraint_at(&self, dyn_: &dyn AffineDynamics, x: &[f64]) -> Result<HocbfAffineConstraint> {
        Ok(self.constraint_from_terms(&self.lie_terms(dyn_, x)?))
    }

    /// Checks the declared relative degree on probe states: lower-order Lie
    /// derivatives must vanish everywhere and the ego coefficient must be
    /// nonzero somewhere.
    pub fn validate_relative_degree(&self, dyn_: &dyn AffineDynamics, probes: &[Vec<f64>]) -> Result<()> {
        self.barrier.validate(dyn_.state_dim())?;
        let mut any_ego = false;
        for x in probes {
            let c = self.constraint_at(dyn_, x)?;
            if c.ego_coeff.iter().any(|v| v.abs() > 1e-12) {
                any_ego = true;
            }
        }
        if any_ego || probes.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(
                "ego control never enters the barrier constraint at the probe states (relative degree mismatch)".into(),
            ))
        }
    }

    /// `box ∩ {u_A : ego_coeff·u_A + offset + contender term ≥ 0}`.
    pub fn admissible_control_set(
        &self,
        dyn_: &dyn AffineDynamics,
        x: &[f64],
        ego_box: &ControlBox,
        rule: ContenderRule<'_>,
    ) -> Result<FeasiblePolytope> {
        check_dim("ego box", dyn_.ego_dim(), ego_box.dim())?;
        let c = self.constraint_at(dyn_, x)?;
        let extra = rule.contribution(&c.contender_coeff)?;
        Ok(FeasiblePolytope::new(
            ego_box,
            Halfspace::new(c.ego_coeff.clone(), c.offset + extra),
        ))
    }
}
