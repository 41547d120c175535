//! Extended class-K∞ functions with softplus-positive parameters.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaKind {
    /// `c·a`
    Linear,
    /// `c·a³`
    Cubic,
    /// `c·sign(a)·|a|^q`, `q > 1`
    Power,
    /// `p₁·a + p₂·tanh(p₃·a) + p₄·a³`
    LinearCombination,
}

impl KappaKind {
    pub fn param_count(self) -> usize {
        match self {
            KappaKind::Linear | KappaKind::Cubic => 1,
            KappaKind::Power => 2,
            KappaKind::LinearCombination => 4,
        }
    }
}

pub fn softplus(r: f64) -> f64 {
    r.max(0.0) + (-r.abs()).exp().ln_1p()
}

pub fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `p > 0`.
pub fn softplus_inv(p: f64) -> f64 {
    p + (-(-p).exp_m1()).ln()
}

/// An extended class-K∞ function stored by its unconstrained raw parameters.
///
/// Effective parameters are `softplus(raw)`, except the power exponent which
/// is `1 + softplus(raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassKappaFn {
    kind: KappaKind,
    raw: Vec<f64>,
    eff: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KappaDoc {
    kind: KappaKind,
    params: Vec<f64>,
}

impl Serialize for ClassKappaFn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KappaDoc {
            kind: self.kind,
            params: self.effective(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassKappaFn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = KappaDoc::deserialize(d)?;
        ClassKappaFn::from_effective(doc.kind, &doc.params).map_err(serde::de::Error::custom)
    }
}

impl ClassKappaFn {
    /// Builds from effective (positive) parameters.
    pub fn from_effective(kind: KappaKind, params: &[f64]) -> Result<Self> {
        if params.len() != kind.param_count() {
            return Err(Error::Config(format!(
                "{kind:?} takes {} parameters, got {}",
                kind.param_count(),
                params.len()
            )));
        }
        ensure_finite("class-K parameters", params)?;
        let raw = params
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let shifted = if kind == KappaKind::Power && i == 1 { p - 1.0 } else { p };
                if shifted <= 0.0 {
                    Err(Error::Config(format!(
                        "{kind:?} parameter {i} = {p} outside its admissible range"
                    )))
                } else {
                    Ok(softplus_inv(shifted))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::with_raw(kind, raw))
    }

    pub fn from_raw(kind: KappaKind, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != kind.param_count() {
            return Err(Error::Config(format!(
                "{kind:?} takes {} parameters, got {}",
                kind.param_count(),
                raw.len()
            )));
        }
        ensure_finite("class-K raw parameters", &raw)?;
        Ok(Self::with_raw(kind, raw))
    }

    fn with_raw(kind: KappaKind, raw: Vec<f64>) -> Self {
        let mut k = ClassKappaFn {
            kind,
            eff: vec![0.0; raw.len()],
            raw,
        };
        k.refresh();
        k
    }

    fn refresh(&mut self) {
        for (i, (e, &r)) in self.eff.iter_mut().zip(&self.raw).enumerate() {
            *e = if self.kind == KappaKind::Power && i == 1 {
                1.0 + softplus(r)
            } else {
                softplus(r)
            };
        }
    }

    pub fn linear(c: f64) -> Result<Self> {
        Self::from_effective(KappaKind::Linear, &[c])
    }

    pub fn power(c: f64, q: f64) -> Result<Self> {
        Self::from_effective(KappaKind::Power, &[c, q])
    }

    pub fn kind(&self) -> KappaKind {
        self.kind
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn set_raw(&mut self, raw: &[f64]) {
        self.raw.copy_from_slice(raw);
        self.refresh();
    }

    pub fn param_count(&self) -> usize {
        self.raw.len()
    }

    pub fn effective(&self) -> Vec<f64> {
        self.eff.clone()
    }

    /// `d(effective)/d(raw)`, elementwise.
    pub fn effective_jacobian(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| sigmoid(r)).collect()
    }

    /// `α(a)`.
    pub fn value(&self, a: f64) -> f64 {
        let p = &self.eff;
        match self.kind {
            KappaKind::Linear => p[0] * a,
            KappaKind::Cubic => p[0] * a * a * a,
            KappaKind::Power => {
                if a == 0.0 {
                    0.0
                } else {
                    p[0] * a.signum() * a.abs().powf(p[1])
                }
            }
            KappaKind::LinearCombination => p[0] * a + p[1] * (p[2] * a).tanh() + p[3] * a * a * a,
        }
    }

    /// `α'(a)`.
    pub fn slope(&self, a: f64) -> f64 {
        let p = &self.eff;
        match self.kind {
            KappaKind::Linear => p[0],
            KappaKind::Cubic => 3.0 * p[0] * a * a,
            KappaKind::Power => {
                if a == 0.0 {
                    0.0
                } else {
                    p[0] * p[1] * a.abs().powf(p[1] - 1.0)
                }
            }
            KappaKind::LinearCombination => {
                let t = (p[2] * a).tanh();
                p[0] + p[1] * p[2] * (1.0 - t * t) + 3.0 * p[3] * a * a
            }
        }
    }

    /// `∂α(a)/∂raw`, written into `out`.
    pub fn value_grad(&self, a: f64, out: &mut [f64]) {
        let p = &self.eff;
        match self.kind {
            KappaKind::Linear => out[0] = a,
            KappaKind::Cubic => out[0] = a * a * a,
            KappaKind::Power => {
                if a == 0.0 {
                    out[0] = 0.0;
                    out[1] = 0.0;
                } else {
                    let m = a.abs().powf(p[1]);
                    out[0] = a.signum() * m;
                    out[1] = p[0] * a.signum() * m * a.abs().ln();
                }
            }
            KappaKind::LinearCombination => {
                let t = (p[2] * a).tanh();
                out[0] = a;
                out[1] = t;
                out[2] = p[1] * a * (1.0 - t * t);
                out[3] = a * a * a;
            }
        }
        for (o, &r) in out.iter_mut().zip(&self.raw) {
            *o *= sigmoid(r);
        }
    }

    /// `∂α'(a)/∂raw`, written into `out`.
    pub fn slope_grad(&self, a: f64, out: &mut [f64]) {
        let p = &self.eff;
        match self.kind {
            KappaKind::Linear => out[0] = 1.0,
            KappaKind::Cubic => out[0] = 3.0 * a * a,
            KappaKind::Power => {
                if a == 0.0 {
                    out[0] = 0.0;
                    out[1] = 0.0;
                } else {
                    let m = a.abs().powf(p[1] - 1.0);
                    out[0] = p[1] * m;
                    out[1] = p[0] * m * (1.0 + p[1] * a.abs().ln());
                }
            }
            KappaKind::LinearCombination => {
                let t = (p[2] * a).tanh();
                let s2 = 1.0 - t * t;
                out[0] = 1.0;
                out[1] = p[2] * s2;
                out[2] = p[1] * s2 * (1.0 - 2.0 * p[2] * a * t);
                out[3] = 3.0 * a * a;
            }
        }
        for (o, &r) in out.iter_mut().zip(&self.raw) {
            *o *= sigmoid(r);
        }
    }
}
