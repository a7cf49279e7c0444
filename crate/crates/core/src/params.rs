//! Flat parameter vectors and the arithmetic the protocol needs on them:
//! SGD updates, unweighted averaging, and the relative-change measure that
//! drives the local-epoch policy.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};

/// Flat vector of model weights. Every element is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("parameter {pos} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L2 => self.0.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Linf => self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }

    /// FNV-1a over the IEEE-754 bit patterns. Used as a provenance tag, so
    /// two vectors share a fingerprint only if they are (almost surely)
    /// bit-identical.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Vector norm used by [`rel_change_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    Linf,
}

/// `params - lr * grad`, elementwise.
pub fn sgd_step(
    params: &ParameterVector,
    grad: &ParameterVector,
    lr: f64,
) -> Result<ParameterVector> {
    ensure_len("sgd_step gradient", params.len(), grad.len())?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(invalid(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    let out: Vec<f64> = params
        .0
        .iter()
        .zip(&grad.0)
        .map(|(p, g)| p - lr * g)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sgd_step"));
    }
    Ok(ParameterVector(out))
}

/// Unweighted elementwise mean. Models are summed in slice order, so callers
/// that pass uploads sorted by participant get bitwise-reproducible results.
pub fn average(models: &[ParameterVector]) -> Result<ParameterVector> {
    let first = models
        .first()
        .ok_or_else(|| invalid("cannot average an empty list of models"))?;
    let len = first.len();
    let mut sum = vec![0.0; len];
    for m in models {
        ensure_len("average", len, m.len())?;
        for (s, v) in sum.iter_mut().zip(&m.0) {
            *s += v;
        }
    }
    let k = models.len() as f64;
    for s in &mut sum {
        *s /= k;
    }
    Ok(ParameterVector(sum))
}

/// `‖new − old‖₂ / ‖old‖₂`.
pub fn rel_change(new: &ParameterVector, old: &ParameterVector) -> Result<f64> {
    rel_change_with(new, old, Norm::L2)
}

pub fn rel_change_with(new: &ParameterVector, old: &ParameterVector, norm: Norm) -> Result<f64> {
    ensure_len("rel_change", old.len(), new.len())?;
    let denom = old.norm(norm);
    if denom == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let diff = ParameterVector(new.0.iter().zip(&old.0).map(|(a, b)| a - b).collect());
    Ok(diff.norm(norm) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ParameterVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParameterVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let p = pv(&[1.0, 2.0]);
        let out = sgd_step(&p, &pv(&[0.0, 0.0]), 0.1).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn sgd_arithmetic() {
        let out = sgd_step(&pv(&[1.0, 2.0]), &pv(&[10.0, -10.0]), 0.01).unwrap();
        assert!((out.as_slice()[0] - 0.9).abs() < 1e-15);
        assert!((out.as_slice()[1] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_undone_by_negated_gradient() {
        let p = pv(&[0.1, -3.7, 1e-3, 42.0]);
        let g = pv(&[0.3, 2.0, -5.5, 0.25]);
        let there = sgd_step(&p, &g, 0.05).unwrap();
        let neg = pv(&g.as_slice().iter().map(|v| -v).collect::<Vec<_>>());
        let back = sgd_step(&there, &neg, 0.05).unwrap();
        for (a, b) in back.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0));
        }
    }

    #[test]
    fn sgd_errors() {
        assert!(matches!(
            sgd_step(&pv(&[1.0]), &pv(&[1.0, 2.0]), 0.1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(sgd_step(&pv(&[1.0]), &pv(&[1.0]), 0.0).is_err());
        assert!(sgd_step(&pv(&[1.0]), &pv(&[1.0]), -0.1).is_err());
        assert!(matches!(
            sgd_step(&pv(&[f64::MAX]), &pv(&[-f64::MAX]), 10.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn average_pair() {
        assert_eq!(
            average(&[pv(&[1.0, 2.0]), pv(&[3.0, 4.0])]).unwrap(),
            pv(&[2.0, 3.0])
        );
    }

    #[test]
    fn average_single_is_bit_identical() {
        let p = pv(&[0.1, -0.7, 1e-300, 3.3]);
        let out = average(std::slice::from_ref(&p)).unwrap();
        for (a, b) in out.as_slice().iter().zip(p.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn average_of_copies_is_idempotent() {
        let p = pv(&[0.1, -0.7, 12.5, 3.3]);
        let out = average(&vec![p.clone(); 7]).unwrap();
        for (a, b) in out.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn average_errors() {
        assert!(average(&[]).is_err());
        assert!(matches!(
            average(&[pv(&[1.0]), pv(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rel_change_examples() {
        let w = pv(&[3.0, 4.0]);
        assert_eq!(rel_change(&w, &w).unwrap(), 0.0);
        assert_eq!(rel_change(&pv(&[3.0, 9.0]), &w).unwrap(), 1.0);
        let scaled = pv(&[3.0 * 1.01, 4.0 * 1.01]);
        assert!((rel_change(&scaled, &w).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn rel_change_linf() {
        let r = rel_change_with(&pv(&[3.0, 9.0]), &pv(&[3.0, 4.0]), Norm::Linf).unwrap();
        assert_eq!(r, 5.0 / 4.0);
    }

    #[test]
    fn rel_change_degenerate_reference() {
        assert!(matches!(
            rel_change(&pv(&[1.0]), &pv(&[0.0])),
            Err(Error::DegenerateReference)
        ));
    }

    #[test]
    fn fingerprint_distinguishes_bits() {
        assert_ne!(pv(&[0.0]).fingerprint(), pv(&[-0.0]).fingerprint());
        assert_eq!(pv(&[1.5, 2.0]).fingerprint(), pv(&[1.5, 2.0]).fingerprint());
    }
}
