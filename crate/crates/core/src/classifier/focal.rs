//! Focal loss `FL(p_t) = −α_t (1 − p_t)^γ log p_t` for the binary case.
//!
//! `p` is the predicted probability of the malignant class (label 1).
//! `p_t = p` and `α_t = α` for malignant targets; `p_t = 1 − p` and `α_t = 1 − α`
//! for benign targets. Labels may be given as `{0, 1}` or `{−1, 1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalLossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalLossParams {
    /// Plain cross-entropy with balanced class weights (`γ = 0`, `α = 0.5`).
    pub fn cross_entropy() -> Self {
        Self { alpha: 0.5, gamma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("focal alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be ≥ 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Maps `{−1, 0, 1}` to whether the target is the positive (malignant) class.
fn is_positive(y: i32) -> Result<bool> {
    match y {
        1 => Ok(true),
        0 | -1 => Ok(false),
        other => Err(Error::InvalidArgument(format!("label must be in {{0,1}} or {{-1,1}}, got {other}"))),
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn weights(p: f64, y: i32, params: &FocalLossParams) -> Result<(f64, f64, f64)> {
    check_p(p)?;
    let pos = is_positive(y)?;
    let (pt, alpha_t, sign) = if pos { (p, params.alpha, 1.0) } else { (1.0 - p, 1.0 - params.alpha, -1.0) };
    Ok((pt, alpha_t, sign))
}

/// Loss for one prediction.
pub fn focal_loss(p: f64, y: i32, params: &FocalLossParams) -> Result<f64> {
    let (pt, alpha_t, _) = weights(p, y, params)?;
    let pt = pt.clamp(PROB_EPS, 1.0 - PROB_EPS);
    Ok(-alpha_t * (1.0 - pt).powf(params.gamma) * pt.ln())
}

/// `∂FL/∂p`. Zero where the clamp is active.
pub fn focal_loss_grad(p: f64, y: i32, params: &FocalLossParams) -> Result<f64> {
    let (pt, alpha_t, sign) = weights(p, y, params)?;
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&pt) {
        return Ok(0.0);
    }
    let g = params.gamma;
    let q = 1.0 - pt;
    // d/dp_t of −α_t q^γ log p_t
    let modulating = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) * pt.ln() };
    let d_pt = alpha_t * (modulating - q.powf(g) / pt);
    Ok(sign * d_pt)
}

/// Mean loss over a batch.
pub fn focal_loss_batch(p: &[f64], y: &[i32], params: &FocalLossParams) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::Shape(format!("{} probabilities vs {} labels", p.len(), y.len())));
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut sum = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        sum += focal_loss(pi, yi, params)?;
    }
    Ok(sum / p.len() as f64)
}

/// Numerically stable `log σ(s)`.
fn log_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

/// Batch-mean focal loss on two-unit logits `[z_benign, z_malignant]` per row,
/// with its gradient with respect to the logits.
///
/// With `s = ±(z₁ − z₀)` oriented towards the true class, `p_t = σ(s)` and
/// `∂FL/∂s = −α_t (1 − p_t)^γ [(1 − p_t) − γ p_t log p_t]`. Computed without
/// clamping, so it stays exact for confident predictions.
pub fn focal_loss_logits(logits: &[f64], y: &[i32], params: &FocalLossParams) -> Result<(f64, Vec<f64>)> {
    if logits.len() != 2 * y.len() {
        return Err(Error::Shape(format!("{} logits for {} labels", logits.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, &yi) in y.iter().enumerate() {
        let pos = is_positive(yi)?;
        let diff = logits[2 * i + 1] - logits[2 * i];
        let (s, alpha_t, sign) = if pos { (diff, params.alpha, 1.0) } else { (-diff, 1.0 - params.alpha, -1.0) };
        let log_pt = log_sigmoid(s);
        let pt = log_pt.exp();
        let q = log_sigmoid(-s).exp();
        let qg = if params.gamma == 0.0 { 1.0 } else { q.powf(params.gamma) };
        loss += -alpha_t * qg * log_pt;
        let d_s = -alpha_t * qg * (q - params.gamma * pt * log_pt);
        // ∂s/∂z₁ = sign, ∂s/∂z₀ = −sign
        grad[2 * i + 1] = sign * d_s / n;
        grad[2 * i] = -sign * d_s / n;
    }
    Ok((loss / n, grad))
}

/// Softmax of two logits, returned as `(p_benign, p_malignant)`.
pub fn softmax2(z0: f64, z1: f64) -> (f64, f64) {
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    let s = e0 + e1;
    (e0 / s, e1 / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULTS: FocalLossParams = FocalLossParams { alpha: 0.25, gamma: 2.0 };

    #[test]
    fn worked_examples() {
        let v = focal_loss(0.5, 1, &DEFAULTS).unwrap();
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((v - 0.04332).abs() < 1e-5);
        let ce = focal_loss(0.9, 1, &FocalLossParams::cross_entropy()).unwrap();
        assert!((ce - 0.05268).abs() < 1e-5);
        assert!(focal_loss(1.0 - 1e-9, 1, &DEFAULTS).unwrap() < 1e-12);
        assert_eq!(focal_loss(0.3, -1, &DEFAULTS).unwrap(), focal_loss(0.3, 0, &DEFAULTS).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(focal_loss(1.2, 1, &DEFAULTS).is_err());
        assert!(focal_loss(-0.1, 0, &DEFAULTS).is_err());
        assert!(focal_loss(f64::NAN, 0, &DEFAULTS).is_err());
        assert!(focal_loss(0.5, 2, &DEFAULTS).is_err());
        assert!(focal_loss_batch(&[0.5], &[1, 0], &DEFAULTS).is_err());
    }

    #[test]
    fn logits_version_matches_probability_version() {
        for &(z0, z1) in &[(0.0, 0.0), (1.5, -0.3), (-2.0, 3.0), (0.2, 0.1)] {
            let (_, p) = softmax2(z0, z1);
            for y in [0, 1] {
                let (l, _) = focal_loss_logits(&[z0, z1], &[y], &DEFAULTS).unwrap();
                assert!((l - focal_loss(p, y, &DEFAULTS).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_gradient_matches_finite_differences() {
        let z = [0.3, -0.7, 1.1, 0.4, -2.0, 2.5];
        let y = [1, 0, 1];
        for params in [DEFAULTS, FocalLossParams { alpha: 0.6, gamma: 0.0 }, FocalLossParams { alpha: 0.4, gamma: 5.0 }] {
            let (_, g) = focal_loss_logits(&z, &y, &params).unwrap();
            for i in 0..z.len() {
                let h = 1e-6;
                let (mut a, mut b) = (z, z);
                a[i] += h;
                b[i] -= h;
                let fd = (focal_loss_logits(&a, &y, &params).unwrap().0 - focal_loss_logits(&b, &y, &params).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        for &(a, b) in &[(0.0, 0.0), (100.0, -100.0), (-3.0, 7.5)] {
            let (p0, p1) = softmax2(a, b);
            assert!((p0 + p1 - 1.0).abs() < 1e-12);
        }
    }
}
