//! Adversarial and cycle-consistency terms of the translation objective, with
//! hand-derived gradients.
//!
//! Score maps are discriminator outputs after the sigmoid, flattened. Scores
//! are clamped to `[SCORE_EPS, 1 − SCORE_EPS]` before any logarithm; inside
//! the clamp the gradients are exact, outside they are zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLossForm {
    /// `log D(real) + log(1 − D(fake))`.
    #[default]
    Log,
    /// Squared distance of scores to their targets.
    LeastSquares,
}

fn check_shapes(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: {} vs {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Shape(format!("{what}: empty input")));
    }
    Ok(())
}

fn clamp_score(s: f64) -> (f64, bool) {
    let c = s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    (c, c == s)
}

fn mean_log(scores: &[f64]) -> f64 {
    scores.iter().map(|&s| clamp_score(s).0.ln()).sum::<f64>() / scores.len() as f64
}

fn mean_log_complement(scores: &[f64]) -> f64 {
    scores.iter().map(|&s| (1.0 - clamp_score(s).0).ln()).sum::<f64>() / scores.len() as f64
}

/// Adversarial objective `mean log D(real) + mean log(1 − D(fake))`.
///
/// The discriminator ascends this value, the generator descends its fake term.
/// At `D ≡ 0.5` it equals `2 log 0.5`; it approaches `0⁻` for a perfect discriminator.
pub fn adversarial_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    check_shapes(real, fake, "adversarial_loss")?;
    Ok(mean_log(real) + mean_log_complement(fake))
}

/// Gradients of [`adversarial_loss`] with respect to the real and fake scores.
pub fn adversarial_loss_grad(real: &[f64], fake: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(real, fake, "adversarial_loss")?;
    let n = real.len() as f64;
    let gr = real
        .iter()
        .map(|&s| match clamp_score(s) {
            (c, true) => 1.0 / (c * n),
            _ => 0.0,
        })
        .collect();
    let gf = fake
        .iter()
        .map(|&s| match clamp_score(s) {
            (c, true) => -1.0 / ((1.0 - c) * n),
            _ => 0.0,
        })
        .collect();
    Ok((gr, gf))
}

/// Loss the discriminator minimizes, with gradients for real and fake scores.
pub fn discriminator_loss(real: &[f64], fake: &[f64], form: GanLossForm) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_shapes(real, fake, "discriminator_loss")?;
    match form {
        GanLossForm::Log => {
            let value = adversarial_loss(real, fake)?;
            let (gr, gf) = adversarial_loss_grad(real, fake)?;
            Ok((-value, gr.into_iter().map(|g| -g).collect(), gf.into_iter().map(|g| -g).collect()))
        }
        GanLossForm::LeastSquares => {
            let n = real.len() as f64;
            let value = real.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n
                + fake.iter().map(|s| s * s).sum::<f64>() / n;
            let gr = real.iter().map(|s| 2.0 * (s - 1.0) / n).collect();
            let gf = fake.iter().map(|s| 2.0 * s / n).collect();
            Ok((value, gr, gf))
        }
    }
}

/// Loss a generator minimizes given the discriminator's scores on its output.
///
/// The log form is the non-saturating `−mean log D(G(x))`, which shares its
/// fixed points with minimizing `log(1 − D(G(x)))` but keeps gradients alive
/// when the discriminator wins early.
pub fn generator_loss(fake: &[f64], form: GanLossForm) -> Result<(f64, Vec<f64>)> {
    if fake.is_empty() {
        return Err(Error::Shape("generator_loss: empty input".into()));
    }
    let n = fake.len() as f64;
    match form {
        GanLossForm::Log => {
            let value = -mean_log(fake);
            let g = fake
                .iter()
                .map(|&s| match clamp_score(s) {
                    (c, true) => -1.0 / (c * n),
                    _ => 0.0,
                })
                .collect();
            Ok((value, g))
        }
        GanLossForm::LeastSquares => {
            let value = fake.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n;
            Ok((value, fake.iter().map(|s| 2.0 * (s - 1.0) / n).collect()))
        }
    }
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute reconstruction error of both cycles, summed:
/// `mean|rec_b − b| + mean|rec_m − m|`.
pub fn cycle_consistency_loss(
    original_b: &[f64],
    reconstructed_b: &[f64],
    original_m: &[f64],
    reconstructed_m: &[f64],
) -> Result<f64> {
    check_shapes(original_b, reconstructed_b, "cycle_consistency_loss (B cycle)")?;
    check_shapes(original_m, reconstructed_m, "cycle_consistency_loss (M cycle)")?;
    Ok(mean_abs_diff(original_b, reconstructed_b) + mean_abs_diff(original_m, reconstructed_m))
}

/// Gradients of [`cycle_consistency_loss`] with respect to the two reconstructions.
/// The subgradient at equality is taken as zero.
pub fn cycle_consistency_grad(
    original_b: &[f64],
    reconstructed_b: &[f64],
    original_m: &[f64],
    reconstructed_m: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(original_b, reconstructed_b, "cycle_consistency_loss (B cycle)")?;
    check_shapes(original_m, reconstructed_m, "cycle_consistency_loss (M cycle)")?;
    let grad = |orig: &[f64], rec: &[f64]| {
        let n = orig.len() as f64;
        rec.iter()
            .zip(orig)
            .map(|(r, o)| {
                let d = r - o;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            })
            .collect::<Vec<_>>()
    };
    Ok((grad(original_b, reconstructed_b), grad(original_m, reconstructed_m)))
}

/// Full objective: both adversarial terms plus the weighted cycle term.
pub fn total_objective(adv_bm: f64, adv_mb: f64, cyc: f64, lambda_cyc: f64) -> f64 {
    adv_bm + adv_mb + lambda_cyc * cyc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_at_half() {
        let v = adversarial_loss(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v - (-1.3863)).abs() < 1e-4);
    }

    #[test]
    fn adversarial_perfect_discriminator_approaches_zero() {
        let v = adversarial_loss(&[1.0 - SCORE_EPS; 9], &[SCORE_EPS; 9]).unwrap();
        assert!(v < 0.0 && v > -1e-6);
        // Fully saturated scores are clamped, never −∞.
        assert!(adversarial_loss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn generator_term_at_half() {
        let (v, _) = generator_loss(&[0.5; 3], GanLossForm::Log).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(adversarial_loss(&[0.5; 4], &[0.5; 3]).is_err());
        assert!(cycle_consistency_loss(&[0.0; 2], &[0.0; 3], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn cycle_examples() {
        let z = vec![0.0; 16];
        assert_eq!(cycle_consistency_loss(&z, &z, &z, &z).unwrap(), 0.0);
        let h = vec![0.5; 16];
        assert!((cycle_consistency_loss(&z, &h, &z, &h).unwrap() - 1.0).abs() < 1e-12);
        // |a − b| = |b − a|
        assert_eq!(
            cycle_consistency_loss(&z, &h, &h, &z).unwrap(),
            cycle_consistency_loss(&h, &z, &z, &h).unwrap()
        );
    }

    #[test]
    fn total_objective_examples() {
        assert!((total_objective(1.0, 1.0, 0.3, 10.0) - 5.0).abs() < 1e-12);
        assert_eq!(total_objective(1.0, 2.0, 0.3, 0.0), 3.0);
        assert_eq!(total_objective(1.0, 2.0, 0.0, 10.0), 3.0);
    }

    #[test]
    fn least_squares_optimum() {
        let (v, gr, gf) = discriminator_loss(&[1.0; 2], &[0.0; 2], GanLossForm::LeastSquares).unwrap();
        assert_eq!(v, 0.0);
        assert!(gr.iter().chain(&gf).all(|g| *g == 0.0));
    }
}
