use rayon::prelude::*;

use super::ClassWeights;
use crate::error::{Error, Result};
use crate::raster::IGNORE;

/// Lower bound applied inside `ln` so a zero probability gives a large but
/// finite loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class probability vector of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelProbabilities(pub Vec<f64>);

impl PixelProbabilities {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> PixelProbabilities {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    PixelProbabilities(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean weighted loss over non-ignore pixels.
    pub loss: f64,
    /// d loss / d logits, laid out like the input logits.
    pub grad: Vec<f64>,
    /// Number of pixels that contributed.
    pub scored: usize,
}

/// Weighted softmax cross-entropy over a batch of pixels.
///
/// `logits` is pixel-major with `weights.len()` entries per pixel. Each
/// scored pixel contributes `-w[t] * ln(softmax(z)[t])` where `t` is its
/// target; pixels with target `-1` contribute nothing. The result is
/// averaged over scored pixels, and the gradient per scored pixel is
/// `w[t] * (softmax(z) - onehot(t)) / n_scored`.
pub fn weighted_ce_loss(logits: &[f64], targets: &[i16], weights: &ClassWeights) -> Result<LossOutput> {
    let k = weights.len();
    if k == 0 || logits.len() != targets.len() * k {
        return Err(Error::Shape(format!(
            "{} logits for {} pixels of {k} classes",
            logits.len(),
            targets.len()
        )));
    }
    if let Some((i, t)) = targets
        .iter()
        .enumerate()
        .find(|(_, &t)| t < IGNORE || t >= k as i16)
    {
        return Err(Error::Data(format!("target {t} at pixel {i} outside {{-1, 0..{k}}}")));
    }
    let scored = targets.iter().filter(|&&t| t != IGNORE).count();
    if scored == 0 {
        return Err(Error::Empty("every pixel in the batch is ignored".into()));
    }
    let inv_n = 1.0 / scored as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut losses = vec![0.0; targets.len()];
    grad.par_chunks_mut(k)
        .zip(logits.par_chunks(k))
        .zip(targets.par_iter())
        .zip(losses.par_iter_mut())
        .for_each(|(((g, z), &t), loss_out)| {
            if t == IGNORE {
                return;
            }
            let t = t as usize;
            g.copy_from_slice(z);
            softmax_in_place(g);
            let w = weights.w[t];
            let loss = -w * g[t].max(PROB_FLOOR).ln();
            g[t] -= 1.0;
            for v in g.iter_mut() {
                *v *= w * inv_n;
            }
            *loss_out = loss;
        });
    // sequential sum keeps the result independent of the thread count
    let total: f64 = losses.iter().sum();
    Ok(LossOutput {
        loss: total * inv_n,
        grad,
        scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightingStrategy;
    use proptest::prelude::*;

    fn w(v: Vec<f64>) -> ClassWeights {
        ClassWeights {
            w: v,
            strategy: WeightingStrategy::Uniform,
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[2.0; 4]);
        assert!(p.0.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p.0[0] - 0.25).abs() < 1e-15 && (p.0[1] - 0.75).abs() < 1e-15);
        let p = softmax(&[1000.0, 1000.0]);
        assert!(p.0.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn one_hot_prediction_has_zero_loss() {
        let out = weighted_ce_loss(&[0.0, 800.0, 0.0], &[1], &w(vec![3.0, 5.0, 7.0])).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn known_probabilities() {
        let logits: Vec<f64> = [0.7f64, 0.2, 0.1].iter().map(|p| p.ln()).collect();
        let out = weighted_ce_loss(&logits, &[0], &ClassWeights::uniform(3)).unwrap();
        assert!((out.loss - 0.356_674_943_938_732_4).abs() < 1e-12);
    }

    #[test]
    fn ignore_pixels_do_not_count() {
        let logits = [1.0, 2.0, 0.5, -1.0];
        let out = weighted_ce_loss(&logits, &[0, -1], &ClassWeights::uniform(2)).unwrap();
        let single = weighted_ce_loss(&logits[..2], &[0], &ClassWeights::uniform(2)).unwrap();
        assert_eq!(out.loss, single.loss);
        assert_eq!(out.scored, 1);
        assert_eq!(&out.grad[2..], &[0.0, 0.0]);
        assert!(matches!(
            weighted_ce_loss(&logits, &[-1, -1], &ClassWeights::uniform(2)),
            Err(Error::Empty(_))
        ));
        assert!(weighted_ce_loss(&logits, &[2, 0], &ClassWeights::uniform(2)).is_err());
    }

    proptest! {
        #[test]
        fn scaling_weights_scales_loss_and_grad(
            z in proptest::collection::vec(-5f64..5.0, 12),
            t in proptest::collection::vec(-1i16..3, 4),
            ws in proptest::collection::vec(0.1f64..4.0, 3),
            c in 0.1f64..10.0,
        ) {
            prop_assume!(t.iter().any(|&x| x >= 0));
            let base = weighted_ce_loss(&z, &t, &w(ws.clone())).unwrap();
            let scaled = weighted_ce_loss(&z, &t, &w(ws).scaled(c)).unwrap();
            prop_assert!((scaled.loss - c * base.loss).abs() <= 1e-12 * scaled.loss.abs().max(1.0));
            for (a, b) in scaled.grad.iter().zip(&base.grad) {
                prop_assert!((a - c * b).abs() <= 1e-12 * a.abs().max(1e-12));
            }
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in proptest::collection::vec(-50f64..50.0, 1..10), c in -100f64..100.0,
        ) {
            let p = softmax(&z);
            prop_assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted);
            for (a, b) in p.0.iter().zip(&q.0) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
