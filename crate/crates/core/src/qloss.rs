//! Training objective: mean absolute error plus a λ-weighted pairwise
//! ranking hinge over every ordered pair in the batch.
//!
//! ```text
//! L      = L_mae + λ·L_rank
//! L_mae  = (1/n) Σ_i |ŷ_i − y_i|
//! L_rank = (1/n²) Σ_i Σ_j max(0, |y_i − y_j| − e(y_i, y_j)·(ŷ_i − ŷ_j))
//! e      = +1 if y_i ≥ y_j else −1
//! ```
//!
//! Diagonal pairs are part of the double sum (they contribute zero). Ties in
//! `y` get `e = +1`, so both ordered pairs of a tie penalise any predicted
//! difference. Subgradients at the |·| and hinge kinks are zero.

use thiserror::Error;

use crate::diffcore::{AutodiffError, GradRule, Real, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction length {pred} does not match target length {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("loss needs at least one sample")]
    Empty,
    #[error("lambda must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Weight of the ranking term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self, LossError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(LossError::BadLambda(lambda));
        }
        Ok(Self { lambda })
    }
}

/// e(y_i, y_j): +1 when `y_i ≥ y_j`, −1 otherwise.
pub fn sign_indicator<F: Real>(y_i: F, y_j: F) -> F {
    if y_i >= y_j {
        F::one()
    } else {
        -F::one()
    }
}

/// Hinge argument `|y_i − y_j| − e·(ŷ_i − ŷ_j)` of one ordered pair.
fn hinge_argument<F: Real>(pred_i: F, pred_j: F, y_i: F, y_j: F) -> F {
    (y_i - y_j).abs() - sign_indicator(y_i, y_j) * (pred_i - pred_j)
}

pub fn rank_pair_loss<F: Real>(pred_i: F, pred_j: F, y_i: F, y_j: F) -> F {
    hinge_argument(pred_i, pred_j, y_i, y_j).max(F::zero())
}

fn check_lengths<F: Real>(pred: &[F], target: &[F]) -> Result<(), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// Plain MAE value.
pub fn mae_value<F: Real>(pred: &[F], target: &[F]) -> Result<F, LossError> {
    check_lengths(pred, target)?;
    let total: F = pred.iter().zip(target).map(|(&p, &y)| (p - y).abs()).sum();
    Ok(total / F::from_f64_lossy(pred.len() as f64))
}

/// Plain ranking-loss value. Pairs are accumulated row-major (i outer, j
/// inner) into one running sum, then divided by n².
pub fn rank_value<F: Real>(pred: &[F], target: &[F]) -> Result<F, LossError> {
    check_lengths(pred, target)?;
    let n = pred.len();
    let mut total = F::zero();
    for i in 0..n {
        for j in 0..n {
            total += rank_pair_loss(pred[i], pred[j], target[i], target[j]);
        }
    }
    Ok(total / F::from_f64_lossy((n * n) as f64))
}

struct MaeRule<F> {
    target: Vec<F>,
}

impl<F: Real> GradRule<F> for MaeRule<F> {
    fn name(&self) -> &'static str {
        "mae_loss"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let pred = inputs[0];
        let scale = grad.item() / F::from_f64_lossy(self.target.len() as f64);
        let g = pred
            .data()
            .iter()
            .zip(&self.target)
            .map(|(&p, &y)| {
                let r = p - y;
                if r > F::zero() {
                    scale
                } else if r < F::zero() {
                    -scale
                } else {
                    F::zero()
                }
            })
            .collect();
        vec![Some(Tensor::new(pred.shape().to_vec(), g).expect("shape"))]
    }
}

struct RankRule<F> {
    target: Vec<F>,
}

impl<F: Real> GradRule<F> for RankRule<F> {
    fn name(&self) -> &'static str {
        "rank_loss"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let pred = inputs[0].data();
        let y = &self.target;
        let n = y.len();
        let scale = grad.item() / F::from_f64_lossy((n * n) as f64);
        let mut g = vec![F::zero(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && hinge_argument(pred[i], pred[j], y[i], y[j]) > F::zero() {
                    let e = sign_indicator(y[i], y[j]);
                    g[i] -= e * scale;
                    g[j] += e * scale;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g).expect("shape"))]
    }
}

fn prediction_slice<F: Real>(tape: &Tape<F>, pred: Var, target: &[F]) -> Result<Vec<F>, LossError> {
    let p = tape.value(pred).data().to_vec();
    check_lengths(&p, target)?;
    Ok(p)
}

/// Records L_mae for a vector of predictions against fixed targets.
pub fn mae_loss<F: Real>(tape: &mut Tape<F>, pred: Var, target: &[F]) -> Result<Var, LossError> {
    let p = prediction_slice(tape, pred, target)?;
    let kink = p
        .iter()
        .zip(target)
        .map(|(&a, &b)| (a - b).abs())
        .fold(F::infinity(), |a, b| if b < a { b } else { a });
    tape.note_kink(kink);
    let value = mae_value(&p, target)?;
    Ok(tape.record(
        &[pred],
        Tensor::scalar(value),
        MaeRule {
            target: target.to_vec(),
        },
    ))
}

/// Records L_rank for a vector of predictions against fixed targets.
pub fn rank_loss<F: Real>(tape: &mut Tape<F>, pred: Var, target: &[F]) -> Result<Var, LossError> {
    let p = prediction_slice(tape, pred, target)?;
    let n = p.len();
    let mut kink = F::infinity();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = hinge_argument(p[i], p[j], target[i], target[j]).abs();
                if d < kink {
                    kink = d;
                }
            }
        }
    }
    if n > 1 {
        tape.note_kink(kink);
    }
    let value = rank_value(&p, target)?;
    Ok(tape.record(
        &[pred],
        Tensor::scalar(value),
        RankRule {
            target: target.to_vec(),
        },
    ))
}

/// Recorded loss terms of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub mae: Var,
    pub rank: Var,
}

/// Records `L_mae + λ·L_rank`.
pub fn combined_loss<F: Real>(
    tape: &mut Tape<F>,
    pred: Var,
    target: &[F],
    config: LossConfig,
) -> Result<LossTerms, LossError> {
    let mae = mae_loss(tape, pred, target)?;
    let rank = rank_loss(tape, pred, target)?;
    let weighted = tape.scale(rank, F::from_f64_lossy(config.lambda))?;
    let total = tape.add(mae, weighted)?;
    Ok(LossTerms { total, mae, rank })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn losses(pred: &[f64], target: &[f64], lambda: f64) -> (f64, f64, f64, Vec<f64>) {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::from_vec(pred.to_vec()));
        let terms = combined_loss(&mut tape, p, target, LossConfig::new(lambda).unwrap()).unwrap();
        let g = tape.backward(terms.total).unwrap().get(p).into_data();
        (
            tape.value(terms.total).item(),
            tape.value(terms.mae).item(),
            tape.value(terms.rank).item(),
            g,
        )
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_value(&[0.3, 0.9], &[0.3, 0.9]).unwrap(), 0.0);
        assert!((mae_value::<f64>(&[0.2, 0.8], &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-15);
        let mut tape = Tape::new();
        let p = tape.param(Tensor::from_vec(vec![0.2, 0.8]));
        let l = mae_loss(&mut tape, p, &[0.5, 0.5]).unwrap();
        assert_eq!(tape.backward(l).unwrap().get(p).data(), &[-0.5, 0.5]);
    }

    #[test]
    fn sign_indicator_ties_are_positive() {
        assert_eq!(sign_indicator(0.5, 0.5), 1.0);
        assert_eq!(sign_indicator(0.9, 0.4), 1.0);
        assert_eq!(sign_indicator(0.4, 0.9), -1.0);
    }

    #[test]
    fn rank_pair_examples() {
        assert_eq!(rank_pair_loss(0.3, 0.3, 0.9, 0.9), 0.0);
        assert!((rank_pair_loss::<f64>(0.3, 0.7, 0.9, 0.4) - 0.9).abs() < 1e-15);
        assert_eq!(rank_pair_loss(1.0, 0.2, 0.9, 0.4), 0.0);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_value(&[0.1, 0.7, 0.3], &[0.1, 0.7, 0.3]).unwrap(), 0.0);
        assert!((rank_value::<f64>(&[0.3, 0.7], &[0.9, 0.4]).unwrap() - 0.45).abs() < 1e-12);
        assert_eq!(rank_value(&[5.0], &[0.2]).unwrap(), 0.0);
    }

    #[test]
    fn combined_examples() {
        let (total, mae, rank, _) = losses(&[0.3, 0.7], &[0.9, 0.4], 1.0);
        assert!((mae - 0.45).abs() < 1e-12);
        assert!((rank - 0.45).abs() < 1e-12);
        assert!((total - 0.9).abs() < 1e-12);

        let (total, mae, _, _) = losses(&[0.3, 0.7, 0.1], &[0.9, 0.4, 0.6], 0.0);
        assert_eq!(total, mae);

        let (total, _, _, _) = losses(&[0.3, 0.7], &[0.3, 0.7], 2.5);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn length_mismatch_and_bad_lambda() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::from_vec(vec![0.1, 0.2]));
        assert!(matches!(mae_loss(&mut tape, p, &[0.1]), Err(LossError::LengthMismatch { .. })));
        assert!(matches!(rank_loss(&mut tape, p, &[0.1]), Err(LossError::LengthMismatch { .. })));
        assert!(LossConfig::new(-1.0).is_err());
        assert!(LossConfig::new(f64::NAN).is_err());
    }
}
