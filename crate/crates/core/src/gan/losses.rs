//! Least-squares adversarial criteria and the feature-matching loss.
//!
//! Plain-value versions are used for reporting; the `*_on_tape` versions
//! build the same expressions on a [`Tape`] for training.

use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::scalar::Real;

fn mean_sq_offset<T: Real>(scores: &[T], target: T) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: T = scores.iter().map(|&s| (s - target) * (s - target)).sum();
    Ok(total / T::of(scores.len() as f64))
}

/// Discriminator criterion: `½ mean((s_real − 1)²) + ½ mean(s_fake²)`.
pub fn loss_v<T: Real>(scores_real: &[T], scores_fake: &[T]) -> Result<T> {
    let half = T::of(0.5);
    Ok(half * mean_sq_offset(scores_real, T::one())? + half * mean_sq_offset(scores_fake, T::zero())?)
}

/// Generator adversarial criterion: `½ mean((s_fake − 1)²)`.
pub fn loss_u<T: Real>(scores_fake: &[T]) -> Result<T> {
    Ok(T::of(0.5) * mean_sq_offset(scores_fake, T::one())?)
}

/// Feature-matching loss `Σ_l w_l ‖D_l(c) − D_l(ĉ)‖²`, averaged over the
/// batch axis.
pub fn loss_i<T: Real>(
    features_target: &[Tensor<T>],
    features_fake: &[Tensor<T>],
    weights: &[f64],
) -> Result<T> {
    check_feature_sets(features_target.len(), features_fake.len(), weights.len())?;
    let mut total = T::zero();
    let mut batch = 1;
    for ((t, f), &w) in features_target.iter().zip(features_fake).zip(weights) {
        if t.shape() != f.shape() {
            return Err(Error::ShapeMismatch(format!(
                "feature shapes {:?} vs {:?}",
                t.shape(),
                f.shape()
            )));
        }
        batch = t.batch().max(1);
        if w == 0.0 {
            continue;
        }
        let d: T = t
            .data()
            .iter()
            .zip(f.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        total = total + T::of(w) * d;
    }
    Ok(total / T::of(batch as f64))
}

fn check_feature_sets(target: usize, fake: usize, weights: usize) -> Result<()> {
    if target != fake || target != weights {
        return Err(Error::ShapeMismatch(format!(
            "{target} target features, {fake} generated features, {weights} weights"
        )));
    }
    Ok(())
}

fn mean_sq_offset_on_tape<T: Real>(tape: &mut Tape<T>, scores: Var, target: T) -> Result<Var> {
    let n = tape.value(scores)?.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let shifted = tape.add_scalar(scores, -target)?;
    let sq = tape.square(shifted)?;
    let total = tape.sum(sq)?;
    tape.scale(total, T::one() / T::of(n as f64))
}

pub fn loss_v_on_tape<T: Real>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    let a = mean_sq_offset_on_tape(tape, real, T::one())?;
    let b = mean_sq_offset_on_tape(tape, fake, T::zero())?;
    let sum = tape.add(a, b)?;
    tape.scale(sum, T::of(0.5))
}

pub fn loss_u_on_tape<T: Real>(tape: &mut Tape<T>, fake: Var) -> Result<Var> {
    let m = mean_sq_offset_on_tape(tape, fake, T::one())?;
    tape.scale(m, T::of(0.5))
}

/// Feature matching against constant target features. Returns `None` when
/// every weight is zero.
pub fn loss_i_on_tape<T: Real>(
    tape: &mut Tape<T>,
    targets: &[Tensor<T>],
    fakes: &[Var],
    weights: &[f64],
) -> Result<Option<Var>> {
    check_feature_sets(targets.len(), fakes.len(), weights.len())?;
    let mut total: Option<Var> = None;
    let mut batch = 1;
    for ((t, &f), &w) in targets.iter().zip(fakes).zip(weights) {
        batch = t.batch().max(1);
        if w == 0.0 {
            continue;
        }
        let d = tape.sum_squared_diff(f, t)?;
        let d = tape.scale(d, T::of(w))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    total
        .map(|v| tape.scale(v, T::one() / T::of(batch as f64)))
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminator_criterion_values() {
        assert_eq!(loss_v(&[1.0f64, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((loss_v(&[0.5f64], &[0.5]).unwrap() - 0.25).abs() <= 1e-12);
        assert!((loss_v(&[0.0f64], &[1.0]).unwrap() - 1.0).abs() <= 1e-12);
        assert!(matches!(loss_v::<f64>(&[], &[1.0]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn generator_criterion_values() {
        assert_eq!(loss_u(&[1.0f64]).unwrap(), 0.0);
        assert!((loss_u(&[0.0f64]).unwrap() - 0.5).abs() <= 1e-12);
        assert!((loss_u(&[0.0f64, 1.0]).unwrap() - 0.25).abs() <= 1e-12);
        assert!(matches!(loss_u::<f64>(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn feature_matching_values() {
        let a0 = Tensor::new([1, 1, 2], vec![1.0f64, 2.0]).unwrap();
        let b0 = Tensor::new([1, 1, 2], vec![5.0f64, -2.0]).unwrap();
        let a1 = Tensor::new([1, 2, 1], vec![0.5f64, 1.5]).unwrap();
        let b1 = Tensor::new([1, 2, 1], vec![1.5f64, -0.5]).unwrap();
        let same = [a0.clone(), a1.clone()];
        assert_eq!(loss_i(&same, &same, &[1.0, 1.0]).unwrap(), 0.0);
        let other = [b0, b1];
        assert_eq!(loss_i(&same, &other, &[0.0, 0.0]).unwrap(), 0.0);
        // layer 1 only: (0.5 - 1.5)² + (1.5 + 0.5)² = 1 + 4
        assert!((loss_i(&same, &other, &[0.0, 1.0]).unwrap() - 5.0).abs() <= 1e-12);
        assert!(loss_i(&same, &other[..1], &[0.0]).is_err());
    }

    #[test]
    fn tape_versions_agree_with_plain_values() {
        let mut tape = Tape::<f64>::new();
        let real = tape.constant(Tensor::new([3, 1, 1], vec![0.9, 0.2, 1.4]).unwrap());
        let fake = tape.constant(Tensor::new([3, 1, 1], vec![0.1, -0.3, 0.6]).unwrap());
        let v = loss_v_on_tape(&mut tape, real, fake).unwrap();
        let u = loss_u_on_tape(&mut tape, fake).unwrap();
        let want_v = loss_v(&[0.9, 0.2, 1.4], &[0.1, -0.3, 0.6]).unwrap();
        let want_u = loss_u(&[0.1, -0.3, 0.6]).unwrap();
        assert!((tape.value(v).unwrap().data()[0] - want_v).abs() <= 1e-12);
        assert!((tape.value(u).unwrap().data()[0] - want_u).abs() <= 1e-12);

        let t = Tensor::new([2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = Tensor::new([2, 1, 2], vec![0.0, 2.0, 3.0, 2.0]).unwrap();
        let fv = tape.constant(f.clone());
        let i = loss_i_on_tape(&mut tape, std::slice::from_ref(&t), &[fv], &[2.0])
            .unwrap()
            .unwrap();
        let want_i = loss_i(&[t], &[f], &[2.0]).unwrap();
        assert!((tape.value(i).unwrap().data()[0] - want_i).abs() <= 1e-12);
    }
}
