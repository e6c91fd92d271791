//! Beam classification loss and cross-modal contrastive alignment.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the alignment term.
    pub beta: f64,
    /// Contrastive temperature.
    pub theta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 0.5, theta: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config("beta must be a finite value ≥ 0".into()));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::Config("theta must be a finite value > 0".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `[B, Q]` logits against labels.
pub fn task_loss(tape: &Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

/// In-batch InfoNCE over every ordered modality pair.
///
/// For pair `(i, j)` the scores are `X̄_i·X̄_jᵀ / θ` and each row's target is
/// its own sample. Row losses are averaged, pair losses are summed and divided
/// by `n(n − 1)`. A single modality has no pairs and gives 0.
pub fn alignment_loss(tape: &Tape, embeddings: &[Var], theta: f64) -> Result<Var> {
    let first = *embeddings.first().ok_or(Error::InsufficientBatch { got: 0 })?;
    let shape = tape.shape(first);
    let batch = shape[0];
    if batch < 2 {
        return Err(Error::InsufficientBatch { got: batch });
    }
    let n = embeddings.len();
    if n < 2 {
        return Ok(tape.constant(crate::autodiff::Tensor::scalar(0.0)));
    }
    let targets: Vec<usize> = (0..batch).collect();
    let cubes = embeddings
        .iter()
        .map(|&x| {
            let s = tape.shape(x);
            if s != shape {
                return Err(Error::dim("alignment_loss", &shape, &s));
            }
            tape.reshape(x, vec![1, s[0], s[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total: Option<Var> = None;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let scores = tape.batch_matmul(cubes[i], cubes[j], true)?;
            let scores = tape.reshape(tape.scale(scores, 1.0 / theta), vec![batch, batch])?;
            let l = tape.cross_entropy(scores, &targets)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
    }
    let total = total.expect("at least one pair");
    Ok(tape.scale(total, 1.0 / (n * (n - 1)) as f64))
}

/// `L = L_task + β·L_align`; with β = 0 the task loss is returned untouched.
pub fn total_loss(tape: &Tape, task: Var, align: Var, cfg: &LossConfig) -> Result<Var> {
    if cfg.beta == 0.0 {
        return Ok(task);
    }
    tape.add(task, tape.scale(align, cfg.beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients_many, Tensor};
    use crate::rng::LabRng;
    use rand::{Rng, SeedableRng};

    fn value(tape: &Tape, v: Var) -> f64 {
        tape.value(v).data()[0]
    }

    fn unit_rows(rng: &mut LabRng, rows: usize, dim: usize) -> Tensor {
        let mut data = Vec::new();
        for _ in 0..rows {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            data.extend(v.iter().map(|x| x / n));
        }
        Tensor::new(vec![rows, dim], data).unwrap()
    }

    fn align(mods: &[Tensor], theta: f64) -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = mods.iter().map(|t| tape.constant(t.clone())).collect();
        let l = alignment_loss(&tape, &vars, theta)?;
        Ok(value(&tape, l))
    }

    #[test]
    fn two_sample_orthogonal_fixture() {
        let x = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let l = align(&[x.clone(), x], 1.0).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn identical_batch_gives_log_batch_size() {
        let row = [0.6, 0.8];
        let x = Tensor::from_rows(&[&row, &row, &row, &row, &row]).unwrap();
        let l = align(&[x.clone(), x.clone(), x], 0.1).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smaller_temperature_sharpens_a_dominant_diagonal() {
        let mut rng = LabRng::seed_from_u64(1);
        let a = unit_rows(&mut rng, 4, 8);
        let mods = [a.clone(), a];
        let mut last = f64::INFINITY;
        for theta in [2.0, 1.0, 0.5, 0.1] {
            let l = align(&mods, theta).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let x = Tensor::from_rows(&[&[1.0, 0.0]]).unwrap();
        assert_eq!(align(&[x.clone(), x], 0.1), Err(Error::InsufficientBatch { got: 1 }));
    }

    #[test]
    fn single_modality_has_no_alignment_term() {
        let x = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(align(&[x], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn matches_a_scalar_recomputation() {
        let mut rng = LabRng::seed_from_u64(2);
        let mods: Vec<Tensor> = (0..3).map(|_| unit_rows(&mut rng, 5, 6)).collect();
        let theta = 0.3;
        let mut total = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mut pair = 0.0;
                for r in 0..5 {
                    let s: Vec<f64> = (0..5)
                        .map(|c| mods[i].row(r).iter().zip(mods[j].row(c)).map(|(a, b)| a * b).sum::<f64>() / theta)
                        .collect();
                    let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
                    pair += lse - s[r];
                }
                total += pair / 5.0;
            }
        }
        total /= 6.0;
        assert!((align(&mods, theta).unwrap() - total).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_a_shared_batch_permutation() {
        let mut rng = LabRng::seed_from_u64(3);
        let mods: Vec<Tensor> = (0..4).map(|_| unit_rows(&mut rng, 6, 4)).collect();
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted: Vec<Tensor> = mods
            .iter()
            .map(|t| Tensor::new(vec![6, 4], perm.iter().flat_map(|&r| t.row(r).to_vec()).collect()).unwrap())
            .collect();
        let (a, b) = (align(&mods, 0.1).unwrap(), align(&permuted, 0.1).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn closer_pairs_lower_the_loss() {
        // x₂ rotates towards x₁ sample by sample; the off-diagonal similarities stay fixed at 0
        let x1 = Tensor::from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]).unwrap();
        let mut last = f64::INFINITY;
        for angle in [1.2f64, 0.8, 0.4, 0.0] {
            let (c, s) = (angle.cos(), angle.sin());
            let x2 = Tensor::from_rows(&[&[c, 0.0, s, 0.0], &[0.0, c, 0.0, s]]).unwrap();
            let l = align(&[x1.clone(), x2], 0.5).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn task_loss_cases() {
        let tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(&[3, 32]));
        let l = task_loss(&tape, uniform, &[0, 5, 31]).unwrap();
        assert!((value(&tape, l) - 32f64.ln()).abs() < 1e-12);
        let mut sharp = Tensor::zeros(&[1, 4]);
        sharp.data_mut()[2] = 800.0;
        let s = tape.constant(sharp);
        assert!(value(&tape, task_loss(&tape, s, &[2]).unwrap()) < 1e-300);
        let logits = tape.constant(Tensor::from_rows(&[&[0.2, -1.0, 0.7], &[1.5, 0.3, -0.4]]).unwrap());
        let l = value(&tape, task_loss(&tape, logits, &[2, 1]).unwrap());
        let row = |r: [f64; 3], y: usize| r.iter().map(|v| v.exp()).sum::<f64>().ln() - r[y];
        let expected = (row([0.2, -1.0, 0.7], 2) + row([1.5, 0.3, -0.4], 1)) / 2.0;
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape = Tape::new();
        let (a, b) = (tape.constant(Tensor::scalar(2.0)), tape.constant(Tensor::scalar(3.0)));
        let cfg = LossConfig { beta: 1.0, theta: 0.1 };
        assert_eq!(value(&tape, total_loss(&tape, a, b, &cfg).unwrap()), 5.0);
        let zero = LossConfig { beta: 0.0, theta: 0.1 };
        let l = total_loss(&tape, a, b, &zero).unwrap();
        assert_eq!(l.index(), a.index());
        assert!(LossConfig { beta: -1.0, theta: 0.1 }.validate().is_err());
        assert!(LossConfig { beta: 0.0, theta: 0.0 }.validate().is_err());
    }

    #[test]
    fn alignment_gradients_match_finite_differences() {
        let mut rng = LabRng::seed_from_u64(4);
        let raw: Vec<Tensor> = (0..3)
            .map(|_| Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let err = check_gradients_many(
            |tape, vars| {
                let norm = vars
                    .iter()
                    .map(|&v| tape.l2_normalize_rows(v, 1e-12))
                    .collect::<Result<Vec<_>>>()?;
                alignment_loss(tape, &norm, 0.2)
            },
            &raw,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
