use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::Params;
use super::train::{batch_gradient, Prepared, WeightedExample};
use super::{CharReward, Model, Seq2SeqError, TrainPair};
use crate::scalar::Scalar;

/// Which training objective to differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Cross-entropy against each pair's target.
    CrossEntropy,
    /// Reward-weighted likelihood treating each pair's target as the
    /// hypothesis; one reward vector per pair.
    Weighted(Vec<CharReward>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Gradients whose magnitude is below this are compared in absolute terms:
/// central differences on an O(10) loss carry ~1e-11 of round-off, which
/// would otherwise dominate the relative error of near-zero entries.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

/// Central-difference step balancing round-off (~1e-13 on the summed loss,
/// amplified by 1/epsilon) against O(epsilon^2) truncation.
pub const DEFAULT_EPSILON: f64 = 5e-4;

impl<S: Scalar> Model<S> {
    fn prepare_objective(
        &self,
        batch: &[TrainPair],
        objective: &Objective,
    ) -> Result<Vec<Prepared<S>>, Seq2SeqError> {
        match objective {
            Objective::CrossEntropy => batch.iter().map(|p| self.prepare_supervised(p)).collect(),
            Objective::Weighted(rewards) => {
                if rewards.len() != batch.len() {
                    return Err(Seq2SeqError::LengthMismatch {
                        reward: rewards.len(),
                        hypothesis: batch.len(),
                    });
                }
                batch
                    .iter()
                    .zip(rewards)
                    .map(|(p, r)| {
                        let ex = WeightedExample {
                            sources: p.sources.clone(),
                            hypothesis: p.target.clone(),
                            reward: r.clone(),
                        };
                        self.prepare_weighted(&ex)
                    })
                    .collect()
            }
        }
    }

    /// Mean batch loss and its analytic gradient.
    pub fn gradient(
        &self,
        batch: &[TrainPair],
        objective: &Objective,
    ) -> Result<(S, Params<S>), Seq2SeqError> {
        if batch.is_empty() {
            return Err(Seq2SeqError::EmptyCorpus);
        }
        let data = self.prepare_objective(batch, objective)?;
        let refs: Vec<&Prepared<S>> = data.iter().collect();
        Ok(batch_gradient(&self.params, &refs))
    }
}

/// Compares analytic gradients with central finite differences on `samples`
/// randomly chosen parameters.
pub fn grad_check<S: Scalar>(
    model: &Model<S>,
    batch: &[TrainPair],
    objective: &Objective,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, Seq2SeqError> {
    let (_, analytic) = model.gradient(batch, objective)?;
    let data = model.prepare_objective(batch, objective)?;
    let refs: Vec<&Prepared<S>> = data.iter().collect();
    let analytic_flat: Vec<f64> = analytic
        .tensors()
        .iter()
        .flat_map(|(_, _, t)| t.iter().map(|x| x.to_f64_lossy()))
        .collect();
    let total = analytic_flat.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, samples.min(total));

    let mut probe = model.params.clone();
    let mut worst: f64 = 0.0;
    for index in picks.iter() {
        let original = read_flat(&probe, index);
        write_flat(&mut probe, index, original + S::from_f64_lossy(epsilon));
        let plus = batch_gradient_loss(&probe, &refs);
        write_flat(&mut probe, index, original - S::from_f64_lossy(epsilon));
        let minus = batch_gradient_loss(&probe, &refs);
        write_flat(&mut probe, index, original);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic_flat[index];
        let scale = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked: picks.len(),
    })
}

fn batch_gradient_loss<S: Scalar>(params: &Params<S>, batch: &[&Prepared<S>]) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    batch
        .iter()
        .map(|ex| {
            super::network::forward_backward(
                params,
                &ex.sources,
                &ex.target,
                &ex.weights,
                S::one(),
                None,
            )
            .to_f64_lossy()
        })
        .sum::<f64>()
        * scale
}

fn locate<S: Scalar>(params: &Params<S>, mut index: usize) -> (usize, usize) {
    for (t, (_, _, data)) in params.tensors().iter().enumerate() {
        if index < data.len() {
            return (t, index);
        }
        index -= data.len();
    }
    panic!("parameter index out of range");
}

fn read_flat<S: Scalar>(params: &Params<S>, index: usize) -> S {
    let (t, i) = locate(params, index);
    params.tensors()[t].2[i]
}

fn write_flat<S: Scalar>(params: &mut Params<S>, index: usize, value: S) {
    let (t, i) = locate(params, index);
    params.tensors_mut()[t][i] = value;
}
