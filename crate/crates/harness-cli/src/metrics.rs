use acoustic_sim::{distance, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, HarnessResult};

fn check_counts(predictions: &[Vec3], truths: &[Vec3]) -> HarnessResult<()> {
    if predictions.len() != truths.len() {
        return Err(HarnessError::Experiment(format!(
            "{} predictions against {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    Ok(())
}

/// Euclidean error in centimeters, rounded to whole nanometers so that unit
/// conversion cannot push an error across the accuracy threshold.
pub fn error_cm(prediction: &Vec3, truth: &Vec3) -> f64 {
    (distance(prediction, truth) * 1e9).round() / 1e7
}

/// Mean of `values`, summed in order.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean Euclidean error in centimeters.
pub fn compute_mae(predictions: &[Vec3], truths: &[Vec3]) -> HarnessResult<f64> {
    check_counts(predictions, truths)?;
    let errors: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| error_cm(p, t)).collect();
    Ok(mean(&errors))
}

/// Percentage of errors at or below `threshold_cm`.
pub fn acc_from_errors(errors_cm: &[f64], threshold_cm: f64) -> f64 {
    let hits = errors_cm.iter().filter(|e| **e <= threshold_cm).count();
    100.0 * hits as f64 / errors_cm.len() as f64
}

/// Percentage of predictions within `threshold_cm` of the truth, boundary
/// included.
pub fn compute_acc_at(predictions: &[Vec3], truths: &[Vec3], threshold_cm: f64) -> HarnessResult<f64> {
    check_counts(predictions, truths)?;
    let errors: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| error_cm(p, t)).collect();
    Ok(acc_from_errors(&errors, threshold_cm))
}

/// Standard deviation of `statistic` over `resamples` bootstrap resamples of
/// `values` (sampling with replacement, same size). Zero when fewer than two
/// values or no resamples.
pub fn bootstrap_std(values: &[f64], resamples: usize, seed: u64, statistic: impl Fn(&[f64]) -> f64) -> f64 {
    if values.len() < 2 || resamples == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; values.len()];
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            statistic(&buf)
        })
        .collect();
    let m = mean(&stats);
    (stats.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / stats.len() as f64).sqrt()
}
