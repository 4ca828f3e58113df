use acoustic_sim::Vec3;
use autodiff_core::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::model::{ForwardPass, Prediction};
use crate::tokens::SceneInput;

/// Sources are matched to targets by exhaustive search; `K!` stays small.
pub const MAX_MATCHED_SOURCES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sound: f64,
    pub mloc: f64,
    pub sloc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total = (lambda_sound sound + lambda_mloc mloc) + lambda_sloc sloc`,
    /// in exactly the order the tape evaluates it.
    pub fn combine(sound: f64, mloc: f64, sloc: f64, config: &ModelConfig) -> Self {
        let total = (config.lambda_sound * sound + config.lambda_mloc * mloc) + config.lambda_sloc * sloc;
        Self { sound, mloc, sloc, total }
    }
}

/// All orderings of `0..k`, lexicographic.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum()
}

/// Squared-distance discrepancy over every predicted-source/known-microphone
/// pair and every pair of predicted sources. `pred[k]` is compared with
/// `truth[k]`.
pub fn source_localization_loss(pred: &[Vec3], truth: &[Vec3], known_mics: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let mut row = 0.0;
        for r in known_mics {
            row += (sq_dist(p, r) - sq_dist(t, r)).abs();
        }
        total += row;
    }
    for k in 0..pred.len() {
        for l in k + 1..pred.len() {
            total += (sq_dist(&pred[k], &pred[l]) - sq_dist(&truth[k], &truth[l])).abs();
        }
    }
    total
}

fn check_matchable(pred: usize, truth: usize) -> ModelResult<()> {
    if pred != truth {
        return Err(ModelError::Contract(format!(
            "{pred} predicted sources against {truth} targets"
        )));
    }
    if pred > MAX_MATCHED_SOURCES {
        return Err(ModelError::Config(format!(
            "{pred} sources exceed the matching limit of {MAX_MATCHED_SOURCES}"
        )));
    }
    Ok(())
}

fn best_permutation(k: usize, cost: impl Fn(&[usize]) -> f64) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::INFINITY);
    for perm in permutations(k) {
        let c = cost(&perm);
        // strict comparison keeps the first (identity-most) ordering on ties
        if c < best.1 || best.0.is_empty() {
            best = (perm, c);
        }
    }
    best
}

/// Target order minimizing [`source_localization_loss`]; `perm[k]` is the
/// target matched to prediction `k`.
pub fn best_source_permutation(
    pred: &[Vec3],
    truth: &[Vec3],
    known_mics: &[Vec3],
) -> ModelResult<(Vec<usize>, f64)> {
    check_matchable(pred.len(), truth.len())?;
    Ok(best_permutation(pred.len(), |perm| {
        let reordered: Vec<Vec3> = perm.iter().map(|j| truth[*j]).collect();
        source_localization_loss(pred, &reordered, known_mics)
    }))
}

/// Target order minimizing the summed Euclidean error.
pub fn match_by_distance(pred: &[Vec3], truth: &[Vec3]) -> ModelResult<Vec<usize>> {
    check_matchable(pred.len(), truth.len())?;
    Ok(best_permutation(pred.len(), |perm| {
        pred.iter().zip(perm).map(|(p, j)| sq_dist(p, &truth[*j]).sqrt()).sum()
    })
    .0)
}

struct Targets {
    audio: Vec<Vec<f64>>,
    mic_positions: Vec<Vec3>,
    source_positions: Vec<Vec3>,
    known_mics: Vec<Vec3>,
}

fn mic_index(scene: &SceneInput, id: usize) -> ModelResult<usize> {
    scene
        .mics
        .iter()
        .position(|m| m.id == id)
        .ok_or_else(|| ModelError::Contract(format!("no microphone with id {id}")))
}

fn targets(scene: &SceneInput, audio_rows: &[usize], mic_rows: &[usize], source_rows: &[usize]) -> Targets {
    Targets {
        audio: audio_rows.iter().map(|i| scene.mics[*i].audio.clone()).collect(),
        mic_positions: mic_rows.iter().map(|i| scene.mics[*i].position).collect(),
        source_positions: source_rows.iter().map(|k| scene.sources[*k].position).collect(),
        known_mics: (0..scene.mics.len())
            .filter(|i| !mic_rows.contains(i))
            .map(|i| scene.mics[i].position)
            .collect(),
    }
}

/// Reference evaluation of the training objective on plain values.
pub fn total_loss(pred: &Prediction, scene: &SceneInput, config: &ModelConfig) -> ModelResult<LossBreakdown> {
    let audio_rows = pred.audio_ids.iter().map(|id| mic_index(scene, *id)).collect::<ModelResult<Vec<_>>>()?;
    let mic_rows = pred.mic_ids.iter().map(|id| mic_index(scene, *id)).collect::<ModelResult<Vec<_>>>()?;
    let source_rows = scene.predicted_sources();
    if pred.source_ids.len() != source_rows.len()
        || pred.source_ids.iter().zip(&source_rows).any(|(id, k)| scene.sources[*k].id != *id)
    {
        return Err(ModelError::Contract("predicted sources differ from the scene's unknown sources".into()));
    }
    if pred.reconstructed_audio.len() != audio_rows.len() || pred.mic_positions.len() != mic_rows.len() {
        return Err(ModelError::Contract("prediction rows differ from their id lists".into()));
    }
    let t = targets(scene, &audio_rows, &mic_rows, &source_rows);

    let mut sound = 0.0;
    for (p, s) in pred.reconstructed_audio.iter().zip(&t.audio) {
        if p.len() != s.len() {
            return Err(ModelError::Shape(format!("{} reconstructed samples against {}", p.len(), s.len())));
        }
        sound += p.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let mloc: f64 = pred.mic_positions.iter().zip(&t.mic_positions).map(|(p, r)| sq_dist(p, r)).sum();
    let (_, sloc) = if source_rows.is_empty() {
        (Vec::new(), 0.0)
    } else {
        best_source_permutation(&pred.source_positions, &t.source_positions, &t.known_mics)?
    };
    Ok(LossBreakdown::combine(sound, mloc, sloc, config))
}

/// The training objective recorded on `tape`. The source permutation is
/// chosen from the current values and held fixed for differentiation.
pub fn loss_on_tape(
    tape: &mut Tape,
    pass: &ForwardPass,
    scene: &SceneInput,
    config: &ModelConfig,
) -> ModelResult<(Var, LossBreakdown)> {
    let t = targets(scene, &pass.audio_rows, &pass.mic_rows, &pass.source_rows);
    let zero = tape.constant(Tensor::scalar(0.0))?;

    let sound = match pass.audio {
        Some(audio) => {
            let target = tape.constant(Tensor::from_rows(&t.audio)?)?;
            let diff = tape.sub(audio, target)?;
            let sq = tape.square(diff)?;
            tape.sum(sq)?
        }
        None => zero,
    };
    let mloc = match pass.mic_positions {
        Some(pos) => {
            let rows: Vec<Vec<f64>> = t.mic_positions.iter().map(|p| p.to_vec()).collect();
            let target = tape.constant(Tensor::from_rows(&rows)?)?;
            let diff = tape.sub(pos, target)?;
            let sq = tape.square(diff)?;
            tape.sum(sq)?
        }
        None => zero,
    };
    let sloc = match pass.source_positions {
        Some(src) => {
            let values = tape.value(src);
            let pred: Vec<Vec3> = (0..values.rows()).map(|r| [values.get(r, 0), values.get(r, 1), values.get(r, 2)]).collect();
            let (perm, _) = best_source_permutation(&pred, &t.source_positions, &t.known_mics)?;
            let truth: Vec<Vec3> = perm.iter().map(|j| t.source_positions[*j]).collect();
            sloc_on_tape(tape, src, &truth, &t.known_mics)?
        }
        None => zero,
    };

    let a = tape.scale(sound, config.lambda_sound)?;
    let b = tape.scale(mloc, config.lambda_mloc)?;
    let c = tape.scale(sloc, config.lambda_sloc)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    let breakdown = LossBreakdown {
        sound: tape.value(sound).item(),
        mloc: tape.value(mloc).item(),
        sloc: tape.value(sloc).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

fn sloc_on_tape(tape: &mut Tape, src: Var, truth: &[Vec3], known_mics: &[Vec3]) -> ModelResult<Var> {
    let k = truth.len();
    let rows: Vec<Var> = (0..k).map(|i| tape.slice_rows(src, i, i + 1)).collect::<Result<_, _>>()?;
    let mut total: Option<Var> = None;
    let mut push = |tape: &mut Tape, term: Var| -> ModelResult<()> {
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        Ok(())
    };
    if !known_mics.is_empty() {
        let neg = Tensor::from_fn(known_mics.len(), 3, |r, c| -known_mics[r][c]);
        let neg = tape.constant(neg)?;
        for (row, t) in rows.iter().zip(truth) {
            let diff = tape.add_row(neg, *row)?;
            let sq = tape.square(diff)?;
            let d2 = tape.row_sums(sq)?;
            let target = tape.constant(Tensor::from_fn(known_mics.len(), 1, |r, _| sq_dist(t, &known_mics[r])))?;
            let err = tape.sub(d2, target)?;
            let err = tape.abs(err)?;
            let term = tape.sum(err)?;
            push(tape, term)?;
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            let diff = tape.sub(rows[a], rows[b])?;
            let sq = tape.square(diff)?;
            let d2 = tape.sum(sq)?;
            let err = tape.add_scalar(d2, -sq_dist(&truth[a], &truth[b]))?;
            let term = tape.abs(err)?;
            push(tape, term)?;
        }
    }
    match total {
        Some(v) => Ok(v),
        None => Ok(tape.constant(Tensor::scalar(0.0))?),
    }
}
