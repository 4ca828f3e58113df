use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use acoustic_sim::{SceneRecording, Vec3};
use classical_multilat::{localize_pipeline, PipelineConfig};
use serde::{Deserialize, Serialize};
use ssl_model::{evaluation_loss, match_by_distance, train, InputSpec, SceneInput, SslModel, TrainReport};

use crate::config::{ExperimentConfig, Method};
use crate::dataset::{load_or_generate, Split};
use crate::error::{HarnessError, HarnessResult};
use crate::report::{build_report, MetricsReport};

/// Version of the manifest and per-trial record layout.
pub const RESULTS_FORMAT_VERSION: u32 = 1;

pub const RECORDS_FILE: &str = "trials.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_JSONL_FILE: &str = "report.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Source,
    FaultyMic,
}

/// One localized target of one test scene under one method. A failed trial
/// has one record per expected target with no prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub target: TargetKind,
    pub target_id: usize,
    pub prediction: Option<Vec3>,
    pub truth: Vec3,
    pub failure: Option<String>,
}

/// Where the model comes from in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelSource {
    /// Trained inside the run from the config's train split and seeds.
    Trained,
    Checkpoint { path: PathBuf },
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub model_source: Option<ModelSource>,
    /// Directory holding stored splits, if they were read from disk.
    pub data_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("manifest: {e}")))?;
        if m.format_version != RESULTS_FORMAT_VERSION {
            return Err(HarnessError::Config(format!(
                "manifest format_version {} is not supported",
                m.format_version
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub records: Vec<TrialRecord>,
    pub train_report: Option<TrainReport>,
    pub manifest: Manifest,
}

/// Options that are not part of the experiment definition.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Write files; off for in-memory runs.
    pub write_outputs: bool,
}

fn input_spec(config: &ExperimentConfig) -> InputSpec {
    InputSpec {
        num_mics: config.num_mics,
        signal_len: config.signal_len,
        room: config.room.clone(),
    }
}

pub fn scene_inputs(model: &SslModel, config: &ExperimentConfig, data: &[SceneRecording]) -> HarnessResult<Vec<SceneInput>> {
    data.iter()
        .map(|r| Ok(SceneInput::from_recording(r, config.scenario, model.encoder(), model.config())?))
        .collect()
}

/// Builds and trains the neural model on the train split.
pub fn train_model(
    config: &ExperimentConfig,
    data_dir: Option<&Path>,
    log: Option<&mut dyn Write>,
) -> HarnessResult<(SslModel, TrainReport)> {
    config.validate()?;
    let mut model = SslModel::new(config.model_config(), input_spec(config), config.seeds.model)?;
    let train_data = load_or_generate(config, Split::Train, data_dir)?;
    let train_set = scene_inputs(&model, config, &train_data)?;
    drop(train_data);
    log::info!("training on {} scenes for {} epochs", train_set.len(), config.train.epochs);
    let report = train(&mut model, &train_set, &config.train, log)?;
    if config.val_scenes > 0 {
        let val = scene_inputs(&model, config, &load_or_generate(config, Split::Val, data_dir)?)?;
        log::info!("validation loss {:.4}", evaluation_loss(&model, &val)?.total);
    }
    Ok((model, report))
}

fn targets_of(config: &ExperimentConfig, method: Method, rec: &SceneRecording) -> Vec<(TargetKind, usize, Vec3)> {
    let scene = &rec.scene;
    let mut out = Vec::new();
    if !config.scenario.source_position_known() {
        out.extend(scene.sources.iter().map(|s| (TargetKind::Source, s.id, s.position)));
    }
    if method == Method::Neural {
        out.extend(
            scene
                .mics
                .iter()
                .filter(|m| !m.known_position)
                .map(|m| (TargetKind::FaultyMic, m.id, m.position)),
        );
    }
    out
}

fn neural_trial(model: &SslModel, config: &ExperimentConfig, rec: &SceneRecording) -> HarnessResult<Vec<(TargetKind, usize, Vec3)>> {
    let input = SceneInput::from_recording(rec, config.scenario, model.encoder(), model.config())?;
    let pred = model.infer(&input)?;
    let mut out = Vec::new();
    if !pred.source_positions.is_empty() {
        let truths: Vec<Vec3> = pred
            .source_ids
            .iter()
            .map(|id| rec.scene.sources.iter().find(|s| s.id == *id).map(|s| s.position))
            .collect::<Option<_>>()
            .ok_or_else(|| HarnessError::Experiment("prediction names an unknown source".into()))?;
        let perm = match_by_distance(&pred.source_positions, &truths)?;
        for (p, j) in pred.source_positions.iter().zip(&perm) {
            out.push((TargetKind::Source, pred.source_ids[*j], *p));
        }
    }
    for (id, p) in pred.mic_ids.iter().zip(&pred.mic_positions) {
        out.push((TargetKind::FaultyMic, *id, *p));
    }
    Ok(out)
}

fn multilat_trial(config: &ExperimentConfig, rec: &SceneRecording, robust: bool, trial: usize) -> HarnessResult<Vec<(TargetKind, usize, Vec3)>> {
    let pipeline = PipelineConfig {
        reference_id: config.solver.reference_id,
        solver: config.solver.solver_config(robust, config.seeds.eval ^ trial as u64),
    };
    let result = localize_pipeline(rec, &pipeline)?;
    Ok(vec![(TargetKind::Source, rec.scene.sources[0].id, result.position)])
}

/// Runs one method over the test split. Failures become failed trials.
pub fn evaluate_method(
    method: Method,
    config: &ExperimentConfig,
    model: Option<&SslModel>,
    test: &[SceneRecording],
) -> HarnessResult<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for (trial, rec) in test.iter().enumerate() {
        let expected = targets_of(config, method, rec);
        let outcome = match method {
            Method::Neural => {
                let model = model.ok_or_else(|| HarnessError::Config("the neural method needs a model".into()))?;
                neural_trial(model, config, rec)
            }
            Method::Multilat => multilat_trial(config, rec, false, trial),
            Method::MultilatRobust => multilat_trial(config, rec, true, trial),
        };
        match outcome {
            Ok(preds) => {
                for (kind, id, truth) in &expected {
                    let prediction = preds.iter().find(|(k, i, _)| k == kind && i == id).map(|(_, _, p)| *p);
                    records.push(TrialRecord {
                        trial,
                        method,
                        target: *kind,
                        target_id: *id,
                        prediction,
                        truth: *truth,
                        failure: prediction.is_none().then(|| "target not predicted".to_string()),
                    });
                }
            }
            Err(e) => {
                log::warn!("{method} failed on trial {trial}: {e}");
                records.extend(expected.iter().map(|(kind, id, truth)| TrialRecord {
                    trial,
                    method,
                    target: *kind,
                    target_id: *id,
                    prediction: None,
                    truth: *truth,
                    failure: Some(e.to_string()),
                }));
            }
        }
    }
    Ok(records)
}

fn failure_rate(records: &[TrialRecord], method: Method) -> (usize, usize) {
    let mut trials: Vec<(usize, bool)> = Vec::new();
    for r in records.iter().filter(|r| r.method == method) {
        match trials.last_mut() {
            Some((t, failed)) if *t == r.trial => *failed |= r.prediction.is_none(),
            _ => trials.push((r.trial, r.prediction.is_none())),
        }
    }
    (trials.iter().filter(|(_, f)| *f).count(), trials.len())
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> HarnessResult<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| HarnessError::Experiment(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_records(path: &Path) -> HarnessResult<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> HarnessResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Experiment(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

/// Generates or loads data, trains the neural model if requested (or loads
/// `options.checkpoint`), evaluates every method on the shared test split and
/// writes records, report and manifest.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> HarnessResult<ExperimentOutcome> {
    config.validate()?;
    if config.test_scenes == 0 {
        return Err(HarnessError::EmptyReport);
    }
    let start = Instant::now();
    let out_dir = options.output_dir.clone().unwrap_or_else(|| config.resolved_output_dir());
    if options.write_outputs {
        std::fs::create_dir_all(&out_dir).map_err(|e| HarnessError::io(&out_dir, e))?;
    }
    let data_dir = options.data_dir.as_deref();

    let mut model_source = None;
    let mut train_report = None;
    let model = if config.methods.contains(&Method::Neural) {
        let model = match &options.checkpoint {
            Some(path) => {
                let (model, _) = SslModel::load(path)?;
                if model.config() != &config.model_config() || model.input_spec() != &input_spec(config) {
                    return Err(HarnessError::Config(format!(
                        "checkpoint {} was built for a different model or input shape",
                        path.display()
                    )));
                }
                model_source = Some(ModelSource::Checkpoint { path: path.clone() });
                model
            }
            None => {
                let log_path = out_dir.join(TRAIN_LOG_FILE);
                let mut log_file = if options.write_outputs {
                    Some(BufWriter::new(File::create(&log_path).map_err(|e| HarnessError::io(&log_path, e))?))
                } else {
                    None
                };
                let (model, report) = train_model(config, data_dir, log_file.as_mut().map(|f| f as &mut dyn Write))?;
                if let Some(mut f) = log_file {
                    f.flush().map_err(|e| HarnessError::io(&log_path, e))?;
                }
                if options.write_outputs {
                    let meta = serde_json::json!({ "train_report": &report });
                    model.save(out_dir.join(CHECKPOINT_FILE), meta)?;
                }
                train_report = Some(report);
                model_source = Some(ModelSource::Trained);
                model
            }
        };
        Some(model)
    } else {
        None
    };

    let test = load_or_generate(config, Split::Test, data_dir)?;
    let mut records = Vec::new();
    for method in &config.methods {
        log::info!("evaluating {method} on {} scenes", test.len());
        records.extend(evaluate_method(*method, config, model.as_ref(), &test)?);
    }
    let manifest = Manifest {
        format_version: RESULTS_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        model_source,
        data_dir: options.data_dir.clone(),
    };
    if options.write_outputs {
        write_records(&out_dir.join(RECORDS_FILE), &records)?;
        write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    }
    for method in &config.methods {
        let (failed, total) = failure_rate(&records, *method);
        if failed as f64 > config.max_failure_rate * total as f64 {
            return Err(HarnessError::Experiment(format!(
                "{method} failed on {failed} of {total} trials (limit {:.0}%); see {}",
                config.max_failure_rate * 100.0,
                out_dir.join(RECORDS_FILE).display()
            )));
        }
    }
    let mut report = build_report(&records, config.acc_threshold_cm, config.bootstrap_resamples, config.seeds.eval)?;
    report.runtime_s = start.elapsed().as_secs_f64();
    if options.write_outputs {
        crate::report::write_report(&report, &out_dir.join(REPORT_CSV_FILE), crate::report::Format::Csv)?;
        crate::report::write_report(&report, &out_dir.join(REPORT_JSONL_FILE), crate::report::Format::JsonLines)?;
    }
    Ok(ExperimentOutcome {
        report,
        records,
        train_report,
        manifest,
    })
}

/// Reruns the experiment a manifest describes.
pub fn rerun_manifest(manifest: &Manifest, output_dir: Option<PathBuf>, write_outputs: bool) -> HarnessResult<ExperimentOutcome> {
    let options = RunOptions {
        output_dir,
        data_dir: manifest.data_dir.clone(),
        checkpoint: match &manifest.model_source {
            Some(ModelSource::Checkpoint { path }) => Some(path.clone()),
            _ => None,
        },
        write_outputs,
    };
    run_experiment(&manifest.config, &options)
}
