use std::path::{Path, PathBuf};

use acoustic_sim::{RoomSpec, SignalKind};
use classical_multilat::{RobustLoss, SolverConfig};
use serde::{Deserialize, Serialize};
use ssl_model::{ModelConfig, Scenario, TrainConfig};

use crate::error::{HarnessError, HarnessResult};

/// Version of the experiment config file schema.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Default output directory when neither the config nor a flag sets one.
pub const OUTPUT_DIR_ENV: &str = "SSL3D_OUTPUT_DIR";

/// The classical pipeline needs this many known-position microphones.
pub const MIN_MULTILAT_MICS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Neural,
    Multilat,
    MultilatRobust,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Neural, Method::Multilat, Method::MultilatRobust];

    pub fn name(self) -> &'static str {
        match self {
            Method::Neural => "neural",
            Method::Multilat => "multilat",
            Method::MultilatRobust => "multilat_robust",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Serializable knobs of the classical solver. The robust method uses the
/// same values with a Huber loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub tol: f64,
    /// Huber threshold in seconds; absent means twice the assumed delay noise.
    pub huber_delta: Option<f64>,
    pub initializations: usize,
    pub reference_id: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            max_iterations: base.max_iterations,
            tol: base.tol,
            huber_delta: None,
            initializations: base.initializations,
            reference_id: 0,
        }
    }
}

impl SolverSettings {
    pub fn solver_config(&self, robust: bool, seed: u64) -> SolverConfig {
        SolverConfig {
            max_iterations: self.max_iterations,
            tol: self.tol,
            robust_loss: if robust { RobustLoss::Huber } else { RobustLoss::None },
            huber_delta: self.huber_delta,
            initializations: self.initializations,
            seed,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Scene layouts, signals and sensor noise.
    pub data: u64,
    /// Parameter initialization. Shuffling and masks use `train.seed`.
    pub model: u64,
    /// Bootstrap resampling and solver restarts.
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 1,
            model: 2,
            eval: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub scenario: Scenario,
    /// Microphones per scene (M).
    pub num_mics: usize,
    /// Sources per scene (K).
    pub num_sources: usize,
    /// Microphones with unknown position (U).
    pub num_faulty: usize,
    /// Scenes are laid out with this many microphones and the first
    /// `num_mics` are kept, so runs that differ only in M share sources and
    /// microphone subsets. Defaults to `num_mics`.
    pub layout_mics: Option<usize>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub signal_len: usize,
    pub signal_kind: SignalKind,
    pub noise_std: f64,
    pub room: RoomSpec,
    pub seeds: Seeds,
    pub methods: Vec<Method>,
    pub output_dir: Option<PathBuf>,
    pub bootstrap_resamples: usize,
    /// Boundary counts as correct.
    pub acc_threshold_cm: f64,
    /// Abort when more than this fraction of a method's trials fail.
    pub max_failure_rate: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            scenario: Scenario::Default,
            num_mics: 8,
            num_sources: 1,
            num_faulty: 0,
            layout_mics: None,
            train_scenes: 512,
            val_scenes: 64,
            test_scenes: 128,
            signal_len: 4096,
            signal_kind: SignalKind::WhiteNoise,
            noise_std: 1e-3,
            room: RoomSpec::default(),
            seeds: Seeds::default(),
            methods: vec![Method::Neural, Method::Multilat, Method::MultilatRobust],
            output_dir: None,
            bootstrap_resamples: 1000,
            acc_threshold_cm: 30.0,
            max_failure_rate: 0.2,
            model: ModelConfig {
                embed_dim: 32,
                num_heads: 4,
                num_blocks: 2,
                num_decoder_blocks: 1,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> HarnessResult<Self> {
        let value: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("config: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_integer()) {
            Some(v) if v == CONFIG_FORMAT_VERSION as i64 => {}
            Some(v) => {
                return Err(HarnessError::Config(format!(
                    "config format_version {v} is not supported (expected {CONFIG_FORMAT_VERSION})"
                )))
            }
            None => return Err(HarnessError::Config("config lacks format_version".into())),
        }
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> HarnessResult<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn layout_mic_count(&self) -> usize {
        self.layout_mics.unwrap_or(self.num_mics)
    }

    /// Model hyperparameters with the scene's source count filled in.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_sources: self.num_sources,
            ..self.model.clone()
        }
    }

    /// Output directory: the config value, else `$SSL3D_OUTPUT_DIR`, else `ssl3d-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ssl3d-out"))
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return bad(format!("format_version must be {CONFIG_FORMAT_VERSION}"));
        }
        if self.num_mics < 2 {
            return bad(format!("num_mics {} must be at least 2", self.num_mics));
        }
        if self.layout_mic_count() < self.num_mics {
            return bad(format!("layout_mics {} is below num_mics {}", self.layout_mic_count(), self.num_mics));
        }
        if self.num_sources == 0 {
            return bad("num_sources must be at least 1".into());
        }
        match self.scenario {
            Scenario::FaultyMicSceneA | Scenario::FaultyMicSceneB if self.num_faulty == 0 => {
                return bad(format!("scenario {} needs num_faulty >= 1", self.scenario));
            }
            Scenario::Default | Scenario::UnknownSourceSignal | Scenario::MultiSource if self.num_faulty != 0 => {
                return bad(format!("scenario {} has no faulty microphones", self.scenario));
            }
            Scenario::MultiSource if self.num_sources < 2 => {
                return bad("multi_source needs num_sources >= 2".into());
            }
            Scenario::Default | Scenario::UnknownSourceSignal | Scenario::FaultyMicSceneA | Scenario::FaultyMicSceneB
                if self.num_sources != 1 =>
            {
                return bad(format!("scenario {} has exactly one source", self.scenario));
            }
            _ => {}
        }
        if self.num_faulty >= self.num_mics {
            return bad(format!("num_faulty {} leaves no known microphone", self.num_faulty));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return bad("methods listed twice".into());
        }
        if !(self.acc_threshold_cm.is_finite() && self.acc_threshold_cm >= 0.0) {
            return bad("acc_threshold_cm must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate must lie in [0, 1]".into());
        }
        let classical = self.methods.iter().any(|m| *m != Method::Neural);
        if classical {
            self.solver
                .solver_config(true, 0)
                .validate()
                .map_err(|e| HarnessError::Config(format!("solver: {e}")))?;
            if self.num_sources != 1 {
                return bad("the multilat methods localize a single source".into());
            }
            if self.scenario == Scenario::FaultyMicSceneB {
                return bad("the multilat methods do not estimate microphone positions (scene B)".into());
            }
            if self.num_mics - self.num_faulty < MIN_MULTILAT_MICS {
                return bad(format!(
                    "the multilat methods need at least {MIN_MULTILAT_MICS} known-position microphones"
                ));
            }
        }
        if self.methods.contains(&Method::Neural) {
            if self.train_scenes == 0 {
                return bad("the neural method needs train_scenes >= 1".into());
            }
            self.model_config().validate()?;
            self.train.validate()?;
        }
        self.room.validate()?;
        if self.signal_len <= self.room.max_lag_samples() {
            return bad(format!(
                "signal_len {} must exceed the room's largest lag of {} samples",
                self.signal_len,
                self.room.max_lag_samples()
            ));
        }
        Ok(())
    }
}
