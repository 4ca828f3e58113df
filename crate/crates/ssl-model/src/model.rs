use std::path::Path;

use acoustic_sim::Vec3;
use autodiff_core::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use dsp_features::{FilterBank, PerFilterAggregate};
use serde::{Deserialize, Serialize};

use crate::audio::FrozenAudioEncoder;
use crate::config::{InputSpec, ModelConfig};
use crate::error::{ModelError, ModelResult};
use crate::layers::{Attention, Block, Init, LayerNorm, Linear, Mlp2};
use crate::tokens::{SceneInput, TokenMask};

pub const PROJECTION_PARAM: &str = "audio_encoder.projection";
pub const FILTER_WEIGHTS_PARAM: &str = "tdoa.filter_weights";

#[derive(Debug, Clone)]
struct Params {
    filter_weights: ParamId,
    position_encoder: Mlp2,
    tdoa_encoder: Linear,
    cross_attention: Attention,
    fuse_norm: LayerNorm,
    sparse_attention: Attention,
    mask_audio: ParamId,
    mask_position: ParamId,
    source_queries: ParamId,
    encoder_blocks: Vec<Block>,
    decoder_blocks: Vec<Block>,
    decoder_norm: LayerNorm,
    output_attention: Attention,
    audio_inverse: Mlp2,
    position_decoder: Mlp2,
}

/// Three-stream localizer. All learnable state lives in one [`ParamStore`];
/// the frozen audio projection is stored there too, marked non-trainable.
#[derive(Debug, Clone)]
pub struct SslModel {
    config: ModelConfig,
    input: InputSpec,
    store: ParamStore,
    encoder: FrozenAudioEncoder,
    bank: FilterBank,
    params: Params,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Indices into `scene.sources` with a predicted position, in row order.
    pub source_rows: Vec<usize>,
    /// `source_rows.len() x 3`, meters.
    pub source_positions: Option<Var>,
    /// Indices into `scene.mics` with a predicted position, in row order.
    pub mic_rows: Vec<usize>,
    pub mic_positions: Option<Var>,
    /// Indices into `scene.mics` whose audio is reconstructed, in row order.
    pub audio_rows: Vec<usize>,
    /// `audio_rows.len() x signal_len`.
    pub audio: Option<Var>,
    /// Decoder output, one row per token (microphones first, then sources).
    pub s_hat_emb: Var,
    /// `s_hat_emb` fused with the TDOA embedding.
    pub r_hat_emb: Var,
    pub r_emb: Var,
    /// Leaf holding each microphone's audio embedding; masked ones are never read.
    pub audio_leaves: Vec<Var>,
    /// Leaf holding each microphone's normalized position; masked ones are never read.
    pub position_leaves: Vec<Var>,
}

/// Network outputs in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source_ids: Vec<usize>,
    pub source_positions: Vec<Vec3>,
    pub mic_ids: Vec<usize>,
    pub mic_positions: Vec<Vec3>,
    pub audio_ids: Vec<usize>,
    #[serde(skip)]
    pub reconstructed_audio: Vec<Vec<f64>>,
    #[serde(skip)]
    pub s_hat_emb: Vec<Vec<f64>>,
    #[serde(skip)]
    pub r_hat_emb: Vec<Vec<f64>>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn vec3_rows(t: &Tensor) -> Vec<Vec3> {
    (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)]).collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    input: InputSpec,
    #[serde(default)]
    extra: serde_json::Value,
}

impl SslModel {
    pub fn new(config: ModelConfig, input: InputSpec, seed: u64) -> ModelResult<Self> {
        config.validate()?;
        input.validate(&config)?;
        let encoder = FrozenAudioEncoder::new(&config)?;
        let bank = FilterBank::mel(config.num_filters, input.room.sample_rate)?;
        let d = config.embed_dim;
        let hidden = d * config.mlp_ratio;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        init.store.add(
            PROJECTION_PARAM,
            Tensor::matrix(d, config.stft_bins(), encoder.projection().to_vec())?,
            false,
        )?;
        let filter_weights = init.full(FILTER_WEIGHTS_PARAM, 1, config.num_filters, 1.0 / config.num_filters as f64)?;
        let position_encoder = Mlp2::new(&mut init, "position_encoder", 3, d, d)?;
        let tdoa_encoder = Linear::new(&mut init, "tdoa_encoder", input.feature_len(), d)?;
        let cross_attention = Attention::new(&mut init, "cross_attention", d, config.num_heads)?;
        let fuse_norm = LayerNorm::new(&mut init, "fuse_norm", d)?;
        let sparse_attention = Attention::new(&mut init, "sparse_attention", d, config.num_heads)?;
        let embed_scale = 1.0 / (d as f64).sqrt();
        let mask_audio = init.uniform("mask.audio", 1, d, embed_scale)?;
        let mask_position = init.uniform("mask.position", 1, d, embed_scale)?;
        let source_queries = init.uniform("source_queries", config.num_sources, d, embed_scale)?;
        let encoder_blocks = (0..config.num_blocks)
            .map(|l| Block::new(&mut init, &format!("encoder.{l}"), d, config.num_heads, hidden))
            .collect::<ModelResult<Vec<_>>>()?;
        let decoder_blocks = (0..config.num_decoder_blocks)
            .map(|l| Block::new(&mut init, &format!("decoder.{l}"), d, config.num_heads, hidden))
            .collect::<ModelResult<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(&mut init, "decoder_norm", d)?;
        let output_attention = Attention::new(&mut init, "output_attention", d, config.num_heads)?;
        let audio_inverse = Mlp2::with_zero_head(&mut init, "audio_inverse", d, d, input.signal_len)?;
        let position_decoder = Mlp2::with_zero_head(&mut init, "position_decoder", d, d, 3)?;
        let params = Params {
            filter_weights,
            position_encoder,
            tdoa_encoder,
            cross_attention,
            fuse_norm,
            sparse_attention,
            mask_audio,
            mask_position,
            source_queries,
            encoder_blocks,
            decoder_blocks,
            decoder_norm,
            output_attention,
            audio_inverse,
            position_decoder,
        };
        Ok(Self {
            config,
            input,
            store,
            encoder,
            bank,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.input
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &FrozenAudioEncoder {
        &self.encoder
    }

    pub fn filter_bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> ModelResult<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            input: self.input.clone(),
            extra,
        };
        let meta = serde_json::to_value(meta).map_err(|e| ModelError::Config(e.to_string()))?;
        save_checkpoint(path, &self.store, &meta)?;
        Ok(())
    }

    /// Rebuilds a model from a checkpoint written by [`SslModel::save`].
    pub fn load(path: impl AsRef<Path>) -> ModelResult<(Self, serde_json::Value)> {
        let (store, meta) = load_checkpoint(path)?;
        let meta: CheckpointMeta =
            serde_json::from_value(meta).map_err(|e| ModelError::Config(format!("checkpoint metadata: {e}")))?;
        let mut model = Self::new(meta.config, meta.input, 0)?;
        if store.len() != model.store.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} parameters, model has {}",
                store.len(),
                model.store.len()
            )));
        }
        for ((_, a), (_, b)) in store.iter().zip(model.store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() || a.requires_grad != b.requires_grad {
                return Err(ModelError::Config(format!(
                    "checkpoint parameter `{}` {:?} does not match `{}` {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        model.encoder = FrozenAudioEncoder::with_projection(
            &model.config,
            store.value(store.id(PROJECTION_PARAM)?).data().to_vec(),
        )?;
        model.store = store;
        Ok((model, meta.extra))
    }

    fn check_scene(&self, scene: &SceneInput, mask: &TokenMask) -> ModelResult<()> {
        if scene.mics.len() != self.input.num_mics {
            return Err(ModelError::Config(format!(
                "scene has {} microphones; the model was built for {}",
                scene.mics.len(),
                self.input.num_mics
            )));
        }
        if scene.sources.len() != self.config.num_sources {
            return Err(ModelError::Config(format!(
                "scene has {} sources; the model was built for {}",
                scene.sources.len(),
                self.config.num_sources
            )));
        }
        let d = self.config.embed_dim;
        for m in &scene.mics {
            if m.embedding.len() != d || m.audio.len() != self.input.signal_len {
                return Err(ModelError::Shape(format!(
                    "microphone {} has a {}-dim embedding and {} samples; expected {d} and {}",
                    m.id,
                    m.embedding.len(),
                    m.audio.len(),
                    self.input.signal_len
                )));
            }
        }
        if scene.sources.iter().any(|s| s.embedding.len() != d) {
            return Err(ModelError::Shape("source embedding width".into()));
        }
        if mask.audio_masked.len() != scene.mics.len() || mask.position_masked.len() != scene.mics.len() {
            return Err(ModelError::Shape("mask length differs from microphone count".into()));
        }
        if scene.mics.iter().zip(&mask.position_masked).any(|(m, masked)| !m.position_known && !masked) {
            return Err(ModelError::Contract("a microphone with unknown position is not masked".into()));
        }
        Ok(())
    }

    /// Per-filter TDOA aggregate over the microphones whose audio is visible.
    pub fn tdoa_rows(&self, scene: &SceneInput, mask: &TokenMask) -> ModelResult<Tensor> {
        let visible: Vec<usize> = (0..scene.mics.len()).filter(|i| !mask.audio_masked[*i]).collect();
        let channels: Vec<&[f64]> = visible.iter().map(|i| scene.mics[*i].audio.as_slice()).collect();
        let ids: Vec<usize> = visible.iter().map(|i| scene.mics[*i].id).collect();
        let agg = PerFilterAggregate::from_pair_weights(
            &channels,
            &ids,
            &self.bank,
            self.input.tau_max(),
            &scene.pair_weights,
            self.config.alpha,
            self.config.aggregate_mode.into(),
        )?;
        Ok(Tensor::from_rows(&agg.rows)?)
    }

    /// Learned filter combination `w^T rows`, a `1 x L` weighted TDOA feature.
    pub fn weighted_tdoa(&self, tape: &mut Tape, rows: Var) -> ModelResult<Var> {
        let w = tape.param(self.params.filter_weights);
        Ok(tape.matmul(w, rows)?)
    }

    /// Pre-activation of the one-layer TDOA encoder.
    pub fn tdoa_preactivation(&self, tape: &mut Tape, f_w: Var) -> ModelResult<Var> {
        self.params.tdoa_encoder.forward(tape, f_w)
    }

    /// `r_emb = gelu(W f_w + b)`.
    pub fn encode_tdoa(&self, tape: &mut Tape, f_w: Var) -> ModelResult<Var> {
        let pre = self.tdoa_preactivation(tape, f_w)?;
        Ok(tape.gelu(pre)?)
    }

    /// Two-layer MLP on normalized coordinates, one row per position.
    pub fn encode_position(&self, tape: &mut Tape, normalized: Var) -> ModelResult<Var> {
        self.params.position_encoder.forward(tape, normalized)
    }

    pub fn cross_attention(&self, tape: &mut Tape, s_emb: Var, p_emb: Var) -> ModelResult<Var> {
        self.params.cross_attention.forward(tape, s_emb, p_emb, None)
    }

    /// `layer_norm(s_emb + f_a2p)`.
    pub fn fuse_residual(&self, tape: &mut Tape, f_a2p: Var, s_emb: Var) -> ModelResult<Var> {
        let sum = tape.add(s_emb, f_a2p)?;
        self.params.fuse_norm.forward(tape, sum)
    }

    pub fn sparse_cross_attention(&self, tape: &mut Tape, queries: Var, keys: Var, top_t: usize) -> ModelResult<Var> {
        self.params.sparse_attention.forward(tape, queries, keys, Some(top_t))
    }

    /// Encoder blocks then decoder blocks and a final norm, one output row per
    /// token. Both reconstruction heads read this output.
    pub fn masked_encode_decode(&self, tape: &mut Tape, joint: Var) -> ModelResult<Var> {
        let mut x = joint;
        for b in self.params.encoder_blocks.iter().chain(&self.params.decoder_blocks) {
            x = b.forward(tape, x)?;
        }
        self.params.decoder_norm.forward(tape, x)
    }

    fn to_meters(&self, tape: &mut Tape, normalized: Var) -> ModelResult<Var> {
        let rows = tape.shape(normalized).0;
        let h = self.input.half_extent();
        let c = self.input.center();
        let half = tape.constant(Tensor::from_fn(rows, 3, |_, k| h[k]))?;
        let center = tape.constant(Tensor::row(c.to_vec()))?;
        let scaled = tape.mul(normalized, half)?;
        Ok(tape.add_row(scaled, center)?)
    }

    /// Full forward pass. With `track_inputs`, microphone embeddings and
    /// positions become gradient-tracked leaves so their gradients can be
    /// inspected.
    pub fn forward(
        &self,
        tape: &mut Tape,
        scene: &SceneInput,
        mask: &TokenMask,
        track_inputs: bool,
    ) -> ModelResult<ForwardPass> {
        self.check_scene(scene, mask)?;
        let p = &self.params;
        let d = self.config.embed_dim;
        let n_mics = scene.mics.len();
        let n_tokens = scene.num_tokens();

        // acoustic stream
        let mask_audio = tape.param(p.mask_audio);
        let mut audio_leaves = Vec::with_capacity(n_mics);
        let mut s_rows = Vec::with_capacity(n_tokens);
        for (i, m) in scene.mics.iter().enumerate() {
            let leaf = tape.input(Tensor::row(m.embedding.clone()), track_inputs)?;
            audio_leaves.push(leaf);
            s_rows.push(if mask.audio_masked[i] { mask_audio } else { leaf });
        }
        for s in &scene.sources {
            s_rows.push(if s.signal_known {
                tape.constant(Tensor::row(s.embedding.clone()))?
            } else {
                mask_audio
            });
        }
        let s_emb = tape.concat_rows(&s_rows)?;

        // coordinate stream: positions
        let mut position_leaves = Vec::with_capacity(n_mics);
        let mut visible = Vec::new();
        let mut slot = vec![None; n_tokens];
        for (i, m) in scene.mics.iter().enumerate() {
            let leaf = tape.input(Tensor::row(self.input.normalize(&m.position).to_vec()), track_inputs)?;
            position_leaves.push(leaf);
            if !mask.position_masked[i] {
                slot[i] = Some(visible.len());
                visible.push(leaf);
            }
        }
        for (k, s) in scene.sources.iter().enumerate() {
            if s.position_known {
                slot[n_mics + k] = Some(visible.len());
                visible.push(tape.constant(Tensor::row(self.input.normalize(&s.position).to_vec()))?);
            }
        }
        let mask_position = tape.param(p.mask_position);
        let encoded = if visible.is_empty() {
            None
        } else {
            let stacked = tape.concat_rows(&visible)?;
            Some(self.encode_position(tape, stacked)?)
        };
        let mut p_rows = Vec::with_capacity(n_tokens);
        for s in &slot {
            p_rows.push(match (s, encoded) {
                (Some(j), Some(e)) => tape.slice_rows(e, *j, j + 1)?,
                _ => mask_position,
            });
        }
        let p_emb = tape.concat_rows(&p_rows)?;

        // coordinate stream: TDOA
        let rows = tape.constant(self.tdoa_rows(scene, mask)?)?;
        let f_w = self.weighted_tdoa(tape, rows)?;
        let r_emb = self.encode_tdoa(tape, f_w)?;

        // joint stream
        let f_a2p = self.cross_attention(tape, s_emb, p_emb)?;
        let f_fuse = self.fuse_residual(tape, f_a2p, s_emb)?;
        let with_tdoa = self.sparse_cross_attention(tape, f_fuse, r_emb, self.config.top_t)?;
        let joint = tape.add(f_fuse, with_tdoa)?;
        let mut joint = tape.add(joint, p_emb)?;
        if !scene.sources.is_empty() {
            let queries = tape.param(p.source_queries);
            let marks = if n_mics == 0 {
                queries
            } else {
                let zeros = tape.constant(Tensor::zeros(n_mics, d))?;
                tape.concat_rows(&[zeros, queries])?
            };
            joint = tape.add(joint, marks)?;
        }
        let decoded = self.masked_encode_decode(tape, joint)?;

        // output heads
        let s_hat_emb = decoded;
        let fused = p.output_attention.forward(tape, decoded, r_emb, Some(self.config.top_t))?;
        let r_hat_emb = tape.add(decoded, fused)?;

        let source_rows = scene.predicted_sources();
        let mic_rows = mask.position_masked_mics();
        let audio_rows = mask.audio_masked_mics();
        let mut position_tokens: Vec<usize> = mic_rows.clone();
        position_tokens.extend(source_rows.iter().map(|k| n_mics + k));
        let (mut mic_positions, mut source_positions) = (None, None);
        if !position_tokens.is_empty() {
            let picked = tape.gather_rows(r_hat_emb, &position_tokens)?;
            let normalized = p.position_decoder.forward(tape, picked)?;
            let meters = self.to_meters(tape, normalized)?;
            if !mic_rows.is_empty() {
                mic_positions = Some(tape.slice_rows(meters, 0, mic_rows.len())?);
            }
            if !source_rows.is_empty() {
                source_positions = Some(tape.slice_rows(meters, mic_rows.len(), position_tokens.len())?);
            }
        }
        let audio = if audio_rows.is_empty() {
            None
        } else {
            let picked = tape.gather_rows(s_hat_emb, &audio_rows)?;
            Some(p.audio_inverse.forward(tape, picked)?)
        };

        Ok(ForwardPass {
            source_rows,
            source_positions,
            mic_rows,
            mic_positions,
            audio_rows,
            audio,
            s_hat_emb,
            r_hat_emb,
            r_emb,
            audio_leaves,
            position_leaves,
        })
    }

    /// Reads a forward pass off its tape.
    pub fn prediction(&self, tape: &Tape, scene: &SceneInput, pass: &ForwardPass) -> Prediction {
        let n_mics = scene.mics.len();
        Prediction {
            source_ids: pass.source_rows.iter().map(|k| scene.sources[*k].id).collect(),
            source_positions: pass.source_positions.map_or_else(Vec::new, |v| vec3_rows(tape.value(v))),
            mic_ids: pass.mic_rows.iter().map(|i| scene.mics[*i].id).collect(),
            mic_positions: pass.mic_positions.map_or_else(Vec::new, |v| vec3_rows(tape.value(v))),
            audio_ids: pass.audio_rows.iter().map(|i| scene.mics[*i].id).collect(),
            reconstructed_audio: pass.audio.map_or_else(Vec::new, |v| rows_of(tape.value(v))),
            s_hat_emb: rows_of(tape.value(pass.s_hat_emb)),
            r_hat_emb: {
                let all = rows_of(tape.value(pass.r_hat_emb));
                debug_assert_eq!(all.len(), n_mics + scene.sources.len());
                all
            },
        }
    }

    /// Forward pass with only the scenario masks; parameters are not touched.
    pub fn infer(&self, scene: &SceneInput) -> ModelResult<Prediction> {
        let mask = TokenMask::scenario_only(scene);
        let mut tape = Tape::new(&self.store);
        let pass = self.forward(&mut tape, scene, &mask, false)?;
        Ok(self.prediction(&tape, scene, &pass))
    }
}
