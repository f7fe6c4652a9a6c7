//! End-to-end model: behavior and position encoders, adaptive GCN,
//! linear attention, residual decoder.
//!
//! All network inputs are relative (distances, displacements, offsets),
//! so predictions are equivariant to rigid translation of a scene; the
//! absolute anchor enters only when decoded displacements are
//! accumulated from the last observed target position.

use autodiff::{Tape, Tensor, Var};

use crate::behavior::{behavior_tensor, BehaviorConfig, BehaviorTensor, Standardizer, BEHAVIOR_DIM};
use crate::centrality::{K_MAX_DEFAULT, KATZ_ALPHA_FRAC_DEFAULT, KATZ_BETA_DEFAULT};
use crate::error::{MftrajError, Result};
use crate::graph::{build_graph, DEFAULT_RADIUS_M};
use crate::nn::attention::{linear_attention, AttentionParams};
use crate::nn::decoder::{decode_displacements, DecoderParams};
use crate::nn::gcn::{
    adaptive_gcn_layer, normalized_adjacency, plain_gcn_layer, GcnLayerParams, PlainGcnLayerParams,
};
use crate::nn::rnn::{gru_encode, lstm_encode, GruCellParams, LstmParams};
use crate::nn::vrnn::{vrnn_step, VrnnParams};
use crate::nn::{Binder, ParamSet};
use crate::rng::rng_for;
use crate::scene::{Point, TrajectoryScene};

pub const GCN_LAYERS: usize = 3;

/// Every knob of the model and its training recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    // horizons
    pub history_frames: usize,
    pub future_frames: usize,
    pub sample_rate_hz: f64,
    // graph features
    pub radius_m: f64,
    pub k_max: usize,
    pub katz_alpha_frac: f64,
    pub katz_beta: f64,
    pub instantaneous_degree: bool,
    // network dimensions
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub attention_heads: usize,
    pub proj_dim: usize,
    pub gn_groups: usize,
    pub n_max: usize,
    // training recipe
    pub learning_rate: f64,
    pub late_learning_rate: f64,
    pub lr_switch_frac: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta_kl: f64,
    pub workers: usize,
    // ablation switches (models A, B, C/D, E of the ablation matrix)
    pub disable_behavior: bool,
    pub absolute_coords: bool,
    pub disable_interaction: bool,
    pub disable_linformer: bool,
    pub plain_gcn: bool,
    pub drop_all_agents: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_frames: 20,
            future_frames: 30,
            sample_rate_hz: 10.0,
            radius_m: DEFAULT_RADIUS_M,
            k_max: K_MAX_DEFAULT,
            katz_alpha_frac: KATZ_ALPHA_FRAC_DEFAULT,
            katz_beta: KATZ_BETA_DEFAULT,
            instantaneous_degree: false,
            hidden_dim: 128,
            latent_dim: 32,
            attention_heads: 4,
            proj_dim: 32,
            gn_groups: 8,
            n_max: 64,
            learning_rate: 1e-3,
            late_learning_rate: 1e-4,
            lr_switch_frac: 0.75,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            beta_kl: 0.0,
            workers: 1,
            disable_behavior: false,
            absolute_coords: false,
            disable_interaction: false,
            disable_linformer: false,
            plain_gcn: false,
            drop_all_agents: false,
        }
    }
}

impl ModelConfig {
    /// Width of the fused per-agent feature entering the interaction
    /// stage: both encoder hiddens, or one when the behavior branch is
    /// ablated away.
    pub fn fused_width(&self) -> usize {
        if self.disable_behavior {
            self.hidden_dim
        } else {
            2 * self.hidden_dim
        }
    }

    pub fn behavior_config(&self) -> BehaviorConfig {
        BehaviorConfig {
            k_max: self.k_max,
            katz_alpha_frac: self.katz_alpha_frac,
            katz_beta: self.katz_beta,
            instantaneous_degree: self.instantaneous_degree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("history_frames", self.history_frames),
            ("future_frames", self.future_frames),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("attention_heads", self.attention_heads),
            ("proj_dim", self.proj_dim),
            ("gn_groups", self.gn_groups),
            ("n_max", self.n_max),
            ("batch_size", self.batch_size),
            ("k_max", self.k_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MftrajError::Config(format!("{} must be positive", name)));
            }
        }
        if self.sample_rate_hz <= 0.0 || self.radius_m <= 0.0 {
            return Err(MftrajError::Config(
                "sample_rate_hz and radius_m must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct BehaviorEncoder {
    vrnn: VrnnParams,
    gru: GruCellParams,
}

enum Interaction {
    Adaptive(Vec<GcnLayerParams>),
    Plain(Vec<PlainGcnLayerParams>),
    None,
}

struct Architecture {
    behavior: Option<BehaviorEncoder>,
    position_lstm: LstmParams,
    interaction: Interaction,
    attention: Option<AttentionParams>,
    decoder: DecoderParams,
}

/// The assembled model: configuration, learned parameters, and the
/// frozen feature-standardization statistics.
pub struct MfTrajModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub standardizer: Standardizer,
    arch: Architecture,
}

impl MfTrajModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = rng_for(config.seed, "init");
        let hidden = config.hidden_dim;
        let fused = config.fused_width();

        let behavior = if config.disable_behavior {
            None
        } else {
            Some(BehaviorEncoder {
                vrnn: VrnnParams::new(
                    &mut params,
                    &mut rng,
                    "behavior.vrnn",
                    BEHAVIOR_DIM,
                    hidden,
                    config.latent_dim,
                ),
                gru: GruCellParams::new(&mut params, &mut rng, "behavior.gru", hidden, hidden),
            })
        };

        // per-frame input: own displacement + pooled relative offset
        let position_lstm = LstmParams::new(&mut params, &mut rng, "position.lstm", 4, hidden, 2);

        let interaction = if config.disable_interaction {
            Interaction::None
        } else if config.plain_gcn {
            Interaction::Plain(
                (0..GCN_LAYERS)
                    .map(|l| PlainGcnLayerParams::new(&mut params, &mut rng, &format!("gcn.{l}"), fused))
                    .collect(),
            )
        } else {
            Interaction::Adaptive(
                (0..GCN_LAYERS)
                    .map(|l| GcnLayerParams::new(&mut params, &mut rng, &format!("gcn.{l}"), fused))
                    .collect(),
            )
        };

        let attention = if config.disable_interaction || config.disable_linformer {
            None
        } else {
            Some(AttentionParams::new(
                &mut params,
                &mut rng,
                "attn",
                fused,
                config.attention_heads,
                config.proj_dim,
                config.n_max,
            )?)
        };

        let decoder = DecoderParams::new(
            &mut params,
            &mut rng,
            "decoder",
            fused,
            config.gn_groups,
            config.future_frames,
        )?;

        Ok(Self {
            config,
            params,
            standardizer: Standardizer::identity(),
            arch: Architecture {
                behavior,
                position_lstm,
                interaction,
                attention,
                decoder,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.total_scalars()
    }

    /// Fits the behavior-feature standardizer on the training split.
    /// No-op when the behavior branch is disabled.
    pub fn fit_standardizer(&mut self, scenes: &[TrajectoryScene]) -> Result<()> {
        if self.config.disable_behavior {
            return Ok(());
        }
        let cfg = self.config.behavior_config();
        let tensors: Result<Vec<BehaviorTensor>> = scenes
            .iter()
            .map(|s| behavior_tensor(s, self.config.radius_m, &cfg))
            .collect();
        self.standardizer = Standardizer::fit(&tensors?);
        Ok(())
    }

    /// Precomputes every network input for one scene. Features do not
    /// depend on parameters, so training reuses prepared scenes across
    /// epochs.
    pub fn prepare(&self, scene: &TrajectoryScene) -> Result<PreparedScene> {
        scene.validate()?;
        if scene.history_len() != self.config.history_frames {
            return Err(MftrajError::Config(format!(
                "scene '{}' has {} history frames, model expects {}",
                scene.scene_id,
                scene.history_len(),
                self.config.history_frames
            )));
        }
        for p in &scene.target_history {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(MftrajError::Input(format!(
                    "scene '{}' has unimputed gaps in the target history",
                    scene.scene_id
                )));
            }
        }

        let behavior_std = if self.config.disable_behavior {
            None
        } else {
            let raw = behavior_tensor(scene, self.config.radius_m, &self.config.behavior_config())?;
            Some(self.standardizer.apply(&raw))
        };

        let pos = position_features(scene);

        // agents participating in the interaction stage: valid at the
        // last observed frame, target first
        let t_last = scene.history_len() - 1;
        let mut interaction = vec![0usize];
        for (a, track) in scene.agent_histories.iter().enumerate() {
            if track.valid[t_last] {
                interaction.push(a + 1);
            }
        }

        let last_positions = scene.positions_at(t_last);
        let n = interaction.len();
        let mut rel = vec![0.0; n * n * 2];
        for (i, &ai) in interaction.iter().enumerate() {
            for (j, &aj) in interaction.iter().enumerate() {
                let (pi, _) = last_positions[ai];
                let (pj, _) = last_positions[aj];
                rel[(i * n + j) * 2] = pi.x - pj.x;
                rel[(i * n + j) * 2 + 1] = pi.y - pj.y;
            }
        }
        let rel_last = Tensor::from_vec(vec![n, n, 2], rel).expect("square offset table");

        let norm_adj = if matches!(self.arch.interaction, Interaction::Plain(_)) {
            let positions: Vec<(Point, bool)> = interaction
                .iter()
                .map(|&a| (last_positions[a].0, true))
                .collect();
            let g = build_graph(&positions, t_last, self.config.radius_m)?;
            Some(normalized_adjacency(&g.binarized(), n))
        } else {
            None
        };

        Ok(PreparedScene {
            scene: scene.clone(),
            behavior_std,
            pos,
            interaction,
            rel_last,
            norm_adj,
        })
    }

    /// Builds the forward graph for one prepared scene on the caller's
    /// tape. `noise` supplies one `[agents, latent]` tensor per history
    /// frame for the VRNN; `None` runs the deterministic eval path
    /// (posterior mean).
    pub fn forward_on_tape(
        &self,
        bind: &Binder,
        prepared: &PreparedScene,
        noise: Option<&[Tensor]>,
    ) -> Result<ForwardVars> {
        let tape = bind.tape();
        let scene = &prepared.scene;
        let frames = scene.history_len();
        let all_agents = scene.agent_count() + 1;
        let hidden = self.config.hidden_dim;

        // ---- behavior branch: VRNN over criteria, then GRU ----
        let mut kl_steps: Vec<Var> = Vec::new();
        let behavior_out = if let Some(enc) = &self.arch.behavior {
            let tensor = prepared.behavior_std.as_ref().expect("behavior features prepared");
            let zero_noise = Tensor::zeros(vec![all_agents, self.config.latent_dim]);
            let mut h = tape.constant(Tensor::zeros(vec![all_agents, hidden]));
            let mut features = Vec::with_capacity(frames);
            for t in 0..frames {
                let mut rows = Vec::with_capacity(all_agents * BEHAVIOR_DIM);
                for a in 0..all_agents {
                    rows.extend_from_slice(tensor.row(a, t));
                }
                let x_t = tape.constant(
                    Tensor::from_vec(vec![all_agents, BEHAVIOR_DIM], rows).expect("feature rows"),
                );
                let step_noise = noise.map_or(&zero_noise, |n| &n[t]);
                let step = vrnn_step(bind, &enc.vrnn, &x_t, &h, step_noise)?;
                h = step.h_next;
                features.push(step.features);
                kl_steps.push(step.kl);
            }
            let encoded = gru_encode(bind, &enc.gru, &features)?;
            Some(encoded.last().expect("non-empty window").clone())
        } else {
            None
        };

        // ---- position branch: displacement + pooled offset per frame ----
        let mut pos_inputs = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut rows = Vec::with_capacity(all_agents * 4);
            for a in 0..all_agents {
                let s = prepared.pos.displacement(a, t);
                let p = prepared.pos.pooled_offset(a, t);
                rows.extend_from_slice(&[s[0], s[1], p[0], p[1]]);
            }
            pos_inputs.push(tape.constant(
                Tensor::from_vec(vec![all_agents, 4], rows).expect("position rows"),
            ));
        }
        let pos_encoded = lstm_encode(bind, &self.arch.position_lstm, &pos_inputs)?;
        let position_out = pos_encoded.last().expect("non-empty window").clone();

        let fused = match &behavior_out {
            Some(b) => tape.concat(&[b, &position_out], 1)?,
            None => position_out,
        };

        // ---- interaction stage over agents valid at the last frame ----
        let z0 = if prepared.interaction.len() == all_agents {
            fused
        } else {
            let rows: Result<Vec<Var>> = prepared
                .interaction
                .iter()
                .map(|&a| Ok(tape.row(&fused, a)?))
                .collect();
            let rows = rows?;
            let row_refs: Vec<&Var> = rows.iter().collect();
            tape.concat(&row_refs, 0)?
        };

        let mixed = match &self.arch.interaction {
            Interaction::Adaptive(layers) => {
                let mut z = z0;
                for layer in layers {
                    z = adaptive_gcn_layer(bind, layer, &z, &prepared.rel_last)?;
                }
                z
            }
            Interaction::Plain(layers) => {
                let adj = prepared.norm_adj.as_ref().expect("normalized adjacency prepared");
                let mut z = z0;
                for layer in layers {
                    z = plain_gcn_layer(bind, layer, &z, adj)?;
                }
                z
            }
            Interaction::None => z0,
        };

        let context = match &self.arch.attention {
            Some(attn) => linear_attention(bind, attn, &mixed)?,
            None => mixed,
        };
        let target_context = tape.row(&context, 0)?;

        // ---- residual decoder ----
        let displacements = decode_displacements(bind, &self.arch.decoder, &target_context)?;

        let prediction = if self.config.absolute_coords {
            displacements
        } else {
            // cumulative sum via a constant lower-triangular matrix,
            // anchored at the last observed position
            let t_f = self.config.future_frames;
            let mut tri = vec![0.0; t_f * t_f];
            for i in 0..t_f {
                for j in 0..=i {
                    tri[i * t_f + j] = 1.0;
                }
            }
            let cumsum = tape.matmul(
                &tape.constant(Tensor::from_vec(vec![t_f, t_f], tri).expect("triangular")),
                &displacements,
            )?;
            let anchor = scene.last_observed_position();
            let anchor = tape.constant(
                Tensor::from_vec(vec![2], vec![anchor.x, anchor.y]).expect("anchor"),
            );
            tape.add(&cumsum, &anchor)?
        };

        let kl_mean = if kl_steps.is_empty() {
            None
        } else {
            let refs: Vec<&Var> = kl_steps.iter().collect();
            let stacked = tape.concat(&refs, 0)?;
            Some(tape.mean_all(&stacked)?)
        };

        Ok(ForwardVars { prediction, kl_mean })
    }

    /// Scalar training loss: mean smooth-L1 over all prediction
    /// components plus the optional KL term.
    pub fn loss_on_tape(&self, tape: &Tape, fw: &ForwardVars, gt: &[Point]) -> Result<Var> {
        if gt.len() != self.config.future_frames {
            return Err(MftrajError::Config(format!(
                "ground truth has {} frames, model predicts {}",
                gt.len(),
                self.config.future_frames
            )));
        }
        let flat: Vec<f64> = gt.iter().flat_map(|p| [p.x, p.y]).collect();
        let gt_t = tape.constant(Tensor::from_vec(vec![gt.len(), 2], flat).expect("gt tensor"));
        let per_elem = tape.smooth_l1(&fw.prediction, &gt_t, 1.0)?;
        let mut loss = tape.mean_all(&per_elem)?;
        if self.config.beta_kl != 0.0 {
            if let Some(kl) = &fw.kl_mean {
                loss = tape.add(&loss, &tape.scale(kl, self.config.beta_kl)?)?;
            }
        }
        Ok(loss)
    }

    /// Deterministic eval-mode prediction of the future trajectory.
    pub fn predict(&self, scene: &TrajectoryScene) -> Result<Vec<Point>> {
        let prepared = self.prepare(scene)?;
        self.predict_prepared(&prepared)
    }

    pub fn predict_prepared(&self, prepared: &PreparedScene) -> Result<Vec<Point>> {
        let tape = Tape::new();
        let bind = Binder::new(&tape, &self.params, false);
        let fw = self.forward_on_tape(&bind, prepared, None)?;
        let out = tape.value(&fw.prediction);
        if !out.is_finite() {
            return Err(MftrajError::Numeric(format!(
                "non-finite prediction for scene '{}'",
                prepared.scene.scene_id
            )));
        }
        Ok(out
            .data()
            .chunks(2)
            .map(|xy| Point::new(xy[0], xy[1]))
            .collect())
    }
}

pub struct ForwardVars {
    /// Predicted absolute positions `[future_frames, 2]`.
    pub prediction: Var,
    /// Mean per-dimension KL across steps and agents, when the behavior
    /// branch is active.
    pub kl_mean: Option<Var>,
}

/// A scene with every network input precomputed.
pub struct PreparedScene {
    pub scene: TrajectoryScene,
    pub behavior_std: Option<BehaviorTensor>,
    pub pos: PositionFeatures,
    /// Agent indices (0 = target) participating in the interaction
    /// stage: those valid at the last observed frame.
    pub interaction: Vec<usize>,
    /// Pairwise offsets among interaction agents at the last frame,
    /// `[N, N, 2]`.
    pub rel_last: Tensor,
    /// Normalized binary adjacency for the plain-GCN ablation.
    pub norm_adj: Option<Tensor>,
}

/// Relative position features: per-agent displacements and pairwise
/// offsets per frame.
#[derive(Debug, Clone)]
pub struct PositionFeatures {
    agents: usize,
    frames: usize,
    /// `[agents, frames, 2]`; zero on the first frame and wherever the
    /// agent (or its previous frame) is invalid.
    displacements: Vec<f64>,
    /// `[frames, agents, agents, 2]`; zero when either endpoint is
    /// invalid at that frame.
    offsets: Vec<f64>,
    /// mean offset to valid other agents, `[agents, frames, 2]`
    pooled: Vec<f64>,
}

impl PositionFeatures {
    pub fn displacement(&self, agent: usize, frame: usize) -> [f64; 2] {
        let base = (agent * self.frames + frame) * 2;
        [self.displacements[base], self.displacements[base + 1]]
    }

    pub fn offset(&self, frame: usize, i: usize, j: usize) -> [f64; 2] {
        let base = ((frame * self.agents + i) * self.agents + j) * 2;
        [self.offsets[base], self.offsets[base + 1]]
    }

    pub fn pooled_offset(&self, agent: usize, frame: usize) -> [f64; 2] {
        let base = (agent * self.frames + frame) * 2;
        [self.pooled[base], self.pooled[base + 1]]
    }
}

/// Per-agent displacement `p_t - p_{t-1}` and pairwise offsets
/// `p_i - p_j` over valid agents, zero-padded at the first frame.
pub fn position_features(scene: &TrajectoryScene) -> PositionFeatures {
    let agents = scene.agent_count() + 1;
    let frames = scene.history_len();
    let mut displacements = vec![0.0; agents * frames * 2];
    let mut offsets = vec![0.0; frames * agents * agents * 2];
    let mut pooled = vec![0.0; agents * frames * 2];

    let position = |a: usize, t: usize| -> (Point, bool) {
        if a == 0 {
            (scene.target_history[t], true)
        } else {
            let track = &scene.agent_histories[a - 1];
            (track.points[t], track.valid[t])
        }
    };

    for t in 0..frames {
        for a in 0..agents {
            let (p, valid) = position(a, t);
            if t > 0 && valid {
                let (prev, prev_valid) = position(a, t - 1);
                if prev_valid {
                    let base = (a * frames + t) * 2;
                    displacements[base] = p.x - prev.x;
                    displacements[base + 1] = p.y - prev.y;
                }
            }
            if valid {
                let mut sum = [0.0, 0.0];
                let mut count = 0.0;
                for b in 0..agents {
                    let (q, q_valid) = position(b, t);
                    if q_valid && b != a {
                        let base = ((t * agents + a) * agents + b) * 2;
                        offsets[base] = p.x - q.x;
                        offsets[base + 1] = p.y - q.y;
                        sum[0] += p.x - q.x;
                        sum[1] += p.y - q.y;
                        count += 1.0;
                    }
                }
                if count > 0.0 {
                    let base = (a * frames + t) * 2;
                    pooled[base] = sum[0] / count;
                    pooled[base + 1] = sum[1] / count;
                }
            }
        }
    }

    PositionFeatures {
        agents,
        frames,
        displacements,
        offsets,
        pooled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AgentTrack;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            history_frames: 6,
            future_frames: 4,
            sample_rate_hz: 10.0,
            hidden_dim: 8,
            latent_dim: 4,
            attention_heads: 2,
            proj_dim: 2,
            gn_groups: 4,
            n_max: 8,
            ..Default::default()
        }
    }

    fn tiny_scene() -> TrajectoryScene {
        let frames = 6;
        TrajectoryScene {
            scene_id: "m".into(),
            sample_rate_hz: 10.0,
            start_frame: 0,
            target_id: "veh0".into(),
            target_history: (0..frames).map(|i| Point::new(i as f64, 0.1 * i as f64)).collect(),
            agent_histories: vec![AgentTrack {
                agent_id: "veh1".into(),
                points: (0..frames).map(|i| Point::new(i as f64, 3.5)).collect(),
                valid: vec![true; frames],
            }],
            target_future: Some((0..4).map(|i| Point::new(6.0 + i as f64, 0.6)).collect()),
        }
    }

    #[test]
    fn position_features_examples() {
        let scene = tiny_scene();
        let pf = position_features(&scene);
        // constant velocity (1, 0.1) per frame
        assert_eq!(pf.displacement(0, 0), [0.0, 0.0]); // first frame padded
        let d = pf.displacement(0, 3);
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 0.1).abs() < 1e-12);
        // static lateral offset to the single neighbor
        let off = pf.offset(2, 0, 1);
        assert!((off[1] - (0.2 - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn static_agent_has_zero_displacement() {
        let mut scene = tiny_scene();
        for p in &mut scene.agent_histories[0].points {
            *p = Point::new(4.0, 4.0);
        }
        let pf = position_features(&scene);
        for t in 1..6 {
            assert_eq!(pf.displacement(1, t), [0.0, 0.0]);
        }
    }

    #[test]
    fn forward_shape_and_finiteness() {
        let model = MfTrajModel::new(tiny_config()).unwrap();
        let pred = model.predict(&tiny_scene()).unwrap();
        assert_eq!(pred.len(), 4);
        assert!(pred.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = MfTrajModel::new(tiny_config()).unwrap();
        let a = model.predict(&tiny_scene()).unwrap();
        let b = model.predict(&tiny_scene()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_final_projection_predicts_standstill() {
        let mut model = MfTrajModel::new(tiny_config()).unwrap();
        let out_w = model.params.id_by_name("decoder.out.w").unwrap();
        let out_b = model.params.id_by_name("decoder.out.b").unwrap();
        let w_shape = model.params.value(out_w).shape().to_vec();
        let b_shape = model.params.value(out_b).shape().to_vec();
        *model.params.value_mut(out_w) = Tensor::zeros(w_shape);
        *model.params.value_mut(out_b) = Tensor::zeros(b_shape);

        let scene = tiny_scene();
        let pred = model.predict(&scene).unwrap();
        let anchor = scene.last_observed_position();
        for p in pred {
            assert_eq!(p, anchor);
        }
    }

    #[test]
    fn loss_examples() {
        let model = MfTrajModel::new(tiny_config()).unwrap();
        let run = |offset: f64| {
            let tape = Tape::new();
            let flat: Vec<f64> = (0..8).map(|i| i as f64 + offset).collect();
            let pred = tape.leaf(Tensor::from_vec(vec![4, 2], flat).unwrap(), false);
            let fw = ForwardVars { prediction: pred, kl_mean: None };
            let gt: Vec<Point> = (0..4).map(|i| Point::new(2.0 * i as f64, 2.0 * i as f64 + 1.0)).collect();
            let loss = model.loss_on_tape(&tape, &fw, &gt).unwrap();
            tape.value(&loss).item()
        };
        assert!(run(0.0).abs() < 1e-12); // pred == gt
        assert!((run(0.5) - 0.125).abs() < 1e-12); // quadratic branch
        assert!((run(2.0) - 1.5).abs() < 1e-12); // linear branch
    }

    #[test]
    fn translation_equivariance_end_to_end() {
        let model = MfTrajModel::new(tiny_config()).unwrap();
        let scene = tiny_scene();
        let base = model.predict(&scene).unwrap();
        let (dx, dy) = (123.5, -44.25);
        let moved = model.predict(&scene.translated(dx, dy)).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert!((b.x - a.x - dx).abs() < 1e-6);
            assert!((b.y - a.y - dy).abs() < 1e-6);
        }
    }

    #[test]
    fn ablation_configs_build_and_predict() {
        for (name, cfg) in [
            ("A", ModelConfig { disable_behavior: true, ..tiny_config() }),
            ("B", ModelConfig { absolute_coords: true, ..tiny_config() }),
            ("C", ModelConfig { disable_interaction: true, disable_linformer: true, ..tiny_config() }),
            ("D", ModelConfig { disable_linformer: true, ..tiny_config() }),
            ("E", ModelConfig { plain_gcn: true, ..tiny_config() }),
        ] {
            let model = MfTrajModel::new(cfg).unwrap();
            let pred = model.predict(&tiny_scene()).unwrap();
            assert_eq!(pred.len(), 4, "model {}", name);
        }
    }

    #[test]
    fn horizon_mismatch_is_config_error() {
        let model = MfTrajModel::new(tiny_config()).unwrap();
        let mut scene = tiny_scene();
        scene.target_history.pop();
        for a in &mut scene.agent_histories {
            a.points.pop();
            a.valid.pop();
        }
        assert!(matches!(model.predict(&scene), Err(MftrajError::Config(_))));
    }
}
