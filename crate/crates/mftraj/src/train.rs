//! Adam training loop with deterministic batching.
//!
//! Scenes in a batch evaluate forward/backward on private tapes —
//! optionally on parallel workers — and their gradients are reduced in
//! a fixed order before one optimizer step, so a run is reproducible
//! bit-exactly for a given seed and worker count. Features are
//! precomputed once per scene; only the network replays per step.
//! The learning rate steps from the base to the late value at a
//! configured fraction of the epoch budget.

use autodiff::{Tape, Tensor};

use crate::checkpoint::OptimizerState;
use crate::error::{MftrajError, Result};
use crate::model::{MfTrajModel, PreparedScene};
use crate::nn::{Binder, GradBuffer, ParamSet};
use crate::rng::{next_normal, rng_for_indexed};
use crate::scene::TrajectoryScene;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
pub struct Adam {
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            state: OptimizerState {
                m: params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect(),
                v: params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect(),
                step: 0,
            },
        }
    }

    pub fn from_state(state: OptimizerState) -> Self {
        Self { state }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradBuffer, lr: f64) {
        self.state.step += 1;
        let t = self.state.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.grad(id);
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            let value = params.value_mut(id);
            for (j, p) in value.data_mut().iter_mut().enumerate() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Learning rate for an epoch under the step-decay schedule.
pub fn lr_at_epoch(model: &MfTrajModel, epoch: usize) -> f64 {
    let cfg = &model.config;
    let switch = (cfg.epochs as f64 * cfg.lr_switch_frac).ceil() as usize;
    if epoch < switch {
        cfg.learning_rate
    } else {
        cfg.late_learning_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub loss_curve: Vec<EpochStats>,
    pub optimizer: OptimizerState,
}

/// Trains in place over the given scenes (each must carry a future of
/// the configured horizon). Returns the per-epoch loss curve and the
/// final optimizer state; with `epochs = 0` the model is untouched.
pub fn train(
    model: &mut MfTrajModel,
    train_scenes: &[TrajectoryScene],
    val_scenes: &[TrajectoryScene],
) -> Result<TrainOutcome> {
    if train_scenes.is_empty() {
        return Err(MftrajError::Config("training set is empty".into()));
    }
    for s in train_scenes.iter().chain(val_scenes) {
        if s.future_len() != model.config.future_frames {
            return Err(MftrajError::Config(format!(
                "scene '{}' has {} future frames, expected {}",
                s.scene_id,
                s.future_len(),
                model.config.future_frames
            )));
        }
    }

    model.fit_standardizer(train_scenes)?;
    let prepared: Vec<PreparedScene> = train_scenes
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    let prepared_val: Vec<PreparedScene> = val_scenes
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;

    let seed = model.config.seed;
    let n = prepared.len();
    let mut optimizer = Adam::new(&model.params);
    let mut loss_curve = Vec::with_capacity(model.config.epochs);
    let mut global_step = 0usize;

    for epoch in 0..model.config.epochs {
        let lr = lr_at_epoch(model, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, seed, epoch as u64);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(model.config.batch_size) {
            let noise_base = epoch as u64 * n as u64;
            let jobs: Vec<(usize, u64)> =
                batch.iter().map(|&i| (i, noise_base + i as u64)).collect();
            let (loss_sum, mut grads) = batch_grads(model, &prepared, &jobs)?;
            if !loss_sum.is_finite() {
                return Err(MftrajError::Training {
                    step: global_step,
                    msg: "loss diverged to a non-finite value".into(),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut model.params, &grads, lr);
            epoch_loss_sum += loss_sum;
            global_step += 1;
        }

        let train_loss = epoch_loss_sum / n as f64;
        let val_loss = if prepared_val.is_empty() {
            None
        } else {
            Some(eval_mean_loss(model, &prepared_val)?)
        };
        log::info!(
            "epoch {:>4}  train_loss {:.6}  val_loss {}  lr {:.1e}",
            epoch,
            train_loss,
            val_loss.map_or("-".into(), |v| format!("{:.6}", v)),
            lr
        );
        loss_curve.push(EpochStats { epoch, train_loss, val_loss, lr });
    }

    Ok(TrainOutcome {
        loss_curve,
        optimizer: optimizer.state,
    })
}

/// Forward/backward for one scene on a private tape; returns the loss
/// value and the parameter gradients.
fn scene_grads(
    model: &MfTrajModel,
    prepared: &PreparedScene,
    noise_index: u64,
) -> Result<(f64, GradBuffer)> {
    let tape = Tape::new();
    let bind = Binder::new(&tape, &model.params, true);
    let noise = draw_noise(model, prepared, noise_index);
    let fw = model.forward_on_tape(&bind, prepared, noise.as_deref())?;
    let gt = prepared.scene.target_future.as_ref().expect("training scene has future");
    let loss = model.loss_on_tape(&tape, &fw, gt)?;
    let loss_value = tape.value(&loss).item();
    tape.backward(&loss)?;
    let mut grads = GradBuffer::zeros_like(&model.params);
    bind.accumulate_grads(&mut grads);
    Ok((loss_value, grads))
}

fn draw_noise(
    model: &MfTrajModel,
    prepared: &PreparedScene,
    noise_index: u64,
) -> Option<Vec<Tensor>> {
    if model.config.disable_behavior {
        return None;
    }
    let agents = prepared.scene.agent_count() + 1;
    let latent = model.config.latent_dim;
    let mut rng = rng_for_indexed(model.config.seed, "noise", noise_index);
    Some(
        (0..prepared.scene.history_len())
            .map(|_| {
                let data: Vec<f64> = (0..agents * latent).map(|_| next_normal(&mut rng)).collect();
                Tensor::from_vec(vec![agents, latent], data).expect("noise tensor")
            })
            .collect(),
    )
}

/// Evaluates a batch of (scene index, noise index) jobs, splitting the
/// batch into one contiguous chunk per worker. Chunk results are summed
/// in chunk order, so the reduction is deterministic for a fixed worker
/// count.
fn batch_grads(
    model: &MfTrajModel,
    prepared: &[PreparedScene],
    jobs: &[(usize, u64)],
) -> Result<(f64, GradBuffer)> {
    let workers = model.config.workers.max(1).min(jobs.len().max(1));
    let chunk_size = jobs.len().div_ceil(workers);

    let chunk_results: Vec<Result<(f64, GradBuffer)>> = if workers == 1 {
        vec![run_chunk(model, prepared, jobs)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk_size)
                .map(|chunk| scope.spawn(move || run_chunk(model, prepared, chunk)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };

    let mut total_loss = 0.0;
    let mut total = GradBuffer::zeros_like(&model.params);
    for res in chunk_results {
        let (loss, grads) = res?;
        total_loss += loss;
        total.add_assign(&grads);
    }
    Ok((total_loss, total))
}

fn run_chunk(
    model: &MfTrajModel,
    prepared: &[PreparedScene],
    jobs: &[(usize, u64)],
) -> Result<(f64, GradBuffer)> {
    let mut loss_sum = 0.0;
    let mut grads = GradBuffer::zeros_like(&model.params);
    for &(idx, noise_index) in jobs {
        let (loss, g) = scene_grads(model, &prepared[idx], noise_index)?;
        loss_sum += loss;
        grads.add_assign(&g);
    }
    Ok((loss_sum, grads))
}

/// Mean eval-mode loss (no noise, no gradients) over prepared scenes.
pub fn eval_mean_loss(model: &MfTrajModel, prepared: &[PreparedScene]) -> Result<f64> {
    let mut sum = 0.0;
    for p in prepared {
        let tape = Tape::new();
        let bind = Binder::new(&tape, &model.params, false);
        let fw = model.forward_on_tape(&bind, p, None)?;
        let gt = p.scene.target_future.as_ref().ok_or_else(|| {
            MftrajError::Config(format!("scene '{}' has no future to score", p.scene.scene_id))
        })?;
        let loss = model.loss_on_tape(&tape, &fw, gt)?;
        sum += tape.value(&loss).item();
    }
    Ok(sum / prepared.len() as f64)
}

fn shuffle(order: &mut [usize], seed: u64, epoch: u64) {
    use rand::Rng;
    let mut rng = rng_for_indexed(seed, "shuffle", epoch);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Writes the per-epoch loss curve: `epoch, train_loss, val_loss, lr`.
pub fn write_loss_curve(path: impl AsRef<std::path::Path>, curve: &[EpochStats]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(w, "epoch,train_loss,val_loss,lr")?;
    for e in curve {
        writeln!(
            w,
            "{},{},{},{}",
            e.epoch,
            e.train_loss,
            e.val_loss.map_or(String::new(), |v| v.to_string()),
            e.lr
        )?;
    }
    Ok(())
}
