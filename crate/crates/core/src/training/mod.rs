//! Losses, AdamW, cosine schedule, stochastic prior masking and the
//! two-stage expert/versatile training protocol with parameter freezing.

mod adamw;
mod losses;

pub use adamw::{cosine_lr, AdamW, AdamWConfig};
pub use losses::{build_total_loss, loss_bone, loss_mpjpe, loss_reproj, LossNodes, LossWeights};

use crate::dataset::{
    window_at, DatasetManifest, MaskState, MotionClip, Split, WindowSample, WINDOW_LEN,
};
use crate::evaluation::batch_window_mpjpe_mm;
use crate::model::{bind, forward_graph, LifterInput, LifterWeights, ModelConfig};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Probabilities of the four masking modes, aligned with
/// [`MaskState::ALL_MODES`] (full, camera-masked, bones-masked, no-priors).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingSchedule {
    pub probs: [f64; 4],
}

impl MaskingSchedule {
    /// Complete priors at every step.
    pub fn expert() -> Self {
        MaskingSchedule {
            probs: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// The 25/25/25/25 stochastic-masking schedule.
    pub fn versatile() -> Self {
        MaskingSchedule {
            probs: [0.25, 0.25, 0.25, 0.25],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "masking probabilities {:?} must be non-negative and sum to 1",
                self.probs
            )));
        }
        Ok(())
    }
}

/// One masking mode drawn from the schedule.
pub fn draw_mask(rng: &mut Rng, schedule: &MaskingSchedule) -> MaskState {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (mode, &p) in MaskState::ALL_MODES.iter().zip(&schedule.probs) {
        acc += p;
        if u < acc {
            return *mode;
        }
    }
    *MaskState::ALL_MODES.last().unwrap()
}

/// Fine-tuning flavor selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Expert,
    Versatile,
}

impl ScheduleKind {
    pub fn schedule(&self) -> MaskingSchedule {
        match self {
            ScheduleKind::Expert => MaskingSchedule::expert(),
            ScheduleKind::Versatile => MaskingSchedule::versatile(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScheduleKind::Expert => "expert",
            ScheduleKind::Versatile => "versatile",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "expert" => Some(ScheduleKind::Expert),
            "versatile" => Some(ScheduleKind::Versatile),
            _ => None,
        }
    }
}

/// Which parameters the optimizer may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreezeSpec {
    /// Everything trains (pretraining).
    AllTrainable,
    /// Only encoder layers and the regression head update; the pose
    /// embedding, prior projections and learned tokens stay frozen
    /// (fine-tuning).
    EncoderAndHead,
}

impl FreezeSpec {
    pub fn trainable(&self, name: &str) -> bool {
        match self {
            FreezeSpec::AllTrainable => true,
            FreezeSpec::EncoderAndHead => name.starts_with("enc.") || name.starts_with("head."),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
}

fn default_pretrain() -> StageConfig {
    StageConfig {
        epochs: 50,
        lr: 1e-3,
    }
}

fn default_finetune() -> StageConfig {
    StageConfig {
        epochs: 10,
        lr: 1e-4,
    }
}

fn default_batch() -> usize {
    256
}

fn default_stride() -> usize {
    WINDOW_LEN
}

/// All training hyperparameters. Serializable as part of a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default = "default_pretrain")]
    pub pretrain: StageConfig,
    #[serde(default = "default_finetune")]
    pub finetune: StageConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Frame stride between enumerated window starts within a clip.
    #[serde(default = "default_stride")]
    pub window_stride: usize,
    /// Optional global-norm gradient clipping (off by default).
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Optional linear LR warmup steps before the cosine decay (off by default).
    #[serde(default)]
    pub warmup_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            pretrain: default_pretrain(),
            finetune: default_finetune(),
            optimizer: AdamWConfig::default(),
            batch_size: default_batch(),
            window_stride: default_stride(),
            grad_clip: None,
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain.lr <= 0.0 || self.finetune.lr <= 0.0 {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.pretrain.epochs == 0 || self.finetune.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and window_stride must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the metrics log (written per epoch per stage).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: String,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_mpjpe: f64,
    pub loss_bone: f64,
    pub loss_reproj: f64,
    pub behind_camera_clamps: u64,
    pub val_mpjpe_by_mode: BTreeMap<String, f64>,
}

/// Weights and bookkeeping produced by one training stage.
pub struct StageOutcome {
    pub weights: LifterWeights<f32>,
    pub steps: u64,
    pub metrics: Vec<EpochMetrics>,
}

/// Single-threaded training driver. Deterministic for a fixed
/// (seed, manifest, config).
pub struct Trainer<'a> {
    clips: &'a [MotionClip],
    manifest: &'a DatasetManifest,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    loss_weights: LossWeights,
}

impl<'a> Trainer<'a> {
    /// `clips` must be aligned index-for-index with `manifest.entries`.
    pub fn new(
        clips: &'a [MotionClip],
        manifest: &'a DatasetManifest,
        model_cfg: ModelConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        if clips.len() != manifest.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "{} clips but {} manifest entries",
                clips.len(),
                manifest.entries.len()
            )));
        }
        model_cfg.validate()?;
        cfg.validate()?;
        Ok(Trainer {
            clips,
            manifest,
            model_cfg,
            cfg,
            loss_weights: LossWeights::default(),
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Pretraining: fresh cosine cycle, no masking, all parameters trainable.
    pub fn pretrain(
        &self,
        weights: LifterWeights<f32>,
        metrics_out: Option<&mut dyn Write>,
    ) -> Result<StageOutcome> {
        self.run_stage(
            "pretrain",
            self.cfg.pretrain,
            MaskingSchedule::expert(),
            FreezeSpec::AllTrainable,
            weights,
            metrics_out,
        )
    }

    /// Fine-tuning from a pretrained backbone: only the encoder and head
    /// update; the masking schedule differentiates expert from versatile.
    pub fn finetune(
        &self,
        weights: LifterWeights<f32>,
        kind: ScheduleKind,
        metrics_out: Option<&mut dyn Write>,
    ) -> Result<StageOutcome> {
        self.run_stage(
            kind.label(),
            self.cfg.finetune,
            kind.schedule(),
            FreezeSpec::EncoderAndHead,
            weights,
            metrics_out,
        )
    }

    /// Window list for a split: every (clip, start) pair at the configured
    /// stride.
    pub fn enumerate_windows(&self, split: Split) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ci, entry) in self.manifest.entries.iter().enumerate() {
            if entry.split != split {
                continue;
            }
            let frames = self.clips[ci].frames.len();
            if frames < WINDOW_LEN {
                continue;
            }
            let mut start = 0;
            while start + WINDOW_LEN <= frames {
                out.push((ci, start));
                start += self.cfg.window_stride;
            }
        }
        out
    }

    /// Synthesize the fixed validation sample for a (clip, start) pair. The
    /// camera seed depends only on the pair, so validation is repeatable
    /// across epochs and stages.
    pub fn validation_sample(&self, clip_idx: usize, start: usize) -> Result<WindowSample> {
        let ranges = self.manifest.synthesis.camera_ranges();
        let clip = &self.clips[clip_idx];
        let (window, _) = window_at(clip, start)?;
        let mut rng = Rng::derive(
            self.cfg.seed,
            "val-sample",
            &[clip_idx as u64, start as u64],
        );
        crate::dataset::synthesize_sample_for_window(
            &mut rng,
            &window,
            &clip.task_label,
            MaskState::FULL_PRIORS,
            &ranges,
        )
    }

    fn run_stage(
        &self,
        stage: &str,
        stage_cfg: StageConfig,
        schedule: MaskingSchedule,
        freeze: FreezeSpec,
        mut weights: LifterWeights<f32>,
        mut metrics_out: Option<&mut dyn Write>,
    ) -> Result<StageOutcome> {
        schedule.validate()?;
        let ranges = self.manifest.synthesis.camera_ranges();
        let train_windows = self.enumerate_windows(Split::Train);
        if train_windows.is_empty() {
            return Err(Error::InvalidArgument(
                "no training windows (check the manifest and window_stride)".into(),
            ));
        }
        let val_windows = self.enumerate_windows(Split::Val);

        let mut names = Vec::new();
        weights.visit(|name, _| names.push(name));
        let trainable: Vec<bool> = names.iter().map(|n| freeze.trainable(n)).collect();

        let steps_per_epoch = train_windows.len().div_ceil(self.cfg.batch_size) as u64;
        let total_steps = steps_per_epoch * stage_cfg.epochs as u64;
        let mut opt = AdamW::new(&weights, self.cfg.optimizer);
        let mut metrics = Vec::with_capacity(stage_cfg.epochs);
        let mut global_step = 0u64;

        for epoch in 0..stage_cfg.epochs {
            let mut order: Vec<usize> = (0..train_windows.len()).collect();
            let mut shuffle_rng = Rng::derive(self.cfg.seed, "shuffle", &[epoch as u64]);
            shuffle_rng.shuffle(&mut order);

            let mut epoch_total = 0.0;
            let mut epoch_mpjpe = 0.0;
            let mut epoch_bone = 0.0;
            let mut epoch_reproj = 0.0;
            let mut epoch_clamps = 0u64;
            let mut last_lr = stage_cfg.lr;

            for (step_in_epoch, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                // Fresh cameras every epoch; sample streams keyed by window
                // id so batch composition does not matter.
                let mut samples = Vec::with_capacity(chunk.len());
                for &widx in chunk {
                    let (ci, start) = train_windows[widx];
                    let clip = &self.clips[ci];
                    let mut rng_s =
                        Rng::derive(self.cfg.seed, "train-sample", &[epoch as u64, widx as u64]);
                    let mask = draw_mask(&mut rng_s, &schedule);
                    let (window, _) = window_at(clip, start)?;
                    samples.push(crate::dataset::synthesize_sample_for_window(
                        &mut rng_s,
                        &window,
                        &clip.task_label,
                        mask,
                        &ranges,
                    )?);
                }

                let lr = self.lr_at(global_step, total_steps, stage_cfg.lr);
                last_lr = lr;

                let mut g = Graph::<f32>::new();
                let bound = bind(&mut g, &weights, true);
                let inputs: Vec<LifterInput> = samples.iter().map(LifterInput::from_sample).collect();
                let mut dropout_rng = Rng::derive(
                    self.cfg.seed,
                    "dropout",
                    &[epoch as u64, step_in_epoch as u64],
                );
                let pred = forward_graph(
                    &mut g,
                    &bound,
                    &self.model_cfg,
                    &inputs,
                    true,
                    Some(&mut dropout_rng),
                )?;
                let losses = build_total_loss(&mut g, pred, &samples, &self.loss_weights)?;

                let total_val = g.value(losses.total).item() as f64;
                if total_val.is_nan() {
                    return Err(Error::NanLoss {
                        stage: stage.to_string(),
                        epoch,
                        step: step_in_epoch,
                    });
                }
                epoch_total += total_val;
                epoch_mpjpe += g.value(losses.mpjpe).item() as f64;
                epoch_bone += g.value(losses.bone).item() as f64;
                epoch_reproj += g.value(losses.reproj).item() as f64;
                epoch_clamps += losses.behind_camera as u64;

                let mut all_grads = g.backward(losses.total)?;
                let mut grads: Vec<Option<Tensor<f32>>> = bound
                    .nodes
                    .iter()
                    .map(|(_, node)| all_grads.take(*node))
                    .collect();
                if let Some(max_norm) = self.cfg.grad_clip {
                    clip_global_norm(&mut grads, max_norm);
                }
                opt.step(&mut weights, &grads, lr, &trainable);
                global_step += 1;
            }

            let val_mpjpe_by_mode = self.validation_mpjpe(&weights, &val_windows)?;
            let steps_this_epoch = steps_per_epoch as f64;
            let m = EpochMetrics {
                stage: stage.to_string(),
                epoch,
                step: global_step,
                lr: last_lr,
                loss_total: epoch_total / steps_this_epoch,
                loss_mpjpe: epoch_mpjpe / steps_this_epoch,
                loss_bone: epoch_bone / steps_this_epoch,
                loss_reproj: epoch_reproj / steps_this_epoch,
                behind_camera_clamps: epoch_clamps,
                val_mpjpe_by_mode,
            };
            if let Some(out) = metrics_out.as_deref_mut() {
                writeln!(out, "{}", serde_json::to_string(&m)?)?;
            }
            metrics.push(m);
        }

        Ok(StageOutcome {
            weights,
            steps: global_step,
            metrics,
        })
    }

    fn lr_at(&self, step: u64, total_steps: u64, lr_max: f64) -> f64 {
        if step < self.cfg.warmup_steps {
            return lr_max * (step + 1) as f64 / self.cfg.warmup_steps as f64;
        }
        cosine_lr(
            step - self.cfg.warmup_steps,
            total_steps.saturating_sub(self.cfg.warmup_steps),
            lr_max,
        )
    }

    /// Mean validation MPJPE (mm) per masking mode, fixed cameras.
    pub fn validation_mpjpe(
        &self,
        weights: &LifterWeights<f32>,
        val_windows: &[(usize, usize)],
    ) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        if val_windows.is_empty() {
            return Ok(out);
        }
        let samples: Vec<WindowSample> = val_windows
            .iter()
            .map(|&(ci, start)| self.validation_sample(ci, start))
            .collect::<Result<_>>()?;
        for mode in MaskState::ALL_MODES {
            let mut sum = 0.0;
            for batch in samples.chunks(self.cfg.batch_size) {
                let masked: Vec<WindowSample> = batch.iter().map(|s| s.with_mask(mode)).collect();
                let inputs: Vec<LifterInput> =
                    masked.iter().map(LifterInput::from_sample).collect();
                let pred =
                    crate::model::forward_batch(weights, &self.model_cfg, &inputs, false, None)?;
                for (i, s) in batch.iter().enumerate() {
                    sum += batch_window_mpjpe_mm(&pred, i, &s.gt3d_root);
                }
            }
            out.insert(mode.label().to_string(), sum / samples.len() as f64);
        }
        Ok(out)
    }
}

fn clip_global_norm(grads: &mut [Option<Tensor<f32>>], max_norm: f64) {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for &v in g.data() {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}
