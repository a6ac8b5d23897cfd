//! Pre-training loop: weighted sampling of machine clips, without-replacement
//! noise pairing, SNR mixing, teacher targets, AdamW with a warmup-cosine
//! schedule, and resumable checkpoints.

mod checkpoint;
mod config;
mod data;
mod optim;
mod sampler;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{lr_at, tiny_encoder, Objective, SnrPolicy, TrainConfig};
pub use data::{class_summary, synth_corpus, CorpusClip, CorpusSpec, PretrainCorpus};
pub use optim::AdamW;
pub use sampler::{NoiseSchedule, WeightedSampler};

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{mix_at_snr_unitnoise, AudioError, Waveform};
use crate::encoder::{
    backward_trace, forward_trace, freeze_teacher, head_logits, init, EncoderError, Parameters,
    TeacherHandle, Upstream,
};
use crate::features::{
    apply_norm, extract_logmel, fit_norm, shift_gain, spec_augment_with, FeatureError, MelFeatures,
    NormStats,
};
use crate::losses::{
    bce_multilabel, convex_teacher_target, linear_mixup_with_ratio, mixture_mse, sample_beta,
    snr_mixup, LabelVector, LossError,
};
use crate::par::{self, Execution};
use crate::rng::{derive, rng_for};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("class {0} has no clips")]
    EmptyClass(usize),
    #[error("non-finite loss at step {step}: {dump}")]
    NonFiniteLoss { step: usize, dump: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// One training example as drawn; enough to replay it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub machine_clip_id: String,
    pub noise_clip_id: String,
    pub label: LabelVector,
    pub snr_db_drawn: f64,
    /// Index of this draw within the run; fixes the noise epoch.
    pub draw_index: u64,
    /// Seeds SpecAugment and mixup ratios.
    pub aug_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Completed updates after this step.
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_tagging: f64,
    pub loss_mixture: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SampleLoss {
    tagging: f64,
    mixture: f64,
    total: f64,
}

struct SampleOutput {
    grad: Vec<f64>,
    loss: SampleLoss,
}

struct RunLog {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    samples: BufWriter<File>,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    corpus_fingerprint: String,
    norm: NormStats,
    machine_classes: &'a [String],
    noise_classes: &'a [String],
    machine_class_counts: Vec<usize>,
    noise_clips: usize,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    corpus: &'a PretrainCorpus,
    machine_feats: Vec<MelFeatures>,
    noise_feats: Vec<MelFeatures>,
    machine_index: HashMap<String, usize>,
    noise_index: HashMap<String, usize>,
    norm: NormStats,
    sampler: WeightedSampler,
    noise_schedule: NoiseSchedule,
    params: Parameters,
    teacher: TeacherHandle,
    optim: AdamW,
    step: usize,
    mode: Execution,
    log: Option<RunLog>,
}

impl<'a> Trainer<'a> {
    /// Fresh run: the student starts from `init(config.encoder)` and the teacher
    /// is a frozen copy of that starting point.
    pub fn new(corpus: &'a PretrainCorpus, config: TrainConfig, mode: Execution) -> Result<Self, TrainError> {
        let config = effective(config, corpus)?;
        let params = init(&config.encoder)?;
        Self::from_parts(corpus, config, params.clone(), params, None, 0, None, mode)
    }

    /// Fresh run starting from given weights; the teacher is frozen from them.
    pub fn from_backbone(
        corpus: &'a PretrainCorpus,
        config: TrainConfig,
        backbone: &Parameters,
        mode: Execution,
    ) -> Result<Self, TrainError> {
        let config = effective(config, corpus)?;
        let mut params = init(&config.encoder)?;
        for spec in &backbone.layout {
            if spec.name.starts_with("head.") {
                continue;
            }
            let own = params.spec(&spec.name).clone();
            if own.shape != spec.shape {
                return Err(TrainError::InvalidConfig(format!("backbone tensor {} has shape {:?}", spec.name, spec.shape)));
            }
            params.values[own.range()].copy_from_slice(&backbone.values[spec.range()]);
        }
        Self::from_parts(corpus, config, params.clone(), params, None, 0, None, mode)
    }

    /// Continues a checkpointed run; `config` must match the stored one.
    pub fn resume(
        corpus: &'a PretrainCorpus,
        config: TrainConfig,
        checkpoint: impl AsRef<Path>,
        mode: Execution,
    ) -> Result<Self, TrainError> {
        let config = effective(config, corpus)?;
        let ck = Checkpoint::load_for(checkpoint, &config)?;
        if ck.header.corpus_fingerprint != corpus.fingerprint() {
            return Err(TrainError::CorruptCheckpoint("checkpoint was trained on a different corpus".into()));
        }
        let step = ck.header.step;
        Self::from_parts(corpus, config, ck.params, ck.teacher, Some(ck.optim), step, Some(ck.header.norm), mode)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        corpus: &'a PretrainCorpus,
        config: TrainConfig,
        params: Parameters,
        teacher: Parameters,
        optim: Option<AdamW>,
        step: usize,
        norm: Option<NormStats>,
        mode: Execution,
    ) -> Result<Self, TrainError> {
        let machine_feats = par::try_map(mode, &corpus.machines, |c| extract_logmel(&c.waveform))?;
        let noise_feats = par::try_map(mode, &corpus.noises, |c| extract_logmel(&c.waveform))?;
        let norm = match norm {
            Some(n) => n,
            None => fit_norm(machine_feats.iter().chain(&noise_feats))?,
        };
        let item_classes: Vec<usize> = corpus.machines.iter().map(|c| c.class_index).collect();
        let sampler = WeightedSampler::balanced_over(&item_classes, &corpus.machine_class_counts())?;
        let optim = optim.unwrap_or_else(|| AdamW::new(params.len(), config.adam_beta1, config.adam_beta2, config.adam_eps));
        Ok(Self {
            machine_index: corpus.machines.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect(),
            noise_index: corpus.noises.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect(),
            noise_schedule: NoiseSchedule::new(derive(config.seed, &[1]), corpus.noises.len()),
            teacher: freeze_teacher(&teacher),
            config,
            corpus,
            machine_feats,
            noise_feats,
            norm,
            sampler,
            params,
            optim,
            step,
            mode,
            log: None,
        })
    }

    /// Logs to `dir`: config.json, manifest.json, metrics.csv, samples.jsonl
    /// and checkpoints/step_N.bin. Existing logs are appended to.
    pub fn with_run_dir(mut self, dir: impl AsRef<Path>) -> Result<Self, TrainError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("checkpoints"))?;
        let to_io = |e: serde_json::Error| TrainError::Io(e.into());
        fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&self.config).map_err(to_io)?)?;
        let manifest = RunManifest {
            corpus_fingerprint: self.corpus.fingerprint(),
            norm: self.norm,
            machine_classes: &self.corpus.machine_classes,
            noise_classes: &self.corpus.noise_classes,
            machine_class_counts: self.corpus.machine_class_counts(),
            noise_clips: self.corpus.noises.len(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest).map_err(to_io)?)?;
        let metrics_path = dir.join("metrics.csv");
        let fresh = !metrics_path.exists();
        let file = OpenOptions::new().create(true).append(true).open(&metrics_path)?;
        let mut metrics = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            metrics
                .write_record(["step", "lr", "loss_total", "loss_tagging", "loss_mixture"])
                .map_err(csv_io)?;
            metrics.flush()?;
        }
        let samples = BufWriter::new(OpenOptions::new().create(true).append(true).open(dir.join("samples.jsonl"))?);
        self.log = Some(RunLog { dir, metrics, samples });
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn teacher(&self) -> &TeacherHandle {
        &self.teacher
    }

    pub fn norm(&self) -> NormStats {
        self.norm
    }

    /// Completed updates.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Records for micro-batch `micro` of update `step`. Depends only on the
    /// seed, the corpus and the position in the run.
    pub fn draw_records(&mut self, step: usize, micro: usize) -> Vec<SampleRecord> {
        let c = &self.config;
        let (b, accum) = (c.batch_size as u64, c.grad_accum as u64);
        (0..b)
            .map(|i| {
                let draw_index = (step as u64 * accum + micro as u64) * b + i;
                let mut rng = rng_for(c.seed, &[0, draw_index]);
                let mi = self.sampler.draw(&mut rng);
                let ni = self.noise_schedule.at(draw_index);
                let m = &self.corpus.machines[mi];
                let n = &self.corpus.noises[ni];
                SampleRecord {
                    machine_clip_id: m.id.clone(),
                    noise_clip_id: n.id.clone(),
                    label: LabelVector::mixture(
                        self.corpus.c_machines(),
                        self.corpus.n_noises(),
                        m.class_index,
                        n.class_index,
                    ),
                    snr_db_drawn: c.snr_policy.draw(&mut rng),
                    draw_index,
                    aug_seed: rng.random(),
                }
            })
            .collect()
    }

    /// One optimizer update from the given micro-batches: per-micro-batch mean
    /// gradients are summed, divided by the number of micro-batches and applied.
    pub fn train_step(&mut self, micro_batches: &[Vec<SampleRecord>]) -> Result<StepStats, TrainError> {
        if micro_batches.is_empty() || micro_batches.iter().any(|b| b.is_empty()) {
            return Err(TrainError::InvalidConfig("empty batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let (mut total, mut tagging, mut mixture) = (0.0, 0.0, 0.0);
        for batch in micro_batches {
            let outputs = par::try_map(self.mode, &indices(batch.len()), |&i| {
                let partner = self.config.uses_partner().then(|| &batch[(i + 1) % batch.len()]);
                self.sample_output(&batch[i], partner)
            })?;
            let bad: Vec<usize> = outputs
                .iter()
                .enumerate()
                .filter(|(_, o)| !o.loss.total.is_finite() || o.grad.iter().any(|g| !g.is_finite()))
                .map(|(i, _)| i)
                .collect();
            if !bad.is_empty() {
                return Err(self.non_finite(batch, &outputs, &bad));
            }
            let inv = 1.0 / batch.len() as f64;
            for o in &outputs {
                for (g, s) in grad.iter_mut().zip(&o.grad) {
                    *g += s * inv;
                }
                total += o.loss.total * inv;
                tagging += o.loss.tagging * inv;
                mixture += o.loss.mixture * inv;
            }
        }
        let k = micro_batches.len() as f64;
        grad.iter_mut().for_each(|g| *g /= k);
        let lr = lr_at(self.step, &self.config);
        self.optim
            .update(&mut self.params.values, &grad, lr, self.config.weight_decay);
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            lr,
            loss_total: total / k,
            loss_tagging: tagging / k,
            loss_mixture: mixture / k,
        })
    }

    /// Draws and applies the next update, logging it when a run dir is set.
    pub fn step_once(&mut self) -> Result<StepStats, TrainError> {
        let step = self.step;
        let batches: Vec<Vec<SampleRecord>> = (0..self.config.grad_accum).map(|a| self.draw_records(step, a)).collect();
        let stats = self.train_step(&batches)?;
        if let Some(log) = &mut self.log {
            log.metrics
                .serialize((stats.step, stats.lr, stats.loss_total, stats.loss_tagging, stats.loss_mixture))
                .map_err(csv_io)?;
            log.metrics.flush()?;
            for r in batches.iter().flatten() {
                serde_json::to_writer(&mut log.samples, r).map_err(|e| TrainError::Io(e.into()))?;
                log.samples.write_all(b"\n")?;
            }
            log.samples.flush()?;
        }
        let every = self.config.checkpoint_every;
        if every > 0 && self.step % every == 0 && !self.is_finished() {
            self.save_to_run_dir()?;
        }
        Ok(stats)
    }

    /// Trains to `config.steps`, then saves a final checkpoint if logging.
    pub fn run(&mut self) -> Result<Vec<StepStats>, TrainError> {
        self.run_until(self.config.steps)
    }

    pub fn run_until(&mut self, step: usize) -> Result<Vec<StepStats>, TrainError> {
        let mut history = Vec::new();
        while self.step < step.min(self.config.steps) {
            history.push(self.step_once()?);
        }
        if self.is_finished() {
            self.save_to_run_dir()?;
        }
        Ok(history)
    }

    fn save_to_run_dir(&self) -> Result<(), TrainError> {
        if let Some(log) = &self.log {
            let path = log.dir.join("checkpoints").join(format!("step_{}.bin", self.step));
            self.checkpoint().save(path)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                step: self.step,
                config: self.config.clone(),
                layout: self.params.layout.clone(),
                param_hash: self.params.hash(),
                teacher_hash: self.teacher.hash(),
                norm: self.norm,
                corpus_fingerprint: self.corpus.fingerprint(),
                machine_classes: self.corpus.machine_classes.clone(),
                noise_classes: self.corpus.noise_classes.clone(),
            },
            params: self.params.clone(),
            teacher: self.teacher.params().clone(),
            optim: self.optim.clone(),
        }
    }

    fn indices_of(&self, r: &SampleRecord) -> Result<(usize, usize), TrainError> {
        let mi = self.machine_index.get(&r.machine_clip_id).copied();
        let ni = self.noise_index.get(&r.noise_clip_id).copied();
        match (mi, ni) {
            (Some(m), Some(n)) => Ok((m, n)),
            _ => Err(TrainError::InvalidConfig(format!(
                "record refers to unknown clips {} / {}",
                r.machine_clip_id, r.noise_clip_id
            ))),
        }
    }

    fn mixture_of(&self, r: &SampleRecord) -> Result<(Waveform, f64, f64), TrainError> {
        let (mi, ni) = self.indices_of(r)?;
        let mix = mix_at_snr_unitnoise(
            &self.corpus.machines[mi].waveform,
            &self.corpus.noises[ni].waveform,
            r.snr_db_drawn,
        )?;
        Ok((mix.mixture, mix.a1, mix.a2))
    }

    fn normed(&self, w: &Waveform) -> Result<MelFeatures, TrainError> {
        Ok(apply_norm(&extract_logmel(w)?, &self.norm))
    }

    fn sample_output(&self, r: &SampleRecord, partner: Option<&SampleRecord>) -> Result<SampleOutput, TrainError> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(r.aug_seed);
        let (wave, a1, a2) = self.mixture_of(r)?;
        let (input, targets) = match (cfg.objective, partner) {
            (Objective::Retain, _) => (self.normed(&wave)?, r.label.targets()),
            (Objective::Denoise, _) => (self.normed(&wave)?, r.label.machine_slice().targets()),
            (Objective::DenoiseLinearMixup { beta_ab }, Some(p)) => {
                let (other, _, _) = self.mixture_of(p)?;
                let gamma = sample_beta(beta_ab, &mut rng)?;
                linear_mixup_with_ratio(
                    &self.normed(&wave)?,
                    &r.label.machine_slice().targets(),
                    &self.normed(&other)?,
                    &p.label.machine_slice().targets(),
                    gamma,
                )?
            }
            (Objective::DenoiseSnrMixup, Some(p)) => {
                let (other, _, _) = self.mixture_of(p)?;
                let snr = cfg.snr_policy.draw(&mut rng);
                let (mixed, label) = snr_mixup(&wave, &r.label, &other, &p.label, snr)?;
                (self.normed(&mixed)?, label.machine_slice().targets())
            }
            (_, None) => return Err(TrainError::InvalidConfig("mixup needs a partner sample".into())),
        };
        let input = spec_augment_with(&input, &cfg.spec_augment, &mut rng);
        let trace = forward_trace(&self.params, &input);
        let logits = head_logits(&self.params, &trace)?;
        let (tag_value, tag_grad) = bce_multilabel(&logits, &targets)?;

        let w = cfg.loss_weights;
        let mut upstream = Upstream::default();
        let mut loss = SampleLoss {
            tagging: tag_value,
            mixture: 0.0,
            total: tag_value,
        };
        if cfg.objective == Objective::Retain {
            if w.alpha > 0.0 {
                upstream.logits = Some(tag_grad.iter().map(|g| g * w.alpha).collect());
            }
            if w.beta > 0.0 {
                let layer = cfg.mixture_layer();
                let (mi, ni) = self.indices_of(r)?;
                let clean = apply_norm(&shift_gain(&self.machine_feats[mi], a1), &self.norm);
                let noise = apply_norm(&shift_gain(&self.noise_feats[ni], a2), &self.norm);
                let target = convex_teacher_target(
                    &self.teacher.forward(&clean, layer)?,
                    &self.teacher.forward(&noise, layer)?,
                    w.lambda_mix,
                )?;
                let (value, grad) = mixture_mse(&trace.tap(layer)?, &target, cfg.reduction)?;
                loss.mixture = value;
                upstream.taps.push((layer, grad * w.beta));
            }
            loss.total = w.alpha * loss.tagging + w.beta * loss.mixture;
        } else {
            upstream.logits = Some(tag_grad);
        }
        let grad = backward_trace(&self.params, &trace, &upstream)?;
        Ok(SampleOutput { grad, loss })
    }

    fn non_finite(&self, batch: &[SampleRecord], outputs: &[SampleOutput], bad: &[usize]) -> TrainError {
        let detail = serde_json::json!({
            "step": self.step,
            "lr": lr_at(self.step, &self.config),
            "param_hash": self.params.hash(),
            "offending": bad.iter().map(|&i| serde_json::json!({
                "record": batch[i],
                "loss": outputs[i].loss,
                "non_finite_grad_entries": outputs[i].grad.iter().filter(|g| !g.is_finite()).count(),
            })).collect::<Vec<_>>(),
        });
        let mut dump = detail.to_string();
        if let Some(log) = &self.log {
            let path = log.dir.join(format!("nonfinite_step_{}.json", self.step));
            if fs::write(&path, &dump).is_ok() {
                dump = format!("diagnostics written to {}", path.display());
            }
        }
        TrainError::NonFiniteLoss { step: self.step, dump }
    }
}

fn indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn csv_io(e: csv::Error) -> TrainError {
    TrainError::Io(e.into())
}

/// Validates `config` and fixes the head width from the corpus taxonomy.
fn effective(mut config: TrainConfig, corpus: &PretrainCorpus) -> Result<TrainConfig, TrainError> {
    config.validate()?;
    config.encoder.n_classes = config.objective.head_classes(corpus.c_machines(), corpus.n_noises());
    Ok(config)
}
