//! The training loop.
//!
//! Each step computes the task loss on one mini-batch, adds `λ` times the
//! spectral KL of every factorized layer, and applies one Adam update.
//! Mini-batch order comes from a ChaCha8 stream whose position is saved in
//! checkpoints, so a resumed run replays exactly the steps an
//! uninterrupted run would have taken.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, RngState};
use super::config::{TaskKind, TrainConfig};
use super::data::{synth_dataset, BatchTargets, Dataset, Targets};
use super::metrics::{write_metrics, MetricRow, StepRecord};
use super::model::Network;
use super::optim::{adam_step, lr_schedule, AdamState};
use crate::error::{Error, Result};
use crate::nn::{self, DICE_SMOOTHING};
use crate::regularizer::{combine_loss, matrix_spectrum, FilterGradient, RegularizerConfig};
use crate::sfconv::spectrum_view;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.sfck";
pub const METRICS_FILE: &str = "metrics.csv";

/// Offsets the shuffle stream from the weight-init stream.
const SHUFFLE_STREAM: u64 = 1;

/// Task loss of network output `out` and its gradient.
///
/// Classification uses softmax cross-entropy on `b×classes` logits.
/// Segmentation applies a sigmoid to `b×1×h×w` logits and uses the
/// per-image Dice loss with smoothing [`DICE_SMOOTHING`].
pub fn task_loss(out: &Tensor, targets: &BatchTargets) -> Result<(f64, Tensor)> {
    match targets {
        BatchTargets::Labels(labels) => {
            let l = nn::softmax_cross_entropy(out, labels)?;
            Ok((l.loss, l.grad))
        }
        BatchTargets::Masks(mask) => {
            let prob = nn::sigmoid_forward(out);
            let l = nn::batch_dice_loss(&prob, mask, DICE_SMOOTHING)?;
            Ok((l.loss, nn::sigmoid_backward(&l.grad, &prob)?))
        }
    }
}

/// Accuracy (classification) or mean per-image Dice of the mask
/// thresholded at probability 0.5 (segmentation).
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut score = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, t) = data.batch(chunk)?;
        let out = net.predict(&x)?;
        match t {
            BatchTargets::Labels(labels) => {
                let c = out.cols();
                for (i, &label) in labels.iter().enumerate() {
                    let row = &out.data()[i * c..(i + 1) * c];
                    let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    if best == label {
                        score += 1.0;
                    }
                }
            }
            BatchTargets::Masks(mask) => {
                let per = mask.numel() / chunk.len();
                for i in 0..chunk.len() {
                    let r = i * per..(i + 1) * per;
                    let pred: Vec<f64> = out.data()[r.clone()]
                        .iter()
                        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    score += nn::dice_coefficient(&pred, &mask.data()[r], DICE_SMOOTHING);
                }
            }
        }
    }
    Ok(score / data.len() as f64)
}

/// Raw singular values of every factorized layer, one line per matrix.
pub fn spectra_dump(net: &Network) -> String {
    let mut s = String::new();
    for (i, f) in net.factorized_layers().into_iter().enumerate() {
        let view = spectrum_view(f);
        for (name, m) in [("P", &view.matrix_p), ("Q", &view.matrix_q)] {
            let _ = match matrix_spectrum(m) {
                Ok(sp) => writeln!(s, "layer {i} {name}: {:?}", sp.raw),
                Err(e) => writeln!(s, "layer {i} {name}: {e}"),
            };
        }
    }
    s
}

/// Training and evaluation data for a config.
pub fn load_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let kind = cfg.task.kind;
    let (train, eval) = match &cfg.data.path {
        Some(path) => {
            let train = Dataset::load(path)?;
            let eval = match &cfg.data.eval_path {
                Some(p) => Dataset::load(p)?,
                None => train.clone(),
            };
            (train, eval)
        }
        None => (
            synth_dataset(kind, cfg.data.n_train, cfg.data_seed())?,
            synth_dataset(kind, cfg.data.n_eval, cfg.data_seed().wrapping_add(1))?,
        ),
    };
    for d in [&train, &eval] {
        if d.kind() != kind {
            return Err(Error::Config(format!(
                "dataset targets do not match task {kind:?}"
            )));
        }
        let (h, w) = d.image_hw();
        if h != cfg.input_size() || w != cfg.input_size() {
            return Err(Error::Config(format!(
                "images are {h}×{w} but the model expects {0}×{0}",
                cfg.input_size()
            )));
        }
    }
    if let Targets::Labels(l) = &train.targets {
        if let Some(&bad) = l.iter().find(|&&x| x >= cfg.model.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: cfg.model.classes,
            });
        }
    }
    Ok((train, eval))
}

pub struct Trainer {
    cfg: TrainConfig,
    net: Network,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    step: u64,
    train: Dataset,
    eval: Dataset,
    reg: RegularizerConfig,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = cfg.build_network()?;
        let (train, eval) = load_datasets(&cfg)?;
        let adam = AdamState::new(net.params().iter().map(|p| p.tensor))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.task.seed);
        rng.set_stream(SHUFFLE_STREAM);
        let reg = RegularizerConfig::new(cfg.lambda())?;
        Ok(Self {
            cfg,
            net,
            adam,
            rng,
            epoch: 0,
            step: 0,
            train,
            eval,
            reg,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = TrainConfig::parse(&ck.config_text)?;
        let mut t = Self::new(cfg)?;
        let names: Vec<String> = t.net.param_names().to_vec();
        let fetch = |prefix: &str, name: &str, like: &Tensor| -> Result<Tensor> {
            let key = format!("{prefix}/{name}");
            let v = ck.entry(&key).ok_or_else(|| Error::Format {
                what: "checkpoint",
                detail: format!("missing entry {key}"),
            })?;
            if v.shape() != like.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint restore",
                    left: like.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            Ok(v.clone())
        };
        for (i, (p, name)) in t.net.params_mut().into_iter().zip(&names).enumerate() {
            *p = fetch("param", name, p)?;
            t.adam.m[i] = fetch("adam.m", name, &t.adam.m[i])?;
            t.adam.v[i] = fetch("adam.v", name, &t.adam.v[i])?;
        }
        t.adam.t = ck.step;
        t.step = ck.step;
        t.epoch = ck.epoch as usize;
        t.rng = ck.rng.restore();
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn eval_data(&self) -> &Dataset {
        &self.eval
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut entries = Vec::new();
        let params = self.net.params();
        for (prefix, tensors) in [
            ("param", params.iter().map(|p| p.tensor).collect::<Vec<_>>()),
            ("adam.m", self.adam.m.iter().collect()),
            ("adam.v", self.adam.v.iter().collect()),
        ] {
            for (p, t) in params.iter().zip(tensors) {
                entries.push((format!("{prefix}/{}", p.name), t.clone()));
            }
        }
        Checkpoint {
            config_text: self.cfg.to_text(),
            epoch: self.epoch as u64,
            step: self.step,
            rng: RngState::capture(&self.rng),
            entries,
        }
    }

    /// One optimizer step on the samples `indices`.
    pub fn train_step(&mut self, indices: &[usize], lr: f64) -> Result<StepRecord> {
        let (x, targets) = self.train.batch(indices)?;
        let trace = self.net.forward(&x)?;
        let (loss, upstream) = task_loss(trace.output(), &targets)?;
        let (mut grads, _) = self.net.backward(&trace, &upstream)?;
        drop(trace);

        let fidx = self.net.factorized_param_indices();
        let task_grads: Vec<FilterGradient> = fidx
            .iter()
            .map(|&(q, p)| FilterGradient {
                p_filters: grads[p].clone(),
                q_filters: grads[q].clone(),
            })
            .collect();
        let layers = self.net.factorized_layers();
        let (report, combined) = combine_loss(loss, &task_grads, &layers, &self.reg)?;
        for (&(q, p), g) in fidx.iter().zip(combined) {
            grads[q] = g.q_filters;
            grads[p] = g.p_filters;
        }
        if !report.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                step: self.step as usize,
                spectra: spectra_dump(&self.net),
            });
        }

        let decay: Vec<bool> = self.net.params().iter().map(|p| p.decay).collect();
        let mut params = self.net.params_mut();
        adam_step(
            &mut params,
            &grads,
            &decay,
            &mut self.adam,
            lr,
            self.cfg.weight_decay(),
        )?;
        let record = StepRecord {
            epoch: self.epoch,
            step: self.step,
            task_loss: report.task_loss,
            kl_term: report.kl_term,
            total: report.total,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs one epoch. The row's `epoch` is the number of completed epochs.
    pub fn run_epoch(&mut self) -> Result<(MetricRow, Vec<StepRecord>)> {
        let cfg = &self.cfg;
        let lr = lr_schedule(
            self.epoch,
            cfg.learning_rate(),
            cfg.scheduler_step(),
            cfg.scheduler_gamma(),
        );
        let bs = cfg.batch_size();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut records = Vec::with_capacity(order.len().div_ceil(bs));
        for chunk in order.chunks(bs) {
            records.push(self.train_step(chunk, lr)?);
        }
        self.epoch += 1;
        let n = records.len() as f64;
        let mean = |f: fn(&StepRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let row = MetricRow {
            epoch: self.epoch,
            step: self.step,
            lr,
            task_loss: mean(|r| r.task_loss),
            kl_term: mean(|r| r.kl_term),
            lambda: self.reg.lambda,
            total: mean(|r| r.total),
            train_metric: evaluate(&self.net, &self.train, bs)?,
            eval_metric: evaluate(&self.net, &self.eval, bs)?,
        };
        Ok((row, records))
    }

    /// Trains until the configured epoch count, writing metrics and
    /// checkpoints into `out` when given. `history` holds rows from
    /// earlier epochs (for resumed runs) and is extended in place.
    pub fn run(
        &mut self,
        out: Option<&Path>,
        history: &mut Vec<MetricRow>,
    ) -> Result<Vec<StepRecord>> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
        }
        let every = self.cfg.output.checkpoint_every;
        let mut steps = Vec::new();
        while !self.is_finished() {
            let (row, records) = self.run_epoch()?;
            history.push(row);
            steps.extend(records);
            if let Some(dir) = out {
                write_metrics(dir.join(METRICS_FILE), history)?;
                if self.is_finished() || (every > 0 && self.epoch.is_multiple_of(every)) {
                    self.checkpoint().save(dir.join(CHECKPOINT_FILE))?;
                }
            }
        }
        Ok(steps)
    }

    pub fn task(&self) -> TaskKind {
        self.cfg.task.kind
    }
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricRow>,
    pub steps: Vec<StepRecord>,
}

pub fn train(cfg: TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let mut metrics = Vec::new();
    let steps = trainer.run(out, &mut metrics)?;
    Ok(TrainOutcome {
        trainer,
        metrics,
        steps,
    })
}

/// Continues a run from a checkpoint. Existing rows in `out/metrics.csv`
/// up to the checkpoint's epoch are kept.
pub fn resume(ck: &Checkpoint, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::from_checkpoint(ck)?;
    let mut metrics = Vec::new();
    if let Some(dir) = out {
        let path = dir.join(METRICS_FILE);
        if path.exists() {
            metrics = super::metrics::read_metrics(&path)?;
            metrics.retain(|r| r.epoch <= trainer.epoch());
        }
    }
    let steps = trainer.run(out, &mut metrics)?;
    Ok(TrainOutcome {
        trainer,
        metrics,
        steps,
    })
}
