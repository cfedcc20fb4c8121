//! Training configuration.
//!
//! Configs are INI-style TOML: `[task]`, `[model]`, `[optim]`, `[data]`
//! and `[output]` sections of flat keys. Unknown keys are rejected.
//! Unset optimizer keys take the per-task defaults below, and the
//! snapshot stored in checkpoints has every key filled in.

use serde::{Deserialize, Serialize};

use super::model::{classifier, segmenter, ConvKind, ConvSpec, Network};
use crate::error::{Error, Result};
use crate::sfconv::DEFAULT_RANK;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Segmentation,
}

impl TaskKind {
    pub fn defaults(self) -> OptimSection {
        let (lr, lambda, batch, epochs) = match self {
            TaskKind::Classification => (0.005, 5.0, 32, 100),
            TaskKind::Segmentation => (0.01, 10.0, 16, 50),
        };
        OptimSection {
            learning_rate: Some(lr),
            weight_decay: Some(1e-5),
            scheduler_step: Some(10),
            scheduler_gamma: Some(1.0),
            batch_size: Some(batch),
            epochs: Some(epochs),
            lambda: Some(lambda),
        }
    }

    fn default_input_size(self) -> usize {
        match self {
            TaskKind::Classification => 32,
            TaskKind::Segmentation => 48,
        }
    }

    pub fn conv_layer_count(self) -> usize {
        match self {
            TaskKind::Classification => 4,
            TaskKind::Segmentation => 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub conv: ConvKind,
    pub rank: usize,
    pub width: usize,
    pub kernel: usize,
    pub classes: usize,
    pub input_size: Option<usize>,
    /// Per-layer override of `conv`, one entry per backbone conv layer.
    pub layer_kinds: Option<Vec<ConvKind>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            conv: ConvKind::Sfconv,
            rank: DEFAULT_RANK,
            width: 8,
            kernel: 3,
            classes: 3,
            input_size: None,
            layer_kinds: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub scheduler_step: Option<usize>,
    pub scheduler_gamma: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of training samples; synthetic data when unset.
    pub path: Option<String>,
    pub eval_path: Option<String>,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            eval_path: None,
            n_train: 96,
            n_eval: 48,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            checkpoint_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl TrainConfig {
    /// Config with every default applied for `kind`.
    pub fn for_task(kind: TaskKind, seed: u64) -> Self {
        let mut cfg = Self {
            task: TaskSection { kind, seed },
            model: ModelSection::default(),
            optim: OptimSection::default(),
            data: DataSection::default(),
            output: OutputSection::default(),
        };
        cfg.resolve();
        cfg
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    fn resolve(&mut self) {
        let d = self.task.kind.defaults();
        let o = &mut self.optim;
        o.learning_rate = o.learning_rate.or(d.learning_rate);
        o.weight_decay = o.weight_decay.or(d.weight_decay);
        o.scheduler_step = o.scheduler_step.or(d.scheduler_step);
        o.scheduler_gamma = o.scheduler_gamma.or(d.scheduler_gamma);
        o.batch_size = o.batch_size.or(d.batch_size);
        o.epochs = o.epochs.or(d.epochs);
        o.lambda = o.lambda.or(d.lambda);
        self.model.input_size = self
            .model
            .input_size
            .or(Some(self.task.kind.default_input_size()));
        self.data.seed = self.data.seed.or(Some(self.task.seed));
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("learning_rate", self.learning_rate()),
            ("weight_decay", self.weight_decay()),
            ("scheduler_gamma", self.scheduler_gamma()),
            ("lambda", self.lambda()),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.batch_size() == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs() == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.scheduler_step() == 0 {
            return bad("scheduler_step must be >= 1".into());
        }
        let m = &self.model;
        if m.rank == 0 || m.width == 0 || m.kernel == 0 || m.kernel.is_multiple_of(2) {
            return bad("rank and width must be >= 1 and kernel a positive odd number".into());
        }
        if self.task.kind == TaskKind::Classification && m.classes < 2 {
            return bad("classes must be >= 2".into());
        }
        if let Some(kinds) = &m.layer_kinds {
            let want = self.task.kind.conv_layer_count();
            if kinds.len() != want {
                return bad(format!(
                    "layer_kinds needs {want} entries, got {}",
                    kinds.len()
                ));
            }
        }
        if self.data.path.is_none() && (self.data.n_train == 0 || self.data.n_eval == 0) {
            return bad("n_train and n_eval must be >= 1".into());
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.optim.learning_rate.expect("resolved")
    }
    pub fn weight_decay(&self) -> f64 {
        self.optim.weight_decay.expect("resolved")
    }
    pub fn scheduler_step(&self) -> usize {
        self.optim.scheduler_step.expect("resolved")
    }
    pub fn scheduler_gamma(&self) -> f64 {
        self.optim.scheduler_gamma.expect("resolved")
    }
    pub fn batch_size(&self) -> usize {
        self.optim.batch_size.expect("resolved")
    }
    pub fn epochs(&self) -> usize {
        self.optim.epochs.expect("resolved")
    }
    pub fn lambda(&self) -> f64 {
        self.optim.lambda.expect("resolved")
    }
    pub fn input_size(&self) -> usize {
        self.model.input_size.expect("resolved")
    }
    pub fn data_seed(&self) -> u64 {
        self.data.seed.expect("resolved")
    }

    /// The backbone's conv layers in build order.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let m = &self.model;
        let w = m.width;
        let channels: Vec<(usize, usize)> = match self.task.kind {
            TaskKind::Classification => vec![(1, w), (w, 2 * w), (2 * w, 2 * w), (2 * w, 4 * w)],
            TaskKind::Segmentation => vec![
                (1, w),
                (w, w),
                (w, 2 * w),
                (2 * w, 2 * w),
                (2 * w, 4 * w),
                (4 * w + 2 * w, 2 * w),
                (2 * w + w, w),
            ],
        };
        channels
            .into_iter()
            .enumerate()
            .map(|(i, (c_in, c_out))| ConvSpec {
                kind: m.layer_kinds.as_ref().map_or(m.conv, |k| k[i]),
                kernel: m.kernel,
                in_channels: c_in,
                out_channels: c_out,
                stride: 1,
                padding: m.kernel / 2,
                rank: m.rank,
            })
            .collect()
    }

    /// Freshly initialized network; weights are drawn from `task.seed`.
    pub fn build_network(&self) -> Result<Network> {
        let specs = self.conv_specs();
        let s = self.input_size();
        match self.task.kind {
            TaskKind::Classification => {
                let specs: [ConvSpec; 4] = specs.try_into().expect("four layers");
                classifier(&specs, (s, s), self.model.classes, self.task.seed)
            }
            TaskKind::Segmentation => {
                let specs: [ConvSpec; 7] = specs.try_into().expect("seven layers");
                segmenter(&specs, self.task.seed)
            }
        }
    }

    /// Input shape `batch×1×size×size` for one training batch.
    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch_size(), 1, self.input_size(), self.input_size()]
    }
}
