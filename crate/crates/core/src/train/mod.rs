//! Optimizer, two-pass supervision, evaluation and checkpoints.
//!
//! Every optimizer step sees a batch of same-label pairs. The degraded
//! images feed both branches; the local and recurrence losses supervise
//! only the branch matching the label, the global loss supervises the fused
//! output. An epoch visits each clean scene twice: a rain pass, then a snow
//! pass.

mod adam;
mod checkpoint;
mod config;
mod eval;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::ConfigError;
use crate::data::{DataError, Dataset, Image, ImagePair, Label};
use crate::losses::{global_loss, local_loss, recur_loss, LossError, LossReport};
use crate::nets::{cmudrn_forward, CmudrnParams, Layers, NetError};
use crate::tensor::{self, Tensor, TensorError};

pub use adam::{adam_step, AdamConfig, AdamState, Moments};
pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use eval::{evaluate, restore, LabelMetrics};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64 },
    #[error("batch: {0}")]
    Batch(String),
    #[error("nothing to evaluate")]
    EmptyEval,
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Same-label degraded/clean images stacked along the batch axis.
#[derive(Debug, Clone)]
pub struct Batch {
    pub label: Label,
    pub degraded: Tensor,
    pub clean: Tensor,
}

impl Batch {
    pub fn from_pairs(pairs: &[&ImagePair]) -> Result<Batch> {
        let first = pairs
            .first()
            .ok_or_else(|| TrainError::Batch("empty batch".into()))?;
        if let Some(p) = pairs.iter().find(|p| p.label != first.label) {
            return Err(TrainError::Batch(format!(
                "mixed labels: {} and {} (image {})",
                first.label, p.label, p.id
            )));
        }
        let degraded: Vec<&Image> = pairs.iter().map(|p| &p.degraded).collect();
        let clean: Vec<&Image> = pairs.iter().map(|p| &p.clean).collect();
        Ok(Batch {
            label: first.label,
            degraded: Image::batch_tensor(&degraded)?,
            clean: Image::batch_tensor(&clean)?,
        })
    }
}

/// Model, optimizer state and the settings that produced them.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: CmudrnParams,
    pub adam: AdamState,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let params = config.init_params();
        Ok(Trainer {
            config,
            params,
            adam: AdamState::default(),
        })
    }

    /// Wraps existing parameters; the config's stitch, alpha and loop
    /// settings are applied to them.
    pub fn from_params(config: TrainConfig, mut params: CmudrnParams) -> Result<Trainer> {
        config.validate()?;
        config.apply_to(&mut params);
        params.validate()?;
        Ok(Trainer {
            config,
            params,
            adam: AdamState::default(),
        })
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    fn budget_left(&self) -> bool {
        self.config.max_steps == 0 || self.adam.step < self.config.max_steps
    }

    /// Loss of one batch without touching parameters or optimizer state.
    /// Returns the combined loss tensor (still attached to the graph) and
    /// its per-component report.
    pub fn loss(&self, batch: &Batch) -> Result<(Tensor, LossReport)> {
        let cfg = &self.config;
        let lc = cfg.loss_config();
        let out = cmudrn_forward(&self.params, &batch.degraded)?;
        let branch = match batch.label {
            Label::Rain => &out.rain,
            Label::Snow => &out.snow,
        };
        let mut report = LossReport::default();
        let mut combined = Tensor::scalar(0.0);
        if cfg.use_local_losses {
            let l = local_loss(&branch.output, &batch.clean, &lc)?;
            match batch.label {
                Label::Rain => report.local_rain = l.item(),
                Label::Snow => report.local_snow = l.item(),
            }
            combined = tensor::add(&combined, &tensor::scale(&l, cfg.weight_local))?;
        }
        if cfg.use_recur_loss {
            let r = recur_loss(&branch.intermediates, &batch.clean, &lc)?;
            match batch.label {
                Label::Rain => report.recur_rain = r.item(),
                Label::Snow => report.recur_snow = r.item(),
            }
            combined = tensor::add(&combined, &tensor::scale(&r, cfg.weight_recur))?;
        }
        if cfg.use_global_loss {
            let g = global_loss(&out.fused, &batch.clean, &lc)?;
            report.global = g.item();
            combined = tensor::add(&combined, &tensor::scale(&g, cfg.weight_global))?;
        }
        report.combined = combined.item();
        Ok((combined, report))
    }

    /// Forward, backward and one Adam step on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let (combined, report) = self.loss(batch)?;
        if !report.is_finite() {
            return Err(TrainError::NonFinite {
                step: self.adam.step + 1,
            });
        }
        self.params.clear_grads();
        combined.backward()?;
        // Ablations can cut a parameter off from the loss; it gets a zero gradient.
        let grads: Vec<Option<Vec<f64>>> = self
            .params
            .parameters()
            .iter()
            .map(|(_, t)| Some(t.grad().unwrap_or_else(|| vec![0.0; t.len()])))
            .collect();
        let adam_cfg = self.config.adam();
        let mut params = self.params.parameters_mut();
        adam_step(&mut params, &grads, &mut self.adam, &adam_cfg)?;
        Ok(report)
    }

    /// One pass over `ds`: tuples are shuffled with a stream derived from
    /// the seed and the current step count, then grouped into chunks of
    /// `batch_size`; each chunk gets a rain step followed by a snow step.
    /// Stops early once `max_steps` is reached. Returns the mean step report.
    pub fn train_epoch(&mut self, ds: &Dataset) -> Result<LossReport> {
        self.train_epoch_with(ds, &mut |_, _| {})
    }

    /// Like [`train_epoch`](Self::train_epoch), calling `on_step(step, report)`
    /// after every optimizer step.
    pub fn train_epoch_with(
        &mut self,
        ds: &Dataset,
        on_step: &mut dyn FnMut(u64, &LossReport),
    ) -> Result<LossReport> {
        let mut tuples = ds.tuples()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.adam.step);
        tuples.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(2 * tuples.len());
        'outer: for chunk in tuples.chunks(self.config.batch_size) {
            for label in Label::ALL {
                if !self.budget_left() {
                    break 'outer;
                }
                let pairs: Vec<&ImagePair> = chunk
                    .iter()
                    .map(|t| match label {
                        Label::Rain => t.rain,
                        Label::Snow => t.snow,
                    })
                    .collect();
                let report = self.train_step(&Batch::from_pairs(&pairs)?)?;
                on_step(self.adam.step, &report);
                reports.push(report);
            }
        }
        Ok(LossReport::mean(&reports))
    }

    /// Runs `epochs` epochs (or until `max_steps`), returning one mean
    /// report per epoch.
    pub fn fit(
        &mut self,
        ds: &Dataset,
        on_step: &mut dyn FnMut(u64, &LossReport),
    ) -> Result<Vec<LossReport>> {
        let mut epochs = Vec::new();
        for _ in 0..self.config.epochs {
            if !self.budget_left() {
                break;
            }
            epochs.push(self.train_epoch_with(ds, on_step)?);
        }
        Ok(epochs)
    }
}

pub const LOG_HEADER: &str = "step,local_rain,local_snow,recur,global,combined";

/// One training-log line matching [`LOG_HEADER`].
pub fn log_row(step: u64, r: &LossReport) -> String {
    format!(
        "{step},{},{},{},{},{}",
        r.local_rain,
        r.local_snow,
        r.recur(),
        r.global,
        r.combined
    )
}
