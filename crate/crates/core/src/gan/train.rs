use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{
    d_accuracy, discriminator_loss, discriminator_loss_on_tape, generator_loss,
    generator_loss_on_tape, GeneratorLoss,
};
use super::trace::{LossTrace, TraceRecord};
use crate::autograd::Tape;
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::layers::{
    build_discriminator_with, build_generator_with, init_weights, InitSpec, ModelConfig, Sequential,
};
use crate::tensor::{BatchNormMode, Real, Tensor};

pub const ACCURACY_THRESHOLD: f64 = 0.5;
pub const EARLY_STOP_BAND: (f64, f64) = (0.45, 0.55);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// Each iteration runs `d_steps_per_cycle` discriminator batches, then
    /// `g_steps_per_cycle` generator batches.
    #[default]
    Batch,
    /// Whole epochs of discriminator updates alternate with whole epochs of
    /// generator updates; every iteration consumes one real batch.
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_discriminator: Option<f64>,
    pub lr_generator: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub d_steps_per_cycle: usize,
    pub g_steps_per_cycle: usize,
    pub alternation_granularity: Alternation,
    pub total_iterations: u64,
    pub seed: u64,
    pub loss_variant: GeneratorLoss,
    pub accuracy_window: usize,
    pub early_stop: bool,
    pub drop_last: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0005,
            lr_discriminator: None,
            lr_generator: None,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            latent_dim: crate::layers::LATENT_DIM,
            d_steps_per_cycle: 1,
            g_steps_per_cycle: 1,
            alternation_granularity: Alternation::Batch,
            total_iterations: 1000,
            seed: 0,
            loss_variant: GeneratorLoss::Minimax,
            accuracy_window: 50,
            early_stop: false,
            drop_last: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam_discriminator().validate()?;
        self.adam_generator().validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch statistics, got {}",
                self.batch_size
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.d_steps_per_cycle == 0 || self.g_steps_per_cycle == 0 {
            return Err(Error::Config(
                "d_steps_per_cycle and g_steps_per_cycle must be positive".into(),
            ));
        }
        if self.accuracy_window == 0 {
            return Err(Error::Config("accuracy_window must be positive".into()));
        }
        Ok(())
    }

    pub fn adam_discriminator(&self) -> AdamConfig {
        self.adam(self.lr_discriminator)
    }

    pub fn adam_generator(&self) -> AdamConfig {
        self.adam(self.lr_generator)
    }

    fn adam(&self, lr: Option<f64>) -> AdamConfig {
        AdamConfig {
            lr: lr.unwrap_or(self.lr),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `batch × latent_dim × 1 × 1` standard normal draws.
pub fn sample_latent<T: Real, R: rand::Rng + ?Sized>(
    batch: usize,
    latent_dim: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if batch == 0 || latent_dim == 0 {
        return Err(Error::Size(format!(
            "latent batch {batch}×{latent_dim} must be nonempty"
        )));
    }
    Tensor::randn(&[batch, latent_dim, 1, 1], 0.0, 1.0, rng)
}

/// Position in the shuffled data stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCursor {
    pub epoch: u64,
    pub batch: usize,
}

/// Resumable state of a ChaCha generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    /// Mean combined accuracy over the window fell inside the coin-flip band.
    Converged,
}

struct DPass {
    d_loss: f64,
    g_loss: f64,
    acc_real: f64,
    acc_fake: f64,
}

/// Owns both networks, their optimizers and the data stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) model: ModelConfig,
    pub(crate) generator: Sequential<f32>,
    pub(crate) discriminator: Sequential<f32>,
    pub(crate) adam_generator: AdamState<f32>,
    pub(crate) adam_discriminator: AdamState<f32>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) cursor: DataCursor,
    pub(crate) trace: LossTrace,
    dataset: Dataset,
    order: Option<(u64, Vec<Vec<usize>>)>,
}

impl Trainer {
    /// Builds both networks for `model` and initializes them from `init`,
    /// generator first.
    pub fn new(
        config: TrainConfig,
        model: ModelConfig,
        init: &InitSpec,
        dataset: Dataset,
    ) -> Result<Self> {
        let mut generator = build_generator_with(&model)?;
        let mut discriminator = build_discriminator_with(&model)?;
        let mut rng = init.rng();
        init_weights(&mut generator, init, &mut rng)?;
        init_weights(&mut discriminator, init, &mut rng)?;
        Self::from_models(config, model, generator, discriminator, dataset)
    }

    /// Wraps existing networks, which must match the architecture of `model`.
    pub fn from_models(
        config: TrainConfig,
        model: ModelConfig,
        generator: Sequential<f32>,
        discriminator: Sequential<f32>,
        dataset: Dataset,
    ) -> Result<Self> {
        config.validate()?;
        check_architecture(&model, &generator, &discriminator)?;
        if config.latent_dim != model.latent_dim {
            return Err(Error::Config(format!(
                "latent_dim {} differs from the model's {}",
                config.latent_dim, model.latent_dim
            )));
        }
        match dataset.extent() {
            None => return Err(Error::Config("dataset is empty".into())),
            Some((w, h)) if (w, h) != (model.image_size, model.image_size) => {
                return Err(Error::Config(format!(
                    "dataset images are {w}×{h}, the model expects {0}×{0}",
                    model.image_size
                )))
            }
            Some(_) => {}
        }
        if dataset.len() < config.batch_size {
            return Err(Error::Config(format!(
                "dataset of {} items is smaller than batch_size {}",
                dataset.len(),
                config.batch_size
            )));
        }
        if !config.drop_last && dataset.len() % config.batch_size == 1 {
            return Err(Error::Config(
                "the last batch of each epoch would hold one item; batch statistics need two"
                    .into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        Ok(Trainer {
            adam_generator: AdamState::new(config.adam_generator()),
            adam_discriminator: AdamState::new(config.adam_discriminator()),
            config,
            model,
            generator,
            discriminator,
            rng,
            cursor: DataCursor::default(),
            trace: LossTrace::new(),
            dataset,
            order: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn generator(&self) -> &Sequential<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> &Sequential<f32> {
        &self.discriminator
    }

    pub fn adam_states(&self) -> (&AdamState<f32>, &AdamState<f32>) {
        (&self.adam_generator, &self.adam_discriminator)
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn cursor(&self) -> DataCursor {
        self.cursor
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.trace.last().map_or(0, |r| r.iteration)
    }

    pub fn is_finished(&self) -> bool {
        self.iteration() >= self.config.total_iterations
    }

    pub fn into_parts(self) -> (Sequential<f32>, Sequential<f32>, LossTrace) {
        (self.generator, self.discriminator, self.trace)
    }

    /// Eval-mode generator output for latent batch `z`.
    pub fn sample(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.generator.forward_eval(z)
    }

    fn epoch_order(&mut self) -> Result<&[Vec<usize>]> {
        let epoch = self.cursor.epoch;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch + 1);
            let order = batch_indices(
                self.dataset.len(),
                self.config.batch_size,
                &mut rng,
                self.config.drop_last,
            )?;
            self.order = Some((epoch, order));
        }
        Ok(&self.order.as_ref().expect("just filled").1)
    }

    // Moves the cursor to the next epoch when the current one is used up.
    fn roll_epoch(&mut self) -> Result<()> {
        if self.cursor.batch >= self.epoch_order()?.len() {
            self.cursor = DataCursor {
                epoch: self.cursor.epoch + 1,
                batch: 0,
            };
        }
        Ok(())
    }

    fn next_real_batch(&mut self) -> Result<Tensor<f32>> {
        self.roll_epoch()?;
        let b = self.cursor.batch;
        let indices = self.epoch_order()?[b].clone();
        self.cursor.batch += 1;
        self.dataset.batch(&indices)
    }

    fn latent(&mut self, batch: usize) -> Result<Tensor<f32>> {
        sample_latent(batch, self.config.latent_dim, &mut self.rng)
    }

    // Real batch plus a detached fake batch through D; updates D when `update`.
    fn d_pass(&mut self, update: bool) -> Result<DPass> {
        let real = self.next_real_batch()?;
        let z = self.latent(real.shape()[0])?;
        let fake = self.generator.forward(&z, BatchNormMode::Train)?;
        let mut tape = Tape::new();
        let r = tape.constant(real);
        let f = tape.constant(fake);
        let d_real =
            self.discriminator
                .forward_on_tape(&mut tape, r, BatchNormMode::Train, update)?;
        let d_fake =
            self.discriminator
                .forward_on_tape(&mut tape, f, BatchNormMode::Train, update)?;
        let (p_real, p_fake) = (tape.value(d_real), tape.value(d_fake));
        if !(p_real.all_finite() && p_fake.all_finite()) {
            return Err(Error::NonFinite("discriminator output".into()));
        }
        let acc = d_accuracy(p_real, p_fake, ACCURACY_THRESHOLD);
        let pass = DPass {
            d_loss: discriminator_loss(p_real, p_fake)?,
            g_loss: generator_loss(p_fake, self.config.loss_variant)?,
            acc_real: acc.real,
            acc_fake: acc.fake,
        };
        if update {
            let loss = discriminator_loss_on_tape(&mut tape, d_real, d_fake)?;
            let grads = tape.backward(loss)?;
            adam_step(
                &mut self.discriminator,
                &grads,
                &mut self.adam_discriminator,
            )?;
        }
        Ok(pass)
    }

    // Fresh latent batch through G and a frozen D; updates G.
    fn g_step(&mut self) -> Result<f64> {
        let z = self.latent(self.config.batch_size)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let fake = self
            .generator
            .forward_on_tape(&mut tape, zv, BatchNormMode::Train, true)?;
        let d_fake =
            self.discriminator
                .forward_on_tape(&mut tape, fake, BatchNormMode::Train, false)?;
        if !tape.value(d_fake).all_finite() {
            return Err(Error::NonFinite("discriminator output".into()));
        }
        let g_loss = generator_loss(tape.value(d_fake), self.config.loss_variant)?;
        let loss = generator_loss_on_tape(&mut tape, d_fake, self.config.loss_variant);
        let grads = tape.backward(loss)?;
        adam_step(&mut self.generator, &grads, &mut self.adam_generator)?;
        Ok(g_loss)
    }

    /// Runs one iteration and appends its record to the trace.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let (d_steps, g_steps) = match self.config.alternation_granularity {
            Alternation::Batch => (self.config.d_steps_per_cycle, self.config.g_steps_per_cycle),
            Alternation::Epoch => {
                self.roll_epoch()?;
                let cycle = (self.config.d_steps_per_cycle + self.config.g_steps_per_cycle) as u64;
                if self.cursor.epoch % cycle < self.config.d_steps_per_cycle as u64 {
                    (1, 0)
                } else {
                    (0, 1)
                }
            }
        };
        let mut pass = if d_steps == 0 {
            Some(self.d_pass(false)?)
        } else {
            None
        };
        for _ in 0..d_steps {
            pass = Some(self.d_pass(true)?);
        }
        let pass = pass.expect("at least one discriminator pass");
        let mut g_loss = pass.g_loss;
        for _ in 0..g_steps {
            g_loss = self.g_step()?;
        }
        if !(pass.d_loss.is_finite() && g_loss.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss at iteration {}",
                self.iteration() + 1
            )));
        }
        let record = TraceRecord {
            iteration: self.iteration() + 1,
            d_loss: pass.d_loss,
            g_loss,
            d_acc_real: pass.acc_real,
            d_acc_fake: pass.acc_fake,
        };
        self.trace.push(record)?;
        Ok(record)
    }

    /// Steps until `total_iterations` or, with `early_stop`, until the
    /// windowed accuracy enters the coin-flip band. `after_step` runs after
    /// every iteration.
    pub fn run(
        &mut self,
        mut after_step: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<StopReason> {
        while !self.is_finished() {
            self.step()?;
            after_step(self)?;
            if self.converged() {
                return Ok(StopReason::Converged);
            }
        }
        Ok(StopReason::Completed)
    }

    fn converged(&self) -> bool {
        let (lo, hi) = EARLY_STOP_BAND;
        self.config.early_stop
            && self
                .trace
                .recent_accuracy(self.config.accuracy_window)
                .is_some_and(|a| (lo..=hi).contains(&a))
    }
}

pub(crate) fn check_architecture(
    model: &ModelConfig,
    generator: &Sequential<f32>,
    discriminator: &Sequential<f32>,
) -> Result<()> {
    let g = build_generator_with::<f32>(model)?;
    let d = build_discriminator_with::<f32>(model)?;
    if g.specs() != generator.specs() {
        return Err(Error::Shape(
            "generator does not match the model configuration".into(),
        ));
    }
    if d.specs() != discriminator.specs() {
        return Err(Error::Shape(
            "discriminator does not match the model configuration".into(),
        ));
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub generator: Sequential<f32>,
    pub discriminator: Sequential<f32>,
    pub trace: LossTrace,
    pub stop: StopReason,
}

/// A failed run together with every record written before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training aborted after {} iterations: {error}", trace.len())]
pub struct TrainAbort {
    #[source]
    pub error: Error,
    pub trace: LossTrace,
}

/// Trains fresh networks for `config.total_iterations` iterations.
pub fn train(
    config: TrainConfig,
    model: ModelConfig,
    init: &InitSpec,
    dataset: Dataset,
) -> Result<TrainOutcome, TrainAbort> {
    let mut trainer = Trainer::new(config, model, init, dataset).map_err(|error| TrainAbort {
        error,
        trace: LossTrace::new(),
    })?;
    match trainer.run(|_| Ok(())) {
        Ok(stop) => {
            let (generator, discriminator, trace) = trainer.into_parts();
            Ok(TrainOutcome {
                generator,
                discriminator,
                trace,
                stop,
            })
        }
        Err(error) => Err(TrainAbort {
            error,
            trace: trainer.trace,
        }),
    }
}
