//! Maximum-likelihood training with persistent contrastive divergence.

use serde::{Deserialize, Serialize};

use crate::data::DataSource;
use crate::error::{Error, Result};
use crate::model::{BinaryVector, RbmParams};
use crate::objective::{learning_step, stochastic_kld_gradient_mean};
use crate::rng::{derive_seed, stream_rng, streams, RngDescriptor, StreamRng};
use crate::sampling::{ChainPool, PoolSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Persistent chains; the batch size when zero.
    pub num_chains: usize,
    pub pcd_steps: usize,
    pub steps: u64,
    /// Standard deviation of the initial weights; biases start at zero.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_hidden: 30,
            learning_rate: 1e-2,
            batch_size: 100,
            num_chains: 0,
            pcd_steps: 5,
            steps: 50_000,
            init_std: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.pcd_steps == 0 {
            return Err(Error::InvalidArgument("PCD step count must be at least 1".into()));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "initial weight scale must be finite and non-negative, got {}",
                self.init_std
            )));
        }
        Ok(())
    }

    fn chains(&self) -> usize {
        if self.num_chains == 0 {
            self.batch_size
        } else {
            self.num_chains
        }
    }
}

/// Called after every learning step.
pub trait TrainHooks {
    fn after_step(&mut self, _step: u64, _params: &RbmParams, _batch: &[BinaryVector]) -> Result<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

#[derive(Debug, Clone)]
pub struct Trainer {
    params: RbmParams,
    pool: ChainPool,
    batch_rng: StreamRng,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Everything besides the parameters needed to resume training.
pub struct TrainerSnapshot {
    pub pool: PoolSnapshot,
    pub batch_rng: RngDescriptor,
    pub step: u64,
}

impl Trainer {
    /// Weights `~ N(0, init_std^2)`, zero biases, fair-coin chains.
    pub fn new(num_visible: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if num_visible == 0 {
            return Err(Error::InvalidArgument("model needs at least one visible unit".into()));
        }
        let mut init = stream_rng(cfg.seed, streams::INIT);
        let params = RbmParams::random(num_visible, cfg.num_hidden, cfg.init_std, &mut init);
        Self::from_params(params, cfg)
    }

    pub fn from_params(params: RbmParams, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = ChainPool::new_random(
            params.num_visible(),
            params.num_hidden(),
            cfg.chains(),
            derive_seed(cfg.seed, streams::TRAIN_POOL),
        )?;
        Ok(Self {
            params,
            pool,
            batch_rng: stream_rng(cfg.seed, streams::MINIBATCH),
            step: 0,
        })
    }

    pub fn params(&self) -> &RbmParams {
        &self.params
    }

    pub fn pool(&self) -> &ChainPool {
        &self.pool
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn step_once(&mut self, cfg: &TrainConfig, source: &DataSource, hooks: &mut dyn TrainHooks) -> Result<()> {
        if source.num_visible() != self.params.num_visible() {
            return Err(Error::dims("data dimension", self.params.num_visible(), source.num_visible()));
        }
        let batch = source.sample_batch(cfg.batch_size, &mut self.batch_rng)?;
        let chains = self.pool.draw(&self.params, cfg.pcd_steps)?;
        let grad = stochastic_kld_gradient_mean(&batch, chains, &self.params)?;
        self.params = learning_step(&self.params, &grad, cfg.learning_rate)?;
        self.step += 1;
        hooks.after_step(self.step, &self.params, &batch)
    }

    /// Trains until `cfg.steps` learning steps have completed in total.
    pub fn run(&mut self, cfg: &TrainConfig, source: &DataSource, hooks: &mut dyn TrainHooks) -> Result<()> {
        cfg.validate()?;
        while self.step < cfg.steps {
            self.step_once(cfg, source, hooks)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (RbmParams, ChainPool) {
        (self.params, self.pool)
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            pool: self.pool.snapshot(),
            batch_rng: RngDescriptor::capture(&self.batch_rng),
            step: self.step,
        }
    }

    pub fn restore(params: RbmParams, snap: &TrainerSnapshot) -> Result<Self> {
        let pool = ChainPool::restore(&snap.pool)?;
        if let Some(state) = pool.states().first() {
            if state.v.len() != params.num_visible() || state.h.len() != params.num_hidden() {
                return Err(Error::dims("chain state", params.num_visible() + params.num_hidden(), state.v.len() + state.h.len()));
            }
        }
        Ok(Self {
            params,
            pool,
            batch_rng: snap.batch_rng.restore(),
            step: snap.step,
        })
    }
}
