use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{
    effective_removal_costs, removal_criterion, removal_gradient_sums, stochastic_update,
    RemovalCostEstimate,
};
use crate::data::DataSource;
use crate::error::{Error, Result};
use crate::model::{remove_hidden_unit, BinaryVector, RbmParams};
use crate::objective::{apply_update, kld_gradient_sums};
use crate::rng::{derive_seed, stream_rng, streams, RngDescriptor, StreamRng};
use crate::sampling::{ChainPool, PoolSnapshot, TemperedSchedule};

/// How a freshly re-targeted clamped pool is equilibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetargetBurnIn {
    /// One tempered transition per chain.
    Tempered,
    /// The given number of clamped Gibbs sweeps before the step's own PCD
    /// draw. With 0 the PCD draw alone equilibrates the pool.
    Gibbs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Confidence multiplier of the removal criterion.
    pub a: f64,
    /// Parameter change rate.
    pub nu: f64,
    pub samples_per_step: usize,
    pub pcd_steps: usize,
    pub tempered: TemperedSchedule,
    /// Tempered transitions per chain after each removal.
    pub tempered_refreshes: usize,
    pub retarget_burn_in: RetargetBurnIn,
    pub max_steps: u64,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            a: 3.0,
            nu: 1e-2,
            samples_per_step: 1000,
            pcd_steps: 5,
            tempered: TemperedSchedule::default(),
            tempered_refreshes: 1,
            retarget_burn_in: RetargetBurnIn::Gibbs(0),
            max_steps: 0,
            seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.a >= 0.0) {
            return bad(format!("confidence multiplier a must be non-negative, got {}", self.a));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return bad(format!("parameter change rate must be positive, got {}", self.nu));
        }
        if self.samples_per_step < 2 {
            return bad(format!(
                "samples per step must be at least 2, got {}",
                self.samples_per_step
            ));
        }
        if self.pcd_steps == 0 {
            return bad("PCD step count must be at least 1".into());
        }
        TemperedSchedule::new(self.tempered.beta_low, self.tempered.steps)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalEvent {
    pub unit_index: usize,
    /// Index of the unit in the model the run started from.
    pub unit_id: usize,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub num_hidden_after: usize,
    pub tempered_accepted: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_kld: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_error: Option<f64>,
}

/// One outer iteration: removals first, then one descent step on the
/// cheapest remaining unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Hidden units left after this step.
    pub num_hidden: usize,
    pub removals: Vec<RemovalEvent>,
    /// Unit whose cost was descended, with its estimate before the update.
    pub target_unit: Option<usize>,
    pub target_unit_id: Option<usize>,
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
    pub retargeted: bool,
    pub evaluation: Option<Evaluation>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub records: Vec<StepRecord>,
}

impl PruneTrace {
    pub fn removals(&self) -> impl Iterator<Item = &RemovalEvent> + '_ {
        self.records.iter().flat_map(|r| &r.removals)
    }

    pub fn final_num_hidden(&self) -> Option<usize> {
        self.records.last().map(|r| r.num_hidden)
    }
}

/// Observers called by the removal loop.
pub trait PruneHooks {
    /// Called after the update of every step.
    fn evaluate(&mut self, _step: u64, _params: &RbmParams, _batch: &[BinaryVector]) -> Result<Option<Evaluation>> {
        Ok(None)
    }

    fn record(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoHooks;

impl PruneHooks for NoHooks {}

/// Everything the removal loop carries between steps.
#[derive(Debug, Clone)]
pub struct PruneState {
    params: RbmParams,
    unit_ids: Vec<usize>,
    step: u64,
    pool: ChainPool,
    clamped: Option<ChainPool>,
    batch_rng: StreamRng,
    update_rng: StreamRng,
    clamp_seed_rng: StreamRng,
    retargets: u64,
    finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Everything besides the parameters needed to resume a removal run.
pub struct PruneStateSnapshot {
    pub unit_ids: Vec<usize>,
    pub step: u64,
    pub pool: PoolSnapshot,
    pub clamped: Option<PoolSnapshot>,
    pub batch_rng: RngDescriptor,
    pub update_rng: RngDescriptor,
    pub clamp_seed_rng: RngDescriptor,
    pub retargets: u64,
    pub finished: bool,
}

impl PruneState {
    /// Starts a run from `params`. The sampling pool inherits the states of
    /// `training_pool` when given, and otherwise starts from fair coins.
    pub fn new(params: RbmParams, training_pool: Option<&ChainPool>, cfg: &PruneConfig) -> Result<Self> {
        cfg.validate()?;
        let pool_seed = derive_seed(cfg.seed, streams::PRUNE_POOL);
        let size = cfg.samples_per_step;
        let pool = match training_pool {
            Some(src) => {
                if let Some(s) = src.states().first() {
                    if s.v.len() != params.num_visible() || s.h.len() != params.num_hidden() {
                        return Err(Error::dims("training pool state", params.num_visible(), s.v.len()));
                    }
                }
                ChainPool::inherit(src, size, pool_seed)?
            }
            None => ChainPool::new_random(params.num_visible(), params.num_hidden(), size, pool_seed)?,
        };
        Ok(Self {
            unit_ids: (0..params.num_hidden()).collect(),
            params,
            step: 0,
            pool,
            clamped: None,
            batch_rng: stream_rng(cfg.seed, streams::MINIBATCH),
            update_rng: stream_rng(cfg.seed, streams::UPDATE),
            clamp_seed_rng: stream_rng(cfg.seed, streams::CLAMPED_POOL),
            retargets: 0,
            finished: false,
        })
    }

    pub fn params(&self) -> &RbmParams {
        &self.params
    }

    pub fn unit_ids(&self) -> &[usize] {
        &self.unit_ids
    }

    /// Completed outer iterations.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of times the clamped pool was rebuilt for a new target unit.
    pub fn retargets(&self) -> u64 {
        self.retargets
    }

    /// True once every hidden unit has been removed.
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn pool(&self) -> &ChainPool {
        &self.pool
    }

    fn remove_unit(&mut self, k: usize, cfg: &PruneConfig) -> Result<usize> {
        self.params = remove_hidden_unit(&self.params, k)?;
        self.unit_ids.remove(k);
        self.pool.remove_hidden(k);
        if let Some(c) = &mut self.clamped {
            if c.clamp() == Some(k) {
                self.clamped = None;
            } else {
                c.remove_hidden(k);
            }
        }
        let mut accepted = 0;
        if self.params.num_hidden() > 0 {
            for _ in 0..cfg.tempered_refreshes {
                accepted += self.pool.tempered_refresh(&self.params, &cfg.tempered)?;
                if let Some(c) = &mut self.clamped {
                    c.tempered_refresh(&self.params, &cfg.tempered)?;
                }
            }
        }
        Ok(accepted)
    }

    fn retarget(&mut self, k: usize, cfg: &PruneConfig) -> Result<bool> {
        if self.clamped.as_ref().and_then(ChainPool::clamp) == Some(k) {
            return Ok(false);
        }
        let seed = self.clamp_seed_rng.next_u64();
        let mut pool = ChainPool::clamp_from(&self.pool, k, seed)?;
        match cfg.retarget_burn_in {
            RetargetBurnIn::Tempered => {
                pool.tempered_refresh(&self.params, &cfg.tempered)?;
            }
            RetargetBurnIn::Gibbs(0) => {}
            RetargetBurnIn::Gibbs(n) => {
                pool.draw(&self.params, n)?;
            }
        }
        self.clamped = Some(pool);
        self.retargets += 1;
        Ok(true)
    }

    /// One outer iteration of the removal loop.
    pub fn step_once(
        &mut self,
        cfg: &PruneConfig,
        source: &DataSource,
        hooks: &mut dyn PruneHooks,
    ) -> Result<StepRecord> {
        cfg.validate()?;
        if source.num_visible() != self.params.num_visible() {
            return Err(Error::dims("data dimension", self.params.num_visible(), source.num_visible()));
        }
        let s = cfg.samples_per_step;
        let mut record = StepRecord {
            step: self.step,
            num_hidden: self.params.num_hidden(),
            removals: Vec::new(),
            target_unit: None,
            target_unit_id: None,
            cost_mean: None,
            cost_std: None,
            retargeted: false,
            evaluation: None,
            note: None,
        };
        if self.finished {
            record.note = Some("no hidden units left".into());
            return Ok(record);
        }

        let (batch, target) = loop {
            if self.params.num_hidden() == 0 {
                self.finished = true;
                record.num_hidden = 0;
                record.note = Some("all hidden units removed".into());
                self.step += 1;
                hooks.record(&record)?;
                return Ok(record);
            }
            let batch = source.sample_batch(s, &mut self.batch_rng)?;
            let chains = self.pool.draw(&self.params, cfg.pcd_steps)?;
            let costs = effective_removal_costs(&batch, chains, &self.params)?;
            let best = argmin(&costs)?;
            if removal_criterion(&best, cfg.a) {
                let k = best.unit_index;
                let unit_id = self.unit_ids[k];
                let accepted = self.remove_unit(k, cfg)?;
                record.removals.push(RemovalEvent {
                    unit_index: k,
                    unit_id,
                    cost_mean: best.mean,
                    cost_std: best.unbiased_std,
                    num_hidden_after: self.params.num_hidden(),
                    tempered_accepted: accepted,
                });
                continue;
            }
            break (batch, best);
        };

        let k = target.unit_index;
        record.target_unit = Some(k);
        record.target_unit_id = Some(self.unit_ids[k]);
        record.cost_mean = Some(target.mean);
        record.cost_std = Some(target.unbiased_std);
        record.retargeted = self.retarget(k, cfg)?;

        let clamped = self
            .clamped
            .as_mut()
            .expect("clamped pool exists after retarget")
            .draw(&self.params, cfg.pcd_steps)?;
        let chains = self.pool.states();
        let d_d = kld_gradient_sums(&batch, chains, &self.params, true)?.stats()?;
        let d_c = removal_gradient_sums(&batch, chains, clamped, &self.params, k, true)?.stats()?;
        let delta = stochastic_update(&d_d, &d_c, cfg.nu, &mut self.update_rng)?;
        self.params = apply_update(&self.params, &delta)?;
        self.step += 1;

        record.num_hidden = self.params.num_hidden();
        record.evaluation = hooks.evaluate(self.step, &self.params, &batch)?;
        hooks.record(&record)?;
        Ok(record)
    }

    /// Runs until `cfg.max_steps` outer iterations have completed in total
    /// or every unit is gone.
    pub fn run(
        &mut self,
        cfg: &PruneConfig,
        source: &DataSource,
        hooks: &mut dyn PruneHooks,
        trace: &mut PruneTrace,
    ) -> Result<()> {
        while self.step < cfg.max_steps && !self.finished {
            let record = self.step_once(cfg, source, hooks)?;
            trace.records.push(record);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> PruneStateSnapshot {
        PruneStateSnapshot {
            unit_ids: self.unit_ids.clone(),
            step: self.step,
            pool: self.pool.snapshot(),
            clamped: self.clamped.as_ref().map(ChainPool::snapshot),
            batch_rng: RngDescriptor::capture(&self.batch_rng),
            update_rng: RngDescriptor::capture(&self.update_rng),
            clamp_seed_rng: RngDescriptor::capture(&self.clamp_seed_rng),
            retargets: self.retargets,
            finished: self.finished,
        }
    }

    pub fn restore(params: RbmParams, snap: &PruneStateSnapshot) -> Result<Self> {
        if snap.unit_ids.len() != params.num_hidden() {
            return Err(Error::dims("unit ids", params.num_hidden(), snap.unit_ids.len()));
        }
        for pool in std::iter::once(&snap.pool).chain(&snap.clamped) {
            if let Some(state) = pool.states.first() {
                if state.v.len() != params.num_visible() || state.h.len() != params.num_hidden() {
                    return Err(Error::dims(
                        "chain state",
                        params.num_visible() + params.num_hidden(),
                        state.v.len() + state.h.len(),
                    ));
                }
            }
        }
        Ok(Self {
            params,
            unit_ids: snap.unit_ids.clone(),
            step: snap.step,
            pool: ChainPool::restore(&snap.pool)?,
            clamped: snap.clamped.as_ref().map(ChainPool::restore).transpose()?,
            batch_rng: snap.batch_rng.restore(),
            update_rng: snap.update_rng.restore(),
            clamp_seed_rng: snap.clamp_seed_rng.restore(),
            retargets: snap.retargets,
            finished: snap.finished,
        })
    }
}

/// Lowest mean cost; ties go to the lowest index.
fn argmin(costs: &[RemovalCostEstimate]) -> Result<RemovalCostEstimate> {
    let mut best: Option<RemovalCostEstimate> = None;
    for c in costs {
        if !c.mean.is_finite() || !c.unbiased_std.is_finite() {
            return Err(Error::NonFinite("removal cost estimate"));
        }
        if best.is_none_or(|b| c.mean < b.mean) {
            best = Some(*c);
        }
    }
    best.ok_or(Error::Empty("hidden units"))
}

/// Runs the removal loop for `cfg.max_steps` outer iterations.
pub fn prune_run(
    params: &RbmParams,
    source: &DataSource,
    cfg: &PruneConfig,
    training_pool: Option<&ChainPool>,
    hooks: &mut dyn PruneHooks,
) -> Result<(RbmParams, PruneTrace)> {
    let mut state = PruneState::new(params.clone(), training_pool, cfg)?;
    let mut trace = PruneTrace::default();
    state.run(cfg, source, hooks, &mut trace)?;
    Ok((state.params, trace))
}
