use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChainState, Kernel};
use crate::error::{Error, Result};
use crate::model::RbmParams;
use crate::rng::StreamRng;

/// Linear inverse-temperature ladder from `beta_0 = 1` down to `beta_low`
/// in `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperedSchedule {
    pub beta_low: f64,
    pub steps: usize,
}

impl TemperedSchedule {
    pub fn new(beta_low: f64, steps: usize) -> Result<Self> {
        if !(beta_low > 0.0 && beta_low <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lowest inverse temperature must lie in (0, 1], got {beta_low}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "tempered transition needs at least one interval".into(),
            ));
        }
        Ok(Self { beta_low, steps })
    }

    /// `beta_0 = 1, ..., beta_steps = beta_low`.
    pub fn ladder(&self) -> Vec<f64> {
        let l = self.steps as f64;
        (0..=self.steps)
            .map(|i| {
                if i == self.steps {
                    self.beta_low
                } else {
                    1.0 - (1.0 - self.beta_low) * i as f64 / l
                }
            })
            .collect()
    }
}

impl Default for TemperedSchedule {
    fn default() -> Self {
        Self {
            beta_low: 0.9,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperedOutcome {
    pub accepted: bool,
    pub log_acceptance: f64,
}

/// One tempered transition. The chain is heated with forward sweeps at
/// `beta_1, ..., beta_l` and cooled with reverse sweeps at
/// `beta_l, ..., beta_1`; the end point replaces `state` with probability
/// `min(1, prod p_{i+1}(x_up_i) / p_i(x_up_i) * prod p_i(x_down_i) / p_{i+1}(x_down_i))`.
/// On rejection `state` is left unchanged.
pub fn tempered_transition(
    params: &RbmParams,
    state: &mut ChainState,
    schedule: &TemperedSchedule,
    clamp: Option<usize>,
    rng: &mut StreamRng,
) -> Result<TemperedOutcome> {
    state.check_dims(params)?;
    if let Some(k) = clamp {
        if k >= params.num_hidden() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: params.num_hidden(),
            });
        }
    }
    let outcomes = run(
        params,
        std::slice::from_mut(state),
        std::slice::from_mut(rng),
        schedule,
        clamp,
    );
    Ok(outcomes[0])
}

/// One tempered transition for every chain. Chains are advanced in lockstep
/// along the ladder; each consumes only its own stream, so the result equals
/// running them one after another.
pub(super) fn run(
    params: &RbmParams,
    states: &mut [ChainState],
    rngs: &mut [StreamRng],
    schedule: &TemperedSchedule,
    clamp: Option<usize>,
) -> Vec<TemperedOutcome> {
    let ladder = schedule.ladder();
    let l = schedule.steps;
    let start = states.to_vec();
    let mut log_a = vec![0.0; states.len()];
    let mut kernel = Kernel::new(params, ladder[0], clamp);

    // ln p_{i+1}(x) - ln p_i(x) = -(beta_{i+1} - beta_i) E(x), up to partition
    // functions that cancel between the two legs.
    for i in 0..l {
        kernel.set_beta(ladder[i + 1]);
        for ((state, rng), la) in states.iter_mut().zip(rngs.iter_mut()).zip(&mut log_a) {
            *la -= (ladder[i + 1] - ladder[i]) * kernel.energy(state);
            kernel.forward(state, rng);
        }
    }
    for i in (0..l).rev() {
        kernel.set_beta(ladder[i + 1]);
        for ((state, rng), la) in states.iter_mut().zip(rngs.iter_mut()).zip(&mut log_a) {
            kernel.reverse(state, rng);
            *la -= (ladder[i] - ladder[i + 1]) * kernel.energy(state);
        }
    }

    states
        .iter_mut()
        .zip(rngs.iter_mut())
        .zip(start)
        .zip(log_a)
        .map(|(((state, rng), start), log_acceptance)| {
            let u: f64 = rng.random();
            let accepted = u < log_acceptance.min(0.0).exp();
            if !accepted {
                *state = start;
            }
            TemperedOutcome {
                accepted,
                log_acceptance,
            }
        })
        .collect()
}
