use serde::{Deserialize, Serialize};

use super::{ChainState, Kernel};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, Welford};
use crate::model::RbmParams;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisConfig {
    pub num_samples: usize,
    pub num_intervals: usize,
    pub seed: u64,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self {
            num_samples: 100,
            num_intervals: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisEstimate {
    pub log_z: f64,
    /// Delta-method standard deviation of `log_z`.
    pub log_z_std: f64,
}

/// Annealed importance sampling estimate of `ln Z`.
///
/// The path runs through `p_beta ∝ e^{-beta E(v, h)}` on a linear grid from
/// `beta = 0` (uniform over all `2^{M+N}` states, `ln Z_0 = (M + N) ln 2`) to
/// `beta = 1`, with one block Gibbs sweep at every intermediate `beta`. The
/// importance weights use the hidden-marginalized `ln p*_beta(v)`, which is
/// exact for the same path.
pub fn ais_log_partition(params: &RbmParams, cfg: &AisConfig) -> Result<AisEstimate> {
    if cfg.num_samples == 0 || cfg.num_intervals == 0 {
        return Err(Error::InvalidArgument(
            "AIS needs at least one sample and one interval".into(),
        ));
    }
    let m = params.num_visible();
    let n = params.num_hidden();
    let k = cfg.num_intervals;
    let mut kernel = Kernel::untabled(params, 1.0, None);
    let mut act = vec![0.0; n];
    let mut log_weights = Vec::with_capacity(cfg.num_samples);

    for s in 0..cfg.num_samples {
        let mut rng = stream_rng(cfg.seed, s as u64);
        let mut state = ChainState::random(m, n, &mut rng);
        let mut log_w = 0.0;
        let mut prev_beta = 0.0;
        for t in 1..=k {
            let beta = t as f64 / k as f64;
            params.hidden_activations_into(state.v.as_slice(), &mut act);
            let vdot = params.visible_dot(state.v.as_slice());
            log_w += params.log_marginal_from_activations(beta, vdot, &act)
                - params.log_marginal_from_activations(prev_beta, vdot, &act);
            if t < k {
                kernel.set_beta(beta);
                kernel.forward(&mut state, &mut rng);
            }
            prev_beta = beta;
        }
        log_weights.push(log_w);
    }

    let count = log_weights.len() as f64;
    let log_mean = log_sum_exp(log_weights.iter().copied()) - count.ln();
    let log_z0 = (m + n) as f64 * std::f64::consts::LN_2;

    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut stats = Welford::new();
    for &lw in &log_weights {
        stats.push((lw - max).exp());
    }
    let log_z_std = if log_weights.len() < 2 {
        0.0
    } else {
        stats.variance().sqrt() / (count.sqrt() * stats.mean())
    };

    Ok(AisEstimate {
        log_z: log_z0 + log_mean,
        log_z_std,
    })
}
