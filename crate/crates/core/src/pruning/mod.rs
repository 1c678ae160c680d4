//! Removal costs of hidden units, their gradients, the joint descent update
//! rules and the node-removal loop.

mod run;

pub use run::{
    prune_run, Evaluation, NoHooks, PruneConfig, PruneHooks, PruneState, PruneStateSnapshot,
    PruneTrace, RemovalEvent, RetargetBurnIn, StepRecord,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{log_sum_exp, sigmoid, softplus, Welford};
use crate::model::{for_each_visible, BinaryVector, DiscreteDistribution, RbmParams};
use crate::objective::{
    check_distribution, data_moments, model_moments, ones, BitGroups, DistinctRows, GradientSet,
    GradientStats, SampleSums,
};
use crate::sampling::ChainState;

/// Sampled effective removal cost of one hidden unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalCostEstimate {
    pub unit_index: usize,
    pub mean: f64,
    pub unbiased_std: f64,
    pub sample_count: usize,
    /// Unbiased variances of `ln p(h_k = 0 | v)` over the data and of `h_k`
    /// over the chains.
    pub components: [f64; 2],
}

fn check_unit(params: &RbmParams, k: usize) -> Result<()> {
    if k >= params.num_hidden() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: params.num_hidden(),
        });
    }
    Ok(())
}

fn check_unit_set(params: &RbmParams, ks: &[usize]) -> Result<()> {
    for (a, &k) in ks.iter().enumerate() {
        check_unit(params, k)?;
        if ks[..a].contains(&k) {
            return Err(Error::DuplicateIndex(k));
        }
    }
    Ok(())
}

/// `C_k = -sum_v q(v) ln p(h_k = 0 | v) + ln p(h_k = 0)`.
pub fn removal_cost_exact(q: &DiscreteDistribution, params: &RbmParams, k: usize) -> Result<f64> {
    check_unit(params, k)?;
    multi_removal_cost_exact(q, params, &[k])
}

/// Joint removal cost of the units in `ks`:
/// `-sum_v q(v) sum_a ln p(h_{k_a} = 0 | v) + ln p(h_{k_1} = ... = h_{k_r} = 0)`.
pub fn multi_removal_cost_exact(
    q: &DiscreteDistribution,
    params: &RbmParams,
    ks: &[usize],
) -> Result<f64> {
    check_distribution(q, params)?;
    check_unit_set(params, ks)?;
    let probs = q.probabilities();
    let mut data_term = 0.0;
    let mut log_joint = Vec::with_capacity(probs.len());
    let mut log_off = Vec::with_capacity(probs.len());
    for_each_visible(params, |index, v, act| {
        let off: f64 = ks.iter().map(|&k| softplus(act[k])).sum();
        data_term += probs[index] * off;
        let lp = params.log_marginal_from_activations(1.0, params.visible_dot(v), act);
        log_joint.push(lp);
        log_off.push(lp - off);
    })?;
    let log_p_off = log_sum_exp(log_off) - log_sum_exp(log_joint);
    Ok(data_term + log_p_off)
}

/// Exact `p(h_k = 1)` under the model.
pub fn hidden_activity_exact(params: &RbmParams, k: usize) -> Result<f64> {
    check_unit(params, k)?;
    let mut log_joint = Vec::new();
    let mut log_on = Vec::new();
    for_each_visible(params, |_, v, act| {
        let lp = params.log_marginal_from_activations(1.0, params.visible_dot(v), act);
        log_joint.push(lp);
        log_on.push(lp + crate::math::ln_sigmoid(act[k]));
    })?;
    Ok((log_sum_exp(log_on) - log_sum_exp(log_joint)).exp())
}

/// Population effective cost
/// `C'_k = -sum_v q(v) ln p(h_k = 0 | v) - p(h_k = 1)`, an upper bound of `C_k`.
pub fn effective_removal_cost_exact(
    q: &DiscreteDistribution,
    params: &RbmParams,
    k: usize,
) -> Result<f64> {
    check_distribution(q, params)?;
    check_unit(params, k)?;
    let m = params.num_visible();
    let data_term: f64 = q
        .support()
        .map(|(index, p)| {
            let v = BinaryVector::from_index(index, m);
            p * softplus(params.hidden_activations(v.as_slice())[k])
        })
        .sum();
    Ok(data_term - hidden_activity_exact(params, k)?)
}

/// Exact `∂C_k/∂ξ` with model expectations under `p` and under
/// `p̄ = p(v, h_{\k} | h_k = 0)` by enumeration.
pub fn removal_cost_gradient_exact(
    q: &DiscreteDistribution,
    params: &RbmParams,
    k: usize,
) -> Result<GradientSet> {
    check_distribution(q, params)?;
    check_unit(params, k)?;
    let m = params.num_visible();
    let n = params.num_hidden();
    let data = data_moments(q, params)?;
    let clamped = model_moments(params, Some(k))?;
    let model = model_moments(params, None)?;
    let mut g = GradientSet::zeros(m, n);
    for i in 0..m {
        g.d_visible_bias[i] = clamped.v[i] - model.v[i];
    }
    for j in 0..n {
        g.d_hidden_bias[j] = clamped.h[j] - model.h[j];
    }
    g.d_hidden_bias[k] += data.h[k];
    for i in 0..m {
        for j in 0..n {
            let idx = i * n + j;
            g.d_weights[idx] = clamped.vh[idx] - model.vh[idx];
        }
        g.d_weights[i * n + k] += data.vh[i * n + k];
    }
    Ok(g)
}

fn check_state(params: &RbmParams, s: &ChainState) -> Result<()> {
    check_len("chain visible state", params.num_visible(), s.v.len())?;
    check_len("chain hidden state", params.num_hidden(), s.h.len())
}

#[inline]
/// Sums of per-sample `∂C_k/∂ξ` contributions. Sample `a` pairs minibatch
/// item `a mod B` (data term), clamped chain `a mod S̄` (`⟨·⟩_p̄`) and
/// unclamped chain `a mod S` (`⟨·⟩_p`).
pub(crate) fn removal_gradient_sums(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    clamped_samples: &[ChainState],
    params: &RbmParams,
    k: usize,
    second_moments: bool,
) -> Result<SampleSums> {
    if minibatch.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    if model_samples.is_empty() {
        return Err(Error::Empty("model samples"));
    }
    if clamped_samples.is_empty() {
        return Err(Error::Empty("clamped samples"));
    }
    check_unit(params, k)?;
    for v in minibatch {
        params.check_visible(v.as_slice())?;
    }
    for s in model_samples {
        check_state(params, s)?;
    }
    for (sample, s) in clamped_samples.iter().enumerate() {
        check_state(params, s)?;
        if s.h[k] != 0 {
            return Err(Error::ClampViolation { sample, unit: k });
        }
    }
    let m = params.num_visible();
    let n = params.num_hidden();
    let count = minibatch
        .len()
        .max(model_samples.len())
        .max(clamped_samples.len());

    let mut sum = GradientSet::zeros(m, n);
    let mut sq = GradientSet::zeros(m, n);
    let mut clamped_vh = vec![0.0; m * n];
    let mut model_vh = vec![0.0; m * n];
    let mut both_vh = vec![0.0; m * n];
    let mut data_k = vec![0.0; m];
    let mut data_k_sq = vec![0.0; m];
    let mut cross_k = vec![0.0; m];
    let mut clamped_groups = BitGroups::new(n);
    let mut model_groups = BitGroups::new(n);
    let mut both_groups = BitGroups::new(n);
    let (mut both_v, mut both_h) = (vec![0u8; m], vec![0u8; n]);
    let distinct = DistinctRows::new(minibatch, count);
    let wk: Vec<f64> = (0..m).map(|i| params.weight(i, k)).collect();
    let ck = params.hidden_bias()[k];
    let probs: Vec<f64> = distinct
        .rows
        .iter()
        .map(|v| sigmoid(ck + ones(v).map(|i| wk[i]).sum::<f64>()))
        .collect();
    for ((v, &pk), &w) in distinct.rows.iter().zip(&probs).zip(&distinct.weights) {
        for i in ones(v) {
            data_k[i] += w * pk;
            data_k_sq[i] += w * pk * pk;
        }
    }

    for a in 0..count {
        let d = distinct.of_item[a % minibatch.len()];
        let (v, pk) = (distinct.rows[d], probs[d]);
        let bar = &clamped_samples[a % clamped_samples.len()];
        let model = &model_samples[a % model_samples.len()];
        let (vb, hb) = (bar.v.as_slice(), bar.h.as_slice());
        let (vm, hm) = (model.v.as_slice(), model.h.as_slice());

        for i in 0..m {
            let g = vb[i] as f64 - vm[i] as f64;
            sum.d_visible_bias[i] += g;
            sq.d_visible_bias[i] += g * g;
        }
        for j in 0..n {
            let mut g = hb[j] as f64 - hm[j] as f64;
            if j == k {
                g += pk;
            }
            sum.d_hidden_bias[j] += g;
            sq.d_hidden_bias[j] += g * g;
        }
        clamped_groups.add(vb, hb);
        model_groups.add(vm, hm);
        if second_moments {
            for ((o, &x), &y) in both_v.iter_mut().zip(vb).zip(vm) {
                *o = x & y;
            }
            for ((o, &x), &y) in both_h.iter_mut().zip(hb).zip(hm) {
                *o = x & y;
            }
            both_groups.add(&both_v, &both_h);
        }
        if second_moments && hm[k] != 0 {
            for i in ones(v) {
                if vm[i] != 0 {
                    cross_k[i] += pk;
                }
            }
        }
    }
    clamped_groups.outer_into(None, &mut clamped_vh);
    model_groups.outer_into(None, &mut model_vh);
    both_groups.outer_into(None, &mut both_vh);

    for i in 0..m {
        for j in 0..n {
            let idx = i * n + j;
            sum.d_weights[idx] = clamped_vh[idx] - model_vh[idx];
            sq.d_weights[idx] = clamped_vh[idx] + model_vh[idx] - 2.0 * both_vh[idx];
        }
        sum.d_weights[i * n + k] += data_k[i];
        sq.d_weights[i * n + k] += data_k_sq[i] - 2.0 * cross_k[i];
    }
    Ok(SampleSums {
        count,
        sum,
        sum_sq: second_moments.then_some(sq),
    })
}

/// Sampled `∂C_k/∂ξ` with per-parameter means and unbiased standard
/// deviations. Every clamped state must have `h_k = 0`.
pub fn removal_cost_gradient_estimate(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    clamped_samples: &[ChainState],
    params: &RbmParams,
    k: usize,
) -> Result<GradientStats> {
    removal_gradient_sums(minibatch, model_samples, clamped_samples, params, k, true)?.stats()
}

/// `C̄'_k = mean_a softplus(a_k(v^a)) - mean_a h_k^a` with standard deviation
/// `sqrt((σ1² + σ2²) / S)`.
pub fn effective_removal_cost(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    params: &RbmParams,
    k: usize,
) -> Result<RemovalCostEstimate> {
    check_unit(params, k)?;
    let all = effective_removal_costs(minibatch, model_samples, params)?;
    Ok(all[k])
}

/// [`effective_removal_cost`] for every hidden unit in one pass.
pub fn effective_removal_costs(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    params: &RbmParams,
) -> Result<Vec<RemovalCostEstimate>> {
    let s = minibatch.len();
    if model_samples.len() != s {
        return Err(Error::InvalidArgument(format!(
            "effective removal cost needs equal sample counts, got {s} data vectors and {} chain states",
            model_samples.len()
        )));
    }
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "effective removal cost needs at least two samples, got {s}"
        )));
    }
    let n = params.num_hidden();
    for v in minibatch {
        params.check_visible(v.as_slice())?;
    }
    // Data side: weighted moments over the distinct vectors, shifted by the
    // first vector's value so that a constant column has exactly zero spread.
    let distinct = DistinctRows::new(minibatch, s);
    let offs: Vec<Vec<f64>> = distinct
        .rows
        .iter()
        .map(|v| params.hidden_activations(v).into_iter().map(softplus).collect())
        .collect();
    let pivot = offs[0].clone();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for (row, &w) in offs.iter().zip(&distinct.weights) {
        for k in 0..n {
            let d = row[k] - pivot[k];
            sum[k] += w * d;
            sum_sq[k] += w * d * d;
        }
    }
    let data_mean: Vec<f64> = (0..n).map(|k| pivot[k] + sum[k] / s as f64).collect();
    let data_var: Vec<f64> = (0..n)
        .map(|k| ((sum_sq[k] - sum[k] * sum[k] / s as f64) / (s - 1) as f64).max(0.0))
        .collect();
    let mut model = vec![Welford::new(); n];
    for state in model_samples {
        check_state(params, state)?;
        for (w, &h) in model.iter_mut().zip(state.h.as_slice()) {
            w.push(h as f64);
        }
    }
    Ok((0..n)
        .map(|k| {
            let s1 = data_var[k];
            let s2 = model[k].variance();
            RemovalCostEstimate {
                unit_index: k,
                mean: data_mean[k] - model[k].mean(),
                unbiased_std: ((s1 + s2) / s as f64).sqrt(),
                sample_count: s,
                components: [s1, s2],
            }
        })
        .collect())
}

/// `C̄'_k + a σ̄ ≤ 0`.
pub fn removal_criterion(est: &RemovalCostEstimate, a: f64) -> bool {
    est.mean + a * est.unbiased_std <= 0.0
}

fn check_pair(d: &GradientSet, c: &GradientSet) -> Result<()> {
    check_len("gradient visible dimension", d.num_visible(), c.num_visible())?;
    check_len("gradient hidden dimension", d.num_hidden(), c.num_hidden())
}

fn check_rate(nu: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "parameter change rate must be positive, got {nu}"
        )));
    }
    Ok(())
}

/// `Δξ_i = -ν θ(∂_i D ∂_i C_k) ∂_i D` with `θ(x) = 1` for `x ≥ 0`.
pub fn naive_update(d_d: &GradientSet, d_c: &GradientSet, nu: f64) -> Result<GradientSet> {
    check_pair(d_d, d_c)?;
    check_rate(nu)?;
    let mut out = d_d.clone();
    for (o, g_c) in out.iter_flat_mut().zip(d_c.iter_flat()) {
        let g_d = *o;
        *o = if g_d * g_c >= 0.0 { -nu * g_d } else { 0.0 };
    }
    Ok(out)
}

/// `√S mean / std`, with `None` for `0 / 0` and `±∞` for a zero spread
/// around a nonzero mean.
fn t_ratio(mean: f64, std: f64, count: usize) -> Option<f64> {
    if std > 0.0 {
        Some((count as f64).sqrt() * mean / std)
    } else if mean == 0.0 {
        None
    } else {
        Some(mean.signum() * f64::INFINITY)
    }
}

/// Probability that parameter `i` moves under the stochastic rule.
pub fn update_probability(d_d: &GradientStats, d_c: &GradientStats, i: usize) -> f64 {
    let flat = |g: &GradientSet| g.iter_flat().nth(i).expect("index in range");
    let t_d = t_ratio(flat(&d_d.mean), flat(&d_d.unbiased_std), d_d.sample_count);
    let t_c = t_ratio(flat(&d_c.mean), flat(&d_c.unbiased_std), d_c.sample_count);
    gate_probability(t_d, t_c)
}

fn gate_probability(t_d: Option<f64>, t_c: Option<f64>) -> f64 {
    match (t_d, t_c) {
        (Some(x), Some(y)) => {
            let prod = x * y;
            if prod.is_nan() {
                0.5
            } else {
                sigmoid(prod)
            }
        }
        _ => 1.0,
    }
}

/// `Δξ_i = -ν z_i mean(∂_i D)` with `z_i ~ Bernoulli(sig(t_D,i t_C,i))`
/// and `t = √S mean / std`. One uniform is drawn per parameter.
pub fn stochastic_update<R: Rng + ?Sized>(
    d_d: &GradientStats,
    d_c: &GradientStats,
    nu: f64,
    rng: &mut R,
) -> Result<GradientSet> {
    check_pair(&d_d.mean, &d_c.mean)?;
    check_rate(nu)?;
    if d_d.sample_count != d_c.sample_count {
        return Err(Error::InvalidArgument(format!(
            "gradient statistics use different sample counts ({} and {})",
            d_d.sample_count, d_c.sample_count
        )));
    }
    let mut out = d_d.mean.clone();
    let stats = d_d
        .unbiased_std
        .iter_flat()
        .zip(d_c.mean.iter_flat())
        .zip(d_c.unbiased_std.iter_flat());
    for (o, ((std_d, mean_c), std_c)) in out.iter_flat_mut().zip(stats) {
        let mean_d = *o;
        let p = gate_probability(
            t_ratio(mean_d, std_d, d_d.sample_count),
            t_ratio(mean_c, std_c, d_c.sample_count),
        );
        let u: f64 = rng.random();
        *o = if u < p { -nu * mean_d } else { 0.0 };
    }
    Ok(out)
}
