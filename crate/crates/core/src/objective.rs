//! KL divergence, its gradients (exact and sampled), the learning step, and
//! the evaluation functionals used to monitor training and pruning.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::sigmoid;
use crate::model::{
    for_each_visible, log_unnormalized_marginal_unchecked, log_unnormalized_table, BinaryVector,
    DiscreteDistribution, RbmParams,
};
use crate::sampling::ChainState;

/// One entry per model parameter, laid out like [`RbmParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub d_visible_bias: Vec<f64>,
    pub d_hidden_bias: Vec<f64>,
    /// Row-major `M x N`.
    pub d_weights: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(num_visible: usize, num_hidden: usize) -> Self {
        Self {
            d_visible_bias: vec![0.0; num_visible],
            d_hidden_bias: vec![0.0; num_hidden],
            d_weights: vec![0.0; num_visible * num_hidden],
        }
    }

    pub fn num_visible(&self) -> usize {
        self.d_visible_bias.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.d_hidden_bias.len()
    }

    pub fn len(&self) -> usize {
        self.d_visible_bias.len() + self.d_hidden_bias.len() + self.d_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.d_weights[i * self.num_hidden() + j]
    }

    /// `b`, then `c`, then `W` row-major.
    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_visible_bias
            .iter()
            .chain(&self.d_hidden_bias)
            .chain(&self.d_weights)
            .copied()
    }

    pub fn iter_flat_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.d_visible_bias
            .iter_mut()
            .chain(self.d_hidden_bias.iter_mut())
            .chain(self.d_weights.iter_mut())
    }

    pub fn from_flat(num_visible: usize, num_hidden: usize, flat: &[f64]) -> Result<Self> {
        check_len(
            "flat gradient",
            num_visible + num_hidden + num_visible * num_hidden,
            flat.len(),
        )?;
        let (b, rest) = flat.split_at(num_visible);
        let (c, w) = rest.split_at(num_hidden);
        Ok(Self {
            d_visible_bias: b.to_vec(),
            d_hidden_bias: c.to_vec(),
            d_weights: w.to_vec(),
        })
    }

    pub fn dot(&self, other: &GradientSet) -> f64 {
        self.iter_flat().zip(other.iter_flat()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter_flat().all(f64::is_finite)
    }

    pub(crate) fn check_matches(&self, params: &RbmParams) -> Result<()> {
        check_len("gradient visible dimension", params.num_visible(), self.num_visible())?;
        check_len("gradient hidden dimension", params.num_hidden(), self.num_hidden())?;
        check_len("gradient weights", params.num_visible() * params.num_hidden(), self.d_weights.len())
    }
}

/// Per-parameter sample mean and unbiased standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub mean: GradientSet,
    pub unbiased_std: GradientSet,
    pub sample_count: usize,
}

/// Exact model expectations `<v_i>`, `<h_j>`, `<v_i h_j>`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub v: Vec<f64>,
    pub h: Vec<f64>,
    pub vh: Vec<f64>,
}

impl Moments {
    fn zeros(m: usize, n: usize) -> Self {
        Self {
            v: vec![0.0; m],
            h: vec![0.0; n],
            vh: vec![0.0; m * n],
        }
    }

    fn add(&mut self, weight: f64, v: &[u8], hidden_prob: &[f64]) {
        let n = self.h.len();
        for (hj, &p) in self.h.iter_mut().zip(hidden_prob) {
            *hj += weight * p;
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0 {
                self.v[i] += weight;
                for (o, &p) in self.vh[i * n..(i + 1) * n].iter_mut().zip(hidden_prob) {
                    *o += weight * p;
                }
            }
        }
    }
}

/// Expectations under `p(v, h)`, or under `p(v, h_{\k} | h_k = 0)` when
/// `clamp = Some(k)`, by enumeration over visible configurations.
pub(crate) fn model_moments(params: &RbmParams, clamp: Option<usize>) -> Result<Moments> {
    let m = params.num_visible();
    let n = params.num_hidden();
    let mut log_w = Vec::with_capacity(1 << m.min(24));
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(1 << m.min(24));
    let mut visibles: Vec<Vec<u8>> = Vec::with_capacity(1 << m.min(24));
    for_each_visible(params, |_, v, act| {
        let mut lw = params.log_marginal_from_activations(1.0, params.visible_dot(v), act);
        let mut p: Vec<f64> = act.iter().map(|&a| sigmoid(a)).collect();
        if let Some(k) = clamp {
            // p*(v) p(h_k = 0 | v) = p*(v) e^{-softplus(a_k)}
            lw -= crate::math::softplus(act[k]);
            p[k] = 0.0;
        }
        log_w.push(lw);
        probs.push(p);
        visibles.push(v.to_vec());
    })?;
    let log_z = crate::math::log_sum_exp(log_w.iter().copied());
    let mut out = Moments::zeros(m, n);
    for ((lw, p), v) in log_w.iter().zip(&probs).zip(&visibles) {
        out.add((lw - log_z).exp(), v, p);
    }
    Ok(out)
}

/// `sum_v q(v) v_i`, `sum_v q(v) p(h_j=1|v)`, `sum_v q(v) v_i p(h_j=1|v)`.
pub(crate) fn data_moments(q: &DiscreteDistribution, params: &RbmParams) -> Result<Moments> {
    check_distribution(q, params)?;
    let m = params.num_visible();
    let n = params.num_hidden();
    let mut out = Moments::zeros(m, n);
    for (index, weight) in q.support() {
        let v = BinaryVector::from_index(index, m);
        let p: Vec<f64> = params
            .hidden_activations(v.as_slice())
            .into_iter()
            .map(sigmoid)
            .collect();
        out.add(weight, v.as_slice(), &p);
    }
    Ok(out)
}

pub(crate) fn check_distribution(q: &DiscreteDistribution, params: &RbmParams) -> Result<()> {
    check_len("distribution visible dimension", params.num_visible(), q.num_visible())
}

/// `D(q || p) = sum_v q(v) ln(q(v) / p(v))` with `0 ln 0 = 0`.
pub fn exact_kld(q: &DiscreteDistribution, params: &RbmParams) -> Result<f64> {
    check_distribution(q, params)?;
    let table = log_unnormalized_table(params)?;
    let log_z = crate::math::log_sum_exp(table.iter().copied());
    Ok(q
        .support()
        .map(|(index, qv)| qv * (qv.ln() - (table[index] - log_z)))
        .sum())
}

/// Exact gradient of `D(q || p)` with respect to `b`, `c` and `W`.
pub fn exact_kld_gradient(q: &DiscreteDistribution, params: &RbmParams) -> Result<GradientSet> {
    let data = data_moments(q, params)?;
    let model = model_moments(params, None)?;
    Ok(GradientSet {
        d_visible_bias: diff(&model.v, &data.v),
        d_hidden_bias: diff(&model.h, &data.h),
        d_weights: diff(&model.vh, &data.vh),
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Per-parameter first and second moment sums over paired samples.
#[derive(Debug, Clone)]
pub(crate) struct SampleSums {
    pub count: usize,
    pub sum: GradientSet,
    pub sum_sq: Option<GradientSet>,
}

impl SampleSums {
    pub fn mean(&self) -> GradientSet {
        let s = self.count as f64;
        let mut out = self.sum.clone();
        out.iter_flat_mut().for_each(|x| *x /= s);
        out
    }

    /// Mean and unbiased standard deviation. A variance that falls below the
    /// rounding floor of the sum-of-squares formula is reported as zero.
    pub fn stats(&self) -> Result<GradientStats> {
        if self.count < 2 {
            return Err(Error::InvalidArgument(
                "gradient statistics need at least two samples".into(),
            ));
        }
        let sum_sq = self
            .sum_sq
            .as_ref()
            .expect("second moments were accumulated");
        let s = self.count as f64;
        let floor = 4.0 * s * f64::EPSILON;
        let mean = self.mean();
        let mut std = GradientSet::zeros(mean.num_visible(), mean.num_hidden());
        for ((out, (&sum, &sq)), &mu) in std
            .iter_flat_mut()
            .zip(self.sum.iter_flat().collect::<Vec<_>>().iter().zip(sum_sq.iter_flat().collect::<Vec<_>>().iter()))
            .zip(mean.iter_flat().collect::<Vec<_>>().iter())
        {
            let centered = sq - sum * mu;
            *out = if centered <= floor * sq.abs() {
                0.0
            } else {
                (centered / (s - 1.0)).sqrt()
            };
        }
        Ok(GradientStats {
            mean,
            unbiased_std: std,
            sample_count: self.count,
        })
    }
}

/// Distinct minibatch vectors in first-seen order, how often each is used
/// when `count` samples cycle through the minibatch, and the distinct index
/// of every minibatch item.
pub(crate) struct DistinctRows<'a> {
    pub rows: Vec<&'a [u8]>,
    pub weights: Vec<f64>,
    pub of_item: Vec<usize>,
}

impl<'a> DistinctRows<'a> {
    pub fn new(minibatch: &'a [BinaryVector], count: usize) -> Self {
        let b = minibatch.len();
        let mut index: HashMap<&'a [u8], usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut weights = Vec::new();
        let mut of_item = Vec::with_capacity(b);
        for (item, v) in minibatch.iter().enumerate() {
            let uses = (count / b + usize::from(item < count % b)) as f64;
            let d = *index.entry(v.as_slice()).or_insert_with(|| {
                rows.push(v.as_slice());
                weights.push(0.0);
                rows.len() - 1
            });
            weights[d] += uses;
            of_item.push(d);
        }
        Self { rows, weights, of_item }
    }

    /// `p(h_j = 1 | v)` for every distinct row.
    pub fn hidden_probabilities(&self, params: &RbmParams) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|v| {
                let mut p = params.hidden_activations(v);
                p.iter_mut().for_each(|x| *x = sigmoid(*x));
                p
            })
            .collect()
    }
}

/// Counts of hidden bits grouped by a visible key, in first-seen key order.
/// Turns per-sample outer products `v h^T` into one product per distinct
/// key.
pub(crate) struct BitGroups {
    index: HashMap<Vec<u8>, usize>,
    keys: Vec<Vec<u8>>,
    counts: Vec<f64>,
    width: usize,
}

impl BitGroups {
    pub fn new(width: usize) -> Self {
        Self {
            index: HashMap::new(),
            keys: Vec::new(),
            counts: Vec::new(),
            width,
        }
    }

    /// Adds `bits` to the group of `key`. All-zero keys contribute nothing
    /// to an outer product and are skipped.
    pub fn add(&mut self, key: &[u8], bits: &[u8]) {
        if key.iter().all(|&b| b == 0) {
            return;
        }
        let g = match self.index.get(key) {
            Some(&g) => g,
            None => {
                let g = self.keys.len();
                self.index.insert(key.to_vec(), g);
                self.keys.push(key.to_vec());
                self.counts.resize(self.counts.len() + self.width, 0.0);
                g
            }
        };
        let row = &mut self.counts[g * self.width..(g + 1) * self.width];
        for j in ones(bits) {
            row[j] += 1.0;
        }
    }

    /// `out[i][j] += sum_groups key_i * scale_j * count_j`.
    pub fn outer_into(&self, scale: Option<&[f64]>, out: &mut [f64]) {
        let n = self.width;
        for (key, counts) in self.keys.iter().zip(self.counts.chunks_exact(n.max(1))) {
            for i in ones(key) {
                let row = &mut out[i * n..(i + 1) * n];
                match scale {
                    Some(s) => {
                        for ((o, &c), &x) in row.iter_mut().zip(counts).zip(s) {
                            *o += c * x;
                        }
                    }
                    None => {
                        for (o, &c) in row.iter_mut().zip(counts) {
                            *o += c;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn ones(bits: &[u8]) -> impl Iterator<Item = usize> + '_ {
    bits.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i)
}

fn check_state(params: &RbmParams, s: &ChainState) -> Result<()> {
    check_len("chain visible state", params.num_visible(), s.v.len())?;
    check_len("chain hidden state", params.num_hidden(), s.h.len())
}

/// Sums of the per-sample contributions
/// `g_a = (model term of chain a) - (data term of minibatch item a)`,
/// pairing item `a mod B` with chain `a mod S_c` for `a < max(B, S_c)`.
pub(crate) fn kld_gradient_sums(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    params: &RbmParams,
    second_moments: bool,
) -> Result<SampleSums> {
    if minibatch.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    if model_samples.is_empty() {
        return Err(Error::Empty("model samples"));
    }
    let m = params.num_visible();
    let n = params.num_hidden();
    for v in minibatch {
        params.check_visible(v.as_slice())?;
    }
    for s in model_samples {
        check_state(params, s)?;
    }
    let count = minibatch.len().max(model_samples.len());
    let distinct = DistinctRows::new(minibatch, count);
    let probs = distinct.hidden_probabilities(params);

    let mut sum = GradientSet::zeros(m, n);
    let mut sq = GradientSet::zeros(m, n);
    // Weight-entry second moments: sum v p^2 and sum (v v') p h'.
    let mut data_sq = vec![0.0; m * n];
    let mut cross = vec![0.0; m * n];
    let mut model_vh = vec![0.0; m * n];
    let mut model_groups = BitGroups::new(n);
    let mut cross_groups: Vec<BitGroups> = distinct.rows.iter().map(|_| BitGroups::new(n)).collect();
    let mut both = vec![0u8; m];

    for ((v, p), &w) in distinct.rows.iter().zip(&probs).zip(&distinct.weights) {
        for i in ones(v) {
            let row = &mut sum.d_weights[i * n..(i + 1) * n];
            for (o, &pj) in row.iter_mut().zip(p) {
                *o -= w * pj;
            }
            if second_moments {
                let row = &mut data_sq[i * n..(i + 1) * n];
                for (o, &pj) in row.iter_mut().zip(p) {
                    *o += w * pj * pj;
                }
            }
        }
    }

    for a in 0..count {
        let d = distinct.of_item[a % minibatch.len()];
        let (v, p) = (distinct.rows[d], &probs[d]);
        let chain = &model_samples[a % model_samples.len()];
        let (vm, hm) = (chain.v.as_slice(), chain.h.as_slice());

        for i in 0..m {
            let g = vm[i] as f64 - v[i] as f64;
            sum.d_visible_bias[i] += g;
            sq.d_visible_bias[i] += g * g;
        }
        for j in 0..n {
            let g = hm[j] as f64 - p[j];
            sum.d_hidden_bias[j] += g;
            sq.d_hidden_bias[j] += g * g;
        }
        if second_moments {
            for ((o, &x), &y) in both.iter_mut().zip(v).zip(vm) {
                *o = x & y;
            }
            cross_groups[d].add(&both, hm);
        }
        model_groups.add(vm, hm);
    }
    model_groups.outer_into(None, &mut model_vh);
    for (g, p) in cross_groups.iter().zip(&probs) {
        g.outer_into(Some(p), &mut cross);
    }

    for (s, &c) in sum.d_weights.iter_mut().zip(&model_vh) {
        *s += c;
    }
    let sum_sq = if second_moments {
        for (((o, &d), &x), &c) in sq.d_weights.iter_mut().zip(&data_sq).zip(&cross).zip(&model_vh) {
            *o = c - 2.0 * x + d;
        }
        Some(sq)
    } else {
        None
    };
    Ok(SampleSums { count, sum, sum_sq })
}

/// Sampled `∂D/∂ξ`: per-parameter mean and unbiased standard deviation over
/// paired minibatch items and chain states.
pub fn stochastic_kld_gradient(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    params: &RbmParams,
) -> Result<GradientStats> {
    kld_gradient_sums(minibatch, model_samples, params, true)?.stats()
}

/// Mean of the sampled `∂D/∂ξ` only; the training loop needs nothing else.
pub fn stochastic_kld_gradient_mean(
    minibatch: &[BinaryVector],
    model_samples: &[ChainState],
    params: &RbmParams,
) -> Result<GradientSet> {
    Ok(kld_gradient_sums(minibatch, model_samples, params, false)?.mean())
}

/// `ξ - λ ∇D`.
pub fn learning_step(params: &RbmParams, grad: &GradientSet, lambda: f64) -> Result<RbmParams> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lambda}"
        )));
    }
    grad.check_matches(params)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let mut out = params.clone();
    for (x, g) in out.flat_mut().zip(grad.iter_flat()) {
        *x -= lambda * g;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("parameters after learning step"));
    }
    Ok(out)
}

/// `ξ + Δξ`.
pub fn apply_update(params: &RbmParams, delta: &GradientSet) -> Result<RbmParams> {
    delta.check_matches(params)?;
    let mut out = params.clone();
    for (x, d) in out.flat_mut().zip(delta.iter_flat()) {
        *x += d;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(out)
}

/// Probability clamp applied before taking logarithms in
/// [`reconstruction_error`].
pub const RECONSTRUCTION_CLAMP: f64 = 1e-12;

/// Mean cross-entropy between each minibatch vector and its one-step
/// mean-field reconstruction `ṽ = sig(b + W sig(c + W^T v))`.
pub fn reconstruction_error(minibatch: &[BinaryVector], params: &RbmParams) -> Result<f64> {
    if minibatch.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    let mut h = vec![0.0; params.num_hidden()];
    let mut recon = vec![0.0; params.num_visible()];
    let mut total = 0.0;
    for v in minibatch {
        params.check_visible(v.as_slice())?;
        params.hidden_activations_into(v.as_slice(), &mut h);
        h.iter_mut().for_each(|x| *x = sigmoid(*x));
        params.visible_activations_real_into(&h, &mut recon);
        for (&vi, &a) in v.as_slice().iter().zip(&recon) {
            let p = sigmoid(a).clamp(RECONSTRUCTION_CLAMP, 1.0 - RECONSTRUCTION_CLAMP);
            total -= if vi != 0 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / minibatch.len() as f64)
}

/// Where the held-out empirical distribution `q_d` comes from.
#[derive(Debug, Clone, Copy)]
pub enum EmpiricalSource<'a> {
    Distribution(&'a DiscreteDistribution),
    Samples(&'a [BinaryVector]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DTilde {
    pub d_tilde: f64,
    pub nll: f64,
}

/// `D̃ = sum q_d ln q_d + ln Z - sum q_d ln p*(v)` and
/// `NLL = D̃ - sum q_d ln q_d = ln Z - sum q_d ln p*(v)`.
pub fn d_tilde(source: EmpiricalSource<'_>, params: &RbmParams, log_z: f64) -> Result<DTilde> {
    if !log_z.is_finite() {
        return Err(Error::NonFinite("ln Z"));
    }
    let (neg_entropy, mean_log_unnorm) = match source {
        EmpiricalSource::Distribution(q) => {
            check_distribution(q, params)?;
            let m = params.num_visible();
            let mean = q
                .support()
                .map(|(index, p)| {
                    let v = BinaryVector::from_index(index, m);
                    p * log_unnormalized_marginal_unchecked(params, v.as_slice())
                })
                .sum::<f64>();
            (q.neg_entropy(), mean)
        }
        EmpiricalSource::Samples(samples) => {
            if samples.is_empty() {
                return Err(Error::Empty("sample list"));
            }
            let mut counts: HashMap<&[u8], usize> = HashMap::new();
            for s in samples {
                params.check_visible(s.as_slice())?;
                *counts.entry(s.as_slice()).or_default() += 1;
            }
            let total = samples.len() as f64;
            // Sorted so the summation order does not depend on hashing.
            let mut entries: Vec<(&[u8], usize)> = counts.into_iter().collect();
            entries.sort_unstable();
            let mut neg_entropy = 0.0;
            let mut mean = 0.0;
            for (v, c) in entries {
                let q = c as f64 / total;
                neg_entropy += q * q.ln();
                mean += q * log_unnormalized_marginal_unchecked(params, v);
            }
            (neg_entropy, mean)
        }
    };
    let nll = log_z - mean_log_unnorm;
    Ok(DTilde {
        d_tilde: neg_entropy + nll,
        nll,
    })
}
