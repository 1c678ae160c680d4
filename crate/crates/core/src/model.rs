//! Binary RBM parameters, energy, conditionals and exact small-model marginals.
//!
//! Visible configurations are indexed little-endian: bit `i` of the index is
//! `v_i`. Every enumeration routine in the crate shares this convention.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{log_sum_exp, sigmoid, softplus};

/// Largest visible dimension accepted by exact enumeration over `2^M` states.
pub const MAX_ENUMERABLE_VISIBLE: usize = 24;
/// Largest `M + N` accepted by enumeration over joint `(v, h)` states.
pub const MAX_ENUMERABLE_JOINT: usize = 26;

/// A vector of `{0, 1}` entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>")]
pub struct BinaryVector(Vec<u8>);

impl TryFrom<Vec<u8>> for BinaryVector {
    type Error = Error;

    fn try_from(bits: Vec<u8>) -> Result<Self> {
        Self::new(bits)
    }
}

impl BinaryVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument(
                "binary vector entries must be 0 or 1".into(),
            ));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// Decodes `index` with bit `i` giving entry `i`.
    pub fn from_index(index: usize, len: usize) -> Self {
        Self((0..len).map(|i| ((index >> i) & 1) as u8).collect())
    }

    pub fn to_index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.0
    }

    pub(crate) fn remove(&mut self, index: usize) {
        self.0.remove(index);
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl std::ops::Index<usize> for BinaryVector {
    type Output = u8;

    fn index(&self, i: usize) -> &u8 {
        &self.0[i]
    }
}

/// Biases `b` (length M), `c` (length N) and the M x N weight matrix `W`,
/// stored row-major so that row `i` holds the couplings of visible unit `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct RbmParams {
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawParams> for RbmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        Self::new(raw.visible_bias, raw.hidden_bias, raw.weights)
    }
}

impl RbmParams {
    pub fn new(visible_bias: Vec<f64>, hidden_bias: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if visible_bias.is_empty() {
            return Err(Error::InvalidArgument(
                "an RBM needs at least one visible unit".into(),
            ));
        }
        check_len(
            "weight matrix",
            visible_bias.len() * hidden_bias.len(),
            weights.len(),
        )?;
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !finite(&visible_bias) {
            return Err(Error::NonFinite("visible bias"));
        }
        if !finite(&hidden_bias) {
            return Err(Error::NonFinite("hidden bias"));
        }
        if !finite(&weights) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(Self {
            visible_bias,
            hidden_bias,
            weights,
        })
    }

    /// Builds parameters from a nested `M x N` weight matrix.
    pub fn from_rows(visible_bias: Vec<f64>, hidden_bias: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        check_len("weight rows", visible_bias.len(), rows.len())?;
        let mut weights = Vec::with_capacity(visible_bias.len() * hidden_bias.len());
        for row in rows {
            check_len("weight row", hidden_bias.len(), row.len())?;
            weights.extend_from_slice(row);
        }
        Self::new(visible_bias, hidden_bias, weights)
    }

    pub fn zeros(num_visible: usize, num_hidden: usize) -> Self {
        assert!(num_visible >= 1, "an RBM needs at least one visible unit");
        Self {
            visible_bias: vec![0.0; num_visible],
            hidden_bias: vec![0.0; num_hidden],
            weights: vec![0.0; num_visible * num_hidden],
        }
    }

    /// Zero biases and weights drawn from `N(0, weight_std^2)`.
    pub fn random<R: Rng + ?Sized>(
        num_visible: usize,
        num_hidden: usize,
        weight_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros(num_visible, num_hidden);
        if weight_std > 0.0 {
            let normal = Normal::new(0.0, weight_std).expect("positive standard deviation");
            for w in &mut params.weights {
                *w = normal.sample(rng);
            }
        }
        params
    }

    /// Every parameter drawn from `N(0, std^2)`; used by tests and examples.
    pub fn random_all<R: Rng + ?Sized>(
        num_visible: usize,
        num_hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("positive standard deviation");
        let mut draw = |n: usize| (0..n).map(|_| normal.sample(rng)).collect::<Vec<_>>();
        let visible_bias = draw(num_visible);
        let hidden_bias = draw(num_hidden);
        let weights = draw(num_visible * num_hidden);
        Self {
            visible_bias,
            hidden_bias,
            weights,
        }
    }

    pub fn num_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Total number of parameters, `M + N + M * N`.
    pub fn num_params(&self) -> usize {
        self.visible_bias.len() + self.hidden_bias.len() + self.weights.len()
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    /// Row-major `M x N` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.num_hidden() + j]
    }

    pub(crate) fn weight_row(&self, i: usize) -> &[f64] {
        let n = self.num_hidden();
        &self.weights[i * n..(i + 1) * n]
    }

    /// Iterates `b`, then `c`, then `W` row-major.
    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.visible_bias
            .iter()
            .chain(&self.hidden_bias)
            .chain(&self.weights)
            .copied()
    }

    pub(crate) fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.visible_bias
            .iter_mut()
            .chain(self.hidden_bias.iter_mut())
            .chain(self.weights.iter_mut())
    }

    /// Rebuilds parameters from the flat `b, c, W` layout.
    pub fn from_flat(num_visible: usize, num_hidden: usize, flat: &[f64]) -> Result<Self> {
        check_len(
            "flat parameter vector",
            num_visible + num_hidden + num_visible * num_hidden,
            flat.len(),
        )?;
        let (b, rest) = flat.split_at(num_visible);
        let (c, w) = rest.split_at(num_hidden);
        Self::new(b.to_vec(), c.to_vec(), w.to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.iter_flat().all(f64::is_finite)
    }

    pub(crate) fn check_visible(&self, v: &[u8]) -> Result<()> {
        check_len("visible vector", self.num_visible(), v.len())
    }

    pub(crate) fn check_hidden(&self, h: &[u8]) -> Result<()> {
        check_len("hidden vector", self.num_hidden(), h.len())
    }

    /// `c_j + sum_i v_i w_ij` for every hidden unit, written into `out`.
    #[inline]
    pub(crate) fn hidden_activations_into(&self, v: &[u8], out: &mut [f64]) {
        out.copy_from_slice(&self.hidden_bias);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0 {
                for (o, w) in out.iter_mut().zip(self.weight_row(i)) {
                    *o += w;
                }
            }
        }
    }

    /// `b_i + sum_j w_ij h_j` for every visible unit, with real-valued `h`.
    #[inline]
    pub(crate) fn visible_activations_real_into(&self, h: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.weight_row(i);
            let dot: f64 = row.iter().zip(h).map(|(w, x)| w * x).sum();
            *o = self.visible_bias[i] + dot;
        }
    }

    pub(crate) fn hidden_activations(&self, v: &[u8]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_hidden()];
        self.hidden_activations_into(v, &mut out);
        out
    }

    pub(crate) fn visible_dot(&self, v: &[u8]) -> f64 {
        v.iter()
            .zip(&self.visible_bias)
            .filter(|(&vi, _)| vi != 0)
            .map(|(_, b)| b)
            .sum()
    }

    /// `ln p*(v)` at inverse temperature `beta`, given precomputed hidden
    /// activations: `beta b.v + sum_j softplus(beta a_j)`.
    #[inline]
    pub(crate) fn log_marginal_from_activations(&self, beta: f64, visible_dot: f64, act: &[f64]) -> f64 {
        beta * visible_dot + act.iter().map(|&a| softplus(beta * a)).sum::<f64>()
    }

    /// Copy with every parameter multiplied by `beta`.
    pub fn scaled(&self, beta: f64) -> Self {
        let mut out = self.clone();
        out.flat_mut().for_each(|x| *x *= beta);
        out
    }
}

/// `E(v, h) = -b.v - c.h - v^T W h`.
pub fn energy(params: &RbmParams, v: &BinaryVector, h: &BinaryVector) -> Result<f64> {
    params.check_visible(v.as_slice())?;
    params.check_hidden(h.as_slice())?;
    Ok(energy_unchecked(params, v.as_slice(), h.as_slice()))
}

pub(crate) fn energy_unchecked(params: &RbmParams, v: &[u8], h: &[u8]) -> f64 {
    let mut e = -params.visible_dot(v);
    for (j, &hj) in h.iter().enumerate() {
        if hj != 0 {
            e -= params.hidden_bias[j];
        }
    }
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0 {
            let row = params.weight_row(i);
            for (j, &hj) in h.iter().enumerate() {
                if hj != 0 {
                    e -= row[j];
                }
            }
        }
    }
    e
}

/// `p(h_j = 1 | v)` for every hidden unit.
pub fn hidden_conditional(params: &RbmParams, v: &BinaryVector) -> Result<Vec<f64>> {
    params.check_visible(v.as_slice())?;
    let mut act = params.hidden_activations(v.as_slice());
    act.iter_mut().for_each(|a| *a = sigmoid(*a));
    Ok(act)
}

/// `p(v_i = 1 | h)` for every visible unit.
pub fn visible_conditional(params: &RbmParams, h: &BinaryVector) -> Result<Vec<f64>> {
    params.check_hidden(h.as_slice())?;
    let hf: Vec<f64> = h.as_slice().iter().map(|&x| x as f64).collect();
    let mut out = vec![0.0; params.num_visible()];
    params.visible_activations_real_into(&hf, &mut out);
    out.iter_mut().for_each(|a| *a = sigmoid(*a));
    Ok(out)
}

/// `ln sum_h e^{-E(v, h)} = b.v + sum_j ln(1 + e^{c_j + sum_i v_i w_ij})`.
pub fn log_unnormalized_marginal(params: &RbmParams, v: &BinaryVector) -> Result<f64> {
    params.check_visible(v.as_slice())?;
    Ok(log_unnormalized_marginal_unchecked(params, v.as_slice()))
}

pub(crate) fn log_unnormalized_marginal_unchecked(params: &RbmParams, v: &[u8]) -> f64 {
    let act = params.hidden_activations(v);
    params.log_marginal_from_activations(1.0, params.visible_dot(v), &act)
}

pub(crate) fn ensure_enumerable(num_visible: usize) -> Result<()> {
    if num_visible > MAX_ENUMERABLE_VISIBLE {
        Err(Error::TooLarge {
            what: "visible dimension M",
            size: num_visible,
            limit: MAX_ENUMERABLE_VISIBLE,
        })
    } else {
        Ok(())
    }
}

/// Calls `f(index, v, hidden activations)` for every visible configuration.
pub(crate) fn for_each_visible<F>(params: &RbmParams, mut f: F) -> Result<()>
where
    F: FnMut(usize, &[u8], &[f64]),
{
    let m = params.num_visible();
    ensure_enumerable(m)?;
    let mut v = vec![0u8; m];
    let mut act = vec![0.0; params.num_hidden()];
    for index in 0..(1usize << m) {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = ((index >> i) & 1) as u8;
        }
        params.hidden_activations_into(&v, &mut act);
        f(index, &v, &act);
    }
    Ok(())
}

/// `ln p*(v)` for every visible configuration, in index order.
pub(crate) fn log_unnormalized_table(params: &RbmParams) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(1usize << params.num_visible().min(MAX_ENUMERABLE_VISIBLE));
    for_each_visible(params, |_, v, act| {
        out.push(params.log_marginal_from_activations(1.0, params.visible_dot(v), act));
    })?;
    Ok(out)
}

/// `ln Z` by enumeration of all `2^M` visible configurations.
pub fn exact_log_partition(params: &RbmParams) -> Result<f64> {
    let table = log_unnormalized_table(params)?;
    Ok(log_sum_exp(table.iter().copied()))
}

/// Explicit probability table over `{0,1}^M`, indexed by [`BinaryVector::to_index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    num_visible: usize,
    probabilities: Vec<f64>,
}

impl DiscreteDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(num_visible: usize, probabilities: Vec<f64>) -> Result<Self> {
        ensure_enumerable(num_visible)?;
        check_len("probability table", 1usize << num_visible, probabilities.len())?;
        if probabilities.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self {
            num_visible,
            probabilities,
        })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(num_visible: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument(
                "weights must have a positive finite sum".into(),
            ));
        }
        Self::new(num_visible, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(num_visible: usize) -> Result<Self> {
        ensure_enumerable(num_visible)?;
        let size = 1usize << num_visible;
        Ok(Self {
            num_visible,
            probabilities: vec![1.0 / size as f64; size],
        })
    }

    /// Observed frequencies of `samples`.
    pub fn empirical(num_visible: usize, samples: &[BinaryVector]) -> Result<Self> {
        ensure_enumerable(num_visible)?;
        if samples.is_empty() {
            return Err(Error::Empty("sample list"));
        }
        let mut counts = vec![0.0; 1usize << num_visible];
        for s in samples {
            check_len("sample", num_visible, s.len())?;
            counts[s.to_index()] += 1.0;
        }
        Self::from_weights(num_visible, counts)
    }

    pub fn num_visible(&self) -> usize {
        self.num_visible
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability(&self, v: &BinaryVector) -> f64 {
        self.probabilities[v.to_index()]
    }

    /// Indices with non-zero probability.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probabilities
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
    }

    /// `sum_v q(v) ln q(v)`, with `0 ln 0 = 0`.
    pub fn neg_entropy(&self) -> f64 {
        self.support().map(|(_, p)| p * p.ln()).sum()
    }
}

/// `p(v)` of the model, computed by enumeration.
pub fn exact_visible_distribution(params: &RbmParams) -> Result<DiscreteDistribution> {
    let table = log_unnormalized_table(params)?;
    let log_z = log_sum_exp(table.iter().copied());
    let probabilities: Vec<f64> = table.iter().map(|&l| (l - log_z).exp()).collect();
    // Renormalize to absorb the rounding of the exponentials.
    let total: f64 = probabilities.iter().sum();
    DiscreteDistribution::new(
        params.num_visible(),
        probabilities.into_iter().map(|p| p / total).collect(),
    )
}

/// Deletes hidden unit `k`: its bias and its weight column.
pub fn remove_hidden_unit(params: &RbmParams, k: usize) -> Result<RbmParams> {
    remove_hidden_units(params, &[k])
}

/// Deletes several hidden units at once.
pub fn remove_hidden_units(params: &RbmParams, ks: &[usize]) -> Result<RbmParams> {
    let n = params.num_hidden();
    let mut drop = vec![false; n];
    for &k in ks {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
        if drop[k] {
            return Err(Error::DuplicateIndex(k));
        }
        drop[k] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&j| !drop[j]).collect();
    let hidden_bias = keep.iter().map(|&j| params.hidden_bias[j]).collect();
    let mut weights = Vec::with_capacity(params.num_visible() * keep.len());
    for i in 0..params.num_visible() {
        let row = params.weight_row(i);
        weights.extend(keep.iter().map(|&j| row[j]));
    }
    Ok(RbmParams {
        visible_bias: params.visible_bias.clone(),
        hidden_bias,
        weights,
    })
}

/// Converts parameters of an RBM whose units take values in `{-1, 1}` into
/// the equivalent `{0, 1}` parameters (`W = 4W'`, `b_i = 2b'_i - 2 sum_j w'_ij`,
/// `c_j = 2c'_j - 2 sum_i w'_ij`). The visible distributions agree under
/// `v' = 2v - 1`.
pub fn convert_spin_parameterization(params_pm: &RbmParams) -> RbmParams {
    let m = params_pm.num_visible();
    let n = params_pm.num_hidden();
    let row_sums: Vec<f64> = (0..m).map(|i| params_pm.weight_row(i).iter().sum()).collect();
    let col_sums: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| params_pm.weight(i, j)).sum())
        .collect();
    RbmParams {
        visible_bias: (0..m)
            .map(|i| 2.0 * params_pm.visible_bias[i] - 2.0 * row_sums[i])
            .collect(),
        hidden_bias: (0..n)
            .map(|j| 2.0 * params_pm.hidden_bias[j] - 2.0 * col_sums[j])
            .collect(),
        weights: params_pm.weights.iter().map(|w| 4.0 * w).collect(),
    }
}

/// Inverse of [`convert_spin_parameterization`]: `W' = W/4`,
/// `b'_i = b_i/2 + sum_j w_ij/4`, `c'_j = c_j/2 + sum_i w_ij/4`.
pub fn convert_to_spin_parameterization(params: &RbmParams) -> RbmParams {
    let m = params.num_visible();
    let n = params.num_hidden();
    let row_sums: Vec<f64> = (0..m).map(|i| params.weight_row(i).iter().sum()).collect();
    let col_sums: Vec<f64> = (0..n).map(|j| (0..m).map(|i| params.weight(i, j)).sum()).collect();
    RbmParams {
        visible_bias: (0..m)
            .map(|i| params.visible_bias[i] / 2.0 + row_sums[i] / 4.0)
            .collect(),
        hidden_bias: (0..n)
            .map(|j| params.hidden_bias[j] / 2.0 + col_sums[j] / 4.0)
            .collect(),
        weights: params.weights.iter().map(|w| w / 4.0).collect(),
    }
}
