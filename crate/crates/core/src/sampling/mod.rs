//! Monte Carlo machinery: block Gibbs sweeps, persistent chain pools,
//! tempered transitions and annealed importance sampling.

mod ais;
mod tempered;

pub use ais::{ais_log_partition, AisConfig, AisEstimate};
pub use tempered::{tempered_transition, TemperedOutcome, TemperedSchedule};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::sigmoid;
use crate::model::{BinaryVector, RbmParams};
use crate::rng::{stream_rng, RngDescriptor, StreamRng};

/// One configuration `(v, h)` of a Gibbs chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub v: BinaryVector,
    pub h: BinaryVector,
}

impl ChainState {
    pub fn new(v: BinaryVector, h: BinaryVector) -> Self {
        Self { v, h }
    }

    pub fn zeros(num_visible: usize, num_hidden: usize) -> Self {
        Self {
            v: BinaryVector::zeros(num_visible),
            h: BinaryVector::zeros(num_hidden),
        }
    }

    /// Fair-coin bits for both layers.
    pub fn random<R: Rng + ?Sized>(num_visible: usize, num_hidden: usize, rng: &mut R) -> Self {
        let mut bits = |n: usize| {
            BinaryVector::new((0..n).map(|_| rng.random_bool(0.5) as u8).collect())
                .expect("bits are binary")
        };
        let v = bits(num_visible);
        let h = bits(num_hidden);
        Self { v, h }
    }

    fn check_dims(&self, params: &RbmParams) -> Result<()> {
        check_len("chain visible state", params.num_visible(), self.v.len())?;
        check_len("chain hidden state", params.num_hidden(), self.h.len())
    }
}

/// Visible dimension up to which hidden conditionals are memoized per
/// visible configuration during a batch of sweeps.
const TABLE_MAX_VISIBLE: usize = 12;

/// `1` with probability `p`, from one 32-bit draw.
#[inline]
pub(crate) fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u8 {
    ((rng.next_u32() as f64) < p * 4_294_967_296.0) as u8
}

#[inline]
fn ones(bits: &[u8]) -> impl Iterator<Item = usize> + '_ {
    bits.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i)
}

/// Hidden activations and conditionals keyed by visible configuration.
#[derive(Debug, Clone)]
struct HiddenTable {
    slot: Vec<u32>,
    rows: u32,
    act: Vec<f64>,
    prob: Vec<f64>,
}

impl HiddenTable {
    fn new(num_visible: usize) -> Self {
        Self {
            slot: vec![u32::MAX; 1 << num_visible],
            rows: 0,
            act: Vec::new(),
            prob: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.slot.fill(u32::MAX);
        self.rows = 0;
        self.act.clear();
        self.prob.clear();
    }
}

/// Largest chunk table, in entries, built for the visible update.
const CHUNK_TABLE_MAX: usize = 1 << 21;

/// Partial visible activations `sum_{j in chunk c, h_j = 1} w_ij` for every
/// bit pattern of each 8-unit hidden chunk `c`, filled on first use.
#[derive(Debug, Clone)]
struct ChunkTable {
    filled: Vec<bool>,
    sums: Vec<f64>,
}

/// Block Gibbs kernel for `p_beta(v, h) ∝ e^{-beta E(v, h)}`, optionally
/// with `h_k` held at 0.
#[derive(Debug, Clone)]
pub(crate) struct Kernel<'a> {
    params: &'a RbmParams,
    beta: f64,
    clamp: Option<usize>,
    /// `W^T`, row `j` holding the weights of hidden unit `j`.
    weights_t: Vec<f64>,
    table: Option<HiddenTable>,
    chunks: Option<ChunkTable>,
    act: Vec<f64>,
    prob: Vec<f64>,
    visible: Vec<f64>,
}

impl<'a> Kernel<'a> {
    pub(crate) fn new(params: &'a RbmParams, beta: f64, clamp: Option<usize>) -> Self {
        let m = params.num_visible();
        let n = params.num_hidden();
        let mut weights_t = vec![0.0; m * n];
        for i in 0..m {
            for (j, &w) in params.weight_row(i).iter().enumerate() {
                weights_t[j * m + i] = w;
            }
        }
        Self {
            params,
            beta,
            clamp,
            weights_t,
            table: (m <= TABLE_MAX_VISIBLE).then(|| HiddenTable::new(m)),
            chunks: {
                let rows = n.div_ceil(8) * 256;
                (rows * m <= CHUNK_TABLE_MAX).then(|| ChunkTable {
                    filled: vec![false; rows],
                    sums: vec![0.0; rows * m],
                })
            },
            act: vec![0.0; n],
            prob: vec![0.0; n],
            visible: vec![0.0; m],
        }
    }

    /// A kernel that never memoizes, for callers that change `beta` every
    /// sweep.
    pub(crate) fn untabled(params: &'a RbmParams, beta: f64, clamp: Option<usize>) -> Self {
        let mut k = Self::new(params, beta, clamp);
        k.table = None;
        k
    }

    pub(crate) fn set_beta(&mut self, beta: f64) {
        if beta != self.beta {
            self.beta = beta;
            if let Some(t) = &mut self.table {
                t.clear();
            }
        }
    }

    #[inline]
    fn unit_prob(&self, j: usize, a: f64) -> f64 {
        if self.clamp == Some(j) {
            0.0
        } else {
            sigmoid(self.beta * a)
        }
    }

    /// Offset of `v`'s row in the table, filling it on first use.
    #[inline]
    fn table_row(&mut self, v: &[u8]) -> Option<usize> {
        let n = self.params.num_hidden();
        let index = v.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | (b as usize) << i);
        let slot = self.table.as_ref()?.slot[index];
        if slot != u32::MAX {
            return Some(slot as usize * n);
        }
        self.params.hidden_activations_into(v, &mut self.act);
        for j in 0..n {
            self.prob[j] = self.unit_prob(j, self.act[j]);
        }
        let t = self.table.as_mut().expect("table present");
        t.act.extend_from_slice(&self.act);
        t.prob.extend_from_slice(&self.prob);
        t.slot[index] = t.rows;
        t.rows += 1;
        Some((t.rows as usize - 1) * n)
    }

    /// Hidden activations and conditionals of `v` as `(act, prob)`.
    #[inline]
    fn hidden(&mut self, v: &[u8]) -> (&[f64], &[f64]) {
        let n = self.params.num_hidden();
        match self.table_row(v) {
            Some(off) => {
                let t = self.table.as_ref().expect("table present");
                (&t.act[off..off + n], &t.prob[off..off + n])
            }
            None => {
                self.params.hidden_activations_into(v, &mut self.act);
                for j in 0..n {
                    self.prob[j] = self.unit_prob(j, self.act[j]);
                }
                (&self.act, &self.prob)
            }
        }
    }

    #[inline]
    fn sample_hidden<R: Rng + ?Sized>(&mut self, v: &[u8], h: &mut [u8], rng: &mut R) {
        let clamp = self.clamp;
        let (_, prob) = self.hidden(v);
        for (j, (hj, &p)) in h.iter_mut().zip(prob).enumerate() {
            *hj = if clamp == Some(j) { 0 } else { bernoulli(p, rng) };
        }
    }

    #[inline]
    fn sample_visible<R: Rng + ?Sized>(&mut self, h: &[u8], v: &mut [u8], rng: &mut R) {
        let m = self.visible.len();
        self.visible.copy_from_slice(self.params.visible_bias());
        match &mut self.chunks {
            Some(table) => {
                for (c, chunk) in h.chunks(8).enumerate() {
                    let byte = chunk.iter().enumerate().fold(0usize, |acc, (b, &x)| acc | (x as usize) << b);
                    if byte == 0 {
                        continue;
                    }
                    let row = c * 256 + byte;
                    let sums = &mut table.sums[row * m..(row + 1) * m];
                    if !table.filled[row] {
                        for b in ones(chunk) {
                            let j = c * 8 + b;
                            for (o, w) in sums.iter_mut().zip(&self.weights_t[j * m..(j + 1) * m]) {
                                *o += w;
                            }
                        }
                        table.filled[row] = true;
                    }
                    for (o, s) in self.visible.iter_mut().zip(sums.iter()) {
                        *o += s;
                    }
                }
            }
            None => {
                for j in ones(h) {
                    for (o, w) in self.visible.iter_mut().zip(&self.weights_t[j * m..(j + 1) * m]) {
                        *o += w;
                    }
                }
            }
        }
        for (vi, &a) in v.iter_mut().zip(&self.visible) {
            *vi = bernoulli(sigmoid(self.beta * a), rng);
        }
    }

    /// h ~ p_beta(h | v), then v ~ p_beta(v | h).
    #[inline]
    pub(crate) fn forward<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) {
        let ChainState { v, h } = state;
        self.sample_hidden(v.as_slice(), h.as_mut_slice(), rng);
        self.sample_visible(h.as_slice(), v.as_mut_slice(), rng);
    }

    /// v ~ p_beta(v | h), then h ~ p_beta(h | v); the time reversal of
    /// [`Kernel::forward`] with respect to `p_beta`.
    #[inline]
    pub(crate) fn reverse<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) {
        let ChainState { v, h } = state;
        self.sample_visible(h.as_slice(), v.as_mut_slice(), rng);
        self.sample_hidden(v.as_slice(), h.as_mut_slice(), rng);
    }

    /// `E(v, h)` at inverse temperature 1.
    #[inline]
    pub(crate) fn energy(&mut self, state: &ChainState) -> f64 {
        let vdot = self.params.visible_dot(state.v.as_slice());
        let (act, _) = self.hidden(state.v.as_slice());
        let coupling: f64 = ones(state.h.as_slice()).map(|j| act[j]).sum();
        -vdot - coupling
    }
}

/// One block Gibbs sweep in place: `h` from `p(h | v)`, then `v` from
/// `p(v | h)`. With `clamp = Some(k)`, `h_k` is held at 0, which samples
/// `p(v, h_{\k} | h_k = 0)` exactly because the conditionals factorize.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    params: &RbmParams,
    state: &mut ChainState,
    clamp: Option<usize>,
    rng: &mut R,
) -> Result<()> {
    gibbs_sweep_at(params, 1.0, state, clamp, rng)
}

/// [`gibbs_sweep`] for the tempered family `p_beta ∝ e^{-beta E}`.
pub fn gibbs_sweep_at<R: Rng + ?Sized>(
    params: &RbmParams,
    beta: f64,
    state: &mut ChainState,
    clamp: Option<usize>,
    rng: &mut R,
) -> Result<()> {
    state.check_dims(params)?;
    if let Some(k) = clamp {
        if k >= params.num_hidden() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: params.num_hidden(),
            });
        }
    }
    Kernel::new(params, beta, clamp).forward(state, rng);
    Ok(())
}

/// A set of persistent chains, each with its own random stream.
///
/// With a clamp on unit `k` every state keeps `h_k = 0`, so the pool samples
/// `p(v, h_{\k} | h_k = 0)`.
#[derive(Debug, Clone)]
pub struct ChainPool {
    states: Vec<ChainState>,
    rngs: Vec<StreamRng>,
    clamp: Option<usize>,
    seed: u64,
}

/// Checkpointable snapshot of a [`ChainPool`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub seed: u64,
    pub clamp: Option<usize>,
    pub states: Vec<ChainState>,
    pub rngs: Vec<RngDescriptor>,
}

impl ChainPool {
    /// `size` chains started from fair-coin states; chain `a` uses stream `a`.
    pub fn new_random(num_visible: usize, num_hidden: usize, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Empty("chain pool"));
        }
        let mut rngs: Vec<StreamRng> = (0..size as u64).map(|a| stream_rng(seed, a)).collect();
        let states = rngs
            .iter_mut()
            .map(|rng| ChainState::random(num_visible, num_hidden, rng))
            .collect();
        Ok(Self {
            states,
            rngs,
            clamp: None,
            seed,
        })
    }

    /// Pool over the given states with fresh streams derived from `seed`.
    pub fn from_states(states: Vec<ChainState>, seed: u64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("chain pool"));
        }
        let rngs = (0..states.len() as u64).map(|a| stream_rng(seed, a)).collect();
        Ok(Self {
            states,
            rngs,
            clamp: None,
            seed,
        })
    }

    /// `size` chains copied cyclically from `source`'s current states.
    pub fn inherit(source: &ChainPool, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Empty("chain pool"));
        }
        let states = (0..size)
            .map(|a| source.states[a % source.states.len()].clone())
            .collect();
        Self::from_states(states, seed)
    }

    /// Clamps `h_k = 0` in every state from now on.
    pub fn set_clamp(&mut self, k: Option<usize>) {
        self.clamp = k;
        if let Some(k) = k {
            for s in &mut self.states {
                s.h.as_mut_slice()[k] = 0;
            }
        }
    }

    pub fn clamp(&self) -> Option<usize> {
        self.clamp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChainState] {
        &self.states
    }

    fn check(&self, params: &RbmParams) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Empty("chain pool"));
        }
        self.states[0].check_dims(params)?;
        if let Some(k) = self.clamp {
            if k >= params.num_hidden() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: params.num_hidden(),
                });
            }
        }
        Ok(())
    }

    /// Advances every chain by `n` sweeps and returns the resulting states.
    pub fn draw(&mut self, params: &RbmParams, n: usize) -> Result<&[ChainState]> {
        if n == 0 {
            return Err(Error::InvalidArgument("PCD step count must be at least 1".into()));
        }
        self.check(params)?;
        let mut kernel = Kernel::new(params, 1.0, self.clamp);
        for (state, rng) in self.states.iter_mut().zip(&mut self.rngs) {
            for _ in 0..n {
                kernel.forward(state, rng);
            }
        }
        self.verify_clamp()?;
        Ok(&self.states)
    }

    /// One tempered transition per chain; returns the number accepted.
    pub fn tempered_refresh(&mut self, params: &RbmParams, schedule: &TemperedSchedule) -> Result<usize> {
        self.check(params)?;
        let outcomes = tempered::run(params, &mut self.states, &mut self.rngs, schedule, self.clamp);
        let accepted = outcomes.iter().filter(|o| o.accepted).count();
        self.verify_clamp()?;
        Ok(accepted)
    }

    fn verify_clamp(&self) -> Result<()> {
        if let Some(k) = self.clamp {
            if let Some(sample) = self.states.iter().position(|s| s.h[k] != 0) {
                return Err(Error::ClampViolation { sample, unit: k });
            }
        }
        Ok(())
    }

    /// Drops hidden coordinate `k` from every state. A clamp on `k` is
    /// released; clamps above `k` shift down by one.
    pub fn remove_hidden(&mut self, k: usize) {
        for s in &mut self.states {
            s.h.remove(k);
        }
        self.clamp = match self.clamp {
            Some(c) if c == k => None,
            Some(c) if c > k => Some(c - 1),
            other => other,
        };
    }

    /// Zeroes `h_k` in every state and clamps unit `k`.
    pub fn clamp_from(source: &ChainPool, k: usize, seed: u64) -> Result<Self> {
        let mut pool = Self::inherit(source, source.len(), seed)?;
        pool.set_clamp(Some(k));
        Ok(pool)
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            seed: self.seed,
            clamp: self.clamp,
            states: self.states.clone(),
            rngs: self.rngs.iter().map(RngDescriptor::capture).collect(),
        }
    }

    pub fn restore(snapshot: &PoolSnapshot) -> Result<Self> {
        if snapshot.states.is_empty() {
            return Err(Error::Empty("chain pool"));
        }
        check_len("pool rng descriptors", snapshot.states.len(), snapshot.rngs.len())?;
        Ok(Self {
            states: snapshot.states.clone(),
            rngs: snapshot.rngs.iter().map(RngDescriptor::restore).collect(),
            clamp: snapshot.clamp,
            seed: snapshot.seed,
        })
    }
}

/// Advances the pool by `n` sweeps (PCD-n) and returns its states.
pub fn pcd_draw<'a>(params: &RbmParams, pool: &'a mut ChainPool, n: usize) -> Result<&'a [ChainState]> {
    pool.draw(params, n)
}
