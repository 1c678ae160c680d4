//! Brute-force oracles shared by the integration tests. Everything here is
//! computed from the raw parameters by direct enumeration and does not call
//! into the library's own marginal, moment or sampler code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbm_prune::sampling::ChainState;
use rbm_prune::{BinaryVector, DiscreteDistribution, RbmParams};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Compensated summation.
pub fn ksum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn bits(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((index >> i) & 1) as u8).collect()
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller keeps the oracle free of the library's distributions.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_params(rng: &mut impl Rng, m: usize, n: usize, std: f64) -> RbmParams {
    let mut draw = |k: usize| (0..k).map(|_| std * normal(rng)).collect::<Vec<_>>();
    let b = draw(m);
    let c = draw(n);
    let w = draw(m * n);
    RbmParams::new(b, c, w).unwrap()
}

/// A random distribution over `{0,1}^m` with roughly a quarter of the
/// configurations at zero probability (never all of them).
pub fn random_q(rng: &mut impl Rng, m: usize) -> DiscreteDistribution {
    let size = 1usize << m;
    let mut w: Vec<f64> = (0..size)
        .map(|_| if rng.random::<f64>() < 0.25 { 0.0 } else { rng.random::<f64>() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let total = ksum(w.iter().copied());
    DiscreteDistribution::new(m, w.iter().map(|x| x / total).collect()).unwrap()
}

pub fn energy(p: &RbmParams, v: &[u8], h: &[u8]) -> f64 {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let mut terms = Vec::with_capacity(m + n + m * n);
    for i in 0..m {
        terms.push(-p.visible_bias()[i] * v[i] as f64);
    }
    for j in 0..n {
        terms.push(-p.hidden_bias()[j] * h[j] as f64);
    }
    for i in 0..m {
        for j in 0..n {
            terms.push(-p.weight(i, j) * (v[i] * h[j]) as f64);
        }
    }
    ksum(terms)
}

/// Joint probabilities of `p_beta`, indexed by `v + (h << M)`, optionally
/// conditioned on `h_k = 0`.
pub fn joint(p: &RbmParams, beta: f64, clamp: Option<usize>) -> Vec<f64> {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let size = 1usize << (m + n);
    let log_w: Vec<f64> = (0..size)
        .map(|x| {
            let v = bits(x & ((1 << m) - 1), m);
            let h = bits(x >> m, n);
            if clamp.is_some_and(|k| h[k] == 1) {
                f64::NEG_INFINITY
            } else {
                -beta * energy(p, &v, &h)
            }
        })
        .collect();
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let z = ksum(w.iter().copied());
    w.iter().map(|x| x / z).collect()
}

pub fn log_z(p: &RbmParams) -> f64 {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let log_w: Vec<f64> = (0..1usize << (m + n))
        .map(|x| -energy(p, &bits(x & ((1 << m) - 1), m), &bits(x >> m, n)))
        .collect();
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + ksum(log_w.iter().map(|l| (l - top).exp())).ln()
}

/// `p(v)` from the joint table, optionally conditioned on `h_k = 0`.
pub fn visible_marginal(p: &RbmParams, clamp: Option<usize>) -> Vec<f64> {
    let m = p.num_visible();
    let j = joint(p, 1.0, clamp);
    let mut out = vec![Vec::new(); 1 << m];
    for (x, &pj) in j.iter().enumerate() {
        out[x & ((1 << m) - 1)].push(pj);
    }
    out.into_iter().map(ksum).collect()
}

pub fn kld(q: &[f64], p: &[f64]) -> f64 {
    ksum(q.iter().zip(p).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / b).ln()))
}

/// Visible marginal of the model with hidden units `ks` deleted.
pub fn without_units(p: &RbmParams, ks: &[usize]) -> RbmParams {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let keep: Vec<usize> = (0..n).filter(|j| !ks.contains(j)).collect();
    let c = keep.iter().map(|&j| p.hidden_bias()[j]).collect();
    let w = (0..m).flat_map(|i| keep.iter().map(move |&j| p.weight(i, j))).collect();
    RbmParams::new(p.visible_bias().to_vec(), c, w).unwrap()
}

/// Conditionals `p_beta(h_j = 1 | v)` and `p_beta(v_i = 1 | h)`.
pub fn hidden_probs(p: &RbmParams, beta: f64, v: &[u8]) -> Vec<f64> {
    (0..p.num_hidden())
        .map(|j| {
            let a = p.hidden_bias()[j] + (0..p.num_visible()).map(|i| p.weight(i, j) * v[i] as f64).sum::<f64>();
            sig(beta * a)
        })
        .collect()
}

pub fn visible_probs(p: &RbmParams, beta: f64, h: &[u8]) -> Vec<f64> {
    (0..p.num_visible())
        .map(|i| {
            let a = p.visible_bias()[i] + (0..p.num_hidden()).map(|j| p.weight(i, j) * h[j] as f64).sum::<f64>();
            sig(beta * a)
        })
        .collect()
}

fn bern_prob(probs: &[f64], x: &[u8], clamp: Option<usize>) -> f64 {
    probs
        .iter()
        .zip(x)
        .enumerate()
        .map(|(j, (&p, &b))| {
            if clamp == Some(j) {
                if b == 0 { 1.0 } else { 0.0 }
            } else if b == 1 {
                p
            } else {
                1.0 - p
            }
        })
        .product()
}

/// Row-stochastic matrix of one h-then-v sweep at `beta`; `reverse` gives
/// the v-then-h sweep.
pub fn sweep_matrix(p: &RbmParams, beta: f64, clamp: Option<usize>, reverse: bool) -> Vec<Vec<f64>> {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let size = 1usize << (m + n);
    let split = |x: usize| (bits(x & ((1 << m) - 1), m), bits(x >> m, n));
    (0..size)
        .map(|from| {
            let (v, h) = split(from);
            (0..size)
                .map(|to| {
                    let (v2, h2) = split(to);
                    if reverse {
                        bern_prob(&visible_probs(p, beta, &h), &v2, None)
                            * bern_prob(&hidden_probs(p, beta, &v2), &h2, clamp)
                    } else {
                        bern_prob(&hidden_probs(p, beta, &v), &h2, clamp)
                            * bern_prob(&visible_probs(p, beta, &h2), &v2, None)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn apply(dist: &[f64], t: &[Vec<f64>]) -> Vec<f64> {
    (0..dist.len())
        .map(|to| ksum(dist.iter().zip(t).map(|(&d, row)| d * row[to])))
        .collect()
}

/// Exact transition matrix of one tempered transition, by enumerating all
/// trajectories. Only practical for a handful of joint states and rungs.
pub fn tempered_matrix(p: &RbmParams, betas: &[f64], clamp: Option<usize>) -> Vec<Vec<f64>> {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let size = 1usize << (m + n);
    let l = betas.len() - 1;
    let up: Vec<_> = (1..=l).map(|i| sweep_matrix(p, betas[i], clamp, false)).collect();
    let down: Vec<_> = (1..=l).map(|i| sweep_matrix(p, betas[i], clamp, true)).collect();
    let e: Vec<f64> = (0..size)
        .map(|x| energy(p, &bits(x & ((1 << m) - 1), m), &bits(x >> m, n)))
        .collect();
    let mut t = vec![vec![0.0; size]; size];
    for start in 0..size {
        if clamp.is_some_and(|k| (start >> (m + k)) & 1 == 1) {
            t[start][start] = 1.0;
            continue;
        }
        // Depth-first over x_1 .. x_l (heating) and y_{l-1} .. y_0 (cooling).
        let mut stack = vec![(0usize, start, 1.0f64, 0.0f64)];
        let mut reject = 0.0;
        while let Some((depth, x, prob, log_a)) = stack.pop() {
            if depth < l {
                let i = depth;
                let la = log_a - (betas[i + 1] - betas[i]) * e[x];
                for (y, &q) in up[i][x].iter().enumerate() {
                    if q > 0.0 {
                        stack.push((depth + 1, y, prob * q, la));
                    }
                }
            } else if depth < 2 * l {
                let i = 2 * l - depth - 1;
                for (y, &q) in down[i][x].iter().enumerate() {
                    if q > 0.0 {
                        let la = log_a - (betas[i] - betas[i + 1]) * e[y];
                        stack.push((depth + 1, y, prob * q, la));
                    }
                }
            } else {
                let acc = log_a.min(0.0).exp();
                t[start][x] += prob * acc;
                reject += prob * (1.0 - acc);
            }
        }
        t[start][start] += reject;
    }
    t
}

/// Chi-square goodness-of-fit p-value. Bins with expected count below 5
/// are pooled.
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut bins = 0usize;
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total as f64;
        if e < 5.0 {
            pool_o += o as f64;
            pool_e += e;
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        bins += 1;
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e.max(1e-300);
        bins += 1;
    }
    let dof = (bins.max(2) - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

pub fn bv(bits: &[u8]) -> BinaryVector {
    BinaryVector::new(bits.to_vec()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Draws from a discrete table by inversion.
pub fn draw_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap()
}

/// Independent exact draws `(v, h)` from the (optionally clamped) joint.
pub fn exact_states(p: &RbmParams, clamp: Option<usize>, count: usize, rng: &mut impl Rng) -> Vec<ChainState> {
    let (m, n) = (p.num_visible(), p.num_hidden());
    let j = joint(p, 1.0, clamp);
    (0..count)
        .map(|_| {
            let x = draw_index(rng, &j);
            ChainState::new(bv(&bits(x & ((1 << m) - 1), m)), bv(&bits(x >> m, n)))
        })
        .collect()
}

pub fn exact_vectors(q: &[f64], m: usize, count: usize, rng: &mut impl Rng) -> Vec<BinaryVector> {
    (0..count).map(|_| bv(&bits(draw_index(rng, q), m))).collect()
}
