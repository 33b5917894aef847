//! Per-agent bootstrap particle filter, backward smoother and contribution
//! selection.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::model::ModelClass;
use crate::rng::{derive_seed, stream, Domain};

/// Terms below `max - LOG_CUTOFF` in a log-sum-exp are dropped.
const LOG_CUTOFF: f64 = 40.0;

/// Targets whose smoothed weight is below this fraction of the largest one
/// are skipped in the backward pass.
const NEGLIGIBLE_WEIGHT: f64 = 1e-16;

/// Filter (and optionally smoothed) particle approximations for one agent.
///
/// Layout: `particles[(t * M + i) * n + k]`, weights `[t * M + i]`, with
/// `t` 0-based. Particles are the propagated, pre-resampling values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub num_particles: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub particles: Vec<f64>,
    pub filter_weights: Vec<f64>,
    pub smoothed_weights: Option<Vec<f64>>,
    /// `sum_t log mean_i p(y(t) | x_i(t))`, up to the Gaussian constant.
    pub log_evidence: f64,
}

impl ParticleEnsemble {
    pub fn particle(&self, t: usize, i: usize) -> &[f64] {
        let n = self.state_dim;
        let o = (t * self.num_particles + i) * n;
        &self.particles[o..o + n]
    }

    pub fn filter_weights_at(&self, t: usize) -> &[f64] {
        let m = self.num_particles;
        &self.filter_weights[t * m..(t + 1) * m]
    }

    pub fn smoothed_weights_at(&self, t: usize) -> Option<&[f64]> {
        let m = self.num_particles;
        self.smoothed_weights.as_ref().map(|w| &w[t * m..(t + 1) * m])
    }

    fn weighted_mean(&self, t: usize, w: &[f64]) -> Vec<f64> {
        let mut mean = vec![0.0; self.state_dim];
        for (i, wi) in w.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(self.particle(t, i)) {
                *m += wi * x;
            }
        }
        mean
    }

    pub fn filter_mean(&self, t: usize) -> Vec<f64> {
        self.weighted_mean(t, self.filter_weights_at(t))
    }

    pub fn smoothed_mean(&self, t: usize) -> Option<Vec<f64>> {
        self.smoothed_weights_at(t).map(|w| self.weighted_mean(t, w))
    }

    /// Debug dump: `t,i,x_1..x_n,w_filter,w_smooth` (1-based `t`, `i`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i");
        for k in 1..=self.state_dim {
            let _ = write!(out, ",x_{k}");
        }
        out.push_str(",w_filter,w_smooth\n");
        for t in 0..self.horizon {
            for i in 0..self.num_particles {
                let _ = write!(out, "{},{}", t + 1, i + 1);
                for x in self.particle(t, i) {
                    let _ = write!(out, ",{x:e}");
                }
                let ws = self.smoothed_weights_at(t).map_or(f64::NAN, |w| w[i]);
                let _ = writeln!(out, ",{:e},{ws:e}", self.filter_weights_at(t)[i]);
            }
        }
        out
    }
}

/// Normalizes log-weights in place into linear weights. Returns the
/// log of the normalizing sum, or `None` when no weight is finite.
fn normalize_log_weights(lw: &mut [f64]) -> Option<f64> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    for w in lw.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    for w in lw.iter_mut() {
        *w /= sum;
    }
    Some(max + sum.ln())
}

/// Systematic resampling: ancestor indices for `count` equally weighted
/// draws, using a single uniform offset `u0` in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], count: usize, u0: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let step = 1.0 / count as f64;
    let mut cum = weights[0];
    let mut j = 0;
    for k in 0..count {
        let pos = (k as f64 + u0) * step;
        while pos >= cum && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Resamples `particles` (rows of length `state_dim`) with the systematic
/// scheme; the offset is drawn from `seed`.
pub fn resample(particles: &[f64], state_dim: usize, weights: &[f64], seed: u64) -> Result<Vec<f64>> {
    if weights.is_empty() || particles.len() != weights.len() * state_dim {
        return param_err(format!("{} weights for {} particle values of dimension {state_dim}", weights.len(), particles.len()));
    }
    let mut rng = stream(seed, Domain::Filter, u64::MAX, 0);
    let idx = systematic_indices(weights, weights.len(), rng.gen::<f64>());
    Ok(idx.iter().flat_map(|&i| particles[i * state_dim..(i + 1) * state_dim].iter().copied()).collect())
}

fn gaussian_noise(rng: &mut ChaCha8Rng, sd: f64, out: &mut [f64]) {
    for o in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *o = sd * z;
    }
}

/// Squared distance between two equally sized slices.
#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Local observation record for one agent.
#[derive(Debug, Clone, Copy)]
pub struct LocalData<'a> {
    /// `T * p` outputs.
    pub outputs: &'a [f64],
    /// `T * m` inputs.
    pub inputs: &'a [f64],
    pub horizon: usize,
}

/// Bootstrap particle filter with systematic resampling at every step.
/// The interaction term is not modelled.
pub fn pf_forward(model: &ModelClass, data: LocalData<'_>, theta: &[f64], num_particles: usize, seed: u64) -> Result<ParticleEnsemble> {
    model.validate_theta(theta)?;
    if num_particles < 2 {
        return param_err(format!("need at least 2 particles, got {num_particles}"));
    }
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    let horizon = data.horizon;
    if horizon == 0 || data.outputs.len() != horizon * p || data.inputs.len() != horizon * m {
        return param_err("local data dimensions do not match the model");
    }
    let mm = num_particles;
    let proc_sd = model.process_variance(theta).sqrt();
    let meas_var = model.measurement_variance(theta);

    let mut particles = vec![0.0; horizon * mm * n];
    let mut filter_weights = vec![0.0; horizon * mm];
    let mut log_evidence = 0.0;
    let mut current = vec![0.0; mm * n];
    let mut rng = stream(seed, Domain::Filter, 0, 0);
    for i in 0..mm {
        gaussian_noise(&mut rng, model.initial_spread, &mut current[i * n..(i + 1) * n]);
        for (x, x0) in current[i * n..(i + 1) * n].iter_mut().zip(&model.initial_state) {
            *x += x0;
        }
    }
    let mut yhat = vec![0.0; p];
    let mut mean = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut lw = vec![0.0; mm];
    for t in 0..horizon {
        let y = &data.outputs[t * p..(t + 1) * p];
        let u = &data.inputs[t * m..(t + 1) * m];
        for i in 0..mm {
            model.output_mean(theta, &current[i * n..(i + 1) * n], u, &mut yhat);
            lw[i] = -0.5 * dist2(y, &yhat) / meas_var;
        }
        if lw.iter().any(|v| v.is_nan()) {
            return Err(Error::Degeneracy { t: t + 1, detail: "NaN measurement likelihood".into() });
        }
        let log_norm = normalize_log_weights(&mut lw).ok_or_else(|| Error::Degeneracy { t: t + 1, detail: "all measurement likelihoods vanish".into() })?;
        log_evidence += log_norm - (mm as f64).ln();
        particles[t * mm * n..(t + 1) * mm * n].copy_from_slice(&current);
        filter_weights[t * mm..(t + 1) * mm].copy_from_slice(&lw);
        if t + 1 == horizon {
            break;
        }
        let mut rng = stream(seed, Domain::Filter, t as u64 + 1, 0);
        let ancestors = systematic_indices(&lw, mm, rng.gen::<f64>());
        let previous = &particles[t * mm * n..(t + 1) * mm * n];
        for (i, &a) in ancestors.iter().enumerate() {
            model.transition_mean(theta, &previous[a * n..(a + 1) * n], u, &mut mean);
            gaussian_noise(&mut rng, proc_sd, &mut noise);
            for k in 0..n {
                current[i * n + k] = mean[k] + noise[k];
            }
        }
        if let Some(k) = current.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t + 2, agent: k / n, detail: "particle left the finite range".into() });
        }
    }
    Ok(ParticleEnsemble { num_particles: mm, horizon, state_dim: n, particles, filter_weights, smoothed_weights: None, log_evidence })
}

/// Backward transition kernel at one time step: the transition means
/// `f(x_k(t), u(t))` sorted by their first coordinate, with the matching
/// filter log-weights.
struct BackwardKernel {
    n: usize,
    order: Vec<usize>,
    keys: Vec<f64>,
    means: Vec<f64>,
    log_w: Vec<f64>,
    log_w_max: f64,
    inv_two_var: f64,
}

impl BackwardKernel {
    fn new(model: &ModelClass, theta: &[f64], ens: &ParticleEnsemble, t: usize, u: &[f64]) -> Self {
        let (n, mm) = (ens.state_dim, ens.num_particles);
        let mut raw = vec![0.0; mm * n];
        for k in 0..mm {
            model.transition_mean(theta, ens.particle(t, k), u, &mut raw[k * n..(k + 1) * n]);
        }
        let mut order: Vec<usize> = (0..mm).collect();
        order.sort_by(|&a, &b| raw[a * n].total_cmp(&raw[b * n]));
        let w = ens.filter_weights_at(t);
        let log_w: Vec<f64> = order.iter().map(|&k| w[k].ln()).collect();
        let log_w_max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            n,
            keys: order.iter().map(|&k| raw[k * n]).collect(),
            means: order.iter().flat_map(|&k| raw[k * n..(k + 1) * n].iter().copied()).collect(),
            order,
            log_w,
            log_w_max,
            inv_two_var: 0.5 / model.process_variance(theta),
        }
    }

    #[inline]
    fn exponent(&self, x: &[f64], k: usize) -> f64 {
        let d = if self.n == 1 { (x[0] - self.means[k]) * (x[0] - self.means[k]) } else { dist2(x, &self.means[k * self.n..(k + 1) * self.n]) };
        self.log_w[k] - d * self.inv_two_var
    }

    /// Terms `w_k p(x | x_k)` for the target `x`, scaled by `exp(-max)` and
    /// zeroed below `max - LOG_CUTOFF`. Only sorted positions `lo..hi` can be
    /// nonzero; they are written to `scratch[lo..hi]`. Returns
    /// `(lo, hi, sum)`. Positions outside the window are below the cutoff,
    /// since their first-coordinate gap alone exceeds it.
    fn row(&self, x: &[f64], scratch: &mut [f64]) -> (usize, usize, f64) {
        let len = self.keys.len();
        let pos = self.keys.partition_point(|&f| f < x[0]);
        let near = [pos.saturating_sub(1), pos.min(len - 1)].into_iter().map(|k| self.exponent(x, k)).fold(f64::NEG_INFINITY, f64::max);
        let budget = self.log_w_max - near + LOG_CUTOFF;
        let (lo, hi) = if budget.is_finite() {
            let radius = (budget / self.inv_two_var).sqrt();
            (self.keys.partition_point(|&f| f < x[0] - radius), self.keys.partition_point(|&f| f <= x[0] + radius))
        } else {
            (0, len)
        };
        let mut max = f64::NEG_INFINITY;
        for k in lo..hi {
            let e = self.exponent(x, k);
            scratch[k] = e;
            max = max.max(e);
        }
        let floor = max - LOG_CUTOFF;
        let mut sum = 0.0;
        for s in &mut scratch[lo..hi] {
            if *s < floor {
                *s = 0.0;
            } else {
                *s = (*s - max).exp();
                sum += *s;
            }
        }
        (lo, hi, sum)
    }
}

/// Backward weight recursion over all `M` particles, O(M^2 T) in the
/// worst case.
pub fn backward_smooth(mut ens: ParticleEnsemble, model: &ModelClass, theta: &[f64], inputs: &[f64]) -> Result<ParticleEnsemble> {
    let (mm, horizon, m) = (ens.num_particles, ens.horizon, model.input_dim());
    let mut smoothed = vec![0.0; horizon * mm];
    let last = (horizon - 1) * mm;
    smoothed[last..].copy_from_slice(&ens.filter_weights[last..]);
    let mut scratch = vec![0.0; mm];
    let mut acc = vec![0.0; mm];
    for t in (0..horizon - 1).rev() {
        let kernel = BackwardKernel::new(model, theta, &ens, t, &inputs[t * m..(t + 1) * m]);
        acc.fill(0.0);
        let (head, tail) = smoothed.split_at_mut((t + 1) * mm);
        let next_smoothed = &tail[..mm];
        let negligible = NEGLIGIBLE_WEIGHT * next_smoothed.iter().copied().fold(0.0, f64::max);
        for j in 0..mm {
            let c = next_smoothed[j];
            if c <= negligible {
                continue;
            }
            let (lo, hi, sum) = kernel.row(ens.particle(t + 1, j), &mut scratch);
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(Error::Degeneracy { t: t + 1, detail: format!("zero backward denominator for particle {}", j + 1) });
            }
            let scale = c / sum;
            for (a, s) in acc[lo..hi].iter_mut().zip(&scratch[lo..hi]) {
                *a += scale * s;
            }
        }
        let total: f64 = acc.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degeneracy { t: t + 1, detail: "smoothed weights vanish".into() });
        }
        let out = &mut head[t * mm..];
        for (k, &orig) in kernel.order.iter().enumerate() {
            out[orig] = acc[k] / total;
        }
    }
    ens.smoothed_weights = Some(smoothed);
    Ok(ens)
}

/// Pairwise smoothed weights `w^{ij}(t|T)` between `x_i(t)` and
/// `x_j(t+1)`, row-major `[i * M + j]`. Requires `t + 1 < T` (0-based).
pub fn pairwise_weights(ens: &ParticleEnsemble, model: &ModelClass, theta: &[f64], inputs: &[f64], t: usize) -> Result<Vec<f64>> {
    let mm = ens.num_particles;
    let smoothed = ens.smoothed_weights.as_ref().ok_or_else(|| Error::Parameter("ensemble has not been smoothed".into()))?;
    if t + 1 >= ens.horizon {
        return param_err(format!("pairwise weights need t + 1 < T, got t = {t}"));
    }
    let m = model.input_dim();
    let kernel = BackwardKernel::new(model, theta, ens, t, &inputs[t * m..(t + 1) * m]);
    let mut out = vec![0.0; mm * mm];
    let mut scratch = vec![0.0; mm];
    for j in 0..mm {
        let c = smoothed[(t + 1) * mm + j];
        let (lo, hi, sum) = kernel.row(ens.particle(t + 1, j), &mut scratch);
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Degeneracy { t: t + 1, detail: format!("zero backward denominator for particle {}", j + 1) });
        }
        for k in lo..hi {
            out[kernel.order[k] * mm + j] = c * scratch[k] / sum;
        }
    }
    Ok(out)
}

/// The top-weighted smoothed particles of one agent.
///
/// `particles` holds the raw particles `[t][k][n]`, `weights` the matching
/// smoothed weights; the contributed values are their products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionSet {
    pub per_time: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub indices: Vec<usize>,
    pub particles: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ContributionSet {
    /// Scaled values `x(t, k) * w(t, k)` at `t`, flattened `[k][n]`.
    pub fn scaled(&self, t: usize) -> Vec<f64> {
        let (kk, n) = (self.per_time, self.state_dim);
        (0..kk * n).map(|r| self.particles[t * kk * n + r] * self.weights[t * kk + r / n]).collect()
    }

    pub fn weights_at(&self, t: usize) -> &[f64] {
        &self.weights[t * self.per_time..(t + 1) * self.per_time]
    }
}

/// `ceil(M / J_max)`.
pub fn contribution_size(num_particles: usize, j_max: usize) -> usize {
    num_particles.div_ceil(j_max.max(1))
}

/// Indices of the `k` largest weights, ties broken by lower index.
pub fn top_indices(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn select_contribution(ens: &ParticleEnsemble, j_max: usize) -> Result<ContributionSet> {
    let smoothed = ens.smoothed_weights.as_ref().ok_or_else(|| Error::Parameter("ensemble has not been smoothed".into()))?;
    let (mm, n) = (ens.num_particles, ens.state_dim);
    let kk = contribution_size(mm, j_max);
    let mut indices = Vec::with_capacity(kk * ens.horizon);
    let mut particles = Vec::with_capacity(kk * ens.horizon * n);
    let mut weights = Vec::with_capacity(kk * ens.horizon);
    for t in 0..ens.horizon {
        let w = &smoothed[t * mm..(t + 1) * mm];
        for i in top_indices(w, kk) {
            indices.push(i);
            particles.extend_from_slice(ens.particle(t, i));
            weights.push(w[i]);
        }
    }
    Ok(ContributionSet { per_time: kk, horizon: ens.horizon, state_dim: n, indices, particles, weights })
}

/// Filter, smoother and selection for one agent. On degeneracy the
/// measurement variance is inflated by 4x, up to `retries` times.
pub fn smooth_agent(model: &ModelClass, data: LocalData<'_>, theta: &[f64], num_particles: usize, j_max: usize, seed: u64, retries: usize) -> Result<(ParticleEnsemble, ContributionSet)> {
    let mut th = theta.to_vec();
    let mut attempt = 0;
    loop {
        let s = derive_seed(seed, Domain::Filter, attempt as u64, 0);
        let run = pf_forward(model, data, &th, num_particles, s).and_then(|e| backward_smooth(e, model, &th, data.inputs));
        match run {
            Ok(ens) => {
                let c = select_contribution(&ens, j_max)?;
                return Ok((ens, c));
            }
            Err(Error::Degeneracy { .. }) if attempt < retries => {
                th[model.measurement_var_index()] *= 4.0;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{kalman_filter, rts_smoother, LinearGaussian};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn linear_data(lg: &LinearGaussian, horizon: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream(seed, Domain::Experiment, 0, 0);
        let mut x = lg.m0 + lg.p0.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut ys = Vec::new();
        for _ in 0..horizon {
            ys.push(lg.c * x + lg.r.sqrt() * rng.sample::<f64, _>(StandardNormal));
            x = lg.a * x + lg.q.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        (ys, vec![])
    }

    fn linear_model(lg: &LinearGaussian) -> ModelClass {
        ModelClass { initial_state: vec![lg.m0], initial_spread: lg.p0.sqrt(), ..ModelClass::scalar_linear(lg.a, lg.c, lg.q, lg.r) }
    }

    #[test]
    fn systematic_hand_case() {
        // positions (k + 0.5) / 4 = 0.125, 0.375, 0.625, 0.875 against cdf (0.75, 1)
        assert_eq!(systematic_indices(&[0.75, 0.25], 4, 0.5), vec![0, 0, 0, 1]);
        for u in [0.0, 0.3, 0.99] {
            let idx = systematic_indices(&[0.75, 0.25], 4, u);
            assert_eq!(idx.iter().filter(|&&i| i == 0).count(), 3);
        }
    }

    #[test]
    fn point_mass_resamples_to_copies() {
        let out = resample(&[1.0, 2.0, 3.0], 1, &[0.0, 1.0, 0.0], 4).unwrap();
        assert_eq!(out, vec![2.0; 3]);
    }

    #[test]
    fn uniform_resampling_chi_square() {
        // counts of each input over many seeds; systematic with uniform weights
        // returns every index once, so test an uneven but known distribution too
        let w = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        let draws = 4;
        let reps = 2000;
        for seed in 0..reps {
            let out = resample(&[0.0, 1.0, 2.0, 3.0], 1, &w, seed).unwrap();
            for x in out {
                counts[x as usize] += 1;
            }
        }
        let total = (draws * reps as usize) as f64;
        let chi2: f64 = counts.iter().zip(w).map(|(&c, p)| (c as f64 - total * p).powi(2) / (total * p)).sum();
        // systematic draws are negatively correlated, so chi2 is far below the
        // 3-dof 0.999 quantile of 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
        let uniform = resample(&[0.0, 1.0, 2.0, 3.0, 4.0], 1, &[0.2; 5], 9).unwrap();
        let mut sorted = uniform.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_likelihood_gives_uniform_weights() {
        // c = 0 makes the output independent of the state
        let model = ModelClass::scalar_linear(0.5, 0.0, 1.0, 1.0);
        let y = vec![0.3; 5];
        let ens = pf_forward(&model, LocalData { outputs: &y, inputs: &[], horizon: 5 }, &model.theta_true, 10, 1).unwrap();
        for w in &ens.filter_weights {
            assert_relative_eq!(*w, 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn near_deterministic_model_tracks_truth() {
        let model = ModelClass { initial_state: vec![1.0], initial_spread: 1e-6, ..ModelClass::scalar_linear(0.9, 1.0, 1e-12, 1e-4) };
        let ys: Vec<f64> = (0..10).map(|t| 0.9f64.powi(t)).collect();
        let ens = pf_forward(&model, LocalData { outputs: &ys, inputs: &[], horizon: 10 }, &model.theta_true, 50, 3).unwrap();
        for t in 0..10 {
            assert_relative_eq!(ens.filter_mean(t)[0], ys[t], epsilon = 1e-4);
        }
    }

    #[test]
    fn m2_t2_backward_hand_case() {
        let model = ModelClass::scalar_linear(0.5, 1.0, 0.3, 1.0);
        let th = model.theta_true.clone();
        let ens = ParticleEnsemble {
            num_particles: 2,
            horizon: 2,
            state_dim: 1,
            particles: vec![0.2, -1.0, 0.4, 0.1],
            filter_weights: vec![0.7, 0.3, 0.4, 0.6],
            smoothed_weights: None,
            log_evidence: 0.0,
        };
        let s = backward_smooth(ens.clone(), &model, &th, &[]).unwrap();
        let p = |xn: f64, x: f64| (-(xn - 0.5 * x).powi(2) / (2.0 * 0.3)).exp();
        let (x1, x2, z1, z2) = (0.2, -1.0, 0.4, 0.1);
        let d1 = 0.7 * p(z1, x1) + 0.3 * p(z1, x2);
        let d2 = 0.7 * p(z2, x1) + 0.3 * p(z2, x2);
        let w1 = 0.7 * (0.4 * p(z1, x1) / d1 + 0.6 * p(z2, x1) / d2);
        let w2 = 0.3 * (0.4 * p(z1, x2) / d1 + 0.6 * p(z2, x2) / d2);
        let sw = s.smoothed_weights.as_ref().unwrap();
        assert_relative_eq!(sw[0], w1 / (w1 + w2), epsilon = 1e-14);
        assert_relative_eq!(sw[1], w2 / (w1 + w2), epsilon = 1e-14);
        assert_eq!(&sw[2..], &[0.4, 0.6]);

        let pw = pairwise_weights(&s, &model, &th, &[], 0).unwrap();
        let oracle = [0.7 * 0.4 * p(z1, x1) / d1, 0.7 * 0.6 * p(z2, x1) / d2, 0.3 * 0.4 * p(z1, x2) / d1, 0.3 * 0.6 * p(z2, x2) / d2];
        for (a, b) in pw.iter().zip(oracle) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        assert_relative_eq!(pw.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn pairwise_uniform_with_flat_transition() {
        // huge process variance makes the transition density constant
        let model = ModelClass::scalar_linear(0.5, 1.0, 1e30, 1.0);
        let ens = ParticleEnsemble {
            num_particles: 3,
            horizon: 2,
            state_dim: 1,
            particles: vec![0.1, 0.2, 0.3, 1.0, 2.0, 3.0],
            filter_weights: vec![1.0 / 3.0; 6],
            smoothed_weights: None,
            log_evidence: 0.0,
        };
        let s = backward_smooth(ens, &model, &model.theta_true, &[]).unwrap();
        for w in pairwise_weights(&s, &model, &model.theta_true, &[], 0).unwrap() {
            assert_relative_eq!(w, 1.0 / 9.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn last_step_smoothed_equals_filter() {
        let lg = LinearGaussian::default();
        let model = linear_model(&lg);
        let (ys, _) = linear_data(&lg, 12, 5);
        let data = LocalData { outputs: &ys, inputs: &[], horizon: 12 };
        let ens = backward_smooth(pf_forward(&model, data, &model.theta_true, 64, 2).unwrap(), &model, &model.theta_true, &[]).unwrap();
        assert_eq!(ens.smoothed_weights_at(11).unwrap(), ens.filter_weights_at(11));
        for t in 0..12 {
            assert_relative_eq!(ens.smoothed_weights_at(t).unwrap().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(ens.filter_weights_at(t).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    /// Replicate-based comparison against the Kalman filter and RTS smoother.
    #[test]
    fn particle_means_match_kalman_and_rts() {
        let lg = LinearGaussian::default();
        let model = linear_model(&lg);
        let horizon = 30;
        let (ys, _) = linear_data(&lg, horizon, 17);
        let kf = kalman_filter(&lg, &ys);
        let rts = rts_smoother(&lg, &kf);
        let reps = 24;
        let runs: Vec<ParticleEnsemble> = (0..reps)
            .map(|r| {
                let data = LocalData { outputs: &ys, inputs: &[], horizon };
                let e = pf_forward(&model, data, &model.theta_true, 1000, 100 + r).unwrap();
                backward_smooth(e, &model, &model.theta_true, &[]).unwrap()
            })
            .collect();
        for (label, oracle, est) in [
            ("filter", kf.means.clone(), runs.iter().map(|e| (0..horizon).map(|t| e.filter_mean(t)[0]).collect::<Vec<_>>()).collect::<Vec<_>>()),
            ("smoother", rts.clone(), runs.iter().map(|e| (0..horizon).map(|t| e.smoothed_mean(t).unwrap()[0]).collect::<Vec<_>>()).collect::<Vec<_>>()),
        ] {
            let (avg, inside) = crate::testutil::replicate_bias_check(&est, &oracle);
            assert!(avg, "{label}: time-averaged bias outside 3 SE");
            assert!(inside >= 0.9, "{label}: only {inside} of the time points within 3 SE");
        }
    }

    #[test]
    fn error_shrinks_with_particle_count() {
        let lg = LinearGaussian::default();
        let model = linear_model(&lg);
        let horizon = 10;
        let (ys, _) = linear_data(&lg, horizon, 3);
        let rts = rts_smoother(&lg, &kalman_filter(&lg, &ys));
        let rmse = |mm: usize| {
            let mut total = 0.0;
            for r in 0..3 {
                let data = LocalData { outputs: &ys, inputs: &[], horizon };
                let e = backward_smooth(pf_forward(&model, data, &model.theta_true, mm, 50 + r).unwrap(), &model, &model.theta_true, &[]).unwrap();
                total += (0..horizon).map(|t| (e.smoothed_mean(t).unwrap()[0] - rts[t]).powi(2)).sum::<f64>();
            }
            (total / (3 * horizon) as f64).sqrt()
        };
        let (a, b, c) = (rmse(100), rmse(1000), rmse(10000));
        assert!(a > b && b > c, "rmse {a} {b} {c}");
    }

    #[test]
    fn selection_examples() {
        assert_eq!(top_indices(&[0.4, 0.3, 0.2, 0.1], 2), vec![0, 1]);
        assert_eq!(top_indices(&[0.25; 4], 2), vec![0, 1]);
        let ens = ParticleEnsemble {
            num_particles: 4,
            horizon: 1,
            state_dim: 1,
            particles: vec![1.0, 2.0, 3.0, 4.0],
            filter_weights: vec![0.4, 0.3, 0.2, 0.1],
            smoothed_weights: Some(vec![0.4, 0.3, 0.2, 0.1]),
            log_evidence: 0.0,
        };
        let c = select_contribution(&ens, 2).unwrap();
        assert_eq!(c.indices, vec![0, 1]);
        assert_eq!(c.scaled(0), vec![0.4, 0.6]);
        assert_eq!(contribution_size(5, 2), 3);
    }

    #[test]
    fn determinism_per_seed() {
        let model = ModelClass::benchmark();
        let ys: Vec<f64> = (0..15).map(|t| (t as f64 * 0.3).sin().abs()).collect();
        let us: Vec<f64> = (1..=15).map(|t| (1.2 * t as f64).cos()).collect();
        let data = LocalData { outputs: &ys, inputs: &us, horizon: 15 };
        let a = smooth_agent(&model, data, &model.theta_true, 80, 3, 7, 2).unwrap();
        let b = smooth_agent(&model, data, &model.theta_true, 80, 3, 7, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let ens = ParticleEnsemble {
            num_particles: 2,
            horizon: 1,
            state_dim: 2,
            particles: vec![1.0, 2.0, 3.0, 4.0],
            filter_weights: vec![0.5, 0.5],
            smoothed_weights: Some(vec![0.5, 0.5]),
            log_evidence: 0.0,
        };
        let csv = ens.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "t,i,x_1,x_2,w_filter,w_smooth");
        assert_eq!(csv.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn selection_matches_sort_oracle(ws in proptest::collection::vec(0.0f64..1.0, 1..40), k in 1usize..10) {
            let k = k.min(ws.len());
            let got = top_indices(&ws, k);
            let mut pairs: Vec<(f64, usize)> = ws.iter().copied().zip(0..).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = pairs.iter().take(k).map(|p| p.1).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn weights_stay_normalized(seed in 0u64..500, y0 in -3.0f64..3.0) {
            let model = ModelClass::scalar_linear(0.7, 1.0, 0.4, 0.2);
            let ys: Vec<f64> = (0..6).map(|t| y0 + 0.3 * t as f64).collect();
            let data = LocalData { outputs: &ys, inputs: &[], horizon: 6 };
            let e = backward_smooth(pf_forward(&model, data, &model.theta_true, 30, seed).unwrap(), &model, &model.theta_true, &[]).unwrap();
            for t in 0..6 {
                let f: f64 = e.filter_weights_at(t).iter().sum();
                let s: f64 = e.smoothed_weights_at(t).unwrap().iter().sum();
                prop_assert!((f - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
                prop_assert!(e.smoothed_weights_at(t).unwrap().iter().all(|w| *w >= 0.0));
            }
            for t in 0..5 {
                let pw = pairwise_weights(&e, &model, &model.theta_true, &[], t).unwrap();
                prop_assert!((pw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
