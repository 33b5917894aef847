//! E-step likelihood surrogates, the constrained M-step and the full
//! identification loop.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::gossip::{run_consensus, ConsensusConfig, ConsensusReport, ContributionBlock};
use crate::model::ModelClass;
use crate::parallel;
use crate::rng::{derive_seed, stream, Domain};
use crate::sim::TrajectoryData;
use crate::smoother::{pairwise_weights, smooth_agent, ContributionSet, LocalData, ParticleEnsemble};
use crate::stability::{box_witnesses, CertificateGrid, ContractionConstraint, StabilityCertificate};
use crate::topology::DirectedNetwork;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Consensus particles for every time step.
#[derive(Debug, Clone)]
pub struct GlobalParticleSet {
    pub horizon: usize,
    pub num_agents: usize,
    pub per_agent: usize,
    pub state_dim: usize,
    /// Per `t`: `n * K * V` consensus values of the scaled particles.
    pub values: Vec<Vec<f64>>,
    /// Per `t`: `K * V` consensus weights.
    pub weights: Vec<Vec<f64>>,
    pub reports: Vec<ConsensusReport>,
}

impl GlobalParticleSet {
    /// Weighted mean of agent `u`'s consensus block at `t`.
    pub fn block_estimate(&self, t: usize, u: usize) -> Vec<f64> {
        let (k, n) = (self.per_agent, self.state_dim);
        let w: f64 = self.weights[t][u * k..(u + 1) * k].iter().sum();
        let mut out = vec![0.0; n];
        for j in 0..k {
            for d in 0..n {
                out[d] += self.values[t][(u * k + j) * n + d];
            }
        }
        out.iter_mut().for_each(|x| *x /= w);
        out
    }

    /// Consensus particle list `x~ * w_bar` with globally normalized weights.
    pub fn particle_list(&self, t: usize) -> Vec<f64> {
        let total: f64 = self.weights[t].iter().sum();
        self.values[t].iter().map(|v| v / total).collect()
    }

    /// Network-wide aggregate: the sum of the particle list.
    pub fn aggregate(&self, t: usize) -> Vec<f64> {
        let n = self.state_dim;
        let mut out = vec![0.0; n];
        for (i, v) in self.particle_list(t).into_iter().enumerate() {
            out[i % n] += v;
        }
        out
    }

    /// Plug-in states used as witnesses of the constraint.
    pub fn witness_states(&self, mode: PlugIn) -> Vec<Vec<f64>> {
        match mode {
            PlugIn::Aggregate => (0..self.horizon).map(|t| self.aggregate(t)).collect(),
            PlugIn::Blocks => (0..self.horizon).flat_map(|t| (0..self.num_agents).map(move |u| (t, u))).map(|(t, u)| self.block_estimate(t, u)).collect(),
        }
    }
}

/// Runs one consensus per time step (in parallel over `t`).
pub fn build_global_set(contributions: &[ContributionSet], net: &DirectedNetwork, cfg: &ConsensusConfig, seed: u64, reader: usize) -> Result<GlobalParticleSet> {
    let first = contributions.first().ok_or_else(|| Error::Parameter("no contributions".into()))?;
    let (horizon, per_agent, state_dim) = (first.horizon, first.per_agent(), first.state_dim);
    let runs = parallel::map_indices(horizon, |t| {
        let blocks: Vec<ContributionBlock> = contributions.iter().map(|c| ContributionBlock { values: c.scaled(t), weights: c.weights_at(t).to_vec() }).collect();
        run_consensus(&blocks, net, cfg, derive_seed(seed, Domain::Gossip, t as u64, 0), reader)
    });
    let mut values = Vec::with_capacity(horizon);
    let mut weights = Vec::with_capacity(horizon);
    let mut reports = Vec::with_capacity(horizon);
    for r in runs {
        let (out, rep) = r?;
        values.push(out.values);
        weights.push(out.weights);
        reports.push(rep);
    }
    Ok(GlobalParticleSet { horizon, num_agents: contributions.len(), per_agent, state_dim, values, weights, reports })
}

impl ContributionSet {
    pub fn per_agent(&self) -> usize {
        self.per_time
    }
}

/// Plug-in likelihood terms: consensus state transitions and the designated
/// agent's outputs.
#[derive(Debug, Clone)]
pub struct QbarTerms {
    /// `(x(t), u(t), x(t+1))` triples.
    pub transitions: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    /// `(x(t), u(t), y(t))` triples.
    pub outputs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    /// Initial block states.
    pub initial: Vec<Vec<f64>>,
}

/// Which consensus states stand in for the latent trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlugIn {
    /// One network-wide aggregate per time step.
    #[default]
    Aggregate,
    /// Every agent's consensus block estimate.
    Blocks,
}

impl QbarTerms {
    pub fn from_global(gset: &GlobalParticleSet, data: &TrajectoryData, designated: usize, mode: PlugIn) -> Self {
        let horizon = gset.horizon;
        let states: Vec<Vec<Vec<f64>>> = match mode {
            PlugIn::Aggregate => vec![(0..horizon).map(|t| gset.aggregate(t)).collect()],
            PlugIn::Blocks => (0..gset.num_agents).map(|u| (0..horizon).map(|t| gset.block_estimate(t, u)).collect()).collect(),
        };
        let owner = |i: usize| if mode == PlugIn::Aggregate { designated } else { i };
        let mut transitions = Vec::new();
        for (i, xs) in states.iter().enumerate() {
            for t in 0..horizon.saturating_sub(1) {
                transitions.push((xs[t].clone(), data.input(owner(i), t).to_vec(), xs[t + 1].clone()));
            }
        }
        let own = &states[if mode == PlugIn::Aggregate { 0 } else { designated }];
        let outputs = (0..horizon).map(|t| (own[t].clone(), data.input(designated, t).to_vec(), data.output(designated, t).to_vec())).collect();
        let initial = states.iter().map(|xs| xs[0].clone()).collect();
        Self { transitions, outputs, initial }
    }

    /// Terms built directly from state estimates of a single sequence.
    pub fn from_sequence(states: &[Vec<f64>], inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Self {
        let transitions = (0..states.len().saturating_sub(1)).map(|t| (states[t].clone(), inputs[t].clone(), states[t + 1].clone())).collect();
        let outs = (0..states.len()).map(|t| (states[t].clone(), inputs[t].clone(), outputs[t].clone())).collect();
        Self { transitions, outputs: outs, initial: states.first().cloned().into_iter().collect() }
    }
}

/// The three parts of the consensus surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QbarParts {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl QbarParts {
    pub fn total(&self) -> f64 {
        self.q1 + self.q2 + self.q3
    }
}

fn gaussian_log(residual2: f64, var: f64, dim: usize) -> f64 {
    -0.5 * (dim as f64 * (LN_2PI + var.ln()) + residual2 / var)
}

/// Exact Gaussian complete-data log-likelihood at the plug-in states.
pub fn qbar_parts(model: &ModelClass, theta: &[f64], terms: &QbarTerms) -> Result<QbarParts> {
    let (n, p) = (model.state_dim(), model.output_dim());
    let prior_var = model.initial_spread * model.initial_spread;
    let q1: f64 = terms.initial.iter().map(|x| gaussian_log(dist2(x, &model.initial_state), prior_var, n)).sum();
    let s = model.process_variance(theta);
    let w = model.measurement_variance(theta);
    let mut f = vec![0.0; n];
    let mut q2 = 0.0;
    for (x, u, next) in &terms.transitions {
        model.transition_mean(theta, x, u, &mut f);
        q2 += gaussian_log(dist2(next, &f), s, n);
    }
    let mut h = vec![0.0; p];
    let mut q3 = 0.0;
    for (x, u, y) in &terms.outputs {
        model.output_mean(theta, x, u, &mut h);
        q3 += gaussian_log(dist2(y, &h), w, p);
    }
    if !(q1 + q2 + q3).is_finite() {
        return Err(Error::Numerical(format!("non-finite surrogate (q1 {q1}, q2 {q2}, q3 {q3})")));
    }
    Ok(QbarParts { q1, q2, q3 })
}

pub fn qbar(model: &ModelClass, theta: &[f64], terms: &QbarTerms) -> Result<f64> {
    Ok(qbar_parts(model, theta, terms)?.total())
}

/// Unit-weight residual form with the `-(2T - 1) sum_i theta_i ln|theta_i|`
/// term, kept for comparison only.
pub fn qbar_literal(model: &ModelClass, theta: &[f64], terms: &QbarTerms) -> f64 {
    let (n, p) = (model.state_dim(), model.output_dim());
    let mut f = vec![0.0; n];
    let mut h = vec![0.0; p];
    let mut total = 0.0;
    for (x, u, next) in &terms.transitions {
        model.transition_mean(theta, x, u, &mut f);
        total -= dist2(next, &f);
    }
    for (x, u, y) in &terms.outputs {
        model.output_mean(theta, x, u, &mut h);
        total -= dist2(y, &h);
    }
    let horizon = terms.outputs.len() as f64;
    total - (2.0 * horizon - 1.0) * theta.iter().filter(|t| **t != 0.0).map(|t| t * t.abs().ln()).sum::<f64>()
}

/// Local particle surrogate of one agent from its own smoothed ensemble.
pub fn qtilde_local(model: &ModelClass, theta: &[f64], theta_k: &[f64], ens: &ParticleEnsemble, data: LocalData<'_>) -> Result<QbarParts> {
    let sw = ens.smoothed_weights.as_ref().ok_or_else(|| Error::Parameter("ensemble has not been smoothed".into()))?;
    let (n, m, p, mm) = (model.state_dim(), model.input_dim(), model.output_dim(), ens.num_particles);
    let prior_var = model.initial_spread * model.initial_spread;
    let s = model.process_variance(theta);
    let w = model.measurement_variance(theta);
    let q1: f64 = (0..mm).map(|i| sw[i] * gaussian_log(dist2(ens.particle(0, i), &model.initial_state), prior_var, n)).sum();
    let mut q2 = 0.0;
    let mut f = vec![0.0; n];
    for t in 0..ens.horizon.saturating_sub(1) {
        let pw = pairwise_weights(ens, model, theta_k, data.inputs, t)?;
        let u = &data.inputs[t * m..(t + 1) * m];
        for i in 0..mm {
            model.transition_mean(theta, ens.particle(t, i), u, &mut f);
            for j in 0..mm {
                let wij = pw[i * mm + j];
                if wij > 0.0 {
                    let term = gaussian_log(dist2(ens.particle(t + 1, j), &f), s, n);
                    if !term.is_finite() {
                        return Err(Error::Numerical(format!("non-finite transition log-density at t={}, i={}, j={}", t + 1, i + 1, j + 1)));
                    }
                    q2 += wij * term;
                }
            }
        }
    }
    let mut h = vec![0.0; p];
    let mut q3 = 0.0;
    for t in 0..ens.horizon {
        let u = &data.inputs[t * m..(t + 1) * m];
        let y = &data.outputs[t * p..(t + 1) * p];
        for i in 0..mm {
            model.output_mean(theta, ens.particle(t, i), u, &mut h);
            q3 += sw[t * mm + i] * gaussian_log(dist2(y, &h), w, p);
        }
    }
    Ok(QbarParts { q1, q2, q3 })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sufficient statistics of the structural least-squares problem.
#[derive(Debug, Clone)]
struct Normal {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

fn normal_equations(model: &ModelClass, terms: &QbarTerms, s: f64, w: f64) -> (Normal, Normal) {
    let (n, p, q) = (model.state_dim(), model.output_dim(), model.num_structural());
    let mut a2 = DMatrix::zeros(q, q);
    let mut b2 = DVector::zeros(q);
    let (mut off, mut phi) = (vec![0.0; n], vec![0.0; n * q]);
    for (x, u, next) in &terms.transitions {
        model.transition_features(x, u, &mut off, &mut phi);
        accumulate(&mut a2, &mut b2, &phi, &off, next, q);
    }
    let mut a3 = DMatrix::zeros(q, q);
    let mut b3 = DVector::zeros(q);
    let (mut off, mut psi) = (vec![0.0; p], vec![0.0; p * q]);
    for (x, u, y) in &terms.outputs {
        model.output_features(x, u, &mut off, &mut psi);
        accumulate(&mut a3, &mut b3, &psi, &off, y, q);
    }
    (Normal { a: a2 / s, b: b2 / s }, Normal { a: a3 / w, b: b3 / w })
}

fn accumulate(a: &mut DMatrix<f64>, b: &mut DVector<f64>, feat: &[f64], off: &[f64], target: &[f64], q: usize) {
    for r in 0..off.len() {
        let row = &feat[r * q..(r + 1) * q];
        let resid = target[r] - off[r];
        for i in 0..q {
            if row[i] == 0.0 {
                continue;
            }
            b[i] += row[i] * resid;
            for j in 0..q {
                a[(i, j)] += row[i] * row[j];
            }
        }
    }
}

/// Closed-form variance update at fixed structural entries, clamped below.
fn update_variances(model: &ModelClass, theta: &mut [f64], terms: &QbarTerms) {
    let (n, p) = (model.state_dim(), model.output_dim());
    let mut f = vec![0.0; n];
    let rss2: f64 = terms
        .transitions
        .iter()
        .map(|(x, u, next)| {
            model.transition_mean(theta, x, u, &mut f);
            dist2(next, &f)
        })
        .sum();
    let mut h = vec![0.0; p];
    let rss3: f64 = terms
        .outputs
        .iter()
        .map(|(x, u, y)| {
            model.output_mean(theta, x, u, &mut h);
            dist2(y, &h)
        })
        .sum();
    if !terms.transitions.is_empty() {
        theta[model.process_var_index()] = (rss2 / (terms.transitions.len() * n) as f64 / model.noise_scale()).max(VARIANCE_FLOOR);
    }
    if !terms.outputs.is_empty() {
        theta[model.measurement_var_index()] = (rss3 / (terms.outputs.len() * p) as f64).max(VARIANCE_FLOOR);
    }
}

pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Result of one M-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstepOutcome {
    pub theta: Vec<f64>,
    pub q_new: f64,
    pub q_old: f64,
    /// The unconstrained maximizer was infeasible.
    pub constraint_active: bool,
    /// No ascent was possible; `theta` is the previous iterate.
    pub stalled: bool,
    /// Norm of the structural gradient at the returned point.
    pub gradient_norm: f64,
}

/// Quadratic structural objective `b^T beta - beta^T A beta / 2` (up to a constant).
struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Quadratic {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        self.b.dot(beta) - 0.5 * beta.dot(&(&self.a * beta))
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * beta
    }

    fn maximizer(&self) -> DVector<f64> {
        let q = self.a.nrows();
        let scale = (self.a.trace() / q as f64).max(1e-300);
        let reg = &self.a + DMatrix::identity(q, q) * (1e-12 * scale);
        match reg.clone().cholesky() {
            Some(c) => c.solve(&self.b),
            None => reg.lu().solve(&self.b).unwrap_or_else(|| DVector::zeros(q)),
        }
    }
}

fn with_structural(theta: &[f64], beta: &DVector<f64>) -> Vec<f64> {
    let mut out = theta.to_vec();
    out[..beta.len()].copy_from_slice(beta.as_slice());
    out
}

/// Largest `lambda` in `[0, 1]` with `from + lambda (to - from)` feasible,
/// given a feasible `from`.
fn bisect_segment(con: &ContractionConstraint, theta: &[f64], from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
    if con.is_feasible(&with_structural(theta, to)) {
        return to.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if con.is_feasible(&with_structural(theta, &(from + (to - from) * mid))) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    from + (to - from) * lo
}

/// Radial projection toward the model's contractive anchor.
fn project(model: &ModelClass, con: &ContractionConstraint, theta: &[f64], z: &DVector<f64>) -> DVector<f64> {
    let q = z.len();
    let full = with_structural(theta, z);
    let anchor = DVector::from_column_slice(&model.contractive_anchor(&full)[..q]);
    bisect_segment(con, theta, &anchor, z)
}

/// Constrained M-step: exact structural maximization when feasible, else
/// projected gradient ascent from a feasible start; then closed-form noise
/// variances. Returns `theta_k` unchanged when no ascent is found.
pub fn mstep(model: &ModelClass, theta_k: &[f64], terms: &QbarTerms, constraint: Option<&ContractionConstraint>) -> Result<MstepOutcome> {
    model.validate_theta(theta_k)?;
    let q = model.num_structural();
    let q_old = qbar(model, theta_k, terms)?;
    let (n2, n3) = normal_equations(model, terms, model.process_variance(theta_k), model.measurement_variance(theta_k));
    let quad = Quadratic { a: &n2.a + &n3.a, b: &n2.b + &n3.b };
    let beta_k = DVector::from_column_slice(&theta_k[..q]);
    let unconstrained = quad.maximizer();
    let mut active = false;
    let beta = match constraint {
        None => unconstrained,
        Some(con) if con.is_feasible(&with_structural(theta_k, &unconstrained)) => unconstrained,
        Some(con) => {
            active = true;
            let start = if con.is_feasible(theta_k) { beta_k.clone() } else { project(model, con, theta_k, &beta_k) };
            let mut cur = bisect_segment(con, theta_k, &start, &unconstrained);
            let mut value = quad.value(&cur);
            let diag: Vec<f64> = (0..q).map(|i| quad.a[(i, i)].max(1e-300)).collect();
            for _ in 0..100 {
                let g = quad.gradient(&cur);
                let d = DVector::from_fn(q, |i, _| g[i] / diag[i]);
                let curvature = d.dot(&(&quad.a * &d));
                if curvature <= 0.0 || g.dot(&d) <= 0.0 {
                    break;
                }
                let mut alpha = g.dot(&d) / curvature;
                let mut improved = false;
                for _ in 0..50 {
                    let cand = project(model, con, theta_k, &(&cur + &d * alpha));
                    let v = quad.value(&cand);
                    if v > value + 1e-14 * value.abs().max(1.0) {
                        cur = cand;
                        value = v;
                        improved = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            cur
        }
    };
    let mut theta = with_structural(theta_k, &beta);
    update_variances(model, &mut theta, terms);
    let gradient_norm = quad.gradient(&beta).norm();
    let candidate = qbar(model, &theta, terms);
    match candidate {
        Ok(q_new) if q_new >= q_old - 1e-12 && theta.iter().all(|v| v.is_finite()) => {
            Ok(MstepOutcome { theta, q_new, q_old, constraint_active: active, stalled: false, gradient_norm })
        }
        _ => Ok(MstepOutcome { theta: theta_k.to_vec(), q_new: q_old, q_old, constraint_active: active, stalled: true, gradient_norm }),
    }
}

/// Identification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub num_particles: usize,
    pub consensus: ConsensusConfig,
    /// Stop once `Q(theta_{k+1}) - Q(theta_k)` falls below this.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Enforce the contraction constraint in the M-step.
    pub constrained: bool,
    pub grid: CertificateGrid,
    /// Extra witness grid `(lo, hi, points per axis)`.
    pub witness_box: Option<(f64, f64, usize)>,
    pub designated_agent: usize,
    pub plug_in: PlugIn,
    pub smoother_retries: usize,
    /// Abort once `|theta|` exceeds this.
    pub divergence_norm: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            num_particles: 500,
            consensus: ConsensusConfig::default(),
            epsilon: 1.0,
            max_iterations: 25,
            seed: 0,
            constrained: true,
            grid: CertificateGrid::default(),
            witness_box: None,
            designated_agent: 0,
            plug_in: PlugIn::Aggregate,
            smoother_retries: 3,
            divergence_norm: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub theta: Vec<f64>,
    pub q_new: f64,
    pub q_old: f64,
    pub delta_q: f64,
    pub constraint_active: bool,
    pub stalled: bool,
    pub gradient_norm: f64,
    pub certificate: Option<StabilityCertificate>,
    /// Mean consensus rounds over the time steps.
    pub rounds: f64,
    pub messages: usize,
    pub converged_consensus: bool,
    pub max_mass_drift: f64,
    pub max_count_drift: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: Vec<f64>,
    pub theta0: Vec<f64>,
    pub param_names: Vec<String>,
    pub certificate: Option<StabilityCertificate>,
    /// Witness states on which `certificate` was fitted.
    pub witnesses: Vec<Vec<f64>>,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub initial_repairs: usize,
    pub seconds: f64,
}

impl ThetaEstimate {
    /// `k, theta_1..theta_q, qbar, delta_qbar, rounds, seconds`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("k");
        for name in &self.param_names {
            let _ = write!(out, ",{name}");
        }
        out.push_str(",qbar,delta_qbar,rounds,seconds\n");
        for r in &self.history {
            let _ = write!(out, "{}", r.k);
            for v in &r.theta {
                let _ = write!(out, ",{v:e}");
            }
            let _ = writeln!(out, ",{:e},{:e},{},{}", r.q_new, r.delta_q, r.rounds, r.seconds);
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "theta": self.theta,
            "theta0": self.theta0,
            "param_names": self.param_names,
            "iterations": self.iterations,
            "converged": self.converged,
            "initial_repairs": self.initial_repairs,
            "certificate": self.certificate,
            "witness_count": self.witnesses.len(),
            "seconds": self.seconds,
        }))?)
    }
}

/// `center_i (1 + range U(-1, 1))` per entry.
pub fn draw_initial(center: &[f64], range: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Domain::Init, 0, 0);
    center.iter().map(|c| c * (1.0 + range * rng.gen_range(-1.0..1.0))).collect()
}

/// E-step output for one parameter vector.
pub struct EStep {
    pub gset: GlobalParticleSet,
    pub terms: QbarTerms,
}

pub fn e_step(model: &ModelClass, data: &TrajectoryData, net: &DirectedNetwork, theta: &[f64], cfg: &EmConfig, iteration: usize) -> Result<EStep> {
    let num_agents = net.num_agents();
    if data.num_agents() != num_agents {
        return param_err(format!("data has {} agents, network has {num_agents}", data.num_agents()));
    }
    let j_max = net.max_degree();
    let seed = derive_seed(cfg.seed, Domain::Filter, iteration as u64, 0);
    let smoothed = parallel::map_indices(num_agents, |v| {
        let local = LocalData { outputs: &data.outputs[v], inputs: &data.inputs[v], horizon: data.horizon };
        smooth_agent(model, local, theta, cfg.num_particles, j_max, derive_seed(seed, Domain::Filter, v as u64, 1), cfg.smoother_retries).map(|(_, c)| c)
    });
    let contributions = smoothed.into_iter().collect::<Result<Vec<_>>>()?;
    let gset = build_global_set(&contributions, net, &cfg.consensus, derive_seed(cfg.seed, Domain::Gossip, iteration as u64, 0), cfg.designated_agent)?;
    let terms = QbarTerms::from_global(&gset, data, cfg.designated_agent, cfg.plug_in);
    Ok(EStep { gset, terms })
}

fn witness_set(model: &ModelClass, gset: &GlobalParticleSet, cfg: &EmConfig) -> Vec<Vec<f64>> {
    let mut w = gset.witness_states(cfg.plug_in);
    if let Some((lo, hi, points)) = cfg.witness_box {
        w.extend(box_witnesses(model.state_dim(), lo, hi, points));
    }
    w
}

/// The identification loop. `theta0` must have valid noise variances.
pub fn run_pcdpem(data: &TrajectoryData, net: &DirectedNetwork, model: &ModelClass, theta0: &[f64], cfg: &EmConfig) -> Result<ThetaEstimate> {
    model.validate_theta(theta0)?;
    if cfg.max_iterations == 0 || cfg.num_particles < 2 {
        return param_err("need at least one iteration and two particles");
    }
    if cfg.designated_agent >= net.num_agents() {
        return param_err(format!("designated agent {} out of range", cfg.designated_agent));
    }
    let start = Instant::now();
    let wrap = |iteration: usize| move |e: Error| Error::Iteration { iteration, source: Box::new(e) };
    let mut theta = theta0.to_vec();
    let mut estep = e_step(model, data, net, &theta, cfg, 0).map_err(wrap(0))?;
    let mut initial_repairs = 0;
    if cfg.constrained {
        for _ in 0..3 {
            let con = ContractionConstraint::new(model, witness_set(model, &estep.gset, cfg), cfg.grid.clone())?;
            if con.is_feasible(&theta) {
                break;
            }
            let q = model.num_structural();
            let beta = project(model, &con, &theta, &DVector::from_column_slice(&theta[..q]));
            theta = with_structural(&theta, &beta);
            initial_repairs += 1;
            estep = e_step(model, data, net, &theta, cfg, 0).map_err(wrap(0))?;
        }
    }
    let theta_start = theta.clone();
    let mut history = Vec::new();
    let mut certificate = None;
    let mut witnesses = Vec::new();
    let mut converged = false;
    for k in 0..cfg.max_iterations {
        let iter_start = Instant::now();
        if k > 0 {
            estep = e_step(model, data, net, &theta, cfg, k).map_err(wrap(k))?;
        }
        let w = witness_set(model, &estep.gset, cfg);
        let con = if cfg.constrained { Some(ContractionConstraint::new(model, w.clone(), cfg.grid.clone()).map_err(wrap(k))?) } else { None };
        let out = mstep(model, &theta, &estep.terms, con.as_ref()).map_err(wrap(k))?;
        // a stall returns theta_k, already certified on the previous witnesses
        let keep = out.stalled && certificate.is_some();
        let cert = if keep { certificate.clone() } else { con.as_ref().and_then(|c| c.fit(&out.theta)) };
        if cfg.constrained && !keep {
            witnesses = w;
        }
        certificate = cert.clone();
        let reports = &estep.gset.reports;
        let record = IterationRecord {
            k: k + 1,
            theta: out.theta.clone(),
            q_new: out.q_new,
            q_old: out.q_old,
            delta_q: out.q_new - out.q_old,
            constraint_active: out.constraint_active,
            stalled: out.stalled,
            gradient_norm: out.gradient_norm,
            certificate: cert,
            rounds: reports.iter().map(|r| r.rounds_run as f64).sum::<f64>() / reports.len() as f64,
            messages: reports.iter().map(|r| r.messages_sent).sum(),
            converged_consensus: reports.iter().all(|r| r.converged),
            max_mass_drift: reports.iter().map(|r| r.max_mass_drift).fold(0.0, f64::max),
            max_count_drift: reports.iter().map(|r| r.max_count_drift).fold(0.0, f64::max),
            seconds: iter_start.elapsed().as_secs_f64(),
        };
        let delta = record.delta_q;
        let stalled = record.stalled;
        theta = out.theta;
        history.push(record);
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= cfg.divergence_norm) {
            return Err(Error::DivergenceGuard { iteration: k + 1, norm });
        }
        if stalled || delta < cfg.epsilon {
            converged = true;
            break;
        }
    }
    Ok(ThetaEstimate {
        theta,
        theta0: theta_start,
        param_names: model.param_names(),
        certificate,
        witnesses,
        iterations: history.len(),
        history,
        converged,
        initial_repairs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `|theta - theta*| / |theta*|`.
pub fn relative_error(theta: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = theta.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}
