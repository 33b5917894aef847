//! Linearly parametrized agent dynamics.
//!
//! Every model is written as
//!
//! ```text
//! x(t+1) = a(x, u) + Phi(x, u) * beta + noise,   noise ~ N(mu_eps, s * scale * I)
//! y(t)   = c(x, u) + Psi(x, u) * beta + noise,   noise ~ N(mu_eta, w * I)
//! ```
//!
//! where `beta` is the structural part of the parameter vector and `scale`
//! is 1 for discrete-time models and `dt` for Euler-discretized ones. The
//! parameter vector is laid out as `[beta..., (mu_eps, mu_eta)?, s, w]`; the
//! noise means are optional and, when enabled, behave as structural
//! parameters with constant features.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// Default Euler step for the continuous-time systems.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `x+ = a x + b x/(1+x^2) + c u + e`, `y = d x^2 + n`, with `u(t) = cos(1.2 t)`.
    Benchmark,
    /// Drift `a x`, output `y = b x`.
    GeneRegulation,
    /// Two-state FitzHugh–Nagumo drift, output `y = x1 + x2`.
    FitzHughNagumo,
    /// Discrete `x+ = a x + e`, `y = c x + n`.
    ScalarLinear,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Benchmark => "benchmark",
            ModelKind::GeneRegulation => "gene_regulation",
            ModelKind::FitzHughNagumo => "fitzhugh_nagumo",
            ModelKind::ScalarLinear => "scalar_linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "benchmark" => ModelKind::Benchmark,
            "gene_regulation" => ModelKind::GeneRegulation,
            "fitzhugh_nagumo" => ModelKind::FitzHughNagumo,
            "scalar_linear" => ModelKind::ScalarLinear,
            other => return param_err(format!("unknown model `{other}`")),
        })
    }

    fn structural_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Benchmark => &["a", "b", "c", "d"],
            ModelKind::GeneRegulation => &["a", "b"],
            ModelKind::FitzHughNagumo => &["a", "b", "c", "d", "e", "f"],
            ModelKind::ScalarLinear => &["a", "c"],
        }
    }

    fn dims(self) -> (usize, usize, usize) {
        match self {
            ModelKind::Benchmark => (1, 1, 1),
            ModelKind::GeneRegulation | ModelKind::ScalarLinear => (1, 0, 1),
            ModelKind::FitzHughNagumo => (2, 0, 1),
        }
    }

    fn is_continuous(self) -> bool {
        matches!(self, ModelKind::GeneRegulation | ModelKind::FitzHughNagumo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TimeModel {
    Discrete,
    /// Forward Euler: `x+ = x + dt * drift(x) + sqrt(dt) * noise`.
    Euler { dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClass {
    pub kind: ModelKind,
    pub time: TimeModel,
    /// Whether the noise means are part of the parameter vector.
    pub noise_means: bool,
    /// Initial state used by the simulator.
    pub initial_state: Vec<f64>,
    /// Standard deviation of the Gaussian prior the filter places on `x(1)`.
    pub initial_spread: f64,
    /// Data-generating parameter vector.
    pub theta_true: Vec<f64>,
}

impl ModelClass {
    /// Discrete-time benchmark with `theta = [a, b, c, d, s, w]`.
    pub fn benchmark() -> Self {
        Self {
            kind: ModelKind::Benchmark,
            time: TimeModel::Discrete,
            noise_means: false,
            initial_state: vec![0.0],
            initial_spread: 1.0,
            theta_true: vec![0.5, 25.0, 8.0, 0.05, 0.5, 1.0],
        }
    }

    /// Benchmark whose noise terms have the given means and variances;
    /// `theta = [a, b, c, d, mu_eps, mu_eta, s, w]`.
    pub fn benchmark_with_noise(mean: f64, variance: f64) -> Self {
        Self {
            noise_means: true,
            theta_true: vec![0.5, 25.0, 8.0, 0.05, mean, mean, variance, variance],
            ..Self::benchmark()
        }
    }

    /// Gene-regulation dynamics, `theta = [a, b, s, w]`, Euler step `dt`.
    pub fn gene_regulation(dt: f64) -> Self {
        Self {
            kind: ModelKind::GeneRegulation,
            time: TimeModel::Euler { dt },
            noise_means: false,
            initial_state: vec![1.0],
            initial_spread: 0.05,
            theta_true: vec![-0.2, 1.0, 0.001, 0.01],
        }
    }

    /// FitzHugh–Nagumo dynamics, `theta = [a, b, c, d, e, f, s, w]`, Euler step `dt`.
    pub fn fitzhugh_nagumo(dt: f64) -> Self {
        Self {
            kind: ModelKind::FitzHughNagumo,
            time: TimeModel::Euler { dt },
            noise_means: false,
            initial_state: vec![0.87609, -3.5091],
            initial_spread: 0.05,
            theta_true: vec![1.0, -1.0, -1.0, 0.28, 0.5, -0.04, 0.05, 0.1],
        }
    }

    /// Scalar linear-Gaussian model, `theta = [a, c, s, w]`.
    pub fn scalar_linear(a: f64, c: f64, s: f64, w: f64) -> Self {
        Self {
            kind: ModelKind::ScalarLinear,
            time: TimeModel::Discrete,
            noise_means: false,
            initial_state: vec![0.0],
            initial_spread: 1.0,
            theta_true: vec![a, c, s, w],
        }
    }

    /// Built-in model by name with its default discretization.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match ModelKind::from_name(name)? {
            ModelKind::Benchmark => Self::benchmark(),
            ModelKind::GeneRegulation => Self::gene_regulation(DEFAULT_DT),
            ModelKind::FitzHughNagumo => Self::fitzhugh_nagumo(DEFAULT_DT),
            ModelKind::ScalarLinear => Self::scalar_linear(0.8, 1.0, 0.5, 0.5),
        })
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn state_dim(&self) -> usize {
        self.kind.dims().0
    }

    pub fn input_dim(&self) -> usize {
        self.kind.dims().1
    }

    pub fn output_dim(&self) -> usize {
        self.kind.dims().2
    }

    /// Number of entries in the structural block (including noise means).
    pub fn num_structural(&self) -> usize {
        self.kind.structural_names().len() + if self.noise_means { 2 } else { 0 }
    }

    pub fn num_params(&self) -> usize {
        self.num_structural() + 2
    }

    pub fn process_var_index(&self) -> usize {
        self.num_structural()
    }

    pub fn measurement_var_index(&self) -> usize {
        self.num_structural() + 1
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.kind.structural_names().iter().map(|s| s.to_string()).collect();
        if self.noise_means {
            names.extend(["mu_eps".to_string(), "mu_eta".to_string()]);
        }
        names.extend(["s".to_string(), "w".to_string()]);
        names
    }

    pub fn dt(&self) -> Option<f64> {
        match self.time {
            TimeModel::Discrete => None,
            TimeModel::Euler { dt } => Some(dt),
        }
    }

    /// Multiplier applied to the process-noise variance (`dt` under Euler).
    pub fn noise_scale(&self) -> f64 {
        self.dt().unwrap_or(1.0)
    }

    /// Exogenous input at time `t` (1-based sample index).
    pub fn input(&self, t: usize, out: &mut [f64]) {
        if let ModelKind::Benchmark = self.kind {
            out[0] = (1.2 * t as f64).cos();
        }
    }

    pub fn validate_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return param_err(format!("{} expects {} parameters, got {}", self.name(), self.num_params(), theta.len()));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("theta[{i}] = {}", theta[i])));
        }
        let (s, w) = (theta[self.process_var_index()], theta[self.measurement_var_index()]);
        if s <= 0.0 || w <= 0.0 {
            return param_err(format!("noise variances must be positive (s = {s}, w = {w})"));
        }
        Ok(())
    }

    pub fn process_variance(&self, theta: &[f64]) -> f64 {
        theta[self.process_var_index()] * self.noise_scale()
    }

    pub fn measurement_variance(&self, theta: &[f64]) -> f64 {
        theta[self.measurement_var_index()]
    }

    fn process_mean(&self, theta: &[f64]) -> f64 {
        if self.noise_means {
            theta[self.kind.structural_names().len()] * self.noise_scale().sqrt()
        } else {
            0.0
        }
    }

    fn measurement_mean(&self, theta: &[f64]) -> f64 {
        if self.noise_means {
            theta[self.kind.structural_names().len() + 1]
        } else {
            0.0
        }
    }

    /// Continuous-time drift (Euler kinds) evaluated without noise.
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::GeneRegulation => out[0] = theta[0] * x[0],
            ModelKind::FitzHughNagumo => {
                let (x1, x2) = (x[0], x[1]);
                out[0] = theta[0] * x1 + theta[1] * x1 * x1 * x1 + theta[2] * x2;
                out[1] = theta[3] + theta[4] * x1 + theta[5] * x2;
            }
            _ => unreachable!("drift is only defined for continuous kinds"),
        }
    }

    /// Noise-free transition mean `f(x, u, theta)` including the process-noise mean.
    pub fn transition_mean(&self, theta: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) {
        let mu = self.process_mean(theta);
        match self.kind {
            ModelKind::Benchmark => {
                let x0 = x[0];
                out[0] = theta[0] * x0 + theta[1] * x0 / (1.0 + x0 * x0) + theta[2] * u[0] + mu;
            }
            ModelKind::ScalarLinear => out[0] = theta[0] * x[0] + mu,
            ModelKind::GeneRegulation | ModelKind::FitzHughNagumo => {
                let dt = self.noise_scale();
                self.drift(theta, x, out);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi + dt * *o + mu;
                }
            }
        }
    }

    /// Noise-free output mean `h(x, u, theta)` including the measurement-noise mean.
    pub fn output_mean(&self, theta: &[f64], x: &[f64], _u: &[f64], out: &mut [f64]) {
        let mu = self.measurement_mean(theta);
        out[0] = mu + match self.kind {
            ModelKind::Benchmark => theta[3] * x[0] * x[0],
            ModelKind::GeneRegulation => theta[1] * x[0],
            ModelKind::FitzHughNagumo => x[0] + x[1],
            ModelKind::ScalarLinear => theta[1] * x[0],
        };
    }

    /// Transition in feature form: `offset` (n) and `phi` (n x q_s, row-major)
    /// with `transition_mean = offset + phi * beta`.
    pub fn transition_features(&self, x: &[f64], u: &[f64], offset: &mut [f64], phi: &mut [f64]) {
        let q = self.num_structural();
        phi.fill(0.0);
        match self.kind {
            ModelKind::Benchmark => {
                offset[0] = 0.0;
                phi[0] = x[0];
                phi[1] = x[0] / (1.0 + x[0] * x[0]);
                phi[2] = u[0];
            }
            ModelKind::ScalarLinear => {
                offset[0] = 0.0;
                phi[0] = x[0];
            }
            ModelKind::GeneRegulation => {
                let dt = self.noise_scale();
                offset[0] = x[0];
                phi[0] = dt * x[0];
            }
            ModelKind::FitzHughNagumo => {
                let dt = self.noise_scale();
                let (x1, x2) = (x[0], x[1]);
                offset[0] = x1;
                offset[1] = x2;
                phi[0] = dt * x1;
                phi[1] = dt * x1 * x1 * x1;
                phi[2] = dt * x2;
                phi[q + 3] = dt;
                phi[q + 4] = dt * x1;
                phi[q + 5] = dt * x2;
            }
        }
        if self.noise_means {
            let k = self.kind.structural_names().len();
            let scale = self.noise_scale().sqrt();
            for r in 0..self.state_dim() {
                phi[r * q + k] = scale;
            }
        }
    }

    /// Output in feature form, analogous to [`Self::transition_features`].
    pub fn output_features(&self, x: &[f64], _u: &[f64], offset: &mut [f64], psi: &mut [f64]) {
        psi.fill(0.0);
        match self.kind {
            ModelKind::Benchmark => {
                offset[0] = 0.0;
                psi[3] = x[0] * x[0];
            }
            ModelKind::GeneRegulation => {
                offset[0] = 0.0;
                psi[1] = x[0];
            }
            ModelKind::FitzHughNagumo => offset[0] = x[0] + x[1],
            ModelKind::ScalarLinear => {
                offset[0] = 0.0;
                psi[1] = x[0];
            }
        }
        if self.noise_means {
            psi[self.kind.structural_names().len() + 1] = 1.0;
        }
    }

    /// Structural entries that appear in the transition map (the ones the
    /// contraction constraint acts on).
    pub fn transition_params(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Benchmark => vec![0, 1, 2],
            ModelKind::GeneRegulation => vec![0],
            ModelKind::FitzHughNagumo => vec![0, 1, 2, 3, 4, 5],
            ModelKind::ScalarLinear => vec![0],
        }
    }

    /// A parameter vector with the same noise and output entries whose
    /// transition Jacobian is `0.5 I` everywhere. Used to repair infeasible
    /// starting points of the constrained M-step.
    pub fn contractive_anchor(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        match self.kind {
            ModelKind::Benchmark => {
                out[0] = 0.5;
                out[1] = 0.0;
            }
            ModelKind::ScalarLinear => out[0] = 0.5,
            ModelKind::GeneRegulation => out[0] = -0.5 / self.noise_scale(),
            ModelKind::FitzHughNagumo => {
                let dt = self.noise_scale();
                out[0] = -0.5 / dt;
                out[1] = 0.0;
                out[2] = 0.0;
                out[4] = 0.0;
                out[5] = -0.5 / dt;
            }
        }
        out
    }

    /// One noisy transition: `f(x, u, theta) + coupling + noise`. `noise` is
    /// the already-scaled additive process-noise draw.
    pub fn step(&self, theta: &[f64], x: &[f64], u: &[f64], coupling: &[f64], noise: &[f64], t: usize, agent: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.transition_mean(theta, x, u, &mut out);
        for ((o, c), e) in out.iter_mut().zip(coupling).zip(noise) {
            *o += c + e;
        }
        check_finite(&out, t, agent)?;
        Ok(out)
    }

    /// One noisy observation `h(x, u, theta) + noise`.
    pub fn observe(&self, theta: &[f64], x: &[f64], u: &[f64], noise: &[f64], t: usize, agent: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.output_mean(theta, x, u, &mut out);
        for (o, e) in out.iter_mut().zip(noise) {
            *o += e;
        }
        check_finite(&out, t, agent)?;
        Ok(out)
    }
}

fn check_finite(v: &[f64], t: usize, agent: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { t, agent, detail: format!("non-finite value {v:?}") })
    }
}

/// Continuous-time drift families that can be discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuousDrift {
    GeneRegulation,
    FitzHughNagumo,
}

/// Forward-Euler discretization of a continuous-time drift family.
pub fn discretize_continuous(drift: ContinuousDrift, dt: f64) -> Result<ModelClass> {
    if !(dt > 0.0 && dt.is_finite()) {
        return param_err(format!("step size must be positive, got {dt}"));
    }
    let model = match drift {
        ContinuousDrift::GeneRegulation => ModelClass::gene_regulation(dt),
        ContinuousDrift::FitzHughNagumo => ModelClass::fitzhugh_nagumo(dt),
    };
    debug_assert!(model.kind.is_continuous());
    Ok(model)
}
