//! Network trajectory simulation and its CSV/JSON persistence.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coupling::{coupling_term, InteractionFunction};
use crate::error::{param_err, Error, Result};
use crate::model::ModelClass;
use crate::parallel;
use crate::rng::{stream, Domain};
use crate::topology::DirectedNetwork;

/// Per-agent input/output records, optionally with the true states.
///
/// Sequences are stored flat: agent `v`'s output at sample `t` (0-based) is
/// `outputs[v][t * p .. (t + 1) * p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryData {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub states: Option<Vec<Vec<f64>>>,
    pub meta: TrajectoryMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub theta_true: Vec<f64>,
    pub seed: u64,
    pub dt: Option<f64>,
    pub coupling: String,
}

impl TrajectoryData {
    pub fn num_agents(&self) -> usize {
        self.outputs.len()
    }

    pub fn output(&self, v: usize, t: usize) -> &[f64] {
        &self.outputs[v][t * self.output_dim..(t + 1) * self.output_dim]
    }

    pub fn input(&self, v: usize, t: usize) -> &[f64] {
        &self.inputs[v][t * self.input_dim..(t + 1) * self.input_dim]
    }

    pub fn state(&self, v: usize, t: usize) -> Option<&[f64]> {
        self.states.as_ref().map(|s| &s[v][t * self.state_dim..(t + 1) * self.state_dim])
    }

    /// Writes `t, agent, y_1..y_p, u_1..u_m[, x_1..x_n]` rows (1-based `t` and agent).
    pub fn to_csv(&self, include_states: bool) -> String {
        let with_x = include_states && self.states.is_some();
        let mut header = vec!["t".to_string(), "agent".to_string()];
        header.extend((1..=self.output_dim).map(|i| format!("y_{i}")));
        header.extend((1..=self.input_dim).map(|i| format!("u_{i}")));
        if with_x {
            header.extend((1..=self.state_dim).map(|i| format!("x_{i}")));
        }
        let mut out = header.join(",");
        out.push('\n');
        for t in 0..self.horizon {
            for v in 0..self.num_agents() {
                let _ = write!(out, "{},{}", t + 1, v + 1);
                for val in self.output(v, t).iter().chain(self.input(v, t)) {
                    let _ = write!(out, ",{val:e}");
                }
                if with_x {
                    for val in self.state(v, t).unwrap_or(&[]) {
                        let _ = write!(out, ",{val:e}");
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses CSV written by [`Self::to_csv`]; dimensions come from the header.
    pub fn from_csv(text: &str, meta: TrajectoryMeta, state_dim: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Io("empty trajectory CSV".into()))?.split(',').map(str::trim).collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (p, m, n_cols) = (count("y_"), count("u_"), count("x_"));
        if n_cols != 0 && n_cols != state_dim {
            return param_err(format!("CSV has {n_cols} state columns, model has {state_dim}"));
        }
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for line in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != header.len() {
                return param_err(format!("row has {} cells, header has {}", cells.len(), header.len()));
            }
            let t: usize = cells[0].parse().map_err(|e| Error::Io(format!("bad t `{}`: {e}", cells[0])))?;
            let v: usize = cells[1].parse().map_err(|e| Error::Io(format!("bad agent `{}`: {e}", cells[1])))?;
            let vals = cells[2..].iter().map(|c| c.parse::<f64>().map_err(|e| Error::Io(format!("bad value `{c}`: {e}")))).collect::<Result<Vec<_>>>()?;
            if t == 0 || v == 0 {
                return param_err("CSV ids are 1-based");
            }
            rows.push((t - 1, v - 1, vals));
        }
        let horizon = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let agents = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != horizon * agents {
            return param_err(format!("expected {} rows for T={horizon}, V={agents}; got {}", horizon * agents, rows.len()));
        }
        let mut outputs = vec![vec![0.0; horizon * p]; agents];
        let mut inputs = vec![vec![0.0; horizon * m]; agents];
        let mut states = (n_cols > 0).then(|| vec![vec![0.0; horizon * state_dim]; agents]);
        for (t, v, vals) in rows {
            outputs[v][t * p..(t + 1) * p].copy_from_slice(&vals[..p]);
            inputs[v][t * m..(t + 1) * m].copy_from_slice(&vals[p..p + m]);
            if let Some(s) = states.as_mut() {
                s[v][t * state_dim..(t + 1) * state_dim].copy_from_slice(&vals[p + m..]);
            }
        }
        Ok(Self { horizon, state_dim, input_dim: m, output_dim: p, inputs, outputs, states, meta })
    }

    /// Writes `<stem>.csv` and `<stem>.json` (metadata sidecar).
    pub fn save(&self, dir: &Path, stem: &str, include_states: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv(include_states))?;
        let sidecar = serde_json::json!({
            "meta": self.meta,
            "state_dim": self.state_dim,
            "horizon": self.horizon,
            "num_agents": self.num_agents(),
        });
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let meta: TrajectoryMeta = serde_json::from_value(sidecar["meta"].clone())?;
        let n = sidecar["state_dim"].as_u64().ok_or_else(|| Error::Io("sidecar lacks state_dim".into()))? as usize;
        Self::from_csv(&std::fs::read_to_string(dir.join(format!("{stem}.csv")))?, meta, n)
    }
}

/// Options for [`simulate_network`].
#[derive(Debug, Clone)]
pub struct SimulationSpec<'a> {
    pub model: &'a ModelClass,
    pub theta: &'a [f64],
    pub coupling: InteractionFunction,
    pub net: &'a DirectedNetwork,
    pub horizon: usize,
    /// One initial state per agent; `None` uses the model's initial state.
    pub initial: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    /// Keep true states in the output.
    pub keep_states: bool,
}

/// Draws the additive process noise for agent `v` at sample `t`.
fn process_noise(model: &ModelClass, theta: &[f64], seed: u64, v: usize, t: usize) -> Vec<f64> {
    let mut rng = stream(seed, Domain::ProcessNoise, v as u64, t as u64);
    let sd = model.process_variance(theta).sqrt();
    (0..model.state_dim()).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); sd * z }).collect()
}

fn measurement_noise(model: &ModelClass, theta: &[f64], seed: u64, v: usize, t: usize) -> Vec<f64> {
    let mut rng = stream(seed, Domain::MeasurementNoise, v as u64, t as u64);
    let sd = model.measurement_variance(theta).sqrt();
    (0..model.output_dim()).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); sd * z }).collect()
}

/// Synchronous simulation of all agents over `horizon` samples.
///
/// `x(1)` is the initial state; `y(t) = h(x(t)) + noise` and
/// `x(t+1) = f(x(t), u(t)) + coupling + noise`. Continuous-time models
/// scale the coupling by `dt`, since it is part of their drift. Noise
/// draws are keyed by `(seed, agent, t)`.
pub fn simulate_network(spec: &SimulationSpec<'_>) -> Result<TrajectoryData> {
    let SimulationSpec { model, theta, coupling, net, horizon, seed, .. } = *spec;
    model.validate_theta(theta)?;
    if horizon == 0 {
        return param_err("horizon must be at least 1");
    }
    let num_agents = net.num_agents();
    let initial = match &spec.initial {
        Some(x0) if x0.len() != num_agents => return param_err(format!("need {num_agents} initial states, got {}", x0.len())),
        Some(x0) => x0.clone(),
        None => vec![model.initial_state.clone(); num_agents],
    };
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    if let Some(bad) = initial.iter().find(|x| x.len() != n) {
        return param_err(format!("initial state has dimension {}, model needs {n}", bad.len()));
    }
    let coupling_scale = model.dt().unwrap_or(1.0);

    let mut inputs = vec![vec![0.0; horizon * m]; num_agents];
    let mut outputs = vec![vec![0.0; horizon * p]; num_agents];
    let mut states_out = vec![vec![0.0; horizon * n]; num_agents];
    let mut current = initial;
    for t in 0..horizon {
        let sample = t + 1;
        let mut u = vec![0.0; m];
        model.input(sample, &mut u);
        let step: Vec<Result<(Vec<f64>, Vec<f64>)>> = parallel::map_indices(num_agents, |v| {
            let y = model.observe(theta, &current[v], &u, &measurement_noise(model, theta, seed, v, sample), sample, v)?;
            let mut c = coupling_term(&coupling, net, &current, v);
            c.iter_mut().for_each(|ci| *ci *= coupling_scale);
            let next = model.step(theta, &current[v], &u, &c, &process_noise(model, theta, seed, v, sample), sample, v)?;
            Ok((y, next))
        });
        let mut next_states = Vec::with_capacity(num_agents);
        for (v, r) in step.into_iter().enumerate() {
            let (y, next) = r?;
            outputs[v][t * p..(t + 1) * p].copy_from_slice(&y);
            inputs[v][t * m..(t + 1) * m].copy_from_slice(&u);
            states_out[v][t * n..(t + 1) * n].copy_from_slice(&current[v]);
            next_states.push(next);
        }
        current = next_states;
    }
    Ok(TrajectoryData {
        horizon,
        state_dim: n,
        input_dim: m,
        output_dim: p,
        inputs,
        outputs,
        states: spec.keep_states.then_some(states_out),
        meta: TrajectoryMeta {
            model: model.name().to_string(),
            theta_true: theta.to_vec(),
            seed,
            dt: model.dt(),
            coupling: coupling.label(),
        },
    })
}
