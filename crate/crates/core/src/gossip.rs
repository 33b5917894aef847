//! Push-sum gossip over flattened particle vectors.
//!
//! Every agent owns a transmission vector holding one block per agent; only
//! its own block is nonzero initially. Alongside the scaled particles the
//! vector carries the matching smoothed weights, so that consensus block
//! sums can be renormalized afterwards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::parallel;
use crate::rng::{stream, Domain};
use crate::topology::DirectedNetwork;

/// One agent's contribution at a single time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionBlock {
    /// `K * n` scaled particle values, particle-major.
    pub values: Vec<f64>,
    /// `K` smoothed weights of the selected particles.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    /// `n * K * V` values; agent `u`'s block starts at `u * K * n`.
    pub xc: Vec<f64>,
    /// `K * V` companion weights.
    pub wc: Vec<f64>,
    pub n_count: f64,
    /// `K * V` provenance tracker.
    pub c_track: Vec<f64>,
}

impl ConsensusState {
    fn scale(&mut self, factor: f64) {
        self.xc.iter_mut().for_each(|x| *x *= factor);
        self.wc.iter_mut().for_each(|x| *x *= factor);
        self.c_track.iter_mut().for_each(|x| *x *= factor);
        self.n_count *= factor;
    }

    fn add(&mut self, other: &ConsensusState) {
        for (a, b) in self.xc.iter_mut().zip(&other.xc) {
            *a += b;
        }
        for (a, b) in self.wc.iter_mut().zip(&other.wc) {
            *a += b;
        }
        for (a, b) in self.c_track.iter_mut().zip(&other.c_track) {
            *a += b;
        }
        self.n_count += other.n_count;
    }
}

/// Agent `v`'s initial state: own block filled, the rest zero, counter 1.
pub fn init_consensus(block: &ContributionBlock, v: usize, num_agents: usize, per_agent: usize, state_dim: usize) -> Result<ConsensusState> {
    if block.values.len() != per_agent * state_dim || block.weights.len() != per_agent {
        return param_err(format!(
            "contribution has {} values and {} weights, expected {} and {per_agent}",
            block.values.len(),
            block.weights.len(),
            per_agent * state_dim
        ));
    }
    if v >= num_agents {
        return param_err(format!("agent {v} out of range for {num_agents} agents"));
    }
    let stride = per_agent * state_dim;
    let mut xc = vec![0.0; stride * num_agents];
    xc[v * stride..(v + 1) * stride].copy_from_slice(&block.values);
    let mut wc = vec![0.0; per_agent * num_agents];
    wc[v * per_agent..(v + 1) * per_agent].copy_from_slice(&block.weights);
    let mut c_track = vec![0.0; per_agent * num_agents];
    c_track[v * per_agent..(v + 1) * per_agent].fill(1.0);
    Ok(ConsensusState { xc, wc, n_count: 1.0, c_track })
}

/// The out-neighbour agent `v` pushes to in `round`.
pub fn gossip_target(net: &DirectedNetwork, seed: u64, v: usize, round: usize) -> Result<usize> {
    let succ = net.successors(v);
    if succ.is_empty() {
        return Err(Error::Protocol(format!("agent {} has no out-neighbour", v + 1)));
    }
    let mut rng = stream(seed, Domain::Gossip, v as u64, round as u64);
    Ok(succ[rng.gen_range(0..succ.len())])
}

/// One synchronous round: every agent keeps half of its state and pushes
/// the other half to a random out-neighbour. Returns the chosen targets.
pub fn gossip_round(states: &mut [ConsensusState], net: &DirectedNetwork, seed: u64, round: usize) -> Result<Vec<usize>> {
    if states.len() != net.num_agents() {
        return param_err(format!("{} states for {} agents", states.len(), net.num_agents()));
    }
    let targets = parallel::map_indices(states.len(), |v| gossip_target(net, seed, v, round)).into_iter().collect::<Result<Vec<_>>>()?;
    parallel::for_each_mut(states, |_, s| s.scale(0.5));
    let sent: Vec<ConsensusState> = states.to_vec();
    for (v, &j) in targets.iter().enumerate() {
        states[j].add(&sent[v]);
    }
    Ok(targets)
}

/// `e_v = |V Xc_v / n_v - total|_inf / |total|_inf` with `total` the sum of
/// all initial transmission vectors.
pub fn consensus_error(states: &[ConsensusState], total: &[f64]) -> Vec<f64> {
    let v_count = states.len() as f64;
    let norm = total.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    states
        .iter()
        .map(|s| {
            let scale = v_count / s.n_count;
            let dev = s.xc.iter().zip(total).fold(0.0f64, |m, (x, t)| m.max((scale * x - t).abs()));
            if norm > 0.0 {
                dev / norm
            } else {
                dev
            }
        })
        .collect()
}

/// `|c / |c|_1 - 1/L|_inf` for a tracker of length `L`.
pub fn relative_error_sigma(state: &ConsensusState) -> Result<f64> {
    let mass: f64 = state.c_track.iter().map(|c| c.abs()).sum();
    if mass <= 0.0 {
        return Err(Error::Protocol("provenance tracker has no mass".into()));
    }
    let uniform = 1.0 / state.c_track.len() as f64;
    Ok(state.c_track.iter().fold(0.0f64, |m, c| m.max((c / mass - uniform).abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Stop once the oracle error is at most `1.5 * delta`.
    Oracle,
    /// Run exactly the probabilistic round budget.
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub delta: f64,
    pub max_rounds: usize,
    pub termination: Termination,
    /// Overrides the default `delta_bar` of the round budget.
    pub delta_bar: Option<f64>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { delta: 1e-3, max_rounds: 1000, termination: Termination::Oracle, delta_bar: None }
    }
}

/// `delta^2 / (2V) * 2^(-2 tau)` with `tau = (2 + 3 ln 2) log2(2V)`.
pub fn default_delta_bar(num_agents: usize, delta: f64) -> f64 {
    let v = num_agents as f64;
    let tau = (2.0 + 3.0 * std::f64::consts::LN_2) * (2.0 * v).log2();
    delta * delta / (2.0 * v) * (-2.0 * tau).exp2()
}

/// `ceil(log2 V + log2(1 / delta_bar))`; zero for a single agent.
pub fn round_budget(num_agents: usize, delta_bar: f64) -> usize {
    if num_agents <= 1 {
        return 0;
    }
    ((num_agents as f64).log2() + (1.0 / delta_bar).log2()).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub rounds_run: usize,
    pub sigma: Vec<f64>,
    pub final_error: f64,
    pub messages_sent: usize,
    pub converged: bool,
    /// Largest relative drift of the summed transmission vectors over all rounds.
    pub max_mass_drift: f64,
    /// Largest drift of the summed counters over all rounds, divided by `V`.
    pub max_count_drift: f64,
}

impl ConsensusReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Consensus estimate `V Xc / n` read from one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutput {
    /// `n * K * V` scaled particle values.
    pub values: Vec<f64>,
    /// `K * V` weights.
    pub weights: Vec<f64>,
}

fn drift(states: &[ConsensusState], total: &[f64], total_norm: f64) -> (f64, f64) {
    let mut sum = vec![0.0; total.len()];
    let mut count = 0.0;
    for s in states {
        for (a, b) in sum.iter_mut().zip(&s.xc) {
            *a += b;
        }
        count += s.n_count;
    }
    let dev = sum.iter().zip(total).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let v = states.len() as f64;
    (if total_norm > 0.0 { dev / total_norm } else { dev }, (count - v).abs() / v)
}

/// Runs gossip rounds until termination and reads the consensus estimate
/// from agent `reader`.
pub fn run_consensus(blocks: &[ContributionBlock], net: &DirectedNetwork, cfg: &ConsensusConfig, seed: u64, reader: usize) -> Result<(ConsensusOutput, ConsensusReport)> {
    let num_agents = net.num_agents();
    if blocks.len() != num_agents {
        return param_err(format!("{} contributions for {num_agents} agents", blocks.len()));
    }
    if !(cfg.delta > 0.0) || cfg.max_rounds == 0 {
        return param_err("consensus needs delta > 0 and at least one round");
    }
    let per_agent = blocks[0].weights.len();
    if per_agent == 0 {
        return param_err("empty contribution");
    }
    let state_dim = blocks[0].values.len() / per_agent;
    let mut states = blocks.iter().enumerate().map(|(v, b)| init_consensus(b, v, num_agents, per_agent, state_dim)).collect::<Result<Vec<_>>>()?;
    let total: Vec<f64> = blocks.iter().flat_map(|b| b.values.iter().copied()).collect();
    let total_norm = total.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let budget = match cfg.termination {
        Termination::Budget => Some(round_budget(num_agents, cfg.delta_bar.unwrap_or_else(|| default_delta_bar(num_agents, cfg.delta))).min(cfg.max_rounds)),
        Termination::Oracle => None,
    };
    let target = 1.5 * cfg.delta;
    let (mut max_mass, mut max_count) = (0.0f64, 0.0f64);
    let mut rounds = 0;
    let mut error = consensus_error(&states, &total).into_iter().fold(0.0, f64::max);
    loop {
        let done = match budget {
            Some(b) => rounds >= b,
            None => error <= target || rounds >= cfg.max_rounds,
        };
        if done {
            break;
        }
        gossip_round(&mut states, net, seed, rounds)?;
        rounds += 1;
        let (m, c) = drift(&states, &total, total_norm);
        max_mass = max_mass.max(m);
        max_count = max_count.max(c);
        error = consensus_error(&states, &total).into_iter().fold(0.0, f64::max);
    }
    let sigma = states.iter().map(relative_error_sigma).collect::<Result<Vec<_>>>()?;
    let s = &states[reader.min(num_agents - 1)];
    let scale = num_agents as f64 / s.n_count;
    let output = ConsensusOutput { values: s.xc.iter().map(|x| scale * x).collect(), weights: s.wc.iter().map(|x| scale * x).collect() };
    let report = ConsensusReport {
        rounds_run: rounds,
        sigma,
        final_error: error,
        messages_sent: rounds * num_agents,
        converged: error <= target,
        max_mass_drift: max_mass,
        max_count_drift: max_count,
    };
    Ok((output, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_blocks(vals: &[f64]) -> Vec<ContributionBlock> {
        vals.iter().map(|&x| ContributionBlock { values: vec![x], weights: vec![1.0] }).collect()
    }

    #[test]
    fn init_layout() {
        let b = ContributionBlock { values: vec![3.0], weights: vec![1.0] };
        assert_eq!(init_consensus(&b, 0, 2, 1, 1).unwrap().xc, vec![3.0, 0.0]);
        assert_eq!(init_consensus(&b, 1, 2, 1, 1).unwrap().xc, vec![0.0, 3.0]);
        let wide = ContributionBlock { values: (0..6).map(f64::from).collect(), weights: vec![0.5; 3] };
        let s = init_consensus(&wide, 2, 4, 3, 2).unwrap();
        assert_eq!(s.c_track.iter().filter(|&&c| c == 1.0).count(), 3);
        // unflatten oracle: agent u, particle k, component d at (u * K + k) * n + d
        for k in 0..3 {
            for d in 0..2 {
                assert_eq!(s.xc[(2 * 3 + k) * 2 + d], wide.values[k * 2 + d]);
            }
        }
        assert!(init_consensus(&wide, 0, 4, 2, 2).is_err());
    }

    #[test]
    fn identical_ratios_are_preserved() {
        let net = DirectedNetwork::ring_with_chords(6).unwrap();
        let mut states: Vec<ConsensusState> = (0..6).map(|_| ConsensusState { xc: vec![2.0, -1.0], wc: vec![1.0, 1.0], n_count: 1.0, c_track: vec![1.0, 1.0] }).collect();
        for r in 0..20 {
            gossip_round(&mut states, &net, 3, r).unwrap();
            for s in &states {
                assert_eq!(s.xc[0] / s.n_count, 2.0);
                assert_eq!(s.xc[1] / s.n_count, -1.0);
            }
        }
    }

    #[test]
    fn two_agent_conservation() {
        let net = DirectedNetwork::complete(2).unwrap();
        let blocks = scalar_blocks(&[1.7, -0.4]);
        let mut states: Vec<_> = blocks.iter().enumerate().map(|(v, b)| init_consensus(b, v, 2, 1, 1).unwrap()).collect();
        for r in 0..30 {
            gossip_round(&mut states, &net, 8, r).unwrap();
            let sum: f64 = states.iter().map(|s| s.xc.iter().sum::<f64>()).sum();
            assert_relative_eq!(sum, 1.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn ring_replay_oracle() {
        let net = DirectedNetwork::ring(3).unwrap();
        let vals = [1.0, 4.0, -2.0];
        let seed = 21;
        let mut states: Vec<_> = scalar_blocks(&vals).iter().enumerate().map(|(v, b)| init_consensus(b, v, 3, 1, 1).unwrap()).collect();
        for r in 0..5 {
            gossip_round(&mut states, &net, seed, r).unwrap();
        }
        // event-by-event replay: agent v's (x vector, n) as plain arrays
        let mut xs = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, -2.0]];
        let mut ns = [1.0; 3];
        for r in 0..5 {
            let mut next_x = [[0.0; 3]; 3];
            let mut next_n = [0.0; 3];
            for v in 0..3 {
                let succ = net.successors(v);
                let mut rng = stream(seed, Domain::Gossip, v as u64, r as u64);
                let j = succ[rng.gen_range(0..succ.len())];
                for k in 0..3 {
                    next_x[v][k] += xs[v][k] / 2.0;
                    next_x[j][k] += xs[v][k] / 2.0;
                }
                next_n[v] += ns[v] / 2.0;
                next_n[j] += ns[v] / 2.0;
            }
            xs = next_x;
            ns = next_n;
        }
        for v in 0..3 {
            assert_relative_eq!(states[v].n_count, ns[v], epsilon = 1e-15);
            for k in 0..3 {
                assert_relative_eq!(states[v].xc[k], xs[v][k], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn error_definition_cases() {
        let blocks = scalar_blocks(&[1.0, 3.0]);
        let states: Vec<_> = blocks.iter().enumerate().map(|(v, b)| init_consensus(b, v, 2, 1, 1).unwrap()).collect();
        let total = vec![1.0, 3.0];
        // agent 0 at round 0: V * Xc = [2, 0] against [1, 3]
        let e = consensus_error(&states, &total);
        assert_relative_eq!(e[0], 3.0 / 3.0);
        assert_relative_eq!(e[1], 3.0 / 3.0);
        let exact: Vec<ConsensusState> = (0..2).map(|_| ConsensusState { xc: vec![0.5, 1.5], wc: vec![0.5, 0.5], n_count: 1.0, c_track: vec![0.5, 0.5] }).collect();
        assert_eq!(consensus_error(&exact, &total), vec![0.0, 0.0]);
        assert_eq!(relative_error_sigma(&states[0]).unwrap(), 0.5);
        assert_eq!(relative_error_sigma(&exact[0]).unwrap(), 0.0);
        let empty = ConsensusState { xc: vec![0.0], wc: vec![0.0], n_count: 1.0, c_track: vec![0.0] };
        assert!(relative_error_sigma(&empty).is_err());
    }

    #[test]
    fn single_agent_needs_no_rounds() {
        let one = DirectedNetwork::from_edges(1, [], 0).unwrap();
        let (out, rep) = run_consensus(&scalar_blocks(&[2.5]), &one, &ConsensusConfig::default(), 1, 0).unwrap();
        assert_eq!(rep.rounds_run, 0);
        assert_eq!(out.values, vec![2.5]);

    }

    #[test]
    fn consensus_matches_centralized_mean() {
        let net = DirectedNetwork::ring_with_chords(8).unwrap();
        let vals: Vec<f64> = (0..8).map(|v| (v as f64 * 0.7).sin()).collect();
        let cfg = ConsensusConfig { delta: 1e-6, ..Default::default() };
        let (out, rep) = run_consensus(&scalar_blocks(&vals), &net, &cfg, 4, 3).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.messages_sent, rep.rounds_run * 8);
        for (o, v) in out.values.iter().zip(&vals) {
            assert!((o - v).abs() <= 1.5e-6 * 0.99f64.max(vals.iter().fold(0.0, |m: f64, x| m.max(x.abs()))) + 1e-15);
        }
        assert!(rep.max_mass_drift <= 1e-12 && rep.max_count_drift <= 1e-12);
    }

    #[test]
    fn round_budget_statistics() {
        let v = 20;
        let net = DirectedNetwork::ring_with_chords(v).unwrap();
        let delta = 1e-3;
        let cfg = ConsensusConfig { delta, termination: Termination::Budget, ..Default::default() };
        let mut ok = 0;
        for seed in 0..200 {
            let vals: Vec<f64> = (0..v).map(|u| ((u * 31 + seed as usize * 7) % 17) as f64 + 1.0).collect();
            let (_, rep) = run_consensus(&scalar_blocks(&vals), &net, &cfg, seed, 0).unwrap();
            assert_eq!(rep.rounds_run, round_budget(v, default_delta_bar(v, delta)));
            if rep.sigma.iter().all(|&s| s <= delta) {
                ok += 1;
            }
        }
        assert!(ok as f64 / 200.0 >= 1.0 - 1.0 / v as f64, "{ok} of 200");
    }

    #[test]
    fn no_out_neighbour_is_a_protocol_error() {
        let net = DirectedNetwork::from_edges(2, [(0, 1)], 0).unwrap();
        assert!(matches!(gossip_target(&net, 0, 1, 0), Err(Error::Protocol(_))));
    }

    #[test]
    fn report_json_fields() {
        let net = DirectedNetwork::complete(3).unwrap();
        let (_, rep) = run_consensus(&scalar_blocks(&[1.0, 2.0, 3.0]), &net, &ConsensusConfig::default(), 2, 0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        for key in ["rounds_run", "messages_sent", "sigma", "converged"] {
            assert!(v.get(key).is_some());
        }
    }

    proptest! {
        #[test]
        fn conservation_and_sigma_formulas(seed in 0u64..1000, rounds in 1usize..25, v in 2usize..9) {
            let net = DirectedNetwork::ring_with_chords(v).unwrap();
            let vals: Vec<f64> = (0..v).map(|u| (u as f64 + seed as f64).cos()).collect();
            let mut states: Vec<_> = scalar_blocks(&vals).iter().enumerate().map(|(u, b)| init_consensus(b, u, v, 1, 1).unwrap()).collect();
            let total: f64 = vals.iter().sum();
            for r in 0..rounds {
                gossip_round(&mut states, &net, seed, r).unwrap();
                let sum: f64 = states.iter().map(|s| s.xc.iter().sum::<f64>()).sum();
                let count: f64 = states.iter().map(|s| s.n_count).sum();
                prop_assert!((sum - total).abs() <= 1e-12 * total.abs().max(1.0));
                prop_assert!((count - v as f64).abs() <= 1e-12 * v as f64);
                prop_assert!(states.iter().all(|s| s.n_count > 0.0));
            }
            for s in &states {
                let mass: f64 = s.c_track.iter().sum();
                let l = s.c_track.len() as f64;
                let hi = s.c_track.iter().fold(f64::MIN, |m, c| m.max(*c)) / mass - 1.0 / l;
                let lo = 1.0 / l - s.c_track.iter().fold(f64::MAX, |m, c| m.min(*c)) / mass;
                let dual = hi.max(lo);
                prop_assert!((relative_error_sigma(s).unwrap() - dual).abs() < 1e-15);
            }
        }
    }
}
