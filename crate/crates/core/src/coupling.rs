//! Interaction terms `g_j(x_j - x_v)` between neighbouring agents.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::topology::DirectedNetwork;

/// Built-in interaction functions. All of them vanish at zero difference and
/// act on the first state component only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum InteractionFunction {
    None,
    /// `gain / J_v * sin(d)`
    Sine { gain: f64 },
    /// `gain / J_v * sin(d)^2`
    SineSquared { gain: f64 },
    /// `gain / J_v * d`
    Linear { gain: f64 },
    /// `strength * d^alpha / (d^alpha + 1)` (no degree normalization)
    Hill { strength: f64, alpha: i32 },
}

impl InteractionFunction {
    /// The five unknown interaction structures used in the coupling sweep,
    /// in table order.
    pub fn coupling_table() -> [InteractionFunction; 5] {
        [
            InteractionFunction::Sine { gain: 10.0 },
            InteractionFunction::SineSquared { gain: 10.0 },
            InteractionFunction::Sine { gain: -1.0 },
            InteractionFunction::SineSquared { gain: -1.0 },
            InteractionFunction::Linear { gain: 1.0 },
        ]
    }

    pub fn table_entry(index: usize) -> Result<Self> {
        match Self::coupling_table().get(index) {
            Some(g) => Ok(*g),
            None => param_err(format!("coupling table has 5 entries, got index {index}")),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            InteractionFunction::None => "none".into(),
            InteractionFunction::Sine { gain } => format!("{gain}/J*sin(d)"),
            InteractionFunction::SineSquared { gain } => format!("{gain}/J*sin(d)^2"),
            InteractionFunction::Linear { gain } => format!("{gain}/J*d"),
            InteractionFunction::Hill { strength, alpha } => format!("{strength}*d^{alpha}/(d^{alpha}+1)"),
        }
    }

    /// Scalar contribution of one edge given the difference `d = x_j - x_v`
    /// and the receiving agent's degree `j_v`.
    pub fn edge_term(&self, d: f64, j_v: usize) -> f64 {
        let j = j_v.max(1) as f64;
        match *self {
            InteractionFunction::None => 0.0,
            InteractionFunction::Sine { gain } => gain / j * d.sin(),
            InteractionFunction::SineSquared { gain } => gain / j * d.sin().powi(2),
            InteractionFunction::Linear { gain } => gain / j * d,
            InteractionFunction::Hill { strength, alpha } => {
                let p = d.powi(alpha);
                strength * p / (p + 1.0)
            }
        }
    }

    /// Upper bound on `|sum_j d/dx_v g_j|` over all states, for an agent
    /// with `j_v` predecessors.
    pub fn jacobian_bound(&self, j_v: usize) -> f64 {
        match *self {
            InteractionFunction::None => 0.0,
            InteractionFunction::Sine { gain } | InteractionFunction::SineSquared { gain } | InteractionFunction::Linear { gain } => {
                gain.abs()
            }
            InteractionFunction::Hill { strength, alpha } => {
                // max of |d/dd [d^a / (d^a + 1)]| on a fine grid
                let peak = (1..4000)
                    .map(|k| {
                        let d = k as f64 * 1e-3;
                        let p = d.powi(alpha);
                        alpha as f64 * d.powi(alpha - 1) / (p + 1.0).powi(2)
                    })
                    .fold(0.0, f64::max);
                strength.abs() * peak * 1.01 * j_v as f64
            }
        }
    }
}

/// `sum_{j in P_v} g_j(x_j - x_v)`, applied to the first state component.
/// `states[u]` is agent `u`'s state vector.
pub fn coupling_term(g: &InteractionFunction, net: &DirectedNetwork, states: &[Vec<f64>], v: usize) -> Vec<f64> {
    let mut out = vec![0.0; states[v].len()];
    let preds = net.predecessors(v);
    let j_v = preds.len();
    out[0] = preds.iter().map(|&j| g.edge_term(states[j][0] - states[v][0], j_v)).sum();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identical_states_give_zero_increment() {
        let net = DirectedNetwork::complete(4).unwrap();
        let states = vec![vec![1.3]; 4];
        for g in InteractionFunction::coupling_table() {
            assert_eq!(coupling_term(&g, &net, &states, 2)[0], 0.0);
        }
        let hill = InteractionFunction::Hill { strength: 0.05, alpha: 2 };
        assert_eq!(coupling_term(&hill, &net, &states, 0)[0], 0.0);
    }

    #[test]
    fn sine_coupling_single_predecessor() {
        let net = DirectedNetwork::chain(2).unwrap();
        let states = vec![vec![FRAC_PI_2], vec![0.0]];
        let g = InteractionFunction::Sine { gain: 1.0 };
        assert_relative_eq!(coupling_term(&g, &net, &states, 1)[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sine_squared_two_predecessors() {
        let net = DirectedNetwork::from_edges(3, [(0, 2), (1, 2)], 0).unwrap();
        let states = vec![vec![FRAC_PI_2], vec![FRAC_PI_2], vec![0.0]];
        let g = InteractionFunction::table_entry(1).unwrap();
        let oracle = 10.0 / 2.0 * 1.0 + 10.0 / 2.0 * 1.0;
        assert_relative_eq!(coupling_term(&g, &net, &states, 2)[0], oracle, epsilon = 1e-12);
    }

    #[test]
    fn sine_coupling_is_antisymmetric_on_two_cycle() {
        let net = DirectedNetwork::complete(2).unwrap();
        let g = InteractionFunction::Sine { gain: 1.0 };
        for (a, b) in [(0.3, -1.2), (2.0, 5.0), (-0.1, 0.1)] {
            let states = vec![vec![a], vec![b]];
            let ga = coupling_term(&g, &net, &states, 0)[0];
            let gb = coupling_term(&g, &net, &states, 1)[0];
            assert_relative_eq!(ga, -gb, epsilon = 1e-15);
        }
    }

    #[test]
    fn sampled_jacobians_respect_bound() {
        let net = DirectedNetwork::complete(4).unwrap();
        let mut fns = InteractionFunction::coupling_table().to_vec();
        fns.push(InteractionFunction::Hill { strength: 0.05, alpha: 2 });
        for g in fns {
            let bound = g.jacobian_bound(3);
            for k in 0..200 {
                let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![((k * 7 + i * 13) % 37) as f64 * 0.17 - 3.0]).collect();
                let h = 1e-6;
                let mut plus = xs.clone();
                plus[0][0] += h;
                let mut minus = xs.clone();
                minus[0][0] -= h;
                let jac = (coupling_term(&g, &net, &plus, 0)[0] - coupling_term(&g, &net, &minus, 0)[0]) / (2.0 * h);
                assert!(jac.abs() <= bound + 1e-6, "{} jac={jac} bound={bound}", g.label());
            }
        }
    }

    #[test]
    fn table_index_out_of_range() {
        assert!(InteractionFunction::table_entry(5).is_err());
    }
}
