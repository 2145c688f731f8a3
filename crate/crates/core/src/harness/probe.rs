use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mdp::{greedy_action, value_iterate, ActionId, QTable, StateId, TabularModel, Transitions, UpperBound};

/// A greedy policy counts as optimal once its value from the start state is
/// within this much of the optimum.
pub const OPTIMALITY_TOLERANCE: f64 = 1.0;

const EVAL_TOL: f64 = 1e-8;
const EVAL_MAX_SWEEPS: usize = 200_000;

/// Value of following `policy` from `start` in `model`, evaluated over the states
/// the policy can reach.
pub fn policy_value(
    model: &TabularModel,
    policy: impl Fn(StateId) -> ActionId,
    start: StateId,
    discount: f64,
) -> Result<f64> {
    let n = model.n_states();
    let mut index = vec![usize::MAX; n];
    let mut order = Vec::new();
    let mut queue = VecDeque::from([start]);
    index[start.0] = 0;
    order.push(start);
    let mut rows: Vec<Vec<(usize, f64, f64)>> = Vec::new();
    while let Some(s) = queue.pop_front() {
        let mut row = Vec::new();
        if !model.is_terminal(s) {
            let outcomes: Vec<(StateId, f64, f64)> = match model.row(s, policy(s)) {
                Transitions::Explicit(outcomes) => outcomes.iter().map(|o| (o.next, o.prob, o.reward)).collect(),
                Transitions::Uniform { reward } => {
                    let spread = model.spread();
                    let p = 1.0 / spread.len() as f64;
                    spread.iter().map(|&next| (next, p, *reward)).collect()
                }
            };
            for (next, p, r) in outcomes {
                if index[next.0] == usize::MAX {
                    index[next.0] = order.len();
                    order.push(next);
                    queue.push_back(next);
                }
                row.push((index[next.0], p, r));
            }
        }
        rows.push(row);
    }

    let threshold = EVAL_TOL * (1.0 - discount) / discount;
    let mut v = vec![0.0; order.len()];
    for _ in 0..EVAL_MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        let next_v: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().map(|&(j, p, r)| p * (r + discount * v[j])).sum())
            .collect();
        for (old, new) in v.iter().zip(&next_v) {
            delta = delta.max((old - new).abs());
        }
        v = next_v;
        if delta <= threshold {
            return Ok(v[0]);
        }
    }
    Err(Error::Convergence {
        sweeps: EVAL_MAX_SWEEPS,
        residual: f64::NAN,
    })
}

/// Tracks when the greedy policy of a learner's top-level Q first becomes
/// optimal in the true high-fidelity model.
pub struct OptimalityProbe {
    model: TabularModel,
    start: StateId,
    discount: f64,
    optimum: f64,
    last_version: Option<u64>,
    first_optimal: Option<usize>,
}

impl OptimalityProbe {
    pub fn new(model: TabularModel, start: StateId, discount: f64) -> Result<Self> {
        let warm = QTable::zeros(model.n_states(), model.n_actions(), discount);
        let q_star = value_iterate(&model, discount, &warm, &UpperBound::Unbounded, 1e-9, 100_000)?;
        let optimum = q_star.state_value(start);
        Ok(Self {
            model,
            start,
            discount,
            optimum,
            last_version: None,
            first_optimal: None,
        })
    }

    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    pub fn first_optimal(&self) -> Option<usize> {
        self.first_optimal
    }

    /// Checks `q` after `iteration`; only re-evaluates when `version` changed.
    pub fn observe(&mut self, iteration: usize, q: &QTable, version: u64) -> Result<()> {
        if self.first_optimal.is_some() || self.last_version == Some(version) {
            return Ok(());
        }
        self.last_version = Some(version);
        let value = policy_value(&self.model, |s| greedy_action(q, s), self.start, self.discount)?;
        if value >= self.optimum - OPTIMALITY_TOLERANCE {
            self.first_optimal = Some(iteration);
        }
        Ok(())
    }
}
