//! Tabular MDPs and the optimistic value-iteration planner.
//!
//! Models are stored row-per-(state, action). A row is either an explicit list of
//! outcomes or a uniform distribution over the model's spread set with a constant
//! reward; the latter is how unvisited pairs are represented so a sweep does not
//! pay `|S|` work for every optimistic entry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

/// Dense index of an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub next: StateId,
    pub prob: f64,
    pub reward: f64,
}

/// Successor distribution of one (state, action) pair.
#[derive(Clone, Debug, PartialEq)]
pub enum Transitions {
    Explicit(Vec<Outcome>),
    /// Uniform over the owning model's spread set, every outcome paying `reward`.
    Uniform { reward: f64 },
}

#[derive(Clone, Debug)]
pub struct TabularModel {
    n_states: usize,
    n_actions: usize,
    rows: Vec<Transitions>,
    terminal: Vec<bool>,
    spread: Vec<StateId>,
}

impl TabularModel {
    /// A model whose rows are all uniform over every state with zero reward.
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            rows: vec![Transitions::Uniform { reward: 0.0 }; n_states * n_actions],
            terminal: vec![false; n_states],
            spread: (0..n_states).map(StateId).collect(),
        }
    }

    /// Builds a model from dense `[s][a][s']` transition and reward arrays.
    pub fn from_dense(
        n_states: usize,
        n_actions: usize,
        transition: &[f64],
        reward: &[f64],
        terminal: &[bool],
    ) -> Result<Self> {
        let len = n_states * n_actions * n_states;
        if transition.len() != len || reward.len() != len || terminal.len() != n_states {
            return Err(Error::Dimension(format!(
                "dense model for {n_states} states x {n_actions} actions needs {len} entries"
            )));
        }
        let mut model = Self::new(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                let outcomes = (0..n_states)
                    .filter(|&n| transition[base + n] != 0.0)
                    .map(|n| Outcome {
                        next: StateId(n),
                        prob: transition[base + n],
                        reward: reward[base + n],
                    })
                    .collect();
                model.set_row(StateId(s), ActionId(a), Transitions::Explicit(outcomes));
            }
        }
        model.terminal.copy_from_slice(terminal);
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: StateId, a: ActionId) -> &Transitions {
        &self.rows[s.0 * self.n_actions + a.0]
    }

    pub fn set_row(&mut self, s: StateId, a: ActionId, row: Transitions) {
        self.rows[s.0 * self.n_actions + a.0] = row;
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s.0]
    }

    pub fn set_terminal(&mut self, s: StateId, terminal: bool) {
        self.terminal[s.0] = terminal;
    }

    pub fn spread(&self) -> &[StateId] {
        &self.spread
    }

    /// Replaces the support used by uniform rows.
    pub fn set_spread(&mut self, spread: Vec<StateId>) {
        self.spread = spread;
    }

    /// `T(s' | s, a)`.
    pub fn transition(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        match self.row(s, a) {
            Transitions::Explicit(outcomes) => outcomes
                .iter()
                .filter(|o| o.next == next)
                .map(|o| o.prob)
                .sum(),
            Transitions::Uniform { .. } => {
                if self.spread.contains(&next) {
                    1.0 / self.spread.len() as f64
                } else {
                    0.0
                }
            }
        }
    }

    /// `R(s, a, s')`; zero for outcomes outside the row's support.
    pub fn reward(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        match self.row(s, a) {
            Transitions::Explicit(outcomes) => outcomes
                .iter()
                .find(|o| o.next == next)
                .map_or(0.0, |o| o.reward),
            Transitions::Uniform { reward } => {
                if self.spread.contains(&next) {
                    *reward
                } else {
                    0.0
                }
            }
        }
    }

    /// Checks the row-stochastic invariants on every non-terminal state.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::ModelInvariant("empty state or action space".into()));
        }
        if self.rows.len() != self.n_states * self.n_actions || self.terminal.len() != self.n_states {
            return Err(Error::ModelInvariant("row table has the wrong shape".into()));
        }
        let mut needs_spread = false;
        for s in 0..self.n_states {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                match self.row(StateId(s), ActionId(a)) {
                    Transitions::Explicit(outcomes) => {
                        let mut sum = 0.0;
                        for o in outcomes {
                            if o.next.0 >= self.n_states {
                                return Err(Error::ModelInvariant(format!(
                                    "({s}, {a}) leads to unknown state {}",
                                    o.next.0
                                )));
                            }
                            if !(o.prob >= 0.0 && o.prob <= 1.0 + ROW_SUM_TOL) {
                                return Err(Error::ModelInvariant(format!(
                                    "({s}, {a}) has probability {} outside [0, 1]",
                                    o.prob
                                )));
                            }
                            if !o.reward.is_finite() {
                                return Err(Error::ModelInvariant(format!(
                                    "({s}, {a}) has a non-finite reward"
                                )));
                            }
                            sum += o.prob;
                        }
                        if (sum - 1.0).abs() > ROW_SUM_TOL {
                            return Err(Error::ModelInvariant(format!(
                                "transition row ({s}, {a}) sums to {sum}"
                            )));
                        }
                    }
                    Transitions::Uniform { reward } => {
                        if !reward.is_finite() {
                            return Err(Error::ModelInvariant(format!(
                                "({s}, {a}) has a non-finite reward"
                            )));
                        }
                        needs_spread = true;
                    }
                }
            }
        }
        if needs_spread {
            if self.spread.is_empty() {
                return Err(Error::ModelInvariant("uniform rows with an empty spread set".into()));
            }
            if let Some(bad) = self.spread.iter().find(|s| s.0 >= self.n_states) {
                return Err(Error::ModelInvariant(format!("spread state {} out of range", bad.0)));
            }
        }
        Ok(())
    }
}

/// State-action values together with the discount they were computed under.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize, discount: f64) -> Self {
        Self::filled(n_states, n_actions, discount, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, discount: f64, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            discount,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_values(
        n_states: usize,
        n_actions: usize,
        discount: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "{} values for a {n_states} x {n_actions} table",
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            discount,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values[s.0 * self.n_actions + a.0]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, value: f64) {
        self.values[s.0 * self.n_actions + a.0] = value;
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s.0 * self.n_actions..(s.0 + 1) * self.n_actions]
    }

    /// `max_a Q(s, a)`.
    pub fn state_value(&self, s: StateId) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute entry-wise difference.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pair ceiling applied inside every backup.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum UpperBound {
    #[default]
    Unbounded,
    PerPair(Vec<f64>),
}

impl UpperBound {
    /// A single ceiling applied to every pair.
    pub fn constant(n_states: usize, n_actions: usize, bound: f64) -> Self {
        UpperBound::PerPair(vec![bound; n_states * n_actions])
    }

    #[inline]
    fn clip(&self, index: usize, value: f64) -> f64 {
        match self {
            UpperBound::Unbounded => value,
            UpperBound::PerPair(bound) => value.min(bound[index]),
        }
    }

    /// Ceiling of one pair, `+inf` when unbounded.
    pub fn get(&self, s: StateId, a: ActionId, n_actions: usize) -> f64 {
        match self {
            UpperBound::Unbounded => f64::INFINITY,
            UpperBound::PerPair(bound) => bound[s.0 * n_actions + a.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub discount: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            discount: 0.95,
            tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

fn state_values(model: &TabularModel, q: &[f64], out: &mut [f64]) {
    let n_actions = model.n_actions;
    for (s, v) in out.iter_mut().enumerate() {
        *v = if model.terminal[s] {
            0.0
        } else {
            q[s * n_actions..(s + 1) * n_actions]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
    }
}

fn spread_mean(model: &TabularModel, v: &[f64]) -> f64 {
    if model.spread.is_empty() {
        return 0.0;
    }
    model.spread.iter().map(|s| v[s.0]).sum::<f64>() / model.spread.len() as f64
}

#[inline]
fn backup(row: &Transitions, v: &[f64], spread_mean: f64, discount: f64) -> f64 {
    match row {
        Transitions::Explicit(outcomes) => outcomes
            .iter()
            .map(|o| o.prob * (o.reward + discount * v[o.next.0]))
            .sum(),
        Transitions::Uniform { reward } => reward + discount * spread_mean,
    }
}

/// Sup-norm Bellman residual of `q` under the clipped backup.
pub fn bellman_residual(model: &TabularModel, q: &QTable, bound: &UpperBound) -> f64 {
    let mut v = vec![0.0; model.n_states];
    state_values(model, &q.values, &mut v);
    let mean = spread_mean(model, &v);
    let mut residual: f64 = 0.0;
    for s in 0..model.n_states {
        for a in 0..model.n_actions {
            let idx = s * model.n_actions + a;
            let target = if model.terminal[s] {
                0.0
            } else {
                bound.clip(idx, backup(&model.rows[idx], &v, mean, q.discount))
            };
            residual = residual.max((target - q.values[idx]).abs());
        }
    }
    residual
}

/// Iterates `Q <- min(B Q, bound)` from `warm_start` until the iterate is within
/// `tol` of the fixed point in sup-norm. Terminal states are pinned to zero.
pub fn value_iterate(
    model: &TabularModel,
    discount: f64,
    warm_start: &QTable,
    bound: &UpperBound,
    tol: f64,
    max_sweeps: usize,
) -> Result<QTable> {
    model.validate()?;
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Parameter(format!("discount {discount} outside (0, 1)")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance {tol} must be positive")));
    }
    let n_states = model.n_states;
    let n_actions = model.n_actions;
    let n_pairs = n_states * n_actions;
    if warm_start.n_states != n_states || warm_start.n_actions != n_actions {
        return Err(Error::Dimension(format!(
            "warm start is {} x {}, model is {n_states} x {n_actions}",
            warm_start.n_states, warm_start.n_actions
        )));
    }
    if let UpperBound::PerPair(b) = bound {
        if b.len() != n_pairs {
            return Err(Error::Dimension(format!(
                "bound has {} entries, model has {n_pairs} pairs",
                b.len()
            )));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("bound entries must be finite".into()));
        }
    }
    if warm_start.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("warm start contains non-finite values".into()));
    }

    let mut q = warm_start.values.clone();
    for s in (0..n_states).filter(|&s| model.terminal[s]) {
        q[s * n_actions..(s + 1) * n_actions].fill(0.0);
    }
    let mut next = vec![0.0; n_pairs];
    let mut v = vec![0.0; n_states];
    // ||Q_{k+1} - Q*|| <= discount / (1 - discount) * ||Q_{k+1} - Q_k||
    let stop_at = tol * (1.0 - discount) / discount;
    let mut delta = f64::INFINITY;

    for _ in 0..max_sweeps {
        state_values(model, &q, &mut v);
        let mean = spread_mean(model, &v);
        delta = 0.0;
        for s in 0..n_states {
            let base = s * n_actions;
            if model.terminal[s] {
                next[base..base + n_actions].fill(0.0);
                continue;
            }
            for a in 0..n_actions {
                let idx = base + a;
                let value = bound.clip(idx, backup(&model.rows[idx], &v, mean, discount));
                delta = delta.max((value - q[idx]).abs());
                next[idx] = value;
            }
        }
        std::mem::swap(&mut q, &mut next);
        if delta <= stop_at {
            return Ok(QTable {
                n_states,
                n_actions,
                discount,
                values: q,
            });
        }
    }
    Err(Error::Convergence {
        sweeps: max_sweeps,
        residual: delta,
    })
}

/// `argmax_a Q(s, a)`, ties resolved towards the lowest action index.
pub fn greedy_action(q: &QTable, s: StateId) -> ActionId {
    let mut best = 0;
    let row = q.row(s);
    for (a, &value) in row.iter().enumerate().skip(1) {
        if value > row[best] {
            best = a;
        }
    }
    ActionId(best)
}

/// Gap between the best and second-best action value at `s`, and the best action.
pub fn marginal(q: &QTable, s: StateId) -> (f64, ActionId) {
    let best = greedy_action(q, s);
    let row = q.row(s);
    let runner_up = row
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != best.0)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if runner_up == f64::NEG_INFINITY {
        (0.0, best)
    } else {
        (row[best.0] - runner_up, best)
    }
}
