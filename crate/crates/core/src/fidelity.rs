//! Simulators, the fidelity relation between adjacent levels, and the stack of
//! per-level learned knowledge that planning draws on.
//!
//! Level 1 is the cheapest simulator; level `D` the most accurate. Planning at
//! level `d` uses, per pair, the estimate of the highest level `>= d` that knows
//! it, falling back to the level below when the two levels are in fidelity, and
//! to level `d`'s own optimistic estimate otherwise. Values at `d > 1` are capped
//! by `Q_{d-1} + beta_{d-1}`.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeStore, KwikParams, PriorSpread};
use crate::mdp::{
    value_iterate, ActionId, Outcome, PlannerConfig, QTable, StateId, TabularModel, Transitions,
    UpperBound,
};

/// A black-box simulator. The system under test lives inside it; the action is
/// the learner's disturbance.
pub trait Simulator: Send + Sync {
    fn n_states(&self) -> usize;

    fn n_actions(&self) -> usize;

    /// Returns the simulator to its initial configuration before an episode.
    fn reset(&mut self) {}

    fn is_terminal(&self, s: StateId) -> bool;

    /// Terminal states that constitute a failure of the system under test.
    fn is_failure(&self, s: StateId) -> bool;

    /// Samples `(s', r)` for the learner's action `a`. Stepping a terminal state is an error.
    fn step(&self, s: StateId, a: ActionId, rng: &mut dyn RngCore) -> Result<(StateId, f64)>;

    /// Exact support query, when the simulator can answer it.
    fn support(&self, _s: StateId, _a: ActionId, _next: StateId) -> Option<bool> {
        None
    }

    /// The exact transition model, when available.
    fn true_model(&self) -> Option<TabularModel> {
        None
    }
}

/// Maps states of a level onto the level below. Must be a bijection so episodes
/// can move in both directions.
#[derive(Clone, Debug, PartialEq)]
pub enum StateMapping {
    Identity(usize),
    Table {
        forward: Vec<StateId>,
        inverse: Vec<StateId>,
    },
}

impl StateMapping {
    pub fn identity(n_states: usize) -> Self {
        StateMapping::Identity(n_states)
    }

    pub fn from_table(forward: Vec<StateId>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![StateId(usize::MAX); n];
        for (s, t) in forward.iter().enumerate() {
            if t.0 >= n || inverse[t.0].0 != usize::MAX {
                return Err(Error::Parameter(format!(
                    "state mapping is not a bijection on {n} states (at {s} -> {})",
                    t.0
                )));
            }
            inverse[t.0] = StateId(s);
        }
        Ok(StateMapping::Table { forward, inverse })
    }

    pub fn len(&self) -> usize {
        match self {
            StateMapping::Identity(n) => *n,
            StateMapping::Table { forward, .. } => forward.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Higher-level state to its lower-level counterpart.
    #[inline]
    pub fn apply(&self, s: StateId) -> StateId {
        match self {
            StateMapping::Identity(_) => s,
            StateMapping::Table { forward, .. } => forward[s.0],
        }
    }

    /// Lower-level state back to the higher level.
    #[inline]
    pub fn lift(&self, s: StateId) -> StateId {
        match self {
            StateMapping::Identity(_) => s,
            StateMapping::Table { inverse, .. } => inverse[s.0],
        }
    }
}

pub struct Level {
    pub simulator: Box<dyn Simulator>,
    /// Allowed Q gap to the level above; also the slack on the bound it imposes.
    pub beta: f64,
    /// Maps this level's states onto the level below (unused on level 1).
    pub rho: StateMapping,
    pub knowledge: KnowledgeStore,
    pub q: QTable,
    /// Cumulative simulator samples drawn at this level.
    pub samples: u64,
    /// Incremented every time `q` is replaced.
    pub q_version: u64,
}

pub struct FidelityStack {
    levels: Vec<Level>,
    prior_spread: PriorSpread,
    planner: PlannerConfig,
}

impl FidelityStack {
    pub fn new(planner: PlannerConfig, prior_spread: PriorSpread) -> Self {
        Self {
            levels: Vec::new(),
            prior_spread,
            planner,
        }
    }

    /// Appends a level above the current highest one. The knowledge store's
    /// terminal mask is taken from the simulator.
    pub fn push_level(
        &mut self,
        simulator: Box<dyn Simulator>,
        beta: f64,
        rho: StateMapping,
        kwik: &KwikParams,
        r_max: f64,
    ) -> Result<&mut Self> {
        if !(0.0..).contains(&beta) {
            return Err(Error::Parameter(format!("beta {beta} must be non-negative")));
        }
        let n_states = simulator.n_states();
        let n_actions = simulator.n_actions();
        if let Some(first) = self.levels.first() {
            if first.simulator.n_states() != n_states || first.simulator.n_actions() != n_actions {
                return Err(Error::Dimension(format!(
                    "level {} is {n_states} x {n_actions}, level 1 is {} x {}",
                    self.levels.len() + 1,
                    first.simulator.n_states(),
                    first.simulator.n_actions()
                )));
            }
        }
        if rho.len() != n_states {
            return Err(Error::Dimension(format!(
                "state mapping covers {} states, simulator has {n_states}",
                rho.len()
            )));
        }
        let terminal = (0..n_states).map(|s| simulator.is_terminal(StateId(s))).collect();
        let knowledge = KnowledgeStore::new(n_states, n_actions, kwik, r_max).with_terminal(terminal)?;
        self.levels.push(Level {
            simulator,
            beta,
            rho,
            knowledge,
            q: QTable::zeros(n_states, n_actions, self.planner.discount),
            samples: 0,
            q_version: 0,
        });
        Ok(self)
    }

    /// Number of levels `D`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn planner(&self) -> &PlannerConfig {
        &self.planner
    }

    pub fn prior_spread(&self) -> &PriorSpread {
        &self.prior_spread
    }

    fn check(&self, d: usize) -> Result<usize> {
        if d == 0 || d > self.levels.len() {
            Err(Error::Parameter(format!(
                "fidelity {d} outside 1..={}",
                self.levels.len()
            )))
        } else {
            Ok(d - 1)
        }
    }

    /// Level `d`, 1-based.
    pub fn level(&self, d: usize) -> &Level {
        &self.levels[d - 1]
    }

    pub fn level_mut(&mut self, d: usize) -> &mut Level {
        &mut self.levels[d - 1]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Maps a state of level `from` to level `to`.
    pub fn map_state(&self, s: StateId, from: usize, to: usize) -> StateId {
        let mut s = s;
        if to < from {
            for d in ((to + 1)..=from).rev() {
                s = self.levels[d - 1].rho.apply(s);
            }
        } else {
            for d in (from + 1)..=to {
                s = self.levels[d - 1].rho.lift(s);
            }
        }
        s
    }

    pub fn reset_simulators(&mut self) {
        for level in &mut self.levels {
            level.simulator.reset();
        }
    }

    /// Level whose estimate `plan(d)` uses for `(s, a)`, where `s` is a level-`d` state.
    pub fn estimate_source(&self, d: usize, s: StateId, a: ActionId, upward_ok: bool) -> usize {
        for dp in (d..=self.levels.len()).rev() {
            let sp = self.map_state(s, d, dp);
            if self.levels[dp - 1].knowledge.is_known(sp, a) {
                return dp;
            }
        }
        if d > 1 && upward_ok {
            let below = self.levels[d - 1].rho.apply(s);
            if self.levels[d - 2].knowledge.is_known(below, a) {
                return d - 1;
            }
        }
        d
    }

    /// Whether levels `d` and `d - 1` are currently in fidelity.
    pub fn levels_in_fidelity(&self, d: usize) -> Result<bool> {
        if d < 2 {
            return Ok(false);
        }
        let upper = &self.levels[d - 1];
        let lower = &self.levels[d - 2];
        Ok(fidelity_check(&upper.q, &lower.q, &upper.rho, lower.beta)? > f64::NEG_INFINITY)
    }

    /// Model and bound that planning at fidelity `d` solves.
    pub fn assemble_plan_model(&self, d: usize) -> Result<(TabularModel, UpperBound)> {
        let idx = self.check(d)?;
        let level = &self.levels[idx];
        let n_states = level.knowledge.n_states();
        let n_actions = level.knowledge.n_actions();
        let upward_ok = self.levels_in_fidelity(d)?;

        let mut model = level.knowledge.export_model(&self.prior_spread);
        for s in 0..n_states {
            let s = StateId(s);
            if model.is_terminal(s) {
                continue;
            }
            for a in 0..n_actions {
                let a = ActionId(a);
                let source = self.estimate_source(d, s, a, upward_ok);
                if source == d {
                    continue;
                }
                let sp = self.map_state(s, d, source);
                let row = match self.levels[source - 1].knowledge.estimate(sp, a) {
                    Transitions::Explicit(outcomes) => Transitions::Explicit(
                        outcomes
                            .into_iter()
                            .map(|o| Outcome {
                                next: self.map_state(o.next, source, d),
                                ..o
                            })
                            .collect(),
                    ),
                    uniform => uniform,
                };
                model.set_row(s, a, row);
            }
        }

        let bound = if d == 1 {
            UpperBound::Unbounded
        } else {
            let lower = &self.levels[idx - 1];
            let mut b = Vec::with_capacity(n_states * n_actions);
            for s in 0..n_states {
                let below = level.rho.apply(StateId(s));
                for a in 0..n_actions {
                    b.push(lower.q.get(below, ActionId(a)) + lower.beta);
                }
            }
            UpperBound::PerPair(b)
        };
        Ok((model, bound))
    }

    /// Re-solves level `d` from the assembled model, warm-started from its current Q.
    pub fn plan(&mut self, d: usize) -> Result<()> {
        let idx = self.check(d)?;
        let (model, bound) = self.assemble_plan_model(d)?;
        let cfg = self.planner;
        let q = value_iterate(
            &model,
            cfg.discount,
            &self.levels[idx].q,
            &bound,
            cfg.tol,
            cfg.max_sweeps,
        )?;
        let level = &mut self.levels[idx];
        level.q = q;
        level.q_version += 1;
        Ok(())
    }

    /// Plans every level bottom-up.
    pub fn plan_all(&mut self) -> Result<()> {
        for d in 1..=self.levels.len() {
            self.plan(d)?;
        }
        Ok(())
    }
}

/// Fidelity relation between a higher level `i` and a lower level `j`:
/// `-max |Q_i(s, a) - Q_j(rho(s), a)|` when that gap is at most `beta`, `-inf` otherwise.
pub fn fidelity_check(q_i: &QTable, q_j: &QTable, rho: &StateMapping, beta: f64) -> Result<f64> {
    if q_i.n_actions() != q_j.n_actions() {
        return Err(Error::Dimension(format!(
            "action counts differ: {} vs {}",
            q_i.n_actions(),
            q_j.n_actions()
        )));
    }
    if rho.len() != q_i.n_states() {
        return Err(Error::Dimension(format!(
            "mapping covers {} states, table has {}",
            rho.len(),
            q_i.n_states()
        )));
    }
    let mut gap: f64 = 0.0;
    for s in 0..q_i.n_states() {
        let t = rho.apply(StateId(s));
        if t.0 >= q_j.n_states() {
            return Err(Error::Dimension(format!(
                "state {s} maps to {} beyond the lower table",
                t.0
            )));
        }
        for (x, y) in q_i.row(StateId(s)).iter().zip(q_j.row(t)) {
            gap = gap.max((x - y).abs());
        }
    }
    if gap <= beta {
        Ok(-gap)
    } else {
        Ok(f64::NEG_INFINITY)
    }
}
