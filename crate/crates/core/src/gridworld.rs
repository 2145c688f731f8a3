//! Two-fidelity puddle grid world: an adversary tries to intercept a myopic
//! goal-seeking agent.
//!
//! The high-fidelity world makes an agent standing in a puddle reach its intended
//! cell only with probability `puddle_success_prob` (otherwise it stays put); the
//! low-fidelity world ignores puddles in the dynamics. Both agents move at once
//! and a failure is both agents occupying the same cell after the move.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::falsify::TerminalKind;
use crate::fidelity::Simulator;
use crate::mdp::{ActionId, Outcome, StateId, TabularModel, Transitions};

pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    North,
    South,
    East,
    West,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::North, Move::South, Move::East, Move::West, Move::Stay];

    pub fn from_action(a: ActionId) -> Option<Move> {
        Self::ALL.get(a.0).copied()
    }

    pub fn action(self) -> ActionId {
        ActionId(Self::ALL.iter().position(|&m| m == self).unwrap())
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Move::North => (0, 1),
            Move::South => (0, -1),
            Move::East => (1, 0),
            Move::West => (-1, 0),
            Move::Stay => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub failure: f64,
    pub goal_reached: f64,
    pub puddle: f64,
    /// Per-cell Manhattan distance penalty between the agents.
    pub distance_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            failure: 50.0,
            goal_reached: -25.0,
            puddle: -5.0,
            distance_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub puddles: Vec<Cell>,
    pub goal: Cell,
    pub puddle_success_prob: f64,
    /// `true` for the high-fidelity dynamics.
    pub model_puddles: bool,
    pub rewards: RewardConfig,
    pub discount: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            puddles: vec![(1, 1), (2, 1), (1, 2), (2, 2)],
            goal: (3, 3),
            puddle_success_prob: 0.2,
            model_puddles: true,
            rewards: RewardConfig::default(),
            discount: 0.95,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        if !self.contains(self.goal) {
            return Err(Error::Config(format!("goal {:?} outside the grid", self.goal)));
        }
        if let Some(p) = self.puddles.iter().find(|&&p| !self.contains(p)) {
            return Err(Error::Config(format!("puddle {p:?} outside the grid")));
        }
        if !(0.0..=1.0).contains(&self.puddle_success_prob) {
            return Err(Error::Config(format!(
                "puddle_success_prob {} outside [0, 1]",
                self.puddle_success_prob
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1)", self.discount)));
        }
        Ok(())
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn n_states(&self) -> usize {
        self.n_cells() * self.n_cells()
    }

    pub fn is_puddle(&self, c: Cell) -> bool {
        self.puddles.contains(&c)
    }

    /// Same layout with the given dynamics.
    pub fn with_puddles_modeled(&self, model_puddles: bool) -> Self {
        Self {
            model_puddles,
            ..self.clone()
        }
    }

    fn cell_index(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    fn cell_at(&self, index: usize) -> Cell {
        (index % self.width, index / self.width)
    }

    /// Target cell of a move; off-grid intents stay in place.
    fn target(&self, c: Cell, m: Move) -> Cell {
        let (dx, dy) = m.delta();
        let x = c.0 as isize + dx;
        let y = c.1 as isize + dy;
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            c
        } else {
            (x as usize, y as usize)
        }
    }
}

pub fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridState {
    pub sut: Cell,
    pub adv: Cell,
}

pub fn encode(state: GridState, cfg: &GridConfig) -> Result<StateId> {
    if !cfg.contains(state.sut) || !cfg.contains(state.adv) {
        return Err(Error::Encoding(format!("{state:?} lies outside the {}x{} grid", cfg.width, cfg.height)));
    }
    Ok(StateId(cfg.cell_index(state.sut) * cfg.n_cells() + cfg.cell_index(state.adv)))
}

pub fn decode(id: StateId, cfg: &GridConfig) -> Result<GridState> {
    if id.0 >= cfg.n_states() {
        return Err(Error::Encoding(format!("state id {} beyond {}", id.0, cfg.n_states())));
    }
    Ok(GridState {
        sut: cfg.cell_at(id.0 / cfg.n_cells()),
        adv: cfg.cell_at(id.0 % cfg.n_cells()),
    })
}

/// Myopic policy of the system under test: step along the axis with the larger
/// remaining distance (ties to x), never into the adversary's current cell.
pub fn sut_policy(state: GridState, cfg: &GridConfig) -> Move {
    let (x, y) = state.sut;
    let (gx, gy) = cfg.goal;
    let dx = x.abs_diff(gx);
    let dy = y.abs_diff(gy);
    let x_move = match x.cmp(&gx) {
        std::cmp::Ordering::Less => Some(Move::East),
        std::cmp::Ordering::Greater => Some(Move::West),
        std::cmp::Ordering::Equal => None,
    };
    let y_move = match y.cmp(&gy) {
        std::cmp::Ordering::Less => Some(Move::North),
        std::cmp::Ordering::Greater => Some(Move::South),
        std::cmp::Ordering::Equal => None,
    };
    let ordered = if dx >= dy { [x_move, y_move] } else { [y_move, x_move] };
    ordered
        .into_iter()
        .flatten()
        .find(|&m| cfg.target(state.sut, m) != state.adv)
        .unwrap_or(Move::Stay)
}

/// Reward of landing in `next`; depends on the successor only.
pub fn reward(next: GridState, cfg: &GridConfig) -> f64 {
    let r = &cfg.rewards;
    let mut total = -r.distance_scale * manhattan(next.adv, next.sut) as f64;
    if cfg.is_puddle(next.adv) {
        total += r.puddle;
    }
    if next.sut == cfg.goal {
        total += r.goal_reached;
    }
    if next.adv == next.sut {
        total += r.failure;
    }
    total
}

/// Terminal classification; state-based conditions take precedence over the step cap.
pub fn is_terminal(state: GridState, cfg: &GridConfig, steps_elapsed: usize, t_max: usize) -> Option<TerminalKind> {
    if state.adv == state.sut {
        Some(TerminalKind::Failure)
    } else if state.sut == cfg.goal {
        Some(TerminalKind::NoFailurePossible)
    } else if steps_elapsed >= t_max {
        Some(TerminalKind::Timeout)
    } else {
        None
    }
}

fn absorbing(state: GridState, cfg: &GridConfig) -> bool {
    state.adv == state.sut || state.sut == cfg.goal
}

/// Possible destinations of one agent with their probabilities.
fn agent_branches(cfg: &GridConfig, from: Cell, m: Move) -> Vec<(Cell, f64)> {
    let to = cfg.target(from, m);
    if to == from {
        vec![(from, 1.0)]
    } else if cfg.model_puddles && cfg.is_puddle(from) {
        let p = cfg.puddle_success_prob;
        [(to, p), (from, 1.0 - p)].into_iter().filter(|&(_, q)| q > 0.0).collect()
    } else {
        vec![(to, 1.0)]
    }
}

fn resolve<R: RngCore + ?Sized>(cfg: &GridConfig, from: Cell, m: Move, rng: &mut R) -> Cell {
    let to = cfg.target(from, m);
    if to != from && cfg.model_puddles && cfg.is_puddle(from) {
        if rng.gen::<f64>() < cfg.puddle_success_prob {
            to
        } else {
            from
        }
    } else {
        to
    }
}

/// One joint step: the system under test follows [`sut_policy`], the adversary plays `adv_move`.
pub fn step<R: RngCore + ?Sized>(
    state: GridState,
    adv_move: Move,
    cfg: &GridConfig,
    rng: &mut R,
) -> Result<(GridState, f64)> {
    if absorbing(state, cfg) {
        return Err(Error::Contract(format!("cannot step terminal state {state:?}")));
    }
    let sut_move = sut_policy(state, cfg);
    let sut = resolve(cfg, state.sut, sut_move, rng);
    let adv = resolve(cfg, state.adv, adv_move, rng);
    let next = GridState { sut, adv };
    Ok((next, reward(next, cfg)))
}

/// Exact successor distribution of a joint step, duplicates merged.
pub fn outcomes(state: GridState, adv_move: Move, cfg: &GridConfig) -> Vec<(GridState, f64)> {
    let sut_move = sut_policy(state, cfg);
    let mut out: Vec<(GridState, f64)> = Vec::new();
    for (sut, p) in agent_branches(cfg, state.sut, sut_move) {
        for (adv, q) in agent_branches(cfg, state.adv, adv_move) {
            let next = GridState { sut, adv };
            match out.iter_mut().find(|(s, _)| *s == next) {
                Some(entry) => entry.1 += p * q,
                None => out.push((next, p * q)),
            }
        }
    }
    out
}

/// Whether `s -> next` under adversary action `a` has positive probability.
pub fn support(s: StateId, a: ActionId, next: StateId, cfg: &GridConfig) -> Result<bool> {
    let state = decode(s, cfg)?;
    let target = decode(next, cfg)?;
    let m = Move::from_action(a).ok_or_else(|| Error::Parameter(format!("action {} is not a move", a.0)))?;
    if absorbing(state, cfg) {
        return Ok(false);
    }
    Ok(outcomes(state, m, cfg).iter().any(|&(n, p)| n == target && p > 0.0))
}

/// Cells visited by the system under test when the adversary holds still, starting cell first.
pub fn sut_path(state: GridState, cfg: &GridConfig) -> Vec<Cell> {
    let mut path = vec![state.sut];
    let mut current = state;
    while current.sut != cfg.goal && path.len() <= cfg.n_cells() {
        let m = sut_policy(current, cfg);
        if m == Move::Stay {
            break;
        }
        current.sut = cfg.target(current.sut, m);
        path.push(current.sut);
    }
    path
}

/// True when the adversary could reach some cell of the system's greedy path no later than it.
pub fn interceptable(state: GridState, cfg: &GridConfig) -> bool {
    sut_path(state, cfg)
        .iter()
        .any(|&c| manhattan(state.adv, c) <= manhattan(state.sut, c))
}

fn acceptable_initial(state: GridState, cfg: &GridConfig) -> bool {
    state.sut != cfg.goal && state.adv != state.sut && interceptable(state, cfg)
}

/// Every state [`sample_initial_state`] can emit.
pub fn initial_state_support(cfg: &GridConfig) -> Vec<GridState> {
    let cells: Vec<Cell> = (0..cfg.n_cells()).map(|i| cfg.cell_at(i)).collect();
    cells
        .iter()
        .flat_map(|&sut| cells.iter().map(move |&adv| GridState { sut, adv }))
        .filter(|&s| acceptable_initial(s, cfg))
        .collect()
}

/// Uniform over non-goal system cells and adversary cells, rejecting initial
/// failures and states where interception is impossible.
pub fn sample_initial_state<R: Rng + ?Sized>(cfg: &GridConfig, rng: &mut R) -> Result<GridState> {
    if initial_state_support(cfg).is_empty() {
        return Err(Error::Config("no interceptable initial state exists".into()));
    }
    loop {
        let sut = cfg.cell_at(rng.gen_range(0..cfg.n_cells()));
        if sut == cfg.goal {
            continue;
        }
        let adv = cfg.cell_at(rng.gen_range(0..cfg.n_cells()));
        let state = GridState { sut, adv };
        if acceptable_initial(state, cfg) {
            return Ok(state);
        }
    }
}

/// A [`GridConfig`] wrapped as a [`Simulator`].
#[derive(Clone, Debug)]
pub struct GridWorld {
    cfg: GridConfig,
}

impl GridWorld {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    /// Largest instantaneous reward any transition can pay.
    pub fn r_max(&self) -> f64 {
        (0..self.cfg.n_states())
            .map(|s| reward(decode(StateId(s), &self.cfg).unwrap(), &self.cfg))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Simulator for GridWorld {
    fn n_states(&self) -> usize {
        self.cfg.n_states()
    }

    fn n_actions(&self) -> usize {
        Move::ALL.len()
    }

    fn is_terminal(&self, s: StateId) -> bool {
        decode(s, &self.cfg).map_or(true, |state| absorbing(state, &self.cfg))
    }

    fn is_failure(&self, s: StateId) -> bool {
        decode(s, &self.cfg).is_ok_and(|state| state.adv == state.sut)
    }

    fn step(&self, s: StateId, a: ActionId, rng: &mut dyn RngCore) -> Result<(StateId, f64)> {
        let state = decode(s, &self.cfg)?;
        let m = Move::from_action(a).ok_or_else(|| Error::Parameter(format!("action {} is not a move", a.0)))?;
        let (next, r) = step(state, m, &self.cfg, rng)?;
        Ok((encode(next, &self.cfg)?, r))
    }

    fn support(&self, s: StateId, a: ActionId, next: StateId) -> Option<bool> {
        support(s, a, next, &self.cfg).ok()
    }

    fn true_model(&self) -> Option<TabularModel> {
        let cfg = &self.cfg;
        let mut model = TabularModel::new(cfg.n_states(), Move::ALL.len());
        for s in 0..cfg.n_states() {
            let state = decode(StateId(s), cfg).ok()?;
            if absorbing(state, cfg) {
                model.set_terminal(StateId(s), true);
                continue;
            }
            for m in Move::ALL {
                let row = outcomes(state, m, cfg)
                    .into_iter()
                    .map(|(next, prob)| Outcome {
                        next: encode(next, cfg).unwrap(),
                        prob,
                        reward: reward(next, cfg),
                    })
                    .collect();
                model.set_row(StateId(s), m.action(), Transitions::Explicit(row));
            }
        }
        Some(model)
    }
}
