//! Failure search over a fidelity stack.
//!
//! [`MfFalsifier`] is the multi-fidelity learner: it samples the cheapest level
//! whose policy is still uncertain, climbs a level after `m_known` consecutive
//! known pairs and drops back when the level below is also ignorant of the
//! chosen pair. [`KwikFalsifier`] is the single-simulator variant with the
//! fidelity logic removed. Both shape their learned rewards with the marginal
//! update once an episode runs entirely through known pairs.

mod kwik;

use std::collections::HashSet;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::fidelity::{FidelityStack, Simulator};
use crate::knowledge::KwikParams;
use crate::mdp::{greedy_action, marginal, ActionId, QTable, StateId};

pub use kwik::KwikFalsifier;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerminalKind {
    Failure,
    Timeout,
    NoFailurePossible,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrajectoryStep {
    pub s: StateId,
    pub a: ActionId,
    pub next: StateId,
    /// Level the step was sampled at, 1-based.
    pub fidelity: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub terminal_kind: TerminalKind,
}

impl Trajectory {
    pub fn is_failure(&self) -> bool {
        self.terminal_kind == TerminalKind::Failure
    }

    /// The `(s, a, s')` sequence that identifies the scenario.
    pub fn transitions(&self) -> Vec<(StateId, ActionId, StateId)> {
        self.steps.iter().map(|t| (t.s, t.a, t.next)).collect()
    }

    /// Fidelity of the final step, if any.
    pub fn final_fidelity(&self) -> Option<usize> {
        self.steps.last().map(|t| t.fidelity)
    }
}

/// Distinct failure scenarios, in discovery order.
#[derive(Clone, Debug, Default)]
pub struct FailureSet {
    scenarios: Vec<Trajectory>,
    seen: HashSet<Vec<(StateId, ActionId, StateId)>>,
}

impl FailureSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a failure trajectory; returns `false` if the same scenario is already present.
    pub fn insert(&mut self, f: Trajectory) -> Result<bool> {
        if !f.is_failure() {
            return Err(Error::Contract(format!(
                "only failures belong in a failure set, got {:?}",
                f.terminal_kind
            )));
        }
        if self.seen.insert(f.transitions()) {
            self.scenarios.push(f);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    pub fn contains(&self, f: &Trajectory) -> bool {
        self.seen.contains(&f.transitions())
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn scenarios(&self) -> &[Trajectory] {
        &self.scenarios
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Trajectory) -> Result<bool>) -> Result<()> {
        let mut kept = Vec::with_capacity(self.scenarios.len());
        for f in self.scenarios.drain(..) {
            if keep(&f)? {
                kept.push(f);
            } else {
                self.seen.remove(&f.transitions());
            }
        }
        self.scenarios = kept;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FalsifyParams {
    /// Reward decrement applied by the marginal update.
    pub r_inc: f64,
    pub m_known: u32,
    pub m_unknown: u32,
    pub kwik: KwikParams,
    /// Episode step cap.
    pub t_max: usize,
    /// Monte Carlo draws per transition when a simulator has no exact support query.
    pub plausibility_samples: usize,
}

impl FalsifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..).contains(&self.r_inc) || !self.r_inc.is_finite() {
            return Err(Error::Parameter(format!("r_inc {} must be non-negative", self.r_inc)));
        }
        if self.m_known < 1 || self.m_unknown < 1 {
            return Err(Error::Parameter("m_known and m_unknown must be at least 1".into()));
        }
        if self.t_max < 1 {
            return Err(Error::Parameter("t_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fidelity-switching state carried across episodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LearnerState {
    pub d: usize,
    pub m_k: u32,
    pub m_u: u32,
    pub change_d: bool,
}

impl Default for LearnerState {
    fn default() -> Self {
        Self {
            d: 1,
            m_k: 0,
            m_u: 0,
            change_d: false,
        }
    }
}

/// Learner state after one pass of the episode loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub fidelity_before: usize,
    pub fidelity_after: usize,
    /// `false` for a fidelity decrement, which draws no sample.
    pub sampled: bool,
    pub m_k: u32,
    pub m_u: u32,
    pub samples: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalOutcome {
    /// Index into the trajectory of the step whose reward was decremented.
    pub step: usize,
    pub margin: f64,
    /// Whether a learned reward entry was actually changed.
    pub applied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub converged: bool,
    pub marginal: Option<MarginalOutcome>,
    /// Per-pass learner trace, filled only when tracing is enabled.
    pub trace: Vec<StepRecord>,
}

/// Common surface of the multi- and single-fidelity learners.
pub trait Falsifier {
    fn run_episode(&mut self, s0: StateId, rng: &mut dyn RngCore) -> Result<Episode>;

    /// Number of fidelity levels.
    fn depth(&self) -> usize;

    /// Cumulative samples drawn at level `d`.
    fn samples(&self, d: usize) -> u64;

    fn current_fidelity(&self) -> usize;

    /// Q table of the highest level and its version counter.
    fn top_q(&self) -> (&QTable, u64);

    /// Whether every transition of `f` has support in the highest-fidelity simulator.
    fn plausible(&self, f: &Trajectory, rng: &mut dyn RngCore) -> Result<bool>;
}

/// True iff every `(s, a)` of `f` is known at the level it was sampled at.
pub fn is_converged(f: &Trajectory, stack: &FidelityStack) -> bool {
    f.steps
        .iter()
        .all(|t| stack.level(t.fidelity).knowledge.is_known(t.s, t.a))
}

/// True iff every transition of `f` can occur in `highest`. Uses the exact support
/// query when available, else looks for `s'` among `n_mc` samples of `step(s, a)`.
pub fn is_plausible(
    f: &Trajectory,
    highest: &dyn Simulator,
    n_mc: usize,
    rng: &mut dyn RngCore,
) -> Result<bool> {
    for t in &f.steps {
        let supported = match highest.support(t.s, t.a, t.next) {
            Some(answer) => answer,
            None => {
                let mut hit = false;
                for _ in 0..n_mc {
                    if highest.step(t.s, t.a, rng)?.0 == t.next {
                        hit = true;
                        break;
                    }
                }
                hit
            }
        };
        if !supported {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Index and value of the largest margin along `f` under `q`; ties go to the earliest step.
pub(crate) fn max_margin_step(
    steps: impl Iterator<Item = StateId>,
    q: &QTable,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in steps.enumerate() {
        let (m, _) = marginal(q, s);
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best
}

/// Multi-fidelity failure search.
pub struct MfFalsifier {
    stack: FidelityStack,
    params: FalsifyParams,
    learner: LearnerState,
    tracing: bool,
}

impl MfFalsifier {
    /// Takes ownership of a populated stack and plans every level once, so the
    /// first greedy policy is already optimistic.
    pub fn new(mut stack: FidelityStack, params: FalsifyParams) -> Result<Self> {
        params.validate()?;
        if stack.depth() == 0 {
            return Err(Error::Parameter("fidelity stack has no levels".into()));
        }
        stack.plan_all()?;
        Ok(Self {
            stack,
            params,
            learner: LearnerState::default(),
            tracing: false,
        })
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    pub fn stack(&self) -> &FidelityStack {
        &self.stack
    }

    pub fn stack_mut(&mut self) -> &mut FidelityStack {
        &mut self.stack
    }

    pub fn learner(&self) -> LearnerState {
        self.learner
    }

    pub fn params(&self) -> &FalsifyParams {
        &self.params
    }

    /// Runs `n` episodes from `s0` (a top-level state) and returns the distinct
    /// failures that are plausible at the highest fidelity.
    pub fn search(&mut self, s0: StateId, n: usize, rng: &mut dyn RngCore) -> Result<FailureSet> {
        let mut found = FailureSet::new();
        for _ in 0..n {
            if let Some(f) = self.evaluate_state(s0, rng)? {
                found.insert(f)?;
            }
        }
        found.retain(|f| self.plausible(f, rng))?;
        Ok(found)
    }

    /// One episode; returns the trajectory iff it ends in failure.
    pub fn evaluate_state(&mut self, s0: StateId, rng: &mut dyn RngCore) -> Result<Option<Trajectory>> {
        let episode = self.run_episode(s0, rng)?;
        Ok(episode.trajectory.is_failure().then_some(episode.trajectory))
    }

    fn record(&self, trace: &mut Vec<StepRecord>, before: usize, sampled: bool) {
        if self.tracing {
            trace.push(StepRecord {
                fidelity_before: before,
                fidelity_after: self.learner.d,
                sampled,
                m_k: self.learner.m_k,
                m_u: self.learner.m_u,
                samples: self.stack.levels().iter().map(|l| l.samples).collect(),
            });
        }
    }

    fn episode(&mut self, s0: StateId, rng: &mut dyn RngCore) -> Result<Episode> {
        let depth = self.stack.depth();
        if s0.0 >= self.stack.level(depth).knowledge.n_states() {
            return Err(Error::Parameter(format!("initial state {} out of range", s0.0)));
        }
        self.stack.reset_simulators();
        let mut s = self.stack.map_state(s0, depth, self.learner.d);
        let mut steps = Vec::new();
        let mut trace = Vec::new();

        let terminal_kind = loop {
            let d = self.learner.d;
            let sim = &self.stack.level(d).simulator;
            if sim.is_terminal(s) {
                break if sim.is_failure(s) {
                    TerminalKind::Failure
                } else {
                    TerminalKind::NoFailurePossible
                };
            }
            if steps.len() >= self.params.t_max {
                break TerminalKind::Timeout;
            }

            let a = greedy_action(&self.stack.level(d).q, s);
            if d > 1 && self.learner.change_d && self.learner.m_u >= self.params.m_unknown {
                let below = self.stack.level(d).rho.apply(s);
                if !self.stack.level(d - 1).knowledge.is_known(below, a) {
                    self.stack.plan(d - 1)?;
                    self.learner = LearnerState {
                        d: d - 1,
                        m_k: 0,
                        m_u: 0,
                        change_d: false,
                    };
                    s = below;
                    self.record(&mut trace, d, false);
                    continue;
                }
            }

            let level = self.stack.level_mut(d);
            let (next, reward) = level.simulator.step(s, a, rng)?;
            level.samples += 1;
            if !level.knowledge.is_known(s, a) {
                let became_known = level.knowledge.observe(crate::knowledge::Observation {
                    s,
                    a,
                    next,
                    reward,
                })?;
                if became_known {
                    self.stack.plan(d)?;
                    self.learner.change_d = true;
                }
            }
            if self.stack.level(d).knowledge.is_known(s, a) {
                self.learner.m_k += 1;
                self.learner.m_u = 0;
            } else {
                self.learner.m_u += 1;
                self.learner.m_k = 0;
            }
            steps.push(TrajectoryStep {
                s,
                a,
                next,
                fidelity: d,
            });
            s = next;

            if d < depth && self.learner.m_k >= self.params.m_known {
                self.learner = LearnerState {
                    d: d + 1,
                    m_k: 0,
                    m_u: 0,
                    change_d: false,
                };
                s = self.stack.level(d + 1).rho.lift(s);
                self.stack.plan(d + 1)?;
            }
            self.record(&mut trace, d, true);
        };

        let trajectory = Trajectory {
            steps,
            terminal_kind,
        };
        let converged = is_converged(&trajectory, &self.stack);
        let marginal = if converged && !trajectory.steps.is_empty() {
            Some(self.marginal_update(&trajectory)?)
        } else {
            None
        };
        Ok(Episode {
            trajectory,
            converged,
            marginal,
            trace,
        })
    }

    /// Decrements the learned reward of the max-margin transition of `f` by
    /// `r_inc` and re-plans the current level. The margin is read from the
    /// current level's Q; the decrement lands on the estimate that level plans with.
    pub fn marginal_update(&mut self, f: &Trajectory) -> Result<MarginalOutcome> {
        let d = self.learner.d;
        let stack = &self.stack;
        let (step, margin) = max_margin_step(
            f.steps.iter().map(|t| stack.map_state(t.s, t.fidelity, d)),
            &stack.level(d).q,
        )
        .ok_or_else(|| Error::Contract("marginal update needs a non-empty trajectory".into()))?;

        let t = f.steps[step];
        let s = stack.map_state(t.s, t.fidelity, d);
        let next = stack.map_state(t.next, t.fidelity, d);
        let source = stack.estimate_source(d, s, t.a, stack.levels_in_fidelity(d)?);
        let s_src = stack.map_state(s, d, source);
        let next_src = stack.map_state(next, d, source);
        let applied = self
            .stack
            .level_mut(source)
            .knowledge
            .shift_reward(s_src, t.a, next_src, -self.params.r_inc)
            .is_ok();
        self.stack.plan(d)?;
        Ok(MarginalOutcome {
            step,
            margin,
            applied,
        })
    }
}

impl Falsifier for MfFalsifier {
    fn run_episode(&mut self, s0: StateId, rng: &mut dyn RngCore) -> Result<Episode> {
        self.episode(s0, rng)
    }

    fn depth(&self) -> usize {
        self.stack.depth()
    }

    fn samples(&self, d: usize) -> u64 {
        self.stack.level(d).samples
    }

    fn current_fidelity(&self) -> usize {
        self.learner.d
    }

    fn top_q(&self) -> (&QTable, u64) {
        let top = self.stack.level(self.stack.depth());
        (&top.q, top.q_version)
    }

    fn plausible(&self, f: &Trajectory, rng: &mut dyn RngCore) -> Result<bool> {
        let depth = self.stack.depth();
        let lifted = Trajectory {
            steps: f
                .steps
                .iter()
                .map(|t| TrajectoryStep {
                    s: self.stack.map_state(t.s, t.fidelity, depth),
                    a: t.a,
                    next: self.stack.map_state(t.next, t.fidelity, depth),
                    fidelity: depth,
                })
                .collect(),
            terminal_kind: f.terminal_kind,
        };
        is_plausible(
            &lifted,
            self.stack.level(depth).simulator.as_ref(),
            self.params.plausibility_samples,
            rng,
        )
    }
}
