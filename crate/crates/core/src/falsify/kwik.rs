use rand::RngCore;

use super::{
    is_plausible, max_margin_step, Episode, FailureSet, Falsifier, FalsifyParams, MarginalOutcome,
    TerminalKind, Trajectory, TrajectoryStep,
};
use crate::error::{Error, Result};
use crate::fidelity::Simulator;
use crate::knowledge::{KnowledgeStore, Observation, PriorSpread};
use crate::mdp::{greedy_action, value_iterate, PlannerConfig, QTable, StateId, UpperBound};

/// Single-simulator KWIK learner: no fidelity switching, no bounds, no
/// plausibility filter.
pub struct KwikFalsifier {
    simulator: Box<dyn Simulator>,
    knowledge: KnowledgeStore,
    q: QTable,
    q_version: u64,
    samples: u64,
    params: FalsifyParams,
    planner: PlannerConfig,
    prior_spread: PriorSpread,
}

impl KwikFalsifier {
    pub fn new(
        simulator: Box<dyn Simulator>,
        params: FalsifyParams,
        planner: PlannerConfig,
        prior_spread: PriorSpread,
        r_max: f64,
    ) -> Result<Self> {
        params.validate()?;
        let n_states = simulator.n_states();
        let n_actions = simulator.n_actions();
        let terminal = (0..n_states).map(|s| simulator.is_terminal(StateId(s))).collect();
        let knowledge =
            KnowledgeStore::new(n_states, n_actions, &params.kwik, r_max).with_terminal(terminal)?;
        let mut learner = Self {
            simulator,
            knowledge,
            q: QTable::zeros(n_states, n_actions, planner.discount),
            q_version: 0,
            samples: 0,
            params,
            planner,
            prior_spread,
        };
        learner.train()?;
        Ok(learner)
    }

    pub fn knowledge(&self) -> &KnowledgeStore {
        &self.knowledge
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    fn train(&mut self) -> Result<()> {
        let model = self.knowledge.export_model(&self.prior_spread);
        self.q = value_iterate(
            &model,
            self.planner.discount,
            &self.q,
            &UpperBound::Unbounded,
            self.planner.tol,
            self.planner.max_sweeps,
        )?;
        self.q_version += 1;
        Ok(())
    }

    pub fn search(&mut self, s0: StateId, n: usize, rng: &mut dyn RngCore) -> Result<FailureSet> {
        let mut found = FailureSet::new();
        for _ in 0..n {
            if let Some(f) = self.evaluate_state(s0, rng)? {
                found.insert(f)?;
            }
        }
        Ok(found)
    }

    pub fn evaluate_state(&mut self, s0: StateId, rng: &mut dyn RngCore) -> Result<Option<Trajectory>> {
        let episode = self.run_episode(s0, rng)?;
        Ok(episode.trajectory.is_failure().then_some(episode.trajectory))
    }

    pub fn marginal_update(&mut self, f: &Trajectory) -> Result<MarginalOutcome> {
        let (step, margin) = max_margin_step(f.steps.iter().map(|t| t.s), &self.q)
            .ok_or_else(|| Error::Contract("marginal update needs a non-empty trajectory".into()))?;
        let t = f.steps[step];
        let applied = self
            .knowledge
            .shift_reward(t.s, t.a, t.next, -self.params.r_inc)
            .is_ok();
        self.train()?;
        Ok(MarginalOutcome {
            step,
            margin,
            applied,
        })
    }
}

impl Falsifier for KwikFalsifier {
    fn run_episode(&mut self, s0: StateId, rng: &mut dyn RngCore) -> Result<Episode> {
        if s0.0 >= self.knowledge.n_states() {
            return Err(Error::Parameter(format!("initial state {} out of range", s0.0)));
        }
        self.simulator.reset();
        let mut s = s0;
        let mut steps = Vec::new();
        let terminal_kind = loop {
            if self.simulator.is_terminal(s) {
                break if self.simulator.is_failure(s) {
                    TerminalKind::Failure
                } else {
                    TerminalKind::NoFailurePossible
                };
            }
            if steps.len() >= self.params.t_max {
                break TerminalKind::Timeout;
            }
            let a = greedy_action(&self.q, s);
            let (next, reward) = self.simulator.step(s, a, rng)?;
            self.samples += 1;
            if !self.knowledge.is_known(s, a) && self.knowledge.observe(Observation { s, a, next, reward })? {
                self.train()?;
            }
            steps.push(TrajectoryStep { s, a, next, fidelity: 1 });
            s = next;
        };

        let trajectory = Trajectory { steps, terminal_kind };
        let converged = trajectory
            .steps
            .iter()
            .all(|t| self.knowledge.is_known(t.s, t.a));
        let marginal = if converged && !trajectory.steps.is_empty() {
            Some(self.marginal_update(&trajectory)?)
        } else {
            None
        };
        Ok(Episode {
            trajectory,
            converged,
            marginal,
            trace: Vec::new(),
        })
    }

    fn depth(&self) -> usize {
        1
    }

    fn samples(&self, d: usize) -> u64 {
        if d == 1 {
            self.samples
        } else {
            0
        }
    }

    fn current_fidelity(&self) -> usize {
        1
    }

    fn top_q(&self) -> (&QTable, u64) {
        (&self.q, self.q_version)
    }

    fn plausible(&self, f: &Trajectory, rng: &mut dyn RngCore) -> Result<bool> {
        is_plausible(f, self.simulator.as_ref(), self.params.plausibility_samples, rng)
    }
}
