//! Multi-fidelity falsification with knowledge-aware tabular reinforcement learning.
//!
//! An adversarial learner searches a stack of simulators of increasing fidelity for
//! trajectories that drive a system under test into failure. Each fidelity keeps
//! count-based transition and reward estimates together with KWIK known/unknown
//! flags ([`knowledge`]); an optimistic value-iteration planner ([`mdp`]) turns
//! those estimates into a greedy exploration policy; the [`fidelity`] stack moves
//! knowledge between levels; [`falsify`] drives the search and the marginal reward
//! update; [`gridworld`] is the two-fidelity puddle testbed and [`harness`] runs
//! seeded Monte Carlo experiments over it.

pub mod error;
pub mod falsify;
pub mod fidelity;
pub mod gridworld;
pub mod harness;
pub mod knowledge;
pub mod mdp;

pub use error::{Error, Result};
pub use falsify::{
    is_converged, is_plausible, Episode, FailureSet, Falsifier, FalsifyParams, KwikFalsifier, LearnerState,
    MfFalsifier, TerminalKind, Trajectory, TrajectoryStep,
};
pub use fidelity::{fidelity_check, FidelityStack, Level, Simulator, StateMapping};
pub use gridworld::{GridConfig, GridState, GridWorld, Move};
pub use harness::{ExperimentConfig, MetricsRow, Mode};
pub use knowledge::{kwik_threshold, KnowledgeStore, KwikParams, Observation, PriorSpread};
pub use mdp::{
    greedy_action, marginal, value_iterate, ActionId, PlannerConfig, QTable, StateId,
    TabularModel, Transitions, UpperBound,
};
