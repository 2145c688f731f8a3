//! Count-based learned models with KWIK known/unknown flags.
//!
//! A pair is *known* once it has been sampled `m_threshold` times, where the
//! threshold is the two-sided Hoeffding count for an `epsilon`-accurate mean at
//! confidence `1 - delta`. Unvisited pairs export as a uniform distribution over
//! the prior spread paying `r_max` on every outcome.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{ActionId, Outcome, StateId, TabularModel, Transitions};

/// `ceil(ln(2 / delta) / (2 epsilon^2))`.
pub fn kwik_threshold(epsilon: f64, delta: f64) -> Result<u32> {
    if epsilon.is_nan() || epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::Parameter(format!("epsilon {epsilon} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta {delta} outside (0, 1)")));
    }
    let m = ((2.0 / delta).ln() / (2.0 * epsilon * epsilon)).ceil();
    if m > u32::MAX as f64 {
        return Err(Error::Parameter(format!("epsilon {epsilon} needs {m} samples per pair")));
    }
    Ok((m as u32).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KwikParams {
    pub epsilon: f64,
    pub delta: f64,
    pub m_threshold: u32,
}

impl KwikParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        Ok(Self {
            epsilon,
            delta,
            m_threshold: kwik_threshold(epsilon, delta)?,
        })
    }
}

/// One sampled transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub s: StateId,
    pub a: ActionId,
    pub next: StateId,
    pub reward: f64,
}

/// Support of the optimistic prior assigned to unvisited pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PriorSpread {
    #[default]
    All,
    States(Vec<StateId>),
}

impl PriorSpread {
    fn resolve(&self, n_states: usize) -> Vec<StateId> {
        match self {
            PriorSpread::All => (0..n_states).map(StateId).collect(),
            PriorSpread::States(states) => states.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeStat {
    pub next: StateId,
    pub count: u32,
    pub reward_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeStore {
    n_states: usize,
    n_actions: usize,
    m_threshold: u32,
    r_max: f64,
    visits: Vec<u32>,
    // kept sorted by `next`
    outcomes: Vec<Vec<OutcomeStat>>,
    terminal: Vec<bool>,
}

impl KnowledgeStore {
    pub fn new(n_states: usize, n_actions: usize, kwik: &KwikParams, r_max: f64) -> Self {
        Self {
            n_states,
            n_actions,
            m_threshold: kwik.m_threshold.max(1),
            r_max,
            visits: vec![0; n_states * n_actions],
            outcomes: vec![Vec::new(); n_states * n_actions],
            terminal: vec![false; n_states],
        }
    }

    /// Marks the states the exported model treats as absorbing with zero value.
    pub fn with_terminal(mut self, terminal: Vec<bool>) -> Result<Self> {
        if terminal.len() != self.n_states {
            return Err(Error::Dimension(format!(
                "terminal mask has {} entries for {} states",
                terminal.len(),
                self.n_states
            )));
        }
        self.terminal = terminal;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn m_threshold(&self) -> u32 {
        self.m_threshold
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    fn index(&self, s: StateId, a: ActionId) -> usize {
        debug_assert!(s.0 < self.n_states && a.0 < self.n_actions);
        s.0 * self.n_actions + a.0
    }

    pub fn visit_count(&self, s: StateId, a: ActionId) -> u32 {
        self.visits[self.index(s, a)]
    }

    pub fn outcomes(&self, s: StateId, a: ActionId) -> &[OutcomeStat] {
        &self.outcomes[self.index(s, a)]
    }

    pub fn outcome_count(&self, s: StateId, a: ActionId, next: StateId) -> u32 {
        self.find(s, a, next).map_or(0, |o| o.count)
    }

    pub fn reward_mean(&self, s: StateId, a: ActionId, next: StateId) -> Option<f64> {
        self.find(s, a, next).map(|o| o.reward_mean)
    }

    fn find(&self, s: StateId, a: ActionId, next: StateId) -> Option<&OutcomeStat> {
        let row = &self.outcomes[self.index(s, a)];
        row.binary_search_by_key(&next, |o| o.next).ok().map(|i| &row[i])
    }

    pub fn is_known(&self, s: StateId, a: ActionId) -> bool {
        self.visit_count(s, a) >= self.m_threshold
    }

    /// Number of known pairs.
    pub fn known_pairs(&self) -> usize {
        self.visits.iter().filter(|&&v| v >= self.m_threshold).count()
    }

    /// Records a sample of an unknown pair. Returns whether the pair became known.
    pub fn observe(&mut self, obs: Observation) -> Result<bool> {
        if obs.s.0 >= self.n_states || obs.next.0 >= self.n_states || obs.a.0 >= self.n_actions {
            return Err(Error::Contract(format!(
                "observation ({}, {}, {}) outside a {} x {} store",
                obs.s.0, obs.a.0, obs.next.0, self.n_states, self.n_actions
            )));
        }
        if self.is_known(obs.s, obs.a) {
            return Err(Error::Contract(format!(
                "pair ({}, {}) is already known",
                obs.s.0, obs.a.0
            )));
        }
        let idx = self.index(obs.s, obs.a);
        let row = &mut self.outcomes[idx];
        match row.binary_search_by_key(&obs.next, |o| o.next) {
            Ok(i) => {
                let stat = &mut row[i];
                stat.count += 1;
                stat.reward_mean += (obs.reward - stat.reward_mean) / f64::from(stat.count);
            }
            Err(i) => row.insert(
                i,
                OutcomeStat {
                    next: obs.next,
                    count: 1,
                    reward_mean: obs.reward,
                },
            ),
        }
        self.visits[idx] += 1;
        Ok(self.visits[idx] == self.m_threshold)
    }

    /// Adds `delta` to the learned reward of an observed triple.
    pub fn shift_reward(&mut self, s: StateId, a: ActionId, next: StateId, delta: f64) -> Result<()> {
        let idx = self.index(s, a);
        let row = &mut self.outcomes[idx];
        match row.binary_search_by_key(&next, |o| o.next) {
            Ok(i) => {
                row[i].reward_mean += delta;
                Ok(())
            }
            Err(_) => Err(Error::Contract(format!(
                "triple ({}, {}, {}) has never been observed",
                s.0, a.0, next.0
            ))),
        }
    }

    /// Estimated row of one pair: normalized counts if visited, the optimistic prior otherwise.
    pub fn estimate(&self, s: StateId, a: ActionId) -> Transitions {
        let idx = self.index(s, a);
        let visits = self.visits[idx];
        if visits == 0 {
            return Transitions::Uniform { reward: self.r_max };
        }
        let total = f64::from(visits);
        Transitions::Explicit(
            self.outcomes[idx]
                .iter()
                .map(|o| Outcome {
                    next: o.next,
                    prob: f64::from(o.count) / total,
                    reward: o.reward_mean,
                })
                .collect(),
        )
    }

    pub fn export_model(&self, prior_spread: &PriorSpread) -> TabularModel {
        let mut model = TabularModel::new(self.n_states, self.n_actions);
        model.set_spread(prior_spread.resolve(self.n_states));
        for s in 0..self.n_states {
            model.set_terminal(StateId(s), self.terminal[s]);
            for a in 0..self.n_actions {
                model.set_row(StateId(s), ActionId(a), self.estimate(StateId(s), ActionId(a)));
            }
        }
        model
    }

    /// Debug snapshot of visited pairs.
    pub fn snapshot(&self) -> Snapshot {
        let mut pairs = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let idx = s * self.n_actions + a;
                if self.visits[idx] > 0 {
                    pairs.push(PairSnapshot {
                        s,
                        a,
                        visits: self.visits[idx],
                        known: self.visits[idx] >= self.m_threshold,
                        outcomes: self.outcomes[idx].clone(),
                    });
                }
            }
        }
        Snapshot {
            n_states: self.n_states,
            n_actions: self.n_actions,
            m_threshold: self.m_threshold,
            r_max: self.r_max,
            pairs,
        }
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.snapshot())
            .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub n_states: usize,
    pub n_actions: usize,
    pub m_threshold: u32,
    pub r_max: f64,
    pub pairs: Vec<PairSnapshot>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairSnapshot {
    pub s: usize,
    pub a: usize,
    pub visits: u32,
    pub known: bool,
    pub outcomes: Vec<OutcomeStat>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{value_iterate, QTable, UpperBound};
    use proptest::prelude::*;

    fn obs(s: usize, a: usize, next: usize, reward: f64) -> Observation {
        Observation { s: StateId(s), a: ActionId(a), next: StateId(next), reward }
    }

    #[test]
    fn hoeffding_counts() {
        assert_eq!(kwik_threshold(0.25, 0.5).unwrap(), 12);
        assert_eq!(kwik_threshold(0.5, 0.5).unwrap(), 3);
        assert_eq!(kwik_threshold(0.1, 0.1).unwrap(), 150);
    }

    #[test]
    fn hoeffding_rejects_bad_parameters() {
        for (e, d) in [(0.0, 0.5), (-1.0, 0.5), (0.25, 0.0), (0.25, 1.0), (f64::NAN, 0.5)] {
            assert!(matches!(kwik_threshold(e, d), Err(Error::Parameter(_))), "{e} {d}");
        }
    }

    #[test]
    fn counts_normalize_into_estimates() {
        let kwik = KwikParams::new(0.25, 0.5).unwrap();
        let mut k = KnowledgeStore::new(3, 1, &kwik, 50.0);
        for _ in 0..3 {
            k.observe(obs(0, 0, 1, 0.0)).unwrap();
        }
        k.observe(obs(0, 0, 2, 0.0)).unwrap();
        let m = k.export_model(&PriorSpread::All);
        assert_eq!(m.transition(StateId(0), ActionId(0), StateId(1)), 0.75);
        assert_eq!(m.transition(StateId(0), ActionId(0), StateId(2)), 0.25);
    }

    #[test]
    fn reward_is_running_mean() {
        let kwik = KwikParams::new(0.25, 0.5).unwrap();
        let mut k = KnowledgeStore::new(2, 1, &kwik, 50.0);
        k.observe(obs(0, 0, 1, 2.0)).unwrap();
        k.observe(obs(0, 0, 1, 4.0)).unwrap();
        assert_eq!(k.reward_mean(StateId(0), ActionId(0), StateId(1)), Some(3.0));
    }

    #[test]
    fn twelfth_sample_makes_pair_known() {
        let kwik = KwikParams::new(0.25, 0.5).unwrap();
        let mut k = KnowledgeStore::new(2, 1, &kwik, 50.0);
        for i in 1..=12 {
            assert!(!k.is_known(StateId(0), ActionId(0)));
            let became = k.observe(obs(0, 0, 1, 0.0)).unwrap();
            assert_eq!(became, i == 12);
            assert_eq!(k.is_known(StateId(0), ActionId(0)), i >= 12);
        }
        assert!(matches!(k.observe(obs(0, 0, 1, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn unvisited_pairs_are_optimistic_uniform() {
        let kwik = KwikParams::new(0.25, 0.5).unwrap();
        let k = KnowledgeStore::new(4, 2, &kwik, 50.0);
        let m = k.export_model(&PriorSpread::All);
        for n in 0..4 {
            assert_eq!(m.transition(StateId(2), ActionId(1), StateId(n)), 0.25);
            assert_eq!(m.reward(StateId(2), ActionId(1), StateId(n)), 50.0);
        }
        let q = value_iterate(&m, 0.95, &QTable::zeros(4, 2, 0.95), &UpperBound::Unbounded, 1e-6, 10_000)
            .unwrap();
        assert!(q.values().iter().all(|v| (v - 1000.0).abs() < 1e-4));
    }

    #[test]
    fn deterministic_pair_exports_one_hot() {
        let kwik = KwikParams::new(0.5, 0.5).unwrap();
        let mut k = KnowledgeStore::new(3, 1, &kwik, 50.0);
        for _ in 0..3 {
            k.observe(obs(1, 0, 2, -1.0)).unwrap();
        }
        let m = k.export_model(&PriorSpread::All);
        let row: Vec<f64> = (0..3).map(|n| m.transition(StateId(1), ActionId(0), StateId(n))).collect();
        assert_eq!(row, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn restricted_spread() {
        let kwik = KwikParams::new(0.5, 0.5).unwrap();
        let k = KnowledgeStore::new(4, 1, &kwik, 10.0);
        let m = k.export_model(&PriorSpread::States(vec![StateId(1), StateId(3)]));
        assert_eq!(m.transition(StateId(0), ActionId(0), StateId(1)), 0.5);
        assert_eq!(m.transition(StateId(0), ActionId(0), StateId(2)), 0.0);
    }

    #[test]
    fn known_boundary_is_inclusive() {
        let kwik = KwikParams::new(0.5, 0.5).unwrap();
        let mut k = KnowledgeStore::new(2, 1, &kwik, 1.0);
        assert!(!k.is_known(StateId(0), ActionId(0)));
        k.observe(obs(0, 0, 0, 0.0)).unwrap();
        k.observe(obs(0, 0, 0, 0.0)).unwrap();
        assert!(!k.is_known(StateId(0), ActionId(0)));
        k.observe(obs(0, 0, 0, 0.0)).unwrap();
        assert!(k.is_known(StateId(0), ActionId(0)));
    }

    #[test]
    fn shift_requires_observed_triple() {
        let kwik = KwikParams::new(0.5, 0.5).unwrap();
        let mut k = KnowledgeStore::new(2, 1, &kwik, 1.0);
        k.observe(obs(0, 0, 1, 10.0)).unwrap();
        k.shift_reward(StateId(0), ActionId(0), StateId(1), -5.0).unwrap();
        assert_eq!(k.reward_mean(StateId(0), ActionId(0), StateId(1)), Some(5.0));
        assert!(k.shift_reward(StateId(0), ActionId(0), StateId(0), -5.0).is_err());
    }

    #[test]
    fn snapshot_lists_visited_pairs() {
        let kwik = KwikParams::new(0.5, 0.5).unwrap();
        let mut k = KnowledgeStore::new(2, 2, &kwik, 1.0);
        k.observe(obs(1, 1, 0, 2.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.json");
        k.write_snapshot(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["pairs"].as_array().unwrap().len(), 1);
        assert_eq!(v["pairs"][0]["outcomes"][0]["reward_mean"], 2.5);
    }

    proptest! {
        #[test]
        fn counts_conserve_and_means_replay(
            log in prop::collection::vec((0usize..4, 0usize..2, 0usize..4, -10.0f64..10.0), 0..200)
        ) {
            let kwik = KwikParams::new(0.1, 0.1).unwrap();
            let mut k = KnowledgeStore::new(4, 2, &kwik, 50.0);
            let mut fed: std::collections::HashMap<(usize, usize, usize), Vec<f64>> = Default::default();
            let mut known_before = [false; 8];
            for &(s, a, n, r) in &log {
                if k.is_known(StateId(s), ActionId(a)) { continue; }
                k.observe(obs(s, a, n, r)).unwrap();
                fed.entry((s, a, n)).or_default().push(r);
                for (p, before) in known_before.iter_mut().enumerate() {
                    let now = k.is_known(StateId(p / 2), ActionId(p % 2));
                    prop_assert!(!*before || now);
                    *before = now;
                }
            }
            let model = k.export_model(&PriorSpread::All);
            for s in 0..4 {
                for a in 0..2 {
                    let total: u32 = (0..4).map(|n| k.outcome_count(StateId(s), ActionId(a), StateId(n))).sum();
                    prop_assert_eq!(total, k.visit_count(StateId(s), ActionId(a)));
                    let row: f64 = (0..4).map(|n| model.transition(StateId(s), ActionId(a), StateId(n))).sum();
                    prop_assert!((row - 1.0).abs() < 1e-12);
                }
            }
            for ((s, a, n), rewards) in fed {
                let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
                let got = k.reward_mean(StateId(s), ActionId(a), StateId(n)).unwrap();
                prop_assert!((got - mean).abs() < 1e-9);
            }
        }
    }
}
