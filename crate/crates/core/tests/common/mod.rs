#![allow(dead_code)]

use mfrl::mdp::Outcome;
use mfrl::{ActionId, Simulator, StateId, TabularModel, Transitions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

/// A simulator backed by an explicit model.
#[derive(Clone)]
pub struct TableSim {
    pub model: TabularModel,
    pub failure: Vec<bool>,
    /// When false, `support` declines and callers must fall back to sampling.
    pub exact_support: bool,
}

impl TableSim {
    pub fn new(model: TabularModel, failure: Vec<bool>) -> Self {
        Self {
            model,
            failure,
            exact_support: true,
        }
    }
}

impl Simulator for TableSim {
    fn n_states(&self) -> usize {
        self.model.n_states()
    }

    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn is_terminal(&self, s: StateId) -> bool {
        self.model.is_terminal(s)
    }

    fn is_failure(&self, s: StateId) -> bool {
        self.failure[s.0]
    }

    fn step(&self, s: StateId, a: ActionId, rng: &mut dyn RngCore) -> mfrl::Result<(StateId, f64)> {
        let Transitions::Explicit(outcomes) = self.model.row(s, a) else {
            panic!("table simulators use explicit rows");
        };
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in outcomes {
            acc += o.prob;
            if u < acc {
                return Ok((o.next, o.reward));
            }
        }
        let last = outcomes.last().unwrap();
        Ok((last.next, last.reward))
    }

    fn support(&self, s: StateId, a: ActionId, next: StateId) -> Option<bool> {
        self.exact_support.then(|| self.model.transition(s, a, next) > 0.0)
    }

    fn true_model(&self) -> Option<TabularModel> {
        Some(self.model.clone())
    }
}

pub fn det(next: usize, reward: f64) -> Transitions {
    Transitions::Explicit(vec![Outcome {
        next: StateId(next),
        prob: 1.0,
        reward,
    }])
}

/// A random MDP with sparse explicit rows; roughly one state in eight is terminal.
pub fn random_mdp(rng: &mut impl Rng, n_states: usize, n_actions: usize) -> TabularModel {
    let mut m = TabularModel::new(n_states, n_actions);
    for s in 0..n_states {
        if s > 0 && rng.gen_bool(0.125) {
            m.set_terminal(StateId(s), true);
        }
        for a in 0..n_actions {
            let k = rng.gen_range(1..=n_states.min(4));
            let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut outcomes: Vec<Outcome> = Vec::with_capacity(k);
            for w in weights {
                let next = StateId(rng.gen_range(0..n_states));
                let reward = rng.gen_range(-10.0..10.0);
                match outcomes.iter_mut().find(|o| o.next == next) {
                    Some(o) => o.prob += w / total,
                    None => outcomes.push(Outcome {
                        next,
                        prob: w / total,
                        reward,
                    }),
                }
            }
            m.set_row(StateId(s), ActionId(a), Transitions::Explicit(outcomes));
        }
    }
    m
}

fn explicit(model: &TabularModel, s: usize, a: usize) -> Vec<(usize, f64, f64)> {
    match model.row(StateId(s), ActionId(a)) {
        Transitions::Explicit(outcomes) => outcomes.iter().map(|o| (o.next.0, o.prob, o.reward)).collect(),
        Transitions::Uniform { reward } => {
            let spread = model.spread();
            let p = 1.0 / spread.len() as f64;
            spread.iter().map(|n| (n.0, p, *reward)).collect()
        }
    }
}

/// Exact value of a deterministic policy by a dense linear solve.
pub fn policy_values(model: &TabularModel, policy: &[usize], discount: f64) -> DVector<f64> {
    let n = model.n_states();
    let mut lhs = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        if model.is_terminal(StateId(s)) {
            continue;
        }
        for (next, p, r) in explicit(model, s, policy[s]) {
            rhs[s] += p * r;
            if !model.is_terminal(StateId(next)) {
                lhs[(s, next)] -= discount * p;
            }
        }
    }
    lhs.lu().solve(&rhs).expect("I - gamma P is invertible for gamma < 1")
}

pub fn q_from_values(model: &TabularModel, v: &DVector<f64>, discount: f64) -> Vec<f64> {
    let (n, k) = (model.n_states(), model.n_actions());
    let mut q = vec![0.0; n * k];
    for s in 0..n {
        if model.is_terminal(StateId(s)) {
            continue;
        }
        for a in 0..k {
            q[s * k + a] = explicit(model, s, a)
                .into_iter()
                .map(|(next, p, r)| p * (r + discount * v[next]))
                .sum();
        }
    }
    q
}

/// Optimal Q by policy iteration with exact evaluation.
pub fn policy_iteration(model: &TabularModel, discount: f64) -> Vec<f64> {
    let (n, k) = (model.n_states(), model.n_actions());
    let mut policy = vec![0usize; n];
    loop {
        let v = policy_values(model, &policy, discount);
        let q = q_from_values(model, &v, discount);
        let mut changed = false;
        for s in 0..n {
            let row = &q[s * k..(s + 1) * k];
            let best = (0..k).fold(policy[s], |b, a| if row[a] > row[b] + 1e-12 { a } else { b });
            if best != policy[s] {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            return q;
        }
    }
}

/// Optimal state values by enumerating every deterministic policy.
pub fn brute_force_values(model: &TabularModel, discount: f64) -> Vec<f64> {
    let (n, k) = (model.n_states(), model.n_actions());
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut policy = vec![0usize; n];
    loop {
        let v = policy_values(model, &policy, discount);
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            policy[i] += 1;
            if policy[i] < k {
                break;
            }
            policy[i] = 0;
            i += 1;
        }
    }
}
