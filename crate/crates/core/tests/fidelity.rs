mod common;

use common::{det, TableSim};
use mfrl::gridworld::{encode, sample_initial_state};
use mfrl::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kwik() -> KwikParams {
    KwikParams::new(0.25, 0.5).unwrap()
}

/// Two-action chain whose action 0 moves right with the given reward and action 1 stays.
fn chain(n: usize, reward: f64) -> TableSim {
    let mut m = TabularModel::new(n, 2);
    for s in 0..n - 1 {
        m.set_row(StateId(s), ActionId(0), det(s + 1, reward));
        m.set_row(StateId(s), ActionId(1), det(s, 0.0));
    }
    m.set_terminal(StateId(n - 1), true);
    let mut failure = vec![false; n];
    failure[n - 1] = true;
    TableSim::new(m, failure)
}

fn stack_of(sims: Vec<TableSim>, beta: f64) -> FidelityStack {
    let mut stack = FidelityStack::new(PlannerConfig::default(), PriorSpread::All);
    for sim in sims {
        let n = sim.n_states();
        stack.push_level(Box::new(sim), beta, StateMapping::identity(n), &kwik(), 50.0).unwrap();
    }
    stack
}

fn teach(stack: &mut FidelityStack, d: usize, s: usize, a: usize, next: usize, reward: f64) {
    let k = &mut stack.level_mut(d).knowledge;
    while !k.is_known(StateId(s), ActionId(a)) {
        k.observe(Observation { s: StateId(s), a: ActionId(a), next: StateId(next), reward }).unwrap();
    }
}

fn row_of(stack: &FidelityStack, d: usize, s: usize, a: usize) -> Transitions {
    stack.assemble_plan_model(d).unwrap().0.row(StateId(s), ActionId(a)).clone()
}

#[test]
fn single_level_plans_its_own_export() {
    let mut stack = stack_of(vec![chain(4, 1.0)], 1250.0);
    teach(&mut stack, 1, 0, 0, 1, 1.0);
    stack.plan(1).unwrap();
    let model = stack.level(1).knowledge.export_model(&PriorSpread::All);
    let expected = value_iterate(&model, 0.95, &QTable::zeros(4, 2, 0.95), &UpperBound::Unbounded, 1e-9, 100_000).unwrap();
    assert!(stack.level(1).q.sup_distance(&expected) < 2e-6);
    assert!(matches!(stack.assemble_plan_model(1).unwrap().1, UpperBound::Unbounded));
}

#[test]
fn higher_levels_overwrite_lower_estimates() {
    for depth in [2, 3] {
        let sims: Vec<TableSim> = (0..depth).map(|_| chain(4, 1.0)).collect();
        let mut stack = stack_of(sims, 1250.0);
        teach(&mut stack, 1, 0, 0, 1, 1.0);
        teach(&mut stack, depth, 0, 0, 2, 7.0);
        if depth == 3 {
            teach(&mut stack, 2, 0, 0, 3, 3.0);
        }
        for d in 1..=depth {
            assert_eq!(row_of(&stack, d, 0, 0), det(2, 7.0), "depth {depth}, level {d}");
        }
    }
}

#[test]
fn lower_knowledge_flows_up_only_in_fidelity() {
    let mut stack = stack_of(vec![chain(4, 1.0), chain(4, 1.0)], 1250.0);
    teach(&mut stack, 1, 0, 0, 1, 1.0);
    stack.plan_all().unwrap();
    assert!(stack.levels_in_fidelity(2).unwrap());
    assert_eq!(row_of(&stack, 2, 0, 0), det(1, 1.0));
    assert_eq!(stack.estimate_source(2, StateId(0), ActionId(0), true), 1);

    let mut tight = stack_of(vec![chain(4, 1.0), chain(4, 1.0)], 0.0);
    teach(&mut tight, 1, 0, 0, 1, 1.0);
    tight.plan_all().unwrap();
    tight.level_mut(2).q = QTable::filled(4, 2, 0.95, 5.0);
    assert!(!tight.levels_in_fidelity(2).unwrap());
    assert_eq!(row_of(&tight, 2, 0, 0), Transitions::Uniform { reward: 50.0 });
}

#[test]
fn upper_bound_comes_from_the_level_below() {
    let mut stack = stack_of(vec![chain(4, 1.0), chain(4, 1.0)], 2.0);
    stack.level_mut(1).q = QTable::filled(4, 2, 0.95, 3.0);
    stack.plan(2).unwrap();
    for (i, v) in stack.level(2).q.values().iter().enumerate() {
        let terminal = i / 2 == 3;
        assert!(if terminal { *v == 0.0 } else { (*v - 5.0).abs() < 1e-9 }, "entry {i}: {v}");
    }
}

#[test]
fn identical_levels_agree_once_known() {
    let mut stack = stack_of(vec![chain(5, 2.0), chain(5, 2.0)], 1250.0);
    for s in 0..4 {
        teach(&mut stack, 1, s, 0, s + 1, 2.0);
        teach(&mut stack, 1, s, 1, s, 0.0);
    }
    stack.plan_all().unwrap();
    stack.plan(2).unwrap();
    assert!(stack.level(1).q.sup_distance(&stack.level(2).q) < 1e-5);
    let gap = fidelity_check(&stack.level(2).q, &stack.level(1).q, &StateMapping::identity(5), 0.0);
    assert!(gap.unwrap() > -1e-5);
}

#[test]
fn warm_and_cold_plans_match() {
    let mut stack = stack_of(vec![chain(6, 1.0)], 1250.0);
    for s in 0..3 {
        teach(&mut stack, 1, s, 0, s + 1, 1.0);
    }
    stack.plan(1).unwrap();
    let warm = stack.level(1).q.clone();
    stack.level_mut(1).q = QTable::zeros(6, 2, 0.95);
    stack.plan(1).unwrap();
    assert!(warm.sup_distance(&stack.level(1).q) < 2e-6);
}

#[test]
fn default_beta_never_binds_in_the_grid_world() {
    let cfg = GridConfig::default();
    let mut stack = FidelityStack::new(PlannerConfig::default(), PriorSpread::All);
    for hf in [false, true] {
        let sim = GridWorld::new(cfg.with_puddles_modeled(hf)).unwrap();
        let r_max = sim.r_max();
        stack.push_level(Box::new(sim), 1250.0, StateMapping::identity(256), &kwik(), r_max).unwrap();
    }
    let params = FalsifyParams {
        r_inc: 5.0,
        m_known: 10,
        m_unknown: 5,
        kwik: kwik(),
        t_max: 20,
        plausibility_samples: 100,
    };
    let mut learner = MfFalsifier::new(stack, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s0 = encode(sample_initial_state(&cfg, &mut rng).unwrap(), &cfg).unwrap();
    let mut floor = f64::INFINITY;
    for e in 0..800 {
        learner.run_episode(s0, &mut rng).unwrap();
        if e % 25 == 0 {
            let UpperBound::PerPair(bound) = learner.stack().assemble_plan_model(2).unwrap().1 else {
                panic!("level 2 is bounded");
            };
            floor = bound.iter().copied().fold(floor, f64::min);
        }
    }
    assert!(floor > 1000.0, "bound floor {floor}");
}

#[test]
fn mismatched_levels_are_rejected() {
    let mut stack = stack_of(vec![chain(4, 1.0)], 1.0);
    let err = stack.push_level(Box::new(chain(5, 1.0)), 1.0, StateMapping::identity(5), &kwik(), 50.0);
    assert!(matches!(err, Err(Error::Dimension(_))));
    let err = stack.push_level(Box::new(chain(4, 1.0)), 1.0, StateMapping::identity(3), &kwik(), 50.0);
    assert!(matches!(err, Err(Error::Dimension(_))));
    let err = stack.push_level(Box::new(chain(4, 1.0)), -1.0, StateMapping::identity(4), &kwik(), 50.0);
    assert!(matches!(err, Err(Error::Parameter(_))));
}

#[test]
fn permuted_state_mapping_routes_estimates() {
    // level 2 state s corresponds to level 1 state 3 - s
    let mut low = TabularModel::new(4, 1);
    let mut high = TabularModel::new(4, 1);
    for s in 0..4 {
        low.set_row(StateId(s), ActionId(0), det(s, 0.0));
        high.set_row(StateId(s), ActionId(0), det(s, 0.0));
    }
    let mut stack = FidelityStack::new(PlannerConfig::default(), PriorSpread::All);
    stack.push_level(Box::new(TableSim::new(low, vec![false; 4])), 1250.0, StateMapping::identity(4), &kwik(), 50.0).unwrap();
    let rho = StateMapping::from_table((0..4).rev().map(StateId).collect()).unwrap();
    stack.push_level(Box::new(TableSim::new(high, vec![false; 4])), 1250.0, rho, &kwik(), 50.0).unwrap();
    teach(&mut stack, 2, 0, 0, 1, 4.0);
    // level 1 state 3 is level 2 state 0; its successor 1 maps to level 1 state 2
    assert_eq!(row_of(&stack, 1, 3, 0), det(2, 4.0));
    assert_eq!(stack.map_state(StateId(3), 1, 2), StateId(0));
}
