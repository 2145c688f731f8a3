//! Seeded Monte Carlo experiments on the puddle world.
//!
//! A trial fixes one initial state and runs `iterations` search episodes from it,
//! recording cumulative sample and failure counts after each. Trials are
//! independent, so sweeps fan them out over a thread pool and write results in a
//! fixed order.

mod config;
pub mod format;
mod metrics;
mod plots;
mod probe;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{ExperimentConfig, KwikConfig, Mode, SwitchingConfig};
pub use metrics::{
    aggregate, aggregate_rows, ratio, read_trial_csv, trial_files, write_aggregate_csv,
    write_trial_csv, AggregateRow, MetricsRow, AGGREGATE_HEADER, TRIAL_HEADER,
};
pub use plots::write_plot_scripts;
pub use probe::{policy_value, OptimalityProbe, OPTIMALITY_TOLERANCE};

use crate::error::{Error, Result};
use crate::falsify::{FailureSet, Falsifier, FalsifyParams, KwikFalsifier, MfFalsifier};
use crate::fidelity::{FidelityStack, Simulator, StateMapping};
use crate::gridworld::{encode, sample_initial_state, GridWorld};
use crate::knowledge::PriorSpread;
use crate::mdp::{PlannerConfig, StateId};

const STREAM_INITIAL: u64 = 0x1;
const STREAM_LEARNER: u64 = 0x2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` with splitmix64.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

fn mode_tag(mode: Mode) -> u64 {
    match mode {
        Mode::Sf => 0,
        Mode::Mf => 1,
    }
}

/// The trial's initial state. It depends only on the base seed and trial
/// index, so every mode and `r_inc` starts trial `t` from the same state.
pub fn initial_state(cfg: &ExperimentConfig, trial: usize) -> Result<StateId> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.base_seed, &[STREAM_INITIAL, trial as u64]));
    let grid = cfg.grid.with_puddles_modeled(true);
    encode(sample_initial_state(&grid, &mut rng)?, &grid)
}

fn learner_rng(cfg: &ExperimentConfig, mode: Mode, r_inc_index: usize, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.base_seed,
        &[STREAM_LEARNER, mode_tag(mode), r_inc_index as u64, trial as u64],
    ))
}

fn falsify_params(cfg: &ExperimentConfig, r_inc: f64) -> Result<FalsifyParams> {
    Ok(FalsifyParams {
        r_inc,
        m_known: cfg.switching.m_known,
        m_unknown: cfg.switching.m_unknown,
        kwik: cfg.kwik_params()?,
        t_max: cfg.t_max,
        plausibility_samples: cfg.plausibility_samples,
    })
}

/// The high-fidelity grid world and, for `Mf`, its low-fidelity counterpart below it.
pub fn build_learner(cfg: &ExperimentConfig, mode: Mode, r_inc: f64) -> Result<Box<dyn Falsifier + Send>> {
    cfg.validate()?;
    let params = falsify_params(cfg, r_inc)?;
    let planner = PlannerConfig {
        discount: cfg.discount,
        ..PlannerConfig::default()
    };
    let high = GridWorld::new(cfg.grid.with_puddles_modeled(true))?;
    match mode {
        Mode::Sf => {
            let r_max = high.r_max();
            Ok(Box::new(KwikFalsifier::new(
                Box::new(high),
                params,
                planner,
                PriorSpread::All,
                r_max,
            )?))
        }
        Mode::Mf => {
            let low = GridWorld::new(cfg.grid.with_puddles_modeled(false))?;
            let r_max = high.r_max().max(low.r_max());
            let n = high.n_states();
            let mut stack = FidelityStack::new(planner, PriorSpread::All);
            stack.push_level(Box::new(low), cfg.beta, StateMapping::identity(n), &params.kwik, r_max)?;
            stack.push_level(Box::new(high), cfg.beta, StateMapping::identity(n), &params.kwik, r_max)?;
            Ok(Box::new(MfFalsifier::new(stack, params)?))
        }
    }
}

/// Rows of one trial plus what the optimality probe saw.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub mode: Mode,
    pub r_inc: f64,
    pub trial: usize,
    pub initial_state: StateId,
    pub rows: Vec<MetricsRow>,
    /// First iteration whose greedy top-level policy was optimal in the
    /// high-fidelity world; `None` if never, or if probing was off.
    pub first_optimal_iteration: Option<usize>,
}

/// Runs trial `trial` for `cfg.r_inc_values[r_inc_index]` in `mode`.
pub fn run_trial_detailed(
    cfg: &ExperimentConfig,
    mode: Mode,
    r_inc_index: usize,
    trial: usize,
    probe: bool,
) -> Result<TrialResult> {
    let r_inc = *cfg
        .r_inc_values
        .get(r_inc_index)
        .ok_or_else(|| Error::Config(format!("r_inc index {r_inc_index} out of range")))?;
    let mut learner = build_learner(cfg, mode, r_inc)?;
    let s0 = initial_state(cfg, trial)?;
    let mut rng = learner_rng(cfg, mode, r_inc_index, trial);
    let mut probe = if probe {
        let high = GridWorld::new(cfg.grid.with_puddles_modeled(true))?;
        let model = high
            .true_model()
            .ok_or_else(|| Error::ModelInvariant("grid world has no explicit model".into()))?;
        Some(OptimalityProbe::new(model, s0, cfg.discount)?)
    } else {
        None
    };

    let depth = learner.depth();
    let mut failures = FailureSet::new();
    let mut hf_failures = 0u64;
    let mut rows = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let episode = learner.run_episode(s0, &mut rng)?;
        let f = episode.trajectory;
        if f.is_failure() && !failures.contains(&f) && learner.plausible(&f, &mut rng)? {
            let at_top = f.final_fidelity() == Some(depth);
            if failures.insert(f)? && at_top {
                hf_failures += 1;
            }
        }
        if let Some(p) = probe.as_mut() {
            let (q, version) = learner.top_q();
            p.observe(iteration, q, version)?;
        }
        rows.push(MetricsRow {
            trial,
            iteration,
            r_inc,
            mode,
            hf_samples_cum: learner.samples(depth),
            lf_samples_cum: (1..depth).map(|d| learner.samples(d)).sum(),
            failures_cum: failures.len() as u64,
            hf_failures_cum: hf_failures,
            current_fidelity: learner.current_fidelity(),
            converged_episode: episode.converged,
        });
    }
    Ok(TrialResult {
        mode,
        r_inc,
        trial,
        initial_state: s0,
        rows,
        first_optimal_iteration: probe.and_then(|p| p.first_optimal()),
    })
}

/// Index of `r_inc` in `cfg.r_inc_values`, or the index it takes once appended.
fn r_inc_slot(cfg: &mut ExperimentConfig, r_inc: f64) -> usize {
    match cfg.r_inc_values.iter().position(|&v| v == r_inc) {
        Some(i) => i,
        None => {
            cfg.r_inc_values.push(r_inc);
            cfg.r_inc_values.len() - 1
        }
    }
}

/// One trial in `cfg.mode` with the given `r_inc`.
pub fn run_trial(cfg: &ExperimentConfig, r_inc: f64, trial_index: usize) -> Result<Vec<MetricsRow>> {
    let mut cfg = cfg.clone();
    let slot = r_inc_slot(&mut cfg, r_inc);
    Ok(run_trial_detailed(&cfg, cfg.mode, slot, trial_index, false)?.rows)
}

/// What to run: modes × `r_inc` indices × all trials.
#[derive(Clone, Debug)]
pub struct Plan {
    pub modes: Vec<Mode>,
    pub r_inc_indices: Vec<usize>,
    pub probe: bool,
}

impl Plan {
    pub fn sweep(cfg: &ExperimentConfig) -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            r_inc_indices: (0..cfg.r_inc_values.len()).collect(),
            probe: false,
        }
    }

    /// `cfg.mode` only, optionally restricted to one `r_inc` value (appended to
    /// `cfg.r_inc_values` if absent).
    pub fn single_mode(cfg: &mut ExperimentConfig, r_inc: Option<f64>) -> Self {
        let r_inc_indices = match r_inc {
            Some(v) => vec![r_inc_slot(cfg, v)],
            None => (0..cfg.r_inc_values.len()).collect(),
        };
        Self {
            modes: vec![cfg.mode],
            r_inc_indices,
            probe: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub trial_files: Vec<PathBuf>,
    pub aggregate_file: PathBuf,
    pub plot_scripts: Vec<PathBuf>,
    pub aggregate: Vec<AggregateRow>,
    pub trials: Vec<TrialResult>,
}

pub fn trial_file_name(mode: Mode, r_inc_index: usize, trial: usize) -> String {
    format!("{mode}_rinc{r_inc_index}_trial{trial:03}.csv")
}

fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_check");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Runs `plan`, then writes `trials/*.csv`, `aggregate.csv` and gnuplot scripts
/// under `cfg.out_dir`.
pub fn run_plan(cfg: &ExperimentConfig, plan: &Plan) -> Result<Report> {
    cfg.validate()?;
    if let Some(&i) = plan.r_inc_indices.iter().find(|&&i| i >= cfg.r_inc_values.len()) {
        return Err(Error::Config(format!("r_inc index {i} out of range")));
    }
    let trials_dir = cfg.out_dir.join("trials");
    ensure_writable(&trials_dir)?;

    let jobs: Vec<(Mode, usize, usize)> = plan
        .modes
        .iter()
        .flat_map(|&m| {
            plan.r_inc_indices
                .iter()
                .flat_map(move |&r| (0..cfg.trials).map(move |t| (m, r, t)))
        })
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(mode, r, t)| run_trial_detailed(cfg, mode, r, t, plan.probe))
        .collect::<Result<_>>()?;

    let mut trial_files = Vec::with_capacity(results.len());
    for (&(mode, r, t), result) in jobs.iter().zip(&results) {
        let path = trials_dir.join(trial_file_name(mode, r, t));
        write_trial_csv(&path, &result.rows)?;
        trial_files.push(path);
    }
    let aggregate = aggregate_rows(results.iter().flat_map(|r| &r.rows));
    let aggregate_file = cfg.out_dir.join("aggregate.csv");
    write_aggregate_csv(&aggregate_file, &aggregate)?;
    let labels: Vec<String> = plan.r_inc_indices.iter().map(|&i| format::g6(cfg.r_inc_values[i])).collect();
    let plot_scripts = write_plot_scripts(&cfg.out_dir, &labels)?;
    Ok(Report {
        trial_files,
        aggregate_file,
        plot_scripts,
        aggregate,
        trials: results,
    })
}

/// Both modes, every `r_inc` value, every trial.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Report> {
    run_plan(cfg, &Plan::sweep(cfg))
}
