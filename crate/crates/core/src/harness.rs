//! Episode simulation, Monte Carlo aggregation and cost sweeps.
//!
//! An episode starts with a fresh planner at the domain's heuristic bounds.
//! At each decision the agent either thinks (pays `C(s, NOP)`, runs one
//! thinking cycle, then moves under the NOP dynamics) or acts (pays `C(s, a)`
//! for the planner's recommendation and moves). Episode `i` of an experiment
//! draws from a ChaCha8 stream seeded with `seed ^ i`, and episodes run in
//! parallel, so results depend only on the configuration.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{agent_step, AgentConfig, AgentError, AgentState};
use crate::brtdp::{thinking_cycle, BoundsState, DropHistory, PlannerError};
use crate::gridworld::{build_domain, heuristic_bounds, DomainConfig, GridError};
use crate::mdp::{sample_transition, BaseMdp, ValueFn};
use crate::metareasoner::Decision;

pub const DEFAULT_EPISODES: usize = 1000;
pub const DEFAULT_MAX_DECISIONS: u64 = 100_000;
pub const SWEEP_VALUES: [f64; 4] = [1.0, 5.0, 10.0, 15.0];
pub const SWEEP_FIXED_ACT: f64 = 11.0;
pub const SWEEP_FIXED_THINK: f64 = 1.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Domain(#[from] GridError),

    #[error(transparent)]
    Agent(#[from] AgentError),

    #[error(transparent)]
    Planner(#[from] PlannerError),

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error("failed to write CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn default_episodes() -> usize {
    DEFAULT_EPISODES
}

fn default_k_trials() -> usize {
    crate::brtdp::DEFAULT_TRIALS_PER_CYCLE
}

fn default_cap() -> u64 {
    DEFAULT_MAX_DECISIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub agent: AgentConfig,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_k_trials")]
    pub k_trials_per_cycle: usize,
    #[serde(default = "default_cap")]
    pub max_decisions_per_episode: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace: bool,
}

impl ExperimentConfig {
    pub fn new(domain: DomainConfig, agent: AgentConfig) -> Self {
        ExperimentConfig {
            domain,
            agent,
            episodes: DEFAULT_EPISODES,
            k_trials_per_cycle: default_k_trials(),
            max_decisions_per_episode: DEFAULT_MAX_DECISIONS,
            seed: 0,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.agent.validate()?;
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes must be at least 1".into()));
        }
        if self.k_trials_per_cycle == 0 {
            return Err(HarnessError::Config("k_trials_per_cycle must be at least 1".into()));
        }
        if self.max_decisions_per_episode == 0 {
            return Err(HarnessError::Config("max_decisions_per_episode must be at least 1".into()));
        }
        Ok(())
    }
}

/// A domain MDP with the bounds every episode's planner starts from.
#[derive(Debug, Clone)]
pub struct Environment {
    pub name: String,
    pub mdp: BaseMdp,
    pub lower: ValueFn,
    pub upper: ValueFn,
}

impl Environment {
    pub fn from_domain(cfg: &DomainConfig) -> Result<Environment> {
        let (mdp, spec) = build_domain(cfg)?;
        let (lower, upper) = heuristic_bounds(&spec, cfg);
        Ok(Environment { name: cfg.kind.to_string(), mdp, lower, upper })
    }

    pub fn fresh_planner(&self) -> Result<BoundsState> {
        Ok(BoundsState::new(&self.mdp, self.lower.clone(), self.upper.clone())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub total_cost: f64,
    pub think_count: u64,
    pub act_count: u64,
    pub reached_goal: bool,
    pub truncated: bool,
    /// Bound-monotonicity violations seen by this episode's planner.
    pub bound_violations: u64,
}

/// One decision in a traced episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub step: u64,
    pub state: usize,
    pub decision: String,
    pub action: Option<usize>,
    pub cost: f64,
    pub q_act: Option<f64>,
    pub q_nop: Option<f64>,
    pub voc: Option<f64>,
}

/// Episode knobs shared by every episode of an experiment.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSettings {
    pub k_trials: usize,
    pub max_decisions: u64,
}

impl From<&ExperimentConfig> for EpisodeSettings {
    fn from(cfg: &ExperimentConfig) -> Self {
        EpisodeSettings { k_trials: cfg.k_trials_per_cycle, max_decisions: cfg.max_decisions_per_episode }
    }
}

/// Runs one episode from a fresh planner.
pub fn run_episode(
    env: &Environment,
    agent: &AgentConfig,
    settings: EpisodeSettings,
    rng: &mut ChaCha8Rng,
    trace: Option<(usize, &mut Vec<TraceRow>)>,
) -> Result<EpisodeStats> {
    let planner = env.fresh_planner()?;
    let drops = DropHistory::new(&env.mdp);
    Ok(run_episode_from(&env.mdp, planner, drops, agent, settings, rng, trace))
}

/// Runs one episode from the given planner state and drop history.
pub fn run_episode_from(
    m: &BaseMdp,
    mut planner: BoundsState,
    mut drops: DropHistory,
    agent: &AgentConfig,
    settings: EpisodeSettings,
    rng: &mut ChaCha8Rng,
    mut trace: Option<(usize, &mut Vec<TraceRow>)>,
) -> EpisodeStats {
    let mut s = m.start();
    let mut state = AgentState::default();
    let mut total_cost = 0.0;
    let mut decisions = 0u64;
    while s != m.goal() && decisions < settings.max_decisions {
        let step = agent_step(agent, &mut state, s, m, &planner, &drops, rng);
        let (cost, next) = match step.decision {
            Decision::Think => {
                let cost = m.cost(s, m.nop());
                thinking_cycle(&mut planner, &mut drops, m, s, settings.k_trials, rng);
                (cost, sample_transition(m, s, m.nop(), rng))
            }
            Decision::Act(a) => (m.cost(s, a), sample_transition(m, s, a, rng)),
        };
        if let Some((episode, rows)) = trace.as_mut() {
            let (decision, action) = match step.decision {
                Decision::Think => ("think", None),
                Decision::Act(a) => ("act", Some(a)),
            };
            rows.push(TraceRow {
                episode: *episode,
                step: decisions,
                state: s,
                decision: decision.to_string(),
                action,
                cost,
                q_act: step.voc.and_then(|v| v.q_act),
                q_nop: step.voc.and_then(|v| v.q_nop),
                voc: step.voc.and_then(|v| v.voc),
            });
        }
        total_cost += cost;
        decisions += 1;
        s = next;
    }
    EpisodeStats {
        total_cost,
        think_count: state.thinks,
        act_count: state.acts,
        reached_goal: s == m.goal(),
        truncated: s != m.goal(),
        bound_violations: planner.monotonicity_violations(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub mean_cost: f64,
    pub stderr: f64,
    pub mean_thinks: f64,
    pub mean_acts: f64,
    pub trunc_rate: f64,
}

impl Aggregate {
    /// Summary in episode order. Standard error uses the `n - 1` sample variance.
    pub fn from_episodes(stats: &[EpisodeStats]) -> Aggregate {
        let n = stats.len();
        let nf = n as f64;
        let mean = |f: &dyn Fn(&EpisodeStats) -> f64| stats.iter().map(f).sum::<f64>() / nf;
        let mean_cost = mean(&|e| e.total_cost);
        let stderr = if n > 1 {
            let var = stats.iter().map(|e| (e.total_cost - mean_cost).powi(2)).sum::<f64>() / (nf - 1.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        Aggregate {
            episodes: n,
            mean_cost,
            stderr,
            mean_thinks: mean(&|e| e.think_count as f64),
            mean_acts: mean(&|e| e.act_count as f64),
            trunc_rate: mean(&|e| if e.truncated { 1.0 } else { 0.0 }),
        }
    }
}

/// One CSV row. Numeric fields are preformatted so output is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub domain: String,
    pub agent: String,
    pub param: String,
    pub cost_think: String,
    pub cost_act: String,
    pub episodes: usize,
    pub mean_cost: String,
    pub stderr: String,
    pub mean_thinks: String,
    pub mean_acts: String,
    pub trunc_rate: String,
    pub seed: u64,
}

pub fn fmt_num(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_cost(x: f64) -> String {
    // Costs are configuration values; keep them short.
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

impl ResultRow {
    fn new(cfg: &ExperimentConfig, param: &str, agg: &Aggregate) -> Self {
        ResultRow {
            domain: cfg.domain.kind.to_string(),
            agent: cfg.agent.label(),
            param: param.to_string(),
            cost_think: fmt_cost(cfg.domain.cost_think),
            cost_act: fmt_cost(cfg.domain.cost_act),
            episodes: agg.episodes,
            mean_cost: fmt_num(agg.mean_cost),
            stderr: fmt_num(agg.stderr),
            mean_thinks: fmt_num(agg.mean_thinks),
            mean_acts: fmt_num(agg.mean_acts),
            trunc_rate: fmt_num(agg.trunc_rate),
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub aggregate: Aggregate,
    pub row: ResultRow,
    pub episodes: Vec<EpisodeStats>,
    /// Decision log, empty unless `trace` was set.
    pub trace: Vec<TraceRow>,
}

/// Runs `cfg.episodes` episodes and aggregates them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let env = Environment::from_domain(&cfg.domain)?;
    run_experiment_in(&env, cfg, "none")
}

/// As [`run_experiment`], on a prebuilt environment; `param` fills the CSV column.
pub fn run_experiment_in(env: &Environment, cfg: &ExperimentConfig, param: &str) -> Result<ExperimentResult> {
    cfg.validate()?;
    let settings = EpisodeSettings::from(cfg);
    let outcomes: Vec<Result<(EpisodeStats, Vec<TraceRow>)>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ i as u64);
            let mut rows = Vec::new();
            let trace = if cfg.trace { Some((i, &mut rows)) } else { None };
            let stats = run_episode(env, &cfg.agent, settings, &mut rng, trace)?;
            Ok((stats, rows))
        })
        .collect();
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut trace = Vec::new();
    for outcome in outcomes {
        let (stats, rows) = outcome?;
        episodes.push(stats);
        trace.extend(rows);
    }
    let aggregate = Aggregate::from_episodes(&episodes);
    let row = ResultRow::new(cfg, param, &aggregate);
    Ok(ExperimentResult { aggregate, row, episodes, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// cost_think in {1,5,10,15}, cost_act = 11.
    CostThink,
    /// cost_act in {1,5,10,15}, cost_think = 1.
    CostAct,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CostThink => "cost_think",
            SweepAxis::CostAct => "cost_act",
        }
    }

    /// `(cost_think, cost_act)` settings along this axis.
    pub fn settings(self) -> Vec<(f64, f64)> {
        SWEEP_VALUES
            .iter()
            .map(|&v| match self {
                SweepAxis::CostThink => (v, SWEEP_FIXED_ACT),
                SweepAxis::CostAct => (SWEEP_FIXED_THINK, v),
            })
            .collect()
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cost_think" | "think" => Ok(SweepAxis::CostThink),
            "cost_act" | "act" => Ok(SweepAxis::CostAct),
            _ => Err(HarnessError::Config(format!("unknown sweep axis '{s}' (expected cost_think or cost_act)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// One row per (axis value, agent), axis-major.
    pub rows: Vec<ResultRow>,
    /// One `param=avg` row per agent: mean over the axis settings.
    pub averages: Vec<ResultRow>,
    /// Mean cost per agent averaged over the axis, in agent order.
    pub average_costs: Vec<f64>,
}

impl SweepResult {
    pub fn all_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().chain(&self.averages)
    }
}

/// Runs every agent at every setting of `axis`. The domain in `base` supplies
/// the kind and heuristic scale; its costs are overridden per setting.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, agents: &[AgentConfig]) -> Result<SweepResult> {
    let mut rows = Vec::new();
    let mut sums = vec![Aggregate { episodes: 0, mean_cost: 0.0, stderr: 0.0, mean_thinks: 0.0, mean_acts: 0.0, trunc_rate: 0.0 }; agents.len()];
    let settings = axis.settings();
    for &(think, act) in &settings {
        let mut domain = base.domain.with_costs(think, act);
        if base.domain.upper_heuristic_scale.is_none() {
            domain.upper_heuristic_scale = None;
        }
        let env = Environment::from_domain(&domain)?;
        for (k, agent) in agents.iter().enumerate() {
            let cfg = ExperimentConfig { domain, agent: *agent, trace: false, ..base.clone() };
            let res = run_experiment_in(&env, &cfg, axis.name())?;
            let acc = &mut sums[k];
            acc.episodes = res.aggregate.episodes;
            acc.mean_cost += res.aggregate.mean_cost;
            acc.stderr += res.aggregate.stderr.powi(2);
            acc.mean_thinks += res.aggregate.mean_thinks;
            acc.mean_acts += res.aggregate.mean_acts;
            acc.trunc_rate += res.aggregate.trunc_rate;
            rows.push(res.row);
        }
    }
    let k = settings.len() as f64;
    let mut averages = Vec::new();
    let mut average_costs = Vec::new();
    for (agent, acc) in agents.iter().zip(&sums) {
        let avg = Aggregate {
            episodes: acc.episodes,
            mean_cost: acc.mean_cost / k,
            // Settings are independent, so the variance of the mean of means adds.
            stderr: acc.stderr.sqrt() / k,
            mean_thinks: acc.mean_thinks / k,
            mean_acts: acc.mean_acts / k,
            trunc_rate: acc.trunc_rate / k,
        };
        let cfg = ExperimentConfig { agent: *agent, ..base.clone() };
        let mut row = ResultRow::new(&cfg, "avg", &avg);
        match axis {
            SweepAxis::CostThink => {
                row.cost_think = "avg".into();
                row.cost_act = fmt_cost(SWEEP_FIXED_ACT);
            }
            SweepAxis::CostAct => {
                row.cost_think = fmt_cost(SWEEP_FIXED_THINK);
                row.cost_act = "avg".into();
            }
        }
        averages.push(row);
        average_costs.push(avg.mean_cost);
    }
    Ok(SweepResult { rows, averages, average_costs })
}

/// Think*Act cycle counts used by default sweeps.
pub const DEFAULT_THINK_STAR_ACT_N: [u64; 6] = [1, 5, 10, 25, 50, 100];
/// Prob think probabilities used by default sweeps.
pub const DEFAULT_PROB_P: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Every agent: each Think*Act and Prob setting, then NoInfoThink,
/// Heuristic and both metareasoners.
pub fn default_agents() -> Vec<AgentConfig> {
    let mut agents: Vec<AgentConfig> = DEFAULT_THINK_STAR_ACT_N.iter().map(|&n| AgentConfig::think_star_act(n)).collect();
    agents.extend(DEFAULT_PROB_P.iter().map(|&p| AgentConfig::prob(p)));
    agents.extend([
        AgentConfig::no_info_think(),
        AgentConfig::heuristic(),
        AgentConfig::uncorr_metareasoner(),
        AgentConfig::metareasoner(),
    ]);
    agents
}

pub fn write_csv<'a, W: Write>(out: W, rows: impl IntoIterator<Item = &'a ResultRow>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<'a>(rows: impl IntoIterator<Item = &'a ResultRow>) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}
