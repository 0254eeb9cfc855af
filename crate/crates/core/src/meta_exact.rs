//! Exact meta-level MDPs for small instances.
//!
//! The deliberating solver here is value iteration over the acting problem
//! (`NOP` excluded), snapshotted every few sweeps. Each snapshot is one
//! configuration `χ`, and its greedy action map is `f(·, χ)`. The product of
//! world states and configurations is an ordinary [`BaseMdp`] that can be
//! solved exactly.

use serde::Serialize;
use thiserror::Error;

use crate::mdp::{
    almost_sure_policy, greedy_with, improper_state, policy_evaluation, validate_ssp,
    value_iteration, BaseMdp, MdpBuilder, MdpError, Policy, ValueFn, DEFAULT_TOLERANCE,
};

/// Default bound on `|S| x trace length`.
pub const DEFAULT_PRODUCT_CAP: usize = 1_000_000;

/// Cost of the self-loop `NOP` given to original states by [`construct_lollypop`].
pub const DEFAULT_LOLLYPOP_NOP_COST: f64 = 1.0;

/// Residual at which the instrumented solver halts.
pub const TRACE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("not an SSP MDP: {}", .0.join("; "))]
    NotSsp(Vec<String>),

    #[error("granularity must be at least one sweep")]
    ZeroGranularity,

    #[error(
        "product of {states} states and {configs} configurations exceeds the cap of {cap}; \
         raise the cap to enumerate this instance"
    )]
    TooLarge { states: usize, configs: usize, cap: usize },

    #[error("state {state} has no acting policy that reaches the goal almost surely")]
    NoActingPolicy { state: usize },

    #[error("final trace policy is improper at state {state}")]
    ImproperFinalPolicy { state: usize },

    #[error("trace snapshots have {got} states, MDP has {expected}")]
    TraceMismatch { expected: usize, got: usize },

    #[error("chain length {chain_len} is shorter than the {required} solver steps")]
    ChainTooShort { chain_len: usize, required: usize },

    #[error(transparent)]
    Mdp(#[from] MdpError),
}

pub type Result<T> = std::result::Result<T, MetaError>;

/// One solver configuration: a value snapshot and its greedy action map.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub values: ValueFn,
    pub policy: Policy,
}

/// The deterministic sequence of configurations the solver passes through.
/// Advancing one configuration costs one thinking step.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    snapshots: Vec<Snapshot>,
    granularity: usize,
}

impl SolverTrace {
    /// Trace from explicit value snapshots; each policy is greedy over the
    /// acting actions, ties to the lowest index.
    pub fn from_values(m: &BaseMdp, values: Vec<ValueFn>) -> Result<SolverTrace> {
        if values.is_empty() {
            return Err(MetaError::TraceMismatch { expected: m.state_count(), got: 0 });
        }
        let snapshots = values
            .into_iter()
            .map(|v| snapshot(m, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(SolverTrace { snapshots, granularity: 1 })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Number of configuration changes, `len() - 1`.
    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn policy(&self, i: usize) -> &Policy {
        &self.snapshots[i].policy
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("traces are nonempty")
    }
}

fn snapshot(m: &BaseMdp, values: ValueFn) -> Result<Snapshot> {
    if values.len() != m.state_count() {
        return Err(MetaError::TraceMismatch { expected: m.state_count(), got: values.len() });
    }
    let nop = m.nop();
    let policy = greedy_with(m, values.as_slice(), |a| a != nop);
    Ok(Snapshot { values, policy })
}

/// Runs value iteration from zero, snapshotting every `granularity` sweeps.
pub fn instrument_solver(m: &BaseMdp, granularity: usize) -> Result<SolverTrace> {
    instrument_solver_from(m, ValueFn::zeros(m.state_count()), granularity, DEFAULT_PRODUCT_CAP)
}

/// Runs Jacobi value iteration over the acting actions starting at `init`.
///
/// The first snapshot is `init` itself. After each batch of `granularity`
/// sweeps a snapshot is appended if any value moved; the run halts once a
/// batch leaves everything unchanged or its last sweep moved no value by
/// [`TRACE_TOLERANCE`] or more. States without acting actions keep their
/// initial value and have no recommendation.
pub fn instrument_solver_from(
    m: &BaseMdp,
    init: ValueFn,
    granularity: usize,
    cap: usize,
) -> Result<SolverTrace> {
    if granularity == 0 {
        return Err(MetaError::ZeroGranularity);
    }
    let report = validate_ssp(m);
    if !report.is_ssp {
        return Err(MetaError::NotSsp(report.messages));
    }
    let n = m.state_count();
    if init.len() != n {
        return Err(MetaError::TraceMismatch { expected: n, got: init.len() });
    }
    check_acting_problem(m)?;

    let goal = m.goal();
    if n > cap {
        return Err(MetaError::TooLarge { states: n, configs: 1, cap });
    }
    let mut vals = init.into_vec();
    vals[goal] = 0.0;
    let mut snapshots = vec![snapshot(m, ValueFn::from_vec(vals.clone()))?];
    let mut next = vals.clone();
    loop {
        let mut changed = false;
        let mut residual = 0.0f64;
        for _ in 0..granularity {
            residual = 0.0;
            for s in 0..n {
                if s == goal {
                    continue;
                }
                let best = m.acting_actions(s).map(|a| m.lookahead(&vals, s, a)).reduce(f64::min);
                if let Some(q) = best {
                    residual = residual.max((q - vals[s]).abs());
                    next[s] = q;
                }
            }
            changed |= next != vals;
            std::mem::swap(&mut vals, &mut next);
            next.copy_from_slice(&vals);
        }
        if !changed {
            break;
        }
        if n.saturating_mul(snapshots.len() + 1) > cap {
            return Err(MetaError::TooLarge { states: n, configs: snapshots.len() + 1, cap });
        }
        snapshots.push(snapshot(m, ValueFn::from_vec(vals.clone()))?);
        if residual < TRACE_TOLERANCE {
            break;
        }
    }

    let last = &snapshots[snapshots.len() - 1].policy;
    if let Some(state) = improper_state(m, &fill_with_nop(m, last), None) {
        return Err(MetaError::ImproperFinalPolicy { state });
    }
    Ok(SolverTrace { snapshots, granularity })
}

/// Every state with an acting action must be able to reach the goal by acting
/// alone, otherwise iteration never settles.
fn check_acting_problem(m: &BaseMdp) -> Result<()> {
    let (winning, _) = almost_sure_policy(&m.without_nop());
    for s in 0..m.state_count() {
        if s != m.goal() && !winning[s] && m.acting_actions(s).next().is_some() {
            return Err(MetaError::NoActingPolicy { state: s });
        }
    }
    Ok(())
}

/// `pi` with `NOP` wherever it has no recommendation.
fn fill_with_nop(m: &BaseMdp, pi: &Policy) -> Policy {
    let nop = m.nop();
    Policy::from_vec(
        (0..m.state_count())
            .map(|s| match pi.action(s) {
                None if s != m.goal() && m.is_enabled(s, nop) => Some(nop),
                a => a,
            })
            .collect(),
    )
}

/// Product of a base MDP with a solver trace.
///
/// State `(s, i)` has index `i * |S| + s`. The base goal paired with the first
/// configuration is the goal of the product. The other goal copies are never
/// entered (transitions into the goal are redirected) and only carry a
/// zero-cost `NOP` into it.
#[derive(Debug, Clone)]
pub struct MetaMdp {
    mdp: BaseMdp,
    base_states: usize,
    policies: Vec<Policy>,
}

impl MetaMdp {
    pub fn mdp(&self) -> &BaseMdp {
        &self.mdp
    }

    pub fn base_states(&self) -> usize {
        self.base_states
    }

    pub fn configs(&self) -> usize {
        self.policies.len()
    }

    pub fn product_size(&self) -> usize {
        self.mdp.state_count()
    }

    pub fn index(&self, s: usize, i: usize) -> usize {
        i * self.base_states + s
    }

    pub fn split(&self, idx: usize) -> (usize, usize) {
        (idx % self.base_states, idx / self.base_states)
    }

    /// `f(s, χ_i)` for the product state `idx`.
    pub fn recommendation(&self, idx: usize) -> Option<usize> {
        let (s, i) = self.split(idx);
        self.policies[i].action(s)
    }
}

/// Builds the product MDP. `NOP` moves the world by the base `NOP` dynamics and
/// advances the configuration (the last one stays put); the recommended action
/// moves the world and keeps the configuration. Costs are the base costs.
pub fn construct_meta_mdp(m: &BaseMdp, trace: &SolverTrace) -> Result<MetaMdp> {
    let n = m.state_count();
    for snap in trace.snapshots() {
        if snap.values.len() != n || snap.policy.len() != n {
            return Err(MetaError::TraceMismatch { expected: n, got: snap.values.len() });
        }
    }
    let configs = trace.len();
    let nop = m.nop();
    let goal = m.goal();
    let at = |s: usize, i: usize| i * n + s;
    let goal_idx = at(goal, 0);
    let lift = |t: usize, i: usize| if t == goal { goal_idx } else { at(t, i) };

    let mut b = MdpBuilder::new(n * configs, m.action_count(), nop, at(m.start(), 0), goal_idx);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for i in 0..configs {
        let after_think = (i + 1).min(configs - 1);
        for s in 0..n {
            if s == goal {
                b.edge(at(s, i), nop, 0.0, &[(goal_idx, 1.0)]);
                continue;
            }
            if m.is_enabled(s, nop) {
                row.clear();
                row.extend(m.outcomes(s, nop).iter().map(|&(t, p)| (lift(t, after_think), p)));
                b.edge(at(s, i), nop, m.cost(s, nop), &row);
            }
            if let Some(a) = trace.policy(i).action(s) {
                row.clear();
                row.extend(m.outcomes(s, a).iter().map(|&(t, p)| (lift(t, i), p)));
                b.edge(at(s, i), a, m.cost(s, a), &row);
            }
        }
    }
    let mdp = b.build()?;
    let policies = trace.snapshots().iter().map(|snap| snap.policy.clone()).collect();
    Ok(MetaMdp { mdp, base_states: n, policies })
}

/// Product `(state, action)` pairs carrying transition mass although the action
/// is neither `NOP` nor the recommendation.
pub fn structure_audit(mm: &MetaMdp) -> Vec<(usize, usize)> {
    let m = mm.mdp();
    let mut bad = Vec::new();
    for idx in 0..m.state_count() {
        let f = mm.recommendation(idx);
        for a in m.enabled_actions(idx) {
            if a != m.nop() && Some(a) != f {
                bad.push((idx, a));
            }
        }
    }
    bad
}

/// Solves the product exactly.
pub fn solve_meta(mm: &MetaMdp) -> Result<(ValueFn, Policy)> {
    let report = validate_ssp(mm.mdp());
    if !report.is_ssp {
        return Err(MetaError::NotSsp(report.messages));
    }
    Ok(value_iteration(mm.mdp(), DEFAULT_TOLERANCE)?)
}

/// Expected cost from the start of thinking `k` times and then following
/// `f(·, χ_k)` forever. `None` if some state reached while thinking has no
/// `NOP`; infinite if the acting policy fails from a state reached.
pub fn think_then_act_cost(m: &BaseMdp, trace: &SolverTrace, k: usize) -> Result<Option<f64>> {
    let n = m.state_count();
    let goal = m.goal();
    let nop = m.nop();
    let mut dist = vec![0.0; n];
    dist[m.start()] = 1.0;
    let mut total = 0.0;
    for _ in 0..k {
        let mut next = vec![0.0; n];
        next[goal] = dist[goal];
        for s in (0..n).filter(|&s| s != goal && dist[s] > 0.0) {
            if !m.is_enabled(s, nop) {
                return Ok(None);
            }
            total += dist[s] * m.cost(s, nop);
            for &(t, p) in m.outcomes(s, nop) {
                next[t] += dist[s] * p;
            }
        }
        dist = next;
    }
    let pi = trace.policy(k.min(trace.len() - 1));
    for s in (0..n).filter(|&s| s != goal && dist[s] > 0.0) {
        let v = match policy_evaluation(&m.with_start(s)?, pi, DEFAULT_TOLERANCE) {
            Ok(v) => v[s],
            Err(MdpError::ImproperPolicy { .. }) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
        total += dist[s] * v;
    }
    Ok(Some(total))
}

/// Prepends a chain of `chain_len + 1` states joined by zero-cost `NOP`s, the
/// last of which leads to the start of `m`, and turns `NOP` in every original
/// non-goal state into a self-loop of cost [`DEFAULT_LOLLYPOP_NOP_COST`].
///
/// `chain_len` must cover the solver's configuration changes on `m`, so that
/// walking the chain leaves the solver at its final configuration.
pub fn construct_lollypop(m: &BaseMdp, chain_len: usize) -> Result<BaseMdp> {
    construct_lollypop_with(m, chain_len, DEFAULT_LOLLYPOP_NOP_COST)
}

pub fn construct_lollypop_with(m: &BaseMdp, chain_len: usize, nop_cost: f64) -> Result<BaseMdp> {
    if !(nop_cost > 0.0) {
        return Err(MetaError::NotSsp(vec![format!("lollypop NOP cost must be positive, got {nop_cost}")]));
    }
    let required = instrument_solver(m, 1)?.steps();
    if chain_len < required {
        return Err(MetaError::ChainTooShort { chain_len, required });
    }
    let n = m.state_count();
    let nop = m.nop();
    let goal = m.goal();
    let mut b = MdpBuilder::new(n + chain_len + 1, m.action_count(), nop, n, goal);
    for s in 0..n {
        for a in m.enabled_actions(s) {
            if s != goal && a == nop {
                continue;
            }
            b.edge(s, a, m.cost(s, a), m.outcomes(s, a));
        }
        if s != goal {
            b.edge(s, nop, nop_cost, &[(s, 1.0)]);
        }
    }
    for j in 0..=chain_len {
        let next = if j == chain_len { m.start() } else { n + j + 1 };
        b.edge(n + j, nop, 0.0, &[(next, 1.0)]);
    }
    Ok(b.build()?)
}

/// Upper bound on the improvement metareasoning can deliver at the start state.
///
/// An improper heuristic policy is reported with an infinite `heuristic_cost`
/// (serialized as `null`) and no ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub heuristic_cost: f64,
    pub optimal_cost: f64,
    pub mg_ub: Option<f64>,
}

impl GapReport {
    pub fn from_costs(heuristic_cost: f64, optimal_cost: f64) -> GapReport {
        let mg_ub = (heuristic_cost.is_finite() && optimal_cost.is_finite() && optimal_cost > 0.0)
            .then(|| heuristic_cost / optimal_cost);
        GapReport { heuristic_cost, optimal_cost, mg_ub }
    }

    pub fn is_defined(&self) -> bool {
        self.mg_ub.is_some()
    }
}

/// Gap of the policy greedy on `heuristic_upper` (acting actions only)
/// against the optimal acting policy.
pub fn metareasoning_gap_ub(m: &BaseMdp, heuristic_upper: &ValueFn) -> Result<GapReport> {
    let trace = SolverTrace::from_values(m, vec![heuristic_upper.clone()])?;
    gap_for_policy(m, trace.policy(0))
}

/// Gap of an arbitrary acting policy against the optimal acting policy.
pub fn gap_for_policy(m: &BaseMdp, pi: &Policy) -> Result<GapReport> {
    let s0 = m.start();
    let heuristic_cost = match policy_evaluation(m, pi, DEFAULT_TOLERANCE) {
        Ok(v) => v[s0],
        Err(MdpError::ImproperPolicy { .. }) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };
    let (opt, _) = value_iteration(&m.without_nop(), DEFAULT_TOLERANCE)?;
    Ok(GapReport::from_costs(heuristic_cost, opt[s0]))
}

/// Summary of the exact meta-level analysis of one base MDP.
#[derive(Debug, Clone, Serialize)]
pub struct MetaReport {
    pub base_states: usize,
    pub trace_length: usize,
    pub product_size: usize,
    pub meta_value: f64,
    pub base_optimal: f64,
    pub lollypop_value: f64,
    pub lollypop_check: LollypopCheck,
    pub gap: GapReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LollypopCheck {
    Pass,
    Fail,
}

/// Tolerance of the lollypop comparison in [`meta_report`].
pub const LOLLYPOP_TOLERANCE: f64 = 1e-6;

/// Builds and solves the product for `m`, checks the lollypop reduction with
/// the shortest admissible chain, and reports the gap of the first
/// configuration's policy.
pub fn meta_report(m: &BaseMdp, granularity: usize) -> Result<MetaReport> {
    let trace = instrument_solver(m, granularity)?;
    let mm = construct_meta_mdp(m, &trace)?;
    let (v, _) = solve_meta(&mm)?;
    let meta_value = v[mm.mdp().start()];

    let (opt, _) = value_iteration(&m.without_nop(), DEFAULT_TOLERANCE)?;
    let base_optimal = opt[m.start()];

    let lolly = construct_lollypop(m, trace_steps(m)?)?;
    let lolly_trace = instrument_solver(&lolly, 1)?;
    let lolly_mm = construct_meta_mdp(&lolly, &lolly_trace)?;
    let (lv, _) = solve_meta(&lolly_mm)?;
    let lollypop_value = lv[lolly_mm.mdp().start()];
    let lollypop_check = if (lollypop_value - base_optimal).abs() <= LOLLYPOP_TOLERANCE {
        LollypopCheck::Pass
    } else {
        LollypopCheck::Fail
    };

    Ok(MetaReport {
        base_states: m.state_count(),
        trace_length: trace.len(),
        product_size: mm.product_size(),
        meta_value,
        base_optimal,
        lollypop_value,
        lollypop_check,
        gap: gap_for_policy(m, trace.policy(0))?,
    })
}

/// Configuration changes of the unit-granularity solver on `m`.
pub fn trace_steps(m: &BaseMdp) -> Result<usize> {
    Ok(instrument_solver(m, 1)?.steps())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_ssp, random_ssp_drifting, MdpDocument};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: usize = 0;
    const NOP: usize = 1;

    /// s0 -> s1 -> goal, cost `c` per hop; `NOP` stays at cost `nop_cost`.
    fn chain(c: f64, nop_cost: f64) -> BaseMdp {
        let mut b = BaseMdp::builder(3, 2, NOP, 0, 2);
        b.edge(0, A, c, &[(1, 1.0)])
            .edge(1, A, c, &[(2, 1.0)])
            .edge(0, NOP, nop_cost, &[(0, 1.0)])
            .edge(1, NOP, nop_cost, &[(1, 1.0)]);
        b.build().unwrap()
    }

    /// Two routes from s0: action 0 is cheap now but leads to a costly state,
    /// action 1 costs more now but reaches the goal directly.
    fn trap() -> BaseMdp {
        let mut b = BaseMdp::builder(3, 3, 2, 0, 2);
        b.edge(0, 0, 1.0, &[(1, 1.0)])
            .edge(0, 1, 3.0, &[(2, 1.0)])
            .edge(1, 0, 10.0, &[(2, 1.0)])
            .edge(1, 1, 10.0, &[(2, 1.0)])
            .edge(0, 2, 0.5, &[(0, 1.0)])
            .edge(1, 2, 0.5, &[(1, 1.0)]);
        b.build().unwrap()
    }

    fn zero_nop_costs(m: &BaseMdp) -> BaseMdp {
        let mut doc: MdpDocument = m.to_document();
        for (s, a, c) in &mut doc.costs {
            if *a == m.nop() && *s != m.goal() {
                *c = 0.0;
            }
        }
        BaseMdp::from_document(&doc).unwrap()
    }

    fn start_value(mm: &MetaMdp) -> f64 {
        let (v, _) = solve_meta(mm).unwrap();
        v[mm.mdp().start()]
    }

    #[test]
    fn three_state_chain_has_three_snapshots() {
        let trace = instrument_solver(&chain(1.0, 1.0), 1).unwrap();
        assert_eq!(trace.len(), 3);
        let firsts: Vec<f64> = trace.snapshots().iter().map(|s| s.values[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn coarser_granularity_merges_sweeps() {
        let trace = instrument_solver(&chain(1.0, 1.0), 2).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.last().values.as_slice(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn converged_start_gives_single_snapshot() {
        let m = chain(1.0, 1.0);
        let (v, _) = value_iteration(&m.without_nop(), 1e-12).unwrap();
        let trace = instrument_solver_from(&m, v, 1, DEFAULT_PRODUCT_CAP).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn cap_is_enforced() {
        let err = instrument_solver_from(&chain(1.0, 1.0), ValueFn::zeros(3), 1, 5).unwrap_err();
        assert!(matches!(err, MetaError::TooLarge { cap: 5, .. }), "{err}");
    }

    #[test]
    fn zero_granularity_is_rejected() {
        assert!(matches!(instrument_solver(&chain(1.0, 1.0), 0), Err(MetaError::ZeroGranularity)));
    }

    #[test]
    fn product_of_three_states_and_four_configs_has_twelve_states() {
        let m = chain(1.0, 1.0);
        let values = (0..4).map(|k| ValueFn::from_vec(vec![k as f64, 0.5 * k as f64, 0.0])).collect();
        let trace = SolverTrace::from_values(&m, values).unwrap();
        let mm = construct_meta_mdp(&m, &trace).unwrap();
        assert_eq!(mm.product_size(), 12);
        assert!(validate_ssp(mm.mdp()).is_ssp);
    }

    #[test]
    fn meta_states_offer_at_most_two_choices() {
        let m = trap();
        let trace = instrument_solver(&m, 1).unwrap();
        let mm = construct_meta_mdp(&m, &trace).unwrap();
        for idx in 0..mm.product_size() {
            let (s, _) = mm.split(idx);
            let enabled: Vec<usize> = mm.mdp().enabled_actions(idx).collect();
            if s == m.goal() {
                assert_eq!(enabled, vec![m.nop()]);
            } else {
                assert_eq!(enabled.len(), 2, "state {idx}: {enabled:?}");
                assert!(enabled.contains(&m.nop()));
            }
        }
        assert!(structure_audit(&mm).is_empty());
    }

    #[test]
    fn optimal_initial_policy_never_thinks() {
        let m = chain(2.0, 1.0);
        let trace = instrument_solver(&m, 1).unwrap();
        let mm = construct_meta_mdp(&m, &trace).unwrap();
        let (v, pi) = solve_meta(&mm).unwrap();
        assert_eq!(pi.action(mm.mdp().start()), Some(A));
        assert!((v[mm.mdp().start()] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn thinking_pays_off_when_the_first_guess_is_bad() {
        // f(., chi_0) takes the cheap first step into the 10-cost state.
        let m = trap();
        let trace = instrument_solver(&m, 1).unwrap();
        assert_eq!(trace.policy(0).action(0), Some(0));
        assert_eq!(trace.last().policy.action(0), Some(1));
        let mm = construct_meta_mdp(&m, &trace).unwrap();
        let (v, pi) = solve_meta(&mm).unwrap();
        assert_eq!(pi.action(mm.mdp().start()), Some(m.nop()));
        // One think at 0.5, then the direct route at 3.
        assert!((v[mm.mdp().start()] - 3.5).abs() < 1e-9, "{}", v[mm.mdp().start()]);
    }

    #[test]
    fn lollypop_is_ssp_and_reaches_base_optimum() {
        let m = trap();
        let steps = trace_steps(&m).unwrap();
        let lolly = construct_lollypop(&m, steps).unwrap();
        assert!(validate_ssp(&lolly).is_ssp);
        assert_eq!(lolly.state_count(), m.state_count() + steps + 1);
        let mm = construct_meta_mdp(&lolly, &instrument_solver(&lolly, 1).unwrap()).unwrap();
        assert!((start_value(&mm) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn lollypop_rejects_short_chains() {
        let m = trap();
        let steps = trace_steps(&m).unwrap();
        assert!(steps > 0);
        let err = construct_lollypop(&m, steps - 1).unwrap_err();
        assert!(matches!(err, MetaError::ChainTooShort { .. }), "{err}");
    }

    #[test]
    fn empty_chain_suffices_when_nothing_to_learn() {
        let mut b = BaseMdp::builder(2, 2, NOP, 0, 1);
        b.edge(0, A, 0.0, &[(1, 1.0)]).edge(0, NOP, 1.0, &[(0, 1.0)]);
        let m = b.build().unwrap();
        assert_eq!(trace_steps(&m).unwrap(), 0);
        let lolly = construct_lollypop(&m, 0).unwrap();
        let mm = construct_meta_mdp(&lolly, &instrument_solver(&lolly, 1).unwrap()).unwrap();
        assert_eq!(start_value(&mm), 0.0);
    }

    #[test]
    fn gap_of_optimal_heuristic_is_one() {
        let m = trap();
        let (v, _) = value_iteration(&m.without_nop(), 1e-12).unwrap();
        let gap = metareasoning_gap_ub(&m, &v).unwrap();
        assert!((gap.mg_ub.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_arithmetic() {
        let round1 = |x: f64| (x * 10.0).round() / 10.0;
        assert_eq!(round1(GapReport::from_costs(1089.0, 103.9).mg_ub.unwrap()), 10.5);
        assert_eq!(round1(GapReport::from_costs(119.4, 66.0).mg_ub.unwrap()), 1.8);
    }

    #[test]
    fn improper_heuristic_has_no_ratio() {
        // Greedy on this bound loops between s0 and s1 forever.
        let mut b = BaseMdp::builder(3, 3, 2, 0, 2);
        b.edge(0, 0, 1.0, &[(1, 1.0)])
            .edge(0, 1, 5.0, &[(2, 1.0)])
            .edge(1, 0, 1.0, &[(0, 1.0)]);
        let m = b.build().unwrap();
        let gap = metareasoning_gap_ub(&m, &ValueFn::from_vec(vec![0.0, 0.0, 0.0])).unwrap();
        assert!(gap.heuristic_cost.is_infinite());
        assert!(!gap.is_defined());
        assert_eq!(gap.optimal_cost, 5.0);
    }

    #[test]
    fn schedule_costs_on_trap() {
        let m = trap();
        let trace = instrument_solver(&m, 1).unwrap();
        assert_eq!(think_then_act_cost(&m, &trace, 0).unwrap(), Some(11.0));
        assert_eq!(think_then_act_cost(&m, &trace, 1).unwrap(), Some(3.5));
        assert_eq!(think_then_act_cost(&m, &trace, 2).unwrap(), Some(4.0));
    }

    #[test]
    fn report_for_trap() {
        let r = meta_report(&trap(), 1).unwrap();
        assert_eq!(r.product_size, 3 * r.trace_length);
        assert_eq!(r.lollypop_check, LollypopCheck::Pass);
        assert!((r.meta_value - 3.5).abs() < 1e-9);
        assert!((r.gap.mg_ub.unwrap() - 11.0 / 3.0).abs() < 1e-9);
    }

    fn small_mdp(seed: u64, n: usize, k: usize, drift: bool) -> BaseMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if drift {
            random_ssp_drifting(&mut rng, n, k)
        } else {
            random_ssp(&mut rng, n, k)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn traces_are_deterministic(seed in any::<u64>(), n in 2usize..7) {
            let m = small_mdp(seed, n, 3, false);
            prop_assert_eq!(instrument_solver(&m, 1).unwrap(), instrument_solver(&m, 1).unwrap());
        }

        #[test]
        fn final_policy_matches_value_iteration(seed in any::<u64>(), n in 2usize..7, k in 2usize..4) {
            let m = small_mdp(seed, n, k, false);
            let trace = instrument_solver(&m, 1).unwrap();
            let acting = m.without_nop();
            let (v, pi) = value_iteration(&acting, 1e-12).unwrap();
            for s in 0..n {
                let (Some(a), Some(b)) = (trace.last().policy.action(s), pi.action(s)) else {
                    prop_assert_eq!(trace.last().policy.action(s), pi.action(s));
                    continue;
                };
                let qa = acting.lookahead(v.as_slice(), s, a);
                let qb = acting.lookahead(v.as_slice(), s, b);
                prop_assert!(a == b || (qa - qb).abs() < 1e-7, "state {}: {} vs {}", s, a, b);
            }
        }

        #[test]
        fn products_are_ssp(seed in any::<u64>(), n in 2usize..7, k in 2usize..4, drift in any::<bool>()) {
            let m = small_mdp(seed, n, k, drift);
            let trace = instrument_solver(&m, 1).unwrap();
            let mm = construct_meta_mdp(&m, &trace).unwrap();
            prop_assert_eq!(mm.product_size(), n * trace.len());
            let report = validate_ssp(mm.mdp());
            prop_assert!(report.is_ssp, "{:?}", report.messages);
            prop_assert!(structure_audit(&mm).is_empty());
        }

        #[test]
        fn lollypop_meta_value_is_base_optimum(seed in any::<u64>(), n in 2usize..7, extra in 0usize..3) {
            let m = small_mdp(seed, n, 3, false);
            let lolly = construct_lollypop(&m, trace_steps(&m).unwrap() + extra).unwrap();
            prop_assert!(validate_ssp(&lolly).is_ssp);
            let mm = construct_meta_mdp(&lolly, &instrument_solver(&lolly, 1).unwrap()).unwrap();
            let (v, _) = value_iteration(&m, DEFAULT_TOLERANCE).unwrap();
            let meta = start_value(&mm);
            prop_assert!((meta - v[m.start()]).abs() < 1e-6, "{} vs {}", meta, v[m.start()]);
        }

        #[test]
        fn free_thinking_reaches_base_optimum(seed in any::<u64>(), n in 2usize..7) {
            let m = zero_nop_costs(&small_mdp(seed, n, 3, false));
            let mm = construct_meta_mdp(&m, &instrument_solver(&m, 1).unwrap()).unwrap();
            let (v, _) = value_iteration(&m.without_nop(), DEFAULT_TOLERANCE).unwrap();
            prop_assert!((start_value(&mm) - v[m.start()]).abs() < 1e-6);
        }

        #[test]
        fn meta_value_beats_every_fixed_schedule(seed in any::<u64>(), n in 2usize..7, drift in any::<bool>()) {
            let m = small_mdp(seed, n, 3, drift);
            let trace = instrument_solver(&m, 1).unwrap();
            let meta = start_value(&construct_meta_mdp(&m, &trace).unwrap());
            for k in 0..=trace.len() {
                if let Some(c) = think_then_act_cost(&m, &trace, k).unwrap() {
                    prop_assert!(meta <= c + 1e-6, "k = {}: meta {} > schedule {}", k, meta, c);
                }
            }
        }

        #[test]
        fn gap_is_at_least_one(seed in any::<u64>(), n in 2usize..7, noise in 0.0f64..5.0) {
            let m = small_mdp(seed, n, 3, false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let h: Vec<f64> = (0..n).map(|s| if s == m.goal() { 0.0 } else { rand::Rng::gen_range(&mut rng, 0.0..=noise) }).collect();
            let gap = metareasoning_gap_ub(&m, &ValueFn::from_vec(h)).unwrap();
            if let Some(r) = gap.mg_ub {
                prop_assert!(r >= 1.0 - 1e-9, "{:?}", gap);
            }
        }
    }
}
