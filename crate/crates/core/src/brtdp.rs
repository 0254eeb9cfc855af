//! Bounded RTDP with monotone lower and upper bounds.
//!
//! The planner solves the acting problem: `NOP` never appears in its action
//! choices or backups, so the bounds are bounds on the cost of acting from
//! here on. Q-bounds are one-step lookaheads over the stored state bounds.

use rand::Rng;
use thiserror::Error;

use crate::mdp::{BaseMdp, ValueFn};

pub const DEFAULT_TRIAL_LENGTH: usize = 50;
pub const DEFAULT_TRIALS_PER_CYCLE: usize = 1;

/// Slack for the runtime monotonicity and bound-order checks.
pub const BOUND_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("bounds cross at state {state}: lower {lower} > upper {upper}")]
    CrossedBounds { state: usize, lower: f64, upper: f64 },

    #[error("bounds at the goal must be 0, got lower {lower}, upper {upper}")]
    NonzeroGoal { lower: f64, upper: f64 },

    #[error("bound vectors have {got} entries, MDP has {expected} states")]
    SizeMismatch { expected: usize, got: usize },

    #[error("action {action} is not an enabled acting action in state {state}")]
    DisabledAction { state: usize, action: usize },
}

pub type Result<T> = std::result::Result<T, PlannerError>;

/// Lower/upper value bounds plus bookkeeping. This is the planner's whole
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsState {
    lower: ValueFn,
    upper: ValueFn,
    trial_count: u64,
    touched: Vec<bool>,
    violations: u64,
}

/// Checks the bound contract and returns a fresh planner.
pub fn init_planner(m: &BaseMdp, lower: ValueFn, upper: ValueFn) -> Result<BoundsState> {
    BoundsState::new(m, lower, upper)
}

impl BoundsState {
    pub fn new(m: &BaseMdp, lower: ValueFn, upper: ValueFn) -> Result<BoundsState> {
        let n = m.state_count();
        for len in [lower.len(), upper.len()] {
            if len != n {
                return Err(PlannerError::SizeMismatch { expected: n, got: len });
            }
        }
        let g = m.goal();
        if lower[g] != 0.0 || upper[g] != 0.0 {
            return Err(PlannerError::NonzeroGoal { lower: lower[g], upper: upper[g] });
        }
        for s in 0..n {
            if !(lower[s] <= upper[s] + BOUND_EPS) {
                return Err(PlannerError::CrossedBounds { state: s, lower: lower[s], upper: upper[s] });
            }
        }
        Ok(BoundsState { lower, upper, trial_count: 0, touched: vec![false; n], violations: 0 })
    }

    pub fn lower(&self) -> &ValueFn {
        &self.lower
    }

    pub fn upper(&self) -> &ValueFn {
        &self.upper
    }

    pub fn trial_count(&self) -> u64 {
        self.trial_count
    }

    pub fn is_touched(&self, s: usize) -> bool {
        self.touched[s]
    }

    pub fn touched_count(&self) -> usize {
        self.touched.iter().filter(|t| **t).count()
    }

    /// Backups so far that raised an upper bound or lowered a lower bound by
    /// more than [`BOUND_EPS`]. Zero under monotone initialization.
    pub fn monotonicity_violations(&self) -> u64 {
        self.violations
    }

    pub fn gap(&self, s: usize) -> f64 {
        self.upper[s] - self.lower[s]
    }

    /// Bellman backup of both bounds at `s` over acting actions.
    pub fn backup(&mut self, m: &BaseMdp, s: usize) {
        if s == m.goal() {
            return;
        }
        let mut best_lo = f64::INFINITY;
        let mut best_hi = f64::INFINITY;
        let mut any = false;
        for a in m.acting_actions(s) {
            any = true;
            best_lo = best_lo.min(m.lookahead(self.lower.as_slice(), s, a));
            best_hi = best_hi.min(m.lookahead(self.upper.as_slice(), s, a));
        }
        if !any {
            return;
        }
        if best_hi > self.upper[s] + BOUND_EPS || best_lo < self.lower[s] - BOUND_EPS {
            self.violations += 1;
        }
        self.upper.as_mut_slice()[s] = best_hi;
        self.lower.as_mut_slice()[s] = best_lo;
        self.touched[s] = true;
    }
}

#[inline]
fn argmin_acting(m: &BaseMdp, values: &[f64], s: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for a in m.acting_actions(s) {
        let q = m.lookahead(values, s, a);
        if best.map_or(true, |(_, b)| q < b) {
            best = Some((a, q));
        }
    }
    best
}

/// Successor of `(s, a)` drawn with weight `T(s,a,s') * gap(s')`, uniform over
/// the support when every gap is zero.
fn sample_by_gap<R: Rng + ?Sized>(b: &BoundsState, m: &BaseMdp, s: usize, a: usize, rng: &mut R) -> usize {
    let outcomes = m.outcomes(s, a);
    let total: f64 = outcomes.iter().map(|&(t, p)| p * b.gap(t).max(0.0)).sum();
    if !(total > 0.0) {
        return outcomes[rng.gen_range(0..outcomes.len())].0;
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &(t, p) in outcomes {
        acc += p * b.gap(t).max(0.0);
        if u < acc {
            return t;
        }
    }
    outcomes
        .iter()
        .rev()
        .find(|&&(t, _)| b.gap(t) > 0.0)
        .map_or(outcomes[outcomes.len() - 1].0, |&(t, _)| t)
}

/// One BRTDP trial of at most `max_len` steps from `s_start`, backing up
/// both bounds at the visited states in reverse order.
pub fn run_trial<R: Rng + ?Sized>(b: &mut BoundsState, m: &BaseMdp, s_start: usize, max_len: usize, rng: &mut R) {
    let mut visited = Vec::with_capacity(max_len);
    let mut s = s_start;
    for _ in 0..max_len {
        if s == m.goal() {
            break;
        }
        let Some((a, _)) = argmin_acting(m, b.lower.as_slice(), s) else {
            break;
        };
        visited.push(s);
        s = sample_by_gap(b, m, s, a, rng);
    }
    for &s in visited.iter().rev() {
        b.backup(m, s);
    }
    b.trial_count += 1;
}

/// Most recent per-action drop in the upper Q-bound, per state.
#[derive(Debug, Clone, PartialEq)]
pub struct DropHistory {
    action_count: usize,
    last_drop: Vec<Option<f64>>,
    has_record: Vec<bool>,
}

impl DropHistory {
    pub fn new(m: &BaseMdp) -> Self {
        DropHistory {
            action_count: m.action_count(),
            last_drop: vec![None; m.state_count() * m.action_count()],
            has_record: vec![false; m.state_count()],
        }
    }

    pub fn drop(&self, s: usize, a: usize) -> Option<f64> {
        self.last_drop[s * self.action_count + a]
    }

    pub fn has_record(&self, s: usize) -> bool {
        self.has_record[s]
    }

    /// Stores a drop; negative values (float noise) are clamped to zero.
    pub fn record(&mut self, s: usize, a: usize, drop: f64) {
        self.last_drop[s * self.action_count + a] = Some(drop.max(0.0));
        self.has_record[s] = true;
    }
}

/// Upper Q-bounds of every acting action at each listed state.
fn snapshot(b: &BoundsState, m: &BaseMdp, states: &[usize]) -> Vec<(usize, Vec<(usize, f64)>)> {
    states
        .iter()
        .map(|&s| {
            let qs = m.acting_actions(s).map(|a| (a, m.lookahead(b.upper.as_slice(), s, a))).collect();
            (s, qs)
        })
        .collect()
}

/// `s` followed by its distinct NOP-successors.
pub fn observed_states(m: &BaseMdp, s: usize) -> Vec<usize> {
    let mut states = vec![s];
    for &(t, _) in m.outcomes(s, m.nop()) {
        if !states.contains(&t) {
            states.push(t);
        }
    }
    states
}

/// Runs `k_trials` trials from `s` and records the resulting upper Q-bound
/// drops at `s` and at its NOP-successors.
pub fn thinking_cycle<R: Rng + ?Sized>(
    b: &mut BoundsState,
    d: &mut DropHistory,
    m: &BaseMdp,
    s: usize,
    k_trials: usize,
    rng: &mut R,
) {
    let states = observed_states(m, s);
    let before = snapshot(b, m, &states);
    for _ in 0..k_trials.max(1) {
        run_trial(b, m, s, DEFAULT_TRIAL_LENGTH, rng);
    }
    for (t, qs) in before {
        for (a, q_before) in qs {
            let q_after = m.lookahead(b.upper.as_slice(), t, a);
            d.record(t, a, q_before - q_after);
        }
    }
}

/// The planner's recommendation: greedy on the upper bound over acting
/// actions, ties to the lowest index. `None` at the goal or when nothing
/// but `NOP` is enabled.
pub fn recommended_action(b: &BoundsState, m: &BaseMdp, s: usize) -> Option<usize> {
    if s == m.goal() {
        return None;
    }
    argmin_acting(m, b.upper.as_slice(), s).map(|(a, _)| a)
}

fn check_acting(m: &BaseMdp, s: usize, a: usize) -> Result<()> {
    if s >= m.state_count() || a >= m.action_count() || a == m.nop() || !m.is_enabled(s, a) {
        return Err(PlannerError::DisabledAction { state: s, action: a });
    }
    Ok(())
}

/// Upper Q-bound `C(s,a) + sum T(s,a,s') upper(s')`.
pub fn q_upper(b: &BoundsState, m: &BaseMdp, s: usize, a: usize) -> Result<f64> {
    check_acting(m, s, a)?;
    Ok(m.lookahead(b.upper.as_slice(), s, a))
}

/// Lower Q-bound `C(s,a) + sum T(s,a,s') lower(s')`.
pub fn q_lower(b: &BoundsState, m: &BaseMdp, s: usize, a: usize) -> Result<f64> {
    check_acting(m, s, a)?;
    Ok(m.lookahead(b.lower.as_slice(), s, a))
}

/// Non-goal states where `upper` is not a monotone upper bound for the acting
/// problem: `upper(s) < min_a Q(s,a) - eps`.
pub fn monotone_violations(m: &BaseMdp, upper: &ValueFn, eps: f64) -> Vec<usize> {
    (0..m.state_count())
        .filter(|&s| s != m.goal())
        .filter(|&s| match argmin_acting(m, upper.as_slice(), s) {
            Some((_, q)) => q > upper[s] + eps,
            None => false,
        })
        .collect()
}
