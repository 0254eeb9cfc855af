//! Tabular stochastic shortest path (SSP) MDPs.
//!
//! A [`BaseMdp`] stores sparse transition lists indexed by `(state, action)`
//! and a cost per `(state, action)`. One action is designated as `NOP`, the
//! action an agent takes while it thinks. Everything in this crate is built on
//! the solvers here: value iteration, policy evaluation, SSP validation and
//! transition sampling.

use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default Bellman residual for the exact solvers.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Default cap on solver sweeps.
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;

const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("malformed MDP: {}", .0.join("; "))]
    Structural(Vec<String>),

    #[error("action {action} is not enabled in state {state}")]
    DisabledAction { state: usize, action: usize },

    #[error("no convergence after {sweeps} sweeps (last residual {residual:e}); input is probably not an SSP MDP")]
    Divergence { sweeps: usize, residual: f64 },

    #[error("improper policy: state {state} does not reach the goal with probability 1")]
    ImproperPolicy { state: usize },

    #[error("expected {expected} entries, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("invalid MDP document: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MdpError>;

/// An SSP MDP `<S, A, T, C, s0, sg>` with a designated `NOP` action.
///
/// An action is *enabled* in a state iff its transition list there is
/// nonempty. The goal may either have no enabled actions or only zero-cost
/// self-loops; solvers pin its value to zero either way.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMdp {
    state_count: usize,
    action_count: usize,
    nop_action: usize,
    start_state: usize,
    goal_state: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    costs: Vec<f64>,
}

impl BaseMdp {
    pub fn builder(
        state_count: usize,
        action_count: usize,
        nop_action: usize,
        start_state: usize,
        goal_state: usize,
    ) -> MdpBuilder {
        MdpBuilder::new(state_count, action_count, nop_action, start_state, goal_state)
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn nop(&self) -> usize {
        self.nop_action
    }

    pub fn start(&self) -> usize {
        self.start_state
    }

    pub fn goal(&self) -> usize {
        self.goal_state
    }

    #[inline]
    pub fn outcomes(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.action_count + a]
    }

    #[inline]
    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.costs[s * self.action_count + a]
    }

    #[inline]
    pub fn is_enabled(&self, s: usize, a: usize) -> bool {
        !self.outcomes(s, a).is_empty()
    }

    pub fn enabled_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.action_count).filter(move |&a| self.is_enabled(s, a))
    }

    /// Enabled actions other than `NOP`.
    pub fn acting_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        let nop = self.nop_action;
        self.enabled_actions(s).filter(move |&a| a != nop)
    }

    /// One-step lookahead `C(s,a) + sum T(s,a,s') v(s')` without the
    /// enabled-action check.
    #[inline]
    pub(crate) fn lookahead(&self, values: &[f64], s: usize, a: usize) -> f64 {
        let mut q = self.cost(s, a);
        for &(next, p) in self.outcomes(s, a) {
            q += p * values[next];
        }
        q
    }

    /// Copy of this MDP in which `NOP` is disabled everywhere except at the
    /// goal. This is the acting problem the planner's recommendations live in.
    pub fn without_nop(&self) -> BaseMdp {
        let mut out = self.clone();
        for s in 0..self.state_count {
            if s != self.goal_state {
                out.transitions[s * self.action_count + self.nop_action].clear();
                out.costs[s * self.action_count + self.nop_action] = 0.0;
            }
        }
        out
    }

    /// Same dynamics with every cost multiplied by `factor`.
    pub fn scale_costs(&self, factor: f64) -> BaseMdp {
        let mut out = self.clone();
        for c in &mut out.costs {
            *c *= factor;
        }
        out
    }

    /// Same dynamics with a different start state.
    pub fn with_start(&self, start: usize) -> Result<BaseMdp> {
        if start >= self.state_count {
            return Err(MdpError::Structural(vec![format!(
                "start state {start} out of range (|S| = {})",
                self.state_count
            )]));
        }
        let mut out = self.clone();
        out.start_state = start;
        Ok(out)
    }

    pub fn to_document(&self) -> MdpDocument {
        let mut transitions = Vec::new();
        let mut costs = Vec::new();
        for s in 0..self.state_count {
            for a in 0..self.action_count {
                for &(next, p) in self.outcomes(s, a) {
                    transitions.push((s, a, next, p));
                }
                let c = self.cost(s, a);
                if c != 0.0 || self.is_enabled(s, a) {
                    costs.push((s, a, c));
                }
            }
        }
        MdpDocument {
            states: self.state_count,
            actions: self.action_count,
            nop: self.nop_action,
            start: self.start_state,
            goal: self.goal_state,
            transitions,
            costs,
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<BaseMdp> {
        let mut b = MdpBuilder::new(doc.states, doc.actions, doc.nop, doc.start, doc.goal);
        for &(s, a, next, p) in &doc.transitions {
            b.transition(s, a, next, p);
        }
        for &(s, a, c) in &doc.costs {
            b.cost(s, a, c);
        }
        b.build()
    }

    pub fn from_json(text: &str) -> Result<BaseMdp> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        BaseMdp::from_document(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP documents always serialize")
    }
}

/// Wire format: `{states, actions, nop, start, goal, transitions: [[s,a,s',p],...], costs: [[s,a,c],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub states: usize,
    pub actions: usize,
    pub nop: usize,
    pub start: usize,
    pub goal: usize,
    pub transitions: Vec<(usize, usize, usize, f64)>,
    pub costs: Vec<(usize, usize, f64)>,
}

/// Accumulates transitions and costs, then checks index ranges in
/// [`MdpBuilder::build`]. Probability normalization is left to
/// [`validate_ssp`] so that malformed-but-indexable inputs can be diagnosed.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    state_count: usize,
    action_count: usize,
    nop_action: usize,
    start_state: usize,
    goal_state: usize,
    transitions: Vec<(usize, usize, usize, f64)>,
    costs: Vec<(usize, usize, f64)>,
}

impl MdpBuilder {
    pub fn new(
        state_count: usize,
        action_count: usize,
        nop_action: usize,
        start_state: usize,
        goal_state: usize,
    ) -> Self {
        MdpBuilder {
            state_count,
            action_count,
            nop_action,
            start_state,
            goal_state,
            transitions: Vec::new(),
            costs: Vec::new(),
        }
    }

    /// Adds probability mass `p` for `s --a--> next`. Zero-probability edges are dropped.
    pub fn transition(&mut self, s: usize, a: usize, next: usize, p: f64) -> &mut Self {
        if p != 0.0 {
            self.transitions.push((s, a, next, p));
        }
        self
    }

    pub fn cost(&mut self, s: usize, a: usize, c: f64) -> &mut Self {
        self.costs.push((s, a, c));
        self
    }

    /// Sets the cost and the full successor distribution of `(s, a)`.
    pub fn edge(&mut self, s: usize, a: usize, cost: f64, outcomes: &[(usize, f64)]) -> &mut Self {
        self.cost(s, a, cost);
        for &(next, p) in outcomes {
            self.transition(s, a, next, p);
        }
        self
    }

    pub fn build(&self) -> Result<BaseMdp> {
        let (ns, na) = (self.state_count, self.action_count);
        let mut errors = Vec::new();
        if ns == 0 {
            errors.push("state count must be positive".to_string());
        }
        if na == 0 {
            errors.push("action count must be positive".to_string());
        }
        if self.nop_action >= na {
            errors.push(format!("nop action {} out of range (|A| = {na})", self.nop_action));
        }
        if self.start_state >= ns {
            errors.push(format!("start state {} out of range (|S| = {ns})", self.start_state));
        }
        if self.goal_state >= ns {
            errors.push(format!("goal state {} out of range (|S| = {ns})", self.goal_state));
        }
        for (i, &(s, a, next, p)) in self.transitions.iter().enumerate() {
            if s >= ns || a >= na || next >= ns {
                errors.push(format!("transition #{i} [{s},{a},{next},{p}] has an index out of range"));
            }
        }
        for (i, &(s, a, c)) in self.costs.iter().enumerate() {
            if s >= ns || a >= na {
                errors.push(format!("cost #{i} [{s},{a},{c}] has an index out of range"));
            }
        }
        if !errors.is_empty() {
            return Err(MdpError::Structural(errors));
        }

        let mut transitions: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ns * na];
        for &(s, a, next, p) in &self.transitions {
            let list = &mut transitions[s * na + a];
            match list.iter_mut().find(|(n, _)| *n == next) {
                Some(entry) => entry.1 += p,
                None => list.push((next, p)),
            }
        }
        let mut costs = vec![0.0; ns * na];
        for &(s, a, c) in &self.costs {
            costs[s * na + a] = c;
        }
        Ok(BaseMdp {
            state_count: ns,
            action_count: na,
            nop_action: self.nop_action,
            start_state: self.start_state,
            goal_state: self.goal_state,
            transitions,
            costs,
        })
    }
}

/// Cost-to-go per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFn {
    values: Vec<f64>,
}

impl ValueFn {
    pub fn zeros(n: usize) -> Self {
        ValueFn { values: vec![0.0; n] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ValueFn { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Sup-norm distance; infinite entries compare equal to each other.
    pub fn max_abs_diff(&self, other: &ValueFn) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for ValueFn {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.values[s]
    }
}

/// A deterministic Markovian policy. `None` at the goal and at states with
/// nothing enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    action_for: Vec<Option<usize>>,
}

impl Policy {
    pub fn from_vec(action_for: Vec<Option<usize>>) -> Self {
        Policy { action_for }
    }

    pub fn action(&self, s: usize) -> Option<usize> {
        self.action_for[s]
    }

    pub fn len(&self) -> usize {
        self.action_for.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_for.is_empty()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.action_for
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub is_ssp: bool,
    pub proper_policy_found: bool,
    pub messages: Vec<String>,
}

/// Checks the SSP conditions: normalized distributions, an absorbing
/// zero-cost goal, an enabled action everywhere else, nonnegative costs and
/// a complete proper policy.
pub fn validate_ssp(m: &BaseMdp) -> ValidationReport {
    const MAX_LISTED: usize = 10;
    let mut messages = Vec::new();
    let mut well_formed = true;
    let goal = m.goal();

    for s in 0..m.state_count() {
        let mut any_enabled = false;
        for a in 0..m.action_count() {
            let outcomes = m.outcomes(s, a);
            let c = m.cost(s, a);
            if !(c >= 0.0) || !c.is_finite() {
                well_formed = false;
                messages.push(format!("C({s},{a}) = {c} is not a finite nonnegative cost"));
            }
            if outcomes.is_empty() {
                continue;
            }
            any_enabled = true;
            let mut total = 0.0;
            for &(next, p) in outcomes {
                if !(p > 0.0 && p <= 1.0 + PROB_SUM_TOLERANCE) {
                    well_formed = false;
                    messages.push(format!("T({s},{a},{next}) = {p} is outside (0, 1]"));
                }
                total += p;
            }
            if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
                well_formed = false;
                messages.push(format!("T({s},{a},.) sums to {total}, not 1"));
            }
            if s == goal && (outcomes.iter().any(|&(n, _)| n != goal) || c != 0.0) {
                well_formed = false;
                messages.push(format!("goal action {a} is not a zero-cost self-loop"));
            }
        }
        if s != goal && !any_enabled {
            well_formed = false;
            messages.push(format!("state {s} has no enabled action"));
        }
    }

    let (winning, _) = almost_sure_policy(m);
    let losing: Vec<usize> = (0..m.state_count()).filter(|&s| !winning[s]).collect();
    let proper_policy_found = losing.is_empty();
    if !proper_policy_found {
        let listed: Vec<String> = losing.iter().take(MAX_LISTED).map(|s| s.to_string()).collect();
        let more = if losing.len() > MAX_LISTED { ", ..." } else { "" };
        messages.push(format!(
            "no policy reaches the goal with probability 1 from {} state(s): {}{more}",
            losing.len(),
            listed.join(", ")
        ));
    }

    ValidationReport {
        is_ssp: well_formed && proper_policy_found,
        proper_policy_found,
        messages,
    }
}

/// Maximal set of states from which some policy reaches the goal with
/// probability 1, with a witness policy.
///
/// Nested fixed point: shrink the candidate set to states that can reach the
/// goal using only actions whose whole support stays in the candidate set.
/// The witness picks, for each state, the action that first connected it to
/// the goal, so every step has positive probability of moving closer.
pub(crate) fn almost_sure_policy(m: &BaseMdp) -> (Vec<bool>, Policy) {
    let n = m.state_count();
    let goal = m.goal();
    let mut candidate = vec![true; n];
    loop {
        let (reached, chosen) = attract(m, &candidate, |_, _| true);
        if reached == candidate {
            return (reached, Policy::from_vec(chosen));
        }
        candidate = reached;
        debug_assert!(candidate[goal]);
    }
}

/// Backward attractor of the goal inside `allowed`, using actions that pass
/// `usable` and keep their support inside `allowed`.
fn attract(
    m: &BaseMdp,
    allowed: &[bool],
    usable: impl Fn(usize, usize) -> bool,
) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = m.state_count();
    let goal = m.goal();
    let mut reached = vec![false; n];
    let mut chosen = vec![None; n];
    reached[goal] = true;
    let mut grew = true;
    while grew {
        grew = false;
        for s in 0..n {
            if reached[s] || !allowed[s] {
                continue;
            }
            for a in m.enabled_actions(s) {
                if !usable(s, a) {
                    continue;
                }
                let outcomes = m.outcomes(s, a);
                if outcomes.iter().all(|&(t, _)| allowed[t])
                    && outcomes.iter().any(|&(t, _)| reached[t])
                {
                    reached[s] = true;
                    chosen[s] = Some(a);
                    grew = true;
                    break;
                }
            }
        }
    }
    (reached, chosen)
}

/// `C(s,a) + sum_{s'} T(s,a,s') v(s')`.
pub fn q_value(m: &BaseMdp, v: &ValueFn, s: usize, a: usize) -> Result<f64> {
    check_len(m, v)?;
    if s >= m.state_count() || a >= m.action_count() || !m.is_enabled(s, a) {
        return Err(MdpError::DisabledAction { state: s, action: a });
    }
    Ok(m.lookahead(v.as_slice(), s, a))
}

fn check_len(m: &BaseMdp, v: &ValueFn) -> Result<()> {
    if v.len() != m.state_count() {
        return Err(MdpError::SizeMismatch { expected: m.state_count(), got: v.len() });
    }
    Ok(())
}

/// One synchronous application of the Bellman optimality operator. The goal
/// stays at zero; states with nothing enabled keep their value.
pub fn bellman_backup(m: &BaseMdp, v: &ValueFn) -> ValueFn {
    let vals = v.as_slice();
    let out = (0..m.state_count())
        .map(|s| {
            if s == m.goal() {
                0.0
            } else {
                min_lookahead(m, vals, s).unwrap_or(vals[s])
            }
        })
        .collect();
    ValueFn::from_vec(out)
}

#[inline]
fn min_lookahead(m: &BaseMdp, vals: &[f64], s: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for a in 0..m.action_count() {
        if m.is_enabled(s, a) {
            let q = m.lookahead(vals, s, a);
            if best.map_or(true, |b| q < b) {
                best = Some(q);
            }
        }
    }
    best
}

/// Greedy policy over all enabled actions; ties go to the lowest index.
pub fn greedy_policy(m: &BaseMdp, v: &ValueFn) -> Policy {
    greedy_with(m, v.as_slice(), |_| true)
}

pub(crate) fn greedy_with(m: &BaseMdp, vals: &[f64], keep: impl Fn(usize) -> bool) -> Policy {
    let actions = (0..m.state_count())
        .map(|s| {
            if s == m.goal() {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for a in m.enabled_actions(s).filter(|&a| keep(a)) {
                let q = m.lookahead(vals, s, a);
                if best.map_or(true, |(_, b)| q < b) {
                    best = Some((a, q));
                }
            }
            best.map(|(a, _)| a)
        })
        .collect();
    Policy::from_vec(actions)
}

/// Value iteration with a configurable residual and sweep cap.
#[derive(Debug, Clone, Copy)]
pub struct ValueIteration {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for ValueIteration {
    fn default() -> Self {
        ValueIteration { tolerance: DEFAULT_TOLERANCE, max_sweeps: DEFAULT_MAX_SWEEPS }
    }
}

impl ValueIteration {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    /// Solves `m` to Bellman residual `tolerance` and returns the greedy policy.
    ///
    /// Iteration starts from zero. If the greedy policy at that fixed point is
    /// improper (possible only with zero-cost cycles, where iteration from
    /// below stalls at a spurious fixed point), the solve restarts from the
    /// value of a proper policy and iterates downward. The returned policy is
    /// then the lowest-index proper choice among near-optimal actions.
    pub fn solve(&self, m: &BaseMdp) -> Result<(ValueFn, Policy)> {
        let mut v = ValueFn::zeros(m.state_count());
        self.iterate(m, v.as_mut_slice())?;
        let pi = greedy_policy(m, &v);
        if improper_state(m, &pi, None).is_none() {
            return Ok((v, pi));
        }

        let (winning, witness) = almost_sure_policy(m);
        if let Some(s) = winning.iter().position(|w| !w) {
            return Err(MdpError::ImproperPolicy { state: s });
        }
        let mut v = evaluate_on(m, &witness, &winning, self.tolerance, self.max_sweeps)?;
        self.iterate(m, v.as_mut_slice())?;
        let pi = proper_greedy(m, &v, self.tolerance);
        Ok((v, pi))
    }

    /// Gauss-Seidel sweeps until no state moves by more than the tolerance.
    fn iterate(&self, m: &BaseMdp, vals: &mut [f64]) -> Result<()> {
        let goal = m.goal();
        vals[goal] = 0.0;
        let mut residual = f64::INFINITY;
        for _ in 0..self.max_sweeps {
            residual = 0.0;
            for s in 0..m.state_count() {
                if s == goal {
                    continue;
                }
                if let Some(q) = min_lookahead(m, vals, s) {
                    let delta = (q - vals[s]).abs();
                    if delta > residual {
                        residual = delta;
                    }
                    vals[s] = q;
                }
            }
            if residual <= self.tolerance {
                return Ok(());
            }
        }
        Err(MdpError::Divergence { sweeps: self.max_sweeps, residual })
    }
}

/// Solves `m` exactly (to residual `tolerance`).
pub fn value_iteration(m: &BaseMdp, tolerance: f64) -> Result<(ValueFn, Policy)> {
    ValueIteration::default().with_tolerance(tolerance).solve(m)
}

/// Lowest-index greedy choice restricted so that the result is proper: among
/// actions within slack of the optimum, prefer the one that first connects a
/// state to the goal.
fn proper_greedy(m: &BaseMdp, v: &ValueFn, tolerance: f64) -> Policy {
    let vals = v.as_slice();
    let slack = |s: usize| (10.0 * tolerance).max(1e-7 * (1.0 + vals[s].abs()));
    let everywhere = vec![true; m.state_count()];
    let near_optimal = |s: usize, a: usize| m.lookahead(vals, s, a) <= vals[s] + slack(s);
    let (reached, chosen) = attract(m, &everywhere, near_optimal);
    let fallback = greedy_policy(m, v);
    let actions = (0..m.state_count())
        .map(|s| if reached[s] { chosen[s] } else { fallback.action(s) })
        .collect();
    Policy::from_vec(actions)
}

/// Returns a state witnessing that `pi` fails to reach the goal almost surely,
/// from `from` (or from anywhere if `None`).
pub(crate) fn improper_state(m: &BaseMdp, pi: &Policy, from: Option<usize>) -> Option<usize> {
    let can_reach = reaches_goal_under(m, pi);
    match from {
        None => (0..m.state_count()).find(|&s| !can_reach[s]),
        Some(start) => {
            let mut seen = vec![false; m.state_count()];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(s) = stack.pop() {
                if !can_reach[s] {
                    return Some(s);
                }
                if s == m.goal() {
                    continue;
                }
                if let Some(a) = pi.action(s) {
                    for &(t, _) in m.outcomes(s, a) {
                        if !seen[t] {
                            seen[t] = true;
                            stack.push(t);
                        }
                    }
                }
            }
            None
        }
    }
}

/// States that can reach the goal with positive probability under `pi`.
fn reaches_goal_under(m: &BaseMdp, pi: &Policy) -> Vec<bool> {
    let n = m.state_count();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        if s == m.goal() {
            continue;
        }
        if let Some(a) = pi.action(s) {
            for &(t, _) in m.outcomes(s, a) {
                preds[t].push(s);
            }
        }
    }
    let mut reach = vec![false; n];
    reach[m.goal()] = true;
    let mut stack = vec![m.goal()];
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !reach[s] {
                reach[s] = true;
                stack.push(s);
            }
        }
    }
    reach
}

/// States from which `pi` reaches the goal with probability 1: no state that
/// cannot reach the goal is reachable from them.
fn almost_sure_under(m: &BaseMdp, pi: &Policy) -> Vec<bool> {
    let n = m.state_count();
    let can_reach = reaches_goal_under(m, pi);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        if s == m.goal() {
            continue;
        }
        if let Some(a) = pi.action(s) {
            for &(t, _) in m.outcomes(s, a) {
                preds[t].push(s);
            }
        }
    }
    let mut doomed: Vec<bool> = can_reach.iter().map(|r| !r).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&s| doomed[s]).collect();
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !doomed[s] {
                doomed[s] = true;
                stack.push(s);
            }
        }
    }
    doomed.into_iter().map(|d| !d).collect()
}

/// Expected cost of following `pi`, to residual `tolerance`.
///
/// The policy must reach the goal almost surely from the start state. States
/// from which it does not (necessarily unreachable from the start) get an
/// infinite value.
pub fn policy_evaluation(m: &BaseMdp, pi: &Policy, tolerance: f64) -> Result<ValueFn> {
    if pi.len() != m.state_count() {
        return Err(MdpError::SizeMismatch { expected: m.state_count(), got: pi.len() });
    }
    for s in 0..m.state_count() {
        if let Some(a) = pi.action(s) {
            if a >= m.action_count() || !m.is_enabled(s, a) {
                return Err(MdpError::DisabledAction { state: s, action: a });
            }
        }
    }
    if let Some(s) = improper_state(m, pi, Some(m.start())) {
        return Err(MdpError::ImproperPolicy { state: s });
    }
    let proper = almost_sure_under(m, pi);
    evaluate_on(m, pi, &proper, tolerance, DEFAULT_MAX_SWEEPS)
}

fn evaluate_on(
    m: &BaseMdp,
    pi: &Policy,
    proper: &[bool],
    tolerance: f64,
    max_sweeps: usize,
) -> Result<ValueFn> {
    let n = m.state_count();
    let goal = m.goal();
    let mut vals: Vec<f64> =
        (0..n).map(|s| if proper[s] { 0.0 } else { f64::INFINITY }).collect();
    vals[goal] = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        residual = 0.0;
        for s in 0..n {
            if s == goal || !proper[s] {
                continue;
            }
            let a = pi.action(s).expect("almost-sure states have an action");
            let q = m.lookahead(&vals, s, a);
            residual = residual.max((q - vals[s]).abs());
            vals[s] = q;
        }
        if residual <= tolerance {
            return Ok(ValueFn::from_vec(vals));
        }
    }
    Err(MdpError::Divergence { sweeps: max_sweeps, residual })
}

/// Draws a successor of `(s, a)`. At a goal with nothing enabled, returns the goal.
///
/// # Panics
///
/// If `a` is not enabled in a non-goal state `s`.
pub fn sample_transition<R: Rng + ?Sized>(m: &BaseMdp, s: usize, a: usize, rng: &mut R) -> usize {
    let outcomes = m.outcomes(s, a);
    if outcomes.is_empty() {
        assert!(s == m.goal(), "action {a} is not enabled in state {s}");
        return s;
    }
    sample_from(outcomes, rng.gen::<f64>())
}

/// Inverse-CDF draw with `u` in `[0, 1)`; the last entry absorbs rounding.
#[inline]
pub(crate) fn sample_from(outcomes: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(next, p) in outcomes {
        acc += p;
        if u < acc {
            return next;
        }
    }
    outcomes[outcomes.len() - 1].0
}

/// Random SSP MDP with `states` states and `actions` actions, used for
/// property tests and acceptance checks.
///
/// State `states - 1` is the goal, state 0 the start, and the last action is
/// `NOP`, which stays in place. Action 0 always has positive probability of
/// moving to a higher-indexed state, so always taking it reaches the goal
/// almost surely. Other actions have 1 to 3 random successors. `NOP` costs are
/// sometimes zero so that zero-cost cycles appear.
pub fn random_ssp<R: Rng + ?Sized>(rng: &mut R, states: usize, actions: usize) -> BaseMdp {
    random_ssp_with(rng, states, actions, false)
}

/// Like [`random_ssp`], but `NOP` moves the world to random successors.
pub fn random_ssp_drifting<R: Rng + ?Sized>(rng: &mut R, states: usize, actions: usize) -> BaseMdp {
    random_ssp_with(rng, states, actions, true)
}

fn random_ssp_with<R: Rng + ?Sized>(
    rng: &mut R,
    states: usize,
    actions: usize,
    drifting_nop: bool,
) -> BaseMdp {
    assert!(states >= 2 && actions >= 2, "need at least 2 states and 2 actions");
    let goal = states - 1;
    let nop = actions - 1;
    let mut b = MdpBuilder::new(states, actions, nop, 0, goal);
    for s in 0..goal {
        for a in 0..actions {
            let support = rng.gen_range(1..=3usize);
            let mut targets: Vec<usize> = (0..support).map(|_| rng.gen_range(0..states)).collect();
            if a == 0 {
                targets[0] = rng.gen_range(s + 1..states);
            }
            if a == nop && !drifting_nop {
                targets = vec![s];
            }
            let weights: Vec<f64> = targets.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (&t, w) in targets.iter().zip(&weights) {
                b.transition(s, a, t, w / total);
            }
            let cost = if a == nop && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.5..5.0) };
            b.cost(s, a, cost);
        }
    }
    for a in 0..actions {
        b.edge(goal, a, 0.0, &[(goal, 1.0)]);
    }
    b.build().expect("generated indices are in range")
}
