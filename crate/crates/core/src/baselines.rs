//! Agents that choose between thinking and acting at each step.
//!
//! All agents act on the planner's current recommendation; they differ only
//! in when they think. The two metareasoners estimate the value of one more
//! thinking cycle; the baselines use fixed rules.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brtdp::{recommended_action, BoundsState, DropHistory};
use crate::mdp::BaseMdp;
use crate::metareasoner::{decide, q_nop_estimate, Decision, DropModel, NopEstimate, VocEstimate};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("agent '{kind}' requires parameter '{param}'")]
    MissingParam { kind: AgentKind, param: &'static str },

    #[error("agent '{kind}' does not take parameter '{param}'")]
    UnexpectedParam { kind: AgentKind, param: &'static str },

    #[error("probability p = {0} is outside [0, 1]")]
    BadProbability(f64),

    #[error("unknown agent kind '{0}'")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ThinkStarAct,
    Prob,
    NoInfoThink,
    Heuristic,
    Metareasoner,
    UncorrMetareasoner,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::ThinkStarAct => "think_star_act",
            AgentKind::Prob => "prob",
            AgentKind::NoInfoThink => "no_info_think",
            AgentKind::Heuristic => "heuristic",
            AgentKind::Metareasoner => "metareasoner",
            AgentKind::UncorrMetareasoner => "uncorr_metareasoner",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, AgentError> {
        let norm = s.to_ascii_lowercase().replace(['-', '*'], "_");
        let kind = match norm.as_str() {
            "think_star_act" | "think_act" | "thinkstaract" => AgentKind::ThinkStarAct,
            "prob" => AgentKind::Prob,
            "no_info_think" | "noinfothink" => AgentKind::NoInfoThink,
            "heuristic" => AgentKind::Heuristic,
            "metareasoner" | "mr" => AgentKind::Metareasoner,
            "uncorr_metareasoner" | "uncorrmetareasoner" | "uncorr_mr" => AgentKind::UncorrMetareasoner,
            _ => return Err(AgentError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

/// Agent selection. `n` is the Think*Act cycle count, `p` the Prob think
/// probability; each is present exactly when its kind needs it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl AgentConfig {
    fn plain(kind: AgentKind) -> Self {
        AgentConfig { kind, n: None, p: None }
    }

    pub fn think_star_act(n: u64) -> Self {
        AgentConfig { kind: AgentKind::ThinkStarAct, n: Some(n), p: None }
    }

    pub fn prob(p: f64) -> Self {
        AgentConfig { kind: AgentKind::Prob, n: None, p: Some(p) }
    }

    pub fn no_info_think() -> Self {
        Self::plain(AgentKind::NoInfoThink)
    }

    pub fn heuristic() -> Self {
        Self::plain(AgentKind::Heuristic)
    }

    pub fn metareasoner() -> Self {
        Self::plain(AgentKind::Metareasoner)
    }

    pub fn uncorr_metareasoner() -> Self {
        Self::plain(AgentKind::UncorrMetareasoner)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let kind = self.kind;
        match (kind, self.n, self.p) {
            (AgentKind::ThinkStarAct, None, _) => Err(AgentError::MissingParam { kind, param: "n" }),
            (AgentKind::Prob, _, None) => Err(AgentError::MissingParam { kind, param: "p" }),
            (AgentKind::Prob, _, Some(p)) if !(0.0..=1.0).contains(&p) => Err(AgentError::BadProbability(p)),
            (k, Some(_), _) if k != AgentKind::ThinkStarAct => Err(AgentError::UnexpectedParam { kind, param: "n" }),
            (k, _, Some(_)) if k != AgentKind::Prob => Err(AgentError::UnexpectedParam { kind, param: "p" }),
            _ => Ok(()),
        }
    }

    /// Label used in CSV output, e.g. `think_star_act(n=10)` or `prob(p=0.3)`.
    pub fn label(&self) -> String {
        match (self.n, self.p) {
            (Some(n), _) => format!("{}(n={n})", self.kind),
            (_, Some(p)) => format!("{}(p={p})", self.kind),
            _ => self.kind.to_string(),
        }
    }
}

/// Per-episode agent memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentState {
    pub thinks: u64,
    pub acts: u64,
}

/// What the agent chose, plus the VOC computation when one was made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub decision: Decision,
    pub voc: Option<VocEstimate>,
}

impl Step {
    fn plain(decision: Decision) -> Self {
        Step { decision, voc: None }
    }
}

/// One think/act choice at `s`. Updates the think/act counters in `state`.
///
/// Every agent thinks when the planner has no acting recommendation at `s`.
pub fn agent_step<R: Rng + ?Sized>(
    cfg: &AgentConfig,
    state: &mut AgentState,
    s: usize,
    m: &BaseMdp,
    b: &BoundsState,
    d: &DropHistory,
    rng: &mut R,
) -> Step {
    let f = recommended_action(b, m, s);
    let act_or_think = |think: bool| match (think, f) {
        (false, Some(a)) => Decision::Act(a),
        _ => Decision::Think,
    };
    let step = match cfg.kind {
        AgentKind::ThinkStarAct => Step::plain(act_or_think(state.thinks < cfg.n.unwrap_or(0))),
        AgentKind::Prob => Step::plain(act_or_think(rng.gen_bool(cfg.p.unwrap_or(0.0)))),
        AgentKind::NoInfoThink => {
            let missing = q_nop_estimate(s, m, b, d, DropModel::Correlated) == NopEstimate::NoInformation;
            Step::plain(act_or_think(missing))
        }
        AgentKind::Heuristic => Step::plain(act_or_think(false)),
        AgentKind::Metareasoner | AgentKind::UncorrMetareasoner => {
            let model =
                if cfg.kind == AgentKind::Metareasoner { DropModel::Correlated } else { DropModel::Uncorrelated };
            let voc = decide(s, m, b, d, model);
            Step { decision: voc.decision, voc: Some(voc) }
        }
    };
    match step.decision {
        Decision::Think => state.thinks += 1,
        Decision::Act(_) => state.acts += 1,
    }
    step
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brtdp::init_planner;
    use crate::gridworld::{build_domain, heuristic_bounds, DomainConfig, DomainKind};
    use crate::mdp::ValueFn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fresh_stochastic() -> (BaseMdp, BoundsState) {
        let cfg = DomainConfig::new(DomainKind::Stochastic);
        let (m, spec) = build_domain(&cfg).unwrap();
        let (lo, hi) = heuristic_bounds(&spec, &cfg);
        let b = init_planner(&m, lo, hi).unwrap();
        (m, b)
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::think_star_act(3).validate().is_ok());
        assert!(AgentConfig::prob(0.5).validate().is_ok());
        assert_eq!(AgentConfig::prob(1.5).validate(), Err(AgentError::BadProbability(1.5)));
        let bad = AgentConfig { kind: AgentKind::Heuristic, n: Some(2), p: None };
        assert!(matches!(bad.validate(), Err(AgentError::UnexpectedParam { param: "n", .. })));
        let bad = AgentConfig { kind: AgentKind::ThinkStarAct, n: None, p: None };
        assert!(matches!(bad.validate(), Err(AgentError::MissingParam { param: "n", .. })));
    }

    #[test]
    fn config_json() {
        let cfg: AgentConfig = serde_json::from_str(r#"{"kind":"prob","p":0.25}"#).unwrap();
        assert_eq!(cfg, AgentConfig::prob(0.25));
        assert_eq!(cfg.label(), "prob(p=0.25)");
        assert_eq!("think*act".parse::<AgentKind>().unwrap(), AgentKind::ThinkStarAct);
    }

    #[test]
    fn heuristic_acts_greedily_on_initial_bound() {
        let (m, b) = fresh_stochastic();
        let d = DropHistory::new(&m);
        let mut st = AgentState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = agent_step(&AgentConfig::heuristic(), &mut st, m.start(), &m, &b, &d, &mut rng);
        assert_eq!(step.decision, Decision::Act(recommended_action(&b, &m, m.start()).unwrap()));
        let zero = agent_step(&AgentConfig::think_star_act(0), &mut st, m.start(), &m, &b, &d, &mut rng);
        assert_eq!(zero.decision, step.decision);
    }

    #[test]
    fn think_star_act_counts_per_episode() {
        let (m, b) = fresh_stochastic();
        let d = DropHistory::new(&m);
        let mut st = AgentState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AgentConfig::think_star_act(3);
        let decisions: Vec<Decision> =
            (0..6).map(|_| agent_step(&cfg, &mut st, m.start(), &m, &b, &d, &mut rng).decision).collect();
        assert_eq!(decisions.iter().filter(|d| **d == Decision::Think).count(), 3);
        assert!(decisions[..3].iter().all(|d| *d == Decision::Think));
        assert_eq!(st, AgentState { thinks: 3, acts: 3 });
    }

    #[test]
    fn prob_think_frequency() {
        let (m, b) = fresh_stochastic();
        let d = DropHistory::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [0.1, 0.5, 0.8] {
            let mut st = AgentState::default();
            let cfg = AgentConfig::prob(p);
            for _ in 0..10_000 {
                agent_step(&cfg, &mut st, m.start(), &m, &b, &d, &mut rng);
            }
            let freq = st.thinks as f64 / 10_000.0;
            assert!((freq - p).abs() < 0.02, "p={p}: {freq}");
        }
    }

    #[test]
    fn no_info_think_acts_once_drops_are_known() {
        let (m, b) = fresh_stochastic();
        let mut d = DropHistory::new(&m);
        let mut st = AgentState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AgentConfig::no_info_think();
        let s = m.start();
        assert_eq!(agent_step(&cfg, &mut st, s, &m, &b, &d, &mut rng).decision, Decision::Think);
        for a in m.acting_actions(s) {
            d.record(s, a, 1.0);
        }
        assert!(matches!(agent_step(&cfg, &mut st, s, &m, &b, &d, &mut rng).decision, Decision::Act(_)));
    }

    #[test]
    fn metareasoners_report_voc() {
        let mut bl = BaseMdp::builder(2, 2, 1, 0, 1);
        bl.edge(0, 0, 2.0, &[(1, 1.0)]).edge(0, 1, 1.0, &[(0, 1.0)]);
        let m = bl.build().unwrap();
        let v = ValueFn::from_vec(vec![2.0, 0.0]);
        let b = init_planner(&m, v.clone(), v).unwrap();
        let mut d = DropHistory::new(&m);
        d.record(0, 0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [AgentConfig::metareasoner(), AgentConfig::uncorr_metareasoner()] {
            let mut st = AgentState::default();
            let step = agent_step(&cfg, &mut st, 0, &m, &b, &d, &mut rng);
            assert_eq!(step.decision, Decision::Act(0));
            assert_eq!(step.voc.unwrap().voc, Some(-1.0));
        }
    }
}
