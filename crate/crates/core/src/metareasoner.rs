//! Value-of-computation estimates and the think/act rule.
//!
//! After a thinking cycle the upper Q-bound of an action is projected to fall
//! somewhere in `[hi - drop, hi]`, where `drop` is the decrease observed in the
//! most recent cycle. Two projection models are supported: independent
//! uniform draws per action ([`DropModel::Uncorrelated`]) and a single shared
//! fraction `rho ~ U[0,1]` of every action's drop ([`DropModel::Correlated`]).
//! Only the two most promising actions are modelled, so every estimate is a
//! closed-form computation over at most two segments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brtdp::{recommended_action, BoundsState, DropHistory};
use crate::mdp::BaseMdp;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("estimator needs at least one segment")]
    NoSegments,

    #[error("estimator handles at most two segments, got {0}")]
    TooManySegments(usize),

    #[error("segment for action {action} is invalid (hi {hi}, drop {drop})")]
    BadSegment { action: usize, hi: f64, drop: f64 },

    #[error("unknown drop model '{0}' (expected correlated or uncorrelated)")]
    UnknownModel(String),
}

pub type Result<T> = std::result::Result<T, EstimateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropModel {
    Uncorrelated,
    Correlated,
}

impl fmt::Display for DropModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropModel::Uncorrelated => "uncorrelated",
            DropModel::Correlated => "correlated",
        })
    }
}

impl FromStr for DropModel {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uncorrelated" | "uncorr" => Ok(DropModel::Uncorrelated),
            "correlated" | "corr" => Ok(DropModel::Correlated),
            _ => Err(EstimateError::UnknownModel(s.to_string())),
        }
    }
}

/// Projected range `[hi - drop, hi]` of one action's next upper Q-bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub action: usize,
    pub hi: f64,
    pub drop: f64,
}

impl Segment {
    pub fn new(action: usize, hi: f64, drop: f64) -> Self {
        Segment { action, hi, drop }
    }

    pub fn lo(&self) -> f64 {
        self.hi - self.drop
    }

    pub fn mid(&self) -> f64 {
        self.hi - 0.5 * self.drop
    }

    fn check(&self) -> Result<()> {
        if !(self.hi.is_finite() && self.drop >= 0.0 && self.drop.is_finite()) {
            return Err(EstimateError::BadSegment { action: self.action, hi: self.hi, drop: self.drop });
        }
        Ok(())
    }
}

/// Probability that the planner will recommend `action` after one more cycle,
/// and the expected upper Q-bound of `action` given that it is recommended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionEstimate {
    pub action: usize,
    pub p: f64,
    pub e: f64,
}

/// One [`ActionEstimate`] per input segment, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendEstimate {
    pub actions: Vec<ActionEstimate>,
}

impl RecommendEstimate {
    /// `sum_a p_a e_a`, skipping zero-probability entries.
    pub fn expected_value(&self) -> f64 {
        self.actions.iter().filter(|x| x.p > 0.0).map(|x| x.p * x.e).sum()
    }

    pub fn get(&self, action: usize) -> Option<&ActionEstimate> {
        self.actions.iter().find(|x| x.action == action)
    }
}

fn check_segments(segments: &[Segment]) -> Result<()> {
    match segments.len() {
        0 => return Err(EstimateError::NoSegments),
        1 | 2 => {}
        n => return Err(EstimateError::TooManySegments(n)),
    }
    segments.iter().try_for_each(Segment::check)
}

fn single(seg: &Segment) -> RecommendEstimate {
    RecommendEstimate { actions: vec![ActionEstimate { action: seg.action, p: 1.0, e: seg.mid() }] }
}

/// Independent uniform projections on `[hi - drop, hi]`.
///
/// `p_a` is the probability that `a`'s draw is the smallest (exact ties go to
/// the lower action index) and `e_a` the mean of `a`'s draw on that event.
pub fn estimate_uncorrelated(segments: &[Segment]) -> Result<RecommendEstimate> {
    check_segments(segments)?;
    if segments.len() == 1 {
        return Ok(single(&segments[0]));
    }
    let (a, b) = (&segments[0], &segments[1]);
    let (pa, ea) = win_uniform(a, b);
    let (pb, eb) = win_uniform(b, a);
    Ok(RecommendEstimate {
        actions: vec![ActionEstimate { action: a.action, p: pa, e: ea }, ActionEstimate { action: b.action, p: pb, e: eb }],
    })
}

/// `(P(X < Y), E[X | X < Y])` for `X ~ U(me)`, `Y ~ U(other)` independent,
/// with ties on point masses awarded to the lower action index.
fn win_uniform(me: &Segment, other: &Segment) -> (f64, f64) {
    let wins_ties = me.action < other.action;
    let (x_lo, x_hi) = (me.lo(), me.hi);
    let (y_lo, y_hi) = (other.lo(), other.hi);

    if me.drop == 0.0 {
        let x = x_hi;
        let p = if other.drop == 0.0 {
            if x < y_hi || (x == y_hi && wins_ties) {
                1.0
            } else {
                0.0
            }
        } else {
            ((y_hi - x) / other.drop).clamp(0.0, 1.0)
        };
        return (p, x);
    }

    // X has density 1/w on [x_lo, x_hi]. Integrate density * S(x) and
    // x * density * S(x) where S(x) = P(Y > x) is piecewise linear.
    let w = me.drop;
    let mut mass = 0.0;
    let mut first = 0.0;
    let mut add = |lo: f64, hi: f64, c0: f64, c1: f64| {
        let (lo, hi) = (lo.max(x_lo), hi.min(x_hi));
        if hi > lo {
            mass += poly_integral(lo, hi, c0, c1, 0) / w;
            first += poly_integral(lo, hi, c0, c1, 1) / w;
        }
    };
    if other.drop == 0.0 {
        add(f64::NEG_INFINITY, y_hi, 1.0, 0.0);
    } else {
        add(f64::NEG_INFINITY, y_lo, 1.0, 0.0);
        // S(x) = (y_hi - x) / w_y on [y_lo, y_hi].
        add(y_lo, y_hi, y_hi / other.drop, -1.0 / other.drop);
    }
    let p = mass.clamp(0.0, 1.0);
    let e = if p > 0.0 { (first / mass).clamp(x_lo, x_hi) } else { me.mid() };
    (p, e)
}

/// `integral_lo^hi x^k (c0 + c1 x) dx` for `k` in {0, 1}.
fn poly_integral(lo: f64, hi: f64, c0: f64, c1: f64, k: i32) -> f64 {
    let antiderivative = |x: f64| match k {
        0 => c0 * x + c1 * x * x / 2.0,
        _ => c0 * x * x / 2.0 + c1 * x * x * x / 3.0,
    };
    antiderivative(hi) - antiderivative(lo)
}

/// Perfectly correlated projections `l_a(rho) = hi_a - rho * drop_a` with a
/// shared `rho ~ U[0,1]`.
///
/// `p_a` is the length of the set of `rho` where `l_a` is strictly lowest and
/// `e_a` the mean of `l_a` over that set. Identical lines give all mass to the
/// lower action index.
pub fn estimate_correlated(segments: &[Segment]) -> Result<RecommendEstimate> {
    check_segments(segments)?;
    if segments.len() == 1 {
        return Ok(single(&segments[0]));
    }
    let (a, b) = (&segments[0], &segments[1]);
    // diff(rho) = l_a - l_b = dh - rho * dd
    let dh = a.hi - b.hi;
    let dd = a.drop - b.drop;
    let a_first = a.action < b.action;

    // Interval of rho on which a wins.
    let (u, v) = if dd == 0.0 {
        if dh < 0.0 || (dh == 0.0 && a_first) {
            (0.0, 1.0)
        } else {
            (0.0, 0.0)
        }
    } else {
        let root = dh / dd;
        if dd > 0.0 {
            // diff < 0 for rho > root
            (root.clamp(0.0, 1.0), 1.0)
        } else {
            (0.0, root.clamp(0.0, 1.0))
        }
    };
    let (pa, ea) = line_mean(a, u, v);
    let (pb, eb) = if u > 0.0 {
        line_mean(b, 0.0, u)
    } else {
        line_mean(b, v, 1.0)
    };
    Ok(RecommendEstimate {
        actions: vec![ActionEstimate { action: a.action, p: pa, e: ea }, ActionEstimate { action: b.action, p: pb, e: eb }],
    })
}

fn line_mean(seg: &Segment, u: f64, v: f64) -> (f64, f64) {
    let p = (v - u).max(0.0);
    if p > 0.0 {
        (p, seg.hi - seg.drop * 0.5 * (u + v))
    } else {
        (0.0, seg.mid())
    }
}

pub fn estimate(model: DropModel, segments: &[Segment]) -> Result<RecommendEstimate> {
    match model {
        DropModel::Uncorrelated => estimate_uncorrelated(segments),
        DropModel::Correlated => estimate_correlated(segments),
    }
}

/// A ranked action with its projected lower end `u_hat = Q_upper - drop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: usize,
    pub q_upper: f64,
    /// `None` when no drop has been recorded for this action (ranked as 0).
    pub drop: Option<f64>,
}

impl Candidate {
    pub fn u_hat(&self) -> f64 {
        self.q_upper - self.drop.unwrap_or(0.0)
    }

    pub fn segment(&self) -> Segment {
        Segment::new(self.action, self.q_upper, self.drop.unwrap_or(0.0))
    }
}

/// The (at most) two acting actions with the lowest `u_hat`, ascending,
/// ties to the lower index. One linear scan.
pub fn candidate_actions(s: usize, m: &BaseMdp, b: &BoundsState, d: &DropHistory) -> Vec<Candidate> {
    let upper = b.upper().as_slice();
    let mut best: [Option<Candidate>; 2] = [None, None];
    for a in m.acting_actions(s) {
        let c = Candidate { action: a, q_upper: m.lookahead(upper, s, a), drop: d.drop(s, a) };
        let u = c.u_hat();
        match best {
            [None, _] => best[0] = Some(c),
            [Some(first), _] if u < first.u_hat() => {
                best[1] = best[0];
                best[0] = Some(c);
            }
            [Some(_), None] => best[1] = Some(c),
            [Some(_), Some(second)] if u < second.u_hat() => best[1] = Some(c),
            _ => {}
        }
    }
    best.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NopEstimate {
    Value(f64),
    /// Some NOP-successor has no recorded drop for one of its candidates.
    NoInformation,
}

/// Estimated cost of thinking one more cycle and acting afterwards:
/// `C(s,NOP) + sum_{s'} T(s,NOP,s') sum_a p_a(s') e_a(s')`.
pub fn q_nop_estimate(s: usize, m: &BaseMdp, b: &BoundsState, d: &DropHistory, model: DropModel) -> NopEstimate {
    let nop = m.nop();
    let mut total = m.cost(s, nop);
    for &(t, p) in m.outcomes(s, nop) {
        if t == m.goal() {
            continue;
        }
        let candidates = candidate_actions(t, m, b, d);
        if candidates.is_empty() || candidates.iter().any(|c| c.drop.is_none()) {
            return NopEstimate::NoInformation;
        }
        let segments: Vec<Segment> = candidates.iter().map(Candidate::segment).collect();
        let est = estimate(model, &segments).expect("candidate segments are valid");
        total += p * est.expected_value();
    }
    NopEstimate::Value(total)
}

/// `Q_upper(s,f) - drop(s,f)/2` for the current recommendation `f`, with a
/// missing drop read as 0. `None` if nothing but `NOP` is enabled.
pub fn q_act_estimate(s: usize, m: &BaseMdp, b: &BoundsState, d: &DropHistory) -> Option<f64> {
    let f = recommended_action(b, m, s)?;
    let q = m.lookahead(b.upper().as_slice(), s, f);
    Some(q - 0.5 * d.drop(s, f).unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Think,
    Act(usize),
}

/// Everything computed for one think/act decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocEstimate {
    pub state: usize,
    /// Current recommendation `f(s, chi)`.
    pub action: Option<usize>,
    pub q_act: Option<f64>,
    /// `None` when the no-information rule fired.
    pub q_nop: Option<f64>,
    /// `q_act - q_nop` when both are known.
    pub voc: Option<f64>,
    pub decision: Decision,
}

/// Think when there is no drop information or when `q_act - q_nop > 0`,
/// otherwise act on the current recommendation.
pub fn decide(s: usize, m: &BaseMdp, b: &BoundsState, d: &DropHistory, model: DropModel) -> VocEstimate {
    let action = recommended_action(b, m, s);
    let q_act = q_act_estimate(s, m, b, d);
    let q_nop = match q_nop_estimate(s, m, b, d, model) {
        NopEstimate::Value(v) => Some(v),
        NopEstimate::NoInformation => None,
    };
    let voc = match (q_act, q_nop) {
        (Some(a), Some(n)) => Some(a - n),
        _ => None,
    };
    let decision = match (action, voc) {
        (Some(f), Some(v)) if v <= 0.0 => Decision::Act(f),
        _ => Decision::Think,
    };
    VocEstimate { state: s, action, q_act, q_nop, voc, decision }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brtdp::init_planner;
    use crate::mdp::ValueFn;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(action: usize, lo: f64, hi: f64) -> Segment {
        Segment::new(action, hi, hi - lo)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uncorrelated_examples() {
        let est = estimate_uncorrelated(&[seg(0, 1.0, 2.0), seg(1, 5.0, 6.0)]).unwrap();
        assert_eq!(est.actions[0].p, 1.0);
        assert!(close(est.actions[0].e, 1.5, 1e-12));
        assert_eq!(est.actions[1].p, 0.0);

        let est = estimate_uncorrelated(&[seg(0, 6.0, 10.0), seg(1, 8.0, 9.0)]).unwrap();
        assert!(close(est.actions[0].p, 0.625, 1e-12));
        assert!(close(est.actions[1].p, 0.375, 1e-12));

        let est = estimate_uncorrelated(&[Segment::new(0, 5.0, 0.0), Segment::new(1, 5.0, 0.0)]).unwrap();
        assert_eq!((est.actions[0].p, est.actions[1].p), (1.0, 0.0));
        assert_eq!(est.actions[0].e, 5.0);
        // Tie rule follows the action index, not the input order.
        let est = estimate_uncorrelated(&[Segment::new(3, 5.0, 0.0), Segment::new(1, 5.0, 0.0)]).unwrap();
        assert_eq!((est.actions[0].p, est.actions[1].p), (0.0, 1.0));
    }

    #[test]
    fn uncorrelated_conditional_means_by_hand() {
        // X ~ U[6,10], Y ~ U[8,9]. P(X<Y, X in [6,8]) = 0.5 with mean 7;
        // on [8,9], density 1/4 times (9-x): mass 1/8, first moment 25/24.
        let est = estimate_uncorrelated(&[seg(0, 6.0, 10.0), seg(1, 8.0, 9.0)]).unwrap();
        let e0 = (0.5 * 7.0 + 25.0 / 24.0) / 0.625;
        assert!(close(est.actions[0].e, e0, 1e-12), "{}", est.actions[0].e);
        // Mixture identity: p0 e0 + p1 e1 = E[min(X, Y)].
        let e_min = 0.625 * est.actions[0].e + 0.375 * est.actions[1].e;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400_000;
        let mc: f64 = (0..n).map(|_| rng.gen_range(6.0..10.0f64).min(rng.gen_range(8.0..9.0))).sum::<f64>() / n as f64;
        assert!(close(e_min, mc, 5e-3), "{e_min} vs {mc}");
    }

    #[test]
    fn correlated_examples() {
        let est = estimate_correlated(&[Segment::new(0, 10.0, 4.0), Segment::new(1, 9.0, 1.0)]).unwrap();
        assert!(close(est.actions[0].p, 2.0 / 3.0, 1e-12));
        assert!(close(est.actions[1].p, 1.0 / 3.0, 1e-12));
        assert!(close(est.actions[0].e, 22.0 / 3.0, 1e-12));
        assert!(close(est.actions[1].e, 9.0 - 1.0 / 6.0, 1e-12));

        let est = estimate_correlated(&[Segment::new(0, 5.0, 2.0), Segment::new(1, 9.0, 2.0)]).unwrap();
        assert_eq!(est.actions[0].p, 1.0);
        assert_eq!(est.actions[0].e, 4.0);

        let est = estimate_correlated(&[Segment::new(0, 7.0, 0.0), Segment::new(1, 6.0, 0.0)]).unwrap();
        assert_eq!(est.actions[1].p, 1.0);
        assert_eq!(est.actions[1].e, 6.0);

        let est = estimate_correlated(&[Segment::new(2, 7.0, 1.0), Segment::new(1, 7.0, 1.0)]).unwrap();
        assert_eq!((est.actions[0].p, est.actions[1].p), (0.0, 1.0));
    }

    #[test]
    fn estimator_contract_errors() {
        assert_eq!(estimate_uncorrelated(&[]), Err(EstimateError::NoSegments));
        assert_eq!(estimate_correlated(&[]), Err(EstimateError::NoSegments));
        let three = [Segment::new(0, 1.0, 0.0); 3];
        assert_eq!(estimate_correlated(&three), Err(EstimateError::TooManySegments(3)));
        assert!(matches!(estimate_uncorrelated(&[Segment::new(0, 1.0, -1.0)]), Err(EstimateError::BadSegment { .. })));
    }

    /// Monte Carlo of the independent-uniform model; ties to lower index.
    fn mc_uncorrelated(segs: &[Segment], n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let mut wins = vec![(0usize, 0.0f64); segs.len()];
        for _ in 0..n {
            let draws: Vec<f64> = segs.iter().map(|s| s.lo() + s.drop * rng.gen::<f64>()).collect();
            let k = winner(segs, &draws);
            wins[k].0 += 1;
            wins[k].1 += draws[k];
        }
        wins.iter().map(|&(c, sum)| (c as f64 / n as f64, if c > 0 { sum / c as f64 } else { f64::NAN })).collect()
    }

    fn mc_correlated(segs: &[Segment], n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let mut wins = vec![(0usize, 0.0f64); segs.len()];
        for _ in 0..n {
            let rho = rng.gen::<f64>();
            let draws: Vec<f64> = segs.iter().map(|s| s.hi - rho * s.drop).collect();
            let k = winner(segs, &draws);
            wins[k].0 += 1;
            wins[k].1 += draws[k];
        }
        wins.iter().map(|&(c, sum)| (c as f64 / n as f64, if c > 0 { sum / c as f64 } else { f64::NAN })).collect()
    }

    fn winner(segs: &[Segment], draws: &[f64]) -> usize {
        (0..segs.len())
            .min_by(|&i, &j| draws[i].partial_cmp(&draws[j]).unwrap().then(segs[i].action.cmp(&segs[j].action)))
            .unwrap()
    }

    fn segment_pair() -> impl Strategy<Value = [Segment; 2]> {
        let one = |action| {
            (0.0f64..20.0, prop_oneof![Just(0.0), 0.0f64..8.0]).prop_map(move |(hi, drop)| Segment::new(action, hi, drop))
        };
        (one(0), one(1)).prop_map(|(a, b)| [a, b])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn estimators_normalize_and_respect_support(pair in segment_pair()) {
            for est in [estimate_uncorrelated(&pair).unwrap(), estimate_correlated(&pair).unwrap()] {
                let total: f64 = est.actions.iter().map(|x| x.p).sum();
                prop_assert!((total - 1.0).abs() <= 1e-9, "{:?}", est);
                for (x, s) in est.actions.iter().zip(&pair) {
                    prop_assert!(x.p >= 0.0);
                    if x.p > 0.0 {
                        prop_assert!(x.e >= s.lo() - 1e-9 && x.e <= s.hi + 1e-9, "{:?} {:?}", x, s);
                    }
                }
            }
        }

        #[test]
        fn estimators_match_monte_carlo(pair in segment_pair(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40_000;
            for (est, mc) in [
                (estimate_uncorrelated(&pair).unwrap(), mc_uncorrelated(&pair, n, &mut rng)),
                (estimate_correlated(&pair).unwrap(), mc_correlated(&pair, n, &mut rng)),
            ] {
                for (x, &(p, _)) in est.actions.iter().zip(&mc) {
                    let se = (x.p * (1.0 - x.p) / n as f64).sqrt();
                    prop_assert!((x.p - p).abs() <= 4.0 * se + 1e-12, "{:?} vs mc p {}", x, p);
                }
            }
        }
    }

    /// One state with stay-in-place NOP plus up to three acting actions to
    /// the goal at the given costs.
    fn star(costs: &[f64], nop_cost: f64) -> BaseMdp {
        let k = costs.len() + 1;
        let mut b = BaseMdp::builder(2, k, k - 1, 0, 1);
        for (a, &c) in costs.iter().enumerate() {
            b.edge(0, a, c, &[(1, 1.0)]);
        }
        b.edge(0, k - 1, nop_cost, &[(0, 1.0)]);
        for a in 0..k {
            b.edge(1, a, 0.0, &[(1, 1.0)]);
        }
        b.build().unwrap()
    }

    fn planner(m: &BaseMdp) -> BoundsState {
        init_planner(m, ValueFn::zeros(2), ValueFn::zeros(2)).unwrap()
    }

    #[test]
    fn candidate_ranking() {
        let m = star(&[9.0, 7.0, 12.0, 8.0], 1.0);
        let b = planner(&m);
        let d = DropHistory::new(&m);
        let c: Vec<usize> = candidate_actions(0, &m, &b, &d).iter().map(|c| c.action).collect();
        assert_eq!(c, vec![1, 3]);

        let m = star(&[5.0, 5.0, 5.0], 1.0);
        let c: Vec<usize> = candidate_actions(0, &m, &planner(&m), &DropHistory::new(&m)).iter().map(|c| c.action).collect();
        assert_eq!(c, vec![0, 1]);

        let m = star(&[5.0], 1.0);
        let c = candidate_actions(0, &m, &planner(&m), &DropHistory::new(&m));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].drop, None);
    }

    #[test]
    fn candidate_ranking_uses_drops() {
        let m = star(&[9.0, 7.0, 12.0, 8.0], 1.0);
        let b = planner(&m);
        let mut d = DropHistory::new(&m);
        d.record(0, 2, 6.0);
        let c: Vec<(usize, f64)> = candidate_actions(0, &m, &b, &d).iter().map(|c| (c.action, c.u_hat())).collect();
        assert_eq!(c, vec![(2, 6.0), (1, 7.0)]);
    }

    #[test]
    fn fresh_planner_thinks() {
        let m = star(&[3.0, 4.0], 1.0);
        let est = decide(0, &m, &planner(&m), &DropHistory::new(&m), DropModel::Correlated);
        assert_eq!(est.decision, Decision::Think);
        assert_eq!(est.q_nop, None);
        assert_eq!(est.action, Some(0));
    }

    #[test]
    fn converged_zero_drops_act() {
        let m = star(&[3.0, 4.0], 2.0);
        let b = planner(&m);
        let mut d = DropHistory::new(&m);
        d.record(0, 0, 0.0);
        d.record(0, 1, 0.0);
        for model in [DropModel::Correlated, DropModel::Uncorrelated] {
            let est = decide(0, &m, &b, &d, model);
            assert_eq!(est.q_act, Some(3.0));
            assert_eq!(est.q_nop, Some(5.0));
            assert_eq!(est.voc, Some(-2.0));
            assert_eq!(est.decision, Decision::Act(0));
        }
    }

    #[test]
    fn dominant_segment_with_free_nop_gives_zero_voc() {
        let m = star(&[10.0, 20.0], 0.0);
        let b = planner(&m);
        let mut d = DropHistory::new(&m);
        d.record(0, 0, 4.0);
        d.record(0, 1, 1.0);
        assert_eq!(q_act_estimate(0, &m, &b, &d), Some(8.0));
        for model in [DropModel::Correlated, DropModel::Uncorrelated] {
            let est = decide(0, &m, &b, &d, model);
            assert!(est.voc.unwrap().abs() <= 1e-9, "{model}: {est:?}");
            assert_eq!(est.decision, Decision::Act(0));
        }
    }

    #[test]
    fn q_nop_weights_successors() {
        // s0 --NOP--> s1 (0.8) / s2 (0.2); s1 and s2 each have one action to goal.
        let mut bl = BaseMdp::builder(4, 2, 1, 0, 3);
        bl.edge(0, 0, 1.0, &[(3, 1.0)]).edge(0, 1, 1.0, &[(1, 0.8), (2, 0.2)]);
        bl.edge(1, 0, 4.0, &[(3, 1.0)]).edge(1, 1, 1.0, &[(1, 1.0)]);
        bl.edge(2, 0, 9.0, &[(3, 1.0)]).edge(2, 1, 1.0, &[(2, 1.0)]);
        let m = bl.build().unwrap();
        let b = init_planner(&m, ValueFn::zeros(4), ValueFn::zeros(4)).unwrap();
        let mut d = DropHistory::new(&m);
        d.record(1, 0, 2.0);
        assert_eq!(q_nop_estimate(0, &m, &b, &d, DropModel::Correlated), NopEstimate::NoInformation);
        d.record(2, 0, 0.0);
        // Inner sums: 4 - 1 = 3 and 9.
        let expected = 1.0 + 0.8 * 3.0 + 0.2 * 9.0;
        match q_nop_estimate(0, &m, &b, &d, DropModel::Uncorrelated) {
            NopEstimate::Value(v) => assert!((v - expected).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn q_act_matches_dominant_correlated_estimate() {
        let (hi, drop) = (10.0, 4.0);
        let est = estimate_correlated(&[Segment::new(0, hi, drop), Segment::new(1, 30.0, 1.0)]).unwrap();
        assert!((est.actions[0].e - (hi - drop / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn model_parsing() {
        assert_eq!("Correlated".parse::<DropModel>().unwrap(), DropModel::Correlated);
        assert!("bayes".parse::<DropModel>().is_err());
    }
}
