//! The five agent policies behind one interface: CFTRL centers and
//! followers, DFTRL, Exp3-Coop, and center-based Exp3.
//!
//! A policy produces the round's action distribution (`act`), consumes the
//! round's delivered snapshot (`observe`), and owns nothing but agent-local
//! state. Message assembly is the round engine's job.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{update_estimate, NeighborhoodSnapshot, ObservedCumLoss};
use crate::graph::{CenterAssignment, CommGraph};
use crate::solvers::{
    exp_weights, solve_hybrid, solve_tsallis, ActionDistribution, HybridConfig, LossVector,
    TsallisConfig,
};

/// Algorithm selector, by the names the experiment configs use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "cftrl")]
    Cftrl,
    #[serde(rename = "dftrl")]
    Dftrl,
    #[serde(rename = "exp3coop")]
    Exp3Coop,
    #[serde(rename = "center_exp3")]
    CenterExp3,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Cftrl,
        Algorithm::Dftrl,
        Algorithm::Exp3Coop,
        Algorithm::CenterExp3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Cftrl => "cftrl",
            Algorithm::Dftrl => "dftrl",
            Algorithm::Exp3Coop => "exp3coop",
            Algorithm::CenterExp3 => "center_exp3",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cftrl" => Ok(Algorithm::Cftrl),
            "dftrl" => Ok(Algorithm::Dftrl),
            "exp3coop" => Ok(Algorithm::Exp3Coop),
            "center_exp3" => Ok(Algorithm::CenterExp3),
            other => Err(Error::config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Which mass enters the CFTRL center learning rate sqrt(m / (3T)): the
/// closed-neighborhood size or the hop-discounted mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CftrlRateMode {
    #[default]
    Neighborhood,
    Mass,
}

/// CFTRL center learning rate sqrt(m / (3T)), where m is either |N(c)| or
/// the mass M(c) depending on the configured mode.
pub fn cftrl_learning_rate(m: f64, horizon: u64) -> f64 {
    (m / (3.0 * horizon as f64)).sqrt()
}

/// DFTRL schedules: eta_t is constant over rounds, zeta_t decays as
/// sqrt(log K / (d t)).
pub fn dftrl_schedules(
    t: u64,
    horizon: u64,
    arms: usize,
    delay: u64,
    alpha: usize,
    n_agents: usize,
) -> (f64, f64) {
    let ratio = alpha as f64 / n_agents as f64 + 1.0 / arms as f64;
    let eta = (1.0 / (1.0 - (-1.0f64).exp())) * ratio.powf(-0.25) * (2.0 / horizon as f64).sqrt();
    let zeta = ((arms as f64).ln() / (delay as f64 * t as f64)).sqrt();
    (eta, zeta)
}

/// Exp3-Coop learning rate balancing log(K)/eta against
/// eta * K * T * (alpha/N + 1/K).
pub fn exp3_coop_learning_rate(arms: usize, horizon: u64, alpha: usize, n_agents: usize) -> f64 {
    let ratio = alpha as f64 / n_agents as f64 + 1.0 / arms as f64;
    ((arms as f64).ln() / (ratio * arms as f64 * horizon as f64)).sqrt()
}

/// Center-based Exp3 center learning rate: the classical horizon-tuned
/// Exp3 rate sqrt(log(K) / (K T)). The baseline's variance advantage comes
/// from the cooperative estimator, not from rate inflation.
pub fn center_exp3_learning_rate(arms: usize, horizon: u64) -> f64 {
    ((arms as f64).ln() / (arms as f64 * horizon as f64)).sqrt()
}

/// Largest Tsallis learning rate for which the multiplicative stability
/// bounds (delta = 2) are guaranteed: (1 - 1/sqrt(2)) / (2^(3d/2) sqrt(K)).
/// The bound is specific to the Tsallis regularizer, so the stability clamp
/// applies to CFTRL center rates only.
pub fn stability_threshold(arms: usize, delay: u64) -> f64 {
    (1.0 - 1.0 / 2f64.sqrt()) / (2f64.powf(1.5 * delay as f64) * (arms as f64).sqrt())
}

/// Agent-local policy behavior driven by the round engine.
pub trait Policy: Send {
    /// Distribution to play at round t. Must only depend on deliveries the
    /// engine has already handed to `observe`.
    fn act(&mut self, t: u64) -> Result<ActionDistribution>;

    /// Consumes the snapshot delivered at the start of round t (the
    /// neighborhood's round t - d messages), or `None` while t <= d.
    fn observe(&mut self, t: u64, snapshot: Option<&NeighborhoodSnapshot>) -> Result<()>;

    /// The cumulative loss estimate, for policies that keep one. Exposed so
    /// traces can be certified by the stability oracle.
    fn estimator(&self) -> Option<&ObservedCumLoss> {
        None
    }

    /// The fixed Tsallis learning rate, for CFTRL centers only; the
    /// stability oracle needs it alongside the trace.
    fn tsallis_eta(&self) -> Option<f64> {
        None
    }
}

/// Shared state of every estimator-driven policy.
struct EstimatorCore {
    cum: ObservedCumLoss,
    delay: u64,
}

impl EstimatorCore {
    fn new(arms: usize, delay: u64) -> Self {
        EstimatorCore {
            cum: ObservedCumLoss::new(arms),
            delay,
        }
    }

    fn observe(&mut self, t: u64, snapshot: Option<&NeighborhoodSnapshot>) -> Result<()> {
        update_estimate(&mut self.cum, snapshot, t, self.delay)
    }

    fn guard_act(&self, t: u64) -> Result<LossVector> {
        if self.cum.last_applied_round() != t {
            return Err(Error::protocol(format!(
                "act({t}) before the round's delivery was applied (estimator at round {})",
                self.cum.last_applied_round()
            )));
        }
        LossVector::new(self.cum.values().to_vec())
    }
}

/// CFTRL center: Tsallis-FTRL over the cooperative estimate.
pub struct CftrlCenter {
    core: EstimatorCore,
    eta: f64,
}

impl CftrlCenter {
    pub fn new(arms: usize, delay: u64, eta: f64) -> Self {
        CftrlCenter {
            core: EstimatorCore::new(arms, delay),
            eta,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl Policy for CftrlCenter {
    fn act(&mut self, t: u64) -> Result<ActionDistribution> {
        let losses = self.core.guard_act(t)?;
        Ok(solve_tsallis(&losses, &TsallisConfig::new(self.eta)?)?.dist)
    }

    fn observe(&mut self, t: u64, snapshot: Option<&NeighborhoodSnapshot>) -> Result<()> {
        self.core.observe(t, snapshot)
    }

    fn estimator(&self) -> Option<&ObservedCumLoss> {
        Some(&self.core.cum)
    }

    fn tsallis_eta(&self) -> Option<f64> {
        Some(self.eta)
    }
}

/// Non-center agent for the center-based policies: plays uniform through the
/// warm-up, then replays its center's distribution with lag d(v) * d,
/// obtained from the relay parent's delivered messages.
pub struct RelayFollower {
    arms: usize,
    delay: u64,
    hops: u64,
    parent: usize,
    latest: Option<(u64, ActionDistribution)>,
}

impl RelayFollower {
    pub fn new(arms: usize, delay: u64, hops: u64, parent: usize) -> Self {
        assert!(hops >= 1, "followers sit at positive distance");
        RelayFollower {
            arms,
            delay,
            hops,
            parent,
            latest: None,
        }
    }
}

impl Policy for RelayFollower {
    fn act(&mut self, t: u64) -> Result<ActionDistribution> {
        if t <= self.hops * self.delay {
            return Ok(ActionDistribution::uniform(self.arms));
        }
        match &self.latest {
            Some((round, dist)) if *round + self.delay == t => Ok(dist.clone()),
            Some((round, _)) => Err(Error::protocol(format!(
                "follower at round {t} holds relay round {round}, expected {}",
                t - self.delay
            ))),
            None => Err(Error::protocol(format!(
                "follower at round {t} has no relayed distribution"
            ))),
        }
    }

    fn observe(&mut self, t: u64, snapshot: Option<&NeighborhoodSnapshot>) -> Result<()> {
        if let Some(snap) = snapshot {
            let entry = snap
                .entries
                .iter()
                .find(|e| e.agent == self.parent)
                .ok_or_else(|| {
                    Error::protocol(format!(
                        "delivery at round {t} misses relay parent {}",
                        self.parent
                    ))
                })?;
            self.latest = Some((snap.round, entry.dist.as_ref().clone()));
        }
        Ok(())
    }
}

/// DFTRL agent: hybrid-regularized FTRL with the round-indexed schedules.
pub struct Dftrl {
    core: EstimatorCore,
    horizon: u64,
    alpha: usize,
    n_agents: usize,
}

impl Dftrl {
    pub fn new(arms: usize, delay: u64, horizon: u64, alpha: usize, n_agents: usize) -> Self {
        Dftrl {
            core: EstimatorCore::new(arms, delay),
            horizon,
            alpha,
            n_agents,
        }
    }
}

impl Policy for Dftrl {
    fn act(&mut self, t: u64) -> Result<ActionDistribution> {
        let losses = self.core.guard_act(t)?;
        let (eta, zeta) = dftrl_schedules(
            t,
            self.horizon,
            losses.len(),
            self.core.delay,
            self.alpha,
            self.n_agents,
        );
        solve_hybrid(&losses, &HybridConfig::new(eta, zeta)?)
    }

    fn observe(&mut self, t: u64, snapshot: Option<&NeighborhoodSnapshot>) -> Result<()> {
        self.core.observe(t, snapshot)
    }

    fn estimator(&self) -> Option<&ObservedCumLoss> {
        Some(&self.core.cum)
    }
}

/// Exponential-weights agent over the cooperative estimate; used by
/// Exp3-Coop (every agent) and by center-based Exp3 (centers only).
pub struct ExpWeightsAgent {
    core: EstimatorCore,
    eta: f64,
}

impl ExpWeightsAgent {
    pub fn new(arms: usize, delay: u64, eta: f64) -> Self {
        ExpWeightsAgent {
            core: EstimatorCore::new(arms, delay),
            eta,
        }
    }
}

impl Policy for ExpWeightsAgent {
    fn act(&mut self, t: u64) -> Result<ActionDistribution> {
        let losses = self.core.guard_act(t)?;
        exp_weights(&losses, self.eta)
    }

    fn observe(&mut self, t: u64, snapshot: Option<&NeighborhoodSnapshot>) -> Result<()> {
        self.core.observe(t, snapshot)
    }

    fn estimator(&self) -> Option<&ObservedCumLoss> {
        Some(&self.core.cum)
    }
}

/// Everything needed to instantiate one run's policies.
#[derive(Debug, Clone, Copy)]
pub struct PolicyParams {
    pub algorithm: Algorithm,
    pub arms: usize,
    pub horizon: u64,
    pub cftrl_rate_mode: CftrlRateMode,
    /// Clamp the CFTRL center learning rate down to the stability-admissible
    /// threshold.
    pub stability_clamp: bool,
}

/// Builds one policy per agent.
pub fn build_policies(
    graph: &CommGraph,
    assignment: &CenterAssignment,
    alpha: usize,
    params: &PolicyParams,
) -> Result<Vec<Box<dyn Policy>>> {
    let n = graph.n_agents();
    let d = graph.edge_delay();
    let k = params.arms;
    if k < 2 {
        return Err(Error::parameter("policies need K >= 2"));
    }
    let cap = if params.stability_clamp {
        Some(stability_threshold(k, d))
    } else {
        None
    };
    let mut out: Vec<Box<dyn Policy>> = Vec::with_capacity(n);
    for v in 0..n {
        let policy: Box<dyn Policy> = match params.algorithm {
            Algorithm::Cftrl => {
                if assignment.is_center(v) {
                    let m = match params.cftrl_rate_mode {
                        CftrlRateMode::Neighborhood => graph.closed_neighborhood_size(v) as f64,
                        CftrlRateMode::Mass => assignment.mass(v),
                    };
                    let mut eta = cftrl_learning_rate(m, params.horizon);
                    if let Some(cap) = cap {
                        eta = eta.min(cap);
                    }
                    Box::new(CftrlCenter::new(k, d, eta))
                } else {
                    let parent = assignment
                        .relay_parent(v)
                        .ok_or_else(|| Error::protocol(format!("no relay parent for {v}")))?;
                    Box::new(RelayFollower::new(k, d, assignment.dist(v), parent))
                }
            }
            Algorithm::Dftrl => Box::new(Dftrl::new(k, d, params.horizon, alpha, n)),
            Algorithm::Exp3Coop => {
                let eta = exp3_coop_learning_rate(k, params.horizon, alpha, n);
                Box::new(ExpWeightsAgent::new(k, d, eta))
            }
            Algorithm::CenterExp3 => {
                if assignment.is_center(v) {
                    let eta = center_exp3_learning_rate(k, params.horizon);
                    Box::new(ExpWeightsAgent::new(k, d, eta))
                } else {
                    let parent = assignment
                        .relay_parent(v)
                        .ok_or_else(|| Error::protocol(format!("no relay parent for {v}")))?;
                    Box::new(RelayFollower::new(k, d, assignment.dist(v), parent))
                }
            }
        };
        out.push(policy);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::SnapshotEntry;
    use std::sync::Arc;

    fn feed_arm_increment(
        policy: &mut dyn Policy,
        t: u64,
        d: u64,
        arm: usize,
        loss: f64,
        q_dist: &[f64],
    ) {
        // One neighbor reporting `arm` with the given distribution yields an
        // increment of loss / q_dist[arm].
        let snap = NeighborhoodSnapshot::new(
            t - d,
            vec![SnapshotEntry {
                agent: 0,
                arm,
                loss,
                dist: Arc::new(ActionDistribution::new(q_dist.to_vec()).unwrap()),
            }],
        )
        .unwrap();
        policy.observe(t, Some(&snap)).unwrap();
    }

    #[test]
    fn cftrl_center_uniform_until_first_delivery() {
        let d = 3;
        let mut center = CftrlCenter::new(4, d, 0.1);
        for t in 1..=d {
            center.observe(t, None).unwrap();
            let p = center.act(t).unwrap();
            for pi in p.probs() {
                assert!((pi - 0.25).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cftrl_center_matches_tsallis_solution_after_updates() {
        // Drive the estimate to exactly (0, 3): arm 1 observed once with
        // loss 1 and q = 1/3.
        let mut center = CftrlCenter::new(2, 1, 1.0);
        center.observe(1, None).unwrap();
        center.act(1).unwrap();
        feed_arm_increment(&mut center, 2, 1, 1, 1.0, &[2.0 / 3.0, 1.0 / 3.0]);
        let cum = center.estimator().unwrap().values().to_vec();
        assert!((cum[1] - 3.0).abs() <= 1e-12);
        let p = center.act(2).unwrap();
        assert!((p.probs()[0] - 0.9385).abs() <= 1e-3);
        assert!((p.probs()[1] - 0.0615).abs() <= 1e-3);
    }

    #[test]
    fn act_without_observing_round_is_protocol_error() {
        let mut center = CftrlCenter::new(2, 1, 1.0);
        assert!(matches!(center.act(1), Err(Error::Protocol(_))));
    }

    #[test]
    fn learning_rate_values() {
        assert!((cftrl_learning_rate(3.0, 300) - 0.057735026918962574).abs() <= 1e-15);
        assert!((cftrl_learning_rate(1.0, 3) - 1.0 / 3.0).abs() <= 1e-15);
        assert!((cftrl_learning_rate(5.0, 15) - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn follower_copies_with_exact_lag() {
        let (d, hops) = (3u64, 2u64);
        let mut follower = RelayFollower::new(4, d, hops, 7);
        // Warm-up: uniform through t = hops * d.
        for t in 1..=hops * d {
            if t > d {
                let snap = NeighborhoodSnapshot::new(
                    t - d,
                    vec![SnapshotEntry {
                        agent: 7,
                        arm: 0,
                        loss: 0.0,
                        dist: Arc::new(ActionDistribution::uniform(4)),
                    }],
                )
                .unwrap();
                follower.observe(t, Some(&snap)).unwrap();
            } else {
                follower.observe(t, None).unwrap();
            }
            let p = follower.act(t).unwrap();
            assert_eq!(p, ActionDistribution::uniform(4));
        }
        // First copy round: t = hops*d + 1 = 7 replays the parent's round-4
        // distribution, which is the center's round t - hops*d = 1 play.
        let lagged = ActionDistribution::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let snap = NeighborhoodSnapshot::new(
            4,
            vec![SnapshotEntry {
                agent: 7,
                arm: 0,
                loss: 0.2,
                dist: Arc::new(lagged.clone()),
            }],
        )
        .unwrap();
        follower.observe(7, Some(&snap)).unwrap();
        let p = follower.act(7).unwrap();
        assert_eq!(p, lagged, "copy must be bit-for-bit");
    }

    #[test]
    fn follower_missing_relay_entry_is_protocol_error() {
        let mut follower = RelayFollower::new(2, 1, 1, 3);
        let snap = NeighborhoodSnapshot::new(
            1,
            vec![SnapshotEntry {
                agent: 0,
                arm: 0,
                loss: 0.0,
                dist: Arc::new(ActionDistribution::uniform(2)),
            }],
        )
        .unwrap();
        assert!(follower.observe(2, Some(&snap)).is_err());
        // Without any stored relay round, acting past warm-up must fail.
        let mut stale = RelayFollower::new(2, 1, 1, 3);
        stale.observe(1, None).unwrap();
        assert!(matches!(stale.act(2), Err(Error::Protocol(_))));
    }

    #[test]
    fn dftrl_schedule_values() {
        let (eta, _) = dftrl_schedules(1, 200, 4, 1, 1, 4);
        assert!((eta - 0.18813).abs() <= 1e-5);
        let (_, zeta1) = dftrl_schedules(1, 100, 10, 4, 1, 4);
        assert!((zeta1 - 0.75872).abs() <= 1e-5);
        let (_, zeta4) = dftrl_schedules(4, 100, 10, 4, 1, 4);
        assert!((zeta4 - zeta1 / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn dftrl_uniform_at_round_one_and_hybrid_afterwards() {
        let mut agent = Dftrl::new(2, 1, 100, 1, 3);
        agent.observe(1, None).unwrap();
        let p = agent.act(1).unwrap();
        assert!((p.probs()[0] - 0.5).abs() <= 1e-10);
        feed_arm_increment(&mut agent, 2, 1, 1, 1.0, &[0.0001, 0.9999]);
        let cum = agent.estimator().unwrap().values().to_vec();
        let p = agent.act(2).unwrap();
        let (eta, zeta) = dftrl_schedules(2, 100, 2, 1, 1, 3);
        let want = solve_hybrid(
            &LossVector::new(cum).unwrap(),
            &HybridConfig::new(eta, zeta).unwrap(),
        )
        .unwrap();
        assert_eq!(p, want);
        assert!(p.probs()[0] > p.probs()[1]);
    }

    #[test]
    fn exp3_coop_rate_and_act() {
        let mut agent = ExpWeightsAgent::new(2, 1, 2f64.ln());
        agent.observe(1, None).unwrap();
        let p = agent.act(1).unwrap();
        assert!((p.probs()[0] - 0.5).abs() <= 1e-12);
        // Estimate (0, 1) under eta = ln 2 gives weights (1, 1/2).
        feed_arm_increment(&mut agent, 2, 1, 1, 0.5, &[0.5, 0.5]);
        // q = 0.5, loss 0.5 -> increment 1.0 on arm 1.
        let p = agent.act(2).unwrap();
        assert!((p.probs()[0] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((p.probs()[1] - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn stability_threshold_value() {
        let th = stability_threshold(10, 1);
        let want = (1.0 - 1.0 / 2f64.sqrt()) / (2f64.powf(1.5) * 10f64.sqrt());
        assert!((th - want).abs() <= 1e-15);
    }

    #[test]
    fn build_policies_assigns_roles() {
        let star = crate::graph::build_star(5).unwrap();
        let assignment = crate::graph::select_centers(&star, 3).unwrap();
        let alpha = crate::graph::independence_number(&star).value;
        let params = PolicyParams {
            algorithm: Algorithm::Cftrl,
            arms: 3,
            horizon: 100,
            cftrl_rate_mode: CftrlRateMode::Neighborhood,
            stability_clamp: false,
        };
        let mut policies = build_policies(&star, &assignment, alpha, &params).unwrap();
        assert_eq!(policies.len(), 5);
        // The hub runs the estimator-backed center; leaves do not.
        assert!(policies[0].estimator().is_some());
        for p in policies.iter_mut().skip(1) {
            assert!(p.estimator().is_none());
        }
    }

    #[test]
    fn mass_rate_mode_discounts_the_center_rate() {
        // Star with N=20, K=3: |N(hub)| = 20 but M(hub) = min(20, 3) = 3.
        let star = crate::graph::build_star(20).unwrap();
        let assignment = crate::graph::select_centers(&star, 3).unwrap();
        let alpha = crate::graph::independence_number(&star).value;
        let mut params = PolicyParams {
            algorithm: Algorithm::Cftrl,
            arms: 3,
            horizon: 300,
            cftrl_rate_mode: CftrlRateMode::Neighborhood,
            stability_clamp: false,
        };
        let by_neighborhood = build_policies(&star, &assignment, alpha, &params).unwrap();
        params.cftrl_rate_mode = CftrlRateMode::Mass;
        let by_mass = build_policies(&star, &assignment, alpha, &params).unwrap();
        let eta_n = by_neighborhood[0].tsallis_eta().unwrap();
        let eta_m = by_mass[0].tsallis_eta().unwrap();
        assert!((eta_n - cftrl_learning_rate(20.0, 300)).abs() <= 1e-15);
        assert!((eta_m - cftrl_learning_rate(3.0, 300)).abs() <= 1e-15);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in Algorithm::ALL {
            let parsed: Algorithm = alg.name().parse().unwrap();
            assert_eq!(parsed, alg);
        }
        assert!("exp5".parse::<Algorithm>().is_err());
    }
}
