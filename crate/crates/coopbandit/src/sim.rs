//! Deterministic synchronous round engine: environments, delayed broadcast
//! delivery, loss assignment, regret and communication-cost accounting.
//!
//! Round structure (t = 1..T): deliver the messages due at t to each agent's
//! `observe`, let every agent compute its distribution, read the round's
//! losses, sample arms, then enqueue every agent's message (to neighbors and
//! to itself) for delivery d rounds later.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{NeighborhoodSnapshot, SnapshotEntry};
use crate::graph::{independence_number, select_centers, CenterAssignment, CommGraph};
use crate::policy::{build_policies, Algorithm, CftrlRateMode, PolicyParams};
use crate::solvers::ActionDistribution;

/// RNG stream id reserved for the environment; agents use their own ids.
pub const ENV_RNG_STREAM: u64 = u64::MAX;

/// A broadcast message in transit: sent at the end of `send_round`, visible
/// to every recipient at the start of `deliver_round = send_round + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlightMessage {
    pub sender: usize,
    pub send_round: u64,
    pub arm: usize,
    pub loss: f64,
    pub dist: Arc<ActionDistribution>,
    pub deliver_round: u64,
}

impl InFlightMessage {
    pub fn new(
        sender: usize,
        send_round: u64,
        arm: usize,
        loss: f64,
        dist: Arc<ActionDistribution>,
        edge_delay: u64,
    ) -> Self {
        InFlightMessage {
            sender,
            send_round,
            arm,
            loss,
            dist,
            deliver_round: send_round + edge_delay,
        }
    }
}

/// Bits to encode one message: agent id, round, arm id, and the loss plus
/// distribution at 64-bit precision.
pub fn message_bits(n_agents: usize, horizon: u64, arms: usize) -> u64 {
    ceil_log2(n_agents as u64)
        + ceil_log2(horizon)
        + ceil_log2(arms as u64)
        + 64 * (arms as u64 + 1)
}

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// Total cost of one round's messages: every sender's bits are paid once per
/// graph neighbor that receives them.
pub fn comm_cost(messages: &[InFlightMessage], graph: &CommGraph, horizon: u64) -> u64 {
    messages
        .iter()
        .map(|m| {
            graph.degree(m.sender) as u64 * message_bits(graph.n_agents(), horizon, m.dist.len())
        })
        .sum()
}

/// Arm means (1 + 8(i-1)/(K-1))/10 for the stochastic Bernoulli instance.
pub fn stochastic_means(arms: usize) -> Result<Vec<f64>> {
    if arms < 2 {
        return Err(Error::config("stochastic means need K >= 2"));
    }
    Ok((0..arms)
        .map(|i| (1.0 + 8.0 * i as f64 / (arms as f64 - 1.0)) / 10.0)
        .collect())
}

/// A fixed loss sequence: one row of K losses per round.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    arms: usize,
    rows: Vec<Vec<f64>>,
}

impl LossMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let arms = rows.first().map(Vec::len).unwrap_or(0);
        if arms == 0 {
            return Err(Error::config("loss matrix must be non-empty"));
        }
        for (t, row) in rows.iter().enumerate() {
            if row.len() != arms {
                return Err(Error::config(format!("ragged loss row at t={}", t + 1)));
            }
            if row.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(Error::config(format!("loss outside [0,1] at t={}", t + 1)));
            }
        }
        Ok(LossMatrix { arms, rows })
    }

    /// Parses the adversarial loss format: header "t,loss_1,...,loss_K",
    /// one row per round.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::config("empty loss file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 3 {
            return Err(Error::config(
                "loss file header must be t,loss_1,...,loss_K",
            ));
        }
        for (i, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("loss_{i}") {
                return Err(Error::config(format!("unexpected header column '{c}'")));
            }
        }
        let arms = cols.len() - 1;
        let mut rows = Vec::new();
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != arms + 1 {
                return Err(Error::config(format!("bad loss row at line {}", idx + 2)));
            }
            let t: u64 = fields[0]
                .parse()
                .map_err(|_| Error::config(format!("bad round index '{}'", fields[0])))?;
            if t != idx as u64 + 1 {
                return Err(Error::config(format!(
                    "loss rows must be ordered by t; saw {t} at position {}",
                    idx + 1
                )));
            }
            let row: Vec<f64> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::config(format!("bad loss value '{f}'")))
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        LossMatrix::new(rows)
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn rounds(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, t: u64) -> &[f64] {
        &self.rows[(t - 1) as usize]
    }
}

/// Loss process shared by all agents in a run.
#[derive(Debug, Clone)]
pub enum EnvironmentSpec {
    /// Bernoulli arms with the linear mean profile, drawn once per (t, i)
    /// from the environment's own RNG stream.
    StochasticBernoulli,
    /// Oblivious adversary: a loss sequence fixed before the run.
    Adversarial(Arc<LossMatrix>),
}

#[allow(clippy::large_enum_variant)] // one instance per run
enum Environment {
    Stochastic { means: Vec<f64>, rng: ChaCha8Rng },
    Adversarial { matrix: Arc<LossMatrix> },
}

impl Environment {
    fn next_row(&mut self, t: u64, arms: usize) -> Vec<f64> {
        match self {
            Environment::Stochastic { means, rng } => (0..arms)
                .map(|i| {
                    if rng.random::<f64>() < means[i] {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Environment::Adversarial { matrix } => matrix.row(t).to_vec(),
        }
    }
}

/// Regret accounting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegretMode {
    #[default]
    Empirical,
    Pseudo,
}

/// Per-run knobs; the graph and its derived data live in [`Instance`].
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub arms: usize,
    pub horizon: u64,
    pub seed: u64,
    pub regret_mode: RegretMode,
    pub cftrl_rate_mode: CftrlRateMode,
    pub stability_clamp: bool,
}

/// A problem instance: the graph plus the center assignment and independence
/// number derived from it (computed once, shared across runs).
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: CommGraph,
    pub assignment: CenterAssignment,
    pub alpha: crate::graph::IndependenceNumber,
}

impl Instance {
    pub fn new(graph: CommGraph, arms: usize) -> Result<Self> {
        let assignment = select_centers(&graph, arms)?;
        let alpha = independence_number(&graph);
        Ok(Instance {
            graph,
            assignment,
            alpha,
        })
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Chosen arm per agent per round.
    pub arms: Vec<Vec<u32>>,
    /// Loss incurred by each agent per round.
    pub losses: Vec<Vec<f64>>,
    /// Cumulative regret series per agent.
    pub regret_per_agent: Vec<Vec<f64>>,
    /// Average of the per-agent series at every round.
    pub regret_avg: Vec<f64>,
    /// Network cost of each round's messages in bits.
    pub comm_bits_per_round: Vec<u64>,
    pub meta: RunMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub algorithm: Algorithm,
    pub arms: usize,
    pub horizon: u64,
    pub seed: u64,
    pub alpha: usize,
    pub alpha_exact: bool,
    pub config_hash: u64,
}

/// Full state trace of one FTRL agent: the distribution played each round
/// and the estimator increment applied between consecutive rounds. Consumed
/// by the stability oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTrace {
    pub probs: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
    pub eta: f64,
}

/// Runs one simulation to completion.
pub fn run(instance: &Instance, env: &EnvironmentSpec, cfg: &RunConfig) -> Result<RunResult> {
    run_inner(instance, env, cfg, None, false).map(|(result, _, _)| result)
}

/// Runs one simulation while recording the distribution/increment trace of
/// `traced_agent`, which must hold an estimator-backed policy.
pub fn run_with_center_trace(
    instance: &Instance,
    env: &EnvironmentSpec,
    cfg: &RunConfig,
    traced_agent: usize,
) -> Result<(RunResult, CenterTrace)> {
    let (result, trace, _) = run_inner(instance, env, cfg, Some(traced_agent), false)?;
    trace
        .map(|t| (result, t))
        .ok_or_else(|| Error::parameter("traced agent does not expose an estimator"))
}

/// Runs one simulation and returns every agent's played distribution per
/// round (`[round][agent] -> probs`). Intended for tests; memory grows as
/// T * N * K.
pub fn run_capturing_dists(
    instance: &Instance,
    env: &EnvironmentSpec,
    cfg: &RunConfig,
) -> Result<(RunResult, Vec<Vec<Vec<f64>>>)> {
    let (result, _, dists) = run_inner(instance, env, cfg, None, true)?;
    Ok((result, dists))
}

fn validate(instance: &Instance, env: &EnvironmentSpec, cfg: &RunConfig) -> Result<()> {
    if cfg.horizon < 1 {
        return Err(Error::config("horizon must be at least 1"));
    }
    if cfg.arms < 2 {
        return Err(Error::config("need K >= 2 arms"));
    }
    if let EnvironmentSpec::Adversarial(matrix) = env {
        if matrix.arms() != cfg.arms {
            return Err(Error::config(format!(
                "loss file has {} arms, config says {}",
                matrix.arms(),
                cfg.arms
            )));
        }
        if (matrix.rounds() as u64) < cfg.horizon {
            return Err(Error::config(format!(
                "loss file covers {} rounds, horizon is {}",
                matrix.rounds(),
                cfg.horizon
            )));
        }
    }
    let _ = instance;
    Ok(())
}

fn config_hash(instance: &Instance, cfg: &RunConfig) -> u64 {
    let mut h = DefaultHasher::new();
    cfg.algorithm.name().hash(&mut h);
    cfg.arms.hash(&mut h);
    cfg.horizon.hash(&mut h);
    cfg.seed.hash(&mut h);
    (cfg.regret_mode == RegretMode::Pseudo).hash(&mut h);
    (cfg.cftrl_rate_mode == CftrlRateMode::Mass).hash(&mut h);
    cfg.stability_clamp.hash(&mut h);
    instance.graph.edge_delay().hash(&mut h);
    instance.graph.n_agents().hash(&mut h);
    instance.graph.edges().hash(&mut h);
    h.finish()
}

/// Per-round, per-agent distributions captured by [`run_capturing_dists`].
type CapturedDists = Vec<Vec<Vec<f64>>>;

fn run_inner(
    instance: &Instance,
    env_spec: &EnvironmentSpec,
    cfg: &RunConfig,
    traced_agent: Option<usize>,
    capture_all: bool,
) -> Result<(RunResult, Option<CenterTrace>, CapturedDists)> {
    validate(instance, env_spec, cfg)?;
    let graph = &instance.graph;
    let n = graph.n_agents();
    let d = graph.edge_delay();
    let horizon = cfg.horizon;

    let params = PolicyParams {
        algorithm: cfg.algorithm,
        arms: cfg.arms,
        horizon,
        cftrl_rate_mode: cfg.cftrl_rate_mode,
        stability_clamp: cfg.stability_clamp,
    };
    let mut policies = build_policies(graph, &instance.assignment, instance.alpha.value, &params)?;

    let mut env = match env_spec {
        EnvironmentSpec::StochasticBernoulli => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(ENV_RNG_STREAM);
            Environment::Stochastic {
                means: stochastic_means(cfg.arms)?,
                rng,
            }
        }
        EnvironmentSpec::Adversarial(matrix) => Environment::Adversarial {
            matrix: Arc::clone(matrix),
        },
    };

    let mut agent_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(v as u64);
            rng
        })
        .collect();

    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|v| graph.closed_neighborhood(v))
        .collect::<Result<_>>()?;

    let mut in_flight: VecDeque<Vec<InFlightMessage>> = VecDeque::new();
    let mut arm_traces: Vec<Vec<u32>> = vec![Vec::with_capacity(horizon as usize); n];
    let mut loss_traces: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon as usize); n];
    let mut loss_rows: Vec<Vec<f64>> = Vec::with_capacity(horizon as usize);
    let mut comm_bits: Vec<u64> = Vec::with_capacity(horizon as usize);
    let mut trace_probs: Vec<Vec<f64>> = Vec::new();
    let mut trace_cums: Vec<Vec<f64>> = Vec::new();
    let mut all_dists: Vec<Vec<Vec<f64>>> = Vec::new();

    for t in 1..=horizon {
        // (1) Delivery: the front batch is due exactly when t = send + d.
        let delivered = match in_flight.front() {
            Some(batch) if batch[0].deliver_round == t => in_flight.pop_front(),
            _ => None,
        };
        match &delivered {
            Some(batch) => {
                debug_assert!(batch.iter().all(|m| m.send_round + d == t));
                for v in 0..n {
                    let entries: Vec<SnapshotEntry> = neighborhoods[v]
                        .iter()
                        .map(|&u| SnapshotEntry {
                            agent: u,
                            arm: batch[u].arm,
                            loss: batch[u].loss,
                            dist: Arc::clone(&batch[u].dist),
                        })
                        .collect();
                    let snapshot = NeighborhoodSnapshot::new(t - d, entries)?;
                    policies[v].observe(t, Some(&snapshot))?;
                }
            }
            None => {
                debug_assert!(t <= d, "missing delivery after warm-up");
                for policy in policies.iter_mut() {
                    policy.observe(t, None)?;
                }
            }
        }

        if let Some(a) = traced_agent {
            let cum = policies[a]
                .estimator()
                .ok_or_else(|| Error::parameter("traced agent does not expose an estimator"))?;
            trace_cums.push(cum.values().to_vec());
        }

        // (2) Distributions for the round.
        let dists: Vec<Arc<ActionDistribution>> = policies
            .iter_mut()
            .map(|p| p.act(t).map(Arc::new))
            .collect::<Result<_>>()?;
        if let Some(a) = traced_agent {
            trace_probs.push(dists[a].probs().to_vec());
        }
        if capture_all {
            all_dists.push(dists.iter().map(|d| d.probs().to_vec()).collect());
        }

        // (3) The environment's loss vector, identical for every agent.
        let row = env.next_row(t, cfg.arms);

        // (4) Sampling and loss recording.
        let mut batch = Vec::with_capacity(n);
        for v in 0..n {
            let arm = dists[v].sample_with(agent_rngs[v].random::<f64>());
            let loss = row[arm];
            arm_traces[v].push(arm as u32);
            loss_traces[v].push(loss);
            // (5) Broadcast enqueued for round t + d.
            batch.push(InFlightMessage::new(
                v,
                t,
                arm,
                loss,
                Arc::clone(&dists[v]),
                d,
            ));
        }
        comm_bits.push(comm_cost(&batch, graph, horizon));
        in_flight.push_back(batch);
        loss_rows.push(row);
    }

    let (regret_per_agent, regret_avg) = match cfg.regret_mode {
        RegretMode::Empirical => empirical_regret(&arm_traces, &loss_rows),
        RegretMode::Pseudo => match env_spec {
            EnvironmentSpec::StochasticBernoulli => {
                pseudo_regret(&arm_traces, &stochastic_means(cfg.arms)?)
            }
            EnvironmentSpec::Adversarial(_) => {
                return Err(Error::config(
                    "pseudo-regret requires the stochastic environment",
                ))
            }
        },
    };

    let trace = traced_agent.map(|a| {
        let increments = trace_cums
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
            .collect();
        CenterTrace {
            probs: trace_probs,
            increments,
            eta: policies[a].tsallis_eta().unwrap_or(f64::NAN),
        }
    });

    let result = RunResult {
        arms: arm_traces,
        losses: loss_traces,
        regret_per_agent,
        regret_avg,
        comm_bits_per_round: comm_bits,
        meta: RunMeta {
            algorithm: cfg.algorithm,
            arms: cfg.arms,
            horizon,
            seed: cfg.seed,
            alpha: instance.alpha.value,
            alpha_exact: instance.alpha.exact,
            config_hash: config_hash(instance, cfg),
        },
    };
    Ok((result, trace, all_dists))
}

/// Cumulative regret series from realized traces: each agent's cumulative
/// chosen-arm loss minus the best single arm's cumulative loss in hindsight,
/// plus the across-agent average.
pub fn empirical_regret(
    arm_traces: &[Vec<u32>],
    loss_rows: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = arm_traces.len();
    let horizon = loss_rows.len();
    let arms = loss_rows.first().map(Vec::len).unwrap_or(0);
    let mut per_agent = vec![Vec::with_capacity(horizon); n];
    let mut agent_cum = vec![0.0f64; n];
    let mut arm_cum = vec![0.0f64; arms];
    let mut avg = Vec::with_capacity(horizon);
    for (idx, row) in loss_rows.iter().enumerate() {
        for (i, l) in row.iter().enumerate() {
            arm_cum[i] += l;
        }
        let best = arm_cum.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for v in 0..n {
            agent_cum[v] += row[arm_traces[v][idx] as usize];
            let r = agent_cum[v] - best;
            per_agent[v].push(r);
            sum += r;
        }
        avg.push(sum / n as f64);
    }
    (per_agent, avg)
}

/// Pseudo-regret series against the arm means (stochastic environments).
pub fn pseudo_regret(arm_traces: &[Vec<u32>], means: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = arm_traces.len();
    let horizon = arm_traces.first().map(Vec::len).unwrap_or(0);
    let best = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut per_agent = vec![Vec::with_capacity(horizon); n];
    let mut agent_cum = vec![0.0f64; n];
    let mut avg = Vec::with_capacity(horizon);
    for idx in 0..horizon {
        let mut sum = 0.0;
        for v in 0..n {
            agent_cum[v] += means[arm_traces[v][idx] as usize] - best;
            per_agent[v].push(agent_cum[v]);
            sum += agent_cum[v];
        }
        avg.push(sum / n as f64);
    }
    (per_agent, avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_regular, build_star};

    fn constant_matrix(rounds: usize, row: &[f64]) -> Arc<LossMatrix> {
        Arc::new(LossMatrix::new(vec![row.to_vec(); rounds]).unwrap())
    }

    fn base_cfg(algorithm: Algorithm, arms: usize, horizon: u64, seed: u64) -> RunConfig {
        RunConfig {
            algorithm,
            arms,
            horizon,
            seed,
            regret_mode: RegretMode::Empirical,
            cftrl_rate_mode: CftrlRateMode::Neighborhood,
            stability_clamp: false,
        }
    }

    #[test]
    #[allow(clippy::identity_op)]
    fn message_bits_example() {
        assert_eq!(message_bits(4, 1024, 8), 2 + 10 + 3 + 64 * 9);
        assert_eq!(message_bits(4, 1024, 8), 591);
        assert_eq!(message_bits(1, 1, 2), 0 + 0 + 1 + 64 * 3);
    }

    #[test]
    fn comm_cost_shapes() {
        let star = build_star(5).unwrap();
        assert_eq!(comm_cost(&[], &star, 100), 0);
        let dist = Arc::new(ActionDistribution::uniform(2));
        let hub_msg = InFlightMessage::new(0, 1, 0, 0.0, dist.clone(), 1);
        let leaf_msg = InFlightMessage::new(1, 1, 0, 0.0, dist.clone(), 1);
        let b = message_bits(5, 100, 2);
        // The hub's message reaches 4 neighbors, a leaf's exactly 1.
        assert_eq!(comm_cost(std::slice::from_ref(&hub_msg), &star, 100), 4 * b);
        assert_eq!(comm_cost(&[leaf_msg], &star, 100), b);
        // A degree-2 sender pays twice what a degree-1 sender pays.
        let path = CommGraph::new(3, &[(0, 1), (1, 2)], 1).unwrap();
        let mid = InFlightMessage::new(1, 1, 0, 0.0, dist.clone(), 1);
        let end = InFlightMessage::new(0, 1, 0, 0.0, dist, 1);
        let b3 = message_bits(3, 100, 2);
        assert_eq!(comm_cost(&[mid], &path, 100), 2 * b3);
        assert_eq!(comm_cost(&[end], &path, 100), b3);
    }

    #[test]
    fn in_flight_delivery_round() {
        let dist = Arc::new(ActionDistribution::uniform(2));
        let m = InFlightMessage::new(0, 3, 1, 0.5, dist, 1);
        assert_eq!(m.deliver_round, 4);
    }

    #[test]
    fn stochastic_means_profile() {
        let means = stochastic_means(10).unwrap();
        assert!((means[0] - 0.1).abs() <= 1e-15);
        assert!((means[1] - 0.18888888888888888).abs() <= 1e-15);
        assert!((means[9] - 0.9).abs() <= 1e-15);
        assert!(stochastic_means(1).is_err());
    }

    #[test]
    fn ftrl_agents_stay_uniform_through_the_delay_window() {
        // With d = 2 nothing has been delivered by t = 2, so every policy's
        // first two distributions are uniform and the arm choices depend only
        // on the RNG streams.
        let graph = build_regular(3, 2, 0).unwrap().with_edge_delay(2).unwrap();
        let instance = Instance::new(graph, 2).unwrap();
        let env = EnvironmentSpec::Adversarial(constant_matrix(10, &[0.0, 1.0]));
        for algorithm in Algorithm::ALL {
            let cfg = base_cfg(algorithm, 2, 10, 5);
            let (result, trace) = run_with_center_trace(
                &instance,
                &env,
                &cfg,
                agent_with_estimator(&instance, algorithm),
            )
            .unwrap();
            for t in 0..2 {
                assert_eq!(trace.probs[t], vec![0.5, 0.5], "{algorithm} at t={}", t + 1);
            }
            // After the first delivery the estimate favors arm 0.
            let last = trace.probs.last().unwrap();
            assert!(last[0] > 0.5, "{algorithm} should tilt toward the good arm");
            assert_eq!(result.arms[0].len(), 10);
        }
    }

    fn agent_with_estimator(instance: &Instance, algorithm: Algorithm) -> usize {
        match algorithm {
            Algorithm::Cftrl | Algorithm::CenterExp3 => {
                instance.assignment.centers().next().unwrap()
            }
            _ => 0,
        }
    }

    #[test]
    fn same_arm_same_round_same_loss() {
        let graph = build_regular(3, 2, 0).unwrap();
        let instance = Instance::new(graph, 3).unwrap();
        let cfg = base_cfg(Algorithm::Exp3Coop, 3, 200, 11);
        let result = run(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg).unwrap();
        for t in 0..200 {
            for v in 0..3 {
                for u in 0..3 {
                    if result.arms[v][t] == result.arms[u][t] {
                        assert_eq!(result.losses[v][t], result.losses[u][t]);
                    }
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let graph = build_star(4).unwrap();
        let instance = Instance::new(graph, 5).unwrap();
        for algorithm in Algorithm::ALL {
            let cfg = base_cfg(algorithm, 5, 300, 77);
            let a = run(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg).unwrap();
            let b = run(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_agent_runs_for_every_policy() {
        let graph = CommGraph::new(1, &[], 2).unwrap();
        let instance = Instance::new(graph, 4).unwrap();
        for algorithm in Algorithm::ALL {
            let cfg = base_cfg(algorithm, 4, 100, 1);
            let a = run(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg).unwrap();
            let b = run(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.comm_bits_per_round[0], 0, "no edges, no network cost");
        }
    }

    #[test]
    fn horizon_zero_rejected() {
        let graph = build_star(3).unwrap();
        let instance = Instance::new(graph, 2).unwrap();
        let cfg = base_cfg(Algorithm::Dftrl, 2, 0, 0);
        assert!(matches!(
            run(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empirical_regret_examples() {
        // An agent always on the best arm has zero regret at every t.
        let rows = vec![vec![0.2, 0.7], vec![0.1, 0.9]];
        let (per_agent, avg) = empirical_regret(&[vec![0, 0]], &rows);
        assert_eq!(per_agent[0], vec![0.0, 0.0]);
        assert_eq!(avg, vec![0.0, 0.0]);
        // Single round: played 0.7 against best 0.2.
        let (per_agent, _) = empirical_regret(&[vec![1]], &[vec![0.2, 0.7]]);
        assert!((per_agent[0][0] - 0.5).abs() <= 1e-15);
        // Identical agents average to the same series.
        let (per_agent, avg) = empirical_regret(&[vec![1], vec![1]], &[vec![0.2, 0.7]]);
        assert_eq!(per_agent[0], per_agent[1]);
        assert_eq!(avg, per_agent[0]);
    }

    #[test]
    fn pseudo_regret_counts_mean_gaps() {
        let means = vec![0.1, 0.5];
        let (per_agent, _) = pseudo_regret(&[vec![1, 0, 1]], &means);
        assert!((per_agent[0][0] - 0.4).abs() <= 1e-15);
        assert!((per_agent[0][1] - 0.4).abs() <= 1e-15);
        assert!((per_agent[0][2] - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn adversarial_csv_round_trip_and_validation() {
        let text = "t,loss_1,loss_2\n1,0.5,0.25\n2,0,1\n";
        let matrix = LossMatrix::from_csv_str(text).unwrap();
        assert_eq!(matrix.arms(), 2);
        assert_eq!(matrix.rounds(), 2);
        assert_eq!(matrix.row(1), &[0.5, 0.25]);
        assert!(LossMatrix::from_csv_str("x,loss_1\n").is_err());
        assert!(LossMatrix::from_csv_str("t,loss_1,loss_2\n1,2.0,0\n").is_err());
        assert!(LossMatrix::from_csv_str("t,loss_1,loss_2\n2,0,0\n").is_err());
    }

    #[test]
    fn pseudo_mode_requires_stochastic_env() {
        let graph = build_star(3).unwrap();
        let instance = Instance::new(graph, 2).unwrap();
        let mut cfg = base_cfg(Algorithm::Exp3Coop, 2, 5, 0);
        cfg.regret_mode = RegretMode::Pseudo;
        let env = EnvironmentSpec::Adversarial(constant_matrix(5, &[0.0, 1.0]));
        assert!(run(&instance, &env, &cfg).is_err());
    }

    #[test]
    fn follower_copies_center_with_relay_lag_bit_for_bit() {
        // Path 0-1-2 with hub...center at one end exercises hops > 1.
        let graph = CommGraph::new(3, &[(0, 1), (1, 2)], 2).unwrap();
        let instance = Instance::new(graph, 4).unwrap();
        assert_eq!(instance.assignment.center_count(), 1);
        let center = instance.assignment.centers().next().unwrap();
        for algorithm in [Algorithm::Cftrl, Algorithm::CenterExp3] {
            let cfg = base_cfg(algorithm, 4, 80, 9);
            let (_, dists) =
                run_capturing_dists(&instance, &EnvironmentSpec::StochasticBernoulli, &cfg)
                    .unwrap();
            let d = instance.graph.edge_delay();
            for v in 0..3 {
                if v == center {
                    continue;
                }
                let hops = instance.assignment.dist(v);
                for t in 1..=80u64 {
                    let got = &dists[(t - 1) as usize][v];
                    if t <= hops * d {
                        assert!(got.iter().all(|p| (*p - 0.25).abs() <= 1e-15));
                    } else {
                        let want = &dists[(t - hops * d - 1) as usize][center];
                        assert_eq!(got, want, "{algorithm} agent {v} at t={t}");
                    }
                }
            }
        }
    }
}
