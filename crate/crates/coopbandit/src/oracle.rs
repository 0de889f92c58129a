//! Independent brute-force and statistical oracles used by the test suite
//! and the `verify` CLI subcommand.
//!
//! The projected-gradient reference minimizer shares no numerical code with
//! the fixed-point solvers it certifies: it works from the raw objective and
//! gradient with its own simplex projection, and every result is checked
//! against its KKT residual before being reported.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::aggregate_importance_weight;
use crate::graph::{independence_number, CommGraph};
use crate::policy::stability_threshold;
use crate::sim::CenterTrace;
use crate::solvers::{ActionDistribution, LossVector};

/// Regularizer selector for the reference minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerSpec {
    Tsallis { eta: f64 },
    Hybrid { eta: f64, zeta: f64 },
    Negentropy { eta: f64 },
}

impl RegularizerSpec {
    fn gradient_into(&self, p: &[f64], losses: &[f64], out: &mut [f64]) {
        match *self {
            RegularizerSpec::Tsallis { eta } => {
                for i in 0..p.len() {
                    out[i] = losses[i] - 1.0 / (eta * p[i].sqrt());
                }
            }
            RegularizerSpec::Hybrid { eta, zeta } => {
                for i in 0..p.len() {
                    out[i] = losses[i] - 1.0 / (eta * p[i].sqrt()) + (p[i].ln() + 1.0) / zeta;
                }
            }
            RegularizerSpec::Negentropy { eta } => {
                for i in 0..p.len() {
                    out[i] = losses[i] + (p[i].ln() + 1.0) / eta;
                }
            }
        }
    }
}

/// Per-coordinate stationarity residual of `p` for <p, L> + F(p) on the
/// simplex: the gradient of an interior optimum is constant across
/// coordinates, so the residual is the largest deviation from the mean.
pub fn kkt_residual(losses: &LossVector, reg: &RegularizerSpec, p: &ActionDistribution) -> f64 {
    let mut grad = vec![0.0; p.len()];
    reg.gradient_into(p.probs(), losses.values(), &mut grad);
    let mean = grad.iter().sum::<f64>() / grad.len() as f64;
    grad.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max)
}

const PGD_MAX_ITERS: usize = 5_000;
const PGD_CERT_RESIDUAL: f64 = 1e-8;

/// Reference minimizer of <p, L> + F(p) over the simplex.
///
/// Projected gradient descent restricted to the simplex tangent plane
/// (the projection of the gradient is just mean-centering there), with
/// conjugate (Polak-Ribiere) search directions and an exact line search by
/// bisection on the directional derivative. The derivative-driven search is
/// immune to objective round-off, and a fraction-to-the-boundary cap keeps
/// every coordinate strictly positive, so no iterate ever touches the region
/// where the regularizer gradient blows up. The result must certify at KKT
/// residual <= 1e-8; failure to certify is an oracle error, never a silent
/// pass.
pub fn pgd_argmin_oracle(
    losses: &LossVector,
    reg: &RegularizerSpec,
    tolerance: f64,
) -> Result<ActionDistribution> {
    let k = losses.len();
    let l = losses.values();
    if k == 1 {
        return ActionDistribution::new(vec![1.0]);
    }
    let centered_grad = |p: &[f64], out: &mut Vec<f64>| {
        out.resize(k, 0.0);
        reg.gradient_into(p, l, out);
        let mean = out.iter().sum::<f64>() / k as f64;
        for g in out.iter_mut() {
            *g -= mean;
        }
    };
    let target = (PGD_CERT_RESIDUAL.max(tolerance)) * 1e-2;

    let mut p = vec![1.0 / k as f64; k];
    let mut grad = Vec::with_capacity(k);
    let mut prev_grad: Vec<f64> = Vec::new();
    let mut direction: Vec<f64> = Vec::new();
    let mut probe = vec![0.0; k];
    let mut probe_grad = Vec::with_capacity(k);
    let mut best = p.clone();
    let mut best_residual = f64::INFINITY;
    let mut capped_last = true;

    for _ in 0..PGD_MAX_ITERS {
        centered_grad(&p, &mut grad);
        let residual = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if residual < best_residual {
            best_residual = residual;
            best.copy_from_slice(&p);
        }
        if best_residual <= target {
            break;
        }

        // Conjugate direction; plain steepest descent after a boundary-capped
        // step or when conjugacy degenerates.
        let mut use_steepest = capped_last || prev_grad.is_empty();
        if !use_steepest {
            let num: f64 = grad.iter().zip(&prev_grad).map(|(g, o)| g * (g - o)).sum();
            let den: f64 = prev_grad.iter().map(|o| o * o).sum();
            let beta = (num / den).max(0.0);
            for (d, g) in direction.iter_mut().zip(&grad) {
                *d = -g + beta * *d;
            }
            let descent: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
            if descent >= 0.0 || descent.is_nan() {
                use_steepest = true;
            }
        }
        if use_steepest {
            direction.clear();
            direction.extend(grad.iter().map(|g| -g));
        }
        prev_grad = grad.clone();

        // Fraction to the boundary: no coordinate loses more than half its
        // mass in one step.
        let mut gamma_hi = f64::INFINITY;
        for i in 0..k {
            if direction[i] < 0.0 {
                gamma_hi = gamma_hi.min(p[i] / (-2.0 * direction[i]));
            }
        }
        debug_assert!(
            gamma_hi.is_finite(),
            "a nonzero tangent direction must shrink something"
        );

        // phi'(gamma) = <grad(p + gamma d), d> is strictly increasing; find
        // its zero by expansion plus bisection, or stop at the cap.
        let slope_at = |gamma: f64, probe: &mut Vec<f64>, pg: &mut Vec<f64>| -> f64 {
            probe.clear();
            probe.extend(p.iter().zip(&direction).map(|(x, d)| x + gamma * d));
            centered_grad(probe, pg);
            pg.iter().zip(&direction).map(|(g, d)| g * d).sum()
        };
        let mut lo = 0.0f64;
        let mut hi = gamma_hi;
        let capped = slope_at(gamma_hi, &mut probe, &mut probe_grad) <= 0.0;
        let gamma = if capped {
            gamma_hi
        } else {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if slope_at(mid, &mut probe, &mut probe_grad) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-18 * gamma_hi {
                    break;
                }
            }
            0.5 * (lo + hi)
        };
        capped_last = capped;

        for i in 0..k {
            p[i] = (p[i] + gamma * direction[i]).max(1e-300);
        }
        let total: f64 = p.iter().sum();
        for x in p.iter_mut() {
            *x /= total;
        }
        if gamma == 0.0 {
            break;
        }
    }

    if best_residual <= PGD_CERT_RESIDUAL.max(tolerance) {
        Ok(ActionDistribution::new(best)?)
    } else {
        Err(Error::Oracle(format!(
            "projected gradient failed to certify: kkt residual {best_residual}"
        )))
    }
}

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub check: String,
    pub instance: String,
    pub oracle_value: f64,
    pub implementation_value: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn csv_header() -> &'static str {
        "check,instance,oracle_value,implementation_value,discrepancy,tolerance,pass"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.check,
            self.instance,
            self.oracle_value,
            self.implementation_value,
            self.discrepancy,
            self.tolerance,
            self.pass
        )
    }
}

/// Verifies the independence-number inequality
/// sum_i sum_v p_v(i)^(3/2) / q_v(i) <= N sqrt((1/(1-1/e)) (alpha/N + 1/K) K)
/// for one (graph, distribution profile) instance, with exact alpha.
pub fn independence_inequality_check(
    graph: &CommGraph,
    dists: &[ActionDistribution],
) -> Result<OracleReport> {
    let n = graph.n_agents();
    if dists.len() != n {
        return Err(Error::parameter("need one distribution per agent"));
    }
    let k = dists[0].len();
    let alpha = independence_number(graph);
    let mut lhs = 0.0;
    for v in 0..n {
        let neighborhood = graph.closed_neighborhood(v)?;
        let members: Vec<&ActionDistribution> = neighborhood.iter().map(|&u| &dists[u]).collect();
        for i in 0..k {
            let q = aggregate_importance_weight(&members, i)?;
            lhs += dists[v].probs()[i].powf(1.5) / q;
        }
    }
    let ratio = alpha.value as f64 / n as f64 + 1.0 / k as f64;
    let rhs = n as f64 * ((1.0 / (1.0 - (-1.0f64).exp())) * ratio * k as f64).sqrt();
    let pass = lhs <= rhs * (1.0 + 1e-12);
    Ok(OracleReport {
        check: "independence_inequality".into(),
        instance: format!("n={n} k={k} alpha={}", alpha.value),
        oracle_value: rhs,
        implementation_value: lhs,
        discrepancy: (lhs / rhs).max(0.0),
        tolerance: 1.0 + 1e-12,
        pass,
    })
}

/// Relative slack absorbing solver round-off in the stability comparisons.
const STABILITY_SLACK: f64 = 1e-9;

/// Checks the multiplicative stability bounds (delta = 2) on a Tsallis-FTRL
/// trace: for every round and arm,
/// (1 - 3 eta lhat_t(i)) p_t(i) <= p_{t+1}(i) <= 2 p_t(i).
/// The bounds are guaranteed when eta <= (1 - 1/sqrt(2)) / (2^(3d/2) sqrt(K)).
pub fn stability_check(trace: &CenterTrace, delay: u64) -> OracleReport {
    let k = trace.probs.first().map(Vec::len).unwrap_or(0);
    let threshold = stability_threshold(k, delay);
    let admissible = trace.eta <= threshold;
    let mut worst: f64 = 0.0;
    let mut first_violation: Option<(usize, usize)> = None;
    for t in 0..trace.increments.len() {
        for i in 0..k {
            let cur = trace.probs[t][i];
            let next = trace.probs[t + 1][i];
            let upper_excess = next - 2.0 * cur * (1.0 + STABILITY_SLACK);
            let lower_floor = (1.0 - 3.0 * trace.eta * trace.increments[t][i]) * cur;
            let lower_excess = lower_floor - next - STABILITY_SLACK * cur;
            let excess = upper_excess.max(lower_excess);
            if excess > worst {
                worst = excess;
                if first_violation.is_none() && excess > 0.0 {
                    first_violation = Some((t + 1, i));
                }
            }
        }
    }
    let pass = first_violation.is_none();
    let instance = match first_violation {
        Some((t, i)) => format!(
            "k={k} d={delay} eta={} admissible={admissible} first_violation=(t={t},arm={i})",
            trace.eta
        ),
        None => format!("k={k} d={delay} eta={} admissible={admissible}", trace.eta),
    };
    OracleReport {
        check: "stability".into(),
        instance,
        oracle_value: threshold,
        implementation_value: trace.eta,
        discrepancy: worst.max(0.0),
        tolerance: 0.0,
        pass,
    }
}

/// Monte Carlo check of the estimator moments: over independent joint arm
/// draws from the given neighborhood distributions, the one-round increment
/// for every arm must match loss(i) in mean and loss(i)^2 / q(i) in second
/// moment to within four standard errors.
pub fn estimator_moment_check(
    dists: &[ActionDistribution],
    losses: &[f64],
    samples: usize,
    seed: u64,
) -> Result<OracleReport> {
    if samples < 10_000 {
        return Err(Error::parameter("moment check needs at least 10^4 samples"));
    }
    if dists.is_empty() {
        return Err(Error::parameter("moment check needs a neighborhood"));
    }
    let k = losses.len();
    let refs: Vec<&ActionDistribution> = dists.iter().collect();
    let q: Vec<f64> = (0..k)
        .map(|i| aggregate_importance_weight(&refs, i))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hit_counts = vec![0u64; k];
    for _ in 0..samples {
        let mut hit = vec![false; k];
        for d in &refs {
            hit[d.sample_with(rng.random::<f64>())] = true;
        }
        for i in 0..k {
            if hit[i] {
                hit_counts[i] += 1;
            }
        }
    }

    // The increment is (loss/q) * Bernoulli(q); both moment checks reduce to
    // the hit-rate estimate scaled by the appropriate constant.
    let mut max_sigmas: f64 = 0.0;
    for i in 0..k {
        let rate = hit_counts[i] as f64 / samples as f64;
        let se_rate = (q[i] * (1.0 - q[i]) / samples as f64).sqrt();

        let mean = rate * losses[i] / q[i];
        let mean_se = se_rate * losses[i] / q[i];
        let mean_err = (mean - losses[i]).abs();
        let sig_mean = if mean_se > 0.0 {
            mean_err / mean_se
        } else if mean_err > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };

        let factor = (losses[i] / q[i]) * (losses[i] / q[i]);
        let second = rate * factor;
        let second_se = se_rate * factor;
        let target = losses[i] * losses[i] / q[i];
        let second_err = (second - target).abs();
        let sig_second = if second_se > 0.0 {
            second_err / second_se
        } else if second_err > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };

        max_sigmas = max_sigmas.max(sig_mean).max(sig_second);
    }
    Ok(OracleReport {
        check: "estimator_moments".into(),
        instance: format!(
            "neighbors={} k={k} samples={samples} seed={seed}",
            dists.len()
        ),
        oracle_value: 0.0,
        implementation_value: max_sigmas,
        discrepancy: max_sigmas,
        tolerance: 4.0,
        pass: max_sigmas <= 4.0,
    })
}

/// Instance counts for the oracle suite.
#[derive(Debug, Clone, Copy)]
pub struct SuiteScale {
    pub solver_instances: usize,
    pub independence_instances: usize,
    pub moment_instances: usize,
    pub moment_samples: usize,
    pub stability_horizon: u64,
}

impl SuiteScale {
    pub fn full() -> Self {
        SuiteScale {
            solver_instances: 1000,
            independence_instances: 1000,
            moment_instances: 50,
            moment_samples: 100_000,
            stability_horizon: 10_000,
        }
    }

    pub fn quick() -> Self {
        SuiteScale {
            solver_instances: 100,
            independence_instances: 100,
            moment_instances: 10,
            moment_samples: 20_000,
            stability_horizon: 1_000,
        }
    }
}

fn random_loss_vector(k: usize, rng: &mut ChaCha8Rng) -> LossVector {
    LossVector::new((0..k).map(|_| rng.random_range(0.0..50.0)).collect()).unwrap()
}

fn random_distribution(k: usize, rng: &mut ChaCha8Rng) -> ActionDistribution {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    ActionDistribution::new(raw.into_iter().map(|x| x / sum).collect()).unwrap()
}

/// Random connected graph: a uniform random attachment tree plus extra edges.
fn random_connected_graph(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> CommGraph {
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n {
        edges.insert((rng.random_range(0..v), v));
    }
    for _ in 0..extra {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    CommGraph::new(n, &edges, 1).expect("tree plus extras is connected")
}

/// One solver-vs-oracle comparison: the L-infinity gap and both KKT
/// residuals for a random instance.
fn solver_equivalence_reports(index: usize, seed: u64) -> Vec<OracleReport> {
    use crate::solvers::{solve_hybrid, solve_tsallis, HybridConfig, TsallisConfig};
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let k = rng.random_range(2..=8);
    let losses = random_loss_vector(k, &mut rng);
    let eta = 10f64.powf(rng.random_range(-3.0..0.0));
    let zeta = 10f64.powf(rng.random_range(-3.0..0.0));
    let mut out = Vec::with_capacity(4);

    let tsallis = solve_tsallis(&losses, &TsallisConfig::new(eta).unwrap()).unwrap();
    let reg = RegularizerSpec::Tsallis { eta };
    let reference = pgd_argmin_oracle(&losses, &reg, 1e-8).unwrap();
    let gap = tsallis
        .dist
        .probs()
        .iter()
        .zip(reference.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(OracleReport {
        check: "tsallis_vs_pgd".into(),
        instance: format!("i={index} k={k} eta={eta:.6}"),
        oracle_value: reference.probs()[0],
        implementation_value: tsallis.dist.probs()[0],
        discrepancy: gap,
        tolerance: 1e-6,
        pass: gap <= 1e-6,
    });
    let residual = kkt_residual(&losses, &reg, &tsallis.dist);
    out.push(OracleReport {
        check: "tsallis_kkt".into(),
        instance: format!("i={index} k={k} eta={eta:.6}"),
        oracle_value: 0.0,
        implementation_value: residual,
        discrepancy: residual,
        tolerance: 1e-9,
        pass: residual <= 1e-9,
    });

    let hybrid = solve_hybrid(&losses, &HybridConfig::new(eta, zeta).unwrap()).unwrap();
    let reg = RegularizerSpec::Hybrid { eta, zeta };
    let reference = pgd_argmin_oracle(&losses, &reg, 1e-8).unwrap();
    let gap = hybrid
        .probs()
        .iter()
        .zip(reference.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(OracleReport {
        check: "hybrid_vs_pgd".into(),
        instance: format!("i={index} k={k} eta={eta:.6} zeta={zeta:.6}"),
        oracle_value: reference.probs()[0],
        implementation_value: hybrid.probs()[0],
        discrepancy: gap,
        tolerance: 1e-6,
        pass: gap <= 1e-6,
    });
    let residual = kkt_residual(&losses, &reg, &hybrid);
    out.push(OracleReport {
        check: "hybrid_kkt".into(),
        instance: format!("i={index} k={k} eta={eta:.6} zeta={zeta:.6}"),
        oracle_value: 0.0,
        implementation_value: residual,
        discrepancy: residual,
        tolerance: 1e-9,
        pass: residual <= 1e-9,
    });
    out
}

fn independence_inequality_report(index: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x10_0000 + index as u64));
    let n = rng.random_range(1..=12);
    let k = rng.random_range(2..=16);
    let graph = if n == 1 {
        CommGraph::new(1, &[], 1).unwrap()
    } else {
        let extra = rng.random_range(0..2 * n);
        random_connected_graph(n, extra, &mut rng)
    };
    let dists: Vec<ActionDistribution> = (0..n).map(|_| random_distribution(k, &mut rng)).collect();
    let mut report = independence_inequality_check(&graph, &dists).unwrap();
    report.instance = format!("i={index} {}", report.instance);
    report
}

fn moment_report(index: usize, samples: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x20_0000 + index as u64));
    let k = rng.random_range(2..=8);
    let neighbors = rng.random_range(1..=5);
    let dists: Vec<ActionDistribution> = (0..neighbors)
        .map(|_| random_distribution(k, &mut rng))
        .collect();
    let losses: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut report =
        estimator_moment_check(&dists, &losses, samples, seed.wrapping_add(index as u64)).unwrap();
    report.instance = format!("i={index} {}", report.instance);
    report
}

fn stability_report(horizon: u64, seed: u64) -> Result<OracleReport> {
    use crate::policy::{Algorithm, CftrlRateMode};
    use crate::sim::{run_with_center_trace, EnvironmentSpec, Instance, RegretMode, RunConfig};
    let graph = crate::graph::build_regular(3, 2, 7)?;
    let instance = Instance::new(graph, 10)?;
    let center = instance
        .assignment
        .centers()
        .next()
        .expect("triangle has a center");
    let cfg = RunConfig {
        algorithm: Algorithm::Cftrl,
        arms: 10,
        horizon,
        seed,
        regret_mode: RegretMode::Empirical,
        cftrl_rate_mode: CftrlRateMode::Neighborhood,
        stability_clamp: true,
    };
    let (_, trace) = run_with_center_trace(
        &instance,
        &EnvironmentSpec::StochasticBernoulli,
        &cfg,
        center,
    )?;
    Ok(stability_check(&trace, instance.graph.edge_delay()))
}

/// Runs every oracle check at the given scale; reports in a deterministic
/// order regardless of thread count.
pub fn run_full_suite(scale: &SuiteScale, seed: u64) -> Result<Vec<OracleReport>> {
    let mut reports: Vec<OracleReport> = (0..scale.solver_instances)
        .into_par_iter()
        .flat_map_iter(|i| solver_equivalence_reports(i, seed))
        .collect();
    reports.par_extend(
        (0..scale.independence_instances)
            .into_par_iter()
            .map(|i| independence_inequality_report(i, seed)),
    );
    reports.par_extend(
        (0..scale.moment_instances)
            .into_par_iter()
            .map(|i| moment_report(i, scale.moment_samples, seed)),
    );
    reports.push(stability_report(scale.stability_horizon, seed)?);
    Ok(reports)
}
