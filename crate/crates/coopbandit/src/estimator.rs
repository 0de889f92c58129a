//! Neighborhood-aggregated importance weights and the delayed
//! importance-weighted cumulative loss estimator shared by the cooperative
//! policies.
//!
//! The aggregated weight q(i) is the probability that at least one agent in
//! the closed neighborhood plays arm i under the (delayed) distributions the
//! messages carried. Estimator increments divide the observed loss by q, so
//! one-round increments are unbiased for the true loss.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::solvers::ActionDistribution;

/// One neighbor's message content for a single round: the chosen arm, the
/// loss it incurred, and the distribution it played.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEntry {
    pub agent: usize,
    pub arm: usize,
    pub loss: f64,
    pub dist: Arc<ActionDistribution>,
}

/// The complete round-(t - d) view an agent receives at round t: one entry
/// per member of its closed neighborhood (own message included; the engine
/// routes it through the same delay queue).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSnapshot {
    pub round: u64,
    pub entries: Vec<SnapshotEntry>,
}

impl NeighborhoodSnapshot {
    pub fn new(round: u64, entries: Vec<SnapshotEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::parameter("neighborhood snapshot must be non-empty"));
        }
        for e in &entries {
            if !(0.0..=1.0).contains(&e.loss) {
                return Err(Error::parameter(format!(
                    "snapshot loss {} outside [0,1]",
                    e.loss
                )));
            }
            if e.arm >= e.dist.len() {
                return Err(Error::parameter("snapshot arm id out of range"));
            }
        }
        Ok(NeighborhoodSnapshot { round, entries })
    }
}

/// Per-agent cumulative importance-weighted loss estimate. Coordinates are
/// nondecreasing over rounds and remain all-zero until the first delivery
/// round t = d + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCumLoss {
    values: Vec<f64>,
    last_applied_round: u64,
}

impl ObservedCumLoss {
    pub fn new(k: usize) -> Self {
        ObservedCumLoss {
            values: vec![0.0; k],
            last_applied_round: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The latest round whose delivery has been folded in.
    pub fn last_applied_round(&self) -> u64 {
        self.last_applied_round
    }
}

/// Probability that at least one of the given distributions selects `arm`:
/// q = 1 - prod_u (1 - p_u(arm)).
///
/// Computed through log1p so products of many near-one complements do not
/// cancel catastrophically, then clamped to [max_u p_u(arm), 1], the exact
/// range of the mathematical value.
pub fn aggregate_importance_weight(dists: &[&ActionDistribution], arm: usize) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::parameter(
            "importance weight needs at least one distribution",
        ));
    }
    let mut max_p = 0.0f64;
    let mut log_miss = 0.0f64;
    let mut saturated = false;
    for d in dists {
        let p = *d
            .probs()
            .get(arm)
            .ok_or_else(|| Error::parameter(format!("arm {arm} out of range")))?;
        max_p = max_p.max(p);
        if p >= 1.0 - 1e-12 {
            saturated = true;
        } else {
            log_miss += (-p).ln_1p();
        }
    }
    if saturated {
        return Ok(1.0);
    }
    let q = -log_miss.exp_m1();
    Ok(q.clamp(max_p, 1.0))
}

/// Folds the round-(t - d) snapshot into the cumulative estimate.
///
/// For every arm chosen by some neighborhood member in the snapshot the
/// increment is loss / q(arm), with q aggregated over the distributions the
/// messages carried; arms nobody chose are untouched. Rounds t <= d carry no
/// snapshot and leave the values unchanged.
pub fn update_estimate(
    state: &mut ObservedCumLoss,
    snapshot: Option<&NeighborhoodSnapshot>,
    t: u64,
    d: u64,
) -> Result<()> {
    if state.last_applied_round + 1 != t {
        return Err(Error::protocol(format!(
            "estimator update for round {t} but last applied round is {}",
            state.last_applied_round
        )));
    }
    match snapshot {
        None => {
            if t > d {
                return Err(Error::protocol(format!(
                    "round {t} > delay {d} requires a snapshot"
                )));
            }
        }
        Some(snap) => {
            if t <= d {
                return Err(Error::protocol(format!(
                    "round {t} <= delay {d} cannot have a delivery yet"
                )));
            }
            if snap.round + d != t {
                return Err(Error::protocol(format!(
                    "snapshot from round {} delivered at round {t} with delay {d}",
                    snap.round
                )));
            }
            let dists: Vec<&ActionDistribution> =
                snap.entries.iter().map(|e| e.dist.as_ref()).collect();
            // The indicator semantics: one increment per *arm* in the chosen
            // set, no matter how many agents picked it.
            let mut seen = vec![false; state.values.len()];
            for e in &snap.entries {
                if e.arm >= state.values.len() {
                    return Err(Error::protocol(format!(
                        "snapshot arm {} out of range for {} arms",
                        e.arm,
                        state.values.len()
                    )));
                }
                if seen[e.arm] {
                    continue;
                }
                seen[e.arm] = true;
                let q = aggregate_importance_weight(&dists, e.arm)?;
                state.values[e.arm] += e.loss / q;
            }
        }
    }
    state.last_applied_round = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(probs: &[f64]) -> Arc<ActionDistribution> {
        Arc::new(ActionDistribution::new(probs.to_vec()).unwrap())
    }

    fn random_dist(k: usize, rng: &mut ChaCha8Rng) -> Arc<ActionDistribution> {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        dist(&raw.iter().map(|x| x / sum).collect::<Vec<_>>())
    }

    #[test]
    fn aggregate_weight_examples() {
        let a = dist(&[0.3, 0.7]);
        let q = aggregate_importance_weight(&[a.as_ref()], 0).unwrap();
        assert!((q - 0.3).abs() <= 1e-15);

        let b = dist(&[0.5, 0.5]);
        let q = aggregate_importance_weight(&[b.as_ref(), b.as_ref(), b.as_ref()], 0).unwrap();
        assert!((q - 0.875).abs() <= 1e-15);

        let nearly_one = dist(&[1.0 - 1e-13, 1e-13]);
        let q = aggregate_importance_weight(&[nearly_one.as_ref(), a.as_ref()], 0).unwrap();
        assert_eq!(q, 1.0);

        assert!(aggregate_importance_weight(&[], 0).is_err());
        assert!(aggregate_importance_weight(&[a.as_ref()], 5).is_err());
    }

    #[test]
    fn update_before_first_delivery_is_identity() {
        let mut cum = ObservedCumLoss::new(4);
        update_estimate(&mut cum, None, 1, 5).unwrap();
        update_estimate(&mut cum, None, 2, 5).unwrap();
        assert!(cum.values().iter().all(|v| *v == 0.0));
        assert_eq!(cum.last_applied_round(), 2);
    }

    #[test]
    fn update_increments_observed_arm_by_loss_over_q() {
        let mut cum = ObservedCumLoss::new(2);
        for t in 1..=1 {
            update_estimate(&mut cum, None, t, 1).unwrap();
        }
        let snap = NeighborhoodSnapshot::new(
            1,
            vec![SnapshotEntry {
                agent: 0,
                arm: 0,
                loss: 0.4,
                dist: dist(&[0.8, 0.2]),
            }],
        )
        .unwrap();
        update_estimate(&mut cum, Some(&snap), 2, 1).unwrap();
        assert!((cum.values()[0] - 0.5).abs() <= 1e-15);
        assert_eq!(cum.values()[1], 0.0, "unchosen arms stay untouched");
    }

    #[test]
    fn duplicate_arm_choices_increment_once() {
        let mut cum = ObservedCumLoss::new(2);
        update_estimate(&mut cum, None, 1, 1).unwrap();
        let d = dist(&[0.5, 0.5]);
        let snap = NeighborhoodSnapshot::new(
            1,
            vec![
                SnapshotEntry {
                    agent: 0,
                    arm: 0,
                    loss: 1.0,
                    dist: d.clone(),
                },
                SnapshotEntry {
                    agent: 1,
                    arm: 0,
                    loss: 1.0,
                    dist: d.clone(),
                },
            ],
        )
        .unwrap();
        update_estimate(&mut cum, Some(&snap), 2, 1).unwrap();
        let q = 0.75; // 1 - 0.5^2
        assert!((cum.values()[0] - 1.0 / q).abs() <= 1e-12);
    }

    #[test]
    fn round_mismatches_are_protocol_errors() {
        let mut cum = ObservedCumLoss::new(2);
        let snap = NeighborhoodSnapshot::new(
            3,
            vec![SnapshotEntry {
                agent: 0,
                arm: 0,
                loss: 0.0,
                dist: dist(&[0.5, 0.5]),
            }],
        )
        .unwrap();
        // Skipping a round.
        assert!(update_estimate(&mut cum, None, 2, 1).is_err());
        update_estimate(&mut cum, None, 1, 1).unwrap();
        // Wrong source round for the delivery.
        assert!(update_estimate(&mut cum, Some(&snap), 2, 1).is_err());
        // Delivery before it is possible.
        assert!(update_estimate(&mut cum, Some(&snap), 2, 5).is_err());
    }

    #[test]
    fn one_round_increment_is_unbiased_and_has_matching_second_moment() {
        // Three agents with fixed distributions; Monte Carlo over joint arm
        // draws must match the closed-form moments to four standard errors.
        let k = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dists = [
            random_dist(k, &mut rng),
            random_dist(k, &mut rng),
            random_dist(k, &mut rng),
        ];
        let losses: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let dist_refs: Vec<&ActionDistribution> = dists.iter().map(|d| d.as_ref()).collect();
        let q: Vec<f64> = (0..k)
            .map(|i| aggregate_importance_weight(&dist_refs, i).unwrap())
            .collect();

        let samples = 100_000;
        let mut sums = vec![0.0; k];
        let mut sq_sums = vec![0.0; k];
        for _ in 0..samples {
            let chosen: Vec<usize> = dists
                .iter()
                .map(|d| d.sample_with(rng.random::<f64>()))
                .collect();
            for i in 0..k {
                if chosen.contains(&i) {
                    let inc = losses[i] / q[i];
                    sums[i] += inc;
                    sq_sums[i] += inc * inc;
                }
            }
        }
        for i in 0..k {
            let mean = sums[i] / samples as f64;
            let second = sq_sums[i] / samples as f64;
            let var_mean = (second - mean * mean).max(0.0) / samples as f64;
            let se = var_mean.sqrt();
            assert!(
                (mean - losses[i]).abs() <= 4.0 * se + 1e-12,
                "bias at arm {i}: {mean} vs {}",
                losses[i]
            );
            let target_second = losses[i] * losses[i] / q[i];
            // Standard error of the second-moment estimate via its fourth
            // moment: Var(x^2)/n with x^2 Bernoulli-scaled.
            let fourth = (losses[i] / q[i]).powi(2) * target_second;
            let se2 = ((fourth - target_second * target_second).max(0.0) / samples as f64).sqrt();
            assert!(
                (second - target_second).abs() <= 4.0 * se2 + 1e-12,
                "second moment at arm {i}: {second} vs {target_second}"
            );
        }
    }

    proptest! {
        #[test]
        fn q_dominates_each_member_and_grows_with_neighborhood(
            raw in proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, 3), 1..6),
            arm in 0usize..3,
        ) {
            let dists: Vec<Arc<ActionDistribution>> = raw
                .iter()
                .map(|w| {
                    let sum: f64 = w.iter().sum();
                    dist(&w.iter().map(|x| x / sum).collect::<Vec<_>>())
                })
                .collect();
            let refs: Vec<&ActionDistribution> = dists.iter().map(|d| d.as_ref()).collect();
            let q = aggregate_importance_weight(&refs, arm).unwrap();
            for d in &refs {
                prop_assert!(q >= d.probs()[arm]);
            }
            prop_assert!(q <= 1.0 && q > 0.0);
            // Adding one more agent never decreases q.
            let mut extended = refs.clone();
            let extra = dist(&[0.2, 0.3, 0.5]);
            extended.push(extra.as_ref());
            let q_ext = aggregate_importance_weight(&extended, arm).unwrap();
            prop_assert!(q_ext >= q - 1e-15);
        }
    }
}
