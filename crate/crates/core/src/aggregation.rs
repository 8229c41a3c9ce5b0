//! Collaborative model selection and cross-aggregation.
//!
//! Each middleware model (the host) is blended with a collaborator (the
//! guest) chosen by one of three strategies: a round-robin rotation, the
//! most similar pool member, or the least similar one. The blend keeps
//! weight `alpha` on the host and gives `1 - alpha` to the guest, with
//! `alpha` in `[0.5, 1.0)`. A propeller variant splits the guest share
//! across two collaborators, and a dynamic schedule can ramp `alpha` up
//! over early rounds.

use crate::error::{Error, Result};
use crate::params::{cosine_similarity, lin_comb, ParamVector, SimilarityVariant};

/// Collaborator selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionKind {
    /// Round-robin: in round `r`, host `i` pairs with
    /// `(i + (r mod (K-1)) + 1) mod K`, so every host meets every other
    /// model exactly once per `K-1` rounds.
    InOrder,
    /// Most similar pool member (excluding the host itself).
    HighestSim,
    /// Least similar pool member (excluding the host itself).
    LowestSim,
}

impl SelectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionKind::InOrder => "in-order",
            SelectionKind::HighestSim => "highest-sim",
            SelectionKind::LowestSim => "lowest-sim",
        }
    }
}

/// Selection rule plus the similarity formula it consults.
///
/// The similarity variant is ignored by [`SelectionKind::InOrder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    pub similarity: SimilarityVariant,
}

impl SelectionStrategy {
    pub fn new(kind: SelectionKind, similarity: SimilarityVariant) -> Self {
        Self { kind, similarity }
    }

    pub fn in_order() -> Self {
        Self::new(SelectionKind::InOrder, SimilarityVariant::Standard)
    }

    pub fn highest_sim() -> Self {
        Self::new(SelectionKind::HighestSim, SimilarityVariant::Standard)
    }

    pub fn lowest_sim() -> Self {
        Self::new(SelectionKind::LowestSim, SimilarityVariant::Standard)
    }
}

/// Picks the collaborator index for `host` in round `round`. Never
/// returns `host` itself; exact similarity ties resolve to the smallest
/// candidate index.
pub fn co_model_select(
    host: usize,
    round: usize,
    pool: &[ParamVector],
    strategy: &SelectionStrategy,
) -> Result<usize> {
    let k = pool.len();
    if k < 2 {
        return Err(Error::PoolTooSmall { size: k });
    }
    debug_assert!(host < k);

    match strategy.kind {
        SelectionKind::InOrder => Ok((host + (round % (k - 1)) + 1) % k),
        SelectionKind::HighestSim | SelectionKind::LowestSim => {
            let mut best: Option<(usize, f64)> = None;
            for candidate in 0..k {
                if candidate == host {
                    continue;
                }
                let sim =
                    cosine_similarity(&pool[host], &pool[candidate], strategy.similarity)?;
                let better = match best {
                    None => true,
                    Some((_, best_sim)) => match strategy.kind {
                        SelectionKind::HighestSim => sim > best_sim,
                        SelectionKind::LowestSim => sim < best_sim,
                        SelectionKind::InOrder => unreachable!(),
                    },
                };
                if better {
                    best = Some((candidate, sim));
                }
            }
            Ok(best.expect("pool has at least one candidate").0)
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0.5, 1.0), got {alpha}")));
    }
    Ok(())
}

/// Weighted fusion `alpha * host + (1 - alpha) * guest`.
pub fn cross_aggr(host: &ParamVector, guest: &ParamVector, alpha: f64) -> Result<ParamVector> {
    check_alpha(alpha)?;
    lin_comb(alpha, host, 1.0 - alpha, guest)
}

/// Cross-aggregation with two guests, each taking half the guest share:
/// `alpha * host + (1-alpha)/2 * guests[0] + (1-alpha)/2 * guests[1]`.
pub fn propeller_aggr(
    host: &ParamVector,
    guests: [&ParamVector; 2],
    alpha: f64,
) -> Result<ParamVector> {
    check_alpha(alpha)?;
    for guest in guests {
        if guest.len() != host.len() {
            return Err(Error::DimensionMismatch { left: host.len(), right: guest.len() });
        }
    }
    let half = (1.0 - alpha) / 2.0;
    let values = host
        .as_slice()
        .iter()
        .zip(guests[0].as_slice())
        .zip(guests[1].as_slice())
        .map(|((&h, &g0), &g1)| alpha * h + half * g0 + half * g1)
        .collect();
    ParamVector::new(values)
}

/// How the host weight evolves over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaPolicyKind {
    /// Constant `alpha` every round.
    Fixed,
    /// Linear ramp from `alpha_start` to `alpha` over `warmup_rounds`.
    DynamicLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPolicy {
    pub kind: AlphaPolicyKind,
    pub alpha: f64,
    pub alpha_start: f64,
    pub warmup_rounds: usize,
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        Self { kind: AlphaPolicyKind::Fixed, alpha: 0.99, alpha_start: 0.5, warmup_rounds: 20 }
    }
}

impl AlphaPolicy {
    pub fn fixed(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_alpha(self.alpha_start)?;
        if self.alpha_start > self.alpha {
            return Err(Error::Config(format!(
                "alpha_start {} must not exceed alpha {}",
                self.alpha_start, self.alpha
            )));
        }
        Ok(())
    }
}

/// Host weight for the given round under `policy`.
pub fn dynamic_alpha(round: usize, policy: &AlphaPolicy) -> f64 {
    match policy.kind {
        AlphaPolicyKind::Fixed => policy.alpha,
        AlphaPolicyKind::DynamicLinear => {
            if round >= policy.warmup_rounds {
                policy.alpha
            } else {
                let progress = round as f64 / policy.warmup_rounds as f64;
                policy.alpha_start + (policy.alpha - policy.alpha_start) * progress
            }
        }
    }
}

/// Weight-normalized elementwise average, the classical aggregation rule.
pub fn fedavg_aggr(models: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if models.is_empty() {
        return Err(Error::EmptyPool);
    }
    if models.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Config("aggregation weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config("aggregation weights must not sum to zero".into()));
    }

    let len = models[0].len();
    let mut acc = vec![0.0; len];
    for (model, &weight) in models.iter().zip(weights) {
        if model.len() != len {
            return Err(Error::DimensionMismatch { left: len, right: model.len() });
        }
        for (a, &v) in acc.iter_mut().zip(model.as_slice()) {
            *a += weight * v;
        }
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    ParamVector::new(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::mean_of;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    fn random_pool(k: usize, dim: usize, seed: u64) -> Vec<ParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| {
                ParamVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect()
    }

    /// Brute-force selection oracle: enumerate all pairwise similarities.
    fn oracle_select(
        host: usize,
        pool: &[ParamVector],
        variant: SimilarityVariant,
        highest: bool,
    ) -> usize {
        let mut best = None;
        for j in 0..pool.len() {
            if j == host {
                continue;
            }
            let sim = cosine_similarity(&pool[host], &pool[j], variant).unwrap();
            best = match best {
                None => Some((j, sim)),
                Some((bj, bs)) => {
                    if (highest && sim > bs) || (!highest && sim < bs) {
                        Some((j, sim))
                    } else {
                        Some((bj, bs))
                    }
                }
            };
        }
        best.unwrap().0
    }

    #[test]
    fn in_order_first_round() {
        let pool = random_pool(4, 3, 0);
        let j = co_model_select(0, 0, &pool, &SelectionStrategy::in_order()).unwrap();
        assert_eq!(j, 1);
    }

    #[test]
    fn in_order_sweeps_every_partner_once() {
        let pool = random_pool(4, 3, 0);
        for host in 0..4 {
            let mut partners: Vec<usize> = (0..3)
                .map(|r| co_model_select(host, r, &pool, &SelectionStrategy::in_order()).unwrap())
                .collect();
            partners.sort_unstable();
            let expected: Vec<usize> = (0..4).filter(|&j| j != host).collect();
            assert_eq!(partners, expected);
        }
    }

    #[test]
    fn similarity_selection_matches_enumeration_oracle() {
        let pool = vec![pv(&[1.0, 0.0]), pv(&[1.0, 0.01]), pv(&[0.0, 1.0])];
        let hi = co_model_select(0, 0, &pool, &SelectionStrategy::highest_sim()).unwrap();
        let lo = co_model_select(0, 0, &pool, &SelectionStrategy::lowest_sim()).unwrap();
        assert_eq!(hi, 1);
        assert_eq!(lo, 2);
        assert_eq!(hi, oracle_select(0, &pool, SimilarityVariant::Standard, true));
        assert_eq!(lo, oracle_select(0, &pool, SimilarityVariant::Standard, false));
    }

    #[test]
    fn similarity_ties_break_to_smallest_index() {
        let a = pv(&[1.0, 0.0]);
        let b = pv(&[0.0, 1.0]);
        // Candidates 1 and 2 are identical; both strategies must pick 1.
        let pool = vec![a, b.clone(), b];
        let hi = co_model_select(0, 0, &pool, &SelectionStrategy::highest_sim()).unwrap();
        let lo = co_model_select(0, 0, &pool, &SelectionStrategy::lowest_sim()).unwrap();
        assert_eq!(hi, 1);
        assert_eq!(lo, 1);
    }

    #[test]
    fn selection_needs_at_least_two_models() {
        let pool = random_pool(1, 3, 0);
        let err = co_model_select(0, 0, &pool, &SelectionStrategy::in_order()).unwrap_err();
        assert!(matches!(err, Error::PoolTooSmall { size: 1 }));
    }

    #[test]
    fn cross_aggr_fixed_point() {
        let w = pv(&[0.3, -1.7, 2.9]);
        for alpha in [0.5, 0.75, 0.99] {
            let out = cross_aggr(&w, &w, alpha).unwrap();
            for i in 0..w.len() {
                assert_relative_eq!(out[i], w[i], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn cross_aggr_symmetric_blend() {
        let out = cross_aggr(&pv(&[2.0, 0.0]), &pv(&[0.0, 2.0]), 0.5).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn cross_aggr_matches_scalar_loop() {
        let host = pv(&[1.0, 1.0]);
        let guest = pv(&[0.0, 0.0]);
        let out = cross_aggr(&host, &guest, 0.99).unwrap();
        for i in 0..2 {
            assert_eq!(out[i], 0.99 * host[i] + 0.01 * guest[i]);
        }
        assert_eq!(out.as_slice(), &[0.99, 0.99]);
    }

    #[test]
    fn cross_aggr_rejects_out_of_range_alpha() {
        let w = pv(&[1.0]);
        for alpha in [0.4, 1.0, 1.5, f64::NAN] {
            assert!(matches!(cross_aggr(&w, &w, alpha), Err(Error::Config(_))));
        }
    }

    #[test]
    fn cross_aggr_contraction() {
        let pool = random_pool(2, 16, 3);
        let (host, guest) = (&pool[0], &pool[1]);
        for alpha in [0.5, 0.8, 0.99] {
            let out = cross_aggr(host, guest, alpha).unwrap();
            let host_guest = host.distance(guest).unwrap();
            assert!(out.distance(guest).unwrap() <= host_guest + 1e-12);
            assert_relative_eq!(
                out.distance(host).unwrap(),
                (1.0 - alpha) * host_guest,
                max_relative = 1e-9,
            );
        }
    }

    #[test]
    fn propeller_with_identical_guests_is_fixed_point() {
        let w = pv(&[1.0, -2.0]);
        let out = propeller_aggr(&w, [&w, &w], 0.8).unwrap();
        for i in 0..w.len() {
            assert_relative_eq!(out[i], w[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn propeller_direct_arithmetic() {
        let host = pv(&[1.0, 1.0]);
        let g0 = pv(&[1.0, 1.0]);
        let g1 = pv(&[3.0, 3.0]);
        let out = propeller_aggr(&host, [&g0, &g1], 0.5).unwrap();
        assert_eq!(out.as_slice(), &[1.5, 1.5]);
    }

    #[test]
    fn propeller_equals_cross_with_guest_mean() {
        let pool = random_pool(3, 24, 4);
        let out = propeller_aggr(&pool[0], [&pool[1], &pool[2]], 0.9).unwrap();
        let mean = mean_of(&pool[1..]).unwrap();
        let expected = cross_aggr(&pool[0], &mean, 0.9).unwrap();
        for i in 0..out.len() {
            assert_relative_eq!(out[i], expected[i], max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn dynamic_alpha_fixed_policy() {
        let policy = AlphaPolicy::fixed(0.95);
        for r in [0, 10, 1000] {
            assert_eq!(dynamic_alpha(r, &policy), 0.95);
        }
    }

    #[test]
    fn dynamic_alpha_linear_ramp() {
        let policy = AlphaPolicy {
            kind: AlphaPolicyKind::DynamicLinear,
            alpha: 0.99,
            alpha_start: 0.5,
            warmup_rounds: 20,
        };
        assert_eq!(dynamic_alpha(0, &policy), 0.5);
        assert_eq!(dynamic_alpha(20, &policy), 0.99);
        assert_eq!(dynamic_alpha(500, &policy), 0.99);
        assert_relative_eq!(
            dynamic_alpha(10, &policy),
            (0.5 + 0.99) / 2.0,
            max_relative = 1e-12,
        );
    }

    #[test]
    fn alpha_policy_validation() {
        assert!(AlphaPolicy::fixed(0.99).validate().is_ok());
        assert!(AlphaPolicy::fixed(0.4).validate().is_err());
        assert!(AlphaPolicy::fixed(1.0).validate().is_err());
        let inverted = AlphaPolicy {
            kind: AlphaPolicyKind::DynamicLinear,
            alpha: 0.6,
            alpha_start: 0.9,
            warmup_rounds: 10,
        };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn fedavg_equal_weights_is_mean() {
        let pool = random_pool(4, 8, 5);
        let avg = fedavg_aggr(&pool, &[1.0; 4]).unwrap();
        let mean = mean_of(&pool).unwrap();
        assert_eq!(avg, mean);
    }

    #[test]
    fn fedavg_degenerate_weight_selects_model() {
        let pool = vec![pv(&[1.0, 2.0]), pv(&[5.0, 6.0])];
        let avg = fedavg_aggr(&pool, &[1.0, 0.0]).unwrap();
        assert_eq!(avg, pool[0]);
    }

    #[test]
    fn fedavg_matches_scalar_oracle() {
        let pool = vec![pv(&[1.0, -2.0]), pv(&[3.0, 4.0])];
        let weights = [30.0, 70.0];
        let avg = fedavg_aggr(&pool, &weights).unwrap();
        for i in 0..2 {
            let expected = (weights[0] * pool[0][i] + weights[1] * pool[1][i])
                / (weights[0] + weights[1]);
            assert_relative_eq!(avg[i], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn fedavg_rejects_bad_weights() {
        let pool = random_pool(2, 4, 6);
        assert!(fedavg_aggr(&pool, &[1.0]).is_err());
        assert!(fedavg_aggr(&pool, &[1.0, -1.0]).is_err());
        assert!(fedavg_aggr(&pool, &[0.0, 0.0]).is_err());
        assert!(fedavg_aggr(&[], &[]).is_err());
    }

    #[test]
    fn in_order_round_preserves_pool_mean() {
        // With the round-robin rule every model appears as guest exactly
        // once, so one aggregation round keeps the pool mean unchanged.
        for k in [2usize, 3, 5, 8] {
            let pool = random_pool(k, 12, 7);
            for round in 0..k {
                let alpha = 0.9;
                let next: Vec<ParamVector> = (0..k)
                    .map(|i| {
                        let j = co_model_select(i, round, &pool, &SelectionStrategy::in_order())
                            .unwrap();
                        cross_aggr(&pool[i], &pool[j], alpha).unwrap()
                    })
                    .collect();
                let before = mean_of(&pool).unwrap();
                let after = mean_of(&next).unwrap();
                for i in 0..before.len() {
                    assert_relative_eq!(before[i], after[i], max_relative = 1e-9, epsilon = 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn selection_never_returns_host(
            seed in 0u64..500,
            k in 2usize..9,
            round in 0usize..20,
        ) {
            let pool = random_pool(k, 6, seed);
            for strategy in [
                SelectionStrategy::in_order(),
                SelectionStrategy::highest_sim(),
                SelectionStrategy::lowest_sim(),
                SelectionStrategy::new(SelectionKind::HighestSim, SimilarityVariant::SumNorm),
            ] {
                for host in 0..k {
                    let j = co_model_select(host, round, &pool, &strategy).unwrap();
                    prop_assert!(j != host);
                    prop_assert!(j < k);
                }
            }
        }

        #[test]
        fn in_order_covers_all_partners(k in 2usize..=16) {
            let pool = random_pool(k, 4, 1);
            for host in 0..k {
                let mut partners: Vec<usize> = (0..k - 1)
                    .map(|r| {
                        co_model_select(host, r, &pool, &SelectionStrategy::in_order()).unwrap()
                    })
                    .collect();
                partners.sort_unstable();
                partners.dedup();
                prop_assert_eq!(partners.len(), k - 1);
            }
        }

        #[test]
        fn similarity_selection_invariant_under_host_scaling(
            seed in 0u64..200,
            scale in prop::sample::select(vec![0.1f64, 0.5, 2.0, 10.0]),
        ) {
            let mut pool = random_pool(5, 8, seed);
            let strategies = [SelectionStrategy::highest_sim(), SelectionStrategy::lowest_sim()];
            let before: Vec<usize> = strategies
                .iter()
                .map(|s| co_model_select(0, 0, &pool, s).unwrap())
                .collect();
            let scaled: Vec<f64> = pool[0].as_slice().iter().map(|v| v * scale).collect();
            pool[0] = ParamVector::new(scaled).unwrap();
            let after: Vec<usize> = strategies
                .iter()
                .map(|s| co_model_select(0, 0, &pool, s).unwrap())
                .collect();
            prop_assert_eq!(before, after);
        }
    }
}
