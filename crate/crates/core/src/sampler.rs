//! Forward sampler for the generative model, used to build synthetic claim
//! sets with known ground truth.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::claims::{Claim, ClaimSet, ObjectDomain};
use crate::error::{Error, Result};
use crate::priors::Hyperparams;

/// Realised stick-breaking weights λ_1..λ_L plus the mass left on the stick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickWeights {
    pub weights: Vec<f64>,
    pub remainder: f64,
}

impl StickWeights {
    /// Draw a group index; `weights.len()` denotes the remainder bucket.
    pub fn sample_group<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u: f64 = rng.random();
        for (l, &w) in self.weights.iter().enumerate() {
            if u < w {
                return l;
            }
            u -= w;
        }
        self.weights.len()
    }
}

/// Draw from Beta(1, κ) by inversion: 1 − U^{1/κ}.
fn sample_stick<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    1.0 - u.powf(1.0 / kappa)
}

/// GEM(κ) weights truncated after `max_groups` sticks.
pub fn sample_gem_weights<R: Rng + ?Sized>(
    kappa: f64,
    max_groups: usize,
    rng: &mut R,
) -> Result<StickWeights> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidHyperparams(format!("kappa must be positive, got {kappa}")));
    }
    if max_groups == 0 {
        return Err(Error::InvalidInput("max_groups must be at least 1".into()));
    }
    let mut weights = Vec::with_capacity(max_groups);
    let mut remaining = 1.0;
    for _ in 0..max_groups {
        let rho = sample_stick(kappa, rng);
        weights.push(rho * remaining);
        remaining *= 1.0 - rho;
    }
    Ok(StickWeights { weights, remainder: remaining })
}

/// Ground truth of a synthetic draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub group_of_source: Vec<usize>,
    pub stick_weights: Option<StickWeights>,
    pub group_general_reliability: Vec<f64>,
    /// `[group][object]`
    pub object_specific_reliability: Vec<Vec<bool>>,
    pub true_values: Vec<usize>,
    /// `[group][object][value]`
    pub observation_params: Vec<Vec<Vec<f64>>>,
}

impl SyntheticTruth {
    /// Fraction of each source's claims that match the true value; `None`
    /// for sources without claims.
    pub fn source_accuracies(&self, claims: &ClaimSet) -> Vec<Option<f64>> {
        (0..claims.num_sources())
            .map(|n| {
                let row = claims.row(n);
                if row.is_empty() {
                    return None;
                }
                let hits = row.iter().filter(|c| self.true_values[c.object] == c.value).count();
                Some(hits as f64 / row.len() as f64)
            })
            .collect()
    }
}

/// Shape of a synthetic data set.
#[derive(Debug, Clone)]
pub struct SynthesisShape {
    pub num_objects: usize,
    pub domain_sizes: Vec<usize>,
    /// Probability that any given (source, object) pair carries a claim.
    pub density: f64,
}

impl SynthesisShape {
    pub fn uniform(num_objects: usize, domain_size: usize, density: f64) -> Self {
        Self {
            num_objects,
            domain_sizes: vec![domain_size; num_objects],
            density,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_objects == 0 {
            return Err(Error::InvalidInput("need at least one object".into()));
        }
        if self.domain_sizes.len() != self.num_objects {
            return Err(Error::InvalidInput(format!(
                "{} domain sizes for {} objects",
                self.domain_sizes.len(),
                self.num_objects
            )));
        }
        if let Some(m) = self.domain_sizes.iter().position(|&k| k < 2) {
            return Err(Error::InvalidInput(format!(
                "object {m} has a degenerate domain (size < 2)"
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "claim density must lie in (0, 1], got {}",
                self.density
            )));
        }
        Ok(())
    }
}

/// Fixed group structure: consecutive blocks of sources with given sizes and
/// fixed general reliabilities, bypassing the stick-breaking and Beta draws.
#[derive(Debug, Clone)]
pub struct PlantedGroups {
    pub sizes: Vec<usize>,
    pub reliability: Vec<f64>,
}

/// Sample the full generative process with `num_sources` sources. Groups
/// come from L = `h.truncation` sticks, with the leftover mass lumped into
/// one extra group.
pub fn sample_dataset<R: Rng + ?Sized>(
    h: &Hyperparams,
    num_sources: usize,
    shape: &SynthesisShape,
    rng: &mut R,
) -> Result<(ClaimSet, SyntheticTruth)> {
    h.validate()?;
    shape.validate()?;
    if num_sources == 0 {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    let sticks = sample_gem_weights(h.kappa, h.truncation, rng)?;
    let num_groups = h.truncation + 1;
    let groups: Vec<usize> = (0..num_sources).map(|_| sticks.sample_group(rng)).collect();
    let reliability_prior = rand_distr::Beta::new(h.b1, h.b0)
        .map_err(|e| Error::InvalidHyperparams(e.to_string()))?;
    let u: Vec<f64> = (0..num_groups).map(|_| reliability_prior.sample(rng)).collect();
    generate(h, groups, Some(sticks), u, shape, rng)
}

/// Sample with a planted group structure.
pub fn sample_planted<R: Rng + ?Sized>(
    h: &Hyperparams,
    planted: &PlantedGroups,
    shape: &SynthesisShape,
    rng: &mut R,
) -> Result<(ClaimSet, SyntheticTruth)> {
    h.validate()?;
    shape.validate()?;
    if planted.sizes.len() != planted.reliability.len() || planted.sizes.is_empty() {
        return Err(Error::InvalidInput(
            "planted groups need one reliability per group".into(),
        ));
    }
    if planted.reliability.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::InvalidInput("planted reliabilities must lie in [0, 1]".into()));
    }
    let groups: Vec<usize> = planted
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(l, &size)| std::iter::repeat_n(l, size))
        .collect();
    if groups.is_empty() {
        return Err(Error::InvalidInput("need at least one source".into()));
    }
    generate(h, groups, None, planted.reliability.clone(), shape, rng)
}

fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // all gamma draws underflowed; put the mass on the largest count
        let best = alpha
            .iter()
            .enumerate()
            .fold(0, |b, (i, &a)| if a > alpha[b] { i } else { b });
        draws.iter_mut().enumerate().for_each(|(i, x)| *x = if i == best { 1.0 } else { 0.0 });
    }
    draws
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (k, &p) in probs.iter().enumerate() {
        if u < p {
            return k;
        }
        u -= p;
    }
    probs.len() - 1
}

fn generate<R: Rng + ?Sized>(
    h: &Hyperparams,
    group_of_source: Vec<usize>,
    stick_weights: Option<StickWeights>,
    reliability: Vec<f64>,
    shape: &SynthesisShape,
    rng: &mut R,
) -> Result<(ClaimSet, SyntheticTruth)> {
    let num_groups = reliability.len();
    let m_count = shape.num_objects;

    let object_specific: Vec<Vec<bool>> = reliability
        .iter()
        .map(|&u| (0..m_count).map(|_| rng.random::<f64>() < u).collect())
        .collect();
    let true_values: Vec<usize> = shape
        .domain_sizes
        .iter()
        .map(|&k| rng.random_range(0..k))
        .collect();
    let mut observation_params = Vec::with_capacity(num_groups);
    for l in 0..num_groups {
        let mut row = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let counts =
                h.dirichlet_prior_counts(object_specific[l][m], true_values[m], shape.domain_sizes[m])?;
            row.push(sample_dirichlet(&counts, rng));
        }
        observation_params.push(row);
    }

    let mut claims = Vec::new();
    for (n, &g) in group_of_source.iter().enumerate() {
        for m in 0..m_count {
            if shape.density < 1.0 && rng.random::<f64>() >= shape.density {
                continue;
            }
            let value = sample_categorical(&observation_params[g][m], rng);
            claims.push(Claim { source: n, object: m, value });
        }
    }

    let source_ids = (0..group_of_source.len()).map(|n| format!("s{n}")).collect();
    let objects = shape
        .domain_sizes
        .iter()
        .enumerate()
        .map(|(m, &k)| ObjectDomain::new(format!("o{m}"), (0..k).map(|v| format!("v{v}")).collect()))
        .collect::<Result<Vec<_>>>()?;
    let cs = ClaimSet::new(source_ids, objects, claims)?;
    let truth = SyntheticTruth {
        group_of_source,
        stick_weights,
        group_general_reliability: reliability,
        object_specific_reliability: object_specific,
        true_values,
        observation_params,
    };
    Ok((cs, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn tiny_kappa_puts_mass_on_first_stick() {
        let w = sample_gem_weights(1e-6, 5, &mut rng(1)).unwrap();
        assert!(w.weights[0] > 1.0 - 1e-9);
    }

    #[test]
    fn weights_and_remainder_sum_to_one() {
        let w = sample_gem_weights(1.0, 30, &mut rng(2)).unwrap();
        let total: f64 = w.weights.iter().sum::<f64>() + w.remainder;
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.weights.iter().all(|&x| x >= 0.0));
        assert!(sample_gem_weights(0.0, 3, &mut rng(2)).is_err());
        assert!(sample_gem_weights(1.0, 0, &mut rng(2)).is_err());
    }

    #[test]
    fn first_stick_mean_is_inverse_one_plus_kappa() {
        let kappa = 5.0;
        let draws = 100_000;
        let mut r = rng(3);
        let samples: Vec<f64> = (0..draws)
            .map(|_| sample_gem_weights(kappa, 1, &mut r).unwrap().weights[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        // Var Beta(1, κ) = κ / ((1+κ)^2 (2+κ))
        let sd = (kappa / ((1.0 + kappa).powi(2) * (2.0 + kappa))).sqrt();
        let se = sd / (draws as f64).sqrt();
        assert!((mean - 1.0 / 6.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn full_density_gives_every_pair() {
        let h = Hyperparams::default();
        let (cs, truth) = sample_dataset(&h, 3, &SynthesisShape::uniform(4, 3, 1.0), &mut rng(4)).unwrap();
        assert_eq!(cs.num_claims(), 12);
        for row in &truth.observation_params {
            for p in row {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&x| x >= 0.0));
            }
        }
        assert!(truth.group_general_reliability.iter().all(|u| (0.0..=1.0).contains(u)));
        assert!(truth.true_values.iter().all(|&t| t < 3));
    }

    #[test]
    fn degenerate_domains_rejected() {
        let h = Hyperparams::default();
        let shape = SynthesisShape::uniform(4, 1, 1.0);
        assert!(sample_dataset(&h, 3, &shape, &mut rng(5)).is_err());
        let shape = SynthesisShape::uniform(4, 2, 0.0);
        assert!(sample_dataset(&h, 3, &shape, &mut rng(5)).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let h = Hyperparams::default();
        let shape = SynthesisShape::uniform(20, 3, 0.5);
        let (a, ta) = sample_dataset(&h, 10, &shape, &mut rng(6)).unwrap();
        let (b, tb) = sample_dataset(&h, 10, &shape, &mut rng(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.true_values, tb.true_values);
        assert_eq!(ta.group_of_source, tb.group_of_source);
    }

    #[test]
    fn reliable_claims_agree_with_truth_at_prior_rate() {
        // b1 huge: every group reliable with overwhelming probability
        let h = Hyperparams {
            eta_reliable: 10.0,
            theta_reliable: 1.0,
            b1: 1e6,
            b0: 1e-3,
            ..Hyperparams::default()
        };
        let k = 3usize;
        let mut hits = 0usize;
        let mut total = 0usize;
        let mut r = rng(7);
        while total < 10_000 {
            // one source per dataset keeps claims independent given the prior
            let (cs, truth) = sample_dataset(&h, 1, &SynthesisShape::uniform(50, k, 1.0), &mut r).unwrap();
            for c in cs.claims() {
                total += 1;
                hits += usize::from(truth.true_values[c.object] == c.value);
            }
        }
        let p = 10.0 / (10.0 + (k as f64 - 1.0));
        let rate = hits as f64 / total as f64;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * se, "rate {rate} vs {p}");
        assert!(rate > 1.0 / k as f64);
    }

    #[test]
    fn pair_coassignment_rate_averages_to_law() {
        let h = Hyperparams { kappa: 1.0, truncation: 60, ..Hyperparams::default() };
        let shape = SynthesisShape::uniform(1, 2, 1.0);
        let mut r = rng(8);
        let reps = 400;
        let n = 1000usize;
        let mut mean = 0.0;
        for _ in 0..reps {
            let (_, truth) = sample_dataset(&h, n, &shape, &mut r).unwrap();
            let mut counts = std::collections::HashMap::new();
            for &g in &truth.group_of_source {
                *counts.entry(g).or_insert(0usize) += 1;
            }
            let same: usize = counts.values().map(|&c| c * (c - 1) / 2).sum();
            mean += same as f64 / (n * (n - 1) / 2) as f64;
        }
        mean /= reps as f64;
        // per-dataset fraction ≈ Σ λ_l², whose spread is large; 400 reps keep
        // the mean within a few hundredths of 1/2
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn planted_groups_follow_sizes() {
        let h = Hyperparams { eta_unreliable: 1.0, theta_unreliable: 5.0, ..Hyperparams::default() };
        let planted = PlantedGroups { sizes: vec![3, 2], reliability: vec![0.0, 1.0] };
        let (cs, truth) =
            sample_planted(&h, &planted, &SynthesisShape::uniform(5, 3, 1.0), &mut rng(9)).unwrap();
        assert_eq!(cs.num_sources(), 5);
        assert_eq!(truth.group_of_source, vec![0, 0, 0, 1, 1]);
        assert!(truth.object_specific_reliability[0].iter().all(|&r| !r));
        assert!(truth.object_specific_reliability[1].iter().all(|&r| r));
    }
}
