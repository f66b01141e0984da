//! Paired, stratified coalition sampling without replacement.
//!
//! Coalitions are grouped by size. Each coalition `S` is paired with its
//! complement, so only strata of size `s < p − s` are sampled directly; for
//! even `p` the middle stratum is halved by taking the masks that contain
//! feature 0 as representatives. The pair budget is spread over the strata with
//! the Wallenius mean (weight per pair `2 k(p, s)`), and each stratum is then an
//! independent simple random sample of pairs. Every sampled row carries the
//! inverse of its stratum inclusion probability in its weight.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::{binomial, full_bits, kernel_weight, CoalitionMask, KernelWeightTable, DEFAULT_ANCHOR_WEIGHT, MAX_FEATURES};
use crate::wallenius::{allocate_with, Rounding, UrnSpec};

/// One sampled stratum: representatives of size `size` and their complements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStratum {
    pub size: usize,
    /// Number of distinct pairs in the stratum.
    pub pairs: u64,
    /// Middle stratum of an even `p`: representatives contain feature 0.
    pub canonical_half: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingStructure {
    p: usize,
    strata: Vec<PairStratum>,
}

impl PairingStructure {
    pub fn feature_count(&self) -> usize {
        self.p
    }

    pub fn strata(&self) -> &[PairStratum] {
        &self.strata
    }

    pub fn pair(&self, mask: CoalitionMask) -> CoalitionMask {
        mask.complement()
    }

    /// Whether `mask` is the sampled side of its pair.
    pub fn is_representative(&self, mask: CoalitionMask) -> bool {
        let s = mask.size();
        if s == 0 || s >= self.p {
            return false;
        }
        2 * s < self.p || (2 * s == self.p && mask.contains(0))
    }

    /// The `index`-th representative of stratum `stratum`, in ascending bit order.
    pub fn representative(&self, stratum: usize, index: u64) -> CoalitionMask {
        let st = self.strata[stratum];
        debug_assert!(index < st.pairs);
        let bits = if st.canonical_half {
            1 | (unrank_subset(st.size - 1, index) << 1)
        } else {
            unrank_subset(st.size, index)
        };
        CoalitionMask::from_raw(bits, self.p)
    }

    pub fn stratum_of(&self, mask: CoalitionMask) -> Option<usize> {
        let s = mask.size().min(self.p - mask.size());
        self.strata.iter().position(|st| st.size == s)
    }
}

/// The `index`-th `k`-subset of the naturals in ascending order of its bit pattern.
fn unrank_subset(k: usize, mut index: u64) -> u32 {
    let mut bits = 0u32;
    let mut top = MAX_FEATURES;
    for i in (1..=k).rev() {
        let mut c = top - 1;
        while binomial(c, i) > index {
            c -= 1;
        }
        bits |= 1 << c;
        index -= binomial(c, i);
        top = c;
    }
    bits
}

pub fn build_pairing(p: usize) -> Result<PairingStructure> {
    if p < 2 {
        return Err(Error::invalid(format!("pairing needs p >= 2, got {p}")));
    }
    if p > MAX_FEATURES {
        return Err(Error::Capacity {
            what: "feature count",
            value: p,
            limit: MAX_FEATURES,
        });
    }
    let strata = (1..=p / 2)
        .map(|s| {
            if 2 * s == p {
                PairStratum {
                    size: s,
                    pairs: binomial(p - 1, s - 1),
                    canonical_half: true,
                }
            } else {
                PairStratum {
                    size: s,
                    pairs: binomial(p, s),
                    canonical_half: false,
                }
            }
        })
        .collect();
    Ok(PairingStructure { p, strata })
}

/// Allocation of pairs to one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedStratum {
    pub size: usize,
    /// Pairs available (`m_s`).
    pub population: u64,
    /// Per-pair Wallenius weight `k(p,s) + k(p,p−s)`.
    pub weight: f64,
    /// Expected pairs drawn under the Wallenius mean.
    pub expected: f64,
    /// Pairs actually drawn (`x_s`).
    pub draws: u64,
    /// `x_s / m_s`.
    pub inclusion_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub rounding: Rounding,
    pub anchor_weight: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            rounding: Rounding::LargestRemainder,
            anchor_weight: DEFAULT_ANCHOR_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    p: usize,
    budget: u64,
    anchor_weight: f64,
    strata: Vec<PlannedStratum>,
}

impl SamplingPlan {
    pub fn feature_count(&self) -> usize {
        self.p
    }

    /// Requested coalition budget, anchors included.
    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn strata(&self) -> &[PlannedStratum] {
        &self.strata
    }

    pub fn anchor_weight(&self) -> f64 {
        self.anchor_weight
    }

    /// Pairs drawn over all strata.
    pub fn pair_draws(&self) -> u64 {
        self.strata.iter().map(|s| s.draws).sum()
    }

    /// Coalitions in a realized sample, anchors included.
    pub fn realized_coalitions(&self) -> u64 {
        2 * self.pair_draws() + 2
    }

    /// Coalitions sampled besides the two anchors.
    pub fn sampled_coalitions(&self) -> u64 {
        2 * self.pair_draws()
    }
}

pub fn plan_sample(p: usize, n_total: u64) -> Result<SamplingPlan> {
    plan_sample_with(p, n_total, PlanOptions::default())
}

/// `n_total` counts every coalition in the sample, including the empty and grand ones.
pub fn plan_sample_with(p: usize, n_total: u64, options: PlanOptions) -> Result<SamplingPlan> {
    let pairing = build_pairing(p)?;
    let population = 1u64 << p;
    if n_total < 4 || !(n_total - 2).is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "coalition budget {n_total} must be at least 4 with an even number of non-anchor coalitions"
        )));
    }
    if n_total > population {
        return Err(Error::invalid(format!("coalition budget {n_total} exceeds 2^{p} = {population}")));
    }
    let sizes: Vec<u64> = pairing.strata.iter().map(|s| s.pairs).collect();
    let weights = pairing
        .strata
        .iter()
        .map(|s| Ok(kernel_weight(p, s.size)? + kernel_weight(p, p - s.size)?))
        .collect::<Result<Vec<f64>>>()?;
    let urn = UrnSpec::new(sizes, weights.clone(), (n_total - 2) / 2)?;
    let alloc = allocate_with(&urn, options.rounding);
    let strata = pairing
        .strata
        .iter()
        .enumerate()
        .map(|(i, st)| PlannedStratum {
            size: st.size,
            population: st.pairs,
            weight: weights[i],
            expected: alloc.mu[i],
            draws: alloc.x[i],
            inclusion_probability: alloc.x[i] as f64 / st.pairs as f64,
        })
        .collect();
    Ok(SamplingPlan {
        p,
        budget: n_total,
        anchor_weight: options.anchor_weight,
        strata,
    })
}

/// One row of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub mask: CoalitionMask,
    /// Index into the plan's strata; `None` for the anchors.
    pub stratum: Option<usize>,
    /// Index into [`CoalitionSample::pairs`]; `None` for the anchors.
    pub pair: Option<usize>,
    pub inclusion_probability: f64,
    /// `k(p, |S|) / π(S)`.
    pub weight: f64,
}

/// A drawn pair: the representative and its complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledPair {
    pub stratum: usize,
    pub representative: CoalitionMask,
}

/// Realized coalitions, sorted by mask bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionSample {
    p: usize,
    entries: Vec<SampleEntry>,
    pairs: Vec<SampledPair>,
    strata: Vec<PlannedStratum>,
}

impl CoalitionSample {
    pub fn feature_count(&self) -> usize {
        self.p
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn pairs(&self) -> &[SampledPair] {
        &self.pairs
    }

    pub fn strata(&self) -> &[PlannedStratum] {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pair indices drawn from stratum `stratum`.
    pub fn pairs_in(&self, stratum: usize) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.pairs[i].stratum == stratum).collect()
    }

    pub fn weighted_rows(&self) -> impl Iterator<Item = (CoalitionMask, f64)> + '_ {
        self.entries.iter().map(|e| (e.mask, e.weight))
    }
}

pub fn draw_sample(plan: &SamplingPlan, pairing: &PairingStructure, seed: u64) -> Result<CoalitionSample> {
    let p = plan.p;
    if pairing.p != p || pairing.strata.len() != plan.strata.len() {
        return Err(Error::invalid("plan and pairing describe different feature counts"));
    }
    let kernel = KernelWeightTable::with_anchor(p, plan.anchor_weight)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(plan.pair_draws() as usize);
    for (stratum, planned) in plan.strata.iter().enumerate() {
        if planned.draws == 0 {
            continue;
        }
        let mut picked: Vec<u64> = if planned.draws == planned.population {
            (0..planned.population).collect()
        } else {
            rand::seq::index::sample(&mut rng, planned.population as usize, planned.draws as usize)
                .into_iter()
                .map(|i| i as u64)
                .collect()
        };
        picked.sort_unstable();
        pairs.extend(picked.into_iter().map(|i| SampledPair {
            stratum,
            representative: pairing.representative(stratum, i),
        }));
    }
    Ok(assemble_sample(p, &kernel, plan.strata.clone(), pairs))
}

fn assemble_sample(p: usize, kernel: &KernelWeightTable, strata: Vec<PlannedStratum>, pairs: Vec<SampledPair>) -> CoalitionSample {
    let mut entries = Vec::with_capacity(2 * pairs.len() + 2);
    for anchor in [CoalitionMask::empty(p), CoalitionMask::full(p)] {
        entries.push(SampleEntry {
            mask: anchor,
            stratum: None,
            pair: None,
            inclusion_probability: 1.0,
            weight: kernel.weight(anchor.size()),
        });
    }
    for (id, pair) in pairs.iter().enumerate() {
        let pi = strata[pair.stratum].inclusion_probability;
        for mask in [pair.representative, pair.representative.complement()] {
            entries.push(SampleEntry {
                mask,
                stratum: Some(pair.stratum),
                pair: Some(id),
                inclusion_probability: pi,
                weight: kernel.weight(mask.size()) / pi,
            });
        }
    }
    entries.sort_by_key(|e| e.mask.bits());
    CoalitionSample {
        p,
        entries,
        pairs,
        strata,
    }
}

/// One distinct coalition of a with-replacement sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub mask: CoalitionMask,
    pub frequency: u64,
    /// `frequency · Σk / (coalition draws)`, so the expected weight is `k(p, |S|)`.
    pub weight: f64,
}

/// Classic KernelSHAP sample: pairs drawn with replacement, proportional to kernel weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    p: usize,
    draws: u64,
    entries: Vec<FrequencyEntry>,
}

impl FrequencySample {
    pub fn feature_count(&self) -> usize {
        self.p
    }

    /// Non-anchor coalitions drawn, duplicates counted.
    pub fn coalition_draws(&self) -> u64 {
        self.draws
    }

    /// Distinct coalitions, anchors included.
    pub fn entries(&self) -> &[FrequencyEntry] {
        &self.entries
    }

    pub fn unique_coalitions(&self) -> usize {
        self.entries.len()
    }

    pub fn weighted_rows(&self) -> impl Iterator<Item = (CoalitionMask, f64)> + '_ {
        self.entries.iter().map(|e| (e.mask, e.weight))
    }
}

pub fn draw_with_replacement_baseline(p: usize, n_total: u64, seed: u64) -> Result<FrequencySample> {
    draw_with_replacement_anchored(p, n_total, DEFAULT_ANCHOR_WEIGHT, seed)
}

pub fn draw_with_replacement_anchored(p: usize, n_total: u64, anchor_weight: f64, seed: u64) -> Result<FrequencySample> {
    let pairing = build_pairing(p)?;
    if n_total < 4 || !(n_total - 2).is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "coalition budget {n_total} must be at least 4 with an even number of non-anchor coalitions"
        )));
    }
    let kernel = KernelWeightTable::with_anchor(p, anchor_weight)?;
    let pair_weight: Vec<f64> = pairing
        .strata
        .iter()
        .map(|s| kernel.weight(s.size) + kernel.weight(p - s.size))
        .collect();
    let mass: Vec<f64> = pairing
        .strata
        .iter()
        .zip(&pair_weight)
        .map(|(s, w)| s.pairs as f64 * w)
        .collect();
    let total_kernel: f64 = mass.iter().sum();
    let chooser = WeightedIndex::new(&mass).map_err(|e| Error::invalid(e.to_string()))?;
    let pair_draws = (n_total - 2) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = std::collections::BTreeMap::<u32, u64>::new();
    for _ in 0..pair_draws {
        let stratum = chooser.sample(&mut rng);
        let idx = rng.gen_range(0..pairing.strata[stratum].pairs);
        let rep = pairing.representative(stratum, idx);
        *counts.entry(rep.bits()).or_default() += 1;
        *counts.entry(rep.complement().bits()).or_default() += 1;
    }
    let draws = 2 * pair_draws;
    let scale = total_kernel / draws as f64;
    let mut entries = vec![
        FrequencyEntry {
            mask: CoalitionMask::empty(p),
            frequency: 1,
            weight: anchor_weight,
        },
        FrequencyEntry {
            mask: CoalitionMask::full(p),
            frequency: 1,
            weight: anchor_weight,
        },
    ];
    entries.extend(counts.into_iter().map(|(bits, frequency)| FrequencyEntry {
        mask: CoalitionMask::from_raw(bits, p),
        frequency,
        weight: frequency as f64 * scale,
    }));
    entries.sort_by_key(|e| e.mask.bits());
    debug_assert!(entries.iter().all(|e| e.mask.bits() <= full_bits(p)));
    Ok(FrequencySample { p, draws, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn pairing_for_three_features() {
        let pairing = build_pairing(3).unwrap();
        assert_eq!(pairing.strata().len(), 1);
        assert_eq!(pairing.strata()[0].size, 1);
        for i in 0..3 {
            let rep = pairing.representative(0, i);
            assert_eq!(rep.size(), 1);
            assert_eq!(pairing.pair(rep).size(), 2);
        }
    }

    #[test]
    fn middle_stratum_for_four_features() {
        let pairing = build_pairing(4).unwrap();
        let sizes: Vec<_> = pairing.strata().iter().map(|s| s.size).collect();
        assert_eq!(sizes, vec![1, 2]);
        assert_eq!(pairing.strata()[1].pairs, 3);
        let reps: Vec<_> = (0..3).map(|i| pairing.representative(1, i)).collect();
        for r in &reps {
            assert!(r.contains(0) && r.size() == 2);
            assert!(!pairing.pair(*r).contains(0));
        }
        // The six size-2 masks are covered exactly once by reps and their complements.
        let mut all: Vec<u32> = reps.iter().flat_map(|r| [r.bits(), r.complement().bits()]).collect();
        all.sort_unstable();
        let mut expected: Vec<u32> = (0u32..16).filter(|b| b.count_ones() == 2).collect();
        expected.sort_unstable();
        assert_eq!(all, expected);
    }

    #[test]
    fn pairing_for_six_features() {
        let pairing = build_pairing(6).unwrap();
        let sizes: Vec<_> = pairing.strata().iter().map(|s| (s.size, s.pairs)).collect();
        assert_eq!(sizes, vec![(1, 6), (2, 15), (3, 10)]);
        assert!(pairing.strata()[2].canonical_half);
    }

    #[test]
    fn unranking_is_ascending_and_complete() {
        for p in 2..=9 {
            let pairing = build_pairing(p).unwrap();
            let mut seen = HashSet::new();
            for (s, st) in pairing.strata().iter().enumerate() {
                let reps: Vec<u32> = (0..st.pairs).map(|i| pairing.representative(s, i).bits()).collect();
                assert!(reps.windows(2).all(|w| w[0] < w[1]));
                for r in reps {
                    assert!(seen.insert(r));
                    assert!(seen.insert(!r & full_bits(p)));
                }
            }
            assert_eq!(seen.len() as u64, (1u64 << p) - 2);
        }
    }

    #[test]
    fn small_study_plan() {
        let plan = plan_sample(5, 16).unwrap();
        assert_eq!(plan.pair_draws(), 7);
        assert_eq!(plan.realized_coalitions(), 16);
        let pops: Vec<_> = plan.strata().iter().map(|s| s.population).collect();
        assert_eq!(pops, vec![5, 10]);
        for s in plan.strata() {
            if s.draws > 0 {
                assert!(s.inclusion_probability > 0.0 && s.inclusion_probability <= 1.0);
            }
        }
    }

    #[test]
    fn full_budget_plan() {
        for p in [3, 4, 5] {
            let plan = plan_sample(p, 1 << p).unwrap();
            assert!(plan.strata().iter().all(|s| s.draws == s.population && s.inclusion_probability == 1.0));
            let sample = draw_sample(&plan, &build_pairing(p).unwrap(), 1).unwrap();
            assert_eq!(sample.len(), 1 << p);
        }
    }

    #[test]
    fn infeasible_budgets() {
        assert!(plan_sample(5, 15).is_err());
        assert!(plan_sample(5, 2).is_err());
        assert!(plan_sample(3, 10).is_err());
    }

    #[test]
    fn seeds_change_membership_not_counts() {
        let plan = plan_sample(5, 16).unwrap();
        let pairing = build_pairing(5).unwrap();
        let a = draw_sample(&plan, &pairing, 1).unwrap();
        let b = draw_sample(&plan, &pairing, 2).unwrap();
        let counts = |s: &CoalitionSample| (0..2).map(|i| s.pairs_in(i).len()).collect::<Vec<_>>();
        assert_eq!(counts(&a), counts(&b));
        assert_ne!(a.entries(), b.entries());
        assert_eq!(a, draw_sample(&plan, &pairing, 1).unwrap());
    }

    #[test]
    fn sample_rows_are_paired_and_weighted() {
        let plan = plan_sample(6, 30).unwrap();
        let pairing = build_pairing(6).unwrap();
        let sample = draw_sample(&plan, &pairing, 5).unwrap();
        let masks: HashSet<u32> = sample.entries().iter().map(|e| e.mask.bits()).collect();
        assert_eq!(masks.len(), sample.len());
        for e in sample.entries() {
            assert!(masks.contains(&e.mask.complement().bits()));
            let k = kernel_weight(6, e.mask.size()).unwrap();
            assert_eq!(e.weight, k / e.inclusion_probability);
        }
    }

    #[test]
    fn baseline_frequencies() {
        let s = draw_with_replacement_baseline(5, 16, 3).unwrap();
        let non_anchor: u64 = s.entries().iter().filter(|e| !e.mask.is_anchor()).map(|e| e.frequency).sum();
        assert_eq!(non_anchor, 14);
        assert_eq!(s.coalition_draws(), 14);
        let two = draw_with_replacement_baseline(2, 8, 9).unwrap();
        assert_eq!(two.unique_coalitions(), 4);
        assert!(two.entries().iter().filter(|e| !e.mask.is_anchor()).all(|e| e.frequency == 3));
    }
}
