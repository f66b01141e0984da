//! Kernel weights, coalition masks and the KernelSHAP weighted least-squares system.
//!
//! A coalition row `z` has a leading 1 followed by the membership indicators of
//! the `p` features. The Shapley vector `(phi0, phi)` solves the normal equations
//! `Zᵀ W Z φ = Zᵀ W v`, where `W` holds the kernel weight of each row, divided by
//! the row's inclusion probability when the rows are a sample.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ContributionOracle;
use crate::sampling::CoalitionSample;

/// Widest feature vector a [`CoalitionMask`] can hold.
pub const MAX_FEATURES: usize = 32;

/// Largest `p` for which all `2^p` coalitions may be enumerated.
pub const ENUMERATION_CAP: usize = 25;

/// Weight given to the empty and grand coalitions.
pub const DEFAULT_ANCHOR_WEIGHT: f64 = 1e6;

/// Normal-equations matrices with a larger condition estimate are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// A subset of the feature indices `0..p`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoalitionMask {
    bits: u32,
    p: u8,
}

impl CoalitionMask {
    pub fn new(bits: u32, p: usize) -> Result<Self> {
        if p == 0 || p > MAX_FEATURES {
            return Err(Error::invalid(format!("feature count {p} outside 1..={MAX_FEATURES}")));
        }
        if bits & !full_bits(p) != 0 {
            return Err(Error::invalid(format!("mask {bits:#b} has bits beyond p = {p}")));
        }
        Ok(Self { bits, p: p as u8 })
    }

    /// Builds a mask without validating `bits` against `p`.
    pub(crate) fn from_raw(bits: u32, p: usize) -> Self {
        debug_assert!(p <= MAX_FEATURES && bits & !full_bits(p) == 0);
        Self { bits, p: p as u8 }
    }

    pub fn from_members(members: &[usize], p: usize) -> Result<Self> {
        let mut bits = 0u32;
        for &j in members {
            if j >= p {
                return Err(Error::invalid(format!("feature {j} out of range for p = {p}")));
            }
            bits |= 1 << j;
        }
        Self::new(bits, p)
    }

    pub fn empty(p: usize) -> Self {
        Self::from_raw(0, p)
    }

    pub fn full(p: usize) -> Self {
        Self::from_raw(full_bits(p), p)
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn feature_count(self) -> usize {
        self.p as usize
    }

    /// Number of features in the coalition.
    pub fn size(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn contains(self, j: usize) -> bool {
        j < self.p as usize && self.bits & (1 << j) != 0
    }

    pub fn complement(self) -> Self {
        Self::from_raw(!self.bits & full_bits(self.p as usize), self.p as usize)
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn is_full(self) -> bool {
        self.bits == full_bits(self.p as usize)
    }

    /// Either the empty or the grand coalition.
    pub fn is_anchor(self) -> bool {
        self.is_empty() || self.is_full()
    }

    /// Feature indices in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut rest = self.bits;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(j)
            }
        })
    }
}

impl fmt::Debug for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.members()).finish()
    }
}

pub(crate) fn full_bits(p: usize) -> u32 {
    if p >= 32 {
        u32::MAX
    } else {
        (1u32 << p) - 1
    }
}

/// Binomial coefficient, exact for the ranges used here (`n ≤ 64`).
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Shapley kernel weights indexed by coalition size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeightTable {
    p: usize,
    weights: Vec<f64>,
    anchor_weight: f64,
}

impl KernelWeightTable {
    pub fn new(p: usize) -> Result<Self> {
        Self::with_anchor(p, DEFAULT_ANCHOR_WEIGHT)
    }

    pub fn with_anchor(p: usize, anchor_weight: f64) -> Result<Self> {
        if !(anchor_weight.is_finite() && anchor_weight > 0.0) {
            return Err(Error::invalid(format!("anchor weight must be positive, got {anchor_weight}")));
        }
        let weights = (0..=p)
            .map(|s| kernel_weight_with_anchor(p, s, anchor_weight))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p,
            weights,
            anchor_weight,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.p
    }

    pub fn anchor_weight(&self) -> f64 {
        self.anchor_weight
    }

    /// Weight of a coalition of size `s`; panics if `s > p`.
    pub fn weight(&self, s: usize) -> f64 {
        self.weights[s]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// `k(p, s) = (p − 1) / (C(p, s) · s · (p − s))`, with the default anchor for `s ∈ {0, p}`.
pub fn kernel_weight(p: usize, s: usize) -> Result<f64> {
    kernel_weight_with_anchor(p, s, DEFAULT_ANCHOR_WEIGHT)
}

pub fn kernel_weight_with_anchor(p: usize, s: usize, anchor_weight: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::invalid(format!("kernel needs p >= 2, got {p}")));
    }
    if p > MAX_FEATURES {
        return Err(Error::Capacity {
            what: "feature count",
            value: p,
            limit: MAX_FEATURES,
        });
    }
    if s > p {
        return Err(Error::invalid(format!("coalition size {s} exceeds p = {p}")));
    }
    if s == 0 || s == p {
        return Ok(anchor_weight);
    }
    let denom = binomial(p, s) as f64 * s as f64 * (p - s) as f64;
    Ok((p - 1) as f64 / denom)
}

/// All `2^p` coalitions in ascending integer order of their bit patterns.
pub fn enumerate_coalitions(p: usize) -> Result<Vec<CoalitionMask>> {
    if p < 2 {
        return Err(Error::invalid(format!("enumeration needs p >= 2, got {p}")));
    }
    if p > ENUMERATION_CAP {
        return Err(Error::Capacity {
            what: "feature count for full enumeration",
            value: p,
            limit: ENUMERATION_CAP,
        });
    }
    Ok((0..=full_bits(p)).map(|bits| CoalitionMask::from_raw(bits, p)).collect())
}

/// Weighted rows `(Z, W, v)` of a KernelSHAP problem. `Z` is kept implicit as masks.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsSystem {
    p: usize,
    masks: Vec<CoalitionMask>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

impl WlsSystem {
    pub fn new(masks: Vec<CoalitionMask>, weights: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if masks.len() < 2 {
            return Err(Error::Construction(format!("need at least 2 rows, got {}", masks.len())));
        }
        if masks.len() != weights.len() || masks.len() != values.len() {
            return Err(Error::Construction("rows, weights and values differ in length".into()));
        }
        let p = masks[0].feature_count();
        if masks.iter().any(|m| m.feature_count() != p) {
            return Err(Error::Construction("masks disagree on the feature count".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Construction(format!("row weight {w} is not positive")));
        }
        Ok(Self {
            p,
            masks,
            weights,
            values,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[CoalitionMask] {
        &self.masks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The explicit binary design matrix `Z`, `rows × (p + 1)`.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.p + 1, |i, c| {
            if c == 0 || self.masks[i].contains(c - 1) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Builds the sampled system: one row per sampled coalition, weight `k(p,|S|)/π(S)`,
/// value `v(S)` at `x_star`.
pub fn build_system(sample: &CoalitionSample, oracle: &ContributionOracle, x_star: &[f64]) -> Result<WlsSystem> {
    let p = sample.feature_count();
    if oracle.feature_count() != p || x_star.len() != p {
        return Err(Error::Construction(format!(
            "sample has p = {p}, oracle p = {}, x* length {}",
            oracle.feature_count(),
            x_star.len()
        )));
    }
    for anchor in [CoalitionMask::empty(p), CoalitionMask::full(p)] {
        match sample.entries().iter().find(|e| e.mask == anchor) {
            Some(e) if e.inclusion_probability == 1.0 => {}
            Some(_) => return Err(Error::Construction(format!("anchor {anchor:?} must have π = 1"))),
            None => return Err(Error::Construction(format!("anchor {anchor:?} missing from sample"))),
        }
    }
    let masks: Vec<_> = sample.entries().iter().map(|e| e.mask).collect();
    let weights = sample.entries().iter().map(|e| e.weight).collect();
    let values = masks.iter().map(|&m| oracle.contribution(m, x_star)).collect();
    WlsSystem::new(masks, weights, values)
}

/// Solver diagnostics attached to every explanation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Ratio of extreme eigenvalues of `Zᵀ W Z`.
    pub condition: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyExplanation {
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

impl ShapleyExplanation {
    /// `phi0 + Σ phi`, which should reproduce `f(x*)`.
    pub fn total(&self) -> f64 {
        self.phi0 + self.phi.iter().sum::<f64>()
    }
}

/// Factorized `Zᵀ W Z` for a fixed set of weighted rows.
///
/// Factorizing once and solving for several right-hand sides is how many
/// explained instances share one coalition sample.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    p: usize,
    rows: usize,
    condition: f64,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl NormalEquations {
    pub fn assemble<I>(p: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (CoalitionMask, f64)>,
    {
        let mut count = 0;
        let gram = gram_matrix(p, rows.into_iter().inspect(|_| count += 1));
        Self::factor(p, count, gram)
    }

    fn factor(p: usize, rows: usize, gram: DMatrix<f64>) -> Result<Self> {
        let eigen = gram.clone().symmetric_eigenvalues();
        let max = eigen.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        let min = eigen.iter().fold(f64::INFINITY, |a, &l| a.min(l));
        let condition = if min > 0.0 && max > 0.0 { max / min } else { f64::INFINITY };
        if !condition.is_finite() || condition > CONDITION_LIMIT {
            return Err(Error::Singular {
                condition,
                context: None,
            });
        }
        let factor = gram.cholesky().ok_or(Error::Singular {
            condition,
            context: None,
        })?;
        Ok(Self {
            p,
            rows,
            condition,
            factor,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solves for `Zᵀ W v` given as `rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> ShapleyExplanation {
        let beta = self.factor.solve(rhs);
        ShapleyExplanation {
            phi0: beta[0],
            phi: beta.iter().skip(1).copied().collect(),
            diagnostics: SolverDiagnostics {
                condition: self.condition,
                rows: self.rows,
            },
        }
    }

    pub fn feature_count(&self) -> usize {
        self.p
    }
}

/// `Zᵀ W Z` for rows given as `(mask, weight)`.
pub fn gram_matrix<I>(p: usize, rows: I) -> DMatrix<f64>
where
    I: IntoIterator<Item = (CoalitionMask, f64)>,
{
    let dim = p + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut members = Vec::with_capacity(p);
    for (mask, w) in rows {
        members.clear();
        members.extend(mask.members().map(|j| j + 1));
        gram[(0, 0)] += w;
        for (a, &ja) in members.iter().enumerate() {
            gram[(0, ja)] += w;
            for &jb in &members[a..] {
                gram[(ja, jb)] += w;
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            gram[(r, c)] = gram[(c, r)];
        }
    }
    gram
}

/// `Zᵀ W v` for rows given as `(mask, weight, value)`.
pub fn weighted_moment<I>(p: usize, rows: I) -> DVector<f64>
where
    I: IntoIterator<Item = (CoalitionMask, f64, f64)>,
{
    let mut rhs = DVector::zeros(p + 1);
    for (mask, w, v) in rows {
        let wv = w * v;
        rhs[0] += wv;
        for j in mask.members() {
            rhs[j + 1] += wv;
        }
    }
    rhs
}

/// Solves `(Zᵀ W Z) φ = Zᵀ W v`. Rank-deficient systems are errors.
pub fn solve_shapley(system: &WlsSystem) -> Result<ShapleyExplanation> {
    let rows = system.masks.iter().copied().zip(system.weights.iter().copied());
    let normal = NormalEquations::assemble(system.p, rows)?;
    let rhs = weighted_moment(
        system.p,
        system
            .masks
            .iter()
            .zip(&system.weights)
            .zip(&system.values)
            .map(|((&m, &w), &v)| (m, w, v)),
    );
    Ok(normal.solve(&rhs))
}

/// Ground truth from the full `2^p` system with the default anchor weight.
pub fn exact_shapley(oracle: &ContributionOracle, x_star: &[f64]) -> Result<ShapleyExplanation> {
    let mut out = exact_shapley_many(oracle, &[x_star], DEFAULT_ANCHOR_WEIGHT)?;
    Ok(out.pop().expect("one instance in, one out"))
}

/// Full-enumeration solve for several instances sharing one factorization.
pub fn exact_shapley_many(
    oracle: &ContributionOracle,
    instances: &[&[f64]],
    anchor_weight: f64,
) -> Result<Vec<ShapleyExplanation>> {
    let p = oracle.feature_count();
    if let Some(x) = instances.iter().find(|x| x.len() != p) {
        return Err(Error::invalid(format!("instance has {} features, oracle has {p}", x.len())));
    }
    let masks = enumerate_coalitions(p)?;
    let kernel = KernelWeightTable::with_anchor(p, anchor_weight)?;
    let weights: Vec<f64> = masks.iter().map(|m| kernel.weight(m.size())).collect();
    let normal = NormalEquations::assemble(p, masks.iter().copied().zip(weights.iter().copied()))?;
    let mut rhs = vec![DVector::zeros(p + 1); instances.len()];
    for (&mask, &w) in masks.iter().zip(&weights) {
        let projection = oracle.projection(mask);
        for (x, acc) in instances.iter().zip(rhs.iter_mut()) {
            let wv = w * projection.evaluate(x);
            acc[0] += wv;
            for j in mask.members() {
                acc[j + 1] += wv;
            }
        }
    }
    Ok(rhs.iter().map(|r| normal.solve(r)).collect())
}

/// `φ_j = β_j (x*_j − x̄_j)` and `phi0 = f(x̄)` for a marginal linear oracle.
pub fn closed_form_linear_shapley(oracle: &ContributionOracle, x_star: &[f64]) -> Result<ShapleyExplanation> {
    let model = oracle.marginal_model().ok_or(Error::UnsupportedOracle(
        "closed form needs a marginal linear oracle",
    ))?;
    if x_star.len() != model.beta.len() {
        return Err(Error::invalid(format!(
            "instance has {} features, model has {}",
            x_star.len(),
            model.beta.len()
        )));
    }
    let phi = model
        .beta
        .iter()
        .zip(x_star)
        .zip(&model.feature_means)
        .map(|((b, x), m)| b * (x - m))
        .collect();
    Ok(ShapleyExplanation {
        phi0: model.mean_prediction(),
        phi,
        diagnostics: SolverDiagnostics {
            condition: 1.0,
            rows: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContributionOracle, LinearModel};

    fn linear(beta: Vec<f64>, means: Vec<f64>) -> ContributionOracle {
        ContributionOracle::marginal(LinearModel {
            intercept: 0.5,
            beta,
            feature_means: means,
        })
    }

    /// `(p − 1) / (C(p,s) s (p − s))` with the binomial built from factorials.
    fn kernel_by_factorials(p: usize, s: usize) -> f64 {
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        let choose = fact(p) / (fact(s) * fact(p - s));
        (p as f64 - 1.0) / (choose * s as f64 * (p - s) as f64)
    }

    #[test]
    fn kernel_values() {
        assert!((kernel_weight(5, 1).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(kernel_weight(5, 0).unwrap(), 1e6);
        assert_eq!(kernel_weight(5, 5).unwrap(), 1e6);
        assert_eq!(kernel_weight(4, 1).unwrap(), kernel_weight(4, 3).unwrap());
        for p in 2..=12 {
            for s in 1..p {
                let k = kernel_weight(p, s).unwrap();
                assert!((k - kernel_by_factorials(p, s)).abs() <= 1e-14 * k);
            }
        }
    }

    #[test]
    fn kernel_rejects_bad_arguments() {
        assert!(kernel_weight(1, 0).is_err());
        assert!(kernel_weight(4, 5).is_err());
        assert!(KernelWeightTable::with_anchor(4, 0.0).is_err());
    }

    #[test]
    fn enumeration_small() {
        let masks = enumerate_coalitions(2).unwrap();
        let members: Vec<Vec<usize>> = masks.iter().map(|m| m.members().collect()).collect();
        assert_eq!(members, vec![vec![], vec![0], vec![1], vec![0, 1]]);
        let five = enumerate_coalitions(5).unwrap();
        assert_eq!(five.len(), 32);
        assert_eq!(five.iter().filter(|m| m.size() == 2).count(), 10);
        assert!(matches!(enumerate_coalitions(26), Err(Error::Capacity { .. })));
    }

    #[test]
    fn complements_pair_sizes_one_and_two() {
        let masks = enumerate_coalitions(3).unwrap();
        let ones: Vec<_> = masks.iter().filter(|m| m.size() == 1).collect();
        let mut partners: Vec<_> = ones.iter().map(|m| m.complement()).collect();
        partners.sort();
        let mut twos: Vec<_> = masks.iter().copied().filter(|m| m.size() == 2).collect();
        twos.sort();
        assert_eq!(partners, twos);
    }

    #[test]
    fn constant_game_gives_zero_attribution() {
        let p = 4;
        let masks = enumerate_coalitions(p).unwrap();
        let table = KernelWeightTable::new(p).unwrap();
        let weights = masks.iter().map(|m| table.weight(m.size())).collect();
        let values = vec![3.25; masks.len()];
        let sol = solve_shapley(&WlsSystem::new(masks, weights, values).unwrap()).unwrap();
        assert!((sol.phi0 - 3.25).abs() < 1e-9);
        assert!(sol.phi.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn two_feature_linear_identity() {
        let oracle = linear(vec![2.0, -1.5], vec![0.3, 1.0]);
        let x = [1.3, -1.0];
        let exact = exact_shapley(&oracle, &x).unwrap();
        assert!((exact.phi[0] - 2.0 * 1.0).abs() < 1e-9);
        assert!((exact.phi[1] - (-1.5) * (-2.0)).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_system_is_singular() {
        let p = 4;
        let masks = vec![CoalitionMask::empty(p), CoalitionMask::full(p), CoalitionMask::from_members(&[0], p).unwrap()];
        let system = WlsSystem::new(masks, vec![1e6, 1e6, 0.5], vec![0.0, 1.0, 0.2]).unwrap();
        assert!(solve_shapley(&system).unwrap_err().is_singular());
    }

    #[test]
    fn explaining_the_mean_gives_zero() {
        let means = vec![0.1, -0.4, 2.0];
        let oracle = linear(vec![1.0, 2.0, 3.0], means.clone());
        let sol = exact_shapley(&oracle, &means).unwrap();
        assert!(sol.phi.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn relabeling_features_permutes_attributions() {
        let oracle = linear(vec![1.0, -2.0, 0.5, 4.0], vec![0.0, 1.0, -1.0, 0.5]);
        let x = [0.7, 0.2, 1.1, -0.3];
        let perm = [2, 0, 3, 1];
        let model = oracle.marginal_model().unwrap();
        let permuted = linear(
            perm.iter().map(|&i| model.beta[i]).collect(),
            perm.iter().map(|&i| model.feature_means[i]).collect(),
        );
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let a = exact_shapley(&oracle, &x).unwrap();
        let b = exact_shapley(&permuted, &xp).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((b.phi[k] - a.phi[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_rejects_conditional_oracle() {
        let oracle = ContributionOracle::conditional(
            LinearModel {
                intercept: 0.0,
                beta: vec![1.0, 1.0],
                feature_means: vec![0.0, 0.0],
            },
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(
            closed_form_linear_shapley(&oracle, &[1.0, 1.0]),
            Err(Error::UnsupportedOracle(_))
        ));
    }

    #[test]
    fn solver_is_deterministic() {
        let oracle = linear(vec![0.3, -0.1, 0.8], vec![0.0, 0.0, 0.0]);
        let a = exact_shapley(&oracle, &[1.0, 2.0, 3.0]).unwrap();
        let b = exact_shapley(&oracle, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_complement_round_trip() {
        let m = CoalitionMask::from_members(&[0, 3], 5).unwrap();
        assert_eq!(m.complement().members().collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!(m.complement().complement(), m);
        assert!(CoalitionMask::new(0b100000, 5).is_err());
    }
}
