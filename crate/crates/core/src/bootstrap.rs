//! Finite-population bootstrap for a paired, stratified coalition sample.
//!
//! A replicate assigns every drawn pair a multiplicity `S_k ∈ {0, 1, 2}`; both
//! coalitions of the pair share it and the anchors always keep 1. Within a
//! stratum of `n` drawn pairs out of `N`, a valid replicate scheme has
//! `E S_k = 1`, `Var S_k = 1 − n/N` and `Cov(S_k, S_l) = −(1 − n/N)/(n − 1)`.
//!
//! * Symmetric: exactly `n2` pairs get 2 and `n2` get 0, with
//!   `n2 = n(1 − n/N)/2` resolved to a neighbouring integer by a Bernoulli draw.
//! * Doubled half: Bernoulli(`n/N`) selection with multiplicity 1, then half of
//!   the unselected pairs (rounded at random when odd) get 2 and the rest 0.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContributionOracle, ContributionTable};
use crate::sampling::CoalitionSample;
use crate::seed::{derive_seed, stream};
use crate::shapley::{weighted_moment, NormalEquations, ShapleyExplanation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMethod {
    Symmetric,
    DoubledHalf,
}

impl BootstrapMethod {
    pub const ALL: [BootstrapMethod; 2] = [BootstrapMethod::Symmetric, BootstrapMethod::DoubledHalf];

    pub fn name(self) -> &'static str {
        match self {
            BootstrapMethod::Symmetric => "symmetric",
            BootstrapMethod::DoubledHalf => "doubled-half",
        }
    }

    pub fn replicate(self, sample: &CoalitionSample, seed: u64) -> ReplicateWeights {
        match self {
            BootstrapMethod::Symmetric => symmetric_replicate(sample, seed),
            BootstrapMethod::DoubledHalf => doubled_half_replicate(sample, seed),
        }
    }
}

impl fmt::Display for BootstrapMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BootstrapMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "symmetric" => Ok(BootstrapMethod::Symmetric),
            "doubled-half" | "antal-tille" => Ok(BootstrapMethod::DoubledHalf),
            other => Err(Error::invalid(format!("unknown bootstrap method `{other}`"))),
        }
    }
}

/// Number of 0s, 1s and 2s for one stratum of the Symmetric bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricCounts {
    /// Pairs drawn.
    pub n: u64,
    /// Pairs in the stratum.
    pub population: u64,
    /// `n (1 − n/N) / 2`.
    pub n2_real: f64,
    pub n2_low: u64,
    /// `ceil(n2_real)`, capped at `floor(n/2)` so `2 n2 ≤ n`.
    pub n2_high: u64,
    /// Probability of using `n2_high`: the fractional part of `n2_real`.
    pub bern_p: f64,
}

impl SymmetricCounts {
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.bern_p > 0.0 && rng.gen::<f64>() < self.bern_p {
            self.n2_high
        } else {
            self.n2_low
        }
    }

    /// Count of pairs kept once for a given `n2`.
    pub fn ones(&self, n2: u64) -> u64 {
        self.n - 2 * n2
    }
}

pub fn symmetric_counts(n: u64, population: u64) -> Result<SymmetricCounts> {
    if n == 0 || n > population {
        return Err(Error::invalid(format!("need 1 <= n <= N, got n = {n}, N = {population}")));
    }
    let nf = n as f64;
    let n2_real = if n == population {
        0.0
    } else {
        0.5 * nf * (1.0 - nf / population as f64)
    };
    let n2_low = n2_real.floor() as u64;
    let n2_high = (n2_real.ceil() as u64).min(n / 2);
    Ok(SymmetricCounts {
        n,
        population,
        n2_real,
        n2_low,
        n2_high,
        bern_p: n2_real - n2_real.floor(),
    })
}

/// Symmetric multiplicities for one stratum of `n` drawn units out of `population`.
pub fn symmetric_stratum<R: Rng + ?Sized>(n: u64, population: u64, rng: &mut R) -> Result<Vec<u8>> {
    let counts = symmetric_counts(n, population)?;
    let n2 = counts.resolve(rng) as usize;
    let mut out = vec![1u8; n as usize];
    if n2 > 0 {
        let chosen = rand::seq::index::sample(rng, n as usize, 2 * n2);
        for (rank, idx) in chosen.into_iter().enumerate() {
            out[idx] = if rank < n2 { 2 } else { 0 };
        }
    }
    Ok(out)
}

/// Doubled-half multiplicities for one stratum sampled with inclusion probability `pi`.
pub fn doubled_half_stratum<R: Rng + ?Sized>(n: u64, pi: f64, rng: &mut R) -> Vec<u8> {
    let mut out = vec![1u8; n as usize];
    let mut unselected: Vec<usize> = (0..n as usize).filter(|_| !rng.gen_bool(pi.clamp(0.0, 1.0))).collect();
    if unselected.is_empty() {
        return out;
    }
    let mut doubled = unselected.len() / 2;
    if unselected.len() % 2 == 1 && rng.gen_bool(0.5) {
        doubled += 1;
    }
    unselected.shuffle(rng);
    for (rank, &idx) in unselected.iter().enumerate() {
        out[idx] = if rank < doubled { 2 } else { 0 };
    }
    out
}

/// Multiplicities of one bootstrap replicate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateWeights {
    /// Per sampled pair, indexed like [`CoalitionSample::pairs`].
    pub pairs: Vec<u8>,
    /// Per sample entry, indexed like [`CoalitionSample::entries`]; anchors are 1.
    pub entries: Vec<u8>,
}

impl ReplicateWeights {
    fn from_pairs(sample: &CoalitionSample, pairs: Vec<u8>) -> Self {
        let entries = sample.entries().iter().map(|e| e.pair.map_or(1, |id| pairs[id])).collect();
        Self { pairs, entries }
    }
}

fn per_stratum<F>(sample: &CoalitionSample, seed: u64, mut assign: F) -> ReplicateWeights
where
    F: FnMut(usize, usize, &mut ChaCha8Rng) -> Vec<u8>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = vec![1u8; sample.pairs().len()];
    for stratum in 0..sample.strata().len() {
        let ids = sample.pairs_in(stratum);
        if ids.is_empty() {
            continue;
        }
        let mult = assign(stratum, ids.len(), &mut rng);
        for (id, m) in ids.into_iter().zip(mult) {
            pairs[id] = m;
        }
    }
    ReplicateWeights::from_pairs(sample, pairs)
}

pub fn symmetric_replicate(sample: &CoalitionSample, seed: u64) -> ReplicateWeights {
    per_stratum(sample, seed, |stratum, drawn, rng| {
        let population = sample.strata()[stratum].population;
        symmetric_stratum(drawn as u64, population, rng).expect("drawn pairs never exceed the stratum")
    })
}

pub fn doubled_half_replicate(sample: &CoalitionSample, seed: u64) -> ReplicateWeights {
    per_stratum(sample, seed, |stratum, drawn, rng| {
        doubled_half_stratum(drawn as u64, sample.strata()[stratum].inclusion_probability, rng)
    })
}

/// Solves one replicate for every instance in `table`; zero-multiplicity rows are dropped.
pub fn solve_replicate(
    sample: &CoalitionSample,
    table: &ContributionTable,
    weights: &ReplicateWeights,
) -> Result<Vec<ShapleyExplanation>> {
    let p = sample.feature_count();
    let rows: Vec<(usize, f64)> = sample
        .entries()
        .iter()
        .zip(&weights.entries)
        .enumerate()
        .filter(|(_, (_, &m))| m > 0)
        .map(|(i, (e, &m))| (i, e.weight * m as f64))
        .collect();
    let normal = NormalEquations::assemble(p, rows.iter().map(|&(i, w)| (sample.entries()[i].mask, w)))?;
    Ok((0..table.instances())
        .map(|inst| {
            let rhs = weighted_moment(
                p,
                rows.iter().map(|&(i, w)| (sample.entries()[i].mask, w, table.value(i, inst))),
            );
            normal.solve(&rhs)
        })
        .collect())
}

/// Bootstrap standard deviations of `phi` for each instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// `sd[instance][feature]`, sample standard deviation over usable replicates.
    pub sd: Vec<Vec<f64>>,
    /// Replicates whose normal equations were singular.
    pub failures: usize,
    pub replicates: usize,
}

/// Single-instance result of [`bootstrap_sd`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSd {
    pub sd: Vec<f64>,
    pub failures: usize,
}

pub fn bootstrap_sd(
    sample: &CoalitionSample,
    oracle: &ContributionOracle,
    x_star: &[f64],
    replicates: usize,
    method: BootstrapMethod,
    seed: u64,
) -> Result<BootstrapSd> {
    let masks: Vec<_> = sample.entries().iter().map(|e| e.mask).collect();
    let table = ContributionTable::new(oracle, &masks, &[x_star]);
    let mut summary = bootstrap_table(sample, &table, replicates, method, seed)?;
    Ok(BootstrapSd {
        sd: summary.sd.pop().expect("one instance"),
        failures: summary.failures,
    })
}

/// Replicate seeds are `derive_seed(seed, method stream, b)`.
pub fn bootstrap_table(
    sample: &CoalitionSample,
    table: &ContributionTable,
    replicates: usize,
    method: BootstrapMethod,
    seed: u64,
) -> Result<BootstrapSummary> {
    if replicates < 2 {
        return Err(Error::invalid(format!("need at least 2 bootstrap replicates, got {replicates}")));
    }
    let tag = match method {
        BootstrapMethod::Symmetric => stream::SYMMETRIC,
        BootstrapMethod::DoubledHalf => stream::DOUBLED_HALF,
    };
    let seeds: Vec<u64> = (0..replicates as u64).map(|b| derive_seed(seed, tag, b)).collect();
    bootstrap_with_seeds(sample, table, method, &seeds)
}

pub fn bootstrap_with_seeds(
    sample: &CoalitionSample,
    table: &ContributionTable,
    method: BootstrapMethod,
    seeds: &[u64],
) -> Result<BootstrapSummary> {
    if table.rows() != sample.len() {
        return Err(Error::invalid("contribution table does not match the sample rows"));
    }
    let p = sample.feature_count();
    let instances = table.instances();
    let mut sum = vec![vec![0.0; p]; instances];
    let mut sum_sq = vec![vec![0.0; p]; instances];
    let mut shift: Option<Vec<Vec<f64>>> = None;
    let mut ok = 0usize;
    let mut failures = 0usize;
    for &seed in seeds {
        let weights = method.replicate(sample, seed);
        match solve_replicate(sample, table, &weights) {
            Ok(solutions) => {
                // Accumulate around the first replicate to avoid cancellation.
                let origin = shift.get_or_insert_with(|| solutions.iter().map(|s| s.phi.clone()).collect());
                for (inst, sol) in solutions.iter().enumerate() {
                    for j in 0..p {
                        let d = sol.phi[j] - origin[inst][j];
                        sum[inst][j] += d;
                        sum_sq[inst][j] += d * d;
                    }
                }
                ok += 1;
            }
            Err(e) if e.is_singular() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if ok < 2 {
        return Err(Error::EstimationFailed { replicates: seeds.len() });
    }
    let n = ok as f64;
    let sd = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| {
            s.iter()
                .zip(q)
                .map(|(&a, &b)| ((b - a * a / n) / (n - 1.0)).max(0.0).sqrt())
                .collect()
        })
        .collect();
    Ok(BootstrapSummary {
        sd,
        failures,
        replicates: seeds.len(),
    })
}
