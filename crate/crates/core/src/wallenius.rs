//! Wallenius' noncentral hypergeometric distribution.
//!
//! Items are drawn one at a time without replacement; an item of group `i` is
//! taken with probability proportional to `ω_i` among those still in the urn.
//! The coalition budget is spread over strata with the (approximate) mean of
//! this distribution, rounded to integers that sum to the budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::binomial;

/// `c` groups with `m_i` items of weight `ω_i` each; `n` items are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnSpec {
    m: Vec<u64>,
    omega: Vec<f64>,
    n: u64,
}

impl UrnSpec {
    pub fn new(m: Vec<u64>, omega: Vec<f64>, n: u64) -> Result<Self> {
        if m.is_empty() || m.len() != omega.len() {
            return Err(Error::invalid("urn needs matching, nonempty m and ω"));
        }
        if m.contains(&0) {
            return Err(Error::invalid("every group needs at least one item"));
        }
        if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("weights ω must be positive and finite"));
        }
        let total: u64 = m.iter().sum();
        if n > total {
            return Err(Error::invalid(format!("cannot draw {n} items from {total}")));
        }
        Ok(Self { m, omega, n })
    }

    pub fn groups(&self) -> usize {
        self.m.len()
    }

    pub fn sizes(&self) -> &[u64] {
        &self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.omega
    }

    pub fn draws(&self) -> u64 {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.m.iter().sum()
    }
}

/// `p_W(x) = Π C(m_i, x_i) ∫₀¹ Π (1 − t^{ω_i/d})^{x_i} dt`, `d = Σ ω_i (m_i − x_i)`.
pub fn wallenius_pmf(x: &[u64], urn: &UrnSpec) -> Result<f64> {
    if x.len() != urn.groups() {
        return Err(Error::invalid(format!("x has {} groups, urn has {}", x.len(), urn.groups())));
    }
    if x.iter().zip(&urn.m).any(|(xi, mi)| xi > mi) || x.iter().sum::<u64>() != urn.n {
        return Err(Error::invalid(format!("x = {x:?} is not in the support")));
    }
    let d: f64 = urn
        .omega
        .iter()
        .zip(&urn.m)
        .zip(x)
        .map(|((w, m), xi)| w * (m - xi) as f64)
        .sum();
    if d == 0.0 {
        if urn.n == urn.total() {
            return Ok(1.0);
        }
        return Err(Error::DegenerateUrn(format!("d = 0 while drawing {} of {}", urn.n, urn.total())));
    }
    let log_coef: f64 = x
        .iter()
        .zip(&urn.m)
        .map(|(&xi, &mi)| (binomial(mi as usize, xi as usize) as f64).ln())
        .sum();
    let exponents: Vec<(f64, f64)> = urn
        .omega
        .iter()
        .zip(x)
        .filter(|(_, &xi)| xi > 0)
        .map(|(w, &xi)| (w / d, xi as f64))
        .collect();
    if exponents.is_empty() {
        return Ok(log_coef.exp());
    }
    let integrand = |t: f64| {
        if t <= 0.0 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        let log_t = t.ln();
        let s: f64 = exponents
            .iter()
            .map(|&(r, xi)| xi * (-(r * log_t).exp()).ln_1p())
            .sum();
        s.exp()
    };
    // Absolute tolerance of 1e-10 on the probability, not on the raw integral.
    let tol = (1e-10 * (-log_coef).exp()).max(1e-300);
    let out = quadrature::double_exponential::integrate(integrand, 0.0, 1.0, tol);
    Ok((log_coef + out.integral.ln()).exp().clamp(0.0, 1.0))
}

/// Approximate mean: `μ_i = m_i (1 − θ^{ω_i})` with `θ` solving `Σ μ_i = n`.
///
/// Solved in `τ = ln θ` by bisection run to floating-point resolution.
pub fn wallenius_mean(urn: &UrnSpec) -> Vec<f64> {
    let n = urn.n as f64;
    if urn.n == 0 {
        return vec![0.0; urn.groups()];
    }
    if urn.n == urn.total() {
        return urn.m.iter().map(|&m| m as f64).collect();
    }
    let max_w = urn.omega.iter().fold(0.0f64, |a, &w| a.max(w));
    let rel: Vec<f64> = urn.omega.iter().map(|w| w / max_w).collect();
    let drawn = |tau: f64| -> f64 {
        urn.m
            .iter()
            .zip(&rel)
            .map(|(&m, &w)| -(m as f64) * (w * tau).exp_m1())
            .sum()
    };
    // drawn(τ) rises from 0 at τ = 0 towards Σm as τ → −∞.
    let mut lo = -1.0;
    while drawn(lo) < n {
        lo *= 2.0;
        if lo < -1e300 {
            break;
        }
    }
    let mut hi = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if drawn(mid) < n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let tau = if (drawn(lo) - n).abs() <= (drawn(hi) - n).abs() { lo } else { hi };
    urn.m
        .iter()
        .zip(&rel)
        .map(|(&m, &w)| (-(m as f64) * (w * tau).exp_m1()).clamp(0.0, m as f64))
        .collect()
}

/// How expected draw counts become integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Floor, then hand the shortfall to the largest fractional parts. `Σ x = n`.
    #[default]
    LargestRemainder,
    /// Round each coordinate independently; the total may drift from `n`.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mu: Vec<f64>,
    pub x: Vec<u64>,
}

pub fn allocate_integer(urn: &UrnSpec) -> Allocation {
    allocate_with(urn, Rounding::LargestRemainder)
}

pub fn allocate_with(urn: &UrnSpec, rounding: Rounding) -> Allocation {
    let mu = wallenius_mean(urn);
    let x = round_counts(&mu, urn.sizes(), urn.n, rounding);
    Allocation { mu, x }
}

/// Integer counts for expected values `mu` with caps `m` and target total `n`.
pub fn round_counts(mu: &[f64], m: &[u64], n: u64, rounding: Rounding) -> Vec<u64> {
    match rounding {
        Rounding::Nearest => mu
            .iter()
            .zip(m)
            .map(|(&u, &cap)| (u.round().max(0.0) as u64).min(cap))
            .collect(),
        Rounding::LargestRemainder => {
            let mut x: Vec<u64> = mu.iter().zip(m).map(|(&u, &cap)| (u.floor().max(0.0) as u64).min(cap)).collect();
            let mut order: Vec<usize> = (0..mu.len()).collect();
            // Largest fractional part first; ties go to the lower index.
            order.sort_by(|&a, &b| {
                let fa = mu[a] - mu[a].floor();
                let fb = mu[b] - mu[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            let mut total: u64 = x.iter().sum();
            while total < n {
                let before = total;
                for &i in &order {
                    if total == n {
                        break;
                    }
                    if x[i] < m[i] {
                        x[i] += 1;
                        total += 1;
                    }
                }
                if total == before {
                    break;
                }
            }
            while total > n {
                let i = (0..x.len())
                    .filter(|&i| x[i] > 0)
                    .min_by(|&a, &b| (mu[a] - x[a] as f64).total_cmp(&(mu[b] - x[b] as f64)))
                    .expect("total > n implies a positive count");
                x[i] -= 1;
                total -= 1;
            }
            x
        }
    }
}
