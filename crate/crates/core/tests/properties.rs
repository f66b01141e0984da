use kshap_wor::bootstrap::{symmetric_counts, symmetric_stratum};
use kshap_wor::sampling::plan_sample;
use kshap_wor::shapley::{binomial, kernel_weight};
use kshap_wor::wallenius::{allocate_integer, round_counts, wallenius_mean, Rounding};
use kshap_wor::{CoalitionMask, UrnSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn urn_strategy() -> impl Strategy<Value = (Vec<u64>, Vec<f64>, u64)> {
    (1usize..5)
        .prop_flat_map(|c| (prop::collection::vec(1u64..8, c), prop::collection::vec(0.05f64..5.0, c)))
        .prop_flat_map(|(m, w)| {
            let total: u64 = m.iter().sum();
            (Just(m), Just(w), 0..=total)
        })
}

proptest! {
    #[test]
    fn kernel_is_symmetric_in_size(p in 2usize..=32, s in 1usize..32) {
        prop_assume!(s < p);
        let a = kernel_weight(p, s).unwrap();
        let b = kernel_weight(p, p - s).unwrap();
        prop_assert!((a - b).abs() <= 1e-15 * a.max(b));
        prop_assert!(a > 0.0);
    }

    #[test]
    fn complement_is_an_involution(p in 1usize..=32, raw in any::<u32>()) {
        let bits = if p == 32 { raw } else { raw & ((1u32 << p) - 1) };
        let mask = CoalitionMask::new(bits, p).unwrap();
        let comp = mask.complement();
        prop_assert_eq!(comp.complement(), mask);
        prop_assert_eq!(mask.size() + comp.size(), p);
        prop_assert_eq!(mask.bits() & comp.bits(), 0);
    }

    #[test]
    fn binomial_row_sums_to_power_of_two(n in 0usize..=32) {
        let total: u64 = (0..=n).map(|k| binomial(n, k)).sum();
        prop_assert_eq!(total, 1u64 << n);
    }

    #[test]
    fn wallenius_mean_is_feasible_and_sums_to_n((m, w, n) in urn_strategy()) {
        let urn = UrnSpec::new(m.clone(), w, n).unwrap();
        let mu = wallenius_mean(&urn);
        let sum: f64 = mu.iter().sum();
        prop_assert!((sum - n as f64).abs() < 1e-8);
        for (x, &cap) in mu.iter().zip(&m) {
            prop_assert!(*x >= -1e-12 && *x <= cap as f64 + 1e-12);
        }
    }

    #[test]
    fn heavier_group_gets_more_draws((m, w, n) in urn_strategy(), bump in 1.1f64..4.0) {
        let before = wallenius_mean(&UrnSpec::new(m.clone(), w.clone(), n).unwrap());
        let mut heavier = w.clone();
        heavier[0] *= bump;
        let after = wallenius_mean(&UrnSpec::new(m, heavier, n).unwrap());
        prop_assert!(after[0] >= before[0] - 1e-9);
    }

    #[test]
    fn rounding_keeps_the_total((m, w, n) in urn_strategy()) {
        let urn = UrnSpec::new(m.clone(), w, n).unwrap();
        let alloc = allocate_integer(&urn);
        prop_assert_eq!(alloc.x.iter().sum::<u64>(), n);
        for (i, (&x, &cap)) in alloc.x.iter().zip(&m).enumerate() {
            prop_assert!(x <= cap);
            prop_assert!((x as f64 - alloc.mu[i]).abs() < 1.0);
        }
        let again = round_counts(&alloc.mu, &m, n, Rounding::LargestRemainder);
        prop_assert_eq!(again, alloc.x);
    }

    #[test]
    fn symmetric_stratum_balances_zeros_and_twos(population in 1u64..60, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let n = 1 + ((population - 1) as f64 * frac) as u64;
        let counts = symmetric_counts(n, population).unwrap();
        prop_assert!(2 * counts.n2_high <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = symmetric_stratum(n, population, &mut rng).unwrap();
        prop_assert_eq!(s.len() as u64, n);
        let zeros = s.iter().filter(|&&v| v == 0).count();
        let twos = s.iter().filter(|&&v| v == 2).count();
        prop_assert_eq!(zeros, twos);
        prop_assert_eq!(s.iter().map(|&v| v as u64).sum::<u64>(), n);
    }

    #[test]
    fn plans_spend_the_budget(p in 2usize..=16, k in 1u64..200) {
        let n_total = 2 + 2 * k;
        prop_assume!(n_total <= 1u64 << p);
        let plan = plan_sample(p, n_total).unwrap();
        prop_assert_eq!(plan.pair_draws(), k);
        prop_assert_eq!(plan.realized_coalitions(), n_total);
        for s in plan.strata() {
            prop_assert!(s.draws <= s.population);
        }
    }
}
