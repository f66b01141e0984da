use std::collections::{HashMap, HashSet};

use kshap_wor::sampling::{build_pairing, draw_sample, draw_with_replacement_baseline, plan_sample};
use kshap_wor::shapley::{enumerate_coalitions, gram_matrix, kernel_weight_with_anchor, DEFAULT_ANCHOR_WEIGHT};
use kshap_wor::study::{run_study, DataSource, InstanceSelection};
use kshap_wor::{StudyConfig, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sampled_gram_matrix_is_unbiased() {
    let (p, n_total, draws) = (5, 16, 20_000);
    let full: Vec<_> = enumerate_coalitions(p)
        .unwrap()
        .into_iter()
        .map(|m| (m, kernel_weight_with_anchor(p, m.size(), DEFAULT_ANCHOR_WEIGHT).unwrap()))
        .collect();
    let truth = gram_matrix(p, full);
    let plan = plan_sample(p, n_total).unwrap();
    let pairing = build_pairing(p).unwrap();
    let dim = p + 1;
    let mut sum = vec![0.0; dim * dim];
    let mut sum_sq = vec![0.0; dim * dim];
    for r in 0..draws {
        let sample = draw_sample(&plan, &pairing, 1000 + r).unwrap();
        let g = gram_matrix(p, sample.weighted_rows());
        for (i, v) in g.iter().enumerate() {
            let centred = v - truth[i];
            sum[i] += centred;
            sum_sq[i] += centred * centred;
        }
    }
    let n = draws as f64;
    for i in 0..dim * dim {
        let bias = sum[i] / n;
        let var = (sum_sq[i] / n - bias * bias) * n / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(bias.abs() <= 3.0 * se + 1e-9 * truth[i].abs(), "entry {i}: bias {bias} se {se}");
    }
}

#[test]
fn every_sample_is_closed_under_complement() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        let p = rng.gen_range(2..=12usize);
        let max_pairs = ((1u64 << p) - 2) / 2;
        let k = rng.gen_range(1..=max_pairs.min(300));
        let n_total = 2 + 2 * k;
        let plan = plan_sample(p, n_total).unwrap();
        let pairing = build_pairing(p).unwrap();
        let sample = draw_sample(&plan, &pairing, trial).unwrap();
        let masks: HashSet<u32> = sample.entries().iter().map(|e| e.mask.bits()).collect();
        assert_eq!(masks.len() as u64, n_total, "p={p} n_total={n_total}");
        for e in sample.entries() {
            assert!(masks.contains(&e.mask.complement().bits()));
        }
    }
}

#[test]
fn inclusion_frequencies_match_design() {
    let (p, n_total, draws) = (5, 16, 100_000u64);
    let plan = plan_sample(p, n_total).unwrap();
    let pairing = build_pairing(p).unwrap();
    let mut seen: HashMap<u32, u64> = HashMap::new();
    let mut pi: HashMap<u32, f64> = HashMap::new();
    for r in 0..draws {
        let sample = draw_sample(&plan, &pairing, r).unwrap();
        for e in sample.entries() {
            *seen.entry(e.mask.bits()).or_default() += 1;
            pi.insert(e.mask.bits(), e.inclusion_probability);
        }
    }
    for mask in enumerate_coalitions(p).unwrap() {
        let stratum = pairing.stratum_of(mask);
        let expected = match stratum {
            None => 1.0,
            Some(s) => plan.strata()[s].inclusion_probability,
        };
        let freq = *seen.get(&mask.bits()).unwrap_or(&0) as f64 / draws as f64;
        assert!((freq - expected).abs() <= 0.01, "{mask:?}: {freq} vs {expected}");
        if let Some(&reported) = pi.get(&mask.bits()) {
            assert_eq!(reported, expected);
        }
    }
}

#[test]
fn without_replacement_uses_more_distinct_coalitions() {
    let (p, n_total) = (5, 16);
    let plan = plan_sample(p, n_total).unwrap();
    let pairing = build_pairing(p).unwrap();
    let mut unique = 0usize;
    for r in 0..500 {
        let wor = draw_sample(&plan, &pairing, r).unwrap();
        assert_eq!(wor.len() as u64, n_total);
        unique += draw_with_replacement_baseline(p, n_total, r).unwrap().unique_coalitions();
    }
    let mean_unique = unique as f64 / 500.0;
    assert!(mean_unique < n_total as f64 - 1.0, "mean unique {mean_unique}");
}

#[test]
fn resampled_sd_shrinks_with_budget() {
    let spec = SyntheticSpec {
        rho: 0.5,
        ..SyntheticSpec::new(16, 400)
    };
    let sd_at = |n_total: u64| {
        let mut c = StudyConfig::new(DataSource::Synthetic(spec.clone()), n_total);
        c.runs = 40;
        c.methods = Vec::new();
        c.skip_singular_runs = true;
        c.instances = InstanceSelection::First(1);
        c.seed = 5;
        run_study(&c).unwrap().resampled_sd[0].clone()
    };
    let small = sd_at(34);
    let large = sd_at(402);
    let wins = small.iter().zip(&large).filter(|(s, l)| l < s).count();
    assert!(wins * 2 > small.len(), "{wins} of {} features improved", small.len());
}
