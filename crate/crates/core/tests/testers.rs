use std::collections::HashMap;

use proptest::prelude::*;

use histtest::discrete::{
    discrete_flattening, flattening_multiset, l1k_identity_test, l2_statistic, split, DiscreteSampler, L1kParams,
    SampleBudget,
};
use histtest::histogram::{DiscreteDist, Histogram, MassTable};
use histtest::identity::{
    test_identity, test_identity_discrete, test_uniformity, HistogramSampler, IdentityTester, TestOptions,
};
use histtest::random::{random_discrete, random_histogram};
use histtest::rng::{seeded, stream};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flattening_caps_split_masses(seed in any::<u64>(), n in 1usize..80, k in 1usize..100) {
        let p = random_discrete(n, &mut seeded(seed));
        let copies = flattening_multiset(&p, k);
        prop_assert!(copies.iter().map(|&c| c as usize).sum::<usize>() <= k);
        let s = split(&p, &copies).unwrap();
        prop_assert!(s.probs().iter().all(|&x| x <= 1.0 / k as f64 + 1e-15));
        prop_assert!(s.l2_norm() <= (1.0 / k as f64).sqrt() + 1e-12);
        prop_assert!((discrete_flattening(&p, k).norm_bound - s.l2_norm()).abs() < 1e-12);
        prop_assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_distribution_is_normalized(seed in any::<u64>(), d in 1usize..=2, k in 1usize..4) {
        let mut rng = seeded(seed);
        let p = random_histogram(d, k, &mut rng).unwrap();
        let t = IdentityTester::new(&p, k, 1.0).unwrap();
        let r = t.build_reduced_known().unwrap();
        prop_assert!((r.total_before_normalization - 1.0).abs() < 1e-9);
        prop_assert_eq!(r.halves.len(), 2 * t.covering().total_cells() as usize);
        let q = random_histogram(d, k, &mut rng).unwrap();
        prop_assert!((r.reduce_weights(&q).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn collision_statistic_is_unbiased() {
    let mut rng = seeded(3);
    let p = random_discrete(40, &mut rng);
    let q = random_discrete(40, &mut rng);
    let m = 300.0;
    let run = |q: &DiscreteDist, tag: u64| -> Vec<f64> {
        let mut ps = DiscreteSampler::new(&p, stream(tag, &[0]));
        let mut qs = DiscreteSampler::new(q, stream(tag, &[1]));
        let mut r = stream(tag, &[2]);
        (0..4000).map(|_| l2_statistic(&mut ps, &mut qs, m, &mut r).unwrap()).collect()
    };
    let (null_mean, null_se) = mean_and_se(&run(&p, 10));
    assert!(null_mean.abs() < 5.0 * null_se, "{null_mean} +- {null_se}");
    let l2sq: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b) * (a - b)).sum();
    let (alt_mean, alt_se) = mean_and_se(&run(&q, 11));
    assert!((alt_mean - m * m * l2sq).abs() < 5.0 * alt_se, "{alt_mean} vs {}", m * m * l2sq);
}

#[test]
fn l1k_tester_separates_and_respects_budget() {
    let p = DiscreteDist::uniform(200);
    let mut w = vec![0.005; 200];
    for x in &mut w[..10] {
        *x += 0.03;
    }
    for x in &mut w[10..70] {
        *x = 0.0;
    }
    let q = DiscreteDist::new(w).unwrap();
    assert!(histtest::histogram::l1k_distance(&p, &q, 10).unwrap() >= 0.3 - 1e-12);
    let params = L1kParams { budget: SampleBudget::Constant(8.0), ..L1kParams::new(10, 0.3, 0.1) };
    let (mut null_rejects, mut alt_rejects) = (0, 0);
    for t in 0..40 {
        let v = l1k_identity_test(&p, DiscreteSampler::new(&p, stream(1, &[t])), &params, &mut stream(2, &[t])).unwrap();
        null_rejects += v.rejected() as usize;
        let expected = v.repetitions as f64 * v.per_repetition_budget;
        assert!((v.samples_used as f64) <= 3.0 * expected);
        let v = l1k_identity_test(&p, DiscreteSampler::new(&q, stream(3, &[t])), &params, &mut stream(4, &[t])).unwrap();
        alt_rejects += v.rejected() as usize;
    }
    assert!(null_rejects <= 4, "{null_rejects}");
    assert!(alt_rejects >= 36, "{alt_rejects}");
}

#[test]
fn mapped_samples_follow_the_reduced_distribution() {
    let p = random_histogram(2, 3, &mut seeded(21)).unwrap();
    let t = IdentityTester::new(&p, 2, 1.0).unwrap();
    let r = t.build_reduced_known().unwrap();
    let index: HashMap<_, _> = r.halves.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    let mapper = t.mapper();
    let mut rng = seeded(22);
    let n = 100_000;
    let mut counts = vec![0usize; r.halves.len()];
    for _ in 0..n {
        let x = p.sample(&mut rng);
        counts[index[&mapper.map_sample(&x, &mut rng)]] += 1;
    }
    let mut chi2 = 0.0;
    let mut dof = 0;
    for (&c, &pp) in counts.iter().zip(r.p_prime.probs()) {
        if pp * n as f64 >= 20.0 {
            chi2 += (c as f64 - pp * n as f64).powi(2) / (pp * n as f64);
            dof += 1;
        } else if pp == 0.0 {
            assert_eq!(c, 0);
        }
    }
    let dof = dof as f64;
    assert!(chi2 < dof + 6.0 * (2.0 * dof).sqrt(), "chi2 {chi2} with {dof} cells");
}

#[test]
fn entry_points_agree_on_easy_instances() {
    let opts = TestOptions { budget: SampleBudget::PerRepetition(20_000.0), ..Default::default() };
    let u = Histogram::uniform(2);
    let v = test_uniformity(HistogramSampler::new(&u, seeded(1)), 2, 4, 0.5, &opts, &mut seeded(2)).unwrap();
    assert!(!v.verdict.rejected());

    let far = random_histogram(2, 4, &mut seeded(9)).unwrap();
    let v = test_identity(&u, HistogramSampler::new(&far, seeded(3)), 4, 0.5, &opts, &mut seeded(4)).unwrap();
    assert!(v.verdict.rejected());

    let table = MassTable::new(4, 2, (1..=16).map(|i| i as f64 / 136.0).collect()).unwrap();
    let same = DiscreteSampler::new(&table.as_discrete(), seeded(5));
    let v = test_identity_discrete(&table, same, 16, 0.5, &opts, &mut seeded(6)).unwrap();
    assert!(!v.verdict.rejected());
    let flat = DiscreteSampler::new(&DiscreteDist::uniform(16), seeded(7));
    let v = test_identity_discrete(&table, flat, 16, 0.5, &opts, &mut seeded(8)).unwrap();
    assert!(v.verdict.rejected());
}

#[test]
fn verdicts_are_reproducible() {
    let p = random_histogram(2, 5, &mut seeded(30)).unwrap();
    let q = random_histogram(2, 5, &mut seeded(31)).unwrap();
    let t = IdentityTester::new(&p, 5, 0.5).unwrap();
    let opts = TestOptions { budget: SampleBudget::PerRepetition(500.0), ..Default::default() };
    let a = t.test(HistogramSampler::new(&q, seeded(1)), &opts, &mut seeded(2)).unwrap();
    let b = t.test(HistogramSampler::new(&q, seeded(1)), &opts, &mut seeded(2)).unwrap();
    assert_eq!(a, b);
}
