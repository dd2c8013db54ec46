use proptest::prelude::*;

use histtest::histogram::{discretize, l1_distance, l1k_distance, DiscreteDist, Domain, Histogram, MassTable};
use histtest::random::{random_discrete, random_histogram};
use histtest::rng::seeded;

fn hist(seed: u64, d: usize, k: usize) -> Histogram {
    random_histogram(d, k, &mut seeded(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_is_a_metric(seed in any::<u64>(), d in 1usize..=3, k in 1usize..=10) {
        let p = hist(seed, d, k);
        let q = hist(seed ^ 1, d, k);
        let r = hist(seed ^ 2, d, k);
        let pq = l1_distance(&p, &q).unwrap();
        prop_assert!(l1_distance(&p, &p).unwrap() < 1e-12);
        prop_assert!((pq - l1_distance(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(pq <= 2.0 + 1e-12);
        prop_assert!(pq <= l1_distance(&p, &r).unwrap() + l1_distance(&r, &q).unwrap() + 1e-12);
    }

    #[test]
    fn mixtures_interpolate_distance(seed in any::<u64>(), w in 0.0f64..1.0) {
        let p = hist(seed, 2, 6);
        let q = hist(seed ^ 7, 2, 6);
        let mix = p.mix(&q, w).unwrap();
        let full = l1_distance(&p, &q).unwrap();
        prop_assert!((l1_distance(&p, &mix).unwrap() - w * full).abs() < 1e-9);
    }

    #[test]
    fn l1k_is_monotone_and_reaches_l1(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = seeded(seed);
        let p = random_discrete(n, &mut rng);
        let q = random_discrete(n, &mut rng);
        let mut prev = 0.0;
        for k in 1..=n {
            let v = l1k_distance(&p, &q, k).unwrap();
            prop_assert!(v + 1e-15 >= prev);
            prev = v;
        }
        let l1: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!((prev - l1).abs() < 1e-12);
        prop_assert!((l1k_distance(&p, &q, n + 5).unwrap() - l1).abs() < 1e-12);
    }

    #[test]
    fn discretize_preserves_distance(seed in any::<u64>(), side in 1u32..8, d in 1usize..=2) {
        let mut rng = seeded(seed);
        let cells = (side as usize).pow(d as u32);
        let a = random_discrete(cells, &mut rng);
        let b = random_discrete(cells, &mut rng);
        let ha = discretize(&MassTable::new(side, d, a.probs().to_vec()).unwrap()).unwrap();
        let hb = discretize(&MassTable::new(side, d, b.probs().to_vec()).unwrap()).unwrap();
        let direct: f64 = a.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!((l1_distance(&ha, &hb).unwrap() - direct).abs() < 1e-12);
        prop_assert_eq!(ha.domain(), Domain::Grid(side));
    }

    #[test]
    fn mass_is_additive(seed in any::<u64>(), d in 1usize..=3) {
        let p = hist(seed, d, 8);
        let parts = histtest::random::random_partition(d, 5, &mut seeded(seed ^ 3));
        let total: f64 = parts.iter().map(|r| p.mass_on_rect(r)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sample_frequencies_match_masses() {
    let p = hist(11, 2, 5);
    let mut rng = seeded(12);
    let n = 200_000;
    let mut counts = vec![0usize; p.piece_count()];
    for _ in 0..n {
        let x = p.sample(&mut rng);
        let i = p.pieces().iter().position(|pc| pc.rect.contains(&x)).unwrap();
        counts[i] += 1;
    }
    for (pc, &c) in p.pieces().iter().zip(&counts) {
        let mass = pc.mass();
        let sd = (mass * (1.0 - mass) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - mass).abs() <= 5.0 * sd + 1e-12, "{} vs {mass}", c as f64 / n as f64);
    }
}

#[test]
fn histogram_json_roundtrip() {
    let p = hist(5, 3, 7);
    let text = serde_json::to_string(&p).unwrap();
    let back: Histogram = serde_json::from_str(&text).unwrap();
    assert_eq!(p.pieces(), back.pieces());
    let d: DiscreteDist = serde_json::from_str(r#"{"probs": [0.25, 0.75]}"#).unwrap();
    assert_eq!(d.len(), 2);
}

#[test]
fn invalid_histograms_are_rejected() {
    let bad = [
        r#"{"dim":1,"domain":"unit_cube","pieces":[{"lo":[0.0],"hi":[0.6],"density":1.0},{"lo":[0.5],"hi":[1.0],"density":1.0}]}"#,
        r#"{"dim":1,"domain":"unit_cube","pieces":[{"lo":[0.0],"hi":[0.5],"density":2.0}]}"#,
        r#"{"dim":1,"domain":"unit_cube","pieces":[{"lo":[0.0],"hi":[1.0],"density":-1.0}]}"#,
        r#"{"dim":1,"domain":{"grid":4},"pieces":[{"lo":[0.0],"hi":[0.3],"density":1.0},{"lo":[0.3],"hi":[1.0],"density":1.0}]}"#,
    ];
    for text in bad {
        assert!(serde_json::from_str::<Histogram>(text).is_err(), "{text}");
    }
}
