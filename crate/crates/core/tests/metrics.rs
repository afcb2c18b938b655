use plumeseg::graph::{
    cosine_distance, distance, euclidean_distance, modified_cosine_distance, Metric,
};
use proptest::prelude::*;

const CASES: u32 = 10_000;

fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, len)
        .prop_filter("nonzero blocks", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn positive_block_vec(block: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..10.0, 9 * block)
}

/// `1 − x·y / (‖x‖‖y‖)` by a plain loop.
fn cosine_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    1.0 - dot / (nx.sqrt() * ny.sqrt())
}

fn metric_pair() -> impl Strategy<Value = (Metric, Vec<f64>, Vec<f64>)> {
    prop_oneof![
        (1usize..8).prop_flat_map(|n| (Just(Metric::Euclidean), nonzero_vec(n), nonzero_vec(n))),
        (1usize..8).prop_flat_map(|n| (Just(Metric::Cosine), nonzero_vec(n), nonzero_vec(n))),
        (1usize..4).prop_flat_map(|b| (
            Just(Metric::ModifiedCosine),
            positive_block_vec(b),
            positive_block_vec(b)
        )),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn euclidean_axioms(
        (x, y, z) in (1usize..8).prop_flat_map(|n| (nonzero_vec(n), nonzero_vec(n), nonzero_vec(n)))
    ) {
        let dxy = euclidean_distance(&x, &y).unwrap();
        prop_assert_eq!(dxy, euclidean_distance(&y, &x).unwrap());
        prop_assert_eq!(euclidean_distance(&x, &x).unwrap(), 0.0);
        prop_assert!(dxy > 0.0 || x == y);
        let dxz = euclidean_distance(&x, &z).unwrap();
        let dzy = euclidean_distance(&z, &y).unwrap();
        prop_assert!(dxy <= dxz + dzy + 1e-12 * (dxz + dzy));
    }

    #[test]
    fn cosine_axioms((x, y) in (1usize..8).prop_flat_map(|n| (nonzero_vec(n), nonzero_vec(n))), scale in 0.01f64..100.0) {
        let d = cosine_distance(&x, &y).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(d, cosine_distance(&y, &x).unwrap());
        let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
        prop_assert!(cosine_distance(&x, &scaled).unwrap() < 1e-12);
        prop_assert!((d - cosine_oracle(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn modified_cosine_axioms((x, y) in (1usize..5).prop_flat_map(|b| (positive_block_vec(b), positive_block_vec(b)))) {
        let d = modified_cosine_distance(&x, &y).unwrap();
        prop_assert_eq!(d, modified_cosine_distance(&y, &x).unwrap());
        prop_assert!(modified_cosine_distance(&x, &x).unwrap() < 1e-12);
        let b = x.len() / 9;
        let oracle = (0..9)
            .map(|c| cosine_oracle(&x[c * b..(c + 1) * b], &y[c * b..(c + 1) * b]).powi(2))
            .sum::<f64>()
            .sqrt();
        prop_assert!((d - oracle).abs() < 1e-12, "{} vs {}", d, oracle);
    }

    #[test]
    fn dispatch_is_symmetric_and_nonnegative((metric, x, y) in metric_pair()) {
        let d = distance(metric, &x, &y).unwrap();
        prop_assert!(d >= 0.0 && d.is_finite());
        prop_assert_eq!(d, distance(metric, &y, &x).unwrap());
    }
}

#[test]
fn zero_vectors_are_outside_cosine_domain() {
    assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(modified_cosine_distance(&[1.0; 8], &[1.0; 8]).is_err());
    assert_eq!(euclidean_distance(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 5.0);
}
