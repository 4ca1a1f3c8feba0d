use fedxlat_core::adapters::{delta, LoraAdapter, WeightMatrix};
use fedxlat_core::aggregation::{
    aggregate_delta, fedavg, flora_stack, AggregationConfig, AggregationMethod,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> WeightMatrix {
    WeightMatrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

#[test]
fn flora_delta_is_weighted_sum_of_client_deltas() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let k = [2, 3, 5][case % 3];
        let m = rng.random_range(1..=64);
        let n = rng.random_range(1..=64);
        let alpha = rng.random_range(1.0..32.0);
        let clients: Vec<LoraAdapter> = (0..k)
            .map(|_| {
                let r = rng.random_range(1..=8);
                LoraAdapter::new(
                    "w",
                    random_matrix(&mut rng, m, r),
                    random_matrix(&mut rng, r, n),
                    alpha,
                )
                .unwrap()
            })
            .collect();
        let weights = random_weights(&mut rng, k);
        let cfg = AggregationConfig::new(AggregationMethod::FLoRA, k)
            .with_weights(weights.clone())
            .unwrap();
        let stacked = flora_stack(&clients, &cfg).unwrap();
        assert_eq!(
            stacked.rank(),
            clients.iter().map(LoraAdapter::rank).sum::<usize>()
        );
        let mut expected = WeightMatrix::zeros(m, n);
        for (c, w) in clients.iter().zip(&weights) {
            expected.add_scaled(&delta(c).unwrap(), *w).unwrap();
        }
        worst = worst.max(delta(&stacked).unwrap().max_abs_diff(&expected).unwrap());
    }
    assert!(worst < 1e-9, "max abs error {worst}");
}

#[test]
fn fedavg_is_entrywise_weighted_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let k = rng.random_range(1..=6);
        let (m, n, r) = (
            rng.random_range(1..12),
            rng.random_range(1..12),
            rng.random_range(1..5),
        );
        let clients: Vec<LoraAdapter> = (0..k)
            .map(|_| {
                LoraAdapter::new(
                    "w",
                    random_matrix(&mut rng, m, r),
                    random_matrix(&mut rng, r, n),
                    16.0,
                )
                .unwrap()
            })
            .collect();
        let weights = random_weights(&mut rng, k);
        let cfg = AggregationConfig::new(AggregationMethod::FedAvg, k)
            .with_weights(weights.clone())
            .unwrap();
        let avg = fedavg(&clients, &cfg).unwrap();
        assert_eq!(avg.rank(), r);
        for (got, pick) in [(avg.a_factor(), 0), (avg.b_factor(), 1)] {
            for idx in 0..got.data().len() {
                let mean: f64 = clients
                    .iter()
                    .zip(&weights)
                    .map(|(c, w)| {
                        w * if pick == 0 {
                            c.a_factor()
                        } else {
                            c.b_factor()
                        }
                        .data()[idx]
                    })
                    .sum();
                assert!((got.data()[idx] - mean).abs() < 1e-12);
            }
        }
    }
}

fn adapter_list() -> impl Strategy<Value = Vec<LoraAdapter>> {
    (1usize..6, 1usize..5, 1usize..5, 1usize..3).prop_flat_map(|(k, m, n, r)| {
        prop::collection::vec(
            (
                prop::collection::vec(-1e3..1e3f64, m * r),
                prop::collection::vec(-1e3..1e3f64, r * n),
            ),
            k,
        )
        .prop_map(move |fs| {
            fs.into_iter()
                .map(|(a, b)| {
                    LoraAdapter::new(
                        "w",
                        WeightMatrix::from_vec(m, r, a).unwrap(),
                        WeightMatrix::from_vec(r, n, b).unwrap(),
                        8.0,
                    )
                    .unwrap()
                })
                .collect()
        })
    })
}

fn bits(a: &LoraAdapter) -> Vec<u64> {
    a.a_factor()
        .data()
        .iter()
        .chain(a.b_factor().data())
        .map(|x| x.to_bits())
        .collect()
}

proptest! {
    #[test]
    fn fedavg_uniform_is_permutation_invariant(list in adapter_list(), seed in any::<u64>()) {
        let k = list.len();
        let cfg = AggregationConfig::new(AggregationMethod::FedAvg, k);
        let mut shuffled = list.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(bits(&fedavg(&list, &cfg).unwrap()), bits(&fedavg(&shuffled, &cfg).unwrap()));
    }

    #[test]
    fn fedavg_identical_clients_is_exact(list in adapter_list(), k in 1usize..7) {
        let same = vec![list[0].clone(); k];
        let cfg = AggregationConfig::new(AggregationMethod::FedAvg, k);
        prop_assert_eq!(bits(&fedavg(&same, &cfg).unwrap()), bits(&list[0]));
    }

    #[test]
    fn aggregate_delta_matches_flora(list in adapter_list()) {
        let cfg = AggregationConfig::new(AggregationMethod::FLoRA, list.len());
        let d = aggregate_delta(&list, &cfg).unwrap();
        let mut expected = WeightMatrix::zeros(d.rows(), d.cols());
        for c in &list {
            expected.add_scaled(&delta(c).unwrap(), 1.0).unwrap();
        }
        let tol = 1e-9 * expected.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
        prop_assert!(d.max_abs_diff(&expected).unwrap() <= tol);
    }
}
