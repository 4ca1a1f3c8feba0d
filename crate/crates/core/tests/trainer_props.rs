use fedxlat_core::adapters::{new_adapter, WeightMatrix};
use fedxlat_core::toytrainer::{grad_check, gradients, Sample, ToyModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Logits stay O(1) so central differences are not swamped by f64 roundoff.
fn instance(seed: u64) -> (ToyModel, fedxlat_core::adapters::LoraAdapter, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = rng.random_range(2..=16usize);
    let r = rng.random_range(1..=2usize.min(v));
    let base = WeightMatrix::from_vec(
        v,
        v,
        (0..v * v).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut adapter = new_adapter(v, v, r, rng.random_range(1.0..8.0), rng.random()).unwrap();
    for x in adapter.b_factor_mut().data_mut() {
        *x = rng.random_range(-0.5..0.5);
    }
    let batch = (0..rng.random_range(1..4))
        .map(|_| {
            let len = rng.random_range(1..5);
            Sample {
                source: (0..len).map(|_| rng.random_range(0..v as u32)).collect(),
                target: (0..len).map(|_| rng.random_range(0..v as u32)).collect(),
            }
        })
        .collect();
    (ToyModel::new(base).unwrap(), adapter, batch)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let worst = (0..50)
        .map(|s| {
            let (model, adapter, batch) = instance(s);
            grad_check(&model, &adapter, &batch).unwrap()
        })
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-4, "max relative error {worst}");
}

proptest! {
    #[test]
    fn clipping_never_exceeds_bound(seed in any::<u64>(), bound in 1e-6..1.0f64) {
        let (model, adapter, batch) = instance(seed);
        let mut g = gradients(&model, &adapter, &batch).unwrap();
        let before = g.clip(bound);
        if before > bound {
            prop_assert!(g.global_norm() <= bound + 1e-12);
        } else {
            prop_assert_eq!(g.global_norm(), before);
        }
    }
}
