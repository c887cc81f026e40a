use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosm_core::linalg::{norm2, LuFactor, TripletBuilder};
use sosm_core::solver::{dense_updated, woodbury_solve, WoodburySolver};

fn instance(seed: u64, n: usize, rank: usize) -> (sosm_core::linalg::CsrMatrix, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TripletBuilder::new(n, n);
    for i in 0..n {
        b.push(i, i, 6.0 + rng.gen_range(0.0..1.0));
        for _ in 0..4 {
            b.push(i, rng.gen_range(0..n), rng.gen_range(-1.0..1.0));
        }
    }
    let mut v = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let us = (0..rank).map(|_| v()).collect();
    let vs = (0..rank).map(|_| v()).collect();
    let rhs = v();
    (b.build(), us, vs, rhs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn matches_dense_solve(seed in any::<u64>(), n in 20usize..200, rank in 1usize..5) {
        let (a, us, vs, rhs) = instance(seed, n, rank);
        let dense = dense_updated(&a, &us, &vs);
        let expected = dense.clone().lu().solve(&DVector::from_vec(rhs.clone()));
        prop_assume!(expected.is_some());
        let expected = expected.unwrap();
        // skip nearly singular updated matrices
        let cond = {
            let s = dense.singular_values();
            s.max() / s.min()
        };
        prop_assume!(cond < 1e8);
        let x = woodbury_solve(LuFactor::new(a).unwrap(), us, vs, &rhs).unwrap();
        let diff: Vec<f64> = x.iter().zip(expected.iter()).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&diff) <= 1e-9 * expected.norm());
    }
}

#[test]
fn apply_is_the_updated_product() {
    let (a, us, vs, rhs) = instance(3, 50, 2);
    let dense = dense_updated(&a, &us, &vs);
    let w = WoodburySolver::new(LuFactor::new(a).unwrap(), us, vs, 1e-10).unwrap();
    let y = w.apply(&rhs);
    let expected = &dense * DVector::from_vec(rhs);
    for (p, q) in y.iter().zip(expected.iter()) {
        assert!((p - q).abs() < 1e-12);
    }
}
