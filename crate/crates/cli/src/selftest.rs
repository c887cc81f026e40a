//! Randomized self checks run by `sosm selftest`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosm_core::linalg::{norm2, CsrMatrix, LuFactor, TripletBuilder};
use sosm_core::solver::WoodburySolver;
use sosm_core::thermo::{scaled_augmented_matrix, transport_matrix, MixtureSpec};

use crate::output::{read_csv, write_csv, Table};

/// Name and outcome of one check.
pub type CheckResult = (String, Result<(), String>);

fn random_spec(rng: &mut ChaCha8Rng, n: usize, gamma: f64) -> MixtureSpec {
    let mm: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 10f64.powf(rng.gen_range(-2.0..2.0));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    MixtureSpec::new(mm, d, rng.gen_range(0.5..2.0), 0.1, 0.1, gamma).expect("valid random spec")
}

/// Smallest eigenvalue of `m` restricted to the complement of `1`.
fn restricted_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    // orthonormal basis of 1^⊥ from a QR of [1 | I]
    let mut a = DMatrix::identity(n, n);
    a.set_column(0, &DVector::from_element(n, 1.0));
    let q = a.qr().q();
    let z = q.columns(1, n - 1).into_owned();
    let r = z.transpose() * m * &z;
    SymmetricEigen::new((&r + r.transpose()) * 0.5).eigenvalues.min()
}

/// Symmetry, `M 1 = 0`, semidefiniteness on `1^⊥` and Cholesky factorization
/// of the augmented scaled matrix, over `samples` random states per species
/// count and augmentation.
pub fn transport_properties(seed: u64, samples: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 2..=4 {
        for _ in 0..samples {
            let spec = random_spec(&mut rng, n, 1.0);
            let c: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
            let m = transport_matrix(&spec, &c).map_err(|e| e.to_string())?;
            let scale = m.norm();
            if (&m - m.transpose()).amax() > 0.0 {
                return Err(format!("n = {n}: transport matrix not symmetric at c = {c:?}"));
            }
            let row_sums = &m * DVector::from_element(n, 1.0);
            if row_sums.amax() > 1e-13 * scale {
                return Err(format!("n = {n}: |M 1| = {:e} at c = {c:?}", row_sums.amax()));
            }
            let lmin = restricted_min_eigenvalue(&m);
            if lmin < -1e-12 * scale {
                return Err(format!("n = {n}: restricted eigenvalue {lmin:e} at c = {c:?}"));
            }
            for gamma in [1e-2, 1.0, 10.0] {
                let spec = MixtureSpec { gamma, ..spec.clone() };
                let a = scaled_augmented_matrix(&spec, &c).map_err(|e| e.to_string())?;
                if a.cholesky().is_none() {
                    return Err(format!("n = {n}: augmented matrix not factorizable for gamma = {gamma} at c = {c:?}"));
                }
            }
        }
    }
    Ok(())
}

/// Random sparse diagonally dominant matrix.
fn random_sparse(rng: &mut ChaCha8Rng, n: usize) -> CsrMatrix {
    let mut b = TripletBuilder::new(n, n);
    for i in 0..n {
        b.push(i, i, 8.0 + rng.gen_range(0.0..1.0));
        for _ in 0..3 {
            let j = rng.gen_range(0..n);
            b.push(i, j, rng.gen_range(-1.0..1.0));
        }
    }
    b.build()
}

/// Woodbury solve of `A + U V^T` against a dense LU solve.
pub fn woodbury_vs_dense(seed: u64, n: usize, rank: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_sparse(&mut rng, n);
    let mut vec_of = |_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let us: Vec<Vec<f64>> = (0..rank).map(&mut vec_of).collect();
    let vs: Vec<Vec<f64>> = (0..rank).map(&mut vec_of).collect();
    let rhs: Vec<f64> = vec_of(0);
    let dense = sosm_core::solver::dense_updated(&a, &us, &vs);
    let expected = dense.lu().solve(&DVector::from_vec(rhs.clone())).ok_or("dense matrix singular")?;
    let lu = LuFactor::new(a).map_err(|e| e.to_string())?;
    let x = WoodburySolver::new(lu, us, vs, 1e-10).and_then(|w| w.solve(&rhs)).map_err(|e| e.to_string())?;
    let diff: Vec<f64> = x.iter().zip(expected.iter()).map(|(a, b)| a - b).collect();
    let rel = norm2(&diff) / expected.norm();
    if rel > 1e-9 {
        return Err(format!("relative difference {rel:e}"));
    }
    Ok(rel)
}

/// Random table written and read back bit-exactly.
pub fn csv_round_trip(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Table::new((0..5).map(|k| format!("c{k}")).collect());
    for _ in 0..50 {
        let row = (0..5)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(f64::from_bits(rng.gen::<u64>() & !(0x7ff << 52) | (rng.gen_range(900u64..1150) << 52)))
                }
            })
            .collect();
        t.push(row);
    }
    let path = std::env::temp_dir().join(format!("sosm-selftest-{}-{seed}.csv", std::process::id()));
    write_csv(&t, &path).map_err(|e| e.to_string())?;
    let back = read_csv(&path).map_err(|e| e.to_string());
    let _ = std::fs::remove_file(&path);
    if back? != t {
        return Err("table changed on round trip".into());
    }
    Ok(())
}

/// Runs every check with the given seed.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        ("transport properties".to_string(), transport_properties(seed, 200)),
        ("woodbury vs dense".to_string(), woodbury_vs_dense(seed, 400, 3).map(|_| ())),
        ("csv round trip".to_string(), csv_round_trip(seed)),
    ]
}
