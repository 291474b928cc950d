mod common;

use common::{check_invariants, grid_minimum, normal, random_method, random_panel, solver_objective};
use crossfit_sc::solvers::{constrained_least_squares, ConstraintSet, SolverOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn constraint_sets(q: f64) -> [ConstraintSet; 4] {
    [
        ConstraintSet::Simplex,
        ConstraintSet::L1Ball { q },
        ConstraintSet::L1BallAffine { q: q.max(1.0) },
        ConstraintSet::FixedEqual,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cross_fit_invariants(seed in any::<u64>(), c in -50.0f64..50.0, alpha in 0.01f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = random_panel(&mut rng);
        let method = random_method(&mut rng);
        let k = rng.random_range(2..=panel.t0().min(6));
        if let Err(msg) = check_invariants(&panel, method, k, alpha, c) {
            prop_assert!(false, "{method} K={k}: {msg}");
        }
    }

    #[test]
    fn solver_never_worse_than_grid(seed in any::<u64>(), q in 0.5f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=2);
        let m = rng.random_range(n..=10);
        let x = DMatrix::from_fn(m, n, |_, _| normal(&mut rng));
        let y = DVector::from_fn(m, |_, _| normal(&mut rng));
        for set in constraint_sets(q) {
            let grid = grid_minimum(&x, &y, set, 400);
            let solved = solver_objective(&x, &y, set);
            prop_assert!(solved <= grid + 1e-6, "{set:?}: {solved} vs grid {grid}, x={x}, y={y}");
        }
    }

    #[test]
    fn column_permutation_permutes_weights(seed in any::<u64>(), q in 1.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.random_range(6..=15), rng.random_range(2..=5));
        let x = DMatrix::from_fn(m, n, |_, _| normal(&mut rng));
        let y = DVector::from_fn(m, |_, _| normal(&mut rng));
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = DMatrix::from_fn(m, n, |i, j| x[(i, perm[j])]);
        let opts = SolverOptions::default();
        for set in constraint_sets(q) {
            let a = constrained_least_squares(&x, &y, set, &opts).unwrap();
            let b = constrained_least_squares(&xp, &y, set, &opts).unwrap();
            prop_assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + a.objective));
            for j in 0..n {
                prop_assert!((b.w[j] - a.w[perm[j]]).abs() <= 1e-4, "{set:?} {} {}", a.w, b.w);
            }
        }
    }

    #[test]
    fn larger_feasible_sets_fit_better(seed in any::<u64>(), q in 1.0f64..2.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.random_range(4..=12), rng.random_range(2..=6));
        let x = DMatrix::from_fn(m, n, |_, _| normal(&mut rng));
        let y = DVector::from_fn(m, |_, _| normal(&mut rng));
        let simplex = solver_objective(&x, &y, ConstraintSet::Simplex);
        let affine = solver_objective(&x, &y, ConstraintSet::L1BallAffine { q });
        let ball = solver_objective(&x, &y, ConstraintSet::L1Ball { q });
        let equal = solver_objective(&x, &y, ConstraintSet::FixedEqual);
        // simplex is a subset of the affine set, which is a subset of the ball
        prop_assert!(affine <= simplex + 1e-8);
        prop_assert!(ball <= affine + 1e-8);
        prop_assert!(simplex <= equal + 1e-8);
    }
}
