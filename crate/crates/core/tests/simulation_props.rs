mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use common::{oracle_max_re, random_matrix, rng, taylor_expm};
use polystab_core::domain::norm;
use polystab_core::factorization::FactorizationFamily;
use polystab_core::simulation::{integrate_exp, integrate_reference, winding};
use polystab_core::{parse_system, Exponents, Polynomial, VectorField};

/// `x' = s(x) (x2, -x1)`: every member assigning `s x2` to column 2 and
/// `-s x1` to column 1 is skew-symmetric.
fn skew_field(seed: u64) -> (FactorizationFamily, Vec<f64>) {
    let mut r = rng(seed);
    let mut s = Polynomial::constant(2, r.random_range(-2.0..=2.0));
    for _ in 0..3 {
        let e = vec![r.random_range(0..=2), r.random_range(0..=2)];
        s.add_term(Exponents::new(e), r.random_range(-1.0..=1.0));
    }
    let x1 = Polynomial::var(2, 0);
    let x2 = Polynomial::var(2, 1);
    let f = VectorField::new(2, 0, vec![&s * &x2, -&(&s * &x1)]).unwrap();
    let fam = FactorizationFamily::build(&f).unwrap();
    let theta = fam.theta_assigning(|component, _| 1 - component);
    (fam, theta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_step_is_exact_on_linear_systems(seed in any::<u64>(), n in 1usize..=4, h in 0.1f64..3.0) {
        let mut r = rng(seed);
        let mut a = random_matrix(&mut r, n, 1.0);
        let shift = (oracle_max_re(&a) + 0.1).max(0.0);
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
        let fam = FactorizationFamily::build(&VectorField::linear(&rows).unwrap()).unwrap();
        let x0: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
        let t = integrate_exp(&fam, &[], &x0, 0.0, h, 1).unwrap();
        let want = taylor_expm(&(&a * h)) * DVector::from_column_slice(&x0);
        let got = DVector::from_column_slice(t.last());
        prop_assert!((&got - &want).norm() <= 1e-10 * want.norm().max(1e-12));
    }

    #[test]
    fn skew_members_preserve_the_norm(seed in any::<u64>(), a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let (fam, theta) = skew_field(seed);
        let x0 = [a, b];
        let t = integrate_exp(&fam, &theta, &x0, 0.0, 5.0, 500).unwrap();
        let n0 = norm(&x0);
        for x in &t.states {
            prop_assert!((norm(x) - n0).abs() <= 1e-10 * n0.max(1e-12));
        }
    }

    #[test]
    fn winding_stable_under_refinement(seed in any::<u64>(), t_end in 1.0f64..20.0) {
        let (fam, theta) = skew_field(seed);
        let coarse = integrate_exp(&fam, &theta, &[0.5, 0.0], 0.0, t_end, 400).unwrap();
        let fine = integrate_exp(&fam, &theta, &[0.5, 0.0], 0.0, t_end, 800).unwrap();
        let wc = winding(&coarse, (0, 1), 0.0).unwrap().turns as i64;
        let wf = winding(&fine, (0, 1), 0.0).unwrap().turns as i64;
        prop_assert!((wc - wf).abs() <= 1, "{} vs {}", wc, wf);
    }
}

/// Errors against a fine RK4 reference shrink with every doubling and at a
/// first-order rate.
#[test]
fn exp_product_converges_at_first_order() {
    let fields = [
        ("x1' = x1^2*x2 + x2 + 2*x1*x2^2\nx2' = -x1 + 3*x1^2*x2 - 2*x1*x2^2", vec![0.1, 0.1]),
        ("x1' = x2\nx2' = -x1 - 0.1*x2 - x1^3", vec![0.5, 0.0]),
        ("x1' = -x1 + x2^2\nx2' = -2*x2 + x1*x2", vec![0.4, -0.3]),
    ];
    for (src, x0) in fields {
        let f = parse_system(src).unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let theta = vec![0.0; fam.free_dim()];
        let reference = integrate_reference(&f, &x0, 0.0, 5.0, 40_000).unwrap();
        let errors: Vec<f64> = [100, 200, 400, 800]
            .iter()
            .map(|&k| integrate_exp(&fam, &theta, &x0, 0.0, 5.0, k).unwrap().sup_distance(&reference))
            .collect();
        for w in errors.windows(2) {
            assert!(w[1] <= w[0], "{src}: errors {errors:?}");
            assert!((1.5..=3.0).contains(&(w[0] / w[1])), "{src}: errors {errors:?}");
        }
    }
}
