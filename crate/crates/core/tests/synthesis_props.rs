mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::rng;
use polystab_core::domain::Domain;
use polystab_core::factorization::FactorizationFamily;
use polystab_core::stability::certify_with;
use polystab_core::synthesis::{
    check_bounds, close_loop, synthesize, Augmentation, ControlLaw, DegreeBounds, DEFAULT_BUDGET,
};
use polystab_core::{parse_system, Exponents, Polynomial, VectorField};

fn random_poly(r: &mut ChaCha8Rng, nvars: usize, min_deg: u32, max_deg: u32, terms: usize) -> Polynomial {
    let mut p = Polynomial::zero(nvars);
    for _ in 0..terms {
        let d = r.random_range(min_deg..=max_deg);
        let mut e = vec![0u32; nvars];
        for _ in 0..d {
            e[r.random_range(0..nvars)] += 1;
        }
        p.add_term(Exponents::new(e), r.random_range(-3.0..=3.0));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_loop_degree_within_bound(seed in any::<u64>(), n in 1usize..=3, r_dim in 1usize..=2, deg in 1u32..=3) {
        let mut r = rng(seed);
        let comps = (0..n).map(|_| random_poly(&mut r, n + r_dim, 1, deg, 4)).collect();
        let f = VectorField::new(n, r_dim, comps).unwrap();
        let d = f.degree();
        prop_assume!(d.x >= 1);
        let u_deg = r.random_range(1..=d.x);
        let phi_deg = r.random_range(1..=d.z);
        let record = check_bounds(&f, &DegreeBounds { u: u_deg, phi: Some(phi_deg) }).unwrap();
        let u = ControlLaw {
            n,
            degree_bound: u_deg,
            components: (0..r_dim).map(|_| random_poly(&mut r, n, 1, u_deg, 3)).collect(),
        };
        let phi = Augmentation {
            r: r_dim,
            degree_bound: phi_deg,
            components: (0..n).map(|_| random_poly(&mut r, r_dim, 1, phi_deg, 2)).collect(),
        };
        let closed = close_loop(&f, &u, &phi).unwrap();
        prop_assert!(closed.degree().x <= record.bound, "{} > {}", closed.degree().x, record.bound);
        prop_assert_eq!(closed.controls(), 0);
    }
}

#[test]
fn composed_degree_identity() {
    for lx in 1..=10u32 {
        for lu in 0..=10u32 {
            assert!(lx + lx * lu <= lx * (lx + lu), "l_x = {lx}, l_u = {lu}");
        }
    }
}

/// Rank of the controllability matrix via SVD, independent of the library.
fn controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut blocks = vec![b.clone()];
    for k in 1..n {
        blocks.push(a * &blocks[k - 1]);
    }
    let c = DMatrix::from_fn(n, n * b.ncols(), |i, j| blocks[j / b.ncols()][(i, j % b.ncols())]);
    let sv = c.singular_values();
    sv.min() > 1e-3 * sv.max()
}

fn linear_system(a: &DMatrix<f64>, b: &DMatrix<f64>) -> VectorField {
    let (n, r) = (a.nrows(), b.ncols());
    let comps = (0..n)
        .map(|i| {
            let terms = (0..n)
                .map(|j| (Exponents::unit(n + r, j), a[(i, j)]))
                .chain((0..r).map(|l| (Exponents::unit(n + r, n + l), b[(i, l)])));
            Polynomial::from_terms(n + r, terms)
        })
        .collect();
    VectorField::new(n, r, comps).unwrap()
}

#[test]
fn controllable_linear_pairs_are_stabilized() {
    let mut r = rng(21);
    let bounds = DegreeBounds { u: 1, phi: None };
    let mut tested = 0;
    while tested < 50 {
        let n = r.random_range(1..=3);
        let m = r.random_range(1..=2);
        let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-2.0..=2.0));
        let b = DMatrix::from_fn(n, m, |_, _| r.random_range(-2.0..=2.0));
        if !controllable(&a, &b) {
            continue;
        }
        tested += 1;
        let f = linear_system(&a, &b);
        let domain = Domain::cube(n, 1.0).unwrap();
        let res = synthesize(&f, &domain, &bounds, DEFAULT_BUDGET, tested as u64).unwrap();
        assert!(res.success, "A = {a}, B = {b}: {}", res.note);
        let fam = FactorizationFamily::build(&res.closed_loop).unwrap();
        let check = certify_with(&fam, &res.theta, &domain, domain.plan.refined(), 99).unwrap();
        assert!(check.margin < 0.0, "A = {a}, B = {b}: refined margin {}", check.margin);
    }
}

#[test]
fn uncontrollable_unstable_pairs_fail() {
    let bounds = DegreeBounds { u: 1, phi: None };
    for src in [
        "controls 1\nx1' = x1 + u1\nx2' = 2*x2",
        "controls 1\nx1' = -x1 + x2\nx2' = 0.5*x2",
        "controls 2\nx1' = u1\nx2' = u2\nx3' = x3",
    ] {
        let f = parse_system(src).unwrap();
        let domain = Domain::cube(f.dim(), 1.0).unwrap();
        let res = synthesize(&f, &domain, &bounds, DEFAULT_BUDGET, 5).unwrap();
        assert!(!res.success, "{src}");
    }
}

#[test]
fn nonlinear_synthesis_is_deterministic_and_recertifies() {
    let f = parse_system("x1' = x1 + x1^2 + u1").unwrap();
    let domain = Domain::cube(1, 0.5).unwrap();
    let bounds = DegreeBounds { u: 2, phi: None };
    for seed in [1, 2] {
        let a = synthesize(&f, &domain, &bounds, 20_000, seed).unwrap();
        let b = synthesize(&f, &domain, &bounds, 20_000, seed).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.success, "{}", a.note);
        let fam = FactorizationFamily::build(&a.closed_loop).unwrap();
        let check = certify_with(&fam, &a.theta, &domain, domain.plan.refined(), 99).unwrap();
        assert!(check.margin < 0.0);
    }
}
