//! Test-only oracles, independent of the library's own numerics.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use polystab_core::{Exponents, Polynomial, VectorField};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Eigenvalues through nalgebra's real Schur form.
pub fn oracle_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    a.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn oracle_max_re(a: &DMatrix<f64>) -> f64 {
    oracle_eigenvalues(a).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `e^{M}` by a 30-term Taylor series after scaling by a power of two,
/// followed by repeated squaring.
pub fn taylor_expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..=scale))
}

/// A random polynomial field without constant terms: `n` states, total
/// degree at most `deg`, up to `max_terms` terms per component.
pub fn random_field(rng: &mut ChaCha8Rng, n: usize, deg: u32, max_terms: usize) -> VectorField {
    let comps = (0..n)
        .map(|_| {
            let terms = rng.random_range(1..=max_terms);
            let mut p = Polynomial::zero(n);
            for _ in 0..terms {
                let d = rng.random_range(1..=deg);
                let mut e = vec![0u32; n];
                for _ in 0..d {
                    e[rng.random_range(0..n)] += 1;
                }
                let c: f64 = rng.random_range(-5.0..=5.0);
                p.add_term(Exponents::new(e), c);
            }
            p
        })
        .collect();
    VectorField::new(n, 0, comps).unwrap()
}
