//! Characteristic polynomials, the Routh–Hurwitz test and eigenvalues of
//! small dense matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hurwitz minors with magnitude at or below this are treated as zero.
pub const MARGINAL_MINOR: f64 = 1e-12;

const ROOT_ITERATIONS: usize = 500;

/// Coefficients `c_0..c_{n-1}` of `det(λI - A) = λ^n + c_{n-1} λ^{n-1} + … + c_0`,
/// by the Faddeev–LeVerrier recurrence.
pub fn char_poly(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..n {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m;
        for i in 0..n {
            m[(i, i)] += c[n - k + 1];
        }
        let am = a * &m;
        c[n - k] = -am.trace() / k as f64;
    }
    c.truncate(n);
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HurwitzVerdict {
    pub stable: bool,
    /// Some leading minor fell inside the `±MARGINAL_MINOR` band.
    pub marginal: bool,
    pub minors: Vec<f64>,
}

/// Routh–Hurwitz test on a monic polynomial given by `c_0..c_{n-1}`.
pub fn hurwitz(c: &[f64]) -> HurwitzVerdict {
    let n = c.len();
    // a_0 = 1, a_k = c_{n-k}
    let a = |k: isize| -> f64 {
        if k < 0 || k as usize > n {
            0.0
        } else if k == 0 {
            1.0
        } else {
            c[n - k as usize]
        }
    };
    let h = DMatrix::from_fn(n, n, |i, j| a(2 * (j as isize + 1) - (i as isize + 1)));
    let minors: Vec<f64> = (1..=n).map(|k| det(&h.view((0, 0), (k, k)).into_owned())).collect();
    let marginal = minors.iter().any(|m| m.abs() <= MARGINAL_MINOR);
    let stable = !marginal && minors.iter().all(|&m| m > 0.0);
    HurwitzVerdict {
        stable,
        marginal,
        minors,
    }
}

pub fn hurwitz_stable(c: &[f64]) -> bool {
    hurwitz(c).stable
}

fn det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut d = 1.0;
    for col in 0..n {
        let (piv, val) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if val == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap_rows(piv, col);
            d = -d;
        }
        let p = a[(col, col)];
        d *= p;
        for r in col + 1..n {
            let factor = a[(r, col)] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[(r, k)] -= factor * a[(col, k)];
                }
            }
        }
    }
    d
}

/// `p(z)` and `p'(z)` for the monic polynomial with coefficients `c`.
fn horner(c: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(1.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &ck in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + ck;
    }
    (p, dp)
}

/// Roots of the monic polynomial `λ^n + c_{n-1} λ^{n-1} + … + c_0`.
///
/// Degrees one and two use closed forms; higher degrees use Aberth–Ehrlich
/// simultaneous iteration followed by Newton polishing. `tol` bounds the
/// accepted residual `|p(λ)|`.
pub fn polynomial_roots(c: &[f64], tol: f64) -> Result<Vec<Complex64>> {
    let n = c.len();
    let mut roots = match n {
        0 => Vec::new(),
        1 => vec![Complex64::new(-c[0], 0.0)],
        2 => quadratic(c[1], c[0]),
        _ => aberth(c, tol)?,
    };
    sort_roots(&mut roots);
    Ok(roots)
}

fn quadratic(b: f64, c: f64) -> Vec<Complex64> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        let re = -b / 2.0;
        let im = (-disc).sqrt() / 2.0;
        vec![Complex64::new(re, -im), Complex64::new(re, im)]
    } else {
        let s = disc.sqrt();
        let q = -0.5 * (b + b.signum() * s);
        if q == 0.0 {
            vec![Complex64::new(0.0, 0.0); 2]
        } else {
            vec![Complex64::new(q, 0.0), Complex64::new(c / q, 0.0)]
        }
    }
}

fn aberth(c: &[f64], tol: f64) -> Result<Vec<Complex64>> {
    let n = c.len();
    let bound = 1.0 + c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let radius = bound.min(
        // Fujiwara-type bound is usually much tighter.
        2.0 * c
            .iter()
            .enumerate()
            .map(|(k, v)| v.abs().powf(1.0 / (n - k) as f64))
            .fold(0.0f64, f64::max)
            .max(1e-3),
    );
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(radius, ang)
        })
        .collect();
    for _ in 0..ROOT_ITERATIONS {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let (p, dp) = horner(c, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let sum: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = z[i] - z[j];
                    if d.norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        d.inv()
                    }
                })
                .sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * sum);
            if step.is_finite() {
                z[i] -= step;
                max_step = max_step.max(step.norm() / (1.0 + z[i].norm()));
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }
    // Newton polish; keep a step only if it lowers the residual.
    for zi in z.iter_mut() {
        for _ in 0..5 {
            let (p, dp) = horner(c, *zi);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = *zi - p / dp;
            if horner(c, cand).0.norm() < p.norm() {
                *zi = cand;
            } else {
                break;
            }
        }
    }
    let residual = z.iter().map(|&zi| horner(c, zi).0.norm()).fold(0.0, f64::max);
    if !residual.is_finite() || residual > tol {
        return Err(Error::EigenNonConvergence { residual });
    }
    Ok(z)
}

fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Eigenvalues of a square matrix as roots of its characteristic polynomial,
/// each with `|det(A - λI)| ≤ 1e-6 (1 + ‖A‖)`.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let c = char_poly(a)?;
    polynomial_roots(&c, 1e-6 * (1.0 + a.norm()))
}

/// Largest real part of a spectrum.
pub fn max_re(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest absolute imaginary part of a spectrum.
pub fn min_abs_im(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|z| z.im.abs()).fold(f64::INFINITY, f64::min)
}

/// Threshold below which an imaginary part counts as zero for `A`.
pub fn imag_threshold(a: &DMatrix<f64>) -> f64 {
    1e-6 * (1.0 + a.norm())
}
