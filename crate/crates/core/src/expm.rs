//! Matrix exponential by scaling and squaring with diagonal Padé
//! approximants (orders 3 to 13, chosen from the 1-norm).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each order meets double precision unscaled.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

/// Norms beyond this cannot be squared back without overflow.
const MAX_NORM: f64 = 1e300;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^{M h}` for a square `M` and `h ≥ 0`.
pub fn expm(m: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::Invalid(format!("time step must be finite and non-negative, got {h}")));
    }
    for i in 0..n {
        for j in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    let a = m * h;
    let norm = norm1(&a);
    if !norm.is_finite() || norm > MAX_NORM {
        return Err(Error::ExpmOverflow { norm });
    }
    let id = DMatrix::<f64>::identity(n, n);
    for &(order, theta) in &THETA {
        if norm <= theta {
            return finish(pade_low(&a, &id, order), 0, norm);
        }
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = &a * 2f64.powi(-s);
    finish(pade13(&scaled, &id), s, norm)
}

fn pade_low(a: &DMatrix<f64>, id: &DMatrix<f64>, order: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let b: &[f64] = match order {
        3 => &B3,
        5 => &B5,
        7 => &B7,
        _ => &B9,
    };
    let a2 = a * a;
    let mut power = id.clone();
    let mut u = id * b[1];
    let mut v = id * b[0];
    for k in 1..=order / 2 {
        power = &power * &a2;
        u += &power * b[2 * k + 1];
        v += &power * b[2 * k];
    }
    (a * u, v)
}

fn pade13(a: &DMatrix<f64>, id: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + id * b[0];
    (u, v)
}

fn finish((u, v): (DMatrix<f64>, DMatrix<f64>), squarings: i32, norm: f64) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::ExpmOverflow { norm })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::ExpmOverflow { norm });
    }
    Ok(r)
}
