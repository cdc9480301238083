//! Derivative-free minimization: bounded Nelder–Mead, coordinate-descent
//! polishing and a deterministic multi-start driver.
//!
//! Objectives here are max-type (worst eigenvalue over a sample set) and
//! therefore non-smooth; NaN values are treated as `+inf`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    pub initial_step: f64,
    /// Every coordinate is clamped into `[lo, hi]` before evaluation.
    pub bounds: Option<(f64, f64)>,
    pub xtol: f64,
    pub ftol: f64,
    /// Stop as soon as an objective value below this is seen.
    pub target: Option<f64>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 1000,
            initial_step: 1.0,
            bounds: None,
            xtol: 1e-10,
            ftol: 1e-13,
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn clamp(x: &mut [f64], bounds: Option<(f64, f64)>) {
    if let Some((lo, hi)) = bounds {
        for v in x.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
    bounds: Option<(f64, f64)>,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        clamp(x, self.bounds);
        self.evals += 1;
        sanitize((self.f)(x))
    }
}

/// Nelder–Mead, restarted from the incumbent with a fresh simplex until a
/// restart no longer improves it (or the budget runs out). Restarts escape
/// the flat ridges that max-type objectives produce.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut obj = Counted {
        f,
        evals: 0,
        bounds: opts.bounds,
    };
    let mut first = x0.to_vec();
    let f0 = obj.eval(&mut first);
    let mut best = single_run(&mut obj, first, f0, opts);
    while obj.evals < opts.max_evals && !opts.target.is_some_and(|t| best.value < t) && !x0.is_empty() {
        let before = best.value;
        let mut trace = std::mem::take(&mut best.trace);
        let next = single_run(&mut obj, best.x.clone(), best.value, opts);
        trace.extend(next.trace.iter().copied());
        best = Minimum { trace, ..next };
        if !(best.value < before - opts.ftol) {
            break;
        }
    }
    best.evals = obj.evals;
    best
}

fn single_run<F>(obj: &mut Counted<F>, first: Vec<f64>, f0: f64, opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let k = first.len();
    if k == 0 || opts.max_evals <= 1 {
        return Minimum {
            x: first,
            value: f0,
            evals: obj.evals,
            trace: vec![f0],
        };
    }
    let hit = |v: f64| opts.target.is_some_and(|t| v < t);

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(first.clone(), f0)];
    for i in 0..k {
        if hit(simplex[0].1) || obj.evals >= opts.max_evals {
            break;
        }
        let mut v = first.clone();
        let step = if opts.initial_step == 0.0 { 1.0 } else { opts.initial_step };
        v[i] += step;
        if let Some((_, hi)) = opts.bounds {
            if v[i] > hi {
                v[i] = first[i] - step;
            }
        }
        let fv = obj.eval(&mut v);
        simplex.push((v, fv));
    }
    let mut trace = Vec::new();
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));

    if simplex.len() == k + 1 {
        loop {
            order(&mut simplex);
            trace.push(simplex[0].1);
            if hit(simplex[0].1) || obj.evals >= opts.max_evals {
                break;
            }
            let spread = simplex[k].1 - simplex[0].1;
            let size = simplex[1..]
                .iter()
                .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if size < opts.xtol || (spread.is_finite() && spread <= opts.ftol) {
                break;
            }
            let centroid: Vec<f64> = (0..k)
                .map(|j| simplex[..k].iter().map(|(v, _)| v[j]).sum::<f64>() / k as f64)
                .collect();
            let worst = simplex[k].clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let mut xr = along(1.0);
            let fr = obj.eval(&mut xr);
            if fr < simplex[0].1 {
                let mut xe = along(2.0);
                let fe = if obj.evals < opts.max_evals { obj.eval(&mut xe) } else { f64::INFINITY };
                simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[k - 1].1 {
                simplex[k] = (xr, fr);
                continue;
            }
            if obj.evals >= opts.max_evals {
                break;
            }
            let (mut xc, outside) = if fr < worst.1 { (along(0.5), true) } else { (along(-0.5), false) };
            let fc = obj.eval(&mut xc);
            if (outside && fc <= fr) || (!outside && fc < worst.1) {
                simplex[k] = (xc, fc);
                continue;
            }
            // Shrink towards the best vertex.
            let best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                if obj.evals >= opts.max_evals {
                    break;
                }
                let mut v: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                let fv = obj.eval(&mut v);
                *vertex = (v, fv);
            }
        }
    }
    order(&mut simplex);
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evals: obj.evals,
        trace,
    }
}

/// Pattern search along coordinate axes with step halving, starting from a
/// point whose value is already known.
pub fn coordinate_descent<F>(
    f: F,
    start: &Minimum,
    initial_step: f64,
    min_step: f64,
    max_evals: usize,
    bounds: Option<(f64, f64)>,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut obj = Counted { f, evals: 0, bounds };
    let mut x = start.x.clone();
    let mut fx = start.value;
    let mut trace = start.trace.clone();
    let mut step = initial_step;
    while step >= min_step && obj.evals < max_evals {
        let mut improved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                if obj.evals >= max_evals {
                    break;
                }
                let mut y = x.clone();
                y[j] += dir * step;
                let fy = obj.eval(&mut y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        trace.push(fx);
        if !improved {
            step *= 0.5;
        }
    }
    Minimum {
        x,
        value: fx,
        evals: start.evals + obj.evals,
        trace,
    }
}

/// Start points: the origin followed by `count - 1` uniform points in
/// `[-half_width, half_width]^k`, drawn from stream `stream` of `seed`.
pub fn start_points(k: usize, count: usize, half_width: f64, seed: u64, stream: u64) -> Vec<Vec<f64>> {
    let mut rng = par::fork_rng(seed, stream);
    let mut out = vec![vec![0.0; k]];
    if k == 0 {
        return out;
    }
    for _ in 1..count {
        out.push((0..k).map(|_| rng.random_range(-half_width..=half_width)).collect());
    }
    out
}

/// Lexicographic comparison used to break ties between equal minima.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Runs one bounded Nelder–Mead per start (in parallel) and returns all
/// results in start order.
pub fn multi_start<F>(f: F, starts: &[Vec<f64>], opts: &NelderMeadOptions) -> Vec<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    par::map(starts, |x0| nelder_mead(&f, x0, opts))
}

/// Smallest value, ties broken by the lexicographically smallest point.
pub fn best_of(results: &[Minimum]) -> Option<&Minimum> {
    results
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then_with(|| lex_cmp(&a.x, &b.x)))
}
