//! Polynomial feedback synthesis for `ẋ = f(x, u) + φ(u)`.
//!
//! The control `u(x)` and the optional augmentation `φ(u)` are polynomials
//! without constant terms, so the origin stays an equilibrium. An outer
//! multi-start Nelder–Mead tunes their coefficients; each candidate closed
//! loop is scored by an inner search over its factorization family.

use std::f64::consts::TAU;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::domain::{Domain, SamplePlan};
use crate::error::{Error, Result};
use crate::factorization::FactorizationFamily;
use crate::optimize::{self, best_of, coordinate_descent, Minimum, NelderMeadOptions};
use crate::poly::{Exponents, Polynomial, VectorField};
use crate::simulation::{first_turn_time, integrate_reference};
use crate::spectral::{eigenvalues, imag_threshold};
use crate::stability::{self, certify, Criterion, SearchOptions, StabilityCertificate, Verdict, STRICT_MARGIN};

/// Coefficients of `u` and `φ` are searched in `[-COEFF_BOX, COEFF_BOX]`.
pub const COEFF_BOX: f64 = 10.0;
/// A failed stabilizing search whose incumbent sits on the box boundary is
/// retried in a box this many times wider, at most `BOX_WIDENINGS` times.
/// Weakly controllable pairs need large gains.
pub const BOX_GROWTH: f64 = 4.0;
pub const BOX_WIDENINGS: usize = 2;
pub const DEFAULT_BUDGET: usize = 200_000;
pub const OUTER_STARTS: usize = 32;
const INNER_STARTS: usize = 4;
const INNER_BUDGET: usize = 64;
const FINAL_BUDGET: usize = 4_000;
const CENTER_SEEDS: usize = 4;
const CENTER_RETURN: f64 = 0.05;

fn polys_as_dsl<S: Serializer>(polys: &[Polynomial], names: &[String], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(polys.iter().map(|p| p.fmt_with(names)))
}

fn state_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn control_names(r: usize) -> Vec<String> {
    (1..=r).map(|i| format!("u{i}")).collect()
}

/// `u_l(x)` for each control; polynomials in the `n` state variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLaw {
    pub n: usize,
    pub degree_bound: u32,
    pub components: Vec<Polynomial>,
}

impl ControlLaw {
    pub fn zero(n: usize, r: usize, degree_bound: u32) -> Self {
        ControlLaw {
            n,
            degree_bound,
            components: vec![Polynomial::zero(n); r],
        }
    }

    /// Component `l` written in `x1..xn`.
    pub fn to_dsl(&self) -> Vec<String> {
        let names = state_names(self.n);
        self.components.iter().map(|p| p.fmt_with(&names)).collect()
    }
}

impl Serialize for ControlLaw {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            degree_bound: u32,
            #[serde(serialize_with = "ser_states")]
            components: (&'a [Polynomial], usize),
        }
        fn ser_states<S: Serializer>(v: &(&[Polynomial], usize), s: S) -> std::result::Result<S::Ok, S::Error> {
            polys_as_dsl(v.0, &state_names(v.1), s)
        }
        Repr {
            degree_bound: self.degree_bound,
            components: (&self.components, self.n),
        }
        .serialize(s)
    }
}

/// `φ_p(u)` for each state equation; polynomials in the `r` controls.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmentation {
    pub r: usize,
    pub degree_bound: u32,
    pub components: Vec<Polynomial>,
}

impl Augmentation {
    pub fn zero(n: usize, r: usize) -> Self {
        Augmentation {
            r,
            degree_bound: 0,
            components: vec![Polynomial::zero(r); n],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    pub fn to_dsl(&self) -> Vec<String> {
        let names = control_names(self.r);
        self.components.iter().map(|p| p.fmt_with(&names)).collect()
    }
}

impl Serialize for Augmentation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            degree_bound: u32,
            #[serde(serialize_with = "ser_controls")]
            components: (&'a [Polynomial], usize),
        }
        fn ser_controls<S: Serializer>(v: &(&[Polynomial], usize), s: S) -> std::result::Result<S::Ok, S::Error> {
            polys_as_dsl(v.0, &control_names(v.1), s)
        }
        Repr {
            degree_bound: self.degree_bound,
            components: (&self.components, self.r),
        }
        .serialize(s)
    }
}

/// Requested degree bounds: `u` for the control law, `phi` (when set) for
/// the augmentation, which is otherwise kept at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegreeBounds {
    pub u: u32,
    pub phi: Option<u32>,
}

/// Degree bookkeeping for the closed loop.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeRecord {
    /// Degree of `f` in `x`.
    pub l_x: u32,
    /// Degree of `f` in `u`.
    pub l_u: u32,
    /// Total degree of `f` in `(x, u)`.
    pub l_z: u32,
    pub u_bound: u32,
    pub phi_bound: Option<u32>,
    /// `l_x + l_x l_u`.
    pub composed: u32,
    /// `l_x (l_x + l_u)`.
    pub bound: u32,
    pub composed_within_bound: bool,
    /// Measured degree of the returned closed loop.
    pub closed_loop_degree: u32,
}

/// Validates degree bounds against `f`.
///
/// The control degree may not exceed `max(deg_x f, 1)`: a field without
/// state terms (such as `ẋ = u`) still admits linear feedback. Degree zero
/// is infeasible because `u` has no constant term.
pub fn check_bounds(f: &VectorField, bounds: &DegreeBounds) -> Result<DegreeRecord> {
    let d = f.degree();
    let u_max = d.x.max(1);
    if bounds.u == 0 {
        return Err(Error::DegreeBound(
            "the control degree must be at least 1 (u has no constant term)".into(),
        ));
    }
    if bounds.u > u_max {
        return Err(Error::DegreeBound(format!(
            "deg u = {} exceeds the state degree bound {u_max} of the system",
            bounds.u
        )));
    }
    if let Some(p) = bounds.phi {
        if p == 0 || p > d.z {
            return Err(Error::DegreeBound(format!(
                "deg φ = {p} must lie in 1..={} (the total degree of the system)",
                d.z
            )));
        }
    }
    let composed = d.x + d.x * d.u;
    let bound = d.x * (d.x + d.u);
    Ok(DegreeRecord {
        l_x: d.x,
        l_u: d.u,
        l_z: d.z,
        u_bound: bounds.u,
        phi_bound: bounds.phi,
        composed,
        bound,
        composed_within_bound: composed <= bound,
        closed_loop_degree: 0,
    })
}

/// Substitutes `u = u(x)` into `f(x, u) + φ(u)`.
pub fn close_loop(f: &VectorField, u: &ControlLaw, phi: &Augmentation) -> Result<VectorField> {
    let (n, r) = (f.dim(), f.controls());
    if u.components.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            got: u.components.len(),
        });
    }
    if phi.components.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: phi.components.len(),
        });
    }
    for p in &u.components {
        if p.nvars() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.nvars(),
            });
        }
        if p.constant_term() != 0.0 {
            return Err(Error::Invalid("control law must vanish at the origin".into()));
        }
        if p.degree() > u.degree_bound {
            return Err(Error::DegreeBound(format!(
                "control component has degree {} above the bound {}",
                p.degree(),
                u.degree_bound
            )));
        }
    }
    for p in &phi.components {
        if p.nvars() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: p.nvars(),
            });
        }
        if p.constant_term() != 0.0 {
            return Err(Error::Invalid("augmentation must vanish at the origin".into()));
        }
        if !p.is_zero() && p.degree() > phi.degree_bound {
            return Err(Error::DegreeBound(format!(
                "augmentation component has degree {} above the bound {}",
                p.degree(),
                phi.degree_bound
            )));
        }
    }
    let images: Vec<Polynomial> = (0..n)
        .map(|i| Polynomial::var(n, i))
        .chain(u.components.iter().cloned())
        .collect();
    let comps = f
        .components()
        .iter()
        .zip(&phi.components)
        .map(|(fi, pi)| {
            let mut g = fi.compose(&images);
            if r > 0 && !pi.is_zero() {
                g = &g + &pi.compose(&u.components);
            }
            g
        })
        .collect();
    VectorField::new(n, 0, comps)
}

/// Numerical rank of `[B, AB, …, A^{n-1}B]` by Gram–Schmidt with column
/// pivoting; columns below `1e-10` times the largest column norm count as
/// dependent.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let c = controllability_matrix(a, b);
    let mut cols: Vec<Vec<f64>> = c.column_iter().map(|v| v.iter().copied().collect()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let largest = cols.iter().map(|v| norm(v)).fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    let threshold = 1e-10 * largest;
    let mut rank = 0;
    while !cols.is_empty() {
        let (k, best) = cols
            .iter()
            .enumerate()
            .map(|(k, v)| (k, norm(v)))
            .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best <= threshold {
            break;
        }
        let q: Vec<f64> = cols.swap_remove(k).iter().map(|x| x / best).collect();
        for v in cols.iter_mut() {
            let dot: f64 = v.iter().zip(&q).map(|(a, b)| a * b).sum();
            for (x, qi) in v.iter_mut().zip(&q) {
                *x -= dot * qi;
            }
        }
        rank += 1;
    }
    rank
}

fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let r = b.ncols();
    let mut c = DMatrix::zeros(n, n * r);
    let mut block = b.clone();
    for k in 0..n {
        c.view_mut((0, k * r), (n, r)).copy_from(&block);
        block = a * &block;
    }
    c
}

/// Eigenvalues of `A` restricted to the complement of the controllable
/// subspace; empty when the pair is controllable.
pub fn uncontrollable_modes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let n = a.nrows();
    let rank = kalman_rank(a, b);
    if rank == n {
        return Ok(Vec::new());
    }
    let svd = controllability_matrix(a, b).svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let complement: Vec<usize> = order[rank..].to_vec();
    let q2 = DMatrix::from_fn(n, complement.len(), |i, j| u[(i, complement[j])]);
    let block = q2.transpose() * a * &q2;
    Ok(eigenvalues(&block)?.iter().map(|z| (z.re, z.im)).collect())
}

/// Monomials of total degree `1..=deg` in `nvars` variables, graded order.
fn monomials(nvars: usize, deg: u32) -> Vec<Exponents> {
    let mut out = Vec::new();
    fn rec(prefix: &mut Vec<u32>, left: usize, budget: u32, out: &mut Vec<Exponents>) {
        if left == 0 {
            if prefix.iter().sum::<u32>() > 0 {
                out.push(Exponents::new(prefix.clone()));
            }
            return;
        }
        for k in 0..=budget {
            prefix.push(k);
            rec(prefix, left - 1, budget - k, out);
            prefix.pop();
        }
    }
    rec(&mut Vec::new(), nvars, deg, &mut out);
    out.sort();
    out
}

/// Maps a flat coefficient vector to `(u, φ)`.
#[derive(Clone, Debug)]
struct Layout {
    n: usize,
    r: usize,
    u_bound: u32,
    phi_bound: u32,
    u_monos: Vec<Exponents>,
    phi_monos: Vec<Exponents>,
}

impl Layout {
    fn new(n: usize, r: usize, u_bound: u32, phi_bound: Option<u32>) -> Self {
        Layout {
            n,
            r,
            u_bound,
            phi_bound: phi_bound.unwrap_or(0),
            u_monos: monomials(n, u_bound),
            phi_monos: phi_bound.map_or_else(Vec::new, |d| monomials(r, d)),
        }
    }

    fn u_len(&self) -> usize {
        self.r * self.u_monos.len()
    }

    fn dim(&self) -> usize {
        self.u_len() + self.n * self.phi_monos.len()
    }

    fn decode(&self, p: &[f64]) -> (ControlLaw, Augmentation) {
        let (du, db) = p.split_at(self.u_len());
        let u = du
            .chunks(self.u_monos.len().max(1))
            .take(self.r)
            .map(|c| Polynomial::from_terms(self.n, self.u_monos.iter().cloned().zip(c.iter().copied())))
            .collect();
        let phi = if self.phi_monos.is_empty() {
            vec![Polynomial::zero(self.r); self.n]
        } else {
            db.chunks(self.phi_monos.len())
                .map(|c| Polynomial::from_terms(self.r, self.phi_monos.iter().cloned().zip(c.iter().copied())))
                .collect()
        };
        (
            ControlLaw {
                n: self.n,
                degree_bound: self.u_bound,
                components: u,
            },
            Augmentation {
                r: self.r,
                degree_bound: self.phi_bound,
                components: phi,
            },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Goal {
    Stabilize,
    Center,
}

/// Closed-orbit confirmation for a center design.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterCheck {
    /// Worst center score on the full sample set (negative when met).
    pub score: f64,
    pub max_abs_re: f64,
    pub min_abs_im: f64,
    /// Return distance after one observed turn, relative to the orbit
    /// diameter, per seed (`None` when a seed never completed a turn).
    pub returns: Vec<Option<f64>>,
    pub orbits_close: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthesisResult {
    pub goal: Goal,
    pub success: bool,
    pub control: ControlLaw,
    pub augmentation: Augmentation,
    #[serde(serialize_with = "field_as_dsl")]
    pub closed_loop: VectorField,
    pub theta: Vec<f64>,
    pub certificate: StabilityCertificate,
    pub center: Option<CenterCheck>,
    /// Best objective value after each outer iteration.
    pub trace: Vec<f64>,
    pub degrees: DegreeRecord,
    pub kalman_rank: Option<usize>,
    /// Inner objective evaluations spent.
    pub evaluations: usize,
    pub budget: usize,
    pub seed: u64,
    pub note: String,
}

fn field_as_dsl<S: Serializer>(f: &VectorField, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&f.to_dsl())
}

struct Problem<'a> {
    f: &'a VectorField,
    domain: &'a Domain,
    layout: Layout,
    criterion: Criterion,
    inner: SearchOptions,
    coarse: Vec<Vec<f64>>,
    spent: AtomicUsize,
}

impl Problem<'_> {
    fn closed(&self, p: &[f64]) -> Option<(VectorField, FactorizationFamily)> {
        let (u, phi) = self.layout.decode(p);
        let g = close_loop(self.f, &u, &phi).ok()?;
        let fam = FactorizationFamily::build(&g).ok()?;
        Some((g, fam))
    }

    fn evaluate(&self, p: &[f64]) -> f64 {
        let Some((g, fam)) = self.closed(p) else {
            return f64::INFINITY;
        };
        // A linear closed loop has a constant A(x); one sample says it all.
        let points = if g.is_linear() { &self.coarse[..1] } else { &self.coarse[..] };
        let sampled = fam.sampled(points);
        match stability::search_on(&fam, &sampled, self.domain, self.criterion, &self.inner) {
            Ok(out) => {
                self.spent.fetch_add(out.evaluations, Ordering::Relaxed);
                out.value
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// Inner evaluations one outer evaluation costs for a generic candidate.
    fn inner_cost(&self) -> usize {
        let generic: Vec<f64> = (0..self.layout.dim()).map(|k| 1.0 + 0.1 * k as f64).collect();
        match self.closed(&generic) {
            Some((_, fam)) if fam.free_dim() > 0 => self.inner.budget + self.inner.starts,
            _ => 1,
        }
    }

    /// Multi-start Nelder–Mead over the coefficient box, then coordinate
    /// polishing of the incumbent.
    fn run(&self, budget: usize, seed: u64, first: Option<&[f64]>, target: Option<f64>, half_width: f64) -> Minimum {
        let dim = self.layout.dim();
        let mut starts = optimize::start_points(dim, OUTER_STARTS, half_width, seed, 0x5e7);
        if let Some(x) = first {
            starts[0] = x.to_vec();
        }
        let outer_evals = (budget / self.inner_cost()).max(2 * (OUTER_STARTS + 1));
        let per_start = (outer_evals / (OUTER_STARTS + 1)).max(2);
        let opts = NelderMeadOptions {
            max_evals: per_start,
            initial_step: 1.0,
            bounds: Some((-half_width, half_width)),
            target,
            ..Default::default()
        };
        let runs = optimize::multi_start(|p| self.evaluate(p), &starts, &opts);
        let best = best_of(&runs).expect("at least one start").clone();
        if target.is_some_and(|t| best.value < t) {
            return best;
        }
        coordinate_descent(
            |p| self.evaluate(p),
            &best,
            0.5,
            1e-6,
            per_start,
            Some((-half_width, half_width)),
        )
    }

    /// [`Problem::run`] in the default box, widened while the coarse
    /// objective stays non-negative with the incumbent on the boundary and
    /// budget remains.
    fn run_widening(&self, budget: usize, seed: u64, first: Option<&[f64]>) -> Minimum {
        let start = self.spent.load(Ordering::Relaxed);
        let mut half_width = COEFF_BOX;
        let mut best = self.run(budget, seed, first, None, half_width);
        for k in 1..=BOX_WIDENINGS {
            let used = self.spent.load(Ordering::Relaxed) - start;
            let on_boundary = best.x.iter().any(|v| v.abs() >= half_width * (1.0 - 1e-6));
            if best.value < -STRICT_MARGIN || !on_boundary || used >= budget {
                break;
            }
            half_width *= BOX_GROWTH;
            let mut trace = std::mem::take(&mut best.trace);
            let wider = self.run(budget - used, seed ^ (k as u64), Some(&best.x), None, half_width);
            if wider.value < best.value {
                trace.extend(&wider.trace);
                best = wider;
            }
            best.trace = trace;
        }
        best
    }
}

fn inner_options(seed: u64, n: usize) -> SearchOptions {
    SearchOptions {
        budget: INNER_BUDGET,
        starts: INNER_STARTS,
        seed,
        start_half_width: stability::START_HALF_WIDTH,
        coarse: Some(SamplePlan::coarse_for(n)),
        target: None,
    }
}

fn validate(f: &VectorField, domain: &Domain) -> Result<()> {
    if f.controls() == 0 {
        return Err(Error::Invalid("the system has no control inputs".into()));
    }
    if domain.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: domain.dim(),
        });
    }
    for (i, c) in f.components().iter().enumerate() {
        if c.constant_term() != 0.0 {
            return Err(Error::ConstantTerm {
                component: i + 1,
                value: c.constant_term(),
            });
        }
    }
    Ok(())
}

struct Finished {
    params: Vec<f64>,
    layout: Layout,
    trace: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn result_for(
    f: &VectorField,
    domain: &Domain,
    goal: Goal,
    fin: Finished,
    mut degrees: DegreeRecord,
    kalman: Option<usize>,
    evaluations: usize,
    budget: usize,
    seed: u64,
) -> Result<SynthesisResult> {
    let (control, augmentation) = fin.layout.decode(&fin.params);
    let closed_loop = close_loop(f, &control, &augmentation)?;
    degrees.closed_loop_degree = closed_loop.degree().z;
    let fam = FactorizationFamily::build(&closed_loop)?;
    let mut result = SynthesisResult {
        goal,
        success: false,
        control,
        augmentation,
        closed_loop: closed_loop.clone(),
        theta: Vec::new(),
        certificate: certify(&fam, &vec![0.0; fam.free_dim()], domain, seed)?,
        center: None,
        trace: fin.trace,
        degrees,
        kalman_rank: kalman,
        evaluations,
        budget,
        seed,
        note: String::new(),
    };
    match goal {
        Goal::Stabilize => {
            let found = stability::search_certificate(&fam, domain, &SearchOptions::new(FINAL_BUDGET, seed))?;
            result.evaluations += found.evaluations;
            result.theta = found.theta;
            result.certificate = found.certificate;
            result.success = result.certificate.verdict == Verdict::CertifiedOnSamples;
            result.note = if result.success {
                format!("closed loop certified on samples with margin {:e}", result.certificate.margin)
            } else {
                format!(
                    "budget exhausted; best closed-loop margin {:e} is not negative",
                    result.certificate.margin
                )
            };
        }
        Goal::Center => {
            let opts = SearchOptions::new(FINAL_BUDGET, seed);
            let found = stability::search_criterion(&fam, domain, Criterion::Center, &opts)?;
            result.evaluations += found.evaluations;
            result.certificate = certify(&fam, &found.theta, domain, seed)?;
            let check = center_check(&closed_loop, &fam, &found.theta, found.value, domain, seed)?;
            result.success = found.satisfied && check.orbits_close;
            result.note = if result.success {
                "purely imaginary spectrum on samples; seed orbits close".into()
            } else if !found.satisfied {
                format!("center criterion not met (score {:e})", found.value)
            } else {
                "spectral criterion met but simulated orbits do not close".into()
            };
            result.theta = found.theta;
            result.center = Some(check);
        }
    }
    Ok(result)
}

fn center_check(
    g: &VectorField,
    fam: &FactorizationFamily,
    theta: &[f64],
    score: f64,
    domain: &Domain,
    seed: u64,
) -> Result<CenterCheck> {
    let w = fam.weights(theta)?;
    let points = domain.samples(seed);
    let mut max_abs_re: f64 = 0.0;
    let mut min_abs_im = f64::INFINITY;
    for x in &points {
        let e = eigenvalues(&fam.matrix_at(x, &w))?;
        for z in &e {
            max_abs_re = max_abs_re.max(z.re.abs());
            min_abs_im = min_abs_im.min(z.im.abs());
        }
    }
    let a0 = fam.instantiate(theta)?.linear_part();
    let omega = eigenvalues(&a0)?.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let linear_period = (omega > imag_threshold(&a0)).then(|| TAU / omega);
    let r = 0.5 * domain.inradius();
    let returns: Vec<Option<f64>> = crate::par::map_range(CENTER_SEEDS, |k| {
        let period = linear_period?;
        let phi = TAU * k as f64 / CENTER_SEEDS as f64;
        let mut x0 = vec![0.0; g.dim()];
        x0[0] = r * phi.cos();
        x0[1] = r * phi.sin();
        let horizon = 1.5 * period;
        let traj = integrate_reference(g, &x0, 0.0, horizon, 3000).ok()?;
        let t = first_turn_time(&traj, (0, 1))?;
        let dist = |x: &[f64]| x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let diameter = traj
            .times
            .iter()
            .zip(&traj.states)
            .take_while(|(s, _)| **s <= t)
            .map(|(_, x)| dist(x))
            .fold(0.0, f64::max);
        Some(dist(&traj.state_at(t)) / diameter)
    });
    let orbits_close = returns.iter().all(|m| m.is_some_and(|v| v <= CENTER_RETURN));
    Ok(CenterCheck {
        score,
        max_abs_re,
        min_abs_im,
        returns,
        orbits_close,
    })
}

/// Searches for `u(x)` (and, if allowed, `φ(u)`) that makes the sampled
/// domain a region where the closed loop certifies.
///
/// `budget` counts inner objective evaluations. Failure after the budget
/// is reported in the result, not as an error.
pub fn synthesize(
    f: &VectorField,
    domain: &Domain,
    bounds: &DegreeBounds,
    budget: usize,
    seed: u64,
) -> Result<SynthesisResult> {
    validate(f, domain)?;
    let degrees = check_bounds(f, bounds)?;
    let (n, r) = (f.dim(), f.controls());

    let mut kalman = None;
    if let Some((a, b)) = f.linear_matrices() {
        let a = DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let b = DMatrix::from_fn(n, r, |i, j| b[i][j]);
        kalman = Some(kalman_rank(&a, &b));
        if bounds.u == 1 {
            let modes = uncontrollable_modes(&a, &b)?;
            if let Some(&(re, im)) = modes.iter().find(|z| z.0 >= -STRICT_MARGIN) {
                let layout = Layout::new(n, r, bounds.u, None);
                let fin = Finished {
                    params: vec![0.0; layout.dim()],
                    layout,
                    trace: Vec::new(),
                };
                let mut res = result_for(f, domain, Goal::Stabilize, fin, degrees, kalman, 0, budget, seed)?;
                res.success = false;
                res.note = format!(
                    "controllability rank {} < {n}; uncontrollable mode {re} {:+}i is not stable",
                    kalman.unwrap_or(0),
                    im
                );
                return Ok(res);
            }
        }
    }

    let coarse = domain.samples_with(SamplePlan::coarse_for(n), seed);
    let mut problem = Problem {
        f,
        domain,
        layout: Layout::new(n, r, bounds.u, None),
        criterion: Criterion::Margin,
        inner: inner_options(seed, n),
        coarse,
        spent: AtomicUsize::new(0),
    };
    let phase_budget = if bounds.phi.is_some() { budget / 2 } else { budget };
    let best = problem.run_widening(phase_budget, seed, None);
    let mut fin = Finished {
        params: best.x.clone(),
        layout: problem.layout.clone(),
        trace: best.trace.clone(),
    };
    let mut spent = problem.spent.load(Ordering::Relaxed);
    let mut res = result_for(f, domain, Goal::Stabilize, fin, degrees.clone(), kalman, spent, budget, seed)?;
    if res.success || bounds.phi.is_none() {
        return Ok(res);
    }

    // The pure feedback search failed: add φ(u), starting from the best u.
    problem.layout = Layout::new(n, r, bounds.u, bounds.phi);
    let mut first = best.x;
    first.resize(problem.layout.dim(), 0.0);
    let best = problem.run_widening(budget - phase_budget, seed ^ 0xa5a5, Some(&first));
    fin = Finished {
        params: best.x,
        layout: problem.layout.clone(),
        trace: best.trace,
    };
    spent = problem.spent.load(Ordering::Relaxed);
    let with_phi = result_for(f, domain, Goal::Stabilize, fin, degrees, kalman, spent, budget, seed)?;
    if with_phi.success || with_phi.certificate.margin < res.certificate.margin {
        res = with_phi;
    } else {
        res.evaluations = spent;
    }
    Ok(res)
}

/// Searches for feedback that turns the origin into a center: purely
/// imaginary spectrum on every sample, confirmed by closed simulated orbits.
pub fn make_center(
    f: &VectorField,
    domain: &Domain,
    bounds: &DegreeBounds,
    budget: usize,
    seed: u64,
) -> Result<SynthesisResult> {
    if f.dim() % 2 == 1 {
        return Err(Error::OddDimension(f.dim()));
    }
    validate(f, domain)?;
    let degrees = check_bounds(f, bounds)?;
    let (n, r) = (f.dim(), f.controls());
    let problem = Problem {
        f,
        domain,
        layout: Layout::new(n, r, bounds.u, bounds.phi),
        criterion: Criterion::Center,
        inner: inner_options(seed, n),
        coarse: domain.samples_with(SamplePlan::coarse_for(n), seed),
        spent: AtomicUsize::new(0),
    };
    let best = problem.run(budget, seed, None, Some(-STRICT_MARGIN), COEFF_BOX);
    let fin = Finished {
        params: best.x,
        layout: problem.layout.clone(),
        trace: best.trace,
    };
    let spent = problem.spent.load(Ordering::Relaxed);
    let kalman = f.linear_matrices().map(|(a, b)| {
        kalman_rank(
            &DMatrix::from_fn(n, n, |i, j| a[i][j]),
            &DMatrix::from_fn(n, r, |i, j| b[i][j]),
        )
    });
    result_for(f, domain, Goal::Center, fin, degrees, kalman, spent, budget, seed)
}
