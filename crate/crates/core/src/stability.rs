//! Sampled stability certificates for members of a factorization family.
//!
//! A member `A(x)` is checked at every sample point of a [`Domain`]; the
//! margin is the worst real part of the spectrum over all samples. A
//! negative margin yields the verdict `certified-on-samples`: this is a
//! finite check, not a proof over the whole domain.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, SamplePlan};
use crate::error::Result;
use crate::factorization::{FactorizationFamily, SampledFamily};
use crate::optimize::{self, lex_cmp, NelderMeadOptions};
use crate::par;
use crate::spectral::{self, eigenvalues, imag_threshold, max_re, min_abs_im};

/// Real parts at or above `-STRICT_MARGIN` do not count as stable.
pub const STRICT_MARGIN: f64 = 1e-9;

/// Tolerance on `|Re λ|` for purely imaginary spectra.
pub const CENTER_RE_TOL: f64 = 1e-6;

/// Default half-width of the box the random search starts are drawn from.
pub const START_HALF_WIDTH: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub point: Vec<f64>,
    /// `(re, im)` pairs sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub max_re: f64,
    pub min_abs_im: f64,
    pub hurwitz_stable: bool,
}

impl SpectralReport {
    pub fn new(a: &DMatrix<f64>, point: &[f64]) -> Result<Self> {
        let c = spectral::char_poly(a)?;
        let eigs = eigenvalues(a)?;
        Ok(SpectralReport {
            point: point.to_vec(),
            eigenvalues: eigs.iter().map(|z| (z.re, z.im)).collect(),
            max_re: max_re(&eigs),
            min_abs_im: min_abs_im(&eigs),
            hurwitz_stable: spectral::hurwitz_stable(&c),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CertifiedOnSamples,
    Refuted,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub point: Vec<f64>,
    pub max_re: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub theta: Vec<f64>,
    pub domain: Domain,
    pub plan: SamplePlan,
    /// Worst `max_i Re λ_i(x)` over the evaluated samples.
    pub margin: f64,
    pub counterexample: Option<Counterexample>,
    pub samples: usize,
    pub inconclusive_samples: usize,
    pub hurwitz_stable_samples: usize,
    /// The worst sample lies inside the `±STRICT_MARGIN` band.
    pub marginal: bool,
    pub verdict: Verdict,
}

/// Checks the member selected by `theta` on the domain's own sample plan.
pub fn certify(fam: &FactorizationFamily, theta: &[f64], domain: &Domain, seed: u64) -> Result<StabilityCertificate> {
    certify_with(fam, theta, domain, domain.plan, seed)
}

pub fn certify_with(
    fam: &FactorizationFamily,
    theta: &[f64],
    domain: &Domain,
    plan: SamplePlan,
    seed: u64,
) -> Result<StabilityCertificate> {
    let weights = fam.weights(theta)?;
    let points = domain.samples_with(plan, seed);
    let outcomes = par::map(&points, |x| {
        let a = fam.matrix_at(x, &weights);
        let c = spectral::char_poly(&a).ok()?;
        let eigs = spectral::polynomial_roots(&c, 1e-6 * (1.0 + a.norm())).ok()?;
        Some((max_re(&eigs), spectral::hurwitz_stable(&c)))
    });
    let mut margin = f64::NEG_INFINITY;
    let mut worst: Option<usize> = None;
    let mut inconclusive = 0;
    let mut hurwitz = 0;
    for (k, o) in outcomes.iter().enumerate() {
        match o {
            Some((m, h)) => {
                if *h {
                    hurwitz += 1;
                }
                if worst.is_none() || *m > margin {
                    margin = *m;
                    worst = Some(k);
                }
            }
            None => inconclusive += 1,
        }
    }
    let evaluated = points.len() - inconclusive;
    let too_many_failures = inconclusive * 100 > points.len();
    let (verdict, counterexample) = if too_many_failures || evaluated == 0 {
        (Verdict::Inconclusive, None)
    } else if margin >= -STRICT_MARGIN {
        let k = worst.expect("at least one evaluated sample");
        (
            Verdict::Refuted,
            Some(Counterexample {
                point: points[k].clone(),
                max_re: margin,
            }),
        )
    } else {
        (Verdict::CertifiedOnSamples, None)
    };
    Ok(StabilityCertificate {
        theta: theta.to_vec(),
        domain: domain.clone(),
        plan,
        margin,
        counterexample,
        samples: points.len(),
        inconclusive_samples: inconclusive,
        hurwitz_stable_samples: hurwitz,
        marginal: margin.abs() < STRICT_MARGIN,
        verdict,
    })
}

/// Point-wise spectral objectives; each is satisfied on a sample set when
/// its maximum over the samples is negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// `max Re λ`: asymptotic stability.
    Margin,
    /// Negative real parts and non-zero imaginary parts.
    Focus,
    /// Purely imaginary, non-zero spectrum.
    Center,
    /// Negative real spectrum.
    Node,
}

impl Criterion {
    pub fn score(self, a: &DMatrix<f64>, eigs: &[Complex64]) -> f64 {
        let tau = imag_threshold(a);
        let re = max_re(eigs);
        match self {
            Criterion::Margin => re,
            Criterion::Focus => (re + STRICT_MARGIN).max(tau - min_abs_im(eigs)),
            Criterion::Center => {
                let abs_re = eigs.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
                (abs_re - CENTER_RE_TOL).max(tau - min_abs_im(eigs))
            }
            Criterion::Node => {
                let max_im = eigs.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                (re + STRICT_MARGIN).max(max_im - tau)
            }
        }
    }

    /// Score of one matrix; eigenvalue failures score `+inf`.
    pub fn score_matrix(self, a: &DMatrix<f64>) -> f64 {
        match eigenvalues(a) {
            Ok(e) => self.score(a, &e),
            Err(_) => f64::INFINITY,
        }
    }

    pub fn is_satisfied(self, value: f64) -> bool {
        match self {
            Criterion::Margin => value < -STRICT_MARGIN,
            _ => value < 0.0,
        }
    }
}

/// Worst score of the member with slot weights `weights` over the samples.
pub fn sampled_score(sampled: &SampledFamily, weights: &[f64], criterion: Criterion) -> f64 {
    (0..sampled.len())
        .map(|k| criterion.score_matrix(&sampled.matrix(k, weights)))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn sampled_score_par(sampled: &SampledFamily, weights: &[f64], criterion: Criterion) -> f64 {
    par::map_range(sampled.len(), |k| criterion.score_matrix(&sampled.matrix(k, weights)))
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Cap on objective evaluations (one evaluation = one parameter vector
    /// scored on the coarse sample set).
    pub budget: usize,
    pub starts: usize,
    pub seed: u64,
    pub start_half_width: f64,
    pub coarse: Option<SamplePlan>,
    /// Stop a start once its coarse objective drops below this value.
    pub target: Option<f64>,
}

impl SearchOptions {
    pub fn new(budget: usize, seed: u64) -> Self {
        SearchOptions {
            budget,
            starts: 16,
            seed,
            start_half_width: START_HALF_WIDTH,
            coarse: None,
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub criterion: Criterion,
    pub theta: Vec<f64>,
    /// Worst score over the full sample set.
    pub value: f64,
    pub satisfied: bool,
    pub evaluations: usize,
    pub trace: Vec<f64>,
}

/// Minimizes the worst-case `criterion` score over the family parameters.
///
/// Starts (the zero vector plus uniform draws) run Nelder–Mead in parallel
/// on the coarse sample set; each end point is then scored on the full
/// sample set and the smallest value wins, ties going to the
/// lexicographically smallest parameter vector.
pub fn search_criterion(
    fam: &FactorizationFamily,
    domain: &Domain,
    criterion: Criterion,
    opts: &SearchOptions,
) -> Result<CriterionOutcome> {
    let full = fam.sampled(&domain.samples(opts.seed));
    search_on(fam, &full, domain, criterion, opts)
}

pub(crate) fn search_on(
    fam: &FactorizationFamily,
    full: &SampledFamily,
    domain: &Domain,
    criterion: Criterion,
    opts: &SearchOptions,
) -> Result<CriterionOutcome> {
    let k = fam.free_dim();
    if k == 0 {
        let w = fam.weights(&[])?;
        let value = sampled_score_par(full, &w, criterion);
        return Ok(CriterionOutcome {
            criterion,
            theta: Vec::new(),
            value,
            satisfied: criterion.is_satisfied(value),
            evaluations: 1,
            trace: vec![value],
        });
    }
    let coarse_plan = opts.coarse.unwrap_or_else(|| SamplePlan::coarse_for(fam.dim()));
    let coarse = fam.sampled(&domain.samples_with(coarse_plan, opts.seed));
    let starts = optimize::start_points(k, opts.starts.max(1), opts.start_half_width, opts.seed, 0x7e7a);
    let per_start = (opts.budget.saturating_sub(starts.len()) / starts.len()).max(1);
    let nm = NelderMeadOptions {
        max_evals: per_start,
        initial_step: 1.0,
        target: opts.target,
        ..Default::default()
    };
    let objective = |theta: &[f64]| match fam.weights(theta) {
        Ok(w) => sampled_score(&coarse, &w, criterion),
        Err(_) => f64::INFINITY,
    };
    let runs = optimize::multi_start(objective, &starts, &nm);
    let finals = par::map(&runs, |m| {
        let w = fam.weights(&m.x).expect("theta length matches family");
        sampled_score(full, &w, criterion)
    });
    let evaluations = runs.iter().map(|m| m.evals).sum::<usize>() + runs.len();
    let (idx, value) = finals
        .iter()
        .copied()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.total_cmp(b).then_with(|| lex_cmp(&runs[*i].x, &runs[*j].x)))
        .expect("at least one start");
    Ok(CriterionOutcome {
        criterion,
        theta: runs[idx].x.clone(),
        value,
        satisfied: criterion.is_satisfied(value),
        evaluations,
        trace: runs[idx].trace.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub theta: Vec<f64>,
    pub certificate: StabilityCertificate,
    pub evaluations: usize,
    pub trace: Vec<f64>,
}

/// Searches the family for a member that is Hurwitz on every sample.
///
/// When the family has free parameters a failed search is reported as
/// inconclusive: other members (including ones outside the constant
/// parametrization) may still succeed.
pub fn search_certificate(fam: &FactorizationFamily, domain: &Domain, opts: &SearchOptions) -> Result<SearchResult> {
    let found = search_criterion(fam, domain, Criterion::Margin, opts)?;
    let mut certificate = certify(fam, &found.theta, domain, opts.seed)?;
    if fam.free_dim() > 0 && certificate.verdict == Verdict::Refuted {
        certificate.verdict = Verdict::Inconclusive;
    }
    Ok(SearchResult {
        theta: found.theta,
        certificate,
        evaluations: found.evaluations,
        trace: found.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{parse_system, VectorField};

    #[test]
    fn scalar_decay_is_certified() {
        let f = VectorField::linear(&[vec![-1.0]]).unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let cert = certify(&fam, &[], &Domain::cube(1, 2.0).unwrap(), 0).unwrap();
        assert_eq!(cert.verdict, Verdict::CertifiedOnSamples);
        assert_eq!(cert.margin, -1.0);
        assert_eq!(cert.hurwitz_stable_samples, cert.samples);
    }

    #[test]
    fn oscillator_is_marginal_everywhere() {
        let f = parse_system("x1' = x2; x2' = -x1").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let cert = certify(&fam, &[], &Domain::ball(2, 1.0).unwrap(), 0).unwrap();
        assert_eq!(cert.verdict, Verdict::Refuted);
        assert!(cert.marginal);
        assert_eq!(cert.margin, 0.0);
        assert_eq!(cert.hurwitz_stable_samples, 0);
        assert!(cert.counterexample.is_some());
    }

    #[test]
    fn triangular_member_is_certified_at_zero() {
        let f = parse_system("x1' = -x1 + x1*x2; x2' = -x2 - x1*x2").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let d = Domain::ball(2, 0.5).unwrap();
        let cert = certify(&fam, &[0.0, 0.0], &d, 0).unwrap();
        assert_eq!(cert.verdict, Verdict::CertifiedOnSamples);
        let found = search_certificate(&fam, &d, &SearchOptions::new(2000, 3)).unwrap();
        assert_eq!(found.certificate.verdict, Verdict::CertifiedOnSamples);
        assert!(found.certificate.margin <= cert.margin + 1e-12);
    }

    #[test]
    fn linear_stable_search_uses_no_parameters() {
        let f = VectorField::linear(&[vec![-1.0, 3.0], vec![0.0, -2.0]]).unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let out = search_certificate(&fam, &Domain::cube(2, 1.0).unwrap(), &SearchOptions::new(100, 0)).unwrap();
        assert!(out.theta.is_empty());
        assert_eq!(out.evaluations, 1);
        assert_eq!(out.certificate.verdict, Verdict::CertifiedOnSamples);
    }

    #[test]
    fn criterion_scores() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(Criterion::Center.score_matrix(&rot) < 0.0);
        assert!(Criterion::Focus.score_matrix(&rot) > 0.0);
        let node = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert!(Criterion::Node.score_matrix(&node) < 0.0);
        assert!(Criterion::Focus.score_matrix(&node) > 0.0);
        let focus = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
        assert!(Criterion::Focus.score_matrix(&focus) < 0.0);
        assert!(Criterion::Center.score_matrix(&focus) > 0.0);
    }

    #[test]
    fn spectral_report_fields() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let r = SpectralReport::new(&a, &[0.1, 0.0]).unwrap();
        assert_eq!(r.max_re, 0.0);
        assert_eq!(r.min_abs_im, 1.0);
        assert!(!r.hurwitz_stable);
    }
}
