//! Labels the origin as focus, center, node or unstable by combining
//! constant-parameter spectral searches with simulated trajectories.
//!
//! The spectral side can only confirm; nonexistence conditions over the
//! whole factorization family are out of reach of a search. Simulation
//! supplies the falsifying side: any disagreement vetoes a label.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::factorization::FactorizationFamily;
use crate::par;
use crate::poly::{Exponents, VectorField};
use crate::simulation::{self, norm_decay, winding, DecayReport, Scheme, WindingReport};
use crate::spectral::{eigenvalues, imag_threshold, max_re, min_abs_im};
use crate::stability::{self, Criterion, SearchOptions, STRICT_MARGIN};

/// Seeds whose late/early sup-norm ratio exceeds this count as growing.
pub const GROWTH_RATIO: f64 = 1.5;
/// Closed-orbit tolerance relative to the orbit diameter.
pub const RETURN_TOLERANCE: f64 = 0.05;
/// Decay ratio band accepted for a center.
pub const CENTER_RATIO: (f64, f64) = (0.8, 1.25);
const MAX_HORIZON: f64 = 100.0;
const HORIZON_PERIODS: f64 = 20.0;
const RING_SEEDS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Focus,
    Center,
    Node,
    Unstable,
    Unknown,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Focus => "focus",
            Label::Center => "center",
            Label::Node => "node",
            Label::Unstable => "unstable",
            Label::Unknown => "unknown",
        })
    }
}

/// Sign of the imaginary parts along one representative of each conjugate
/// pair. The representative is the member in the upper half-plane, so a
/// uniform sign is always reported as positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ImSign {
    /// Every representative has `Im λ ≥ a` on every sample.
    Positive { a: f64 },
    Mixed { note: String },
    HasZero,
}

/// Checks whether the member's spectrum splits into conjugate pairs with
/// imaginary parts bounded away from zero on all samples of `domain`.
pub fn sign_uniform_im(fam: &FactorizationFamily, theta: &[f64], domain: &Domain, seed: u64) -> Result<ImSign> {
    let weights = fam.weights(theta)?;
    let points = domain.samples(seed);
    let per_point = par::map(&points, |x| {
        let a = fam.matrix_at(x, &weights);
        let eigs = match eigenvalues(&a) {
            Ok(e) => e,
            Err(e) => return Err(format!("eigenvalues failed at {x:?}: {e}")),
        };
        let tau = imag_threshold(&a);
        if eigs.iter().any(|z| z.im.abs() < tau) {
            return Ok(None);
        }
        let upper = eigs.iter().filter(|z| z.im > 0.0).count();
        if 2 * upper != eigs.len() {
            return Err(format!("unpaired complex eigenvalue at {x:?}"));
        }
        Ok(Some(min_abs_im(&eigs)))
    });
    let mut a = f64::INFINITY;
    let mut has_zero = false;
    for r in per_point {
        match r {
            Err(note) => return Ok(ImSign::Mixed { note }),
            Ok(None) => has_zero = true,
            Ok(Some(m)) => a = a.min(m),
        }
    }
    if has_zero || points.is_empty() {
        return Ok(ImSign::HasZero);
    }
    Ok(ImSign::Positive { a })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEvidence {
    pub criterion: Criterion,
    pub theta: Vec<f64>,
    /// Worst criterion score on the full sample set; satisfied when negative.
    pub score: f64,
    pub satisfied: bool,
    pub max_re: f64,
    pub min_abs_im: f64,
    pub im_sign: ImSign,
    pub evaluations: usize,
    /// Simulation findings that overrode a satisfied criterion.
    pub vetoes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEvidence {
    pub seed: Vec<f64>,
    pub diverged: bool,
    pub decay: Option<DecayReport>,
    pub winding: Option<WindingReport>,
    /// Distance to the start after one estimated period, relative to the
    /// orbit diameter over that period.
    pub return_miss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationEvidence {
    pub scheme: Scheme,
    pub horizon: f64,
    pub steps: usize,
    /// Period of the linearization, if it oscillates.
    pub period: Option<f64>,
    pub seeds: Vec<SeedEvidence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: Label,
    pub note: String,
    /// Eigenvalues of `A(0)`, shared by every member of the family.
    pub linearization: Vec<(f64, f64)>,
    pub spectral: Vec<SpectralEvidence>,
    pub simulation: SimulationEvidence,
    pub budget: usize,
    pub seed: u64,
}

fn linearization(f: &VectorField) -> DMatrix<f64> {
    let n = f.dim();
    DMatrix::from_fn(n, n, |i, j| f.component(i).coefficient(Exponents::unit(n, j).as_slice()))
}

/// Errors if `f` vanishes at a sample point: `‖f(x)‖₁` must not be lost in
/// the rounding of its own terms.
fn check_nonvanishing(f: &VectorField, points: &[Vec<f64>]) -> Result<()> {
    let bad = par::map(points, |x| {
        let mut value = 0.0;
        let mut scale = 0.0;
        for c in f.components() {
            value += c.eval(x).abs();
            scale += c.terms().map(|(e, a)| (a * e.eval(x)).abs()).sum::<f64>();
        }
        value <= 1e-12 * scale || value == 0.0
    });
    match bad.iter().position(|&b| b) {
        Some(k) => Err(Error::VanishingField {
            point: points[k].clone(),
        }),
        None => Ok(()),
    }
}

fn seed_ring(domain: &Domain) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let r = 0.5 * domain.inradius();
    if n == 1 {
        return vec![vec![r], vec![-r]];
    }
    (0..RING_SEEDS)
        .map(|k| {
            let phi = TAU * k as f64 / RING_SEEDS as f64;
            let mut x = vec![0.0; n];
            x[0] = r * phi.cos();
            x[1] = r * phi.sin();
            x
        })
        .collect()
}

fn seed_evidence(
    fam: &FactorizationFamily,
    seed: &[f64],
    horizon: f64,
    steps: usize,
    period: Option<f64>,
) -> SeedEvidence {
    let theta = vec![0.0; fam.free_dim()];
    let traj = match simulation::integrate_exp(fam, &theta, seed, 0.0, horizon, steps) {
        Ok(t) => t,
        Err(_) => {
            return SeedEvidence {
                seed: seed.to_vec(),
                diverged: true,
                decay: None,
                winding: None,
                return_miss: None,
            }
        }
    };
    let decay = norm_decay(&traj);
    let winding = (fam.dim() >= 2).then(|| winding(&traj, (0, 1), 0.0).ok()).flatten();
    // Prefer the observed winding rate over the linear period.
    let observed = winding
        .as_ref()
        .filter(|w| w.turns >= 1)
        .map(|w| horizon * TAU / w.angle.abs());
    let return_miss = observed.or(period).map(|p| return_miss(&traj, p));
    SeedEvidence {
        seed: seed.to_vec(),
        diverged: false,
        decay: Some(decay),
        winding,
        return_miss,
    }
}

fn return_miss(traj: &simulation::Trajectory, period: f64) -> f64 {
    let x0 = &traj.states[0];
    let dist = |x: &[f64]| x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let diameter = traj
        .times
        .iter()
        .zip(&traj.states)
        .take_while(|(t, _)| **t <= period * 1.000001)
        .map(|(_, x)| dist(x))
        .fold(0.0, f64::max);
    let back = traj.state_at(period);
    if diameter > 0.0 {
        dist(&back) / diameter
    } else {
        f64::INFINITY
    }
}

/// Classifies the origin of `ẋ = f(x)` on `domain`.
///
/// `budget` is shared evenly between the spectral searches.
pub fn classify(f: &VectorField, domain: &Domain, budget: usize, seed: u64) -> Result<ClassificationResult> {
    let fam = FactorizationFamily::build(f)?;
    let n = fam.dim();
    if domain.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: domain.dim(),
        });
    }
    let full_points = domain.samples(seed);
    check_nonvanishing(f, &full_points)?;

    let a0 = linearization(f);
    let lin = eigenvalues(&a0)?;
    let lin_re = max_re(&lin);
    let omega = lin.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let period = (omega > imag_threshold(&a0)).then(|| TAU / omega);
    let horizon = period.map_or(MAX_HORIZON, |p| (HORIZON_PERIODS * p).min(MAX_HORIZON));
    let dt = period.map_or(0.01, |p| (p / 100.0).min(0.01));
    let steps = (horizon / dt).ceil() as usize;

    let mut criteria = vec![Criterion::Focus, Criterion::Node];
    if n % 2 == 0 {
        criteria.push(Criterion::Center);
    }
    let share = (budget / criteria.len()).max(1);
    let seeds = seed_ring(domain);
    let full = fam.sampled(&full_points);

    let (searches, seed_runs) = par::join(
        || {
            par::map(&criteria, |&c| {
                let opts = SearchOptions::new(share, seed);
                stability::search_on(&fam, &full, domain, c, &opts)
            })
        },
        || par::map(&seeds, |s| seed_evidence(&fam, s, horizon, steps, period)),
    );

    let mut spectral = Vec::with_capacity(criteria.len());
    for s in searches {
        let s = s?;
        let w = fam.weights(&s.theta)?;
        let stats: Vec<(f64, f64)> = par::map_range(full.len(), |k| match eigenvalues(&full.matrix(k, &w)) {
            Ok(e) => (max_re(&e), min_abs_im(&e)),
            Err(_) => (f64::NAN, f64::NAN),
        });
        spectral.push(SpectralEvidence {
            criterion: s.criterion,
            im_sign: sign_uniform_im(&fam, &s.theta, domain, seed)?,
            theta: s.theta,
            score: s.value,
            satisfied: s.satisfied,
            max_re: stats.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
            min_abs_im: stats.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
            evaluations: s.evaluations,
            vetoes: Vec::new(),
        });
    }
    let sim = SimulationEvidence {
        scheme: Scheme::ExpProduct,
        horizon,
        steps,
        period,
        seeds: seed_runs,
    };
    let expected_turns = period.map_or(0.0, |p| horizon / p);
    let (label, note) = decide(n, lin_re, expected_turns, &mut spectral, &sim);
    Ok(ClassificationResult {
        label,
        note,
        linearization: lin.iter().map(|z| (z.re, z.im)).collect(),
        spectral,
        simulation: sim,
        budget,
        seed,
    })
}

fn decide(
    n: usize,
    lin_re: f64,
    expected_turns: f64,
    spectral: &mut [SpectralEvidence],
    sim: &SimulationEvidence,
) -> (Label, String) {
    if lin_re > STRICT_MARGIN {
        return (
            Label::Unstable,
            format!("linearization has an eigenvalue with real part {lin_re:e}"),
        );
    }
    let lin_stable = lin_re < -STRICT_MARGIN;
    let diverged = sim.seeds.iter().any(|s| s.diverged);
    let ratios: Vec<f64> = sim.seeds.iter().filter_map(|s| s.decay.as_ref().map(|d| d.ratio)).collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let turns: Vec<u64> = sim
        .seeds
        .iter()
        .filter_map(|s| s.winding.as_ref().map(|w| w.turns))
        .collect();
    let min_turns = turns.iter().copied().min().unwrap_or(0);
    let max_turns = turns.iter().copied().max().unwrap_or(0);

    if diverged || max_ratio > GROWTH_RATIO {
        let what = if diverged { "a seed trajectory diverged" } else { "seed trajectories grow" };
        if lin_stable {
            return (
                Label::Unknown,
                format!("{what} although the linearization is stable; the domain may exceed the basin"),
            );
        }
        return (Label::Unstable, what.to_string());
    }

    let mut remaining = Vec::new();
    for ev in spectral.iter_mut() {
        if !ev.satisfied {
            continue;
        }
        match ev.criterion {
            Criterion::Focus => {
                if max_ratio >= 1.0 - 1e-6 {
                    ev.vetoes.push(format!("seed norms do not decay (ratio {max_ratio:.6})"));
                }
                if expected_turns >= 3.0 && min_turns == 0 {
                    ev.vetoes.push("a seed trajectory does not turn".into());
                }
            }
            Criterion::Node => {
                if max_turns >= 3 {
                    ev.vetoes.push(format!("a seed trajectory turns {max_turns} times"));
                }
                if max_ratio >= 1.0 {
                    ev.vetoes.push(format!("seed norms do not decay (ratio {max_ratio:.6})"));
                }
            }
            Criterion::Center => {
                if lin_stable {
                    ev.vetoes.push("linearization is strictly stable".into());
                }
                if min_ratio < CENTER_RATIO.0 || max_ratio > CENTER_RATIO.1 {
                    ev.vetoes
                        .push(format!("seed norms drift (ratios {min_ratio:.4}..{max_ratio:.4})"));
                }
                let miss = sim
                    .seeds
                    .iter()
                    .map(|s| s.return_miss.unwrap_or(f64::INFINITY))
                    .fold(0.0, f64::max);
                if miss > RETURN_TOLERANCE {
                    ev.vetoes.push(format!("orbits do not close (miss {miss:.4} of diameter)"));
                }
            }
            Criterion::Margin => {}
        }
        if ev.vetoes.is_empty() {
            remaining.push(ev.criterion);
        }
    }

    let has = |c: Criterion| remaining.contains(&c);
    let label = match remaining.len() {
        0 => {
            return (
                Label::Unknown,
                "no spectral criterion is both satisfied on samples and consistent with simulation".into(),
            )
        }
        1 => match remaining[0] {
            Criterion::Focus => Label::Focus,
            Criterion::Node => Label::Node,
            _ => Label::Center,
        },
        _ if has(Criterion::Focus) && has(Criterion::Node) && !has(Criterion::Center) => {
            if max_turns <= 1 {
                Label::Node
            } else {
                return (Label::Unknown, "focus and node criteria both hold; turning is ambiguous".into());
            }
        }
        _ if has(Criterion::Focus) && has(Criterion::Center) && !has(Criterion::Node) => {
            if max_ratio < 1.0 - 1e-3 {
                Label::Focus
            } else {
                Label::Center
            }
        }
        _ => return (Label::Unknown, "conflicting spectral criteria".into()),
    };
    let note = match label {
        Label::Center if n > 2 => "center (evidence): even-dimensional extension beyond the plane".into(),
        Label::Center => "skew-type spectrum on samples; seed orbits close".into(),
        Label::Focus => format!("complex spectrum with negative real parts; seeds decay with at least {min_turns} turns"),
        Label::Node => format!("real negative spectrum on samples; seeds decay with at most {max_turns} turns"),
        _ => String::new(),
    };
    (label, note)
}
