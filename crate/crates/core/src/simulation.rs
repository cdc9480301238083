//! Trajectories: the exponential-product scheme, a fixed-step RK4
//! reference, and diagnostics (winding counts, norm decay).

use std::f64::consts::TAU;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::norm;
use crate::error::{Error, Result};
use crate::expm::expm;
use crate::factorization::FactorizationFamily;
use crate::par;
use crate::poly::VectorField;

/// States whose norm exceeds this abort the integration.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExpProduct,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// State at time `t` by linear interpolation between stored states.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.states[0].clone();
        }
        if k >= self.len() {
            return self.last().to_vec();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.states[k - 1]
            .iter()
            .zip(&self.states[k])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Largest Euclidean gap to `reference` over this trajectory's times.
    pub fn sup_distance(&self, reference: &Trajectory) -> f64 {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, x)| {
                let r = reference.state_at(t);
                norm(&x.iter().zip(&r).map(|(a, b)| a - b).collect::<Vec<_>>())
            })
            .fold(0.0, f64::max)
    }
}

fn check_run(x0: &[f64], n: usize, t0: f64, t_end: f64, steps: usize) -> Result<()> {
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if steps == 0 {
        return Err(Error::Invalid("at least one step is required".into()));
    }
    if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::Invalid(format!("need a finite horizon with t_end > t0, got [{t0}, {t_end}]")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial state must be finite".into()));
    }
    Ok(())
}

fn times(t0: f64, t_end: f64, steps: usize) -> Vec<f64> {
    let dt = (t_end - t0) / steps as f64;
    let mut t: Vec<f64> = (0..=steps).map(|i| t0 + i as f64 * dt).collect();
    t[steps] = t_end;
    t
}

fn diverged(x: &[f64]) -> Option<f64> {
    let nx = norm(x);
    (!nx.is_finite() || nx > DIVERGENCE_NORM).then_some(nx)
}

/// `x_{i+1} = exp(A(x_i) Δt) x_i` on a uniform partition with `steps`
/// intervals, for the family member selected by `theta`.
pub fn integrate_exp(
    fam: &FactorizationFamily,
    theta: &[f64],
    x0: &[f64],
    t0: f64,
    t_end: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_run(x0, fam.dim(), t0, t_end, steps)?;
    let weights = fam.weights(theta)?;
    let times = times(t0, t_end, steps);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    for i in 0..steps {
        let x = &states[i];
        let dt = times[i + 1] - times[i];
        let a = fam.matrix_at(x, &weights);
        let next = match expm(&a, dt) {
            Ok(e) => (e * DVector::from_column_slice(x)).as_slice().to_vec(),
            Err(Error::ExpmOverflow { norm }) => {
                return Err(Error::Divergence {
                    time: times[i + 1],
                    norm,
                    last_state: x.clone(),
                })
            }
            Err(e) => return Err(e),
        };
        if let Some(norm) = diverged(&next) {
            return Err(Error::Divergence {
                time: times[i + 1],
                norm,
                last_state: x.clone(),
            });
        }
        states.push(next);
    }
    Ok(Trajectory {
        scheme: Scheme::ExpProduct,
        times,
        states,
    })
}

/// Classical fixed-step fourth-order Runge–Kutta on `ẋ = f(x)`.
pub fn integrate_reference(f: &VectorField, x0: &[f64], t0: f64, t_end: f64, steps: usize) -> Result<Trajectory> {
    if f.controls() > 0 {
        return Err(Error::Invalid("close the control loop before integrating".into()));
    }
    check_run(x0, f.dim(), t0, t_end, steps)?;
    let times = times(t0, t_end, steps);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    let axpy = |x: &[f64], h: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for i in 0..steps {
        let x = &states[i];
        let h = times[i + 1] - times[i];
        let k1 = f.eval_state(x);
        let k2 = f.eval_state(&axpy(x, h / 2.0, &k1));
        let k3 = f.eval_state(&axpy(x, h / 2.0, &k2));
        let k4 = f.eval_state(&axpy(x, h, &k3));
        let next: Vec<f64> = (0..x.len())
            .map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect();
        if let Some(norm) = diverged(&next) {
            return Err(Error::Divergence {
                time: times[i + 1],
                norm,
                last_state: x.clone(),
            });
        }
        states.push(next);
    }
    Ok(Trajectory {
        scheme: Scheme::Reference,
        times,
        states,
    })
}

/// Integrates one trajectory per seed in parallel with the chosen scheme.
pub fn portrait(
    fam: &FactorizationFamily,
    theta: &[f64],
    seeds: &[Vec<f64>],
    t_end: f64,
    steps: usize,
    scheme: Scheme,
) -> Vec<Result<Trajectory>> {
    par::map(seeds, |x0| match scheme {
        Scheme::ExpProduct => integrate_exp(fam, theta, x0, 0.0, t_end, steps),
        Scheme::Reference => integrate_reference(fam.field(), x0, 0.0, t_end, steps),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindingReport {
    /// Coordinate axes spanning the projection plane.
    pub plane: (usize, usize),
    /// Angle of the reference ray in that plane.
    pub ray: f64,
    /// Heading of the first projected state relative to the ray, in `(-π, π]`.
    pub initial_angle: f64,
    /// Accumulated signed angle.
    pub angle: f64,
    pub turns: u64,
    /// All non-zero increments share one sign.
    pub monotone: bool,
    /// Projected states at the origin that were skipped.
    pub skipped: usize,
}

/// Sums signed heading increments of the projection of `traj` onto the
/// `plane` axes. For `n > 2` this only sees one coordinate plane.
pub fn winding(traj: &Trajectory, plane: (usize, usize), ray: f64) -> Result<WindingReport> {
    let n = traj.dim();
    if plane.0 >= n || plane.1 >= n || plane.0 == plane.1 {
        return Err(Error::Invalid(format!(
            "projection plane ({}, {}) is not a pair of distinct axes of a {n}-dimensional state",
            plane.0 + 1,
            plane.1 + 1
        )));
    }
    if traj.len() < 2 {
        return Err(Error::Invalid("winding needs at least two states".into()));
    }
    let mut skipped = 0;
    let mut prev: Option<(f64, f64)> = None;
    let mut initial_angle = 0.0;
    let mut angle = 0.0;
    let (mut pos, mut neg) = (false, false);
    for x in &traj.states {
        let p = (x[plane.0], x[plane.1]);
        if p.0 == 0.0 && p.1 == 0.0 {
            skipped += 1;
            continue;
        }
        match prev {
            None => {
                let a = p.1.atan2(p.0) - ray;
                initial_angle = a - TAU * ((a + std::f64::consts::PI) / TAU).floor();
                if initial_angle <= -std::f64::consts::PI {
                    initial_angle += TAU;
                }
            }
            Some(q) => {
                let cross = q.0 * p.1 - q.1 * p.0;
                let dot = q.0 * p.0 + q.1 * p.1;
                let d = cross.atan2(dot);
                if d > 0.0 {
                    pos = true;
                } else if d < 0.0 {
                    neg = true;
                }
                angle += d;
            }
        }
        prev = Some(p);
    }
    if prev.is_none() {
        return Err(Error::Invalid("every projected state is at the origin".into()));
    }
    Ok(WindingReport {
        plane,
        ray,
        initial_angle,
        angle,
        turns: turn_count(angle),
        monotone: !(pos && neg),
        skipped,
    })
}

/// Time at which the projected heading has first swept a full turn,
/// interpolated within the step that completes it.
pub fn first_turn_time(traj: &Trajectory, plane: (usize, usize)) -> Option<f64> {
    let mut angle = 0.0;
    let mut prev: Option<(usize, (f64, f64))> = None;
    for (k, x) in traj.states.iter().enumerate() {
        let p = (x[plane.0], x[plane.1]);
        if p.0 == 0.0 && p.1 == 0.0 {
            continue;
        }
        if let Some((j, q)) = prev {
            let d = (q.0 * p.1 - q.1 * p.0).atan2(q.0 * p.0 + q.1 * p.1);
            if (angle + d).abs() >= TAU && d != 0.0 {
                let w = (TAU - angle.abs()) / d.abs();
                return Some(traj.times[j] + w * (traj.times[k] - traj.times[j]));
            }
            angle += d;
        }
        prev = Some((k, p));
    }
    None
}

/// Full sweeps in an accumulated angle; a sweep short of `2π` only by
/// rounding still counts.
pub fn turn_count(angle: f64) -> u64 {
    (angle.abs() / TAU + 1e-9).floor() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayClass {
    MonotoneToZero,
    Bounded,
    Diverging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub class: DecayClass,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub first_quarter_sup: f64,
    pub last_quarter_sup: f64,
    /// `last_quarter_sup / first_quarter_sup`.
    pub ratio: f64,
    pub shrinking: bool,
}

pub fn norm_decay(traj: &Trajectory) -> DecayReport {
    let norms: Vec<f64> = traj.states.iter().map(|x| norm(x)).collect();
    let final_norm = *norms.last().unwrap_or(&0.0);
    let class = if final_norm < 1e-6 {
        DecayClass::MonotoneToZero
    } else if final_norm > 1e6 || !final_norm.is_finite() {
        DecayClass::Diverging
    } else {
        DecayClass::Bounded
    };
    let (t0, t1) = match (traj.times.first(), traj.times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0.0, 0.0),
    };
    let q = (t1 - t0) / 4.0;
    let sup_where = |keep: &dyn Fn(f64) -> bool| {
        traj.times
            .iter()
            .zip(&norms)
            .filter(|(t, _)| keep(**t))
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    };
    let first = sup_where(&|t| t <= t0 + q);
    let last = sup_where(&|t| t >= t1 - q);
    let ratio = if first > 0.0 { last / first } else { f64::NAN };
    DecayReport {
        class,
        initial_norm: norms.first().copied().unwrap_or(0.0),
        final_norm,
        first_quarter_sup: first,
        last_quarter_sup: last,
        ratio,
        shrinking: last < first,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_system;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn family(src: &str) -> FactorizationFamily {
        FactorizationFamily::build(&parse_system(src).unwrap()).unwrap()
    }

    #[test]
    fn linear_single_step_is_exact() {
        let fam = family("x1' = -x1; x2' = -2*x2");
        let t = integrate_exp(&fam, &[], &[1.0, 1.0], 0.0, 1.0, 1).unwrap();
        assert_eq!(t.len(), 2);
        assert_relative_eq!(t.last()[0], (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(t.last()[1], (-2.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn oscillator_returns_after_one_period() {
        let fam = family("x1' = x2; x2' = -x1");
        for k in [1, 7, 100] {
            let t = integrate_exp(&fam, &[], &[1.0, 0.0], 0.0, 2.0 * PI, k).unwrap();
            assert!((t.last()[0] - 1.0).abs() < 1e-12 && t.last()[1].abs() < 1e-12);
        }
    }

    #[test]
    fn rk4_scalar_decay() {
        let f = parse_system("x1' = -x1").unwrap();
        let t = integrate_reference(&f, &[1.0], 0.0, 1.0, 100).unwrap();
        assert!((t.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(t.states[0], vec![1.0]);
    }

    #[test]
    fn rk4_energy_drift() {
        let f = parse_system("x1' = x2; x2' = -x1").unwrap();
        let t = integrate_reference(&f, &[1.0, 0.0], 0.0, 2.0 * PI, 1000).unwrap();
        let e = t.last()[0].powi(2) + t.last()[1].powi(2);
        assert!((e - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_field_is_constant() {
        let f = parse_system("states 2\nx1' = 0\nx2' = 0").unwrap();
        let t = integrate_reference(&f, &[0.3, -0.2], 0.0, 1.0, 10).unwrap();
        assert!(t.states.iter().all(|x| x == &vec![0.3, -0.2]));
    }

    #[test]
    fn divergence_keeps_last_state() {
        let f = parse_system("x1' = x1^2").unwrap();
        match integrate_reference(&f, &[1.0], 0.0, 2.0, 2000) {
            Err(Error::Divergence { last_state, time, .. }) => {
                assert!(last_state[0].is_finite());
                assert!(time <= 1.01);
            }
            other => panic!("{other:?}"),
        }
        let fam = family("x1' = x1^2");
        assert!(matches!(
            integrate_exp(&fam, &[], &[1.0], 0.0, 2.0, 2000),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn skew_member_preserves_norm() {
        // θ moves the x1^2*x2 coefficient into column 2, making A(x) skew.
        let fam = family("x1' = x2 + x1^2*x2; x2' = -x1 - x1^3");
        assert_eq!(fam.free_dim(), 1);
        let t = integrate_exp(&fam, &[1.0], &[0.6, 0.2], 0.0, 10.0, 500).unwrap();
        let n0 = norm(&t.states[0]);
        for x in &t.states {
            assert!((norm(x) - n0).abs() < 1e-10);
        }
    }

    #[test]
    fn winding_counts() {
        let fam = family("x1' = x2; x2' = -x1");
        let t = integrate_exp(&fam, &[], &[1.0, 0.0], 0.0, 4.0 * PI, 1000).unwrap();
        let w = winding(&t, (0, 1), 0.0).unwrap();
        assert_eq!(w.turns, 2);
        assert!(w.monotone);
        assert!(w.angle < 0.0);

        let fam = family("x1' = -x1; x2' = -x2");
        let t = integrate_exp(&fam, &[], &[1.0, 1.0], 0.0, 10.0, 100).unwrap();
        let w = winding(&t, (0, 1), 0.0).unwrap();
        assert_eq!(w.turns, 0);
        assert_relative_eq!(w.initial_angle, PI / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn first_turn_of_oscillator() {
        let fam = family("x1' = x2; x2' = -x1");
        let t = integrate_exp(&fam, &[], &[1.0, 0.0], 0.0, 10.0, 1000).unwrap();
        let p = first_turn_time(&t, (0, 1)).unwrap();
        assert!((p - 2.0 * PI).abs() < 1e-9, "{p}");
    }

    #[test]
    fn damped_spiral_turns() {
        let fam = family("x1' = x2; x2' = -x1 - 0.1*x2");
        let t = integrate_exp(&fam, &[], &[1.0, 0.0], 0.0, 40.0 * PI, 4000).unwrap();
        let w = winding(&t, (0, 1), 0.0).unwrap();
        assert!(w.turns >= 15, "{w:?}");
        assert!(norm_decay(&t).shrinking);
    }

    #[test]
    fn origin_states_are_skipped() {
        let t = Trajectory {
            scheme: Scheme::Reference,
            times: vec![0.0, 1.0, 2.0],
            states: vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]],
        };
        let w = winding(&t, (0, 1), 0.0).unwrap();
        assert_eq!(w.skipped, 1);
        assert_relative_eq!(w.angle, PI / 2.0);
    }

    #[test]
    fn decay_classes() {
        let node = family("x1' = -x1; x2' = -2*x2");
        let t = integrate_exp(&node, &[], &[1.0, 1.0], 0.0, 20.0, 100).unwrap();
        assert_eq!(norm_decay(&t).class, DecayClass::MonotoneToZero);

        let osc = family("x1' = x2; x2' = -x1");
        let t = integrate_exp(&osc, &[], &[1.0, 0.0], 0.0, 20.0, 100).unwrap();
        let d = norm_decay(&t);
        assert_eq!(d.class, DecayClass::Bounded);
        assert!((d.final_norm - 1.0).abs() < 1e-12);

        let grow = family("x1' = x1");
        let t = integrate_exp(&grow, &[], &[1.0], 0.0, 20.0, 100).unwrap();
        assert_eq!(norm_decay(&t).class, DecayClass::Diverging);
    }

    #[test]
    fn interpolation_hits_stored_states() {
        let fam = family("x1' = -x1");
        let t = integrate_exp(&fam, &[], &[1.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(t.state_at(0.5), t.states[2]);
        assert_eq!(t.sup_distance(&t), 0.0);
    }
}
