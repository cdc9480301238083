//! Sampled domains around the origin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::fork_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { center: Vec<f64>, half_widths: Vec<f64> },
}

/// Grid points per axis plus a count of uniform random points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub grid: usize,
    pub random: usize,
}

impl SamplePlan {
    pub fn default_for(n: usize) -> Self {
        let grid = match n {
            0..=3 => 11,
            4 => 5,
            _ => 3,
        };
        SamplePlan { grid, random: 256 }
    }

    /// Cheap plan used inside optimization loops.
    pub fn coarse_for(n: usize) -> Self {
        let grid = match n {
            0..=3 => 5,
            _ => 3,
        };
        SamplePlan { grid, random: 32 }
    }

    /// Halves the grid spacing. The refined grid contains every point of
    /// the original one, and random points are reproduced from the seed.
    pub fn refined(self) -> Self {
        SamplePlan {
            grid: (2 * self.grid).saturating_sub(1).max(1),
            random: self.random,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub shape: Shape,
    /// Radius of the excluded ball around the origin.
    pub delta: f64,
    pub plan: SamplePlan,
}

impl Domain {
    pub fn new(shape: Shape, delta: Option<f64>, plan: Option<SamplePlan>) -> Result<Self> {
        let n = match &shape {
            Shape::Ball { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidDomain("radius must be positive".into()));
                }
                center.len()
            }
            Shape::Box { center, half_widths } => {
                if center.len() != half_widths.len() {
                    return Err(Error::InvalidDomain("center and half-widths differ in length".into()));
                }
                if half_widths.iter().any(|h| !(*h > 0.0)) {
                    return Err(Error::InvalidDomain("half-widths must be positive".into()));
                }
                center.len()
            }
        };
        if n == 0 {
            return Err(Error::InvalidDomain("dimension must be positive".into()));
        }
        let mut d = Domain {
            shape,
            delta: 0.0,
            plan: plan.unwrap_or_else(|| SamplePlan::default_for(n)),
        };
        let inr = d.inradius();
        if !(inr > 0.0) {
            return Err(Error::InvalidDomain("the origin must be an interior point".into()));
        }
        d.delta = delta.unwrap_or(1e-3 * inr);
        if !(d.delta > 0.0 && d.delta < inr) {
            return Err(Error::InvalidDomain(format!(
                "exclusion radius {} must lie in (0, {inr})",
                d.delta
            )));
        }
        Ok(d)
    }

    pub fn ball(n: usize, radius: f64) -> Result<Self> {
        Self::new(
            Shape::Ball {
                center: vec![0.0; n],
                radius,
            },
            None,
            None,
        )
    }

    pub fn cube(n: usize, half_width: f64) -> Result<Self> {
        Self::new(
            Shape::Box {
                center: vec![0.0; n],
                half_widths: vec![half_width; n],
            },
            None,
            None,
        )
    }

    pub fn with_plan(mut self, plan: SamplePlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::Box { center, .. } => center.len(),
        }
    }

    /// Distance from the origin to the boundary.
    pub fn inradius(&self) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => radius - norm(center),
            Shape::Box { center, half_widths } => center
                .iter()
                .zip(half_widths)
                .map(|(c, h)| h - c.abs())
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2.sqrt() <= radius * (1.0 + 1e-12)
            }
            Shape::Box { center, half_widths } => x
                .iter()
                .zip(center)
                .zip(half_widths)
                .all(|((a, c), h)| (a - c).abs() <= h * (1.0 + 1e-12)),
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        match &self.shape {
            Shape::Ball { center, radius } => center.iter().map(|c| (c - radius, c + radius)).collect(),
            Shape::Box { center, half_widths } => center
                .iter()
                .zip(half_widths)
                .map(|(c, h)| (c - h, c + h))
                .collect(),
        }
    }

    /// Sample points for the domain's own plan.
    pub fn samples(&self, seed: u64) -> Vec<Vec<f64>> {
        self.samples_with(self.plan, seed)
    }

    /// Grid points (in lexicographic order) followed by random points; all
    /// inside the domain and outside the `delta` ball.
    pub fn samples_with(&self, plan: SamplePlan, seed: u64) -> Vec<Vec<f64>> {
        let bounds = self.bounds();
        let n = bounds.len();
        let keep = |x: &[f64]| self.contains(x) && norm(x) > self.delta;
        let mut out = Vec::new();
        if plan.grid > 0 {
            let axis = |k: usize, (lo, hi): (f64, f64)| {
                if plan.grid == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * k as f64 / (plan.grid - 1) as f64
                }
            };
            let total = plan.grid.pow(n as u32);
            for idx in 0..total {
                let mut rem = idx;
                let mut x = vec![0.0; n];
                for d in (0..n).rev() {
                    x[d] = axis(rem % plan.grid, bounds[d]);
                    rem /= plan.grid;
                }
                if keep(&x) {
                    out.push(x);
                }
            }
        }
        let mut rng = fork_rng(seed, 0x5a3d);
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < plan.random && attempts < plan.random * 1000 {
            attempts += 1;
            let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
            if keep(&x) {
                out.push(x);
                accepted += 1;
            }
        }
        out
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// JSON descriptor accepted on the command line, e.g.
/// `{"ball":{"r":0.5}}` or `{"box":{"h":[1,1]},"grid":7}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball: Option<BallSpec>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub cube: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Widths {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub h: Widths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

impl DomainSpec {
    pub fn into_domain(self, n: usize) -> Result<Domain> {
        let center = |c: Option<Vec<f64>>| -> Result<Vec<f64>> {
            let c = c.unwrap_or_else(|| vec![0.0; n]);
            if c.len() != n {
                return Err(Error::InvalidDomain(format!("center has {} entries, system has {n}", c.len())));
            }
            Ok(c)
        };
        let shape = match (self.ball, self.cube) {
            (Some(b), None) => Shape::Ball {
                center: center(b.center)?,
                radius: b.r,
            },
            (None, Some(b)) => {
                let half_widths = match b.h {
                    Widths::Uniform(h) => vec![h; n],
                    Widths::PerAxis(v) => v,
                };
                if half_widths.len() != n {
                    return Err(Error::InvalidDomain(format!(
                        "box has {} half-widths, system has {n}",
                        half_widths.len()
                    )));
                }
                Shape::Box {
                    center: center(b.center)?,
                    half_widths,
                }
            }
            _ => return Err(Error::InvalidDomain("specify exactly one of `ball` or `box`".into())),
        };
        let mut plan = SamplePlan::default_for(n);
        if let Some(g) = self.grid {
            plan.grid = g;
        }
        if let Some(r) = self.random {
            plan.random = r;
        }
        Domain::new(shape, self.delta, Some(plan))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_samples_respect_exclusion() {
        let d = Domain::ball(2, 0.5).unwrap();
        let s = d.samples(1);
        assert!(!s.is_empty());
        for x in &s {
            assert!(norm(x) > d.delta && norm(x) <= 0.5 + 1e-12);
        }
        assert_eq!(d.delta, 5e-4);
    }

    #[test]
    fn refined_grid_contains_coarse_grid() {
        let d = Domain::cube(2, 1.0).unwrap();
        let plan = SamplePlan { grid: 5, random: 0 };
        let coarse = d.samples_with(plan, 0);
        let fine = d.samples_with(plan.refined(), 0);
        for x in &coarse {
            assert!(fine.iter().any(|y| y.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-15)));
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let d = Domain::ball(3, 1.0).unwrap();
        assert_eq!(d.samples(9), d.samples(9));
        assert_ne!(d.samples(9), d.samples(10));
    }

    #[test]
    fn origin_must_be_interior() {
        let err = Domain::new(
            Shape::Box {
                center: vec![2.0],
                half_widths: vec![1.0],
            },
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidDomain(_)));
        assert!(Domain::new(
            Shape::Ball {
                center: vec![0.0],
                radius: 1.0
            },
            Some(2.0),
            None
        )
        .is_err());
    }

    #[test]
    fn spec_from_json() {
        let spec: DomainSpec = serde_json::from_str(r#"{"ball":{"r":0.5}}"#).unwrap();
        let d = spec.into_domain(2).unwrap();
        assert_eq!(d.inradius(), 0.5);
        let spec: DomainSpec = serde_json::from_str(r#"{"box":{"h":[1,2]},"grid":3,"random":0}"#).unwrap();
        let d = spec.into_domain(2).unwrap();
        assert_eq!(d.samples(0).len(), 8);
        let bad: std::result::Result<DomainSpec, _> = serde_json::from_str(r#"{"sphere":{"r":1}}"#);
        assert!(bad.is_err());
    }
}
