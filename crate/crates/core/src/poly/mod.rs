//! Sparse multivariate polynomials over `f64` and polynomial vector fields.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Exponents`], whose ordering is
//! graded: total degree first, then lexicographic with `x1` most significant.
//! Iteration, evaluation and printing all follow that order, which keeps
//! floating-point sums reproducible.

mod parse;

pub use parse::{parse_polynomial, parse_system};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Exponents(Vec<u32>);

impl Exponents {
    pub fn new(exps: Vec<u32>) -> Self {
        Exponents(exps)
    }

    pub fn zero(nvars: usize) -> Self {
        Exponents(vec![0; nvars])
    }

    pub fn unit(nvars: usize, var: usize) -> Self {
        let mut e = vec![0; nvars];
        e[var] = 1;
        Exponents(e)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Total degree restricted to the variables in `range`.
    pub fn degree_in(&self, range: std::ops::Range<usize>) -> u32 {
        self.0[range].iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    fn add(&self, other: &Exponents) -> Exponents {
        Exponents(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Value of the monomial `x^self` at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for Exponents {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Exponents {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A single term `coefficient * x^exponents`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub exponents: Exponents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Exponents, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, [(Exponents::zero(nvars), c)])
    }

    /// The polynomial `x_var` (zero-based index).
    pub fn var(nvars: usize, var: usize) -> Self {
        Self::from_terms(nvars, [(Exponents::unit(nvars, var), 1.0)])
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, merging
    /// repeated exponents and dropping exact zeros.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Exponents, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (e, c) in terms {
            assert_eq!(e.len(), nvars, "exponent vector length");
            p.add_term(e, c);
        }
        p
    }

    pub fn add_term(&mut self, exps: Exponents, coefficient: f64) {
        if coefficient == 0.0 {
            return;
        }
        match self.terms.get_mut(&exps) {
            Some(c) => {
                *c += coefficient;
                if *c == 0.0 {
                    self.terms.remove(&exps);
                }
            }
            None => {
                self.terms.insert(exps, coefficient);
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, f64)> + '_ {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn monomials(&self) -> impl Iterator<Item = Monomial> + '_ {
        self.terms.iter().map(|(e, &c)| Monomial {
            coefficient: c,
            exponents: e.clone(),
        })
    }

    pub fn coefficient(&self, exps: &[u32]) -> f64 {
        self.terms
            .get(&Exponents(exps.to_vec()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.terms
            .get(&Exponents::zero(self.nvars))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Exponents::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, range: std::ops::Range<usize>) -> u32 {
        self.terms
            .keys()
            .map(|e| e.degree_in(range.clone()))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars, "evaluation point dimension");
        self.terms.iter().map(|(e, &c)| c * e.eval(x)).sum()
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.nvars, self.terms.iter().map(|(e, &c)| (e.clone(), c * s)))
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    /// Re-embeds the polynomial in `nvars` variables, sending variable `i`
    /// to position `map[i]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Polynomial {
        assert_eq!(map.len(), self.nvars);
        Polynomial::from_terms(
            nvars,
            self.terms.iter().map(|(e, &c)| {
                let mut ne = vec![0; nvars];
                for (i, &k) in e.0.iter().enumerate() {
                    ne[map[i]] += k;
                }
                (Exponents(ne), c)
            }),
        )
    }

    /// Substitutes variable `i` by `images[i]`; all images share one
    /// variable count, which becomes the variable count of the result.
    pub fn compose(&self, images: &[Polynomial]) -> Polynomial {
        assert_eq!(images.len(), self.nvars);
        let target = images.first().map(|p| p.nvars).unwrap_or(0);
        let mut out = Polynomial::zero(target);
        let mut cache: Vec<Vec<Polynomial>> = vec![Vec::new(); self.nvars];
        for (e, &c) in &self.terms {
            let mut term = Polynomial::constant(target, c);
            for (i, &k) in e.0.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let powers = &mut cache[i];
                if powers.is_empty() {
                    powers.push(Polynomial::constant(target, 1.0));
                }
                while powers.len() <= k as usize {
                    let next = powers.last().unwrap() * &images[i];
                    powers.push(next);
                }
                term = &term * &powers[k as usize];
            }
            out = &out + &term;
        }
        out
    }

    /// Multiplies every term by `x_var`.
    pub fn shift(&self, var: usize) -> Polynomial {
        let unit = Exponents::unit(self.nvars, var);
        Polynomial::from_terms(self.nvars, self.terms.iter().map(|(e, &c)| (e.add(&unit), c)))
    }

    /// Writes the polynomial in the system DSL with the given variable names.
    pub fn fmt_with(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (e, &c)) in self.terms.iter().enumerate() {
            let vars: Vec<String> = e
                .0
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(j, &k)| {
                    if k == 1 {
                        names[j].clone()
                    } else {
                        format!("{}^{}", names[j], k)
                    }
                })
                .collect();
            let negative = c < 0.0;
            let mag = c.abs();
            if i == 0 {
                if negative {
                    out.push('-');
                }
            } else {
                out.push_str(if negative { " - " } else { " + " });
            }
            if vars.is_empty() {
                out.push_str(&format_coefficient(mag));
            } else {
                if mag != 1.0 {
                    out.push_str(&format_coefficient(mag));
                    out.push('*');
                }
                out.push_str(&vars.join("*"));
            }
        }
        out
    }
}

fn format_coefficient(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

impl<'a> Add<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &'a Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term(e.clone(), c);
        }
        out
    }
}

impl<'a> Sub<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &'a Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term(e.clone(), -c);
        }
        out
    }
}

impl<'a> Mul<&'a Polynomial> for &'a Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &'a Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut acc: BTreeMap<Exponents, f64> = BTreeMap::new();
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &rhs.terms {
                *acc.entry(ea.add(eb)).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, c| *c != 0.0);
        Polynomial {
            nvars: self.nvars,
            terms: acc,
        }
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Degrees of a vector field in the state variables, the control variables
/// and the joint variable `z = (x, u)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degrees {
    pub x: u32,
    pub u: u32,
    pub z: u32,
}

/// Dense row-major matrix.
pub type Rows = Vec<Vec<f64>>;

/// Right-hand side `f(x)` or `f(x, u)` of a polynomial ODE system.
///
/// Each component is a [`Polynomial`] in `n + r` variables: the `n` state
/// variables first, then the `r` controls.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    n: usize,
    r: usize,
    components: Vec<Polynomial>,
}

impl VectorField {
    pub fn new(n: usize, r: usize, components: Vec<Polynomial>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("state dimension must be positive".into()));
        }
        if components.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: components.len(),
            });
        }
        for p in &components {
            if p.nvars() != n + r {
                return Err(Error::DimensionMismatch {
                    expected: n + r,
                    got: p.nvars(),
                });
            }
        }
        Ok(VectorField { n, r, components })
    }

    /// Linear field `f(x) = A x` from a row-major matrix.
    pub fn linear(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let comps = a
            .iter()
            .map(|row| {
                Polynomial::from_terms(
                    n,
                    row.iter()
                        .enumerate()
                        .map(|(j, &c)| (Exponents::unit(n, j), c)),
                )
            })
            .collect();
        VectorField::new(n, 0, comps)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn controls(&self) -> usize {
        self.r
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn variable_names(&self) -> Vec<String> {
        (1..=self.n)
            .map(|i| format!("x{i}"))
            .chain((1..=self.r).map(|i| format!("u{i}")))
            .collect()
    }

    pub fn eval(&self, x: &[f64], u: Option<&[f64]>) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let u = u.unwrap_or(&[]);
        if self.r > 0 && u.len() != self.r && !u.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.r,
                got: u.len(),
            });
        }
        if self.r == 0 && !u.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 0,
                got: u.len(),
            });
        }
        let mut z = Vec::with_capacity(self.n + self.r);
        z.extend_from_slice(x);
        if u.is_empty() {
            z.resize(self.n + self.r, 0.0);
        } else {
            z.extend_from_slice(u);
        }
        Ok(self.components.iter().map(|p| p.eval(&z)).collect())
    }

    /// Evaluation of an uncontrolled field (controls, if any, set to zero).
    pub fn eval_state(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        z.resize(self.n + self.r, 0.0);
        self.components.iter().map(|p| p.eval(&z)).collect()
    }

    pub fn degree(&self) -> Degrees {
        let n = self.n;
        let nr = self.n + self.r;
        let mut d = Degrees { x: 0, u: 0, z: 0 };
        for p in &self.components {
            d.x = d.x.max(p.degree_in(0..n));
            d.u = d.u.max(p.degree_in(n..nr));
            d.z = d.z.max(p.degree());
        }
        d
    }

    /// True when every term has total degree at most one.
    pub fn is_linear(&self) -> bool {
        self.degree().z <= 1
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField {
            n: self.n,
            r: self.r,
            components: self.components.iter().map(|p| p.scale(s)).collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        if self.n != other.n || self.r != other.r {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(VectorField {
            n: self.n,
            r: self.r,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Coefficient matrices `(A, B)` of a field that is linear in `(x, u)`.
    pub fn linear_matrices(&self) -> Option<(Rows, Rows)> {
        if !self.is_linear() {
            return None;
        }
        let nr = self.n + self.r;
        let coeff = |p: &Polynomial, j: usize| p.coefficient(Exponents::unit(nr, j).as_slice());
        let a = self
            .components
            .iter()
            .map(|p| (0..self.n).map(|j| coeff(p, j)).collect())
            .collect();
        let b = self
            .components
            .iter()
            .map(|p| (self.n..nr).map(|j| coeff(p, j)).collect())
            .collect();
        Some((a, b))
    }

    /// Canonical DSL text; `parse_system` reads it back to an equal field.
    pub fn to_dsl(&self) -> String {
        let names = self.variable_names();
        let mut out = format!("states {}\n", self.n);
        if self.r > 0 {
            out.push_str(&format!("controls {}\n", self.r));
        }
        for (i, p) in self.components.iter().enumerate() {
            out.push_str(&format!("x{}' = {}\n", i + 1, p.fmt_with(&names)));
        }
        out
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_dsl())
    }
}
