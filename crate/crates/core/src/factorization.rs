//! The family of matrices `A(x)` with `A(x) x ≡ f(x)`.
//!
//! A monomial `a x^l` of `f_i` can be written as `(a x^l / x_j) x_j` for any
//! column `j` with `l_j ≥ 1`. Splitting the coefficient across the admissible
//! columns (`Σ_j α_j = a`) spans the family. Each monomial with `|J|`
//! admissible columns contributes `|J| - 1` free parameters; the remaining
//! "carrier" column absorbs `a - Σ others`. With all parameters at zero the
//! carrier (largest exponent, smallest index on ties) holds the whole
//! coefficient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{Exponents, Polynomial, VectorField};

/// How a slot's weight is obtained from the parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SlotWeight {
    /// Monomial with a single admissible column.
    Fixed(f64),
    /// Weight is `theta[index]`.
    Free(usize),
    /// Weight is `coefficient - Σ theta[others]`.
    Carrier { coefficient: f64, others: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSlot {
    pub component: usize,
    pub column: usize,
    /// Exponents of the source monomial of `f_component`.
    pub source: Exponents,
    /// Source exponents with `l_column` decremented.
    pub reduced: Exponents,
    pub weight: SlotWeight,
}

/// One linear constraint `Σ_j α_j = a` per monomial of `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonomialConstraint {
    pub component: usize,
    pub exponents: Exponents,
    pub coefficient: f64,
    pub slots: Vec<usize>,
}

/// Description of one entry of the parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub component: usize,
    pub exponents: Exponents,
    pub column: usize,
}

#[derive(Clone, Debug)]
pub struct FactorizationFamily {
    field: VectorField,
    slots: Vec<AssignmentSlot>,
    constraints: Vec<MonomialConstraint>,
    parameters: Vec<FreeParameter>,
}

impl FactorizationFamily {
    pub fn build(f: &VectorField) -> Result<Self> {
        if f.controls() > 0 {
            return Err(Error::Invalid(
                "factorization needs an uncontrolled field; close the loop first".into(),
            ));
        }
        let n = f.dim();
        let mut slots = Vec::new();
        let mut constraints = Vec::new();
        let mut parameters = Vec::new();
        for (i, p) in f.components().iter().enumerate() {
            for (exps, coefficient) in p.terms() {
                if exps.is_constant() {
                    return Err(Error::ConstantTerm {
                        component: i + 1,
                        value: coefficient,
                    });
                }
                let l = exps.as_slice();
                let support: Vec<usize> = (0..n).filter(|&j| l[j] >= 1).collect();
                let carrier = *support
                    .iter()
                    .max_by(|&&a, &&b| l[a].cmp(&l[b]).then(b.cmp(&a)))
                    .expect("non-constant monomial has support");
                let first_slot = slots.len();
                let mut others = Vec::new();
                let mut row = Vec::new();
                for &j in &support {
                    let weight = if support.len() == 1 {
                        SlotWeight::Fixed(coefficient)
                    } else if j == carrier {
                        // Patched below once all free indices are known.
                        SlotWeight::Carrier {
                            coefficient,
                            others: Vec::new(),
                        }
                    } else {
                        let idx = parameters.len();
                        parameters.push(FreeParameter {
                            component: i,
                            exponents: exps.clone(),
                            column: j,
                        });
                        others.push(idx);
                        SlotWeight::Free(idx)
                    };
                    let mut red = l.to_vec();
                    red[j] -= 1;
                    row.push(slots.len());
                    slots.push(AssignmentSlot {
                        component: i,
                        column: j,
                        source: exps.clone(),
                        reduced: Exponents::new(red),
                        weight,
                    });
                }
                for s in &mut slots[first_slot..] {
                    if let SlotWeight::Carrier { others: o, .. } = &mut s.weight {
                        *o = others.clone();
                    }
                }
                constraints.push(MonomialConstraint {
                    component: i,
                    exponents: exps.clone(),
                    coefficient,
                    slots: row,
                });
            }
        }
        Ok(FactorizationFamily {
            field: f.clone(),
            slots,
            constraints,
            parameters,
        })
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn free_dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn slots(&self) -> &[AssignmentSlot] {
        &self.slots
    }

    pub fn constraints(&self) -> &[MonomialConstraint] {
        &self.constraints
    }

    pub fn parameters(&self) -> &[FreeParameter] {
        &self.parameters
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.free_dim() {
            return Err(Error::ThetaLength {
                expected: self.free_dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Slot weights `α` for a parameter vector.
    pub fn weights(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self
            .slots
            .iter()
            .map(|s| match &s.weight {
                SlotWeight::Fixed(c) => *c,
                SlotWeight::Free(k) => theta[*k],
                SlotWeight::Carrier { coefficient, others } => {
                    coefficient - others.iter().map(|&k| theta[k]).sum::<f64>()
                }
            })
            .collect())
    }

    /// Parameter vector that puts each monomial's full coefficient on the
    /// column returned by `pick(component, exponents)`. Columns outside the
    /// monomial's support fall back to the carrier.
    pub fn theta_assigning<F>(&self, pick: F) -> Vec<f64>
    where
        F: Fn(usize, &Exponents) -> usize,
    {
        self.parameters
            .iter()
            .map(|p| {
                if pick(p.component, &p.exponents) == p.column {
                    self.field.component(p.component).coefficient(p.exponents.as_slice())
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn instantiate(&self, theta: &[f64]) -> Result<MatrixPolynomial> {
        Ok(self.instantiate_weights(&self.weights(theta)?))
    }

    /// Matrix built from raw slot weights, which need not satisfy the
    /// monomial constraints.
    pub fn instantiate_weights(&self, weights: &[f64]) -> MatrixPolynomial {
        assert_eq!(weights.len(), self.slots.len(), "one weight per slot");
        let n = self.dim();
        let mut entries = vec![Polynomial::zero(n); n * n];
        for (s, &w) in self.slots.iter().zip(weights) {
            entries[s.component * n + s.column].add_term(s.reduced.clone(), w);
        }
        MatrixPolynomial { n, entries }
    }

    /// `A(x) x - f(x)` for the member selected by `theta`.
    pub fn residual(&self, theta: &[f64]) -> Result<Vec<Polynomial>> {
        Ok(self.residual_weights(&self.weights(theta)?))
    }

    pub fn residual_weights(&self, weights: &[f64]) -> Vec<Polynomial> {
        self.instantiate_weights(weights)
            .apply_to_state()
            .iter()
            .zip(self.field.components())
            .map(|(ax, f)| ax - f)
            .collect()
    }

    /// Precomputes the slot monomials at a fixed set of points so that
    /// `A(x)` can be rebuilt for many parameter vectors cheaply.
    pub fn sampled(&self, points: &[Vec<f64>]) -> SampledFamily {
        let values = points
            .iter()
            .map(|x| self.slots.iter().map(|s| s.reduced.eval(x)).collect())
            .collect();
        SampledFamily {
            n: self.dim(),
            cells: self.slots.iter().map(|s| (s.component, s.column)).collect(),
            points: points.to_vec(),
            values,
        }
    }

    /// `A(x)` at a single point for slot weights `weights`.
    pub fn matrix_at(&self, x: &[f64], weights: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (s, &w) in self.slots.iter().zip(weights) {
            m[(s.component, s.column)] += w * s.reduced.eval(x);
        }
        m
    }
}

/// A family evaluated on a fixed point set.
#[derive(Clone, Debug)]
pub struct SampledFamily {
    n: usize,
    cells: Vec<(usize, usize)>,
    points: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl SampledFamily {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn matrix(&self, k: usize, weights: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for ((&(i, j), &v), &w) in self.cells.iter().zip(&self.values[k]).zip(weights) {
            m[(i, j)] += w * v;
        }
        m
    }
}

/// An `n × n` matrix of polynomials in the state variables.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPolynomial {
    n: usize,
    entries: Vec<Polynomial>,
}

impl MatrixPolynomial {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.n + j]
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).eval(x))
    }

    /// Constant part `A(0)`; `A(x) - A(0)` is the nonlinear remainder.
    pub fn linear_part(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).constant_term())
    }

    /// The polynomial vector `A(x) x`.
    pub fn apply_to_state(&self) -> Vec<Polynomial> {
        (0..self.n)
            .map(|i| {
                (0..self.n).fold(Polynomial::zero(self.n), |acc, j| &acc + &self.entry(i, j).shift(j))
            })
            .collect()
    }

    pub fn max_entry_degree(&self) -> u32 {
        self.entries.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// Entries as DSL strings, row by row.
    pub fn to_strings(&self) -> Vec<Vec<String>> {
        let names: Vec<String> = (1..=self.n).map(|i| format!("x{i}")).collect();
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.entry(i, j).fmt_with(&names)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_system;

    #[test]
    fn product_monomial_has_one_free_parameter() {
        let f = parse_system("x1' = x1*x2; x2' = -x2").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        assert_eq!(fam.free_dim(), 1);
        // x1*x2: tie on exponents, carrier is column 1, free is column 2.
        let a = fam.instantiate(&[0.5]).unwrap();
        assert_eq!(a.entry(0, 0).coefficient(&[0, 1]), 0.5);
        assert_eq!(a.entry(0, 1).coefficient(&[1, 0]), 0.5);
    }

    #[test]
    fn linear_field_is_unique_member() {
        let f = VectorField::linear(&[vec![-1.0, 2.0], vec![0.5, -3.0]]).unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        assert_eq!(fam.free_dim(), 0);
        let a = fam.instantiate(&[]).unwrap();
        assert_eq!(a.linear_part(), DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]));
        assert_eq!(a.max_entry_degree(), 0);
    }

    #[test]
    fn baseline_uses_largest_exponent() {
        let f = parse_system("x1' = x1*x2^2; x2' = x1^2*x2").unwrap();
        let a = FactorizationFamily::build(&f).unwrap().instantiate(&[0.0, 0.0]).unwrap();
        assert_eq!(a.entry(0, 1).coefficient(&[1, 1]), 1.0);
        assert_eq!(a.entry(1, 0).coefficient(&[1, 1]), 1.0);
    }

    #[test]
    fn wrong_theta_length() {
        let f = parse_system("x1' = x1*x2; x2' = -x2").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        assert_eq!(
            fam.instantiate(&[]).unwrap_err(),
            Error::ThetaLength { expected: 1, got: 0 }
        );
    }

    #[test]
    fn violated_constraint_shows_in_residual() {
        let f = parse_system("x1' = x1*x2; x2' = -x2").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let mut w = fam.weights(&[0.3]).unwrap();
        w[0] -= 1.0;
        let res = fam.residual_weights(&w);
        assert_eq!(res[0].len(), 1);
        assert!((res[0].coefficient(&[1, 1]) + 1.0).abs() < 1e-15);
        assert!(res[1].is_zero());
    }

    #[test]
    fn zero_field_has_zero_residual() {
        let f = parse_system("x1' = 0").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        assert_eq!(fam.free_dim(), 0);
        assert!(fam.residual(&[]).unwrap().iter().all(Polynomial::is_zero));
    }

    #[test]
    fn quadratic_field_has_zero_linear_part() {
        let f = parse_system("x1' = x1^2 - x1*x2; x2' = x2^2").unwrap();
        let a = FactorizationFamily::build(&f).unwrap().instantiate(&[0.7]).unwrap();
        assert_eq!(a.linear_part(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn sampled_matrix_matches_polynomial_matrix() {
        let f = parse_system("x1' = x1^2*x2 + x2 + 2*x1*x2^2; x2' = -x1 + 3*x1^2*x2 - 2*x1*x2^2").unwrap();
        let fam = FactorizationFamily::build(&f).unwrap();
        let theta = [0.3, -1.2, 2.0, 0.25];
        let pts = vec![vec![0.3, -0.7], vec![1.1, 0.4]];
        let sampled = fam.sampled(&pts);
        let w = fam.weights(&theta).unwrap();
        let a = fam.instantiate(&theta).unwrap();
        for (k, x) in pts.iter().enumerate() {
            let diff = sampled.matrix(k, &w) - a.eval(x);
            assert!(diff.amax() < 1e-14);
            assert!((fam.matrix_at(x, &w) - a.eval(x)).amax() < 1e-14);
        }
    }
}
