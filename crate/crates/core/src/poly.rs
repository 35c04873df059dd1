//! Polynomial fields in `(x, y)` whose coefficients may be parameter
//! families of `y`. These back the declarative system files.

use nalgebra::{DMatrix, DVector};

use crate::params::ParamFamily;
use crate::system::{ScalarField, SlowField, VectorField};

/// `coeff * prod p_k(y) * prod x_i^a_i * prod y_j^b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTerm {
    pub coeff: f64,
    pub params: Vec<ParamFamily>,
    pub x_exp: Vec<u32>,
    pub y_exp: Vec<u32>,
}

fn powi(v: f64, e: u32) -> f64 {
    v.powi(e as i32)
}

/// Monomial value, or its partial derivative in coordinate `lower`.
fn monomial(v: &DVector<f64>, exps: &[u32], lower: Option<usize>) -> f64 {
    if lower.is_some_and(|i| i >= exps.len()) {
        return 0.0;
    }
    let mut out = 1.0;
    for (i, &e) in exps.iter().enumerate() {
        let vi = v.get(i).copied().unwrap_or(0.0);
        if Some(i) == lower {
            if e == 0 {
                return 0.0;
            }
            out *= e as f64 * powi(vi, e - 1);
        } else {
            out *= powi(vi, e);
        }
    }
    out
}

impl PolyTerm {
    fn param_product(&self, y: &DVector<f64>) -> f64 {
        self.params.iter().map(|p| p.value(y)).product()
    }

    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.coeff
            * self.param_product(y)
            * monomial(x, &self.x_exp, None)
            * monomial(y, &self.y_exp, None)
    }

    fn dx(&self, x: &DVector<f64>, y: &DVector<f64>, i: usize) -> f64 {
        self.coeff
            * self.param_product(y)
            * monomial(x, &self.x_exp, Some(i))
            * monomial(y, &self.y_exp, None)
    }

    fn dy(&self, x: &DVector<f64>, y: &DVector<f64>, j: usize) -> f64 {
        let xm = monomial(x, &self.x_exp, None);
        if xm == 0.0 || self.coeff == 0.0 {
            return 0.0;
        }
        let ym = monomial(y, &self.y_exp, None);
        let dym = monomial(y, &self.y_exp, Some(j));
        let vals: Vec<f64> = self.params.iter().map(|p| p.value(y)).collect();
        // product rule over the parameter factors
        let mut dparams = 0.0;
        for (k, p) in self.params.iter().enumerate() {
            let g = p.gradient(y);
            let dk = g.get(j).copied().unwrap_or(0.0);
            if dk != 0.0 {
                let rest: f64 = vals
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != k)
                    .map(|(_, v)| v)
                    .product();
                dparams += dk * rest;
            }
        }
        let prod: f64 = vals.iter().product();
        self.coeff * xm * (dparams * ym + prod * dym)
    }
}

/// Scalar polynomial: a sum of terms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<PolyTerm>,
}

impl Polynomial {
    pub fn new(terms: Vec<PolyTerm>) -> Self {
        Self { terms }
    }

    pub fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.terms.iter().map(|t| t.value(x, y)).sum()
    }

    pub fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            self.terms.iter().map(|t| t.dx(x, y, i)).sum()
        })
    }

    pub fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |j, _| {
            self.terms.iter().map(|t| t.dy(x, y, j)).sum()
        })
    }
}

impl ScalarField for Polynomial {
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        Polynomial::value(self, x, y)
    }
    fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        Polynomial::grad_x(self, x, y)
    }
    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        Polynomial::grad_y(self, x, y)
    }
}

/// Vector of polynomials with analytic Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    pub components: Vec<Polynomial>,
    pub m: usize,
}

impl PolyField {
    pub fn new(components: Vec<Polynomial>, m: usize) -> Self {
        Self { components, m }
    }
}

impl VectorField for PolyField {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|p| p.value(x, y)),
        )
    }

    fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.components.len(), x.len());
        for (r, p) in self.components.iter().enumerate() {
            j.set_row(r, &p.grad_x(x, y).transpose());
        }
        j
    }

    fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.components.len(), self.m);
        for (r, p) in self.components.iter().enumerate() {
            j.set_row(r, &p.grad_y(x, y).transpose());
        }
        j
    }
}

impl SlowField for PolyField {
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>, _eps: f64) -> DVector<f64> {
        VectorField::eval(self, x, y)
    }
}
