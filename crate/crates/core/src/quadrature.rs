//! Gauss rules on the reference triangle and on the unit interval.
//!
//! Triangle rules are conical (collapsed) products of Gauss-Legendre rules:
//! `n` points per direction integrate every polynomial of total degree
//! `2n - 2` exactly on the triangle.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 10;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Quadrature on the reference triangle `{(xi, eta): xi, eta >= 0, xi + eta <= 1}`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Barycentric coordinates `(1 - xi - eta, xi, eta)`.
    pub points: Vec<[f64; 3]>,
    /// Weights summing to the reference area 1/2.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Collapsed product rule with `n` Gauss points per direction.
    pub fn collapsed(n: usize) -> Self {
        let (s, ws) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&v, &wv) in s.iter().zip(&ws) {
            for (&u, &wu) in s.iter().zip(&ws) {
                let xi = u * (1.0 - v);
                let eta = v;
                points.push([1.0 - xi - eta, xi, eta]);
                weights.push(wu * wv * (1.0 - v));
            }
        }
        Self { points, weights, degree: 2 * n - 2 }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Integral of `f(xi, eta)` over the reference triangle.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p[1], p[2])).sum()
    }
}

/// Rule integrating all polynomials of total degree `degree` exactly.
pub fn quadrature_for(degree: usize) -> Result<QuadratureRule> {
    if degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    Ok(QuadratureRule::collapsed((degree + 1) / 2 + 1))
}

/// Gauss rule on `[0, 1]`, exact to polynomial degree `degree`.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LineRule {
    pub fn exact_to(degree: usize) -> Self {
        let (points, weights) = gauss_legendre(degree / 2 + 1);
        Self { points, weights }
    }
}
