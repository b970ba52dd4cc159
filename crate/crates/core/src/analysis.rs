//! Error norms, the residual norms of the method, the a posteriori
//! indicators `eta_K` and power-law fits of convergence data.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{DiscreteField, Jet, TriGeom};
use crate::forms::{
    dual_stabilizer_energies, energies_by_triangle, facet_quadrature, observed_triangles, primal_stabilizer_energies,
    MeshSizeWeighting, MeshSizes, PrimalStab,
};
use crate::mesh::{BoundaryTag, FacetKind, SpacetimeMesh, StripLocation};
use crate::problems::{ExactSolution, ObservationData};
use crate::quadrature::{gauss_legendre, quadrature_for, QuadratureRule};
use crate::saddle::{SaddleSystem, SolveReport};

/// Points per direction of the fixed rule used for exact-solution norms
/// (exact to degree 12).
const FINE_POINTS: usize = 7;
/// Degree of the facet rule paired with [`FINE_POINTS`].
const FINE_DEGREE: usize = 12;
/// Cells of the auxiliary mesh of the `H^-1` Riesz solve.
pub const HMINUS1_CELLS: usize = 1000;

fn fine_rule() -> QuadratureRule {
    QuadratureRule::collapsed(FINE_POINTS)
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Sum `f(k)` over triangles in parallel, adding up in triangle order.
fn sum_triangles(mesh: &SpacetimeMesh, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let parts: Vec<f64> = (0..mesh.n_triangles()).into_par_iter().map(f).collect();
    parts.iter().sum()
}

/// Integrate `g(jet)` of a field over `M` with a rule of degree `2k + 2`.
fn integrate_field(field: &DiscreteField, g: impl Fn(&Jet) -> f64 + Sync + Send) -> f64 {
    let space = &field.space;
    let tab = space.tabulate(quadrature_for(2 * space.degree() + 2).expect("degree <= 3"));
    sum_triangles(&space.mesh, |k| {
        let vals = tab.on(&TriGeom::new(&space.mesh, k));
        field.jets_on(k, &vals).iter().zip(&vals.jxw).map(|(j, w)| w * g(j)).sum()
    })
}

pub fn norm_l2(field: &DiscreteField) -> f64 {
    integrate_field(field, |j| j.value * j.value).sqrt()
}

/// `(||v||^2 + ||grad v||^2)^{1/2}` over `M`.
pub fn norm_h1(field: &DiscreteField) -> f64 {
    integrate_field(field, |j| j.value * j.value + dot(j.grad, j.grad)).sqrt()
}

/// `||z_h||_{L^2(0,T; H^1_0(0,1))} = ||d_x z_h||_M`.
pub fn dual_norm_l2h10(z: &DiscreteField) -> f64 {
    integrate_field(z, |j| j.grad[1] * j.grad[1]).sqrt()
}

/// `||u||_M` of an exact solution with the fixed fine rule.
pub fn exact_norm_l2(mesh: &SpacetimeMesh, exact: &dyn ExactSolution) -> f64 {
    let rule = fine_rule();
    sum_triangles(mesh, |k| {
        let g = TriGeom::new(mesh, k);
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(l, w)| {
                let p = g.point(l);
                w * 2.0 * g.area * exact.value(p.t, p.x).powi(2)
            })
            .sum()
    })
    .sqrt()
}

/// A norm that falls back to its absolute value when the reference norm vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub value: f64,
    /// `false` when `value` is absolute because the reference norm was zero.
    pub relative: bool,
}

impl RelativeError {
    fn new(err: f64, reference: f64) -> Self {
        if reference > f64::MIN_POSITIVE * 1e10 {
            Self { value: err / reference, relative: true }
        } else {
            Self { value: err, relative: false }
        }
    }
}

/// `||u - u_h||_M / ||u||_M`, integrated with the fixed fine rule.
pub fn error_l2_spacetime(u_h: &DiscreteField, exact: &dyn ExactSolution) -> RelativeError {
    let mesh = &u_h.space.mesh;
    let tab = u_h.space.tabulate(fine_rule());
    let err = sum_triangles(mesh, |k| {
        let vals = tab.on(&TriGeom::new(mesh, k));
        u_h.jets_on(k, &vals)
            .iter()
            .zip(&vals.points)
            .zip(&vals.jxw)
            .map(|((j, p), w)| w * (exact.value(p.t, p.x) - j.value).powi(2))
            .sum()
    });
    RelativeError::new(err.sqrt(), exact_norm_l2(mesh, exact))
}

/// Piecewise polynomial on a partition of `[0, 1]`; piece `i` lives on
/// `[breaks[i], breaks[i+1]]` in the monomials of `s = (x - x_i) / (x_{i+1} - x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    pub breaks: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    /// Interpolate `f` on each piece at `degree + 1` equispaced points.
    pub fn fit(breaks: Vec<f64>, degree: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let n = degree + 1;
        let coeffs = (0..breaks.len() - 1)
            .map(|i| {
                let (a, b) = (breaks[i], breaks[i + 1]);
                let s: Vec<f64> = (0..n).map(|j| if degree == 0 { 0.5 } else { j as f64 / degree as f64 }).collect();
                let vander: Vec<Vec<f64>> = s.iter().map(|&sj| (0..n).map(|m| sj.powi(m as i32)).collect()).collect();
                let rhs: Vec<f64> = s.iter().map(|&sj| f(i, a + sj * (b - a))).collect();
                solve_small(vander, rhs)
            })
            .collect();
        Self { breaks, coeffs }
    }

    pub fn n_pieces(&self) -> usize {
        self.coeffs.len()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0)
    }

    fn eval_piece(&self, i: usize, x: f64) -> f64 {
        let (a, b) = (self.breaks[i], self.breaks[i + 1]);
        let s = (x - a) / (b - a);
        self.coeffs[i].iter().rev().fold(0.0, |acc, c| acc * s + c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.breaks[1..self.breaks.len() - 1].partition_point(|&b| b <= x);
        self.eval_piece(i.min(self.n_pieces() - 1), x)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c.iter().map(|v| a * v).collect()).collect();
        Self { breaks: self.breaks.clone(), coeffs }
    }

    /// `(int_0^1 (g - self)^2)^{1/2}`, Gauss rule of `points` per piece.
    pub fn l2_distance(&self, g: impl Fn(f64) -> f64, points: usize) -> f64 {
        let (s, w) = gauss_legendre(points);
        let mut acc = 0.0;
        for i in 0..self.n_pieces() {
            let (a, b) = (self.breaks[i], self.breaks[i + 1]);
            for (sj, wj) in s.iter().zip(&w) {
                let x = a + sj * (b - a);
                acc += wj * (b - a) * (g(x) - self.eval_piece(i, x)).powi(2);
            }
        }
        acc.sqrt()
    }
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// The `t = 0` slice of a field: its value and its time derivative, taken
/// from the triangle adjacent to each initial facet.
#[derive(Debug, Clone)]
pub struct InitialTrace {
    pub value: PiecewisePoly,
    pub dt: PiecewisePoly,
}

pub fn trace_at_initial(field: &DiscreteField) -> InitialTrace {
    let mesh = field.mesh();
    let mut pieces: Vec<(f64, f64, usize)> = mesh
        .facets
        .iter()
        .filter_map(|f| match f.kind {
            FacetKind::Boundary { tri, tag: BoundaryTag::Initial } => {
                let (a, b) = (mesh.vertices[f.vertices[0]].x, mesh.vertices[f.vertices[1]].x);
                Some((a.min(b), a.max(b), tri))
            }
            _ => None,
        })
        .collect();
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breaks: Vec<f64> = pieces.iter().map(|p| p.0).collect();
    breaks.push(pieces.last().map_or(1.0, |p| p.1));
    let k = field.space.degree();
    let jet = |i: usize, x: f64| {
        let tri = pieces[i].2;
        let g = TriGeom::new(mesh, tri);
        field.jet(&g, tri, g.barycentric(&crate::mesh::Point::new(0.0, x)))
    };
    let value = PiecewisePoly::fit(breaks.clone(), k, |i, x| jet(i, x).value);
    let dt = PiecewisePoly::fit(breaks, k.saturating_sub(1), |i, x| jet(i, x).grad[0]);
    InitialTrace { value, dt }
}

/// `||f||_{H^-1(0,1)} = ||w'||` with `-w'' = f`, `w(0) = w(1) = 0`, solved
/// with P1 elements on at least `cells` cells whose nodes include `breaks`.
pub fn hminus1_norm_fn(f: impl Fn(f64) -> f64, breaks: &[f64], cells: usize) -> f64 {
    let pieces = breaks.len() - 1;
    let per_piece = cells.div_ceil(pieces).max(4);
    let mut nodes = Vec::with_capacity(pieces * per_piece + 1);
    for i in 0..pieces {
        let (a, b) = (breaks[i], breaks[i + 1]);
        for j in 0..per_piece {
            nodes.push(a + (b - a) * j as f64 / per_piece as f64);
        }
    }
    nodes.push(*breaks.last().unwrap());
    let n = nodes.len();

    // load vector with a 4-point Gauss rule per cell
    let (s, w) = gauss_legendre(4);
    let mut load = vec![0.0; n];
    for c in 0..n - 1 {
        let (a, b) = (nodes[c], nodes[c + 1]);
        for (sj, wj) in s.iter().zip(&w) {
            let fx = wj * (b - a) * f(a + sj * (b - a));
            load[c] += fx * (1.0 - sj);
            load[c + 1] += fx * sj;
        }
    }
    // tridiagonal stiffness on the interior nodes, Thomas algorithm
    let m = n - 2;
    if m == 0 {
        return 0.0;
    }
    let inv_h: Vec<f64> = (0..n - 1).map(|c| 1.0 / (nodes[c + 1] - nodes[c])).collect();
    let diag: Vec<f64> = (1..n - 1).map(|i| inv_h[i - 1] + inv_h[i]).collect();
    let off: Vec<f64> = (1..n - 2).map(|i| -inv_h[i]).collect();
    let rhs: Vec<f64> = load[1..n - 1].to_vec();
    let (mut cp, mut dp) = (vec![0.0; m], vec![0.0; m]);
    cp[0] = if m > 1 { off[0] / diag[0] } else { 0.0 };
    dp[0] = rhs[0] / diag[0];
    for i in 1..m {
        let den = diag[i] - off[i - 1] * cp[i - 1];
        if i < m - 1 {
            cp[i] = off[i] / den;
        }
        dp[i] = (rhs[i] - off[i - 1] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = dp[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    // ||w'||^2 = w^T K w = w^T F
    x.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
}

/// `H^-1(0,1)` norm of a piecewise polynomial.
pub fn hminus1_norm(f: &PiecewisePoly) -> f64 {
    hminus1_norm_fn(|x| f.eval(x), &f.breaks, HMINUS1_CELLS)
}

/// `|||(u, z)|||_S = (u^T M_O u + u^T S u + z^T S* z)^{1/2}` with the
/// matrices of `system`.
pub fn triple_norm(system: &SaddleSystem, u: &DiscreteField, z: &DiscreteField) -> Result<f64> {
    if !std::sync::Arc::ptr_eq(&u.space, &system.primal) || !std::sync::Arc::ptr_eq(&z.space, &system.dual) {
        return Err(Error::MeshMismatch);
    }
    let sq = system.observation_mass.quadratic(&u.coeffs)
        + system.primal_stab.quadratic(&u.coeffs)
        + system.dual_stab.quadratic(&z.coeffs);
    Ok(sq.max(0.0).sqrt())
}

/// Norms of the interpolation error `e = u - Pi_h u` computed pointwise
/// from the exact jets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationNorms {
    /// `|||(e, 0)|||_S = (||e||_O^2 + s(e, e))^{1/2}`.
    pub triple: f64,
    /// `||e||_* = ||grad e||_M + ||h^{1/2} A grad e . n||_{dM} + ||h^{-1/2} e||_Sigma`.
    pub star: f64,
}

pub fn interpolation_norms(
    interpolant: &DiscreteField,
    exact: &dyn ExactSolution,
    variant: PrimalStab,
    weighting: MeshSizeWeighting,
) -> Result<InterpolationNorms> {
    let space = &interpolant.space;
    let mesh = &space.mesh;
    let sizes = MeshSizes::new(mesh, weighting);
    let inside: std::collections::HashSet<usize> = observed_triangles(mesh, &mesh.omega)?.into_iter().collect();
    let tab = space.tabulate(fine_rule());
    let err_jet = |j: &Jet, t: f64, x: f64| exact.jet(t, x).sub(*j);

    // (observed mass, h^2 box term, gradient) per triangle
    let volume: Vec<[f64; 3]> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|k| {
            let vals = tab.on(&TriGeom::new(mesh, k));
            let h2 = sizes.element[k].powi(2);
            let mut acc = [0.0; 3];
            for ((j, p), w) in interpolant.jets_on(k, &vals).iter().zip(&vals.points).zip(&vals.jxw) {
                let e = err_jet(j, p.t, p.x);
                if inside.contains(&k) {
                    acc[0] += w * e.value * e.value;
                }
                if variant == PrimalStab::ResidualJump {
                    acc[1] += w * h2 * e.wave().powi(2);
                }
                acc[2] += w * dot(e.grad, e.grad);
            }
            acc
        })
        .collect();

    // (jump term, Sigma mass, boundary flux) per facet
    let facets: Vec<[f64; 3]> = (0..mesh.facets.len())
        .into_par_iter()
        .map(|f| {
            let facet = &mesh.facets[f];
            let h = sizes.facet[f];
            let n = facet.normal;
            let mut acc = [0.0; 3];
            for (p, w) in facet_quadrature(mesh, f, FINE_DEGREE) {
                match facet.kind {
                    FacetKind::Interior { left, right } => {
                        let (g1, g2) = (TriGeom::new(mesh, left), TriGeom::new(mesh, right));
                        let e1 = err_jet(&interpolant.jet(&g1, left, g1.barycentric(&p)), p.t, p.x);
                        let e2 = err_jet(&interpolant.jet(&g2, right, g2.barycentric(&p)), p.t, p.x);
                        let jump = dot(e1.metric_grad(), n) - dot(e2.metric_grad(), n);
                        acc[0] += w * h * jump * jump;
                        if variant == PrimalStab::FaceOnly {
                            acc[0] += w * h.powi(3) * (e1.wave() - e2.wave()).powi(2);
                        }
                    }
                    FacetKind::Boundary { tri, tag } => {
                        let g = TriGeom::new(mesh, tri);
                        let e = err_jet(&interpolant.jet(&g, tri, g.barycentric(&p)), p.t, p.x);
                        if tag == BoundaryTag::Sigma {
                            acc[1] += w * e.value * e.value / h;
                        }
                        acc[2] += w * h * dot(e.metric_grad(), n).powi(2);
                    }
                }
            }
            acc
        })
        .collect();

    let v: [f64; 3] = volume.iter().fold([0.0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    let s: [f64; 3] = facets.iter().fold([0.0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    Ok(InterpolationNorms { triple: (v[0] + v[1] + s[0] + s[1]).sqrt(), star: v[2].sqrt() + s[2].sqrt() + s[1].sqrt() })
}

/// Per-triangle indicators `eta_K^2 = ||u_h - u_O||^2_{O cap K} + s_K(u_h, u_h) + s*_K(z_h, z_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaField {
    pub values: Vec<f64>,
    pub total: f64,
    /// The data term on triangles straddling `O` was sampled only at
    /// quadrature points inside `O`.
    pub inexact_data_term: bool,
}

impl EtaField {
    /// Smallest set of triangles carrying a fraction `theta` of the total,
    /// largest indicators first (ties broken by triangle index).
    pub fn dorfler_marking(&self, theta: f64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        let target = theta * self.total;
        let mut acc = 0.0;
        let mut marked = Vec::new();
        for k in order {
            if acc >= target && !marked.is_empty() {
                break;
            }
            acc += self.values[k];
            marked.push(k);
        }
        marked.sort_unstable();
        marked
    }
}

/// `||u_h - u_O||^2` on each triangle, zero outside `O`.
fn misfit_by_triangle(u_h: &DiscreteField, data: &ObservationData) -> Result<(Vec<f64>, bool)> {
    let space = &u_h.space;
    let mesh = &space.mesh;
    let tab = space.tabulate(quadrature_for(2 * space.degree() + 4)?);
    let parts: Vec<Result<(f64, bool)>> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|k| {
            let loc = mesh.strip_location(k, &data.omega);
            if loc == StripLocation::Outside {
                return Ok((0.0, false));
            }
            let vals = tab.on(&TriGeom::new(mesh, k));
            let mut acc = 0.0;
            for ((j, p), w) in u_h.jets_on(k, &vals).iter().zip(&vals.points).zip(&vals.jxw) {
                if loc == StripLocation::Straddles && !data.omega.contains_closed(p.x) {
                    continue;
                }
                acc += w * (j.value - data.evaluate(p.t, p.x)?).powi(2);
            }
            Ok((acc, loc == StripLocation::Straddles))
        })
        .collect();
    let mut out = Vec::with_capacity(parts.len());
    let mut inexact = false;
    for p in parts {
        let (v, s) = p?;
        out.push(v);
        inexact |= s;
    }
    Ok((out, inexact))
}

fn check_system_fields(system: &SaddleSystem, u_h: &DiscreteField, z_h: &DiscreteField) -> Result<()> {
    if !std::sync::Arc::ptr_eq(&u_h.space, &system.primal) || !std::sync::Arc::ptr_eq(&z_h.space, &system.dual) {
        return Err(Error::MeshMismatch);
    }
    Ok(())
}

pub fn eta_indicators(
    system: &SaddleSystem,
    u_h: &DiscreteField,
    z_h: &DiscreteField,
    data: &ObservationData,
) -> Result<EtaField> {
    check_system_fields(system, u_h, z_h)?;
    let g = system.params;
    let n = system.primal.mesh.n_triangles();
    let (misfit, inexact) = misfit_by_triangle(u_h, data)?;
    let s = energies_by_triangle(&primal_stabilizer_energies(u_h, g.variant.primal, g.weighting), n);
    let s_star = energies_by_triangle(&dual_stabilizer_energies(z_h, g.variant.dual, g.weighting), n);
    let values: Vec<f64> = (0..n).map(|k| misfit[k] + s[k] + s_star[k]).collect();
    let total = values.iter().sum();
    Ok(EtaField { values, total, inexact_data_term: inexact })
}

/// `||u_h - u_O||^2_O + s(u_h, u_h) + s*(z_h, z_h)` summed term by term
/// over triangles and facets, without the split between triangles.
pub fn eta_global(
    system: &SaddleSystem,
    u_h: &DiscreteField,
    z_h: &DiscreteField,
    data: &ObservationData,
) -> Result<f64> {
    check_system_fields(system, u_h, z_h)?;
    let g = system.params;
    let (misfit, _) = misfit_by_triangle(u_h, data)?;
    let s: f64 = primal_stabilizer_energies(u_h, g.variant.primal, g.weighting).iter().map(|e| e.value).sum();
    let s_star: f64 = dual_stabilizer_energies(z_h, g.variant.dual, g.weighting).iter().map(|e| e.value).sum();
    Ok(misfit.iter().sum::<f64>() + s + s_star)
}

/// Same form with the stabilizers evaluated from the assembled matrices.
/// Near the kernel of `s` this loses digits to cancellation (about `1e-8`
/// relative on the finer study levels).
pub fn eta_global_assembled(
    system: &SaddleSystem,
    u_h: &DiscreteField,
    z_h: &DiscreteField,
    data: &ObservationData,
) -> Result<f64> {
    check_system_fields(system, u_h, z_h)?;
    let (misfit, _) = misfit_by_triangle(u_h, data)?;
    Ok(misfit.iter().sum::<f64>() + system.primal_stab.quadratic(&u_h.coeffs) + system.dual_stab.quadratic(&z_h.coeffs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub beta: f64,
    pub tau: f64,
    pub r2: f64,
    pub n: usize,
}

/// Least-squares fit of `e = beta h^tau` on `(log h, log e)`.
pub fn fit_rate(h: &[f64], e: &[f64]) -> Result<RateFit> {
    if h.len() != e.len() {
        return Err(Error::LengthMismatch { expected: h.len(), got: e.len() });
    }
    if h.len() < 3 {
        return Err(Error::NonPositive(format!("need at least 3 points, got {}", h.len())));
    }
    if let Some(v) = h.iter().chain(e).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositive(format!("rate fit needs positive finite data, got {v}")));
    }
    let n = h.len() as f64;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::NonPositive("all mesh sizes coincide".into()));
    }
    let tau = sxy / sxx;
    let intercept = my - tau * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { beta: intercept.exp(), tau, r2, n: h.len() })
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub level: usize,
    pub h: f64,
    pub ndof_p: usize,
    pub ndof_q: usize,
    pub rel_l2_m: f64,
    pub rel_l2_trace0: f64,
    pub hm1_dt_trace0: f64,
    pub dual_norm: f64,
    pub triple_norm: f64,
    pub eta_total: f64,
    pub solve_seconds: f64,
}

pub const CSV_HEADER: &str =
    "level,h,ndof_p,ndof_q,rel_l2_M,rel_l2_trace0,hm1_dt_trace0,dual_norm,triple_norm,eta_total,solve_seconds";

/// Metric columns of [`CSV_HEADER`] that are fitted against `h`.
pub const RATE_METRICS: [&str; 6] =
    ["rel_l2_M", "rel_l2_trace0", "hm1_dt_trace0", "dual_norm", "triple_norm", "eta_total"];

impl ErrorReport {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{:.6e},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3}",
            self.level,
            self.h,
            self.ndof_p,
            self.ndof_q,
            self.rel_l2_m,
            self.rel_l2_trace0,
            self.hm1_dt_trace0,
            self.dual_norm,
            self.triple_norm,
            self.eta_total,
            self.solve_seconds
        )
        .unwrap();
        s
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "rel_l2_M" => self.rel_l2_m,
            "rel_l2_trace0" => self.rel_l2_trace0,
            "hm1_dt_trace0" => self.hm1_dt_trace0,
            "dual_norm" => self.dual_norm,
            "triple_norm" => self.triple_norm,
            "eta_total" => self.eta_total,
            _ => return None,
        })
    }
}

/// How the velocity-trace error is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceNorm {
    Absolute,
    Relative,
}

/// Errors at `t = 0`: `||(u - u_h)(0,.)|| / ||u(0,.)||` and the (absolute or
/// relative) `H^-1` norm of `d_t (u - u_h)(0,.)`.
pub fn initial_trace_errors(u_h: &DiscreteField, exact: &dyn ExactSolution, mode: TraceNorm) -> (f64, f64) {
    let trace = trace_at_initial(u_h);
    let points = FINE_POINTS;
    let err0 = trace.value.l2_distance(|x| exact.value(0.0, x), points);
    let zero = PiecewisePoly { breaks: trace.value.breaks.clone(), coeffs: vec![vec![0.0]; trace.value.n_pieces()] };
    let ref0 = zero.l2_distance(|x| exact.value(0.0, x), points);
    let rel0 = RelativeError::new(err0, ref0).value;

    let breaks = &trace.dt.breaks;
    let cells = HMINUS1_CELLS.max(4 * trace.dt.n_pieces());
    let err1 = hminus1_norm_fn(|x| exact.jet(0.0, x).grad[0] - trace.dt.eval(x), breaks, cells);
    let hm1 = match mode {
        TraceNorm::Absolute => err1,
        TraceNorm::Relative => {
            RelativeError::new(err1, hminus1_norm_fn(|x| exact.jet(0.0, x).grad[0], breaks, cells)).value
        }
    };
    (rel0, hm1)
}

/// All error measures of one solved level.
#[allow(clippy::too_many_arguments)]
pub fn error_report(
    level: usize,
    system: &SaddleSystem,
    u_h: &DiscreteField,
    z_h: &DiscreteField,
    solve: &SolveReport,
    exact: &dyn ExactSolution,
    data: &ObservationData,
    mode: TraceNorm,
) -> Result<ErrorReport> {
    let interp = crate::fespace::interpolate_nodal(&system.primal, |t, x| exact.value(t, x));
    let diff =
        DiscreteField::new(system.primal.clone(), interp.coeffs.iter().zip(&u_h.coeffs).map(|(a, b)| a - b).collect())?;
    let (rel_l2_trace0, hm1_dt_trace0) = initial_trace_errors(u_h, exact, mode);
    Ok(ErrorReport {
        level,
        h: system.primal.mesh.h,
        ndof_p: system.n_primal,
        ndof_q: system.n_dual,
        rel_l2_m: error_l2_spacetime(u_h, exact).value,
        rel_l2_trace0,
        hm1_dt_trace0,
        dual_norm: dual_norm_l2h10(z_h),
        triple_norm: triple_norm(system, &diff, z_h)?,
        eta_total: eta_indicators(system, u_h, z_h, data)?.total,
        solve_seconds: solve.seconds,
    })
}
