//! Continuous Lagrange spaces of degree 1, 2 or 3 on a spacetime mesh.
//!
//! Basis functions are written in barycentric coordinates as scaled products
//! of affine factors, which gives exact gradients and Hessians on affine
//! triangles. Physical derivatives are ordered `(d_t, d_x)`; Hessians are
//! stored as `[d_tt, d_tx, d_xx]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Point, SpacetimeMesh};
use crate::quadrature::QuadratureRule;

/// Value, spacetime gradient and Hessian at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 3],
}

impl Jet {
    /// `d_tt - d_xx`.
    pub fn wave(&self) -> f64 {
        self.hess[0] - self.hess[2]
    }

    /// Minkowski-weighted gradient `A grad = (-d_t, d_x)`.
    pub fn metric_grad(&self) -> [f64; 2] {
        [-self.grad[0], self.grad[1]]
    }

    pub fn scaled(self, a: f64) -> Self {
        Jet { value: a * self.value, grad: self.grad.map(|g| a * g), hess: self.hess.map(|h| a * h) }
    }

    pub fn sub(self, o: Jet) -> Self {
        Jet {
            value: self.value - o.value,
            grad: [self.grad[0] - o.grad[0], self.grad[1] - o.grad[1]],
            hess: [self.hess[0] - o.hess[0], self.hess[1] - o.hess[1], self.hess[2] - o.hess[2]],
        }
    }

    fn add_scaled(&mut self, a: f64, o: &Jet) {
        self.value += a * o.value;
        for r in 0..2 {
            self.grad[r] += a * o.grad[r];
        }
        for r in 0..3 {
            self.hess[r] += a * o.hess[r];
        }
    }
}

/// Derivatives of a basis function with respect to the barycentric
/// coordinates (treated as independent variables).
#[derive(Debug, Clone, Copy, Default)]
pub struct LambdaJet {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

/// `scale * prod_m (coef_m . lambda + offset_m)`.
#[derive(Debug, Clone)]
struct ProductBasis {
    scale: f64,
    factors: Vec<([f64; 3], f64)>,
}

impl ProductBasis {
    fn eval(&self, lam: [f64; 3]) -> LambdaJet {
        let f: Vec<f64> = self.factors.iter().map(|(c, o)| c[0] * lam[0] + c[1] * lam[1] + c[2] * lam[2] + o).collect();
        let prod_except = |skip: &[usize]| -> f64 {
            f.iter().enumerate().filter(|(m, _)| !skip.contains(m)).map(|(_, v)| v).product()
        };
        let mut jet = LambdaJet { value: self.scale * prod_except(&[]), ..Default::default() };
        for (m, (cm, _)) in self.factors.iter().enumerate() {
            let rest = self.scale * prod_except(&[m]);
            for a in 0..3 {
                jet.grad[a] += cm[a] * rest;
            }
            for (n, (cn, _)) in self.factors.iter().enumerate() {
                if n == m {
                    continue;
                }
                let rest2 = self.scale * prod_except(&[m, n]);
                for a in 0..3 {
                    for b in 0..3 {
                        jet.hess[a][b] += cm[a] * cn[b] * rest2;
                    }
                }
            }
        }
        jet
    }
}

fn unit(i: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[i] = 1.0;
    e
}

/// Lagrange element of degree `k` on the reference triangle.
///
/// Local node order: the three vertices, then `k - 1` nodes per edge for
/// edges `(0,1), (1,2), (2,0)` each ordered from its first vertex, then the
/// interior node (`k = 3` only).
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub degree: usize,
    /// Barycentric coordinates of the nodes.
    pub nodes: Vec<[f64; 3]>,
    basis: Vec<ProductBasis>,
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self> {
        let edges = [(0, 1), (1, 2), (2, 0)];
        let mut nodes = Vec::new();
        let mut basis = Vec::new();
        match degree {
            1 => {
                for i in 0..3 {
                    nodes.push(unit(i));
                    basis.push(ProductBasis { scale: 1.0, factors: vec![(unit(i), 0.0)] });
                }
            }
            2 => {
                for i in 0..3 {
                    nodes.push(unit(i));
                    let two = unit(i).map(|c| 2.0 * c);
                    basis.push(ProductBasis { scale: 1.0, factors: vec![(unit(i), 0.0), (two, -1.0)] });
                }
                for (a, b) in edges {
                    let mut p = [0.0; 3];
                    p[a] = 0.5;
                    p[b] = 0.5;
                    nodes.push(p);
                    basis.push(ProductBasis { scale: 4.0, factors: vec![(unit(a), 0.0), (unit(b), 0.0)] });
                }
            }
            3 => {
                for i in 0..3 {
                    nodes.push(unit(i));
                    let three = unit(i).map(|c| 3.0 * c);
                    basis
                        .push(ProductBasis { scale: 0.5, factors: vec![(unit(i), 0.0), (three, -1.0), (three, -2.0)] });
                }
                for (a, b) in edges {
                    for (near, far) in [(a, b), (b, a)] {
                        let mut p = [0.0; 3];
                        p[near] = 2.0 / 3.0;
                        p[far] = 1.0 / 3.0;
                        nodes.push(p);
                        let three = unit(near).map(|c| 3.0 * c);
                        basis.push(ProductBasis {
                            scale: 4.5,
                            factors: vec![(unit(near), 0.0), (unit(far), 0.0), (three, -1.0)],
                        });
                    }
                }
                nodes.push([1.0 / 3.0; 3]);
                basis.push(ProductBasis { scale: 27.0, factors: vec![(unit(0), 0.0), (unit(1), 0.0), (unit(2), 0.0)] });
            }
            _ => return Err(Error::UnsupportedElement(degree)),
        }
        Ok(Self { degree, nodes, basis })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_nodes(&self) -> usize {
        self.degree - 1
    }

    pub fn interior_nodes(&self) -> usize {
        if self.degree == 3 {
            1
        } else {
            0
        }
    }

    pub fn eval_lambda(&self, lam: [f64; 3]) -> Vec<LambdaJet> {
        self.basis.iter().map(|b| b.eval(lam)).collect()
    }

    /// Values, reference gradients `(d_xi, d_eta)` and reference Hessians
    /// `[d_xixi, d_xieta, d_etaeta]` at a reference point.
    pub fn eval_basis(&self, xi: f64, eta: f64) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 3]>) {
        let lam = [1.0 - xi - eta, xi, eta];
        // d lambda / d(xi, eta)
        let g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let jets = self.eval_lambda(lam);
        let values = jets.iter().map(|j| j.value).collect();
        let grads = jets
            .iter()
            .map(|j| {
                let mut r = [0.0; 2];
                for a in 0..3 {
                    r[0] += j.grad[a] * g[a][0];
                    r[1] += j.grad[a] * g[a][1];
                }
                r
            })
            .collect();
        let hess = jets
            .iter()
            .map(|j| {
                let mut r = [0.0; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        r[0] += j.hess[a][b] * g[a][0] * g[b][0];
                        r[1] += j.hess[a][b] * g[a][0] * g[b][1];
                        r[2] += j.hess[a][b] * g[a][1] * g[b][1];
                    }
                }
                r
            })
            .collect();
        (values, grads, hess)
    }
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriGeom {
    pub points: [Point; 3],
    /// `(d lambda_a / dt, d lambda_a / dx)`.
    pub grad_lambda: [[f64; 2]; 3],
    pub area: f64,
}

impl TriGeom {
    pub fn new(mesh: &SpacetimeMesh, k: usize) -> Self {
        let points = mesh.tri_points(k);
        let [a, b, c] = points;
        let det = (b.t - a.t) * (c.x - a.x) - (c.t - a.t) * (b.x - a.x);
        let g1 = [(c.x - a.x) / det, -(c.t - a.t) / det];
        let g2 = [-(b.x - a.x) / det, (b.t - a.t) / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        Self { points, grad_lambda: [g0, g1, g2], area: 0.5 * det }
    }

    pub fn point(&self, lam: &[f64; 3]) -> Point {
        let [a, b, c] = self.points;
        Point::new(lam[0] * a.t + lam[1] * b.t + lam[2] * c.t, lam[0] * a.x + lam[1] * b.x + lam[2] * c.x)
    }

    pub fn barycentric(&self, p: &Point) -> [f64; 3] {
        let a = self.points[0];
        let l1 = self.grad_lambda[1][0] * (p.t - a.t) + self.grad_lambda[1][1] * (p.x - a.x);
        let l2 = self.grad_lambda[2][0] * (p.t - a.t) + self.grad_lambda[2][1] * (p.x - a.x);
        [1.0 - l1 - l2, l1, l2]
    }

    /// Push a barycentric jet forward to physical `(t, x)` derivatives.
    pub fn physical(&self, j: &LambdaJet) -> Jet {
        let g = &self.grad_lambda;
        let mut out = Jet { value: j.value, ..Default::default() };
        for a in 0..3 {
            out.grad[0] += j.grad[a] * g[a][0];
            out.grad[1] += j.grad[a] * g[a][1];
            for b in 0..3 {
                let h = j.hess[a][b];
                out.hess[0] += h * g[a][0] * g[b][0];
                out.hess[1] += h * g[a][0] * g[b][1];
                out.hess[2] += h * g[a][1] * g[b][1];
            }
        }
        out
    }
}

/// Basis functions tabulated at the points of a quadrature rule, in
/// barycentric form; pushed forward per triangle by [`TabulatedBasis::on`].
#[derive(Debug, Clone)]
pub struct TabulatedBasis {
    pub rule: QuadratureRule,
    jets: Vec<Vec<LambdaJet>>,
}

impl TabulatedBasis {
    pub fn new(element: &ReferenceElement, rule: QuadratureRule) -> Self {
        let jets = rule.points.iter().map(|&p| element.eval_lambda(p)).collect();
        Self { rule, jets }
    }

    pub fn n_points(&self) -> usize {
        self.rule.len()
    }

    /// Physical jets `[point][basis]`, physical points and `weight * |det J|`.
    pub fn on(&self, geom: &TriGeom) -> ElementValues {
        let jets = self.jets.iter().map(|row| row.iter().map(|j| geom.physical(j)).collect()).collect();
        let points = self.rule.points.iter().map(|l| geom.point(l)).collect();
        let jxw = self.rule.weights.iter().map(|w| w * 2.0 * geom.area).collect();
        ElementValues { jets, points, jxw }
    }
}

#[derive(Debug, Clone)]
pub struct ElementValues {
    pub jets: Vec<Vec<Jet>>,
    pub points: Vec<Point>,
    pub jxw: Vec<f64>,
}

/// Continuous Lagrange space of degree `k` with global DOF numbering:
/// vertices first, then edge nodes (facet by facet, ordered from the lower
/// vertex id), then interior nodes.
#[derive(Debug)]
pub struct FESpace {
    pub mesh: Arc<SpacetimeMesh>,
    pub element: ReferenceElement,
    pub n_dofs: usize,
    cell_dofs: Vec<usize>,
    pub dof_coords: Vec<Point>,
    pub boundary_dofs: HashMap<BoundaryTag, Vec<usize>>,
}

impl FESpace {
    pub fn new(mesh: Arc<SpacetimeMesh>, degree: usize) -> Result<Arc<Self>> {
        let element = ReferenceElement::new(degree)?;
        let nv = mesh.n_vertices();
        let nf = mesh.facets.len();
        let ne = element.edge_nodes();
        let ni = element.interior_nodes();
        let n_dofs = nv + ne * nf + ni * mesh.n_triangles();
        let nl = element.n_nodes();

        let mut cell_dofs = Vec::with_capacity(nl * mesh.n_triangles());
        let mut dof_coords = vec![Point::new(0.0, 0.0); n_dofs];
        for (k, tri) in mesh.triangles.iter().enumerate() {
            let start = cell_dofs.len();
            cell_dofs.extend_from_slice(&tri.vertices);
            for e in 0..3 {
                let f = mesh.tri_facets[k][e];
                let forward = mesh.facets[f].vertices[0] == tri.vertices[e];
                for r in 0..ne {
                    let r = if forward { r } else { ne - 1 - r };
                    cell_dofs.push(nv + f * ne + r);
                }
            }
            for r in 0..ni {
                cell_dofs.push(nv + ne * nf + k * ni + r);
            }
            let geom = TriGeom::new(&mesh, k);
            for (local, lam) in element.nodes.iter().enumerate() {
                dof_coords[cell_dofs[start + local]] = geom.point(lam);
            }
        }

        let mut boundary_dofs: HashMap<BoundaryTag, Vec<usize>> = HashMap::new();
        for (f, facet) in mesh.facets.iter().enumerate() {
            if let Some(tag) = facet.tag() {
                let list = boundary_dofs.entry(tag).or_default();
                list.extend_from_slice(&facet.vertices);
                list.extend((0..ne).map(|r| nv + f * ne + r));
            }
        }
        for list in boundary_dofs.values_mut() {
            list.sort_unstable();
            list.dedup();
        }

        Ok(Arc::new(Self { mesh, element, n_dofs, cell_dofs, dof_coords, boundary_dofs }))
    }

    pub fn degree(&self) -> usize {
        self.element.degree
    }

    pub fn n_local(&self) -> usize {
        self.element.n_nodes()
    }

    pub fn cell_dofs(&self, k: usize) -> &[usize] {
        let nl = self.n_local();
        &self.cell_dofs[k * nl..(k + 1) * nl]
    }

    pub fn same_mesh(&self, other: &FESpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }

    /// Physical basis jets of triangle `k` at barycentric point `lam`.
    pub fn basis_at(&self, geom: &TriGeom, lam: [f64; 3]) -> Vec<Jet> {
        self.element.eval_lambda(lam).iter().map(|j| geom.physical(j)).collect()
    }

    pub fn tabulate(&self, rule: QuadratureRule) -> TabulatedBasis {
        TabulatedBasis::new(&self.element, rule)
    }
}

/// Nodal interpolant of `f(t, x)`.
pub fn interpolate_nodal(space: &Arc<FESpace>, f: impl Fn(f64, f64) -> f64) -> DiscreteField {
    let coeffs = space.dof_coords.iter().map(|p| f(p.t, p.x)).collect();
    DiscreteField { space: space.clone(), coeffs }
}

/// Coefficient vector over an [`FESpace`].
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub space: Arc<FESpace>,
    pub coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn new(space: Arc<FESpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs {
            return Err(Error::LengthMismatch { expected: space.n_dofs, got: coeffs.len() });
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<FESpace>) -> Self {
        let coeffs = vec![0.0; space.n_dofs];
        Self { space, coeffs }
    }

    pub fn mesh(&self) -> &SpacetimeMesh {
        &self.space.mesh
    }

    /// Jet of the restriction to triangle `k` at barycentric point `lam`.
    pub fn jet(&self, geom: &TriGeom, k: usize, lam: [f64; 3]) -> Jet {
        let mut out = Jet::default();
        let dofs = self.space.cell_dofs(k);
        for (j, &d) in self.space.element.eval_lambda(lam).iter().zip(dofs) {
            out.add_scaled(self.coeffs[d], &geom.physical(j));
        }
        out
    }

    /// Jets at tabulated points of triangle `k`.
    pub fn jets_on(&self, k: usize, values: &ElementValues) -> Vec<Jet> {
        let dofs = self.space.cell_dofs(k);
        values
            .jets
            .iter()
            .map(|row| {
                let mut out = Jet::default();
                for (phi, &d) in row.iter().zip(dofs) {
                    out.add_scaled(self.coeffs[d], phi);
                }
                out
            })
            .collect()
    }

    /// Value and `(d_t, d_x)` gradient at a point of the domain.
    pub fn eval(&self, p: &Point) -> Result<(f64, [f64; 2])> {
        let mesh = &self.space.mesh;
        let k = mesh.locate(p)?;
        let geom = TriGeom::new(mesh, k);
        let jet = self.jet(&geom, k, geom.barycentric(p));
        Ok((jet.value, jet.grad))
    }

    /// Nodal interpolation of this field into another space on the same
    /// mesh. Exact when the target degree is at least the source degree.
    pub fn interpolate_into(&self, target: &Arc<FESpace>) -> Result<DiscreteField> {
        if !self.space.same_mesh(target) {
            return Err(Error::MeshMismatch);
        }
        let mut coeffs = vec![0.0; target.n_dofs];
        let mesh = &self.space.mesh;
        for k in 0..mesh.n_triangles() {
            let geom = TriGeom::new(mesh, k);
            for (lam, &d) in target.element.nodes.iter().zip(target.cell_dofs(k)) {
                coeffs[d] = self.jet(&geom, k, *lam).value;
            }
        }
        Ok(DiscreteField { space: target.clone(), coeffs })
    }

    pub fn norm_l2_coeffs(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// CSV with columns `dof_id, t, x, value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dof_id,t,x,value\n");
        for (i, (p, v)) in self.space.dof_coords.iter().zip(&self.coeffs).enumerate() {
            writeln!(s, "{i},{:e},{:e},{:e}", p.t, p.x, v).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Interval, SplitPattern};
    use crate::quadrature::quadrature_for;

    fn mesh(nx: usize, nt: usize) -> Arc<SpacetimeMesh> {
        Arc::new(SpacetimeMesh::build_structured(nx, nt, 2.0, Interval::full(), SplitPattern::Crisscross).unwrap())
    }

    #[test]
    fn kronecker_and_partition_of_unity() {
        for k in 1..=3 {
            let e = ReferenceElement::new(k).unwrap();
            assert_eq!(e.n_nodes(), (k + 1) * (k + 2) / 2);
            for (i, node) in e.nodes.iter().enumerate() {
                let (v, _, _) = e.eval_basis(node[1], node[2]);
                for (j, vj) in v.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vj - want).abs() < 1e-14, "k={k} node {i} basis {j}: {vj}");
                }
            }
            for &(xi, eta) in &[(0.1, 0.2), (0.7, 0.05), (0.3, 0.3)] {
                let (v, g, h) = e.eval_basis(xi, eta);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                for r in 0..2 {
                    assert!(g.iter().map(|x| x[r]).sum::<f64>().abs() < 1e-13);
                }
                for r in 0..3 {
                    assert!(h.iter().map(|x| x[r]).sum::<f64>().abs() < 1e-12);
                }
            }
        }
        assert!(matches!(ReferenceElement::new(4), Err(Error::UnsupportedElement(4))));
    }

    #[test]
    fn p1_at_barycenter() {
        let e = ReferenceElement::new(1).unwrap();
        let (v, _, h) = e.eval_basis(1.0 / 3.0, 1.0 / 3.0);
        for x in v {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(h.iter().all(|r| r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 1e-5;
        for k in 1..=3 {
            let e = ReferenceElement::new(k).unwrap();
            let (xi, eta) = (0.23, 0.41);
            let (_, g, h) = e.eval_basis(xi, eta);
            let (vp, gp, _) = e.eval_basis(xi + eps, eta);
            let (vm, gm, _) = e.eval_basis(xi - eps, eta);
            let (vq, gq, _) = e.eval_basis(xi, eta + eps);
            let (vr, gr, _) = e.eval_basis(xi, eta - eps);
            for i in 0..e.n_nodes() {
                assert!((g[i][0] - (vp[i] - vm[i]) / (2.0 * eps)).abs() < 1e-8);
                assert!((g[i][1] - (vq[i] - vr[i]) / (2.0 * eps)).abs() < 1e-8);
                assert!((h[i][0] - (gp[i][0] - gm[i][0]) / (2.0 * eps)).abs() < 1e-7);
                assert!((h[i][1] - (gq[i][0] - gr[i][0]) / (2.0 * eps)).abs() < 1e-7);
                assert!((h[i][2] - (gq[i][1] - gr[i][1]) / (2.0 * eps)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn dof_counts() {
        let m = mesh(3, 5);
        let (v, e, t) = (m.n_vertices(), m.facets.len(), m.n_triangles());
        for k in 1..=3 {
            let s = FESpace::new(m.clone(), k).unwrap();
            let want = v + (k - 1) * e + if k == 3 { t } else { 0 };
            assert_eq!(s.n_dofs, want);
        }
    }

    #[test]
    fn constant_and_linear_interpolation() {
        let m = mesh(4, 6);
        for k in 1..=3 {
            let s = FESpace::new(m.clone(), k).unwrap();
            let one = interpolate_nodal(&s, |_, _| 1.0);
            assert!(one.coeffs.iter().all(|&c| c == 1.0));
            let (v, g) = one.eval(&Point::new(0.77, 0.31)).unwrap();
            assert!((v - 1.0).abs() < 1e-14 && g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        }
        let s = FESpace::new(m.clone(), 1).unwrap();
        let x = interpolate_nodal(&s, |_, x| x);
        let (v, g) = x.eval(&Point::new(1.0, 0.5)).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        assert!(g[0].abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p2_reproduces_quadratics() {
        let m = mesh(4, 6);
        let s = FESpace::new(m, 2).unwrap();
        let f = interpolate_nodal(&s, |t, _| t * t);
        let (v, g) = f.eval(&Point::new(0.5, 0.37)).unwrap();
        assert!((v - 0.25).abs() < 1e-13);
        assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn continuity_across_interior_facets() {
        let m = mesh(3, 4);
        for k in 1..=3 {
            let s = FESpace::new(m.clone(), k).unwrap();
            let coeffs: Vec<f64> = (0..s.n_dofs).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
            let f = DiscreteField::new(s.clone(), coeffs).unwrap();
            for facet in m.facets.iter().filter(|f| f.is_interior()) {
                let crate::mesh::FacetKind::Interior { left, right } = facet.kind else { unreachable!() };
                let [a, b] = facet.vertices.map(|v| m.vertices[v]);
                let (g1, g2) = (TriGeom::new(&m, left), TriGeom::new(&m, right));
                for s in [0.2, 0.5, 0.9] {
                    let p = Point::new(a.t + s * (b.t - a.t), a.x + s * (b.x - a.x));
                    let v1 = f.jet(&g1, left, g1.barycentric(&p)).value;
                    let v2 = f.jet(&g2, right, g2.barycentric(&p)).value;
                    assert!((v1 - v2).abs() < 1e-12, "degree {k}: {v1} vs {v2}");
                }
            }
        }
    }

    fn l2_interp_error(k: usize, nx: usize) -> f64 {
        let f = |t: f64, x: f64| (3.0 * std::f64::consts::PI * x).sin() * (3.0 * std::f64::consts::PI * t).cos();
        let m = mesh(nx, 2 * nx);
        let s = FESpace::new(m.clone(), k).unwrap();
        let u = interpolate_nodal(&s, f);
        let tab = s.tabulate(quadrature_for(10).unwrap());
        let mut err = 0.0;
        for tri in 0..m.n_triangles() {
            let vals = tab.on(&TriGeom::new(&m, tri));
            let jets = u.jets_on(tri, &vals);
            for q in 0..vals.jxw.len() {
                let p = vals.points[q];
                err += vals.jxw[q] * (jets[q].value - f(p.t, p.x)).powi(2);
            }
        }
        err.sqrt()
    }

    #[test]
    fn interpolation_converges_at_order_k_plus_one() {
        for k in 1..=3 {
            let ratio = l2_interp_error(k, 8) / l2_interp_error(k, 16);
            let target = 2f64.powi(k as i32 + 1);
            assert!(ratio > 0.8 * target && ratio < 1.2 * target, "k={k}: ratio {ratio}");
        }
    }

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
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

    #[test]
    fn inverse_inequality_constant_is_stable() {
        use rand::{Rng, SeedableRng};
        // max_K h_K ||grad u||_K / ||u||_K over P_k fields, by power iteration
        // on M_K^{-1} K_K started from random local fields
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut measure = |nx: usize, k: usize| {
            let m = mesh(nx, 2 * nx);
            let s = FESpace::new(m.clone(), k).unwrap();
            let tab = s.tabulate(quadrature_for(2 * k).unwrap());
            let n = s.n_local();
            let mut c: f64 = 0.0;
            for tri in 0..m.n_triangles() {
                let vals = tab.on(&TriGeom::new(&m, tri));
                let (mut mass, mut stiff) = (vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]);
                for (q, jets) in vals.jets.iter().enumerate() {
                    for i in 0..n {
                        for j in 0..n {
                            mass[i][j] += vals.jxw[q] * jets[i].value * jets[j].value;
                            stiff[i][j] += vals.jxw[q] * dot(jets[i].grad, jets[j].grad);
                        }
                    }
                }
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut lambda = 0.0;
                for _ in 0..300 {
                    let kv: Vec<f64> = stiff.iter().map(|r| dot_n(r, &v)).collect();
                    let w = solve_dense(mass.clone(), kv);
                    let norm = dot_n(&w, &w).sqrt();
                    v = w.iter().map(|x| x / norm).collect();
                    let kv: Vec<f64> = stiff.iter().map(|r| dot_n(r, &v)).collect();
                    let mv: Vec<f64> = mass.iter().map(|r| dot_n(r, &v)).collect();
                    lambda = dot_n(&v, &kv) / dot_n(&v, &mv);
                }
                c = c.max(m.triangles[tri].diameter * lambda.sqrt());
            }
            c
        };
        for k in 1..=3 {
            let (c1, c2) = (measure(4, k), measure(8, k));
            assert!(c2 <= 1.1 * c1, "k={k}: {c1} -> {c2}");
        }
    }

    fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
        a[0] * b[0] + a[1] * b[1]
    }

    fn dot_n(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn interpolate_into_higher_degree_is_exact() {
        let m = mesh(3, 4);
        let p1 = FESpace::new(m.clone(), 1).unwrap();
        let p3 = FESpace::new(m.clone(), 3).unwrap();
        let f = interpolate_nodal(&p1, |t, x| 2.0 * t - x + 0.3);
        let g = f.interpolate_into(&p3).unwrap();
        for q in [Point::new(0.3, 0.3), Point::new(1.7, 0.9)] {
            assert!((f.eval(&q).unwrap().0 - g.eval(&q).unwrap().0).abs() < 1e-13);
        }
        let other = FESpace::new(mesh(3, 4), 1).unwrap();
        assert!(matches!(f.interpolate_into(&other), Err(Error::MeshMismatch)));
    }

    #[test]
    fn csv_export() {
        let s = FESpace::new(mesh(2, 2), 1).unwrap();
        let f = interpolate_nodal(&s, |t, x| t + x);
        let csv = f.to_csv();
        assert!(csv.starts_with("dof_id,t,x,value\n"));
        assert_eq!(csv.lines().count(), s.n_dofs + 1);
        assert!(DiscreteField::new(s.clone(), vec![0.0; 3]).is_err());
    }
}
