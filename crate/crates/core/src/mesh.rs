//! Conforming triangulations of the spacetime rectangle `(0,T) x (0,1)`.
//!
//! Coordinates are ordered `(t, x)`: time is the first axis. Triangles are
//! stored counterclockwise in that plane and local edge `e` joins local
//! vertices `e` and `e + 1 (mod 3)`. Local edge 0 doubles as the refinement
//! edge for newest-vertex bisection, so vertex 2 is the newest vertex.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: f64,
}

impl Point {
    pub fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.t - other.t).powi(2) + (self.x - other.x).powi(2)).sqrt()
    }

    fn midpoint(&self, other: &Point) -> Point {
        Point::new(0.5 * (self.t + other.t), 0.5 * (self.x + other.x))
    }
}

/// Open spatial interval `(a, b)` inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a < 0.0 || b > 1.0 || a >= b {
            return Err(Error::InvalidInterval(a, b));
        }
        Ok(Self { a, b })
    }

    /// The whole spatial domain `(0, 1)`.
    pub fn full() -> Self {
        Self { a: 0.0, b: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Membership in the closed interval, with a small tolerance.
    pub fn contains_closed(&self, x: f64) -> bool {
        x >= self.a - GEOM_TOL && x <= self.b + GEOM_TOL
    }
}

/// Position of a triangle relative to the strip `(0,T) x omega`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripLocation {
    Inside,
    Outside,
    Straddles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Lateral boundary `(0,T) x {0,1}`.
    Sigma,
    /// `t = 0`.
    Initial,
    /// `t = T`.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    Interior { left: usize, right: usize },
    Boundary { tri: usize, tag: BoundaryTag },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Endpoints, sorted ascending.
    pub vertices: [usize; 2],
    pub kind: FacetKind,
    /// Unit normal `(n_t, n_x)`, outward from the boundary triangle or from
    /// `left` for interior facets.
    pub normal: [f64; 2],
    pub length: f64,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        matches!(self.kind, FacetKind::Interior { .. })
    }

    pub fn tag(&self) -> Option<BoundaryTag> {
        match self.kind {
            FacetKind::Boundary { tag, .. } => Some(tag),
            FacetKind::Interior { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub diameter: f64,
}

/// How each structured grid cell is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPattern {
    /// Four triangles meeting at the cell centroid.
    #[default]
    Crisscross,
    /// Two triangles sharing the diagonal from `(t_j, x_i)` to `(t_j+1, x_i+1)`.
    Diagonal,
}

#[derive(Debug, Clone)]
pub struct SpacetimeMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub facets: Vec<Facet>,
    /// Facet index of each local edge of each triangle.
    pub tri_facets: Vec<[usize; 3]>,
    /// Global mesh size: the largest triangle diameter.
    pub h: f64,
    pub t_final: f64,
    /// `max_K h / h_K`.
    pub quasi_uniformity: f64,
    pub omega: Interval,
    /// Every triangle lies entirely inside or entirely outside `(0,T) x omega`.
    pub omega_conforming: bool,
}

impl SpacetimeMesh {
    /// Structured triangulation of `(0,T) x (0,1)` on an `nt x nx` grid.
    pub fn build_structured(
        nx: usize,
        nt: usize,
        t_final: f64,
        omega: Interval,
        pattern: SplitPattern,
    ) -> Result<Self> {
        if nx < 2 || nt < 2 {
            return Err(Error::InvalidDims { nx, nt });
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidMesh(format!("final time {t_final} must be positive")));
        }
        for end in [omega.a, omega.b] {
            let s = end * nx as f64;
            if (s - s.round()).abs() > 1e-9 * nx as f64 {
                return Err(Error::OmegaNotAligned(end));
            }
        }

        let mut vertices = Vec::with_capacity((nx + 1) * (nt + 1));
        for j in 0..=nt {
            for i in 0..=nx {
                vertices.push(Point::new(t_final * j as f64 / nt as f64, i as f64 / nx as f64));
            }
        }
        let grid = |j: usize, i: usize| j * (nx + 1) + i;
        let mut tris = Vec::new();
        for j in 0..nt {
            for i in 0..nx {
                // counterclockwise around the cell in the (t, x) plane
                let c = [grid(j, i), grid(j + 1, i), grid(j + 1, i + 1), grid(j, i + 1)];
                match pattern {
                    SplitPattern::Crisscross => {
                        let p0 = vertices[c[0]];
                        let p2 = vertices[c[2]];
                        let center = vertices.len();
                        vertices.push(p0.midpoint(&p2));
                        for k in 0..4 {
                            tris.push([c[k], c[(k + 1) % 4], center]);
                        }
                    }
                    SplitPattern::Diagonal => {
                        tris.push([c[2], c[0], c[1]]);
                        tris.push([c[0], c[2], c[3]]);
                    }
                }
            }
        }
        Self::from_parts(vertices, tris, t_final, omega)
    }

    /// Assemble a mesh from raw vertices and counterclockwise triangles,
    /// recomputing facets, sizes and the omega flag.
    pub fn from_parts(vertices: Vec<Point>, tris: Vec<[usize; 3]>, t_final: f64, omega: Interval) -> Result<Self> {
        for (k, tri) in tris.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {k} references a missing vertex")));
            }
            let area = signed_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if area <= 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {k} is not counterclockwise (signed area {area:e})")));
            }
        }
        for p in &vertices {
            if p.t < -GEOM_TOL || p.t > t_final + GEOM_TOL || p.x < -GEOM_TOL || p.x > 1.0 + GEOM_TOL {
                return Err(Error::InvalidMesh(format!("vertex ({}, {}) outside domain", p.t, p.x)));
            }
        }
        let triangles: Vec<Triangle> = tris
            .into_iter()
            .map(|v| {
                let [a, b, c] = v.map(|i| vertices[i]);
                Triangle { vertices: v, diameter: a.dist(&b).max(b.dist(&c)).max(c.dist(&a)) }
            })
            .collect();
        let (facets, tri_facets) = classify_facets(&vertices, &triangles, t_final)?;
        let h = triangles.iter().map(|t| t.diameter).fold(0.0, f64::max);
        let h_min = triangles.iter().map(|t| t.diameter).fold(f64::INFINITY, f64::min);
        let mut mesh = Self {
            vertices,
            triangles,
            facets,
            tri_facets,
            h,
            t_final,
            quasi_uniformity: h / h_min,
            omega,
            omega_conforming: true,
        };
        mesh.omega_conforming =
            (0..mesh.n_triangles()).all(|k| mesh.strip_location(k, &omega) != StripLocation::Straddles);
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn tri_points(&self, k: usize) -> [Point; 3] {
        self.triangles[k].vertices.map(|v| self.vertices[v])
    }

    pub fn area(&self, k: usize) -> f64 {
        let [a, b, c] = self.tri_points(k);
        signed_area(&a, &b, &c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|k| self.area(k)).sum()
    }

    pub fn h_min(&self) -> f64 {
        self.triangles.iter().map(|t| t.diameter).fold(f64::INFINITY, f64::min)
    }

    pub fn boundary_length(&self) -> f64 {
        self.facets.iter().filter(|f| !f.is_interior()).map(|f| f.length).sum()
    }

    pub fn centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.tri_points(k);
        Point::new((a.t + b.t + c.t) / 3.0, (a.x + b.x + c.x) / 3.0)
    }

    pub fn strip_location(&self, k: usize, omega: &Interval) -> StripLocation {
        let xs = self.tri_points(k).map(|p| p.x);
        if xs.iter().all(|&x| omega.contains_closed(x)) {
            StripLocation::Inside
        } else if xs.iter().all(|&x| x <= omega.a + GEOM_TOL) || xs.iter().all(|&x| x >= omega.b - GEOM_TOL) {
            StripLocation::Outside
        } else {
            StripLocation::Straddles
        }
    }

    /// Barycentric coordinates of `p` with respect to triangle `k`.
    pub fn barycentric(&self, k: usize, p: &Point) -> [f64; 3] {
        let [a, b, c] = self.tri_points(k);
        let det = signed_area(&a, &b, &c) * 2.0;
        let l1 = ((p.t - a.t) * (c.x - a.x) - (c.t - a.t) * (p.x - a.x)) / det;
        let l2 = ((b.t - a.t) * (p.x - a.x) - (p.t - a.t) * (b.x - a.x)) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// First triangle containing `p` (closed, with tolerance).
    pub fn locate(&self, p: &Point) -> Result<usize> {
        let tol = 1e-12;
        (0..self.n_triangles())
            .find(|&k| self.barycentric(k, p).iter().all(|&l| l >= -tol))
            .ok_or(Error::OutOfDomain { t: p.t, x: p.x })
    }

    /// Split every triangle into four congruent children through the edge
    /// midpoints.
    pub fn refine_uniform(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(vertices[a].midpoint(&vertices[b]));
                vertices.len() - 1
            })
        };
        let mut tris = Vec::with_capacity(4 * self.n_triangles());
        for tri in &self.triangles {
            let [v0, v1, v2] = tri.vertices;
            let m01 = mid(v0, v1, &mut vertices);
            let m12 = mid(v1, v2, &mut vertices);
            let m20 = mid(v2, v0, &mut vertices);
            tris.push([v0, m01, m20]);
            tris.push([m01, v1, m12]);
            tris.push([m20, m12, v2]);
            tris.push([m12, m20, m01]);
        }
        Self::from_parts(vertices, tris, self.t_final, self.omega).expect("uniform refinement of a valid mesh is valid")
    }

    /// Newest-vertex bisection of the marked triangles, with conforming
    /// closure.
    pub fn refine_adaptive(&self, marked: &[usize]) -> Self {
        if marked.is_empty() {
            return self.clone();
        }
        let edge_key = |a: usize, b: usize| (a.min(b), a.max(b));
        let mut edge_marked: HashMap<(usize, usize), bool> = HashMap::new();
        for &k in marked {
            let [v0, v1, _] = self.triangles[k].vertices;
            edge_marked.insert(edge_key(v0, v1), true);
        }
        // closure: a triangle with any marked edge must bisect its refinement edge
        loop {
            let mut changed = false;
            for tri in &self.triangles {
                let v = tri.vertices;
                let refinement = edge_key(v[0], v[1]);
                if edge_marked.contains_key(&refinement) {
                    continue;
                }
                let other_marked =
                    edge_marked.contains_key(&edge_key(v[1], v[2])) || edge_marked.contains_key(&edge_key(v[2], v[0]));
                if other_marked {
                    edge_marked.insert(refinement, true);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tris = Vec::with_capacity(self.n_triangles() + 4 * edge_marked.len());
        let mut stack: Vec<[usize; 3]> = Vec::new();
        for tri in &self.triangles {
            stack.push(tri.vertices);
            while let Some(v) = stack.pop() {
                let key = edge_key(v[0], v[1]);
                if !edge_marked.contains_key(&key) {
                    tris.push(v);
                    continue;
                }
                let m = *midpoints.entry(key).or_insert_with(|| {
                    vertices.push(vertices[v[0]].midpoint(&vertices[v[1]]));
                    vertices.len() - 1
                });
                // children keep counterclockwise order; m becomes the newest vertex
                stack.push([v[1], v[2], m]);
                stack.push([v[2], v[0], m]);
            }
        }
        Self::from_parts(vertices, tris, self.t_final, self.omega)
            .expect("newest-vertex bisection with closure yields a conforming mesh")
    }

    /// Structural validity: orientation, edge manifoldness, boundary edges on
    /// the domain boundary and area tiling. Together these exclude hanging
    /// nodes and overlaps.
    pub fn check_conformity(&self) -> Result<()> {
        let rebuilt = Self::from_parts(
            self.vertices.clone(),
            self.triangles.iter().map(|t| t.vertices).collect(),
            self.t_final,
            self.omega,
        )?;
        let area = rebuilt.total_area();
        if (area - self.t_final).abs() > 1e-12 * self.t_final {
            return Err(Error::InvalidMesh(format!("triangle areas sum to {area}, expected {}", self.t_final)));
        }
        let perimeter = rebuilt.boundary_length();
        let expected = 2.0 * self.t_final + 2.0;
        if (perimeter - expected).abs() > 1e-10 * expected {
            return Err(Error::InvalidMesh(format!("boundary length {perimeter}, expected {expected}")));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("spacetime-mesh v1 {} {}\n", self.n_vertices(), self.n_triangles());
        for p in &self.vertices {
            writeln!(s, "{:e} {:e}", p.t, p.x).unwrap();
        }
        for tri in &self.triangles {
            let [a, b, c] = tri.vertices;
            writeln!(s, "{a} {b} {c}").unwrap();
        }
        s
    }

    /// Parse the plain-text format. The final time is the largest vertex `t`.
    pub fn from_text(text: &str, omega: Interval) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty mesh file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "spacetime-mesh" || fields[1] != "v1" {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let nv = parse_usize(fields[2])?;
        let nt = parse_usize(fields[3])?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated vertex list".into()))?;
            let v: Vec<&str> = line.split_whitespace().collect();
            if v.len() != 2 {
                return Err(Error::Parse(format!("bad vertex line {line:?}")));
            }
            vertices.push(Point::new(parse_f64(v[0])?, parse_f64(v[1])?));
        }
        let mut tris = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated triangle list".into()))?;
            let v: Vec<&str> = line.split_whitespace().collect();
            if v.len() != 3 {
                return Err(Error::Parse(format!("bad triangle line {line:?}")));
            }
            tris.push([parse_usize(v[0])?, parse_usize(v[1])?, parse_usize(v[2])?]);
        }
        let t_final = vertices.iter().map(|p| p.t).fold(0.0, f64::max);
        Self::from_parts(vertices, tris, t_final, omega)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, omega: Interval) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, omega)
    }
}

pub fn signed_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b.t - a.t) * (c.x - a.x) - (c.t - a.t) * (b.x - a.x))
}

/// Build the facet list of a triangle soup, tagging boundary facets and
/// orienting normals.
pub fn classify_facets(
    vertices: &[Point],
    triangles: &[Triangle],
    t_final: f64,
) -> Result<(Vec<Facet>, Vec<[usize; 3]>)> {
    let mut owners: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut order = Vec::new();
    for (k, tri) in triangles.iter().enumerate() {
        for e in 0..3 {
            let a = tri.vertices[e];
            let b = tri.vertices[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            let entry = owners.entry(key).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push((k, e));
        }
    }

    let outward = |k: usize, e: usize| -> ([f64; 2], f64) {
        let v = triangles[k].vertices;
        let (a, b) = (vertices[v[e]], vertices[v[(e + 1) % 3]]);
        let (dt, dx) = (b.t - a.t, b.x - a.x);
        let len = (dt * dt + dx * dx).sqrt();
        ([dx / len, -dt / len], len)
    };
    let scale_tol = 1e-9;

    let mut facets = Vec::with_capacity(order.len());
    let mut tri_facets = vec![[usize::MAX; 3]; triangles.len()];
    for key in order {
        let adj = &owners[&key];
        let (normal, length) = outward(adj[0].0, adj[0].1);
        let kind = match adj.as_slice() {
            [(k1, _), (k2, _)] => FacetKind::Interior { left: *k1, right: *k2 },
            [(k, _)] => {
                let (p, q) = (vertices[key.0], vertices[key.1]);
                let tag = if p.x.abs() < scale_tol && q.x.abs() < scale_tol
                    || (p.x - 1.0).abs() < scale_tol && (q.x - 1.0).abs() < scale_tol
                {
                    BoundaryTag::Sigma
                } else if p.t.abs() < scale_tol && q.t.abs() < scale_tol {
                    BoundaryTag::Initial
                } else if (p.t - t_final).abs() < scale_tol && (q.t - t_final).abs() < scale_tol {
                    BoundaryTag::Final
                } else {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({}, {}) has one neighbour but is not on the domain boundary",
                        key.0, key.1
                    )));
                };
                FacetKind::Boundary { tri: *k, tag }
            }
            _ => return Err(Error::NonManifold(key.0, key.1)),
        };
        let id = facets.len();
        for &(k, e) in adj {
            tri_facets[k][e] = id;
        }
        facets.push(Facet { vertices: [key.0, key.1], kind, normal, length });
    }
    Ok((facets, tri_facets))
}
