//! Conforming P1 finite elements on a triangulated unit square.
//!
//! Meshes refine by newest-vertex bisection with conforming closure. Each
//! triangle stores its vertices so that the refinement edge runs between the
//! first two and the newest vertex sits last; bisection inserts the midpoint
//! of the refinement edge and hands each child one of the remaining edges as
//! its new refinement edge. Starting from right isosceles triangles this
//! keeps every angle in {45, 90} degrees forever, so shape regularity is
//! automatic.

use std::collections::HashMap;

use thiserror::Error;

use crate::sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("triangle {tri} is degenerate (area {area:.3e})")]
    DegenerateTriangle { tri: usize, area: f64 },
    #[error("coefficient values have length {got}, expected {expected} (3 per triangle)")]
    CoefficientLength { got: usize, expected: usize },
    #[error("facet {facet} is on the boundary and has no jump")]
    BoundaryFacet { facet: usize },
}

/// Triangle with vertex ids ordered so that `v[0]..v[1]` is the refinement
/// edge and `v[2]` is the newest vertex.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub v: [usize; 3],
    pub generation: u32,
}

/// Undirected edge of the triangulation with its adjacent triangles.
#[derive(Debug, Clone, Copy)]
pub struct Facet {
    pub v: [usize; 2],
    pub tris: (usize, Option<usize>),
    pub boundary: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<Triangle>,
    facets: Vec<Facet>,
    /// Interior vertex ids in increasing order.
    free: Vec<usize>,
    /// Maps a vertex id to its slot in `free`, `None` on the boundary.
    free_index: Vec<Option<usize>>,
    /// Midpoint provenance per vertex: the two parent vertices from the mesh
    /// this one was refined from, or `[v, v]` for inherited vertices.
    parent_edge: Vec<[usize; 2]>,
    /// Vertex count of the mesh this one was refined from.
    n_parent_vertices: usize,
}

impl Mesh {
    /// Uniform criss-cross mesh of the unit square with `n x n` cells, each
    /// split along its diagonal; refinement edges are the hypotenuses.
    pub fn initial(n: usize) -> Self {
        assert!(n >= 1, "need at least one subdivision");
        let h = 1.0 / n as f64;
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let p00 = idx(i, j);
                let p10 = idx(i + 1, j);
                let p01 = idx(i, j + 1);
                let p11 = idx(i + 1, j + 1);
                // Both halves share the hypotenuse p00..p11 as refinement edge.
                triangles.push(Triangle { v: [p11, p00, p10], generation: 0 });
                triangles.push(Triangle { v: [p00, p11, p01], generation: 0 });
            }
        }
        let n_vertices = vertices.len();
        Self::from_parts(vertices, triangles, (0..n_vertices).map(|v| [v, v]).collect(), n_vertices)
    }

    fn from_parts(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<Triangle>,
        parent_edge: Vec<[usize; 2]>,
        n_parent_vertices: usize,
    ) -> Self {
        let mut facet_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        for (t, tri) in triangles.iter().enumerate() {
            for e in 0..3 {
                let a = tri.v[e];
                let b = tri.v[(e + 1) % 3];
                let key = (a.min(b), a.max(b));
                match facet_of.get(&key) {
                    Some(&f) => {
                        let facet = &mut facets[f];
                        assert!(facet.tris.1.is_none(), "edge shared by three triangles");
                        facet.tris.1 = Some(t);
                        facet.boundary = false;
                    }
                    None => {
                        facet_of.insert(key, facets.len());
                        facets.push(Facet { v: [key.0, key.1], tris: (t, None), boundary: true });
                    }
                }
            }
        }
        let mut on_boundary = vec![false; vertices.len()];
        for facet in &facets {
            if facet.boundary {
                on_boundary[facet.v[0]] = true;
                on_boundary[facet.v[1]] = true;
            }
        }
        let mut free = Vec::new();
        let mut free_index = vec![None; vertices.len()];
        for v in 0..vertices.len() {
            if !on_boundary[v] {
                free_index[v] = Some(free.len());
                free.push(v);
            }
        }
        Mesh { vertices, triangles, facets, free, free_index, parent_edge, n_parent_vertices }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn triangle(&self, t: usize) -> &Triangle {
        &self.triangles[t]
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    /// Slot of a vertex in the free numbering, `None` if it is constrained.
    pub fn free_slot(&self, v: usize) -> Option<usize> {
        self.free_index[v]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.free_index[v].is_none()
    }

    pub fn tri_corners(&self, t: usize) -> [[f64; 2]; 3] {
        let v = self.triangles[t].v;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.tri_corners(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
    }

    pub fn tri_diameter(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.tri_corners(t);
        dist(p0, p1).max(dist(p1, p2)).max(dist(p2, p0))
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.tri_diameter(t)).fold(0.0, f64::max)
    }

    /// Newest-vertex bisection of the marked triangles plus conforming
    /// closure. Unmarked triangles adjacent to split edges are bisected as
    /// needed so the result has no hanging nodes.
    pub fn refine(&self, marked: &[usize]) -> Mesh {
        let edge_key = |a: usize, b: usize| (a.min(b), a.max(b));
        // Closure on marked edges: whenever any edge of a triangle is marked,
        // its refinement edge must be marked too.
        let mut marked_edges: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_marked: std::collections::HashSet<(usize, usize)> =
            std::collections::HashSet::new();
        for &t in marked {
            let v = self.triangles[t].v;
            edge_marked.insert(edge_key(v[0], v[1]));
        }
        loop {
            let mut grew = false;
            for t in 0..self.n_triangles() {
                let v = self.triangles[t].v;
                let refedge = edge_key(v[0], v[1]);
                if edge_marked.contains(&refedge) {
                    continue;
                }
                let touched = edge_marked.contains(&edge_key(v[1], v[2]))
                    || edge_marked.contains(&edge_key(v[2], v[0]));
                if touched {
                    edge_marked.insert(refedge);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }

        if edge_marked.is_empty() {
            return self.clone();
        }

        // Create midpoints in a deterministic order: walk triangles and their
        // refinement edges first, then the remaining marked edges.
        let mut vertices = self.vertices.clone();
        let midpoint = |edges: &mut HashMap<(usize, usize), usize>,
                            vertices: &mut Vec<[f64; 2]>,
                            a: usize,
                            b: usize| {
            let key = edge_key(a, b);
            *edges.entry(key).or_insert_with(|| {
                let pa = self.vertices[key.0];
                let pb = self.vertices[key.1];
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                vertices.len() - 1
            })
        };
        for t in 0..self.n_triangles() {
            let v = self.triangles[t].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                if edge_marked.contains(&edge_key(a, b)) {
                    midpoint(&mut marked_edges, &mut vertices, a, b);
                }
            }
        }

        let mut triangles = Vec::with_capacity(self.n_triangles() + 2 * marked_edges.len());
        let split = |tris: &mut Vec<Triangle>, v: [usize; 3], gen: u32, mids: &HashMap<(usize, usize), usize>| {
            // Children of [a, b, c]: the midpoint of the refinement edge
            // becomes the newest vertex of both, and each child may need a
            // further split if its own refinement edge is marked.
            let [a, b, c] = v;
            let m = mids[&edge_key(a, b)];
            for child in [[c, a, m], [b, c, m]] {
                match mids.get(&edge_key(child[0], child[1])) {
                    Some(&m2) => {
                        tris.push(Triangle { v: [child[2], child[0], m2], generation: gen + 2 });
                        tris.push(Triangle { v: [child[1], child[2], m2], generation: gen + 2 });
                    }
                    None => tris.push(Triangle { v: child, generation: gen + 1 }),
                }
            }
        };
        for t in 0..self.n_triangles() {
            let tri = self.triangles[t];
            if marked_edges.contains_key(&edge_key(tri.v[0], tri.v[1])) {
                split(&mut triangles, tri.v, tri.generation, &marked_edges);
            } else {
                triangles.push(tri);
            }
        }

        let mut parent_edge: Vec<[usize; 2]> = (0..self.n_vertices()).map(|v| [v, v]).collect();
        parent_edge.resize(vertices.len(), [0, 0]);
        for (&(a, b), &m) in &marked_edges {
            parent_edge[m] = [a, b];
        }
        Mesh::from_parts(vertices, triangles, parent_edge, self.n_vertices())
    }

    /// Interpolates nodal values (full vertex set) from the mesh this one was
    /// refined from: inherited vertices copy, midpoints average their parents.
    pub fn prolong_full(&self, coarse: &[f64]) -> Vec<f64> {
        assert_eq!(coarse.len(), self.n_parent_vertices, "value length mismatch");
        let mut fine = Vec::with_capacity(self.n_vertices());
        fine.extend_from_slice(coarse);
        for v in self.n_parent_vertices..self.n_vertices() {
            let [a, b] = self.parent_edge[v];
            fine.push(0.5 * (coarse[a] + coarse[b]));
        }
        fine
    }

    /// Plain-text listing: vertex count, triangle count, then one line per
    /// vertex (`x y`) and one line per triangle (`v0 v1 v2`).
    pub fn export_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{} {}", self.n_vertices(), self.n_triangles()).unwrap();
        for p in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", p[0], p[1]).unwrap();
        }
        for tri in &self.triangles {
            writeln!(out, "{} {} {}", tri.v[0], tri.v[1], tri.v[2]).unwrap();
        }
        out
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Nodal function on the free (interior) vertices; zero on the boundary.
#[derive(Debug, Clone)]
pub struct FeFunction<'a> {
    mesh: &'a Mesh,
    values: Vec<f64>,
}

impl<'a> FeFunction<'a> {
    pub fn new(mesh: &'a Mesh, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.n_free(), "one value per free vertex");
        FeFunction { mesh, values }
    }

    pub fn zero(mesh: &'a Mesh) -> Self {
        FeFunction { mesh, values: vec![0.0; mesh.n_free()] }
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Zero-extends to the full vertex set.
    pub fn full_values(&self) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.n_vertices()];
        for (slot, &v) in self.mesh.free_vertices().iter().enumerate() {
            full[v] = self.values[slot];
        }
        full
    }

    pub fn h1_seminorm(&self) -> f64 {
        h1_seminorm_full(self.mesh, &self.full_values())
    }
}

/// Per-element geometry and order-2 quadrature: the three edge midpoints with
/// equal weights. Quadrature point `q` is the midpoint of the edge opposite
/// local vertex `q`, so the hat function of vertex `q` vanishes there and the
/// other two equal one half.
#[derive(Debug, Clone, Copy)]
pub struct ElementData {
    pub area: f64,
    pub diameter: f64,
    pub quad_points: [[f64; 2]; 3],
    /// Weight shared by the three points, `area / 3`.
    pub quad_weight: f64,
    /// Constant gradient of the hat function of each local vertex.
    pub grads: [[f64; 2]; 3],
}

pub fn element_data(mesh: &Mesh) -> Result<Vec<ElementData>, FemError> {
    (0..mesh.n_triangles())
        .map(|t| {
            let [p0, p1, p2] = mesh.tri_corners(t);
            let area = mesh.tri_area(t);
            if !(area > 1e-300) {
                return Err(FemError::DegenerateTriangle { tri: t, area });
            }
            let mid = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let perp_over = |a: [f64; 2], b: [f64; 2]| {
                [-(b[1] - a[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
            };
            Ok(ElementData {
                area,
                diameter: mesh.tri_diameter(t),
                quad_points: [mid(p1, p2), mid(p2, p0), mid(p0, p1)],
                quad_weight: area / 3.0,
                grads: [perp_over(p1, p2), perp_over(p2, p0), perp_over(p0, p1)],
            })
        })
        .collect()
}

/// All element quadrature points in element-major order, 3 per triangle.
pub fn element_quad_points(mesh: &Mesh) -> Result<Vec<[f64; 2]>, FemError> {
    Ok(element_data(mesh)?.iter().flat_map(|e| e.quad_points).collect())
}

fn stiffness_triplets(
    mesh: &Mesh,
    a_vals: &[f64],
) -> Result<Vec<(usize, usize, f64)>, FemError> {
    let expected = 3 * mesh.n_triangles();
    if a_vals.len() != expected {
        return Err(FemError::CoefficientLength { got: a_vals.len(), expected });
    }
    let elems = element_data(mesh)?;
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, e) in elems.iter().enumerate() {
        let wa = e.quad_weight * (a_vals[3 * t] + a_vals[3 * t + 1] + a_vals[3 * t + 2]);
        let v = mesh.triangle(t).v;
        for i in 0..3 {
            for j in 0..3 {
                let val = wa * (e.grads[i][0] * e.grads[j][0] + e.grads[i][1] * e.grads[j][1]);
                triplets.push((v[i], v[j], val));
            }
        }
    }
    Ok(triplets)
}

/// Stiffness matrix over the free vertices for a coefficient sampled at the
/// element quadrature points (3 values per triangle, element-major).
pub fn assemble_stiffness(mesh: &Mesh, a_vals: &[f64]) -> Result<CsrMatrix, FemError> {
    let triplets: Vec<(usize, usize, f64)> = stiffness_triplets(mesh, a_vals)?
        .into_iter()
        .filter_map(|(i, j, v)| match (mesh.free_slot(i), mesh.free_slot(j)) {
            (Some(a), Some(b)) => Some((a, b, v)),
            _ => None,
        })
        .collect();
    Ok(CsrMatrix::from_triplets(mesh.n_free(), mesh.n_free(), &triplets))
}

/// Stiffness matrix over all vertices, boundary rows and columns included.
pub fn assemble_stiffness_full(mesh: &Mesh, a_vals: &[f64]) -> Result<CsrMatrix, FemError> {
    let triplets = stiffness_triplets(mesh, a_vals)?;
    Ok(CsrMatrix::from_triplets(mesh.n_vertices(), mesh.n_vertices(), &triplets))
}

/// Load vector over all vertices by the order-2 midpoint rule.
pub fn assemble_load_full(
    mesh: &Mesh,
    f: impl Fn([f64; 2]) -> f64,
) -> Result<Vec<f64>, FemError> {
    let elems = element_data(mesh)?;
    let mut load = vec![0.0; mesh.n_vertices()];
    for (t, e) in elems.iter().enumerate() {
        let v = mesh.triangle(t).v;
        let fq = [f(e.quad_points[0]), f(e.quad_points[1]), f(e.quad_points[2])];
        for i in 0..3 {
            // Hat of vertex i is 1/2 at the two midpoints not opposite it.
            let phi_sum = 0.5 * (fq[(i + 1) % 3] + fq[(i + 2) % 3]);
            load[v[i]] += e.quad_weight * phi_sum;
        }
    }
    Ok(load)
}

/// Load vector restricted to the free vertices.
pub fn assemble_load(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Result<Vec<f64>, FemError> {
    let full = assemble_load_full(mesh, f)?;
    Ok(restrict_to_free(mesh, &full))
}

pub fn restrict_to_free(mesh: &Mesh, full: &[f64]) -> Vec<f64> {
    mesh.free_vertices().iter().map(|&v| full[v]).collect()
}

/// Per-facet geometry with a fixed unit normal (pointing away from the first
/// adjacent triangle) and the two-point Gauss rule on the segment.
#[derive(Debug, Clone, Copy)]
pub struct FacetData {
    pub length: f64,
    pub normal: [f64; 2],
    pub quad_points: [[f64; 2]; 2],
    pub tris: (usize, Option<usize>),
    pub boundary: bool,
}

pub fn facet_data(mesh: &Mesh) -> Vec<FacetData> {
    mesh.facets()
        .iter()
        .map(|facet| {
            let a = mesh.vertex(facet.v[0]);
            let b = mesh.vertex(facet.v[1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let length = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let mut normal = [d[1] / length, -d[0] / length];
            // Orient away from the first adjacent triangle.
            let t = facet.tris.0;
            let [p0, p1, p2] = mesh.tri_corners(t);
            let centroid = [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0];
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            if (mid[0] - centroid[0]) * normal[0] + (mid[1] - centroid[1]) * normal[1] < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
            let g = 0.5 / 3.0_f64.sqrt();
            let at = |s: f64| [a[0] + s * d[0], a[1] + s * d[1]];
            FacetData {
                length,
                normal,
                quad_points: [at(0.5 - g), at(0.5 + g)],
                tris: facet.tris,
                boundary: facet.boundary,
            }
        })
        .collect()
}

/// Normal jump of a piecewise vector flux at the facet quadrature points,
/// `None` on boundary facets. The flux is queried per adjacent triangle so it
/// may be discontinuous across the facet.
pub fn facet_jump(
    mesh: &Mesh,
    flux: impl Fn(usize, [f64; 2]) -> [f64; 2],
) -> Vec<Option<[f64; 2]>> {
    facet_data(mesh)
        .iter()
        .map(|fd| {
            let t2 = fd.tris.1?;
            let t1 = fd.tris.0;
            let mut jumps = [0.0; 2];
            for (q, &x) in fd.quad_points.iter().enumerate() {
                let f1 = flux(t1, x);
                let f2 = flux(t2, x);
                jumps[q] =
                    (f1[0] - f2[0]) * fd.normal[0] + (f1[1] - f2[1]) * fd.normal[1];
            }
            Some(jumps)
        })
        .collect()
}

/// H1 seminorm of nodal values on the full vertex set: piecewise gradients
/// are constant, so the elementwise quadrature is exact.
pub fn h1_seminorm_full(mesh: &Mesh, full: &[f64]) -> f64 {
    assert_eq!(full.len(), mesh.n_vertices(), "one value per vertex");
    let elems = element_data(mesh).expect("valid mesh");
    let mut acc = 0.0;
    for (t, e) in elems.iter().enumerate() {
        let v = mesh.triangle(t).v;
        let mut g = [0.0, 0.0];
        for i in 0..3 {
            g[0] += full[v[i]] * e.grads[i][0];
            g[1] += full[v[i]] * e.grads[i][1];
        }
        acc += e.area * (g[0] * g[0] + g[1] * g[1]);
    }
    acc.sqrt()
}

/// Convenience wrapper for a unit-square start mesh.
pub fn initial_mesh(n: usize) -> Mesh {
    Mesh::initial(n)
}
