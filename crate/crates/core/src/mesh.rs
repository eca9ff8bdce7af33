//! Conforming triangulations of axis-aligned rectangles.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which side of the bounding rectangle a boundary edge lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    /// Classifies an outward normal by its dominant axis.
    fn from_normal<T: Real>(nx: T, ny: T) -> Self {
        if nx.abs() >= ny.abs() {
            if nx < T::zero() {
                Side::Left
            } else {
                Side::Right
            }
        } else if ny < T::zero() {
            Side::Bottom
        } else {
            Side::Top
        }
    }
}

/// A boundary edge oriented so that the domain lies on its left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub side: Side,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds<T> {
    pub xmin: T,
    pub xmax: T,
    pub ymin: T,
    pub ymax: T,
}

impl<T: Real> Bounds<T> {
    pub fn area(&self) -> T {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn perimeter(&self) -> T {
        T::lit(2.0) * ((self.xmax - self.xmin) + (self.ymax - self.ymin))
    }
}

/// Triangulation with counterclockwise triangles and an explicit boundary edge list.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct Mesh<T> {
    vertices: Vec<[T; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    bounds: Bounds<T>,
    h: T,
    /// True when the triangles tile the bounding rectangle.
    rectangular: bool,
    /// Cell counts `[nx, ny]` of a structured grid with row-major vertices.
    grid: Option<[usize; 2]>,
}

/// Builds a uniform grid over `[xmin, xmax] x [ymin, ymax]` with `n` cells per
/// unit length in each direction (at least one cell per direction); every cell
/// is split along its lower-left to upper-right diagonal.
///
/// Vertices are numbered row-major from the lower-left corner, and `h` is the
/// cell diagonal.
pub fn build_structured_mesh<T: Real>(xmin: T, xmax: T, ymin: T, ymax: T, n: usize) -> Result<Mesh<T>> {
    if n == 0 {
        return Err(Error::InvalidMesh("subdivisions per unit must be at least 1".into()));
    }
    if !(xmax > xmin) || !(ymax > ymin) {
        return Err(Error::InvalidMesh(format!("non-positive extent: x in [{xmin}, {xmax}], y in [{ymin}, {ymax}]")));
    }
    let cells = |len: T| -> usize {
        let c = (len * T::from_usize_lossy(n) - T::lit(1e-9)).ceil();
        c.to_usize().unwrap_or(1).max(1)
    };
    let nx = cells(xmax - xmin);
    let ny = cells(ymax - ymin);
    let dx = (xmax - xmin) / T::from_usize_lossy(nx);
    let dy = (ymax - ymin) / T::from_usize_lossy(ny);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // pin the last row/column to the exact bounds
        let y = if j == ny { ymax } else { ymin + dy * T::from_usize_lossy(j) };
        for i in 0..=nx {
            let x = if i == nx { xmax } else { xmin + dx * T::from_usize_lossy(i) };
            vertices.push([x, y]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { vertices: [idx(i, 0), idx(i + 1, 0)], side: Side::Bottom });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge { vertices: [idx(nx, j), idx(nx, j + 1)], side: Side::Right });
    }
    for i in (0..nx).rev() {
        boundary_edges.push(BoundaryEdge { vertices: [idx(i + 1, ny), idx(i, ny)], side: Side::Top });
    }
    for j in (0..ny).rev() {
        boundary_edges.push(BoundaryEdge { vertices: [idx(0, j + 1), idx(0, j)], side: Side::Left });
    }

    Ok(Mesh {
        vertices,
        triangles,
        boundary_edges,
        bounds: Bounds { xmin, xmax, ymin, ymax },
        h: (dx * dx + dy * dy).sqrt(),
        rectangular: true,
        grid: Some([nx, ny]),
    })
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh from raw vertices and triangles, deriving boundary edges
    /// (edges with a single incident triangle) and reorienting clockwise
    /// triangles.
    pub fn from_triangles(vertices: Vec<[T; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidMesh("empty vertex or triangle list".into()));
        }
        for t in triangles.iter_mut() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t:?} references a missing vertex")));
            }
            let area = signed_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if area == T::zero() {
                return Err(Error::InvalidMesh(format!("degenerate triangle {t:?}")));
            }
            if area < T::zero() {
                t.swap(1, 2);
            }
        }
        let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let e = count.entry((a.min(b), a.max(b))).or_insert((0, [a, b]));
                e.0 += 1;
            }
        }
        let mut boundary: Vec<[usize; 2]> = count.into_values().filter(|(c, _)| *c == 1).map(|(_, e)| e).collect();
        boundary.sort_unstable();
        let boundary_edges = boundary
            .into_iter()
            .map(|[a, b]| {
                let (pa, pb) = (vertices[a], vertices[b]);
                let side = Side::from_normal(pb[1] - pa[1], pa[0] - pb[0]);
                BoundaryEdge { vertices: [a, b], side }
            })
            .collect();

        let (mut xmin, mut xmax) = (T::infinity(), T::neg_infinity());
        let (mut ymin, mut ymax) = (T::infinity(), T::neg_infinity());
        for p in &vertices {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let mut h = T::zero();
        for t in &triangles {
            for k in 0..3 {
                let (p, q) = (vertices[t[k]], vertices[t[(k + 1) % 3]]);
                h = h.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            bounds: Bounds { xmin, xmax, ymin, ymax },
            h,
            rectangular: false,
            grid: None,
        })
    }

    /// Same mesh with the triangle list permuted; used to check that assembly
    /// does not depend on element order.
    pub fn with_triangle_order(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.triangles.len() {
            return Err(Error::DimensionMismatch("permutation length differs from triangle count".into()));
        }
        let mut seen = vec![false; order.len()];
        for &k in order {
            if k >= order.len() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidParameter("not a permutation".into()));
            }
        }
        let mut out = self.clone();
        out.triangles = order.iter().map(|&k| self.triangles[k]).collect();
        Ok(out)
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn bounds(&self) -> Bounds<T> {
        self.bounds
    }

    /// Nominal element diameter (cell diagonal for structured meshes).
    pub fn h(&self) -> T {
        self.h
    }

    /// Cell counts `[nx, ny]` when the mesh came from [`build_structured_mesh`].
    pub fn grid_dims(&self) -> Option<[usize; 2]> {
        self.grid
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> T {
        let [a, b, c] = self.triangles[t];
        signed_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> T {
        let (p, q) = (self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |k| {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    [a.min(b), a.max(b)]
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Vertex adjacency lists derived from the triangle edges.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for [a, b] in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Boundary vertices in traversal order along the boundary, starting from
    /// the lowest-indexed boundary vertex. Each boundary vertex appears once.
    pub fn boundary_trace_indices(&self) -> Vec<usize> {
        let mut next: HashMap<usize, usize> = HashMap::with_capacity(self.boundary_edges.len());
        for e in &self.boundary_edges {
            next.insert(e.vertices[0], e.vertices[1]);
        }
        let Some(&start) = next.keys().min() else {
            return Vec::new();
        };
        let mut order = Vec::with_capacity(next.len());
        let mut cur = start;
        loop {
            order.push(cur);
            match next.get(&cur) {
                Some(&n) if n != start && order.len() <= next.len() => cur = n,
                _ => break,
            }
        }
        order
    }

    /// Total area of the triangles.
    pub fn area(&self) -> T {
        (0..self.num_triangles()).map(|k| self.triangle_area(k)).sum()
    }

    /// Checks the structural invariants: positive orientation, edge
    /// multiplicities, area partition of the bounding rectangle (structured
    /// meshes only) and the Euler relation for a simply connected domain.
    pub fn validate(&self) -> Result<()> {
        let mut total = T::zero();
        for (k, _) in self.triangles.iter().enumerate() {
            let a = self.triangle_area(k);
            if !(a > T::zero()) {
                return Err(Error::InvalidMesh(format!("triangle {k} has non-positive area {a}")));
            }
            total += a;
        }
        let area = self.bounds.area();
        if self.rectangular && ((total - area) / area).abs() > T::lit(1e-12) {
            return Err(Error::InvalidMesh(format!("triangle areas sum to {total}, expected {area}")));
        }
        let mut count: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        let mut boundary: Vec<[usize; 2]> = self
            .boundary_edges
            .iter()
            .map(|e| [e.vertices[0].min(e.vertices[1]), e.vertices[0].max(e.vertices[1])])
            .collect();
        boundary.sort_unstable();
        for (e, &c) in &count {
            let on_boundary = boundary.binary_search(e).is_ok();
            let expected = if on_boundary { 1 } else { 2 };
            if c != expected {
                return Err(Error::InvalidMesh(format!("edge {e:?} shared by {c} triangles")));
            }
        }
        if boundary.iter().any(|e| !count.contains_key(e)) {
            return Err(Error::InvalidMesh("boundary edge not part of any triangle".into()));
        }
        let euler = self.num_vertices() as i64 - count.len() as i64 + self.num_triangles() as i64;
        if euler != 1 {
            return Err(Error::InvalidMesh(format!("Euler characteristic {euler} != 1")));
        }
        Ok(())
    }
}

pub(crate) fn signed_area<T: Real>(a: &[T; 2], b: &[T; 2], c: &[T; 2]) -> T {
    T::lit(0.5) * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}
