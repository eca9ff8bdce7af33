//! P1 finite element fields and operator assembly.
//!
//! Every operator is assembled element by element in triangle order. The
//! coefficient-weighted stiffness uses the nodal mean of the coefficient per
//! element, which is exact because the coefficient is itself P1 and the basis
//! gradients are constant on each triangle.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, GridHierarchy};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Nodal values of a P1 function, one per mesh vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T>(pub Vec<T>);

impl<T: Real> ScalarField<T> {
    pub fn zeros(n: usize) -> Self {
        ScalarField(vec![T::zero(); n])
    }

    pub fn constant(n: usize, c: T) -> Self {
        ScalarField(vec![c; n])
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh<T>, f: impl Fn(T, T) -> T) -> Self {
        ScalarField(mesh.vertices().iter().map(|p| f(p[0], p[1])).collect())
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_mesh(&self, mesh: &Mesh<T>) -> Result<()> {
        if self.0.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values, mesh has {} vertices",
                self.0.len(),
                mesh.num_vertices()
            )));
        }
        if let Some(k) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite field value at node {k}")));
        }
        Ok(())
    }
}

/// Vector-valued P1 field with `r` components per vertex, stored row-major
/// (`values[node * r + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField<T> {
    r: usize,
    values: Vec<T>,
}

impl<T: Real> PhaseField<T> {
    pub fn new(r: usize, values: Vec<T>) -> Result<Self> {
        if r < 2 {
            return Err(Error::InvalidParameter(format!("phase count must be at least 2, got {r}")));
        }
        if !values.len().is_multiple_of(r) {
            return Err(Error::DimensionMismatch(format!("{} values is not a multiple of r = {r}", values.len())));
        }
        Ok(PhaseField { r, values })
    }

    /// Every node set to `node_value`.
    pub fn constant(num_nodes: usize, node_value: &[T]) -> Result<Self> {
        let mut values = Vec::with_capacity(num_nodes * node_value.len());
        for _ in 0..num_nodes {
            values.extend_from_slice(node_value);
        }
        Self::new(node_value.len(), values)
    }

    /// Every node set to the simplex vertex `e_phase` (`phase` is 1-based).
    pub fn pure(num_nodes: usize, r: usize, phase: usize) -> Result<Self> {
        if phase == 0 || phase > r {
            return Err(Error::LabelOutOfRange { label: phase, phases: r });
        }
        let mut e = vec![T::zero(); r];
        e[phase - 1] = T::one();
        Self::constant(num_nodes, &e)
    }

    /// Two-phase field `(v, 1 - v)` from the first component.
    pub fn from_first_component(v: &[T]) -> Self {
        let values = v.iter().flat_map(|&x| [x, T::one() - x]).collect();
        PhaseField { r: 2, values }
    }

    pub fn zeros_like(&self) -> Self {
        PhaseField { r: self.r, values: vec![T::zero(); self.values.len()] }
    }

    pub fn phases(&self) -> usize {
        self.r
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len() / self.r
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn node(&self, k: usize) -> &[T] {
        &self.values[k * self.r..(k + 1) * self.r]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.values[k * self.r..(k + 1) * self.r]
    }

    /// Component `i` (0-based) as a nodal vector.
    pub fn component(&self, i: usize) -> Vec<T> {
        self.values.iter().skip(i).step_by(self.r).copied().collect()
    }

    pub fn check_mesh(&self, mesh: &Mesh<T>) -> Result<()> {
        if self.num_nodes() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "phase field has {} nodes, mesh has {} vertices",
                self.num_nodes(),
                mesh.num_vertices()
            )));
        }
        Ok(())
    }

    /// Checks membership in the Gibbs simplex: components `>= -neg_tol` and
    /// node sums within `sum_tol` of one.
    pub fn check_simplex(&self, neg_tol: T, sum_tol: T) -> Result<()> {
        for k in 0..self.num_nodes() {
            let node = self.node(k);
            if let Some(&v) = node.iter().find(|&&v| !(v >= -neg_tol)) {
                return Err(Error::OutsideSimplex { node: k, detail: format!("component {v}") });
            }
            let s: T = node.iter().copied().sum();
            if !((s - T::one()).abs() <= sum_tol) {
                return Err(Error::OutsideSimplex { node: k, detail: format!("component sum {s}") });
            }
        }
        Ok(())
    }

    /// Default phase field tolerances (`1e-12` negativity, `1e-10` sum).
    pub fn validate(&self) -> Result<()> {
        self.check_simplex(T::lit(1e-12), T::lit(1e-10))
    }

    /// Checks that every node sums to zero, i.e. the field is a direction
    /// tangent to the affine hull of the simplex.
    pub fn check_tangent(&self, tol: T) -> Result<()> {
        for k in 0..self.num_nodes() {
            let s: T = self.node(k).iter().copied().sum();
            if !(s.abs() <= tol) {
                return Err(Error::NonTangentDirection { node: k, sum: s.as_f64() });
            }
        }
        Ok(())
    }

    /// `self + t * dir`
    pub fn offset(&self, t: T, dir: &PhaseField<T>) -> Self {
        let values = self.values.iter().zip(&dir.values).map(|(&u, &w)| u + t * w).collect();
        PhaseField { r: self.r, values }
    }
}

/// The `r` coefficient values a(u) interpolates between.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientValues<T> {
    a: Vec<T>,
}

impl<T: Real> CoefficientValues<T> {
    pub fn new(a: Vec<T>) -> Result<Self> {
        if a.len() < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 coefficient values, got {}", a.len())));
        }
        if let Some((k, &v)) = a.iter().enumerate().find(|(_, &v)| !(v > T::zero() && v.is_finite())) {
            return Err(Error::NonPositiveCoefficient { node: k, value: v.as_f64() });
        }
        Ok(CoefficientValues { a })
    }

    pub fn values(&self) -> &[T] {
        &self.a
    }

    pub fn phases(&self) -> usize {
        self.a.len()
    }

    pub fn a_min(&self) -> T {
        self.a.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn a_max(&self) -> T {
        self.a.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// `(sum a_i^2)^(1/2)`
    pub fn a_hat(&self) -> T {
        self.a.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// `a(v) = sum_i a_i v_i` for one node.
    pub fn eval(&self, node: &[T]) -> T {
        node.iter().zip(&self.a).map(|(&u, &a)| a * u).sum()
    }
}

/// Nodal values of `a(u) = sum_i a_i u_i`.
pub fn diffusion_coefficient<T: Real>(u: &PhaseField<T>, a: &CoefficientValues<T>) -> Result<ScalarField<T>> {
    if u.phases() != a.phases() {
        return Err(Error::DimensionMismatch(format!(
            "phase field has r = {}, coefficients have {} values",
            u.phases(),
            a.phases()
        )));
    }
    Ok(ScalarField((0..u.num_nodes()).map(|k| a.eval(u.node(k))).collect()))
}

/// Area and constant basis gradients of one triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry<T> {
    pub area: T,
    pub grads: [[T; 2]; 3],
}

impl<T: Real> ElementGeometry<T> {
    pub fn new(p: [[T; 2]; 3]) -> Self {
        let area = crate::mesh::signed_area(&p[0], &p[1], &p[2]);
        let two_a = T::lit(2.0) * area;
        let grads = [
            [(p[1][1] - p[2][1]) / two_a, (p[2][0] - p[1][0]) / two_a],
            [(p[2][1] - p[0][1]) / two_a, (p[0][0] - p[2][0]) / two_a],
            [(p[0][1] - p[1][1]) / two_a, (p[1][0] - p[0][0]) / two_a],
        ];
        ElementGeometry { area, grads }
    }

    /// Gradient of the P1 function with the given vertex values.
    pub fn gradient(&self, vals: [T; 3]) -> [T; 2] {
        let mut g = [T::zero(); 2];
        for (v, gr) in vals.iter().zip(&self.grads) {
            g[0] += *v * gr[0];
            g[1] += *v * gr[1];
        }
        g
    }

    /// `|T| grad phi_i . grad phi_j`
    pub fn unit_stiffness(&self) -> [[T; 3]; 3] {
        let mut k = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = self.area * (self.grads[i][0] * self.grads[j][0] + self.grads[i][1] * self.grads[j][1]);
            }
        }
        k
    }

    /// `|T|/12 [[2,1,1],[1,2,1],[1,1,2]]`
    pub fn mass(&self) -> [[T; 3]; 3] {
        let d = self.area / T::lit(6.0);
        let o = self.area / T::lit(12.0);
        [[d, o, o], [o, d, o], [o, o, d]]
    }
}

pub fn element_geometry<T: Real>(mesh: &Mesh<T>) -> Vec<ElementGeometry<T>> {
    let v = mesh.vertices();
    mesh.triangles().iter().map(|t| ElementGeometry::new([v[t[0]], v[t[1]], v[t[2]]])).collect()
}

fn check_positive<T: Real>(coeff: &ScalarField<T>) -> Result<()> {
    match coeff.values().iter().position(|&c| !(c > T::zero())) {
        Some(k) => Err(Error::NonPositiveCoefficient { node: k, value: coeff.values()[k].as_f64() }),
        None => Ok(()),
    }
}

/// `int coeff grad phi_j . grad phi_i` for a strictly positive P1 coefficient.
pub fn assemble_stiffness<T: Real>(mesh: &Mesh<T>, coeff: &ScalarField<T>) -> Result<CsrMatrix<T>> {
    coeff.check_mesh(mesh)?;
    check_positive(coeff)?;
    Ok(assemble_weighted_stiffness(mesh, coeff.values()))
}

/// Weighted stiffness without a sign check; used for sensitivities where the
/// weight is `a(w)` of a tangent direction.
pub(crate) fn assemble_weighted_stiffness<T: Real>(mesh: &Mesh<T>, coeff: &[T]) -> CsrMatrix<T> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    let third = T::one() / T::lit(3.0);
    for (t, geo) in mesh.triangles().iter().zip(element_geometry(mesh)) {
        let mean = (coeff[t[0]] + coeff[t[1]] + coeff[t[2]]) * third;
        let k = geo.unit_stiffness();
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((t[i], t[j], mean * k[i][j]));
            }
        }
    }
    let n = mesh.num_vertices();
    CsrMatrix::from_triplets(n, n, &triplets).expect("mesh indices are in range")
}

/// Consistent P1 mass matrix.
pub fn assemble_mass<T: Real>(mesh: &Mesh<T>) -> CsrMatrix<T> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, geo) in mesh.triangles().iter().zip(element_geometry(mesh)) {
        let m = geo.mass();
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((t[i], t[j], m[i][j]));
            }
        }
    }
    let n = mesh.num_vertices();
    CsrMatrix::from_triplets(n, n, &triplets).expect("mesh indices are in range")
}

/// Row sums of the consistent mass matrix.
pub fn assemble_lumped_mass<T: Real>(mesh: &Mesh<T>) -> Vec<T> {
    let mut d = vec![T::zero(); mesh.num_vertices()];
    let third = T::one() / T::lit(3.0);
    for (k, t) in mesh.triangles().iter().enumerate() {
        let share = mesh.triangle_area(k) * third;
        for &v in t {
            d[v] += share;
        }
    }
    d
}

/// Boundary mass matrix, edge blocks `|e|/6 [[2,1],[1,2]]`.
pub fn assemble_boundary_mass<T: Real>(mesh: &Mesh<T>) -> CsrMatrix<T> {
    let mut triplets = Vec::with_capacity(4 * mesh.boundary_edges().len());
    for e in mesh.boundary_edges() {
        let len = mesh.edge_length(e);
        let d = len / T::lit(3.0);
        let o = len / T::lit(6.0);
        let [a, b] = e.vertices;
        triplets.extend([(a, a, d), (b, b, d), (a, b, o), (b, a, o)]);
    }
    let n = mesh.num_vertices();
    CsrMatrix::from_triplets(n, n, &triplets).expect("mesh indices are in range")
}

/// Load vector `int_{dOmega} g_h phi_i` for the P1 boundary trace of `g`
/// (interior nodal values of `g` are ignored). Rejects data whose boundary
/// integral exceeds `1e-10` in magnitude.
pub fn assemble_boundary_load<T: Real>(mesh: &Mesh<T>, g: &ScalarField<T>) -> Result<Vec<T>> {
    g.check_mesh(mesh)?;
    let mut load = vec![T::zero(); mesh.num_vertices()];
    let gv = g.values();
    for e in mesh.boundary_edges() {
        let len = mesh.edge_length(e);
        let [a, b] = e.vertices;
        load[a] += len * (T::lit(2.0) * gv[a] + gv[b]) / T::lit(6.0);
        load[b] += len * (gv[a] + T::lit(2.0) * gv[b]) / T::lit(6.0);
    }
    let integral: T = load.iter().copied().sum();
    if !(integral.abs() <= T::lit(1e-10)) {
        return Err(Error::IncompatibleFlux { integral: integral.as_f64() });
    }
    Ok(load)
}

/// Per-element gradients of a nodal field.
pub fn element_gradients<T: Real>(mesh: &Mesh<T>, geometry: &[ElementGeometry<T>], f: &[T]) -> Vec<[T; 2]> {
    mesh.triangles().iter().zip(geometry).map(|(t, geo)| geo.gradient([f[t[0]], f[t[1]], f[t[2]]])).collect()
}

/// `max_T |grad f|_T`
pub fn max_gradient_norm<T: Real>(mesh: &Mesh<T>, f: &[T]) -> T {
    let geo = element_geometry(mesh);
    element_gradients(mesh, &geo, f).into_iter().fold(T::zero(), |m, g| m.max((g[0] * g[0] + g[1] * g[1]).sqrt()))
}

/// Nodal vector `int (grad y . grad p) phi_i`, exact since the product is
/// constant per element.
pub fn gradient_product_load<T: Real>(mesh: &Mesh<T>, geometry: &[ElementGeometry<T>], y: &[T], p: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); mesh.num_vertices()];
    let third = T::one() / T::lit(3.0);
    for (t, geo) in mesh.triangles().iter().zip(geometry) {
        let gy = geo.gradient([y[t[0]], y[t[1]], y[t[2]]]);
        let gp = geo.gradient([p[t[0]], p[t[1]], p[t[2]]]);
        let share = (gy[0] * gp[0] + gy[1] * gp[1]) * geo.area * third;
        for &v in t {
            out[v] += share;
        }
    }
    out
}

/// Precomputed geometry and unit-coefficient operators for one mesh, with a
/// fixed sparsity pattern so coefficient-weighted stiffness matrices can be
/// reassembled without sorting.
#[derive(Clone, Debug)]
pub struct Discretization<T> {
    mesh: Mesh<T>,
    geometry: Vec<ElementGeometry<T>>,
    /// Per element, the value slots of the 3x3 local block in `unit_stiffness`.
    slots: Vec<[usize; 9]>,
    unit_stiffness: CsrMatrix<T>,
    mass: CsrMatrix<T>,
    lumped_mass: Vec<T>,
    boundary_mass: CsrMatrix<T>,
    /// Present for structured meshes that admit at least one coarsening.
    hierarchy: Option<GridHierarchy<T>>,
    /// Cached `lambda_max(M_L^{-1} K1)` estimate.
    spectral_radius: OnceLock<T>,
}

impl<T: Real> Discretization<T> {
    pub fn new(mesh: Mesh<T>) -> Self {
        let geometry = element_geometry(&mesh);
        let ones = vec![T::one(); mesh.num_vertices()];
        let unit_stiffness = assemble_weighted_stiffness(&mesh, &ones);
        let slots = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut s = [0usize; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        s[3 * i + j] = unit_stiffness.find(t[i], t[j]).expect("pattern contains element block");
                    }
                }
                s
            })
            .collect();
        let mass = assemble_mass(&mesh);
        let lumped_mass = assemble_lumped_mass(&mesh);
        let boundary_mass = assemble_boundary_mass(&mesh);
        let hierarchy = mesh.grid_dims().map(|[nx, ny]| GridHierarchy::structured(nx, ny)).filter(|h| h.levels() > 1);
        Discretization {
            mesh,
            geometry,
            slots,
            unit_stiffness,
            mass,
            lumped_mass,
            boundary_mass,
            hierarchy,
            spectral_radius: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &Mesh<T> {
        &self.mesh
    }

    pub fn geometry(&self) -> &[ElementGeometry<T>] {
        &self.geometry
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_vertices()
    }

    /// Power-iteration estimate of `lambda_max(M_L^{-1} K1)` from 20 steps,
    /// computed once.
    pub fn stiffness_spectral_radius(&self) -> T {
        *self.spectral_radius.get_or_init(|| crate::vi_step::stiffness_spectral_estimate(self, 20))
    }

    /// Multigrid transfer operators, when the mesh is a coarsenable grid.
    pub fn hierarchy(&self) -> Option<&GridHierarchy<T>> {
        self.hierarchy.as_ref()
    }

    /// Stiffness with coefficient one.
    pub fn unit_stiffness(&self) -> &CsrMatrix<T> {
        &self.unit_stiffness
    }

    pub fn mass(&self) -> &CsrMatrix<T> {
        &self.mass
    }

    pub fn lumped_mass(&self) -> &[T] {
        &self.lumped_mass
    }

    pub fn boundary_mass(&self) -> &CsrMatrix<T> {
        &self.boundary_mass
    }

    /// Coefficient-weighted stiffness on the cached pattern; rejects
    /// non-positive coefficients.
    pub fn stiffness(&self, coeff: &ScalarField<T>) -> Result<CsrMatrix<T>> {
        coeff.check_mesh(&self.mesh)?;
        check_positive(coeff)?;
        Ok(self.weighted_stiffness(coeff.values()))
    }

    pub(crate) fn weighted_stiffness(&self, coeff: &[T]) -> CsrMatrix<T> {
        let mut k = self.unit_stiffness.clone();
        let vals = k.values_mut();
        vals.iter_mut().for_each(|v| *v = T::zero());
        let third = T::one() / T::lit(3.0);
        for ((t, geo), slot) in self.mesh.triangles().iter().zip(&self.geometry).zip(&self.slots) {
            let mean = (coeff[t[0]] + coeff[t[1]] + coeff[t[2]]) * third;
            let local = geo.unit_stiffness();
            for i in 0..3 {
                for j in 0..3 {
                    vals[slot[3 * i + j]] += mean * local[i][j];
                }
            }
        }
        k
    }

    /// `int (grad y . grad p) phi_i`
    pub fn gradient_product_load(&self, y: &[T], p: &[T]) -> Vec<T> {
        gradient_product_load(&self.mesh, &self.geometry, y, p)
    }

    pub fn element_gradients(&self, f: &[T]) -> Vec<[T; 2]> {
        element_gradients(&self.mesh, &self.geometry, f)
    }

    /// `max_T |grad f|_T`
    pub fn max_gradient_norm(&self, f: &[T]) -> T {
        self.element_gradients(f).into_iter().fold(T::zero(), |m, g| m.max((g[0] * g[0] + g[1] * g[1]).sqrt()))
    }

    /// Lumped-mass weighted inner product of two nodal vectors.
    pub fn lumped_dot(&self, a: &[T], b: &[T]) -> T {
        self.lumped_mass.iter().zip(a).zip(b).map(|((&m, &x), &y)| m * x * y).sum()
    }
}

/// Seven-point degree-5 rule on the reference triangle (barycentric points, weights summing to one).
const QUAD7: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    ([0.059715871789770, 0.470142064105115, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.059715871789770, 0.470142064105115], 0.132394152788506),
    ([0.470142064105115, 0.470142064105115, 0.059715871789770], 0.132394152788506),
    ([0.797426985353087, 0.101286507323456, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.797426985353087, 0.101286507323456], 0.125939180544827),
    ([0.101286507323456, 0.101286507323456, 0.797426985353087], 0.125939180544827),
];

/// `||f_h - f||_{L2}` with a degree-5 rule per element.
pub fn l2_error<T: Real>(mesh: &Mesh<T>, fh: &[T], exact: impl Fn(T, T) -> T) -> T {
    let v = mesh.vertices();
    let mut acc = T::zero();
    for (k, t) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(k);
        for (bary, w) in QUAD7 {
            let (mut x, mut y, mut val) = (T::zero(), T::zero(), T::zero());
            for c in 0..3 {
                let l = T::lit(bary[c]);
                x += l * v[t[c]][0];
                y += l * v[t[c]][1];
                val += l * fh[t[c]];
            }
            let d = val - exact(x, y);
            acc += T::lit(w) * area * d * d;
        }
    }
    acc.sqrt()
}

/// `|f_h - f|_{H1}` (gradient seminorm) with a degree-5 rule per element.
pub fn h1_seminorm_error<T: Real>(mesh: &Mesh<T>, fh: &[T], exact_grad: impl Fn(T, T) -> [T; 2]) -> T {
    let v = mesh.vertices();
    let geo = element_geometry(mesh);
    let mut acc = T::zero();
    for (t, g) in mesh.triangles().iter().zip(&geo) {
        let gh = g.gradient([fh[t[0]], fh[t[1]], fh[t[2]]]);
        for (bary, w) in QUAD7 {
            let (mut x, mut y) = (T::zero(), T::zero());
            for c in 0..3 {
                x += T::lit(bary[c]) * v[t[c]][0];
                y += T::lit(bary[c]) * v[t[c]][1];
            }
            let ge = exact_grad(x, y);
            let (dx, dy) = (gh[0] - ge[0], gh[1] - ge[1]);
            acc += T::lit(w) * g.area * (dx * dx + dy * dy);
        }
    }
    acc.sqrt()
}
