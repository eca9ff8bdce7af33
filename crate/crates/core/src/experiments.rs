//! Synthetic test problems: target geometries, boundary fluxes, noisy
//! observations and recovery-quality metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_boundary_load, diffusion_coefficient, CoefficientValues, Discretization, PhaseField, ScalarField,
};
use crate::linalg::KrylovOptions;
use crate::mesh::{Bounds, Mesh};
use crate::scalar::Real;
use crate::state::{solve_neumann, ObservationKind, ObservationSpace};

/// ChaCha stream used for observation noise.
pub const NOISE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive<T> {
    Ellipse {
        center: [T; 2],
        semi_axes: [T; 2],
    },
    Circle {
        center: [T; 2],
        radius: T,
    },
    /// Simple polygon, vertices in either orientation.
    Polygon {
        vertices: Vec<[T; 2]>,
    },
}

impl<T: Real> Primitive<T> {
    /// Closed containment test.
    pub fn contains(&self, x: T, y: T) -> bool {
        match self {
            Primitive::Ellipse { center, semi_axes } => {
                let dx = (x - center[0]) / semi_axes[0];
                let dy = (y - center[1]) / semi_axes[1];
                dx * dx + dy * dy <= T::one()
            }
            Primitive::Circle { center, radius } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                dx * dx + dy * dy <= *radius * *radius
            }
            Primitive::Polygon { vertices } => {
                // even-odd crossing rule
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                    if (a[1] > y) != (b[1] > y) {
                        let xc = a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                        if x < xc {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }

    pub fn area(&self) -> T {
        match self {
            Primitive::Ellipse { semi_axes, .. } => T::PI() * semi_axes[0] * semi_axes[1],
            Primitive::Circle { radius, .. } => T::PI() * *radius * *radius,
            Primitive::Polygon { vertices } => {
                let n = vertices.len();
                let twice: T = (0..n)
                    .map(|i| {
                        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                        a[0] * b[1] - a[1] * b[0]
                    })
                    .sum();
                twice.abs() / T::lit(2.0)
            }
        }
    }

    /// `[xmin, xmax, ymin, ymax]`
    pub fn bounding_box(&self) -> [T; 4] {
        match self {
            Primitive::Ellipse { center, semi_axes } => {
                [center[0] - semi_axes[0], center[0] + semi_axes[0], center[1] - semi_axes[1], center[1] + semi_axes[1]]
            }
            Primitive::Circle { center, radius } => {
                [center[0] - *radius, center[0] + *radius, center[1] - *radius, center[1] + *radius]
            }
            Primitive::Polygon { vertices } => {
                vertices.iter().fold([T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity()], |b, p| {
                    [b[0].min(p[0]), b[1].max(p[0]), b[2].min(p[1]), b[3].max(p[1])]
                })
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Ellipse { semi_axes, .. } => semi_axes[0] > T::zero() && semi_axes[1] > T::zero(),
            Primitive::Circle { radius, .. } => *radius > T::zero(),
            Primitive::Polygon { vertices } => vertices.len() >= 3 && self.area() > T::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("degenerate primitive {self:?}")))
        }
    }
}

/// Labelled primitives over a background phase; labels are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec<T> {
    pub shapes: Vec<(Primitive<T>, usize)>,
    pub background: usize,
}

impl<T: Real> ShapeSpec<T> {
    pub fn empty(background: usize) -> Self {
        ShapeSpec { shapes: Vec::new(), background }
    }

    /// `x^2/0.07^2 + y^2/0.5^2 <= 1` in phase 1 over phase 2.
    pub fn skinny_ellipse() -> Self {
        ShapeSpec {
            shapes: vec![(Primitive::Ellipse { center: [T::zero(); 2], semi_axes: [T::lit(0.07), T::lit(0.5)] }, 1)],
            background: 2,
        }
    }

    /// Two disjoint ellipses in phase 1 over phase 2.
    pub fn two_objects() -> Self {
        ShapeSpec {
            shapes: vec![
                (
                    Primitive::Ellipse {
                        center: [T::lit(-0.35), T::lit(-0.35)],
                        semi_axes: [T::lit(0.25), T::lit(0.3)],
                    },
                    1,
                ),
                (Primitive::Ellipse { center: [T::lit(0.35), T::lit(0.35)], semi_axes: [T::lit(0.2), T::lit(0.2)] }, 1),
            ],
            background: 2,
        }
    }

    /// `x^2/0.5^2 + y^2/0.4^2 <= 1` in phase 1 over phase 2.
    pub fn ellipse() -> Self {
        ShapeSpec {
            shapes: vec![(Primitive::Ellipse { center: [T::zero(); 2], semi_axes: [T::lit(0.5), T::lit(0.4)] }, 1)],
            background: 2,
        }
    }

    /// Three-phase target: a phase-1 disc and a phase-2 square over phase 3.
    pub fn three_phase() -> Self {
        let square =
            [[0.05, -0.65], [0.6, -0.65], [0.6, -0.1], [0.05, -0.1]].map(|[x, y]| [T::lit(x), T::lit(y)]).to_vec();
        ShapeSpec {
            shapes: vec![
                (Primitive::Circle { center: [T::lit(-0.35), T::lit(0.3)], radius: T::lit(0.35) }, 1),
                (Primitive::Polygon { vertices: square }, 2),
            ],
            background: 3,
        }
    }

    pub fn validate(&self, r: usize, bounds: &Bounds<T>) -> Result<()> {
        let check = |label: usize| {
            if label == 0 || label > r {
                Err(Error::LabelOutOfRange { label, phases: r })
            } else {
                Ok(())
            }
        };
        check(self.background)?;
        for (shape, label) in &self.shapes {
            check(*label)?;
            shape.validate()?;
            let b = shape.bounding_box();
            if b[0] < bounds.xmin || b[1] > bounds.xmax || b[2] < bounds.ymin || b[3] > bounds.ymax {
                return Err(Error::InvalidParameter(format!("primitive {shape:?} leaves the domain")));
            }
        }
        Ok(())
    }

    /// Label at a point: the smallest-area primitive containing it, else the
    /// background.
    pub fn label_at(&self, x: T, y: T) -> usize {
        self.shapes
            .iter()
            .filter(|(s, _)| s.contains(x, y))
            .min_by(|a, b| a.0.area().partial_cmp(&b.0.area()).unwrap_or(std::cmp::Ordering::Equal))
            .map_or(self.background, |(_, l)| *l)
    }
}

/// Nodal indicator field of a shape specification.
pub fn rasterize_objective<T: Real>(spec: &ShapeSpec<T>, mesh: &Mesh<T>, r: usize) -> Result<PhaseField<T>> {
    spec.validate(r, &mesh.bounds())?;
    let mut values = vec![T::zero(); mesh.num_vertices() * r];
    for (k, p) in mesh.vertices().iter().enumerate() {
        values[k * r + spec.label_at(p[0], p[1]) - 1] = T::one();
    }
    PhaseField::new(r, values)
}

/// Neumann data on the boundary of a rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryFlux {
    /// `-0.5` on the left and bottom sides, `+0.5` on the right and top.
    CornerFlux,
    /// `0` on the left and right sides, `-0.5` at the bottom, `+0.5` on top.
    TopBottom,
    Zero,
}

impl BoundaryFlux {
    fn side_values(self) -> [f64; 4] {
        // left, right, bottom, top
        match self {
            BoundaryFlux::CornerFlux => [-0.5, 0.5, -0.5, 0.5],
            BoundaryFlux::TopBottom => [0.0, 0.0, -0.5, 0.5],
            BoundaryFlux::Zero => [0.0; 4],
        }
    }

    /// Flux at a boundary point; corners take the mean of the two sides.
    pub fn value<T: Real>(self, x: T, y: T, bounds: &Bounds<T>) -> Result<T> {
        let tol = T::lit(1e-12) * (T::one() + bounds.perimeter());
        let sides = [
            (x - bounds.xmin).abs() <= tol,
            (x - bounds.xmax).abs() <= tol,
            (y - bounds.ymin).abs() <= tol,
            (y - bounds.ymax).abs() <= tol,
        ];
        let vals = self.side_values();
        let (sum, count) =
            sides.iter().zip(vals).filter(|(&on, _)| on).fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
        if count == 0 {
            return Err(Error::NotOnBoundary { x: x.as_f64(), y: y.as_f64() });
        }
        Ok(T::lit(sum / count as f64))
    }

    /// Nodal field with the flux on boundary vertices and zero inside.
    pub fn field<T: Real>(self, mesh: &Mesh<T>) -> ScalarField<T> {
        let bounds = mesh.bounds();
        let mut g = vec![T::zero(); mesh.num_vertices()];
        for e in mesh.boundary_edges() {
            for &k in &e.vertices {
                let p = mesh.vertices()[k];
                g[k] = self.value(p[0], p[1], &bounds).expect("boundary edge vertex lies on the boundary");
            }
        }
        ScalarField(g)
    }
}

/// Noise-free synthetic state for the coefficient `a(u_target)` with zero
/// observation mean.
pub fn synthesize_clean<T: Real>(
    disc: &Discretization<T>,
    u_target: &PhaseField<T>,
    a: &CoefficientValues<T>,
    g: &ScalarField<T>,
    obs: &ObservationSpace<T>,
    opts: &KrylovOptions<T>,
) -> Result<ScalarField<T>> {
    u_target.check_mesh(disc.mesh())?;
    u_target.validate()?;
    let load = assemble_boundary_load(disc.mesh(), g)?;
    let k = disc.stiffness(&diffusion_coefficient(u_target, a)?)?;
    solve_neumann(disc, &k, &load, obs, T::zero(), opts, None)
}

/// `y_obs = y_target + Lambda n` with `n` i.i.d. standard normal per node
/// (boundary nodes only for boundary observations), drawn from ChaCha8 with
/// the given seed on [`NOISE_STREAM`].
#[allow(clippy::too_many_arguments)]
pub fn synthesize_observation<T: Real>(
    disc: &Discretization<T>,
    u_target: &PhaseField<T>,
    a: &CoefficientValues<T>,
    g: &ScalarField<T>,
    noise: T,
    seed: u64,
    obs: &ObservationSpace<T>,
    opts: &KrylovOptions<T>,
) -> Result<ScalarField<T>> {
    let mut y = synthesize_clean(disc, u_target, a, g, obs, opts)?;
    if noise == T::zero() {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let mesh = disc.mesh();
    let mask: Vec<bool> = match obs.kind() {
        ObservationKind::Bulk => vec![true; mesh.num_vertices()],
        ObservationKind::Boundary => {
            let mut m = vec![false; mesh.num_vertices()];
            for k in mesh.boundary_trace_indices() {
                m[k] = true;
            }
            m
        }
    };
    for (v, on) in y.values_mut().iter_mut().zip(mask) {
        if on {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += noise * T::lit(n);
        }
    }
    Ok(y)
}

/// `int |u - v|_1` of the nodal interpolant of the pointwise l1 distance.
pub fn l1_mismatch<T: Real>(disc: &Discretization<T>, u: &PhaseField<T>, v: &PhaseField<T>) -> Result<T> {
    u.check_mesh(disc.mesh())?;
    v.check_mesh(disc.mesh())?;
    if u.phases() != v.phases() {
        return Err(Error::DimensionMismatch(format!("r = {} vs r = {}", u.phases(), v.phases())));
    }
    Ok(disc
        .lumped_mass()
        .iter()
        .enumerate()
        .map(|(k, &m)| m * u.node(k).iter().zip(v.node(k)).map(|(&a, &b)| (a - b).abs()).sum::<T>())
        .sum())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub count: usize,
    /// Vertex counts, largest first.
    pub sizes: Vec<usize>,
}

/// Connected components of `{u_phase > threshold}` in the vertex graph;
/// `phase` is 1-based.
pub fn connected_components<T: Real>(
    mesh: &Mesh<T>,
    u: &PhaseField<T>,
    phase: usize,
    threshold: T,
) -> Result<Components> {
    u.check_mesh(mesh)?;
    if phase == 0 || phase > u.phases() {
        return Err(Error::LabelOutOfRange { label: phase, phases: u.phases() });
    }
    let active: Vec<bool> = (0..u.num_nodes()).map(|k| u.node(k)[phase - 1] > threshold).collect();
    let neighbors = mesh.vertex_neighbors();
    let mut seen = vec![false; active.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..active.len() {
        if !active[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(k) = stack.pop() {
            size += 1;
            for &j in &neighbors[k] {
                if active[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(Components { count: sizes.len(), sizes })
}
