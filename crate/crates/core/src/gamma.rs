//! Recovery sequences for the relaxed perimeter and their sharp-interface
//! limit.
//!
//! A partition of the plane into regions `E_1..E_r` is described through
//! analytic signed distances `h_i` (negative inside `E_i`). The recovery
//! sequence places the sine profile on the outer layer `0 <= h_i <= eps pi` of
//! each region, and its relaxed perimeter tends to `(pi/8) sum_i |dE_i|` as
//! `eps -> 0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{ElementGeometry, PhaseField};
use crate::mesh::{build_structured_mesh, Bounds, Mesh};
use crate::scalar::Real;

/// Planar region with an analytic signed distance to its boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum Region<T> {
    /// `{x : normal . x <= offset}`; `normal` need not be normalised.
    HalfPlane {
        normal: [T; 2],
        offset: T,
    },
    Disc {
        center: [T; 2],
        radius: T,
    },
    /// Simple polygon, either orientation.
    Polygon {
        vertices: Vec<[T; 2]>,
    },
    /// Points whose polar angle about `apex` lies in `[from, to]` (radians,
    /// `to - from` in `(0, 2 pi)`).
    Wedge {
        apex: [T; 2],
        from: T,
        to: T,
    },
    Complement(Box<Region<T>>),
}

fn dist<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len_sq = d[0] * d[0] + d[1] * d[1];
    let t = if len_sq > T::zero() {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len_sq).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

fn ray_distance<T: Real>(p: [T; 2], apex: [T; 2], angle: T) -> T {
    let d = [angle.cos(), angle.sin()];
    let rel = [p[0] - apex[0], p[1] - apex[1]];
    let s = rel[0] * d[0] + rel[1] * d[1];
    if s <= T::zero() {
        dist(p, apex)
    } else {
        (rel[0] * d[1] - rel[1] * d[0]).abs()
    }
}

/// Even-odd rule.
fn polygon_contains<T: Real>(vertices: &[[T; 2]], p: [T; 2]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    for k in 0..n {
        let a = vertices[k];
        let b = vertices[(k + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Parameter range of `origin + t dir` inside the rectangle.
fn clip_to_box<T: Real>(origin: [T; 2], dir: [T; 2], b: &Bounds<T>, mut lo: T, mut hi: T) -> Option<(T, T)> {
    for (o, d, min, max) in [(origin[0], dir[0], b.xmin, b.xmax), (origin[1], dir[1], b.ymin, b.ymax)] {
        if d == T::zero() {
            if o < min || o > max {
                return None;
            }
        } else {
            let (t0, t1) = ((min - o) / d, (max - o) / d);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    (hi > lo).then_some((lo, hi))
}

fn inside_box<T: Real>(p: [T; 2], b: &Bounds<T>) -> bool {
    p[0] >= b.xmin && p[0] <= b.xmax && p[1] >= b.ymin && p[1] <= b.ymax
}

impl<T: Real> Region<T> {
    pub fn complement(self) -> Self {
        Region::Complement(Box::new(self))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            Region::HalfPlane { normal, offset } => {
                if !(normal[0].hypot(normal[1]) > T::zero()) || !offset.is_finite() {
                    return bad("half-plane needs a non-zero normal and a finite offset".into());
                }
            }
            Region::Disc { radius, .. } => {
                if !(*radius > T::zero()) {
                    return bad(format!("disc radius must be positive, got {radius}"));
                }
            }
            Region::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return bad(format!("polygon needs at least 3 vertices, got {}", vertices.len()));
                }
            }
            Region::Wedge { from, to, .. } => {
                let width = *to - *from;
                if !(width > T::zero() && width < T::TAU()) {
                    return bad(format!("wedge opening {width} outside (0, 2 pi)"));
                }
            }
            Region::Complement(inner) => inner.validate()?,
        }
        Ok(())
    }

    pub fn contains(&self, p: [T; 2]) -> bool {
        self.signed_distance(p) < T::zero()
    }

    /// `-dist(p, dE)` inside, `+dist(p, dE)` outside.
    pub fn signed_distance(&self, p: [T; 2]) -> T {
        match self {
            Region::HalfPlane { normal, offset } => {
                let len = normal[0].hypot(normal[1]);
                (normal[0] * p[0] + normal[1] * p[1] - *offset) / len
            }
            Region::Disc { center, radius } => dist(p, *center) - *radius,
            Region::Polygon { vertices } => {
                let n = vertices.len();
                let d =
                    (0..n).map(|k| segment_distance(p, vertices[k], vertices[(k + 1) % n])).fold(T::infinity(), T::min);
                if polygon_contains(vertices, p) {
                    -d
                } else {
                    d
                }
            }
            Region::Wedge { apex, from, to } => {
                let d = ray_distance(p, *apex, *from).min(ray_distance(p, *apex, *to));
                let angle = (p[1] - apex[1]).atan2(p[0] - apex[0]);
                let tau = T::TAU();
                let rel = angle - *from;
                let rel = rel - (rel / tau).floor() * tau;
                if rel < *to - *from && d > T::zero() {
                    -d
                } else {
                    d
                }
            }
            Region::Complement(inner) => -inner.signed_distance(p),
        }
    }

    /// Length of the region boundary inside the rectangle. Discs and polygons
    /// must lie in the closed rectangle and wedge apexes inside it.
    pub fn interface_length(&self, b: &Bounds<T>) -> Result<T> {
        let outside = || Err(Error::InvalidParameter("interface leaves the domain".into()));
        match self {
            Region::HalfPlane { normal, offset } => {
                let len = normal[0].hypot(normal[1]);
                let n = [normal[0] / len, normal[1] / len];
                let c = *offset / len;
                let origin = [c * n[0], c * n[1]];
                let dir = [-n[1], n[0]];
                Ok(clip_to_box(origin, dir, b, T::neg_infinity(), T::infinity()).map_or(T::zero(), |(lo, hi)| hi - lo))
            }
            Region::Disc { center, radius } => {
                let r = *radius;
                if center[0] - r < b.xmin || center[0] + r > b.xmax || center[1] - r < b.ymin || center[1] + r > b.ymax
                {
                    return outside();
                }
                Ok(T::TAU() * r)
            }
            Region::Polygon { vertices } => {
                if !vertices.iter().all(|&v| inside_box(v, b)) {
                    return outside();
                }
                let n = vertices.len();
                Ok((0..n).map(|k| dist(vertices[k], vertices[(k + 1) % n])).sum())
            }
            Region::Wedge { apex, from, to } => {
                if !inside_box(*apex, b) {
                    return outside();
                }
                let ray = |angle: T| {
                    clip_to_box(*apex, [angle.cos(), angle.sin()], b, T::zero(), T::infinity())
                        .map_or(T::zero(), |(_, hi)| hi)
                };
                Ok(ray(*from) + ray(*to))
            }
            Region::Complement(inner) => inner.interface_length(b),
        }
    }
}

/// Ordered regions `E_1..E_r` covering the plane up to their boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec<T> {
    regions: Vec<Region<T>>,
}

impl<T: Real> PartitionSpec<T> {
    pub fn new(regions: Vec<Region<T>>) -> Result<Self> {
        if regions.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a partition needs at least 2 regions, got {}",
                regions.len()
            )));
        }
        for r in &regions {
            r.validate()?;
        }
        Ok(PartitionSpec { regions })
    }

    /// `E_1 = {x <= x0}`, `E_2` its complement.
    pub fn flat_interface(x0: T) -> Self {
        let left = Region::HalfPlane { normal: [T::one(), T::zero()], offset: x0 };
        PartitionSpec { regions: vec![left.clone(), left.complement()] }
    }

    /// `E_1` a disc, `E_2` its complement.
    pub fn circle(center: [T; 2], radius: T) -> Result<Self> {
        let disc = Region::Disc { center, radius };
        Self::new(vec![disc.clone(), disc.complement()])
    }

    /// Three 120 degree sectors about `apex`; the first spans polar angles
    /// `[pi/2, 7 pi/6]`.
    pub fn triple_junction(apex: [T; 2]) -> Self {
        let third = T::TAU() / T::lit(3.0);
        let start = T::FRAC_PI_2();
        let regions = (0..3)
            .map(|k| {
                let from = start + third * T::from_usize_lossy(k);
                Region::Wedge { apex, from, to: from + third }
            })
            .collect();
        PartitionSpec { regions }
    }

    pub fn phases(&self) -> usize {
        self.regions.len()
    }

    pub fn regions(&self) -> &[Region<T>] {
        &self.regions
    }

    /// Rejects mesh nodes claimed by no region or strictly inside two.
    pub fn check_partition(&self, mesh: &Mesh<T>) -> Result<()> {
        let tol = T::lit(1e-12);
        for (k, &p) in mesh.vertices().iter().enumerate() {
            let h: Vec<T> = self.regions.iter().map(|r| r.signed_distance(p)).collect();
            let strictly = h.iter().filter(|&&v| v < -tol).count();
            let claimed = h.iter().filter(|&&v| v <= tol).count();
            if strictly > 1 || claimed == 0 {
                return Err(Error::InvalidParameter(format!(
                    "regions do not partition the domain at node {k} ({}, {})",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    /// `(pi/8) sum_i |dE_i|` within the rectangle.
    pub fn sharp_limit(&self, b: &Bounds<T>) -> Result<T> {
        let mut total = T::zero();
        for r in &self.regions {
            total += r.interface_length(b)?;
        }
        Ok(T::PI() / T::lit(8.0) * total)
    }
}

/// Transition profile across a layer of width `eps pi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Profile {
    /// `(1 + sin(t/eps - pi/2)) / 2`, the optimal profile.
    #[default]
    Sine,
    /// `t / (eps pi)`; used to check that the sine profile is cheaper.
    Linear,
}

impl Profile {
    pub fn eval<T: Real>(self, t: T, epsilon: T) -> T {
        let width = epsilon * T::PI();
        if t <= T::zero() {
            return T::zero();
        }
        if t >= width {
            return T::one();
        }
        match self {
            Profile::Sine => T::lit(0.5) * (T::one() + (t / epsilon - T::FRAC_PI_2()).sin()),
            Profile::Linear => t / width,
        }
    }
}

/// Sine profile: `0` for `t <= 0`, `1` for `t >= eps pi`.
pub fn optimal_profile<T: Real>(t: T, epsilon: T) -> Result<T> {
    check_epsilon(epsilon)?;
    Ok(Profile::Sine.eval(t, epsilon))
}

fn check_epsilon<T: Real>(epsilon: T) -> Result<()> {
    if epsilon > T::zero() && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")))
    }
}

/// Writes `chi(t_1..t_{r-1})` into `out`; components sum to one exactly up to
/// rounding because each is a telescoping product.
fn chi<T: Real>(phi: &[T], out: &mut [T]) {
    let r = out.len();
    let mut prefix = T::one();
    for i in 0..r - 1 {
        out[i] = prefix * (T::one() - phi[i]);
        prefix *= phi[i];
    }
    out[r - 1] = prefix;
}

/// Nodal recovery sequence with the sine profile.
pub fn recovery_sequence<T: Real>(spec: &PartitionSpec<T>, epsilon: T, mesh: &Mesh<T>) -> Result<PhaseField<T>> {
    recovery_sequence_with(spec, epsilon, mesh, Profile::Sine)
}

pub fn recovery_sequence_with<T: Real>(
    spec: &PartitionSpec<T>,
    epsilon: T,
    mesh: &Mesh<T>,
    profile: Profile,
) -> Result<PhaseField<T>> {
    check_epsilon(epsilon)?;
    let r = spec.phases();
    let layers = &spec.regions[..r - 1];
    let values: Vec<T> = mesh
        .vertices()
        .par_iter()
        .flat_map_iter(|&p| {
            let phi: Vec<T> = layers.iter().map(|reg| profile.eval(reg.signed_distance(p), epsilon)).collect();
            let mut node = vec![T::zero(); r];
            chi(&phi, &mut node);
            node
        })
        .collect();
    PhaseField::new(r, values)
}

/// `F_eps(u) = int eps/2 |grad u|^2 + (1 - |u|^2) / (2 eps)`, evaluated element
/// by element without assembling matrices.
pub fn evaluate_relaxed_perimeter<T: Real>(u: &PhaseField<T>, epsilon: T, mesh: &Mesh<T>) -> Result<T> {
    check_epsilon(epsilon)?;
    u.check_mesh(mesh)?;
    let r = u.phases();
    let verts = mesh.vertices();
    let mut grad = T::zero();
    let mut mass = T::zero();
    for t in mesh.triangles() {
        let geo = ElementGeometry::new([verts[t[0]], verts[t[1]], verts[t[2]]]);
        for i in 0..r {
            let v = [u.node(t[0])[i], u.node(t[1])[i], u.node(t[2])[i]];
            let g = geo.gradient(v);
            grad += geo.area * (g[0] * g[0] + g[1] * g[1]);
            let sum = v[0] + v[1] + v[2];
            mass += geo.area / T::lit(12.0) * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + sum * sum);
        }
    }
    let two = T::lit(2.0);
    Ok(epsilon / two * grad + (mesh.area() - mass) / (two * epsilon))
}

/// One sweep point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow<T> {
    pub epsilon: T,
    /// Cells per unit length of the mesh used.
    pub mesh_n: usize,
    pub f_eps: T,
    pub f_sharp: T,
    /// `|F_eps - F| / F`
    pub gap: T,
}

pub const SWEEP_CSV_HEADER: &str = "eps,F_eps,F_sharp,gap";

/// Cells per unit length so that the cell diagonal is at most `ratio * eps`.
pub fn cells_for_resolution<T: Real>(epsilon: T, ratio: T) -> Result<usize> {
    check_epsilon(epsilon)?;
    if !(ratio > T::zero()) {
        return Err(Error::InvalidParameter(format!("resolution ratio must be positive, got {ratio}")));
    }
    let n = (T::SQRT_2() / (ratio * epsilon)).ceil();
    n.to_usize().ok_or_else(|| Error::InvalidParameter(format!("mesh size {n} not representable")))
}

/// Evaluates the recovery sequence on structured meshes of `bounds` with
/// `h <= ratio * eps` for every `eps`; `ratio` above `1/8` is rejected.
/// Points are independent and computed in parallel; the row order follows
/// `epsilons`.
pub fn gamma_sweep<T: Real>(
    spec: &PartitionSpec<T>,
    epsilons: &[T],
    bounds: &Bounds<T>,
    ratio: T,
) -> Result<Vec<SweepRow<T>>> {
    if ratio > T::lit(0.125) {
        let eps = epsilons.iter().copied().fold(T::infinity(), T::min);
        return Err(Error::UnderResolved { h: (ratio * eps).as_f64(), limit: (eps / T::lit(8.0)).as_f64() });
    }
    let f_sharp = spec.sharp_limit(bounds)?;
    epsilons
        .par_iter()
        .map(|&eps| {
            let n = cells_for_resolution(eps, ratio)?;
            let mesh = build_structured_mesh(bounds.xmin, bounds.xmax, bounds.ymin, bounds.ymax, n)?;
            let limit = eps / T::lit(8.0);
            if mesh.h() > limit {
                return Err(Error::UnderResolved { h: mesh.h().as_f64(), limit: limit.as_f64() });
            }
            let u = recovery_sequence(spec, eps, &mesh)?;
            let f_eps = evaluate_relaxed_perimeter(&u, eps, &mesh)?;
            Ok(SweepRow { epsilon: eps, mesh_n: n, f_eps, f_sharp, gap: (f_eps - f_sharp).abs() / f_sharp })
        })
        .collect()
}

pub fn write_sweep_csv<T: Real, W: std::io::Write>(rows: &[SweepRow<T>], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for row in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e}",
            row.epsilon.as_f64(),
            row.f_eps.as_f64(),
            row.f_sharp.as_f64(),
            row.gap.as_f64()
        )?;
    }
    Ok(())
}
