//! Pure Neumann state, adjoint and sensitivity solves under a mean-value
//! constraint, and the generalised Poincaré constant of the observation space.

use crate::error::{Error, Result};
use crate::fem::{diffusion_coefficient, CoefficientValues, Discretization, PhaseField, ScalarField};
use crate::linalg::{cg_solve_preconditioned, cg_solve_with, CsrMatrix, KrylovOptions, Multigrid, Preconditioner};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ObservationKind {
    /// `L2(Omega)` with the consistent mass matrix.
    #[default]
    Bulk,
    /// `L2(dOmega)` with the boundary mass matrix.
    Boundary,
}

/// Observation inner product `(.,.)_O` together with its mean functional.
#[derive(Clone, Debug)]
pub struct ObservationSpace<T> {
    kind: ObservationKind,
    mass: CsrMatrix<T>,
    /// `M_O 1`, so that `(f, 1)_O = weights . f`.
    weights: Vec<T>,
    /// `||1||_O^2`
    one_norm_sq: T,
}

impl<T: Real> ObservationSpace<T> {
    pub fn new(disc: &Discretization<T>, kind: ObservationKind) -> Self {
        let mass = match kind {
            ObservationKind::Bulk => disc.mass().clone(),
            ObservationKind::Boundary => disc.boundary_mass().clone(),
        };
        let weights = mass.row_sums();
        let one_norm_sq = weights.iter().copied().sum();
        ObservationSpace { kind, mass, weights, one_norm_sq }
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn mass(&self) -> &CsrMatrix<T> {
        &self.mass
    }

    /// `||1||_O^2`, the domain area or the boundary length.
    pub fn one_norm_sq(&self) -> T {
        self.one_norm_sq
    }

    /// `(f, 1)_O`
    pub fn integral(&self, f: &[T]) -> T {
        self.weights.iter().zip(f).map(|(&w, &v)| w * v).sum()
    }

    /// `(f, 1)_O / ||1||_O^2`
    pub fn mean_value(&self, f: &[T]) -> T {
        self.integral(f) / self.one_norm_sq
    }

    /// `(f, g)_O`
    pub fn inner(&self, f: &[T], g: &[T]) -> T {
        self.mass.bilinear(f, g)
    }

    /// Shifts `f` by a constant so that its mean equals `target`.
    pub fn shift_to_mean(&self, f: &mut [T], target: T) {
        let c = target - self.mean_value(f);
        f.iter_mut().for_each(|v| *v += c);
    }
}

/// `(f, 1)_O / ||1||_O^2`
pub fn mean_value<T: Real>(f: &ScalarField<T>, obs: &ObservationSpace<T>) -> T {
    obs.mean_value(f.values())
}

/// Solves `K x = rhs` for a stiffness matrix with kernel spanned by constants
/// and returns the solution with `M_O(x) = mean_target`.
///
/// The Euclidean mean of `rhs` is removed first; callers check compatibility.
/// [`Preconditioner::Multigrid`] uses the hierarchy of `disc` when it has one.
pub fn solve_neumann<T: Real>(
    disc: &Discretization<T>,
    k: &CsrMatrix<T>,
    rhs: &[T],
    obs: &ObservationSpace<T>,
    mean_target: T,
    opts: &KrylovOptions<T>,
    x0: Option<&[T]>,
) -> Result<ScalarField<T>> {
    let n = rhs.len();
    let shift = rhs.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let b: Vec<T> = rhs.iter().map(|&v| v - shift).collect();
    let project = |x: &mut [T]| obs.shift_to_mean(x, T::zero());
    let mut x = match (opts.preconditioner, disc.hierarchy()) {
        (Preconditioner::Multigrid, Some(h)) => {
            let mg = Multigrid::new(k, h)?;
            cg_solve_preconditioned(k, &b, x0, opts, &mg, Some(&project))?.x
        }
        _ => cg_solve_with(k, &b, x0, opts, Some(&project))?.x,
    };
    obs.shift_to_mean(&mut x, mean_target);
    Ok(ScalarField(x))
}

/// Discrete state `int a(u) grad y . grad chi = int_{dOmega} g chi` with
/// `M_O(y) = mean_target`.
#[allow(clippy::too_many_arguments)]
pub fn solve_state<T: Real>(
    disc: &Discretization<T>,
    u: &PhaseField<T>,
    a: &CoefficientValues<T>,
    g: &ScalarField<T>,
    mean_target: T,
    obs: &ObservationSpace<T>,
    opts: &KrylovOptions<T>,
    x0: Option<&[T]>,
) -> Result<ScalarField<T>> {
    u.check_mesh(disc.mesh())?;
    let load = crate::fem::assemble_boundary_load(disc.mesh(), g)?;
    let k = disc.stiffness(&diffusion_coefficient(u, a)?)?;
    solve_neumann(disc, &k, &load, obs, mean_target, opts, x0)
}

/// Right-hand side `M_O (y - y_obs)` of the adjoint problem; rejects data with
/// `|(y - y_obs, 1)_O| > 1e-9`.
pub fn adjoint_rhs<T: Real>(y: &[T], y_obs: &[T], obs: &ObservationSpace<T>) -> Result<Vec<T>> {
    if y.len() != y_obs.len() {
        return Err(Error::DimensionMismatch(format!("state {} vs observation {}", y.len(), y_obs.len())));
    }
    let diff: Vec<T> = y.iter().zip(y_obs).map(|(&a, &b)| a - b).collect();
    let mean = obs.integral(&diff);
    if !(mean.abs() <= T::lit(1e-9)) {
        return Err(Error::IncompatibleAdjoint { mean: mean.as_f64() });
    }
    Ok(obs.mass().mul_vec(&diff))
}

/// Discrete adjoint `int a(u) grad p . grad chi = (y - y_obs, chi)_O` with
/// `M_O(p) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint<T: Real>(
    disc: &Discretization<T>,
    u: &PhaseField<T>,
    a: &CoefficientValues<T>,
    y: &ScalarField<T>,
    y_obs: &ScalarField<T>,
    obs: &ObservationSpace<T>,
    opts: &KrylovOptions<T>,
    x0: Option<&[T]>,
) -> Result<ScalarField<T>> {
    let rhs = adjoint_rhs(y.values(), y_obs.values(), obs)?;
    let k = disc.stiffness(&diffusion_coefficient(u, a)?)?;
    solve_neumann(disc, &k, &rhs, obs, T::zero(), opts, x0)
}

/// Linearised state `int a(u) grad yt . grad eta = -int a(w) grad y . grad eta`
/// for a direction `w` with zero nodal component sums; `M_O(yt) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_sensitivity<T: Real>(
    disc: &Discretization<T>,
    u: &PhaseField<T>,
    a: &CoefficientValues<T>,
    w: &PhaseField<T>,
    y: &ScalarField<T>,
    obs: &ObservationSpace<T>,
    opts: &KrylovOptions<T>,
) -> Result<ScalarField<T>> {
    w.check_mesh(disc.mesh())?;
    w.check_tangent(T::lit(1e-10))?;
    let aw = diffusion_coefficient(w, a)?;
    let rhs: Vec<T> = disc.weighted_stiffness(aw.values()).mul_vec(y.values()).into_iter().map(|v| -v).collect();
    let k = disc.stiffness(&diffusion_coefficient(u, a)?)?;
    solve_neumann(disc, &k, &rhs, obs, T::zero(), opts, None)
}

/// Smallest nonzero eigenvalue of `K_1 eta = lambda M_O eta` on the
/// `M_O`-mean-zero subspace, by inverse iteration to `1e-6` relative change.
pub fn estimate_poincare_constant<T: Real>(disc: &Discretization<T>, obs: &ObservationSpace<T>) -> Result<T> {
    const MAX_ITER: usize = 500;
    let opts = KrylovOptions { preconditioner: Preconditioner::Multigrid, ..KrylovOptions::with_tol(T::lit(1e-11)) };
    let k = disc.unit_stiffness();
    // generic start with components along the lowest modes in both directions
    let mut x: Vec<T> =
        disc.mesh().vertices().iter().map(|p| p[0] + T::lit(0.37) * p[1] + T::lit(0.11) * p[0] * p[1]).collect();
    obs.shift_to_mean(&mut x, T::zero());
    let mut lambda = T::infinity();
    let mut change = T::infinity();
    for _ in 0..MAX_ITER {
        let rhs = obs.mass().mul_vec(&x);
        let z = solve_neumann(disc, k, &rhs, obs, T::zero(), &opts, Some(&x))?.0;
        let mz = obs.inner(&z, &z);
        if !(mz > T::zero()) {
            return Err(Error::EigenNotConverged { iterations: 0, change: f64::NAN });
        }
        let next = k.bilinear(&z, &z) / mz;
        let scale = T::one() / mz.sqrt();
        x = z.into_iter().map(|v| v * scale).collect();
        change = ((next - lambda) / next).abs();
        lambda = next;
        if change <= T::lit(1e-6) {
            return Ok(lambda);
        }
    }
    Err(Error::EigenNotConverged { iterations: MAX_ITER, change: change.as_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{h1_seminorm_error, l2_error};
    use crate::mesh::{build_structured_mesh, Side};

    fn disc(n: usize) -> Discretization<f64> {
        Discretization::new(build_structured_mesh(-1.0, 1.0, -1.0, 1.0, n).unwrap())
    }

    fn tight() -> KrylovOptions<f64> {
        KrylovOptions::with_tol(1e-12)
    }

    /// Nodal flux `a * dy*/dnu` for `y* = x^2 - y^2`; corners average the two sides.
    fn harmonic_flux(d: &Discretization<f64>, a1: f64) -> ScalarField<f64> {
        let mut g = vec![0.0; d.num_nodes()];
        let mut count = vec![0usize; d.num_nodes()];
        let v = d.mesh().vertices();
        for e in d.mesh().boundary_edges() {
            for &k in &e.vertices {
                let [x, y] = v[k];
                let val = match e.side {
                    Side::Left => -2.0 * x,
                    Side::Right => 2.0 * x,
                    Side::Bottom => 2.0 * y,
                    Side::Top => -2.0 * y,
                };
                g[k] += a1 * val;
                count[k] += 1;
            }
        }
        ScalarField(g.into_iter().zip(count).map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 }).collect())
    }

    #[test]
    fn mean_value_examples() {
        let d = disc(16);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        assert!((obs.one_norm_sq() - 4.0).abs() < 1e-12);
        let c = ScalarField::constant(d.num_nodes(), 2.5);
        assert!((mean_value(&c, &obs) - 2.5).abs() < 1e-13);
        let x = ScalarField::interpolate(d.mesh(), |x, _| x);
        assert!(mean_value(&x, &obs).abs() < 1e-14);
        let x2 = ScalarField::interpolate(d.mesh(), |x, _| x * x);
        let h = 1.0 / 16.0;
        assert!((mean_value(&x2, &obs) - 1.0 / 3.0).abs() < 2.0 * h * h);
        let b = ObservationSpace::new(&d, ObservationKind::Boundary);
        assert!((b.one_norm_sq() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_flux_gives_constant_state() {
        let d = disc(4);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let u = PhaseField::constant(d.num_nodes(), &[0.3, 0.7]).unwrap();
        let y = solve_state(&d, &u, &a, &ScalarField::zeros(d.num_nodes()), 0.75, &obs, &tight(), None).unwrap();
        assert!(y.values().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn manufactured_harmonic_second_order() {
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let d = disc(n);
            let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
            let u = PhaseField::pure(d.num_nodes(), 2, 1).unwrap();
            let g = harmonic_flux(&d, 3.0);
            let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &tight(), None).unwrap();
            assert!(mean_value(&y, &obs).abs() < 1e-10);
            let l2 = l2_error(d.mesh(), y.values(), |x, y| x * x - y * y);
            let h1 = h1_seminorm_error(d.mesh(), y.values(), |x, y| [2.0 * x, -2.0 * y]);
            errs.push((l2, h1));
        }
        for w in errs.windows(2) {
            let eoc_l2 = (w[0].0 / w[1].0).log2();
            let eoc_h1 = (w[0].1 / w[1].1).log2();
            assert!((1.8..=2.2).contains(&eoc_l2), "L2 EOC {eoc_l2}");
            assert!((0.8..=1.2).contains(&eoc_h1), "H1 EOC {eoc_h1}");
        }
    }

    #[test]
    fn state_is_linear_in_flux() {
        let d = disc(8);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let u = PhaseField::from_first_component(
            &d.mesh().vertices().iter().map(|p| if p[0] < 0.1 { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        );
        let g = harmonic_flux(&d, 1.0);
        let g3 = ScalarField(g.values().iter().map(|v| 3.0 * v).collect());
        let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &tight(), None).unwrap();
        let y3 = solve_state(&d, &u, &a, &g3, 0.4, &obs, &tight(), None).unwrap();
        for (&p, &q) in y.values().iter().zip(y3.values()) {
            assert!((3.0 * p + 0.4 - q).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_incompatible_flux() {
        let d = disc(2);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![1.0, 1.0]).unwrap();
        let u = PhaseField::pure(d.num_nodes(), 2, 1).unwrap();
        let g = ScalarField::constant(d.num_nodes(), 1.0);
        let r = solve_state(&d, &u, &a, &g, 0.0, &obs, &tight(), None);
        assert!(matches!(r, Err(Error::IncompatibleFlux { .. })));
    }

    #[test]
    fn adjoint_of_cosine() {
        // -p'' = cos(pi x) with Neumann ends: p = cos(pi x) / pi^2
        let a = CoefficientValues::new(vec![1.0, 1.0]).unwrap();
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let d = disc(n);
            let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
            let u = PhaseField::pure(d.num_nodes(), 2, 1).unwrap();
            let mut diff = ScalarField::interpolate(d.mesh(), |x, _| (std::f64::consts::PI * x).cos());
            obs.shift_to_mean(diff.values_mut(), 0.0);
            let zero = ScalarField::zeros(d.num_nodes());
            let p = solve_adjoint(&d, &u, &a, &diff, &zero, &obs, &tight(), None).unwrap();
            assert!(mean_value(&p, &obs).abs() < 1e-10);
            let pi2 = std::f64::consts::PI.powi(2);
            errs.push(l2_error(d.mesh(), p.values(), |x, _| (std::f64::consts::PI * x).cos() / pi2));
        }
        for w in errs.windows(2) {
            let eoc = (w[0] / w[1]).log2();
            assert!(eoc > 1.7, "EOC {eoc}");
        }
    }

    #[test]
    fn adjoint_trivial_cases() {
        let d = disc(4);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let u = PhaseField::constant(d.num_nodes(), &[0.5, 0.5]).unwrap();
        let y = ScalarField::interpolate(d.mesh(), |x, y| x + y * y);
        let p = solve_adjoint(&d, &u, &a, &y, &y, &obs, &tight(), None).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        let yobs = ScalarField::zeros(d.num_nodes());
        let err = solve_adjoint(&d, &u, &a, &y, &yobs, &obs, &tight(), None);
        assert!(matches!(err, Err(Error::IncompatibleAdjoint { .. })));
        // shifting both by a constant leaves p unchanged
        let mut ym = y.clone();
        obs.shift_to_mean(ym.values_mut(), 0.0);
        let p1 = solve_adjoint(&d, &u, &a, &ym, &yobs, &obs, &tight(), None).unwrap();
        let ys = ScalarField(ym.values().iter().map(|v| v + 5.0).collect());
        let yos = ScalarField::constant(d.num_nodes(), 5.0);
        let p2 = solve_adjoint(&d, &u, &a, &ys, &yos, &obs, &tight(), None).unwrap();
        for (x, y) in p1.values().iter().zip(p2.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        let d = disc(8);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let nv = d.num_nodes();
        let u1: Vec<f64> = d.mesh().vertices().iter().map(|p| 0.5 + 0.3 * p[0] * p[1]).collect();
        let u = PhaseField::from_first_component(&u1);
        let w1: Vec<f64> = d.mesh().vertices().iter().map(|p| 0.2 * (p[0] - p[1])).collect();
        let w = PhaseField::new(2, w1.iter().flat_map(|&v| [v, -v]).collect()).unwrap();
        let g = harmonic_flux(&d, 1.0);
        let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &tight(), None).unwrap();
        let yt = solve_sensitivity(&d, &u, &a, &w, &y, &obs, &tight()).unwrap();
        assert!(mean_value(&yt, &obs).abs() < 1e-10);
        let mut prev = f64::INFINITY;
        for t in [1e-2, 1e-3, 1e-4] {
            let yp = solve_state(&d, &u.offset(t, &w), &a, &g, 0.0, &obs, &tight(), None).unwrap();
            let err: f64 =
                (0..nv).map(|k| ((yp.values()[k] - y.values()[k]) / t - yt.values()[k]).powi(2)).sum::<f64>().sqrt();
            assert!(err < prev * 0.2, "FD remainder {err} did not shrink linearly");
            prev = err;
        }
        let zero = u.zeros_like();
        let y0 = solve_sensitivity(&d, &u, &a, &zero, &y, &obs, &tight()).unwrap();
        assert!(y0.values().iter().all(|&v| v == 0.0));
        let bad = PhaseField::constant(nv, &[0.1, 0.0]).unwrap();
        assert!(matches!(
            solve_sensitivity(&d, &u, &a, &bad, &y, &obs, &tight()),
            Err(Error::NonTangentDirection { .. })
        ));
    }

    #[test]
    fn sensitivity_rhs_at_barycenter() {
        // with constant a(u) the weak form is an assembled functional identity
        let d = disc(6);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let u = PhaseField::constant(d.num_nodes(), &[0.5, 0.5]).unwrap();
        let g = harmonic_flux(&d, 1.0);
        let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &tight(), None).unwrap();
        let w1: Vec<f64> = d.mesh().vertices().iter().map(|p| 0.1 * p[0]).collect();
        let w = PhaseField::new(2, w1.iter().flat_map(|&v| [v, -v]).collect()).unwrap();
        let yt = solve_sensitivity(&d, &u, &a, &w, &y, &obs, &tight()).unwrap();
        let lhs = d.unit_stiffness().mul_vec(yt.values());
        let aw: Vec<f64> = w1.iter().map(|v| 2.5 * v).collect();
        let rhs = d.weighted_stiffness(&aw).mul_vec(y.values());
        for (l, r) in lhs.iter().zip(rhs) {
            assert!((1.75 * l + r).abs() < 1e-9);
        }
    }

    #[test]
    fn poincare_constant_bulk() {
        let d = disc(32);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let c = estimate_poincare_constant(&d, &obs).unwrap();
        let exact = (std::f64::consts::PI / 2.0).powi(2);
        assert!(c > 0.0);
        assert!(((c - exact) / exact).abs() < 0.02, "c = {c}");
        let b = ObservationSpace::new(&d, ObservationKind::Boundary);
        assert!(estimate_poincare_constant(&d, &b).unwrap() > 0.0);
    }
}
