//! Discrete objective, reduced gradient and stationarity residual.

use crate::error::{Error, Result};
use crate::fem::{CoefficientValues, Discretization, PhaseField, ScalarField};
use crate::scalar::Real;
use crate::state::ObservationSpace;
use crate::vi_step::project_simplex;

/// Fidelity and (already `sigma`-weighted) regularisation parts of `J`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveBreakdown<T> {
    pub j_fid: T,
    pub j_reg: T,
    pub j_total: T,
}

pub(crate) fn check_model<T: Real>(sigma: T, epsilon: T) -> Result<()> {
    if !(epsilon > T::zero() && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(sigma >= T::zero() && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be non-negative, got {sigma}")));
    }
    Ok(())
}

/// `F_eps(u) = (eps/2) sum_i u_i' K1 u_i + (1/(2 eps)) (|Omega| - sum_i u_i' M u_i)`
pub fn relaxed_perimeter<T: Real>(disc: &Discretization<T>, u: &PhaseField<T>, epsilon: T) -> Result<T> {
    check_model(T::zero(), epsilon)?;
    u.check_mesh(disc.mesh())?;
    let mut grad = T::zero();
    let mut mass = T::zero();
    for i in 0..u.phases() {
        let ui = u.component(i);
        grad += disc.unit_stiffness().bilinear(&ui, &ui);
        mass += disc.mass().bilinear(&ui, &ui);
    }
    let area = disc.mesh().area();
    let two = T::lit(2.0);
    Ok(epsilon / two * grad + (area - mass) / (two * epsilon))
}

/// Two-phase regulariser in the scalar variable `v = u_1`:
/// `sigma [eps v' K1 v + (1/eps) int v (1 - v)]`.
pub fn scalar_regularization<T: Real>(disc: &Discretization<T>, v: &[T], sigma: T, epsilon: T) -> Result<T> {
    check_model(sigma, epsilon)?;
    let grad = disc.unit_stiffness().bilinear(v, v);
    let linear: T = disc.lumped_mass().iter().zip(v).map(|(&w, &x)| w * x).sum();
    let quad = disc.mass().bilinear(v, v);
    Ok(sigma * (epsilon * grad + (linear - quad) / epsilon))
}

/// `J = 1/2 ||y - y_obs||_O^2 + sigma F_eps(u)`
pub fn evaluate_objective<T: Real>(
    disc: &Discretization<T>,
    obs: &ObservationSpace<T>,
    u: &PhaseField<T>,
    y: &ScalarField<T>,
    y_obs: &ScalarField<T>,
    sigma: T,
    epsilon: T,
) -> Result<ObjectiveBreakdown<T>> {
    check_model(sigma, epsilon)?;
    y.check_mesh(disc.mesh())?;
    y_obs.check_mesh(disc.mesh())?;
    let diff: Vec<T> = y.values().iter().zip(y_obs.values()).map(|(&a, &b)| a - b).collect();
    let j_fid = obs.inner(&diff, &diff) / T::lit(2.0);
    let j_reg = sigma * relaxed_perimeter(disc, u, epsilon)?;
    Ok(ObjectiveBreakdown { j_fid, j_reg, j_total: j_fid + j_reg })
}

/// Nodal representation `G` of `J'(u)`, so that `J'(u) w = sum_k G_k . w_k`:
/// `G_i = -a_i L(grad y . grad p) + sigma eps K1 u_i - (sigma/eps) M u_i`.
#[allow(clippy::too_many_arguments)]
pub fn reduced_gradient<T: Real>(
    disc: &Discretization<T>,
    u: &PhaseField<T>,
    y: &ScalarField<T>,
    p: &ScalarField<T>,
    sigma: T,
    epsilon: T,
    a: &CoefficientValues<T>,
) -> Result<PhaseField<T>> {
    check_model(sigma, epsilon)?;
    u.check_mesh(disc.mesh())?;
    y.check_mesh(disc.mesh())?;
    p.check_mesh(disc.mesh())?;
    if u.phases() != a.phases() {
        return Err(Error::DimensionMismatch(format!("r = {} vs {} coefficients", u.phases(), a.phases())));
    }
    let load = disc.gradient_product_load(y.values(), p.values());
    let r = u.phases();
    let mut g = u.zeros_like();
    for i in 0..r {
        let ui = u.component(i);
        let ku = disc.unit_stiffness().mul_vec(&ui);
        let mu = disc.mass().mul_vec(&ui);
        let ai = a.values()[i];
        for k in 0..u.num_nodes() {
            g.node_mut(k)[i] = -ai * load[k] + sigma * epsilon * ku[k] - sigma / epsilon * mu[k];
        }
    }
    Ok(g)
}

/// `sum_k G_k . w_k`
pub fn pairing<T: Real>(g: &PhaseField<T>, w: &PhaseField<T>) -> T {
    g.values().iter().zip(w.values()).map(|(&a, &b)| a * b).sum()
}

/// `||u - P(u - step M_L^{-1} G)||_{M_L} / step` with `P` the nodal simplex
/// projection; zero exactly at nodal stationary points.
pub fn criticality_residual<T: Real>(
    disc: &Discretization<T>,
    u: &PhaseField<T>,
    g: &PhaseField<T>,
    step: T,
) -> Result<T> {
    if !(step > T::zero()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    u.check_mesh(disc.mesh())?;
    let r = u.phases();
    let mut trial = vec![T::zero(); r];
    let mut acc = T::zero();
    for (k, &m) in disc.lumped_mass().iter().enumerate() {
        for i in 0..r {
            trial[i] = u.node(k)[i] - step * g.node(k)[i] / m;
        }
        let proj = project_simplex(&trial);
        let d2: T = u.node(k).iter().zip(&proj).map(|(&a, &b)| (a - b) * (a - b)).sum();
        acc += m * d2;
    }
    Ok(acc.sqrt() / step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::KrylovOptions;
    use crate::mesh::build_structured_mesh;
    use crate::state::{solve_adjoint, solve_sensitivity, solve_state, ObservationKind};

    fn disc(n: usize) -> Discretization<f64> {
        Discretization::new(build_structured_mesh(-1.0, 1.0, -1.0, 1.0, n).unwrap())
    }

    #[test]
    fn pure_phase_has_zero_objective() {
        let d = disc(4);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let u = PhaseField::pure(d.num_nodes(), 3, 2).unwrap();
        let y = ScalarField::interpolate(d.mesh(), |x, _| x);
        let b = evaluate_objective(&d, &obs, &u, &y, &y, 1e-3, 0.1).unwrap();
        assert_eq!(b.j_fid, 0.0);
        assert!(b.j_reg.abs() < 1e-13);
    }

    #[test]
    fn barycenter_regularization() {
        let d = disc(4);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let y = ScalarField::zeros(d.num_nodes());
        for r in [2usize, 3, 4] {
            let u = PhaseField::constant(d.num_nodes(), &vec![1.0 / r as f64; r]).unwrap();
            let (sigma, eps) = (0.01, 0.05);
            let b = evaluate_objective(&d, &obs, &u, &y, &y, sigma, eps).unwrap();
            let expected = sigma / (2.0 * eps) * 4.0 * (1.0 - 1.0 / r as f64);
            assert!((b.j_reg - expected).abs() < 1e-12 * expected);
        }
        let u = PhaseField::constant(d.num_nodes(), &[0.5, 0.5]).unwrap();
        let yo = ScalarField::constant(d.num_nodes(), 1.0);
        let b = evaluate_objective(&d, &obs, &u, &y, &yo, 0.0, 0.05).unwrap();
        assert_eq!(b.j_total, b.j_fid);
        assert!((b.j_fid - 2.0).abs() < 1e-12);
        assert!(evaluate_objective(&d, &obs, &u, &y, &yo, 1.0, 0.0).is_err());
    }

    #[test]
    fn scalar_reduction_matches_vector_form() {
        let d = disc(8);
        let v: Vec<f64> =
            d.mesh().vertices().iter().map(|p| (0.5 + 0.5 * (3.0 * p[0]).sin() * p[1]).clamp(0.0, 1.0)).collect();
        let u = PhaseField::from_first_component(&v);
        let vec_form = 1e-3 * relaxed_perimeter(&d, &u, 0.07).unwrap();
        let scal = scalar_regularization(&d, &v, 1e-3, 0.07).unwrap();
        assert!((vec_form - scal).abs() < 1e-12);
    }

    #[allow(clippy::type_complexity)]
    fn setup(
        n: usize,
    ) -> (Discretization<f64>, ObservationSpace<f64>, CoefficientValues<f64>, ScalarField<f64>, ScalarField<f64>) {
        let d = disc(n);
        let obs = ObservationSpace::new(&d, ObservationKind::Bulk);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let g = ScalarField::interpolate(
            d.mesh(),
            |x, y| if x.abs() == 1.0 { 0.3 * x } else { 0.0 } + if y.abs() == 1.0 { 0.2 * y * x } else { 0.0 },
        );
        let mut yobs = ScalarField::interpolate(d.mesh(), |x, y| 0.2 * x - 0.1 * y * y);
        obs.shift_to_mean(yobs.values_mut(), 0.0);
        (d, obs, a, g, yobs)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (d, obs, a, g, yobs) = setup(8);
        let opts = KrylovOptions::with_tol(1e-13);
        let v: Vec<f64> = d.mesh().vertices().iter().map(|p| 0.5 + 0.3 * (p[0] * 2.0).sin() * p[1]).collect();
        let u = PhaseField::from_first_component(&v);
        let (sigma, eps) = (1e-2, 0.1);
        let j = |u: &PhaseField<f64>| {
            let y = solve_state(&d, u, &a, &g, obs.mean_value(yobs.values()), &obs, &opts, None).unwrap();
            evaluate_objective(&d, &obs, u, &y, &yobs, sigma, eps).unwrap().j_total
        };
        let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &opts, None).unwrap();
        let p = solve_adjoint(&d, &u, &a, &y, &yobs, &obs, &opts, None).unwrap();
        let gr = reduced_gradient(&d, &u, &y, &p, sigma, eps, &a).unwrap();
        let w1: Vec<f64> = d.mesh().vertices().iter().map(|p| 0.1 * (p[0] + 0.5 * p[1] * p[1])).collect();
        let w = PhaseField::new(2, w1.iter().flat_map(|&x| [x, -x]).collect()).unwrap();
        let exact = pairing(&gr, &w);
        let t = 1e-4;
        let fd = (j(&u.offset(t, &w)) - j(&u.offset(-t, &w))) / (2.0 * t);
        assert!(((fd - exact) / exact).abs() < 1e-6, "fd {fd} vs {exact}");

        // adjoint pairing agrees with the sensitivity route
        let yt = solve_sensitivity(&d, &u, &a, &w, &y, &obs, &opts).unwrap();
        let diff: Vec<f64> = y.values().iter().zip(yobs.values()).map(|(a, b)| a - b).collect();
        let via_sens = obs.inner(&diff, yt.values());
        let gfid = reduced_gradient(&d, &u, &y, &p, 0.0, eps, &a).unwrap();
        let via_adj = pairing(&gfid, &w);
        assert!(((via_sens - via_adj) / via_adj).abs() < 1e-8);
    }

    #[test]
    fn gradient_is_linear_in_direction() {
        let (d, obs, a, g, yobs) = setup(4);
        let opts = KrylovOptions::default();
        let u = PhaseField::constant(d.num_nodes(), &[0.4, 0.6]).unwrap();
        let y = solve_state(&d, &u, &a, &g, 0.0, &obs, &opts, None).unwrap();
        let p = solve_adjoint(&d, &u, &a, &y, &yobs, &obs, &opts, None).unwrap();
        let gr = reduced_gradient(&d, &u, &y, &p, 1e-3, 0.1, &a).unwrap();
        let w =
            PhaseField::new(2, (0..2 * d.num_nodes()).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.01).collect()).unwrap();
        let vals: Vec<f64> = [0.0, 1.0, 2.0].iter().map(|&s| pairing(&gr, &u.zeros_like().offset(s, &w))).collect();
        assert!((vals[2] - 2.0 * vals[1] + vals[0]).abs() < 1e-14);
    }

    #[test]
    fn fidelity_part_vanishes_without_adjoint() {
        let d = disc(4);
        let a = CoefficientValues::new(vec![3.0, 0.5]).unwrap();
        let u = PhaseField::pure(d.num_nodes(), 2, 1).unwrap();
        let y = ScalarField::interpolate(d.mesh(), |x, y| x * y);
        let p = ScalarField::zeros(d.num_nodes());
        let gr = reduced_gradient(&d, &u, &y, &p, 0.0, 0.1, &a).unwrap();
        assert!(gr.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn criticality_cases() {
        let d = disc(2);
        let nv = d.num_nodes();
        let u = PhaseField::constant(nv, &[0.5, 0.5]).unwrap();
        assert_eq!(criticality_residual(&d, &u, &u.zeros_like(), 0.1).unwrap(), 0.0);
        let mut g = u.zeros_like();
        g.node_mut(4).copy_from_slice(&[1.0, -1.0]);
        assert!(criticality_residual(&d, &u, &g, 0.1).unwrap() > 0.0);
        // at the corner e_1, a gradient favouring phase 1 pushes outside the simplex
        let corner = PhaseField::pure(nv, 2, 1).unwrap();
        let mut push = corner.zeros_like();
        push.node_mut(0).copy_from_slice(&[-1.0, 1.0]);
        assert_eq!(criticality_residual(&d, &corner, &push, 0.1).unwrap(), 0.0);
        assert!(criticality_residual(&d, &corner, &push, 0.0).is_err());
    }
}
