//! Convex obstacle subproblem of one semi-implicit step.
//!
//! For nodal `v` in the simplex at every vertex the step minimises
//!
//! ```text
//! E(v) = sum_i [ 1/2 (v_i - u_i)' M_L (v_i - u_i) - tau a_i l' v_i
//!              + tau sigma ( eps/2 v_i' K1 v_i - 1/eps (M u_i)' v_i ) ]
//! ```
//!
//! with `l = L(grad y . grad p)`. The Hessian `M_L + tau sigma eps K1` is the
//! same for every component and dominates `M_L`, so `E` is strongly convex in
//! the lumped metric and the minimiser is unique.

use crate::error::{Error, Result};
use crate::fem::{CoefficientValues, Discretization, PhaseField, ScalarField};
use crate::scalar::Real;

/// Euclidean projection onto `{x : x_i >= 0, sum x_i = 1}`.
pub fn project_simplex<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

/// In-place Euclidean projection onto the simplex (sort-based threshold).
pub fn project_simplex_in_place<T: Real>(v: &mut [T]) {
    let r = v.len();
    if r == 0 {
        return;
    }
    if r == 2 {
        let x = ((v[0] - v[1] + T::one()) / T::lit(2.0)).max(T::zero()).min(T::one());
        v[0] = x;
        v[1] = T::one() - x;
        return;
    }
    let mut stack = [T::zero(); 16];
    let mut heap;
    let sorted: &mut [T] = if r <= stack.len() {
        stack[..r].copy_from_slice(v);
        &mut stack[..r]
    } else {
        heap = v.to_vec();
        &mut heap
    };
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - T::one()) / T::from_usize_lossy(j + 1);
        if s - t > T::zero() {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(T::zero());
    }
}

/// Data of one subproblem.
#[derive(Clone, Debug)]
pub struct StepProblem<'a, T> {
    pub u_prev: &'a PhaseField<T>,
    pub y: &'a ScalarField<T>,
    pub p: &'a ScalarField<T>,
    pub tau: T,
    pub sigma: T,
    pub epsilon: T,
    pub a: &'a CoefficientValues<T>,
    /// Natural-residual target; `None` means `1e-10 (1 + ||u_prev||_{M_L})`.
    pub tol: Option<T>,
    pub max_iter: usize,
}

impl<'a, T: Real> StepProblem<'a, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        u_prev: &'a PhaseField<T>,
        y: &'a ScalarField<T>,
        p: &'a ScalarField<T>,
        tau: T,
        sigma: T,
        epsilon: T,
        a: &'a CoefficientValues<T>,
    ) -> Self {
        StepProblem { u_prev, y, p, tau, sigma, epsilon, a, tol: None, max_iter: 20_000 }
    }

    fn validate(&self, disc: &Discretization<T>) -> Result<()> {
        if !(self.tau >= T::zero() && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be non-negative, got {}", self.tau)));
        }
        crate::objective::check_model(self.sigma, self.epsilon)?;
        self.u_prev.check_mesh(disc.mesh())?;
        self.y.check_mesh(disc.mesh())?;
        self.p.check_mesh(disc.mesh())?;
        if self.u_prev.phases() != self.a.phases() {
            return Err(Error::DimensionMismatch(format!(
                "r = {} vs {} coefficients",
                self.u_prev.phases(),
                self.a.phases()
            )));
        }
        Ok(())
    }

    fn tolerance(&self, disc: &Discretization<T>) -> T {
        self.tol.unwrap_or_else(|| {
            let norm: T = (0..self.u_prev.num_nodes())
                .map(|k| disc.lumped_mass()[k] * self.u_prev.node(k).iter().map(|&x| x * x).sum::<T>())
                .sum::<T>()
                .sqrt();
            T::lit(1e-10) * (T::one() + norm)
        })
    }
}

#[derive(Clone, Debug)]
pub struct StepSolution<T> {
    pub u: PhaseField<T>,
    pub iterations: usize,
    /// Final natural residual `||v - P(v - M_L^{-1} grad E(v))||_{M_L}`.
    pub residual: T,
    pub energy: T,
}

/// Component-major quadratic model `E(v) = sum_i 1/2 v_i' H v_i - b_i' v_i + c`.
struct Quadratic<'d, T> {
    disc: &'d Discretization<T>,
    /// `tau sigma eps`
    kappa: T,
    b: Vec<Vec<T>>,
    constant: T,
}

impl<'d, T: Real> Quadratic<'d, T> {
    fn new(disc: &'d Discretization<T>, prob: &StepProblem<'_, T>) -> Self {
        let load = disc.gradient_product_load(prob.y.values(), prob.p.values());
        let ml = disc.lumped_mass();
        let kappa = prob.tau * prob.sigma * prob.epsilon;
        let explicit = prob.tau * prob.sigma / prob.epsilon;
        let mut b = Vec::with_capacity(prob.u_prev.phases());
        let mut constant = T::zero();
        for i in 0..prob.u_prev.phases() {
            let ui = prob.u_prev.component(i);
            let mu = disc.mass().mul_vec(&ui);
            let ai = prob.a.values()[i];
            b.push((0..ui.len()).map(|k| ml[k] * ui[k] + prob.tau * ai * load[k] + explicit * mu[k]).collect());
            constant += ui.iter().zip(ml).map(|(&x, &m)| m * x * x).sum::<T>() / T::lit(2.0);
        }
        Quadratic { disc, kappa, b, constant }
    }

    fn h_mul(&self, v: &[T], out: &mut [T]) {
        self.disc.unit_stiffness().mul_vec_into(v, out);
        for ((o, &m), &x) in out.iter_mut().zip(self.disc.lumped_mass()).zip(v) {
            *o = m * x + self.kappa * *o;
        }
    }

    /// Energy and gradient `H v_i - b_i` per component.
    fn eval(&self, v: &[Vec<T>], grad: &mut [Vec<T>]) -> T {
        let mut e = self.constant;
        for ((vi, gi), bi) in v.iter().zip(grad.iter_mut()).zip(&self.b) {
            self.h_mul(vi, gi);
            for k in 0..vi.len() {
                e += vi[k] * (gi[k] / T::lit(2.0) - bi[k]);
                gi[k] -= bi[k];
            }
        }
        e
    }
}

fn to_components<T: Real>(u: &PhaseField<T>) -> Vec<Vec<T>> {
    (0..u.phases()).map(|i| u.component(i)).collect()
}

fn from_components<T: Real>(c: &[Vec<T>]) -> PhaseField<T> {
    let (r, n) = (c.len(), c[0].len());
    let mut values = Vec::with_capacity(r * n);
    for k in 0..n {
        values.extend(c.iter().map(|ci| ci[k]));
    }
    PhaseField::new(r, values).expect("component count at least two")
}

/// `out = P(v - step M_L^{-1} g)` nodewise.
fn projected_step<T: Real>(ml: &[T], v: &[Vec<T>], g: &[Vec<T>], step: T, out: &mut [Vec<T>], node: &mut [T]) {
    let r = v.len();
    for (k, &m) in ml.iter().enumerate() {
        for i in 0..r {
            node[i] = v[i][k] - step * g[i][k] / m;
        }
        project_simplex_in_place(node);
        for i in 0..r {
            out[i][k] = node[i];
        }
    }
}

fn lumped_dist<T: Real>(ml: &[T], a: &[Vec<T>], b: &[Vec<T>]) -> T {
    let mut acc = T::zero();
    for (ai, bi) in a.iter().zip(b) {
        for k in 0..ml.len() {
            let d = ai[k] - bi[k];
            acc += ml[k] * d * d;
        }
    }
    acc.sqrt()
}

/// Power-iteration estimate of the largest eigenvalue of `M_L^{-1} K1`.
pub fn stiffness_spectral_estimate<T: Real>(disc: &Discretization<T>, iterations: usize) -> T {
    let ml = disc.lumped_mass();
    let k = disc.unit_stiffness();
    // alternating start has weight on the high-frequency end of the spectrum
    let mut x: Vec<T> = (0..ml.len()).map(|i| if i % 2 == 0 { T::one() } else { -T::one() }).collect();
    let mut kx = vec![T::zero(); ml.len()];
    let mut lambda = T::zero();
    for _ in 0..iterations.max(1) {
        k.mul_vec_into(&x, &mut kx);
        let num: T = x.iter().zip(&kx).map(|(&a, &b)| a * b).sum();
        let den: T = x.iter().zip(ml).map(|(&a, &m)| m * a * a).sum();
        if !(den > T::zero()) {
            break;
        }
        lambda = num / den;
        let mut next: Vec<T> = kx.iter().zip(ml).map(|(&a, &m)| a / m).collect();
        let norm = next.iter().fold(T::zero(), |s, &v| s.max(v.abs()));
        if !(norm > T::zero()) {
            break;
        }
        next.iter_mut().for_each(|v| *v /= norm);
        x = next;
    }
    lambda
}

/// Monotone accelerated projected gradient in the lumped metric.
///
/// The step is `1/L` with `L = 1 + tau sigma eps lambda_max(M_L^{-1} K1)`
/// from 20 power iterations, doubled whenever the quadratic upper bound
/// fails on the current step.
pub fn solve_step_subproblem<T: Real>(disc: &Discretization<T>, prob: &StepProblem<'_, T>) -> Result<StepSolution<T>> {
    prob.validate(disc)?;
    let tol = prob.tolerance(disc);
    let q = Quadratic::new(disc, prob);
    let ml = disc.lumped_mass();
    let r = prob.u_prev.phases();
    let n = prob.u_prev.num_nodes();
    let mut lip = T::one() + q.kappa * disc.stiffness_spectral_radius();

    let mut x = to_components(prob.u_prev);
    let mut grad = vec![vec![T::zero(); n]; r];
    let mut e_x = q.eval(&x, &mut grad);
    let mut trial = vec![vec![T::zero(); n]; r];
    let mut node = vec![T::zero(); r];

    let residual_at = |x: &[Vec<T>], grad: &[Vec<T>], trial: &mut [Vec<T>], node: &mut [T]| {
        projected_step(ml, x, grad, T::one(), trial, node);
        lumped_dist(ml, x, trial)
    };

    let mut res = residual_at(&x, &grad, &mut trial, &mut node);
    if res <= tol {
        return Ok(StepSolution { u: prob.u_prev.clone(), iterations: 0, residual: res, energy: e_x });
    }
    // project the start so every later iterate is feasible
    for k in 0..n {
        for i in 0..r {
            node[i] = x[i][k];
        }
        project_simplex_in_place(&mut node);
        for i in 0..r {
            x[i][k] = node[i];
        }
    }
    e_x = q.eval(&x, &mut grad);

    let mut x_prev = x.clone();
    let mut yk = x.clone();
    let mut grad_y = grad.clone();
    let mut z = x.clone();
    let mut hd = vec![T::zero(); n];
    let mut t = T::one();
    for it in 1..=prob.max_iter {
        q.eval(&yk, &mut grad_y);
        loop {
            projected_step(ml, &yk, &grad_y, T::one() / lip, &mut z, &mut node);
            // quadratic model: sufficient decrease iff d'Hd <= L d'M_L d
            let mut dhd = T::zero();
            let mut dmd = T::zero();
            for i in 0..r {
                let d: Vec<T> = z[i].iter().zip(&yk[i]).map(|(&a, &b)| a - b).collect();
                q.h_mul(&d, &mut hd);
                for k in 0..n {
                    dhd += d[k] * hd[k];
                    dmd += ml[k] * d[k] * d[k];
                }
            }
            if dhd <= lip * dmd * (T::one() + T::lit(1e-12)) || dmd == T::zero() {
                break;
            }
            lip *= T::lit(2.0);
        }
        // E(z) - E(x) from the exact quadratic expansion at x, which stays
        // accurate where a difference of two energy values would cancel
        let mut de = T::zero();
        for i in 0..r {
            let d: Vec<T> = z[i].iter().zip(&x[i]).map(|(&a, &b)| a - b).collect();
            q.h_mul(&d, &mut hd);
            for k in 0..n {
                de += d[k] * (grad[i][k] + hd[k] / T::lit(2.0));
            }
        }
        let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
        std::mem::swap(&mut x_prev, &mut x);
        let accepted_z = de <= T::zero();
        if accepted_z {
            x.clone_from(&z);
            e_x = q.eval(&x, &mut grad);
        } else {
            x.clone_from(&x_prev);
        }
        // y = x + (t/t')(z - x) + ((t-1)/t')(x - x_prev)
        let c1 = t / t_next;
        let c2 = (t - T::one()) / t_next;
        for i in 0..r {
            for k in 0..n {
                yk[i][k] = x[i][k] + c1 * (z[i][k] - x[i][k]) + c2 * (x[i][k] - x_prev[i][k]);
            }
        }
        t = t_next;
        res = residual_at(&x, &grad, &mut trial, &mut node);
        if res <= tol {
            return Ok(StepSolution { u: from_components(&x), iterations: it, residual: res, energy: e_x });
        }
    }
    Err(Error::SubproblemNotConverged { iterations: prob.max_iter, residual: res.as_f64() })
}

/// Energy `E(v)` of the subproblem at a given field.
pub fn step_energy<T: Real>(disc: &Discretization<T>, prob: &StepProblem<'_, T>, v: &PhaseField<T>) -> Result<T> {
    prob.validate(disc)?;
    v.check_mesh(disc.mesh())?;
    let q = Quadratic::new(disc, prob);
    let comps = to_components(v);
    let mut grad = vec![vec![T::zero(); v.num_nodes()]; v.phases()];
    Ok(q.eval(&comps, &mut grad))
}

/// Two-phase subproblem in the scalar `v = u_1`, solved by projected
/// Gauss-Seidel on `1/2 v' A v - c' v` over `[0, 1]^Nv` with
/// `A = 2 (M_L + tau sigma eps K1)` and
/// `c = 2 M_L u_1 + tau (a_1 - a_2) l + tau sigma / eps (2 M u_1 - M_L 1)`.
pub fn solve_step_scalar<T: Real>(disc: &Discretization<T>, prob: &StepProblem<'_, T>) -> Result<StepSolution<T>> {
    prob.validate(disc)?;
    if prob.u_prev.phases() != 2 {
        return Err(Error::InvalidParameter(format!("scalar reduction needs r = 2, got {}", prob.u_prev.phases())));
    }
    let tol = prob.tolerance(disc);
    let ml = disc.lumped_mass();
    let k1 = disc.unit_stiffness();
    let two = T::lit(2.0);
    let kappa = prob.tau * prob.sigma * prob.epsilon;
    let explicit = prob.tau * prob.sigma / prob.epsilon;
    let load = disc.gradient_product_load(prob.y.values(), prob.p.values());
    let u1 = prob.u_prev.component(0);
    let mu = disc.mass().mul_vec(&u1);
    let da = prob.a.values()[0] - prob.a.values()[1];
    let n = u1.len();
    let c: Vec<T> =
        (0..n).map(|k| two * ml[k] * u1[k] + prob.tau * da * load[k] + explicit * (two * mu[k] - ml[k])).collect();
    let diag: Vec<T> = (0..n).map(|k| two * (ml[k] + kappa * k1.get(k, k))).collect();
    let mut v: Vec<T> = u1.iter().map(|&x| x.max(T::zero()).min(T::one())).collect();
    let mut av = vec![T::zero(); n];

    let residual = |v: &[T], av: &mut [T]| -> T {
        k1.mul_vec_into(v, av);
        let mut acc = T::zero();
        for k in 0..n {
            let g = two * (ml[k] * v[k] + kappa * av[k]) - c[k];
            let w = two * ml[k];
            let d = v[k] - (v[k] - g / w).max(T::zero()).min(T::one());
            acc += w * d * d;
        }
        acc.sqrt()
    };

    let mut res = residual(&v, &mut av);
    let mut sweeps = 0;
    while res > tol {
        if sweeps >= prob.max_iter {
            return Err(Error::SubproblemNotConverged { iterations: sweeps, residual: res.as_f64() });
        }
        for k in 0..n {
            let mut off = T::zero();
            for (j, kj) in k1.row(k) {
                if j != k {
                    off += two * kappa * kj * v[j];
                }
            }
            v[k] = ((c[k] - off) / diag[k]).max(T::zero()).min(T::one());
        }
        sweeps += 1;
        res = residual(&v, &mut av);
    }
    let u = PhaseField::from_first_component(&v);
    let energy = step_energy(disc, prob, &u)?;
    Ok(StepSolution { u, iterations: sweeps, residual: res, energy })
}
