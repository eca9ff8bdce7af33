//! Preconditioned conjugate gradient and BiCGStab.
//!
//! Both solvers accept an optional projection hook applied to the iterate
//! after every update. For singular Neumann operators the state solver uses it
//! to keep the iterate in a mean-zero complement of the kernel.

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::scalar::{axpy, dot, norm2, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
    /// Geometric V-cycle wherever the caller owns a grid hierarchy (the
    /// Neumann solvers on structured meshes); Jacobi everywhere else.
    Multigrid,
}

/// Approximate inverse `z = M^{-1} r`. CG requires the map to be symmetric
/// positive definite on the range of the operator.
pub trait PreconditionerOp<T> {
    fn apply(&self, r: &[T], z: &mut [T]);
}

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions<T> {
    /// Relative residual target `||b - A x|| <= tol ||b||`.
    pub tol: T,
    /// Iteration cap; `None` means `10 * n`.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
    /// Keep every CG iterate in [`KrylovSolution::iterates`]; diagnostic only.
    pub keep_iterates: bool,
}

impl<T: Real> Default for KrylovOptions<T> {
    fn default() -> Self {
        KrylovOptions {
            tol: T::lit(1e-10),
            max_iter: None,
            preconditioner: Preconditioner::Jacobi,
            keep_iterates: false,
        }
    }
}

impl<T: Real> KrylovOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        KrylovOptions { tol, ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct KrylovSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Final true relative residual.
    pub residual: T,
    /// Relative (recursive) residual after each iteration.
    pub history: Vec<T>,
    /// Iterates after each CG update when requested, starting with `x0`.
    pub iterates: Vec<Vec<T>>,
}

/// Projection hook applied to the iterate.
pub type Projection<'a, T> = &'a (dyn Fn(&mut [T]) + Sync);

struct Jacobi<T> {
    inv_diag: Option<Vec<T>>,
}

impl<T: Real> Jacobi<T> {
    fn new(a: &CsrMatrix<T>, kind: Preconditioner) -> Self {
        let inv_diag = match kind {
            Preconditioner::None => None,
            Preconditioner::Jacobi | Preconditioner::Multigrid => {
                Some(a.diagonal().into_iter().map(|d| if d != T::zero() { T::one() / d } else { T::one() }).collect())
            }
        };
        Jacobi { inv_diag }
    }
}

impl<T: Real> PreconditionerOp<T> for Jacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        match &self.inv_diag {
            Some(inv) => z.iter_mut().zip(r).zip(inv).for_each(|((zi, &ri), &di)| *zi = ri * di),
            None => z.copy_from_slice(r),
        }
    }
}

fn check_square<T: Real>(a: &CsrMatrix<T>, b: &[T]) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system with right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(())
}

fn residual_into<T: Real>(a: &CsrMatrix<T>, b: &[T], x: &[T], r: &mut [T]) {
    a.mul_vec_into(x, r);
    r.iter_mut().zip(b).for_each(|(ri, &bi)| *ri = bi - *ri);
}

/// Conjugate gradient with default options apart from `tol`/`maxit`.
pub fn cg_solve<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    preconditioner: Preconditioner,
    tol: T,
    max_iter: usize,
) -> Result<KrylovSolution<T>> {
    cg_solve_with(
        a,
        b,
        None,
        &KrylovOptions { tol, max_iter: Some(max_iter), preconditioner, keep_iterates: false },
        None,
    )
}

/// Preconditioned conjugate gradient for symmetric positive (semi)definite `a`.
///
/// For singular `a` the right-hand side must lie in the range of `a`.
pub fn cg_solve_with<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    x0: Option<&[T]>,
    opts: &KrylovOptions<T>,
    project: Option<Projection<'_, T>>,
) -> Result<KrylovSolution<T>> {
    cg_solve_preconditioned(a, b, x0, opts, &Jacobi::new(a, opts.preconditioner), project)
}

/// Conjugate gradient with a caller-supplied preconditioner; ignores
/// `opts.preconditioner`.
pub fn cg_solve_preconditioned<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    x0: Option<&[T]>,
    opts: &KrylovOptions<T>,
    prec: &dyn PreconditionerOp<T>,
    project: Option<Projection<'_, T>>,
) -> Result<KrylovSolution<T>> {
    check_square(a, b)?;
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm2(b);
    let mut x = x0.map_or_else(|| vec![T::zero(); n], |x0| x0.to_vec());
    if let Some(p) = project {
        p(&mut x);
    }
    if bnorm == T::zero() {
        return Ok(KrylovSolution {
            x: vec![T::zero(); n],
            iterations: 0,
            residual: T::zero(),
            history: Vec::new(),
            iterates: Vec::new(),
        });
    }
    let mut r = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut history = Vec::new();
    let mut iterates = Vec::new();
    if opts.keep_iterates {
        iterates.push(x.clone());
    }
    let mut iterations = 0;
    let mut breakdowns = 0;

    // restart from the true residual whenever the recursive one claims
    // convergence that the true residual does not confirm
    loop {
        residual_into(a, b, &x, &mut r);
        let true_rel = norm2(&r) / bnorm;
        if true_rel <= opts.tol {
            return Ok(KrylovSolution { x, iterations, residual: true_rel, history, iterates });
        }
        if iterations >= max_iter || breakdowns > 2 {
            return Err(Error::NotConverged { solver: "cg", iterations, residual: true_rel.as_f64() });
        }
        prec.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        let start = iterations;
        while iterations < max_iter {
            a.mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > T::zero()) {
                break;
            }
            let alpha = rz / pq;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &q, &mut r);
            if let Some(proj) = project {
                proj(&mut x);
            }
            iterations += 1;
            if opts.keep_iterates {
                iterates.push(x.clone());
            }
            let rel = norm2(&r) / bnorm;
            history.push(rel);
            if rel <= opts.tol {
                break;
            }
            prec.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(pi, &zi)| *pi = zi + beta * *pi);
        }
        if iterations == start {
            breakdowns += 1;
        }
    }
}

/// BiCGStab with default options apart from `tol`/`maxit`.
pub fn bicgstab_solve<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    preconditioner: Preconditioner,
    tol: T,
    max_iter: usize,
) -> Result<KrylovSolution<T>> {
    bicgstab_solve_with(
        a,
        b,
        None,
        &KrylovOptions { tol, max_iter: Some(max_iter), preconditioner, keep_iterates: false },
        None,
    )
}

/// Right-preconditioned BiCGStab for general square systems.
pub fn bicgstab_solve_with<T: Real>(
    a: &CsrMatrix<T>,
    b: &[T],
    x0: Option<&[T]>,
    opts: &KrylovOptions<T>,
    project: Option<Projection<'_, T>>,
) -> Result<KrylovSolution<T>> {
    check_square(a, b)?;
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm2(b);
    let mut x = x0.map_or_else(|| vec![T::zero(); n], |x0| x0.to_vec());
    if bnorm == T::zero() {
        return Ok(KrylovSolution {
            x: vec![T::zero(); n],
            iterations: 0,
            residual: T::zero(),
            history: Vec::new(),
            iterates: Vec::new(),
        });
    }
    let prec = Jacobi::new(a, opts.preconditioner);
    let mut r = vec![T::zero(); n];
    residual_into(a, b, &x, &mut r);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (T::one(), T::one(), T::one());
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut p_hat = vec![T::zero(); n];
    let mut s_hat = vec![T::zero(); n];
    let mut t = vec![T::zero(); n];
    let mut rel = norm2(&r) / bnorm;

    while rel > opts.tol && iterations < max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() <= T::epsilon() * T::epsilon() * bnorm * bnorm {
            // shadow residual became orthogonal: restart
            r_hat.copy_from_slice(&r);
            rho = T::one();
            alpha = T::one();
            omega = T::one();
            v.iter_mut().for_each(|vi| *vi = T::zero());
            p.iter_mut().for_each(|pi| *pi = T::zero());
            if dot(&r, &r) == T::zero() {
                break;
            }
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        prec.apply(&p, &mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == T::zero() {
            break;
        }
        alpha = rho / denom;
        // r becomes s
        axpy(-alpha, &v, &mut r);
        axpy(alpha, &p_hat, &mut x);
        iterations += 1;
        rel = norm2(&r) / bnorm;
        if rel <= opts.tol {
            if let Some(proj) = project {
                proj(&mut x);
            }
            history.push(rel);
            break;
        }
        prec.apply(&r, &mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > T::zero() { dot(&t, &r) / tt } else { T::zero() };
        axpy(omega, &s_hat, &mut x);
        axpy(-omega, &t, &mut r);
        if let Some(proj) = project {
            proj(&mut x);
        }
        rel = norm2(&r) / bnorm;
        history.push(rel);
        if omega == T::zero() {
            break;
        }
    }
    residual_into(a, b, &x, &mut r);
    let true_rel = norm2(&r) / bnorm;
    if true_rel <= opts.tol {
        Ok(KrylovSolution { x, iterations, residual: true_rel, history, iterates: Vec::new() })
    } else {
        Err(Error::NotConverged { solver: "bicgstab", iterations, residual: true_rel.as_f64() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd2() -> CsrMatrix<f64> {
        CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap()
    }

    #[test]
    fn identity_one_iteration() {
        let a = CsrMatrix::<f64>::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        let s = cg_solve(&a, &b, Preconditioner::None, 1e-12, 50).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.x, b);
        let s = bicgstab_solve(&a, &b, Preconditioner::Jacobi, 1e-12, 50).unwrap();
        for (x, y) in s.x.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_by_hand() {
        let s = cg_solve(&spd2(), &[1.0, 2.0], Preconditioner::Jacobi, 1e-12, 20).unwrap();
        assert!((s.x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((s.x[1] - 7.0 / 11.0).abs() < 1e-12);
        let t = bicgstab_solve(&spd2(), &[1.0, 2.0], Preconditioner::Jacobi, 1e-12, 20).unwrap();
        assert!((t.x[0] - s.x[0]).abs() < 1e-11 && (t.x[1] - s.x[1]).abs() < 1e-11);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let a = CsrMatrix::from_dense(&[
            vec![2.0, -1.0, 0.0, 0.0],
            vec![-1.0, 2.0, -1.0, 0.0],
            vec![0.0, -1.0, 2.0, -1.0],
            vec![0.0, 0.0, -1.0, 2.0],
        ])
        .unwrap();
        match cg_solve(&a, &[1.0, 0.0, 0.0, 1.0], Preconditioner::None, 1e-14, 1) {
            Err(Error::NotConverged { solver: "cg", iterations: 1, residual }) => assert!(residual > 1e-14),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn singular_path_laplacian() {
        // graph Laplacian of the path on 3 vertices; kernel = constants
        let a = CsrMatrix::from_dense(&[vec![1.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 1.0]]).unwrap();
        let b = [1.0, 0.0, -1.0];
        let s = cg_solve(&a, &b, Preconditioner::Jacobi, 1e-12, 30).unwrap();
        let r: Vec<f64> = a.mul_vec(&s.x).iter().zip(&b).map(|(ax, bi)| bi - ax).collect();
        assert!(norm2(&r) <= 1e-12 * norm2(&b));
        // pseudo-inverse solution is (1, 0, -1); any solution differs by a constant
        let shift = s.x[1];
        for (xi, expected) in s.x.iter().zip([1.0, 0.0, -1.0]) {
            assert!((xi - shift - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn error_energy_norm_is_nonincreasing() {
        // the A-norm of the error is what CG minimises; the residual 2-norm may oscillate
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + (i % 7) as f64));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 13) % 5) as f64 - 2.0).collect();
        let exact = cg_solve(&a, &b, Preconditioner::None, 1e-15, 500).unwrap().x;
        for kind in [Preconditioner::None, Preconditioner::Jacobi] {
            let opts = KrylovOptions { keep_iterates: true, ..KrylovOptions::with_tol(1e-12) };
            let opts = KrylovOptions { preconditioner: kind, ..opts };
            let s = cg_solve_with(&a, &b, None, &opts, None).unwrap();
            assert_eq!(s.iterates.len(), s.iterations + 1);
            let energy: Vec<f64> = s
                .iterates
                .iter()
                .map(|x| {
                    let e: Vec<f64> = x.iter().zip(&exact).map(|(p, q)| p - q).collect();
                    a.bilinear(&e, &e)
                })
                .collect();
            for w in energy.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-28, "{kind:?}: {} > {}", w[1], w[0]);
            }
        }
    }
}
