//! Geometric multigrid V-cycle for P1 stiffness matrices on nested structured
//! grids.
//!
//! Coarse operators are Galerkin products `P^T A P`, so every level inherits
//! symmetry and the constant kernel of a Neumann operator. Pre-smoothing is a
//! forward Gauss-Seidel sweep and post-smoothing its backward mirror, which
//! makes one cycle a symmetric linear map usable inside CG.

use crate::error::{Error, Result};
use crate::linalg::krylov::PreconditionerOp;
use crate::linalg::CsrMatrix;
use crate::scalar::Real;

/// Coarsening stops once a level has at most this many nodes.
const COARSEST_NODES: usize = 25;
/// Symmetric Gauss-Seidel sweeps on the coarsest level.
const COARSE_SWEEPS: usize = 20;

/// Interpolation operators between uniformly refined structured grids.
///
/// `prolongations[l]` maps level `l + 1` (coarser) to level `l`; level 0 is
/// the mesh the hierarchy was built for.
#[derive(Clone, Debug)]
pub struct GridHierarchy<T> {
    prolongations: Vec<CsrMatrix<T>>,
    restrictions: Vec<CsrMatrix<T>>,
}

impl<T: Real> GridHierarchy<T> {
    /// Hierarchy for an `nx x ny` cell grid with row-major vertices whose cells
    /// are split along the lower-left to upper-right diagonal. Halves both
    /// counts while they are even.
    pub fn structured(mut nx: usize, mut ny: usize) -> Self {
        let mut prolongations = Vec::new();
        while nx.is_multiple_of(2) && ny.is_multiple_of(2) && nx >= 2 && ny >= 2 && (nx + 1) * (ny + 1) > COARSEST_NODES
        {
            prolongations.push(prolongation(nx, ny));
            nx /= 2;
            ny /= 2;
        }
        let restrictions = prolongations.iter().map(CsrMatrix::transpose).collect();
        GridHierarchy { prolongations, restrictions }
    }

    pub fn levels(&self) -> usize {
        self.prolongations.len() + 1
    }

    pub fn prolongation(&self, level: usize) -> &CsrMatrix<T> {
        &self.prolongations[level]
    }
}

/// P1 interpolation from the `nx/2 x ny/2` grid onto the `nx x ny` grid.
/// Odd-odd fine nodes are midpoints of coarse cell diagonals.
fn prolongation<T: Real>(nx: usize, ny: usize) -> CsrMatrix<T> {
    let (cx, cy) = (nx / 2, ny / 2);
    let coarse = |i: usize, j: usize| j * (cx + 1) + i;
    let half = T::lit(0.5);
    let mut triplets = Vec::with_capacity(2 * (nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let row = j * (nx + 1) + i;
            let (ci, cj) = (i / 2, j / 2);
            match (i % 2, j % 2) {
                (0, 0) => triplets.push((row, coarse(ci, cj), T::one())),
                (1, 0) => {
                    triplets.push((row, coarse(ci, cj), half));
                    triplets.push((row, coarse(ci + 1, cj), half));
                }
                (0, 1) => {
                    triplets.push((row, coarse(ci, cj), half));
                    triplets.push((row, coarse(ci, cj + 1), half));
                }
                _ => {
                    triplets.push((row, coarse(ci, cj), half));
                    triplets.push((row, coarse(ci + 1, cj + 1), half));
                }
            }
        }
    }
    CsrMatrix::from_triplets((nx + 1) * (ny + 1), (cx + 1) * (cy + 1), &triplets)
        .expect("prolongation indices are in range")
}

#[derive(Clone, Debug)]
struct Level<T> {
    a: CsrMatrix<T>,
    inv_diag: Vec<T>,
}

impl<T: Real> Level<T> {
    fn new(a: CsrMatrix<T>) -> Self {
        let inv_diag = a.diagonal().into_iter().map(|d| if d > T::zero() { T::one() / d } else { T::zero() }).collect();
        Level { a, inv_diag }
    }

    fn relax(&self, b: &[T], x: &mut [T], i: usize) {
        let mut s = b[i];
        let mut diag = T::zero();
        for (j, v) in self.a.row(i) {
            if j == i {
                diag = v;
            } else {
                s -= v * x[j];
            }
        }
        if diag > T::zero() {
            x[i] = s * self.inv_diag[i];
        }
    }

    fn forward(&self, b: &[T], x: &mut [T]) {
        for i in 0..b.len() {
            self.relax(b, x, i);
        }
    }

    fn backward(&self, b: &[T], x: &mut [T]) {
        for i in (0..b.len()).rev() {
            self.relax(b, x, i);
        }
    }
}

/// One symmetric V(1,1) cycle per application.
#[derive(Clone, Debug)]
pub struct Multigrid<'h, T> {
    hierarchy: &'h GridHierarchy<T>,
    levels: Vec<Level<T>>,
}

impl<'h, T: Real> Multigrid<'h, T> {
    /// Builds the Galerkin coarse operators of `a` over `hierarchy`.
    pub fn new(a: &CsrMatrix<T>, hierarchy: &'h GridHierarchy<T>) -> Result<Self> {
        let n0 = hierarchy.prolongations.first().map_or(a.nrows(), CsrMatrix::nrows);
        if a.nrows() != a.ncols() || a.nrows() != n0 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} operator for a hierarchy with {n0} fine nodes",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut levels = vec![Level::new(a.clone())];
        for (p, r) in hierarchy.prolongations.iter().zip(&hierarchy.restrictions) {
            let fine = &levels.last().expect("at least one level").a;
            let coarse = r.matmul(&fine.matmul(p)?)?;
            levels.push(Level::new(coarse));
        }
        Ok(Multigrid { hierarchy, levels })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&self, l: usize, b: &[T], x: &mut [T]) {
        let level = &self.levels[l];
        if l + 1 == self.levels.len() {
            for _ in 0..COARSE_SWEEPS {
                level.forward(b, x);
                level.backward(b, x);
            }
            return;
        }
        level.forward(b, x);
        let mut r = level.a.mul_vec(x);
        r.iter_mut().zip(b).for_each(|(ri, &bi)| *ri = bi - *ri);
        let rc = self.hierarchy.restrictions[l].mul_vec(&r);
        let mut xc = vec![T::zero(); rc.len()];
        self.cycle(l + 1, &rc, &mut xc);
        let correction = self.hierarchy.prolongations[l].mul_vec(&xc);
        x.iter_mut().zip(&correction).for_each(|(xi, &ci)| *xi += ci);
        level.backward(b, x);
    }
}

impl<T: Real> PreconditionerOp<T> for Multigrid<'_, T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.iter_mut().for_each(|v| *v = T::zero());
        self.cycle(0, r, z);
    }
}
