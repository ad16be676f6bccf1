//! Over-relaxed operator splitting between the affine set `{x : A x = b}` and
//! the cone product.
//!
//! The affine projection uses a Cholesky factorization of `A Aᵀ` computed
//! once; the cone projection clips negative eigenvalues of each symmetric
//! block. The penalty `ρ` only enters through `c/ρ`, so it can be rebalanced
//! without refactoring.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::standard::{smat, svec_into, svec_len, StandardForm};
use super::{BackendOutput, SolveStatus, SolverTolerances};

const ALPHA: f64 = 1.6;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 100;

struct AffineProjector {
    a: DMatrix<f64>,
    b: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl AffineProjector {
    fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Self> {
        let m = a.nrows();
        let mut gram = a * a.transpose();
        let scale = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max).max(1.0);
        for i in 0..m {
            gram[(i, i)] += 1e-13 * scale;
        }
        Some(Self {
            a: a.clone(),
            b: b.clone(),
            chol: Cholesky::new(gram)?,
        })
    }

    /// Projection of `v` and the multiplier `λ = (A Aᵀ)⁻¹ (A v − b)`.
    fn project(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let lambda = self.chol.solve(&(&self.a * v - &self.b));
        (v - self.a.transpose() * &lambda, lambda)
    }
}

fn project_cone(sf: &StandardForm, v: &mut DVector<f64>) {
    for pb in &sf.psd {
        let len = svec_len(pb.n);
        let slice = &mut v.as_mut_slice()[pb.offset..pb.offset + len];
        let m = smat(slice, pb.n);
        let eig = m.symmetric_eigen();
        if eig.eigenvalues.min() >= 0.0 {
            continue;
        }
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let proj = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        svec_into(&proj, slice);
    }
    for j in sf.lp_offset..sf.lp_offset + sf.lp_count {
        v[j] = v[j].max(0.0);
    }
}

pub(crate) fn solve(sf: &StandardForm, tol: &SolverTolerances) -> BackendOutput {
    let n = sf.nvar();
    let m = sf.a.nrows();
    let Some(proj) = AffineProjector::new(&sf.a, &sf.b) else {
        return BackendOutput {
            status: SolveStatus::NumericalFailure,
            x: vec![0.0; n],
            dual_objective: f64::NAN,
            dual_residual: f64::INFINITY,
            y: Vec::new(),
            iterations: 0,
        };
    };
    let eps_feas = 0.1 * tol.feas;
    let eps_gap = 0.1 * tol.gap;
    let b_norm = 1.0 + sf.b.norm();
    let c_norm = 1.0 + sf.c.norm();

    let mut rho = 1.0;
    let mut z = DVector::zeros(n);
    let mut u = DVector::zeros(n);
    let mut y = DVector::zeros(m);
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut dual_residual = f64::INFINITY;
    let (mut r_prim, mut r_dual) = (f64::INFINITY, f64::INFINITY);

    while iterations < tol.max_iterations {
        iterations += 1;
        let z_prev = z.clone();
        let v = &z - &u - &sf.c / rho;
        let (x, lambda) = proj.project(&v);
        let x_relaxed = &x * ALPHA + &z_prev * (1.0 - ALPHA);
        z = &x_relaxed + &u;
        project_cone(sf, &mut z);
        u += &x_relaxed - &z;

        if iterations % CHECK_EVERY == 0 {
            y = -&lambda * rho;
            r_prim = (&x - &z).norm().max((&sf.a * &z - &sf.b).norm()) / b_norm;
            r_dual = rho * (&z - &z_prev).norm() / c_norm;
            dual_residual = r_dual;
            let pobj = sf.c.dot(&z);
            let dobj = sf.b.dot(&y);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            if !pobj.is_finite() || !dobj.is_finite() {
                status = SolveStatus::NumericalFailure;
                break;
            }
            if r_prim <= eps_feas && r_dual <= eps_feas && gap <= eps_gap {
                status = SolveStatus::Optimal;
                break;
            }
        }
        if iterations % ADAPT_EVERY == 0 && r_prim.is_finite() && r_dual > 0.0 {
            let ratio = (r_prim / r_dual).sqrt();
            if !(0.2..=5.0).contains(&ratio) {
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                u *= rho / new_rho;
                rho = new_rho;
            }
        }
    }
    BackendOutput {
        status,
        x: z.as_slice().to_vec(),
        dual_objective: sf.b.dot(&y),
        dual_residual,
        y: y.as_slice().to_vec(),
        iterations,
    }
}
