//! Infeasible-start primal-dual interior-point method with Nesterov–Todd
//! scaling and Mehrotra predictor-corrector steps.
//!
//! Primal: `min c·x  s.t. A x = b, x ∈ K`; dual: `max b·y  s.t. c − Aᵀy = z ∈ K*`,
//! with the free coordinates of `x` turning into equality rows `A_fᵀ y = c_f`.
//! The Newton system is reduced to the Schur complement `M = A W Aᵀ`, bordered
//! by the free columns.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::standard::{smat, svec_into, svec_len, StandardForm};
use super::{BackendOutput, SolveStatus, SolverTolerances};

/// Iterations without progress on the best merit before giving up.
const STALL_LIMIT: usize = 8;
const MAX_STEPS: usize = 200;
const STEP_FRACTION: f64 = 0.98;
const REFINE_STEPS: usize = 2;

/// Nesterov–Todd scaling of one PSD block: `W = R Rᵀ`, `Rᵀ Z R = R⁻¹ X R⁻ᵀ = Λ`.
struct NtScaling {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

impl NtScaling {
    fn new(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Self> {
        let l1 = Cholesky::new(x.clone())?.l();
        let l2 = Cholesky::new(z.clone())?.l();
        let svd = (l2.transpose() * &l1).svd(true, true);
        let u = svd.u?;
        let v = svd.v_t?.transpose();
        let lambda = svd.singular_values;
        if lambda.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return None;
        }
        let n = lambda.len();
        let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|s| 1.0 / s.sqrt()));
        let r = &l1 * &v * &inv_sqrt;
        let r_inv = &inv_sqrt * u.transpose() * l2.transpose();
        let w = &r * r.transpose();
        debug_assert_eq!(r.nrows(), n);
        Some(Self { r, r_inv, w, lambda })
    }

    fn scaled_x(&self, dx: &DMatrix<f64>) -> DMatrix<f64> {
        &self.r_inv * dx * self.r_inv.transpose()
    }

    fn scaled_z(&self, dz: &DMatrix<f64>) -> DMatrix<f64> {
        self.r.transpose() * dz * &self.r
    }

    /// Largest `α` keeping `Λ + α D` PSD for a scaled direction `D`.
    fn max_step(&self, scaled_dir: &DMatrix<f64>) -> f64 {
        let inv_sqrt = self.lambda.map(|s| 1.0 / s.sqrt());
        let n = inv_sqrt.len();
        let m = DMatrix::from_fn(n, n, |i, j| {
            0.5 * (scaled_dir[(i, j)] + scaled_dir[(j, i)]) * inv_sqrt[i] * inv_sqrt[j]
        });
        let lmin = m.symmetric_eigenvalues().min();
        if lmin < 0.0 {
            -1.0 / lmin
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone)]
struct Iterate {
    x_psd: Vec<DMatrix<f64>>,
    z_psd: Vec<DMatrix<f64>>,
    x_lp: DVector<f64>,
    z_lp: DVector<f64>,
    x_free: DVector<f64>,
    y: DVector<f64>,
}

struct Direction {
    x_psd: Vec<DMatrix<f64>>,
    z_psd: Vec<DMatrix<f64>>,
    x_lp: DVector<f64>,
    z_lp: DVector<f64>,
    x_free: DVector<f64>,
    y: DVector<f64>,
}

struct Problem<'a> {
    sf: &'a StandardForm,
    /// `A` rows restricted to each PSD block, as symmetric matrices.
    a_psd: Vec<Vec<DMatrix<f64>>>,
    c_psd: Vec<DMatrix<f64>>,
    a_lp: DMatrix<f64>,
    a_free: DMatrix<f64>,
    c_lp: DVector<f64>,
    c_free: DVector<f64>,
}

impl<'a> Problem<'a> {
    fn new(sf: &'a StandardForm) -> Self {
        let m = sf.a.nrows();
        let a_psd = sf
            .psd
            .iter()
            .map(|pb| {
                (0..m)
                    .map(|i| {
                        let row: Vec<f64> = (0..svec_len(pb.n)).map(|k| sf.a[(i, pb.offset + k)]).collect();
                        smat(&row, pb.n)
                    })
                    .collect()
            })
            .collect();
        let c_psd = sf
            .psd
            .iter()
            .map(|pb| smat(&sf.c.as_slice()[pb.offset..pb.offset + svec_len(pb.n)], pb.n))
            .collect();
        let a_lp = sf.a.columns(sf.lp_offset, sf.lp_count).into_owned();
        let a_free = sf.a.columns(sf.free_offset, sf.free_count).into_owned();
        let c_lp = sf.c.rows(sf.lp_offset, sf.lp_count).into_owned();
        let c_free = sf.c.rows(sf.free_offset, sf.free_count).into_owned();
        Self {
            sf,
            a_psd,
            c_psd,
            a_lp,
            a_free,
            c_lp,
            c_free,
        }
    }

    fn m(&self) -> usize {
        self.sf.a.nrows()
    }

    /// `Σ_p <A_i^p, X_p> + A_lp x_lp` (no free part).
    fn apply_cone(&self, x_psd: &[DMatrix<f64>], x_lp: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a_lp * x_lp;
        for (p, xp) in x_psd.iter().enumerate() {
            for i in 0..self.m() {
                out[i] += self.a_psd[p][i].dot(xp);
            }
        }
        out
    }

    fn adjoint_psd(&self, p: usize, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.sf.psd[p].n;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..self.m() {
            if y[i] != 0.0 {
                out += &self.a_psd[p][i] * y[i];
            }
        }
        out
    }

    fn flatten(&self, it_x_psd: &[DMatrix<f64>], x_lp: &DVector<f64>, x_free: &DVector<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.sf.nvar()];
        for (pb, xp) in self.sf.psd.iter().zip(it_x_psd) {
            svec_into(xp, &mut x[pb.offset..pb.offset + svec_len(pb.n)]);
        }
        x[self.sf.lp_offset..self.sf.lp_offset + self.sf.lp_count].copy_from_slice(x_lp.as_slice());
        x[self.sf.free_offset..self.sf.free_offset + self.sf.free_count].copy_from_slice(x_free.as_slice());
        x
    }
}

struct Residual {
    primal: DVector<f64>,
    dual_psd: Vec<DMatrix<f64>>,
    dual_lp: DVector<f64>,
    dual_free: DVector<f64>,
}

fn residual(pr: &Problem, it: &Iterate) -> Residual {
    let primal = &pr.sf.b - pr.apply_cone(&it.x_psd, &it.x_lp) - &pr.a_free * &it.x_free;
    let dual_psd = (0..it.x_psd.len())
        .map(|p| &pr.c_psd[p] - pr.adjoint_psd(p, &it.y) - &it.z_psd[p])
        .collect();
    let dual_lp = &pr.c_lp - pr.a_lp.transpose() * &it.y - &it.z_lp;
    let dual_free = &pr.c_free - pr.a_free.transpose() * &it.y;
    Residual {
        primal,
        dual_psd,
        dual_lp,
        dual_free,
    }
}

fn initial_point(pr: &Problem) -> Iterate {
    let sf = pr.sf;
    let m = pr.m();
    let b_ratio = (0..m)
        .map(|i| (1.0 + sf.b[i].abs()) / (1.0 + sf.a.row(i).norm()))
        .fold(0.0, f64::max);
    let x_psd = sf
        .psd
        .iter()
        .map(|pb| {
            let n = pb.n as f64;
            let xi = 10f64.max(n.sqrt()).max(n * b_ratio);
            DMatrix::identity(pb.n, pb.n) * xi
        })
        .collect();
    let z_psd = sf
        .psd
        .iter()
        .enumerate()
        .map(|(p, pb)| {
            let n = pb.n as f64;
            let amax = pr.a_psd[p].iter().map(|a| a.norm()).fold(0.0, f64::max);
            let eta = 10f64.max(n.sqrt()).max(amax).max(pr.c_psd[p].norm());
            DMatrix::identity(pb.n, pb.n) * eta
        })
        .collect();
    let xi_lp = 10f64.max(b_ratio);
    let eta_lp = 10f64.max(pr.c_lp.amax()).max(pr.a_lp.amax());
    Iterate {
        x_psd,
        z_psd,
        x_lp: DVector::from_element(sf.lp_count, xi_lp),
        z_lp: DVector::from_element(sf.lp_count, eta_lp),
        x_free: DVector::zeros(sf.free_count),
        y: DVector::zeros(m),
    }
}

/// Factored Newton system for one iteration.
struct Newton<'p, 'a> {
    pr: &'p Problem<'a>,
    nt: Vec<NtScaling>,
    w_lp: DVector<f64>,
    kkt: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'p, 'a> Newton<'p, 'a> {
    fn new(pr: &'p Problem<'a>, it: &Iterate) -> Option<Self> {
        let m = pr.m();
        let nf = pr.sf.free_count;
        let mut nt = Vec::with_capacity(it.x_psd.len());
        for (x, z) in it.x_psd.iter().zip(&it.z_psd) {
            nt.push(NtScaling::new(x, z)?);
        }
        let w_lp = it.x_lp.component_div(&it.z_lp);

        let mut schur = DMatrix::zeros(m, m);
        for (p, s) in nt.iter().enumerate() {
            let wa: Vec<DMatrix<f64>> = pr.a_psd[p].iter().map(|a| &s.w * a * &s.w).collect();
            for i in 0..m {
                for j in i..m {
                    let v = pr.a_psd[p][i].dot(&wa[j]);
                    schur[(i, j)] += v;
                    if i != j {
                        schur[(j, i)] += v;
                    }
                }
            }
        }
        let scaled_lp = DMatrix::from_fn(m, pr.sf.lp_count, |i, j| pr.a_lp[(i, j)] * w_lp[j]);
        schur += &scaled_lp * pr.a_lp.transpose();

        let mut kkt = DMatrix::zeros(m + nf, m + nf);
        kkt.view_mut((0, 0), (m, m)).copy_from(&schur);
        let diag_scale = (0..m).map(|i| schur[(i, i)]).fold(0.0, f64::max).max(1.0);
        for i in 0..m {
            kkt[(i, i)] += 1e-14 * diag_scale;
        }
        kkt.view_mut((0, m), (m, nf)).copy_from(&pr.a_free);
        kkt.view_mut((m, 0), (nf, m)).copy_from(&pr.a_free.transpose());
        let kkt = kkt.lu();
        if !kkt.is_invertible() {
            return None;
        }
        Some(Self { pr, nt, w_lp, kkt })
    }

    /// Solves with complementarity right-hand sides `g_psd` (unscaled) and `g_lp`,
    /// followed by iterative refinement on the linearized feasibility equations.
    fn solve(&self, res: &Residual, g_psd: &[DMatrix<f64>], g_lp: &DVector<f64>) -> Option<Direction> {
        let mut dir = self.solve_once(res, g_psd, g_lp)?;
        let pr = self.pr;
        let zero_psd: Vec<DMatrix<f64>> = g_psd.iter().map(|g| DMatrix::zeros(g.nrows(), g.ncols())).collect();
        let zero_lp = DVector::zeros(g_lp.len());
        let mismatch = |d: &Direction| {
            let primal = &res.primal - pr.apply_cone(&d.x_psd, &d.x_lp) - &pr.a_free * &d.x_free;
            let dual_free = &res.dual_free - pr.a_free.transpose() * &d.y;
            (primal, dual_free)
        };
        let (mut e_p, mut e_f) = mismatch(&dir);
        for _ in 0..REFINE_STEPS {
            let size = e_p.norm() + e_f.norm();
            if !(size > 0.0) {
                break;
            }
            let correction_res = Residual {
                primal: e_p.clone(),
                dual_psd: zero_psd.clone(),
                dual_lp: zero_lp.clone(),
                dual_free: e_f.clone(),
            };
            let corr = self.solve_once(&correction_res, &zero_psd, &zero_lp)?;
            let mut next = Direction {
                x_psd: dir.x_psd.iter().zip(&corr.x_psd).map(|(a, b)| a + b).collect(),
                z_psd: dir.z_psd.iter().zip(&corr.z_psd).map(|(a, b)| a + b).collect(),
                x_lp: &dir.x_lp + &corr.x_lp,
                z_lp: &dir.z_lp + &corr.z_lp,
                x_free: &dir.x_free + &corr.x_free,
                y: &dir.y + &corr.y,
            };
            let (p2, f2) = mismatch(&next);
            if p2.norm() + f2.norm() >= size {
                break;
            }
            std::mem::swap(&mut dir, &mut next);
            e_p = p2;
            e_f = f2;
        }
        Some(dir)
    }

    fn solve_once(&self, res: &Residual, g_psd: &[DMatrix<f64>], g_lp: &DVector<f64>) -> Option<Direction> {
        let pr = self.pr;
        let m = pr.m();
        let nf = pr.sf.free_count;
        let t_psd: Vec<DMatrix<f64>> = (0..g_psd.len())
            .map(|p| &g_psd[p] - &self.nt[p].w * &res.dual_psd[p] * &self.nt[p].w)
            .collect();
        let t_lp = g_lp - self.w_lp.component_mul(&res.dual_lp);
        let rhs_y = &res.primal - pr.apply_cone(&t_psd, &t_lp);
        let mut rhs = DVector::zeros(m + nf);
        rhs.rows_mut(0, m).copy_from(&rhs_y);
        rhs.rows_mut(m, nf).copy_from(&res.dual_free);
        let sol = self.kkt.solve(&rhs)?;
        let dy = sol.rows(0, m).into_owned();
        let dx_free = sol.rows(m, nf).into_owned();

        let mut dz_psd = Vec::with_capacity(g_psd.len());
        let mut dx_psd = Vec::with_capacity(g_psd.len());
        for p in 0..g_psd.len() {
            let dz = &res.dual_psd[p] - pr.adjoint_psd(p, &dy);
            let dx = &g_psd[p] - &self.nt[p].w * &dz * &self.nt[p].w;
            dz_psd.push(dz);
            dx_psd.push(dx);
        }
        let dz_lp = &res.dual_lp - pr.a_lp.transpose() * &dy;
        let dx_lp = g_lp - self.w_lp.component_mul(&dz_lp);
        if dy.iter().chain(dx_free.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Direction {
            x_psd: dx_psd,
            z_psd: dz_psd,
            x_lp: dx_lp,
            z_lp: dz_lp,
            x_free: dx_free,
            y: dy,
        })
    }

    /// Maximum primal and dual step lengths toward the cone boundary.
    fn step_limits(&self, it: &Iterate, d: &Direction) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for (p, s) in self.nt.iter().enumerate() {
            ap = ap.min(s.max_step(&s.scaled_x(&d.x_psd[p])));
            ad = ad.min(s.max_step(&s.scaled_z(&d.z_psd[p])));
        }
        for j in 0..it.x_lp.len() {
            if d.x_lp[j] < 0.0 {
                ap = ap.min(-it.x_lp[j] / d.x_lp[j]);
            }
            if d.z_lp[j] < 0.0 {
                ad = ad.min(-it.z_lp[j] / d.z_lp[j]);
            }
        }
        (ap, ad)
    }
}

fn complementarity(it: &Iterate) -> f64 {
    it.x_psd.iter().zip(&it.z_psd).map(|(x, z)| x.dot(z)).sum::<f64>() + it.x_lp.dot(&it.z_lp)
}

pub(crate) fn solve(sf: &StandardForm, tol: &SolverTolerances) -> BackendOutput {
    let pr = Problem::new(sf);
    let nu = sf.cone_degree().max(1) as f64;
    let mut it = initial_point(&pr);
    let b_norm = 1.0 + sf.b.norm();
    let c_norm = 1.0 + sf.c.norm();
    let cap = tol.max_iterations.min(MAX_STEPS);

    // Targets two orders tighter than requested; the best iterate is kept in
    // case the final steps lose accuracy, and accepted if it meets the request.
    let feas_target = (tol.feas * 1e-2).max(1e-13);
    let gap_target = (tol.gap * 1e-2).max(1e-13);
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut best: Option<(f64, Iterate, f64)> = None;
    let mut stalled = 0;
    loop {
        let res = residual(&pr, &it);
        let pres = res.primal.norm() / b_norm;
        let dres = (res.dual_psd.iter().map(|d| d.norm_squared()).sum::<f64>()
            + res.dual_lp.norm_squared()
            + res.dual_free.norm_squared())
        .sqrt()
            / c_norm;
        let x_flat = pr.flatten(&it.x_psd, &it.x_lp, &it.x_free);
        let pobj: f64 = sf.c.iter().zip(&x_flat).map(|(c, x)| c * x).sum();
        let dobj = sf.b.dot(&it.y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let merit = (pres / feas_target).max(dres / feas_target).max(gap / gap_target);
        if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, it.clone(), dres));
            stalled = 0;
        } else {
            stalled += 1;
        }
        if merit <= 1.0 {
            status = SolveStatus::Optimal;
            break;
        }
        if iterations >= cap || stalled >= STALL_LIMIT {
            break;
        }
        if !pobj.is_finite() || !dobj.is_finite() || it.y.amax() > 1e13 || x_flat.iter().any(|v| v.abs() > 1e13) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        iterations += 1;

        let Some(newton) = Newton::new(&pr, &it) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let mu = complementarity(&it) / nu;

        // predictor
        let g_psd: Vec<DMatrix<f64>> = it.x_psd.iter().map(|x| -x).collect();
        let g_lp = -&it.x_lp;
        let Some(aff) = newton.solve(&res, &g_psd, &g_lp) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let (ap, ad) = newton.step_limits(&it, &aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut mu_aff = 0.0;
        for p in 0..it.x_psd.len() {
            mu_aff += (&it.x_psd[p] + &aff.x_psd[p] * ap).dot(&(&it.z_psd[p] + &aff.z_psd[p] * ad));
        }
        mu_aff += (&it.x_lp + &aff.x_lp * ap).dot(&(&it.z_lp + &aff.z_lp * ad));
        mu_aff /= nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let mut g_psd = Vec::with_capacity(it.x_psd.len());
        for (p, s) in newton.nt.iter().enumerate() {
            let dxh = s.scaled_x(&aff.x_psd[p]);
            let dzh = s.scaled_z(&aff.z_psd[p]);
            let cross = (&dxh * &dzh + &dzh * &dxh) * 0.5;
            let n = s.lambda.len();
            let rhs = DMatrix::from_fn(n, n, |i, j| {
                let diag = if i == j { sigma * mu - s.lambda[i] * s.lambda[i] } else { 0.0 };
                2.0 * (diag - cross[(i, j)]) / (s.lambda[i] + s.lambda[j])
            });
            g_psd.push(&s.r * rhs * s.r.transpose());
        }
        let g_lp = DVector::from_fn(it.x_lp.len(), |j, _| {
            (sigma * mu - it.x_lp[j] * it.z_lp[j] - aff.x_lp[j] * aff.z_lp[j]) / it.z_lp[j]
        });
        let Some(dir) = newton.solve(&res, &g_psd, &g_lp) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let (ap, ad) = newton.step_limits(&it, &dir);
        // A common step length keeps the iterate centered on degenerate problems.
        let step = (STEP_FRACTION * ap.min(ad)).min(1.0);
        let (ap, ad) = (step, step);

        for p in 0..it.x_psd.len() {
            it.x_psd[p] += &dir.x_psd[p] * ap;
            it.z_psd[p] += &dir.z_psd[p] * ad;
            it.x_psd[p] = (&it.x_psd[p] + it.x_psd[p].transpose()) * 0.5;
            it.z_psd[p] = (&it.z_psd[p] + it.z_psd[p].transpose()) * 0.5;
        }
        it.x_lp += &dir.x_lp * ap;
        it.z_lp += &dir.z_lp * ad;
        it.x_free += &dir.x_free * ap;
        it.y += &dir.y * ad;
    }
    let Some((merit, it, dual_residual)) = best else {
        return BackendOutput {
            status: SolveStatus::NumericalFailure,
            x: pr.flatten(&it.x_psd, &it.x_lp, &it.x_free),
            dual_objective: f64::NAN,
            dual_residual: f64::INFINITY,
            y: Vec::new(),
            iterations,
        };
    };
    if merit <= 100.0 {
        status = SolveStatus::Optimal;
    }
    BackendOutput {
        status,
        x: pr.flatten(&it.x_psd, &it.x_lp, &it.x_free),
        dual_objective: sf.b.dot(&it.y),
        dual_residual,
        y: it.y.as_slice().to_vec(),
        iterations,
    }
}
