//! Lowering of a [`ConicProblem`] to the real standard form
//! `min c·x  s.t.  A x = b,  x ∈ S₊^{n₁} × … × R₊^{p} × R^{f}`
//! with symmetric blocks stored as scaled `svec` vectors.

use nalgebra::{DMatrix, DVector};

use super::{BackendOutput, BlockKind, BlockValue, Coef, ConicProblem, ConicSolution, Relation, Residuals, Sense, SolveStatus};
use crate::linalg::{embed_unchecked, unembed};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const EQUILIBRATION_STEPS: usize = 10;

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Upper triangle, column by column, off-diagonals scaled by √2 so that
/// `svec(A)·svec(B) = tr(A B)`.
pub(crate) fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j { m[(i, j)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
            k += 1;
        }
    }
}

pub(crate) fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    /// Index into `StandardForm::psd`.
    Psd(usize),
    Lp(usize),
    Free(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PsdBlock {
    /// Real dimension (twice the Hermitian dimension).
    pub n: usize,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub psd: Vec<PsdBlock>,
    pub lp_offset: usize,
    pub lp_count: usize,
    pub free_offset: usize,
    pub free_count: usize,
    /// Row- and column-scaled data.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    slots: Vec<Slot>,
    /// Accumulated equilibration factor per row.
    row_scale: Vec<f64>,
    /// Internal-to-user factor per column, on top of `primal_scale`.
    col_scale: Vec<f64>,
    primal_scale: f64,
    cost_scale: f64,
}

impl StandardForm {
    pub fn nvar(&self) -> usize {
        self.free_offset + self.free_count
    }

    /// Barrier parameter: total order of the cone.
    pub fn cone_degree(&self) -> usize {
        self.psd.iter().map(|p| p.n).sum::<usize>() + self.lp_count
    }

    pub fn lower(problem: &ConicProblem) -> Self {
        let mut psd = Vec::new();
        let mut slots = Vec::with_capacity(problem.blocks.len());
        let mut offset = 0;
        for b in &problem.blocks {
            if let BlockKind::PsdHermitian(d) = b.kind {
                slots.push(Slot::Psd(psd.len()));
                psd.push(PsdBlock { n: 2 * d, offset });
                offset += svec_len(2 * d);
            } else {
                slots.push(Slot::Lp(0));
            }
        }
        let lp_offset = offset;
        let mut lp_count = 0;
        let mut free_count = 0;
        for (slot, b) in slots.iter_mut().zip(&problem.blocks) {
            match b.kind {
                BlockKind::NonnegScalar => {
                    *slot = Slot::Lp(lp_count);
                    lp_count += 1;
                }
                BlockKind::FreeScalar => {
                    *slot = Slot::Free(free_count);
                    free_count += 1;
                }
                BlockKind::PsdHermitian(_) => {}
            }
        }
        let user_lp = lp_count;
        let slack_count = problem.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        lp_count += slack_count;
        let free_offset = lp_offset + lp_count;
        let nvar = free_offset + free_count;
        let m = problem.constraints.len();

        let fill = |row: &mut [f64], f: &super::LinearFunctional| {
            for (blk, coef) in f.terms() {
                match (slots[*blk], coef) {
                    (Slot::Psd(p), Coef::Matrix(cm)) => {
                        let pb = psd[p];
                        let embedded = embed_unchecked(cm) * 0.5;
                        let mut tmp = vec![0.0; svec_len(pb.n)];
                        svec_into(&embedded, &mut tmp);
                        for (k, v) in tmp.into_iter().enumerate() {
                            row[pb.offset + k] += v;
                        }
                    }
                    (Slot::Lp(i), Coef::Scalar(s)) => row[lp_offset + i] += s,
                    (Slot::Free(i), Coef::Scalar(s)) => row[free_offset + i] += s,
                    _ => unreachable!("validated on construction"),
                }
            }
        };

        let mut a = DMatrix::zeros(m, nvar);
        let mut b = DVector::zeros(m);
        let mut row = vec![0.0; nvar];
        for (i, con) in problem.constraints.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            fill(&mut row, &con.functional);
            for (j, v) in row.iter().enumerate() {
                a[(i, j)] = *v;
            }
            b[i] = con.bound;
        }

        // Each PSD block shares one column scale so that scaling preserves the cone.
        let mut groups: Vec<(usize, usize)> = psd.iter().map(|p| (p.offset, p.offset + svec_len(p.n))).collect();
        groups.extend((lp_offset..lp_offset + user_lp).chain(free_offset..nvar).map(|j| (j, j + 1)));
        let mut row_scale = vec![1.0; m];
        let mut col_scale = vec![1.0; nvar];
        for _ in 0..EQUILIBRATION_STEPS {
            for i in 0..m {
                let r = a.row(i).amax();
                if r > 0.0 {
                    let d = 1.0 / r.sqrt();
                    a.row_mut(i).scale_mut(d);
                    b[i] *= d;
                    row_scale[i] *= d;
                }
            }
            for &(lo, hi) in &groups {
                let r = a.columns(lo, hi - lo).amax();
                if r > 0.0 {
                    let e = 1.0 / r.sqrt();
                    a.columns_mut(lo, hi - lo).scale_mut(e);
                    col_scale[lo..hi].iter_mut().for_each(|s| *s *= e);
                }
            }
        }

        // Slacks enter after scaling, so they live in normalized-row units.
        let mut slack = 0;
        for (i, con) in problem.constraints.iter().enumerate() {
            let sign = match con.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => continue,
            };
            a[(i, lp_offset + user_lp + slack)] = sign;
            slack += 1;
        }

        let mut c_row = vec![0.0; nvar];
        fill(&mut c_row, &problem.objective);
        let sign = match problem.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };
        let mut c = DVector::from_iterator(nvar, c_row.iter().zip(&col_scale).map(|(v, e)| sign * v * e));

        let bmax = b.amax();
        let primal_scale = if bmax > 0.0 { bmax } else { 1.0 };
        b /= primal_scale;
        let cmax = c.amax();
        let cost_scale = if cmax > 0.0 { cmax } else { 1.0 };
        c /= cost_scale;

        Self {
            psd,
            lp_offset,
            lp_count,
            free_offset,
            free_count,
            a,
            b,
            c,
            slots,
            row_scale,
            col_scale,
            primal_scale,
            cost_scale,
        }
    }

    /// Maps a backend result back onto the user's blocks and evaluates residuals there.
    pub fn lift(&self, problem: &ConicProblem, raw: &BackendOutput) -> ConicSolution {
        let x: Vec<f64> = raw.x.iter().zip(&self.col_scale).map(|(v, e)| v * e * self.primal_scale).collect();
        let block_values: Vec<BlockValue> = self
            .slots
            .iter()
            .map(|slot| match *slot {
                Slot::Psd(p) => {
                    let pb = self.psd[p];
                    let real = smat(&x[pb.offset..pb.offset + svec_len(pb.n)], pb.n);
                    BlockValue::Matrix(unembed(&real))
                }
                Slot::Lp(i) => BlockValue::Scalar(x[self.lp_offset + i]),
                Slot::Free(i) => BlockValue::Scalar(x[self.free_offset + i]),
            })
            .collect();
        let objective_value = problem.objective.evaluate(&block_values);
        let sign = match problem.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };
        let dual_bound = sign * raw.dual_objective * self.primal_scale * self.cost_scale;
        let primal = problem
            .constraints
            .iter()
            .map(|c| c.relative_violation(&block_values))
            .fold(0.0, f64::max);
        let residuals = Residuals {
            primal,
            dual: raw.dual_residual,
            gap: (objective_value - dual_bound).abs() / (1.0 + objective_value.abs() + dual_bound.abs()),
        };
        let mut status = raw.status;
        if status == SolveStatus::Optimal && !(primal <= 1e-7 && objective_value.is_finite()) {
            status = SolveStatus::NumericalFailure;
        }
        let constraint_duals = if raw.y.len() == self.row_scale.len() {
            raw.y.iter().zip(&self.row_scale).map(|(y, d)| y * d * self.cost_scale).collect()
        } else {
            Vec::new()
        };
        ConicSolution {
            status,
            constraint_duals,
            block_values,
            objective_value,
            dual_bound,
            residuals,
            iterations: raw.iterations,
            infeasibility_margin: None,
        }
    }
}
