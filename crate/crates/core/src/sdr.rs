//! Max-min fair multi-group multicast beamforming by semidefinite relaxation.
//!
//! The relaxed problem is solved by bisection on the common SINR target `t`,
//! every step being a slack-maximizing feasibility SDP. Beamformers are then
//! recovered from the covariance blocks: directly when the blocks are (or can
//! be reduced to) rank one, otherwise by Gaussian randomization followed by
//! multi-group power control.
//!
//! Internally every instance is first whitened with respect to its power
//! metric and restricted to the span of the users' channels, so the SDPs have
//! dimension at most `M` regardless of the antenna count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    check_hermitian, hermitian_part, outer, principal_component, psd_factor, quad_form, range_basis,
    toeplitz_spectral_factor, trace_product, trace_re, CMatrix, CVector, HermitianEigen, C64, ONE,
};
use crate::solver::{
    self, Backend, BlockKind, ConicProblem, ConicSolution, LinearFunctional, Relation, Sense, SolveStatus,
    SolverTolerances,
};

/// Relative eigenvalue cut below which a direction is treated as absent.
const RANK_TOL: f64 = 1e-10;
/// Dual residual below which the dual objective is trusted as a bound.
const DUAL_CERTIFICATE_TOL: f64 = 1e-9;
/// A probe met to this relative accuracy counts as feasible. Feasible verdicts only
/// raise the lower end to the exactly evaluated value, so this never loosens a bound.
const BOUNDARY_TOL: f64 = 1e-6;
const MAX_BISECTION_STEPS: usize = 200;

/// One max-min problem: users' quadratic forms, groups, power budget and power metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinInstance {
    user_matrices: Vec<CMatrix>,
    membership: Vec<usize>,
    num_groups: usize,
    power: f64,
    noise_var: f64,
    power_metric: CMatrix,
}

impl MaxMinInstance {
    pub fn new(
        user_matrices: Vec<CMatrix>,
        membership: Vec<usize>,
        power: f64,
        noise_var: f64,
        power_metric: CMatrix,
    ) -> Result<Self> {
        if user_matrices.is_empty() {
            return Err(Error::Config("at least one user is required".into()));
        }
        if membership.len() != user_matrices.len() {
            return Err(Error::Config(format!(
                "{} users but membership has {} entries",
                user_matrices.len(),
                membership.len()
            )));
        }
        let num_groups = membership.iter().max().map_or(0, |g| g + 1);
        if let Some(k) = (0..num_groups).find(|k| !membership.contains(k)) {
            return Err(Error::Config(format!("group {k} has no members")));
        }
        let dim = power_metric.nrows();
        if dim == 0 || !power_metric.is_square() {
            return Err(Error::Config("power metric must be a nonempty square matrix".into()));
        }
        check_psd(&power_metric, "power metric")?;
        for (m, q) in user_matrices.iter().enumerate() {
            if q.nrows() != dim || q.ncols() != dim {
                return Err(Error::Config(format!(
                    "user {m} matrix is {}x{}, expected {dim}x{dim}",
                    q.nrows(),
                    q.ncols()
                )));
            }
            check_psd(q, &format!("user {m} matrix"))?;
        }
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::Config(format!("power must be finite and nonnegative, got {power}")));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(Self {
            user_matrices,
            membership,
            num_groups,
            power,
            noise_var,
            power_metric,
        })
    }

    /// Instance with `Q_m = h_m h_m^H`.
    pub fn from_channels(
        channels: &[CVector],
        membership: &[usize],
        power: f64,
        noise_var: f64,
        power_metric: CMatrix,
    ) -> Result<Self> {
        Self::new(channels.iter().map(outer).collect(), membership.to_vec(), power, noise_var, power_metric)
    }

    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(
            self.user_matrices.clone(),
            self.membership.clone(),
            power,
            self.noise_var,
            self.power_metric.clone(),
        )
    }

    pub fn user_matrices(&self) -> &[CMatrix] {
        &self.user_matrices
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn num_users(&self) -> usize {
        self.user_matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.power_metric.nrows()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn power_metric(&self) -> &CMatrix {
        &self.power_metric
    }

    /// Per-user SINR when group `k` transmits with covariance `blocks[k]`.
    pub fn relaxed_sinr(&self, blocks: &[CMatrix]) -> Vec<f64> {
        let gains: Vec<Vec<f64>> = self
            .user_matrices
            .iter()
            .map(|q| blocks.iter().map(|x| trace_product(q, x).max(0.0)).collect())
            .collect();
        self.sinr_from_gains(&gains)
    }

    /// Per-user SINR for beamformers `w_k`.
    pub fn sinr(&self, beamformers: &[CVector]) -> Vec<f64> {
        let gains: Vec<Vec<f64>> = self
            .user_matrices
            .iter()
            .map(|q| beamformers.iter().map(|w| quad_form(q, w).max(0.0)).collect())
            .collect();
        self.sinr_from_gains(&gains)
    }

    /// `Σ_k w_k^H Φ w_k`.
    pub fn power_used(&self, beamformers: &[CVector]) -> f64 {
        beamformers.iter().map(|w| quad_form(&self.power_metric, w)).sum()
    }

    fn sinr_from_gains(&self, gains: &[Vec<f64>]) -> Vec<f64> {
        gains
            .iter()
            .zip(&self.membership)
            .map(|(g, &k)| {
                let interference: f64 = g.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum();
                g[k] / (interference + self.noise_var)
            })
            .collect()
    }

    fn metric_is_identity(&self) -> bool {
        let d = self.dim();
        (&self.power_metric - CMatrix::identity(d, d)).iter().all(|z| z.norm() <= 1e-12)
    }
}

fn check_psd(m: &CMatrix, context: &str) -> Result<()> {
    check_hermitian(m, context)?;
    let eig = HermitianEigen::new(m);
    let trace = trace_re(m).abs().max(f64::MIN_POSITIVE);
    if eig.min() < -1e-10 * trace.max(1.0) || eig.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{context} is not positive semidefinite (min eigenvalue {:e})", eig.min())));
    }
    Ok(())
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Slack-maximization form of the relaxed problem at target `t`:
///
/// ```text
/// max δ  s.t.  tr(Q_m X_k) − t (Σ_{i≠k} tr(Q_m X_i) + σ²) ≥ δ   for user m in group k
///              Σ_k tr(Φ X_k) ≤ P,   X_k ⪰ 0
/// ```
///
/// Blocks `0..G` are the covariances, block `G` is `δ`.
pub fn build_feasibility(instance: &MaxMinInstance, t: f64) -> Result<ConicProblem> {
    feasibility_problem(instance, t, &vec![1.0; instance.num_users()])
}

/// Same as [`build_feasibility`] with `δ` weighted per user row. Any positive
/// weights leave the sign of the optimal slack, and hence the verdict, unchanged.
fn feasibility_problem(instance: &MaxMinInstance, t: f64, weights: &[f64]) -> Result<ConicProblem> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("SINR target must be finite and nonnegative, got {t}")));
    }
    let d = instance.dim();
    let g = instance.num_groups;
    let mut p = ConicProblem::new(Sense::Maximize);
    for k in 0..g {
        p.add_block(BlockKind::PsdHermitian(d), format!("X{k}"))?;
    }
    let delta = p.add_block(BlockKind::FreeScalar, "delta")?;
    p.set_objective(LinearFunctional::new().scalar(delta, 1.0))?;
    for (m, q) in instance.user_matrices.iter().enumerate() {
        let k = instance.membership[m];
        let mut f = LinearFunctional::new();
        for i in 0..g {
            let coef = if i == k { q.clone() } else { q * C64::from(-t) };
            f = f.matrix(i, coef);
        }
        p.add_constraint(f.scalar(delta, -weights[m]), Relation::Ge, t * instance.noise_var)?;
    }
    let mut power = LinearFunctional::new();
    for k in 0..g {
        power = power.matrix(k, instance.power_metric.clone());
    }
    p.add_constraint(power, Relation::Le, instance.power)?;
    Ok(p)
}

/// Whitened, channel-span-restricted copy of an instance with `P = σ² = 1` and
/// identity power metric. Original covariances are `X = P · T Z T^H` and
/// original SINR values are `value_scale` times reduced ones.
struct Reduction {
    basis: CMatrix,
    value_scale: f64,
    reduced: MaxMinInstance,
}

impl Reduction {
    fn new(instance: &MaxMinInstance) -> Result<Option<Self>> {
        if instance.power == 0.0 {
            return Ok(None);
        }
        let eig = HermitianEigen::new(&instance.power_metric);
        let cut = RANK_TOL * eig.max();
        let kept: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] > cut).collect();
        if kept.is_empty() {
            return Ok(None);
        }
        let d = instance.dim();
        let whiten = CMatrix::from_fn(d, kept.len(), |r, c| {
            eig.vectors[(r, kept[c])] / eig.values[kept[c]].sqrt()
        });
        let whitened: Vec<CMatrix> = instance
            .user_matrices
            .iter()
            .map(|q| hermitian_part(&(whiten.adjoint() * q * &whiten)))
            .collect();
        let total = whitened.iter().fold(CMatrix::zeros(kept.len(), kept.len()), |acc, q| acc + q);
        let span = range_basis(&total, RANK_TOL);
        if span.ncols() == 0 {
            return Ok(None);
        }
        let basis = &whiten * &span;
        let projected: Vec<CMatrix> =
            whitened.iter().map(|q| hermitian_part(&(span.adjoint() * q * &span))).collect();
        // Without interference the problem is homogeneous in P/σ², so it is
        // factored out entirely; otherwise the noise level matters.
        let snr = instance.power / instance.noise_var;
        let (factor, value_scale) = if instance.num_groups == 1 {
            let s = projected.iter().map(|q| HermitianEigen::new(q).max()).fold(0.0, f64::max);
            (1.0 / s, snr * s)
        } else {
            (snr, 1.0)
        };
        let r = span.ncols();
        let reduced = MaxMinInstance {
            user_matrices: projected.into_iter().map(|q| q * C64::from(factor)).collect(),
            membership: instance.membership.clone(),
            num_groups: instance.num_groups,
            power: 1.0,
            noise_var: 1.0,
            power_metric: CMatrix::identity(r, r),
        };
        Ok(Some(Self {
            basis,
            value_scale,
            reduced,
        }))
    }

    fn lift(&self, z: &CMatrix, power: f64) -> CMatrix {
        hermitian_part(&(&self.basis * z * self.basis.adjoint())) * C64::from(power)
    }
}

/// Bracket and covariances returned by [`bisect_maxmin`].
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    /// Largest target certified by a covariance set (its relaxed min-SINR).
    pub t_lo: f64,
    /// Smallest target found infeasible, or the initial analytic bound.
    pub t_hi: f64,
    /// Covariances achieving `t_lo`.
    pub blocks: Vec<CMatrix>,
    pub iterations: usize,
    pub conic_solves: usize,
    pub reduced_dimension: usize,
}

/// Bisection on the relaxed problem; terminates once `t_hi − t_lo ≤ tol_t · t_hi`.
pub fn bisect_maxmin(instance: &MaxMinInstance, tol_t: f64, tol: &SolverTolerances) -> Result<Bisection> {
    Ok(bisect_reduced(instance, tol_t, tol)?.0)
}

fn bisect_reduced(
    instance: &MaxMinInstance,
    tol_t: f64,
    tol: &SolverTolerances,
) -> Result<(Bisection, Option<(Reduction, Vec<CMatrix>)>)> {
    if !(tol_t > 0.0) {
        return Err(Error::Config(format!("bisection tolerance must be positive, got {tol_t}")));
    }
    let zero_blocks = || vec![CMatrix::zeros(instance.dim(), instance.dim()); instance.num_groups];
    let Some(reduction) = Reduction::new(instance)? else {
        return Ok((
            Bisection {
                t_lo: 0.0,
                t_hi: 0.0,
                blocks: zero_blocks(),
                iterations: 0,
                conic_solves: 0,
                reduced_dimension: 0,
            },
            None,
        ));
    };
    let red = &reduction.reduced;
    let r = red.dim();
    let top: Vec<f64> = red.user_matrices.iter().map(|q| HermitianEigen::new(q).max()).collect();

    // Each user alone with the whole budget bounds the common target.
    let mut t_hi = min_of(&top);
    let mut t_lo = 0.0;
    let mut best = vec![CMatrix::zeros(r, r); red.num_groups];
    let mut iterations = 0;
    let mut solves = 0;
    while t_hi > 0.0 && t_hi - t_lo > tol_t * t_hi && iterations < MAX_BISECTION_STEPS {
        iterations += 1;
        let t = if t_lo > 0.0 && t_hi > 4.0 * t_lo {
            (t_lo * t_hi).sqrt()
        } else {
            0.5 * (t_lo + t_hi)
        };
        // Best achievable signal power of each row, so δ is a relative margin.
        let weights: Vec<f64> = top.iter().map(|s| red.noise_var * (s + t)).collect();
        let problem = feasibility_problem(red, t, &weights)?;
        let judge = |sol: &ConicSolution| {
            if sol.status == SolveStatus::Infeasible {
                return Some((Verdict::Infeasible, None));
            }
            let blocks: Vec<CMatrix> = (0..red.num_groups).map(|k| clean_block(sol.matrix(k))).collect();
            let blocks = enforce_budget(blocks);
            let achieved = min_of(&red.relaxed_sinr(&blocks));
            let verdict = if achieved >= t * (1.0 - BOUNDARY_TOL) {
                Verdict::Feasible
            } else {
                let bound = slack_upper_bound(&sol.constraint_duals, &weights, t * red.noise_var, red.power, |y| {
                    (0..red.num_groups)
                        .map(|k| {
                            let mut b = CMatrix::zeros(r, r);
                            for (m, q) in red.user_matrices.iter().enumerate() {
                                let scale = if red.membership[m] == k { y[m] } else { -t * y[m] };
                                b += q * C64::from(scale);
                            }
                            HermitianEigen::new(&b).max()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                });
                // A feasible point at t' > t has slack at least (t' − t)σ²/w_m in every row,
                // so a slack bound β caps the optimum at t + β·max w/σ².
                let w_max = weights.iter().copied().fold(0.0, f64::max);
                verdict_from_slack(sol, red.num_groups, bound).or_else(|| {
                    let upper = t + bound?.max(0.0) * w_max / red.noise_var;
                    usable(sol).then_some(Verdict::AtMost(upper))
                })?
            };
            Some((verdict, Some((achieved, blocks))))
        };
        let ((verdict, point), used) = solve_decided(&problem, tol, judge).map_err(|e| Error::Bisection {
            t: t * reduction.value_scale,
            lo: t_lo * reduction.value_scale,
            hi: t_hi * reduction.value_scale,
            iteration: iterations,
            source: Box::new(e),
        })?;
        solves += used;
        log::trace!(
            "bisection step {iterations}: t={t:.6e} {verdict:?}, certified {:.6e}",
            point.as_ref().map_or(f64::NAN, |p| p.0)
        );
        if let Some((achieved, blocks)) = point {
            if achieved > t_lo {
                t_lo = achieved;
                best = blocks;
            }
        }
        match verdict {
            Verdict::Infeasible => t_hi = t,
            Verdict::AtMost(upper) => t_hi = t_hi.min(upper),
            Verdict::Feasible => {}
        }
        t_hi = t_hi.max(t_lo);
        if matches!(verdict, Verdict::AtMost(_)) {
            // The probe sits within solver accuracy of the optimum; finer probes cannot be decided.
            break;
        }
    }
    let blocks = best.iter().map(|z| reduction.lift(z, instance.power)).collect();
    let bisection = Bisection {
        t_lo: t_lo * reduction.value_scale,
        t_hi: t_hi * reduction.value_scale,
        blocks,
        iterations,
        conic_solves: solves,
        reduced_dimension: r,
    };
    Ok((bisection, Some((reduction, best))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Verdict {
    Feasible,
    Infeasible,
    /// Accurately solved yet undecided: the probe is within solver accuracy of the
    /// optimum, which is certified to be at most this value.
    AtMost(f64),
}

/// Weak duality brackets the optimal slack between the primal value and a
/// dual bound, so a verdict is returned only when that bracket excludes zero.
/// `slack_bound` is an upper bound on the optimal slack valid for any multipliers.
fn verdict_from_slack(sol: &ConicSolution, slack_block: usize, slack_bound: Option<f64>) -> Option<Verdict> {
    if slack_bound.is_some_and(|b| b < 0.0) {
        return Some(Verdict::Infeasible);
    }
    if sol.residuals.dual <= DUAL_CERTIFICATE_TOL && sol.dual_bound < 0.0 {
        return Some(Verdict::Infeasible);
    }
    if usable(sol) && sol.scalar(slack_block) >= 0.0 {
        return Some(Verdict::Feasible);
    }
    None
}

/// Lagrangian bound on the optimal slack of `max δ` subject to per-row
/// constraints `Σ_k ⟨C_mk, X_k⟩ − w_m δ ≥ rhs` and `Σ_k tr X_k ≤ budget`.
/// `top_eigenvalue(y)` returns `max_k λ_max(Σ_m y_m C_mk)`. Any `y ≥ 0` with
/// `Σ y_m w_m = 1` gives a valid bound; the solver's row multipliers are projected onto that set.
fn slack_upper_bound(duals: &[f64], weights: &[f64], rhs: f64, budget: f64, top_eigenvalue: impl Fn(&[f64]) -> f64) -> Option<f64> {
    let rows = weights.len();
    if duals.len() != rows + 1 {
        return None;
    }
    let mut y: Vec<f64> = duals[..rows].iter().map(|v| v.max(0.0)).collect();
    let norm: f64 = y.iter().zip(weights).map(|(a, w)| a * w).sum();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    y.iter_mut().for_each(|v| *v /= norm);
    let mu = top_eigenvalue(&y).max(0.0);
    Some(mu * budget - rhs * y.iter().sum::<f64>())
}

/// Solves with the configured backend and lets `judge` extract a decision,
/// retrying once with the other backend when the first result is inconclusive.
fn solve_decided<T>(
    problem: &ConicProblem,
    tol: &SolverTolerances,
    mut judge: impl FnMut(&ConicSolution) -> Option<T>,
) -> Result<(T, usize)> {
    let first = solver::solve(problem, tol)?;
    if let Some(v) = judge(&first) {
        return Ok((v, 1));
    }
    let other = match tol.backend {
        Backend::InteriorPoint => Backend::Splitting,
        Backend::Splitting => Backend::InteriorPoint,
    };
    log::debug!("conic solve ended with {:?}; retrying with {:?}", first.status, other);
    let second = solver::solve(problem, &tol.with_backend(other))?;
    if let Some(v) = judge(&second) {
        return Ok((v, 2));
    }
    Err(Error::Solver {
        status: first.status,
        detail: format!(
            "primal residual {:.2e}, gap {:.2e}; fallback backend ended with {:?}",
            first.residuals.primal, first.residuals.gap, second.status
        ),
    })
}

fn usable(sol: &ConicSolution) -> bool {
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Infeasible => true,
        SolveStatus::NumericalFailure | SolveStatus::MaxIterations => {
            sol.residuals.primal <= 1e-5 && sol.residuals.gap <= 1e-5 && sol.residuals.dual <= 1e-5
        }
    }
}

/// Hermitian part with negative eigenvalues clipped.
fn clean_block(x: &CMatrix) -> CMatrix {
    let eig = HermitianEigen::new(x);
    if eig.min() >= 0.0 {
        return hermitian_part(x);
    }
    eig.reconstruct_clipped(0.0)
}

/// Scales identity-metric blocks to total trace one. Spending the whole
/// budget never lowers any SINR, since it shrinks the relative noise.
fn enforce_budget(blocks: Vec<CMatrix>) -> Vec<CMatrix> {
    let total: f64 = blocks.iter().map(trace_re).sum();
    if !(total > 0.0) {
        return blocks;
    }
    blocks.into_iter().map(|x| x * C64::from(1.0 / total)).collect()
}

/// Principal component `√λ1·u1` and rank ratio `λ1 / tr X` (zero vector and 0 for `X = 0`).
pub fn extract_rank_one(x: &CMatrix) -> (CVector, f64) {
    principal_component(x)
}

/// Lowers the rank of a PSD matrix while keeping every `tr(A_i X)` fixed.
///
/// Repeatedly finds a Hermitian `Δ` in the current range that is orthogonal to
/// all functionals and steps along it until an eigenvalue hits zero. Terminates
/// once no such direction exists (generically when `rank² ≤ #functionals`).
fn reduce_rank(x: &CMatrix, functionals: &[CMatrix]) -> CMatrix {
    let target: Vec<f64> = functionals.iter().map(|a| trace_product(a, x)).collect();
    let mut current = x.clone();
    for _ in 0..x.nrows() {
        let eig = HermitianEigen::new(&current);
        let cut = RANK_TOL * eig.max();
        let rank = eig.values.iter().filter(|&&v| v > cut).count();
        if rank <= 1 {
            break;
        }
        let v = CMatrix::from_fn(x.nrows(), rank, |i, c| eig.vectors[(i, c)] * eig.values[c].sqrt());
        let projected: Vec<CMatrix> = functionals.iter().map(|a| v.adjoint() * a * &v).collect();
        let Some(delta) = null_hermitian(&projected, rank) else {
            break;
        };
        let step_eig = HermitianEigen::new(&delta);
        let delta = if step_eig.max() > 0.0 { delta } else { -delta };
        let lmax = HermitianEigen::new(&delta).max();
        if !(lmax > 0.0) {
            break;
        }
        let inner = CMatrix::identity(rank, rank) - delta * C64::from(1.0 / lmax);
        current = clean_block(&(&v * inner * v.adjoint()));
    }
    let preserved = functionals.iter().zip(&target).all(|(a, &t)| {
        let scale = HermitianEigen::new(a).max().abs() * trace_re(x) + t.abs();
        (trace_product(a, &current) - t).abs() <= 1e-8 * scale.max(f64::MIN_POSITIVE)
    });
    if preserved {
        current
    } else {
        x.clone()
    }
}

/// Unit-norm Hermitian `Δ` (n×n) with `tr(B_i Δ) = 0` for all `i`, if one exists.
fn null_hermitian(bs: &[CMatrix], n: usize) -> Option<CMatrix> {
    // Real basis of Hermitian n×n matrices: E_aa, E_ab + E_ba, j(E_ba − E_ab).
    let mut basis = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in a..n {
            let mut e = CMatrix::zeros(n, n);
            if a == b {
                e[(a, a)] = ONE;
                basis.push(e);
            } else {
                e[(a, b)] = ONE;
                e[(b, a)] = ONE;
                basis.push(e.clone());
                let mut f = CMatrix::zeros(n, n);
                f[(a, b)] = C64::new(0.0, -1.0);
                f[(b, a)] = C64::new(0.0, 1.0);
                basis.push(f);
            }
        }
    }
    let k = basis.len();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(k, k);
    let rows: Vec<Vec<f64>> = bs.iter().map(|b| basis.iter().map(|e| trace_product(b, e)).collect()).collect();
    for row in &rows {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] += row[i] * row[j] / (norm * norm);
            }
        }
    }
    let eig = gram.symmetric_eigen();
    let (idx, &smallest) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    if smallest > 1e-12 {
        return None;
    }
    let coeffs = eig.eigenvectors.column(idx);
    let mut delta = CMatrix::zeros(n, n);
    for (c, e) in coeffs.iter().zip(&basis) {
        delta += e * C64::from(*c);
    }
    Some(delta)
}

/// Replaces a block by a rank-one matrix with identical quadratic forms on all
/// users, via spectral factorization of its diagonal sums. Exact whenever every
/// user matrix is a multiple of `a a^H` for a Vandermonde `a` (single-path
/// uniform-array channels); verified, not assumed.
fn toeplitz_purify(x: &CMatrix, instance: &MaxMinInstance) -> Option<CMatrix> {
    let w = toeplitz_spectral_factor(x)?;
    let candidate = outer(&w);
    let trace = trace_re(x);
    if (trace_re(&candidate) - trace).abs() > 1e-9 * trace {
        return None;
    }
    let ok = instance.user_matrices.iter().all(|q| {
        let before = trace_product(q, x);
        let after = quad_form(q, &w);
        let scale = HermitianEigen::new(q).max() * trace;
        (after - before).abs() <= 1e-7 * before.abs() + 1e-10 * scale
    });
    ok.then_some(candidate)
}

/// `num_candidates` sets of `G` unit-norm directions. Candidate 0 holds the
/// principal eigenvectors; the rest are normalized draws `g_k = R_k z`,
/// `X_k = R_k R_k^H`, `z ~ CN(0, I)`.
pub fn gaussian_randomization(
    blocks: &[CMatrix],
    instance: &MaxMinInstance,
    num_candidates: usize,
    rng_seed: u64,
) -> Vec<Vec<CVector>> {
    let d = instance.dim();
    let fallback = || {
        let mut e = CVector::zeros(d);
        e[0] = ONE;
        e
    };
    let unit = |v: CVector| {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            v / C64::from(n)
        } else {
            fallback()
        }
    };
    let mut out = Vec::with_capacity(num_candidates.max(1));
    out.push(blocks.iter().map(|x| unit(extract_rank_one(x).0)).collect());
    let factors: Vec<CMatrix> = blocks.iter().map(psd_factor).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 1..num_candidates {
        out.push(factors.iter().map(|r| unit(gaussian_draw(r, &mut rng))).collect());
    }
    out
}

/// One draw from `CN(0, R R^H)`.
fn gaussian_draw(factor: &CMatrix, rng: &mut impl Rng) -> CVector {
    let z = CVector::from_fn(factor.ncols(), |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    factor * z
}

/// Power-control data in normalized form: group `k` gets budget share `q_k`
/// (`Σ q ≤ 1`), and user `m` sees `q_i · gain[m][i]` from group `i`, noise 1.
struct PowerProblem {
    gains: Vec<Vec<f64>>,
    membership: Vec<usize>,
    costs: Vec<f64>,
    num_groups: usize,
}

impl PowerProblem {
    fn new(directions: &[CVector], instance: &MaxMinInstance) -> Self {
        let costs: Vec<f64> = directions.iter().map(|d| quad_form(&instance.power_metric, d).max(0.0)).collect();
        let snr = instance.power / instance.noise_var;
        let gains = instance
            .user_matrices
            .iter()
            .map(|q| {
                directions
                    .iter()
                    .zip(&costs)
                    .map(|(d, &c)| if c > 0.0 { snr * quad_form(q, d).max(0.0) / c } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            gains,
            membership: instance.membership.clone(),
            costs,
            num_groups: instance.num_groups,
        }
    }

    fn sinr(&self, q: &[f64]) -> Vec<f64> {
        self.gains
            .iter()
            .zip(&self.membership)
            .map(|(g, &k)| {
                let interference: f64 = (0..self.num_groups).filter(|&i| i != k).map(|i| q[i] * g[i]).sum();
                q[k] * g[k] / (interference + 1.0)
            })
            .collect()
    }

    fn worst_gain(&self, k: usize) -> f64 {
        self.gains
            .iter()
            .zip(&self.membership)
            .filter(|(_, &g)| g == k)
            .map(|(g, _)| g[k])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest size of the row's terms over the simplex, so δ is on their scale.
    fn row_weight(&self, m: usize, t: f64) -> f64 {
        let g = &self.gains[m];
        let k = self.membership[m];
        let cross: f64 = (0..g.len()).filter(|&i| i != k).map(|i| g[i]).sum();
        g[k] + t * (1.0 + cross)
    }

    fn lp(&self, t: f64) -> Result<ConicProblem> {
        let mut p = ConicProblem::new(Sense::Maximize);
        for k in 0..self.num_groups {
            p.add_block(BlockKind::NonnegScalar, format!("q{k}"))?;
        }
        let delta = p.add_block(BlockKind::FreeScalar, "delta")?;
        p.set_objective(LinearFunctional::new().scalar(delta, 1.0))?;
        for (m, (g, &k)) in self.gains.iter().zip(&self.membership).enumerate() {
            let mut f = LinearFunctional::new();
            for (i, &gi) in g.iter().enumerate() {
                f = f.scalar(i, if i == k { gi } else { -t * gi });
            }
            p.add_constraint(f.scalar(delta, -self.row_weight(m, t)), Relation::Ge, t)?;
        }
        let mut budget = LinearFunctional::new();
        for k in 0..self.num_groups {
            budget = budget.scalar(k, 1.0);
        }
        p.add_constraint(budget, Relation::Le, 1.0)?;
        Ok(p)
    }
}

/// Clips negative shares and rescales to `Σ q = 1` (full power never hurts).
fn normalize_shares(q: &mut [f64]) {
    for v in q.iter_mut() {
        *v = v.max(0.0);
    }
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter_mut().for_each(|v| *v /= total);
    }
}

struct PowerOutcome {
    shares: Vec<f64>,
    solves: usize,
}

/// Max-min power control by bisection over LP feasibility. Returns `None` when
/// the directions provably cannot exceed `floor`.
fn control_powers(pp: &PowerProblem, tol_t: f64, tol: &SolverTolerances, floor: f64) -> Result<Option<PowerOutcome>> {
    let g = pp.num_groups;
    let worst: Vec<f64> = (0..g).map(|k| pp.worst_gain(k)).collect();
    if worst.iter().any(|&w| !(w > 0.0)) {
        let live = worst.iter().filter(|&&w| w > 0.0).count().max(1) as f64;
        let shares = worst.iter().map(|&w| if w > 0.0 { 1.0 / live } else { 0.0 }).collect();
        return Ok((floor < 0.0).then_some(PowerOutcome {
            shares,
            solves: 0,
        }));
    }
    // Interference-free optimum: equalize q_k · worst_k under Σ q = 1.
    let inv_sum: f64 = worst.iter().map(|w| 1.0 / w).sum();
    let t_free = 1.0 / inv_sum;
    let mut shares: Vec<f64> = worst.iter().map(|w| t_free / w).collect();
    normalize_shares(&mut shares);
    let mut t_lo = min_of(&pp.sinr(&shares));
    if g == 1 {
        return Ok((t_lo > floor).then_some(PowerOutcome {
            shares,
            solves: 0,
        }));
    }
    let mut t_hi = t_free;
    if t_hi <= floor {
        return Ok(None);
    }
    let mut solves = 0;
    let mut probe = (floor > t_lo).then_some(floor);
    let mut steps = 0;
    while t_hi - t_lo > tol_t * t_hi && steps < MAX_BISECTION_STEPS {
        steps += 1;
        let t = probe.take().unwrap_or(if t_lo > 0.0 && t_hi > 4.0 * t_lo {
            (t_lo * t_hi).sqrt()
        } else {
            0.5 * (t_lo + t_hi)
        });
        let judge = |sol: &ConicSolution| {
            if sol.status == SolveStatus::Infeasible {
                return Some((Verdict::Infeasible, None));
            }
            let mut q: Vec<f64> = (0..g).map(|k| sol.scalar(k)).collect();
            normalize_shares(&mut q);
            let value = min_of(&pp.sinr(&q));
            let verdict = if value >= t * (1.0 - BOUNDARY_TOL) {
                Verdict::Feasible
            } else {
                let weights: Vec<f64> = (0..pp.gains.len()).map(|m| pp.row_weight(m, t)).collect();
                let bound = slack_upper_bound(&sol.constraint_duals, &weights, t, 1.0, |y| {
                    (0..g)
                        .map(|k| {
                            pp.gains
                                .iter()
                                .zip(&pp.membership)
                                .zip(y)
                                .map(|((gain, &member), ym)| if member == k { ym * gain[k] } else { -t * ym * gain[k] })
                                .sum::<f64>()
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                });
                verdict_from_slack(sol, g, bound)?
            };
            Some((verdict, Some((value, q))))
        };
        // An undecided probe is treated as infeasible: that only costs
        // optimality, since the returned shares are always evaluated exactly.
        let lpp = pp.lp(t)?;
        let (verdict, point) = match solve_decided(&lpp, tol, judge) {
            Ok(((verdict, point), used)) => {
                solves += used;
                (verdict, point)
            }
            Err(e) => {
                solves += 2;
                log::debug!("power control probe at t={t:.6e} undecided: {e}");
                (Verdict::Infeasible, None)
            }
        };
        if let Some((value, q)) = point {
            if value > t_lo {
                t_lo = value;
                shares = q;
            }
        }
        if verdict == Verdict::Infeasible {
            t_hi = t;
            if t <= floor {
                return Ok(None);
            }
        }
        t_hi = t_hi.max(t_lo);
    }
    Ok((t_lo > floor).then_some(PowerOutcome {
        shares,
        solves,
    }))
}

/// Max-min optimal group powers for fixed unit-norm directions, and the
/// resulting common SINR. A group whose members all have zero gain gets zero
/// power and the value is 0.
pub fn power_control(directions: &[CVector], instance: &MaxMinInstance, tol_t: f64) -> Result<(Vec<f64>, f64)> {
    if directions.len() != instance.num_groups {
        return Err(Error::Config(format!(
            "{} directions for {} groups",
            directions.len(),
            instance.num_groups
        )));
    }
    let pp = PowerProblem::new(directions, instance);
    let outcome = control_powers(&pp, tol_t, &SolverTolerances::default(), -1.0)?
        .expect("a negative floor is always beaten");
    let powers = shares_to_powers(&outcome.shares, &pp.costs, instance.power);
    let beamformers = scale_directions(directions, &powers);
    Ok((powers, min_of(&instance.sinr(&beamformers))))
}

fn shares_to_powers(shares: &[f64], costs: &[f64], budget: f64) -> Vec<f64> {
    shares
        .iter()
        .zip(costs)
        .map(|(&q, &c)| if c > 0.0 { q * budget / c } else { 0.0 })
        .collect()
}

fn scale_directions(directions: &[CVector], powers: &[f64]) -> Vec<CVector> {
    directions.iter().zip(powers).map(|(d, &p)| d * C64::from(p.sqrt())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMinOptions {
    /// Relative bisection tolerance, for both the relaxation and power control.
    pub tol_t: f64,
    pub num_candidates: usize,
    /// Blocks with `λ1/tr` at or above this skip randomization.
    pub rank_threshold: f64,
    pub seed: u64,
    pub solver: SolverTolerances,
}

impl Default for MaxMinOptions {
    fn default() -> Self {
        Self {
            tol_t: 1e-3,
            num_candidates: 200,
            rank_threshold: 0.999,
            seed: 0,
            solver: SolverTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recovery {
    /// Nothing to transmit (zero power or zero channels).
    Trivial,
    /// Principal eigenvectors of (rank-one) blocks.
    Principal,
    /// Best of `candidates` Gaussian draws; `best` is its index (0 = principal vectors).
    Randomization { candidates: usize, best: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinDiagnostics {
    pub bisection_iterations: usize,
    /// Conic solves across bisection and power control.
    pub conic_solves: usize,
    /// Rank ratios of the blocks as returned by the solver, before rank reduction.
    pub raw_rank_ratios: Vec<f64>,
    /// Lower end of the final bisection bracket.
    pub relaxed_lower: f64,
    pub reduced_dimension: usize,
    pub recovery: Recovery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinSolution {
    /// Upper bound on the relaxed optimum `t_SDR`.
    pub relaxed_value: f64,
    pub covariance_blocks: Vec<CMatrix>,
    pub beamformers: Vec<CVector>,
    /// Min-SINR achieved by `beamformers`.
    pub achieved_value: f64,
    pub rank_ratios: Vec<f64>,
    /// Beamformers respect the power budget.
    pub feasible: bool,
    pub diagnostics: MaxMinDiagnostics,
}

/// Relaxation, rank-one recovery and power control end to end.
pub fn solve_maxmin(instance: &MaxMinInstance, opts: &MaxMinOptions) -> Result<MaxMinSolution> {
    let (bisection, reduction) = bisect_reduced(instance, opts.tol_t, &opts.solver)?;
    let g = instance.num_groups;
    let d = instance.dim();
    let Some((reduction, reduced_blocks)) = reduction else {
        let beamformers = vec![CVector::zeros(d); g];
        return Ok(MaxMinSolution {
            relaxed_value: 0.0,
            covariance_blocks: bisection.blocks,
            achieved_value: min_of(&instance.sinr(&beamformers)),
            beamformers,
            rank_ratios: vec![0.0; g],
            feasible: true,
            diagnostics: MaxMinDiagnostics {
                bisection_iterations: 0,
                conic_solves: 0,
                raw_rank_ratios: vec![0.0; g],
                relaxed_lower: 0.0,
                reduced_dimension: 0,
                recovery: Recovery::Trivial,
            },
        });
    };
    let raw_rank_ratios: Vec<f64> = bisection.blocks.iter().map(|x| extract_rank_one(x).1).collect();

    // Every SINR depends on the blocks only through tr(Q_m X_k) and tr(X_k).
    let red = &reduction.reduced;
    let r = red.dim();
    let mut functionals = red.user_matrices.clone();
    functionals.push(CMatrix::identity(r, r));
    let mut blocks: Vec<CMatrix> = reduced_blocks
        .iter()
        .map(|z| reduction.lift(&reduce_rank(z, &functionals), instance.power))
        .collect();
    if instance.metric_is_identity() {
        for x in blocks.iter_mut() {
            if extract_rank_one(x).1 < opts.rank_threshold {
                if let Some(purified) = toeplitz_purify(x, instance) {
                    *x = purified;
                }
            }
        }
    }
    let rank_ratios: Vec<f64> = blocks.iter().map(|x| extract_rank_one(x).1).collect();

    let tight = rank_ratios
        .iter()
        .zip(&blocks)
        .all(|(&ratio, x)| ratio >= opts.rank_threshold || trace_re(x) == 0.0);
    let count = if tight { 1 } else { opts.num_candidates.max(1) };
    let candidates = gaussian_randomization(&blocks, instance, count, opts.seed);

    let mut solves = bisection.conic_solves;
    let mut best: Option<(usize, Vec<CVector>, f64)> = None;
    for (index, directions) in candidates.iter().enumerate() {
        let pp = PowerProblem::new(directions, instance);
        let floor = best.as_ref().map_or(-1.0, |b| b.2);
        let outcome = control_powers(&pp, opts.tol_t, &opts.solver, floor)?;
        let Some(outcome) = outcome else {
            continue;
        };
        solves += outcome.solves;
        let powers = shares_to_powers(&outcome.shares, &pp.costs, instance.power);
        let beamformers = scale_directions(directions, &powers);
        let value = min_of(&instance.sinr(&beamformers));
        if best.as_ref().is_none_or(|b| value > b.2) {
            best = Some((index, beamformers, value));
        }
    }
    let (best_index, beamformers, achieved_value) = best.expect("candidate 0 always beats a negative floor");
    let recovery = if tight {
        Recovery::Principal
    } else {
        Recovery::Randomization {
            candidates: candidates.len(),
            best: best_index,
        }
    };
    let used = instance.power_used(&beamformers);
    let finite = beamformers.iter().all(|w| w.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    let feasible = finite && used <= instance.power * (1.0 + 1e-6);
    if achieved_value > bisection.t_hi * (1.0 + 1e-4) {
        log::warn!(
            "achieved min-SINR {achieved_value:e} exceeds the relaxation bound {:e}",
            bisection.t_hi
        );
    }
    Ok(MaxMinSolution {
        relaxed_value: bisection.t_hi,
        covariance_blocks: blocks,
        beamformers,
        achieved_value,
        rank_ratios,
        feasible,
        diagnostics: MaxMinDiagnostics {
            bisection_iterations: bisection.iterations,
            conic_solves: solves,
            raw_rank_ratios,
            relaxed_lower: bisection.t_lo,
            reduced_dimension: bisection.reduced_dimension,
            recovery,
        },
    })
}
