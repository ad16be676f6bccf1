//! Small dense conic programs over Hermitian-PSD blocks and scalar blocks.
//!
//! A [`ConicProblem`] has a linear objective and linear constraints written as
//! trace pairings `Re tr(C X)` against Hermitian coefficient matrices for PSD
//! blocks and plain products for scalar blocks. Complex blocks are carried by
//! the real symmetric embedding from [`crate::linalg::embed_complex`]; the
//! factor one half that keeps the trace pairing exact is applied when the
//! problem is lowered to the internal standard form.
//!
//! Two backends implement the same contract: a primal-dual interior-point
//! method with Nesterov–Todd scaling ([`Backend::InteriorPoint`], the default)
//! and an over-relaxed operator-splitting scheme alternating between the
//! affine constraint set and the cone product ([`Backend::Splitting`]).

mod admm;
mod ipm;
mod standard;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{check_hermitian, trace_product, CMatrix, HermitianEigen};

pub use standard::svec_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Hermitian positive semidefinite matrix of the given dimension.
    PsdHermitian(usize),
    NonnegScalar,
    /// Unrestricted scalar; used for slack variables that may go negative.
    FreeScalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coef {
    Matrix(CMatrix),
    Scalar(f64),
}

/// `Σ_b <coef_b, block_b>`, with `<C, X> = Re tr(C X)` for matrix blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearFunctional {
    terms: Vec<(usize, Coef)>,
}

impl LinearFunctional {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(mut self, block: usize, coef: CMatrix) -> Self {
        self.terms.push((block, Coef::Matrix(coef)));
        self
    }

    pub fn scalar(mut self, block: usize, coef: f64) -> Self {
        self.terms.push((block, Coef::Scalar(coef)));
        self
    }

    pub fn terms(&self) -> &[(usize, Coef)] {
        &self.terms
    }

    /// `Σ_b ‖coef_b‖·‖block_b‖`, bounding every term of [`Self::evaluate`]; the
    /// scale against which cancellation between terms is judged.
    pub fn magnitude(&self, values: &[BlockValue]) -> f64 {
        self.terms
            .iter()
            .map(|(b, coef)| match (coef, &values[*b]) {
                (Coef::Matrix(c), BlockValue::Matrix(x)) => c.norm() * x.norm(),
                (Coef::Scalar(c), BlockValue::Scalar(x)) => (c * x).abs(),
                _ => 0.0,
            })
            .sum()
    }

    pub fn evaluate(&self, values: &[BlockValue]) -> f64 {
        self.terms
            .iter()
            .map(|(b, coef)| match (coef, &values[*b]) {
                (Coef::Matrix(c), BlockValue::Matrix(x)) => trace_product(c, x),
                (Coef::Scalar(c), BlockValue::Scalar(x)) => c * x,
                _ => 0.0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub functional: LinearFunctional,
    pub relation: Relation,
    pub bound: f64,
}

impl Constraint {
    /// Amount by which `values` violate the constraint (0 when satisfied).
    pub fn violation(&self, values: &[BlockValue]) -> f64 {
        let v = self.functional.evaluate(values);
        match self.relation {
            Relation::Le => (v - self.bound).max(0.0),
            Relation::Ge => (self.bound - v).max(0.0),
            Relation::Eq => (v - self.bound).abs(),
        }
    }

    /// Violation relative to `1 + |bound| + Σ‖coef‖·‖block‖`.
    pub fn relative_violation(&self, values: &[BlockValue]) -> f64 {
        self.violation(values) / (1.0 + self.bound.abs() + self.functional.magnitude(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    blocks: Vec<BlockSpec>,
    sense: Sense,
    objective: LinearFunctional,
    constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            blocks: Vec::new(),
            sense,
            objective: LinearFunctional::new(),
            constraints: Vec::new(),
        }
    }

    pub fn add_block(&mut self, kind: BlockKind, label: impl Into<String>) -> Result<usize> {
        if let BlockKind::PsdHermitian(0) = kind {
            return Err(Error::Config("PSD block dimension must be at least 1".into()));
        }
        self.blocks.push(BlockSpec {
            kind,
            label: label.into(),
        });
        Ok(self.blocks.len() - 1)
    }

    pub fn set_objective(&mut self, objective: LinearFunctional) -> Result<()> {
        self.check_functional(&objective, "objective")?;
        self.objective = objective;
        Ok(())
    }

    pub fn add_constraint(&mut self, functional: LinearFunctional, relation: Relation, bound: f64) -> Result<usize> {
        let index = self.constraints.len();
        self.check_functional(&functional, &format!("constraint {index}"))?;
        if !bound.is_finite() {
            return Err(Error::Config(format!("constraint {index} has a non-finite bound")));
        }
        self.constraints.push(Constraint {
            functional,
            relation,
            bound,
        });
        Ok(index)
    }

    fn check_functional(&self, f: &LinearFunctional, context: &str) -> Result<()> {
        for (b, coef) in &f.terms {
            let spec = self
                .blocks
                .get(*b)
                .ok_or_else(|| Error::Config(format!("{context} references missing block {b}")))?;
            match (spec.kind, coef) {
                (BlockKind::PsdHermitian(d), Coef::Matrix(m)) => {
                    if m.nrows() != d || m.ncols() != d {
                        return Err(Error::Config(format!(
                            "{context}: {}x{} coefficient for {d}x{d} block `{}`",
                            m.nrows(),
                            m.ncols(),
                            spec.label
                        )));
                    }
                    check_hermitian(m, &format!("{context}, block `{}`", spec.label))?;
                    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                        return Err(Error::Config(format!("{context}: non-finite coefficient")));
                    }
                }
                (BlockKind::NonnegScalar | BlockKind::FreeScalar, Coef::Scalar(s)) => {
                    if !s.is_finite() {
                        return Err(Error::Config(format!("{context}: non-finite coefficient")));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "{context}: coefficient kind does not match block `{}`",
                        spec.label
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &LinearFunctional {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Same problem with the objective and every bound multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |f: &LinearFunctional| LinearFunctional {
            terms: f
                .terms
                .iter()
                .map(|(b, c)| {
                    let c = match c {
                        Coef::Matrix(m) => Coef::Matrix(m.scale(factor)),
                        Coef::Scalar(s) => Coef::Scalar(s * factor),
                    };
                    (*b, c)
                })
                .collect(),
        };
        Self {
            blocks: self.blocks.clone(),
            sense: self.sense,
            objective: scale(&self.objective),
            constraints: self
                .constraints
                .iter()
                .map(|c| Constraint {
                    functional: c.functional.clone(),
                    relation: c.relation,
                    bound: c.bound * factor,
                })
                .collect(),
        }
    }

    /// Sparse triplet listing for offline inspection.
    ///
    /// ```text
    /// blocks
    /// block <label> <psd|nonneg|free> <dim>
    /// coef <constraint#|obj> <block> <row> <col> <re> <im>
    /// bound <constraint#> <<=|=|>=> <value>
    /// ```
    /// Only nonzero coefficient entries are listed; scalar blocks use row = col = 0.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::from("blocks\n");
        for b in &self.blocks {
            let (kind, dim) = match b.kind {
                BlockKind::PsdHermitian(d) => ("psd", d),
                BlockKind::NonnegScalar => ("nonneg", 1),
                BlockKind::FreeScalar => ("free", 1),
            };
            let _ = writeln!(out, "block {} {} {}", b.label, kind, dim);
        }
        let mut dump = |tag: &str, f: &LinearFunctional| {
            for (b, coef) in &f.terms {
                let label = &self.blocks[*b].label;
                match coef {
                    Coef::Matrix(m) => {
                        for i in 0..m.nrows() {
                            for j in 0..m.ncols() {
                                let z = m[(i, j)];
                                if z.re != 0.0 || z.im != 0.0 {
                                    let _ = writeln!(out, "coef {tag} {label} {i} {j} {:e} {:e}", z.re, z.im);
                                }
                            }
                        }
                    }
                    Coef::Scalar(s) => {
                        if *s != 0.0 {
                            let _ = writeln!(out, "coef {tag} {label} 0 0 {:e} 0e0", s);
                        }
                    }
                }
            }
        };
        dump("obj", &self.objective);
        for (i, c) in self.constraints.iter().enumerate() {
            dump(&i.to_string(), &c.functional);
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(out, "bound {i} {} {:e}", c.relation.symbol(), c.bound);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Matrix(CMatrix),
    Scalar(f64),
}

impl BlockValue {
    pub fn as_matrix(&self) -> Option<&CMatrix> {
        match self {
            BlockValue::Matrix(m) => Some(m),
            BlockValue::Scalar(_) => None,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            BlockValue::Scalar(s) => Some(*s),
            BlockValue::Matrix(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// Largest constraint violation, relative to `1 + |bound| + Σ‖coef‖·‖block‖`.
    pub primal: f64,
    /// Dual residual relative to the objective scale.
    pub dual: f64,
    /// `|primal − dual| / (1 + |primal| + |dual|)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub block_values: Vec<BlockValue>,
    pub objective_value: f64,
    /// Dual bound on the optimum: an upper bound when maximizing, lower when minimizing.
    pub dual_bound: f64,
    pub residuals: Residuals,
    /// Multiplier of each constraint for `max/min objective` in the Lagrangian
    /// `objective + Σ yᵢ (functionalᵢ − boundᵢ)` when maximizing (`yᵢ ≥ 0` on `>=` rows)
    /// and `objective − Σ yᵢ (functionalᵢ − boundᵢ)` when minimizing. Empty when unavailable.
    pub constraint_duals: Vec<f64>,
    pub iterations: usize,
    /// Optimal slack of the relaxed feasibility problem when the status is `Infeasible` (negative).
    pub infeasibility_margin: Option<f64>,
}

impl ConicSolution {
    pub fn matrix(&self, block: usize) -> &CMatrix {
        self.block_values[block].as_matrix().expect("matrix block")
    }

    pub fn scalar(&self, block: usize) -> f64 {
        self.block_values[block].as_scalar().expect("scalar block")
    }

    /// Smallest eigenvalue over all PSD blocks (`+∞` if there are none).
    pub fn min_psd_eigenvalue(&self) -> f64 {
        self.block_values
            .iter()
            .filter_map(BlockValue::as_matrix)
            .map(|m| HermitianEigen::new(m).min())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    InteriorPoint,
    Splitting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    pub feas: f64,
    pub gap: f64,
    pub max_iterations: usize,
    pub backend: Backend,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feas: 1e-7,
            gap: 1e-6,
            max_iterations: 50_000,
            backend: Backend::InteriorPoint,
        }
    }
}

impl SolverTolerances {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }
}

/// Raw backend output in the lowered variable space.
pub(crate) struct BackendOutput {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub dual_objective: f64,
    pub dual_residual: f64,
    /// Internal equality multipliers, empty when unavailable.
    pub y: Vec<f64>,
    pub iterations: usize,
}

/// Solves `problem`; an `Infeasible` status comes with the (negative) optimal
/// slack of the relaxed problem in `infeasibility_margin`.
pub fn solve(problem: &ConicProblem, tol: &SolverTolerances) -> Result<ConicSolution> {
    let lowered = standard::StandardForm::lower(problem);
    let raw = run_backend(&lowered, tol);
    let solution = lowered.lift(problem, &raw);
    if solution.status == SolveStatus::Optimal {
        return Ok(solution);
    }

    // Decide between infeasibility and a solver breakdown with the slack form.
    let phase_one = slack_problem(problem)?;
    let lowered_one = standard::StandardForm::lower(&phase_one);
    let raw_one = run_backend(&lowered_one, tol);
    let slack_solution = lowered_one.lift(&phase_one, &raw_one);
    if slack_solution.status == SolveStatus::Optimal {
        let margin = slack_solution.objective_value;
        if margin < -tol.feas {
            return Ok(ConicSolution {
                status: SolveStatus::Infeasible,
                infeasibility_margin: Some(margin),
                ..solution
            });
        }
    }
    Ok(solution)
}

fn run_backend(lowered: &standard::StandardForm, tol: &SolverTolerances) -> BackendOutput {
    match tol.backend {
        Backend::InteriorPoint => ipm::solve(lowered, tol),
        Backend::Splitting => admm::solve(lowered, tol),
    }
}

/// `max δ` with every constraint loosened by `δ` (tightened when `δ > 0`), `δ ≤ 1`.
fn slack_problem(problem: &ConicProblem) -> Result<ConicProblem> {
    let mut p = ConicProblem::new(Sense::Maximize);
    for b in &problem.blocks {
        p.add_block(b.kind, b.label.clone())?;
    }
    let delta = p.add_block(BlockKind::FreeScalar, "slack")?;
    p.set_objective(LinearFunctional::new().scalar(delta, 1.0))?;
    for c in &problem.constraints {
        let with = |sign: f64| {
            let mut f = c.functional.clone();
            f.terms.push((delta, Coef::Scalar(sign)));
            f
        };
        match c.relation {
            Relation::Ge => {
                p.add_constraint(with(-1.0), Relation::Ge, c.bound)?;
            }
            Relation::Le => {
                p.add_constraint(with(1.0), Relation::Le, c.bound)?;
            }
            Relation::Eq => {
                p.add_constraint(with(-1.0), Relation::Ge, c.bound)?;
                p.add_constraint(with(1.0), Relation::Le, c.bound)?;
            }
        }
    }
    p.add_constraint(LinearFunctional::new().scalar(delta, 1.0), Relation::Le, 1.0)?;
    Ok(p)
}
