//! Dense complex linear-algebra helpers shared by the solver and the precoder design.
//!
//! Everything here works on small dense matrices (dimension well under a few
//! hundred), so the routines favour clarity over blocking or reuse of buffers.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[inline]
pub fn cis(theta: f64) -> C64 {
    C64::new(theta.cos(), theta.sin())
}

/// Largest entry of `|M - M^H|`.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Errors unless `m` is square and Hermitian to a tolerance relative to its largest entry.
pub fn check_hermitian(m: &CMatrix, context: &str) -> Result<()> {
    let asymmetry = hermitian_asymmetry(m);
    let scale = m.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    if !asymmetry.is_finite() || asymmetry > 1e-10 * scale.max(1.0) {
        return Err(Error::NotHermitian {
            context: context.to_string(),
            asymmetry,
        });
    }
    Ok(())
}

/// Projects onto the Hermitian part, `(M + M^H)/2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self {
                values: Vec::new(),
                vectors: CMatrix::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(hermitian_part(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Reassembles `Σ λ_i u_i u_i^H`, clipping eigenvalues below `floor`.
    pub fn reconstruct_clipped(&self, floor: f64) -> CMatrix {
        let n = self.vectors.nrows();
        let mut out = CMatrix::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            if lambda <= floor {
                continue;
            }
            let u = self.vectors.column(k);
            out += (&u * u.adjoint()).scale(lambda);
        }
        out
    }
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian matrix.
///
/// The spectrum of the result is that of `H` with every eigenvalue doubled in
/// multiplicity, and `tr(H1 H2) = tr(embed(H1) embed(H2)) / 2`.
pub fn embed_complex(h: &CMatrix) -> Result<DMatrix<f64>> {
    check_hermitian(h, "embedded block")?;
    Ok(embed_unchecked(h))
}

pub(crate) fn embed_unchecked(h: &CMatrix) -> DMatrix<f64> {
    let d = h.nrows();
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + d, j + d)] = z.re;
            out[(i, j + d)] = -z.im;
            out[(i + d, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`embed_complex`] on arbitrary real symmetric input: averages the
/// two copies, which is the orthogonal projection onto embedded matrices.
pub fn unembed(x: &DMatrix<f64>) -> CMatrix {
    let d = x.nrows() / 2;
    CMatrix::from_fn(d, d, |i, j| {
        let re = 0.5 * (x[(i, j)] + x[(i + d, j + d)]);
        let im = 0.5 * (x[(i + d, j)] - x[(i, j + d)]);
        C64::new(re, im)
    })
}

pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// `Re(v^H M v)`.
pub fn quad_form(m: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(m * v)).re
}

/// `Re tr(A B)`, without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Principal component `√λ1 · u1` of a Hermitian PSD matrix and its rank ratio `λ1 / tr`.
///
/// A zero (or numerically negative) matrix yields the zero vector and ratio 0.
pub fn principal_component(x: &CMatrix) -> (CVector, f64) {
    let n = x.nrows();
    let eig = HermitianEigen::new(x);
    let lambda = eig.max();
    let trace: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    if n == 0 || lambda <= 0.0 || trace <= 0.0 {
        return (CVector::zeros(n), 0.0);
    }
    let v = eig.vectors.column(0).into_owned().scale(lambda.sqrt());
    (v, (lambda / trace).min(1.0))
}

/// A factor `R` with `X = R R^H`, negative eigenvalues clipped to zero.
pub fn psd_factor(x: &CMatrix) -> CMatrix {
    let eig = HermitianEigen::new(x);
    let n = x.nrows();
    let mut r = eig.vectors.clone();
    for (k, &lambda) in eig.values.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            r[(i, k)] *= s;
        }
    }
    r
}

/// Orthonormal basis of the numerical range of a Hermitian PSD matrix.
pub fn range_basis(x: &CMatrix, rel_tol: f64) -> CMatrix {
    let eig = HermitianEigen::new(x);
    let cut = rel_tol * eig.max().max(0.0);
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&k| eig.values[k] > cut && eig.values[k] > 0.0)
        .collect();
    CMatrix::from_fn(x.nrows(), keep.len(), |i, c| eig.vectors[(i, keep[c])])
}

/// Roots of `Σ coeffs[k] z^k` (ascending powers), via the companion matrix and a
/// couple of Newton polishing steps. Returns `None` for a degenerate polynomial.
pub fn polynomial_roots(coeffs: &[C64]) -> Option<Vec<C64>> {
    let degree = coeffs.len().checked_sub(1)?;
    let lead = coeffs[degree];
    if degree == 0 || lead.norm() == 0.0 {
        return if degree == 0 { Some(Vec::new()) } else { None };
    }
    let mut companion = CMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = ONE;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -coeffs[i] / lead;
    }
    let schur = Schur::try_new(companion, f64::EPSILON, 10_000)?;
    let (_, t) = schur.unpack();
    let mut roots: Vec<C64> = (0..degree).map(|i| t[(i, i)]).collect();
    for root in roots.iter_mut() {
        for _ in 0..2 {
            let (p, dp) = horner_with_derivative(coeffs, *root);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            if !step.re.is_finite() || !step.im.is_finite() || step.norm() > 1e-6 * (1.0 + root.norm()) {
                break;
            }
            *root -= step;
        }
    }
    Some(roots)
}

fn horner_with_derivative(coeffs: &[C64], z: C64) -> (C64, C64) {
    let mut p = ZERO;
    let mut dp = ZERO;
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Rank-one vector `w` whose diagonal sums match those of `X`:
/// `Σ_i w_i conj(w_{i+k}) = Σ_i X[i, i+k]` for every lag `k`.
///
/// Consequently `a^H X a = |a^H w|²` for every Vandermonde vector
/// `a = [1, z, …, z^{n-1}]` with `|z| = 1`, which is what makes the
/// relaxation of steering-vector problems tight. The factor is obtained from
/// the roots of the (nonnegative) trigonometric polynomial of the lag sums.
/// Returns `None` when the root pairing fails or the reconstruction does not
/// reproduce the lag sums to `1e-7` relative.
pub fn toeplitz_spectral_factor(x: &CMatrix) -> Option<CVector> {
    let n = x.nrows();
    if n == 0 {
        return None;
    }
    let lag_sum = |k: usize| -> C64 { (0..n - k).map(|i| x[(i, i + k)]).sum() };
    let lags: Vec<C64> = (0..n).map(lag_sum).collect();
    let energy = lags[0].re;
    if !(energy > 0.0) {
        return None;
    }
    if n == 1 {
        return Some(CVector::from_element(1, C64::new(energy.sqrt(), 0.0)));
    }

    // Trailing lags that vanish reduce the degree; those roots sit at 0 / ∞.
    let mut top = n - 1;
    while top > 0 && lags[top].norm() <= 1e-14 * energy {
        top -= 1;
    }
    let shift = n - 1 - top;
    let mut factor = vec![ZERO; n];
    if top == 0 {
        factor[0] = C64::new(energy.sqrt(), 0.0);
    } else {
        // z^top · Σ_{k=-top}^{top} lags_k z^k, lags_{-k} = conj(lags_k)
        let coeffs: Vec<C64> = (0..=2 * top)
            .map(|j| {
                if j >= top {
                    lags[j - top]
                } else {
                    lags[top - j].conj()
                }
            })
            .collect();
        let roots = polynomial_roots(&coeffs)?;
        let chosen = select_minimum_phase_roots(&roots, top)?;
        // monic expansion of Π (z - ζ)
        let mut poly = vec![ONE];
        for zeta in chosen {
            let mut next = vec![ZERO; poly.len() + 1];
            for (i, &c) in poly.iter().enumerate() {
                next[i + 1] += c;
                next[i] -= c * zeta;
            }
            poly = next;
        }
        for (i, c) in poly.into_iter().enumerate() {
            factor[i + shift] = c;
        }
    }

    let norm2: f64 = factor.iter().map(|c| c.norm_sqr()).sum();
    if !(norm2 > 0.0) || !norm2.is_finite() {
        return None;
    }
    let scale = (energy / norm2).sqrt();
    // the polynomial Σ conj(w_i) z^i has the chosen roots
    let mut w = CVector::from_iterator(n, factor.iter().map(|c| c.conj() * scale));
    // High-degree root finding loses digits; Newton on the lag equations recovers them.
    refine_lag_factor(&mut w, &lags);

    for k in 0..n {
        let r: C64 = (0..n - k).map(|i| w[i] * w[i + k].conj()).sum();
        if (r - lags[k]).norm() > 1e-7 * energy {
            return None;
        }
    }
    Some(w)
}

fn lag_sums_of(w: &CVector) -> Vec<C64> {
    let n = w.len();
    (0..n)
        .map(|k| (0..n - k).map(|i| w[i] * w[i + k].conj()).sum())
        .collect()
}

/// Gauss-Newton on `Σ_i w_i conj(w_{i+k}) = lags_k`, minimum-norm steps.
fn refine_lag_factor(w: &mut CVector, lags: &[C64]) {
    let n = w.len();
    let energy = lags[0].re;
    let rows = 2 * n - 1;
    let misfit = |r: &[C64]| -> DVector<f64> {
        let mut out = DVector::zeros(rows);
        for k in 0..n {
            let d = lags[k] - r[k];
            out[k] = d.re;
            if k > 0 {
                out[n + k - 1] = d.im;
            }
        }
        out
    };
    let mut res = misfit(&lag_sums_of(w));
    for _ in 0..30 {
        if res.amax() <= 1e-13 * energy {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(rows, 2 * n);
        for j in 0..n {
            for k in 0..n {
                // derivative of r_k along Re w_j and Im w_j
                let mut d_re = ZERO;
                let mut d_im = ZERO;
                if j + k < n {
                    let c = w[j + k].conj();
                    d_re += c;
                    d_im += C64::new(0.0, 1.0) * c;
                }
                if j >= k {
                    let c = w[j - k];
                    d_re += c;
                    d_im -= C64::new(0.0, 1.0) * c;
                }
                jac[(k, j)] = d_re.re;
                jac[(k, n + j)] = d_im.re;
                if k > 0 {
                    jac[(n + k - 1, j)] = d_re.im;
                    jac[(n + k - 1, n + j)] = d_im.im;
                }
            }
        }
        let Ok(step) = jac.svd(true, true).solve(&res, 1e-12 * energy.sqrt()) else {
            return;
        };
        let trial = CVector::from_fn(n, |j, _| w[j] + C64::new(step[j], step[n + j]));
        let trial_res = misfit(&lag_sums_of(&trial));
        if trial_res.amax() >= res.amax() {
            return;
        }
        *w = trial;
        res = trial_res;
    }
}

/// Picks one root from each reflected pair `(ζ, 1/conj ζ)`: all roots strictly
/// inside the unit circle, plus one representative per pair of roots on it.
fn select_minimum_phase_roots(roots: &[C64], count: usize) -> Option<Vec<C64>> {
    const BAND: f64 = 1e-5;
    let mut inside = Vec::with_capacity(count);
    let mut near = Vec::new();
    for &r in roots {
        let m = r.norm();
        if m < 1.0 - BAND {
            inside.push(r);
        } else if m <= 1.0 + BAND {
            near.push(r);
        }
    }
    if near.len() % 2 != 0 {
        return None;
    }
    near.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    // Pair neighbours on the circle, trying both cyclic alignments and keeping the tighter one.
    if !near.is_empty() {
        let m = near.len();
        let spread = |offset: usize| -> f64 {
            (0..m / 2)
                .map(|p| (near[(2 * p + offset) % m] - near[(2 * p + 1 + offset) % m]).norm())
                .fold(0.0, f64::max)
        };
        let offset = if m > 2 && spread(1) < spread(0) { 1 } else { 0 };
        for p in 0..m / 2 {
            let a = near[(2 * p + offset) % m];
            let b = near[(2 * p + 1 + offset) % m];
            let mid = (a + b) * 0.5;
            let unit = if mid.norm() > 0.0 { mid / mid.norm() } else { a };
            inside.push(unit);
        }
    }
    if inside.len() != count {
        return None;
    }
    Some(inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut impl Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        hermitian_part(&a)
    }

    fn vandermonde(n: usize, psi: f64) -> CVector {
        CVector::from_fn(n, |i, _| cis(i as f64 * psi))
    }

    #[test]
    fn embed_identity_is_identity() {
        let e = embed_complex(&CMatrix::identity(2, 2)).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn embed_pauli_y_doubles_spectrum() {
        let j = C64::new(0.0, 1.0);
        let y = CMatrix::from_row_slice(2, 2, &[ZERO, -j, j, ZERO]);
        let e = embed_complex(&y).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(e).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_random_spectrum_and_trace_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h1 = random_hermitian(3, &mut rng);
        let h2 = random_hermitian(3, &mut rng);
        let e1 = embed_complex(&h1).unwrap();
        let e2 = embed_complex(&h2).unwrap();
        let direct = HermitianEigen::new(&h1).values;
        let mut embedded: Vec<f64> = SymmetricEigen::new(e1.clone()).eigenvalues.iter().copied().collect();
        embedded.sort_by(|a, b| b.total_cmp(a));
        for k in 0..3 {
            assert!((embedded[2 * k] - direct[k]).abs() < 1e-12);
            assert!((embedded[2 * k + 1] - direct[k]).abs() < 1e-12);
        }
        let lhs = trace_product(&h1, &h2);
        let rhs = 0.5 * (&e1 * &e2).trace();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!((unembed(&e1) - &h1).norm() < 1e-15);
    }

    #[test]
    fn embed_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(embed_complex(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn principal_component_of_rank_one_and_identity() {
        let v = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.25)]);
        let (p, ratio) = principal_component(&outer(&v));
        assert!((ratio - 1.0).abs() < 1e-12);
        // equal up to a global phase
        assert!((p.dotc(&v).norm() - v.norm_squared()).abs() < 1e-10);
        let (_, ratio) = principal_component(&CMatrix::identity(2, 2));
        assert!((ratio - 0.5).abs() < 1e-12);
        let (z, ratio) = principal_component(&CMatrix::zeros(3, 3));
        assert_eq!(ratio, 0.0);
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn eigen_reconstruction_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = CMatrix::from_fn(4, 4, |_, _| C64::new(rng.random::<f64>(), rng.random::<f64>()));
        let x = &r * r.adjoint();
        let eig = HermitianEigen::new(&x);
        assert!((eig.reconstruct_clipped(f64::NEG_INFINITY) - &x).norm() < 1e-10);
        let f = psd_factor(&x);
        assert!((&f * f.adjoint() - &x).norm() < 1e-10);
    }

    #[test]
    fn roots_of_known_polynomial() {
        // (z - 1)(z + 2)(z - i) = z^3 + (1 - i) z^2 + (-2 - i) z + 2i
        let i = C64::new(0.0, 1.0);
        let coeffs = [2.0 * i, C64::new(-2.0, -1.0), ONE - i, ONE];
        let mut roots = polynomial_roots(&coeffs).unwrap();
        roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let want = [C64::new(-2.0, 0.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)];
        for (r, w) in roots.iter().zip(want) {
            assert!((r - w).norm() < 1e-10, "{r} vs {w}");
        }
    }

    #[test]
    fn spectral_factor_preserves_vandermonde_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[1usize, 2, 4, 8, 16, 64] {
            let rank = n.min(3);
            let r = CMatrix::from_fn(n, rank, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let x = &r * r.adjoint();
            let w = toeplitz_spectral_factor(&x).unwrap_or_else(|| panic!("factorization n={n}"));
            assert!((w.norm_squared() - trace_re(&x)).abs() < 1e-8 * trace_re(&x));
            for s in 0..50 {
                let psi = -std::f64::consts::PI + s as f64 * 0.1257;
                let a = vandermonde(n, psi);
                let lhs = quad_form(&x, &a);
                let rhs = a.dotc(&w).norm_sqr();
                assert!((lhs - rhs).abs() < 1e-7 * trace_re(&x) * n as f64, "n={n} psi={psi}");
            }
        }
    }

    #[test]
    fn spectral_factor_handles_spectral_nulls() {
        // rank-one input built from a Vandermonde vector has a polynomial with
        // double roots on the unit circle
        let n = 8;
        let v = vandermonde(n, 0.7) + vandermonde(n, -1.9);
        let x = outer(&v);
        let w = toeplitz_spectral_factor(&x).expect("factorization");
        for s in 0..40 {
            let a = vandermonde(n, s as f64 * 0.157);
            assert!((quad_form(&x, &a) - a.dotc(&w).norm_sqr()).abs() < 1e-6 * trace_re(&x) * n as f64);
        }
    }
}
