use proptest::prelude::*;

use hybridcast::channel::{rate_per_user, sinr_for_beamformers, ula_response, ArrayGeometry};
use hybridcast::linalg::{cis, embed_complex, outer, trace_product, C64, CMatrix, CVector, HermitianEigen};
use hybridcast::sdr::{power_control, MaxMinInstance};
use hybridcast::solver::{solve, BlockKind, ConicProblem, LinearFunctional, Relation, Sense, SolverTolerances};

fn cvector(n: usize) -> impl Strategy<Value = CVector> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
        .prop_map(move |v| CVector::from_iterator(n, v.into_iter().map(|(re, im)| C64::new(re, im))))
}

fn hermitian(n: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n * n).prop_map(move |v| {
        let a = CMatrix::from_iterator(n, n, v.into_iter().map(|(re, im)| C64::new(re, im)));
        (&a + a.adjoint()) * C64::from(0.5)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ula_response_has_unit_norm(aod in 0.0..std::f64::consts::TAU, n in 1usize..65) {
        let a = ula_response(aod, &ArrayGeometry::half_wavelength(n).unwrap());
        prop_assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_doubles_spectrum_and_halves_trace(a in hermitian(4), b in hermitian(4)) {
        let (ea, eb) = (embed_complex(&a).unwrap(), embed_complex(&b).unwrap());
        let complex = HermitianEigen::new(&a).values;
        let mut real: Vec<f64> = ea.clone().symmetric_eigenvalues().iter().copied().collect();
        real.sort_by(|x, y| y.total_cmp(x));
        for (i, v) in complex.iter().enumerate() {
            prop_assert!((real[2 * i] - v).abs() < 1e-9 && (real[2 * i + 1] - v).abs() < 1e-9);
        }
        prop_assert!(((&ea * &eb).trace() / 2.0 - trace_product(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn sinr_ignores_beamformer_phases(
        h in prop::collection::vec(cvector(4), 3),
        v in prop::collection::vec(cvector(4), 2),
        phases in prop::collection::vec(0.0..std::f64::consts::TAU, 2),
        noise in 0.01..10.0f64,
    ) {
        let membership = [0, 1, 1];
        let base = CMatrix::from_columns(&v);
        let rotated = CMatrix::from_columns(&[&v[0] * cis(phases[0]), &v[1] * cis(phases[1])]);
        let s0 = sinr_for_beamformers(&h, &base, &membership, noise);
        let s1 = sinr_for_beamformers(&h, &rotated, &membership, noise);
        for (a, b) in s0.iter().zip(&s1) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }
        let rates = rate_per_user(&s0).unwrap();
        prop_assert!(rates.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn single_group_power_control_uses_the_whole_budget(
        h in prop::collection::vec(cvector(3), 1..4),
        d in cvector(3),
        power in 0.1..100.0f64,
    ) {
        prop_assume!(d.norm() > 1e-3);
        let d = d.normalize();
        let users = h.len();
        let inst = MaxMinInstance::new(h.iter().map(outer).collect(), vec![0; users], power, 1.0, CMatrix::identity(3, 3)).unwrap();
        let (powers, t) = power_control(std::slice::from_ref(&d), &inst, 1e-9).unwrap();
        let oracle = power * h.iter().map(|h| h.dotc(&d).norm_sqr()).fold(f64::INFINITY, f64::min);
        prop_assert!((powers[0] - power).abs() <= 1e-9 * power);
        prop_assert!((t - oracle).abs() <= 1e-6 * (1.0 + oracle));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn power_control_balances_groups(
        h in prop::collection::vec(cvector(4), 4),
        d in prop::collection::vec(cvector(4), 2),
    ) {
        prop_assume!(d.iter().all(|v| v.norm() > 1e-2));
        prop_assume!(h.iter().zip(&[0usize, 0, 1, 1]).all(|(h, &k)| h.dotc(&d[k]).norm() > 1e-2 * h.norm() * d[k].norm()));
        let d: Vec<CVector> = d.into_iter().map(|v| v.normalize()).collect();
        let membership = vec![0, 0, 1, 1];
        let inst = MaxMinInstance::new(h.iter().map(outer).collect(), membership.clone(), 10.0, 1.0, CMatrix::identity(4, 4)).unwrap();
        let (powers, t) = power_control(&d, &inst, 1e-9).unwrap();
        prop_assert!(powers.iter().sum::<f64>() <= 10.0 * (1.0 + 1e-9));
        let v = CMatrix::from_columns(&[&d[0] * C64::from(powers[0].sqrt()), &d[1] * C64::from(powers[1].sqrt())]);
        let sinr = sinr_for_beamformers(&h, &v, &membership, 1.0);
        let group_min = |k: usize| sinr.iter().zip(&membership).filter(|(_, &g)| g == k).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        for k in 0..2 {
            prop_assert!(group_min(k) >= t * (1.0 - 1e-9));
            prop_assert!(group_min(k) <= t * (1.0 + 1e-4), "group {} has slack: {} vs {}", k, group_min(k), t);
        }
    }

    #[test]
    fn trace_constrained_sdp_finds_top_eigenvalue(q in hermitian(3)) {
        let mut p = ConicProblem::new(Sense::Maximize);
        let x = p.add_block(BlockKind::PsdHermitian(3), "X").unwrap();
        p.set_objective(LinearFunctional::new().matrix(x, q.clone())).unwrap();
        p.add_constraint(LinearFunctional::new().matrix(x, CMatrix::identity(3, 3)), Relation::Eq, 1.0).unwrap();
        let s = solve(&p, &SolverTolerances::default()).unwrap();
        let top = HermitianEigen::new(&q).max();
        prop_assert!((s.objective_value - top).abs() < 1e-6);
        prop_assert!((s.constraint_duals[0] + top).abs() < 1e-5, "dual {} vs {}", s.constraint_duals[0], -top);
    }
}
