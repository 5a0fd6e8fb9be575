use proptest::prelude::*;

use sysid_core::bounds::{h_bound, theta_a, BoundParams};
use sysid_core::estimator::{assemble_regression_data, estimate_svr, solve_dual_qp, Assembly, RegressionData, Scaling};
use sysid_core::lti_sim::{collect_rollouts, NoiseSpec, SystemMatrices};
use sysid_core::numerics::{
    dare_residual, lyapunov_residual, solve_dare, solve_discrete_lyapunov, spectral_norm, spectral_radius, Matrix,
    SolverTolerances,
};
use sysid_core::observer_design::{gershgorin_feasible, IntervalMatrix};

fn tol() -> SolverTolerances {
    SolverTolerances::default()
}

fn square(max_n: usize, range: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-range..range, n * n).prop_map(move |v| Matrix::new(n, n, v).unwrap())
    })
}

fn scaled_to_radius(a: &Matrix, target: f64) -> Matrix {
    let rho = spectral_radius(a, &tol()).unwrap();
    if rho < 1e-9 {
        a.clone()
    } else {
        a.scale(target / rho)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_radius_never_exceeds_spectral_norm(a in square(5, 2.0)) {
        let rho = spectral_radius(&a, &tol()).unwrap();
        let norm = spectral_norm(&a, &tol()).unwrap();
        prop_assert!(rho <= norm * (1.0 + 1e-9) + 1e-12, "rho {} > norm {}", rho, norm);
    }

    #[test]
    fn two_by_two_radius_matches_quadratic_formula(a in -9i32..10, b in -9i32..10, c in -9i32..10, d in -9i32..10) {
        let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
        let m = Matrix::from_rows(&[vec![a, b], vec![c, d]]).unwrap();
        let (tr, det) = (a + d, a * d - b * c);
        let disc = tr * tr - 4.0 * det;
        let expected = if disc >= 0.0 {
            ((tr + disc.sqrt()) / 2.0).abs().max(((tr - disc.sqrt()) / 2.0).abs())
        } else {
            det.sqrt()
        };
        let rho = spectral_radius(&m, &tol()).unwrap();
        prop_assert!((rho - expected).abs() <= 1e-7 * expected.max(1.0), "{} vs {}", rho, expected);
    }

    #[test]
    fn lyapunov_solution_satisfies_its_equation(a in square(4, 1.0), target in 0.0f64..0.95) {
        let a = scaled_to_radius(&a, target);
        let n = a.rows();
        let q = Matrix::identity(n);
        let p = solve_discrete_lyapunov(&a, &q, &tol()).unwrap();
        prop_assert!(lyapunov_residual(&a, &q, &p) < 1e-10);
        prop_assert_eq!(p.clone(), p.symmetrize());
    }

    #[test]
    fn dare_solution_is_stabilizing(a in square(3, 1.0), target in 0.1f64..1.1, sigma_v in 0.2f64..2.0) {
        let a = scaled_to_radius(&a, target);
        let n = a.rows();
        let c = Matrix::identity(n);
        let q = Matrix::identity(n);
        let r = Matrix::identity(n).scale(sigma_v * sigma_v);
        let sol = solve_dare(&a, &c, &q, &r, &tol()).unwrap();
        prop_assert!(dare_residual(&a, &c, &q, &r, &sol.p) < 1e-10);
        prop_assert!(spectral_radius(&(&a - &(&sol.k * &c)), &tol()).unwrap() < 1.0);
    }

    #[test]
    fn ridge_estimate_shrinks_as_gamma_grows(seed in any::<u64>(), g1 in 0.0f64..5.0, dg in 0.01f64..5.0) {
        let sys = SystemMatrices::stable_benchmark();
        let data = collect_rollouts(&sys, &NoiseSpec::default(), 4, 3, seed).unwrap();
        let reg = assemble_regression_data(&data, Assembly::AllData).unwrap();
        let small = estimate_svr(&reg, g1, Scaling::Raw).unwrap().stacked().frobenius_norm();
        let large = estimate_svr(&reg, g1 + dg, Scaling::Raw).unwrap().stacked().frobenius_norm();
        prop_assert!(large <= small * (1.0 + 1e-12), "{} > {}", large, small);
    }

    #[test]
    fn dual_and_primal_estimates_agree(
        n in 1usize..=2,
        m in 1usize..=2,
        extra in 0usize..20,
        gamma in 0.1f64..2.0,
        values in prop::collection::vec(-2.0f64..2.0, 200),
    ) {
        let d = n + m;
        let n0 = d + extra;
        let z = Matrix::new(d, n0, values[..d * n0].to_vec()).unwrap();
        let f = Matrix::new(n, n0, values[d * n0..d * n0 + n * n0].to_vec()).unwrap();
        let data = RegressionData::new(z, f, n, m, Assembly::AllData).unwrap();
        let primal = estimate_svr(&data, gamma, Scaling::Raw).unwrap().stacked();
        for row in 0..n {
            let dual = solve_dual_qp(&data, row, gamma, &tol()).unwrap();
            for (j, w) in dual.w_row.iter().enumerate() {
                prop_assert!((w - primal[(row, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn certified_gain_stays_certified_on_smaller_boxes(
        a in square(3, 1.0),
        radius in 0.0f64..0.3,
        shrink in 0.0f64..1.0,
    ) {
        let n = a.rows();
        let c = Matrix::identity(n);
        let gain = a.clone();
        let wide = IntervalMatrix::new(a.clone(), radius, 0.99).unwrap();
        let narrow = IntervalMatrix::new(a, radius * shrink, 0.99).unwrap();
        let wide_cert = gershgorin_feasible(&gain, &wide, &c).unwrap();
        let narrow_cert = gershgorin_feasible(&gain, &narrow, &c).unwrap();
        if wide_cert.feasible {
            prop_assert!(narrow_cert.feasible);
        }
        prop_assert!(narrow_cert.min_margin() >= wide_cert.min_margin());
    }

    #[test]
    fn certified_boxes_contain_only_stable_error_dynamics(
        a in square(3, 1.0),
        radius in 0.0f64..0.2,
        probe in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let n = a.rows();
        let c = Matrix::identity(n);
        let gain = &a - &Matrix::identity(n).scale(0.3);
        let iv = IntervalMatrix::new(a.clone(), radius, 0.99).unwrap();
        if gershgorin_feasible(&gain, &iv, &c).unwrap().feasible {
            let member = Matrix::from_fn(n, n, |i, j| a[(i, j)] + radius * probe[i * n + j]);
            prop_assert!(spectral_radius(&(&member - &gain), &tol()).unwrap() < 1.0);
        }
    }

    #[test]
    fn concentration_radius_decreases_with_rollouts(n_rollouts in 1usize..5000, gamma in 0.0f64..1.0) {
        let p = |n_rollouts| BoundParams {
            n: 3,
            m: 1,
            big_m: 1.1,
            delta: 0.01,
            gamma,
            n_rollouts,
            t0: 11,
            sigma_u: 1.0,
            sigma_w: 1.0,
        };
        let h = |q: BoundParams| h_bound(theta_a(&q).unwrap(), 3, &q).unwrap();
        prop_assert!(h(p(n_rollouts + 1)) < h(p(n_rollouts)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn rollouts_depend_only_on_the_seed(seed in any::<u64>(), threads in 2usize..5) {
        let sys = SystemMatrices::unstable_benchmark();
        let noise = NoiseSpec { sigma_w: 0.5, sigma_v: 0.1, sigma_u: 1.0 };
        let run = |k: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap()
                .install(|| collect_rollouts(&sys, &noise, 30, 6, seed).unwrap())
        };
        prop_assert_eq!(run(1), run(threads));
    }
}

#[test]
fn excitation_has_the_requested_covariance() {
    let sys = SystemMatrices::stable_benchmark();
    let noise = NoiseSpec { sigma_w: 1.0, sigma_v: 0.0, sigma_u: 2.0 };
    let data = collect_rollouts(&sys, &noise, 4000, 6, 11).unwrap();
    let inputs: Vec<f64> = data.rollouts.iter().flat_map(|r| r.inputs.iter().map(|u| u[0])).collect();
    let k = inputs.len() as f64;
    let mean = inputs.iter().sum::<f64>() / k;
    let var = inputs.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / (k - 1.0);
    // 20 000 draws: standard error of the variance is about 4 * sqrt(2 / k).
    assert!(mean.abs() < 4.0 * 2.0 / k.sqrt(), "mean {mean}");
    assert!((var - 4.0).abs() < 4.0 * 4.0 * (2.0 / k).sqrt(), "var {var}");
}
