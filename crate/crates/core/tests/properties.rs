use hamreach::dynamics::{simulate_until, IntegratorConfig, NoiseStream, Stepper};
use hamreach::hitting::{estimate_committor, estimate_hitting_prob, exit_times};
use hamreach::linear::kernel::{eigen_sym, max_abs, psd_sqrt};
use hamreach::linear::{lyapunov_residual, solve_lyapunov, sphere_infimum};
use hamreach::model::DomainSpec;
use hamreach::models::{double_pendulum, double_well_1d, linearized_double_pendulum, ou_1d};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn gram(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        &m * m.transpose()
    })
}

fn state4() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_reconstructs(m in (1usize..7).prop_flat_map(symmetric)) {
        let e = eigen_sym(&m).unwrap();
        prop_assert!(max_abs(&(e.reconstruct() - &m)) <= 1e-10 * max_abs(&m).max(1.0));
        let vtv = e.vectors.transpose() * &e.vectors;
        prop_assert!(max_abs(&(vtv - DMatrix::identity(m.nrows(), m.nrows()))) < 1e-12);
        prop_assert!(e.values.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn psd_sqrt_squares_back(q in (1usize..6).prop_flat_map(gram)) {
        let s = psd_sqrt(&q).unwrap();
        prop_assert!(max_abs(&(&s - s.transpose())) < 1e-12 * max_abs(&q).max(1.0));
        prop_assert!(max_abs(&(&s * &s - &q)) <= 1e-9 * max_abs(&q).max(1.0));
    }

    #[test]
    fn lyapunov_residual_small_for_stable_systems(
        m in (1usize..6).prop_flat_map(|n| (symmetric(n), gram(n)))
    ) {
        let (s, q) = m;
        let n = s.nrows();
        // shift the spectrum left so A is Hurwitz
        let shift = eigen_sym(&s).unwrap().max() + 0.5;
        let skew = DMatrix::from_fn(n, n, |i, j| if i < j { 1.0 } else if i > j { -1.0 } else { 0.0 });
        let a = &s - DMatrix::identity(n, n) * shift + skew;
        let sigma = solve_lyapunov(&a, &q).unwrap();
        prop_assert!(lyapunov_residual(&a, &q, &sigma) <= 1e-9 * max_abs(&q).max(1.0));
    }

    #[test]
    fn hjb_identity_on_pendula(x in state4()) {
        let sys = double_pendulum();
        let (lin, _) = linearized_double_pendulum();
        for s in [&sys, &lin] {
            let g = s.gradient(&x).unwrap();
            let g2: f64 = g.iter().map(|v| v * v).sum();
            prop_assert!(s.hjb_residual(&x).unwrap().abs() <= 1e-10 * (1.0 + g2));
        }
    }

    #[test]
    fn energy_non_increasing_without_noise(x in state4()) {
        let sys = double_pendulum();
        let dt = 1e-3;
        let mut stepper = Stepper::new(&sys, 0.0, dt).unwrap();
        let mut noise = NoiseStream::new(0, 0);
        let mut y = x.clone();
        let scale = 1.0 + sys.hamiltonian(&x).abs();
        for k in 1..=200u64 {
            let before = sys.hamiltonian(&y);
            stepper.step(&mut y, &mut noise, k).unwrap();
            prop_assert!(sys.hamiltonian(&y) <= before + 50.0 * scale * dt * dt);
        }
    }

    #[test]
    fn sphere_infimum_lower_bounds_samples(
        sigma in (1usize..5).prop_flat_map(gram),
        dirs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 200),
        r in 0.2..3.0f64,
    ) {
        let n = sigma.nrows();
        let sigma = sigma + DMatrix::identity(n, n) * 0.1;
        let inf = sphere_infimum(&sigma, r).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let mut best = f64::INFINITY;
        for d in &dirs {
            let v = nalgebra::DVector::from_column_slice(&d[..n]);
            let norm = v.norm();
            if norm < 1e-6 { continue; }
            let y = v * (r / norm);
            let val = 0.5 * (y.transpose() * &inv * &y)[(0, 0)];
            prop_assert!(val >= inf * (1.0 - 1e-10));
            best = best.min(val);
        }
        // the top eigenvector attains it
        let e = eigen_sym(&sigma).unwrap();
        let y = e.vectors.column(n - 1) * r;
        let val = 0.5 * (y.transpose() * &inv * &y)[(0, 0)];
        prop_assert!((val - inf).abs() <= 1e-9 * inf.max(1.0));
        prop_assert!(best >= val * (1.0 - 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn committor_complement_sums_to_one(x0 in -0.9..0.9f64, seed in 0u64..1000) {
        let dw = double_well_1d();
        let a = DomainSpec::below("A", 0, -1.0);
        let b = DomainSpec::above("B", 0, 1.0);
        let cfg = IntegratorConfig::new(1e-3, 1e3);
        let est = estimate_committor(&dw, &a, &b, 0.5, &[x0], 64, &cfg, seed).unwrap();
        prop_assert_eq!(est.hit_a + est.hit_b + est.censored, 64);
        prop_assert!((est.q + est.q_a() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hitting_probability_monotone_in_horizon(k1 in 100u64..2000, extra in 1u64..2000, seed in 0u64..1000) {
        let ou = ou_1d(1.0).unwrap();
        let b = DomainSpec::above("B", 0, 1.0);
        let cfg = IntegratorConfig::new(1e-3, 1.0);
        let t1 = k1 as f64 * 1e-3;
        let t2 = (k1 + extra) as f64 * 1e-3;
        let p1 = estimate_hitting_prob(&ou, &b, t1, 0.5, &[0.0], 64, &cfg, seed).unwrap();
        let p2 = estimate_hitting_prob(&ou, &b, t2, 0.5, &[0.0], 64, &cfg, seed).unwrap();
        prop_assert!(p2.hits >= p1.hits);
    }
}

#[test]
fn trials_independent_of_thread_count() {
    let (sys, _) = linearized_double_pendulum();
    let d = DomainSpec::ball("D2", vec![0, 1], vec![0.0, 0.0], 0.5);
    let cfg = IntegratorConfig::new(1e-3, 50.0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| exit_times(&sys, &d, 1.0, &[0.0; 4], 24, &cfg, 5).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    let direct: Vec<_> = (0..24)
        .map(|i| simulate_until(&sys, &[0.0; 4], 1.0, &cfg, std::slice::from_ref(&d), &mut NoiseStream::new(5, i)).unwrap())
        .collect();
    assert_eq!(one, direct);
}
