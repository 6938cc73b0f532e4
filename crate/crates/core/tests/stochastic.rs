use fissurehom::stochastic::*;
use fissurehom::verify::loglog_fit;
use proptest::prelude::*;

fn single_mode(m: f64, a: f64) -> ProcessParams {
    ProcessParams::fourier(m, &[a], &[1.3], ProcessKind::ApertureQ)
}

// ⟨(m + a cos)^{-2}⟩ = m / (m² − a²)^{3/2}
fn inv_sq_oracle(m: f64, a: f64) -> f64 {
    m / (m * m - a * a).powf(1.5)
}

#[test]
fn constant_process_brackets_are_exact() {
    let p = build_process(ProcessParams::constant(0.4, ProcessKind::ApertureQ), 3).unwrap();
    let s = ergodic_stats(&p, 10.0);
    assert_eq!(s, ErgodicStats { window_t: 10.0, ..ErgodicStats::constant(0.4) });
}

#[test]
fn fourier_brackets_converge_with_half_rate() {
    let p = build_process(single_mode(0.5, 0.2), 11).unwrap();
    let ts = [1e2, 1e3, 1e4];
    let mut errs = Vec::new();
    let mut se = Vec::new();
    for &t in &ts {
        let s = ergodic_stats(&p, t);
        errs.push((s.mean_inv_q2 - inv_sq_oracle(0.5, 0.2)).abs());
        se.push(s.stderr);
        assert!((s.mean_q2 - (0.25 + 0.02)).abs() < 5.0 * s.stderr + 1e-3, "{t}: {s:?}");
    }
    let (slope, _) = loglog_fit(&ts, &se);
    assert!((slope + 0.5).abs() <= 0.15, "{slope} {se:?}");
    assert!(errs[2] < errs[0], "{errs:?}");
}

#[test]
fn phases_do_not_depend_on_the_window() {
    let a = sample_phases(-10, 10, 0.2, 5).unwrap();
    let b = sample_phases(-3, 40, 0.2, 5).unwrap();
    for i in -3..=10 {
        assert_eq!(a.alpha(i), b.alpha(i));
        assert_eq!(a.beta(i), b.beta(i));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn path_stays_in_certified_range(m in 0.1f64..0.5, frac in 0.0f64..0.9, seed in 0u64..1000, t in -1e4f64..1e4) {
        let p = build_process(single_mode(m, frac * m), seed).unwrap();
        let (lo, hi) = p.value_range();
        let v = p.eval(t);
        prop_assert!(v >= lo && v <= hi && lo > 0.0);
    }

    #[test]
    fn brackets_satisfy_jensen_and_cauchy_schwarz(m in 0.1f64..0.5, frac in 0.0f64..0.8, seed in 0u64..1000) {
        let p = build_process(ProcessParams::fourier(m, &[frac * m * 0.6, frac * m * 0.4], &[1.0, 2f64.sqrt()], ProcessKind::ApertureQ), seed).unwrap();
        let s = ergodic_stats(&p, 50.0);
        let tol = 1e-12;
        prop_assert!(s.mean_q2 >= s.mean_q * s.mean_q * (1.0 - tol));
        prop_assert!(s.mean_q2 * s.mean_inv_q2 >= 1.0 - tol);
        prop_assert!(s.mean_inv_q2 >= 1.0 / s.mean_q2 * (1.0 - tol));
    }

    #[test]
    fn phases_lie_in_their_interval(c4 in 0.0f64..0.5, seed in 0u64..1000, i in -500i64..500) {
        let ph = sample_phases(-500, 500, c4, seed).unwrap();
        prop_assert!(ph.alpha(i).abs() <= c4 && ph.beta(i).abs() <= c4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apertures_reaching_one_or_zero_are_rejected(m in 0.1f64..0.9, excess in 0.0f64..0.5) {
        let a = (1.0 - m).min(m) + excess + 1e-9;
        prop_assert!(build_process(single_mode(m, a), 1).is_err());
    }
}
