use fissurehom::cell::{solve_poisson_cell, CellMesh};
use fissurehom::fissure_transport::FissureODEConfig;
use fissurehom::stochastic::{ErgodicStats, ProcessKind, ProcessParams};
use fissurehom::verify::*;
use nalgebra::Matrix2;

#[test]
fn constant_fissure_flux_matches_closed_form() {
    for r in [0.0, 1.0, 4.0] {
        let q0: f64 = 0.4;
        let cfg = FissureODEConfig::constant(q0, 1.0, r, 0.0, 1.0);
        let c = fine_vs_limit_fissure(1.0, 0.2, &cfg, &ErgodicStats::constant(q0)).unwrap();
        let oracle = if r == 0.0 {
            q0 * q0 * 0.8
        } else {
            let s = r.sqrt();
            q0 * q0 * s * (s.cosh() - 0.2) / s.sinh()
        };
        assert!((c.fine - oracle).abs() < 1e-10 * oracle, "{r}: {c:?} {oracle}");
        assert!(c.relative_error < 1e-10, "{r}: {c:?}");
    }
}

#[test]
fn summaries_and_fit() {
    let s = summarize(0.1, vec![4.0, 1.0, 3.0, 2.0]);
    assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    let x = [1e-1, 1e-2, 1e-3];
    let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(0.5)).collect();
    let (rate, r2) = loglog_fit(&x, &y);
    assert!((rate - 0.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
}

#[test]
fn plan_validation() {
    let mut p = SweepPlan::default_for(SweepTarget::Prop2);
    p.theta = 2.0 / 3.0;
    assert!(run_sweep(&p).unwrap_err().to_string().contains("theta"));
    let mut p = SweepPlan::default_for(SweepTarget::Prop2);
    p.epsilons = vec![1e-3, 1e-2];
    assert!(run_sweep(&p).is_err());
}

#[test]
fn sweeps_are_deterministic() {
    let mut p = SweepPlan::default_for(SweepTarget::Prop2);
    p.realizations = 3;
    p.epsilons = vec![1e-1, 1e-2];
    p.stats_window = 200.0;
    let a = run_sweep(&p).unwrap();
    let b = run_sweep(&p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.series.len(), 4);
    assert_eq!(a.series[0].points[0].values.len(), 3);
}

#[test]
fn constant_media_energy_is_a_counting_error() {
    let mut p = SweepPlan::default_for(SweepTarget::GammaEnergy);
    p.epsilons = vec![1.0 / 8.0];
    p.cell_resolution = 32;
    let real = realization(&p, 0).unwrap();
    let geo = geometry(&p, &real, p.epsilons[0]).unwrap();
    let cell = solve_poisson_cell(&CellMesh::new(2, 32, None)).unwrap();
    let e = gamma_energy_check(&geo, TestField::Vertical { v3: 1.0 }, 1.0, &real.stats, &cell, &Matrix2::zeros()).unwrap();
    // each fissure carries h q0² |∇η₀|²_bilinear / q0²; the limit counts 1/ε² fissures
    let count = geo.fissures.len() as f64 * p.epsilons[0].powi(2);
    let ratio = e.computed / e.limit;
    assert!((ratio / count - cell.energy / cell.k0).abs() < 2e-2, "{ratio} {count} {}", cell.energy / cell.k0);
}

#[test]
fn tangential_energy_needs_invertible_kf() {
    let p = SweepPlan { field: TestField::Tangential { v: [1.0, 0.0] }, epsilons: vec![0.25], ..SweepPlan::default_for(SweepTarget::GammaEnergy) };
    assert!(run_sweep(&p).is_err());
}

#[test]
fn constant_aperture_prop2_is_exact() {
    let p = SweepPlan {
        q: ProcessParams::constant(0.5, ProcessKind::ApertureQ),
        realizations: 1,
        ..SweepPlan::default_for(SweepTarget::Prop2)
    };
    let r = run_sweep(&p).unwrap();
    for s in &r.series {
        assert!(s.points.iter().all(|pt| pt.median < 1e-12), "{}: {:?}", s.name, s.medians());
    }
}

#[test]
fn single_point_sweep_equals_the_direct_check() {
    let p = SweepPlan { epsilons: vec![0.1], realizations: 1, stats_window: 300.0, ..SweepPlan::default_for(SweepTarget::MeasureLimit) };
    let rep = run_sweep(&p).unwrap();
    let real = realization(&p, 0).unwrap();
    let geo = geometry(&p, &real, 0.1).unwrap();
    let direct = fissurehom::fissure_geometry::measure_limit_error(&geo, &|_| 1.0, real.stats.mean_q2);
    let s = rep.series("phi_one").unwrap();
    assert_eq!(s.points[0].values, vec![direct]);
    assert_eq!(s.points[0].median, direct);
    let other = run_sweep(&SweepPlan { seed: p.seed + 1, ..p.clone() }).unwrap();
    assert_ne!(other.series[0].points[0].values, s.points[0].values);
}
