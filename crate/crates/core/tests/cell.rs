use std::f64::consts::PI;

use fissurehom::cell::*;
use fissurehom::linalg::min_eigenvalue3;
use nalgebra::Matrix3;

fn k0_fourier() -> f64 {
    let s: f64 = (0..200).map(|m| 2 * m + 1).map(|n| ((n as f64) * PI / 2.0).tanh() / (n as f64).powi(5)).sum();
    1.0 / 12.0 - 16.0 / PI.powi(5) * s
}

fn centre_fourier() -> f64 {
    let s: f64 = (0..200)
        .map(|m| 2 * m + 1)
        .map(|n| {
            let n = n as f64;
            4.0 * (n * PI / 2.0).sin() / (PI.powi(3) * n.powi(3) * (n * PI / 2.0).cosh())
        })
        .sum();
    0.125 - s
}

#[test]
fn poisson_matches_series() {
    let k0 = k0_fourier();
    assert!((k0 - 0.035144).abs() < 1e-6, "{k0}");
    let s = solve_poisson_cell(&CellMesh::new(2, 128, None)).unwrap();
    assert!((s.k0 - k0).abs() < 1e-4, "{} vs {k0}", s.k0);
    assert!((s.centre_value - centre_fourier()).abs() < 1e-4);
    assert!((s.energy - s.k0).abs() < 1e-8 * s.k0);
    assert!((s.grad_sq[0] - s.grad_sq[1]).abs() < 1e-10);
}

#[test]
fn poisson_second_order() {
    let v: Vec<f64> = [16, 32, 64].iter().map(|&n| solve_poisson_cell(&CellMesh::new(2, n, None)).unwrap().k0).collect();
    let p = richardson_order(v[0], v[1], v[2]);
    assert!((p - 2.0).abs() < 0.2, "{p}");
}

#[test]
fn darcy_without_obstacle_is_identity_map() {
    let k = Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0);
    let s = solve_darcy_cell(&PermeabilitySpec::constant(k), &CellMesh::new(3, 8, None)).unwrap();
    assert!((s.tensor - k).amax() < 1e-10, "{}", s.tensor);
    let (_, d) = solve_scalar_cell_3d(&CellMesh::new(3, 8, None), 0.7).unwrap();
    assert!((d - Matrix3::identity() * 0.7).amax() < 1e-10);
}

#[test]
fn layered_field_gives_harmonic_and_arithmetic_means() {
    let a = 0.6;
    let k = PermeabilitySpec::from_fn(move |z| Matrix3::identity() * (1.0 + a * (2.0 * PI * z[0]).sin()));
    let s = solve_darcy_cell(&k, &CellMesh::new(3, 32, None)).unwrap();
    let harm = (1.0f64 - a * a).sqrt();
    assert!((s.tensor[(0, 0)] - harm).abs() < 5e-3, "{}", s.tensor);
    assert!((s.tensor[(1, 1)] - 1.0).abs() < 1e-10);
    assert!((s.tensor[(2, 2)] - 1.0).abs() < 1e-10);
}

#[test]
fn obstacle_tensor_symmetric_positive_and_reduced() {
    let m = CellMesh::new(3, 16, Some(Obstacle::Box { half: [0.25; 3] }));
    let s = solve_darcy_cell(&PermeabilitySpec::identity(), &m).unwrap();
    assert!((s.fluid_fraction - (1.0 - 0.125)).abs() < 1e-12);
    assert!((s.tensor - s.tensor.transpose()).amax() < 1e-8);
    let e = min_eigenvalue3(&s.tensor);
    assert!(e > 0.0 && s.tensor[(0, 0)] < s.fluid_fraction);
    // cubic symmetry
    assert!((s.tensor[(0, 0)] - s.tensor[(2, 2)]).abs() < 1e-8);
    for k in 0..3 {
        assert!((s.energy[k] - s.tensor[(k, k)]).abs() < 1e-8);
    }
}

#[test]
fn disconnected_fluid_is_rejected() {
    let m = CellMesh::new(3, 8, Some(Obstacle::Box { half: [0.49, 0.49, 0.3] }));
    // fluid still connects through the periodic boundary layer
    assert!(solve_darcy_cell(&PermeabilitySpec::identity(), &m).is_ok());
    assert!(CellMesh::new(3, 8, Some(Obstacle::Ball { radius: 0.6 })).validate().is_err());
}

#[test]
fn surface_cell_modes() {
    let m = CellMesh::new(2, 16, None);
    let (_, p) = solve_scalar_cell_2d(&m, 0.5, BcMode::Periodic).unwrap();
    assert!((p - nalgebra::Matrix2::identity() * 0.5).amax() < 1e-10);
    let (s, n) = solve_scalar_cell_2d(&m, 0.5, BcMode::LiteralNeumann).unwrap();
    assert!(n.amax() < 1e-9, "{n}");
    // corrector is −z_m up to a constant
    let c0 = &s.pi[0];
    let h = 1.0 / 16.0;
    assert!(((c0[1] - c0[0]) / h + 1.0).abs() < 1e-8);
}

#[test]
fn stokes_cell_with_constant_force_has_no_flow() {
    let s = solve_stokes_cell(&CellMesh::new(2, 16, None)).unwrap();
    assert!(s.k_f.amax() < 1e-9, "{}", s.k_f);
    assert!(s.divergence_residual < 1e-8);
    for a in 0..2 {
        for k in 0..2 {
            assert!(s.gram[a][k][k] >= 0.0 && s.gram[a][k][k] < 1e-12);
        }
    }
    // pressure is the potential of the force
    let h = 1.0 / 16.0;
    let p = &s.xi[0];
    assert!(((p[1] - p[0]) / h - 1.0).abs() < 1e-6);
}

#[test]
fn kstar_of_identity() {
    let (t, f) = compute_kstar(&PermeabilitySpec::identity(), 0.3, 0.1).unwrap();
    assert!((t - nalgebra::Matrix2::identity() * 0.09).amax() < 1e-14);
    assert!((f[(2, 2)] - 0.09).abs() < 1e-14);
}

#[test]
fn kstar_quadrature_against_closed_form() {
    let k = PermeabilitySpec::from_fn(|z| Matrix3::identity() * (1.0 + z[0] * z[0]));
    let (t, _) = compute_kstar(&k, 0.4, 0.05).unwrap();
    let (lo, hi) = (-0.15f64, 0.25f64);
    let want = 0.4 * ((hi - lo) + (hi.powi(3) - lo.powi(3)) / 3.0);
    assert!((t[(0, 0)] - want).abs() < 1e-14);
}
