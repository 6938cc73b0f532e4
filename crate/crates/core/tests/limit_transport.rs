use std::f64::consts::PI;
use std::sync::Arc;

use fissurehom::cell::EffectiveTensors;
use fissurehom::fissure_transport::{ExchangeParams, Variant};
use fissurehom::limit_flow::*;
use fissurehom::limit_transport::*;
use fissurehom::stochastic::ErgodicStats;
use nalgebra::{Matrix2, Matrix3};

const H: f64 = 0.4;

fn stats() -> ErgodicStats {
    ErgodicStats { mean_q: 0.3, mean_q2: 0.1, mean_inv_q2: 12.0, window_t: 1e3, stderr: 0.0 }
}

fn flow(strength: f64, mesh: FlowMesh) -> Arc<LimitFlowSolution> {
    let g: VectorField = Arc::new(move |x| [0.0, 0.0, strength * (PI * x[0]).sin()]);
    let cfg = FlowConfig {
        mu_plus: 1.0,
        mu_minus: 1.0,
        mu: 1.0,
        gamma: 0.0,
        tensors: EffectiveTensors::isotropic(1.0, 1.0, 0.035144, 1.0),
        stats: stats(),
        domain: FlowDomain { sigma: [0.0, 1.0, 0.0, 1.0], h: H, height_plus: 1.0, height_minus: 1.0 },
        g_plus: g.clone(),
        g_minus: g,
        coupling: CouplingMode::Auto,
    };
    Arc::new(solve_limit_flow(&cfg, &mesh).unwrap())
}

fn exchange(r: f64) -> ExchangeParams {
    let s = stats();
    ExchangeParams { diffusivity: 1.0, reaction: r, h: H, mu: 1.0, k0: 0.035144, mean_q2: s.mean_q2, mean_inv_q2: s.mean_inv_q2 }
}

fn blob() -> ScalarField {
    Arc::new(|x| {
        let r2 = (x[0] - 0.3).powi(2) + (x[1] - 0.5).powi(2) + (x[2] - 0.3).powi(2);
        if r2 < 0.04 {
            1.0
        } else {
            0.0
        }
    })
}

fn config(flow: Arc<LimitFlowSolution>, r: f64, d: f64, source: ScalarField) -> TransportConfig {
    TransportConfig {
        d_hat: Matrix3::identity() * d,
        d_star: Matrix2::identity() * d,
        flow,
        exchange: exchange(r),
        variant: Variant::Molecular,
        source,
        source_minus: None,
        fluid_fraction: 0.8,
    }
}

#[test]
fn zero_source_gives_zero_solution() {
    let cfg = config(flow(2.0, FlowMesh::slice(8)), 1.0, 0.1, Arc::new(|_| 0.0));
    let s = solve_limit_transport(&cfg).unwrap();
    assert!(s.u_plus.iter().chain(&s.u_minus).all(|u| *u == 0.0));
    assert_eq!(balance_check(&s, &cfg).unwrap().residual, 0.0);
    assert!(interface_flux(&s, &cfg, Side::Top).unwrap().iter().all(|f| *f == 0.0));
}

#[test]
fn nonnegative_for_nonnegative_source() {
    for (strength, d, r) in [(0.0, 1.0, 0.0), (5.0, 0.05, 0.0), (20.0, 0.01, 2.0), (5.0, 0.2, 10.0)] {
        let fl = flow(strength, FlowMesh::slice(24));
        let vmax = fl.face_plus[2].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(strength == 0.0 || vmax > 0.1);
        let s = solve_limit_transport(&config(fl, r, d, blob())).unwrap();
        assert!(s.min_value() >= -1e-12, "{strength} {d} {r}: {}", s.min_value());
        assert!(s.max_abs() > 0.0);
    }
}

#[test]
fn three_dimensional_mode() {
    let fl = flow(5.0, FlowMesh { n1: 8, n2: 6, n3_plus: 8, n3_minus: 6 });
    let cfg = config(fl, 1.0, 0.1, blob());
    let s = solve_limit_transport(&cfg).unwrap();
    assert!(s.min_value() >= -1e-12);
    assert!(balance_check(&s, &cfg).unwrap().residual < 1e-8);
    let (top, bottom) = net_exchange(&s);
    // reaction in the fissure removes mass between the two interfaces
    assert!(top > bottom && bottom > 0.0, "{top} {bottom}");
}

#[test]
fn reaction_limit_is_continuous() {
    let fl = flow(5.0, FlowMesh::slice(16));
    let a = solve_limit_transport(&config(fl.clone(), 0.0, 0.1, blob())).unwrap();
    let b = solve_limit_transport(&config(fl, 1e-8, 0.1, blob())).unwrap();
    let d = a.u_plus.iter().chain(&a.u_minus).zip(b.u_plus.iter().chain(&b.u_minus)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-5 * a.max_abs(), "{d}");
    for (x, y) in a.interface_flux_top.iter().zip(&b.interface_flux_top) {
        assert!((x - y).abs() <= 1e-6 * a.interface_flux_top.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
}

#[test]
fn without_reaction_the_exchange_conserves_mass() {
    let fl = flow(5.0, FlowMesh::slice(16));
    let s = solve_limit_transport(&config(fl, 0.0, 0.1, blob())).unwrap();
    for (t, b) in s.interface_flux_top.iter().zip(&s.interface_flux_bottom) {
        assert!((t - b).abs() < 1e-14 * t.abs().max(1e-300) + 1e-300);
    }
}

#[test]
fn balance_identity_and_its_sensitivity() {
    let fl = flow(5.0, FlowMesh::slice(16));
    let cfg = config(fl, 1.0, 0.1, blob());
    let s = solve_limit_transport(&cfg).unwrap();
    let b = balance_check(&s, &cfg).unwrap();
    assert!(b.residual <= 1e-8, "{b:?}");
    assert!(b.exchange_work > 0.0 && b.reaction_work > 0.0 && b.transport_work > 0.0);
    let mut p = s.clone();
    for (k, v) in p.u_plus.iter_mut().enumerate() {
        *v += 1e-3 * (k as f64 * 12.9898).sin();
    }
    let bp = balance_check(&p, &cfg).unwrap();
    assert!(bp.residual > 1e3 * b.residual.max(1e-14), "{bp:?}");
}

#[test]
fn closed_form_exchange_values() {
    let s = ErgodicStats::constant(1.0);
    let unit = ExchangeParams { diffusivity: 1.0, reaction: 1.0, h: 1.0, mu: 1.0, k0: 0.035144, mean_q2: s.mean_q2, mean_inv_q2: s.mean_inv_q2 };
    let c = fissurehom::fissure_transport::transmission_coeffs(&unit, 0.0, 0.0, Variant::Molecular).unwrap();
    assert!((c.top_flux(1.0, 0.0) - 1.3130).abs() < 1e-4);
    assert_eq!(c.top_flux(0.0, 0.0), 0.0);
    // at A = 1 swapping the traces reverses both fluxes
    let zero = fissurehom::fissure_transport::transmission_coeffs(&ExchangeParams { reaction: 0.0, ..unit }, 0.0, 0.0, Variant::Molecular).unwrap();
    for (a, b) in [(0.7, 0.2), (0.1, 1.3)] {
        assert_eq!(zero.top_flux(a, b), -zero.top_flux(b, a));
        assert_eq!(zero.bottom_flux(a, b), -zero.bottom_flux(b, a));
    }
}

#[test]
fn surface_diffusion_is_optional_and_spreads_the_trace() {
    let fl = flow(0.0, FlowMesh::slice(24));
    let mut cfg = config(fl, 0.0, 0.1, blob());
    cfg.d_star = Matrix2::zeros();
    let a = solve_limit_transport(&cfg).unwrap();
    cfg.d_star = Matrix2::identity() * 50.0;
    let b = solve_limit_transport(&cfg).unwrap();
    let spread = |t: &[f64]| {
        let m = t.iter().sum::<f64>() / t.len() as f64;
        t.iter().map(|v| (v - m).powi(2)).sum::<f64>().sqrt() / m
    };
    assert!(spread(&b.trace_plus) < 0.5 * spread(&a.trace_plus));
    assert!(b.min_value() >= -1e-12);
}

#[test]
fn rejects_bad_configuration() {
    let fl = flow(0.0, FlowMesh::slice(8));
    let mut cfg = config(fl.clone(), 0.0, 0.1, blob());
    cfg.d_hat[(0, 2)] = 0.05;
    cfg.d_hat[(2, 0)] = 0.05;
    assert!(solve_limit_transport(&cfg).is_err());
    let mut cfg = config(fl, 0.0, 0.1, blob());
    cfg.fluid_fraction = 0.0;
    assert!(solve_limit_transport(&cfg).is_err());
}

// Manufactured solution without flow: u = sin(πx₁)a(x₃) above, sin(πx₁)b(x₃)
// below, satisfying both exchange conditions with D* = 0.
struct Mms {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
}

impl Mms {
    fn new(d: f64, r: f64) -> Self {
        let c = fissurehom::fissure_transport::transmission_coeffs(&exchange(r), 0.0, 0.0, Variant::Molecular).unwrap();
        let (e, ch) = (c.exchange_scale, c.cosh_rh);
        let (alpha, gamma) = (1.0, 0.5);
        // d a'(0) = E(c a(0) − b(−h)),  d b'(−h) = E(a(0) − c b(−h))
        let beta = alpha + e * (ch * alpha - gamma) / d;
        let delta = e * (alpha - ch * gamma) / d - gamma;
        Mms { alpha, beta, gamma, delta }
    }
    fn a(&self, z: f64) -> (f64, f64) {
        ((1.0 - z) * (self.alpha + self.beta * z), -2.0 * self.beta)
    }
    fn b(&self, z: f64) -> (f64, f64) {
        let s = z + H + 1.0;
        (s * (self.gamma + self.delta * (z + H)), 2.0 * self.delta)
    }
}

fn mms_error(n: usize, d: f64, r: f64) -> f64 {
    let m = Arc::new(Mms::new(d, r));
    let fl = flow(0.0, FlowMesh::slice(n));
    let (m1, m2) = (m.clone(), m.clone());
    let src = move |prof: (f64, f64), x1: f64| (d * PI * PI * prof.0 - d * prof.1 + r * prof.0) * (PI * x1).sin();
    let mut cfg = config(fl, r, d, Arc::new(move |x| src(m1.a(x[2]), x[0]) / 0.8));
    cfg.d_star = Matrix2::zeros();
    cfg.source_minus = Some(Arc::new(move |x| src(m2.b(x[2]), x[0])));
    let s = solve_limit_transport(&cfg).unwrap();
    let mut err = 0.0f64;
    for (c, u) in s.u_plus.iter().enumerate() {
        let x = s.grid_plus.centre(c);
        err = err.max((u - (PI * x[0]).sin() * m.a(x[2]).0).abs());
    }
    for (c, u) in s.u_minus.iter().enumerate() {
        let x = s.grid_minus.centre(c);
        err = err.max((u - (PI * x[0]).sin() * m.b(x[2]).0).abs());
    }
    err
}

#[test]
fn manufactured_solution_converges() {
    for r in [0.0, 3.0] {
        let e: Vec<f64> = [8, 16, 32].iter().map(|&n| mms_error(n, 0.7, r)).collect();
        let order = (e[1] / e[2]).log2();
        assert!(order > 1.8, "{r}: {e:?}");
    }
}
