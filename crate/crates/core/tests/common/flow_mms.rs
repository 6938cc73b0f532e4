use std::f64::consts::PI;
use std::sync::Arc;

use fissurehom::cell::EffectiveTensors;
use fissurehom::limit_flow::*;
use fissurehom::stochastic::ErgodicStats;

pub const H: f64 = 0.5;
pub const KP: f64 = 2.0;
pub const KM: f64 = 0.5;
pub const MU: f64 = 1.3;

pub fn stats() -> ErgodicStats {
    ErgodicStats { mean_q: 0.3, mean_q2: 0.1, mean_inv_q2: 12.0, window_t: 1e3, stderr: 0.0 }
}

pub fn base(g_plus: VectorField, g_minus: VectorField, coupling: CouplingMode) -> FlowConfig {
    FlowConfig {
        mu_plus: MU,
        mu_minus: MU,
        mu: 0.8,
        gamma: 0.1,
        tensors: EffectiveTensors::isotropic(KP, KM, 0.035144, 1.0),
        stats: stats(),
        domain: FlowDomain { sigma: [0.0, 1.0, 0.0, 1.0], h: H, height_plus: 1.0, height_minus: 1.0 },
        g_plus,
        g_minus,
        coupling,
    }
}

// Manufactured solution: divergence-free velocities from stream functions,
// pressures satisfying the interface law.
pub struct Mms {
    beta: f64,
}

impl Mms {
    pub fn phi_p(x3: f64) -> (f64, f64) {
        let a = PI / 2.0;
        ((a * (1.0 - x3)).sin(), -a * (a * (1.0 - x3)).cos())
    }
    pub fn phi_m(x3: f64) -> (f64, f64) {
        let a = PI / 2.0;
        let s = x3 + H + 1.0;
        ((a * s).sin(), a * (a * s).cos())
    }
    pub fn v_plus(x: [f64; 3]) -> [f64; 3] {
        let (f, df) = Self::phi_p(x[2]);
        [(PI * x[0]).sin() * df, 0.0, -PI * (PI * x[0]).cos() * f]
    }
    pub fn v_minus(x: [f64; 3]) -> [f64; 3] {
        let (f, df) = Self::phi_m(x[2]);
        [(PI * x[0]).sin() * df, 0.0, -PI * (PI * x[0]).cos() * f]
    }
    pub fn b(x3: f64) -> (f64, f64) {
        (x3, 1.0)
    }
    pub fn a(&self, x3: f64) -> (f64, f64) {
        let a0 = Self::b(-H).0 - PI / self.beta;
        (x3 * x3 + a0, 2.0 * x3)
    }
    pub fn p_plus(&self, x: [f64; 3]) -> f64 {
        (PI * x[0]).cos() * self.a(x[2]).0
    }
    pub fn p_minus(x: [f64; 3]) -> f64 {
        (PI * x[0]).cos() * Self::b(x[2]).0
    }
    pub fn grad(c: f64, s: f64, f: (f64, f64)) -> [f64; 3] {
        [-PI * s * f.0, 0.0, c * f.1]
    }
    pub fn config(coupling: CouplingMode) -> (FlowConfig, Mms) {
        let probe = base(zero_field(), zero_field(), coupling);
        let mms = Mms { beta: probe.interface_conductance() };
        let m = Mms { beta: mms.beta };
        let gp: VectorField = Arc::new(move |x| {
            let v = Mms::v_plus(x);
            let gp = Mms::grad((PI * x[0]).cos(), (PI * x[0]).sin(), m.a(x[2]));
            [0, 1, 2].map(|d| MU / KP * v[d] - gp[d])
        });
        let gm: VectorField = Arc::new(|x| {
            let v = Mms::v_minus(x);
            let gp = Mms::grad((PI * x[0]).cos(), (PI * x[0]).sin(), Mms::b(x[2]));
            [0, 1, 2].map(|d| MU / KM * v[d] - gp[d])
        });
        (base(gp, gm, coupling), mms)
    }
}

pub fn pressure_error(n: usize, coupling: CouplingMode) -> (f64, LimitFlowSolution) {
    let (cfg, mms) = Mms::config(coupling);
    let sol = solve_limit_flow(&cfg, &FlowMesh::slice(n)).unwrap();
    let (gp, gm) = (&sol.grid_plus, &sol.grid_minus);
    let ep: Vec<f64> = (0..gp.len()).map(|c| mms.p_plus(gp.centre(c))).collect();
    let em: Vec<f64> = (0..gm.len()).map(|c| Mms::p_minus(gm.centre(c))).collect();
    let mean = (ep.iter().sum::<f64>() + em.iter().sum::<f64>()) / (ep.len() + em.len()) as f64;
    let mut err = 0.0;
    for (a, b) in sol.p_plus.iter().zip(&ep).chain(sol.p_minus.iter().zip(&em)) {
        err += (a - (b - mean)).powi(2) * gp.cell_volume();
    }
    (err.sqrt(), sol)
}

