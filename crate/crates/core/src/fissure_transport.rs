//! One-dimensional transport inside a single fissure: the fundamental
//! solutions `w`, `z`, test profiles and the transmission coefficients of the
//! limit exchange conditions.

use std::fmt;
use std::sync::Arc;

use ode_solvers::dop_shared::OutputType;
use ode_solvers::{Dopri5, System, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fissure_geometry::{Fissure, GeometryParams};
use crate::quad::PanelGrid;
use crate::stochastic::{ErgodicStats, StationaryProcess};

pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const GLL_ORDER: usize = 12;
const PICARD_TOL: f64 = 1e-12;
const PICARD_CAP: usize = 200;

/// Coefficients of the vertical fissure equation
/// `−(D a u′)′ − a v₃ u′ + ℛ a u = 0` on `[−h, 0]`, `a(x₃) = (q_i q_j)(−ε^{−θ}x₃)`.
#[derive(Clone)]
pub struct FissureODEConfig {
    pub diffusivity: f64,
    /// `x₃ ↦ D*(−ε^{−θ}x₃)`; replaces `diffusivity` when present.
    pub dispersive: Option<Profile>,
    pub reaction: f64,
    pub v3: f64,
    pub qq: Profile,
    pub h: f64,
    pub epsilon: f64,
    pub theta: f64,
    /// Bound on `|q′|` used to size integration panels.
    pub oscillation_rate: f64,
    /// `(c₁², c₂²)`.
    pub qq_bounds: (f64, f64),
}

impl fmt::Debug for FissureODEConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FissureODEConfig")
            .field("diffusivity", &self.diffusivity)
            .field("dispersive", &self.dispersive.is_some())
            .field("reaction", &self.reaction)
            .field("v3", &self.v3)
            .field("h", &self.h)
            .field("epsilon", &self.epsilon)
            .field("theta", &self.theta)
            .finish()
    }
}

impl FissureODEConfig {
    /// Constant aperture `q ≡ q0`.
    pub fn constant(q0: f64, diffusivity: f64, reaction: f64, v3: f64, h: f64) -> Self {
        FissureODEConfig {
            diffusivity,
            dispersive: None,
            reaction,
            v3,
            qq: Arc::new(move |_| q0 * q0),
            h,
            epsilon: 1.0,
            theta: 0.5,
            oscillation_rate: 0.0,
            qq_bounds: (q0 * q0, q0 * q0),
        }
    }

    /// Profile `q(−ε^{−θ}x₃ + α_i) q(−ε^{−θ}x₃ + α_j)` of a stationary process.
    #[allow(clippy::too_many_arguments)]
    pub fn from_process(
        q: Arc<StationaryProcess>,
        alpha_i: f64,
        alpha_j: f64,
        epsilon: f64,
        theta: f64,
        h: f64,
        diffusivity: f64,
        reaction: f64,
        v3: f64,
    ) -> Self {
        let scale = epsilon.powf(-theta);
        let (c1, c2) = (q.params.bound_c1, q.params.bound_c2);
        let c3 = q.params.bound_c3;
        FissureODEConfig {
            diffusivity,
            dispersive: None,
            reaction,
            v3,
            qq: Arc::new(move |x| {
                let s = -scale * x;
                q.eval(s + alpha_i) * q.eval(s + alpha_j)
            }),
            h,
            epsilon,
            theta,
            oscillation_rate: c3,
            qq_bounds: (c1 * c1, c2 * c2),
        }
    }

    pub fn from_fissure(f: &Fissure, g: &GeometryParams, diffusivity: f64, reaction: f64, v3: f64) -> Self {
        let scale = g.epsilon.powf(-g.theta);
        let p = &f.media.q.params;
        let (c1, c2, c3) = (p.bound_c1, p.bound_c2, p.bound_c3);
        let fis = f.clone();
        FissureODEConfig {
            diffusivity,
            dispersive: None,
            reaction,
            v3,
            qq: Arc::new(move |x| {
                let s = -scale * x;
                fis.q_i(s) * fis.q_j(s)
            }),
            h: g.h,
            epsilon: g.epsilon,
            theta: g.theta,
            oscillation_rate: c3,
            qq_bounds: (c1 * c1, c2 * c2),
        }
    }

    /// Dispersive coefficient `D*(s) = D_mol + D_disp(s + α)` frozen at the fissure centre.
    pub fn with_dispersion(mut self, d_disp: Arc<StationaryProcess>, d_mol: f64, alpha: f64) -> Self {
        let scale = self.epsilon.powf(-self.theta);
        self.oscillation_rate = self.oscillation_rate.max(d_disp.params.bound_c3);
        self.dispersive = Some(Arc::new(move |x| d_mol + d_disp.eval(-scale * x + alpha)));
        self
    }

    pub fn diffusivity_at(&self, x: f64) -> f64 {
        match &self.dispersive {
            Some(d) => d(x),
            None => self.diffusivity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return invalid(format!("fissure height must be positive, got {}", self.h));
        }
        if !(self.reaction >= 0.0) {
            return invalid(format!("reaction rate must be >= 0, got {}", self.reaction));
        }
        if self.dispersive.is_none() && !(self.diffusivity > 0.0) {
            return invalid(format!("diffusivity must be positive, got {}", self.diffusivity));
        }
        if !self.v3.is_finite() {
            return invalid("vertical velocity is not finite");
        }
        if !(self.epsilon > 0.0) || !(self.theta > 0.0) {
            return invalid("epsilon and theta must be positive");
        }
        let (lo, hi) = self.qq_bounds;
        for k in 0..=64 {
            let x = -self.h * k as f64 / 64.0;
            let a = (self.qq)(x);
            if !(a >= lo * (1.0 - 1e-12) && a <= hi * (1.0 + 1e-12)) {
                return invalid(format!("aperture product {a} outside [{lo}, {hi}] at x3 = {x}"));
            }
            if !(self.diffusivity_at(x) > 0.0) {
                return invalid(format!("diffusivity not positive at x3 = {x}"));
            }
        }
        Ok(())
    }

    /// Integrator step `ε^θ·min(1, 1/(10 c₃))`, also capped by the reaction
    /// and drift lengths.
    pub fn step(&self) -> f64 {
        let c3 = self.oscillation_rate;
        let f = if c3 > 0.0 { (1.0 / (10.0 * c3)).min(1.0) } else { 1.0 };
        let rate = (self.reaction / self.diffusivity).sqrt() + self.v3.abs() / self.diffusivity;
        (self.epsilon.powf(self.theta) * f).min(1.0 / rate.max(1e-300))
    }

    fn grid(&self) -> PanelGrid {
        PanelGrid::new(-self.h, 0.0, self.step().min(self.h), GLL_ORDER)
    }
}

/// Solution of the fissure equation on panel nodes of `[−h, 0]`.
#[derive(Debug, Clone)]
pub struct FissureProfile {
    pub grid: PanelGrid,
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
    /// `a u′ exp(φ)`, `φ(x₃) = ∫₀^{x₃} v₃/D`.
    pub weighted_derivative: Vec<f64>,
    pub iterations: usize,
    /// `sup |u − T u|` of the Volterra map at the returned iterate.
    pub residual: f64,
}

impl FissureProfile {
    pub fn x(&self) -> &[f64] {
        &self.grid.x
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.value, x)
    }

    pub fn at_bottom(&self) -> f64 {
        self.value[0]
    }
}

/// Node data shared by the Volterra maps.
struct Kernel {
    grid: PanelGrid,
    a: Vec<f64>,
    d: Vec<f64>,
    /// `exp(φ)`.
    e: Vec<f64>,
    /// `E(x) = ∫₀^x exp(−φ)/(D a)`.
    big_e: Vec<f64>,
    reaction: f64,
}

fn from_zero(grid: &PanelGrid, f: &[f64]) -> Vec<f64> {
    let c = grid.cumulative(f);
    let top = *c.last().unwrap();
    c.iter().map(|v| v - top).collect()
}

impl Kernel {
    fn new(cfg: &FissureODEConfig) -> Self {
        let grid = cfg.grid();
        let a = grid.map(|x| (cfg.qq)(x));
        let d = grid.map(|x| cfg.diffusivity_at(x));
        let phi = from_zero(&grid, &d.iter().map(|d| cfg.v3 / d).collect::<Vec<_>>());
        let e: Vec<f64> = phi.iter().map(|p| p.exp()).collect();
        let inv: Vec<f64> = (0..grid.len()).map(|k| 1.0 / (e[k] * d[k] * a[k])).collect();
        let big_e = from_zero(&grid, &inv);
        Kernel { grid, a, d, e, big_e, reaction: cfg.reaction }
    }

    /// `g + ℛ[E(x)∫₀^x a e u − ∫₀^x a e u E]` and `ℛ∫₀^x a e u`.
    fn apply(&self, g: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let f1: Vec<f64> = (0..n).map(|k| self.a[k] * self.e[k] * u[k]).collect();
        let f2: Vec<f64> = (0..n).map(|k| f1[k] * self.big_e[k]).collect();
        let i1 = from_zero(&self.grid, &f1);
        let i2 = from_zero(&self.grid, &f2);
        let out = (0..n).map(|k| g[k] + self.reaction * (self.big_e[k] * i1[k] - i2[k])).collect();
        let flux = i1.iter().map(|v| self.reaction * v).collect();
        (out, flux)
    }

    fn solve(&self, g: Vec<f64>, flux0: f64, what: &str) -> Result<FissureProfile> {
        let mut u = g.clone();
        let mut it = 0;
        let mut flux;
        loop {
            let (next, fl) = self.apply(&g, &u);
            let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let diff = next.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            u = next;
            flux = fl;
            it += 1;
            if diff <= PICARD_TOL * scale {
                break;
            }
            if it >= PICARD_CAP || !diff.is_finite() {
                return Err(Error::NoConvergence { what: format!("successive approximation for {what}"), residual: diff, iterations: it });
            }
        }
        let (check, _) = self.apply(&g, &u);
        let residual = check.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let n = self.grid.len();
        // D a u′ e^φ = flux0 + ℛ∫₀^x a e u
        let weighted: Vec<f64> = (0..n).map(|k| (flux0 + flux[k]) / self.d[k]).collect();
        let derivative = (0..n).map(|k| weighted[k] / (self.a[k] * self.e[k])).collect();
        Ok(FissureProfile { grid: self.grid.clone(), value: u, derivative, weighted_derivative: weighted, iterations: it, residual })
    }
}

/// `w` with `w(0) = 1`, `w′(0) = 0`, by successive approximation.
pub fn solve_w(cfg: &FissureODEConfig) -> Result<FissureProfile> {
    cfg.validate()?;
    let k = Kernel::new(cfg);
    let g = vec![1.0; k.grid.len()];
    k.solve(g, 0.0, "w")
}

/// `z` with `z(0) = 0`, `z′(0) = 1/(q_i q_j)(0)`, by successive approximation.
pub fn solve_z(cfg: &FissureODEConfig) -> Result<FissureProfile> {
    cfg.validate()?;
    let k = Kernel::new(cfg);
    let d0 = *k.d.last().unwrap();
    let g: Vec<f64> = k.big_e.iter().map(|e| d0 * e).collect();
    k.solve(g, d0, "z")
}

struct FluxForm<'a> {
    cfg: &'a FissureODEConfig,
}

// state (u, F = D a u′) in s = −x₃
impl System<f64, Vector2<f64>> for FluxForm<'_> {
    fn system(&self, s: f64, y: &Vector2<f64>, dy: &mut Vector2<f64>) {
        let x = -s;
        let a = (self.cfg.qq)(x);
        let d = self.cfg.diffusivity_at(x);
        let du = y[1] / (d * a);
        let df = -self.cfg.v3 * y[1] / d + self.cfg.reaction * a * y[0];
        dy[0] = -du;
        dy[1] = -df;
    }
}

/// Integrates the differential form from `x₃ = 0` with initial `(u, u′)` and
/// returns `(u, u′)` at the requested descending-order-agnostic nodes.
pub fn solve_ode(cfg: &FissureODEConfig, u0: f64, du0: f64, nodes: &[f64]) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&i, &j| nodes[j].partial_cmp(&nodes[i]).unwrap());
    let a0 = (cfg.qq)(0.0);
    let d0 = cfg.diffusivity_at(0.0);
    let mut y = Vector2::new(u0, d0 * a0 * du0);
    let mut s = 0.0;
    let mut out = vec![[0.0; 2]; nodes.len()];
    let max_step = cfg.step().min(cfg.h);
    for &k in &order {
        let target = -nodes[k];
        if target < -1e-15 || target > cfg.h * (1.0 + 1e-12) {
            return invalid(format!("node {} outside [-h, 0]", nodes[k]));
        }
        while target - s > 1e-15 {
            let end = (s + max_step).min(target);
            // Dopri5 rather than Dop853: the latter stalls below rtol 1e-11 in this crate version
            let mut solver = Dopri5::from_param(
                FluxForm { cfg },
                s,
                end,
                end - s,
                y,
                1e-12,
                1e-14,
                0.9,
                0.04,
                0.2,
                10.0,
                end - s,
                0.0,
                1_000_000,
                u32::MAX,
                OutputType::Sparse,
            );
            solver.integrate().map_err(|e| Error::StepUnderflow(format!("fissure ODE: {e:?}")))?;
            y = *solver.y_out().last().unwrap();
            s = end;
        }
        let x = -s;
        out[k] = [y[0], y[1] / (cfg.diffusivity_at(x) * (cfg.qq)(x))];
    }
    Ok(out)
}

/// `sup` over nodes of the Volterra–ODE discrepancy for both `w` and `z`.
pub fn dual_method_gap(cfg: &FissureODEConfig) -> Result<f64> {
    let w = solve_w(cfg)?;
    let z = solve_z(cfg)?;
    let ow = solve_ode(cfg, 1.0, 0.0, w.x())?;
    let oz = solve_ode(cfg, 0.0, 1.0 / (cfg.qq)(0.0), z.x())?;
    let gw = w.value.iter().zip(&ow).fold(0.0f64, |m, (a, b)| m.max((a - b[0]).abs()));
    let gz = z.value.iter().zip(&oz).fold(0.0f64, |m, (a, b)| m.max((a - b[0]).abs()));
    Ok(gw.max(gz))
}

/// `v₃ = Δp·k₀/(μ h ⟨q²⟩⟨1/q²⟩)` with `Δp = p⁺ − p⁻`.
pub fn vertical_velocity(p_plus: f64, p_minus: f64, k0: f64, mu: f64, h: f64, stats: &ErgodicStats) -> f64 {
    (p_plus - p_minus) * k0 / (mu * h * stats.mean_q2 * stats.mean_inv_q2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Errors {
    pub w: f64,
    pub z: f64,
    pub w_flux: f64,
    pub z_flux: f64,
}

impl Prop2Errors {
    pub fn max(&self) -> f64 {
        self.w.max(self.z).max(self.w_flux).max(self.z_flux)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.z, self.w_flux, self.z_flux]
    }
}

fn sup_rel(num: &[f64], lim: &[f64]) -> f64 {
    let d = num.iter().zip(lim).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let s = lim.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

/// `R̂ = √(ℛ⟨q²⟩⟨1/q²⟩/D)`.
pub fn r_hat(reaction: f64, diffusivity: f64, stats: &ErgodicStats) -> f64 {
    (reaction * stats.mean_q2 * stats.mean_inv_q2 / diffusivity).sqrt()
}

/// Relative sup-norm errors of the four limits, each normalised by the sup of
/// its limit function (absolute when that vanishes).
pub fn proposition2_errors(cfg: &FissureODEConfig, stats: &ErgodicStats) -> Result<Prop2Errors> {
    let w = solve_w(cfg)?;
    let z = solve_z(cfg)?;
    let rh = r_hat(cfg.reaction, cfg.diffusivity, stats);
    let m = stats.mean_inv_q2;
    let x = w.x();
    let sinh_over = |x: f64| if rh > 0.0 { (rh * x).sinh() / rh } else { x };
    let cw: Vec<f64> = x.iter().map(|&x| (rh * x).cosh()).collect();
    let cz: Vec<f64> = x.iter().map(|&x| m * sinh_over(x)).collect();
    let cwf: Vec<f64> = x.iter().map(|&x| rh * rh * sinh_over(x) / m).collect();
    Ok(Prop2Errors {
        w: sup_rel(&w.value, &cw),
        z: sup_rel(&z.value, &cz),
        w_flux: sup_rel(&w.weighted_derivative, &cwf),
        z_flux: sup_rel(&z.weighted_derivative, &cw),
    })
}

/// Observed constants of the a priori bounds on one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Bounds {
    pub w_min: f64,
    pub w_max: f64,
    pub z_max_abs: f64,
    /// `min |z(x₃)|/|x₃|` over `x₃ ∈ [−h, 0)`.
    pub z_slope_min: f64,
}

pub fn prop2_bounds(w: &FissureProfile, z: &FissureProfile) -> Prop2Bounds {
    let w_min = w.value.iter().cloned().fold(f64::INFINITY, f64::min);
    let w_max = w.value.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z_max_abs = z.value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let z_slope_min = z
        .x()
        .iter()
        .zip(&z.value)
        .filter(|(x, _)| **x < 0.0)
        .map(|(x, v)| v.abs() / x.abs())
        .fold(f64::INFINITY, f64::min);
    Prop2Bounds { w_min, w_max, z_max_abs, z_slope_min }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    Advective,
    Reactive,
}

/// Test profile `ū` on the nodes of the fissure grid with `ū(0) = u⁺`, `ū(−h) = u⁻`.
pub fn build_profile(u_plus: f64, u_minus: f64, cfg: &FissureODEConfig, mode: ProfileMode) -> Result<FissureProfile> {
    match mode {
        ProfileMode::Advective => {
            if cfg.reaction != 0.0 {
                return invalid("advective profile requires zero reaction rate");
            }
            cfg.validate()?;
            let k = Kernel::new(cfg);
            let eh = k.big_e[0];
            let n = k.grid.len();
            let mut value: Vec<f64> = (0..n).map(|i| u_plus + (u_minus - u_plus) * k.big_e[i] / eh).collect();
            value[0] = u_minus;
            value[n - 1] = u_plus;
            let weighted: Vec<f64> = k.d.iter().map(|d| (u_minus - u_plus) / (eh * d)).collect();
            let derivative = (0..n).map(|i| weighted[i] / (k.a[i] * k.e[i])).collect();
            Ok(FissureProfile { grid: k.grid, value, derivative, weighted_derivative: weighted, iterations: 0, residual: 0.0 })
        }
        ProfileMode::Reactive => {
            let w = solve_w(cfg)?;
            let z = solve_z(cfg)?;
            let zb = z.at_bottom();
            let floor = 1e-3 * cfg.h / cfg.qq_bounds.1;
            if zb.abs() < floor {
                return Err(Error::Degenerate(format!("z(-h) = {zb:e} below {floor:e}")));
            }
            let c = (u_minus - u_plus * w.at_bottom()) / zb;
            let comb = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| u_plus * a + c * b).collect() };
            let mut value = comb(&w.value, &z.value);
            let n = value.len();
            value[0] = u_minus;
            value[n - 1] = u_plus;
            Ok(FissureProfile {
                grid: w.grid.clone(),
                value,
                derivative: comb(&w.derivative, &z.derivative),
                weighted_derivative: comb(&w.weighted_derivative, &z.weighted_derivative),
                iterations: w.iterations.max(z.iterations),
                residual: w.residual.max(z.residual),
            })
        }
    }
}

/// Relative residual of `−(D a u′)′ − a v₃ u′ + ℛ a u` evaluated with the
/// spectral derivative on the profile's panels.
pub fn ode_residual(cfg: &FissureODEConfig, p: &FissureProfile) -> f64 {
    let g = &p.grid;
    let du = g.derivative(&p.value);
    let flux: Vec<f64> = g.x.iter().zip(&du).map(|(&x, d)| cfg.diffusivity_at(x) * (cfg.qq)(x) * d).collect();
    let dflux = g.derivative(&flux);
    let mut res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..g.len() {
        let x = g.x[k];
        let a = (cfg.qq)(x);
        let terms = [-dflux[k], -a * cfg.v3 * du[k], cfg.reaction * a * p.value[k]];
        res = res.max(terms.iter().sum::<f64>().abs());
        scale = terms.iter().fold(scale, |m, t| m.max(t.abs()));
    }
    let scale = scale.max(flux.iter().fold(0.0f64, |m, f| m.max(f.abs())) / cfg.h);
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

/// Bracket data entering the limit exchange conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeParams {
    pub diffusivity: f64,
    pub reaction: f64,
    pub h: f64,
    pub mu: f64,
    pub k0: f64,
    pub mean_q2: f64,
    pub mean_inv_q2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Variant {
    Molecular,
    /// `⟨1/(D* q²)⟩` and `⟨1/D*⟩` of the dispersive coefficient.
    Dispersive { mean_inv_dq2: f64, mean_inv_d: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionCoeffs {
    pub r_hat: f64,
    pub a: f64,
    pub exchange_scale: f64,
    /// `cosh(R̂h)`.
    pub cosh_rh: f64,
}

impl TransmissionCoeffs {
    /// Flux leaving `Ω⁺` through `Γ₀⁺`: `E(cosh(R̂h)u⁺ − A u⁻)`.
    pub fn top_flux(&self, u_plus: f64, u_minus: f64) -> f64 {
        self.exchange_scale * (self.cosh_rh * u_plus - self.a * u_minus)
    }

    /// Flux entering `Ω_h⁻` through `Γ_h⁻`: `E(u⁺ − A cosh(R̂h)u⁻)`.
    pub fn bottom_flux(&self, u_plus: f64, u_minus: f64) -> f64 {
        self.exchange_scale * (u_plus - self.a * self.cosh_rh * u_minus)
    }
}

pub fn transmission_coeffs(p: &ExchangeParams, p_plus: f64, p_minus: f64, variant: Variant) -> Result<TransmissionCoeffs> {
    if !(p.diffusivity > 0.0) || !(p.h > 0.0) || !(p.mu > 0.0) || !(p.reaction >= 0.0) {
        return invalid("exchange parameters must satisfy D, h, mu > 0 and R >= 0");
    }
    let v = (p_plus - p_minus) * p.k0 / (p.mu * p.h * p.mean_q2 * p.mean_inv_q2);
    // m = ⟨1/(D q²)⟩, the only place D enters the exchange scale
    let (m, inv_d) = match variant {
        Variant::Molecular => (p.mean_inv_q2 / p.diffusivity, 1.0 / p.diffusivity),
        Variant::Dispersive { mean_inv_dq2, mean_inv_d } => (mean_inv_dq2, mean_inv_d),
    };
    let r_hat = (p.reaction * p.mean_q2 * m).sqrt();
    let rh = r_hat * p.h;
    let exchange_scale = if rh == 0.0 { 1.0 / (p.h * m) } else { r_hat / (m * rh.sinh()) };
    Ok(TransmissionCoeffs { r_hat, a: (v * p.h * inv_d).exp(), exchange_scale, cosh_rh: rh.cosh() })
}
