//! Homogenized transport: advection, diffusion and reaction in `Ω⁺` and `Ω_h⁻`
//! coupled through the fissure exchange law, with surface diffusion on `Σ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fissure_transport::{transmission_coeffs, ExchangeParams, TransmissionCoeffs, Variant};
use crate::limit_flow::{orthotropic, BoxGrid, LimitFlowSolution};
use crate::linalg::{dot, solve_general, CsrMatrix, TripletBuilder};

pub type ScalarField = Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>;

const SOLVE_TOL: f64 = 1e-12;

#[derive(Clone)]
pub struct TransportConfig {
    pub d_hat: Matrix3<f64>,
    pub d_star: Matrix2<f64>,
    pub flow: Arc<LimitFlowSolution>,
    /// Fissure diffusivity, reaction rate `ℛ` (also used in the bulk) and brackets.
    pub exchange: ExchangeParams,
    pub variant: Variant,
    /// Source `f` in `Ω⁺`, multiplied by `|Z¹|`.
    pub source: ScalarField,
    /// Optional source in `Ω_h⁻`; zero in the homogenized problem, used for verification.
    pub source_minus: Option<ScalarField>,
    pub fluid_fraction: f64,
}

impl fmt::Debug for TransportConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransportConfig")
            .field("d_hat", &self.d_hat)
            .field("d_star", &self.d_star)
            .field("exchange", &self.exchange)
            .field("variant", &self.variant)
            .field("fluid_fraction", &self.fluid_fraction)
            .finish()
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        orthotropic(&self.d_hat, "D_hat")?;
        let ds = self.d_star;
        if ds[(0, 1)].abs() > 1e-8 * ds.amax() || ds[(1, 0)].abs() > 1e-8 * ds.amax() {
            return invalid("D_star must be diagonal");
        }
        // D* = 0 is allowed
        if !(ds[(0, 0)] >= 0.0 && ds[(1, 1)] >= 0.0) {
            return Err(Error::NotPositiveDefinite("D_star".into()));
        }
        if !(self.fluid_fraction > 0.0 && self.fluid_fraction <= 1.0) {
            return invalid("fluid fraction must lie in (0, 1]");
        }
        if !(self.exchange.reaction >= 0.0) {
            return invalid("reaction rate must be >= 0");
        }
        Ok(())
    }

    /// Exchange coefficients of each `Σ` column from the pressure traces.
    pub fn column_coeffs(&self) -> Result<Vec<TransmissionCoeffs>> {
        let fl = &self.flow;
        fl.trace_plus
            .iter()
            .zip(&fl.trace_minus)
            .map(|(&a, &b)| transmission_coeffs(&self.exchange, a, b, self.variant))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Top,
    Bottom,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSolution {
    pub grid_plus: BoxGrid,
    pub grid_minus: BoxGrid,
    pub u_plus: Vec<f64>,
    pub u_minus: Vec<f64>,
    /// Trace of `u⁺` on `Σ × {0}` (the surface unknowns).
    pub trace_plus: Vec<f64>,
    /// Trace of `u⁻` on `Σ × {−h}`.
    pub trace_minus: Vec<f64>,
    /// Flux leaving `Ω⁺` through `Γ₀⁺`, per unit area.
    pub interface_flux_top: Vec<f64>,
    /// Flux entering `Ω_h⁻` through `Γ_h⁻`, per unit area.
    pub interface_flux_bottom: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl TransportSolution {
    fn unknowns(&self) -> Vec<f64> {
        let mut x = self.u_plus.clone();
        x.extend_from_slice(&self.u_minus);
        x.extend_from_slice(&self.trace_plus);
        x.extend_from_slice(&self.trace_minus);
        x
    }

    pub fn min_value(&self) -> f64 {
        self.u_plus.iter().chain(&self.u_minus).chain(&self.trace_plus).chain(&self.trace_minus).copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.u_plus.iter().chain(&self.u_minus).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

struct Layout {
    np: usize,
    nm: usize,
    cols: usize,
}

impl Layout {
    fn tp(&self, col: usize) -> usize {
        self.np + self.nm + col
    }
    fn tm(&self, col: usize) -> usize {
        self.np + self.nm + self.cols + col
    }
    fn len(&self) -> usize {
        self.np + self.nm + 2 * self.cols
    }
}

/// Upwind volumetric operator of one region. `sigma_face` is the lattice
/// index `k` of the face on `Σ`; that face is handled by the coupling.
fn assemble_region(
    g: &BoxGrid,
    faces: &[Vec<f64>; 3],
    d: [f64; 3],
    reaction: f64,
    sigma_face: usize,
    offset: usize,
    trace_offset: usize,
    tb: &mut TripletBuilder,
) {
    // the x₂ direction of a one-cell slice is homogeneous, not a boundary
    let lateral = |dir: usize| !(dir == 1 && g.n[1] == 1);
    let vol = g.cell_volume();
    for c in 0..g.len() {
        let i = g.coords(c);
        let row = offset + c;
        tb.add(row, row, reaction * vol);
        for dir in 0..3 {
            let area = g.face_area(dir);
            let cond = d[dir] * area / g.spacing[dir];
            for (side, k) in [(0usize, i[dir]), (1usize, i[dir] + 1)] {
                let mut fi = i;
                fi[dir] = k;
                let w = faces[dir][g.face_index(dir, fi)];
                // outward normal velocity
                let wout = if side == 0 { -w } else { w };
                let interior = k > 0 && k < g.n[dir];
                let nb = if interior {
                    let mut j = i;
                    j[dir] = if side == 0 { i[dir] - 1 } else { i[dir] + 1 };
                    Some(offset + g.index(j))
                } else {
                    None
                };
                let on_sigma = dir == 2 && k == sigma_face;
                let upwind = if on_sigma { Some(trace_offset + g.column(i[0], i[1])) } else { nb };
                if wout < 0.0 {
                    let a = -wout * area;
                    tb.add(row, row, a);
                    if let Some(u) = upwind {
                        tb.add(row, u, -a);
                    }
                }
                if let Some(nb) = nb {
                    if side == 1 {
                        tb.link(row, nb, cond);
                    }
                } else if !on_sigma && lateral(dir) {
                    // zero Dirichlet on the outer boundary, half-cell distance
                    tb.add(row, row, 2.0 * cond);
                }
            }
        }
    }
}

fn assemble(cfg: &TransportConfig) -> Result<(CsrMatrix, Vec<f64>, Vec<TransmissionCoeffs>)> {
    cfg.validate()?;
    let fl = &cfg.flow;
    let (gp, gm) = (&fl.grid_plus, &fl.grid_minus);
    if gp.n[0] != gm.n[0] || gp.n[1] != gm.n[1] {
        return invalid("flow grids do not share a Σ grid");
    }
    let lay = Layout { np: gp.len(), nm: gm.len(), cols: gp.columns() };
    let d = orthotropic(&cfg.d_hat, "D_hat")?;
    let r = cfg.exchange.reaction;
    let coeffs = cfg.column_coeffs()?;
    let mut tb = TripletBuilder::with_capacity(lay.len(), 16 * lay.len());
    let mut rhs = vec![0.0; lay.len()];
    assemble_region(gp, &fl.face_plus, d, r, 0, 0, lay.tp(0), &mut tb);
    assemble_region(gm, &fl.face_minus, d, r, gm.n[2], lay.np, lay.tm(0), &mut tb);

    let (vp, vm) = (gp.cell_volume(), gm.cell_volume());
    for c in 0..lay.np {
        rhs[c] = cfg.fluid_fraction * (cfg.source)(gp.centre(c)) * vp;
    }
    if let Some(s) = &cfg.source_minus {
        for c in 0..lay.nm {
            rhs[lay.np + c] = s(gm.centre(c)) * vm;
        }
    }

    let area = gp.face_area(2);
    let surf = cfg.exchange.h * cfg.exchange.mean_q2;
    let gplus = d[2] * area / (0.5 * gp.spacing[2]);
    let gminus = d[2] * area / (0.5 * gm.spacing[2]);
    for j in 0..gp.n[1] {
        for i in 0..gp.n[0] {
            let col = gp.column(i, j);
            let (t, b) = (gp.index([i, j, 0]), lay.np + gm.index([i, j, gm.n[2] - 1]));
            let (tp, tm) = (lay.tp(col), lay.tm(col));
            let e = &coeffs[col];
            let ex = e.exchange_scale * area;
            // half cell between the top-layer cell and its trace
            tb.link(t, tp, gplus);
            tb.add(tp, tp, ex * e.cosh_rh);
            tb.add(tp, tm, -ex * e.a);
            tb.link(b, tm, gminus);
            tb.add(tm, tm, ex * e.a * e.cosh_rh);
            tb.add(tm, tp, -ex);
            // surface diffusion and advection of the top trace
            for dir in 0..2 {
                if gp.n[dir] == 1 {
                    continue;
                }
                let len = area / gp.spacing[dir];
                let mut ij = [i, j];
                if ij[dir] + 1 < gp.n[dir] {
                    ij[dir] += 1;
                    let nb = lay.tp(gp.column(ij[0], ij[1]));
                    tb.link(tp, nb, surf * cfg.d_star[(dir, dir)] * len / gp.spacing[dir]);
                }
            }
            let vt = fl.v_f_tau[col];
            for dir in 0..2 {
                for side in [0usize, 1] {
                    let mut ij = [i, j];
                    let inside = if side == 0 { ij[dir] > 0 } else { ij[dir] + 1 < gp.n[dir] };
                    if !inside {
                        continue;
                    }
                    if side == 0 {
                        ij[dir] -= 1;
                    } else {
                        ij[dir] += 1;
                    }
                    let nc = gp.column(ij[0], ij[1]);
                    let w = 0.5 * (vt[dir] + fl.v_f_tau[nc][dir]);
                    let wout = if side == 0 { -w } else { w };
                    if wout < 0.0 {
                        let a = -wout * surf * area / gp.spacing[dir];
                        tb.add(tp, tp, a);
                        tb.add(tp, lay.tp(nc), -a);
                    }
                }
            }
        }
    }
    Ok((tb.build(), rhs, coeffs))
}

/// Solves the coupled transport problem on the grids of the flow solution.
pub fn solve_limit_transport(cfg: &TransportConfig) -> Result<TransportSolution> {
    let fl = &cfg.flow;
    if fl.divergence_residual > 1e-8 {
        return invalid(format!("velocity field is not divergence free ({:.2e})", fl.divergence_residual));
    }
    let (a, rhs, coeffs) = assemble(cfg)?;
    let (x, stats) = if rhs.iter().all(|v| *v == 0.0) {
        (vec![0.0; rhs.len()], Default::default())
    } else {
        solve_general(&a, &rhs, SOLVE_TOL)?
    };
    let bn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = if bn > 0.0 { a.residual_norm(&x, &rhs) / bn } else { 0.0 };
    if residual > 1e-10 {
        return Err(Error::NoConvergence { what: "transport solve".into(), residual, iterations: stats.iterations });
    }
    let (np, nm, cols) = (fl.grid_plus.len(), fl.grid_minus.len(), fl.grid_plus.columns());
    let trace_plus = x[np + nm..np + nm + cols].to_vec();
    let trace_minus = x[np + nm + cols..].to_vec();
    let top = (0..cols).map(|c| coeffs[c].top_flux(trace_plus[c], trace_minus[c])).collect();
    let bottom = (0..cols).map(|c| coeffs[c].bottom_flux(trace_plus[c], trace_minus[c])).collect();
    Ok(TransportSolution {
        grid_plus: fl.grid_plus.clone(),
        grid_minus: fl.grid_minus.clone(),
        u_plus: x[..np].to_vec(),
        u_minus: x[np..np + nm].to_vec(),
        trace_plus,
        trace_minus,
        interface_flux_top: top,
        interface_flux_bottom: bottom,
        residual,
        iterations: stats.iterations,
    })
}

/// Exchange flux through `Γ₀⁺` (leaving `Ω⁺`) or `Γ_h⁻` (entering `Ω_h⁻`)
/// evaluated from the traces of `sol`.
pub fn interface_flux(sol: &TransportSolution, cfg: &TransportConfig, side: Side) -> Result<Vec<f64>> {
    let coeffs = cfg.column_coeffs()?;
    Ok(coeffs
        .iter()
        .enumerate()
        .map(|(c, e)| match side {
            Side::Top => e.top_flux(sol.trace_plus[c], sol.trace_minus[c]),
            Side::Bottom => e.bottom_flux(sol.trace_plus[c], sol.trace_minus[c]),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Balance {
    /// `|uᵀ(Au) − uᵀb| / |uᵀb|`.
    pub residual: f64,
    pub source_work: f64,
    /// Volumetric and surface diffusion plus advection.
    pub transport_work: f64,
    pub exchange_work: f64,
    pub reaction_work: f64,
}

/// Discrete weak form tested with the solution itself.
pub fn balance_check(sol: &TransportSolution, cfg: &TransportConfig) -> Result<Balance> {
    let (a, rhs, coeffs) = assemble(cfg)?;
    let x = sol.unknowns();
    if x.len() != a.n() {
        return invalid("solution does not match the configuration grids");
    }
    let ax = a.apply(&x);
    let total = dot(&x, &ax);
    let source_work = dot(&x, &rhs);
    let area = sol.grid_plus.face_area(2);
    let exchange_work: f64 = (0..coeffs.len())
        .map(|c| {
            let (tp, tm) = (sol.trace_plus[c], sol.trace_minus[c]);
            area * (coeffs[c].top_flux(tp, tm) * tp - coeffs[c].bottom_flux(tp, tm) * tm)
        })
        .sum();
    let r = cfg.exchange.reaction;
    let reaction_work = r
        * (sol.u_plus.iter().map(|u| u * u).sum::<f64>() * sol.grid_plus.cell_volume()
            + sol.u_minus.iter().map(|u| u * u).sum::<f64>() * sol.grid_minus.cell_volume());
    let residual = if source_work == 0.0 && total == 0.0 {
        0.0
    } else {
        (total - source_work).abs() / source_work.abs().max(total.abs())
    };
    Ok(Balance { residual, source_work, transport_work: total - exchange_work - reaction_work, exchange_work, reaction_work })
}

/// Net mass fluxes `(∫ top, ∫ bottom)` through the interfaces.
pub fn net_exchange(sol: &TransportSolution) -> (f64, f64) {
    let a = sol.grid_plus.face_area(2);
    (sol.interface_flux_top.iter().sum::<f64>() * a, sol.interface_flux_bottom.iter().sum::<f64>() * a)
}
