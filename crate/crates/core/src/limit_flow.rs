//! Homogenized coupled Darcy flow: two volumetric problems linked through the
//! fissure interface law on `Σ`, plus the tangential interface system.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::cell::EffectiveTensors;
use crate::error::{invalid, Error, Result};
use crate::linalg::{inv_sqrt2, min_eigenvalue2, pcg, CsrMatrix, TripletBuilder};
use crate::stochastic::ErgodicStats;

pub type VectorField = Arc<dyn Fn([f64; 3]) -> [f64; 3] + Send + Sync>;

pub fn zero_field() -> VectorField {
    Arc::new(|_| [0.0; 3])
}

/// Uniform cell-centred grid on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub n: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

impl BoxGrid {
    pub fn new(lo: [f64; 3], hi: [f64; 3], n: [usize; 3]) -> Self {
        let spacing = [0, 1, 2].map(|d| (hi[d] - lo[d]) / n[d] as f64);
        BoxGrid { n, origin: lo, spacing }
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: [usize; 3]) -> usize {
        i[0] + self.n[0] * (i[1] + self.n[1] * i[2])
    }

    pub fn coords(&self, c: usize) -> [usize; 3] {
        [c % self.n[0], (c / self.n[0]) % self.n[1], c / (self.n[0] * self.n[1])]
    }

    pub fn centre(&self, c: usize) -> [f64; 3] {
        let i = self.coords(c);
        [0, 1, 2].map(|d| self.origin[d] + (i[d] as f64 + 0.5) * self.spacing[d])
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Area of a face normal to `d`.
    pub fn face_area(&self, d: usize) -> f64 {
        self.cell_volume() / self.spacing[d]
    }

    pub fn face_count(&self, d: usize) -> usize {
        let mut m = self.n;
        m[d] += 1;
        m[0] * m[1] * m[2]
    }

    /// Face normal to `d` at lattice position `i` (`i[d]` in `0..=n[d]`).
    pub fn face_index(&self, d: usize, i: [usize; 3]) -> usize {
        let mut m = self.n;
        m[d] += 1;
        i[0] + m[0] * (i[1] + m[1] * i[2])
    }

    pub fn face_centre(&self, d: usize, i: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|e| {
            let off = if e == d { 0.0 } else { 0.5 };
            self.origin[e] + (i[e] as f64 + off) * self.spacing[e]
        })
    }

    /// Index of the `Σ` column `(i, j)`.
    pub fn column(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    pub fn columns(&self) -> usize {
        self.n[0] * self.n[1]
    }
}

/// Box domain `Ω⁺ = Σ × (0, H⁺)`, `Ω_h⁻ = Σ × (−h − H⁻, −h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDomain {
    /// `[x₁ min, x₁ max, x₂ min, x₂ max]`.
    pub sigma: [f64; 4],
    pub h: f64,
    pub height_plus: f64,
    pub height_minus: f64,
}

impl FlowDomain {
    pub fn validate(&self) -> Result<()> {
        let s = self.sigma;
        if !(s[1] > s[0] && s[3] > s[2]) {
            return invalid("sigma must be a non-empty rectangle");
        }
        if !(self.h > 0.0 && self.height_plus > 0.0 && self.height_minus > 0.0) {
            return invalid("h and region heights must be positive");
        }
        Ok(())
    }

    pub fn sigma_area(&self) -> f64 {
        (self.sigma[1] - self.sigma[0]) * (self.sigma[3] - self.sigma[2])
    }
}

/// Cells per direction; `n2 = 1` gives the `(x₁, x₃)` slice mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMesh {
    pub n1: usize,
    pub n2: usize,
    pub n3_plus: usize,
    pub n3_minus: usize,
}

impl FlowMesh {
    pub fn uniform(n: usize) -> Self {
        FlowMesh { n1: n, n2: n, n3_plus: n, n3_minus: n }
    }

    pub fn slice(n: usize) -> Self {
        FlowMesh { n1: n, n2: 1, n3_plus: n, n3_minus: n }
    }

    pub fn grids(&self, dom: &FlowDomain) -> (BoxGrid, BoxGrid) {
        let s = dom.sigma;
        let plus = BoxGrid::new([s[0], s[2], 0.0], [s[1], s[3], dom.height_plus], [self.n1, self.n2, self.n3_plus]);
        let minus = BoxGrid::new(
            [s[0], s[2], -dom.h - dom.height_minus],
            [s[1], s[3], -dom.h],
            [self.n1, self.n2, self.n3_minus],
        );
        (plus, minus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Monolithic below 4096 unknowns, fixed point above.
    #[default]
    Auto,
    FixedPoint,
    Monolithic,
}

const MONOLITHIC_LIMIT: usize = 4096;

#[derive(Clone)]
pub struct FlowConfig {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub mu: f64,
    pub gamma: f64,
    pub tensors: EffectiveTensors,
    pub stats: ErgodicStats,
    pub domain: FlowDomain,
    pub g_plus: VectorField,
    pub g_minus: VectorField,
    pub coupling: CouplingMode,
}

impl fmt::Debug for FlowConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowConfig")
            .field("mu_plus", &self.mu_plus)
            .field("mu_minus", &self.mu_minus)
            .field("mu", &self.mu)
            .field("gamma", &self.gamma)
            .field("domain", &self.domain)
            .field("coupling", &self.coupling)
            .finish()
    }
}

pub(crate) fn orthotropic(k: &Matrix3<f64>, name: &str) -> Result<[f64; 3]> {
    let scale = k.amax();
    for a in 0..3 {
        for b in 0..3 {
            if a != b && k[(a, b)].abs() > 1e-8 * scale {
                return invalid(format!("{name} has off-diagonal entries; the box solver needs an orthotropic tensor"));
            }
        }
        if !(k[(a, a)] > 0.0) {
            return Err(Error::NotPositiveDefinite(name.into()));
        }
    }
    Ok([k[(0, 0)], k[(1, 1)], k[(2, 2)]])
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        for (v, n) in [(self.mu_plus, "mu_plus"), (self.mu_minus, "mu_minus"), (self.mu, "mu")] {
            if !(v > 0.0) {
                return invalid(format!("{n} must be positive, got {v}"));
            }
        }
        if !(self.gamma >= 0.0) {
            return invalid(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.tensors.k0 > 0.0) {
            return invalid("k0 must be positive");
        }
        orthotropic(&self.tensors.k_hat_plus, "K_hat_plus")?;
        orthotropic(&self.tensors.k_hat_minus, "K_hat_minus")?;
        Ok(())
    }

    /// `β = k₀/(μ h ⟨1/q²⟩)`, so that `(v⁺)₃ = β (p⁺ − p⁻)` on `Σ`.
    pub fn interface_conductance(&self) -> f64 {
        self.tensors.k0 / (self.mu * self.domain.h * self.stats.mean_inv_q2)
    }
}

/// `v_f3 = (p⁺ − p⁻)·k₀/(μ h ⟨q²⟩⟨1/q²⟩)` pointwise.
pub fn interface_velocity(p_plus_trace: &[f64], p_minus_trace: &[f64], cfg: &FlowConfig) -> Vec<f64> {
    let c = cfg.tensors.k0 / (cfg.mu * cfg.domain.h * cfg.stats.mean_q2 * cfg.stats.mean_inv_q2);
    p_plus_trace.iter().zip(p_minus_trace).map(|(a, b)| (a - b) * c).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitFlowSolution {
    pub grid_plus: BoxGrid,
    pub grid_minus: BoxGrid,
    /// Pressures; one common constant is fixed by a zero volume-weighted mean over both regions.
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    /// Normal velocity on faces normal to each direction.
    pub face_plus: [Vec<f64>; 3],
    pub face_minus: [Vec<f64>; 3],
    pub v_plus: Vec<[f64; 3]>,
    pub v_minus: Vec<[f64; 3]>,
    /// `(v⁺)₃` on `Σ × {0}` from the upper half cells.
    pub flux_top: Vec<f64>,
    /// `(v⁻)₃` on `Σ × {−h}` from the lower half cells.
    pub flux_bottom: Vec<f64>,
    pub trace_plus: Vec<f64>,
    pub trace_minus: Vec<f64>,
    pub v_f3: Vec<f64>,
    pub v_f_tau: Vec<[f64; 2]>,
    pub pi0: Vec<f64>,
    pub divergence_residual: f64,
    pub coupling_history: Vec<f64>,
    pub method: CouplingMode,
}

impl LimitFlowSolution {
    /// `(∫_Σ (v⁺)₃, ∫_Σ (v⁻)₃)`.
    pub fn interface_fluxes(&self) -> (f64, f64) {
        let a = self.grid_plus.face_area(2);
        (self.flux_top.iter().sum::<f64>() * a, self.flux_bottom.iter().sum::<f64>() * a)
    }
}

struct Region<'a> {
    grid: &'a BoxGrid,
    mob: [f64; 3],
    g: &'a VectorField,
}

impl Region<'_> {
    /// Interior links and load; boundary faces carry no flux.
    fn assemble(&self, tb: &mut TripletBuilder, rhs: &mut [f64], offset: usize) {
        let gr = self.grid;
        for c in 0..gr.len() {
            let i = gr.coords(c);
            for d in 0..3 {
                if i[d] + 1 >= gr.n[d] {
                    continue;
                }
                let mut j = i;
                j[d] += 1;
                let nb = gr.index(j);
                let area = gr.face_area(d);
                let t = self.mob[d] * area;
                tb.link(offset + c, offset + nb, t / gr.spacing[d]);
                let gf = (self.g)(gr.face_centre(d, j))[d];
                rhs[offset + c] += t * gf;
                rhs[offset + nb] -= t * gf;
            }
        }
    }

    fn face_velocities(&self, p: &[f64]) -> [Vec<f64>; 3] {
        let gr = self.grid;
        [0, 1, 2].map(|d| {
            let mut out = vec![0.0; gr.face_count(d)];
            for c in 0..gr.len() {
                let i = gr.coords(c);
                if i[d] + 1 >= gr.n[d] {
                    continue;
                }
                let mut j = i;
                j[d] += 1;
                let nb = gr.index(j);
                let gf = (self.g)(gr.face_centre(d, j))[d];
                out[gr.face_index(d, j)] = self.mob[d] * (gf + (p[nb] - p[c]) / gr.spacing[d]);
            }
            out
        })
    }
}

struct Interface {
    /// `(top cell, bottom cell, conductance·area, load)` per column.
    links: Vec<(usize, usize, f64, f64)>,
    series: f64,
}

fn interface(cfg: &FlowConfig, gp: &BoxGrid, gm: &BoxGrid, mp: [f64; 3], mm: [f64; 3]) -> Interface {
    let beta = cfg.interface_conductance();
    let (dzp, dzm) = (gp.spacing[2], gm.spacing[2]);
    let series = 1.0 / (1.0 / beta + 0.5 * dzp / mp[2] + 0.5 * dzm / mm[2]);
    let area = gp.face_area(2);
    let mut links = Vec::with_capacity(gp.columns());
    for j in 0..gp.n[1] {
        for i in 0..gp.n[0] {
            let top = gp.index([i, j, 0]);
            let bot = gm.index([i, j, gm.n[2] - 1]);
            let xs = gp.face_centre(2, [i, j, 0]);
            let xb = gm.face_centre(2, [i, j, gm.n[2]]);
            let load = (cfg.g_plus)(xs)[2] * 0.5 * dzp + (cfg.g_minus)(xb)[2] * 0.5 * dzm;
            links.push((top, bot, series * area, load));
        }
    }
    Interface { links, series }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves the coupled limit Darcy problem on `mesh`.
pub fn solve_limit_flow(cfg: &FlowConfig, mesh: &FlowMesh) -> Result<LimitFlowSolution> {
    cfg.validate()?;
    if mesh.n1 < 2 || mesh.n2 < 1 || mesh.n3_plus < 2 || mesh.n3_minus < 2 {
        return invalid("flow mesh needs n1, n3 >= 2 and n2 >= 1");
    }
    let (gp, gm) = mesh.grids(&cfg.domain);
    let kp = orthotropic(&cfg.tensors.k_hat_plus, "K_hat_plus")?;
    let km = orthotropic(&cfg.tensors.k_hat_minus, "K_hat_minus")?;
    let mp = kp.map(|k| k / cfg.mu_plus);
    let mm = km.map(|k| k / cfg.mu_minus);
    let rp = Region { grid: &gp, mob: mp, g: &cfg.g_plus };
    let rm = Region { grid: &gm, mob: mm, g: &cfg.g_minus };
    let (np, nm) = (gp.len(), gm.len());
    let n = np + nm;

    // monolithic operator, also used for residuals
    let mut tb = TripletBuilder::with_capacity(n, 14 * n);
    let mut rhs = vec![0.0; n];
    rp.assemble(&mut tb, &mut rhs, 0);
    rm.assemble(&mut tb, &mut rhs, np);
    let itf = interface(cfg, &gp, &gm, mp, mm);
    for &(t, b, c, load) in &itf.links {
        tb.link(t, np + b, c);
        rhs[t] -= c * load;
        rhs[np + b] += c * load;
    }
    let full = tb.build();
    let rhs_scale = max_abs(&rhs).max(1e-300);

    let mode = match cfg.coupling {
        CouplingMode::Auto if n <= MONOLITHIC_LIMIT => CouplingMode::Monolithic,
        CouplingMode::Auto => CouplingMode::FixedPoint,
        m => m,
    };
    let mut history = Vec::new();
    let mut p = vec![0.0; n];
    let mut method = mode;
    if mode == CouplingMode::FixedPoint {
        match fixed_point(&rp, &rm, &itf, &full, &rhs, &mut p, &mut history) {
            Ok(()) => {}
            Err(_) => {
                method = CouplingMode::Monolithic;
                p.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    if method == CouplingMode::Monolithic {
        if max_abs(&rhs) == 0.0 {
            p.iter_mut().for_each(|v| *v = 0.0);
        } else {
            pcg(&full, &rhs, &mut p, 1e-13, 20 * n + 2000, true)
                .map_err(|e| if history.is_empty() { e } else { Error::Coupling { history: history.clone() } })?;
        }
        history.push(full.residual_norm(&p, &rhs) / rhs_scale);
    }
    // gauge: zero volume-weighted mean over both regions
    let (vp, vm) = (gp.cell_volume(), gm.cell_volume());
    let mean = (p[..np].iter().sum::<f64>() * vp + p[np..].iter().sum::<f64>() * vm) / (np as f64 * vp + nm as f64 * vm);
    p.iter_mut().for_each(|v| *v -= mean);

    let res = full.apply(&p);
    let divergence_residual = res.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / rhs_scale.max(1.0);

    let (pp, pm) = (p[..np].to_vec(), p[np..].to_vec());
    let mut face_plus = rp.face_velocities(&pp);
    let mut face_minus = rm.face_velocities(&pm);
    let cols = gp.columns();
    let mut flux_top = vec![0.0; cols];
    let mut flux_bottom = vec![0.0; cols];
    let mut trace_plus = vec![0.0; cols];
    let mut trace_minus = vec![0.0; cols];
    for (col, &(t, b, _, load)) in itf.links.iter().enumerate() {
        let v = itf.series * (pp[t] - pm[b] + load);
        let (i, j) = (col % gp.n[0], col / gp.n[0]);
        let xs = gp.face_centre(2, [i, j, 0]);
        let xb = gm.face_centre(2, [i, j, gm.n[2]]);
        let (hp, hm) = (0.5 * gp.spacing[2], 0.5 * gm.spacing[2]);
        // half-cell Darcy laws on each side
        trace_plus[col] = pp[t] - hp * (v / mp[2] - (cfg.g_plus)(xs)[2]);
        trace_minus[col] = pm[b] + hm * (v / mm[2] - (cfg.g_minus)(xb)[2]);
        flux_top[col] = mp[2] * ((cfg.g_plus)(xs)[2] + (pp[t] - trace_plus[col]) / hp);
        flux_bottom[col] = mm[2] * ((cfg.g_minus)(xb)[2] + (trace_minus[col] - pm[b]) / hm);
        face_plus[2][gp.face_index(2, [i, j, 0])] = flux_top[col];
        face_minus[2][gm.face_index(2, [i, j, gm.n[2]])] = flux_bottom[col];
    }
    let v_f3 = interface_velocity(&trace_plus, &trace_minus, cfg);
    let v_plus = cell_velocities(&gp, &face_plus);
    let v_minus = cell_velocities(&gm, &face_minus);
    Ok(LimitFlowSolution {
        grid_plus: gp,
        grid_minus: gm,
        p_plus: pp,
        p_minus: pm,
        face_plus,
        face_minus,
        v_plus,
        v_minus,
        flux_top,
        flux_bottom,
        trace_plus,
        trace_minus,
        v_f3,
        // the tangential system of the limit law is homogeneous
        v_f_tau: vec![[0.0; 2]; cols],
        pi0: vec![0.0; cols],
        divergence_residual,
        coupling_history: history,
        method,
    })
}

fn fixed_point(
    rp: &Region,
    rm: &Region,
    itf: &Interface,
    full: &CsrMatrix,
    rhs: &[f64],
    p: &mut [f64],
    history: &mut Vec<f64>,
) -> Result<()> {
    let (np, nm) = (rp.grid.len(), rm.grid.len());
    let mut tbp = TripletBuilder::new(np);
    let mut bp = vec![0.0; np];
    rp.assemble(&mut tbp, &mut bp, 0);
    let mut tbm = TripletBuilder::new(nm);
    let mut bm = vec![0.0; nm];
    rm.assemble(&mut tbm, &mut bm, 0);
    for &(t, b, c, _) in &itf.links {
        tbp.add(t, t, c);
        tbm.add(b, b, c);
    }
    let (ap, am) = (tbp.build(), tbm.build());
    let scale = max_abs(rhs).max(1e-300);
    let mut xp = p[..np].to_vec();
    let mut xm = p[np..].to_vec();
    for _ in 0..500 {
        let mut fp = bp.clone();
        let mut fm = bm.clone();
        for &(t, b, c, load) in &itf.links {
            fp[t] += c * (xm[b] - load);
            fm[b] += c * (xp[t] + load);
        }
        let mut yp = xp.clone();
        let mut ym = xm.clone();
        pcg(&ap, &fp, &mut yp, 1e-14, 20 * np + 1000, false)?;
        pcg(&am, &fm, &mut ym, 1e-14, 20 * nm + 1000, false)?;
        for k in 0..np {
            xp[k] = 0.5 * (xp[k] + yp[k]);
        }
        for k in 0..nm {
            xm[k] = 0.5 * (xm[k] + ym[k]);
        }
        p[..np].copy_from_slice(&xp);
        p[np..].copy_from_slice(&xm);
        let r = full.residual_norm(p, rhs) / (scale * (rhs.len() as f64).sqrt());
        history.push(r);
        if r <= 1e-12 {
            return Ok(());
        }
    }
    Err(Error::Coupling { history: history.clone() })
}

fn cell_velocities(g: &BoxGrid, faces: &[Vec<f64>; 3]) -> Vec<[f64; 3]> {
    (0..g.len())
        .map(|c| {
            let i = g.coords(c);
            [0, 1, 2].map(|d| {
                let mut j = i;
                j[d] += 1;
                0.5 * (faces[d][g.face_index(d, i)] + faces[d][g.face_index(d, j)])
            })
        })
        .collect()
}

/// Discrete flow functional `Σ_f vol (μ v²/(2K) − g v) + Σ_Σ A (v²/(2c) − G v)`
/// whose constrained minimiser over discretely divergence-free face fields is
/// the computed solution.
pub fn flow_energy(cfg: &FlowConfig, sol: &LimitFlowSolution, face_plus: &[Vec<f64>; 3], face_minus: &[Vec<f64>; 3]) -> Result<f64> {
    let kp = orthotropic(&cfg.tensors.k_hat_plus, "K_hat_plus")?;
    let km = orthotropic(&cfg.tensors.k_hat_minus, "K_hat_minus")?;
    let mp = kp.map(|k| k / cfg.mu_plus);
    let mm = km.map(|k| k / cfg.mu_minus);
    let mut e = 0.0;
    for (g, faces, mob, field) in [(&sol.grid_plus, face_plus, mp, &cfg.g_plus), (&sol.grid_minus, face_minus, mm, &cfg.g_minus)] {
        for d in 0..3 {
            let vol = g.cell_volume();
            for c in 0..g.len() {
                let i = g.coords(c);
                if i[d] + 1 >= g.n[d] {
                    continue;
                }
                let mut j = i;
                j[d] += 1;
                let v = faces[d][g.face_index(d, j)];
                e += vol * (0.5 * v * v / mob[d] - field(g.face_centre(d, j))[d] * v);
            }
        }
    }
    let itf = interface(cfg, &sol.grid_plus, &sol.grid_minus, mp, mm);
    let gp = &sol.grid_plus;
    let area = gp.face_area(2);
    for (col, &(_, _, _, load)) in itf.links.iter().enumerate() {
        let (i, j) = (col % gp.n[0], col / gp.n[0]);
        let v = face_plus[2][gp.face_index(2, [i, j, 0])];
        e += area * (0.5 * v * v / itf.series - load * v);
    }
    Ok(e)
}

/// Solution of the tangential interface system on a grid of `Σ`.
#[derive(Debug, Clone, Serialize)]
pub struct TangentialSolution {
    pub grid: BoxGrid,
    pub v_tau: Vec<[f64; 2]>,
    pub pi0: Vec<f64>,
    /// Constant resistance `(μ/⟨q⟩²)K_f⁻¹ + (γ/h)((K*⁺)^{−1/2} + (K*⁻)^{−1/2})`.
    pub resistance: Matrix2<f64>,
    pub divergence_residual: f64,
}

pub type SurfaceField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// `(μ/⟨q⟩²)K_f⁻¹ v + (γ/h)((K*⁺)^{−1/2} + (K*⁻)^{−1/2}) v + ∇π₀ = f`,
/// `div v = 0` in `Σ`, `v·n = 0` on `∂Σ`.
pub fn solve_tangential_darcy(cfg: &FlowConfig, forcing: &SurfaceField, n: [usize; 2]) -> Result<TangentialSolution> {
    cfg.validate()?;
    let t = &cfg.tensors;
    if min_eigenvalue2(&t.k_f) <= 0.0 {
        return Err(Error::NotPositiveDefinite("K_f".into()));
    }
    let kf_inv = t.k_f.try_inverse().ok_or_else(|| Error::NotPositiveDefinite("K_f".into()))?;
    let m = inv_sqrt2(&t.k_star_plus, "K*+")? + inv_sqrt2(&t.k_star_minus, "K*-")?;
    let resistance = kf_inv * (cfg.mu / cfg.stats.mean_q.powi(2)) + m * (cfg.gamma / cfg.domain.h);
    let mobility = resistance.try_inverse().ok_or_else(|| Error::NotPositiveDefinite("tangential resistance".into()))?;
    let mob3 = Matrix3::new(mobility[(0, 0)], mobility[(0, 1)], 0.0, mobility[(1, 0)], mobility[(1, 1)], 0.0, 0.0, 0.0, 1.0);
    let mob = orthotropic(&mob3, "tangential mobility")?;
    let s = cfg.domain.sigma;
    let grid = BoxGrid::new([s[0], s[2], 0.0], [s[1], s[3], 1.0], [n[0], n[1], 1]);
    let f3: VectorField = {
        let f = forcing.clone();
        Arc::new(move |x| {
            let v = f([x[0], x[1]]);
            [v[0], v[1], 0.0]
        })
    };
    let region = Region { grid: &grid, mob, g: &f3 };
    let len = grid.len();
    let mut tb = TripletBuilder::new(len);
    let mut rhs = vec![0.0; len];
    region.assemble(&mut tb, &mut rhs, 0);
    let a = tb.build();
    let mut pi = vec![0.0; len];
    if max_abs(&rhs) > 0.0 {
        pcg(&a, &rhs, &mut pi, 1e-13, 20 * len + 1000, true)?;
    }
    let mean = pi.iter().sum::<f64>() / len as f64;
    pi.iter_mut().for_each(|v| *v -= mean);
    let res = a.apply(&pi);
    let divergence_residual = res.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / max_abs(&rhs).max(1.0);
    let faces = region.face_velocities(&pi);
    let v3 = cell_velocities(&grid, &faces);
    Ok(TangentialSolution { grid, v_tau: v3.iter().map(|v| [v[0], v[1]]).collect(), pi0: pi, resistance, divergence_residual })
}
