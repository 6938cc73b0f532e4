//! Random fissure arrays between the two porous blocks, their curvilinear
//! charts, and the weak limit of the fissure measure.

use std::sync::Arc;

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{rng_for, STREAM_MISC};
use crate::stochastic::{PhaseSequence, StationaryProcess};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub epsilon: f64,
    pub theta: f64,
    pub h: f64,
    /// `[x1_min, x1_max, x2_min, x2_max]`
    pub sigma: [f64; 4],
    pub omega_plus_height: f64,
    pub omega_minus_height: f64,
}

impl GeometryParams {
    pub fn validate(&self) -> Result<()> {
        let s = self.sigma;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        if !(self.theta > 0.0 && self.theta < 2.0 / 3.0) {
            return Err(Error::InvalidInput(format!("theta must lie in (0, 2/3), got {}", self.theta)));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidInput(format!("h must be positive, got {}", self.h)));
        }
        if !(s[1] > s[0] && s[3] > s[2]) {
            return Err(Error::InvalidInput("sigma extent is empty".into()));
        }
        if !(self.omega_plus_height > 0.0 && self.omega_minus_height > 0.0) {
            return Err(Error::InvalidInput("block heights must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma_area(&self) -> f64 {
        (self.sigma[1] - self.sigma[0]) * (self.sigma[3] - self.sigma[2])
    }

    /// `ε^{2(1−θ)}`, the size of every chart correction.
    pub fn chart_scale(&self) -> f64 {
        self.epsilon.powf(2.0 * (1.0 - self.theta))
    }
}

/// The aperture process `q` and centreline process `r` shared by all fissures.
#[derive(Debug, Clone)]
pub struct Media {
    pub q: StationaryProcess,
    pub r: StationaryProcess,
}

#[derive(Debug, Clone)]
pub struct Fissure {
    pub i: i64,
    pub j: i64,
    pub alpha_i: f64,
    pub alpha_j: f64,
    pub beta_i: f64,
    pub beta_j: f64,
    pub media: Arc<Media>,
}

/// `(a⁻, a⁺)` and their derivatives at stretched height `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Walls {
    pub minus: f64,
    pub plus: f64,
    pub d_minus: f64,
    pub d_plus: f64,
    pub dd_minus: f64,
    pub dd_plus: f64,
}

impl Walls {
    pub fn width(&self) -> f64 {
        self.plus - self.minus
    }
}

fn walls(media: &Media, alpha: f64, beta: f64, s: f64) -> Walls {
    let q = media.q.derivs(s + alpha);
    let r = media.r.derivs(s + beta);
    Walls {
        minus: r[0] - 0.5 * q[0],
        plus: r[0] + 0.5 * q[0],
        d_minus: r[1] - 0.5 * q[1],
        d_plus: r[1] + 0.5 * q[1],
        dd_minus: r[2] - 0.5 * q[2],
        dd_plus: r[2] + 0.5 * q[2],
    }
}

impl Fissure {
    /// Walls in the `x₁` direction at stretched height `s`.
    pub fn walls_i(&self, s: f64) -> Walls {
        walls(&self.media, self.alpha_i, self.beta_i, s)
    }

    pub fn walls_j(&self, s: f64) -> Walls {
        walls(&self.media, self.alpha_j, self.beta_j, s)
    }

    pub fn q_i(&self, s: f64) -> f64 {
        self.media.q.eval(s + self.alpha_i)
    }

    pub fn q_j(&self, s: f64) -> f64 {
        self.media.q.eval(s + self.alpha_j)
    }
}

/// `(a⁻, a⁺)` of the `x₁` walls at stretched height `z`.
pub fn aperture(f: &Fissure, z: f64) -> (f64, f64) {
    let w = f.walls_i(z);
    (w.minus, w.plus)
}

/// A realized fissure array.
#[derive(Debug, Clone)]
pub struct FissureGeometry {
    pub params: GeometryParams,
    pub media: Arc<Media>,
    pub phases: PhaseSequence,
    pub fissures: Vec<Fissure>,
}

/// Half-width, in units of ε, that certifiably contains every cross-section.
pub fn containment_margin(media: &Media) -> f64 {
    let (rlo, rhi) = media.r.value_range();
    rlo.abs().max(rhi.abs()) + 0.5 * media.q.params.bound_c2
}

/// Indices whose fissures lie inside `Σ × (−h, 0)`. Fissures that may touch
/// `∂Σ` are excluded.
pub fn enumerate_fissures(g: &GeometryParams, media: Arc<Media>, phases: &PhaseSequence) -> Result<FissureGeometry> {
    g.validate()?;
    let eps = g.epsilon;
    let m = containment_margin(&media);
    let range = |lo: f64, hi: f64| -> Vec<i64> {
        let a = ((lo / eps) + m).floor() as i64 - 1;
        let b = ((hi / eps) - m).ceil() as i64 + 1;
        (a..=b)
            .filter(|&i| {
                let c = i as f64 * eps;
                lo < c - eps * m && c + eps * m < hi
            })
            .collect()
    };
    let is = range(g.sigma[0], g.sigma[1]);
    let js = range(g.sigma[2], g.sigma[3]);
    let mut fissures = Vec::with_capacity(is.len() * js.len());
    for &i in &is {
        for &j in &js {
            fissures.push(Fissure {
                i,
                j,
                alpha_i: phases.alpha(i),
                alpha_j: phases.alpha(j),
                beta_i: phases.beta(i),
                beta_j: phases.beta(j),
                media: media.clone(),
            });
        }
    }
    Ok(FissureGeometry { params: *g, media, phases: phases.clone(), fissures })
}

/// `1 − (c₂ + 2 c₃ c₄)`; positive slack certifies that neighbouring fissures
/// never overlap.
pub fn disjointness_slack(media: &Media, c4: f64) -> f64 {
    1.0 - (media.q.params.bound_c2 + 2.0 * media.r.params.derivative_bound(1) * c4)
}

impl FissureGeometry {
    pub fn len(&self) -> usize {
        self.fissures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fissures.is_empty()
    }

    /// Smallest gap between neighbouring fissures over `n` sampled heights, in
    /// units of ε. Negative means overlap.
    pub fn min_neighbour_gap(&self, n: usize) -> f64 {
        let g = &self.params;
        let smax = g.h * g.epsilon.powf(-g.theta);
        let mut idx: Vec<i64> = self.fissures.iter().map(|f| f.i).collect();
        idx.sort_unstable();
        idx.dedup();
        let mut gap = f64::INFINITY;
        for w in idx.windows(2) {
            if w[1] != w[0] + 1 {
                continue;
            }
            let (a0, b0) = (self.phases.alpha(w[0]), self.phases.beta(w[0]));
            let (a1, b1) = (self.phases.alpha(w[1]), self.phases.beta(w[1]));
            for k in 0..n {
                let s = smax * k as f64 / (n.max(2) - 1) as f64;
                let lo = walls(&self.media, a0, b0, s);
                let hi = walls(&self.media, a1, b1, s);
                gap = gap.min(1.0 + hi.minus - lo.plus);
            }
        }
        gap
    }

    /// Panel width in `z` that resolves the stretched oscillations.
    pub fn panel_width(&self) -> f64 {
        let c3 = self.media.q.params.bound_c3.max(self.media.r.params.bound_c3);
        let g = &self.params;
        0.5 * g.epsilon.powf(g.theta) * (1.0f64).min(if c3 > 0.0 { 1.0 / c3 } else { 1.0 })
    }

    /// `Σ_{(i,j)} ∫_{Y_{ε,ij}} φ dx` by exact horizontal slicing: every
    /// cross-section is the rectangle `iε + ε[a_i⁻, a_i⁺] × jε + ε[a_j⁻, a_j⁺]`.
    pub fn fissure_integral<F>(&self, phi: &F, u_order: usize) -> f64
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let g = &self.params;
        let eps = g.epsilon;
        let stretch = eps.powf(-g.theta);
        let panels = (g.h / self.panel_width()).ceil().max(1.0) as usize;
        let (zs, wz) = quad::composite_gauss(0.0, g.h, panels, 8);
        let (ur, wu) = quad::gauss_legendre(u_order);
        // centre and width of the cross-section per index, cached on the z nodes
        let tabulate = |a: f64, b: f64| -> Vec<(f64, f64)> {
            zs.iter()
                .map(|&z| {
                    let w = walls(&self.media, a, b, stretch * z);
                    (0.5 * (w.plus + w.minus), w.width())
                })
                .collect()
        };
        let mut idx: Vec<i64> = self.fissures.iter().flat_map(|f| [f.i, f.j]).collect();
        idx.sort_unstable();
        idx.dedup();
        let lo = *idx.first().unwrap_or(&0);
        let cache: Vec<Vec<(f64, f64)>> = if idx.is_empty() {
            vec![]
        } else {
            (lo..=*idx.last().unwrap())
                .into_par_iter()
                .map(|i| tabulate(self.phases.alpha(i), self.phases.beta(i)))
                .collect()
        };
        let per: Vec<f64> = self
            .fissures
            .par_iter()
            .map(|f| {
                let ci = &cache[(f.i - lo) as usize];
                let cj = &cache[(f.j - lo) as usize];
                let mut acc = 0.0;
                for k in 0..zs.len() {
                    let (mi, qi) = ci[k];
                    let (mj, qj) = cj[k];
                    let x0 = f.i as f64 * eps + eps * mi;
                    let y0 = f.j as f64 * eps + eps * mj;
                    let mut s = 0.0;
                    for (u1, w1) in ur.iter().zip(&wu) {
                        for (u2, w2) in ur.iter().zip(&wu) {
                            let x = [x0 + 0.5 * eps * qi * u1, y0 + 0.5 * eps * qj * u2, -zs[k]];
                            s += 0.25 * w1 * w2 * phi(x);
                        }
                    }
                    acc += wz[k] * eps * eps * qi * qj * s;
                }
                acc
            })
            .collect();
        per.iter().sum()
    }
}

/// Relative error of the fissure integral against `h⟨q²⟩∫_Σ φ(x′, 0) dx′`.
pub fn measure_limit_error<F>(geom: &FissureGeometry, phi: &F, mean_q2: f64) -> f64
where
    F: Fn([f64; 3]) -> f64 + Sync,
{
    let s = geom.params.sigma;
    let (x, w) = quad::composite_gauss(0.0, 1.0, 8, 8);
    let mut lim = 0.0;
    for (a, wa) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            let p = [s[0] + a * (s[1] - s[0]), s[2] + b * (s[3] - s[2]), 0.0];
            lim += wa * wb * phi(p);
        }
    }
    lim *= geom.params.sigma_area() * geom.params.h * mean_q2;
    let got = geom.fissure_integral(phi, 2);
    (got - lim).abs() / lim.abs()
}

/// Largest ratio `∫ψ² / ∫|∇ψ|²` over `samples` random grid functions on the
/// normalized fissure that vanish on its lateral boundary.
pub fn discrete_poincare_constant(f: &Fissure, g: &GeometryParams, m: usize, layers: usize, samples: usize, seed: u64) -> f64 {
    let stretch = g.epsilon.powf(-g.theta);
    let dz = g.h / layers as f64;
    let widths: Vec<(f64, f64)> = (0..layers)
        .map(|l| {
            let s = stretch * (l as f64 + 0.5) * dz;
            (f.walls_i(s).width(), f.walls_j(s).width())
        })
        .collect();
    let idx = |a: usize, b: usize, l: usize| (l * (m + 1) + b) * (m + 1) + a;
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        let mut rng = rng_for(seed, STREAM_MISC, k as u64);
        let mut v = vec![0.0; (m + 1) * (m + 1) * layers];
        for l in 0..layers {
            for b in 1..m {
                for a in 1..m {
                    v[idx(a, b, l)] = 2.0 * rng.gen::<f64>() - 1.0;
                }
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (l, &(qi, qj)) in widths.iter().enumerate() {
            let (hx, hy) = (qi / m as f64, qj / m as f64);
            for b in 0..=m {
                for a in 0..=m {
                    let u = v[idx(a, b, l)];
                    num += u * u * hx * hy * dz;
                    if a < m {
                        let d = (v[idx(a + 1, b, l)] - u) / hx;
                        den += d * d * hx * hy * dz;
                    }
                    if b < m {
                        let d = (v[idx(a, b + 1, l)] - u) / hy;
                        den += d * d * hx * hy * dz;
                    }
                    if l + 1 < layers {
                        let d = (v[idx(a, b, l + 1)] - u) / dz;
                        den += d * d * hx * hy * dz;
                    }
                }
            }
        }
        worst = worst.max(num / den);
    }
    worst
}

/// Bound on the discrete Poincaré constant: `c₂² / (2 λ₁)` with `λ₁` the first
/// Dirichlet eigenvalue of the `m`-cell second difference on the unit interval.
pub fn discrete_poincare_bound(c2: f64, m: usize) -> f64 {
    let mf = m as f64;
    let lam = 4.0 * mf * mf * (std::f64::consts::PI / (2.0 * mf)).sin().powi(2);
    c2 * c2 / (2.0 * lam)
}

/// Curvilinear chart of one fissure.
#[derive(Debug, Clone)]
pub struct CurvilinearChart {
    pub fissure: Fissure,
    pub epsilon: f64,
    pub theta: f64,
}

/// Point of the chart with its derived quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    /// `(ξ₁, ξ₂, z)`; `x₁ = iε + ξ₁`, `x₂ = jε + ξ₂`, `x₃ = −z`.
    pub xi: [f64; 3],
    pub metric: Matrix3<f64>,
    /// `∂(ξ₁, ξ₂, z)/∂(y₁, y₂, t)`
    pub tangent: Matrix3<f64>,
    pub jacobian: f64,
}

fn orth_rhs(w: &Walls, zeta: f64) -> f64 {
    (w.d_minus * (zeta - w.plus) - w.d_plus * (zeta - w.minus)) / w.width()
}

// derivative of `orth_rhs` with respect to the height argument
fn orth_rhs_dpsi(w: &Walls, zeta: f64) -> f64 {
    let q = w.width();
    let dq = w.d_plus - w.d_minus;
    (w.dd_minus * (zeta - w.plus) - w.dd_plus * (zeta - w.minus)) / q - orth_rhs(w, zeta) * dq / q
}

impl CurvilinearChart {
    pub fn new(fissure: Fissure, g: &GeometryParams) -> Self {
        CurvilinearChart { fissure, epsilon: g.epsilon, theta: g.theta }
    }

    fn scale(&self) -> f64 {
        self.epsilon.powf(2.0 * (1.0 - self.theta))
    }

    // RK4 for ψ together with its variational equation for ∂ψ/∂τ
    fn integrate_leg(&self, start: (f64, f64), zeta: f64, use_i: bool) -> Result<(f64, f64)> {
        let e2 = self.scale();
        let step = e2 / 10.0;
        if zeta == 0.0 {
            return Ok(start);
        }
        let n = (zeta.abs() / step).ceil().max(1.0) as usize;
        if n > 50_000_000 {
            return Err(Error::StepUnderflow("psi characteristic integration".into()));
        }
        let hs = zeta / n as f64;
        let f = |z: f64, p: f64, d: f64| {
            let w = if use_i { self.fissure.walls_i(p) } else { self.fissure.walls_j(p) };
            (e2 * orth_rhs(&w, z), e2 * orth_rhs_dpsi(&w, z) * d)
        };
        let (mut p, mut d) = start;
        for k in 0..n {
            let z = k as f64 * hs;
            let k1 = f(z, p, d);
            let k2 = f(z + 0.5 * hs, p + 0.5 * hs * k1.0, d + 0.5 * hs * k1.1);
            let k3 = f(z + 0.5 * hs, p + 0.5 * hs * k2.0, d + 0.5 * hs * k2.1);
            let k4 = f(z + hs, p + hs * k3.0, d + hs * k3.1);
            p += hs / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            d += hs / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        Ok((p, d))
    }

    fn psi_with_tau(&self, zeta1: f64, zeta2: f64, tau: f64) -> Result<(f64, f64)> {
        let a = self.integrate_leg((tau, 1.0), zeta1, true)?;
        self.integrate_leg(a, zeta2, false)
    }

    /// `ψ_ε(ζ₁, ζ₂, τ)`: integrate along `ζ₁` at `ζ₂ = 0`, then along `ζ₂`.
    pub fn solve_psi(&self, zeta1: f64, zeta2: f64, tau: f64) -> Result<f64> {
        Ok(self.psi_with_tau(zeta1, zeta2, tau)?.0)
    }

    /// `ψ(ζ₁, ζ₂, τ) − (ψ(ζ₁, 0, τ) + ψ(0, ζ₂, τ) − τ)`.
    pub fn split_defect(&self, zeta1: f64, zeta2: f64, tau: f64) -> Result<f64> {
        let full = self.solve_psi(zeta1, zeta2, tau)?;
        let a = self.solve_psi(zeta1, 0.0, tau)?;
        let b = self.solve_psi(0.0, zeta2, tau)?;
        Ok(full - (a + b - tau))
    }

    pub fn psi_tau(&self, zeta1: f64, zeta2: f64, tau: f64) -> Result<f64> {
        Ok(self.psi_with_tau(zeta1, zeta2, tau)?.1)
    }

    fn xi_of(&self, y1: f64, y2: f64, z: f64) -> (f64, f64) {
        let eps = self.epsilon;
        let s = eps.powf(-self.theta) * z;
        let wi = self.fissure.walls_i(s);
        let wj = self.fissure.walls_j(s);
        (
            wi.plus * (0.5 * eps + y1) + wi.minus * (0.5 * eps - y1),
            wj.plus * (0.5 * eps + y2) + wj.minus * (0.5 * eps - y2),
        )
    }

    /// `(ξ₁, ξ₂, z)` of the chart point `(y₁, y₂, t)`.
    pub fn forward(&self, y1: f64, y2: f64, t: f64) -> Result<[f64; 3]> {
        let eps = self.epsilon;
        let et = eps.powf(self.theta);
        let mut z = t;
        for _ in 0..100 {
            let (x1, x2) = self.xi_of(y1, y2, z);
            let zn = et * self.solve_psi(x1 / eps, x2 / eps, t / et)?;
            if (zn - z).abs() <= 1e-15 * (1.0 + t.abs()) {
                let (x1, x2) = self.xi_of(y1, y2, zn);
                return Ok([x1, x2, zn]);
            }
            z = zn;
        }
        Err(Error::NoConvergence { what: "chart forward map".into(), residual: f64::NAN, iterations: 100 })
    }

    /// `(y₁, y₂, t)` of the physical point `(ξ₁, ξ₂, z)`.
    pub fn inverse(&self, xi: [f64; 3]) -> Result<[f64; 3]> {
        let eps = self.epsilon;
        let et = eps.powf(self.theta);
        let s = xi[2] / et;
        let wi = self.fissure.walls_i(s);
        let wj = self.fissure.walls_j(s);
        let y1 = (xi[0] - 0.5 * eps * (wi.plus + wi.minus)) / wi.width();
        let y2 = (xi[1] - 0.5 * eps * (wj.plus + wj.minus)) / wj.width();
        let (z1, z2) = (xi[0] / eps, xi[1] / eps);
        let mut t = xi[2];
        for it in 0..50 {
            let r = et * self.solve_psi(z1, z2, t / et)? - xi[2];
            if r.abs() <= 1e-14 * (1.0 + xi[2].abs()) {
                return Ok([y1, y2, t]);
            }
            let d = self.psi_tau(z1, z2, t / et)?;
            t -= r / d;
            if it == 49 {
                return Err(Error::NoConvergence { what: "chart inverse".into(), residual: r.abs(), iterations: 50 });
            }
        }
        Ok([y1, y2, t])
    }

    /// Tangent vectors, metric and the Jacobian `Δ̄` at `(y₁, y₂, t)`.
    pub fn chart_point(&self, y1: f64, y2: f64, t: f64) -> Result<ChartPoint> {
        let eps = self.epsilon;
        let th = self.theta;
        let e2 = self.scale();
        let xi = self.forward(y1, y2, t)?;
        let s = eps.powf(-th) * xi[2];
        let wi = self.fissure.walls_i(s);
        let wj = self.fissure.walls_j(s);
        let (z1, z2) = (xi[0] / eps, xi[1] / eps);
        let psi_z1 = e2 * orth_rhs(&wi, z1);
        let psi_z2 = e2 * orth_rhs(&wj, z2);
        let psi_t = self.psi_tau(z1, z2, t / eps.powf(th))?;
        let d1z = -eps.powf(-th) * (wi.d_plus * (0.5 * eps + y1) + wi.d_minus * (0.5 * eps - y1));
        let d2z = -eps.powf(-th) * (wj.d_plus * (0.5 * eps + y2) + wj.d_minus * (0.5 * eps - y2));
        let d3x1 = -eps.powf(th - 1.0) * psi_z1;
        let d3x2 = -eps.powf(th - 1.0) * psi_z2;
        let jx = Matrix3::new(1.0, 0.0, d1z, 0.0, 1.0, d2z, d3x1, d3x2, 1.0);
        let jy = Matrix3::new(-wi.width(), 0.0, 0.0, 0.0, -wj.width(), 0.0, 0.0, 0.0, -psi_t);
        let jacobian = 1.0 - d1z * d3x1 - d2z * d3x2;
        let inv = jx
            .try_inverse()
            .ok_or_else(|| Error::Geometry("chart Jacobian is singular".into()))?;
        let tangent = -(inv * jy);
        let metric = tangent.transpose() * tangent;
        Ok(ChartPoint { xi, metric, tangent, jacobian })
    }

    pub fn metric_tensor(&self, y1: f64, y2: f64, t: f64) -> Result<Matrix3<f64>> {
        Ok(self.chart_point(y1, y2, t)?.metric)
    }

    /// Largest `|det T / (q_i q_j) − 1|` over `n³` chart points: the volume
    /// factor dropped when integrating with `q_i q_j`.
    pub fn metric_correction(&self, h: f64, n: usize) -> Result<f64> {
        let eps = self.epsilon;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let y1 = eps * ((a as f64 + 0.5) / n as f64 - 0.5);
                    let y2 = eps * ((b as f64 + 0.5) / n as f64 - 0.5);
                    let t = h * (c as f64 + 0.5) / n as f64;
                    let p = self.chart_point(y1, y2, t)?;
                    let s = eps.powf(-self.theta) * t;
                    let qq = self.fissure.q_i(s) * self.fissure.q_j(s);
                    worst = worst.max((p.tangent.determinant().abs() / qq - 1.0).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Contravariant metric.
pub fn contravariant(g: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    g.try_inverse().ok_or_else(|| Error::Geometry("metric is singular".into()))
}

pub fn off_diagonal_max(g: &Matrix3<f64>) -> f64 {
    g[(0, 1)].abs().max(g[(0, 2)].abs()).max(g[(1, 2)].abs())
}

