//! Periodic and local cell problems and the effective coefficients they
//! define.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cg_operator, pcg, CsrMatrix, TripletBuilder};
use crate::quad;

const SOLVER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum Obstacle {
    /// Centred box with the given half-extents.
    Box { half: [f64; 3] },
    /// Centred ball (disc in 2D).
    Ball { radius: f64 },
}

impl Obstacle {
    pub fn contains(&self, z: &[f64]) -> bool {
        match *self {
            Obstacle::Box { half } => z.iter().zip(half).all(|(x, h)| x.abs() < h),
            Obstacle::Ball { radius } => z.iter().map(|x| x * x).sum::<f64>() < radius * radius,
        }
    }

    fn interior(&self, d: usize) -> bool {
        match *self {
            Obstacle::Box { half } => half[..d].iter().all(|&h| h > 0.0 && h < 0.5),
            Obstacle::Ball { radius } => radius > 0.0 && radius < 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMesh {
    pub dimension: usize,
    pub resolution: usize,
    pub obstacle: Option<Obstacle>,
}

impl CellMesh {
    pub fn new(dimension: usize, resolution: usize, obstacle: Option<Obstacle>) -> Self {
        CellMesh { dimension, resolution, obstacle }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(Error::InvalidInput(format!("cell dimension must be 2 or 3, got {}", self.dimension)));
        }
        if self.resolution < 8 {
            return Err(Error::InvalidInput(format!("cell resolution must be >= 8, got {}", self.resolution)));
        }
        if let Some(o) = self.obstacle {
            if !o.interior(self.dimension) {
                return Err(Error::Geometry("obstacle must lie strictly inside the cell".into()));
            }
        }
        Ok(())
    }
}

type KField = dyn Fn([f64; 3]) -> Matrix3<f64> + Send + Sync;

/// `Z`-periodic permeability (or diffusivity) field.
#[derive(Clone)]
pub struct PermeabilitySpec {
    field: Arc<KField>,
    constant: Option<Matrix3<f64>>,
}

impl fmt::Debug for PermeabilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.constant {
            Some(m) => write!(f, "PermeabilitySpec::Constant({m:?})"),
            None => write!(f, "PermeabilitySpec::Field"),
        }
    }
}

fn wrap(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

impl PermeabilitySpec {
    pub fn constant(k: Matrix3<f64>) -> Self {
        PermeabilitySpec { field: Arc::new(move |_| k), constant: Some(k) }
    }

    pub fn identity() -> Self {
        Self::constant(Matrix3::identity())
    }

    pub fn diagonal(k1: f64, k2: f64, k3: f64) -> Self {
        Self::constant(Matrix3::from_diagonal(&nalgebra::Vector3::new(k1, k2, k3)))
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn([f64; 3]) -> Matrix3<f64> + Send + Sync + 'static,
    {
        PermeabilitySpec { field: Arc::new(f), constant: None }
    }

    pub fn as_constant(&self) -> Option<Matrix3<f64>> {
        self.constant
    }

    /// Value at `z`, extended periodically from `(−1/2, 1/2)³`.
    pub fn eval(&self, z: [f64; 3]) -> Matrix3<f64> {
        (self.field)([wrap(z[0]), wrap(z[1]), wrap(z[2])])
    }

    /// Checks symmetry and positive definiteness on an `m³` sample.
    pub fn validate(&self, m: usize) -> Result<()> {
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let z = [a, b, c].map(|i| -0.5 + (i as f64 + 0.5) / m as f64);
                    let k = self.eval(z);
                    if (k - k.transpose()).amax() > 1e-12 * k.amax() {
                        return Err(Error::InvalidInput(format!("permeability not symmetric at {z:?}")));
                    }
                    if crate::linalg::min_eigenvalue3(&k) <= 0.0 {
                        return Err(Error::NotPositiveDefinite(format!("permeability at {z:?}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Structured periodic cell grid with a fluid mask.
struct Grid {
    d: usize,
    n: usize,
    h: f64,
    periodic: bool,
    fluid_index: Vec<usize>,
    fluid_cells: Vec<usize>,
}

const SOLID: usize = usize::MAX;

impl Grid {
    fn new(mesh: &CellMesh, periodic: bool) -> Result<Self> {
        mesh.validate()?;
        let (d, n) = (mesh.dimension, mesh.resolution);
        let total = n.pow(d as u32);
        let h = 1.0 / n as f64;
        let mut fluid_index = vec![SOLID; total];
        let mut fluid_cells = Vec::with_capacity(total);
        for c in 0..total {
            let z = Self::centre_of(c, d, n, h);
            let solid = mesh.obstacle.is_some_and(|o| o.contains(&z[..d]));
            if !solid {
                fluid_index[c] = fluid_cells.len();
                fluid_cells.push(c);
            }
        }
        if fluid_cells.is_empty() {
            return Err(Error::Geometry("cell has no fluid region".into()));
        }
        let g = Grid { d, n, h, periodic, fluid_index, fluid_cells };
        g.check_connected()?;
        Ok(g)
    }

    fn centre_of(c: usize, d: usize, n: usize, h: f64) -> [f64; 3] {
        let mut z = [0.0; 3];
        let mut r = c;
        for z_k in z.iter_mut().take(d) {
            *z_k = -0.5 + ((r % n) as f64 + 0.5) * h;
            r /= n;
        }
        z
    }

    fn centre(&self, c: usize) -> [f64; 3] {
        Self::centre_of(c, self.d, self.n, self.h)
    }

    /// Neighbour of cell `c` in direction `dir` (positive side).
    fn plus(&self, c: usize, dir: usize) -> Option<usize> {
        let stride = self.n.pow(dir as u32);
        let i = (c / stride) % self.n;
        if i + 1 < self.n {
            Some(c + stride)
        } else if self.periodic {
            Some(c + stride - self.n * stride)
        } else {
            None
        }
    }

    fn minus(&self, c: usize, dir: usize) -> Option<usize> {
        let stride = self.n.pow(dir as u32);
        let i = (c / stride) % self.n;
        if i > 0 {
            Some(c - stride)
        } else if self.periodic {
            Some(c + (self.n - 1) * stride)
        } else {
            None
        }
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.fluid_cells.len()];
        let mut queue = VecDeque::from([self.fluid_cells[0]]);
        seen[0] = true;
        let mut count = 1;
        while let Some(c) = queue.pop_front() {
            for dir in 0..self.d {
                for nb in [self.plus(c, dir), self.minus(c, dir)].into_iter().flatten() {
                    let f = self.fluid_index[nb];
                    if f != SOLID && !seen[f] {
                        seen[f] = true;
                        count += 1;
                        queue.push_back(nb);
                    }
                }
            }
        }
        if count != self.fluid_cells.len() {
            return Err(Error::Geometry("fluid region of the cell is disconnected".into()));
        }
        Ok(())
    }

    fn fluid_fraction(&self) -> f64 {
        self.fluid_cells.len() as f64 * self.h.powi(self.d as i32)
    }
}

/// Fluid–fluid face with its conductance and forcing per load direction.
struct Face {
    a: usize,
    b: usize,
    dir: usize,
    k: f64,
    forcing: [f64; 3],
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn faces(g: &Grid, kf: &PermeabilitySpec) -> Vec<Face> {
    let kc: Vec<Matrix3<f64>> = g.fluid_cells.iter().map(|&c| kf.eval(g.centre(c))).collect();
    let mut out = Vec::new();
    for (fa, &c) in g.fluid_cells.iter().enumerate() {
        for dir in 0..g.d {
            let Some(nb) = g.plus(c, dir) else { continue };
            let fb = g.fluid_index[nb];
            if fb == SOLID {
                continue;
            }
            let (ka, kb) = (&kc[fa], &kc[fb]);
            let kdd = harmonic(ka[(dir, dir)], kb[(dir, dir)]);
            let mut forcing = [0.0; 3];
            for (k, f) in forcing.iter_mut().enumerate().take(g.d) {
                *f = if k == dir { kdd } else { 0.5 * (ka[(dir, k)] + kb[(dir, k)]) };
            }
            out.push(Face { a: fa, b: fb, dir, k: kdd, forcing });
        }
    }
    out
}

/// Solution of the periodic Darcy (or scalar) cell problems.
#[derive(Debug, Clone)]
pub struct DarcyCellSolution {
    pub dimension: usize,
    pub resolution: usize,
    /// Corrector `π_k` on every cell (zero mean over fluid cells; NaN in solid).
    pub pi: Vec<Vec<f64>>,
    /// `tensor[(k, l)] = ∫_{Z¹} (Φ_k)_l`.
    pub tensor: Matrix3<f64>,
    /// `∫ K(e_k + ∇π_k)·(e_k + ∇π_k)` per `k`.
    pub energy: [f64; 3],
    pub fluid_fraction: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn solve_fv_cell(kf: &PermeabilitySpec, mesh: &CellMesh, periodic: bool) -> Result<DarcyCellSolution> {
    let g = Grid::new(mesh, periodic)?;
    let fs = faces(&g, kf);
    let nf = g.fluid_cells.len();
    let h = g.h;
    let mut tb = TripletBuilder::with_capacity(nf, 4 * fs.len());
    for f in &fs {
        tb.link(f.a, f.b, f.k / (h * h));
    }
    let a = tb.build();
    let hd = h.powi(g.d as i32);
    let results: Vec<Result<(Vec<f64>, [f64; 3], f64, f64, usize)>> = (0..g.d)
        .into_par_iter()
        .map(|k| {
            let mut rhs = vec![0.0; nf];
            for f in &fs {
                rhs[f.a] += f.forcing[k] / h;
                rhs[f.b] -= f.forcing[k] / h;
            }
            let mut x = vec![0.0; nf];
            let st = pcg(&a, &rhs, &mut x, SOLVER_TOL, 20 * nf + 1000, true)?;
            let mut row = [0.0; 3];
            let mut energy = 0.0;
            for f in &fs {
                let grad = (x[f.b] - x[f.a]) / h;
                let flux = f.k * grad + f.forcing[k];
                row[f.dir] += flux * hd;
                energy += flux * (grad + if f.dir == k { 1.0 } else { 0.0 }) * hd;
            }
            Ok((x, row, energy, st.relative_residual, st.iterations))
        })
        .collect();
    let mut tensor = Matrix3::zeros();
    let mut energy = [0.0; 3];
    let mut pi = Vec::with_capacity(g.d);
    let (mut residual, mut iterations) = (0.0f64, 0usize);
    for (k, r) in results.into_iter().enumerate() {
        let (x, row, e, res, it) = r?;
        for l in 0..g.d {
            tensor[(k, l)] = row[l];
        }
        energy[k] = e;
        residual = residual.max(res);
        iterations = iterations.max(it);
        let mut full = vec![f64::NAN; g.n.pow(g.d as u32)];
        for (fi, &c) in g.fluid_cells.iter().enumerate() {
            full[c] = x[fi];
        }
        pi.push(full);
    }
    Ok(DarcyCellSolution {
        dimension: g.d,
        resolution: g.n,
        pi,
        tensor,
        energy,
        fluid_fraction: g.fluid_fraction(),
        residual,
        iterations,
    })
}

/// Periodic Darcy cell problems; `K̂_{kl} = ∫_{Z¹}(Φ_k)_l`.
pub fn solve_darcy_cell(k: &PermeabilitySpec, mesh: &CellMesh) -> Result<DarcyCellSolution> {
    if mesh.dimension != 3 {
        return Err(Error::InvalidInput("Darcy cell problems are three-dimensional".into()));
    }
    solve_fv_cell(k, mesh, true)
}

/// Scalar periodic cell problems for `b_j`; returns the solution and `D̂`.
pub fn solve_scalar_cell_3d(mesh: &CellMesh, d_mol: f64) -> Result<(DarcyCellSolution, Matrix3<f64>)> {
    if !(d_mol > 0.0) {
        return Err(Error::InvalidInput(format!("molecular diffusivity must be positive, got {d_mol}")));
    }
    let s = solve_darcy_cell(&PermeabilitySpec::constant(Matrix3::identity() * d_mol), mesh)?;
    // D̂_{ij} = D(|Z¹|δ_ij + ∫∂b_j/∂z_i) is the i-component of the flux of problem j
    let d_hat = s.tensor.transpose();
    Ok((s, d_hat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcMode {
    Periodic,
    LiteralNeumann,
}

/// Two-dimensional scalar cell problems for `c_m`; returns the solution and `D*`.
///
/// `LiteralNeumann` imposes `(∇c_m + e_m)·n = 0` on the whole boundary with no
/// periodicity, for which `c_m = −z_m` and `D* = 0`.
pub fn solve_scalar_cell_2d(mesh: &CellMesh, d_mol: f64, mode: BcMode) -> Result<(DarcyCellSolution, Matrix2<f64>)> {
    if mesh.dimension != 2 {
        return Err(Error::InvalidInput("surface cell problems are two-dimensional".into()));
    }
    if !(d_mol > 0.0) {
        return Err(Error::InvalidInput(format!("molecular diffusivity must be positive, got {d_mol}")));
    }
    let s = solve_fv_cell(
        &PermeabilitySpec::constant(Matrix3::identity() * d_mol),
        mesh,
        mode == BcMode::Periodic,
    )?;
    let t = s.tensor;
    Ok((s, Matrix2::new(t[(0, 0)], t[(1, 0)], t[(0, 1)], t[(1, 1)])))
}

/// Solution of the local Stokes problems on `Z′` (MAC grid, Uzawa iteration).
#[derive(Debug, Clone)]
pub struct StokesCellSolution {
    pub resolution: usize,
    /// `(u, v)` face velocities of `η_k` for `k = 1, 2`.
    pub eta: [(Vec<f64>, Vec<f64>); 2],
    /// Pressures `ξ_k` (zero mean).
    pub xi: [Vec<f64>; 2],
    pub k_f: Matrix2<f64>,
    /// `gram[a][k][l] = Σ_c ∫ ∂_a(η_k)_c ∂_a(η_l)_c`.
    pub gram: [[[f64; 2]; 2]; 2],
    pub divergence_residual: f64,
    pub outer_iterations: usize,
}

struct Mac {
    n: usize,
    h: f64,
}

impl Mac {
    fn nu(&self) -> usize {
        (self.n - 1) * self.n
    }
    // u unknown at x-face i (1..n-1), row j; v at y-face j (1..n-1), column i
    fn iu(&self, i: usize, j: usize) -> usize {
        j * (self.n - 1) + (i - 1)
    }
    fn laplacian(&self) -> CsrMatrix {
        let (n, h2) = (self.n, self.h * self.h);
        let mut tb = TripletBuilder::new(self.nu());
        for j in 0..n {
            for i in 1..n {
                let r = self.iu(i, j);
                let mut diag = 0.0;
                for (ok, other) in [(i > 1, i.wrapping_sub(1)), (i + 1 < n, i + 1)] {
                    diag += 1.0;
                    if ok {
                        tb.add(r, self.iu(other, j), -1.0 / h2);
                    }
                }
                for jj in [j.wrapping_sub(1), j + 1] {
                    if jj < n {
                        diag += 1.0;
                        tb.add(r, self.iu(i, jj), -1.0 / h2);
                    } else {
                        // wall halfway between nodes: ghost value −u
                        diag += 2.0;
                    }
                }
                tb.add(r, r, diag / h2);
            }
        }
        tb.build()
    }
    /// `(G p)` on u-faces: `(p(i,j) − p(i−1,j))/h`.
    fn grad_u(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; self.nu()];
        for j in 0..n {
            for i in 1..n {
                out[self.iu(i, j)] = (p[j * n + i] - p[j * n + i - 1]) / self.h;
            }
        }
        out
    }
    fn grad_u_t(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 1..n {
                let v = u[self.iu(i, j)] / self.h;
                out[j * n + i] += v;
                out[j * n + i - 1] -= v;
            }
        }
        out
    }
    // transposes a pressure field so that y-face unknowns reuse the u layout
    fn transpose(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                out[i * n + j] = p[j * n + i];
            }
        }
        out
    }
    /// `(∫|∂_x w|², ∫|∂_y w|²)`-type bilinear pieces for two face fields in u layout.
    fn grad_products(&self, a: &[f64], b: &[f64]) -> [f64; 2] {
        let n = self.n;
        let at = |f: &[f64], i: usize, j: usize| if i == 0 || i == n { 0.0 } else { f[self.iu(i, j)] };
        let (mut sx, mut sy) = (0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                sx += (at(a, i + 1, j) - at(a, i, j)) * (at(b, i + 1, j) - at(b, i, j));
            }
        }
        for i in 1..n {
            for j in 0..=n {
                let (da, db, w) = if j == 0 {
                    (2.0 * at(a, i, 0), 2.0 * at(b, i, 0), 0.5)
                } else if j == n {
                    (-2.0 * at(a, i, n - 1), -2.0 * at(b, i, n - 1), 0.5)
                } else {
                    (at(a, i, j) - at(a, i, j - 1), at(b, i, j) - at(b, i, j - 1), 1.0)
                };
                sy += w * da * db;
            }
        }
        [sx, sy]
    }
}

/// Local Stokes problems `−Δη_k + ∇ξ_k = e_k`, `div η_k = 0`, `η_k = 0` on `∂Z′`.
pub fn solve_stokes_cell(mesh: &CellMesh) -> Result<StokesCellSolution> {
    mesh.validate()?;
    if mesh.dimension != 2 || mesh.obstacle.is_some() {
        return Err(Error::InvalidInput("Stokes cell requires a 2D mesh without obstacle".into()));
    }
    let n = mesh.resolution;
    let mac = Mac { n, h: 1.0 / n as f64 };
    let lap = mac.laplacian();
    let nu = mac.nu();
    let inner = |rhs: &[f64]| -> Result<Vec<f64>> {
        let mut x = vec![0.0; nu];
        pcg(&lap, rhs, &mut x, 1e-14, 20 * nu + 1000, false)?;
        Ok(x)
    };
    // Both velocity components share the u layout after transposition;
    // the Schur operator is Gᵀ A⁻¹ G summed over the two components.
    let schur = |p: &[f64]| -> Result<Vec<f64>> {
        let pt = mac.transpose(p);
        let su = mac.grad_u_t(&inner(&mac.grad_u(p))?);
        let sv = mac.transpose(&mac.grad_u_t(&inner(&mac.grad_u(&pt))?));
        Ok(su.iter().zip(&sv).map(|(a, b)| a + b).collect())
    };
    let mut eta: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut xis: Vec<Vec<f64>> = Vec::new();
    let mut outer = 0;
    let mut div_res: f64 = 0.0;
    for k in 0..2 {
        let fu = vec![if k == 0 { 1.0 } else { 0.0 }; nu];
        let fv = vec![if k == 1 { 1.0 } else { 0.0 }; nu];
        let au = inner(&fu)?;
        let av = inner(&fv)?;
        let rhs: Vec<f64> = mac
            .grad_u_t(&au)
            .iter()
            .zip(mac.transpose(&mac.grad_u_t(&av)))
            .map(|(a, b)| a + b)
            .collect();
        let mut p = vec![0.0; n * n];
        let st = cg_operator(schur, &rhs, &mut p, 1e-11, 10 * n * n, true)?;
        outer = outer.max(st.iterations);
        let gu = mac.grad_u(&p);
        let gv = mac.grad_u(&mac.transpose(&p));
        let u = inner(&fu.iter().zip(&gu).map(|(f, g)| f - g).collect::<Vec<_>>())?;
        let v = inner(&fv.iter().zip(&gv).map(|(f, g)| f - g).collect::<Vec<_>>())?;
        let div: Vec<f64> = mac
            .grad_u_t(&u)
            .iter()
            .zip(mac.transpose(&mac.grad_u_t(&v)))
            .map(|(a, b)| (a + b) * mac.h)
            .collect();
        let scale = fu.iter().chain(&fv).map(|x| x.abs()).fold(0.0, f64::max);
        div_res = div_res.max(div.iter().map(|x| x.abs()).fold(0.0, f64::max) / scale);
        eta.push((u, v));
        xis.push(p);
    }
    let h2 = mac.h * mac.h;
    let mut k_f = Matrix2::zeros();
    for (m, (u, v)) in eta.iter().enumerate() {
        k_f[(m, 0)] = u.iter().sum::<f64>() * h2;
        k_f[(m, 1)] = v.iter().sum::<f64>() * h2;
    }
    let mut gram = [[[0.0; 2]; 2]; 2];
    for k in 0..2 {
        for l in 0..2 {
            // u component: x is the first layout axis; v component is transposed
            let pu = mac.grad_products(&eta[k].0, &eta[l].0);
            let pv = mac.grad_products(&eta[k].1, &eta[l].1);
            gram[0][k][l] = pu[0] + pv[1];
            gram[1][k][l] = pu[1] + pv[0];
        }
    }
    let [e0, e1]: [(Vec<f64>, Vec<f64>); 2] = eta.try_into().unwrap();
    let [x0, x1]: [Vec<f64>; 2] = xis.try_into().unwrap();
    Ok(StokesCellSolution {
        resolution: n,
        eta: [e0, e1],
        xi: [x0, x1],
        k_f,
        gram,
        divergence_residual: div_res,
        outer_iterations: outer,
    })
}

/// Solution of `−Δη₀ = 1` in `Z′`, `η₀ = 0` on `∂Z′` (vertex grid, 5-point stencil).
#[derive(Debug, Clone)]
pub struct PoissonCellSolution {
    pub resolution: usize,
    /// Interior vertex values, row-major `(n−1)²`.
    pub eta0: Vec<f64>,
    /// `∫ η₀`.
    pub k0: f64,
    /// `∫ |∇η₀|²`, computed from edge differences.
    pub energy: f64,
    /// `(∫(∂₁η₀)², ∫(∂₂η₀)²)`.
    pub grad_sq: [f64; 2],
    pub centre_value: f64,
    pub residual: f64,
}

pub fn solve_poisson_cell(mesh: &CellMesh) -> Result<PoissonCellSolution> {
    mesh.validate()?;
    if mesh.dimension != 2 || mesh.obstacle.is_some() {
        return Err(Error::InvalidInput("Poisson cell requires a 2D mesh without obstacle".into()));
    }
    let n = mesh.resolution;
    let m = n - 1;
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * m + i;
    let mut tb = TripletBuilder::with_capacity(m * m, 5 * m * m);
    for j in 0..m {
        for i in 0..m {
            tb.add(id(i, j), id(i, j), 4.0 / (h * h));
            if i > 0 {
                tb.add(id(i, j), id(i - 1, j), -1.0 / (h * h));
            }
            if i + 1 < m {
                tb.add(id(i, j), id(i + 1, j), -1.0 / (h * h));
            }
            if j > 0 {
                tb.add(id(i, j), id(i, j - 1), -1.0 / (h * h));
            }
            if j + 1 < m {
                tb.add(id(i, j), id(i, j + 1), -1.0 / (h * h));
            }
        }
    }
    let a = tb.build();
    let rhs = vec![1.0; m * m];
    let mut eta = vec![0.0; m * m];
    let st = pcg(&a, &rhs, &mut eta, 1e-13, 20 * m * m + 1000, false)?;
    let val = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= m as isize || j >= m as isize {
            0.0
        } else {
            eta[id(i as usize, j as usize)]
        }
    };
    let mut gx = 0.0;
    let mut gy = 0.0;
    for j in -1..m as isize {
        for i in -1..m as isize {
            if j >= 0 {
                gx += (val(i + 1, j) - val(i, j)).powi(2);
            }
            if i >= 0 {
                gy += (val(i, j + 1) - val(i, j)).powi(2);
            }
        }
    }
    let k0 = eta.iter().sum::<f64>() * h * h;
    let c = n / 2 - 1;
    let centre_value = if n % 2 == 0 {
        eta[id(c, c)]
    } else {
        let (a0, a1) = (n / 2 - 1, n / 2);
        0.25 * (eta[id(a0 - 1, a0 - 1)] + eta[id(a1 - 1, a0 - 1)] + eta[id(a0 - 1, a1 - 1)] + eta[id(a1 - 1, a1 - 1)])
    };
    Ok(PoissonCellSolution {
        resolution: n,
        eta0: eta,
        k0,
        energy: gx + gy,
        grad_sq: [gx, gy],
        centre_value,
        residual: st.relative_residual,
    })
}

/// `∫∫ K(z₁, z₂, 0)` over the mean-aperture square `[⟨r⟩ − ⟨q⟩/2, ⟨r⟩ + ⟨q⟩/2]²`.
/// Returns the tangential block and the full matrix.
pub fn compute_kstar(k: &PermeabilitySpec, mean_q: f64, mean_r: f64) -> Result<(Matrix2<f64>, Matrix3<f64>)> {
    if !(mean_q > 0.0) {
        return Err(Error::InvalidInput(format!("mean aperture must be positive, got {mean_q}")));
    }
    let (lo, hi) = (mean_r - 0.5 * mean_q, mean_r + 0.5 * mean_q);
    let (x, w) = quad::composite_gauss(lo, hi, 16, 8);
    let mut full = Matrix3::zeros();
    for (a, wa) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            full += k.eval([*a, *b, 0.0]) * (wa * wb);
        }
    }
    let tang = Matrix2::new(full[(0, 0)], full[(0, 1)], full[(1, 0)], full[(1, 1)]);
    Ok((tang, full))
}

/// Observed order from three successive refinements by a factor 2.
pub fn richardson_order(coarse: f64, mid: f64, fine: f64) -> f64 {
    ((coarse - mid) / (mid - fine)).abs().log2()
}

/// Richardson-extrapolated value for a second-order sequence.
pub fn richardson_extrapolate(mid: f64, fine: f64, order: f64) -> f64 {
    let r = 2f64.powf(order);
    (r * fine - mid) / (r - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensors {
    pub k_hat_plus: Matrix3<f64>,
    pub k_hat_minus: Matrix3<f64>,
    pub k_f: Matrix2<f64>,
    pub k0: f64,
    pub d_hat: Matrix3<f64>,
    pub d_star: Matrix2<f64>,
    pub k_star_plus: Matrix2<f64>,
    pub k_star_minus: Matrix2<f64>,
    pub k_star_plus_full: Matrix3<f64>,
    pub k_star_minus_full: Matrix3<f64>,
    /// `|Z¹|` of the scalar 3D cell.
    pub fluid_fraction: f64,
}

impl EffectiveTensors {
    /// Isotropic tensors for tests and quick runs; `K_f = 0` as the cell problem gives.
    pub fn isotropic(k_plus: f64, k_minus: f64, k0: f64, d: f64) -> Self {
        let i2 = Matrix2::identity();
        let i3 = Matrix3::identity();
        EffectiveTensors {
            k_hat_plus: i3 * k_plus,
            k_hat_minus: i3 * k_minus,
            k_f: Matrix2::zeros(),
            k0,
            d_hat: i3 * d,
            d_star: i2 * d,
            k_star_plus: i2 * k_plus,
            k_star_minus: i2 * k_minus,
            k_star_plus_full: i3 * k_plus,
            k_star_minus_full: i3 * k_minus,
            fluid_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellInputs {
    pub k_plus: PermeabilitySpec,
    pub k_minus: PermeabilitySpec,
    pub mesh3: CellMesh,
    pub resolution2: usize,
    pub d_mol: f64,
    pub surface_mesh: CellMesh,
    pub bc_mode: BcMode,
    pub mean_q: f64,
    pub mean_r: f64,
}

/// Residual diagnostics of the cell solves.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CellReport {
    pub darcy_residual: f64,
    pub scalar_residual: f64,
    pub stokes_divergence: f64,
    pub poisson_residual: f64,
    pub poisson_energy_gap: f64,
}

pub fn effective_tensors(inp: &CellInputs) -> Result<(EffectiveTensors, CellReport)> {
    let plus = solve_darcy_cell(&inp.k_plus, &inp.mesh3)?;
    let minus = solve_darcy_cell(&inp.k_minus, &inp.mesh3)?;
    let (scal, d_hat) = solve_scalar_cell_3d(&inp.mesh3, inp.d_mol)?;
    let (surf, d_star) = solve_scalar_cell_2d(&inp.surface_mesh, inp.d_mol, inp.bc_mode)?;
    let m2 = CellMesh::new(2, inp.resolution2, None);
    let stokes = solve_stokes_cell(&m2)?;
    let pois = solve_poisson_cell(&m2)?;
    let (ksp, kspf) = compute_kstar(&inp.k_plus, inp.mean_q, inp.mean_r)?;
    let (ksm, ksmf) = compute_kstar(&inp.k_minus, inp.mean_q, inp.mean_r)?;
    let t = EffectiveTensors {
        k_hat_plus: plus.tensor,
        k_hat_minus: minus.tensor,
        k_f: stokes.k_f,
        k0: pois.k0,
        d_hat,
        d_star,
        k_star_plus: ksp,
        k_star_minus: ksm,
        k_star_plus_full: kspf,
        k_star_minus_full: ksmf,
        fluid_fraction: scal.fluid_fraction,
    };
    let r = CellReport {
        darcy_residual: plus.residual.max(minus.residual),
        scalar_residual: scal.residual.max(surf.residual),
        stokes_divergence: stokes.divergence_residual,
        poisson_residual: pois.residual,
        poisson_energy_gap: (pois.energy - pois.k0).abs() / pois.k0,
    };
    Ok((t, r))
}
