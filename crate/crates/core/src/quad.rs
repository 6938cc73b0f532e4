//! Quadrature: Gauss rules, adaptive Gauss–Kronrod, and piecewise spectral
//! panels with cumulative integration.

use gauss_quad::{GaussJacobi, GaussLegendre};
use nalgebra::DMatrix;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let rule = GaussLegendre::new(n).expect("valid Gauss-Legendre degree");
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Legendre polynomial and its first two derivatives at `x`.
pub fn legendre(n: usize, x: f64) -> (f64, f64, f64) {
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let (dp, d2p) = if (1.0 - x * x).abs() > 1e-14 {
        let dp = nf * (x * p1 - p0) / (x * x - 1.0);
        let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p1) / (1.0 - x * x);
        (dp, d2p)
    } else {
        let s = if x > 0.0 { 1.0 } else if n % 2 == 0 { -1.0 } else { 1.0 };
        let dp = s * nf * (nf + 1.0) / 2.0;
        let d2p = s * (nf - 1.0) * nf * (nf + 1.0) * (nf + 2.0) / 8.0;
        (dp, d2p)
    };
    (p1, dp, d2p)
}

/// Gauss–Lobatto–Legendre nodes on `[-1, 1]` (includes both endpoints).
pub fn gauss_lobatto(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let mut x = vec![-1.0];
    if n > 2 {
        let guesses: Vec<f64> = if n - 2 >= 2 {
            let rule = GaussJacobi::new(n - 2, 1.0, 1.0).expect("valid Gauss-Jacobi degree");
            let mut g: Vec<f64> = rule.nodes().copied().collect();
            g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g
        } else {
            vec![0.0]
        };
        for mut xi in guesses {
            // polish: interior nodes are the roots of P'_{n-1}
            for _ in 0..20 {
                let (_, dp, d2p) = legendre(n - 1, xi);
                let step = dp / d2p;
                xi -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            x.push(xi);
        }
    }
    x.push(1.0);
    x
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = hw * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * hw, ((k - g) * hw).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, est: (f64, f64), depth: usize) -> f64 {
        if est.1 <= tol || depth == 0 {
            return est.0;
        }
        let m = 0.5 * (a + b);
        let l = gk15(f, a, m);
        let r = gk15(f, m, b);
        rec(f, a, m, 0.5 * tol, l, depth - 1) + rec(f, m, b, 0.5 * tol, r, depth - 1)
    }
    let est = gk15(&f, a, b);
    let tol = abs_tol.max(rel_tol * est.0.abs());
    rec(&f, a, b, tol, est, 40)
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` equal panels.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (xr, wr) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut x = Vec::with_capacity(panels * order);
    let mut w = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (xi, wi) in xr.iter().zip(&wr) {
            x.push(c + 0.5 * h * xi);
            w.push(0.5 * h * wi);
        }
    }
    (x, w)
}

/// Piecewise polynomial representation on Gauss–Lobatto panels. Adjacent
/// panels share their endpoint node.
#[derive(Debug, Clone)]
pub struct PanelGrid {
    pub a: f64,
    pub b: f64,
    panels: usize,
    order: usize,
    width: f64,
    ref_nodes: Vec<f64>,
    smat: Vec<f64>,
    dmat: Vec<f64>,
    bary: Vec<f64>,
    /// Global node coordinates, ascending.
    pub x: Vec<f64>,
}

impl PanelGrid {
    /// Grid on `[a, b]` with panels no wider than `max_width`, `order` nodes per panel.
    pub fn new(a: f64, b: f64, max_width: f64, order: usize) -> Self {
        assert!(b > a && max_width > 0.0 && order >= 3);
        let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        let r = gauss_lobatto(order);
        let n = order;
        let v = DMatrix::from_fn(n, n, |k, j| legendre(j, r[k]).0);
        let vinv = v.clone().try_inverse().expect("Vandermonde on Lobatto nodes is invertible");
        let w = DMatrix::from_fn(n, n, |k, j| {
            if j == 0 {
                r[k] + 1.0
            } else {
                (legendre(j + 1, r[k]).0 - legendre(j - 1, r[k]).0) / (2.0 * j as f64 + 1.0)
            }
        });
        let dv = DMatrix::from_fn(n, n, |k, j| legendre(j, r[k]).1);
        let s = w * &vinv;
        let d = dv * &vinv;
        let bary: Vec<f64> = (0..n)
            .map(|l| {
                let mut p = 1.0;
                for m in 0..n {
                    if m != l {
                        p *= r[l] - r[m];
                    }
                }
                1.0 / p
            })
            .collect();
        let mut x = Vec::with_capacity(panels * (n - 1) + 1);
        for p in 0..panels {
            let x0 = a + p as f64 * width;
            let start = if p == 0 { 0 } else { 1 };
            for &rk in &r[start..] {
                x.push(x0 + 0.5 * width * (rk + 1.0));
            }
        }
        *x.last_mut().unwrap() = b;
        PanelGrid {
            a,
            b,
            panels,
            order,
            width,
            ref_nodes: r,
            smat: s.as_slice().to_vec(),
            dmat: d.as_slice().to_vec(),
            bary,
            x,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    // nalgebra storage is column-major
    fn s(&self, k: usize, l: usize) -> f64 {
        self.smat[k + l * self.order]
    }

    fn d(&self, k: usize, l: usize) -> f64 {
        self.dmat[k + l * self.order]
    }

    /// `∫_a^{x_k} f` at every node.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let n = self.order;
        let half = 0.5 * self.width;
        let mut out = vec![0.0; self.len()];
        let mut base = 0.0;
        for p in 0..self.panels {
            let off = p * (n - 1);
            for k in 1..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += self.s(k, l) * f[off + l];
                }
                out[off + k] = base + half * s;
            }
            base = out[off + n - 1];
        }
        out
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        *self.cumulative(f).last().unwrap()
    }

    /// Spectral derivative per panel; shared nodes take the average of the
    /// two one-sided values.
    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let n = self.order;
        let scale = 2.0 / self.width;
        let mut out = vec![0.0; self.len()];
        let mut count = vec![0u8; self.len()];
        for p in 0..self.panels {
            let off = p * (n - 1);
            for k in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += self.d(k, l) * f[off + l];
                }
                out[off + k] += scale * s;
                count[off + k] += 1;
            }
        }
        out.iter_mut().zip(&count).for_each(|(o, &c)| *o /= c as f64);
        out
    }

    /// Barycentric interpolation of nodal values at `x`.
    pub fn interpolate(&self, f: &[f64], x: f64) -> f64 {
        let n = self.order;
        let t = ((x - self.a) / self.width).clamp(0.0, self.panels as f64);
        let p = (t.floor() as usize).min(self.panels - 1);
        let off = p * (n - 1);
        let xr = 2.0 * (t - p as f64) - 1.0;
        let (mut num, mut den) = (0.0, 0.0);
        for l in 0..n {
            let d = xr - self.ref_nodes[l];
            if d.abs() < 1e-15 {
                return f[off + l];
            }
            let c = self.bary[l] / d;
            num += c * f[off + l];
            den += c;
        }
        num / den
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.x.iter().map(|&x| f(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lobatto_nodes_match_known_values() {
        let x = gauss_lobatto(5);
        let r = (3.0f64 / 7.0).sqrt();
        let expect = [-1.0, -r, 0.0, r, 1.0];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn adaptive_integrates_oscillatory() {
        let v = adaptive(|t: f64| (3.0 * t).cos(), 0.0, 10.0, 1e-14, 1e-13);
        assert!((v - (30.0f64).sin() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn panel_cumulative_is_spectrally_accurate() {
        let g = PanelGrid::new(0.0, 3.0, 0.25, 12);
        let f = g.map(|x| (5.0 * x).cos());
        let c = g.cumulative(&f);
        for (x, v) in g.x.iter().zip(&c) {
            assert!((v - (5.0 * x).sin() / 5.0).abs() < 1e-13);
        }
        let d = g.derivative(&f);
        for (x, v) in g.x.iter().zip(&d) {
            assert!((v + 5.0 * (5.0 * x).sin()).abs() < 1e-9);
        }
        assert!((g.interpolate(&f, 1.2345) - (5.0f64 * 1.2345).cos()).abs() < 1e-12);
    }

    #[test]
    fn composite_gauss_exact_for_cubics() {
        let (x, w) = composite_gauss(-1.0, 2.0, 3, 2);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(3)).sum();
        assert!((s - (16.0 - 1.0) / 4.0).abs() < 1e-13);
    }
}
