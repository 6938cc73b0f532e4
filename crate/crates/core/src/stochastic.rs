//! Stationary random processes with certified bounds, random phase
//! sequences, and time-average estimates of ensemble brackets.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{rng_for, zigzag, STREAM_ALPHA, STREAM_BETA, STREAM_PROCESS, STREAM_SHOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    ApertureQ,
    CenterlineR,
    DispersionD,
}

/// How the random path is built. All variants are stationary under shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Construction {
    /// `mean + Σ A_k cos(ω_k t + φ_k)` with independent uniform phases.
    #[default]
    Fourier,
    /// Smooth bumps of half-width `width` on a randomly offset, jittered
    /// lattice of spacing `spacing`; bump heights uniform in `[-A, A]` with
    /// `A = amplitudes[0]`.
    ShotNoise { spacing: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub mean: f64,
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub frequencies: Vec<f64>,
    pub bound_c1: f64,
    pub bound_c2: f64,
    pub bound_c3: f64,
    pub kind: ProcessKind,
    #[serde(default)]
    pub construction: Construction,
}

impl ProcessParams {
    pub fn constant(mean: f64, kind: ProcessKind) -> Self {
        let (c1, c2) = match kind {
            ProcessKind::CenterlineR => (-1.0, 1.0),
            _ => (mean, mean),
        };
        ProcessParams {
            mean,
            amplitudes: vec![],
            frequencies: vec![],
            bound_c1: c1,
            bound_c2: c2,
            bound_c3: 0.0,
            kind,
            construction: Construction::Fourier,
        }
    }

    /// Fourier process whose bounds are the tightest ones the construction
    /// certifies.
    pub fn fourier(mean: f64, amplitudes: &[f64], frequencies: &[f64], kind: ProcessKind) -> Self {
        let s: f64 = amplitudes.iter().map(|a| a.abs()).sum();
        let c3 = (1..=3)
            .map(|m| deriv_bound_fourier(amplitudes, frequencies, m))
            .fold(0.0, f64::max);
        let (c1, c2) = match kind {
            ProcessKind::CenterlineR => (-1.0, 1.0),
            _ => (mean - s, mean + s),
        };
        ProcessParams {
            mean,
            amplitudes: amplitudes.to_vec(),
            frequencies: frequencies.to_vec(),
            bound_c1: c1,
            bound_c2: c2,
            bound_c3: c3,
            kind,
            construction: Construction::Fourier,
        }
    }

    /// Largest deviation `sup |path − mean|` certified by the construction.
    pub fn deviation_bound(&self) -> f64 {
        match self.construction {
            Construction::Fourier => self.amplitudes.iter().map(|a| a.abs()).sum(),
            Construction::ShotNoise { spacing, width } => {
                self.amplitudes.first().map_or(0.0, |a| a.abs()) * shot_overlap(spacing, width) as f64
            }
        }
    }

    /// Certified bound on `sup |path^{(m)}|` for `m = 1, 2, 3`.
    pub fn derivative_bound(&self, m: usize) -> f64 {
        match self.construction {
            Construction::Fourier => deriv_bound_fourier(&self.amplitudes, &self.frequencies, m),
            Construction::ShotNoise { spacing, width } => {
                let a = self.amplitudes.first().map_or(0.0, |a| a.abs());
                a * shot_overlap(spacing, width) as f64 * BUMP_DERIV_SUP[m] / width.powi(m as i32)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleProcess(m));
        if !self.mean.is_finite() || self.amplitudes.iter().any(|a| !a.is_finite()) {
            return bad("non-finite parameters".into());
        }
        match self.construction {
            Construction::Fourier => {
                if self.amplitudes.len() != self.frequencies.len() {
                    return bad(format!(
                        "{} amplitudes but {} frequencies",
                        self.amplitudes.len(),
                        self.frequencies.len()
                    ));
                }
                if self.frequencies.iter().any(|w| !w.is_finite() || *w <= 0.0) {
                    return bad("frequencies must be positive".into());
                }
            }
            Construction::ShotNoise { spacing, width } => {
                if !(spacing > 0.0 && width > 0.0) {
                    return bad("shot-noise spacing and width must be positive".into());
                }
                if self.amplitudes.len() > 1 {
                    return bad("shot noise takes a single amplitude".into());
                }
            }
        }
        let s = self.deviation_bound();
        let (m, c1, c2) = (self.mean, self.bound_c1, self.bound_c2);
        match self.kind {
            ProcessKind::ApertureQ => {
                if !(0.0 < c1 && c1 <= m - s && m + s <= c2 && c2 < 1.0) {
                    return bad(format!(
                        "need 0 < c1 <= mean - S and mean + S <= c2 < 1 (c1={c1}, mean={m}, S={s}, c2={c2})"
                    ));
                }
            }
            ProcessKind::CenterlineR => {
                if m.abs() + s > 1.0 {
                    return bad(format!("need |mean| + S <= 1 (mean={m}, S={s})"));
                }
            }
            ProcessKind::DispersionD => {
                if !(0.0 < c1 && c1 <= m - s && m + s <= c2) {
                    return bad(format!(
                        "need 0 < c1 <= mean - S <= mean + S <= c2 (c1={c1}, mean={m}, S={s}, c2={c2})"
                    ));
                }
            }
        }
        for k in 1..=3 {
            let b = self.derivative_bound(k);
            if b > self.bound_c3 * (1.0 + 1e-12) {
                return bad(format!("derivative bound of order {k} is {b}, exceeds c3={}", self.bound_c3));
            }
        }
        Ok(())
    }
}

fn deriv_bound_fourier(a: &[f64], w: &[f64], m: usize) -> f64 {
    a.iter().zip(w).map(|(a, w)| a.abs() * w.powi(m as i32)).sum()
}

fn shot_overlap(spacing: f64, width: f64) -> usize {
    (4.0 * width / spacing).ceil() as usize + 1
}

// sup |B^{(m)}| on [-1, 1] for the bump B(s) = exp(1 - 1/(1 - s²)), rounded up
const BUMP_DERIV_SUP: [f64; 4] = [1.0, 2.2, 21.2, 510.0];

fn bump(s: f64) -> [f64; 4] {
    let d = 1.0 - s * s;
    if d < 1e-3 {
        return [0.0; 4];
    }
    let b = (1.0 - 1.0 / d).exp();
    let g1 = -2.0 * s / (d * d);
    let g2 = -(2.0 + 6.0 * s * s) / (d * d * d);
    let g3 = -24.0 * s * (1.0 + s * s) / (d * d * d * d);
    [b, g1 * b, (g2 + g1 * g1) * b, (g3 + 3.0 * g1 * g2 + g1 * g1 * g1) * b]
}

#[derive(Debug, Clone)]
struct ShotData {
    offset: f64,
}

/// A realized path with certified bounds.
#[derive(Debug, Clone)]
pub struct StationaryProcess {
    pub params: ProcessParams,
    pub phases: Vec<f64>,
    pub seed: u64,
    shot: Option<ShotData>,
}

pub fn build_process(params: ProcessParams, seed: u64) -> Result<StationaryProcess> {
    params.validate()?;
    let (phases, shot) = match params.construction {
        Construction::Fourier => {
            let phases = (0..params.amplitudes.len())
                .map(|k| rng_for(seed, STREAM_PROCESS, k as u64).gen::<f64>() * 2.0 * PI)
                .collect();
            (phases, None)
        }
        Construction::ShotNoise { .. } => {
            let offset = rng_for(seed, STREAM_PROCESS, 0).gen::<f64>();
            (vec![], Some(ShotData { offset }))
        }
    };
    Ok(StationaryProcess { params, phases, seed, shot })
}

impl StationaryProcess {
    pub fn is_constant(&self) -> bool {
        self.params.deviation_bound() == 0.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.derivs(t)[0]
    }

    /// Value and first three derivatives at `t`.
    pub fn derivs(&self, t: f64) -> [f64; 4] {
        let m = self.params.mean;
        let mut out = [m, 0.0, 0.0, 0.0];
        match self.params.construction {
            Construction::Fourier => {
                for ((a, w), ph) in self.params.amplitudes.iter().zip(&self.params.frequencies).zip(&self.phases) {
                    let (s, c) = (w * t + ph).sin_cos();
                    out[0] += a * c;
                    out[1] -= a * w * s;
                    out[2] -= a * w * w * c;
                    out[3] += a * w * w * w * s;
                }
            }
            Construction::ShotNoise { spacing, width } => {
                let amp = self.params.amplitudes.first().copied().unwrap_or(0.0);
                let off = self.shot.as_ref().map_or(0.0, |s| s.offset);
                let reach = width + 0.25 * spacing;
                let lo = ((t - reach) / spacing - off).floor() as i64;
                let hi = ((t + reach) / spacing - off).ceil() as i64;
                for n in lo..=hi {
                    let mut r = rng_for(self.seed, STREAM_SHOT, zigzag(n));
                    let jitter = (r.gen::<f64>() - 0.5) * 0.5 * spacing;
                    let height = (2.0 * r.gen::<f64>() - 1.0) * amp;
                    let center = (n as f64 + off) * spacing + jitter;
                    let s = (t - center) / width;
                    if s.abs() >= 1.0 {
                        continue;
                    }
                    let b = bump(s);
                    for k in 0..4 {
                        out[k] += height * b[k] / width.powi(k as i32);
                    }
                }
            }
        }
        // the construction already satisfies the bounds; this only absorbs
        // last-bit rounding of the finite sum
        let (lo, hi) = self.value_range();
        out[0] = out[0].clamp(lo, hi);
        out
    }

    /// Certified range of the path.
    pub fn value_range(&self) -> (f64, f64) {
        let s = self.params.deviation_bound();
        (self.params.mean - s, self.params.mean + s)
    }

    /// Samples `(t, q(t))` at `n` equally spaced points of `[t0, t1]`.
    pub fn sample_path(&self, t0: f64, t1: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let t = if n > 1 { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 } else { t0 };
                (t, self.eval(t))
            })
            .collect()
    }
}

/// Extremes observed by dense sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledBounds {
    pub min: f64,
    pub max: f64,
    pub max_abs_deriv: [f64; 3],
}

pub fn sample_bounds(p: &StationaryProcess, t0: f64, t1: f64, n: usize) -> SampledBounds {
    let mut out = SampledBounds { min: f64::INFINITY, max: f64::NEG_INFINITY, max_abs_deriv: [0.0; 3] };
    for k in 0..n {
        let t = t0 + (t1 - t0) * k as f64 / (n.max(2) - 1) as f64;
        let d = p.derivs(t);
        out.min = out.min.min(d[0]);
        out.max = out.max.max(d[0]);
        for m in 0..3 {
            out.max_abs_deriv[m] = out.max_abs_deriv[m].max(d[m + 1].abs());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Square,
    InverseSquare,
}

impl Transform {
    pub fn apply(self, q: f64) -> f64 {
        match self {
            Transform::Identity => q,
            Transform::Square => q * q,
            Transform::InverseSquare => 1.0 / (q * q),
        }
    }
}

/// Length of the sub-windows whose means give the standard error.
pub const BATCH_LENGTH: f64 = 10.0;

/// Time average of `f` over `[-T, T]` with the standard error of the batch means.
pub fn time_average<F: Fn(f64) -> f64>(f: F, t_window: f64) -> (f64, f64) {
    assert!(t_window > 0.0);
    let n = ((2.0 * t_window / BATCH_LENGTH).floor() as usize).max(2);
    let len = 2.0 * t_window / n as f64;
    let means: Vec<f64> = (0..n)
        .map(|b| {
            let a = -t_window + b as f64 * len;
            quad::adaptive(&f, a, a + len, 1e-13 * len, 1e-12) / len
        })
        .collect();
    let mean = means.iter().sum::<f64>() / n as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Time average of `transform(q)` over `[-T, T]`.
pub fn ergodic_average(p: &StationaryProcess, transform: Transform, t_window: f64) -> (f64, f64) {
    if p.is_constant() {
        return (transform.apply(p.params.mean), 0.0);
    }
    time_average(|t| transform.apply(p.eval(t)), t_window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicStats {
    pub mean_q: f64,
    pub mean_q2: f64,
    pub mean_inv_q2: f64,
    pub window_t: f64,
    pub stderr: f64,
}

impl ErgodicStats {
    /// Brackets of a constant process.
    pub fn constant(q: f64) -> Self {
        ErgodicStats { mean_q: q, mean_q2: q * q, mean_inv_q2: 1.0 / (q * q), window_t: f64::INFINITY, stderr: 0.0 }
    }
}

pub fn ergodic_stats(p: &StationaryProcess, t_window: f64) -> ErgodicStats {
    let (m1, s1) = ergodic_average(p, Transform::Identity, t_window);
    let (m2, s2) = ergodic_average(p, Transform::Square, t_window);
    let (m3, s3) = ergodic_average(p, Transform::InverseSquare, t_window);
    ErgodicStats { mean_q: m1, mean_q2: m2, mean_inv_q2: m3, window_t: t_window, stderr: s1.max(s2).max(s3) }
}

/// Random offsets `α_i`, `β_i` for `i` in an index window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSequence {
    pub lo: i64,
    pub hi: i64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub bound_c4: f64,
    pub seed: u64,
}

fn phase_value(seed: u64, stream: u64, i: i64, c4: f64) -> f64 {
    if c4 == 0.0 {
        return 0.0;
    }
    (2.0 * rng_for(seed, stream, zigzag(i)).gen::<f64>() - 1.0) * c4
}

pub fn sample_phases(lo: i64, hi: i64, c4: f64, seed: u64) -> Result<PhaseSequence> {
    if !(c4 >= 0.0) || !c4.is_finite() {
        return Err(Error::InvalidInput(format!("c4 must be finite and >= 0, got {c4}")));
    }
    let idx = lo..=hi;
    Ok(PhaseSequence {
        lo,
        hi,
        alpha: idx.clone().map(|i| phase_value(seed, STREAM_ALPHA, i, c4)).collect(),
        beta: idx.map(|i| phase_value(seed, STREAM_BETA, i, c4)).collect(),
        bound_c4: c4,
        seed,
    })
}

impl PhaseSequence {
    pub fn alpha(&self, i: i64) -> f64 {
        if (self.lo..=self.hi).contains(&i) {
            self.alpha[(i - self.lo) as usize]
        } else {
            phase_value(self.seed, STREAM_ALPHA, i, self.bound_c4)
        }
    }

    pub fn beta(&self, i: i64) -> f64 {
        if (self.lo..=self.hi).contains(&i) {
            self.beta[(i - self.lo) as usize]
        } else {
            phase_value(self.seed, STREAM_BETA, i, self.bound_c4)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_derivative_constants_bound_the_bump() {
        let mut sup = [0.0f64; 4];
        for k in 0..=200_000 {
            let s = -1.0 + 2.0 * k as f64 / 200_000.0;
            let b = bump(s);
            for m in 0..4 {
                sup[m] = sup[m].max(b[m].abs());
            }
        }
        for m in 0..4 {
            assert!(sup[m] <= BUMP_DERIV_SUP[m], "order {m}: {}", sup[m]);
        }
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let h = 1e-5;
        for &s in &[-0.7, -0.2, 0.1, 0.55] {
            let b = bump(s);
            for m in 0..3 {
                let fd = (bump(s + h)[m] - bump(s - h)[m]) / (2.0 * h);
                assert!((fd - b[m + 1]).abs() < 1e-5 * (1.0 + b[m + 1].abs()));
            }
        }
    }

    #[test]
    fn rejects_infeasible_chain() {
        let mut p = ProcessParams::fourier(0.5, &[0.3], &[1.0], ProcessKind::ApertureQ);
        p.bound_c1 = 0.25;
        assert!(matches!(build_process(p, 1), Err(Error::InfeasibleProcess(_))));
    }
}
