//! Experiment configuration (TOML). Key names carry their units.

use std::path::Path;

use fissurehom::cell::{BcMode, CellMesh, Obstacle};
use fissurehom::limit_flow::FlowMesh;
use fissurehom::stochastic::{ProcessKind, ProcessParams};
use fissurehom::verify::{SweepTarget, TestField};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid { key: key.into(), message: message.into() })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub aperture: ProcessSpec,
    pub centerline: ProcessSpec,
    pub geometry: GeometrySpec,
    pub cell: CellSpec,
    pub flow: FlowSpec,
    pub transport: TransportSpec,
    pub fissure: FissureSpec,
    pub ergodic: ErgodicSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        ExperimentConfig {
            seed: 1,
            output_dir: "out".into(),
            aperture: ProcessSpec { mean_length: 0.5, amplitudes_length: vec![0.1, 0.05], frequencies_per_length: vec![tau, tau * 2f64.sqrt()] },
            centerline: ProcessSpec { mean_length: 0.0, amplitudes_length: vec![], frequencies_per_length: vec![] },
            geometry: GeometrySpec::default(),
            cell: CellSpec::default(),
            flow: FlowSpec::default(),
            transport: TransportSpec::default(),
            fissure: FissureSpec::default(),
            ergodic: ErgodicSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Random-phase Fourier process `mean + Σ A_k cos(ω_k s + φ_k)`; no
/// amplitudes gives a constant.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub mean_length: f64,
    #[serde(default)]
    pub amplitudes_length: Vec<f64>,
    #[serde(default)]
    pub frequencies_per_length: Vec<f64>,
}

impl ProcessSpec {
    pub fn params(&self, kind: ProcessKind) -> ProcessParams {
        if self.amplitudes_length.is_empty() {
            ProcessParams::constant(self.mean_length, kind)
        } else {
            ProcessParams::fourier(self.mean_length, &self.amplitudes_length, &self.frequencies_per_length, kind)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub epsilon: f64,
    pub theta: f64,
    pub h_length: f64,
    /// `[x1_lo, x1_hi, x2_lo, x2_hi]`.
    pub sigma_length: [f64; 4],
    pub c4_length: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec { epsilon: 0.01, theta: 0.5, h_length: 1.0, sigma_length: [0.0, 1.0, 0.0, 1.0], c4_length: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ObstacleSpec {
    None,
    Box { half_extent: [f64; 3] },
    Ball { radius: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum BcSpec {
    Periodic,
    LiteralNeumann,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CellSpec {
    /// Cells per side of the 3D cell problems.
    pub resolution: usize,
    /// Cells per side of the 2D Stokes and torsion problems.
    pub resolution_2d: usize,
    pub obstacle: ObstacleSpec,
    /// Diagonal of the constant permeability above and below.
    pub k_plus_area: [f64; 3],
    pub k_minus_area: [f64; 3],
    pub d_mol_area_per_time: f64,
    pub bc_mode: BcSpec,
}

impl Default for CellSpec {
    fn default() -> Self {
        CellSpec {
            resolution: 8,
            resolution_2d: 32,
            obstacle: ObstacleSpec::None,
            k_plus_area: [1.0; 3],
            k_minus_area: [1.0; 3],
            d_mol_area_per_time: 1.0,
            bc_mode: BcSpec::Periodic,
        }
    }
}

impl CellSpec {
    pub fn mesh3(&self) -> CellMesh {
        let ob = match self.obstacle {
            ObstacleSpec::None => None,
            ObstacleSpec::Box { half_extent } => Some(Obstacle::Box { half: half_extent }),
            ObstacleSpec::Ball { radius } => Some(Obstacle::Ball { radius }),
        };
        CellMesh::new(3, self.resolution, ob)
    }

    pub fn surface_mesh(&self) -> CellMesh {
        CellMesh::new(2, self.resolution_2d, None)
    }

    pub fn bc(&self) -> BcMode {
        match self.bc_mode {
            BcSpec::Periodic => BcMode::Periodic,
            BcSpec::LiteralNeumann => BcMode::LiteralNeumann,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub mu_plus_viscosity: f64,
    pub mu_minus_viscosity: f64,
    pub mu_viscosity: f64,
    pub gamma_slip: f64,
    pub height_plus_length: f64,
    pub height_minus_length: f64,
    /// Body force `g₃ = A sin(π(x₁ − x₁_lo)/L₁)` in both regions.
    pub forcing_amplitude_accel: f64,
    /// Horizontal cells along x₁; vertical counts follow the heights.
    pub resolution: usize,
    /// Cells along x₂; 1 selects the vertical slice mode.
    pub cells_x2: usize,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            mu_plus_viscosity: 1.0,
            mu_minus_viscosity: 1.0,
            mu_viscosity: 1.0,
            gamma_slip: 0.0,
            height_plus_length: 1.0,
            height_minus_length: 1.0,
            forcing_amplitude_accel: 5.0,
            resolution: 24,
            cells_x2: 1,
        }
    }
}

impl FlowSpec {
    pub fn mesh(&self, sigma: [f64; 4]) -> FlowMesh {
        let dx = (sigma[1] - sigma[0]) / self.resolution as f64;
        let n3 = |h: f64| ((h / dx).round() as usize).max(2);
        FlowMesh { n1: self.resolution, n2: self.cells_x2, n3_plus: n3(self.height_plus_length), n3_minus: n3(self.height_minus_length) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSpec {
    pub r_rate: f64,
    /// Constant source inside a ball in Ω⁺.
    pub source_rate: f64,
    pub source_centre_length: [f64; 3],
    pub source_radius_length: f64,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec { r_rate: 1.0, source_rate: 1.0, source_centre_length: [0.3, 0.5, 0.3], source_radius_length: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FissureSpec {
    pub u_plus: f64,
    pub u_minus: f64,
    pub v3_velocity: f64,
}

impl Default for FissureSpec {
    fn default() -> Self {
        FissureSpec { u_plus: 1.0, u_minus: 0.2, v3_velocity: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicSpec {
    /// Half-windows `T` of the time averages; the last one feeds the other stages.
    pub windows_length: Vec<f64>,
}

impl Default for ErgodicSpec {
    fn default() -> Self {
        ErgodicSpec { windows_length: vec![1e2, 1e3, 1e4] }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum FieldSpec {
    Vertical,
    Tangential,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub target: SweepTarget,
    /// Empty selects the target's default sequence.
    pub epsilons: Vec<f64>,
    pub realizations: usize,
    pub stats_window_length: f64,
    pub field: FieldSpec,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { target: SweepTarget::Prop2, epsilons: vec![], realizations: 4, stats_window_length: 2e3, field: FieldSpec::Vertical }
    }
}

impl ExperimentConfig {
    pub fn field(&self) -> TestField {
        match self.sweep.field {
            FieldSpec::Vertical => TestField::Vertical { v3: 1.0 },
            FieldSpec::Tangential => TestField::Tangential { v: [1.0, 0.0] },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        if !(g.theta > 0.0 && g.theta < 2.0 / 3.0) {
            return invalid("geometry.theta", format!("{} violates the hypothesis theta in (0, 2/3)", g.theta));
        }
        if !(g.epsilon > 0.0 && g.epsilon < 1.0) {
            return invalid("geometry.epsilon", format!("{} is not in (0, 1)", g.epsilon));
        }
        if !(g.h_length > 0.0) {
            return invalid("geometry.h_length", "must be positive");
        }
        let s = g.sigma_length;
        if !(s[1] > s[0] && s[3] > s[2]) {
            return invalid("geometry.sigma_length", "needs x1_lo < x1_hi and x2_lo < x2_hi");
        }
        if !(g.c4_length >= 0.0) {
            return invalid("geometry.c4_length", "must be >= 0");
        }
        for (key, spec, kind) in [("aperture", &self.aperture, ProcessKind::ApertureQ), ("centerline", &self.centerline, ProcessKind::CenterlineR)] {
            if spec.amplitudes_length.len() != spec.frequencies_per_length.len() {
                return invalid(key, "amplitudes_length and frequencies_per_length differ in length");
            }
            if let Err(e) = spec.params(kind).validate() {
                return invalid(key, e.to_string());
            }
        }
        let c = &self.cell;
        if c.resolution < 2 || c.resolution_2d < 4 {
            return invalid("cell.resolution", "needs resolution >= 2 and resolution_2d >= 4");
        }
        if c.k_plus_area.iter().chain(&c.k_minus_area).any(|k| !(*k > 0.0)) {
            return invalid("cell.k_plus_area", "permeabilities must be positive");
        }
        if !(c.d_mol_area_per_time > 0.0) {
            return invalid("cell.d_mol_area_per_time", "must be positive");
        }
        let f = &self.flow;
        let pos = [
            ("flow.mu_plus_viscosity", f.mu_plus_viscosity),
            ("flow.mu_minus_viscosity", f.mu_minus_viscosity),
            ("flow.mu_viscosity", f.mu_viscosity),
            ("flow.height_plus_length", f.height_plus_length),
            ("flow.height_minus_length", f.height_minus_length),
        ];
        for (k, v) in pos {
            if !(v > 0.0) {
                return invalid(k, "must be positive");
            }
        }
        if !(f.gamma_slip >= 0.0) {
            return invalid("flow.gamma_slip", "must be >= 0");
        }
        if f.resolution < 2 || f.cells_x2 < 1 {
            return invalid("flow.resolution", "needs resolution >= 2 and cells_x2 >= 1");
        }
        let t = &self.transport;
        if !(t.r_rate >= 0.0) {
            return invalid("transport.r_rate", "must be >= 0");
        }
        if !(t.source_radius_length > 0.0) {
            return invalid("transport.source_radius_length", "must be positive");
        }
        let w = &self.ergodic.windows_length;
        if w.is_empty() || w.iter().any(|t| !(*t > 0.0)) {
            return invalid("ergodic.windows_length", "needs at least one positive window");
        }
        let sw = &self.sweep;
        if sw.realizations == 0 {
            return invalid("sweep.realizations", "must be >= 1");
        }
        if sw.epsilons.windows(2).any(|e| e[1] >= e[0]) || sw.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return invalid("sweep.epsilons", "must be strictly decreasing values in (0, 1)");
        }
        if !(sw.stats_window_length > 0.0) {
            return invalid("sweep.stats_window_length", "must be positive");
        }
        Ok(())
    }
}

pub fn parse_str(text: &str, path: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
    parse_str(&text, &p)
}
