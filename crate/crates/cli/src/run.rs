//! Pipeline stages, output files and the run manifest.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use fissurehom::cell::{effective_tensors, solve_poisson_cell, CellInputs, CellMesh, EffectiveTensors, PermeabilitySpec};
use fissurehom::fissure_transport::{
    build_profile, dual_method_gap, proposition2_errors, transmission_coeffs, ExchangeParams, FissureODEConfig, ProfileMode, Variant,
};
use fissurehom::limit_flow::{solve_limit_flow, CouplingMode, FlowConfig, FlowDomain, LimitFlowSolution, VectorField};
use fissurehom::limit_transport::{balance_check, net_exchange, solve_limit_transport, ScalarField, TransportConfig};
use fissurehom::linalg::{min_eigenvalue2, min_eigenvalue3};
use fissurehom::stochastic::{build_process, ergodic_stats, ErgodicStats, ProcessKind, StationaryProcess};
use fissurehom::verify::{fine_vs_limit_fissure, loglog_fit, run_sweep, SweepPlan};
use nalgebra::{Matrix2, Matrix3};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Cell,
    Flow,
    Transport,
    Fissure,
    Ergodic,
    Sweep,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Cell => "cell",
            Stage::Flow => "flow",
            Stage::Transport => "transport",
            Stage::Fissure => "fissure",
            Stage::Ergodic => "ergodic",
            Stage::Sweep => "sweep",
        }
    }

    fn needs(self) -> &'static [Stage] {
        match self {
            Stage::Flow => &[Stage::Cell],
            Stage::Transport => &[Stage::Cell, Stage::Flow],
            _ => &[],
        }
    }
}

/// Stages to run for a request, dependencies first.
pub fn plan(requested: &[Stage]) -> Vec<Stage> {
    let mut s = BTreeSet::new();
    for r in requested {
        s.extend(r.needs().iter().copied());
        s.insert(*r);
    }
    s.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    CheckFailed,
    Error,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub name: String,
    pub status: Status,
    pub message: String,
    pub seconds: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub serial: bool,
    pub stages: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub steps: Vec<StepRecord>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// 0 on success, 3 if a stage errored, 4 if only residual checks failed.
    pub fn exit_code(&self) -> i32 {
        if self.steps.iter().any(|s| matches!(s.status, Status::Error | Status::Skipped)) {
            3
        } else if self.steps.iter().any(|s| s.status == Status::CheckFailed) {
            4
        } else {
            0
        }
    }
}

type StageResult = Result<(bool, String), String>;

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    written: Vec<String>,
    q: Option<Arc<StationaryProcess>>,
    stats: Option<ErgodicStats>,
    tensors: Option<EffectiveTensors>,
    flow: Option<Arc<LimitFlowSolution>>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn mat3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn mat2(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

impl<'a> Runner<'a> {
    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), String> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
        text.push('\n');
        self.file(name, text.as_bytes())
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| e.to_string())?;
        }
        let bytes = w.into_inner().map_err(|e| e.to_string())?;
        self.file(name, &bytes)
    }

    fn file(&mut self, name: &str, bytes: &[u8]) -> Result<(), String> {
        write_atomic(&self.out.join(name), bytes).map_err(|e| format!("writing {name}: {e}"))?;
        self.written.push(name.into());
        Ok(())
    }

    fn process(&mut self) -> Result<Arc<StationaryProcess>, String> {
        if self.q.is_none() {
            let p = build_process(self.cfg.aperture.params(ProcessKind::ApertureQ), self.cfg.seed).map_err(|e| e.to_string())?;
            self.q = Some(Arc::new(p));
        }
        Ok(self.q.clone().unwrap())
    }

    fn stats(&mut self) -> Result<ErgodicStats, String> {
        if self.stats.is_none() {
            let q = self.process()?;
            let t = *self.cfg.ergodic.windows_length.last().unwrap();
            self.stats = Some(ergodic_stats(&q, t));
        }
        Ok(self.stats.unwrap())
    }

    fn cell(&mut self) -> StageResult {
        let c = &self.cfg.cell;
        let stats = self.stats()?;
        let [a, b, d] = c.k_plus_area;
        let [e, f, g] = c.k_minus_area;
        let inp = CellInputs {
            k_plus: PermeabilitySpec::diagonal(a, b, d),
            k_minus: PermeabilitySpec::diagonal(e, f, g),
            mesh3: c.mesh3(),
            resolution2: c.resolution_2d,
            d_mol: c.d_mol_area_per_time,
            surface_mesh: c.surface_mesh(),
            bc_mode: c.bc(),
            mean_q: stats.mean_q,
            mean_r: self.cfg.centerline.mean_length,
        };
        let (t, rep) = effective_tensors(&inp).map_err(|e| e.to_string())?;
        let ok = rep.darcy_residual <= 1e-8 && rep.scalar_residual <= 1e-8 && rep.stokes_divergence <= 1e-8 && rep.poisson_energy_gap <= 1e-8;
        let kf_eig = min_eigenvalue2(&t.k_f);
        self.json(
            "cell.json",
            &json!({
                "k_hat_plus": mat3(&t.k_hat_plus),
                "k_hat_minus": mat3(&t.k_hat_minus),
                "d_hat": mat3(&t.d_hat),
                "d_star": mat2(&t.d_star),
                "k_f": mat2(&t.k_f),
                "k0": t.k0,
                "k_star_plus": mat2(&t.k_star_plus),
                "k_star_minus": mat2(&t.k_star_minus),
                "fluid_fraction": t.fluid_fraction,
                "min_eigenvalue": {
                    "k_hat_plus": min_eigenvalue3(&t.k_hat_plus),
                    "k_hat_minus": min_eigenvalue3(&t.k_hat_minus),
                    "d_hat": min_eigenvalue3(&t.d_hat),
                    "k_f": kf_eig,
                },
                "report": rep,
            }),
        )?;
        self.tensors = Some(t);
        Ok((ok, format!("k0 {:.6}, K_f min-eig {kf_eig:.1e}", self.tensors.as_ref().unwrap().k0)))
    }

    fn flow(&mut self) -> StageResult {
        let f = &self.cfg.flow;
        let g = &self.cfg.geometry;
        let tensors = self.tensors.clone().ok_or("cell tensors missing")?;
        let (lo, len, amp) = (g.sigma_length[0], g.sigma_length[1] - g.sigma_length[0], f.forcing_amplitude_accel);
        let force: VectorField = Arc::new(move |x| [0.0, 0.0, amp * (PI * (x[0] - lo) / len).sin()]);
        let fc = FlowConfig {
            mu_plus: f.mu_plus_viscosity,
            mu_minus: f.mu_minus_viscosity,
            mu: f.mu_viscosity,
            gamma: f.gamma_slip,
            tensors,
            stats: self.stats()?,
            domain: FlowDomain { sigma: g.sigma_length, h: g.h_length, height_plus: f.height_plus_length, height_minus: f.height_minus_length },
            g_plus: force.clone(),
            g_minus: force,
            coupling: CouplingMode::Auto,
        };
        let sol = solve_limit_flow(&fc, &f.mesh(g.sigma_length)).map_err(|e| e.to_string())?;
        let scale = sol.flux_top.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cont = sol.flux_top.iter().zip(&sol.flux_bottom).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale.max(1e-300);
        let ok = sol.divergence_residual <= 1e-8 && (scale == 0.0 || cont <= 1e-8);
        let (up, down) = sol.interface_fluxes();
        self.json(
            "flow.json",
            &json!({
                "method": format!("{:?}", sol.method),
                "coupling_iterations": sol.coupling_history.len(),
                "divergence_residual": sol.divergence_residual,
                "flux_continuity": cont,
                "net_interface_flux": [up, down],
                "max_interface_velocity": scale,
                "mesh": [sol.grid_plus.n, sol.grid_minus.n],
            }),
        )?;
        #[derive(Serialize)]
        struct Iface {
            x1: f64,
            x2: f64,
            p_plus_trace: f64,
            p_minus_trace: f64,
            v_f3: f64,
            flux_top: f64,
            flux_bottom: f64,
        }
        let gp = &sol.grid_plus;
        let rows: Vec<Iface> = (0..gp.columns())
            .map(|c| {
                let x = gp.face_centre(2, [c % gp.n[0], c / gp.n[0], 0]);
                Iface {
                    x1: x[0],
                    x2: x[1],
                    p_plus_trace: sol.trace_plus[c],
                    p_minus_trace: sol.trace_minus[c],
                    v_f3: sol.v_f3[c],
                    flux_top: sol.flux_top[c],
                    flux_bottom: sol.flux_bottom[c],
                }
            })
            .collect();
        self.csv("flow_interface.csv", &rows)?;
        #[derive(Serialize)]
        struct CellRow {
            region: &'static str,
            x1: f64,
            x2: f64,
            x3: f64,
            p: f64,
            v1: f64,
            v2: f64,
            v3: f64,
        }
        let mut cells = Vec::new();
        for (region, grid, p, v) in [("plus", &sol.grid_plus, &sol.p_plus, &sol.v_plus), ("minus", &sol.grid_minus, &sol.p_minus, &sol.v_minus)] {
            for c in 0..grid.len() {
                let x = grid.centre(c);
                cells.push(CellRow { region, x1: x[0], x2: x[1], x3: x[2], p: p[c], v1: v[c][0], v2: v[c][1], v3: v[c][2] });
            }
        }
        self.csv("flow_cells.csv", &cells)?;
        let msg = format!("divergence {:.1e}, continuity {cont:.1e}", sol.divergence_residual);
        self.flow = Some(Arc::new(sol));
        Ok((ok, msg))
    }

    fn exchange(&mut self, reaction: f64) -> Result<ExchangeParams, String> {
        let s = self.stats()?;
        let k0 = match &self.tensors {
            Some(t) => t.k0,
            None => solve_poisson_cell(&CellMesh::new(2, self.cfg.cell.resolution_2d, None)).map_err(|e| e.to_string())?.k0,
        };
        Ok(ExchangeParams {
            diffusivity: self.cfg.cell.d_mol_area_per_time,
            reaction,
            h: self.cfg.geometry.h_length,
            mu: self.cfg.flow.mu_viscosity,
            k0,
            mean_q2: s.mean_q2,
            mean_inv_q2: s.mean_inv_q2,
        })
    }

    fn transport(&mut self) -> StageResult {
        let t = &self.cfg.transport;
        let tensors = self.tensors.clone().ok_or("cell tensors missing")?;
        let flow = self.flow.clone().ok_or("flow solution missing")?;
        let (c, r2, rate) = (t.source_centre_length, t.source_radius_length.powi(2), t.source_rate);
        let source: ScalarField = Arc::new(move |x| {
            let d = (0..3).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>();
            if d < r2 {
                rate
            } else {
                0.0
            }
        });
        let tc = TransportConfig {
            d_hat: tensors.d_hat,
            d_star: tensors.d_star,
            flow,
            exchange: self.exchange(t.r_rate)?,
            variant: Variant::Molecular,
            source,
            source_minus: None,
            fluid_fraction: tensors.fluid_fraction,
        };
        let sol = solve_limit_transport(&tc).map_err(|e| e.to_string())?;
        let bal = balance_check(&sol, &tc).map_err(|e| e.to_string())?;
        let min = sol.min_value();
        let ok = bal.residual <= 1e-8 && (rate < 0.0 || min >= -1e-12);
        let (top, bottom) = net_exchange(&sol);
        self.json(
            "transport.json",
            &json!({
                "balance": {
                    "residual": bal.residual,
                    "source_work": bal.source_work,
                    "transport_work": bal.transport_work,
                    "exchange_work": bal.exchange_work,
                    "reaction_work": bal.reaction_work,
                },
                "net_exchange_top": top,
                "net_exchange_bottom": bottom,
                "min_value": min,
                "max_abs": sol.max_abs(),
                "linear_residual": sol.residual,
                "iterations": sol.iterations,
            }),
        )?;
        #[derive(Serialize)]
        struct Row {
            region: &'static str,
            x1: f64,
            x2: f64,
            x3: f64,
            u: f64,
        }
        let mut rows = Vec::new();
        for (region, grid, u) in [("plus", &sol.grid_plus, &sol.u_plus), ("minus", &sol.grid_minus, &sol.u_minus)] {
            for c in 0..grid.len() {
                let x = grid.centre(c);
                rows.push(Row { region, x1: x[0], x2: x[1], x3: x[2], u: u[c] });
            }
        }
        self.csv("transport_field.csv", &rows)?;
        #[derive(Serialize)]
        struct Iface {
            x1: f64,
            x2: f64,
            trace_plus: f64,
            trace_minus: f64,
            flux_top: f64,
            flux_bottom: f64,
        }
        let g = &sol.grid_plus;
        let iface: Vec<Iface> = (0..g.columns())
            .map(|c| {
                let x = g.face_centre(2, [c % g.n[0], c / g.n[0], 0]);
                Iface {
                    x1: x[0],
                    x2: x[1],
                    trace_plus: sol.trace_plus[c],
                    trace_minus: sol.trace_minus[c],
                    flux_top: sol.interface_flux_top[c],
                    flux_bottom: sol.interface_flux_bottom[c],
                }
            })
            .collect();
        self.csv("transport_interface.csv", &iface)?;
        Ok((ok, format!("balance {:.1e}, min {min:.1e}", bal.residual)))
    }

    fn fissure(&mut self) -> StageResult {
        let fs = &self.cfg.fissure;
        let g = &self.cfg.geometry;
        let q = self.process()?;
        let stats = self.stats()?;
        let d = self.cfg.cell.d_mol_area_per_time;
        let r = self.cfg.transport.r_rate;
        let oc = FissureODEConfig::from_process(q, 0.0, 0.0, g.epsilon, g.theta, g.h_length, d, r, fs.v3_velocity);
        let mode = if r > 0.0 { ProfileMode::Reactive } else { ProfileMode::Advective };
        let prof = build_profile(fs.u_plus, fs.u_minus, &oc, mode).map_err(|e| e.to_string())?;
        let gap = dual_method_gap(&oc).map_err(|e| e.to_string())?;
        let coeffs = transmission_coeffs(&self.exchange(r)?, 0.0, 0.0, Variant::Molecular).map_err(|e| e.to_string())?;
        // the asymptotic comparisons are stated for v₃ = 0
        let (p2, fine) = if fs.v3_velocity == 0.0 {
            let p2 = proposition2_errors(&oc, &stats).map_err(|e| e.to_string())?;
            let f = fine_vs_limit_fissure(fs.u_plus, fs.u_minus, &oc, &stats).map_err(|e| e.to_string())?;
            (Some(p2), Some(f))
        } else {
            (None, None)
        };
        let ok = gap <= 1e-8 && prof.residual <= 1e-10;
        self.json(
            "fissure.json",
            &json!({
                "stats": stats,
                "transmission": {
                    "r_hat": coeffs.r_hat,
                    "a": coeffs.a,
                    "exchange_scale": coeffs.exchange_scale,
                    "cosh_rh": coeffs.cosh_rh,
                    "top_flux": coeffs.top_flux(fs.u_plus, fs.u_minus),
                    "bottom_flux": coeffs.bottom_flux(fs.u_plus, fs.u_minus),
                },
                "dual_method_gap": gap,
                "profile_residual": prof.residual,
                "profile_iterations": prof.iterations,
                "asymptotic_errors": p2.map(|e| json!({"w": e.w, "z": e.z, "w_flux": e.w_flux, "z_flux": e.z_flux})),
                "fine_vs_limit": fine,
            }),
        )?;
        #[derive(Serialize)]
        struct Row {
            x3: f64,
            u: f64,
            du: f64,
            weighted_du: f64,
        }
        let rows: Vec<Row> = (0..prof.value.len())
            .map(|k| Row { x3: prof.x()[k], u: prof.value[k], du: prof.derivative[k], weighted_du: prof.weighted_derivative[k] })
            .collect();
        self.csv("fissure_profile.csv", &rows)?;
        Ok((ok, format!("dual-method gap {gap:.1e}")))
    }

    fn ergodic(&mut self) -> StageResult {
        let q = self.process()?;
        #[derive(Serialize)]
        struct Row {
            window: f64,
            mean_q: f64,
            mean_q2: f64,
            mean_inv_q2: f64,
            stderr: f64,
        }
        let rows: Vec<Row> = self
            .cfg
            .ergodic
            .windows_length
            .iter()
            .map(|&t| {
                let s = ergodic_stats(&q, t);
                Row { window: t, mean_q: s.mean_q, mean_q2: s.mean_q2, mean_inv_q2: s.mean_inv_q2, stderr: s.stderr }
            })
            .collect();
        let ts: Vec<f64> = rows.iter().map(|r| r.window).collect();
        let se: Vec<f64> = rows.iter().map(|r| r.stderr).collect();
        let (slope, r2) = loglog_fit(&ts, &se);
        let last = rows.last().unwrap();
        self.json(
            "ergodic.json",
            &json!({
                "constant": q.is_constant(),
                "mean_q": last.mean_q,
                "mean_q2": last.mean_q2,
                "mean_inv_q2": last.mean_inv_q2,
                "stderr_slope": if slope.is_finite() { Some(slope) } else { None },
                "stderr_r_squared": if r2.is_finite() { Some(r2) } else { None },
            }),
        )?;
        self.csv("ergodic.csv", &rows)?;
        let ok = rows.iter().all(|r| r.mean_q.is_finite() && r.mean_inv_q2.is_finite());
        Ok((ok, format!("<q^2> {:.6}, <1/q^2> {:.6}", last.mean_q2, last.mean_inv_q2)))
    }

    fn sweep(&mut self) -> StageResult {
        let c = self.cfg;
        let base = SweepPlan::default_for(c.sweep.target);
        let plan = SweepPlan {
            epsilons: if c.sweep.epsilons.is_empty() { base.epsilons.clone() } else { c.sweep.epsilons.clone() },
            theta: c.geometry.theta,
            realizations: c.sweep.realizations,
            seed: c.seed,
            q: c.aperture.params(ProcessKind::ApertureQ),
            r: c.centerline.params(ProcessKind::CenterlineR),
            c4: c.geometry.c4_length,
            h: c.geometry.h_length,
            sigma: c.geometry.sigma_length,
            stats_window: c.sweep.stats_window_length,
            diffusivity: c.cell.d_mol_area_per_time,
            reaction: c.transport.r_rate,
            traces: (c.fissure.u_plus, c.fissure.u_minus),
            field: c.field(),
            mu: c.flow.mu_viscosity,
            cell_resolution: c.cell.resolution_2d,
            ..base
        };
        let rep = run_sweep(&plan).map_err(|e| e.to_string())?;
        self.json("sweep.json", &json!({ "plan": plan, "report": rep }))?;
        #[derive(Serialize)]
        struct Row<'r> {
            series: &'r str,
            epsilon: f64,
            median: f64,
            q1: f64,
            q3: f64,
        }
        let mut rows = Vec::new();
        for s in &rep.series {
            for p in &s.points {
                rows.push(Row { series: &s.name, epsilon: p.epsilon, median: p.median, q1: p.q1, q3: p.q3 });
            }
        }
        self.csv("sweep.csv", &rows)?;
        let msg = rep.series.iter().map(|s| format!("{} rate {:.2}", s.name, s.rate)).collect::<Vec<_>>().join(", ");
        Ok((true, msg))
    }

    fn stage(&mut self, s: Stage) -> StageResult {
        match s {
            Stage::Cell => self.cell(),
            Stage::Flow => self.flow(),
            Stage::Transport => self.transport(),
            Stage::Fissure => self.fissure(),
            Stage::Ergodic => self.ergodic(),
            Stage::Sweep => self.sweep(),
        }
    }
}

fn index_files(dir: &Path, base: &Path, out: &mut Vec<FileEntry>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            index_files(&p, base, out)?;
            continue;
        }
        let rel = p.strip_prefix(base).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        if rel == MANIFEST || rel.ends_with(".tmp-write") {
            continue;
        }
        let bytes = fs::read(&p)?;
        out.push(FileEntry { path: rel, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
    }
    Ok(())
}

/// Runs the stages (with their dependencies) and writes the manifest.
pub fn run(cfg: &ExperimentConfig, config_bytes: &[u8], stages: &[Stage], serial: bool) -> std::io::Result<RunManifest> {
    let out = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out)?;
    let started = unix_now();
    let order = plan(stages);
    let mut runner = Runner { cfg, out: out.clone(), written: Vec::new(), q: None, stats: None, tensors: None, flow: None };
    let mut steps: Vec<StepRecord> = Vec::new();
    for s in &order {
        let failed_dep = s.needs().iter().find(|d| steps.iter().any(|r| r.name == d.name() && r.status == Status::Error));
        if let Some(d) = failed_dep {
            steps.push(StepRecord { name: s.name().into(), status: Status::Skipped, message: format!("{} failed", d.name()), seconds: 0.0, outputs: vec![] });
            continue;
        }
        runner.written.clear();
        let t0 = Instant::now();
        let (status, message) = match runner.stage(*s) {
            Ok((true, m)) => (Status::Ok, m),
            Ok((false, m)) => (Status::CheckFailed, m),
            Err(m) => (Status::Error, m),
        };
        steps.push(StepRecord { name: s.name().into(), status, message, seconds: t0.elapsed().as_secs_f64(), outputs: runner.written.clone() });
    }
    let mut files = Vec::new();
    index_files(&out, &out, &mut files)?;
    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config_bytes),
        seed: cfg.seed,
        serial,
        stages: order.iter().map(|s| s.name().to_string()).collect(),
        started_unix: started,
        finished_unix: unix_now(),
        steps,
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(&out.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(statuses: &[Status]) -> RunManifest {
        RunManifest {
            toolkit_version: String::new(),
            config_sha256: String::new(),
            seed: 0,
            serial: true,
            stages: vec![],
            started_unix: 0.0,
            finished_unix: 0.0,
            steps: statuses
                .iter()
                .map(|s| StepRecord { name: "x".into(), status: *s, message: String::new(), seconds: 0.0, outputs: vec![] })
                .collect(),
            files: vec![],
        }
    }

    #[test]
    fn dependencies_come_first() {
        assert_eq!(plan(&[Stage::Transport]), vec![Stage::Cell, Stage::Flow, Stage::Transport]);
        assert_eq!(plan(&[Stage::Sweep, Stage::Flow]), vec![Stage::Cell, Stage::Flow, Stage::Sweep]);
        assert_eq!(plan(&[Stage::Fissure]), vec![Stage::Fissure]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(manifest(&[Status::Ok, Status::Ok]).exit_code(), 0);
        assert_eq!(manifest(&[Status::Ok, Status::CheckFailed]).exit_code(), 4);
        assert_eq!(manifest(&[Status::CheckFailed, Status::Error]).exit_code(), 3);
        assert_eq!(manifest(&[Status::Error, Status::Skipped]).exit_code(), 3);
    }
}
