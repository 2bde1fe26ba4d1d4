//! Experiment orchestration: one configured run, or a sweep of runs, written
//! to an output directory together with a `manifest.json` that lists every
//! file with its SHA-256.
//!
//! Data files are byte-for-byte reproducible for a given config and build.
//! The manifest itself carries the wall-clock time and is therefore the one
//! file that differs between repeated runs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::front::{
    align_profile, estimate_shift, estimate_speed, fit_bramson, log_linear_decay, segregation_fit,
    segregation_value, shift_gap, sup_positive, Extreme, FrontTrace, ShiftEstimate, TerraceMonitor,
    DECAY_FLOOR,
};
use crate::model::{canonical_speeds, char_roots, cuv_sign_prediction, Verdict};
use crate::par::{self, Exec};
use crate::pde::{
    discrete_linear_speed, make_initial, output_grid, simulate_observed, FieldState, Grid, Species,
    SCHEME_VERSION,
};
use crate::supersub::{build_pair, evaluate_residuals, invasion_certificate, Family};
use crate::wave::{solve_bistable_wave, solve_kpp_profile, solve_perturbed_wave, WaveProfile};

pub const MANIFEST: &str = "manifest.json";

/// What a run does with its config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Every analysis requested in `[analysis]`.
    Simulate,
    /// Bistable front only.
    Wave,
    /// Canonical speeds and characteristic roots only.
    Roots,
    /// Residual signs of the `[supersub]` pair.
    SupersubVerify,
    /// Simulation with the Bramson fit enabled.
    Bramson,
    /// Simulation with terrace detection enabled.
    Terrace,
    /// Residuals plus the invasion certificate of the initial data.
    CertifyInvasion,
    /// Every row of `[sweep]`.
    Sweep,
}

impl Task {
    /// Config with the analyses this task implies switched on.
    pub fn adjust(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            Task::Bramson if c.analysis.bramson_window.is_none() => {
                let t = c.time.t_end;
                c.analysis.bramson_window = Some(((0.1 * t).max(20.0).min(0.5 * t), t));
            }
            Task::Terrace => c.analysis.terrace = true,
            Task::SupersubVerify => c.analysis.residuals = true,
            Task::CertifyInvasion => {
                c.analysis.residuals = true;
                c.analysis.certificate = true;
            }
            _ => {}
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// A module returned an error.
    NumericalFailure,
    /// Everything ran but a configured check failed.
    CheckFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub rule: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Versions {
    pub package: &'static str,
    pub scheme: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub task: Task,
    pub status: Status,
    pub config: Value,
    pub versions: Versions,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    pub checks: Vec<Check>,
    /// Scalar results by name.
    pub results: BTreeMap<String, Value>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// 0 success, 2 numerical failure, 3 failed check.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Ok => 0,
            Status::NumericalFailure => 2,
            Status::CheckFailure => 3,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

struct Ctx {
    dir: PathBuf,
    warnings: Vec<String>,
    errors: Vec<String>,
    checks: Vec<Check>,
    results: BTreeMap<String, Value>,
}

impl Ctx {
    fn new(dir: &Path) -> Self {
        Ctx {
            dir: dir.to_path_buf(),
            warnings: Vec::new(),
            errors: Vec::new(),
            checks: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    fn error(&mut self, what: &str, e: impl std::fmt::Display) {
        log::error!("{what}: {e}");
        self.errors.push(format!("{what}: {e}"));
    }

    fn check(&mut self, name: &str, value: f64, rule: impl Into<String>, pass: bool) {
        self.checks.push(Check {
            name: name.into(),
            value,
            rule: rule.into(),
            pass,
        });
    }

    fn result(&mut self, name: &str, v: impl Serialize) {
        self.results
            .insert(name.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn json(&self, name: &str, v: &impl Serialize) -> io::Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
        s.push('\n');
        fs::write(self.dir.join(name), s)
    }

    fn file(&self, name: &str) -> io::Result<io::BufWriter<fs::File>> {
        Ok(io::BufWriter::new(fs::File::create(self.dir.join(name))?))
    }

    /// Two-column (or wider) CSV from rows of numbers.
    fn columns(
        &self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(self.file(name)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(|x| format!("{x:e}")))?;
        }
        w.flush()
    }

    fn finish(self, cfg: &ExperimentConfig, task: Task, start: Instant) -> io::Result<RunManifest> {
        let status = if !self.errors.is_empty() {
            Status::NumericalFailure
        } else if self.checks.iter().any(|c| !c.pass) {
            Status::CheckFailure
        } else {
            Status::Ok
        };
        let manifest = RunManifest {
            run_id: cfg.output.run_id.clone(),
            task,
            status,
            config: cfg.to_value(),
            versions: Versions {
                package: env!("CARGO_PKG_VERSION"),
                scheme: SCHEME_VERSION,
            },
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            warnings: self.warnings,
            errors: self.errors,
            checks: self.checks,
            results: self.results,
            files: inventory(&self.dir)?,
        };
        let mut s = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        s.push('\n');
        fs::write(self.dir.join(MANIFEST), s)?;
        Ok(manifest)
    }
}

fn sha256_file(path: &Path) -> io::Result<(u64, String)> {
    let bytes = fs::read(path)?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

/// Every file below `dir` except the top-level manifest, sorted by path.
pub fn inventory(dir: &Path) -> io::Result<Vec<FileEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> io::Result<()> {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).map_err(io::Error::other)?;
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                if rel == MANIFEST {
                    continue;
                }
                let (bytes, sha256) = sha256_file(&p)?;
                out.push(FileEntry {
                    path: rel,
                    bytes,
                    sha256,
                });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Run every analysis the config requests.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> io::Result<RunManifest> {
    run_task(cfg, Task::Simulate, dir)
}

/// Run one task, writing outputs and the manifest into `dir`.
///
/// I/O failures are returned; numerical failures are recorded in the manifest.
pub fn run_task(cfg: &ExperimentConfig, task: Task, dir: &Path) -> io::Result<RunManifest> {
    if task == Task::Sweep {
        return run_sweep(cfg, dir);
    }
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let cfg = task.adjust(cfg);
    let mut ctx = Ctx::new(dir);
    match task {
        Task::Roots => roots(&cfg, &mut ctx)?,
        Task::Wave => {
            bistable(&cfg, &mut ctx)?;
        }
        Task::SupersubVerify | Task::CertifyInvasion => supersub(&cfg, &mut ctx)?,
        Task::Simulate | Task::Bramson | Task::Terrace | Task::Sweep => simulation(&cfg, &mut ctx)?,
    }
    ctx.finish(&cfg, task, start)
}

fn roots(cfg: &ExperimentConfig, ctx: &mut Ctx) -> io::Result<()> {
    let m = &cfg.model;
    match canonical_speeds(m) {
        Ok(s) => ctx.result("speeds", s),
        Err(e) => ctx.error("speeds", e),
    }
    if m.is_strong_competition() {
        if let Ok(p) = cuv_sign_prediction(m) {
            ctx.result("sign_prediction", p);
        }
        match solve_bistable_wave(m, &cfg.wave)
            .and_then(|w| char_roots(m, w.speed).map(|r| (w.speed, r)))
        {
            Ok((c, r)) => {
                ctx.result("c_uv", c);
                ctx.result("roots", r);
                ctx.json("roots.json", &json!({"c_uv": c, "roots": r}))?;
            }
            Err(e) => ctx.error("roots", e),
        }
    } else {
        ctx.warnings
            .push("weak competition: no bistable front, roots skipped".into());
    }
    Ok(())
}

fn bistable(cfg: &ExperimentConfig, ctx: &mut Ctx) -> io::Result<Option<WaveProfile>> {
    match solve_bistable_wave(&cfg.model, &cfg.wave) {
        Ok(w) => {
            ctx.result("c_uv", w.speed);
            if let Ok(p) = cuv_sign_prediction(&cfg.model) {
                ctx.result("sign_prediction", p);
            }
            w.write_csv(ctx.file("wave.csv")?)?;
            ctx.json("wave.json", &w.metadata())?;
            Ok(Some(w))
        }
        Err(e) => {
            ctx.error("bistable front", e);
            Ok(None)
        }
    }
}

fn supersub(cfg: &ExperimentConfig, ctx: &mut Ctx) -> io::Result<()> {
    let Some(ssp) = cfg.supersub else {
        ctx.error("supersub", "no [supersub] section");
        return Ok(());
    };
    let wave = match (ssp.family, ssp.epsilon) {
        (Family::AppendixLower, Some(eps)) => solve_perturbed_wave(&cfg.model, eps, &cfg.wave),
        _ => solve_bistable_wave(&cfg.model, &cfg.wave),
    };
    let wave = match wave {
        Ok(w) => w,
        Err(e) => {
            ctx.error("supersub front", e);
            return Ok(());
        }
    };
    let pair = match build_pair(&cfg.model, &wave, &ssp) {
        Ok(p) => p,
        Err(e) => {
            ctx.error("supersub pair", e);
            return Ok(());
        }
    };
    let report = match evaluate_residuals(&pair, &cfg.lattice, cfg.output.exec) {
        Ok(r) => r,
        Err(e) => {
            ctx.error("residuals", e);
            return Ok(());
        }
    };
    ctx.json("residuals.json", &report)?;
    ctx.result("residual_violations", report.violations);
    ctx.result("t_star", report.t_star);
    ctx.result("constraints_pass", report.constraints.pass);
    ctx.check(
        "residuals.t_star",
        report.t_star.unwrap_or(f64::INFINITY),
        "finite: no sign violation from some lattice time on",
        report.t_star.is_some(),
    );
    if !report.fd_check.within_budget {
        ctx.warnings
            .push("finite-difference cross-check of the residuals exceeded its budget".into());
    }
    if cfg.analysis.certificate {
        let cert = make_initial(&cfg.grid, &cfg.ic)
            .and_then(|init| invasion_certificate(&init, &cfg.grid, &pair, &report));
        match cert {
            Ok(c) => {
                ctx.json("certificate.json", &c)?;
                ctx.result("certificate", c);
                ctx.check(
                    "certificate.holds",
                    c.margin,
                    "initial data dominate the validated lower pair",
                    c.holds,
                );
            }
            Err(e) => ctx.error("certificate", e),
        }
    }
    Ok(())
}

fn in_window(t: f64, w: Option<(f64, f64)>) -> bool {
    w.is_some_and(|(a, b)| t >= a - 1e-9 && t <= b + 1e-9)
}

/// Everything computed while the PDE runs.
struct Monitor<'a> {
    grid: &'a Grid,
    u_trace: FrontTrace,
    v_trace: FrontTrace,
    wave: Option<&'a WaveProfile>,
    shift_window: Option<(f64, f64)>,
    shift_half_width: f64,
    shifts: Vec<ShiftEstimate>,
    shift_errors: Vec<String>,
    seg_c: Option<f64>,
    seg: (Vec<f64>, Vec<f64>, bool),
    ext: (Vec<f64>, Vec<f64>),
    terrace: Option<TerraceMonitor>,
    snapshot_times: Vec<f64>,
    snapshots: Vec<FieldState>,
}

impl Monitor<'_> {
    fn push(&mut self, s: &FieldState) {
        self.u_trace.push(s, self.grid);
        self.v_trace.push(s, self.grid);
        if let (true, Some(w)) = (in_window(s.t, self.shift_window), self.wave) {
            match self.u_trace.positions_max.last().copied().flatten() {
                Some(xf) => match estimate_shift(s, self.grid, w, xf, self.shift_half_width) {
                    Ok(e) => self.shifts.push(e),
                    Err(e) => self.shift_errors.push(format!("t = {}: {e}", s.t)),
                },
                None => self.shift_errors.push(format!("t = {}: no u front", s.t)),
            }
        }
        if let Some(c) = self.seg_c {
            let (v, cut) = segregation_value(s, self.grid, c);
            self.seg.0.push(s.t);
            self.seg.1.push(v);
            self.seg.2 |= cut;
        }
        self.ext.0.push(s.t);
        self.ext.1.push(sup_positive(s, self.grid, Species::V));
        if let Some(m) = &mut self.terrace {
            m.push(s, self.grid);
        }
        if self.snapshot_times.iter().any(|&t| (t - s.t).abs() < 1e-9) {
            self.snapshots.push(s.clone());
        }
    }
}

fn write_state(ctx: &Ctx, name: &str, grid: &Grid, s: &FieldState) -> io::Result<()> {
    ctx.columns(
        name,
        &["x", "u", "v"],
        (0..grid.n).map(|i| vec![grid.x(i), s.u[i], s.v[i]]),
    )
}

fn rel_err(x: f64, target: f64) -> f64 {
    (x / target - 1.0).abs()
}

fn simulation(cfg: &ExperimentConfig, ctx: &mut Ctx) -> io::Result<()> {
    let m = &cfg.model;
    let a = &cfg.analysis;
    let speeds = match canonical_speeds(m) {
        Ok(s) => s,
        Err(e) => {
            ctx.error("speeds", e);
            return Ok(());
        }
    };
    ctx.result("c_u", speeds.c_u);
    ctx.result("c_v", speeds.c_v);
    let wave = if a.needs_wave() {
        bistable(cfg, ctx)?
    } else {
        None
    };
    let speeds = match &wave {
        Some(w) => speeds.with_cuv(w.speed),
        None => speeds,
    };
    if a.residuals || a.certificate {
        supersub(cfg, ctx)?;
    }
    if cfg.time.t_end <= 0.0 {
        return Ok(());
    }
    let init = match make_initial(&cfg.grid, &cfg.ic) {
        Ok(s) => s,
        Err(e) => {
            ctx.error("initial condition", e);
            return Ok(());
        }
    };
    let terrace = if a.terrace {
        match TerraceMonitor::new(&speeds) {
            Ok(t) => Some(t),
            Err(e) => {
                ctx.error("terrace", e);
                None
            }
        }
    } else {
        None
    };
    let mut times = output_grid(0.0, cfg.time.t_end, cfg.time.output_every);
    times.extend(
        cfg.output
            .snapshot_times
            .iter()
            .filter(|&&t| t >= 0.0 && t <= cfg.time.t_end),
    );
    times.sort_by(f64::total_cmp);
    times.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
    let mut mon = Monitor {
        grid: &cfg.grid,
        u_trace: FrontTrace::new(Species::U, a.level),
        v_trace: FrontTrace::new(Species::V, a.level),
        wave: wave.as_ref(),
        shift_window: a.shift_window,
        shift_half_width: a.shift_half_width,
        shifts: Vec::new(),
        shift_errors: Vec::new(),
        seg_c: a.segregation_factor.zip(speeds.c_uv).map(|(f, c)| f * c),
        seg: (Vec::new(), Vec::new(), false),
        ext: (Vec::new(), Vec::new()),
        terrace,
        snapshot_times: cfg.output.snapshot_times.clone(),
        snapshots: Vec::new(),
    };
    let summary = match simulate_observed(
        m,
        &cfg.grid,
        &init,
        &cfg.time.scheme,
        cfg.time.t_end,
        &times,
        cfg.output.exec,
        |s| mon.push(s),
    ) {
        Ok(s) => s,
        Err(e) => {
            ctx.error("simulation", e);
            return Ok(());
        }
    };
    let last = &summary.final_state;
    ctx.warnings.extend(summary.warnings.iter().cloned());
    ctx.result("steps", summary.steps);
    ctx.result("dt_bound", summary.dt_bound);
    write_state(ctx, "final_state.csv", &cfg.grid, last)?;
    for s in &mon.snapshots {
        write_state(ctx, &format!("snapshot_t{:08.3}.csv", s.t), &cfg.grid, s)?;
    }
    mon.u_trace.write_csv(ctx.file("front_u.csv")?)?;
    mon.v_trace.write_csv(ctx.file("front_v.csv")?)?;

    if let Some(w) = a.speed_window {
        match estimate_speed(&mon.u_trace, Extreme::Max, w) {
            Ok(s) => {
                ctx.result("u_speed", s);
                if let Some(target) = a.expected_speed {
                    let e = rel_err(s.speed, target);
                    ctx.check(
                        "speed.u",
                        s.speed,
                        format!("within {} relative of {target}", a.speed_rel_tol),
                        e <= a.speed_rel_tol,
                    );
                }
            }
            Err(e) => ctx.error("u speed", e),
        }
        if let Ok(s) = estimate_speed(&mon.v_trace, Extreme::Max, w) {
            ctx.result("v_speed", s);
        }
    }

    if let Some(w) = a.bramson_window {
        let c = a.bramson_speed.unwrap_or(speeds.c_u);
        let c_h = discrete_linear_speed(
            m.d,
            m.r,
            cfg.grid.dx(),
            cfg.time.scheme.dt,
            cfg.time.scheme.integrator,
        );
        match fit_bramson(&mon.u_trace, Extreme::Max, c, w, &a.bramson_t0) {
            Ok(f) => {
                f.write_csv(ctx.file("bramson.csv")?)?;
                let discrete = fit_bramson(&mon.u_trace, Extreme::Max, c_h, w, &a.bramson_t0).ok();
                let target = 3.0 * m.d / c;
                ctx.json(
                    "bramson.json",
                    &json!({"fit": f, "target_kappa": target, "discrete_speed": c_h,
                            "kappa_at_discrete_speed": discrete.as_ref().map(|d| d.kappa)}),
                )?;
                ctx.result("kappa", f.kappa);
                ctx.result("kappa_target", target);
                ctx.result("sup_omega", f.sup_omega);
                ctx.result("discrete_speed", c_h);
                ctx.result("kappa_at_discrete_speed", discrete.map(|d| d.kappa));
                if let Some((lo, hi)) = a.kappa_range {
                    ctx.check(
                        "bramson.kappa",
                        f.kappa,
                        format!("in [{lo}, {hi}]"),
                        f.kappa >= lo && f.kappa <= hi,
                    );
                }
            }
            Err(e) => ctx.error("bramson", e),
        }
    }

    if a.shift_window.is_some() && wave.is_some() {
        for e in &mon.shift_errors {
            ctx.error("shift", e);
        }
        ctx.columns(
            "shift.csv",
            &["t", "shift", "distance"],
            mon.shifts.iter().map(|s| vec![s.t, s.shift, s.distance]),
        )?;
        if let Some(fin) = mon.shifts.last() {
            let gap = shift_gap(&mon.shifts);
            let pass_d = fin.distance <= a.tolerance;
            let pass_g = gap < a.tolerance;
            ctx.json(
                "shift.json",
                &json!({"final": fin, "gap": gap, "tolerance": a.tolerance, "converged": pass_d && pass_g, "series": mon.shifts}),
            )?;
            ctx.result("shift", fin.shift);
            ctx.result("shift_distance", fin.distance);
            ctx.result("shift_gap", gap);
            ctx.check(
                "shift.distance",
                fin.distance,
                format!("<= {}", a.tolerance),
                pass_d,
            );
            ctx.check("shift.gap", gap, format!("< {}", a.tolerance), pass_g);
        } else if mon.shift_errors.is_empty() {
            ctx.error("shift", "no output time inside the shift window");
        }
    }

    if mon.seg_c.is_some() {
        let (t, v, cut) = (&mon.seg.0, &mon.seg.1, mon.seg.2);
        ctx.columns(
            "segregation.csv",
            &["t", "metric"],
            t.iter().zip(v).map(|(a, b)| vec![*a, *b]),
        )?;
        if cut {
            ctx.warnings.push("segregation cone leaves the grid".into());
        }
        match segregation_fit(t, v, cut) {
            Ok(d) => {
                ctx.json("segregation.json", &d)?;
                ctx.result("segregation_slope", d.slope);
                ctx.result("segregation_r_squared", d.r_squared);
                ctx.check("segregation.slope", d.slope, "< 0", d.slope < 0.0);
                ctx.check(
                    "segregation.r_squared",
                    d.r_squared,
                    format!("> {}", a.min_r_squared),
                    d.r_squared > a.min_r_squared,
                );
            }
            Err(e) => ctx.error("segregation", e),
        }
    }

    if let Some(w) = a.extinction_window {
        let (t, v) = (&mon.ext.0, &mon.ext.1);
        ctx.columns(
            "extinction_v.csv",
            &["t", "sup_v"],
            t.iter().zip(v).map(|(a, b)| vec![*a, *b]),
        )?;
        match log_linear_decay(t, v, w, DECAY_FLOOR) {
            Ok(d) => {
                ctx.json("extinction_v.json", &d)?;
                ctx.result("extinction_slope", d.slope);
                ctx.result("extinction_r_squared", d.r_squared);
                ctx.check("extinction.slope", d.slope, "< 0", d.slope < 0.0);
                ctx.check(
                    "extinction.r_squared",
                    d.r_squared,
                    format!("> {}", a.min_r_squared),
                    d.r_squared > a.min_r_squared,
                );
            }
            Err(e) => ctx.error("extinction", e),
        }
    }

    if a.kpp_alignment {
        let c = speeds.c_u;
        let aligned = solve_kpp_profile(m.d, m.r, c, &cfg.wave).and_then(|k| {
            let xf = mon
                .u_trace
                .positions_max
                .last()
                .copied()
                .flatten()
                .ok_or_else(|| Error::Precondition("no u front at the final time".into()))?;
            let t = last.t;
            let offset = c * t - 3.0 * m.d / c * t.ln();
            let hw = a.kpp_half_width;
            align_profile(
                last,
                &cfg.grid,
                &k,
                offset,
                (xf - hw, xf + hw),
                xf - offset - k.phase_anchor,
                6.0,
            )
        });
        match aligned {
            Ok(s) => {
                ctx.json("kpp_alignment.json", &s)?;
                ctx.result("kpp_distance", s.distance);
                ctx.check(
                    "kpp.distance",
                    s.distance,
                    format!("<= {}", a.tolerance),
                    s.distance <= a.tolerance,
                );
            }
            Err(e) => ctx.error("kpp alignment", e),
        }
    }

    if let (Some(tm), Some(w)) = (mon.terrace, wave.as_ref()) {
        let kpp_v = solve_kpp_profile(1.0, 1.0, 2.0, &cfg.wave).map(|k| k.into_v_component());
        if let Err(e) = &kpp_v {
            ctx.warnings
                .push(format!("terrace: KPP profile for v unavailable: {e}"));
        }
        match tm.finish(last, &cfg.grid, w, kpp_v.as_ref().ok()) {
            Ok(r) => {
                ctx.json("terrace.json", &r)?;
                let c_uv = r.c_uv;
                ctx.check(
                    "terrace.detected",
                    r.terrace as u8 as f64,
                    "two separated fronts with ordered speeds",
                    r.terrace,
                );
                let us = r.u_speed.map_or(f64::NAN, |s| s.speed);
                let vs = r.v_speed.map_or(f64::NAN, |s| s.speed);
                let tol = a.speed_rel_tol;
                ctx.check(
                    "terrace.u_speed",
                    us,
                    format!("within {tol} relative of c_uv = {c_uv}"),
                    rel_err(us, c_uv) <= tol,
                );
                ctx.check(
                    "terrace.v_speed",
                    vs,
                    format!("within {tol} relative of c_v = 2"),
                    rel_err(vs, 2.0) <= tol,
                );
                ctx.check(
                    "terrace.u_beyond",
                    r.u_beyond_midpoint,
                    format!("< {} beyond c_0 t", a.beyond_tol),
                    r.u_beyond_midpoint < a.beyond_tol,
                );
                ctx.result("terrace", r);
            }
            Err(e) => ctx.error("terrace", e),
        }
    }
    Ok(())
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub row: usize,
    pub d: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub c_u: f64,
    pub c_v: f64,
    pub c_uv: Option<f64>,
    pub sign_prediction: Option<Verdict>,
    pub u_speed: Option<f64>,
    pub v_speed: Option<f64>,
    pub kappa: Option<f64>,
    pub checks_passed: usize,
    pub checks_total: usize,
    pub status: String,
    pub error: String,
}

/// Parameter sets of a sweep, in row order.
pub fn sweep_rows(cfg: &ExperimentConfig) -> Vec<crate::model::ModelParams> {
    let Some(sw) = &cfg.sweep else {
        return Vec::new();
    };
    if sw.samples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.output.seed);
        return (0..sw.samples)
            .map(|_| {
                let mut p = cfg.model;
                for (k, v) in &sw.axes {
                    let x = if v[1] > v[0] {
                        rng.random_range(v[0]..v[1])
                    } else {
                        v[0]
                    };
                    k.set(&mut p, x);
                }
                p
            })
            .collect();
    }
    let mut rows = vec![cfg.model];
    if sw.axes.is_empty() {
        return Vec::new();
    }
    for (k, vals) in &sw.axes {
        rows = rows
            .iter()
            .flat_map(|p| {
                vals.iter().map(move |&x| {
                    let mut q = *p;
                    k.set(&mut q, x);
                    q
                })
            })
            .collect();
    }
    rows
}

fn sweep_row(
    cfg: &ExperimentConfig,
    k: usize,
    p: crate::model::ModelParams,
    dir: &Path,
    inner: Exec,
) -> io::Result<SweepRow> {
    let mut row = SweepRow {
        row: k,
        d: p.d,
        r: p.r,
        a: p.a,
        b: p.b,
        c_u: p.c_u(),
        c_v: 2.0,
        c_uv: None,
        sign_prediction: None,
        u_speed: None,
        v_speed: None,
        kappa: None,
        checks_passed: 0,
        checks_total: 0,
        status: "ok".into(),
        error: String::new(),
    };
    let mut rc = cfg.clone();
    rc.model = p;
    rc.sweep = None;
    rc.output.exec = inner;
    rc.output.run_id = format!("{}-row{k:05}", cfg.output.run_id);
    if let Err(e) = rc.validate() {
        row.status = "config_error".into();
        row.error =
            e.0.iter()
                .map(|i| format!("{}: {}", i.key, i.message))
                .collect::<Vec<_>>()
                .join("; ");
        return Ok(row);
    }
    if p.is_strong_competition() {
        row.sign_prediction = cuv_sign_prediction(&p).ok().map(|s| s.verdict);
        match solve_bistable_wave(&p, &rc.wave) {
            Ok(w) => row.c_uv = Some(w.speed),
            Err(e) => {
                row.status = "numerical_failure".into();
                row.error = e.to_string();
            }
        }
    }
    let simulate = cfg.sweep.as_ref().is_some_and(|s| s.simulate);
    if simulate {
        let m = run_experiment(&rc, &dir.join(format!("row_{k:05}")))?;
        let num = |key: &str| {
            m.results
                .get(key)
                .and_then(|v| v.get("speed").or(Some(v)))
                .and_then(Value::as_f64)
        };
        row.u_speed = num("u_speed");
        row.v_speed = num("v_speed");
        row.kappa = num("kappa");
        row.checks_total = m.checks.len();
        row.checks_passed = m.checks.iter().filter(|c| c.pass).count();
        if m.status != Status::Ok {
            row.status = match m.status {
                Status::NumericalFailure => "numerical_failure".into(),
                _ => "check_failure".into(),
            };
            row.error = m.errors.join("; ");
        }
    }
    Ok(row)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Run every row of `[sweep]` and write `sweep.csv` plus the manifest.
///
/// Rows run concurrently in isolated `row_NNNNN` directories; a failing row is
/// recorded in its CSV line and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> io::Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let mut ctx = Ctx::new(dir);
    let params = sweep_rows(cfg);
    let inner = if cfg.output.exec.is_parallel() {
        Exec::Sequential
    } else {
        cfg.output.exec
    };
    let rows = par::map_indexed(cfg.output.exec, params.len(), |k| {
        sweep_row(cfg, k, params[k], dir, inner)
    });
    let rows = rows.into_iter().collect::<io::Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(ctx.file("sweep.csv")?);
    w.write_record([
        "row",
        "d",
        "r",
        "a",
        "b",
        "c_u",
        "c_v",
        "c_uv",
        "sign_prediction",
        "u_speed",
        "v_speed",
        "kappa",
        "checks_passed",
        "checks_total",
        "status",
        "error",
    ])?;
    for r in &rows {
        w.write_record([
            r.row.to_string(),
            format!("{:e}", r.d),
            format!("{:e}", r.r),
            format!("{:e}", r.a),
            format!("{:e}", r.b),
            format!("{:e}", r.c_u),
            format!("{:e}", r.c_v),
            opt(r.c_uv),
            r.sign_prediction
                .map(|v| format!("{v:?}"))
                .unwrap_or_default(),
            opt(r.u_speed),
            opt(r.v_speed),
            opt(r.kappa),
            r.checks_passed.to_string(),
            r.checks_total.to_string(),
            r.status.clone(),
            r.error.clone(),
        ])?;
    }
    w.flush()?;
    drop(w);
    for r in &rows {
        if r.status != "ok" {
            ctx.warnings
                .push(format!("row {}: {} {}", r.row, r.status, r.error));
        }
    }
    ctx.result("rows", rows.len());
    ctx.result(
        "failed_rows",
        rows.iter().filter(|r| r.status != "ok").count(),
    );
    let keys: Vec<&str> = cfg
        .sweep
        .iter()
        .flat_map(|s| s.axes.iter().map(|a| a.0.name()))
        .collect();
    ctx.result("axes", keys);
    ctx.finish(cfg, Task::Sweep, start)
}
