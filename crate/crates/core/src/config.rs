//! Experiment configuration.
//!
//! A config is a set of flat sections with typed keys, written as TOML or as
//! the equivalent JSON object. Every key is optional except the four model
//! parameters. Parsing never stops at the first problem: all issues are
//! collected, each naming the offending key and the rule it breaks.
//!
//! ```toml
//! [model]
//! d = 1.0
//! r = 1.0
//! a = 2.0
//! b = 3.0
//!
//! [grid]            # x_min, x_max, dx, left, right
//! [time]            # t_end, output_every, dt, integrator, flush_below
//! [ic]              # scenario = "A1" | "A2" | "Simple" | "Step" plus its keys
//! [wave]            # bistable front solver settings
//! [analysis]        # which analyses run, their windows and check tolerances
//! [supersub]        # comparison pair for residual checks and certificates
//! [lattice]         # residual lattice
//! [output]          # dir, run_id, seed, exec, snapshot_times
//! [sweep]           # d, r, a, b value lists; samples; simulate
//! ```
//!
//! See `presets/` for complete examples.

use std::fmt;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::model::ModelParams;
use crate::par::Exec;
use crate::pde::{
    make_initial, stability_bound, Boundary, Grid, InitialCondition, Integrator, Scheme,
};
use crate::supersub::{Family, Lattice, SuperSubParams};
use crate::wave::WaveConfig;

/// Largest number of rows a sweep may expand to.
pub const MAX_SWEEP_ROWS: usize = 10_000;

const PRESETS: [(&str, &str); 5] = [
    ("theorem1", include_str!("../presets/theorem1.toml")),
    ("theorem2", include_str!("../presets/theorem2.toml")),
    ("theorem3", include_str!("../presets/theorem3.toml")),
    ("appendix", include_str!("../presets/appendix.toml")),
    ("kpp", include_str!("../presets/kpp.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// Source text of a shipped preset.
pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

/// Every problem found in a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} config error(s):", self.0.len())?;
        for i in &self.0 {
            writeln!(f, "  {}: {}", i.key, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn mentions(&self, needle: &str) -> bool {
        self.0
            .iter()
            .any(|i| i.key.contains(needle) || i.message.contains(needle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeConfig {
    pub t_end: f64,
    pub output_every: f64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    /// Level `m` of the tracked level sets.
    pub level: f64,
    pub speed_window: Option<(f64, f64)>,
    /// Expected `u` front speed; checked to `speed_rel_tol`.
    pub expected_speed: Option<f64>,
    pub bramson_window: Option<(f64, f64)>,
    /// Speed used in the Bramson fit; `c_u` when absent.
    pub bramson_speed: Option<f64>,
    pub bramson_t0: Vec<f64>,
    pub kappa_range: Option<(f64, f64)>,
    pub shift_window: Option<(f64, f64)>,
    pub shift_half_width: f64,
    /// Segregation cone speed as a multiple of `c_uv`.
    pub segregation_factor: Option<f64>,
    pub extinction_window: Option<(f64, f64)>,
    pub kpp_alignment: bool,
    pub kpp_half_width: f64,
    pub terrace: bool,
    pub residuals: bool,
    pub certificate: bool,
    pub tolerance: f64,
    pub min_r_squared: f64,
    pub speed_rel_tol: f64,
    pub beyond_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            level: 0.5,
            speed_window: None,
            expected_speed: None,
            bramson_window: None,
            bramson_speed: None,
            bramson_t0: vec![0.0],
            kappa_range: None,
            shift_window: None,
            shift_half_width: 30.0,
            segregation_factor: None,
            extinction_window: None,
            kpp_alignment: false,
            kpp_half_width: 40.0,
            terrace: false,
            residuals: false,
            certificate: false,
            tolerance: 0.05,
            min_r_squared: 0.9,
            speed_rel_tol: 0.05,
            beyond_tol: 1e-3,
        }
    }
}

impl AnalysisConfig {
    /// True when some analysis needs the bistable front.
    pub fn needs_wave(&self) -> bool {
        self.shift_window.is_some() || self.segregation_factor.is_some() || self.terrace
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub run_id: String,
    pub seed: u64,
    pub exec: Exec,
    pub snapshot_times: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            run_id: "run".into(),
            seed: 0,
            exec: Exec::Parallel,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKey {
    D,
    R,
    A,
    B,
}

impl ModelKey {
    pub const ALL: [ModelKey; 4] = [ModelKey::D, ModelKey::R, ModelKey::A, ModelKey::B];

    pub fn name(self) -> &'static str {
        match self {
            ModelKey::D => "d",
            ModelKey::R => "r",
            ModelKey::A => "a",
            ModelKey::B => "b",
        }
    }

    pub fn get(self, p: &ModelParams) -> f64 {
        match self {
            ModelKey::D => p.d,
            ModelKey::R => p.r,
            ModelKey::A => p.a,
            ModelKey::B => p.b,
        }
    }

    pub fn set(self, p: &mut ModelParams, value: f64) {
        match self {
            ModelKey::D => p.d = value,
            ModelKey::R => p.r = value,
            ModelKey::A => p.a = value,
            ModelKey::B => p.b = value,
        }
    }
}

/// Parameter sweep. With `samples == 0` the rows are the cartesian product of
/// the value lists; otherwise each list is a `[lo, hi]` range and `samples`
/// rows are drawn uniformly with the run seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub axes: Vec<(ModelKey, Vec<f64>)>,
    pub samples: usize,
    /// Run the PDE for every row; otherwise only fronts and roots.
    pub simulate: bool,
}

impl SweepConfig {
    pub fn row_count(&self) -> usize {
        if self.samples > 0 {
            self.samples
        } else if self.axes.is_empty() {
            0
        } else {
            self.axes.iter().map(|a| a.1.len()).product()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub grid: Grid,
    pub time: TimeConfig,
    pub ic: InitialCondition,
    pub wave: WaveConfig,
    pub analysis: AnalysisConfig,
    pub supersub: Option<SuperSubParams>,
    pub lattice: Lattice,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

/// Parse TOML, or JSON when the text starts with `{`, then validate.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let root = to_json(text)?;
    let (cfg, mut issues) = read(&root)?;
    if let Err(more) = cfg.validate() {
        let seen: Vec<String> = issues.iter().map(|i| i.key.clone()).collect();
        issues.extend(more.0.into_iter().filter(|i| !seen.contains(&i.key)));
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(issues))
    }
}

fn to_json(text: &str) -> Result<Value, ConfigErrors> {
    let one = |message: String| {
        ConfigErrors(vec![ConfigIssue {
            key: "<document>".into(),
            message,
        }])
    };
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| one(format!("invalid JSON: {e}")))
    } else {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| one(format!("invalid TOML: {e}")))?;
        serde_json::to_value(table).map_err(|e| one(e.to_string()))
    }
}

struct Reader {
    issues: Vec<ConfigIssue>,
}

/// Keys of one section still to be consumed.
struct Section {
    name: &'static str,
    map: Map<String, Value>,
    present: bool,
}

impl Reader {
    fn issue(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: key.into(),
            message: message.into(),
        });
    }

    fn section(&mut self, root: &mut Map<String, Value>, name: &'static str) -> Section {
        match root.remove(name) {
            None => Section {
                name,
                map: Map::new(),
                present: false,
            },
            Some(Value::Object(map)) => Section {
                name,
                map,
                present: true,
            },
            Some(_) => {
                self.issue(name, "must be a section (table)");
                Section {
                    name,
                    map: Map::new(),
                    present: false,
                }
            }
        }
    }

    fn finish(&mut self, s: Section) {
        for k in s.map.keys() {
            self.issue(format!("{}.{k}", s.name), "unknown key");
        }
    }

    fn raw(&mut self, s: &mut Section, key: &str) -> Option<Value> {
        s.map.remove(key)
    }

    fn number(&mut self, s: &mut Section, key: &str) -> Option<f64> {
        let v = self.raw(s, key)?;
        match v.as_f64() {
            Some(x) => Some(x),
            None => {
                self.issue(
                    format!("{}.{key}", s.name),
                    format!("expected a number, found {v}"),
                );
                None
            }
        }
    }

    fn f64_or(&mut self, s: &mut Section, key: &str, default: f64) -> f64 {
        self.number(s, key).unwrap_or(default)
    }

    fn required(&mut self, s: &mut Section, key: &str) -> f64 {
        let present = s.map.contains_key(key);
        match self.number(s, key) {
            Some(x) => x,
            None => {
                if !present {
                    self.issue(format!("{}.{key}", s.name), "required key is missing");
                }
                f64::NAN
            }
        }
    }

    fn usize_or(&mut self, s: &mut Section, key: &str, default: usize) -> usize {
        match self.raw(s, key) {
            None => default,
            Some(v) => match v.as_u64() {
                Some(n) => n as usize,
                None => {
                    self.issue(
                        format!("{}.{key}", s.name),
                        format!("expected a nonnegative integer, found {v}"),
                    );
                    default
                }
            },
        }
    }

    fn bool_or(&mut self, s: &mut Section, key: &str, default: bool) -> bool {
        match self.raw(s, key) {
            None => default,
            Some(Value::Bool(b)) => b,
            Some(v) => {
                self.issue(
                    format!("{}.{key}", s.name),
                    format!("expected true or false, found {v}"),
                );
                default
            }
        }
    }

    fn string(&mut self, s: &mut Section, key: &str) -> Option<String> {
        match self.raw(s, key)? {
            Value::String(x) => Some(x),
            v => {
                self.issue(
                    format!("{}.{key}", s.name),
                    format!("expected a string, found {v}"),
                );
                None
            }
        }
    }

    fn list(&mut self, s: &mut Section, key: &str) -> Option<Vec<f64>> {
        let v = self.raw(s, key)?;
        let parsed = v
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>());
        if parsed.is_none() {
            self.issue(
                format!("{}.{key}", s.name),
                format!("expected a list of numbers, found {v}"),
            );
        }
        parsed
    }

    fn pair(&mut self, s: &mut Section, key: &str) -> Option<(f64, f64)> {
        let v = self.list(s, key)?;
        if v.len() != 2 {
            self.issue(
                format!("{}.{key}", s.name),
                format!("expected two numbers, found {}", v.len()),
            );
            return None;
        }
        Some((v[0], v[1]))
    }

    fn pair_or(&mut self, s: &mut Section, key: &str, default: (f64, f64)) -> (f64, f64) {
        self.pair(s, key).unwrap_or(default)
    }

    fn choice<T: Copy>(
        &mut self,
        s: &mut Section,
        key: &str,
        options: &[(&str, T)],
        default: T,
    ) -> T {
        let Some(v) = self.string(s, key) else {
            return default;
        };
        match options.iter().find(|o| o.0 == v) {
            Some(o) => o.1,
            None => {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                self.issue(
                    format!("{}.{key}", s.name),
                    format!("unknown value {v:?}; expected one of {names:?}"),
                );
                default
            }
        }
    }
}

const BOUNDARIES: [(&str, Boundary); 2] = [
    ("zero_flux", Boundary::ZeroFlux),
    ("pinned", Boundary::Pinned),
];
const INTEGRATORS: [(&str, Integrator); 2] = [
    ("ssp_rk3", Integrator::SspRk3),
    ("euler", Integrator::Euler),
];
const EXECS: [(&str, Exec); 2] = [
    ("parallel", Exec::Parallel),
    ("sequential", Exec::Sequential),
];
const FAMILIES: [(&str, Family); 5] = [
    ("lower_simple", Family::LowerSimple),
    ("upper_simple", Family::UpperSimple),
    ("upper_two_sided", Family::UpperTwoSided),
    ("lower_two_sided", Family::LowerTwoSided),
    ("appendix_lower", Family::AppendixLower),
];
const SECTIONS: [&str; 10] = [
    "model", "grid", "time", "ic", "wave", "analysis", "supersub", "lattice", "output", "sweep",
];

/// Build a config from its sectioned JSON form without cross-field validation.
pub fn from_value(root: &Value) -> Result<ExperimentConfig, ConfigErrors> {
    match read(root)? {
        (cfg, issues) if issues.is_empty() => Ok(cfg),
        (_, issues) => Err(ConfigErrors(issues)),
    }
}

/// Best-effort config plus every structural issue found on the way.
fn read(root: &Value) -> Result<(ExperimentConfig, Vec<ConfigIssue>), ConfigErrors> {
    let mut rd = Reader { issues: Vec::new() };
    let Some(obj) = root.as_object() else {
        return Err(ConfigErrors(vec![ConfigIssue {
            key: "<document>".into(),
            message: "top level must be a table of sections".into(),
        }]));
    };
    let mut root = obj.clone();

    let mut s = rd.section(&mut root, "model");
    if !s.present {
        rd.issue("model", "required section is missing");
    }
    let model = ModelParams {
        d: rd.required(&mut s, "d"),
        r: rd.required(&mut s, "r"),
        a: rd.required(&mut s, "a"),
        b: rd.required(&mut s, "b"),
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "grid");
    let x_min = rd.f64_or(&mut s, "x_min", -150.0);
    let x_max = rd.f64_or(&mut s, "x_max", 150.0);
    let dx = rd.f64_or(&mut s, "dx", 0.1);
    let left = rd.choice(&mut s, "left", &BOUNDARIES, Boundary::ZeroFlux);
    let right = rd.choice(&mut s, "right", &BOUNDARIES, Boundary::ZeroFlux);
    rd.finish(s);
    let n = if dx > 0.0 && x_max > x_min {
        ((x_max - x_min) / dx).round() as usize + 1
    } else {
        rd.issue("grid.dx", "positivity: need dx > 0 and x_max > x_min");
        3
    };
    let grid = Grid {
        x_min,
        x_max,
        n,
        left,
        right,
    };

    let mut s = rd.section(&mut root, "time");
    let defaults = Scheme::default();
    let time = TimeConfig {
        t_end: rd.f64_or(&mut s, "t_end", 200.0),
        output_every: rd.f64_or(&mut s, "output_every", 1.0),
        scheme: Scheme {
            dt: rd.f64_or(&mut s, "dt", defaults.dt),
            integrator: rd.choice(&mut s, "integrator", &INTEGRATORS, defaults.integrator),
            flush_below: rd.f64_or(&mut s, "flush_below", defaults.flush_below),
        },
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "ic");
    let scenario = rd.string(&mut s, "scenario").unwrap_or_else(|| "A1".into());
    let ic = match scenario.as_str() {
        "A1" => InitialCondition::A1 {
            u_support: rd.pair_or(&mut s, "u_support", (-10.0, 10.0)),
            u_amplitude: rd.f64_or(&mut s, "u_amplitude", 1.0),
            taper: rd.f64_or(&mut s, "taper", 2.0),
            v_background: rd.f64_or(&mut s, "v_background", 1.0),
            v_inside: rd.f64_or(&mut s, "v_inside", 1e-8),
        },
        "A2" => InitialCondition::A2 {
            u_support: rd.pair_or(&mut s, "u_support", (-10.0, 10.0)),
            u_amplitude: rd.f64_or(&mut s, "u_amplitude", 1.0),
            v_support: rd.pair_or(&mut s, "v_support", (-10.0, 10.0)),
            v_amplitude: rd.f64_or(&mut s, "v_amplitude", 1.0),
            taper: rd.f64_or(&mut s, "taper", 2.0),
        },
        "Simple" => InitialCondition::Simple {
            x_u: rd.f64_or(&mut s, "x_u", 0.0),
            x_v: rd.f64_or(&mut s, "x_v", 0.0),
            width: rd.f64_or(&mut s, "width", 2.0),
        },
        "Step" => InitialCondition::Step {
            x0: rd.f64_or(&mut s, "x0", 0.0),
        },
        other => {
            rd.issue(
                "ic.scenario",
                format!("unknown scenario {other:?}; expected A1, A2, Simple or Step"),
            );
            s.map.clear();
            InitialCondition::Step { x0: 0.0 }
        }
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "wave");
    let w = WaveConfig::default();
    let wave = WaveConfig {
        half_width: rd.f64_or(&mut s, "half_width", w.half_width),
        nodes: rd.usize_or(&mut s, "nodes", w.nodes),
        tol: rd.f64_or(&mut s, "tol", w.tol),
        max_newton: rd.usize_or(&mut s, "max_newton", w.max_newton),
        anchor: rd.f64_or(&mut s, "anchor", w.anchor),
        monotone_tol: rd.f64_or(&mut s, "monotone_tol", w.monotone_tol),
        tail_target: rd.f64_or(&mut s, "tail_target", w.tail_target),
        max_widenings: rd.usize_or(&mut s, "max_widenings", w.max_widenings),
        continuation_steps: rd.usize_or(&mut s, "continuation_steps", w.continuation_steps),
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "analysis");
    let a = AnalysisConfig::default();
    let analysis = AnalysisConfig {
        level: rd.f64_or(&mut s, "level", a.level),
        speed_window: rd.pair(&mut s, "speed_window"),
        expected_speed: rd.number(&mut s, "expected_speed"),
        bramson_window: rd.pair(&mut s, "bramson_window"),
        bramson_speed: rd.number(&mut s, "bramson_speed"),
        bramson_t0: rd.list(&mut s, "bramson_t0").unwrap_or(a.bramson_t0),
        kappa_range: rd.pair(&mut s, "kappa_range"),
        shift_window: rd.pair(&mut s, "shift_window"),
        shift_half_width: rd.f64_or(&mut s, "shift_half_width", a.shift_half_width),
        segregation_factor: rd.number(&mut s, "segregation_factor"),
        extinction_window: rd.pair(&mut s, "extinction_window"),
        kpp_alignment: rd.bool_or(&mut s, "kpp_alignment", a.kpp_alignment),
        kpp_half_width: rd.f64_or(&mut s, "kpp_half_width", a.kpp_half_width),
        terrace: rd.bool_or(&mut s, "terrace", a.terrace),
        residuals: rd.bool_or(&mut s, "residuals", a.residuals),
        certificate: rd.bool_or(&mut s, "certificate", a.certificate),
        tolerance: rd.f64_or(&mut s, "tolerance", a.tolerance),
        min_r_squared: rd.f64_or(&mut s, "min_r_squared", a.min_r_squared),
        speed_rel_tol: rd.f64_or(&mut s, "speed_rel_tol", a.speed_rel_tol),
        beyond_tol: rd.f64_or(&mut s, "beyond_tol", a.beyond_tol),
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "supersub");
    let supersub = if s.present {
        if !s.map.contains_key("family") {
            rd.issue("supersub.family", "required key is missing");
        }
        let family = rd.choice(&mut s, "family", &FAMILIES, Family::LowerTwoSided);
        Some(SuperSubParams {
            family,
            p0: rd.required(&mut s, "p0"),
            q0: rd.required(&mut s, "q0"),
            rate: rd.required(&mut s, "rate"),
            shift0: rd.f64_or(&mut s, "shift0", 0.0),
            shift1: rd.required(&mut s, "shift1"),
            epsilon: rd.number(&mut s, "epsilon"),
            center: rd.f64_or(&mut s, "center", 0.0),
        })
    } else {
        None
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "lattice");
    let l = Lattice::default();
    let lattice = Lattice {
        t_min: rd.f64_or(&mut s, "t_min", l.t_min),
        t_max: rd.f64_or(&mut s, "t_max", l.t_max),
        dt: rd.f64_or(&mut s, "dt", l.dt),
        xi_min: rd.f64_or(&mut s, "xi_min", l.xi_min),
        xi_max: rd.f64_or(&mut s, "xi_max", l.xi_max),
        dxi: rd.f64_or(&mut s, "dxi", l.dxi),
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "output");
    let o = OutputConfig::default();
    let output = OutputConfig {
        dir: rd.string(&mut s, "dir"),
        run_id: rd.string(&mut s, "run_id").unwrap_or(o.run_id),
        seed: rd.usize_or(&mut s, "seed", 0) as u64,
        exec: rd.choice(&mut s, "exec", &EXECS, o.exec),
        snapshot_times: rd.list(&mut s, "snapshot_times").unwrap_or_default(),
    };
    rd.finish(s);

    let mut s = rd.section(&mut root, "sweep");
    let sweep = if s.present {
        let mut axes = Vec::new();
        for k in ModelKey::ALL {
            if let Some(v) = rd.list(&mut s, k.name()) {
                axes.push((k, v));
            }
        }
        Some(SweepConfig {
            axes,
            samples: rd.usize_or(&mut s, "samples", 0),
            simulate: rd.bool_or(&mut s, "simulate", true),
        })
    } else {
        None
    };
    rd.finish(s);

    for k in root.keys() {
        let hint = if SECTIONS.contains(&k.as_str()) {
            "duplicate section"
        } else {
            "unknown section"
        };
        rd.issue(k.clone(), hint);
    }

    Ok((
        ExperimentConfig {
            model,
            grid,
            time,
            ic,
            wave,
            analysis,
            supersub,
            lattice,
            output,
            sweep,
        },
        rd.issues,
    ))
}

fn name_of<T: PartialEq>(opts: &[(&'static str, T)], x: T) -> &'static str {
    opts.iter().find(|o| o.1 == x).map(|o| o.0).unwrap_or("")
}

fn window_issue(issues: &mut Vec<ConfigIssue>, key: &str, w: Option<(f64, f64)>, t_end: f64) {
    if let Some((t0, t1)) = w {
        if !(t0 >= 0.0 && t1 > t0 && t1 <= t_end) {
            issues.push(ConfigIssue {
                key: key.into(),
                message: format!("window: need 0 <= t0 < t1 <= t_end = {t_end}, got [{t0}, {t1}]"),
            });
        }
    }
}

impl ExperimentConfig {
    /// Cross-field checks. Each message starts with the name of the rule.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut issues = Vec::new();
        let mut push = |key: &str, message: String| {
            issues.push(ConfigIssue {
                key: key.into(),
                message,
            })
        };
        let m = &self.model;
        for k in ModelKey::ALL {
            let x = k.get(m);
            if !(x.is_finite() && x > 0.0) {
                push(
                    &format!("model.{}", k.name()),
                    format!(
                        "positivity: {} must be a positive number, got {x}",
                        k.name()
                    ),
                );
            }
        }
        let strong = m.a > 1.0 && m.b > 1.0;
        let g = &self.grid;
        if !(g.x_min.is_finite() && g.x_max.is_finite() && g.x_max > g.x_min) {
            push("grid", "ordering: x_min < x_max".into());
        }
        if g.n < 50 {
            push(
                "grid.dx",
                format!("resolution: the grid needs at least 50 nodes, got {}", g.n),
            );
        }
        if self.output.seed > i64::MAX as u64 {
            push(
                "output.seed",
                format!("range: seed must be at most {}", i64::MAX),
            );
        }
        let t = &self.time;
        if !(t.t_end.is_finite() && t.t_end >= 0.0) {
            push(
                "time.t_end",
                format!("positivity: t_end must be nonnegative, got {}", t.t_end),
            );
        }
        if !(t.output_every > 0.0) {
            push(
                "time.output_every",
                "positivity: output_every must be positive".into(),
            );
        }
        if !(t.scheme.flush_below >= 0.0 && t.scheme.flush_below < 1e-100) {
            push(
                "time.flush_below",
                "flush: need 0 <= flush_below < 1e-100".into(),
            );
        }
        let grid_ok = g.n >= 3 && g.x_max > g.x_min;
        if grid_ok {
            match make_initial(g, &self.ic) {
                Err(e) => push("ic", format!("margin rule / initial data: {e}")),
                Ok(init) if m.d > 0.0 && m.r > 0.0 && m.a > 0.0 && m.b > 0.0 => {
                    let um = init.u.iter().fold(1.0f64, |a, &b| a.max(b));
                    let vm = init.v.iter().fold(1.0f64, |a, &b| a.max(b));
                    let bound = stability_bound(m, g, um, vm);
                    if !(t.scheme.dt > 0.0 && t.scheme.dt <= bound) {
                        push(
                            "time.dt",
                            format!(
                                "stability: dt must lie in (0, {bound:.6}], got {}",
                                t.scheme.dt
                            ),
                        );
                    }
                }
                Ok(_) => {}
            }
        }
        let a = &self.analysis;
        if !(a.level > 0.0 && a.level < 1.0) {
            push(
                "analysis.level",
                format!("level: need 0 < level < 1, got {}", a.level),
            );
        }
        if a.expected_speed.is_some() && a.speed_window.is_none() {
            push(
                "analysis.expected_speed",
                "dependency: needs speed_window".into(),
            );
        }
        if a.kappa_range.is_some() && a.bramson_window.is_none() {
            push(
                "analysis.kappa_range",
                "dependency: needs bramson_window".into(),
            );
        }
        if let Some((lo, hi)) = a.kappa_range {
            if !(lo < hi) {
                push("analysis.kappa_range", "ordering: need lo < hi".into());
            }
        }
        if a.needs_wave() && !strong {
            push("analysis", format!("strong competition: shift, segregation and terrace need a > 1 and b > 1, got a = {}, b = {}", m.a, m.b));
        }
        if let Some(f) = a.segregation_factor {
            if !(f > 0.0 && f < 1.0) {
                push(
                    "analysis.segregation_factor",
                    format!("cone: need 0 < factor < 1, got {f}"),
                );
            }
        }
        if a.terrace && !(m.c_u() < 2.0) {
            push(
                "analysis.terrace",
                format!(
                    "speed ordering: a terrace needs c_u = 2 sqrt(rd) < 2, got {}",
                    m.c_u()
                ),
            );
        }
        if a.kpp_alignment && !(m.c_u() > 2.0) {
            push(
                "analysis.kpp_alignment",
                format!(
                    "speed ordering: KPP alignment of u needs c_u > 2, got {}",
                    m.c_u()
                ),
            );
        }
        for (key, x) in [
            ("analysis.tolerance", a.tolerance),
            ("analysis.speed_rel_tol", a.speed_rel_tol),
            ("analysis.beyond_tol", a.beyond_tol),
            ("analysis.shift_half_width", a.shift_half_width),
            ("analysis.kpp_half_width", a.kpp_half_width),
        ] {
            if !(x > 0.0) {
                push(key, format!("positivity: must be positive, got {x}"));
            }
        }
        if (a.residuals || a.certificate) && self.supersub.is_none() {
            push(
                "analysis",
                "dependency: residuals and certificate need a [supersub] section".into(),
            );
        }
        if a.certificate {
            if let Some(ss) = &self.supersub {
                if ss.family != Family::LowerTwoSided {
                    push(
                        "supersub.family",
                        "certificate: the invasion certificate uses lower_two_sided".into(),
                    );
                }
            }
        }
        if let Some(ss) = &self.supersub {
            if ss.family == Family::AppendixLower && ss.epsilon.is_none() {
                push(
                    "supersub.epsilon",
                    "dependency: appendix_lower needs epsilon".into(),
                );
            }
        }
        let l = &self.lattice;
        if !(l.dt > 0.0 && l.dxi > 0.0 && l.t_max >= l.t_min && l.xi_max > l.xi_min) {
            push(
                "lattice",
                "ordering: need dt, dxi > 0, t_max >= t_min and xi_max > xi_min".into(),
            );
        } else if l.times().len() * l.xis().len() > 50_000_000 {
            push("lattice", "size: at most 5e7 lattice points".into());
        }
        for w in self.output.snapshot_times.windows(2) {
            if !(w[1] > w[0]) {
                push(
                    "output.snapshot_times",
                    "ordering: snapshot times must increase".into(),
                );
            }
        }
        if let Some(sw) = &self.sweep {
            let rows = sw.row_count();
            if rows > MAX_SWEEP_ROWS {
                push(
                    "sweep",
                    format!("size: at most {MAX_SWEEP_ROWS} rows, got {rows}"),
                );
            }
            if sw.samples > 0 {
                for (k, v) in &sw.axes {
                    if v.len() != 2 || !(v[0] <= v[1]) {
                        push(
                            &format!("sweep.{}", k.name()),
                            "range: with samples > 0 each axis is [lo, hi]".into(),
                        );
                    }
                }
            }
            for (k, v) in &sw.axes {
                if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    push(
                        &format!("sweep.{}", k.name()),
                        "positivity: sweep values must be positive".into(),
                    );
                }
            }
        }
        window_issue(
            &mut issues,
            "analysis.speed_window",
            a.speed_window,
            t.t_end,
        );
        window_issue(
            &mut issues,
            "analysis.bramson_window",
            a.bramson_window,
            t.t_end,
        );
        window_issue(
            &mut issues,
            "analysis.shift_window",
            a.shift_window,
            t.t_end,
        );
        window_issue(
            &mut issues,
            "analysis.extinction_window",
            a.extinction_window,
            t.t_end,
        );
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(issues))
        }
    }

    /// Sectioned form accepted by [`parse_config`]; used as the manifest echo.
    pub fn to_value(&self) -> Value {
        let mut root = Map::new();
        root.insert(
            "model".into(),
            json!({"d": self.model.d, "r": self.model.r, "a": self.model.a, "b": self.model.b}),
        );
        root.insert(
            "grid".into(),
            json!({
                "x_min": self.grid.x_min,
                "x_max": self.grid.x_max,
                "dx": self.grid.dx(),
                "left": name_of(&BOUNDARIES, self.grid.left),
                "right": name_of(&BOUNDARIES, self.grid.right),
            }),
        );
        root.insert(
            "time".into(),
            json!({
                "t_end": self.time.t_end,
                "output_every": self.time.output_every,
                "dt": self.time.scheme.dt,
                "integrator": name_of(&INTEGRATORS, self.time.scheme.integrator),
                "flush_below": self.time.scheme.flush_below,
            }),
        );
        let ic = match &self.ic {
            InitialCondition::A1 {
                u_support,
                u_amplitude,
                taper,
                v_background,
                v_inside,
            } => {
                json!({"scenario": "A1", "u_support": [u_support.0, u_support.1], "u_amplitude": u_amplitude,
                "taper": taper, "v_background": v_background, "v_inside": v_inside})
            }
            InitialCondition::A2 {
                u_support,
                u_amplitude,
                v_support,
                v_amplitude,
                taper,
            } => {
                json!({"scenario": "A2", "u_support": [u_support.0, u_support.1], "u_amplitude": u_amplitude,
                "v_support": [v_support.0, v_support.1], "v_amplitude": v_amplitude, "taper": taper})
            }
            InitialCondition::Simple { x_u, x_v, width } => {
                json!({"scenario": "Simple", "x_u": x_u, "x_v": x_v, "width": width})
            }
            InitialCondition::Step { x0 } => json!({"scenario": "Step", "x0": x0}),
            InitialCondition::Custom { .. } => json!({"scenario": "Custom"}),
        };
        root.insert("ic".into(), ic);
        root.insert(
            "wave".into(),
            serde_json::to_value(self.wave).unwrap_or(Value::Null),
        );

        let a = &self.analysis;
        let mut an = Map::new();
        let pair = |w: (f64, f64)| json!([w.0, w.1]);
        an.insert("level".into(), json!(a.level));
        let opt_pairs = [
            ("speed_window", a.speed_window),
            ("bramson_window", a.bramson_window),
            ("kappa_range", a.kappa_range),
            ("shift_window", a.shift_window),
            ("extinction_window", a.extinction_window),
        ];
        for (k, w) in opt_pairs {
            if let Some(w) = w {
                an.insert(k.into(), pair(w));
            }
        }
        for (k, x) in [
            ("expected_speed", a.expected_speed),
            ("bramson_speed", a.bramson_speed),
            ("segregation_factor", a.segregation_factor),
        ] {
            if let Some(x) = x {
                an.insert(k.into(), json!(x));
            }
        }
        an.insert("bramson_t0".into(), json!(a.bramson_t0));
        an.insert("shift_half_width".into(), json!(a.shift_half_width));
        an.insert("kpp_alignment".into(), json!(a.kpp_alignment));
        an.insert("kpp_half_width".into(), json!(a.kpp_half_width));
        an.insert("terrace".into(), json!(a.terrace));
        an.insert("residuals".into(), json!(a.residuals));
        an.insert("certificate".into(), json!(a.certificate));
        an.insert("tolerance".into(), json!(a.tolerance));
        an.insert("min_r_squared".into(), json!(a.min_r_squared));
        an.insert("speed_rel_tol".into(), json!(a.speed_rel_tol));
        an.insert("beyond_tol".into(), json!(a.beyond_tol));
        root.insert("analysis".into(), Value::Object(an));

        if let Some(ss) = &self.supersub {
            let mut m = Map::new();
            m.insert("family".into(), json!(ss.family.name()));
            m.insert("p0".into(), json!(ss.p0));
            m.insert("q0".into(), json!(ss.q0));
            m.insert("rate".into(), json!(ss.rate));
            m.insert("shift0".into(), json!(ss.shift0));
            m.insert("shift1".into(), json!(ss.shift1));
            m.insert("center".into(), json!(ss.center));
            if let Some(e) = ss.epsilon {
                m.insert("epsilon".into(), json!(e));
            }
            root.insert("supersub".into(), Value::Object(m));
        }
        root.insert(
            "lattice".into(),
            serde_json::to_value(self.lattice).unwrap_or(Value::Null),
        );
        let mut out = Map::new();
        if let Some(d) = &self.output.dir {
            out.insert("dir".into(), json!(d));
        }
        out.insert("run_id".into(), json!(self.output.run_id));
        out.insert("seed".into(), json!(self.output.seed));
        out.insert("exec".into(), json!(name_of(&EXECS, self.output.exec)));
        out.insert("snapshot_times".into(), json!(self.output.snapshot_times));
        root.insert("output".into(), Value::Object(out));
        if let Some(sw) = &self.sweep {
            let mut m = Map::new();
            for (k, v) in &sw.axes {
                m.insert(k.name().into(), json!(v));
            }
            m.insert("samples".into(), json!(sw.samples));
            m.insert("simulate".into(), json!(sw.simulate));
            root.insert("sweep".into(), Value::Object(m));
        }
        Value::Object(root)
    }

    /// TOML rendering of [`ExperimentConfig::to_value`].
    pub fn to_toml(&self) -> String {
        let v = self.to_value();
        toml::to_string(&v).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nd = 1.0\nr = 1.0\na = 2.0\nb = 3.0\n";

    #[test]
    fn minimal_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.grid.n, 3001);
        assert_eq!(c.time.scheme, Scheme::default());
        assert_eq!(c.analysis, AnalysisConfig::default());
        assert!(c.supersub.is_none() && c.sweep.is_none());
    }

    #[test]
    fn all_errors_collected() {
        let text = "[model]\nd = -1.0\nr = 1.0\na = 2.0\nb = 3.0\nbogus = 1\n[grid]\ndx = \"x\"\n[extra]\n";
        let e = from_value(&to_json(text).unwrap()).unwrap_err();
        assert!(e.mentions("model.bogus"));
        assert!(e.mentions("grid.dx"));
        assert!(e.mentions("extra"));
        let e = parse_config("[model]\nd = -1.0\nr = 1.0\na = 2.0\nb = 3.0\n").unwrap_err();
        assert!(e.mentions("positivity"));
    }

    #[test]
    fn margin_rule_named() {
        let text = format!("{MINIMAL}[grid]\nx_min = -20.0\nx_max = 20.0\n[ic]\nscenario = \"A2\"\nu_support = [-30.0, 30.0]\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.mentions("margin rule"), "{e}");
    }

    #[test]
    fn json_and_toml_agree() {
        let c = parse_config(MINIMAL).unwrap();
        let j = serde_json::to_string(&c.to_value()).unwrap();
        assert_eq!(parse_config(&j).unwrap(), c);
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn presets_parse() {
        for name in preset_names() {
            let c = parse_config(preset(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(parse_config(&c.to_toml()).unwrap(), c, "{name}");
        }
    }
}
