//! Line-oriented `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Parsing validates every line
//! and returns all errors at once, each with its line number. Serialising a parsed
//! config writes the accepted `key=value` lines back in input order.

use crate::recipe::{check_file, Recipe};
use cgolab::fieldgrid::GridSpec;
use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

pub const COMMANDS: [&str; 11] = [
    "multiplier-check",
    "decay-scan",
    "born-solve",
    "ratio-scan",
    "avg-estimate",
    "shell-select",
    "energy",
    "dtn-assemble",
    "boundary-probe",
    "uniqueness-run",
    "accept",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Command,
    Uint,
    PositiveFloat,
    FloatList,
    UintList,
    Recipe,
    Word(&'static [&'static str]),
    Frame,
    Point,
    Path,
}

const KEYS: &[(&str, Kind)] = &[
    ("command", Kind::Command),
    ("seed", Kind::Uint),
    ("grid.dim", Kind::Uint),
    ("grid.n", Kind::Uint),
    ("grid.L", Kind::PositiveFloat),
    ("potential", Kind::Recipe),
    ("potential2", Kind::Recipe),
    ("xi.s", Kind::FloatList),
    ("xi.variant", Kind::Word(&["xi1", "xi2"])),
    ("frame", Kind::Frame),
    ("born.tol", Kind::PositiveFloat),
    ("born.max_iter", Kind::Uint),
    ("kernel.delta_rel", Kind::PositiveFloat),
    ("case", Kind::Word(&["su1", "su2-1", "su2", "su3", "krs", "lem"])),
    ("sobolev.k", Kind::Uint),
    ("ball.r", Kind::PositiveFloat),
    ("avg.R", Kind::FloatList),
    ("avg.k", Kind::FloatList),
    ("avg.p", Kind::PositiveFloat),
    ("avg.estimator", Kind::Word(&["conditional", "plain"])),
    ("mc.samples", Kind::Uint),
    ("dtn.m", Kind::Uint),
    ("dtn.kind", Kind::Word(&["schrodinger", "conductivity"])),
    ("dtn.rule", Kind::Word(&["variational", "one-sided"])),
    ("gamma1", Kind::Recipe),
    ("gamma2", Kind::Recipe),
    ("probe.z", Kind::Point),
    ("probe.steps", Kind::Uint),
    ("theorem", Kind::Word(&["T1", "T2", "T3"])),
    ("directions", Kind::Uint),
    ("criteria", Kind::UintList),
    ("out", Kind::Path),
];

/// A config error tied to its line (0 when the error concerns the whole file).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameChoice {
    Standard,
    Generic(u64),
    Random(u64),
}

impl FrameChoice {
    pub fn frame(&self) -> cgolab::kernel::Frame {
        use cgolab::kernel::Frame;
        use rand::SeedableRng;
        match self {
            FrameChoice::Standard => Frame::standard(),
            FrameChoice::Generic(s) => Frame::generic(*s),
            FrameChoice::Random(s) => Frame::random(&mut rand_chacha::ChaCha8Rng::seed_from_u64(*s)),
        }
    }
}

/// Validated configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    pub seed: u64,
    pub dim: usize,
    pub n: usize,
    pub half_length: f64,
    pub potential: Option<Recipe>,
    pub potential2: Option<Recipe>,
    pub s_list: Vec<f64>,
    pub variant: String,
    pub frame: FrameChoice,
    pub born_tol: f64,
    pub born_max_iter: usize,
    pub delta_rel: f64,
    pub case: String,
    pub sobolev_k: u32,
    pub ball_r: f64,
    pub avg_r: Vec<f64>,
    pub avg_k: Vec<f64>,
    pub avg_p: f64,
    pub estimator: String,
    pub mc_samples: usize,
    pub dtn_m: usize,
    pub dtn_kind: String,
    pub dtn_rule: String,
    pub gamma1: Option<Recipe>,
    pub gamma2: Option<Recipe>,
    pub probe_z: [f64; 3],
    pub probe_steps: usize,
    pub theorem: String,
    pub directions: usize,
    pub criteria: Vec<usize>,
    pub out: Option<PathBuf>,
    /// Accepted lines in input order.
    pub entries: Vec<(String, String)>,
}

impl ExperimentConfig {
    fn defaults(command: String) -> Self {
        Self {
            command,
            seed: 0,
            dim: 3,
            n: 64,
            half_length: 4.0,
            potential: None,
            potential2: None,
            s_list: vec![8.0, 16.0, 32.0, 64.0],
            variant: "xi1".into(),
            frame: FrameChoice::Generic(7),
            born_tol: cgolab::cgo::BornOptions::default().tol,
            born_max_iter: cgolab::cgo::BornOptions::default().max_iter,
            delta_rel: cgolab::kernel::DEFAULT_DELTA_REL,
            case: "su1".into(),
            sobolev_k: 0,
            ball_r: 1.0,
            avg_r: vec![16.0, 32.0, 64.0],
            avg_k: vec![4.0, 16.0, 64.0, 256.0],
            avg_p: 1.0,
            estimator: "conditional".into(),
            mc_samples: 100_000,
            dtn_m: 17,
            dtn_kind: "schrodinger".into(),
            dtn_rule: "variational".into(),
            gamma1: None,
            gamma2: None,
            probe_z: [0.5, 0.5, 0.0],
            probe_steps: 4,
            theorem: "T2".into(),
            directions: 26,
            criteria: (1..=12).collect(),
            out: None,
            entries: Vec::new(),
        }
    }

    /// A config holding only `command=<name>`.
    pub fn for_command(command: &str) -> Result<Self, Vec<ConfigError>> {
        parse_config(&format!("command={command}\n"))
    }

    pub fn grid(&self) -> cgolab::Result<GridSpec> {
        GridSpec::new(self.dim, self.n, self.half_length)
    }

    /// The accepted lines, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Replace or append a key, re-validating the whole config.
    pub fn with(&self, key: &str, value: &str) -> Result<Self, Vec<ConfigError>> {
        let mut entries = self.entries.clone();
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
        let text: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        parse_config(&text)
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(format!("malformed list '{v}'"));
    }
    items
        .iter()
        .map(|s| s.parse::<T>().map_err(|_| format!("malformed number '{s}'")))
        .collect()
}

fn parse_float(v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("malformed number '{v}'")),
    }
}

fn apply(cfg: &mut ExperimentConfig, key: &str, kind: Kind, v: &str) -> Result<(), String> {
    match kind {
        Kind::Command => {
            if v.is_empty() {
                return Err("missing command".into());
            }
            if !COMMANDS.contains(&v) {
                return Err(format!("unknown command '{v}'"));
            }
            cfg.command = v.to_string();
        }
        Kind::Uint => {
            let x: u64 = v.parse().map_err(|_| format!("malformed number '{v}'"))?;
            match key {
                "seed" => cfg.seed = x,
                "grid.dim" => cfg.dim = x as usize,
                "grid.n" => cfg.n = x as usize,
                "born.max_iter" => cfg.born_max_iter = x as usize,
                "sobolev.k" => cfg.sobolev_k = x as u32,
                "mc.samples" => cfg.mc_samples = x as usize,
                "dtn.m" => cfg.dtn_m = x as usize,
                "probe.steps" => cfg.probe_steps = x as usize,
                "directions" => {
                    if x == 0 || x > 26 {
                        return Err(format!("directions must lie in 1..=26, got {x}"));
                    }
                    cfg.directions = x as usize;
                }
                _ => unreachable!(),
            }
        }
        Kind::PositiveFloat => {
            let x = parse_float(v)?;
            if x <= 0.0 {
                return Err(format!("{key} must be positive, got {v}"));
            }
            match key {
                "grid.L" => cfg.half_length = x,
                "born.tol" => cfg.born_tol = x,
                "kernel.delta_rel" => cfg.delta_rel = x,
                "ball.r" => cfg.ball_r = x,
                "avg.p" => cfg.avg_p = x,
                _ => unreachable!(),
            }
        }
        Kind::FloatList => {
            let xs: Vec<f64> = parse_list(v)?;
            if xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(format!("{key} entries must be positive"));
            }
            match key {
                "xi.s" => cfg.s_list = xs,
                "avg.R" => cfg.avg_r = xs,
                "avg.k" => cfg.avg_k = xs,
                _ => unreachable!(),
            }
        }
        Kind::UintList => {
            let xs: Vec<usize> = parse_list(v)?;
            if xs.iter().any(|c| *c == 0 || *c > 12) {
                return Err("criteria must lie in 1..=12".into());
            }
            cfg.criteria = xs;
        }
        Kind::Recipe => {
            let r = Recipe::parse(v)?;
            for path in r.files() {
                check_file(path)?;
            }
            match key {
                "potential" => cfg.potential = Some(r),
                "potential2" => cfg.potential2 = Some(r),
                "gamma1" => cfg.gamma1 = Some(r),
                "gamma2" => cfg.gamma2 = Some(r),
                _ => unreachable!(),
            }
        }
        Kind::Word(allowed) => {
            if !allowed.contains(&v) {
                return Err(format!("{key} must be one of {}, got '{v}'", allowed.join(", ")));
            }
            let s = v.to_string();
            match key {
                "xi.variant" => cfg.variant = s,
                "case" => cfg.case = s,
                "avg.estimator" => cfg.estimator = s,
                "dtn.kind" => cfg.dtn_kind = s,
                "dtn.rule" => cfg.dtn_rule = s,
                "theorem" => cfg.theorem = s,
                _ => unreachable!(),
            }
        }
        Kind::Frame => {
            cfg.frame = match v.split_once(':') {
                None if v == "standard" => FrameChoice::Standard,
                Some(("generic", s)) => FrameChoice::Generic(
                    s.parse().map_err(|_| format!("malformed number '{s}'"))?,
                ),
                Some(("random", s)) => FrameChoice::Random(
                    s.parse().map_err(|_| format!("malformed number '{s}'"))?,
                ),
                _ => return Err(format!("frame must be standard, generic:<seed> or random:<seed>, got '{v}'")),
            };
        }
        Kind::Point => {
            let xs: Vec<f64> = parse_list(v)?;
            if xs.len() != 3 {
                return Err(format!("{key} needs three coordinates"));
            }
            cfg.probe_z = [xs[0], xs[1], xs[2]];
        }
        Kind::Path => {
            if v.is_empty() {
                return Err(format!("{key} is empty"));
            }
            cfg.out = Some(PathBuf::from(v));
        }
    }
    Ok(())
}

/// Parse and validate a config, collecting every error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut cfg = ExperimentConfig::defaults(String::new());
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    let mut command_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            errors.push(ConfigError {
                line,
                message: format!("expected key=value, got '{t}'"),
            });
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(&(_, kind)) = KEYS.iter().find(|(name, _)| *name == k) else {
            errors.push(ConfigError {
                line,
                message: format!("unknown key '{k}'"),
            });
            continue;
        };
        if !seen.insert(k.to_string()) {
            errors.push(ConfigError {
                line,
                message: format!("duplicate key '{k}'"),
            });
            continue;
        }
        if k == "command" {
            command_line = line;
        }
        match apply(&mut cfg, k, kind, v) {
            Ok(()) => cfg.entries.push((k.to_string(), v.to_string())),
            Err(message) => errors.push(ConfigError { line, message }),
        }
    }
    if cfg.command.is_empty() && command_line == 0 {
        errors.push(ConfigError {
            line: 0,
            message: "missing command".into(),
        });
    }
    if let Err(e) = cfg.grid() {
        errors.push(ConfigError {
            line: 0,
            message: e.to_string(),
        });
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}
