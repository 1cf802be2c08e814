//! Analytic potential recipes: `gaussian(c, w, a)`, `power(a, r0[, amp])`,
//! `bump(radius[, amp[, c]])`, `const(v)`, `file(path)`, and sums joined by `+`.
//!
//! A centre `c` is either a scalar (the same value on every axis) or colon-separated
//! coordinates such as `0.1:0:-0.2`.

use cgolab::fieldgrid::{bump, GridField, GridSpec};
use cgolab::Vec3;
use std::path::{Path, PathBuf};

/// Gaussians are cut to zero beyond this many widths.
pub const GAUSSIAN_CUTOFF: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Gaussian { centre: Vec3, width: f64, amp: f64 },
    Power { exponent: f64, radius: f64, amp: f64 },
    Bump { radius: f64, amp: f64, centre: Vec3 },
    Const(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub terms: Vec<Term>,
}

fn dist(x: &Vec3, c: &Vec3) -> f64 {
    ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt()
}

impl Term {
    fn eval(&self, x: &Vec3, h: f64) -> f64 {
        match self {
            Term::Gaussian { centre, width, amp } => {
                let r = dist(x, centre);
                if r >= GAUSSIAN_CUTOFF * width {
                    0.0
                } else {
                    amp * (-r * r / (2.0 * width * width)).exp()
                }
            }
            Term::Power { exponent, radius, amp } => {
                let r = dist(x, &[0.0; 3]);
                if r >= *radius {
                    0.0
                } else {
                    amp * r.max(0.5 * h).powf(-exponent)
                }
            }
            Term::Bump { radius, amp, centre } => amp * bump(dist(x, centre), *radius),
            Term::Const(v) => *v,
            Term::File(_) => 0.0,
        }
    }
}

impl Recipe {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text.is_empty() {
            return Err("empty recipe".into());
        }
        let mut terms = Vec::new();
        for part in split_top(text)? {
            terms.push(parse_term(part.trim())?);
        }
        Ok(Self { terms })
    }

    /// Paths of `file(...)` terms.
    pub fn files(&self) -> Vec<&PathBuf> {
        self.terms
            .iter()
            .filter_map(|t| match t {
                Term::File(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    pub fn has_file(&self) -> bool {
        !self.files().is_empty()
    }

    /// Pointwise value of the analytic terms; `h` floors the singularity of `power`.
    pub fn eval(&self, x: &Vec3, h: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(x, h)).sum()
    }

    /// Sample on a periodic grid, adding any field files.
    pub fn to_field(&self, spec: GridSpec) -> cgolab::Result<GridField> {
        let h = spec.h();
        let mut f = GridField::from_real_fn(spec, |x| self.eval(x, h));
        for path in self.files() {
            let g = GridField::load(path)?;
            f = f.add(&g)?;
        }
        Ok(f)
    }

    /// Sample at arbitrary points (mesh nodes); field files are not allowed here.
    pub fn sample(&self, points: impl Iterator<Item = Vec3>, h: f64) -> Result<Vec<f64>, String> {
        if self.has_file() {
            return Err("file() terms can only be sampled on the periodic grid".into());
        }
        Ok(points.map(|x| self.eval(&x, h)).collect())
    }
}

fn split_top(text: &str) -> Result<Vec<&str>, String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(format!("unbalanced ')' in '{text}'"));
                }
            }
            '+' if depth == 0 => {
                parts.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(format!("unbalanced '(' in '{text}'"));
    }
    parts.push(&text[start..]);
    Ok(parts)
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("malformed number '{}'", s.trim()))?;
    if !v.is_finite() {
        return Err(format!("non-finite number '{}'", s.trim()));
    }
    Ok(v)
}

fn point(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => {
            let v = number(parts[0])?;
            Ok([v; 3])
        }
        2 => Ok([number(parts[0])?, number(parts[1])?, 0.0]),
        3 => Ok([number(parts[0])?, number(parts[1])?, number(parts[2])?]),
        _ => Err(format!("malformed point '{s}'")),
    }
}

fn positive(name: &str, v: f64) -> Result<f64, String> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

fn parse_term(t: &str) -> Result<Term, String> {
    let open = t.find('(').ok_or_else(|| format!("expected name(args), got '{t}'"))?;
    if !t.ends_with(')') {
        return Err(format!("expected name(args), got '{t}'"));
    }
    let name = t[..open].trim();
    let inner = &t[open + 1..t.len() - 1];
    let args: Vec<&str> = inner.split(',').map(str::trim).collect();
    let arity = |lo: usize, hi: usize| -> Result<(), String> {
        if args.len() < lo || args.len() > hi {
            Err(format!("{name} takes {lo} to {hi} arguments, got {}", args.len()))
        } else {
            Ok(())
        }
    };
    match name {
        "gaussian" => {
            arity(3, 3)?;
            Ok(Term::Gaussian {
                centre: point(args[0])?,
                width: positive("width", number(args[1])?)?,
                amp: number(args[2])?,
            })
        }
        "power" => {
            arity(2, 3)?;
            Ok(Term::Power {
                exponent: number(args[0])?,
                radius: positive("r0", number(args[1])?)?,
                amp: if args.len() > 2 { number(args[2])? } else { 1.0 },
            })
        }
        "bump" => {
            arity(1, 3)?;
            Ok(Term::Bump {
                radius: positive("radius", number(args[0])?)?,
                amp: if args.len() > 1 { number(args[1])? } else { 1.0 },
                centre: if args.len() > 2 { point(args[2])? } else { [0.0; 3] },
            })
        }
        "const" => {
            arity(1, 1)?;
            Ok(Term::Const(number(args[0])?))
        }
        "file" => {
            arity(1, 1)?;
            if args[0].is_empty() {
                return Err("file() needs a path".into());
            }
            Ok(Term::File(PathBuf::from(args[0])))
        }
        other => Err(format!("unknown recipe '{other}'")),
    }
}

/// Field file with a valid header, used to report header errors at parse time.
pub fn check_file(path: &Path) -> Result<(), String> {
    if !path.exists() {
        return Err(format!("missing file '{}'", path.display()));
    }
    GridField::load(path)
        .map(|_| ())
        .map_err(|e| format!("'{}': {e}", path.display()))
}
