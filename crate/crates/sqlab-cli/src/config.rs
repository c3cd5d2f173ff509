//! Run configuration: every field has a default, values come from a key=value
//! file and are then overridden by flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// A real number that prints as `2^e` when it is an exact power of two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dyadic(pub f64);

impl FromStr for Dyadic {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(e) = s.strip_prefix("2^") {
            let e: i32 = e.parse().with_context(|| format!("bad exponent in {s}"))?;
            return Ok(Dyadic(2f64.powi(e)));
        }
        let v: f64 = s.parse().with_context(|| format!("not a number: {s}"))?;
        if !v.is_finite() {
            bail!("not finite: {s}");
        }
        Ok(Dyadic(v))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = self.0;
        if x > 0.0 {
            let e = x.log2().round();
            if 2f64.powi(e as i32) == x {
                return write!(f, "2^{}", e as i32);
            }
        }
        write!(f, "{x}")
    }
}

/// Comma-separated items; `a..b` between powers of two expands to every power
/// of two from a to b, between integers to every integer.
pub fn parse_dyadic_list(s: &str) -> Result<Vec<Dyadic>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (Dyadic, Dyadic) = (a.parse()?, b.parse()?);
            let (ea, eb) = (a.0.log2(), b.0.log2());
            if ea.fract() != 0.0 || eb.fract() != 0.0 {
                bail!("range endpoints must be powers of two: {part}");
            }
            let (ea, eb) = (ea as i32, eb as i32);
            if ea <= eb {
                out.extend((ea..=eb).map(|e| Dyadic(2f64.powi(e))));
            } else {
                out.extend((eb..=ea).rev().map(|e| Dyadic(2f64.powi(e))));
            }
        } else {
            out.push(part.parse()?);
        }
    }
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

pub fn parse_int_list(s: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
            out.extend(a.min(b)..=a.max(b));
        } else {
            out.push(part.parse().with_context(|| format!("not an integer: {part}"))?);
        }
    }
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

/// Counts such as `1e5` are accepted when integral.
pub fn parse_count(s: &str) -> Result<usize> {
    if let Ok(v) = s.trim().parse::<usize>() {
        return Ok(v);
    }
    let v: f64 = s.trim().parse().with_context(|| format!("not a count: {s}"))?;
    if !(v >= 0.0 && v.fract() == 0.0 && v < 1e15) {
        bail!("not a count: {s}");
    }
    Ok(v as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Cover,
    Biortho,
    Overlap,
    Ends,
    Rescale,
    Ratio,
    Kakeya,
    Complex,
    Sweep,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Cover,
        Command::Biortho,
        Command::Overlap,
        Command::Ends,
        Command::Rescale,
        Command::Ratio,
        Command::Kakeya,
        Command::Complex,
        Command::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Cover => "cover",
            Command::Biortho => "biortho",
            Command::Overlap => "overlap",
            Command::Ends => "ends",
            Command::Rescale => "rescale",
            Command::Ratio => "ratio",
            Command::Kakeya => "kakeya",
            Command::Complex => "complex",
            Command::Sweep => "sweep",
        }
    }
}

impl FromStr for Command {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| anyhow!("unknown command {s}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    Curve,
    Cone,
    Complex,
}

impl FromStr for Geometry {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(Geometry::Curve),
            "cone" => Ok(Geometry::Cone),
            "complex" => Ok(Geometry::Complex),
            _ => bail!("unknown geometry {s} (curve, cone, complex)"),
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Curve => "curve",
            Geometry::Cone => "cone",
            Geometry::Complex => "complex",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Occupancy {
    Fraction(f64),
    /// One block, measured against the family made of that block.
    Single,
}

impl FromStr for Occupancy {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "single" {
            return Ok(Occupancy::Single);
        }
        let v: f64 = s.parse().with_context(|| format!("bad occupancy {s}"))?;
        if !(0.0..=1.0).contains(&v) {
            bail!("occupancy {s} outside [0, 1]");
        }
        Ok(Occupancy::Fraction(v))
    }
}

impl fmt::Display for Occupancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Occupancy::Single => f.write_str("single"),
            Occupancy::Fraction(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Target of `sweep`.
    pub of: Option<Command>,
    pub k: Vec<u32>,
    pub delta: Vec<Dyadic>,
    pub r: Vec<Dyadic>,
    /// Centered-plank levels σ; empty means all.
    pub sigma: Vec<Dyadic>,
    /// Sector locations for `rescale`.
    pub m: Vec<Dyadic>,
    pub step: Dyadic,
    pub grid: Option<usize>,
    pub samples: Option<usize>,
    pub trials: Option<usize>,
    pub seed: u64,
    pub c0: f64,
    pub d: f64,
    pub s: Option<f64>,
    pub tol: f64,
    pub c: f64,
    pub occupancy: Occupancy,
    pub geometry: Geometry,
    pub configs: usize,
    pub attempts: Option<usize>,
    pub per_plank: usize,
    pub max_mult: usize,
    pub bound: Option<f64>,
    pub scan_c0: bool,
    pub emit_plot: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Cover,
            of: None,
            k: vec![3],
            delta: vec![Dyadic(2f64.powi(-10))],
            r: vec![Dyadic(8.0)],
            sigma: Vec::new(),
            m: (1..=4).map(|e| Dyadic(2f64.powi(-e))).collect(),
            step: Dyadic(2f64.powi(-8)),
            grid: None,
            samples: None,
            trials: None,
            seed: 1,
            c0: 4.0,
            d: 16.0,
            s: None,
            tol: 4.0,
            c: 0.1,
            occupancy: Occupancy::Fraction(1.0),
            geometry: Geometry::Curve,
            configs: 1000,
            attempts: None,
            per_plank: 32,
            max_mult: 8,
            bound: None,
            scan_c0: false,
            emit_plot: false,
            out: PathBuf::from("out"),
        }
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn parse_opt<T: FromStr>(s: &str) -> Result<Option<T>>
where
    T::Err: Into<anyhow::Error>,
{
    if s == "auto" {
        Ok(None)
    } else {
        s.parse::<T>().map(Some).map_err(Into::into)
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("not a boolean: {s}"),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 27] = [
        "command", "of", "k", "delta", "r", "sigma", "m", "step", "grid", "samples", "trials", "seed", "c0", "D",
        "S", "tol", "c", "occupancy", "geometry", "configs", "attempts", "per_plank", "max_mult", "bound",
        "scan_c0", "emit_plot", "out",
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "command" => self.command.name().to_string(),
            "of" => self.of.map_or("none".to_string(), |c| c.name().to_string()),
            "k" => join(&self.k),
            "delta" => join(&self.delta),
            "r" => join(&self.r),
            "sigma" => {
                if self.sigma.is_empty() {
                    "all".to_string()
                } else {
                    join(&self.sigma)
                }
            }
            "m" => join(&self.m),
            "step" => self.step.to_string(),
            "grid" => opt(&self.grid),
            "samples" => opt(&self.samples),
            "trials" => opt(&self.trials),
            "seed" => self.seed.to_string(),
            "c0" => self.c0.to_string(),
            "D" => self.d.to_string(),
            "S" => opt(&self.s),
            "tol" => self.tol.to_string(),
            "c" => self.c.to_string(),
            "occupancy" => self.occupancy.to_string(),
            "geometry" => self.geometry.to_string(),
            "configs" => self.configs.to_string(),
            "attempts" => opt(&self.attempts),
            "per_plank" => self.per_plank.to_string(),
            "max_mult" => self.max_mult.to_string(),
            "bound" => opt(&self.bound),
            "scan_c0" => self.scan_c0.to_string(),
            "emit_plot" => self.emit_plot.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let ctx = || format!("invalid value for {key}: {v}");
        match key {
            "command" => self.command = v.parse()?,
            "of" => self.of = if v == "none" { None } else { Some(v.parse()?) },
            "k" => self.k = parse_int_list(v).with_context(ctx)?,
            "delta" => self.delta = parse_dyadic_list(v).with_context(ctx)?,
            "r" => self.r = parse_dyadic_list(v).with_context(ctx)?,
            "sigma" => self.sigma = if v == "all" { Vec::new() } else { parse_dyadic_list(v).with_context(ctx)? },
            "m" | "M" => self.m = parse_dyadic_list(v).with_context(ctx)?,
            "step" => self.step = v.parse().with_context(ctx)?,
            "grid" => self.grid = parse_opt(v).with_context(ctx)?,
            "samples" => self.samples = if v == "auto" { None } else { Some(parse_count(v).with_context(ctx)?) },
            "trials" => self.trials = if v == "auto" { None } else { Some(parse_count(v).with_context(ctx)?) },
            "seed" => self.seed = v.parse().with_context(ctx)?,
            "c0" => self.c0 = v.parse().with_context(ctx)?,
            "D" | "d" => self.d = v.parse().with_context(ctx)?,
            "S" | "s" => self.s = parse_opt(v).with_context(ctx)?,
            "tol" => self.tol = v.parse().with_context(ctx)?,
            "c" => self.c = v.parse().with_context(ctx)?,
            "occupancy" => self.occupancy = v.parse().with_context(ctx)?,
            "geometry" => self.geometry = v.parse().with_context(ctx)?,
            "configs" => self.configs = parse_count(v).with_context(ctx)?,
            "attempts" => self.attempts = if v == "auto" { None } else { Some(parse_count(v).with_context(ctx)?) },
            "per_plank" | "per-plank" => self.per_plank = parse_count(v).with_context(ctx)?,
            "max_mult" | "max-mult" => self.max_mult = parse_count(v).with_context(ctx)?,
            "bound" => self.bound = parse_opt(v).with_context(ctx)?,
            "scan_c0" | "scan-c0" => self.scan_c0 = parse_bool(v).with_context(ctx)?,
            "emit_plot" | "emit-plot" => self.emit_plot = parse_bool(v).with_context(ctx)?,
            "out" => self.out = PathBuf::from(v),
            _ => bail!("unknown key {key}"),
        }
        Ok(())
    }

    /// One `key=value` line per field, in [`RunConfig::KEYS`] order.
    pub fn to_kv(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Applies `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", no + 1))?;
            self.set(k.trim(), v).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        Ok(c)
    }
}
