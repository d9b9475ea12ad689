//! Flat `key=value` configuration with dotted section prefixes.
//!
//! Every key read is recorded together with the value used (defaults
//! included), so records can carry the fully resolved configuration. Keys
//! that were supplied but never read are reported as errors.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use cocycle_core::base::GOLDEN_MEAN;
use cocycle_core::cocycle::{CocycleSpec, Fourier, FourierTerm, Generator, Side};
use cocycle_core::{BasePoint, BaseSystem, Mat2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("{0}: required")]
    Missing(String),
    #[error("{0}: unknown key")]
    Unknown(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl ConfigError {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
    read: RefCell<BTreeSet<String>>,
}

impl Config {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse_text(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::File {
                path: origin.into(),
                message: format!("line {}: expected key=value", i + 1),
            })?;
            cfg.set(k.trim(), v.trim());
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<String> {
        self.read.borrow_mut().insert(key.to_string());
        self.values.get(key).cloned()
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or_else(|| default.to_string());
        self.record(key, v.clone());
        v
    }

    pub fn string(&self, key: &str) -> Result<String, ConfigError> {
        let v = self.raw(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
        self.record(key, v.clone());
        Ok(v)
    }

    pub fn opt_string(&self, key: &str) -> Option<String> {
        let v = self.raw(key)?;
        self.record(key, v.clone());
        Some(v)
    }

    pub fn parse_or<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            Some(v) => {
                let parsed = v.parse().map_err(|_| ConfigError::invalid(key, format!("cannot parse {v:?}")))?;
                self.record(key, v);
                Ok(parsed)
            }
            None => {
                self.record(key, default.to_string());
                Ok(default)
            }
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.string(key)?;
        v.parse().map_err(|_| ConfigError::invalid(key, format!("cannot parse {v:?}")))
    }

    pub fn positive_or<T>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + ToString + PartialOrd + Default,
    {
        let v = self.parse_or(key, default)?;
        if v > T::default() {
            Ok(v)
        } else {
            Err(ConfigError::invalid(key, "must be positive"))
        }
    }

    pub fn floats_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            Some(v) => {
                let out = parse_floats(&v).map_err(|m| ConfigError::invalid(key, m))?;
                self.record(key, v);
                Ok(out)
            }
            None => {
                self.record(key, join(default));
                Ok(default.to_vec())
            }
        }
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.string(key)?;
        parse_floats(&v).map_err(|m| ConfigError::invalid(key, m))
    }

    /// Fails on keys that were supplied but never read.
    pub fn check_unused(&self) -> Result<(), ConfigError> {
        let read = self.read.borrow();
        match self.values.keys().find(|k| !read.contains(*k)) {
            Some(k) => Err(ConfigError::Unknown(k.clone())),
            None => Ok(()),
        }
    }

    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }
}

fn parse_floats(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("cannot parse {s:?} as a number")))
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_matrix(cfg: &Config, key: &str) -> Result<Mat2, ConfigError> {
    let v = cfg.floats(key)?;
    matrix_from(&v).map_err(|m| ConfigError::invalid(key, m))
}

pub fn matrix_from(v: &[f64]) -> Result<Mat2, String> {
    match v {
        [a, b, c, d] if v.iter().all(|x| x.is_finite()) => Ok(Mat2::new(*a, *b, *c, *d)),
        _ => Err("expected four finite entries a,b,c,d".into()),
    }
}

/// The base system under `prefix` (`base`, `base.left`, …).
pub fn base_system(cfg: &Config, prefix: &str) -> Result<BaseSystem, ConfigError> {
    let kind_key = format!("{prefix}.kind");
    let kind = cfg.string_or(&kind_key, "catmap");
    let probs = |cfg: &Config| cfg.floats_or(&format!("{prefix}.probs"), &[0.5, 0.5]);
    let sys = match kind.as_str() {
        "rotation" => BaseSystem::rotation(cfg.parse_or(&format!("{prefix}.omega"), GOLDEN_MEAN)?),
        "catmap" => {
            let key = format!("{prefix}.power");
            let power: u32 = cfg.positive_or(&key, 1)?;
            BaseSystem::CatMap { power }
        }
        "bernoulli" => BaseSystem::bernoulli(probs(cfg)?).map_err(|e| ConfigError::invalid(&format!("{prefix}.probs"), e.to_string()))?,
        "product" => BaseSystem::product(
            base_system(cfg, &format!("{prefix}.left"))?,
            base_system(cfg, &format!("{prefix}.right"))?,
        ),
        "shift-skew" => {
            let p = probs(cfg)?;
            let rot_key = format!("{prefix}.fiber_rotations");
            let default: Vec<f64> = std::iter::once(GOLDEN_MEAN).chain(std::iter::repeat(0.0)).take(p.len()).collect();
            let rots = cfg.floats_or(&rot_key, &default)?;
            BaseSystem::shift_skew(p, rots).map_err(|e| ConfigError::invalid(&rot_key, e.to_string()))?
        }
        other => return Err(ConfigError::invalid(&kind_key, format!("unknown base kind {other:?}"))),
    };
    Ok(sys)
}

fn fourier(cfg: &Config, prefix: &str, default_constant: f64) -> Result<Fourier, ConfigError> {
    let constant = cfg.parse_or(&format!("{prefix}.constant"), default_constant)?;
    let key = format!("{prefix}.terms");
    let mut terms = Vec::new();
    if let Some(v) = cfg.opt_string(&key) {
        for part in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let f: Vec<&str> = part.split(',').map(str::trim).collect();
            let bad = || ConfigError::invalid(&key, format!("term {part:?} must be kx,ky,cos,sin"));
            if f.len() != 4 {
                return Err(bad());
            }
            terms.push(FourierTerm {
                kx: f[0].parse().map_err(|_| bad())?,
                ky: f[1].parse().map_err(|_| bad())?,
                cos: f[2].parse().map_err(|_| bad())?,
                sin: f[3].parse().map_err(|_| bad())?,
            });
        }
    }
    Ok(Fourier { constant, terms })
}

fn count(cfg: &Config, key: &str) -> Result<usize, ConfigError> {
    let n: usize = cfg.parse(key)?;
    if n == 0 {
        return Err(ConfigError::invalid(key, "must be positive"));
    }
    Ok(n)
}

/// The generator under `prefix`; `default_kind` applies when
/// `prefix.kind` is absent.
pub fn generator(cfg: &Config, prefix: &str, default_kind: &str) -> Result<Generator, ConfigError> {
    let kind_key = format!("{prefix}.kind");
    let kind = cfg.string_or(&kind_key, default_kind);
    let sub = |name: &str| generator(cfg, &format!("{prefix}.{name}"), "constant");
    let g = match kind.as_str() {
        "constant" => {
            let key = format!("{prefix}.matrix");
            if cfg.contains(&key) {
                Generator::constant(parse_matrix(cfg, &key)?)
            } else {
                cfg.floats_or(&key, &[1.0, 0.0, 0.0, 1.0])?;
                Generator::constant(Mat2::IDENTITY)
            }
        }
        "rotation" => Generator::Rotation { h: fourier(cfg, prefix, 0.0)? },
        "diagonal" => Generator::Diagonal { g: fourier(cfg, prefix, 0.0)? },
        "shear" => Generator::Shear { h: fourier(cfg, prefix, 0.0)? },
        "winding" => Generator::Winding {
            kx: cfg.parse_or(&format!("{prefix}.kx"), 1)?,
            ky: cfg.parse_or(&format!("{prefix}.ky"), 0)?,
        },
        "coboundary" => Generator::coboundary(sub("conj")?, sub("inner")?),
        "pointwise" => {
            let n = count(cfg, &format!("{prefix}.factors"))?;
            Generator::Pointwise { factors: (0..n).map(|i| sub(&format!("f{i}"))).collect::<Result<_, _>>()? }
        }
        "scaled" => Generator::scaled(fourier(cfg, &format!("{prefix}.log_factor"), 0.0)?, sub("inner")?),
        "lift" => {
            let key = format!("{prefix}.side");
            let side = match cfg.string_or(&key, "left").as_str() {
                "left" => Side::Left,
                "right" => Side::Right,
                other => return Err(ConfigError::invalid(&key, format!("expected left or right, got {other:?}"))),
            };
            Generator::lift(side, sub("inner")?)
        }
        "random-product" => {
            let n = count(cfg, &format!("{prefix}.generators"))?;
            Generator::RandomProduct { generators: (0..n).map(|i| sub(&format!("g{i}"))).collect::<Result<_, _>>()? }
        }
        "projectivized" => Generator::projectivized(sub("inner")?),
        "sl-part" => Generator::sl_part(sub("inner")?),
        other => return Err(ConfigError::invalid(&kind_key, format!("unknown generator kind {other:?}"))),
    };
    Ok(g)
}

/// A point of `sys` from its coordinates, left factor first. Shift
/// coordinates cannot be entered.
pub fn point(sys: &BaseSystem, coords: &[f64]) -> Result<BasePoint, String> {
    fn take(sys: &BaseSystem, c: &mut std::slice::Iter<f64>) -> Result<BasePoint, String> {
        let mut next = || c.next().copied().ok_or_else(|| "too few coordinates".to_string());
        match sys.dynamics() {
            BaseSystem::Rotation { .. } => Ok(BasePoint::circle(next()?)),
            BaseSystem::CatMap { .. } => Ok(BasePoint::torus(next()?, next()?)),
            BaseSystem::Product { left, right } => {
                let l = take(left, c)?;
                let r = take(right, c)?;
                Ok(BasePoint::product(l, r))
            }
            _ => Err(format!("points of a {} system cannot be given explicitly", sys.name())),
        }
    }
    if coords.iter().any(|x| !x.is_finite()) {
        return Err("coordinates must be finite".into());
    }
    let mut it = coords.iter();
    let p = take(sys, &mut it)?;
    if it.next().is_some() {
        return Err("too many coordinates".into());
    }
    Ok(p)
}

/// `x=…` when given, otherwise a seeded sample of the invariant measure.
pub fn point_or_sample(cfg: &Config, key: &str, sys: &BaseSystem, seed: u64) -> Result<BasePoint, ConfigError> {
    match cfg.opt_string(key) {
        Some(v) => {
            let coords = parse_floats(&v).map_err(|m| ConfigError::invalid(key, m))?;
            point(sys, &coords).map_err(|m| ConfigError::invalid(key, m))
        }
        None => {
            cfg.record(key, "sampled".into());
            Ok(cocycle_core::base::sample_measure(sys, seed))
        }
    }
}

/// The cocycle under `cocycle.*`.
pub fn spec(cfg: &Config) -> Result<CocycleSpec, ConfigError> {
    let g = generator(cfg, "cocycle", "constant")?;
    let mut s = CocycleSpec::new(g).with_alpha(cfg.parse_or("cocycle.alpha", 1.0)?);
    if let Some(c) = cfg.opt_string("cocycle.holder_constant") {
        let c: f64 = c.parse().map_err(|_| ConfigError::invalid("cocycle.holder_constant", "cannot parse"))?;
        s = s.with_holder_constant(c);
    }
    s.validate().map_err(|e| ConfigError::invalid("cocycle", e.to_string()))?;
    Ok(s)
}
