//! Run configuration: `key = value` files merged with command-line flags,
//! and the model/frame pairing that turns a configuration into a system.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::bloch::{constant_of_motion, BlochVector};
use crate::lindblad;
use crate::reduction::reduce_bloch_xz;
use crate::system::{ModelError, PureZ, QuadraticNoise, SdeSystem, Theta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model `{model}` cannot be run in frame `{frame}`")]
    Incompatible { model: String, frame: Frame },
    #[error("initial point {point:?} is not valid in frame `{frame}`: {reason}")]
    Init { point: Vec<f64>, frame: Frame, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Keys accepted in config files and as flags. Underscores are read as
/// hyphens.
pub const KEYS: &[&str] = &[
    "model",
    "frame",
    "gamma",
    "dt",
    "steps",
    "seed",
    "ntraj",
    "init",
    "out",
    "stride",
    "workers",
    "f0",
    "entropy",
    "sys-entropy",
    "traces",
    "bin-width",
    "burn",
    "thin",
    "from-xyz",
    "cells",
    "times",
    "scheme",
    "width",
    "mutate",
    "stepping",
];

fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parse `key = value` lines. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.into() })?;
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Xyz,
    Xz,
    Z,
    Theta,
    /// The native coordinate of dx = x dt + x² dW.
    X,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Xyz => "xyz",
            Frame::Xz => "xz",
            Frame::Z => "z",
            Frame::Theta => "theta",
            Frame::X => "x",
        })
    }
}

impl FromStr for Frame {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "xyz" => Ok(Frame::Xyz),
            "xz" => Ok(Frame::Xz),
            "z" => Ok(Frame::Z),
            "theta" => Ok(Frame::Theta),
            "x" => Ok(Frame::X),
            other => Err(format!("unknown frame `{other}` (xyz, xz, z, theta, x)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub frame: Option<Frame>,
    pub gamma: Option<f64>,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
    pub n_traj: usize,
    pub init: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub stride: u64,
    pub workers: usize,
    /// Remaining command-specific keys.
    pub options: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "raising-lowering".into(),
            frame: None,
            gamma: None,
            dt: 1e-3,
            steps: 10_000,
            seed: 0,
            n_traj: 50,
            init: None,
            out: None,
            stride: 1,
            workers: 0,
            options: BTreeMap::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue { key: key.into(), value: value.into(), reason: e.to_string() })
}

/// Comma-separated floats.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value.split(',').map(|v| parse::<f64>(key, v)).collect()
}

impl RunConfig {
    /// Apply pairs in order, later ones overriding earlier ones.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k.as_ref(), v.as_ref())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = normalize_key(key);
        match key.as_str() {
            "model" => self.model = value.trim().to_string(),
            "frame" => {
                self.frame = Some(value.parse().map_err(|reason| ConfigError::BadValue {
                    key: key.clone(),
                    value: value.into(),
                    reason,
                })?)
            }
            "gamma" => self.gamma = Some(parse(&key, value)?),
            "dt" => self.dt = parse(&key, value)?,
            "steps" => self.steps = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "ntraj" => self.n_traj = parse(&key, value)?,
            "init" => self.init = Some(parse_list(&key, value)?),
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "stride" => self.stride = parse(&key, value)?,
            "workers" => self.workers = parse(&key, value)?,
            k if KEYS.contains(&k) => {
                self.options.insert(key, value.trim().to_string());
            }
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    pub fn option<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.options.get(key).map(|v| parse(key, v)).transpose()
    }

    pub fn option_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.option(key)?.unwrap_or(default))
    }

    /// `true` for `true`, `yes`, `1`; absent means `false`.
    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.options.get(key).map(|s| s.as_str()) {
            None | Some("false" | "no" | "0") => Ok(false),
            Some("true" | "yes" | "1" | "") => Ok(true),
            Some(v) => Err(ConfigError::BadValue { key: key.into(), value: v.into(), reason: "expected a boolean".into() }),
        }
    }

    /// Model name and parameter, with `gamma` filling in a missing
    /// parameter. A parameter given both ways must agree.
    fn model_parts(&self) -> Result<(String, Option<f64>), ConfigError> {
        let (name, param) = match self.model.split_once(':') {
            Some((n, p)) => (n.trim().to_string(), Some(parse::<f64>("model", p)?)),
            None => (self.model.trim().to_string(), None),
        };
        match (param, self.gamma) {
            (Some(p), Some(g)) if p != g => {
                Err(ConfigError::Invalid(format!("model parameter {p} disagrees with --gamma {g}")))
            }
            (p, g) => Ok((name, p.or(g))),
        }
    }

    /// Build the system for the requested model and frame, together with
    /// its initial state.
    pub fn setup(&self) -> Result<Setup, ConfigError> {
        let (name, gamma) = self.model_parts()?;
        let native = match name.as_str() {
            "raising-lowering" | "weighted" => Frame::Xyz,
            "pure-z" => Frame::Z,
            "pure-theta" => Frame::Theta,
            "quadratic-noise" => Frame::X,
            _ => return Err(ModelError::Unknown(name).into()),
        };
        let frame = self.frame.unwrap_or(native);
        let incompatible = || ConfigError::Incompatible { model: self.model.clone(), frame };
        let takes_gamma = matches!(name.as_str(), "weighted" | "pure-z");
        if gamma.is_some() && !takes_gamma {
            return Err(ModelError::UnexpectedParameter { name: name.clone(), param: format!("{}", gamma.unwrap_or(0.0)) }.into());
        }
        let g = gamma.unwrap_or(0.0);
        let bad_gamma = |e: String| ConfigError::Model(ModelError::BadParameter { name: name.clone(), param: g.to_string(), reason: e });
        let init = self.init.clone();
        let check_len = |want: &[usize], p: &[f64]| {
            if want.contains(&p.len()) {
                Ok(())
            } else {
                Err(ConfigError::Init { point: p.to_vec(), frame, reason: format!("expected {want:?} coordinates") })
            }
        };

        let cartesian = match self.option::<String>("stepping")?.as_deref() {
            None | Some("chart") => false,
            Some("cartesian") if frame == Frame::Xyz => true,
            Some("cartesian") => return Err(ConfigError::Invalid("stepping=cartesian applies to the xyz frame".into())),
            Some(other) => {
                return Err(ConfigError::BadValue {
                    key: "stepping".into(),
                    value: other.into(),
                    reason: "expected chart or cartesian".into(),
                })
            }
        };
        let bloch = |sys: lindblad::LindbladBloch| if cartesian { sys.cartesian() } else { sys };

        let (system, initial): (Arc<dyn SdeSystem>, Vec<f64>) = match (name.as_str(), frame) {
            ("raising-lowering", Frame::Xyz) => (Arc::new(bloch(lindblad::raising_lowering())), init.unwrap_or(vec![0.5; 3])),
            ("weighted", Frame::Xyz) => {
                let sys = lindblad::weighted(g).map_err(|e| bad_gamma(e.to_string()))?;
                (Arc::new(bloch(sys)), init.unwrap_or(vec![0.5; 3]))
            }
            ("raising-lowering", Frame::Xz) => {
                let p = init.unwrap_or(vec![0.5, 0.5, 0.5]);
                check_len(&[2, 3], &p)?;
                let (xz, from_point) = if p.len() == 3 {
                    let f = constant_of_motion(BlochVector::from_slice(&p))
                        .map_err(|e| ConfigError::Init { point: p.clone(), frame, reason: e.to_string() })?;
                    ([p[0], p[2]], Some(f))
                } else {
                    ([p[0], p[1]], None)
                };
                let f0 = match (self.option::<f64>("f0")?, from_point) {
                    (Some(f), _) => f,
                    (None, Some(f)) => f,
                    // f at x = y = z = 0.5
                    (None, None) => 2.0,
                };
                if !(f0 > 0.0 && f0.is_finite()) {
                    return Err(ConfigError::Init { point: p, frame, reason: format!("f0 = {f0} must be positive") });
                }
                let red = reduce_bloch_xz(Arc::new(lindblad::raising_lowering()), f0, xz)
                    .map_err(|e| ConfigError::Init { point: p.clone(), frame, reason: e.to_string() })?;
                (Arc::new(red), xz.to_vec())
            }
            ("raising-lowering" | "weighted" | "pure-z", Frame::Z) => {
                (Arc::new(PureZ::new(g).ok_or_else(|| bad_gamma("|gamma| must be below 2".into()))?), init.unwrap_or(vec![0.5]))
            }
            ("raising-lowering" | "pure-theta", Frame::Theta) => (Arc::new(Theta), init.unwrap_or(vec![PI / 3.0])),
            ("quadratic-noise", Frame::X) => (Arc::new(QuadraticNoise), init.unwrap_or(vec![1.0])),
            _ => return Err(incompatible()),
        };
        check_len(&[system.dim()], &initial)?;
        if !system.in_domain(&initial) {
            return Err(ConfigError::Init { point: initial, frame, reason: "outside the model domain".into() });
        }
        Ok(Setup { system, initial, frame })
    }
}

pub struct Setup {
    pub system: Arc<dyn SdeSystem>,
    pub initial: Vec<f64>,
    pub frame: Frame,
}
