//! Name-keyed registry of SDE models.
//!
//! Model strings have the form `name` or `name:parameter`, e.g.
//! `raising-lowering`, `weighted:0.5`, `pure-z:0.5`, `pure-theta`.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::{PureZ, QuadraticNoise, SdeSystem, Theta};
use crate::lindblad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    Unknown(String),
    #[error("model `{name}` takes no parameter, got `{param}`")]
    UnexpectedParameter { name: String, param: String },
    #[error("model `{name}`: bad parameter `{param}`: {reason}")]
    BadParameter { name: String, param: String, reason: String },
}

type Factory = Box<dyn Fn(Option<f64>) -> Result<Arc<dyn SdeSystem>, String> + Send + Sync>;

struct Entry {
    takes_parameter: bool,
    summary: &'static str,
    build: Factory,
}

pub struct ModelRegistry {
    entries: BTreeMap<&'static str, Entry>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("raising-lowering", false, "3-D Bloch SDE, equal raising/lowering", |_| {
            Ok(Arc::new(lindblad::raising_lowering()))
        });
        reg.register("weighted", true, "3-D Bloch SDE, channels weighted 1 -/+ gamma/2", |g| {
            let g = g.unwrap_or(0.0);
            lindblad::weighted(g)
                .map(|s| Arc::new(s) as Arc<dyn SdeSystem>)
                .map_err(|e| e.to_string())
        });
        reg.register("pure-z", true, "1-D pure-state dynamics in z", |g| {
            let g = g.unwrap_or(0.0);
            PureZ::new(g)
                .map(|s| Arc::new(s) as Arc<dyn SdeSystem>)
                .ok_or_else(|| format!("|gamma| = {} must be below 2", g.abs()))
        });
        reg.register("pure-theta", false, "1-D pure-state dynamics in theta", |_| Ok(Arc::new(Theta)));
        reg.register("quadratic-noise", false, "dx = x dt + x^2 dW on x >= 0", |_| {
            Ok(Arc::new(QuadraticNoise))
        });
        reg
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register<F>(&mut self, name: &'static str, takes_parameter: bool, summary: &'static str, build: F)
    where
        F: Fn(Option<f64>) -> Result<Arc<dyn SdeSystem>, String> + Send + Sync + 'static,
    {
        self.entries.insert(name, Entry { takes_parameter, summary, build: Box::new(build) });
    }

    pub fn names(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.entries.iter().map(|(k, e)| (*k, e.summary))
    }

    /// Parse `name[:param]` and build the model.
    pub fn create(&self, model: &str) -> Result<Arc<dyn SdeSystem>, ModelError> {
        let (name, param) = match model.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (model.trim(), None),
        };
        let entry = self.entries.get(name).ok_or_else(|| ModelError::Unknown(name.to_string()))?;
        let value = match param {
            None => None,
            Some(p) if !entry.takes_parameter => {
                return Err(ModelError::UnexpectedParameter { name: name.into(), param: p.into() })
            }
            Some(p) => Some(p.parse::<f64>().map_err(|e| ModelError::BadParameter {
                name: name.into(),
                param: p.into(),
                reason: e.to_string(),
            })?),
        };
        (entry.build)(value).map_err(|reason| ModelError::BadParameter {
            name: name.into(),
            param: param.unwrap_or("").into(),
            reason,
        })
    }
}
