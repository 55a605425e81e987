//! Named model registry. Built-in entries are `toy1d` and `transaction`;
//! applications add their own with [`ModelZoo::register`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::transaction::{self, Preset};
use crate::model::{ConstraintSet, Dynamics, ModelSpec, TerminalFunctional};

/// A fully built model: dynamics, reward, constraint and starting point.
#[derive(Clone)]
pub struct ModelInstance {
    pub key: String,
    pub dynamics: Arc<dyn Dynamics>,
    pub terminal: TerminalFunctional,
    pub constraint: ConstraintSet,
    pub x0: Vec<f64>,
    pub params: BTreeMap<String, f64>,
}

impl fmt::Debug for ModelInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelInstance")
            .field("key", &self.key)
            .field("x0", &self.x0)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

pub trait ModelFactory: Send + Sync {
    fn key(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn defaults(&self) -> Vec<(&'static str, f64)>;
    fn presets(&self) -> &'static [&'static str] {
        &[]
    }
    fn build(&self, params: &BTreeMap<String, f64>, preset: Option<&str>) -> Result<ModelInstance>;
}

/// Merges user parameters over the factory defaults, rejecting unknown keys.
pub fn resolve_params(factory: &dyn ModelFactory, given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = factory.defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for (k, v) in given {
        if !out.contains_key(k) {
            let known: Vec<_> = out.keys().cloned().collect();
            return Err(Error::invalid(
                "model.params",
                format!("unknown parameter `{k}` for model `{}` (known: {})", factory.key(), known.join(", ")),
            ));
        }
        if !v.is_finite() {
            return Err(Error::invalid("model.params", format!("`{k}` must be finite")));
        }
        out.insert(k.clone(), *v);
    }
    Ok(out)
}

/// `dX = σ dB + ν dt` in one dimension with reward `−(x_T − 1)²`.
pub struct Toy1d;

impl ModelFactory for Toy1d {
    fn key(&self) -> &'static str {
        "toy1d"
    }
    fn summary(&self) -> &'static str {
        "d=1, mu=0, sigma=1, f=1, U(x) = -(x_T - 1)^2"
    }
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        vec![("x0", 0.0), ("mu", 0.0), ("sigma", 1.0), ("peak", 1.0)]
    }
    fn build(&self, params: &BTreeMap<String, f64>, preset: Option<&str>) -> Result<ModelInstance> {
        if let Some(p) = preset {
            return Err(Error::invalid("model.preset", format!("toy1d has no presets, got `{p}`")));
        }
        let prm = resolve_params(self, params)?;
        let peak = prm["peak"];
        let model = ModelSpec::constant("toy1d", vec![prm["mu"]], vec![prm["sigma"]], vec![1.0])?;
        let constraint = model.constraint_set();
        Ok(ModelInstance {
            key: self.key().into(),
            dynamics: Arc::new(model),
            terminal: TerminalFunctional::markov("neg_sq", move |x| -(x[0] - peak).powi(2)).with_growth(1.0, 2.0),
            constraint,
            x0: vec![prm["x0"]],
            params: prm,
        })
    }
}

/// Perturbed transaction-cost model with exponential utility.
pub struct Transaction;

impl ModelFactory for Transaction {
    fn key(&self) -> &'static str {
        "transaction"
    }
    fn summary(&self) -> &'static str {
        "d=3 proportional transaction costs, eta^p = -1/p, U = -exp(-liquidation)"
    }
    fn defaults(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("lambda", 0.1),
            ("r", 0.0),
            ("m", 0.05),
            ("sigma", 0.2),
            ("p", 4.0),
            ("x1", 1.0),
            ("x2", 0.0),
            ("x3", 0.0),
        ]
    }
    fn presets(&self) -> &'static [&'static str] {
        &["constant", "running_max"]
    }
    fn build(&self, params: &BTreeMap<String, f64>, preset: Option<&str>) -> Result<ModelInstance> {
        let prm = resolve_params(self, params)?;
        let preset = Preset::parse(preset.unwrap_or("constant"))?;
        let (r, m, s) = preset.coefficients(prm["r"], prm["m"], prm["sigma"]);
        let tm = transaction::build_transaction_model(prm["lambda"], r, m, s, prm["p"], transaction::exponential_utility())?;
        Ok(ModelInstance {
            key: self.key().into(),
            constraint: tm.model.constraint_set(),
            dynamics: Arc::new(tm.model),
            terminal: tm.terminal,
            x0: vec![prm["x1"], prm["x2"], prm["x3"]],
            params: prm,
        })
    }
}

pub struct ModelZoo {
    factories: Vec<Box<dyn ModelFactory>>,
}

impl Default for ModelZoo {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl ModelZoo {
    pub fn empty() -> Self {
        Self { factories: Vec::new() }
    }

    pub fn with_builtin() -> Self {
        let mut zoo = Self::empty();
        zoo.register(Box::new(Toy1d));
        zoo.register(Box::new(Transaction));
        zoo
    }

    /// Adds a factory; a later registration under an existing key replaces it.
    pub fn register(&mut self, factory: Box<dyn ModelFactory>) {
        self.factories.retain(|f| f.key() != factory.key());
        self.factories.push(factory);
    }

    pub fn get(&self, key: &str) -> Option<&dyn ModelFactory> {
        self.factories.iter().find(|f| f.key() == key).map(|b| b.as_ref())
    }

    pub fn keys(&self) -> Vec<&'static str> {
        self.factories.iter().map(|f| f.key()).collect()
    }

    pub fn build(&self, key: &str, params: &BTreeMap<String, f64>, preset: Option<&str>) -> Result<ModelInstance> {
        let f = self
            .get(key)
            .ok_or_else(|| Error::invalid("model.key", format!("unknown model `{key}` (known: {})", self.keys().join(", "))))?;
        f.build(params, preset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_builtins() {
        let zoo = ModelZoo::with_builtin();
        assert_eq!(zoo.keys(), vec!["toy1d", "transaction"]);
        let toy = zoo.build("toy1d", &BTreeMap::new(), None).unwrap();
        assert_eq!(toy.terminal.eval_state(&[0.0]).unwrap(), -1.0);
        let tx = zoo.build("transaction", &BTreeMap::new(), Some("running_max")).unwrap();
        assert_eq!(tx.x0.len(), 3);
    }

    #[test]
    fn unknown_key_and_param_are_named() {
        let zoo = ModelZoo::with_builtin();
        let err = zoo.build("nope", &BTreeMap::new(), None).unwrap_err().to_string();
        assert!(err.contains("model.key"), "{err}");
        let mut p = BTreeMap::new();
        p.insert("bogus".to_string(), 1.0);
        let err = zoo.build("toy1d", &p, None).unwrap_err().to_string();
        assert!(err.contains("model.params") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn custom_registration() {
        struct Flat;
        impl ModelFactory for Flat {
            fn key(&self) -> &'static str {
                "flat"
            }
            fn summary(&self) -> &'static str {
                "zero model"
            }
            fn defaults(&self) -> Vec<(&'static str, f64)> {
                vec![]
            }
            fn build(&self, _: &BTreeMap<String, f64>, _: Option<&str>) -> Result<ModelInstance> {
                let m = ModelSpec::constant("flat", vec![0.0], vec![0.0], vec![1.0])?;
                Ok(ModelInstance {
                    key: "flat".into(),
                    constraint: m.constraint_set(),
                    dynamics: Arc::new(m),
                    terminal: TerminalFunctional::markov("zero", |_| 0.0),
                    x0: vec![0.0],
                    params: BTreeMap::new(),
                })
            }
        }
        let mut zoo = ModelZoo::with_builtin();
        zoo.register(Box::new(Flat));
        assert!(zoo.build("flat", &BTreeMap::new(), None).is_ok());
    }
}
