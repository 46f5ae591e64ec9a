use std::collections::BTreeMap;

use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Named parameter tensors. Also used for gradients and optimizer moments,
/// which share the parameter names.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Parameters<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Parameters<T> {
    pub fn new() -> Self {
        Parameters {
            tensors: BTreeMap::new(),
        }
    }

    /// Random initialization of every tensor in the architecture manifest.
    ///
    /// Convolution and hidden linear weights are He-uniform, biases zero.
    /// The affine heads start at zero so every block begins unmodulated.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.manifest() {
            let t = if name.ends_with(".bias") || name.contains(".film.gamma") || name.contains(".film.beta") {
                Tensor::zeros(shape)
            } else {
                let fan_in = shape.numel() / shape.batch();
                let bound = if name.starts_with("out.") {
                    (1.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                Tensor::uniform(shape, -bound, bound, rng)
            };
            tensors.insert(name, t);
        }
        Parameters { tensors }
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }

    /// Checks names and shapes against the architecture manifest exactly.
    pub fn check_manifest(&self, config: &ModelConfig) -> Result<()> {
        let manifest = config.manifest();
        for (name, shape) in &manifest {
            let t = self.tensors.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("parameter `{name}` missing from table"))
            })?;
            if t.shape() != *shape {
                return Err(Error::InvalidShape {
                    op: "parameters",
                    detail: format!("`{name}` has shape {:?}, expected {shape:?}", t.shape()),
                });
            }
        }
        if self.tensors.len() != manifest.len() {
            let known: std::collections::HashSet<_> = manifest.iter().map(|(n, _)| n.as_str()).collect();
            let extra: Vec<_> = self.names().filter(|n| !known.contains(n)).collect();
            return Err(Error::InvalidArgument(format!("unexpected parameters: {extra:?}")));
        }
        Ok(())
    }

    /// Records every tensor on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), trainable)))
                .collect(),
        }
    }
}

/// Tape handles for a bound [`Parameters`] table.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gathers gradients by parameter name; unreached parameters get zeros.
    pub fn collect_grads<T: Real>(&self, tape: &Tape<T>, grads: &mut crate::numerics::Grads<T>) -> Parameters<T> {
        let mut out = Parameters::new();
        for (name, v) in &self.vars {
            let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(tape.shape(*v)));
            out.insert(name.clone(), g);
        }
        out
    }
}

