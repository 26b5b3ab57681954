//! Named parameter storage, gradient accumulation and checkpoint files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "OPFUSE-CKPT-1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Copy of the parameters whose names start with one of `prefixes`.
    pub fn subset(&self, prefixes: &[&str]) -> Self {
        Self {
            params: self
                .params
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_MAGIC.to_string(),
            params: self
                .params
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: v.shape().to_vec(),
                            values: v.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if file.format != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("expected format {CHECKPOINT_MAGIC:?}, found {:?}", file.format),
            });
        }
        let mut params = BTreeMap::new();
        for (name, t) in file.params {
            let tensor = Tensor::new(t.shape, t.values).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("{name}: {e}"),
            })?;
            params.insert(name, tensor);
        }
        Ok(Self { params })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    params: BTreeMap<String, StoredTensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Gradient of one parameter binding.
#[derive(Clone, Debug)]
pub enum ParamGrad {
    Dense(Tensor),
    /// Gradient restricted to the listed rows of a rank-2 parameter.
    Rows { rows: Vec<usize>, values: Tensor },
}

/// Dense per-parameter gradient sums, keyed like the store.
#[derive(Clone, Debug, Default)]
pub struct GradBuffer {
    grads: BTreeMap<String, Tensor>,
}

impl GradBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, store: &ParamStore, name: &str, grad: &ParamGrad, scale: f64) -> Result<()> {
        if !self.grads.contains_key(name) {
            let shape = store.get(name)?.shape().to_vec();
            self.grads.insert(name.to_string(), Tensor::zeros(&shape));
        }
        let acc = self.grads.get_mut(name).expect("inserted");
        match grad {
            ParamGrad::Dense(g) => acc.add_scaled(g, scale),
            ParamGrad::Rows { rows, values } => {
                let cols = acc.cols();
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut acc.data_mut()[r * cols..(r + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(values.row_slice(i)) {
                        *d += scale * v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }
}
