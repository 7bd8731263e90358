use rand::Rng;

use super::tensor::{ParamStore, Tensor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, fans from a `out × in` matrix.
    Glorot,
    Zeros,
    /// Zeros except the forget-gate slice `[h, 2h)`, which is 1.0.
    LstmBias { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Deterministic initialization: tensors are drawn in lexicographic name
/// order from one seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> ParamStore {
    let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut r = rng::seeded(seed);
    let mut store = ParamStore::new();
    for spec in sorted {
        let mut t = Tensor::zeros(&spec.shape);
        match spec.init {
            Init::Glorot => {
                let rows = spec.shape.first().copied().unwrap_or(1);
                let cols: usize = spec.shape.iter().skip(1).product();
                let s = glorot_bound(rows, cols);
                t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-s..s));
            }
            Init::Zeros => {}
            Init::LstmBias { hidden } => t.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0),
        }
        store.insert(spec.name.clone(), t);
    }
    store
}
