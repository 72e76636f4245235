//! Named parameter tensors.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::{lit, Matrix, Real};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named tensors. Registration order is the canonical
/// order used for serialization and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Matrix<T>) -> Result<ParamId, Error> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Zero tensors with the same shapes, used for gradients and moments.
    pub fn zeros_like(&self) -> Vec<Matrix<T>> {
        self.tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Standard deviation for weight matrices.
pub const INIT_STD: f64 = 0.02;

/// Declares parameters once for two uses: creating them in a fresh store, or
/// resolving them by name (with shape checks) in a store loaded from disk.
pub enum ParamBuilder<'a, T: Real, R: Rng + ?Sized> {
    Init {
        store: &'a mut ParamStore<T>,
        rng: &'a mut R,
    },
    Resolve {
        store: &'a ParamStore<T>,
    },
}

impl<T: Real, R: Rng + ?Sized> ParamBuilder<'_, T, R> {
    pub fn param(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId, Error> {
        match self {
            ParamBuilder::Init { store, rng } => {
                let value = match init {
                    Init::Normal(std) => normal_matrix(rows, cols, std, *rng),
                    Init::Zeros => Matrix::zeros(rows, cols),
                    Init::Ones => Matrix::filled(rows, cols, T::one()),
                };
                store.insert(name, value)
            }
            ParamBuilder::Resolve { store } => {
                let id = store
                    .id(name)
                    .ok_or_else(|| Error::MissingParam(name.to_string()))?;
                if store.get(id).shape() != (rows, cols) {
                    return Err(Error::Shape("stored parameter has unexpected shape"));
                }
                Ok(id)
            }
        }
    }
}

/// Normal(0, std) initialisation via Box-Muller.
pub fn normal_matrix<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Matrix<T> {
    let mut data = Vec::with_capacity(rows * cols);
    while data.len() < rows * cols {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = core::f64::consts::TAU * u2;
        data.push(lit(std * radius * libm::cos(theta)));
        if data.len() < rows * cols {
            data.push(lit(std * radius * libm::sin(theta)));
        }
    }
    Matrix::from_vec(rows, cols, data)
}
