//! Dense tensors, a reverse-mode gradient tape, Adam and checkpoints.
//!
//! Everything is generic over [`Float`] so that training runs in `f32` while
//! gradient verification can switch to `f64` without a second code path.

mod adam;
pub mod checkpoint;
mod graph;
pub(crate) mod kernels;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Var};

use crate::error::{Error, Result};

/// Scalar element type of a [`Tensor`].
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn erf(self) -> Self;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Float for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Float for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Dense row-major n-dimensional array with an optional gradient buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape: Vec<usize> = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Parameter("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(vec![n, n], |i| {
            if i / n == i % n {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Marks this tensor as a trainable leaf and allocates a zeroed gradient.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(T::zero());
        }
    }

    /// Adds `delta` into the gradient buffer (sum-based accumulation).
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![delta.len()],
            });
        }
        let n = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (g, d) in g.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn get(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(
                ix < dim,
                "index {ix} out of bounds for axis {i} of size {dim}"
            );
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        assert_eq!(self.rank(), 2, "row() needs a matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&x| U::of(x.as_f64())).collect()),
        }
    }

    /// Copy without the gradient buffer.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients a backward pass computed for `vars` (as returned by
    /// [`Graph::bind`]) into each parameter's buffer.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, vars: &[Var]) -> Result<()> {
        for (tensor, &var) in self.tensors.iter_mut().zip(vars) {
            if let Some(g) = graph.grad(var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
