//! Dense 4-D tensors with reverse-mode automatic differentiation.
//!
//! Tensors are `(batch, channel, height, width)` arrays in row-major order.
//! Operations are recorded on a [`Tape`]; calling [`Tape::backward`] on a
//! scalar loss replays the tape in reverse and accumulates gradients into
//! every tensor that requires them. `f32` is the training element type,
//! `f64` exists for gradient checking.

mod adam;
mod conv;
mod gradcheck;
mod rng;
mod tape;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_params};
pub use rng::{kaiming_conv_weight, stream_rng};
pub use tape::Tape;

use std::cell::{Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type of a tensor: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dimensions of a 4-D tensor, `(N, C, H, W)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a scalar result (1,1,1,1).
    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

struct Inner<T> {
    shape: Shape,
    data: RefCell<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
}

/// A reference-counted handle to a tensor value.
///
/// Cloning is cheap and aliases the same storage; the optimizer relies on
/// this to update parameters in place between passes.
pub struct Tensor<T> {
    inner: Rc<Inner<T>>,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={}, requires_grad={})",
            self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn new(data: Vec<T>, shape: Shape, requires_grad: bool) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
            }),
        })
    }

    /// A constant tensor: no gradient is ever accumulated into it.
    pub fn constant(data: Vec<T>, shape: Shape) -> Result<Self> {
        Self::new(data, shape, false)
    }

    /// A leaf tensor that participates in differentiation (a parameter).
    pub fn leaf(data: Vec<T>, shape: Shape) -> Result<Self> {
        Self::new(data, shape, true)
    }

    pub(crate) fn output(data: Vec<T>, shape: Shape, requires_grad: bool) -> Self {
        Self::new(data, shape, requires_grad).expect("op produced mismatched shape")
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::constant(vec![T::zero(); shape.len()], shape).unwrap()
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor::constant(vec![v; shape.len()], shape).unwrap()
    }

    pub fn scalar(v: T) -> Self {
        Tensor::constant(vec![v], Shape::scalar()).unwrap()
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the underlying values.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutably borrow the underlying values (optimizer updates).
    pub(crate) fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    /// Clone the underlying values out.
    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<T> {
        if self.shape() != Shape::scalar() {
            return Err(Error::Contract(format!(
                "item() requires a scalar tensor, got shape {}",
                self.shape()
            )));
        }
        Ok(self.data()[0])
    }

    /// Replace the values in place, keeping shape and identity.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.shape().len() {
            return Err(Error::Dimension(format!(
                "set_data length {} does not match shape {}",
                data.len(),
                self.shape()
            )));
        }
        *self.inner.data.borrow_mut() = data;
        Ok(())
    }

    /// Gradient accumulated by the last backward pass, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `g` into this tensor's gradient accumulator.
    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        debug_assert_eq!(g.len(), self.shape().len());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Identity comparison: do the two handles alias the same storage?
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}
