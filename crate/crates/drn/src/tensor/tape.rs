//! The operation tape: forward ops record themselves here, `backward`
//! replays them in reverse.

use std::cell::RefCell;

use super::conv::{conv2d_backward, conv2d_forward, conv_dims, ConvDims};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

enum Op<T> {
    Conv2d {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Tensor<T>,
        dims: ConvDims,
    },
    PixelShuffle {
        x: Tensor<T>,
        r: usize,
    },
    Add {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Sub {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Mul {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Scale {
        x: Tensor<T>,
        k: T,
    },
    Relu {
        x: Tensor<T>,
    },
    Abs {
        x: Tensor<T>,
    },
    Sum {
        x: Tensor<T>,
    },
    Mean {
        x: Tensor<T>,
    },
    FwdDiffX {
        x: Tensor<T>,
    },
    FwdDiffY {
        x: Tensor<T>,
    },
}

struct Node<T> {
    out: Tensor<T>,
    op: Op<T>,
}

/// Wengert list of recorded operations. Inputs of every node precede it,
/// so a single reverse sweep visits each node exactly once.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that records nothing; forward results are identical but no
    /// gradients can be produced. Used for evaluation.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn track(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    fn push(&self, out: &Tensor<T>, op: Op<T>) {
        self.nodes.borrow_mut().push(Node {
            out: out.clone(),
            op,
        });
    }

    fn check_same_shape(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension(format!(
                "{what}: operand shapes {} and {} differ",
                a.shape(),
                b.shape()
            )));
        }
        Ok(())
    }

    /// Cross-correlation of `x` with `w` plus per-channel bias.
    pub fn conv2d(
        &self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let dims = conv_dims(x.shape(), w.shape(), b.shape(), stride, pad)?;
        let data = conv2d_forward(&x.data(), &w.data(), &b.data(), &dims);
        let out = Tensor::output(data, dims.out_shape(), self.track(&[x, w, b]));
        if out.requires_grad() {
            self.push(
                &out,
                Op::Conv2d {
                    x: x.clone(),
                    w: w.clone(),
                    b: b.clone(),
                    dims,
                },
            );
        }
        Ok(out)
    }

    /// Rearrange (N, C*r^2, H, W) into (N, C, H*r, W*r).
    pub fn pixel_shuffle(&self, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
        let s = x.shape();
        if r == 0 {
            return Err(Error::Contract("pixel_shuffle: r must be positive".into()));
        }
        if s.c % (r * r) != 0 {
            return Err(Error::Dimension(format!(
                "pixel_shuffle: channel axis {} is not divisible by r^2 = {}",
                s.c,
                r * r
            )));
        }
        let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
        let xd = x.data();
        let mut data = vec![T::zero(); out_shape.len()];
        for n in 0..s.n {
            for co in 0..out_shape.c {
                for h in 0..s.h {
                    for w in 0..s.w {
                        for i in 0..r {
                            for j in 0..r {
                                let ci = co * r * r + i * r + j;
                                data[out_shape.index(n, co, h * r + i, w * r + j)] =
                                    xd[s.index(n, ci, h, w)];
                            }
                        }
                    }
                }
            }
        }
        drop(xd);
        let out = Tensor::output(data, out_shape, self.track(&[x]));
        if out.requires_grad() {
            self.push(&out, Op::PixelShuffle { x: x.clone(), r });
        }
        Ok(out)
    }

    fn binary(
        &self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(Tensor<T>, Tensor<T>) -> Op<T>,
    ) -> Result<Tensor<T>> {
        Self::check_same_shape(a, b, what)?;
        let data = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::output(data, a.shape(), self.track(&[a, b]));
        if out.requires_grad() {
            self.push(&out, op(a.clone(), b.clone()));
        }
        Ok(out)
    }

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn unary(
        &self,
        x: &Tensor<T>,
        out_shape: Shape,
        data: Vec<T>,
        op: impl FnOnce(Tensor<T>) -> Op<T>,
    ) -> Tensor<T> {
        let out = Tensor::output(data, out_shape, self.track(&[x]));
        if out.requires_grad() {
            self.push(&out, op(x.clone()));
        }
        out
    }

    pub fn scale(&self, x: &Tensor<T>, k: T) -> Tensor<T> {
        let data = x.data().iter().map(|&v| v * k).collect();
        self.unary(x, x.shape(), data, |x| Op::Scale { x, k })
    }

    pub fn relu(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        self.unary(x, x.shape(), data, |x| Op::Relu { x })
    }

    pub fn abs(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x.data().iter().map(|&v| v.abs()).collect();
        self.unary(x, x.shape(), data, |x| Op::Abs { x })
    }

    pub fn sum(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in x.data().iter() {
            acc += v;
        }
        self.unary(x, Shape::scalar(), vec![acc], |x| Op::Sum { x })
    }

    pub fn mean(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in x.data().iter() {
            acc += v;
        }
        let len = T::of(x.shape().len() as f64);
        self.unary(x, Shape::scalar(), vec![acc / len], |x| Op::Mean { x })
    }

    /// Horizontal forward difference, zero in the last column.
    pub fn fwd_diff_x(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let xd = x.data();
        let mut data = vec![T::zero(); s.len()];
        for row in 0..s.n * s.c * s.h {
            let base = row * s.w;
            for j in 0..s.w.saturating_sub(1) {
                data[base + j] = xd[base + j + 1] - xd[base + j];
            }
        }
        drop(xd);
        self.unary(x, s, data, |x| Op::FwdDiffX { x })
    }

    /// Vertical forward difference, zero in the last row.
    pub fn fwd_diff_y(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let xd = x.data();
        let mut data = vec![T::zero(); s.len()];
        for nc in 0..s.n * s.c {
            let plane = nc * s.h * s.w;
            for i in 0..s.h.saturating_sub(1) {
                for j in 0..s.w {
                    let idx = plane + i * s.w + j;
                    data[idx] = xd[idx + s.w] - xd[idx];
                }
            }
        }
        drop(xd);
        self.unary(x, s, data, |x| Op::FwdDiffY { x })
    }

    /// Populate gradients of everything upstream of a scalar loss.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if loss.shape() != Shape::scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Ok(());
        }
        loss.accumulate_grad(&[T::one()]);
        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            let Some(g) = node.out.grad() else { continue };
            match &node.op {
                Op::Conv2d { x, w, b, dims } => {
                    let (gx, gw, gb) = conv2d_backward(&x.data(), &w.data(), &g, dims);
                    if x.requires_grad() {
                        x.accumulate_grad(&gx);
                    }
                    if w.requires_grad() {
                        w.accumulate_grad(&gw);
                    }
                    if b.requires_grad() {
                        b.accumulate_grad(&gb);
                    }
                }
                Op::PixelShuffle { x, r } => {
                    let r = *r;
                    let s = x.shape();
                    let os = node.out.shape();
                    let mut gx = vec![T::zero(); s.len()];
                    for n in 0..s.n {
                        for co in 0..os.c {
                            for h in 0..s.h {
                                for w in 0..s.w {
                                    for i in 0..r {
                                        for j in 0..r {
                                            let ci = co * r * r + i * r + j;
                                            gx[s.index(n, ci, h, w)] =
                                                g[os.index(n, co, h * r + i, w * r + j)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    x.accumulate_grad(&gx);
                }
                Op::Add { a, b } => {
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        b.accumulate_grad(&g);
                    }
                }
                Op::Sub { a, b } => {
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                        b.accumulate_grad(&neg);
                    }
                }
                Op::Mul { a, b } => {
                    if a.requires_grad() {
                        let ga: Vec<T> =
                            g.iter().zip(b.data().iter()).map(|(&gv, &bv)| gv * bv).collect();
                        a.accumulate_grad(&ga);
                    }
                    if b.requires_grad() {
                        let gb: Vec<T> =
                            g.iter().zip(a.data().iter()).map(|(&gv, &av)| gv * av).collect();
                        b.accumulate_grad(&gb);
                    }
                }
                Op::Scale { x, k } => {
                    let gx: Vec<T> = g.iter().map(|&v| v * *k).collect();
                    x.accumulate_grad(&gx);
                }
                Op::Relu { x } => {
                    let gx: Vec<T> = g
                        .iter()
                        .zip(x.data().iter())
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    x.accumulate_grad(&gx);
                }
                Op::Abs { x } => {
                    // subgradient at 0 is 0
                    let gx: Vec<T> = g
                        .iter()
                        .zip(x.data().iter())
                        .map(|(&gv, &xv)| {
                            if xv > T::zero() {
                                gv
                            } else if xv < T::zero() {
                                -gv
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    x.accumulate_grad(&gx);
                }
                Op::Sum { x } => {
                    let gx = vec![g[0]; x.shape().len()];
                    x.accumulate_grad(&gx);
                }
                Op::Mean { x } => {
                    let k = g[0] / T::of(x.shape().len() as f64);
                    let gx = vec![k; x.shape().len()];
                    x.accumulate_grad(&gx);
                }
                Op::FwdDiffX { x } => {
                    let s = x.shape();
                    let mut gx = vec![T::zero(); s.len()];
                    for row in 0..s.n * s.c * s.h {
                        let base = row * s.w;
                        for j in 0..s.w.saturating_sub(1) {
                            gx[base + j + 1] += g[base + j];
                            gx[base + j] -= g[base + j];
                        }
                    }
                    x.accumulate_grad(&gx);
                }
                Op::FwdDiffY { x } => {
                    let s = x.shape();
                    let mut gx = vec![T::zero(); s.len()];
                    for nc in 0..s.n * s.c {
                        let plane = nc * s.h * s.w;
                        for i in 0..s.h.saturating_sub(1) {
                            for j in 0..s.w {
                                let idx = plane + i * s.w + j;
                                gx[idx + s.w] += g[idx];
                                gx[idx] -= g[idx];
                            }
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            }
        }
        Ok(())
    }
}
