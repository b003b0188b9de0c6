//! Differentiable training losses over batched tensors.
//!
//! Every loss is a per-image sum (squared Frobenius norm, entrywise L1, …)
//! averaged over the batch axis only, so trade-off weights keep their
//! meaning regardless of batch size. All functions build their result on
//! the caller's tape and return a scalar tensor.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::{self, bt601_luma};
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTag {
    Mse,
    Mae,
    /// L1 distance between forward-difference gradient fields.
    G,
    /// Gradient loss plus λ · MAE.
    Gp,
    /// Gradient-sensitive loss: gradient loss on the masked high-frequency
    /// part plus λ · MAE on the low-frequency complement.
    Gs,
}

impl FromStr for LossTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossTag::Mse),
            "mae" => Ok(LossTag::Mae),
            "g" => Ok(LossTag::G),
            "gp" => Ok(LossTag::Gp),
            "gs" => Ok(LossTag::Gs),
            _ => Err(Error::Contract(format!(
                "unknown loss {s:?} (expected mse|mae|g|gp|gs)"
            ))),
        }
    }
}

/// A loss selector plus its trade-off weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossKind {
    pub tag: LossTag,
    pub lambda: f64,
}

impl LossKind {
    pub fn new(tag: LossTag, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Contract(format!(
                "loss weight lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(LossKind { tag, lambda })
    }

    pub fn gs(lambda: f64) -> Result<Self> {
        Self::new(LossTag::Gs, lambda)
    }

    /// Evaluate this loss with `reference` as ground truth.
    pub fn apply<T: Scalar>(
        &self,
        tape: &Tape<T>,
        reference: &Tensor<T>,
        prediction: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        match self.tag {
            LossTag::Mse => loss_mse(tape, reference, prediction),
            LossTag::Mae => loss_mae(tape, reference, prediction),
            LossTag::G => loss_gradient(tape, reference, prediction),
            LossTag::Gp => loss_gp(tape, reference, prediction, self.lambda),
            LossTag::Gs => loss_gs(tape, reference, prediction, self.lambda),
        }
    }
}

fn check_pair<T: Scalar>(i: &Tensor<T>, ihat: &Tensor<T>, what: &str) -> Result<()> {
    if i.shape() != ihat.shape() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {} and {} differ",
            i.shape(),
            ihat.shape()
        )));
    }
    Ok(())
}

/// Mean over batch items of a per-element sum.
fn batch_sum<T: Scalar>(tape: &Tape<T>, t: &Tensor<T>) -> Tensor<T> {
    let n = t.shape().n;
    tape.scale(&tape.sum(t), T::of(1.0 / n as f64))
}

/// Sum of squared differences, averaged over the batch.
pub fn loss_mse<T: Scalar>(tape: &Tape<T>, i: &Tensor<T>, ihat: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(i, ihat, "loss_mse")?;
    let d = tape.sub(i, ihat)?;
    Ok(batch_sum(tape, &tape.mul(&d, &d)?))
}

/// Sum of absolute differences, averaged over the batch.
pub fn loss_mae<T: Scalar>(tape: &Tape<T>, i: &Tensor<T>, ihat: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(i, ihat, "loss_mae")?;
    let d = tape.sub(i, ihat)?;
    Ok(batch_sum(tape, &tape.abs(&d)))
}

/// L1 distance between the forward-difference gradient fields of the two
/// images, averaged over the batch.
pub fn loss_gradient<T: Scalar>(
    tape: &Tape<T>,
    i: &Tensor<T>,
    ihat: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_pair(i, ihat, "loss_gradient")?;
    let dx = tape.sub(&tape.fwd_diff_x(i), &tape.fwd_diff_x(ihat))?;
    let dy = tape.sub(&tape.fwd_diff_y(i), &tape.fwd_diff_y(ihat))?;
    let sum = tape.add(&tape.sum(&tape.abs(&dx)), &tape.sum(&tape.abs(&dy)))?;
    Ok(tape.scale(&sum, T::of(1.0 / i.shape().n as f64)))
}

/// Gradient loss plus λ times the pixel (MAE) loss.
pub fn loss_gp<T: Scalar>(
    tape: &Tape<T>,
    i: &Tensor<T>,
    ihat: &Tensor<T>,
    lambda: f64,
) -> Result<Tensor<T>> {
    let g = loss_gradient(tape, i, ihat)?;
    let p = loss_mae(tape, i, ihat)?;
    tape.add(&g, &tape.scale(&p, T::of(lambda)))
}

/// The gradient-sensitive mask of a batch: per item, the min-max normalized
/// gradient magnitude of the (luma) reference, broadcast across channels.
/// Uniform items get an all-zero mask. The result is a constant — no
/// gradient ever flows through it.
pub fn gs_mask<T: Scalar>(reference: &Tensor<T>) -> Result<Tensor<T>> {
    let s = reference.shape();
    if s.c != 1 && s.c != 3 {
        return Err(Error::Contract(format!(
            "gradient-sensitive mask needs 1- or 3-channel images, got {} channels",
            s.c
        )));
    }
    let data = reference.data();
    let px = s.h * s.w;
    let mut mask = vec![T::zero(); s.len()];
    for n in 0..s.n {
        let item = &data[n * s.c * px..(n + 1) * s.c * px];
        let luma: Vec<T> = if s.c == 1 {
            item.to_vec()
        } else {
            (0..px)
                .map(|i| {
                    T::of(bt601_luma(
                        item[i].as_f64(),
                        item[px + i].as_f64(),
                        item[2 * px + i].as_f64(),
                    ))
                })
                .collect()
        };
        let (gx, gy) = imaging::fwd_diff_plane(&luma, s.h, s.w);
        let g = imaging::magnitude(&gx, &gy);
        let m = imaging::minmax_mask(&g);
        for c in 0..s.c {
            mask[(n * s.c + c) * px..(n * s.c + c + 1) * px].copy_from_slice(&m);
        }
    }
    drop(data);
    Ok(Tensor::constant(mask, s).expect("mask sized from shape"))
}

/// Gradient-sensitive loss with an explicit mask (callers normally use
/// [`loss_gs`], which builds the mask from the reference).
pub fn loss_gs_masked<T: Scalar>(
    tape: &Tape<T>,
    i: &Tensor<T>,
    ihat: &Tensor<T>,
    lambda: f64,
    mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_pair(i, ihat, "loss_gs")?;
    check_pair(i, mask, "loss_gs mask")?;
    let ones = Tensor::full(mask.shape(), T::one());
    let inv = Tensor::constant(
        ones.data()
            .iter()
            .zip(mask.data().iter())
            .map(|(&o, &m)| o - m)
            .collect(),
        mask.shape(),
    )
    .expect("sized from shape");
    let hi = loss_gradient(tape, &tape.mul(mask, i)?, &tape.mul(mask, ihat)?)?;
    let lo = loss_mae(tape, &tape.mul(&inv, i)?, &tape.mul(&inv, ihat)?)?;
    tape.add(&hi, &tape.scale(&lo, T::of(lambda)))
}

/// Gradient-sensitive loss: the mask splits the reference into a
/// high-frequency part scored by the gradient loss and a low-frequency
/// complement scored by λ·MAE.
pub fn loss_gs<T: Scalar>(
    tape: &Tape<T>,
    i: &Tensor<T>,
    ihat: &Tensor<T>,
    lambda: f64,
) -> Result<Tensor<T>> {
    check_pair(i, ihat, "loss_gs")?;
    let mask = gs_mask(i)?;
    loss_gs_masked(tape, i, ihat, lambda, &mask)
}

/// Dual reconstruction loss: primal error ℓ1(Px, y) plus the
/// cycle-consistency error ℓ2(DPx, x) of mapping the prediction back down.
pub fn loss_dual<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    px: &Tensor<T>,
    dpx: &Tensor<T>,
    l1: LossKind,
    l2: LossKind,
) -> Result<Tensor<T>> {
    check_pair(y, px, "loss_dual primal")?;
    check_pair(x, dpx, "loss_dual dual")?;
    let primal = l1.apply(tape, y, px)?;
    let dual = l2.apply(tape, x, dpx)?;
    tape.add(&primal, &dual)
}

/// One upscaling level of the multi-scale objective.
pub struct DualLevel<'a, T> {
    /// Block input ŷ_{l-1} (the previous level's output, or the LR image).
    pub input: &'a Tensor<T>,
    /// Primal output P_l(ŷ_{l-1}).
    pub primal: &'a Tensor<T>,
    /// Dual output D_l(P_l(ŷ_{l-1})), mapped back to the input scale.
    pub dual: &'a Tensor<T>,
    /// Ground truth y_l at this level's scale.
    pub target: &'a Tensor<T>,
}

/// Multi-scale joint loss: the sum of per-level dual reconstruction losses,
/// supervising every intermediate scale with uniform weights.
pub fn loss_total<T: Scalar>(
    tape: &Tape<T>,
    levels: &[DualLevel<'_, T>],
    l1: LossKind,
    l2: LossKind,
) -> Result<Tensor<T>> {
    if levels.is_empty() {
        return Err(Error::Contract("loss_total needs at least one level".into()));
    }
    let mut total: Option<Tensor<T>> = None;
    for (idx, lvl) in levels.iter().enumerate() {
        let term = loss_dual(tape, lvl.input, lvl.target, lvl.primal, lvl.dual, l1, l2)
            .map_err(|e| Error::Contract(format!("level {idx}: {e}")))?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(&acc, &term)?,
        });
    }
    Ok(total.expect("non-empty levels"))
}
