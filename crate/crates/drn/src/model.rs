//! The dual reconstruction network: a chain of L = log2(r) upscaling
//! blocks. Each block pairs a primal 2× upscaler (residual modules plus a
//! sub-pixel convolution) with a small dual block that maps the upscaled
//! image back down, giving the training loss its cycle-consistency term.
//! Blocks pass 3-channel images, so every intermediate output is itself a
//! super-resolved image that can be supervised.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{kaiming_conv_weight, stream_rng, Scalar, Shape, Tape, Tensor};

const INIT_SALT: u64 = 0x494e_4954; // "INIT"

pub(crate) struct Conv<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    stride: usize,
}

impl<T: Scalar> Conv<T> {
    /// 3x3 convolution, pad 1, Kaiming-normal weights, zero bias.
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let w = kaiming_conv_weight(Shape::new(cout, cin, 3, 3), rng);
        let b = Tensor::leaf(vec![T::zero(); cout], Shape::new(1, cout, 1, 1)).expect("sized");
        Conv { w, b, stride }
    }

    fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        tape.conv2d(x, &self.w, &self.b, self.stride, 1)
    }

    fn push_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// conv3x3 -> ReLU -> conv3x3, added onto the skip connection.
pub(crate) struct ResidualModule<T: Scalar> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
}

impl<T: Scalar> ResidualModule<T> {
    fn new(width: usize, rng: &mut impl Rng) -> Self {
        ResidualModule {
            conv1: Conv::new(width, width, 1, rng),
            conv2: Conv::new(width, width, 1, rng),
        }
    }

    pub(crate) fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = tape.relu(&self.conv1.forward(tape, x)?);
        let h = self.conv2.forward(tape, &h)?;
        tape.add(x, &h)
    }
}

/// One 2× upscaling block: entry conv (3→F), n_res residual modules,
/// expansion conv (F→4F), pixel shuffle, exit conv (F→3).
pub struct PrimalBlock<T: Scalar> {
    pub(crate) entry: Conv<T>,
    pub(crate) res: Vec<ResidualModule<T>>,
    pub(crate) expand: Conv<T>,
    pub(crate) exit: Conv<T>,
}

impl<T: Scalar> PrimalBlock<T> {
    fn new(width: usize, n_res: usize, rng: &mut impl Rng) -> Self {
        PrimalBlock {
            entry: Conv::new(3, width, 1, rng),
            res: (0..n_res).map(|_| ResidualModule::new(width, rng)).collect(),
            expand: Conv::new(width, 4 * width, 1, rng),
            exit: Conv::new(width, 3, 1, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.entry.forward(tape, x)?;
        for m in &self.res {
            h = m.forward(tape, &h)?;
        }
        let h = self.expand.forward(tape, &h)?;
        let h = tape.pixel_shuffle(&h, 2)?;
        self.exit.forward(tape, &h)
    }
}

/// The learned downscaler: stride-2 conv (3→F), ReLU, conv (F→3).
pub struct DualBlock<T: Scalar> {
    pub(crate) conv1: Conv<T>,
    pub(crate) conv2: Conv<T>,
}

impl<T: Scalar> DualBlock<T> {
    fn new(width: usize, rng: &mut impl Rng) -> Self {
        DualBlock {
            conv1: Conv::new(3, width, 2, rng),
            conv2: Conv::new(width, 3, 1, rng),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = tape.relu(&self.conv1.forward(tape, x)?);
        self.conv2.forward(tape, &h)
    }
}

struct BlockPair<T: Scalar> {
    primal: PrimalBlock<T>,
    dual: DualBlock<T>,
}

pub struct DrnModel<T: Scalar> {
    scale: usize,
    width: usize,
    n_res: usize,
    use_dual: bool,
    progressive: bool,
    blocks: Vec<BlockPair<T>>,
}

/// All per-level outputs of one forward pass.
pub struct DrnOutputs<T: Scalar> {
    /// ŷ_1..ŷ_L, one per block, spatial dims doubling each level.
    pub primals: Vec<Tensor<T>>,
    /// D_l(ŷ_l) for each level, shaped like the block's input.
    /// Empty when the model was built with use_dual = false.
    pub duals: Vec<Tensor<T>>,
}

/// Build a model with Kaiming-initialized convolutions, deterministically
/// from the seed.
pub fn init_model<T: Scalar>(
    r: usize,
    width: usize,
    n_res: usize,
    seed: u64,
    use_dual: bool,
    progressive: bool,
) -> Result<DrnModel<T>> {
    if !r.is_power_of_two() || !(2..=8).contains(&r) {
        return Err(Error::Contract(format!(
            "scale must be 2, 4, or 8 (a power of two), got {r}"
        )));
    }
    if width == 0 {
        return Err(Error::Contract("width must be at least 1".into()));
    }
    let levels = r.trailing_zeros() as usize;
    let mut rng = stream_rng(seed, INIT_SALT);
    let blocks = (0..levels)
        .map(|_| BlockPair {
            primal: PrimalBlock::new(width, n_res, &mut rng),
            dual: DualBlock::new(width, &mut rng),
        })
        .collect();
    Ok(DrnModel {
        scale: r,
        width,
        n_res,
        use_dual,
        progressive,
        blocks,
    })
}

impl<T: Scalar> std::fmt::Debug for DrnModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "DrnModel(scale={}, width={}, n_res={}, dual={}, progressive={}, params={})",
            self.scale,
            self.width,
            self.n_res,
            self.use_dual,
            self.progressive,
            self.param_count()
        )
    }
}

impl<T: Scalar> DrnModel<T> {
    pub fn scale(&self) -> usize {
        self.scale
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn n_res(&self) -> usize {
        self.n_res
    }
    pub fn use_dual(&self) -> bool {
        self.use_dual
    }
    pub fn progressive(&self) -> bool {
        self.progressive
    }
    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    /// Parameters in a fixed order, with stable dotted names.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (l, blk) in self.blocks.iter().enumerate() {
            let p = format!("block{l}.primal");
            blk.primal.entry.push_params(&format!("{p}.entry"), &mut out);
            for (i, m) in blk.primal.res.iter().enumerate() {
                m.conv1.push_params(&format!("{p}.res{i}.conv1"), &mut out);
                m.conv2.push_params(&format!("{p}.res{i}.conv2"), &mut out);
            }
            blk.primal.expand.push_params(&format!("{p}.expand"), &mut out);
            blk.primal.exit.push_params(&format!("{p}.exit"), &mut out);
            let d = format!("block{l}.dual");
            blk.dual.conv1.push_params(&format!("{d}.conv1"), &mut out);
            blk.dual.conv2.push_params(&format!("{d}.conv2"), &mut out);
        }
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params()
            .iter()
            .map(|(_, t)| t.shape().len())
            .sum()
    }

    pub fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    /// Run the block chain. Every level's primal output feeds the next
    /// block; dual outputs are produced alongside when use_dual is set.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<DrnOutputs<T>> {
        let s = x.shape();
        if s.c != 3 {
            return Err(Error::Dimension(format!(
                "model input must have 3 channels, got shape {s}"
            )));
        }
        if s.h < 8 || s.w < 8 {
            return Err(Error::Dimension(format!(
                "model input must be at least 8x8, got shape {s}"
            )));
        }
        let mut primals = Vec::with_capacity(self.blocks.len());
        let mut duals = Vec::new();
        let mut cur = x.clone();
        for blk in &self.blocks {
            let p = blk.primal.forward(tape, &cur)?;
            if self.use_dual {
                duals.push(blk.dual.forward(tape, &p)?);
            }
            primals.push(p.clone());
            cur = p;
        }
        Ok(DrnOutputs { primals, duals })
    }
}

/// Free-function alias for [`DrnModel::forward`].
pub fn drn_forward<T: Scalar>(
    model: &DrnModel<T>,
    tape: &Tape<T>,
    x: &Tensor<T>,
) -> Result<DrnOutputs<T>> {
    model.forward(tape, x)
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "DRN1", u32 LE header (r, width, n_res, flags),
// u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
// rank u32 dims, raw f32 LE values.

const MAGIC: &[u8; 4] = b"DRN1";
const FLAG_DUAL: u32 = 1;
const FLAG_PROGRESSIVE: u32 = 2;

pub fn save_checkpoint<T: Scalar>(model: &DrnModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let flags = if model.use_dual { FLAG_DUAL } else { 0 }
        | if model.progressive { FLAG_PROGRESSIVE } else { 0 };
    for v in [
        model.scale as u32,
        model.width as u32,
        model.n_res as u32,
        flags,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let named = model.named_params();
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in &named {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let s = t.shape();
        buf.extend_from_slice(&4u32.to_le_bytes());
        for d in [s.n, s.c, s.h, s.w] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data().iter() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("unexpected end of file reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DrnModel<f32>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic (expected DRN1)".into(),
        });
    }
    let scale = r.u32("scale")? as usize;
    let width = r.u32("width")? as usize;
    let n_res = r.u32("n_res")? as usize;
    let flags = r.u32("flags")?;
    let model = init_model::<f32>(
        scale,
        width,
        n_res,
        0,
        flags & FLAG_DUAL != 0,
        flags & FLAG_PROGRESSIVE != 0,
    )
    .map_err(|e| Error::Format {
        offset: 4,
        message: format!("invalid header: {e}"),
    })?;
    let count = r.u32("tensor count")? as usize;
    let mut params: std::collections::HashMap<String, Tensor<f32>> =
        model.named_params().into_iter().collect();
    if count != params.len() {
        return Err(Error::Format {
            offset: r.pos - 4,
            message: format!("expected {} tensors, file declares {count}", params.len()),
        });
    }
    for _ in 0..count {
        let name_at = r.pos;
        let name_len = r.u32("name length")? as usize;
        if name_len > 1 << 16 {
            return Err(Error::Format {
                offset: name_at,
                message: format!("implausible name length {name_len}"),
            });
        }
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| {
            Error::Format {
                offset: name_at + 4,
                message: "parameter name is not UTF-8".into(),
            }
        })?;
        let rank = r.u32("rank")?;
        if rank != 4 {
            return Err(Error::Format {
                offset: r.pos - 4,
                message: format!("rank must be 4, got {rank}"),
            });
        }
        let dims_at = r.pos;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("dim")? as usize;
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (1 << 28))
            .ok_or(Error::Format {
                offset: dims_at,
                message: format!("dimension overflow {dims:?}"),
            })?;
        let tensor = params.remove(&name).ok_or_else(|| Error::Format {
            offset: name_at,
            message: format!("unknown parameter {name:?}"),
        })?;
        let s = tensor.shape();
        if [s.n, s.c, s.h, s.w] != dims {
            return Err(Error::Format {
                offset: dims_at,
                message: format!("parameter {name:?} has dims {dims:?}, model expects {s}"),
            });
        }
        let raw = r.take(4 * len, "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensor.set_data(data)?;
    }
    if let Some(name) = params.keys().next() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("parameter {name:?} missing from checkpoint"),
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: "trailing bytes after last tensor".into(),
        });
    }
    Ok(model)
}
