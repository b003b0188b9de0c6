//! Python bindings for the drn crate: images, the DRN model, losses,
//! metrics, bicubic resampling, and the generalization-bound estimators.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use drn::bounds::{self, BoundVariant, LossTable, RademacherMode};
use drn::imaging::{self, ImagePlane, ResampleDir};
use drn::losses::{LossKind, LossTag};
use drn::metrics::{self, ChannelMode, EvalConfig};
use drn::model::{init_model, load_checkpoint, save_checkpoint, DrnModel};
use drn::tensor::Tape;
use drn::train;

fn to_py(e: drn::Error) -> PyErr {
    match &e {
        drn::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        drn::Error::Resource(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Planar CHW image with float samples in [0, 1].
#[pyclass(name = "Image", skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: ImagePlane,
}

#[pymethods]
impl PyImage {
    /// Build an RGB image from a flat [c][h][w]-ordered list.
    #[staticmethod]
    fn rgb(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyImage {
            inner: ImagePlane::rgb(height, width, data).map_err(to_py)?,
        })
    }

    /// Build a single-channel image from a flat row-major list.
    #[staticmethod]
    fn luma(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyImage {
            inner: ImagePlane::luma(height, width, data).map_err(to_py)?,
        })
    }

    /// Read a PNG or binary PPM/PGM file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyImage {
            inner: imaging::load_image(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        imaging::save_image(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    /// Flat samples in [c][h][w] order.
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> PyResult<Self> {
        Ok(PyImage {
            inner: self.inner.crop(top, left, height, width).map_err(to_py)?,
        })
    }

    /// MATLAB-convention bicubic resample by an integer factor.
    fn resample(&self, factor: usize, down: bool) -> PyResult<Self> {
        let dir = if down {
            ResampleDir::Down
        } else {
            ResampleDir::Up
        };
        Ok(PyImage {
            inner: imaging::bicubic_resample(&self.inner, factor, dir).map_err(to_py)?,
        })
    }

    /// BT.601 luma channel of an RGB image.
    fn to_luma(&self) -> PyResult<Self> {
        Ok(PyImage {
            inner: imaging::rgb_to_y(&self.inner).map_err(to_py)?,
        })
    }

    /// Gradient-sensitive mask M (Eq. 4): min-max normalized gradient
    /// magnitude of this image.
    fn gs_mask(&self) -> Vec<f32> {
        imaging::build_mask(&self.inner).mask
    }

    fn __repr__(&self) -> String {
        format!(
            "Image(channels={}, height={}, width={})",
            self.inner.channels(),
            self.inner.height(),
            self.inner.width()
        )
    }
}

/// Dual reconstruction network (f32 weights). Bound to the thread that
/// created it, since the graph uses non-atomic shared ownership.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    inner: DrnModel<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (scale, width=16, n_res=2, seed=0, use_dual=true, progressive=true))]
    fn new(
        scale: usize,
        width: usize,
        n_res: usize,
        seed: u64,
        use_dual: bool,
        progressive: bool,
    ) -> PyResult<Self> {
        Ok(PyModel {
            inner: init_model(scale, width, n_res, seed, use_dual, progressive).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_checkpoint(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn scale(&self) -> usize {
        self.inner.scale()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn n_res(&self) -> usize {
        self.inner.n_res()
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.levels()
    }

    #[getter]
    fn use_dual(&self) -> bool {
        self.inner.use_dual()
    }

    #[getter]
    fn progressive(&self) -> bool {
        self.inner.progressive()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Super-resolve an LR image to ŷ_L, clamped to [0, 1].
    fn upscale(&self, image: &PyImage) -> PyResult<PyImage> {
        Ok(PyImage {
            inner: train::upscale(&self.inner, &image.inner).map_err(to_py)?,
        })
    }

    /// Primal outputs at every level, clamped to [0, 1].
    fn forward(&self, image: &PyImage) -> PyResult<Vec<PyImage>> {
        let tape = Tape::inference();
        let x = image.inner.to_tensor::<f32>();
        let out = self.inner.forward(&tape, &x).map_err(to_py)?;
        out.primals
            .iter()
            .map(|p| {
                Ok(PyImage {
                    inner: ImagePlane::from_tensor(p, image.inner.color_space()).map_err(to_py)?,
                })
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn parse_tag(kind: &str) -> PyResult<LossTag> {
    kind.parse::<LossTag>().map_err(to_py)
}

/// Loss value between a reference and a prediction image.
/// `kind` is one of mse, mae, g, gp, gs; λ weighs the pixel term of gp/gs.
#[pyfunction]
#[pyo3(signature = (kind, reference, prediction, lam=2.0))]
fn loss(kind: &str, reference: &PyImage, prediction: &PyImage, lam: f64) -> PyResult<f64> {
    let k = LossKind::new(parse_tag(kind)?, lam).map_err(to_py)?;
    let tape = Tape::inference();
    let i = reference.inner.to_tensor::<f64>();
    let ihat = prediction.inner.to_tensor::<f64>();
    let v = k.apply(&tape, &i, &ihat).map_err(to_py)?;
    v.item().map_err(to_py)
}

fn eval_cfg(channel: &str, shave: usize) -> PyResult<EvalConfig> {
    let mode = match channel {
        "luma" => ChannelMode::Luma,
        "rgb" => ChannelMode::Rgb,
        other => {
            return Err(PyValueError::new_err(format!(
                "channel must be `luma` or `rgb`, got {other:?}"
            )))
        }
    };
    EvalConfig::new(mode, shave, 1.0).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, channel="luma", shave=0))]
fn psnr(a: &PyImage, b: &PyImage, channel: &str, shave: usize) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner, &eval_cfg(channel, shave)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, channel="luma", shave=0))]
fn ssim(a: &PyImage, b: &PyImage, channel: &str, shave: usize) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner, &eval_cfg(channel, shave)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, channel="luma", shave=0))]
fn gradient_psnr(a: &PyImage, b: &PyImage, channel: &str, shave: usize) -> PyResult<f64> {
    metrics::gradient_psnr(&a.inner, &b.inner, &eval_cfg(channel, shave)?).map_err(to_py)
}

/// Seeded synthetic texture (sinusoids plus step edges), as used by the
/// toy training pipeline.
#[pyfunction]
fn synthetic_texture(size: usize, seed: u64) -> PyImage {
    PyImage {
        inner: train::synthetic_texture(size, seed),
    }
}

#[pyfunction]
fn empirical_error(row: Vec<f64>) -> PyResult<f64> {
    bounds::empirical_error(&row).map_err(to_py)
}

/// Finite-hypothesis deviation bound M·sqrt((ln|H| + ln(1/δ)) / (2m)).
#[pyfunction]
fn bound_finite(card_h: usize, bound: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::bound_finite(card_h, bound, m, delta).map_err(to_py)
}

/// Theorem-1 Rademacher bound; `variant` is `population` or `empirical`.
#[pyfunction]
fn bound_rademacher(
    empirical: f64,
    rademacher: f64,
    bound: f64,
    m: usize,
    delta: f64,
    variant: &str,
) -> PyResult<f64> {
    let v = match variant {
        "population" => BoundVariant::Population,
        "empirical" => BoundVariant::Empirical,
        other => {
            return Err(PyValueError::new_err(format!(
                "variant must be `population` or `empirical`, got {other:?}"
            )))
        }
    };
    bounds::bound_rademacher(empirical, rademacher, bound, m, delta, v).map_err(to_py)
}

/// Empirical Rademacher complexity of a loss table; exhaustive when
/// `draws` is None (m ≤ 20 only), Monte-Carlo otherwise.
#[pyfunction]
#[pyo3(signature = (rows, bound, draws=None, seed=0))]
fn empirical_rademacher(
    rows: Vec<Vec<f64>>,
    bound: f64,
    draws: Option<usize>,
    seed: u64,
) -> PyResult<f64> {
    let table = LossTable::new(rows, bound).map_err(to_py)?;
    let mode = match draws {
        None => RademacherMode::Exhaustive,
        Some(draws) => RademacherMode::MonteCarlo { draws, seed },
    };
    bounds::empirical_rademacher(&table, mode).map_err(to_py)
}

#[pymodule]
fn drn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_psnr, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_texture, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_error, m)?)?;
    m.add_function(wrap_pyfunction!(bound_finite, m)?)?;
    m.add_function(wrap_pyfunction!(bound_rademacher, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_rademacher, m)?)?;
    Ok(())
}
