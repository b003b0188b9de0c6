//! PSNR, SSIM, and gradient-PSNR under the usual super-resolution scoring
//! convention: luma channel, a shaved border, peak 1.0.

use crate::error::{Error, Result};
use crate::imaging::{self, ColorSpace, ImagePlane};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    Luma,
    Rgb,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    pub channel_mode: ChannelMode,
    /// Border width removed on every side before scoring.
    pub shave: usize,
    /// Peak signal value; 1.0 for [0,1] images.
    pub peak: f64,
}

impl EvalConfig {
    pub fn new(channel_mode: ChannelMode, shave: usize, peak: f64) -> Result<Self> {
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Contract(format!(
                "peak must be finite and positive, got {peak}"
            )));
        }
        Ok(EvalConfig {
            channel_mode,
            shave,
            peak,
        })
    }

    /// Luma scoring with the given shave, peak 1.0 — the convention used
    /// for every reported baseline.
    pub fn luma(shave: usize) -> Self {
        EvalConfig {
            channel_mode: ChannelMode::Luma,
            shave,
            peak: 1.0,
        }
    }
}

fn check_dims(a: &ImagePlane, b: &ImagePlane, cfg: &EvalConfig) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::Dimension(format!(
            "metric operands differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    let min_dim = a.height().min(a.width());
    if 2 * cfg.shave >= min_dim {
        return Err(Error::Contract(format!(
            "shave {} leaves nothing of a {}x{} image",
            cfg.shave,
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

/// Channel-convert per the config. Luma mode reduces RGB planes to Y.
fn convert(img: &ImagePlane, cfg: &EvalConfig) -> Result<ImagePlane> {
    match (cfg.channel_mode, img.color_space()) {
        (ChannelMode::Luma, ColorSpace::Rgb) => imaging::rgb_to_y(img),
        _ => Ok(img.clone()),
    }
}

fn shaved(img: &ImagePlane, shave: usize) -> Result<ImagePlane> {
    if shave == 0 {
        return Ok(img.clone());
    }
    img.crop(
        shave,
        shave,
        img.height() - 2 * shave,
        img.width() - 2 * shave,
    )
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / n
}

fn psnr_of_mse(mse: f64, peak: f64) -> f64 {
    // exact-match sentinel: explicit +inf rather than a log of zero
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB over the shaved, channel-converted
/// region; +inf when the regions are identical.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, cfg: &EvalConfig) -> Result<f64> {
    check_dims(a, b, cfg)?;
    let (ca, cb) = (convert(a, cfg)?, convert(b, cfg)?);
    let (sa, sb) = (shaved(&ca, cfg.shave)?, shaved(&cb, cfg.shave)?);
    Ok(psnr_of_mse(mse(sa.data(), sb.data()), cfg.peak))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            w.push((-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity with the reference 11x11 Gaussian window
/// (sigma 1.5) over valid window positions, C1 = (0.01 peak)^2,
/// C2 = (0.03 peak)^2.
pub fn ssim(a: &ImagePlane, b: &ImagePlane, cfg: &EvalConfig) -> Result<f64> {
    check_dims(a, b, cfg)?;
    let (ca, cb) = (convert(a, cfg)?, convert(b, cfg)?);
    if ca.channels() != 1 {
        return Err(Error::Contract(
            "ssim requires a single channel; use luma mode for RGB images".into(),
        ));
    }
    let (sa, sb) = (shaved(&ca, cfg.shave)?, shaved(&cb, cfg.shave)?);
    let (h, w) = (sa.height(), sa.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after shaving, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = (0.01 * cfg.peak).powi(2);
    let c2 = (0.03 * cfg.peak).powi(2);
    let pa = sa.data();
    let pb = sb.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb) = (0.0f64, 0.0f64);
            let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let g = win[wy * SSIM_WINDOW + wx];
                    let va = f64::from(pa[(y0 + wy) * w + x0 + wx]);
                    let vb = f64::from(pb[(y0 + wy) * w + x0 + wx]);
                    ma += g * va;
                    mb += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let (va, vb) = (aa - ma * ma, bb - mb * mb);
            let cov = ab - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// PSNR of the gradient-magnitude maps, peak sqrt(2) · cfg.peak (the
/// largest magnitude a [0,1] image can produce under forward differences).
/// Magnitudes are computed on the full luma image, then the border is
/// shaved, so zero-padding artifacts at the edge never score.
pub fn gradient_psnr(a: &ImagePlane, b: &ImagePlane, cfg: &EvalConfig) -> Result<f64> {
    check_dims(a, b, cfg)?;
    let ga = luma_magnitude(a)?;
    let gb = luma_magnitude(b)?;
    let (h, w, s) = (a.height(), a.width(), cfg.shave);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in s..h - s {
        for x in s..w - s {
            let d = ga[y * w + x] - gb[y * w + x];
            sum += d * d;
            n += 1;
        }
    }
    Ok(psnr_of_mse(sum / n as f64, cfg.peak * std::f64::consts::SQRT_2))
}

fn luma_magnitude(img: &ImagePlane) -> Result<Vec<f64>> {
    let luma = match img.color_space() {
        ColorSpace::Luma => img.clone(),
        ColorSpace::Rgb => imaging::rgb_to_y(img)?,
    };
    let data: Vec<f64> = luma.data().iter().map(|&v| v as f64).collect();
    let (gx, gy) = imaging::fwd_diff_plane(&data, img.height(), img.width());
    Ok(imaging::magnitude(&gx, &gy))
}
