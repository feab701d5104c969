//! Illumination correction and six-channel input assembly.
//!
//! Each colour channel has its low-frequency illumination (a large median
//! filter) subtracted and the residual rescaled to a fixed standard deviation
//! around 128. The normalized channels are appended to the original RGB.

use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::raster::{FovMask, Raster2D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    /// Target standard deviation of the normalized residual.
    pub sigma0: f64,
    /// Median kernel size as a fraction of the vertical FOV extent.
    pub kernel_fraction: f64,
    /// Lower bound on the residual standard deviation.
    pub epsilon: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self {
            sigma0: 50.0,
            kernel_fraction: 0.1,
            epsilon: 1e-6,
        }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0) {
            return Err(Error::InvalidParams(format!("sigma0 = {} must be > 0", self.sigma0)));
        }
        if !(self.kernel_fraction > 0.0 && self.kernel_fraction < 1.0) {
            return Err(Error::InvalidParams(format!(
                "kernel_fraction = {} must lie in (0, 1)",
                self.kernel_fraction
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParams(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Odd median kernel for a given vertical FOV extent: round, then bump even sizes up.
pub fn median_kernel_size(vertical_extent: usize, kernel_fraction: f64) -> usize {
    let k = (kernel_fraction * vertical_extent as f64).round() as usize;
    let k = k.max(1);
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

pub fn median_filter(channel: &Raster2D, kernel_px: usize) -> Result<Raster2D> {
    median_filter_with(channel, kernel_px, Parallelism::default())
}

/// Square median filter with replicated borders.
///
/// Uses a sliding 256-bin histogram when every sample is an integer in
/// `[0, 255]`, and per-window selection otherwise.
pub fn median_filter_with(channel: &Raster2D, kernel_px: usize, par: Parallelism) -> Result<Raster2D> {
    if kernel_px == 0 || kernel_px % 2 == 0 {
        return Err(Error::EvenKernel(kernel_px));
    }
    if channel.channels() != 1 {
        return Err(Error::InvalidRaster(format!(
            "median filter expects one channel, got {}",
            channel.channels()
        )));
    }
    let (w, h) = (channel.width(), channel.height());
    let src = channel.samples();
    let byte_valued = src
        .iter()
        .all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0);
    let r = (kernel_px / 2) as isize;
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;

    let mut out = vec![0f32; w * h];
    par.fill_chunks(&mut out, w, |y, row| {
        let y = y as isize;
        if byte_valued {
            let mut hist = [0u32; 256];
            let rank = (kernel_px * kernel_px - 1) / 2;
            for dy in -r..=r {
                let line = &src[clamp_y(y + dy) * w..];
                for dx in -r..=r {
                    hist[line[clamp_x(dx)] as usize] += 1;
                }
            }
            for (x, dst) in row.iter_mut().enumerate() {
                let x = x as isize;
                if x > 0 {
                    let (gone, new) = (clamp_x(x - r - 1), clamp_x(x + r));
                    for dy in -r..=r {
                        let line = &src[clamp_y(y + dy) * w..];
                        hist[line[gone] as usize] -= 1;
                        hist[line[new] as usize] += 1;
                    }
                }
                let mut acc = 0usize;
                for (v, &n) in hist.iter().enumerate() {
                    acc += n as usize;
                    if acc > rank {
                        *dst = v as f32;
                        break;
                    }
                }
            }
        } else {
            let mut window = Vec::with_capacity(kernel_px * kernel_px);
            for (x, dst) in row.iter_mut().enumerate() {
                window.clear();
                for dy in -r..=r {
                    let line = &src[clamp_y(y + dy) * w..];
                    for dx in -r..=r {
                        window.push(line[clamp_x(x as isize + dx)]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                *dst = *m;
            }
        }
    });
    Raster2D::new(w, h, 1, out)
}

/// `sigma0 * (I - I_med) / max(std, epsilon) + 128`, with the standard
/// deviation taken over inside-FOV pixels only. No clipping is applied.
pub fn illumination_normalize(
    channel: &Raster2D,
    med: &Raster2D,
    params: &NormalizationParams,
    mask: &FovMask,
) -> Result<Raster2D> {
    params.validate()?;
    let (w, h) = (channel.width(), channel.height());
    med.check_size(w, h, "median image")?;
    if mask.width() != w || mask.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "FOV mask {}x{} vs channel {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    let residual: Vec<f64> = channel
        .samples()
        .iter()
        .zip(med.samples())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0usize);
    for (i, &v) in residual.iter().enumerate() {
        if mask.inside_index(i) {
            sum += v;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    for (i, &v) in residual.iter().enumerate() {
        if mask.inside_index(i) {
            sum_sq += (v - mean) * (v - mean);
        }
    }
    let std = (sum_sq / n as f64).sqrt();
    let scale = params.sigma0 / std.max(params.epsilon);
    let out = residual.iter().map(|&v| (scale * v + 128.0) as f32).collect();
    Raster2D::new(w, h, 1, out)
}

pub fn assemble_six_channel(rgb: &Raster2D, params: &NormalizationParams, mask: &FovMask) -> Result<Raster2D> {
    assemble_six_channel_with(rgb, params, mask, Parallelism::default())
}

/// Output channel order is `[R, G, B, Rnorm, Gnorm, Bnorm]`.
pub fn assemble_six_channel_with(
    rgb: &Raster2D,
    params: &NormalizationParams,
    mask: &FovMask,
    par: Parallelism,
) -> Result<Raster2D> {
    params.validate()?;
    if rgb.channels() != 3 {
        return Err(Error::InvalidRaster(format!(
            "expected an RGB raster, got {} channels",
            rgb.channels()
        )));
    }
    let kernel = median_kernel_size(mask.vertical_extent(), params.kernel_fraction);
    let mut planes = Vec::with_capacity(6);
    for c in 0..3 {
        planes.push(rgb.extract_channel(c));
    }
    for c in 0..3 {
        let med = median_filter_with(&planes[c], kernel, par)?;
        planes.push(illumination_normalize(&planes[c], &med, params, mask)?);
    }
    let refs: Vec<&Raster2D> = planes.iter().collect();
    Raster2D::stack(&refs)
}
