//! Full-reference quality metrics and the paired training loss.
//!
//! SSIM uses a uniform square window (13×13 by default) at stride 1 over valid
//! positions only, with stabilizers `C1 = (0.02·L)²` and `C2 = (0.03·L)²` for
//! dynamic range `L = 1`. Channels are scored independently and averaged.
//! Window statistics come from summed-area tables, which also give the SSIM
//! gradient in a single backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Plane};

pub const SSIM_WINDOW: usize = 13;
pub const SSIM_K1: f64 = 0.02;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_C1: f64 = SSIM_K1 * SSIM_K1;
pub const SSIM_C2: f64 = SSIM_K2 * SSIM_K2;
/// Weight of the SSIM term in the paired loss.
pub const DEFAULT_SSIM_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Decibels; `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

impl QualityReport {
    /// PSNR and SSIM of the clamped result. Images smaller than the SSIM
    /// window are scored with the largest window that fits.
    pub fn measure(result: &Image, reference: &Image) -> Result<Self> {
        result.ensure_same_dims(reference)?;
        let r = result.clamped();
        let j = reference.clamped();
        let window = effective_window(r.width(), r.height());
        Ok(QualityReport {
            psnr: psnr(&r, &j)?,
            ssim: ssim_with_window(&r, &j, window)?,
        })
    }
}

/// The SSIM window used for an image of the given size.
pub fn effective_window(width: usize, height: usize) -> usize {
    SSIM_WINDOW.min(width).min(height)
}

/// Mean squared error over every pixel and channel.
pub fn l2_loss(result: &Image, reference: &Image) -> Result<f64> {
    result.ensure_same_dims(reference)?;
    let mut sum = 0.0;
    for c in 0..3 {
        for (a, b) in result.plane(c).data().iter().zip(reference.plane(c).data()) {
            let d = a - b;
            sum += d * d;
        }
    }
    Ok(sum / (3 * result.pixel_count()) as f64)
}

/// [`l2_loss`] and its gradient with respect to `result`.
pub fn l2_loss_with_gradient(result: &Image, reference: &Image) -> Result<(f64, [Vec<f64>; 3])> {
    result.ensure_same_dims(reference)?;
    let n = (3 * result.pixel_count()) as f64;
    let mut sum = 0.0;
    let grads = [0, 1, 2].map(|c| {
        result
            .plane(c)
            .data()
            .iter()
            .zip(reference.plane(c).data())
            .map(|(a, b)| {
                let d = a - b;
                sum += d * d;
                2.0 * d / n
            })
            .collect()
    });
    Ok((sum / n, grads))
}

pub fn ssim(result: &Image, reference: &Image) -> Result<f64> {
    ssim_with_window(result, reference, SSIM_WINDOW)
}

pub fn ssim_with_window(result: &Image, reference: &Image, window: usize) -> Result<f64> {
    check_ssim_inputs(result, reference, window)?;
    let total: f64 = (0..3)
        .map(|c| SsimPlane::compute(result.plane(c), reference.plane(c), window).mean())
        .sum();
    Ok(total / 3.0)
}

/// SSIM and its gradient with respect to `result`.
pub fn ssim_with_gradient(
    result: &Image,
    reference: &Image,
    window: usize,
) -> Result<(f64, [Vec<f64>; 3])> {
    check_ssim_inputs(result, reference, window)?;
    let mut total = 0.0;
    let grads = [0, 1, 2].map(|c| {
        let stats = SsimPlane::compute(result.plane(c), reference.plane(c), window);
        total += stats.mean();
        let mut g = stats.gradient(result.plane(c), reference.plane(c));
        g.iter_mut().for_each(|v| *v /= 3.0);
        g
    });
    Ok((total / 3.0, grads))
}

pub fn ssim_loss(result: &Image, reference: &Image) -> Result<f64> {
    Ok(1.0 - ssim(result, reference)?)
}

/// `l2 + ssim_weight · (1 − SSIM)`.
pub fn total_pair_loss(result: &Image, reference: &Image, ssim_weight: f64) -> Result<f64> {
    if !(ssim_weight >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ssim weight must be nonnegative, got {ssim_weight}"
        )));
    }
    Ok(l2_loss(result, reference)? + ssim_weight * ssim_loss(result, reference)?)
}

/// Peak signal-to-noise ratio for peak value 1.
pub fn psnr(result: &Image, reference: &Image) -> Result<f64> {
    let mse = l2_loss(result, reference)?;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Decibels with four decimals, `inf` for identical images.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() && db > 0.0 {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

fn check_ssim_inputs(result: &Image, reference: &Image, window: usize) -> Result<()> {
    result.ensure_same_dims(reference)?;
    let (width, height) = result.dims();
    if window == 0 || width < window || height < window {
        return Err(Error::ImageTooSmall {
            width,
            height,
            window,
        });
    }
    Ok(())
}

/// Summed-area table with a zero first row and column.
struct Integral {
    stride: usize,
    data: Vec<f64>,
}

impl Integral {
    fn build(width: usize, height: usize, value: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut data = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += value(y * width + x);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Integral { stride, data }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    #[inline]
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.stride;
        self.data[y1 * s + x1] - self.data[y0 * s + x1] - self.data[y1 * s + x0]
            + self.data[y0 * s + x0]
    }
}

/// Per-window SSIM terms for one channel.
struct SsimPlane {
    window: usize,
    cols: usize,
    rows: usize,
    score: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    // Partial derivatives of each window's score.
    d_mu_x: Vec<f64>,
    d_var_x: Vec<f64>,
    d_cov: Vec<f64>,
}

impl SsimPlane {
    fn compute(x: &Plane, y: &Plane, window: usize) -> Self {
        let (w, h) = x.dims();
        let xs = x.data();
        let ys = y.data();
        let sx = Integral::build(w, h, |i| xs[i]);
        let sy = Integral::build(w, h, |i| ys[i]);
        let sxx = Integral::build(w, h, |i| xs[i] * xs[i]);
        let syy = Integral::build(w, h, |i| ys[i] * ys[i]);
        let sxy = Integral::build(w, h, |i| xs[i] * ys[i]);
        let cols = w - window + 1;
        let rows = h - window + 1;
        let n = cols * rows;
        let k = (window * window) as f64;
        let mut out = SsimPlane {
            window,
            cols,
            rows,
            score: Vec::with_capacity(n),
            mu_x: Vec::with_capacity(n),
            mu_y: Vec::with_capacity(n),
            d_mu_x: Vec::with_capacity(n),
            d_var_x: Vec::with_capacity(n),
            d_cov: Vec::with_capacity(n),
        };
        for v in 0..rows {
            for u in 0..cols {
                let (x1, y1) = (u + window, v + window);
                let mx = sx.sum(u, v, x1, y1) / k;
                let my = sy.sum(u, v, x1, y1) / k;
                let vx = sxx.sum(u, v, x1, y1) / k - mx * mx;
                let vy = syy.sum(u, v, x1, y1) / k - my * my;
                let cxy = sxy.sum(u, v, x1, y1) / k - mx * my;
                let a1 = 2.0 * mx * my + SSIM_C1;
                let a2 = 2.0 * cxy + SSIM_C2;
                let b1 = mx * mx + my * my + SSIM_C1;
                let b2 = vx + vy + SSIM_C2;
                let s = (a1 * a2) / (b1 * b2);
                out.score.push(s);
                out.mu_x.push(mx);
                out.mu_y.push(my);
                out.d_mu_x.push(s * (2.0 * my / a1 - 2.0 * mx / b1));
                out.d_var_x.push(-s / b2);
                out.d_cov.push(2.0 * s / a2);
            }
        }
        out
    }

    fn mean(&self) -> f64 {
        self.score.iter().sum::<f64>() / self.score.len() as f64
    }

    /// Gradient of [`Self::mean`] with respect to each pixel of `x`.
    ///
    /// A pixel's value enters a window's mean with weight `1/K`, its variance
    /// with `2(x − μx)/K` and its covariance with `(y − μy)/K`; summing those
    /// over all windows covering the pixel is a box filter over the window
    /// grid.
    fn gradient(&self, x: &Plane, y: &Plane) -> Vec<f64> {
        let (w, h) = x.dims();
        let (cols, rows) = (self.cols, self.rows);
        let a = Integral::build(cols, rows, |i| self.d_mu_x[i]);
        let b = Integral::build(cols, rows, |i| self.d_var_x[i]);
        let b_mu = Integral::build(cols, rows, |i| self.d_var_x[i] * self.mu_x[i]);
        let c = Integral::build(cols, rows, |i| self.d_cov[i]);
        let c_mu = Integral::build(cols, rows, |i| self.d_cov[i] * self.mu_y[i]);
        let k = (self.window * self.window) as f64;
        let scale = 1.0 / (k * (cols * rows) as f64);
        let mut grad = Vec::with_capacity(w * h);
        for py in 0..h {
            let v0 = (py + 1).saturating_sub(self.window);
            let v1 = (py + 1).min(rows);
            for px in 0..w {
                let u0 = (px + 1).saturating_sub(self.window);
                let u1 = (px + 1).min(cols);
                let xv = x.get(px, py);
                let yv = y.get(px, py);
                let g = a.sum(u0, v0, u1, v1) + 2.0 * xv * b.sum(u0, v0, u1, v1)
                    - 2.0 * b_mu.sum(u0, v0, u1, v1)
                    + yv * c.sum(u0, v0, u1, v1)
                    - c_mu.sum(u0, v0, u1, v1);
                grad.push(g * scale);
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, seed: usize) -> Image {
        Image::from_fn(w, h, |x, y, c| {
            let t = (x * 31 + y * 17 + c * 7 + seed * 13) as f64;
            (t * 0.618_033_988_75).fract()
        })
    }

    #[test]
    fn l2_examples() {
        let a = pattern(4, 4, 1);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        let z = Image::filled(4, 4, 0.0);
        let h = Image::filled(4, 4, 0.5);
        assert_eq!(l2_loss(&z, &h).unwrap(), 0.25);
        assert!(matches!(
            l2_loss(&z, &Image::filled(3, 4, 0.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ssim_examples() {
        let a = pattern(20, 16, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        assert!(matches!(
            ssim(&pattern(12, 20, 0), &pattern(12, 20, 1)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn psnr_examples() {
        let a = pattern(4, 4, 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let z = Image::filled(4, 4, 0.0);
        let one = Image::filled(4, 4, 1.0);
        assert_eq!(psnr(&z, &one).unwrap(), 0.0);
        let b = Image::filled(4, 4, 0.1);
        assert!((psnr(&z, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(format_psnr(f64::INFINITY), "inf");
        assert_eq!(format_psnr(20.0), "20.0000");
    }

    #[test]
    fn pair_loss_components() {
        let a = pattern(16, 16, 4);
        let b = pattern(16, 16, 5);
        assert_eq!(total_pair_loss(&a, &a, 0.1).unwrap(), 0.0);
        assert_eq!(
            total_pair_loss(&a, &b, 0.0).unwrap(),
            l2_loss(&a, &b).unwrap()
        );
        assert!(total_pair_loss(&a, &b, -1.0).is_err());
    }

    #[test]
    fn report_handles_small_images() {
        let a = pattern(8, 8, 1);
        let r = QualityReport::measure(&a, &a).unwrap();
        assert_eq!(r.psnr, f64::INFINITY);
        assert!((r.ssim - 1.0).abs() < 1e-12);
    }
}
