use crate::error::{Error, Result};
use crate::grid::Grid;

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_IDENTICAL: f64 = 99.0;

fn check_shapes(a: &Grid, b: &Grid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Grid, b: &Grid) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB.
pub fn psnr(a: &Grid, b: &Grid, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be positive"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Intersection over union of `{a > threshold}` and `{b > threshold}`. Two
/// empty masks count as a perfect match.
pub fn mask_iou(a: &Grid, b: &Grid, threshold: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (p, q) = (*x > threshold, *y > threshold);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over all `8x8` windows at unit stride (windows shrink to the
/// grid size along short axes), dynamic range 1.
pub fn ssim(a: &Grid, b: &Grid) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("ssim of an empty grid"));
    }
    let (ww, wh) = (SSIM_WINDOW.min(w), SSIM_WINDOW.min(h));
    let n = (ww * wh) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - wh {
        for x0 in 0..=w - ww {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + wh {
                for x in x0..x0 + ww {
                    let (p, q) = (a.get(x, y), b.get(x, y));
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM over all unordered pairs.
pub fn pairwise_ssim(set: &[Grid]) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::invalid("pairwise ssim needs at least two grids"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            total += ssim(&set[i], &set[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
