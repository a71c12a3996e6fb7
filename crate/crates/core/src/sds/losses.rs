use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::student::IsoContour;

/// Sub-weights of the reference-view reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecWeights {
    pub value: f64,
    pub mask: f64,
    pub pearson: f64,
    /// Sharpness of the soft occupancy `1 - exp(-k * max(v, 0))`.
    pub mask_sharpness: f64,
}

impl Default for RecWeights {
    fn default() -> Self {
        Self {
            value: 1.0,
            mask: 0.5,
            pearson: 0.1,
            mask_sharpness: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub value_mse: f64,
    pub mask_mse: f64,
    /// `None` when either input has zero variance and the term was skipped.
    pub pearson: Option<f64>,
}

/// Pearson correlation, or `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ca, cb, na, nb) = centered(a, b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(ca.iter().zip(&cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

fn centered(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let ca: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = ca.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = cb.iter().map(|v| v * v).sum::<f64>().sqrt();
    (ca, cb, na, nb)
}

/// Reference-view loss: value MSE, soft-mask MSE against `ref_mask`, and
/// `1 - pearson(render, reference)`, with an analytic gradient on `render`.
pub fn rec_loss(render: &[f64], reference: &[f64], ref_mask: &[f64], w: &RecWeights) -> Result<RecLoss> {
    let n = render.len();
    check_len(n, reference.len())?;
    check_len(n, ref_mask.len())?;
    if n == 0 {
        return Err(Error::invalid("reconstruction inputs are empty"));
    }
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; n];

    let mut value_mse = 0.0;
    let mut mask_mse = 0.0;
    for i in 0..n {
        let d = render[i] - reference[i];
        value_mse += d * d * inv;
        grad[i] += w.value * 2.0 * d * inv;

        let r = render[i].max(0.0);
        let e = (-w.mask_sharpness * r).exp();
        let m = 1.0 - e;
        let dm = m - ref_mask[i];
        mask_mse += dm * dm * inv;
        if render[i] > 0.0 {
            grad[i] += w.mask * 2.0 * dm * inv * w.mask_sharpness * e;
        }
    }

    let (ca, cb, na, nb) = centered(render, reference);
    let pearson = if na > 0.0 && nb > 0.0 {
        let rho = ca.iter().zip(&cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        for i in 0..n {
            let d_rho = cb[i] / (na * nb) - rho * ca[i] / (na * na);
            grad[i] -= w.pearson * d_rho;
        }
        Some(rho)
    } else {
        None
    };
    let loss = w.value * value_mse + w.mask * mask_mse + pearson.map_or(0.0, |r| w.pearson * (1.0 - r));
    Ok(RecLoss {
        loss,
        grad,
        value_mse,
        mask_mse,
        pearson,
    })
}

/// Offset keeping normals of flat regions finite: `n = g / sqrt(|g|^2 + e^2)`.
pub const NORMAL_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothLoss {
    pub loss: f64,
    pub grad: Grid,
}

/// Bilinear cell lookup: base node and fractional offsets, with the node
/// clamped so the cell stays inside the grid.
fn cell(p: f64, n: usize) -> (usize, f64) {
    let p = p.clamp(0.0, (n - 1) as f64);
    let i = (p.floor() as usize).min(n - 2);
    (i, p - i as f64)
}

/// A cell node with the derivatives of both gradient components with
/// respect to its value.
type NodeTap = (usize, f64, f64);

/// Gradient of the bilinear interpolant at `(x, y)` together with the
/// weights it places on the four cell nodes, for each component.
fn interp_gradient(f: &Grid, x: f64, y: f64) -> ((f64, f64), [NodeTap; 4]) {
    let w = f.width();
    let (x0, fx) = cell(x, f.width());
    let (y0, fy) = cell(y, f.height());
    let idx = |xx: usize, yy: usize| yy * w + xx;
    // (node, d gx / d f_node, d gy / d f_node)
    let taps = [
        (idx(x0, y0), -(1.0 - fy), -(1.0 - fx)),
        (idx(x0 + 1, y0), 1.0 - fy, -fx),
        (idx(x0, y0 + 1), -fy, 1.0 - fx),
        (idx(x0 + 1, y0 + 1), fy, fx),
    ];
    let v = |i: usize| f.data()[taps[i].0];
    // Differences first, so flat regions give exactly zero.
    let gx = (1.0 - fy) * (v(1) - v(0)) + fy * (v(3) - v(2));
    let gy = (1.0 - fx) * (v(2) - v(0)) + fx * (v(3) - v(1));
    ((gx, gy), taps)
}

/// Jacobian-transpose of `g -> g / sqrt(|g|^2 + e^2)` applied to `up`.
fn normalize_vjp(g: (f64, f64), up: (f64, f64)) -> (f64, f64) {
    let s2 = g.0 * g.0 + g.1 * g.1 + NORMAL_EPS * NORMAL_EPS;
    let s = s2.sqrt();
    let dot = g.0 * up.0 + g.1 * up.1;
    ((up.0 - g.0 * dot / s2) / s, (up.1 - g.1 * dot / s2) / s)
}

fn normalize(g: (f64, f64)) -> (f64, f64) {
    let s = (g.0 * g.0 + g.1 * g.1 + NORMAL_EPS * NORMAL_EPS).sqrt();
    (g.0 / s, g.1 / s)
}

/// Monte-Carlo estimate of `E |n(a) - n(a + beta z)|_1` over uniform points
/// `a` of the field, where `n` is the normalized gradient of the bilinear
/// interpolant. The gradient treats the sample locations as fixed.
pub fn normal_smooth_loss<R: Rng + ?Sized>(field: &Grid, beta: f64, rng: &mut R, samples: usize) -> Result<SmoothLoss> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    if field.width() < 2 || field.height() < 2 {
        return Err(Error::invalid("normal smoothness needs at least a 2x2 field"));
    }
    if samples == 0 {
        return Err(Error::invalid("normal smoothness needs at least one sample"));
    }
    let (wmax, hmax) = ((field.width() - 1) as f64, (field.height() - 1) as f64);
    let mut grad = Grid::zeros(field.width(), field.height());
    let mut loss = 0.0;
    let inv = 1.0 / samples as f64;
    for _ in 0..samples {
        let a = (rng.random_range(0.0..=wmax), rng.random_range(0.0..=hmax));
        let z: (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
        let b = ((a.0 + beta * z.0).clamp(0.0, wmax), (a.1 + beta * z.1).clamp(0.0, hmax));
        let (ga, ta) = interp_gradient(field, a.0, a.1);
        let (gb, tb) = interp_gradient(field, b.0, b.1);
        let (na, nb) = (normalize(ga), normalize(gb));
        let d = (na.0 - nb.0, na.1 - nb.1);
        loss += (d.0.abs() + d.1.abs()) * inv;
        let sign = (sign(d.0) * inv, sign(d.1) * inv);
        let up_a = normalize_vjp(ga, sign);
        let up_b = normalize_vjp(gb, (-sign.0, -sign.1));
        let data = grad.data_mut();
        for (taps, up) in [(ta, up_a), (tb, up_b)] {
            for (i, ax, ay) in taps {
                data[i] += ax * up.0 + ay * up.1;
            }
        }
    }
    Ok(SmoothLoss { loss, grad })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean norm of the uniform Laplacian rows `2 v_i - v_{i-1} - v_{i+1}` of a
/// closed polygon.
pub fn laplacian_loss(contour: &IsoContour) -> Result<f64> {
    Ok(laplacian_loss_grad(contour)?.0)
}

/// [`laplacian_loss`] with its gradient on each vertex.
pub fn laplacian_loss_grad(contour: &IsoContour) -> Result<(f64, Vec<(f64, f64)>)> {
    let n = contour.len();
    if n < 3 {
        return Err(Error::invalid("laplacian loss needs at least 3 vertices"));
    }
    let rows = contour.laplacian_rows();
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let unit: Vec<(f64, f64)> = rows
        .iter()
        .map(|&(x, y)| {
            let norm = x.hypot(y);
            loss += norm * inv;
            if norm > 0.0 {
                (x / norm * inv, y / norm * inv)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let grad = (0..n)
        .map(|j| {
            let (p, q) = (unit[(j + n - 1) % n], unit[(j + 1) % n]);
            (2.0 * unit[j].0 - p.0 - q.0, 2.0 * unit[j].1 - p.1 - q.1)
        })
        .collect();
    Ok((loss, grad))
}
