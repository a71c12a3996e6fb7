use super::ViewPose;
use crate::error::{check_len, Error, Result};
use crate::grid::Grid;

/// Bilinear footprint of one ray sample: up to four grid cells and weights.
/// Cells outside the grid are dropped, so the field is zero off its support.
#[inline]
fn footprint(x: f64, y: f64, n: usize, mut visit: impl FnMut(usize, f64)) {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let n = n as isize;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        let yy = y0 + dy;
        if wy == 0.0 || yy < 0 || yy >= n {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let xx = x0 + dx;
            if wx == 0.0 || xx < 0 || xx >= n {
                continue;
            }
            visit((yy * n + xx) as usize, wy * wx);
        }
    }
}

/// Walks every (ray, sample) pair of a parallel-beam view. Ray `j` passes
/// through offset `j` across the rotated grid and is sampled at unit steps.
fn for_each_sample(n: usize, pose: ViewPose, mut visit: impl FnMut(usize, usize, f64)) {
    let c = (n as f64 - 1.0) / 2.0;
    let (s, co) = pose.angle().sin_cos();
    for j in 0..n {
        let u = j as f64 - c;
        for k in 0..n {
            let v = k as f64 - c;
            let x = c + u * co - v * s;
            let y = c + u * s + v * co;
            footprint(x, y, n, |cell, w| visit(j, cell, w));
        }
    }
}

fn check_square(field: &Grid) -> Result<usize> {
    if !field.is_square() {
        return Err(Error::invalid(format!(
            "projection needs a square grid, got {}x{}",
            field.width(),
            field.height()
        )));
    }
    Ok(field.width())
}

/// Line integrals of `field` along parallel rays at `pose`. At angle zero
/// bin `j` is the sum of column `j`.
pub fn project(field: &Grid, pose: ViewPose) -> Result<Vec<f64>> {
    let n = check_square(field)?;
    let data = field.data();
    let mut out = vec![0.0; n];
    for_each_sample(n, pose, |j, cell, w| out[j] += w * data[cell]);
    Ok(out)
}

/// Backprojection: the exact adjoint of [`project`] for an `n`x`n` grid.
pub fn project_adjoint(grad: &[f64], n: usize, pose: ViewPose) -> Result<Grid> {
    check_len(n, grad.len())?;
    let mut out = Grid::square(n);
    let data = out.data_mut();
    for_each_sample(n, pose, |j, cell, w| data[cell] += w * grad[j]);
    Ok(out)
}
