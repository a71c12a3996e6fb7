use super::Stage;
use crate::error::{check_len, Error, Result};
use crate::grid::Grid;

/// Linear interpolation taps for one output index along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

/// Taps mapping `fine` output samples onto a `coarse` axis. Output index `j`
/// reads coarse coordinate `j * coarse / fine`, clamped at the last node, so
/// every coarse grid is left-aligned with every render resolution.
fn taps(coarse: usize, fine: usize) -> Vec<Tap> {
    (0..fine)
        .map(|j| {
            let u = (j * coarse) as f64 / fine as f64;
            let lo = (u.floor() as usize).min(coarse - 1);
            let hi = (lo + 1).min(coarse - 1);
            Tap {
                lo,
                hi,
                w_hi: if hi == lo { 0.0 } else { u - lo as f64 },
            }
        })
        .collect()
}

/// The student: a stack of square coefficient grids whose bilinear
/// upsamplings are summed into one density field.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidField {
    resolutions: Vec<usize>,
    offsets: Vec<usize>,
    coeffs: Vec<f64>,
    render_res: usize,
    stage: Stage,
}

impl PyramidField {
    /// Zero field with the given level resolutions.
    pub fn zeros(resolutions: &[usize], render_res: usize, stage: Stage) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::invalid("a field needs at least one level"));
        }
        if resolutions[0] == 0 || resolutions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("level resolutions must be positive and strictly increasing"));
        }
        let finest = *resolutions.last().unwrap();
        if finest > render_res {
            return Err(Error::invalid(format!(
                "finest level {finest} exceeds render resolution {render_res}"
            )));
        }
        let mut offsets = Vec::with_capacity(resolutions.len() + 1);
        let mut total = 0;
        for r in resolutions {
            offsets.push(total);
            total += r * r;
        }
        offsets.push(total);
        Ok(Self {
            resolutions: resolutions.to_vec(),
            offsets,
            coeffs: vec![0.0; total],
            render_res,
            stage,
        })
    }

    /// Levels doubling from 4 up to `render_res`.
    pub fn doubling(render_res: usize, stage: Stage) -> Result<Self> {
        let mut res = vec![];
        let mut r = 4.min(render_res);
        while r <= render_res {
            res.push(r);
            r *= 2;
        }
        if *res.last().unwrap() != render_res {
            res.push(render_res);
        }
        Self::zeros(&res, render_res, stage)
    }

    pub fn level_count(&self) -> usize {
        self.resolutions.len()
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn render_res(&self) -> usize {
        self.render_res
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// All coefficients, coarsest level first, each level row-major.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn level(&self, i: usize) -> Grid {
        let r = self.resolutions[i];
        Grid::from_vec(r, r, self.coeffs[self.offsets[i]..self.offsets[i + 1]].to_vec())
            .expect("level slice matches its resolution")
    }

    pub fn set_level(&mut self, i: usize, grid: &Grid) -> Result<()> {
        let r = self.resolutions[i];
        if grid.width() != r || grid.height() != r {
            return Err(Error::ShapeMismatch {
                expected: r * r,
                got: grid.data().len(),
            });
        }
        self.coeffs[self.offsets[i]..self.offsets[i + 1]].copy_from_slice(grid.data());
        Ok(())
    }

    /// Range of `coeffs()` owned by level `i`.
    pub fn level_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn all_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `sum_i mask_i * upsample(level_i)` at the render resolution. Mask
    /// entries may be soft.
    pub fn render(&self, mask: &[f64]) -> Result<Grid> {
        check_len(self.level_count(), mask.len())?;
        let n = self.render_res;
        let mut out = Grid::square(n);
        let mut row = vec![0.0; n];
        for (i, &m) in mask.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let r = self.resolutions[i];
            let level = &self.coeffs[self.level_range(i)];
            let t = taps(r, n);
            for (y, ty) in t.iter().enumerate() {
                let (a, b) = (&level[ty.lo * r..(ty.lo + 1) * r], &level[ty.hi * r..(ty.hi + 1) * r]);
                for (x, tx) in t.iter().enumerate() {
                    let top = a[tx.lo] + tx.w_hi * (a[tx.hi] - a[tx.lo]);
                    let bot = b[tx.lo] + tx.w_hi * (b[tx.hi] - b[tx.lo]);
                    row[x] = top + ty.w_hi * (bot - top);
                }
                for (o, v) in out.data_mut()[y * n..(y + 1) * n].iter_mut().zip(&row) {
                    *o += m * v;
                }
            }
        }
        Ok(out)
    }

    /// Exact adjoint of [`render`](Self::render): maps a gradient on the
    /// rendered grid to a gradient on `coeffs()`.
    pub fn render_adjoint(&self, field_grad: &Grid, mask: &[f64]) -> Result<Vec<f64>> {
        check_len(self.level_count(), mask.len())?;
        let n = self.render_res;
        if field_grad.width() != n || field_grad.height() != n {
            return Err(Error::ShapeMismatch {
                expected: n * n,
                got: field_grad.data().len(),
            });
        }
        let mut grad = vec![0.0; self.coeffs.len()];
        for (i, &m) in mask.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let r = self.resolutions[i];
            let range = self.level_range(i);
            let level = &mut grad[range];
            let t = taps(r, n);
            for (y, ty) in t.iter().enumerate() {
                let g_row = &field_grad.data()[y * n..(y + 1) * n];
                for (tx, &g) in t.iter().zip(g_row) {
                    let g = m * g;
                    let (wy1, wx1) = (ty.w_hi, tx.w_hi);
                    let (wy0, wx0) = (1.0 - wy1, 1.0 - wx1);
                    level[ty.lo * r + tx.lo] += g * wy0 * wx0;
                    level[ty.lo * r + tx.hi] += g * wy0 * wx1;
                    level[ty.hi * r + tx.lo] += g * wy1 * wx0;
                    level[ty.hi * r + tx.hi] += g * wy1 * wx1;
                }
            }
        }
        Ok(grad)
    }

    /// Moves to stage two at a finer render resolution. Existing levels keep
    /// their coefficients; zero levels are appended, doubling from the
    /// current finest, until the new resolution is reached.
    pub fn upgrade_stage(&self, new_render_res: usize) -> Result<PyramidField> {
        if new_render_res <= self.render_res {
            return Err(Error::invalid(format!(
                "new render resolution {new_render_res} must exceed {}",
                self.render_res
            )));
        }
        let mut res = self.resolutions.clone();
        let mut r = *res.last().unwrap();
        while r * 2 <= new_render_res {
            r *= 2;
            res.push(r);
        }
        if r != new_render_res {
            res.push(new_render_res);
        }
        let mut out = PyramidField::zeros(&res, new_render_res, Stage::Two)?;
        out.coeffs[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        Ok(out)
    }
}
