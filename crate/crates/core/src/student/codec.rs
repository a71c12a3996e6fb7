use crate::error::{check_len, Error, Result};

/// Fixed affine map from mean ray density to teacher input values, chosen so
/// typical projections occupy roughly `[-1, 0.5]`.
pub const DENSITY_SCALE: f64 = 4.0;
pub const DENSITY_OFFSET: f64 = -1.0;

/// Converts rendered projections of any render resolution into the fixed
/// length vectors the teachers were trained on: divide by the ray length to
/// get mean density, average-pool down to `teacher_res` bins, then apply the
/// density affine map. Linear, so its adjoint is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionCodec {
    teacher_res: usize,
}

impl ProjectionCodec {
    pub fn new(teacher_res: usize) -> Self {
        Self { teacher_res }
    }

    pub fn teacher_res(&self) -> usize {
        self.teacher_res
    }

    fn factor(&self, render_res: usize) -> Result<usize> {
        if self.teacher_res == 0 || render_res < self.teacher_res || !render_res.is_multiple_of(self.teacher_res) {
            return Err(Error::invalid(format!(
                "render resolution {render_res} is not a multiple of teacher resolution {}",
                self.teacher_res
            )));
        }
        Ok(render_res / self.teacher_res)
    }

    /// Mean density per pooled bin, before the affine map.
    pub fn mean_density(&self, proj: &[f64]) -> Result<Vec<f64>> {
        let n = proj.len();
        let f = self.factor(n)?;
        let norm = 1.0 / (f * n) as f64;
        Ok(proj.chunks_exact(f).map(|c| c.iter().sum::<f64>() * norm).collect())
    }

    pub fn encode(&self, proj: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .mean_density(proj)?
            .into_iter()
            .map(|m| DENSITY_SCALE * m + DENSITY_OFFSET)
            .collect())
    }

    /// Teacher-space values back to mean density.
    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - DENSITY_OFFSET) / DENSITY_SCALE).collect()
    }

    /// Gradient in teacher space to gradient on a projection of length
    /// `render_res`.
    pub fn encode_adjoint(&self, grad: &[f64], render_res: usize) -> Result<Vec<f64>> {
        let f = self.factor(render_res)?;
        check_len(self.teacher_res, grad.len())?;
        let scale = DENSITY_SCALE / (f * render_res) as f64;
        Ok(grad
            .iter()
            .flat_map(|g| std::iter::repeat_n(g * scale, f))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_pools_and_maps() {
        let c = ProjectionCodec::new(2);
        // Render resolution 4: ray length 4, pool factor 2.
        let x = c.encode(&[0.0, 4.0, 2.0, 2.0]).unwrap();
        assert!((x[0] - (4.0 * 0.5 - 1.0)).abs() < 1e-15);
        assert!((x[1] - (4.0 * 0.5 - 1.0)).abs() < 1e-15);
        assert_eq!(c.decode(&x), vec![0.5, 0.5]);
        assert!(c.encode(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let c = ProjectionCodec::new(4);
        let p: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = [0.3, -1.0, 2.0, 0.1];
        let ex = c.encode(&p).unwrap();
        let lhs: f64 = ex.iter().zip(&y).map(|(a, b)| (a - DENSITY_OFFSET) * b).sum();
        let back = c.encode_adjoint(&y, 16).unwrap();
        let rhs: f64 = back.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
