//! The student field and its renderer.
//!
//! [`PyramidField`] sums bilinearly upsampled coefficient grids of doubling
//! resolution, so band masks can switch detail levels on and off. Views are
//! parallel-beam line integrals at an angle ([`project`]) with an exact
//! adjoint, which makes every gradient through the renderer exact. Marching
//! squares gives the closed iso-contour used by the smoothness regularizer.

mod codec;
mod contour;
mod field;
mod projector;
mod shapes;

pub use codec::{ProjectionCodec, DENSITY_OFFSET, DENSITY_SCALE};
pub use contour::{extract_contour, EdgeSource, IsoContour};
pub use field::PyramidField;
pub use projector::{project, project_adjoint};
pub use shapes::{teacher_dataset, Shape, ShapeKind};

use std::f64::consts::{PI, TAU};

/// Optimization stage: coarse render resolution with a single teacher, then
/// fine resolution with both teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    One,
    Two,
}

/// Camera angle, kept in `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPose(f64);

impl ViewPose {
    pub fn new(angle: f64) -> Self {
        let a = angle.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs.
        Self(if a >= TAU { 0.0 } else { a })
    }

    pub fn angle(self) -> f64 {
        self.0
    }

    /// Angle from `reference` to `self`, in `[0, 2pi)`.
    pub fn relative_to(self, reference: ViewPose) -> f64 {
        ViewPose::new(self.0 - reference.0).0
    }

    /// Shortest angular distance, in `[0, pi]`.
    pub fn distance(self, other: ViewPose) -> f64 {
        let d = self.relative_to(other);
        if d > PI {
            TAU - d
        } else {
            d
        }
    }
}
