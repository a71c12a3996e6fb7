use std::f64::consts::TAU;

use rand::Rng;

use super::{project, ProjectionCodec, ViewPose};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::teacher::{Condition, ConditionKind, TeacherDataset};

/// Shape families of the synthetic corpus. The discriminant is the class id
/// seen by class-conditioned teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Ellipse = 0,
    Rectangle = 1,
    /// Ellipse with a rectangular bump on one side, so it has no mirror
    /// symmetry.
    Composite = 2,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Composite];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown shape class {id}")))
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(Self::Ellipse),
            "rectangle" => Ok(Self::Rectangle),
            "composite" => Ok(Self::Composite),
            _ => Err(Error::invalid(format!("unknown shape `{s}`"))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ellipse => "ellipse",
            Self::Rectangle => "rectangle",
            Self::Composite => "composite",
        })
    }
}

/// A filled shape in coordinates normalized by the grid width, centered on
/// the grid center. Every shape is elongated along `x` before its small
/// rotation, so its projections depend strongly on the view angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Half extents along the shape's own axes.
    pub half: (f64, f64),
    pub rotation: f64,
    /// Bump center and half size in shape coordinates (composite only).
    pub bump: Option<((f64, f64), f64)>,
}

impl Shape {
    pub fn random<R: Rng + ?Sized>(kind: ShapeKind, rng: &mut R) -> Self {
        let center = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
        let rotation = rng.random_range(-0.15..0.15);
        let (half, bump) = match kind {
            ShapeKind::Ellipse => ((rng.random_range(0.25..0.35), rng.random_range(0.08..0.14)), None),
            ShapeKind::Rectangle => ((rng.random_range(0.22..0.32), rng.random_range(0.07..0.12)), None),
            ShapeKind::Composite => {
                let a = rng.random_range(0.2..0.28);
                let b = rng.random_range(0.07..0.11);
                let s = rng.random_range(0.06..0.09);
                ((a, b), Some(((0.55 * a, b + 0.6 * s), s)))
            }
        };
        Self {
            kind,
            center,
            half,
            rotation,
            bump,
        }
    }

    /// A shape of a uniformly chosen kind.
    pub fn random_any<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
        Self::random(kind, rng)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let (du, dv) = (u - self.center.0, v - self.center.1);
        let (p, q) = (c * du + s * dv, -s * du + c * dv);
        let (a, b) = self.half;
        let body = match self.kind {
            ShapeKind::Rectangle => p.abs() <= a && q.abs() <= b,
            ShapeKind::Ellipse | ShapeKind::Composite => (p / a).powi(2) + (q / b).powi(2) <= 1.0,
        };
        body || self
            .bump
            .is_some_and(|((bx, by), r)| (p - bx).abs() <= r && (q - by).abs() <= r)
    }

    /// Density grid with 2x2 supersampling; values lie in `[0, 1]`.
    pub fn rasterize(&self, n: usize) -> Grid {
        let c = (n as f64 - 1.0) / 2.0;
        let scale = 1.0 / n as f64;
        let mut g = Grid::square(n);
        for y in 0..n {
            for x in 0..n {
                let mut hits = 0;
                for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let u = (x as f64 + ox - c) * scale;
                    let v = (y as f64 + oy - c) * scale;
                    hits += self.contains(u, v) as u32;
                }
                g.set(x, y, hits as f64 / 4.0);
            }
        }
        g
    }
}

/// Encoded projections of random shapes at random views, labelled for the
/// requested conditioning. The same seed yields the same samples whatever the
/// condition kind, so teachers of both kinds see one corpus.
pub fn teacher_dataset<R: Rng + ?Sized>(
    count: usize,
    cond_kind: ConditionKind,
    codec: &ProjectionCodec,
    rng: &mut R,
) -> Result<TeacherDataset> {
    let res = codec.teacher_res();
    let mut samples = Vec::with_capacity(count);
    let mut conds = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = Shape::random_any(rng);
        let pose = ViewPose::new(rng.random_range(0.0..TAU));
        let proj = project(&shape.rasterize(res), pose)?;
        samples.push(codec.encode(&proj)?);
        conds.push(match cond_kind {
            ConditionKind::None => Condition::None,
            ConditionKind::View => Condition::view(pose.angle()),
            ConditionKind::Class { .. } => Condition::class(shape.kind.class_id()),
        });
    }
    TeacherDataset::new(samples, conds)
}
