use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Where a contour vertex came from: it sits at fraction `w` along the grid
/// edge from node `a` to node `b`, with `w = (iso - f_a) / (f_b - f_a)`.
/// Nodes outside the grid (the padding ring) are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSource {
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub fa: f64,
    pub fb: f64,
    /// Unit step from `a` to `b`: `(1, 0)` or `(0, 1)`.
    pub axis: (f64, f64),
}

/// Closed polygon in field coordinates (`x` = column, `y` = row). Vertex `i`
/// is adjacent to `i - 1` and `i + 1`, cyclically.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoContour {
    vertices: Vec<(f64, f64)>,
    sources: Vec<EdgeSource>,
    iso: f64,
}

impl IsoContour {
    /// A polygon with no link back to a field.
    pub fn from_vertices(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("a contour needs at least 3 vertices"));
        }
        if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("contour vertices must be finite"));
        }
        Ok(Self {
            vertices,
            sources: vec![],
            iso: 0.0,
        })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn iso(&self) -> f64 {
        self.iso
    }

    /// Signed shoelace area; positive for counter-clockwise order.
    pub fn area(&self) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        0.5 * acc
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (x0, y0) = self.vertices[i];
                let (x1, y1) = self.vertices[(i + 1) % n];
                (x1 - x0).hypot(y1 - y0)
            })
            .sum()
    }

    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.vertices {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        (lo, hi)
    }

    /// Rows of the uniform Laplacian applied to the vertices:
    /// `2 v_i - v_{i-1} - v_{i+1}`.
    pub fn laplacian_rows(&self) -> Vec<(f64, f64)> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (x, y) = self.vertices[i];
                let (xp, yp) = self.vertices[(i + n - 1) % n];
                let (xn, yn) = self.vertices[(i + 1) % n];
                (2.0 * x - xp - xn, 2.0 * y - yp - yn)
            })
            .collect()
    }

    /// One step of uniform Laplacian smoothing, `V <- V - tau * L V`.
    pub fn smoothed(&self, tau: f64) -> IsoContour {
        let vertices = self
            .vertices
            .iter()
            .zip(self.laplacian_rows())
            .map(|(&(x, y), (lx, ly))| (x - tau * lx, y - tau * ly))
            .collect();
        IsoContour {
            vertices,
            sources: vec![],
            iso: self.iso,
        }
    }

    /// Pulls a per-vertex gradient back onto the field values the vertices
    /// were interpolated from. Contours built without a field give zeros.
    pub fn vertex_grad_to_field(&self, grad: &[(f64, f64)], width: usize, height: usize) -> Grid {
        let mut out = Grid::zeros(width, height);
        for (src, &(gx, gy)) in self.sources.iter().zip(grad) {
            let along = gx * src.axis.0 + gy * src.axis.1;
            let d = src.fb - src.fa;
            // w = (iso - fa) / d
            let dw_dfa = (self.iso - src.fb) / (d * d);
            let dw_dfb = -(self.iso - src.fa) / (d * d);
            if let Some(a) = src.a {
                out.data_mut()[a] += along * dw_dfa;
            }
            if let Some(b) = src.b {
                out.data_mut()[b] += along * dw_dfb;
            }
        }
        out
    }
}

/// Edge of the padded lattice: horizontal edges join `(x, y)` to `(x+1, y)`,
/// vertical edges join `(x, y)` to `(x, y+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Marching squares on `field` at level `iso`. The grid is surrounded by a
/// ring below `iso` so every component closes; saddles are resolved by the
/// cell-center average. Returns the component with the longest perimeter.
pub fn extract_contour(field: &Grid, iso: f64) -> Result<IsoContour> {
    let (w, h) = (field.width(), field.height());
    let pad = iso - 1.0;
    // Padded coordinates run over 0..w+2; field node (x, y) is (x+1, y+1).
    let value = |px: usize, py: usize| -> (f64, Option<usize>) {
        if px == 0 || py == 0 || px > w || py > h {
            (pad, None)
        } else {
            let (x, y) = (px - 1, py - 1);
            (field.get(x, y), Some(y * w + x))
        }
    };
    let above = |v: f64| v >= iso;

    let mut links: HashMap<Edge, Vec<Edge>> = HashMap::new();
    let mut link = |a: Edge, b: Edge| {
        links.entry(a).or_default().push(b);
        links.entry(b).or_default().push(a);
    };
    for py in 0..=h {
        for px in 0..=w {
            let tl = value(px, py).0;
            let tr = value(px + 1, py).0;
            let br = value(px + 1, py + 1).0;
            let bl = value(px, py + 1).0;
            let code = (above(tl) as u8) | (above(tr) as u8) << 1 | (above(br) as u8) << 2 | (above(bl) as u8) << 3;
            let top = Edge::H(px, py);
            let bottom = Edge::H(px, py + 1);
            let left = Edge::V(px, py);
            let right = Edge::V(px + 1, py);
            match code {
                0 | 15 => {}
                1 | 14 => link(left, top),
                2 | 13 => link(top, right),
                3 | 12 => link(left, right),
                4 | 11 => link(right, bottom),
                6 | 9 => link(top, bottom),
                7 | 8 => link(left, bottom),
                5 | 10 => {
                    let center_above = above(0.25 * (tl + tr + br + bl));
                    // Diagonal tl/br above (5) or tr/bl above (10).
                    if (code == 5) == center_above {
                        link(left, bottom);
                        link(top, right);
                    } else {
                        link(left, top);
                        link(right, bottom);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    if links.is_empty() {
        return Err(Error::EmptyContour { iso });
    }

    let vertex = |e: Edge| -> ((f64, f64), EdgeSource) {
        let ((ax, ay), axis) = match e {
            Edge::H(x, y) => ((x, y), (1.0, 0.0)),
            Edge::V(x, y) => ((x, y), (0.0, 1.0)),
        };
        let (bx, by) = (ax + axis.0 as usize, ay + axis.1 as usize);
        let (fa, ia) = value(ax, ay);
        let (fb, ib) = value(bx, by);
        let t = (iso - fa) / (fb - fa);
        let pos = (ax as f64 - 1.0 + t * axis.0, ay as f64 - 1.0 + t * axis.1);
        (
            pos,
            EdgeSource {
                a: ia,
                b: ib,
                fa,
                fb,
                axis,
            },
        )
    };

    // Deterministic traversal order.
    let mut starts: Vec<Edge> = links.keys().copied().collect();
    starts.sort_by_key(|e| match *e {
        Edge::H(x, y) => (y, x, 0),
        Edge::V(x, y) => (y, x, 1),
    });
    let mut seen: HashMap<Edge, ()> = HashMap::new();
    let mut best: Option<IsoContour> = None;
    for start in starts {
        if seen.contains_key(&start) {
            continue;
        }
        let mut loop_edges = vec![start];
        seen.insert(start, ());
        let mut prev = start;
        let mut cur = links[&start][0];
        while cur != start {
            seen.insert(cur, ());
            loop_edges.push(cur);
            let next = links[&cur].iter().copied().find(|&n| n != prev).unwrap_or(prev);
            prev = cur;
            cur = next;
        }
        if loop_edges.len() < 3 {
            continue;
        }
        let (vertices, sources): (Vec<_>, Vec<_>) = loop_edges.into_iter().map(vertex).unzip();
        let c = IsoContour { vertices, sources, iso };
        if best.as_ref().is_none_or(|b| c.perimeter() > b.perimeter()) {
            best = Some(c);
        }
    }
    best.ok_or(Error::EmptyContour { iso })
}
