//! River centerline: Catmull-Rom resampling, arc length and nearest-point
//! projection accelerated by a uniform grid.

use alloc::vec;
use alloc::vec::Vec;

/// Maximum spacing between resampled centerline vertices (meters).
const RESAMPLE_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        libm::hypot(self.x, self.y)
    }
}

/// Which end of the centerline a position projects beyond.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Upstream,
    Downstream,
}

/// Nearest-point projection of a planar position onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point; outside `[0, length]` when `beyond` is set.
    pub arc: f64,
    /// Signed distance, positive to the left of the flow direction.
    pub offset: f64,
    /// Unit tangent at the foot point.
    pub tangent: Point,
    pub beyond: Option<End>,
}

#[derive(Debug, Clone)]
struct Grid {
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl Grid {
    fn cell_of(&self, p: Point) -> Option<usize> {
        let cx = libm::floor((p.x - self.origin.x) / self.cell);
        let cy = libm::floor((p.y - self.origin.y) / self.cell);
        if cx < 0.0 || cy < 0.0 || cx >= self.cols as f64 || cy >= self.rows as f64 {
            return None;
        }
        Some(cy as usize * self.cols + cx as usize)
    }
}

/// Densely resampled river centerline.
#[derive(Debug, Clone)]
pub struct Centerline {
    vertices: Vec<Point>,
    /// Arc length at each vertex.
    arc: Vec<f64>,
    /// Unit tangent of each edge.
    tangents: Vec<Point>,
    radius: f64,
    grid: Grid,
}

impl Centerline {
    /// Resamples `control` with a uniform Catmull-Rom spline. Projections are
    /// only resolved for positions within `radius` of the centerline.
    ///
    /// Callers guarantee at least two distinct control points and `radius > 0`.
    pub fn new(control: &[Point], radius: f64) -> Self {
        let vertices = resample(control);
        let mut arc = Vec::with_capacity(vertices.len());
        let mut tangents = Vec::with_capacity(vertices.len() - 1);
        arc.push(0.0);
        for w in vertices.windows(2) {
            let d = w[1].sub(w[0]);
            let len = d.norm();
            arc.push(arc.last().copied().unwrap_or(0.0) + len);
            tangents.push(Point::new(d.x / len, d.y / len));
        }
        let grid = build_grid(&vertices, radius);
        Self {
            vertices,
            arc,
            tangents,
            radius,
            grid,
        }
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().expect("non-empty centerline")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Point and unit tangent at arc length `s` (clamped to the centerline).
    pub fn at_arc(&self, s: f64) -> (Point, Point) {
        let s = s.clamp(0.0, self.length());
        let edge = match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.tangents.len() - 1),
            Err(i) => (i - 1).min(self.tangents.len() - 1),
        };
        let t = self.tangents[edge];
        let along = s - self.arc[edge];
        let p = self.vertices[edge];
        (Point::new(p.x + t.x * along, p.y + t.y * along), t)
    }

    /// Nearest-point projection, or `None` when `p` is farther than the
    /// configured radius from every centerline edge.
    pub fn project(&self, p: Point) -> Option<Projection> {
        let cell = self.grid.cell_of(p)?;
        let mut best: Option<(f64, usize, f64)> = None;
        for &edge in &self.grid.cells[cell] {
            let edge = edge as usize;
            let a = self.vertices[edge];
            let t = self.tangents[edge];
            let len = self.arc[edge + 1] - self.arc[edge];
            let along = p.sub(a).dot(t).clamp(0.0, len);
            let foot = Point::new(a.x + t.x * along, a.y + t.y * along);
            let dist = p.sub(foot).norm();
            if best.is_none_or(|(d, _, _)| dist < d) {
                best = Some((dist, edge, along));
            }
        }
        let (dist, edge, along) = best?;
        if dist > self.radius {
            return None;
        }
        let a = self.vertices[edge];
        let t = self.tangents[edge];
        let rel = p.sub(a);
        let last = self.tangents.len() - 1;
        let raw_along = rel.dot(t);
        let beyond = if edge == 0 && raw_along < 0.0 {
            Some(End::Upstream)
        } else if edge == last && raw_along > self.arc[edge + 1] - self.arc[edge] {
            Some(End::Downstream)
        } else {
            None
        };
        let (arc, offset) = match beyond {
            Some(_) => (self.arc[edge] + raw_along, t.cross(rel)),
            None => {
                let foot = Point::new(a.x + t.x * along, a.y + t.y * along);
                let side = t.cross(p.sub(foot));
                let offset = if side < 0.0 { -dist } else { dist };
                (self.arc[edge] + along, offset)
            }
        };
        Some(Projection {
            arc,
            offset,
            tangent: t,
            beyond,
        })
    }
}

fn catmull_rom(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2
            + (-a + 3.0 * b - 3.0 * c + d) * t3)
    };
    Point::new(f(p0.x, p1.x, p2.x, p3.x), f(p0.y, p1.y, p2.y, p3.y))
}

fn resample(control: &[Point]) -> Vec<Point> {
    let n = control.len();
    let ghost_first = Point::new(
        2.0 * control[0].x - control[1].x,
        2.0 * control[0].y - control[1].y,
    );
    let ghost_last = Point::new(
        2.0 * control[n - 1].x - control[n - 2].x,
        2.0 * control[n - 1].y - control[n - 2].y,
    );
    let get = |i: isize| -> Point {
        if i < 0 {
            ghost_first
        } else if i as usize >= n {
            ghost_last
        } else {
            control[i as usize]
        }
    };
    let mut out = Vec::new();
    for i in 0..n - 1 {
        let (p0, p1, p2, p3) = (
            get(i as isize - 1),
            get(i as isize),
            get(i as isize + 1),
            get(i as isize + 2),
        );
        let chord = p2.sub(p1).norm();
        let steps = libm::ceil(chord / RESAMPLE_SPACING).max(1.0) as usize;
        for j in 0..steps {
            let q = catmull_rom(p0, p1, p2, p3, j as f64 / steps as f64);
            if out.last().is_none_or(|&l: &Point| q.sub(l).norm() > 1e-9) {
                out.push(q);
            }
        }
    }
    let end = control[n - 1];
    if out.last().is_none_or(|&l: &Point| end.sub(l).norm() > 1e-9) {
        out.push(end);
    }
    out
}

fn build_grid(vertices: &[Point], radius: f64) -> Grid {
    let (mut lo, mut hi) = (vertices[0], vertices[0]);
    for v in vertices {
        lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
        hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
    }
    let cell = radius.max(4.0);
    let origin = Point::new(lo.x - radius - cell, lo.y - radius - cell);
    let cols = libm::ceil((hi.x + radius + cell - origin.x) / cell) as usize + 1;
    let rows = libm::ceil((hi.y + radius + cell - origin.y) / cell) as usize + 1;
    let mut cells = vec![Vec::new(); cols * rows];
    for (edge, w) in vertices.windows(2).enumerate() {
        let x0 = w[0].x.min(w[1].x) - radius;
        let x1 = w[0].x.max(w[1].x) + radius;
        let y0 = w[0].y.min(w[1].y) - radius;
        let y1 = w[0].y.max(w[1].y) + radius;
        let cx0 = libm::floor((x0 - origin.x) / cell) as usize;
        let cx1 = libm::floor((x1 - origin.x) / cell) as usize;
        let cy0 = libm::floor((y0 - origin.y) / cell) as usize;
        let cy1 = libm::floor((y1 - origin.y) / cell) as usize;
        for cy in cy0..=cy1.min(rows - 1) {
            for cx in cx0..=cx1.min(cols - 1) {
                cells[cy * cols + cx].push(edge as u32);
            }
        }
    }
    Grid {
        origin,
        cell,
        cols,
        rows,
        cells,
    }
}
