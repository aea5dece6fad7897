//! Oriented-rectangle narrow phase: separating-axis test with a clipped
//! reference/incident-edge manifold (at most two points per pair).

use crate::geom::{Pose2D, Vec2};

/// An oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub half: Vec2,
    angle: f64,
    /// (sin, cos) of `angle`.
    trig: (f64, f64),
}

/// Axis-aligned bounds used by the broad phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn overlaps(&self, o: &Aabb, margin: f64) -> bool {
        self.min.x <= o.max.x + margin
            && o.min.x <= self.max.x + margin
            && self.min.y <= o.max.y + margin
            && o.min.y <= self.max.y + margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldPoint {
    pub point: Vec2,
    pub depth: f64,
}

/// Contact manifold between `a` and `b`; `normal` points from `a` toward `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub normal: Vec2,
    pub points: Vec<ManifoldPoint>,
}

impl Manifold {
    pub fn max_depth(&self) -> f64 {
        self.points.iter().map(|p| p.depth).fold(0.0, f64::max)
    }
}

impl Obb {
    pub fn new(center: Vec2, half: Vec2, angle: f64) -> Self {
        Self {
            center,
            half,
            angle,
            trig: angle.sin_cos(),
        }
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn from_pose(pose: &Pose2D, half: Vec2) -> Self {
        Self::new(pose.position(), half, pose.theta)
    }

    /// Counter-clockwise corners.
    pub fn vertices(&self) -> [Vec2; 4] {
        self.vertices_with(self.trig)
    }

    /// Outward normal of edge `i` (edge from vertex `i` to `i + 1`).
    pub fn normals(&self) -> [Vec2; 4] {
        self.normals_with(self.trig)
    }

    fn vertices_with(&self, (s, c): (f64, f64)) -> [Vec2; 4] {
        let (hx, hy) = (self.half.x, self.half.y);
        [
            Vec2::new(-hx, -hy),
            Vec2::new(hx, -hy),
            Vec2::new(hx, hy),
            Vec2::new(-hx, hy),
        ]
        .map(|v| self.center + Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y))
    }

    fn normals_with(&self, (s, c): (f64, f64)) -> [Vec2; 4] {
        [
            Vec2::new(0.0, -1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(-1.0, 0.0),
        ]
        .map(|n| Vec2::new(c * n.x - s * n.y, s * n.x + c * n.y))
    }

    pub fn aabb(&self) -> Aabb {
        let (s, c) = self.trig;
        let ex = (c * self.half.x).abs() + (s * self.half.y).abs();
        let ey = (s * self.half.x).abs() + (c * self.half.y).abs();
        Aabb {
            min: Vec2::new(self.center.x - ex, self.center.y - ey),
            max: Vec2::new(self.center.x + ex, self.center.y + ey),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = (p - self.center).rotate(-self.angle);
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y
    }

    /// Ray hit distance `t >= 0` along `dir` (unit), if any. Slab test in the local frame.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let o = (origin - self.center).rotate(-self.angle);
        let d = dir.rotate(-self.angle);
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for (oc, dc, h) in [(o.x, d.x, self.half.x), (o.y, d.y, self.half.y)] {
            if dc.abs() < 1e-15 {
                if oc.abs() > h {
                    return None;
                }
            } else {
                let t1 = (-h - oc) / dc;
                let t2 = (h - oc) / dc;
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_min = t_min.max(lo);
                t_max = t_max.min(hi);
                if t_min > t_max {
                    return None;
                }
            }
        }
        if t_max < 0.0 {
            None
        } else {
            Some(t_min.max(0.0))
        }
    }
}

fn max_separation(a: &[Vec2; 4], an: &[Vec2; 4], b: &[Vec2; 4]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..4 {
        let n = an[i];
        let v = a[i];
        let s = b
            .iter()
            .map(|w| n.dot(*w - v))
            .fold(f64::INFINITY, f64::min);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

fn clip_segment(seg: [Vec2; 2], n: Vec2, offset: f64) -> Option<[Vec2; 2]> {
    let d0 = n.dot(seg[0]) - offset;
    let d1 = n.dot(seg[1]) - offset;
    let mut out = [Vec2::ZERO; 3];
    let mut n_out = 0;
    for (p, d) in [(seg[0], d0), (seg[1], d1)] {
        if d <= 0.0 {
            out[n_out] = p;
            n_out += 1;
        }
    }
    if d0 * d1 < 0.0 {
        let t = d0 / (d0 - d1);
        out[n_out] = seg[0] + (seg[1] - seg[0]) * t;
        n_out += 1;
    }
    (n_out >= 2).then_some([out[0], out[1]])
}

/// Computes the contact manifold of two rectangles, or `None` when separated.
pub fn collide(a: &Obb, b: &Obb) -> Option<Manifold> {
    let va = a.vertices();
    let na = a.normals();
    let vb = b.vertices();
    let nb = b.normals();

    let (ea, sa) = max_separation(&va, &na, &vb);
    if sa > 0.0 {
        return None;
    }
    let (eb, sb) = max_separation(&vb, &nb, &va);
    if sb > 0.0 {
        return None;
    }

    // Prefer `a` as reference unless `b` is clearly better, for frame-to-frame stability.
    let flip = sb > sa + 1e-9;
    let (rv, rn, re, iv, inn) = if flip {
        (&vb, &nb, eb, &va, &na)
    } else {
        (&va, &na, ea, &vb, &nb)
    };

    let ref_n = rn[re];
    let incident = (0..4)
        .min_by(|&i, &j| {
            ref_n
                .dot(inn[i])
                .partial_cmp(&ref_n.dot(inn[j]))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    let inc = [iv[incident], iv[(incident + 1) % 4]];

    let r1 = rv[re];
    let r2 = rv[(re + 1) % 4];
    let tangent = (r2 - r1).normalized();
    let seg = clip_segment(inc, -tangent, -tangent.dot(r1))?;
    let seg = clip_segment(seg, tangent, tangent.dot(r2))?;

    let ref_offset = ref_n.dot(r1);
    let points: Vec<ManifoldPoint> = seg
        .iter()
        .filter_map(|&p| {
            let sep = ref_n.dot(p) - ref_offset;
            (sep <= 0.0).then(|| ManifoldPoint {
                point: p - ref_n * (0.5 * sep),
                depth: -sep,
            })
        })
        .collect();
    if points.is_empty() {
        return None;
    }
    let normal = if flip { -ref_n } else { ref_n };
    Some(Manifold { normal, points })
}

/// Deepest penetration between two rectangles (0 when separated).
pub fn penetration(a: &Obb, b: &Obb) -> f64 {
    collide(a, b).map(|m| m.max_depth()).unwrap_or(0.0)
}
