//! Egocentric column renderer: one ray per image column, first hit wins.

use crate::geom::{Pose2D, Vec2};
use crate::sim::collide::Obb;
use crate::sim::WorldState;

pub const CAMERA_SIZE: usize = 128;
pub const FIELD_OF_VIEW: f64 = 140.0 * std::f64::consts::PI / 180.0;
/// Camera sits this far behind the tool point, on the probe axis.
pub const CAMERA_SETBACK: f64 = 0.06;
/// Band height in pixels is `BAND_SCALE / distance`, clamped to the image.
pub const BAND_SCALE: f64 = 8.0;

pub const CEILING: [u8; 3] = [70, 70, 82];
pub const FLOOR: [u8; 3] = [150, 120, 90];
pub const WALL: [u8; 3] = [190, 190, 180];

/// 128x128 RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CameraImage {
    pub data: Vec<u8>,
}

impl CameraImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * CAMERA_SIZE + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Option<Self> {
        (bytes.len() == CAMERA_SIZE * CAMERA_SIZE * 3).then_some(Self { data: bytes })
    }

    /// Box-filter downsampling by an integer factor, channels scaled to [0, 1].
    /// Output layout is channel-major (3 x s x s).
    pub fn pooled(&self, factor: usize) -> Vec<f32> {
        let s = CAMERA_SIZE / factor;
        let mut out = vec![0f32; 3 * s * s];
        let norm = 1.0 / (factor * factor) as f32 / 255.0;
        for y in 0..CAMERA_SIZE {
            for x in 0..CAMERA_SIZE {
                let p = self.pixel(y, x);
                let o = (y / factor) * s + x / factor;
                for ch in 0..3 {
                    out[ch * s * s + o] += p[ch] as f32 * norm;
                }
            }
        }
        out
    }
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub color: [u8; 3],
}

/// Casts one ray against every live body (the probe itself excluded) and the walls.
pub fn cast_ray(world: &WorldState, origin: Vec2, dir: Vec2) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    let mut consider = |obb: &Obb, color: [u8; 3]| {
        if let Some(t) = obb.ray_hit(origin, dir) {
            if best.is_none_or(|b| t < b.distance) {
                best = Some(RayHit { distance: t, color });
            }
        }
    };
    for b in world.bodies.iter().filter(|b| !b.fallen) {
        consider(&b.obb(), b.class.color());
    }
    for w in &world.walls {
        consider(w, WALL);
    }
    best
}

/// Renders the view from a camera mounted behind the tool point of `probe_pose`.
pub fn render_egocentric(world: &WorldState, probe_pose: &Pose2D) -> CameraImage {
    let n = CAMERA_SIZE;
    let mut data = vec![0u8; n * n * 3];
    let origin = probe_pose.transform_point(Vec2::new(-CAMERA_SETBACK, 0.0));
    let half = n / 2;
    for col in 0..n {
        // Column 0 looks furthest left.
        let a = probe_pose.theta + FIELD_OF_VIEW / 2.0 - (col as f64 + 0.5) * FIELD_OF_VIEW / n as f64;
        let hit = cast_ray(world, origin, Vec2::from_angle(a));
        let (band, color) = match hit {
            Some(h) => {
                let px = (BAND_SCALE / h.distance.max(1e-6)).round().min(n as f64) as usize;
                (px, h.color)
            }
            None => (0, CEILING),
        };
        let top = half.saturating_sub(band / 2);
        let bottom = (top + band).min(n);
        for row in 0..n {
            let c = if row >= top && row < bottom {
                color
            } else if row < half {
                CEILING
            } else {
                FLOOR
            };
            data[(row * n + col) * 3..][..3].copy_from_slice(&c);
        }
    }
    CameraImage { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectClass, ShelfSpec};
    use crate::sim::{Body, SimParams};
    use std::f64::consts::FRAC_PI_2;

    const RED: [u8; 3] = [210, 25, 25];

    fn world(bodies: Vec<Body>) -> WorldState {
        WorldState::new(bodies, ShelfSpec::default(), SimParams::default())
    }

    fn band_colors(img: &CameraImage, col: usize) -> Vec<[u8; 3]> {
        (0..CAMERA_SIZE)
            .map(|r| img.pixel(r, col))
            .filter(|c| *c != CEILING && *c != FLOOR)
            .collect()
    }

    #[test]
    fn empty_shelf_shows_only_walls() {
        let w = world(Vec::new());
        let pose = Pose2D::new(0.19, 0.05, FRAC_PI_2);
        let img = render_egocentric(&w, &pose);
        for col in 0..CAMERA_SIZE {
            for c in band_colors(&img, col) {
                assert_eq!(c, WALL);
            }
        }
        assert!(!band_colors(&img, 64).is_empty());
    }

    #[test]
    fn unobstructed_target_is_red_in_the_center() {
        let t = Body::new(0, Pose2D::new(0.19, 0.45, 0.0), ObjectClass::TargetCanB);
        let img = render_egocentric(&world(vec![t]), &Pose2D::new(0.19, 0.05, FRAC_PI_2));
        for col in [62, 63, 64, 65] {
            let colors = band_colors(&img, col);
            assert!(!colors.is_empty());
            assert!(colors.iter().all(|c| *c == RED));
        }
    }

    #[test]
    fn occluder_hides_target_on_blocked_rays() {
        let pose = Pose2D::new(0.19, 0.05, FRAC_PI_2);
        let target = Body::new(0, Pose2D::new(0.19, 0.45, 0.0), ObjectClass::TargetCanB);
        // Small blue block straight ahead, offset slightly left.
        let blocker = Body::new(1, Pose2D::new(0.175, 0.20, 0.0), ObjectClass::Green);
        let w = world(vec![target, blocker.clone()]);
        let img = render_egocentric(&w, &pose);

        // Independent oracle: per-column first hit among the two hand-placed boxes.
        let origin = pose.transform_point(Vec2::new(-CAMERA_SETBACK, 0.0));
        let mut saw_green = false;
        let mut saw_red = false;
        for col in 0..CAMERA_SIZE {
            let a = pose.theta + FIELD_OF_VIEW / 2.0 - (col as f64 + 0.5) * FIELD_OF_VIEW / 128.0;
            let dir = Vec2::from_angle(a);
            let tb = blocker.obb().ray_hit(origin, dir);
            let tt = w.bodies[0].obb().ray_hit(origin, dir);
            let expect = match (tb, tt) {
                (Some(b), Some(t)) if b < t => Some(ObjectClass::Green.color()),
                (Some(_), None) => Some(ObjectClass::Green.color()),
                (_, Some(_)) => Some(RED),
                _ => None,
            };
            if let Some(e) = expect {
                let colors = band_colors(&img, col);
                assert!(colors.iter().all(|c| *c == e), "col {col}");
                saw_green |= e == ObjectClass::Green.color();
                saw_red |= e == RED;
            }
        }
        assert!(saw_green && saw_red);
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = Body::new(0, Pose2D::new(0.2, 0.4, 0.3), ObjectClass::TargetBox);
        let w = world(vec![t]);
        let pose = Pose2D::new(0.1, 0.1, 1.2);
        assert_eq!(render_egocentric(&w, &pose), render_egocentric(&w, &pose));
    }

    #[test]
    fn pooling_averages_blocks() {
        let img = CameraImage {
            data: vec![255; CAMERA_SIZE * CAMERA_SIZE * 3],
        };
        let p = img.pooled(4);
        assert_eq!(p.len(), 3 * 32 * 32);
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-5));
    }
}
