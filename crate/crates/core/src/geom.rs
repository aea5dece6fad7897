//! Planar domain types shared by every subsystem.
//!
//! All quantities are SI: meters, radians, Newtons, seconds. The tool frame
//! has its x-axis along the probe (pointing out of the tip) and its y-axis to
//! the probe's left.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor() leaves r in [-pi, pi); the lower end maps to the upper.
    if r <= -PI {
        r += two_pi;
    }
    if r > PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Planar pose. `theta` is kept wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }

    /// Maps a point expressed in this pose's local frame to world coordinates.
    pub fn transform_point(&self, local: Vec2) -> Vec2 {
        self.position() + local.rotate(self.theta)
    }

    /// Maps a world point into this pose's local frame.
    pub fn inverse_transform_point(&self, world: Vec2) -> Vec2 {
        (world - self.position()).rotate(-self.theta)
    }

    /// Composes `self * local`: the world pose of a frame given relative to `self`.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let p = self.transform_point(local.position());
        Pose2D::new(p.x, p.y, self.theta + local.theta)
    }

    /// Pose of `other` expressed in this frame.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        let p = self.inverse_transform_point(other.position());
        Pose2D::new(p.x, p.y, other.theta - self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Planar velocity. When used as an action it is expressed in the tool frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist2D {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2D {
    pub const ZERO: Twist2D = Twist2D {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.omega]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Physical velocity limits used to map between normalized and physical twists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistLimits {
    pub linear: f64,
    pub angular: f64,
}

impl Default for TwistLimits {
    fn default() -> Self {
        Self {
            linear: 0.15,
            angular: 1.0,
        }
    }
}

impl TwistLimits {
    /// Clamps each normalized component to [-1, 1] and scales to physical units.
    pub fn denormalize(&self, t: Twist2D) -> Twist2D {
        let c = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Twist2D::new(
            c(t.vx) * self.linear,
            c(t.vy) * self.linear,
            c(t.omega) * self.angular,
        )
    }

    pub fn normalize(&self, t: Twist2D) -> Twist2D {
        Twist2D::new(
            (t.vx / self.linear).clamp(-1.0, 1.0),
            (t.vy / self.linear).clamp(-1.0, 1.0),
            (t.omega / self.angular).clamp(-1.0, 1.0),
        )
    }
}

/// Force and torque. Tool-frame unless stated otherwise; torque about the tool point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench2D {
    pub fx: f64,
    pub fy: f64,
    pub tau: f64,
}

impl Wrench2D {
    pub const ZERO: Wrench2D = Wrench2D {
        fx: 0.0,
        fy: 0.0,
        tau: 0.0,
    };

    pub const fn new(fx: f64, fy: f64, tau: f64) -> Self {
        Self { fx, fy, tau }
    }

    pub fn force(&self) -> Vec2 {
        Vec2::new(self.fx, self.fy)
    }

    /// In-plane force magnitude; torque is excluded.
    pub fn force_norm(&self) -> f64 {
        self.fx.hypot(self.fy)
    }
}

/// Rotates a world-frame force into the tool frame of `probe_pose`. Torque is unchanged.
pub fn world_to_tool(f_world: Wrench2D, probe_pose: &Pose2D) -> Wrench2D {
    let f = f_world.force().rotate(-probe_pose.theta);
    Wrench2D::new(f.x, f.y, f_world.tau)
}

pub fn tool_to_world(f_tool: Wrench2D, probe_pose: &Pose2D) -> Wrench2D {
    let f = f_tool.force().rotate(probe_pose.theta);
    Wrench2D::new(f.x, f.y, f_tool.tau)
}

pub const TAXEL_ROWS: usize = 7;
pub const TAXEL_COLS: usize = 7;
pub const TAXELS_PER_SIDE: usize = TAXEL_ROWS * TAXEL_COLS;

/// One triaxial taxel reading `[x shear, y shear, z normal]` in Newtons.
pub type Taxel = [f64; 3];

/// Two 7x7 triaxial arrays on the left and right probe faces.
/// Normal (z) force is negative under compression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxelGrid {
    pub left: [[Taxel; TAXEL_COLS]; TAXEL_ROWS],
    pub right: [[Taxel; TAXEL_COLS]; TAXEL_ROWS],
}

impl Default for TaxelGrid {
    fn default() -> Self {
        Self::zeros()
    }
}

impl TaxelGrid {
    pub const fn zeros() -> Self {
        Self {
            left: [[[0.0; 3]; TAXEL_COLS]; TAXEL_ROWS],
            right: [[[0.0; 3]; TAXEL_COLS]; TAXEL_ROWS],
        }
    }

    pub fn side(&self, side: Side) -> &[[Taxel; TAXEL_COLS]; TAXEL_ROWS] {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut [[Taxel; TAXEL_COLS]; TAXEL_ROWS] {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }

    /// Largest triaxial magnitude on one side.
    pub fn side_peak(&self, side: Side) -> f64 {
        self.side(side)
            .iter()
            .flatten()
            .map(|t| (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest triaxial magnitude across all 98 taxels.
    pub fn peak(&self) -> f64 {
        self.side_peak(Side::Left).max(self.side_peak(Side::Right))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Noise floors of the two force modalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFloors {
    pub tactile_floor: f64,
    pub wrench_floor: f64,
}

impl Default for SensorFloors {
    fn default() -> Self {
        Self {
            tactile_floor: 0.5,
            wrench_floor: 3.3,
        }
    }
}

impl SensorFloors {
    pub fn new(tactile_floor: f64, wrench_floor: f64) -> Option<Self> {
        (tactile_floor > 0.0 && wrench_floor > 0.0).then_some(Self {
            tactile_floor,
            wrench_floor,
        })
    }
}

/// A normalized action: twist components in [-1, 1] (tool frame), plus a suction release flag.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActionCommand {
    pub twist: Twist2D,
    pub suction_release: bool,
}

impl ActionCommand {
    pub fn new(twist: Twist2D, suction_release: bool) -> Self {
        Self {
            twist,
            suction_release,
        }
    }

    pub fn hold() -> Self {
        Self::default()
    }

    /// Clamps to [-1, 1] and rounds each component through f32, the precision
    /// episode files store. Applying quantized commands makes recorded
    /// episodes replay bit-identically.
    pub fn quantized(self) -> Self {
        let q = |v: f64| {
            if v.is_finite() {
                v.clamp(-1.0, 1.0) as f32 as f64
            } else {
                0.0
            }
        };
        Self {
            twist: Twist2D::new(q(self.twist.vx), q(self.twist.vy), q(self.twist.omega)),
            suction_release: self.suction_release,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_angle_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        // -7.5 + 2*2pi leaves the range, so one turn is the right answer.
        assert_abs_diff_eq!(wrap_angle(-7.5), -7.5 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn world_to_tool_examples() {
        let w = world_to_tool(Wrench2D::new(1.0, 0.0, 0.0), &Pose2D::new(0.0, 0.0, 0.0));
        assert_eq!(w, Wrench2D::new(1.0, 0.0, 0.0));

        let w = world_to_tool(Wrench2D::new(1.0, 0.0, 0.0), &Pose2D::new(0.0, 0.0, PI / 2.0));
        assert_abs_diff_eq!(w.fx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.fy, -1.0, epsilon = 1e-12);

        // Rotation-matrix oracle: R(-theta) = [[c, s], [-s, c]].
        let theta = 0.3_f64;
        let (c, s) = (theta.cos(), theta.sin());
        let expect = (c * 3.0 + s * 4.0, -s * 3.0 + c * 4.0);
        let w = world_to_tool(Wrench2D::new(3.0, 4.0, 0.5), &Pose2D::new(0.0, 0.0, theta));
        assert_abs_diff_eq!(w.fx, expect.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.fy, expect.1, epsilon = 1e-12);
        assert_eq!(w.tau, 0.5);
    }

    #[test]
    fn quantized_command_is_idempotent() {
        let c = ActionCommand::new(Twist2D::new(0.123456789, -2.0, f64::NAN), false).quantized();
        assert_eq!(c.twist.vy, -1.0);
        assert_eq!(c.twist.omega, 0.0);
        assert_eq!(c, c.quantized());
    }

    proptest! {
        #[test]
        fn wrap_angle_range_and_congruence(theta in -1e4f64..1e4) {
            let r = wrap_angle(theta);
            prop_assert!(r > -PI && r <= PI);
            let k = (theta - r) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert_eq!(wrap_angle(r), r);
        }

        #[test]
        fn tool_frame_round_trip(fx in -100.0f64..100.0, fy in -100.0f64..100.0,
                                 tau in -10.0f64..10.0, theta in -10.0f64..10.0) {
            let pose = Pose2D::new(0.1, -0.2, theta);
            let w = Wrench2D::new(fx, fy, tau);
            let t = world_to_tool(w, &pose);
            let back = tool_to_world(t, &pose);
            prop_assert!((back.fx - fx).abs() < 1e-9);
            prop_assert!((back.fy - fy).abs() < 1e-9);
            prop_assert_eq!(back.tau, tau);
            prop_assert!((t.force_norm() - w.force_norm()).abs() < 1e-9);
        }
    }
}
