//! Triaxial taxel arrays and their 20x5 RGB image encoding.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{SensorFloors, Side, Taxel, TaxelGrid, TAXEL_COLS, TAXEL_ROWS, TAXELS_PER_SIDE};
use crate::sim::{Contact, ProbeFace};

pub const TACTILE_HEIGHT: usize = 20;
pub const TACTILE_WIDTH: usize = 5;
const PADDED: usize = TAXELS_PER_SIDE + 1;

/// Shear range (either sign) mapped onto the full 8-bit scale.
pub const SHEAR_RANGE: f64 = 1.0;
/// Compressive normal force mapped to full red intensity.
pub const NORMAL_RANGE: f64 = 5.0;

/// 20x5 RGB image, row-major, 3 bytes per pixel: R = normal, G = y shear, B = x shear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TactileImage {
    pub data: [u8; TACTILE_HEIGHT * TACTILE_WIDTH * 3],
}

impl TactileImage {
    /// The image of a grid with no force anywhere.
    pub fn zero_force() -> Self {
        encode_tactile(&TaxelGrid::zeros())
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * TACTILE_WIDTH + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        Some(Self {
            data: bytes.try_into().ok()?,
        })
    }

    /// Nearest-neighbor upscale by `factor` (row-major RGB).
    pub fn upscale(&self, factor: usize) -> Vec<u8> {
        let w = TACTILE_WIDTH * factor;
        let h = TACTILE_HEIGHT * factor;
        let mut out = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let p = self.pixel(y / factor, x / factor);
                out[(y * w + x) * 3..][..3].copy_from_slice(&p);
            }
        }
        out
    }
}

/// Deposits left/right probe-face contacts onto the taxel arrays.
///
/// Each contact lands on the center row, in the column nearest its position
/// along the probe (column 0 at the tip). The reaction force is decomposed
/// into x = along the probe toward the tip, z = face normal (negative in
/// compression); y is out of plane and stays zero before noise. With `rng`
/// set, zero-mean Gaussian noise with sigma = floor / 3 is added per axis.
pub fn sample_taxels<R: Rng + ?Sized>(
    contacts: &[Contact],
    probe_theta: f64,
    probe_length: f64,
    floors: &SensorFloors,
    rng: Option<&mut R>,
) -> TaxelGrid {
    let mut grid = TaxelGrid::zeros();
    let center_row = TAXEL_ROWS / 2;
    for c in contacts {
        let side = match c.probe_face {
            Some(ProbeFace::Left) => Side::Left,
            Some(ProbeFace::Right) => Side::Right,
            _ => continue,
        };
        let reaction = (-c.force_on_second()).rotate(-probe_theta);
        let normal = match side {
            Side::Left => reaction.y,
            Side::Right => -reaction.y,
        };
        let col = ((c.probe_offset / probe_length) * TAXEL_COLS as f64).floor() as usize;
        let col = col.min(TAXEL_COLS - 1);
        let taxel = &mut grid.side_mut(side)[center_row][col];
        taxel[0] += reaction.x;
        taxel[2] += normal;
    }
    if let Some(rng) = rng {
        let noise = Normal::new(0.0, floors.tactile_floor / 3.0).expect("positive sigma");
        for side in [Side::Left, Side::Right] {
            for t in grid.side_mut(side).iter_mut().flatten() {
                for v in t.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
        }
    }
    grid
}

/// Rounds to nearest with ties toward negative infinity, so that the exact
/// midpoint of the shear scale (zero force) lands on 127.
fn quantize(v: f64) -> u8 {
    (v - 0.5).ceil().clamp(0.0, 255.0) as u8
}

fn shear_to_px(f: f64) -> u8 {
    quantize((f + SHEAR_RANGE) / (2.0 * SHEAR_RANGE) * 255.0)
}

fn px_to_shear(p: u8) -> f64 {
    p as f64 / 255.0 * 2.0 * SHEAR_RANGE - SHEAR_RANGE
}

fn normal_to_px(z: f64) -> u8 {
    quantize(-z / NORMAL_RANGE * 255.0)
}

fn px_to_normal(p: u8) -> f64 {
    -(p as f64) / 255.0 * NORMAL_RANGE
}

fn flatten(side: &[[Taxel; TAXEL_COLS]; TAXEL_ROWS]) -> [Taxel; PADDED] {
    let mut out = [[0.0; 3]; PADDED];
    for (i, t) in side.iter().flatten().enumerate() {
        out[i] = *t;
    }
    out
}

/// Encodes both arrays: each side is flattened row-major, padded with one zero
/// taxel to 50, and written row-major into ten 5-pixel rows; left first.
pub fn encode_tactile(grid: &TaxelGrid) -> TactileImage {
    let mut data = [0u8; TACTILE_HEIGHT * TACTILE_WIDTH * 3];
    for (half, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let flip = if side == Side::Right { -1.0 } else { 1.0 };
        for (k, t) in flatten(grid.side(side)).iter().enumerate() {
            let px = (half * PADDED + k) * 3;
            data[px] = normal_to_px(t[2]);
            data[px + 1] = shear_to_px(flip * t[1]);
            data[px + 2] = shear_to_px(t[0]);
        }
    }
    TactileImage { data }
}

/// Inverse of the linear maps in [`encode_tactile`]; the padding taxel is dropped.
pub fn decode_tactile(img: &TactileImage) -> TaxelGrid {
    let mut grid = TaxelGrid::zeros();
    for (half, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let flip = if side == Side::Right { -1.0 } else { 1.0 };
        let arr = grid.side_mut(side);
        for k in 0..TAXELS_PER_SIDE {
            let px = (half * PADDED + k) * 3;
            arr[k / TAXEL_COLS][k % TAXEL_COLS] = [
                px_to_shear(img.data[px + 2]),
                flip * px_to_shear(img.data[px + 1]),
                px_to_normal(img.data[px]),
            ];
        }
    }
    grid
}
