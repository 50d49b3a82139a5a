//! First-person water mask: a pinhole camera pitched down, one ray per cell
//! of a 16×16 grid intersected with the water plane `z = 0`.

use serde::{Deserialize, Serialize};

use super::geometry::Point;
use super::{Pose, RiverWorld};

pub const MASK_SIDE: usize = 16;
pub const MASK_CELLS: usize = MASK_SIDE * MASK_SIDE;

/// Camera pitch below the horizon, degrees.
pub const CAMERA_PITCH_DEG: f64 = 15.0;
/// Horizontal (and, with a square image, vertical) field of view, degrees.
pub const CAMERA_FOV_DEG: f64 = 90.0;

/// Row-major 16×16 binary grid; row 0 is the top of the image and column 0
/// its left edge.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WaterMask(#[serde(with = "bits")] [u8; MASK_CELLS]);

impl WaterMask {
    pub const EMPTY: Self = Self([0; MASK_CELLS]);

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.0[row * MASK_SIDE + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, water: bool) {
        self.0[row * MASK_SIDE + col] = water as u8;
    }

    pub fn cells(&self) -> &[u8; MASK_CELLS] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&c| c != 0).count()
    }

    /// Left-right mirror of the image.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::EMPTY;
        for r in 0..MASK_SIDE {
            for c in 0..MASK_SIDE {
                out.set(r, MASK_SIDE - 1 - c, self.get(r, c));
            }
        }
        out
    }

    /// 256-character `0`/`1` string, row-major.
    pub fn to_bitstring(&self) -> alloc::string::String {
        self.0.iter().map(|&c| if c != 0 { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Option<Self> {
        if s.len() != MASK_CELLS {
            return None;
        }
        let mut out = Self::EMPTY;
        for (i, ch) in s.bytes().enumerate() {
            out.0[i] = match ch {
                b'0' => 0,
                b'1' => 1,
                _ => return None,
            };
        }
        Some(out)
    }
}

impl core::fmt::Debug for WaterMask {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for r in 0..MASK_SIDE {
            for c in 0..MASK_SIDE {
                f.write_str(if self.get(r, c) { "#" } else { "." })?;
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

mod bits {
    use alloc::string::String;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use super::{WaterMask, MASK_CELLS};

    pub fn serialize<S: Serializer>(cells: &[u8; MASK_CELLS], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&WaterMask(*cells).to_bitstring())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; MASK_CELLS], D::Error> {
        let s = String::deserialize(d)?;
        WaterMask::from_bitstring(&s)
            .map(|m| m.0)
            .ok_or_else(|| D::Error::custom("mask must be 256 characters of 0/1"))
    }
}

/// Ray direction through the center of cell `(row, col)` in the world frame.
pub(crate) fn cell_ray(yaw_deg: f64, row: usize, col: usize) -> [f64; 3] {
    let half = libm::tan((CAMERA_FOV_DEG / 2.0).to_radians());
    let side = MASK_SIDE as f64;
    // Exact odd symmetry about the image center keeps mirrored poses bitwise mirrored.
    let u = (2.0 * col as f64 + 1.0 - side) / side * half;
    let v = (side - 2.0 * row as f64 - 1.0) / side * half;
    let yaw = yaw_deg.to_radians();
    let (sy, cy) = (libm::sin(yaw), libm::cos(yaw));
    let pitch = CAMERA_PITCH_DEG.to_radians();
    let (sp, cp) = (libm::sin(pitch), libm::cos(pitch));
    let heading = [cy, sy, 0.0];
    let right = [sy, -cy, 0.0];
    let forward = [cp * heading[0], cp * heading[1], -sp];
    let up = [sp * heading[0], sp * heading[1], cp];
    [
        forward[0] + u * right[0] + v * up[0],
        forward[1] + u * right[1] + v * up[1],
        forward[2] + u * right[2] + v * up[2],
    ]
}

impl RiverWorld {
    /// Renders the binary water mask seen from `pose`.
    pub fn render_mask(&self, pose: &Pose) -> WaterMask {
        let mut mask = WaterMask::EMPTY;
        if pose.z <= 0.0 {
            return mask;
        }
        for row in 0..MASK_SIDE {
            for col in 0..MASK_SIDE {
                let d = cell_ray(pose.yaw, row, col);
                if d[2] >= 0.0 {
                    continue;
                }
                let t = pose.z / -d[2];
                let hit = Point::new(pose.x + t * d[0], pose.y + t * d[1]);
                if self.is_water(hit) {
                    mask.set(row, col, true);
                }
            }
        }
        mask
    }

    /// Whether a ground point lies inside the river polygon (centerline ± width/2).
    pub fn is_water(&self, p: Point) -> bool {
        match self.centerline().project(p) {
            Some(proj) => proj.beyond.is_none() && proj.offset.abs() <= self.width() / 2.0,
            None => false,
        }
    }
}
