//! Space-time points and the rotated characteristic coordinates
//! `(w, z) = ((t − x)/√2, (t + x)/√2)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharCoords {
    pub w: f64,
    pub z: f64,
}

impl SpaceTimePoint {
    pub const fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }

    pub fn to_char(self) -> CharCoords {
        CharCoords { w: (self.t - self.x) * FRAC_1_SQRT_2, z: (self.t + self.x) * FRAC_1_SQRT_2 }
    }

    /// The point shifted by `h` along the `(+1, +1)` characteristic.
    pub fn shifted(self, h: f64) -> Self {
        Self { t: self.t + h, x: self.x + h }
    }
}

impl CharCoords {
    pub const fn new(w: f64, z: f64) -> Self {
        Self { w, z }
    }

    pub fn to_spacetime(self) -> SpaceTimePoint {
        SpaceTimePoint { t: (self.w + self.z) * FRAC_1_SQRT_2, x: (self.z - self.w) * FRAC_1_SQRT_2 }
    }
}

impl From<CharCoords> for SpaceTimePoint {
    fn from(c: CharCoords) -> Self {
        c.to_spacetime()
    }
}

impl From<SpaceTimePoint> for CharCoords {
    fn from(p: SpaceTimePoint) -> Self {
        p.to_char()
    }
}
