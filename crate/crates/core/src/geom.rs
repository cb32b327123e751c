//! Axis-aligned integer bounding boxes and exact intersection-over-union.
//!
//! Areas use the continuous-edge convention `(x2 - x1) * (y2 - y1)`, so
//! `[0,0,1,1]` covers exactly one unit cell. IoU is carried as an exact
//! rational so threshold tests at 0.5 never depend on float rounding.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoxError {
    #[error("coordinates must be non-negative unless all four are -1, got {0:?}")]
    Negative([i64; 4]),
    #[error("box corners are inverted: {0:?}")]
    Inverted([i64; 4]),
    #[error("coordinate out of range: {0:?}")]
    OutOfRange([i64; 4]),
}

/// Pixel rectangle given by its top-left and bottom-right corners, or the
/// ungrounded sentinel `[-1,-1,-1,-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundingBox {
    x1: i32,
    y1: i32,
    x2: i32,
    y2: i32,
}

impl BoundingBox {
    pub const SENTINEL: BoundingBox = BoundingBox {
        x1: -1,
        y1: -1,
        x2: -1,
        y2: -1,
    };

    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, BoxError> {
        Self::from_coords([x1, y1, x2, y2])
    }

    pub fn from_coords(c: [i64; 4]) -> Result<Self, BoxError> {
        if c == [-1, -1, -1, -1] {
            return Ok(Self::SENTINEL);
        }
        if c.iter().any(|&v| v < 0) {
            return Err(BoxError::Negative(c));
        }
        if c.iter().any(|&v| v > i32::MAX as i64) {
            return Err(BoxError::OutOfRange(c));
        }
        if c[0] > c[2] || c[1] > c[3] {
            return Err(BoxError::Inverted(c));
        }
        Ok(Self {
            x1: c[0] as i32,
            y1: c[1] as i32,
            x2: c[2] as i32,
            y2: c[3] as i32,
        })
    }

    pub fn coords(&self) -> [i64; 4] {
        [
            self.x1 as i64,
            self.y1 as i64,
            self.x2 as i64,
            self.y2 as i64,
        ]
    }

    pub fn is_sentinel(&self) -> bool {
        *self == Self::SENTINEL
    }

    pub fn width(&self) -> i64 {
        if self.is_sentinel() {
            0
        } else {
            self.x2 as i64 - self.x1 as i64
        }
    }

    pub fn height(&self) -> i64 {
        if self.is_sentinel() {
            0
        } else {
            self.y2 as i64 - self.y1 as i64
        }
    }

    /// Area in square pixels; 0 for the sentinel.
    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// Area of the overlap with `other` (0 when disjoint or touching).
    pub fn intersection_area(&self, other: &BoundingBox) -> i64 {
        if self.is_sentinel() || other.is_sentinel() {
            return 0;
        }
        let w = (self.x2.min(other.x2) as i64 - self.x1.max(other.x1) as i64).max(0);
        let h = (self.y2.min(other.y2) as i64 - self.y1.max(other.y1) as i64).max(0);
        w * h
    }

    /// Translates each coordinate by the matching offset, clamping to the
    /// non-negative quadrant and keeping corners ordered.
    pub fn offset(&self, d: [i64; 4]) -> BoundingBox {
        if self.is_sentinel() {
            return *self;
        }
        let c = self.coords();
        let x1 = (c[0] + d[0]).max(0);
        let y1 = (c[1] + d[1]).max(0);
        let x2 = (c[2] + d[2]).max(x1);
        let y2 = (c[3] + d[3]).max(y1);
        BoundingBox::new(x1, y1, x2, y2).expect("clamped box is valid")
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x1, self.y1, self.x2, self.y2)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let c = <[i64; 4]>::deserialize(d)?;
        BoundingBox::from_coords(c).map_err(serde::de::Error::custom)
    }
}

pub fn area(b: &BoundingBox) -> i64 {
    b.area()
}

/// Exact IoU as a reduced fraction. Zero when either operand is the
/// sentinel or has zero area, even if the two boxes coincide.
pub fn iou_exact(a: &BoundingBox, b: &BoundingBox) -> Ratio<i64> {
    let (aa, ab) = (a.area(), b.area());
    if aa == 0 || ab == 0 {
        return Ratio::from_integer(0);
    }
    let inter = a.intersection_area(b);
    Ratio::new(inter, aa + ab - inter)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let r = iou_exact(a, b);
    *r.numer() as f64 / *r.denom() as f64
}

/// IoU threshold held as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IouThreshold(Ratio<i64>);

impl IouThreshold {
    pub const HALF: IouThreshold = IouThreshold(Ratio::new_raw(1, 2));

    /// Converts a decimal threshold in `(0, 1]` into a fraction.
    pub fn from_f64(t: f64) -> Option<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return None;
        }
        Ratio::approximate_float(t).map(IouThreshold)
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    /// `iou(a, b) >= self`, decided exactly.
    pub fn admits(&self, a: &BoundingBox, b: &BoundingBox) -> bool {
        let r = iou_exact(a, b);
        // cross-multiply in i128 so large pixel areas cannot overflow
        (*r.numer() as i128) * (*self.0.denom() as i128)
            >= (*self.0.numer() as i128) * (*r.denom() as i128)
    }
}

impl Default for IouThreshold {
    fn default() -> Self {
        Self::HALF
    }
}
