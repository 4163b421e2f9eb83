//! Axis-aligned boxes and overlap measures.
//!
//! Boxes are stored in center format `(cx, cy, w, h)` on a normalized
//! coordinate scale. Conversions to corner format and the overlap measures
//! (IoU, generalized IoU) live here. Degenerate (zero-area) boxes are
//! rejected at construction so every downstream kernel can assume positive
//! areas; coordinates outside `[0, 1]` are legal and participate in overlap
//! arithmetic unclipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular region in center format: `(cx, cy, w, h)`, `w > 0`, `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Rectangular region in corner format: `(x1, y1, x2, y2)`, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "box must have positive extent, got w={w}, h={h}"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(c: CornerBox) -> Self {
        Self {
            cx: 0.5 * (c.x1 + c.x2),
            cy: 0.5 * (c.y1 + c.y2),
            w: c.x2 - c.x1,
            h: c.y2 - c.y1,
        }
    }

    pub fn to_corners(self) -> CornerBox {
        CornerBox {
            x1: self.cx - 0.5 * self.w,
            y1: self.cy - 0.5 * self.h,
            x2: self.cx + 0.5 * self.w,
            y2: self.cy + 0.5 * self.h,
        }
    }

    pub fn area(self) -> f64 {
        self.w * self.h
    }
}

impl CornerBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite corners ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidGeometry(format!(
                "corners must satisfy x1 < x2 and y1 < y2, got ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    /// Overlap area with `other`; zero when disjoint.
    pub fn intersection_area(self, other: CornerBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        iw * ih
    }
}

/// Intersection over union. Always in `[0, 1]`.
pub fn iou(a: Box, b: Box) -> f64 {
    let (ca, cb) = (a.to_corners(), b.to_corners());
    let inter = ca.intersection_area(cb);
    let union = ca.area() + cb.area() - inter;
    inter / union
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box not
/// covered by the union. Always in `(-1, 1]`, and `1` exactly for identical
/// boxes.
pub fn giou(a: Box, b: Box) -> f64 {
    let (ca, cb) = (a.to_corners(), b.to_corners());
    let inter = ca.intersection_area(cb);
    let union = ca.area() + cb.area() - inter;
    let ew = ca.x2.max(cb.x2) - ca.x1.min(cb.x1);
    let eh = ca.y2.max(cb.y2) - ca.y1.min(cb.y1);
    let enclose = ew * eh;
    inter / union - (enclose - union) / enclose
}

/// Smallest box enclosing both inputs.
pub fn union_box(a: Box, b: Box) -> Box {
    let (ca, cb) = (a.to_corners(), b.to_corners());
    Box::from_corners(CornerBox {
        x1: ca.x1.min(cb.x1),
        y1: ca.y1.min(cb.y1),
        x2: ca.x2.max(cb.x2),
        y2: ca.y2.max(cb.y2),
    })
}
