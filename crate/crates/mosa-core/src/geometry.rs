//! Axis-aligned box geometry: centers, unions, intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned bounding box in pixel coordinates, corners `(x1, y1)` and
/// `(x2, y2)` with `x2 > x1` and `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x1, self.y1, self.x2, self.y2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite box {self:?}")));
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::Invalid(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Center point `((x1+x2)/2, (y1+y2)/2)`.
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// Smallest axis-aligned box containing both inputs.
pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    BoundingBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// Intersection area over union area, in `[0, 1]`; 0 when disjoint.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Euclidean distance between two points.
pub fn point_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn union_idempotent() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(union_box(&a, &a), a);
    }

    #[test]
    fn union_disjoint_corners() {
        let u = union_box(&bx(0.0, 0.0, 1.0, 1.0), &bx(2.0, 2.0, 3.0, 3.0));
        assert_eq!(u, bx(0.0, 0.0, 3.0, 3.0));
    }

    #[test]
    fn union_overlapping_hand_case() {
        // per-coordinate min/max: [0,1,4,2] ∪ [1,0,2,5] = [0,0,4,5]
        let u = union_box(&bx(0.0, 1.0, 4.0, 2.0), &bx(1.0, 0.0, 2.0, 5.0));
        assert_eq!(u, bx(0.0, 0.0, 4.0, 5.0));
    }

    #[test]
    fn iou_identical() {
        let a = bx(3.0, 4.0, 10.0, 9.0);
        assert_abs_diff_eq!(box_iou(&a, &a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(box_iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    #[test]
    fn iou_one_seventh() {
        // intersection 1, union 4 + 4 - 1 = 7
        let v = box_iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 1.0, 3.0, 3.0));
        assert_abs_diff_eq!(v, 1.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 2.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 1.0, 2.0).is_err());
    }

    prop_compose! {
        fn arb_box()(x1 in -100.0..100.0f64, y1 in -100.0..100.0f64,
                     w in 0.1..50.0f64, h in 0.1..50.0f64) -> BoundingBox {
            bx(x1, y1, x1 + w, y1 + h)
        }
    }

    proptest! {
        #[test]
        fn union_commutative(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(union_box(&a, &b), union_box(&b, &a));
        }

        #[test]
        fn union_area_monotone(a in arb_box(), b in arb_box()) {
            let u = union_box(&a, &b);
            prop_assert!(u.area() >= a.area().max(b.area()) - 1e-9);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = box_iou(&a, &b);
            let ba = box_iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
