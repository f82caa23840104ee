//! Axis-aligned boxes in normalized page coordinates.

use serde::{Deserialize, Serialize};

/// Tolerance used when checking that one box lies inside another.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-6;

/// A rectangle in normalized page space: `x` runs along the page width,
/// `y` along the page height, both in `[0, 1]`.
///
/// Serialized as a flat `[x_min, y_min, x_max, y_max]` array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoxError {
    #[error("inverted box: min {min} > max {max} on the {axis} axis")]
    Inverted { axis: char, min: f64, max: f64 },
    #[error("coordinate {0} is outside [0, 1]")]
    OutOfUnitRange(f64),
    #[error("coordinate is not finite")]
    NotFinite,
}

impl BoundingBox {
    /// Builds a normalized box, checking ordering and the unit range.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, BoxError> {
        for v in [x_min, y_min, x_max, y_max] {
            if !v.is_finite() {
                return Err(BoxError::NotFinite);
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(BoxError::OutOfUnitRange(v));
            }
        }
        if x_min > x_max {
            return Err(BoxError::Inverted { axis: 'x', min: x_min, max: x_max });
        }
        if y_min > y_max {
            return Err(BoxError::Inverted { axis: 'y', min: y_min, max: y_max });
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_center(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }

    pub fn y_center(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when `other` lies within `self`, allowing `tol` slack on every edge.
    pub fn contains(&self, other: &BoundingBox, tol: f64) -> bool {
        other.x_min >= self.x_min - tol
            && other.y_min >= self.y_min - tol
            && other.x_max <= self.x_max + tol
            && other.y_max <= self.y_max + tol
    }

    /// Closed-set point membership.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(BoundingBox { x_min, y_min, x_max, y_max })
    }

    /// Smallest box enclosing both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Smallest box enclosing every box in the iterator, `None` when empty.
    pub fn envelope<'a, I>(boxes: I) -> Option<BoundingBox>
    where
        I: IntoIterator<Item = &'a BoundingBox>,
    {
        boxes.into_iter().fold(None, |acc, b| match acc {
            None => Some(*b),
            Some(a) => Some(a.union(b)),
        })
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Exact area of the union of a set of rectangles, by coordinate compression.
///
/// Inputs are small (a handful of gold line boxes per entity), so the
/// quadratic cell sweep is fine.
pub fn union_area(boxes: &[BoundingBox]) -> f64 {
    let boxes: Vec<&BoundingBox> = boxes.iter().filter(|b| b.area() > 0.0).collect();
    if boxes.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x_min, b.x_max]).collect();
    let mut ys: Vec<f64> = boxes.iter().flat_map(|b| [b.y_min, b.y_max]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            if boxes.iter().any(|b| b.contains_point(cx, cy)) {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}
