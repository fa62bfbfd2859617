use serde::{Deserialize, Serialize};

/// A segment between two endpoints, in normalised image coordinates
/// (`x` to the right, `y` down, both in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
}

impl LineSegment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        LineSegment { p1: [x1, y1], p2: [x2, y2] }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p1[0], self.p1[1], self.p2[0], self.p2[1]]
    }

    pub fn reversed(self) -> Self {
        LineSegment { p1: self.p2, p2: self.p1 }
    }

    pub fn length(&self) -> f64 {
        (self.p2[0] - self.p1[0]).hypot(self.p2[1] - self.p1[1])
    }

    pub fn scaled(self, s: f64) -> Self {
        LineSegment { p1: [self.p1[0] * s, self.p1[1] * s], p2: [self.p2[0] * s, self.p2[1] * s] }
    }
}

/// A predicted segment with its confidence `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub segment: LineSegment,
    pub score: f64,
}

impl ScoredSegment {
    pub fn new(segment: LineSegment, score: f64) -> Self {
        ScoredSegment { segment, score }
    }
}
