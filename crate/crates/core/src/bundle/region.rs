use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box in pixel coordinates, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub objectness: f64,
}

impl RegionBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, objectness: f64) -> Self {
        RegionBox {
            x,
            y,
            w,
            h,
            objectness,
        }
    }

    pub fn full_image(image_w: u32, image_h: u32) -> Self {
        RegionBox::new(0.0, 0.0, f64::from(image_w), f64::from(image_h), 1.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    pub fn iou(&self, other: &RegionBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            // two degenerate boxes: identical corners overlap fully
            return if self.x == other.x && self.y == other.y { 1.0 } else { 0.0 };
        }
        inter / union
    }

    /// Clips the box to `[0, image_w] x [0, image_h]`.
    pub fn clamped(&self, image_w: u32, image_h: u32) -> RegionBox {
        let (iw, ih) = (f64::from(image_w), f64::from(image_h));
        let x0 = self.x.clamp(0.0, iw);
        let y0 = self.y.clamp(0.0, ih);
        let x1 = self.right().clamp(x0, iw);
        let y1 = self.bottom().clamp(y0, ih);
        RegionBox::new(x0, y0, x1 - x0, y1 - y0, self.objectness)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.w, self.h, self.objectness]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// The region proposals of one image, best objectness first.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    image_w: u32,
    image_h: u32,
    boxes: Vec<RegionBox>,
}

impl RegionSet {
    /// Validates dimensions and ordering, clamping each box into the image.
    pub fn new(image_w: u32, image_h: u32, boxes: Vec<RegionBox>) -> Result<Self> {
        if image_w == 0 || image_h == 0 {
            return Err(invalid!("image dimensions must be positive, got {image_w}x{image_h}"));
        }
        for (i, b) in boxes.iter().enumerate() {
            if !b.is_finite() {
                return Err(invalid!("region box {i} has non-finite fields"));
            }
            if b.w < 0.0 || b.h < 0.0 {
                return Err(invalid!("region box {i} has negative size"));
            }
        }
        if let Some(i) = boxes
            .windows(2)
            .position(|w| w[1].objectness > w[0].objectness)
        {
            return Err(invalid!(
                "region boxes must be ordered by non-increasing objectness (box {} > box {i})",
                i + 1
            ));
        }
        let boxes = boxes.iter().map(|b| b.clamped(image_w, image_h)).collect();
        Ok(RegionSet {
            image_w,
            image_h,
            boxes,
        })
    }

    /// Like [`RegionSet::new`] but sorts by descending objectness first
    /// (stable, so equal scores keep their input order).
    pub fn from_unsorted(image_w: u32, image_h: u32, mut boxes: Vec<RegionBox>) -> Result<Self> {
        boxes.sort_by(|a, b| b.objectness.total_cmp(&a.objectness));
        Self::new(image_w, image_h, boxes)
    }

    pub fn image_w(&self) -> u32 {
        self.image_w
    }

    pub fn image_h(&self) -> u32 {
        self.image_h
    }

    pub fn boxes(&self) -> &[RegionBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Boxes aligned with descriptor rows: the whole image first, then the
    /// proposals in objectness order.
    pub fn boxes_with_full_image(&self) -> Vec<RegionBox> {
        let mut out = Vec::with_capacity(self.boxes.len() + 1);
        out.push(RegionBox::full_image(self.image_w, self.image_h));
        out.extend_from_slice(&self.boxes);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_into_image() {
        let set = RegionSet::new(10, 10, vec![RegionBox::new(-2.0, 5.0, 20.0, 20.0, 1.0)]).unwrap();
        assert_eq!(set.boxes()[0], RegionBox::new(0.0, 5.0, 10.0, 5.0, 1.0));
    }

    #[test]
    fn rejects_increasing_objectness() {
        let boxes = vec![
            RegionBox::new(0.0, 0.0, 1.0, 1.0, 0.2),
            RegionBox::new(0.0, 0.0, 1.0, 1.0, 0.5),
        ];
        assert!(RegionSet::new(4, 4, boxes.clone()).is_err());
        let sorted = RegionSet::from_unsorted(4, 4, boxes).unwrap();
        assert_eq!(sorted.boxes()[0].objectness, 0.5);
    }

    #[test]
    fn zero_image_rejected() {
        assert!(RegionSet::new(0, 4, vec![]).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = RegionBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&RegionBox::new(5.0, 5.0, 1.0, 1.0, 0.0)), 0.0);
        let half = RegionBox::new(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((a.iou(&half) - 2.0 / 6.0).abs() < 1e-12);
    }
}
