//! Colour-mask geometry probes on rendered or decoded images.
//!
//! Pixels are classified by their nearest reference colour (backboard,
//! door, handle); the door region is the largest 4-connected component of
//! door-or-handle pixels.

use std::collections::VecDeque;

use crate::doorworld::{Camera, BACKBOARD_RGB, BOARD_DISTANCE, DOOR_RGB, HANDLE_RGB};
use crate::imageio::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelClass {
    Backboard,
    Door,
    Handle,
}

pub fn classify(rgb: [f32; 3]) -> PixelClass {
    let d = |c: [f32; 3]| -> f32 { (0..3).map(|i| (rgb[i] - c[i]).powi(2)).sum() };
    let (b, door, h) = (d(BACKBOARD_RGB), d(DOOR_RGB), d(HANDLE_RGB));
    if door < b && door <= h {
        PixelClass::Door
    } else if h < b && h < door {
        PixelClass::Handle
    } else {
        PixelClass::Backboard
    }
}

/// Boolean mask over `height × width`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Door-or-handle pixels.
pub fn door_mask(img: &Image) -> Mask {
    mask_where(img, |c| c != PixelClass::Backboard)
}

pub fn handle_mask(img: &Image) -> Mask {
    mask_where(img, |c| c == PixelClass::Handle)
}

fn mask_where(img: &Image, keep: impl Fn(PixelClass) -> bool) -> Mask {
    let mut bits = Vec::with_capacity(img.height * img.width);
    for r in 0..img.height {
        for c in 0..img.width {
            bits.push(keep(classify(img.rgb(r, c))));
        }
    }
    Mask {
        height: img.height,
        width: img.width,
        bits,
    }
}

/// Largest 4-connected component of `mask`; ties go to the component found
/// first in row-major order.
pub fn largest_component(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut label = vec![usize::MAX; h * w];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits[start] || label[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        label[start] = start;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask.bits[q] && label[q] == usize::MAX {
                    label[q] = start;
                    members.push(q);
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    let mut bits = vec![false; h * w];
    for p in best {
        bits[p] = true;
    }
    Mask {
        height: h,
        width: w,
        bits,
    }
}

/// Smallest door region counted as "a door": 1/340 of the frame, about a
/// dozen pixels at 64×64.
pub fn min_door_pixels(height: usize, width: usize) -> usize {
    (height * width / 340).max(4)
}

/// Whether the image contains a connected door-coloured region.
pub fn has_door_region(img: &Image) -> bool {
    largest_component(&door_mask(img)).count() >= min_door_pixels(img.height, img.width)
}

pub fn iou(a: &Mask, b: &Mask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Outline of the door region: its two vertical edges and their heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Silhouette {
    /// Left boundary of the leftmost column, in pixels.
    pub left: f64,
    /// Right boundary of the rightmost column, in pixels.
    pub right: f64,
    pub left_extent: f64,
    pub right_extent: f64,
    /// Whether any handle pixels touch the region.
    pub handle_visible: bool,
}

pub fn silhouette(img: &Image) -> Option<Silhouette> {
    let region = largest_component(&door_mask(img));
    if region.count() < min_door_pixels(img.height, img.width) {
        return None;
    }
    let extent = |c: usize| -> f64 {
        let rows: Vec<usize> = (0..region.height).filter(|&r| region.get(r, c)).collect();
        match (rows.first(), rows.last()) {
            (Some(a), Some(b)) => (b - a + 1) as f64,
            _ => 0.0,
        }
    };
    let cols: Vec<usize> = (0..region.width)
        .filter(|&c| (0..region.height).any(|r| region.get(r, c)))
        .collect();
    let (l, r) = (*cols.first()?, *cols.last()?);
    let handles = handle_mask(img);
    let handle_visible = handles.bits.iter().zip(&region.bits).any(|(&h, &d)| h && d);
    Some(Silhouette {
        left: l as f64,
        right: (r + 1) as f64,
        left_extent: extent(l),
        right_extent: extent(r),
        handle_visible,
    })
}

/// Which vertical edge is the hinge (`true` = left). The hinge stays on the
/// backboard, so it is the shorter edge once the panel swings out; for
/// near-equal edges the door is nearly shut or fully swung over, which the
/// visible handle (front face only) disambiguates given the handedness.
pub fn hinge_is_left(s: &Silhouette, flipped_hint: bool) -> bool {
    let diff = s.left_extent - s.right_extent;
    if diff.abs() > 1.0 {
        return diff < 0.0;
    }
    s.handle_visible != flipped_hint
}

/// Hinge x-position in pixels.
pub fn hinge_position(img: &Image, flipped_hint: bool) -> Option<f64> {
    let s = silhouette(img)?;
    Some(if hinge_is_left(&s, flipped_hint) {
        s.left
    } else {
        s.right
    })
}

/// Opening angle in degrees recovered by inverting the pinhole camera from
/// the edge heights and positions; `flipped_hint` fixes the swing
/// direction.
pub fn estimate_angle(img: &Image, flipped_hint: bool) -> Option<f64> {
    let s = silhouette(img)?;
    let cam = Camera::new(img.width);
    let half = 0.5 * img.width as f64;
    let d = BOARD_DISTANCE;
    let left_hinge = hinge_is_left(&s, flipped_hint);
    let (u_h, h_h, u_f, h_f) = if left_hinge {
        (s.left, s.left_extent, s.right, s.right_extent)
    } else {
        (s.right, s.right_extent, s.left, s.left_extent)
    };
    if h_h <= 0.0 {
        return None;
    }
    let k = (h_f / h_h).max(1.0);
    let depth_drop = d * (1.0 - 1.0 / k);
    let x_h = (u_h - half) * d / cam.focal;
    let x_f = (u_f - half) * (d - depth_drop) / cam.focal;
    let sigma = if flipped_hint { -1.0 } else { 1.0 };
    let across = sigma * (x_f - x_h);
    Some(depth_drop.atan2(across).to_degrees())
}
