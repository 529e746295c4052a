//! Pinhole rendering of a door swung about its hinge.
//!
//! The camera sits at the world origin looking along +Z. The backboard is
//! the plane Z = `BOARD_DISTANCE` and exactly fills the frame; the principal
//! point is the exact image centre, so mirroring a door through x = 0
//! mirrors the image bit-for-bit. Pixels are point-sampled at their centres
//! and the nearest surface wins.
//!
//! A panel point at distance `r` from the hinge at opening angle `θ` sits at
//! `(hinge_x + s·r·cos θ, y, D − r·sin θ)` with `s = door.side()`. The handle
//! is a square knob on the front (pull) face of the panel and is hidden
//! whenever the camera sees the back face.

use super::door::{DoorInstance, DoorSpec, BOARD_HALF_EXTENT};
use crate::error::{Error, Result};
use crate::imageio::Image;

pub const BOARD_DISTANCE: f64 = 1.0;
pub const BACKBOARD_RGB: [f32; 3] = [0.55, 0.35, 0.20];
pub const DOOR_RGB: [f32; 3] = [0.80, 0.10, 0.10];
pub const HANDLE_RGB: [f32; 3] = [0.15, 0.15, 0.15];
/// Side length of the square handle knob.
pub const HANDLE_SIDE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub size: usize,
    /// Focal length in pixels.
    pub focal: f64,
}

impl Camera {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            focal: size as f64 * BOARD_DISTANCE / (2.0 * BOARD_HALF_EXTENT),
        }
    }

    /// Ray slopes `(X/Z, Y/Z)` through the centre of pixel `(row, col)`.
    #[inline]
    pub fn ray(&self, row: usize, col: usize) -> (f64, f64) {
        let half = 0.5 * self.size as f64;
        let a = (col as f64 + 0.5 - half) / self.focal;
        let b = (half - (row as f64 + 0.5)) / self.focal;
        (a, b)
    }

    /// Continuous pixel coordinates `(col, row)` of a camera-space point.
    pub fn project(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        let half = 0.5 * self.size as f64;
        (half + self.focal * x / z, half - self.focal * y / z)
    }
}

/// Projects a camera-space point at the given image size.
pub fn project(size: usize, p: [f64; 3]) -> (f64, f64) {
    Camera::new(size).project(p[0], p[1], p[2])
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Surface {
    Board,
    Panel,
    Handle,
}

struct PanelFrame {
    hinge_x: f64,
    side: f64,
    cos: f64,
    sin: f64,
    width: f64,
    y_lo: f64,
    y_hi: f64,
    handle_r: (f64, f64),
    handle_y: (f64, f64),
}

impl PanelFrame {
    fn new(door: &DoorSpec, angle_deg: f64) -> Self {
        let theta = angle_deg.to_radians();
        let half_h = 0.5 * door.height;
        let half_k = 0.5 * HANDLE_SIDE;
        let r = door.handle_radius();
        Self {
            hinge_x: door.hinge_x(),
            side: door.side(),
            cos: theta.cos(),
            sin: theta.sin(),
            width: door.width,
            y_lo: door.origin_y - half_h,
            y_hi: door.origin_y + half_h,
            handle_r: (r - half_k, r + half_k),
            handle_y: (door.origin_y - half_k, door.origin_y + half_k),
        }
    }

    // Every expression here is odd in (a, hinge_x, side) jointly, which is
    // what keeps the mirror symmetry exact in floating point.
    fn hit(&self, a: f64, b: f64) -> Surface {
        let denom = self.side * self.cos + a * self.sin;
        if denom == 0.0 {
            return Surface::Board;
        }
        let r = (BOARD_DISTANCE * a - self.hinge_x) / denom;
        if r < 0.0 {
            return Surface::Board;
        }
        let z = BOARD_DISTANCE - r * self.sin;
        let y = z * b;
        // Ray direction (a, b, 1) against the front normal (-s·sin, 0, -cos).
        let front = -(self.side * a * self.sin) - self.cos < 0.0;
        if front
            && r >= self.handle_r.0
            && r <= self.handle_r.1
            && y >= self.handle_y.0
            && y <= self.handle_y.1
        {
            return Surface::Handle;
        }
        if r <= self.width && y >= self.y_lo && y <= self.y_hi {
            Surface::Panel
        } else {
            Surface::Board
        }
    }
}

/// Renders one door at one opening angle.
pub fn render(inst: &DoorInstance, size: usize) -> Result<Image> {
    if size < 8 {
        return Err(Error::invalid(format!("image size {size} < 8")));
    }
    if !(0.0..=180.0).contains(&inst.angle_deg) {
        return Err(Error::invalid(format!(
            "door angle {} outside [0, 180]",
            inst.angle_deg
        )));
    }
    let cam = Camera::new(size);
    let frame = PanelFrame::new(&inst.door, inst.angle_deg);
    let mut img = Image::filled(size, size, BACKBOARD_RGB);
    for row in 0..size {
        for col in 0..size {
            let (a, b) = cam.ray(row, col);
            match frame.hit(a, b) {
                Surface::Board => {}
                Surface::Panel => img.set_rgb(row, col, DOOR_RGB),
                Surface::Handle => img.set_rgb(row, col, HANDLE_RGB),
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doorworld::{mirror_door, sample_door};
    use crate::seed::SeedStream;

    fn door() -> DoorSpec {
        DoorSpec {
            origin_x: 0.0,
            origin_y: 0.0,
            width: 0.25,
            height: 0.3,
            handle_offset: 0.05,
            flipped: false,
        }
    }

    fn is_door(rgb: [f32; 3]) -> bool {
        rgb == DOOR_RGB || rgb == HANDLE_RGB
    }

    fn row_extent(img: &Image, row: usize) -> Option<(usize, usize)> {
        let cols: Vec<usize> = (0..img.width)
            .filter(|&c| is_door(img.rgb(row, c)))
            .collect();
        Some((*cols.first()?, *cols.last()?))
    }

    #[test]
    fn rejects_tiny_images_and_bad_angles() {
        let inst = DoorInstance {
            door: door(),
            angle_deg: 0.0,
        };
        assert!(render(&inst, 7).is_err());
        let bad = DoorInstance {
            angle_deg: 181.0,
            ..inst
        };
        assert!(render(&bad, 64).is_err());
    }

    #[test]
    fn closed_door_is_axis_aligned_with_projected_width() {
        let d = DoorSpec {
            origin_x: 0.1,
            width: 0.25,
            ..door()
        };
        let size = 64;
        let img = render(
            &DoorInstance {
                door: d,
                angle_deg: 0.0,
            },
            size,
        )
        .unwrap();
        let cam = Camera::new(size);
        let expected = cam.focal * d.width / BOARD_DISTANCE;
        let center_row = size / 2;
        let (lo, hi) = row_extent(&img, center_row).unwrap();
        let measured = (hi - lo + 1) as f64;
        assert!(
            (measured - expected).abs() <= 1.0,
            "{measured} vs {expected}"
        );
        let centre_px = (lo + hi + 1) as f64 / 2.0;
        let expected_centre = cam.project(d.origin_x, 0.0, BOARD_DISTANCE).0;
        assert!((centre_px - expected_centre).abs() <= 0.5);
        // Every door row has the same extent.
        let rows: Vec<_> = (0..size).filter_map(|r| row_extent(&img, r)).collect();
        assert!(rows.iter().all(|e| *e == rows[rows.len() / 2]));
    }

    #[test]
    fn open_panel_spans_its_projected_edges() {
        // Projected width is not monotone in the angle: close to the wall the
        // free edge approaches the camera faster than it swings inward.
        let d = DoorSpec {
            width: 0.3,
            ..door()
        };
        let size = 64;
        let cam = Camera::new(size);
        let hinge = d.origin_x - d.width / 2.0;
        let free = |deg: f64| {
            let t = deg.to_radians();
            let (x, z) = (hinge + d.width * t.cos(), BOARD_DISTANCE - d.width * t.sin());
            cam.project(x, 0.0, z).0
        };
        assert!(free(5.0) > free(0.0));
        // A row a little above the handle stays on the panel at every depth.
        let row = size / 2 - 6;
        for deg in [0.0, 5.0, 20.0, 45.0, 70.0] {
            let img = render(
                &DoorInstance {
                    door: d,
                    angle_deg: deg,
                },
                size,
            )
            .unwrap();
            let (lo, hi) = row_extent(&img, row).unwrap();
            let left = cam.project(hinge, 0.0, BOARD_DISTANCE).0;
            assert!((lo as f64 - left).abs() <= 1.0, "{deg}: {lo} vs {left}");
            assert!((hi as f64 + 1.0 - free(deg)).abs() <= 1.0, "{deg}: {hi} vs {}", free(deg));
        }
    }

    #[test]
    fn mirror_equivariance_is_bit_exact() {
        let s = SeedStream::new(11);
        for i in 0..20 {
            let d = sample_door(&mut s.rng("door", i));
            for angle in [0.0, 17.0, 45.0, 89.5, 90.0, 123.0, 170.0, 180.0] {
                let a = render(
                    &DoorInstance {
                        door: d,
                        angle_deg: angle,
                    },
                    64,
                )
                .unwrap();
                let b = render(
                    &DoorInstance {
                        door: mirror_door(&d),
                        angle_deg: angle,
                    },
                    64,
                )
                .unwrap();
                assert_eq!(a.mirror_horizontal(), b, "door {i} angle {angle}");
            }
        }
    }

    #[test]
    fn handle_is_visible_closed_and_hidden_from_behind() {
        let d = door();
        let closed = render(
            &DoorInstance {
                door: d,
                angle_deg: 0.0,
            },
            64,
        )
        .unwrap();
        let open = render(
            &DoorInstance {
                door: d,
                angle_deg: 170.0,
            },
            64,
        )
        .unwrap();
        let count = |img: &Image| {
            (0..64)
                .flat_map(|r| (0..64).map(move |c| (r, c)))
                .filter(|&(r, c)| img.rgb(r, c) == HANDLE_RGB)
                .count()
        };
        assert!(count(&closed) > 0);
        assert_eq!(count(&open), 0);
    }

    #[test]
    fn handle_sits_toward_the_free_edge() {
        for flipped in [false, true] {
            let d = DoorSpec { flipped, ..door() };
            let img = render(
                &DoorInstance {
                    door: d,
                    angle_deg: 0.0,
                },
                64,
            )
            .unwrap();
            let cols: Vec<usize> = (0..64)
                .flat_map(|r| (0..64).map(move |c| (r, c)))
                .filter(|&(r, c)| img.rgb(r, c) == HANDLE_RGB)
                .map(|(_, c)| c)
                .collect();
            let mean = cols.iter().sum::<usize>() as f64 / cols.len() as f64;
            if flipped {
                assert!(mean < 31.5);
            } else {
                assert!(mean > 31.5);
            }
        }
    }

    #[test]
    fn rendering_is_pure() {
        let inst = DoorInstance {
            door: door(),
            angle_deg: 33.0,
        };
        assert_eq!(render(&inst, 64).unwrap(), render(&inst, 64).unwrap());
    }
}
