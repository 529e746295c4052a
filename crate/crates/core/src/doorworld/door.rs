use rand::Rng;
use serde::{Deserialize, Serialize};

/// Backboard spans `[-0.5, 0.5]` m in x and y.
pub const BOARD_HALF_EXTENT: f64 = 0.5;
/// Clearance between a closed door and the backboard border.
pub const DOOR_MARGIN: f64 = 0.05;
pub const DOOR_WIDTH_RANGE: (f64, f64) = (0.15, 0.35);
pub const DOOR_HEIGHT_RANGE: (f64, f64) = (0.20, 0.45);
const HANDLE_OFFSET_MIN: f64 = 0.02;
const HANDLE_OFFSET_MAX_FRACTION: f64 = 0.45;
const MAX_REJECTIONS: usize = 1000;

pub const ACTION_AXIS_RANGE: (f64, f64) = (-0.5, 0.5);
pub const ACTION_RADIUS_RANGE: (f64, f64) = (0.05, 0.45);

/// Ground-truth parameters of one door, in meters.
///
/// `flipped = false` puts the hinge on the left edge (smaller x), `true` on
/// the right edge. `handle_offset` is measured from the door's vertical
/// midline toward the free edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: f64,
    pub height: f64,
    pub handle_offset: f64,
    pub flipped: bool,
}

impl DoorSpec {
    /// `+1` when the panel extends toward +x from the hinge, `-1` otherwise.
    pub fn side(&self) -> f64 {
        if self.flipped {
            -1.0
        } else {
            1.0
        }
    }

    pub fn hinge_x(&self) -> f64 {
        let half = 0.5 * self.width;
        if self.flipped {
            self.origin_x + half
        } else {
            self.origin_x - half
        }
    }

    /// Distance from the hinge line to the handle.
    pub fn handle_radius(&self) -> f64 {
        0.5 * self.width + self.handle_offset
    }

    pub fn is_valid(&self) -> bool {
        let inside = BOARD_HALF_EXTENT;
        self.width > 0.0
            && self.height > 0.0
            && self.handle_offset >= 0.0
            && self.handle_offset < 0.5 * self.width
            && self.origin_x - 0.5 * self.width > -inside
            && self.origin_x + 0.5 * self.width < inside
            && self.origin_y - 0.5 * self.height > -inside
            && self.origin_y + 0.5 * self.height < inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoorInstance {
    pub door: DoorSpec,
    pub angle_deg: f64,
}

/// A planned door-opening motion: a vertical rotation axis at `axis_x` on
/// the backboard, the radius of the planned handle arc and the goal angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub axis_x: f64,
    pub radius: f64,
    pub goal_deg: f64,
}

impl Action {
    pub fn is_valid(&self) -> bool {
        self.radius > 0.0 && self.goal_deg > 0.0 && self.goal_deg <= 180.0
    }

    /// Features min-max scaled by the sampling ranges.
    pub fn features(&self) -> [f64; 3] {
        let (a0, a1) = ACTION_AXIS_RANGE;
        let (r0, r1) = ACTION_RADIUS_RANGE;
        [
            (self.axis_x - a0) / (a1 - a0),
            (self.radius - r0) / (r1 - r0),
            self.goal_deg / 180.0,
        ]
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Samples a door whose closed rectangle sits inside the backboard with a
/// `DOOR_MARGIN` clearance.
///
/// # Panics
///
/// If no valid origin is found after 1000 rejections, which only happens
/// when the sampling ranges are misconfigured.
pub fn sample_door<R: Rng + ?Sized>(rng: &mut R) -> DoorSpec {
    let width = uniform(rng, DOOR_WIDTH_RANGE);
    let height = uniform(rng, DOOR_HEIGHT_RANGE);
    let handle_offset = uniform(rng, (HANDLE_OFFSET_MIN, HANDLE_OFFSET_MAX_FRACTION * width));
    let flipped = rng.random::<bool>();
    let limit = BOARD_HALF_EXTENT - DOOR_MARGIN;
    for _ in 0..MAX_REJECTIONS {
        let origin_x = uniform(rng, (-BOARD_HALF_EXTENT, BOARD_HALF_EXTENT));
        let origin_y = uniform(rng, (-BOARD_HALF_EXTENT, BOARD_HALF_EXTENT));
        if origin_x.abs() + 0.5 * width <= limit && origin_y.abs() + 0.5 * height <= limit {
            return DoorSpec {
                origin_x,
                origin_y,
                width,
                height,
                handle_offset,
                flipped,
            };
        }
    }
    panic!("door origin rejection sampling exhausted; check the size ranges");
}

/// Reflects a door through the plane x = 0.
pub fn mirror_door(door: &DoorSpec) -> DoorSpec {
    DoorSpec {
        origin_x: -door.origin_x,
        flipped: !door.flipped,
        ..*door
    }
}

pub fn sample_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    let axis_x = uniform(rng, ACTION_AXIS_RANGE);
    let radius = uniform(rng, ACTION_RADIUS_RANGE);
    // (0, 180]: 1 - u with u in [0, 1).
    let goal_deg = 180.0 * (1.0 - rng.random::<f64>());
    Action {
        axis_x,
        radius,
        goal_deg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedStream;

    #[test]
    fn sampling_is_deterministic() {
        let s = SeedStream::new(0);
        assert_eq!(
            sample_door(&mut s.rng("door", 0)),
            sample_door(&mut s.rng("door", 0))
        );
        assert_eq!(
            sample_action(&mut s.rng("action", 3)),
            sample_action(&mut s.rng("action", 3))
        );
    }

    #[test]
    fn sampled_doors_are_valid_and_inside_the_board() {
        let mut rng = SeedStream::new(1).rng("door", 0);
        for _ in 0..2000 {
            let d = sample_door(&mut rng);
            assert!(d.is_valid(), "{d:?}");
            assert!(d.origin_x.abs() + d.width / 2.0 <= 0.45 + 1e-12);
            assert!(d.origin_y.abs() + d.height / 2.0 <= 0.45 + 1e-12);
        }
    }

    #[test]
    fn flipped_fraction_is_fair() {
        let mut rng = SeedStream::new(2).rng("door", 0);
        let n = 10_000;
        let flipped = (0..n).filter(|_| sample_door(&mut rng).flipped).count();
        let frac = flipped as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn mirror_examples() {
        let d = DoorSpec {
            origin_x: 0.1,
            origin_y: 0.05,
            width: 0.2,
            height: 0.3,
            handle_offset: 0.04,
            flipped: false,
        };
        let m = mirror_door(&d);
        assert_eq!(m.origin_x, -0.1);
        assert!(m.flipped);
        assert_eq!(mirror_door(&m), d);
        let centered = DoorSpec { origin_x: 0.0, ..d };
        let mc = mirror_door(&centered);
        assert_eq!(mc.origin_x, 0.0);
        assert!(mc.flipped);
        assert_eq!(mc.hinge_x(), -centered.hinge_x());
    }

    #[test]
    fn actions_respect_ranges_and_axis_mean_is_centered() {
        let mut rng = SeedStream::new(3).rng("action", 0);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let a = sample_action(&mut rng);
            assert!(a.is_valid());
            assert!(a.goal_deg > 0.0 && a.goal_deg <= 180.0);
            assert!((0.05..=0.45).contains(&a.radius));
            sum += a.axis_x;
        }
        assert!((sum / n as f64).abs() < 0.01);
    }
}
