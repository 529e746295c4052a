//! Kinematic door-opening oracle.
//!
//! The robot grasps the handle and sweeps it along its planned circular arc
//! in fixed steps. At every step the door angle advances (never backwards,
//! at most `max_advance_deg`) to bring the true handle as close as possible
//! to the planned handle position; once that gap exceeds the slip tolerance
//! the grasp is lost. The slip point is located inside the failing step by
//! bisection and the door stays at the angle it had reached there. The
//! reward is the chord travelled by the handle, `2·r·sin(θ_stop / 2)`.

use super::door::{Action, DoorSpec};
use super::render::BOARD_DISTANCE;

/// Gap between planned and true handle position that breaks the grasp.
pub const HANDLE_SLIP_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionParams {
    pub step_deg: f64,
    pub max_advance_deg: f64,
    pub slip: f64,
}

impl Default for ExecutionParams {
    fn default() -> Self {
        Self {
            step_deg: 1.0,
            max_advance_deg: 5.0,
            slip: HANDLE_SLIP_TOLERANCE,
        }
    }
}

/// Distance opened by the door under `action`, starting closed.
pub fn execute_action(door: &DoorSpec, action: &Action) -> f64 {
    execute_action_with(door, action, &ExecutionParams::default())
}

/// The action that follows the true handle circle all the way open.
pub fn ideal_action(door: &DoorSpec) -> Action {
    Action {
        axis_x: door.hinge_x(),
        radius: door.handle_radius(),
        goal_deg: 180.0,
    }
}

pub fn execute_action_with(door: &DoorSpec, action: &Action, params: &ExecutionParams) -> f64 {
    let r = door.handle_radius();
    let theta_stop = opened_angle(door, action, params);
    2.0 * r * (0.5 * theta_stop.to_radians()).sin()
}

fn opened_angle(door: &DoorSpec, action: &Action, params: &ExecutionParams) -> f64 {
    let hinge = door.hinge_x();
    let side = door.side();
    let r = door.handle_radius();
    let handle_x0 = hinge + side * r;
    let start_side = if handle_x0 - action.axis_x >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let goal = action.goal_deg.clamp(0.0, 180.0);

    // Best door angle for the planned handle at sweep angle `phi`, given
    // the angle reached so far, and whether the grasp survives there.
    let track = |phi: f64, theta: f64| {
        let phi_rad = phi.to_radians();
        let px = action.axis_x + start_side * action.radius * phi_rad.cos();
        let pz = BOARD_DISTANCE - action.radius * phi_rad.sin();
        let hi = (theta + params.max_advance_deg).min(goal);
        let best = closest_angle(hinge, side, px, pz, theta, hi);
        (
            best,
            handle_gap(hinge, side, r, px, pz, best) <= params.slip,
        )
    };

    let mut theta = 0.0_f64;
    let mut prev_phi = 0.0_f64;
    let mut k = 0usize;
    loop {
        let phi = (k as f64 * params.step_deg).min(goal);
        let (best, held) = track(phi, theta);
        if !held {
            if k == 0 {
                return theta;
            }
            // Locate the slip inside the last step so the stopping angle
            // does not depend on the step size.
            let (mut ok, mut bad) = (prev_phi, phi);
            let mut at_ok = theta;
            for _ in 0..40 {
                let mid = 0.5 * (ok + bad);
                let (t, held) = track(mid, theta);
                if held {
                    ok = mid;
                    at_ok = t;
                } else {
                    bad = mid;
                }
            }
            return at_ok;
        }
        theta = best;
        if phi >= goal {
            return theta;
        }
        prev_phi = phi;
        k += 1;
    }
}

fn handle_gap(hinge: f64, side: f64, r: f64, px: f64, pz: f64, theta_deg: f64) -> f64 {
    let t = theta_deg.to_radians();
    let hx = hinge + side * r * t.cos();
    let hz = BOARD_DISTANCE - r * t.sin();
    ((px - hx).powi(2) + (pz - hz).powi(2)).sqrt()
}

/// Angle in `[lo, hi]` minimising the distance from the handle circle to
/// `(px, pz)`. The distance grows with the angular separation from the
/// point's own polar angle about the hinge, so the answer is that angle
/// clamped into the interval.
fn closest_angle(hinge: f64, side: f64, px: f64, pz: f64, lo: f64, hi: f64) -> f64 {
    let dx = side * (px - hinge);
    let dz = BOARD_DISTANCE - pz;
    if dx == 0.0 && dz == 0.0 {
        return lo;
    }
    let polar = dz.atan2(dx).to_degrees();
    if polar >= lo && polar <= hi {
        return polar;
    }
    let sep = |t: f64| {
        let d = (t - polar).rem_euclid(360.0);
        d.min(360.0 - d)
    };
    if sep(hi) < sep(lo) {
        hi
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doorworld::{sample_action, sample_door};
    use crate::seed::SeedStream;

    fn door(flipped: bool) -> DoorSpec {
        DoorSpec {
            origin_x: 0.05,
            origin_y: 0.0,
            width: 0.3,
            height: 0.35,
            handle_offset: 0.06,
            flipped,
        }
    }

    #[test]
    fn ideal_action_opens_fully() {
        for flipped in [false, true] {
            let d = door(flipped);
            let r = d.handle_radius();
            let reward = execute_action(&d, &ideal_action(&d));
            assert!((reward - 2.0 * r).abs() < 1e-12, "{reward}");
        }
    }

    #[test]
    fn ideal_action_to_ninety_degrees() {
        let d = door(false);
        let r = d.handle_radius();
        let a = Action {
            goal_deg: 90.0,
            ..ideal_action(&d)
        };
        let reward = execute_action(&d, &a);
        assert!((reward - 2f64.sqrt() * r).abs() < 1e-12);
    }

    #[test]
    fn opposite_handedness_action_fails() {
        for flipped in [false, true] {
            let d = door(flipped);
            let wrong = ideal_action(&DoorSpec {
                flipped: !flipped,
                ..d
            });
            let reward = execute_action(&d, &wrong);
            assert!(reward < 0.05 * d.handle_radius(), "{reward}");
        }
    }

    #[test]
    fn rewards_are_bounded() {
        let s = SeedStream::new(5);
        for i in 0..300 {
            let d = sample_door(&mut s.rng("door", i));
            let a = sample_action(&mut s.rng("action", i));
            let reward = execute_action(&d, &a);
            assert!(reward >= 0.0 && reward <= 2.0 * d.handle_radius() + 1e-12);
        }
    }

    #[test]
    fn start_far_from_handle_slips_immediately() {
        let d = door(false);
        let a = Action {
            axis_x: d.hinge_x() - 0.1,
            radius: 0.05,
            goal_deg: 120.0,
        };
        assert_eq!(execute_action(&d, &a), 0.0);
    }
}
