//! Eight-way maneuver taxonomy, the rule-based trajectory classifier and the
//! differentiable consistency penalty that pulls a planned trajectory toward
//! the commanded maneuver.

mod keywords;
pub(crate) mod maker;
mod remote;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use dme_nn::{CustomOp, Matrix};
use serde::{Deserialize, Serialize};

use crate::trajectory::{EgoStatus, Trajectory, STEP_SECONDS, WAYPOINTS};

pub use keywords::category_from_text;
pub use maker::{
    decision_sentence, gaze_target, scene_summary, scripted_decision_maker, DriverLogicOutput, GazeTarget,
};
pub use remote::{remote_decision_maker, RemoteDecision, RemoteOptions, DIALOGUE_QUESTIONS};

/// Maneuver classes, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionCategory {
    Forward,
    Accelerate,
    Decelerate,
    Stop,
    TurnLeft,
    TurnRight,
    LaneChangeLeft,
    LaneChangeRight,
}

impl DecisionCategory {
    pub const ALL: [DecisionCategory; 8] = [
        DecisionCategory::Forward,
        DecisionCategory::Accelerate,
        DecisionCategory::Decelerate,
        DecisionCategory::Stop,
        DecisionCategory::TurnLeft,
        DecisionCategory::TurnRight,
        DecisionCategory::LaneChangeLeft,
        DecisionCategory::LaneChangeRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionCategory::Forward => "forward",
            DecisionCategory::Accelerate => "accelerate",
            DecisionCategory::Decelerate => "decelerate",
            DecisionCategory::Stop => "stop",
            DecisionCategory::TurnLeft => "turn_left",
            DecisionCategory::TurnRight => "turn_right",
            DecisionCategory::LaneChangeLeft => "lane_change_left",
            DecisionCategory::LaneChangeRight => "lane_change_right",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DecisionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DecisionCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown decision category '{s}'"))
    }
}

/// Thresholds of the maneuver rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleThresholds {
    /// Heading change, in degrees, that makes a turn.
    pub turn_deg: f64,
    /// Final lateral offset, in metres, that makes a lane change.
    pub lateral_lane_change: f64,
    pub accel_ratio: f64,
    pub decel_ratio: f64,
    /// Final-segment speed below which the trajectory is a stop, m/s.
    pub stop_speed: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        RuleThresholds {
            turn_deg: 15.0,
            lateral_lane_change: 1.5,
            accel_ratio: 1.25,
            decel_ratio: 0.8,
            stop_speed: 0.5,
        }
    }
}

impl RuleThresholds {
    pub fn turn_rad(&self) -> f64 {
        self.turn_deg.to_radians()
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.turn_deg,
            self.lateral_lane_change,
            self.accel_ratio,
            self.decel_ratio,
            self.stop_speed,
        ]
        .iter()
        .all(|&v| v > 0.0 && v.is_finite());
        if !positive {
            return Err("rule thresholds must be positive".into());
        }
        if !(self.accel_ratio > 1.0 && 1.0 > self.decel_ratio) {
            return Err(format!(
                "need accel_ratio > 1 > decel_ratio, got {} and {}",
                self.accel_ratio, self.decel_ratio
            ));
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Quantities the rules look at, with their gradients wrt the waypoints.
#[derive(Debug, Clone, Copy)]
struct Discriminants {
    /// Final-segment speed.
    speed: f64,
    /// Final-segment heading minus ego heading, wrapped to (−π, π].
    heading: f64,
    /// y of the final waypoint.
    lateral: f64,
    d_speed: [[f64; 2]; WAYPOINTS],
    d_heading: [[f64; 2]; WAYPOINTS],
}

fn discriminants(traj: &Trajectory, ego: &EgoStatus) -> Discriminants {
    let p = traj.points();
    let (a, b) = (p[WAYPOINTS - 2], p[WAYPOINTS - 1]);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let len = len2.sqrt();
    let mut d_speed = [[0.0; 2]; WAYPOINTS];
    let mut d_heading = [[0.0; 2]; WAYPOINTS];
    if len > 0.0 {
        let (ux, uy) = (dx / (len * STEP_SECONDS), dy / (len * STEP_SECONDS));
        d_speed[WAYPOINTS - 1] = [ux, uy];
        d_speed[WAYPOINTS - 2] = [-ux, -uy];
        let (hx, hy) = (-dy / len2, dx / len2);
        d_heading[WAYPOINTS - 1] = [hx, hy];
        d_heading[WAYPOINTS - 2] = [-hx, -hy];
    }
    Discriminants {
        speed: len / STEP_SECONDS,
        heading: wrap_angle(dy.atan2(dx) - ego.heading),
        lateral: b[1],
        d_speed,
        d_heading,
    }
}

/// Rule-based classification with precedence
/// Stop > Turn > LaneChange > Accelerate/Decelerate > Forward.
pub fn classify_trajectory(traj: &Trajectory, ego: &EgoStatus, th: &RuleThresholds) -> DecisionCategory {
    let d = discriminants(traj, ego);
    let turn = th.turn_rad();
    if d.speed < th.stop_speed {
        DecisionCategory::Stop
    } else if d.heading >= turn {
        DecisionCategory::TurnLeft
    } else if d.heading <= -turn {
        DecisionCategory::TurnRight
    } else if d.lateral >= th.lateral_lane_change {
        DecisionCategory::LaneChangeLeft
    } else if d.lateral <= -th.lateral_lane_change {
        DecisionCategory::LaneChangeRight
    } else if d.speed >= th.accel_ratio * ego.speed {
        DecisionCategory::Accelerate
    } else if d.speed <= th.decel_ratio * ego.speed {
        DecisionCategory::Decelerate
    } else {
        DecisionCategory::Forward
    }
}

/// Hinge terms accumulated into a value and a waypoint gradient.
struct HingeSum {
    value: f64,
    grad: [[f64; 2]; WAYPOINTS],
}

impl HingeSum {
    fn new() -> Self {
        HingeSum {
            value: 0.0,
            grad: [[0.0; 2]; WAYPOINTS],
        }
    }

    /// Adds max(0, x) where x has waypoint gradient `dx` (scaled by `sign`).
    fn hinge(&mut self, x: f64, sign: f64, dx: &[[f64; 2]; WAYPOINTS]) {
        if x > 0.0 {
            self.value += x;
            for (g, d) in self.grad.iter_mut().zip(dx) {
                g[0] += sign * d[0];
                g[1] += sign * d[1];
            }
        }
    }
}

/// Consistency penalty and its gradient wrt the six waypoints.
///
/// The penalty is a sum of hinges on the rule margins; it is zero exactly on
/// the closure of the region `classify_trajectory` assigns to `decision`.
pub fn consistency_penalty_with_grad(
    traj: &Trajectory,
    decision: DecisionCategory,
    ego: &EgoStatus,
    th: &RuleThresholds,
) -> (f64, [[f64; 2]; WAYPOINTS]) {
    use DecisionCategory::*;

    let d = discriminants(traj, ego);
    let turn = th.turn_rad();
    let mut d_lateral = [[0.0; 2]; WAYPOINTS];
    d_lateral[WAYPOINTS - 1][1] = 1.0;
    let sgn = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let h_sign = sgn(d.heading);
    let l_sign = sgn(d.lateral);

    let mut acc = HingeSum::new();
    let moving = |acc: &mut HingeSum| acc.hinge(th.stop_speed - d.speed, -1.0, &d.d_speed);
    let heading_inside = |acc: &mut HingeSum| acc.hinge(d.heading.abs() - turn, h_sign, &d.d_heading);
    let lateral_inside = |acc: &mut HingeSum| acc.hinge(d.lateral.abs() - th.lateral_lane_change, l_sign, &d_lateral);

    match decision {
        Stop => acc.hinge(d.speed - th.stop_speed, 1.0, &d.d_speed),
        TurnLeft => {
            moving(&mut acc);
            acc.hinge(turn - d.heading, -1.0, &d.d_heading);
        }
        TurnRight => {
            moving(&mut acc);
            acc.hinge(d.heading + turn, 1.0, &d.d_heading);
        }
        LaneChangeLeft => {
            moving(&mut acc);
            heading_inside(&mut acc);
            acc.hinge(th.lateral_lane_change - d.lateral, -1.0, &d_lateral);
        }
        LaneChangeRight => {
            moving(&mut acc);
            heading_inside(&mut acc);
            acc.hinge(d.lateral + th.lateral_lane_change, 1.0, &d_lateral);
        }
        Accelerate | Decelerate | Forward => {
            moving(&mut acc);
            heading_inside(&mut acc);
            lateral_inside(&mut acc);
            let fast = th.accel_ratio * ego.speed;
            let slow = th.decel_ratio * ego.speed;
            match decision {
                Accelerate => acc.hinge(fast - d.speed, -1.0, &d.d_speed),
                Decelerate => acc.hinge(d.speed - slow, 1.0, &d.d_speed),
                _ => {
                    acc.hinge(d.speed - fast, 1.0, &d.d_speed);
                    acc.hinge(slow - d.speed, -1.0, &d.d_speed);
                }
            }
        }
    }
    (acc.value, acc.grad)
}

pub fn consistency_penalty(traj: &Trajectory, decision: DecisionCategory, ego: &EgoStatus, th: &RuleThresholds) -> f64 {
    consistency_penalty_with_grad(traj, decision, ego, th).0
}

/// Tape operation mapping a 6×2 waypoint matrix to its consistency penalty.
#[derive(Debug, Clone)]
pub struct ConsistencyOp {
    pub decision: DecisionCategory,
    pub ego: EgoStatus,
    pub thresholds: RuleThresholds,
}

impl CustomOp for ConsistencyOp {
    fn name(&self) -> &'static str {
        "consistency_penalty"
    }

    fn forward(&self, inputs: &[&Matrix]) -> Matrix {
        let traj = Trajectory::from_matrix(inputs[0]).expect("6x2 waypoints");
        Matrix::scalar(consistency_penalty(&traj, self.decision, &self.ego, &self.thresholds))
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad_output: &Matrix) -> Vec<Matrix> {
        let traj = Trajectory::from_matrix(inputs[0]).expect("6x2 waypoints");
        let (_, g) = consistency_penalty_with_grad(&traj, self.decision, &self.ego, &self.thresholds);
        let scale = grad_output.data()[0];
        let data = g.iter().flat_map(|p| [p[0] * scale, p[1] * scale]).collect();
        vec![Matrix::from_vec(WAYPOINTS, 2, data).expect("finite gradient")]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dme_nn::{grad_check, Tape};
    use std::rc::Rc;

    fn straight(speed: f64) -> Trajectory {
        let mut pts = [[0.0; 2]; WAYPOINTS];
        for (k, p) in pts.iter_mut().enumerate() {
            p[0] = speed * Trajectory::time_of(k);
        }
        Trajectory(pts)
    }

    /// Constant-speed arc whose tangent turns by `total` radians over 3 s.
    fn arc(speed: f64, total: f64) -> Trajectory {
        let omega = total / 3.0;
        let radius = speed / omega;
        let mut pts = [[0.0; 2]; WAYPOINTS];
        for (k, p) in pts.iter_mut().enumerate() {
            let th = omega * Trajectory::time_of(k);
            *p = [radius * th.sin(), radius * (1.0 - th.cos())];
        }
        Trajectory(pts)
    }

    #[test]
    fn straight_is_forward() {
        let th = RuleThresholds::default();
        assert_eq!(
            classify_trajectory(&straight(5.0), &EgoStatus::new(5.0), &th),
            DecisionCategory::Forward
        );
    }

    #[test]
    fn thirty_degree_arc_turns_left() {
        let th = RuleThresholds::default();
        let t = arc(5.0, 30f64.to_radians());
        // final chord direction is the tangent at t = 2.75 s: 27.5°
        let p = t.points();
        let chord = (p[5][1] - p[4][1]).atan2(p[5][0] - p[4][0]).to_degrees();
        assert!((chord - 27.5).abs() < 1e-9, "{chord}");
        assert_eq!(
            classify_trajectory(&t, &EgoStatus::new(5.0), &th),
            DecisionCategory::TurnLeft
        );
        assert_eq!(
            classify_trajectory(&arc(5.0, -30f64.to_radians()), &EgoStatus::new(5.0), &th),
            DecisionCategory::TurnRight
        );
    }

    #[test]
    fn stationary_tail_is_stop() {
        let th = RuleThresholds::default();
        let t = Trajectory([
            [0.1, 0.0],
            [0.15, 0.05],
            [0.1, 0.1],
            [0.12, 0.0],
            [0.1, 0.1],
            [0.1, 0.1],
        ]);
        assert_eq!(
            classify_trajectory(&t, &EgoStatus::new(3.0), &th),
            DecisionCategory::Stop
        );
    }

    #[test]
    fn matching_expert_has_zero_penalty() {
        let th = RuleThresholds::default();
        let p = consistency_penalty(&straight(5.0), DecisionCategory::Forward, &EgoStatus::new(5.0), &th);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn straight_trajectory_against_turn_left() {
        let th = RuleThresholds::default();
        let p = consistency_penalty(&straight(5.0), DecisionCategory::TurnLeft, &EgoStatus::new(5.0), &th);
        assert!((p - 15f64.to_radians()).abs() < 1e-15);
        assert!((p - 0.2618).abs() < 1e-4);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let th = RuleThresholds::default();
        let ego = EgoStatus::new(6.0);
        // generic trajectory away from every hinge kink
        let t = Trajectory([
            [2.9, 0.2],
            [5.7, 0.5],
            [8.3, 0.9],
            [10.9, 1.1],
            [13.2, 1.2],
            [15.1, 1.35],
        ]);
        for decision in DecisionCategory::ALL {
            let op = Rc::new(ConsistencyOp {
                decision,
                ego,
                thresholds: th,
            });
            let err = grad_check(
                |tape: &Tape, x| Ok(tape.custom(op.clone(), &[x[0]])),
                &[t.to_matrix()],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{decision}: {err}");
        }
    }

    #[test]
    fn rotation_shifts_heading_by_the_angle() {
        let th = RuleThresholds::default();
        let ego = EgoStatus::new(5.0);
        let base = straight(5.0);
        let turn = th.turn_deg;
        let classify_at = |deg: f64| classify_trajectory(&base.rotated(deg.to_radians()), &ego, &th);
        assert_eq!(classify_at(turn + 1.0), DecisionCategory::TurnLeft);
        assert_eq!(classify_at(-(turn + 1.0)), DecisionCategory::TurnRight);
        // just inside the turn band the large final offset reads as a lane change
        assert_eq!(classify_at(turn - 1.0), DecisionCategory::LaneChangeLeft);
        assert_eq!(classify_at(-(turn - 1.0)), DecisionCategory::LaneChangeRight);

        let d0 = discriminants(&base, &ego).heading;
        let d1 = discriminants(&base.rotated(0.3), &ego).heading;
        assert!((d1 - d0 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn category_names_round_trip() {
        for c in DecisionCategory::ALL {
            assert_eq!(c.as_str().parse::<DecisionCategory>().unwrap(), c);
        }
        assert!("sideways".parse::<DecisionCategory>().is_err());
    }

    #[test]
    fn threshold_validation() {
        assert!(RuleThresholds::default().validate().is_ok());
        let bad = RuleThresholds {
            accel_ratio: 0.9,
            ..RuleThresholds::default()
        };
        assert!(bad.validate().is_err());
    }
}
