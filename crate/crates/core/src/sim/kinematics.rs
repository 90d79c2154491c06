//! Speed-profile and piecewise-constant yaw-rate path integration.

use serde::{Deserialize, Serialize};

use crate::trajectory::{Trajectory, WAYPOINTS};

/// Substeps per 0.5 s interval when the path curves.
const SUBSTEPS: usize = 64;

/// Longitudinal speed over time. Speed never drops below zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedProfile {
    Constant { speed: f64 },
    Linear { v0: f64, accel: f64 },
}

impl SpeedProfile {
    pub fn initial_speed(&self) -> f64 {
        match *self {
            SpeedProfile::Constant { speed } => speed,
            SpeedProfile::Linear { v0, .. } => v0,
        }
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        match *self {
            SpeedProfile::Constant { speed } => speed,
            SpeedProfile::Linear { v0, accel } => (v0 + accel * t).max(0.0),
        }
    }

    /// Arc length travelled by time `t`, in closed form.
    pub fn distance_at(&self, t: f64) -> f64 {
        match *self {
            SpeedProfile::Constant { speed } => speed * t,
            SpeedProfile::Linear { v0, accel } => {
                if accel < 0.0 {
                    let t_stop = v0 / -accel;
                    if t >= t_stop {
                        return v0 * v0 / (2.0 * -accel);
                    }
                }
                v0 * t + 0.5 * accel * t * t
            }
        }
    }
}

/// Yaw rate that is constant on consecutive intervals. After the last
/// segment ends the rate is zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct YawProfile {
    /// `(duration s, yaw rate rad/s)` pairs, applied in order from t = 0.
    pub segments: Vec<(f64, f64)>,
}

impl YawProfile {
    pub fn straight() -> Self {
        YawProfile::default()
    }

    pub fn constant(rate: f64, duration: f64) -> Self {
        YawProfile {
            segments: vec![(duration, rate)],
        }
    }

    pub fn is_straight(&self) -> bool {
        self.segments.iter().all(|&(_, w)| w == 0.0)
    }

    /// Heading change accumulated by time `t`.
    pub fn heading_at(&self, t: f64) -> f64 {
        let mut start = 0.0;
        let mut heading = 0.0;
        for &(dur, rate) in &self.segments {
            if t <= start {
                break;
            }
            heading += rate * (t.min(start + dur) - start);
            start += dur;
        }
        heading
    }
}

/// Integrates the path and returns positions sampled at `times`.
pub fn integrate(speed: &SpeedProfile, yaw: &YawProfile, heading0: f64, times: &[f64]) -> Vec<[f64; 2]> {
    if yaw.is_straight() {
        let (s, c) = heading0.sin_cos();
        return times
            .iter()
            .map(|&t| {
                let d = speed.distance_at(t);
                [c * d, s * d]
            })
            .collect();
    }
    let mut out = Vec::with_capacity(times.len());
    let mut pos = [0.0, 0.0];
    let mut t_prev = 0.0;
    for &t in times {
        let n = (((t - t_prev) / 0.5) * SUBSTEPS as f64).ceil().max(1.0) as usize;
        let dt = (t - t_prev) / n as f64;
        for i in 0..n {
            let a = t_prev + i as f64 * dt;
            let b = a + dt;
            let ds = speed.distance_at(b) - speed.distance_at(a);
            let h = heading0 + yaw.heading_at(0.5 * (a + b));
            pos[0] += ds * h.cos();
            pos[1] += ds * h.sin();
        }
        out.push(pos);
        t_prev = t;
    }
    out
}

/// Waypoints at t = 0.5 … 3.0 s.
pub fn waypoints(speed: &SpeedProfile, yaw: &YawProfile, heading0: f64) -> Trajectory {
    let times: Vec<f64> = (0..WAYPOINTS).map(Trajectory::time_of).collect();
    let pts = integrate(speed, yaw, heading0, &times);
    let mut arr = [[0.0; 2]; WAYPOINTS];
    arr.copy_from_slice(&pts);
    Trajectory(arr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_speed_straight_line() {
        let t = waypoints(&SpeedProfile::Constant { speed: 5.0 }, &YawProfile::straight(), 0.0);
        let want = [2.5, 5.0, 7.5, 10.0, 12.5, 15.0];
        for (p, x) in t.0.iter().zip(want) {
            assert_eq!(*p, [x, 0.0]);
        }
    }

    #[test]
    fn braking_to_rest() {
        let prof = SpeedProfile::Linear { v0: 4.0, accel: -2.0 };
        let t = waypoints(&prof, &YawProfile::straight(), 0.0);
        let xs: Vec<f64> = t.0.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![1.75, 3.0, 3.75, 4.0, 4.0, 4.0]);
        assert_eq!(prof.speed_at(3.0), 0.0);
    }

    #[test]
    fn constant_turn_matches_circle() {
        let (v, w) = (6.0, 0.3);
        let t = waypoints(&SpeedProfile::Constant { speed: v }, &YawProfile::constant(w, 3.0), 0.0);
        let r = v / w;
        for (k, p) in t.0.iter().enumerate() {
            let th = w * Trajectory::time_of(k);
            let want = [r * th.sin(), r * (1.0 - th.cos())];
            assert!(
                (p[0] - want[0]).abs() < 1e-3 && (p[1] - want[1]).abs() < 1e-3,
                "{k}: {p:?} vs {want:?}"
            );
        }
    }

    #[test]
    fn heading_accumulates_over_segments() {
        let yaw = YawProfile {
            segments: vec![(1.0, 0.2), (1.0, -0.2)],
        };
        assert!((yaw.heading_at(0.5) - 0.1).abs() < 1e-15);
        assert!((yaw.heading_at(1.0) - 0.2).abs() < 1e-15);
        assert!(yaw.heading_at(2.5).abs() < 1e-15);
    }
}
