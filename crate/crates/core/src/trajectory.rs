use dme_nn::Matrix;
use serde::{Deserialize, Serialize};

/// Number of planned waypoints.
pub const WAYPOINTS: usize = 6;
/// Spacing between waypoints in seconds.
pub const STEP_SECONDS: f64 = 0.5;
/// Fastest plausible speed, bounds consecutive-waypoint spacing.
pub const MAX_SPEED: f64 = 20.0;
/// Waypoint indices of the 1 s, 2 s and 3 s evaluation horizons.
pub const HORIZON_INDICES: [usize; 3] = [1, 3, 5];

/// Ego-frame waypoints at t = 0.5, 1.0, …, 3.0 s. +x forward, +y left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory(pub [[f64; 2]; WAYPOINTS]);

impl Trajectory {
    pub fn zeros() -> Self {
        Trajectory([[0.0; 2]; WAYPOINTS])
    }

    pub fn points(&self) -> &[[f64; 2]; WAYPOINTS] {
        &self.0
    }

    /// Time stamp of waypoint `k`.
    pub fn time_of(k: usize) -> f64 {
        (k + 1) as f64 * STEP_SECONDS
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.0.iter().flat_map(|p| p.iter().copied()).collect();
        Matrix::from_vec(WAYPOINTS, 2, data).expect("finite waypoints")
    }

    pub fn from_matrix(m: &Matrix) -> Option<Self> {
        if m.shape() != (WAYPOINTS, 2) {
            return None;
        }
        let mut pts = [[0.0; 2]; WAYPOINTS];
        for (k, p) in pts.iter_mut().enumerate() {
            *p = [m.get(k, 0), m.get(k, 1)];
        }
        Some(Trajectory(pts))
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Self {
        let mut out = *self;
        for p in &mut out.0 {
            p[0] += dx;
            p[1] += dy;
        }
        out
    }

    /// Rigid rotation about the ego origin by `angle` radians (CCW).
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let mut out = *self;
        for p in &mut out.0 {
            let [x, y] = *p;
            *p = [c * x - s * y, s * x + c * y];
        }
        out
    }

    /// Largest distance between consecutive waypoints, starting from the origin.
    pub fn max_step(&self) -> f64 {
        let mut prev = [0.0, 0.0];
        let mut max: f64 = 0.0;
        for p in &self.0 {
            max = max.max((p[0] - prev[0]).hypot(p[1] - prev[1]));
            prev = *p;
        }
        max
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Ego vehicle state. The ego sits at the origin of its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoStatus {
    /// m/s, never negative.
    pub speed: f64,
    /// Radians CCW from +x.
    pub heading: f64,
}

impl EgoStatus {
    pub fn new(speed: f64) -> Self {
        EgoStatus { speed, heading: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let t = Trajectory([
            [1.0, 2.0],
            [3.0, 4.0],
            [5.0, 6.0],
            [7.0, 8.0],
            [9.0, 10.0],
            [11.0, 12.0],
        ]);
        assert_eq!(Trajectory::from_matrix(&t.to_matrix()), Some(t));
        assert_eq!(Trajectory::from_matrix(&Matrix::zeros(5, 2)), None);
    }

    #[test]
    fn rotation_quarter_turn() {
        let t = Trajectory([[1.0, 0.0]; WAYPOINTS]).rotated(std::f64::consts::FRAC_PI_2);
        assert!(t.0[0][0].abs() < 1e-15);
        assert!((t.0[0][1] - 1.0).abs() < 1e-15);
    }
}
