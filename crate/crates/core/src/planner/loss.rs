use std::rc::Rc;

use dme_nn::{CustomOp, Matrix, Tape, Var};
use serde::{Deserialize, Serialize};

use super::{AblationMode, PlannerError};
use crate::decision::{consistency_penalty, ConsistencyOp, DecisionCategory, RuleThresholds};
use crate::sim::{DistanceField, Scene};
use crate::trajectory::{EgoStatus, Trajectory, WAYPOINTS};

/// Clearance below which a waypoint is penalized.
pub const COLLISION_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub imitation: f64,
    pub collision: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            imitation: 1.0,
            collision: 0.5,
            consistency: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let ok = [self.imitation, self.collision, self.consistency]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(PlannerError::Config(
                "loss weights must be finite and non-negative".into(),
            ))
        }
    }

    /// Weights actually applied in a mode: the consistency term only counts
    /// when training with consistency.
    pub fn for_mode(&self, mode: AblationMode) -> LossWeights {
        LossWeights {
            consistency: if mode == AblationMode::DmTextCl {
                self.consistency
            } else {
                0.0
            },
            ..*self
        }
    }
}

/// Soft collision penalty Σₖ max(0, margin − dₖ) with its waypoint gradient.
/// `fields[k]` is the distance field at the time of waypoint k.
pub fn collision_loss_with_grad(
    traj: &Trajectory,
    fields: &[Option<DistanceField>],
    margin: f64,
) -> (f64, [[f64; 2]; WAYPOINTS]) {
    let mut value = 0.0;
    let mut grad = [[0.0; 2]; WAYPOINTS];
    for (k, p) in traj.points().iter().enumerate() {
        let Some(field) = fields.get(k).and_then(Option::as_ref) else {
            continue;
        };
        if let Some((d, g)) = field.sample(p[0], p[1]) {
            if margin - d > 0.0 {
                value += margin - d;
                grad[k] = [-g[0], -g[1]];
            }
        }
    }
    (value, grad)
}

pub fn collision_loss(traj: &Trajectory, scene: &Scene) -> f64 {
    collision_loss_with_grad(traj, &scene.waypoint_distance_fields(), COLLISION_MARGIN).0
}

/// Tape operation for the collision penalty on a 6×2 waypoint matrix.
#[derive(Debug, Clone)]
pub struct CollisionOp {
    pub fields: Rc<Vec<Option<DistanceField>>>,
    pub margin: f64,
}

impl CustomOp for CollisionOp {
    fn name(&self) -> &'static str {
        "collision_loss"
    }

    fn forward(&self, inputs: &[&Matrix]) -> Matrix {
        let traj = Trajectory::from_matrix(inputs[0]).expect("6x2 waypoints");
        Matrix::scalar(collision_loss_with_grad(&traj, &self.fields, self.margin).0)
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad_output: &Matrix) -> Vec<Matrix> {
        let traj = Trajectory::from_matrix(inputs[0]).expect("6x2 waypoints");
        let (_, g) = collision_loss_with_grad(&traj, &self.fields, self.margin);
        let s = grad_output.data()[0];
        let data = g.iter().flat_map(|p| [p[0] * s, p[1] * s]).collect();
        vec![Matrix::from_vec(WAYPOINTS, 2, data).expect("finite gradient")]
    }
}

/// Mean squared waypoint error.
pub fn imitation_loss(pred: &Trajectory, expert: &Trajectory) -> f64 {
    pred.points()
        .iter()
        .zip(expert.points())
        .map(|(p, e)| (p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2))
        .sum::<f64>()
        / WAYPOINTS as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub imitation: f64,
    pub collision: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Unweighted components and the weighted total, computed directly.
pub fn total_loss(
    pred: &Trajectory,
    scene: &Scene,
    category: DecisionCategory,
    weights: &LossWeights,
    thresholds: &RuleThresholds,
) -> LossBreakdown {
    let imitation = imitation_loss(pred, &scene.expert);
    let collision = collision_loss(pred, scene);
    let consistency = consistency_penalty(pred, category, &scene.ego, thresholds);
    LossBreakdown {
        imitation,
        collision,
        consistency,
        total: weights.imitation * imitation + weights.collision * collision + weights.consistency * consistency,
    }
}

/// What the loss needs to know about one scene.
#[derive(Debug, Clone)]
pub struct LossTarget {
    pub expert: Trajectory,
    pub ego: EgoStatus,
    pub category: DecisionCategory,
    pub fields: Rc<Vec<Option<DistanceField>>>,
}

impl LossTarget {
    pub fn from_scene(scene: &Scene, category: DecisionCategory) -> Self {
        LossTarget {
            expert: scene.expert,
            ego: scene.ego,
            category,
            fields: Rc::new(scene.waypoint_distance_fields()),
        }
    }
}

/// Records the weighted loss on the tape. Returns the total and the three
/// unweighted component variables.
pub fn loss_on_tape(
    tape: &Tape,
    pred: Var,
    target: &LossTarget,
    weights: &LossWeights,
    thresholds: &RuleThresholds,
) -> Result<(Var, [Var; 3]), PlannerError> {
    let expert = tape.leaf(target.expert.to_matrix());
    let diff = tape.sub(pred, expert)?;
    let sq = tape.mul(diff, diff)?;
    let imitation = tape.scale(tape.sum(sq), 1.0 / WAYPOINTS as f64);
    let collision = tape.custom(
        Rc::new(CollisionOp {
            fields: Rc::clone(&target.fields),
            margin: COLLISION_MARGIN,
        }),
        &[pred],
    );
    let consistency = tape.custom(
        Rc::new(ConsistencyOp {
            decision: target.category,
            ego: target.ego,
            thresholds: *thresholds,
        }),
        &[pred],
    );
    let total = tape.add(
        tape.scale(imitation, weights.imitation),
        tape.scale(collision, weights.collision),
    )?;
    let total = tape.add(total, tape.scale(consistency, weights.consistency))?;
    Ok((total, [imitation, collision, consistency]))
}
