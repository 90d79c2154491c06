//! Scripted stand-in for the vision-language decision maker.

use serde::{Deserialize, Serialize};

use super::DecisionCategory;
use crate::sim::{AgentRole, Scene};

/// The four texts a decision maker emits for one scene, plus the category its
/// decision maps to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverLogicOutput {
    pub gaze_text: String,
    pub description_text: String,
    pub reasoning_text: String,
    pub decision_text: String,
    pub category: DecisionCategory,
}

impl DriverLogicOutput {
    /// Texts in dialogue order: gaze, description, reasoning, decision.
    pub fn texts(&self) -> [&str; 4] {
        [
            &self.gaze_text,
            &self.description_text,
            &self.reasoning_text,
            &self.decision_text,
        ]
    }
}

/// Canonical decision sentence for a category.
pub fn decision_sentence(category: DecisionCategory) -> &'static str {
    match category {
        DecisionCategory::Forward => "I will keep moving forward at my current speed.",
        DecisionCategory::Accelerate => "I will speed up to match the flow of traffic.",
        DecisionCategory::Decelerate => "I will slow down to keep a safe distance.",
        DecisionCategory::Stop => "I will come to a complete stop.",
        DecisionCategory::TurnLeft => "I will turn left along the road.",
        DecisionCategory::TurnRight => "I will turn right along the road.",
        DecisionCategory::LaneChangeLeft => "I will change lanes to the left.",
        DecisionCategory::LaneChangeRight => "I will change lanes to the right.",
    }
}

/// The agent the driver attends to, named by its sector around the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeTarget {
    pub agent_index: usize,
    /// e.g. "vehicle ahead in my lane".
    pub phrase: String,
    pub distance: f64,
}

fn sector_phrase(x: f64, y: f64, in_lane: bool, pedestrian: bool) -> String {
    let what = if pedestrian { "pedestrian" } else { "vehicle" };
    let longitudinal = if x > 2.0 {
        "ahead"
    } else if x < -2.0 {
        "behind"
    } else {
        "beside me"
    };
    let lateral = if in_lane {
        "in my lane"
    } else if y > 0.0 {
        "on the left"
    } else {
        "on the right"
    };
    if longitudinal == "beside me" && in_lane {
        format!("{what} next to me")
    } else {
        format!("{what} {longitudinal} {lateral}")
    }
}

/// Picks the nearest agent ahead in the ego lane, falling back to the
/// nearest agent anywhere.
pub fn gaze_target(scene: &Scene) -> Option<GazeTarget> {
    let half_width = 0.5 * scene.lane.width;
    let described: Vec<(usize, f64, bool)> = scene
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let [x, y] = a.position;
            let in_lane = scene.lane.project(x, y).0 <= half_width;
            (i, x.hypot(y), in_lane)
        })
        .collect();
    let nearest = |pred: &dyn Fn(&(usize, f64, bool)) -> bool| {
        described
            .iter()
            .filter(|d| pred(d))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .copied()
    };
    let pick =
        nearest(&|&(i, _, in_lane)| in_lane && scene.agents[i].position[0] > 0.0).or_else(|| nearest(&|_| true))?;
    let (i, distance, in_lane) = pick;
    let a = &scene.agents[i];
    let pedestrian = a.half_extents[0] < 1.0 && a.half_extents[1] < 1.0;
    Some(GazeTarget {
        agent_index: i,
        phrase: sector_phrase(a.position[0], a.position[1], in_lane, pedestrian),
        distance,
    })
}

pub(crate) fn road_phrase(scene: &Scene) -> &'static str {
    let turn = scene.lane.heading_change(20.0);
    if turn > 0.2 {
        "on a road that curves to the left"
    } else if turn < -0.2 {
        "on a road that curves to the right"
    } else {
        "on a straight road"
    }
}

pub(crate) fn count_phrase(n: usize) -> String {
    match n {
        0 => "no other road users".to_string(),
        1 => "one other road user".to_string(),
        n => format!("{n} other road users"),
    }
}

fn reasoning(scene: &Scene, target: Option<&GazeTarget>) -> String {
    use DecisionCategory::*;
    let key = target.map(|t| (t.phrase.as_str(), scene.agents[t.agent_index].role));
    match (scene.tag, key) {
        (Forward, Some((p, AgentRole::Lead))) => format!("The {p} is moving at my pace, so my speed is fine."),
        (Forward, _) => "The way ahead is clear and my speed suits the road.".to_string(),
        (Accelerate, Some((p, AgentRole::Follower))) => {
            format!("The {p} is close behind and the road ahead is open.")
        }
        (Accelerate, _) => "I am slower than the flow and the road ahead is open.".to_string(),
        (Decelerate, Some((p, AgentRole::Lead))) => format!("The {p} is slower than me, so the gap is closing."),
        (Decelerate, _) => "The road ahead calls for a lower speed.".to_string(),
        (Stop, Some((p, _))) => format!("The {p} is blocking my path, so I cannot continue."),
        (Stop, None) => "I have reached the point where I need to wait.".to_string(),
        (TurnLeft, _) => "My route bends to the left ahead.".to_string(),
        (TurnRight, _) => "My route bends to the right ahead.".to_string(),
        (LaneChangeLeft, Some((p, AgentRole::Lead))) => {
            format!("The {p} is much slower, and the lane on my left lets me pass.")
        }
        (LaneChangeLeft, _) => "The lane on my left suits my route better.".to_string(),
        (LaneChangeRight, Some((p, AgentRole::Lead))) => {
            format!("The {p} is much slower, and the lane on my right lets me pass.")
        }
        (LaneChangeRight, _) => "The lane on my right suits my route better.".to_string(),
    }
}

/// One-paragraph textual summary of a scene, the input a remote decision
/// maker sees.
pub fn scene_summary(scene: &Scene) -> String {
    let mut s = format!(
        "I am driving at {:.1} m/s {} with {} around me.",
        scene.ego.speed,
        road_phrase(scene),
        count_phrase(scene.agents.len())
    );
    let half_width = 0.5 * scene.lane.width;
    for a in &scene.agents {
        let [x, y] = a.position;
        let in_lane = scene.lane.project(x, y).0 <= half_width;
        let pedestrian = a.half_extents[0] < 1.0 && a.half_extents[1] < 1.0;
        s.push_str(&format!(
            " There is a {} at {:.1} m moving at {:.1} m/s.",
            sector_phrase(x, y, in_lane, pedestrian),
            x.hypot(y),
            a.speed()
        ));
    }
    s
}

/// Deterministic template filling from the scene. The category always equals
/// the scene's scenario tag.
pub fn scripted_decision_maker(scene: &Scene) -> DriverLogicOutput {
    let target = gaze_target(scene);
    let gaze_text = match &target {
        Some(t) => format!("I am looking at the {}, about {:.0} m away.", t.phrase, t.distance),
        None => "I am looking at the open road ahead.".to_string(),
    };
    let description_text = format!(
        "I am driving {} with {} around me.",
        road_phrase(scene),
        count_phrase(scene.agents.len())
    );
    DriverLogicOutput {
        gaze_text,
        description_text,
        reasoning_text: reasoning(scene, target.as_ref()),
        decision_text: decision_sentence(scene.tag).to_string(),
        category: scene.tag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, Agent, Lane, SceneConfig};
    use crate::trajectory::{EgoStatus, Trajectory};

    #[test]
    fn empty_forward_scene() {
        let cfg = SceneConfig {
            agents: 0,
            tag: Some(DecisionCategory::Forward),
            ego_speed: Some(5.0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(3, &cfg).unwrap();
        let out = scripted_decision_maker(&scene);
        assert_eq!(out.decision_text, "I will keep moving forward at my current speed.");
        assert_eq!(out.category, DecisionCategory::Forward);
        assert_eq!(out.gaze_text, "I am looking at the open road ahead.");
        assert_eq!(out, scripted_decision_maker(&scene));
    }

    #[test]
    fn closing_lead_is_named() {
        let lead = Agent {
            position: [6.0, 0.0],
            velocity: [2.0, 0.0],
            half_extents: [2.2, 0.9],
            role: AgentRole::Lead,
        };
        let scene = Scene::new(
            0,
            DecisionCategory::Decelerate,
            EgoStatus::new(6.0),
            vec![lead],
            Lane::straight(3.5),
            Trajectory::zeros(),
            Default::default(),
        );
        let out = scripted_decision_maker(&scene);
        assert_eq!(out.category, DecisionCategory::Decelerate);
        assert!(out.gaze_text.contains("vehicle ahead in my lane"), "{}", out.gaze_text);
        assert!(out.reasoning_text.contains("slower"));
    }
}
