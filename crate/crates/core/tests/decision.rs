use std::cell::{Cell, RefCell};
use std::f64::consts::PI;

use dme_core::client::{ClientError, GenerationRequest, TextGenerationClient};
use dme_core::decision::{
    classify_trajectory, consistency_penalty, consistency_penalty_with_grad, remote_decision_maker,
    scripted_decision_maker, RemoteOptions,
};
use dme_core::sim::{generate_scene, SceneConfig};
use dme_core::{DecisionCategory, EgoStatus, RuleThresholds, Trajectory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MARGIN: f64 = 0.05;

/// Builds a trajectory whose final segment has the given speed and heading
/// and whose final waypoint sits at lateral offset `lateral`.
fn shaped(ego_speed: f64, speed: f64, heading: f64, lateral: f64) -> Trajectory {
    let step = 0.5 * speed;
    let end_x = 0.5 * ego_speed * 5.0 + step * heading.cos();
    let a = [0.5 * ego_speed * 5.0, lateral - step * heading.sin()];
    let mut pts = [[0.0; 2]; 6];
    for (k, p) in pts.iter_mut().enumerate().take(5) {
        let f = (k + 1) as f64 / 5.0;
        *p = [a[0] * f, a[1] * f];
    }
    pts[5] = [end_x, lateral];
    Trajectory(pts)
}

/// Samples discriminants strictly inside `cat`'s band (by `MARGIN`) and
/// returns the trajectory together with the ego speed.
fn sample_in_band(cat: DecisionCategory, th: &RuleThresholds, rng: &mut ChaCha8Rng) -> (Trajectory, EgoStatus) {
    use DecisionCategory::*;
    let v0: f64 = rng.gen_range(2.0..10.0);
    let turn = th.turn_rad();
    let lat = th.lateral_lane_change;
    let moving = |rng: &mut ChaCha8Rng| rng.gen_range(th.stop_speed + MARGIN..12.0);
    let straight = |rng: &mut ChaCha8Rng| rng.gen_range(-(turn - MARGIN)..(turn - MARGIN));
    let centred = |rng: &mut ChaCha8Rng| rng.gen_range(-(lat - MARGIN)..(lat - MARGIN));
    let (s, h, l) = match cat {
        Stop => (
            rng.gen_range(0.0..th.stop_speed - MARGIN),
            rng.gen_range(-PI..PI),
            rng.gen_range(-3.0..3.0),
        ),
        TurnLeft => (
            moving(rng),
            rng.gen_range(turn + MARGIN..PI / 2.0),
            rng.gen_range(-3.0..6.0),
        ),
        TurnRight => (
            moving(rng),
            -rng.gen_range(turn + MARGIN..PI / 2.0),
            rng.gen_range(-6.0..3.0),
        ),
        LaneChangeLeft => (moving(rng), straight(rng), rng.gen_range(lat + MARGIN..5.0)),
        LaneChangeRight => (moving(rng), straight(rng), -rng.gen_range(lat + MARGIN..5.0)),
        Accelerate => (
            rng.gen_range(th.accel_ratio * v0 + MARGIN..th.accel_ratio * v0 + 5.0),
            straight(rng),
            centred(rng),
        ),
        Decelerate => (
            rng.gen_range(th.stop_speed + MARGIN..th.decel_ratio * v0 - MARGIN),
            straight(rng),
            centred(rng),
        ),
        Forward => (
            rng.gen_range(th.decel_ratio * v0 + MARGIN..th.accel_ratio * v0 - MARGIN),
            straight(rng),
            centred(rng),
        ),
    };
    (shaped(v0, s, h, l), EgoStatus::new(v0))
}

#[test]
fn classifier_and_penalty_agree_on_a_margin_suite() {
    let th = RuleThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut count = 0;
    for cat in DecisionCategory::ALL {
        for _ in 0..40 {
            let (traj, ego) = sample_in_band(cat, &th, &mut rng);
            assert_eq!(classify_trajectory(&traj, &ego, &th), cat, "{traj:?}");
            assert_eq!(consistency_penalty(&traj, cat, &ego, &th), 0.0);
            for other in DecisionCategory::ALL.into_iter().filter(|o| *o != cat) {
                let p = consistency_penalty(&traj, other, &ego, &th);
                assert!(p > 0.0, "{cat} trajectory scored 0 against {other}");
            }
            count += 1;
        }
    }
    assert_eq!(count, 320);
}

#[test]
fn straight_against_turn_left_costs_the_threshold() {
    let th = RuleThresholds::default();
    let traj = shaped(5.0, 5.0, 0.0, 0.0);
    let p = consistency_penalty(&traj, DecisionCategory::TurnLeft, &EgoStatus::new(5.0), &th);
    assert!((p - 15f64.to_radians()).abs() < 1e-12);
    assert!((p - 0.2618).abs() < 1e-4);
}

#[test]
fn rotation_moves_boundaries() {
    let th = RuleThresholds::default();
    let ego = EgoStatus::new(5.0);
    let base = Trajectory(std::array::from_fn(|k| [2.5 * (k + 1) as f64, 0.0]));
    let deg = |d: f64| d.to_radians();
    let at = |angle: f64| classify_trajectory(&base.rotated(angle), &ego, &th);
    assert_eq!(at(deg(16.0)), DecisionCategory::TurnLeft);
    assert_eq!(at(deg(-16.0)), DecisionCategory::TurnRight);
    assert_ne!(at(deg(14.0)), DecisionCategory::TurnLeft);
    assert_ne!(at(deg(-14.0)), DecisionCategory::TurnRight);
}

#[test]
fn scripted_maker_follows_the_scene_tag() {
    for i in 0..64u64 {
        let s = generate_scene(i, &SceneConfig::default()).unwrap();
        let a = scripted_decision_maker(&s);
        assert_eq!(a.category, s.tag);
        assert!(!a.decision_text.is_empty());
        assert_eq!(a, scripted_decision_maker(&s));
    }
}

struct Canned {
    answers: Vec<&'static str>,
    next: Cell<usize>,
    timeouts: Cell<usize>,
    history_lens: RefCell<Vec<usize>>,
}

impl Canned {
    fn new(answers: Vec<&'static str>, timeouts: usize) -> Self {
        Canned {
            answers,
            next: Cell::new(0),
            timeouts: Cell::new(timeouts),
            history_lens: RefCell::new(Vec::new()),
        }
    }
}

impl TextGenerationClient for Canned {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        if self.timeouts.get() > 0 {
            self.timeouts.set(self.timeouts.get() - 1);
            return Err(ClientError::Timeout);
        }
        self.history_lens.borrow_mut().push(request.turns.len());
        let i = self.next.get();
        self.next.set(i + 1);
        Ok(self.answers[i % self.answers.len()].to_string())
    }
}

fn scene() -> dme_core::sim::Scene {
    generate_scene(5, &SceneConfig::default()).unwrap()
}

#[test]
fn remote_maker_parses_canned_answers() {
    let client = Canned::new(
        vec![
            "I look at the junction ahead.",
            "The road bends to the right.",
            "The road turns right here.",
            "I will turn right at the junction.",
        ],
        0,
    );
    let out = remote_decision_maker(&scene(), &client, &RemoteOptions::default(), None).unwrap();
    assert!(!out.fell_back);
    assert_eq!(out.output.category, DecisionCategory::TurnRight);
    assert_eq!(out.attempts, 4);
    // Each question carries the whole history so far.
    assert_eq!(*client.history_lens.borrow(), vec![1, 3, 5, 7]);
}

#[test]
fn remote_maker_falls_back_on_gibberish() {
    let s = scene();
    let client = Canned::new(vec!["qwerty zxcv"], 0);
    let out = remote_decision_maker(&s, &client, &RemoteOptions::default(), None).unwrap();
    assert!(out.fell_back);
    assert!(!out.warnings.is_empty());
    assert_eq!(out.output, scripted_decision_maker(&s));
}

#[test]
fn remote_maker_retries_timeouts() {
    let client = Canned::new(vec!["I will keep moving forward."], 2);
    let out = remote_decision_maker(&scene(), &client, &RemoteOptions::default(), None).unwrap();
    // Three attempts for the first question, one for each of the others.
    assert_eq!(out.attempts, 6);
    let always = Canned::new(vec!["x"], 100);
    let err = remote_decision_maker(&scene(), &always, &RemoteOptions::default(), None).unwrap_err();
    assert!(matches!(err, ClientError::Exhausted { attempts: 3, .. }));
}

proptest! {
    #[test]
    fn classifier_is_total(pts in prop::array::uniform6(prop::array::uniform2(-30.0f64..30.0)), v in 0.0f64..20.0) {
        let cat = classify_trajectory(&Trajectory(pts), &EgoStatus::new(v), &RuleThresholds::default());
        prop_assert!(DecisionCategory::ALL.contains(&cat));
    }

    #[test]
    fn zero_penalty_implies_match_off_boundaries(
        pts in prop::array::uniform6(prop::array::uniform2(-20.0f64..20.0)),
        v in 0.5f64..15.0,
        d in 0usize..8,
    ) {
        let th = RuleThresholds::default();
        let ego = EgoStatus::new(v);
        let traj = Trajectory(pts);
        let decision = DecisionCategory::ALL[d];
        let (p, _) = consistency_penalty_with_grad(&traj, decision, &ego, &th);
        prop_assert!(p >= 0.0);
        if classify_trajectory(&traj, &ego, &th) != decision {
            // Differences only vanish on a measure-zero boundary.
            prop_assert!(p > 0.0);
        }
    }
}
