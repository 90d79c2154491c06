use dme_core::decision::scripted_decision_maker;
use dme_core::encoding::Vocabulary;
use dme_core::planner::checkpoint::{from_bytes, to_bytes, MAGIC};
use dme_core::planner::{
    collision_loss, collision_loss_with_grad, forward, loss_log_csv, loss_on_tape, parse_loss_log_csv, plan,
    total_loss, train, AblationMode, CueIds, LossWeights, PlannerDims, PlannerParams, PlannerVars, TextCues,
    TrainConfig, TrainSample, COLLISION_MARGIN,
};
use dme_core::sim::{generate_scene, rasterize_bev, Agent, AgentRole, GridSpec, Lane, Scene, SceneConfig};
use dme_core::{DecisionCategory, EgoStatus, RuleThresholds, Trajectory};
use dme_nn::{grad_check_with, GradCheckOptions, Matrix};

fn small_dims() -> PlannerDims {
    PlannerDims {
        model_dim: 8,
        heads: 2,
        hidden: 16,
        ..PlannerDims::default()
    }
}

fn scenes(n: usize) -> Vec<Scene> {
    (0..n as u64)
        .map(|i| generate_scene(100 + i, &SceneConfig::default()).unwrap())
        .collect()
}

fn corpus_vocab(scenes: &[Scene]) -> Vocabulary {
    let logic: Vec<_> = scenes.iter().map(scripted_decision_maker).collect();
    Vocabulary::from_corpus(logic.iter().flat_map(|l| l.texts()))
}

fn samples(scenes: &[Scene], vocab: &Vocabulary, dims: &PlannerDims) -> Vec<TrainSample> {
    scenes
        .iter()
        .map(|s| {
            let l = scripted_decision_maker(s);
            TrainSample::new(s, &TextCues::from_logic(&l), l.category, vocab, dims)
        })
        .collect()
}

fn static_obstacle_scene(x: f64, y: f64) -> Scene {
    let agent = Agent {
        position: [x, y],
        velocity: [0.0, 0.0],
        half_extents: [0.5, 0.5],
        role: AgentRole::Parked,
    };
    Scene::new(
        0,
        DecisionCategory::Forward,
        EgoStatus::new(5.0),
        vec![agent],
        Lane::straight(3.5),
        Trajectory(std::array::from_fn(|k| [2.5 * (k + 1) as f64, 0.0])),
        GridSpec::default(),
    )
}

#[test]
fn zero_params_plan_the_origin() {
    let s = &scenes(1)[0];
    let vocab = corpus_vocab(std::slice::from_ref(s));
    let params = PlannerParams::zeros(PlannerDims::default(), vocab.len()).unwrap();
    let cues = CueIds::new(&TextCues::from_logic(&scripted_decision_maker(s)), &vocab, 64);
    assert_eq!(plan(&rasterize_bev(s), &cues, &params).unwrap(), Trajectory::zeros());
}

#[test]
fn plan_is_deterministic_and_finite() {
    let ss = scenes(4);
    let vocab = corpus_vocab(&ss);
    for seed in 0..4 {
        let params = PlannerParams::init(PlannerDims::default(), vocab.len(), seed).unwrap();
        for s in &ss {
            let grid = rasterize_bev(s);
            let cues = CueIds::new(&TextCues::empty(), &vocab, 64);
            let a = plan(&grid, &cues, &params).unwrap();
            let b = plan(&grid, &cues, &params).unwrap();
            assert_eq!(a, b);
            assert!(a.is_finite());
        }
    }
}

#[test]
fn collision_loss_examples() {
    let empty = Scene::new(
        0,
        DecisionCategory::Forward,
        EgoStatus::new(5.0),
        Vec::new(),
        Lane::straight(3.5),
        Trajectory::zeros(),
        GridSpec::default(),
    );
    assert_eq!(
        collision_loss(&Trajectory(std::array::from_fn(|k| [k as f64, 0.3])), &empty),
        0.0
    );

    let s = static_obstacle_scene(5.5, 0.5);
    let mut pts = [[100.0, 100.0]; 6];
    pts[2] = [5.5, 0.5];
    assert!((collision_loss(&Trajectory(pts), &s) - COLLISION_MARGIN).abs() < 1e-12);
}

#[test]
fn collision_gradient_matches_differences() {
    let s = static_obstacle_scene(6.0, 1.0);
    let fields = s.waypoint_distance_fields();
    let traj = Trajectory([[5.3, 0.2], [5.8, 0.1], [6.7, 0.4], [7.2, 1.8], [4.6, 1.3], [30.0, 30.0]]);
    let (_, g) = collision_loss_with_grad(&traj, &fields, COLLISION_MARGIN);
    let eps = 1e-6;
    for (k, gk) in g.iter().enumerate() {
        for (a, &ga) in gk.iter().enumerate() {
            let mut plus = traj;
            plus.0[k][a] += eps;
            let mut minus = traj;
            minus.0[k][a] -= eps;
            let numeric = (collision_loss_with_grad(&plus, &fields, COLLISION_MARGIN).0
                - collision_loss_with_grad(&minus, &fields, COLLISION_MARGIN).0)
                / (2.0 * eps);
            assert!((numeric - ga).abs() < 1e-4, "k={k} a={a}: {numeric} vs {ga}");
        }
    }
}

#[test]
fn total_loss_examples() {
    let s = scenes(8)
        .into_iter()
        .find(|s| s.tag == DecisionCategory::Forward && s.agents.is_empty())
        .unwrap_or_else(|| {
            let cfg = SceneConfig {
                agents: 0,
                tag: Some(DecisionCategory::Forward),
                ego_speed: Some(5.0),
                ..SceneConfig::default()
            };
            generate_scene(1, &cfg).unwrap()
        });
    let w = LossWeights::default();
    let th = RuleThresholds::default();
    let exact = total_loss(&s.expert, &s, DecisionCategory::Forward, &w, &th);
    assert_eq!(exact.total, 0.0);
    let shifted = total_loss(&s.expert.offset(0.3, 0.4), &s, DecisionCategory::Forward, &w, &th);
    assert_eq!(shifted.consistency, 0.0);
    assert!((shifted.total - w.imitation * 0.25).abs() < 1e-12);
}

#[test]
fn consistency_weight_only_counts_with_cl() {
    let w = LossWeights::default();
    for mode in AblationMode::ALL {
        let applied = w.for_mode(mode).consistency;
        assert_eq!(applied, if mode == AblationMode::DmTextCl { 0.2 } else { 0.0 });
    }
}

#[test]
fn batch_gradient_matches_differences() {
    let ss = scenes(3);
    let vocab = corpus_vocab(&ss);
    let dims = small_dims();
    let params = PlannerParams::init(dims, vocab.len(), 3).unwrap();
    let batch = samples(&ss, &vocab, &dims);
    let weights = LossWeights::default();
    let th = RuleThresholds::default();
    let inputs: Vec<Matrix> = params.tensors().into_iter().map(|(_, m)| m.clone()).collect();
    let report = grad_check_with(
        |tape, xs| {
            let vars = PlannerVars::from_vars(&dims, xs).map_err(|e| dme_nn::NnError::Contract(e.to_string()))?;
            let mut total = None;
            for s in &batch {
                let f = tape.leaf(s.features.clone());
                let pred =
                    forward(tape, &vars, &params, f, &s.cues).map_err(|e| dme_nn::NnError::Contract(e.to_string()))?;
                let (loss, _) = loss_on_tape(tape, pred, &s.target, &weights, &th)
                    .map_err(|e| dme_nn::NnError::Contract(e.to_string()))?;
                total = Some(match total {
                    None => loss,
                    Some(t) => tape.add(t, loss)?,
                });
            }
            Ok(total.expect("three scenes"))
        },
        &inputs,
        GradCheckOptions {
            eps: 1e-5,
            coords_per_input: Some(4),
            seed: 1,
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.01,
        batch_size: 4,
        dims: small_dims(),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let ss = scenes(4);
    let vocab = corpus_vocab(&ss);
    let cfg = quick_config(0);
    let out = train(&samples(&ss, &vocab, &cfg.dims), vocab.len(), &cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(
        out.params,
        PlannerParams::init(cfg.dims, vocab.len(), cfg.seed).unwrap()
    );
}

#[test]
fn training_is_deterministic_and_learns() {
    let ss = scenes(16);
    let vocab = corpus_vocab(&ss);
    let cfg = quick_config(60);
    let batch = samples(&ss, &vocab, &cfg.dims);
    let a = train(&batch, vocab.len(), &cfg).unwrap();
    let b = train(&batch, vocab.len(), &cfg).unwrap();
    assert_eq!(loss_log_csv(&a.log), loss_log_csv(&b.log));
    assert_eq!(to_bytes(&a.params), to_bytes(&b.params));
    let first = a.log.first().unwrap().imitation;
    let last = a.log.last().unwrap().imitation;
    assert!(last < 0.1 * first, "imitation {first} -> {last}");
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(train(&[], 10, &quick_config(1)).is_err());
}

#[test]
fn checkpoint_and_loss_log_round_trip() {
    let params = PlannerParams::init(PlannerDims::default(), 40, 5).unwrap();
    let bytes = to_bytes(&params);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(from_bytes(&bytes).unwrap(), params);
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());

    let ss = scenes(2);
    let vocab = corpus_vocab(&ss);
    let out = train(&samples(&ss, &vocab, &small_dims()), vocab.len(), &quick_config(3)).unwrap();
    let csv = loss_log_csv(&out.log);
    assert!(csv.starts_with("epoch,imitation,collision,consistency,total\n"));
    assert_eq!(parse_loss_log_csv(&csv).unwrap(), out.log);
}
