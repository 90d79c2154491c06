//! Synthetic desk dataset: scenes, ground-truth and decision-maker logic,
//! dialogue records, the shared vocabulary and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{AuditLog, TextGenerationClient};
use crate::decision::maker::{count_phrase, road_phrase};
use crate::decision::{
    category_from_text, gaze_target, remote_decision_maker, scripted_decision_maker, DecisionCategory,
    DriverLogicOutput, RemoteOptions,
};
use crate::encoding::{EncodingError, Vocabulary};
use crate::hbd::{
    assemble_dialogue, augment, gaze_to_bbox, to_first_person_checked, BBox, DialogueRecord, DialogueSource, GazeTrace,
    HbdError, PartKind, QaPart, WINDOW_FRAMES,
};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::sim::{derive_seed, generate_scene, Scene, SceneConfig, SimError};
use crate::trajectory::STEP_SECONDS;

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const LOGIC_FILE: &str = "logic.jsonl";
pub const DIALOGUES_FILE: &str = "dialogues.hbd.jsonl";
pub const AUGMENTED_FILE: &str = "dialogues.aug.hbd.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Camera image the synthetic gaze traces live in.
pub const IMAGE_SIZE: [f64; 2] = [1600.0, 900.0];
const HALF_FOV: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Hbd(#[from] HbdError),
    #[error(transparent)]
    Records(#[from] JsonlError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Total scene count; the last `eval_scenes` are held out.
    pub scenes: usize,
    pub eval_scenes: usize,
    pub scene: SceneConfig,
    /// Also write offline-paraphrased dialogues.
    pub augment: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 7,
            scenes: 320,
            eval_scenes: 64,
            scene: SceneConfig::default(),
            augment: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.scenes == 0 {
            return Err(DatasetError::Config("scene count must be at least 1".into()));
        }
        if self.eval_scenes > self.scenes {
            return Err(DatasetError::Config(format!(
                "{} eval scenes exceed the {} total",
                self.eval_scenes, self.scenes
            )));
        }
        if self.scene.tag.is_some() {
            return Err(DatasetError::Config(
                "scene tags are assigned per scene, leave tag unset".into(),
            ));
        }
        Ok(self.scene.validate()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    pub scene: Scene,
}

/// Per-scene logic: the annotated reference and the decision maker's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicRecord {
    pub scene_id: String,
    pub gt: DriverLogicOutput,
    pub dm: DriverLogicOutput,
    pub gaze_box: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub scenes: usize,
    pub train: usize,
    pub eval: usize,
    pub categories: BTreeMap<String, usize>,
    pub needs_review: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SceneRecord>,
    /// Same order as `scenes`.
    pub logic: Vec<LogicRecord>,
    pub dialogues: Vec<DialogueRecord>,
    pub augmented: Vec<DialogueRecord>,
    pub vocab: Vocabulary,
    pub manifest: Manifest,
}

pub fn scene_id(index: usize) -> String {
    format!("scene-{index:05}")
}

/// Third-person annotation of a scene, before first-person conversion.
fn annotation(scene: &Scene) -> [String; 4] {
    use DecisionCategory::*;
    let target = gaze_target(scene);
    let thing = target.as_ref().map(|t| {
        t.phrase
            .replace("my ", "the driver's ")
            .replace("next to me", "beside the driver's car")
    });
    let gaze = match &thing {
        Some(p) => format!("The driver watches the {p}."),
        None => "The driver watches the empty road ahead.".to_string(),
    };
    let description = format!(
        "The driver is travelling {} with {} nearby.",
        road_phrase(scene),
        count_phrase(scene.agents.len())
    );
    let reasoning = match scene.tag {
        Forward => "Nothing ahead requires a change, so the driver holds speed.",
        Accelerate => "The road ahead is open and the driver is below the traffic speed.",
        Decelerate => "The gap to the traffic ahead is shrinking.",
        Stop => "The path ahead is blocked, so the driver cannot go on.",
        TurnLeft => "The driver's route bends to the left.",
        TurnRight => "The driver's route bends to the right.",
        LaneChangeLeft => "The driver sees a better path in the left lane.",
        LaneChangeRight => "The driver sees a better path in the right lane.",
    };
    let decision = match scene.tag {
        Forward => "The driver keeps going straight.",
        Accelerate => "The driver speeds up.",
        Decelerate => "The driver slows down.",
        Stop => "The driver stops the car.",
        TurnLeft => "The driver makes a left turn.",
        TurnRight => "The driver makes a right turn.",
        LaneChangeLeft => "The driver changes lanes to the left.",
        LaneChangeRight => "The driver changes lanes to the right.",
    };
    [gaze, description, reasoning.to_string(), decision.to_string()]
}

/// Ground-truth logic: the scene's annotation rewritten in the first person.
/// The flag reports constructions the rewrite could not settle.
pub fn ground_truth_logic(scene: &Scene) -> (DriverLogicOutput, bool) {
    let mut review = false;
    let mut texts = annotation(scene).map(|t| {
        let (s, r) = to_first_person_checked(&t);
        review |= r;
        s
    });
    let take = |i: usize, texts: &mut [String; 4]| std::mem::take(&mut texts[i]);
    let out = DriverLogicOutput {
        gaze_text: take(0, &mut texts),
        description_text: take(1, &mut texts),
        reasoning_text: take(2, &mut texts),
        decision_text: take(3, &mut texts),
        category: scene.tag,
    };
    (out, review)
}

/// Synthetic gaze window: the projection of the attended agent (or the road
/// ahead) into the camera image, with fixation jitter.
pub fn synthetic_gaze(scene: &Scene, seed: u64) -> GazeTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (target, spread) = match gaze_target(scene) {
        Some(t) => {
            let [x, y] = scene.agents[t.agent_index].position;
            let bearing = y.atan2(x).clamp(-HALF_FOV, HALF_FOV);
            let u = 0.5 * IMAGE_SIZE[0] * (1.0 - bearing / HALF_FOV);
            let v = 0.5 * IMAGE_SIZE[1] + 600.0 / t.distance.max(2.0);
            ([u, v], 40.0)
        }
        None => ([0.5 * IMAGE_SIZE[0], 0.5 * IMAGE_SIZE[1]], 80.0),
    };
    let points = (0..WINDOW_FRAMES)
        .map(|_| {
            [
                (target[0] + rng.gen_range(-spread..spread)).clamp(0.0, IMAGE_SIZE[0] - 1.0),
                (target[1] + rng.gen_range(-0.5 * spread..0.5 * spread)).clamp(0.0, IMAGE_SIZE[1] - 1.0),
            ]
        })
        .collect();
    GazeTrace::new(points).expect("clamped points form a valid window")
}

/// Control answer summarizing the expert's final speed and heading change.
fn control_answer(scene: &Scene) -> String {
    let p = scene.expert.points();
    let d = [p[5][0] - p[4][0], p[5][1] - p[4][1]];
    let speed = d[0].hypot(d[1]) / STEP_SECONDS;
    let heading = if speed > 1e-6 {
        d[1].atan2(d[0]).to_degrees()
    } else {
        0.0
    };
    let heading = if heading.abs() < 0.5 { 0.0 } else { heading };
    format!("I end at {speed:.1} m/s with a heading change of {heading:.0} degrees.")
}

const QUESTIONS: [&str; 5] = [
    "Where are you looking?",
    "What do you see around you?",
    "Why are you driving this way?",
    "What will you do next?",
    "What are your control signals?",
];

fn dialogue_for(id: &str, gt: &DriverLogicOutput, bbox: &BBox, scene: &Scene) -> Result<DialogueRecord, HbdError> {
    let answers = [
        format!("{} My gaze covers {}.", gt.gaze_text, bbox.render()),
        gt.description_text.clone(),
        gt.reasoning_text.clone(),
        gt.decision_text.clone(),
        control_answer(scene),
    ];
    let kinds = [
        PartKind::Gaze,
        PartKind::Description,
        PartKind::Reasoning,
        PartKind::Decision,
        PartKind::Control,
    ];
    let parts: Vec<QaPart> = kinds
        .iter()
        .zip(QUESTIONS)
        .zip(answers)
        .map(|((&kind, q), answer)| QaPart {
            kind,
            question: q.to_string(),
            answer,
        })
        .collect();
    Ok(assemble_dialogue(id, &parts, DialogueSource::Synthetic)?.record)
}

/// Optional remote decision maker used instead of the scripted one.
pub struct RemoteMaker<'a> {
    pub client: &'a dyn TextGenerationClient,
    pub options: RemoteOptions,
    pub audit: Option<&'a AuditLog>,
}

/// Generates the dataset. Scene `i` realizes category `i mod 8` so every
/// split stays balanced.
pub fn generate_dataset(cfg: &DatasetConfig, remote: Option<&RemoteMaker<'_>>) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let train = cfg.scenes - cfg.eval_scenes;
    let mut scenes = Vec::with_capacity(cfg.scenes);
    let mut logic = Vec::with_capacity(cfg.scenes);
    let mut dialogues = Vec::with_capacity(cfg.scenes);
    let mut augmented = Vec::new();
    let mut categories: BTreeMap<String, usize> = DecisionCategory::ALL.iter().map(|c| (c.to_string(), 0)).collect();
    let mut needs_review = 0;
    for i in 0..cfg.scenes {
        let tag = DecisionCategory::ALL[i % DecisionCategory::ALL.len()];
        let scene_cfg = SceneConfig {
            tag: Some(tag),
            ..cfg.scene
        };
        let scene = generate_scene(derive_seed(cfg.seed, 0, i as u64), &scene_cfg)?;
        let id = scene_id(i);
        let (gt, review) = ground_truth_logic(&scene);
        let dm = match remote {
            Some(r) => match remote_decision_maker(&scene, r.client, &r.options, r.audit) {
                Ok(d) => d.output,
                Err(e) => {
                    log::warn!("{id}: remote decision maker failed ({e}), using scripted output");
                    scripted_decision_maker(&scene)
                }
            },
            None => scripted_decision_maker(&scene),
        };
        let gaze_box = gaze_to_bbox(&synthetic_gaze(&scene, derive_seed(cfg.seed, 1, i as u64)).points)?;
        let dialogue = dialogue_for(&id, &gt, &gaze_box, &scene)?;
        needs_review += usize::from(review || dialogue.needs_review);
        if cfg.augment {
            augmented.push(augment(&dialogue, None, 1, None).record);
        }
        *categories.entry(tag.to_string()).or_default() += 1;
        scenes.push(SceneRecord {
            id: id.clone(),
            split: if i < train { Split::Train } else { Split::Eval },
            scene,
        });
        logic.push(LogicRecord {
            scene_id: id,
            gt,
            dm,
            gaze_box,
        });
        dialogues.push(dialogue);
    }
    let vocab = Vocabulary::from_corpus(logic.iter().flat_map(|l| l.gt.texts().into_iter().chain(l.dm.texts())));
    Ok(Dataset {
        scenes,
        logic,
        dialogues,
        augmented,
        vocab,
        manifest: Manifest {
            seed: cfg.seed,
            scenes: cfg.scenes,
            train,
            eval: cfg.eval_scenes,
            categories,
            needs_review,
        },
    })
}

pub fn validate_logic(l: &LogicRecord) -> Result<(), String> {
    if category_from_text(&l.gt.decision_text) != Some(l.gt.category) {
        return Err(format!(
            "{}: reference decision does not map to its category",
            l.scene_id
        ));
    }
    if !(l.gaze_box.x_min <= l.gaze_box.x_max && l.gaze_box.y_min <= l.gaze_box.y_max) {
        return Err(format!("{}: inverted gaze box", l.scene_id));
    }
    Ok(())
}

impl Dataset {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_jsonl(dir.join(SCENES_FILE), &self.scenes)?;
        write_jsonl(dir.join(LOGIC_FILE), &self.logic)?;
        write_jsonl(dir.join(DIALOGUES_FILE), &self.dialogues)?;
        if !self.augmented.is_empty() {
            write_jsonl(dir.join(AUGMENTED_FILE), &self.augmented)?;
        }
        self.vocab.save(dir.join(VOCAB_FILE))?;
        let manifest = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&manifest, text + "\n").map_err(|e| io_err(&manifest, e))
    }

    /// Loads a dataset directory strictly: any malformed record is an error.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let scenes = read_jsonl(path(SCENES_FILE), true, |r: &SceneRecord| {
            r.scene.validate().map_err(|e| e.to_string())
        })?
        .records;
        let logic = read_jsonl(path(LOGIC_FILE), true, validate_logic)?.records;
        let dialogues = read_jsonl(path(DIALOGUES_FILE), true, DialogueRecord::validate)?.records;
        let augmented = if path(AUGMENTED_FILE).exists() {
            read_jsonl(path(AUGMENTED_FILE), true, DialogueRecord::validate)?.records
        } else {
            Vec::new()
        };
        let vocab = Vocabulary::load(path(VOCAB_FILE))?;
        let manifest_path = path(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&manifest_path, e))?;
        if scenes.len() != logic.len() || scenes.iter().zip(&logic).any(|(s, l)| s.id != l.scene_id) {
            return Err(DatasetError::Inconsistent(
                "scene and logic records do not line up".into(),
            ));
        }
        if manifest.scenes != scenes.len() {
            return Err(DatasetError::Inconsistent(format!(
                "manifest lists {} scenes, found {}",
                manifest.scenes,
                scenes.len()
            )));
        }
        Ok(Dataset {
            scenes,
            logic,
            dialogues,
            augmented,
            vocab,
            manifest,
        })
    }

    /// Indices of the scenes in `split`.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.scenes.len())
            .filter(|&i| self.scenes[i].split == split)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hbd::to_first_person;

    fn small() -> DatasetConfig {
        DatasetConfig {
            seed: 1,
            scenes: 16,
            eval_scenes: 4,
            augment: true,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn ground_truth_is_first_person_and_keyword_consistent() {
        let ds = generate_dataset(&small(), None).unwrap();
        for l in &ds.logic {
            for t in l.gt.texts() {
                assert_eq!(to_first_person(t), t);
                assert!(!t.to_lowercase().contains("driver"), "{t}");
            }
            assert_eq!(category_from_text(&l.gt.decision_text), Some(l.gt.category));
            assert_eq!(l.gt.category, l.dm.category);
        }
        assert_eq!(ds.manifest.categories.values().sum::<usize>(), 16);
        for (l, s) in ds.logic.iter().zip(&ds.scenes) {
            let (_, review) = ground_truth_logic(&s.scene);
            assert!(!review, "{:?}", l.gt);
        }
        assert_eq!(ds.manifest.needs_review, 0);
        assert_eq!(ds.split(Split::Eval).len(), 4);
        assert!(ds.dialogues.iter().all(|d| d.turns.len() == 5));
    }

    #[test]
    fn write_load_round_trip() {
        let ds = generate_dataset(&small(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn gaze_box_contains_trace() {
        let ds = generate_dataset(&small(), None).unwrap();
        for (i, s) in ds.scenes.iter().enumerate() {
            let trace = synthetic_gaze(&s.scene, derive_seed(1, 1, i as u64));
            assert!(trace.points.iter().all(|p| ds.logic[i].gaze_box.contains(*p)));
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        let cfg = DatasetConfig {
            scenes: 0,
            eval_scenes: 0,
            ..DatasetConfig::default()
        };
        assert!(matches!(generate_dataset(&cfg, None), Err(DatasetError::Config(_))));
    }
}
