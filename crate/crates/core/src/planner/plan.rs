use dme_nn::{Matrix, Tape, Var};
use serde::{Deserialize, Serialize};

use super::params::{PlannerParams, PlannerVars};
use super::PlannerError;
use crate::decision::DriverLogicOutput;
use crate::encoding::{encode_text_var, logical_fuse_var, Vocabulary};
use crate::sim::BevGrid;
use crate::trajectory::{Trajectory, WAYPOINTS};

/// The text cues the planner reads. Empty strings encode as the EMPTY token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCues {
    pub gaze: String,
    pub description: String,
    pub decision: String,
}

impl TextCues {
    pub fn empty() -> Self {
        TextCues::default()
    }

    pub fn from_logic(logic: &DriverLogicOutput) -> Self {
        TextCues {
            gaze: logic.gaze_text.clone(),
            description: logic.description_text.clone(),
            decision: logic.decision_text.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.gaze.is_empty() && self.description.is_empty() && self.decision.is_empty()
    }
}

/// Token ids of the three cues, each truncated to the positional table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueIds {
    pub gaze: Vec<usize>,
    pub description: Vec<usize>,
    pub decision: Vec<usize>,
}

impl CueIds {
    pub fn new(cues: &TextCues, vocab: &Vocabulary, max_len: usize) -> Self {
        let ids = |text: &str| {
            let mut ids = vocab.tokenize(text);
            if ids.len() > max_len {
                log::debug!("truncating {}-token cue to {max_len}", ids.len());
                ids.truncate(max_len);
            }
            ids
        };
        CueIds {
            gaze: ids(&cues.gaze),
            description: ids(&cues.description),
            decision: ids(&cues.decision),
        }
    }
}

/// Records the planner forward pass on `tape`; returns the 6×2 waypoints.
///
/// BEV features are projected to tokens, fused with the gaze + description
/// cue, then with the decision cue, attention-pooled by a learned query and
/// decoded into per-step displacements that are summed into positions.
pub fn forward(
    tape: &Tape,
    vars: &PlannerVars,
    params: &PlannerParams,
    features: Var,
    cues: &CueIds,
) -> Result<Var, PlannerError> {
    let d = params.dims.model_dim;
    let positional = &params.encoder.positional;
    let tokens = tape.matmul(features, vars.proj_weight)?;
    let tokens = tape.add_row(tokens, vars.proj_bias)?;

    let gaze = encode_text_var(tape, vars.embedding, positional, &cues.gaze)?;
    let desc = encode_text_var(tape, vars.embedding, positional, &cues.description)?;
    let t_occ = tape.concat_rows(&[gaze, desc])?;
    let t_planner = encode_text_var(tape, vars.embedding, positional, &cues.decision)?;

    let fused = logical_fuse_var(tape, tokens, t_occ, &vars.fuse_occ)?;
    let fused = logical_fuse_var(tape, fused, t_planner, &vars.fuse_planner)?;

    let fused_t = tape.transpose(fused);
    let scores = tape.matmul(vars.pool_query, fused_t)?;
    let weights = tape.softmax_rows(tape.scale(scores, 1.0 / (d as f64).sqrt()));
    let pooled = tape.matmul(weights, fused)?;

    let hidden = tape.add_row(tape.matmul(pooled, vars.ff1_weight)?, vars.ff1_bias)?;
    let hidden = tape.relu(hidden);
    let out = tape.add_row(tape.matmul(hidden, vars.ff2_weight)?, vars.ff2_bias)?;
    let steps = tape.reshape(out, WAYPOINTS, 2)?;
    Ok(tape.cumsum_rows(steps))
}

/// Plans a trajectory for one rasterized scene. Pure in its arguments.
pub fn plan(grid: &BevGrid, cues: &CueIds, params: &PlannerParams) -> Result<Trajectory, PlannerError> {
    plan_features(&grid.features, cues, params)
}

pub fn plan_features(features: &Matrix, cues: &CueIds, params: &PlannerParams) -> Result<Trajectory, PlannerError> {
    check_features(features, params)?;
    let tape = Tape::new();
    let vars = PlannerVars::register(&tape, params);
    let f = tape.leaf(features.clone());
    let out = forward(&tape, &vars, params, f, cues)?;
    let m = tape.value(out).clone();
    if !m.is_finite() {
        return Err(PlannerError::NonFinite("planned waypoints".into()));
    }
    Ok(Trajectory::from_matrix(&m).expect("forward yields 6x2"))
}

pub(crate) fn check_features(features: &Matrix, params: &PlannerParams) -> Result<(), PlannerError> {
    if features.cols() != params.dims.channels {
        return Err(PlannerError::Config(format!(
            "grid has {} channels, planner expects {}",
            features.cols(),
            params.dims.channels
        )));
    }
    Ok(())
}
