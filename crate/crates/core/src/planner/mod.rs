//! Text-conditioned trajectory planner: BEV tokens fused with decision-maker
//! cues, decoded into six waypoints, trained on imitation, collision and
//! consistency losses.

pub mod checkpoint;
pub mod loss;
pub mod params;
pub mod plan;
pub mod train;

use std::fmt;
use std::str::FromStr;

use dme_nn::NnError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::DriverLogicOutput;
use crate::encoding::EncodingError;

pub use loss::{
    collision_loss, collision_loss_with_grad, imitation_loss, loss_on_tape, total_loss, CollisionOp, LossBreakdown,
    LossTarget, LossWeights, COLLISION_MARGIN,
};
pub use params::{PlannerDims, PlannerParams, PlannerVars};
pub use plan::{forward, plan, plan_features, CueIds, TextCues};
pub use train::{
    loss_log_csv, parse_loss_log_csv, sample_gradients, train, train_from, EpochLoss, LrSchedule, TrainConfig,
    TrainOutcome, TrainSample,
};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which text cues the planner is trained and evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// No cues: every text is the EMPTY token.
    ExecutorOnly,
    /// Ground-truth annotation texts.
    GtText,
    /// Scripted decision-maker texts.
    DmText,
    /// Decision-maker texts plus the consistency loss.
    DmTextCl,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::ExecutorOnly,
        AblationMode::GtText,
        AblationMode::DmText,
        AblationMode::DmTextCl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::ExecutorOnly => "executor_only",
            AblationMode::GtText => "gt_text",
            AblationMode::DmText => "dm_text",
            AblationMode::DmTextCl => "dm_text_cl",
        }
    }

    /// Row label in the ablation report.
    pub fn label(self) -> &'static str {
        match self {
            AblationMode::ExecutorOnly => "Executor",
            AblationMode::GtText => "GT+Executor",
            AblationMode::DmText => "Decision-Maker + Executor",
            AblationMode::DmTextCl => "Decision-Maker + Executor + CL",
        }
    }

    /// Cues fed to the planner in this mode.
    pub fn cues(self, ground_truth: &DriverLogicOutput, decision_maker: &DriverLogicOutput) -> TextCues {
        match self {
            AblationMode::ExecutorOnly => TextCues::empty(),
            AblationMode::GtText => TextCues::from_logic(ground_truth),
            AblationMode::DmText | AblationMode::DmTextCl => TextCues::from_logic(decision_maker),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown ablation mode '{s}'"))
    }
}
