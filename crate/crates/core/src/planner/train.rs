use std::fmt::Write as _;

use dme_nn::{seeded_rng, Matrix, Sgd, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{loss_on_tape, LossBreakdown, LossTarget, LossWeights};
use super::params::{PlannerDims, PlannerParams, PlannerVars};
use super::plan::{check_features, forward, CueIds, TextCues};
use super::{AblationMode, PlannerError};
use crate::decision::{DecisionCategory, RuleThresholds};
use crate::encoding::Vocabulary;
use crate::sim::{rasterize_bev, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: AblationMode,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub thresholds: RuleThresholds,
    #[serde(default)]
    pub dims: PlannerDims,
    /// Rescales the averaged batch gradient to at most this global norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

/// Per-epoch learning rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` at the first epoch towards zero after the last.
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Rate for 1-based `epoch` of `epochs`.
    pub fn rate(self, lr: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let progress = (epoch.saturating_sub(1)) as f64 / epochs.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 7,
            ablation: AblationMode::DmText,
            weights: LossWeights::default(),
            thresholds: RuleThresholds::default(),
            dims: PlannerDims::default(),
            grad_clip: Some(5.0),
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PlannerError::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(PlannerError::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(PlannerError::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(PlannerError::Config(format!("grad_clip {c} must be positive")));
            }
        }
        self.weights.validate()?;
        self.dims.validate()?;
        self.thresholds.validate().map_err(PlannerError::Config)
    }
}

/// One scene prepared for training: raster, tokenized cues, loss target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Matrix,
    pub cues: CueIds,
    pub target: LossTarget,
}

impl TrainSample {
    pub fn new(
        scene: &Scene,
        cues: &TextCues,
        category: DecisionCategory,
        vocab: &Vocabulary,
        dims: &PlannerDims,
    ) -> Self {
        TrainSample {
            features: rasterize_bev(scene).features,
            cues: CueIds::new(cues, vocab, dims.max_text_len),
            target: LossTarget::from_scene(scene, category),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub imitation: f64,
    pub collision: f64,
    pub consistency: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PlannerParams,
    pub log: Vec<EpochLoss>,
}

/// Loss components and gradients (in `PlannerParams::tensors` order) for one
/// sample.
pub fn sample_gradients(
    params: &PlannerParams,
    sample: &TrainSample,
    weights: &LossWeights,
    thresholds: &RuleThresholds,
) -> Result<(LossBreakdown, Vec<Matrix>), PlannerError> {
    check_features(&sample.features, params)?;
    let tape = Tape::new();
    let vars = PlannerVars::register(&tape, params);
    let f = tape.leaf(sample.features.clone());
    let pred = forward(&tape, &vars, params, f, &sample.cues)?;
    let (total, [im, col, cons]) = loss_on_tape(&tape, pred, &sample.target, weights, thresholds)?;
    let breakdown = LossBreakdown {
        imitation: tape.scalar(im)?,
        collision: tape.scalar(col)?,
        consistency: tape.scalar(cons)?,
        total: tape.scalar(total)?,
    };
    let grads = tape.backward(total)?;
    Ok((breakdown, vars.vars().into_iter().map(|v| grads.wrt(v)).collect()))
}

/// Minibatch SGD over the samples. Deterministic given `cfg.seed`.
pub fn train(samples: &[TrainSample], vocab_size: usize, cfg: &TrainConfig) -> Result<TrainOutcome, PlannerError> {
    let params = PlannerParams::init(cfg.dims, vocab_size, cfg.seed)?;
    train_from(params, samples, cfg)
}

pub fn train_from(
    mut params: PlannerParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, PlannerError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(PlannerError::EmptyDataset);
    }
    let weights = cfg.weights.for_mode(cfg.ablation);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut rng = seeded_rng(cfg.seed ^ 0x005e_ed0f_5a3d);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        opt.lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        let mut sums = LossBreakdown::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Option<Vec<Matrix>> = None;
            for &i in batch {
                let (l, g) = sample_gradients(&params, &samples[i], &weights, &cfg.thresholds)?;
                if !l.total.is_finite() {
                    return Err(PlannerError::NonFinite(format!(
                        "loss at epoch {epoch}, batch {b} (learning rate {} may be too high)",
                        cfg.lr
                    )));
                }
                sums.imitation += l.imitation;
                sums.collision += l.collision;
                sums.consistency += l.consistency;
                sums.total += l.total;
                acc = Some(match acc {
                    None => g,
                    Some(mut a) => {
                        for (x, y) in a.iter_mut().zip(&g) {
                            x.axpy(1.0, y)?;
                        }
                        a
                    }
                });
            }
            let mut grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            let norm = grads.iter().map(Matrix::squared_norm).sum::<f64>().sqrt() * scale;
            if !norm.is_finite() {
                return Err(PlannerError::NonFinite(format!(
                    "gradient at epoch {epoch}, batch {b} (learning rate {} may be too high)",
                    cfg.lr
                )));
            }
            let clip = cfg.grad_clip.map_or(1.0, |c| if norm > c { c / norm } else { 1.0 });
            for g in &mut grads {
                *g = g.scale(scale * clip);
            }
            opt.step(params.tensors_mut(), &grads)?;
        }
        let n = samples.len() as f64;
        let entry = EpochLoss {
            epoch,
            imitation: sums.imitation / n,
            collision: sums.collision / n,
            consistency: sums.consistency / n,
            total: sums.total / n,
        };
        log::debug!(
            "epoch {epoch}: total {:.4} imitation {:.4} collision {:.4} consistency {:.4}",
            entry.total,
            entry.imitation,
            entry.collision,
            entry.consistency
        );
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

/// `epoch,imitation,collision,consistency,total` CSV.
pub fn loss_log_csv(log: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,imitation,collision,consistency,total\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch, e.imitation, e.collision, e.consistency, e.total
        );
    }
    s
}

pub fn parse_loss_log_csv(text: &str) -> Result<Vec<EpochLoss>, PlannerError> {
    let mut lines = text.lines();
    if lines.next() != Some("epoch,imitation,collision,consistency,total") {
        return Err(PlannerError::Config("loss log header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || PlannerError::Config(format!("loss log line {}: '{line}'", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochLoss {
                epoch: f[0].parse().map_err(|_| bad())?,
                imitation: num(f[1])?,
                collision: num(f[2])?,
                consistency: num(f[3])?,
                total: num(f[4])?,
            })
        })
        .collect()
}
