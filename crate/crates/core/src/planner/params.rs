use dme_nn::{seeded_rng, uniform_matrix, AttentionParams, AttentionVars, Matrix, Tape, Var};
use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::encoding::{sinusoidal_positions, EncoderParams};
use crate::sim::FEATURE_CHANNELS;
use crate::trajectory::WAYPOINTS;

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerDims {
    pub channels: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub max_text_len: usize,
}

impl Default for PlannerDims {
    fn default() -> Self {
        PlannerDims {
            channels: FEATURE_CHANNELS,
            model_dim: 32,
            heads: 4,
            hidden: 64,
            max_text_len: 64,
        }
    }
}

impl PlannerDims {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.channels == 0 || self.model_dim == 0 || self.hidden == 0 || self.max_text_len == 0 {
            return Err(PlannerError::Config("planner dims must be positive".into()));
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(PlannerError::Config(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// All planner weights. Every tensor except the positional table is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    pub dims: PlannerDims,
    /// BEV channel projection, C × d and 1 × d.
    pub proj_weight: Matrix,
    pub proj_bias: Matrix,
    pub encoder: EncoderParams,
    /// Fusion of gaze + description cues.
    pub fuse_occ: AttentionParams,
    /// Fusion of the decision cue.
    pub fuse_planner: AttentionParams,
    /// Attention-pooling query, 1 × d.
    pub pool_query: Matrix,
    pub ff1_weight: Matrix,
    pub ff1_bias: Matrix,
    pub ff2_weight: Matrix,
    pub ff2_bias: Matrix,
}

const OUT: usize = WAYPOINTS * 2;

impl PlannerParams {
    /// Seeded uniform(±1/√fan_in) init; biases start at zero.
    pub fn init(dims: PlannerDims, vocab_size: usize, seed: u64) -> Result<Self, PlannerError> {
        dims.validate()?;
        let mut rng = seeded_rng(seed);
        let d = dims.model_dim;
        let proj_weight = uniform_matrix(dims.channels, d, dims.channels, &mut rng);
        let encoder = EncoderParams::random(vocab_size, d, dims.max_text_len, &mut rng);
        let fuse_occ = AttentionParams::random(d, dims.heads, &mut rng)?;
        let fuse_planner = AttentionParams::random(d, dims.heads, &mut rng)?;
        let pool_query = uniform_matrix(1, d, d, &mut rng);
        let ff1_weight = uniform_matrix(d, dims.hidden, d, &mut rng);
        let ff2_weight = uniform_matrix(dims.hidden, OUT, dims.hidden, &mut rng);
        Ok(PlannerParams {
            dims,
            proj_weight,
            proj_bias: Matrix::zeros(1, d),
            encoder,
            fuse_occ,
            fuse_planner,
            pool_query,
            ff1_weight,
            ff1_bias: Matrix::zeros(1, dims.hidden),
            ff2_weight,
            ff2_bias: Matrix::zeros(1, OUT),
        })
    }

    pub fn zeros(dims: PlannerDims, vocab_size: usize) -> Result<Self, PlannerError> {
        dims.validate()?;
        let d = dims.model_dim;
        Ok(PlannerParams {
            dims,
            proj_weight: Matrix::zeros(dims.channels, d),
            proj_bias: Matrix::zeros(1, d),
            encoder: EncoderParams::zeros(vocab_size, d, dims.max_text_len),
            fuse_occ: AttentionParams::zeros(d, dims.heads)?,
            fuse_planner: AttentionParams::zeros(d, dims.heads)?,
            pool_query: Matrix::zeros(1, d),
            ff1_weight: Matrix::zeros(d, dims.hidden),
            ff1_bias: Matrix::zeros(1, dims.hidden),
            ff2_weight: Matrix::zeros(dims.hidden, OUT),
            ff2_bias: Matrix::zeros(1, OUT),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size()
    }

    /// Trainable tensors by name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("proj.weight".into(), &self.proj_weight),
            ("proj.bias".into(), &self.proj_bias),
            ("encoder.embedding".into(), &self.encoder.embedding),
        ];
        for (prefix, p) in [("fuse_occ", &self.fuse_occ), ("fuse_planner", &self.fuse_planner)] {
            out.extend(p.tensors().into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)));
        }
        out.extend([
            ("pool.query".into(), &self.pool_query),
            ("ff1.weight".into(), &self.ff1_weight),
            ("ff1.bias".into(), &self.ff1_bias),
            ("ff2.weight".into(), &self.ff2_weight),
            ("ff2.bias".into(), &self.ff2_bias),
        ]);
        out
    }

    /// Mutable trainable tensors in the same order as `tensors`.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.proj_weight, &mut self.proj_bias, &mut self.encoder.embedding];
        out.extend(self.fuse_occ.tensors_mut());
        out.extend(self.fuse_planner.tensors_mut());
        out.extend([
            &mut self.pool_query,
            &mut self.ff1_weight,
            &mut self.ff1_bias,
            &mut self.ff2_weight,
            &mut self.ff2_bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Rebuilds parameters from named tensors (as written by `tensors`).
    /// The positional table is regenerated from `dims.max_text_len`.
    pub fn from_named(dims: PlannerDims, named: Vec<(String, Matrix)>) -> Result<Self, PlannerError> {
        let vocab_size = named
            .iter()
            .find(|(n, _)| n == "encoder.embedding")
            .map(|(_, m)| m.rows())
            .ok_or_else(|| PlannerError::Checkpoint("missing tensor encoder.embedding".into()))?;
        let mut params = PlannerParams::zeros(dims, vocab_size)?;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != named.len() {
            return Err(PlannerError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                named.len()
            )));
        }
        for ((want, slot), (got, m)) in names.iter().zip(params.tensors_mut()).zip(named) {
            if *want != got {
                return Err(PlannerError::Checkpoint(format!("expected tensor {want}, found {got}")));
            }
            if slot.shape() != m.shape() {
                return Err(PlannerError::Checkpoint(format!(
                    "tensor {want}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    m.shape()
                )));
            }
            *slot = m;
        }
        params.encoder.positional = sinusoidal_positions(dims.max_text_len, dims.model_dim);
        Ok(params)
    }
}

/// Planner parameters registered as tape leaves.
pub struct PlannerVars {
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub embedding: Var,
    pub fuse_occ: AttentionVars,
    pub fuse_planner: AttentionVars,
    pub pool_query: Var,
    pub ff1_weight: Var,
    pub ff1_bias: Var,
    pub ff2_weight: Var,
    pub ff2_bias: Var,
}

impl PlannerVars {
    pub fn register(tape: &Tape, p: &PlannerParams) -> Self {
        PlannerVars {
            proj_weight: tape.leaf(p.proj_weight.clone()),
            proj_bias: tape.leaf(p.proj_bias.clone()),
            embedding: tape.leaf(p.encoder.embedding.clone()),
            fuse_occ: p.fuse_occ.register(tape),
            fuse_planner: p.fuse_planner.register(tape),
            pool_query: tape.leaf(p.pool_query.clone()),
            ff1_weight: tape.leaf(p.ff1_weight.clone()),
            ff1_bias: tape.leaf(p.ff1_bias.clone()),
            ff2_weight: tape.leaf(p.ff2_weight.clone()),
            ff2_bias: tape.leaf(p.ff2_bias.clone()),
        }
    }

    /// Rebuilds the handles from leaves listed in `PlannerParams::tensors`
    /// order, e.g. the inputs of a gradient check.
    pub fn from_vars(dims: &PlannerDims, vars: &[Var]) -> Result<Self, PlannerError> {
        let h = dims.heads;
        let per_attention = 3 * h + 1;
        let want = 3 + 2 * per_attention + 5;
        if vars.len() != want {
            return Err(PlannerError::Config(format!(
                "expected {want} planner tensors, got {}",
                vars.len()
            )));
        }
        let attention = |s: &[Var]| AttentionVars {
            num_heads: h,
            model_dim: dims.model_dim,
            query: s[..h].to_vec(),
            key: s[h..2 * h].to_vec(),
            value: s[2 * h..3 * h].to_vec(),
            output: s[3 * h],
        };
        let tail = &vars[3 + 2 * per_attention..];
        Ok(PlannerVars {
            proj_weight: vars[0],
            proj_bias: vars[1],
            embedding: vars[2],
            fuse_occ: attention(&vars[3..3 + per_attention]),
            fuse_planner: attention(&vars[3 + per_attention..3 + 2 * per_attention]),
            pool_query: tail[0],
            ff1_weight: tail[1],
            ff1_bias: tail[2],
            ff2_weight: tail[3],
            ff2_bias: tail[4],
        })
    }

    /// Leaves in the order of `PlannerParams::tensors`.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.proj_weight, self.proj_bias, self.embedding];
        out.extend(self.fuse_occ.vars());
        out.extend(self.fuse_planner.vars());
        out.extend([
            self.pool_query,
            self.ff1_weight,
            self.ff1_bias,
            self.ff2_weight,
            self.ff2_bias,
        ]);
        out
    }
}
