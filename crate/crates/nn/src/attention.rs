//! Multi-head scaled dot-product attention.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::init::uniform_matrix;
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Trainable weights of one multi-head attention block.
///
/// Each head owns `d × d_h` query/key/value projections (`d_h = d / heads`);
/// the concatenated heads go through a `d × d` output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub num_heads: usize,
    pub model_dim: usize,
    pub query: Vec<Matrix>,
    pub key: Vec<Matrix>,
    pub value: Vec<Matrix>,
    pub output: Matrix,
}

/// [`AttentionParams`] registered on a tape.
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub num_heads: usize,
    pub model_dim: usize,
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
    pub output: Var,
}

fn check_dims(model_dim: usize, num_heads: usize) -> Result<usize> {
    if num_heads == 0 || model_dim == 0 || !model_dim.is_multiple_of(num_heads) {
        return Err(NnError::Contract(format!(
            "model dim {model_dim} is not divisible into {num_heads} heads"
        )));
    }
    Ok(model_dim / num_heads)
}

impl AttentionParams {
    pub fn random<R: Rng + ?Sized>(model_dim: usize, num_heads: usize, rng: &mut R) -> Result<Self> {
        let dh = check_dims(model_dim, num_heads)?;
        let proj = |rng: &mut R| -> Vec<Matrix> {
            (0..num_heads)
                .map(|_| uniform_matrix(model_dim, dh, model_dim, rng))
                .collect()
        };
        let query = proj(rng);
        let key = proj(rng);
        let value = proj(rng);
        let output = uniform_matrix(model_dim, model_dim, model_dim, rng);
        Ok(AttentionParams {
            num_heads,
            model_dim,
            query,
            key,
            value,
            output,
        })
    }

    pub fn zeros(model_dim: usize, num_heads: usize) -> Result<Self> {
        let dh = check_dims(model_dim, num_heads)?;
        let z = || vec![Matrix::zeros(model_dim, dh); num_heads];
        Ok(AttentionParams {
            num_heads,
            model_dim,
            query: z(),
            key: z(),
            value: z(),
            output: Matrix::zeros(model_dim, model_dim),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dh = check_dims(self.model_dim, self.num_heads)?;
        for set in [&self.query, &self.key, &self.value] {
            if set.len() != self.num_heads {
                return Err(NnError::Contract(format!(
                    "expected {} head projections, found {}",
                    self.num_heads,
                    set.len()
                )));
            }
            for m in set {
                if m.shape() != (self.model_dim, dh) {
                    return Err(NnError::shape("attention projection", m.shape(), (self.model_dim, dh)));
                }
            }
        }
        if self.output.shape() != (self.model_dim, self.model_dim) {
            return Err(NnError::shape(
                "attention output",
                self.output.shape(),
                (self.model_dim, self.model_dim),
            ));
        }
        Ok(())
    }

    /// All weight matrices in a fixed order, with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::with_capacity(3 * self.num_heads + 1);
        for (kind, set) in [("query", &self.query), ("key", &self.key), ("value", &self.value)] {
            for (h, m) in set.iter().enumerate() {
                out.push((format!("{kind}.{h}"), m));
            }
        }
        out.push(("output".to_string(), &self.output));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(3 * self.num_heads + 1);
        out.extend(self.query.iter_mut());
        out.extend(self.key.iter_mut());
        out.extend(self.value.iter_mut());
        out.push(&mut self.output);
        out
    }

    pub fn register(&self, tape: &Tape) -> AttentionVars {
        let reg = |set: &Vec<Matrix>| set.iter().map(|m| tape.leaf(m.clone())).collect::<Vec<_>>();
        AttentionVars {
            num_heads: self.num_heads,
            model_dim: self.model_dim,
            query: reg(&self.query),
            key: reg(&self.key),
            value: reg(&self.value),
            output: tape.leaf(self.output.clone()),
        }
    }
}

impl AttentionVars {
    /// Vars in the same order as [`AttentionParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(3 * self.num_heads + 1);
        out.extend(&self.query);
        out.extend(&self.key);
        out.extend(&self.value);
        out.push(self.output);
        out
    }
}

/// Traced attention: `q` is `nq × d`, `k` and `v` are `nk × d`.
pub fn attend(tape: &Tape, q: Var, k: Var, v: Var, p: &AttentionVars) -> Result<Var> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if sk.0 == 0 {
        return Err(NnError::EmptyContext);
    }
    if sk != sv {
        return Err(NnError::shape("attention key/value", sk, sv));
    }
    if sq.1 != p.model_dim || sk.1 != p.model_dim {
        return Err(NnError::shape("attention input", sq, sk));
    }
    let dh = p.model_dim / p.num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.num_heads);
    for h in 0..p.num_heads {
        let qh = tape.matmul(q, p.query[h])?;
        let kh = tape.matmul(k, p.key[h])?;
        let vh = tape.matmul(v, p.value[h])?;
        let scores = tape.matmul(qh, tape.transpose(kh))?;
        let weights = tape.softmax_rows(tape.scale(scores, scale));
        heads.push(tape.matmul(weights, vh)?);
    }
    let joined = tape.concat_cols(&heads)?;
    tape.matmul(joined, p.output)
}

/// Untraced attention on plain matrices.
pub fn multi_head_attention(q: &Matrix, k: &Matrix, v: &Matrix, p: &AttentionParams) -> Result<Matrix> {
    p.validate()?;
    let tape = Tape::new();
    let vars = p.register(&tape);
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = attend(&tape, qv, kv, vv, &vars)?;
    let value = tape.value(out).clone();
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded_rng;

    #[test]
    fn single_key_gives_projected_value() {
        let mut rng = seeded_rng(3);
        let p = AttentionParams::random(8, 2, &mut rng).unwrap();
        let q = uniform_matrix(3, 8, 1, &mut rng);
        let kv = uniform_matrix(1, 8, 1, &mut rng);
        let out = multi_head_attention(&q, &kv, &kv, &p).unwrap();

        // softmax over one key is exactly 1: out = concat_h(kv · Wv_h) · Wo
        let mut per_head = Vec::new();
        for h in 0..2 {
            per_head.push(kv.matmul(&p.value[h]).unwrap());
        }
        let joined: Vec<f64> = per_head.iter().flat_map(|m| m.data().to_vec()).collect();
        let expected_row = Matrix::from_vec(1, 8, joined).unwrap().matmul(&p.output).unwrap();
        for r in 0..3 {
            for c in 0..8 {
                assert!((out.get(r, c) - expected_row.get(0, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let mut rng = seeded_rng(4);
        let mut p = AttentionParams::random(8, 4, &mut rng).unwrap();
        p.output = Matrix::zeros(8, 8);
        let q = uniform_matrix(5, 8, 1, &mut rng);
        let k = uniform_matrix(3, 8, 1, &mut rng);
        let out = multi_head_attention(&q, &k, &k, &p).unwrap();
        assert_eq!(out, Matrix::zeros(5, 8));
    }

    #[test]
    fn empty_context_is_an_error() {
        let p = AttentionParams::zeros(4, 2).unwrap();
        let err = multi_head_attention(&Matrix::zeros(2, 4), &Matrix::zeros(0, 4), &Matrix::zeros(0, 4), &p);
        assert_eq!(err.unwrap_err(), NnError::EmptyContext);
    }

    #[test]
    fn heads_must_divide_dim() {
        assert!(AttentionParams::zeros(10, 4).is_err());
    }
}
