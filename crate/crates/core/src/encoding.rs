//! Text encoding of decision-maker outputs and residual cross-attention
//! fusion of text into BEV tokens.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use dme_nn::{
    attend, multi_head_attention, uniform_matrix, AttentionParams, AttentionVars, Matrix, NnError, Tape, Var,
};
use rand::Rng;
use thiserror::Error;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EMPTY: &str = "<empty>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EMPTY_ID: usize = 2;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("cannot encode an empty id sequence")]
    EmptyIds,
    #[error("sequence of {len} tokens exceeds the positional table ({max})")]
    TooLong { len: usize, max: usize },
    #[error("vocabulary file line {line}: {message}")]
    VocabFormat { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercased alphanumeric words; everything else separates.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Dense token ↔ id map with reserved ids PAD=0, UNK=1, EMPTY=2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved tokens followed by the given tokens in sorted order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).map(|t| t.to_lowercase()).collect();
        let mut all = vec![PAD.to_string(), UNK.to_string(), EMPTY.to_string()];
        all.extend(set.into_iter().filter(|t| t != PAD && t != UNK && t != EMPTY));
        let ids = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens: all, ids }
    }

    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_tokens(texts.into_iter().flat_map(words))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Word ids with OOV mapped to UNK; empty text becomes `[EMPTY]`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = words(text).iter().map(|w| self.id(w).unwrap_or(UNK_ID)).collect();
        if ids.is_empty() {
            vec![EMPTY_ID]
        } else {
            ids
        }
    }

    /// `token<TAB>id` lines in id order.
    pub fn to_tsv(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self, EncodingError> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let err = |message: String| EncodingError::VocabFormat { line: n + 1, message };
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| err("expected token<TAB>id".into()))?;
            let id: usize = id.trim().parse().map_err(|_| err(format!("bad id '{id}'")))?;
            if id != tokens.len() {
                return Err(err(format!("ids must be dense and ordered, expected {}", tokens.len())));
            }
            if tok != tok.to_lowercase() {
                return Err(err(format!("token '{tok}' is not lowercase")));
            }
            tokens.push(tok.to_string());
        }
        let reserved = [PAD, UNK, EMPTY];
        if tokens.len() < 3 || tokens[..3] != reserved {
            return Err(EncodingError::VocabFormat {
                line: 1,
                message: "first three tokens must be <pad>, <unk>, <empty>".into(),
            });
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary { tokens, ids })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncodingError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodingError> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

/// Fixed sinusoidal position table.
pub fn sinusoidal_positions(max_len: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(max_len, dim);
    for pos in 0..max_len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// Trainable token embeddings plus a fixed positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embedding: Matrix,
    pub positional: Matrix,
}

impl EncoderParams {
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, max_len: usize, rng: &mut R) -> Self {
        EncoderParams {
            // Unit-range entries keep tokens distinguishable next to the
            // sinusoidal positions, which also span [-1, 1].
            embedding: uniform_matrix(vocab_size, dim, 1, rng),
            positional: sinusoidal_positions(max_len, dim),
        }
    }

    pub fn zeros(vocab_size: usize, dim: usize, max_len: usize) -> Self {
        EncoderParams {
            embedding: Matrix::zeros(vocab_size, dim),
            positional: sinusoidal_positions(max_len, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn max_len(&self) -> usize {
        self.positional.rows()
    }

    fn check(&self, ids: &[usize]) -> Result<(), EncodingError> {
        if ids.is_empty() {
            return Err(EncodingError::EmptyIds);
        }
        if ids.len() > self.max_len() {
            return Err(EncodingError::TooLong {
                len: ids.len(),
                max: self.max_len(),
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(EncodingError::IdOutOfRange {
                id,
                size: self.vocab_size(),
            });
        }
        Ok(())
    }
}

/// `n × d` token vectors, n ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding(pub Matrix);

impl TextEncoding {
    pub fn tokens(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Row i = embedding[ids[i]] + positional[i].
pub fn encode_text(ids: &[usize], p: &EncoderParams) -> Result<TextEncoding, EncodingError> {
    p.check(ids)?;
    let mut m = p.embedding.select_rows(ids);
    for (i, _) in ids.iter().enumerate() {
        for (v, q) in m.row_mut(i).iter_mut().zip(p.positional.row(i)) {
            *v += q;
        }
    }
    Ok(TextEncoding(m))
}

/// Gaze and description encodings stacked row-wise, each with its own
/// positions.
pub fn build_occ_text(
    gaze: &str,
    description: &str,
    vocab: &Vocabulary,
    p: &EncoderParams,
) -> Result<TextEncoding, EncodingError> {
    let g = encode_text(&vocab.tokenize(gaze), p)?;
    let d = encode_text(&vocab.tokenize(description), p)?;
    let mut data = g.0.into_vec();
    data.extend(d.0.into_vec());
    let rows = data.len() / p.dim();
    Ok(TextEncoding(Matrix::from_vec(rows, p.dim(), data)?))
}

/// Residual cross-attention: `MHA(Q = b, K = t, V = t) + b`.
pub fn logical_fuse(b: &Matrix, t: &TextEncoding, p: &AttentionParams) -> Result<Matrix, EncodingError> {
    let attended = multi_head_attention(b, t.matrix(), t.matrix(), p)?;
    Ok(attended.add(b)?)
}

/// Tape version of `encode_text` with a trainable embedding variable.
pub fn encode_text_var(tape: &Tape, embedding: Var, positional: &Matrix, ids: &[usize]) -> Result<Var, EncodingError> {
    let rows = tape.gather_rows(embedding, ids)?;
    let pos = tape.leaf(positional.select_rows(&(0..ids.len()).collect::<Vec<_>>()));
    Ok(tape.add(rows, pos)?)
}

/// Tape version of `logical_fuse`.
pub fn logical_fuse_var(tape: &Tape, b: Var, t: Var, p: &AttentionVars) -> Result<Var, EncodingError> {
    let attended = attend(tape, b, t, t, p)?;
    Ok(tape.add(attended, b)?)
}

/// Cell-major `H·W × C` rows from an `H × W × C` nested grid.
pub fn cells_to_tokens(cells: &[Vec<Vec<f64>>]) -> Result<Matrix, EncodingError> {
    let rows: Vec<&[f64]> = cells.iter().flat_map(|row| row.iter().map(Vec::as_slice)).collect();
    Ok(Matrix::from_rows(&rows)?)
}

/// Inverse of `cells_to_tokens`.
pub fn tokens_to_cells(tokens: &Matrix, height: usize, width: usize) -> Result<Vec<Vec<Vec<f64>>>, EncodingError> {
    if tokens.rows() != height * width {
        return Err(NnError::Contract(format!(
            "{} token rows cannot form a {height}×{width} grid",
            tokens.rows()
        ))
        .into());
    }
    Ok((0..height)
        .map(|r| (0..width).map(|c| tokens.row(r * width + c).to_vec()).collect())
        .collect())
}

/// Linear map from C feature channels to d-dimensional tokens.
pub fn project_bev_channels(features: &Matrix, weight: &Matrix, bias: &Matrix) -> Result<Matrix, EncodingError> {
    Ok(features.matmul(weight)?.add_row(bias)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dme_nn::seeded_rng;

    fn vocab() -> Vocabulary {
        Vocabulary::from_corpus(["Turn left.", "I will slow down"])
    }

    #[test]
    fn tokenize_examples() {
        let v = vocab();
        assert_eq!(
            v.tokenize("Turn left."),
            vec![v.id("turn").unwrap(), v.id("left").unwrap()]
        );
        assert_eq!(v.tokenize(""), vec![EMPTY_ID]);
        assert_eq!(v.tokenize("zzzunknownzzz"), vec![UNK_ID]);
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let v = vocab();
        assert_eq!(Vocabulary::from_tsv(&v.to_tsv()).unwrap(), v);
        assert!(Vocabulary::from_tsv("a\t0\n").is_err());
        assert!(Vocabulary::from_tsv("<pad>\t0\n<unk>\t2\n").is_err());
    }

    #[test]
    fn zero_embeddings_give_positions() {
        let p = EncoderParams::zeros(5, 8, 4);
        let e = encode_text(&[3], &p).unwrap();
        assert_eq!(e.0.row(0), p.positional.row(0));
        assert!(matches!(
            encode_text(&[5], &p),
            Err(EncodingError::IdOutOfRange { id: 5, size: 5 })
        ));
        assert!(matches!(encode_text(&[], &p), Err(EncodingError::EmptyIds)));
    }

    #[test]
    fn order_matters_through_positions() {
        let p = EncoderParams::random(6, 8, 4, &mut seeded_rng(1));
        let a = encode_text(&[3, 4], &p).unwrap();
        let b = encode_text(&[4, 3], &p).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn occ_text_concatenates() {
        let v = Vocabulary::from_corpus(["a b c d e f g h"]);
        let p = EncoderParams::random(v.len(), 8, 16, &mut seeded_rng(2));
        let t = build_occ_text("a b c", "d e f g h", &v, &p).unwrap();
        assert_eq!(t.tokens(), 8);
        let g = encode_text(&v.tokenize("a b c"), &p).unwrap();
        for i in 0..3 {
            assert_eq!(t.0.row(i), g.0.row(i));
        }
        assert_eq!(build_occ_text("", "", &v, &p).unwrap().tokens(), 2);
    }

    #[test]
    fn cell_reshape_round_trip() {
        let cells: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|r| (0..2).map(|c| vec![r as f64, c as f64, 1.0]).collect())
            .collect();
        let t = cells_to_tokens(&cells).unwrap();
        assert_eq!(t.row(1), &[0.0, 1.0, 1.0]);
        assert_eq!(tokens_to_cells(&t, 2, 2).unwrap(), cells);
        let w = Matrix::identity(3);
        let b = Matrix::zeros(1, 3);
        assert_eq!(project_bev_channels(&t, &w, &b).unwrap(), t);
        let wide = project_bev_channels(&Matrix::zeros(32, 16), &Matrix::zeros(16, 32), &Matrix::zeros(1, 32)).unwrap();
        assert_eq!(wide.shape(), (32, 32));
    }
}
