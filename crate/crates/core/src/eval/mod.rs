//! BERTScore over pluggable token embeddings, and benchmark statistics.
//!
//! Scores use plain greedy cosine matching: no IDF weighting and no
//! baseline rescaling.

mod bench;
mod embed;

use serde::{Deserialize, Serialize};

pub use bench::{
    boxplot_csv, boxplot_rows, compare_prompt_variants, iteration_stats, read_scores_csv,
    scores_csv, BoxplotRow, IterationStats, ScoreRecord, VariantComparison,
};
pub use embed::{tokenize, Embedder, HashEmbedder, HttpEmbedder, OneHotEmbedder};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate embedding: {0}")]
    Degenerate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("embedder failed: {0}")]
    Embedder(String),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Tokens of a text with one embedding vector each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedText {
    tokens: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl EmbeddedText {
    pub fn new(tokens: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if tokens.len() != embeddings.len() {
            return Err(EvalError::Shape(format!(
                "{} tokens but {} vectors",
                tokens.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        for (t, e) in tokens.iter().zip(&embeddings) {
            if e.len() != dim || dim == 0 {
                return Err(EvalError::Shape(format!("vector for {t:?} has dimension {}", e.len())));
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(EvalError::Degenerate(format!("vector for {t:?} is not finite")));
            }
            if norm(e) == 0.0 {
                return Err(EvalError::Degenerate(format!("vector for {t:?} has zero norm")));
            }
        }
        Ok(Self { tokens, embeddings })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const SIMILARITY_SLACK: f64 = 1e-9;

/// Row-major m×n cosine similarities; rows are candidate tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(EvalError::Shape(format!("empty {rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(EvalError::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|s| !s.is_finite() || s.abs() > 1.0 + SIMILARITY_SLACK)
        {
            return Err(EvalError::Shape(format!("entry {bad} outside [-1, 1]")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(EvalError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

pub fn similarity_matrix(candidate: &EmbeddedText, reference: &EmbeddedText) -> Result<SimilarityMatrix> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(EvalError::Shape("empty text".into()));
    }
    if candidate.dim() != reference.dim() {
        return Err(EvalError::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            candidate.dim(),
            reference.dim()
        )));
    }
    let cn: Vec<f64> = candidate.embeddings.iter().map(|e| norm(e)).collect();
    let rn: Vec<f64> = reference.embeddings.iter().map(|e| norm(e)).collect();
    let mut data = Vec::with_capacity(candidate.len() * reference.len());
    for (c, nc) in candidate.embeddings.iter().zip(&cn) {
        for (r, nr) in reference.embeddings.iter().zip(&rn) {
            let dot: f64 = c.iter().zip(r).map(|(a, b)| a * b).sum();
            data.push((dot / (nc * nr)).clamp(-1.0, 1.0));
        }
    }
    SimilarityMatrix::new(candidate.len(), reference.len(), data)
}

/// Mean over candidate tokens of the best reference match.
pub fn bert_precision(s: &SimilarityMatrix) -> f64 {
    let total: f64 = (0..s.rows)
        .map(|i| s.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / s.rows as f64
}

/// Mean over reference tokens of the best candidate match.
pub fn bert_recall(s: &SimilarityMatrix) -> f64 {
    bert_precision(&s.transpose())
}

/// Harmonic mean; zero when `p + r` is zero.
pub fn bert_f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BertScore {
    pub fn from_matrix(s: &SimilarityMatrix) -> Self {
        let precision = bert_precision(s);
        let recall = bert_recall(s);
        Self {
            precision,
            recall,
            f1: bert_f1(precision, recall),
        }
    }
}

pub async fn score_text(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<BertScore> {
    let c = embedder.embed(candidate).await?;
    let r = embedder.embed(reference).await?;
    Ok(BertScore::from_matrix(&similarity_matrix(&c, &r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn text(vectors: &[&[f64]]) -> EmbeddedText {
        EmbeddedText::new(
            (0..vectors.len()).map(|i| format!("t{i}")).collect(),
            vectors.iter().map(|v| v.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn orthonormal_identity() {
        let t = text(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = similarity_matrix(&t, &t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn orthogonal_pair() {
        let s = similarity_matrix(&text(&[&[1.0, 0.0]]), &text(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn random_three_by_four_matches_brute_force() {
        let c: [[f64; 3]; 3] = [[0.3, -1.2, 2.0], [1.0, 1.0, 1.0], [-0.5, 0.25, 4.0]];
        let r: [[f64; 3]; 4] = [[2.0, 0.1, -0.3], [0.0, 0.0, 1.0], [-1.0, 2.0, 0.5], [0.7, 0.7, -0.7]];
        let ct = text(&c.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
        let rt = text(&r.iter().map(|v| v.as_slice()).collect::<Vec<_>>());
        let s = similarity_matrix(&ct, &rt).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let dot = c[i][0] * r[j][0] + c[i][1] * r[j][1] + c[i][2] * r[j][2];
                let nc = (c[i][0].powi(2) + c[i][1].powi(2) + c[i][2].powi(2)).sqrt();
                let nr = (r[j][0].powi(2) + r[j][1].powi(2) + r[j][2].powi(2)).sqrt();
                assert_abs_diff_eq!(s.get(i, j), dot / (nc * nr), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hand_evaluated_maxima() {
        let s = similarity_matrix(&text(&[&[1.0, 0.0], &[0.0, 1.0]]), &text(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(bert_precision(&s), 0.5);
        assert_eq!(bert_recall(&s), 1.0);
        assert_abs_diff_eq!(bert_f1(0.5, 1.0), 0.6667, epsilon = 1e-4);
        assert_eq!(bert_f1(1.0, 1.0), 1.0);
        assert_eq!(bert_f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            EmbeddedText::new(vec!["a".into()], vec![vec![0.0, 0.0]]),
            Err(EvalError::Degenerate(_))
        ));
        assert!(matches!(
            EmbeddedText::new(vec!["a".into()], vec![]),
            Err(EvalError::Shape(_))
        ));
        assert!(matches!(
            similarity_matrix(&text(&[&[1.0, 0.0]]), &text(&[&[1.0, 0.0, 0.0]])),
            Err(EvalError::Shape(_))
        ));
        assert!(matches!(SimilarityMatrix::new(0, 0, vec![]), Err(EvalError::Shape(_))));
        assert!(matches!(SimilarityMatrix::new(1, 1, vec![1.5]), Err(EvalError::Shape(_))));
    }

    fn matrix() -> impl Strategy<Value = SimilarityMatrix> {
        (1usize..7, 1usize..7).prop_flat_map(|(m, n)| {
            prop::collection::vec(-1.0f64..=1.0, m * n)
                .prop_map(move |d| SimilarityMatrix::new(m, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn transpose_duality(s in matrix()) {
            prop_assert_eq!(bert_precision(&s), bert_recall(&s.transpose()));
            prop_assert_eq!(bert_recall(&s), bert_precision(&s.transpose()));
        }

        #[test]
        fn scores_stay_within_entry_range(s in matrix()) {
            let lo = s.data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let b = BertScore::from_matrix(&s);
            prop_assert!(lo <= b.precision && b.precision <= hi);
            prop_assert!(lo <= b.recall && b.recall <= hi);
            if b.precision > 0.0 && b.recall > 0.0 {
                prop_assert!(b.f1 <= b.precision.max(b.recall) + 1e-15);
                prop_assert!(b.f1 >= b.precision.min(b.recall) - 1e-15);
            }
        }

        #[test]
        fn column_permutation_invariance(s in matrix(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..s.cols).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let rows: Vec<Vec<f64>> = (0..s.rows).map(|i| order.iter().map(|&j| s.get(i, j)).collect()).collect();
            let p = SimilarityMatrix::from_rows(&rows).unwrap();
            let (a, b) = (BertScore::from_matrix(&s), BertScore::from_matrix(&p));
            prop_assert_eq!(a.precision, b.precision);
            // column means are summed in a different order
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }
    }
}
