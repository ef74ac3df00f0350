use serde::{Deserialize, Serialize};

use super::Prompt;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// Token layout `x_1, [y_1, 0…], x_2, [y_2, 0…], …, x_{k+1}`: one `d`-wide row
/// per token, x-tokens at even indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Matrix,
    pub x_positions: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Number of context pairs.
    pub fn k(&self) -> usize {
        self.x_positions.len() - 1
    }

    /// Reads the inputs (all `k + 1`) and context labels (first `k`) back out.
    pub fn decode(&self) -> (Matrix, Vec<f64>) {
        let d = self.dim();
        let xs = Matrix::from_fn(self.x_positions.len(), d, |i, j| {
            self.tokens[(self.x_positions[i], j)]
        });
        let ys = self.x_positions[..self.k()]
            .iter()
            .map(|&p| self.tokens[(p + 1, 0)])
            .collect();
        (xs, ys)
    }
}

pub fn tokenize(prompt: &Prompt) -> TokenSequence {
    let (k, d) = (prompt.k(), prompt.d());
    let mut tokens = Matrix::zeros(2 * k + 1, d);
    for i in 0..=k {
        tokens.row_mut(2 * i).copy_from_slice(prompt.x(i));
        if i < k {
            tokens[(2 * i + 1, 0)] = prompt.ys[i];
        }
    }
    TokenSequence {
        tokens,
        x_positions: (0..=k).map(|i| 2 * i).collect(),
    }
}

/// Zeroes the trailing `d_start` coordinates of every x-token and keeps the
/// first `k_start` pairs plus the next query.
pub fn curriculum_mask(
    seq: &TokenSequence,
    d_start: usize,
    k_start: usize,
) -> Result<TokenSequence> {
    let (d, k) = (seq.dim(), seq.k());
    if d_start >= d {
        return Err(invalid(format!("d_start = {d_start} must be < d = {d}")));
    }
    if k_start < 1 || k_start > k {
        return Err(invalid(format!("k_start = {k_start} must lie in [1, {k}]")));
    }
    let len = 2 * k_start + 1;
    if len > seq.len() {
        return Err(Error::Shape("sequence shorter than its x positions".into()));
    }
    let keep = d - d_start;
    let tokens = Matrix::from_fn(len, d, |i, j| {
        if i % 2 == 0 && j >= keep {
            0.0
        } else {
            seq.tokens[(i, j)]
        }
    });
    Ok(TokenSequence {
        tokens,
        x_positions: (0..=k_start).map(|i| 2 * i).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgen::{sample_prompt, PromptDistribution, PromptMeta};

    #[test]
    fn direct_layout() {
        let xs = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let meta = PromptMeta {
            tag: "t".into(),
            seed: 0,
        };
        let p = Prompt::new(xs, vec![5.0, 0.0], vec![0.0; 3], meta).unwrap();
        let t = tokenize(&p);
        let expect = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![5.0, 0.0, 0.0],
            vec![4.0, 5.0, 6.0],
        ])
        .unwrap();
        assert_eq!(t.tokens, expect);
        assert_eq!(t.x_positions, vec![0, 2]);
    }

    #[test]
    fn positions_for_k40() {
        let p = sample_prompt(&PromptDistribution::full(3, 40), 0).unwrap();
        let t = tokenize(&p);
        assert_eq!(t.x_positions.len(), 41);
        assert_eq!(t.x_positions[40], 80);
        assert!(t.x_positions.iter().enumerate().all(|(i, &p)| p == 2 * i));
        assert_eq!(t.len(), 81);
    }

    #[test]
    fn decode_round_trip() {
        let p = sample_prompt(&PromptDistribution::full(4, 6), 3).unwrap();
        let (xs, ys) = tokenize(&p).decode();
        assert_eq!(xs, p.xs);
        assert_eq!(ys, p.ys[..6].to_vec());
    }

    #[test]
    fn mask_noop_endpoint() {
        let p = sample_prompt(&PromptDistribution::full(4, 6), 3).unwrap();
        let t = tokenize(&p);
        assert_eq!(curriculum_mask(&t, 0, 6).unwrap(), t);
    }

    #[test]
    fn mask_reference_schedule_start() {
        let p = sample_prompt(&PromptDistribution::full(20, 40), 1).unwrap();
        let t = tokenize(&p);
        let m = curriculum_mask(&t, 15, 11).unwrap();
        assert_eq!(m.len(), 23);
        for &pos in &m.x_positions {
            let row = m.tokens.row(pos);
            assert!(row[5..].iter().all(|&v| v == 0.0));
            assert_eq!(&row[..5], &t.tokens.row(pos)[..5]);
        }
        // y-tokens untouched
        assert_eq!(m.tokens[(1, 0)], p.ys[0]);
        assert!(curriculum_mask(&t, 20, 11).is_err());
        assert!(curriculum_mask(&t, 0, 0).is_err());
        assert!(curriculum_mask(&t, 0, 41).is_err());
    }
}
