use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Feed-forward map from a speaker feature vector to an `I × P` grid: one
/// shared `tanh` hidden layer followed by `I` linear projection heads.
#[derive(Clone, Debug, PartialEq)]
pub struct CognitivePredictor {
    input_dim: usize,
    hidden: usize,
    heads: usize,
    width: usize,
    /// `W1` (`hidden × input_dim`), `b1`, then per head `W` (`width × hidden`) and `b`.
    weights: Vec<f64>,
}

impl CognitivePredictor {
    pub fn param_count_for(input_dim: usize, hidden: usize, heads: usize, width: usize) -> usize {
        hidden * input_dim + hidden + heads * (width * hidden + width)
    }

    pub fn new(input_dim: usize, hidden: usize, heads: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || heads == 0 || width == 0 {
            return Err(Error::domain("predictor dimensions must be positive"));
        }
        let mut p = Self {
            input_dim,
            hidden,
            heads,
            width,
            weights: Vec::new(),
        };
        p.set_weights(&weights)?;
        Ok(p)
    }

    /// Glorot-scaled hidden layer; heads start at `head_scale / √hidden`, biases at 0.
    pub fn random(input_dim: usize, hidden: usize, heads: usize, width: usize, head_scale: f64, rng: &mut Rng) -> Self {
        let mut w = Vec::with_capacity(Self::param_count_for(input_dim, hidden, heads, width));
        let s1 = (2.0 / (input_dim + hidden) as f64).sqrt();
        w.extend((0..hidden * input_dim).map(|_| s1 * rng.normal()));
        w.extend(std::iter::repeat_n(0.0, hidden));
        let s2 = head_scale / (hidden as f64).sqrt();
        for _ in 0..heads {
            w.extend((0..width * hidden).map(|_| s2 * rng.normal()));
            w.extend(std::iter::repeat_n(0.0, width));
        }
        Self::new(input_dim, hidden, heads, width, w).expect("finite by construction")
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        let expected = Self::param_count_for(self.input_dim, self.hidden, self.heads, self.width);
        if weights.len() != expected {
            return Err(Error::domain(format!(
                "predictor expects {expected} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::numeric("non-finite predictor weight"));
        }
        self.weights = weights.to_vec();
        Ok(())
    }

    pub fn predict(&self, features: &[f64]) -> Result<Matrix> {
        if features.len() != self.input_dim {
            return Err(Error::domain(format!(
                "predictor expects {} features, got {}",
                self.input_dim,
                features.len()
            )));
        }
        Matrix::new(self.heads, self.width, self.forward_with(&self.weights, features))
    }

    /// Row-major `heads × width` output for an external weight vector.
    pub(crate) fn forward_with<S: Real>(&self, weights: &[S], features: &[f64]) -> Vec<S> {
        let (n, h) = (self.input_dim, self.hidden);
        let (w1, rest) = weights.split_at(h * n);
        let (b1, heads) = rest.split_at(h);
        let hidden: Vec<S> = (0..h)
            .map(|r| {
                let pre = (0..n).fold(b1[r], |acc, c| acc + w1[r * n + c] * features[c]);
                pre.tanh()
            })
            .collect();
        let stride = self.width * h + self.width;
        let mut out = Vec::with_capacity(self.heads * self.width);
        for head in 0..self.heads {
            let block = &heads[head * stride..(head + 1) * stride];
            let (w, b) = block.split_at(self.width * h);
            for r in 0..self.width {
                let v = (0..h).fold(b[r], |acc, c| acc + w[r * h + c] * hidden[c]);
                out.push(v);
            }
        }
        out
    }
}
