use crate::error::{Error, Result};

/// Dense batch x tokens x channels tensor of `f64`, row-major with channels
/// contiguous. This is the carrier for token sequences throughout the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    batch: usize,
    tokens: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TokenTensor {
    pub fn zeros(batch: usize, tokens: usize, channels: usize) -> Self {
        TokenTensor {
            batch,
            tokens,
            channels,
            data: vec![0.0; batch * tokens * channels],
        }
    }

    pub fn from_vec(batch: usize, tokens: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * tokens * channels {
            return Err(Error::shape(format!(
                "tensor data length {} does not match {batch}x{tokens}x{channels}",
                data.len()
            )));
        }
        Ok(TokenTensor {
            batch,
            tokens,
            channels,
            data,
        })
    }

    /// Single-batch, single-channel sequence; handy in tests.
    pub fn from_sequence(values: &[f64]) -> Self {
        TokenTensor {
            batch: 1,
            tokens: values.len(),
            channels: 1,
            data: values.to_vec(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, b: usize, t: usize) -> usize {
        (b * self.tokens + t) * self.channels
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[self.offset(b, t) + c]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, c: usize, v: f64) {
        let i = self.offset(b, t) + c;
        self.data[i] = v;
    }

    /// Channel slice of one token.
    #[inline]
    pub fn token(&self, b: usize, t: usize) -> &[f64] {
        let o = self.offset(b, t);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn token_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let o = self.offset(b, t);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    /// New tensor whose token `i` is this tensor's token `idx[i]`, for every
    /// batch entry. Indices may repeat; each must be in range.
    pub fn gather_tokens(&self, idx: &[usize]) -> Result<TokenTensor> {
        let mut out = TokenTensor::zeros(self.batch, idx.len(), self.channels);
        for (i, &src) in idx.iter().enumerate() {
            if src >= self.tokens {
                return Err(Error::shape(format!(
                    "gather index {src} out of range for {} tokens",
                    self.tokens
                )));
            }
            for b in 0..self.batch {
                out.token_mut(b, i).copy_from_slice(self.token(b, src));
            }
        }
        Ok(out)
    }

    pub fn same_shape(&self, other: &TokenTensor) -> bool {
        self.batch == other.batch && self.tokens == other.tokens && self.channels == other.channels
    }

    /// Largest elementwise absolute difference; shapes must match.
    pub fn max_abs_diff(&self, other: &TokenTensor) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// self <- self * a + other * b, elementwise. Shapes must match.
    pub fn scale_add(&mut self, a: f64, other: &TokenTensor, b: f64) {
        assert!(self.same_shape(other), "scale_add on mismatched shapes");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x = *x * a + *y * b;
        }
    }
}
