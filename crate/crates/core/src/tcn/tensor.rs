use serde::{Deserialize, Serialize};

use super::TcnError;

/// Dense `(batch, time, channel)` tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, t: usize, c: usize) -> Self {
        Self {
            n,
            t,
            c,
            data: vec![0.0; n * t * c],
        }
    }

    pub fn from_vec(n: usize, t: usize, c: usize, data: Vec<f64>) -> Result<Self, TcnError> {
        if n == 0 || t == 0 || c == 0 {
            return Err(TcnError::ShapeMismatch(format!("zero dimension in ({n}, {t}, {c})")));
        }
        if data.len() != n * t * c {
            return Err(TcnError::ShapeMismatch(format!(
                "{} values for shape ({n}, {t}, {c})",
                data.len()
            )));
        }
        Ok(Self { n, t, c, data })
    }

    #[inline]
    pub fn idx(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.t + t) * self.c + c
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[self.idx(b, t, c)]
    }

    /// Channel vector at `(b, t)`.
    #[inline]
    pub fn row(&self, b: usize, t: usize) -> &[f64] {
        let s = (b * self.t + t) * self.c;
        &self.data[s..s + self.c]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let s = (b * self.t + t) * self.c;
        &mut self.data[s..s + self.c]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.n == other.n && self.t == other.t && self.c == other.c
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
