use crate::error::{Error, Result};

/// Additive bias used for blocked positions. The most negative finite value,
/// so that `masked - masked` never yields NaN.
pub const MASKED: f64 = f64::MIN;

/// Additive attention mask with entries in `{0, MASKED}`.
///
/// A mask of shape `[rows, cols]` applied to scores viewed as `[R, cols]`
/// requires `R % rows == 0`; mask row `i` covers score rows
/// `i * (R / rows) .. (i + 1) * (R / rows)`. This covers a single broadcast
/// row, one row per score row, and one row per batch entry of a
/// `[batch, m, cols]` score tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl AttentionMask {
    /// Builds a mask from a liveness predicate. Rejects rows with no live entry.
    pub fn from_fn(rows: usize, cols: usize, live: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let mut any = false;
            for c in 0..cols {
                if live(r, c) {
                    any = true;
                    values.push(0.0);
                } else {
                    values.push(MASKED);
                }
            }
            if !any {
                return Err(Error::Contract(format!("mask row {r} has no live entry")));
            }
        }
        Ok(Self { rows, cols, values })
    }

    /// All-live mask.
    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Time mask for 1-based position `t` over a length-`n` sequence:
    /// entries `i <= t` are live, the rest blocked.
    pub fn time(t: usize, n: usize) -> Result<Self> {
        if t == 0 || t > n {
            return Err(Error::Contract(format!(
                "time position {t} outside 1..={n}"
            )));
        }
        Self::from_fn(1, n, |_, i| i < t)
    }

    /// Stacked time masks `a_1 .. a_n`, one row per temporal position.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |t, i| i <= t).expect("causal mask always has a live diagonal")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_live(&self, r: usize, c: usize) -> bool {
        self.values[r * self.cols + c] == 0.0
    }
}
