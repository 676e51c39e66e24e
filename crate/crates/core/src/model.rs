//! Per-node linear models mapping keys onto slot positions.

use serde::{Deserialize, Serialize};

use crate::Key;

/// A monotone affine map from keys to slot positions.
///
/// Positions are computed relative to `anchor` so that keys far from zero
/// keep full `f64` resolution inside small nodes: two distinct keys that are
/// close together but large in magnitude must still be separable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub anchor: Key,
}

impl LinearModel {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self::anchored(0, slope, intercept)
    }

    pub fn anchored(anchor: Key, slope: f64, intercept: f64) -> Self {
        debug_assert!(slope >= 0.0 && slope.is_finite(), "slope {slope}");
        debug_assert!(intercept.is_finite(), "intercept {intercept}");
        LinearModel {
            slope,
            intercept,
            anchor,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0)
    }

    /// Line through `(lo, lo_pos)` and `(hi, hi_pos)`. Degenerates to a
    /// constant model when `lo == hi`.
    pub fn through(lo: Key, lo_pos: f64, hi: Key, hi_pos: f64) -> Self {
        if hi <= lo {
            return Self::anchored(lo, 0.0, lo_pos.max(0.0));
        }
        let slope = ((hi_pos - lo_pos) / (hi - lo) as f64).max(0.0);
        Self::anchored(lo, slope, lo_pos)
    }

    /// Unclamped real-valued position.
    #[inline]
    pub fn position(&self, key: Key) -> f64 {
        let dx = (i128::from(key) - i128::from(self.anchor)) as f64;
        self.slope * dx + self.intercept
    }

    /// `floor(slope·(key−anchor) + intercept)` clamped to `[0, num_slots−1]`.
    #[inline]
    pub fn predict(&self, key: Key, num_slots: usize) -> usize {
        debug_assert!(num_slots >= 1);
        let p = self.position(key).floor();
        let last = num_slots - 1;
        // `!(p > 0.0)` also routes NaN to slot 0.
        if !(p > 0.0) {
            0
        } else if p >= last as f64 {
            last
        } else {
            p as usize
        }
    }

    /// Scales the model so that positions are multiplied by `factor`.
    /// Inclusive key interval that `predict` maps to slot `j` of
    /// `num_slots`, up to float rounding. Edge slots extend to the key
    /// domain bounds.
    pub fn slot_range(&self, j: usize, num_slots: usize) -> (Key, Key) {
        let last = num_slots.saturating_sub(1);
        if self.slope <= 0.0 || num_slots <= 1 {
            return (0, Key::MAX);
        }
        let key_at = |pos: f64| -> f64 { self.anchor as f64 + (pos - self.intercept) / self.slope };
        let to_key = |x: f64| -> Key {
            if x <= 0.0 {
                0
            } else if x >= Key::MAX as f64 {
                Key::MAX
            } else {
                x as Key
            }
        };
        let lo = if j == 0 { 0 } else { to_key(key_at(j as f64).ceil()) };
        let hi = if j >= last {
            Key::MAX
        } else {
            to_key(key_at((j + 1) as f64).ceil()).saturating_sub(1)
        };
        (lo, hi.max(lo))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::anchored(self.anchor, self.slope * factor, self.intercept * factor)
    }
}

/// Free-function form of [`LinearModel::predict`].
#[inline]
pub fn predict(model: &LinearModel, key: Key, num_slots: usize) -> usize {
    model.predict(key, num_slots)
}
