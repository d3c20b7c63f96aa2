//! Triangular storage for two-time-indexed processes `V(t_i, t_j)` at node `k`,
//! `0 ≤ i ≤ j ≤ N`, `0 ≤ k ≤ j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    /// The accompanying value `Ỹ(t_i, t_j)`.
    Ytilde,
    /// The martingale integrand `Z(t_i, t_j)`; layer N is unused and kept at zero.
    Z,
    /// Per-step increments of `K(t_i, ·)` between `t_j` and `t_{j+1}`; layer N is zero.
    Kinc,
}

/// Offset of layer `j` inside the flat storage of anchor `i`.
#[inline]
pub fn layer_offset(i: usize, j: usize) -> usize {
    (j * (j + 1) - i * (i + 1)) / 2
}

/// Number of reals stored for anchor `i` on a lattice with `n` steps.
#[inline]
pub fn anchor_len(i: usize, n: usize) -> usize {
    layer_offset(i, n + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiField {
    steps: usize,
    role: FieldRole,
    anchors: Vec<Vec<f64>>,
}

impl BiField {
    pub fn zeros(steps: usize, role: FieldRole) -> Self {
        let anchors = (0..=steps).map(|i| vec![0.0; anchor_len(i, steps)]).collect();
        Self {
            steps,
            role,
            anchors,
        }
    }

    pub fn from_anchors(steps: usize, role: FieldRole, anchors: Vec<Vec<f64>>) -> Result<Self> {
        if anchors.len() != steps + 1 {
            return Err(Error::LayerMismatch {
                expected: steps,
                got: anchors.len().saturating_sub(1),
            });
        }
        for (i, a) in anchors.iter().enumerate() {
            if a.len() != anchor_len(i, steps) {
                return Err(Error::LayerMismatch {
                    expected: anchor_len(i, steps),
                    got: a.len(),
                });
            }
        }
        Ok(Self {
            steps,
            role,
            anchors,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i]
    }

    pub fn anchor_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.anchors[i]
    }

    /// Values at running layer `j ≥ i` for anchor `i`.
    pub fn layer(&self, i: usize, j: usize) -> &[f64] {
        debug_assert!(i <= j && j <= self.steps);
        let o = layer_offset(i, j);
        &self.anchors[i][o..o + j + 1]
    }

    pub fn layer_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        debug_assert!(i <= j && j <= self.steps);
        let o = layer_offset(i, j);
        &mut self.anchors[i][o..o + j + 1]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.layer(i, j)[k]
    }

    pub fn len(&self) -> usize {
        self.anchors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &BiField) -> f64 {
        self.anchors
            .iter()
            .zip(&other.anchors)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}
