use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights and bias of one parameterized layer.
///
/// `weight` is `outputs x fan_in` row-major. For conv layers `fan_in` is
/// `kernel * kernel * in_channels` in `(ky, kx, c)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub outputs: usize,
    pub fan_in: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(outputs: usize, fan_in: usize) -> Self {
        Self {
            outputs,
            fan_in,
            weight: vec![0.0; outputs * fan_in],
            bias: vec![0.0; outputs],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The block as an `outputs x (fan_in + 1)` matrix with the bias as last column.
    pub fn to_homogeneous(&self) -> Vec<f64> {
        let cols = self.fan_in + 1;
        let mut out = vec![0.0; self.outputs * cols];
        for o in 0..self.outputs {
            out[o * cols..o * cols + self.fan_in]
                .copy_from_slice(&self.weight[o * self.fan_in..(o + 1) * self.fan_in]);
            out[o * cols + self.fan_in] = self.bias[o];
        }
        out
    }

    /// Inverse of [`ParamBlock::to_homogeneous`].
    pub fn from_homogeneous(outputs: usize, fan_in: usize, m: &[f64]) -> Self {
        let cols = fan_in + 1;
        let mut block = Self::zeros(outputs, fan_in);
        for o in 0..outputs {
            block.weight[o * fan_in..(o + 1) * fan_in]
                .copy_from_slice(&m[o * cols..o * cols + fan_in]);
            block.bias[o] = m[o * cols + fan_in];
        }
        block
    }
}

/// The full parameter vector, organised per layer.
///
/// The flat layout is block by block, each block's weights then its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    blocks: Vec<ParamBlock>,
}

/// Gradients share the parameter layout.
pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(dims: &[(usize, usize)]) -> Self {
        Self {
            blocks: dims.iter().map(|&(o, f)| ParamBlock::zeros(o, f)).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<ParamBlock>) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            if b.weight.len() != b.outputs * b.fan_in || b.bias.len() != b.outputs {
                return Err(Error::Dimension {
                    layer: i,
                    message: "parameter block lengths disagree with its dimensions".into(),
                });
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| (b.outputs, b.fan_in)).collect()
    }

    /// Total dimension `p`.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(ParamBlock::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.blocks
            .iter()
            .flat_map(|b| b.weight.iter().chain(b.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.weight.iter_mut().chain(b.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Builds a vector with `template`'s layout from flat values.
    pub fn from_flat(template: &Self, values: &[f64]) -> Result<Self> {
        if values.len() != template.len() {
            return Err(Error::InvalidArgument(format!(
                "flat vector has {} values, layout needs {}",
                values.len(),
                template.len()
            )));
        }
        let mut out = template.zeros_like();
        for (dst, src) in out.iter_mut().zip(values) {
            *dst = *src;
        }
        Ok(out)
    }

    /// Value at flat index `i`.
    pub fn get(&self, mut i: usize) -> Option<f64> {
        for b in &self.blocks {
            if i < b.weight.len() {
                return Some(b.weight[i]);
            }
            i -= b.weight.len();
            if i < b.bias.len() {
                return Some(b.bias[i]);
            }
            i -= b.bias.len();
        }
        None
    }

    pub fn get_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for b in &mut self.blocks {
            if i < b.weight.len() {
                return Some(&mut b.weight[i]);
            }
            i -= b.weight.len();
            if i < b.bias.len() {
                return Some(&mut b.bias[i]);
            }
            i -= b.bias.len();
        }
        None
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_layout_is_weights_then_bias_per_block() {
        let mut p = NetworkParams::zeros(&[(2, 1), (1, 2)]);
        for (i, v) in p.iter_mut().enumerate() {
            *v = i as f64;
        }
        assert_eq!(p.blocks()[0].weight, vec![0.0, 1.0]);
        assert_eq!(p.blocks()[0].bias, vec![2.0, 3.0]);
        assert_eq!(p.blocks()[1].weight, vec![4.0, 5.0]);
        assert_eq!(p.get(6), Some(6.0));
        assert_eq!(p.get(7), None);
        let q = NetworkParams::from_flat(&p, &p.to_flat()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn homogeneous_round_trip() {
        let b = ParamBlock {
            outputs: 2,
            fan_in: 3,
            weight: vec![1., 2., 3., 4., 5., 6.],
            bias: vec![7., 8.],
        };
        let h = b.to_homogeneous();
        assert_eq!(h, vec![1., 2., 3., 7., 4., 5., 6., 8.]);
        assert_eq!(ParamBlock::from_homogeneous(2, 3, &h), b);
    }
}
