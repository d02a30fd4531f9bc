use super::LaplaceParams;
use crate::neighborhood::Fixed;
use crate::pointcloud::AttributeSpace;

const DECAY: f64 = 0.99;

/// Exponentially weighted mean absolute residual, one per channel.
///
/// Encoder and decoder update it with the same coded values in the same
/// order, so both see identical scales.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineState {
    scale: Vec<f64>,
}

impl BaselineState {
    pub fn new(space: AttributeSpace) -> Self {
        Self { scale: (0..space.channels()).map(|c| space.max_attri(c) as f64 / 16.0).collect() }
    }

    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    /// Parameters for a point predicted as `pred`.
    pub fn predict(&self, pred: &[Fixed], space: AttributeSpace) -> Vec<LaplaceParams> {
        pred.iter()
            .zip(&self.scale)
            .enumerate()
            .map(|(c, (p, &b))| LaplaceParams::quantize(p.to_f64(), b, space, c))
            .collect()
    }

    /// Folds in the coded values of one point.
    pub fn update(&mut self, actual: &[i32], pred: &[Fixed]) {
        for ((s, &x), p) in self.scale.iter_mut().zip(actual).zip(pred) {
            let r = (x as f64 - p.to_f64()).abs();
            *s = (DECAY * *s + (1.0 - DECAY) * r).max(f64::MIN_POSITIVE);
        }
    }
}
