use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd temporal kernel width.
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
}

impl LayerConfig {
    /// Frames produced from `frames` input frames ('same' padding).
    pub fn output_length(&self, frames: usize) -> usize {
        frames.div_ceil(self.temporal_stride)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub n_joints: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerConfig>,
}

impl ModelConfig {
    /// Chains layers of the given widths.
    pub fn from_widths(
        in_channels: usize,
        n_joints: usize,
        n_classes: usize,
        widths: &[usize],
        temporal_kernel: usize,
        strides: &[usize],
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut c = in_channels;
        for (l, &w) in widths.iter().enumerate() {
            layers.push(LayerConfig {
                in_channels: c,
                out_channels: w,
                temporal_kernel,
                temporal_stride: strides.get(l).copied().unwrap_or(1),
            });
            c = w;
        }
        Self {
            in_channels,
            n_joints,
            n_classes,
            layers,
        }
    }

    /// Four layers of widths 8, 8, 16, 16 with a width-3 temporal kernel.
    pub fn toy(in_channels: usize, n_joints: usize, n_classes: usize) -> Self {
        Self::from_widths(in_channels, n_joints, n_classes, &[8, 8, 16, 16], 3, &[])
    }

    /// Ten layers of 64, 64, 64, 64, 128, 128, 128, 256, 256, 256 channels,
    /// temporal kernel 9, halving time at the first 128 and 256 layers.
    pub fn paper(in_channels: usize, n_joints: usize, n_classes: usize) -> Self {
        let widths = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
        let strides = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];
        Self::from_widths(in_channels, n_joints, n_classes, &widths, 9, &strides)
    }

    pub fn preset(name: &str, in_channels: usize, n_joints: usize, n_classes: usize) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy(in_channels, n_joints, n_classes)),
            "paper" => Some(Self::paper(in_channels, n_joints, n_classes)),
            _ => None,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn final_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.out_channels)
    }

    /// Frame counts after each layer for an input of `frames` frames.
    pub fn layer_lengths(&self, frames: usize) -> Vec<usize> {
        let mut t = frames;
        self.layers
            .iter()
            .map(|l| {
                t = l.output_length(t);
                t
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::BadConfig("no layers".into()));
        }
        if self.n_joints == 0 || self.n_classes == 0 || self.in_channels == 0 {
            return Err(ModelError::BadConfig(
                "joints, classes and input channels must be positive".into(),
            ));
        }
        let mut c = self.in_channels;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_channels != c {
                return Err(ModelError::BadConfig(format!(
                    "layer {} expects {} input channels, previous layer gives {c}",
                    l + 1,
                    layer.in_channels
                )));
            }
            if layer.out_channels == 0 {
                return Err(ModelError::BadConfig(format!("layer {} has no output channels", l + 1)));
            }
            if layer.temporal_kernel % 2 == 0 {
                return Err(ModelError::BadConfig(format!(
                    "layer {} temporal kernel {} is not odd",
                    l + 1,
                    layer.temporal_kernel
                )));
            }
            if layer.temporal_stride == 0 {
                return Err(ModelError::BadConfig(format!("layer {} has stride 0", l + 1)));
            }
            c = layer.out_channels;
        }
        Ok(())
    }
}
