use super::{Architecture, InputSpec, LayerKind, LayerSpec, ModelGraph, Segment};
use crate::error::{Error, Result};

/// Stacked Conv(3×3, pad 1) → ReLU → MaxPool(2×2) blocks and one FC layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineCnnConfig {
    pub in_channels: usize,
    pub input_hw: usize,
    pub filters: Vec<usize>,
    pub classes: usize,
}

impl Default for BaselineCnnConfig {
    fn default() -> Self {
        BaselineCnnConfig {
            in_channels: 1,
            input_hw: 32,
            filters: vec![16, 32, 64],
            classes: 2,
        }
    }
}

impl BaselineCnnConfig {
    pub fn with_in_channels(mut self, channels: usize) -> Self {
        self.in_channels = channels;
        self
    }
}

pub fn build_baseline_cnn(config: &BaselineCnnConfig) -> Result<ModelGraph> {
    build_baseline_cnn_seeded(config, 0)
}

pub fn build_baseline_cnn_seeded(config: &BaselineCnnConfig, seed: u64) -> Result<ModelGraph> {
    if config.filters.is_empty() {
        return Err(Error::invalid("baseline CNN needs at least one block"));
    }
    if config.in_channels == 0 || config.classes < 2 || config.filters.contains(&0) {
        return Err(Error::invalid(
            "channel, filter and class counts must be positive (classes ≥ 2)",
        ));
    }
    let mut layers = Vec::new();
    let mut channels = config.in_channels;
    let mut hw = config.input_hw;
    for (i, &f) in config.filters.iter().enumerate() {
        let b = i + 1;
        layers.push(LayerSpec::conv(format!("block{b}.conv"), channels, f, 3, 1, 1, true));
        layers.push(LayerSpec::relu(format!("block{b}.relu")));
        layers.push(LayerSpec::new(
            format!("block{b}.pool"),
            LayerKind::MaxPool {
                kernel: 2,
                stride: 2,
                padding: 0,
            },
        ));
        channels = f;
        hw /= 2;
        if hw == 0 {
            return Err(Error::invalid(format!(
                "input {0}×{0} collapses to zero size after {b} pooled blocks",
                config.input_hw
            )));
        }
    }
    layers.push(LayerSpec::linear("fc", channels * hw * hw, config.classes));
    ModelGraph::new(
        Architecture::Baseline(config.clone()),
        InputSpec {
            channels: config.in_channels,
            height: config.input_hw,
            width: config.input_hw,
        },
        vec![Segment::Sequential(layers)],
        seed,
    )
}
