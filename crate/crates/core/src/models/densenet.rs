use super::{Architecture, DenseBlock, InputSpec, LayerKind, LayerSpec, ModelGraph, Segment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetConfig {
    pub in_channels: usize,
    pub input_hw: usize,
    pub growth_rate: usize,
    pub stem_channels: usize,
    pub block_sizes: Vec<usize>,
    /// Fraction of channels kept by each transition.
    pub compression: f64,
    /// Bottleneck width as a multiple of the growth rate.
    pub bottleneck_width: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig {
            in_channels: 3,
            input_hw: 224,
            growth_rate: 32,
            stem_channels: 64,
            block_sizes: vec![6, 12, 24, 16],
            compression: 0.5,
            bottleneck_width: 4,
            classes: 2,
            seed: 0,
        }
    }
}

/// The 121-layer configuration: k = 32, 64 stem channels, blocks of 6/12/24/16.
pub fn build_densenet121(seed: u64) -> Result<ModelGraph> {
    build_densenet(&DenseNetConfig {
        seed,
        ..DenseNetConfig::default()
    })
}

pub fn build_densenet(config: &DenseNetConfig) -> Result<ModelGraph> {
    let k = config.growth_rate;
    if k == 0 || config.stem_channels == 0 || config.bottleneck_width == 0 || config.in_channels == 0 {
        return Err(Error::invalid(
            "growth rate, widths and channel counts must be positive",
        ));
    }
    if !(config.compression > 0.0 && config.compression <= 1.0) {
        return Err(Error::invalid(format!(
            "compression must lie in (0, 1], got {}",
            config.compression
        )));
    }
    if config.block_sizes.is_empty() || config.block_sizes.contains(&0) {
        return Err(Error::invalid("every dense block needs at least one layer"));
    }
    if config.classes < 2 {
        return Err(Error::invalid("at least two classes are required"));
    }

    let mut segments = Vec::new();
    segments.push(Segment::Sequential(vec![
        LayerSpec::conv("stem.conv", config.in_channels, config.stem_channels, 7, 2, 3, false),
        LayerSpec::bn("stem.bn", config.stem_channels),
        LayerSpec::relu("stem.relu"),
        LayerSpec::new(
            "stem.pool",
            LayerKind::MaxPool {
                kernel: 3,
                stride: 2,
                padding: 1,
            },
        ),
    ]));

    let mut channels = config.stem_channels;
    let mut hw = conv_extent(config.input_hw, 7, 2, 3).and_then(|h| conv_extent(h, 3, 2, 1));
    let n_blocks = config.block_sizes.len();
    for (bi, &size) in config.block_sizes.iter().enumerate() {
        let b = bi + 1;
        let width = config.bottleneck_width * k;
        let layers = (0..size)
            .map(|j| {
                let cin = channels + j * k;
                let p = format!("block{b}.layer{}", j + 1);
                vec![
                    LayerSpec::bn(format!("{p}.bn1"), cin),
                    LayerSpec::relu(format!("{p}.relu1")),
                    LayerSpec::conv(format!("{p}.conv1"), cin, width, 1, 1, 0, false),
                    LayerSpec::bn(format!("{p}.bn2"), width),
                    LayerSpec::relu(format!("{p}.relu2")),
                    LayerSpec::conv(format!("{p}.conv2"), width, k, 3, 1, 1, false),
                ]
            })
            .collect();
        let block = DenseBlock {
            name: format!("block{b}"),
            in_channels: channels,
            growth_rate: k,
            layers,
        };
        channels = block.out_channels();
        segments.push(Segment::Dense(block));

        if b < n_blocks {
            let out = ((channels as f64 * config.compression).floor() as usize).max(1);
            let t = format!("trans{b}");
            segments.push(Segment::Sequential(vec![
                LayerSpec::bn(format!("{t}.bn"), channels),
                LayerSpec::relu(format!("{t}.relu")),
                LayerSpec::conv(format!("{t}.conv"), channels, out, 1, 1, 0, false),
                LayerSpec::new(format!("{t}.pool"), LayerKind::AvgPool { kernel: 2, stride: 2 }),
            ]));
            channels = out;
            hw = hw.map(|h| h / 2).filter(|&h| h > 0);
        }
    }
    if hw.is_none() {
        return Err(Error::invalid(format!(
            "input {0}×{0} is too small for {n_blocks} dense blocks",
            config.input_hw
        )));
    }
    segments.push(Segment::Sequential(vec![
        LayerSpec::bn("final.bn", channels),
        LayerSpec::relu("final.relu"),
        LayerSpec::new("gap", LayerKind::GlobalAvgPool),
        LayerSpec::linear("fc", channels, config.classes),
    ]));

    ModelGraph::new(
        Architecture::DenseNet(config.clone()),
        InputSpec {
            channels: config.in_channels,
            height: config.input_hw,
            width: config.input_hw,
        },
        segments,
        config.seed,
    )
}

fn conv_extent(h: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    (h + 2 * p).checked_sub(k).map(|v| v / s + 1)
}
