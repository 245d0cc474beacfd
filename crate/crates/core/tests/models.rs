use radnet::models::{
    build_baseline_cnn, build_densenet, build_densenet121, BaselineCnnConfig, DenseNetConfig, ModelGraph, Wiring,
};
use radnet::ops::Mode;
use radnet::{Error, Tensor};

fn small_densenet(blocks: Vec<usize>) -> ModelGraph {
    build_densenet(&DenseNetConfig {
        in_channels: 1,
        input_hw: 32,
        growth_rate: 4,
        stem_channels: 8,
        block_sizes: blocks,
        seed: 3,
        ..DenseNetConfig::default()
    })
    .unwrap()
}

fn ramp(shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 37 % 101) as f32) / 101.0).unwrap()
}

#[test]
fn baseline_default_forward_shape() {
    let m = build_baseline_cnn(&BaselineCnnConfig::default()).unwrap();
    let y = m.forward(&ramp([1, 1, 32, 32]), Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[1, 2]);
}

#[test]
fn baseline_accepts_color_input() {
    let m = build_baseline_cnn(&BaselineCnnConfig::default().with_in_channels(3)).unwrap();
    let y = m.forward(&ramp([2, 3, 32, 32]), Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[2, 2]);
    let err = m.forward(&ramp([1, 1, 32, 32]), Mode::Eval).unwrap_err();
    assert!(err.to_string().contains("expected N×3×32×32"), "{err}");
}

#[test]
fn single_block_parameter_count_matches_closed_form() {
    let cfg = BaselineCnnConfig {
        filters: vec![4],
        ..BaselineCnnConfig::default()
    };
    let m = build_baseline_cnn(&cfg).unwrap();
    let closed_form = 4 * (3 * 3) + 4 + 2 * (4 * 16 * 16) + 2;
    assert_eq!(m.param_count(), closed_form);
    let enumerated: usize = m
        .params()
        .iter()
        .map(|p| p.value.shape().iter().product::<usize>())
        .sum();
    assert_eq!(enumerated, closed_form);
}

#[test]
fn baseline_rejects_collapsing_input() {
    let cfg = BaselineCnnConfig {
        input_hw: 4,
        filters: vec![2, 2, 2],
        ..BaselineCnnConfig::default()
    };
    assert!(build_baseline_cnn(&cfg).is_err());
    let empty = BaselineCnnConfig {
        filters: vec![],
        ..BaselineCnnConfig::default()
    };
    assert!(build_baseline_cnn(&empty).is_err());
}

#[test]
fn layer_counts() {
    assert_eq!(
        build_baseline_cnn(&BaselineCnnConfig::default())
            .unwrap()
            .count_layers(),
        4
    );
    assert_eq!(small_densenet(vec![1, 1, 1, 1]).count_layers(), 1 + 2 * 4 + 3 + 1);
}

#[test]
fn densenet121_structure() {
    let m = build_densenet121(0).unwrap();
    assert_eq!(m.count_layers(), 121);
    let blocks = m.dense_blocks();
    let outs: Vec<usize> = blocks.iter().map(|b| b.out_channels).collect();
    assert_eq!(outs, vec![256, 512, 1024, 1024]);
    assert_eq!(blocks[0].in_channels + 6 * 32, 256);
    for b in &blocks {
        for (n, &c) in b.layer_in_channels.iter().enumerate() {
            assert_eq!(c, b.in_channels + n * b.growth_rate, "{} layer {n}", b.name);
        }
    }
}

#[test]
fn densenet121_forward_and_tap_shapes() {
    let m = build_densenet121(1).unwrap();
    let x = ramp([1, 3, 224, 224]);
    let tap = m.feature_maps(&x, "block4").unwrap();
    assert_eq!(tap.activation().shape(), &[1, 1024, 7, 7]);
    assert_eq!(tap.logits().shape(), &[1, 2]);
    assert!(tap.logits().all_finite());
}

#[test]
fn eval_forward_is_deterministic() {
    let m = small_densenet(vec![2, 2]);
    let x = ramp([2, 1, 32, 32]);
    let a = m.forward(&x, Mode::Eval).unwrap();
    let b = m.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn zero_input_gives_finite_logits() {
    let m = build_baseline_cnn(&BaselineCnnConfig::default()).unwrap();
    let y = m.forward(&Tensor::zeros([1, 1, 32, 32]).unwrap(), Mode::Eval).unwrap();
    assert!(y.all_finite());
}

#[test]
fn removing_dense_wiring_changes_output() {
    let m = small_densenet(vec![3, 3]);
    let x = ramp([2, 1, 32, 32]);
    let dense = m.forward_with(&x, Mode::Train, Wiring::Dense).unwrap();
    let chain = m.forward_with(&x, Mode::Train, Wiring::ChainOnly).unwrap();
    assert!(dense.max_abs_diff(&chain).unwrap() > 1e-6);
}

#[test]
fn baseline_default_tap() {
    let m = build_baseline_cnn(&BaselineCnnConfig::default()).unwrap();
    assert_eq!(m.default_cam_layer(), "block3.relu");
    let tap = m.feature_maps(&ramp([1, 1, 32, 32]), &m.default_cam_layer()).unwrap();
    assert_eq!(tap.activation().shape(), &[1, 64, 8, 8]);
}

#[test]
fn input_tap_returns_input() {
    let m = build_baseline_cnn(&BaselineCnnConfig::default()).unwrap();
    let x = ramp([1, 1, 32, 32]);
    let tap = m.feature_maps(&x, "input").unwrap();
    assert_eq!(tap.activation().data(), x.data());
    let g = tap.gradient_of_logit(0, 1).unwrap();
    assert_eq!(g.shape(), x.shape());
}

#[test]
fn unknown_layer_lists_available_names() {
    let m = build_baseline_cnn(&BaselineCnnConfig::default()).unwrap();
    match m.feature_maps(&ramp([1, 1, 32, 32]), "nope") {
        Err(Error::UnknownLayer { available, .. }) => {
            assert!(available.iter().any(|n| n == "block2.conv"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn train_mode_does_not_mutate_running_stats() {
    let m = small_densenet(vec![1]);
    let before = m.params().clone();
    m.forward(&ramp([4, 1, 32, 32]), Mode::Train).unwrap();
    assert_eq!(&before, m.params());
}

#[test]
fn arch_metadata_round_trip() {
    let m = small_densenet(vec![2, 1]);
    let rebuilt = ModelGraph::from_arch_metadata(m.kind(), &m.arch_metadata()).unwrap();
    assert_eq!(rebuilt.layer_names(), m.layer_names());
    let b = build_baseline_cnn(&BaselineCnnConfig::default()).unwrap();
    let rb = ModelGraph::from_arch_metadata(b.kind(), &b.arch_metadata()).unwrap();
    assert_eq!(rb.param_count(), b.param_count());
}
