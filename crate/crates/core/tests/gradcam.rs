use radnet::data::read_image;
use radnet::gradcam::{gradcam, mass_fraction, overlay, upsample_bilinear, write_heatmap_png};
use radnet::models::{
    build_baseline_cnn_seeded, BaselineCnnConfig, InputSpec, LayerKind, LayerSpec, ModelGraph, Segment,
};
use radnet::{Error, Tensor};

/// 1×1 conv (weight 1) → global average → fc whose class-0 row is `w0`.
fn pooled_model(w0: f32) -> ModelGraph {
    let input = InputSpec {
        channels: 1,
        height: 5,
        width: 5,
    };
    let mut m = ModelGraph::custom(
        input,
        vec![Segment::Sequential(vec![
            LayerSpec::conv("conv", 1, 1, 1, 1, 0, false),
            LayerSpec::new("gap", LayerKind::GlobalAvgPool),
            LayerSpec::linear("fc", 1, 2),
        ])],
        0,
    )
    .unwrap();
    let p = m.params_mut();
    p.set_value("conv.weight", Tensor::full([1, 1, 1, 1], 1.0).unwrap())
        .unwrap();
    p.set_value("fc.weight", Tensor::new([2, 1], vec![w0, 0.0]).unwrap())
        .unwrap();
    m
}

fn signed_input() -> Tensor {
    Tensor::from_fn([1, 1, 5, 5], |i| (i as f32 * 0.7).sin()).unwrap()
}

fn normalized_relu(values: &[f32]) -> Vec<f32> {
    let max = values.iter().fold(0.0f32, |m, &v| m.max(v));
    values.iter().map(|&v| v.max(0.0) / max).collect()
}

#[test]
fn pooled_identity_logit_gives_normalized_relu_of_feature_map() {
    let x = signed_input();
    let h = gradcam(&pooled_model(1.0), &x, 0, "conv").unwrap();
    let expect = normalized_relu(x.data());
    for (a, b) in h.values.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-6);
    }
    assert_eq!(h.values.data().iter().cloned().fold(0.0, f32::max), 1.0);
}

#[test]
fn single_channel_uses_sign_of_mean_gradient() {
    let x = signed_input();
    let h = gradcam(&pooled_model(-2.0), &x, 0, "conv").unwrap();
    let flipped: Vec<f32> = x.data().iter().map(|v| -v).collect();
    for (a, b) in h.values.data().iter().zip(normalized_relu(&flipped)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn zero_gradient_gives_zero_map() {
    let h = gradcam(&pooled_model(0.0), &signed_input(), 0, "conv").unwrap();
    assert!(h.values.data().iter().all(|&v| v == 0.0));
    let z = gradcam(&pooled_model(1.0), &Tensor::zeros([1, 1, 5, 5]).unwrap(), 0, "conv").unwrap();
    assert!(z.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn rescaled_logit_gives_same_map() {
    let m = build_baseline_cnn_seeded(&BaselineCnnConfig::default(), 8).unwrap();
    let mut doubled = m.clone();
    for name in ["fc.weight", "fc.bias"] {
        let v = doubled.params().get(name).unwrap().value.map(|x| 2.0 * x);
        doubled.params_mut().set_value(name, v).unwrap();
    }
    let x = Tensor::from_fn([1, 1, 32, 32], |i| ((i * 17) % 29) as f32 / 29.0 - 0.5).unwrap();
    for class in 0..2 {
        let a = gradcam(&m, &x, class, "block3.relu").unwrap();
        let b = gradcam(&doubled, &x, class, "block3.relu").unwrap();
        assert_eq!(a.values.shape(), &[8, 8]);
        assert!(a.values.max_abs_diff(&b.values).unwrap() < 1e-5);
        assert!(a.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn rejects_batches_and_unknown_layers() {
    let m = pooled_model(1.0);
    let two = Tensor::zeros([2, 1, 5, 5]).unwrap();
    assert!(gradcam(&m, &two, 0, "conv").is_err());
    assert!(matches!(
        gradcam(&m, &signed_input(), 0, "nope"),
        Err(Error::UnknownLayer { .. })
    ));
    assert!(gradcam(&m, &signed_input(), 0, "fc").is_err());
}

#[test]
fn overlay_and_heatmap_files() {
    let dir = tempfile::tempdir().unwrap();
    let heat = Tensor::from_fn([4, 4], |i| if i % 4 < 2 && i < 8 { 1.0 } else { 0.0 }).unwrap();
    assert!((mass_fraction(&heat, 0..2, 0..2).unwrap() - 1.0).abs() < 1e-12);
    let up = upsample_bilinear(&heat, 16, 16).unwrap();
    let img = Tensor::full([1, 16, 16], 0.5).unwrap();
    let rgb = overlay(&up, &img, 0.4).unwrap();
    assert_eq!(rgb.shape(), &[3, 16, 16]);
    let p = dir.path().join("heat.png");
    write_heatmap_png(&p, &up).unwrap();
    let back = read_image(&p).unwrap();
    assert_eq!(back.shape(), &[1, 16, 16]);
    assert!(back
        .data()
        .iter()
        .zip(up.data())
        .all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
}
