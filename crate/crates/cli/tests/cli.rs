mod common;

use std::collections::BTreeMap;
use std::fs;

use common::{field, radnet, s, stderr, stdout, write_intensity, write_planted, write_textures};
use radnet::data::InMemoryDataset;
use radnet::data::{read_image, synthetic, DatasetManifest, Split};
use radnet::gradcam::mass_fraction;
use radnet::metrics::auc_pair_oracle;
use radnet::models::{build_baseline_cnn_seeded, BaselineCnnConfig};
use radnet::persistence::{self, Checkpoint};
use radnet::training::{evaluate, preprocess_for};
use radnet::Tensor;

fn split_dir(root: &std::path::Path, manifest: &std::path::Path, seed: &str) {
    let o = radnet(&["split", "--input", s(root), "--out", s(manifest), "--seed", seed]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn train(
    manifest: &std::path::Path,
    out: &std::path::Path,
    metrics: &std::path::Path,
    epochs: &str,
    extra: &[&str],
) -> std::process::Output {
    let mut args = vec![
        "train",
        "--model",
        "baseline",
        "--manifest",
        s(manifest),
        "--epochs",
        epochs,
        "--seed",
        "3",
        "--out",
        s(out),
        "--metrics",
        s(metrics),
    ];
    args.extend_from_slice(extra);
    radnet(&args)
}

/// Baseline whose only path is channel 0 copying the input center tap; it
/// separates dark from bright constant images perfectly.
fn perfect_checkpoint(path: &std::path::Path) {
    let mut m = build_baseline_cnn_seeded(&BaselineCnnConfig::default(), 0).unwrap();
    let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let shape = m.params().get(&name).unwrap().value.shape().to_vec();
        let mut t = Tensor::zeros(shape.clone()).unwrap();
        if name.ends_with("conv.weight") {
            // out 0, in 0, centre of the 3×3 kernel
            t.data_mut()[4] = 1.0;
        }
        if name == "fc.weight" {
            t.data_mut()[shape[1]] = 10.0;
        }
        if name == "fc.bias" {
            t.data_mut()[0] = 4.0;
        }
        m.params_mut().set_value(&name, t).unwrap();
    }
    persistence::save(&m, path, &BTreeMap::new()).unwrap();
}

#[test]
fn split_prints_counts_for_full_corpus_size() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let img = Tensor::full([1, 2, 2], 0.5).unwrap();
    for (label, n) in [("NORMAL", 1583), ("PNEUMONIA", 4241)] {
        fs::create_dir_all(root.join(label)).unwrap();
        for i in 0..n {
            radnet::data::write_pnm(&root.join(label).join(format!("{i}.pgm")), &img).unwrap();
        }
    }
    let m1 = dir.path().join("m1.csv");
    let m2 = dir.path().join("m2.csv");
    let o = radnet(&["split", "--input", s(&root), "--out", s(&m1), "--seed", "4"]);
    assert!(o.status.success());
    assert!(
        stdout(&o).lines().any(|l| l == "train=5125 val=466 test=233"),
        "{}",
        stdout(&o)
    );
    radnet(&["split", "--input", s(&root), "--out", s(&m2), "--seed", "4"]);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let o = radnet(&["split", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(radnet(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(radnet(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn custom_ratios_are_comma_separated() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_textures(&root, 100, 4);
    let manifest = dir.path().join("m.csv");
    let o = radnet(&["split", "--input", s(&root), "--out", s(&manifest), "--ratios", "0.6,0.2,0.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "train=60 val=20 test=20"), "{}", stdout(&o));
    for bad in ["0.6,0.4", "0.6,x,0.2", "0.6,0.2,0.1,0.1"] {
        let o = radnet(&["split", "--input", s(&root), "--out", s(&manifest), "--ratios", bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn runtime_errors_exit_one() {
    let o = radnet(&["split", "--input", "/nonexistent/dir", "--out", "/tmp/never.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error:"));
}

#[test]
fn one_epoch_writes_one_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_textures(&root, 40, 1);
    let manifest = dir.path().join("m.csv");
    split_dir(&root, &manifest, "1");
    let (model, metrics) = (dir.path().join("m.nnck"), dir.path().join("metrics.csv"));
    let o = train(&manifest, &model, &metrics, "1", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(lines.len(), 2);
    assert!(lines[1]
        .split(',')
        .skip(1)
        .all(|v| v.split('.').nth(1).is_some_and(|d| d.len() == 6)));
    assert_eq!(&fs::read(&model).unwrap()[..4], b"NNCK");
}

#[test]
fn non_finite_loss_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_textures(&root, 40, 2);
    let manifest = dir.path().join("m.csv");
    split_dir(&root, &manifest, "1");
    let o = train(
        &manifest,
        &dir.path().join("m.nnck"),
        &dir.path().join("x.csv"),
        "3",
        &["--lr", "1e38", "--optimizer", "adam", "--batch", "4"],
    );
    assert_eq!(o.status.code(), Some(1), "{}\n{}", stdout(&o), stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("epoch") && err.contains("batch"), "{err}");
}

#[test]
fn separable_set_reaches_high_val_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_textures(&root, 300, 3);
    let manifest = dir.path().join("m.csv");
    split_dir(&root, &manifest, "2");
    let metrics = dir.path().join("metrics.csv");
    let o = train(&manifest, &dir.path().join("m.nnck"), &metrics, "10", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&metrics).unwrap();
    let last = text.lines().last().unwrap();
    let val_acc: f64 = last.split(',').nth(4).unwrap().parse().unwrap();
    assert!(val_acc >= 0.95, "{text}");
}

#[test]
fn eval_of_perfect_model() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_intensity(&root, 100);
    let manifest = dir.path().join("m.csv");
    split_dir(&root, &manifest, "0");
    let ckpt = dir.path().join("p.nnck");
    perfect_checkpoint(&ckpt);
    let (roc, cm, dump) = (
        dir.path().join("roc.csv"),
        dir.path().join("cm.csv"),
        dir.path().join("mis"),
    );
    let o = radnet(&[
        "eval",
        "--model-file",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--split",
        "test",
        "--roc",
        s(&roc),
        "--confusion",
        s(&cm),
        "--dump-misclassified",
        s(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("AUC=1.000000 band=excellent"), "{}", stdout(&o));
    let cm_text = fs::read_to_string(&cm).unwrap();
    assert!(cm_text.contains("normalized,NORMAL,1.000000,0.000000"));
    assert!(cm_text.contains("normalized,PNEUMONIA,0.000000,1.000000"));
    assert_eq!(fs::read_dir(&dump).unwrap().count(), 0);
    assert!(fs::read_to_string(&roc)
        .unwrap()
        .starts_with("fpr,tpr\n0.000000,0.000000\n"));
}

#[test]
fn eval_matches_offline_oracle_and_dumps_misclassified() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_textures(&root, 200, 5);
    let manifest = dir.path().join("m.csv");
    split_dir(&root, &manifest, "3");
    let ckpt = dir.path().join("m.nnck");
    let o = train(
        &manifest,
        &ckpt,
        &dir.path().join("metrics.csv"),
        "1",
        &["--lr", "1e-4"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = dir.path().join("mis");
    let o = radnet(&[
        "eval",
        "--model-file",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--split",
        "train",
        "--dump-misclassified",
        s(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let auc: f64 = field(&out, "AUC").unwrap().parse().unwrap();

    let model = Checkpoint::read(&ckpt).unwrap().into_model().unwrap();
    let pre = preprocess_for(&model);
    let m = DatasetManifest::read_csv(&manifest).unwrap();
    let data = InMemoryDataset::from_manifest(&m, Split::Train, &pre).unwrap();
    let e = evaluate(&model, &data, &pre.norm, 7).unwrap();
    let oracle = auc_pair_oracle(&e.scores, &e.labels).unwrap();
    assert!((auc - oracle).abs() < 1e-6 + 1e-9, "{auc} vs {oracle}");

    let mut expected: Vec<String> = e
        .labels
        .iter()
        .zip(&e.predictions)
        .enumerate()
        .filter(|(_, (t, p))| t != p)
        .map(|(i, (&t, &p))| {
            let name = |l: usize| if l == 0 { "NORMAL" } else { "PNEUMONIA" };
            format!("{i:05}_true-{}_pred-{}.png", name(t), name(p))
        })
        .collect();
    let mut found: Vec<String> = fs::read_dir(&dump)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    expected.sort();
    found.sort();
    assert_eq!(found, expected);
    assert_eq!(field(&out, "misclassified").unwrap(), expected.len().to_string());
}

#[test]
fn explain_writes_overlay_and_lists_layers_on_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("p.nnck");
    perfect_checkpoint(&ckpt);
    let img = dir.path().join("x.png");
    radnet::data::write_png(&img, &Tensor::from_fn([1, 64, 48], |i| (i % 7) as f32 / 7.0).unwrap()).unwrap();
    let out = dir.path().join("heat.png");
    let o = radnet(&[
        "explain",
        "--model-file",
        s(&ckpt),
        "--image",
        s(&img),
        "--class",
        "PNEUMONIA",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rgb = read_image(&out).unwrap();
    assert_eq!(rgb.shape(), &[3, 32, 32]);

    let o = radnet(&[
        "explain",
        "--model-file",
        s(&ckpt),
        "--image",
        s(&img),
        "--class",
        "NORMAL",
        "--layer",
        "nope",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("block3.relu"), "{}", stderr(&o));
}

#[test]
fn explain_heatmap_localizes_planted_signal() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_planted(&root, 500, 150, 8);
    let held_out = synthetic::write_dataset(
        &dir.path().join("held_out"),
        &synthetic::planted_quadrant(20, 32, 99),
        "png",
    )
    .unwrap();
    let manifest = dir.path().join("m.csv");
    split_dir(&root, &manifest, "5");
    let ckpt = dir.path().join("m.nnck");
    let o = train(
        &manifest,
        &ckpt,
        &dir.path().join("metrics.csv"),
        "10",
        &["--no-augment"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (mut good, mut total) = (0, 0);
    for (i, p) in held_out.iter().enumerate() {
        let class = if i % 2 == 0 { "NORMAL" } else { "PNEUMONIA" };
        let heat = dir.path().join(format!("h{i}.png"));
        let o = radnet(&[
            "explain",
            "--model-file",
            s(&ckpt),
            "--image",
            s(p),
            "--class",
            class,
            "--out",
            s(&dir.path().join("o.png")),
            "--heatmap-out",
            s(&heat),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        if field(&stdout(&o), "predicted") != Some(class) {
            continue;
        }
        total += 1;
        let map = read_image(&heat).unwrap().reshape([32, 32]).unwrap();
        if mass_fraction(&map, 0..16, 0..16).unwrap() >= 0.6 {
            good += 1;
        }
    }
    assert!(total >= 10, "only {total} correct");
    assert!(good as f64 >= 0.8 * total as f64, "{good}/{total}");
}

#[test]
fn gradcheck_and_selftest_pass() {
    let o = radnet(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("failed=0"));
    let o = radnet(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn injected_fault_fails_and_is_named() {
    for check in ["conv-oracle", "layer-count", "split-count"] {
        let o = radnet(&["selftest", "--inject-fault", check]);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains(check));
        assert!(stdout(&o).contains(&format!("check={check} status=FAIL")));
    }
}
