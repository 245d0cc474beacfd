use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;

use radnet::autodiff::gradcheck;
use radnet::data::{
    load_dataset, read_image, split, write_png, AugmentSpec, DatasetManifest, InMemoryDataset, Label, Split,
    SplitRatios,
};
use radnet::gradcam::{gradcam, overlay, upsample_bilinear, write_heatmap_png};
use radnet::metrics::{classify_auc_band, confusion, roc};
use radnet::models::{
    build_baseline_cnn_seeded, build_densenet, BaselineCnnConfig, DenseNetConfig, ModelGraph, ModelKind,
};
use radnet::persistence::{self, Checkpoint};
use radnet::selftest::{self, Check};
use radnet::training::{evaluate, fit, preprocess_for, OptimizerKind, TrainConfig};
use radnet::{Error, Result};

use crate::args::{
    ClassChoice, Command, EvalArgs, ExplainArgs, GradcheckArgs, ModelChoice, OptimizerChoice, SelftestArgs, SplitArgs,
    SplitChoice, TrainArgs,
};

pub fn run(command: Command) -> Result<ExitCode> {
    eprintln!("config: {command:?}");
    match command {
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn cmd_split(a: SplitArgs) -> Result<ExitCode> {
    let ratios = SplitRatios {
        train: a.ratios[0],
        val: a.ratios[1],
        test: a.ratios[2],
    };
    let manifest = load_dataset(&a.input)?;
    let assigned = split(&manifest, ratios, a.seed)?;
    assigned.write_csv(&a.out)?;
    println!(
        "train={} val={} test={}",
        assigned.count(Split::Train),
        assigned.count(Split::Val),
        assigned.count(Split::Test)
    );
    println!("rows={} skipped={} seed={}", assigned.len(), manifest.skipped, a.seed);
    Ok(ExitCode::SUCCESS)
}

fn build_model(a: &TrainArgs) -> Result<ModelGraph> {
    match a.model {
        ModelChoice::Baseline => {
            let cfg = BaselineCnnConfig {
                in_channels: a.channels.unwrap_or(1),
                input_hw: a.input_size.unwrap_or(32),
                ..BaselineCnnConfig::default()
            };
            build_baseline_cnn_seeded(&cfg, a.seed)
        }
        ModelChoice::Densenet121 => build_densenet(&DenseNetConfig {
            in_channels: a.channels.unwrap_or(3),
            input_hw: a.input_size.unwrap_or(224),
            seed: a.seed,
            ..DenseNetConfig::default()
        }),
    }
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let kind = match a.model {
        ModelChoice::Baseline => ModelKind::Baseline,
        ModelChoice::Densenet121 => ModelKind::DenseNet,
    };
    let defaults = TrainConfig::for_model(kind);
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        optimizer: match a.optimizer {
            OptimizerChoice::Adam => OptimizerKind::adam(),
            OptimizerChoice::Sgd => OptimizerKind::Sgd { momentum: a.momentum },
        },
        seed: a.seed,
        augment: (!a.no_augment).then(|| AugmentSpec::uniform(a.augment_delta)),
        augment_once: a.augment_once,
        ..defaults
    };
    config.validate()?;
    let mut model = build_model(&a)?;
    let manifest = DatasetManifest::read_csv(&a.manifest)?;
    let pre = preprocess_for(&model);
    let train_set = InMemoryDataset::from_manifest(&manifest, Split::Train, &pre)?;
    let val_set = InMemoryDataset::from_manifest(&manifest, Split::Val, &pre)?;
    if val_set.is_empty() {
        return Err(Error::Dataset("manifest has no validation rows".into()));
    }
    log::info!(
        "training {kind} ({} parameters) on {} samples, validating on {}",
        model.param_count(),
        train_set.len(),
        val_set.len()
    );
    let history = fit(&mut model, &train_set, &val_set, &pre.norm, &config)?;
    history.write_csv(&a.metrics)?;

    let last = *history.last().expect("at least one epoch");
    let mut meta = BTreeMap::new();
    for (k, v) in [
        ("train.seed", a.seed.to_string()),
        ("train.epochs", history.records.len().to_string()),
        ("train.batch", config.batch_size.to_string()),
        ("train.lr", config.learning_rate.to_string()),
        ("train.optimizer", config.optimizer.to_string()),
        (
            "train.augment",
            match (&config.augment, config.augment_once) {
                (None, _) => "off".to_string(),
                (Some(s), once) => format!(
                    "delta={} {}",
                    s.brightness_delta,
                    if once { "once" } else { "per-epoch" }
                ),
            },
        ),
        ("train.val_acc", format!("{:.6}", last.val_accuracy)),
    ] {
        meta.insert(k.to_string(), v);
    }
    persistence::save(&model, &a.out, &meta)?;
    println!(
        "epochs={} train_loss={:.6} train_acc={:.6} val_loss={:.6} val_acc={:.6}",
        last.epoch, last.train_loss, last.train_accuracy, last.val_loss, last.val_accuracy
    );
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &std::path::Path) -> Result<ModelGraph> {
    Checkpoint::read(path)?.into_model()
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let model = load_model(&a.model_file)?;
    let manifest = DatasetManifest::read_csv(&a.manifest)?;
    let split = match a.split {
        SplitChoice::Train => Split::Train,
        SplitChoice::Val => Split::Val,
        SplitChoice::Test => Split::Test,
    };
    let pre = preprocess_for(&model);
    let data = InMemoryDataset::from_manifest(&manifest, split, &pre)?;
    let e = evaluate(&model, &data, &pre.norm, a.batch)?;
    let cm = confusion(&e.labels, &e.predictions)?;
    let curve = roc(&e.scores, &e.labels)?;
    let auc = curve.auc();
    if let Some(p) = &a.roc {
        curve.write_csv(p)?;
    }
    if let Some(p) = &a.confusion {
        cm.write_csv(p)?;
    }
    if let Some(dir) = &a.dump_misclassified {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (i, (&t, &p)) in e.labels.iter().zip(&e.predictions).enumerate() {
            if t != p {
                let name = format!(
                    "{i:05}_true-{}_pred-{}.png",
                    Label::from_index(t).expect("binary label"),
                    Label::from_index(p).expect("binary label")
                );
                write_png(&dir.join(name), data.image(i))?;
            }
        }
    }
    eprint!("{cm}");
    println!(
        "split={} n={} accuracy={:.6} loss={:.6} misclassified={} AUC={auc:.6} band={}",
        split,
        data.len(),
        e.accuracy,
        e.loss,
        cm.counts[0][1] + cm.counts[1][0],
        classify_auc_band(auc)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_explain(a: ExplainArgs) -> Result<ExitCode> {
    let model = load_model(&a.model_file)?;
    let pre = preprocess_for(&model);
    let raw = read_image(&a.image)?;
    let prepared = pre.prepare(&raw)?;
    let input = radnet::data::normalize(&prepared, &pre.norm)?;
    let shape = input.shape().to_vec();
    let batch = input.reshape([1, shape[0], shape[1], shape[2]])?;
    let layer = a.layer.unwrap_or_else(|| model.default_cam_layer());
    let class = match a.class {
        ClassChoice::Normal => Label::Normal,
        ClassChoice::Pneumonia => Label::Pneumonia,
    };
    let heat = gradcam(&model, &batch, class.index(), &layer)?;
    let up = upsample_bilinear(&heat.values, pre.height, pre.width)?;
    let rgb = overlay(&up, &prepared, a.alpha)?;
    write_png(&a.out, &rgb)?;
    if let Some(p) = &a.heatmap_out {
        write_heatmap_png(p, &up)?;
    }
    let logits = model.forward(&batch, radnet::ops::Mode::Eval)?;
    let probs = radnet::ops::softmax(&logits)?;
    let predicted = if probs.data()[1] > probs.data()[0] {
        Label::Pneumonia
    } else {
        Label::Normal
    };
    println!(
        "layer={layer} class={class} predicted={predicted} p_pneumonia={:.6} width={} height={}",
        probs.data()[1],
        pre.width,
        pre.height
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let results = gradcheck::run_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!(
            "op={} rel_error={:.3e} tolerance={:.0e} status={status}",
            r.op, r.max_rel_error, r.tolerance
        );
    }
    println!("gradcheck passed={} failed={failed}", results.len() - failed);
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_selftest(a: SelftestArgs) -> Result<ExitCode> {
    let fault = a.inject_fault.as_deref().map(str::parse::<Check>).transpose()?;
    let outcomes = selftest::run(&Check::ALL, fault)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.passed { "pass" } else { "FAIL" };
        println!("check={} status={status} {}", o.check, o.detail);
        if !o.passed {
            failed.push(o.check.name());
        }
    }
    if failed.is_empty() {
        println!("selftest passed={}", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: failing checks: {}", failed.join(", "));
        println!(
            "selftest passed={} failed={}",
            outcomes.len() - failed.len(),
            failed.join(",")
        );
        Ok(ExitCode::from(1))
    }
}
