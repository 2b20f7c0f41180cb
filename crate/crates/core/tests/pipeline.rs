use signdigit_core::augment::AugmentPolicy;
use signdigit_core::dataset::{load_dataset, stratified_split, SplitSpec};
use signdigit_core::metrics::{confusion, export_report, roc_one_vs_all};
use signdigit_core::model_io::{load_model, save_model};
use signdigit_core::nn::{LayerSpec, NetworkSpec};
use signdigit_core::synthetic::write_glyph_tree;
use signdigit_core::train::{evaluate, fit, predict, TrainConfig};

fn compact_spec() -> NetworkSpec {
    NetworkSpec {
        input: [1, 32, 32],
        layers: vec![
            LayerSpec::Conv2d { out_channels: 4 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 10 },
            LayerSpec::Softmax,
        ],
    }
}

#[test]
fn files_to_report_and_back() {
    let data = tempfile::tempdir().unwrap();
    write_glyph_tree(data.path(), 16, 4).unwrap();
    let manifest = load_dataset(data.path()).unwrap();
    assert_eq!(manifest.len(), 160);
    assert!(manifest.skipped.is_empty());

    let split = stratified_split(
        &manifest,
        &SplitSpec {
            test_fraction: 0.25,
            seed: 1,
        },
    )
    .unwrap();
    assert_eq!(split.test.len(), 40);
    let train = manifest.select(&split.train);
    let test = manifest.select(&split.test);

    let spec = compact_spec();
    let config = TrainConfig {
        epochs: 12,
        seed: 3,
        augment: Some(AugmentPolicy {
            seed: 3,
            ..AugmentPolicy::default()
        }),
        ..TrainConfig::default()
    };
    let fitted = fit(&spec, &train, &test, &config).unwrap();
    assert_eq!(fitted.history.len(), 12);
    let first = &fitted.history[0];
    let last = fitted.history.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{first:?} -> {last:?}");

    let eval = evaluate(&spec, &fitted.params, &test).unwrap();
    assert!(eval.accuracy > 0.3, "accuracy {}", eval.accuracy);
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let cm = confusion(&eval.predictions, &labels).unwrap();
    assert_eq!(cm.total(), 40);
    let curves: Vec<_> = (0..10)
        .map(|k| roc_one_vs_all(&eval.probabilities, &labels, k).ok())
        .collect();
    assert!(curves.iter().all(Option::is_some));

    let out = tempfile::tempdir().unwrap();
    let summary = export_report(out.path(), &cm, &curves, Some(&fitted.history)).unwrap();
    assert_eq!(summary.accuracy, eval.accuracy);
    for name in [
        "confusion.csv",
        "history.csv",
        "summary.json",
        "roc_class_0.csv",
        "roc_class_9.csv",
    ] {
        assert!(out.path().join(name).is_file(), "{name}");
    }

    let model_path = out.path().join("model.sdb");
    save_model(
        &spec,
        &fitted.params,
        std::fs::File::create(&model_path).unwrap(),
    )
    .unwrap();
    let (spec2, params2) = load_model(std::fs::File::open(&model_path).unwrap()).unwrap();
    assert_eq!(spec2, spec);
    for s in &test {
        let (a, pa) = predict(&spec, &fitted.params, &s.image).unwrap();
        let (b, pb) = predict(&spec2, &params2, &s.image).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }
}

#[test]
fn training_is_reproducible() {
    let data = signdigit_core::synthetic::glyph_set(3, 8);
    let spec = compact_spec();
    let config = TrainConfig {
        epochs: 2,
        seed: 5,
        augment: Some(AugmentPolicy::default()),
        ..TrainConfig::default()
    };
    let a = fit(&spec, &data, &data, &config).unwrap();
    let b = fit(&spec, &data, &data, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
}
