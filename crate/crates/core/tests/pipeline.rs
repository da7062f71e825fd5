use densemetric::data::{load_split_pair, save_features_binary};
use densemetric::eval::density_report;
use densemetric::{
    evaluate, load_checkpoint, load_features, recall_at_k, save_checkpoint, save_features, synthesize, train, Error,
    LossKind, Split, SynthConfig, TrainConfig, Trainer,
};

fn small() -> (densemetric::Dataset, densemetric::Dataset) {
    synthesize(&SynthConfig {
        num_classes: 8,
        samples_per_class: 10,
        input_dim: 12,
        sigma: 0.1,
        seed: 5,
    })
    .unwrap()
}

fn cfg(loss: LossKind, lambda: f64) -> TrainConfig {
    TrainConfig {
        loss,
        lambda,
        classes_per_batch: 4,
        samples_per_class: 5,
        hidden: vec![32],
        embedding_dim: 8,
        learning_rate: 5e-3,
        iterations: 300,
        ..TrainConfig::default()
    }
}

#[test]
fn well_separated_classes_are_learned_by_every_loss() {
    let (tr, _) = small();
    for loss in LossKind::ALL {
        let (trainer, log) = train(cfg(loss, 1.0), &tr).unwrap();
        let e = trainer.embed(tr.features()).unwrap();
        for row in e.iter_rows() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert!(trainer.density.alphas.iter().all(|&a| a >= 0.0));
        assert_eq!(log.last().unwrap().iteration, 300);
        let r1 = recall_at_k(&e, tr.labels(), &[1]).unwrap()[&1];
        assert!(r1 >= 0.95, "{loss}: train R@1 {r1}");
    }
}

#[test]
fn zero_lambda_leaves_alphas_at_init() {
    let (tr, _) = small();
    let (a, _) = train(cfg(LossKind::Triplet, 0.0), &tr).unwrap();
    assert!(a.density.alphas.iter().all(|&x| x == 0.5));
}

#[test]
fn huge_learning_rate_is_reported_as_divergence() {
    let (tr, _) = small();
    let c = TrainConfig {
        learning_rate: 1e250,
        ..cfg(LossKind::Contrastive, 1.0)
    };
    match train(c, &tr) {
        Err(Error::DivergenceDetected { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|(t, _)| t.iteration)),
    }
}

#[test]
fn checkpoint_round_trip_preserves_embeddings() {
    let (tr, te) = small();
    let (trainer, _) = train(TrainConfig { iterations: 20, ..cfg(LossKind::Npair, 1.0) }, &tr).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&trainer, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.iteration, 20);
    assert_eq!(back.embed(te.features()).unwrap(), trainer.embed(te.features()).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn feature_files_round_trip_in_both_formats() {
    let (tr, te) = small();
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("train.txt");
    let bin = dir.path().join("test.bin");
    save_features(&tr, &text).unwrap();
    save_features_binary(&te, &bin).unwrap();
    let (a, b) = load_split_pair(&text, &bin).unwrap();
    assert_eq!(a.features(), tr.features());
    assert_eq!(a.class_names(), tr.class_names());
    assert_eq!(b.features(), te.features());
    assert_eq!(b.labels(), te.labels());
    assert!(matches!(load_split_pair(&text, &text), Err(Error::OverlappingSplits(_))));
}

#[test]
fn malformed_feature_file_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "a, 0.5, 1.0\na, 0.25\n").unwrap();
    assert!(matches!(
        load_features(&path, Split::Train),
        Err(Error::DimInconsistent { line: 2, .. })
    ));
}

#[test]
fn evaluation_of_trained_model() {
    let (tr, te) = small();
    let (trainer, _) = train(cfg(LossKind::Contrastive, 10.0), &tr).unwrap();
    let e = trainer.embed(te.features()).unwrap();
    let report = evaluate(&e, te.labels(), te.class_names(), &[1, 2, 4, 8], 0).unwrap();
    let r = &report.recall_at;
    assert!(r[&1] <= r[&2] && r[&2] <= r[&4] && r[&4] <= r[&8]);
    assert!((0.0..=1.0).contains(&report.nmi));
    assert_eq!(report.per_class_density.len(), te.num_classes());
    let dens = density_report(&e, te.labels()).unwrap();
    assert!((report.mean_density() - dens.values().sum::<f64>() / dens.len() as f64).abs() < 1e-12);
}

#[test]
fn trainer_rejects_too_few_classes() {
    let (tr, _) = small();
    let c = TrainConfig {
        classes_per_batch: 9,
        ..cfg(LossKind::Contrastive, 1.0)
    };
    let result = Trainer::new(c, &tr).and_then(|mut t| t.step(&tr));
    assert!(matches!(result, Err(Error::InsufficientClasses { .. })));
}
