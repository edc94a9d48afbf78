use clflow::dataset::{generate, Dataset, GeneratorSpec};
use clflow::features::ExtractorSpec;
use clflow::pipeline::{
    evaluate_scores, infer_run, read_image_scores, run_experiment, score_images, train,
    FlowSettings, LambdaMode, Objective, RunConfig, RunLayout,
};
use clflow::Image;

fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        steps: 6,
        batch_size: 3,
        extractor: ExtractorSpec {
            channels: 6,
            ..Default::default()
        },
        flow: FlowSettings {
            n_blocks: 2,
            ..Default::default()
        },
        heatmaps: false,
        ..Default::default()
    }
}

fn small_data() -> Dataset {
    generate(&GeneratorSpec {
        train: 8,
        test: 6,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn train_images(d: &Dataset) -> Vec<&Image> {
    d.train.iter().map(|s| &s.image).collect()
}

#[test]
fn identically_seeded_runs_match_exactly() {
    let data = small_data();
    let a = run_experiment(&small_config(5), &data, None).unwrap();
    let b = run_experiment(&small_config(5), &data, None).unwrap();
    assert_eq!(a.train.log, b.train.log);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.train.checkpoint, b.train.checkpoint);

    let c = run_experiment(&small_config(6), &data, None).unwrap();
    assert_ne!(a.train.log, c.train.log);
}

#[test]
fn saved_run_reproduces_in_memory_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let mut cfg = small_config(1);
    cfg.heatmaps = true;
    let rep = run_experiment(&cfg, &data, Some(dir.path())).unwrap();
    let layout = RunLayout::new(dir.path());
    assert_eq!(RunConfig::load(&layout.config()).unwrap(), cfg);
    assert!(layout.metrics().exists());
    assert!(layout.heatmap(&data.test[0].name).exists());

    let rescored = infer_run(dir.path(), &data).unwrap();
    for (a, b) in rep.scored.iter().zip(&rescored) {
        assert_eq!(a.map.pixels, b.map.pixels);
        assert_eq!(a.map.image_score, b.map.image_score);
    }
    let from_files = evaluate_scores(&layout.image_scores(), Some(&data)).unwrap();
    assert_eq!(from_files, rep.metrics);

    let (names, _) = read_image_scores(&layout.image_scores()).unwrap();
    assert_eq!(names.len(), data.test.len());
}

#[test]
fn zero_auxiliary_weights_reproduce_the_likelihood_only_log() {
    let data = small_data();
    let images = train_images(&data);
    let ml_only = RunConfig {
        objective: Objective::MlOnly,
        ..small_config(2)
    };
    let zeroed = RunConfig {
        lambda_mode: LambdaMode::Fixed,
        lambda1: 0.0,
        lambda2: 0.0,
        ..small_config(2)
    };
    let a = train(&ml_only, &images).unwrap();
    let b = train(&zeroed, &images).unwrap();
    let ml_a: Vec<f64> = a.log.iter().map(|r| r.ml).collect();
    let ml_b: Vec<f64> = b.log.iter().map(|r| r.ml).collect();
    assert_eq!(ml_a, ml_b);
    assert_eq!(a.checkpoint.flow, b.checkpoint.flow);
    assert!(b.log.iter().all(|r| r.total == r.ml));
}

#[test]
fn inference_never_touches_the_heads() {
    let data = small_data();
    let cfg = small_config(4);
    let rep = train(&cfg, &train_images(&data)).unwrap();
    let heads = rep
        .checkpoint
        .heads
        .as_ref()
        .expect("full objective keeps heads");
    let before = heads.access_count();
    assert!(before > 0);
    let test: Vec<&Image> = data.test.iter().map(|s| &s.image).collect();
    score_images(&cfg, &rep.checkpoint.flow, &test).unwrap();
    assert_eq!(heads.access_count(), before);
}

#[test]
fn likelihood_only_runs_store_no_heads() {
    let data = small_data();
    let cfg = RunConfig {
        objective: Objective::MlOnly,
        ..small_config(0)
    };
    let rep = train(&cfg, &train_images(&data)).unwrap();
    assert!(rep.checkpoint.heads.is_none());
    assert!(rep.log.iter().all(|r| r.pnd == 0.0 && r.scf == 0.0));
}

#[test]
fn oversized_batches_are_a_config_error() {
    let data = small_data();
    let cfg = RunConfig {
        batch_size: 50,
        ..small_config(0)
    };
    assert!(matches!(
        train(&cfg, &train_images(&data)),
        Err(clflow::Error::Config(_))
    ));
}
