use super::*;
use crate::data::{generate_split, GeneratorConfig, SampleSplit};
use crate::fusion::{FusionConfig, HeadKind};
use crate::graph::GraphConfig;
use crate::model::ModelConfig;
use crate::neuro::EncoderConfig;
use crate::preprocess::{preprocess_all, PreprocessConfig};

fn tiny_split() -> SampleSplit {
    let gen = GeneratorConfig {
        classes: 3,
        subjects: 3,
        reps: 2,
        angles: vec![0, 90, 180, 270],
        frames: 8,
        ..GeneratorConfig::default()
    };
    let pre = PreprocessConfig {
        target_frames: 4,
        target_points_per_frame: 3,
        ..PreprocessConfig::default()
    };
    let s = generate_split(&gen).unwrap();
    SampleSplit {
        train: preprocess_all(&s.train, &pre, 1).unwrap(),
        val: preprocess_all(&s.val, &pre, 2).unwrap(),
        test: preprocess_all(&s.test, &pre, 3).unwrap(),
    }
}

fn tiny_model(head: HeadKind) -> GestureModel {
    let cfg = ModelConfig {
        graph: GraphConfig { k: 3, frame_scale: 1.0 },
        encoder: EncoderConfig {
            layers: vec![vec![4], vec![6]],
        },
        fusion: FusionConfig {
            head,
            embed: vec![4],
            classifier: vec![4],
            attention_heads: 2,
            attention_head_dim: 2,
            hidden: vec![4],
            angles: vec![0, 90, 180, 270],
        },
    };
    GestureModel::new(&cfg, 3, 5).unwrap()
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at_epoch(0, &cfg), 0.001);
    assert_eq!(lr_at_epoch(79, &cfg), 0.001);
    assert_eq!(lr_at_epoch(80, &cfg), 0.0005);
    assert_eq!(lr_at_epoch(160, &cfg), 0.00025);
    for e in 0..400 {
        if e % 80 != 0 {
            assert_eq!(lr_at_epoch(e, &cfg), lr_at_epoch(e - 1, &cfg));
        } else if e > 0 {
            assert!(lr_at_epoch(e, &cfg) < lr_at_epoch(e - 1, &cfg));
        }
    }
}

#[test]
fn nll_examples() {
    assert!((nll_loss(&[0.0; 21], 3).unwrap() - 21f64.ln()).abs() < 1e-12);
    assert!((nll_loss(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!(nll_loss(&[200.0, 0.0, 0.0], 0).unwrap() < 1e-80);
    assert!(nll_loss(&[0.0, 0.0], 2).is_err());
}

fn one_param(v: f64) -> ModelParameters {
    let mut p = ModelParameters::default();
    p.add("w", Tensor::row_vector(vec![v, v]));
    p
}

#[test]
fn adam_examples() {
    let mut p = one_param(0.5);
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
    adam.step(&mut p, &one_param(0.0), 0.001).unwrap();
    assert_eq!(p, one_param(0.5));

    let mut p = one_param(0.0);
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
    adam.step(&mut p, &one_param(1.0), 0.001).unwrap();
    for v in p.flatten() {
        assert!((v + 0.001).abs() < 1e-10);
    }

    let run = || {
        let mut p = one_param(0.3);
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        for _ in 0..2 {
            adam.step(&mut p, &one_param(0.7), 0.01).unwrap();
        }
        p
    };
    assert_eq!(run(), run());

    let mut bad = ModelParameters::default();
    bad.add("w", Tensor::row_vector(vec![1.0]));
    assert!(adam.step(&mut one_param(0.0), &bad, 0.1).is_err());
}

#[test]
fn early_stopping_contract() {
    let mut es = EarlyStopping::new(1);
    assert_eq!(es.observe(0, 1.0), (true, false));
    assert_eq!(es.observe(1, 2.0), (false, true));
    assert_eq!(es.best(), Some((0, 1.0)));

    let mut es = EarlyStopping::new(3);
    for (e, l) in [3.0, 2.0, 2.5, 1.5, 1.6, 1.7].into_iter().enumerate() {
        assert!(!es.observe(e, l).1);
    }
    assert!(es.observe(6, 1.5).1);
    assert_eq!(es.best(), Some((3, 1.5)));
}

#[test]
fn training_is_deterministic_and_keeps_best() {
    let data = tiny_split();
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 4,
        lr_init: 0.01,
        ..TrainConfig::default()
    };
    let aug = AugmentConfig::default();
    let run = || {
        let mut m = tiny_model(HeadKind::Attention);
        let h = train(&mut m, &data.train, &data.val, &cfg, &aug, |_| {}).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1.params, m2.params);
    assert_eq!(h1.epochs.len(), 3);
    let best = &h1.epochs[h1.best_epoch];
    assert!(h1.epochs.iter().all(|e| e.val_loss >= best.val_loss));
    let val = prepare_all(&m1, &data.val).unwrap();
    let (loss, _) = evaluate_loss(&m1, &m1.params, &val).unwrap();
    assert_eq!(loss, best.val_loss);
}

#[test]
fn training_rejects_empty_splits() {
    let data = tiny_split();
    let mut m = tiny_model(HeadKind::Max);
    let cfg = TrainConfig::default();
    let aug = AugmentConfig::default();
    assert!(train(&mut m, &[], &data.val, &cfg, &aug, |_| {}).is_err());
    assert!(train(&mut m, &data.train, &[], &cfg, &aug, |_| {}).is_err());
}

#[test]
fn protocols_on_untrained_tracking_model() {
    let data = tiny_split();
    let m = tiny_model(HeadKind::Tracking);
    let cache = RepresentationCache::build(&m, &data.test).unwrap();
    let base = evaluate(&m, &cache).unwrap();
    assert_eq!(base.samples, data.test.len());

    let all = eval_angle_subset(&m, &cache, &[0, 90, 180, 270]).unwrap();
    assert_eq!(all, base);
    assert!(eval_angle_subset(&m, &cache, &[]).is_err());
    assert!(eval_angle_subset(&m, &cache, &[45]).is_err());

    let d0 = run_angle_dropout(&m, &cache, 0, 10, 32, 1).unwrap();
    assert_eq!(d0.std_balanced_accuracy, 0.0);
    assert_eq!(d0.mean_balanced_accuracy, base.balanced_accuracy);
    let d2 = run_angle_dropout(&m, &cache, 2, 10, 2, 1).unwrap();
    assert_eq!(d2, run_angle_dropout(&m, &cache, 2, 10, 2, 1).unwrap());
    assert!(run_angle_dropout(&m, &cache, 4, 10, 32, 1).is_err());

    let p0 = run_angle_permutation(&m, &cache, 0, 3, 32, 1).unwrap();
    assert_eq!(p0.mean_balanced_accuracy, base.balanced_accuracy);
    assert!(run_angle_permutation(&m, &cache, 1, 3, 32, 1).is_err());
    assert!(run_angle_permutation(&m, &cache, 5, 3, 32, 1).is_err());
    let p4 = run_angle_permutation(&m, &cache, 4, 3, 32, 1).unwrap();
    assert_eq!(p4.trials.len(), 3);

    let imp = angle_importance(&m, &cache).unwrap();
    for row in &imp.scores {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let csv = imp.to_csv(&["a".into(), "b".into(), "c".into()]);
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
}

#[test]
fn permutation_and_importance_need_tracking() {
    let data = tiny_split();
    let m = tiny_model(HeadKind::Vote);
    let cache = RepresentationCache::build(&m, &data.test).unwrap();
    assert!(run_angle_permutation(&m, &cache, 2, 3, 32, 1).is_err());
    assert!(angle_importance(&m, &cache).is_err());
    assert!(run_angle_dropout(&m, &cache, 3, 2, 32, 1).is_ok());
}

#[test]
fn derangements_have_no_fixed_points() {
    let mut rng = stream(&[3]);
    for n in 2..9 {
        for _ in 0..50 {
            let d = derangement(n, &mut rng).unwrap();
            let mut sorted = d.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(d.iter().enumerate().all(|(i, v)| i != *v));
        }
    }
    assert!(derangement(1, &mut rng).is_err());
}

#[test]
fn protocol_csv_has_one_row_per_trial() {
    let data = tiny_split();
    let m = tiny_model(HeadKind::Max);
    let cache = RepresentationCache::build(&m, &data.test).unwrap();
    let s = run_angle_dropout(&m, &cache, 1, 4, 32, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    write_protocol_csv(&path, &[s]).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "protocol,setting,trial,balanced_accuracy,auc");
    assert_eq!(text.lines().count(), 5);
}
