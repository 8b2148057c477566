use super::*;
use crate::data::{generate_synthetic_dataset, GeneratorConfig, LoadedDataset, MotionPointCloud, Point};

fn chirp(slope: f64, offset: f64, start: f64) -> ChirpConfig {
    ChirpConfig {
        start_ghz: start,
        slope_mhz_per_us: slope,
        start_offset_us: offset,
        ..ChirpConfig::default()
    }
}

#[test]
fn glitch_examples() {
    assert_eq!(glitch_duration(4000.0, 30.0, 10.0).unwrap(), 200.0);
    assert_eq!(glitch_duration(4000.0, 10.0, 30.0).unwrap(), 200.0);
    assert!(glitch_duration(4000.0, 20.0, 20.0).is_err());
    let a = glitch_duration(4000.0, 50.0, 10.0).unwrap();
    let b = glitch_duration(4000.0, 90.0, 10.0).unwrap();
    assert_eq!(a, 2.0 * b);
}

#[test]
fn classification_examples() {
    let m = InterferenceModel::default();
    let p = classify_interference(&chirp(20.0, 0.0, 77.0), &chirp(20.0, 0.5, 77.0), (0, 1), &m)
        .unwrap();
    assert_eq!(p.kind, InterferenceKind::Parallel);
    assert_eq!(p.ghost_count, m.ghost_count);
    assert!(
        classify_interference(&chirp(20.0, 0.0, 77.0), &chirp(20.0, 1.5, 77.0), (0, 1), &m)
            .is_none()
    );
    let c = classify_interference(&chirp(30.0, 0.0, 77.0), &chirp(10.0, 0.0, 77.0), (0, 1), &m)
        .unwrap();
    assert_eq!(c.kind, InterferenceKind::Crossing);
    assert_eq!(c.glitch_us, Some(200.0));
    assert!(
        classify_interference(&chirp(30.0, 0.0, 77.0), &chirp(10.0, 0.0, 81.5), (0, 1), &m)
            .is_none()
    );
}

fn cloud() -> MotionPointCloud {
    let pts = (0..40)
        .map(|i| Point::new(i as f64 * 0.01, 0.1, 0.2, i / 10))
        .collect();
    MotionPointCloud::new(pts, 90, 4).unwrap()
}

fn event(kind: InterferenceKind, glitch: Option<f64>, ghosts: usize) -> InterferenceEvent {
    InterferenceEvent {
        kind,
        aggressor: 0,
        victim: 1,
        glitch_us: glitch,
        victim_chirp_us: 400.0,
        ghost_count: ghosts,
    }
}

#[test]
fn apply_examples() {
    let m = InterferenceModel::default();
    let mut rng = stream(&[1]);
    let c = cloud();
    assert_eq!(apply_interference(&c, &[], &m, &mut rng).unwrap(), c);

    let out = apply_interference(&c, &[event(InterferenceKind::Parallel, None, 5)], &m, &mut rng)
        .unwrap();
    assert_eq!(out.len(), c.len() + 5);
    assert!(out.points.iter().all(|p| p.frame < 4));

    // glitch as long as the chirp blanks everything
    let blank = event(InterferenceKind::Crossing, Some(400.0), 0);
    let err = apply_interference(&c, &[blank], &m, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    // a near-total blank leaves too few points to bin; that must be an error
    let heavy = event(InterferenceKind::Crossing, Some(390.0), 0);
    let sparse = apply_interference(&c, &[heavy], &m, &mut stream(&[5])).unwrap();
    assert!(sparse.len() < 8);
    assert!(crate::preprocess::bin_frames(&sparse, 8).is_err());

    let half = event(InterferenceKind::Crossing, Some(200.0), 0);
    let mut kept = 0;
    for t in 0..50 {
        let mut r = stream(&[2, t]);
        kept += apply_interference(&c, std::slice::from_ref(&half), &m, &mut r).unwrap().len();
    }
    let frac = kept as f64 / (50.0 * c.len() as f64);
    assert!((frac - 0.5).abs() < 0.05, "{frac}");
}

#[test]
fn corrupted_dataset_reuses_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let output = dir.path().join("out");
    let gen = GeneratorConfig {
        classes: 2,
        subjects: 3,
        reps: 1,
        frames: 6,
        ..GeneratorConfig::default()
    };
    generate_synthetic_dataset(&gen, &input).unwrap();
    let mut a = UeSpec {
        id: 0,
        request_time_us: 0,
        peers: vec![],
        chirp: chirp(20.0, 0.0, 77.0),
        overlap_with: None,
        angle_deg: 0,
    };
    let mut b = a.clone();
    b.id = 1;
    b.request_time_us = 3;
    b.overlap_with = Some(0);
    b.angle_deg = 90;
    b.chirp.start_offset_us = 0.2;
    a.angle_deg = 45;
    let scenario = Scenario {
        ues: vec![a, b],
        ..Scenario::default()
    };
    let report = simulate(&scenario).unwrap();
    assert_eq!(report.interference.len(), 2);
    let (manifest, summary) = corrupt_dataset(&input, &output, &scenario, &report, 3).unwrap();
    assert_eq!(summary.samples_written, 6);
    assert_eq!(summary.clouds_touched, 12);
    let clean = LoadedDataset::load(&input).unwrap();
    let dirty = LoadedDataset::load(&output).unwrap();
    assert_eq!(dirty.manifest, manifest);
    for (c, d) in clean.train.iter().zip(&dirty.train) {
        assert_eq!(d.clouds[&90].len(), c.clouds[&90].len() + 5);
        assert_eq!(d.clouds[&45].len(), c.clouds[&45].len() + 5);
        assert_eq!(d.clouds[&0], c.clouds[&0]);
    }
}
