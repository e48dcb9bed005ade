use super::*;
use proptest::prelude::*;

fn small_cfg(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        per_class_counts: vec![12, 9, 10, 11],
        signal_length: 256,
        seed,
        ..Default::default()
    }
}

fn table_sized() -> Dataset {
    generate_synthetic(&SyntheticConfig {
        signal_length: 32,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn default_counts_follow_class_table() {
    let cfg = SyntheticConfig::default();
    assert_eq!(cfg.per_class_counts, vec![244, 120, 173, 168]);
    let ds = table_sized();
    assert_eq!(ds.len(), 705);
    assert_eq!(ds.class_counts(), vec![244, 120, 173, 168]);
    assert_eq!(ds.class_names, vec!["H", "C1", "C2", "C3"]);
}

#[test]
fn generation_is_deterministic_and_standardized() {
    let a = generate_synthetic(&small_cfg(3)).unwrap();
    let b = generate_synthetic(&small_cfg(3)).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&small_cfg(4)).unwrap();
    assert_ne!(a.samples[0].acoustic, c.samples[0].acoustic);
    for s in &a.samples {
        for x in [&s.acoustic, &s.vibration] {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn degenerate_configs_are_rejected() {
    let one = SyntheticConfig {
        n_classes: 1,
        per_class_counts: vec![5],
        ..small_cfg(0)
    };
    assert!(generate_synthetic(&one).is_err());
    let mismatch = SyntheticConfig {
        per_class_counts: vec![5, 5],
        ..small_cfg(0)
    };
    assert!(generate_synthetic(&mismatch).is_err());
    let corr = SyntheticConfig {
        cross_correlation: 1.5,
        ..small_cfg(0)
    };
    assert!(generate_synthetic(&corr).is_err());
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn fully_shared_noiseless_modalities_are_one_source() {
    let cfg = SyntheticConfig {
        cross_correlation: 1.0,
        modality_noise_db: f64::NEG_INFINITY,
        shared_snr_db: 60.0,
        per_class_counts: vec![3, 3],
        n_classes: 2,
        signal_length: 512,
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    for s in &ds.samples {
        // the vibration path is a delay plus a carrier rotation of the same source,
        // so after undoing the delay the envelopes agree
        let shift = (0.006 * 512.0f64).round() as usize;
        let env = |x: &[f64]| -> Vec<f64> {
            x.windows(43).map(|w| w.iter().map(|v| v * v).sum::<f64>()).collect()
        };
        let ea = env(&s.acoustic[..512 - shift]);
        let ev = env(&s.vibration[shift..]);
        assert!(correlation(&ea, &ev) > 0.9, "{}", correlation(&ea, &ev));
    }
    let twice = generate_synthetic(&cfg).unwrap();
    assert_eq!(ds, twice);
}

#[test]
fn class_defect_is_visible_in_burst_energy() {
    // the defective cylinder's burst slot carries less energy than healthy
    let cfg = SyntheticConfig {
        per_class_counts: vec![40, 40],
        n_classes: 2,
        signal_length: 512,
        cross_correlation: 1.0,
        modality_noise_db: f64::NEG_INFINITY,
        shared_snr_db: 40.0,
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let slot_energy = |s: &MultiModalSample| -> f64 {
        // cylinder 1 fires in the first quarter of the window
        let slot = &s.acoustic[..128];
        slot.iter().map(|v| v * v).sum::<f64>() / s.acoustic.iter().map(|v| v * v).sum::<f64>()
    };
    let mean = |label| {
        let xs: Vec<f64> = ds.samples.iter().filter(|s| s.label == label).map(slot_energy).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    assert!(mean(1) < 0.8 * mean(0), "{} vs {}", mean(1), mean(0));
}

fn pulse_trigger(marks: &[usize], len: usize) -> Vec<f64> {
    let mut t = vec![0.0; len];
    for &m in marks {
        for v in &mut t[m..(m + 5).min(len)] {
            *v = 1.0;
        }
    }
    t
}

fn recording(marks: &[usize], len: usize) -> RawRecording {
    RawRecording {
        id: "r".into(),
        label: 1,
        sample_rate: 1000.0,
        acoustic: (0..len).map(|i| i as f64).collect(),
        vibration: (0..len).map(|i| -(i as f64)).collect(),
        trigger: pulse_trigger(marks, len),
    }
}

#[test]
fn trigger_edges_are_detected() {
    let rec = recording(&[10, 110, 210, 310], 400);
    assert_eq!(detect_revolutions(&rec.trigger, 0.1), vec![10, 110, 210, 310]);
    // offset and scale do not matter
    let shifted: Vec<f64> = rec.trigger.iter().map(|v| 3.0 * v - 7.0).collect();
    assert_eq!(detect_revolutions(&shifted, 0.1), vec![10, 110, 210, 310]);
    // starting inside a pulse does not create a mark
    let mut t = rec.trigger.clone();
    t[..3].fill(1.0);
    assert_eq!(detect_revolutions(&t, 0.1), vec![10, 110, 210, 310]);
}

#[test]
fn window_counts_per_stride() {
    let three = recording(&[10, 110, 210], 300);
    let four = recording(&[10, 110, 210, 310], 400);
    let five = recording(&[10, 110, 210, 310, 410], 500);
    let count = |r: &RawRecording, stride| {
        let cfg = SegmentConfig {
            signal_length: 50,
            stride,
            ..Default::default()
        };
        segment_recording(r, &cfg).unwrap().0.len()
    };
    assert_eq!((count(&three, 1), count(&three, 2)), (1, 1));
    assert_eq!((count(&four, 1), count(&four, 2)), (2, 1));
    assert_eq!((count(&five, 1), count(&five, 2)), (3, 2));
}

#[test]
fn segmentation_errors() {
    let two = recording(&[10, 110], 200);
    assert!(matches!(
        segment_recording(&two, &SegmentConfig::default()),
        Err(DataError::TooFewTriggers { found: 2, .. })
    ));
    let irregular = recording(&[10, 110, 130, 230, 330], 400);
    assert!(matches!(
        segment_recording(&irregular, &SegmentConfig::default()),
        Err(DataError::IrregularTriggers { index: 2, .. })
    ));
    let mut bad = recording(&[10, 110, 210], 300);
    bad.trigger.pop();
    assert!(matches!(
        segment_recording(&bad, &SegmentConfig::default()),
        Err(DataError::ChannelLength { .. })
    ));
}

#[test]
fn windows_stay_inside_the_recording() {
    let rec = recording(&[10, 110, 210, 310, 410], 500);
    let cfg = SegmentConfig {
        signal_length: 400,
        stride: 1,
        ..Default::default()
    };
    let (samples, report) = segment_recording(&rec, &cfg).unwrap();
    assert_eq!(report.windows, 3);
    assert_eq!((report.min_raw_length, report.max_raw_length), (200, 200));
    for (k, s) in samples.iter().enumerate() {
        assert_eq!(s.acoustic.len(), 400);
        // the acoustic channel is the sample index, so values locate the window
        let start = 10.0 + 100.0 * k as f64;
        assert_eq!(s.acoustic[0], start);
        assert!(*s.acoustic.last().unwrap() < start + 200.0);
        assert!(s.acoustic.iter().all(|&v| v < 410.0));
        assert_eq!(s.label, 1);
    }
}

#[test]
fn synthetic_recording_window_length() {
    let rec = synthesize_recording("h0", 0, &RecordingConfig::default(), 5);
    assert_eq!(rec.acoustic.len(), 163_840);
    let marks = detect_revolutions(&rec.trigger, 0.1);
    let two_revs: f64 = 2.0 * 60.0 / 867.0 * 32768.0;
    assert!((two_revs - 4535.0).abs() < 1.0);
    for w in marks.windows(3) {
        assert!(((w[2] - w[0]) as f64 - two_revs).abs() <= 2.0, "{marks:?}");
    }
    let (samples, report) = segment_recording(&rec, &SegmentConfig::default()).unwrap();
    assert!((4534..=4537).contains(&report.min_raw_length));
    assert!(samples.iter().all(|s| s.acoustic.len() == 4800 && s.vibration.len() == 4800));
    assert_eq!(samples.len(), report.windows);
    assert_eq!(report.windows, (marks.len() - 3) / 2 + 1);
}

fn scaled_batch() -> Vec<MultiModalSample> {
    let ds = generate_synthetic(&SyntheticConfig {
        n_classes: 2,
        per_class_counts: vec![50, 5],
        signal_length: 64,
        ..Default::default()
    })
    .unwrap();
    // raw-scale variation so RMS differs between samples
    ds.samples
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            let g = 1.0 + 0.05 * ((i * 7) % 11) as f64;
            s.acoustic.iter_mut().for_each(|v| *v *= g);
            s.vibration.iter_mut().for_each(|v| *v *= g);
            s
        })
        .collect()
}

#[test]
fn single_scaled_sample_is_the_only_outlier() {
    let mut samples = scaled_batch();
    let (kept, report) = remove_outliers(samples.clone(), 4.0);
    assert!(report.rejected.is_empty(), "{report:?}");
    assert_eq!(kept.len(), samples.len());
    samples[17].acoustic.iter_mut().for_each(|v| *v *= 100.0);
    let (kept, report) = remove_outliers(samples.clone(), 4.0);
    assert_eq!(report.rejected.len(), 1);
    assert_eq!(report.rejected[0].id, samples[17].id);
    assert_eq!(kept.len(), samples.len() - 1);
    let (again, report2) = remove_outliers(kept.clone(), 4.0);
    assert_eq!(again, kept);
    assert!(report2.rejected.is_empty());
    let (all, r) = remove_outliers(samples.clone(), f64::INFINITY);
    assert_eq!(all, samples);
    assert!(r.rejected.is_empty());
}

#[test]
fn homogeneous_standardized_batch_keeps_everything() {
    let ds = generate_synthetic(&small_cfg(1)).unwrap();
    let (kept, report) = remove_outliers(ds.samples.clone(), 4.0);
    assert_eq!(kept.len(), ds.len());
    assert!(report.rejected.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outlier_removal_is_idempotent(seed in any::<u64>(), thr in 1.0f64..6.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<MultiModalSample> = (0..30)
            .map(|i| {
                let g: f64 = rng.random_range(0.5..3.0f64).powi(3);
                MultiModalSample {
                    id: format!("s{i}"),
                    label: i % 2,
                    acoustic: (0..8).map(|_| g * rng.random_range(-1.0..1.0)).collect(),
                    vibration: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                }
            })
            .collect();
        let (once, _) = remove_outliers(samples, thr);
        let (twice, report) = remove_outliers(once.clone(), thr);
        prop_assert_eq!(once, twice);
        prop_assert!(report.rejected.is_empty());
    }
}

#[test]
fn holdout_takes_ten_per_class() {
    let ds = table_sized();
    let split = split_holdout(&ds, 10, 1).unwrap();
    assert_eq!(split.validation.len(), 40);
    assert_eq!(split.pool.len(), 665);
    let mut per_class = vec![0; 4];
    for &i in &split.validation {
        per_class[ds.samples[i].label] += 1;
    }
    assert_eq!(per_class, vec![10; 4]);
    assert_eq!(split, split_holdout(&ds, 10, 1).unwrap());
    assert_ne!(split, split_holdout(&ds, 10, 2).unwrap());
    let none = split_holdout(&ds, 0, 1).unwrap();
    assert!(none.validation.is_empty());
    assert_eq!(none.pool.len(), 705);
    assert!(matches!(split_holdout(&ds, 120, 1), Err(DataError::InsufficientClass { .. })));
}

#[test]
fn seven_folds_of_ninety_five() {
    let ds = table_sized();
    let split = split_holdout(&ds, 10, 1).unwrap();
    let plan = stratified_folds(&ds, &split, 7, 3).unwrap();
    let pool_counts: [f64; 4] = [234.0, 110.0, 163.0, 158.0];
    let mut seen = Vec::new();
    for fold in &plan.folds {
        assert_eq!(fold.test.len(), 95);
        assert_eq!(fold.train.len(), 570);
        let mut counts = [0.0f64; 4];
        for &i in &fold.test {
            counts[ds.samples[i].label] += 1.0;
        }
        for c in 0..4 {
            assert!((counts[c] - pool_counts[c] / 7.0).abs() <= 1.0);
        }
        assert!(fold.train.iter().all(|i| !fold.test.contains(i)));
        assert!(fold.test.iter().all(|i| !split.validation.contains(i)));
        seen.extend_from_slice(&fold.test);
    }
    seen.sort_unstable();
    assert_eq!(seen, split.pool);
    assert!(matches!(stratified_folds(&ds, &split, 1, 0), Err(DataError::InvalidConfig(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fold_plans_partition_and_stratify(
        counts in proptest::collection::vec(7usize..40, 2..5),
        k in 2usize..8,
        seed in any::<u64>(),
    ) {
        let ds = Dataset {
            samples: counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| (0..n).map(move |i| MultiModalSample {
                    id: format!("{c}-{i}"),
                    label: c,
                    acoustic: vec![0.0],
                    vibration: vec![0.0],
                }))
                .collect(),
            class_names: (0..counts.len()).map(|c| c.to_string()).collect(),
            signal_length: 1,
            sample_rate: 1.0,
            provenance: Provenance { kind: ProvenanceKind::Imported, config: serde_json::Value::Null },
        };
        let split = split_holdout(&ds, 0, seed).unwrap();
        let plan = stratified_folds(&ds, &split, k, seed).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (c, &n) in counts.iter().enumerate() {
            let per: Vec<usize> = plan.folds.iter()
                .map(|f| f.test.iter().filter(|&&i| ds.samples[i].label == c).count())
                .collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            prop_assert_eq!(per.iter().sum::<usize>(), n);
        }
        let mut all: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, split.pool.clone());
    }
}

#[test]
fn container_round_trip() {
    let ds = generate_synthetic(&small_cfg(9)).unwrap();
    let bytes = encode_dataset(&ds, Precision::F64).unwrap();
    assert_eq!(decode_dataset(&bytes).unwrap(), ds);

    let back = decode_dataset(&encode_dataset(&ds, Precision::F32).unwrap()).unwrap();
    for (a, b) in back.samples.iter().zip(&ds.samples) {
        for (x, y) in a.acoustic.iter().zip(&b.acoustic) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    let empty = Dataset {
        samples: Vec::new(),
        ..ds.clone()
    };
    assert_eq!(decode_dataset(&encode_dataset(&empty, Precision::F64).unwrap()).unwrap(), empty);
}

#[test]
fn container_corruption_is_detected() {
    let ds = generate_synthetic(&small_cfg(9)).unwrap();
    let bytes = encode_dataset(&ds, Precision::F64).unwrap();
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x55;
    match decode_dataset(&flipped) {
        Err(DataError::Checksum { id }) => assert_eq!(id, ds.samples.last().unwrap().id),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(decode_dataset(&bytes[..bytes.len() - 10]), Err(DataError::Format(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_dataset(&magic), Err(DataError::Format(_))));
    let mut version = bytes;
    version[8] = 9;
    assert!(matches!(decode_dataset(&version), Err(DataError::Format(_))));
}

#[test]
fn directory_import_round_trip() {
    let ds = generate_synthetic(&small_cfg(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_directory(&ds, dir.path(), Precision::F64).unwrap();
    let back = import_directory(dir.path()).unwrap();
    assert_eq!(back.samples, ds.samples);
    assert_eq!(back.provenance.kind, ProvenanceKind::Imported);
    assert!(import_directory(&dir.path().join("missing")).is_err());
}

#[test]
fn recordings_directory_round_trip() {
    let cfg = RecordingConfig {
        seconds: 0.5,
        ..Default::default()
    };
    let recs = vec![synthesize_recording("a", 0, &cfg, 1), synthesize_recording("b", 1, &cfg, 2)];
    let dir = tempfile::tempdir().unwrap();
    let names = vec!["H".to_string(), "C1".to_string()];
    write_recordings_dir(dir.path(), &names, &recs, Precision::F64).unwrap();
    let (n2, back) = read_recordings_dir(dir.path()).unwrap();
    assert_eq!(n2, names);
    assert_eq!(back, recs);
}
