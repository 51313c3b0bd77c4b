use std::fs;

use mstta_core::dataset::{read_dataset, write_dataset, EmbDataset};
use mstta_core::math::{argmax, Embedding};
use mstta_core::meanshift::{MeanShiftConfig, NeighborSource};
use mstta_core::pipeline::{
    evaluate_stream, process_sample, run_stream, sweep, Mode, Report, RunConfig, StreamState, SweepAxis,
};
use mstta_core::report::{render_report, render_sweep, write_report, ReportFormat};
use mstta_core::synth::{synth_generate, SynthSpec};
use mstta_core::Error;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        per_class: 40,
        seed,
        ..SynthSpec::default()
    }
}

fn ms(alpha: f64) -> RunConfig {
    RunConfig {
        ms: MeanShiftConfig {
            alpha,
            ..MeanShiftConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn golden_checksum() {
    let ds = synth_generate(&SynthSpec::default()).unwrap();
    assert_eq!(
        ds.checksum(),
        "0a24895f8fb71f3e14ed70291f9e92925089721e27fe6269b6ec8feb98f31178"
    );
}

#[test]
fn seed_zero_regression() {
    let ds = synth_generate(&SynthSpec::default()).unwrap();
    let correct = |mode| evaluate_stream(&ds, &RunConfig::with_mode(mode)).unwrap().correct;
    let (clip, base, ms_tta) = (correct(Mode::ClipOnly), correct(Mode::Baseline), correct(Mode::MsTta));
    assert_eq!((clip, base, ms_tta), (1206, 1689, 1868));
    assert!(ms_tta >= base);
}

#[test]
fn clip_only_accuracy_is_zero_shot_accuracy() {
    let ds = synth_generate(&small_spec(3)).unwrap();
    let r = evaluate_stream(&ds, &RunConfig::with_mode(Mode::ClipOnly)).unwrap();
    let direct = ds
        .features()
        .iter()
        .zip(ds.labels())
        .filter(|(f, &l)| {
            let scores: Vec<f64> = ds.text().rows().iter().map(|t| f.dot(t)).collect();
            argmax(&scores) == l
        })
        .count();
    assert_eq!(r.correct, direct);
}

#[test]
fn separable_data_is_solved_by_every_mode() {
    let spec = SynthSpec {
        kappa_test: 1e6,
        kappa_text: 1e6,
        shift_angle: 0.0,
        per_class: 30,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec).unwrap();
    for mode in [Mode::ClipOnly, Mode::Baseline] {
        let r = evaluate_stream(&ds, &RunConfig::with_mode(mode)).unwrap();
        assert_eq!(r.top1_accuracy, 1.0, "{mode}");
    }
    assert_eq!(evaluate_stream(&ds, &ms(0.0)).unwrap().top1_accuracy, 1.0);

    // With alpha > 0, a sample whose class has fewer than k earlier samples
    // gets other-class neighbors and is pulled toward them. Once k same-class
    // samples are in the bank, every prediction is correct.
    let cfg = RunConfig::default();
    let out = run_stream(&ds, &cfg).unwrap();
    let mut seen = vec![0usize; ds.classes()];
    for (p, &label) in out.predictions.iter().zip(ds.labels()) {
        if seen[label] >= cfg.ms.k {
            assert_eq!(p.predicted_class, label);
        }
        seen[label] += 1;
    }
    assert!(out.report.correct >= ds.len() - ds.classes() * cfg.ms.k);
}

#[test]
fn label_noise_bounds_clean_geometry_accuracy() {
    let spec = SynthSpec {
        kappa_test: 1e6,
        kappa_text: 1e6,
        shift_angle: 0.0,
        label_noise: 0.2,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec).unwrap();
    let acc = evaluate_stream(&ds, &RunConfig::with_mode(Mode::ClipOnly)).unwrap().top1_accuracy;
    assert!((acc - 0.8).abs() <= 0.01, "{acc}");
}

#[test]
fn lambda_zero_is_zero_shot() {
    let ds = synth_generate(&small_spec(1)).unwrap();
    let cfg = RunConfig {
        lambda: 0.0,
        ..RunConfig::default()
    };
    let out = run_stream(&ds, &cfg).unwrap();
    for p in &out.predictions {
        assert_eq!(p.predicted_class, argmax(p.logits_clip.values()));
    }
}

#[test]
fn alpha_zero_matches_baseline() {
    let ds = synth_generate(&small_spec(2)).unwrap();
    let a = run_stream(&ds, &ms(0.0)).unwrap();
    let b = run_stream(&ds, &RunConfig::with_mode(Mode::Baseline)).unwrap();
    for (x, y) in a.predictions.iter().zip(&b.predictions) {
        assert_eq!(x.predicted_class, y.predicted_class);
        for (u, v) in x.logits_final.values().iter().zip(y.logits_final.values()) {
            assert!((u - v).abs() <= 1e-9);
        }
    }
}

#[test]
fn mode_collapse_chain() {
    let ds = synth_generate(&small_spec(4)).unwrap();
    let classes = |cfg: RunConfig| -> Vec<usize> {
        run_stream(&ds, &cfg)
            .unwrap()
            .predictions
            .iter()
            .map(|p| p.predicted_class)
            .collect()
    };
    let clip = classes(RunConfig::with_mode(Mode::ClipOnly));
    let no_lambda = classes(RunConfig {
        lambda: 0.0,
        ..RunConfig::default()
    });
    let empty_cache = classes(RunConfig {
        cache_q: 0,
        ..RunConfig::with_mode(Mode::Baseline)
    });
    assert_eq!(clip, no_lambda);
    assert_eq!(clip, empty_cache);
}

#[test]
fn single_sample_never_retrieves_itself() {
    let ds = synth_generate(&SynthSpec {
        per_class: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    for mode in [Mode::Baseline, Mode::MsTta] {
        let cfg = RunConfig::with_mode(mode);
        let mut state = StreamState::new(&cfg, ds.classes()).unwrap();
        let p = process_sample(&ds.features()[0], &mut state, &cfg, ds.text()).unwrap();
        assert!(p.logits_aux.values().iter().all(|&x| x == 0.0));
        assert_eq!(p.refined, ds.features()[0]);
    }
}

#[test]
fn refined_neighbor_source_runs() {
    let ds = synth_generate(&small_spec(5)).unwrap();
    let cfg = RunConfig {
        ms: MeanShiftConfig {
            neighbor_source: NeighborSource::CacheRefined,
            bank_capacity: Some(64),
            ..MeanShiftConfig::default()
        },
        ..RunConfig::default()
    };
    let out = run_stream(&ds, &cfg).unwrap();
    assert_eq!(out.state.bank.len(), 64);
    assert!(out.report.top1_accuracy > 0.0);
}

#[test]
fn runs_are_deterministic() {
    let ds = synth_generate(&small_spec(6)).unwrap();
    let a = run_stream(&ds, &RunConfig::default()).unwrap();
    let b = run_stream(&ds, &RunConfig::default()).unwrap();
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.predictions, b.predictions);
}

#[test]
fn accuracy_bounds_and_per_class_weighting() {
    let ds = synth_generate(&SynthSpec {
        label_noise: 0.1,
        ..small_spec(7)
    })
    .unwrap();
    for mode in [Mode::ClipOnly, Mode::Baseline, Mode::MsTta] {
        let r = evaluate_stream(&ds, &RunConfig::with_mode(mode)).unwrap();
        assert!((0.0..=1.0).contains(&r.top1_accuracy));
        assert_eq!(r.top1_accuracy, r.correct as f64 / r.n_samples as f64);
        let weighted: f64 = r
            .per_class_accuracy
            .iter()
            .zip(&r.per_class_count)
            .map(|(a, &n)| a.unwrap_or(0.0) * n as f64)
            .sum::<f64>()
            / r.n_samples as f64;
        assert!((weighted - r.top1_accuracy).abs() < 1e-12);
    }
}

#[test]
fn compactness_improves_after_shift() {
    let ds = synth_generate(&small_spec(8)).unwrap();
    let r = evaluate_stream(&ds, &RunConfig::default()).unwrap();
    assert!(r.compactness_after.unwrap() > r.compactness_before.unwrap());
    let base = evaluate_stream(&ds, &RunConfig::with_mode(Mode::Baseline)).unwrap();
    assert_eq!(base.compactness_after, base.compactness_before);
}

#[test]
fn sweep_examples() {
    let ds = synth_generate(&small_spec(9)).unwrap();
    let alphas = [1.0, 0.0, 0.4, 0.2, 0.8, 0.6];
    let rows = sweep(&ds, &RunConfig::default(), SweepAxis::Alpha, &alphas, Some(2)).unwrap();
    assert_eq!(rows.len(), 6);
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    assert_eq!(values, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);

    let baseline = evaluate_stream(&ds, &RunConfig::with_mode(Mode::Baseline)).unwrap();
    let zero = &rows[0].report;
    assert_eq!(zero.correct, baseline.correct);
    assert_eq!(zero.per_class_accuracy, baseline.per_class_accuracy);
    assert_eq!(zero.compactness_after, baseline.compactness_after);

    let lambda = sweep(&ds, &RunConfig::default(), SweepAxis::Lambda, &[0.0], None).unwrap();
    let clip = evaluate_stream(&ds, &RunConfig::with_mode(Mode::ClipOnly)).unwrap();
    assert_eq!(lambda[0].report.top1_accuracy, clip.top1_accuracy);

    let ks = sweep(&ds, &RunConfig::default(), SweepAxis::K, &[1.0, 2.0, 4.0, 8.0, 16.0], None).unwrap();
    assert_eq!(ks.iter().map(|r| r.report.config_echo.ms.k).collect::<Vec<_>>(), vec![1, 2, 4, 8, 16]);

    assert!(matches!(
        sweep(&ds, &RunConfig::default(), SweepAxis::Alpha, &[], None),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn report_json_round_trip_and_csv_rows() {
    let ds = synth_generate(&small_spec(10)).unwrap();
    let r = evaluate_stream(&ds, &RunConfig::default()).unwrap();
    let json = render_report(&r, ReportFormat::Json).unwrap();
    let back: Report = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    write_report(&r, &path, ReportFormat::Csv).unwrap();
    let csv = fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("dataset,mode,axis,value,n_samples,top1_accuracy"));

    let rows = sweep(&ds, &RunConfig::default(), SweepAxis::Alpha, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], None).unwrap();
    let table = render_sweep(&rows, ReportFormat::Csv).unwrap();
    assert_eq!(table.lines().count(), 7);
    let second = table.lines().nth(2).unwrap();
    assert!(second.contains(",alpha,0.200000,"), "{second}");
}

#[test]
fn reading_validates_payloads() {
    let ds = EmbDataset::from_raw(
        (0..40).map(|i| 1.0 + i as f32).collect(),
        (0..10).map(|i| i % 2).collect(),
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        4,
        None,
        "validation",
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let labels = dir.path().join("labels.i64");
    let bytes = fs::read(&labels).unwrap();

    fs::write(&labels, &bytes[..72]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::ManifestMismatch { .. })));

    let mut bad = bytes.clone();
    bad[..8].copy_from_slice(&5i64.to_le_bytes());
    fs::write(&labels, &bad).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::LabelOutOfRange { row: 0, label: 5, .. })));
    bad[..8].copy_from_slice(&(-1i64).to_le_bytes());
    fs::write(&labels, &bad).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::LabelOutOfRange { label: -1, .. })));
    fs::write(&labels, &bytes).unwrap();

    let features = dir.path().join("features.f32");
    let mut raw = fs::read(&features).unwrap();
    raw[16..32].fill(0);
    fs::write(&features, &raw).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::ZeroVector)));

    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::UnsupportedVersion(2))));

    assert!(read_dataset(&dir.path().join("missing")).unwrap_err().is_io());
}

#[test]
fn rewrite_is_byte_identical_and_flags_non_unit_rows() {
    let ds = EmbDataset::from_raw(
        vec![2.0, 0.0, 0.0, 3.0, 1.0, 1.0],
        vec![0, 1, 0],
        vec![1.0, 0.0, 0.0, 1.0],
        2,
        None,
        "non-unit",
    )
    .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(&ds, a.path()).unwrap();
    write_dataset(&read_dataset(a.path()).unwrap(), b.path()).unwrap();
    for name in ["manifest.json", "features.f32", "labels.i64", "text.f32"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let r = evaluate_stream(&read_dataset(b.path()).unwrap(), &RunConfig::default()).unwrap();
    assert_eq!(r.renormalized_rows, 3);
    assert_eq!(ds.features()[2], Embedding::normalize(&[1.0, 1.0]).unwrap());
}
