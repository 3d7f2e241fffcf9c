use std::fs;

use urbanfuse::classify::{self, ClassifierConfig, ClassifierModel, GbdtConfig};
use urbanfuse::ingest::{self, Concept, VisualFeatureEntry, VISUAL_DIMS};
use urbanfuse::synth::{self, SynthConfig};
use urbanfuse::temporal::time_block;
use urbanfuse::Error;

fn small_synth() -> synth::SynthOutput {
    synth::generate(&SynthConfig {
        num_reports: 120,
        image_rate: 0.5,
        seed: 21,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn every_input_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_synth();
    let p = |f: &str| dir.path().join(f);

    ingest::save_reports(&out.dataset, &p("reports.jsonl")).unwrap();
    let reports = ingest::load_reports(&p("reports.jsonl")).unwrap();
    assert_eq!(reports.reports(), out.dataset.reports());
    assert_eq!(reports.taxonomy(), out.dataset.taxonomy());

    ingest::save_geo_objects(&out.geo_objects, &p("geo.csv")).unwrap();
    assert_eq!(ingest::load_geo_objects(&p("geo.csv")).unwrap(), out.geo_objects);

    ingest::save_historical_events(&out.history, &p("hist.csv")).unwrap();
    assert_eq!(ingest::load_historical_events(&p("hist.csv")).unwrap(), out.history);

    ingest::save_weather(&out.weather, &p("weather.csv")).unwrap();
    assert_eq!(ingest::load_weather(&p("weather.csv")).unwrap(), out.weather);

    ingest::save_visual_features(&out.visual, &p("visual.jsonl")).unwrap();
    assert_eq!(ingest::load_visual_features(&p("visual.jsonl")).unwrap(), out.visual);

    let block = time_block("time", &out.dataset).unwrap();
    ingest::save_block(&block, &p("time.tsv")).unwrap();
    assert_eq!(ingest::load_block(&p("time.tsv")).unwrap(), block);
}

#[test]
fn bad_inputs_are_reported_precisely() {
    let dir = tempfile::tempdir().unwrap();
    let geo = dir.path().join("geo.csv");
    fs::write(&geo, "object_type,lat,lon\ntree,abc,4.9\n").unwrap();
    match ingest::load_geo_objects(&geo) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 2);
            assert!(message.contains("lat"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    let weather = dir.path().join("weather.csv");
    fs::write(&weather, "timestamp,temperature\n2018-03-01 10:00:00,4.5\n2018-03-01 10:30:00,5.0\n").unwrap();
    let err = ingest::load_weather(&weather).unwrap_err();
    assert!(err.to_string().contains("2018-03-01 10:00"), "{err}");

    let visual = dir.path().join("visual.jsonl");
    let entry = VisualFeatureEntry {
        report_id: "r1".into(),
        vector: vec![0.0; VISUAL_DIMS - 1],
        concepts: vec![
            Concept {
                label: "tree".into(),
                prob: 0.6,
            },
            Concept {
                label: "road".into(),
                prob: 0.3,
            },
        ],
    };
    fs::write(&visual, serde_json::to_string(&entry).unwrap()).unwrap();
    let err = ingest::load_visual_features(&visual).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("2047"), "{err}");
}

#[test]
fn saved_models_predict_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_synth();
    let block = time_block("time", &out.dataset).unwrap();
    let y = out.dataset.labels(urbanfuse::Target::Main).unwrap();
    let labels = out.dataset.taxonomy().main_classes().to_vec();
    let configs = [
        ClassifierConfig::default(),
        ClassifierConfig::Gbdt(GbdtConfig {
            rounds: 5,
            max_depth: 3,
            ..Default::default()
        }),
    ];
    for cfg in configs {
        let model = classify::train(&cfg, block.matrix(), &y, &labels).unwrap();
        let path = dir.path().join("model.json");
        ingest::save_model(&model, &path).unwrap();
        let back: ClassifierModel = ingest::load_model(&path).unwrap();
        assert_eq!(
            back.predict_proba(block.matrix()).unwrap(),
            model.predict_proba(block.matrix()).unwrap()
        );

        let text = fs::read_to_string(&path).unwrap();
        let truncated = dir.path().join("truncated.json");
        fs::write(&truncated, &text[..text.len() / 2]).unwrap();
        assert!(matches!(ingest::load_model::<ClassifierModel>(&truncated), Err(Error::Corrupt(_))));

        let bumped = dir.path().join("bumped.json");
        fs::write(&bumped, text.replacen("\"format_version\":1", "\"format_version\":99", 1)).unwrap();
        assert!(matches!(
            ingest::load_model::<ClassifierModel>(&bumped),
            Err(Error::Version { found: 99, expected: 1 })
        ));
    }
}
