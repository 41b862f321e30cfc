mod common;

use mmx_core::bench::*;
use mmx_core::presets::Mode;
use mmx_core::synthetic::{self, toy, SyntheticSpec};
use mmx_core::tagger::TaggerModel;

fn toy_models() -> Vec<(String, TaggerModel)> {
    let c = synthetic::generate(&SyntheticSpec::default()).unwrap();
    let t = synthetic::tables(&c, toy::TABLE_DIM, 5).unwrap();
    Mode::ALL
        .into_iter()
        .map(|m| (m.to_string(), toy::model(m, &c, &t, 2).unwrap()))
        .collect()
}

fn instrumented(model: &TaggerModel, length: usize) -> (MemoryReport, usize) {
    let r = measure_memory("m", model, length, 3).unwrap();
    let tokens = model.prepare(&dummy_tokens(model, length, 3).unwrap());
    (r, common::activation_elems(model, &tokens))
}

#[test]
fn toy_memory_matches_shape_algebra() {
    for (name, m) in toy_models() {
        for length in [1, 2, 7, 16, 64] {
            let (r, elems) = instrumented(&m, length);
            assert_eq!(r.activation_bytes, 4 * elems as u64, "{name} at {length}");
            assert!(r.activation_bytes >= r.largest_buffer_bytes);
            assert_eq!(r.by_scope.values().sum::<u64>(), r.activation_bytes);
        }
    }
}

#[test]
fn reference_memory_matches_shape_algebra() {
    for (name, m) in reference::all(1).unwrap() {
        for length in [16, 100] {
            let (r, elems) = instrumented(&m, length);
            assert_eq!(r.activation_bytes, 4 * elems as u64, "{name} at {length}");
            assert_eq!(r.param_bytes, 4 * m.count_params().total as u64);
        }
    }
}

#[test]
fn memory_grows_with_length() {
    for (name, m) in toy_models() {
        let mut last = 0;
        for length in [1, 4, 16, 64, 128] {
            let (r, _) = instrumented(&m, length);
            assert!(r.activation_bytes >= last, "{name}");
            last = r.activation_bytes;
        }
    }
}

fn sized(layers: usize, hidden: usize) -> TaggerModel {
    let c = synthetic::generate(&SyntheticSpec::default()).unwrap();
    let t = synthetic::tables(&c, toy::TABLE_DIM, 5).unwrap();
    let config = mmx_core::tagger::TaggerConfig {
        layers,
        hidden,
        ff_dim: 2 * hidden,
        ..toy::config(1)
    };
    mmx_core::presets::build_model(
        &toy::recipe(Mode::WordSingle),
        &config,
        c.train.label_set().to_vec(),
        c.train.scheme(),
        &toy::resources(Mode::WordSingle, &t),
        std::iter::empty(),
    )
    .unwrap()
}

#[test]
fn zero_layer_encoder_has_only_input_and_output_buffers() {
    let m = sized(0, 32);
    let n = 20;
    let (r, elems) = instrumented(&m, n);
    assert_eq!(r.activation_bytes, 4 * elems as u64);
    let l = m.labels().len();
    let d = toy::TABLE_DIM;
    // lookup, projection matmul and bias, positions, position add, layer norm
    // with its scale and shift, then the emission matmul and bias.
    let expected = n * d + 4 * n * 32 + 3 * n * 32 + 2 * n * l;
    assert_eq!(r.activation_bytes, 4 * expected as u64);
    assert_eq!(r.by_scope.keys().collect::<Vec<_>>(), ["embed", "emissions", "input", "output"]);
}

#[test]
fn doubling_hidden_doubles_width_proportional_buffers() {
    let n = 24;
    let (small, _) = instrumented(&sized(2, 32), n);
    let (wide, elems) = instrumented(&sized(2, 64), n);
    assert_eq!(wide.activation_bytes, 4 * elems as u64);
    // Feed-forward buffers are all n x hidden or n x ff_dim.
    assert_eq!(wide.by_scope["layer1.feedforward"], 2 * small.by_scope["layer1.feedforward"]);
    // Attention adds heads x n x n score buffers that do not depend on width.
    let att = |r: &MemoryReport| r.by_scope["layer0.attention"];
    let scores = 4 * 4 * 3 * (n * n) as u64;
    assert_eq!(att(&wide) - scores, 2 * (att(&small) - scores));
}

#[test]
fn speed_report_contracts() {
    let models = toy_models();
    let (_, m) = &models[0];
    let one = measure_speed("m", m, &[4, 8], SpeedOptions { runs: 1, warmup: 0, seed: 0 }).unwrap();
    for t in &one.rows {
        assert_eq!((t.mean_ms, t.median_ms, t.min_ms), (t.max_ms, t.max_ms, t.max_ms));
        assert_eq!(t.throughput, 1000.0 / t.mean_ms);
    }
    assert!(measure_speed("m", m, &[4], SpeedOptions { runs: 0, warmup: 0, seed: 0 }).is_err());
    let r = measure_speed("m", m, &[8, 16, 5000], SpeedOptions { runs: 2, warmup: 1, seed: 0 }).unwrap();
    assert_eq!(r.skipped, vec![5000]);
    assert_eq!(r.rows.len(), 2);
}

#[test]
fn doubling_runs_keeps_mean_stable() {
    let models = toy_models();
    let (_, m) = &models[1];
    let opts = |runs| SpeedOptions { runs, warmup: 5, seed: 0 };
    let a = measure_speed("m", m, &[32], opts(30)).unwrap().rows[0].clone();
    let b = measure_speed("m", m, &[32], opts(60)).unwrap().rows[0].clone();
    assert!((a.mean_ms - b.mean_ms).abs() <= 3.0 * a.std_ms.max(b.std_ms) + 1e-3, "{a:?} {b:?}");
}

#[test]
fn subword_lengths_count_units() {
    for (name, m) in toy_models() {
        let tokens = dummy_tokens(&m, 37, 1).unwrap();
        assert_eq!(m.embedder().encoder_length(&m.prepare(&tokens)), 37, "{name}");
        assert_eq!(dummy_tokens(&m, 37, 1).unwrap(), tokens);
    }
}

fn fake_reports() -> Vec<SpeedReport> {
    ["alpha", "beta"]
        .iter()
        .enumerate()
        .map(|(i, name)| SpeedReport {
            model: name.to_string(),
            unit: if i == 0 { LengthUnit::Words } else { LengthUnit::Subwords },
            runs: 3,
            warmup: 1,
            rows: [16, 32, 64]
                .iter()
                .map(|&l| Timing::from_samples(l, &[l as f64 * 0.1, l as f64 * 0.12, l as f64 * 0.11]).unwrap())
                .collect(),
            skipped: vec![],
        })
        .collect()
}

#[test]
fn reports_render_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let reports = fake_reports();
    let csv_path = dir.path().join("speed.csv");
    emit_report(&reports, Format::Csv, &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(parse_csv(&text).unwrap(), csv_rows(&reports));

    let json_path = dir.path().join("speed.json");
    emit_report(&reports, Format::Json, &json_path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);
    assert_eq!(v["reports"][1]["unit"], "subwords");

    let svg_path = dir.path().join("speed.svg");
    emit_report(&reports, Format::Svg, &svg_path).unwrap();
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.starts_with("<svg"));

    assert!(emit_report(&[], Format::Csv, &csv_path).is_err());
    assert!(emit_report(&reports, Format::Csv, &dir.path().join("missing/dir/x.csv")).is_err());
}
