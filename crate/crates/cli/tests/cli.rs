//! End-to-end tests driving the installed binary through every subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bnn_core::fxcore::{PackedDenseRow, PackedKernel3x3};
use bnn_core::model_io::{encode_model, LayerWeights, Model};
use bnn_core::netgraph::{count_ops, parse_network, PlannedLayer, REDUCED_TOPOLOGY};

fn bnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnn")).args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn write_ppm(path: &Path, w: usize, h: usize, pixel: impl Fn(usize) -> u8) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h * 3).map(pixel));
    fs::write(path, bytes).expect("write ppm");
}

fn gen_model(dir: &Path, notation: &str, seed: u64) -> PathBuf {
    let path = dir.join(format!("model-{seed}.tbnn"));
    let out = bnn(&["genmodel", "--network", notation, "--seed", &seed.to_string(), "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    path
}

#[test]
fn classify_prints_scores_and_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "8C3-MP2-16FC-10SVM", 3);
    let image = dir.path().join("in.ppm");
    write_ppm(&image, 32, 32, |i| (i * 7 + 13) as u8);

    let out = bnn(&["classify", "--model", model.to_str().unwrap(), "--image", image.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    for i in 0..10 {
        assert!(text.contains(&format!("score[{i}] = ")), "missing score {i} in {text}");
    }
    assert!(text.contains("argmax: "));
    // No overflow line unless requested.
    assert!(!text.contains("overflow events"));
}

#[test]
fn classify_json_contains_every_text_field() {
    let dir = tempfile::tempdir().unwrap();
    let notation = "8C3-MP2-16FC-10SVM";
    let model = gen_model(dir.path(), notation, 4);
    let image = dir.path().join("in.ppm");
    write_ppm(&image, 32, 32, |i| (i % 251) as u8);

    let out = bnn(&[
        "classify",
        "--model",
        model.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--debug-overflow",
        "--json",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).expect("valid json");

    assert_eq!(report["scores"].as_array().unwrap().len(), 10);
    assert!(report["argmax"].is_u64());
    assert!(report["total_wall_seconds"].is_f64());
    assert!(report["macs_per_second"].is_f64());
    assert!(report["overflow_events"].is_u64());
    let expected_macs = count_ops(&parse_network(notation).unwrap()).unwrap().total;
    assert_eq!(report["total_macs"].as_u64().unwrap(), expected_macs);
    let layers = report["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 4);
    for layer in layers {
        assert!(layer["label"].is_string());
        assert!(matches!(layer["class"].as_str().unwrap(), "conv" | "pool" | "dense"));
        assert!(layer["wall_seconds"].is_f64());
        assert!(layer["macs"].is_u64());
    }

    // The same run without --json must agree on the timing-free fields.
    let text_out = bnn(&["classify", "--model", model.to_str().unwrap(), "--image", image.to_str().unwrap()]);
    let text = stdout_of(&text_out);
    let argmax = report["argmax"].as_u64().unwrap();
    assert!(text.contains(&format!("argmax: {argmax}")));
    for (i, score) in report["scores"].as_array().unwrap().iter().enumerate() {
        assert!(text.contains(&format!("score[{i}] = {}", score.as_i64().unwrap())));
    }
}

#[test]
fn classify_dimension_mismatches_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "8C3-10SVM", 5);
    let camera = dir.path().join("camera.ppm");
    let direct = dir.path().join("direct.ppm");
    write_ppm(&camera, 40, 30, |i| i as u8);
    write_ppm(&direct, 32, 32, |i| i as u8);

    let out = bnn(&["classify", "--model", model.to_str().unwrap(), "--image", camera.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("camera"));

    let out = bnn(&[
        "classify",
        "--model",
        model.to_str().unwrap(),
        "--image",
        direct.to_str().unwrap(),
        "--camera-path",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = bnn(&["classify", "--model", model.to_str().unwrap(), "--image", dir.path().join("nope.ppm").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_camera_path_runs() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "4C3-MP2-10SVM", 6);
    let camera = dir.path().join("camera.ppm");
    write_ppm(&camera, 40, 30, |i| (i * 3) as u8);

    let out = bnn(&[
        "classify",
        "--model",
        model.to_str().unwrap(),
        "--image",
        camera.to_str().unwrap(),
        "--camera-path",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("argmax: "));
}

/// All-plus weights, zero biases and shifts: on an all-255 image the deep
/// conv layer wraps its 16-map group sums, so the debug counter must fire.
fn saturating_model() -> Model {
    let spec = parse_network("16C3-16C3-10SVM").unwrap();
    let mut weights = Vec::new();
    for planned in bnn_core::netgraph::plan_layers(&spec).unwrap() {
        match planned {
            PlannedLayer::Conv3 { in_maps, out_maps, .. } => weights.push(LayerWeights::Conv {
                kernels: vec![PackedKernel3x3::ALL_PLUS; in_maps * out_maps],
                biases: vec![0; out_maps],
                shifts: vec![0; out_maps],
            }),
            PlannedLayer::Svm { in_len, out_units } => weights.push(LayerWeights::Svm {
                rows: vec![PackedDenseRow::from_signs(&vec![1i8; in_len]).unwrap(); out_units],
                biases: vec![0; out_units],
            }),
            _ => unreachable!("topology has no pool or dense layers"),
        }
    }
    Model { spec, weights }
}

#[test]
fn classify_debug_overflow_reports_nonzero_count() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("sat.tbnn");
    fs::write(&model_path, encode_model(&saturating_model()).unwrap()).unwrap();
    let image = dir.path().join("max.ppm");
    write_ppm(&image, 32, 32, |_| 255);

    let out = bnn(&[
        "classify",
        "--model",
        model_path.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--debug-overflow",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    let line = text.lines().find(|l| l.starts_with("overflow events: ")).expect("overflow line");
    let events: u64 = line.trim_start_matches("overflow events: ").parse().unwrap();
    assert!(events > 0, "expected a nonzero count, got {line}");
}

#[test]
fn compare_random_is_deterministic_and_exact() {
    let args = ["compare", "--random", "3", "--seed", "9", "--network", "8C3-MP2-10SVM"];
    let first = bnn(&args);
    let second = bnn(&args);
    assert!(first.status.success(), "{}", stderr_of(&first));
    assert_eq!(stdout_of(&first), stdout_of(&second));
    let text = stdout_of(&first);
    assert!(text.contains("fixed vs naive: 3/3 bit-exact"), "{text}");
    assert!(text.contains("argmax agreement"), "{text}");
}

#[test]
fn compare_model_image_modes() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "6C3-MP2-8FC-10SVM", 11);
    let direct = dir.path().join("direct.ppm");
    let camera = dir.path().join("camera.ppm");
    write_ppm(&direct, 32, 32, |i| (i % 200) as u8);
    write_ppm(&camera, 40, 30, |i| (i % 137) as u8);

    for image in [&direct, &camera] {
        let out = bnn(&["compare", "--model", model.to_str().unwrap(), "--image", image.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr_of(&out));
        assert!(stdout_of(&out).contains("fixed vs naive: 1/1 bit-exact"));
    }
}

#[test]
fn compare_requires_a_mode() {
    let out = bnn(&["compare"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn opcount_builtins_report_totals_and_reduction() {
    let out = bnn(&["opcount", "--builtin", "original", "--builtin", "reduced"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("616966144"), "{text}");
    assert!(text.contains("71518720"), "{text}");
    assert!(text.contains("reduction vs first: 88.41%"), "{text}");
}

#[test]
fn opcount_single_svm_network() {
    let out = bnn(&["opcount", "--network", "10SVM"]);
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("30720"));
}

#[test]
fn opcount_malformed_network_exits_2_with_position() {
    let out = bnn(&["opcount", "--network", "2y48C3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("byte"), "{}", stderr_of(&out));
}

#[test]
fn genmodel_is_deterministic_and_reports_payload() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tbnn");
    let b = dir.path().join("b.tbnn");
    let args = |path: &Path| {
        vec![
            "genmodel".to_string(),
            "--network".to_string(),
            REDUCED_TOPOLOGY.to_string(),
            "--seed".to_string(),
            "21".to_string(),
            "--out".to_string(),
            path.to_str().unwrap().to_string(),
        ]
    };
    let run = |path: &Path| {
        let owned = args(path);
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        bnn(&refs)
    };
    let first = run(&a);
    let second = run(&b);
    assert!(first.status.success(), "{}", stderr_of(&first));
    assert!(second.status.success());
    assert!(stdout_of(&first).contains("996880 bits (124610 bytes)"), "{}", stdout_of(&first));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let different = bnn(&[
        "genmodel",
        "--network",
        REDUCED_TOPOLOGY,
        "--seed",
        "22",
        "--out",
        dir.path().join("c.tbnn").to_str().unwrap(),
    ]);
    assert!(different.status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(dir.path().join("c.tbnn")).unwrap());
}

#[test]
fn genmodel_invalid_notation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bnn(&["genmodel", "--network", "10SVM-4C3", "--seed", "1", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn parse_bench_row(text: &str, row: &str) -> (f64, f64) {
    let line = text.lines().find(|l| l.starts_with(row)).unwrap_or_else(|| panic!("no {row} row in {text}"));
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let value = |num: &str, unit: &str| -> f64 {
        let v: f64 = num.parse().unwrap();
        match unit {
            "us" => v * 1e-6,
            "ms" => v * 1e-3,
            "s" => v,
            other => panic!("unknown unit {other}"),
        }
    };
    (value(tokens[1], tokens[2]), value(tokens[3], tokens[4]))
}

#[test]
fn bench_single_iteration_median_equals_min() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "8C3-MP2-16FC-10SVM", 30);
    let out = bnn(&["bench", "--model", model.to_str().unwrap(), "--iterations", "1"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    let (median, min) = parse_bench_row(&text, "total");
    assert_eq!(median, min);
    assert!(text.contains("host measurement"), "{text}");
}

#[test]
fn bench_reports_opcount_macs_and_ordered_stats() {
    let dir = tempfile::tempdir().unwrap();
    let notation = "8C3-MP2-16FC-10SVM";
    let model = gen_model(dir.path(), notation, 31);
    let out = bnn(&["bench", "--model", model.to_str().unwrap(), "--iterations", "5"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);

    let expected_macs = count_ops(&parse_network(notation).unwrap()).unwrap().total;
    assert!(text.contains(&format!("({expected_macs} MACs per pass)")), "{text}");
    for row in ["conv", "pool", "dense", "total"] {
        let (median, min) = parse_bench_row(&text, row);
        assert!(min <= median, "{row}: min {min} > median {median}");
    }
    assert!(text.contains("iterations: 5"));
}

#[test]
fn bench_zero_iterations_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "8C3-10SVM", 32);
    let out = bnn(&["bench", "--model", model.to_str().unwrap(), "--iterations", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_model_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "8C3-10SVM", 33);
    let mut bytes = fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let bad = dir.path().join("bad.tbnn");
    fs::write(&bad, bytes).unwrap();

    let image = dir.path().join("in.ppm");
    write_ppm(&image, 32, 32, |i| i as u8);
    let out = bnn(&["classify", "--model", bad.to_str().unwrap(), "--image", image.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr_of(&out).is_empty());
}
