use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blsh::dsp::signal_power;
use blsh::dsp::wav::{read_wav, write_wav};
use blsh::store::{load_dictionary, load_model};
use blsh::{AudioClip, Dictionary, ProjectionModel};
use serde_json::Value;

fn blsh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blsh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = blsh(args);
    assert!(
        out.status.success(),
        "blsh {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = blsh(args);
    assert!(
        !out.status.success(),
        "blsh {args:?} unexpectedly succeeded"
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// `speakers` speech clips and as many noise clips of `secs` seconds.
fn sources(dir: &Path, first: u64, speakers: u64, secs: f64) -> PathBuf {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--first-speaker",
        &first.to_string(),
        "--speakers",
        &speakers.to_string(),
        "--duration",
        &secs.to_string(),
    ]);
    dir.to_path_buf()
}

fn keep_first_noise(src: &Path, n: usize) {
    let mut files: Vec<_> = std::fs::read_dir(src.join("noise"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in files.into_iter().skip(n) {
        std::fs::remove_file(f).unwrap();
    }
}

#[test]
fn mix_cross_product_snr_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sources(&tmp.path().join("src"), 0, 2, 0.5);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "mix",
            "--speech-dir",
            s(&src.join("speech")),
            "--noise-dir",
            s(&src.join("noise")),
            "--out",
            s(out),
            "--seed",
            "5",
        ]);
    }
    let records = jsonl(&a.join("manifest.jsonl"));
    assert_eq!(records[0]["record"], "header");
    assert_eq!(records[0]["config"]["seed"], 5);
    let mixtures: Vec<&Value> = records
        .iter()
        .filter(|r| r["record"] == "mixture")
        .collect();
    assert_eq!(mixtures.len(), 4);

    for m in &mixtures {
        let speech: AudioClip<f64> = read_wav(a.join(m["speech"].as_str().unwrap())).unwrap();
        let noise: AudioClip<f64> = read_wav(a.join(m["noise"].as_str().unwrap())).unwrap();
        let snr = 10.0 * (signal_power(&speech.samples) / signal_power(&noise.samples)).log10();
        assert!(snr.abs() < 1e-3, "snr {snr}");
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 13);
    for n in names {
        assert_eq!(
            std::fs::read(a.join(&n)).unwrap(),
            std::fs::read(b.join(&n)).unwrap(),
            "{n:?}"
        );
    }

    let capped = tmp.path().join("capped");
    ok(&[
        "mix",
        "--speech-dir",
        s(&src.join("speech")),
        "--noise-dir",
        s(&src.join("noise")),
        "--out",
        s(&capped),
        "--max-mixtures",
        "3",
        "--snr-db",
        "-5",
    ]);
    let capped = jsonl(&capped.join("manifest.jsonl"));
    assert_eq!(
        capped.iter().filter(|r| r["record"] == "mixture").count(),
        3
    );
    assert_eq!(capped[1]["snr_db"], -5.0);
}

#[test]
fn mix_collects_rate_mismatch_and_rejects_empty_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sources(&tmp.path().join("src"), 0, 1, 0.5);
    write_wav(
        src.join("noise").join("z_8k.wav"),
        &AudioClip::new(vec![0.1f64; 4000], 8000).unwrap(),
    )
    .unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "mix",
        "--speech-dir",
        s(&src.join("speech")),
        "--noise-dir",
        s(&src.join("noise")),
        "--out",
        s(&out),
    ]);
    let records = jsonl(&out.join("manifest.jsonl"));
    let errors: Vec<&Value> = records
        .iter()
        .filter(|r| r.get("error").is_some())
        .collect();
    assert_eq!(errors.len(), 1);
    assert!(errors[0]["error"].as_str().unwrap().contains("sample rate"));

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let err = fails(&[
        "mix",
        "--speech-dir",
        s(&empty),
        "--noise-dir",
        s(&src.join("noise")),
        "--out",
        s(&out),
    ]);
    assert!(err.contains("no WAV files"), "{err}");
}

#[test]
fn build_dict_frame_arithmetic_and_subsampling() {
    let tmp = tempfile::tempdir().unwrap();
    // three one-second clips at 16 kHz give 60 frames each
    let src = sources(&tmp.path().join("src"), 0, 3, 1.0);
    keep_first_noise(&src, 1);
    let mixes = tmp.path().join("mixes");
    ok(&[
        "mix",
        "--speech-dir",
        s(&src.join("speech")),
        "--noise-dir",
        s(&src.join("noise")),
        "--out",
        s(&mixes),
    ]);
    let manifest = mixes.join("manifest.jsonl");

    let full = tmp.path().join("full.blsh");
    ok(&["build-dict", "--manifest", s(&manifest), "--out", s(&full)]);
    let dict: Dictionary<f32> = load_dictionary(&full).unwrap();
    assert_eq!(dict.len(), 180);
    assert_eq!(dict.n_bins(), 513);
    assert!(dict.codes.is_none() && dict.features.is_some());

    let sub = tmp.path().join("sub.blsh");
    ok(&[
        "build-dict",
        "--manifest",
        s(&manifest),
        "--out",
        s(&sub),
        "--subsample",
        "0.1",
    ]);
    assert_eq!(load_dictionary::<f32>(&sub).unwrap().len(), 18);

    let model = tmp.path().join("r.blsm");
    ok(&["train", "--random", "--out", s(&model), "--bits", "70"]);
    let hashed = tmp.path().join("hashed.blsh");
    ok(&[
        "build-dict",
        "--manifest",
        s(&manifest),
        "--out",
        s(&hashed),
        "--model",
        s(&model),
        "--no-features",
    ]);
    let loaded: Dictionary<f32> = load_dictionary(&hashed).unwrap();
    assert_eq!(loaded.codes.as_ref().unwrap().cols(), 70);
    assert!(loaded.features.is_none());

    let err = fails(&[
        "build-dict",
        "--manifest",
        s(&manifest),
        "--out",
        s(&hashed),
        "--no-features",
    ]);
    assert!(err.contains("model"), "{err}");
}

#[test]
fn config_file_is_applied_and_unknown_keys_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.conf");
    std::fs::write(
        &good,
        "# random baseline\nn_bits = 33\nfeature_kind = mel\nmel_bands = 40\nseed = 4\n",
    )
    .unwrap();
    let model = tmp.path().join("m.blsm");
    ok(&[
        "train",
        "--random",
        "--out",
        s(&model),
        "--config",
        s(&good),
    ]);
    let m: ProjectionModel<f32> = load_model(&model).unwrap();
    assert_eq!((m.n_bits(), m.dim()), (33, 40));

    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "hopp = 128\n").unwrap();
    let err = fails(&["train", "--random", "--out", s(&model), "--config", s(&bad)]);
    assert!(err.contains("unknown config key `hopp`"), "{err}");
    let err = fails(&["train", "--random", "--out", s(&model), "--set", "K=0"]);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let train_src = sources(&tmp.path().join("train_src"), 0, 3, 1.0);
    let test_src = sources(&tmp.path().join("test_src"), 50, 2, 1.0);
    keep_first_noise(&test_src, 1);
    let train_mix = tmp.path().join("train_mix");
    let test_mix = tmp.path().join("test_mix");
    for (src, out) in [(&train_src, &train_mix), (&test_src, &test_mix)] {
        ok(&[
            "mix",
            "--speech-dir",
            s(&src.join("speech")),
            "--noise-dir",
            s(&src.join("noise")),
            "--out",
            s(out),
        ]);
    }
    let dict = tmp.path().join("dict.blsh");
    ok(&[
        "build-dict",
        "--manifest",
        s(&train_mix.join("manifest.jsonl")),
        "--out",
        s(&dict),
        "--subsample",
        "0.25",
    ]);

    // fixed seed gives identical model bytes
    let m1 = tmp.path().join("m1.blsm");
    let m2 = tmp.path().join("m2.blsm");
    let diag = tmp.path().join("diag.jsonl");
    let small = [
        "--bits",
        "5",
        "--set",
        "epochs_per_learner=5",
        "--seed",
        "3",
    ];
    ok(&[
        &[
            "train",
            "--dict",
            s(&dict),
            "--out",
            s(&m1),
            "--diagnostics",
            s(&diag),
        ][..],
        &small[..],
    ]
    .concat());
    ok(&[
        &["train", "--dict", s(&dict), "--out", s(&m2)][..],
        &small[..],
    ]
    .concat());
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let diag = jsonl(&diag);
    assert_eq!(diag[0]["record"], "header");
    assert_eq!(diag.len(), 6);
    for d in &diag[1..] {
        let eps = d["epsilon"].as_f64().unwrap();
        assert!(eps < 0.5, "epsilon {eps}");
    }

    let out = tmp.path().join("out");
    ok(&[
        "denoise",
        "--dict",
        s(&dict),
        "--model",
        s(&m1),
        "--manifest",
        s(&test_mix.join("manifest.jsonl")),
        "--out",
        s(&out),
    ]);
    let enhanced = jsonl(&out.join("enhanced.jsonl"));
    assert_eq!(enhanced.len(), 3);
    for e in &enhanced[1..] {
        let est: AudioClip<f64> = read_wav(e["enhanced"].as_str().unwrap()).unwrap();
        let mix: AudioClip<f64> = read_wav(e["mixture"].as_str().unwrap()).unwrap();
        assert_eq!(est.len(), mix.len());
    }

    let report_json = tmp.path().join("report.json");
    let table = ok(&[
        "evaluate",
        "--manifest",
        s(&out.join("enhanced.jsonl")),
        "--json",
        s(&report_json),
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("mean\t") && lines[4].starts_with("std\t"));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(&report_json).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    let hand = rows
        .iter()
        .map(|r| r["scores"]["sdr_db"].as_f64().unwrap())
        .sum::<f64>()
        / rows.len() as f64;
    assert!((report["mean"]["sdr_db"].as_f64().unwrap() - hand).abs() < 1e-12);

    // cosine mode needs no model; a positional input has no references to score
    let out2 = tmp.path().join("out2");
    let mixture = enhanced[1]["mixture"].as_str().unwrap();
    ok(&[
        "denoise",
        "--dict",
        s(&dict),
        "--mode",
        "cosine",
        "--out",
        s(&out2),
        mixture,
    ]);
    let err = fails(&["evaluate", "--manifest", s(&out2.join("enhanced.jsonl"))]);
    assert!(err.contains("no clean references"), "{err}");

    let err = fails(&["denoise", "--dict", s(&dict), "--out", s(&out2), mixture]);
    assert!(err.contains("needs a projection model"), "{err}");
    let err = fails(&[
        "denoise",
        "--dict",
        s(&dict),
        "--mode",
        "cosine",
        "-k",
        "100000",
        "--out",
        s(&out2),
        mixture,
    ]);
    assert!(err.contains("exceeds"), "{err}");
}

#[test]
fn evaluate_single_file_and_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let speech =
        AudioClip::new((0..4000).map(|i| (i as f64 * 0.05).sin()).collect(), 16000).unwrap();
    let noise = AudioClip::new(
        (0..4000)
            .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5)
            .collect(),
        16000,
    )
    .unwrap();
    let est = AudioClip::new(
        speech
            .samples
            .iter()
            .zip(&noise.samples)
            .map(|(s, n)| s + 0.1 * n)
            .collect(),
        16000,
    )
    .unwrap();
    for (name, clip) in [("s.wav", &speech), ("n.wav", &noise), ("e.wav", &est)] {
        write_wav(tmp.path().join(name), clip).unwrap();
    }
    let manifest = tmp.path().join("enhanced.jsonl");
    std::fs::write(
        &manifest,
        "{\"record\":\"enhanced\",\"name\":\"one\",\"enhanced\":\"e.wav\",\"mixture\":\"e.wav\",\"speech\":\"s.wav\",\"noise\":\"n.wav\"}\n",
    )
    .unwrap();
    let table = ok(&["evaluate", "--manifest", s(&manifest)]);
    assert_eq!(table.lines().filter(|l| l.starts_with("one\t")).count(), 1);
    assert_eq!(table.lines().count(), 4);

    std::fs::write(&manifest, "").unwrap();
    let err = fails(&["evaluate", "--manifest", s(&manifest)]);
    assert!(err.contains("no enhanced records"), "{err}");
}

#[test]
fn bench_reports_words_per_row() {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("bench.json");
    let table = ok(&[
        "bench",
        "--sizes",
        "200,400",
        "--bits",
        "64,128",
        "--dim",
        "32",
        "--queries",
        "3",
        "--json",
        s(&json),
    ]);
    assert_eq!(table.lines().count(), 1 + 2 + 4);
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let words: Vec<(u64, u64)> = rows
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["mode"] == "hamming")
        .map(|r| {
            (
                r["width"].as_u64().unwrap(),
                r["words_per_row"].as_u64().unwrap(),
            )
        })
        .collect();
    assert_eq!(words, vec![(64, 1), (64, 1), (128, 2), (128, 2)]);
    let err = fails(&["bench", "--modes", "euclid"]);
    assert!(err.contains("unknown search mode"), "{err}");
}
