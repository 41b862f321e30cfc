use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const EN: [&str; 6] = ["the", "cat", "dog", "runs", "fast", "home"];
const ES: [&str; 6] = ["el", "gato", "perro", "corre", "rapido", "casa"];

fn mmx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmx"))
        .args(args)
        .env_remove("MMX_LOG")
        .output()
        .expect("spawn mmx")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "mmx failed: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr is empty");
    serde_json::from_str(last).unwrap_or_else(|_| panic!("not JSON: {last}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Sentences alternate between the lexicons on a fixed pattern; the label is
/// the token's language.
fn corpus(n: usize, offset: usize) -> String {
    let mut out = String::new();
    for s in 0..n {
        for t in 0..3 + (s % 3) {
            let k = s * 7 + t * 3 + offset;
            if (s + t) % 2 == 0 {
                out.push_str(&format!("{}\tlang1\tEN\n", EN[k % EN.len()]));
            } else {
                out.push_str(&format!("{}\tlang2\tES\n", ES[k % ES.len()]));
            }
        }
        out.push('\n');
    }
    out
}

fn vec_file(words: &[&str], axis: usize) -> String {
    let mut out = format!("{} 4\n", words.len());
    for (i, w) in words.iter().enumerate() {
        let mut v = [0.05 * i as f64, -0.03 * i as f64, 0.02, 0.01];
        v[axis] += 1.0;
        out.push_str(&format!("{w} {} {} {} {}\n", v[0], v[1], v[2], v[3]));
    }
    out
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: TempDir::new().unwrap(),
        };
        ws.write("train.conll", &corpus(24, 0));
        ws.write("dev.conll", &corpus(8, 1));
        ws.write("en.vec", &vec_file(&EN, 0));
        ws.write("es.vec", &vec_file(&ES, 1));
        let en = ws.path("en.vec");
        let es = ws.path("es.vec");
        ws.write(
            "cfg.json",
            &serde_json::json!({
                "task": "pos",
                "seed": 3,
                "embedder": {"mode": "mme-concat"},
                "embeddings": {"word": [en, es]},
                "tagger": {"layers": 1, "heads": 2, "hidden": 8, "ff_dim": 16, "batch_size": 4, "max_epochs": 40, "early_stop_patience": 2}
            })
            .to_string(),
        );
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (cfg, train, dev, out) = (self.path("cfg.json"), self.path("train.conll"), self.path("dev.conll"), self.path(out));
        let mut args = vec!["train", "--config", p(&cfg), "--train", p(&train), "--dev", p(&dev), "--out", p(&out)];
        args.extend_from_slice(extra);
        mmx(&args)
    }
}

#[test]
fn version_prints_build_metadata() {
    let o = mmx(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    let long = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(long.contains("target:") && long.contains("rustc"), "{long}");
    let short = mmx(&["-V"]);
    assert!(short.status.success());
}

#[test]
fn usage_errors_exit_2() {
    let o = mmx(&["stats", "--data", "x.conll", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(mmx(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mmx(&[]).status.code(), Some(2));
    let ws = Workspace::new();
    assert_eq!(ws.train("m.mmx", &["--mode", "glove"]).status.code(), Some(2));
}

#[test]
fn stats_counts_languages() {
    let ws = Workspace::new();
    let data = ws.write("s.conll", "a\tlang1\tX\nb\tlang2\tY\nc\tlang1\tX\n\nd\tlang1\tX\ne\tother\tZ\n");
    let v = stdout_json(&mmx(&["stats", "--data", p(&data)]));
    assert_eq!(v["sentences"], 2);
    assert_eq!(v["tokens"], 5);
    assert_eq!(v["ml"], "lang1");
    assert_eq!(v["ml_tokens"], 3);
    // lang2 and other tie on one token; the lexicographic order decides.
    assert_eq!(v["el"], "lang2");
    assert_eq!(v["tie"], false);
    assert_eq!(v["lang_counts"]["other"], 1);
}

#[test]
fn stats_without_language_column_is_a_runtime_error() {
    let ws = Workspace::new();
    let data = ws.write("s.conll", "a\tX\n");
    let o = mmx(&["stats", "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "runtime");
}

#[test]
fn missing_embedding_file_exits_3_with_pointer() {
    let ws = Workspace::new();
    let gone = ws.path("missing.vec");
    ws.write(
        "cfg.json",
        &serde_json::json!({"task": "pos", "embedder": {"mode": "mme-linear"}, "embeddings": {"word": [ws.path("en.vec"), gone]}})
            .to_string(),
    );
    let o = ws.train("m.mmx", &[]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "config");
    assert_eq!(e["pointer"], "/embeddings/word/1");
    assert!(e["message"].as_str().unwrap().contains("missing.vec"));
    assert!(!ws.path("m.mmx").exists());
}

#[test]
fn schema_violation_exits_3_with_pointer() {
    let ws = Workspace::new();
    ws.write("cfg.json", r#"{"task": "pos", "tagger": {"hidden": -4}}"#);
    let e = stderr_json(&ws.train("m.mmx", &[]));
    assert_eq!(e["pointer"], "/tagger/hidden");
    ws.write("cfg.json", r#"{"task": "chunking"}"#);
    let o = ws.train("m.mmx", &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["pointer"], "/task");
}

#[test]
fn flag_breaks_a_config_that_was_valid() {
    let ws = Workspace::new();
    let o = ws.train("m.mmx", &["--heads", "3"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["pointer"], "/tagger");
}

#[test]
fn train_eval_predict_round_trip() {
    let ws = Workspace::new();
    let report = stdout_json(&ws.train("m.mmx", &[]));
    assert!(report["best_dev"].as_f64().unwrap() >= 0.95, "{report}");
    assert!(report["frozen_params"].as_u64().unwrap() > 0);

    let model = ws.path("m.mmx");
    let dev = ws.path("dev.conll");
    let metric = stdout_json(&mmx(&["eval", "--model", p(&model), "--data", p(&dev)]));
    assert!(metric["accuracy"].as_f64().unwrap() >= 0.95);

    let out = ws.path("pred.conll");
    let o = mmx(&["predict", "--model", p(&model), "--input", p(&dev), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pred = fs::read_to_string(&out).unwrap();
    let gold = fs::read_to_string(&dev).unwrap();
    assert_eq!(pred.lines().count(), gold.lines().count());
    // Tokens and language ids pass through untouched.
    for (a, b) in pred.lines().zip(gold.lines()) {
        let strip = |l: &str| l.rsplit_once('\t').map(|x| x.0.to_string()).unwrap_or_default();
        assert_eq!(strip(a), strip(b));
    }

    let bare = ws.write("bare.txt", "the\ngato\n\nperro\n");
    let out = ws.path("bare.conll");
    let o = mmx(&["predict", "--model", p(&model), "--input", p(&bare), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tagged = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = tagged.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[2] == [""] && rows[4] == [""]);
    for (row, token) in [(0, "the"), (1, "gato"), (3, "perro")] {
        assert_eq!(rows[row][0], token);
        assert!(["EN", "ES"].contains(&rows[row][1]));
    }
}

#[test]
fn training_is_reproducible_and_flags_win() {
    let ws = Workspace::new();
    let a = stdout_json(&ws.train("a.mmx", &["--epochs", "2"]));
    let b = stdout_json(&ws.train("b.mmx", &["--epochs", "2"]));
    assert_eq!(a["epochs_run"], 2);
    assert_eq!(a["best_dev"], b["best_dev"]);
    assert_eq!(fs::read(ws.path("a.mmx")).unwrap(), fs::read(ws.path("b.mmx")).unwrap());
    ws.train("c.mmx", &["--epochs", "2", "--seed", "4"]);
    assert_ne!(fs::read(ws.path("a.mmx")).unwrap(), fs::read(ws.path("c.mmx")).unwrap());
}

#[test]
fn ensemble_train_and_predict() {
    let ws = Workspace::new();
    let (cfg, train, dev) = (ws.path("cfg.json"), ws.path("train.conll"), ws.path("dev.conll"));
    let prefix = ws.path("ens");
    let o = mmx(&[
        "ensemble-train", "--config", p(&cfg), "--train", p(&train), "--dev", p(&dev), "--out", p(&prefix), "--k", "3",
        "--jobs", "2", "--epochs", "3",
    ]);
    let v = stdout_json(&o);
    let seeds: Vec<u64> = v["members"].as_array().unwrap().iter().map(|m| m["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [3, 4, 5]);
    for k in 0..3 {
        assert!(ws.path(&format!("ens.{k}.mmx")).is_file());
    }
    let manifest = ws.path("ens.json");
    let out = ws.path("vote.conll");
    let o = mmx(&["ensemble-predict", "--manifest", p(&manifest), "--input", p(&dev), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(&out).unwrap().lines().count(),
        fs::read_to_string(&dev).unwrap().lines().count()
    );
}

#[test]
fn align_writes_orthogonal_map() {
    let ws = Workspace::new();
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let mut src = format!("{} 3\n", words.len());
    let mut tgt = src.clone();
    for (i, w) in words.iter().enumerate() {
        let x = [((i * 7) % 11) as f64 - 5.0, ((i * 5) % 13) as f64 - 6.0, ((i * 3) % 7) as f64 - 3.0];
        // Target space is the source with the first two axes swapped.
        src.push_str(&format!("{w} {} {} {}\n", x[0], x[1], x[2]));
        tgt.push_str(&format!("{w} {} {} {}\n", x[1], x[0], x[2]));
    }
    let (s, t) = (ws.write("src.vec", &src), ws.write("tgt.vec", &tgt));
    let (w, mapped) = (ws.path("W.bin"), ws.path("mapped.vec"));
    let v = stdout_json(&mmx(&[
        "align", "--src", p(&s), "--tgt", p(&t), "--iters", "2", "--out", p(&w), "--mapped", p(&mapped),
    ]));
    assert_eq!(v["dim"], 3);
    assert_eq!(v["seed_pairs"], 30);
    assert!(v["orthogonality_error"].as_f64().unwrap() < 1e-9);
    let bytes = fs::read(&w).unwrap();
    assert_eq!(&bytes[..4], b"MMXW");
    assert_eq!(bytes.len(), 4 + 4 + 9 * 8);
    let (m, dim) = mmx_core::align::read_w(bytes.as_slice()).unwrap();
    assert_eq!(dim, 3);
    let swap = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    for (a, b) in m.iter().zip(swap) {
        assert!((a - b).abs() < 1e-9, "{m:?}");
    }
    assert!(fs::read_to_string(&mapped).unwrap().starts_with("30 3\n"));
}

#[test]
fn bench_reports() {
    let ws = Workspace::new();
    stdout_json(&ws.train("m.mmx", &["--epochs", "1"]));
    let model = ws.path("m.mmx");
    let csv = ws.path("speed.csv");
    let v = stdout_json(&mmx(&[
        "bench", "speed", "--model", p(&model), "--lengths", "4,8,5000", "--runs", "2", "--warmup", "1", "--out", p(&csv),
    ]));
    assert_eq!(v["reports"][0]["skipped"], serde_json::json!([5000]));
    let text = fs::read_to_string(&csv).unwrap();
    let rows = mmx_core::bench::parse_csv(&text).unwrap();
    assert_eq!(rows.iter().map(|r| r.length).collect::<Vec<_>>(), [4, 8]);
    assert!(rows.iter().all(|r| r.model == "m" && r.runs == 2 && r.unit == mmx_core::bench::LengthUnit::Words));

    let mem = ws.path("mem.json");
    stdout_json(&mmx(&["bench", "memory", "--model", p(&model), "--length", "16", "--out", p(&mem)]));
    let reports: Vec<mmx_core::bench::MemoryReport> = serde_json::from_slice(&fs::read(&mem).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].length, 16);
    assert!(reports[0].activation_bytes > 0);
    assert_eq!(reports[0].activation_bytes % 4, 0);

    let bad = ws.path("speed.txt");
    let o = mmx(&["bench", "speed", "--model", p(&model), "--lengths", "4", "--runs", "1", "--out", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn log_level_from_environment() {
    let ws = Workspace::new();
    let data = ws.write("s.conll", "a\tlang1\tX\nb\tlang2\tY\n");
    let o = Command::new(env!("CARGO_BIN_EXE_mmx"))
        .args(["stats", "--data", p(&data)])
        .env("MMX_LOG", "debug")
        .output()
        .unwrap();
    assert!(o.status.success());
}
