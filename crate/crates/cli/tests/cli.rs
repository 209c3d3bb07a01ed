use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gma_bench::config::Manifest;
use gma_core::agreement::{synthetic_study, write_label_csv, SyntheticStudySpec};
use gma_neural::ablation::{unique_cells, AblationTable};

fn bench() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gma-bench"));
    c.env_remove("GMA_BENCH_SEED").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bench().args(args).output().expect("spawn")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            for (k, v) in tree(&path) {
                out.insert(format!("{}/{k}", path.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            );
        }
    }
    out
}

fn synth(dir: &Path, n: &str, render: bool) {
    let mut args = vec![
        "--seed",
        "0",
        "synth",
        "--out",
        p(dir),
        "--n-per-class",
        n,
        "--width",
        "320",
        "--height",
        "180",
    ];
    if render {
        args.push("--render");
    }
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn blur_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("s"), "1", true);
    let snippet = dir.path().join("s/synth-a-0000000000000000");
    let out = dir.path().join("o");
    let frames = snippet.join("frames");
    let args = [
        "blur",
        "--keypoints",
        p(&snippet),
        "--frames",
        p(&frames),
        "--out",
        p(&out),
        "--seed",
        "7",
    ];
    assert!(run(&args).status.success());
    let first = tree(&out);
    assert_eq!(first.keys().filter(|k| k.ends_with(".png")).count(), 250);
    assert!(first.contains_key("trajectory.csv") && first.contains_key("meta.json"));
    assert!(run(&args).status.success());
    assert_eq!(first, tree(&out));

    let other = run(&[
        "blur",
        "--keypoints",
        p(&snippet),
        "--frames",
        p(&snippet.join("frames")),
        "--out",
        p(&dir.path().join("o8")),
        "--seed",
        "8",
    ]);
    assert!(other.status.success());
    let o8 = tree(&dir.path().join("o8"));
    assert_eq!(first["trajectory.csv"], o8["trajectory.csv"]);
    assert_ne!(first["frame_000001.png"], o8["frame_000001.png"]);
}

#[test]
fn raw_stream_matches_png_frames() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("s"), "1", true);
    let snippet = dir.path().join("s/synth-p-0000000000000000");
    let mut raw = Vec::new();
    for i in 1..=250 {
        let img = gma_core::blur::FrameImage::read_png(&snippet.join(format!("frames/frame_{i:06}.png"))).unwrap();
        img.write_raw(&mut raw).unwrap();
    }
    let stream = dir.path().join("frames.rgb");
    fs::write(&stream, &raw).unwrap();
    for (frames, out) in [(snippet.join("frames"), "png"), (stream.clone(), "raw")] {
        let r = run(&[
            "blur",
            "--keypoints",
            p(&snippet),
            "--frames",
            p(&frames),
            "--out",
            p(&dir.path().join(out)),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let blurred = fs::read(dir.path().join("raw/frames.rgb")).unwrap();
    let frame_len = 320 * 180 * 3;
    for i in [1usize, 125, 250] {
        let png = gma_core::blur::FrameImage::read_png(&dir.path().join(format!("png/frame_{i:06}.png"))).unwrap();
        assert_eq!(png.pixels(), &blurred[(i - 1) * frame_len..i * frame_len]);
    }

    fs::write(&stream, &raw[..raw.len() - frame_len]).unwrap();
    let short = run(&[
        "blur",
        "--keypoints",
        p(&snippet),
        "--frames",
        p(&stream),
        "--out",
        p(&dir.path().join("short")),
    ]);
    assert_eq!(short.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["blur", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let missing = run(&[
        "blur",
        "--keypoints",
        "/nonexistent",
        "--frames",
        "/nonexistent",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_env = bench()
        .env("GMA_BENCH_SEED", "seven")
        .args(["kappa", "--labels", "x.csv"])
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(1));
}

#[test]
fn help_states_defaults_of_numeric_flags() {
    for (cmd, defaults) in [
        ("blur", &["150", "68", "25", "0.5", "0.35"][..]),
        (
            "cv",
            &["64", "7", "200,100", "32", "10", "500", "0.001", "0.125", "5"][..],
        ),
        ("study", &["3", "280"][..]),
    ] {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for d in defaults {
            assert!(
                text.contains(&format!("(default {d})")),
                "{cmd} help lacks default {d}:\n{text}"
            );
        }
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("s"), "1", false);
    let snippet = dir.path().join("s/synth-a-0000000000000000");
    fs::create_dir_all(dir.path().join("frames")).unwrap();
    let out = run(&[
        "blur",
        "--keypoints",
        p(&snippet),
        "--frames",
        p(&dir.path().join("frames")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing frame"));

    let labels = dir.path().join("bad.csv");
    fs::write(&labels, "snippet_id,class\nx,FM?\n").unwrap();
    let out = run(&[
        "train",
        "--keypoints",
        p(&dir.path().join("s")),
        "--labels",
        p(&labels),
        "--out",
        p(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

const SMALL_CONFIG: &str = r#"
seed = 5

[synthetic]
n_per_class = 6

[synthetic.template]
width = 320
height = 180
body_scale = 80.0
amplitude = 2.0
drift = 0.7
jitter = 0.1

[network]
filters = 4
filter_len = 3
fc = [8]

[train]
max_epochs = 3

[cv]
folds = 2
repeats = 2
"#;

#[test]
fn cv_from_config_writes_results_and_reproducible_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let first = dir.path().join("first");
    let out = run(&["cv", "--config", p(&cfg), "--out", p(&first)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("with_head:") && stdout.contains("t-test (pooled)"),
        "{stdout}"
    );
    let results = fs::read_to_string(first.join("cv_results.csv")).unwrap();
    assert!(results.starts_with("condition,acc_1,acc_2,mean,ci95\n"));
    assert_eq!(results.lines().count(), 3);

    // rerun from the recorded configuration alone
    let mut recorded = Manifest::read_config(&first.join("manifest.json")).unwrap();
    assert_eq!(recorded.seed, Some(5));
    let second = dir.path().join("second");
    recorded.paths.out = Some(second.clone());
    let json = dir.path().join("again.json");
    fs::write(&json, serde_json::to_string(&recorded).unwrap()).unwrap();
    assert!(run(&["cv", "--config", p(&json)]).status.success());
    assert_eq!(results, fs::read_to_string(second.join("cv_results.csv")).unwrap());
    assert_eq!(
        fs::read_to_string(first.join("summary.txt")).unwrap(),
        fs::read_to_string(second.join("summary.txt")).unwrap()
    );

    // the flag beats the file, the environment only fills a gap
    let third = dir.path().join("third");
    assert!(bench()
        .env("GMA_BENCH_SEED", "99")
        .args(["cv", "--config", p(&cfg), "--out", p(&third)])
        .output()
        .unwrap()
        .status
        .success());
    assert_eq!(
        Manifest::read_config(&third.join("manifest.json")).unwrap().seed,
        Some(5)
    );
    let fourth = dir.path().join("fourth");
    assert!(run(&["--seed", "6", "cv", "--config", p(&cfg), "--out", p(&fourth)])
        .status
        .success());
    assert_eq!(
        Manifest::read_config(&fourth.join("manifest.json")).unwrap().seed,
        Some(6)
    );
}

#[test]
fn keypoints_to_features_to_model() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    synth(&s, "4", false);
    let f = dir.path().join("f");
    let out = run(&[
        "features",
        "--keypoints",
        p(&s),
        "--mode",
        "without_head",
        "--out",
        p(&f),
        "--csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = gma_core::features::FeatureMatrix::load(&f.join("synth-p-0000000000000002.gmaf")).unwrap();
    assert_eq!(m.data().dim(), (250, 32));
    assert!(f.join("synth-p-0000000000000002.csv").is_file());

    let via_features = dir.path().join("t1");
    let via_keypoints = dir.path().join("t2");
    for (src, out) in [
        (["--features", p(&f)], &via_features),
        (["--keypoints", p(&s)], &via_keypoints),
    ] {
        let r = run(&[
            "train",
            src[0],
            src[1],
            "--labels",
            p(&s.join("labels.csv")),
            "--mode",
            "without_head",
            "--filters",
            "4",
            "--fc",
            "8",
            "--max-epochs",
            "4",
            "--out",
            p(out),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(
        fs::read(via_features.join("model.gmaw")).unwrap(),
        fs::read(via_keypoints.join("model.gmaw")).unwrap()
    );
    assert!(
        fs::read_to_string(via_features.join("history.csv"))
            .unwrap()
            .lines()
            .count()
            >= 2
    );

    // a feature directory built for the other condition is refused
    let r = run(&[
        "train",
        "--features",
        p(&f),
        "--labels",
        p(&s.join("labels.csv")),
        "--out",
        p(&dir.path().join("t3")),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn ablation_resumes_from_its_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let args = [
        "ablate",
        "--synthetic",
        "4",
        "--tables",
        "convolution",
        "--folds",
        "2",
        "--repeats",
        "1",
        "--max-epochs",
        "1",
        "--fc",
        "6",
        "--out",
        p(&out),
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let cells = unique_cells(&[AblationTable::convolution()]).len();
    assert_eq!(results.lines().count(), 1 + cells);
    let tables = fs::read_to_string(out.join("tables.txt")).unwrap();
    assert!(tables.contains("Convolution filters"));

    let second = bench().args(args).env("RUST_LOG", "info").output().unwrap();
    assert!(String::from_utf8_lossy(&second.stderr).contains("computed 0 cells"));
    assert_eq!(results, fs::read_to_string(out.join("results.csv")).unwrap());
}

#[test]
fn kappa_reports_exported_labels() {
    let dir = tempfile::tempdir().unwrap();
    let subsets: Vec<Vec<String>> = (0..3)
        .map(|s| (0..100).map(|i| format!("s{s}-{i}")).collect())
        .collect();
    let records = synthetic_study(
        &SyntheticStudySpec::default(),
        &subsets,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let csv = dir.path().join("labels.csv");
    fs::write(&csv, write_label_csv(&records)).unwrap();
    let out = dir.path().join("k");
    let r = run(&["kappa", "--labels", p(&csv), "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("intra A1") && text.contains("inter A1 vs A2"), "{text}");
    assert_eq!(fs::read_to_string(out.join("kappa.txt")).unwrap(), text);
    assert!(out.join("kappa.csv").is_file());
}

#[test]
fn study_plan_and_served_journal() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    let mut text = String::from("snippet_id,media\n");
    for i in 0..50 {
        text.push_str(&format!("snip-{i:02},snip-{i:02}.mp4\n"));
    }
    fs::write(&pool, text).unwrap();
    let journal = dir.path().join("journal.jsonl");
    let r = run(&[
        "--seed",
        "2",
        "study",
        "--pool",
        p(&pool),
        "--count",
        "2",
        "--size",
        "10",
        "--journal",
        p(&journal),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let plan: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(plan["study_id"], "study-1");
    assert_eq!(plan["subsets"].as_array().unwrap().len(), 2);
    let planned = plan["subsets"][0][0].as_str().unwrap().to_owned();
    fs::write(dir.path().join(format!("{planned}.mp4")), b"video").unwrap();
    let too_big = run(&["study", "--pool", p(&pool), "--count", "3", "--size", "20"]);
    assert_eq!(too_big.status.code(), Some(2));

    let mut server = Server(
        bench()
            .args([
                "serve",
                "--journal",
                p(&journal),
                "--addr",
                "127.0.0.1:0",
                "--media-root",
                p(dir.path()),
            ])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let mut line = String::new();
    BufReader::new(server.0.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_owned();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut res = agent
        .post(format!("{base}/studies/study-1/sessions"))
        .send_json(serde_json::json!({"assessor": "A1"}))
        .unwrap();
    let session: serde_json::Value = serde_json::from_str(&res.body_mut().read_to_string().unwrap()).unwrap();
    assert_eq!(session["total"], 20);
    let media = agent
        .get(format!("{base}/media/{planned}?study=study-1"))
        .call()
        .unwrap()
        .body_mut()
        .read_to_vec()
        .unwrap();
    assert_eq!(media, b"video");
}

/// Kills the server process however the test ends.
struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}
