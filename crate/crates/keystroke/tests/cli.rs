//! End-to-end checks of the command-line front end.

use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use keystroke::checkpoint::{load_checkpoint, save_checkpoint};
use keystroke::commands::{cmd_bench, parse_args, stream_from, BENCH_HEADER};
use keystroke::commands::{Command as Sub, StreamArgs};
use keystroke::corpus::{read_manifest, Dataset};
use keystroke::csvio::write_landmarks_file;
use keystroke::live::FrameSource;
use keystroke::wire::encode_frame;
use keystroke_core::nn::{ModelConfig, ModelParams};
use keystroke_core::synth::{generate_session, HandKinematicModel, KeyboardLayout, TypingScript};
use keystroke_core::FrameLandmarks;

const SMALL: [&str; 10] = [
    "--conv1-channels",
    "3",
    "--conv2-channels",
    "4",
    "--gru-hidden",
    "6",
    "--fc-hidden",
    "6",
    "--window",
    "32",
];

fn small_config() -> ModelConfig {
    ModelConfig {
        conv1_channels: 3,
        conv2_channels: 4,
        gru_hidden: 6,
        fc_hidden: 6,
        window: 32,
        ..ModelConfig::default()
    }
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keystroke"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["--seed", "4", "synth", "--out", out];
    args.extend_from_slice(extra);
    let o = run(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn zero_wpm_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["synth", "--wpm", "0", "--out", "d"]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("d").exists());
    assert_eq!(code(&run(tmp.path(), &["synth", "--wpm", "30,-5"])), 2);
    assert_eq!(code(&run(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&run(tmp.path(), &["--help"])), 0);
}

#[test]
fn unsupported_character_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["synth", "--text", "hello!", "--out", "d"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unsupported character"));
}

#[test]
fn synth_writes_the_cartesian_product() {
    let tmp = tempfile::tempdir().unwrap();
    synth(
        tmp.path(),
        "nested/new/dir",
        &["--text", "pack my box with five dozen liquor jugs,sphinx of black quartz judge my vow", "--wpm", "30,45"],
    );
    let dir = tmp.path().join("nested/new/dir");
    let m = read_manifest(&dir).unwrap();
    assert_eq!(m.sessions.len(), 4);
    let total: u64 = m.class_counts.iter().map(|c| c.frames).sum();
    assert_eq!(total, m.total_frames);
    assert_eq!(m.sessions.iter().map(|s| s.frames as u64).sum::<u64>(), m.total_frames);
    for s in &m.sessions {
        assert_eq!(s.class_counts.len(), 28);
        // pangrams press every letter and space
        assert!(s.class_counts.iter().all(|c| c.frames > 0), "{}", s.id);
        for rel in [&s.landmarks, &s.keylog, &s.labels] {
            assert!(dir.join(rel).is_file(), "{rel}");
        }
    }
    assert_eq!(m.class_counts[0].class, "IDLE");
    assert_eq!(m.class_counts[27].class, "SPACE");
}

#[test]
fn synth_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a", &["--text", "the lazy dog", "--wpm", "35"]);
    synth(tmp.path(), "b", &["--text", "the lazy dog", "--wpm", "35"]);
    for name in ["manifest.json", "sessions/t000-w35-s4.landmarks.csv", "sessions/t000-w35-s4.keylog.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(name)).unwrap(),
            fs::read(tmp.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn all_pangrams_at_four_speeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cli = parse_args([
        "keystroke",
        "--seed",
        "7",
        "--out",
        tmp.path().to_str().unwrap(),
        "synth",
        "--text",
        "pangrams",
        "--wpm",
        "20,30,40,50",
    ])
    .unwrap();
    let Sub::Synth(args) = &cli.command else { panic!("synth") };
    let m = keystroke::commands::cmd_synth(&cli.global, args).unwrap();
    assert_eq!(m.sessions.len(), 4 * 27);
    assert!(tmp.path().join("manifest.json").is_file());
}

#[test]
fn oracle_evaluation_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", &["--text", "pangrams:0..2", "--wpm", "30,50"]);
    let o = run(tmp.path(), &["eval", "--data", "d", "--oracle", "--out", "e"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(tmp.path().join("e/metrics.csv")).unwrap();
    assert!(metrics.starts_with("class,recall,precision,f1,support\n"));
    let macro_row = metrics.lines().last().unwrap();
    assert!(macro_row.starts_with("macro,1,1,1,"), "{macro_row}");
    let nld = fs::read_to_string(tmp.path().join("e/nld.csv")).unwrap();
    let rows: Vec<&str> = nld.lines().collect();
    assert_eq!(rows[0], "session,wpm,nld");
    assert_eq!(rows.len(), 1 + 4 + 2);
    assert!(rows[1..].iter().all(|r| r.ends_with(",1")));
    assert_eq!(rows[5], "mean,30,1");
    let confusion = fs::read_to_string(tmp.path().join("e/confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 29);
}

fn train_args<'a>(data: &'a str, out: &'a str, epochs: &'a str) -> Vec<&'a str> {
    let mut v = vec![
        "--seed", "7", "train", "--data", data, "--out", out, "--folds", "5", "--epochs", epochs, "--batch", "4",
        "--step", "16",
    ];
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn zero_epochs_writes_initial_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", &["--text", "pangrams:0..5", "--wpm", "40"]);
    let o = run(tmp.path(), &train_args("d", "r", "0"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let init = ModelParams::init(&small_config(), 7);
    for fold in 0..5 {
        let dir = tmp.path().join(format!("r/fold{fold}"));
        let (cfg, params) = load_checkpoint(&dir.join("best.ckpt")).unwrap();
        assert_eq!(cfg, small_config());
        assert_eq!(params, init);
        assert_eq!(fs::read_to_string(dir.join("history.csv")).unwrap(), "epoch,train_loss,val_loss,lr\n");
    }
    let summary = fs::read_to_string(tmp.path().join("r/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 5 + 1);
    assert!(summary.lines().last().unwrap().starts_with("mean,"));
    let folds = fs::read_to_string(tmp.path().join("r/folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 1 + 5);
}

#[test]
fn training_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", &["--text", "pangrams:0..5", "--wpm", "40"]);
    for out in ["r1", "r2"] {
        let o = run(tmp.path(), &train_args("d", out, "2"));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["summary.csv", "folds.csv", "fold0/history.csv", "fold3/history.csv", "fold4/best.ckpt"] {
        assert_eq!(
            fs::read(tmp.path().join("r1").join(f)).unwrap(),
            fs::read(tmp.path().join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
    // replaying the snapshot with only the output redirected
    let o = run(tmp.path(), &["train", "--config", "r1/config.txt", "--out", "r3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("r1/summary.csv")).unwrap(),
        fs::read(tmp.path().join("r3/summary.csv")).unwrap()
    );
}

#[test]
fn empty_dataset_fails_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    fs::create_dir(&d).unwrap();
    fs::write(
        d.join("manifest.json"),
        r#"{"fps":30.0,"label_smoothing":3,"total_frames":0,"class_counts":[],"sessions":[]}"#,
    )
    .unwrap();
    let o = run(tmp.path(), &["train", "--data", "d", "--out", "r"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
    assert_eq!(code(&run(tmp.path(), &["train", "--data", "missing", "--out", "r"])), 1);
}

#[test]
fn mismatched_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", &["--text", "fox", "--wpm", "40"]);
    save_checkpoint(&tmp.path().join("m.ckpt"), &small_config(), &ModelParams::init(&small_config(), 1)).unwrap();
    let o = run(tmp.path(), &["eval", "--data", "d", "--checkpoint", "m.ckpt", "--out", "e"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("config hash"), "{}", stderr(&o));
    let mut args = vec!["eval", "--data", "d", "--checkpoint", "m.ckpt", "--out", "e"];
    args.extend_from_slice(&SMALL);
    let o = run(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn bench_counts_and_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["bench", "--frames", "100"];
    args.extend_from_slice(&SMALL);
    let o = run(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], BENCH_HEADER);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(fields[0], "100");
    for f in &fields[1..] {
        let v: f64 = f.parse().unwrap();
        assert!(v > 0.0 && v.is_finite());
    }

    let cli = parse_args(["keystroke", "bench", "--frames", "100"].into_iter().chain(SMALL)).unwrap();
    let Sub::Bench(b) = &cli.command else { panic!("bench") };
    let stats = cmd_bench(&cli.global, b, &mut Vec::new()).unwrap();
    assert_eq!(stats.frames, 100);
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# speeds\nwpm=20,30\ntext=fox\nseed=9\nlr=0.5\n").unwrap();
    let p = cfg.to_str().unwrap();
    let cli = parse_args(["keystroke", "--config", p, "synth", "--wpm", "50"]).unwrap();
    let Sub::Synth(s) = &cli.command else { panic!("synth") };
    assert_eq!(s.wpm, vec![50.0]);
    assert_eq!(s.text, vec!["fox".to_string()]);
    assert_eq!(cli.global.seed, 9);
    let cli = parse_args(["keystroke", "synth", "--config", p, "--seed", "2"]).unwrap();
    let Sub::Synth(s) = &cli.command else { panic!("synth") };
    assert_eq!(s.wpm, vec![20.0, 30.0]);
    assert_eq!(cli.global.seed, 2);

    fs::write(&cfg, "wpm=0\n").unwrap();
    assert!(parse_args(["keystroke", "synth", "--config", p]).is_err());
    fs::write(&cfg, "colour=blue\n").unwrap();
    let o = run(tmp.path(), &["synth", "--config", "run.cfg"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(tmp.path(), &["synth", "--config", "absent.cfg"])), 2);
}

/// Parameters that always answer `a`, so a stream has something to report.
fn always_a() -> ModelParams {
    let mut p = ModelParams::init(&small_config(), 3);
    p.fc2.bias.data_mut()[1] = 40.0;
    p
}

fn session_frames() -> Vec<FrameLandmarks> {
    let mut frames = generate_session(
        &TypingScript {
            duration_ms: Some(10_000),
            ..TypingScript::new("abc", 40.0, 1)
        },
        &HandKinematicModel::default(),
        &KeyboardLayout::qwerty(),
    )
    .unwrap()
    .frames;
    frames.truncate(300);
    // hands vanish for frames 100..110 and 200..210
    for f in frames.iter_mut().filter(|f| (100..110).contains(&f.frame_index) || (200..210).contains(&f.frame_index)) {
        *f = FrameLandmarks::empty(f.frame_index, f.timestamp_ms);
    }
    frames
}

#[test]
fn stream_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&tmp.path().join("m.ckpt"), &small_config(), &always_a()).unwrap();
    write_landmarks_file(&tmp.path().join("in.csv"), &session_frames()).unwrap();
    let mut args = vec!["stream", "--checkpoint", "m.ckpt", "--input", "in.csv", "--probs", "p.csv"];
    args.extend_from_slice(&SMALL);
    let o = run(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let probs = fs::read_to_string(tmp.path().join("p.csv")).unwrap();
    assert_eq!(probs.lines().count(), 1 + 300);
    let events: Vec<serde_json::Value> = String::from_utf8(o.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // one press at the start and one after each gap
    assert_eq!(events.len(), 3, "{events:?}");
    for (e, frame) in events.iter().zip([1, 111, 211]) {
        assert_eq!(e["key"], "a");
        assert_eq!(e["frame"], frame);
        let c = e["confidence"].as_f64().unwrap();
        assert!((0.99..=1.0).contains(&c), "{c}");
    }
    let report = stderr(&o);
    assert!(report.contains("frames=300 "), "{report}");
    assert!(report.contains("fps="), "{report}");

    let o = run(tmp.path(), &["stream", "--checkpoint", "m.ckpt", "--input", "absent.csv"].into_iter().chain(SMALL).collect::<Vec<_>>());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unavailable"));
    let o = run(tmp.path(), &["stream", "--checkpoint", "m.ckpt"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn socket_closed_mid_stream_flushes() {
    let tmp = tempfile::tempdir().unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let frames = session_frames();
    let writer = thread::spawn(move || {
        let mut conn = TcpStream::connect(addr).unwrap();
        for f in &frames[..150] {
            conn.write_all(&encode_frame(f)).unwrap();
        }
        // half a record, then hang up
        conn.write_all(&encode_frame(&frames[150])[..200]).unwrap();
    });
    let cli = parse_args(
        ["keystroke", "stream", "--checkpoint", "unused.ckpt", "--listen", "127.0.0.1:0"]
            .into_iter()
            .chain(SMALL),
    )
    .unwrap();
    let Sub::Stream(args): &Sub = &cli.command else { panic!("stream") };
    let args: &StreamArgs = args;
    let params = always_a();
    let mut events = Vec::new();
    let mut report = Vec::new();
    let r = stream_from(args, &small_config(), &params, FrameSource::Socket(listener), &mut events, &mut report).unwrap();
    writer.join().unwrap();
    assert_eq!(r.frames, 150);
    assert_eq!(r.events.len(), 2);
    let report = String::from_utf8(report).unwrap();
    assert!(report.starts_with("frames=150 "), "{report}");
    assert_eq!(String::from_utf8(events).unwrap().lines().count(), 2);
    drop(tmp);
}

#[test]
fn dataset_round_trip_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", &["--text", "fox", "--wpm", "40", "--duration-ms", "6000"]);
    let ds = Dataset::open(&tmp.path().join("d")).unwrap();
    let sessions = ds.load_all().unwrap();
    // 6 s at 40 wpm is 20 presses of the cycled text
    assert_eq!(sessions[0].reference, "foxfoxfoxfoxfoxfoxfo");
}
