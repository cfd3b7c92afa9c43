use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specrecon::audio::{read_wav, write_wav};
use specrecon::gan::{warm_start, GeneratorNet, ModelBundle, TrainConfig};
use specrecon::magfile::read_magnitude;
use specrecon::spectral::{magnitude, StftConfig, StftPlan, TimeSignal};
use specrecon::synth::sinusoid_mix;
use tempfile::TempDir;

fn specrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specrecon"))
        .args(args)
        .env_remove("SPECRECON_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(path).unwrap()
}

/// Replaces the value of the wall-clock line, the only nondeterministic
/// output.
fn mask_elapsed(report: &str) -> String {
    report
        .lines()
        .map(|l| if l.starts_with("elapsed = ") { "elapsed = *" } else { l })
        .map(|l| format!("{l}\n"))
        .collect()
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in report:\n{report}"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tone_wav(dir: &TempDir, name: &str, seed: u64, seconds: f64) -> PathBuf {
    let path = dir.path().join(name);
    let x = sinusoid_mix::<f64>(seed, (seconds * 16000.0) as usize, 16000);
    write_wav(&path, &x).unwrap();
    path
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(specrecon(&[]).status.code(), Some(1));
    assert_eq!(specrecon(&["reconstruct", "--method", "wavenet", "a", "b"]).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = specrecon(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("reconstruct"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let o = specrecon(&["reconstruct", "/nonexistent/in.wav", p(&dir.path().join("out.wav"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn neural_without_model_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = tone_wav(&dir, "in.wav", 3, 1.0);
    let o = specrecon(&["reconstruct", "--method", "neural", p(&input), p(&dir.path().join("o.wav"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn griffin_lim_on_a_wav_matches_golden_report() {
    let dir = TempDir::new().unwrap();
    let input = tone_wav(&dir, "in.wav", 11, 1.0);
    let out = dir.path().join("out.wav");
    let o = specrecon(&["reconstruct", "--method", "gl", "--seed", "4", p(&input), p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(value(&report, "spectral_convergence") <= 0.05, "{report}");
    assert!(value(&report, "elapsed") > 0.0);
    assert_eq!(mask_elapsed(&report), golden("reconstruct_gl.txt"));
    let y = read_wav::<f64>(&out).unwrap();
    assert_eq!(y.len(), 15872);

    // same command, same bytes
    let out2 = dir.path().join("out2.wav");
    let o2 = specrecon(&["reconstruct", "--method", "gl", "--seed", "4", p(&input), p(&out2)]);
    assert_eq!(mask_elapsed(&stdout(&o2)), mask_elapsed(&report));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn zero_signal_reconstructs_to_zero() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("zero.wav");
    write_wav(&input, &TimeSignal::<f64>::zeros(8000, 16000)).unwrap();
    let out = dir.path().join("out.wav");
    let o = specrecon(&["reconstruct", "--iters", "10", p(&input), p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert_eq!(value(&report, "consistency_residual"), 0.0);
    assert_eq!(value(&report, "spectral_convergence"), 0.0);
    assert!(!report.contains("snr_db"));
    assert!(read_wav::<f64>(&out).unwrap().samples().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_generator_reproduces_the_warm_start() {
    let dir = TempDir::new().unwrap();
    let input = tone_wav(&dir, "in.wav", 21, 1.0);
    let cfg = TrainConfig::default();
    let mut bundle = ModelBundle::<f64>::initialize(&cfg, 30).unwrap();
    bundle.generator = GeneratorNet::identity(cfg.stft.bins());
    let model = dir.path().join("identity.bundle");
    bundle.save(&model).unwrap();

    let out = dir.path().join("out.wav");
    let o = specrecon(&[
        "reconstruct", "--method", "neural", "--model", p(&model), "--seed", "8", p(&input), p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("method = neural\niters = 5\n"));

    let x = read_wav::<f64>(&input).unwrap();
    let plan = StftPlan::new(StftConfig::default()).unwrap();
    let a = magnitude(&plan.stft(&x).unwrap());
    let expected = plan.istft(&warm_start(&a, 8, 5).unwrap()).unwrap();
    let got = read_wav::<f64>(&out).unwrap();
    assert_eq!(got.len(), expected.len());
    // The WAV holds saturated 16-bit samples: agreement within 1e-6 before
    // quantization means at most one rounding step apart after it.
    for (g, e) in got.samples().iter().zip(expected.samples()) {
        let e = e.clamp(-1.0, 32767.0 / 32768.0);
        assert!((g - e).abs() <= 1.0 / 32768.0 + 1e-6, "{g} vs {e}");
    }
}

#[test]
fn stft_then_reconstruct_from_magnitude_file() {
    let dir = TempDir::new().unwrap();
    let input = tone_wav(&dir, "in.wav", 5, 0.5);
    let mag = dir.path().join("in.mag");
    let o = specrecon(&["stft", "--win-len", "512", "--hop", "128", "--window", "hann", p(&input), p(&mag)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "bins = 257\nframes = 59\n");
    let a = read_magnitude::<f64>(&mag).unwrap();
    assert_eq!((a.bins(), a.frames(), a.config().hop), (257, 59, 128));

    let out = dir.path().join("out.wav");
    let o = specrecon(&["reconstruct", "--iters", "50", p(&mag), p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let report = stdout(&o);
    assert!(!report.contains("snr_db"));
    assert!(value(&report, "spectral_convergence") < 0.2, "{report}");

    let synth = dir.path().join("zero_phase.wav");
    let o = specrecon(&["istft", p(&mag), p(&synth)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "samples = 7936\nsample_rate = 16000\n");
}

#[test]
fn corrupt_magnitude_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let mag = dir.path().join("bad.mag");
    fs::write(&mag, b"SRMAG001\x03\x00").unwrap();
    let o = specrecon(&["istft", p(&mag), p(&dir.path().join("o.wav"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn toy_manifest(dir: &TempDir) -> PathBuf {
    tone_wav(dir, "a.wav", 1, 1.0);
    tone_wav(dir, "b.wav", 2, 1.0);
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "# toy corpus\na.wav train a\nb.wav train b\n").unwrap();
    manifest
}

#[test]
fn toy_training_is_reproducible_and_reloadable() {
    let dir = TempDir::new().unwrap();
    let manifest = toy_manifest(&dir);
    let config = dir.path().join("train.toml");
    fs::write(&config, "batch_size = 2\nepochs = 1\nseed = 3\n").unwrap();

    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = specrecon(&["train", "--manifest", p(&manifest), "--config", p(&config), "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (out, stdout(&o))
    };
    let (bundle, report) = run("one.bundle");
    assert!(report.starts_with("segments = 2\nsteps = 1\nV = "), "{report}");
    let csv = fs::read_to_string(dir.path().join("one.bundle.losses.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,V,U,I,G_total");
    assert_eq!(lines.len() - 1, value(&report, "steps") as usize);
    ModelBundle::<f32>::load(&bundle).unwrap();

    run("two.bundle");
    assert_eq!(fs::read(dir.path().join("two.bundle.losses.csv")).unwrap(), csv.as_bytes());
}

#[test]
fn empty_manifest_leaves_no_bundle() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("empty.txt");
    fs::write(&manifest, "# nothing here\n").unwrap();
    let out = dir.path().join("model.bundle");
    let o = specrecon(&["train", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn bad_training_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let manifest = toy_manifest(&dir);
    let config = dir.path().join("train.toml");
    fs::write(&config, "learning_rate_typo = 1\n").unwrap();
    let o = specrecon(&[
        "train", "--manifest", p(&manifest), "--config", p(&config), "--out",
        p(&dir.path().join("m.bundle")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_single_length_both_methods() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = specrecon(&["bench", "--lengths", "1", "--methods", "gl,neural", "--repeats", "1", "--csv", p(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(text.lines().next().unwrap(), "signal_length,method,elapsed,realtime_factor");
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1]), ("1", "gl"));
    assert_eq!((rows[1][0], rows[1][1]), ("1", "neural"));
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn bench_rejects_long_signals() {
    let dir = TempDir::new().unwrap();
    let o = specrecon(&["bench", "--lengths", "7", "--csv", p(&dir.path().join("b.csv"))]);
    assert_eq!(o.status.code(), Some(1));
}
