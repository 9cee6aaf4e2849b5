use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tonefit::synthetic::{gamma_brighten, random_solution_set, smooth_image};
use tonefit::{load_png, save_png, save_preset, BitDepth, ConfidenceMaps, CurveTriple, FusionMode, SolutionSet};

fn tonefit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tonefit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Work { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn image(&self, name: &str, w: usize, h: usize, seed: u64) -> String {
        save_png(&smooth_image(w, h, seed), self.path(name), BitDepth::Eight).unwrap();
        self.s(name)
    }
}

fn constrained_preset(dir: &Path, n: usize) {
    let plain = random_solution_set(n, 12, 12, 5).unwrap();
    let maps = (0..n).map(|i| plain.maps().channel(i, 0).clone()).collect();
    let set = plain.with_maps(ConfidenceMaps::constrained(maps).unwrap()).unwrap();
    save_preset(&set, dir).unwrap();
}

fn parse_summary(line: &str) -> (f64, f64, f64) {
    let get = |key: &str| -> f64 {
        let v = line.split_whitespace().find_map(|t| t.strip_prefix(key)).unwrap();
        if v == "inf" { f64::INFINITY } else { v.parse().unwrap() }
    };
    (get("loss="), get("psnr="), get("ssim="))
}

#[test]
fn help_and_version_exit_zero_usage_errors_exit_one() {
    assert_eq!(code(&tonefit(&["--help"])), 0);
    assert_eq!(code(&tonefit(&["--version"])), 0);
    assert_eq!(code(&tonefit(&["fit", "--help"])), 0);
    assert_eq!(code(&tonefit(&[])), 1);
    assert_eq!(code(&tonefit(&["frobnicate"])), 1);
    assert_eq!(code(&tonefit(&["eval", "--a", "x", "--b", "y", "--bogus"])), 1);
    assert_eq!(code(&tonefit(&["gradcheck", "-t", "3"])), 1);
}

#[test]
fn fit_identity_pair_and_reuse_preset() {
    let w = Work::new();
    let img = w.image("in.png", 20, 16, 1);
    let out = w.s("preset");
    let o = tonefit(&["fit", "--input", &img, "--reference", &img, "--out", &out, "--steps", "200"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("loss="), "{line}");
    let (loss, psnr, ssim) = parse_summary(line.trim());
    assert!(loss >= 0.0 && psnr > 50.0 && ssim > 0.99, "{line}");
    assert!(w.path("preset/preset.json").exists());

    let applied = w.s("applied.png");
    let o = tonefit(&["apply", "--input", &img, "--preset", &out, "--out", &applied, "--maps", "stored"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tonefit(&["eval", "--a", &applied, "--b", &img]);
    let psnr: f64 = stdout(&o).lines().next().unwrap()["PSNR: ".len()..].trim_end_matches(" dB").parse().unwrap_or(f64::INFINITY);
    assert!(psnr > 40.0, "{}", stdout(&o));
}

#[test]
fn fit_recovers_gamma_adjustment() {
    let w = Work::new();
    let input = smooth_image(24, 24, 2);
    save_png(&input, w.path("in.png"), BitDepth::Sixteen).unwrap();
    save_png(&gamma_brighten(&input, 1.8), w.path("ref.png"), BitDepth::Sixteen).unwrap();
    let o = tonefit(&[
        "fit", "--input", &w.s("in.png"), "--reference", &w.s("ref.png"), "--out", &w.s("p"),
        "--steps", "600", "--mode", "constrained",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, psnr, _) = parse_summary(stdout(&o).trim());
    assert!(psnr > 40.0, "{}", stdout(&o));
}

#[test]
fn fit_flag_errors() {
    let w = Work::new();
    let img = w.image("in.png", 8, 8, 1);
    let o = tonefit(&["fit", "--input", &img, "--out", &w.s("p")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--reference"), "{}", stderr(&o));
    let o = tonefit(&["fit", "--input", &img, "--reference", &img, "--out", &w.s("p"), "--steps", "0"]);
    assert_eq!(code(&o), 1);
    let o = tonefit(&["fit", "--input", &img, "--reference", &img, "--out", &w.s("p"), "--mode", "fancy"]);
    assert_eq!(code(&o), 1);
    let other = w.image("other.png", 9, 8, 1);
    let o = tonefit(&["fit", "--input", &img, "--reference", &other, "--out", &w.s("p"), "--steps", "5"]);
    assert_eq!(code(&o), 2);
    let o = tonefit(&["fit", "--input", &w.s("absent.png"), "--reference", &img, "--out", &w.s("p")]);
    assert_eq!(code(&o), 2);
    assert!(!w.path("p").exists());
}

#[test]
fn apply_identity_preset_round_trips() {
    let w = Work::new();
    let set = SolutionSet::new(
        vec![CurveTriple::identity(7, 4).unwrap(); 3],
        ConfidenceMaps::uniform(FusionMode::Plain, 3, 4, 4, 1.0 / 3.0),
    )
    .unwrap();
    save_preset(&set, w.path("id")).unwrap();
    let img = w.image("in.png", 13, 9, 4);
    for maps in ["uniform", "stored"] {
        let out = w.s(&format!("{maps}.png"));
        let o = tonefit(&["apply", "--input", &img, "--preset", &w.s("id"), "--out", &out, "--maps", maps]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(fs::read(&out).unwrap(), fs::read(&img).unwrap());
    }
    let o = tonefit(&["apply", "--input", &img, "--preset", &w.s("none"), "--out", &w.s("x.png")]);
    assert_eq!(code(&o), 2);
    let o = tonefit(&["apply", "--input", &img, "--preset", &w.s("id"), "--out", &w.s("x.png"), "--maps", "x"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn interpolate_weights_and_modes() {
    let w = Work::new();
    constrained_preset(&w.path("c"), 3);
    let img = w.image("in.png", 12, 12, 7);
    let run = |weights: &str, out: &str| {
        tonefit(&["interpolate", "--input", &img, "--preset", &w.s("c"), "--weights", weights, "--out", &w.s(out)])
    };
    assert_eq!(code(&run("1,1,1", "a.png")), 0);
    assert_eq!(code(&run("5,5,5", "b.png")), 0);
    assert_eq!(fs::read(w.path("a.png")).unwrap(), fs::read(w.path("b.png")).unwrap());

    let o = run("2,0.01,0.1", "user.png");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = load_png(w.path("user.png")).unwrap();
    let set = tonefit::load_preset(w.path("c")).unwrap();
    let solutions = set.solutions(&load_png(&img).unwrap());
    let tol = 0.5 / 255.0 + 1e-9;
    for c in 0..3 {
        for p in 0..out.width() * out.height() {
            let vs = solutions.iter().map(|v| v.plane(c).data()[p].clamp(0.0, 1.0));
            let lo = vs.clone().fold(f64::INFINITY, f64::min);
            let hi = vs.fold(f64::NEG_INFINITY, f64::max);
            let x = out.plane(c).data()[p];
            assert!(x >= lo - tol && x <= hi + tol, "pixel {p} channel {c}: {x} not in [{lo}, {hi}]");
        }
    }

    assert_eq!(code(&run("1,1", "x.png")), 1);
    assert_eq!(code(&run("1,0,1", "x.png")), 1);
    assert_eq!(code(&run("1,-1,1", "x.png")), 1);

    save_preset(&random_solution_set(3, 4, 4, 1).unwrap(), w.path("plain")).unwrap();
    let o = tonefit(&["interpolate", "--input", &img, "--preset", &w.s("plain"), "--weights", "1,1,1", "--out", &w.s("x.png")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("interpolation requires constrained mode"));
    assert!(!w.path("x.png").exists());
}

#[test]
fn gradcheck_passes_by_default_and_fails_with_absurd_step() {
    let o = tonefit(&["gradcheck", "--trials", "10"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let report = stdout(&o);
    for class in ["knots", "alpha latents", "map latents"] {
        assert!(report.contains(class), "{report}");
    }
    let o = tonefit(&["gradcheck", "--trials", "5", "--eps", "10"]);
    assert_ne!(code(&o), 0);
    assert_eq!(code(&tonefit(&["gradcheck", "--eps", "-1"])), 1);
}

#[test]
fn eval_formats_metrics() {
    let w = Work::new();
    let a = w.image("a.png", 16, 16, 1);
    let b = w.image("b.png", 16, 16, 2);
    let o = tonefit(&["eval", "--a", &a, "--b", &a]);
    assert_eq!(stdout(&o), "PSNR: inf dB\nSSIM: 1.0000\n");
    let o = tonefit(&["eval", "--a", &a, "--b", &b]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let psnr = lines[0].strip_prefix("PSNR: ").unwrap().strip_suffix(" dB").unwrap();
    assert_eq!(psnr.split('.').nth(1).unwrap().len(), 4);
    assert!(lines[1].starts_with("SSIM: "));
    let other = w.image("c.png", 8, 8, 2);
    assert_eq!(code(&tonefit(&["eval", "--a", &a, "--b", &other])), 2);
}

#[test]
fn bench_reports_positive_mean() {
    let o = tonefit(&["bench", "--size", "64", "--threads", "1", "--repetitions", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let mean: f64 = text.lines().next().unwrap().strip_prefix("mean: ").unwrap().trim_end_matches(" ms").parse().unwrap();
    assert!(mean > 0.0);
    assert!(text.contains("threads: 1"));
    assert_eq!(code(&tonefit(&["bench", "--size", "0"])), 1);
}

#[test]
fn geometry_reports_weights_and_deviation() {
    let o = tonefit(&["geometry", "--d", "0.2,0.5,0.7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("  weights 0.2 0.5 0.7\n"), "{text}");
    let o = tonefit(&["geometry", "--d", "2,0,0", "--d", "0.2,0.5,0.7"]);
    let text = stdout(&o);
    assert!(text.contains("nearest reachable (1, 0, 0) distance 1\n"), "{text}");
    assert!(text.contains("per-point deviation 1\n"), "{text}");
    let o = tonefit(&["geometry", "--x", "1,0,0", "--y", "2,0,0", "--d", "1,1,1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("weights unavailable"));
    assert_eq!(code(&tonefit(&["geometry", "--d", "1,2"])), 1);
    assert_eq!(code(&tonefit(&["geometry"])), 1);
}

#[test]
fn serve_rejects_unbindable_address() {
    let o = tonefit(&["serve", "--host", "256.0.0.1", "--port", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn serve_answers_requests() {
    use std::io::{Read, Write};
    use std::net::TcpStream;
    use std::time::{Duration, Instant};

    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut child = Command::new(env!("CARGO_BIN_EXE_tonefit"))
        .args(["serve", "--port", &port.to_string()])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut stream = loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("server did not start: {e}"),
        }
    };
    stream
        .write_all(b"GET /api/sessions/missing/fit/status HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 404"), "{reply}");
}
