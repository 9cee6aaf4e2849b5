//! `tonefit` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tonefit::bench::{run_bench, BUDGET_MS};
use tonefit::metrics::format_psnr;
use tonefit::optimize::{gradient_check, GradCheckOptions};
use tonefit::solutionspace::{deviation_sum, project_constrained, solve_basis_weights};
use tonefit::{
    apply_preset, fit_pair, load_png, load_preset, save_png, save_preset, FitConfig, FusionMode,
    InterpolationWeights, MapPolicy, QualityReport, RgbPoint,
};

/// Gradient-check pass threshold (max relative error).
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "tonefit", version, about = "Fit and apply piecewise tone curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit curves and confidence maps mapping --input onto --reference.
    Fit(FitArgs),
    /// Apply a saved preset to an image.
    Apply {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        preset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `stored` resizes the fitted maps; `uniform` weighs solutions equally.
        #[arg(long, default_value_t = MapPolicy::Uniform)]
        maps: MapPolicy,
    },
    /// Render a weighted interpolation between a preset's solutions.
    Interpolate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        preset: PathBuf,
        /// Comma-separated positive weights, one per solution.
        #[arg(long)]
        weights: InterpolationWeights,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for basis weights and project points onto the reachable set.
    Geometry(GeometryArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print PSNR and SSIM between two images.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Time curve application and fusion on a random image.
    Bench {
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Worker threads; 0 means one per logical core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Origin allowed by CORS, e.g. http://localhost:5173.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Preset directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    solutions: usize,
    #[arg(long, default_value_t = 7)]
    pieces: usize,
    #[arg(long, default_value_t = 4)]
    iters: u32,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    ssim_weight: f64,
    #[arg(long, default_value_t = FusionMode::Plain)]
    mode: FusionMode,
    #[arg(long, default_value_t = 1)]
    fit_scale: usize,
    #[arg(long)]
    monotone_knots: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GeometryArgs {
    /// Basis points as r,g,b; the canonical basis by default.
    #[arg(long, default_value = "1,0,0", allow_hyphen_values = true)]
    x: RgbPoint,
    #[arg(long, default_value = "0,1,0", allow_hyphen_values = true)]
    y: RgbPoint,
    #[arg(long, default_value = "0,0,1", allow_hyphen_values = true)]
    z: RgbPoint,
    /// Target point(s); repeat for several.
    #[arg(long = "d", required = true, allow_hyphen_values = true)]
    targets: Vec<RgbPoint>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<tonefit::Error> for Failure {
    fn from(e: tonefit::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Fit(args) => fit(args),
        Command::Apply { input, preset, out, maps } => {
            let image = load_png(&input)?;
            let set = load_preset(&preset)?;
            let result = apply_preset(&image, &set, maps)?;
            save_png(&result, &out, image.depth())?;
            Ok(())
        }
        Command::Interpolate { input, preset, weights, out } => {
            let image = load_png(&input)?;
            let set = load_preset(&preset)?;
            if set.mode() != FusionMode::Constrained {
                return Err(Failure::Runtime("interpolation requires constrained mode".into()));
            }
            if weights.len() != set.len() {
                return Err(Failure::Usage(format!(
                    "--weights has {} values but the preset has {} solutions",
                    weights.len(),
                    set.len()
                )));
            }
            let set = tonefit::preset::preset_for_dims(&set, image.width(), image.height(), MapPolicy::Stored)?;
            let result = set.interpolate(&image, &weights)?.clamped();
            save_png(&result, &out, image.depth())?;
            Ok(())
        }
        Command::Geometry(args) => geometry(&args),
        Command::Gradcheck { trials, eps, seed } => {
            if trials == 0 || !(eps.is_finite() && eps > 0.0) {
                return Err(Failure::Usage("--trials and --eps must be positive".into()));
            }
            let report = gradient_check(&GradCheckOptions { trials, epsilon: eps, seed })?;
            println!("trials: {}", report.trials);
            for (name, err) in [
                ("knots", report.knots),
                ("alpha latents", report.alpha_latents),
                ("map latents", report.map_latents),
            ] {
                let verdict = if err < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
                println!("{name:<14} max relative error {err:.3e} {verdict}");
            }
            if report.passes(GRADCHECK_TOLERANCE) {
                Ok(())
            } else {
                Err(Failure::Runtime(format!(
                    "gradient check failed: max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e}",
                    report.max_error()
                )))
            }
        }
        Command::Eval { a, b } => {
            let q = QualityReport::measure(&load_png(&a)?, &load_png(&b)?)?;
            println!("PSNR: {} dB\nSSIM: {:.4}", format_psnr(q.psnr), q.ssim);
            Ok(())
        }
        Command::Bench { size, threads, repetitions, seed } => {
            if size == 0 || repetitions == 0 {
                return Err(Failure::Usage("--size and --repetitions must be positive".into()));
            }
            let r = run_bench(size, repetitions, threads, seed)?;
            println!("mean: {:.3} ms", r.mean_ms);
            println!("min: {:.3} ms", r.min_ms);
            println!("threads: {}", r.threads);
            if r.threads == 1 {
                let verdict = if r.within_budget() { "within" } else { "over" };
                eprintln!("{verdict} the {BUDGET_MS} ms single-thread budget");
            }
            Ok(())
        }
        Command::Serve { port, host, cors_origin } => serve(&host, port, cors_origin.as_deref()),
    }
}

fn fit(a: FitArgs) -> Outcome {
    let config = FitConfig {
        solutions: a.solutions,
        pieces: a.pieces,
        iterations: a.iters,
        steps: a.steps,
        learning_rate: a.lr,
        ssim_weight: a.ssim_weight,
        fusion_mode: a.mode,
        monotone_knots: a.monotone_knots,
        seed: a.seed,
        fit_scale: a.fit_scale,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let input = load_png(&a.input)?;
    let reference = load_png(&a.reference)?;
    let (set, trace) = fit_pair(&input, &reference, &config)?;
    save_preset(&set, &a.out)?;
    // 1 − SSIM can round a hair below zero on exact fits.
    let loss = trace.final_loss().unwrap_or(f64::NAN).max(0.0);
    let q = match trace.report {
        Some(q) => q,
        None => QualityReport::measure(&set.render(&input)?, &reference)?,
    };
    println!("loss={loss:.6e} psnr={} ssim={:.4}", format_psnr(q.psnr), q.ssim);
    Ok(())
}

/// Shortest decimal that round-trips after rounding to 12 places.
fn fmt(v: f64) -> String {
    let s = format!("{:.12}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn fmt_point(p: RgbPoint) -> String {
    format!("({}, {}, {})", fmt(p.r), fmt(p.g), fmt(p.b))
}

fn geometry(a: &GeometryArgs) -> Outcome {
    let mut constrained = 0.0;
    for &d in &a.targets {
        println!("d = {}", fmt_point(d));
        match solve_basis_weights(a.x, a.y, a.z, d) {
            Ok(w) => println!("  weights {} {} {}", fmt(w[0]), fmt(w[1]), fmt(w[2])),
            Err(e) => println!("  weights unavailable: {e}"),
        }
        let p = project_constrained(a.x, a.y, a.z, d);
        println!(
            "  constrained weights {} {} {}",
            fmt(p.weights[0]),
            fmt(p.weights[1]),
            fmt(p.weights[2])
        );
        println!("  nearest reachable {} distance {}", fmt_point(p.point), fmt(p.distance));
        constrained += p.distance;
    }
    // The best single point of the reachable set, among its vertices and the
    // target projections, bounds what one global adjustment could achieve.
    let corners = (0..8u8).map(|m| {
        let w = [m & 1, m >> 1 & 1, m >> 2 & 1].map(f64::from);
        RgbPoint::new(
            w[0] * a.x.r + w[1] * a.y.r + w[2] * a.z.r,
            w[0] * a.x.g + w[1] * a.y.g + w[2] * a.z.g,
            w[0] * a.x.b + w[1] * a.y.b + w[2] * a.z.b,
        )
    });
    let projections = a.targets.iter().map(|&d| project_constrained(a.x, a.y, a.z, d).point);
    let global = corners
        .chain(projections)
        .map(|anchor| deviation_sum(anchor, &a.targets))
        .fold(f64::INFINITY, f64::min);
    println!("per-point deviation {}", fmt(constrained));
    println!("single-point deviation {}", fmt(global));
    Ok(())
}

fn serve(host: &str, port: u16, cors_origin: Option<&str>) -> Outcome {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::Runtime(format!("cannot bind {host}:{port}: {e}")))?;
        if let Ok(addr) = listener.local_addr() {
            eprintln!("listening on http://{addr}");
        }
        tonefit_service::serve(listener, cors_origin)
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))
    })
}
