use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epicolor::colorize::{colorize, ColorizeConfig};
use epicolor::epitome::{train_with_observer, TrainConfig};
use epicolor::imagekit::{load_image, save_image, ColorSpace};
use epicolor::selftest::{self, SelfTestOptions};
use epicolor::{format, Error, Execution};

#[derive(Parser, Debug)]
#[command(name = "epicolor", version, about = "Epitome-based automatic image colorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn an epitome from a color reference image.
    Train(TrainArgs),
    /// Colorize a grayscale image with a trained epitome.
    Colorize(ColorizeArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    r#ref: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long = "patch-size", default_value_t = 12)]
    patch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 0.5)]
    omega: f64,
    #[arg(long = "sift-grid", default_value_t = 3)]
    sift_grid: usize,
    #[arg(long = "epitome-scale", default_value_t = 0.5)]
    epitome_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run on a single thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args, Debug)]
struct ColorizeArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    target: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    omega: f64,
    /// Match the target's luminance mean and spread to the model first.
    #[arg(long = "luma-remap")]
    luma_remap: bool,
    #[arg(long)]
    serial: bool,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long = "inject-fault", hide = true)]
    inject_fault: bool,
}

fn exec(serial: bool) -> Execution {
    if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Internal(_) => 1,
        Error::Io { .. } | Error::Image { .. } => 2,
        Error::CorruptModel(_) => 3,
    }
}

fn run_train(args: &TrainArgs) -> epicolor::Result<()> {
    let config = TrainConfig {
        patch_size: args.patch_size,
        omega: args.omega,
        iterations: args.iters,
        lambda: args.lambda,
        grid: args.sift_grid,
        epitome_scale: args.epitome_scale,
        seed: args.seed,
        exec: exec(args.serial),
        ..TrainConfig::default()
    };
    config.validate()?;
    let reference = load_image(&args.r#ref)?;
    if reference.space() != ColorSpace::Rgb {
        return Err(Error::InvalidInput("reference image must be a color (RGB) PNG".into()));
    }
    let (model, _) = train_with_observer(&reference, &config, |rec| {
        println!("iter {} loglik {}", rec.iteration, rec.objective);
    })?;
    format::save(&model, &args.out)
}

fn run_colorize(args: &ColorizeArgs) -> epicolor::Result<()> {
    let config = ColorizeConfig {
        omega: args.omega,
        luma_remap: args.luma_remap,
        exec: exec(args.serial),
        ..ColorizeConfig::default()
    };
    if !(config.omega > 0.0 && config.omega <= 1.0) {
        return Err(Error::InvalidInput(format!("omega must lie in (0, 1], got {}", config.omega)));
    }
    let model = format::load(&args.model)?;
    let target = load_image(&args.target)?;
    let out = colorize(&target, &model, &config)?;
    save_image(&out, &args.out)
}

fn run_selftest(args: &SelftestArgs) -> ExitCode {
    let results = selftest::run(&SelfTestOptions {
        inject_fault: args.inject_fault,
    });
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {} ({})", r.name, r.detail);
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed properties: {}", failed.join(", "));
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    // clap would exit with 2 on bad flags, which is reserved for I/O errors
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Colorize(a) => run_colorize(a),
        Command::Selftest(a) => return run_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
