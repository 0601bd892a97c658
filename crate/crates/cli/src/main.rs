use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use misalign::experiment::{
    demo_fusion, read_snippets, read_summary, rescore, run_sweep, schema, write_report, write_trace, ExperimentConfig,
    NoiseModel, TRACE_FILE,
};
use misalign::Error;

#[derive(Parser)]
#[command(name = "misalign", version, about = "Camera/LiDAR rotational misalignment sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded fault-injection sweep and write the reports.
    Sweep(Common),
    /// Trace frame-by-frame fusion of one snippet into fusion_trace.csv.
    FuseDemo {
        #[command(flatten)]
        common: Common,
        /// Snippet id to trace.
        #[arg(long, default_value_t = 0)]
        snippet: u64,
    },
    /// Re-score the frame estimates stored in --out and rewrite the reports.
    Evaluate(Common),
    /// Describe the output files.
    Schema,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON configuration file. Missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    snippets: Option<usize>,
    /// Fixed per-frame pixel noise sigma.
    #[arg(long)]
    noise_px: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    /// File, then environment, then flags.
    fn resolve(&self, base: Option<ExperimentConfig>) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(b)) => b,
            (None, None) => ExperimentConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(n) = self.snippets {
            cfg.snippets = n;
        }
        if let Some(px) = self.noise_px {
            cfg.noise = NoiseModel::Fixed;
            cfg.scene.pixel_noise_sigma = px;
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } => 3,
        _ => 4,
    }
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn sweep(common: &Common) -> Result<(), Error> {
    let cfg = common.resolve(None)?;
    let results = run_sweep(&cfg, common.jobs)?;
    report_written(&write_report(&cfg.output, &cfg, &results)?);
    Ok(())
}

fn fuse_demo(common: &Common, snippet: u64) -> Result<(), Error> {
    let cfg = common.resolve(None)?;
    let trace = demo_fusion(&cfg, snippet)?;
    std::fs::create_dir_all(&cfg.output).map_err(|source| Error::Io {
        path: cfg.output.clone(),
        source,
    })?;
    let path = cfg.output.join(TRACE_FILE);
    write_trace(&path, &trace)?;
    report_written(&[path]);
    Ok(())
}

fn evaluate(common: &Common) -> Result<(), Error> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os(misalign::experiment::ENV_OUT).map(PathBuf::from))
        .unwrap_or_else(|| ExperimentConfig::default().output);
    let previous = read_summary(&dir)?;
    let snippets = read_snippets(&dir)?;
    let mut cfg = common.resolve(Some(previous.config))?;
    cfg.output = dir;
    cfg.snippets = snippets.len();
    let results = rescore(&cfg, &snippets, common.jobs)?;
    report_written(&write_report(Path::new(&cfg.output), &cfg, &results)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = match &cli.command {
        Command::Sweep(c) => sweep(c),
        Command::FuseDemo { common, snippet } => fuse_demo(common, *snippet),
        Command::Evaluate(c) => evaluate(c),
        Command::Schema => {
            print!("{}", schema());
            Ok(())
        }
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
