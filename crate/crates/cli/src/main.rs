use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spinesurf::phantom::ScanPlan;
use spinesurf::volume::CompoundingMode;
use spinesurf_cli::commands::{self, EvalData, ReconstructArgs};
use spinesurf_cli::config::load_toml;
use spinesurf_cli::{demo_end_to_end, thread_cap, CliError, RunConfig, THREADS_ENV};

/// Bone-surface estimation for phased-array ultrasound sweeps.
#[derive(Parser)]
#[command(name = "spinesurf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a frame-sequence directory with labels and the scene mesh.
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Scan plan overriding the configuration's.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregated feature maps for every frame.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Register annotations to a mesh and write visibility labels.
    Label {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the network and write a weight file.
    Train {
        #[arg(long)]
        frames: PathBuf,
        /// Directory of label_%06d.pfm; defaults to the frames directory.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory of feature_%06d.pfm; computed when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict surface maps for every frame.
    Infer {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compound per-frame maps into an NRRD volume and a surface cloud.
    Reconstruct {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        /// File prefix of the maps (pred, label, feature).
        #[arg(long, default_value = "pred")]
        prefix: String,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<CompoundingMode>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid and write the results CSV.
    Eval {
        #[arg(long)]
        grid: PathBuf,
        /// Labelled frame-sequence directory.
        #[arg(long, required_unless_present = "benchmark", conflicts_with = "benchmark")]
        data: Option<PathBuf>,
        /// Held-out anatomy for unseen-anatomy rows.
        #[arg(long, requires = "data")]
        unseen: Option<PathBuf>,
        /// Use the seeded synthetic benchmark instead of --data.
        #[arg(long)]
        benchmark: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Record wall-clock runtimes (the CSV is then not reproducible).
        #[arg(long)]
        with_runtime: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlay label and prediction bands on a frame as an 8-bit PGM.
    Render {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        label: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded end-to-end run with a text report.
    Demo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<CompoundingMode, String> {
    s.parse().map_err(|e: spinesurf::Error| e.to_string())
}

fn config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    RunConfig::load_or_default(path.as_deref())
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate { spec, plan, out } => {
            let plan: Option<ScanPlan> = plan.as_deref().map(load_toml).transpose()?;
            commands::simulate(&config(&spec)?, plan.as_ref(), &out)
        }
        Command::Features { input, output, params } => commands::features(&config(&params)?, &input, &output),
        Command::Label {
            mesh,
            frames,
            annotations,
            out,
            config: c,
        } => commands::label(&config(&c)?, &mesh, &frames, &annotations, &out),
        Command::Train {
            frames,
            labels,
            features,
            config: c,
            out,
        } => commands::train(&config(&c)?, &frames, labels.as_deref(), features.as_deref(), &out),
        Command::Infer {
            frames,
            weights,
            features,
            config: c,
            out,
        } => commands::infer(&config(&c)?, &frames, &weights, features.as_deref(), &out),
        Command::Reconstruct {
            frames,
            maps,
            prefix,
            mode,
            spacing,
            threshold,
            config: c,
            out,
        } => commands::reconstruct(
            &config(&c)?,
            &ReconstructArgs {
                frames: &frames,
                maps: &maps,
                prefix: &prefix,
                mode,
                spacing_m: spacing,
                threshold,
                out: &out,
            },
        ),
        Command::Eval {
            grid,
            data,
            unseen,
            benchmark,
            config: c,
            with_runtime,
            out,
        } => {
            let data = match (&data, benchmark) {
                (Some(seen), _) => EvalData::Dirs {
                    seen,
                    unseen: unseen.as_deref(),
                },
                (None, _) => EvalData::Benchmark,
            };
            commands::eval(&config(&c)?, &grid, data, &out, with_runtime)
        }
        Command::Render { frame, label, pred, out } => {
            commands::render(&frame, label.as_deref(), pred.as_deref(), &out)
        }
        Command::Demo { config: c, out } => {
            let report = demo_end_to_end(&config(&c)?, &out)?;
            eprintln!("{}", report.to_text().trim_end());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match thread_cap(std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(cap) => {
            if let Some(n) = cap {
                // only fails if a pool already exists, which cannot happen here
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

