use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdfcluster::dataset::Dataset;
use sdfcluster::eval::{evaluate, export_meshes, render_views};
use sdfcluster::losses::Mode;
use sdfcluster::synth::{generate_dataset, SceneSpec};
use sdfcluster::train::{train, Checkpoint, TrainConfig, CHECKPOINT_FILE};
use sdfcluster::{Error, Result};

#[derive(Parser)]
#[command(name = "sdfcluster", version, about = "Object SDF fields trained from inconsistent 2D labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML scene description.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a field; writes checkpoint.bin and losses.csv to the config's `out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint against a dataset's ground truth.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render RGB, depth, normal and label maps for every training view.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset supplying the cameras; defaults to the one trained on.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Extract one mesh per foreground channel.
    ExportMesh {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out } => {
            let spec: SceneSpec =
                toml::from_str(&read_text(&spec)?).map_err(|e| Error::Spec(e.to_string().replace('\n', " ")))?;
            let ds = generate_dataset(&spec)?;
            ds.save(&out)?;
            println!("wrote {} views to {}", ds.views.len(), out.display());
        }
        Command::Train { config, mode, seed } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = cfg.out.clone();
            let ckpt = train(cfg)?;
            println!("trained {} steps, checkpoint {}", ckpt.step, out.join(CHECKPOINT_FILE).display());
        }
        Command::Eval { ckpt, data, report } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let text = evaluate(&ckpt, &ds)?.to_text();
            print!("{text}");
            if let Some(path) = report {
                fs::write(&path, &text).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
            }
        }
        Command::Render { ckpt, out, data } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let ds = Dataset::load(data.as_ref().unwrap_or(&ckpt.config.data))?;
            let preds = render_views(&ckpt, &ds, &out)?;
            println!("rendered {} views to {}", preds.len(), out.display());
        }
        Command::ExportMesh { ckpt, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let meshes = export_meshes(&ckpt, &out)?;
            let written = meshes.iter().filter(|m| m.file.is_some()).count();
            println!("wrote {written} meshes to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
