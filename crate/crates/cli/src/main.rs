use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scenefactor::evaluation::DifficultyBins;
use scenefactor::pipeline::{
    compare_runs, comparison_text, evaluate_checkpoint, load_summary, PipelineConfig, Run, Stage, StageStatus,
    RESOLVED_CONFIG, SPLIT,
};
use scenefactor::predictor::Method;
use scenefactor::splits::Setting;
use scenefactor::{Error, Result};

#[derive(Parser)]
#[command(name = "scenefactor", version, about = "Scenario factorization, zero-shot splits, and gap evaluation")]
struct Cli {
    /// Pipeline configuration (TOML); defaults to the run's resolved snapshot, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage derives its own substream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding all artifacts and the manifest.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize (or ingest, via `synth.corpus`) the scenario corpus.
    Synth,
    Extract,
    Vectorize,
    Autoencode,
    Cluster,
    Difficulty,
    Split {
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        test_frac: Option<f64>,
        #[arg(long)]
        val_frac: Option<f64>,
    },
    Train {
        /// Comma-separated subset of baseline,tmn,aux,both.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Evaluate every trained method, or one checkpoint against a manifest.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        checkpoint: Option<PathBuf>,
        /// Difficulty bin edges in meters, e.g. `0,20,45`.
        #[arg(long)]
        bins: Option<String>,
    },
    /// Run every missing or stale stage in order.
    Run,
    /// Report the staleness of every stage.
    Status,
    /// Compare the evaluation of two run directories.
    Compare { a: PathBuf, b: PathBuf },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let snapshot = cli.out.join(RESOLVED_CONFIG);
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if snapshot.exists() => PipelineConfig::load(&snapshot)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    match &cli.command {
        Command::Split {
            setting,
            test_frac,
            val_frac,
        } => {
            if let Some(s) = setting {
                c.split.setting = *s;
            }
            if let Some(f) = test_frac {
                c.split.test_fraction = *f;
            }
            if let Some(f) = val_frac {
                c.split.val_fraction = *f;
            }
        }
        Command::Train { methods: Some(m) } => c.train.methods = m.clone(),
        Command::Eval { bins: Some(b), .. } => c.eval.bins = DifficultyBins::parse(b)?,
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

fn print_status(run: &Run) -> Result<bool> {
    let mut fresh = true;
    for (stage, status) in run.status_all()? {
        let text = match status {
            StageStatus::UpToDate => "up-to-date".to_string(),
            StageStatus::Missing => {
                fresh = false;
                "not run".to_string()
            }
            StageStatus::Stale(r) => {
                fresh = false;
                format!("stale ({r})")
            }
        };
        println!("{:<11} {text}", stage.name());
    }
    Ok(fresh)
}

fn print_gap(dir: &Path) -> Result<()> {
    let path = dir.join(scenefactor::pipeline::GAP_TEXT);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    print!("{text}");
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    if let Command::Compare { a, b } = &cli.command {
        let rows = compare_runs(&load_summary(a)?, &load_summary(b)?)?;
        print!("{}", comparison_text(&rows));
        return Ok(0);
    }
    let config = resolve_config(cli)?;
    if let Command::Eval {
        manifest: Some(manifest),
        checkpoint: Some(ckpt),
        ..
    } = &cli.command
    {
        let r = evaluate_checkpoint(&cli.out, &config, manifest, ckpt, &config.eval.bins)?;
        println!("{}", serde_json::to_string_pretty(&r).map_err(|e| Error::Serde(e.to_string()))?);
        return Ok(0);
    }
    let mut run = Run::open(&cli.out, config)?;
    let stage = match &cli.command {
        Command::Synth => Stage::Synth,
        Command::Extract => Stage::Extract,
        Command::Vectorize => Stage::Vectorize,
        Command::Autoencode => Stage::Autoencode,
        Command::Cluster => Stage::Cluster,
        Command::Difficulty => Stage::Difficulty,
        Command::Split { .. } => Stage::Split,
        Command::Train { .. } => Stage::Train,
        Command::Eval { manifest, .. } => {
            if let Some(m) = manifest {
                let expected = cli.out.join(SPLIT);
                let same = std::fs::read(m).ok().zip(std::fs::read(&expected).ok()).is_some_and(|(x, y)| x == y);
                if !same {
                    return Err(Error::Contract(
                        "staged eval uses the run's split; pass --checkpoint to evaluate another manifest".into(),
                    ));
                }
            }
            Stage::Eval
        }
        Command::Run => {
            for s in run.run_all()? {
                eprintln!("ran {s}");
            }
            print_gap(&cli.out)?;
            return Ok(0);
        }
        Command::Status => return Ok(if print_status(&run)? { 0 } else { 2 }),
        Command::Compare { .. } => unreachable!("handled above"),
    };
    run.run_stage(stage)?;
    eprintln!("ran {stage}");
    if stage == Stage::Eval {
        print_gap(&cli.out)?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
