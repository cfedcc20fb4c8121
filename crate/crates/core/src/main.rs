use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sfconv::complexity;
use sfconv::harness::train::{self, evaluate, CHECKPOINT_FILE};
use sfconv::harness::{synth_dataset, Checkpoint, Dataset, TaskKind, TrainConfig, Trainer};
use sfconv::imstats;
use sfconv::regularizer::matrix_spectrum;
use sfconv::sfconv::spectrum_view;
use sfconv::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sfconv",
    version,
    about = "Factorized convolutions with spectral regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv and checkpoint.sfck into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a sample directory (default: its eval set).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Parameter count, FLOPs and throughput of the model in a config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Input shape as BxCxHxW.
        #[arg(long)]
        input_shape: String,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Skip the timing runs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Singular values of every factorized layer in a checkpoint.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write a weight histogram with this many bins to --hist-out.
        #[arg(long, requires = "hist_out")]
        bins: Option<usize>,
        #[arg(long)]
        hist_out: Option<PathBuf>,
    },
    /// Per-image skewness and kurtosis of the images in a directory.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Write one histogram CSV per image here.
        #[arg(long)]
        hist_dir: Option<PathBuf>,
    },
    /// Write a synthetic sample directory.
    Synth {
        #[arg(long, value_parser = parse_kind)]
        kind: TaskKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<TaskKind, String> {
    match s {
        "classify" | "classification" => Ok(TaskKind::Classification),
        "segment" | "segmentation" => Ok(TaskKind::Segmentation),
        _ => Err(format!("expected classify or segment, got {s}")),
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split(['x', 'X', ','])
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad input shape {s:?}: {e}")))?;
    if dims.len() != 4 || dims.contains(&0) {
        return Err(Error::Config(format!(
            "input shape must be BxCxHxW with positive extents, got {s:?}"
        )));
    }
    Ok(dims)
}

fn write_histogram(path: &Path, h: &imstats::HistogramReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_edge_low", "bin_edge_high", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([
            h.bin_edges[i].to_string(),
            h.bin_edges[i + 1].to_string(),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train {
            config,
            out: dir,
            resume,
        } => {
            let outcome = match resume {
                Some(ck) => train::resume(&Checkpoint::load(ck)?, Some(&dir))?,
                None => train::train(TrainConfig::load(config)?, Some(&dir))?,
            };
            if let Some(last) = outcome.metrics.last() {
                writeln!(
                    out,
                    "epoch {} step {} task_loss {:.6} kl {:.6} train {:.4} eval {:.4}",
                    last.epoch,
                    last.step,
                    last.task_loss,
                    last.kl_term,
                    last.train_metric,
                    last.eval_metric
                )?;
            }
            writeln!(out, "wrote {}", dir.join(CHECKPOINT_FILE).display())?;
        }
        Command::Eval { checkpoint, data } => {
            let trainer = Trainer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
            let data = match data {
                Some(d) => Dataset::load(d)?,
                None => trainer.eval_data().clone(),
            };
            if data.kind() != trainer.task() {
                return Err(Error::Config(
                    "data targets do not match the checkpoint's task".into(),
                ));
            }
            let name = match trainer.task() {
                TaskKind::Classification => "accuracy",
                TaskKind::Segmentation => "dice",
            };
            let score = evaluate(trainer.network(), &data, trainer.config().batch_size())?;
            writeln!(out, "{name},{score}")?;
        }
        Command::Bench {
            config,
            input_shape,
            trials,
            warmup,
            no_timing,
        } => {
            let cfg = TrainConfig::load(config)?;
            let net = cfg.build_network()?;
            let shape = parse_shape(&input_shape)?;
            let timing = (!no_timing).then_some((trials, warmup));
            let report = complexity::report(&net, &shape, timing)?;
            writeln!(out, "{}", complexity::ComplexityReport::CSV_HEADER)?;
            writeln!(out, "{}", report.csv_row())?;
        }
        Command::Spectrum {
            checkpoint,
            bins,
            hist_out,
        } => {
            let trainer = Trainer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
            let net = trainer.network();
            writeln!(out, "layer,matrix,index,sigma,normalized")?;
            for (i, f) in net.factorized_layers().into_iter().enumerate() {
                let view = spectrum_view(f);
                for (name, m) in [("P", &view.matrix_p), ("Q", &view.matrix_q)] {
                    let s = matrix_spectrum(m)?;
                    for (j, (raw, norm)) in s.raw.iter().zip(&s.values).enumerate() {
                        writeln!(out, "{i},{name},{j},{raw},{norm}")?;
                    }
                }
            }
            if let (Some(bins), Some(path)) = (bins, hist_out) {
                write_histogram(&path, &imstats::weight_histogram(net, bins, false)?)?;
            }
        }
        Command::Stats {
            input,
            bins,
            hist_dir,
        } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&input)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| {
                p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "tnsr")
                })
            });
            paths.sort();
            if let Some(d) = &hist_dir {
                std::fs::create_dir_all(d)?;
            }
            writeln!(out, "path,n,skewness,kurtosis")?;
            for p in paths {
                let h = imstats::image_histogram(&imstats::load_image(&p)?, bins)?;
                writeln!(
                    out,
                    "{},{},{},{}",
                    p.display(),
                    h.n,
                    opt(h.skewness),
                    opt(h.kurtosis)
                )?;
                if let Some(d) = &hist_dir {
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                    write_histogram(&d.join(format!("{stem}.csv")), &h)?;
                }
            }
        }
        Command::Synth {
            kind,
            n,
            seed,
            out: dir,
        } => {
            synth_dataset(kind, n, seed)?.save(&dir)?;
            writeln!(out, "wrote {n} samples to {}", dir.display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
