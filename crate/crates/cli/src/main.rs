use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ssnn_bp::harness::studies::{compare_wta_softmax, gradient_check, l1_distance, sweep_ts, GradientCheckConfig};
use ssnn_bp::harness::{load_data, preset, run_eval, train_on, Checkpoint, EvalSplit, ExperimentConfig, Model, ModelKind, RunContext, Seeds, Subset};
use ssnn_bp::par::with_workers;
use ssnn_bp::{Error, Result};

#[derive(Parser)]
#[command(name = "ssnnbp", version, about = "Spike-based backpropagation experiments")]
struct Cli {
    /// Experiment configuration (TOML). Missing keys take the rate_ts50 values.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: rate_ts50, rpu_ts100, rpu_ts200, rpu_ts300.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Directory holding <dataset>/ IDX files.
    #[arg(long, global = true, env = "SSNNBP_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Sets every seed (weights, encoding, dropout, subsampling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Stratified subset as n_train,n_test.
    #[arg(long, global = true)]
    subset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Train,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, timing, config and checkpoint files.
    Train,
    /// Accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sorted output profiles without inhibition, with inhibition, and softmax of the former.
    CompareWtaSoftmax {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// RPU runs against quantized-rate predictions for several window lengths.
    SweepTs {
        #[arg(long, value_delimiter = ',', default_value = "100,200,300")]
        ts: Vec<usize>,
    },
    /// Spike-based deltas against exact gradients on small random networks.
    GradientCheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 2000)]
        t_s: usize,
    },
    /// Print the fully expanded configuration.
    ConfigDump,
}

fn parse_subset(s: &str) -> Result<Subset> {
    let bad = || Error::Config(format!("--subset expects n_train,n_test, got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok(Subset {
        train: a.trim().parse().map_err(|_| bad())?,
        test: b.trim().parse().map_err(|_| bad())?,
    })
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => preset("rate_ts50")?,
    };
    if let Some(s) = cli.seed {
        cfg.seeds = Seeds::uniform(s);
    }
    if let Some(e) = cli.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = &cli.subset {
        cfg.subset = Some(parse_subset(s)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(cli: &Cli) -> Result<&Path> {
    cli.data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no data directory: pass --data-dir or set SSNNBP_DATA_DIR".into()))
}

fn context(cli: &Cli) -> RunContext {
    let mut ctx = RunContext::new(&cli.out_dir, cli.workers);
    ctx.progress = true;
    ctx
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ConfigDump => {
            print!("{}", build_config(cli)?.to_toml());
        }
        Command::Train => {
            let cfg = build_config(cli)?;
            let data = load_data(&cfg, data_dir(cli)?)?;
            let report = train_on(&cfg, &data, &context(cli))?;
            println!("config_hash {}", report.config_hash);
            println!("metrics {}", report.metrics_path.display());
            println!("checkpoint {}", report.checkpoint_path.display());
            if let Some(acc) = report.final_test_accuracy() {
                println!("final_test_accuracy {acc:.6}");
            }
        }
        Command::Eval { checkpoint, split } => {
            let cfg = build_config(cli)?;
            let data = load_data(&cfg, data_dir(cli)?)?;
            let split = match split {
                SplitArg::Test => EvalSplit::Test,
                SplitArg::Train => EvalSplit::Train,
            };
            let r = run_eval(checkpoint, &cfg, &data, split, cli.workers)?;
            println!("accuracy {:.6} ({}/{})", r.accuracy, r.correct, r.samples);
        }
        Command::CompareWtaSoftmax { checkpoint } => {
            let cfg = build_config(cli)?;
            if cfg.model != ModelKind::Snn {
                return Err(Error::Config("compare-wta-softmax needs a spiking model".into()));
            }
            let data = load_data(&cfg, data_dir(cli)?)?;
            let Model::Snn(net) = Model::from_checkpoint(&Checkpoint::load(checkpoint)?, &cfg)? else {
                unreachable!("model kind checked above")
            };
            let p = with_workers(cli.workers, || compare_wta_softmax(&net, &cfg, &data))??;
            std::fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join(format!("wta-profile-{}.csv", cfg.hash()));
            p.write_csv(&path)?;
            println!("profiles {}", path.display());
            println!("top_share raw {:.6} wta {:.6} softmax {:.6}", p.raw[0], p.wta[0], p.softmax[0]);
            println!(
                "l1_to_softmax raw {:.6} wta {:.6}",
                l1_distance(&p.raw, &p.softmax),
                l1_distance(&p.wta, &p.softmax)
            );
        }
        Command::SweepTs { ts } => {
            let cfg = build_config(cli)?;
            let data = load_data(&cfg, data_dir(cli)?)?;
            for (run, report) in sweep_ts(&cfg, ts, &data, &context(cli))? {
                println!(
                    "t_s {} {} final_test_accuracy {:.6} metrics {}",
                    run.t_s,
                    run.config.mode_tag(),
                    report.final_test_accuracy().unwrap_or(f64::NAN),
                    report.metrics_path.display()
                );
            }
        }
        Command::GradientCheck { trials, t_s } => {
            let gc = GradientCheckConfig {
                trials: *trials,
                t_s: *t_s,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let r = gradient_check(&gc, cli.workers)?;
            std::fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join(format!("gradient-check-{}.csv", gc.seed));
            r.write_csv(&path)?;
            println!("cosine mean {:.6} std {:.6}", r.mean_cosine, r.std_cosine);
            println!(
                "top_decile_sign_agreement mean {:.6} std {:.6}",
                r.mean_sign_agreement, r.std_sign_agreement
            );
            println!("undefined {}", r.undefined);
            println!("trials {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
