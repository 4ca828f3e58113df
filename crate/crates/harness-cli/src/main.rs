use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harness_cli::{
    emit_results, read_records, rerun_manifest, run_experiment, train_model, write_report, write_splits, build_report,
    ExperimentConfig, ExperimentOutcome, Format, HarnessError, HarnessResult, Manifest, Method, RunOptions,
    CHECKPOINT_FILE, COLUMNS, OUTPUT_DIR_ENV, TRAIN_LOG_FILE,
};
use ssl_model::Scenario;

#[derive(Parser, Debug)]
#[command(name = "ssl3d", version, about = "Synthetic 3D sound source localization experiments")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and store the train, val and test splits.
    GenData(ConfigArgs),
    /// Train the neural model and write a checkpoint.
    Train(ConfigArgs),
    /// Evaluate all configured methods on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Use a trained checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rerun the experiment recorded in a manifest; other config flags
        /// are ignored except the output directory.
        #[arg(long, conflicts_with = "checkpoint")]
        manifest: Option<PathBuf>,
    },
    /// Run one experiment per scenario and microphone count.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Microphone counts, nested subsets of one layout.
        #[arg(long, value_delimiter = ',', default_value = "5,8,11")]
        mic_counts: Vec<usize>,
        /// Scenarios; defaults to the config's scenario.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<Scenario>,
    },
    /// Recompute a report from a per-trial records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        acc_threshold_cm: f64,
        #[arg(long, default_value_t = 1000)]
        bootstrap_resamples: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        /// `csv` or `json-lines`.
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A TOML config file plus flag overrides; flags win.
#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Read stored splits from this directory, generating missing ones.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    num_mics: Option<usize>,
    #[arg(long)]
    num_sources: Option<usize>,
    #[arg(long)]
    num_faulty: Option<usize>,
    #[arg(long)]
    layout_mics: Option<usize>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    val_scenes: Option<usize>,
    #[arg(long)]
    test_scenes: Option<usize>,
    #[arg(long)]
    signal_len: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    #[arg(long)]
    acc_threshold_cm: Option<f64>,
    #[arg(long)]
    max_failure_rate: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> HarnessResult<ExperimentConfig> {
        let c = self.merged()?;
        c.validate()?;
        Ok(c)
    }

    /// The file values with flags applied, not yet validated.
    fn merged(&self) -> HarnessResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            output_dir => output_dir,
            scenario => scenario,
            num_mics => num_mics,
            num_sources => num_sources,
            num_faulty => num_faulty,
            layout_mics => layout_mics,
            train_scenes => train_scenes,
            val_scenes => val_scenes,
            test_scenes => test_scenes,
            signal_len => signal_len,
            noise_std => noise_std,
            methods => methods,
            data_seed => seeds.data,
            model_seed => seeds.model,
            eval_seed => seeds.eval,
            train_seed => train.seed,
            epochs => train.epochs,
            batch_size => train.batch_size,
            learning_rate => train.learning_rate,
            bootstrap_resamples => bootstrap_resamples,
            acc_threshold_cm => acc_threshold_cm,
            max_failure_rate => max_failure_rate,
        );
        Ok(c)
    }
}

fn create_dir(dir: &Path) -> HarnessResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_config(config: &ExperimentConfig, dir: &Path) -> HarnessResult<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml_string()?).map_err(|e| HarnessError::io(&path, e))
}

fn print_report(outcome: &ExperimentOutcome) {
    print!("{}", emit_results(&outcome.report, Format::Csv));
}

fn gen_data(args: &ConfigArgs) -> HarnessResult<()> {
    let config = args.resolve()?;
    let dir = args.data_dir.clone().unwrap_or_else(|| config.resolved_output_dir().join("data"));
    create_dir(&dir)?;
    for (split, n) in write_splits(&config, &dir)? {
        println!("{}\t{n}\t{}", split.name(), dir.join(split.file_name()).display());
    }
    write_config(&config, &dir)
}

fn train_cmd(args: &ConfigArgs) -> HarnessResult<()> {
    let mut config = args.resolve()?;
    if !config.methods.contains(&Method::Neural) {
        config.methods = vec![Method::Neural];
    }
    let dir = config.resolved_output_dir();
    create_dir(&dir)?;
    write_config(&config, &dir)?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| HarnessError::io(&log_path, e))?);
    let (model, report) = train_model(&config, args.data_dir.as_deref(), Some(&mut log))?;
    log.flush().map_err(|e| HarnessError::io(&log_path, e))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    model.save(&ckpt, serde_json::json!({ "train_report": &report }))?;
    println!(
        "initial_loss {:.6} final_loss {:.6} checkpoint {}",
        report.initial_loss.total,
        report.final_loss.total,
        ckpt.display()
    );
    Ok(())
}

fn eval_cmd(args: &ConfigArgs, checkpoint: Option<PathBuf>, manifest: Option<PathBuf>) -> HarnessResult<()> {
    let outcome = match manifest {
        Some(path) => {
            let manifest = Manifest::load(&path)?;
            let dir = args.output_dir.clone().unwrap_or_else(|| manifest.config.resolved_output_dir());
            rerun_manifest(&manifest, Some(dir), true)?
        }
        None => {
            let config = args.resolve()?;
            let dir = config.resolved_output_dir();
            create_dir(&dir)?;
            write_config(&config, &dir)?;
            let options = RunOptions {
                output_dir: Some(dir),
                data_dir: args.data_dir.clone(),
                checkpoint,
                write_outputs: true,
            };
            run_experiment(&config, &options)?
        }
    };
    print_report(&outcome);
    Ok(())
}

fn sweep_cmd(args: &ConfigArgs, mic_counts: &[usize], scenarios: &[Scenario]) -> HarnessResult<()> {
    let base = args.merged()?;
    let scenarios = if scenarios.is_empty() { vec![base.scenario] } else { scenarios.to_vec() };
    let layout = base
        .layout_mics
        .unwrap_or_else(|| mic_counts.iter().copied().max().unwrap_or(base.num_mics));
    let root = base.resolved_output_dir();
    create_dir(&root)?;
    let mut summary = format!("scenario,num_mics,{}\n", COLUMNS.join(","));
    for scenario in &scenarios {
        for &m in mic_counts {
            let mut c = base.clone();
            c.scenario = *scenario;
            c.num_mics = m;
            c.layout_mics = Some(layout);
            if scenario.has_faulty_mics() && c.num_faulty == 0 {
                c.num_faulty = 1;
            }
            if *scenario == Scenario::FaultyMicSceneB {
                c.methods.retain(|m| *m == Method::Neural);
            }
            let dir = root.join(format!("{}_m{m}", scenario.name()));
            c.output_dir = Some(dir.clone());
            c.validate()?;
            create_dir(&dir)?;
            write_config(&c, &dir)?;
            log::info!("sweep point {} M={m}", scenario.name());
            let options = RunOptions {
                output_dir: Some(dir),
                data_dir: None,
                checkpoint: None,
                write_outputs: true,
            };
            let outcome = run_experiment(&c, &options)?;
            for line in emit_results(&outcome.report, Format::Csv).lines().skip(1) {
                summary.push_str(&format!("{},{m},{line}\n", scenario.name()));
            }
        }
    }
    let path = root.join("sweep.csv");
    std::fs::write(&path, &summary).map_err(|e| HarnessError::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

fn report_cmd(
    records: &Path,
    threshold: f64,
    resamples: usize,
    seed: u64,
    format: Format,
    out: Option<&Path>,
) -> HarnessResult<()> {
    let records = read_records(records)?;
    let report = build_report(&records, threshold, resamples, seed)?;
    match out {
        Some(path) => write_report(&report, path, format),
        None => {
            print!("{}", emit_results(&report, format));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> HarnessResult<()> {
    match cli.command {
        Command::GenData(args) => gen_data(&args),
        Command::Train(args) => train_cmd(&args),
        Command::Eval {
            config,
            checkpoint,
            manifest,
        } => eval_cmd(&config, checkpoint, manifest),
        Command::Sweep {
            config,
            mic_counts,
            scenarios,
        } => sweep_cmd(&config, &mic_counts, &scenarios),
        Command::Report {
            records,
            acc_threshold_cm,
            bootstrap_resamples,
            seed,
            format,
            out,
        } => report_cmd(&records, acc_threshold_cm, bootstrap_resamples, seed, format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
