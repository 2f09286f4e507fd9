//! `twinforge` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use twinforge_core::contracts::{device_source, divergence_demo, StreamHub};
use twinforge_core::evaluation::{sweep_tau, tau_grid, write_curve_csv, EvaluationReport};
use twinforge_core::ledger::{DynamicMetadata, LedgerState};
use twinforge_core::models::{
    train_classifier_with_hidden, train_dae, ClassifierModel, DaeModel, ThresholdConfig,
    DEFAULT_HIDDEN,
};
use twinforge_core::neural::TrainConfig;
use twinforge_core::pipeline::{binding, contract_for, labelled_predictions, UPDATER};
use twinforge_core::telemetry::{
    generate_synthetic, ingest_csv, normalize_and_split, window_cycles, write_csv,
    BehaviouralPattern, DatasetSplit,
};
use twinforge_core::Error;

const DAE_FILE: &str = "dae.twm";
const CLF_FILE: &str = "clf.twm";

#[derive(Parser)]
#[command(name = "twinforge", version, about = "Detect counterfeit clones of NFT digital twins")]
struct Cli {
    /// Write the JSON result to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print a human-readable table instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,

    /// Seed for every random choice. Falls back to TWINFORGE_SEED, then 7.
    #[arg(long, global = true, env = "TWINFORGE_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic heater telemetry and write a dataset directory.
    GenData {
        /// Number of devices.
        #[arg(long, default_value_t = 4)]
        dts: u32,
        /// Cycles per device.
        #[arg(long, default_value_t = 132)]
        cycles: u32,
        /// Fraction of cycles in the training split.
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Dataset directory to create.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Also write the raw readings as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Ingest telemetry CSV and write a dataset directory.
    Ingest {
        /// Input CSV file.
        #[arg(long)]
        csv: PathBuf,
        /// Fraction of cycles in the training split.
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Dataset directory to create.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    /// Train the autoencoder and write dae.twm.
    TrainDae {
        #[command(flatten)]
        dirs: Dirs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the classifier on encoded patterns and write clf.twm.
    TrainClf {
        #[command(flatten)]
        dirs: Dirs,
        #[command(flatten)]
        train: TrainArgs,
        /// Hidden units per direction.
        #[arg(long, default_value_t = DEFAULT_HIDDEN)]
        hidden: usize,
    },
    /// Confusion, soundness, completeness and spoof rates on the test split.
    Evaluate {
        #[command(flatten)]
        dirs: Dirs,
        /// Confidence threshold.
        #[arg(long, default_value_t = 0.695)]
        tau: f64,
        /// Also sweep tau with this grid step.
        #[arg(long)]
        grid_step: Option<f64>,
        /// Write the sweep curve as CSV (requires --grid-step).
        #[arg(long)]
        curve_csv: Option<PathBuf>,
    },
    /// Sweep tau over a grid and report the optimum.
    SweepTau {
        #[command(flatten)]
        dirs: Dirs,
        /// Grid step.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Write the curve as CSV.
        #[arg(long)]
        curve_csv: Option<PathBuf>,
    },
    /// Mint a token from a metadata document.
    Mint {
        /// Ledger event log file.
        #[arg(long, default_value = "ledger.json")]
        ledger: PathBuf,
        /// Owning account.
        #[arg(long)]
        owner: String,
        /// Metadata JSON file.
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Clone a token's metadata.
    Clone {
        /// Ledger event log file.
        #[arg(long, default_value = "ledger.json")]
        ledger: PathBuf,
        /// Owning account of the clone.
        #[arg(long)]
        owner: String,
        /// How the clone copies its source.
        #[arg(long, value_enum)]
        mode: CloneMode,
        /// Source locator (mode uri).
        #[arg(long)]
        uri: Option<String>,
        /// Source token (modes token and random).
        #[arg(long)]
        token: Option<u64>,
        /// Number of random traits (mode random).
        #[arg(long, default_value_t = 9)]
        fields: usize,
    },
    /// Metadata similarity between two tokens.
    Compare {
        /// Ledger event log file.
        #[arg(long, default_value = "ledger.json")]
        ledger: PathBuf,
        /// First token.
        #[arg(long)]
        a: u64,
        /// Second token.
        #[arg(long)]
        b: u64,
        /// Include read-only attributes.
        #[arg(long)]
        full: bool,
    },
    /// Encode a live pattern and write it into a token's read-only attributes.
    UpdateMeta {
        /// Ledger event log file.
        #[arg(long, default_value = "ledger.json")]
        ledger: PathBuf,
        /// Model directory.
        #[arg(long, default_value = "models")]
        model_dir: PathBuf,
        /// Token id.
        #[arg(long)]
        token: u64,
        /// Pattern JSON file.
        #[arg(long)]
        pattern: PathBuf,
        /// Identity performing the update.
        #[arg(long, default_value = UPDATER)]
        caller: String,
    },
    /// Verify a token against a cached pattern.
    Verify {
        /// Ledger event log file.
        #[arg(long, default_value = "ledger.json")]
        ledger: PathBuf,
        /// Model directory.
        #[arg(long, default_value = "models")]
        model_dir: PathBuf,
        /// Token id.
        #[arg(long)]
        token: u64,
        /// Cached pattern JSON file.
        #[arg(long)]
        cached: PathBuf,
        /// Confidence threshold.
        #[arg(long, default_value_t = 0.695)]
        tau: f64,
    },
    /// Mint a twin, clone it genuinely and fraudulently, and run update ticks.
    DemoDivergence {
        #[command(flatten)]
        dirs: Dirs,
        /// Device feeding the original and the genuine clone.
        #[arg(long, default_value_t = 0)]
        original_dt: u32,
        /// Device feeding the fake clone.
        #[arg(long, default_value_t = 1)]
        fake_dt: u32,
        /// Update ticks after cloning.
        #[arg(long, default_value_t = 1)]
        ticks: u64,
        /// Confidence threshold.
        #[arg(long, default_value_t = 0.695)]
        tau: f64,
        /// Persist the demo ledger here.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Rebuild the ledger from its event log and summarize it.
    Replay {
        /// Ledger event log file.
        #[arg(long, default_value = "ledger.json")]
        ledger: PathBuf,
    },
    /// Write one pattern of a dataset split as JSON.
    ExportPattern {
        /// Dataset directory.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Which split to read.
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Pattern index within the split.
        #[arg(long)]
        index: usize,
    },
}

#[derive(Args)]
struct Dirs {
    /// Dataset directory.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Model directory.
    #[arg(long, default_value = "models")]
    model_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training epochs.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Dropout rate.
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Standard deviation of the input corruption.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig, Error> {
        let cfg = TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout_rate: self.dropout,
            input_noise_sigma: self.noise,
            seed,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CloneMode {
    Uri,
    Token,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Test,
}

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{} does not exist", path.display())))
    }
}

fn load_dataset(dir: &Path) -> Result<DatasetSplit, Error> {
    require(dir)?;
    DatasetSplit::load(dir)
}

fn load_dae(dir: &Path) -> Result<DaeModel, Error> {
    let path = dir.join(DAE_FILE);
    require(&path)?;
    DaeModel::from_bytes(&fs::read(path)?, TrainConfig::default().input_noise_sigma)
}

fn load_classifier(dir: &Path) -> Result<ClassifierModel, Error> {
    let path = dir.join(CLF_FILE);
    require(&path)?;
    ClassifierModel::from_bytes(&fs::read(path)?)
}

fn load_pattern(path: &Path) -> Result<BehaviouralPattern, Error> {
    require(path)?;
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Existing ledger, or a fresh one with the contract as updater.
fn open_ledger(path: &Path) -> Result<LedgerState, Error> {
    if path.exists() {
        LedgerState::load(path)
    } else {
        Ok(LedgerState::with_updater(UPDATER))
    }
}

fn open_existing_ledger(path: &Path) -> Result<LedgerState, Error> {
    require(path)?;
    LedgerState::load(path)
}

fn thr(tau: f64) -> Result<ThresholdConfig, Error> {
    ThresholdConfig::new(tau)
}

fn to_value(v: impl Serialize) -> Result<Value, Error> {
    Ok(serde_json::to_value(v)?)
}

fn split_summary(split: &DatasetSplit, dir: &Path) -> Value {
    json!({
        "data_dir": dir,
        "samples": split.train.len() + split.test.len(),
        "train": split.train.len(),
        "test": split.test.len(),
        "classes": split.n_classes(),
        "seed": split.split_seed,
    })
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let seed = cli.seed.unwrap_or(7);
    match &cli.command {
        Command::GenData {
            dts,
            cycles,
            train_fraction,
            data_dir,
            csv,
        } => {
            let generated = generate_synthetic(*dts, *cycles, seed)?;
            let split = normalize_and_split(&window_cycles(&generated), *train_fraction, seed)?;
            split.save(data_dir)?;
            if let Some(path) = csv {
                write_csv(&generated, fs::File::create(path)?)?;
            }
            Ok(split_summary(&split, data_dir))
        }
        Command::Ingest {
            csv,
            train_fraction,
            data_dir,
        } => {
            require(csv)?;
            let ingested = ingest_csv(csv)?;
            let split = normalize_and_split(&window_cycles(&ingested.cycles), *train_fraction, seed)?;
            split.save(data_dir)?;
            let mut v = split_summary(&split, data_dir);
            v["cycles"] = json!(ingested.cycles.len());
            v["warnings"] = json!(ingested.warnings);
            Ok(v)
        }
        Command::TrainDae { dirs, train } => {
            let cfg = train.config(seed)?;
            let split = load_dataset(&dirs.data_dir)?;
            let (model, report) = train_dae(&split, &cfg)?;
            fs::create_dir_all(&dirs.model_dir)?;
            fs::write(dirs.model_dir.join(DAE_FILE), model.to_bytes())?;
            let report = to_value(report)?;
            fs::write(
                dirs.model_dir.join("dae_report.json"),
                serde_json::to_vec_pretty(&report)?,
            )?;
            Ok(report)
        }
        Command::TrainClf {
            dirs,
            train,
            hidden,
        } => {
            let cfg = train.config(seed)?;
            let split = load_dataset(&dirs.data_dir)?;
            let dae = load_dae(&dirs.model_dir)?;
            let (model, report) = train_classifier_with_hidden(
                &dae.encode_batch(&split.train)?,
                &dae.encode_batch(&split.test)?,
                &cfg,
                split.n_classes(),
                *hidden,
            )?;
            fs::write(dirs.model_dir.join(CLF_FILE), model.to_bytes())?;
            let report = to_value(report)?;
            fs::write(
                dirs.model_dir.join("clf_report.json"),
                serde_json::to_vec_pretty(&report)?,
            )?;
            Ok(report)
        }
        Command::Evaluate {
            dirs,
            tau,
            grid_step,
            curve_csv,
        } => {
            let threshold = thr(*tau)?;
            if curve_csv.is_some() && grid_step.is_none() {
                return Err(Error::Argument("--curve-csv needs --grid-step".into()));
            }
            let grid = grid_step.map(tau_grid).transpose()?;
            let split = load_dataset(&dirs.data_dir)?;
            let dae = load_dae(&dirs.model_dir)?;
            let clf = load_classifier(&dirs.model_dir)?;
            let preds = labelled_predictions(&clf, &dae.encode_batch(&split.test)?, threshold)?;
            let report =
                EvaluationReport::build(&preds, clf.n_classes(), threshold.tau(), grid.as_deref())?;
            if let (Some(path), Some(sweep)) = (curve_csv, &report.sweep) {
                write_curve_csv(sweep, fs::File::create(path)?)?;
            }
            to_value(report)
        }
        Command::SweepTau {
            dirs,
            step,
            curve_csv,
        } => {
            let grid = tau_grid(*step)?;
            let split = load_dataset(&dirs.data_dir)?;
            let dae = load_dae(&dirs.model_dir)?;
            let clf = load_classifier(&dirs.model_dir)?;
            let preds = labelled_predictions(&clf, &dae.encode_batch(&split.test)?, thr(0.0)?)?;
            let sweep = sweep_tau(&preds, &grid)?;
            if let Some(path) = curve_csv {
                write_curve_csv(&sweep, fs::File::create(path)?)?;
            }
            to_value(sweep)
        }
        Command::Mint {
            ledger,
            owner,
            metadata,
        } => {
            require(metadata)?;
            let doc = DynamicMetadata::from_json(&fs::read_to_string(metadata)?)?;
            let mut state = open_ledger(ledger)?;
            let id = state.mint(owner, doc)?;
            state.save(ledger)?;
            to_value(state.token(id)?)
        }
        Command::Clone {
            ledger,
            owner,
            mode,
            uri,
            token,
            fields,
        } => {
            let mut state = open_existing_ledger(ledger)?;
            let need_token =
                || token.ok_or_else(|| Error::Argument("--token is required for this mode".into()));
            let id = match mode {
                CloneMode::Uri => {
                    let uri = uri
                        .as_deref()
                        .ok_or_else(|| Error::Argument("--uri is required for mode uri".into()))?;
                    state.clone_by_uri(owner, uri)?
                }
                CloneMode::Token => state.clone_by_token_id(owner, need_token()?)?,
                CloneMode::Random => state.clone_random(owner, need_token()?, *fields, seed)?,
            };
            state.save(ledger)?;
            to_value(state.token(id)?)
        }
        Command::Compare { ledger, a, b, full } => {
            let state = open_existing_ledger(ledger)?;
            let similarity = if *full {
                state.full_similarity(*a, *b)?
            } else {
                state.similarity(*a, *b)?
            };
            Ok(json!({ "similarity": similarity }))
        }
        Command::UpdateMeta {
            ledger,
            model_dir,
            token,
            pattern,
            caller,
        } => {
            let mut state = open_existing_ledger(ledger)?;
            let live = load_pattern(pattern)?;
            let dae = load_dae(model_dir)?;
            let clf = load_classifier(model_dir)?;
            let mut contract = contract_for(&dae, &clf);
            contract.bind(&state, binding(*token, pattern.display().to_string()))?;
            contract.update_metadata(caller, *token, &live, &mut state)?;
            state.save(ledger)?;
            let meta = state.metadata(*token)?;
            Ok(json!({
                "token_id": token,
                "updated_at": meta.read_only.updated_at,
                "pattern_encoding": meta.read_only.pattern_encoding,
            }))
        }
        Command::Verify {
            ledger,
            model_dir,
            token,
            cached,
            tau,
        } => {
            let threshold = thr(*tau)?;
            let state = open_existing_ledger(ledger)?;
            let cached = load_pattern(cached)?;
            let dae = load_dae(model_dir)?;
            let clf = load_classifier(model_dir)?;
            let mut contract = contract_for(&dae, &clf);
            contract.bind(&state, binding(*token, "cached".into()))?;
            to_value(contract.verify(*token, &cached, &state, threshold)?)
        }
        Command::DemoDivergence {
            dirs,
            original_dt,
            fake_dt,
            ticks,
            tau,
            ledger,
        } => {
            let threshold = thr(*tau)?;
            let split = load_dataset(&dirs.data_dir)?;
            let dae = load_dae(&dirs.model_dir)?;
            let clf = load_classifier(&dirs.model_dir)?;
            let hub = StreamHub::by_device(&split.test);
            let mut contract = contract_for(&dae, &clf);
            let mut state = LedgerState::with_updater(UPDATER);
            let doc = DynamicMetadata::new(
                format!("heater-{original_dt}"),
                "industrial heater twin",
                format!("ipfs://heater-{original_dt}.png"),
                Vec::new(),
            );
            let original = state.mint("owner", doc)?;
            let source = device_source(*original_dt);
            contract.bind(&state, binding(original, source.clone()))?;
            let first = hub.pattern(&source, 0)?.clone();
            contract.update_metadata(UPDATER, original, &first, &mut state)?;
            let report = divergence_demo(
                &mut contract,
                &mut state,
                &hub,
                original,
                &device_source(*fake_dt),
                0,
                *ticks,
                threshold,
            )?;
            if let Some(path) = ledger {
                state.save(path)?;
            }
            to_value(report)
        }
        Command::Replay { ledger } => {
            let state = open_existing_ledger(ledger)?;
            Ok(json!({
                "events": state.event_log().len(),
                "tokens": state.tokens().values().collect::<Vec<_>>(),
                "next_id": state.next_id(),
                "updater": state.updater(),
            }))
        }
        Command::ExportPattern {
            data_dir,
            split,
            index,
        } => {
            let data = load_dataset(data_dir)?;
            let patterns = match split {
                SplitName::Train => &data.train,
                SplitName::Test => &data.test,
            };
            let p = patterns.get(*index).ok_or_else(|| {
                Error::Argument(format!("index {index} outside split of {}", patterns.len()))
            })?;
            to_value(p)
        }
    }
}

/// Top-level keys as `key  value` rows; nested values stay compact JSON.
fn table(v: &Value) -> String {
    match v {
        Value::Object(map) => {
            let width = map.keys().map(String::len).max().unwrap_or(0);
            map.iter()
                .map(|(k, v)| format!("{k:<width$}  {}\n", scalar(v)))
                .collect()
        }
        other => format!("{}\n", scalar(other)),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn emit(cli: &Cli, value: &Value) -> std::io::Result<()> {
    let text = if cli.pretty {
        table(value)
    } else {
        format!("{value}\n")
    };
    match &cli.out {
        Some(path) => fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
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
    match run(&cli) {
        Ok(value) => match emit(&cli, &value) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
