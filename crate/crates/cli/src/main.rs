//! `arrival-eta`: generate, extract, fuse, train, evaluate and ablate from
//! one config file. Every artifact records the hash of the config that made
//! it, and consumers refuse artifacts from a different config unless told
//! otherwise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use arrival_eta::contour::ArrivalContour;
use arrival_eta::fusion::{FeatureSet, FusedDataset};
use arrival_eta::pipeline::{
    ablate, contour_stage, dataset_stage, evaluate, generate, train_stage, Inputs, PipelineConfig, PipelineError,
};
use arrival_eta::synth::{AIS_FILE, BOOKINGS_FILE, TRUTH_FILE, WEATHER_FILE};
use arrival_eta::tcn::{load_model, save_model, write_loss_trace, TcnError};
use clap::{Parser, Subcommand};
use thiserror::Error;

const MANIFEST: &str = "manifest.json";
const SCENARIO_DIR: &str = "scenario";
const CONTOUR_FILE: &str = "contour.geojson";
const CONTOUR_POINTS_FILE: &str = "contour_points.csv";
const DATASET_STEM: &str = "dataset";
const MODEL_FILE: &str = "model.json";
const LOSS_FILE: &str = "loss.csv";
const METRICS_JSON: &str = "metrics.json";
const METRICS_TEXT: &str = "metrics.txt";
const HISTOGRAM_FILE: &str = "histogram.csv";
const ABLATION_JSON: &str = "ablation.json";
const ABLATION_TEXT: &str = "ablation.txt";

#[derive(Debug, Parser)]
#[command(name = "arrival-eta", version, about = "Vessel arrival-time prediction at a pilot boarding ground")]
struct Cli {
    /// TOML config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Accept artifacts produced under a different config.
    #[arg(long, global = true)]
    allow_hash_mismatch: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scenario (AIS, bookings, weather, truth).
    Gen,
    /// Extract the arrival contour from AIS closest approaches.
    Contour {
        /// Directory with ais.csv, bookings.csv and weather.csv
        /// (default: <out>/scenario).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fuse trajectories, bookings and weather into windows.
    Dataset {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the TCN on the dataset's training split.
    Train,
    /// Score the model and the kinematic baseline on the test split.
    Eval,
    /// Train and score the four feature variants.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print the resolved config as TOML.
    Config,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{artifact} was produced by config {found}, current config is {expected} (pass --allow-hash-mismatch to accept)")]
    HashMismatch {
        artifact: String,
        found: String,
        expected: String,
    },
}

struct Run {
    cfg: PipelineConfig,
    hash: String,
    out: PathBuf,
    allow_mismatch: bool,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn data_dir(&self, data: Option<PathBuf>) -> PathBuf {
        data.unwrap_or_else(|| self.path(SCENARIO_DIR))
    }

    fn check_hash(&self, artifact: &Path, found: &str) -> Result<()> {
        if found == self.hash || self.allow_mismatch {
            if found != self.hash {
                eprintln!("warning: {} comes from config {found}", artifact.display());
            }
            return Ok(());
        }
        Err(CliError::HashMismatch {
            artifact: artifact.display().to_string(),
            found: found.to_string(),
            expected: self.hash.clone(),
        }
        .into())
    }

    /// Records `files` under the current hash in `<dir>/manifest.json`.
    fn record(&self, dir: &Path, files: &[&str]) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut manifest: BTreeMap<String, String> = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?,
            Err(_) => BTreeMap::new(),
        };
        for f in files {
            manifest.insert((*f).to_string(), self.hash.clone());
        }
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Checks the manifest entry of a CSV input when one exists; inputs
    /// from outside the pipeline carry no manifest.
    fn check_manifest(&self, dir: &Path, file: &str) -> Result<()> {
        let path = dir.join(MANIFEST);
        let Ok(text) = fs::read_to_string(&path) else {
            return Ok(());
        };
        let manifest: BTreeMap<String, String> =
            serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
        match manifest.get(file) {
            Some(h) => self.check_hash(&dir.join(file), h),
            None => Ok(()),
        }
    }

    fn inputs(&self, data: Option<PathBuf>) -> Result<Inputs> {
        let dir = self.data_dir(data);
        for f in [AIS_FILE, BOOKINGS_FILE, WEATHER_FILE] {
            self.check_manifest(&dir, f)?;
        }
        Ok(Inputs::read_dir(&self.cfg, &dir)?)
    }

    fn contour(&self) -> Result<ArrivalContour> {
        let path = self.path(CONTOUR_FILE);
        let text = read(&path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let (contour, hash) = ArrivalContour::from_geojson(&value).map_err(PipelineError::from)?;
        self.check_hash(&path, &hash)?;
        Ok(contour)
    }

    fn dataset(&self) -> Result<FusedDataset> {
        let json = self.path(&format!("{DATASET_STEM}.json"));
        if !json.exists() {
            return Err(PipelineError::MissingInput(json.display().to_string()).into());
        }
        let (ds, hash) = FusedDataset::load(&self.out, DATASET_STEM).map_err(PipelineError::from)?;
        self.check_hash(&json, &hash)?;
        Ok(ds)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PipelineError::MissingInput(format!("{}: {e}", path.display())).into())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    Ok(cfg.resolved()?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let run = Run {
        hash: cfg.hash(),
        cfg,
        out: cli.out.clone(),
        allow_mismatch: cli.allow_hash_mismatch,
    };
    if !matches!(cli.command, Command::Config) {
        fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    }
    match cli.command {
        Command::Config => print!("{}", run.cfg.to_toml()),
        Command::Gen => {
            let scenario = generate(&run.cfg)?;
            let dir = run.path(SCENARIO_DIR);
            scenario.write_dir(&dir).map_err(PipelineError::from)?;
            run.record(&dir, &[AIS_FILE, BOOKINGS_FILE, WEATHER_FILE, TRUTH_FILE])?;
            println!(
                "{} voyages, {} AIS rows, {} weather reports -> {}",
                scenario.bookings.len(),
                scenario.ais.len(),
                scenario.weather.len(),
                dir.display()
            );
        }
        Command::Contour { data } => {
            let inputs = run.inputs(data)?;
            let extraction = contour_stage(&run.cfg, &inputs)?;
            let geojson = extraction.contour.to_geojson(&run.cfg.contour_config(), &run.hash);
            fs::write(run.path(CONTOUR_FILE), serde_json::to_string_pretty(&geojson)? + "\n")?;
            let points = fs::File::create(run.path(CONTOUR_POINTS_FILE))?;
            extraction.write_points_csv(points).map_err(PipelineError::from)?;
            run.record(&run.out, &[CONTOUR_FILE, CONTOUR_POINTS_FILE])?;
            println!(
                "contour with {} vertices from {} of {} high-density points",
                extraction.contour.polygon.len(),
                extraction.contour.main_cluster_size,
                extraction.contour.kept_points.len()
            );
        }
        Command::Dataset { data } => {
            let inputs = run.inputs(data)?;
            let contour = run.contour()?;
            let ds = dataset_stage(&run.cfg, &inputs, &contour, FeatureSet::default(), run.cfg.dataset.embedding)?;
            ds.save(&run.out, DATASET_STEM, &run.hash).map_err(PipelineError::from)?;
            let csv = format!("{DATASET_STEM}.csv");
            let json = format!("{DATASET_STEM}.json");
            run.record(&run.out, &[&csv, &json])?;
            println!(
                "{} windows ({} train, {} test) from {} arrived voyages",
                ds.len(),
                ds.split_index,
                ds.len() - ds.split_index,
                ds.stats.trajectories - ds.stats.not_arrived - ds.stats.too_short
            );
        }
        Command::Train => {
            let ds = run.dataset()?;
            let trained = train_stage(&run.cfg, &ds)?;
            save_model(&run.path(MODEL_FILE), &trained.model, &ds.scaler, &run.hash).map_err(PipelineError::from)?;
            write_loss_trace(fs::File::create(run.path(LOSS_FILE))?, &trained.trace)?;
            run.record(&run.out, &[MODEL_FILE, LOSS_FILE])?;
            if let Some(last) = trained.trace.last() {
                println!("epoch {} train loss {:.6}", last.epoch, last.train_loss);
            }
        }
        Command::Eval => {
            let model_path = run.path(MODEL_FILE);
            if !model_path.exists() {
                return Err(PipelineError::MissingInput(model_path.display().to_string()).into());
            }
            let file = load_model(&model_path).map_err(PipelineError::from)?;
            run.check_hash(&model_path, &file.config_hash)?;
            let ds = run.dataset()?;
            let contour = run.contour()?;
            let report = evaluate(&run.cfg, &file.model, &ds, &contour)?;
            fs::write(run.path(METRICS_JSON), serde_json::to_string_pretty(&report)? + "\n")?;
            let text = report.to_text();
            fs::write(run.path(METRICS_TEXT), &text)?;
            report.tcn.histogram.write_csv(fs::File::create(run.path(HISTOGRAM_FILE))?)?;
            run.record(&run.out, &[METRICS_JSON, METRICS_TEXT, HISTOGRAM_FILE])?;
            print!("{text}");
        }
        Command::Ablate { data } => {
            let inputs = run.inputs(data)?;
            let contour = run.contour()?;
            let report = ablate(&run.cfg, &inputs, &contour)?;
            fs::write(run.path(ABLATION_JSON), serde_json::to_string_pretty(&report)? + "\n")?;
            let text = report.to_text();
            fs::write(run.path(ABLATION_TEXT), &text)?;
            run.record(&run.out, &[ABLATION_JSON, ABLATION_TEXT])?;
            print!("{text}");
        }
    }
    Ok(())
}

/// Exit codes: 2 bad config, 3 missing input, 4 hash mismatch, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    if err.downcast_ref::<CliError>().is_some() {
        return (4, "hash-mismatch");
    }
    match err.downcast_ref::<PipelineError>() {
        Some(PipelineError::Config(_)) => (2, "config"),
        Some(PipelineError::Tcn(TcnError::ShapeMismatch(_))) => (2, "config"),
        Some(PipelineError::MissingInput(_)) => (3, "missing-input"),
        _ => (1, "failed"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = exit_code(&err);
            eprintln!("error[{kind}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
